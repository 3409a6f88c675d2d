"""End-to-end detection: seeding, method dispatch, ranking and evaluation.

Also hosts the exhaustive Kadir-Brady scan used as the reference for the
seek methods, Hu-moment template filtering and Jaccard scoring.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .abmsod import AbmsodParams, abmsod_run
from .detection import DEGENERATE, Detection
from .entropy import (
    BoxWindow,
    EPANECHNIKOV,
    IDENTITY,
    DegenerateWindowError,
    EllipsoidWindow,
    EvalCounter,
    KernelProfile,
)
from .parallel import ordered_map
from .quadrant import QuadrantParams, _seek_one
from .shift import ShiftParams, saliency_shift, window_stats
from .volume import IntensityWindow, Volume

__all__ = [
    "SeedPlan",
    "plan_seeds",
    "KadirBradyResult",
    "kadir_brady_exhaustive",
    "ExhaustiveBudgetError",
    "dedupe_top_k",
    "hu_moments",
    "detection_slices",
    "hu_filter",
    "jaccard",
    "DetectResult",
    "detect",
    "seek_all",
    "select_detections",
    "threshold_baseline",
    "EXHAUSTIVE_BUDGET",
]

EXHAUSTIVE_BUDGET = 2_000_000


class ExhaustiveBudgetError(ValueError):
    """The dense scan would exceed the voxel-scale evaluation budget."""


# ------------------------------------------------------------------------ seeds


@dataclass(frozen=True)
class SeedPlan:
    """Seed layout.  ``spacing`` may be one value or one per axis."""

    mode: str = "lattice"
    spacing: int | tuple[int, int, int] = 16
    count: int = 400
    scales: tuple[float, ...] = (8.0,)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("lattice", "random"):
            raise ValueError(f"unknown seed mode {self.mode!r}")
        sp = np.broadcast_to(np.asarray(self.spacing, dtype=int), (3,))
        if np.any(sp < 1):
            raise ValueError("lattice spacing must be >= 1")
        if self.mode == "random" and self.count < 1:
            raise ValueError("random mode needs count >= 1")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("need at least one positive initial scale")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))

    @classmethod
    def parse(cls, text: str, scales=(8.0,), rng_seed: int = 0) -> "SeedPlan":
        """Parse ``lattice:S``, ``lattice:SX,SY,SZ`` or ``random:N``."""
        mode, _, arg = text.partition(":")
        try:
            if mode == "lattice":
                vals = tuple(int(t) for t in arg.split(","))
                spacing = vals[0] if len(vals) == 1 else vals
                if len(vals) not in (1, 3):
                    raise ValueError
                return cls("lattice", spacing=spacing, scales=tuple(scales), rng_seed=rng_seed)
            if mode == "random":
                return cls("random", count=int(arg), scales=tuple(scales), rng_seed=rng_seed)
        except ValueError:
            pass
        raise ValueError(f"bad seed plan {text!r}; expected lattice:S, lattice:SX,SY,SZ or random:N")

    def to_dict(self) -> dict:
        sp = self.spacing if isinstance(self.spacing, int) else list(self.spacing)
        return {"mode": self.mode, "spacing": sp, "count": self.count,
                "scales": list(self.scales), "rng_seed": self.rng_seed}


def _lattice_axis(n: int, step: int) -> np.ndarray:
    k = max(1, n // step)
    start = (n - 1 - (k - 1) * step) / 2.0
    return start + step * np.arange(k)


def plan_seeds(v: Volume, plan: SeedPlan) -> list[tuple[np.ndarray, float]]:
    """Seed positions paired with every initial scale, in a fixed order."""
    dims = v.dims
    if plan.mode == "lattice":
        spacing = np.broadcast_to(np.asarray(plan.spacing, dtype=int), (3,))
        # an axis shorter than the spacing gets one centred seed
        axes = [_lattice_axis(n, int(s)) for n, s in zip(dims, spacing)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        # z-slowest ordering, x fastest
        order = np.lexsort((grid[:, 0], grid[:, 1], grid[:, 2]))
        positions = grid[order]
    else:
        rng = np.random.default_rng(plan.rng_seed)
        upper = np.asarray(dims, dtype=float) - 1
        positions = rng.uniform(0.0, 1.0, size=(plan.count, 3)) * upper
    return [(p.copy(), s) for p in positions for s in plan.scales]


# ------------------------------------------------------------------- exhaustive


@dataclass(eq=False)
class KadirBradyResult:
    score: np.ndarray
    best_scale: np.ndarray
    entropy: np.ndarray
    maxima: list[tuple[np.ndarray, float, float]]
    voxel_evals: int

    def top(self, k: int) -> list[tuple[np.ndarray, float, float]]:
        return self.maxima[:k]


def _ball_offsets(r: float, flat: bool) -> np.ndarray:
    n = int(math.floor(r))
    rng = np.arange(-n, n + 1)
    zr = np.array([0]) if flat else rng
    g = np.stack(np.meshgrid(rng, rng, zr, indexing="ij"), axis=-1).reshape(-1, 3)
    return g[(g**2).sum(axis=1) <= r * r + 1e-9]


def _dense_histograms(bins, r, m, kernel, flat, chunk=2_000_000):
    """Kernel-weighted histogram of the radius-``r`` ball around every voxel.

    Returns normalized histograms of shape (n_voxels, m), the in-bounds
    fraction of each ball, and the total in-bounds sample count.
    """
    dims = bins.shape
    pad = int(math.floor(r)) + 1
    pads = [(pad, pad), (pad, pad), (0, 0) if flat else (pad, pad)]
    padded = np.pad(bins, pads, constant_values=m)  # sentinel bin m is out of bounds
    pdims = padded.shape
    strides = np.array([pdims[1] * pdims[2], pdims[2], 1])
    base_idx = np.ravel_multi_index(
        np.meshgrid(*(np.arange(n) + p[0] for n, p in zip(dims, pads)), indexing="ij"), pdims
    ).ravel()
    flat_padded = padded.ravel()
    offs = _ball_offsets(r, flat)
    d = (offs**2).sum(axis=1) / (r * r)
    w = kernel.profile(d)
    nvox = base_idx.size
    hist = np.zeros(nvox * (m + 1))
    inside = np.zeros(nvox)
    evals = 0
    per = max(1, chunk // nvox)
    vox_ids = np.arange(nvox) * (m + 1)
    for i in range(0, len(offs), per):
        o = offs[i : i + per] @ strides
        b = flat_padded[base_idx[None, :] + o[:, None]]
        hit = b != m
        inside += hit.sum(axis=0)
        evals += int(np.count_nonzero(hit))
        idx = (vox_ids[None, :] + b).ravel()
        hist += np.bincount(idx, weights=np.repeat(w[i : i + per], nvox), minlength=hist.size)
    hist = hist.reshape(nvox, m + 1)[:, :m]
    tot = hist.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        hist = np.where(tot > 0, hist / np.where(tot > 0, tot, 1.0), 0.0)
    return hist, inside / len(offs), evals


def _row_entropy_bits(h: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(h > 0, h * np.log2(np.where(h > 0, h, 1.0)), 0.0)
    return np.maximum(0.0, -t.sum(axis=1))


def kadir_brady_exhaustive(
    v: Volume,
    iw: IntensityWindow,
    scales,
    kernel: KernelProfile = IDENTITY,
    delta: float = 1.0,
    min_distance: float | None = None,
    budget: int = EXHAUSTIVE_BUDGET,
    min_support: float = 0.9,
) -> KadirBradyResult:
    """Dense saliency ``Y = entropy x pdf-difference`` maximized over scales.

    Every voxel gets a ball-window histogram at every scale and its two
    flanking scales.  A (voxel, scale) pair is scored only when at least
    ``min_support`` of its outer ball lies inside the volume; heavily clipped
    windows near the border otherwise produce spurious inter-scale change.
    Local maxima of the score map (3x3[x3] neighbourhood,
    positive score) are ranked by score and thinned greedily so no two are
    within ``min_distance`` (default: smallest scale).
    """
    scales = [float(s) for s in scales]
    if not scales or min(scales) - delta <= 0:
        raise ValueError("scales must be positive and larger than the scale step")
    nvox = int(np.prod(v.dims))
    if nvox * len(scales) > budget:
        raise ExhaustiveBudgetError(
            f"{nvox} voxels x {len(scales)} scales exceeds the budget of {budget}"
        )
    flat = v.is_2d
    bins = v.binned(iw)
    m = iw.bins
    cache: dict[float, np.ndarray] = {}
    support: dict[float, np.ndarray] = {}
    evals = 0

    def hist(r):
        nonlocal evals
        if r not in cache:
            cache[r], support[r], n = _dense_histograms(bins, r, m, kernel, flat)
            evals += n
        return cache[r]

    best = np.zeros(nvox)
    best_scale = np.full(nvox, scales[0])
    best_ent = np.zeros(nvox)
    for s in scales:
        ent = _row_entropy_bits(hist(s))
        diff = s * s / (2.0 * delta) * np.abs(hist(s + delta) - hist(s - delta)).sum(axis=1)
        y = np.where(support[s + delta] >= min_support, ent * diff, 0.0)
        better = y > best
        best = np.where(better, y, best)
        best_scale = np.where(better, s, best_scale)
        best_ent = np.where(better, ent, best_ent)
        cache.pop(s - delta, None)
        support.pop(s - delta, None)

    score = best.reshape(v.dims)
    size = (3, 3, 1) if flat else (3, 3, 3)
    peak = (score == ndimage.maximum_filter(score, size=size, mode="constant", cval=0.0)) & (score > 0)
    idx = np.argwhere(peak)
    vals = score[peak]
    order = np.lexsort((np.arange(len(vals)), -vals))
    min_distance = scales[0] if min_distance is None else min_distance
    maxima: list[tuple[np.ndarray, float, float]] = []
    scale_map = best_scale.reshape(v.dims)
    for i in order:
        pos = idx[i].astype(float)
        if all(np.linalg.norm(pos - p) > min_distance for p, _, _ in maxima):
            maxima.append((pos, float(scale_map[tuple(idx[i])]), float(vals[i])))
    return KadirBradyResult(score, scale_map, best_ent.reshape(v.dims), maxima, evals)


# --------------------------------------------------------------------- ranking


def dedupe_top_k(dets: list[Detection], k: int, radius: float) -> list[Detection]:
    """Greedy suppression: strongest pdf difference first, keep if farther than
    ``radius`` from everything kept, stop at ``k``."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].pdf_diff, dets[i].seed_index, i))
    kept: list[Detection] = []
    for i in order:
        if len(kept) >= k:
            break
        c = np.asarray(dets[i].center, dtype=float)
        if all(np.linalg.norm(c - np.asarray(o.center, dtype=float)) > radius for o in kept):
            kept.append(dets[i])
    return kept


# ---------------------------------------------------------------- Hu moments


def _cell_power(d: np.ndarray, p: int) -> np.ndarray:
    """Integral of ``(d + u)^p`` for ``u`` over one unit pixel."""
    if p == 0:
        return np.ones_like(d)
    if p == 1:
        return d
    if p == 2:
        return d * d + 1.0 / 12.0
    return d**3 + d / 4.0


def hu_moments(img) -> np.ndarray:
    """The seven Hu invariants of a 2-D intensity image (first index is x).

    Each pixel is integrated as a unit square of constant intensity, so
    pixel-replicating upscales leave the invariants unchanged exactly.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("hu_moments needs a 2-D image")
    m00 = a.sum()
    if m00 == 0:
        raise ValueError("image has zero total mass")
    x = np.arange(a.shape[0], dtype=np.float64)[:, None]
    y = np.arange(a.shape[1], dtype=np.float64)[None, :]
    xc = (a * x).sum() / m00
    yc = (a * y).sum() / m00
    dx, dy = x - xc, y - yc

    def eta(p, q):
        mu = (a * _cell_power(dx, p) * _cell_power(dy, q)).sum()
        return mu / m00 ** (1 + (p + q) / 2.0)

    n20, n02, n11 = eta(2, 0), eta(0, 2), eta(1, 1)
    n30, n03, n21, n12 = eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2)
    a1, a2 = n30 + n12, n21 + n03
    return np.array([
        n20 + n02,
        (n20 - n02) ** 2 + 4 * n11**2,
        (n30 - 3 * n12) ** 2 + (3 * n21 - n03) ** 2,
        a1**2 + a2**2,
        (n30 - 3 * n12) * a1 * (a1**2 - 3 * a2**2) + (3 * n21 - n03) * a2 * (3 * a1**2 - a2**2),
        (n20 - n02) * (a1**2 - a2**2) + 4 * n11 * a1 * a2,
        (3 * n21 - n03) * a1 * (a1**2 - 3 * a2**2) - (n30 - 3 * n12) * a2 * (3 * a1**2 - a2**2),
    ])


def detection_slices(v: Volume, det: Detection, count: int = 5) -> list[np.ndarray]:
    """Axial crops through the detection's central slice +- ``count // 2``.

    Crops span the window's in-plane bounding box; slices outside the volume
    or the window's z-extent are skipped.
    """
    c = np.asarray(det.center, dtype=float)
    half = np.sqrt(np.diag(np.asarray(det.H, dtype=float)))
    nx, ny, nz = v.dims
    x0, x1 = max(0, int(math.ceil(c[0] - half[0]))), min(nx - 1, int(math.floor(c[0] + half[0])))
    y0, y1 = max(0, int(math.ceil(c[1] - half[1]))), min(ny - 1, int(math.floor(c[1] + half[1])))
    zc = int(round(c[2]))
    zlo, zhi = c[2] - half[2], c[2] + half[2]
    out = []
    for dz in range(-(count // 2), count // 2 + 1):
        z = zc + dz
        if 0 <= z < nz and (dz == 0 or zlo <= z <= zhi) and x1 >= x0 and y1 >= y0:
            out.append(v.data[x0 : x1 + 1, y0 : y1 + 1, z])
    return out


def hu_filter(dets: list[Detection], v: Volume, template, slices: int = 5) -> Detection:
    """Detection whose slice Hu vectors are closest (mean Euclidean) to the template's."""
    if not dets:
        raise ValueError("hu_filter needs at least one detection")
    if len(dets) == 1:
        return dets[0]
    ref = hu_moments(template)
    best, best_d = dets[0], math.inf
    for det in dets:
        dists = []
        for sl in detection_slices(v, det, slices):
            try:
                dists.append(float(np.linalg.norm(hu_moments(sl) - ref)))
            except ValueError:
                continue
        score = float(np.mean(dists)) if dists else math.inf
        if score < best_d:
            best, best_d = det, score
    return best


# ----------------------------------------------------------------------- Jaccard


def jaccard(a, b) -> float:
    """``|A & B| / |A | B|``; ``a`` may be a window or a mask."""
    b = np.asarray(b, dtype=bool)
    if isinstance(a, (EllipsoidWindow, BoxWindow)):
        a = a.mask(b.shape)
    a = np.asarray(a, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask frames differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        raise ValueError("Jaccard index undefined for two empty masks")
    return np.count_nonzero(a & b) / union


# ----------------------------------------------------------------------- detect


@dataclass(eq=False)
class DetectResult:
    detections: list[Detection]
    raw: list[Detection]
    voxel_evals: int = 0
    flag_counts: dict = field(default_factory=dict)


def _quadrant_task(ctx, item):
    v, params, iw = ctx
    index, (pos, _) = item
    counter = EvalCounter()
    res = _seek_one(v, pos, params, iw, counter)
    center = np.array([res.position[0], res.position[1], 0.0])
    H = np.eye(3) * float(res.best_scale) ** 2
    if res.degenerate:
        return Detection(center, H, iterations=res.iterations, flags=res.flags,
                         seed_index=index, voxel_evals=counter.voxels)
    try:
        ent, rho, pdf = window_stats(v, center, H, iw, np.full(iw.bins, 1.0 / iw.bins),
                                     EPANECHNIKOV, counter)
    except DegenerateWindowError:
        return Detection(center, H, iterations=res.iterations, flags=res.flags + (DEGENERATE,),
                         seed_index=index, voxel_evals=counter.voxels)
    return Detection(center, H, ent, pdf, rho, res.iterations, res.flags, index, counter.voxels)


def _shift_task(ctx, item):
    v, params, iw = ctx
    index, (pos, scale) = item
    p = dataclasses.replace(params, H=np.eye(3) * scale**2)
    return saliency_shift(v, pos, p, iw, seed_index=index)


def _abmsod_task(ctx, item):
    v, params, iw = ctx
    index, (pos, scale) = item
    return abmsod_run(v, EllipsoidWindow.ball(pos, scale), params, iw, seed_index=index)


_TASKS = {"quadrant": _quadrant_task, "shift": _shift_task, "abmsod": _abmsod_task}


def default_params(method: str):
    if method == "quadrant":
        return QuadrantParams()
    if method == "shift":
        return ShiftParams.isotropic(8.0)
    if method == "abmsod":
        return AbmsodParams()
    raise ValueError(f"unknown method {method!r}")


def seek_all(v: Volume, method: str, params, seeds, iw: IntensityWindow, workers: int = 1):
    """Run one search per seed (in parallel when ``workers > 1``), in seed order."""
    if method not in _TASKS:
        raise ValueError(f"unknown method {method!r}")
    if method == "quadrant" and not v.is_2d:
        raise ValueError("the quadrant method needs a 2D image (nz == 1)")
    return ordered_map(_TASKS[method], (v, params, iw), list(enumerate(seeds)), workers)


def select_detections(
    dets: list[Detection],
    k: int = 20,
    dedupe_radius: float = 5.0,
    entropy_quantile: float = 0.9,
    min_pdf_diff: float = 0.0,
) -> list[Detection]:
    """Entropy gate, pdf-difference gate, then :func:`dedupe_top_k`.

    The entropy gate keeps detections at or above the ``entropy_quantile``
    quantile of the non-degenerate, positive-entropy population.
    """
    live = [d for d in dets if not d.degenerate and d.entropy_bits > 0]
    if not live:
        return []
    if entropy_quantile > 0:
        cut = float(np.quantile([d.entropy_bits for d in live], entropy_quantile))
        live = [d for d in live if d.entropy_bits >= cut]
    live = [d for d in live if d.pdf_diff > min_pdf_diff]
    return dedupe_top_k(live, k, dedupe_radius)


def detect(
    v: Volume,
    method: str,
    params,
    plan: SeedPlan,
    iw: IntensityWindow,
    *,
    k: int = 20,
    dedupe_radius: float = 5.0,
    entropy_quantile: float = 0.9,
    min_pdf_diff: float = 0.0,
    workers: int = 1,
) -> DetectResult:
    """Seed, search, gate and rank.  Deterministic for fixed inputs."""
    if params is None:
        params = default_params(method)
    seeds = plan_seeds(v, plan)
    if method == "quadrant":
        seen, unique = set(), []
        for pos, s in seeds:
            key = tuple(np.round(pos, 9))
            if key not in seen:
                seen.add(key)
                unique.append((pos, s))
        seeds = unique
    raw = seek_all(v, method, params, seeds, iw, workers)
    flags: dict[str, int] = {}
    for d in raw:
        for f in d.flags:
            flags[f] = flags.get(f, 0) + 1
    chosen = select_detections(raw, k, dedupe_radius, entropy_quantile, min_pdf_diff)
    return DetectResult(chosen, raw, sum(d.voxel_evals for d in raw), flags)


# -------------------------------------------------------------------- baseline


def threshold_baseline(v: Volume, level: float, min_voxels: int = 1) -> list[Detection]:
    """Connected components of ``data > level`` as detections (no saliency)."""
    labels, n = ndimage.label(v.data > level)
    out = []
    for i in range(1, n + 1):
        pts = np.argwhere(labels == i).astype(float)
        if len(pts) < min_voxels:
            continue
        c = pts.mean(axis=0)
        cov = np.cov(pts.T, bias=True) if len(pts) > 1 else np.zeros((3, 3))
        H = 5.0 * cov + np.eye(3) * 0.25
        out.append(Detection(c, H, pdf_diff=float(len(pts)), seed_index=i - 1))
    out.sort(key=lambda d: -d.pdf_diff)
    return out
