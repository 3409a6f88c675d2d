"""Four-quadrant entropy ascent on 2D images.

Around the current point each quadrant is probed with corner-anchored
square windows over a range of sizes; the point then moves by the sum of
the per-quadrant diagonal displacements weighted by normalized entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detection import CLAMPED, CONVERGED, DEGENERATE, NON_CONVERGENT
from .entropy import EvalCounter
from .volume import IntensityWindow, Volume

__all__ = [
    "QUADRANTS",
    "QuadrantParams",
    "QuadrantState",
    "QuadrantResult",
    "quadrant_entropies",
    "quadrant_step",
    "quadrant_seek",
]

# (sx, sy) direction of each quadrant in image coordinates (y grows downward)
QUADRANTS = {"NE": (1, -1), "NW": (-1, -1), "SW": (-1, 1), "SE": (1, 1)}
MIN_PIXELS = 4


@dataclass(frozen=True)
class QuadrantParams:
    scale_range: tuple[int, ...] = tuple(range(4, 15))
    eta: float = 1.0
    max_iters: int = 30
    grid_spacing: int = 16

    def __post_init__(self) -> None:
        ks = tuple(int(k) for k in self.scale_range)
        if not ks or any(b <= a for a, b in zip(ks, ks[1:])) or ks[0] < 1:
            raise ValueError("scale_range must be non-empty, positive and strictly increasing")
        if self.eta <= 0 or self.max_iters < 1:
            raise ValueError("eta must be > 0 and max_iters >= 1")
        object.__setattr__(self, "scale_range", ks)


@dataclass
class QuadrantState:
    position: np.ndarray
    entropy: dict[str, float]
    k_opt: dict[str, int]
    weights: dict[str, float]
    displacement: np.ndarray
    degenerate: bool = False

    @property
    def best_quadrant(self) -> str:
        return max(QUADRANTS, key=lambda j: (self.entropy[j], -list(QUADRANTS).index(j)))


@dataclass
class QuadrantResult:
    position: np.ndarray
    best_scale: int
    entropy: float
    iterations: int
    flags: tuple[str, ...] = ()
    trajectory: list = field(default_factory=list, repr=False)
    voxel_evals: int = 0

    @property
    def degenerate(self) -> bool:
        return DEGENERATE in self.flags


def _entropy_bits(bins: np.ndarray, m: int) -> float:
    counts = np.bincount(bins, minlength=m)
    p = counts[counts > 0] / bins.size
    return float(max(0.0, -np.sum(p * np.log2(p))))


def quadrant_entropies(
    image_bins: np.ndarray,
    anchor: tuple[int, int],
    params: QuadrantParams,
    m: int,
    counter: EvalCounter | None = None,
) -> tuple[dict[str, float], dict[str, int]]:
    """Best entropy (bits) and its window size for each quadrant at ``anchor``.

    ``image_bins`` is the 2-D array of bin indices.  Windows are clipped to
    the image; a clipped window with fewer than four pixels scores zero.
    Ties between sizes go to the smallest.
    """
    nx, ny = image_bins.shape
    ax, ay = anchor
    best: dict[str, float] = {}
    k_opt: dict[str, int] = {}
    for name, (sx, sy) in QUADRANTS.items():
        top_e, top_k = -1.0, params.scale_range[0]
        for k in params.scale_range:
            x0, x1 = sorted((ax, ax + sx * (k - 1)))
            y0, y1 = sorted((ay, ay + sy * (k - 1)))
            x0, y0 = max(x0, 0), max(y0, 0)
            x1, y1 = min(x1, nx - 1), min(y1, ny - 1)
            if x1 < x0 or y1 < y0:
                e = 0.0
            else:
                block = image_bins[x0 : x1 + 1, y0 : y1 + 1]
                if counter is not None:
                    counter.add(block.size)
                e = _entropy_bits(block.ravel(), m) if block.size >= MIN_PIXELS else 0.0
            if e > top_e:
                top_e, top_k = e, k
        best[name] = top_e
        k_opt[name] = top_k
    return best, k_opt


def quadrant_step(
    v: Volume,
    p,
    params: QuadrantParams,
    iw: IntensityWindow,
    counter: EvalCounter | None = None,
) -> tuple[np.ndarray, QuadrantState]:
    """One entropy-weighted quadrant move from position ``p`` (x, y)."""
    if not v.is_2d:
        raise ValueError("the quadrant method works on 2D images (nz == 1)")
    pos = np.asarray(p, dtype=np.float64).reshape(-1)[:2]
    nx, ny, _ = v.dims
    if not (0 <= pos[0] <= nx - 1 and 0 <= pos[1] <= ny - 1):
        raise ValueError(f"position {pos} lies outside the {nx}x{ny} image")
    anchor = (int(math.floor(pos[0] + 0.5)), int(math.floor(pos[1] + 0.5)))
    ent, k_opt = quadrant_entropies(v.binned(iw)[:, :, 0], anchor, params, iw.bins, counter)
    total = sum(ent.values())
    if total <= 0:
        zero = np.zeros(2)
        weights = {j: 0.0 for j in QUADRANTS}
        return pos.copy(), QuadrantState(pos.copy(), ent, k_opt, weights, zero, degenerate=True)
    weights = {j: ent[j] / total for j in QUADRANTS}
    disp = np.zeros(2)
    for j, (sx, sy) in QUADRANTS.items():
        # magnitude sqrt(2) * k along the unit diagonal (sx, sy) / sqrt(2)
        disp += weights[j] * k_opt[j] * np.array([sx, sy], dtype=np.float64)
    return pos + disp, QuadrantState(pos.copy(), ent, k_opt, weights, disp)


def quadrant_seek(
    v: Volume,
    seeds,
    params: QuadrantParams,
    iw: IntensityWindow,
    counter: EvalCounter | None = None,
) -> list[QuadrantResult]:
    """Run the quadrant ascent independently from every seed, in seed order."""
    return [_seek_one(v, s, params, iw, counter) for s in seeds]


def _seek_one(v, seed, params, iw, counter=None) -> QuadrantResult:
    counter = EvalCounter() if counter is None else counter
    start = counter.voxels
    nx, ny, _ = v.dims
    upper = np.array([nx - 1, ny - 1], dtype=np.float64)
    pos = np.asarray(seed, dtype=np.float64).reshape(-1)[:2]
    flags: tuple[str, ...] = ()
    trajectory = [pos.copy()]
    state = None
    moved = math.inf
    iters = 0
    while moved > params.eta and iters < params.max_iters:
        new, state = quadrant_step(v, pos, params, iw, counter)
        iters += 1
        if state.degenerate:
            flags += (DEGENERATE,)
            break
        clipped = np.clip(new, 0.0, upper)
        if np.any(clipped != new) and CLAMPED not in flags:
            flags += (CLAMPED,)
        moved = float(np.linalg.norm(state.displacement))
        pos = clipped
        trajectory.append(pos.copy())
    else:
        flags += (CONVERGED,) if moved <= params.eta else (NON_CONVERGENT,)
    if state is not None and not state.degenerate:
        # statistics at the final position
        _, state = quadrant_step(v, pos, params, iw, counter)
    if state is None or state.degenerate:
        flags = flags if DEGENERATE in flags else flags + (DEGENERATE,)
        return QuadrantResult(pos, params.scale_range[0], 0.0, iters, flags, trajectory,
                              counter.voxels - start)
    j = state.best_quadrant
    return QuadrantResult(pos, state.k_opt[j], state.entropy[j], iters, flags, trajectory,
                          counter.voxels - start)
