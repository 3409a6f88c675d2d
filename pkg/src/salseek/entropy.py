"""Histograms, entropy and the kernel-weighted window statistics.

Histograms are plain 1-D float arrays of bin masses.  Entropies are in
bits unless a function says otherwise; the closed-form mixture model
(:func:`mixture_entropy` and its derivative) works in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .volume import IntensityWindow, Volume

__all__ = [
    "EPS_FLOOR",
    "DegenerateWindowError",
    "EvalCounter",
    "KernelProfile",
    "IDENTITY",
    "EPANECHNIKOV",
    "GAUSSIAN",
    "EllipsoidWindow",
    "BoxWindow",
    "WindowSample",
    "normalize",
    "is_normalized",
    "entropy",
    "mixture_pmf",
    "mixture_entropy",
    "mixture_entropy_derivative",
    "sample_window",
    "support_coords",
    "candidate_histogram",
    "histogram_of",
    "bhattacharyya",
    "weight_at",
    "voxel_weights",
    "pdf_difference",
    "uniform_target",
]

EPS_FLOOR = 1e-6
NORM_TOL = 1e-9


class DegenerateWindowError(ValueError):
    """The window has no in-bounds support or zero total weight."""


@dataclass
class EvalCounter:
    """Tally of voxels drawn into histograms; used to compare search costs."""

    voxels: int = 0
    histograms: int = 0

    def add(self, n: int) -> None:
        self.voxels += int(n)
        self.histograms += 1


# ------------------------------------------------------------------- histograms


def normalize(h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0):
        raise ValueError("histogram masses must be non-negative")
    total = h.sum()
    if total <= 0:
        raise DegenerateWindowError("histogram has zero total mass")
    return h / total


def is_normalized(h, tol: float = NORM_TOL) -> bool:
    h = np.asarray(h, dtype=np.float64)
    return bool(np.all(h >= 0) and abs(h.sum() - 1.0) <= tol)


def uniform_target(m: int) -> np.ndarray:
    return np.full(int(m), 1.0 / m)


def entropy(h, base: float = 2.0) -> float:
    """Shannon entropy of a normalized histogram; empty bins contribute 0."""
    p = np.asarray(h, dtype=np.float64)
    if not is_normalized(p):
        raise ValueError("entropy needs a normalized histogram")
    nz = p[p > 0]
    return float(max(0.0, -np.sum(nz * np.log(nz))) / math.log(base))


def mixture_pmf(alpha: float, m: int) -> np.ndarray:
    """pmf of ``alpha * U{0..M-1} + (1 - alpha) * delta_0``."""
    p = np.full(m, alpha / m)
    p[0] += 1.0 - alpha
    return p


def mixture_entropy(alpha: float, m: int) -> float:
    """Closed-form entropy (nats) of the uniform/delta mixture at overlap ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if m < 2:
        raise ValueError(f"bin count must be >= 2, got {m}")
    peak = alpha / m + 1.0 - alpha
    out = 0.0
    if peak > 0:
        out -= peak * math.log(peak)
    if alpha > 0:
        out -= alpha * (m - 1) / m * (math.log(alpha) - math.log(m))
    return out


def mixture_entropy_derivative(alpha: float, m: int) -> float:
    """d/dalpha of :func:`mixture_entropy`; diverges at ``alpha = 0``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"derivative is defined for alpha in (0, 1], got {alpha}")
    if m < 2:
        raise ValueError(f"bin count must be >= 2, got {m}")
    return (m - 1) / m * (math.log(alpha + m * (1.0 - alpha)) - math.log(alpha))


# ---------------------------------------------------------------------- kernels


@dataclass(frozen=True)
class KernelProfile:
    """Kernel profile ``K(d)`` of the squared Mahalanobis distance ``d``.

    ``shift_weight`` is the mean-shift weight ``g(d) = -K'(d)`` with the sign
    fixed so that it is non-negative; for the identity profile (``K' = 1``)
    the sign cancels in the position ratio, so ``g = 1`` and the update is the
    plain weighted centroid.
    """

    variant: str

    def __post_init__(self) -> None:
        if self.variant not in ("identity", "epanechnikov", "gaussian"):
            raise ValueError(f"unknown kernel profile {self.variant!r}")

    def profile(self, d):
        d = np.asarray(d, dtype=np.float64)
        if self.variant == "identity":
            return d
        if self.variant == "epanechnikov":
            return np.clip(1.0 - d, 0.0, None)
        return np.exp(-0.5 * d)

    def derivative(self, d):
        d = np.asarray(d, dtype=np.float64)
        if self.variant == "identity":
            return np.ones_like(d)
        if self.variant == "epanechnikov":
            return -np.ones_like(d)
        return -0.5 * np.exp(-0.5 * d)

    def shift_weight(self, d):
        return np.abs(self.derivative(d))


IDENTITY = KernelProfile("identity")
EPANECHNIKOV = KernelProfile("epanechnikov")
GAUSSIAN = KernelProfile("gaussian")


# ---------------------------------------------------------------------- windows


@dataclass(frozen=True, eq=False)
class EllipsoidWindow:
    """Window with support ``(s - center)^T H^-1 (s - center) <= 1``."""

    center: np.ndarray
    H: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=np.float64).reshape(-1)
        if c.size == 2:
            c = np.append(c, 0.0)
        H = np.asarray(self.H, dtype=np.float64)
        if c.shape != (3,) or H.shape != (3, 3):
            raise ValueError("window needs a 3-vector center and a 3x3 bandwidth")
        if not np.allclose(H, H.T, atol=1e-9):
            raise ValueError("bandwidth matrix must be symmetric")
        if np.linalg.eigvalsh(H)[0] <= 0:
            raise ValueError("bandwidth matrix must be positive definite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "H", H)

    @classmethod
    def ball(cls, center, radius: float) -> "EllipsoidWindow":
        return cls(center, np.eye(3) * float(radius) ** 2)

    @classmethod
    def box(cls, center, half_extents) -> "EllipsoidWindow":
        """Axis-aligned window; ``H`` is diagonal with the half-extents squared."""
        half = np.broadcast_to(np.asarray(half_extents, dtype=np.float64), (3,))
        return cls(center, np.diag(half**2))

    @property
    def scale(self) -> float:
        """Geometric-mean radius ``det(H)^(1/6)``."""
        return float(np.linalg.det(self.H) ** (1.0 / 6.0))

    def mask(self, dims) -> np.ndarray:
        from .volume import ellipsoid_mask

        return ellipsoid_mask(dims, self.center, self.H)


@dataclass(frozen=True, eq=False)
class BoxWindow:
    """Axis-aligned cuboid ``|s_i - c_i| <= half_i``.

    Distances use the box gauge ``max_i ((s_i - c_i) / half_i)^2`` so kernel
    profiles see the same ``[0, 1]`` range as for ellipsoids.
    """

    center: np.ndarray
    half: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=np.float64).reshape(-1)
        if c.size == 2:
            c = np.append(c, 0.0)
        half = np.broadcast_to(np.asarray(self.half, dtype=np.float64), (3,)).copy()
        if c.shape != (3,) or np.any(half <= 0):
            raise ValueError("box window needs a 3-vector center and positive half-extents")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half", half)

    @property
    def H(self) -> np.ndarray:
        return np.diag(self.half**2)

    @property
    def scale(self) -> float:
        return float(np.prod(self.half) ** (1.0 / 3.0))

    def mask(self, dims) -> np.ndarray:
        axes = [np.abs(np.arange(n) - c) <= h + 1e-9 for n, c, h in zip(dims, self.center, self.half)]
        return axes[0][:, None, None] & axes[1][None, :, None] & axes[2][None, None, :]


@dataclass(frozen=True, eq=False)
class WindowSample:
    """In-support voxels of a window: integer coords, offsets from the center,
    squared Mahalanobis distances and intensity bins."""

    coords: np.ndarray
    offsets: np.ndarray
    d: np.ndarray
    bins: np.ndarray
    det_h: float
    support_fraction: float = field(default=1.0)

    def __len__(self) -> int:
        return len(self.d)


def _support(v: Volume, win: "EllipsoidWindow | BoxWindow"):
    c, H = win.center, win.H
    half = np.sqrt(np.diag(H))
    dims = np.asarray(v.dims)
    lo = np.maximum(np.ceil(c - half - 1e-9).astype(int), 0)
    hi = np.minimum(np.floor(c + half + 1e-9).astype(int), dims - 1)
    if np.any(hi < lo):
        raise DegenerateWindowError(f"window at {c} has no in-bounds support")
    ax = [np.arange(lo[i], hi[i] + 1, dtype=np.float64) - c[i] for i in range(3)]
    dx = ax[0][:, None, None]
    dy = ax[1][None, :, None]
    dz = ax[2][None, None, :]
    if isinstance(win, BoxWindow):
        h = win.half
        d = np.maximum(np.maximum((dx / h[0]) ** 2, (dy / h[1]) ** 2), (dz / h[2]) ** 2)
    else:
        hinv = np.linalg.inv(H)
        d = (
            hinv[0, 0] * dx * dx
            + hinv[1, 1] * dy * dy
            + hinv[2, 2] * dz * dz
            + 2.0 * (hinv[0, 1] * dx * dy + hinv[0, 2] * dx * dz + hinv[1, 2] * dy * dz)
        )
    inside = d <= 1.0 + 1e-12
    idx = np.nonzero(inside)
    if idx[0].size == 0:
        raise DegenerateWindowError(f"window at {c} has no in-bounds support")
    coords = np.stack([idx[i] + lo[i] for i in range(3)], axis=1)
    box = tuple(slice(lo[i], hi[i] + 1) for i in range(3))
    return coords, d[inside], box, inside


def support_coords(v: Volume, win: "EllipsoidWindow | BoxWindow") -> np.ndarray:
    """Integer coordinates of the in-bounds support voxels of ``win``."""
    return _support(v, win)[0]


def sample_window(
    v: Volume,
    win: "EllipsoidWindow | BoxWindow",
    iw: IntensityWindow,
    counter: EvalCounter | None = None,
) -> WindowSample:
    """Collect the in-bounds voxels of ``win``'s support.

    ``support_fraction`` is the in-bounds share of the (unclipped) support,
    estimated from the analytic volume of the unclipped window.
    """
    coords, d, box, inside = _support(v, win)
    bins = v.binned(iw)[box][inside]
    det_h = float(np.linalg.det(win.H))
    full = _support_volume(win.H, v.is_2d, isinstance(win, BoxWindow))
    n = len(d)
    frac = min(1.0, n / full) if full > 0 else 1.0
    if counter is not None:
        counter.add(n)
    return WindowSample(coords, coords - win.center, d, bins, det_h, frac)


def _support_volume(H: np.ndarray, flat: bool, box: bool = False) -> float:
    if box:
        extents = 2.0 * np.sqrt(np.diag(H))
        return float(np.prod(extents[:2] if flat else extents))
    if flat:
        # area of the ellipse cut by the z = center plane
        return math.pi * math.sqrt(max(np.linalg.det(H[:2, :2]), 0.0))
    return 4.0 / 3.0 * math.pi * math.sqrt(max(np.linalg.det(H), 0.0))


def histogram_of(sample: WindowSample, m: int, kernel: KernelProfile) -> np.ndarray:
    """Normalized kernel-weighted histogram of an already sampled window."""
    mass = sample.det_h ** -0.5 * kernel.profile(sample.d)
    h = np.bincount(sample.bins, weights=mass, minlength=m)
    total = h.sum()
    if not total > 0:
        raise DegenerateWindowError("window kernel mass is zero")
    return h / total


def candidate_histogram(
    v: Volume,
    win: "EllipsoidWindow | BoxWindow",
    iw: IntensityWindow,
    kernel: KernelProfile = EPANECHNIKOV,
    counter: EvalCounter | None = None,
) -> np.ndarray:
    """Kernel-weighted intensity histogram of the window, normalized to 1.

    Each in-bounds support voxel ``s`` adds ``|H|^-1/2 K(d(x, s))`` to its bin;
    the final division by the total plays the role of the normalizing
    constant, so clipped windows are still normalized.
    """
    return histogram_of(sample_window(v, win, iw, counter), iw.bins, kernel)


# ------------------------------------------------------------------ similarity


def bhattacharyya(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"bin count mismatch: {p.shape} vs {q.shape}")
    rho = float(np.sum(np.sqrt(p * q)))
    return min(max(rho, 0.0), 1.0)


def voxel_weights(bins: np.ndarray, p, q, floor: float = EPS_FLOOR) -> np.ndarray:
    """Mean-shift weights ``sqrt(q[b] / p[b])`` for each voxel bin ``b``.

    Candidate bins below ``floor`` are clamped to it.
    """
    ratio = np.sqrt(np.asarray(q, dtype=np.float64) / np.maximum(np.asarray(p, dtype=np.float64), floor))
    return ratio[bins]


def weight_at(
    v: Volume, s, p, q, iw: IntensityWindow, floor: float = EPS_FLOOR
) -> float:
    """Weight of voxel ``s`` (integer coordinates) for candidate ``p``, target ``q``."""
    s = np.asarray(s, dtype=int).reshape(-1)
    if s.size == 2:
        s = np.append(s, 0)
    b = v.binned(iw)[tuple(s)]
    return float(voxel_weights(np.array([b]), p, q, floor)[0])


# ------------------------------------------------------------------- scale rate


def pdf_difference(
    v: Volume,
    center,
    iw: IntensityWindow,
    scale: float,
    kernel: KernelProfile = EPANECHNIKOV,
    shape=None,
    delta: float = 1.0,
    counter: EvalCounter | None = None,
) -> float:
    """Inter-scale pdf change ``s^2 / (2 ds) * sum_b |p_b(s + ds) - p_b(s - ds)|``.

    Windows at both flanking scales share ``center``; ``shape`` is the unit-scale
    bandwidth (identity for isotropic windows), so the window at scale ``r``
    has ``H = r^2 * shape``.
    """
    shape = np.eye(3) if shape is None else np.asarray(shape, dtype=np.float64)
    lo_s, hi_s = scale - delta, scale + delta
    if lo_s <= 0:
        raise DegenerateWindowError(f"scale {scale} too small for step {delta}")
    inner = sample_window(v, EllipsoidWindow(center, shape * lo_s**2), iw, counter)
    if len(inner) < 2:
        raise DegenerateWindowError(f"scale {lo_s} has support below 2 voxels")
    outer = sample_window(v, EllipsoidWindow(center, shape * hi_s**2), iw, counter)
    p_lo = histogram_of(inner, iw.bins, kernel)
    p_hi = histogram_of(outer, iw.bins, kernel)
    return float(scale**2 / (2.0 * delta) * np.abs(p_hi - p_lo).sum())
