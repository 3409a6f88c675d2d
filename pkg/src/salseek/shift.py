"""Fixed-bandwidth mean shift toward a uniform target histogram.

Maximizing the Bhattacharyya coefficient against the uniform pmf pulls the
window toward higher-entropy content.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detection import CLAMPED, CONVERGED, DEGENERATE, NON_CONVERGENT, Detection, add_flag
from .entropy import (
    EPANECHNIKOV,
    IDENTITY,
    DegenerateWindowError,
    EllipsoidWindow,
    EvalCounter,
    KernelProfile,
    bhattacharyya,
    entropy,
    histogram_of,
    pdf_difference,
    sample_window,
    uniform_target,
    voxel_weights,
)
from .volume import IntensityWindow, Volume

__all__ = ["ShiftParams", "shift_step", "saliency_shift", "window_stats"]


@dataclass(frozen=True, eq=False)
class ShiftParams:
    """Settings for :func:`saliency_shift`.

    ``H`` is the fixed diagonal bandwidth (per-axis half-extents squared).
    ``histogram_kernel`` weights voxels when building the candidate
    histogram; ``step_kernel`` supplies the ``-K'`` factor of the position
    update.  ``target`` defaults to the uniform pmf over the window's bins.
    """

    H: np.ndarray
    step_kernel: KernelProfile = IDENTITY
    histogram_kernel: KernelProfile = EPANECHNIKOV
    max_iters: int = 50
    min_step: float = 0.1
    target: np.ndarray | None = None
    min_support_fraction: float = 0.1
    record_trace: bool = False

    def __post_init__(self) -> None:
        H = np.asarray(self.H, dtype=np.float64)
        if H.shape != (3, 3) or np.any(H != np.diag(np.diag(H))) or np.any(np.diag(H) <= 0):
            raise ValueError("shift bandwidth must be a positive diagonal 3x3 matrix")
        if self.min_step <= 0 or self.max_iters < 1:
            raise ValueError("min_step must be > 0 and max_iters >= 1")
        object.__setattr__(self, "H", H)

    @classmethod
    def isotropic(cls, radius: float, **kw) -> "ShiftParams":
        return cls(np.eye(3) * float(radius) ** 2, **kw)

    def target_for(self, iw: IntensityWindow) -> np.ndarray:
        if self.target is None:
            return uniform_target(iw.bins)
        q = np.asarray(self.target, dtype=np.float64)
        if q.shape != (iw.bins,):
            raise ValueError(f"target has {q.size} bins, window has {iw.bins}")
        return q


def shift_step(
    v: Volume,
    x,
    params: ShiftParams,
    iw: IntensityWindow,
    counter: EvalCounter | None = None,
) -> np.ndarray:
    """One mean-shift update of the window center ``x``."""
    sample = sample_window(v, EllipsoidWindow(x, params.H), iw, counter)
    p = histogram_of(sample, iw.bins, params.histogram_kernel)
    w = voxel_weights(sample.bins, p, params.target_for(iw))
    g = params.step_kernel.shift_weight(sample.d) * w
    den = g.sum()
    if not den > 0:
        raise DegenerateWindowError("zero total mean-shift weight")
    return (g[:, None] * sample.coords).sum(axis=0) / den


def window_stats(
    v: Volume,
    center,
    H: np.ndarray,
    iw: IntensityWindow,
    target: np.ndarray,
    rho_kernel: KernelProfile,
    counter: EvalCounter | None = None,
) -> tuple[float, float, float]:
    """(entropy in bits, Bhattacharyya vs ``target``, pdf difference) of a window.

    Entropy and pdf difference use the Epanechnikov profile; the coefficient
    uses ``rho_kernel`` so it matches the histogram the search optimized.
    """
    sample = sample_window(v, EllipsoidWindow(center, H), iw, counter)
    ent = entropy(histogram_of(sample, iw.bins, EPANECHNIKOV))
    rho = bhattacharyya(histogram_of(sample, iw.bins, rho_kernel), target)
    scale = float(np.linalg.det(H) ** (1.0 / 6.0))
    try:
        pdf = pdf_difference(v, center, iw, scale, EPANECHNIKOV, shape=H / scale**2, counter=counter)
    except DegenerateWindowError:
        pdf = 0.0
    return ent, rho, pdf


def saliency_shift(
    v: Volume,
    seed,
    params: ShiftParams,
    iw: IntensityWindow,
    seed_index: int = -1,
    counter: EvalCounter | None = None,
) -> Detection:
    """Iterate :func:`shift_step` from ``seed`` until the step is below ``min_step``."""
    counter = EvalCounter() if counter is None else counter
    start = counter.voxels
    x = np.asarray(seed, dtype=np.float64).reshape(-1)
    if x.size == 2:
        x = np.append(x, 0.0)
    upper = np.asarray(v.dims, dtype=np.float64) - 1
    q = params.target_for(iw)
    flags: tuple[str, ...] = ()
    if np.any((x < 0) | (x > upper)):
        x = np.clip(x, 0.0, upper)
        flags = add_flag(flags, CLAMPED)
    trace = [] if params.record_trace else None
    iters = 0
    try:
        while iters < params.max_iters:
            x_new = shift_step(v, x, params, iw, counter)
            iters += 1
            clamped = np.clip(x_new, 0.0, upper)
            if np.any(clamped != x_new):
                flags = add_flag(flags, CLAMPED)
            step = float(np.linalg.norm(clamped - x))
            x = clamped
            if trace is not None:
                p = histogram_of(sample_window(v, EllipsoidWindow(x, params.H), iw), iw.bins, params.histogram_kernel)
                trace.append({"center": x.copy(), "step": step, "rho": bhattacharyya(p, q)})
            if step < params.min_step:
                flags = add_flag(flags, CONVERGED)
                break
        else:
            flags = add_flag(flags, NON_CONVERGENT)
        ent, rho, pdf = window_stats(v, x, params.H, iw, q, params.histogram_kernel, counter)
        support = sample_window(v, EllipsoidWindow(x, params.H), iw).support_fraction
        if support < params.min_support_fraction:
            flags = add_flag(tuple(f for f in flags if f != CONVERGED), NON_CONVERGENT)
    except DegenerateWindowError:
        return Detection(
            center=x, H=params.H.copy(), iterations=iters,
            flags=add_flag(flags, DEGENERATE), seed_index=seed_index,
            voxel_evals=counter.voxels - start, trace=trace,
        )
    return Detection(
        center=x, H=params.H.copy(), entropy_bits=ent, pdf_diff=pdf, bhattacharyya=rho,
        iterations=iters, flags=flags, seed_index=seed_index,
        voxel_evals=counter.voxels - start, trace=trace,
    )
