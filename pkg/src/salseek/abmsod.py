"""Adaptive-bandwidth mean shift over ellipsoidal windows.

Each iteration moves the window center by a mean-shift step, then re-fits
the bandwidth matrix from the weighted second moment of the support about
the new center.  The best window by Bhattacharyya coefficient is kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detection import CLAMPED, CONVERGED, DEGENERATE, NON_CONVERGENT, Detection, add_flag
from .entropy import (
    GAUSSIAN,
    IDENTITY,
    DegenerateWindowError,
    EllipsoidWindow,
    EvalCounter,
    KernelProfile,
    WindowSample,
    bhattacharyya,
    histogram_of,
    sample_window,
    support_coords,
    uniform_target,
    voxel_weights,
)
from .shift import window_stats
from .volume import IntensityWindow, Volume

__all__ = [
    "MOMENT_SCALE",
    "AbmsodParams",
    "bandwidth_update",
    "raw_moment",
    "clamp_eigenvalues",
    "abmsod_run",
]

# second moment of a uniform unit ball in 3D is I/5
MOMENT_SCALE = 5.0


@dataclass(frozen=True, eq=False)
class AbmsodParams:
    """Settings for :func:`abmsod_run`.

    ``histogram_kernel`` weights the candidate histogram (the
    ``exp(-d/2)`` profile by default); ``step_kernel`` gives the ``-K'``
    factor of the position update.  Bandwidth eigenvalues are clamped to
    ``[lambda_min, lambda_max]``; ``lambda_max=None`` means
    ``(max volume dim / 2)^2``.
    """

    target: np.ndarray | None = None
    threshold: float = 1e-3
    max_iterations: int = 15
    stall_iterations: int = 2
    step_kernel: KernelProfile = IDENTITY
    histogram_kernel: KernelProfile = GAUSSIAN
    lambda_min: float = 4.0
    lambda_max: float | None = None
    record_trace: bool = False

    def __post_init__(self) -> None:
        if self.threshold <= 0 or self.max_iterations < 1:
            raise ValueError("threshold must be > 0 and max_iterations >= 1")
        if self.lambda_min <= 0 or (self.lambda_max is not None and self.lambda_max < self.lambda_min):
            raise ValueError("need 0 < lambda_min <= lambda_max")

    def bounds(self, v: Volume) -> tuple[float, float]:
        hi = self.lambda_max if self.lambda_max is not None else (max(v.dims) / 2.0) ** 2
        return self.lambda_min, max(hi, self.lambda_min)

    def target_for(self, iw: IntensityWindow) -> np.ndarray:
        if self.target is None:
            return uniform_target(iw.bins)
        q = np.asarray(self.target, dtype=np.float64)
        if q.shape != (iw.bins,):
            raise ValueError(f"target has {q.size} bins, window has {iw.bins}")
        return q


def raw_moment(x_new, coords: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted second moment ``sum w (x - s)(x - s)^T / sum w``."""
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if not total > 0:
        raise DegenerateWindowError("zero weight mass in bandwidth update")
    off = np.asarray(x_new, dtype=np.float64) - np.asarray(coords, dtype=np.float64)
    m = (off * w[:, None]).T @ off / total
    if not np.all(np.isfinite(m)):
        raise DegenerateWindowError("non-finite bandwidth moment")
    return 0.5 * (m + m.T)


def clamp_eigenvalues(H: np.ndarray, lo: float, hi: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (H + H.T))
    vals = np.clip(vals, lo, hi)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def bandwidth_update(
    v: Volume,
    x_new,
    win: EllipsoidWindow,
    weights: np.ndarray,
    params: AbmsodParams | None = None,
    coords: np.ndarray | None = None,
    flat: bool | None = None,
) -> np.ndarray:
    """New bandwidth from the weighted moment of ``win``'s support about ``x_new``.

    ``weights`` align with ``coords`` (the in-bounds support voxels of
    ``win``; sampled here when omitted).  On 2D images the out-of-plane
    variance is kept from ``win``.
    """
    params = params or AbmsodParams()
    if coords is None:
        coords = support_coords(v, win)
    m = raw_moment(x_new, coords, weights) * MOMENT_SCALE
    flat = v.is_2d if flat is None else flat
    if flat:
        m[2, :] = m[:, 2] = 0.0
        m[2, 2] = win.H[2, 2]
    return clamp_eigenvalues(m, *params.bounds(v))


def _weights_at(sample: WindowSample, m: int, kernel: KernelProfile, q: np.ndarray):
    p = histogram_of(sample, m, kernel)
    return p, voxel_weights(sample.bins, p, q)


def abmsod_run(
    v: Volume,
    seed: EllipsoidWindow,
    params: AbmsodParams,
    iw: IntensityWindow,
    seed_index: int = -1,
    counter: EvalCounter | None = None,
) -> Detection:
    """Adaptive-bandwidth search from ``seed``; returns the best window found.

    Per iteration: candidate histogram and weights at the current window,
    mean-shift position update, histogram and weights rebuilt at the new
    position with the current bandwidth, bandwidth refit, and the
    coefficient of that rebuilt histogram compared to the running best.
    The search stops once the best coefficient has failed to improve by
    ``threshold`` for ``stall_iterations`` consecutive iterations.
    """
    counter = EvalCounter() if counter is None else counter
    start = counter.voxels
    q = params.target_for(iw)
    lo, hi = params.bounds(v)
    upper = np.asarray(v.dims, dtype=np.float64) - 1
    x = np.clip(seed.center, 0.0, upper)
    H = clamp_eigenvalues(seed.H, lo, hi) if not v.is_2d else _clamp_flat(seed.H, lo, hi)
    x_opt, H_opt = x.copy(), H.copy()
    max_bhat = 0.0
    flags: tuple[str, ...] = (CLAMPED,) if np.any(x != seed.center) else ()
    trace = [] if params.record_trace else None
    stall = 0
    iters = 0
    try:
        while iters < params.max_iterations:
            sample = sample_window(v, EllipsoidWindow(x, H), iw, counter)
            _, w = _weights_at(sample, iw.bins, params.histogram_kernel, q)
            g = params.step_kernel.shift_weight(sample.d) * w
            den = g.sum()
            if not den > 0:
                raise DegenerateWindowError("zero total mean-shift weight")
            x_new = (g[:, None] * sample.coords).sum(axis=0) / den
            clipped = np.clip(x_new, 0.0, upper)
            if np.any(clipped != x_new):
                flags = add_flag(flags, CLAMPED)
            x_new = clipped

            # rebuild at the new position with the old bandwidth
            win_new = EllipsoidWindow(x_new, H)
            sample_new = sample_window(v, win_new, iw, counter)
            p_new, w_new = _weights_at(sample_new, iw.bins, params.histogram_kernel, q)
            H_new = bandwidth_update(v, x_new, win_new, w_new, params, coords=sample_new.coords)
            bhat = bhattacharyya(p_new, q)
            iters += 1

            improved = bhat > max_bhat
            if bhat > max_bhat + params.threshold:
                stall = 0
            else:
                stall += 1
            if improved:
                max_bhat, x_opt, H_opt = bhat, x_new.copy(), H_new.copy()
            if trace is not None:
                trace.append({
                    "center": x_new.copy(), "H": H_new.copy(), "bhatcf": bhat,
                    "max_bhatcf": max_bhat, "bounds": (lo, hi),
                })
            x, H = x_new, H_new
            if stall >= params.stall_iterations:
                flags = add_flag(flags, CONVERGED)
                break
        else:
            flags = add_flag(flags, NON_CONVERGENT)
    except DegenerateWindowError:
        flags = add_flag(flags, DEGENERATE)
        if iters == 0:
            return Detection(
                center=x_opt, H=H_opt, iterations=0, flags=flags, seed_index=seed_index,
                voxel_evals=counter.voxels - start, trace=trace,
            )
    try:
        ent, _, pdf = window_stats(v, x_opt, H_opt, iw, q, params.histogram_kernel, counter)
    except DegenerateWindowError:
        ent, pdf = 0.0, 0.0
        flags = add_flag(flags, DEGENERATE)
    return Detection(
        center=x_opt, H=H_opt, entropy_bits=ent, pdf_diff=pdf, bhattacharyya=max_bhat,
        iterations=iters, flags=flags, seed_index=seed_index,
        voxel_evals=counter.voxels - start, trace=trace,
    )


def _clamp_flat(H: np.ndarray, lo: float, hi: float) -> np.ndarray:
    out = np.zeros((3, 3))
    out[:2, :2] = clamp_eigenvalues(H[:2, :2], lo, hi)
    out[2, 2] = max(H[2, 2], lo)
    return out
