"""The detection record shared by all seek methods."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONVERGED = "converged"
DEGENERATE = "degenerate"
CLAMPED = "boundary-clamped"
NON_CONVERGENT = "non-convergent"


@dataclass(eq=False)
class Detection:
    """A converged search window and its saliency statistics.

    ``H`` is the window bandwidth in voxel^2; ``trace`` holds per-iteration
    diagnostics when a method was asked to record them and is never
    serialized.
    """

    center: np.ndarray
    H: np.ndarray
    entropy_bits: float = 0.0
    pdf_diff: float = 0.0
    bhattacharyya: float = 0.0
    iterations: int = 0
    flags: tuple[str, ...] = ()
    seed_index: int = -1
    voxel_evals: int = 0
    trace: list | None = field(default=None, repr=False)

    @property
    def degenerate(self) -> bool:
        return DEGENERATE in self.flags

    @property
    def scale(self) -> float:
        return float(np.linalg.det(self.H) ** (1.0 / 6.0))

    def to_dict(self) -> dict:
        return {
            "center": [float(c) for c in self.center],
            "H": [float(h) for h in np.asarray(self.H).ravel()],
            "entropy_bits": float(self.entropy_bits),
            "pdf_diff": float(self.pdf_diff),
            "bhattacharyya": float(self.bhattacharyya),
            "iterations": int(self.iterations),
            "flags": list(self.flags),
            "seed_index": int(self.seed_index),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(
            center=np.asarray(d["center"], dtype=float),
            H=np.asarray(d["H"], dtype=float).reshape(3, 3),
            entropy_bits=float(d.get("entropy_bits", 0.0)),
            pdf_diff=float(d.get("pdf_diff", 0.0)),
            bhattacharyya=float(d.get("bhattacharyya", 0.0)),
            iterations=int(d.get("iterations", 0)),
            flags=tuple(d.get("flags", ())),
            seed_index=int(d.get("seed_index", -1)),
        )


def add_flag(flags: tuple[str, ...], flag: str) -> tuple[str, ...]:
    return flags if flag in flags else flags + (flag,)
