"""Run configuration shared by the CLI subcommands."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any

from .abmsod import AbmsodParams
from .entropy import KernelProfile
from .pipeline import SeedPlan
from .quadrant import QuadrantParams
from .shift import ShiftParams
from .volume import IntensityWindow, Volume

METHODS = ("quadrant", "shift", "abmsod")

# method-parameter keys accepted in the "params" block, with their coercions
_PARAM_KEYS = {
    "quadrant": {"scale_range": lambda v: tuple(int(t) for t in v), "eta": float, "max_iters": int},
    "shift": {
        "step_kernel": KernelProfile, "histogram_kernel": KernelProfile,
        "max_iters": int, "min_step": float,
    },
    "abmsod": {
        "step_kernel": KernelProfile, "histogram_kernel": KernelProfile,
        "threshold": float, "max_iterations": int, "stall_iterations": int,
        "lambda_min": float, "lambda_max": float,
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    method: str = "shift"
    volume: str | None = None
    window: tuple[float, float] | None = None
    bins: int = 64
    seeds: str = "lattice:16"
    scales: tuple[float, ...] = (8.0,)
    params: dict = field(default_factory=dict)
    k: int = 20
    dedupe_radius: float = 5.0
    entropy_quantile: float = 0.9
    min_pdf_diff: float = 0.0
    workers: int = 1
    rng_seed: int = 0
    out: str | None = None
    template: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.normalize()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def normalize(self) -> None:
        """Coerce types and validate; raises :class:`ConfigError`."""
        try:
            if self.method not in METHODS:
                raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
            if self.window is not None:
                lo, hi = (float(t) for t in self.window)
                self.window = (lo, hi)
                IntensityWindow(lo, hi, 2)
            self.bins = int(self.bins)
            if self.bins < 2:
                raise ConfigError("bins must be >= 2")
            self.scales = tuple(float(s) for s in self.scales)
            self.k = int(self.k)
            self.workers = int(self.workers)
            self.rng_seed = int(self.rng_seed)
            self.dedupe_radius = float(self.dedupe_radius)
            self.entropy_quantile = float(self.entropy_quantile)
            self.min_pdf_diff = float(self.min_pdf_diff)
            if self.k < 1 or self.workers < 1 or not 0 <= self.entropy_quantile < 1:
                raise ConfigError("need k >= 1, workers >= 1 and 0 <= entropy_quantile < 1")
            allowed = _PARAM_KEYS[self.method]
            bad = set(self.params) - set(allowed)
            if bad:
                raise ConfigError(f"unknown {self.method} params: {sorted(bad)}")
            self.seed_plan()
            self.method_params()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def seed_plan(self) -> SeedPlan:
        return SeedPlan.parse(self.seeds, self.scales, self.rng_seed)

    def method_params(self):
        kw: dict[str, Any] = {k: _PARAM_KEYS[self.method][k](v) for k, v in self.params.items()}
        if self.method == "quadrant":
            return QuadrantParams(**kw)
        if self.method == "shift":
            return ShiftParams.isotropic(self.scales[0], **kw)
        return AbmsodParams(**kw)

    def intensity_window(self, v: Volume) -> IntensityWindow:
        if self.window is not None:
            return IntensityWindow(self.window[0], self.window[1], self.bins)
        lo, hi = v.intensity_range
        return IntensityWindow(lo, hi if hi > lo else lo + 1.0, self.bins)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["window"] = list(self.window) if self.window is not None else None
        d["scales"] = list(self.scales)
        return d
