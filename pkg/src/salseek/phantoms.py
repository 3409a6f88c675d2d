"""Seeded phantom families used by the experiment scripts and acceptance tests."""

from __future__ import annotations

import numpy as np

from .volume import PhantomSpec

NOISE = {"kind": "uniform", "low": 0, "high": 64}


def squares_spec(seed: int, n: int = 96, side_range=(12, 25), max_regions: int = 3, gap: int = 3) -> PhantomSpec:
    """2D image with 1..max_regions non-touching U[0,64) squares."""
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, max_regions + 1))
    taken = np.zeros((n, n), bool)
    regions = []
    while len(regions) < count:
        side = int(rng.integers(*side_range))
        ox, oy = (int(t) for t in rng.integers(2, n - side - 2, size=2))
        lo_x, lo_y = max(ox - gap, 0), max(oy - gap, 0)
        if taken[lo_x : ox + side + gap, lo_y : oy + side + gap].any():
            continue
        taken[ox : ox + side, oy : oy + side] = True
        regions.append({"shape": "box", "origin": [ox, oy, 0], "size": [side, side, 1], "fill": NOISE})
    return PhantomSpec.from_dict({"dims": [n, n, 1], "regions": regions, "rng_seed": seed})


def oblique_ellipsoid_spec(seed: int, n: int = 64, radii=(18, 8, 8), angle_deg: float = 45.0, jitter: float = 3.0) -> PhantomSpec:
    """One U[0,64) ellipsoid rotated about z, center jittered around the middle."""
    rng = np.random.default_rng(seed)
    c = (n / 2.0) + rng.uniform(-jitter, jitter, size=3)
    region = {
        "shape": "ellipsoid", "center": c.tolist(), "radii": list(radii),
        "rotation_z_deg": angle_deg, "fill": NOISE,
    }
    return PhantomSpec.from_dict({"dims": [n, n, n], "regions": [region], "rng_seed": seed})


def box_spec(n: int = 64, side: int = 16, seed: int = 3) -> PhantomSpec:
    """A single centered U[0,64) cube."""
    o = (n - side) // 2
    region = {"shape": "box", "origin": [o, o, o], "size": [side] * 3, "fill": NOISE}
    return PhantomSpec.from_dict({"dims": [n, n, n], "regions": [region], "rng_seed": seed})


def bench_spec(n: int = 128, seed: int = 11) -> PhantomSpec:
    """A few balls and boxes scattered through an n^3 volume."""
    q = n // 4
    regions = [
        {"shape": "ball", "center": [q, q, q], "radius": n / 12, "fill": NOISE},
        {"shape": "ball", "center": [3 * q, q, 2 * q], "radius": n / 10, "fill": NOISE},
        {"shape": "box", "origin": [q, 5 * n // 8, 5 * n // 8], "size": [n // 6] * 3, "fill": NOISE},
        {"shape": "ellipsoid", "center": [3 * q, 3 * q, q], "radii": [n / 7, n / 14, n / 14],
         "rotation_z_deg": 30.0, "fill": NOISE},
    ]
    return PhantomSpec.from_dict({"dims": [n, n, n], "regions": regions, "rng_seed": seed})
