import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import constant_volume, square_image, symmetric_square
from salseek.detection import CONVERGED, DEGENERATE
from salseek.quadrant import QUADRANTS, QuadrantParams, quadrant_entropies, quadrant_seek, quadrant_step
from salseek.volume import IntensityWindow, Volume

IW = IntensityWindow(0, 64, 64)


def _entropy_table(v, p, params):
    """Brute force: entropy of every corner-anchored square at ``p``."""
    img = v.binned(IW)[:, :, 0]
    table = {}
    for name, (sx, sy) in QUADRANTS.items():
        for k in params.scale_range:
            xs = [p[0] + sx * i for i in range(k)]
            ys = [p[1] + sy * j for j in range(k)]
            vals = [img[x, y] for x in xs for y in ys if 0 <= x < img.shape[0] and 0 <= y < img.shape[1]]
            if len(vals) < 4:
                table[name, k] = 0.0
                continue
            _, counts = np.unique(vals, return_counts=True)
            q = counts / counts.sum()
            table[name, k] = float(-(q * np.log2(q)).sum())
    return table


class TestStep:
    def test_symmetric_center_cancels(self):
        v = symmetric_square(n=64, side=16)
        _, st_ = quadrant_step(v, (31.5, 31.5), QuadrantParams(), IW)
        assert np.linalg.norm(st_.displacement) < 0.5

    def test_left_offset_moves_right(self):
        v, gt = square_image(n=64, side=24, seed=2)
        c = gt.regions[0].center
        p = (int(c[0]) - 10, int(c[1]))
        params = QuadrantParams()
        table = _entropy_table(v, p, params)
        east = max(table["NE", k] + table["SE", k] for k in params.scale_range)
        west = max(table["NW", k] + table["SW", k] for k in params.scale_range)
        assert east > west
        _, st_ = quadrant_step(v, p, params, IW)
        assert st_.displacement[0] > 0

    def test_entropies_match_brute_force(self):
        v, _ = square_image(n=48, side=16, seed=3)
        params = QuadrantParams(scale_range=(2, 5, 9))
        p = (10, 30)
        ent, k_opt = quadrant_entropies(v.binned(IW)[:, :, 0], p, params, IW.bins)
        table = _entropy_table(v, p, params)
        for name in QUADRANTS:
            best = max(table[name, k] for k in params.scale_range)
            assert ent[name] == pytest.approx(best, abs=1e-12)
            ks = [k for k in params.scale_range if table[name, k] == best]
            assert k_opt[name] == min(ks)

    def test_constant_image_degenerate(self):
        v = constant_volume((32, 32, 1))
        pos, st_ = quadrant_step(v, (10, 12), QuadrantParams(), IW)
        assert st_.degenerate and all(e == 0 for e in st_.entropy.values())
        assert pos.tolist() == [10.0, 12.0]

    def test_rejects_volume_and_outside(self):
        with pytest.raises(ValueError):
            quadrant_step(constant_volume((8, 8, 8)), (2, 2), QuadrantParams(), IW)
        with pytest.raises(ValueError):
            quadrant_step(constant_volume((8, 8, 1)), (9, 2), QuadrantParams(), IW)

    @settings(max_examples=40, deadline=None)
    @given(x=st.integers(0, 63), y=st.integers(0, 63))
    def test_weights_and_displacement_bound(self, x, y):
        v, _ = square_image(n=64, side=20, seed=1)
        params = QuadrantParams()
        _, st_ = quadrant_step(v, (x, y), params, IW)
        if sum(st_.entropy.values()) > 0:
            assert sum(st_.weights.values()) == pytest.approx(1.0, abs=1e-9)
        assert np.linalg.norm(st_.displacement) <= math.sqrt(2) * max(params.scale_range) + 1e-12


class TestSeek:
    def test_grid_seeds_find_square(self):
        v, gt = square_image(n=128, side=24, origin=(70, 30), seed=4)
        seeds = [(x, y) for x in range(8, 128, 16) for y in range(8, 128, 16)]
        res = quadrant_seek(v, seeds, QuadrantParams(), IW)
        c = gt.regions[0].center[:2]
        assert min(np.linalg.norm(r.position - c) for r in res) <= 3

    def test_fixed_point(self):
        v = symmetric_square(n=64, side=16)
        (r,) = quadrant_seek(v, [(31.5, 31.5)], QuadrantParams(), IW)
        assert r.iterations <= 2 and CONVERGED in r.flags

    def test_constant_image_all_degenerate(self):
        res = quadrant_seek(constant_volume((40, 40, 1)), [(5, 5), (20, 30)], QuadrantParams(), IW)
        assert all(DEGENERATE in r.flags for r in res)

    def test_mirror_symmetry(self):
        v = symmetric_square(n=64, side=16)
        mirrored = Volume(v.data[::-1].copy())
        params = QuadrantParams()
        for seed in [(20, 30), (45, 18), (12, 50)]:
            (a,) = quadrant_seek(v, [seed], params, IW)
            (b,) = quadrant_seek(mirrored, [(63 - seed[0], seed[1])], params, IW)
            assert len(a.trajectory) == len(b.trajectory)
            for pa, pb in zip(a.trajectory, b.trajectory):
                assert pb[0] == pytest.approx(63 - pa[0], abs=1e-9)
                assert pb[1] == pytest.approx(pa[1], abs=1e-9)

    def test_end_entropy_not_below_start(self):
        v, _ = square_image(n=64, side=20, seed=6)
        params = QuadrantParams()
        seeds = [(x, y) for x in range(8, 64, 12) for y in range(8, 64, 12)]
        for seed, r in zip(seeds, quadrant_seek(v, seeds, params, IW)):
            if CONVERGED not in r.flags:
                continue
            _, s0 = quadrant_step(v, seed, params, IW)
            assert r.entropy >= max(s0.entropy.values()) - 0.25
