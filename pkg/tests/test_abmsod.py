import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from helpers import constant_volume
from salseek.abmsod import MOMENT_SCALE, AbmsodParams, abmsod_run, bandwidth_update, clamp_eigenvalues, raw_moment
from salseek.entropy import IDENTITY, EllipsoidWindow, candidate_histogram, sample_window, support_coords
from salseek.shift import ShiftParams, saliency_shift
from salseek.volume import IntensityWindow, PhantomSpec, Volume, make_phantom

IW = IntensityWindow(0, 64, 64)
NOISE = {"kind": "uniform", "low": 0, "high": 64}


def ellipsoid_phantom(radii=(14, 7, 7), angle=0.0, n=48, seed=0):
    return make_phantom(PhantomSpec.from_dict({
        "dims": [n, n, n], "rng_seed": seed,
        "regions": [{"shape": "ellipsoid", "center": [n / 2] * 3, "radii": list(radii),
                     "rotation_z_deg": angle, "fill": NOISE}],
    }))


def major_axis(H):
    return np.linalg.eigh(H)[1][:, -1]


def angle_deg(a, b):
    return math.degrees(math.acos(min(1.0, abs(float(a @ b)))))


class TestBandwidth:
    def test_two_voxel_moment(self):
        x = np.array([10.0, 10.0, 10.0])
        d = 3.0
        coords = np.array([x + [d, 0, 0], x - [d, 0, 0]])
        m = raw_moment(x, coords, np.ones(2))
        assert np.allclose(m, np.diag([d * d, 0, 0]), atol=1e-12)
        v = constant_volume((20, 20, 20))
        params = AbmsodParams(lambda_min=4.0)
        H = bandwidth_update(v, x, EllipsoidWindow.ball(x, 4), np.ones(2), params, coords=coords)
        assert np.allclose(H, np.diag([MOMENT_SCALE * d * d, 4.0, 4.0]), atol=1e-9)

    def test_box_axes_aligned(self):
        v = constant_volume((40, 40, 40))
        x = np.array([20.0, 20.0, 20.0])
        win = EllipsoidWindow.box(x, (12, 6, 3))
        coords = support_coords(v, win)
        H = bandwidth_update(v, x, win, np.ones(len(coords)))
        vecs = np.linalg.eigh(H)[1]
        for col, axis in zip(vecs.T, (2, 1, 0)):
            assert angle_deg(col, np.eye(3)[axis]) < 5

    def test_rank_one_clamped_to_spd(self):
        x = np.zeros(3)
        r = np.array([2.0, 1.0, -1.0])
        raw = raw_moment(x, r[None, :], np.array([1.0]))
        assert np.allclose(raw, np.outer(r, r)) and np.linalg.matrix_rank(raw) == 1
        H = clamp_eigenvalues(raw, 1.0, 100.0)
        assert np.all(np.linalg.eigvalsh(H) >= 1.0 - 1e-12)

    def test_ball_moment_scale(self):
        # the scaled second moment of a solid ball recovers its squared radius
        v = constant_volume((60, 60, 60))
        x = np.array([30.0, 30.0, 30.0])
        win = EllipsoidWindow.ball(x, 20)
        coords = support_coords(v, win)
        H = bandwidth_update(v, x, win, np.ones(len(coords)))
        assert np.allclose(np.diag(H), 400, rtol=0.05)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=9, max_size=9), st.floats(0.5, 5), st.floats(5, 200))
    def test_clamp_bounds(self, entries, lo, hi):
        a = np.array(entries).reshape(3, 3)
        vals = np.linalg.eigvalsh(clamp_eigenvalues(a @ a.T, lo, hi))
        assert vals.min() >= lo * (1 - 1e-9) and vals.max() <= hi * (1 + 1e-9)


class TestRun:
    def test_axis_aligned_fixed_point(self):
        v, gt = ellipsoid_phantom(radii=(14, 7, 7), angle=0.0)
        g = gt.regions[0]
        d = abmsod_run(v, EllipsoidWindow(g.center, g.H), AbmsodParams(), IW)
        assert np.linalg.norm(d.center - g.center) <= 1
        got = np.sqrt(np.sort(np.linalg.eigvalsh(d.H)))
        assert got == pytest.approx([7, 7, 14], rel=0.10)

    def test_oblique_axis_recovered(self):
        v, gt = ellipsoid_phantom(radii=(16, 7, 7), angle=45.0, n=56, seed=2)
        g = gt.regions[0]
        d = abmsod_run(v, EllipsoidWindow.ball(g.center + [3, -2, 2], 10), AbmsodParams(), IW)
        assert angle_deg(major_axis(d.H), major_axis(g.H)) <= 15

    def test_constant_volume_anchor(self):
        d = abmsod_run(constant_volume((24, 24, 24)), EllipsoidWindow.ball((12, 12, 12), 5), AbmsodParams(), IW)
        assert d.bhattacharyya == pytest.approx(math.sqrt(1 / 64), abs=1e-12)
        assert d.entropy_bits == 0.0

    def test_trace_invariants(self):
        v, gt = ellipsoid_phantom(radii=(14, 6, 6), angle=30.0, seed=1)
        params = AbmsodParams(record_trace=True)
        d = abmsod_run(v, EllipsoidWindow.ball(gt.regions[0].center + 4, 9), params, IW)
        lo, hi = params.bounds(v)
        best = [t["max_bhatcf"] for t in d.trace]
        assert all(b >= a for a, b in zip(best, best[1:]))
        assert best[-1] == d.bhattacharyya
        i = int(np.argmax([t["bhatcf"] for t in d.trace]))
        assert np.array_equal(d.trace[i]["center"], d.center)
        assert np.array_equal(d.trace[i]["H"], d.H)
        for t in d.trace:
            vals = np.linalg.eigvalsh(t["H"])
            assert np.array_equal(t["H"], t["H"].T)
            assert vals.min() >= lo * (1 - 1e-12) and vals.max() <= hi * (1 + 1e-12)

    def test_self_target_first_step_is_centroid(self):
        v, gt = ellipsoid_phantom(radii=(12, 6, 6), angle=20.0, seed=4)
        seed = EllipsoidWindow.ball(gt.regions[0].center + [2.2, -1.4, 0.6], 8)
        p = candidate_histogram(v, seed, IW, AbmsodParams().histogram_kernel)
        d = abmsod_run(v, seed, AbmsodParams(target=p, record_trace=True, max_iterations=1), IW)
        s = sample_window(v, seed, IW)
        expect = oracles.weighted_centroid(s.coords, IDENTITY.shift_weight(s.d))
        assert d.trace[0]["center"] == pytest.approx(expect, abs=1e-9)

    def test_rotation_equivariance(self):
        v, gt = ellipsoid_phantom(radii=(13, 6, 6), angle=25.0, n=40, seed=3)
        n = v.dims[0]
        rot = Volume(np.rot90(v.data, k=1, axes=(0, 1)).copy())
        R = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
        shift = np.array([n - 1.0, 0, 0])
        c0 = np.array([21.0, 18.0, 20.0])
        a = abmsod_run(v, EllipsoidWindow.ball(c0, 8), AbmsodParams(), IW)
        b = abmsod_run(rot, EllipsoidWindow.ball(R @ c0 + shift, 8), AbmsodParams(), IW)
        assert b.iterations == a.iterations
        assert b.center == pytest.approx(R @ a.center + shift, abs=1e-6)
        assert np.allclose(b.H, R @ a.H @ R.T, atol=1e-6)

    def test_beats_cuboid_window_entropy(self):
        v, gt = ellipsoid_phantom(radii=(16, 6, 6), angle=45.0, n=56, seed=5)
        c = gt.regions[0].center
        ab = abmsod_run(v, EllipsoidWindow.ball(c + 2, 10), AbmsodParams(), IW)
        best_shift = max(
            saliency_shift(v, c + 2, ShiftParams(np.diag([r * r] * 3)), IW).entropy_bits
            for r in (6, 9, 12)
        )
        assert best_shift < ab.entropy_bits

    def test_out_of_bounds_seed_clamped(self):
        v, _ = ellipsoid_phantom()
        d = abmsod_run(v, EllipsoidWindow.ball((-5, 10, 10), 6), AbmsodParams(), IW)
        assert "boundary-clamped" in d.flags
        assert np.all(d.center >= 0)
