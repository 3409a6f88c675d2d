import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from helpers import ball_phantom, constant_volume
from salseek.entropy import (
    EPANECHNIKOV,
    EPS_FLOOR,
    GAUSSIAN,
    IDENTITY,
    BoxWindow,
    DegenerateWindowError,
    EllipsoidWindow,
    EvalCounter,
    KernelProfile,
    bhattacharyya,
    candidate_histogram,
    entropy,
    is_normalized,
    mixture_entropy,
    mixture_entropy_derivative,
    mixture_pmf,
    pdf_difference,
    sample_window,
    uniform_target,
    voxel_weights,
    weight_at,
)
from salseek.volume import IntensityWindow, PhantomSpec, Volume, make_phantom

pmfs = st.integers(2, 40).flatmap(
    lambda m: st.lists(st.floats(0, 1), min_size=m, max_size=m).filter(lambda xs: sum(xs) > 1e-3)
).map(lambda xs: np.asarray(xs) / np.sum(xs))


class TestEntropy:
    def test_delta(self):
        assert entropy([0, 1, 0, 0]) == 0.0

    def test_uniform_256(self):
        assert entropy(np.full(256, 1 / 256)) == pytest.approx(8.0, abs=1e-12)

    def test_hand_value(self):
        assert entropy([0.5, 0.25, 0.25, 0]) == pytest.approx(oracles.ENTROPY_HALF_QUARTERS, abs=1e-12)

    def test_requires_normalized(self):
        with pytest.raises(ValueError):
            entropy([0.5, 0.6])

    @given(pmfs)
    def test_matches_naive(self, p):
        assert entropy(p) == pytest.approx(oracles.entropy_bits(p), abs=1e-9)
        assert 0 <= entropy(p) <= math.log2(len(p)) + 1e-9


class TestMixture:
    def test_endpoints(self):
        assert mixture_entropy(0.0, 16) == 0.0
        assert mixture_entropy(1.0, 256) == pytest.approx(math.log(256), abs=1e-12)

    def test_half_sixteen(self):
        assert mixture_entropy(0.5, 16) == pytest.approx(oracles.MIXTURE_ENTROPY_HALF_16, abs=1e-12)
        in_bits = entropy(mixture_pmf(0.5, 16))
        assert in_bits * math.log(2) == pytest.approx(oracles.MIXTURE_ENTROPY_HALF_16, abs=1e-12)

    def test_derivative_examples(self):
        for m in (2, 16, 256):
            assert mixture_entropy_derivative(1.0, m) == 0.0
        assert mixture_entropy_derivative(0.1, 4) > 0
        assert mixture_entropy_derivative(0.5, 16) == pytest.approx(oracles.MIXTURE_DERIVATIVE_HALF_16, rel=1e-12)
        fd = oracles.central_difference(lambda a: mixture_entropy(a, 256), 0.5)
        assert mixture_entropy_derivative(0.5, 256) == pytest.approx(fd, rel=1e-6)
        assert fd == pytest.approx(oracles.MIXTURE_DERIVATIVE_HALF_256, rel=1e-6)

    def test_subnormal_alpha(self):
        tiny = 5e-324
        assert mixture_entropy(tiny, 2) == pytest.approx(0.0, abs=1e-300)
        assert math.isfinite(mixture_entropy_derivative(tiny, 2))

    def test_derivative_domain(self):
        with pytest.raises(ValueError):
            mixture_entropy_derivative(0.0, 8)
        with pytest.raises(ValueError):
            mixture_entropy(1.5, 8)

    @given(st.floats(0.0, 1.0), st.integers(2, 4096))
    def test_closed_form_matches_pmf(self, alpha, m):
        assert mixture_entropy(alpha, m) == pytest.approx(oracles.mixture_entropy_nats(alpha, m), abs=1e-9)

    @given(st.floats(0.001, 0.998), st.floats(1e-4, 1e-3), st.integers(2, 1024))
    def test_strictly_increasing(self, a, da, m):
        assume(a + da < 1.0)
        assert mixture_entropy(a + da, m) > mixture_entropy(a, m)

    @given(st.floats(0.05, 0.95), st.sampled_from([2, 3, 4, 16, 64, 256, 1000]))
    def test_derivative_vs_finite_difference(self, a, m):
        fd = oracles.central_difference(lambda x: mixture_entropy(x, m), a, 1e-6)
        assert mixture_entropy_derivative(a, m) == pytest.approx(fd, rel=1e-5)


class TestKernels:
    @pytest.mark.parametrize("k", [IDENTITY, EPANECHNIKOV, GAUSSIAN])
    def test_shift_weight_is_negated_derivative_magnitude(self, k):
        d = np.linspace(0, 0.95, 11)  # open support; the profile is cut at d = 1
        h = 1e-6
        fd = (k.profile(d + h) - k.profile(d - h)) / (2 * h)
        assert np.allclose(k.derivative(d), fd, atol=1e-6)
        assert np.allclose(k.shift_weight(d), np.abs(fd), atol=1e-6)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            KernelProfile("triangle")


class TestWindow:
    def test_rejects_non_spd(self):
        with pytest.raises(ValueError):
            EllipsoidWindow((0, 0, 0), np.diag([1.0, -1.0, 1.0]))
        with pytest.raises(ValueError):
            EllipsoidWindow((0, 0, 0), np.array([[1, 0.5, 0], [0, 1, 0], [0, 0, 1.0]]))

    def test_box_bandwidth(self):
        w = EllipsoidWindow.box((1, 2, 3), (2, 3, 4))
        assert np.array_equal(w.H, np.diag([4.0, 9.0, 16.0]))
        assert w.scale == pytest.approx((2 * 3 * 4) ** (1 / 3))

    def test_2d_center_promoted(self):
        assert EllipsoidWindow.ball((3, 4), 2).center.tolist() == [3.0, 4.0, 0.0]


class TestBoxWindow:
    def test_support_is_exact_cuboid(self):
        v = constant_volume((40, 40, 40))
        w = BoxWindow((19.5, 19.5, 19.5), 7.5)
        s = sample_window(v, w, IntensityWindow(0, 64, 8))
        assert len(s) == 16**3
        assert s.coords.min(axis=0).tolist() == [12, 12, 12]
        assert np.array_equal(w.mask(v.dims).sum(), 16**3)

    def test_gauge_distance(self):
        v = constant_volume((20, 20, 20))
        s = sample_window(v, BoxWindow((10, 10, 10), (4, 2, 2)), IntensityWindow(0, 64, 8))
        corner = np.all(s.offsets == [4, 2, 2], axis=1)
        assert s.d[corner][0] == pytest.approx(1.0)
        assert s.d.max() <= 1.0 + 1e-12

    def test_rejects_bad_extent(self):
        with pytest.raises(ValueError):
            BoxWindow((0, 0, 0), (1, 0, 1))


class TestCandidateHistogram:
    def test_constant_volume_is_delta(self):
        v = constant_volume(value=20)
        h = candidate_histogram(v, EllipsoidWindow.ball((5, 5, 5), 4), IntensityWindow(0, 64, 16))
        assert np.count_nonzero(h) == 1 and h.sum() == pytest.approx(1.0)

    def test_uniform_region_near_log_m(self):
        spec = PhantomSpec.from_dict({
            "dims": [40, 40, 40], "rng_seed": 4,
            "regions": [{"shape": "box", "origin": [4, 4, 4], "size": [32, 32, 32],
                         "fill": {"kind": "uniform", "low": 0, "high": 16}}],
        })
        v, _ = make_phantom(spec)
        iw = IntensityWindow(0, 16, 16)
        h = candidate_histogram(v, EllipsoidWindow.box((20, 20, 20), 8), iw, IDENTITY)
        assert entropy(h) == pytest.approx(4.0, abs=0.3)

    def test_half_outside_still_normalized(self, iw64):
        v, _ = ball_phantom(n=32, radius=6)
        counter = EvalCounter()
        win = EllipsoidWindow.ball((0, 16, 16), 8)
        h = candidate_histogram(v, win, iw64, EPANECHNIKOV, counter)
        assert is_normalized(h)
        s = sample_window(v, win, iw64)
        assert counter.voxels == len(s) and 0.4 < s.support_fraction < 0.6

    @given(
        center=st.tuples(*[st.floats(-6, 30)] * 3),
        radii=st.tuples(*[st.floats(1.0, 9.0)] * 3),
        kernel=st.sampled_from([IDENTITY, EPANECHNIKOV, GAUSSIAN]),
    )
    def test_normalized_anywhere(self, center, radii, kernel):
        v, _ = ball_phantom(n=24, radius=5)
        win = EllipsoidWindow.box(center, radii)
        try:
            h = candidate_histogram(v, win, IntensityWindow(0, 64, 32), kernel)
        except DegenerateWindowError:
            return
        assert is_normalized(h)


class TestBhattacharyya:
    def test_examples(self):
        p = np.array([0.2, 0.3, 0.5])
        assert bhattacharyya(p, p) == pytest.approx(1.0)
        assert bhattacharyya([1, 0, 0], [0, 0.5, 0.5]) == 0.0
        assert bhattacharyya([0.5, 0.5, 0, 0], uniform_target(4)) == pytest.approx(
            oracles.BHAT_HALF_VS_UNIFORM, abs=1e-12
        )

    def test_delta_vs_uniform_anchor(self):
        for m in (2, 16, 64):
            d = np.zeros(m)
            d[3 % m] = 1
            assert bhattacharyya(d, uniform_target(m)) == pytest.approx(math.sqrt(1 / m), abs=1e-15)

    @given(pmfs, st.randoms(use_true_random=False))
    def test_bounds_and_symmetry(self, p, rnd):
        q = np.array([rnd.random() for _ in p]) + 1e-3
        q /= q.sum()
        assert bhattacharyya(p, q) == bhattacharyya(q, p)
        assert bhattacharyya(p, q) <= 1.0
        if not np.allclose(p, q):
            assert bhattacharyya(p, q) < 1.0


class TestWeights:
    def test_examples(self):
        m = 8
        v = Volume(np.arange(8.0).reshape(2, 2, 2))
        iw = IntensityWindow(0, 8, m)
        q = uniform_target(m)
        assert weight_at(v, (1, 0, 0), q, q, iw) == pytest.approx(1.0)
        q2 = np.full(m, 0.5 / 7)
        q2[4] = 0.5
        p2 = np.full(m, 0.875 / 7)
        p2[4] = 0.125
        assert weight_at(v, (1, 0, 0), p2, q2, iw) == pytest.approx(oracles.WEIGHT_HALF_EIGHTH)

    def test_empty_candidate_bin_uses_floor(self):
        p = np.array([1.0, 0.0])
        q = np.array([0.5, 0.5])
        w = voxel_weights(np.array([1]), p, q)
        assert np.isfinite(w[0]) and w[0] == pytest.approx(math.sqrt(0.5 / EPS_FLOOR))


class TestPdfDifference:
    def test_constant_volume(self):
        v = constant_volume()
        for s in (2.0, 4.0, 7.0):
            assert pdf_difference(v, (12, 12, 12), IntensityWindow(0, 64, 16), s) == 0.0

    def test_ball_boundary_beats_interior(self):
        v, gt = ball_phantom(n=48, radius=10, seed=1)
        iw = IntensityWindow(0, 64, 16)
        c = gt.regions[0].center
        for k in (IDENTITY, EPANECHNIKOV):
            assert pdf_difference(v, c, iw, 10, k) > pdf_difference(v, c, iw, 5, k)

    def test_homogeneous_region_rate_vanishes(self):
        spec = PhantomSpec.from_dict({
            "dims": [64, 64, 64], "rng_seed": 1,
            "regions": [{"shape": "box", "origin": [2, 2, 2], "size": [60, 60, 60],
                         "fill": {"kind": "uniform", "low": 0, "high": 16}}],
        })
        v, _ = make_phantom(spec)
        iw = IntensityWindow(0, 16, 16)
        scales = [3, 5, 8, 12, 18, 24]
        raw_l1 = [pdf_difference(v, (32, 32, 32), iw, s, IDENTITY) * 2 / s**2 for s in scales]
        assert all(b < a for a, b in zip(raw_l1, raw_l1[1:]))
        assert raw_l1[-1] < 0.02
        ball, gt = ball_phantom(n=48, radius=10, seed=1)
        edge = pdf_difference(ball, gt.regions[0].center, iw, 10, IDENTITY)
        inner = [pdf_difference(v, (32, 32, 32), iw, s, IDENTITY) for s in scales]
        assert max(inner) < edge / 5

    def test_scale_below_step(self):
        with pytest.raises(DegenerateWindowError):
            pdf_difference(constant_volume(), (5, 5, 5), IntensityWindow(0, 8, 8), 1.0)
