import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from tokendance import metrics as mt
from tokendance.metrics import MetricError, MetricReport
from tokendance.motion import MotionSequence

from helpers import random_poses


def _dance(rng, t=90, period=15):
    """Sinusoidal root motion whose velocity vanishes every half ``period``."""
    base = random_poses(rng, 1, 0.3)[0]
    phase = np.cos(2 * np.pi * np.arange(t) / period)
    frames = np.repeat(base[None], t, 0)
    frames[:, 0] += 0.2 * phase
    frames[:, 1] += 0.1 * phase
    return frames.astype(np.float32)


def _scipy_fid(a, b):
    ca, cb = np.atleast_2d(np.cov(a, rowvar=False)), np.atleast_2d(np.cov(b, rowvar=False))
    covmean = linalg.sqrtm(ca @ cb).real
    d = a.mean(0) - b.mean(0)
    return float(d @ d + np.trace(ca + cb - 2 * covmean))


class TestFID:
    def test_identical_sets_zero(self):
        x = np.random.default_rng(0).standard_normal((50, 6))
        assert mt.fid(x, x) == pytest.approx(0.0, abs=1e-8)

    def test_one_dimensional_closed_form(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(0, 1, 400), rng.normal(3, 2, 400)
        sa, sb = np.std(a, ddof=1), np.std(b, ddof=1)
        expect = (a.mean() - b.mean()) ** 2 + (sa - sb) ** 2
        assert mt.fid(a, b) == pytest.approx(expect, rel=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_matches_scipy_sqrtm(self, seed, d):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((60, d)) @ rng.standard_normal((d, d))
        b = rng.standard_normal((60, d)) * 2 + 1
        assert mt.fid(a, b) == pytest.approx(_scipy_fid(a, b), rel=1e-6, abs=1e-8)

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((40, 4)), rng.standard_normal((30, 4)) + 1
        assert mt.fid(a, b) == pytest.approx(mt.fid(b, a), rel=1e-8)

    def test_mean_shift_only(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((30, 3))
        assert mt.fid(a, a + [1.0, 2.0, 0.0]) == pytest.approx(5.0, rel=1e-8)

    def test_shrinkage_when_underdetermined(self):
        rng = np.random.default_rng(4)
        val, info = mt.fid(rng.standard_normal((5, 10)), rng.standard_normal((5, 10)), return_info=True)
        assert info["shrinkage"] and np.isfinite(val)

    def test_errors(self):
        with pytest.raises(MetricError):
            mt.fid(np.zeros((5, 2)), np.zeros((5, 3)))
        with pytest.raises(MetricError):
            mt.fid(np.zeros((1, 2)), np.zeros((5, 2)))
        with pytest.raises(MetricError, match="negative"):
            mt.frechet_distance(np.zeros(2), -np.eye(2), np.zeros(2), np.eye(2))


class TestDiversity:
    def test_known_triangle(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 4.0]])
        assert mt.diversity(x) == pytest.approx((5 + 4 + 3) / 3)

    def test_identical_zero(self):
        assert mt.diversity(np.ones((4, 3))) == 0.0

    def test_needs_two(self):
        with pytest.raises(MetricError):
            mt.diversity(np.ones((1, 3)))


class TestFeatures:
    def test_dimensions(self):
        m = _dance(np.random.default_rng(5))
        assert mt.kinetic_features(m).shape == (72,) and mt.geometric_features(m).shape == (32,)

    def test_static_motion_has_zero_kinetic(self):
        m = np.repeat(random_poses(np.random.default_rng(6), 1), 10, 0)
        np.testing.assert_allclose(mt.kinetic_features(m), 0.0, atol=1e-10)
        assert np.allclose(mt.geometric_features(m)[16:], 0.0, atol=1e-6)

    def test_uniform_translation_kinetic(self):
        m = np.repeat(random_poses(np.random.default_rng(7), 1), 10, 0)
        m[:, 0] += np.arange(10) * 0.1
        k = mt.kinetic_features(MotionSequence(30.0, m)).reshape(24, 3)
        np.testing.assert_allclose(k[:, 0], 9.0, rtol=1e-4)
        np.testing.assert_allclose(k[:, 1:], 0.0, atol=1e-6)

    def test_unknown_variant(self):
        with pytest.raises(MetricError):
            mt.motion_features(np.zeros((3, 147)), "spectral")

    def test_too_short(self):
        with pytest.raises(MetricError):
            mt.kinetic_features(np.zeros((1, 147)))


class TestBeats:
    def test_bas_identical_is_one(self):
        assert mt.bas([10, 25, 40], [10, 25, 40]) == 1.0

    def test_bas_offset(self):
        assert mt.bas([13], [10], sigma=3.0) == pytest.approx(np.exp(-0.5))

    def test_bas_no_motion_beats(self):
        assert mt.bas([], [5, 10]) == 0.0

    def test_bas_requires_music_beats(self):
        with pytest.raises(MetricError):
            mt.bas([1, 2], [])

    def test_motion_beats_at_velocity_zeros(self):
        m = _dance(np.random.default_rng(8), t=90, period=15)
        beats = mt.motion_beats(m, 30.0)
        # speed vanishes at the extremes of the cosine: every half period
        assert set(range(15, 76, 15)) <= set(beats.tolist())
        assert mt.bas(beats, np.arange(15, 76, 15)) == 1.0


class TestMAE:
    def test_zero_and_split(self):
        g = np.random.default_rng(9).standard_normal((4, 35))
        assert mt.mae_report(g, g) == (0.0, 0.0, 0.0)
        r = g.copy()
        r[:, 20:] += 1.0
        s, a, f = mt.mae_report(r, g)
        assert s == 0.0 and a == pytest.approx(1.0) and f == pytest.approx(15 / 35)

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            mt.mae_report(np.zeros((3, 35)), np.zeros((4, 35)))


class TestReport:
    def test_round_trip(self, tmp_path):
        rep = MetricReport(FID_k=1.0, FID_g=2.0, DIV_k=3.0, DIV_g=4.0, BAS=0.5, MAE_S=0.1, MAE_A=0.2, MAE_F=0.3,
                           notes={"n": 2})
        rep.write(tmp_path / "r.json", tmp_path / "r.csv")
        assert MetricReport.from_json((tmp_path / "r.json").read_text()) == rep
        header, row = (tmp_path / "r.csv").read_text().splitlines()
        assert header.split(",") == list(MetricReport.FIELDS) and row.split(",")[4] == "0.500000"
        assert json.loads(rep.to_json())["notes"] == {"n": 2}

    def test_evaluate_fixed_points(self):
        rng = np.random.default_rng(10)
        motions = [_dance(rng, period=p) for p in (12, 15, 18, 20)]
        beats = [np.arange(p, 80, p) for p in (12, 15, 18, 20)]
        rep = mt.evaluate_motions(motions, motions, beats)
        assert rep.FID_k == pytest.approx(0.0, abs=1e-6) and rep.FID_g == pytest.approx(0.0, abs=1e-6)
        assert rep.BAS == 1.0 and rep.DIV_k > 0
