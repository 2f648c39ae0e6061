import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tokendance import autodiff as ad
from tokendance import fsq
from tokendance.autodiff import Parameter, Tape, Tensor
from tokendance.fsq import FSQLevels, TokenStream

LEVELS = FSQLevels()


class TestLevels:
    def test_default_codebook(self):
        assert LEVELS.levels == (8, 5, 5, 5) and LEVELS.d == 4 and LEVELS.k == 1000

    @pytest.mark.parametrize("bad", [(), (1, 5), (8, 0)])
    def test_rejects_degenerate_levels(self, bad):
        with pytest.raises(ValueError):
            FSQLevels(bad)


class TestBound:
    def test_range_stays_inside_digits(self):
        z = Tensor(np.linspace(-50, 50, 4001)[:, None].repeat(4, 1))
        f = fsq.bound(z).data
        assert np.all(f > -0.5) and np.all(f < LEVELS._arr - 0.5)

    def test_zero_latent_maps_near_center(self):
        digits = fsq.quantize_st(Tensor(np.zeros((1, 4))))[1]
        np.testing.assert_array_equal(digits[0], [4, 2, 2, 2])

    def test_extreme_levels_reachable(self):
        lo = fsq.quantize_st(Tensor(np.full((1, 4), -20.0)))[1][0]
        hi = fsq.quantize_st(Tensor(np.full((1, 4), 20.0)))[1][0]
        np.testing.assert_array_equal(lo, [0, 0, 0, 0])
        np.testing.assert_array_equal(hi, LEVELS._arr - 1)

    def test_wrong_width_raises(self):
        with pytest.raises(ValueError):
            fsq.bound(Tensor(np.zeros((2, 3))))

    def test_non_finite_latent_raises(self):
        with pytest.raises(ValueError):
            fsq.bound(Tensor(np.array([[0.0, np.nan, 0.0, 0.0]])))

    def test_straight_through_gradient_is_bound_derivative(self):
        with ad.precision(np.float64):
            z = Parameter(np.array([[0.3, -0.7, 1.1, 0.0]]), name="z")
            tape = Tape()
            with tape:
                loss = ad.tsum(fsq.quantize_st(z)[0])
            g = ad.backward(tape, loss)["z"]
            half, _, shift, _ = LEVELS.bound_constants(np.float64)
        np.testing.assert_allclose(g[0], half * (1 - np.tanh(z.data[0] + shift) ** 2))


class TestPacking:
    def test_bijection_over_whole_codebook(self):
        idx = np.arange(LEVELS.k)
        digits = fsq.unpack(idx)
        np.testing.assert_array_equal(fsq.pack(digits), idx)
        assert len({tuple(d) for d in digits}) == LEVELS.k

    def test_first_channel_most_significant(self):
        assert fsq.pack([1, 0, 0, 0]) == 125 and fsq.pack([0, 0, 0, 1]) == 1

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(2, 9), min_size=1, max_size=5), st.integers(0, 10**6))
    def test_round_trip_any_levels(self, levels, seed):
        lv = FSQLevels(tuple(levels))
        idx = np.random.default_rng(seed).integers(0, lv.k, 50)
        np.testing.assert_array_equal(fsq.pack(fsq.unpack(idx, lv), lv), idx)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            fsq.unpack([1000])
        with pytest.raises(ValueError):
            fsq.pack([8, 0, 0, 0])


class TestGrid:
    def test_dequantize_requantize_idempotent(self):
        digits = fsq.unpack(np.arange(LEVELS.k))
        np.testing.assert_array_equal(fsq.requantize(fsq.dequantize(digits)), digits)

    def test_grid_in_unit_range(self):
        g = fsq.dequantize(fsq.unpack(np.arange(LEVELS.k)))
        assert g.min() >= -1 and g.max() <= 1

    def test_latent_for_digits_hits_every_code(self):
        digits = fsq.unpack(np.arange(LEVELS.k))
        got = fsq.quantize_st(Tensor(fsq.latent_for_digits(digits)))[1]
        np.testing.assert_array_equal(got, digits)

    def test_to_grid_matches_dequantize(self):
        digits = fsq.unpack(np.arange(0, LEVELS.k, 7))
        grid = fsq.to_grid(Tensor(digits.astype(np.float32))).data
        np.testing.assert_allclose(grid, fsq.dequantize(digits), atol=1e-6)


class TestTokenFile:
    def test_round_trip(self, tmp_path):
        ts = TokenStream("music-semantic", np.array([0, 5, 999, 17]), pad_frames=3)
        fsq.write_tokens(tmp_path / "a.tdtk", ts)
        back = fsq.read_tokens(tmp_path / "a.tdtk")
        assert back.stream == "music-semantic" and back.pad_frames == 3 and back.levels == LEVELS
        np.testing.assert_array_equal(back.tokens, ts.tokens)

    def test_header_layout(self, tmp_path):
        fsq.write_tokens(tmp_path / "b.tdtk", TokenStream("dance-lower", np.arange(5)))
        raw = (tmp_path / "b.tdtk").read_bytes()
        assert raw[:4] == b"TDTK" and raw[4] == 1 and list(raw[5:9]) == [8, 5, 5, 5]
        assert len(raw) == 16 + 2 * 5

    def test_bad_magic(self, tmp_path):
        (tmp_path / "c.tdtk").write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(ValueError, match="TDTK"):
            fsq.read_tokens(tmp_path / "c.tdtk")

    def test_invalid_stream_and_tokens(self):
        with pytest.raises(ValueError):
            TokenStream("drums", np.arange(3))
        with pytest.raises(ValueError):
            TokenStream("dance-upper", np.array([1000]))
