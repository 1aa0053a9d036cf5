"""Video buffer, metrics, generator, and raw I/O tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reuse_inr.errors import (
    ConfigurationError,
    DimensionError,
    EvaluationError,
    FormatError,
)
from reuse_inr.video import (
    MOVING_GRADIENT_SHIFT,
    PiecewiseFallbackWarning,
    RDPoint,
    VideoBuffer,
    bd_rate,
    bpp,
    curve_from_rows,
    load_raw,
    psnr,
    read_rd_csv,
    save_raw,
    synth_video,
    write_rd_csv,
)


def fbuf(arr) -> VideoBuffer:
    return VideoBuffer(np.asarray(arr, dtype=np.float32))


class TestPsnr:
    def test_identical_inputs_capped(self):
        v = synth_video("constant", 2, 4, 4, seed=1)
        assert psnr(v, v) == 100.0

    def test_uniform_error_of_point_one(self):
        # fp32 rounding of 0.6 - 0.5 keeps this within ~2e-6 of exactly 20 dB
        a = fbuf(np.full((1, 4, 4, 3), 0.5))
        b = fbuf(np.full((1, 4, 4, 3), 0.6))
        assert abs(psnr(a, b) - 20.0) < 1e-5

    def test_checkerboard_vs_inverse_is_zero_db(self):
        board = np.indices((4, 4)).sum(axis=0) % 2
        a = np.repeat(board[None, :, :, None], 3, axis=3).astype(np.float32)
        assert psnr(fbuf(a), fbuf(1.0 - a)) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a = fbuf(rng.uniform(0, 1, (2, 5, 5, 3)))
        b = fbuf(rng.uniform(0, 1, (2, 5, 5, 3)))
        assert psnr(a, b) == psnr(b, a)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(fbuf(np.zeros((1, 2, 2, 3))), fbuf(np.zeros((1, 4, 4, 3))))

    def test_representation_mismatch(self):
        a = fbuf(np.zeros((1, 2, 2, 3)))
        with pytest.raises(DimensionError):
            psnr(a, a.to_rgb8())


class TestBpp:
    def test_zero_bytes(self):
        assert bpp(0, 4, 8, 8) == 0.0

    def test_full_hd_example(self):
        assert bpp(1_036_800, 1, 1920, 1080) == 4.0

    def test_doubling_frames_halves_bpp(self):
        assert bpp(1000, 8, 16, 16) == bpp(1000, 4, 16, 16) / 2

    def test_invalid_dims(self):
        with pytest.raises(DimensionError):
            bpp(10, 0, 4, 4)


def _curve(rates, quals):
    return [RDPoint(r, q) for r, q in zip(rates, quals)]


class TestBdRate:
    RATES = [0.05, 0.1, 0.2, 0.4, 0.8]
    QUALS = [30.0, 32.0, 34.0, 36.0, 38.0]

    def test_identical_curves_exactly_zero(self):
        c = _curve(self.RATES, self.QUALS)
        assert bd_rate(c, c) == 0.0

    def test_rate_doubled_is_plus_100(self):
        anchor = _curve(self.RATES, self.QUALS)
        test = _curve([2 * r for r in self.RATES], self.QUALS)
        assert abs(bd_rate(anchor, test) - 100.0) < 0.5

    def test_sign_antisymmetry_of_scaled_curves(self):
        anchor = _curve(self.RATES, self.QUALS)
        test = _curve([2 * r for r in self.RATES], self.QUALS)
        assert bd_rate(anchor, test) > 0 > bd_rate(test, anchor)

    def test_better_quality_is_negative(self):
        anchor = _curve(self.RATES, self.QUALS)
        test = _curve(self.RATES, [q + 1.0 for q in self.QUALS])
        assert bd_rate(anchor, test) < 0

    def test_no_overlap_rejected(self):
        a = _curve(self.RATES, [10, 11, 12, 13, 14])
        b = _curve(self.RATES, [20, 21, 22, 23, 24])
        with pytest.raises(EvaluationError, match="overlap"):
            bd_rate(a, b)

    def test_three_points_falls_back_with_warning(self):
        a = _curve([0.1, 0.2, 0.4], [30, 33, 36])
        with pytest.warns(PiecewiseFallbackWarning):
            value = bd_rate(a, a)
        assert value == 0.0

    def test_non_increasing_curve_rejected(self):
        with pytest.raises(EvaluationError, match="increasing"):
            bd_rate(_curve([0.2, 0.1, 0.4, 0.8], [30, 31, 32, 33]),
                    _curve(self.RATES, self.QUALS))

    def test_single_point_curve_rejected(self):
        with pytest.raises(EvaluationError):
            bd_rate(_curve([0.1], [30]), _curve(self.RATES, self.QUALS))


class TestSynth:
    def test_constant_all_frames_identical(self):
        v = synth_video("constant", 5, 8, 8, seed=3)
        for t in range(1, 5):
            np.testing.assert_array_equal(v.pixels[0], v.pixels[t])

    @pytest.mark.parametrize("kind", ["constant", "moving_gradient",
                                      "bouncing_ball", "noise_textured"])
    def test_deterministic_under_seed(self, kind):
        a = synth_video(kind, 4, 16, 16, seed=7)
        b = synth_video(kind, 4, 16, 16, seed=7)
        np.testing.assert_array_equal(a.pixels, b.pixels)
        c = synth_video(kind, 4, 16, 16, seed=8)
        assert not np.array_equal(a.pixels, c.pixels)

    def test_moving_gradient_is_shifted_frame0(self):
        v = synth_video("moving_gradient", 6, 16, 16, seed=5)
        dy, dx = MOVING_GRADIENT_SHIFT
        for t in range(6):
            want = np.roll(v.pixels[0], (t * dy, t * dx), axis=(0, 1))
            np.testing.assert_array_equal(v.pixels[t], want)

    def test_values_in_unit_interval(self):
        for kind in ("moving_gradient", "bouncing_ball", "noise_textured"):
            v = synth_video(kind, 3, 16, 16, seed=11)
            assert v.pixels.min() >= 0.0 and v.pixels.max() <= 1.0

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            synth_video("lava_lamp", 2, 4, 4, seed=0)


class TestRawIO:
    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(13)
        v = VideoBuffer(rng.integers(0, 256, (3, 6, 4, 3), dtype=np.uint8))
        p = tmp_path / "clip.rgb"
        save_raw(v, p)
        again = load_raw(p)
        np.testing.assert_array_equal(again.pixels, v.pixels)

    def test_truncated_file_rejected(self, tmp_path):
        v = VideoBuffer(np.zeros((2, 4, 4, 3), dtype=np.uint8))
        p = tmp_path / "clip.rgb"
        save_raw(v, p)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(FormatError, match="bytes"):
            load_raw(p)

    def test_hand_written_fixture(self, tmp_path):
        # one 2x2 frame, planar: R plane 0,1,2,3; G plane 10..13; B plane 20..23
        p = tmp_path / "tiny.rgb"
        p.write_bytes(bytes([0, 1, 2, 3, 10, 11, 12, 13, 20, 21, 22, 23]))
        (tmp_path / "tiny.rgb.txt").write_text(
            "config_version: 1\nwidth: 2\nheight: 2\nframes: 1\nformat: rgb8p\n"
        )
        v = load_raw(p)
        np.testing.assert_array_equal(v.pixels[0, 0, 0], [0, 10, 20])
        np.testing.assert_array_equal(v.pixels[0, 0, 1], [1, 11, 21])
        np.testing.assert_array_equal(v.pixels[0, 1, 0], [2, 12, 22])
        np.testing.assert_array_equal(v.pixels[0, 1, 1], [3, 13, 23])

    def test_missing_sidecar(self, tmp_path):
        p = tmp_path / "clip.rgb"
        p.write_bytes(b"\x00" * 12)
        with pytest.raises(FormatError, match="sidecar"):
            load_raw(p)

    @given(t=st.integers(1, 3), h=st.integers(1, 6), w=st.integers(1, 6),
           seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_property(self, tmp_path_factory, t, h, w, seed):
        rng = np.random.default_rng(seed)
        v = VideoBuffer(rng.integers(0, 256, (t, h, w, 3), dtype=np.uint8))
        p = tmp_path_factory.mktemp("raw") / "x.rgb"
        save_raw(v, p)
        np.testing.assert_array_equal(load_raw(p).pixels, v.pixels)


class TestRdCsv:
    def test_round_trip(self, tmp_path):
        rows = [("a", 0.1, 30.0), ("a", 0.2, 33.5)]
        p = tmp_path / "rd.csv"
        write_rd_csv(p, rows)
        assert read_rd_csv(p) == rows
        curve = curve_from_rows(rows)
        assert curve == [RDPoint(0.1, 30.0), RDPoint(0.2, 33.5)]

    def test_bad_header(self, tmp_path):
        p = tmp_path / "rd.csv"
        p.write_text("x,y\n1,2\n")
        with pytest.raises(FormatError):
            read_rd_csv(p)
