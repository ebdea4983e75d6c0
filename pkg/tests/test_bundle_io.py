import struct

import numpy as np
import pytest
from helpers import random_bundle, random_grid

from cuetrack.bundle_io import (
    FeatureBundle,
    ScaleLayout,
    TokenGrid,
    read_boxes,
    read_bundle,
    read_token_grid,
    slice_scale,
    write_boxes,
    write_bundle,
    write_token_grid,
)
from cuetrack.errors import (
    BadMagicError,
    FormatError,
    LayoutError,
    NonFiniteValueError,
    ShapeError,
    TruncatedPayloadError,
    VersionError,
)

FOUR_SCALES = ((32, 32), (16, 16), (8, 8), (4, 4))


class TestScaleLayout:
    def test_cumulative_spans(self):
        layout = ScaleLayout(FOUR_SCALES)
        assert layout.starts == (0, 1024, 1280, 1344)
        assert layout.ends == (1024, 1280, 1344, 1360)
        assert layout.total_tokens == 1360
        # independent cumulative-sum oracle
        acc = 0
        for k, (w, h) in enumerate(FOUR_SCALES, start=1):
            assert layout.span(k) == (acc, acc + w * h)
            acc += w * h

    def test_needs_one_scale(self):
        with pytest.raises(LayoutError):
            ScaleLayout(())

    def test_rejects_zero_dims(self):
        with pytest.raises(LayoutError):
            ScaleLayout(((4, 0),))


class TestBundleRoundTrip:
    def test_field_for_field(self, tmp_path):
        rng = np.random.default_rng(0)
        b = random_bundle(rng, valid_text=2)
        # writer stores 32-bit payloads; round-trip the f32-quantized bundle
        b32 = FeatureBundle(
            b.text_tokens.astype(np.float32).astype(np.float64),
            b.valid_text,
            b.layout,
            b.image_tokens.astype(np.float32).astype(np.float64),
        )
        path = tmp_path / "x.ctfb"
        write_bundle(b32, path)
        got = read_bundle(path)
        assert got.valid_text == b32.valid_text
        assert got.layout == b32.layout
        np.testing.assert_array_equal(got.text_tokens, b32.text_tokens)
        np.testing.assert_array_equal(got.image_tokens, b32.image_tokens)

    def test_write_read_write_byte_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        b = random_bundle(rng)
        p1, p2 = tmp_path / "a.ctfb", tmp_path / "b.ctfb"
        write_bundle(b, p1)
        write_bundle(read_bundle(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_extra_tokens_is_layout_error(self, tmp_path):
        rng = np.random.default_rng(2)
        b = random_bundle(rng)
        path = tmp_path / "x.ctfb"
        write_bundle(b, path)
        data = path.read_bytes() + struct.pack("<6f", *range(6))
        path.write_bytes(data)
        with pytest.raises(LayoutError):
            read_bundle(path)

    def test_missing_tokens_is_truncation(self, tmp_path):
        rng = np.random.default_rng(3)
        b = random_bundle(rng)
        path = tmp_path / "x.ctfb"
        write_bundle(b, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(TruncatedPayloadError):
            read_bundle(path)

    def test_nan_payload_rejected(self, tmp_path):
        rng = np.random.default_rng(4)
        b = random_bundle(rng)
        path = tmp_path / "x.ctfb"
        write_bundle(b, path)
        data = bytearray(path.read_bytes())
        data[-4:] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(data))
        with pytest.raises(NonFiniteValueError):
            read_bundle(path)


class TestBundleValidation:
    def test_padding_rows_must_be_zero(self):
        rng = np.random.default_rng(5)
        text = rng.standard_normal((3, 4))
        image = rng.standard_normal((4, 4))
        with pytest.raises(LayoutError):
            FeatureBundle(text, 2, ScaleLayout(((2, 2),)), image)

    def test_valid_text_bounds(self):
        rng = np.random.default_rng(6)
        text = rng.standard_normal((3, 4))
        image = rng.standard_normal((4, 4))
        with pytest.raises(LayoutError):
            FeatureBundle(text, 0, ScaleLayout(((2, 2),)), image)
        with pytest.raises(LayoutError):
            FeatureBundle(text, 4, ScaleLayout(((2, 2),)), image)

    def test_image_rows_must_match_layout(self):
        rng = np.random.default_rng(7)
        text = rng.standard_normal((2, 4))
        image = rng.standard_normal((5, 4))
        with pytest.raises(LayoutError):
            FeatureBundle(text, 2, ScaleLayout(((2, 2),)), image)


class TestSliceScale:
    def test_single_scale_is_everything(self):
        rng = np.random.default_rng(8)
        b = random_bundle(rng, sizes=((3, 2),))
        np.testing.assert_array_equal(slice_scale(b, 1), b.image_tokens)

    def test_out_of_range(self):
        rng = np.random.default_rng(9)
        b = random_bundle(rng, sizes=((3, 2),))
        with pytest.raises(ShapeError):
            slice_scale(b, 2)

    def test_four_scale_second_slice_rows(self):
        rng = np.random.default_rng(10)
        b = random_bundle(rng, sizes=FOUR_SCALES, dim_g=3)
        np.testing.assert_array_equal(slice_scale(b, 2), b.image_tokens[1024:1280])

    def test_concat_reconstructs(self):
        rng = np.random.default_rng(11)
        b = random_bundle(rng, sizes=((4, 2), (2, 2), (1, 1)))
        rebuilt = np.concatenate(
            [slice_scale(b, k) for k in range(1, b.n_scales + 1)], axis=0
        )
        np.testing.assert_array_equal(rebuilt, b.image_tokens)


class TestTokenGrid:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        g = random_grid(rng, 3, 2, 5)
        g32 = TokenGrid(
            g.tokens.astype(np.float32).astype(np.float64), g.grid_w, g.grid_h
        )
        path = tmp_path / "x.cttg"
        write_token_grid(g32, path)
        got = read_token_grid(path)
        assert (got.grid_w, got.grid_h, got.dim) == (3, 2, 5)
        np.testing.assert_array_equal(got.tokens, g32.tokens)

    def test_token_count_must_match_grid(self):
        with pytest.raises(ShapeError):
            TokenGrid(np.zeros((5, 4)), 2, 2)

    def test_payload_byte_length(self, tmp_path):
        rng = np.random.default_rng(13)
        g = random_grid(rng, 16, 16, 256)
        path = tmp_path / "x.cttg"
        write_token_grid(g, path)
        header = 4 + 4 + 3 * 4
        assert path.stat().st_size == header + 16 * 16 * 256 * 4

    def test_write_read_write_byte_identical(self, tmp_path):
        rng = np.random.default_rng(14)
        g = random_grid(rng)
        p1, p2 = tmp_path / "a.cttg", tmp_path / "b.cttg"
        write_token_grid(g, p1)
        write_token_grid(read_token_grid(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestHeaderRejection:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ctfb"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(BadMagicError):
            read_bundle(path)

    def test_bad_version(self, tmp_path):
        rng = np.random.default_rng(15)
        b = random_bundle(rng)
        path = tmp_path / "x.ctfb"
        write_bundle(b, path)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(data))
        with pytest.raises(VersionError):
            read_bundle(path)

    def test_huge_scale_count_is_truncation_not_crash(self, tmp_path):
        rng = np.random.default_rng(16)
        b = random_bundle(rng)
        path = tmp_path / "x.ctfb"
        write_bundle(b, path)
        data = bytearray(path.read_bytes())
        # scale-count field sits after magic, version, dim, l_gl, valid_text
        data[20:24] = struct.pack("<I", 2**31)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            read_bundle(path)

    def test_fuzzed_headers_rejected_typed(self, tmp_path):
        rng = np.random.default_rng(17)
        b = random_bundle(rng)
        path = tmp_path / "x.ctfb"
        write_bundle(b, path)
        base = path.read_bytes()
        fuzz_rng = np.random.default_rng(99)
        for _ in range(100):
            data = bytearray(base)
            pos = int(fuzz_rng.integers(0, 24))
            old = data[pos]
            new = int(fuzz_rng.integers(0, 256))
            if new == old:
                new = (new + 1) % 256
            data[pos] = new
            mutated = tmp_path / "m.ctfb"
            mutated.write_bytes(bytes(data))
            try:
                read_bundle(mutated)
            except FormatError:
                continue
            except Exception as e:  # noqa: BLE001
                raise AssertionError(f"untyped failure: {type(e).__name__}: {e}")
            # a byte flip inside valid_text (bytes 16..19) may produce another
            # valid header; anything else must have been rejected
            assert 16 <= pos < 20, f"mutation at byte {pos} silently accepted"


class TestBoxFiles:
    def test_round_trip_exact(self, tmp_path):
        boxes = [(0, (1.25, 2.5, 3.0, 4.0)), (1, (0.1, 0.2, 10.0, 20.0))]
        path = tmp_path / "gt.txt"
        write_boxes(path, boxes)
        assert read_boxes(path) == boxes

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "gt.txt"
        path.write_text("0 1 2 3\n")
        with pytest.raises(LayoutError):
            read_boxes(path)
