import numpy as np
import pytest

from fftsr import image as I
from fftsr.errors import DecodeError, ShapeError, TooSmallError, UnsupportedFormatError


def random_image(rng, h=9, w=13):
    return I.Image(rng.random((h, w, 3), dtype=np.float64).astype(np.float32))


class TestPpm:
    def test_single_red_pixel(self):
        raw = b"P6 1 1 255 " + bytes([255, 0, 0])
        img = I.decode_image(raw)
        assert img.height == 1 and img.width == 1
        assert np.allclose(img.data[0, 0], [1.0, 0.0, 0.0])

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        img = random_image(rng)
        back = I.decode_image(I.encode_image(img, format="ppm"))
        assert np.abs(back.data - img.data).max() <= 1.0 / 255.0

    def test_comment_in_header(self):
        raw = b"P6\n# a comment\n2 1\n255\n" + bytes(6)
        img = I.decode_image(raw)
        assert img.width == 2

    def test_truncated_payload(self):
        raw = b"P6\n2 2\n255\n" + bytes(5)
        with pytest.raises(DecodeError):
            I.decode_image(raw)

    def test_wrong_maxval(self):
        with pytest.raises(UnsupportedFormatError):
            I.decode_image(b"P6\n1 1\n65535\n" + bytes(6))


class TestPng:
    def test_round_trip(self):
        rng = np.random.default_rng(1)
        img = random_image(rng, 7, 5)
        back = I.decode_image(I.encode_image(img))
        assert np.abs(back.data - img.data).max() <= 1.0 / 255.0

    def test_encode_deterministic(self):
        rng = np.random.default_rng(2)
        img = random_image(rng)
        assert I.encode_image(img) == I.encode_image(img)

    def test_truncated_stream_raises(self):
        rng = np.random.default_rng(3)
        raw = I.encode_image(random_image(rng))
        with pytest.raises(DecodeError):
            I.decode_image(raw[: len(raw) - 9])

    def test_bad_signature_offset_zero(self):
        with pytest.raises(DecodeError) as info:
            I.decode_image(b"\x89PNG\r\n\x1a\x00" + bytes(20))
        assert info.value.offset == 0

    def test_corrupt_chunk_crc(self):
        rng = np.random.default_rng(4)
        raw = bytearray(I.encode_image(random_image(rng)))
        raw[20] ^= 0xFF  # inside IHDR body
        with pytest.raises(DecodeError):
            I.decode_image(bytes(raw))

    def test_rgba_alpha_dropped(self):
        # hand-build a color type 6 PNG: 1x2, opaque red / half-alpha green
        import struct
        import zlib

        rows = bytes([0, 255, 0, 0, 255, 0, 255, 0, 128])
        out = bytearray(I.PNG_SIGNATURE)
        I._write_chunk(out, b"IHDR", struct.pack(">IIBBBBB", 2, 1, 8, 6, 0, 0, 0))
        I._write_chunk(out, b"IDAT", zlib.compress(rows))
        I._write_chunk(out, b"IEND", b"")
        img = I.decode_image(bytes(out))
        assert np.allclose(img.data[0, 0], [1, 0, 0])
        assert np.allclose(img.data[0, 1], [0, 1, 0])

    def test_unsupported_bit_depth(self):
        import struct
        import zlib

        out = bytearray(I.PNG_SIGNATURE)
        I._write_chunk(out, b"IHDR", struct.pack(">IIBBBBB", 1, 1, 16, 2, 0, 0, 0))
        I._write_chunk(out, b"IDAT", zlib.compress(bytes(7)))
        I._write_chunk(out, b"IEND", b"")
        with pytest.raises(UnsupportedFormatError):
            I.decode_image(bytes(out))

    @pytest.mark.parametrize("ftype", [0, 1, 2, 3, 4])
    def test_all_decode_filters(self, ftype):
        # encode by hand with one filter type, compare to reference pixels
        import struct
        import zlib

        rng = np.random.default_rng(5 + ftype)
        pixels = rng.integers(0, 256, size=(4, 5, 3), dtype=np.uint8)
        h, w, _ = pixels.shape
        raw_rows = []
        prev = np.zeros((w, 3), dtype=np.uint8)
        for y in range(h):
            cur = pixels[y]
            if ftype == 0:
                filt = cur.copy()
            elif ftype == 1:
                filt = cur.copy()
                filt[1:] = cur[1:] - cur[:-1]
            elif ftype == 2:
                filt = cur - prev
            elif ftype == 3:
                filt = cur.copy()
                filt[0] = cur[0] - prev[0] // 2
                for x in range(1, w):
                    filt[x] = cur[x] - ((cur[x - 1].astype(np.uint16) + prev[x]) // 2).astype(np.uint8)
            else:
                filt = cur.copy()
                filt[0] = cur[0] - prev[0]
                for x in range(1, w):
                    a = cur[x - 1].astype(np.int16)
                    b = prev[x].astype(np.int16)
                    c = prev[x - 1].astype(np.int16)
                    p = a + b - c
                    pa, pb, pc = np.abs(p - a), np.abs(p - b), np.abs(p - c)
                    pred = np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))
                    filt[x] = cur[x] - pred.astype(np.uint8)
            raw_rows.append(bytes([ftype]) + filt.tobytes())
            prev = cur
        out = bytearray(I.PNG_SIGNATURE)
        I._write_chunk(out, b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
        I._write_chunk(out, b"IDAT", zlib.compress(b"".join(raw_rows)))
        I._write_chunk(out, b"IEND", b"")
        img = I.decode_image(bytes(out))
        assert np.array_equal(np.round(img.data * 255).astype(np.uint8), pixels)


class TestResampling:
    def test_constant_image_any_scale(self):
        img = I.Image(np.full((6, 6, 3), 0.42, dtype=np.float32))
        for fn in (I.resample_bicubic, I.resample_bilinear):
            for hw in [(12, 12), (5, 9), (6, 6), (2, 17)]:
                out = fn(img, *hw)
                assert np.abs(out.data - 0.42).max() < 1e-6

    def test_keys_kernel_midpoint_weights(self):
        # hand evaluation of the a=-0.5 kernel at offset 0.5
        w = I.keys_weights(0.5)
        assert np.allclose(w, [-1 / 16, 9 / 16, 9 / 16, -1 / 16])
        row = np.array([0.0, 1.0, 2.0, 3.0])
        assert float(row @ w) == pytest.approx(1.5)

    def test_same_size_is_identity(self):
        rng = np.random.default_rng(6)
        img = random_image(rng)
        out = I.resample_bicubic(img, img.height, img.width)
        assert np.abs(out.data - img.data).max() < 1e-6

    def test_bilinear_midpoint(self):
        # a 2-wide row upscaled 2x: mapping puts outputs at src -0.25, 0.25, 0.75, 1.25
        img = I.Image(np.stack([np.tile(np.array([0.0, 1.0]), (2, 1))] * 3, axis=-1))
        out = I.resample_bilinear(img, 2, 4)
        assert np.allclose(out.data[0, :, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-7)

    def test_bicubic_reproduces_linear_ramp_interior(self):
        ramp = np.linspace(0.0, 1.0, 16)
        img = I.Image(np.stack([np.tile(ramp, (16, 1))] * 3, axis=-1))
        out = I.resample_bicubic(img, 16, 32)
        # interior columns of the upscale must stay on the ramp line
        xs = (np.arange(32) + 0.5) * 0.5 - 0.5
        expected = np.interp(xs, np.arange(16), ramp)
        interior = slice(4, 28)
        assert np.abs(out.data[8, interior, 0] - expected[interior]).max() < 1e-6

    def test_bilinear_vs_bicubic_on_smooth_gradient(self):
        ramp = np.linspace(0.1, 0.9, 12)
        img = I.Image(np.stack([np.tile(ramp, (12, 1))] * 3, axis=-1))
        a = I.resample_bicubic(img, 24, 24)
        b = I.resample_bilinear(img, 24, 24)
        assert np.abs(a.data - b.data).max() < 0.1

    def test_outputs_clamped(self):
        rng = np.random.default_rng(7)
        img = random_image(rng, 8, 8)
        out = I.resample_bicubic(img, 24, 24)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_batched_matches_single(self):
        rng = np.random.default_rng(8)
        img = random_image(rng, 12, 12)
        single = I.resample_bicubic(img, 36, 36).data
        batched = I.resample_nchw(img.data.transpose(2, 0, 1)[None].astype(np.float32), 36, 36)
        assert np.allclose(batched[0].transpose(1, 2, 0), single, atol=1e-6)

    def test_upscale_against_naive_pointwise(self):
        rng = np.random.default_rng(9)
        img = random_image(rng, 7, 7)
        out = I.resample_bicubic(img, 14, 14).data

        def naive_at(row_img, y, x):
            sy = (y + 0.5) * 0.5 - 0.5
            sx = (x + 0.5) * 0.5 - 0.5
            by, bx = int(np.floor(sy)), int(np.floor(sx))
            wy = I.keys_weights(sy - by)
            wx = I.keys_weights(sx - bx)
            wy /= wy.sum()
            wx /= wx.sum()
            acc = 0.0
            for i, ty in enumerate(range(by - 1, by + 3)):
                cy = min(max(ty, 0), 6)
                for j, tx in enumerate(range(bx - 1, bx + 3)):
                    cx = min(max(tx, 0), 6)
                    acc += wy[i] * wx[j] * row_img[cy, cx]
            return min(max(acc, 0.0), 1.0)

        for y, x in [(0, 0), (3, 5), (7, 7), (13, 13), (6, 1)]:
            assert out[y, x, 0] == pytest.approx(naive_at(img.data[:, :, 0], y, x), abs=1e-6)


class TestPairs:
    def test_constant_pair(self):
        img = I.Image(np.full((6, 6, 3), 0.5, dtype=np.float32))
        lr, hr = I.make_lr_hr_pair(img, 3)
        assert lr.data.shape == (2, 2, 3)
        assert hr.data.shape == (6, 6, 3)
        assert np.abs(lr.data - 0.5).max() < 1e-6

    def test_crop_rule(self):
        rng = np.random.default_rng(10)
        img = random_image(rng, 7, 7)
        lr, hr = I.make_lr_hr_pair(img, 3)
        assert hr.data.shape == (6, 6, 3)
        assert np.array_equal(hr.data, img.data[:6, :6])
        assert lr.data.shape == (2, 2, 3)

    def test_paper_resolution_numbers(self):
        img = I.Image(np.zeros((1080, 1920, 3), dtype=np.float32))
        lr, hr = I.make_lr_hr_pair(img, 3)
        assert (lr.height, lr.width) == (360, 640)
        assert (hr.height, hr.width) == (1080, 1920)

    def test_too_small(self):
        with pytest.raises(TooSmallError):
            I.make_lr_hr_pair(I.Image(np.zeros((2, 2, 3), dtype=np.float32)), 3)


def test_image_validation():
    with pytest.raises(ShapeError):
        I.Image(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        I.Image(np.full((2, 2, 3), np.nan))
    img = I.Image(np.full((2, 2, 3), 1.7, dtype=np.float32))
    assert img.data.max() == 1.0


def test_luma_coefficients():
    arr = np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]])
    assert np.allclose(I.luma(arr)[0], [0.299, 0.587, 0.114])
