"""Image decode/encode and classical resampling.

Formats are deliberately minimal and fully pinned down so byte-level
round trips are testable:

* PNG, RFC-2083 subset: 8-bit, color type 2 (RGB) or 6 (RGBA, alpha
  dropped on decode), no interlace. The encoder always writes color
  type 2 with filter 0 rows and a fixed zlib level, so identical pixels
  produce identical files. The decoder handles filters 0..4.
* Binary PPM (P6), maxval 255.

Resampling uses cubic convolution with the Keys kernel (a = -0.5) or
bilinear weights, half-pixel-centered source mapping
``x_src = (x_dst + 0.5) * scale - 0.5``, edge-clamped borders, and a
final clamp to [0, 1]. Both kernels are applied as precomputed per-axis
weight matrices, which makes batched and single-image paths bit-identical.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DecodeError, ShapeError, TooSmallError, UnsupportedFormatError

__all__ = [
    "Image",
    "decode_image",
    "encode_image",
    "resample_bicubic",
    "resample_bilinear",
    "resample_nchw",
    "make_lr_hr_pair",
    "luma",
    "keys_weights",
]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass
class Image:
    """Height x width x 3 intensities in [0, 1] plus a provenance tag."""

    data: np.ndarray
    tag: str = "decoded"

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"Image expects (H, W, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError("Image dimensions must be >= 1")
        if not np.isfinite(arr).all():
            raise ValueError("Image values must be finite")
        self.data = np.clip(arr, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


# ---- PNG ----


def _png_decode(raw: bytes) -> Image:
    if len(raw) < 8 or raw[:8] != PNG_SIGNATURE:
        raise DecodeError("not a PNG stream (bad signature)", offset=0)
    pos = 8
    width = height = None
    color_type = None
    idat = bytearray()
    seen_end = False
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise DecodeError("truncated chunk header", offset=pos)
        length, ctype = struct.unpack(">I4s", raw[pos : pos + 8])
        body_start = pos + 8
        body_end = body_start + length
        if body_end + 4 > len(raw):
            raise DecodeError(f"truncated {ctype.decode('latin1')} chunk", offset=pos)
        body = raw[body_start:body_end]
        (crc,) = struct.unpack(">I", raw[body_end : body_end + 4])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise DecodeError(f"chunk CRC mismatch in {ctype.decode('latin1')}", offset=body_end)
        if ctype == b"IHDR":
            if length != 13:
                raise DecodeError("IHDR length must be 13", offset=pos)
            width, height, depth, color_type, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", body
            )
            if depth != 8:
                raise UnsupportedFormatError(f"bit depth {depth} unsupported (8 only)")
            if color_type not in (2, 6):
                raise UnsupportedFormatError(f"color type {color_type} unsupported (2 or 6)")
            if comp != 0 or filt != 0:
                raise UnsupportedFormatError("nonzero compression/filter method")
            if interlace != 0:
                raise UnsupportedFormatError("interlaced PNG unsupported")
        elif ctype == b"IDAT":
            idat.extend(body)
        elif ctype == b"IEND":
            seen_end = True
            break
        pos = body_end + 4
    if width is None:
        raise DecodeError("missing IHDR", offset=8)
    if not seen_end:
        raise DecodeError("missing IEND", offset=len(raw))
    try:
        stream = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise DecodeError(f"IDAT inflate failed: {exc}") from None
    channels = 3 if color_type == 2 else 4
    stride = width * channels
    if len(stream) != (stride + 1) * height:
        raise DecodeError(
            f"pixel stream has {len(stream)} bytes, expected {(stride + 1) * height}"
        )
    rows = np.frombuffer(stream, dtype=np.uint8).reshape(height, stride + 1)
    filters = rows[:, 0]
    data = rows[:, 1:].reshape(height, width, channels)
    out = np.zeros_like(data)
    prev = np.zeros((width, channels), dtype=np.uint8)
    for y in range(height):
        out[y] = _unfilter_row(int(filters[y]), data[y], prev, y)
        prev = out[y]
    rgb = out[:, :, :3]
    return Image(rgb.astype(np.float32) / 255.0, tag="decoded")


def _unfilter_row(ftype: int, row: np.ndarray, prev: np.ndarray, y: int) -> np.ndarray:
    w = row.shape[0]
    if ftype == 0:
        return row.copy()
    if ftype == 2:  # Up
        return row + prev
    cur = row.copy()
    if ftype == 1:  # Sub
        for x in range(1, w):
            cur[x] += cur[x - 1]
        return cur
    if ftype == 3:  # Average
        cur[0] += prev[0] // 2
        for x in range(1, w):
            cur[x] += ((cur[x - 1].astype(np.uint16) + prev[x]) // 2).astype(np.uint8)
        return cur
    if ftype == 4:  # Paeth
        cur[0] += prev[0]
        for x in range(1, w):
            a = cur[x - 1].astype(np.int16)
            b = prev[x].astype(np.int16)
            c = prev[x - 1].astype(np.int16)
            p = a + b - c
            pa, pb, pc = np.abs(p - a), np.abs(p - b), np.abs(p - c)
            pred = np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))
            cur[x] += pred.astype(np.uint8)
        return cur
    raise DecodeError(f"unknown filter type {ftype} on row {y}")


def _png_encode(img: Image) -> bytes:
    pixels = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = pixels.shape
    rows = np.zeros((h, w * 3 + 1), dtype=np.uint8)
    rows[:, 1:] = pixels.reshape(h, w * 3)
    out = bytearray(PNG_SIGNATURE)
    _write_chunk(out, b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
    _write_chunk(out, b"IDAT", zlib.compress(rows.tobytes(), 6))
    _write_chunk(out, b"IEND", b"")
    return bytes(out)


def _write_chunk(out: bytearray, ctype: bytes, body: bytes):
    out += struct.pack(">I", len(body))
    out += ctype
    out += body
    out += struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)


# ---- PPM ----


def _ppm_decode(raw: bytes) -> Image:
    pos = 0

    def token():
        nonlocal pos
        while pos < len(raw):
            if raw[pos : pos + 1].isspace():
                pos += 1
            elif raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos] not in (10, 13):
                    pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError("truncated PPM header", offset=start)
        return raw[start:pos]

    if token() != b"P6":
        raise DecodeError("not a binary PPM (P6) stream", offset=0)
    try:
        w = int(token())
        h = int(token())
        maxval = int(token())
    except ValueError:
        raise DecodeError("non-numeric PPM header field", offset=pos) from None
    if maxval != 255:
        raise UnsupportedFormatError(f"PPM maxval {maxval} unsupported (255 only)")
    pos += 1  # single whitespace byte after maxval
    need = w * h * 3
    body = raw[pos : pos + need]
    if len(body) != need:
        raise DecodeError(f"PPM pixel payload short by {need - len(body)} bytes", offset=pos)
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return Image(arr.astype(np.float32) / 255.0, tag="decoded")


def _ppm_encode(img: Image) -> bytes:
    pixels = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def decode_image(raw: bytes) -> Image:
    """Decode PNG or binary PPM bytes into an :class:`Image`."""
    if raw[:8] == PNG_SIGNATURE:
        return _png_decode(raw)
    if raw[:2] == b"P6":
        return _ppm_decode(raw)
    raise DecodeError("unrecognized image signature", offset=0)


def encode_image(img: Image, format: str = "png") -> bytes:
    """Encode to PNG (default) or binary PPM bytes; lossless at 8 bits."""
    if format == "png":
        return _png_encode(img)
    if format == "ppm":
        return _ppm_encode(img)
    raise UnsupportedFormatError(f"unknown encode format {format!r}")


# ---- resampling ----


def keys_weights(frac: float, a: float = -0.5) -> np.ndarray:
    """Cubic convolution weights at taps (-1, 0, 1, 2) - frac offsets."""
    def kernel(t):
        t = abs(t)
        if t <= 1.0:
            return (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
        if t < 2.0:
            return a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
        return 0.0

    return np.array([kernel(1.0 + frac), kernel(frac), kernel(1.0 - frac), kernel(2.0 - frac)])


_WEIGHTS_CACHE: dict = {}


def _axis_matrix(n_in: int, n_out: int, kind: str) -> np.ndarray:
    """(n_out, n_in) resampling matrix: half-pixel mapping, edge clamp."""
    key = (n_in, n_out, kind)
    hit = _WEIGHTS_CACHE.get(key)
    if hit is not None:
        return hit
    scale = n_in / n_out
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        base = int(np.floor(src))
        frac = src - base
        if kind == "bicubic":
            taps = range(base - 1, base + 3)
            weights = keys_weights(frac)
        else:
            taps = range(base, base + 2)
            weights = np.array([1.0 - frac, frac])
        for t, wgt in zip(taps, weights):
            mat[i, min(max(t, 0), n_in - 1)] += wgt
        mat[i] /= mat[i].sum()
    _WEIGHTS_CACHE[key] = mat
    return mat


def _resample(img: Image, out_h: int, out_w: int, kind: str) -> Image:
    if out_h < 1 or out_w < 1:
        raise ShapeError("output dimensions must be >= 1")
    mh = _axis_matrix(img.height, out_h, kind)
    mw = _axis_matrix(img.width, out_w, kind)
    tmp = np.tensordot(mh, img.data.astype(np.float64), axes=(1, 0))  # (out_h, W, 3)
    out = np.tensordot(tmp, mw, axes=(1, 1)).transpose(0, 2, 1)  # (out_h, out_w, 3)
    return Image(np.clip(out, 0.0, 1.0).astype(np.float32), tag="resampled")


def resample_bicubic(img: Image, out_h: int, out_w: int) -> Image:
    """Keys (a = -0.5) cubic resampling to (out_h, out_w)."""
    return _resample(img, out_h, out_w, "bicubic")


def resample_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    """Bilinear resampling with the same mapping and clamp as bicubic."""
    return _resample(img, out_h, out_w, "bilinear")


def resample_nchw(batch: np.ndarray, out_h: int, out_w: int, kind: str = "bicubic") -> np.ndarray:
    """Batched (N, C, H, W) resampling; same matrices as the Image path."""
    mh = _axis_matrix(batch.shape[2], out_h, kind)
    mw = _axis_matrix(batch.shape[3], out_w, kind)
    x = batch.astype(np.float64)
    x = np.swapaxes(np.swapaxes(x, -1, -2) @ mh.T, -1, -2)
    x = x @ mw.T
    return np.clip(x, 0.0, 1.0).astype(batch.dtype)


def make_lr_hr_pair(img: Image, scale: int) -> tuple[Image, Image]:
    """Crop to a multiple of ``scale`` and downsample bicubically by it."""
    if scale < 2:
        raise ValueError("scale must be >= 2")
    h = (img.height // scale) * scale
    w = (img.width // scale) * scale
    if h == 0 or w == 0:
        raise TooSmallError(
            f"image {img.height}x{img.width} smaller than scale {scale}"
        )
    hr = Image(img.data[:h, :w], tag=img.tag)
    lr = resample_bicubic(hr, h // scale, w // scale)
    return lr, hr


def luma(arr: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (..., 3) RGB array."""
    return arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114
