"""Fourier transforms: a 1-D complex FFT engine and differentiable 2-D
real transforms for the spectral branch of the Fourier-convolution nets.

``fft1d`` is the general engine: iterative radix-2 for power-of-two
lengths, Bluestein's chirp-z reduction (onto the radix-2 path) for every
other length, so arbitrary crop sizes need no padding. Convention:
unnormalized forward ``X_k = sum_n x_n exp(-2*pi*i*n*k/N)``, inverse
scaled by 1/N, so ``fft1d(fft1d(x), inverse=True) == x``.

``rfft2d``/``irfft2d`` are the NCHW tensor ops. They evaluate the same
transform through cached cosine/sine matrix products (one GEMM per image
axis), which at convolution-sized inputs is far faster in numpy than a
strided butterfly loop, and they store the half spectrum with real and
imaginary planes stacked as two channel groups. Their backward passes
apply the exact adjoint (transposed matrices in reverse order).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

__all__ = ["fft1d", "rfft2d", "irfft2d", "rfft2d_array", "irfft2d_array", "half_width"]


def half_width(w: int) -> int:
    """Stored spectrum width for a real signal of width ``w``."""
    return w // 2 + 1


# ---- 1-D engine ----

_POW2_CACHE: dict = {}
_BLUESTEIN_CACHE: dict = {}


def _bit_reversal(n: int) -> np.ndarray:
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    bits = n.bit_length() - 1
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _pow2_plan(n: int):
    plan = _POW2_CACHE.get(n)
    if plan is None:
        twiddles = []
        m = 2
        while m <= n:
            half = m // 2
            twiddles.append(np.exp(-2j * np.pi * np.arange(half) / m))
            m *= 2
        plan = (_bit_reversal(n), twiddles)
        _POW2_CACHE[n] = plan
    return plan


def _fft_pow2(a: np.ndarray) -> np.ndarray:
    """Unnormalized forward FFT along the last axis; len must be 2**k."""
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    rev, twiddles = _pow2_plan(n)
    out = np.ascontiguousarray(a[..., rev])
    m = 2
    for w in twiddles:
        half = m // 2
        v = out.reshape(-1, n // m, m)
        odd = v[..., half:] * w
        even = v[..., :half].copy()
        v[..., :half] = even + odd
        v[..., half:] = even - odd
        m *= 2
    return out


def _bluestein_plan(n: int):
    plan = _BLUESTEIN_CACHE.get(n)
    if plan is None:
        m = 1 << (2 * n - 1).bit_length()
        # chirp exponents reduced mod 2n to keep angles small
        k = np.arange(n, dtype=np.int64)
        ang = np.pi * ((k * k) % (2 * n)) / n
        w = np.exp(-1j * ang)  # forward chirp e^{-i pi k^2 / n}
        b = np.zeros(m, dtype=np.complex128)
        b[:n] = np.conj(w)
        b[m - n + 1 :] = np.conj(w[1:][::-1])
        plan = (m, w, _fft_pow2(b))
        _BLUESTEIN_CACHE[n] = plan
    return plan


def _fft_bluestein(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    m, w, bf = _bluestein_plan(n)
    buf = np.zeros(a.shape[:-1] + (m,), dtype=np.complex128)
    buf[..., :n] = a * w
    conv = _fft_pow2(buf)
    conv *= bf
    # inverse length-m FFT via conjugation of the forward path
    conv = np.conj(_fft_pow2(np.conj(conv))) / m
    return conv[..., :n] * w


def fft1d(x, inverse: bool = False) -> np.ndarray:
    """Discrete Fourier transform along the last axis, any length >= 1.

    Forward is unnormalized; the inverse divides by N so the round trip
    is the identity. Input is converted to complex128.
    """
    a = np.asarray(x, dtype=np.complex128)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise ShapeError("fft1d needs at least one sample along the last axis")
    n = a.shape[-1]
    if inverse:
        return np.conj(fft1d(np.conj(a))) / n
    if n == 1:
        return a.copy()
    if n & (n - 1) == 0:
        return _fft_pow2(a)
    return _fft_bluestein(a)


# ---- cached DFT matrices for the 2-D real transforms ----

_MAT_CACHE: dict = {}


def _mats(kind: str, n: int, dtype) -> tuple:
    key = (kind, n, np.dtype(dtype).name)
    hit = _MAT_CACHE.get(key)
    if hit is not None:
        return hit
    t = np.arange(n, dtype=np.float64)
    if kind == "rfwd":  # real -> half spectrum
        k = np.arange(half_width(n), dtype=np.float64)
        ang = 2.0 * np.pi * np.outer(t, k) / n
        pair = (np.cos(ang).astype(dtype), (-np.sin(ang)).astype(dtype))
    elif kind == "cfwd":  # complex -> complex forward
        ang = 2.0 * np.pi * np.outer(t, t) / n
        pair = (np.cos(ang).astype(dtype), (-np.sin(ang)).astype(dtype))
    elif kind == "cinv":  # complex -> complex inverse (1/n)
        ang = 2.0 * np.pi * np.outer(t, t) / n
        pair = ((np.cos(ang) / n).astype(dtype), (np.sin(ang) / n).astype(dtype))
    elif kind == "rinv":  # half spectrum -> real, with hermitian column weights
        nh = half_width(n)
        l = np.arange(nh, dtype=np.float64)
        ang = 2.0 * np.pi * np.outer(l, t) / n
        weight = np.full((nh, 1), 2.0)
        weight[0, 0] = 1.0
        if n % 2 == 0:
            weight[-1, 0] = 1.0
        pair = (
            (weight * np.cos(ang) / n).astype(dtype),
            (weight * np.sin(ang) / n).astype(dtype),
        )
    else:  # pragma: no cover
        raise ValueError(kind)
    _MAT_CACHE[key] = pair
    return pair


def _mm_h(arr: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Matrix product along axis -2 of an (..., H, W) array."""
    return np.swapaxes(np.swapaxes(arr, -1, -2) @ mat, -1, -2)


def _cmul_h(re, im, c, s):
    """Complex matrix product along the H axis: (re + i im) @ (c + i s)."""
    return _mm_h(re, c) - _mm_h(im, s), _mm_h(re, s) + _mm_h(im, c)


def rfft2d_array(x: np.ndarray) -> np.ndarray:
    """Forward real 2-D DFT of (N, C, H, W); returns (N, 2C, H, W//2+1)."""
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError("rfft2d needs spatial dims >= 2")
    cw, sw = _mats("rfwd", w, x.dtype)
    rre = x @ cw
    rim = x @ sw
    ch, sh = _mats("cfwd", h, x.dtype)
    yre, yim = _cmul_h(rre, rim, ch, sh)
    return np.concatenate([yre, yim], axis=1)


def rfft2d_adjoint(g: np.ndarray, w: int) -> np.ndarray:
    """Adjoint of :func:`rfft2d_array` for backward passes."""
    c2 = g.shape[1]
    gre, gim = g[:, : c2 // 2], g[:, c2 // 2 :]
    h = g.shape[2]
    ch, sh = _mats("cfwd", h, g.dtype)
    rre = _mm_h(gre, ch.T) + _mm_h(gim, sh.T)
    rim = -_mm_h(gre, sh.T) + _mm_h(gim, ch.T)
    cw, sw = _mats("rfwd", w, g.dtype)
    return rre @ cw.T + rim @ sw.T


def irfft2d_array(s: np.ndarray, out_w: int) -> np.ndarray:
    """Inverse of the stored half spectrum: (N, 2C, H, Wh) -> (N, C, H, out_w)."""
    c2 = s.shape[1]
    if c2 % 2 != 0:
        raise ShapeError("spectrum tensor must carry an even channel count (re, im groups)")
    if half_width(out_w) != s.shape[3]:
        raise ShapeError(f"out_w {out_w} inconsistent with stored width {s.shape[3]}")
    sre, sim = s[:, : c2 // 2], s[:, c2 // 2 :]
    h = s.shape[2]
    ch, sh = _mats("cinv", h, s.dtype)
    zre, zim = _cmul_h(sre, sim, ch, sh)
    ci, si = _mats("rinv", out_w, s.dtype)
    return zre @ ci - zim @ si


def irfft2d_adjoint(g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`irfft2d_array` for backward passes."""
    out_w = g.shape[-1]
    ci, si = _mats("rinv", out_w, g.dtype)
    zre = g @ ci.T
    zim = -(g @ si.T)
    h = g.shape[2]
    ch, sh = _mats("cinv", h, g.dtype)
    sre = _mm_h(zre, ch.T) + _mm_h(zim, sh.T)
    sim = -_mm_h(zre, sh.T) + _mm_h(zim, ch.T)
    return np.concatenate([sre, sim], axis=1)


# ---- differentiable tensor ops ----


def rfft2d(x: Tensor) -> Tensor:
    """Differentiable forward real 2-D transform of an NCHW tensor.

    The half spectrum is returned with real planes in the first C output
    channels and imaginary planes in the next C; backward applies the
    adjoint transform to the output gradient.
    """
    w = x.shape[-1]
    out_data = rfft2d_array(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(rfft2d_adjoint(g, w))

    return Tensor._from_op(out_data, (x,), backward, "rfft2d")


def irfft2d(s: Tensor, out_w: int) -> Tensor:
    """Differentiable inverse of :func:`rfft2d`; ``out_w`` picks the parity."""
    out_data = irfft2d_array(s.data, out_w)

    def backward(g):
        if s.requires_grad:
            s._accumulate(irfft2d_adjoint(g))

    return Tensor._from_op(out_data, (s,), backward, "irfft2d")
