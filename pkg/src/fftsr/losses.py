"""Training objectives and evaluation metrics.

Generator side: a five-term weighted sum of adversarial, perceptual,
mean-gradient-error, SSIM, and Charbonnier losses. Discriminator side:
the negated two-term log loss (both networks minimize). SSIM and PSNR
double as the evaluation metrics.

All loss functions operate on NCHW tensors and are differentiable
through the autodiff engine; evaluation helpers accept plain arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nets import Conv2d, Module
from .tensor import Tensor

__all__ = [
    "LossWeights",
    "SsimParams",
    "ssim",
    "ssim_metric",
    "charbonnier",
    "sobel_gradients",
    "mge_loss",
    "adversarial_gen_loss",
    "adversarial_disc_loss",
    "PerceptualExtractor",
    "perceptual_loss",
    "total_generator_loss",
    "psnr",
]

LOG_CLIP = 1e-7  # discriminator outputs are clamped to [LOG_CLIP, 1 - LOG_CLIP]
SOBEL_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Scaling factors of the combined generator objective.

    Order of terms: adversarial, perceptual, gradient-error, SSIM,
    Charbonnier. Defaults weight every term equally.
    """

    adversarial: float = 1.0
    perceptual: float = 1.0
    mge: float = 1.0
    ssim: float = 1.0
    charbonnier: float = 1.0
    charbonnier_eps: float = 1e-6

    def __post_init__(self):
        for name in ("adversarial", "perceptual", "mge", "ssim", "charbonnier"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")
        if not (math.isfinite(self.charbonnier_eps) and self.charbonnier_eps > 0):
            raise ValueError("charbonnier_eps must be positive")


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    c1: float = (0.01 * 1.0) ** 2  # (k1 * L)^2 with L = 1 for [0, 1] data
    c2: float = (0.03 * 1.0) ** 2


def _gaussian_taps(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _check_pair(x: Tensor, y: Tensor, op: str):
    if x.shape != y.shape:
        raise ShapeError(f"{op}: shapes {x.shape} and {y.shape} differ")


def ssim(x: Tensor, y: Tensor, p: SsimParams = SsimParams()) -> Tensor:
    """Mean structural similarity over 11x11 Gaussian windows.

    Local statistics come from Gaussian filtering with reflect borders;
    per-window SSIM is averaged over all positions and channels. Returns
    a scalar in [-1, 1]; use ``-ssim`` as the training loss.
    """
    _check_pair(x, y, "ssim")
    taps = _gaussian_taps(p.window_size, p.sigma)

    def blur(t: Tensor) -> Tensor:
        n, c, h, w = t.shape
        flat = T.reshape(t, (n * c, 1, h, w))
        return T.reshape(T.sep_filter2d(flat, taps, taps, mode="reflect"), (n, c, h, w))

    mu_x = blur(x)
    mu_y = blur(y)
    xx = blur(x * x) - mu_x * mu_x
    yy = blur(y * y) - mu_y * mu_y
    xy = blur(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + p.c1) * (2.0 * xy + p.c2)
    den = (mu_x * mu_x + mu_y * mu_y + p.c1) * (xx + yy + p.c2)
    return T.mean(num / den)


def ssim_metric(x: np.ndarray, y: np.ndarray, p: SsimParams = SsimParams()) -> float:
    """SSIM of two (..., H, W) arrays, evaluated off-graph in float64."""
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    if xs.ndim == 2:
        xs, ys = xs[None, None], ys[None, None]
    elif xs.ndim == 3:  # HWC image
        xs = xs.transpose(2, 0, 1)[None]
        ys = ys.transpose(2, 0, 1)[None]
    with T.no_grad():
        return float(ssim(Tensor(xs, dtype=np.float64), Tensor(ys, dtype=np.float64), p).item())


def charbonnier(x: Tensor, y: Tensor, eps: float = 1e-6) -> Tensor:
    """Mean of sqrt((x - y)^2 + eps); smooth at zero error."""
    if eps <= 0:
        raise ValueError(f"charbonnier eps must be > 0, got {eps}")
    _check_pair(x, y, "charbonnier")
    d = x - y
    return T.mean(T.sqrt(d * d + eps))


SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0])
SOBEL_DIFF = np.array([-1.0, 0.0, 1.0])


def sobel_gradients(img: Tensor) -> Tensor:
    """Per-pixel gradient magnitude sqrt(Gx^2 + Gy^2 + eps), reflect borders."""
    if img.shape[2] < 3 or img.shape[3] < 3:
        raise ShapeError("sobel needs at least 3x3 spatial extent")
    n, c, h, w = img.shape
    flat = T.reshape(img, (n * c, 1, h, w))
    gx = T.sep_filter2d(flat, SOBEL_SMOOTH, SOBEL_DIFF, mode="reflect")
    gy = T.sep_filter2d(flat, SOBEL_DIFF, SOBEL_SMOOTH, mode="reflect")
    mag = T.sqrt(gx * gx + gy * gy + SOBEL_EPS)
    return T.reshape(mag, (n, c, h, w))


def mge_loss(x: Tensor, y: Tensor) -> Tensor:
    """Mean squared difference of Sobel gradient magnitudes."""
    _check_pair(x, y, "mge")
    d = sobel_gradients(x) - sobel_gradients(y)
    return T.mean(d * d)


def _clip_unit(d: Tensor) -> Tensor:
    return T.clamp(d, LOG_CLIP, 1.0 - LOG_CLIP)


def adversarial_gen_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator objective -E[log D(fake)]."""
    return -T.mean(T.log(_clip_unit(d_fake)))


def adversarial_disc_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """-E[log D(real)] - E[log(1 - D(fake))]; minimized by the critic."""
    real_term = T.mean(T.log(_clip_unit(d_real)))
    fake_term = T.mean(T.log(1.0 - _clip_unit(d_fake)))
    return -(real_term + fake_term)


class PerceptualExtractor(Module):
    """Frozen random-feature network for perceptual distances.

    Three stride-2 conv stages (widths 8, 16, 32) with fixed seed-derived
    weights; no pretrained downloads, swappable by anyone who has real
    weights. Stage outputs are compared with an L1 distance normalized by
    the reference feature spread, which makes the loss invariant to a
    rescaling of the extractor weights.
    """

    WIDTHS = (8, 16, 32)
    SEED = 0x5EEDFACE

    def __init__(self, dtype=np.float32, seed: int | None = None):
        rng = np.random.default_rng(self.SEED if seed is None else seed)
        c_in = 3
        stages = []
        for width in self.WIDTHS:
            stages.append(Conv2d(rng, c_in, width, kernel=3, stride=2, padding=1, dtype=dtype))
            c_in = width
        self.stages = stages
        for _, p in self.named_parameters():
            p.requires_grad = False

    def features(self, x: Tensor) -> list[Tensor]:
        feats = []
        h = x
        for conv in self.stages:
            h = T.relu(conv(h))
            feats.append(h)
        return feats


def perceptual_loss(x: Tensor, y: Tensor, extractor: PerceptualExtractor) -> Tensor:
    """Mean absolute feature difference over the extractor stages,
    each stage normalized by the standard deviation of the reference
    features (y side)."""
    _check_pair(x, y, "perceptual")
    fx = extractor.features(x)
    fy = extractor.features(y)
    total = None
    for a, b in zip(fx, fy):
        centered = b - T.mean(b)
        std = T.sqrt(T.mean(centered * centered) + 1e-12)
        term = T.mean(T.absolute(a - b)) / (std + 1e-8)
        total = term if total is None else total + term
    return total / float(len(fx))


def total_generator_loss(
    adversarial: Tensor,
    perceptual: Tensor,
    mge: Tensor,
    ssim_value: Tensor,
    charbonnier_value: Tensor,
    w: LossWeights,
) -> Tensor:
    """Weighted sum of the five generator terms; SSIM enters negated."""
    return (
        w.adversarial * adversarial
        + w.perceptual * perceptual
        + w.mge * mge
        + w.ssim * (-ssim_value)
        + w.charbonnier * charbonnier_value
    )


def psnr(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; +inf when the images are identical."""
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ShapeError(f"psnr: shapes {xs.shape} and {ys.shape} differ")
    mse = float(np.mean((xs - ys) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
