"""Single-image super-resolution with Fourier-convolution residual GANs.

The package is self-contained on numpy: it ships its own reverse-mode
autodiff tensor engine, FFT primitives, image codecs and resamplers, the
generator/discriminator pair, the five-term training objective, and a
deterministic training loop with bit-exact checkpoints. A scikit-learn
style estimator (:class:`SuperResolver`) wraps the train/upscale cycle
for pipeline use, and the ``fftsr`` CLI exposes batch dataset
preparation, training, upscaling, and evaluation.
"""

from .tensor import Tensor, no_grad

__all__ = ["SuperResolver", "Tensor", "no_grad"]


def __getattr__(name):
    # estimator pulls in scikit-learn; keep base import light
    if name == "SuperResolver":
        from .estimator import SuperResolver

        return SuperResolver
    raise AttributeError(name)

__version__ = "0.1.0"
