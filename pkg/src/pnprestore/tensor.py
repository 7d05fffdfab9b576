"""Numeric substrate: images as ``(height, width, channels)`` float arrays.

A "tensor" throughout the package is a plain 3-D :class:`numpy.ndarray` in
channel-last layout. Spectra are complex arrays of the same shape. Batched
network activations use ``(batch, height, width, channels)``.

FFT convention: un-normalized forward transform, ``1/N`` on the inverse, so
``sum(|X|**2) == N * sum(|x|**2)`` with ``N = height * width`` per channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ValidationError


def as_tensor(x, dtype=np.float64) -> np.ndarray:
    """Return ``x`` as a 3-D ``(h, w, c)`` array; 2-D input gains a channel axis."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ContractError(f"expected a (h, w, c) tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ContractError(f"tensor dimensions must be >= 1, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class KernelBank:
    """A bank of ``out_channels x in_channels`` 2-D kernels with a shared dilation.

    ``weight`` has shape ``(out, in, kh, kw)``. Taps are applied as a
    cross-correlation (no flip), the usual CNN convention.
    """

    weight: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        w = np.asarray(self.weight)
        if w.ndim != 4:
            raise ContractError(f"kernel bank must be 4-D (out, in, kh, kw), got {w.shape}")
        if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
            raise ValidationError(f"kernel spatial size must be odd, got {w.shape[2:]}")
        if int(self.dilation) < 1:
            raise ValidationError(f"dilation must be >= 1, got {self.dilation}")
        if not np.all(np.isfinite(w)):
            raise ValidationError("kernel bank contains non-finite taps")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def footprint(self) -> tuple[int, int]:
        s = self.dilation
        return ((self.weight.shape[2] - 1) * s + 1, (self.weight.shape[3] - 1) * s + 1)


# largest im2col buffer (elements) before falling back to tap-by-tap accumulation
IM2COL_LIMIT = 1 << 25


def im2col(x: np.ndarray, kh: int, kw: int, dilation: int) -> np.ndarray:
    """``(n, h, w, kh*kw*c)`` columns of a zero-padded batch, tap-major."""
    n, h, w, c = x.shape
    s = int(dilation)
    ph, pw = s * (kh // 2), s * (kw // 2)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = np.empty((n, h, w, kh * kw, c), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            cols[:, :, :, a * kw + b, :] = xp[:, a * s:a * s + h, b * s:b * s + w, :]
    return cols.reshape(n, h, w, kh * kw * c)


def weight_matrix(weight: np.ndarray, dtype) -> np.ndarray:
    """``(out, in, kh, kw)`` kernel bank as a ``(kh*kw*in, out)`` matrix matching :func:`im2col`."""
    o = weight.shape[0]
    return np.ascontiguousarray(np.transpose(weight, (2, 3, 1, 0)).reshape(-1, o), dtype=dtype)


def dilated_conv_nhwc(x: np.ndarray, weight: np.ndarray, bias, dilation: int) -> np.ndarray:
    """Same-size dilated cross-correlation of a ``(n, h, w, c)`` batch.

    Each layer is zero padded by ``dilation * (k // 2)`` so spatial size is
    preserved. The result has the dtype of ``x``.
    """
    n, h, w, c = x.shape
    out_ch, in_ch, kh, kw = weight.shape
    if in_ch != c:
        raise ContractError(f"input has {c} channels, kernel bank expects {in_ch}")
    if x.size * kh * kw <= IM2COL_LIMIT:
        out = im2col(x, kh, kw, dilation) @ weight_matrix(weight, x.dtype)
    else:
        s = int(dilation)
        ph, pw = s * (kh // 2), s * (kw // 2)
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        out = np.zeros((n, h, w, out_ch), dtype=x.dtype)
        wt = np.asarray(weight, dtype=x.dtype)
        for a in range(kh):
            for b in range(kw):
                patch = np.ascontiguousarray(xp[:, a * s:a * s + h, b * s:b * s + w, :])
                out += patch @ np.ascontiguousarray(wt[:, :, a, b].T)
    if bias is not None:
        out += np.asarray(bias, dtype=x.dtype)
    return out


def conv2d_dilated(x, bank: KernelBank, bias=None) -> np.ndarray:
    """Apply ``bank`` to a single tensor, accumulating in float64."""
    t = as_tensor(x)
    if t.shape[2] != bank.in_channels:
        raise ContractError(
            f"input has {t.shape[2]} channels, kernel bank expects {bank.in_channels}")
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (bank.out_channels,):
            raise ContractError(f"bias must have shape ({bank.out_channels},), got {bias.shape}")
        if not np.all(np.isfinite(bias)):
            raise ValidationError("bias contains non-finite values")
    w = np.asarray(bank.weight, dtype=np.float64)
    return dilated_conv_nhwc(t[None], w, bias, bank.dilation)[0]


def zero_pad(x, margin: int) -> np.ndarray:
    """Surround every spatial edge with ``margin`` zeros."""
    if margin < 0:
        raise ContractError(f"margin must be >= 0, got {margin}")
    return np.pad(as_tensor(x), ((margin, margin), (margin, margin), (0, 0)))


def fft2(x) -> np.ndarray:
    """Per-channel 2-D DFT, un-normalized."""
    return np.fft.fft2(as_tensor(x), axes=(0, 1))


def ifft2(spectrum) -> np.ndarray:
    """Inverse of :func:`fft2` (scaled by ``1/N``); returns the real part."""
    spec = np.asarray(spectrum)
    if spec.ndim == 2:
        spec = spec[:, :, None]
    return np.fft.ifft2(spec, axes=(0, 1)).real


def embed_kernel(kernel, shape: tuple[int, int]) -> np.ndarray:
    """Place an odd-sized kernel in an ``shape`` array with its center at ``(0, 0)``.

    Taps wrap around circularly; kernels larger than ``shape`` fold onto
    themselves, which is exactly the circular operator they induce.
    """
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2:
        raise ContractError(f"kernel must be 2-D, got shape {k.shape}")
    kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError(f"kernel dimensions must be odd, got {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValidationError("kernel contains non-finite taps")
    h, w = shape
    out = np.zeros((h, w))
    rows = (np.arange(kh) - kh // 2) % h
    cols = (np.arange(kw) - kw // 2) % w
    np.add.at(out, (rows[:, None], cols[None, :]), k)
    return out


def kernel_spectrum(kernel, shape: tuple[int, int]) -> np.ndarray:
    """2-D spectrum of the origin-embedded kernel, shape ``(h, w)``."""
    return np.fft.fft2(embed_kernel(kernel, shape))


def circular_conv(x, kernel) -> np.ndarray:
    """Per-channel circular convolution with a kernel centered at the origin."""
    t = as_tensor(x)
    otf = kernel_spectrum(kernel, t.shape[:2])
    return ifft2(fft2(t) * otf[:, :, None])


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the inputs are identical."""
    x = as_tensor(a)
    y = as_tensor(b)
    if x.shape != y.shape:
        raise ContractError(f"shape mismatch: {x.shape} vs {y.shape}")
    if peak <= 0:
        raise ContractError(f"peak must be positive, got {peak}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def clip_to_range(x, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    if not lo < hi:
        raise ContractError(f"need lo < hi, got [{lo}, {hi}]")
    return np.clip(as_tensor(x), lo, hi)
