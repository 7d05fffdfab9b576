"""Restoration tasks built on the splitting engine.

* deblurring: circular-boundary blur, exact FFT fidelity solve;
* super-resolution: iterated back-projection as the fidelity step;
* denoising: one forward pass of the nearest-level network.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ContractError, ValidationError
from .hqs import (CNNPrior, DenoiserModelSet, HqsSchedule, build_schedule_exp, default_lambda,
                  default_sigma_end, hqs_solve)
from .kernels import gaussian_kernel
from .tensor import as_tensor, circular_conv, clip_to_range, fft2, ifft2, kernel_spectrum

log = logging.getLogger(__name__)

DOWNSAMPLE_KINDS = ("none", "direct", "bicubic")


@dataclass(frozen=True)
class DegradationSpec:
    """``y = downsample(blur(x)) + noise``.

    ``kernel=None`` means no blur. ``kind="bicubic"`` replaces blur and
    subsampling by bicubic (antialiased) downscaling. ``sigma`` is the noise
    standard deviation in 8-bit units. ``offset`` is the sampling phase of
    direct subsampling.
    """

    kernel: np.ndarray | None = None
    sf: int = 1
    kind: str = "none"
    sigma: float = 0.0
    offset: tuple = (0, 0)

    def __post_init__(self):
        if self.kind not in DOWNSAMPLE_KINDS:
            raise ValidationError(f"unknown downsample kind {self.kind!r}")
        if self.sf < 1 or int(self.sf) != self.sf:
            raise ValidationError(f"scale factor must be a positive integer, got {self.sf}")
        if self.kind == "none" and self.sf != 1:
            raise ValidationError("scale factor > 1 needs a downsample kind")
        if self.sigma < 0:
            raise ValidationError("noise level must be >= 0")
        if self.kernel is not None:
            k = np.asarray(self.kernel, dtype=np.float64)
            if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
                raise ValidationError(f"blur kernel must be 2-D and odd-sized, got {k.shape}")
            if not np.all(np.isfinite(k)) or abs(k.sum() - 1.0) > 1e-6:
                raise ValidationError("blur kernel must be finite and sum to 1")
            object.__setattr__(self, "kernel", k)

    def apply(self, x) -> np.ndarray:
        """Noise-free degradation ``Hx``."""
        x = as_tensor(x)
        if self.kind == "bicubic":
            return bicubic_resize(x, 1.0 / self.sf)
        if self.kernel is not None:
            x = circular_conv(x, self.kernel)
        if self.kind == "direct":
            r, c = self.offset
            x = x[r::self.sf, c::self.sf]
        return x


def degrade(x, spec: DegradationSpec, seed=None) -> np.ndarray:
    """Synthesize an observation; not clipped to [0, 1]."""
    x = as_tensor(x)
    if spec.kernel is not None and (spec.kernel.shape[0] > x.shape[0]
                                    or spec.kernel.shape[1] > x.shape[1]):
        raise ContractError(f"kernel {spec.kernel.shape} is larger than the image {x.shape[:2]}")
    y = spec.apply(x)
    if spec.sigma > 0:
        rng = np.random.default_rng(seed)
        y = y + rng.standard_normal(y.shape) * (spec.sigma / 255.0)
    return y


# --------------------------------------------------------------------------
# deblurring

def fft_deblur_solve(y, z, mu: float, kernel) -> np.ndarray:
    """Closed-form ``argmin ||y - k*x||^2 + mu ||x - z||^2`` under circular boundaries."""
    if not mu > 0:
        raise ValidationError(f"mu must be positive, got {mu}")
    y, z = as_tensor(y), as_tensor(z)
    if y.shape != z.shape:
        raise ContractError(f"shape mismatch: {y.shape} vs {z.shape}")
    otf = kernel_spectrum(kernel, y.shape[:2])[:, :, None]
    num = np.conj(otf) * fft2(y) + mu * fft2(z)
    return ifft2(num / (np.abs(otf) ** 2 + mu))


class FFTDeblurSolver:
    """Fidelity solver for circular blur; caches the kernel spectrum per image size."""

    def __init__(self, kernel):
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self._cache = {}

    def _terms(self, y):
        key = y.shape
        if key not in self._cache:
            otf = kernel_spectrum(self.kernel, y.shape[:2])[:, :, None]
            self._cache[key] = (otf, np.conj(otf) * fft2(y), np.abs(otf) ** 2)
        return self._cache[key]

    def solve(self, y, z, mu):
        if not mu > 0:
            raise ValidationError(f"mu must be positive, got {mu}")
        y, z = as_tensor(y), as_tensor(z)
        _, kty, k2 = self._terms(y)
        return ifft2((kty + mu * fft2(z)) / (k2 + mu))

    def apply(self, x):
        return circular_conv(x, self.kernel)


def deblur_task(y, kernel, sigma_noise: float, prior, iterations: int = 30,
                sigma_start: float = 49.0, sigma_end: float | None = None, rho: float = 1.0,
                ground_truth=None, verbose: int = 0) -> np.ndarray:
    y = as_tensor(y)
    end = default_sigma_end(sigma_noise) if sigma_end is None else sigma_end
    schedule = HqsSchedule(build_schedule_exp(sigma_start, end, iterations),
                           default_lambda(sigma_noise, rho))
    if verbose:
        log.info("deblur schedule %.3g -> %.3g over %d iterations, lambda=%.4g",
                 schedule.levels[0], schedule.levels[-1], iterations, schedule.lam)
    return hqs_solve(y, FFTDeblurSolver(kernel), prior, schedule, x0=y,
                     ground_truth=ground_truth, verbose=verbose)


# --------------------------------------------------------------------------
# bicubic resampling (cubic convolution, a = -0.5, symmetric boundaries)

def cubic(x):
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return ((1.5 * ax3 - 2.5 * ax2 + 1.0) * (ax <= 1)
            + (-0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0) * ((ax > 1) & (ax <= 2)))


@lru_cache(maxsize=64)
def resize_matrix(in_len: int, out_len: int, scale: float, antialias: bool = True) -> np.ndarray:
    """Dense ``(out_len, in_len)`` interpolation matrix along one axis."""
    width = 4.0
    if scale < 1 and antialias:
        def kern(t):
            return scale * cubic(scale * t)
        width = width / scale
    else:
        kern = cubic
    u = np.arange(1, out_len + 1) / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(u - width / 2.0)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = kern(u[:, None] - idx)
    weights /= weights.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
    cols = mirror[(idx.astype(np.int64) - 1) % (2 * in_len)]
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.repeat(np.arange(out_len), taps), cols.ravel()), weights.ravel())
    return mat


def bicubic_resize(x, factor: float, antialias: bool = True, out_shape=None) -> np.ndarray:
    """Cubic-convolution resize; output size ``ceil(factor * size)`` unless given."""
    if not factor > 0:
        raise ValidationError(f"resize factor must be positive, got {factor}")
    x = as_tensor(x)
    h, w = x.shape[:2]
    oh, ow = out_shape if out_shape is not None else (math.ceil(h * factor - 1e-9),
                                                      math.ceil(w * factor - 1e-9))
    if oh < 1 or ow < 1:
        raise ContractError(f"resize to {oh}x{ow} leaves no pixels")
    mh = resize_matrix(h, oh, float(factor), antialias)
    mw = resize_matrix(w, ow, float(factor), antialias)
    return np.einsum("ij,jkc,lk->ilc", mh, x, mw)


# --------------------------------------------------------------------------
# super-resolution

def backproject_step(x, y, spec: DegradationSpec, alpha: float = 1.75,
                     literal_sign: bool = False) -> np.ndarray:
    """One back-projection correction ``x + alpha * up(y - down(x))``.

    The update is the direction that shrinks ``||y - down(x)||``. With
    ``literal_sign`` the opposite sign ``x - alpha * up(y - down(x))`` is
    used instead, which grows the residual.
    """
    x, y = as_tensor(x), as_tensor(y)
    if alpha < 0:
        raise ValidationError("step size must be >= 0")
    down = spec.apply(x)
    if down.shape != y.shape:
        raise ContractError(f"degraded estimate {down.shape} does not match observation {y.shape}")
    residual = y - down
    up = bicubic_resize(residual, spec.sf, out_shape=x.shape[:2]) if spec.sf > 1 else residual
    return x - alpha * up if literal_sign else x + alpha * up


class BackProjectionSolver:
    """Approximate fidelity step: ``steps`` back-projections started from ``z``.

    ``mu`` is not used; the step count and ``alpha`` set the data weight.
    """

    def __init__(self, spec: DegradationSpec, alpha: float = 1.75, steps: int = 5,
                 literal_sign: bool = False):
        self.spec = spec
        self.alpha = alpha
        self.steps = steps
        self.literal_sign = literal_sign

    def solve(self, y, z, mu):
        x = as_tensor(z)
        for _ in range(self.steps):
            x = backproject_step(x, y, self.spec, self.alpha, self.literal_sign)
        return x

    def apply(self, x):
        return self.spec.apply(x)


@dataclass
class SisrConfig:
    iterations: int = 30
    alpha: float = 1.75
    backprojections: int = 5
    sigma_start: float | None = None    # defaults to 12 * sf
    sigma_end: float | None = None      # defaults to sf
    lam: float | None = None
    channel_mode: str = "rgb"           # rgb | y | per-channel
    literal_sign: bool = False
    verbose: int = 0

    def schedule(self, sf: int) -> HqsSchedule:
        start = 12.0 * sf if self.sigma_start is None else self.sigma_start
        end = float(sf) if self.sigma_end is None else self.sigma_end
        if self.iterations == 1:
            levels = [end]
        else:
            levels = build_schedule_exp(start, end, self.iterations)
        # mu is unused by back-projection; lambda only has to be valid
        return HqsSchedule(levels, self.lam if self.lam is not None else 1.0)


def rgb_to_ycbcr(x) -> np.ndarray:
    """ITU-R BT.601 conversion for [0, 1] RGB (studio-swing output)."""
    x = as_tensor(x)
    return x @ _YCC.T + _YCC_OFFSET


def ycbcr_to_rgb(x) -> np.ndarray:
    x = as_tensor(x)
    return (x - _YCC_OFFSET) @ np.linalg.inv(_YCC).T


_YCC = np.array([[65.481, 128.553, 24.966],
                 [-37.797, -74.203, 112.0],
                 [112.0, -93.786, -18.214]]) / 255.0
_YCC_OFFSET = np.array([16.0, 128.0, 128.0]) / 255.0


def sisr_solve(y, spec: DegradationSpec, prior, cfg: SisrConfig | None = None,
               ground_truth=None) -> np.ndarray:
    """Super-resolve ``y``: bicubic start, then back-projection/denoise alternation."""
    cfg = cfg or SisrConfig()
    y = as_tensor(y)
    sf = spec.sf
    if sf not in (1, 2, 3, 4):
        raise ValidationError(f"unsupported scale factor {sf}")
    schedule = cfg.schedule(sf)
    if cfg.verbose:
        log.info("sr schedule %.3g -> %.3g over %d iterations, alpha=%g, %d back-projections",
                 schedule.levels[0], schedule.levels[-1], schedule.iterations, cfg.alpha,
                 cfg.backprojections)
    solver = BackProjectionSolver(spec, cfg.alpha, cfg.backprojections, cfg.literal_sign)
    if cfg.channel_mode == "y" and y.shape[2] == 3:
        ycc = rgb_to_ycbcr(y)
        up = bicubic_resize(ycc, sf) if sf > 1 else ycc
        gt_y = rgb_to_ycbcr(ground_truth)[:, :, :1] if ground_truth is not None else None
        luma = hqs_solve(ycc[:, :, :1], solver, prior, schedule, x0=up[:, :, :1],
                         ground_truth=gt_y, verbose=cfg.verbose)
        return clip_to_range(ycbcr_to_rgb(np.concatenate([luma, up[:, :, 1:]], axis=2)))
    x0 = bicubic_resize(y, sf) if sf > 1 else y
    return hqs_solve(y, solver, prior, schedule, x0=x0, ground_truth=ground_truth,
                     verbose=cfg.verbose)


# --------------------------------------------------------------------------
# denoising

def denoise_task(y, sigma: float, model_set: DenoiserModelSet | None = None,
                 prior=None) -> np.ndarray:
    """Single denoiser pass at the nearest trained level (``H = I``)."""
    if model_set is None and prior is None:
        raise ValidationError("need a model set or a prior")
    if not 0 < sigma <= 50:
        clamped = min(max(sigma, 1e-3), 50.0)
        log.warning("noise level %g outside (0, 50]; using %g", sigma, clamped)
        sigma = clamped
    den = prior if prior is not None else CNNPrior(model_set)
    return clip_to_range(den.denoise(as_tensor(y), sigma))


def gaussian_blur_spec(std: float = 1.6, size: int = 25, sigma: float = 2.0) -> DegradationSpec:
    return DegradationSpec(gaussian_kernel(std, size), 1, "none", sigma)


def sr_spec(sf: int, kind: str = "bicubic", sigma: float = 0.0) -> DegradationSpec:
    """``bicubic`` or ``gaussian-ds`` (7x7 Gaussian, std 1.6, then direct subsampling)."""
    if kind == "bicubic":
        return DegradationSpec(None, sf, "bicubic", sigma)
    if kind == "gaussian-ds":
        return DegradationSpec(gaussian_kernel(1.6, 7), sf, "direct", sigma)
    raise ValidationError(f"unknown SR degradation {kind!r}")
