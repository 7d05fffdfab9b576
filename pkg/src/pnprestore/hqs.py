"""Half-quadratic splitting with a plug-in denoiser.

Each iteration solves the fidelity subproblem

    x_{k+1} = argmin_x ||y - Hx||^2 + mu_k ||x - z_k||^2

and then replaces the prior's proximal step with a denoiser run at noise
level ``sigma_k = sqrt(lambda / mu_k)``:

    z_{k+1} = denoise(x_{k+1}, sigma_k)

Noise levels are given in 8-bit units (0..255 scale, usually 1..50) and
converted to the [0, 1] image scale, ``sigma / 255``, right where ``mu`` is
formed. ``lambda`` is always in image-scale units.
"""

from __future__ import annotations

import glob
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import ContractError, IterationError, ValidationError
from .kernels import gaussian_kernel
from .network import WeightBundle, fold_bn, forward
from .tensor import as_tensor, circular_conv, psnr

log = logging.getLogger(__name__)


class DenoiserPrior(Protocol):
    def denoise(self, image: np.ndarray, level: float) -> np.ndarray:
        """Return a denoised copy of ``image``; ``level`` in 8-bit units."""


class FidelitySolver(Protocol):
    def solve(self, y: np.ndarray, z: np.ndarray, mu: float) -> np.ndarray:
        """Minimize ``||y - Hx||^2 + mu ||x - z||^2`` over ``x``."""


@dataclass
class DenoiserModelSet:
    """Trained networks keyed by their noise level."""

    models: dict
    failures: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.models:
            raise ValidationError("a model set needs at least one model")
        self.models = {float(k): v for k, v in sorted(self.models.items())}
        channels = {b.spec.channels_in for b in self.models.values()}
        if len(channels) != 1:
            raise ValidationError(f"models disagree on channel count: {sorted(channels)}")

    @property
    def levels(self) -> list[float]:
        return list(self.models)

    @property
    def channels(self) -> int:
        return next(iter(self.models.values())).spec.channels_in

    def __len__(self):
        return len(self.models)

    @classmethod
    def from_dir(cls, path) -> "DenoiserModelSet":
        from .weightfile import load_weights

        files = sorted(glob.glob(os.path.join(path, "*.irwb")))
        if not files:
            raise FileNotFoundError(f"no weight files (*.irwb) in {path}")
        models = {}
        for f in files:
            bundle = load_weights(f)
            models[bundle.trained_noise_level] = bundle
        return cls(models)


def select_denoiser(model_set: DenoiserModelSet, level: float) -> WeightBundle:
    """The model trained nearest to ``level``; ties go to the higher level."""
    if model_set is None or not model_set.models:
        raise ValidationError("empty model set")
    best = min(model_set.levels, key=lambda s: (abs(s - level), -s))
    return model_set.models[best]


class CNNPrior:
    """Denoiser prior backed by a model set.

    A gray model set given a color image denoises each channel separately.
    """

    def __init__(self, model_set: DenoiserModelSet):
        self.model_set = model_set
        self._folded = {}

    def _model(self, level):
        bundle = select_denoiser(self.model_set, level)
        key = id(bundle)
        if key not in self._folded:
            self._folded[key] = fold_bn(bundle)
        return self._folded[key]

    def denoise(self, image, level):
        x = as_tensor(image)
        model = self._model(level)
        c = model.spec.channels_in
        if x.shape[2] == c:
            return forward(model, x)
        if c == 1:
            return np.concatenate([forward(model, x[:, :, i:i + 1]) for i in range(x.shape[2])],
                                  axis=2)
        raise ContractError(f"{c}-channel models cannot denoise a {x.shape[2]}-channel image")


class GaussianSmoothingPrior:
    """Training-free stand-in prior: circular Gaussian blur.

    Blur std in pixels is ``level / 10 + 0.5``. With ``level`` fixed at
    construction the per-call level is ignored.
    """

    def __init__(self, level: float | None = None):
        if level is not None and level <= 0:
            raise ValidationError("smoothing level must be positive")
        self.level = level

    @staticmethod
    def kernel_for(level: float) -> np.ndarray:
        std = level / 10.0 + 0.5
        return gaussian_kernel(std, 2 * math.ceil(4 * std) + 1)

    def denoise(self, image, level):
        lv = self.level if self.level is not None else level
        if lv <= 0:
            raise ValidationError("smoothing level must be positive")
        return circular_conv(image, self.kernel_for(lv))


def gaussian_smoothing_prior(level: float | None = None) -> GaussianSmoothingPrior:
    return GaussianSmoothingPrior(level)


class IdentitySolver:
    """Fidelity step for ``H = I`` (pure denoising)."""

    def solve(self, y, z, mu):
        return (as_tensor(y) + mu * as_tensor(z)) / (1.0 + mu)

    def apply(self, x):
        return as_tensor(x)


@dataclass(frozen=True)
class HqsSchedule:
    levels: tuple
    lam: float

    def __post_init__(self):
        lv = tuple(float(s) for s in self.levels)
        object.__setattr__(self, "levels", lv)
        if not lv:
            raise ValidationError("schedule needs at least one iteration")
        if any(s <= 0 for s in lv):
            raise ValidationError("denoiser levels must be positive")
        if any(b > a for a, b in zip(lv, lv[1:])):
            raise ValidationError("denoiser levels must be non-increasing")
        if not self.lam > 0:
            raise ValidationError(f"lambda must be positive, got {self.lam}")

    @property
    def iterations(self) -> int:
        return len(self.levels)

    @property
    def mus(self) -> list[float]:
        return [mu_from_level(self.lam, s / 255.0) for s in self.levels]


def build_schedule_exp(sigma_start: float = 49.0, sigma_end: float = 1.0,
                       iterations: int = 30) -> list[float]:
    """Exponential decay from ``sigma_start`` to ``sigma_end`` with exact endpoints."""
    if iterations < 2:
        raise ValidationError("need at least 2 iterations for an exponential schedule")
    if not sigma_start >= sigma_end > 0:
        raise ValidationError(f"need sigma_start >= sigma_end > 0, got {sigma_start}, {sigma_end}")
    ratio = sigma_end / sigma_start
    levels = [sigma_start * ratio ** (k / (iterations - 1)) for k in range(iterations)]
    levels[0], levels[-1] = float(sigma_start), float(sigma_end)
    return levels


def mu_from_level(lam: float, level: float) -> float:
    """Penalty weight making ``sqrt(lam / mu) == level`` (same units for both)."""
    return lam / (level * level)


def default_lambda(sigma_noise: float, rho: float = 1.0) -> float:
    """``rho * (sigma_noise / 255)^2``; noise below 0.5 is floored to keep ``mu > 0``."""
    return rho * (max(sigma_noise, 0.5) / 255.0) ** 2


def default_sigma_end(sigma_noise: float) -> float:
    return max(1.0, min(15.0, sigma_noise))


def hqs_solve(y, solver: FidelitySolver, prior: DenoiserPrior, schedule: HqsSchedule,
              x0=None, return_x: bool = False, ground_truth=None,
              callback: Callable[[dict], None] | None = None, verbose: int = 0) -> np.ndarray:
    """Run the splitting iterations and return the final estimate clipped to [0, 1].

    ``x0`` seeds ``z_0`` (defaults to ``y``). The result is ``z_K`` unless
    ``return_x`` is set. ``callback`` receives a dict per iteration with the
    level, ``mu``, an energy surrogate (data term plus coupling term, when
    the solver exposes ``apply``) and the PSNR against ``ground_truth``.
    """
    y = as_tensor(y)
    z = as_tensor(x0) if x0 is not None else y.copy()
    x = z
    for k, (level, mu) in enumerate(zip(schedule.levels, schedule.mus), start=1):
        try:
            x = as_tensor(solver.solve(y, z, mu))
        except Exception as exc:
            raise IterationError(f"fidelity solver failed: {exc}", k) from exc
        try:
            z = as_tensor(prior.denoise(x, level))
        except Exception as exc:
            raise IterationError(f"denoiser failed at level {level:g}: {exc}", k) from exc
        if z.shape != x.shape:
            raise IterationError(f"denoiser changed shape {x.shape} -> {z.shape}", k)
        if callback is not None or verbose:
            info = {"iteration": k, "level": level, "mu": mu}
            if hasattr(solver, "apply"):
                info["energy"] = (0.5 * float(np.sum((y - solver.apply(x)) ** 2))
                                  + 0.5 * mu * float(np.sum((z - x) ** 2)))
            if ground_truth is not None:
                info["psnr"] = psnr(np.clip(z, 0, 1), ground_truth)
            if verbose:
                log.info("hqs %2d/%d level=%.3f mu=%.4g%s%s", k, schedule.iterations, level, mu,
                         f" energy={info['energy']:.6g}" if "energy" in info else "",
                         f" psnr={info['psnr']:.2f}" if "psnr" in info else "")
            if callback is not None:
                callback(info)
    return np.clip(x if return_x else z, 0.0, 1.0)
