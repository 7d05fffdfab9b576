"""The 7-layer dilated residual denoiser.

Layer layout (default): ``conv+relu``, five ``conv+bn+relu`` blocks, then a
final ``conv``, with dilations 1, 2, 3, 4, 3, 2, 1 and 3x3 kernels. The
network predicts the noise; the denoised image is ``input - prediction``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, ValidationError
from .tensor import as_tensor, dilated_conv_nhwc

DEFAULT_DILATIONS = (1, 2, 3, 4, 3, 2, 1)
# float32-representable so it survives the weight file unchanged
BN_EPS = float(np.float32(1e-5))


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    dilation: int = 1
    has_bn: bool = False
    has_relu: bool = False

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValidationError(f"layer channel counts must be >= 1: {self}")
        if self.dilation < 1:
            raise ValidationError(f"dilation must be >= 1: {self}")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    channels_in: int = 1
    feature_width: int = 64

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.layers:
            if self.layers[0].in_channels != self.channels_in:
                raise ValidationError("first layer must consume channels_in")
            if self.layers[-1].out_channels != self.channels_in:
                raise ValidationError("last layer must produce channels_in")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ValidationError(f"layer chain broken: {prev} -> {nxt}")

    @classmethod
    def build(cls, channels_in: int = 1, feature_width: int = 64,
              dilations=DEFAULT_DILATIONS) -> "NetworkSpec":
        """conv+relu, then conv+bn+relu blocks, then a plain conv."""
        dilations = tuple(dilations)
        depth = len(dilations)
        layers = []
        for i, s in enumerate(dilations):
            first, last = i == 0, i == depth - 1
            layers.append(LayerSpec(
                in_channels=channels_in if first else feature_width,
                out_channels=channels_in if last else feature_width,
                dilation=s,
                has_bn=not first and not last,
                has_relu=not last,
            ))
        return cls(tuple(layers), channels_in, feature_width)


def receptive_field(spec: NetworkSpec) -> int:
    """Side length of the square input window seen by one output pixel."""
    return 1 + sum(2 * layer.dilation for layer in spec.layers)


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = BN_EPS

    def __post_init__(self):
        if np.any(np.asarray(self.var) < 0):
            raise ValidationError("batch-norm running variance must be >= 0")
        if self.eps < 0:
            raise ValidationError("batch-norm epsilon must be >= 0")

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "BnParams":
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype))


@dataclass
class LayerParams:
    spec: LayerSpec
    weight: np.ndarray          # (out, in, 3, 3)
    bias: np.ndarray            # (out,)
    bn: BnParams | None = None


@dataclass
class WeightBundle:
    spec: NetworkSpec
    layers: list[LayerParams] = field(default_factory=list)
    trained_noise_level: float = 0.0

    def __post_init__(self):
        if len(self.layers) != len(self.spec.layers):
            raise ContractError("one LayerParams per LayerSpec required")
        for lp, ls in zip(self.layers, self.spec.layers):
            if lp.spec != ls:
                raise ContractError(f"layer parameters do not match spec: {lp.spec} vs {ls}")
            if lp.weight.shape != (ls.out_channels, ls.in_channels, 3, 3):
                raise ContractError(f"bad kernel shape {lp.weight.shape} for {ls}")
            if lp.bias.shape != (ls.out_channels,):
                raise ContractError(f"bad bias shape {lp.bias.shape} for {ls}")
            if ls.has_bn and lp.bn is None:
                raise ContractError(f"layer {ls} declares batch norm but has no parameters")

    def astype(self, dtype) -> "WeightBundle":
        def cast(a):
            return np.array(a, dtype=dtype)
        layers = []
        for lp in self.layers:
            bn = None
            if lp.bn is not None:
                bn = BnParams(cast(lp.bn.gamma), cast(lp.bn.beta), cast(lp.bn.mean),
                              cast(lp.bn.var), lp.bn.eps)
            layers.append(LayerParams(lp.spec, cast(lp.weight), cast(lp.bias), bn))
        return WeightBundle(self.spec, layers, self.trained_noise_level)

    def copy(self) -> "WeightBundle":
        return self.astype(self.layers[0].weight.dtype if self.layers else np.float32)

    def check_finite(self) -> None:
        for i, lp in enumerate(self.layers):
            arrays = [lp.weight, lp.bias]
            if lp.bn is not None:
                arrays += [lp.bn.gamma, lp.bn.beta, lp.bn.mean, lp.bn.var]
            if not all(np.all(np.isfinite(a)) for a in arrays):
                raise ValidationError(f"layer {i} has non-finite parameters")


def init_weights(spec: NetworkSpec, rng: np.random.Generator, noise_level: float = 0.0,
                 dtype=np.float32) -> WeightBundle:
    """Fan-in scaled uniform kernels, zero biases, identity batch norm."""
    layers = []
    for ls in spec.layers:
        bound = math.sqrt(6.0 / (ls.in_channels * 9))
        w = rng.uniform(-bound, bound, size=(ls.out_channels, ls.in_channels, 3, 3))
        bn = BnParams.identity(ls.out_channels, dtype) if ls.has_bn else None
        layers.append(LayerParams(ls, w.astype(dtype), np.zeros(ls.out_channels, dtype), bn))
    return WeightBundle(spec, layers, float(noise_level))


def zero_weights(spec: NetworkSpec, dtype=np.float32) -> WeightBundle:
    layers = []
    for ls in spec.layers:
        bn = BnParams.identity(ls.out_channels, dtype) if ls.has_bn else None
        layers.append(LayerParams(ls, np.zeros((ls.out_channels, ls.in_channels, 3, 3), dtype),
                                  np.zeros(ls.out_channels, dtype), bn))
    return WeightBundle(spec, layers)


def fold_bn(bundle: WeightBundle) -> WeightBundle:
    """Absorb inference batch-norm statistics into the preceding convolution.

    ``w' = g/sqrt(v+eps) * w`` and ``b' = beta + g*(b - mean)/sqrt(v+eps)``.
    """
    layers, specs = [], []
    for lp in bundle.layers:
        if lp.bn is None:
            layers.append(lp)
            specs.append(lp.spec)
            continue
        bn = lp.bn
        denom = np.asarray(bn.var, np.float64) + bn.eps
        if np.any(denom <= 0):
            raise ValidationError("cannot fold batch norm with zero variance and eps = 0")
        scale = np.asarray(bn.gamma, np.float64) / np.sqrt(denom)
        dtype = lp.weight.dtype
        w = (lp.weight.astype(np.float64) * scale[:, None, None, None]).astype(dtype)
        b = (bn.beta + scale * (lp.bias.astype(np.float64) - bn.mean)).astype(dtype)
        spec = replace(lp.spec, has_bn=False)
        layers.append(LayerParams(spec, w, b, None))
        specs.append(spec)
    net = NetworkSpec(tuple(specs), bundle.spec.channels_in, bundle.spec.feature_width)
    return WeightBundle(net, layers, bundle.trained_noise_level)


def predict_residual(bundle: WeightBundle, batch: np.ndarray, fold: bool = True) -> np.ndarray:
    """Noise estimate for a ``(n, h, w, c)`` float64 batch (inference-mode batch norm)."""
    net = fold_bn(bundle) if fold else bundle
    h = batch
    for lp in net.layers:
        h = dilated_conv_nhwc(h, lp.weight.astype(np.float64), lp.bias.astype(np.float64),
                              lp.spec.dilation)
        if lp.bn is not None:
            bn = lp.bn
            h = (np.asarray(bn.gamma, np.float64) * (h - bn.mean)
                 / np.sqrt(np.asarray(bn.var, np.float64) + bn.eps) + bn.beta)
        if lp.spec.has_relu:
            np.maximum(h, 0.0, out=h)
    return h


def forward(bundle: WeightBundle, noisy, fold: bool = True) -> np.ndarray:
    """Denoise one tensor: ``noisy - residual(noisy)``."""
    x = as_tensor(noisy)
    if x.shape[2] != bundle.spec.channels_in:
        raise ContractError(
            f"input has {x.shape[2]} channels, network expects {bundle.spec.channels_in}")
    out = x - predict_residual(bundle, x[None], fold=fold)[0]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite activation in denoiser forward pass; "
                                 "weights are probably corrupted")
    return out
