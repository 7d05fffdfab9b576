"""Discriminative training of the residual denoisers.

Loss: ``1/(2N) * sum_i ||f(y_i) - (y_i - x_i)||_F^2`` over a mini-batch of
``N`` noisy/clean patch pairs. Gradients are computed by explicit reverse-mode
kernels for the three block types (conv, batch norm, ReLU).

Convolution biases in batch-norm layers are held at zero and are not
trained: batch statistics cancel them exactly, so their gradient is zero.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, TrainingDiverged, ValidationError
from .network import NetworkSpec, WeightBundle, init_weights
from .tensor import im2col, weight_matrix

log = logging.getLogger(__name__)

MIN_PATCH_SIZE = 10


@dataclass
class TrainConfig:
    patch_size: int = 35
    batch_size: int = 256
    lr_initial: float = 1e-3
    lr_drop: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # epochs without a new best epoch loss before the lr drop / termination
    lr_drop_epochs: int = 3
    plateau_epochs: int = 5
    augment: bool = True
    seed: int = 0
    channels: int = 1
    feature_width: int = 64
    dilations: tuple = (1, 2, 3, 4, 3, 2, 1)
    # full scale is 256 * 4000 patches per epoch
    patches_per_epoch: int = 256 * 50
    max_steps: int | None = None
    max_epochs: int | None = None
    bn_momentum: float = 0.9
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.patch_size < 1:
            raise ValidationError("patch_size must be >= 1")
        if self.patch_size < MIN_PATCH_SIZE:
            warnings.warn(f"patch_size {self.patch_size} is below {MIN_PATCH_SIZE}; patches "
                          "smaller than the receptive field degrade denoising quality",
                          stacklevel=2)

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec.build(self.channels, self.feature_width, self.dilations)

    @property
    def steps_per_epoch(self) -> int:
        return max(1, self.patches_per_epoch // self.batch_size)


@dataclass(frozen=True)
class NoiseLevelGrid:
    levels: tuple[float, ...] = tuple(float(s) for s in range(2, 51, 2))

    def __post_init__(self):
        lv = tuple(float(s) for s in self.levels)
        object.__setattr__(self, "levels", lv)
        if not lv:
            raise ValidationError("noise level grid is empty")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValidationError(f"noise levels must be strictly increasing: {lv}")
        if lv[0] < 0 or lv[-1] > 50:
            raise ValidationError(f"noise levels must lie in [0, 50]: {lv}")

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)


@dataclass
class PatchBatch:
    clean: np.ndarray   # (n, p, p, c)
    noisy: np.ndarray
    sigma: float

    def __len__(self):
        return self.clean.shape[0]


# --------------------------------------------------------------------------
# reverse-mode kernels

def backward_relu(grad: np.ndarray, pre_activation: np.ndarray) -> np.ndarray:
    return grad * (pre_activation > 0)


def backward_conv(grad: np.ndarray, x: np.ndarray, weight: np.ndarray, dilation: int,
                  need_input_grad: bool = True, cols: np.ndarray | None = None):
    """Gradients of a same-size dilated cross-correlation.

    Returns ``(d_input, d_weight, d_bias)``; ``d_input`` is None when not
    requested. ``cols`` may pass in the forward pass's :func:`im2col` buffer.
    """
    n, h, w, c = x.shape
    o, _, kh, kw = weight.shape
    if grad.shape != (n, h, w, o):
        raise ContractError(f"gradient shape {grad.shape} does not match conv output")
    g2 = grad.reshape(-1, o)
    if cols is None:
        cols = im2col(x, kh, kw, dilation)
    cols = cols.reshape(-1, kh * kw * c)
    d_mat = cols.T @ g2
    d_weight = np.transpose(d_mat.reshape(kh, kw, c, o), (3, 2, 0, 1)).copy()
    d_bias = g2.sum(axis=0)
    if not need_input_grad:
        return None, d_weight, d_bias
    dcols = (g2 @ weight_matrix(weight, grad.dtype).T).reshape(n, h, w, kh * kw, c)
    s = int(dilation)
    ph, pw = s * (kh // 2), s * (kw // 2)
    dxp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=grad.dtype)
    for a in range(kh):
        for b in range(kw):
            dxp[:, a * s:a * s + h, b * s:b * s + w, :] += dcols[:, :, :, a * kw + b, :]
    return dxp[:, ph:ph + h, pw:pw + w, :], d_weight, d_bias


def backward_bn(grad: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, gamma: np.ndarray):
    """Batch-norm gradients using batch statistics. Returns ``(dx, dgamma, dbeta)``."""
    if grad.shape != xhat.shape:
        raise ContractError(f"gradient shape {grad.shape} does not match {xhat.shape}")
    axes = (0, 1, 2)
    m = grad.shape[0] * grad.shape[1] * grad.shape[2]
    d_beta = grad.sum(axis=axes)
    d_gamma = (grad * xhat).sum(axis=axes)
    dxhat = grad * gamma
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, d_gamma, d_beta


# --------------------------------------------------------------------------
# training-mode forward / loss

def trainable_parameters(bundle: WeightBundle) -> dict[str, np.ndarray]:
    """Live references to every trained array, keyed ``"<layer>.<name>"``."""
    params = {}
    for i, lp in enumerate(bundle.layers):
        params[f"{i}.weight"] = lp.weight
        if lp.bn is None:
            params[f"{i}.bias"] = lp.bias
        else:
            params[f"{i}.gamma"] = lp.bn.gamma
            params[f"{i}.beta"] = lp.bn.beta
    return params


def _forward_train(bundle: WeightBundle, x: np.ndarray):
    caches, stats = [], []
    h = x
    for lp in bundle.layers:
        cols = im2col(h, 3, 3, lp.spec.dilation)
        cache = {"input": h, "cols": cols}
        z = cols @ weight_matrix(lp.weight, h.dtype) + lp.bias.astype(h.dtype, copy=False)
        if lp.bn is not None:
            mean = z.mean(axis=(0, 1, 2))
            var = z.var(axis=(0, 1, 2))
            inv_std = 1.0 / np.sqrt(var + lp.bn.eps)
            xhat = (z - mean) * inv_std
            cache.update(xhat=xhat, inv_std=inv_std)
            stats.append((mean, var))
            z = lp.bn.gamma * xhat + lp.bn.beta
        else:
            stats.append(None)
        if lp.spec.has_relu:
            cache["pre"] = z
            z = np.maximum(z, 0)
        caches.append(cache)
        h = z
    return h, caches, stats


def _backward(bundle: WeightBundle, grad: np.ndarray, caches) -> dict[str, np.ndarray]:
    grads = {}
    for i in reversed(range(len(bundle.layers))):
        lp, cache = bundle.layers[i], caches[i]
        if lp.spec.has_relu:
            grad = backward_relu(grad, cache["pre"])
        if lp.bn is not None:
            grad, grads[f"{i}.gamma"], grads[f"{i}.beta"] = backward_bn(
                grad, cache["xhat"], cache["inv_std"], lp.bn.gamma)
        grad, grads[f"{i}.weight"], d_bias = backward_conv(
            grad, cache["input"], lp.weight, lp.spec.dilation, need_input_grad=i > 0,
            cols=cache["cols"])
        if lp.bn is None:
            grads[f"{i}.bias"] = d_bias
    return grads


def _loss_grads_stats(bundle: WeightBundle, batch: PatchBatch):
    if len(batch) == 0:
        raise ContractError("empty batch")
    dtype = bundle.layers[0].weight.dtype if bundle.layers else np.float64
    noisy = batch.noisy.astype(dtype, copy=False)
    target = (batch.noisy - batch.clean).astype(dtype, copy=False)
    if noisy.shape[-1] != bundle.spec.channels_in:
        raise ContractError(f"batch has {noisy.shape[-1]} channels, network expects "
                            f"{bundle.spec.channels_in}")
    pred, caches, stats = _forward_train(bundle, noisy)
    err = pred - target
    n = len(batch)
    loss = 0.5 * float(np.sum(np.square(err, dtype=np.float64))) / n
    grads = _backward(bundle, err / n, caches)
    return loss, grads, stats


def residual_loss(bundle: WeightBundle, batch: PatchBatch):
    """Training-mode loss and gradients for every trainable parameter.

    Batch norm uses the statistics of ``batch``. Returns ``(loss, grads)``
    with ``grads`` keyed like :func:`trainable_parameters`.
    """
    loss, grads, _ = _loss_grads_stats(bundle, batch)
    return loss, grads


# --------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> dict:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape or g.shape != p.shape:
            raise ContractError(f"shape mismatch for {name}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params


# --------------------------------------------------------------------------
# data pipeline

def dihedral(patch: np.ndarray, k: int) -> np.ndarray:
    """One of the 8 rotations/flips of an ``(h, w, c)`` patch (k in 0..7)."""
    out = np.rot90(patch, k % 4, axes=(0, 1))
    if k >= 4:
        out = out[:, ::-1]
    return out


def sample_batch(corpus, cfg: TrainConfig, sigma: float, rng: np.random.Generator) -> PatchBatch:
    """Random crops, a random dihedral transform each, and fresh noise at ``sigma/255``."""
    p = cfg.patch_size
    usable = [img for img in corpus if img.shape[0] >= p and img.shape[1] >= p]
    if not usable:
        raise ValidationError(f"corpus has no image of at least {p}x{p} pixels")
    clean = np.empty((cfg.batch_size, p, p, usable[0].shape[2]))
    for i in range(cfg.batch_size):
        img = usable[rng.integers(len(usable))]
        r = rng.integers(img.shape[0] - p + 1)
        c = rng.integers(img.shape[1] - p + 1)
        patch = img[r:r + p, c:c + p]
        if cfg.augment:
            patch = dihedral(patch, int(rng.integers(8)))
        clean[i] = patch
    noisy = clean + rng.standard_normal(clean.shape) * (sigma / 255.0)
    return PatchBatch(clean, noisy, float(sigma))


# --------------------------------------------------------------------------
# training loops

@dataclass
class TrainingLog:
    step_losses: list = field(default_factory=list)
    epochs: list = field(default_factory=list)


def _update_running_stats(bundle: WeightBundle, stats, momentum: float) -> None:
    for lp, st in zip(bundle.layers, stats):
        if st is None:
            continue
        mean, var = st
        lp.bn.mean *= momentum
        lp.bn.mean += (1.0 - momentum) * mean.astype(lp.bn.mean.dtype)
        lp.bn.var *= momentum
        lp.bn.var += (1.0 - momentum) * var.astype(lp.bn.var.dtype)


def train_level(corpus, cfg: TrainConfig, sigma: float, init: WeightBundle | None = None,
                log_to: TrainingLog | None = None) -> WeightBundle:
    """Train one denoiser at noise level ``sigma`` (8-bit units).

    The learning rate drops from ``lr_initial`` to ``lr_drop`` after
    ``lr_drop_epochs`` epochs without a new best epoch loss; training stops
    after ``plateau_epochs`` such epochs, or at ``max_steps``/``max_epochs``.
    """
    rng = np.random.default_rng([cfg.seed, int(round(sigma * 1000))])
    dtype = np.dtype(cfg.dtype)
    if init is None:
        start = init_weights(cfg.network_spec(), rng, sigma)
    else:
        if init.spec.channels_in != cfg.channels:
            raise ContractError("warm-start weights do not match the configured channels")
        start = init
    work = start.astype(dtype)
    work.trained_noise_level = float(sigma)
    for lp in work.layers:
        if lp.bn is not None:
            lp.bias[:] = 0
    params = trainable_parameters(work)
    state = AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
    lr = cfg.lr_initial
    last_good = work.astype(np.float32)
    best, since_best, step, epoch = math.inf, 0, 0, 0
    done = False
    while not done:
        losses = []
        for _ in range(cfg.steps_per_epoch):
            batch = sample_batch(corpus, cfg, sigma, rng)
            loss, grads, stats = _loss_grads_stats(work, batch)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at step {step} (sigma={sigma}, lr={lr})", last_good)
            adam_step(params, grads, state, lr)
            _update_running_stats(work, stats, cfg.bn_momentum)
            losses.append(loss)
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        epoch += 1
        epoch_loss = float(np.mean(losses))
        if log_to is not None:
            log_to.step_losses.extend(losses)
            log_to.epochs.append({"epoch": epoch, "loss": epoch_loss, "lr": lr, "steps": step})
        log.info("sigma=%g epoch=%d step=%d loss=%.6g lr=%g", sigma, epoch, step, epoch_loss, lr)
        if epoch_loss < best:
            best, since_best = epoch_loss, 0
        else:
            since_best += 1
        if since_best >= cfg.lr_drop_epochs:
            lr = cfg.lr_drop
        if since_best >= cfg.plateau_epochs:
            done = True
        if cfg.max_epochs is not None and epoch >= cfg.max_epochs:
            done = True
        try:
            work.check_finite()
        except ValidationError as exc:
            raise TrainingDiverged(str(exc), last_good) from exc
        last_good = work.astype(np.float32)
    return last_good


def model_filename(level: float) -> str:
    return f"denoiser_s{level:05.2f}.irwb"


def _write_sidecar(path: str, level: float, cfg: TrainConfig, tlog: TrainingLog) -> None:
    last = tlog.epochs[-1] if tlog.epochs else {"epoch": 0, "loss": float("nan"), "lr": cfg.lr_initial}
    with open(path, "w") as fh:
        fh.write(f"sigma = {level:g}\n")
        fh.write(f"epoch = {last['epoch']}\n")
        fh.write(f"loss = {last['loss']:.9g}\n")
        fh.write(f"lr = {last['lr']:g}\n")
        fh.write(f"seed = {cfg.seed}\n")


def train_model_set(corpus, cfg: TrainConfig, grid: NoiseLevelGrid = NoiseLevelGrid(),
                    out_dir=None):
    """Train every grid level in ascending order, warm-starting from the previous one.

    With ``out_dir``, each level is written as soon as it finishes and levels
    whose file already exists are loaded instead of retrained, so an
    interrupted run resumes where it stopped. A failing level is logged and
    skipped; the returned set holds the levels that succeeded.
    """
    from .hqs import DenoiserModelSet
    from .weightfile import load_weights, save_weights

    models, failures = {}, {}
    prev = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for level in grid:
        path = os.path.join(out_dir, model_filename(level)) if out_dir is not None else None
        if path is not None and os.path.exists(path):
            prev = models[level] = load_weights(path)
            log.info("sigma=%g: found %s, skipping", level, path)
            continue
        tlog = TrainingLog()
        try:
            bundle = train_level(corpus, cfg, level, init=prev, log_to=tlog)
        except Exception as exc:  # keep going with the remaining levels
            failures[level] = str(exc)
            log.error("sigma=%g failed: %s", level, exc)
            continue
        models[level] = prev = bundle
        if path is not None:
            save_weights(bundle, path)
            _write_sidecar(os.path.splitext(path)[0] + ".txt", level, cfg, tlog)
    if failures:
        log.error("%d of %d levels failed: %s", len(failures), len(grid),
                  ", ".join(f"{k:g}" for k in failures))
    else:
        log.info("trained %d levels", len(models))
    if not models:
        raise RuntimeError("no noise level trained successfully")
    return DenoiserModelSet(models, failures=failures)

