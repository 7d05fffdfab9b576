"""Command-line interface: train, denoise, deblur, sr, degrade, bench.

Exit codes: 0 success, 2 usage/config/input errors, 3 compute failures.
Noise levels are given in 8-bit units (``--sigma 25`` means 25/255).
A ``--config FILE`` holds flat ``key = value`` lines using the long option
names; command-line flags override it.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .errors import FormatError, IterationError, TrainingDiverged, ValidationError
from .hqs import CNNPrior, DenoiserModelSet, GaussianSmoothingPrior
from .imageio import image_read, image_write
from .kernels import resolve_kernel
from .tensor import psnr

log = logging.getLogger("pnprestore")


class ConfigError(Exception):
    """Bad flags, config file or inputs (exit code 2)."""


# --------------------------------------------------------------------------
# argument parsing

def _add_shared(p):
    p.add_argument("--models", metavar="DIR", help="model directory (gray/ and color/ subdirs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", metavar="FILE", help="flat 'key = value' config file")
    p.add_argument("--verbose", type=int, default=0, metavar="N")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--gt", metavar="PATH", help="ground truth image for PSNR reporting")


def _add_task(p, sigma_default=None):
    p.add_argument("--sigma", type=float, default=sigma_default,
                   help="noise level in 8-bit units")
    p.add_argument("--kernel", help="gaussian:STD:SIZE | levin1 | levin2 | PATH")
    p.add_argument("--kernel-dir", help="directory holding levin1.txt / levin2.txt")
    p.add_argument("--sf", type=int, choices=(1, 2, 3), default=None)
    p.add_argument("--spec", choices=("bicubic", "gaussian-ds"), default="bicubic")
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--lambda-scale", type=float, default=1.0)
    p.add_argument("--sigma-end", type=float, default=None)
    p.add_argument("--channel-mode", choices=("rgb", "y", "per-channel"), default="rgb")
    p.add_argument("--prior", choices=("cnn", "smooth"), default="cnn",
                   help="trained models, or Gaussian smoothing (no models needed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pnprestore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the denoiser model set")
    _add_shared(p)
    p.add_argument("--corpus", required=True, metavar="DIR")
    p.add_argument("--channels", type=int, choices=(1, 3), default=1)
    p.add_argument("--levels", default="2:50:2", help="START:STOP:STEP or comma list")
    p.add_argument("--width", type=int, default=64, help="feature maps per middle layer")
    p.add_argument("--patch-size", type=int, default=35)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--patches-per-epoch", type=int, default=256 * 50)
    p.add_argument("--steps", type=int, default=None, help="max optimizer steps per level")
    p.add_argument("--max-epochs", type=int, default=None)

    for name, hlp in (("denoise", "remove Gaussian noise"), ("deblur", "non-blind deblurring"),
                      ("sr", "single-image super-resolution")):
        p = sub.add_parser(name, help=hlp)
        _add_shared(p)
        _add_task(p)
        p.add_argument("input")

    p = sub.add_parser("degrade", help="synthesize a degraded observation")
    _add_shared(p)
    _add_task(p, sigma_default=0.0)
    p.add_argument("input")

    p = sub.add_parser("bench", help="degrade, restore and score a corpus")
    _add_shared(p)
    _add_task(p)
    p.add_argument("--corpus", required=True, metavar="DIR")
    p.add_argument("--task", choices=("denoise", "deblur", "sr"), required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true",
                   help="write measured seconds into the CSV (output is then not reproducible)")
    p.add_argument("--no-border-crop", action="store_true",
                   help="score SR results without cropping sf border pixels")
    return parser


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    return None


def read_config(path) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (t.strip() for t in line.split("=", 1))
                values[key.replace("-", "_")] = value
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return values


def _peek_config(argv):
    """``(command, config_path)`` from raw argv, before full parsing."""
    command = next((a for a in argv if not a.startswith("-")), None)
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return command, argv[i + 1]
        if a.startswith("--config="):
            return command, a.split("=", 1)[1]
    return command, None


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    command, config = _peek_config(argv)
    if config is None or command is None:
        return parser.parse_args(argv)
    sub = _subparser(parser, command)
    if sub is None:
        return parser.parse_args(argv)
    known = {a.dest: a for a in sub._actions
             if a.option_strings and a.dest not in ("help", "config")}
    values = read_config(config)
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"{config}: unknown keys for '{command}': {', '.join(unknown)}")
    defaults = {}
    for key, value in values.items():
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{config}: {key} must be a boolean")
            defaults[key] = value.lower() in ("true", "1", "yes")
        else:
            defaults[key] = value
        action.required = False
    sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    for key in defaults:
        action = known[key]
        if action.choices is not None and getattr(args, key) not in action.choices:
            raise ConfigError(f"{config}: {key}={getattr(args, key)!r} not in "
                              f"{sorted(action.choices)}")
    return args


# --------------------------------------------------------------------------
# helpers

def _read(path):
    if path is None:
        raise ConfigError("missing input path")
    if not os.path.isfile(path):
        raise ConfigError(f"cannot read input image {path}")
    try:
        return image_read(path)
    except (FormatError, OSError) as exc:
        raise ConfigError(f"cannot read input image {path}: {exc}") from exc


def _need(value, flag):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def make_prior(args, channels: int):
    """Prior for an image with ``channels`` channels under ``--channel-mode``."""
    if args.prior == "smooth":
        return GaussianSmoothingPrior()
    models = _need(args.models, "--models")
    if not os.path.isdir(models):
        raise ConfigError(f"model directory {models} does not exist")
    gray = channels == 1 or args.channel_mode in ("y", "per-channel")
    sub = os.path.join(models, "gray" if gray else "color")
    path = sub if os.path.isdir(sub) else models
    try:
        model_set = DenoiserModelSet.from_dir(path)
    except (FileNotFoundError, FormatError, ValidationError) as exc:
        raise ConfigError(f"cannot load models from {path}: {exc}") from exc
    want = 1 if gray else channels
    if model_set.channels != want:
        raise ConfigError(f"models in {path} are {model_set.channels}-channel, need {want}")
    return CNNPrior(model_set)


def _deblur_kernel(args):
    try:
        return resolve_kernel(args.kernel or "gaussian:1.6:25", args.kernel_dir)
    except (FileNotFoundError, FormatError, ValidationError) as exc:
        raise ConfigError(str(exc)) from exc


def _sr_spec(args, sigma):
    from .tasks import sr_spec

    sf = args.sf or 2
    if sf < 2:
        raise ConfigError("--sf must be 2 or 3 for super-resolution")
    return sr_spec(sf, args.spec, sigma)


def _report(out, args):
    if args.gt:
        gt = _read(args.gt)
        if gt.shape != out.shape:
            raise ConfigError(f"ground truth {gt.shape} does not match output {out.shape}")
        print(f"psnr_out {psnr(out, gt):.4f}")


def _write(out, args, default_suffix):
    path = args.out or (os.path.splitext(args.input)[0] + default_suffix)
    try:
        image_write(out, path)
    except (FormatError, OSError) as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc
    log.info("wrote %s", path)


# --------------------------------------------------------------------------
# commands

def cmd_train(args):
    from .bench import list_corpus
    from .train import NoiseLevelGrid, TrainConfig, train_model_set

    if not os.path.isdir(args.corpus):
        raise ConfigError(f"corpus directory {args.corpus} does not exist")

    names = list_corpus(args.corpus)
    if not names:
        raise ConfigError(f"no PGM/PPM/PNG images in {args.corpus}")
    corpus = []
    for n in names:
        img = _read(os.path.join(args.corpus, n))
        if img.shape[2] != args.channels:
            img = img.mean(axis=2, keepdims=True) if args.channels == 1 else np.repeat(img, 3, 2)
        corpus.append(img)
    try:
        if ":" in args.levels:
            a, b, c = (float(v) for v in args.levels.split(":"))
            levels = tuple(np.arange(a, b + c / 2, c))
        else:
            levels = tuple(float(v) for v in args.levels.split(","))
        grid = NoiseLevelGrid(levels)
        cfg = TrainConfig(patch_size=args.patch_size, batch_size=args.batch_size,
                          seed=args.seed, channels=args.channels, feature_width=args.width,
                          patches_per_epoch=args.patches_per_epoch, max_steps=args.steps,
                          max_epochs=args.max_epochs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    models = _need(args.models or args.out, "--models")
    out_dir = os.path.join(models, "gray" if args.channels == 1 else "color")
    result = train_model_set(corpus, cfg, grid, out_dir)
    if result.failures:
        raise RuntimeError(f"{len(result.failures)} level(s) failed: "
                           f"{', '.join(f'{k:g}' for k in result.failures)}")
    print(f"trained {len(result)} models into {out_dir}")


def cmd_denoise(args):
    from .tasks import denoise_task

    y = _read(args.input)
    sigma = _need(args.sigma, "--sigma")
    prior = make_prior(args, y.shape[2])
    out = denoise_task(y, sigma, prior=prior)
    _write(out, args, "_denoised.png")
    _report(out, args)


def cmd_deblur(args):
    from .tasks import deblur_task

    y = _read(args.input)
    sigma = _need(args.sigma, "--sigma")
    kernel = _deblur_kernel(args)
    prior = make_prior(args, y.shape[2])
    gt = _read(args.gt) if args.gt else None
    out = deblur_task(y, kernel, sigma, prior, iterations=args.iters, sigma_end=args.sigma_end,
                      rho=args.lambda_scale, ground_truth=gt, verbose=args.verbose)
    _write(out, args, "_deblurred.png")
    _report(out, args)


def _sisr_config(args):
    from .tasks import SisrConfig

    return SisrConfig(iterations=args.iters, sigma_end=args.sigma_end,
                      channel_mode=args.channel_mode, verbose=args.verbose)


def cmd_sr(args):
    from .tasks import sisr_solve

    y = _read(args.input)
    spec = _sr_spec(args, args.sigma or 0.0)
    prior = make_prior(args, y.shape[2])
    gt = _read(args.gt) if args.gt else None
    out = sisr_solve(y, spec, prior, _sisr_config(args), ground_truth=gt)
    _write(out, args, f"_x{spec.sf}.png")
    _report(out, args)


def _degradation(args):
    from .tasks import DegradationSpec, sr_spec

    sigma = args.sigma or 0.0
    sf = args.sf or 1
    try:
        if sf > 1:
            return sr_spec(sf, args.spec, sigma)
        kernel = _deblur_kernel(args) if args.kernel else None
        return DegradationSpec(kernel, 1, "none", sigma)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_degrade(args):
    from .tasks import degrade

    x = _read(args.input)
    spec = _degradation(args)
    try:
        y = degrade(x, spec, seed=args.seed)
    except (ValidationError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    _write(y, args, "_degraded.png")


def cmd_bench(args):
    from .bench import list_corpus, run_bench
    from .tasks import (DegradationSpec, bicubic_resize, deblur_task, degrade, denoise_task,
                        sisr_solve)

    if not os.path.isdir(args.corpus):
        raise ConfigError(f"corpus directory {args.corpus} does not exist")
    priors = {}

    def prior_for(c):
        if c not in priors:
            priors[c] = make_prior(args, c)
        return priors[c]

    border = 0
    if args.task == "denoise":
        sigma = _need(args.sigma, "--sigma")
        spec = DegradationSpec(None, 1, "none", sigma)

        def degrade_fn(x, seed):
            y = degrade(x, spec, seed)
            return y, y, x

        def restore(y, x):
            return denoise_task(y, sigma, prior=prior_for(y.shape[2]))
    elif args.task == "deblur":
        sigma = 2.0 if args.sigma is None else args.sigma
        kernel = _deblur_kernel(args)
        spec = DegradationSpec(kernel, 1, "none", sigma)

        def degrade_fn(x, seed):
            y = degrade(x, spec, seed)
            return y, y, x

        def restore(y, x):
            return deblur_task(y, kernel, sigma, prior_for(y.shape[2]), iterations=args.iters,
                               sigma_end=args.sigma_end, rho=args.lambda_scale)
    else:
        spec = _sr_spec(args, args.sigma or 0.0)
        sf = spec.sf
        border = 0 if args.no_border_crop else sf
        cfg = _sisr_config(args)

        def degrade_fn(x, seed):
            x = x[:x.shape[0] // sf * sf, :x.shape[1] // sf * sf]
            y = degrade(x, spec, seed)
            return y, bicubic_resize(y, sf), x

        def restore(y, x):
            return sisr_solve(y, spec, prior_for(y.shape[2]), cfg)

    # surface model/config problems before the per-image loop swallows them
    for name in list_corpus(args.corpus)[:1]:
        prior_for(_read(os.path.join(args.corpus, name)).shape[2])

    report = run_bench(args.corpus, args.task, restore, degrade_fn, seed=args.seed,
                       workers=args.workers, border=border)
    if not report.rows:
        log.warning("corpus %s holds no images", args.corpus)
    text = report.to_csv(with_time=args.timing)
    out = args.out or "bench.csv"
    with open(out, "w", newline="") as fh:
        fh.write(text)
    print(report.table())
    print(f"wrote {out}")


COMMANDS = {"train": cmd_train, "denoise": cmd_denoise, "deblur": cmd_deblur, "sr": cmd_sr,
            "degrade": cmd_degrade, "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"pnprestore: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.command == "train":
        logging.getLogger("pnprestore.train").setLevel(logging.INFO)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"pnprestore: error: {exc}", file=sys.stderr)
        return 2
    except (IterationError, TrainingDiverged, FloatingPointError, RuntimeError,
            ValidationError, ValueError, MemoryError) as exc:
        print(f"pnprestore: compute error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
