"""Blur kernels: sampled Gaussians and plain-text kernel files.

Kernel file layout: first line ``"h w"``, then ``h`` rows of ``w``
whitespace-separated reals. Loaded kernels are normalized to unit sum.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError, ValidationError

KERNEL_DIR = os.path.join(os.path.dirname(__file__), "kernels")
NAMED_FILES = {"levin1": "levin1.txt", "levin2": "levin2.txt"}


def gaussian_kernel(std: float, size: int) -> np.ndarray:
    """Isotropic Gaussian sampled on a ``size x size`` grid, normalized to sum 1."""
    if size < 1 or size % 2 == 0:
        raise ValidationError(f"kernel size must be a positive odd integer, got {size}")
    if std <= 0:
        raise ValidationError(f"kernel std must be positive, got {std}")
    r = np.arange(size) - size // 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * std * std))
    return g / g.sum()


def _check_kernel(k: np.ndarray, source: str) -> np.ndarray:
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ValidationError(f"{source}: kernel must be 2-D with odd sides, got {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValidationError(f"{source}: kernel has non-finite taps")
    total = k.sum()
    if total <= 0:
        raise ValidationError(f"{source}: kernel taps must have a positive sum")
    return k / total


def load_kernel_file(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty kernel file")
    try:
        h, w = (int(v) for v in lines[0].split())
        rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if len(rows) != h or any(len(r) != w for r in rows):
        raise FormatError(f"{path}: expected {h} rows of {w} values")
    return _check_kernel(np.array(rows, dtype=np.float64), str(path))


def save_kernel_file(kernel, path) -> None:
    k = np.asarray(kernel, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(f"{k.shape[0]} {k.shape[1]}\n")
        for row in k:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def resolve_kernel(name: str, kernel_dir: str | None = None) -> np.ndarray:
    """Turn ``gaussian:STD:SIZE``, ``levin1``, ``levin2`` or a file path into a kernel."""
    if name.startswith("gaussian"):
        parts = name.split(":")
        try:
            std = float(parts[1]) if len(parts) > 1 else 1.6
            size = int(parts[2]) if len(parts) > 2 else 25
        except ValueError as exc:
            raise ValidationError(f"bad gaussian kernel spec {name!r}") from exc
        return gaussian_kernel(std, size)
    if name in NAMED_FILES:
        path = os.path.join(kernel_dir or KERNEL_DIR, NAMED_FILES[name])
        if not os.path.exists(path):
            raise FileNotFoundError(
                f"kernel {name!r} needs {path}; place the kernel file there "
                f"(format: 'h w' header then h rows of w values)")
        return load_kernel_file(path)
    return load_kernel_file(name)
