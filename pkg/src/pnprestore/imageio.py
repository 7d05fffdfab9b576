"""8-bit PGM (P5), PPM (P6) and PNG reading/writing.

Samples map to [0, 1] by ``/ 255``; writing quantizes with
``floor(255 * clip(t, 0, 1) + 0.5)`` (round half up).
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import FormatError
from .tensor import as_tensor

_FORMATS = {".pgm": "PPM", ".ppm": "PPM", ".pnm": "PPM", ".png": "PNG"}


def read_bytes(path) -> np.ndarray:
    """Raw ``(h, w, c)`` uint8 samples."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.format not in ("PPM", "PNG"):
                raise FormatError(f"{path}: unsupported format {im.format}")
            if im.mode == "P":
                im = im.convert("RGB")
            elif im.mode == "1":
                im = im.convert("L")
            if im.mode not in ("L", "RGB"):
                raise FormatError(f"{path}: unsupported mode {im.mode} (need 8-bit gray or RGB)")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise FormatError(f"{path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def image_read(path) -> np.ndarray:
    return read_bytes(path).astype(np.float64) / 255.0


def quantize(t) -> np.ndarray:
    return np.floor(np.clip(as_tensor(t), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def image_write(t, path) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in _FORMATS:
        raise FormatError(f"{path}: unsupported extension {ext!r}")
    q = quantize(t)
    if q.shape[2] == 1:
        if ext == ".ppm":
            q = np.repeat(q, 3, axis=2)
            im = Image.fromarray(q, "RGB")
        else:
            im = Image.fromarray(q[:, :, 0], "L")
    elif q.shape[2] == 3:
        if ext == ".pgm":
            raise FormatError(f"{path}: PGM holds gray images only")
        im = Image.fromarray(q, "RGB")
    else:
        raise FormatError(f"cannot write a {q.shape[2]}-channel image")
    im.save(path, format=_FORMATS[ext])
