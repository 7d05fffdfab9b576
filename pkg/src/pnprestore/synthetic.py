"""Seeded piecewise-smooth test images (shapes over gradients with mild texture)."""

from __future__ import annotations

import numpy as np


def synthetic_image(rng: np.random.Generator, size: int = 64, channels: int = 1,
                    shapes: int = 8) -> np.ndarray:
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / max(size - 1, 1)
    img = np.empty((h, w, channels))
    for c in range(channels):
        a, b, base = rng.uniform(-0.3, 0.3, 3)
        img[:, :, c] = 0.5 + base * 0.5 + a * (xx - 0.5) + b * (yy - 0.5)
    for _ in range(shapes):
        color = rng.uniform(0.05, 0.95, channels)
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = rng.uniform(size * 0.05, size * 0.3, 2)
        if rng.random() < 0.5:
            mask = ((yy * (size - 1) - cy) / ry) ** 2 + ((xx * (size - 1) - cx) / rx) ** 2 <= 1
        else:
            mask = (np.abs(yy * (size - 1) - cy) <= ry) & (np.abs(xx * (size - 1) - cx) <= rx)
        img[mask] = color
    freq = rng.uniform(2, 8, 2)
    phase = rng.uniform(0, 2 * np.pi)
    texture = 0.04 * np.sin(2 * np.pi * (freq[0] * xx + freq[1] * yy) + phase)
    img += texture[:, :, None]
    return np.clip(img, 0.0, 1.0)


def synthetic_corpus(count: int, size: int = 64, channels: int = 1, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [synthetic_image(rng, size, channels) for _ in range(count)]
