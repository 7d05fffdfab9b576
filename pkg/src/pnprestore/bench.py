"""Benchmark harness: degrade a corpus, restore it, score PSNR."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .imageio import image_read
from .tensor import psnr

log = logging.getLogger(__name__)

CSV_HEADER = ("image", "task", "psnr_in", "psnr_out", "seconds")
IMAGE_EXTS = (".pgm", ".ppm", ".pnm", ".png")


@dataclass
class BenchRow:
    image: str
    task: str
    psnr_in: float = math.nan
    psnr_out: float = math.nan
    seconds: float = math.nan
    status: str = "ok"


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def means(self) -> tuple[float, float, float]:
        ok = [r for r in self.rows if r.status == "ok"]
        if not ok:
            return math.nan, math.nan, math.nan
        return (float(np.mean([r.psnr_in for r in ok])),
                float(np.mean([r.psnr_out for r in ok])),
                float(np.mean([r.seconds for r in ok])))

    def to_csv(self, with_time: bool = False) -> str:
        """CSV text; ``seconds`` is left empty unless ``with_time`` (keeps reruns byte-identical)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)

        def num(v):
            return "nan" if math.isnan(v) else f"{v:.6f}"

        task = self.rows[0].task if self.rows else ""
        for r in self.rows:
            w.writerow([r.image, r.task, num(r.psnr_in), num(r.psnr_out),
                        num(r.seconds) if with_time else ""])
        if self.rows:
            m_in, m_out, m_sec = self.means()
            w.writerow(["mean", task, num(m_in), num(m_out), num(m_sec) if with_time else ""])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'image':<24} {'task':<8} {'psnr_in':>9} {'psnr_out':>9} {'seconds':>8}  status"]
        for r in self.rows:
            lines.append(f"{r.image:<24} {r.task:<8} {r.psnr_in:9.3f} {r.psnr_out:9.3f} "
                         f"{r.seconds:8.3f}  {r.status}")
        if self.rows:
            m_in, m_out, m_sec = self.means()
            lines.append(f"{'mean':<24} {'':<8} {m_in:9.3f} {m_out:9.3f} {m_sec:8.3f}")
        return "\n".join(lines)


def list_corpus(path) -> list[str]:
    return sorted(f for f in os.listdir(path) if f.lower().endswith(IMAGE_EXTS))


def image_seed(seed: int, name: str) -> list[int]:
    return [int(seed), zlib.crc32(name.encode())]


def run_bench(corpus_dir, task: str, restore, degrade_fn, seed: int = 0,
              workers: int = 1, border: int = 0) -> BenchReport:
    """Score every image in ``corpus_dir``.

    ``degrade_fn(x, seed) -> (y, baseline, reference)`` builds the
    observation, the estimate scored as ``psnr_in`` and the ground truth
    (``x`` possibly cropped). ``restore(y, x) -> estimate`` is timed.
    ``border`` pixels are cropped from each side before scoring. Failures
    become rows with a status instead of aborting the run.
    """
    names = list_corpus(corpus_dir)

    def crop(t):
        return t[border:t.shape[0] - border, border:t.shape[1] - border] if border else t

    def one(name):
        row = BenchRow(name, task)
        try:
            x = image_read(os.path.join(corpus_dir, name))
            y, baseline, x = degrade_fn(x, image_seed(seed, name))
            t0 = time.perf_counter()
            out = restore(y, x)
            row.seconds = time.perf_counter() - t0
            row.psnr_in = psnr(crop(np.clip(baseline, 0, 1)), crop(x))
            row.psnr_out = psnr(crop(out), crop(x))
        except Exception as exc:  # one bad image must not stop the run
            row.status = f"failed: {exc}"
            log.error("%s: %s", name, exc)
        return row

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, names))
    else:
        rows = [one(n) for n in names]
    rows.sort(key=lambda r: r.image)
    return BenchReport(rows)
