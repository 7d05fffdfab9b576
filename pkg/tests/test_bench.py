import csv
import io
import math

import numpy as np
import pytest

from pnprestore.bench import CSV_HEADER, BenchReport, BenchRow, image_seed, run_bench
from pnprestore.tasks import DegradationSpec, degrade

from conftest import write_corpus


def noise_degrade(sigma):
    spec = DegradationSpec(sigma=sigma)

    def fn(x, seed):
        y = degrade(x, spec, seed)
        return y, y, x
    return fn


def rows_of(text):
    return list(csv.reader(io.StringIO(text)))


def test_empty_corpus(tmp_path):
    report = run_bench(tmp_path, "denoise", lambda y, x: y, noise_degrade(10))
    assert report.to_csv() == ",".join(CSV_HEADER) + "\n"


def test_mean_row_is_average(tmp_path):
    write_corpus(tmp_path, 3, size=32)
    report = run_bench(tmp_path, "denoise", lambda y, x: np.clip(y, 0, 1) * 0.5 + x * 0.5,
                       noise_degrade(25), seed=4)
    rows = rows_of(report.to_csv())
    assert rows[0] == list(CSV_HEADER)
    body, mean = rows[1:-1], rows[-1]
    assert [r[0] for r in body] == ["img00.pgm", "img01.pgm", "img02.pgm"]
    assert mean[0] == "mean"
    for col in (2, 3):
        assert float(mean[col]) == pytest.approx(np.mean([float(r[col]) for r in body]),
                                                 abs=1e-5)
    assert all(float(r[3]) > float(r[2]) for r in body)


def test_deterministic_and_worker_independent(tmp_path):
    write_corpus(tmp_path, 4, size=24)
    restore = lambda y, x: np.clip(y, 0, 1)  # noqa: E731
    a = run_bench(tmp_path, "denoise", restore, noise_degrade(15), seed=7).to_csv()
    b = run_bench(tmp_path, "denoise", restore, noise_degrade(15), seed=7, workers=3).to_csv()
    c = run_bench(tmp_path, "denoise", restore, noise_degrade(15), seed=8).to_csv()
    assert a == b
    assert a != c


def test_failure_becomes_row(tmp_path):
    write_corpus(tmp_path, 2, size=16)

    def restore(y, x):
        if x[0, 0, 0] == x[0, 0, 0] and restore.calls == 0:
            restore.calls += 1
            raise ValueError("broken")
        return y
    restore.calls = 0
    report = run_bench(tmp_path, "denoise", restore, noise_degrade(5))
    assert [r.status == "ok" for r in report.rows].count(False) == 1
    assert "failed: broken" in report.table()
    bad = [r for r in rows_of(report.to_csv())[1:-1] if r[3] == "nan"]
    assert len(bad) == 1


def test_border_crop(tmp_path):
    write_corpus(tmp_path, 1, size=16)

    def restore(y, x):
        out = x.copy()
        out[0] = 1 - out[0]
        return out
    cropped = run_bench(tmp_path, "sr", restore, noise_degrade(5), border=2)
    assert math.isinf(cropped.rows[0].psnr_out)


def test_timing_column():
    report = BenchReport([BenchRow("a.png", "denoise", 20.0, 25.0, 0.5)])
    assert rows_of(report.to_csv())[1][4] == ""
    assert rows_of(report.to_csv(with_time=True))[1][4] == "0.500000"


def test_image_seed_depends_on_name():
    assert image_seed(7, "a.png") == image_seed(7, "a.png")
    assert image_seed(7, "a.png") != image_seed(7, "b.png")
