import os
import time

import numpy as np
import pytest

from pnprestore.imageio import image_write
from pnprestore.synthetic import synthetic_corpus
from pnprestore.train import TrainConfig, TrainingLog, model_filename, train_level
from pnprestore.weightfile import save_weights

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

# Toy denoiser used by the acceptance suite and a few unit tests: width 16,
# mini-batch 8, 2000 Adam steps at sigma 25 on 200 synthetic 64x64 images.
TOY_SIGMA = 25.0
TOY_CONFIG = TrainConfig(batch_size=8, feature_width=16, max_steps=2000,
                         patches_per_epoch=8 * 100, seed=3)


_TOY_SECONDS = []


@pytest.fixture(scope="session")
def toy_training():
    t0 = time.perf_counter()
    corpus = synthetic_corpus(200, 64, 1, seed=1)
    tlog = TrainingLog()
    bundle = train_level(corpus, TOY_CONFIG, TOY_SIGMA, log_to=tlog)
    _TOY_SECONDS.append(time.perf_counter() - t0)
    return bundle, tlog


@pytest.fixture(scope="session")
def toy_train_seconds(toy_training):
    return _TOY_SECONDS[0]


@pytest.fixture(scope="session")
def toy_model(toy_training):
    return toy_training[0]


@pytest.fixture(scope="session")
def toy_model_dir(toy_model, tmp_path_factory):
    """A models directory laid out like the CLI expects (``gray/``)."""
    root = tmp_path_factory.mktemp("models")
    os.makedirs(root / "gray")
    save_weights(toy_model, str(root / "gray" / model_filename(TOY_SIGMA)))
    return root


def write_corpus(directory, count, size=64, channels=1, seed=0):
    os.makedirs(directory, exist_ok=True)
    ext = "pgm" if channels == 1 else "ppm"
    for i, img in enumerate(synthetic_corpus(count, size, channels, seed)):
        image_write(img, os.path.join(directory, f"img{i:02d}.{ext}"))
    return directory


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "ACCEPTANCE_RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
