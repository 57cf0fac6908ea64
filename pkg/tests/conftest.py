import numpy as np
import pytest

from keystego import training
from keystego.sampledata import sample_images

# Desk-scale acceptance configuration: 64x64 crops, 4 blocks, <= 1000 steps, fixed seed.
DESK = dict(crop_size=64, n_blocks=4, hidden=16, batch_size=4, max_steps=1000, epochs=10_000,
            lr=3e-3, lr_halving_period=100, key_mode="random", preprocess="standardize", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def images():
    ims = sample_images(size=96, limit=20)
    assert len(ims) >= 16
    return ims


@pytest.fixture(scope="session")
def desk_run(images):
    """One seeded desk-scale training run shared by the slow tests."""
    cfg = training.TrainConfig(**DESK)
    model, history = training.train(images, cfg)
    return model, history, cfg


def eval_pairs(images, size=64, n=8):
    hosts = [training.center_crop(images[i], size) for i in range(0, 2 * n, 2)]
    secrets = [training.center_crop(images[i + 1], size) for i in range(0, 2 * n, 2)]
    return hosts, secrets


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
