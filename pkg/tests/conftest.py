import numpy as np
import pytest

from tann.mathkernel import make_rng
from tann.model import ModelConfig, Network
from tann.montage import load_montage, toy_montage


@pytest.fixture(scope="session")
def montage62():
    return load_montage()


@pytest.fixture
def toy():
    return toy_montage("grid3x3")


@pytest.fixture
def toy_net(toy):
    cfg = ModelConfig(d=2, n_classes=3, d_f=4, d_out=4, n_proj=3, disc_hidden=8)
    return Network(toy, cfg, seed=1)


@pytest.fixture
def toy_batch():
    rng = make_rng(5)
    X = rng.normal(size=(6, 2, 8))
    labels = np.array([0, 1, 2, 1, -1, -1])
    domains = np.array([0, 0, 0, 0, 1, 1])
    return X, labels, domains
