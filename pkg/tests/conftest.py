import numpy as np
import pytest

from sthsep.autodiff import GradCheckConfig, grad_check_params
from sthsep.config import ModelConfig
from sthsep.train import loss

TINY = {
    "window.L": 16, "window.H": 4,
    "patch.P": 8, "patch.S": 4,
    "transformer.layers": 1, "transformer.heads": 2, "transformer.d_m": 8, "transformer.ffn_width": 16,
    "graph.embed_dim": 4,
    "fusion.tblock_channels": 3,
    "hypergraph.k": 2,
    "train.batch_size": 8, "train.epochs": 2,
}


def tiny_config(**overrides) -> ModelConfig:
    cfg = ModelConfig().update(TINY)
    return cfg.update({k.replace("__", "."): v for k, v in overrides.items()})


@pytest.fixture
def tiny():
    return tiny_config


def model_gradcheck(model, X, Y, seed, n_coords=20, kind="mse"):
    """Central-difference check of the full loss at ``n_coords`` random trainable coordinates."""
    rng = np.random.default_rng(seed)
    supports = model.build_supports()
    names = model.store.trainable()
    coords = []
    for _ in range(n_coords):
        name = names[rng.integers(len(names))]
        coords.append((name, int(rng.integers(model.store[name].data.size))))
    return grad_check_params(lambda: loss(model(X, supports), Y, kind), model.store, coords, GradCheckConfig())
