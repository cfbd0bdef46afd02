import numpy as np
import pytest

from elpg.graph import Parcellation
from elpg.model import ElpgModel, ModelConfig, Montage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_coords(rng, n, scale=40.0):
    return rng.normal(size=(n, 3)) * scale


def toy_inputs(rng, batch=None, T=5, N=8, B=4):
    """Standardized DE/MI features and a seed adjacency for one subject sample (or a batch)."""
    lead = () if batch is None else (batch,)
    de = rng.normal(size=lead + (T, N, B))
    mi = rng.normal(size=lead + (T, N, B * (B - 1) // 2))  # features arrive z-scored
    seed = rng.random(lead + (N, N))
    seed = 0.5 * (seed + np.swapaxes(seed, -1, -2))
    idx = np.arange(N)
    seed[..., idx, idx] = 0.0
    return de, mi, seed


def make_montage(rng, N=9, n_groups=9):
    group_of = np.arange(N) % n_groups
    return Montage(random_coords(rng, N), Parcellation(group_of, n_groups))


def make_model(rng, N=9, n_groups=9, seed=0, **cfg):
    montage = make_montage(rng, N, n_groups)
    return ElpgModel(ModelConfig(n_channels=N, n_groups=n_groups, **cfg), montage, seed=seed)
