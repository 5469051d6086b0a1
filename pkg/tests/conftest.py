import numpy as np
import pytest

from stiefelmix.langevin import LangevinParams, sample_sequential
from stiefelmix.manifold import frobenius_distance, sample_haar


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def separated_locations(rng, k=3, d=3, p=2, min_dist=1.2):
    """k Haar frames with pairwise Frobenius distance above ``min_dist``."""
    while True:
        locs = sample_haar(d, p, rng, size=k)
        gaps = [frobenius_distance(locs[i], locs[j]) for i in range(k) for j in range(i + 1, k)]
        if min(gaps) > min_dist:
            return locs


def mixture_data(rng, n_per, kappa, locs):
    """Stacked draws from each location (blocks in order) and true labels."""
    kappa = np.asarray(kappa, dtype=float)
    X = np.concatenate([
        sample_sequential(np.broadcast_to(G, (n_per,) + G.shape), kappa, rng) for G in locs
    ])
    return X, np.repeat(np.arange(len(locs)), n_per)


def langevin_params(rng, d=3, p=2, kmin=0.0, kmax=15.0):
    return LangevinParams(sample_haar(d, p, rng), rng.uniform(kmin, kmax, size=p))
