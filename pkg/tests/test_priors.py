import numpy as np
import pytest
from scipy import stats

from stiefelmix.manifold import orthonormality_error, sample_haar
from stiefelmix.priors import (
    DiscreteKappa,
    DiscreteLocation,
    GammaPrior,
    HaarLocation,
    PointMass,
    PriorSpec,
    TruncatedExponential,
    WeibullPrior,
)


def test_truncated_exponential_support_and_law(rng):
    pr = TruncatedExponential(rate=0.1, lower=5.0)
    k = pr.sample(rng, 20_000, 2)
    assert k.min() >= 5.0
    assert stats.kstest(k[:, 0] - 5.0, stats.expon(scale=10).cdf).pvalue > 0.01
    assert pr.logpdf([4.9, 6.0]) == -np.inf
    assert np.isclose(pr.logpdf([5.0, 6.0]), 2 * np.log(0.1) - 0.1)
    with pytest.raises(ValueError):
        TruncatedExponential(rate=-1)


def test_weibull_parameterization(rng):
    a, b = 0.5, 2.0
    pr = WeibullPrior(a, b)
    k = np.linspace(0.1, 5, 7)
    # density proportional to k**(1/a - 1) exp(-b k**(1/a))
    unnorm = k ** (1 / a - 1) * np.exp(-b * k ** (1 / a))
    ratio = np.exp(pr._logpdf1(k)) / unnorm
    assert np.allclose(ratio, ratio[0], rtol=1e-10)
    draws = pr.sample(rng, 20_000, 1)[:, 0]
    assert stats.kstest(draws, stats.weibull_min(1 / a, scale=b ** (-a)).cdf).pvalue > 0.01


def test_gamma_logpdf():
    pr = GammaPrior(1.0, 0.1)
    assert np.isclose(pr.logpdf([10.0]), np.log(0.1) - 1.0)
    assert pr.logpdf([-1.0]) == -np.inf


def test_lognormal_proposal_hastings(rng):
    pr = GammaPrior(2.0, 0.5)
    k = np.array([[3.0, 4.0], [1.0, 2.0]])
    new, log_h = pr.propose(k, 0.3, rng)
    assert new.shape == k.shape and log_h.shape == (2,)
    assert np.allclose(log_h, np.sum(np.log(new / k), axis=1))
    same, zero = pr.propose(k, 0.0, rng)
    assert np.array_equal(same, k) and np.all(zero == 0)


def test_point_and_discrete(rng):
    pm = PointMass([0.0, 0.0])
    assert np.all(pm.sample(rng, 3, 2) == 0)
    assert pm.logpdf([0.0, 0.0]) == 0.0 and pm.logpdf([1.0, 0.0]) == -np.inf
    dk = DiscreteKappa([[2.0, 2.0], [6.0, 6.0]])
    draws = dk.sample(rng, 1000, 2)
    assert set(map(tuple, draws)) == {(2.0, 2.0), (6.0, 6.0)}
    assert np.isclose(dk.logpdf([2.0, 2.0]), -np.log(2))
    new, log_h = dk.propose(np.array([[2.0, 2.0]] * 5), 1.0, rng)
    assert np.all(dk.logpdf(new) > -np.inf) and np.all(log_h == 0)


def test_location_priors(rng):
    hl = HaarLocation()
    G = hl.sample(rng, 4, 3, 2)
    assert G.shape == (4, 3, 2) and np.all(orthonormality_error(G) < 1e-10)
    moved = hl.propose(G, 0.1, rng)
    assert np.all(orthonormality_error(moved) < 1e-10)
    assert np.all(HaarLocation("perturb").propose(G, 0.1, rng).shape == G.shape)
    with pytest.raises(ValueError):
        HaarLocation("bogus").propose(G, 0.1, rng)
    frames = sample_haar(3, 2, rng, size=4)
    dl = DiscreteLocation(frames)
    pick = dl.sample(rng, 10, 3, 2)
    assert np.all(dl.logpdf(pick) == -np.log(4))
    assert dl.logpdf(sample_haar(3, 2, rng)) == -np.inf
    assert np.array_equal(dl.propose(pick, 0.0, rng), pick)


def test_prior_spec_validation():
    assert PriorSpec().alpha == 1.0
    assert PriorSpec(variant="location-only").shared_kappa
    with pytest.raises(ValueError):
        PriorSpec(alpha=0.0)
    with pytest.raises(ValueError):
        PriorSpec(variant="other")
