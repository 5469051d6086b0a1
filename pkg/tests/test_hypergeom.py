import threading
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from stiefelmix.hypergeom import (
    HypergeomConfig,
    NearUniformWarning,
    TruncationInsufficient,
    jack_p_monomials,
    log_0F1,
    log_0F1_diag,
    log_sphere_normalizer,
    mc_normalizer,
    mean_coefficient_matrix,
    partitions,
    zonal_polynomial,
)
from stiefelmix.manifold import sample_haar


def scalar_0F1(a, z):
    # independent oracle: mpmath's scalar confluent limit function
    return float(mpmath.log(mpmath.hyp0f1(a, z)))


def quadrature_Z_p2_d3(k1, k2):
    """Z for d=3, p=2, G = [e1 e2] by 2-D quadrature on the sphere.

    Integrating the second column over the circle orthogonal to the first
    column y leaves I0(k2 * sqrt(1 - y2**2)).
    """
    def f(theta, phi):
        y1 = np.sin(theta) * np.cos(phi)
        y2 = np.sin(theta) * np.sin(phi)
        r = np.sqrt(max(1.0 - y2 * y2, 0.0))
        return np.exp(k1 * y1) * special.i0(k2 * r) * np.sin(theta)

    val, _ = integrate.dblquad(f, 0, 2 * np.pi, 0, np.pi, epsabs=1e-13, epsrel=1e-11)
    return val / (4 * np.pi)


def test_zero_kappa():
    assert log_0F1(1.5, [0.0, 0.0]) == 0.0
    assert log_0F1(2.5, [0.0]) == 0.0


@pytest.mark.parametrize("kappa", [0.1, 1, 2, 5, 10, 20])
def test_p1_closed_form(kappa):
    ref = np.log(np.sinh(kappa) / kappa)
    assert abs(log_0F1(1.5, [kappa]) - ref) <= 1e-8
    assert abs(log_0F1(1.5, [kappa]) - scalar_0F1(1.5, kappa**2 / 4)) <= 1e-8


def test_p1_example_value():
    assert np.isclose(np.exp(log_0F1(1.5, [2.0])), 1.81343, atol=1e-5)


@pytest.mark.parametrize("d", [4, 5])
@pytest.mark.parametrize("kappa", [0.5, 3.0, 12.0])
def test_p1_bessel_oracle(d, kappa):
    nu = d / 2 - 1
    ref = float(mpmath.log(mpmath.gamma(d / 2) * (kappa / 2) ** (-nu) * mpmath.besseli(nu, kappa)))
    assert abs(log_0F1(d / 2, [kappa]) - ref) <= 1e-8
    assert abs(log_sphere_normalizer(d, kappa) - ref) <= 1e-10


@pytest.mark.parametrize("kappa", [(5.0, 2.0), (1.0, 0.5), (8.0, 8.0), (12.0, 3.0), (0.0, 6.0)])
def test_p2_quadrature_oracle(kappa):
    ref = np.log(quadrature_Z_p2_d3(*kappa))
    assert abs(log_0F1(1.5, kappa) - ref) <= 1e-8


def test_p2_monte_carlo_example(rng):
    kappa = np.array([5.0, 2.0])
    est, se = mc_normalizer(3, 2, kappa, sample_haar(3, 2, rng), 10**6, rng)
    assert abs(np.exp(log_0F1(1.5, kappa)) - est) <= 3 * se


def test_p3_monte_carlo(rng):
    kappa = np.array([3.0, 2.0, 1.0])
    est, se = mc_normalizer(4, 3, kappa, sample_haar(4, 3, rng), 4 * 10**5, rng)
    assert abs(np.exp(log_0F1(2.0, kappa)) - est) <= 3 * se


def test_mc_normalizer_examples(rng):
    G = sample_haar(3, 2, rng)
    est, se = mc_normalizer(3, 2, np.zeros(2), G, 1000, rng)
    assert est == 1.0 and se == 0.0
    est, se = mc_normalizer(3, 1, np.array([5.0]), sample_haar(3, 1, rng), 10**5, rng)
    assert abs(est - np.sinh(5) / 5) <= 3 * se
    k = np.array([4.0, 2.0])
    a, sa = mc_normalizer(3, 2, k, G, 10**5, rng)
    b, sb = mc_normalizer(3, 2, k, sample_haar(3, 2, rng), 10**5, rng)
    assert abs(a - b) <= 3 * np.hypot(sa, sb)
    with pytest.raises(ValueError):
        mc_normalizer(3, 2, k, G, 999, rng)


def test_monotone_in_each_coordinate():
    grid = np.arange(11.0)
    K = np.array([[a, b] for a in grid for b in grid])
    vals = log_0F1(1.5, K).reshape(11, 11)
    assert np.all(np.diff(vals, axis=0) > 0)
    assert np.all(np.diff(vals, axis=1) > 0)


def test_permutation_symmetry(rng):
    for _ in range(10):
        k = rng.uniform(0, 15, size=2)
        assert abs(log_0F1(1.5, k) - log_0F1(1.5, k[::-1])) <= 1e-12
    k = np.array([2.5, 1.0, 0.3])
    vals = [log_0F1(2.0, k[list(perm)]) for perm in [(0, 1, 2), (2, 0, 1), (1, 2, 0)]]
    assert np.ptp(vals) <= 1e-12


def test_normalizer_growth_bound():
    # 1/Z(kappa) * exp(sum kappa) / prod kappa
    seq = [np.exp(-log_0F1(1.5, [k, k]) + 2 * k) / k**2 for k in (5, 10, 20, 40)]
    assert max(seq) <= 10 * seq[0]


def test_batched_matches_scalar(rng):
    K = rng.uniform(0, 30, size=(7, 2))
    batch = log_0F1(1.5, K)
    assert np.allclose(batch, [log_0F1(1.5, k) for k in K], rtol=0, atol=1e-12)


def test_large_kappa_escalates_order():
    big = np.array([80.0, 80.0])
    v = log_0F1(1.5, big)
    ref = np.log(quadrature_Z_p2_d3(80.0, 80.0))
    assert abs(v - ref) <= 1e-7


def test_truncation_insufficient_carries_order():
    cfg = HypergeomConfig(truncation_order=10, max_order=10)
    with pytest.raises(TruncationInsufficient) as info:
        log_0F1_diag(1.5, np.array([400.0, 400.0]), cfg)
    assert info.value.order == 10


def test_invalid_inputs():
    with pytest.raises(ValueError):
        log_0F1(1.5, [-1.0, 2.0])
    with pytest.raises(ValueError):
        HypergeomConfig(truncation_order=0)


def test_zonal_trace_identity(rng):
    # sum over partitions of k of C_lambda(x) equals (x_1 + ... + x_p)**k
    for p in (2, 3):
        x = rng.uniform(0.1, 2.0, size=p)
        for k in range(1, 7):
            total = sum(zonal_polynomial(lam, x) for lam in partitions(k, p))
            assert np.isclose(total, x.sum() ** k, rtol=1e-12)


def test_jack_single_row_is_monomial_sum():
    # P_(k) with alpha=2 is proportional to the complete symmetric-type sum;
    # its leading monomial coefficient is 1
    P = jack_p_monomials((3,), 2)
    assert P[(3, 0)] == pytest.approx(1.0)


def test_mean_coefficient_p1():
    for kappa in (2.0, 5.0):
        U = mean_coefficient_matrix(3, [kappa])
        ref = (1 / np.tanh(kappa) - 1 / kappa) / kappa
        assert U.shape == (1, 1)
        assert abs(U[0, 0] - ref) <= 1e-6
    assert abs(mean_coefficient_matrix(3, [2.0])[0, 0] - 0.26866) <= 1e-5
    # coth(5) - 1/5 = 0.800091 (to six places)
    assert abs(5 * mean_coefficient_matrix(3, [5.0])[0, 0] - (1 / np.tanh(5) - 0.2)) <= 1e-6


def test_mean_coefficient_warns_near_uniform():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        mean_coefficient_matrix(3, [1e-5, 1.0])
    assert any(issubclass(w.category, NearUniformWarning) for w in rec)


def test_cache_concurrent_consistency():
    ks = [np.array([k, k / 2]) for k in np.linspace(0.5, 25, 40)]
    expected = [float(log_0F1_diag(1.5, k**2 / 4)) for k in ks]
    results = {}

    def work(i):
        results[i] = [log_0F1(1.5, k) for k in ks]

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for r in results.values():
        assert np.allclose(r, expected, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(k1=st.floats(0, 20), k2=st.floats(0, 20))
def test_property_symmetric_and_bounded_by_envelope(k1, k2):
    v = log_0F1(1.5, [k1, k2])
    assert abs(v - log_0F1(1.5, [k2, k1])) <= 1e-10
    # Z = E etr(F^T X) <= exp(sum kappa), and Z >= 1 by Jensen
    assert -1e-12 <= v <= k1 + k2 + 1e-12
