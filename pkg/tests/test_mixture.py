import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from stiefelmix.langevin import LangevinParams, sample
from stiefelmix.manifold import sample_haar
from stiefelmix.mixture import (
    ChainOutput,
    InvariantViolation,
    MixtureState,
    StepSizes,
    cluster_count_histogram,
    coclustering_matrix,
    init_state,
    log_crp,
    log_joint,
    log_predictive,
    map_state_index,
    predictive_log_density,
    reassign_sweep,
    run_chain,
    update_cluster_params,
)
from stiefelmix.priors import PointMass, PriorSpec, TruncatedExponential

from conftest import mixture_data, separated_locations


def set_partitions(n):
    """All partitions of range(n) as first-appearance label vectors."""
    def rec(prefix, k):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for lab in range(k + 1):
            yield from rec(prefix + [lab], max(k, lab + 1))
    yield from rec([0], 1) if n else iter([()])


def stub_chain(labels_list, d=3, p=2, kappa=10.0):
    rng = np.random.default_rng(0)
    states = []
    for z in labels_list:
        z = np.asarray(z)
        K = int(z.max()) + 1 if z.size else 0
        states.append(MixtureState(z, sample_haar(d, p, rng, size=K),
                                   kappas=np.full((K, p), kappa)))
    return ChainOutput.from_states(states)


def test_init_state(rng):
    X = sample_haar(3, 2, rng, size=1)
    st = init_state(X, PriorSpec(), rng)
    assert st.n_clusters == 1 and st.sizes.tolist() == [1]
    assert st.check(1)
    assert st.kappas.min() >= 5.0
    shared = init_state(sample_haar(3, 2, rng, size=4), PriorSpec(variant="location-only"), rng)
    assert shared.kappas is None and shared.shared_kappa.shape == (2,)
    with pytest.raises(ValueError):
        init_state(np.ones((2, 3, 2)), PriorSpec(), rng)


def test_state_check_catches_violations(rng):
    st = MixtureState(np.array([0, 2]), sample_haar(3, 2, rng, size=2),
                      kappas=np.ones((2, 2)))
    with pytest.raises(InvariantViolation):
        st.check()
    st = MixtureState(np.array([0, 0]), sample_haar(3, 2, rng, size=2),
                      kappas=np.ones((2, 2)))
    with pytest.raises(InvariantViolation):
        st.check()


def test_clusters_mapping(rng):
    st = init_state(sample_haar(3, 2, rng, size=3), PriorSpec(), rng)
    cl = st.clusters
    assert list(cl) == [0] and isinstance(cl[0], LangevinParams)


def test_tiny_alpha_never_opens_clusters(rng):
    X = sample_haar(3, 2, rng, size=30)
    prior = PriorSpec(alpha=1e-300)
    st = init_state(X, prior, rng)
    for _ in range(3):
        st = reassign_sweep(st, X, prior, 3, rng)
        assert st.n_clusters == 1


def test_sweep_preserves_partition_invariants(rng):
    X = sample_haar(3, 2, rng, size=40)
    prior = PriorSpec(alpha=5.0)
    st = init_state(X, prior, rng)
    for _ in range(10):
        st = reassign_sweep(st, X, prior, 2, rng)
        st.check(40)
        assert st.sizes.sum() == 40 and np.all(st.sizes > 0)
        # labels numbered by first appearance
        first = [st.assignments.tolist().index(c) for c in range(st.n_clusters)]
        assert first == sorted(first)
    with pytest.raises(ValueError):
        reassign_sweep(st, X, prior, 0, rng)


def test_identical_pairs_coclustered_more_than_antipodal():
    prior = PriorSpec(kappa_prior=PointMass([50.0, 50.0]))
    frac_same, frac_anti = [], []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = sample_haar(3, 2, rng)
        for data, out in ((np.stack([A, A]), frac_same), (np.stack([A, -A]), frac_anti)):
            chain = run_chain(data, prior, iters=200, seed=seed)
            out.append(np.mean(chain.assignments[:, 0] == chain.assignments[:, 1]))
    assert np.mean(frac_same) > np.mean(frac_anti)


def test_zero_steps_leave_state_unchanged(rng):
    X = sample_haar(3, 2, rng, size=12)
    prior = PriorSpec()
    st = reassign_sweep(init_state(X, prior, rng), X, prior, 3, rng)
    new = update_cluster_params(st, X, prior, StepSizes(0.0, 0.0), rng)
    assert np.array_equal(new.locations, st.locations)
    assert np.array_equal(new.kappas, st.kappas)
    for acc, tot in new.acceptance.values():
        assert tot > 0 and acc == tot


def test_truncated_support_respected(rng):
    G0 = sample_haar(3, 2, rng)
    X = sample(LangevinParams(G0, [1.0, 1.0]), rng, size=50)
    prior = PriorSpec(kappa_prior=TruncatedExponential(0.1, 5.0))
    chain = run_chain(X, prior, iters=150, step_sizes=(0.1, 0.5), seed=3)
    assert min(k.min() for k in chain.kappas) >= 5.0


def test_single_cluster_location_recovery(rng):
    G0 = sample_haar(3, 2, rng)
    X = sample(LangevinParams(G0, [10.0, 10.0]), rng, size=200)
    prior = PriorSpec()
    st = MixtureState(np.zeros(200, dtype=int), sample_haar(3, 2, rng)[None],
                      kappas=np.array([[6.0, 6.0]]))
    dots = []
    for t in range(2000):
        st = update_cluster_params(st, X, prior, StepSizes(0.05, 0.1), rng)
        if t >= 500:
            dots.append(np.einsum("dp,dp->p", st.locations[0], G0))
    assert np.all(np.mean(dots, axis=0) >= 0.95)


def test_run_chain_retention_and_determinism(rng):
    X = sample_haar(3, 2, rng, size=10)
    prior = PriorSpec()
    c = run_chain(X, prior, iters=10, burn_in=0, thin=1, seed=5)
    assert c.n_retained == 10
    c2 = run_chain(X, prior, iters=10, burn_in=0, thin=1, seed=5)
    assert np.array_equal(c.assignments, c2.assignments)
    assert all(np.array_equal(a, b) for a, b in zip(c.locations, c2.locations))
    assert all(np.array_equal(a, b) for a, b in zip(c.kappas, c2.kappas))
    assert np.array_equal(c.log_joint, c2.log_joint)
    assert run_chain(X, prior, iters=25, burn_in=5, thin=4, seed=1).n_retained == 5
    with pytest.raises(ValueError):
        run_chain(X, prior, iters=5, burn_in=5)


def test_location_only_shares_kappa(rng):
    locs = separated_locations(rng)
    X, _ = mixture_data(rng, 15, [20.0, 20.0], locs)
    chain = run_chain(X, PriorSpec(variant="location-only"), iters=60, seed=2)
    assert chain.shared_kappa is not None
    for r, k in enumerate(chain.kappas):
        assert np.all(k == chain.shared_kappa[r])


def test_log_crp_normalizes():
    for n in (1, 3, 5):
        for alpha in (0.3, 1.0, 4.0):
            logs = [log_crp(np.bincount(z), alpha) for z in set_partitions(n)]
            assert np.isclose(logsumexp(logs), 0.0, atol=1e-12)


def test_log_joint_matches_direct_sum(rng):
    X = sample_haar(3, 2, rng, size=5)
    prior = PriorSpec()
    st = MixtureState(np.array([0, 1, 0, 1, 2]), sample_haar(3, 2, rng, size=3),
                      kappas=np.array([[6.0, 7.0], [8.0, 5.5], [9.0, 12.0]]))
    from stiefelmix.langevin import log_density

    direct = log_crp([2, 2, 1], 1.0)
    for i, c in enumerate(st.assignments):
        direct += log_density(X[i], LangevinParams(st.locations[c], st.kappas[c]))
    direct += float(np.sum(prior.kappa_prior.logpdf(st.kappas)))
    assert np.isclose(log_joint(st, X, prior), direct, atol=1e-10)


def test_coclustering_examples():
    one = stub_chain([[0, 0, 0, 0]])
    assert np.array_equal(coclustering_matrix(one), np.ones((4, 4), dtype=int))
    apart = stub_chain([[0, 1, 0], [0, 1, 1], [0, 0, 1]])
    C = coclustering_matrix(apart)
    assert np.array_equal(C, C.T)
    assert np.all(np.diag(C) == 3)
    forced = stub_chain([[0, 1], [0, 1]])
    assert coclustering_matrix(forced)[0, 1] == 0


def test_cluster_count_histogram_examples():
    single = stub_chain([[0, 0, 0]] * 4)
    assert cluster_count_histogram(single, 1) == {1: 4}
    assert cluster_count_histogram(single, 10) == {0: 4}
    mixed = stub_chain([[0, 0, 1], [0, 1, 2], [0, 0, 0]])
    h = cluster_count_histogram(mixed, 1)
    assert h == {1: 1, 2: 1, 3: 1} and sum(h.values()) == 3
    assert cluster_count_histogram(mixed, 2) == {0: 1, 1: 2}


def test_predictive_prior_only_uniform():
    prior = PriorSpec(kappa_prior=PointMass([0.0, 0.0]))
    empty = ChainOutput.from_states([MixtureState(np.zeros(0, dtype=int), np.zeros((0, 3, 2)),
                                                  kappas=np.zeros((0, 2)))])
    X = sample_haar(3, 2, np.random.default_rng(1))
    assert log_predictive(X, empty, prior) == 0.0


def test_predictive_normalization_and_modes(rng):
    locs = separated_locations(rng)
    X, truth = mixture_data(rng, 30, [30.0, 30.0], locs)
    prior = PriorSpec()
    chain = run_chain(X, prior, iters=300, burn_in=100, thin=5, seed=11)
    probes = sample_haar(3, 2, rng, size=200_000)
    v = np.exp(predictive_log_density(probes, chain, prior))
    assert abs(v.mean() - 1) <= 3 * v.std() / np.sqrt(v.size)
    at_modes = predictive_log_density(locs, chain, prior)
    haar = predictive_log_density(sample_haar(3, 2, rng, size=50), chain, prior)
    assert at_modes.min() > haar.max()
    assert np.isclose(log_predictive(locs[0], chain, prior), at_modes[0])
    best = chain.state(map_state_index(chain))
    assert best.n_clusters >= 3


def test_exchangeability_of_coclustering():
    rng = np.random.default_rng(8)
    locs = separated_locations(rng, k=2)
    X, _ = mixture_data(rng, 4, [8.0, 8.0], locs)
    n = len(X)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    prior = PriorSpec()
    d_perm, d_null = [], []
    iu = np.triu_indices(n, 1)
    for seed in range(10):
        a = coclustering_matrix(run_chain(X, prior, iters=300, burn_in=50, seed=seed)) / 250
        b = coclustering_matrix(run_chain(X, prior, iters=300, burn_in=50, seed=100 + seed)) / 250
        c = coclustering_matrix(run_chain(X[perm], prior, iters=300, burn_in=50,
                                          seed=200 + seed)) / 250
        c = c[np.ix_(inv, inv)]
        d_null.append(np.abs(a - b)[iu].mean())
        d_perm.append(np.abs(a - c)[iu].mean())
    d_perm, d_null = np.array(d_perm), np.array(d_null)
    se = np.sqrt(d_perm.var(ddof=1) / 10 + d_null.var(ddof=1) / 10)
    assert d_perm.mean() - d_null.mean() <= 3 * se


def test_alpha_hyperprior_moves_alpha(rng):
    X = sample_haar(3, 2, rng, size=20)
    prior = PriorSpec(alpha_hyperprior=(2.0, 1.0))
    chain = run_chain(X, prior, iters=40, seed=4)
    assert np.all(chain.alpha > 0) and np.ptp(chain.alpha) > 0


def test_set_partitions_helper():
    assert len(list(set_partitions(3))) == 5
    assert len(list(set_partitions(4))) == 15
    assert all(z[0] == 0 for z in set_partitions(4))
    assert len(set(itertools.chain(set_partitions(3)))) == 5
