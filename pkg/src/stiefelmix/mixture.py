"""Dirichlet-process mixtures of matrix Langevin kernels: Gibbs inference.

The sampler alternates two moves:

* ``reassign_sweep``: each observation is reseated in turn using the
  Chinese-restaurant-process conditional.  New tables are represented by
  ``m_aux`` fresh draws from the base measure (auxiliary-parameter scheme for
  non-conjugate mixtures), each carrying mass ``alpha / m_aux``.
* ``update_cluster_params``: Metropolis-Hastings updates of each cluster's
  location and concentration.  Acceptance ratios use the exact log
  normalizer from :mod:`stiefelmix.hypergeom`.

Data are arrays of shape ``(n, d, p)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .hypergeom import log_0F1
from .langevin import LangevinParams
from .manifold import ORTHO_TOL, orthonormality_error, project
from .priors import DiscreteKappa, DiscreteLocation, HaarLocation, PointMass


class InvariantViolation(RuntimeError):
    """A mixture state failed its partition or parameter invariants."""


@dataclass(frozen=True)
class StepSizes:
    """Proposal scales for cluster locations and (log) concentrations."""

    location: float = 0.05
    kappa: float = 0.1


def _as_steps(steps):
    if steps is None:
        return StepSizes()
    if isinstance(steps, StepSizes):
        return steps
    if np.isscalar(steps):
        return StepSizes(float(steps), float(steps))
    loc, kap = steps
    return StepSizes(float(loc), float(kap))


def as_data(data):
    """Stack frames into an ``(n, d, p)`` float array and check shapes."""
    X = np.asarray(data, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"data must have shape (n, d, p), got {X.shape}")
    if X.shape[0] and X.shape[2] > X.shape[1]:
        raise ValueError("frames need p <= d")
    return X


def _new_acceptance():
    return {"location": [0, 0], "kappa": [0, 0]}


@dataclass
class MixtureState:
    """Partition plus per-cluster parameters.

    ``locations[c]`` is the frame of cluster ``c``; ``kappas[c]`` its
    concentrations (location-scale variant) while ``shared_kappa`` holds the
    common concentration of the location-only variant.  Labels are dense,
    numbered by first appearance in ``assignments``.
    """

    assignments: np.ndarray
    locations: np.ndarray
    kappas: np.ndarray = None
    shared_kappa: np.ndarray = None
    alpha: float = 1.0
    sweep_index: int = 0
    acceptance: dict = field(default_factory=_new_acceptance)

    @property
    def n_clusters(self):
        return len(self.locations)

    @property
    def sizes(self):
        return np.bincount(self.assignments, minlength=self.n_clusters)

    def cluster_kappas(self):
        if self.kappas is not None:
            return self.kappas
        return np.broadcast_to(self.shared_kappa, (self.n_clusters, self.locations.shape[2]))

    @property
    def clusters(self):
        kap = self.cluster_kappas()
        return {c: LangevinParams(self.locations[c], kap[c]) for c in range(self.n_clusters)}

    def copy(self):
        return MixtureState(
            assignments=self.assignments.copy(),
            locations=self.locations.copy(),
            kappas=None if self.kappas is None else self.kappas.copy(),
            shared_kappa=None if self.shared_kappa is None else self.shared_kappa.copy(),
            alpha=self.alpha,
            sweep_index=self.sweep_index,
            acceptance={k: list(v) for k, v in self.acceptance.items()},
        )

    def check(self, n=None, geometry=True):
        z = self.assignments
        K = self.n_clusters
        if n is not None and z.size != n:
            raise InvariantViolation(f"{z.size} assignments for {n} observations")
        if z.size and (z.min() < 0 or z.max() >= K):
            raise InvariantViolation("assignment refers to a missing cluster")
        # with labels in range, bincount sums to n by construction
        if K and not np.bincount(z, minlength=K).all():
            raise InvariantViolation("empty cluster present")
        if (self.kappas is None) == (self.shared_kappa is None):
            raise InvariantViolation("exactly one of kappas / shared_kappa must be set")
        if geometry and K and np.any(orthonormality_error(self.locations) > 1e-8):
            raise InvariantViolation("cluster location left the manifold")
        return True


def _relabel(z, *arrays):
    """Dense labels in order of first appearance; reorders per-cluster arrays."""
    if z.size == 0:
        return [z.copy()] + [None if a is None else a[:0] for a in arrays]
    if z.size <= 512:
        seen = {}
        for lab in z.tolist():
            if lab not in seen:
                seen[lab] = len(seen)
        order = np.fromiter(seen, dtype=int, count=len(seen))
    else:
        uniq, first = np.unique(z, return_index=True)
        order = uniq[np.argsort(first)]
    mapping = np.empty(int(z.max()) + 1, dtype=int)
    mapping[order] = np.arange(order.size)
    return [mapping[z]] + [None if a is None else a[order] for a in arrays]


def _log_norms(d, kappas, cfg):
    kappas = np.atleast_2d(kappas)
    if kappas.shape[0] == 0:
        return np.zeros(0)
    return np.atleast_1d(log_0F1(d / 2.0, kappas, cfg))


def _loglik(X, locs, kaps, lnorm):
    """(n, K) matrix of kernel log densities."""
    return np.einsum("ndp,kdp,kp->nk", X, locs, kaps) - lnorm


def _categorical(log_w, u):
    """Inverse-CDF draw from unnormalized log weights with uniform ``u``."""
    cum = np.exp(log_w - log_w.max()).cumsum()
    k = int(cum.searchsorted(u * cum[-1], side="right"))
    return min(k, log_w.size - 1)


def init_state(data, prior, rng, cfg=None):
    """Single-cluster state with parameters drawn from the base measure."""
    X = as_data(data)
    n, d, p = X.shape
    if n < 1:
        raise ValueError("need at least one observation")
    if not np.all(orthonormality_error(X) <= 1e-8):
        raise ValueError("data frames must have orthonormal columns")
    locs = prior.location_prior.sample(rng, 1, d, p)
    kap = prior.kappa_prior.sample(rng, 1, p)
    state = MixtureState(
        assignments=np.zeros(n, dtype=int),
        locations=np.asarray(locs, dtype=float).reshape(1, d, p),
        kappas=None if prior.shared_kappa else kap,
        shared_kappa=kap[0].copy() if prior.shared_kappa else None,
        alpha=prior.alpha,
    )
    state.check(n)
    return state


def reassign_sweep(state, data, prior, m_aux=3, rng=None, cfg=None):
    """One pass of CRP reassignments over all observations.

    Observation ``i`` joins existing cluster ``c`` with weight
    ``n_{c,-i} g(X_i | theta_c)`` or one of ``m_aux`` auxiliary tables with
    weight ``(alpha / m_aux) g(X_i | theta_aux)``.  When ``i`` was alone, its
    old parameters fill the first auxiliary slot.
    """
    if m_aux < 1:
        raise ValueError("m_aux must be >= 1")
    X = as_data(data)
    n, d, p = X.shape
    st = state.copy()
    K0 = st.n_clusters
    cap = K0 + n
    locs = np.empty((cap, d, p))
    locs[:K0] = st.locations
    kaps = np.empty((cap, p))
    kaps[:K0] = st.cluster_kappas()
    lnorm = np.empty(cap)
    lnorm[:K0] = _log_norms(d, kaps[:K0], cfg)
    counts = np.zeros(cap, dtype=int)
    counts[:K0] = st.sizes
    L = np.empty((n, cap))
    L[:, :K0] = _loglik(X, locs[:K0], kaps[:K0], lnorm[:K0])

    aux_G = prior.location_prior.sample(rng, n * m_aux, d, p).reshape(n, m_aux, d, p)
    if prior.shared_kappa:
        aux_K = np.broadcast_to(st.shared_kappa, (n, m_aux, p))
        aux_norm = np.full((n, m_aux), lnorm[0] if K0 else _log_norms(d, st.shared_kappa, cfg)[0])
    else:
        aux_K = prior.kappa_prior.sample(rng, n * m_aux, p).reshape(n, m_aux, p)
        aux_norm = _log_norms(d, aux_K.reshape(-1, p), cfg).reshape(n, m_aux)
    ll_aux = np.einsum("ndp,nmdp,nmp->nm", X, aux_G, aux_K) - aux_norm
    log_new = np.log(st.alpha / m_aux)
    with np.errstate(divide="ignore"):
        log_n = np.log(np.arange(n + 1.0))
    buf = np.empty(cap + m_aux)
    u = rng.random(n)

    # emptied clusters keep their slot (weight -inf) until relabelling
    z = st.assignments.copy()
    K = K0
    for i in range(n):
        c = z[i]
        counts[c] -= 1
        singleton = counts[c] == 0
        log_w = buf[:K + m_aux]
        np.add(log_n[counts[:K]], L[i, :K], out=log_w[:K])
        np.add(log_new, ll_aux[i], out=log_w[K:])
        if singleton:
            log_w[K] = log_new + L[i, c]
        k = _categorical(log_w, u[i])
        if k < K:
            z[i] = k
            counts[k] += 1
            continue
        j = k - K
        if singleton and j == 0:
            counts[c] = 1
            continue
        s = K
        K += 1
        locs[s] = aux_G[i, j]
        kaps[s] = aux_K[i, j]
        lnorm[s] = aux_norm[i, j]
        L[:, s] = np.einsum("ndp,dp,p->n", X, locs[s], kaps[s]) - lnorm[s]
        counts[s] = 1
        z[i] = s

    z, new_locs, new_kaps = _relabel(z, locs[:K], kaps[:K])
    st.assignments = z
    st.locations = new_locs
    if not prior.shared_kappa:
        st.kappas = new_kaps
    # locations are either untouched or fresh prior draws here
    st.check(n, geometry=False)
    return st


def _cluster_sums(X, z, K):
    onehot = (z[None, :] == np.arange(K)[:, None]).astype(float)
    return (onehot @ X.reshape(X.shape[0], -1)).reshape((K,) + X.shape[1:])


def update_cluster_params(state, data, prior, step_sizes=None, rng=None, cfg=None):
    """Metropolis-Hastings updates of cluster locations and concentrations.

    Locations are proposed by ``prior.location_prior.propose`` (a symmetric
    move); concentrations by ``prior.kappa_prior.propose`` (a log-normal walk
    for continuous priors, with its Jacobian in the ratio).  The likelihood
    of a cluster only depends on the sum of its member frames, so each ratio
    costs O(d p) plus one normalizer evaluation.
    """
    steps = _as_steps(step_sizes)
    X = as_data(data)
    n, d, p = X.shape
    st = state.copy()
    K = st.n_clusters
    if K == 0:
        return st
    T = _cluster_sums(X, st.assignments, K)
    sizes = st.sizes
    kap = np.array(st.cluster_kappas())
    loc_prior = prior.location_prior

    G = st.locations
    G_new = np.asarray(loc_prior.propose(G, steps.location, rng), dtype=float).reshape(G.shape)
    delta = np.einsum("kdp,kdp,kp->k", G_new - G, T, kap)
    if not getattr(loc_prior, "uniform_moves", False):
        delta = delta + loc_prior.logpdf(G_new) - loc_prior.logpdf(G)
    acc = np.log(rng.random(K)) < delta
    G = np.where(acc[:, None, None], G_new, G)
    if isinstance(loc_prior, HaarLocation):
        bad = orthonormality_error(G) > ORTHO_TOL
        if np.any(bad):
            G[bad] = project(G[bad])
    st.locations = G
    st.acceptance["location"][0] += int(acc.sum())
    st.acceptance["location"][1] += K

    kp = prior.kappa_prior
    dots = np.einsum("kdp,kdp->kp", G, T)
    if prior.shared_kappa:
        old = st.shared_kappa
        new, log_h = kp.propose(old, steps.kappa, rng)
        lp_new = float(kp.logpdf(new))
        delta = -np.inf
        if np.isfinite(lp_new):
            norms = _log_norms(d, np.stack([old, new]), cfg)
            delta = (float(np.sum(dots @ (new - old))) - n * (norms[1] - norms[0])
                     + lp_new - float(kp.logpdf(old)) + float(log_h))
        ok = np.log(rng.random()) < delta
        if ok:
            st.shared_kappa = np.asarray(new, dtype=float)
        st.acceptance["kappa"][0] += int(ok)
        st.acceptance["kappa"][1] += 1
    else:
        new, log_h = kp.propose(kap, steps.kappa, rng)
        new = np.asarray(new, dtype=float).reshape(kap.shape)
        lp_new = np.broadcast_to(kp.logpdf(new), (K,))
        delta = np.full(K, -np.inf)
        fin = np.isfinite(lp_new)
        if np.any(fin):
            norms = _log_norms(d, np.concatenate([kap[fin], new[fin]]), cfg)
            nf = int(fin.sum())
            delta[fin] = (np.sum(dots[fin] * (new[fin] - kap[fin]), axis=1)
                          - sizes[fin] * (norms[nf:] - norms[:nf])
                          + lp_new[fin] - np.broadcast_to(kp.logpdf(kap), (K,))[fin]
                          + np.broadcast_to(log_h, (K,))[fin])
        acc = np.log(rng.random(K)) < delta
        st.kappas = np.where(acc[:, None], new, kap)
        st.acceptance["kappa"][0] += int(acc.sum())
        st.acceptance["kappa"][1] += K
    return st


def log_crp(sizes, alpha):
    """Log probability of a partition with block ``sizes`` under CRP(alpha)."""
    sizes = np.asarray(sizes)
    n = int(sizes.sum())
    return (sizes.size * np.log(alpha) + np.sum(gammaln(sizes))
            + gammaln(alpha) - gammaln(alpha + n))


def log_joint(state, data, prior, cfg=None):
    """Unnormalized log posterior of a state (partition and parameters)."""
    X = as_data(data)
    n, d, p = X.shape
    K = state.n_clusters
    if K == 0:
        return 0.0
    T = _cluster_sums(X, state.assignments, K)
    kap = state.cluster_kappas()
    lnorm = _log_norms(d, kap, cfg)
    sizes = state.sizes
    ll = np.einsum("kdp,kdp,kp->", state.locations, T, kap) - np.sum(sizes * lnorm)
    lp = float(np.sum(prior.location_prior.logpdf(state.locations)))
    if prior.shared_kappa:
        lp += float(prior.kappa_prior.logpdf(state.shared_kappa))
    else:
        lp += float(np.sum(prior.kappa_prior.logpdf(state.kappas)))
    return float(log_crp(sizes, state.alpha) + ll + lp)


def _update_alpha(alpha, n, K, shape, rate, rng):
    # Escobar & West (1995) auxiliary-variable update under a Gamma prior
    eta = rng.beta(alpha + 1.0, n)
    odds = (shape + K - 1.0) / (n * (rate - np.log(eta)))
    shape_post = shape + K if rng.random() < odds / (1.0 + odds) else shape + K - 1.0
    return rng.gamma(shape_post, 1.0 / (rate - np.log(eta)))


@dataclass
class ChainOutput:
    """Retained (thinned, post burn-in) states of a Gibbs run."""

    assignments: np.ndarray  # (R, n)
    locations: list  # R arrays of shape (K_r, d, p)
    kappas: list  # R arrays of shape (K_r, p)
    shared_kappa: np.ndarray  # (R, p) or None
    alpha: np.ndarray  # (R,)
    log_joint: np.ndarray  # (R,)
    acceptance: dict
    seed: object
    config: dict
    n_clusters_trace: np.ndarray  # number of clusters after every iteration

    @property
    def n_retained(self):
        return self.assignments.shape[0]

    @property
    def n_obs(self):
        return self.assignments.shape[1]

    def acceptance_rates(self):
        return {k: (a / t if t else float("nan")) for k, (a, t) in self.acceptance.items()}

    def cluster_sizes(self):
        """Cluster-size vector of every retained state."""
        return [np.bincount(z, minlength=len(loc))
                for z, loc in zip(self.assignments, self.locations)]

    def state(self, r):
        return MixtureState(
            assignments=self.assignments[r].copy(),
            locations=self.locations[r].copy(),
            kappas=None if self.shared_kappa is not None else self.kappas[r].copy(),
            shared_kappa=None if self.shared_kappa is None else self.shared_kappa[r].copy(),
            alpha=float(self.alpha[r]),
        )

    @classmethod
    def from_states(cls, states, log_joints=None, seed=None, config=None):
        """Build a chain from explicit states (stubs, tests, reloaded runs)."""
        states = list(states)
        shared = states[0].shared_kappa is not None
        R = len(states)
        return cls(
            assignments=np.stack([s.assignments for s in states]).reshape(R, -1),
            locations=[s.locations for s in states],
            kappas=[np.array(s.cluster_kappas()) for s in states],
            shared_kappa=np.stack([s.shared_kappa for s in states]) if shared else None,
            alpha=np.array([s.alpha for s in states], dtype=float),
            log_joint=np.zeros(R) if log_joints is None else np.asarray(log_joints, dtype=float),
            acceptance=_new_acceptance(),
            seed=seed,
            config=config or {},
            n_clusters_trace=np.array([s.n_clusters for s in states]),
        )


def run_chain(data, prior, iters, burn_in=0, thin=1, m_aux=3, step_sizes=None,
              seed=0, cfg=None, init=None, callback=None):
    """Run the Gibbs sampler and keep every ``thin``-th state after burn-in.

    Iteration ``t`` (0-based) is retained when ``t >= burn_in`` and
    ``(t - burn_in) % thin == 0``.  The run is a deterministic function of
    ``seed``.
    """
    if not iters > burn_in >= 0:
        raise ValueError("need iters > burn_in >= 0")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    steps = _as_steps(step_sizes)
    X = as_data(data)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    state = init.copy() if init is not None else init_state(X, prior, rng, cfg)
    kept = []
    trace = np.empty(iters, dtype=int)
    for t in range(iters):
        state = reassign_sweep(state, X, prior, m_aux, rng, cfg)
        state = update_cluster_params(state, X, prior, steps, rng, cfg)
        if prior.alpha_hyperprior is not None:
            a, b = prior.alpha_hyperprior
            state.alpha = float(_update_alpha(state.alpha, n, state.n_clusters, a, b, rng))
        state.sweep_index = t + 1
        trace[t] = state.n_clusters
        if t >= burn_in and (t - burn_in) % thin == 0:
            kept.append((state, log_joint(state, X, prior, cfg)))
        if callback is not None:
            callback(t, state)
    states = [s for s, _ in kept]
    chain = ChainOutput.from_states(
        states,
        log_joints=[lj for _, lj in kept],
        seed=seed,
        config={
            "variant": prior.variant,
            "alpha": prior.alpha,
            "iters": iters,
            "burn_in": burn_in,
            "thin": thin,
            "m_aux": m_aux,
            "step_location": steps.location,
            "step_kappa": steps.kappa,
        },
    )
    chain.acceptance = {k: list(v) for k, v in state.acceptance.items()}
    chain.n_clusters_trace = trace
    return chain


# ---------------------------------------------------------------------------
# posterior summaries


def coclustering_matrix(chain):
    """Counts of retained states in which observations i and j share a cluster."""
    Z = np.asarray(chain.assignments)
    R, n = Z.shape
    if R < 1:
        raise ValueError("chain has no retained states")
    out = np.zeros((n, n), dtype=np.int64)
    for start in range(0, R, 256):
        block = Z[start:start + 256]
        K = int(block.max()) + 1 if block.size else 1
        onehot = (block[:, :, None] == np.arange(K)).astype(np.int64)
        out += np.einsum("rik,rjk->ij", onehot, onehot)
    return out


def cluster_count_histogram(chain, min_size=1):
    """Map from number of clusters with at least ``min_size`` members to the
    number of retained states showing that count."""
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    hist = {}
    for sizes in chain.cluster_sizes():
        c = int(np.sum(sizes >= min_size))
        hist[c] = hist.get(c, 0) + 1
    return dict(sorted(hist.items()))


def modal_cluster_count(chain, min_size=1):
    hist = cluster_count_histogram(chain, min_size)
    return max(hist, key=lambda k: (hist[k], -k))


def map_state_index(chain):
    """Index of the retained state with the highest log joint density."""
    return int(np.argmax(chain.log_joint))


def base_log_density(X, prior, rng=None, n_samples=2000, kappa=None, cfg=None):
    """Log of the base-measure marginal ``int g(X | G, kappa) P0(dG dkappa)``.

    Under the uniform location prior the kernel integrates to one in ``G``
    for every ``kappa``, so the marginal is exactly 1.  For a finite set of
    frames the average over frames is exact; an infinite kappa prior is then
    integrated by Monte Carlo with ``n_samples`` draws.  ``kappa`` fixes the
    concentration (location-only variant).
    """
    X = np.asarray(X, dtype=float)
    batch = X.shape[:-2]
    d, p = X.shape[-2:]
    loc = prior.location_prior
    if isinstance(loc, HaarLocation):
        return np.zeros(batch)
    if not isinstance(loc, DiscreteLocation):
        raise TypeError(f"unsupported location prior {type(loc).__name__}")
    if kappa is not None:
        kaps = np.atleast_2d(kappa)
    elif isinstance(prior.kappa_prior, DiscreteKappa):
        kaps = prior.kappa_prior.values
    elif isinstance(prior.kappa_prior, PointMass):
        kaps = prior.kappa_prior.value[None]
    else:
        if rng is None:
            raise ValueError("rng required to integrate a continuous kappa prior")
        kaps = prior.kappa_prior.sample(rng, n_samples, p)
    lnorm = _log_norms(d, kaps, cfg)
    Xf = X.reshape(-1, d, p)
    # (B, frames, kappas)
    lin = np.einsum("bdp,fdp,kp->bfk", Xf, loc.frames, kaps) - lnorm
    out = logsumexp(lin.reshape(lin.shape[0], -1), axis=1) - np.log(lin.shape[1] * lin.shape[2])
    return out.reshape(batch)


def _predictive_components(chain, prior, max_states=None):
    R = chain.n_retained
    idx = np.arange(R)
    if max_states is not None and R > max_states:
        idx = np.unique(np.linspace(0, R - 1, max_states).round().astype(int))
    n = chain.n_obs
    locs, kaps, logw = [], [], []
    base_logw = []
    shared = []
    for r in idx:
        alpha = float(chain.alpha[r])
        sizes = np.bincount(chain.assignments[r], minlength=len(chain.locations[r]))
        if sizes.size:
            locs.append(chain.locations[r])
            kaps.append(np.asarray(chain.kappas[r]))
            logw.append(np.log(sizes) - np.log(n + alpha) - np.log(idx.size))
        base_logw.append(np.log(alpha) - np.log(n + alpha) - np.log(idx.size))
        shared.append(None if chain.shared_kappa is None else chain.shared_kappa[r])
    return locs, kaps, logw, np.asarray(base_logw), shared


def predictive_log_density(X, chain, prior, rng=None, n_base_samples=2000,
                           max_states=None, cfg=None, chunk=4096):
    """Vectorized log posterior-predictive density at frames ``X`` (B, d, p)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    Xb = X[None] if single else X
    d = Xb.shape[1]
    locs, kaps, logw, base_logw, shared = _predictive_components(chain, prior, max_states)
    if locs:
        L = np.concatenate(locs)
        Kp = np.concatenate(kaps)
        W = np.concatenate(logw)
        lnorm = _log_norms(d, Kp, cfg)
    out = np.empty(Xb.shape[0])
    for s in range(0, Xb.shape[0], chunk):
        xb = Xb[s:s + chunk]
        parts = []
        if locs:
            comp = np.einsum("bdp,kdp,kp->bk", xb, L, Kp) - lnorm + W
            parts.append(logsumexp(comp, axis=1))
        if shared[0] is None or isinstance(prior.location_prior, HaarLocation):
            base = base_log_density(xb, prior, rng, n_base_samples, cfg=cfg)
            parts.append(logsumexp(base_logw) + base)
        else:
            bases = np.stack([base_log_density(xb, prior, kappa=k, cfg=cfg) for k in shared], axis=1)
            parts.append(logsumexp(bases + base_logw, axis=1))
        out[s:s + chunk] = logsumexp(np.stack(parts), axis=0)
    return out[0] if single else out


def log_predictive(X_new, chain, prior, rng=None, n_base_samples=2000, cfg=None):
    """Log posterior-predictive density of a new frame.

    Average over retained states of
    ``sum_c n_c/(n+alpha) g(X | theta_c) + alpha/(n+alpha) g0(X)`` where
    ``g0`` is the base-measure marginal of the kernel.
    """
    return predictive_log_density(X_new, chain, prior, rng, n_base_samples, cfg=cfg)
