"""Monte Carlo checks of divergences, smoothing limits and prior tails.

Integrals over V_{p,d} use uniform (Haar) draws as importance proposals
unless noted; all densities are relative to the normalized Haar measure.
"sup over X" quantities are maxima over random probes plus known modes and
are therefore lower bounds of the true suprema.
"""

import warnings
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .hypergeom import log_0F1
from .langevin import LangevinParams, log_density, sample_sequential
from .manifold import frobenius_distance, perturb, sample_haar


class MCEstimate(NamedTuple):
    estimate: float
    std_error: float


class ClampedEstimateWarning(RuntimeWarning):
    """A Monte Carlo radicand came out negative and was clamped to zero."""


class DensityHandle:
    """A log density on V_{p,d} with shape metadata.

    Parameters
    ----------
    log_pdf : callable
        Maps an array ``(n, d, p)`` to ``n`` log densities.
    d, p : int
    modes : sequence of (d, p) arrays, optional
        High-density points used as extra probes.
    sampler : callable, optional
        ``sampler(rng, n) -> (n, d, p)`` exact draws, when available.
    """

    def __init__(self, log_pdf, d, p, modes=(), sampler=None, label=""):
        self._log_pdf = log_pdf
        self.d = int(d)
        self.p = int(p)
        self.modes = [np.asarray(m, dtype=float) for m in modes]
        self.sampler = sampler
        self.label = label

    def __repr__(self):
        return f"DensityHandle({self.label or 'custom'}, d={self.d}, p={self.p})"

    def log_pdf(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            return float(self._log_pdf(X[None])[0])
        return np.asarray(self._log_pdf(X), dtype=float)

    def pdf(self, X):
        return np.exp(self.log_pdf(X))

    @classmethod
    def uniform(cls, d, p):
        return cls(lambda X: np.zeros(len(X)), d, p,
                   sampler=lambda rng, n: sample_haar(d, p, rng, size=n), label="uniform")

    @classmethod
    def langevin(cls, params, cfg=None):
        d, p = params.G.shape

        def sampler(rng, n):
            return sample_sequential(np.broadcast_to(params.G, (n, d, p)), params.kappa, rng)

        return cls(lambda X: log_density(X, params, cfg), d, p, modes=[params.G],
                   sampler=sampler, label="langevin")

    @classmethod
    def mixture(cls, weights, components, cfg=None):
        """Finite mixture of Langevin kernels (weights are normalized here)."""
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        comps = list(components)
        d, p = comps[0].G.shape
        G = np.stack([c.G for c in comps])
        K = np.stack([c.kappa for c in comps])
        logc = np.log(w) - np.atleast_1d(log_0F1(d / 2.0, K, cfg))

        def log_pdf(X):
            return logsumexp(np.einsum("ndp,kdp,kp->nk", X, G, K) + logc, axis=1)

        def sampler(rng, n):
            idx = rng.choice(len(w), size=n, p=w)
            return sample_sequential(G[idx], K[idx], rng)

        return cls(log_pdf, d, p, modes=list(G), sampler=sampler, label="mixture")

    @classmethod
    def predictive(cls, chain, prior, d, p, rng=None, max_states=200, cfg=None):
        """Posterior predictive of a fitted chain."""
        from .mixture import predictive_log_density

        modes = []
        if chain.n_retained and len(chain.locations[-1]):
            modes = list(chain.locations[-1])

        def log_pdf(X):
            return predictive_log_density(X, chain, prior, rng=rng, max_states=max_states, cfg=cfg)

        return cls(log_pdf, d, p, modes=modes, label="predictive")


def _check_pair(f, g):
    if (f.d, f.p) != (g.d, g.p):
        raise ValueError(f"dimension mismatch: ({f.d},{f.p}) vs ({g.d},{g.p})")


def _haar_batches(d, p, n, rng, chunk=100_000):
    done = 0
    while done < n:
        m = min(chunk, n - done)
        yield sample_haar(d, p, rng, size=m)
        done += m


def _mean_se(sums, sums_sq, n):
    mean = sums / n
    var = max(sums_sq / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return mean, np.sqrt(var / n)


def hellinger_mc(f, g, n_samples=100_000, rng=None, method="haar"):
    """Hellinger distance ``sqrt(1 - BC)`` with ``BC = int sqrt(f g)``.

    ``method="haar"`` averages ``sqrt(f g)`` over uniform draws;
    ``method="direct"`` averages ``sqrt(g / f)`` over draws from ``f``
    (needs ``f.sampler``; the summand has second moment 1, so the error is
    bounded even for concentrated densities).  The SE is by the delta method.
    """
    _check_pair(f, g)
    rng = rng if rng is not None else np.random.default_rng()
    if method == "direct" and f.sampler is None:
        raise ValueError("direct method needs a sampler for f")
    if method not in ("haar", "direct"):
        raise ValueError(f"unknown method {method!r}")
    s = s2 = 0.0
    done = 0
    while done < n_samples:
        m = min(100_000, n_samples - done)
        if method == "haar":
            X = sample_haar(f.d, f.p, rng, size=m)
            v = np.exp(0.5 * (f.log_pdf(X) + g.log_pdf(X)))
        else:
            X = f.sampler(rng, m)
            v = np.exp(0.5 * (g.log_pdf(X) - f.log_pdf(X)))
        s += v.sum()
        s2 += np.dot(v, v)
        done += m
    bc, se_bc = _mean_se(s, s2, n_samples)
    rad = 1.0 - bc
    if rad <= 0:
        if rad < 0:
            warnings.warn(f"negative radicand {rad:.3g} clamped to 0", ClampedEstimateWarning)
        return MCEstimate(0.0, float(np.sqrt(se_bc)))
    return MCEstimate(float(np.sqrt(rad)), float(se_bc / (2.0 * np.sqrt(rad))))


def kl_mc(f0, f, n_samples=100_000, rng=None, method="haar"):
    """KL divergence ``int f0 log(f0 / f)``.

    ``method="haar"`` averages ``f0 (log f0 - log f)`` over uniform draws;
    ``method="direct"`` averages ``log f0 - log f`` over draws from ``f0``
    (needs ``f0.sampler``, and is far less noisy for concentrated ``f0``).
    """
    _check_pair(f0, f)
    rng = rng if rng is not None else np.random.default_rng()
    s = s2 = 0.0
    done = 0
    while done < n_samples:
        m = min(100_000, n_samples - done)
        if method == "haar":
            X = sample_haar(f0.d, f0.p, rng, size=m)
            l0 = f0.log_pdf(X)
            v = np.exp(l0) * (l0 - f.log_pdf(X))
        elif method == "direct":
            if f0.sampler is None:
                raise ValueError("direct method needs a sampler for f0")
            X = f0.sampler(rng, m)
            v = f0.log_pdf(X) - f.log_pdf(X)
        else:
            raise ValueError(f"unknown method {method!r}")
        s += v.sum()
        s2 += np.dot(v, v)
        done += m
    return MCEstimate(*map(float, _mean_se(s, s2, n_samples)))


def kernel_smooth_mc(f, kappa, X, n_inner, rng):
    """Estimate ``int g(X, G, kappa) f(G) dG`` at each probe in ``X`` (m, d, p).

    As a function of ``G`` the kernel is a Langevin density with location
    ``X``, so the integral is ``E[f(G)]`` under exact draws from it.

    Returns
    -------
    (estimates, std_errors) arrays of length m.
    """
    X = np.asarray(X, dtype=float)
    m, d, p = X.shape
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (p,))
    est = np.empty(m)
    se = np.empty(m)
    per = max(1, 200_000 // n_inner)
    for s in range(0, m, per):
        Xb = X[s:s + per]
        b = len(Xb)
        G = sample_sequential(np.repeat(Xb, n_inner, axis=0), kappa, rng)
        vals = f.pdf(G).reshape(b, n_inner)
        est[s:s + b] = vals.mean(axis=1)
        se[s:s + b] = vals.std(axis=1, ddof=1) / np.sqrt(n_inner)
    return est, se


def kernel_approx_error(f, kappa, n_outer=1000, n_inner=1000, rng=None, return_details=False):
    """``max_X |f(X) - int g(X, G, kappa) f(G) dG|`` over Haar probes and modes.

    Parameters
    ----------
    f : DensityHandle
    kappa : array_like, shape (p,) or scalar
    n_outer, n_inner : int
        Probe count and inner sample size, both at least 1000.
    """
    if n_outer < 1000 or n_inner < 1000:
        raise ValueError("n_outer and n_inner must be >= 1000")
    rng = rng if rng is not None else np.random.default_rng()
    probes = sample_haar(f.d, f.p, rng, size=n_outer)
    if f.modes:
        probes = np.concatenate([probes, np.stack(f.modes)])
    smooth, se = kernel_smooth_mc(f, kappa, probes, n_inner, rng)
    err = np.abs(f.pdf(probes) - smooth)
    i = int(np.argmax(err))
    if return_details:
        return float(err[i]), float(se[i])
    return float(err[i])


def phi(kappa):
    """``sqrt(sum_i (kappa_i + 1)**2)``; batches over leading axes."""
    kappa = np.asarray(kappa, dtype=float)
    return np.sqrt(np.sum((kappa + 1.0) ** 2, axis=-1))


def _kernel(X, G, kappa, lognorm):
    return np.exp(np.einsum("ndp,ndp,np->n", X, G, kappa) - lognorm)


def lipschitz_ratio_location(kappa, trials=1000, rng=None, d=3):
    """Max of ``|g(X,G1,k) - g(X,G2,k)| / ||G1 - G2||_F`` over random triples.

    Half of the probes take ``X = G1`` (where the kernel is steepest); ``G2``
    is a projected perturbation of ``G1`` with log-uniform step in
    ``[1e-3, 1]``.
    """
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    rng = rng if rng is not None else np.random.default_rng()
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    p = kappa.size
    G1 = sample_haar(d, p, rng, size=trials)
    steps = 10.0 ** rng.uniform(-3, 0, size=trials)
    G2 = np.stack([perturb(g, s, rng) for g, s in zip(G1, steps)])
    X = sample_haar(d, p, rng, size=trials)
    X[: trials // 2] = G1[: trials // 2]
    K = np.broadcast_to(kappa, (trials, p))
    lz = log_0F1(d / 2.0, kappa)
    rho = frobenius_distance(G1, G2)
    keep = rho > 0
    diff = np.abs(_kernel(X, G1, K, lz) - _kernel(X, G2, K, lz))
    return float(np.max(diff[keep] / rho[keep])) if np.any(keep) else 0.0


def concentration_difference_ratio(X, G, kappa, kappa_tilde, d=None):
    """``|g(X,G,k) - g(X,G,k~)| / ||k - k~||_2`` for batches of pairs."""
    X = np.asarray(X, dtype=float)
    G = np.asarray(G, dtype=float)
    k1 = np.atleast_2d(kappa)
    k2 = np.atleast_2d(kappa_tilde)
    d = X.shape[-2] if d is None else d
    X3 = X.reshape((-1,) + X.shape[-2:])
    G3 = np.broadcast_to(G, X3.shape)
    n = len(X3)
    k1 = np.broadcast_to(k1, (n, k1.shape[-1]))
    k2 = np.broadcast_to(k2, (n, k2.shape[-1]))
    g1 = _kernel(X3, G3, k1, np.atleast_1d(log_0F1(d / 2.0, k1)))
    g2 = _kernel(X3, G3, k2, np.atleast_1d(log_0F1(d / 2.0, k2)))
    dist = np.linalg.norm(k1 - k2, axis=1)
    return np.abs(g1 - g2) / dist


def _kappa_in_ball(rng, n, p, k_bound):
    # uniform in {kappa >= 0 : phi(kappa) <= k_bound} by rejection from a box
    out = np.empty((0, p))
    while len(out) < n:
        cand = rng.uniform(0.0, k_bound - 1.0, size=(2 * n, p))
        out = np.concatenate([out, cand[phi(cand) <= k_bound]])
    return out[:n]


def lipschitz_ratio_concentration(k_bound, trials=1000, rng=None, d=3, p=2):
    """Max of ``|g(X,G,k) - g(X,G,k~)| / ||k - k~||`` with ``phi <= k_bound``.

    ``k~`` is ``k`` moved by a log-uniform distance in ``[1e-3, 1]`` and kept
    inside the bound; half of the probes use ``X = G``.
    """
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    if k_bound <= np.sqrt(p):
        raise ValueError("k_bound must exceed phi(0) = sqrt(p)")
    rng = rng if rng is not None else np.random.default_rng()
    k1 = _kappa_in_ball(rng, trials, p, k_bound)
    k2 = np.empty_like(k1)
    todo = np.arange(trials)
    while todo.size:
        u = rng.standard_normal((todo.size, p))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        cand = k1[todo] + (10.0 ** rng.uniform(-3, 0, size=todo.size))[:, None] * u
        ok = np.all(cand >= 0, axis=1) & (phi(cand) <= k_bound)
        k2[todo[ok]] = cand[ok]
        todo = todo[~ok]
    G = sample_haar(d, p, rng, size=trials)
    X = sample_haar(d, p, rng, size=trials)
    X[: trials // 2] = G[: trials // 2]
    ratios = concentration_difference_ratio(X, G, k1, k2, d)
    return float(np.max(ratios[np.isfinite(ratios)]))


def tail_mass(kappa_prior, a, n_grid, p, n_draws=10**6, rng=None):
    """Monte Carlo prior mass of ``{phi(kappa) > n**a}`` for each n."""
    rng = rng if rng is not None else np.random.default_rng()
    ph = phi(kappa_prior.sample(rng, n_draws, p))
    return {int(n): float(np.mean(ph > float(n) ** a)) for n in n_grid}


def tail_condition_check(kappa_prior, a, beta, n_grid, d=3, p=2, n_draws=10**6, rng=None):
    """Check ``P(phi(kappa) > n**a) <= exp(-n beta)`` for each n in ``n_grid``.

    Requires ``0 < a < 1/((p+2) d p)``.  Returns ``{n: passed}``.
    """
    bound = 1.0 / ((p + 2) * d * p)
    if not 0 < a < bound:
        raise ValueError(f"need 0 < a < {bound:.6g}")
    masses = tail_mass(kappa_prior, a, n_grid, p, n_draws, rng)
    return {n: bool(m <= np.exp(-n * beta)) for n, m in masses.items()}


def fit_loglog_slope(x, y):
    """Least-squares slope of ``log y`` on ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)),
                            np.log(np.asarray(y, dtype=float)), 1)[0])


def langevin_handle(G, kappa, cfg=None):
    return DensityHandle.langevin(LangevinParams(G, kappa), cfg)
