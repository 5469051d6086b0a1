"""Matrix Langevin kernel g(X; G, kappa) = etr(kappa G^T X) / Z(kappa).

Densities are with respect to the normalized Haar measure on V_{p,d}, so the
uniform law has density 1 and ``Z`` is exactly ``0F1(d/2; kappa**2/4)``.
The kernel uses ``F = G diag(kappa)`` (the right orientation ``H`` is the
identity, and there is deliberately no field for it).
"""

from dataclasses import dataclass

import numpy as np

from .hypergeom import (
    DEFAULT_CONFIG,
    log_0F1,
    log_sphere_normalizer,
    mean_coefficient_matrix,
)
from .manifold import ORTHO_TOL, orthonormality_error, sample_haar

HAAR_KAPPA_LIMIT = 200.0


class ConcentrationTooLarge(ValueError):
    """Rejection from the uniform envelope is infeasible for this kappa."""


@dataclass(frozen=True, eq=False)
class LangevinParams:
    """Location frame ``G`` (d x p) and concentrations ``kappa`` (length p)."""

    G: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        kappa = np.array(self.kappa, dtype=float).reshape(-1)
        if G.ndim != 2 or G.shape[1] != kappa.size:
            raise ValueError(f"G shape {G.shape} incompatible with kappa of length {kappa.size}")
        if orthonormality_error(G) > ORTHO_TOL:
            raise ValueError("G does not have orthonormal columns")
        if np.any(kappa < 0) or not np.all(np.isfinite(kappa)):
            raise ValueError("kappa must be finite and nonnegative")
        G.setflags(write=False)
        kappa.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "kappa", kappa)

    @property
    def d(self):
        return self.G.shape[0]

    @property
    def p(self):
        return self.G.shape[1]

    @property
    def F(self):
        return self.G * self.kappa

    def log_normalizer(self, cfg=None):
        return log_0F1(self.d / 2.0, self.kappa, cfg)


def _column_dots(X, G):
    """``G[:, i]^T X[:, i]`` for every column; X may be batched."""
    return np.einsum("...di,...di->...i", X, G)


def log_density(X, params, cfg=None):
    """Log kernel density at ``X`` (a frame or a batch of frames)."""
    X = np.asarray(X, dtype=float)
    if X.shape[-2:] != params.G.shape:
        raise ValueError(f"X shape {X.shape} does not match G {params.G.shape}")
    lin = _column_dots(X, params.G) @ params.kappa
    return lin - params.log_normalizer(cfg)


def density(X, params, cfg=None):
    return np.exp(log_density(X, params, cfg))


def mean(params, cfg=None):
    """``E(X) = F U``; a d x p matrix strictly inside the unit ball."""
    U = mean_coefficient_matrix(params.d, params.kappa, cfg)
    return params.F @ U


# ---------------------------------------------------------------------------
# sampling


def sample_vmf_cosine(m, kappa, rng):
    """Draw ``w = mu^T y`` for ``y`` von Mises-Fisher on S^{m-1}, one per kappa.

    Wood's (1994) rejection scheme for ``m >= 2``; ``m = 1`` is the two-point
    law on {-1, +1}.
    """
    kappa = np.asarray(kappa, dtype=float)
    if m == 1:
        prob_plus = 0.5 * (1.0 + np.tanh(kappa))
        return np.where(rng.random(kappa.shape) < prob_plus, 1.0, -1.0)
    dim = m - 1.0
    b = dim / (2.0 * kappa + np.sqrt(4.0 * kappa**2 + dim**2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + dim * np.log1p(-x0**2)
    w = np.empty(kappa.shape)
    todo = np.arange(kappa.size)
    flat_w = w.reshape(-1)
    kf, bf, xf, cf = (a.reshape(-1) for a in (kappa, b, x0, c))
    while todo.size:
        z = rng.beta(dim / 2.0, dim / 2.0, size=todo.size)
        bt = bf[todo]
        cand = (1.0 - (1.0 + bt) * z) / (1.0 - (1.0 - bt) * z)
        u = rng.random(todo.size)
        ok = kf[todo] * cand + dim * np.log1p(-xf[todo] * cand) - cf[todo] >= np.log(u)
        flat_w[todo[ok]] = cand[ok]
        todo = todo[~ok]
    return w


def _unit(v, axis=-1):
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def _propose_sequential(G, kappa, rng):
    """Column-by-column proposal and its log acceptance probability.

    Column i is drawn von Mises-Fisher on the unit sphere of the orthogonal
    complement of the previous columns, with mean direction the projection
    of ``G[:, i]`` and concentration ``kappa_i`` times the projection length.
    The ratio of target to proposal is proportional to the product of the
    sphere normalizers at the shrunken concentrations, each bounded by its
    value at the full concentration.
    """
    B, d, p = G.shape
    X = np.zeros((B, d, p))
    log_acc = np.zeros(B)
    for i in range(p):
        m = d - i
        prev = X[:, :, :i]
        g = G[:, :, i]
        v = g - np.einsum("bdi,bi->bd", prev, np.einsum("bdi,bd->bi", prev, g))
        r = np.linalg.norm(v, axis=1)
        z = rng.standard_normal((B, d))
        z = z - np.einsum("bdi,bi->bd", prev, np.einsum("bdi,bd->bi", prev, z))
        degenerate = r < 1e-12
        u = np.where(degenerate[:, None], _unit(z), v / np.where(degenerate, 1.0, r)[:, None])
        r = np.where(degenerate, 0.0, r)
        k_eff = kappa[:, i] * r
        w = sample_vmf_cosine(m, k_eff, rng)
        if m > 1:
            t = z - np.sum(z * u, axis=1, keepdims=True) * u
            t = _unit(t)
            col = w[:, None] * u + np.sqrt(np.clip(1.0 - w**2, 0.0, None))[:, None] * t
        else:
            col = w[:, None] * u
        X[:, :, i] = col
        if i > 0:
            log_acc += log_sphere_normalizer(m, k_eff) - log_sphere_normalizer(m, kappa[:, i])
    return X, log_acc


def sample_sequential(G, kappa, rng):
    """Exact Langevin draws, one per location in the batch ``G`` (B, d, p).

    ``kappa`` is shared (shape (p,)) or per location (shape (B, p)).
    Acceptance probability is ``Z(kappa) / prod_i c_{d-i}(kappa_i)``, which
    stays moderate for large concentrations.
    """
    G = np.asarray(G, dtype=float)
    B, d, p = G.shape
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (B, p))
    out = np.empty_like(G)
    pending = np.arange(B)
    while pending.size:
        X, log_acc = _propose_sequential(G[pending], kappa[pending], rng)
        ok = np.log(rng.random(pending.size)) < log_acc
        out[pending[ok]] = X[ok]
        pending = pending[~ok]
    return out


def _sample_haar_rejection(params, n, rng, cfg):
    d, p = params.G.shape
    total_kappa = float(params.kappa.sum())
    if total_kappa > HAAR_KAPPA_LIMIT:
        raise ConcentrationTooLarge(
            f"sum(kappa) = {total_kappa:.1f} exceeds {HAAR_KAPPA_LIMIT:.0f}; "
            "use method='sequential'"
        )
    rate = np.exp(params.log_normalizer(cfg) - total_kappa)
    accepted = []
    n_acc = 0
    proposals = 0
    while n_acc < n:
        batch = int(min(max(1.3 * (n - n_acc) / rate, 1000), 500_000))
        X = sample_haar(d, p, rng, size=batch)
        log_u = np.log(rng.random(batch))
        ok = np.flatnonzero(log_u <= _column_dots(X, params.G) @ params.kappa - total_kappa)
        need = n - n_acc
        if ok.size >= need:
            ok = ok[:need]
            proposals += int(ok[-1]) + 1
        else:
            proposals += batch
        accepted.append(X[ok])
        n_acc += ok.size
    return np.concatenate(accepted), proposals


def sample(params, rng, size=None, method="haar", return_proposals=False, cfg=None):
    """Draw from the Langevin kernel.

    Parameters
    ----------
    params : LangevinParams
    rng : numpy.random.Generator
    size : int or None
        ``None`` gives one ``(d, p)`` frame, otherwise ``(size, d, p)``.
    method : {"haar", "sequential"}
        ``"haar"`` proposes uniform frames and accepts with probability
        ``exp(sum_i kappa_i (g_i^T x_i - 1))``; it is refused when
        ``sum(kappa) > 200``.  ``"sequential"`` builds frames column by column
        from von Mises-Fisher proposals and has no such limit.  Both are exact.
    return_proposals : bool
        Also return the number of proposals consumed (including accepted ones).
    """
    n = 1 if size is None else int(size)
    cfg = cfg or DEFAULT_CONFIG
    if method == "haar":
        X, proposals = _sample_haar_rejection(params, n, rng, cfg)
    elif method == "sequential":
        X = sample_sequential(np.broadcast_to(params.G, (n,) + params.G.shape),
                              params.kappa, rng)
        proposals = None
    else:
        raise ValueError(f"unknown method {method!r}")
    if size is None:
        X = X[0]
    return (X, proposals) if return_proposals else X


# ---------------------------------------------------------------------------
# column marginals


def _complement_basis(y):
    """Orthonormal bases (N, d, d-1) of the complements of unit vectors y (N, d)."""
    N, d = y.shape
    full = np.linalg.svd(y[:, :, None], full_matrices=True)[0]
    return full[:, :, 1:]


def column_marginal_log_density(Y, params, column, rng=None, n_mc=2000, cfg=None):
    """Log density of one column of X on S^{d-1} (w.r.t. the uniform law).

    For ``p <= 2`` this is exact: integrating the other column over the
    sphere of the complement of ``y`` leaves a von Mises-Fisher normalizer.
    For ``p > 2`` the remaining columns are integrated by Monte Carlo with
    ``n_mc`` uniform frames per point.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    d, p = params.G.shape
    kap = params.kappa
    lin = kap[column] * (Y @ params.G[:, column])
    logZ = params.log_normalizer(cfg)
    if p == 1:
        return lin - logZ
    others = [j for j in range(p) if j != column]
    if p == 2:
        g = params.G[:, others[0]]
        proj = g[None, :] - (Y @ g)[:, None] * Y
        r = np.linalg.norm(proj, axis=1)
        return lin + log_sphere_normalizer(d - 1, kap[others[0]] * r) - logZ
    if rng is None:
        raise ValueError("rng required for p > 2")
    basis = _complement_basis(Y)
    W = sample_haar(d - 1, p - 1, rng, size=n_mc)
    Xo = np.einsum("nde,mef->nmdf", basis, W)
    vals = np.einsum("nmdf,df,f->nm", Xo, params.G[:, others], kap[others])
    from scipy.special import logsumexp

    return lin + logsumexp(vals, axis=1) - np.log(n_mc) - logZ
