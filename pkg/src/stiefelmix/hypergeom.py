"""Matrix-argument hypergeometric function 0F1(a; diag(x)) and friends.

The normalizer of the matrix Langevin kernel on V_{p,d} is
``0F1(d/2; diag(kappa**2) / 4)``.  It is evaluated from the zonal polynomial
series

    0F1(a; X) = sum_k sum_{|lam| = k} C_lam(X) / ((a)_lam k!)

collapsed into a single power series in the eigenvalues ``x_1..x_p``.  The
coefficients of that power series are computed once per ``(a, p, order)``
(in log space) and cached, so evaluating a whole batch of concentration
vectors costs one matrix product and a ``logsumexp``.

Zonal polynomials are Jack polynomials with parameter ``alpha = 2``:
``C_lam = alpha**k k! P_lam / c'_lam`` where ``P_lam`` is the monic Jack
polynomial and ``c'_lam = prod_s (alpha (a(s) + 1) + l(s))`` over the boxes of
``lam``.  ``P_lam`` is expanded in monomials with the branching rule; for
``p <= 2`` closed forms are used instead.
"""

import threading
import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations

import numpy as np
from scipy.special import gammaln, ive, logsumexp

from .manifold import sample_haar

JACK_ALPHA = 2.0
_LOG_ZERO = -1e300  # stands in for log(0); finite so that 0 * log(0) == 0


class TruncationInsufficient(ArithmeticError):
    """The series tail is still too heavy at the maximum allowed order."""

    def __init__(self, order, tail_fraction):
        self.order = order
        self.tail_fraction = tail_fraction
        super().__init__(
            f"series not converged at order {order} "
            f"(last-order relative mass {tail_fraction:.3g})"
        )


class NearUniformWarning(UserWarning):
    """Finite differences near kappa = 0 lose relative accuracy."""


@dataclass(frozen=True)
class HypergeomConfig:
    """Series and oracle settings.

    The series is summed over partitions of weight up to an order that
    starts at ``max(truncation_order, estimate)`` and grows by half (up to
    ``max_order``) until the terms of the last included weight carry at most
    ``tail_tol`` of the total mass.  The estimate tracks where the series
    mass sits (about ``sum(kappa) / 2``).  For ``p >= 3`` the tables grow
    like ``order**p``, so there the estimate alone sets the start and
    ``truncation_order`` is ignored.
    """

    truncation_order: int = 60
    max_order: int = 320
    tail_tol: float = 1e-12
    mc_samples: int = 100_000

    def __post_init__(self):
        if self.truncation_order < 1:
            raise ValueError("truncation_order must be >= 1")
        if self.max_order < self.truncation_order:
            raise ValueError("max_order must be >= truncation_order")


DEFAULT_CONFIG = HypergeomConfig()


# ---------------------------------------------------------------------------
# partitions and Jack polynomials


def partitions(k, max_parts):
    """Partitions of ``k`` with at most ``max_parts`` parts, as tuples."""

    def rec(remaining, largest, parts_left):
        if remaining == 0:
            yield ()
            return
        if parts_left == 0:
            return
        for first in range(min(remaining, largest), 0, -1):
            for rest in rec(remaining - first, first, parts_left - 1):
                yield (first,) + rest

    return list(rec(k, k, max_parts))


def conjugate(lam):
    lam = [v for v in lam if v > 0]
    if not lam:
        return ()
    return tuple(sum(1 for v in lam if v > j) for j in range(lam[0]))


def _box_b(a, l, alpha):
    return (alpha * a + l + 1.0) / (alpha * (a + 1.0) + l)


def _psi(lam, mu, alpha):
    """Branching coefficient of P_lam restricted to P_mu (horizontal strip)."""
    mu = tuple(mu) + (0,) * (len(lam) - len(mu))
    rows = [i for i in range(len(lam)) if lam[i] > mu[i]]
    cols = set()
    for i in rows:
        cols.update(range(mu[i], lam[i]))
    lamc, muc = conjugate(lam), conjugate(mu)
    val = 1.0
    for i in rows:
        for j in range(mu[i]):
            if j in cols:
                continue
            b_mu = _box_b(mu[i] - j - 1, muc[j] - i - 1, alpha)
            b_lam = _box_b(lam[i] - j - 1, lamc[j] - i - 1, alpha)
            val *= b_mu / b_lam
    return val


def _interlacing(lam, n_parts):
    """All mu with at most n_parts parts such that lam/mu is a horizontal strip."""
    lam = tuple(lam) + (0,) * (n_parts + 1 - len(lam))
    ranges = [range(lam[i + 1], lam[i] + 1) for i in range(n_parts)]

    def rec(i):
        if i == n_parts:
            yield ()
            return
        for v in ranges[i]:
            for rest in rec(i + 1):
                yield (v,) + rest

    for mu in rec(0):
        yield tuple(v for v in mu if v > 0)


@lru_cache(maxsize=None)
def jack_p_monomials(lam, n, alpha=JACK_ALPHA):
    """Monomial expansion of the monic Jack polynomial P_lam in n variables.

    Returns a dict mapping partitions ``nu`` (padded to length ``n``) to the
    coefficient of ``m_nu``.
    """
    lam = tuple(v for v in lam if v > 0)
    if len(lam) > n:
        return {}
    if n == 1:
        return {(sum(lam),): 1.0}
    out = {}
    total = sum(lam)
    for mu in _interlacing(lam, n - 1):
        r = total - sum(mu)
        psi = _psi(lam, mu, alpha)
        for nu, coef in jack_p_monomials(mu, n - 1, alpha).items():
            if nu[-1] < r:
                continue
            key = nu + (r,)
            out[key] = out.get(key, 0.0) + psi * coef
    return out


def log_zonal_prefactor(lam, alpha=JACK_ALPHA):
    """log of ``alpha**k k! / c'_lam`` so that ``C_lam = exp(.) * P_lam``."""
    lam = tuple(v for v in lam if v > 0)
    k = sum(lam)
    lamc = conjugate(lam)
    log_cprime = 0.0
    for i, row in enumerate(lam):
        for j in range(row):
            log_cprime += np.log(alpha * (row - j) + lamc[j] - i - 1)
    return k * np.log(alpha) + gammaln(k + 1) - log_cprime


def zonal_polynomial(lam, x):
    """Evaluate the zonal polynomial C_lam at the eigenvalues ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    coefs = jack_p_monomials(tuple(lam), n)
    total = 0.0
    for nu, c in coefs.items():
        for perm in set(permutations(nu)):
            total += c * np.prod(x ** np.asarray(perm))
    return np.exp(log_zonal_prefactor(lam)) * total


def log_pochhammer(a, lam, alpha=JACK_ALPHA):
    """log of the generalized Pochhammer symbol (a)_lam."""
    out = 0.0
    for i, part in enumerate(lam):
        b = a - i / alpha
        out += gammaln(b + part) - gammaln(b)
    return out


# ---------------------------------------------------------------------------
# series tables


@dataclass(frozen=True)
class _Table:
    exponents: np.ndarray  # (M, p) float
    log_coef: np.ndarray  # (M,)
    weight: np.ndarray  # (M,) int
    order: int


def _log_w(j):
    # (1/2)_j / j!
    return gammaln(j + 0.5) - gammaln(0.5) - gammaln(j + 1.0)


def _table_p1(a, order):
    k = np.arange(order + 1)
    log_coef = -(gammaln(a + k) - gammaln(a)) - gammaln(k + 1.0)
    return _Table(k[:, None].astype(float), log_coef, k, order)


def _table_p2(a, order):
    # lam = (L + m, L); P_lam = (x1 x2)^L sum_j w_j w_{m-j} / w_m x1^j x2^(m-j)
    log2 = np.log(2.0)
    grid = np.full((order + 1, order + 1), -np.inf)
    for L in range(order // 2 + 1):
        room = order - 2 * L
        I, J = np.meshgrid(np.arange(room + 1), np.arange(room + 1), indexing="ij")
        mask = I + J <= room
        I, J = I[mask], J[mask]
        m = I + J
        lam1 = L + m
        k = 2 * L + m
        log_cprime = (
            L * log2 + gammaln(lam1 + 1.5) - gammaln(m + 1.5)
            + m * log2 + gammaln(m + 1.0)
            + L * log2 + gammaln(L + 1.0)
        )
        log_poch = (gammaln(a + lam1) - gammaln(a)
                    + gammaln(a - 0.5 + L) - gammaln(a - 0.5))
        term = (k * log2 - log_cprime - log_poch
                + _log_w(I) + _log_w(J) - _log_w(m))
        sub = grid[L + I, L + J]
        grid[L + I, L + J] = np.logaddexp(sub, term)
    I, J = np.nonzero(np.isfinite(grid))
    exps = np.stack([I, J], axis=1).astype(float)
    return _Table(exps, grid[I, J], I + J, order)


def _table_generic(a, p, order):
    acc = {}
    for k in range(order + 1):
        for lam in partitions(k, p):
            pre = log_zonal_prefactor(lam) - log_pochhammer(a, lam) - gammaln(k + 1.0)
            for nu, c in jack_p_monomials(lam, p).items():
                if c <= 0:
                    continue
                acc.setdefault(nu, []).append(pre + np.log(c))
    exps, coefs, weights = [], [], []
    for nu, logs in acc.items():
        lc = logsumexp(logs)
        for perm in sorted(set(permutations(nu))):
            exps.append(perm)
            coefs.append(lc)
            weights.append(sum(nu))
    return _Table(np.asarray(exps, dtype=float), np.asarray(coefs),
                  np.asarray(weights), order)


@lru_cache(maxsize=64)
def series_table(a, p, order):
    """Cached power-series coefficients of 0F1(a; diag(x)) up to ``order``."""
    if a <= (p - 1) / 2:
        raise ValueError(f"need a > (p - 1)/2, got a={a}, p={p}")
    if p == 1:
        return _table_p1(a, order)
    if p == 2:
        return _table_p2(a, order)
    return _table_generic(a, p, order)


def _series_log(table, logx):
    terms = table.log_coef[None, :] + logx @ table.exponents.T
    shift = terms.max(axis=1, keepdims=True)
    np.subtract(terms, shift, out=terms)
    np.exp(terms, out=terms)
    total = terms.sum(axis=1)
    top = terms[:, table.weight == table.order].sum(axis=1)
    with np.errstate(divide="ignore"):
        return shift[:, 0] + np.log(total), np.log(top) - np.log(total)


def log_0F1_diag(a, x, cfg=None):
    """log 0F1(a; diag(x)) for eigenvalues ``x >= 0``; batch over leading axis."""
    cfg = cfg or DEFAULT_CONFIG
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    x = np.atleast_2d(x)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("eigenvalues must be finite and nonnegative")
    p = x.shape[1]
    with np.errstate(divide="ignore"):
        logx = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), _LOG_ZERO)
    out = np.empty(x.shape[0])
    log_tol = np.log(cfg.tail_tol)
    # the series mass sits near total degree sum(sqrt(x)); start above it
    root = np.sqrt(x).sum(axis=1)
    est = np.ceil((root + 6.0 * np.sqrt(root) + 10.0) / 10.0) * 10.0
    floor = cfg.truncation_order if p <= 2 else 10
    start = np.clip(est, floor, cfg.max_order).astype(int)
    for order in np.unique(start):
        pending = np.flatnonzero(start == order)
        while True:
            table = series_table(float(a), p, int(order))
            total, tail = _series_log(table, logx[pending])
            ok = tail <= log_tol
            out[pending[ok]] = total[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            if order >= cfg.max_order:
                raise TruncationInsufficient(int(order), float(np.exp(tail[~ok].max())))
            order = min(int(np.ceil(1.5 * order / 10.0)) * 10, cfg.max_order)
    return out[0] if scalar else out


class _NormalizerCache:
    """Memo of log normalizers keyed on (d/2, config) and the raw bytes of kappa.

    Reads are plain dict lookups (atomic under the GIL); writes take a lock.
    """

    def __init__(self, maxsize=200_000):
        self._tables = {}
        self._size = 0
        self._lock = threading.Lock()
        self.maxsize = maxsize

    def table(self, half_d, cfg):
        key = (half_d, cfg)
        tab = self._tables.get(key)
        if tab is None:
            with self._lock:
                tab = self._tables.setdefault(key, {})
        return tab

    def put(self, tab, key, value):
        with self._lock:
            if self._size >= self.maxsize:
                for t in self._tables.values():
                    t.clear()
                self._size = 0
            tab[key] = value
            self._size += 1

    def clear(self):
        with self._lock:
            for t in self._tables.values():
                t.clear()
            self._size = 0


_cache = _NormalizerCache()
_CACHED_BATCH = 64  # larger batches are mostly fresh draws; skip the memo


def _as_kappa(kappa):
    kappa = np.asarray(kappa, dtype=float)
    # NaN fails both comparisons
    if kappa.size and not (kappa.min() >= 0 and kappa.max() < np.inf):
        raise ValueError("concentrations must be finite and nonnegative")
    return kappa


def log_0F1(half_d, kappa, cfg=None):
    """log 0F1(d/2; diag(kappa**2)/4), the Langevin log normalizer log Z(kappa).

    Parameters
    ----------
    half_d : float
        ``d / 2``; must satisfy ``half_d > (p - 1)/2``.
    kappa : array_like, shape (p,) or (n, p)
        Nonnegative concentrations.  A 2-D array is evaluated row-wise.
    cfg : HypergeomConfig, optional

    Returns
    -------
    float or ndarray
    """
    cfg = cfg or DEFAULT_CONFIG
    kappa = _as_kappa(kappa)
    if kappa.ndim == 2 and kappa.shape[0] > _CACHED_BATCH:
        return log_0F1_diag(half_d, kappa**2 / 4.0, cfg)
    tab = _cache.table(float(half_d), cfg)
    if kappa.ndim == 2:
        kappa = np.ascontiguousarray(kappa)
        keys = [row.tobytes() for row in kappa]
        vals = [tab.get(k) for k in keys]
        miss = [i for i, v in enumerate(vals) if v is None]
        if miss:
            fresh = log_0F1_diag(half_d, kappa[miss] ** 2 / 4.0, cfg)
            for i, v in zip(miss, fresh):
                vals[i] = float(v)
                _cache.put(tab, keys[i], vals[i])
        return np.array(vals)
    key = kappa.tobytes()
    hit = tab.get(key)
    if hit is not None:
        return hit
    val = float(log_0F1_diag(half_d, kappa**2 / 4.0, cfg))
    _cache.put(tab, key, val)
    return val


def log_sphere_normalizer(m, kappa):
    """log 0F1(m/2; kappa**2/4): the von Mises-Fisher normalizer on S^{m-1}.

    Equals ``log(Gamma(m/2) (kappa/2)**(1 - m/2) I_{m/2-1}(kappa))`` relative
    to the uniform measure; ``m = 1`` gives ``log cosh(kappa)``.
    """
    kappa = np.asarray(kappa, dtype=float)
    nu = m / 2.0 - 1.0
    small = kappa < 1e-8
    k = np.where(small, 1.0, kappa)
    val = gammaln(m / 2.0) - nu * np.log(k / 2.0) + np.log(ive(nu, k)) + k
    val = np.where(small, kappa**2 / (2.0 * m), val)
    return val if val.ndim else float(val)


def mc_normalizer(d, p, kappa, G, n_samples, rng, chunk=250_000):
    """Monte Carlo estimate of Z(kappa) = E_Haar[etr(F^T X)], F = G diag(kappa).

    Returns
    -------
    (estimate, std_error)
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    kappa = _as_kappa(kappa)
    G = np.asarray(G, dtype=float)
    if G.shape != (d, p) or kappa.shape != (p,):
        raise ValueError("shape mismatch between d, p, G and kappa")
    F = G * kappa
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        X = sample_haar(d, p, rng, size=m)
        vals = np.exp(np.einsum("ndp,dp->n", X, F))
        total += vals.sum()
        total_sq += np.sum(vals * vals)
        done += m
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    return mean, float(np.sqrt(var * n_samples / (n_samples - 1) / n_samples))


def mean_coefficient_matrix(d, kappa, cfg=None):
    """Matrix ``U`` with ``E(X) = F U`` for the Langevin law with F = G diag(kappa).

    ``U = 2 d log 0F1(d/2, F^T F / 4) / d(F^T F)``, evaluated at the diagonal
    argument ``F^T F = diag(kappa**2)`` where it is diagonal.  Derivatives are
    central differences in each squared singular value (one-sided when the
    central stencil would leave the domain).
    """
    cfg = cfg or DEFAULT_CONFIG
    kappa = _as_kappa(kappa)
    p = kappa.size
    if np.any(kappa < 1e-4):
        warnings.warn("kappa below 1e-4: U is close to its uniform limit and "
                      "finite differences lose relative accuracy", NearUniformWarning)
    s = kappa**2
    h = np.maximum(1e-5, 1e-5 * s)
    shifted = []
    central = s - h >= 0
    for i in range(p):
        e = np.zeros(p)
        e[i] = h[i]
        if central[i]:
            shifted += [s + e, s - e]
        else:
            shifted += [s, s + e, s + 2 * e]
    vals = log_0F1(d / 2.0, np.sqrt(np.asarray(shifted)), cfg)
    U = np.zeros((p, p))
    pos = 0
    for i in range(p):
        if central[i]:
            deriv = (vals[pos] - vals[pos + 1]) / (2 * h[i])
            pos += 2
        else:
            deriv = (-3 * vals[pos] + 4 * vals[pos + 1] - vals[pos + 2]) / (2 * h[i])
            pos += 3
        U[i, i] = 2.0 * deriv
    return U
