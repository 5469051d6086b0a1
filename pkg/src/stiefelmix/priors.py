"""Base-measure components for the Dirichlet-process mixture.

Concentration priors act on length-``p`` vectors.  The continuous families
are i.i.d. across coordinates; ``PointMass`` and ``DiscreteKappa`` put mass on
whole vectors.  Every prior offers ``sample``, ``logpdf`` and ``propose``
(a Metropolis-Hastings move returning the proposal and its log Hastings
correction).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .manifold import perturb, rotate, sample_haar

VARIANTS = ("location-scale", "location-only")


class _IIDKappaPrior:
    """Shared machinery for coordinate-wise continuous priors."""

    lower = 0.0

    def logpdf(self, kappa):
        kappa = np.asarray(kappa, dtype=float)
        return np.sum(self._logpdf1(kappa), axis=-1)

    def propose(self, kappa, step, rng):
        # log-normal random walk; proposals outside the support are rejected
        # by the -inf prior term
        kappa = np.asarray(kappa, dtype=float)
        if step == 0:
            return kappa.copy(), np.zeros(kappa.shape[:-1])
        new = kappa * np.exp(step * rng.standard_normal(kappa.shape))
        return new, np.sum(np.log(new) - np.log(kappa), axis=-1)


@dataclass(frozen=True)
class TruncatedExponential(_IIDKappaPrior):
    """Exponential with ``rate`` restricted to ``[lower, inf)``."""

    rate: float = 0.1
    lower: float = 5.0

    def __post_init__(self):
        if self.rate <= 0 or self.lower < 0:
            raise ValueError("need rate > 0 and lower >= 0")

    def sample(self, rng, size, p):
        return self.lower + rng.exponential(1.0 / self.rate, size=(size, p))

    def _logpdf1(self, k):
        inside = k >= self.lower
        return np.where(inside, np.log(self.rate) - self.rate * (k - self.lower), -np.inf)


@dataclass(frozen=True)
class WeibullPrior(_IIDKappaPrior):
    """Density proportional to ``k**(1/a - 1) exp(-b k**(1/a))``.

    This is a Weibull law with shape ``1/a`` and scale ``b**(-a)``.
    """

    a: float
    b: float = 1.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("need a > 0 and b > 0")

    @property
    def shape(self):
        return 1.0 / self.a

    @property
    def scale(self):
        return self.b ** (-self.a)

    def sample(self, rng, size, p):
        return self.scale * rng.weibull(self.shape, size=(size, p))

    def _logpdf1(self, k):
        with np.errstate(divide="ignore"):
            return stats.weibull_min.logpdf(k, self.shape, scale=self.scale)


@dataclass(frozen=True)
class GammaPrior(_IIDKappaPrior):
    """Gamma(shape, rate); density proportional to ``k**(shape-1) exp(-rate k)``."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("need shape > 0 and rate > 0")

    def sample(self, rng, size, p):
        return rng.gamma(self.shape, 1.0 / self.rate, size=(size, p))

    def _logpdf1(self, k):
        with np.errstate(divide="ignore"):
            return stats.gamma.logpdf(k, self.shape, scale=1.0 / self.rate)


@dataclass(frozen=True, eq=False)
class PointMass:
    """All mass on a single concentration vector."""

    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=float)))

    def sample(self, rng, size, p):
        return np.broadcast_to(self.value, (size, p)).copy()

    def logpdf(self, kappa):
        kappa = np.asarray(kappa, dtype=float)
        return np.where(np.all(kappa == self.value, axis=-1), 0.0, -np.inf)

    def propose(self, kappa, step, rng):
        kappa = np.asarray(kappa, dtype=float)
        return kappa.copy(), np.zeros(kappa.shape[:-1])


@dataclass(frozen=True, eq=False)
class DiscreteKappa:
    """Uniform prior over a finite list of concentration vectors (rows)."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_keys", frozenset(v.tobytes() for v in vals + 0.0))

    def sample(self, rng, size, p):
        return self.values[rng.integers(len(self.values), size=size)].copy()

    def logpdf(self, kappa):
        kappa = np.asarray(kappa, dtype=float)
        rows = np.ascontiguousarray(kappa.reshape(-1, kappa.shape[-1]) + 0.0)  # -0.0 -> 0.0
        lp = -np.log(len(self.values))
        out = np.array([lp if r.tobytes() in self._keys else -np.inf for r in rows])
        return out.reshape(kappa.shape[:-1]) if kappa.ndim > 1 else out[0]

    def propose(self, kappa, step, rng):
        kappa = np.asarray(kappa, dtype=float)
        if step == 0:
            return kappa.copy(), np.zeros(kappa.shape[:-1])
        idx = rng.integers(len(self.values), size=kappa.shape[:-1] or None)
        return self.values[idx].copy(), np.zeros(kappa.shape[:-1])


@dataclass(frozen=True)
class HaarLocation:
    """Uniform prior on V_{p,d}.

    ``proposal="rotation"`` left-multiplies by ``expm(step * A)`` with Gaussian
    skew ``A`` (exactly symmetric); ``"perturb"`` uses the projected Gaussian
    perturbation (only approximately symmetric).
    """

    proposal: str = "rotation"
    # logpdf is constant on the support and propose never leaves it
    uniform_moves = True

    def sample(self, rng, size, d, p):
        return sample_haar(d, p, rng, size=size)

    def logpdf(self, G):
        return np.zeros(np.shape(G)[:-2])

    def propose(self, G, step, rng):
        if self.proposal == "rotation":
            return rotate(G, step, rng)
        if self.proposal == "perturb":
            return perturb(G, step, rng)
        raise ValueError(f"unknown proposal {self.proposal!r}")


@dataclass(frozen=True, eq=False)
class DiscreteLocation:
    """Uniform prior over a finite set of frames (shape (m, d, p))."""

    frames: np.ndarray
    uniform_moves = True

    def __post_init__(self):
        object.__setattr__(self, "frames", np.asarray(self.frames, dtype=float))

    def sample(self, rng, size, d, p):
        return self.frames[rng.integers(len(self.frames), size=size)].copy()

    def logpdf(self, G):
        G = np.asarray(G, dtype=float)
        gap = np.abs(G[..., None, :, :] - self.frames).max(axis=(-2, -1))
        hit = np.any(gap <= 1e-12, axis=-1)
        return np.where(hit, -np.log(len(self.frames)), -np.inf)

    def propose(self, G, step, rng):
        if step == 0:
            return np.array(G, dtype=float)
        G = np.asarray(G)
        idx = rng.integers(len(self.frames), size=G.shape[:-2] or None)
        return self.frames[idx].copy()


@dataclass(frozen=True)
class PriorSpec:
    """DP concentration, base measure and mixture variant.

    ``variant="location-scale"`` gives every cluster its own kappa drawn from
    ``kappa_prior``; ``"location-only"`` shares one kappa (with prior
    ``kappa_prior``) across all clusters.
    """

    alpha: float = 1.0
    kappa_prior: object = field(default_factory=TruncatedExponential)
    location_prior: object = field(default_factory=HaarLocation)
    variant: str = "location-scale"
    alpha_hyperprior: tuple = None  # (shape, rate) of a Gamma prior on alpha

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    @property
    def shared_kappa(self):
        return self.variant == "location-only"
