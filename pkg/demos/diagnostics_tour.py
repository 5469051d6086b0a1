"""Numeric checks: divergences, kernel smoothing, Lipschitz growth, prior tails."""

import numpy as np

from stiefelmix.diagnostics import (
    DensityHandle,
    fit_loglog_slope,
    hellinger_mc,
    kernel_approx_error,
    kl_mc,
    langevin_handle,
    lipschitz_ratio_location,
    phi,
    tail_mass,
)
from stiefelmix.priors import GammaPrior, WeibullPrior

rng = np.random.default_rng(3)
E = np.eye(3)[:, :2]
unif = DensityHandle.uniform(3, 2)

for k in (2.0, 8.0):
    f = langevin_handle(E, [k, k])
    h = hellinger_mc(unif, f, 100_000, rng)
    kl = kl_mc(f, unif, 100_000, rng, method="direct")
    print(f"kappa={k}: Hellinger {h.estimate:.4f} +/- {h.std_error:.4f}, "
          f"KL {kl.estimate:.4f} +/- {kl.std_error:.4f}")

# smoothing a fixed density by sharper kernels gets closer to it
f = langevin_handle(E, [5.0, 5.0])
for k in (5.0, 20.0, 80.0):
    print(f"kernel kappa={k:4.0f}: sup error {kernel_approx_error(f, [k, k], 1000, 1000, rng):.3f}")

ks = [2.0, 4.0, 8.0, 16.0]
ratios = [lipschitz_ratio_location([k, k], 1000, rng) for k in ks]
print("location Lipschitz slope vs phi:", round(fit_loglog_slope([phi([k, k]) for k in ks], ratios), 3))

# phi >= sqrt(2), so small n**a thresholds are exceeded by every draw
for name, pr in (("weibull", WeibullPrior(0.03, 1.0)), ("gamma", GammaPrior(1.0, 0.1))):
    print(name, tail_mass(pr, 0.03, [10**3, 10**4, 10**6], 2, 10**5, rng))
