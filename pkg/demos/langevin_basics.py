"""Matrix Langevin kernels on V_{2,3}: normalizer, density, sampling."""

import numpy as np

from stiefelmix import LangevinParams, log_0F1, log_density, mean, sample, sample_haar

rng = np.random.default_rng(1)

# p=1 reduces to the von Mises-Fisher constant sinh(k)/k
for k in (1.0, 5.0, 20.0):
    print(f"kappa={k:5.1f}  log Z={log_0F1(1.5, [k]):.10f}  closed form={np.log(np.sinh(k) / k):.10f}")

G = sample_haar(3, 2, rng)
par = LangevinParams(G, [12.0, 4.0])
print("log Z(12, 4) =", log_0F1(1.5, par.kappa))

X = sample(par, rng, size=20_000, method="sequential")
print("max |sample mean - E[X]| =", np.abs(X.mean(axis=0) - mean(par)).max())

# the mode is G itself
probes = sample_haar(3, 2, rng, size=5000)
print("log density at mode:", log_density(G, par))
print("best of 5000 Haar probes:", log_density(probes, par).max())
