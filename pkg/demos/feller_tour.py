"""A tour of the single-site Feller scenario, where everything has a closed form.

Run with ``python3 demos/feller_tour.py``. Each numeric quantity is printed next
to its exact value.
"""

import math

import numpy as np

import superlim as sl
from superlim import cumulant as cu
from superlim import skeleton as sk
from superlim.spectral import eigentriple_star, eigentriple_T

s = sl.builtin("feller1")
print(s.name, "d =", s.d, "alpha =", s.alpha, "beta =", s.beta)

# Extinction: phi(v) = -v + v^2 vanishes at v = 1.
ext = cu.extinction_v(s)
print(f"v = {ext.v[0]:.15f}   (exact 1)")
print(f"q = {ext.q[0]:.15f}   (exact e^-1 = {math.exp(-1):.15f})")

# Growth rate of the mean and of the twisted semigroup.
lam0, _, _ = eigentriple_T(s)
lam_s, _, _ = eigentriple_star(s, ext)
print(f"lambda0 = {lam0:.15f}, lambda0* = {lam_s:.15f}, eps0 = {-lam_s / lam0:.15f}")

# Phi(theta) = theta / (1 + theta): the Laplace exponent of an Exp(1) limit summand.
theta = np.array([0.1, 1.0, 10.0, 100.0])
Phi = cu.big_Phi(s, ext, theta)[:, 0]
for th, p in zip(theta, Phi):
    print(f"Phi({th:g}) = {p:.10f}   exact {th / (1 + th):.10f}")

# Small-value constant e^{-1}.
eps, const = cu.smallvalue_constants(s, ext)
print(f"P(0 < W <= r) ~ C r^eps0 with eps0 = {eps:.10f}, C = {const:.10f} (exact {math.exp(-1):.10f})")

# The skeleton is a Yule process: binary splitting at rate 1 and no motion.
model = sk.build_skeleton(s, ext)
print("skeleton rate b =", model.b, "offspring law", model.coeffs.offspring[0])

# e^{-T} |Z_T| converges to an Exp(1) variable.
batch = sk.sample_WZ(model, 0, 12.0, 200_000, seed=1)
x = batch.values
print(f"W^Z sample: mean {x.mean():.4f} (1), var {x.var():.4f} (1), P(W^Z > 2) {np.mean(x > 2):.4f} "
      f"({math.exp(-2):.4f})")

# W is a Poisson(1) number of such variables.
w = sk.sample_W(model, 12.0, 200_000, seed=2).values
print(f"P(W = 0) = {np.mean(w == 0):.4f}   exact {math.exp(-1):.4f}")
