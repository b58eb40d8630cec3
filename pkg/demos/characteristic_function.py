"""Decay of ``psi(i theta)`` along the imaginary axis.

``|psi(i theta)| < 1`` for ``theta != 0``, and ``theta^eps0 |psi(i theta)|`` stays
bounded as ``theta`` grows. Together these control the smoothness of the law of
``W``. The script prints both for every built-in scenario.
"""

import numpy as np

import superlim as sl
from superlim import cumulant as cu

for name in ("feller1", "poissonic", "twosite", "threesite"):
    s = sl.builtin(name)
    ext = cu.extinction_v(s)
    eps = cu.epsilon0(s, ext)
    near = np.max(np.abs(cu.psi_eval(s, ext, 1j * np.linspace(1, 2, 11))))
    th = np.geomspace(10, 1e4, 7)
    env = th ** (0.8 * eps) * np.max(np.abs(cu.psi_eval(s, ext, 1j * th)), axis=1)
    print(f"{name}: eps0 = {eps:.4f}, max |psi(i theta)| on [1, 2] = {near:.4f}")
    print("   theta^(0.8 eps0) |psi(i theta)|:", " ".join(f"{e:.4f}" for e in env))
