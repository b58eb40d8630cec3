"""Matrix semigroups and Perron eigendata for the mean and twisted semigroups.

Conventions: a semigroup matrix ``P`` acts on functions, ``(P f)(x) = sum_y P[x, y] f(y)``,
so its density with respect to ``m`` is ``P[x, y] / m[y]``. The dual of a generator
``G`` in ``L^2(m)`` is ``diag(1/m) G^T diag(m)``; hence ``m * psi`` is the ordinary
left Perron vector of ``G``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.sparse.csgraph import connected_components

from .model import Scenario, phi_prime_sites

EIG_RESIDUAL = 1e-12


class SpectralError(RuntimeError):
    pass


class ModelInconsistencyError(SpectralError):
    """The twisted eigenvalue came out non-negative, which signals a bad ``v``."""


def _power_vector(P, x, max_levels=80):
    """Dominant vector of the positive matrix ``P`` by power iteration with squaring."""
    x = x / np.linalg.norm(x, np.inf)
    for _ in range(max_levels):
        for _ in range(4):
            y = P @ x
            y /= np.linalg.norm(y, np.inf)
            if np.max(np.abs(y - x)) <= 16 * np.finfo(float).eps:
                return y
            x = y
        P = P @ P
        P /= np.max(np.abs(P))
    raise SpectralError("power iteration did not converge")


def perron_triple(G, m):
    """Perron eigenvalue and normalised eigenvectors of the Metzler matrix ``G``.

    Returns ``(lam, phi, psi)`` with ``G phi = lam phi``, ``psi`` the ``L^2(m)``-dual
    eigenvector, ``||phi||_{2,m} = 1`` and ``<phi, psi>_m = 1``.
    """
    G = np.asarray(G, dtype=float)
    m = np.asarray(m, dtype=float)
    d = G.shape[0]
    if d > 1:
        n_comp, _ = connected_components(G - np.diag(np.diag(G)) > 0, connection="strong")
        if n_comp > 1:
            raise SpectralError("generator is reducible; no strictly positive Perron vector")
    tau = 1.0 / max(1.0, np.max(np.abs(G)) * d)
    P = expm(tau * G)
    ones = np.ones(d)
    phi = _power_vector(P, ones)
    left = _power_vector(P.T, ones)
    lam = float(left @ G @ phi / (left @ phi))
    if np.any(phi <= 0) or np.any(left <= 0):
        raise SpectralError("Perron vector is not strictly positive (reducible generator?)")
    psi = left / m
    phi = phi / np.sqrt(np.sum(m * phi * phi))
    psi = psi / np.sum(m * phi * psi)
    scale = max(1.0, np.max(np.abs(G)))
    res = np.max(np.abs(G @ phi - lam * phi))
    res_left = np.max(np.abs(G.T @ (m * psi) - lam * m * psi))
    if res > EIG_RESIDUAL * scale or res_left > EIG_RESIDUAL * scale * np.max(m * psi):
        raise SpectralError(f"eigen-residual too large ({res:.3g}, {res_left:.3g})")
    return lam, phi, psi


def second_eigenvalue(G):
    """Largest real part among the non-Perron eigenvalues (spectral-gap diagnostic)."""
    ev = np.sort(np.linalg.eigvals(np.asarray(G, dtype=float)).real)[::-1]
    return float(ev[1]) if ev.size > 1 else -np.inf


def semigroup_T(s: Scenario, t: float) -> np.ndarray:
    """Mean semigroup ``T_t = exp(t (Q + diag alpha))``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return expm(t * s.mean_generator)


def density_q(s: Scenario, t: float) -> np.ndarray:
    """Density ``q(t, x, y)`` of ``T_t`` with respect to ``m``."""
    return semigroup_T(s, t) / s.m[None, :]


def eigentriple_T(s: Scenario):
    """``(lambda0, phi0, psi0)`` of the mean semigroup generator."""
    key = "eig_T"
    if key not in s._cache:
        s._cache[key] = perron_triple(s.mean_generator, s.m)
    return s._cache[key]


def twisted_generator(s: Scenario, v) -> np.ndarray:
    """``Q - diag(d_z phi(., v))``: generator of the Feynman-Kac semigroup ``P^{phi'}``."""
    return s.Q - np.diag(phi_prime_sites(s, np.asarray(v)))


def eigentriple_star(s: Scenario, ext):
    """``(lambda0*, phi0*, psi0*)`` of the twisted semigroup ``T*_t f = v^-1 P^{phi'}_t (v f)``."""
    v = np.asarray(getattr(ext, "v", ext), dtype=float)
    if np.any(v <= 0):
        raise ValueError("v must be strictly positive")
    lam, phib, psib = perron_triple(twisted_generator(s, v), s.m)
    if lam >= 0:
        raise ModelInconsistencyError(
            f"twisted eigenvalue lambda0* = {lam:.6g} >= 0; the extinction solve is inconsistent")
    return lam, phib / v, v * psib


def twisted_semigroup(s: Scenario, v, t: float) -> np.ndarray:
    """Matrix of ``T*_t`` acting on functions."""
    v = np.asarray(v, dtype=float)
    return expm(t * twisted_generator(s, v)) * v[None, :] / v[:, None]


def _iu_ratio(P, lam, phi, psi, m, t):
    q = P / m[None, :]
    return np.max(np.abs(np.exp(-lam * t) * q / np.outer(phi, psi) - 1.0))


def _iu_fit(G, m, lam, phi, psi, delta, span=10.0, n_grid=101):
    ts = np.linspace(delta, delta + span, n_grid)
    G = np.asarray(G, dtype=float)
    ratios = np.array([_iu_ratio(expm(t * G), lam, phi, psi, m, t) for t in ts])
    scale = 1e-12
    if np.all(ratios <= scale):
        return 0.0, np.inf
    keep = ratios > scale
    slope, intercept = np.polyfit(ts[keep], np.log(ratios[keep]), 1)
    gamma = -slope
    c = np.exp(intercept)
    # inflate c until the bound holds on the whole grid
    c *= max(1.0, np.max(ratios[keep] / (c * np.exp(-gamma * ts[keep]))))
    return float(c), float(gamma)


def iu_fit(s: Scenario, delta: float):
    """Fit ``(c, gamma)`` in ``|e^{-lambda0 t} q(t,x,y) - phi0(x) psi0(y)| <= c e^{-gamma t} phi0 psi0``.

    Least squares of ``log max_{x,y}|ratio - 1|`` against ``t`` on ``[delta, delta + 10]``,
    with ``c`` then raised so the bound holds at every grid point. A one-site
    space has ratio identically 1 and returns the sentinel ``(0, inf)``.
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    lam, phi, psi = eigentriple_T(s)
    return _iu_fit(s.mean_generator, s.m, lam, phi, psi, delta)


def iu_fit_star(s: Scenario, v, delta: float = 1.0):
    """Same fit as :func:`iu_fit` for the twisted semigroup ``T*``."""
    v = np.asarray(v, dtype=float)
    lam, phi_s, psi_s = eigentriple_star(s, v)
    Gs = np.diag(1 / v) @ twisted_generator(s, v) @ np.diag(v)
    return _iu_fit(Gs, s.m, lam, phi_s, psi_s, delta)


def iu_upper_constant_star(s: Scenario, v, t_min=1.0, t_max=40.0, n_grid=400):
    """Smallest ``c`` with ``e^{-lambda0* t} T*_t 1 <= (1 + c) <1, psi0*>_m phi0*`` on ``[t_min, t_max]``."""
    v = np.asarray(v, dtype=float)
    lam, phi_s, psi_s = eigentriple_star(s, v)
    mass = np.sum(s.m * psi_s)
    worst = 0.0
    for t in np.linspace(t_min, t_max, n_grid):
        val = np.exp(-lam * t) * twisted_semigroup(s, v, t).sum(axis=1)
        worst = max(worst, float(np.max(val / (mass * phi_s))))
    return max(worst - 1.0, 0.0)


@dataclass
class SpectralData:
    lambda0: float
    phi0: np.ndarray
    psi0: np.ndarray
    lambda0_star: float
    phi0_star: np.ndarray
    psi0_star: np.ndarray
    lambda1: float = -np.inf
    iu_fit: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "phi0": self.phi0.tolist(),
            "psi0": self.psi0.tolist(),
            "lambda0_star": self.lambda0_star,
            "phi0_star": self.phi0_star.tolist(),
            "psi0_star": self.psi0_star.tolist(),
            "lambda1": self.lambda1 if np.isfinite(self.lambda1) else None,
            "iu_fit": {str(k): {"c": c, "gamma": g if np.isfinite(g) else None}
                       for k, (c, g) in self.iu_fit.items()},
        }


def spectral_data(s: Scenario, ext, deltas=(0.5, 1.0)) -> SpectralData:
    lam, phi, psi = eigentriple_T(s)
    lam_s, phi_s, psi_s = eigentriple_star(s, ext)
    return SpectralData(
        lambda0=lam, phi0=phi, psi0=psi,
        lambda0_star=lam_s, phi0_star=phi_s, psi0_star=psi_s,
        lambda1=second_eigenvalue(s.mean_generator),
        iu_fit={float(dl): iu_fit(s, dl) for dl in deltas},
    )
