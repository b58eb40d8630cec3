"""Cumulant flows, extinction functional, limiting Laplace exponent and small-value constants.

Nonlinear flows are integrated with the embedded Runge-Kutta scheme in
:mod:`superlim._ode`:

* ``V_t f`` solves ``u' = Q u - phi(., u)`` with ``u(0) = f``.
* ``Vbar_t f = (v - V_t(v (1 - f))) / v`` is integrated directly as
  ``w' = Qbar w + phi*(., w)`` where ``Qbar`` is the ``v``-transformed motion;
  this avoids the cancellation in ``v - V_t(...)`` once ``Vbar_t f`` is small.

The scale of ``W`` is fixed by ``Phi(theta) = lim_T V_T(theta e^{-lambda0 T} phi0)``,
i.e. ``W`` is the limit of the martingale ``e^{-lambda0 t} <phi0, X_t>``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sp_integrate
from scipy.special import gammaln

from ._ode import StepSizeError, integrate
from .model import (AssumptionError, Scenario, e2, phi_prime_sites, phi_sites,
                    validate_assumptions)
from .spectral import eigentriple_star, eigentriple_T

RTOL = 1e-10
OFFSPRING_TAIL = 1e-12
BAND_TOL = 1e-9


class ConvergenceError(RuntimeError):
    pass


class NumericalContractError(RuntimeError):
    pass


class DegenerateSkeletonError(RuntimeError):
    pass


# --- V_t --------------------------------------------------------------------------

def _v_field(s: Scenario):
    QT = s.Q.T

    def rhs(u):
        return u @ QT - phi_sites(s, u)
    return rhs


def solve_Vt(s: Scenario, f, t, rtol=RTOL, atol=0.0):
    """Cumulant semigroup ``V_t f``; ``f`` has shape ``(d,)`` or ``(n, d)``, real or complex."""
    f = np.asarray(f)
    if t < 0:
        raise ValueError("t must be >= 0")
    try:
        return integrate(_v_field(s), f, [t], rtol=rtol, atol=atol)[0]
    except StepSizeError as exc:
        raise StepSizeError(exc.t, exc.h) from None


def Vt_path(s: Scenario, f, times, rtol=RTOL):
    return integrate(_v_field(s), np.asarray(f), times, rtol=rtol)


# --- extinction -------------------------------------------------------------------

@dataclass
class ExtinctionData:
    v: np.ndarray
    q: np.ndarray
    residual: float          # ||V_1 v - v||_inf
    stationarity: float      # ||Q v - phi(., v)||_inf
    flow_time: float
    newton_steps: int
    warnings: list = field(default_factory=list)
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"v": self.v.tolist(), "q": self.q.tolist(), "residual": self.residual,
                "stationarity": self.stationarity, "flow_time": self.flow_time,
                "newton_steps": self.newton_steps, "warnings": list(self.warnings)}


def extinction_v(s: Scenario, theta0=None, flow_tol=1e-12, t_max=2000.0,
                 newton_tol=1e-14, check=True) -> ExtinctionData:
    """Solve for ``v = -log q``, the largest fixed point of the cumulant flow.

    Runs ``V_t`` from a large constant until successive unit-time values agree to
    ``flow_tol`` (or ``t_max``), then polishes with Newton steps on
    ``Q v = phi(., v)`` using step halving as damping.
    """
    if check:
        rep = validate_assumptions(s)
        if not rep.lambda0_positive:
            raise AssumptionError(f"lambda0 = {rep.lambda0:.6g} <= 0: no supercriticality")
        if not rep.extinction_proxy_ok:
            raise AssumptionError("extinction proxy fails: " + "; ".join(rep.failures))
    notes = []
    if theta0 is None:
        bmin = float(np.min(s.beta))
        amax = float(np.max(np.abs(s.alpha)))
        theta0 = 100.0 * (1.0 + (amax / bmin if bmin > 0 else 100.0))
        theta0 = min(theta0, 1e4)
    u = np.full(s.d, float(theta0))
    rhs = _v_field(s)
    t = 0.0
    while t < t_max:
        nxt = integrate(rhs, u, [1.0], rtol=RTOL)[0]
        t += 1.0
        delta = np.max(np.abs(nxt - u))
        u = nxt
        if not np.all(np.isfinite(u)):
            raise ConvergenceError("extinction flow diverged")
        if delta < flow_tol:
            break
    if np.max(u) < 1e-8:
        raise AssumptionError("extinction flow collapsed to v = 0: lambda0 <= 0 (not supercritical)")

    def F(z):
        return s.Q @ z - phi_sites(s, z)

    steps = 0
    res = np.max(np.abs(F(u)))
    for _ in range(50):
        if res <= newton_tol * max(1.0, np.max(u)):
            break
        J = s.Q - np.diag(phi_prime_sites(s, u))
        try:
            step = np.linalg.solve(J, -F(u))
        except np.linalg.LinAlgError:
            notes.append("Newton Jacobian singular; kept flow result")
            break
        lam = 1.0
        while lam > 1e-6:
            cand = u + lam * step
            if np.all(cand > 0):
                rc = np.max(np.abs(F(cand)))
                if rc < res:
                    break
            lam *= 0.5
        else:
            notes.append("Newton line search failed; kept flow result")
            break
        u, res = cand, rc
        steps += 1
    else:
        notes.append("Newton did not reach tolerance")
    for n in notes:
        warnings.warn(n, stacklevel=2)
    residual = float(np.max(np.abs(solve_Vt(s, u, 1.0) - u)))
    q = np.exp(-u)
    if np.any(q >= 1) or np.any(q <= 0):
        raise ConvergenceError("extinction probabilities outside (0, 1)")
    return ExtinctionData(v=u, q=q, residual=residual, stationarity=float(res),
                          flow_time=t, newton_steps=steps, warnings=notes)


def comparability(s: Scenario, ext: ExtinctionData):
    """Constants ``C1 <= v / phi0 <= C2``."""
    ext = as_extinction(s, ext)
    _, phi0, _ = eigentriple_T(s)
    ratio = ext.v / phi0
    return float(ratio.min()), float(ratio.max())


def as_extinction(s: Scenario, ext) -> ExtinctionData:
    """Accept an :class:`ExtinctionData` or a bare ``v`` array."""
    if isinstance(ext, ExtinctionData):
        return ext
    v = np.asarray(ext, dtype=float)
    if v.shape != (s.d,) or np.any(v <= 0):
        raise ValueError("v must be a positive array of length d")
    return ExtinctionData(v=v, q=np.exp(-v), residual=math.nan, stationarity=math.nan,
                          flow_time=0.0, newton_steps=0)


# --- skeleton coefficients ------------------------------------------------------------

def qbar_matrix(s: Scenario, v) -> np.ndarray:
    """h-transformed motion ``Qbar f = v^-1 [Q(v f) - f Q v]`` as a conservative rate matrix."""
    v = np.asarray(v, dtype=float)
    Qb = s.Q * v[None, :] / v[:, None]
    Qb -= np.diag(Qb.sum(axis=1))
    return Qb


@dataclass
class SkeletonCoefficients:
    b: np.ndarray
    offspring: list          # per site: probabilities of 2, 3, ..., K(x)
    truncated_mass: np.ndarray
    raw_mass: np.ndarray     # sum of p_n before folding the tail
    v: np.ndarray
    beta: np.ndarray
    atom_r: np.ndarray
    atom_w: np.ndarray

    @property
    def K(self):
        return np.array([len(p) + 1 for p in self.offspring])

    def phi_star0(self, lam):
        """``phi*_0(x, lam) = phi*(x, lam) + b(x) lam``; ``lam`` has shape ``(..., d)``."""
        lam = np.asarray(lam)
        v = self.v
        jump = (self.atom_w * np.exp(-self.atom_r * v[:, None])
                * e2(self.atom_r * (lam * v)[..., None])).sum(axis=-1) / v
        return self.beta * v * lam * lam + jump

    def phi_star(self, lam):
        """``phi*(x, lam) = (phi(x, v(1 - lam)) - phi(x, v)(1 - lam)) / v``."""
        return self.phi_star0(lam) - self.b * np.asarray(lam)

    def mean_offspring(self):
        return np.array([np.dot(np.arange(2, len(p) + 2), p) for p in self.offspring])

    def factorial_second_moment(self):
        return np.array([np.dot(np.arange(2, len(p) + 2) * np.arange(1, len(p) + 1), p)
                         for p in self.offspring])


def skeleton_coefficients(s: Scenario, ext: ExtinctionData, tail=OFFSPRING_TAIL,
                          k_max=100_000) -> SkeletonCoefficients:
    """Branching rate ``b`` and offspring laws ``p_n`` of the skeleton."""
    ext = as_extinction(s, ext)
    if "coeffs" in ext.cache:
        return ext.cache["coeffs"]
    v = ext.v
    r, w = s.atoms_rw
    b = s.beta * v + (w * np.exp(-r * v[:, None]) * e2(r * v[:, None])).sum(axis=1) / v
    if np.any(b <= 0):
        bad = np.flatnonzero(b <= 0).tolist()
        raise DegenerateSkeletonError(f"branching rate b vanishes at sites {bad}")
    offspring, trunc, raw = [], [], []
    for x in range(s.d):
        vx = v[x]
        mask = w[x] > 0
        rx, wx = r[x, mask], w[x, mask]
        p2 = vx / b[x] * (s.beta[x] + 0.5 * np.sum(wx * rx * rx * np.exp(-vx * rx)))
        probs = [p2]
        total = p2
        n = 3
        while rx.size and total < 1 - tail and n <= k_max:
            logt = (n - 1) * np.log(vx) + n * np.log(rx) - vx * rx - gammaln(n + 1)
            pn = float(np.sum(wx * np.exp(logt)) / b[x])
            probs.append(pn)
            total += pn
            n += 1
        probs = np.array(probs)
        raw.append(float(probs.sum()))
        trunc.append(max(0.0, 1.0 - probs.sum()))
        probs[-1] += 1.0 - probs.sum()
        offspring.append(probs)
    coeffs = SkeletonCoefficients(b=b, offspring=offspring, truncated_mass=np.array(trunc),
                                  raw_mass=np.array(raw), v=v, beta=s.beta.copy(),
                                  atom_r=r, atom_w=w)
    ext.cache["coeffs"] = coeffs
    return coeffs


# --- Vbar_t ---------------------------------------------------------------------------

def _vbar_field(s: Scenario, ext: ExtinctionData):
    ext = as_extinction(s, ext)
    coeffs = skeleton_coefficients(s, ext)
    LT = (qbar_matrix(s, ext.v) - np.diag(coeffs.b)).T

    def rhs(w):
        return w @ LT + coeffs.phi_star0(w)
    return rhs


def _check_band(out, f):
    if np.iscomplexobj(out) or np.iscomplexobj(f):
        if np.max(np.abs(out)) > 1 + BAND_TOL:
            raise NumericalContractError("complex Vbar left the unit disc")
    elif np.min(out) < -BAND_TOL or np.max(out) > 1 + BAND_TOL:
        raise NumericalContractError("Vbar left the band [0, 1]")


def vbar_path(s: Scenario, ext: ExtinctionData, f, times, rtol=RTOL):
    """``Vbar_t f`` at each entry of the non-decreasing ``times``."""
    ext = as_extinction(s, ext)
    f = np.asarray(f)
    if np.isrealobj(f):
        if np.min(f) < -BAND_TOL or np.max(f) > 1 + BAND_TOL:
            raise ValueError("f must take values in [0, 1]")
    elif np.max(np.abs(f)) > 1 + BAND_TOL:
        raise ValueError("complex f must satisfy |f| <= 1")
    out = integrate(_vbar_field(s, ext), f, times, rtol=rtol)
    _check_band(out, f)
    return out


def vbar_t(s: Scenario, ext: ExtinctionData, f, t, rtol=RTOL):
    """``Vbar_t f = (v - V_t(v (1 - f))) / v`` for ``f`` in the unit band (or complex, ``|f| <= 1``)."""
    return vbar_path(s, ext, f, [t], rtol=rtol)[0]


def vbar_via_definition(s: Scenario, ext: ExtinctionData, f, t):
    """Literal evaluation through ``V_t``; reference route for tests, loses accuracy when small."""
    ext = as_extinction(s, ext)
    v = ext.v
    return (v - solve_Vt(s, v * (1 - np.asarray(f)), t)) / v


# --- Phi and psi ----------------------------------------------------------------------

def big_Phi(s: Scenario, ext: ExtinctionData, theta, tol=1e-8, horizon_cap=None):
    """Laplace exponent ``Phi(theta, .) = lim_T V_T(theta e^{-lambda0 T} phi0)``.

    ``theta`` is a scalar or 1-D array, real ``>= 0`` or complex (``i theta``).
    The horizon doubles until successive values agree to ``tol`` relative to
    their size. Returns shape ``(d,)`` or ``(n, d)``.
    """
    ext = as_extinction(s, ext)
    lam0, phi0, _ = eigentriple_T(s)
    if lam0 <= 0:
        raise AssumptionError("lambda0 <= 0")
    th = np.atleast_1d(np.asarray(theta))
    scalar = np.ndim(theta) == 0
    if np.isrealobj(th) and np.any(th < 0):
        raise ValueError("theta must be >= 0")
    if horizon_cap is None:
        horizon_cap = 600.0 / lam0
    big = float(np.max(np.abs(th))) if th.size else 0.0
    # the nonlinear error is of order theta e^{-lambda0 T}; start where it is ~1e-9
    T = (math.log1p(big) + 20.0) / lam0
    prev = None
    rhs = _v_field(s)
    while True:
        start = (th * math.exp(-lam0 * T))[:, None] * phi0[None, :]
        cur = integrate(rhs, start, [T], rtol=RTOL)[0]
        if prev is not None:
            size = np.maximum(np.max(np.abs(cur), axis=1), 1e-300)
            change = np.max(np.abs(cur - prev), axis=1) / size
            if np.all((change < tol) | (np.max(np.abs(cur), axis=1) == 0)):
                break
        if 2 * T > horizon_cap:
            raise ConvergenceError(
                "Phi limit did not converge within the horizon cap; run llogl_check "
                "(the L log L condition may fail)")
        prev = cur
        T *= 2
    return cur[0] if scalar else cur


def psi_eval(s: Scenario, ext: ExtinctionData, theta, horizon_cap=None):
    """``psi(theta, .) = (v - Phi(theta, .)) / v``: Laplace transform (or characteristic
    function, for imaginary ``theta``) of ``Y`` under ``P_{delta_x}``.

    For ``|theta| > 1`` the value is propagated from ``|theta| = 1`` along
    ``psi(theta) = Vbar_t psi(theta e^{-lambda0 t})``, which keeps relative accuracy
    when ``psi`` is small.
    """
    ext = as_extinction(s, ext)
    lam0, _, _ = eigentriple_T(s)
    th = np.atleast_1d(np.asarray(theta))
    scalar = np.ndim(theta) == 0
    cplx = np.iscomplexobj(th)
    out = np.empty((th.size, s.d), dtype=complex if cplx else float)
    mag = np.abs(th)
    low = mag <= 1
    if np.any(low):
        out[low] = 1 - big_Phi(s, ext, th[low], horizon_cap=horizon_cap) / ext.v
    if np.any(~low):
        unit = th[~low] / mag[~low]
        for u in np.unique(unit):
            sel = np.flatnonzero(~low & (th / np.where(mag > 0, mag, 1) == u))
            base = 1 - big_Phi(s, ext, u, horizon_cap=horizon_cap) / ext.v
            ts = np.log(mag[sel]) / lam0
            order = np.argsort(ts)
            vals = vbar_path(s, ext, base, ts[order])
            out[sel[order]] = vals
    return out[0] if scalar else out


# --- operator A and small-value constants ----------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _gl_nodes(S, n_panels):
    edges = np.linspace(0.0, S, n_panels + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    nodes = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    weights = (half[:, None] * _GL_W[None, :]).ravel()
    return nodes, weights


def operator_A(s: Scenario, ext: ExtinctionData, f, tol=1e-8, cutoff=1e-10, max_panels=4096):
    """``A(f) = int_0^inf e^{-lambda0* s} <phi*_0(., Vbar_s f), psi0*>_m ds + <f, psi0*>_m``.

    Returns ``(value, error_estimate)``. The integration range ``[0, S]`` ends where
    the integrand has entered its ``e^{lambda0* s}`` decay and the remaining tail,
    bounded by ``integrand(S) / |lambda0*|``, is below ``cutoff``.
    """
    ext = as_extinction(s, ext)
    f = np.asarray(f, dtype=float)
    if np.max(f) >= 1:
        raise ValueError("operator_A needs ||f||_inf < 1 (the integral may diverge)")
    if np.min(f) < 0:
        raise ValueError("f must be >= 0")
    lam_s, _, psi_s = eigentriple_star(s, ext)
    coeffs = skeleton_coefficients(s, ext)
    m = s.m
    base = float(np.sum(m * f * psi_s))
    if np.max(f) == 0:
        return 0.0, 0.0

    def integrand(ts, ws):
        return np.exp(-lam_s * ts) * (coeffs.phi_star0(ws) * psi_s * m).sum(axis=-1)

    # locate S by unit steps
    S, step = 0.0, 1.0
    w = f
    g_prev = float(integrand(np.array([0.0]), f[None, :])[0])
    rhs = _vbar_field(s, ext)
    while True:
        w = integrate(rhs, w, [step], rtol=RTOL)[0]
        S += step
        g = float(integrand(np.array([S]), w[None, :])[0])
        decaying = g <= g_prev * math.exp(lam_s * step / 2)
        if decaying and g / abs(lam_s) < cutoff:
            break
        if S > 5000:
            raise ConvergenceError("A(f) integrand did not decay")
        g_prev = g
    tail = g / abs(lam_s)

    n = max(4, int(math.ceil(S)))
    prev = None
    while True:
        nodes, weights = _gl_nodes(S, n)
        vals = vbar_path(s, ext, f, nodes)
        est = float(np.dot(weights, integrand(nodes, vals)))
        if prev is not None and abs(est - prev) < tol:
            break
        if n >= max_panels:
            break
        prev = est
        n *= 2
    err = abs(est - prev) + tail
    return est + tail + base, err


def epsilon0(s: Scenario, ext: ExtinctionData) -> float:
    ext = as_extinction(s, ext)
    lam0, _, _ = eigentriple_T(s)
    lam_s, _, _ = eigentriple_star(s, ext)
    return -lam_s / lam0


def smallvalue_constants(s: Scenario, ext: ExtinctionData, mu=None):
    """``(eps0, C)`` with ``r^{-eps0} P_mu(0 < W <= r) -> C`` as ``r -> 0``.

    ``C = e^{-<v, mu>} A(psi(1)) <v phi0*, mu> / Gamma(eps0 + 1)``.
    """
    ext = as_extinction(s, ext)
    lam0, _, _ = eigentriple_T(s)
    if lam0 <= 0:
        raise AssumptionError("lambda0 <= 0")
    mu = s.mu if mu is None else np.asarray(mu, dtype=float)
    if not np.any(mu > 0):
        raise ValueError("mu must be non-zero")
    _, phi_s, _ = eigentriple_star(s, ext)
    eps = epsilon0(s, ext)
    a_val = A_psi1(s, ext)
    v = ext.v
    const = math.exp(-np.dot(v, mu) - math.lgamma(eps + 1)) * a_val * np.dot(v * phi_s, mu)
    return eps, float(const)


def A_psi1(s: Scenario, ext: ExtinctionData) -> float:
    ext = as_extinction(s, ext)
    if "A_psi1" not in ext.cache:
        ext.cache["A_psi1"] = operator_A(s, ext, psi_eval(s, ext, 1.0))[0]
    return ext.cache["A_psi1"]


# --- L log L and slowly varying correction ------------------------------------------------

def llogl_check(s: Scenario) -> dict:
    """Evaluate ``int phi0 psi0 dm int_1^inf r ln r n(., dr)``; returns ``{finite, value}``."""
    _, phi0, psi0 = eigentriple_T(s)
    r, w = s.atoms_rw
    big = r > 1
    rlogr = np.where(big, r * np.log(np.where(big, r, 1.0)), 0.0)
    per_site = (w * rlogr).sum(axis=1)
    weight = s.m * phi0 * psi0
    value = float(np.dot(weight, per_site))
    tail = s.branching.tail
    if tail is not None:
        p, q, c, cut = tail.power, tail.log_power, tail.c, tail.cutoff
        # int_cut^inf r ln r * c r^-p (ln r)^-q dr, substitute u = ln r
        if p < 2 or (p == 2 and q <= 2):
            return {"finite": False, "value": math.inf}
        if p == 2:
            tail_val = c * math.log(cut) ** (2 - q) / (q - 2)
        else:
            tail_val = c * sp_integrate.quad(
                lambda u: math.exp((2 - p) * u) * u ** (1 - q), math.log(cut), np.inf)[0]
        value += float(np.sum(weight)) * tail_val
    return {"finite": True, "value": value}


def gamma_L(s: Scenario, ext: ExtinctionData, t: float):
    """``(gamma_t, L(t), Ltilde(e^{lambda0 t}))`` with ``gamma_t = <Phi(e^{-lambda0 t}), psi0>_m``
    and ``L(t) = e^{lambda0 t} gamma_t`` (tends to 1 under the chosen normalisation)."""
    ext = as_extinction(s, ext)
    lam0, _, psi0 = eigentriple_T(s)
    gam = float(np.sum(s.m * psi0 * big_Phi(s, ext, math.exp(-lam0 * t))))
    L = math.exp(lam0 * t) * gam
    return gam, L, L


def make_Ltilde(s: Scenario, ext: ExtinctionData):
    """Vectorised ``Ltilde(r) = L(log r / lambda0) = r <Phi(1/r), psi0>_m``."""
    ext = as_extinction(s, ext)
    _, _, psi0 = eigentriple_T(s)

    def Ltilde(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if np.any(r <= 0):
            raise ValueError("r must be > 0")
        vals = big_Phi(s, ext, 1.0 / r)
        return r * (vals * psi0 * s.m).sum(axis=1)
    return Ltilde


# --- tables ------------------------------------------------------------------------------

@dataclass
class CumulantTable:
    theta_grid: np.ndarray
    Phi: np.ndarray
    psi: np.ndarray
    complex_grid: np.ndarray
    psi_complex: np.ndarray
    horizon_T: float
    h_T: float
    l0_convention: int = 1

    def to_dict(self) -> dict:
        return {
            "theta_grid": self.theta_grid.tolist(),
            "Phi": self.Phi.tolist(),
            "psi": self.psi.tolist(),
            "complex_grid": self.complex_grid.tolist(),
            "psi_complex_re": self.psi_complex.real.tolist(),
            "psi_complex_im": self.psi_complex.imag.tolist(),
            "horizon_T": self.horizon_T,
            "h_T": self.h_T,
            "l0_convention": self.l0_convention,
        }


def cumulant_table(s: Scenario, ext: ExtinctionData, theta_grid, complex_grid=(),
                   horizon_T=20.0, horizon_cap=None) -> CumulantTable:
    """Tabulate ``Phi``, ``psi`` and ``psi(i theta)``; ``h_T`` is the
    ``||Phi(e^{-lambda0 T}) / (e^{-lambda0 T} L(T) phi0) - 1||_inf`` diagnostic."""
    ext = as_extinction(s, ext)
    lam0, phi0, _ = eigentriple_T(s)
    theta_grid = np.asarray(theta_grid, dtype=float)
    complex_grid = np.asarray(complex_grid, dtype=float)
    Phi = np.atleast_2d(big_Phi(s, ext, theta_grid, horizon_cap=horizon_cap)) if theta_grid.size else np.zeros((0, s.d))
    psi = np.atleast_2d(psi_eval(s, ext, theta_grid, horizon_cap)) if theta_grid.size else np.zeros((0, s.d))
    if complex_grid.size:
        psi_c = np.atleast_2d(psi_eval(s, ext, 1j * complex_grid, horizon_cap))
    else:
        psi_c = np.zeros((0, s.d), dtype=complex)
    small = big_Phi(s, ext, math.exp(-lam0 * horizon_T))
    _, L, _ = gamma_L(s, ext, horizon_T)
    h = float(np.max(np.abs(small / (math.exp(-lam0 * horizon_T) * L * phi0) - 1)))
    return CumulantTable(theta_grid=theta_grid, Phi=Phi, psi=psi, complex_grid=complex_grid,
                         psi_complex=psi_c, horizon_T=float(horizon_T), h_T=h)
