"""Finite-state superprocess scenarios: ingestion, validation, branching mechanism.

A scenario fixes a finite state space with reference weights ``m``, a motion
generator ``Q`` (sub-conservative; the row defect is the killing rate into the
cemetery), and a branching triple ``(alpha, beta, n)`` where the Levy measure
``n(x, .)`` is a finite list of atoms.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.linalg import expm
from scipy.sparse.csgraph import connected_components

ROW_TOL = 1e-10
SUBMARKOV_TOL = 1e-10
SUBMARKOV_TIMES = (0.5, 1.0, 2.0)


class ScenarioError(ValueError):
    """Malformed scenario file or structurally invalid scenario."""


class DimensionError(ScenarioError):
    pass


class InvariantError(ScenarioError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class AssumptionError(RuntimeError):
    """A downstream operation was asked to run on a scenario failing an assumption."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateSpace:
    weights: np.ndarray

    @property
    def site_count(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class MotionGenerator:
    rates: np.ndarray

    @property
    def row_defect(self) -> np.ndarray:
        """Killing rate at each site (mass sent to the cemetery)."""
        return -self.rates.sum(axis=1)


@dataclass(frozen=True)
class TailDescriptor:
    """Analytic Levy tail ``c r^-power (log r)^-log_power`` for ``r > cutoff``.

    Only used by the L log L criterion check; never sampled.
    """

    c: float
    power: float = 2.0
    log_power: float = 2.0
    cutoff: float = np.e
    form: str = "log-heavy"


@dataclass(frozen=True)
class BranchingTriple:
    alpha: np.ndarray
    beta: np.ndarray
    atoms: tuple  # per site: tuple of (r, w)
    tail: TailDescriptor | None = None

    @property
    def atom_arrays(self):
        """Padded ``(r, w)`` arrays of shape ``(d, K)``; padding has ``w = 0``."""
        d = len(self.atoms)
        k = max([len(a) for a in self.atoms] + [1])
        r = np.zeros((d, k))
        w = np.zeros((d, k))
        for i, site in enumerate(self.atoms):
            for j, (rj, wj) in enumerate(site):
                r[i, j] = rj
                w[i, j] = wj
        return r, w


@dataclass(frozen=True)
class Scenario:
    name: str
    space: StateSpace
    motion: MotionGenerator
    branching: BranchingTriple
    initial_measure: np.ndarray
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def d(self) -> int:
        return self.space.site_count

    @property
    def m(self) -> np.ndarray:
        return self.space.weights

    @property
    def Q(self) -> np.ndarray:
        return self.motion.rates

    @property
    def alpha(self) -> np.ndarray:
        return self.branching.alpha

    @property
    def beta(self) -> np.ndarray:
        return self.branching.beta

    @property
    def mu(self) -> np.ndarray:
        return self.initial_measure

    @property
    def atoms_rw(self):
        if "atoms" not in self._cache:
            r, w = self.branching.atom_arrays
            r.setflags(write=False)
            w.setflags(write=False)
            self._cache["atoms"] = (r, w)
        return self._cache["atoms"]

    @property
    def mean_generator(self) -> np.ndarray:
        """``Q + diag(alpha)``, generator of the mean semigroup ``T_t``."""
        return self.Q + np.diag(self.alpha)


def make_scenario(name, m, Q, alpha, beta, atoms=None, mu=None, tail=None) -> Scenario:
    """Build a scenario from plain arrays and check every structural invariant."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    d = m.size
    if d < 1:
        raise InvariantError("m", "state space needs at least one site")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if atoms is None:
        atoms = [[] for _ in range(d)]
    if mu is None:
        mu = np.zeros(d)
        mu[0] = 1.0
    mu = np.atleast_1d(np.asarray(mu, dtype=float))

    if Q.shape != (d, d):
        raise DimensionError(f"Q has shape {Q.shape}, expected ({d}, {d})")
    for fname, arr in (("alpha", alpha), ("beta", beta), ("mu", mu)):
        if arr.shape != (d,):
            raise DimensionError(f"{fname} has length {arr.size}, expected {d}")
    if len(atoms) != d:
        raise DimensionError(f"atoms has {len(atoms)} site lists, expected {d}")

    for fname, arr in (("m", m), ("Q", Q), ("alpha", alpha), ("beta", beta), ("mu", mu)):
        if not np.all(np.isfinite(arr)):
            raise InvariantError(fname, "entries must be finite")
    if np.any(m <= 0):
        raise InvariantError("m", "every weight must be > 0 (full support)")
    if np.any(beta < 0):
        raise InvariantError("beta", "beta must be >= 0")
    if np.any(mu < 0):
        raise InvariantError("mu", "initial measure must be >= 0")
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0):
        i, j = np.argwhere(off < 0)[0]
        raise InvariantError("Q", f"off-diagonal entry Q[{i}][{j}] is negative")
    defect = -Q.sum(axis=1)
    if np.any(defect < -ROW_TOL):
        i = int(np.argmin(defect))
        raise InvariantError("Q", f"row {i} sums to {-defect[i]:.3g} > 0 (negative killing)")
    if d > 1:
        n_comp, _ = connected_components(off > 0, directed=True, connection="strong")
        if n_comp != 1:
            raise InvariantError("Q", "motion is not irreducible")

    clean_atoms = []
    for i, site in enumerate(atoms):
        pairs = []
        for a in site:
            r, w = (a["r"], a["w"]) if isinstance(a, dict) else a
            r, w = float(r), float(w)
            if not (np.isfinite(r) and np.isfinite(w)) or r <= 0 or w <= 0:
                raise InvariantError("atoms", f"site {i}: atoms need r > 0 and w > 0")
            pairs.append((r, w))
        clean_atoms.append(tuple(pairs))

    tail_desc = None
    if tail is not None:
        if isinstance(tail, TailDescriptor):
            tail_desc = tail
        else:
            form = tail.get("form", "log-heavy")
            if form != "log-heavy":
                raise InvariantError("tail", f"unsupported tail form {form!r}")
            tail_desc = TailDescriptor(c=float(tail["c"]), power=float(tail.get("power", 2.0)),
                                       log_power=float(tail.get("log_power", 2.0)),
                                       cutoff=float(tail.get("cutoff", np.e)), form=form)
            if tail_desc.c <= 0 or tail_desc.cutoff <= 1:
                raise InvariantError("tail", "need c > 0 and cutoff > 1")

    return Scenario(
        name=str(name),
        space=StateSpace(_frozen(m)),
        motion=MotionGenerator(_frozen(Q)),
        branching=BranchingTriple(_frozen(alpha), _frozen(beta), tuple(clean_atoms), tail_desc),
        initial_measure=_frozen(mu),
    )


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        return make_scenario(
            name=doc["name"], m=doc["m"], Q=doc["Q"], alpha=doc["alpha"], beta=doc["beta"],
            atoms=doc.get("atoms"), mu=doc.get("mu"), tail=doc.get("tail"),
        )
    except KeyError as exc:
        raise ScenarioError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario: {exc}") from None


def scenario_to_dict(s: Scenario) -> dict:
    doc = {
        "name": s.name,
        "m": s.m.tolist(),
        "Q": s.Q.tolist(),
        "alpha": s.alpha.tolist(),
        "beta": s.beta.tolist(),
        "atoms": [[{"r": r, "w": w} for r, w in site] for site in s.branching.atoms],
        "mu": s.mu.tolist(),
    }
    t = s.branching.tail
    if t is not None:
        doc["tail"] = {"form": t.form, "c": t.c, "power": t.power,
                       "log_power": t.log_power, "cutoff": t.cutoff}
    return doc


def load_scenario(path) -> Scenario:
    """Read a scenario JSON file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be an object")
    return scenario_from_dict(doc)


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


def builtin_names():
    files = resources.files("superlim").joinpath("scenarios").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".json"))


def builtin(name: str) -> Scenario:
    """Load one of the shipped scenarios (``feller1``, ``poissonic``, ``twosite``, ``threesite``)."""
    ref = resources.files("superlim").joinpath("scenarios", f"{name}.json")
    if not ref.is_file():
        raise ScenarioError(f"no shipped scenario named {name!r}")
    return scenario_from_dict(json.loads(ref.read_text()))


# --- branching mechanism --------------------------------------------------------

def e2(y):
    """``exp(y) - 1 - y`` without cancellation near 0 (real or complex)."""
    y = np.asarray(y)
    out = np.expm1(y) - y
    small = np.abs(y) < 1e-2
    if np.any(small):
        ys = y[small] if y.ndim else y
        series = ys * ys / 2 * (1 + ys / 3 * (1 + ys / 4 * (1 + ys / 5 * (1 + ys / 6))))
        if y.ndim:
            out = np.array(out)
            out[small] = series
        else:
            out = series
    return out


def phi_sites(s: Scenario, z):
    """Branching mechanism at every site; ``z`` has shape ``(..., d)``."""
    z = np.asarray(z)
    r, w = s.atoms_rw
    jump = (w * e2(-z[..., None] * r)).sum(axis=-1)
    return -s.alpha * z + s.beta * z * z + jump


def phi_prime_sites(s: Scenario, z):
    """``d phi / dz`` at every site; ``z`` has shape ``(..., d)``."""
    z = np.asarray(z)
    r, w = s.atoms_rw
    jump = (w * r * -np.expm1(-z[..., None] * r)).sum(axis=-1)
    return -s.alpha + 2 * s.beta * z + jump


def eval_phi(s: Scenario, x: int, z):
    """``phi(x, z) = -alpha z + beta z^2 + sum_k w_k (exp(-z r_k) - 1 + z r_k)``.

    ``z`` may be complex (principal exponential) or an array of values.
    """
    z = np.asarray(z)
    if np.isrealobj(z) and np.any(z < 0):
        raise ValueError("phi is defined for z >= 0")
    r = np.array([a[0] for a in s.branching.atoms[x]])
    w = np.array([a[1] for a in s.branching.atoms[x]])
    jump = (w * e2(-z[..., None] * r)).sum(axis=-1) if r.size else 0.0 * z
    out = -s.alpha[x] * z + s.beta[x] * z * z + jump
    return out if np.ndim(out) else out[()]


def m_bound(s: Scenario) -> float:
    r, w = s.atoms_rw
    return float(np.max(np.abs(s.alpha) + s.beta + (w * np.minimum(r, r * r)).sum(axis=1)))


# --- assumptions ------------------------------------------------------------------

@dataclass
class AssumptionReport:
    M_bound: float
    dual_submarkov_ok: bool
    square_integrable_ok: bool
    square_integral: float
    iu_checkable: bool
    lambda0_positive: bool
    lambda0: float
    extinction_proxy_ok: bool
    continuity_vacuous: bool = True
    failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.dual_submarkov_ok and self.square_integrable_ok and self.iu_checkable
                and self.lambda0_positive and self.extinction_proxy_ok)

    def to_dict(self) -> dict:
        return {
            "M_bound": self.M_bound,
            "dual_submarkov_ok": self.dual_submarkov_ok,
            "square_integrable_ok": self.square_integrable_ok,
            "square_integral_t1": self.square_integral,
            "iu_checkable": self.iu_checkable,
            "lambda0_positive": self.lambda0_positive,
            "lambda0": self.lambda0,
            "extinction_proxy_ok": self.extinction_proxy_ok,
            "continuity_vacuous": self.continuity_vacuous,
            "ok": self.ok,
            "failures": list(self.failures),
            "warnings": list(self.warnings),
        }

    def require(self):
        if not self.ok:
            raise AssumptionError("scenario fails assumptions: " + "; ".join(self.failures))


def validate_assumptions(s: Scenario) -> AssumptionReport:
    """Check the standing assumptions on a finite state space; failures are reported."""
    from .spectral import perron_triple

    failures, notes = [], []
    m = s.m

    dual_ok = True
    for t in SUBMARKOV_TIMES:
        P = expm(t * s.Q)
        # int p(t,x,y) m(dx) with p = P[x,y] / m[y]
        col = (m[:, None] * P).sum(axis=0) / m
        bad = np.flatnonzero(col > 1 + SUBMARKOV_TOL)
        for y in bad:
            dual_ok = False
            failures.append(f"dual sub-Markov: t={t}, site {y} column mass {col[y]:.6g} > 1")

    P1 = expm(s.Q)
    p1 = P1 / m[None, :]
    sq = float((p1 ** 2 * m[:, None] * m[None, :]).sum())
    sq_ok = bool(np.isfinite(sq))
    if not sq_ok:
        failures.append("square integrability: integral of p(1,x,y)^2 is not finite")

    lam0 = perron_triple(s.mean_generator, m)[0]
    lam_ok = lam0 > 0
    if not lam_ok:
        failures.append(f"supercriticality: lambda0 = {lam0:.6g} <= 0")

    r, w = s.atoms_rw
    active = (s.beta > 0) | (w.sum(axis=1) > 0)
    ext_ok = bool(np.all(active))
    if not ext_ok:
        for x in np.flatnonzero(~active):
            failures.append(f"extinction proxy: site {x} has beta = 0 and no atoms")
        msg = "no branching activity at some site; extinction proxy fails"
        notes.append(msg)
        warnings.warn(msg, stacklevel=2)
    elif np.min(s.beta) <= 0:
        notes.append("inf beta = 0; extinction proxy relies on per-site jump activity")

    return AssumptionReport(
        M_bound=m_bound(s), dual_submarkov_ok=dual_ok, square_integrable_ok=sq_ok,
        square_integral=sq, iu_checkable=True, lambda0_positive=bool(lam_ok),
        lambda0=float(lam0), extinction_proxy_ok=ext_ok, failures=failures, warnings=notes,
    )
