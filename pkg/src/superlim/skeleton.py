"""Skeleton branching Markov process and samplers for ``W^Z``, ``Y`` and ``W``.

The skeleton moves with the h-transformed generator ``Qbar``, branches at rate
``b(x)`` and leaves ``n >= 2`` children with probability ``p_n(x)``. Its
martingale ``e^{-lambda0 t} <phi0 / v, Z_t>`` converges to ``W^Z``; ``W`` is the
compound Poisson sum of independent copies started from ancestors drawn with
intensity ``v mu``.

Sampling is exact (Gillespie) until the population reaches ``switch`` particles.
After that the remaining horizon contributes a sum of many independent
martingale increments which is replaced by a Gaussian with the exact
conditional mean and variance (see :func:`martingale_variance`). With
``switch=None`` the whole horizon is simulated event by event.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.linalg import expm

from .cumulant import (ExtinctionData, SkeletonCoefficients, as_extinction,
                       skeleton_coefficients)
from .model import Scenario, phi_sites
from .spectral import ModelInconsistencyError, eigentriple_T
from .stats import reflected_kde, silverman_bandwidth

BLOCK = 4096
POPULATION_CAP = 10_000_000
DEFAULT_SWITCH = 256
_KIND_CODE = {"WZ": 0, "Y": 1, "W": 2}


class PopulationCapError(RuntimeError):
    pass


@dataclass
class SkeletonModel:
    scenario: Scenario
    ext: ExtinctionData
    coeffs: SkeletonCoefficients
    qbar: np.ndarray
    b: np.ndarray
    offspring_cdf: np.ndarray    # (d, Kmax - 1), padded with 1.0
    offspring_len: np.ndarray
    lambda0: float
    phi0_over_v: np.ndarray
    _var_cache: dict = field(default_factory=dict, repr=False)

    @property
    def d(self):
        return self.qbar.shape[0]

    @property
    def jump_rate(self):
        return -np.diag(self.qbar).copy()

    @property
    def jump_cdf(self):
        P = np.where(np.eye(self.d, dtype=bool), 0.0, self.qbar)
        tot = P.sum(axis=1, keepdims=True)
        cdf = np.cumsum(np.divide(P, tot, out=np.zeros_like(P), where=tot > 0), axis=1)
        cdf[:, -1] = 1.0
        return cdf

    @property
    def mean_offspring(self):
        return self.coeffs.mean_offspring()

    @property
    def kappa(self):
        """``E N (N - 1)`` per site."""
        return self.coeffs.factorial_second_moment()

    def count_mean_generator(self):
        """Generator of ``x -> E_x <g, Z_t>``: ``Qbar + diag(b (E N - 1))``."""
        return self.qbar + np.diag(self.b * (self.mean_offspring - 1))

    def mean_semigroup(self, t):
        """``Q_t g(x) = E_x <g, Z_t>`` as a matrix."""
        return expm(t * self.count_mean_generator())


def build_skeleton(s: Scenario, ext=None, coeffs=None, tol=1e-8) -> SkeletonModel:
    """Assemble the skeleton from the extinction solution.

    ``Qbar = diag(1/v) Q diag(v) - diag(phi(v) / v)`` uses ``Q v = phi(., v)``; its row
    sums measure how well ``v`` solves that equation and must vanish to ``tol``.
    """
    if ext is None:
        from .cumulant import extinction_v
        ext = extinction_v(s)
    ext = as_extinction(s, ext)
    coeffs = coeffs or skeleton_coefficients(s, ext)
    v = ext.v
    qbar = s.Q * v[None, :] / v[:, None] - np.diag(phi_sites(s, v) / v)
    defect = float(np.max(np.abs(qbar.sum(axis=1))))
    scale = max(1.0, float(np.max(np.abs(qbar))))
    if defect > tol * scale:
        raise ModelInconsistencyError(f"Qbar rows do not sum to 0 (defect {defect:.3g}); inconsistent v")
    # remove the rounding-level defect
    qbar -= np.diag(qbar.sum(axis=1))
    lam0, phi0, _ = eigentriple_T(s)
    K = max(len(p) for p in coeffs.offspring)
    cdf = np.ones((s.d, K))
    for x, p in enumerate(coeffs.offspring):
        c = np.cumsum(p)
        c[-1] = 1.0
        cdf[x, :len(p)] = c
    model = SkeletonModel(scenario=s, ext=ext, coeffs=coeffs, qbar=qbar, b=coeffs.b.copy(),
                          offspring_cdf=cdf,
                          offspring_len=np.array([len(p) for p in coeffs.offspring], dtype=np.int64),
                          lambda0=lam0, phi0_over_v=phi0 / v)
    target = (s.Q + np.diag(s.alpha)) * v[None, :] / v[:, None]
    mis = float(np.max(np.abs(model.count_mean_generator() - target)))
    if mis > tol * max(1.0, float(np.max(np.abs(target)))):
        raise ModelInconsistencyError(f"skeleton mean generator mismatch {mis:.3g}")
    return model


def sample_offspring(model: SkeletonModel, x: int, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of the number of children (``>= 2``) at site ``x``."""
    n = model.offspring_len[x]
    k = int(np.searchsorted(model.offspring_cdf[x, :n], rng.random(), side="right"))
    return min(k, n - 1) + 2


def sample_offspring_many(model: SkeletonModel, x: int, rng: np.random.Generator, size: int):
    """Vectorised :func:`sample_offspring`; same stream as ``size`` single draws."""
    n = model.offspring_len[x]
    k = np.searchsorted(model.offspring_cdf[x, :n], rng.random(size), side="right")
    return np.minimum(k, n - 1) + 2


# --- exact particle simulation --------------------------------------------------------

@dataclass
class ParticleSystem:
    time: float
    particles: list                 # (site, birth_time)
    event_log: list | None = None

    def __len__(self):
        return len(self.particles)

    def counts(self, d):
        c = np.zeros(d, dtype=np.int64)
        for x, _ in self.particles:
            c[x] += 1
        return c

    def pair(self, g):
        """``<g, Z_t>``."""
        g = np.asarray(g)
        return float(sum(g[x] for x, _ in self.particles))


def simulate_skeleton(model: SkeletonModel, x0: int, T: float, rng: np.random.Generator,
                      cap=POPULATION_CAP, log_events=False) -> ParticleSystem:
    """Event-driven simulation of the skeleton on ``[0, T]`` from one particle at ``x0``."""
    if T < 0:
        raise ValueError("T must be >= 0")
    d = model.d
    jr = model.jump_rate
    rate = model.b + jr
    pbranch = model.b / rate
    jcdf = model.jump_cdf
    by_site = [[] for _ in range(d)]
    by_site[x0].append(0.0)
    log = [] if log_events else None
    t = 0.0
    while True:
        counts = np.array([len(lst) for lst in by_site])
        total = int(counts.sum())
        if total > cap:
            raise PopulationCapError(f"population exceeded {cap} particles at t={t:.4g}; use a smaller T")
        weights = counts * rate
        tot = weights.sum()
        dt = rng.exponential(1 / tot)
        if t + dt >= T:
            break
        t += dt
        y = int(np.searchsorted(np.cumsum(weights), rng.random() * tot, side="right"))
        y = min(y, d - 1)
        while counts[y] == 0:
            y -= 1
        lst = by_site[y]
        i = int(rng.integers(len(lst)))
        lst[i] = lst[-1]
        lst.pop()
        if rng.random() < pbranch[y]:
            n = sample_offspring(model, y, rng)
            lst.extend([t] * n)
            if log is not None:
                log.append((t, "branch", y, n))
        else:
            z = min(int(np.searchsorted(jcdf[y], rng.random(), side="right")), d - 1)
            by_site[z].append(t)
            if log is not None:
                log.append((t, "jump", y, z))
    particles = [(x, bt) for x in range(d) for bt in by_site[x]]
    return ParticleSystem(time=float(T), particles=particles, event_log=log)


# --- Gaussian continuation ---------------------------------------------------------------

def martingale_variance(model: SkeletonModel, s_grid) -> np.ndarray:
    """``Var_x(e^{-lambda0 s} <g, Z_s>)`` for ``g = phi0 / v``, shape ``(len(s_grid), d)``.

    With ``G`` the count-mean generator, ``h = b E[N(N-1)] g^2`` and ``E_x <g, Z_s> = e^{lambda0 s} g``,
    the second moment is ``e^{-2 lambda0 s} e^{sG} g^2 + int_0^s e^{u (G - 2 lambda0)} h du``.
    """
    G = model.count_mean_generator()
    g = model.phi0_over_v
    lam = model.lambda0
    h = model.b * model.kappa * g * g
    Gs = G - 2 * lam * np.eye(model.d)
    out = np.empty((len(s_grid), model.d))
    for i, s in enumerate(s_grid):
        E = expm(s * Gs)
        out[i] = E @ (g * g) + np.linalg.solve(Gs, (E - np.eye(model.d)) @ h) - g * g
    return np.maximum(out, 0.0)


def _variance_table(model, T, n=1025):
    key = (float(T), n)
    if key not in model._var_cache:
        grid = np.linspace(0.0, T, n) if T > 0 else np.zeros(2)
        model._var_cache[key] = (grid, martingale_variance(model, grid))
    return model._var_cache[key]


# --- numba kernels -------------------------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _one_replicate(rng, x0, T, lam0, g, rate, pbranch, jcdf, ocdf, olen,
                   counts, switch, cap, s_grid, sig2):
    d = g.size
    for y in range(d):
        counts[y] = 0
    counts[x0] = 1
    total = 1
    t = 0.0
    tot_rate = rate[x0]
    events = 0
    while True:
        if switch > 0 and total >= switch:
            s = T - t
            ds = s_grid[1] - s_grid[0]
            j = int(s / ds) if ds > 0 else 0
            if j >= s_grid.size - 1:
                j = s_grid.size - 2
            f = (s - s_grid[j]) / ds if ds > 0 else 0.0
            mean = 0.0
            var = 0.0
            for y in range(d):
                if counts[y] > 0:
                    mean += counts[y] * g[y]
                    var += counts[y] * ((1 - f) * sig2[j, y] + f * sig2[j + 1, y])
            val = mean + math.sqrt(var) * rng.standard_normal()
            if val < 0.0:
                val = 0.0
            return math.exp(-lam0 * t) * val, 0
        if total > cap:
            return math.nan, 1
        dt = rng.exponential(1.0 / tot_rate)
        if t + dt >= T:
            break
        t += dt
        u = rng.random() * tot_rate
        y = 0
        acc = counts[0] * rate[0]
        while acc <= u and y < d - 1:
            y += 1
            acc += counts[y] * rate[y]
        while counts[y] == 0:
            y -= 1
        if rng.random() < pbranch[y]:
            n = olen[y]
            k = np.searchsorted(ocdf[y, :n], rng.random(), side="right")
            if k > n - 1:
                k = n - 1
            extra = k + 1
            counts[y] += extra
            total += extra
            tot_rate += extra * rate[y]
        else:
            u2 = rng.random()
            z = 0
            while z < d - 1 and jcdf[y, z] <= u2:
                z += 1
            counts[y] -= 1
            counts[z] += 1
            tot_rate += rate[z] - rate[y]
        events += 1
        if events % 1024 == 0:
            tot_rate = 0.0
            for yy in range(d):
                tot_rate += counts[yy] * rate[yy]
    acc = 0.0
    for y in range(d):
        acc += counts[y] * g[y]
    return math.exp(-lam0 * T) * acc, 0


@numba.njit(nogil=True, cache=True)
def _pick(cdf, u):
    k = 0
    while k < cdf.size - 1 and cdf[k] <= u:
        k += 1
    return k


@numba.njit(nogil=True, cache=True)
def _block(rng, kind, n, x0, anc_cdf, mass, T, lam0, g, rate, pbranch, jcdf, ocdf, olen,
           switch, cap, s_grid, sig2):
    values = np.empty(n)
    aux = np.empty(n, dtype=np.int64)
    counts = np.zeros(g.size, dtype=np.int64)
    for i in range(n):
        if kind == 2:
            N = rng.poisson(mass)
            w = 0.0
            for _ in range(N):
                a = _pick(anc_cdf, rng.random())
                y, err = _one_replicate(rng, a, T, lam0, g, rate, pbranch, jcdf, ocdf, olen,
                                        counts, switch, cap, s_grid, sig2)
                if err:
                    return values, aux, 1
                w += y
            values[i] = w
            aux[i] = N
        else:
            a = x0 if kind == 0 else _pick(anc_cdf, rng.random())
            y, err = _one_replicate(rng, a, T, lam0, g, rate, pbranch, jcdf, ocdf, olen,
                                    counts, switch, cap, s_grid, sig2)
            if err:
                return values, aux, 1
            values[i] = y
            aux[i] = a
    return values, aux, 0


def default_threads() -> int:
    env = os.environ.get("SUPERLIM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def block_rng(seed: int, kind: str, block: int) -> np.random.Generator:
    """Counter-based stream for one block of replicates."""
    ss = np.random.SeedSequence(seed, spawn_key=(_KIND_CODE[kind], block))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class SampleBatch:
    scenario_name: str
    kind: str
    horizon_T: float
    seed: int
    values: np.ndarray
    aux: np.ndarray            # ancestor site (WZ, Y) or Poisson count N (W)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KIND_CODE:
            raise ValueError(f"unknown batch kind {self.kind!r}")

    def __len__(self):
        return self.values.size

    @property
    def ancestors(self):
        return self.aux if self.kind != "W" else None

    @property
    def counts(self):
        return self.aux if self.kind == "W" else None

    def metadata(self) -> dict:
        return {"scenario": self.scenario_name, "kind": self.kind, "horizon_T": self.horizon_T,
                "seed": self.seed, "n": int(self.values.size), **self.params}

    def save_csv(self, path):
        aux_name = "count" if self.kind == "W" else "ancestor"
        with open(path, "w", newline="\n") as fh:
            for k, val in self.metadata().items():
                fh.write(f"# {k}: {json.dumps(val)}\n")
            fh.write(f"value,{aux_name}\n")
            fh.writelines(f"{x:.17g},{a}\n" for x, a in zip(self.values.tolist(), self.aux.tolist()))

    def save(self, stem):
        """Write ``stem.csv`` and the ``stem.json`` sidecar; returns both paths."""
        csv_path, json_path = f"{stem}.csv", f"{stem}.json"
        self.save_csv(csv_path)
        with open(json_path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
        return csv_path, json_path


def load_batch(path) -> SampleBatch:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = json.loads(val)
    if "kind" not in meta:
        raise ValueError(f"{path}: missing batch metadata header")
    data = np.loadtxt(path, delimiter=",", skiprows=len(meta) + 1, ndmin=2)
    if data.size == 0:
        data = np.zeros((0, 2))
    kind = meta.pop("kind")
    name = meta.pop("scenario")
    T = meta.pop("horizon_T")
    seed = meta.pop("seed")
    meta.pop("n", None)
    return SampleBatch(scenario_name=name, kind=kind, horizon_T=T, seed=seed,
                       values=data[:, 0].copy(), aux=data[:, 1].astype(np.int64), params=meta)


def _run(model: SkeletonModel, kind, n, T, seed, x0=0, mu=None, switch=DEFAULT_SWITCH,
         threads=None, cap=POPULATION_CAP) -> SampleBatch:
    s = model.scenario
    if n < 0 or T < 0:
        raise ValueError("n and T must be non-negative")
    v = model.ext.v
    mu = s.mu if mu is None else np.asarray(mu, dtype=float)
    weight = v * mu
    mass = float(weight.sum())
    if kind != "WZ" and mass <= 0:
        raise ValueError("mu must be non-zero")
    anc_cdf = np.cumsum(weight / mass) if mass > 0 else np.ones(s.d)
    anc_cdf[-1] = 1.0
    sw = int(switch) if switch else 0
    if sw:
        s_grid, sig2 = _variance_table(model, T)
    else:
        s_grid, sig2 = np.zeros(2), np.zeros((2, s.d))
    jr = model.jump_rate
    rate = model.b + jr
    args = (model.lambda0, model.phi0_over_v, rate, model.b / rate, model.jump_cdf,
            model.offspring_cdf, model.offspring_len, sw, int(cap), s_grid, sig2)
    code = _KIND_CODE[kind]
    sizes = [min(BLOCK, n - i) for i in range(0, n, BLOCK)]

    def work(j):
        return _block(block_rng(seed, kind, j), code, sizes[j], int(x0), anc_cdf, mass, float(T), *args)

    threads = threads or default_threads()
    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(j) for j in range(len(sizes))]
    if any(p[2] for p in parts):
        raise PopulationCapError(f"population exceeded {cap} particles; use a smaller horizon")
    values = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    aux = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    params = {"switch": sw, "block": BLOCK}
    if kind == "WZ":
        params["x0"] = int(x0)
    else:
        params["mu"] = mu.tolist()
    return SampleBatch(scenario_name=s.name, kind=kind, horizon_T=float(T), seed=int(seed),
                       values=values, aux=aux, params=params)


def sample_WZ(model: SkeletonModel, x0: int, T: float, n_samples: int, seed: int = 0,
              switch=DEFAULT_SWITCH, threads=None, cap=POPULATION_CAP) -> SampleBatch:
    """``e^{-lambda0 T} <phi0 / v, Z_T>`` for the skeleton started from one particle at ``x0``."""
    if not 0 <= x0 < model.d:
        raise ValueError("x0 out of range")
    return _run(model, "WZ", n_samples, T, seed, x0=x0, switch=switch, threads=threads, cap=cap)


def sample_Y(model: SkeletonModel, T: float, n_samples: int, seed: int = 0, mu=None,
             switch=DEFAULT_SWITCH, threads=None) -> SampleBatch:
    """Compound-Poisson summands: ancestor drawn with weight ``v mu``, then ``Y = W^Z`` from it."""
    return _run(model, "Y", n_samples, T, seed, mu=mu, switch=switch, threads=threads)


def sample_W(model: SkeletonModel, T: float, n_samples: int, seed: int = 0, mu=None,
             switch=DEFAULT_SWITCH, threads=None) -> SampleBatch:
    """``W = Y_1 + ... + Y_N`` with ``N ~ Poisson(<v, mu>)``; ``aux`` holds ``N``."""
    return _run(model, "W", n_samples, T, seed, mu=mu, switch=switch, threads=threads)


def horizon_shift(model: SkeletonModel, x0: int, T: float, n_samples: int, seed: int = 0):
    """Kolmogorov distance between ``W^Z`` batches at horizons ``T`` and ``2T`` and the
    two-sample noise scale ``sqrt(2 / n)``."""
    a = np.sort(sample_WZ(model, x0, T, n_samples, seed).values)
    b = np.sort(sample_WZ(model, x0, 2 * T, n_samples, seed + 1).values)
    grid = np.concatenate([a, b])
    dist = np.max(np.abs(np.searchsorted(a, grid, side="right") - np.searchsorted(b, grid, side="right"))) / n_samples
    return float(dist), math.sqrt(2.0 / n_samples)


# --- compound Poisson density -----------------------------------------------------------------

class GridError(ValueError):
    pass


def density_series(y_batch, mu_mass: float, y_grid, n_bins=1 << 14, bandwidth=None,
                   weight_tol=1e-12, mass_tol=1e-3, return_g=False):
    """Density of ``W`` on ``(0, inf)`` from samples of ``Y``:
    ``f(y) = sum_k g^{*k}(y) mass^k e^{-mass} / k!``, with ``g`` a reflected KDE.

    Convolution powers are evaluated by FFT on an internal grid long enough for
    the retained terms; ``GridError`` is raised if the grid loses more than
    ``mass_tol`` of ``1 - e^{-mass}``.
    """
    y = np.asarray(getattr(y_batch, "values", y_batch), dtype=float)
    y = y[y > 0]
    if y.size < 2:
        raise ValueError("need positive Y samples")
    y_grid = np.asarray(y_grid, dtype=float)
    bw = bandwidth or silverman_bandwidth(y)
    weights = []
    k = 1
    logw = -mu_mass
    while True:
        logw += math.log(mu_mass) - math.log(k)
        wk = math.exp(logw)
        if k > mu_mass and wk < weight_tol:
            break
        weights.append(wk)
        k += 1
    kmax = len(weights)
    upper = max(float(y_grid.max()), kmax * y.mean() + 8 * math.sqrt(kmax) * y.std() + y.max() + 8 * bw)
    step = upper / n_bins
    g = reflected_kde(y, step, n_bins, bw)
    g_mass = g.sum() * step
    m = 2 * n_bins
    G = np.fft.rfft(g * step, m)
    power = np.ones_like(G)
    f = np.zeros(n_bins)
    expected = 0.0
    for k, wk in enumerate(weights, start=1):
        power = power * G
        f += wk * np.fft.irfft(power, m)[:n_bins] / step
        expected += wk * g_mass ** k
    total = 1 - math.exp(-mu_mass)
    got = f.sum() * step
    if abs(got - expected) > mass_tol or abs(expected - total) > mass_tol:
        raise GridError(f"density grid loses mass ({got:.6g} vs {total:.6g}); increase n_bins or the range")
    centres = (np.arange(n_bins) + 0.5) * step
    out = np.interp(y_grid, centres, f)
    if return_g:
        return out, np.interp(y_grid, centres, g)
    return out
