"""Estimators and checks on sample batches of ``W``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ive


class InsufficientDataError(ValueError):
    pass


def _values(batch):
    return np.asarray(getattr(batch, "values", batch), dtype=float)


# --- small values -----------------------------------------------------------------------

@dataclass
class EcdfFit:
    r_grid: np.ndarray
    ecdf: np.ndarray
    slope: float
    intercept: float
    ci: dict            # {"slope": (lo, hi), "intercept": (lo, hi)}

    @property
    def constant(self):
        return math.exp(self.intercept)

    @property
    def constant_ci(self):
        lo, hi = self.ci["intercept"]
        return math.exp(lo), math.exp(hi)

    def to_dict(self) -> dict:
        return {"r_grid": self.r_grid.tolist(), "ecdf": self.ecdf.tolist(),
                "slope": self.slope, "intercept": self.intercept, "constant": self.constant,
                "slope_ci": list(self.ci["slope"]), "constant_ci": list(self.constant_ci)}


def _ols(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def smallvalue_fit(batch, r_lo=1e-3, r_hi=1e-1, n_grid=21, r_grid=None, n_boot=200,
                   seed=0, min_count=10, level=0.95) -> EcdfFit:
    """Fit ``log P(0 < W <= r) = slope log r + intercept`` on a log grid in ``[r_lo, r_hi]``.

    Confidence intervals are bootstrap percentiles, resampling the counts of the
    grid cells ``(0, r_1], (r_1, r_2], ...`` and of the remainder multinomially.
    """
    w = _values(batch)
    n = w.size
    if n == 0:
        raise InsufficientDataError("empty batch")
    if r_grid is None:
        if not 0 < r_lo < r_hi:
            raise ValueError("need 0 < r_lo < r_hi")
        r_grid = np.geomspace(r_lo, r_hi, n_grid)
    r_grid = np.asarray(r_grid, dtype=float)
    pos = np.sort(w[w > 0])
    cum = np.searchsorted(pos, r_grid, side="right")
    if cum[0] < min_count:
        raise InsufficientDataError(
            f"only {cum[0]} positive values below r={r_grid[0]:.3g}; need {min_count}")
    ecdf = cum / n
    lr = np.log(r_grid)
    slope, intercept = _ols(lr, np.log(ecdf))
    cells = np.diff(np.concatenate([[0], cum]))
    probs = np.append(cells, n - cum[-1]) / n
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(n, probs, size=n_boot)
    boot_cum = np.cumsum(draws[:, :-1], axis=1)
    ok = np.all(boot_cum > 0, axis=1)
    boot = np.array([_ols(lr, np.log(c / n)) for c in boot_cum[ok]])
    a = (1 - level) / 2 * 100
    ci = {"slope": tuple(np.percentile(boot[:, 0], [a, 100 - a]).tolist()),
          "intercept": tuple(np.percentile(boot[:, 1], [a, 100 - a]).tolist())}
    # keep the point estimate inside its interval
    ci["slope"] = (min(ci["slope"][0], slope), max(ci["slope"][1], slope))
    ci["intercept"] = (min(ci["intercept"][0], intercept), max(ci["intercept"][1], intercept))
    return EcdfFit(r_grid=r_grid, ecdf=ecdf, slope=slope, intercept=intercept, ci=ci)


# --- Laplace transform ---------------------------------------------------------------------

def empirical_laplace(batch, theta_grid, chunk=200_000):
    w = _values(batch)
    th = np.asarray(theta_grid, dtype=float)
    acc = np.zeros(th.size)
    for i in range(0, w.size, chunk):
        acc += np.exp(-np.outer(w[i:i + chunk], th)).sum(axis=0)
    return acc / w.size


def laplace_distance(batch, analytic, theta_grid) -> float:
    """``sup_theta |mean(exp(-theta W)) - analytic(theta)|`` over ``theta_grid``."""
    w = _values(batch)
    if w.size == 0:
        raise InsufficientDataError("empty batch")
    th = np.asarray(theta_grid, dtype=float)
    target = np.asarray(analytic(th), dtype=float).reshape(th.shape)
    return float(np.max(np.abs(empirical_laplace(w, th) - target)))


# --- tail ------------------------------------------------------------------------------------

def tail_decay_check(batch, Ltilde, n_points=8, min_exceed=100, factor=5.0) -> dict:
    """Evaluate ``r P(W > r) / Ltilde(r)`` on a log grid of ``n_points`` values of ``r``.

    The grid runs from ``max(1, median)`` to the level with ``min_exceed``
    exceedances. Passes when the statistic decreases over the last three points
    and the final value is at most ``1 / factor`` of the first.
    """
    w = np.sort(_values(batch))
    n = w.size
    if n < min_exceed + 1:
        return {"r": [], "statistic": [], "pass": False, "inconclusive": True,
                "reason": "too few samples"}
    r_hi = w[n - min_exceed]
    r_lo = max(1.0, float(np.median(w)))
    if r_hi <= r_lo:
        return {"r": [], "statistic": [], "pass": False, "inconclusive": True,
                "reason": f"fewer than {min_exceed} exceedances above {r_lo:.3g}"}
    r = np.geomspace(r_lo, r_hi, n_points)
    tail = (n - np.searchsorted(w, r, side="right")) / n
    stat = r * tail / np.asarray(Ltilde(r), dtype=float)
    dec = bool(np.all(np.diff(stat[-3:]) < 0))
    ratio = float(stat[-1] / stat[0]) if stat[0] > 0 else math.inf
    return {"r": r.tolist(), "statistic": stat.tolist(), "ratio": ratio,
            "pass": bool(dec and ratio <= 1 / factor), "inconclusive": False}


# --- densities -------------------------------------------------------------------------------

def silverman_bandwidth(x):
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * x.size ** -0.2


def reflected_kde(x, step, n_bins, bw):
    """Binned Gaussian KDE on cells ``[k step, (k+1) step)``, ``k < n_bins``, reflected at 0.

    Normalised by ``x.size`` so mass beyond the grid is simply lost.
    """
    x = np.asarray(x, dtype=float)
    edges = np.arange(n_bins + 1) * step
    hist, _ = np.histogram(x, bins=edges)
    dens = hist / (x.size * step)
    half = min(n_bins, int(math.ceil(8 * bw / step)))
    m = 2 * (n_bins + half)
    pad = np.concatenate([dens[:half][::-1], dens, np.zeros(m - n_bins - half)])
    k = np.arange(m)
    k = np.minimum(k, m - k) * step
    kern = np.exp(-0.5 * (k / bw) ** 2)
    kern /= kern.sum()
    smooth = np.fft.irfft(np.fft.rfft(pad) * np.fft.rfft(kern), m)
    return np.maximum(smooth[half:half + n_bins], 0.0)


def positive_density(batch, grid, bandwidth=None, n_bins=1 << 13):
    """KDE of the absolutely continuous part of ``W`` (positive values, weighted by
    their frequency) evaluated on ``grid``. Returns ``(density, bandwidth)``."""
    w = _values(batch)
    pos = w[w > 0]
    if pos.size < 2:
        raise InsufficientDataError("empty positive part")
    grid = np.asarray(grid, dtype=float)
    bw = bandwidth or silverman_bandwidth(pos)
    upper = float(grid.max()) + 10 * bw
    step = upper / n_bins
    dens = reflected_kde(pos, step, n_bins, bw) * (pos.size / w.size)
    centres = (np.arange(n_bins) + 0.5) * step
    return np.interp(grid, centres, dens), bw


def kde_positivity(batch, a=0.1, b=3.0, threshold=0.02, n_eval=512) -> dict:
    """Minimum over ``[a, b]`` of a Silverman-bandwidth KDE of ``W`` on ``(0, inf)``."""
    grid = np.linspace(a, b, n_eval)
    dens, bw = positive_density(batch, grid)
    lo = float(dens.min())
    return {"min_density": lo, "argmin": float(grid[np.argmin(dens)]), "bandwidth": bw,
            "threshold": threshold, "pass": bool(lo > threshold)}


def feller_density(y, mass=1.0, rate=1.0):
    """Density on ``(0, inf)`` of a Poisson(``mass``) sum of exponentials with rate ``rate``:
    ``e^{-mass - rate y} sqrt(mass rate / y) I_1(2 sqrt(mass rate y))``."""
    y = np.asarray(y, dtype=float)
    z = 2 * np.sqrt(mass * rate * y)
    return np.exp(-mass - rate * y + z) * np.sqrt(mass * rate / y) * ive(1, z)
