import math

import numpy as np
import pytest
from scipy.integrate import quad

from superlim import stats as st


def power_quantiles(n, slope=1.5, scale=1.0):
    """Deterministic sample with ``P(W <= r) = (r / scale)^slope`` on ``[0, scale]``."""
    return scale * ((np.arange(n) + 0.5) / n) ** (1 / slope)


# --- small values ---------------------------------------------------------------------------------

def test_exact_power_law_recovered():
    eps = 1e-9
    w = np.repeat([(1 - eps) / 64, (1 - eps) / 16, (1 - eps) / 4, 1 - eps], [1, 7, 56, 448])
    fit = st.smallvalue_fit(w, r_grid=[1 / 64, 1 / 16, 1 / 4, 1.0], min_count=1)
    np.testing.assert_allclose(fit.ecdf, [1 / 512, 1 / 64, 1 / 8, 1.0])
    assert fit.slope == pytest.approx(1.5, abs=1e-6)
    assert fit.constant == pytest.approx(1.0, abs=1e-6)


def test_quantile_sample_fit():
    fit = st.smallvalue_fit(power_quantiles(200_000), r_lo=0.01, r_hi=0.5)
    assert fit.slope == pytest.approx(1.5, abs=2e-3)
    assert fit.constant == pytest.approx(1.0, rel=1e-2)
    assert np.all(np.diff(fit.ecdf) >= 0)


def test_scale_covariance():
    w = power_quantiles(200_000)
    a = st.smallvalue_fit(w, r_lo=0.01, r_hi=0.5)
    b = st.smallvalue_fit(2 * w, r_lo=0.02, r_hi=1.0)
    assert b.slope == pytest.approx(a.slope, abs=1e-12)
    assert b.constant == pytest.approx(a.constant * 2 ** -a.slope, rel=1e-9)


def test_confidence_intervals_contain_estimate(rng):
    w = rng.random(50_000) ** (1 / 0.7)
    fit = st.smallvalue_fit(w, n_boot=100, seed=3)
    lo, hi = fit.ci["slope"]
    assert lo <= fit.slope <= hi
    clo, chi = fit.constant_ci
    assert clo <= fit.constant <= chi
    assert lo < 0.7 < hi
    d = fit.to_dict()
    assert d["slope"] == fit.slope and len(d["r_grid"]) == 21


def test_zero_atom_ignored():
    w = np.concatenate([np.zeros(1000), power_quantiles(1000)])
    fit = st.smallvalue_fit(w, r_grid=[0.1, 0.5, 1.0], min_count=1)
    # the atom is excluded from the numerator but not the denominator
    assert fit.ecdf[-1] == pytest.approx(0.5)


def test_insufficient_data():
    with pytest.raises(st.InsufficientDataError):
        st.smallvalue_fit(np.ones(100))
    with pytest.raises(st.InsufficientDataError):
        st.smallvalue_fit(np.zeros(0))
    with pytest.raises(ValueError):
        st.smallvalue_fit(np.ones(10), r_lo=1.0, r_hi=0.5)


def test_bootstrap_deterministic(rng):
    w = rng.random(20_000)
    a = st.smallvalue_fit(w, seed=1)
    b = st.smallvalue_fit(w, seed=1)
    assert a.ci == b.ci


# --- Laplace ------------------------------------------------------------------------------------------

def test_laplace_distance_exponential():
    w = -np.log1p(-(np.arange(100_000) + 0.5) / 100_000)
    grid = np.geomspace(0.1, 100, 31)
    assert st.laplace_distance(w, lambda t: 1 / (1 + t), grid) < 1e-3
    assert st.laplace_distance(w, lambda t: 1 / (1 + 2 * t), grid) > 0.02
    assert st.laplace_distance(np.zeros(3), lambda t: np.ones_like(t), grid) == 0.0


def test_empirical_laplace_chunking(rng):
    w = rng.exponential(size=1001)
    th = np.array([0.3, 4.0])
    np.testing.assert_allclose(st.empirical_laplace(w, th, chunk=7), st.empirical_laplace(w, th))


# --- tail ------------------------------------------------------------------------------------------------

def test_tail_check_heavy_tail_fails(rng):
    w = 1 / rng.random(200_000)                     # P(W > r) = 1 / r
    res = st.tail_decay_check(w, lambda r: np.ones_like(r))
    assert not res["pass"] and not res["inconclusive"]
    assert 0.5 < res["ratio"] < 2


def test_tail_check_light_tail_passes(rng):
    w = 1 / np.sqrt(rng.random(200_000))            # P(W > r) = 1 / r^2
    res = st.tail_decay_check(w, lambda r: np.ones_like(r))
    assert res["pass"]
    assert len(res["r"]) == 8 and res["r"][0] == pytest.approx(max(1.0, np.median(w)))


def test_tail_check_inconclusive():
    assert st.tail_decay_check(np.ones(50), lambda r: r)["inconclusive"]
    assert st.tail_decay_check(np.full(1000, 0.5), lambda r: r)["inconclusive"]


# --- densities ---------------------------------------------------------------------------------------------

def test_silverman_normal(rng):
    x = rng.standard_normal(100_000)
    assert st.silverman_bandwidth(x) == pytest.approx(0.9 * 1e5 ** -0.2, rel=0.02)


def test_reflected_kde_preserves_mass(rng):
    x = rng.exponential(size=50_000)
    step = 20 / 4096
    dens = st.reflected_kde(x, step, 4096, 0.05)
    assert dens.sum() * step == pytest.approx(1.0, abs=1e-3)
    # reflection keeps the boundary value near f(0) = 1
    assert dens[0] == pytest.approx(1.0, abs=0.05)


def test_kde_positivity_exponential(rng):
    w = rng.exponential(size=200_000)
    res = st.kde_positivity(w)
    assert res["pass"]
    assert res["min_density"] == pytest.approx(math.exp(-3), rel=0.1)
    assert res["argmin"] == pytest.approx(3.0)


def test_kde_is_deterministic(rng):
    w = rng.exponential(size=10_000)
    grid = np.linspace(0.1, 3, 50)
    a, _ = st.positive_density(w, grid)
    b, _ = st.positive_density(w.copy(), grid)
    np.testing.assert_array_equal(a, b)


def test_positive_density_needs_positive_values():
    with pytest.raises(st.InsufficientDataError):
        st.positive_density(np.zeros(100), np.linspace(0.1, 1, 5))


@pytest.mark.parametrize("mass, rate", [(1.0, 1.0), (2.0, 3.0)])
def test_feller_density_mass(mass, rate):
    total, _ = quad(lambda y: float(st.feller_density(y, mass, rate)), 0, np.inf, limit=200)
    assert total == pytest.approx(1 - math.exp(-mass), abs=1e-9)


def test_feller_density_large_argument_stable():
    y = np.array([1e3, 1e4])
    out = st.feller_density(y)
    assert np.all(np.isfinite(out)) and np.all(out >= 0)
