import math

import numpy as np
import pytest
from scipy import stats as sps

from superlim import cumulant as cu
from superlim import skeleton as sk
from superlim.spectral import ModelInconsistencyError
from superlim.stats import feller_density

from conftest import ALL, MULTI


def ks_exp1(x):
    return sps.kstest(x, "expon").statistic


# --- construction -----------------------------------------------------------------------------

def test_feller_skeleton(model):
    m = model("feller1")
    np.testing.assert_allclose(m.qbar, [[0.0]])
    np.testing.assert_allclose(m.b, [1.0])
    assert m.mean_offspring[0] == pytest.approx(2.0)
    assert m.kappa[0] == pytest.approx(2.0)


@pytest.mark.parametrize("name", MULTI)
def test_qbar_formula(solved, model, name):
    s, ext = solved(name)
    v = ext.v
    expected = np.diag(1 / v) @ s.Q @ np.diag(v) - np.diag(s.Q @ v / v)
    np.testing.assert_allclose(model(name).qbar, expected, atol=1e-12)
    np.testing.assert_allclose(model(name).qbar.sum(axis=1), 0.0, atol=1e-14)


@pytest.mark.parametrize("name", ALL)
def test_mean_semigroup_eigenvector(model, name):
    m = model(name)
    g = m.phi0_over_v
    np.testing.assert_allclose(m.mean_semigroup(2.0) @ g, math.exp(2 * m.lambda0) * g, rtol=1e-10)


def test_poissonic_offspring_mean(solved, model):
    _, ext = solved("poissonic")
    # one site: b (E N - 1) = alpha = 1
    assert model("poissonic").mean_offspring[0] == pytest.approx(1 + 1 / (ext.v[0] - 1), rel=1e-10)


def test_inconsistent_v_rejected(scenario):
    s = scenario("twosite")
    with pytest.raises(ModelInconsistencyError):
        sk.build_skeleton(s, np.array([1.0, 1.0]))


# --- offspring -----------------------------------------------------------------------------------

def test_feller_offspring_is_binary(model, rng):
    m = model("feller1")
    assert {sk.sample_offspring(m, 0, rng) for _ in range(200)} == {2}


def test_poissonic_offspring_moments(model, rng):
    m = model("poissonic")
    draws = sk.sample_offspring_many(m, 0, rng, 1_000_000)
    assert draws.min() >= 2
    mean, sd = m.mean_offspring[0], draws.std()
    assert abs(draws.mean() - mean) < 3 * sd / 1000
    p = m.coeffs.offspring[0]
    assert abs(np.mean(draws == 2) - p[0]) < 3 * math.sqrt(p[0] * (1 - p[0]) / 1e6)


def test_offspring_stream_consistency(model):
    m = model("poissonic")
    a = np.random.default_rng(5)
    b = np.random.default_rng(5)
    singles = [sk.sample_offspring(m, 0, a) for _ in range(50)]
    np.testing.assert_array_equal(singles, sk.sample_offspring_many(m, 0, b, 50))


# --- exact particle simulation -----------------------------------------------------------------------

def test_zero_horizon_single_particle(model, rng):
    ps = sk.simulate_skeleton(model("twosite"), 1, 0.0, rng, log_events=True)
    assert len(ps) == 1 and ps.particles[0][0] == 1
    assert ps.event_log == []


def test_feller_exact_mean(model, rng):
    m = model("feller1")
    T, n = 3.0, 4000
    vals = np.array([math.exp(-T) * len(sk.simulate_skeleton(m, 0, T, rng)) for _ in range(n)])
    # e^{-T} N_T is geometric-like with variance 1 - e^{-T}
    assert abs(vals.mean() - 1) < 4 * math.sqrt((1 - math.exp(-T)) / n)


def test_twosite_exact_counts_mean(model, rng):
    m = model("twosite")
    T, n = 1.5, 3000
    counts = np.array([sk.simulate_skeleton(m, 0, T, rng).counts(2) for _ in range(n)])
    expected = m.mean_semigroup(T)[0]
    sd = counts.std(axis=0)
    assert np.all(np.abs(counts.mean(axis=0) - expected) < 4 * sd / math.sqrt(n))


def test_event_log_consistent(model, rng):
    m = model("twosite")
    ps = sk.simulate_skeleton(m, 0, 2.0, rng, log_events=True)
    size = 1 + sum(ev[3] - 1 for ev in ps.event_log if ev[1] == "branch")
    assert size == len(ps)
    times = [ev[0] for ev in ps.event_log]
    assert times == sorted(times)


def test_exact_population_cap(model, rng):
    with pytest.raises(sk.PopulationCapError):
        sk.simulate_skeleton(model("feller1"), 0, 20.0, rng, cap=50)


# --- batched samplers ---------------------------------------------------------------------------------

def test_feller_wz_is_exponential(model):
    batch = sk.sample_WZ(model("feller1"), 0, 12.0, 100_000, seed=3)
    assert ks_exp1(batch.values) < 0.01


@pytest.mark.parametrize("name", ALL)
def test_wz_mean_is_g(model, name):
    m = model(name)
    for x in range(m.d):
        vals = sk.sample_WZ(m, x, 10.0, 40_000, seed=11 + x).values
        assert abs(vals.mean() - m.phi0_over_v[x]) < 4 * vals.std() / math.sqrt(vals.size)


def test_poissonic_wz_mean_value(model):
    assert model("poissonic").phi0_over_v[0] == pytest.approx(0.627501, abs=1e-6)


@pytest.mark.parametrize("name", MULTI)
def test_wz_laplace_matches_psi(solved, model, name):
    s, ext = solved(name)
    m = model(name)
    th = np.array([0.5, 2.0])
    psi = cu.psi_eval(s, ext, th)
    for x in range(m.d):
        vals = sk.sample_WZ(m, x, 15.0, 50_000, seed=100 + x).values
        e = np.exp(-np.outer(th, vals))
        est, se = e.mean(axis=1), e.std(axis=1) / math.sqrt(vals.size)
        assert np.all(np.abs(est - psi[:, x]) < 4 * se)


def test_exact_and_hybrid_agree(model):
    m = model("twosite")
    exact = sk.sample_WZ(m, 0, 5.0, 20_000, seed=1, switch=None).values
    hybrid = sk.sample_WZ(m, 0, 5.0, 20_000, seed=2).values
    res = sps.ks_2samp(exact, hybrid)
    assert res.pvalue > 1e-3


def test_hybrid_population_cap(model):
    with pytest.raises(sk.PopulationCapError):
        sk.sample_WZ(model("feller1"), 0, 10.0, 10, seed=0, switch=None, cap=100)


def test_w_atom_at_zero(model):
    m = model("feller1")
    batch = sk.sample_W(m, 12.0, 100_000, seed=4, mu=[2.0])
    p0 = np.mean(batch.values == 0)
    assert abs(p0 - math.exp(-2)) < 4 * math.sqrt(math.exp(-2) / 1e5)
    np.testing.assert_array_equal(batch.values == 0, batch.counts == 0)
    assert abs(batch.values.mean() - 2) < 4 * batch.values.std() / math.sqrt(1e5)


def test_y_ancestors_follow_v_mu(solved, model):
    s, ext = solved("twosite")
    mu = np.array([1.0, 2.0])
    batch = sk.sample_Y(model("twosite"), 2.0, 50_000, seed=8, mu=mu)
    w = ext.v * mu / np.sum(ext.v * mu)
    freq = np.bincount(batch.ancestors, minlength=2) / 5e4
    assert np.all(np.abs(freq - w) < 4 * np.sqrt(w * (1 - w) / 5e4))


def test_samplers_deterministic_across_threads(model):
    m = model("threesite")
    a = sk.sample_W(m, 6.0, 3 * sk.BLOCK + 17, seed=9, threads=1)
    b = sk.sample_W(m, 6.0, 3 * sk.BLOCK + 17, seed=9, threads=3)
    assert a.values.tobytes() == b.values.tobytes()
    np.testing.assert_array_equal(a.counts, b.counts)
    c = sk.sample_W(m, 6.0, 3 * sk.BLOCK + 17, seed=10, threads=1)
    assert not np.array_equal(a.values, c.values)


def test_prefix_stability(model):
    m = model("twosite")
    small = sk.sample_WZ(m, 0, 4.0, 100, seed=5).values
    big = sk.sample_WZ(m, 0, 4.0, 5000, seed=5).values
    np.testing.assert_array_equal(small, big[:100])


def test_sampler_argument_checks(model):
    m = model("twosite")
    with pytest.raises(ValueError):
        sk.sample_WZ(m, 2, 1.0, 10)
    with pytest.raises(ValueError):
        sk.sample_W(m, 1.0, 10, mu=[0.0, 0.0])
    assert len(sk.sample_W(m, 1.0, 0)) == 0


def test_horizon_shift_small(model):
    dist, noise = sk.horizon_shift(model("feller1"), 0, 8.0, 20_000, seed=1)
    assert dist < 4 * noise


# --- variance and persistence -----------------------------------------------------------------------------

def test_feller_martingale_variance(model):
    s = np.array([0.0, 0.5, 2.0, 7.0])
    np.testing.assert_allclose(sk.martingale_variance(model("feller1"), s)[:, 0], 1 - np.exp(-s),
                               atol=1e-12)


@pytest.mark.parametrize("name", MULTI)
def test_martingale_variance_monotone(model, name):
    var = sk.martingale_variance(model(name), np.linspace(0, 10, 21))
    assert np.all(np.diff(var, axis=0) >= -1e-12)


def test_csv_round_trip(model, tmp_path):
    batch = sk.sample_W(model("twosite"), 3.0, 500, seed=2)
    csv_path, json_path = batch.save(tmp_path / "b")
    back = sk.load_batch(csv_path)
    assert back.values.tobytes() == batch.values.tobytes()
    np.testing.assert_array_equal(back.aux, batch.aux)
    assert back.metadata() == batch.metadata()
    assert (tmp_path / "b.json").exists()


def test_load_batch_requires_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("value,count\n1.0,1\n")
    with pytest.raises(ValueError):
        sk.load_batch(p)


def test_block_rng_streams_distinct():
    a = sk.block_rng(0, "W", 0).random(4)
    assert not np.array_equal(a, sk.block_rng(0, "W", 1).random(4))
    assert not np.array_equal(a, sk.block_rng(0, "Y", 0).random(4))
    np.testing.assert_array_equal(a, sk.block_rng(0, "W", 0).random(4))


def test_default_threads_env(monkeypatch):
    monkeypatch.setenv("SUPERLIM_THREADS", "3")
    assert sk.default_threads() == 3


# --- density series -----------------------------------------------------------------------------------------

def test_density_series_feller(rng):
    y = rng.exponential(size=200_000)
    grid = np.linspace(0.1, 6, 60)
    f = sk.density_series(y, 1.0, grid)
    exact = feller_density(grid)
    assert np.max(np.abs(f - exact)) < 0.01


def test_density_series_mass(rng):
    y = rng.gamma(2.0, size=50_000)
    grid = np.linspace(0.0, 60, 4001)
    f = sk.density_series(y, 2.5, grid)
    assert np.trapezoid(f, grid) == pytest.approx(1 - math.exp(-2.5), abs=5e-3)
    assert np.all(f >= -1e-12)


def test_density_series_grid_error(rng):
    y = rng.exponential(size=1000)
    with pytest.raises(sk.GridError):
        sk.density_series(y, 1.0, np.linspace(0, 5, 10), n_bins=64, mass_tol=1e-15)
