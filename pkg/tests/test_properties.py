import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as hst

import superlim as sl
from superlim import cumulant as cu
from superlim.model import e2, phi_prime_sites, phi_sites, scenario_from_dict, scenario_to_dict

from conftest import ALL

FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])

pos = hst.floats(min_value=0.0, max_value=20.0, allow_nan=False)
unit = hst.floats(min_value=0.0, max_value=1.0, allow_nan=False)
names = hst.sampled_from(ALL)


@FAST
@given(names, pos, pos, unit)
def test_phi_convex(name, a, b, t):
    s = sl.builtin(name)
    za, zb = np.full(s.d, a), np.full(s.d, b)
    mid = phi_sites(s, t * za + (1 - t) * zb)
    chord = t * phi_sites(s, za) + (1 - t) * phi_sites(s, zb)
    assert np.all(mid <= chord + 1e-9 * (1 + np.abs(chord)))


@FAST
@given(names)
def test_phi_vanishes_at_zero(name):
    s = sl.builtin(name)
    np.testing.assert_array_equal(phi_sites(s, np.zeros(s.d)), 0.0)


@FAST
@given(names, hst.floats(min_value=0.01, max_value=10.0))
def test_phi_prime_finite_difference(name, z):
    s = sl.builtin(name)
    h = 1e-6 * max(1.0, z)
    zz = np.full(s.d, z)
    fd = (phi_sites(s, zz + h) - phi_sites(s, zz - h)) / (2 * h)
    np.testing.assert_allclose(phi_prime_sites(s, zz), fd, rtol=1e-6, atol=1e-8)


@FAST
@given(hst.floats(min_value=-30.0, max_value=30.0, allow_nan=False))
def test_e2_matches_expm1(y):
    # the direct difference cancels badly near 0; use the series there
    if abs(y) < 0.1:
        exact = math.fsum(y ** k / math.factorial(k) for k in range(2, 14))
    else:
        exact = math.expm1(y) - y
    assert e2(np.array([y]))[0] == pytest.approx(exact, rel=1e-12, abs=1e-300)
    assert e2(np.array([y]))[0] >= 0


@pytest.fixture(scope="module")
def twosite_ext():
    s = sl.builtin("twosite")
    return s, cu.extinction_v(s)


@FAST
@given(hst.lists(pos, min_size=2, max_size=2), hst.lists(pos, min_size=2, max_size=2),
       hst.floats(min_value=0.05, max_value=3.0))
def test_vt_monotone(f, g, t):
    s = sl.builtin("twosite")
    lo, hi = np.minimum(f, g), np.maximum(f, g)
    a, b = cu.solve_Vt(s, lo, t), cu.solve_Vt(s, hi, t)
    assert np.all(a <= b * (1 + 1e-8) + 1e-12)


@FAST
@given(hst.lists(pos, min_size=2, max_size=2), hst.floats(0.05, 2.0), hst.floats(0.05, 2.0))
def test_vt_flow(f, t1, t2):
    s = sl.builtin("twosite")
    f = np.array(f)
    np.testing.assert_allclose(cu.solve_Vt(s, cu.solve_Vt(s, f, t1), t2), cu.solve_Vt(s, f, t1 + t2),
                               rtol=1e-7, atol=1e-12)


@FAST
@given(hst.lists(unit, min_size=2, max_size=2), hst.floats(0.0, 10.0))
def test_vbar_stays_in_band(twosite_ext, f, t):
    s, ext = twosite_ext
    out = cu.vbar_t(s, ext, np.array(f), t)
    assert np.all(out >= 0) and np.all(out <= 1 + 1e-12)
    assert np.all(out <= np.max(f) + 1e-12)


@FAST
@given(hst.floats(0.0, 5.0), hst.floats(0.0, 5.0))
def test_feller_vbar_closed_form(a, t):
    # feller1: Vbar_t(a) = a e^{-t} / (1 - a + a e^{-t}) for a in [0, 1]
    s = sl.builtin("feller1")
    ext = cu.as_extinction(s, np.array([1.0]))
    a = a / 5
    exact = a * math.exp(-t) / (1 - a + a * math.exp(-t))
    assert cu.vbar_t(s, ext, np.array([a]), t)[0] == pytest.approx(exact, rel=1e-8, abs=1e-14)


@FAST
@given(
    hst.integers(1, 3).flatmap(lambda d: hst.tuples(
        hst.just(d),
        hst.lists(hst.floats(0.1, 5.0), min_size=d, max_size=d),
        hst.lists(hst.floats(0.1, 3.0), min_size=d * d, max_size=d * d),
        hst.lists(hst.floats(-1.0, 2.0), min_size=d, max_size=d),
        hst.lists(hst.floats(0.0, 2.0), min_size=d, max_size=d),
    )))
def test_scenario_round_trip(data):
    d, m, rates, alpha, beta = data
    R = np.array(rates).reshape(d, d)
    np.fill_diagonal(R, 0.0)
    Q = R - np.diag(R.sum(axis=1))
    s = sl.make_scenario("h", m=m, Q=Q, alpha=alpha, beta=beta)
    back = scenario_from_dict(scenario_to_dict(s))
    assert scenario_to_dict(back) == scenario_to_dict(s)
    np.testing.assert_array_equal(back.Q, s.Q)
