import numpy as np
import pytest

from superlim._ode import StepSizeError, integrate


def test_linear_decay_matches_exponential():
    ts = np.array([0.0, 0.5, 1.0, 3.0])
    out = integrate(lambda y: -2.0 * y, np.array([1.0, 3.0]), ts)
    expected = np.exp(-2 * ts)[:, None] * np.array([1.0, 3.0])
    np.testing.assert_allclose(out, expected, rtol=1e-9)


def test_complex_rotation():
    out = integrate(lambda y: 1j * y, np.array([1.0 + 0j]), [np.pi])[0]
    np.testing.assert_allclose(out, [-1.0], atol=1e-9)


def test_batched_rows_are_independent():
    rates = np.array([[0.5], [-1.0], [2.0]])
    out = integrate(lambda y: rates * y, np.ones((3, 1)), [1.5])[0]
    np.testing.assert_allclose(out[:, 0], np.exp(1.5 * rates[:, 0]), rtol=1e-9)


def test_rows_of_different_size_keep_relative_accuracy():
    y0 = np.array([[1e-9, 2e-9], [0.5, 0.9]])
    out = integrate(lambda y: -y + y * y, y0, [2.0])[0]
    # logistic-type closed form u(t) = u0 e^{-t} / (1 - u0 + u0 e^{-t})
    u0 = y0
    exact = u0 * np.exp(-2) / (1 - u0 + u0 * np.exp(-2))
    np.testing.assert_allclose(out, exact, rtol=1e-9)


def test_blow_up_reports_time():
    with pytest.raises(StepSizeError) as info:
        integrate(lambda y: y * y, np.array([1.0]), [2.0], max_steps=20_000)
    assert 0.9 < info.value.t <= 1.0


def test_rejects_decreasing_times():
    with pytest.raises(ValueError):
        integrate(lambda y: y, np.ones(1), [1.0, 0.5])
