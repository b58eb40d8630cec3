"""Embedded Dormand-Prince 5(4) integrator with dense stopping at output times.

Works on arrays of any shape (batched right-hand sides) and on complex state.
"""

import numpy as np

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class StepSizeError(RuntimeError):
    """Raised when the adaptive step collapses below the configured floor."""

    def __init__(self, t, h):
        super().__init__(f"step size underflow at t={t:.6g} (h={h:.3g})")
        self.t = t
        self.h = h


def integrate(fun, y0, t_out, rtol=1e-10, atol=0.0, rel_floor=1e-3,
              h_min=1e-13, max_steps=2_000_000, h0=None):
    """Integrate ``y' = fun(y)`` (autonomous) from ``t=0`` and return ``y`` at ``t_out``.

    Parameters
    ----------
    fun : callable
        Right-hand side, maps an array of the shape of ``y0`` to the same shape.
    y0 : ndarray
        Initial state, real or complex.
    t_out : array_like
        Non-decreasing, non-negative output times.
    rtol, atol : float
        Component-wise error weights ``atol + rtol * max(|y|, |y_new|, floor)``.
    rel_floor : float
        ``floor = rel_floor * max|y|`` so components much smaller than the
        largest one are controlled relative to the vector magnitude rather
        than to zero.

    Returns
    -------
    ndarray of shape ``(len(t_out),) + y0.shape``.
    """
    y = np.array(y0, dtype=np.result_type(y0, float), copy=True)
    t_out = np.atleast_1d(np.asarray(t_out, dtype=float))
    if np.any(np.diff(t_out) < 0) or (t_out.size and t_out[0] < 0):
        raise ValueError("t_out must be non-decreasing and non-negative")
    out = np.empty((t_out.size,) + y.shape, dtype=y.dtype)

    t = 0.0
    k1 = fun(y)
    if h0 is None:
        scale = np.max(np.abs(y)) if y.size else 0.0
        deriv = np.max(np.abs(k1)) if y.size else 0.0
        h = 1e-2 if deriv == 0 else min(1e-2, 0.01 * max(scale, 1e-300) / deriv)
        h = max(h, 1e-8)
    else:
        h = h0
    steps = 0
    for i, t_target in enumerate(t_out):
        while t < t_target:
            if steps >= max_steps:
                raise StepSizeError(t, h)
            h_step = min(h, t_target - t)
            last = h_step >= t_target - t
            ks = [k1]
            # overflow in a rejected trial step shows up as a non-finite error norm
            with np.errstate(over="ignore", invalid="ignore"):
                for s in range(1, 7):
                    yi = y + h_step * sum(a * k for a, k in zip(_A[s], ks) if a != 0.0)
                    ks.append(fun(yi))
                y_new = yi  # stage 7 evaluates at the 5th-order solution (FSAL)
                err = h_step * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
            ay = np.abs(y)
            ay_new = np.abs(y_new)
            big = np.maximum(ay, ay_new)
            # floor per batch row (last axis is the state dimension)
            floor = rel_floor * (np.max(big, axis=-1, keepdims=True) if y.ndim else big)
            sc = atol + rtol * np.maximum(big, floor)
            sc = np.where(sc > 0, sc, 1e-300)
            en = float(np.max(np.abs(err) / sc)) if y.size else 0.0
            if not np.isfinite(en):
                en = 1e10
            steps += 1
            if en <= 1.0:
                t = t_target if last else t + h_step
                y = y_new
                k1 = ks[6]
                fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
                if not last or fac > 1.0:
                    h = h_step * fac if not last else max(h, h_step * fac)
            else:
                h = h_step * max(0.2, 0.9 * en ** -0.2)
                if h < h_min:
                    raise StepSizeError(t, h)
        out[i] = y
    return out
