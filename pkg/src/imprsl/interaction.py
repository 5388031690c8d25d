"""Translational Cartesian impedance: forward simulation and reference recovery.

The TCP is a point mass pulled toward the reference by a spring-damper and
pushed by the external force applied to it:

    Lambda xdd = K (x_d - x) - D xd + F_ext

Inverting the same relation with unit mass gives the reference that
explains an observed motion, ``x_d = x + K^-1 (xdd + D xd - F_ext)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from .datamodel import ValidationError
from .stiffness import check_spd

SMOOTH_WINDOW = 7


class IntegrationBlowupError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"integration produced non-finite state at step {step}")
        self.step = step


class IllConditionedStiffnessError(ValidationError):
    def __init__(self, steps):
        steps = list(steps)
        super().__init__(f"stiffness ill-conditioned (cond > 1e8) at steps {steps[:10]}")
        self.steps = steps


@dataclass(frozen=True)
class ImpedanceParams:
    Lambda: np.ndarray
    D: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        for name in ("Lambda", "D", "K"):
            object.__setattr__(self, name, check_spd(getattr(self, name), name))


@dataclass(frozen=True)
class CartesianState:
    x: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class ImpedanceTrajectory:
    x: np.ndarray        # (n, 3)
    v: np.ndarray        # (n, 3)
    a: np.ndarray        # (n, 3) model acceleration at the samples
    storage: np.ndarray  # (n,) 0.5 v'Lv + 0.5 e'Ke


def _as_series(m, n: int, shape: tuple) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape == shape:
        return np.broadcast_to(m, (n,) + shape)
    if m.shape != (n,) + shape:
        raise ValidationError(f"expected {shape} or {(n,) + shape}, got {m.shape}")
    return m


def differentiate(series, dt: float, order: int = 1) -> np.ndarray:
    """Second-order accurate finite differences along axis 0."""
    y = np.asarray(series, dtype=float)
    if y.shape[0] < 5:
        raise ValidationError(f"need >= 5 samples to differentiate, got {y.shape[0]}")
    if order == 1:
        return np.gradient(y, dt, axis=0, edge_order=2)
    if order != 2:
        raise ValidationError(f"order must be 1 or 2, got {order}")
    out = np.empty_like(y)
    out[1:-1] = (y[2:] - 2 * y[1:-1] + y[:-2]) / dt ** 2
    out[0] = (2 * y[0] - 5 * y[1] + 4 * y[2] - y[3]) / dt ** 2
    out[-1] = (2 * y[-1] - 5 * y[-2] + 4 * y[-3] - y[-4]) / dt ** 2
    return out


def smooth_derivatives(x, dt: float, window: int = SMOOTH_WINDOW):
    """Savitzky-Golay (cubic) velocity and acceleration estimates."""
    x = np.asarray(x, dtype=float)
    v = savgol_filter(x, window, 3, deriv=1, delta=dt, axis=0, mode="interp")
    a = savgol_filter(x, window, 3, deriv=2, delta=dt, axis=0, mode="interp")
    return v, a


def simulate_impedance(x_d, params, f_ext, dt: float, x0: CartesianState,
                       substeps: int | None = None, reference_feedforward: bool = False,
                       ) -> ImpedanceTrajectory:
    """Integrate the impedance dynamics with fixed-step RK4.

    ``x_d`` and ``f_ext`` are (n, 3) samples on a grid of spacing ``dt``;
    ``params`` is an :class:`ImpedanceParams` or a tuple of (n, 3, 3) series
    ``(Lambda, D, K)``. Inputs are linearly interpolated between samples and
    integrated with ``substeps`` RK4 steps per sample (default: enough for
    an internal step of at most 1 ms). With
    ``reference_feedforward`` the reference velocity and acceleration enter
    the damping and inertial terms; by default they are taken as zero, the
    same assumption the reference recovery makes.
    """
    if not dt > 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    x_d = np.asarray(x_d, dtype=float)
    f_ext = np.asarray(f_ext, dtype=float)
    n = x_d.shape[0]
    if f_ext.shape != x_d.shape:
        raise ValidationError("x_d and f_ext must share a timebase")
    if isinstance(params, ImpedanceParams):
        Lam, D, K = (_as_series(m, n, (3, 3)) for m in (params.Lambda, params.D, params.K))
    else:
        Lam, D, K = (_as_series(m, n, (3, 3)) for m in params)
        for name, series in (("Lambda", Lam), ("D", D), ("K", K)):
            w = np.linalg.eigvalsh(0.5 * (series + np.swapaxes(series, 1, 2)))
            if w.min() <= 0:
                raise ValidationError(f"{name} schedule is not positive definite")
    Lam_inv = np.linalg.inv(Lam)
    if reference_feedforward:
        vd = differentiate(x_d, dt, 1)
        ad = differentiate(x_d, dt, 2)
    else:
        vd = np.zeros_like(x_d)
        ad = np.zeros_like(x_d)

    def inputs(k: int, s: float):
        j = min(k + 1, n - 1)
        lerp = lambda arr: (1 - s) * arr[k] + s * arr[j]
        return (lerp(x_d), lerp(vd), lerp(ad), lerp(f_ext), lerp(K), lerp(D), lerp(Lam_inv))

    def accel(x, v, inp):
        xd, vdk, adk, f, Kk, Dk, Li = inp
        return adk + Li @ (Kk @ (xd - x) + Dk @ (vdk - v) + f) if reference_feedforward \
            else Li @ (Kk @ (xd - x) - Dk @ v + f)

    if substeps is None:
        substeps = max(1, int(np.ceil(dt / 1e-3 - 1e-9)))
    h = dt / substeps
    xs = np.empty((n, 3))
    vs = np.empty((n, 3))
    acc = np.empty((n, 3))
    x = np.asarray(x0.x, dtype=float).copy()
    v = np.asarray(x0.v, dtype=float).copy()
    for k in range(n):
        xs[k], vs[k] = x, v
        acc[k] = accel(x, v, inputs(k, 0.0))
        if k == n - 1:
            break
        for m in range(substeps):
            s0, s1 = m / substeps, (m + 1) / substeps
            i0, im, i1 = inputs(k, s0), inputs(k, 0.5 * (s0 + s1)), inputs(k, s1)
            k1x, k1v = v, accel(x, v, i0)
            k2x, k2v = v + 0.5 * h * k1v, accel(x + 0.5 * h * k1x, v + 0.5 * h * k1v, im)
            k3x, k3v = v + 0.5 * h * k2v, accel(x + 0.5 * h * k2x, v + 0.5 * h * k2v, im)
            k4x, k4v = v + h * k3v, accel(x + h * k3x, v + h * k3v, i1)
            x = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise IntegrationBlowupError(k + 1)
    e = x_d - xs
    storage = 0.5 * np.einsum("ni,nij,nj->n", vs, Lam, vs) + 0.5 * np.einsum("ni,nij,nj->n", e, K, e)
    return ImpedanceTrajectory(xs, vs, acc, storage)


def recover_reference(x, xd, xdd, K, D, f_ext) -> np.ndarray:
    """Reference trajectory explaining the observed motion under unit mass."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    K = _as_series(K, n, (3, 3))
    D = _as_series(D, n, (3, 3))
    cond = np.linalg.cond(K)
    bad = np.flatnonzero(~(cond <= 1e8))
    if bad.size:
        raise IllConditionedStiffnessError(bad)
    rhs = np.asarray(xdd) + np.einsum("nij,nj->ni", D, np.asarray(xd)) - np.asarray(f_ext)
    return x + np.linalg.solve(K, rhs[..., None])[..., 0]


def recover_reference_from_samples(x, f_ext, K, D, dt: float,
                                   window: int = SMOOTH_WINDOW) -> np.ndarray:
    """As :func:`recover_reference`, with smoothed derivatives of sampled data."""
    v, a = smooth_derivatives(x, dt, window)
    return recover_reference(x, v, a, K, D, f_ext)
