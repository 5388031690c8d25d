"""Closed-loop world: robot plant, a shared point-mass object, the partner's
grip and an optional work surface.

Each robot hand holds the object through a stiff spring-damper at a fixed
offset; the partner holds it through an impedance whose stiffness follows
the partner's co-contraction. The torso joints are velocity-servoed to the
admittance command. Everything is integrated together with RK4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..datamodel import ValidationError
from .plant import MAX_COND, Plant, PlantConditioningError, _crba_k, _jacobian_k, _kinematics, _rnea_k


@dataclass(frozen=True)
class ObjectParams:
    mass: float = 2.0
    grip_k: float = 3000.0        # robot hand spring, N/m
    grip_d: float = 60.0          # N s/m
    contact: bool = False
    surface_z: float = 0.0
    contact_k: float = 2e4        # N/m
    contact_d: float = 150.0      # N s/m
    friction_viscous: float = 8.0  # N s/m, planar
    friction_coulomb: float = 0.3  # fraction of normal force
    friction_eps: float = 0.02    # m/s, tanh regularization

    def vector(self) -> np.ndarray:
        return np.array([self.mass, self.grip_k, self.grip_d, float(self.contact), self.surface_z,
                         self.contact_k, self.contact_d, self.friction_viscous, self.friction_coulomb,
                         self.friction_eps])


@numba.njit(cache=True)
def _world_forces(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, links, offsets,
                  q, qd, xo, vo, hand_off, xh, vh, Kh, Dh, op):
    """Grip forces on the robot hands, partner and contact forces on the object."""
    R, p, z, S, Io = _kinematics(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, q)
    F_hands = np.zeros((2, 3))
    Js = np.zeros((2, 6, parent.shape[0]))
    for e in range(2):
        x, J = _jacobian_k(parent, jtype, R, p, z, links[e], offsets[e])
        v = J[:3] @ qd
        F_hands[e] = op[1] * (xo + hand_off[e] - x) + op[2] * (vo - v)
        Js[e] = J
    F_h = Kh @ (xh - xo) + Dh @ (vh - vo)
    F_c = np.zeros(3)
    if op[3] > 0.5:
        pen = op[4] - xo[2]
        if pen > 0.0:
            N = op[5] * pen - op[6] * vo[2]
            if N < 0.0:
                N = 0.0
            F_c[2] = N
            for i in range(2):
                F_c[i] = -op[7] * vo[i] - op[8] * N * np.tanh(vo[i] / op[9])
    return F_hands, F_h, F_c, Js, S, Io


@numba.njit(cache=True)
def _world_deriv(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g, links, offsets,
                 y, tau, qd_cmd, tau_ff, servo, hand_off, xh, vh, Kh, Dh, op, n_torso):
    n = parent.shape[0]
    q = y[:n]
    qd = y[n:2 * n]
    xo = y[2 * n:2 * n + 3]
    vo = y[2 * n + 3:2 * n + 6]
    F_hands, F_h, F_c, Js, S, Io = _world_forces(parent, jtype, axis, tree_R, tree_p, mass, com, inertia,
                                                 links, offsets, q, qd, xo, vo, hand_off, xh, vh, Kh, Dh, op)
    u = tau.copy()
    for j in range(n_torso):
        u[j] = tau_ff[j] + servo * (qd_cmd[j] - qd[j])
    te = np.zeros(n)
    for e in range(2):
        te += Js[e, :3].T @ F_hands[e]
    M = _crba_k(parent, S, Io)
    bias = _rnea_k(parent, S, Io, qd, np.zeros(n), g)
    qdd = np.linalg.solve(M, u + te - bias - damping * qd)
    ao = (-F_hands[0] - F_hands[1] + F_h + F_c) / op[0] + g
    out = np.empty_like(y)
    out[:n] = qd
    out[n:2 * n] = qdd
    out[2 * n:2 * n + 3] = vo
    out[2 * n + 3:2 * n + 6] = ao
    out[2 * n + 6] = u @ qd
    out[2 * n + 7] = te @ qd
    out[2 * n + 8] = (damping * qd) @ qd
    return out


@numba.njit(cache=True)
def _world_rk4(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g, links, offsets,
               y, tau, qd_cmd, tau_ff, servo, hand_off, xh, vh, Kh, Dh, op, n_torso, h):
    k1 = _world_deriv(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g, links, offsets,
                      y, tau, qd_cmd, tau_ff, servo, hand_off, xh, vh, Kh, Dh, op, n_torso)
    k2 = _world_deriv(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g, links, offsets,
                      y + 0.5 * h * k1, tau, qd_cmd, tau_ff, servo, hand_off, xh, vh, Kh, Dh, op, n_torso)
    k3 = _world_deriv(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g, links, offsets,
                      y + 0.5 * h * k2, tau, qd_cmd, tau_ff, servo, hand_off, xh, vh, Kh, Dh, op, n_torso)
    k4 = _world_deriv(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g, links, offsets,
                      y + h * k3, tau, qd_cmd, tau_ff, servo, hand_off, xh, vh, Kh, Dh, op, n_torso)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class Contact:
    """Forces at one instant: on each robot hand (from the object), from the
    partner on the object and from the surface on the object."""

    hands: np.ndarray    # (2, 3)
    partner: np.ndarray  # (3,)
    surface: np.ndarray  # (3,)


class World:
    """Mutable simulation state; one instance per run."""

    def __init__(self, plant: Plant, obj: ObjectParams, hand_offsets, q0, x_obj0,
                 servo_gain: float = 2000.0):
        if plant.model.n_torso != 3 or len(plant.model.tcp_link) != 2:
            raise ValidationError("world expects a two-arm robot with a 3-joint torso")
        self.plant = plant
        self.obj = obj
        self._op = obj.vector()
        self.hand_offsets = np.ascontiguousarray(hand_offsets, dtype=float).reshape(2, 3)
        self.servo = float(servo_gain)
        n = plant.n
        self.y = np.zeros(2 * n + 9)
        self.y[:n] = q0
        self.y[2 * n:2 * n + 3] = x_obj0
        self.t = 0.0
        self._m = plant.model
        self._args = (*plant._a, plant._damping, plant._g, plant._links, plant._offsets)

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def q(self) -> np.ndarray:
        return self.y[:self.n]

    @property
    def qd(self) -> np.ndarray:
        return self.y[self.n:2 * self.n]

    @property
    def x_obj(self) -> np.ndarray:
        return self.y[2 * self.n:2 * self.n + 3]

    @property
    def v_obj(self) -> np.ndarray:
        return self.y[2 * self.n + 3:2 * self.n + 6]

    @property
    def work(self) -> tuple[float, float, float]:
        n = self.n
        return float(self.y[2 * n + 6]), float(self.y[2 * n + 7]), float(self.y[2 * n + 8])

    def forces(self, xh, vh, Kh, Dh) -> Contact:
        a = self._args
        F_hands, F_h, F_c, _, _, _ = _world_forces(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[10], a[11],
                                                   self.q, self.qd, self.x_obj, self.v_obj, self.hand_offsets,
                                                   xh, vh, Kh, Dh, self._op)
        return Contact(F_hands, F_h, F_c)

    def step(self, tau, qd_torso_cmd, tau_torso_ff, xh, vh, Kh, Dh, dt: float):
        if not 0 < dt <= 1e-3 + 1e-15:
            raise ValidationError(f"world step needs 0 < dt <= 1 ms, got {dt}")
        y = _world_rk4(*self._args, self.y, np.asarray(tau, float), np.asarray(qd_torso_cmd, float),
                       np.asarray(tau_torso_ff, float), self.servo, self.hand_offsets,
                       np.asarray(xh, float), np.asarray(vh, float), np.asarray(Kh, float),
                       np.asarray(Dh, float), self._op, 3, dt)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"world state became non-finite at t={self.t:.3f}")
        self.y = y
        self.t += dt

    def check_conditioning(self):
        c = np.linalg.cond(self.plant.M(self.q))
        if not c <= MAX_COND:
            raise PlantConditioningError(f"mass matrix condition number {c:.3g}")
