"""Articulated plant: a kinematic tree of revolute/prismatic joints.

Dynamics use recursive Newton-Euler in world coordinates; the joint-space
inertia is assembled column by column from unit-acceleration passes. Hot
loops are compiled with numba.

The default robot is a 3-DoF prismatic torso (x, y, z) carrying two arms,
each either a 3R spatial arm (reduced) or a 7R arm (full).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from ..datamodel import ValidationError

REVOLUTE = 0
PRISMATIC = 1
GRAVITY = np.array([0.0, 0.0, -9.81])
MAX_COND = 1e10


class PlantConditioningError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlantModel:
    """Kinematic tree with per-link inertia.

    Joint ``j`` sits at ``tree_p[j]`` with orientation ``tree_R[j]`` in the
    frame of ``parent[j]`` (-1 for the fixed base) and moves along/about
    ``axis[j]`` of its own frame. Link ``j`` is rigidly attached after joint
    ``j``; ``com`` and ``inertia`` are expressed in that link frame.
    """

    parent: np.ndarray
    jtype: np.ndarray
    axis: np.ndarray
    tree_R: np.ndarray
    tree_p: np.ndarray
    mass: np.ndarray
    com: np.ndarray
    inertia: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    qd_max: np.ndarray
    damping: np.ndarray
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    tcp_link: tuple = ()
    tcp_offset: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    chains: tuple = ()      # joint index arrays, one per TCP
    n_torso: int = 0

    def __post_init__(self):
        n = len(self.parent)
        for j, p in enumerate(self.parent):
            if not -1 <= p < j:
                raise ValidationError("joints must be topologically ordered (parent < child)")
        if np.any(self.mass < 0) or np.any(self.damping < 0):
            raise ValidationError("negative mass or damping")
        if self.axis.shape != (n, 3):
            raise ValidationError("axis must be (n, 3)")

    @property
    def n(self) -> int:
        return len(self.parent)

    def arrays(self):
        return (self.parent, self.jtype, self.axis, self.tree_R, self.tree_p,
                self.mass, self.com, self.inertia)


# ---------------------------------------------------------------- kernels
#
# Spatial quantities are expressed in world coordinates about the world
# origin, ordered (angular, linear).

@numba.njit(cache=True)
def _rot(axis, angle):
    x, y, z = axis[0], axis[1], axis[2]
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([[c + x * x * C, x * y * C - z * s, x * z * C + y * s],
                     [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
                     [z * x * C - y * s, z * y * C + x * s, c + z * z * C]])


@numba.njit(cache=True)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@numba.njit(cache=True)
def fk_links(parent, jtype, axis, tree_R, tree_p, q):
    """World rotation, origin and joint axis of every link frame."""
    n = parent.shape[0]
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    z = np.empty((n, 3))
    for j in range(n):
        k = parent[j]
        Rj = np.empty((3, 3))
        pj = np.empty(3)
        for r in range(3):
            for c in range(3):
                acc = 0.0
                for m in range(3):
                    acc += (R[k, r, m] if k >= 0 else (1.0 if r == m else 0.0)) * tree_R[j, m, c]
                Rj[r, c] = acc
            acc = p[k, r] if k >= 0 else 0.0
            for m in range(3):
                acc += (R[k, r, m] if k >= 0 else (1.0 if r == m else 0.0)) * tree_p[j, m]
            pj[r] = acc
        for r in range(3):
            z[j, r] = Rj[r, 0] * axis[j, 0] + Rj[r, 1] * axis[j, 1] + Rj[r, 2] * axis[j, 2]
        if jtype[j] == REVOLUTE:
            Q = _rot(axis[j], q[j])
            for r in range(3):
                for c in range(3):
                    R[j, r, c] = Rj[r, 0] * Q[0, c] + Rj[r, 1] * Q[1, c] + Rj[r, 2] * Q[2, c]
                p[j, r] = pj[r]
        else:
            for r in range(3):
                for c in range(3):
                    R[j, r, c] = Rj[r, c]
                p[j, r] = pj[r] + z[j, r] * q[j]
    return R, p, z


@numba.njit(cache=True)
def _kinematics(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, q):
    """Motion subspaces S (n, 6) and spatial inertias about the origin (n, 6, 6)."""
    n = parent.shape[0]
    R, p, z = fk_links(parent, jtype, axis, tree_R, tree_p, q)
    S = np.zeros((n, 6))
    Io = np.zeros((n, 6, 6))
    for j in range(n):
        if jtype[j] == REVOLUTE:
            S[j, 0], S[j, 1], S[j, 2] = z[j, 0], z[j, 1], z[j, 2]
            S[j, 3] = p[j, 1] * z[j, 2] - p[j, 2] * z[j, 1]
            S[j, 4] = p[j, 2] * z[j, 0] - p[j, 0] * z[j, 2]
            S[j, 5] = p[j, 0] * z[j, 1] - p[j, 1] * z[j, 0]
        else:
            S[j, 3], S[j, 4], S[j, 5] = z[j, 0], z[j, 1], z[j, 2]
        m = mass[j]
        c = p[j] + R[j] @ com[j]
        Ic = R[j] @ inertia[j] @ R[j].T
        # [c]x
        C = np.array([[0.0, -c[2], c[1]], [c[2], 0.0, -c[0]], [-c[1], c[0], 0.0]])
        top = Ic + m * (C @ C.T)
        for r in range(3):
            for k in range(3):
                Io[j, r, k] = top[r, k]
                Io[j, r, 3 + k] = m * C[r, k]
                Io[j, 3 + r, k] = m * C[k, r]
            Io[j, 3 + r, 3 + r] = m
    return R, p, z, S, Io


@numba.njit(cache=True)
def _crm(v, u, out):
    """Spatial motion cross product v x u."""
    out[0] = v[1] * u[2] - v[2] * u[1]
    out[1] = v[2] * u[0] - v[0] * u[2]
    out[2] = v[0] * u[1] - v[1] * u[0]
    out[3] = v[1] * u[5] - v[2] * u[4] + v[4] * u[2] - v[5] * u[1]
    out[4] = v[2] * u[3] - v[0] * u[5] + v[5] * u[0] - v[3] * u[2]
    out[5] = v[0] * u[4] - v[1] * u[3] + v[3] * u[1] - v[4] * u[0]


@numba.njit(cache=True)
def _crf(v, f, out):
    """Spatial force cross product v x* f."""
    out[0] = v[1] * f[2] - v[2] * f[1] + v[4] * f[5] - v[5] * f[4]
    out[1] = v[2] * f[0] - v[0] * f[2] + v[5] * f[3] - v[3] * f[5]
    out[2] = v[0] * f[1] - v[1] * f[0] + v[3] * f[4] - v[4] * f[3]
    out[3] = v[1] * f[5] - v[2] * f[4]
    out[4] = v[2] * f[3] - v[0] * f[5]
    out[5] = v[0] * f[4] - v[1] * f[3]


@numba.njit(cache=True)
def _rnea_k(parent, S, Io, qd, qdd, g):
    n = parent.shape[0]
    v = np.zeros((n, 6))
    a = np.zeros((n, 6))
    f = np.zeros((n, 6))
    tmp = np.zeros(6)
    Iv = np.zeros(6)
    for j in range(n):
        k = parent[j]
        for r in range(6):
            if k >= 0:
                v[j, r] = v[k, r] + S[j, r] * qd[j]
                a[j, r] = a[k, r] + S[j, r] * qdd[j]
            else:
                v[j, r] = S[j, r] * qd[j]
                a[j, r] = S[j, r] * qdd[j] - (g[r - 3] if r >= 3 else 0.0)
        _crm(v[j], S[j], tmp)
        for r in range(6):
            a[j, r] += tmp[r] * qd[j]
        for r in range(6):
            acc_a = 0.0
            acc_v = 0.0
            for c in range(6):
                acc_a += Io[j, r, c] * a[j, c]
                acc_v += Io[j, r, c] * v[j, c]
            f[j, r] = acc_a
            Iv[r] = acc_v
        _crf(v[j], Iv, tmp)
        for r in range(6):
            f[j, r] += tmp[r]
    tau = np.zeros(n)
    for j in range(n - 1, -1, -1):
        acc = 0.0
        for r in range(6):
            acc += S[j, r] * f[j, r]
        tau[j] = acc
        k = parent[j]
        if k >= 0:
            for r in range(6):
                f[k, r] += f[j, r]
    return tau


@numba.njit(cache=True)
def _crba_k(parent, S, Io):
    n = parent.shape[0]
    Ic = Io.copy()
    for j in range(n - 1, -1, -1):
        k = parent[j]
        if k >= 0:
            Ic[k] += Ic[j]
    M = np.zeros((n, n))
    F = np.zeros(6)
    for i in range(n):
        for r in range(6):
            acc = 0.0
            for c in range(6):
                acc += Ic[i, r, c] * S[i, c]
            F[r] = acc
        j = i
        while j >= 0:
            acc = 0.0
            for r in range(6):
                acc += S[j, r] * F[r]
            M[i, j] = acc
            M[j, i] = acc
            j = parent[j]
    return M


@numba.njit(cache=True)
def rnea(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, q, qd, qdd, g):
    """Inverse dynamics tau = M qdd + C qd + G (gravity ``g``)."""
    _, _, _, S, Io = _kinematics(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, q)
    return _rnea_k(parent, S, Io, qd, qdd, g)


@numba.njit(cache=True)
def mass_matrix(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, q):
    _, _, _, S, Io = _kinematics(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, q)
    return _crba_k(parent, S, Io)


@numba.njit(cache=True)
def _jacobian_k(parent, jtype, R, p, z, link, offset):
    n = parent.shape[0]
    x = p[link] + R[link] @ offset
    J = np.zeros((6, n))
    j = link
    while j >= 0:
        if jtype[j] == REVOLUTE:
            J[0, j] = z[j, 1] * (x[2] - p[j, 2]) - z[j, 2] * (x[1] - p[j, 1])
            J[1, j] = z[j, 2] * (x[0] - p[j, 0]) - z[j, 0] * (x[2] - p[j, 2])
            J[2, j] = z[j, 0] * (x[1] - p[j, 1]) - z[j, 1] * (x[0] - p[j, 0])
            J[3, j], J[4, j], J[5, j] = z[j, 0], z[j, 1], z[j, 2]
        else:
            J[0, j], J[1, j], J[2, j] = z[j, 0], z[j, 1], z[j, 2]
        j = parent[j]
    return x, J


@numba.njit(cache=True)
def point_jacobian(parent, jtype, axis, tree_R, tree_p, q, link, offset):
    """6 x n geometric Jacobian (linear rows first) of a point on ``link``."""
    R, p, z = fk_links(parent, jtype, axis, tree_R, tree_p, q)
    x, J = _jacobian_k(parent, jtype, R, p, z, link, offset)
    return x, R[link].copy(), J


@numba.njit(cache=True)
def potential_energy(parent, jtype, axis, tree_R, tree_p, mass, com, q, g):
    R, p, z = fk_links(parent, jtype, axis, tree_R, tree_p, q)
    e = 0.0
    for j in range(parent.shape[0]):
        e -= mass[j] * (g @ (p[j] + R[j] @ com[j]))
    return e


@numba.njit(cache=True)
def forward_dynamics(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping,
                     q, qd, tau, g):
    _, _, _, S, Io = _kinematics(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, q)
    M = _crba_k(parent, S, Io)
    bias = _rnea_k(parent, S, Io, qd, np.zeros(q.shape[0]), g)
    return np.linalg.solve(M, tau - bias - damping * qd), M


@numba.njit(cache=True)
def _plant_deriv(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g,
                 links, offsets, y, tau, wrenches):
    n = parent.shape[0]
    q = y[:n]
    qd = y[n:2 * n]
    R, p, z, S, Io = _kinematics(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, q)
    te = np.zeros(n)
    for e in range(links.shape[0]):
        _, J = _jacobian_k(parent, jtype, R, p, z, links[e], offsets[e])
        te += J.T @ wrenches[e]
    M = _crba_k(parent, S, Io)
    bias = _rnea_k(parent, S, Io, qd, np.zeros(n), g)
    qdd = np.linalg.solve(M, tau + te - bias - damping * qd)
    out = np.empty_like(y)
    out[:n] = qd
    out[n:2 * n] = qdd
    out[2 * n] = tau @ qd          # actuator work
    out[2 * n + 1] = te @ qd       # external work
    out[2 * n + 2] = (damping * qd) @ qd
    return out


@numba.njit(cache=True)
def _rk4_plant(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g,
               links, offsets, y, tau, wrenches, h):
    k1 = _plant_deriv(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g, links, offsets, y, tau, wrenches)
    k2 = _plant_deriv(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g, links, offsets, y + 0.5 * h * k1, tau, wrenches)
    k3 = _plant_deriv(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g, links, offsets, y + 0.5 * h * k2, tau, wrenches)
    k4 = _plant_deriv(parent, jtype, axis, tree_R, tree_p, mass, com, inertia, damping, g, links, offsets, y + h * k3, tau, wrenches)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------- python API

@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    qd: np.ndarray
    work_actuator: float = 0.0
    work_external: float = 0.0
    dissipated: float = 0.0


@dataclass(frozen=True)
class EnergyReport:
    kinetic: float
    potential: float
    work_actuator: float
    work_external: float
    dissipated: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential


class Plant:
    """Python façade over the compiled kernels for one :class:`PlantModel`."""

    def __init__(self, model: PlantModel):
        self.model = model
        self._a = tuple(np.ascontiguousarray(x) for x in model.arrays())
        self._damping = np.ascontiguousarray(model.damping, dtype=float)
        self._g = np.ascontiguousarray(model.gravity, dtype=float)
        self._links = np.array(model.tcp_link, dtype=np.int64)
        self._offsets = np.ascontiguousarray(model.tcp_offset, dtype=float).reshape(-1, 3)

    @property
    def n(self) -> int:
        return self.model.n

    def M(self, q) -> np.ndarray:
        return mass_matrix(*self._a, np.asarray(q, float))

    def bias(self, q, qd) -> np.ndarray:
        """C(q, qd) qd + G(q)."""
        return rnea(*self._a, np.asarray(q, float), np.asarray(qd, float), np.zeros(self.n), self._g)

    def G(self, q) -> np.ndarray:
        z = np.zeros(self.n)
        return rnea(*self._a, np.asarray(q, float), z, z, self._g)

    def inverse_dynamics(self, q, qd, qdd) -> np.ndarray:
        return rnea(*self._a, np.asarray(q, float), np.asarray(qd, float), np.asarray(qdd, float), self._g)

    def forward_dynamics(self, q, qd, tau) -> np.ndarray:
        return forward_dynamics(*self._a, self._damping, np.asarray(q, float), np.asarray(qd, float),
                                np.asarray(tau, float), self._g)[0]

    def tcp(self, q, which: int):
        """TCP position, rotation and 6 x n Jacobian."""
        a = self._a
        return point_jacobian(a[0], a[1], a[2], a[3], a[4], np.asarray(q, float),
                              self.model.tcp_link[which], self._offsets[which])

    def chain_jacobian(self, q, which: int) -> tuple[np.ndarray, np.ndarray]:
        """TCP position and the 6 x n_chain Jacobian over the chain's joints."""
        x, _, J = self.tcp(q, which)
        return x, J[:, self.model.chains[which]]

    def energy(self, state: PlantState) -> EnergyReport:
        a = self._a
        q = np.asarray(state.q, float)
        qd = np.asarray(state.qd, float)
        ke = 0.5 * qd @ self.M(q) @ qd
        pe = potential_energy(a[0], a[1], a[2], a[3], a[4], a[5], a[6], q, self._g)
        return EnergyReport(float(ke), float(pe), state.work_actuator, state.work_external, state.dissipated)

    def check_conditioning(self, q):
        c = np.linalg.cond(self.M(q))
        if not c <= MAX_COND:
            raise PlantConditioningError(f"mass matrix condition number {c:.3g} exceeds {MAX_COND:.0e}")

    def step(self, state: PlantState, tau, wrenches=None, dt: float = 1e-3) -> PlantState:
        """Advance one RK4 step with torques and TCP wrenches held constant."""
        if not 0 < dt <= 1e-3 + 1e-15:
            raise ValidationError(f"plant step needs 0 < dt <= 1 ms, got {dt}")
        n = self.n
        self.check_conditioning(state.q)
        if wrenches is None:
            wrenches = np.zeros((len(self._links), 6))
        y = np.concatenate([state.q, state.qd, [state.work_actuator, state.work_external, state.dissipated]])
        y = _rk4_plant(*self._a, self._damping, self._g, self._links, self._offsets, y,
                       np.asarray(tau, float), np.ascontiguousarray(wrenches, dtype=float).reshape(-1, 6), dt)
        return PlantState(y[:n], y[n:2 * n], float(y[2 * n]), float(y[2 * n + 1]), float(y[2 * n + 2]))


def step_plant(plant: Plant, state: PlantState, tau, wrenches=None, dt: float = 1e-3) -> PlantState:
    return plant.step(state, tau, wrenches, dt)


# ---------------------------------------------------------------- builders

def _box_inertia(m, lx, ly, lz):
    return np.diag([m * (ly ** 2 + lz ** 2), m * (lx ** 2 + lz ** 2), m * (lx ** 2 + ly ** 2)]) / 12.0


class _TreeBuilder:
    def __init__(self):
        self.rows = []

    def add(self, parent, jtype, axis, p, mass, com, inertia, qlim, qdmax, damping, R=None):
        self.rows.append(dict(parent=parent, jtype=jtype, axis=np.asarray(axis, float), p=np.asarray(p, float),
                              R=np.eye(3) if R is None else np.asarray(R, float), mass=float(mass),
                              com=np.asarray(com, float), inertia=np.asarray(inertia, float),
                              qlim=qlim, qdmax=qdmax, damping=damping))
        return len(self.rows) - 1

    def build(self, gravity, tcp_link, tcp_offset, chains, n_torso) -> PlantModel:
        r = self.rows
        return PlantModel(
            parent=np.array([x["parent"] for x in r], dtype=np.int64),
            jtype=np.array([x["jtype"] for x in r], dtype=np.int64),
            axis=np.array([x["axis"] for x in r]),
            tree_R=np.array([x["R"] for x in r]),
            tree_p=np.array([x["p"] for x in r]),
            mass=np.array([x["mass"] for x in r]),
            com=np.array([x["com"] for x in r]),
            inertia=np.array([x["inertia"] for x in r]),
            q_min=np.array([x["qlim"][0] for x in r]),
            q_max=np.array([x["qlim"][1] for x in r]),
            qd_max=np.array([x["qdmax"] for x in r]),
            damping=np.array([x["damping"] for x in r]),
            gravity=np.asarray(gravity, float),
            tcp_link=tuple(tcp_link),
            tcp_offset=np.asarray(tcp_offset, float),
            chains=tuple(np.asarray(c, dtype=np.int64) for c in chains),
            n_torso=n_torso,
        )


SHOULDER_Y = 0.2
SHOULDER_Z = 0.45
UPPER_ARM = 0.3
FOREARM = 0.3
ARM_DAMPING = 0.05


def build_robot(variant: str = "reduced", gravity=GRAVITY, torso_height: float = 0.8) -> PlantModel:
    """Torso (prismatic x, y, z) plus left and right arms.

    ``reduced`` arms are shoulder yaw/pitch + elbow pitch; ``full`` arms add
    upper-arm roll, forearm roll, wrist pitch and wrist yaw (7R).
    """
    if variant not in ("reduced", "full"):
        raise ValidationError(f"unknown plant variant {variant!r}")
    b = _TreeBuilder()
    tiny = 1e-4 * np.eye(3)
    tx = b.add(-1, PRISMATIC, (1, 0, 0), (0, 0, 0), 8.0, (0, 0, 0), tiny, (-1.0, 1.0), 0.5, 0.0)
    ty = b.add(tx, PRISMATIC, (0, 1, 0), (0, 0, 0), 8.0, (0, 0, 0), tiny, (-1.0, 1.0), 0.5, 0.0)
    tz = b.add(ty, PRISMATIC, (0, 0, 1), (0, 0, torso_height), 20.0, (0, 0, 0.25),
               _box_inertia(20.0, 0.3, 0.4, 0.5), (-0.4, 0.4), 0.5, 0.0)
    tcp_links, chains = [], []
    for side in (1.0, -1.0):
        sh = (0.0, side * SHOULDER_Y, SHOULDER_Z)
        lim = (-np.pi, np.pi)
        yaw = b.add(tz, REVOLUTE, (0, 0, 1), sh, 0.5, (0, 0, 0), 1e-3 * np.eye(3), lim, 3.0, ARM_DAMPING)
        pitch = b.add(yaw, REVOLUTE, (0, 1, 0), (0, 0, 0), 2.0, (UPPER_ARM / 2, 0, 0),
                      _box_inertia(2.0, UPPER_ARM, 0.08, 0.08), lim, 3.0, ARM_DAMPING)
        joints = [tx, ty, tz, yaw, pitch]
        last = pitch
        if variant == "full":
            last = b.add(last, REVOLUTE, (1, 0, 0), (0, 0, 0), 0.3, (0, 0, 0), 5e-4 * np.eye(3), lim, 3.0, ARM_DAMPING)
            joints.append(last)
        elbow = b.add(last, REVOLUTE, (0, 1, 0), (UPPER_ARM, 0, 0), 1.5, (FOREARM / 2, 0, 0),
                      _box_inertia(1.5, FOREARM, 0.06, 0.06), (-2.8, 0.1), 3.0, ARM_DAMPING)
        joints.append(elbow)
        last = elbow
        offset = (FOREARM, 0, 0)
        if variant == "full":
            roll = b.add(last, REVOLUTE, (1, 0, 0), (FOREARM * 0.9, 0, 0), 0.2, (0, 0, 0), 2e-4 * np.eye(3), lim, 3.0, ARM_DAMPING)
            wp = b.add(roll, REVOLUTE, (0, 1, 0), (0, 0, 0), 0.2, (0, 0, 0), 2e-4 * np.eye(3), lim, 3.0, ARM_DAMPING)
            wy = b.add(wp, REVOLUTE, (0, 0, 1), (0, 0, 0), 0.3, (0.03, 0, 0), 3e-4 * np.eye(3), lim, 3.0, ARM_DAMPING)
            joints += [roll, wp, wy]
            last = wy
            offset = (FOREARM * 0.1, 0, 0)
        tcp_links.append(last)
        chains.append(joints)
    return b.build(gravity, tcp_links, [offset, offset], chains, n_torso=3)


def build_pendulum(length: float = 0.5, mass: float = 1.0, gravity=GRAVITY, damping: float = 0.0) -> PlantModel:
    """Single revolute link swinging about the world y axis."""
    b = _TreeBuilder()
    b.add(-1, REVOLUTE, (0, 1, 0), (0, 0, 0), mass, (length, 0, 0),
          _box_inertia(mass, 0.02, 0.02, 0.02), (-np.inf, np.inf), np.inf, damping)
    return b.build(gravity, [0], [(length, 0, 0)], [[0]], n_torso=0)


def home_configuration(model: PlantModel) -> np.ndarray:
    """Elbow-bent posture with both hands in front of the torso."""
    q = np.zeros(model.n)
    for c in model.chains:
        arm = c[model.n_torso:]
        q[arm[1]] = 0.9     # shoulder pitch: upper arm down-forward
        q[arm[-1 if len(arm) == 3 else 3]] = -1.2   # elbow
    return q
