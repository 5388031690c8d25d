"""Shared domain types, the demonstration file format and seeding helpers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
CANONICAL_DT = 0.01  # 100 Hz

COLLABORATOR, PARTNER = 0, 1


class ValidationError(ValueError):
    """A value violates a domain invariant."""


class RecordParseError(ValidationError):
    """A demonstration or schedule file could not be parsed.

    ``field`` names the offending header key or channel.
    """

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def rng_for(seed: int, *stream: int | str) -> np.random.Generator:
    """Independent generator for a named sub-stream of ``seed``."""
    key = [int(seed)]
    for s in stream:
        if isinstance(s, str):
            key.append(int.from_bytes(s.encode(), "little"))
        else:
            key.append(int(s))
    return np.random.default_rng(np.random.SeedSequence(key))


def _readonly(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Timebase:
    dt: float
    n: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"dt must be > 0, got {self.dt}")
        if self.n < 2:
            raise ValidationError(f"need >= 2 samples, got n={self.n}")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    @property
    def duration(self) -> float:
        return (self.n - 1) * self.dt


@dataclass(frozen=True)
class ArmPose:
    """Shoulder, elbow and wrist positions in the world frame (m)."""

    shoulder: np.ndarray
    elbow: np.ndarray
    wrist: np.ndarray

    def __post_init__(self):
        for name in ("shoulder", "elbow", "wrist"):
            v = _readonly(getattr(self, name))
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValidationError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, v)
        l1 = self.elbow - self.shoulder
        l2 = self.wrist - self.shoulder
        if np.linalg.norm(l1) == 0 or np.linalg.norm(l2) == 0:
            raise ValidationError("elbow and wrist must differ from shoulder")
        if np.linalg.norm(np.cross(l2, l1)) <= 1e-9:
            raise ValidationError("degenerate arm configuration: shoulder, elbow, wrist collinear")

    def as_array(self) -> np.ndarray:
        return np.stack([self.shoulder, self.elbow, self.wrist])

    @classmethod
    def from_array(cls, a) -> "ArmPose":
        a = np.asarray(a, dtype=float)
        return cls(a[0], a[1], a[2])


@dataclass(frozen=True)
class SubjectParams:
    """Personal endpoint-stiffness parameters.

    ``b1`` is in N/m per unit co-contraction, ``b2`` in N/m; ``a1`` and ``a2``
    are shape factors; ``delta`` scales the damping law ``D = delta * sqrt(K)``.
    """

    a1: float
    a2: float
    b1: float
    b2: float
    delta: float = 2.0

    def __post_init__(self):
        for name in ("a1", "a2", "b1", "b2", "delta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(f"SubjectParams.{name} must be > 0, got {v}")

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("a1", "a2", "b1", "b2", "delta")}


# Calibrated values for the five demonstrators.
TABLE_I = {
    "S1": SubjectParams(0.272, 1.314, 3847.141, 151.684),
    "S2": SubjectParams(0.107, 2.200, 2678.765, 149.597),
    "S3": SubjectParams(0.399, 2.926, 1819.695, 128.581),
    "S4": SubjectParams(0.341, 4.073, 2699.123, 112.562),
    "S5": SubjectParams(0.167, 4.528, 1260.290, 94.951),
}


@dataclass(frozen=True)
class TaskFrame:
    """Affine task frame ``(A, b)``; points map to the frame as ``A^-1 (x - b)``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = _readonly(self.A)
        b = _readonly(self.b)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape != (A.shape[0],):
            raise ValidationError(f"frame shapes mismatch: A{A.shape}, b{b.shape}")
        if abs(np.linalg.det(A)) <= 1e-12:
            raise ValidationError("frame matrix A is singular")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "TaskFrame":
        return cls(np.eye(dim), np.zeros(dim))


def canonical_quaternion(q) -> np.ndarray:
    """Normalize (w, x, y, z) quaternions and flip to the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    sign = np.where(q[..., :1] < 0, -1.0, 1.0)
    return q * sign


@dataclass(frozen=True)
class DemonstrationRecord:
    """One synchronized human-human demonstration on a single timebase.

    Shapes: ``tcp_pose`` and ``partner_tcp_pose`` (n, 7) as position plus
    (w, x, y, z) quaternion; ``arm_pose`` (n, 2, 3, 3) indexed
    [sample, who, shoulder/elbow/wrist, xyz] with who 0 the collaborator and
    1 the partner; ``activation_bb``/``activation_tb`` (n, 2); ``f_ext``
    (n, 3), the external force on the collaborator's hand.
    """

    timebase: Timebase
    tcp_pose: np.ndarray
    partner_tcp_pose: np.ndarray
    arm_pose: np.ndarray
    activation_bb: np.ndarray
    activation_tb: np.ndarray
    f_ext: np.ndarray
    task: str = "transport"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = self.timebase.n
        shapes = {
            "tcp_pose": (n, 7),
            "partner_tcp_pose": (n, 7),
            "arm_pose": (n, 2, 3, 3),
            "activation_bb": (n, 2),
            "activation_tb": (n, 2),
            "f_ext": (n, 3),
        }
        for name, shape in shapes.items():
            a = _readonly(getattr(self, name))
            if a.shape != shape:
                raise ValidationError(f"{name}: expected shape {shape}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{name}: non-finite values")
            object.__setattr__(self, name, a)
        for name in ("tcp_pose", "partner_tcp_pose"):
            qn = np.linalg.norm(getattr(self, name)[:, 3:], axis=1)
            if np.max(np.abs(qn - 1.0)) > 1e-6:
                raise ValidationError(f"{name}: quaternion not unit-norm within 1e-6")
        for name in ("activation_bb", "activation_tb"):
            a = getattr(self, name)
            if np.any(a < 0) or np.any(a > 1):
                raise ValidationError(f"{name}: activation out of [0,1]")

    @property
    def n(self) -> int:
        return self.timebase.n

    def cocontraction(self, who: int = COLLABORATOR) -> np.ndarray:
        return 0.5 * (self.activation_bb[:, who] + self.activation_tb[:, who])

    def arm_poses(self, who: int = COLLABORATOR) -> list[ArmPose]:
        return [ArmPose.from_array(a) for a in self.arm_pose[:, who]]


def resample(channel, from_rate: float, to: Timebase, t0: float = 0.0) -> np.ndarray:
    """Linearly interpolate a uniformly sampled channel onto ``to``.

    ``channel`` is (m,) or (m, k); sample i sits at ``t0 + i / from_rate``.
    The target grid starts at ``t0`` as well.
    """
    if not from_rate > 0:
        raise ValidationError(f"from_rate must be > 0, got {from_rate}")
    x = np.asarray(channel, dtype=float)
    if x.size == 0 or x.shape[0] == 0:
        raise ValidationError("empty channel")
    src_t = t0 + np.arange(x.shape[0]) / from_rate
    dst_t = t0 + to.times
    span = src_t[-1] - src_t[0]
    if to.duration > span + 1e-9 * max(1.0, span):
        raise ValidationError(
            f"target window {to.duration:g} s exceeds source span {span:g} s")
    dst_t = np.minimum(dst_t, src_t[-1])
    if x.ndim == 1:
        return np.interp(dst_t, src_t, x)
    flat = x.reshape(x.shape[0], -1)
    out = np.column_stack([np.interp(dst_t, src_t, flat[:, j]) for j in range(flat.shape[1])])
    return out.reshape((to.n,) + x.shape[1:])


# ---------------------------------------------------------------- file format

_RECORD_CHANNELS = [
    # name, per-sample shape, unit
    ("tcp_pose", (7,), "m|quat"),
    ("partner_tcp_pose", (7,), "m|quat"),
    ("arm_pose", (2, 3, 3), "m"),
    ("activation_bb", (2,), "1"),
    ("activation_tb", (2,), "1"),
    ("f_ext", (3,), "N"),
]

_MAGIC = "imprsl-demonstration"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_columnar(path, header: dict, columns: list[str], data: np.ndarray) -> None:
    """Write a ``#``-prefixed JSON header followed by a CSV payload."""
    lines = ["# " + line for line in json.dumps(header, indent=1, sort_keys=True).splitlines()]
    lines.append(",".join(columns))
    for row in np.asarray(data, dtype=float):
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_columnar(path) -> tuple[dict, list[str], np.ndarray]:
    text = Path(path).read_text()
    head, body = [], []
    for line in text.splitlines():
        (head if line.startswith("#") else body).append(line)
    try:
        header = json.loads("\n".join(h[1:] for h in head))
    except json.JSONDecodeError as exc:
        raise RecordParseError("header", f"invalid JSON header ({exc.msg})") from None
    if not body:
        raise RecordParseError("columns", "missing column line")
    columns = body[0].split(",")
    rows = []
    for i, line in enumerate(body[1:]):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(columns):
            raise RecordParseError(f"row {i}", f"expected {len(columns)} values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise RecordParseError(f"row {i}", "non-numeric value") from None
    data = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    return header, columns, data


def _column_names(name: str, shape: tuple) -> list[str]:
    idx = np.ndindex(*shape)
    return [name + "[" + "][".join(str(i) for i in ix) + "]" for ix in idx]


def save_record(record: DemonstrationRecord, path) -> None:
    columns, blocks, channels = [], [], []
    for name, shape, unit in _RECORD_CHANNELS:
        columns += _column_names(name, shape)
        blocks.append(getattr(record, name).reshape(record.n, -1))
        channels.append({"name": name, "shape": list(shape), "unit": unit})
    header = {
        "magic": _MAGIC,
        "format_version": FORMAT_VERSION,
        "dt": record.timebase.dt,
        "n": record.n,
        "task": record.task,
        "channels": channels,
        "meta": record.meta,
    }
    write_columnar(path, header, columns, np.hstack(blocks))


def load_record(path) -> DemonstrationRecord:
    header, columns, data = read_columnar(path)
    if header.get("magic") != _MAGIC:
        raise RecordParseError("magic", "not a demonstration record")
    if header.get("format_version") != FORMAT_VERSION:
        raise RecordParseError("format_version", f"unsupported {header.get('format_version')!r}")
    for key in ("dt", "n"):
        if key not in header:
            raise RecordParseError(key, "missing header field")
    n = header["n"]
    if not isinstance(n, int) or n < 2:
        raise RecordParseError("n", "need ≥ 2 samples")
    if data.shape[0] != n:
        raise RecordParseError("n", f"header says {n} samples, payload has {data.shape[0]}")
    try:
        tb = Timebase(float(header["dt"]), n)
    except ValidationError as exc:
        raise RecordParseError("dt", str(exc)) from None
    fields, col = {}, 0
    for name, shape, _unit in _RECORD_CHANNELS:
        names = _column_names(name, shape)
        if columns[col:col + len(names)] != names:
            raise RecordParseError(name, "channel columns missing or out of order")
        width = len(names)
        fields[name] = data[:, col:col + width].reshape((n,) + shape)
        col += width
    try:
        return DemonstrationRecord(timebase=tb, task=header.get("task", ""),
                                   meta=header.get("meta", {}), **fields)
    except ValidationError as exc:
        msg = str(exc)
        raise RecordParseError(msg.split(":")[0], msg) from None


@dataclass(frozen=True)
class ImpedanceSchedule:
    """Reference pose plus stiffness/damping commanded at each step.

    ``x_d`` (n, 7) position + (w, x, y, z) quaternion; ``K`` and ``D``
    (n, 3, 3) SPD, N/m and N s/m.
    """

    timebase: Timebase
    x_d: np.ndarray
    K: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        n = self.timebase.n
        for name, shape in (("x_d", (n, 7)), ("K", (n, 3, 3)), ("D", (n, 3, 3))):
            a = _readonly(getattr(self, name))
            if a.shape != shape:
                raise ValidationError(f"{name}: expected shape {shape}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{name}: non-finite values")
            object.__setattr__(self, name, a)
        for name in ("K", "D"):
            m = getattr(self, name)
            if np.max(np.abs(m - np.swapaxes(m, 1, 2))) > 1e-8 * max(1.0, np.max(np.abs(m))):
                raise ValidationError(f"{name}: not symmetric")
            if np.linalg.eigvalsh(m).min() <= 0:
                raise ValidationError(f"{name}: not positive definite at every step")

    @property
    def n(self) -> int:
        return self.timebase.n

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Zero-order hold lookup of (x_d, K, D) at time ``t``."""
        k = int(np.clip(np.floor(t / self.timebase.dt + 1e-9), 0, self.n - 1))
        return self.x_d[k], self.K[k], self.D[k]

    @classmethod
    def constant(cls, x_d, K, D, timebase: Timebase) -> "ImpedanceSchedule":
        n = timebase.n
        x = np.broadcast_to(np.asarray(x_d, dtype=float), (n, 7))
        return cls(timebase, x, np.broadcast_to(K, (n, 3, 3)), np.broadcast_to(D, (n, 3, 3)))


_SCHEDULE_MAGIC = "imprsl-schedule"


def save_schedule(schedule: ImpedanceSchedule, path) -> None:
    columns = (_column_names("x_d", (7,)) + _column_names("K", (3, 3)) + _column_names("D", (3, 3)))
    data = np.hstack([schedule.x_d, schedule.K.reshape(schedule.n, 9), schedule.D.reshape(schedule.n, 9)])
    header = {
        "magic": _SCHEDULE_MAGIC,
        "format_version": FORMAT_VERSION,
        "dt": schedule.timebase.dt,
        "n": schedule.n,
        "channels": [{"name": "x_d", "shape": [7], "unit": "m|quat"},
                     {"name": "K", "shape": [3, 3], "unit": "N/m"},
                     {"name": "D", "shape": [3, 3], "unit": "N*s/m"}],
    }
    write_columnar(path, header, columns, data)


def load_schedule(path) -> ImpedanceSchedule:
    header, columns, data = read_columnar(path)
    if header.get("magic") != _SCHEDULE_MAGIC:
        raise RecordParseError("magic", "not an impedance schedule")
    if header.get("format_version") != FORMAT_VERSION:
        raise RecordParseError("format_version", f"unsupported {header.get('format_version')!r}")
    n = header.get("n")
    if not isinstance(n, int) or n < 2 or data.shape != (n, 25):
        raise RecordParseError("n", "sample count does not match payload")
    return ImpedanceSchedule(Timebase(float(header["dt"]), n), data[:, :7],
                             data[:, 7:16].reshape(n, 3, 3), data[:, 16:].reshape(n, 3, 3))
