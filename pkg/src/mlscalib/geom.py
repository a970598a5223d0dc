"""Rotations, rigid transforms and INS trajectory interpolation.

Angles cross the API in degrees; everything internal is radians. Euler
triples are always ordered (yaw, pitch, roll) and compose intrinsically as
Z, then Y, then X, i.e. ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.

Trajectory orientations are body-to-world: ``world = R_N(t) @ body``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation as _SciRot
from scipy.spatial.transform import Slerp


class OutOfSpanError(ValueError):
    """Raised when a time lies outside a trajectory's span (no extrapolation)."""


def _rz(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rx(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True, eq=False)
class Rotation3:
    """A proper rotation stored as a 3x3 matrix."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise ValueError("rotation matrix must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> Rotation3:
        return cls(np.eye(3))

    @classmethod
    def from_euler(cls, yaw: float, pitch: float, roll: float) -> Rotation3:
        angles = np.array([yaw, pitch, roll], dtype=float)
        if not np.all(np.isfinite(angles)):
            raise ValueError(f"Euler angles must be finite, got {angles.tolist()}")
        y, p, r = np.radians(angles)
        return cls(_rz(y) @ _ry(p) @ _rx(r))

    @classmethod
    def from_quat(cls, w: float, x: float, y: float, z: float) -> Rotation3:
        q = np.array([x, y, z, w], dtype=float)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must be finite and non-zero")
        return cls(_SciRot.from_quat(q / n).as_matrix())

    def as_euler(self) -> tuple[float, float, float]:
        """(yaw, pitch, roll) in degrees; pitch in [-90, 90]."""
        m = self.matrix
        sp = -m[2, 0]
        cp = np.hypot(m[0, 0], m[1, 0])
        pitch = np.arctan2(sp, cp)
        if cp > 1e-12:
            yaw = np.arctan2(m[1, 0], m[0, 0])
            roll = np.arctan2(m[2, 1], m[2, 2])
        else:
            # gimbal lock: fold everything into yaw
            yaw = np.arctan2(-m[0, 1], m[1, 1])
            roll = 0.0
        return tuple(float(v) for v in np.degrees([yaw, pitch, roll]))

    def as_quat(self) -> tuple[float, float, float, float]:
        """Unit quaternion (w, x, y, z) with w >= 0."""
        x, y, z, w = _SciRot.from_matrix(self.matrix).as_quat()
        if w < 0:
            w, x, y, z = -w, -x, -y, -z
        return float(w), float(x), float(y), float(z)

    def inverse(self) -> Rotation3:
        return Rotation3(self.matrix.T)

    def apply(self, v) -> np.ndarray:
        """Rotate a vector (3,) or a stack of vectors (n, 3)."""
        v = np.asarray(v, dtype=float)
        return v @ self.matrix.T

    def __matmul__(self, other: Rotation3) -> Rotation3:
        return compose(self, other)

    def angle_to(self, other: Rotation3) -> float:
        """Angular distance in degrees."""
        rel = self.matrix.T @ other.matrix
        c = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
        # arccos is ill-conditioned near 0; use the skew part there
        s = np.linalg.norm([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]]) / 2.0
        return float(np.degrees(np.arctan2(s, c)))

    def __repr__(self):
        y, p, r = self.as_euler()
        return f"Rotation3(yaw={y:.6g}, pitch={p:.6g}, roll={r:.6g})"


def rotation_from_euler(yaw: float, pitch: float, roll: float) -> Rotation3:
    return Rotation3.from_euler(yaw, pitch, roll)


def compose(outer: Rotation3, inner: Rotation3) -> Rotation3:
    """``outer ∘ inner``: apply ``inner`` first."""
    return Rotation3(outer.matrix @ inner.matrix)


def apply(rot: Rotation3, v) -> np.ndarray:
    return rot.apply(v)


def inverse(rot: Rotation3) -> Rotation3:
    return rot.inverse()


def chord_displacement(angle_deg: float, distance: float = 100.0) -> float:
    """Displacement of a point at ``distance`` rotated by ``angle_deg``."""
    return float(2.0 * distance * np.sin(np.radians(abs(angle_deg)) / 2.0))


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    position: np.ndarray
    orientation: Rotation3


class Trajectory:
    """Timestamped INS poses with lerp/slerp interpolation inside the span.

    Parameters
    ----------
    t : (n,) strictly increasing seconds, n >= 2
    positions : (n, 3) world-frame meters
    quats : (n, 4) body-to-world unit quaternions, scalar first (w, x, y, z)
    """

    def __init__(self, t, positions, quats):
        t = np.asarray(t, dtype=float)
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        quats = np.asarray(quats, dtype=float).reshape(-1, 4)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("trajectory needs at least 2 samples")
        if len(positions) != len(t) or len(quats) != len(t):
            raise ValueError("t, positions and quats must have equal length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(positions)) and np.all(np.isfinite(quats))):
            raise ValueError("trajectory contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        norms = np.linalg.norm(quats, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero quaternion in trajectory")
        quats = quats / norms[:, None]
        self.t = t
        self.positions = positions
        self.quats = quats
        self._rot = _SciRot.from_quat(quats[:, [1, 2, 3, 0]])
        self._slerp = Slerp(t, self._rot)
        self._matrices = self._rot.as_matrix()
        for a in (self.t, self.positions, self.quats, self._matrices):
            a.setflags(write=False)

    @classmethod
    def from_samples(cls, samples: Sequence[TrajectorySample]) -> Trajectory:
        return cls(
            [s.t for s in samples],
            [s.position for s in samples],
            [s.orientation.as_quat() for s in samples],
        )

    @classmethod
    def from_matrices(cls, t, positions, matrices) -> Trajectory:
        xyzw = _SciRot.from_matrix(np.asarray(matrices, dtype=float)).as_quat()
        return cls(t, positions, xyzw[:, [3, 0, 1, 2]])

    def __len__(self):
        return len(self.t)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def sample(self, i: int) -> TrajectorySample:
        return TrajectorySample(float(self.t[i]), self.positions[i].copy(), Rotation3(self._matrices[i]))

    @property
    def samples(self) -> list[TrajectorySample]:
        return [self.sample(i) for i in range(len(self))]

    def covers(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        return (ts >= self.t[0]) & (ts <= self.t[-1])

    def interpolate(self, t: float) -> TrajectorySample:
        if not (self.t[0] <= t <= self.t[-1]):
            raise OutOfSpanError(f"t={t!r} outside trajectory span [{self.t[0]!r}, {self.t[-1]!r}]")
        pos, mat = self.poses(np.array([t], dtype=float))
        return TrajectorySample(float(t), pos[0], Rotation3(mat[0]))

    def poses(self, ts) -> tuple[np.ndarray, np.ndarray]:
        """Batch interpolation: positions (n, 3) and body-to-world matrices (n, 3, 3).

        Times exactly on a sample return that sample unchanged.
        """
        ts = np.asarray(ts, dtype=float).ravel()
        if ts.size == 0:
            return np.empty((0, 3)), np.empty((0, 3, 3))
        if ts.min() < self.t[0] or ts.max() > self.t[-1]:
            raise OutOfSpanError(
                f"times [{ts.min()!r}, {ts.max()!r}] exceed trajectory span [{self.t[0]!r}, {self.t[-1]!r}]"
            )
        pos = np.column_stack([np.interp(ts, self.t, self.positions[:, k]) for k in range(3)])
        mats = self._slerp(ts).as_matrix()
        idx = np.searchsorted(self.t, ts)
        idx = np.minimum(idx, len(self.t) - 1)
        exact = self.t[idx] == ts
        if exact.any():
            pos[exact] = self.positions[idx[exact]]
            mats[exact] = self._matrices[idx[exact]]
        return pos, mats

    def translated(self, offset) -> Trajectory:
        return Trajectory(self.t, self.positions + np.asarray(offset, dtype=float), self.quats)

    def gaps(self, t0: float, t1: float, max_gap: float) -> list[tuple[float, float]]:
        """Sample intervals longer than ``max_gap`` that overlap [t0, t1]."""
        dt = np.diff(self.t)
        out = []
        for i in np.flatnonzero(dt > max_gap):
            a, b = float(self.t[i]), float(self.t[i + 1])
            if b > t0 and a < t1:
                out.append((a, b))
        return out

