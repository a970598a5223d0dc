"""Direct georeferencing of raw LiDAR returns against an INS trajectory.

A return measured at time t in the sensor frame lands in the world at::

    p_L(t) = p_N(t) + R_N(t) @ (R_LiDAR @ R_C @ r_L(t) + d_LiDAR)

With ``R_C`` left at identity this is plain direct georeferencing; there is
only one code path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geom import OutOfSpanError, Rotation3, Trajectory
from .scatter import GeoPointCloud

logger = logging.getLogger(__name__)

SCAN_RATE_HZ = 10.0
MAX_LEVER_ARM = 10.0
DEFAULT_MAX_RANGE = 120.0


@dataclass(frozen=True)
class RawReturn:
    t: float
    beam_id: int
    direction: np.ndarray
    range: float
    intensity: float | None = None

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("return direction must be a unit vector")
        if not (self.range > 0):
            raise ValueError("range must be positive")
        object.__setattr__(self, "direction", d)

    @property
    def point(self) -> np.ndarray:
        """r_L(t), the measured point in the sensor frame."""
        return self.range * self.direction


class ReturnStream:
    """Column-oriented, time-ordered batch of raw returns.

    This is the working representation everywhere a stream has more than a
    handful of returns; :class:`RawReturn` is the row view.
    """

    def __init__(self, t, beam_id, direction, range_, intensity=None, max_range: float | None = None):
        self.t = np.ascontiguousarray(t, dtype=float).ravel()
        n = len(self.t)
        self.beam_id = np.ascontiguousarray(beam_id, dtype=np.int64).ravel()
        self.direction = np.ascontiguousarray(direction, dtype=float).reshape(n, 3)
        self.range = np.ascontiguousarray(range_, dtype=float).ravel()
        self.intensity = None if intensity is None else np.ascontiguousarray(intensity, dtype=float).ravel()
        if len(self.beam_id) != n or len(self.range) != n or (self.intensity is not None and len(self.intensity) != n):
            raise ValueError("return columns have mismatched lengths")
        if n:
            if np.any(self.range <= 0):
                raise ValueError("ranges must be positive")
            if max_range is not None and np.any(self.range > max_range):
                raise ValueError(f"range exceeds declared max range {max_range}")
            if np.any(np.abs(np.linalg.norm(self.direction, axis=1) - 1.0) > 1e-9):
                raise ValueError("return directions must be unit vectors")

    @classmethod
    def empty(cls) -> ReturnStream:
        return cls(np.empty(0), np.empty(0, dtype=np.int64), np.empty((0, 3)), np.empty(0))

    @classmethod
    def from_returns(cls, returns) -> ReturnStream:
        returns = list(returns)
        if not returns:
            return cls.empty()
        inten = [r.intensity for r in returns]
        return cls(
            [r.t for r in returns],
            [r.beam_id for r in returns],
            [r.direction for r in returns],
            [r.range for r in returns],
            None if any(i is None for i in inten) else inten,
        )

    @classmethod
    def concat(cls, parts) -> ReturnStream:
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        inten = None
        if all(p.intensity is not None for p in parts):
            inten = np.concatenate([p.intensity for p in parts])
        return cls(
            np.concatenate([p.t for p in parts]),
            np.concatenate([p.beam_id for p in parts]),
            np.concatenate([p.direction for p in parts]),
            np.concatenate([p.range for p in parts]),
            inten,
        )

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> RawReturn:
        return RawReturn(
            float(self.t[i]),
            int(self.beam_id[i]),
            self.direction[i].copy(),
            float(self.range[i]),
            None if self.intensity is None else float(self.intensity[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def take(self, idx) -> ReturnStream:
        return ReturnStream(
            self.t[idx],
            self.beam_id[idx],
            self.direction[idx],
            self.range[idx],
            None if self.intensity is None else self.intensity[idx],
        )

    def thin(self, stride: int) -> ReturnStream:
        if stride < 1:
            raise ValueError("stride must be >= 1")
        return self if stride == 1 else self.take(slice(None, None, stride))

    def scaled(self, factor: float) -> ReturnStream:
        return ReturnStream(self.t, self.beam_id, self.direction, self.range * factor, self.intensity)

    @property
    def points(self) -> np.ndarray:
        """r_L for every return, (n, 3)."""
        return self.direction * self.range[:, None]

    @property
    def time_ordered(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))


@dataclass(frozen=True)
class MountConfig:
    """Lever arm (INS frame, meters), nominal boresight and boresight correction."""

    lever_arm: np.ndarray = field(default_factory=lambda: np.zeros(3))
    boresight: Rotation3 = field(default_factory=Rotation3.identity)
    correction: Rotation3 = field(default_factory=Rotation3.identity)

    def __post_init__(self):
        d = np.asarray(self.lever_arm, dtype=float).reshape(3)
        if not np.all(np.isfinite(d)):
            raise ValueError("lever arm must be finite")
        if np.linalg.norm(d) >= MAX_LEVER_ARM:
            raise ValueError(f"lever arm {d.tolist()} is implausibly long (>= {MAX_LEVER_ARM} m)")
        object.__setattr__(self, "lever_arm", d)

    def with_correction(self, correction: Rotation3) -> MountConfig:
        return MountConfig(self.lever_arm, self.boresight, correction)

    @property
    def sensor_to_ins(self) -> np.ndarray:
        return self.boresight.matrix @ self.correction.matrix


@dataclass(frozen=True)
class GeoPoint:
    position: np.ndarray
    t: float
    beam_id: int
    scan_index: int


@dataclass
class GeorefStats:
    total: int
    dropped: int

    @property
    def kept(self) -> int:
        return self.total - self.dropped


def scan_index(t, t0: float, rate: float = SCAN_RATE_HZ):
    """Index of the 1/rate-second scan containing t, boundaries half-open."""
    return np.floor((np.asarray(t, dtype=float) - t0) * rate).astype(np.int64)


def _chain(pos, mats, points, sensor_to_ins, lever_arm) -> np.ndarray:
    body = points @ sensor_to_ins.T + lever_arm
    return pos + np.einsum("nij,nj->ni", mats, body)


def georeference_return(ret: RawReturn, traj: Trajectory, mount: MountConfig, t0: float = 0.0) -> GeoPoint:
    """World position of one return. Raises OutOfSpanError when t is not covered."""
    if not (traj.t[0] <= ret.t <= traj.t[-1]):
        raise OutOfSpanError(f"return at t={ret.t!r} outside trajectory span")
    pos, mats = traj.poses([ret.t])
    p = _chain(pos, mats, ret.point[None, :], mount.sensor_to_ins, mount.lever_arm)[0]
    return GeoPoint(p, ret.t, ret.beam_id, int(scan_index(ret.t, t0)))


class PosedReturns:
    """Returns with their interpolated INS poses cached.

    The poses do not depend on the boresight correction, so calibration
    looks them up once and re-runs only the rotation chain per candidate.
    """

    def __init__(self, returns: ReturnStream, traj: Trajectory, t0: float = 0.0):
        keep = traj.covers(returns.t)
        self.stats = GeorefStats(len(returns), int(len(returns) - keep.sum()))
        if self.stats.dropped:
            logger.info("dropped %d of %d returns outside trajectory span", self.stats.dropped, len(returns))
        self.returns = returns if keep.all() else returns.take(keep)
        self.points = self.returns.points
        self.positions, self.matrices = traj.poses(self.returns.t)
        self.t0 = t0

    def __len__(self):
        return len(self.returns)

    def georeference(self, mount: MountConfig, correction: Rotation3 | None = None) -> np.ndarray:
        m = mount.sensor_to_ins if correction is None else mount.boresight.matrix @ correction.matrix
        return _chain(self.positions, self.matrices, self.points, m, mount.lever_arm)

    def cloud(self, mount: MountConfig, correction: Rotation3 | None = None) -> GeoPointCloud:
        return GeoPointCloud(
            self.georeference(mount, correction),
            t=self.returns.t,
            beam_id=self.returns.beam_id,
            scan_index=scan_index(self.returns.t, self.t0),
            intensity=self.returns.intensity,
        )


def georeference_stream(
    returns: ReturnStream,
    traj: Trajectory,
    mount: MountConfig,
    t0: float = 0.0,
    chunk: int = 1_000_000,
) -> tuple[GeoPointCloud, GeorefStats]:
    """Georeference every in-span return, preserving order.

    Out-of-span returns are dropped and counted, never extrapolated.
    """
    if not isinstance(returns, ReturnStream):
        returns = ReturnStream.from_returns(returns)
    if len(returns) == 0:
        return GeoPointCloud(np.empty((0, 3))), GeorefStats(0, 0)
    clouds, dropped = [], 0
    for start in range(0, len(returns), chunk):
        posed = PosedReturns(returns.take(slice(start, start + chunk)), traj, t0)
        dropped += posed.stats.dropped
        clouds.append(posed.cloud(mount))
    return GeoPointCloud.concat(clouds), GeorefStats(len(returns), dropped)


@dataclass
class RawScan:
    index: int
    t_start: float
    duration: float
    returns: ReturnStream

    @property
    def interval(self) -> tuple[float, float]:
        return self.t_start, self.t_start + self.duration


def split_scans(returns: ReturnStream, t0: float = 0.0, rate: float = SCAN_RATE_HZ) -> list[RawScan]:
    """Partition a time-ordered stream into 1/rate-second scans aligned to t0.

    Scan k holds returns with floor((t - t0) * rate) == k; empty scans are
    omitted.
    """
    if not isinstance(returns, ReturnStream):
        returns = ReturnStream.from_returns(returns)
    if len(returns) == 0:
        return []
    if not returns.time_ordered:
        raise ValueError("returns must be time-ordered")
    idx = scan_index(returns.t, t0, rate)
    bounds = np.flatnonzero(np.diff(idx)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [len(idx)]])
    return [
        RawScan(int(idx[a]), t0 + int(idx[a]) / rate, 1.0 / rate, returns.take(slice(a, b)))
        for a, b in zip(starts, stops)
    ]
