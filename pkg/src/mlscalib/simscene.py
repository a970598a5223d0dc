"""Synthetic planar scenes and a spinning multi-beam scanner with known truth.

The simulator ray-casts every firing of a rotating scanner carried along a
scripted vehicle trajectory and emits raw sensor-frame returns. A boresight
error E can be injected: the physical sensor is mounted exactly as
``true_mount`` says, but emitted directions are rotated by E^-1, so a
consumer georeferencing with the nominal boresight needs the correction
R_C = E to get the scene back. The ground-truth record stores E's Euler
triple as the correction to recover.

The street-canyon scene is a stand-in for a real urban calibration site;
its dimensions are made up for the purpose, not measured.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .geom import Rotation3, Trajectory
from .georef import MountConfig, ReturnStream

logger = logging.getLogger(__name__)

TRAJECTORY_RATE_HZ = 200.0


@dataclass(frozen=True)
class ScannerModel:
    """Beam table and spin parameters of a rotating multi-beam LiDAR."""

    elevations: tuple[float, ...]  # degrees, one per beam
    azimuth_offsets: tuple[float, ...]  # degrees, one per beam
    rotation_rate: float = 10.0  # Hz
    azimuth_step: float = 0.18  # degrees between firings
    max_range: float = 120.0  # m
    range_noise: float = 0.0  # m, Gaussian sigma

    def __post_init__(self):
        if len(self.elevations) == 0 or len(self.elevations) != len(self.azimuth_offsets):
            raise ValueError("beam table needs matching, non-empty elevation and azimuth lists")
        if not all(-90.0 <= e <= 90.0 for e in self.elevations):
            raise ValueError("beam elevations must lie in [-90, 90] degrees")
        if self.rotation_rate <= 0 or self.azimuth_step <= 0 or self.max_range <= 0:
            raise ValueError("rotation rate, azimuth step and max range must be positive")
        if self.range_noise < 0:
            raise ValueError("range noise must be non-negative")

    @property
    def n_beams(self) -> int:
        return len(self.elevations)

    @property
    def steps_per_revolution(self) -> int:
        return int(round(360.0 / self.azimuth_step))

    @property
    def firing_rate(self) -> float:
        """Azimuth firings per second; every beam fires at each."""
        return self.steps_per_revolution * self.rotation_rate

    @property
    def return_rate(self) -> float:
        """Upper bound on returns per second (every firing of every beam hits)."""
        return self.firing_rate * self.n_beams

    @property
    def vertical_fov(self) -> float:
        return max(self.elevations) - min(self.elevations)

    def beam_directions(self, azimuth_deg: np.ndarray) -> np.ndarray:
        """Sensor-frame unit vectors, shape (len(azimuth), n_beams, 3)."""
        el = np.radians(np.asarray(self.elevations))
        az = np.radians(np.asarray(azimuth_deg, dtype=float)[:, None] + np.asarray(self.azimuth_offsets)[None, :])
        ce = np.cos(el)[None, :]
        return np.stack([ce * np.cos(az), ce * np.sin(az), np.broadcast_to(np.sin(el), az.shape)], axis=-1)


def default_scanner(range_noise: float = 0.0, azimuth_step: float = 0.18) -> ScannerModel:
    """64 beams evenly spread from +2.0 to -24.8 degrees, 10 Hz, 120 m."""
    elevations = tuple(float(e) for e in np.linspace(2.0, -24.8, 64))
    return ScannerModel(
        elevations=elevations,
        azimuth_offsets=(0.0,) * 64,
        rotation_rate=10.0,
        azimuth_step=azimuth_step,
        max_range=120.0,
        range_noise=range_noise,
    )


@dataclass(frozen=True)
class Patch:
    """Finite planar parallelogram ``corner + u*edge1 + v*edge2``, u, v in [0, 1]."""

    id: int
    corner: tuple[float, float, float]
    edge1: tuple[float, float, float]
    edge2: tuple[float, float, float]

    def __post_init__(self):
        n = np.cross(self.edge1, self.edge2)
        if np.linalg.norm(n) <= 1e-12 * np.linalg.norm(self.edge1) * np.linalg.norm(self.edge2):
            raise ValueError(f"patch {self.id}: edge vectors are parallel")

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge1, self.edge2)
        return n / np.linalg.norm(n)

    def dual_basis(self) -> tuple[np.ndarray, np.ndarray]:
        """f1, f2 in the patch plane with f_i . edge_j = delta_ij."""
        e = np.array([self.edge1, self.edge2], dtype=float)
        g = np.linalg.inv(e @ e.T)
        f = g @ e
        return f[0], f[1]

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from points (n, 3) to the patch."""
        c, e1, e2 = (np.asarray(x, dtype=float) for x in (self.corner, self.edge1, self.edge2))
        f1, f2 = self.dual_basis()
        rel = np.asarray(points, dtype=float) - c
        u = np.clip(rel @ f1, 0.0, 1.0)
        v = np.clip(rel @ f2, 0.0, 1.0)
        plane = np.abs(rel @ self.normal)
        inside = (rel @ f1 >= 0) & (rel @ f1 <= 1) & (rel @ f2 >= 0) & (rel @ f2 <= 1)
        # outside the parallelogram fall back to clamped closest point
        closest = c + u[:, None] * e1 + v[:, None] * e2
        return np.where(inside, plane, np.linalg.norm(points - closest, axis=1))


@dataclass(frozen=True)
class SceneModel:
    patches: tuple[Patch, ...] = ()

    def __post_init__(self):
        ids = [p.id for p in self.patches]
        if len(set(ids)) != len(ids):
            raise ValueError("patch ids must be unique")

    def normals(self) -> np.ndarray:
        return np.array([p.normal for p in self.patches]).reshape(-1, 3)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest patch."""
        return np.min(np.stack([p.distance(points) for p in self.patches]), axis=0)


def ray_cast(
    scene: SceneModel, origins: np.ndarray, directions: np.ndarray, max_range: float
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest patch hit along each ray within ``max_range``.

    Returns (range, patch id); misses have range NaN and id -1.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    best = np.full(len(directions), np.inf)
    hit_id = np.full(len(directions), -1, dtype=np.int64)
    for patch in scene.patches:
        n = patch.normal
        f1, f2 = patch.dual_basis()
        c = np.asarray(patch.corner, dtype=float)
        denom = directions @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((c - origins) @ n) / denom
        ok = (denom != 0) & (s > 0) & (s <= max_range) & (s < best)
        if not ok.any():
            continue
        rel = origins[ok] + s[ok, None] * directions[ok] - c
        u, v = rel @ f1, rel @ f2
        inside = (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
        sel = np.flatnonzero(ok)[inside]
        best[sel] = s[sel]
        hit_id[sel] = patch.id
    best[hit_id < 0] = np.nan
    return best, hit_id


@dataclass(frozen=True)
class ManeuverScript:
    """Waypoints (t, x, y, z, yaw_deg) joined by cubic splines; pitch and roll zero."""

    waypoints: tuple[tuple[float, float, float, float, float], ...]
    name: str = "custom"

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=float)
        if w.ndim != 2 or w.shape[1] != 5 or len(w) < 2:
            raise ValueError("need at least two (t, x, y, z, yaw) waypoints")
        if np.any(np.diff(w[:, 0]) <= 0):
            raise ValueError("waypoint times must be strictly increasing")

    @property
    def duration(self) -> float:
        return self.waypoints[-1][0] - self.waypoints[0][0]

    def trajectory(self, rate: float = TRAJECTORY_RATE_HZ) -> Trajectory:
        w = np.asarray(self.waypoints, dtype=float)
        t0, t1 = w[0, 0], w[-1, 0]
        n = int(round((t1 - t0) * rate)) + 1
        t = t0 + np.arange(n) / rate
        t[-1] = t1
        pos = CubicSpline(w[:, 0], w[:, 1:4], axis=0)(t)
        yaw = np.radians(CubicSpline(w[:, 0], np.degrees(np.unwrap(np.radians(w[:, 4]))))(t))
        quats = np.column_stack([np.cos(yaw / 2), np.zeros(n), np.zeros(n), np.sin(yaw / 2)])
        return Trajectory(t, pos, quats)

    def max_speed(self, rate: float = TRAJECTORY_RATE_HZ) -> float:
        traj = self.trajectory(rate)
        return float(np.max(np.linalg.norm(np.diff(traj.positions, axis=0), axis=1) * rate))


def _check_builtin(script: ManeuverScript) -> ManeuverScript:
    if script.duration > 60.0:
        raise ValueError("built-in maneuvers last at most 60 s")
    if script.max_speed() > 15.0:
        raise ValueError("built-in maneuvers are limited to 15 m/s")
    return script


def _path_script(name, duration, dt, xy_fn, height) -> ManeuverScript:
    t = np.arange(0.0, duration + dt / 2, dt)
    t[-1] = duration
    x, y = xy_fn(t)
    h = 1e-4
    xa, ya = xy_fn(t - h)
    xb, yb = xy_fn(t + h)
    yaw = np.degrees(np.unwrap(np.arctan2(yb - ya, xb - xa)))
    wps = tuple((float(a), float(b), float(c), float(height), float(d)) for a, b, c, d in zip(t, x, y, yaw))
    return _check_builtin(ManeuverScript(wps, name))


def straight_line(duration: float = 20.0, speed: float = 5.0, height: float = 1.0) -> ManeuverScript:
    return _path_script("straight", duration, 0.5, lambda t: (speed * t, 0.0 * t), height)


def zigzag(
    duration: float = 20.0, speed: float = 5.0, amplitude: float = 3.0, period: float = 5.0, height: float = 1.0
) -> ManeuverScript:
    """Forward drive along +x weaving sinusoidally across the street."""
    return _path_script(
        "zigzag", duration, 0.25, lambda t: (speed * t, amplitude * np.sin(2 * np.pi * t / period)), height
    )


def closed_loop(duration: float = 40.0, radius: float = 25.0, height: float = 1.0) -> ManeuverScript:
    """One lap counter-clockwise around a circular block centred on the origin."""
    w = 2 * np.pi / duration
    return _path_script(
        "loop", duration, 0.25, lambda t: (radius * np.sin(w * t), radius * (1 - np.cos(w * t))), height
    )


@dataclass
class GroundTruth:
    injected_error: tuple[float, float, float]  # yaw, pitch, roll degrees
    correction_to_recover: tuple[float, float, float]
    lever_arm: tuple[float, float, float]
    boresight: tuple[float, float, float]
    seed: int | None
    range_noise: float
    duration: float
    n_firings: int
    n_rays: int
    n_returns: int
    firing_rate: float
    scenario: str = "custom"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> GroundTruth:
        d = dict(d)
        for k in ("injected_error", "correction_to_recover", "lever_arm", "boresight"):
            d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SimResult:
    returns: ReturnStream
    trajectory: Trajectory
    truth: GroundTruth
    mount: MountConfig  # nominal mount a consumer georeferences with
    scene: SceneModel = field(repr=False, default_factory=SceneModel)


def _firing_chunks(n_firings: int, size: int):
    for start in range(0, n_firings, size):
        yield start, min(start + size, n_firings)


def simulate_chunks(
    scene: SceneModel,
    scanner: ScannerModel,
    trajectory: Trajectory,
    true_mount: MountConfig,
    injected_error=(0.0, 0.0, 0.0),
    seed: int | None = 0,
    duration: float | None = None,
    t_start: float | None = None,
    chunk_firings: int = 20_000,
):
    """Yield ReturnStream pieces in canonical (time-major, beam-minor) order."""
    t_start = trajectory.t[0] if t_start is None else t_start
    if duration is None:
        duration = trajectory.t[-1] - t_start
    n_firings = int(round(duration * scanner.firing_rate))
    rng = np.random.default_rng(seed)
    emit = Rotation3.from_euler(*injected_error).matrix  # row vectors: d @ E == E^-1 d
    sensor_rot = true_mount.boresight.matrix @ true_mount.correction.matrix
    steps = scanner.steps_per_revolution
    beam_ids = np.arange(scanner.n_beams)
    for a, b in _firing_chunks(n_firings, chunk_firings):
        j = np.arange(a, b)
        t = t_start + j / scanner.firing_rate
        pos, mats = trajectory.poses(t)
        az = (j % steps) * scanner.azimuth_step
        d_s = scanner.beam_directions(az)  # (m, beams, 3)
        origin = pos + np.einsum("nij,j->ni", mats, true_mount.lever_arm)
        world_rot = np.einsum("nij,jk->nik", mats, sensor_rot)
        d_w = np.einsum("nij,nbj->nbi", world_rot, d_s)
        m, nb = d_s.shape[:2]
        rng_true, _ = ray_cast(scene, np.repeat(origin, nb, axis=0), d_w.reshape(-1, 3), scanner.max_range)
        noise = rng.normal(0.0, scanner.range_noise, size=m * nb) if scanner.range_noise > 0 else 0.0
        meas = rng_true + noise
        keep = np.isfinite(meas) & (meas > 0) & (meas <= scanner.max_range)
        d_emit = d_s.reshape(-1, 3) @ emit
        d_emit /= np.linalg.norm(d_emit, axis=1, keepdims=True)
        yield ReturnStream(
            np.repeat(t, nb)[keep],
            np.tile(beam_ids, m)[keep],
            d_emit[keep],
            meas[keep],
        )


def simulate(
    scene: SceneModel,
    scanner: ScannerModel,
    script: ManeuverScript | Trajectory,
    true_mount: MountConfig,
    injected_error=(0.0, 0.0, 0.0),
    seed: int | None = 0,
    duration: float | None = None,
    scenario: str = "custom",
) -> SimResult:
    """Simulate a full acquisition; see module docstring for error semantics.

    The sensor moves along the 200 Hz trajectory that is also handed to the
    consumer, so a correct georeference reproduces the scene to roundoff.
    """
    traj = script.trajectory() if isinstance(script, ManeuverScript) else script
    t0 = float(traj.t[0])
    if duration is None:
        duration = float(traj.t[-1] - t0)
    parts = list(simulate_chunks(scene, scanner, traj, true_mount, injected_error, seed, duration, t0))
    returns = ReturnStream.concat(parts)
    n_firings = int(round(duration * scanner.firing_rate))
    truth = GroundTruth(
        injected_error=tuple(float(x) for x in injected_error),
        correction_to_recover=tuple(float(x) for x in injected_error),
        lever_arm=tuple(float(x) for x in true_mount.lever_arm),
        boresight=true_mount.boresight.as_euler(),
        seed=seed,
        range_noise=scanner.range_noise,
        duration=float(duration),
        n_firings=n_firings,
        n_rays=n_firings * scanner.n_beams,
        n_returns=len(returns),
        firing_rate=scanner.firing_rate,
        scenario=scenario,
    )
    nominal = MountConfig(true_mount.lever_arm, true_mount.boresight)
    return SimResult(returns, traj, truth, nominal, scene)


def _rect(pid, corner, e1, e2) -> Patch:
    return Patch(pid, tuple(map(float, corner)), tuple(map(float, e1)), tuple(map(float, e2)))


def street_canyon_scene(
    width: float = 20.0,
    x_min: float = -20.0,
    x_max: float = 120.0,
    height: float = 30.0,
    plinth: float = 0.8,
    curb_gap: float = 1.5,
    end_gap: float = 5.0,
) -> SceneModel:
    """Ground, two facade rows ``width`` apart along x, two cross-street facades.

    Surfaces never touch: facades start ``plinth`` above the ground, the
    ground stops ``curb_gap`` short of each facade row, and the cross-street
    facades stand ``end_gap`` beyond the row ends. Neighbourhoods then stay
    on one plane and a noiseless, correctly georeferenced cloud has zero
    local scatter.
    """
    hw = width / 2.0
    g = hw - curb_gap
    length = x_max - x_min
    h = height - plinth
    return SceneModel(
        (
            _rect(0, (x_min, -g, 0.0), (length, 0, 0), (0, 2 * g, 0)),
            _rect(1, (x_min, hw, plinth), (length, 0, 0), (0, 0, h)),
            _rect(2, (x_min, -hw, plinth), (0, 0, h), (length, 0, 0)),
            _rect(3, (x_min - end_gap, -g, plinth), (0, 2 * g, 0), (0, 0, h)),
            _rect(4, (x_max + end_gap, -g, plinth), (0, 0, h), (0, 2 * g, 0)),
        )
    )


def enclosing_box_scene(half: float = 50.0) -> SceneModel:
    """Closed cube around the origin; every ray from inside hits a wall."""
    L = 2 * half
    c = -half
    return SceneModel(
        (
            _rect(0, (c, c, c), (0, L, 0), (L, 0, 0)),
            _rect(1, (c, c, half), (L, 0, 0), (0, L, 0)),
            _rect(2, (c, c, c), (L, 0, 0), (0, 0, L)),
            _rect(3, (c, half, c), (0, 0, L), (L, 0, 0)),
            _rect(4, (c, c, c), (0, 0, L), (0, L, 0)),
            _rect(5, (half, c, c), (0, L, 0), (0, 0, L)),
        )
    )


def standard_mount() -> MountConfig:
    """Roof mount on a 25 degree wedge turned 45 degrees outward."""
    return MountConfig(np.array([0.3, 0.4, 1.0]), Rotation3.from_euler(45.0, 0.0, 25.0))


STANDARD_DURATION = 20.0
STANDARD_NOISE = 0.02
STANDARD_ERROR_BOUND = 1.0


@dataclass
class Scenario:
    """Everything needed to simulate one acquisition."""

    name: str
    scene: SceneModel
    scanner: ScannerModel
    script: ManeuverScript
    true_mount: MountConfig
    injected_error: tuple[float, float, float]
    noise_seed: int
    duration: float

    def run(self, seed: int | None = None) -> SimResult:
        result = simulate(
            self.scene,
            self.scanner,
            self.script,
            self.true_mount,
            self.injected_error,
            seed=self.noise_seed,
            duration=self.duration,
            scenario=self.name,
        )
        result.truth.seed = seed
        return result


def standard_scenario(
    seed: int,
    scanner: ScannerModel | None = None,
    range_noise: float = STANDARD_NOISE,
    injected_error=None,
    script: ManeuverScript | None = None,
    name: str = "standard",
) -> Scenario:
    """Street canyon, zigzag, wedge mount; error and noise seeded from ``seed``."""
    err_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    if injected_error is None:
        err_rng = np.random.default_rng(err_seed)
        injected_error = err_rng.uniform(-STANDARD_ERROR_BOUND, STANDARD_ERROR_BOUND, 3)
    scanner = scanner or default_scanner()
    if scanner.range_noise != range_noise:
        scanner = ScannerModel(**{**asdict(scanner), "range_noise": range_noise})
    return Scenario(
        name=name,
        scene=street_canyon_scene(),
        scanner=scanner,
        script=script or zigzag(STANDARD_DURATION),
        true_mount=standard_mount(),
        injected_error=tuple(float(x) for x in injected_error),
        noise_seed=int(np.random.default_rng(noise_seed).integers(2**63 - 1)),
        duration=STANDARD_DURATION,
    )


def standard_calibration_run(
    seed: int,
    scanner: ScannerModel | None = None,
    range_noise: float = STANDARD_NOISE,
    injected_error=None,
) -> SimResult:
    """Canonical 20 s zigzag through the street canyon.

    The injected boresight error is drawn uniformly from +-1 degree per axis
    with ``seed`` unless given explicitly. ``scanner`` defaults to the full
    density default scanner; pass a coarser azimuth step for quick runs.
    """
    return standard_scenario(seed, scanner, range_noise, injected_error).run(seed)


__all__ = [
    "ScannerModel",
    "Patch",
    "SceneModel",
    "ManeuverScript",
    "GroundTruth",
    "SimResult",
    "default_scanner",
    "ray_cast",
    "simulate",
    "simulate_chunks",
    "street_canyon_scene",
    "enclosing_box_scene",
    "standard_mount",
    "standard_calibration_run",
    "standard_scenario",
    "Scenario",
    "straight_line",
    "zigzag",
    "closed_loop",
]
