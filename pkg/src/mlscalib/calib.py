"""Boresight correction by grid search over Euler angles of R_C.

Every candidate (yaw, pitch, roll) re-georeferences the whole window and is
scored by the average local scatter S; the smallest S wins. Level 0 scans a
full grid around the centre; each further level re-centres on the incumbent
with a finer step.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geom import Rotation3, Trajectory
from .georef import MountConfig, PosedReturns, ReturnStream
from .scatter import DEFAULT_MAX_RADIUS, DEFAULT_N, scatter_of_points

logger = logging.getLogger(__name__)

MAX_WINDOW_S = 20.0
DEFAULT_MAX_GAP = 0.1
FLAT_BALL_DEG = 0.1
FLAT_SPREAD = 1e-3
ROUNDOFF_SPREAD = 1e-9
KEY_DECIMALS = 9


class WindowTooLongError(ValueError):
    pass


class CoverageError(ValueError):
    def __init__(self, message, intervals):
        super().__init__(message)
        self.intervals = intervals


Triple = tuple[float, float, float]


def _key(triple) -> Triple:
    return tuple(round(float(x), KEY_DECIMALS) + 0.0 for x in triple)


@dataclass(frozen=True)
class GridSpec:
    """Coarse-to-fine grid.

    Level 0 spans ``center +- halfwidth`` at ``step``. Level l > 0 uses
    ``step * shrink**l`` and spans ``refine_halfwidth_steps`` of its own steps
    on each side of the incumbent. When the best candidate of a refinement
    window sits on its edge, the window is re-centred and the level repeated,
    at most ``max_recentre`` times. Per-axis values may be given as 3-tuples.
    """

    halfwidth: float | tuple[float, float, float] = 1.5
    step: float | tuple[float, float, float] = 0.1
    levels: int = 3
    shrink: float = 0.2
    refine_halfwidth_steps: int = 6
    center: Triple = (0.0, 0.0, 0.0)
    max_recentre: int = 10

    def __post_init__(self):
        hw, st = self.halfwidths, self.steps
        if any(s <= 0 for s in st):
            raise ValueError("grid step must be positive")
        if any(h < 0 for h in hw):
            raise ValueError("grid half-width must be non-negative")
        if any(0 < h < s for h, s in zip(hw, st)):
            raise ValueError("grid half-width must be zero or at least one step")
        if self.levels < 1:
            raise ValueError("grid needs at least one level")
        if not (0 < self.shrink < 1):
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.refine_halfwidth_steps < 1:
            raise ValueError("refinement half-width must be at least one step")
        if self.max_recentre < 0:
            raise ValueError("max_recentre must be non-negative")

    @property
    def halfwidths(self) -> Triple:
        h = self.halfwidth
        return tuple(float(x) for x in h) if isinstance(h, (tuple, list)) else (float(h),) * 3

    @property
    def steps(self) -> Triple:
        s = self.step
        return tuple(float(x) for x in s) if isinstance(s, (tuple, list)) else (float(s),) * 3

    def level_step(self, level: int) -> Triple:
        return tuple(s * self.shrink**level for s in self.steps)

    def axis_values(self, level: int, center, anchor=None) -> list[np.ndarray]:
        """Per-axis candidate values around ``center``.

        With ``anchor`` the values lie on the lattice ``anchor + step * k``,
        so re-centred windows of one level share their candidates exactly.
        """
        out = []
        for ax, (hw, st) in enumerate(zip(self.halfwidths, self.level_step(level))):
            if hw == 0:
                out.append(np.array([center[ax]]))
                continue
            k = self.refine_halfwidth_steps if level else int(np.floor(hw / st + 1e-9))
            if anchor is None:
                out.append(center[ax] + st * np.arange(-k, k + 1))
            else:
                i = round((center[ax] - anchor[ax]) / st)
                out.append(anchor[ax] + st * np.arange(i - k, i + k + 1))
        return out

    def candidates(self, level: int, center, anchor=None) -> list[Triple]:
        y, p, r = self.axis_values(level, center, anchor)
        return [_key((a, b, c)) for a in y for b in p for c in r]

    def on_edge(self, level: int, center, triple) -> bool:
        """True if ``triple`` lies on the boundary of the refinement window around ``center``."""
        if level == 0:
            return False
        for ax, (hw, st) in enumerate(zip(self.halfwidths, self.level_step(level))):
            if hw > 0 and abs(abs(triple[ax] - center[ax]) - self.refine_halfwidth_steps * st) < 1e-6 * st:
                return True
        return False


@dataclass
class CalibrationResult:
    best: Triple
    best_S: float
    tables: list[dict[Triple, float]]
    n_evaluations: int
    wall_time: float
    level_steps: list[Triple]
    warnings: list[str] = field(default_factory=list)
    best_S_full: float | None = None
    probes: dict[Triple, float] = field(default_factory=dict)  # flatness diagnostics, not in tables

    @property
    def correction(self) -> Rotation3:
        return Rotation3.from_euler(*self.best)

    @property
    def flat_minimum(self) -> bool:
        return any(w.startswith("flat minimum") for w in self.warnings)

    def all_scores(self) -> dict[Triple, float]:
        merged: dict[Triple, float] = {}
        for table in self.tables:
            merged.update(table)
        return merged

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "yaw", "pitch", "roll", "S"])
        for level, table in enumerate(self.tables):
            for tr in sorted(table):
                w.writerow([level, *(repr(x) for x in tr), repr(table[tr])])
        return buf.getvalue()


class CandidateScorer:
    """Scores boresight candidates on one fixed window of returns."""

    def __init__(
        self,
        returns: ReturnStream,
        traj: Trajectory,
        mount: MountConfig,
        N: int = DEFAULT_N,
        stride: int = 1,
        max_radius: float | None = DEFAULT_MAX_RADIUS,
    ):
        self.posed = PosedReturns(returns, traj)
        self.mount = mount
        self.N = N
        self.stride = stride
        self.max_radius = max_radius

    def __call__(self, candidate, stride: int | None = None) -> float:
        pts = self.posed.georeference(self.mount, Rotation3.from_euler(*candidate))
        rep = scatter_of_points(pts, self.N, self.stride if stride is None else stride, self.max_radius)
        return rep.S


def score_candidate(
    returns: ReturnStream,
    traj: Trajectory,
    mount: MountConfig,
    candidate,
    N: int = DEFAULT_N,
    stride: int = 1,
    max_radius: float | None = DEFAULT_MAX_RADIUS,
) -> float:
    """S of the window georeferenced with R_C = rotation_from_euler(candidate)."""
    return CandidateScorer(returns, traj, mount, N, stride, max_radius)(candidate)


def check_window(
    returns: ReturnStream,
    traj: Trajectory,
    max_window: float = MAX_WINDOW_S,
    allow_long: bool = False,
    max_gap: float = DEFAULT_MAX_GAP,
):
    if len(returns) == 0:
        raise ValueError("calibration window is empty")
    t0, t1 = float(returns.t.min()), float(returns.t.max())
    if t1 - t0 > max_window and not allow_long:
        raise WindowTooLongError(
            f"calibration window spans {t1 - t0:.3f} s; windows of at most {max_window:g} s are "
            "recommended so that GNSS positioning stays stable (override with allow_long)"
        )
    a, b = traj.span
    uncovered = []
    if t0 < a:
        uncovered.append((t0, min(a, t1)))
    if t1 > b:
        uncovered.append((max(b, t0), t1))
    if uncovered:
        raise CoverageError(
            "trajectory does not cover " + ", ".join(f"[{u:.6f}, {v:.6f}]" for u, v in uncovered), uncovered
        )
    gaps = traj.gaps(t0, t1, max_gap)
    if gaps:
        raise CoverageError(
            "trajectory gaps inside window: " + ", ".join(f"({u:.6f}, {v:.6f})" for u, v in gaps), gaps
        )


AXES = ("yaw", "pitch", "roll")


def _is_flat(values, scale) -> bool:
    lo, hi = min(values), max(values)
    # spreads at roundoff level of the largest score count as flat too
    return hi - lo <= FLAT_SPREAD * lo + ROUNDOFF_SPREAD * scale


def _flat_warnings(scores: dict[Triple, float], best: Triple, probes: dict[Triple, float]) -> list[str]:
    """Warnings for a minimum whose S hardly changes within FLAT_BALL_DEG.

    Checked over every scored candidate in the ball and along each axis
    through the optimum (probes at +-FLAT_BALL_DEG).
    """
    scale = max(max(scores.values()), max(probes.values(), default=0.0))
    b = np.array(best)
    out = []
    near = [s for tr, s in scores.items() if np.linalg.norm(np.array(tr) - b) <= FLAT_BALL_DEG + 1e-12]
    if len(near) >= 2 and _is_flat(near, scale):
        out.append(
            f"flat minimum: S varies by less than {FLAT_SPREAD:g} (relative) within {FLAT_BALL_DEG} deg "
            "of the optimum; the scene may not constrain the boresight"
        )
    flat_axes = []
    for ax, name in enumerate(AXES):
        line = [v for tr, v in probes.items() if all(tr[k] == best[k] for k in range(3) if k != ax) and tr[ax] != best[ax]]
        if line and _is_flat(line + [scores[best]], scale):
            flat_axes.append(name)
    if flat_axes:
        out.append(
            f"flat minimum along {', '.join(flat_axes)}: S changes by less than {FLAT_SPREAD:g} (relative) "
            f"{FLAT_BALL_DEG} deg from the optimum; the scene may not constrain this angle"
        )
    return out


def calibrate(
    returns: ReturnStream,
    traj: Trajectory,
    mount: MountConfig,
    grid: GridSpec | None = None,
    N: int = DEFAULT_N,
    stride: int = 2,
    return_stride: int = 1,
    max_radius: float | None = DEFAULT_MAX_RADIUS,
    threads: int = 1,
    max_window: float = MAX_WINDOW_S,
    allow_long: bool = False,
    max_gap: float = DEFAULT_MAX_GAP,
    full_rescore: bool = True,
) -> CalibrationResult:
    """Grid-search the boresight correction minimising S.

    ``stride`` subsamples query points for every candidate (all levels, so
    scores stay comparable); ``return_stride`` thins the raw window before
    anything else. Ties on S go to the lexicographically smallest triple.
    """
    grid = grid or GridSpec()
    check_window(returns, traj, max_window, allow_long, max_gap)
    started = time.perf_counter()
    scorer = CandidateScorer(returns.thin(return_stride), traj, mount, N, stride, max_radius)
    scores: dict[Triple, float] = {}
    tables: list[dict[Triple, float]] = []
    center = _key(grid.center)
    best = center
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for level in range(grid.levels):
            table: dict[Triple, float] = {}
            anchor = best
            for _ in range(grid.max_recentre + 1):
                center = best
                cands = grid.candidates(level, center, anchor)
                todo = [c for c in cands if c not in scores]
                for c, s in zip(todo, pool.map(scorer, todo)):
                    scores[c] = s
                table.update({c: scores[c] for c in cands})
                best = min(scores, key=lambda c: (scores[c], c))
                if best == center or not grid.on_edge(level, center, best):
                    break
            tables.append(table)
            logger.info("level %d: %d candidates, best %s S=%.6e", level, len(table), best, scores[best])
    result = CalibrationResult(
        best=best,
        best_S=scores[best],
        tables=tables,
        n_evaluations=len(scores),
        wall_time=time.perf_counter() - started,
        level_steps=[grid.level_step(k) for k in range(grid.levels)],
    )
    probes = {}
    for ax in range(3):
        if grid.halfwidths[ax] == 0:
            continue
        for sign in (-1.0, 1.0):
            tr = list(best)
            tr[ax] += sign * FLAT_BALL_DEG
            tr = _key(tr)
            probes[tr] = scores[tr] if tr in scores else scorer(tr)
    result.probes = probes
    for warn in _flat_warnings(scores, best, probes):
        logger.warning(warn)
        result.warnings.append(warn)
    if full_rescore:
        result.best_S_full = scorer(best, stride=1)
    return result
