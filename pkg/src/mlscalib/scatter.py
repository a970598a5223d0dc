"""Point-cloud sharpness: kNN neighbourhoods, PCA local scatter, average scatter.

For each query point p_i the neighbourhood is p_i plus its N nearest
neighbours. The local scatter lambda_i1 is the smallest eigenvalue of that
(N+1)-point covariance (population divisor N+1), and the cloud score is::

    S = sum_i lambda_i1 / (n_p * (N + 1))

Lower S means a sharper, more self-consistent cloud.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_N = 8
DEFAULT_MAX_RADIUS = 5.0


class DegenerateInputError(ValueError):
    """Cloud too small for the requested neighbourhood size."""


class GeoPointCloud:
    """World-frame points with per-point metadata and a lazily built kNN index."""

    def __init__(self, positions, t=None, beam_id=None, scan_index=None, intensity=None):
        self.positions = np.ascontiguousarray(positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.t = np.zeros(n) if t is None else np.ascontiguousarray(t, dtype=float).ravel()
        self.beam_id = np.zeros(n, dtype=np.int64) if beam_id is None else np.asarray(beam_id, dtype=np.int64).ravel()
        self.scan_index = (
            np.zeros(n, dtype=np.int64) if scan_index is None else np.asarray(scan_index, dtype=np.int64).ravel()
        )
        self.intensity = None if intensity is None else np.asarray(intensity, dtype=float).ravel()
        if not (len(self.t) == len(self.beam_id) == len(self.scan_index) == n):
            raise ValueError("point metadata lengths do not match positions")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("point positions must be finite")

    @classmethod
    def concat(cls, clouds) -> GeoPointCloud:
        clouds = list(clouds)
        if not clouds:
            return cls(np.empty((0, 3)))
        inten = None
        if all(c.intensity is not None for c in clouds):
            inten = np.concatenate([c.intensity for c in clouds])
        return cls(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.t for c in clouds]),
            np.concatenate([c.beam_id for c in clouds]),
            np.concatenate([c.scan_index for c in clouds]),
            inten,
        )

    def __len__(self):
        return len(self.positions)

    @cached_property
    def index(self) -> cKDTree:
        return cKDTree(self.positions, balanced_tree=False, compact_nodes=False)


@dataclass
class ScatterReport:
    S: float
    lambdas: np.ndarray  # per query point, NaN where skipped
    query_index: np.ndarray
    n_p: int
    N: int
    skipped: int


def _check_n(n_points: int, N: int):
    if n_points < 2:
        raise DegenerateInputError(f"need at least 2 points, got {n_points}")
    if not (1 <= N <= n_points - 1):
        raise ValueError(f"N={N} out of range [1, {n_points - 1}]")


def neighbors(
    positions: np.ndarray, tree: cKDTree, query: np.ndarray, N: int, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Exact N nearest neighbours of each query index, self excluded.

    Returns (indices, squared distances), both (m, N), ascending by distance
    with ties going to the lower point index.
    """
    n = len(positions)
    query = np.asarray(query, dtype=np.int64)
    m = len(query)
    k = min(N + 2, n)
    tree_d, cand = tree.query(positions[query], k=k, workers=workers)
    cand = cand.reshape(m, k)
    tree_d = tree_d.reshape(m, k)
    # fast path: self comes first and all k distances are distinct
    clean = (cand[:, 0] == query) & np.all(np.diff(tree_d, axis=1) > 0, axis=1)
    idx = cand[:, 1 : N + 1].copy()
    dist2 = tree_d[:, 1 : N + 1] ** 2
    slow = np.flatnonzero(~clean)
    if len(slow):
        c, q = cand[slow], query[slow]
        diff = positions[c] - positions[q][:, None, :]
        d2 = np.einsum("mkj,mkj->mk", diff, diff)
        d2 = np.where(c == q[:, None], np.inf, d2)
        order = np.lexsort((c, d2))
        idx[slow] = np.take_along_axis(c, order, axis=1)[:, :N]
        dist2[slow] = np.take_along_axis(d2, order, axis=1)[:, :N]
    if k < n:
        # unreturned points are at least as far as the last tree candidate;
        # if that is not strictly beyond the N-th distance a tie may be hiding
        suspect = np.flatnonzero(tree_d[:, -1] ** 2 <= dist2[:, -1] * (1 + 1e-9) + 1e-300)
        for row in suspect:
            q = query[row]
            r = np.sqrt(dist2[row, -1]) * (1 + 1e-6) + 1e-12
            ball = np.array(sorted(tree.query_ball_point(positions[q], r)), dtype=np.int64)
            ball = ball[ball != q]
            dd = positions[ball] - positions[q]
            bd2 = np.einsum("kj,kj->k", dd, dd)
            o = np.lexsort((ball, bd2))[:N]
            idx[row], dist2[row] = ball[o], bd2[o]
    return idx, dist2


def knn(cloud: GeoPointCloud, query_index: int, N: int) -> np.ndarray:
    """Indices of the N nearest neighbours of one point, nearest first."""
    _check_n(len(cloud), N)
    if not (0 <= query_index < len(cloud)):
        raise ValueError(f"query index {query_index} out of range")
    idx, _ = neighbors(cloud.positions, cloud.index, np.array([query_index]), N)
    return idx[0]


def _rayleigh_min(a00, a11, a22, a01, a02, a12, lam):
    """Smallest Rayleigh quotient over candidate eigenvectors of A - lam*I.

    Candidates: the three adjugate columns, plus a vector orthogonal to the
    largest row (the adjugate is pure roundoff when A - lam*I is nearly rank
    one). Rayleigh quotients never undershoot the smallest eigenvalue.
    """
    m00, m11, m22 = a00 - lam, a11 - lam, a22 - lam
    rows = (
        (m00, a01, a02),
        (a01, m11, a12),
        (a02, a12, m22),
    )
    cands = [
        (m11 * m22 - a12 * a12, a12 * a02 - a01 * m22, a01 * a12 - m11 * a02),
        (a12 * a02 - a01 * m22, m00 * m22 - a02 * a02, a01 * a02 - m00 * a12),
        (a01 * a12 - m11 * a02, a01 * a02 - m00 * a12, m00 * m11 - a01 * a01),
    ]
    norms = np.stack([r[0] ** 2 + r[1] ** 2 + r[2] ** 2 for r in rows])
    big = np.argmax(norms, axis=0)
    r0 = np.choose(big, [rows[0][0], rows[1][0], rows[2][0]])
    r1 = np.choose(big, [rows[0][1], rows[1][1], rows[2][1]])
    r2 = np.choose(big, [rows[0][2], rows[1][2], rows[2][2]])
    # cross with the coordinate axis least aligned with the row
    ax = np.argmin(np.stack([np.abs(r0), np.abs(r1), np.abs(r2)]), axis=0)
    cands.append(
        (
            np.where(ax == 0, 0.0, np.where(ax == 1, -r2, r1)),
            np.where(ax == 0, r2, np.where(ax == 1, 0.0, -r0)),
            np.where(ax == 0, -r1, np.where(ax == 1, r0, 0.0)),
        )
    )
    best = np.full_like(lam, np.inf)
    for x, y, z in cands:
        nn = x * x + y * y + z * z
        num = a00 * x * x + a11 * y * y + a22 * z * z + 2.0 * (a01 * x * y + a02 * x * z + a12 * y * z)
        with np.errstate(invalid="ignore", divide="ignore"):
            rq = np.where(nn > 0, num / nn, np.inf)
        best = np.minimum(best, rq)
    return best


def _deflated_min(a00, a11, a22, a01, a02, a12, lam_max):
    """Smallest eigenvalue of A compressed onto the plane orthogonal to its top eigenvector.

    By interlacing this never undershoots the smallest eigenvalue, and it
    stays exact when the two small eigenvalues nearly coincide, where
    Rayleigh polishing of the smallest root is poorly conditioned. The top
    eigenvector is the largest cross product of two rows of A - lam_max*I.
    """
    m00, m11, m22 = a00 - lam_max, a11 - lam_max, a22 - lam_max
    c = [
        (a01 * a12 - a02 * m11, a02 * a01 - m00 * a12, m00 * m11 - a01 * a01),
        (a01 * m22 - a02 * a12, a02 * a02 - m00 * m22, m00 * a12 - a01 * a02),
        (m11 * m22 - a12 * a12, a12 * a02 - a01 * m22, a01 * a12 - m11 * a02),
    ]
    n = np.stack([x * x + y * y + z * z for x, y, z in c])
    k = np.argmax(n, axis=0)
    nk = np.sqrt(np.max(n, axis=0))
    ok = nk > 0
    nk = np.where(ok, nk, 1.0)
    vx = np.choose(k, [c[0][0], c[1][0], c[2][0]]) / nk
    vy = np.choose(k, [c[0][1], c[1][1], c[2][1]]) / nk
    vz = np.choose(k, [c[0][2], c[1][2], c[2][2]]) / nk
    # orthonormal basis (u, w) of the complement of v
    ax = np.argmin(np.stack([np.abs(vx), np.abs(vy), np.abs(vz)]), axis=0)
    ux = np.where(ax == 0, 0.0, np.where(ax == 1, -vz, vy))
    uy = np.where(ax == 0, vz, np.where(ax == 1, 0.0, -vx))
    uz = np.where(ax == 0, -vy, np.where(ax == 1, vx, 0.0))
    un = np.sqrt(ux * ux + uy * uy + uz * uz)
    un = np.where(un > 0, un, 1.0)
    ux, uy, uz = ux / un, uy / un, uz / un
    wx, wy, wz = vy * uz - vz * uy, vz * ux - vx * uz, vx * uy - vy * ux

    def quad(x1, y1, z1, x2, y2, z2):
        return (
            a00 * x1 * x2
            + a11 * y1 * y2
            + a22 * z1 * z2
            + a01 * (x1 * y2 + y1 * x2)
            + a02 * (x1 * z2 + z1 * x2)
            + a12 * (y1 * z2 + z1 * y2)
        )

    b00 = quad(ux, uy, uz, ux, uy, uz)
    b11 = quad(wx, wy, wz, wx, wy, wz)
    b01 = quad(ux, uy, uz, wx, wy, wz)
    big = 0.5 * (b00 + b11) + np.hypot(0.5 * (b00 - b11), b01)
    with np.errstate(invalid="ignore", divide="ignore"):
        small = np.where(big > 0, (b00 * b11 - b01 * b01) / big, 0.5 * (b00 + b11) - np.hypot(0.5 * (b00 - b11), b01))
    return np.where(ok, small, np.inf)


def smallest_eigenvalue(cov: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of a stack of symmetric 3x3 matrices, closed form.

    Trigonometric solution of the characteristic cubic, polished by Rayleigh
    quotients on the matching eigenvector and by deflating the top
    eigenvector, to recover the accuracy the cubic loses for flat or
    line-like neighbourhoods. Every polish is an upper bound, so the minimum
    is taken. Clamped to >= 0.
    """
    cov = np.asarray(cov, dtype=float)
    single = cov.ndim == 2
    a = cov.reshape(-1, 3, 3)
    a00, a11, a22 = a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]
    a01, a02, a12 = a[:, 0, 1], a[:, 0, 2], a[:, 1, 2]
    q = (a00 + a11 + a22) / 3.0
    p1 = a01**2 + a02**2 + a12**2
    b00, b11, b22 = a00 - q, a11 - q, a22 - q
    p = np.sqrt((b00**2 + b11**2 + b22**2 + 2.0 * p1) / 6.0)
    safe = np.where(p > 0, p, 1.0)
    det_b = (
        b00 * (b11 * b22 - a12 * a12) - a01 * (a01 * b22 - a12 * a02) + a02 * (a01 * a12 - b11 * a02)
    ) / safe**3
    phi = np.arccos(np.clip(det_b / 2.0, -1.0, 1.0)) / 3.0
    lam = np.where(p > 0, q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0), q)
    rq = _rayleigh_min(a00, a11, a22, a01, a02, a12, lam)
    lam = np.where(np.isfinite(rq), rq, lam)
    lam_max = np.where(p > 0, q + 2.0 * p * np.cos(phi), q)
    lam = np.minimum(lam, _deflated_min(a00, a11, a22, a01, a02, a12, lam_max))
    lam = np.maximum(lam, 0.0)
    return float(lam[0]) if single else lam


def neighborhood_covariance(positions: np.ndarray, query: np.ndarray, nbr: np.ndarray) -> np.ndarray:
    """Population covariance (divisor N+1) of each point together with its neighbours."""
    pts = np.concatenate([positions[query][:, None, :], positions[nbr]], axis=1)
    local = pts - positions[query][:, None, :]
    local -= local.mean(axis=1, keepdims=True)
    return np.matmul(local.transpose(0, 2, 1), local) / pts.shape[1]


def local_scatter(cloud: GeoPointCloud, query_index: int, N: int = DEFAULT_N) -> float:
    if N < 2:
        raise ValueError("local scatter needs N >= 2")
    nbr = knn(cloud, query_index, N)
    cov = neighborhood_covariance(cloud.positions, np.array([query_index]), nbr[None, :])
    return smallest_eigenvalue(cov[0])


def scatter_of_points(
    positions: np.ndarray,
    N: int = DEFAULT_N,
    stride: int = 1,
    max_radius: float | None = DEFAULT_MAX_RADIUS,
    tree: cKDTree | None = None,
    workers: int = 1,
    chunk: int = 200_000,
) -> ScatterReport:
    """Average local scatter of a bare (n, 3) array; see :func:`average_scatter`."""
    positions = np.ascontiguousarray(positions, dtype=float)
    n = len(positions)
    if N < 2:
        raise ValueError("average scatter needs N >= 2")
    if n < N + 1:
        raise DegenerateInputError(f"cloud of {n} points is too small for N={N}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if tree is None:
        tree = cKDTree(positions, balanced_tree=False, compact_nodes=False)
    query = np.arange(0, n, stride, dtype=np.int64)
    lambdas = np.empty(len(query))
    for start in range(0, len(query), chunk):
        q = query[start : start + chunk]
        nbr, d2 = neighbors(positions, tree, q, N, workers=workers)
        lam = smallest_eigenvalue(neighborhood_covariance(positions, q, nbr))
        if max_radius is not None:
            lam = np.where(d2[:, -1] > max_radius**2, np.nan, lam)
        lambdas[start : start + chunk] = lam
    used = ~np.isnan(lambdas)
    n_p = int(used.sum())
    if n_p == 0:
        raise DegenerateInputError("every query point was skipped as isolated")
    S = float(np.sum(lambdas[used]) / (n_p * (N + 1)))
    return ScatterReport(S, lambdas, query, n_p, N, int(len(query) - n_p))


def average_scatter(
    cloud: GeoPointCloud,
    N: int = DEFAULT_N,
    stride: int = 1,
    max_radius: float | None = DEFAULT_MAX_RADIUS,
    workers: int = 1,
) -> ScatterReport:
    """Average local scatter S of a cloud.

    ``stride`` evaluates every stride-th point as a query (neighbours still
    come from the full cloud). Points whose N-th neighbour is farther than
    ``max_radius`` are skipped and counted; n_p is the number of query
    points that contributed.
    """
    if len(cloud) < N + 1:
        raise DegenerateInputError(f"cloud of {len(cloud)} points is too small for N={N}")
    return scatter_of_points(cloud.positions, N, stride, max_radius, tree=cloud.index, workers=workers)
