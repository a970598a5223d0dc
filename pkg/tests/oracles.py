"""Straightforward reference implementations used as test oracles."""

import numpy as np


def brute_knn(points, i, N):
    d2 = np.sum((points - points[i]) ** 2, axis=1)
    d2[i] = np.inf
    order = np.lexsort((np.arange(len(points)), d2))
    return order[:N], d2[order[:N]]


def brute_local_scatter(points, i, N):
    nbr, _ = brute_knn(points, i, N)
    pts = np.vstack([points[i], points[nbr]])
    c = pts - pts.mean(axis=0)
    cov = c.T @ c / (N + 1)
    return max(np.linalg.eigvalsh(cov)[0], 0.0)


def brute_average_scatter(points, N, max_radius=None, stride=1):
    """Mean of lambda_1 over query points divided by (N + 1), with the optional isolation skip."""
    lams = []
    for i in range(0, len(points), stride):
        nbr, d2 = brute_knn(points, i, N)
        if max_radius is not None and d2[-1] > max_radius**2:
            continue
        lams.append(brute_local_scatter(points, i, N))
    return float(np.sum(lams) / (len(lams) * (N + 1)))


def blocked_brute_average_scatter(points, N, block=512):
    """Vectorised linear-scan version for clouds too large for a Python loop."""
    n = len(points)
    idx = np.arange(n)
    total = 0.0
    sq = np.einsum("ij,ij->i", points, points)
    for a in range(0, n, block):
        q = np.arange(a, min(a + block, n))
        d2 = sq[q][:, None] + sq[None, :] - 2.0 * points[q] @ points.T
        d2[np.arange(len(q)), q] = np.inf
        part = np.argpartition(d2, N + 4, axis=1)[:, : N + 5]
        # exact distances on the candidate set, ties to lower index
        diff = points[part] - points[q][:, None, :]
        dd = np.einsum("mkj,mkj->mk", diff, diff)
        dd[part == q[:, None]] = np.inf
        order = np.lexsort((idx[part], dd))
        nbr = np.take_along_axis(part, order, axis=1)[:, :N]
        pts = np.concatenate([points[q][:, None, :], points[nbr]], axis=1)
        c = pts - pts.mean(axis=1, keepdims=True)
        cov = np.einsum("mki,mkj->mij", c, c) / (N + 1)
        total += np.clip(np.linalg.eigvalsh(cov)[:, 0], 0, None).sum()
    return total / (n * (N + 1))


def ray_patch_distance(origin, direction, corner, e1, e2):
    """Moller-Trumbore style intersection with a parallelogram; inf on a miss."""
    h = np.cross(direction, e2)
    a = np.dot(e1, h)
    if abs(a) < 1e-15:
        return np.inf
    f = 1.0 / a
    s = origin - corner
    u = f * np.dot(s, h)
    if u < 0 or u > 1:
        return np.inf
    q = np.cross(s, e1)
    v = f * np.dot(direction, q)
    if v < 0 or v > 1:
        return np.inf
    t = f * np.dot(e2, q)
    return t if t > 0 else np.inf
