"""Slow, obviously-correct reference implementations used only by tests."""

from collections import deque

import numpy as np

R = 6_371_000.0
UNVISITED, NOISE = -2, -1


def distance_matrix(lat, lon):
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat[:, None]) * np.cos(lat[None, :]) * np.sin(dlon / 2) ** 2
    return 2 * R * np.arcsin(np.sqrt(np.clip(h, 0, 1)))


def naive_dbscan(lat, lon, eps_m, min_pts):
    """Textbook sequential DBSCAN over a full distance matrix.

    Points are visited in input order; a cluster is expanded breadth-first
    to completion before the next one starts, so a border point goes to
    the first cluster that reaches it.
    """
    n = len(lat)
    if n == 0:
        return np.zeros(0, dtype=int), 0
    d = distance_matrix(lat, lon)
    nbrs = [np.flatnonzero(d[i] <= eps_m) for i in range(n)]
    core = [len(nb) >= min_pts for nb in nbrs]
    labels = [UNVISITED] * n
    cluster = 0
    for i in range(n):
        if labels[i] != UNVISITED:
            continue
        if not core[i]:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        queue = deque(nbrs[i])
        while queue:
            j = int(queue.popleft())
            if labels[j] == NOISE:
                labels[j] = cluster
            if labels[j] != UNVISITED:
                continue
            labels[j] = cluster
            if core[j]:
                queue.extend(nbrs[j])
        cluster += 1
    return np.array(labels), cluster


def brute_hull_vertices(points):
    """Strict hull vertices of integer points via supporting lines.

    (i, j) is a hull edge when no point lies strictly right of i->j and
    every point on the line i-j lies on the segment [i, j].
    """
    pts = np.unique(np.asarray(points, dtype=np.int64), axis=0)
    n = len(pts)
    verts = set()
    for i in range(n):
        v = pts - pts[i]
        cross = v[:, None, 0] * v[None, :, 1] - v[:, None, 1] * v[None, :, 0]  # [j, k]
        dot = v[:, None, 0] * v[None, :, 0] + v[:, None, 1] * v[None, :, 1]
        norm2 = np.einsum("ij,ij->i", v, v)
        on_line = cross == 0
        inside_seg = (dot >= 0) & (dot <= norm2[:, None])
        ok = np.all(cross >= 0, axis=1) & np.all(~on_line | inside_seg, axis=1)
        ok[i] = False
        for j in np.flatnonzero(ok):
            verts.add(tuple(pts[i]))
            verts.add(tuple(pts[j]))
    return verts


def normal_equations(X, y):
    X = np.asarray(X, dtype=float)
    return np.linalg.solve(X.T @ X, X.T @ np.asarray(y, dtype=float))


def kendall_w_loops(ranks):
    """W = 12 S / (m^2 (n^3 - n)) with explicit sums."""
    m, n = len(ranks), len(ranks[0])
    totals = [sum(ranks[j][i] for j in range(m)) for i in range(n)]
    mean = sum(totals) / n
    s = sum((t - mean) ** 2 for t in totals)
    return 12 * s / (m * m * (n ** 3 - n))


def same_partition(a, b):
    """True iff label arrays induce the same partition with the same noise set."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or not np.array_equal(a == -1, b == -1):
        return False
    pairs = {(x, y) for x, y in zip(a.tolist(), b.tolist()) if x != -1}
    return len(pairs) == len({x for x, _ in pairs}) == len({y for _, y in pairs})
