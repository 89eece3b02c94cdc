"""Geodesic distance, DBSCAN clustering, convex hulls and place footprints.

Distances are great-circle meters on a sphere of radius 6,371,000 m.  Hulls
are built in a local equirectangular projection centered on each cluster;
that projection is affine in (lat, lon) for a fixed center, so convexity and
containment do not depend on which center is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import DegenerateGeometry, EmptyPlace

EARTH_RADIUS_M = 6_371_000.0
NOISE = -1

# Boundary tolerance for point-in-polygon, in projected meters.
BOUNDARY_TOL_M = 1e-6


def normalize_lon(lon: float) -> float:
    """Map a longitude onto (-180, 180]."""
    lon = math.fmod(lon, 360.0)
    if lon <= -180.0:
        lon += 360.0
    elif lon > 180.0:
        lon -= 360.0
    return lon


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (-90.0 <= lat <= 90.0) or math.isnan(lat):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= lon <= 180.0) or math.isnan(lon):
            raise ValueError(f"longitude out of range: {self.lon}")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_lon(lon))


@dataclass(frozen=True)
class ClusterParams:
    eps_m: float
    min_pts_pct: float
    min_pts_floor: int = 3

    def __post_init__(self):
        if not self.eps_m > 0:
            raise ValueError(f"eps_m must be > 0, got {self.eps_m}")
        if not 0 < self.min_pts_pct <= 1:
            raise ValueError(f"min_pts_pct must be in (0, 1], got {self.min_pts_pct}")
        if self.min_pts_floor < 3:
            raise ValueError(f"min_pts_floor must be >= 3, got {self.min_pts_floor}")

    def min_pts(self, n: int) -> int:
        # round() guards against 0.01 * 300 == 3.0000000000000004
        return max(self.min_pts_floor, math.ceil(round(self.min_pts_pct * n, 9)))


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    cluster_count: int

    def clusters(self) -> list[np.ndarray]:
        """Member indices of each cluster, in label order."""
        return [np.flatnonzero(self.labels == k) for k in range(self.cluster_count)]


@dataclass
class Place:
    """A site's footprint polygons and the clustered points that built them.

    ``member_index`` indexes the photo points passed to construct_place.
    """

    site_id: str
    footprint: list[tuple[GeoPoint, ...]]
    params_used: ClusterParams
    member_lat: np.ndarray
    member_lon: np.ndarray
    member_index: np.ndarray

    @property
    def n_polygons(self) -> int:
        return len(self.footprint)

    @property
    def member_points(self) -> list[GeoPoint]:
        return [GeoPoint(a, b) for a, b in zip(self.member_lat.tolist(), self.member_lon.tolist())]


def _as_latlon(points) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float).reshape(-1, 2)
        return arr[:, 0].copy(), arr[:, 1].copy()
    lat = np.fromiter((p.lat for p in points), dtype=float)
    lon = np.fromiter((p.lon for p in points), dtype=float)
    return lat, lon


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters between two points."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized haversine over broadcastable degree arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float))
                              for v in (lat1, lon1, lat2, lon2))
    h = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def _unit_vectors(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    phi, lam = np.radians(lat), np.radians(lon)
    return np.column_stack([np.cos(phi) * np.cos(lam),
                            np.cos(phi) * np.sin(lam),
                            np.sin(phi)])


@dataclass
class NeighborGraph:
    """Pairs (i < j) within eps_m of each other, sorted by (i, j)."""

    n: int
    eps_m: float
    i: np.ndarray
    j: np.ndarray
    _degree: np.ndarray | None = field(default=None, repr=False)

    def degree(self) -> np.ndarray:
        """Neighborhood sizes, counting each point itself."""
        if self._degree is None:
            self._degree = (np.bincount(self.i, minlength=self.n)
                            + np.bincount(self.j, minlength=self.n) + 1)
        return self._degree

    def neighbors(self, k: int) -> np.ndarray:
        return np.sort(np.r_[k, self.j[self.i == k], self.i[self.j == k]])


def neighbor_graph(lat, lon, eps_m: float) -> NeighborGraph:
    """All pairs within eps_m (haversine, inclusive).

    Candidates come from a KD-tree over unit vectors using the chord length
    that corresponds to eps_m, padded slightly.  Pairs whose chord is within
    a relative 1e-7 of the threshold are re-checked with haversine_array.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    n = len(lat)
    empty = np.empty(0, dtype=np.intp)
    if n < 2:
        return NeighborGraph(n, eps_m, empty, empty)
    unit = _unit_vectors(lat, lon)
    tree = cKDTree(unit)
    theta = min(eps_m / EARTH_RADIUS_M, math.pi)
    chord = 2 * math.sin(theta / 2)
    pairs = tree.query_pairs(chord * (1 + 1e-9) + 1e-12, output_type="ndarray")
    if not len(pairs):
        return NeighborGraph(n, eps_m, empty, empty)
    i, j = pairs[:, 0], pairs[:, 1]
    n_sure = len(tree.query_pairs(chord * (1 - 1e-7), output_type="ndarray"))
    if n_sure < len(pairs):
        d2 = np.sum((unit[i] - unit[j]) ** 2, axis=1)
        unsure = np.flatnonzero(d2 > (chord * (1 - 1e-7)) ** 2)
        keep = np.ones(len(i), dtype=bool)
        a, b = i[unsure], j[unsure]
        keep[unsure] = haversine_array(lat[a], lon[a], lat[b], lon[b]) <= eps_m
        i, j = i[keep], j[keep]
    key = i.astype(np.int64) * n + j
    key.sort()
    return NeighborGraph(n, eps_m, key // n, key % n)


def _components(n: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    # (i, j) arrive sorted and unique, so the CSR is canonical as built
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(i, minlength=n), out=indptr[1:])
    adj = csr_matrix((np.ones(len(i)), j, indptr), shape=(n, n))
    adj.has_canonical_format = True
    return connected_components(adj, directed=False)[1]


def dbscan_graph(graph: NeighborGraph, min_pts: int) -> ClusterAssignment:
    """DBSCAN labels from a precomputed neighbor graph."""
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    n = graph.n
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return ClusterAssignment(labels, 0)
    core = graph.degree() >= min_pts
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return ClusterAssignment(labels, 0)

    ci, cj = core[graph.i], core[graph.j]
    both = ci & cj
    comp = _components(n, graph.i[both], graph.j[both])
    # number clusters by their lowest-index core point
    comp_core = comp[core_idx]
    _, first_pos = np.unique(comp_core, return_index=True)
    order = np.argsort(first_pos, kind="stable")
    remap = np.full(comp.max() + 1, NOISE, dtype=int)
    remap[comp_core[first_pos[order]]] = np.arange(len(order))
    labels[core_idx] = remap[comp_core]

    # border points join the lowest-numbered cluster among their core neighbors
    big = np.iinfo(int).max
    best = np.full(n, big, dtype=int)
    for border, core_end in ((ci & ~cj, True), (cj & ~ci, False)):
        if border.any():
            b = graph.j[border] if core_end else graph.i[border]
            c = graph.i[border] if core_end else graph.j[border]
            np.minimum.at(best, b, labels[c])
    hit = best != big
    labels[hit] = best[hit]
    return ClusterAssignment(labels, len(order))


def dbscan(points, eps_m: float, min_pts: int) -> ClusterAssignment:
    """Density-based clustering under haversine distance.

    ``points`` is a sequence of GeoPoint or an (n, 2) array of (lat, lon).
    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps_m``.  Clusters are numbered in order of their lowest-index
    core point; a border point reachable from several clusters joins the
    lowest-numbered one.
    """
    if eps_m <= 0:
        raise ValueError("eps_m must be > 0")
    lat, lon = _as_latlon(points)
    return dbscan_graph(neighbor_graph(lat, lon, eps_m), min_pts)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _hull_candidates(arr: np.ndarray) -> np.ndarray:
    """Drop points strictly inside the quadrilateral of the axis extremes."""
    if len(arr) < 8:
        return np.arange(len(arr))
    x, y = arr[:, 0], arr[:, 1]
    quad = arr[[np.argmin(x), np.argmin(y), np.argmax(x), np.argmax(y)]]
    inside = np.ones(len(arr), dtype=bool)
    for k in range(4):
        a, b = quad[k], quad[(k + 1) % 4]
        inside &= (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) > 0
    return np.flatnonzero(~inside)


def convex_hull_indices(points) -> list[int]:
    """Indices of hull vertices in counter-clockwise order (monotone chain).

    Collinear boundary points are not retained.  Raises DegenerateGeometry
    when fewer than three distinct points remain or all are collinear.
    """
    arr = np.asarray(points, dtype=float).reshape(-1, 2)
    cand = _hull_candidates(arr)
    pts = {int(i): (float(arr[i, 0]), float(arr[i, 1])) for i in cand}
    order = sorted(pts, key=lambda i: (pts[i], i))
    # drop exact duplicates, keeping the first occurrence in sorted order
    uniq = []
    for i in order:
        if not uniq or pts[uniq[-1]] != pts[i]:
            uniq.append(i)
    if len(uniq) < 3:
        raise DegenerateGeometry(f"need 3 distinct points, got {len(uniq)}")

    def chain(idx):
        out = []
        for i in idx:
            while len(out) >= 2 and _cross(pts[out[-2]], pts[out[-1]], pts[i]) <= 0:
                out.pop()
            out.append(i)
        return out

    lower = chain(uniq)
    upper = chain(reversed(uniq))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateGeometry("points are collinear")
    return hull


def convex_hull(points) -> list[tuple[float, float]]:
    """Convex hull of planar points as CCW vertex list."""
    pts = [(float(x), float(y)) for x, y in points]
    return [pts[i] for i in convex_hull_indices(pts)]


def polygon_area(vertices) -> float:
    """Signed shoelace area; positive for CCW order."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _wrap_dlon(dlon):
    return (np.asarray(dlon, dtype=float) + 180.0) % 360.0 - 180.0


def local_center(lat: np.ndarray, lon: np.ndarray) -> tuple[float, float]:
    """Mean position, taking longitudes relative to the first point."""
    lon0 = lon[0] + float(np.mean(_wrap_dlon(lon - lon[0])))
    return float(np.mean(lat)), normalize_lon(lon0)


def project_local(lat, lon, lat0: float, lon0: float) -> np.ndarray:
    """Equirectangular projection to meters about (lat0, lon0)."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    x = EARTH_RADIUS_M * np.radians(_wrap_dlon(lon - lon0)) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * np.radians(lat - lat0)
    return np.column_stack([x, y])


def points_in_polygon_xy(xy: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Boundary-inclusive containment test against a CCW convex polygon."""
    inside = np.ones(len(xy), dtype=bool)
    m = len(poly)
    for k in range(m):
        a, b = poly[k], poly[(k + 1) % m]
        edge = b - a
        length = math.hypot(edge[0], edge[1])
        cross = edge[0] * (xy[:, 1] - a[1]) - edge[1] * (xy[:, 0] - a[0])
        inside &= cross >= -BOUNDARY_TOL_M * length
    return inside


def points_in_footprint(lat, lon, footprint: Sequence[Sequence[GeoPoint]]) -> np.ndarray:
    """Vectorized footprint membership for arrays of lat/lon."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    result = np.zeros(len(lat), dtype=bool)
    for poly in footprint:
        plat, plon = _as_latlon(poly)
        lat0, lon0 = local_center(plat, plon)
        verts = project_local(plat, plon, lat0, lon0)
        xy = project_local(lat, lon, lat0, lon0)
        lo = verts.min(axis=0) - 1.0
        hi = verts.max(axis=0) + 1.0
        near = np.all((xy >= lo) & (xy <= hi), axis=1) & ~result
        if near.any():
            result[near] = points_in_polygon_xy(xy[near], verts)
    return result


def point_in_footprint(p: GeoPoint, place: Place) -> bool:
    """True iff ``p`` is inside or on the boundary of any footprint polygon."""
    return bool(points_in_footprint([p.lat], [p.lon], place.footprint)[0])


def construct_place(site_id, photo_points, params: ClusterParams,
                    graph: NeighborGraph | None = None) -> Place:
    """Cluster photo locations and wrap each cluster in a convex polygon.

    ``graph`` may carry a neighbor graph of the same points at
    ``params.eps_m`` so that several min_pts settings can share it.
    """
    lat, lon = _as_latlon(photo_points)
    n = len(lat)
    if n < params.min_pts_floor:
        raise EmptyPlace(f"site {site_id}: {n} points, need at least {params.min_pts_floor}")
    if graph is None:
        graph = neighbor_graph(lat, lon, params.eps_m)
    elif graph.n != n or graph.eps_m != params.eps_m:
        raise ValueError("neighbor graph does not match the points or eps_m")
    assignment = dbscan_graph(graph, params.min_pts(n))

    footprint = []
    members = []
    for idx in assignment.clusters():
        clat, clon = lat[idx], lon[idx]
        xy = project_local(clat, clon, *local_center(clat, clon))
        try:
            hull = convex_hull_indices(xy)
        except DegenerateGeometry:
            continue
        footprint.append(tuple(GeoPoint(clat[h], clon[h]) for h in hull))
        members.append(idx)
    if not footprint:
        raise EmptyPlace(f"site {site_id}: no cluster survived at eps={params.eps_m} m, "
                         f"min_pts={params.min_pts(n)}")

    member_index = np.sort(np.concatenate(members))
    return Place(
        site_id=site_id,
        footprint=footprint,
        params_used=params,
        member_lat=lat[member_index],
        member_lon=lon[member_index],
        member_index=member_index,
    )
