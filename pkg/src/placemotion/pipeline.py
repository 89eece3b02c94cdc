"""End-to-end studies: places, summaries, rankings, sensitivity and factor analysis."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .affect import EmotionSummary, FaceRecord, summarize_place
from .errors import (EmptyPlace, InsufficientData, NoFaces, SingularDesign, StudyFailed,
                     UndefinedCorrelation)
from .geo import (ClusterParams, NeighborGraph, Place, construct_place, neighbor_graph,
                  points_in_footprint)
from .ingest import LOCAL, TOURIST, classify_users
from .stats import (DEFAULT_REFERENCES, BootstrapConfig, CorrelationScreen, FactorRow,
                    RegressionResult, correlation_screen, dummy_encode, kendalls_w, ols_fit,
                    power_law_fit, rank_with_ties, significance_stars, spearman)

log = logging.getLogger(__name__)

INDICES = ("joy", "ahi")
DEFAULT_EPS_M = (50.0, 100.0, 200.0, 300.0)
DEFAULT_MIN_PTS_PCT = (0.005, 0.01, 0.02)


@dataclass(frozen=True)
class RankingEntry:
    rank: int
    site_id: str
    name: str
    summary: EmotionSummary


@dataclass
class StudyResult:
    params: ClusterParams
    places: dict[str, Place]
    summaries: dict[str, EmotionSummary]
    excluded: dict[str, str]
    faces_kept: dict[str, int] = field(default_factory=dict)


@dataclass
class SensitivityReport:
    grid: list[tuple[float, float]]
    rankings: dict[tuple[float, float], dict[str, list[RankingEntry]]]
    failed: dict[tuple[float, float], str]
    common_sites: list[str]
    w_joy: float
    w_ahi: float
    w_combined: float


@dataclass
class IndexRegression:
    index: str
    screen: CorrelationScreen | None
    screen_error: str | None
    result: RegressionResult


@dataclass
class StabilityCurve:
    index: str
    points: list[tuple[str, int, float]]
    exponent: float
    scale: float
    r_squared: float
    degenerate: bool


@dataclass
class CohortComparison:
    deltas: dict[str, tuple[float, float]]
    mean_ahi_delta: float
    mean_joy_delta: float
    mean_abs_ahi_delta: float
    mean_abs_joy_delta: float
    excluded: dict[str, str]


class _SiteData:
    """Per-site point arrays, grouped once and reused across parameter combos."""

    def __init__(self, site_ids, faces, photos=None):
        self.site_ids = list(site_ids)
        known = set(self.site_ids)
        self.faces: dict[str, list[FaceRecord]] = {s: [] for s in self.site_ids}
        unknown = set()
        for f in faces:
            if f.site_id in known:
                self.faces[f.site_id].append(f)
            else:
                unknown.add(f.site_id)
        if unknown:
            raise StudyFailed(f"faces reference unknown site(s): {sorted(unknown)}")

        points: dict[str, list[tuple[float, float]]] = {s: [] for s in self.site_ids}
        if photos is not None:
            for p in photos:
                if p.site_id in known:
                    points[p.site_id].append((p.location.lat, p.location.lon))
        else:
            # one point per photo, taken from its first face
            seen = set()
            for s in self.site_ids:
                for f in self.faces[s]:
                    if f.photo_id not in seen:
                        seen.add(f.photo_id)
                        points[s].append((f.location.lat, f.location.lon))
        self.points = {s: np.asarray(v, dtype=float).reshape(-1, 2) for s, v in points.items()}
        self.face_lat = {s: np.fromiter((f.location.lat for f in v), float, len(v))
                         for s, v in self.faces.items()}
        self.face_lon = {s: np.fromiter((f.location.lon for f in v), float, len(v))
                         for s, v in self.faces.items()}
        self._graphs: dict[tuple[str, float], NeighborGraph] = {}

    def graph(self, site_id: str, eps_m: float) -> NeighborGraph:
        key = (site_id, eps_m)
        if key not in self._graphs:
            pts = self.points[site_id]
            self._graphs[key] = neighbor_graph(pts[:, 0], pts[:, 1], eps_m)
        return self._graphs[key]

    def forget(self, eps_m: float):
        for key in [k for k in self._graphs if k[1] == eps_m]:
            del self._graphs[key]


def _site_ids(sites) -> list[str]:
    return [s if isinstance(s, str) else s.site_id for s in sites]


def _run(data: _SiteData, params: ClusterParams, cfg: BootstrapConfig) -> StudyResult:
    places, summaries, excluded, kept = {}, {}, {}, {}
    for site_id in data.site_ids:
        try:
            place = construct_place(site_id, data.points[site_id], params,
                                    data.graph(site_id, params.eps_m))
        except EmptyPlace as exc:
            excluded[site_id] = f"EmptyPlace: {exc}"
            continue
        inside = points_in_footprint(data.face_lat[site_id], data.face_lon[site_id], place.footprint)
        faces = [f for f, ok in zip(data.faces[site_id], inside) if ok]
        places[site_id] = place
        kept[site_id] = len(faces)
        try:
            summaries[site_id] = summarize_place(site_id, faces, cfg)
        except NoFaces as exc:
            excluded[site_id] = f"NoFaces: {exc}"
    for site_id, reason in excluded.items():
        log.info("site %s excluded: %s", site_id, reason)
    if not summaries:
        raise StudyFailed(f"no site survived at eps={params.eps_m} m, pct={params.min_pts_pct}")
    return StudyResult(params, places, summaries, excluded, kept)


def run_study(sites, faces: Sequence[FaceRecord], params: ClusterParams, cfg: BootstrapConfig,
              photos=None) -> StudyResult:
    """Construct each site's place, keep faces inside it and summarize them.

    Place footprints are built from ``photos`` when given, otherwise from
    the distinct photo locations carried by the faces.  Sites that fail
    (EmptyPlace, NoFaces) are listed in ``excluded``.
    """
    return _run(_SiteData(_site_ids(sites), faces, photos), params, cfg)


def construct_places(sites, params: ClusterParams, faces: Sequence[FaceRecord] = (),
                     photos=None) -> tuple[dict[str, Place], dict[str, str]]:
    """Footprints only; no emotion summaries.  Returns (places, excluded)."""
    data = _SiteData(_site_ids(sites), faces, photos)
    places, excluded = {}, {}
    for site_id in data.site_ids:
        try:
            places[site_id] = construct_place(site_id, data.points[site_id], params)
        except EmptyPlace as exc:
            excluded[site_id] = f"EmptyPlace: {exc}"
            log.info("site %s excluded: %s", site_id, excluded[site_id])
    if not places:
        raise StudyFailed(f"no site survived at eps={params.eps_m} m, pct={params.min_pts_pct}")
    return places, excluded


def build_ranking(summaries: Sequence[EmotionSummary] | Mapping[str, EmotionSummary],
                  index: str = "ahi", names: Mapping[str, str] | None = None) -> list[RankingEntry]:
    """Descending by the chosen index, ties by ascending site_id."""
    if isinstance(summaries, Mapping):
        summaries = list(summaries.values())
    if index not in INDICES:
        raise ValueError(f"unknown index {index!r}; expected one of {INDICES}")
    names = names or {}
    ordered = sorted(summaries, key=lambda s: (-s.index(index), s.site_id))
    return [RankingEntry(k + 1, s.site_id, names.get(s.site_id, s.site_id), s)
            for k, s in enumerate(ordered)]


def _rank_rows(results: Sequence[StudyResult], common: Sequence[str], index: str) -> np.ndarray:
    return np.array([rank_with_ties([r.summaries[s].index(index) for s in common], "descending")
                     for r in results])


def sensitivity_grid(sites, faces: Sequence[FaceRecord], eps_list: Sequence[float],
                     pct_list: Sequence[float], cfg: BootstrapConfig, photos=None,
                     min_pts_floor: int = 3, names: Mapping[str, str] | None = None
                     ) -> SensitivityReport:
    """Run the study over every (eps, pct) pair and measure ranking concordance.

    Concordance is computed over the sites that survive in every surviving
    combo.  The combined statistic treats the joy and AHI rankings of all
    combos as independent judges.
    """
    if not eps_list or not pct_list:
        raise InsufficientData("parameter grid is empty")
    data = _SiteData(_site_ids(sites), faces, photos)
    grid = [(float(e), float(p)) for e in eps_list for p in pct_list]
    results, rankings, failed = [], {}, {}
    for k, (eps, pct) in enumerate(grid):
        try:
            res = _run(data, ClusterParams(eps, pct, min_pts_floor), cfg)
        except StudyFailed as exc:
            failed[(eps, pct)] = str(exc)
            continue
        finally:
            if k + 1 == len(grid) or grid[k + 1][0] != eps:
                data.forget(eps)
        results.append(res)
        rankings[(eps, pct)] = {ix: build_ranking(res.summaries, ix, names) for ix in INDICES}
    if len(results) < 2:
        raise InsufficientData(f"{len(results)} parameter combination(s) survived; need >= 2")
    common = sorted(set.intersection(*(set(r.summaries) for r in results)))
    if len(common) < 2:
        raise InsufficientData(f"only {len(common)} site(s) survive every combination")
    joy = _rank_rows(results, common, "joy")
    ahi = _rank_rows(results, common, "ahi")
    return SensitivityReport(
        grid=grid, rankings=rankings, failed=failed, common_sites=common,
        w_joy=kendalls_w(joy), w_ahi=kendalls_w(ahi),
        w_combined=kendalls_w(np.vstack([joy, ahi])),
    )


def _align(summaries, factors: Sequence[FactorRow]):
    by_site = {f.site_id: f for f in factors}
    if isinstance(summaries, Mapping):
        summaries = list(summaries.values())
    missing = [s.site_id for s in summaries if s.site_id not in by_site]
    if missing:
        raise StudyFailed(f"no factor row for site(s) {missing}")
    ordered = sorted(summaries, key=lambda s: s.site_id)
    return ordered, [by_site[s.site_id] for s in ordered]


def regression_study(summaries, factors: Sequence[FactorRow],
                     references: Mapping[str, str] | None = None) -> dict[str, IndexRegression]:
    """Correlation screen and dummy-coded OLS of each index on site factors."""
    refs = dict(DEFAULT_REFERENCES)
    refs.update(references or {})
    ordered, rows = _align(summaries, factors)
    X, columns = dummy_encode(rows, refs)
    out = {}
    for index in INDICES:
        y = np.array([s.index(index) for s in ordered])
        try:
            screen, screen_error = correlation_screen(rows, y), None
        except UndefinedCorrelation as exc:
            screen, screen_error = None, str(exc)
        try:
            result = ols_fit(X, y, columns, refs)
        except SingularDesign as exc:
            raise SingularDesign(f"{index}: {exc}", exc.columns) from exc
        out[index] = IndexRegression(index, screen, screen_error, result)
    return out


def coefficient_table(reg: IndexRegression) -> list[tuple[str, float, float, float, str]]:
    """(term, coefficient, std error, p-value, stars) rows, reference levels as N/A."""
    res = reg.result
    rows = [(c, res.coefficients[c], res.std_errors[c], res.p_values[c],
             significance_stars(res.p_values[c])) for c in res.design_columns]
    for name, level in res.references.items():
        rows.append((f"{name}={level}", float("nan"), float("nan"), float("nan"), "N/A"))
    return rows


def stability_curve(summaries, index: str = "ahi") -> StabilityCurve:
    """Power-law fit of bootstrap CI width against face count across sites."""
    if isinstance(summaries, Mapping):
        summaries = list(summaries.values())
    points = [(s.site_id, s.n_faces, s.ci(index)[1] - s.ci(index)[0]) for s in summaries]
    if len(points) < 5:
        raise InsufficientData(f"stability curve needs >= 5 sites, got {len(points)}")
    n = np.array([p[1] for p in points], dtype=float)
    w = np.array([p[2] for p in points], dtype=float)
    if np.any(w <= 0) or np.all(n == n[0]):
        return StabilityCurve(index, points, float("nan"), float("nan"), float("nan"), True)
    exponent, scale, r2 = power_law_fit(n, w)
    return StabilityCurve(index, points, exponent, scale, r2, False)


def tag_frequencies(photos, site_id: str, k: int) -> list[tuple[str, int]]:
    """Top-k case-folded tags at a site, by count then tag."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = Counter(t.casefold() for p in photos if p.site_id == site_id for t in p.tags)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def cohort_summaries(faces: Sequence[FaceRecord], cfg: BootstrapConfig, photos=None,
                     places: Mapping[str, Place] | None = None
                     ) -> dict[str, dict[str, EmotionSummary]]:
    """Per-site summaries for tourist and local faces separately.

    Users are labeled from their photos at the site (or from their faces
    when no photos are given).  With ``places``, only faces inside the
    site's footprint count.
    """
    labels = classify_users(photos if photos is not None else faces)
    groups: dict[str, dict[str, list[FaceRecord]]] = {TOURIST: {}, LOCAL: {}}
    for f in faces:
        cohort = labels.get((f.site_id, f.user_id), TOURIST)
        groups[cohort].setdefault(f.site_id, []).append(f)
    if places is not None:
        for cohort in groups:
            for site_id in list(groups[cohort]):
                group = groups[cohort][site_id]
                place = places.get(site_id)
                if place is None:
                    del groups[cohort][site_id]
                    continue
                inside = points_in_footprint([f.location.lat for f in group],
                                             [f.location.lon for f in group], place.footprint)
                groups[cohort][site_id] = [f for f, ok in zip(group, inside) if ok]
    return {cohort: {s: summarize_place(s, fs, cfg) for s, fs in sorted(by_site.items()) if fs}
            for cohort, by_site in groups.items()}


def compare_cohorts(tourists: Mapping[str, EmotionSummary],
                    locals_: Mapping[str, EmotionSummary]) -> CohortComparison:
    """Tourist minus local index deltas per site present in both cohorts."""
    deltas, excluded = {}, {}
    for site_id in sorted(set(tourists) | set(locals_)):
        if site_id not in tourists or site_id not in locals_:
            excluded[site_id] = "missing tourist cohort" if site_id not in tourists \
                else "missing local cohort"
            continue
        t, loc = tourists[site_id], locals_[site_id]
        deltas[site_id] = (t.ahi - loc.ahi, t.joy_index - loc.joy_index)
    if not deltas:
        raise InsufficientData("no site has both tourist and local faces")
    ahi = np.array([d[0] for d in deltas.values()])
    joy = np.array([d[1] for d in deltas.values()])
    return CohortComparison(deltas, float(ahi.mean()), float(joy.mean()),
                            float(np.abs(ahi).mean()), float(np.abs(joy).mean()), excluded)


def ranking_agreement(summaries) -> float:
    """Spearman correlation between the joy-based and AHI-based orderings."""
    if isinstance(summaries, Mapping):
        summaries = list(summaries.values())
    return spearman([s.joy_index for s in summaries], [s.ahi for s in summaries])


def is_finite(x: float) -> bool:
    return x is not None and not math.isnan(x) and not math.isinf(x)
