"""Writers and readers for every study output file.

CSV floats are written with repr so that reading a file back gives the
exact values that were written.  Missing values are empty cells.
GeoJSON coordinates are lon-first, as the format requires, even though
the input CSVs carry lat before lon.
"""

from __future__ import annotations

import contextlib
import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .affect import EmotionSummary
from .errors import SchemaError
from .geo import ClusterParams, GeoPoint, Place
from .ingest import _write_rows, format_float
from .pipeline import (INDICES, CohortComparison, IndexRegression, RankingEntry,
                       SensitivityReport, StabilityCurve, coefficient_table)

RANKING_COLUMNS = ("rank", "site_id", "name", "index", "value", "joy_index", "joy_ci_low",
                   "joy_ci_high", "ahi", "ahi_ci_low", "ahi_ci_high", "n_faces", "n_smiling",
                   "n_nonsmiling")
SENSITIVITY_COLUMNS = ("record", "eps_m", "min_pts_pct", "index", "rank", "site_id", "value",
                       "n_sites", "status", "detail")
REGRESSION_COLUMNS = ("index", "record", "term", "estimate", "std_error", "p_value", "stars",
                      "note")
STABILITY_COLUMNS = ("index", "record", "site_id", "n_faces", "ci_width", "statistic", "value")
TAG_COLUMNS = ("rank", "tag", "count")
COHORT_COLUMNS = ("record", "site_id", "ahi_delta", "joy_delta", "note")


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


@contextlib.contextmanager
def atomic_open(path):
    """Text handle on a temp file that replaces ``path`` only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as handle:
            yield handle
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _f(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format_float(x)


def _pf(text: str) -> float:
    text = text.strip()
    if not text:
        return float("nan")
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"not a number: {text!r}") from None


def _pi(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise SchemaError(f"not an integer: {text!r}") from None


def _table(source, columns: Sequence[str], what: str) -> list[dict]:
    handle = open(source, newline="", encoding="utf-8") if isinstance(source, (str, Path)) \
        else source
    try:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != tuple(columns):
            raise SchemaError(f"{what}: header {reader.fieldnames} != expected {list(columns)}")
        rows = list(reader)
    finally:
        if handle is not source:
            handle.close()
    for k, row in enumerate(rows):
        if None in row or any(v is None for v in row.values()):
            raise SchemaError(f"{what}: row {k + 2} has the wrong number of fields")
    return rows


# -- ranking ------------------------------------------------------------------

def write_ranking(dest, entries: Sequence[RankingEntry], index: str):
    _write_rows(dest, RANKING_COLUMNS, (
        [str(e.rank), e.site_id, e.name, index, _f(e.summary.index(index)),
         _f(e.summary.joy_index), _f(e.summary.joy_ci[0]), _f(e.summary.joy_ci[1]),
         _f(e.summary.ahi), _f(e.summary.ahi_ci[0]), _f(e.summary.ahi_ci[1]),
         str(e.summary.n_faces), str(e.summary.n_smiling), str(e.summary.n_nonsmiling)]
        for e in entries))


def read_ranking(source) -> tuple[str | None, list[RankingEntry]]:
    """Returns (index, entries); index is None for an empty ranking."""
    rows = _table(source, RANKING_COLUMNS, "ranking")
    indices = {r["index"] for r in rows}
    if len(indices) > 1:
        raise SchemaError(f"ranking mixes indices {sorted(indices)}")
    entries = []
    for r in rows:
        summary = EmotionSummary(
            site_id=r["site_id"], joy_index=_pf(r["joy_index"]), ahi=_pf(r["ahi"]),
            n_faces=_pi(r["n_faces"]), n_smiling=_pi(r["n_smiling"]),
            n_nonsmiling=_pi(r["n_nonsmiling"]),
            joy_ci=(_pf(r["joy_ci_low"]), _pf(r["joy_ci_high"])),
            ahi_ci=(_pf(r["ahi_ci_low"]), _pf(r["ahi_ci_high"])))
        entries.append(RankingEntry(_pi(r["rank"]), r["site_id"], r["name"], summary))
    return (indices.pop() if indices else None), entries


# -- sensitivity --------------------------------------------------------------

@dataclass
class SensitivityTable:
    grid: list[tuple[float, float]]
    n_sites: dict[tuple[float, float], int]
    failed: dict[tuple[float, float], str]
    rankings: dict[tuple[float, float], dict[str, list[tuple[int, str, float]]]]
    n_common: int
    w: dict[str, float]


def write_sensitivity(dest, report: SensitivityReport):
    rows = []
    for combo in report.grid:
        eps, pct = combo
        if combo in report.failed:
            rows.append(["combo", _f(eps), _f(pct), "", "", "", "", "0", "failed",
                         report.failed[combo]])
            continue
        ranks = report.rankings[combo]
        rows.append(["combo", _f(eps), _f(pct), "", "", "", "", str(len(ranks["joy"])), "ok", ""])
    judges = len(report.grid) - len(report.failed)
    for name, value, m in (("joy", report.w_joy, judges), ("ahi", report.w_ahi, judges),
                           ("combined", report.w_combined, 2 * judges)):
        rows.append(["concordance", "", "", name, "", "", _f(value),
                     str(len(report.common_sites)), "ok", f"{m} rankings"])
    for combo in report.grid:
        if combo in report.failed:
            continue
        for index in INDICES:
            for e in report.rankings[combo][index]:
                rows.append(["rank", _f(combo[0]), _f(combo[1]), index, str(e.rank), e.site_id,
                             _f(e.summary.index(index)), "", "", ""])
    _write_rows(dest, SENSITIVITY_COLUMNS, rows)


def read_sensitivity(source) -> SensitivityTable:
    table = SensitivityTable([], {}, {}, {}, 0, {})
    for r in _table(source, SENSITIVITY_COLUMNS, "sensitivity"):
        kind = r["record"]
        if kind == "combo":
            combo = (_pf(r["eps_m"]), _pf(r["min_pts_pct"]))
            table.grid.append(combo)
            table.n_sites[combo] = _pi(r["n_sites"])
            if r["status"] == "failed":
                table.failed[combo] = r["detail"]
        elif kind == "concordance":
            table.w[r["index"]] = _pf(r["value"])
            table.n_common = _pi(r["n_sites"])
        elif kind == "rank":
            combo = (_pf(r["eps_m"]), _pf(r["min_pts_pct"]))
            table.rankings.setdefault(combo, {}).setdefault(r["index"], []).append(
                (_pi(r["rank"]), r["site_id"], _pf(r["value"])))
        else:
            raise SchemaError(f"sensitivity: unknown record type {kind!r}")
    return table


# -- regression ---------------------------------------------------------------

@dataclass
class RegressionTable:
    index: str
    coefficients: dict[str, tuple[float, float, float, str]]
    references: dict[str, str]
    r_squared: float
    f_pvalue: float
    n_sites: int
    screen: dict[str, float]
    skipped: dict[str, str]
    screen_error: str | None


def write_regression(dest, regressions: Mapping[str, IndexRegression]):
    rows = []
    for index, reg in regressions.items():
        res = reg.result
        for term, est, se, p, stars in coefficient_table(reg):
            if stars == "N/A":
                rows.append([index, "reference", term, "", "", "", "N/A", ""])
            else:
                rows.append([index, "coefficient", term, _f(est), _f(se), _f(p), stars, ""])
        rows.append([index, "fit", "r_squared", _f(res.r_squared), "", "", "", ""])
        rows.append([index, "fit", "f_pvalue", _f(res.f_pvalue), "", "", "", ""])
        rows.append([index, "fit", "n_sites", str(len(res.fitted)), "", "", "", ""])
        if reg.screen is None:
            rows.append([index, "screen_error", "", "", "", "", "", reg.screen_error or ""])
        else:
            for term, r in reg.screen.coefficients.items():
                rows.append([index, "screen", term, _f(r), "", "", "", ""])
            for term, why in reg.screen.skipped.items():
                rows.append([index, "skipped", term, "", "", "", "", why])
    _write_rows(dest, REGRESSION_COLUMNS, rows)


def read_regression(source) -> dict[str, RegressionTable]:
    out: dict[str, RegressionTable] = {}
    for r in _table(source, REGRESSION_COLUMNS, "regression"):
        index = r["index"]
        t = out.setdefault(index, RegressionTable(index, {}, {}, float("nan"), float("nan"),
                                                  0, {}, {}, None))
        kind, term = r["record"], r["term"]
        if kind == "coefficient":
            t.coefficients[term] = (_pf(r["estimate"]), _pf(r["std_error"]),
                                    _pf(r["p_value"]), r["stars"])
        elif kind == "reference":
            name, _, level = term.partition("=")
            t.references[name] = level
        elif kind == "fit":
            if term == "n_sites":
                t.n_sites = _pi(r["estimate"])
            elif term in ("r_squared", "f_pvalue"):
                setattr(t, term, _pf(r["estimate"]))
            else:
                raise SchemaError(f"regression: unknown fit statistic {term!r}")
        elif kind == "screen":
            t.screen[term] = _pf(r["estimate"])
        elif kind == "skipped":
            t.skipped[term] = r["note"]
        elif kind == "screen_error":
            t.screen_error = r["note"]
        else:
            raise SchemaError(f"regression: unknown record type {kind!r}")
    return out


# -- stability ----------------------------------------------------------------

def write_stability(dest, curves: Sequence[StabilityCurve]):
    rows = []
    for c in curves:
        for site_id, n, width in c.points:
            rows.append([c.index, "point", site_id, str(n), _f(width), "", ""])
        for name in ("exponent", "scale", "r_squared"):
            rows.append([c.index, "fit", "", "", "", name, _f(getattr(c, name))])
        rows.append([c.index, "fit", "", "", "", "degenerate", "true" if c.degenerate else "false"])
    _write_rows(dest, STABILITY_COLUMNS, rows)


def read_stability(source) -> list[StabilityCurve]:
    curves: dict[str, dict] = {}
    for r in _table(source, STABILITY_COLUMNS, "stability"):
        c = curves.setdefault(r["index"], {"points": [], "exponent": float("nan"),
                                           "scale": float("nan"), "r_squared": float("nan"),
                                           "degenerate": False})
        if r["record"] == "point":
            c["points"].append((r["site_id"], _pi(r["n_faces"]), _pf(r["ci_width"])))
        elif r["record"] == "fit" and r["statistic"] == "degenerate":
            if r["value"] not in ("true", "false"):
                raise SchemaError(f"stability: bad degenerate flag {r['value']!r}")
            c["degenerate"] = r["value"] == "true"
        elif r["record"] == "fit" and r["statistic"] in ("exponent", "scale", "r_squared"):
            c[r["statistic"]] = _pf(r["value"])
        else:
            raise SchemaError(f"stability: unknown row {r['record']}/{r['statistic']}")
    return [StabilityCurve(index, **c) for index, c in curves.items()]


# -- tags ---------------------------------------------------------------------

def write_tags(dest, counts: Sequence[tuple[str, int]]):
    _write_rows(dest, TAG_COLUMNS, ([str(k + 1), tag, str(n)] for k, (tag, n) in enumerate(counts)))


def read_tags(source) -> list[tuple[str, int]]:
    return [(r["tag"], _pi(r["count"])) for r in _table(source, TAG_COLUMNS, "tags")]


def tags_filename(site_id: str) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in site_id)
    return f"tags_{safe}.csv"


# -- cohorts ------------------------------------------------------------------

def write_cohorts(dest, cmp: CohortComparison):
    rows = [["site", s, _f(a), _f(j), ""] for s, (a, j) in cmp.deltas.items()]
    rows.append(["mean", "", _f(cmp.mean_ahi_delta), _f(cmp.mean_joy_delta), "tourist - local"])
    rows.append(["mean_abs", "", _f(cmp.mean_abs_ahi_delta), _f(cmp.mean_abs_joy_delta), ""])
    rows.extend(["excluded", s, "", "", why] for s, why in cmp.excluded.items())
    _write_rows(dest, COHORT_COLUMNS, rows)


def read_cohorts(source) -> CohortComparison:
    deltas, excluded, means = {}, {}, {}
    for r in _table(source, COHORT_COLUMNS, "cohorts"):
        kind = r["record"]
        if kind == "site":
            deltas[r["site_id"]] = (_pf(r["ahi_delta"]), _pf(r["joy_delta"]))
        elif kind in ("mean", "mean_abs"):
            means[kind] = (_pf(r["ahi_delta"]), _pf(r["joy_delta"]))
        elif kind == "excluded":
            excluded[r["site_id"]] = r["note"]
        else:
            raise SchemaError(f"cohorts: unknown record type {kind!r}")
    if set(means) != {"mean", "mean_abs"}:
        raise SchemaError("cohorts: summary rows missing")
    return CohortComparison(deltas, means["mean"][0], means["mean"][1],
                            means["mean_abs"][0], means["mean_abs"][1], excluded)


# -- GeoJSON ------------------------------------------------------------------

@dataclass
class ExportedPlace:
    """A footprint read back from GeoJSON; usable with point_in_footprint."""

    site_id: str
    name: str
    footprint: list[tuple[GeoPoint, ...]]
    params_used: ClusterParams
    n_member_points: int

    @property
    def n_polygons(self) -> int:
        return len(self.footprint)


def _ring(poly) -> list[list[float]]:
    ring = [[v.lon, v.lat] for v in poly]
    return ring + [ring[0]]


def geojson_dict(places: Sequence[Place], names: Mapping[str, str] | None = None) -> dict:
    names = names or {}
    features = []
    for p in places:
        params = p.params_used
        features.append({
            "type": "Feature",
            "geometry": {"type": "MultiPolygon",
                         "coordinates": [[_ring(poly)] for poly in p.footprint]},
            "properties": {
                "site_id": p.site_id,
                "name": names.get(p.site_id, p.site_id),
                "n_polygons": p.n_polygons,
                "n_member_points": int(len(p.member_index)),
                "params_used": {"eps_m": params.eps_m, "min_pts_pct": params.min_pts_pct,
                                "min_pts_floor": params.min_pts_floor},
            },
        })
    return {"type": "FeatureCollection", "features": features}


def export_geojson(dest, places: Sequence[Place], names: Mapping[str, str] | None = None):
    """One MultiPolygon Feature per place, [lon, lat] positions, closed rings."""
    text = json.dumps(geojson_dict(places, names), indent=1, ensure_ascii=False) + "\n"
    if isinstance(dest, (str, Path)):
        with atomic_open(dest) as handle:
            handle.write(text)
    else:
        dest.write(text)


def read_geojson(source) -> list[ExportedPlace]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as handle:
            doc = json.load(handle)
    else:
        doc = json.load(source)
    if doc.get("type") != "FeatureCollection":
        raise SchemaError("expected a GeoJSON FeatureCollection")
    out = []
    for feat in doc.get("features", []):
        geom, props = feat.get("geometry") or {}, feat.get("properties") or {}
        if geom.get("type") != "MultiPolygon":
            raise SchemaError(f"expected MultiPolygon geometry, got {geom.get('type')!r}")
        footprint = []
        for polygon in geom["coordinates"]:
            ring = polygon[0]
            if len(ring) < 4 or ring[0] != ring[-1]:
                raise SchemaError("polygon ring is not closed")
            footprint.append(tuple(GeoPoint(lat, lon) for lon, lat in ring[:-1]))
        pu = props["params_used"]
        out.append(ExportedPlace(
            site_id=props["site_id"], name=props["name"], footprint=footprint,
            params_used=ClusterParams(pu["eps_m"], pu["min_pts_pct"], pu["min_pts_floor"]),
            n_member_points=int(props["n_member_points"]),
        ))
    return out
