"""Command-line interface: ``placemotion <command> [options]``.

Settings come from built-in defaults, then a flat ``key = value`` config
file (``--config`` or $PLACEMOTION_CONFIG), then command-line flags.
Data goes to files only; diagnostics go to stderr.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 study error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import DataError, InsufficientData, StudyError
from .export import (atomic_open, export_geojson, read_ranking, tags_filename, write_cohorts,
                     write_ranking, write_regression, write_sensitivity, write_stability,
                     write_tags)
from .geo import ClusterParams
from .ingest import (StubScorer, SynthSpec, parse_faces, parse_photos, parse_sites, score_photos,
                     synth_dataset, within_harvest, write_faces, write_photos, write_sites)
from .pipeline import (INDICES, DEFAULT_EPS_M, DEFAULT_MIN_PTS_PCT, build_ranking, cohort_summaries,
                       compare_cohorts, construct_places, regression_study, run_study,
                       sensitivity_grid, stability_curve, tag_frequencies)
from .stats import DEFAULT_REFERENCES, VOCABULARIES, BootstrapConfig, spearman

log = logging.getLogger("placemotion")

ENV_CONFIG = "PLACEMOTION_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_STUDY = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class StudyConfig:
    """Everything a study run needs.  Single-run commands use the first eps and pct."""

    eps_m: tuple[float, ...] = DEFAULT_EPS_M
    min_pts_pct: tuple[float, ...] = DEFAULT_MIN_PTS_PCT
    min_pts_floor: int = 3
    n_resamples: int = 1000
    confidence: float = 0.95
    seed: int = 0
    references: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_REFERENCES))
    sites: str | None = None
    faces: str | None = None
    photos: str | None = None
    out_dir: str = "."
    max_reject_fraction: float = 0.10

    def __post_init__(self):
        if not self.eps_m or not self.min_pts_pct:
            raise UsageError("eps_m and min_pts_pct need at least one value each")
        try:
            for e in self.eps_m:
                for p in self.min_pts_pct:
                    ClusterParams(e, p, self.min_pts_floor)
            self.bootstrap()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for name, level in self.references.items():
            if name not in VOCABULARIES:
                raise UsageError(f"reference for unknown factor {name!r}")
            if level not in VOCABULARIES[name]:
                raise UsageError(f"reference {name}={level!r} not in {list(VOCABULARIES[name])}")
        if not 0 <= self.max_reject_fraction <= 1:
            raise UsageError("max_reject_fraction must be in [0, 1]")

    def bootstrap(self) -> BootstrapConfig:
        return BootstrapConfig(self.n_resamples, self.confidence, self.seed)

    def params(self) -> ClusterParams:
        return ClusterParams(self.eps_m[0], self.min_pts_pct[0], self.min_pts_floor)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


_CONVERTERS = {
    "eps_m": _float_list, "min_pts_pct": _float_list, "min_pts_floor": int,
    "n_resamples": int, "confidence": float, "seed": int, "max_reject_fraction": float,
    "sites": str, "faces": str, "photos": str, "out_dir": str,
}


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment line."""
    values = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not key:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            if key not in _CONVERTERS and not key.startswith("reference."):
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value.strip()
    return values


def build_config(file_values: dict[str, str], overrides: dict) -> StudyConfig:
    """Merge config-file strings with already-typed flag values (flags win)."""
    kwargs: dict = {}
    refs = dict(DEFAULT_REFERENCES)
    for key, text in file_values.items():
        if key.startswith("reference."):
            refs[key.split(".", 1)[1]] = text
            continue
        try:
            kwargs[key] = _CONVERTERS[key](text)
        except ValueError:
            raise UsageError(f"config key {key}: bad value {text!r}") from None
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "references":
            refs.update(value)
        else:
            kwargs[key] = value
    known = {f.name for f in fields(StudyConfig)}
    return StudyConfig(references=refs, **{k: v for k, v in kwargs.items() if k in known})


# -- argument parsing ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _list_arg(text):
    try:
        return _float_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _reference_arg(text):
    name, sep, level = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected factor=level, got {text!r}")
    return name.strip(), level.strip()


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", help=f"config file (default: ${ENV_CONFIG})")
    p.add_argument("--sites")
    p.add_argument("--faces")
    p.add_argument("--photos")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--eps", dest="eps_m", type=_list_arg, help="comma-separated eps values in metres")
    p.add_argument("--pct", dest="min_pts_pct", type=_list_arg,
                   help="comma-separated min_pts fractions, e.g. 0.005,0.01")
    p.add_argument("--min-pts-floor", dest="min_pts_floor", type=int)
    p.add_argument("--resamples", dest="n_resamples", type=int)
    p.add_argument("--confidence", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--reference", dest="references", type=_reference_arg, action="append",
                   help="regression reference level, factor=level (repeatable)")
    p.add_argument("--max-reject-fraction", dest="max_reject_fraction", type=float)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def make_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="placemotion", description="Place-emotion studies from geotagged photos.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("validate", parents=[common], help="parse input files and report problems")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic sites/photos/faces set")
    p.add_argument("--n-sites", type=int, default=20)

    p = sub.add_parser("places", parents=[common], help="export footprints as GeoJSON")
    p.add_argument("--out")

    p = sub.add_parser("score", parents=[common], help="score photos with the deterministic stub")
    p.add_argument("--out")
    p.add_argument("--max-in-flight", type=int, default=8)
    p.add_argument("--max-failure-fraction", type=float, default=0.10)

    p = sub.add_parser("rank", parents=[common], help="rank sites by an emotion index")
    p.add_argument("--index", choices=INDICES, default="ahi")
    p.add_argument("--out")

    p = sub.add_parser("sensitivity", parents=[common], help="parameter grid with Kendall's W")
    p.add_argument("--out")

    p = sub.add_parser("regress", parents=[common], help="correlation screen and OLS on factors")
    p.add_argument("--out")

    p = sub.add_parser("stability", parents=[common], help="CI width against face count")
    p.add_argument("--out")

    p = sub.add_parser("tags", parents=[common], help="top-k tag counts per site")
    p.add_argument("--site", action="append", help="site id (repeatable; default all)")
    p.add_argument("-k", type=int, default=100)

    p = sub.add_parser("compare-rankings", parents=[common],
                       help="Spearman correlation between two ranking files")
    p.add_argument("ranking_a")
    p.add_argument("ranking_b")

    p = sub.add_parser("cohorts", parents=[common], help="tourist minus local index deltas")
    p.add_argument("--out")
    return parser


def _config_from_args(args) -> StudyConfig:
    path = args.config or os.environ.get(ENV_CONFIG)
    file_values = read_config_file(path) if path else {}
    overrides = {f.name: getattr(args, f.name, None) for f in fields(StudyConfig)}
    if args.references:
        overrides["references"] = dict(args.references)
    return build_config(file_values, overrides)


# -- commands -----------------------------------------------------------------

def _need(cfg: StudyConfig, *names):
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        raise UsageError("missing input(s): " + ", ".join(f"--{n}" for n in missing))


def _out(args, cfg: StudyConfig, default: str) -> Path:
    return Path(args.out) if getattr(args, "out", None) else Path(cfg.out_dir) / default


def _load(cfg: StudyConfig, faces=True, photos=False):
    """Parse inputs and drop records outside their site's harvest radius."""
    notes: list[str] = []
    sites = parse_sites(cfg.sites, cfg.max_reject_fraction, notes)
    face_list = photo_list = None
    if faces:
        face_list = within_harvest(parse_faces(cfg.faces, cfg.max_reject_fraction, notes),
                                   sites, notes)
    if photos or cfg.photos:
        photo_list = within_harvest(parse_photos(cfg.photos, cfg.max_reject_fraction, notes),
                                    sites, notes)
    return sites, face_list, photo_list


def _names(sites):
    return {s.site_id: s.name for s in sites}


def _report_excluded(excluded: dict):
    for site_id, reason in excluded.items():
        log.warning("excluded %s: %s", site_id, reason)


def _write_csv(path: Path, writer, payload):
    with atomic_open(path) as handle:
        writer(handle, payload)
    log.info("wrote %s", path)


def cmd_validate(args, cfg):
    if not (cfg.sites or cfg.faces or cfg.photos):
        raise UsageError("validate needs at least one of --sites, --faces, --photos")
    notes: list[str] = []
    known = None
    if cfg.sites:
        sites = parse_sites(cfg.sites, cfg.max_reject_fraction, notes)
        known = {s.site_id for s in sites}
        print(f"sites: {len(sites)} ok", file=sys.stderr)
    for what, path, parse in (("faces", cfg.faces, parse_faces),
                              ("photos", cfg.photos, parse_photos)):
        if not path:
            continue
        records = parse(path, cfg.max_reject_fraction, notes)
        print(f"{what}: {len(records)} ok", file=sys.stderr)
        if known is not None:
            unknown = sorted({r.site_id for r in records} - known)
            if unknown:
                print(f"{what}: unknown site ids {unknown}", file=sys.stderr)
    print(f"rejected rows: {len(notes)}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args, cfg):
    sites, photos, faces = synth_dataset(SynthSpec(n_sites=args.n_sites), cfg.seed)
    out = Path(cfg.out_dir)
    _write_csv(out / "sites.csv", write_sites, sites)
    _write_csv(out / "photos.csv", write_photos, photos)
    _write_csv(out / "faces.csv", write_faces, faces)
    return EXIT_OK


def cmd_places(args, cfg):
    _need(cfg, "sites")
    if not (cfg.faces or cfg.photos):
        raise UsageError("places needs --photos or --faces")
    sites, faces, photos = _load(cfg, faces=bool(cfg.faces))
    places, excluded = construct_places(sites, cfg.params(), faces or (), photos)
    _report_excluded(excluded)
    path = _out(args, cfg, "places.geojson")
    export_geojson(path, list(places.values()), _names(sites))
    return EXIT_OK


def cmd_score(args, cfg):
    _need(cfg, "photos")
    photos = parse_photos(cfg.photos, cfg.max_reject_fraction, [])
    failures: list[str] = []
    faces = score_photos(photos, StubScorer(cfg.seed), args.max_failure_fraction,
                         args.max_in_flight, failures)
    _write_csv(_out(args, cfg, "faces.csv"), write_faces, faces)
    return EXIT_OK


def _study(cfg):
    _need(cfg, "sites", "faces")
    sites, faces, photos = _load(cfg)
    result = run_study(sites, faces, cfg.params(), cfg.bootstrap(), photos)
    _report_excluded(result.excluded)
    return sites, faces, photos, result


def cmd_rank(args, cfg):
    sites, _, _, result = _study(cfg)
    entries = build_ranking(result.summaries, args.index, _names(sites))
    _write_csv(_out(args, cfg, "ranking.csv"), lambda h, e: write_ranking(h, e, args.index), entries)
    return EXIT_OK


def cmd_sensitivity(args, cfg):
    _need(cfg, "sites", "faces")
    sites, faces, photos = _load(cfg)
    report = sensitivity_grid(sites, faces, cfg.eps_m, cfg.min_pts_pct, cfg.bootstrap(), photos,
                              cfg.min_pts_floor, _names(sites))
    for combo, reason in report.failed.items():
        log.warning("combination eps=%s pct=%s failed: %s", combo[0], combo[1], reason)
    _write_csv(_out(args, cfg, "sensitivity.csv"), write_sensitivity, report)
    return EXIT_OK


def cmd_regress(args, cfg):
    sites, _, _, result = _study(cfg)
    regs = regression_study(result.summaries, [s.factors for s in sites], cfg.references)
    _write_csv(_out(args, cfg, "regression.csv"), write_regression, regs)
    return EXIT_OK


def cmd_stability(args, cfg):
    _, _, _, result = _study(cfg)
    curves = [stability_curve(result.summaries, index) for index in INDICES]
    for c in curves:
        if c.degenerate:
            log.warning("%s stability fit is degenerate (zero-width intervals)", c.index)
    _write_csv(_out(args, cfg, "stability.csv"), write_stability, curves)
    return EXIT_OK


def cmd_tags(args, cfg):
    _need(cfg, "photos")
    if args.k < 1:
        raise UsageError("-k must be >= 1")
    photos = parse_photos(cfg.photos, cfg.max_reject_fraction, [])
    site_ids = args.site or sorted({p.site_id for p in photos})
    for site_id in site_ids:
        counts = tag_frequencies(photos, site_id, args.k)
        _write_csv(Path(cfg.out_dir) / tags_filename(site_id), write_tags, counts)
    return EXIT_OK


def cmd_compare_rankings(args, cfg):
    _, a = read_ranking(args.ranking_a)
    _, b = read_ranking(args.ranking_b)
    rank_b = {e.site_id: e.rank for e in b}
    common = [e for e in a if e.site_id in rank_b]
    if len(common) < 2:
        raise InsufficientData(f"rankings share {len(common)} site(s); need >= 2")
    rho = spearman([e.rank for e in common], [rank_b[e.site_id] for e in common])
    print(f"spearman\t{rho:.6f}\tsites\t{len(common)}")
    return EXIT_OK


def cmd_cohorts(args, cfg):
    _, faces, photos, result = _study(cfg)
    kept = [f for f in faces if f.site_id in result.places]
    groups = cohort_summaries(kept, cfg.bootstrap(), photos, result.places)
    cmp = compare_cohorts(groups["tourist"], groups["local"])
    _report_excluded(cmp.excluded)
    _write_csv(_out(args, cfg, "cohorts.csv"), write_cohorts, cmp)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate, "synth": cmd_synth, "places": cmd_places, "score": cmd_score,
    "rank": cmd_rank, "sensitivity": cmd_sensitivity, "regress": cmd_regress,
    "stability": cmd_stability, "tags": cmd_tags, "compare-rankings": cmd_compare_rankings,
    "cohorts": cmd_cohorts,
}


def cli_run(argv=None) -> int:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root = logging.getLogger("placemotion")
    old_level = root.level
    root.addHandler(handler)
    try:
        try:
            args = make_parser().parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        root.setLevel(logging.INFO if args.verbose else logging.WARNING)
        cfg = _config_from_args(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StudyError as exc:
        print(f"study error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STUDY
    finally:
        root.removeHandler(handler)
        root.setLevel(old_level)


def main():
    sys.exit(cli_run(sys.argv[1:]))


if __name__ == "__main__":
    main()
