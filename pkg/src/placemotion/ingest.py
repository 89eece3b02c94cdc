"""Record schemas, CSV ingestion, the emotion-scorer boundary and synthetic data.

All CSV files are UTF-8, comma-delimited with RFC-4180 quoting and a
mandatory header.  Invalid rows are rejected (never repaired) and reported
with their line number; ingestion aborts when the rejected share exceeds
``max_reject_fraction``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .affect import EMOTION_FIELDS, EmotionStructure, FaceRecord
from .errors import IngestAborted, SchemaError, ScoringAborted, VocabularyError
from .geo import EARTH_RADIUS_M, GeoPoint, haversine_array
from .stats import CONTINENTS, FactorRow, SITE_TYPES

log = logging.getLogger(__name__)

FACE_COLUMNS = ("photo_id", "user_id", "site_id", "lat", "lon", "timestamp_iso8601", "face_id",
                "smile_value", "smile_threshold") + EMOTION_FIELDS
SITE_COLUMNS = ("site_id", "name", "lat", "lon", "harvest_radius_m", "continent", "country",
                "space", "setting", "type", "water", "water_distance_m", "ndvi")
PHOTO_COLUMNS = ("photo_id", "user_id", "site_id", "lat", "lon", "timestamp_iso8601", "tags")

DEFAULT_HARVEST_RADIUS_M = 1000.0
DEFAULT_MAX_REJECT_FRACTION = 0.10
LOCAL_SPAN = timedelta(days=31)

TOURIST = "tourist"
LOCAL = "local"


@dataclass(frozen=True)
class PhotoRecord:
    photo_id: str
    user_id: str
    site_id: str
    location: GeoPoint
    timestamp: datetime
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class SiteRecord:
    site_id: str
    name: str
    center: GeoPoint
    factors: FactorRow
    harvest_radius_m: float = DEFAULT_HARVEST_RADIUS_M

    def __post_init__(self):
        if not self.harvest_radius_m > 0:
            raise SchemaError(f"harvest_radius_m must be > 0, got {self.harvest_radius_m}")


# -- value codecs -------------------------------------------------------------

def parse_timestamp(text: str) -> datetime:
    """ISO-8601 to an aware UTC datetime; naive values are taken as UTC."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def format_float(x: float) -> str:
    # repr is the shortest string that round-trips
    return repr(float(x))


def _float(row, name):
    text = row[name].strip()
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{name}: not a number: {text!r}") from None
    if math.isnan(value) or math.isinf(value):
        raise ValueError(f"{name}: not finite: {text!r}")
    return value


def _text(row, name):
    value = row[name].strip()
    if not value:
        raise ValueError(f"{name}: empty")
    return value


# -- generic reader -----------------------------------------------------------

def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8")
    return source


def _read_rows(source, columns: Sequence[str], build: Callable, what: str,
               max_reject_fraction: float, diagnostics: list | None,
               required: Sequence[str] | None = None):
    handle = _open_text(source)
    try:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [c for c in (required or columns) if c not in header]
        if missing:
            raise SchemaError(f"{what}: missing required column(s) {missing}; "
                              f"expected {list(columns)}")
        records, rejects, total = [], [], 0
        for row in reader:
            total += 1
            try:
                if None in row:
                    raise ValueError("row has more fields than the header")
                records.append(build(row))
            except VocabularyError as exc:
                raise VocabularyError(f"{what} line {reader.line_num}: {exc}") from None
            except (ValueError, TypeError, SchemaError) as exc:
                rejects.append(f"{what} line {reader.line_num}: {exc}")
    finally:
        if handle is not source:
            handle.close()
    for message in rejects:
        log.warning(message)
    if diagnostics is not None:
        diagnostics.extend(rejects)
    if total and len(rejects) / total > max_reject_fraction:
        raise IngestAborted(f"{what}: rejected {len(rejects)} of {total} rows "
                            f"(> {max_reject_fraction:.0%}); first: {rejects[0]}")
    return records


def _write_rows(dest, columns: Sequence[str], rows: Iterable[Sequence[str]]):
    handle = open(dest, "w", newline="", encoding="utf-8") if isinstance(dest, (str, Path)) else dest
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
    finally:
        if handle is not dest:
            handle.close()


# -- faces --------------------------------------------------------------------

def _face_from_row(row) -> FaceRecord:
    emotion = EmotionStructure(**{name: _float(row, name) for name in EMOTION_FIELDS})
    return FaceRecord(
        photo_id=_text(row, "photo_id"),
        face_id=_text(row, "face_id"),
        user_id=_text(row, "user_id"),
        site_id=_text(row, "site_id"),
        location=GeoPoint(_float(row, "lat"), _float(row, "lon")),
        timestamp=parse_timestamp(row["timestamp_iso8601"]),
        smile_value=_float(row, "smile_value"),
        smile_threshold=_float(row, "smile_threshold"),
        emotion=emotion,
    )


def parse_faces(source, max_reject_fraction: float = DEFAULT_MAX_REJECT_FRACTION,
                diagnostics: list | None = None) -> list[FaceRecord]:
    seen = set()

    def build(row):
        face = _face_from_row(row)
        key = (face.photo_id, face.face_id)
        if key in seen:
            raise ValueError(f"duplicate face {face.photo_id}/{face.face_id}")
        seen.add(key)
        return face

    return _read_rows(source, FACE_COLUMNS, build, "faces", max_reject_fraction, diagnostics)


def face_row(f: FaceRecord) -> list[str]:
    return [f.photo_id, f.user_id, f.site_id, format_float(f.location.lat),
            format_float(f.location.lon), format_timestamp(f.timestamp), f.face_id,
            format_float(f.smile_value), format_float(f.smile_threshold)] + \
        [format_float(getattr(f.emotion, name)) for name in EMOTION_FIELDS]


def write_faces(dest, faces: Iterable[FaceRecord]):
    _write_rows(dest, FACE_COLUMNS, (face_row(f) for f in faces))


# -- photos -------------------------------------------------------------------

def _split_tags(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(";") if t.strip())


def parse_photos(source, max_reject_fraction: float = DEFAULT_MAX_REJECT_FRACTION,
                 diagnostics: list | None = None) -> list[PhotoRecord]:
    seen = set()

    def build(row):
        photo = PhotoRecord(
            photo_id=_text(row, "photo_id"),
            user_id=_text(row, "user_id"),
            site_id=_text(row, "site_id"),
            location=GeoPoint(_float(row, "lat"), _float(row, "lon")),
            timestamp=parse_timestamp(row["timestamp_iso8601"]),
            tags=_split_tags(row.get("tags") or ""),
        )
        if photo.photo_id in seen:
            raise ValueError(f"duplicate photo_id {photo.photo_id}")
        seen.add(photo.photo_id)
        return photo

    return _read_rows(source, PHOTO_COLUMNS, build, "photos", max_reject_fraction, diagnostics,
                      required=PHOTO_COLUMNS[:-1])


def write_photos(dest, photos: Iterable[PhotoRecord]):
    _write_rows(dest, PHOTO_COLUMNS, (
        [p.photo_id, p.user_id, p.site_id, format_float(p.location.lat),
         format_float(p.location.lon), format_timestamp(p.timestamp), ";".join(p.tags)]
        for p in photos))


# -- sites --------------------------------------------------------------------

def parse_sites(source, max_reject_fraction: float = DEFAULT_MAX_REJECT_FRACTION,
                diagnostics: list | None = None) -> list[SiteRecord]:
    """Sites with their factor rows.  Category vocabularies are enforced."""
    seen = set()

    def build(row):
        site_id = _text(row, "site_id")
        if site_id in seen:
            raise ValueError(f"duplicate site_id {site_id}")
        radius = row["harvest_radius_m"].strip()
        factors = FactorRow(
            site_id=site_id,
            continent=row["continent"].strip(),
            space=row["space"].strip(),
            setting=row["setting"].strip(),
            type=row["type"].strip(),
            water=row["water"].strip(),
            water_distance_m=_float(row, "water_distance_m"),
            ndvi=_float(row, "ndvi"),
            country=row["country"].strip(),
        )
        site = SiteRecord(
            site_id=site_id,
            name=row["name"].strip(),
            center=GeoPoint(_float(row, "lat"), _float(row, "lon")),
            factors=factors,
            harvest_radius_m=float(radius) if radius else DEFAULT_HARVEST_RADIUS_M,
        )
        seen.add(site_id)
        return site

    return _read_rows(source, SITE_COLUMNS, build, "sites", max_reject_fraction, diagnostics)


def write_sites(dest, sites: Iterable[SiteRecord]):
    _write_rows(dest, SITE_COLUMNS, (
        [s.site_id, s.name, format_float(s.center.lat), format_float(s.center.lon),
         format_float(s.harvest_radius_m), s.factors.continent, s.factors.country,
         s.factors.space, s.factors.setting, s.factors.type, s.factors.water,
         format_float(s.factors.water_distance_m), format_float(s.factors.ndvi)]
        for s in sites))


def validate_category(name: str, value: str):
    """Raise SchemaError naming the vocabulary if ``value`` is unknown."""
    FactorRow(site_id="-", continent=value if name == "continent" else CONTINENTS[0],
              space=value if name == "space" else "open",
              setting=value if name == "setting" else "urban",
              type=value if name == "type" else SITE_TYPES[0],
              water=value if name == "water" else "present",
              water_distance_m=0.0, ndvi=0.0)


# -- harvest radius -----------------------------------------------------------

def within_harvest(records: Sequence, sites: Sequence[SiteRecord],
                   diagnostics: list | None = None) -> list:
    """Keep photos/faces within their site's harvest radius of its center.

    Records whose site_id is unknown are dropped and reported too.
    """
    by_id = {s.site_id: s for s in sites}
    kept, dropped_unknown, dropped_far = [], 0, 0
    groups: dict[str, list] = {}
    for r in records:
        if r.site_id not in by_id:
            dropped_unknown += 1
            continue
        groups.setdefault(r.site_id, []).append(r)
    keep_ids = set()
    for site_id, group in groups.items():
        site = by_id[site_id]
        lat = np.fromiter((r.location.lat for r in group), dtype=float, count=len(group))
        lon = np.fromiter((r.location.lon for r in group), dtype=float, count=len(group))
        d = haversine_array(site.center.lat, site.center.lon, lat, lon)
        ok = d <= site.harvest_radius_m
        dropped_far += int((~ok).sum())
        keep_ids.update(id(r) for r, flag in zip(group, ok) if flag)
    kept = [r for r in records if id(r) in keep_ids]
    notes = []
    if dropped_unknown:
        notes.append(f"{dropped_unknown} record(s) reference unknown sites")
    if dropped_far:
        notes.append(f"{dropped_far} record(s) outside the harvest radius")
    for note in notes:
        log.info(note)
    if diagnostics is not None:
        diagnostics.extend(notes)
    return kept


# -- tourist / local ----------------------------------------------------------

def classify_user(photos_of_user_at_site: Sequence) -> str:
    """``local`` iff the user's timestamps at the site span more than 31 days."""
    if not photos_of_user_at_site:
        raise ValueError("classify_user needs at least one photo")
    stamps = [p.timestamp for p in photos_of_user_at_site]
    return LOCAL if max(stamps) - min(stamps) > LOCAL_SPAN else TOURIST


def classify_users(records: Iterable) -> dict[tuple[str, str], str]:
    """Label every (site_id, user_id) pair seen in ``records``."""
    groups: dict[tuple[str, str], list] = {}
    for r in records:
        groups.setdefault((r.site_id, r.user_id), []).append(r)
    return {key: classify_user(group) for key, group in groups.items()}


# -- scorer boundary ----------------------------------------------------------

@dataclass(frozen=True)
class ScorerRequest:
    photo_id: str
    uri: str = ""
    payload: bytes | None = None


@dataclass(frozen=True)
class DetectedFace:
    smile_value: float
    smile_threshold: float
    emotion: EmotionStructure
    bbox: tuple[float, float, float, float] | None = None


@dataclass(frozen=True)
class ScorerResponse:
    photo_id: str
    faces: tuple[DetectedFace, ...] = ()


class EmotionScorer(Protocol):
    def score(self, request: ScorerRequest) -> ScorerResponse: ...


def _emotion_from(rng: np.random.Generator, happiness: float) -> EmotionStructure:
    """Emotion structure with the given happiness and the rest split randomly."""
    happiness = round(float(np.clip(happiness, 0.0, 100.0)), 2)
    rest = 100.0 - happiness
    shares = rng.dirichlet(np.ones(6)) * rest
    others = [round(float(v), 2) for v in shares]
    # put the rounding residue on the largest share so nothing goes negative
    k = int(np.argmax(others))
    others[k] = round(others[k] + (rest - sum(others)), 2)
    values = dict(zip([f for f in EMOTION_FIELDS if f != "happiness"], others))
    return EmotionStructure(happiness=happiness, **values)


class StubScorer:
    """Deterministic stand-in for a cloud face/emotion API.

    Each photo's result is a pure function of ``(photo_id, seed)``.
    """

    def __init__(self, seed: int = 0, mean_faces: float = 0.6, max_faces: int = 4,
                 threshold: float = 50.0):
        self.seed = seed
        self.mean_faces = mean_faces
        self.max_faces = max_faces
        self.threshold = threshold

    def _rng(self, photo_id: str) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}:{photo_id}".encode("utf-8")).digest()
        return np.random.default_rng(int.from_bytes(digest[:16], "little"))

    def score(self, request: ScorerRequest) -> ScorerResponse:
        rng = self._rng(request.photo_id)
        k = min(self.max_faces, int(rng.poisson(self.mean_faces)))
        faces = []
        for _ in range(k):
            latent = rng.normal(40.0, 22.0)
            smile = float(np.clip(latent + rng.normal(5.0, 12.0), 0.0, 100.0))
            faces.append(DetectedFace(round(smile, 2), self.threshold, _emotion_from(rng, latent)))
        return ScorerResponse(request.photo_id, tuple(faces))


class FixedScorer:
    """Returns the same face list for every photo (tests and demos)."""

    def __init__(self, faces: Sequence[DetectedFace], overrides: dict | None = None):
        self.faces = tuple(faces)
        self.overrides = dict(overrides or {})

    def score(self, request: ScorerRequest) -> ScorerResponse:
        return ScorerResponse(request.photo_id,
                              tuple(self.overrides.get(request.photo_id, self.faces)))


def score_photos(photos: Sequence[PhotoRecord], scorer: EmotionScorer,
                 max_failure_fraction: float = 0.10, max_in_flight: int = 8,
                 failures: list | None = None) -> list[FaceRecord]:
    """Score every photo and flatten detected faces into FaceRecords.

    Faces inherit the photo's location, time, user and site.  Per-photo
    scorer errors are recorded and skipped.  Output order follows input
    order regardless of completion order.
    """
    def call(photo):
        try:
            return scorer.score(ScorerRequest(photo.photo_id)), None
        except Exception as exc:  # scorer failures are data, not crashes
            return None, f"photo {photo.photo_id}: {type(exc).__name__}: {exc}"

    if max_in_flight > 1 and len(photos) > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(call, photos))
    else:
        results = [call(p) for p in photos]

    errors = [err for _, err in results if err]
    for err in errors:
        log.warning("scorer failed for %s", err)
    if failures is not None:
        failures.extend(errors)
    if photos and len(errors) / len(photos) > max_failure_fraction:
        raise ScoringAborted(f"scorer failed on {len(errors)} of {len(photos)} photos")

    faces = []
    for photo, (response, _) in zip(photos, results):
        if response is None:
            continue
        for k, det in enumerate(response.faces):
            faces.append(FaceRecord(
                photo_id=photo.photo_id,
                face_id=f"{photo.photo_id}-f{k}",
                user_id=photo.user_id,
                site_id=photo.site_id,
                location=photo.location,
                timestamp=photo.timestamp,
                smile_value=det.smile_value,
                smile_threshold=det.smile_threshold,
                emotion=det.emotion,
            ))
    return faces


# -- synthetic data -----------------------------------------------------------

# Archetype happiness means are generator parameters, not empirical claims.
ARCHETYPE_HAPPINESS = {
    "amusement": 55.0,
    "natural": 46.0,
    "cultural": 38.0,
    "palace": 33.0,
    "museum": 29.0,
    "religious": 25.0,
}

_TAG_WORDS = ("travel", "holiday", "vacation", "family", "friends", "sunset", "architecture",
              "nature", "city", "summer", "winter", "history", "museum", "park", "church",
              "water", "view", "landscape", "tourism", "trip")


@dataclass
class SynthSpec:
    n_sites: int = 20
    photos_per_site: tuple[int, int] = (1800, 3200)
    blobs_per_site: tuple[int, int] = (1, 3)
    blob_sd_m: tuple[float, float] = (40.0, 110.0)
    blob_offset_m: float = 500.0
    noise_fraction: float = 0.08
    faces_per_photo: float = 1.0
    max_faces_per_photo: int = 5
    site_offset_sd: float = 4.0
    face_sd: float = 16.0
    smile_noise_sd: float = 10.0
    smile_threshold: float = 50.0
    smile_shift: float = 8.0
    users_per_site: int = 300
    local_user_fraction: float = 0.15
    tourist_bonus: float = 0.0
    harvest_radius_m: float = DEFAULT_HARVEST_RADIUS_M
    archetype_happiness: dict = field(default_factory=lambda: dict(ARCHETYPE_HAPPINESS))
    site_types: tuple[str, ...] | None = None


def _offset(lat0: float, lon0: float, dx: np.ndarray, dy: np.ndarray):
    lat = lat0 + np.degrees(dy / EARTH_RADIUS_M)
    lon = lon0 + np.degrees(dx / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    lon = (lon + 180.0) % 360.0 - 180.0
    return lat, lon


def _truncated_normal_2d(rng, n, sd):
    """Isotropic 2-D normal offsets truncated to a 4-sigma radius."""
    out = np.empty((0, 2))
    while len(out) < n:
        draw = rng.normal(0.0, sd, size=(2 * (n - len(out)) + 8, 2))
        draw = draw[np.hypot(draw[:, 0], draw[:, 1]) <= 4 * sd]
        out = np.vstack([out, draw])
    return out[:n]


def _balanced(rng, levels, n):
    """n labels cycling through ``levels`` in shuffled order (every level used if n allows)."""
    labels = [levels[i % len(levels)] for i in range(n)]
    rng.shuffle(labels)
    return labels


def synth_dataset(spec: SynthSpec, seed: int):
    """Generate (sites, photos, faces) for a reproducible desk-scale study.

    Photos form Gaussian blobs around each site plus uniform background
    noise inside the harvest disc.  Each face gets a latent positivity drawn
    around its site's mean; happiness and smile value are both derived from
    it, so the two indices agree in expectation.
    """
    rng = np.random.default_rng(seed)
    types = list(spec.site_types) if spec.site_types else \
        _balanced(rng, list(spec.archetype_happiness), spec.n_sites)
    continents = _balanced(rng, list(CONTINENTS[:5]), spec.n_sites)
    spaces = _balanced(rng, ["open", "closed"], spec.n_sites)
    settings = _balanced(rng, ["urban", "rural"], spec.n_sites)
    waters = _balanced(rng, ["present", "absent"], spec.n_sites)
    epoch = datetime(2012, 1, 1, tzinfo=timezone.utc)
    span_s = (datetime(2017, 6, 30, tzinfo=timezone.utc) - epoch).total_seconds()

    sites, photos, faces = [], [], []
    for s in range(spec.n_sites):
        site_id = f"S{s + 1:03d}"
        lat0 = float(np.round(rng.uniform(-45.0, 60.0), 6))
        lon0 = float(np.round(rng.uniform(-179.0, 179.0), 6))
        water = waters[s]
        factors = FactorRow(
            site_id=site_id, continent=continents[s], space=spaces[s], setting=settings[s],
            type=types[s], water=water,
            water_distance_m=0.0 if water == "present" else float(np.round(rng.uniform(50, 5000), 1)),
            ndvi=float(np.round(rng.uniform(0.05, 0.85), 3)),
            country=f"Country{s % 7 + 1}",
        )
        sites.append(SiteRecord(site_id, f"Site {s + 1} ({types[s]})", GeoPoint(lat0, lon0),
                                factors, spec.harvest_radius_m))

        n_photos = int(rng.integers(spec.photos_per_site[0], spec.photos_per_site[1] + 1))
        n_noise = int(round(spec.noise_fraction * n_photos))
        n_blob = n_photos - n_noise
        k_blobs = int(rng.integers(spec.blobs_per_site[0], spec.blobs_per_site[1] + 1))
        weights = rng.dirichlet(np.full(k_blobs, 4.0))
        sizes = rng.multinomial(n_blob, weights)
        xy = []
        for size in sizes:
            ang = rng.uniform(0, 2 * math.pi)
            r = spec.blob_offset_m * math.sqrt(rng.uniform())
            sd = rng.uniform(*spec.blob_sd_m)
            xy.append(_truncated_normal_2d(rng, size, sd) + [r * math.cos(ang), r * math.sin(ang)])
        ang = rng.uniform(0, 2 * math.pi, n_noise)
        rad = spec.harvest_radius_m * np.sqrt(rng.uniform(0, 1, n_noise)) * 0.999
        xy.append(np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]))
        xy = np.vstack(xy)
        xy = xy[rng.permutation(len(xy))]
        lat, lon = _offset(lat0, lon0, xy[:, 0], xy[:, 1])
        lat, lon = np.round(lat, 7), np.round(lon, 7)

        # users: heavy-tailed activity, a share of them locals
        n_users = spec.users_per_site
        activity = rng.pareto(1.5, n_users) + 1
        user_of = rng.choice(n_users, size=n_photos, p=activity / activity.sum())
        is_local = rng.uniform(size=n_users) < spec.local_user_fraction
        start = rng.uniform(0, span_s - 800 * 86400, n_users)
        window = np.where(is_local, rng.uniform(60, 720, n_users), rng.uniform(0.05, 6, n_users)) * 86400
        site_mean = spec.archetype_happiness[types[s]] + rng.normal(0, spec.site_offset_sd)

        for k in range(n_photos):
            u = int(user_of[k])
            photo_id = f"{site_id}-P{k:05d}"
            ts = epoch + timedelta(seconds=int(start[u] + rng.uniform(0, window[u])))
            n_tags = int(rng.integers(0, 4))
            tags = (site_id.lower(),) + tuple(rng.choice(_TAG_WORDS, size=n_tags, replace=False))
            photo = PhotoRecord(photo_id, f"{site_id}-U{u:04d}", site_id,
                                GeoPoint(lat[k], lon[k]), ts, tags)
            photos.append(photo)
            n_faces = min(spec.max_faces_per_photo, int(rng.poisson(spec.faces_per_photo)))
            mean = site_mean + (0.0 if is_local[u] else spec.tourist_bonus)
            for f in range(n_faces):
                latent = rng.normal(mean, spec.face_sd)
                smile = np.clip(latent + spec.smile_shift + rng.normal(0, spec.smile_noise_sd), 0, 100)
                faces.append(FaceRecord(
                    photo_id=photo_id, face_id=f"{photo_id}-f{f}", user_id=photo.user_id,
                    site_id=site_id, location=photo.location, timestamp=ts,
                    smile_value=round(float(smile), 2), smile_threshold=spec.smile_threshold,
                    emotion=_emotion_from(rng, latent),
                ))
    return sites, photos, faces


def synth_factor_study(n_sites: int, effects: dict, noise_sd: float, seed: int,
                       faces_per_site: int = 50, base: float = 35.0):
    """Sites with planted factor effects on per-face happiness.

    ``effects`` maps ``"factor=level"`` or a numeric factor name to an
    additive effect.  Each site's faces draw happiness from
    ``base + sum(effects) + N(0, noise_sd)``; smiles follow happiness.
    Returns (factor rows, faces).
    """
    rng = np.random.default_rng(seed)
    types = _balanced(rng, list(SITE_TYPES), n_sites)
    continents = _balanced(rng, list(CONTINENTS[:5]), n_sites)
    spaces = _balanced(rng, ["open", "closed"], n_sites)
    settings = _balanced(rng, ["urban", "rural"], n_sites)
    waters = _balanced(rng, ["present", "absent"], n_sites)
    rows, faces = [], []
    stamp = datetime(2015, 6, 1, tzinfo=timezone.utc)
    for s in range(n_sites):
        site_id = f"F{s + 1:03d}"
        water = waters[s]
        row = FactorRow(site_id=site_id, continent=continents[s], space=spaces[s],
                        setting=settings[s], type=types[s], water=water,
                        water_distance_m=0.0 if water == "present" else float(rng.uniform(50, 3000)),
                        ndvi=float(rng.uniform(0.05, 0.85)))
        rows.append(row)
        mean = base
        for key, effect in effects.items():
            if "=" in key:
                name, level = key.split("=", 1)
                mean += effect if getattr(row, name) == level else 0.0
            else:
                mean += effect * getattr(row, key)
        where = GeoPoint(0.0, 0.0)
        for f in range(faces_per_site):
            happy = float(np.clip(rng.normal(mean, noise_sd), 0, 100))
            smile = float(np.clip(happy + rng.normal(0, 5), 0, 100))
            faces.append(FaceRecord(f"{site_id}-P{f}", f"{site_id}-P{f}-f0", f"{site_id}-U{f}",
                                    site_id, where, stamp, round(smile, 2), 40.0,
                                    _emotion_from(rng, happy)))
    return rows, faces


def dumps_csv(writer: Callable, records) -> str:
    buf = io.StringIO()
    writer(buf, records)
    return buf.getvalue()
