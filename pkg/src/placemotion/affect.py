"""Face-level smile classification and place-level emotion indices."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import datetime
from typing import Sequence

import numpy as np

from .errors import NoFaces, SchemaError
from .geo import GeoPoint
from .stats import BootstrapConfig, percentile_interval, resample_index_blocks

EMOTION_FIELDS = ("anger", "disgust", "fear", "happiness", "neutral", "sadness", "surprise")
EMOTION_SUM_TOL = 0.5

SMILING = "smiling"
NOT_SMILING = "not_smiling"


def _check_score(name, value):
    if not 0.0 <= value <= 100.0:
        raise SchemaError(f"{name}={value} outside [0, 100]")


@dataclass(frozen=True)
class EmotionStructure:
    anger: float
    disgust: float
    fear: float
    happiness: float
    neutral: float
    sadness: float
    surprise: float

    def __post_init__(self):
        for name in EMOTION_FIELDS:
            _check_score(name, getattr(self, name))
        total = sum(getattr(self, name) for name in EMOTION_FIELDS)
        if abs(total - 100.0) > EMOTION_SUM_TOL:
            raise SchemaError(f"emotion scores sum to {total:.3f}, expected 100 +/- {EMOTION_SUM_TOL}")


@dataclass(frozen=True)
class FaceRecord:
    photo_id: str
    face_id: str
    user_id: str
    site_id: str
    location: GeoPoint
    timestamp: datetime
    smile_value: float
    smile_threshold: float
    emotion: EmotionStructure

    def __post_init__(self):
        _check_score("smile_value", self.smile_value)
        _check_score("smile_threshold", self.smile_threshold)


@dataclass(frozen=True)
class EmotionSummary:
    site_id: str
    joy_index: float
    ahi: float
    n_faces: int
    n_smiling: int
    n_nonsmiling: int
    joy_ci: tuple[float, float]
    ahi_ci: tuple[float, float]

    def index(self, name: str) -> float:
        if name == "joy":
            return self.joy_index
        if name == "ahi":
            return self.ahi
        raise ValueError(f"unknown index {name!r}; expected 'joy' or 'ahi'")

    def ci(self, name: str) -> tuple[float, float]:
        if name == "joy":
            return self.joy_ci
        if name == "ahi":
            return self.ahi_ci
        raise ValueError(f"unknown index {name!r}; expected 'joy' or 'ahi'")


def classify_smile(face: FaceRecord) -> str:
    return SMILING if face.smile_value > face.smile_threshold else NOT_SMILING


def smile_signs(faces: Sequence[FaceRecord]) -> np.ndarray:
    """+1 for smiling faces, -1 otherwise; the Joy Index is their mean."""
    return np.fromiter((1.0 if f.smile_value > f.smile_threshold else -1.0 for f in faces),
                       dtype=float, count=len(faces))


def joy_index(faces: Sequence[FaceRecord]) -> float:
    """(smiling - not smiling) / all faces."""
    if not faces:
        raise NoFaces("joy index undefined without faces")
    c_s = sum(1 for f in faces if classify_smile(f) == SMILING)
    c_ns = len(faces) - c_s
    return (c_s - c_ns) / (c_s + c_ns)


def average_happiness(faces: Sequence[FaceRecord]) -> float:
    if not faces:
        raise NoFaces("average happiness undefined without faces")
    return float(np.mean([f.emotion.happiness for f in faces]))


def site_seed(seed: int, site_id: str) -> np.random.SeedSequence:
    """Independent, order-free random stream per (seed, site)."""
    digest = hashlib.sha256(str(site_id).encode("utf-8")).digest()
    return np.random.SeedSequence([int(seed) & (2**64 - 1), int.from_bytes(digest[:8], "little")])


def summarize_place(site_id, faces: Sequence[FaceRecord], ci: BootstrapConfig) -> EmotionSummary:
    """Point estimates of both indices plus percentile bootstrap intervals.

    Both indices are computed on the same resamples.  Intervals are widened
    to include the point estimate where the percentile bounds miss it.
    """
    if not faces:
        raise NoFaces(f"site {site_id}: no faces")
    signs = smile_signs(faces)
    happy = np.fromiter((f.emotion.happiness for f in faces), dtype=float, count=len(faces))
    n = len(faces)
    n_smiling = int(np.sum(signs > 0))
    joy = (2 * n_smiling - n) / n
    ahi = float(happy.mean())

    cfg = BootstrapConfig(ci.n_resamples, ci.confidence,
                          int(site_seed(ci.seed, site_id).generate_state(1, np.uint64)[0]))
    smiling = signs > 0
    joy_dist = np.empty(cfg.n_resamples)
    ahi_dist = np.empty(cfg.n_resamples)
    for start, stop, idx in resample_index_blocks(n, cfg):
        joy_dist[start:stop] = 2.0 * np.count_nonzero(smiling[idx], axis=1) / n - 1.0
        ahi_dist[start:stop] = happy[idx].mean(axis=1)
    joy_lo, joy_hi = percentile_interval(joy_dist, ci.confidence)
    ahi_lo, ahi_hi = percentile_interval(ahi_dist, ci.confidence)
    return EmotionSummary(
        site_id=site_id,
        joy_index=joy,
        ahi=ahi,
        n_faces=n,
        n_smiling=n_smiling,
        n_nonsmiling=n - n_smiling,
        joy_ci=(min(joy_lo, joy), max(joy_hi, joy)),
        ahi_ci=(min(ahi_lo, ahi), max(ahi_hi, ahi)),
    )
