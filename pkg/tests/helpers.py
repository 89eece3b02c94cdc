import math
from datetime import datetime, timezone

import numpy as np

from placemotion.affect import EmotionStructure, FaceRecord
from placemotion.geo import GeoPoint

R = 6_371_000.0
T0 = datetime(2016, 5, 1, 12, tzinfo=timezone.utc)


def emotion(happiness: float) -> EmotionStructure:
    rest = 100.0 - happiness
    return EmotionStructure(anger=rest * 0.1, disgust=rest * 0.1, fear=rest * 0.1,
                            happiness=happiness, neutral=rest * 0.5, sadness=rest * 0.1,
                            surprise=rest * 0.1)


def face(smile=60.0, happiness=50.0, threshold=50.0, site="S", k=0, user="u", where=(0.0, 0.0),
         when=T0):
    return FaceRecord(photo_id=f"p{k}", face_id=f"p{k}-f0", user_id=user, site_id=site,
                      location=GeoPoint(*where), timestamp=when, smile_value=smile,
                      smile_threshold=threshold, emotion=emotion(happiness))


def offset(lat0, lon0, dx, dy):
    """Points dx/dy meters east/north of (lat0, lon0)."""
    dx, dy = np.asarray(dx, dtype=float), np.asarray(dy, dtype=float)
    lat = lat0 + np.degrees(dy / R)
    lon = lon0 + np.degrees(dx / (R * math.cos(math.radians(lat0))))
    return np.column_stack([lat, (lon + 180) % 360 - 180])


def blobs_and_noise(seed, n_max=500, extent=2000.0):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, n_max + 1))
    k = int(rng.integers(1, 5))
    n_noise = int(rng.integers(0, n // 3 + 1))
    centers = rng.uniform(-extent / 2, extent / 2, size=(k, 2))
    which = rng.integers(0, k, n - n_noise)
    xy = centers[which] + rng.normal(0, rng.uniform(10, 80), size=(n - n_noise, 2))
    xy = np.vstack([xy, rng.uniform(-extent, extent, size=(n_noise, 2))])
    xy = xy[rng.permutation(n)]
    lat0, lon0 = rng.uniform(-60, 60), rng.uniform(-180, 180)
    return offset(lat0, lon0, xy[:, 0], xy[:, 1])
