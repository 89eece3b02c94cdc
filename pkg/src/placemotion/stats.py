"""Rank statistics, concordance, bootstrap intervals, correlation and OLS."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy import stats as sps
from scipy.stats import rankdata

from .errors import (InsufficientData, NoData, SchemaError, SingularDesign,
                     UndefinedCorrelation, VocabularyError)

CONTINENTS = ("Africa", "Asia", "Europe", "North America", "South America", "Oceania")
SPACES = ("open", "closed")
SETTINGS = ("urban", "rural")
SITE_TYPES = ("natural", "amusement", "religious", "museum", "palace", "cultural")
WATER = ("present", "absent")

VOCABULARIES = {
    "continent": CONTINENTS,
    "space": SPACES,
    "setting": SETTINGS,
    "type": SITE_TYPES,
    "water": WATER,
}
NUMERIC_FACTORS = ("water_distance_m", "ndvi")

# Reference levels of the published regression tables.
DEFAULT_REFERENCES = {
    "continent": "Africa",
    "space": "closed",
    "setting": "rural",
    "type": "amusement",
    "water": "absent",
}


@dataclass(frozen=True)
class BootstrapConfig:
    n_resamples: int = 1000
    confidence: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.n_resamples < 100:
            raise ValueError(f"n_resamples must be >= 100, got {self.n_resamples}")
        if not 0 < self.confidence < 1:
            raise ValueError(f"confidence must be in (0, 1), got {self.confidence}")


@dataclass(frozen=True)
class FactorRow:
    site_id: str
    continent: str
    space: str
    setting: str
    type: str
    water: str
    water_distance_m: float
    ndvi: float
    country: str = ""

    def __post_init__(self):
        for name, vocab in VOCABULARIES.items():
            value = getattr(self, name)
            if value not in vocab:
                raise VocabularyError(f"{name}={value!r} not in vocabulary {list(vocab)}")
        if not self.water_distance_m >= 0:
            raise SchemaError(f"water_distance_m must be >= 0, got {self.water_distance_m}")
        if not -1 <= self.ndvi <= 1:
            raise SchemaError(f"ndvi must be in [-1, 1], got {self.ndvi}")


@dataclass
class RegressionResult:
    coefficients: dict[str, float]
    std_errors: dict[str, float]
    p_values: dict[str, float]
    residuals: np.ndarray
    fitted: np.ndarray
    r_squared: float
    f_pvalue: float
    design_columns: list[str]
    references: dict[str, str] = field(default_factory=dict)


# -- ranks and concordance ----------------------------------------------------

def rank_with_ties(values: Sequence[float], direction: str = "descending") -> np.ndarray:
    """Average ranks, 1 = best.  ``descending`` ranks the largest value first."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise NoData("cannot rank an empty sequence")
    if direction == "descending":
        return rankdata(-v, method="average")
    if direction == "ascending":
        return rankdata(v, method="average")
    raise ValueError(f"direction must be ascending or descending, got {direction!r}")


def kendalls_w(ranks) -> float:
    """Kendall's coefficient of concordance for an m x n matrix of ranks.

    Row j holds judge j's ranks of the n items.  No tie correction.
    """
    r = np.asarray(ranks, dtype=float)
    if r.ndim != 2:
        raise ValueError("ranks must be a 2-D judges x items matrix")
    m, n = r.shape
    if m < 2 or n < 2:
        raise InsufficientData(f"need >= 2 judges and >= 2 items, got {m} x {n}")
    totals = r.sum(axis=0)
    s = float(np.sum((totals - totals.mean()) ** 2))
    return 12.0 * s / (m ** 2 * (n ** 3 - n))


# -- bootstrap ----------------------------------------------------------------

_CHUNK_CELLS = 4_000_000


def resample_index_blocks(n: int, cfg: BootstrapConfig):
    """Yield (start, stop, indices) blocks covering cfg.n_resamples resamples of size n.

    The stream depends only on cfg.seed and n, not on the block size.
    """
    if n == 0:
        raise NoData("bootstrap of an empty sample")
    rng = np.random.default_rng(cfg.seed)
    step = max(1, _CHUNK_CELLS // n)
    for start in range(0, cfg.n_resamples, step):
        stop = min(cfg.n_resamples, start + step)
        yield start, stop, rng.integers(0, n, size=(stop - start, n), dtype=np.int32)


def resample_statistics(sample, statistics: Sequence[Callable], cfg: BootstrapConfig,
                        vectorized: bool = True) -> np.ndarray:
    """Evaluate each statistic on cfg.n_resamples with-replacement resamples.

    Every statistic sees the same resamples.  With ``vectorized`` each one is
    called on a 2-D (resamples x n) block and must reduce along axis 1.
    Returns an array shaped (len(statistics), n_resamples).
    """
    x = np.asarray(sample)
    out = np.empty((len(statistics), cfg.n_resamples))
    for start, stop, idx in resample_index_blocks(len(x), cfg):
        block = x[idx]
        for k, stat in enumerate(statistics):
            if vectorized:
                out[k, start:stop] = stat(block)
            else:
                out[k, start:stop] = [stat(row) for row in block]
    return out


def percentile_interval(values: np.ndarray, confidence: float) -> tuple[float, float]:
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha], method="linear")
    return float(lo), float(hi)


@dataclass(frozen=True)
class BootstrapResult:
    estimate: float
    low: float
    high: float

    @property
    def width(self) -> float:
        return self.high - self.low


def bootstrap_ci(sample, statistic: Callable, cfg: BootstrapConfig,
                 vectorized: bool = False) -> BootstrapResult:
    """Percentile bootstrap confidence interval for ``statistic``."""
    x = np.asarray(sample)
    if len(x) == 0:
        raise NoData("bootstrap of an empty sample")
    dist = resample_statistics(x, [statistic], cfg, vectorized=vectorized)[0]
    low, high = percentile_interval(dist, cfg.confidence)
    estimate = statistic(x[None, :])[0] if vectorized else statistic(x)
    return BootstrapResult(float(estimate), low, high)


def row_mean(block: np.ndarray) -> np.ndarray:
    return block.mean(axis=1)


# -- correlation --------------------------------------------------------------

def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("x and y must be 1-D and equally long")
    if len(a) < 2:
        raise InsufficientData("need at least 2 observations")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(np.dot(da, da)))
    sb = math.sqrt(float(np.dot(db, db)))
    if sa == 0 or sb == 0:
        raise UndefinedCorrelation("correlation undefined for a constant series")
    r = float(np.dot(da, db)) / (sa * sb)
    return max(-1.0, min(1.0, r))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    return pearson(rank_with_ties(x, "ascending"), rank_with_ties(y, "ascending"))


@dataclass
class CorrelationScreen:
    coefficients: dict[str, float]
    skipped: dict[str, str]


def _indicator_columns(rows: Sequence[FactorRow]):
    for name in NUMERIC_FACTORS:
        yield name, np.array([getattr(r, name) for r in rows], dtype=float)
    for name, vocab in VOCABULARIES.items():
        for level in vocab:
            yield f"{name}={level}", np.array(
                [1.0 if getattr(r, name) == level else 0.0 for r in rows])


def correlation_screen(factors: Sequence[FactorRow], emotion: Sequence[float]) -> CorrelationScreen:
    """Pearson correlation of every numeric factor and category indicator."""
    e = np.asarray(emotion, dtype=float)
    if len(factors) != len(e):
        raise ValueError("factors and emotion must be aligned")
    if len(e) < 2 or np.all(e == e[0]):
        raise UndefinedCorrelation("emotion index is constant across sites")
    coefficients, skipped = {}, {}
    for name, column in _indicator_columns(factors):
        if np.all(column == column[0]):
            skipped[name] = "absent at every site" if column[0] == 0 and "=" in name \
                else "constant across sites"
            continue
        coefficients[name] = pearson(column, e)
    return CorrelationScreen(coefficients, skipped)


# -- regression ---------------------------------------------------------------

def dummy_encode(rows: Sequence[FactorRow], references: Mapping[str, str] | None = None):
    """Design matrix with intercept, numeric factors and 0/1 level columns.

    A level gets a column only if it occurs in ``rows`` and is not the
    factor's reference.  Returns (matrix, column names).
    """
    refs = dict(DEFAULT_REFERENCES)
    refs.update(references or {})
    if not rows:
        raise NoData("no factor rows to encode")
    columns = ["intercept"]
    data = [np.ones(len(rows))]
    for name in NUMERIC_FACTORS:
        columns.append(name)
        data.append(np.array([float(getattr(r, name)) for r in rows]))
    for name, vocab in VOCABULARIES.items():
        ref = refs[name]
        if ref not in vocab:
            raise VocabularyError(f"reference {name}={ref!r} not in vocabulary {list(vocab)}")
        values = [getattr(r, name) for r in rows]
        for v in values:
            if v not in vocab:
                raise VocabularyError(f"{name}={v!r} not in vocabulary {list(vocab)}")
        if ref not in values:
            raise SchemaError(f"reference level {name}={ref!r} does not occur in the data")
        for level in vocab:
            if level != ref and level in values:
                columns.append(f"{name}={level}")
                data.append(np.array([1.0 if v == level else 0.0 for v in values]))
    return np.column_stack(data), columns


def ols_fit(design, response, columns: Sequence[str] | None = None,
            references: Mapping[str, str] | None = None) -> RegressionResult:
    """Least squares via pivoted QR.  The first column is taken as the intercept."""
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n, p = X.shape
    names = list(columns) if columns is not None else [f"x{j}" for j in range(p)]
    if len(y) != n:
        raise ValueError("design and response lengths differ")
    if n < p:
        raise SingularDesign(f"{n} rows cannot identify {p} columns", names)

    q, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(n, p) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < p:
        bad = [names[j] for j in piv[rank:]]
        raise SingularDesign(f"design is rank deficient; collinear columns: {bad}", bad)

    beta_piv = scipy.linalg.solve_triangular(r, q.T @ y)
    beta = np.empty(p)
    beta[piv] = beta_piv
    fitted = X @ beta
    resid = y - fitted
    ssr = float(resid @ resid)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 0.0 if sst == 0 else min(1.0, max(0.0, 1.0 - ssr / sst))

    dof = n - p
    if dof > 0:
        sigma2 = ssr / dof
        rinv = scipy.linalg.solve_triangular(r, np.eye(p))
        var_piv = sigma2 * np.sum(rinv ** 2, axis=1)
        se = np.empty(p)
        se[piv] = np.sqrt(var_piv)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = beta / se
        pvals = 2 * sps.t.sf(np.abs(t), dof)
        pvals = np.where(se == 0, 0.0 if ssr == 0 else np.nan, pvals)
        if p > 1 and sst > 0:
            f = ((sst - ssr) / (p - 1)) / (ssr / dof) if ssr > 0 else np.inf
            f_p = float(sps.f.sf(f, p - 1, dof))
        else:
            f_p = float("nan")
    else:
        se = np.full(p, np.nan)
        pvals = np.full(p, np.nan)
        f_p = float("nan")

    return RegressionResult(
        coefficients=dict(zip(names, beta.tolist())),
        std_errors=dict(zip(names, se.tolist())),
        p_values=dict(zip(names, pvals.tolist())),
        residuals=resid,
        fitted=fitted,
        r_squared=r2,
        f_pvalue=f_p,
        design_columns=names,
        references=dict(references or {}),
    )


def significance_stars(p: float) -> str:
    if p is None or math.isnan(p):
        return ""
    if p < 0.001:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def power_law_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Fit y = a * x**b by least squares in log-log space; returns (b, a, R^2)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    res = ols_fit(np.column_stack([np.ones_like(lx), lx]), ly, ["log_a", "b"])
    return res.coefficients["b"], math.exp(res.coefficients["log_a"]), res.r_squared
