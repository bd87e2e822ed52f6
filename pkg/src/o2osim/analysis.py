"""Observational, interventional and mechanism analyses over traces and
result tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from .agents import ActionKind, Intention
from .metrics import InvolutionLevel, classify_involution

INTENTION_NAMES = ("RuleFollowing", "Anxious", "RiskAvoidant")

# ordinal codes for categorical factor levels in path regressions
ORDINAL_CODES = {"low": 0, "medium": 1, "high": 2, "none": 0, "local": 1, "global": 2}


def _index_values(results) -> np.ndarray:
    if hasattr(results, "rows"):
        vals = [r.metrics["involution_index"] if r.ok else np.nan for r in results.rows]
    else:
        vals = list(results)
    return np.asarray([np.nan if v is None else v for v in vals], dtype=float)


@dataclass
class InvolutionDistribution:
    counts: dict
    fraction_high: float
    undefined: int
    levels: list
    timeseries: Optional[dict] = None


def involution_distribution(results, timeseries: Optional[dict] = None) -> InvolutionDistribution:
    """Classify each run's index and tally the levels.

    ``results`` is a ResultTable or a plain sequence of indices. Runs with an
    undefined index are counted separately and left out of the fraction.
    """
    vals = _index_values(results)
    if vals.size == 0:
        raise ValueError("involution distribution needs at least one run")
    counts = {lv.value: 0 for lv in InvolutionLevel}
    levels = []
    for v in vals:
        if np.isnan(v):
            levels.append(None)
            continue
        lv = classify_involution(float(v))
        counts[lv.value] += 1
        levels.append(lv.value)
    defined = sum(counts.values())
    frac = counts[InvolutionLevel.HIGH.value] / defined if defined else float("nan")
    return InvolutionDistribution(counts, frac, int(vals.size - defined), levels, timeseries)


@dataclass
class AnomalyReport:
    flagged: list[int]
    robust_z: np.ndarray
    median: float
    mad: float


def detect_anomalies(results, threshold: float = 3.5) -> AnomalyReport:
    """Median/MAD outlier rule on the involution index.

    With zero MAD every value that differs from the median is flagged.
    ``flagged`` holds 0-based run positions.
    """
    vals = _index_values(results)
    ok = ~np.isnan(vals)
    if ok.sum() < 4:
        raise ValueError("anomaly detection needs at least 4 runs")
    med = float(np.median(vals[ok]))
    mad = float(np.median(np.abs(vals[ok] - med)))
    with np.errstate(divide="ignore", invalid="ignore"):
        if mad > 0:
            z = np.abs(vals - med) / (1.4826 * mad)
        else:
            z = np.where(vals == med, 0.0, np.inf)
    z = np.where(ok, z, np.nan)
    flagged = [i for i in range(vals.size) if ok[i] and z[i] > threshold]
    return AnomalyReport(flagged, z, med, mad)


def density_heatmap(trace, window: int) -> np.ndarray:
    """Rider-step counts per cell, shape ``(n_windows, width, height)``."""
    T, n = trace.positions.shape[:2]
    if window < 1 or T % window:
        raise ValueError(f"window {window} must divide the horizon {T}")
    w = trace.config.world
    out = np.zeros((T // window, w.width, w.height), dtype=np.int64)
    pos = trace.positions.astype(np.int64)
    win = np.repeat(np.arange(T) // window, n)
    np.add.at(out, (win, pos[:, :, 0].ravel(), pos[:, :, 1].ravel()), 1)
    return out


def _code(v) -> float:
    if isinstance(v, str):
        if v in ORDINAL_CODES:
            return float(ORDINAL_CODES[v])
        return float(v)
    return float(v)


def standardized_ols(X, y, names: Sequence[str]) -> dict:
    """OLS of z-scored ``y`` on z-scored columns of ``X``.

    Returns ``{name: {"beta", "se", "p"}}`` with two-sided t-test p-values.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if n <= p + 1:
        raise ValueError(f"need more than {p + 1} rows, got {n}")
    sx = X.std(axis=0, ddof=1)
    const = [names[j] for j in range(p) if sx[j] == 0]
    if const:
        raise ValueError(f"constant factor column(s): {const}")
    sy = y.std(ddof=1)
    if sy == 0:
        raise ValueError("constant response column")
    Z = (X - X.mean(axis=0)) / sx
    zy = (y - y.mean()) / sy
    A = np.column_stack([np.ones(n), Z])
    beta, *_ = np.linalg.lstsq(A, zy, rcond=None)
    resid = zy - A @ beta
    dof = n - p - 1
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.pinv(A.T @ A)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    out = {}
    for j, name in enumerate(names):
        b, s = float(beta[j + 1]), float(se[j + 1])
        if s > 0:
            pval = float(2 * stats.t.sf(abs(b / s), dof))
        else:
            pval = 0.0 if b != 0 else 1.0
        out[name] = {"beta": b, "se": s, "p": pval}
    return out


def path_coefficients(results, response: str = "involution_index",
                      factors: Optional[Sequence[str]] = None) -> dict:
    """Standardized direct-path weights of factors on a response metric."""
    names = list(factors) if factors is not None else list(results.factor_names)
    rows = [r for r in results.rows if r.ok and r.metrics.get(response) is not None]
    X = np.array([[_code(r.levels[f]) for f in names] for r in rows], dtype=float)
    y = np.array([r.metrics[response] for r in rows], dtype=float)
    return standardized_ols(X.reshape(len(rows), len(names)), y, names)


@dataclass
class IntentionLog:
    """Per-step intention and behavior labels for every rider.

    ``intentions`` and ``behaviors`` are indexed ``[step, rider]``.
    """

    steps: np.ndarray
    intentions: np.ndarray
    behaviors: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps)
        self.intentions = np.asarray(self.intentions)
        self.behaviors = np.asarray(self.behaviors)
        if self.intentions.ndim != 2 or self.intentions.shape != self.behaviors.shape:
            raise ValueError("intentions and behaviors must share a [step, rider] shape")
        if self.steps.shape != (self.intentions.shape[0],):
            raise ValueError("one step stamp per row required")
        if np.any(np.diff(self.steps) <= 0):
            raise ValueError("steps must be strictly increasing")

    @classmethod
    def from_trace(cls, trace) -> "IntentionLog":
        return cls(np.arange(trace.horizon), trace.intentions, trace.actions)

    @classmethod
    def from_sequences(cls, intentions: Sequence[Sequence[int]],
                       behaviors: Optional[Sequence[Sequence[int]]] = None) -> "IntentionLog":
        """Build from one label sequence per rider, all of equal length."""
        ints = np.asarray(intentions).T
        behs = ints.copy() if behaviors is None else np.asarray(behaviors).T
        return cls(np.arange(ints.shape[0]), ints, behs)

    @property
    def n_riders(self) -> int:
        return self.intentions.shape[1]

    @property
    def n_steps(self) -> int:
        return self.intentions.shape[0]

    def windows(self, window: int) -> list[tuple[int, int]]:
        if window < 1:
            raise ValueError("window must be >= 1")
        return [(s, min(s + window, self.n_steps)) for s in range(0, self.n_steps, window)]


def _label_rates(labels: np.ndarray, bounds, codes: Sequence[int]) -> np.ndarray:
    """Fraction of each code per (window, rider): shape ``(W, N, len(codes))``."""
    out = np.empty((len(bounds), labels.shape[1], len(codes)))
    for w, (a, b) in enumerate(bounds):
        block = labels[a:b]
        for k, c in enumerate(codes):
            out[w, :, k] = (block == c).mean(axis=0)
    return out


@dataclass
class ClusterResult:
    assignments: np.ndarray
    k: int
    silhouette: Optional[float]
    scores: dict
    note: str = ""


def intention_features(logs: IntentionLog, window: int) -> np.ndarray:
    """Per-rider concatenation of per-window intention frequencies."""
    rates = _label_rates(logs.intentions, logs.windows(window), [int(i) for i in Intention])
    return rates.transpose(1, 0, 2).reshape(logs.n_riders, -1)


def cluster_intentions(logs: IntentionLog, window: int, k_range: Sequence[int] = range(2, 7),
                       seed: int = 0) -> ClusterResult:
    """K-means on windowed intention frequencies, k picked by mean silhouette.

    Riders are clustered in a canonical (lexicographic feature) order and
    clusters are numbered by sorted centroid, so relabeling rider ids only
    permutes the assignments.
    """
    if logs.n_riders < 2:
        raise ValueError("clustering needs at least 2 riders")
    feats = intention_features(logs, window)
    order = np.lexsort(feats.T[::-1])
    canon = feats[order]
    n_distinct = np.unique(canon, axis=0).shape[0]
    n = canon.shape[0]
    ks = [k for k in k_range if 2 <= k <= min(n - 1, n_distinct)]
    if n_distinct < 2 or not ks:
        note = "all riders identical" if n_distinct < 2 else "no admissible k in range"
        return ClusterResult(np.zeros(n, dtype=int), 1, None, {}, note)
    scores, fits = {}, {}
    for k in ks:
        km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(canon)
        scores[k] = float(silhouette_score(canon, km.labels_))
        fits[k] = km
    best = max(ks, key=lambda k: (scores[k], -k))
    km = fits[best]
    # renumber clusters by lexicographic centroid order
    rank = np.empty(best, dtype=int)
    rank[np.lexsort(km.cluster_centers_.T[::-1])] = np.arange(best)
    labels = np.empty(n, dtype=int)
    labels[order] = rank[km.labels_]
    return ClusterResult(labels, best, scores[best], scores)


@dataclass
class CorrelationMatrix:
    row_labels: list[str]
    col_labels: list[str]
    r: np.ndarray  # NaN where a column is constant


def intention_behavior_correlation(logs: IntentionLog, window: int,
                                   intentions: Optional[Sequence[int]] = None,
                                   behaviors: Optional[Sequence[int]] = None) -> CorrelationMatrix:
    """Pearson r between per-window intention and behavior rates, pooled
    over rider-windows."""
    bounds = logs.windows(window)
    if len(bounds) < 3:
        raise ValueError("correlation needs at least 3 windows")
    icodes = [int(i) for i in Intention] if intentions is None else list(intentions)
    bcodes = [int(a) for a in ActionKind] if behaviors is None else list(behaviors)
    irate = _label_rates(logs.intentions, bounds, icodes).reshape(-1, len(icodes))
    brate = _label_rates(logs.behaviors, bounds, bcodes).reshape(-1, len(bcodes))
    ic = irate - irate.mean(axis=0)
    bc = brate - brate.mean(axis=0)
    norm = np.sqrt((ic**2).sum(axis=0))[:, None] * np.sqrt((bc**2).sum(axis=0))[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(norm > 0, (ic.T @ bc) / norm, np.nan)
    r = np.clip(r, -1.0, 1.0)
    rows = [_intention_name(c) for c in icodes]
    cols = [ActionKind(c).name if c in ActionKind._value2member_map_ else str(c) for c in bcodes]
    return CorrelationMatrix(rows, cols, r)


def _intention_name(code: int) -> str:
    return INTENTION_NAMES[code] if 0 <= code < len(INTENTION_NAMES) else str(code)


@dataclass
class FlowMatrix:
    windows: list[tuple[int, int]]
    labels: list[str]
    counts: np.ndarray  # (W-1, L, L): transitions from window w to w+1
    shares: np.ndarray  # (W, L): rider-step share of each label per window
    dominant: np.ndarray  # (W, N)


def dominant_labels(logs: IntentionLog, bounds) -> np.ndarray:
    """Plurality label per (window, rider); ties go to the earlier label."""
    codes = [int(i) for i in Intention]
    rates = _label_rates(logs.intentions, bounds, codes)
    # argmax returns the first maximum, which is the earlier label
    return np.asarray(codes)[rates.argmax(axis=2)]


def stage_flow_matrix(logs: IntentionLog, window: int) -> FlowMatrix:
    bounds = logs.windows(window)
    if len(bounds) < 2:
        raise ValueError("stage flows need at least 2 windows")
    L = len(INTENTION_NAMES)
    dom = dominant_labels(logs, bounds)
    counts = np.zeros((len(bounds) - 1, L, L), dtype=np.int64)
    for w in range(len(bounds) - 1):
        np.add.at(counts[w], (dom[w], dom[w + 1]), 1)
    shares = _label_rates(logs.intentions, bounds, range(L)).mean(axis=1)
    return FlowMatrix(bounds, list(INTENTION_NAMES), counts, shares, dom)


def risk_avoidant_trend(shares: np.ndarray, windows: Sequence[tuple[int, int]], horizon: int) -> bool:
    """Whether the RiskAvoidant share never falls across windows that start
    in the final third of the horizon."""
    ra = shares[:, int(Intention.RISK_AVOIDANT)]
    late = [i for i, (a, _) in enumerate(windows) if 3 * a >= 2 * horizon]
    tail = ra[late]
    return bool(np.all(np.diff(tail) >= 0))
