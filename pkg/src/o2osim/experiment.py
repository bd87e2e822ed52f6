"""Factorial experiment runner, treatment effects, polynomial surrogate and
the emergence-probability tree."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .config import FactorSpec, RunConfig

log = logging.getLogger(__name__)

RESULT_METRICS = ("involution_index", "swf", "mean_utility", "frac_risk_avoidant")


@dataclass(frozen=True)
class DesignRow:
    design_point: int
    seed: int
    levels: dict


@dataclass
class DesignMatrix:
    factor_names: list[str]
    paths: list[str]
    rows: list[DesignRow]

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_points(self) -> int:
        return len({r.design_point for r in self.rows})


def build_design(factors: Sequence[FactorSpec], replicates: int, base_seed: int = 0) -> DesignMatrix:
    """Full factorial cross of factor levels, each point replicated.

    Replicate ``k`` of every point runs with seed ``base_seed + k``, so points
    share random numbers replicate by replicate.
    """
    if not isinstance(replicates, int) or replicates < 1:
        raise ValueError("replicates must be >= 1")
    names = [f.name for f in factors]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate factor names: {names}")
    for f in factors:
        if len(f.levels) < 1:
            raise ValueError(f"factor {f.name} has no levels")
    rows = []
    for point, combo in enumerate(itertools.product(*(f.levels for f in factors))):
        levels = dict(zip(names, combo))
        for k in range(replicates):
            rows.append(DesignRow(point, base_seed + k, levels))
    return DesignMatrix(names, [f.path for f in factors], rows)


@dataclass
class ResultRow:
    design_point: int
    seed: int
    levels: dict
    metrics: Optional[dict]
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class ResultTable:
    factor_names: list[str]
    rows: list[ResultRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, metric: str, **where) -> np.ndarray:
        """Metric values of ok rows whose levels match ``where``, seed order kept."""
        out = []
        for r in self.rows:
            if r.ok and all(r.levels.get(k) == v for k, v in where.items()):
                out.append(r.metrics[metric])
        return np.asarray(out, dtype=float)


def _row_config(template: RunConfig, paths: Sequence[str], names: Sequence[str], levels: dict) -> RunConfig:
    return template.replace(**{p: levels[n] for p, n in zip(paths, names)})


def _run_one(job: tuple) -> tuple[Optional[dict], str]:
    from .engine import run

    template, paths, names, levels, seed = job
    try:
        cfg = _row_config(template, paths, names, levels)
        summary = run(cfg, seed).summary
    except Exception as exc:  # recorded in the table, not raised
        return None, f"failed: {type(exc).__name__}: {exc}"
    metrics = {m: summary.get(m) for m in RESULT_METRICS}
    if metrics["involution_index"] is None:
        return metrics, "failed: involution index undefined (mean utility <= 0)"
    return metrics, "ok"


def execute_design(design: DesignMatrix, template: RunConfig, parallelism: int = 1) -> ResultTable:
    """Run every design row; output order follows the design, whatever the
    execution order."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    jobs = [(template, design.paths, design.factor_names, r.levels, r.seed) for r in design.rows]
    if parallelism == 1 or len(jobs) <= 1:
        outcomes = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(parallelism, len(jobs))) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    rows = []
    for r, (metrics, status) in zip(design.rows, outcomes):
        if status != "ok":
            log.warning("design point %d seed %d %s", r.design_point, r.seed, status)
        rows.append(ResultRow(r.design_point, r.seed, dict(r.levels), metrics, status))
    return ResultTable(list(design.factor_names), rows)


@dataclass(frozen=True)
class ATEResult:
    estimate: float
    ci_low: float
    ci_high: float


def ate(treated: Sequence[float], control: Sequence[float], B: int = 2000, seed: int = 0) -> ATEResult:
    """Difference in means with a percentile bootstrap 95% interval.

    Each bootstrap replicate resamples both groups independently.
    """
    t = np.asarray(treated, dtype=float)
    c = np.asarray(control, dtype=float)
    if t.size == 0 or c.size == 0:
        raise ValueError("ate needs non-empty treated and control groups")
    if B < 1:
        raise ValueError("bootstrap B must be >= 1")
    gen = rngmod.substream(seed, rngmod.BOOTSTRAP_STREAM)
    ti = gen.integers(0, t.size, size=(B, t.size))
    ci = gen.integers(0, c.size, size=(B, c.size))
    diffs = t[ti].mean(axis=1) - c[ci].mean(axis=1)
    lo, hi = np.percentile(diffs, [2.5, 97.5])
    return ATEResult(float(t.mean() - c.mean()), float(lo), float(hi))


def _term_names(names: Sequence[str], degree: int) -> list[str]:
    terms = list(names)
    if degree == 2:
        p = len(names)
        terms += [f"{names[i]}^2" for i in range(p)]
        terms += [f"{names[i]}*{names[j]}" for i in range(p) for j in range(i + 1, p)]
    return terms


def _expand(z: np.ndarray, degree: int) -> np.ndarray:
    cols = [z]
    if degree == 2:
        p = z.shape[1]
        cols.append(z**2)
        inter = [z[:, i] * z[:, j] for i in range(p) for j in range(i + 1, p)]
        if inter:
            cols.append(np.column_stack(inter))
    return np.hstack(cols)


def _collinear(design: np.ndarray, names: Sequence[str], tol: float = 1e-9) -> list[str]:
    # a column is collinear when it adds nothing to the rank of those before it
    bad = []
    kept = np.empty((design.shape[0], 0))
    for j, name in enumerate(names):
        trial = np.column_stack([kept, design[:, j]])
        if np.linalg.matrix_rank(trial, tol=tol * max(1.0, np.abs(trial).max())) > kept.shape[1]:
            kept = trial
        else:
            bad.append(name)
    return bad


@dataclass
class Metamodel:
    degree: int
    feature_names: list[str]
    terms: list[str]
    mean: np.ndarray
    scale: np.ndarray
    intercept: float
    coef: np.ndarray  # on standardized features, one per term
    r2: float
    lower: np.ndarray
    upper: np.ndarray

    @property
    def coefficients(self) -> dict:
        out = {"intercept": self.intercept}
        out.update(zip(self.terms, self.coef.tolist()))
        return out

    def raw_coefficients(self) -> dict:
        """Degree-1 coefficients in the original feature units."""
        if self.degree != 1:
            raise ValueError("raw coefficients are only defined for degree 1")
        slopes = self.coef / self.scale
        out = {"intercept": float(self.intercept - np.dot(slopes, self.mean))}
        out.update(zip(self.feature_names, slopes.tolist()))
        return out


def fit_metamodel(X, y, degree: int = 1, feature_names: Optional[Sequence[str]] = None) -> Metamodel:
    """Least-squares polynomial surrogate on standardized features.

    R² is reported as 0 when ``y`` has no variance.
    """
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(p)]
    if len(names) != p:
        raise ValueError("feature_names length does not match X")
    terms = _term_names(names, degree)
    if n <= len(terms):
        raise ValueError(f"need more rows ({n}) than polynomial terms ({len(terms)})")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    const = [names[j] for j in range(p) if scale[j] == 0]
    if const:
        raise ValueError(f"rank-deficient design; collinear columns: {const}")
    Z = _expand((X - mean) / scale, degree)
    A = np.column_stack([np.ones(n), Z])
    if np.linalg.matrix_rank(A) < A.shape[1]:
        bad = _collinear(A, ["intercept"] + terms)
        raise ValueError(f"rank-deficient design; collinear columns: {bad}")
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ beta
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 0.0 if ss_tot == 0 else 1.0 - float(resid @ resid) / ss_tot
    return Metamodel(degree, names, terms, mean, scale, float(beta[0]), beta[1:], r2,
                     X.min(axis=0), X.max(axis=0))


@dataclass(frozen=True)
class Prediction:
    value: Any
    extrapolated: Any


def predict(model: Metamodel, x) -> Prediction:
    """Evaluate the surrogate; points outside the training box are flagged."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = np.atleast_2d(x) if x.ndim else x.reshape(1, 1)
    if single and X.shape[1] != len(model.feature_names):
        X = X.reshape(-1, len(model.feature_names))
    if X.shape[1] != len(model.feature_names):
        raise ValueError(f"expected {len(model.feature_names)} features, got {X.shape[1]}")
    Z = _expand((X - model.mean) / model.scale, model.degree)
    vals = model.intercept + Z @ model.coef
    outside = np.any((X < model.lower) | (X > model.upper), axis=1)
    if single and X.shape[0] == 1:
        return Prediction(float(vals[0]), bool(outside[0]))
    return Prediction(vals, outside)


@dataclass(frozen=True)
class EmergenceTree:
    p_D: float
    p_A: float
    p_W: float
    p_E: float = 1.0

    def __post_init__(self):
        for name in ("p_E", "p_D", "p_A", "p_W"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def emergence_probability(tree: EmergenceTree) -> dict:
    """Probabilities of the four leaves of the sequential-condition tree.

    ``C`` needs every condition; ``E_fail`` stops at the decision to adapt,
    ``E_star`` at acting and ``E_double_star`` at the feedback.
    """
    e, d, a, w = tree.p_E, tree.p_D, tree.p_A, tree.p_W
    return {
        "C": e * d * a * w,
        "E_fail": e * (1.0 - d),
        "E_star": e * d * (1.0 - a),
        "E_double_star": e * d * a * (1.0 - w),
    }


def factor_ates(table: ResultTable, metric: str = "involution_index", B: int = 2000,
                seed: int = 0) -> list[dict]:
    """ATE of each non-baseline level against the first level seen, per factor."""
    out = []
    for name in table.factor_names:
        levels = []
        for r in table.rows:
            if r.levels[name] not in levels:
                levels.append(r.levels[name])
        if len(levels) < 2:
            continue
        control = table.column(metric, **{name: levels[0]})
        for lv in levels[1:]:
            treated = table.column(metric, **{name: lv})
            if treated.size == 0 or control.size == 0:
                continue
            res = ate(treated, control, B=B, seed=seed)
            out.append({"factor": name, "control": levels[0], "treated": lv,
                        "estimate": res.estimate, "ci_low": res.ci_low, "ci_high": res.ci_high})
    return out
