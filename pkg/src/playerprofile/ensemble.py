"""Conditional-inference survival forest.

Each tree is grown on a seeded subsample drawn without replacement.  At every
node the censored outcome is turned into log-rank scores; for ``mtry`` random
covariates the standardized linear statistic between covariate and scores is
converted to a normal-approximation p-value, Bonferroni-adjusted over the
``mtry`` candidates.  The node is split on the most significant covariate if
its adjusted p-value is at most ``alpha``, at the cut point maximizing the
standardized two-sample log-rank statistic.  Leaves hold Kaplan-Meier curves;
the forest prediction is the pointwise mean of leaf curves on a shared grid.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import sparse
from scipy.special import log_ndtr

from .survival import SurvivalCurve, kaplan_meier, median_survival, restricted_mean
from .telemetry import SurvivalDataset

FORMAT_VERSION = 1


@dataclass(frozen=True)
class EnsembleConfig:
    n_trees: int = 200
    subsample_fraction: float = 0.632
    mtry: int | None = None
    alpha: float = 0.05
    min_node: int = 20
    max_depth: int | None = 30
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be positive")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must lie in (0, 1]")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be positive")
        # alpha=0 is accepted as the limit in which no split is ever significant
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.min_node < 1:
            raise ValueError("min_node must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive or None")

    def resolved_mtry(self, n_covariates: int) -> int:
        if self.mtry is None:
            return max(1, math.ceil(math.sqrt(n_covariates)))
        if self.mtry > n_covariates:
            raise ValueError(f"mtry={self.mtry} exceeds the {n_covariates} covariates")
        return self.mtry


@dataclass
class SurvivalTree:
    """Flat binary tree.  ``feature[k] == -1`` marks leaf ``k``, whose curve is
    ``leaf_curve[k]`` (an index into the model's curve table)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_curve: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return node
            r = rows[internal]
            n = node[internal]
            go_left = X[r, feat[internal]] <= self.threshold[n]
            node[internal] = np.where(go_left, self.left[n], self.right[n])

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def root_feature(self) -> int:
        return int(self.feature[0])


@dataclass
class EnsembleModel:
    trees: list[SurvivalTree]
    curves: list[SurvivalCurve]
    time_grid: np.ndarray
    config: EnsembleConfig
    covariate_names: list[str]
    axis: str = ""

    @property
    def support_end(self) -> float:
        return float(self.time_grid[-1])

    def to_json(self) -> dict:
        return {
            "format": "playerprofile.ensemble",
            "version": FORMAT_VERSION,
            "axis": self.axis,
            "config": asdict(self.config),
            "covariate_names": list(self.covariate_names),
            "time_grid": self.time_grid.tolist(),
            "curves": [{"t": c.times.tolist(), "s": c.surv.tolist(), "support_end": c.support_end}
                       for c in self.curves],
            "trees": [{"feature": t.feature.tolist(), "threshold": t.threshold.tolist(),
                       "left": t.left.tolist(), "right": t.right.tolist(),
                       "leaf_curve": t.leaf_curve.tolist()} for t in self.trees],
        }

    @classmethod
    def from_json(cls, data: dict) -> "EnsembleModel":
        if data.get("format") != "playerprofile.ensemble" or data.get("version") != FORMAT_VERSION:
            raise ValueError("not a supported ensemble model file")
        axis = data.get("axis", "")
        return cls(
            trees=[SurvivalTree(np.array(t["feature"], dtype=np.int64), np.array(t["threshold"], dtype=float),
                                np.array(t["left"], dtype=np.int64), np.array(t["right"], dtype=np.int64),
                                np.array(t["leaf_curve"], dtype=np.int64)) for t in data["trees"]],
            curves=[SurvivalCurve(np.array(c["t"], dtype=float), np.array(c["s"], dtype=float),
                                  c["support_end"], axis) for c in data["curves"]],
            time_grid=np.array(data["time_grid"], dtype=float),
            config=EnsembleConfig(**data["config"]),
            covariate_names=list(data["covariate_names"]),
            axis=axis,
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "EnsembleModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# -- statistics ----------------------------------------------------------------

def logrank_scores(times: np.ndarray, events: np.ndarray) -> np.ndarray:
    """Log-rank scores: event indicator minus Nelson-Aalen cumulative hazard."""
    uniq, inverse = np.unique(times, return_inverse=True)
    d = np.bincount(inverse, weights=events, minlength=uniq.size)
    n_total = np.bincount(inverse, minlength=uniq.size)
    at_risk = np.cumsum(n_total[::-1])[::-1]
    cumhaz = np.cumsum(d / at_risk)
    return events.astype(float) - cumhaz[inverse]


def linear_statistic(x: np.ndarray, scores: np.ndarray) -> float:
    """Absolute standardized ``sum(x * scores)`` under the permutation distribution."""
    n = x.size
    if n < 2:
        return 0.0
    xc = x - x.mean()
    sc = scores - scores.mean()
    sxx = float(np.dot(xc, xc))
    saa = float(np.dot(sc, sc))
    if sxx <= 0.0 or saa <= 0.0:
        return 0.0
    return abs(float(np.dot(xc, scores))) / math.sqrt(sxx * saa / (n - 1))


def log_pvalue(stat: float) -> float:
    """log of the two-sided normal p-value of a standardized statistic."""
    return math.log(2.0) + float(log_ndtr(-abs(stat)))


def best_cut(x: np.ndarray, scores: np.ndarray, min_node: int) -> tuple[float, float] | None:
    """Cut point (midpoint) maximizing the standardized two-sample log-rank statistic.

    Both sides must keep at least ``min_node`` rows.  Returns ``(threshold, |z|)``
    or None if no admissible cut exists.
    """
    n = x.size
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cs = np.cumsum(scores[order])
    mean = scores.mean()
    saa = float(np.sum((scores - mean) ** 2))
    if saa <= 0.0:
        return None
    k = np.arange(1, n)  # left group = first k sorted rows
    ok = (xs[1:] > xs[:-1]) & (k >= min_node) & (n - k >= min_node)
    if not ok.any():
        return None
    k = k[ok]
    num = cs[k - 1] - k * mean
    var = k * (n - k) / (n * (n - 1.0)) * saa
    z = np.abs(num) / np.sqrt(var)
    j = int(np.argmax(z))
    kk = k[j]
    return 0.5 * (xs[kk - 1] + xs[kk]), float(z[j])


# -- fitting -------------------------------------------------------------------

def _grow_tree(X, times, events, cfg: EnsembleConfig, mtry: int, rng: np.random.Generator):
    feature, threshold, left, right, leaves = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaves.append(None)
        return len(feature) - 1

    log_alpha = math.log(cfg.alpha) if cfg.alpha > 0 else -math.inf
    p = X.shape[1]
    stack = [(new_node(), np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        t, d = times[idx], events[idx]
        split = None
        at_depth_limit = cfg.max_depth is not None and depth >= cfg.max_depth
        if idx.size >= 2 * cfg.min_node and not at_depth_limit and d.any():
            candidates = np.sort(rng.choice(p, size=mtry, replace=False))
            scores = logrank_scores(t, d)
            stats = [linear_statistic(X[idx, j], scores) for j in candidates]
            best = int(np.argmax(stats))
            log_p_adj = min(0.0, log_pvalue(stats[best]) + math.log(mtry))
            if stats[best] > 0 and log_p_adj <= log_alpha:
                j = int(candidates[best])
                cut = best_cut(X[idx, j], scores, cfg.min_node)
                if cut is not None:
                    split = (j, cut[0])
        if split is None:
            leaves[node] = kaplan_meier(t, d)
            continue
        j, thr = split
        go_left = X[idx, j] <= thr
        lnode, rnode = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = j, thr, lnode, rnode
        # right pushed first so the left subtree is expanded first
        stack.append((rnode, idx[~go_left], depth + 1))
        stack.append((lnode, idx[go_left], depth + 1))
    return feature, threshold, left, right, leaves


def _fit_one(X, times, events, cfg: EnsembleConfig, mtry: int, tree_index: int):
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, tree_index])
    n = X.shape[0]
    m = n if cfg.subsample_fraction >= 1.0 else max(1, int(round(cfg.subsample_fraction * n)))
    idx = np.sort(rng.choice(n, size=m, replace=False))
    return _grow_tree(X[idx], times[idx], events[idx], cfg, mtry, rng)


def fit(dataset: SurvivalDataset, config: EnsembleConfig = EnsembleConfig(), n_jobs: int = 1) -> EnsembleModel:
    """Fit a survival forest; results do not depend on ``n_jobs``."""
    X = dataset.covariates
    if X.shape[1] == 0:
        raise ValueError("the dataset has no covariates")
    if len(dataset) < config.min_node:
        raise ValueError(f"need at least min_node={config.min_node} rows, got {len(dataset)}")
    mtry = config.resolved_mtry(X.shape[1])
    times = dataset.times
    events = dataset.events
    if n_jobs == 1:
        grown = [_fit_one(X, times, events, config, mtry, i) for i in range(config.n_trees)]
    else:
        grown = Parallel(n_jobs=n_jobs)(
            delayed(_fit_one)(X, times, events, config, mtry, i) for i in range(config.n_trees))

    axis = dataset.axis.value if hasattr(dataset.axis, "value") else str(dataset.axis)
    table: dict[bytes, int] = {}
    curves: list[SurvivalCurve] = []
    trees = []
    for feature, threshold, left, right, leaves in grown:
        leaf_curve = np.full(len(feature), -1, dtype=np.int64)
        for k, c in enumerate(leaves):
            if c is None:
                continue
            key = hashlib.sha1(c.times.tobytes() + c.surv.tobytes()).digest()
            if key not in table:
                table[key] = len(curves)
                curves.append(SurvivalCurve(c.times, c.surv, c.support_end, axis))
            leaf_curve[k] = table[key]
        trees.append(SurvivalTree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                                  np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), leaf_curve))
    grid = np.unique(np.concatenate([[0.0], times]))
    return EnsembleModel(trees, curves, grid, config, list(dataset.covariate_names), axis)


# -- prediction ----------------------------------------------------------------

def _leaf_weights(model: EnsembleModel, X: np.ndarray) -> sparse.csr_matrix:
    """(players x curves) matrix of leaf-membership frequencies over trees."""
    n = X.shape[0]
    n_trees = len(model.trees)
    cols = np.empty((n_trees, n), dtype=np.int64)
    for i, tree in enumerate(model.trees):
        cols[i] = tree.leaf_curve[tree.apply(X)]
    rows = np.broadcast_to(np.arange(n), (n_trees, n))
    counts = sparse.coo_matrix((np.ones(cols.size), (rows.ravel(), cols.ravel())),
                               shape=(n, len(model.curves))).tocsr()
    counts.sum_duplicates()
    counts.data /= n_trees
    return counts


def predict_values(model: EnsembleModel, X, chunk: int = 512) -> np.ndarray:
    """Predicted survival on ``model.time_grid`` for each row of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != len(model.covariate_names):
        raise ValueError(f"expected {len(model.covariate_names)} covariates, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("covariates must be finite")
    W = _leaf_weights(model, X)
    out = np.zeros((X.shape[0], model.time_grid.size))
    for start in range(0, len(model.curves), chunk):
        block = model.curves[start:start + chunk]
        V = np.vstack([c(model.time_grid) for c in block])
        out += W[:, start:start + len(block)] @ V
    # guard against rounding pushing a mean past 1
    np.minimum(out, 1.0, out=out)
    return out


def predict_curves(model: EnsembleModel, X) -> list[SurvivalCurve]:
    values = predict_values(model, X)
    return [SurvivalCurve.from_grid(model.time_grid, np.minimum.accumulate(v), model.support_end, model.axis)
            for v in values]


def predict_curve(model: EnsembleModel, covariates: Sequence[float]) -> SurvivalCurve:
    x = np.asarray(covariates, dtype=float)
    if x.ndim != 1:
        raise ValueError("predict_curve takes a single covariate vector")
    return predict_curves(model, x[None, :])[0]


# -- evaluation ----------------------------------------------------------------

def harrell_c(times, events, scores, chunk: int = 256) -> float:
    """Harrell's concordance index; higher score means longer predicted survival.

    A pair (i, j) is comparable when ``t_i < t_j`` and i had the event; it is
    concordant when ``score_i < score_j``.  Score ties count one half.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(events, dtype=bool)
    s = np.asarray(scores, dtype=float)
    if not (t.shape == d.shape == s.shape):
        raise ValueError("times, events and scores must have equal length")
    ev = np.flatnonzero(d)
    num = 0.0
    den = 0
    for start in range(0, ev.size, chunk):
        i = ev[start:start + chunk]
        later = t[None, :] > t[i, None]
        num += float(np.sum(later & (s[None, :] > s[i, None])))
        num += 0.5 * float(np.sum(later & (s[None, :] == s[i, None])))
        den += int(later.sum())
    if den == 0:
        raise ValueError("no comparable pairs")
    return num / den


def survival_scores(curves: Sequence[SurvivalCurve]) -> np.ndarray:
    """Predicted medians, or restricted means for all curves if any median is missing."""
    medians = [median_survival(c) for c in curves]
    if all(m is not None for m in medians):
        return np.array(medians, dtype=float)
    return np.array([restricted_mean(c) for c in curves])


def concordance_index(model: EnsembleModel, holdout: SurvivalDataset) -> float:
    if len(holdout) == 0:
        raise ValueError("empty holdout")
    curves = predict_curves(model, holdout.covariates)
    return harrell_c(holdout.times, holdout.events, survival_scores(curves))
