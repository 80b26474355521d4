"""Survival curves, the Kaplan-Meier estimator and cohort statistics.

A :class:`SurvivalCurve` is a right-continuous, non-increasing step function
stored as knots ``(t_k, s_k)``: ``S(t) = s_k`` for ``t_k <= t < t_{k+1}``.
The first knot sits at ``t = 0``.  ``support_end`` records the largest time in
the data the curve was fitted on; the curve is flat from its last knot up to
(and conceptually beyond) that point.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    times: np.ndarray
    surv: np.ndarray
    support_end: float
    axis: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.surv, dtype=float)
        if t.ndim != 1 or t.shape != s.shape or t.size == 0:
            raise ValueError("times and surv must be non-empty 1-d arrays of equal length")
        if t[0] != 0.0:
            raise ValueError("first knot must be at t=0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot times must be strictly increasing")
        if np.any(s < 0) or np.any(s > 1) or not np.all(np.isfinite(s)):
            raise ValueError("survival values must lie in [0, 1]")
        if np.any(np.diff(s) > 0):
            raise ValueError("survival values must be non-increasing")
        if self.support_end < t[-1]:
            raise ValueError("support_end precedes the last knot")
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "surv", s)
        object.__setattr__(self, "support_end", float(self.support_end))

    def __call__(self, t) -> np.ndarray | float:
        """Evaluate S at ``t`` (scalar or array)."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = self.surv[np.clip(idx, 0, None)]
        if np.ndim(t) == 0:
            return float(out)
        return out

    def __eq__(self, other):
        if not isinstance(other, SurvivalCurve):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.surv, other.surv)
            and self.support_end == other.support_end
            and self.axis == other.axis
        )

    @property
    def knots(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.surv.tolist()))

    @classmethod
    def constant(cls, support_end: float = 0.0, axis: str = "") -> "SurvivalCurve":
        return cls(np.zeros(1), np.ones(1), support_end, axis)

    @classmethod
    def from_grid(cls, grid, values, support_end: float, axis: str = "") -> "SurvivalCurve":
        """Build a curve from values on a grid, keeping only knots where S changes."""
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        keep = np.ones(grid.size, dtype=bool)
        keep[1:] = values[1:] != values[:-1]
        return cls(grid[keep], values[keep], support_end, axis)


def kaplan_meier(times: Sequence[float], events: Sequence[bool], axis: str = "") -> SurvivalCurve:
    """Product-limit estimate of the survival function.

    Parameters
    ----------
    times : sequence of float
        Observed times, non-negative.
    events : sequence of bool
        True where the time is an observed event, False where right-censored.

    Returns
    -------
    SurvivalCurve
        Knots at 0 and at each distinct event time.  Censoring ties at an event
        time count as at risk at that time.  Events at exactly ``t = 0`` lower
        the first knot below 1.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(events, dtype=bool)
    if t.ndim != 1 or t.shape != d.shape:
        raise ValueError("times and events must be 1-d and of equal length")
    if t.size == 0:
        raise ValueError("kaplan_meier needs at least one observation")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("times must be finite and non-negative")

    uniq, inverse = np.unique(t, return_inverse=True)
    n_events = np.bincount(inverse, weights=d, minlength=uniq.size)
    n_total = np.bincount(inverse, minlength=uniq.size)
    at_risk = np.cumsum(n_total[::-1])[::-1]

    has_event = n_events > 0
    ev_t = uniq[has_event]
    factors = 1.0 - n_events[has_event] / at_risk[has_event]
    surv = np.cumprod(factors)

    support_end = float(uniq[-1])
    if ev_t.size and ev_t[0] == 0.0:
        return SurvivalCurve(ev_t, surv, support_end, axis)
    return SurvivalCurve(
        np.concatenate([[0.0], ev_t]), np.concatenate([[1.0], surv]), support_end, axis
    )


def curve_quantile(curve: SurvivalCurve, p: float) -> float | None:
    """Smallest t with S(t) <= p, or None if S stays above p."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    hit = np.flatnonzero(curve.surv <= p)
    if hit.size == 0:
        return None
    return float(curve.times[hit[0]])


def median_survival(curve: SurvivalCurve) -> float | None:
    return curve_quantile(curve, 0.5)


def final_probability(curve: SurvivalCurve) -> float:
    return float(curve.surv[-1])


def restricted_mean(curve: SurvivalCurve, horizon: float | None = None) -> float:
    """Area under S from 0 to ``horizon`` (default: ``support_end``)."""
    end = curve.support_end if horizon is None else float(horizon)
    edges = np.append(curve.times, max(end, curve.times[-1]))
    widths = np.clip(np.minimum(edges[1:], end) - edges[:-1], 0.0, None)
    return float(np.dot(widths, curve.surv))


@dataclass(frozen=True)
class PopulationStats:
    """Cohort averages of median survival on one axis.

    ``avg_median`` is None when no curve has a median;
    ``avg_median_nonvanishing`` is None when no curve with a median ends above 0.
    """

    axis: str
    avg_median: float | None
    avg_median_nonvanishing: float | None
    n_with_median: int = 0
    n_nonvanishing: int = 0


def population_stats(curves: Iterable[SurvivalCurve], axis: str = "") -> PopulationStats:
    curves = list(curves)
    if not curves:
        raise ValueError("population_stats needs at least one curve")
    medians = []
    nonvanishing = []
    for c in curves:
        m = median_survival(c)
        if m is None:
            continue
        medians.append(m)
        if final_probability(c) > 0.0:
            nonvanishing.append(m)
    return PopulationStats(
        axis=axis or curves[0].axis,
        avg_median=math.fsum(medians) / len(medians) if medians else None,
        avg_median_nonvanishing=math.fsum(nonvanishing) / len(nonvanishing) if nonvanishing else None,
        n_with_median=len(medians),
        n_nonvanishing=len(nonvanishing),
    )


def write_curves(curves: Mapping[str, SurvivalCurve], csv_path, index_path=None) -> None:
    """Write one axis worth of curves as ``player_id,t,s`` rows plus a JSON index."""
    csv_path = Path(csv_path)
    index = {}
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["player_id", "t", "s"])
        for pid, c in curves.items():
            for t, s in zip(c.times, c.surv):
                w.writerow([pid, repr(float(t)), repr(float(s))])
            index[pid] = {"support_end": c.support_end, "n_knots": int(c.times.size)}
    if index_path is None:
        index_path = csv_path.with_suffix(".json")
    axis = next(iter(curves.values())).axis if curves else ""
    with open(index_path, "w") as fh:
        json.dump({"axis": axis, "curves_csv": csv_path.name, "players": index}, fh, indent=1, sort_keys=True)


def read_curves(csv_path, index_path=None) -> dict[str, SurvivalCurve]:
    csv_path = Path(csv_path)
    if index_path is None:
        index_path = csv_path.with_suffix(".json")
    with open(index_path) as fh:
        index = json.load(fh)
    knots: dict[str, tuple[list, list]] = {}
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            ts, ss = knots.setdefault(row["player_id"], ([], []))
            ts.append(float(row["t"]))
            ss.append(float(row["s"]))
    return {
        pid: SurvivalCurve(np.array(knots[pid][0]), np.array(knots[pid][1]),
                           meta["support_end"], index.get("axis", ""))
        for pid, meta in index["players"].items()
    }
