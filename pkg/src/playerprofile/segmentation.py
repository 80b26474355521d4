"""Lifespan and spending groups from predicted curves and LTV."""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .survival import (PopulationStats, SurvivalCurve, curve_quantile, final_probability,
                       population_stats)
from .telemetry import AXES, Axis


class LifespanGroup(str, Enum):
    SHORT = "short"
    MEDIUM = "medium"
    LONG = "long"
    LOYAL = "loyal"


class SpendingGroup(str, Enum):
    LOW = "low"
    NORMAL = "normal"
    HIGH = "high"


class DegenerateCohortError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationConfig:
    median_prob: float = 0.5
    lower_prob: float = 0.25
    low_spend_factor: float = 0.5
    high_spend_factor: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.lower_prob < self.median_prob < 1.0:
            raise ValueError("need 0 < lower_prob < median_prob < 1")
        if not 0.0 < self.low_spend_factor < self.high_spend_factor:
            raise ValueError("need 0 < low_spend_factor < high_spend_factor")


@dataclass(frozen=True)
class AxisProfile:
    group: LifespanGroup
    median: float | None
    p25: float | None
    final_prob: float


@dataclass(frozen=True)
class PlayerProfile:
    player_id: str
    lifetime: AxisProfile
    level: AxisProfile
    playtime: AxisProfile
    predicted_ltv: float
    spending: SpendingGroup

    def axis(self, axis) -> AxisProfile:
        return getattr(self, Axis.parse(axis).short)


def cohort_stats(curves: Sequence[SurvivalCurve], cfg: SegmentationConfig = SegmentationConfig(),
                 axis: str = "") -> PopulationStats:
    if cfg.median_prob == 0.5:
        return population_stats(curves, axis)
    # population_stats is defined on the median; redo it for another cut
    meds, nonvan = [], []
    for c in curves:
        m = curve_quantile(c, cfg.median_prob)
        if m is not None:
            meds.append(m)
            if final_probability(c) > 0:
                nonvan.append(m)
    return PopulationStats(axis, math.fsum(meds) / len(meds) if meds else None,
                           math.fsum(nonvan) / len(nonvan) if nonvan else None, len(meds), len(nonvan))


def _require(value, clause):
    if value is None:
        raise DegenerateCohortError(f"population average needed by clause {clause} is undefined")
    return value


def lifespan_group(median: float | None, p25: float | None, final_prob: float,
                   stats: PopulationStats, cfg: SegmentationConfig = SegmentationConfig()) -> LifespanGroup:
    """Group from a curve's summary values.

    loyal: no median.  With final probability ``fp``:
    ``lower <= fp < median_prob``: long if median >= average, else medium;
    ``0 < fp < lower``: medium if the ``lower`` quantile >= average;
    ``fp == 0``: medium if median >= the average over non-vanishing curves.
    Everything else is short.
    """
    if median is None:
        return LifespanGroup.LOYAL
    if cfg.lower_prob <= final_prob < cfg.median_prob:
        avg = _require(stats.avg_median, "(i)")
        return LifespanGroup.LONG if median >= avg else LifespanGroup.MEDIUM
    if 0.0 < final_prob < cfg.lower_prob:
        avg = _require(stats.avg_median, "(ii)")
        if p25 is not None and p25 >= avg:
            return LifespanGroup.MEDIUM
    elif final_prob == 0.0:
        avg = _require(stats.avg_median_nonvanishing, "(iii)")
        if median >= avg:
            return LifespanGroup.MEDIUM
    return LifespanGroup.SHORT


def summarize_curve(curve: SurvivalCurve, cfg: SegmentationConfig = SegmentationConfig()):
    return (curve_quantile(curve, cfg.median_prob), curve_quantile(curve, cfg.lower_prob),
            final_probability(curve))


def classify_lifespan(curve: SurvivalCurve, stats: PopulationStats,
                      cfg: SegmentationConfig = SegmentationConfig()) -> LifespanGroup:
    return lifespan_group(*summarize_curve(curve, cfg), stats, cfg)


def classify_spending(ltv: float, avg_ltv: float, cfg: SegmentationConfig = SegmentationConfig()) -> SpendingGroup:
    if not avg_ltv > 0:
        raise ValueError("average LTV must be positive")
    if ltv < cfg.low_spend_factor * avg_ltv:
        return SpendingGroup.LOW
    if ltv >= cfg.high_spend_factor * avg_ltv:
        return SpendingGroup.HIGH
    return SpendingGroup.NORMAL


def profile_players(curves: Mapping, ltv: Mapping[str, float],
                    cfg: SegmentationConfig = SegmentationConfig()) -> list[PlayerProfile]:
    """Profiles for every player in ``ltv``.

    ``curves`` maps each axis (``Axis`` or its name) to ``{player_id: curve}``.
    Averages are taken over exactly the players in ``ltv``.
    """
    by_axis = {Axis.parse(k): v for k, v in curves.items()}
    players = sorted(ltv)
    missing = sorted({pid for ax in AXES for pid in players if pid not in by_axis.get(ax, {})})
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise KeyError(f"{len(missing)} player(s) lack a curve on some axis: {shown}")
    if not players:
        return []

    per_axis = {}
    for ax in AXES:
        summaries = {pid: summarize_curve(by_axis[ax][pid], cfg) for pid in players}
        stats = cohort_stats([by_axis[ax][pid] for pid in players], cfg, ax.value)
        per_axis[ax] = {pid: AxisProfile(lifespan_group(*s, stats, cfg), *s) for pid, s in summaries.items()}
    avg_ltv = math.fsum(ltv[pid] for pid in players) / len(players)
    return [
        PlayerProfile(pid, per_axis[Axis.LIFETIME][pid], per_axis[Axis.LEVEL][pid],
                      per_axis[Axis.PLAYTIME][pid], float(ltv[pid]),
                      classify_spending(ltv[pid], avg_ltv, cfg))
        for pid in players
    ]


def select_skillful(profiles: Sequence[PlayerProfile]) -> list[PlayerProfile]:
    """Loyal in level while non-loyal in playtime."""
    return [p for p in profiles
            if p.level.group is LifespanGroup.LOYAL and p.playtime.group is not LifespanGroup.LOYAL]


PROFILE_COLUMNS = ["player_id", "lifetime_group", "lifetime_median", "level_group", "level_median",
                   "playtime_group", "playtime_median", "ltv", "spending_group"]


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_profiles(profiles: Sequence[PlayerProfile], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS)
        for p in profiles:
            w.writerow([p.player_id, p.lifetime.group.value, _fmt(p.lifetime.median),
                        p.level.group.value, _fmt(p.level.median),
                        p.playtime.group.value, _fmt(p.playtime.median),
                        repr(float(p.predicted_ltv)), p.spending.value])


def read_profiles(path) -> list[dict]:
    """Rows of ``profiles.csv`` with medians/LTV as floats (None when empty)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("lifetime_median", "level_median", "playtime_median", "ltv"):
            r[k] = float(r[k]) if r[k] != "" else None
    return rows


def cohort_summary(profiles: Sequence[PlayerProfile], cfg: SegmentationConfig = SegmentationConfig()) -> dict:
    out = {"n_players": len(profiles), "axes": {}}
    for ax in AXES:
        aps = [p.axis(ax) for p in profiles]
        meds = [a.median for a in aps if a.median is not None]
        nonvan = [a.median for a in aps if a.median is not None and a.final_prob > 0]
        counts = Counter(a.group.value for a in aps)
        out["axes"][ax.short] = {
            "groups": {g.value: counts.get(g.value, 0) for g in LifespanGroup},
            "avg_median": math.fsum(meds) / len(meds) if meds else None,
            "avg_median_nonvanishing": math.fsum(nonvan) / len(nonvan) if nonvan else None,
        }
    ltvs = [p.predicted_ltv for p in profiles]
    spend_counts = Counter(p.spending.value for p in profiles)
    out["ltv"] = {"avg": math.fsum(ltvs) / len(ltvs) if ltvs else None,
                  "groups": {g.value: spend_counts.get(g.value, 0) for g in SpendingGroup}}
    out["skillful"] = len(select_skillful(profiles))
    return out


def write_summary(profiles, path, cfg: SegmentationConfig = SegmentationConfig()) -> None:
    with open(path, "w") as fh:
        json.dump(cohort_summary(profiles, cfg), fh, indent=2, sort_keys=True)
