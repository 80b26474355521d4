"""Seeded synthetic game cohorts with planted behavioral archetypes.

Each player draws an archetype, an entry date, and a Weibull lifetime.
Sessions follow a renewal process (exponential gaps after each session ends)
with lognormal durations; levels follow accumulated playtime with a fast early
phase and saturation towards the level cap; purchases form a Poisson process
with lognormal amounts, placed inside sessions.  Events after the census date
are dropped.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Mapping, Sequence

import numpy as np

from .segmentation import LifespanGroup, SegmentationConfig, cohort_stats, summarize_curve, lifespan_group
from .survival import kaplan_meier
from .telemetry import (AXES, DAY, HOUR, Axis, EventKind, PlayerEvent, PlayerTimeline, format_ts,
                        parse_ts)

EARLY_PHASE_HOURS = 10.0


@dataclass(frozen=True)
class Archetype:
    name: str
    lifetime_weibull: tuple[float, float]
    sessions_per_day: float
    session_hours: tuple[float, float]
    skill: tuple[float, float]
    spend: tuple[float, tuple[float, float]]
    mixture_weight: float

    def __post_init__(self):
        shape, scale = self.lifetime_weibull
        if shape <= 0 or scale <= 0:
            raise ValueError(f"{self.name}: Weibull shape and scale must be positive")
        if self.sessions_per_day < 0:
            raise ValueError(f"{self.name}: session rate must be non-negative")
        if self.session_hours[0] <= 0 or self.session_hours[1] < 0:
            raise ValueError(f"{self.name}: invalid session length parameters")
        if self.skill[0] < 0 or self.skill[1] < 1:
            raise ValueError(f"{self.name}: skill rate must be >= 0 and boost >= 1")
        if self.spend[0] < 0 or self.spend[1][1] < 0:
            raise ValueError(f"{self.name}: invalid spend parameters")
        if self.mixture_weight <= 0:
            raise ValueError(f"{self.name}: mixture weight must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "Archetype":
        rate, amount = d["spend"]
        return cls(d["name"], tuple(d["lifetime_weibull"]), float(d["sessions_per_day"]),
                   tuple(d["session_hours"]), tuple(d["skill"]), (float(rate), tuple(amount)),
                   float(d["mixture_weight"]))


@dataclass(frozen=True)
class CohortSpec:
    archetypes: tuple[Archetype, ...]
    n_players: int
    start_date: datetime
    census_date: datetime
    seed: int = 0
    max_level: int = 60
    skill_noise: float = 0.1
    spend_skill_correlation: float = 0.0
    inactivity_window_days: int = 9

    def __post_init__(self):
        object.__setattr__(self, "archetypes", tuple(self.archetypes))
        if not self.archetypes:
            raise ValueError("at least one archetype is required")
        if self.n_players < 1:
            raise ValueError("n_players must be >= 1")
        if self.census_date <= self.start_date:
            raise ValueError("census_date must follow start_date")
        w = sum(a.mixture_weight for a in self.archetypes)
        if abs(w - 1.0) > 1e-9:
            raise ValueError(f"archetype weights sum to {w}, not 1")
        if self.max_level < 2:
            raise ValueError("max_level must be >= 2")

    def to_json(self) -> dict:
        d = asdict(self)
        d["start_date"] = format_ts(self.start_date)
        d["census_date"] = format_ts(self.census_date)
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "CohortSpec":
        d = dict(d)
        d["archetypes"] = tuple(Archetype.from_dict(a) for a in d["archetypes"])
        d["start_date"] = parse_ts(d["start_date"])
        d["census_date"] = parse_ts(d["census_date"])
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    player_id: str
    archetype: str
    first_login: datetime
    lifetime_draw_days: float
    skill: float
    churned: bool
    lifetime_days: float
    level: int
    playtime_hours: float
    spend: float

    def value(self, axis) -> float:
        axis = Axis.parse(axis)
        if axis is Axis.LIFETIME:
            return self.lifetime_days
        if axis is Axis.LEVEL:
            return float(self.level)
        return self.playtime_hours


def level_progress(hours, skill_rate: float, boost: float, max_level: int):
    """Continuous level after ``hours`` of play (starts at 1; the cap is applied by the caller).

    Progress accrues at ``skill_rate * boost`` levels/hour at first, relaxing to
    ``skill_rate`` after the early phase, and is then compressed so the cap is reached after finite play.
    """
    h = np.asarray(hours, dtype=float)
    raw = skill_rate * h + (boost - 1.0) * skill_rate * EARLY_PHASE_HOURS * (1.0 - np.exp(-h / EARLY_PHASE_HOURS))
    return 1.0 + max_level * (1.0 - np.exp(-raw / max_level))


def _player(spec: CohortSpec, k: int):
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, k])
    weights = np.array([a.mixture_weight for a in spec.archetypes])
    arch = spec.archetypes[int(rng.choice(len(weights), p=weights / weights.sum()))]
    pid = f"p{k:06d}"

    span_days = (spec.census_date - spec.start_date) / DAY
    entry = spec.start_date + timedelta(days=float(rng.uniform(0.0, span_days)))
    shape, scale = arch.lifetime_weibull
    life = float(scale * rng.weibull(shape))
    skill = float(arch.skill[0] * rng.lognormal(0.0, spec.skill_noise)) if spec.skill_noise > 0 else arch.skill[0]

    # sessions as (start_day, end_day) offsets from entry
    mean_h, disp = arch.session_hours
    mu = math.log(mean_h) - 0.5 * disp * disp
    if arch.sessions_per_day <= 0:
        starts, ends = np.zeros(1), np.zeros(1)
    else:
        # renewal process: exponential gap after each session ends; draw in blocks
        block = max(16, int(life * arch.sessions_per_day * 1.2) + 8)
        durs, gaps = [], []
        t = 0.0
        while t <= life:
            d = rng.lognormal(mu, disp, block) / 24.0
            g = rng.exponential(1.0 / arch.sessions_per_day, block)
            durs.append(d)
            gaps.append(g)
            t += float(d.sum() + g.sum())
        d = np.concatenate(durs)
        g = np.concatenate(gaps)
        starts = np.concatenate([[0.0], np.cumsum(d + g)[:-1]])
        keep = starts <= life
        starts, ends = starts[keep], (starts + d)[keep]

    events = []

    def at(day):
        return entry + timedelta(days=float(day))

    hours = (ends - starts) * 24.0
    played_before = np.concatenate([[0.0], np.cumsum(hours)[:-1]])
    sub = np.linspace(0.0, 1.0, 17)[1:]
    if skill > 0:
        lv = level_progress(played_before[:, None] + sub[None, :] * hours[:, None],
                            skill, arch.skill[1], spec.max_level)
        lv = np.minimum(np.floor(lv + 1e-9), spec.max_level).astype(int)
    else:
        lv = np.ones((starts.size, sub.size), dtype=int)
    level = 1
    for j, (s, e) in enumerate(zip(starts, ends)):
        events.append(PlayerEvent(pid, at(s), EventKind.SESSION_START))
        if e > s and lv[j, -1] > level:
            for frac, target in zip(sub, lv[j]):
                while level < target:
                    level += 1
                    events.append(PlayerEvent(pid, at(s + frac * (e - s)), EventKind.LEVEL_UP, level=level))
        if e > s:
            events.append(PlayerEvent(pid, at(e), EventKind.SESSION_END))
    sessions = list(zip(starts, ends))

    rate, (amu, asig) = arch.spend
    rate *= (skill / arch.skill[0]) ** spec.spend_skill_correlation if arch.skill[0] > 0 else 1.0
    n_purchases = int(rng.poisson(rate * life)) if rate > 0 else 0
    if n_purchases:
        which = rng.integers(0, len(sessions), n_purchases)
        fracs = rng.uniform(0.0, 1.0, n_purchases)
        amounts = rng.lognormal(amu, asig, n_purchases)
        for w, f, amt in zip(which, fracs, amounts):
            s, e = sessions[w]
            events.append(PlayerEvent(pid, at(s + f * (e - s)), EventKind.PURCHASE, amount=round(float(amt), 2)))

    # stable sort: a purchase or level-up at a session boundary stays after its start
    order = {EventKind.SESSION_START: 0, EventKind.LEVEL_UP: 1, EventKind.PURCHASE: 1, EventKind.SESSION_END: 2}
    events.sort(key=lambda ev: (ev.timestamp, order[ev.kind]))
    events = [ev for ev in events if ev.timestamp <= spec.census_date]
    timeline = PlayerTimeline(pid, tuple(events))
    return timeline, _ground_truth(timeline, arch.name, life, skill, spec)


def _ground_truth(tl: PlayerTimeline, archetype: str, life: float, skill: float, spec: CohortSpec) -> GroundTruth:
    census = spec.census_date
    churned = census - tl.last_event > timedelta(days=spec.inactivity_window_days)
    hours = 0.0
    start = None
    for ev in tl.events:
        if ev.kind is EventKind.SESSION_START:
            start = ev.timestamp
        elif ev.kind is EventKind.SESSION_END:
            hours += (ev.timestamp - start) / HOUR
            start = None
    if start is not None:
        hours += ((tl.last_event if churned else census) - start) / HOUR
    levels = [ev.level for ev in tl.events if ev.kind is EventKind.LEVEL_UP]
    spend = math.fsum(ev.amount for ev in tl.events if ev.kind is EventKind.PURCHASE)
    lifetime = ((tl.last_event if churned else census) - tl.first_login) / DAY
    return GroundTruth(tl.player_id, archetype, tl.first_login, life, skill, churned,
                       lifetime, max(levels, default=1), hours, spend)


def generate_cohort(spec: CohortSpec) -> tuple[list[PlayerTimeline], list[GroundTruth]]:
    timelines, truth = [], []
    for k in range(spec.n_players):
        tl, gt = _player(spec, k)
        timelines.append(tl)
        truth.append(gt)
    return timelines, truth


def archetype_curves(ground_truth: Sequence[GroundTruth]) -> dict[str, dict[Axis, object]]:
    """Kaplan-Meier curve of realized values per archetype and axis (churn = event)."""
    by_arch: dict[str, list[GroundTruth]] = {}
    for g in ground_truth:
        by_arch.setdefault(g.archetype, []).append(g)
    return {
        name: {ax: kaplan_meier([g.value(ax) for g in rows], [g.churned for g in rows], ax.value)
               for ax in AXES}
        for name, rows in sorted(by_arch.items())
    }


def label_ground_truth_groups(ground_truth: Sequence[GroundTruth], scored: Sequence[str] | None = None,
                              cfg: SegmentationConfig = SegmentationConfig()) -> dict[str, dict[Axis, LifespanGroup]]:
    """Oracle lifespan groups from realized values.

    Every player is represented by the empirical curve of its archetype.  Cohort
    averages are taken over the ``scored`` players (default: active ones); a
    clause whose average is undefined counts as not satisfied.
    """
    curves = archetype_curves(ground_truth)
    if scored is None:
        scored = [g.player_id for g in ground_truth if not g.churned] or [g.player_id for g in ground_truth]
    scored = set(scored)
    members = [g for g in ground_truth if g.player_id in scored]
    labels: dict[str, dict[Axis, LifespanGroup]] = {g.player_id: {} for g in members}
    for ax in AXES:
        stats = cohort_stats([curves[g.archetype][ax] for g in members], cfg, ax.value)
        for g in members:
            median, p25, fp = summarize_curve(curves[g.archetype][ax], cfg)
            try:
                group = lifespan_group(median, p25, fp, stats, cfg)
            except ValueError:
                group = LifespanGroup.SHORT
            labels[g.player_id][ax] = group
    return labels


def write_ground_truth(ground_truth: Sequence[GroundTruth], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["player_id", "archetype", "first_login", "lifetime_draw_days", "skill", "churned",
                    "lifetime_days", "level", "playtime_hours", "spend"])
        for g in ground_truth:
            w.writerow([g.player_id, g.archetype, format_ts(g.first_login), repr(g.lifetime_draw_days),
                        repr(g.skill), int(g.churned), repr(g.lifetime_days), g.level,
                        repr(g.playtime_hours), repr(g.spend)])


def read_ground_truth(path) -> list[GroundTruth]:
    with open(path, newline="") as fh:
        return [GroundTruth(r["player_id"], r["archetype"], parse_ts(r["first_login"]),
                            float(r["lifetime_draw_days"]), float(r["skill"]), r["churned"] == "1",
                            float(r["lifetime_days"]), int(r["level"]), float(r["playtime_hours"]),
                            float(r["spend"]))
                for r in csv.DictReader(fh)]


def default_archetypes() -> tuple[Archetype, ...]:
    """Four well-separated archetypes, including a skillful low spender."""
    return (
        Archetype("casual", (1.0, 20.0), 0.8, (0.5, 0.5), (1.0, 3.0), (0.02, (1.5, 0.6)), 0.3),
        Archetype("regular", (1.2, 150.0), 1.0, (1.0, 0.5), (0.6, 3.0), (0.05, (2.5, 0.6)), 0.3),
        Archetype("whale", (1.5, 2500.0), 2.0, (3.0, 0.4), (0.3, 3.0), (0.5, (4.0, 0.5)), 0.2),
        Archetype("skillful", (2.0, 690.0), 1.2, (0.7, 0.4), (8.0, 3.0), (0.02, (1.5, 0.6)), 0.2),
    )


def default_spec(n_players: int = 2000, seed: int = 0) -> CohortSpec:
    start = datetime(2015, 1, 1, tzinfo=timezone.utc)
    return CohortSpec(default_archetypes(), n_players, start, start + timedelta(days=720), seed)
