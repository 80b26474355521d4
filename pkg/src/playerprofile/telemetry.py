"""Event-log ingestion, churn/censoring rules and dataset construction.

Input records are line-delimited JSON objects
``{"player_id", "ts", "kind", "level"?, "amount"?}`` (``ts`` in RFC 3339) or a
CSV file with the same columns and a header row.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

DAY = timedelta(days=1)
HOUR = timedelta(hours=1)


class EventKind(str, Enum):
    SESSION_START = "session_start"
    SESSION_END = "session_end"
    LEVEL_UP = "level_up"
    PURCHASE = "purchase"


class Axis(str, Enum):
    LIFETIME = "lifetime_days"
    LEVEL = "level"
    PLAYTIME = "playtime_hours"

    @classmethod
    def parse(cls, name: str | "Axis") -> "Axis":
        if isinstance(name, Axis):
            return name
        aliases = {"lifetime": cls.LIFETIME, "playtime": cls.PLAYTIME, "level": cls.LEVEL}
        if name in aliases:
            return aliases[name]
        return cls(name)

    @property
    def short(self) -> str:
        return {"lifetime_days": "lifetime", "level": "level", "playtime_hours": "playtime"}[self.value]


AXES = (Axis.LIFETIME, Axis.LEVEL, Axis.PLAYTIME)


@dataclass(frozen=True)
class PlayerEvent:
    player_id: str
    timestamp: datetime
    kind: EventKind
    level: int | None = None
    amount: float | None = None

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must be timezone-aware")
        if self.kind is EventKind.LEVEL_UP:
            if self.level is None or self.level < 1:
                raise ValueError("level_up needs a positive level")
        if self.kind is EventKind.PURCHASE:
            if self.amount is None or not math.isfinite(self.amount) or self.amount < 0:
                raise ValueError("purchase needs a finite non-negative amount")

    def to_record(self) -> dict:
        rec = {"player_id": self.player_id, "ts": format_ts(self.timestamp), "kind": self.kind.value}
        if self.level is not None:
            rec["level"] = self.level
        if self.amount is not None:
            rec["amount"] = self.amount
        return rec


@dataclass(frozen=True)
class PlayerTimeline:
    player_id: str
    events: tuple[PlayerEvent, ...]

    def __post_init__(self):
        if not self.events:
            raise ValueError("a timeline needs at least one event")
        ts = [e.timestamp for e in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("events must be time-ordered")

    @property
    def first_login(self) -> datetime:
        return self.events[0].timestamp

    @property
    def last_event(self) -> datetime:
        return self.events[-1].timestamp

    def until(self, census: datetime) -> "PlayerTimeline | None":
        """Events at or before ``census``; None if nothing remains."""
        kept = tuple(e for e in self.events if e.timestamp <= census)
        if len(kept) == len(self.events):
            return self
        return PlayerTimeline(self.player_id, kept) if kept else None


@dataclass(frozen=True)
class ChurnPolicy:
    census_date: datetime
    inactivity_window_days: int = 9

    def __post_init__(self):
        if self.inactivity_window_days < 1:
            raise ValueError("inactivity_window_days must be >= 1")
        if self.census_date.tzinfo is None:
            raise ValueError("census_date must be timezone-aware")


@dataclass
class SurvivalDataset:
    axis: Axis
    player_ids: list[str]
    covariates: np.ndarray
    times: np.ndarray
    events: np.ndarray
    covariate_names: list[str]

    def __post_init__(self):
        self.covariates = np.asarray(self.covariates, dtype=float).reshape(len(self.player_ids), -1)
        self.times = np.asarray(self.times, dtype=float)
        self.events = np.asarray(self.events, dtype=bool)
        n = len(self.player_ids)
        if self.times.shape != (n,) or self.events.shape != (n,):
            raise ValueError("row arrays must all have one entry per player")
        if self.covariates.shape[1] != len(self.covariate_names):
            raise ValueError("covariate width does not match covariate_names")
        if np.any(self.times < 0):
            raise ValueError("survival times must be non-negative")

    def __len__(self):
        return len(self.player_ids)

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return SurvivalDataset(self.axis, [self.player_ids[i] for i in idx], self.covariates[idx],
                               self.times[idx], self.events[idx], list(self.covariate_names))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["player_id", "time", "event", *self.covariate_names])
            for i, pid in enumerate(self.player_ids):
                w.writerow([pid, repr(float(self.times[i])), int(self.events[i]),
                            *(repr(float(v)) for v in self.covariates[i])])

    @classmethod
    def from_csv(cls, path, axis) -> "SurvivalDataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        names = header[3:]
        return cls(
            Axis.parse(axis),
            [r[0] for r in rows],
            np.array([[float(v) for v in r[3:]] for r in rows], dtype=float).reshape(len(rows), len(names)),
            np.array([float(r[1]) for r in rows]),
            np.array([r[2] in ("1", "true", "True") for r in rows]),
            names,
        )


# -- parsing -----------------------------------------------------------------

@dataclass(frozen=True)
class LineError:
    lineno: int
    message: str


def parse_ts(text: str) -> datetime:
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp without offset: {text!r}")
    return ts.astimezone(timezone.utc)


def format_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _record_to_event(rec: dict) -> PlayerEvent:
    missing = {"player_id", "ts", "kind"} - rec.keys()
    if missing:
        raise ValueError(f"missing field(s): {', '.join(sorted(missing))}")
    kind = EventKind(rec["kind"])
    level = rec.get("level")
    amount = rec.get("amount")
    level = int(level) if level not in (None, "") else None
    amount = float(amount) if amount not in (None, "") else None
    return PlayerEvent(str(rec["player_id"]), parse_ts(str(rec["ts"])), kind,
                       level if kind is EventKind.LEVEL_UP else None,
                       amount if kind is EventKind.PURCHASE else None)


def _records(stream: TextIO) -> Iterable[tuple[int, dict | Exception]]:
    head = ""
    lines = iter(stream)
    buffered = []
    for line in lines:
        buffered.append(line)
        if line.strip():
            head = line.lstrip()
            break
    if not head:
        return
    if head.startswith("{"):
        for lineno, line in enumerate(_chain(buffered, lines), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not a JSON object")
                yield lineno, rec
            except ValueError as exc:
                yield lineno, exc
    else:
        reader = csv.DictReader(_chain(buffered, lines))
        for rec in reader:
            lineno = reader.line_num
            if None in rec or any(v is None for v in rec.values()):
                yield lineno, ValueError("wrong number of CSV columns")
            else:
                yield lineno, rec


def _chain(first, rest):
    yield from first
    yield from rest


def parse_event_log(stream: TextIO, errors: list[LineError] | None = None) -> list[PlayerTimeline]:
    """Parse an event stream into per-player timelines.

    Malformed records and records that break a timeline invariant (negative
    amounts, a ``session_end`` without an open session, non-increasing
    ``level_up`` levels) are skipped; each skip is logged and, if ``errors`` is
    given, appended to it.
    """
    if errors is None:
        errors = []
    by_player: dict[str, list[tuple[int, PlayerEvent]]] = {}
    for lineno, rec in _records(stream):
        if isinstance(rec, Exception):
            _skip(errors, lineno, str(rec))
            continue
        try:
            ev = _record_to_event(rec)
        except (ValueError, TypeError) as exc:
            _skip(errors, lineno, str(exc))
            continue
        by_player.setdefault(ev.player_id, []).append((lineno, ev))

    timelines = []
    for pid in sorted(by_player):
        # stable sort keeps file order among equal timestamps
        entries = sorted(by_player[pid], key=lambda le: le[1].timestamp)
        kept = []
        open_session = False
        last_level = 0
        for lineno, ev in entries:
            if ev.kind is EventKind.SESSION_START:
                open_session = True
            elif ev.kind is EventKind.SESSION_END:
                if not open_session:
                    _skip(errors, lineno, "session_end without a preceding session_start")
                    continue
                open_session = False
            elif ev.kind is EventKind.LEVEL_UP:
                if ev.level <= last_level:
                    _skip(errors, lineno, f"level {ev.level} does not increase on {last_level}")
                    continue
                last_level = ev.level
            kept.append(ev)
        if kept:
            timelines.append(PlayerTimeline(pid, tuple(kept)))
    return timelines


def _skip(errors, lineno, message):
    logger.warning("line %d skipped: %s", lineno, message)
    errors.append(LineError(lineno, message))


def read_event_log(path, errors: list[LineError] | None = None) -> list[PlayerTimeline]:
    with open(path, newline="") as fh:
        return parse_event_log(fh, errors)


def write_event_log(timelines: Iterable[PlayerTimeline], path_or_stream) -> None:
    """Write timelines as line-delimited JSON, one event per line."""
    if isinstance(path_or_stream, (str, Path)):
        with open(path_or_stream, "w") as fh:
            write_event_log(timelines, fh)
        return
    for tl in timelines:
        for ev in tl.events:
            path_or_stream.write(json.dumps(ev.to_record(), sort_keys=True) + "\n")


# -- churn and spend ---------------------------------------------------------

def is_churned(timeline: PlayerTimeline, policy: ChurnPolicy) -> bool:
    """True when the last event precedes the census by more than the window."""
    if policy.census_date < timeline.first_login:
        raise ValueError(f"census date precedes first login of player {timeline.player_id}")
    last = max(e.timestamp for e in timeline.events if e.timestamp <= policy.census_date)
    return (policy.census_date - last) > timedelta(days=policy.inactivity_window_days)


def window_spend(timelines: Sequence[PlayerTimeline], window_days: int = 61) -> dict[str, float]:
    """Per-player spend in ``[t0, t0 + window_days)``, t0 the earliest first login."""
    if not timelines:
        return {}
    t0 = min(tl.first_login for tl in timelines)
    end = t0 + timedelta(days=window_days)
    return {
        tl.player_id: math.fsum(e.amount for e in tl.events
                                if e.kind is EventKind.PURCHASE and e.timestamp < end)
        for tl in timelines
    }


def threshold_from_spend(spend: Iterable[float], target_share: float) -> float:
    """Spend of the last player in the shortest top-down prefix reaching the share."""
    if not 0.0 < target_share < 1.0:
        raise ValueError("target_share must lie in (0, 1)")
    values = np.sort(np.asarray([v for v in spend if v > 0], dtype=float))[::-1]
    total = math.fsum(values)
    if total <= 0:
        raise ValueError("no purchases inside the threshold window")
    cum = np.cumsum(values)
    k = int(np.searchsorted(cum / total >= target_share, True))
    return float(values[min(k, values.size - 1)])


def top_spender_threshold(timelines: Sequence[PlayerTimeline], window_days: int = 61,
                          target_share: float = 0.5) -> float:
    if window_days < 1:
        raise ValueError("window_days must be positive")
    return threshold_from_spend(window_spend(timelines, window_days).values(), target_share)


def total_spend(timeline: PlayerTimeline, until: datetime | None = None) -> float:
    return math.fsum(e.amount for e in timeline.events
                     if e.kind is EventKind.PURCHASE and (until is None or e.timestamp <= until))


def filter_top_spenders(timelines: Sequence[PlayerTimeline], threshold: float,
                        census: datetime | None = None) -> list[PlayerTimeline]:
    """Keep players whose accumulated spend (up to ``census``) reaches ``threshold``."""
    return [tl for tl in timelines if total_spend(tl, census) >= threshold]


# -- per-player summaries ----------------------------------------------------

@dataclass(frozen=True)
class Summary:
    """Observed engagement of one player at a census date."""

    churned: bool
    tenure_days: float
    lifetime_days: float
    level: int
    playtime_hours: float
    n_sessions: int
    n_purchases: int
    spend: float
    early_level_rate: float
    first_week_hours: float


EARLY_HOURS = 10.0


def summarize(timeline: PlayerTimeline, policy: ChurnPolicy) -> Summary:
    census = policy.census_date
    tl = timeline.until(census)
    if tl is None:
        raise ValueError(f"player {timeline.player_id} has no events before the census")
    churned = is_churned(tl, policy)
    # open sessions: closed at census for active players, at the last event for churned ones
    close_at = tl.last_event if churned else census

    hours = 0.0
    n_sessions = 0
    level = 1
    n_purchases = 0
    spend = []
    open_start = None
    first_week_end = tl.first_login + timedelta(days=7)
    first_week_hours = 0.0
    # (cumulative hours, level) at each level_up, for the early progression rate
    level_marks = []

    def _close(start, end):
        nonlocal hours, first_week_hours
        hours += (end - start) / HOUR
        if start < first_week_end:
            first_week_hours += (min(end, first_week_end) - start) / HOUR

    for ev in tl.events:
        if ev.kind is EventKind.SESSION_START:
            if open_start is not None:
                _close(open_start, ev.timestamp)
            open_start = ev.timestamp
            n_sessions += 1
        elif ev.kind is EventKind.SESSION_END:
            if open_start is not None:
                _close(open_start, ev.timestamp)
            open_start = None
        elif ev.kind is EventKind.LEVEL_UP:
            level = max(level, ev.level)
            played = hours + ((ev.timestamp - open_start) / HOUR if open_start is not None else 0.0)
            level_marks.append((played, ev.level))
        elif ev.kind is EventKind.PURCHASE:
            n_purchases += 1
            spend.append(ev.amount)
    if open_start is not None:
        _close(open_start, max(close_at, open_start))

    horizon = min(hours, EARLY_HOURS)
    early_levels = max((lv for h, lv in level_marks if h <= horizon), default=1) - 1
    early_rate = early_levels / horizon if horizon > 0 else 0.0

    tenure = (census - tl.first_login) / DAY
    lifetime = (tl.last_event - tl.first_login) / DAY if churned else tenure
    return Summary(churned, tenure, lifetime, level, hours, n_sessions, n_purchases,
                   math.fsum(spend), early_rate, first_week_hours)


def _per_active_day(count, s: Summary):
    return count / max(s.lifetime_days, 1.0)


COVARIATES: dict[str, Callable[[Summary], float]] = {
    "sessions_per_day": lambda s: _per_active_day(s.n_sessions, s),
    "hours_per_session": lambda s: s.playtime_hours / s.n_sessions if s.n_sessions else 0.0,
    "early_level_rate": lambda s: s.early_level_rate,
    "purchases_per_day": lambda s: _per_active_day(s.n_purchases, s),
    "spend_per_purchase": lambda s: s.spend / s.n_purchases if s.n_purchases else 0.0,
    "spend_per_day": lambda s: _per_active_day(s.spend, s),
    "first_week_hours": lambda s: s.first_week_hours,
    "tenure_days": lambda s: s.lifetime_days,
    "level": lambda s: float(s.level),
    "playtime_hours": lambda s: s.playtime_hours,
    "total_spend": lambda s: s.spend,
}

DEFAULT_COVARIATES = (
    "sessions_per_day",
    "hours_per_session",
    "early_level_rate",
    "purchases_per_day",
    "spend_per_purchase",
)


def axis_time(s: Summary, axis: Axis) -> float:
    axis = Axis.parse(axis)
    if axis is Axis.LIFETIME:
        return s.lifetime_days
    if axis is Axis.LEVEL:
        return float(s.level)
    return s.playtime_hours


def covariate_matrix(summaries: Sequence[Summary], covariate_spec: Sequence[str]) -> np.ndarray:
    unknown = [n for n in covariate_spec if n not in COVARIATES]
    if unknown:
        raise KeyError(f"unknown covariate(s): {', '.join(unknown)}")
    return np.array([[COVARIATES[n](s) for n in covariate_spec] for s in summaries],
                    dtype=float).reshape(len(summaries), len(covariate_spec))


def build_survival_dataset(timelines: Sequence[PlayerTimeline], axis, policy: ChurnPolicy,
                           covariate_spec: Sequence[str] = DEFAULT_COVARIATES) -> SurvivalDataset:
    """One row per player: covariates, observed time on ``axis`` and churn flag.

    Churned players contribute an event at their terminal value; active players
    are right-censored at the value accumulated up to the census date.  Only
    events at or before the census date are used.
    """
    if not timelines:
        raise ValueError("no timelines to build a dataset from")
    axis = Axis.parse(axis)
    unknown = [n for n in covariate_spec if n not in COVARIATES]
    if unknown:
        raise KeyError(f"unknown covariate(s): {', '.join(unknown)}")
    summaries = [summarize(tl, policy) for tl in timelines]
    return SurvivalDataset(
        axis,
        [tl.player_id for tl in timelines],
        covariate_matrix(summaries, covariate_spec),
        np.array([axis_time(s, axis) for s in summaries]),
        np.array([s.churned for s in summaries]),
        list(covariate_spec),
    )


# -- sequences ---------------------------------------------------------------

ACTION_CHANNELS = ("sessions", "playtime_hours", "levels_gained")
PURCHASE_CHANNELS = ("purchases", "spend")


def build_sequences(timeline: PlayerTimeline, bucket: timedelta, horizon: int,
                    until: datetime | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bucketed action and purchase series starting at first login.

    Returns ``(actions[horizon, 3], purchases[horizon, 2], mask[horizon])``.
    Sessions and level-ups are counted in the bucket they start in, session
    hours are split across the buckets they overlap.  Buckets past the
    player's last observed instant (last event, or ``until`` if given) are
    zero with mask 0.
    """
    if bucket <= timedelta(0):
        raise ValueError("bucket must be positive")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    t0 = timeline.first_login
    tl = timeline if until is None else (timeline.until(until) or timeline)
    actions = np.zeros((horizon, len(ACTION_CHANNELS)))
    purchases = np.zeros((horizon, len(PURCHASE_CHANNELS)))
    end_of_obs = tl.last_event if until is None else max(until, tl.last_event)
    n_valid = min(horizon, int((end_of_obs - t0) // bucket) + 1)
    mask = np.zeros(horizon)
    mask[:n_valid] = 1.0

    def _bucket(ts):
        return int((ts - t0) // bucket)

    def _add_hours(start, end):
        b = _bucket(start)
        while start < end and b < horizon:
            b_end = t0 + (b + 1) * bucket
            seg_end = min(end, b_end)
            actions[b, 1] += (seg_end - start) / HOUR
            start = seg_end
            b += 1

    last_level = 1
    open_start = None
    for ev in tl.events:
        b = _bucket(ev.timestamp)
        if ev.kind is EventKind.SESSION_START:
            if open_start is not None:
                _add_hours(open_start, ev.timestamp)
            open_start = ev.timestamp
            if b < horizon:
                actions[b, 0] += 1
        elif ev.kind is EventKind.SESSION_END:
            if open_start is not None:
                _add_hours(open_start, ev.timestamp)
            open_start = None
        elif ev.kind is EventKind.LEVEL_UP:
            if b < horizon:
                actions[b, 2] += ev.level - last_level
            last_level = ev.level
        elif ev.kind is EventKind.PURCHASE and b < horizon:
            purchases[b, 0] += 1
            purchases[b, 1] += ev.amount
    if open_start is not None and until is not None:
        _add_hours(open_start, until)
    return actions, purchases, mask
