import io
import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import brute_force_threshold
from playerprofile.telemetry import (Axis, ChurnPolicy, EventKind, PlayerEvent, PlayerTimeline,
                                     SurvivalDataset, build_sequences, build_survival_dataset,
                                     filter_top_spenders, format_ts, is_churned, parse_event_log,
                                     parse_ts, summarize, threshold_from_spend, top_spender_threshold,
                                     window_spend, write_event_log)

T0 = datetime(2020, 1, 1, tzinfo=timezone.utc)


def at(days=0.0, hours=0.0):
    return T0 + timedelta(days=days, hours=hours)


def ev(pid, when, kind, **kw):
    return PlayerEvent(pid, when, EventKind(kind), **kw)


def timeline(pid, *events):
    evs = [ev(pid, *e[:2], **(e[2] if len(e) > 2 else {})) for e in events]
    return PlayerTimeline(pid, tuple(sorted(evs, key=lambda e: e.timestamp)))


def session(day, hours):
    return [(at(day), "session_start"), (at(day, hours), "session_end")]


# -- parsing ------------------------------------------------------------------

NDJSON = """\
{"player_id": "a", "ts": "2020-01-01T00:00:00Z", "kind": "session_start"}
{"player_id": "a", "ts": "2020-01-01T01:00:00Z", "kind": "level_up", "level": 2}
{"player_id": "a", "ts": "2020-01-01T01:30:00Z", "kind": "purchase", "amount": 4.99}
{"player_id": "a", "ts": "2020-01-01T02:00:00+00:00", "kind": "session_end"}
{"player_id": "b", "ts": "2020-01-02T00:00:00Z", "kind": "session_start"}
"""

CSV = """\
player_id,ts,kind,level,amount
a,2020-01-01T00:00:00Z,session_start,,
a,2020-01-01T01:00:00Z,level_up,2,
a,2020-01-01T01:30:00Z,purchase,,4.99
a,2020-01-01T02:00:00Z,session_end,,
b,2020-01-02T00:00:00Z,session_start,,
"""


def test_ndjson_and_csv_agree():
    a = parse_event_log(io.StringIO(NDJSON))
    b = parse_event_log(io.StringIO(CSV))
    assert a == b
    assert [t.player_id for t in a] == ["a", "b"]
    assert a[0].events[2].amount == 4.99
    assert a[0].events[1].level == 2


def test_write_then_parse_roundtrip():
    tls = parse_event_log(io.StringIO(NDJSON))
    buf = io.StringIO()
    write_event_log(tls, buf)
    assert parse_event_log(io.StringIO(buf.getvalue())) == tls


def test_malformed_lines_are_skipped_and_reported():
    text = NDJSON + "\n".join([
        '{"player_id": "c", "ts": "2020-01-03T00:00:00Z"}',                     # 6: missing kind
        'not json',                                                            # 7
        '{"player_id": "c", "ts": "2020-01-03T00:00:00", "kind": "session_start"}',  # 8: naive ts
        '{"player_id": "c", "ts": "2020-01-03T00:00:00Z", "kind": "purchase", "amount": -1}',  # 9
        '{"player_id": "c", "ts": "2020-01-03T00:00:00Z", "kind": "teleport"}',  # 10
        '{"player_id": "c", "ts": "2020-01-04T00:00:00Z", "kind": "session_end"}',  # 11: unmatched
        '{"player_id": "a", "ts": "2020-01-01T03:00:00Z", "kind": "level_up", "level": 2}',  # 12
    ]) + "\n"
    errors = []
    tls = parse_event_log(io.StringIO(text), errors)
    assert sorted(e.lineno for e in errors) == [6, 7, 8, 9, 10, 11, 12]
    assert [t.player_id for t in tls] == ["a", "b"]


def test_csv_wrong_column_count_reported():
    errors = []
    parse_event_log(io.StringIO(CSV + "c,2020-01-03T00:00:00Z\n"), errors)
    assert [e.lineno for e in errors] == [7]


def test_empty_stream():
    assert parse_event_log(io.StringIO("")) == []


def test_timestamp_roundtrip():
    ts = parse_ts("2021-06-01T12:00:00+02:00")
    assert format_ts(ts) == "2021-06-01T10:00:00Z"


# -- churn and summaries ------------------------------------------------------

def test_churn_boundary_is_strict():
    tl = timeline("a", *session(0, 1))
    last = tl.last_event
    assert not is_churned(tl, ChurnPolicy(last + timedelta(days=9)))
    assert is_churned(tl, ChurnPolicy(last + timedelta(days=9, seconds=1)))


def test_churn_rejects_census_before_first_login():
    tl = timeline("a", *session(5, 1))
    with pytest.raises(ValueError):
        is_churned(tl, ChurnPolicy(at(1)))


def test_summary_churned_player_lifetime_to_last_event():
    tl = timeline("a", *session(0, 2), *session(3, 1), (at(3, 0.5), "level_up", {"level": 3}))
    s = summarize(tl, ChurnPolicy(at(100)))
    assert s.churned
    assert s.lifetime_days == pytest.approx(3 + 1 / 24)
    assert s.tenure_days == pytest.approx(100)
    assert s.playtime_hours == pytest.approx(3)
    assert s.level == 3 and s.n_sessions == 2


def test_summary_active_open_session_closed_at_census():
    tl = timeline("a", *session(0, 2), (at(9), "session_start"))
    s = summarize(tl, ChurnPolicy(at(10)))
    assert not s.churned
    assert s.lifetime_days == pytest.approx(10)
    assert s.playtime_hours == pytest.approx(2 + 24)


def test_summary_ignores_events_after_census():
    tl = timeline("a", *session(0, 2), (at(0, 1), "purchase", {"amount": 5.0}), *session(20, 1))
    s = summarize(tl, ChurnPolicy(at(5)))
    assert s.playtime_hours == pytest.approx(2)
    assert s.spend == 5.0


def test_build_survival_dataset_axes():
    tls = [timeline("a", *session(0, 2)), timeline("b", *session(0, 1), *session(29, 3))]
    policy = ChurnPolicy(at(30))
    life = build_survival_dataset(tls, "lifetime", policy)
    play = build_survival_dataset(tls, Axis.PLAYTIME, policy)
    level = build_survival_dataset(tls, "level", policy)
    np.testing.assert_allclose(life.times, [2 / 24, 30])
    np.testing.assert_array_equal(life.events, [True, False])
    np.testing.assert_allclose(play.times, [2, 4])
    np.testing.assert_array_equal(level.times, [1, 1])
    assert life.covariates.shape == (2, len(life.covariate_names))


def test_build_survival_dataset_unknown_covariate():
    with pytest.raises(KeyError):
        build_survival_dataset([timeline("a", *session(0, 1))], "level", ChurnPolicy(at(3)), ["shoe_size"])


def test_dataset_csv_roundtrip(tmp_path):
    tls = [timeline("a", *session(0, 2)), timeline("b", *session(0, 1), *session(29, 3))]
    ds = build_survival_dataset(tls, "playtime", ChurnPolicy(at(30)))
    ds.to_csv(tmp_path / "d.csv")
    back = SurvivalDataset.from_csv(tmp_path / "d.csv", "playtime")
    assert back.player_ids == ds.player_ids
    np.testing.assert_array_equal(back.covariates, ds.covariates)
    np.testing.assert_array_equal(back.times, ds.times)
    np.testing.assert_array_equal(back.events, ds.events)
    assert back.covariate_names == ds.covariate_names


# -- spend and the top-spender threshold ---------------------------------------

def test_window_spend_anchored_at_global_first_login():
    early = timeline("a", *session(0, 1))
    late = timeline("b", (at(50), "session_start"), (at(50, 1), "purchase", {"amount": 3.0}),
                    (at(70, 1), "purchase", {"amount": 7.0}))
    assert window_spend([early, late], 61) == {"a": 0.0, "b": 3.0}


def test_threshold_simple():
    assert threshold_from_spend([50, 30, 10, 10], 0.5) == 50
    assert threshold_from_spend([40, 30, 20, 10], 0.5) == 30


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(0.01, 1000, allow_nan=False), min_size=1, max_size=50),
       st.floats(0.05, 0.95))
def test_threshold_matches_brute_force(spend, share):
    thr = threshold_from_spend(spend, share)
    assert thr == brute_force_threshold(spend, share)
    total = math.fsum(spend)
    above = math.fsum(v for v in spend if v >= thr)
    assert above >= share * total * (1 - 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 1000, allow_nan=False), min_size=1, max_size=50),
       st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_threshold_monotone_in_share(spend, s1, s2):
    lo, hi = sorted((s1, s2))
    assert threshold_from_spend(spend, hi) <= threshold_from_spend(spend, lo)


@pytest.mark.parametrize("spend, share, want", [([100, 60, 20, 20], 0.5, 100), ([50, 50], 0.5, 50), ([10], 0.5, 10)])
def test_threshold_examples(spend, share, want):
    assert threshold_from_spend(spend, share) == want


def test_threshold_errors():
    with pytest.raises(ValueError):
        threshold_from_spend([0, 0], 0.5)
    with pytest.raises(ValueError):
        threshold_from_spend([1, 2], 1.0)


def test_filter_top_spenders_uses_accumulated_spend():
    a = timeline("a", (at(0), "session_start"), (at(0, 1), "purchase", {"amount": 10.0}))
    b = timeline("b", (at(0), "session_start"), (at(70), "purchase", {"amount": 100.0}))
    thr = top_spender_threshold([a, b], 61, 0.5)
    assert thr == 10.0
    assert [t.player_id for t in filter_top_spenders([a, b], thr)] == ["a", "b"]
    assert [t.player_id for t in filter_top_spenders([a, b], thr, census=at(30))] == ["a"]


# -- sequences ----------------------------------------------------------------

def test_sequences_split_hours_across_buckets():
    tl = timeline("a", (at(0), "session_start"), (at(0, 2), "level_up", {"level": 3}),
                  (at(6, 20), "session_end"), (at(7, 12), "session_start"),
                  (at(7, 13), "purchase", {"amount": 2.5}), (at(7, 14), "session_end"))
    a, p, m = build_sequences(tl, timedelta(days=7), 4)
    assert a[0].tolist() == [1, 6 * 24 + 20, 2]
    assert a[1].tolist() == [1, 2, 0]
    assert p[1].tolist() == [1, 2.5]
    assert m.tolist() == [1, 1, 0, 0]


def test_sequences_until_extends_mask_and_closes_sessions():
    tl = timeline("a", (at(0), "session_start"))
    a, _, m = build_sequences(tl, timedelta(days=1), 5, until=at(2, 12))
    assert m.tolist() == [1, 1, 1, 0, 0]
    assert a[:, 1].tolist() == [24, 24, 12, 0, 0]


def test_sequences_truncate_at_horizon():
    tl = timeline("a", *session(0, 1), *session(30, 1))
    a, _, m = build_sequences(tl, timedelta(days=7), 2)
    assert m.tolist() == [1, 1]
    assert a[:, 0].sum() == 1


def test_sequence_arguments_validated():
    tl = timeline("a", *session(0, 1))
    with pytest.raises(ValueError):
        build_sequences(tl, timedelta(0), 3)
    with pytest.raises(ValueError):
        build_sequences(tl, timedelta(days=1), 0)
