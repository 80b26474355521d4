"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed as each test runs and again in the terminal summary.
"""
import math
import time
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from _oracles import Undefined, brute_force_threshold, lifespan_oracle, random_curve_case, spending_oracle
from _synthetic import gradient_check, random_tiny_case, toy_sum_task, two_group
from playerprofile import pipeline, report, synth, telemetry
from playerprofile.ensemble import EnsembleConfig, concordance_index, fit, predict_values
from playerprofile.ltv import LtvNetConfig, fit_ltv, predict_ltv
from playerprofile.segmentation import (DegenerateCohortError, classify_lifespan, classify_spending,
                                        lifespan_group, read_profiles, select_skillful)
from playerprofile.survival import PopulationStats, SurvivalCurve, kaplan_meier


def test_1_km_exponential_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    lam = 0.01
    life = rng.exponential(1 / lam, 10_000)
    # exponential censoring at rate lam/4 censors 20% of players
    cens = rng.exponential(4 / lam, 10_000)
    c = kaplan_meier(np.minimum(life, cens), life <= cens)
    grid = np.linspace(0, 300, 30_001)
    sup = float(np.max(np.abs(c(grid) - np.exp(-lam * grid))))
    elapsed = time.perf_counter() - t0
    ok = sup <= 0.02 and elapsed < 5
    assert criterion(1, "KM analytic oracle", ok,
                     f"sup-norm {sup:.4f} (<= 0.02), censored {np.mean(life > cens):.3f}, {elapsed:.2f}s (< 5s)")


def test_2_degenerate_ensemble_is_pooled_km(criterion):
    ds = two_group(500, seed=2)
    model = fit(ds, EnsembleConfig(n_trees=20, alpha=0.0, subsample_fraction=1.0, seed=2))
    km = kaplan_meier(ds.times, ds.events)
    got = predict_values(model, ds.covariates[:50])
    want = np.tile(km(model.time_grid), (50, 1))
    ok = got.tobytes() == want.tobytes()
    assert criterion(2, "degenerate ensemble equals pooled KM", ok,
                     f"bitwise equal on {model.time_grid.size}-point grid for 50 players: {ok}")


def test_3_ensemble_discrimination(criterion):
    train, holdout = two_group(2000, seed=0), two_group(20_000, seed=1)
    model = fit(train, EnsembleConfig(n_trees=100, mtry=5, seed=0))
    root = float(np.mean([t.root_feature == 0 for t in model.trees]))
    c = concordance_index(model, holdout)
    ok = root >= 0.95 and c >= 0.7
    assert criterion(3, "ensemble discrimination", ok,
                     f"informative root split {root:.2%} (>= 95%), holdout C {c:.4f} (>= 0.7)")


def test_4_lstm_gradient_check(criterion):
    t0 = time.perf_counter()
    errors = [gradient_check(*random_tiny_case(np.random.default_rng(1000 + k))) for k in range(25)]
    elapsed = time.perf_counter() - t0
    worst = max(errors)
    ok = worst < 1e-4 and elapsed < 30
    assert criterion(4, "LSTM gradient check", ok,
                     f"25 configurations, max relative error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 30s)")


def test_5_lstm_toy_learning(criterion):
    t0 = time.perf_counter()
    a, p, m, y = toy_sum_task(500, 20, seed=0)
    cfg = LtvNetConfig(epochs=50, seed=0)
    model = fit_ltv(a, p, m, y, cfg)
    elapsed = time.perf_counter() - t0
    rmse = float(np.sqrt(np.mean((predict_ltv(model, a, p, m) - y) ** 2)))
    again = fit_ltv(a, p, m, y, cfg)
    same = all(model.params[k].tobytes() == again.params[k].tobytes() for k in model.params)
    ok = rmse < 0.05 * y.std() and same and elapsed < 120
    assert criterion(5, "LSTM toy learning", ok,
                     f"RMSE {rmse:.4f} vs 5% of std {0.05 * y.std():.4f}, deterministic {same}, "
                     f"{elapsed:.1f}s (< 120s)")


BOUNDARY_CASES = [
    # (median, p25, final_prob, avg_median, avg_nonvanishing)
    (100.0, None, 0.25, 100.0, None),    # fp exactly 0.25, median equal to the average
    (99.0, None, 0.25, 100.0, None),
    (100.0, 80.0, 0.50, 100.0, 100.0),   # fp exactly 0.50
    (100.0, 150.0, 0.2, 150.0, None),    # p25 equal to the average
    (100.0, 149.0, 0.2, 150.0, None),
    (120.0, 130.0, 0.0, 50.0, 120.0),    # median equal to the non-vanishing average
    (119.0, 130.0, 0.0, 50.0, 120.0),
    (None, None, 0.5000001, 10.0, 10.0),
]


def _knots(median, p25, fp):
    # a step curve whose quantiles and final value are exactly the given ones
    if median is None:
        return [(0.0, 1.0), (5.0, fp)]
    knots = [(0.0, 1.0), (median, 0.5 if fp < 0.5 else fp)]
    if p25 is not None and fp < 0.25:
        knots += [(p25, 0.25), (p25 + 1.0, fp)]
    elif fp < 0.5 and knots[-1][1] != fp:
        knots.append((median + 1.0, fp))
    return [k for i, k in enumerate(knots) if i == 0 or k[1] != knots[i - 1][1]]


def test_6_segmentation_decision_table(criterion):
    mismatches = 0
    for seed in range(10_000):
        curve, knots, avg, avg_nv = random_curve_case(np.random.default_rng(seed))
        stats = PopulationStats("x", avg, avg_nv, 1, 1)
        try:
            want = lifespan_oracle(knots, avg, avg_nv)
        except Undefined:
            want = "undefined"
        try:
            got = classify_lifespan(curve, stats).value
        except DegenerateCohortError:
            got = "undefined"
        mismatches += got != want
    for median, p25, fp, avg, avg_nv in BOUNDARY_CASES:
        knots = _knots(median, p25, fp)
        curve = SurvivalCurve(np.array([k[0] for k in knots]), np.array([k[1] for k in knots]), 1000.0)
        want = lifespan_oracle(knots, avg, avg_nv)
        mismatches += classify_lifespan(curve, PopulationStats("x", avg, avg_nv, 1, 1)).value != want
        mismatches += lifespan_group(median, p25, fp, PopulationStats("x", avg, avg_nv, 1, 1)).value != want
    spend_cases = [(5.0, 10.0), (4.999999, 10.0), (20.0, 10.0), (19.999999, 10.0), (0.0, 10.0)]
    mismatches += sum(classify_spending(v, a).value != spending_oracle(v, a) for v, a in spend_cases)
    ok = mismatches == 0
    assert criterion(6, "segmentation decision-table oracle", ok,
                     f"{mismatches} mismatches over 10000 random pairs, {len(BOUNDARY_CASES)} lifespan "
                     f"and {len(spend_cases)} spending boundary cases")


def _share_check(spend, share):
    thr = telemetry.threshold_from_spend(spend, share)
    total = math.fsum(spend)
    above = math.fsum(v for v in spend if v >= thr) / total
    biggest = max(spend) / total
    return thr == brute_force_threshold(spend, share), above >= share - 1e-12, above <= share + biggest + 1e-12


def test_7_top_spender_threshold(criterion):
    checks = []
    for seed in range(5):
        tls, _ = synth.generate_cohort(synth.default_spec(300, seed=seed))
        spend = [v for v in telemetry.window_spend(tls, 61).values() if v > 0]
        for share in (0.25, 0.5, 0.8):
            checks.append(_share_check(spend, share))
    rng = np.random.default_rng(7)
    for _ in range(500):
        spend = list(np.round(rng.lognormal(1, 1.5, int(rng.integers(1, 200))), 2) + 0.01)
        checks.append(_share_check(spend, float(rng.uniform(0.05, 0.95))))
    failed = [c for c in checks if not all(c)]
    ok = not failed
    assert criterion(7, "top-spender threshold", ok,
                     f"{len(checks) - len(failed)}/{len(checks)} cohorts match the brute-force oracle "
                     "and satisfy both share bounds")


# -- end-to-end -------------------------------------------------------------------

@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    t0 = time.perf_counter()
    spec = synth.default_spec(2000, seed=0)
    timelines, truth = synth.generate_cohort(spec)
    telemetry.write_event_log(timelines, root / "events.ndjson")

    def run(name):
        cfg = pipeline.PipelineConfig(events_path=str(root / "events.ndjson"), out_dir=str(root / name),
                                      census_date=telemetry.format_ts(spec.census_date), seed=0)
        pipeline.run_pipeline(cfg)
        return cfg

    cfg = run("first")
    elapsed = time.perf_counter() - t0
    run("second")
    return {"root": root, "truth": truth, "elapsed": elapsed, "first": root / "first", "second": root / "second",
            "cfg": cfg}


def _tree_bytes(out: Path, patterns):
    return {str(p.relative_to(out)): p.read_bytes()
            for pat in patterns for p in sorted(out.glob(pat))}


@pytest.mark.slow
def test_8_archetype_recovery(criterion, e2e):
    profiles = pipeline.segment(e2e["cfg"])
    labels = synth.label_ground_truth_groups(e2e["truth"], [p.player_id for p in profiles])
    archetype = {g.player_id: g.archetype for g in e2e["truth"]}
    agree = {ax.short: float(np.mean([p.axis(ax).group is labels[p.player_id][ax] for p in profiles]))
             for ax in telemetry.AXES}
    planted = {p.player_id for p in profiles if archetype[p.player_id] == "skillful"}
    found = {p.player_id for p in select_skillful(profiles)}
    recall = len(planted & found) / len(planted)
    same = (_tree_bytes(e2e["first"], ["profiles.csv", "predictions/*.csv", "models/*.json"])
            == _tree_bytes(e2e["second"], ["profiles.csv", "predictions/*.csv", "models/*.json"]))
    ok = min(agree.values()) >= 0.9 and recall >= 0.8 and e2e["elapsed"] < 600 and same
    detail = ", ".join(f"{k} {v:.3f}" for k, v in agree.items())
    assert criterion(8, "end-to-end archetype recovery", ok,
                     f"agreement {detail} (>= 0.9 each), skillful recall {recall:.3f} (>= 0.8), "
                     f"{e2e['elapsed']:.0f}s (< 600s), deterministic {same}")


@pytest.mark.slow
def test_9_reporting_integrity(criterion, e2e):
    out = e2e["first"]
    problems = report.check_bundle(read_profiles(out / "profiles.csv"), out / "figures")
    worst = 0.0
    for svg in sorted((out / "figures").glob("fig[3-57]*.svg")):
        circles = list(ET.parse(svg).getroot().iter("{http://www.w3.org/2000/svg}circle"))
        if not circles:
            continue
        sizes = np.array([float(c.get("data-size")) for c in circles])
        radii = np.array([float(c.get("r")) for c in circles])
        # area per unit size must be the same for every marker
        k = math.pi * report.MAX_RADIUS ** 2 / sizes.max()
        pos = sizes > 0
        worst = max(worst, float(np.max(np.abs(math.pi * radii[pos] ** 2 / (k * sizes[pos]) - 1))))
    same = (_tree_bytes(out, ["figures/*"]) == _tree_bytes(e2e["second"], ["figures/*"]))
    ok = not problems and worst < 1e-9 and same
    assert criterion(9, "reporting integrity", ok,
                     f"{len(problems)} cross-check problems, max area error {worst:.1e} (< 1e-9), "
                     f"rerun byte-identical {same}")
