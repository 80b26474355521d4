"""End-to-end pipeline: ingest, filter, fit, predict, segment, report.

Every stage reads its inputs from and writes its outputs to ``out_dir``, so
stages can run one at a time (see ``playerprofile.cli``) or all together via
:func:`run_pipeline`.  Layout::

    out_dir/
      ingest.json                 parse diagnostics, census, cohort sizes
      datasets/{axis}.csv         survival datasets (all players)
      sequences.npz               LTV input series, churn flags, realized spend
      models/{axis}.json          survival forests
      models/ltv.json             LTV network
      predictions/{axis}.csv/json predicted curves of scored (active) players
      predictions/ltv.csv         predicted LTV
      profiles.csv, cohort_summary.json
      figures/                    figure CSVs and SVGs
      manifest.json               written last; INVALID marks a failed run
"""
from __future__ import annotations

import csv
import json
import logging
import shutil
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping

import numpy as np

from . import ensemble, ltv, report, segmentation, survival, synth, telemetry
from .telemetry import AXES, Axis, ChurnPolicy

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


class InputError(StageError):
    """Raised for unusable input data (bad or empty events file)."""


@dataclass
class PipelineConfig:
    events_path: str = "events.ndjson"
    out_dir: str = "out"
    census_date: str | None = None
    inactivity_window_days: int = 9
    covariates: tuple[str, ...] = telemetry.DEFAULT_COVARIATES
    ensemble: dict = field(default_factory=dict)
    ensemble_per_axis: dict = field(default_factory=dict)
    ltv: dict = field(default_factory=dict)
    bucket_days: float = 7.0
    horizon: int = 26
    segmentation: dict = field(default_factory=dict)
    top_spender_filter: bool = False
    top_spender_window_days: int = 61
    top_spender_share: float = 0.5
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        if "covariates" in d:
            d["covariates"] = tuple(d["covariates"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["covariates"] = list(self.covariates)
        return d

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def stage_seeds(self) -> dict[str, int]:
        """Per-stage seeds derived from the single root seed."""
        state = np.random.SeedSequence(self.seed).generate_state(4, dtype=np.uint32)
        names = [ax.short for ax in AXES] + ["ltv"]
        return {n: int(s) for n, s in zip(names, state)}

    def ensemble_config(self, axis: Axis) -> ensemble.EnsembleConfig:
        opts = {**self.ensemble, **self.ensemble_per_axis.get(axis.short, {})}
        opts.setdefault("seed", self.stage_seeds()[axis.short])
        return ensemble.EnsembleConfig(**opts)

    def ltv_config(self) -> ltv.LtvNetConfig:
        opts = dict(self.ltv)
        opts.setdefault("seed", self.stage_seeds()["ltv"])
        return ltv.LtvNetConfig(**opts)

    def segmentation_config(self) -> segmentation.SegmentationConfig:
        return segmentation.SegmentationConfig(**self.segmentation)


# -- stages ----------------------------------------------------------------------

def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


def ingest(cfg: PipelineConfig) -> dict:
    """Parse events, apply the census/filter rules, write datasets and sequences."""
    path = Path(cfg.events_path)
    if not path.exists():
        raise InputError("ingest", f"events file not found: {path}")
    errors: list[telemetry.LineError] = []
    timelines = telemetry.read_event_log(path, errors)
    if not timelines:
        raise InputError("ingest", f"no usable events in {path}")

    census = (telemetry.parse_ts(cfg.census_date) if cfg.census_date
              else max(tl.last_event for tl in timelines))
    policy = ChurnPolicy(census, cfg.inactivity_window_days)
    timelines = [t for t in (tl.until(census) for tl in timelines) if t is not None]

    threshold = None
    n_before = len(timelines)
    if cfg.top_spender_filter:
        threshold = telemetry.top_spender_threshold(timelines, cfg.top_spender_window_days, cfg.top_spender_share)
        timelines = telemetry.filter_top_spenders(timelines, threshold, census)
        if not timelines:
            raise InputError("ingest", "top-spender filter removed every player")

    out = cfg.out
    summaries = [telemetry.summarize(tl, policy) for tl in timelines]
    X = telemetry.covariate_matrix(summaries, cfg.covariates)
    ids = [tl.player_id for tl in timelines]
    churned = np.array([s.churned for s in summaries])
    (out / "datasets").mkdir(parents=True, exist_ok=True)
    for ax in AXES:
        ds = telemetry.SurvivalDataset(ax, ids, X, [telemetry.axis_time(s, ax) for s in summaries],
                                       churned, list(cfg.covariates))
        ds.to_csv(out / "datasets" / f"{ax.short}.csv")

    bucket = timedelta(days=cfg.bucket_days)
    seqs = [telemetry.build_sequences(tl, bucket, cfg.horizon, until=None if c else census)
            for tl, c in zip(timelines, churned)]
    np.savez(out / "sequences.npz",
             player_ids=np.array(ids), churned=churned,
             spend=np.array([s.spend for s in summaries]),
             actions=np.stack([s[0] for s in seqs]), purchases=np.stack([s[1] for s in seqs]),
             mask=np.stack([s[2] for s in seqs]))
    info = {
        "events_path": str(path),
        "census_date": telemetry.format_ts(census),
        "inactivity_window_days": cfg.inactivity_window_days,
        "skipped_lines": [{"line": e.lineno, "error": e.message} for e in errors],
        "n_players_parsed": n_before,
        "top_spender_threshold": threshold,
        "n_players": len(ids),
        "n_churned": int(churned.sum()),
        "n_active": int((~churned).sum()),
    }
    _write_json(out / "ingest.json", info)
    return info


def load_dataset(cfg: PipelineConfig, axis) -> telemetry.SurvivalDataset:
    axis = Axis.parse(axis)
    return telemetry.SurvivalDataset.from_csv(cfg.out / "datasets" / f"{axis.short}.csv", axis)


def fit_survival(cfg: PipelineConfig, axis) -> ensemble.EnsembleModel:
    axis = Axis.parse(axis)
    model = ensemble.fit(load_dataset(cfg, axis), cfg.ensemble_config(axis), n_jobs=cfg.threads)
    (cfg.out / "models").mkdir(parents=True, exist_ok=True)
    model.save(cfg.out / "models" / f"{axis.short}.json")
    return model


def _sequences(cfg: PipelineConfig):
    with np.load(cfg.out / "sequences.npz") as z:
        return {k: z[k] for k in z.files}


def fit_ltv_model(cfg: PipelineConfig) -> ltv.LtvModel:
    seq = _sequences(cfg)
    train = seq["churned"]
    if not train.any():
        raise ValueError("no churned players to train the LTV model on")
    model = ltv.fit_ltv(seq["actions"][train], seq["purchases"][train], seq["mask"][train],
                        seq["spend"][train], cfg.ltv_config())
    (cfg.out / "models").mkdir(parents=True, exist_ok=True)
    model.save(cfg.out / "models" / "ltv.json")
    return model


def predict(cfg: PipelineConfig) -> dict:
    """Curves and LTV for the scored cohort (players active at the census)."""
    seq = _sequences(cfg)
    active = ~seq["churned"]
    ids = [str(p) for p in seq["player_ids"][active]]
    if not ids:
        raise ValueError("no active players to score")
    pred_dir = cfg.out / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    for ax in AXES:
        model = ensemble.EnsembleModel.load(cfg.out / "models" / f"{ax.short}.json")
        ds = load_dataset(cfg, ax)
        row = {pid: i for i, pid in enumerate(ds.player_ids)}
        X = ds.covariates[[row[p] for p in ids]]
        curves = ensemble.predict_curves(model, X)
        survival.write_curves(dict(zip(ids, curves)), pred_dir / f"{ax.short}.csv")
    model = ltv.LtvModel.load(cfg.out / "models" / "ltv.json")
    values = ltv.predict_ltv(model, seq["actions"][active], seq["purchases"][active], seq["mask"][active])
    with open(pred_dir / "ltv.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["player_id", "ltv"])
        for pid, v in zip(ids, values):
            w.writerow([pid, repr(float(v))])
    return {"n_scored": len(ids)}


def load_predictions(cfg: PipelineConfig):
    pred_dir = cfg.out / "predictions"
    curves = {ax: survival.read_curves(pred_dir / f"{ax.short}.csv") for ax in AXES}
    with open(pred_dir / "ltv.csv", newline="") as fh:
        values = {r["player_id"]: float(r["ltv"]) for r in csv.DictReader(fh)}
    return curves, values


def segment(cfg: PipelineConfig) -> list[segmentation.PlayerProfile]:
    curves, values = load_predictions(cfg)
    scfg = cfg.segmentation_config()
    profiles = segmentation.profile_players(curves, values, scfg)
    segmentation.write_profiles(profiles, cfg.out / "profiles.csv")
    segmentation.write_summary(profiles, cfg.out / "cohort_summary.json", scfg)
    return profiles


def make_report(cfg: PipelineConfig, profiles=None) -> list[Path]:
    curves, values = load_predictions(cfg)
    if profiles is None:
        profiles = segmentation.profile_players(curves, values, cfg.segmentation_config())
    written = report.emit_bundle(profiles, curves, cfg.out / "figures")
    problems = report.check_bundle(segmentation.read_profiles(cfg.out / "profiles.csv"), cfg.out / "figures")
    if problems:
        raise ValueError("; ".join(problems))
    return written


STAGES = ("ingest", "fit-survival", "fit-ltv", "predict", "segment", "report")


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage; on failure mark ``out_dir`` INVALID and raise StageError."""
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "INVALID"
    manifest = out / "manifest.json"
    marker.write_text("pipeline running\n")
    if manifest.exists():
        manifest.unlink()
    stage = "ingest"
    try:
        info = ingest(cfg)
        for ax in AXES:
            stage = f"fit-survival:{ax.short}"
            fit_survival(cfg, ax)
        stage = "fit-ltv"
        fit_ltv_model(cfg)
        stage = "predict"
        predict(cfg)
        stage = "segment"
        profiles = segment(cfg)
        stage = "report"
        figures = make_report(cfg, profiles)
    except StageError as exc:
        marker.write_text(f"{exc}\n")
        raise
    except Exception as exc:
        marker.write_text(f"stage '{stage}' failed: {exc}\n")
        raise StageError(stage, exc) from exc
    marker.unlink()
    result = {
        "config": cfg.to_dict(),
        "ingest": info,
        "n_profiles": len(profiles),
        "figures": sorted(str(p.relative_to(out)) for p in figures),
    }
    _write_json(manifest, result)
    return result
