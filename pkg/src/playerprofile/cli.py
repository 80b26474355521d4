"""Command-line entry point (``playerprofile``).

Exit codes: 0 success, 2 input error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import pipeline, synth, telemetry
from .pipeline import InputError, PipelineConfig, StageError

EXIT_OK, EXIT_INPUT, EXIT_STAGE = 0, 2, 3


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "events", None):
        cfg.events_path = args.events
    if getattr(args, "out_dir", None):
        cfg.out_dir = args.out_dir
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if getattr(args, "census", None):
        cfg.census_date = args.census
    if getattr(args, "bucket_days", None) is not None:
        cfg.bucket_days = args.bucket_days
    if getattr(args, "horizon", None) is not None:
        cfg.horizon = args.horizon
    return cfg


def cmd_generate(args) -> int:
    with open(args.spec) as fh:
        spec = synth.CohortSpec.from_json(json.load(fh))
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    timelines, truth = synth.generate_cohort(spec)
    telemetry.write_event_log(timelines, args.out)
    if args.truth:
        synth.write_ground_truth(truth, args.truth)
    print(f"wrote {sum(len(t.events) for t in timelines)} events for {len(timelines)} players to {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    info = pipeline.ingest(_config(args))
    print(json.dumps({k: v for k, v in info.items() if k != "skipped_lines"}, sort_keys=True))
    if info["skipped_lines"]:
        print(f"{len(info['skipped_lines'])} malformed line(s) skipped", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def cmd_fit_survival(args) -> int:
    model = pipeline.fit_survival(_config(args), args.axis)
    print(f"fitted {len(model.trees)} trees on axis {model.axis}")
    return EXIT_OK


def cmd_fit_ltv(args) -> int:
    model = pipeline.fit_ltv_model(_config(args))
    last = model.loss_history[-1] if model.loss_history else float("nan")
    print(f"trained LTV network, final training MSE {last:.6g}")
    return EXIT_OK


def cmd_predict(args) -> int:
    print(json.dumps(pipeline.predict(_config(args))))
    return EXIT_OK


def cmd_segment(args) -> int:
    profiles = pipeline.segment(_config(args))
    print(f"profiled {len(profiles)} players")
    return EXIT_OK


def cmd_report(args) -> int:
    written = pipeline.make_report(_config(args))
    print(f"wrote {len(written)} figure tables")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    result = pipeline.run_pipeline(_config(args))
    print(f"profiled {result['n_profiles']} players; outputs in {_config(args).out_dir}")
    skipped = result["ingest"]["skipped_lines"]
    if skipped:
        print(f"{len(skipped)} malformed line(s) skipped", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="playerprofile", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, events=False):
        p.add_argument("--config", help="pipeline config (JSON)")
        p.add_argument("--out-dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        if events:
            p.add_argument("--events")
            p.add_argument("--census", help="census date (RFC 3339); default: last event")

    p = sub.add_parser("generate", help="write a synthetic event log")
    p.add_argument("--spec", required=True, help="cohort spec (JSON)")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="also write ground truth CSV here")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="parse events and build datasets")
    common(p, events=True)
    p.add_argument("--bucket-days", type=float)
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit-survival", help="fit one survival forest")
    common(p)
    p.add_argument("--axis", required=True, choices=["lifetime", "level", "playtime"])
    p.set_defaults(func=cmd_fit_survival)

    p = sub.add_parser("fit-ltv", help="train the LTV network")
    common(p)
    p.add_argument("--bucket-days", type=float)
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_fit_ltv)

    for name, func, help_ in (("predict", cmd_predict, "score active players"),
                              ("segment", cmd_segment, "write profiles.csv"),
                              ("report", cmd_report, "write figure data")):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("pipeline", help="run every stage")
    common(p, events=True)
    p.add_argument("--bucket-days", type=float)
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT if isinstance(exc.cause, (FileNotFoundError, KeyError)) and exc.stage == "ingest" else EXIT_STAGE
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
