"""Generate a small synthetic cohort, run every stage, and compare with the planted archetypes.

Usage: ``python demos/cohort_walkthrough.py [out_dir] [n_players]``.
"""
import json
import sys
from collections import Counter
from pathlib import Path

from playerprofile import pipeline, synth, telemetry
from playerprofile.segmentation import select_skillful

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
n = int(sys.argv[2]) if len(sys.argv) > 2 else 600
out.mkdir(parents=True, exist_ok=True)

spec = synth.default_spec(n, seed=0)
timelines, truth = synth.generate_cohort(spec)
telemetry.write_event_log(timelines, out / "events.ndjson")
synth.write_ground_truth(truth, out / "truth.csv")
print(f"{n} players, {sum(len(t.events) for t in timelines)} events")

cfg = pipeline.PipelineConfig(events_path=str(out / "events.ndjson"), out_dir=str(out / "run"),
                              census_date=telemetry.format_ts(spec.census_date),
                              ensemble={"n_trees": 100})
result = pipeline.run_pipeline(cfg)
print(json.dumps(result["ingest"], indent=2, default=str))

profiles = pipeline.segment(cfg)
archetype = {g.player_id: g.archetype for g in truth}
labels = synth.label_ground_truth_groups(truth, [p.player_id for p in profiles])
for ax in telemetry.AXES:
    agree = sum(p.axis(ax).group is labels[p.player_id][ax] for p in profiles) / len(profiles)
    table = Counter((archetype[p.player_id], p.axis(ax).group.value) for p in profiles)
    print(f"\n{ax.short}: agreement with oracle labels {agree:.3f}")
    for (a, g), k in sorted(table.items()):
        print(f"  {a:9s} -> {g:7s} {k}")

skillful = select_skillful(profiles)
print(f"\nselected as skillful: {len(skillful)};",
      Counter(archetype[p.player_id] for p in skillful))
print(f"figures in {out / 'run' / 'figures'}")
