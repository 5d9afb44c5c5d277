"""Command-line front end: batch runs, single scenarios, trajectory export."""

from __future__ import annotations

import argparse
import csv
import json
import math
import multiprocessing
import os
import random
import sys

from .config import (ConfigError, build_scene, light_state, load_config,
                     load_scenario)
from .engine import (EpisodeRecord, aggregate, run_episode_with_script,
                     sample_target)
from .features import MissingFeature, NearParallel, expected_shadow_position
from .geometry import cast_shadow
from .kinematics import forward_tip


def _episode_seed(seed: int, index: int) -> int:
    return seed * 1_000_003 + index


def _run_indexed_episode(args) -> tuple[int, EpisodeRecord]:
    cfg, target, index = args
    scene = build_scene(cfg, target, _episode_seed(cfg.seed, index))
    rec = run_episode_with_script(scene, cfg.thresholds, cfg.steps, cfg.limits, (),
                                  noise_sigma_px=cfg.noise_sigma_px,
                                  record_steps=False)
    return index, rec


def _write_summary_csv(path: str, rows: list[tuple[int, EpisodeRecord]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "kind", "outcome", "depth_error_mm", "xy_error_mm",
                    "retina_clearance_mm", "steps"])
        for idx, rec in rows:
            w.writerow([idx, rec.target.kind, rec.outcome.value,
                        f"{rec.depth_error_mm:.6f}", f"{rec.xy_error_mm:.6f}",
                        f"{rec.final_clearance_mm:.6f}", rec.step_count])


def cmd_run_batch(args) -> int:
    cfg = load_config(args.config)
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    os.makedirs(args.out, exist_ok=True)

    # targets are drawn up front so results are identical for any job count
    rng = random.Random(cfg.seed)
    lt = forward_tip(light_state(cfg))
    targets = [sample_target(cfg.sampler, rng, cfg.eye, lt)
               for _ in range(args.episodes)]
    jobs = [(cfg, t, i) for i, t in enumerate(targets)]

    if args.jobs > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            results = pool.map(_run_indexed_episode, jobs, chunksize=8)
    else:
        results = [_run_indexed_episode(j) for j in jobs]
    results.sort(key=lambda pair: pair[0])

    with open(os.path.join(args.out, "episodes.jsonl"), "w", encoding="utf-8") as fh:
        for idx, rec in results:
            fh.write(json.dumps({"episode": idx, **rec.terminal_dict()},
                                sort_keys=True) + "\n")
    _write_summary_csv(os.path.join(args.out, "summary.csv"), results)

    stats = aggregate([rec for _, rec in results])
    doc = {"episodes_requested": args.episodes, "seed": cfg.seed,
           **stats.to_dict()}
    with open(os.path.join(args.out, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"episodes {stats.episodes}  success {stats.success}  stuck {stats.stuck}  "
          f"degenerate {stats.degenerate}  safety_abort {stats.safety_abort}  "
          f"penetrations {stats.penetration_count}")
    return 0 if stats.penetration_count == 0 else 3


def cmd_run_one(args) -> int:
    cfg = load_config(args.config)
    scenario = load_scenario(args.scenario)
    os.makedirs(args.out, exist_ok=True)
    seed = scenario.seed if scenario.seed is not None else cfg.seed
    scene = build_scene(cfg, scenario.target, seed,
                        needle_pose=scenario.needle_pose,
                        light_pose=scenario.light_pose)

    frames_dir = os.path.join(args.out, "frames")
    frame_writer = None
    if args.frames == "on":
        from .svgrender import render_frame
        os.makedirs(frames_dir, exist_ok=True)

        def frame_writer(k, frame_scene, f, decision):
            try:
                esp = expected_shadow_position(f)
            except (NearParallel, MissingFeature):
                esp = None
            label = f"step {k:06d}  {decision.phase.value}  {decision.rationale}"
            svg = render_frame(frame_scene, f, label, esp=esp)
            with open(os.path.join(frames_dir, f"frame_{k:06d}.svg"), "w",
                      encoding="utf-8") as fh:
                fh.write(svg)

    rec = run_episode_with_script(scene, cfg.thresholds, cfg.steps, cfg.limits,
                                  scenario.script,
                                  noise_sigma_px=cfg.noise_sigma_px,
                                  record_steps=True, on_step=frame_writer)

    light_tip = forward_tip(scene.light)
    target_shadow = cast_shadow(light_tip, scenario.target.position, scene.eye)
    with open(os.path.join(args.out, "record.jsonl"), "w", encoding="utf-8") as fh:
        meta = {"type": "meta", "target_kind": scenario.target.kind,
                "target_mm": [scenario.target.position.x,
                              scenario.target.position.y,
                              scenario.target.position.z],
                "target_z_mm": scenario.target.position.z,
                "target_shadow_z_mm": target_shadow.z, "seed": seed}
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for row in rec.steps:
            fh.write(json.dumps(row.to_dict(), sort_keys=True) + "\n")
        fh.write(json.dumps(rec.terminal_dict(), sort_keys=True) + "\n")
    _write_summary_csv(os.path.join(args.out, "summary.csv"), [(0, rec)])

    print(f"outcome {rec.outcome.value}  steps {rec.step_count}  "
          f"depth_error {rec.depth_error_mm:.4f} mm  "
          f"xy_error {rec.xy_error_mm:.4f} mm")
    return 0 if rec.min_clearance_mm >= 0.0 else 3


def cmd_export_trajectory(args) -> int:
    if not os.path.exists(args.record):
        print(f"error: record file not found: {args.record}", file=sys.stderr)
        return 2
    target_z = target_shadow_z = math.nan
    rows = []
    with open(args.record, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("type") == "meta":
                target_z = obj.get("target_z_mm", math.nan)
                target_shadow_z = obj.get("target_shadow_z_mm", math.nan)
            elif obj.get("type") == "step":
                rows.append(obj)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "tip_z_mm", "needle_shadow_z_mm", "target_z_mm",
                    "target_shadow_z_mm", "phase", "rationale"])
        for obj in rows:
            w.writerow([obj["step"], f"{obj['tip_mm'][2]:.6f}",
                        f"{obj['tip_shadow_z_mm']:.6f}", f"{target_z:.6f}",
                        f"{target_shadow_z:.6f}", obj["phase"], obj["rationale"]])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shadownav",
                                description="Shadow-guided intraocular needle "
                                            "navigation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("run-batch", help="run a batch of sampled-target episodes")
    b.add_argument("--config", default=None, help="JSON config file (defaults apply)")
    b.add_argument("--episodes", type=int, required=True)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", required=True, help="output directory")
    b.set_defaults(func=cmd_run_batch)

    o = sub.add_parser("run-one", help="run a single scenario file")
    o.add_argument("--config", default=None)
    o.add_argument("--scenario", required=True)
    o.add_argument("--frames", choices=["on", "off"], default="off")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_run_one)

    e = sub.add_parser("export-trajectory",
                       help="tabulate a recorded episode's depth trajectory")
    e.add_argument("--record", required=True, help="record.jsonl from run-one")
    e.add_argument("--out", required=True, help="output CSV path")
    e.set_defaults(func=cmd_export_trajectory)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run-batch" and args.episodes < 1:
        parser.error("--episodes must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
