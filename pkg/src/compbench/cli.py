"""Command-line front end for the workbench.

Exit codes: 0 on success, 2 for configuration problems (bad flags,
bad config file, inconsistent options), 3 for runtime failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .episodes import Episode, EpisodeError, compute_norm_stats, load_chunks
from .geometry import GeometryError, cholesky_decode
from .harness import (HarnessError, compare_force_profiles, evaluate,
                      generate_demos, load_report_csv, save_json)
from .policy import PolicyError, load_checkpoint
from .tasks import TASKS
from .world import SimulationFault


def _say(msg: str) -> None:
    print(msg, flush=True)


def _check_task(task: str) -> str:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; choose one of {TASKS}")
    return task


def _progress(what: str):
    return lambda i, n: _say(f"[{i}/{n}] {what}")


def _load_episodes(data_dir: Path) -> list[Episode]:
    paths = sorted(Path(data_dir).glob("*.cpak"))
    if not paths:
        raise EpisodeError(f"no .cpak episodes under {data_dir}")
    return [Episode.load(p) for p in paths]


# --- subcommand handlers -----------------------------------------------------

def cmd_demo_gen(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    paths = generate_demos(_check_task(args.task), args.count, args.seed,
                           out, cfg, images=not args.no_images,
                           progress=_progress("episodes recorded"))
    _say(f"wrote {len(paths)} episodes to {out}")
    return 0


def cmd_train(args) -> int:
    from .train import train  # defers the torch import

    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg.policy.epochs = args.epochs
    if args.no_ft:
        cfg.policy.use_ft = False
    episodes = _load_episodes(args.data)
    tasks = {ep.header["task"] for ep in episodes}
    if len(tasks) != 1:
        raise ConfigError(f"mixed tasks in dataset: {sorted(tasks)}")
    dataset = load_chunks(
        episodes, cfg.policy.chunk_size,
        action_stats=compute_norm_stats(episodes, "actions"),
        proprio_stats=compute_norm_stats(episodes, "proprio"),
        ft_stats=compute_norm_stats(episodes, "ft"))
    _say(f"training on {len(episodes)} episodes "
         f"({len(dataset)} chunk starts), task {tasks.pop()!r}")

    def progress(row):
        if row["epoch"] % 50 == 0 or row["epoch"] == cfg.policy.epochs:
            _say(f"[{row['epoch']}/{cfg.policy.epochs}] "
                 f"l1={row['l1']:.4f} kl={row['kl']:.4f} "
                 f"total={row['total']:.4f}")

    result = train(dataset, cfg.policy, args.out, seed=args.seed,
                   progress=progress)
    _say(f"checkpoint: {result.checkpoint}")
    _say(f"curve: {result.curve_path}")
    if result.halted:
        _say(f"training halted on non-finite loss after "
             f"{result.epochs_run} epochs; checkpoint holds the last "
             f"finite state")
        return 3
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    policy, meta = load_checkpoint(args.checkpoint)
    if args.no_ft and policy.cfg.use_ft:
        raise ConfigError("--no-ft passed but the checkpoint was trained "
                          "with F/T input; train one with use_ft=false")
    task = args.task or meta.get("extra", {}).get("task")
    if not task:
        raise ConfigError("checkpoint does not record its task; "
                          "pass --task explicitly")
    _check_task(task)
    label = "w/o F/T" if args.no_ft or not policy.cfg.use_ft else "F/T"
    report = evaluate((policy, meta), task, episodes=args.episodes,
                      seed=args.seed, cfg=cfg, horizon=cfg.task.horizon,
                      label=label, progress=_progress("episodes rolled out"))
    out = Path(args.out)
    report.to_csv(out / "report.csv")
    report.write_traces(out / "traces")
    payload = report.to_json()
    save_json(payload, out / "report.json")
    agg = report.aggregates()
    _say(f"[{report.label}] {task}: success "
         f"{agg['success_rate']:.0%} of {agg['episodes']}, "
         f"peak force {agg['peak_force_mean']:.2f} "
         f"+/- {agg['peak_force_std']:.2f} N")
    if args.json:
        _say(json.dumps(payload, sort_keys=True))
    return 0


def cmd_compare_force(args) -> int:
    cfg = load_config(args.config)
    demos = _load_episodes(args.demos) if args.demos else None
    cmp = compare_force_profiles(
        _check_task(args.task), args.episodes, seed=args.seed, cfg=cfg,
        amplitude=args.amplitude, frequency=args.frequency, demos=demos,
        progress=_progress("pairs executed"))
    out = Path(args.out)
    cmp.compliant.to_csv(out / "compliant_report.csv")
    cmp.position.to_csv(out / "position_report.csv")
    cmp.write_curves(out / "curves.csv")
    payload = cmp.to_json()
    save_json(payload, out / "comparison.json")
    _say(f"peak force ratio (position-tracking / compliant): "
         f"{cmp.peak_ratio():.1f}x over {args.episodes} paired episodes")
    if args.json:
        _say(json.dumps(payload, sort_keys=True))
    return 0


def cmd_dump_episode(args) -> int:
    ep = Episode.load(args.path)
    k_levels = sorted({round(float(np.max(np.diag(
        cholesky_decode(row).translational))))
        for a in ep.arm_ids for row in ep.field(f"{a}/act_chol")})
    forces = np.linalg.norm(
        ep.ft().reshape(len(ep), len(ep.arm_ids), 6)[..., :3], axis=-1)
    payload = {
        "path": str(args.path),
        "task": ep.header["task"], "seed": ep.header["seed"],
        "success": ep.success, "aborted": bool(ep.header["aborted"]),
        "steps": len(ep),
        "duration": float(ep.t[-1]) if len(ep) else 0.0,
        "arms": ep.arm_ids, "cameras": ep.cameras,
        "record_rate": ep.header["record_rate"],
        "stiffness_levels": k_levels,
        "peak_force": float(forces.max()) if len(ep) else 0.0,
    }
    if args.json:
        _say(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            _say(f"{key:>16}: {value}")
    return 0


def cmd_report(args) -> int:
    rows = load_report_csv(args.csv)
    n = len(rows)
    agg = {
        "episodes": n,
        "success_rate": sum(r["success"] for r in rows) / n if n else 0.0,
        "aborted": sum(r["aborted"] for r in rows),
        "peak_force_mean": float(np.mean([r["peak_force"] for r in rows]))
        if n else 0.0,
        "peak_force_std": float(np.std([r["peak_force"] for r in rows]))
        if n else 0.0,
        "peak_force_max": float(np.max([r["peak_force"] for r in rows]))
        if n else 0.0,
        "mean_force": float(np.mean([r["mean_force"] for r in rows]))
        if n else 0.0,
    }
    if args.against:
        stored = json.loads(Path(args.against).read_text())["aggregates"]
        for key, value in agg.items():
            if not np.isclose(stored.get(key, np.nan), value,
                              rtol=1e-9, atol=1e-12):
                _say(f"aggregate mismatch: {key} stored {stored.get(key)} "
                     f"!= recomputed {value}")
                return 3
        _say(f"aggregates verified against {args.against}")
    if args.json:
        _say(json.dumps(agg, sort_keys=True))
    else:
        for key, value in agg.items():
            _say(f"{key:>16}: {value}")
    return 0


def cmd_sim_serve(args) -> int:
    from .server import serve  # keeps asyncio out of batch commands

    cfg = load_config(args.config)
    serve(host=args.host, port=args.port, cfg=cfg,
          task=_check_task(args.task),
          seed=args.seed, out_dir=args.out, frontend=args.frontend)
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compbench",
        description="compliant-manipulation workbench: demos, training, "
                    "evaluation, teleop service")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", default=None,
                       help="JSON config overriding defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--json", action="store_true",
                       help="also print a machine-readable report")

    p = sub.add_parser("demo-gen", help="record scripted demonstrations")
    common(p, "out/demos")
    p.add_argument("--task", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--no-images", action="store_true",
                   help="skip camera rendering (faster, not trainable)")
    p.set_defaults(fn=cmd_demo_gen)

    p = sub.add_parser("train", help="train a policy on recorded episodes")
    common(p, "out/train")
    p.add_argument("--data", required=True, help="directory of .cpak files")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--no-ft", action="store_true",
                   help="train without the wrench observation")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="roll a checkpoint out on fresh seeds")
    common(p, "out/eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", default=None,
                   help="defaults to the task recorded in the checkpoint")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--no-ft", action="store_true",
                   help="assert + label the w/o-F/T ablation")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare-force",
                       help="paired compliant vs position-tracking forces")
    common(p, "out/compare")
    p.add_argument("--task", default="wiping")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--amplitude", type=float, default=0.002,
                   help="injected reference error, meters")
    p.add_argument("--frequency", type=float, default=0.5,
                   help="injected error frequency, Hz")
    p.add_argument("--demos", default=None,
                   help="reuse recorded demos instead of scripting new ones")
    p.set_defaults(fn=cmd_compare_force)

    p = sub.add_parser("dump-episode", help="inspect one episode file")
    p.add_argument("path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_dump_episode)

    p = sub.add_parser("report", help="recompute aggregates from a report CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--against", default=None,
                   help="report.json to verify aggregates against")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("sim-serve", help="run the sim + teleop service")
    common(p, "out/teleop")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--task", default="wiping")
    p.add_argument("--frontend", default=None,
                   help="directory of static files to serve at /")
    p.set_defaults(fn=cmd_sim_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigError as e:
        _say(f"config error: {e}")
        return 2
    except (HarnessError, EpisodeError, PolicyError, GeometryError,
            SimulationFault, OSError) as e:
        _say(f"error: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
