"""End-to-end learning experiment: scripted demos -> policy training with
and without F/T input -> seeded evaluation -> side-by-side ablation table
plus per-episode stiffness-vs-force traces for the F/T policy.

Stages skip themselves when their outputs already exist, so a crashed or
tweaked run resumes instead of recomputing demos and checkpoints.
"""
import argparse
import json
import sys
import time
from pathlib import Path

from compbench.config import PolicyConfig, WorkbenchConfig
from compbench.episodes import Episode, load_chunks
from compbench.harness import (ablation_table, evaluate, generate_demos,
                               save_json)
from compbench.policy import load_checkpoint
from compbench.train import train

DESK = dict(width=64, heads=4, lr=3e-4, epochs=2000, batch_size=64,
            samples_per_epoch=256, torch_threads=4)
QUICK = dict(width=16, heads=2, enc_layers=1, dec_layers=1, lr=1e-3,
             epochs=30, batch_size=16, samples_per_epoch=32,
             checkpoint_every=0, torch_threads=2, chunk_size=10,
             latent_dim=4)


def stage(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--task", default="wiping")
    ap.add_argument("--demos", type=int, default=20)
    ap.add_argument("--episodes", type=int, default=10,
                    help="evaluation rollouts per policy")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/learning")
    ap.add_argument("--quick", action="store_true",
                    help="tiny model + few epochs, plumbing check only")
    args = ap.parse_args(argv)

    out = Path(args.out)
    cfg = WorkbenchConfig()
    demo_dir = out / "demos"
    paths = sorted(demo_dir.glob(f"{args.task}_*.cpak"))
    if len(paths) != args.demos:
        stage(f"recording {args.demos} scripted {args.task} demos")
        paths = generate_demos(
            args.task, args.demos, args.seed + 100, demo_dir, cfg=cfg,
            progress=lambda i, n: print(f"  demo {i}/{n}", flush=True))
    else:
        stage(f"reusing {len(paths)} demos in {demo_dir}")
    episodes = [Episode.load(p) for p in paths]

    reports = []
    for use_ft in (True, False):
        tag = "ft" if use_ft else "noft"
        pcfg = PolicyConfig(**(QUICK if args.quick else DESK),
                            use_ft=use_ft)
        ckpt = out / f"train_{tag}" / "policy.pt"
        if not ckpt.exists():
            stage(f"training {tag} policy ({pcfg.epochs} epochs)")
            dataset = load_chunks(episodes, pcfg.chunk_size)
            result = train(dataset, pcfg, out / f"train_{tag}",
                           seed=args.seed,
                           progress=lambda r: r["epoch"] % 100 == 0
                           and print(f"  {r}", flush=True))
            if result.halted:
                print(f"training {tag} halted on NaN", file=sys.stderr)
                return 1
            ckpt = result.checkpoint
        else:
            stage(f"reusing checkpoint {ckpt}")
        stage(f"evaluating {tag} policy on {args.episodes} episodes")
        report = evaluate(
            load_checkpoint(ckpt), args.task, episodes=args.episodes,
            seed=args.seed, cfg=cfg,
            progress=lambda i, n: print(f"  rollout {i}/{n}", flush=True))
        save_json(report.to_json(), out / f"eval_{tag}.json")
        report.write_traces(out / f"traces_{tag}")
        reports.append(report)

    table = ablation_table(*reports)
    save_json(table, out / "ablation.json")
    stage(f"ablation over task {table['task']!r}")
    width = max(len(m) for m in table["rows"])
    print(f"{'':{width}}  " + "  ".join(f"{c:>12}" for c in
                                        table["columns"]))
    for metric, values in table["rows"].items():
        cells = "  ".join(f"{v:12.3f}" if isinstance(v, float)
                          else f"{v:12d}" for v in values)
        print(f"{metric:{width}}  {cells}")
    print(f"-> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
