"""Training loop for the chunked-action policy.

One "epoch" draws samples_per_epoch chunks from the dataset and runs them
through the CVAE objective (masked L1 + beta * KL). Everything is seeded —
two runs with the same seed produce bit-identical loss curves — and a NaN
loss halts immediately, keeping the last finite-state checkpoint.
"""
from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import PolicyConfig
from .episodes import ChunkDataset, NormStats
from .policy import CompActPolicy, loss_terms, save_checkpoint


@dataclass
class TrainResult:
    checkpoint: Path                    # final (or last-good) weights
    curve: list[dict] = field(default_factory=list)
    curve_path: Path | None = None
    halted: bool = False                # True when NaN stopped training
    epochs_run: int = 0


def _identity_stats(dim: int) -> NormStats:
    return NormStats(np.zeros(dim), np.ones(dim))


def collate(samples: list[dict], use_ft: bool) -> dict:
    """Stack dataset samples into a training batch of torch tensors."""
    batch = {
        "proprio": torch.as_tensor(
            np.stack([s["proprio"] for s in samples]), dtype=torch.float32),
        "actions": torch.as_tensor(
            np.stack([s["actions"] for s in samples]), dtype=torch.float32),
        "mask": torch.as_tensor(np.stack([s["mask"] for s in samples])),
    }
    if use_ft:
        batch["ft"] = torch.as_tensor(
            np.stack([s["ft"] for s in samples]), dtype=torch.float32)
    if samples[0]["images"]:
        imgs = np.stack([np.stack(s["images"]) for s in samples])
        batch["images"] = torch.as_tensor(
            imgs, dtype=torch.float32).permute(0, 1, 4, 2, 3) / 255.0
    return batch


def dataset_stats(dataset: ChunkDataset) -> dict[str, NormStats]:
    """The normalization bundle a checkpoint carries for rollout use."""
    ep = dataset.episodes[0]
    return {
        "actions": dataset.action_stats,
        "proprio": (dataset.proprio_stats
                    or _identity_stats(ep.proprio().shape[1])),
        "ft": dataset.ft_stats or _identity_stats(ep.ft().shape[1]),
    }


def train(dataset: ChunkDataset, cfg: PolicyConfig, out_dir,
          seed: int = 0, progress=None) -> TrainResult:
    """Fit a policy to the dataset; returns paths plus the loss curve."""
    if dataset.chunk != cfg.chunk_size:
        raise ValueError(f"dataset chunk {dataset.chunk} != "
                         f"configured chunk_size {cfg.chunk_size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(max(1, cfg.torch_threads))
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    ep = dataset.episodes[0]
    policy = CompActPolicy(cfg, arm_count=len(ep.arm_ids),
                           n_cameras=len(ep.cameras))
    opt = torch.optim.Adam(policy.parameters(), lr=cfg.lr)
    stats = dataset_stats(dataset)
    meta = {"task": ep.header.get("task"), "seed": seed}

    def save(path, epoch):
        return save_checkpoint(path, policy, stats, cameras=ep.cameras,
                               arm_ids=ep.arm_ids,
                               extra=dict(meta, epoch=epoch))

    n = len(dataset)
    per_epoch = min(cfg.samples_per_epoch, n) if cfg.samples_per_epoch else n
    curve: list[dict] = []
    final = out_dir / "policy.pt"
    last_good = copy.deepcopy(policy.state_dict())
    halted = False
    epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.choice(n, size=per_epoch, replace=False)
        sums = {"l1": 0.0, "kl": 0.0, "total": 0.0}
        seen = 0
        policy.train()
        for lo in range(0, per_epoch, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch = collate([dataset.sample(int(i)) for i in idx], cfg.use_ft)
            losses = loss_terms(policy(batch), batch, beta=cfg.kl_weight)
            if not torch.isfinite(losses["total"]):
                halted = True
                break
            opt.zero_grad()
            losses["total"].backward()
            opt.step()
            for k in sums:
                sums[k] += float(losses[k].detach()) * len(idx)
            seen += len(idx)
        if halted:
            break
        row = {"epoch": epoch, **{k: sums[k] / seen for k in sums}}
        curve.append(row)
        last_good = copy.deepcopy(policy.state_dict())
        if progress is not None:
            progress(row)
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save(out_dir / f"policy_ep{epoch:05d}.pt", epoch)

    if halted:
        # roll back to the last epoch that finished with finite losses
        policy.load_state_dict(last_good)
    save(final, len(curve))

    curve_path = out_dir / "curve.csv"
    with open(curve_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "l1", "kl", "total"])
        writer.writeheader()
        writer.writerows(curve)
    return TrainResult(checkpoint=final, curve=curve, curve_path=curve_path,
                       halted=halted, epochs_run=len(curve))
