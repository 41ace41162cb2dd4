"""Chunked-action CVAE policy over Cartesian pose, gripper, and stiffness.

The decoder is the policy: conditioned on camera images, proprioception,
optionally the measured wrench, and a latent z, it predicts the next n
action vectors (19 numbers per arm: position, axis-angle, gripper, and a
Cholesky stiffness 12-vector). A transformer encoder over the action
sequence provides the training-time posterior; at inference z is the prior
mean (zero) and the posterior tower is dead weight.

Everything here lives in normalized action/observation space; callers
unnormalize through the NormStats stored alongside the weights.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import PolicyConfig
from .episodes import ACTION_PER_ARM, PROPRIO_PER_ARM, NormStats
from .geometry import quat_conj, quat_mul, quat_to_rotvec, rotvec_to_quat

CHECKPOINT_VERSION = 1


class PolicyError(RuntimeError):
    pass


def gaussian_kl(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag e^logvar) || N(0, I)) per sample, summed over dims."""
    return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(-1)


def masked_l1(pred: torch.Tensor, target: torch.Tensor,
              mask: torch.Tensor) -> torch.Tensor:
    """Mean |error| over real (unpadded) steps and action dims."""
    err = (pred - target).abs() * mask[..., None]
    denom = mask.sum().clamp(min=1) * pred.shape[-1]
    return err.sum() / denom


class ImageEncoder(nn.Module):
    """64x64 RGB to one token; shared weights across cameras."""

    def __init__(self, width: int):
        super().__init__()
        chans = [3, 16, 32, 64, width]
        layers = []
        for cin, cout in zip(chans, chans[1:]):
            layers += [nn.Conv2d(cin, cout, 4, stride=2, padding=1),
                       nn.GELU()]
        self.net = nn.Sequential(*layers)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        # (B, K, 3, 64, 64) -> (B, K, width)
        b, k = images.shape[:2]
        feats = self.net(images.flatten(0, 1))      # (B*K, width, 4, 4)
        return feats.mean(dim=(2, 3)).reshape(b, k, -1)


class CompActPolicy(nn.Module):
    def __init__(self, cfg: PolicyConfig, arm_count: int, n_cameras: int):
        super().__init__()
        if cfg.chunk_size < 1:
            raise PolicyError("chunk size must be >= 1")
        if cfg.width % cfg.heads:
            raise PolicyError("width must be divisible by head count")
        self.cfg = cfg
        self.arm_count = arm_count
        self.n_cameras = n_cameras
        self.action_dim = ACTION_PER_ARM * arm_count
        self.proprio_dim = PROPRIO_PER_ARM * arm_count
        self.ft_dim = 6 * arm_count if cfg.use_ft else 0
        w = cfg.width

        # --- posterior tower (training only) ---
        self.post_action_in = nn.Linear(self.action_dim, w)
        self.post_proprio_in = nn.Linear(self.proprio_dim, w)
        self.post_ft_in = (nn.Linear(self.ft_dim, w)
                           if self.ft_dim else None)
        self.post_cls = nn.Parameter(torch.zeros(1, 1, w))
        n_ctx = 2 + (1 if self.ft_dim else 0)
        self.post_pos = nn.Parameter(
            torch.zeros(1, n_ctx + cfg.chunk_size, w))
        layer = nn.TransformerEncoderLayer(
            w, cfg.heads, dim_feedforward=4 * w, dropout=0.0,
            activation="gelu", batch_first=True)
        # the nested-tensor fast path is a prototype; keep the plain one
        self.posterior = nn.TransformerEncoder(layer, cfg.enc_layers,
                                               enable_nested_tensor=False)
        self.latent_head = nn.Linear(w, 2 * cfg.latent_dim)

        # --- decoder (the policy) ---
        self.image_encoder = ImageEncoder(w) if n_cameras else None
        self.camera_embed = (nn.Parameter(torch.zeros(1, n_cameras, w))
                             if n_cameras else None)
        self.dec_proprio_in = nn.Linear(self.proprio_dim, w)
        self.dec_ft_in = nn.Linear(self.ft_dim, w) if self.ft_dim else None
        self.latent_in = nn.Linear(cfg.latent_dim, w)
        n_mem = 2 + n_cameras + (1 if self.ft_dim else 0)
        self.memory_pos = nn.Parameter(torch.zeros(1, n_mem, w))
        mem_layer = nn.TransformerEncoderLayer(
            w, cfg.heads, dim_feedforward=4 * w, dropout=0.0,
            activation="gelu", batch_first=True)
        self.memory_encoder = nn.TransformerEncoder(mem_layer,
                                                    cfg.enc_layers)
        dec_layer = nn.TransformerDecoderLayer(
            w, cfg.heads, dim_feedforward=4 * w, dropout=0.0,
            activation="gelu", batch_first=True)
        self.decoder = nn.TransformerDecoder(dec_layer, cfg.dec_layers)
        self.queries = nn.Parameter(torch.zeros(1, cfg.chunk_size, w))
        self.action_head = nn.Linear(w, self.action_dim)

        for p in (self.post_pos, self.memory_pos, self.queries):
            nn.init.normal_(p, std=0.02)

    # --- posterior -------------------------------------------------------

    def encode_posterior(self, actions: torch.Tensor, mask: torch.Tensor,
                         proprio: torch.Tensor,
                         ft: torch.Tensor | None = None):
        """(B, n, D) action chunks (+ padding mask) to (mu, logvar)."""
        if actions.shape[-1] != self.action_dim:
            raise PolicyError(
                f"action dim {actions.shape[-1]} != {self.action_dim}")
        b, n = actions.shape[:2]
        if n != self.cfg.chunk_size:
            raise PolicyError(
                f"chunk length {n} != configured {self.cfg.chunk_size}")
        tokens = [self.post_cls.expand(b, 1, -1),
                  self.post_proprio_in(proprio).unsqueeze(1)]
        if self.ft_dim:
            if ft is None:
                raise PolicyError("policy configured with F/T input")
            tokens.append(self.post_ft_in(ft).unsqueeze(1))
        n_ctx = len(tokens)              # cls + proprio (+ ft), never padded
        tokens.append(self.post_action_in(actions))
        pad = torch.cat([torch.zeros(b, n_ctx, dtype=torch.bool,
                                     device=actions.device), ~mask], dim=1)
        x = torch.cat(tokens, dim=1) + self.post_pos
        out = self.posterior(x, src_key_padding_mask=pad)
        mu, logvar = self.latent_head(out[:, 0]).chunk(2, dim=-1)
        return mu, logvar

    # --- decoder ---------------------------------------------------------

    def predict_chunk(self, images: torch.Tensor | None,
                      proprio: torch.Tensor, ft: torch.Tensor | None,
                      z: torch.Tensor) -> torch.Tensor:
        """(B, n, action_dim) normalized actions."""
        b = proprio.shape[0]
        tokens = [self.latent_in(z).unsqueeze(1),
                  self.dec_proprio_in(proprio).unsqueeze(1)]
        if self.ft_dim:
            if ft is None:
                raise PolicyError("policy configured with F/T input")
            tokens.append(self.dec_ft_in(ft).unsqueeze(1))
        if self.n_cameras:
            if images is None or images.shape[1] != self.n_cameras:
                raise PolicyError(
                    f"need images from {self.n_cameras} cameras")
            tokens.append(self.image_encoder(images) + self.camera_embed)
        memory = torch.cat(tokens, dim=1) + self.memory_pos
        memory = self.memory_encoder(memory)
        out = self.decoder(self.queries.expand(b, -1, -1), memory)
        return self.action_head(out)

    def forward(self, batch: dict) -> dict:
        """Training pass: posterior sample + reconstruction."""
        mu, logvar = self.encode_posterior(
            batch["actions"], batch["mask"], batch["proprio"],
            batch.get("ft"))
        z = mu + torch.randn_like(mu) * (0.5 * logvar).exp()
        pred = self.predict_chunk(batch.get("images"), batch["proprio"],
                                  batch.get("ft"), z)
        return {"pred": pred, "mu": mu, "logvar": logvar}

    def infer(self, images: torch.Tensor | None, proprio: torch.Tensor,
              ft: torch.Tensor | None) -> torch.Tensor:
        """Deterministic chunk at the prior mean (z = 0)."""
        z = torch.zeros(proprio.shape[0], self.cfg.latent_dim,
                        device=proprio.device)
        with torch.no_grad():
            return self.predict_chunk(images, proprio, ft, z)


def loss_terms(out: dict, batch: dict, beta: float) -> dict:
    """total = masked L1 + beta * KL, returned with both parts."""
    l1 = masked_l1(out["pred"], batch["actions"], batch["mask"])
    kl = gaussian_kl(out["mu"], out["logvar"]).mean()
    return {"l1": l1, "kl": kl, "total": l1 + beta * kl}


# --- checkpoints ----------------------------------------------------------

def save_checkpoint(path, policy: CompActPolicy, stats: dict,
                    cameras, arm_ids, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(policy.cfg),
        "arm_count": policy.arm_count,
        "n_cameras": policy.n_cameras,
        "cameras": list(cameras),
        "arm_ids": list(arm_ids),
        "stats": {k: v.to_json() for k, v in stats.items()},
        "state_dict": policy.state_dict(),
        "extra": extra or {},
    }, path)
    return path


def load_checkpoint(path) -> tuple[CompActPolicy, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise PolicyError(f"unsupported checkpoint version "
                          f"{blob.get('version')!r}")
    cfg = PolicyConfig(**blob["config"])
    policy = CompActPolicy(cfg, blob["arm_count"], blob["n_cameras"])
    policy.load_state_dict(blob["state_dict"])
    policy.eval()
    meta = {k: v for k, v in blob.items() if k != "state_dict"}
    meta["stats"] = {k: NormStats.from_json(v)
                     for k, v in blob["stats"].items()}
    return policy, meta


# --- temporal ensembling ---------------------------------------------------

class TemporalEnsembler:
    """Averages every live chunk's opinion of the current step.

    Chunk pushed at tick s covers ticks s..s+n-1. For tick t the
    contributions are ordered oldest first and weighted w_i ~ exp(-m*i),
    so the oldest prediction dominates and fresh chunks blend in smoothly
    (m = 0 averages evenly; m -> inf executes the oldest chunk verbatim).
    Orientations are averaged in the tangent space at the newest
    contribution; everything else per-dimension.
    """

    def __init__(self, chunk: int, coeff: float, arm_count: int):
        self.chunk = chunk
        self.coeff = coeff
        self.arm_count = arm_count
        self._chunks: list[tuple[int, np.ndarray]] = []

    def reset(self) -> None:
        self._chunks.clear()

    def push(self, tick: int, actions: np.ndarray) -> None:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.chunk, ACTION_PER_ARM * self.arm_count):
            raise PolicyError(f"chunk shape {actions.shape} unexpected")
        self._chunks.append((tick, actions))
        # drop chunks too old to ever matter again
        self._chunks = [(s, a) for s, a in self._chunks
                        if s + self.chunk > tick]

    def action_at(self, tick: int) -> np.ndarray:
        rows = [(s, a[tick - s]) for s, a in self._chunks
                if s <= tick < s + self.chunk]
        if not rows:
            raise PolicyError(f"no chunk covers tick {tick}")
        rows.sort(key=lambda r: r[0])
        votes = np.stack([r[1] for r in rows])
        w = np.exp(-self.coeff * np.arange(len(rows)))
        w /= w.sum()
        out = w @ votes
        for arm in range(self.arm_count):
            sl = slice(arm * ACTION_PER_ARM + 3, arm * ACTION_PER_ARM + 6)
            out[sl] = _blend_rotvecs(votes[:, sl], w)
        return out


def _blend_rotvecs(rotvecs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted mean in the tangent space at the newest rotation."""
    ref = rotvec_to_quat(rotvecs[-1])
    ref_inv = quat_conj(ref)
    deltas = np.stack([quat_to_rotvec(quat_mul(rotvec_to_quat(r), ref_inv))
                       for r in rotvecs])
    mean_delta = weights @ deltas
    return quat_to_rotvec(quat_mul(rotvec_to_quat(mean_delta), ref))
