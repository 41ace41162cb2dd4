"""Policy execution: the 20 Hz observe / predict / ensemble / act loop.

A rollout drives a RuntimeSession with ControllerTargets decoded from
chunked action predictions — the same injection path demonstrations use.
The predictor is just a callable, so a trained checkpoint and a scripted
replay oracle run through identical plumbing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import WorkbenchConfig
from .controller import ControllerTarget
from .episodes import ACTION_PER_ARM, Episode
from .geometry import Pose, cholesky_decode, rotvec_to_quat
from .policy import PolicyError, TemporalEnsembler, load_checkpoint
from .rendering import default_cameras, render_all
from .runtime import RuntimeSession
from .tasks import check_success, reset
from .world import SimulationFault


@dataclass
class RolloutTrace:
    """Per-tick record of one rollout plus its outcome."""

    task: str
    seed: int
    arm_ids: list[str]
    success: bool = False
    aborted: bool = False
    metrics: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    t: list[float] = field(default_factory=list)
    force: dict[str, list[float]] = field(default_factory=dict)
    stiffness: dict[str, list[np.ndarray]] = field(default_factory=dict)
    pose_err: dict[str, list[float]] = field(default_factory=dict)
    actions: list[np.ndarray] = field(default_factory=list)
    duration: float = 0.0

    def peak_force(self) -> float:
        return max((max(v) for v in self.force.values() if v), default=0.0)

    def mean_force(self) -> float:
        rows = [v for v in self.force.values() if v]
        return float(np.mean([np.mean(v) for v in rows])) if rows else 0.0


def observation_vectors(obs, arm_ids) -> tuple[np.ndarray, np.ndarray]:
    """Flatten an Observation into (proprio, ft) rows in episode layout."""
    proprio, ft = [], []
    for arm_id in arm_ids:
        a = obs.arms[arm_id]
        proprio += [a.ee_pose.position, a.ee_pose.orientation, [a.gripper]]
        ft.append(a.wrench.as_array())
    return np.concatenate(proprio), np.concatenate(ft)


def split_action(action: np.ndarray, arm_ids) -> dict[str, ControllerTarget]:
    """One flat action row into per-arm ControllerTargets.

    Raises GeometryError on non-finite numbers; the decoded stiffness is
    PD by construction of the Cholesky codec.
    """
    targets = {}
    for i, arm_id in enumerate(arm_ids):
        a = action[i * ACTION_PER_ARM:(i + 1) * ACTION_PER_ARM]
        pose = Pose(a[0:3], rotvec_to_quat(a[3:6]))
        targets[arm_id] = ControllerTarget(
            pose=pose, stiffness=cholesky_decode(a[7:19]),
            gripper=float(a[6]))
    return targets


def run_policy(session: RuntimeSession, predict, chunk: int, coeff: float,
               horizon: float, render_fn=None) -> RolloutTrace:
    """Drive the session with `predict(tick, obs) -> (chunk, D) actions`.

    Unnormalized action chunks are temporally ensembled, decoded into
    ControllerTargets, and applied at the record rate until `horizon`
    seconds of sim time pass. Non-finite predictions or a simulator fault
    abort the rollout (counted as failure) with diagnostics attached.
    """
    world = session.world
    arm_ids = session.arm_ids()
    trace = RolloutTrace(task=world.task, seed=world.seed, arm_ids=arm_ids,
                         force={a: [] for a in arm_ids},
                         stiffness={a: [] for a in arm_ids},
                         pose_err={a: [] for a in arm_ids})
    ensembler = TemporalEnsembler(chunk=chunk, coeff=coeff,
                                  arm_count=len(arm_ids))
    rate = session.cfg.record.rate
    ticks = int(round(horizon * rate))

    for tick in range(ticks):
        obs = session.observe(render_fn)
        pred = np.asarray(predict(tick, obs), dtype=float)
        if not np.all(np.isfinite(pred)):
            trace.aborted = True
            trace.diagnostics = {"tick": tick, "reason": "non-finite action",
                                 "bad": int(np.sum(~np.isfinite(pred)))}
            break
        ensembler.push(tick, pred)
        action = ensembler.action_at(tick)
        targets = split_action(action, arm_ids)
        for arm_id, target in targets.items():
            session.set_target(arm_id, target)

        trace.t.append(world.time)
        trace.actions.append(action)
        for arm_id in arm_ids:
            a = obs.arms[arm_id]
            trace.force[arm_id].append(
                float(np.linalg.norm(a.wrench.force)))
            trace.stiffness[arm_id].append(
                session.controllers[arm_id].active_k.diag())
            trace.pose_err[arm_id].append(float(np.linalg.norm(
                a.ee_pose.position - targets[arm_id].pose.position)))
        try:
            session.run(1.0 / rate)
        except SimulationFault as fault:
            trace.aborted = True
            trace.diagnostics = {"tick": tick, "reason": str(fault)}
            break

    trace.duration = world.time
    if not trace.aborted:
        trace.success, trace.metrics = check_success(world)
    else:
        _, trace.metrics = check_success(world)
        trace.success = False
    return trace


def checkpoint_predictor(policy, meta):
    """Wrap a trained policy as an unnormalized chunk predictor."""
    stats = meta["stats"]
    arm_ids = [str(a) for a in meta["arm_ids"]]
    use_images = bool(meta["cameras"])

    def predict(tick, obs):
        proprio, ft = observation_vectors(obs, arm_ids)
        p = torch.as_tensor(stats["proprio"].normalize(proprio),
                            dtype=torch.float32).unsqueeze(0)
        f = None
        if policy.cfg.use_ft:
            f = torch.as_tensor(stats["ft"].normalize(ft),
                                dtype=torch.float32).unsqueeze(0)
        imgs = None
        if use_images:
            stack = np.stack(obs.images)
            imgs = torch.as_tensor(stack, dtype=torch.float32)
            imgs = imgs.permute(0, 3, 1, 2).unsqueeze(0) / 255.0
        chunk = policy.infer(imgs, p, f)[0].numpy()
        return stats["actions"].unnormalize(chunk)

    return predict


def rollout_checkpoint(checkpoint, task: str, seed: int,
                       cfg: WorkbenchConfig | None = None,
                       horizon: float = 8.0) -> RolloutTrace:
    """Reset the task, load the checkpoint, and roll it out once."""
    policy, meta = ((checkpoint if isinstance(checkpoint, tuple)
                     else load_checkpoint(checkpoint)))
    cfg = cfg or WorkbenchConfig()
    world = reset(task, seed, cfg)
    session = RuntimeSession(world, cfg)
    cameras = default_cameras(world)
    names = [c.name for c in cameras]
    if list(meta["cameras"]) and list(meta["cameras"]) != names:
        raise PolicyError(f"checkpoint cameras {meta['cameras']} != "
                          f"task cameras {names}")
    render_fn = ((lambda w: render_all(w, cameras))
                 if meta["cameras"] else None)
    return run_policy(session, checkpoint_predictor(policy, meta),
                      chunk=policy.cfg.chunk_size,
                      coeff=policy.cfg.ensemble_coeff,
                      horizon=horizon, render_fn=render_fn)


def replay_predictor(episode: Episode):
    """Scripted oracle: serve the episode's own recorded action chunks.

    Closes the sim/controller loop without any learning in the way — a
    rollout of this predictor on the episode's (task, seed) must succeed
    if recording and execution are faithful.
    """
    actions = episode.actions()

    def predict(tick, obs, chunk=20):
        take = actions[tick:tick + chunk]
        if len(take) == 0:
            take = actions[-1:]
        if len(take) < chunk:
            pad = np.repeat(take[-1:], chunk - len(take), axis=0)
            take = np.concatenate([take, pad])
        return take

    return predict


def rollout_replay(episode: Episode, cfg: WorkbenchConfig | None = None,
                   chunk: int = 20, coeff: float = 0.01,
                   horizon: float | None = None) -> RolloutTrace:
    cfg = cfg or WorkbenchConfig()
    task = episode.header["task"]
    world = reset(task, int(episode.header["seed"]), cfg)
    session = RuntimeSession(world, cfg)
    rate = cfg.record.rate
    if horizon is None:
        horizon = (len(episode) + chunk) / rate
    predict = replay_predictor(episode)
    return run_policy(session, lambda t, o: predict(t, o, chunk),
                      chunk=chunk, coeff=coeff, horizon=horizon)
