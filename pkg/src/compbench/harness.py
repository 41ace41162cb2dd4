"""Experiment harness: dataset generation, batched evaluation, and the
compliant-vs-position-tracking force comparison.

Everything here is seed-deterministic: episode i of a batch draws all of
its randomness from `default_rng([seed, i, ...])`, so reruns reproduce
byte-identical datasets and reports.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import WorkbenchConfig
from .demos import build_program, run_demo
from .episodes import ACTION_PER_ARM, Episode, EpisodeWriter
from .kinematics import forward_kinematics, jacobian
from .rendering import default_cameras, render_all
from .rollout import RolloutTrace, rollout_checkpoint, rollout_replay, run_policy
from .runtime import RuntimeSession
from .tasks import TASK_MODE_PAIRS, check_success, reset
from .world import SimulationFault

MAX_RETRIES = 3

REPORT_COLUMNS = ["episode", "seed", "success", "aborted", "peak_force",
                  "mean_force", "duration", "steps"]


class HarnessError(RuntimeError):
    pass


# --- reports ----------------------------------------------------------------

@dataclass
class RolloutReport:
    """Batch of rollout traces plus the per-episode row summary.

    Aggregates are always recomputed from the rows, never cached, so the
    invariant "aggregates match rows" holds by construction.
    """

    label: str
    task: str
    rows: list[dict] = field(default_factory=list)
    traces: list[RolloutTrace] = field(default_factory=list, repr=False)

    @classmethod
    def from_traces(cls, label: str, task: str,
                    traces: list[RolloutTrace]) -> "RolloutReport":
        rows = []
        for i, tr in enumerate(traces):
            rows.append({
                "episode": i, "seed": tr.seed,
                "success": bool(tr.success), "aborted": bool(tr.aborted),
                "peak_force": tr.peak_force(), "mean_force": tr.mean_force(),
                "duration": tr.duration, "steps": len(tr.t),
            })
        return cls(label=label, task=task, rows=rows, traces=traces)

    def aggregates(self) -> dict:
        n = len(self.rows)
        peaks = [r["peak_force"] for r in self.rows]
        return {
            "episodes": n,
            "success_rate": (sum(r["success"] for r in self.rows) / n
                             if n else 0.0),
            "aborted": sum(r["aborted"] for r in self.rows),
            "peak_force_mean": float(np.mean(peaks)) if peaks else 0.0,
            "peak_force_std": float(np.std(peaks)) if peaks else 0.0,
            "peak_force_max": float(np.max(peaks)) if peaks else 0.0,
            "mean_force": (float(np.mean([r["mean_force"]
                                          for r in self.rows])) if n else 0.0),
        }

    def force_matrix(self) -> np.ndarray:
        """Per-episode force series (max over arms), cropped to the
        shortest episode so the curves align tick-for-tick."""
        series = []
        for tr in self.traces:
            per_arm = np.array([tr.force[a] for a in tr.arm_ids])
            series.append(per_arm.max(axis=0))
        n = min(len(s) for s in series)
        return np.stack([s[:n] for s in series])

    def force_curve(self) -> tuple[np.ndarray, np.ndarray]:
        """Aligned mean and standard-deviation force band."""
        m = self.force_matrix()
        return m.mean(axis=0), m.std(axis=0)

    def to_json(self) -> dict:
        return {"label": self.label, "task": self.task, "rows": self.rows,
                "aggregates": self.aggregates()}

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            for row in self.rows:
                w.writerow({k: (int(v) if isinstance(v, bool) else v)
                            for k, v in row.items()})
        return path

    def write_traces(self, out_dir) -> list[Path]:
        """Per-episode time series: force, executed stiffness diagonal,
        and pose error per arm (the stiffness-vs-force trace)."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, tr in enumerate(self.traces):
            cols = ["t"]
            for a in tr.arm_ids:
                cols += [f"{a}/force", f"{a}/kx", f"{a}/ky", f"{a}/kz",
                         f"{a}/pose_err"]
            path = out_dir / f"trace_{i:03d}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(cols)
                for j, t in enumerate(tr.t):
                    row = [t]
                    for a in tr.arm_ids:
                        k = tr.stiffness[a][j]
                        row += [tr.force[a][j], k[0], k[1], k[2],
                                tr.pose_err[a][j]]
                    w.writerow(row)
            paths.append(path)
        return paths


def load_report_csv(path) -> list[dict]:
    """Read a report CSV back into typed rows (the to_csv inverse)."""
    with open(path, newline="") as fh:
        rows = []
        for raw in csv.DictReader(fh):
            rows.append({
                "episode": int(raw["episode"]), "seed": int(raw["seed"]),
                "success": bool(int(raw["success"])),
                "aborted": bool(int(raw["aborted"])),
                "peak_force": float(raw["peak_force"]),
                "mean_force": float(raw["mean_force"]),
                "duration": float(raw["duration"]),
                "steps": int(raw["steps"]),
            })
        return rows


# --- dataset generation -----------------------------------------------------

def generate_demos(task: str, count: int, seed: int, out_dir,
                   cfg: WorkbenchConfig | None = None, images: bool = True,
                   progress=None) -> list[Path]:
    """Record `count` successful scripted demonstrations.

    Each episode gets its own rng stream [seed, i, attempt]; a demo that
    fails its task check is discarded and regenerated with the attempt
    counter bumped (at most MAX_RETRIES retries), so one bad draw can't
    poison the dataset and identical seeds rebuild identical files.
    """
    cfg = cfg or WorkbenchConfig()
    out_dir = Path(out_dir)
    paths = []
    for i in range(count):
        for attempt in range(MAX_RETRIES + 1):
            rng = np.random.default_rng([seed, i, attempt])
            world = reset(task, int(rng.integers(1 << 31)), cfg)
            session = RuntimeSession(world, cfg)
            cams = default_cameras(world) if images else []
            writer = EpisodeWriter(
                out_dir / f"{task}_{i:03d}.cpak", task, world.seed,
                list(world.arms),
                {a: arm.chain.n for a, arm in world.arms.items()},
                cameras=[c.name for c in cams],
                record_rate=cfg.record.rate,
                mode_pairs=TASK_MODE_PAIRS[task])
            render_fn = ((lambda w: render_all(w, cams)) if images else None)
            try:
                run_demo(session, build_program(world, rng), writer=writer,
                         render_fn=render_fn)
            except SimulationFault:
                continue
            ok, _ = check_success(world)
            if ok:
                paths.append(writer.finalize(success=True))
                break
        else:
            raise HarnessError(
                f"demo {i} of task {task!r} failed "
                f"{MAX_RETRIES + 1} attempts")
        if progress is not None:
            progress(i + 1, count)
    return paths


# --- evaluation -------------------------------------------------------------

def evaluate(policy, task: str, episodes: int = 10, seed: int = 0,
             cfg: WorkbenchConfig | None = None, horizon: float = 8.0,
             label: str | None = None, progress=None) -> RolloutReport:
    """Roll a policy out `episodes` times on fresh task randomizations.

    `policy` is a checkpoint path, a loaded (policy, meta) pair, or a list
    of recorded Episodes — the last replays each episode on its own seed,
    the oracle mode used to validate the harness itself. Aborted rollouts
    count as failures. The default label distinguishes the F/T ablation.
    """
    cfg = cfg or WorkbenchConfig()
    replay = (isinstance(policy, (list, tuple)) and len(policy) > 0
              and isinstance(policy[0], Episode))
    traces = []
    for i in range(episodes):
        if replay:
            if i >= len(policy):
                raise HarnessError(f"replay needs {episodes} episodes, "
                                   f"got {len(policy)}")
            traces.append(rollout_replay(policy[i], cfg))
        else:
            traces.append(rollout_checkpoint(policy, task, seed + i, cfg,
                                             horizon=horizon))
        if progress is not None:
            progress(i + 1, episodes)
    if label is None:
        if replay:
            label = "replay oracle"
        else:
            from .policy import load_checkpoint
            pol = (policy[0] if isinstance(policy, tuple)
                   else load_checkpoint(policy)[0])
            label = "F/T" if pol.cfg.use_ft else "w/o F/T"
    return RolloutReport.from_traces(label, task, traces)


# --- force-profile comparison ------------------------------------------------

@dataclass
class ForceComparison:
    """Paired compliant / position-tracking executions of the same
    reference trajectories under the same injected reference error."""

    compliant: RolloutReport
    position: RolloutReport
    amplitude: float
    frequency: float

    def __post_init__(self):
        if len(self.compliant.rows) != len(self.position.rows):
            raise HarnessError(
                f"mismatched episode counts: {len(self.compliant.rows)} "
                f"compliant vs {len(self.position.rows)} position")

    def peak_ratio(self) -> float:
        """Position-tracking peak over compliant peak (paired means)."""
        c = np.mean([r["peak_force"] for r in self.compliant.rows])
        p = np.mean([r["peak_force"] for r in self.position.rows])
        return float(p / c) if c > 0 else float("inf")

    def to_json(self) -> dict:
        return {"amplitude": self.amplitude, "frequency": self.frequency,
                "peak_ratio": self.peak_ratio(),
                "compliant": self.compliant.to_json(),
                "position": self.position.to_json()}

    def write_curves(self, path) -> Path:
        """Aligned mean +/- std force curves for both executors."""
        cm, cs = self.compliant.force_curve()
        pm, ps = self.position.force_curve()
        n = min(len(cm), len(pm))
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tick", "compliant_mean", "compliant_std",
                        "position_mean", "position_std"])
            for i in range(n):
                w.writerow([i, cm[i], cs[i], pm[i], ps[i]])
        return path


def _sinusoid_offset(rng, amplitude: float, frequency: float, arm_ids):
    """Per-arm 3-axis sinusoidal reference error with random phases.

    One draw serves both executors of a pair, so the injected error
    schedule is identical across the comparison.
    """
    phases = {a: rng.uniform(0.0, 2.0 * np.pi, 3) for a in arm_ids}

    def offset(t: float, arm_id: str) -> np.ndarray:
        return amplitude * np.sin(2.0 * np.pi * frequency * t
                                  + phases[arm_id])

    return offset


def _replay_compliant(episode: Episode, offset, cfg) -> RolloutTrace:
    """Replay recorded Cartesian actions (plus injected error) through the
    compliance controller, one action per tick."""
    rate = cfg.record.rate
    actions = episode.actions()
    arm_ids = episode.arm_ids
    world = reset(episode.header["task"], int(episode.header["seed"]), cfg)
    session = RuntimeSession(world, cfg)

    def predict(tick, obs):
        row = actions[min(tick, len(actions) - 1)].copy()
        t = tick / rate
        for i, arm_id in enumerate(arm_ids):
            row[i * ACTION_PER_ARM:i * ACTION_PER_ARM + 3] += offset(t, arm_id)
        return row[None, :]

    horizon = len(episode) / rate + 0.5
    return run_policy(session, predict, chunk=1, coeff=0.0, horizon=horizon)


def _replay_position(episode: Episode, offset, cfg) -> RolloutTrace:
    """Replay the recorded joint trajectory straight through the stiff
    inner joint servo — no compliance layer. The injected Cartesian error
    maps to joints through the position Jacobian pseudo-inverse, so both
    executors see the same reference error.
    """
    world = reset(episode.header["task"], int(episode.header["seed"]), cfg)
    arm_ids = episode.arm_ids
    t_rec = episode.t
    q_rec = {a: episode.joint_positions(a) for a in arm_ids}
    grip_rec = {a: episode.field(f"{a}/act_gripper")[:, 0] for a in arm_ids}
    trace = RolloutTrace(task=world.task, seed=world.seed, arm_ids=arm_ids,
                         force={a: [] for a in arm_ids},
                         stiffness={a: [] for a in arm_ids},
                         pose_err={a: [] for a in arm_ids})
    dt = cfg.sim.physics_dt
    per_tick = max(1, round(1.0 / (cfg.record.rate * dt)))
    ticks = len(episode) + int(0.5 * cfg.record.rate)

    for tick in range(ticks):
        obs = world.observe()
        trace.t.append(world.time)
        for a in arm_ids:
            t = world.time
            q_des = np.array([np.interp(t, t_rec, q_rec[a][:, j])
                              for j in range(q_rec[a].shape[1])])
            ref = forward_kinematics(world.arms[a].chain, q_des)
            trace.force[a].append(
                float(np.linalg.norm(obs.arms[a].wrench.force)))
            # no Cartesian stiffness exists on this executor; log the
            # joint-servo gain so the trace shows "stiff" unambiguously
            trace.stiffness[a].append(np.full(6, cfg.sim.servo_kp))
            trace.pose_err[a].append(float(np.linalg.norm(
                obs.arms[a].ee_pose.position - ref.position)))
        try:
            for _ in range(per_tick):
                t = world.time
                commands = {}
                for a in arm_ids:
                    q_des = np.array([np.interp(t, t_rec, q_rec[a][:, j])
                                      for j in range(q_rec[a].shape[1])])
                    jac = jacobian(world.arms[a].chain, q_des)[:3]
                    dq = np.linalg.pinv(jac) @ offset(t, a)
                    grip = float(np.interp(t, t_rec, grip_rec[a]))
                    commands[a] = (q_des + dq, grip)
                world.step(commands, dt)
        except SimulationFault as fault:
            trace.aborted = True
            trace.diagnostics = {"tick": tick, "reason": str(fault)}
            break

    trace.duration = world.time
    if not trace.aborted:
        trace.success, trace.metrics = check_success(world)
    return trace


def compare_force_profiles(task: str, episodes: int, seed: int = 0,
                           cfg: WorkbenchConfig | None = None,
                           amplitude: float = 0.002,
                           frequency: float = 0.5,
                           demos: list[Episode] | None = None,
                           progress=None) -> ForceComparison:
    """Run the paired executor comparison over `episodes` seeds.

    For each pair: record one scripted demo (or take a provided one),
    draw one injected-error schedule, then execute the same reference
    twice — through the compliance controller and through the bare joint
    servo. Identical seeds and schedules make the peak-force ratio a
    clean executor comparison.
    """
    cfg = cfg or WorkbenchConfig()
    compliant, position = [], []
    for i in range(episodes):
        rng = np.random.default_rng([seed, i])
        if demos is not None:
            if len(demos) != episodes:
                raise HarnessError(f"need {episodes} demos, got {len(demos)}")
            ep = demos[i]
        else:
            world = reset(task, int(rng.integers(1 << 31)), cfg)
            session = RuntimeSession(world, cfg)
            writer = EpisodeWriter(
                Path(f"ref_{i:03d}.cpak"), task, world.seed, list(world.arms),
                {a: arm.chain.n for a, arm in world.arms.items()},
                record_rate=cfg.record.rate)
            run_demo(session, build_program(world, rng), writer=writer)
            ok, metrics = check_success(world)
            if not ok:
                raise HarnessError(f"reference demo {i} failed: {metrics}")
            ep = writer.snapshot(success=True)
        offset = _sinusoid_offset(rng, amplitude, frequency, ep.arm_ids)
        compliant.append(_replay_compliant(ep, offset, cfg))
        position.append(_replay_position(ep, offset, cfg))
        if progress is not None:
            progress(i + 1, episodes)
    return ForceComparison(
        compliant=RolloutReport.from_traces("compliant", task, compliant),
        position=RolloutReport.from_traces("position-tracking", task,
                                           position),
        amplitude=amplitude, frequency=frequency)


def ablation_table(*reports: RolloutReport) -> dict:
    """Side-by-side aggregate table, one column per report label.

    The usual pairing is an F/T policy against its w/o-F/T ablation, but
    any set of reports over the same task lines up.
    """
    tasks = {r.task for r in reports}
    if len(tasks) != 1:
        raise HarnessError(f"reports mix tasks: {sorted(tasks)}")
    labels = [r.label for r in reports]
    if len(set(labels)) != len(labels):
        raise HarnessError(f"duplicate report labels: {labels}")
    aggs = {r.label: r.aggregates() for r in reports}
    metrics = sorted(next(iter(aggs.values())))
    return {"task": tasks.pop(), "columns": labels,
            "rows": {m: [aggs[label][m] for label in labels]
                     for m in metrics}}


def save_json(payload: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
