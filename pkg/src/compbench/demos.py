"""Scripted demonstrators.

Each task gets a waypoint program that a driver plays back as compliance
targets at the recording rate — the same injection path a live teleoperator
uses, so recorded episodes look identical either way. Programs are built
against a freshly reset world; per-episode variety comes from waypoint
jitter (up to +-1 cm, scaled down or off near contact) and +-10% segment
timing drawn from the episode RNG.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .controller import ControllerTarget, set_stiffness_mode
from .geometry import (Pose, quat_conj, quat_mul, quat_to_matrix,
                       quat_to_rotvec, rotvec_to_quat)
from .runtime import RuntimeSession
from .tasks import BOARD_X, TASK_MODE_PAIRS, PLANE_Z
from .world import World

JITTER_POS = 0.01                       # m, full-scale waypoint jitter
JITTER_TIME = 0.10                      # fractional duration jitter

# goal may be a fixed pose or a callable (world, previous target pose) ->
# pose, resolved when the segment starts; callables let post-grasp segments
# aim relative to wherever the object actually sits in the hand
GoalFn = Callable[[World, Pose], Pose]


@dataclass(frozen=True)
class Segment:
    """One leg of a demonstration: glide to `goal` over `duration`."""

    goal: Pose | GoalFn
    duration: float
    mode: str                           # stiffness mode while traveling
    gripper: float | None = None        # None = hold the current command
    jitter: float = 1.0                 # fraction of JITTER_POS to apply


def _hold(world: World, prev: Pose) -> Pose:
    return prev


def _interp_pose(a: Pose, b: Pose, s: float) -> Pose:
    rv = quat_to_rotvec(quat_mul(b.orientation, quat_conj(a.orientation)))
    return Pose(a.position + s * (b.position - a.position),
                quat_mul(rotvec_to_quat(s * rv), a.orientation))


def _smooth(s: float) -> float:
    s = min(max(s, 0.0), 1.0)
    return s * s * (3.0 - 2.0 * s)


def wiping_segments(world: World) -> dict[str, list[Segment]]:
    ee0 = world.ee_pose("arm")
    q0 = ee0.orientation
    ys = world.marks.centers[:, 1]
    y0, y1 = float(ys.min() - 0.025), float(ys.max() + 0.025)
    # EE x with the sponge face flush on the board; a dedicated touch
    # segment ends there (smoothstep terminal velocity ~0) so contact
    # starts gently, then the press sinks 9 mm for a ~2 N low-mode wipe
    face = float(world.bodies["sponge"].corner_points()[:, 0].max())
    touch_x = BOARD_X - (face - ee0.position[0])
    press_x = touch_x + 0.009
    return {"arm": [
        Segment(Pose([touch_x - 0.005, y0, PLANE_Z], q0), 0.9, "mid",
                jitter=0.3),
        Segment(Pose([touch_x, y0, PLANE_Z], q0), 0.7, "low", jitter=0.1),
        Segment(Pose([press_x, y0, PLANE_Z], q0), 0.8, "low", jitter=0.1),
        Segment(Pose([press_x, y1, PLANE_Z], q0), 1.6, "low", jitter=0.1),
        Segment(Pose([press_x, y0, PLANE_Z], q0), 1.6, "low", jitter=0.1),
        Segment(Pose([0.39, 0.5 * (y0 + y1), PLANE_Z], q0), 0.7, "mid"),
    ]}


def _ee_for_held(arm_id: str, body: str, goal_fn) -> GoalFn:
    """EE goal that places the held body at goal_fn(world)'s pose."""

    def goal(world: World, prev: Pose) -> Pose:
        arm = world.arms[arm_id]
        if arm.grasped != body:         # grasp failed: park and let the
            return prev                 # success check reject the episode
        return goal_fn(world).compose(arm.grasp_rel.inverse())

    return goal


def pick_insert_segments(world: World) -> dict[str, list[Segment]]:
    ee0 = world.ee_pose("arm")
    q0 = ee0.orientation
    peg = world.bodies["peg"]
    fixture = next(iter(world.fixtures.values()))
    mouth = fixture.mouth_pose()        # fixture is static, safe at build
    out = quat_to_matrix(mouth.orientation)[:, 2]
    h = peg.size[1]

    def peg_goal(offset):
        return lambda world: Pose(mouth.position + offset * out,
                                  mouth.orientation)

    align = _ee_for_held("arm", "peg", peg_goal(h + 0.005))
    insert = _ee_for_held("arm", "peg", peg_goal(h - 0.0295))
    return {"arm": [
        Segment(Pose(peg.pose.position, q0), 1.2, "mid", gripper=1.0,
                jitter=0.3),
        Segment(_hold, 0.5, "mid", gripper=0.25, jitter=0.0),
        Segment(align, 1.4, "mid", gripper=0.25, jitter=0.1),
        Segment(align, 0.4, "low", gripper=0.25, jitter=0.0),
        Segment(insert, 1.2, "low", gripper=0.25, jitter=0.0),
        Segment(_hold, 0.4, "low", gripper=0.25, jitter=0.0),
        Segment(_hold, 0.3, "low", gripper=0.9, jitter=0.0),
        Segment(lambda w, prev: Pose(prev.position + 0.05 * out,
                                     prev.orientation),
                0.7, "mid", gripper=0.9, jitter=0.5),
    ]}


def bimanual_segments(world: World) -> dict[str, list[Segment]]:
    left0 = world.ee_pose("left")
    peg = world.bodies["peg"]
    h = peg.size[1] if peg.shape == "cylinder" else peg.size[2]

    def peg_goal(offset):
        # the bore rides in the left hand, so aim at its live mouth pose
        def goal(world: World) -> Pose:
            mouth = next(iter(world.fixtures.values())).mouth_pose()
            out = quat_to_matrix(mouth.orientation)[:, 2]
            return Pose(mouth.position + offset * out, mouth.orientation)

        return goal

    align = _ee_for_held("right", "peg", peg_goal(h + 0.005))
    insert = _ee_for_held("right", "peg", peg_goal(h - 0.0295))
    hold_pose = Pose(left0.position, left0.orientation)
    return {
        "left": [
            Segment(hold_pose, 1.0, "mid", jitter=0.0),
            Segment(hold_pose, 3.0, "high", jitter=0.0),
        ],
        "right": [
            Segment(align, 1.4, "mid", jitter=0.1),
            Segment(align, 0.5, "low", jitter=0.0),
            Segment(insert, 1.3, "low", jitter=0.0),
            Segment(_hold, 0.6, "low", jitter=0.0),
        ],
    }


_BUILDERS = {
    "wiping": wiping_segments,
    "pick_insert": pick_insert_segments,
    "peg_cylinder": bimanual_segments,
    "peg_cuboid": bimanual_segments,
}


@dataclass
class _Leg:
    """A Segment with its per-episode jitter resolved."""

    segment: Segment
    offset: np.ndarray
    duration: float


def build_program(world: World, rng) -> dict[str, list[_Leg]]:
    """Instantiate the task's program with this episode's jitter drawn."""
    segments = _BUILDERS[world.task](world)
    pairs = TASK_MODE_PAIRS[world.task]
    program = {}
    for arm_id in sorted(segments):     # fixed iteration order for the RNG
        legs = []
        for seg in segments[arm_id]:
            if seg.mode not in pairs[arm_id]:
                raise ValueError(f"segment mode {seg.mode!r} outside the "
                                 f"{world.task} pair for arm {arm_id!r}")
            offset = rng.uniform(-JITTER_POS, JITTER_POS, 3) * seg.jitter
            factor = 1.0 + rng.uniform(-JITTER_TIME, JITTER_TIME)
            legs.append(_Leg(seg, offset, seg.duration * factor))
        program[arm_id] = legs
    return program


class _PlayHead:
    """Walks one arm through its legs, emitting interpolated targets."""

    def __init__(self, legs: list[_Leg], start: Pose):
        self.legs = legs
        self.idx = -1
        self.goal = start.copy()
        self.t0 = None
        self.start = start.copy()
        self.done = not legs

    def target(self, world: World, t: float) -> ControllerTarget:
        if self.t0 is None:
            self.t0 = t
            self._advance(world)
        leg = self.legs[self.idx]
        while t - self.t0 >= leg.duration and self.idx < len(self.legs) - 1:
            self.t0 += leg.duration
            self._advance(world)
            leg = self.legs[self.idx]
        s = 1.0 if leg.duration <= 0 else (t - self.t0) / leg.duration
        if self.idx == len(self.legs) - 1 and s >= 1.0:
            self.done = True
        pose = _interp_pose(self.start, self.goal, _smooth(s))
        return ControllerTarget(pose=pose,
                                stiffness=set_stiffness_mode(leg.segment.mode),
                                gripper=leg.segment.gripper)

    def _advance(self, world: World):
        self.idx += 1
        self.start = self.goal
        seg = self.legs[self.idx].segment
        goal = seg.goal(world, self.start) if callable(seg.goal) else seg.goal
        self.goal = Pose(goal.position + self.legs[self.idx].offset,
                         goal.orientation)


def run_demo(session: RuntimeSession, program: dict[str, list[_Leg]],
             writer=None, render_fn=None) -> int:
    """Play a program to completion, recording each tick if given a writer.

    Returns the number of ticks executed. Targets keep streaming for arms
    whose programs have finished (a teleoperator holding still), so the
    staleness watchdog never trips mid-demo.
    """
    rate = session.cfg.record.rate
    dt = 1.0 / rate
    heads = {arm_id: _PlayHead(legs, session.world.ee_pose(arm_id))
             for arm_id, legs in program.items()}
    ticks = 0
    while not all(h.done for h in heads.values()):
        t = session.world.time
        targets = {}
        for arm_id, head in heads.items():
            targets[arm_id] = head.target(session.world, t)
            session.set_target(arm_id, targets[arm_id])
        obs = session.observe(render_fn)
        if writer is not None:
            writer.record_step(obs, targets, images=obs.images)
        session.run(dt)
        ticks += 1
    return ticks
