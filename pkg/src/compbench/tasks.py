"""Task scenes and success checks.

Four tasks on one desk: single-arm wiping and picking-and-insertion against
a vertical work board, and bimanual peg-in-hole (round and square bores)
where the left arm holds the bore fixture and the right arm holds the peg.
reset() is the only constructor — identical (task, seed) pairs give
identical worlds.
"""
from __future__ import annotations

import numpy as np

from .config import WorkbenchConfig
from .geometry import Pose, quat_mul, rotvec_to_quat
from .kinematics import bimanual_pair, planar_arm
from .world import Arm, Body, HoleFixture, MarkGrid, Surface, World

TASKS = ("wiping", "pick_insert", "peg_cylinder", "peg_cuboid")

# (primary, alternate) stiffness modes per arm; toggling flips between the
# two, and the primary is always mid
TASK_MODE_PAIRS = {
    "wiping": {"arm": ("mid", "low")},
    "pick_insert": {"arm": ("mid", "low")},
    "peg_cylinder": {"left": ("mid", "high"), "right": ("mid", "low")},
    "peg_cuboid": {"left": ("mid", "high"), "right": ("mid", "low")},
}

BOARD_X = 0.45                    # vertical work board, outward normal -x
PLANE_Z = 0.25                    # the planar arm's working height
PRESS_Q = np.array([1.1, -2.2, 1.1])

# start configurations for the bimanual arms (EEs at (0.35, +-0.08, 0.40),
# well away from joint limits and singularities)
LEFT_Q = np.array([-0.3118, 1.2636, -0.3513, -0.9687, -1.2135, 1.1349])
RIGHT_Q = np.array([0.6524, 1.1924, -0.4421, -1.5629, -1.4684, -1.1366])

# hole axis orientations: the bore runs along the fixture's local +z, so
# aim local z at -x (wall-mounted, mouth toward the robot) or -y (held by
# the left arm, mouth toward the right arm)
FACE_MINUS_X = rotvec_to_quat([0.0, -np.pi / 2, 0.0])
FACE_MINUS_Y = rotvec_to_quat([np.pi / 2, 0.0, 0.0])


def reset(task: str, seed: int, cfg: WorkbenchConfig | None = None) -> World:
    """Build the named task scene with its randomization applied."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose one of {TASKS}")
    cfg = cfg or WorkbenchConfig()
    rng = np.random.default_rng(seed)
    if task == "wiping":
        return _wiping(rng, cfg, seed)
    if task == "pick_insert":
        return _pick_insert(rng, cfg, seed)
    return _peg_bimanual(rng, cfg, seed, task)


def _board() -> Surface:
    return Surface("board", point=[BOARD_X, 0.0, 0.0], normal=[-1, 0, 0],
                   color=(168, 160, 148))


def _wiping(rng, cfg, seed) -> World:
    chain = planar_arm()
    y_c = rng.uniform(-0.05, 0.05)
    ys = y_c + np.arange(-2, 3) * 0.015
    zs = PLANE_Z + np.arange(-1, 2) * 0.006
    centers = np.array([[BOARD_X, y, z] for y in ys for z in zs])
    sponge = Body("sponge", pose=Pose([0.0, 0.0, 0.0]),
                  size=[0.02, 0.012, 0.010], width_fraction=0.6,
                  color=(220, 190, 70))
    world = World(
        arms={"arm": Arm(chain=chain, q=PRESS_Q.copy())},
        cfg=cfg.sim,
        surfaces=[_board()],
        bodies=[sponge],
        marks=MarkGrid(centers=centers, cell_size=0.012, surface="board"),
        task="wiping", seed=seed)
    ee = world.ee_pose("arm")
    sponge.pose = Pose(ee.position + [0.02, 0.0, 0.0], ee.orientation)
    world.attach("arm", "sponge")
    return world


def _pick_insert(rng, cfg, seed) -> World:
    chain = planar_arm()
    yaw = rng.uniform(-np.pi / 12, np.pi / 12)
    peg = Body("peg", pose=Pose(
        [0.33, 0.10, PLANE_Z],
        quat_mul(rotvec_to_quat([0, 0, yaw]), FACE_MINUS_X)),
        shape="cylinder", size=[0.005, 0.020], width_fraction=0.5,
        color=(70, 140, 220))
    # socket mounted proud of the board: the hole bottom stays 2 mm in
    # front of the wall half-space so an inserted peg never "hits" the wall
    fixture = HoleFixture(
        body=Body("bore", pose=Pose([BOARD_X - 0.002, -0.08, PLANE_Z],
                                    FACE_MINUS_X),
                  size=[0.03, 0.03, 0.03], graspable=False,
                  color=(120, 90, 60)),
        hole_shape="round", hole_r=0.007, hole_depth=0.03)
    return World(
        arms={"arm": Arm(chain=chain, q=PRESS_Q.copy())},
        cfg=cfg.sim,
        surfaces=[_board()],
        bodies=[peg],
        fixtures=[fixture],
        task="pick_insert", seed=seed)


def _peg_bimanual(rng, cfg, seed, task) -> World:
    left, right = bimanual_pair()
    yaw = rng.uniform(-np.pi / 12, np.pi / 12)
    bore_q = quat_mul(rotvec_to_quat([0, 0, yaw]), FACE_MINUS_Y)
    if task == "peg_cylinder":
        peg = Body("peg", pose=Pose([0, 0, 0]), shape="cylinder",
                   size=[0.005, 0.020], color=(70, 140, 220))
        hole_shape = "round"
    else:
        peg = Body("peg", pose=Pose([0, 0, 0]), shape="box",
                   size=[0.005, 0.005, 0.020], color=(70, 140, 220))
        hole_shape = "square"
    fixture = HoleFixture(
        body=Body("bore", pose=Pose([0, 0, 0]), size=[0.03, 0.03, 0.03],
                  color=(120, 90, 60)),
        hole_shape=hole_shape, hole_r=0.007, hole_depth=0.03)
    world = World(
        arms={"left": Arm(chain=left, q=LEFT_Q.copy()),
              "right": Arm(chain=right, q=RIGHT_Q.copy())},
        cfg=cfg.sim,
        bodies=[peg],
        fixtures=[fixture],
        task=task, seed=seed)
    # both objects start in hand: fixture under the left EE (bore mouth
    # toward the right arm, yawed by the randomization), peg under the right
    ee_l = world.ee_pose("left")
    fixture.body.pose = Pose(ee_l.position + [0.0, -0.03, 0.0], bore_q)
    world.attach("left", "bore")
    ee_r = world.ee_pose("right")
    peg.pose = Pose(ee_r.position + [0.0, 0.03, 0.0], FACE_MINUS_Y)
    world.attach("right", "peg")
    return world


def insertion_state(world: World) -> tuple[float, float]:
    """(depth into the bore, lateral offset) of the peg tip, both meters."""
    fixture = next(iter(world.fixtures.values()))
    peg = world.bodies["peg"]
    if peg.shape == "cylinder":
        tip_local = np.array([0.0, 0.0, -peg.size[1]])
    else:
        tip_local = np.array([0.0, 0.0, -peg.size[2]])
    p = fixture.mouth_pose().inverse().transform_point(
        peg.pose.transform_point(tip_local))
    if fixture.hole_shape == "round":
        lateral = float(np.hypot(p[0], p[1]))
    else:
        lateral = float(np.max(np.abs(p[:2])))
    return float(-p[2]), lateral


def clearance(world: World) -> float:
    fixture = next(iter(world.fixtures.values()))
    peg = world.bodies["peg"]
    if fixture.hole_shape == "round" and peg.shape == "cylinder":
        return fixture.hole_r - peg.size[0]
    return fixture.hole_r - float(np.max(peg.size[:2]))


def check_success(world: World) -> tuple[bool, dict]:
    """Task outcome plus contact-force metrics."""
    metrics = {"peak_force": world.peak_force, "mean_force": world.mean_force}
    if world.task == "wiping":
        frac = world.marks.fraction_wiped()
        metrics["fraction_wiped"] = frac
        return frac >= 0.90, metrics
    depth, lateral = insertion_state(world)
    fixture = next(iter(world.fixtures.values()))
    metrics["depth"] = depth
    metrics["lateral"] = lateral
    ok = depth >= 0.90 * fixture.hole_depth and lateral < clearance(world)
    return ok, metrics
