"""Press the default arm into a stiff wall at each stiffness level and
command depth, and compare the settled contact force against the series
spring prediction F = K * k_wall * d / (K + k_wall).

Writes a CSV of (k, depth, expected, measured, error) rows.
"""
import argparse
import csv
import sys
import time

import numpy as np

from compbench.config import WorkbenchConfig
from compbench.controller import ControllerTarget, set_stiffness_mode
from compbench.geometry import Pose, StiffnessSpec, Wrench
from compbench.kinematics import forward_kinematics, planar_arm
from compbench.runtime import RuntimeSession
from compbench.world import Arm, Surface, World


def settled_force(k_trans: float, depth: float, cfg: WorkbenchConfig,
                  settle: float = 1.8, window: float = 0.2):
    chain = planar_arm()
    q0 = np.array([1.1, -2.2, 1.1])
    x0 = forward_kinematics(chain, q0)
    wall_x = x0.position[0] + 0.05
    world = World(
        arms={"arm": Arm(chain=chain, q=q0.copy())},
        cfg=cfg.sim,
        surfaces=[Surface("wall", point=[wall_x, 0, 0], normal=[-1, 0, 0])],
    )
    session = RuntimeSession(world, cfg)
    goal = Pose([wall_x + depth, x0.position[1], x0.position[2]],
                x0.orientation)
    k = StiffnessSpec(np.eye(3) * k_trans, np.eye(3) * 50.0)
    session.set_target("arm", ControllerTarget(goal, k, Wrench()))

    n_settle = int(settle / cfg.sim.physics_dt)
    n_window = int(window / cfg.sim.physics_dt)
    session.run_steps(n_settle)
    forces = np.empty(n_window)
    for i in range(n_window):
        session.run_steps(1)
        forces[i] = -world.arms["arm"].f_ext[0]
    return float(forces.mean()), float(np.ptp(forces))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="wall_statics.csv")
    ap.add_argument("--tol", type=float, default=0.05)
    args = ap.parse_args(argv)

    cfg = WorkbenchConfig()
    k_wall = cfg.sim.k_wall
    rows = []
    t0 = time.perf_counter()
    for mode in ("low", "mid", "high"):
        k_trans = float(set_stiffness_mode(mode).translational[0, 0])
        for depth in (0.002, 0.005, 0.010):
            expected = k_trans * k_wall * depth / (k_trans + k_wall)
            measured, ripple = settled_force(k_trans, depth, cfg)
            err = abs(measured - expected) / expected
            rows.append((k_trans, depth, expected, measured, err, ripple))
            print(f"K={k_trans:5.0f}  d={depth * 1000:4.1f} mm  "
                  f"expect={expected:7.2f} N  got={measured:7.2f} N  "
                  f"err={err * 100:6.3f}%  ripple={ripple:.3f} N")
    elapsed = time.perf_counter() - t0

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k_trans", "depth_m", "expected_n", "measured_n",
                    "rel_error", "ripple_n"])
        w.writerows(rows)

    worst = max(r[4] for r in rows)
    print(f"worst error {worst * 100:.3f}%  elapsed {elapsed:.1f}s  "
          f"-> {args.out}")
    return 0 if worst <= args.tol else 2


if __name__ == "__main__":
    sys.exit(main())
