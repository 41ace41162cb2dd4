"""Glue between the simulator and the compliance controllers: one stepping
context that owns the World, ingests targets at the controller period, and
integrates the virtual models at the physics rate."""
from __future__ import annotations

import numpy as np

from .config import WorkbenchConfig
from .controller import CartesianComplianceController, ControllerTarget
from .world import World


class RuntimeSession:
    """Steps a World under per-arm compliance control.

    Targets arrive through set_target (latest-wins, from teleop handlers,
    policies, or scripts); run() advances sim time. All timing is sim time,
    so identical target streams reproduce identical trajectories.
    """

    def __init__(self, world: World, cfg: WorkbenchConfig):
        self.world = world
        self.cfg = cfg
        self.controllers = {
            arm_id: CartesianComplianceController(
                arm.chain, cfg.controller, arm.q, now=world.time,
                gripper0=arm.gripper_cmd)
            for arm_id, arm in world.arms.items()
        }
        self._steps_per_ingest = max(
            1, round(cfg.controller.period / cfg.sim.physics_dt))
        self._step_index = 0

    def set_target(self, arm_id: str, target: ControllerTarget):
        self.controllers[arm_id].update_target(target, self.world.time)

    def run(self, duration: float):
        self.run_steps(int(round(duration / self.cfg.sim.physics_dt)))

    def run_steps(self, n: int):
        dt = self.cfg.sim.physics_dt
        for _ in range(n):
            if self._step_index % self._steps_per_ingest == 0:
                for ctrl in self.controllers.values():
                    ctrl.ingest(self.world.time)
            commands = {}
            for arm_id, ctrl in self.controllers.items():
                q_cmd = ctrl.step(self.world.arms[arm_id].f_ext, dt)
                commands[arm_id] = (q_cmd, ctrl.gripper_cmd)
            self.world.step(commands, dt)
            self._step_index += 1

    def observe(self, render_fn=None):
        stiffness = {arm_id: ctrl.active_k.copy()
                     for arm_id, ctrl in self.controllers.items()}
        images = render_fn(self.world) if render_fn is not None else None
        return self.world.observe(stiffness=stiffness, images=images)

    def arm_ids(self) -> list[str]:
        return list(self.world.arms)
