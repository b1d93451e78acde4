"""Live episode runtime shared by the subpolicies and the task env.

Owns the mutable world, the accumulated panoptic map, and all low-level
bookkeeping: step/collision counters, executed path length, velocity and
collision history for the robot state vector, and the found-target check
that runs after every sensor sweep.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from . import mapping as mp
from . import world as wd
from .kernels import disc_free
from .seeding import stream


class Episode:
    def __init__(self, spec: wd.WorldSpec, goal: wd.GoalSpec, episode_seed: int,
                 step_limit: int, sensor: mp.SensorConfig | None = None,
                 kin: wd.KinematicsConfig | None = None):
        self.spec = spec
        self.goal = goal
        self.sensor = sensor or mp.SensorConfig()
        self.state = wd.WorldState(spec, stream(episode_seed, "interact"), kin)
        self.pmap = mp.PanopticMap(spec.shape, spec.resolution)
        self.step_limit = step_limit
        self.low_steps = 0
        self.path_len = 0.0
        self.collision_hist: deque[int] = deque([0] * 10, maxlen=10)
        self.last_cmd = (0.0, 0.0)
        self.cur_vel = (0.0, 0.0)
        # first perception happens before any step is spent
        self.sense()
        mp.annotate(self.pmap, mp.TraceEvent(self.state.pose))

    # -- perception --------------------------------------------------------

    @property
    def exhausted(self) -> bool:
        return self.low_steps >= self.step_limit

    def sense(self) -> tuple[list[str], list[str]]:
        """Scan, integrate, and run the found check.

        Returns (newly discovered entity ids, newly found target ids).
        """
        frame = mp.raycast_frame(self.state, self.sensor)
        new_entries = mp.integrate_frame(self.pmap, frame)
        discovered = [e.entity_id for e in new_entries]
        found = self._found_check()
        return discovered, found

    def _found_check(self) -> list[str]:
        """A registered target within FOUND_RADIUS of the robot is found."""
        pose = self.state.pose
        res = self.spec.resolution
        found: list[str] = []
        for entry in self.pmap.registry.entries:
            if entry.category not in (mp.CAT_TARGET, mp.CAT_FOUND) or entry.found:
                continue
            tgt = self.spec.target_by_id(entry.entity_id)
            cx, cy = wd.cell_center(*tgt.cell, res)
            if math.hypot(cx - pose.x, cy - pose.y) <= wd.FOUND_RADIUS:
                self.state.mark_found(entry.entity_id)
                mp.annotate(self.pmap, mp.FoundEvent(entry.entity_id))
                found.append(entry.entity_id)
        return found

    # -- low-level motion ---------------------------------------------------

    def low_step(self, lin: float, ang: float
                 ) -> tuple[bool, list[str], list[str]]:
        """One kinematic step plus sensing. Returns (collided, discovered,
        found)."""
        old = self.state.pose
        result = self.state.step_base(lin, ang)
        moved = old.distance_to(result.pose)
        self.path_len += moved
        self.low_steps += 1
        self.collision_hist.append(1 if result.collided else 0)
        kin = self.state.kin
        signed = math.copysign(moved / kin.dt, lin) if lin else 0.0
        self.cur_vel = (signed, float(np.clip(ang, -kin.max_ang, kin.max_ang)))
        self.last_cmd = (float(np.clip(lin, -kin.max_lin, kin.max_lin)),
                         self.cur_vel[1])
        mp.annotate(self.pmap, mp.TraceEvent(result.pose))
        discovered, found = self.sense()
        return result.collided, discovered, found

    def teleport_step(self, pose: wd.Pose2D) -> tuple[list[str], list[str]]:
        """Jump straight to a waypoint (training-mode navigation). Costs one
        low-level step; the caller must have checked feasibility."""
        old = self.state.pose
        self.state.pose = pose
        self.path_len += old.distance_to(pose)
        self.low_steps += 1
        self.collision_hist.append(0)
        self.cur_vel = (0.0, 0.0)
        self.last_cmd = (0.0, 0.0)
        mp.annotate(self.pmap, mp.TraceEvent(pose))
        return self.sense()

    def noop_step(self) -> None:
        """Burn one step without moving (rejected actions, stuck fallbacks)."""
        self.low_steps += 1
        self.collision_hist.append(0)
        self.cur_vel = (0.0, 0.0)
        self.last_cmd = (0.0, 0.0)

    def pose_feasible(self, pose: wd.Pose2D) -> bool:
        return bool(disc_free(self.state.blocked, pose.x, pose.y,
                              self.state.kin.robot_radius,
                              self.spec.resolution))
