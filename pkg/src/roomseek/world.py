"""World model: static apartment spec, mutable episode state, kinematics,
magic interactions, and the multi-goal shortest-path oracle.

Conventions used package-wide:
  * grids are numpy arrays indexed [ix, iy], x right, y up, origin at the
    lower-left corner; cell (ix, iy) spans [ix*res, (ix+1)*res) in x
  * headings are radians in [-pi, pi), 0 along +x
  * all metric quantities are metres, seconds, radians
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels

RESOLUTION = 0.033

# sight codes: what a ray reports when it stops in a cell
SIGHT_PASS = 0
SIGHT_WALL = 1
SIGHT_DOOR = 2
SIGHT_CONTAINER = 3
SIGHT_TARGET = 4
SIGHT_FOUND = 5

CATEGORIES = ("ball", "book", "bottle", "cup", "shoe", "plant")
N_CATEGORIES = len(CATEGORIES)
# these categories only ever spawn inside a container
IN_CONTAINER_ONLY = ("bottle", "cup", "shoe")

INTERACT_FAIL_PROB = 0.15
FOUND_RADIUS = 1.3


class WorldGenError(RuntimeError):
    """Raised when generation cannot satisfy its constraints."""


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return float((a + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def cell(self, res: float = RESOLUTION) -> tuple[int, int]:
        return int(math.floor(self.x / res)), int(math.floor(self.y / res))

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def cell_center(ix: int, iy: int, res: float = RESOLUTION) -> tuple[float, float]:
    return (ix + 0.5) * res, (iy + 0.5) * res


@dataclass(frozen=True)
class Door:
    """A door panel filling a carved doorway (or a locked exterior slab).

    cells: the grid cells the closed panel occupies.
    fronts: approach poses on either side (one for exterior doors), facing
    the panel.
    """
    id: str
    cells: tuple[tuple[int, int], ...]
    fronts: tuple[Pose2D, ...]
    locked: bool = False
    exterior: bool = False


@dataclass(frozen=True)
class Container:
    """A closed furniture piece that may hold targets.

    front: approach pose facing the opening. contents lists target ids and
    is filled in when a goal is sampled.
    """
    id: str
    kind: str  # "cabinet" or "drawer"
    cells: tuple[tuple[int, int], ...]
    front: Pose2D
    contents: tuple[str, ...] = ()


@dataclass(frozen=True)
class TargetObject:
    id: str
    category: str
    cell: tuple[int, int]
    inside: str | None = None  # container id, or None for free-standing


@dataclass(frozen=True)
class GoalSpec:
    """Remaining-goal vector over the fixed category list.

    bits[i] == 1 while at least one target of category i is still missing.
    """
    bits: tuple[int, ...]

    @property
    def k(self) -> int:
        return sum(self.bits)

    def categories(self) -> tuple[str, ...]:
        return tuple(c for c, b in zip(CATEGORIES, self.bits) if b)


@dataclass(frozen=True)
class WorldSpec:
    """Immutable apartment description. Targets and container contents are
    empty until a goal has been sampled for an episode."""
    seed: int
    resolution: float
    walls: np.ndarray  # bool (W, H), True = structural wall
    rooms: tuple[tuple[int, int, int, int], ...]  # (x0, y0, x1, y1) cell rects
    doors: tuple[Door, ...]
    containers: tuple[Container, ...]
    targets: tuple[TargetObject, ...]
    spawn: Pose2D

    @property
    def shape(self) -> tuple[int, int]:
        return self.walls.shape

    @property
    def extent(self) -> tuple[float, float]:
        w, h = self.walls.shape
        return w * self.resolution, h * self.resolution

    def door_by_id(self, did: str) -> Door:
        for d in self.doors:
            if d.id == did:
                return d
        raise KeyError(did)

    def container_by_id(self, cid: str) -> Container:
        for c in self.containers:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def target_by_id(self, tid: str) -> TargetObject:
        for t in self.targets:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def with_goal(self, targets: tuple[TargetObject, ...]) -> "WorldSpec":
        """Attach sampled targets, mirroring them into container contents."""
        by_container: dict[str, list[str]] = {c.id: [] for c in self.containers}
        for t in targets:
            if t.inside is not None:
                by_container[t.inside].append(t.id)
        containers = tuple(
            replace(c, contents=tuple(by_container[c.id])) for c in self.containers
        )
        return replace(self, targets=targets, containers=containers)


@dataclass(frozen=True)
class KinematicsConfig:
    robot_radius: float = 0.18
    max_lin: float = 0.5
    max_ang: float = 1.5
    dt: float = 0.1


@dataclass
class InteractionResult:
    success: bool
    target_id: str
    kind: str  # "door" or "container"


@dataclass
class StepResult:
    pose: Pose2D
    collided: bool


class WorldState:
    """Mutable episode-side state layered over a WorldSpec.

    Owns the derived traversability and sight grids and keeps them in sync
    with door/container/target state changes.
    """

    def __init__(self, spec: WorldSpec, interact_rng: np.random.Generator,
                 kin: KinematicsConfig | None = None):
        self.spec = spec
        self.kin = kin or KinematicsConfig()
        self.rng_interact = interact_rng
        self.pose = spec.spawn
        self.door_open: dict[str, bool] = {d.id: False for d in spec.doors}
        self.container_open: dict[str, bool] = {c.id: False for c in spec.containers}
        self.found: dict[str, bool] = {t.id: False for t in spec.targets}
        w, h = spec.shape
        self.blocked = np.zeros((w, h), dtype=bool)
        self.sight = np.zeros((w, h), dtype=np.uint8)
        self.inst = np.full((w, h), -1, dtype=np.int32)
        self.inst_ids: list[str] = []  # index in this list = value in inst grid
        self._inst_index: dict[str, int] = {}
        self._rebuild_grids()

    # -- grid maintenance -------------------------------------------------

    def _inst_code(self, entity_id: str) -> int:
        if entity_id not in self._inst_index:
            self._inst_index[entity_id] = len(self.inst_ids)
            self.inst_ids.append(entity_id)
        return self._inst_index[entity_id]

    def _rebuild_grids(self) -> None:
        spec = self.spec
        self.blocked[:] = spec.walls
        self.sight[:] = np.where(spec.walls, SIGHT_WALL, SIGHT_PASS).astype(np.uint8)
        self.inst[:] = -1
        for door in spec.doors:
            code = self._inst_code(door.id)
            if not self.door_open[door.id]:
                for ix, iy in door.cells:
                    self.blocked[ix, iy] = True
                    self.sight[ix, iy] = SIGHT_DOOR
                    self.inst[ix, iy] = code
            else:
                for ix, iy in door.cells:
                    # open panels read as floor again, id kept for bookkeeping
                    if not spec.walls[ix, iy]:
                        self.blocked[ix, iy] = False
                        self.sight[ix, iy] = SIGHT_PASS
                    self.inst[ix, iy] = code
        for cont in spec.containers:
            code = self._inst_code(cont.id)
            for ix, iy in cont.cells:
                self.blocked[ix, iy] = True
                self.inst[ix, iy] = code
                self.sight[ix, iy] = SIGHT_CONTAINER
            if self.container_open[cont.id]:
                # contents become visible on their own cells once open
                for tid in cont.contents:
                    ix, iy = spec.target_by_id(tid).cell
                    self.sight[ix, iy] = SIGHT_FOUND if self.found[tid] else SIGHT_TARGET
                    self.inst[ix, iy] = self._inst_code(tid)
        for tgt in spec.targets:
            if tgt.inside is not None:
                continue
            ix, iy = tgt.cell
            self.blocked[ix, iy] = True
            self.sight[ix, iy] = SIGHT_FOUND if self.found[tgt.id] else SIGHT_TARGET
            self.inst[ix, iy] = self._inst_code(tgt.id)

    def entity_id_for_inst(self, code: int) -> str:
        return self.inst_ids[code]

    # -- queries -----------------------------------------------------------

    def is_open(self, entity_id: str) -> bool:
        if entity_id in self.door_open:
            return self.door_open[entity_id]
        if entity_id in self.container_open:
            return self.container_open[entity_id]
        raise KeyError(entity_id)

    def unfound_targets(self) -> list[TargetObject]:
        return [t for t in self.spec.targets if not self.found[t.id]]

    # -- mutation ----------------------------------------------------------

    def mark_found(self, target_id: str) -> None:
        if self.found[target_id]:
            return
        self.found[target_id] = True
        tgt = self.spec.target_by_id(target_id)
        ix, iy = tgt.cell
        if self.sight[ix, iy] == SIGHT_TARGET:
            self.sight[ix, iy] = SIGHT_FOUND

    def interact(self, entity_id: str) -> InteractionResult:
        """Magic open action on a closed door or container.

        Draws one Bernoulli trial from the interaction stream; succeeds with
        probability 1 - INTERACT_FAIL_PROB. Preconditions (closed, not
        locked, known id) are the caller's job; violations raise ValueError.
        """
        if entity_id in self.door_open:
            door = self.spec.door_by_id(entity_id)
            if door.locked:
                raise ValueError(f"door {entity_id} is locked")
            if self.door_open[entity_id]:
                raise ValueError(f"door {entity_id} is already open")
            ok = self.rng_interact.random() >= INTERACT_FAIL_PROB
            if ok:
                self.door_open[entity_id] = True
                self._rebuild_grids()
            return InteractionResult(ok, entity_id, "door")
        if entity_id in self.container_open:
            if self.container_open[entity_id]:
                raise ValueError(f"container {entity_id} is already open")
            ok = self.rng_interact.random() >= INTERACT_FAIL_PROB
            if ok:
                self.container_open[entity_id] = True
                self._rebuild_grids()
            return InteractionResult(ok, entity_id, "container")
        raise ValueError(f"unknown interactable {entity_id}")

    def step_base(self, lin: float, ang: float) -> StepResult:
        """One differential-drive Euler step with swept-disc collision.

        Translation follows the heading held at the start of the step; the
        heading then integrates the angular command (rotation in place is
        always feasible for a disc robot). On contact the position clamps at
        the last collision-free point along the segment.
        """
        kin = self.kin
        lin = float(np.clip(lin, -kin.max_lin, kin.max_lin))
        ang = float(np.clip(ang, -kin.max_ang, kin.max_ang))
        x0, y0 = self.pose.x, self.pose.y
        tx = x0 + lin * kin.dt * math.cos(self.pose.heading)
        ty = y0 + lin * kin.dt * math.sin(self.pose.heading)
        nx, ny, collided = kernels.sweep_move(
            self.blocked, x0, y0, tx, ty, kin.robot_radius, self.spec.resolution)
        heading = wrap_angle(self.pose.heading + ang * kin.dt)
        self.pose = Pose2D(float(nx), float(ny), heading)
        return StepResult(self.pose, bool(collided))


def oracle_grid(spec: WorldSpec, goal_cells: set[tuple[int, int]]) -> np.ndarray:
    """Traversability for the shortest-path oracle: walls and locked doors
    block, unlocked doors count as open, containers and targets block except
    on the goal cells themselves."""
    blocked = spec.walls.copy()
    for door in spec.doors:
        for ix, iy in door.cells:
            if door.locked:
                blocked[ix, iy] = True
            elif not spec.walls[ix, iy]:
                blocked[ix, iy] = False
    for cont in spec.containers:
        for cell in cont.cells:
            if cell not in goal_cells:
                blocked[cell] = True
    for tgt in spec.targets:
        if tgt.inside is None and tgt.cell not in goal_cells:
            blocked[tgt.cell] = True
    for cell in goal_cells:
        blocked[cell] = False
    return blocked


def oracle_shortest_path(spec: WorldSpec, start: Pose2D,
                         goal_cells: list[tuple[int, int]]) -> float:
    """Length in metres of the shortest tour visiting every goal cell.

    Distances come from 8-connected Dijkstra fields on the oracle grid; the
    visiting order is optimised exactly with Held-Karp. Door opening adds no
    length. Returns +inf when some goal is unreachable.
    """
    if not goal_cells:
        return 0.0
    res = spec.resolution
    blocked = oracle_grid(spec, set(goal_cells))
    sx, sy = start.cell(res)
    nodes = [(sx, sy)] + list(goal_cells)
    k = len(goal_cells)
    fields = [kernels.dijkstra_field(blocked, ix, iy) for ix, iy in nodes]
    dist = np.empty((k + 1, k + 1), dtype=np.float64)
    for i in range(k + 1):
        for j in range(k + 1):
            dist[i, j] = fields[i][nodes[j]] * res
    if not np.all(np.isfinite(dist[0, 1:])):
        return math.inf
    if k == 1:
        return float(dist[0, 1])
    full = (1 << k) - 1
    dp = np.full((1 << k, k), math.inf)
    for j in range(k):
        dp[1 << j, j] = dist[0, j + 1]
    for mask in range(1, full + 1):
        for j in range(k):
            if not mask & (1 << j) or not math.isfinite(dp[mask, j]):
                continue
            base = dp[mask, j]
            for m in range(k):
                if mask & (1 << m):
                    continue
                cand = base + dist[j + 1, m + 1]
                nm = mask | (1 << m)
                if cand < dp[nm, m]:
                    dp[nm, m] = cand
    return float(dp[full].min())


def brute_force_tour(dist: np.ndarray) -> float:
    """Reference tour length by enumerating all goal orders. dist is the
    (1+k, 1+k) matrix with the start at index 0. Test oracle for Held-Karp.
    """
    k = dist.shape[0] - 1
    best = math.inf
    for perm in itertools.permutations(range(1, k + 1)):
        total = dist[0, perm[0]]
        for a, b in zip(perm, perm[1:]):
            total += dist[a, b]
        best = min(best, total)
    return best
