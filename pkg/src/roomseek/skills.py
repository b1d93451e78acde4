"""Low-level subpolicies the high-level agent chooses between: short
map-gradient exploration, frontier navigation, and driving to a registered
instance (with the magic open on arrival).

Every subpolicy consumes at least one low-level step, respects the episode
step budget, and reports an itemized reward breakdown built in one fixed
order, so a replay can reproduce the float sum exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from . import mapping as mp
from . import world as wd
from .episode import Episode
from .kernels import astar, bfs_field, dijkstra_field, sweep_move

REWARD_FOUND = 10.0
REWARD_DOOR_OPEN = 3.0
PENALTY_COLLISION = -0.1
COST_EXPLORE = -0.05
COST_WAYPOINT = -0.05
PENALTY_INVALID = -2.5

WAYPOINT_SPACING = 0.5
INFLATION_RADIUS = 0.2
FRONTIER_TOL = 0.3
FRONT_TOL = 0.12
TARGET_TOL = 0.9
ARRIVE_DIST = 0.15


def build_reward_items(found: int = 0, doors_opened: int = 0,
                       collisions: int = 0, explore: bool = False,
                       waypoints: int = 0, invalid: bool = False
                       ) -> list[tuple[str, float]]:
    """Canonical reward itemization; summation order is part of the episode
    contract (the replay accountant rebuilds the exact same list)."""
    items: list[tuple[str, float]] = []
    for _ in range(found):
        items.append(("found", REWARD_FOUND))
    for _ in range(doors_opened):
        items.append(("door_open", REWARD_DOOR_OPEN))
    for _ in range(collisions):
        items.append(("collision", PENALTY_COLLISION))
    if explore:
        items.append(("explore_cost", COST_EXPLORE))
    if waypoints:
        items.append(("waypoint_cost", COST_WAYPOINT * waypoints))
    if invalid:
        items.append(("invalid", PENALTY_INVALID))
    return items


def sum_reward_items(items: list[tuple[str, float]]) -> float:
    total = 0.0
    for _, v in items:
        total += v
    return total


@dataclass
class SubpolicyOutcome:
    name: str
    steps: int
    success: bool
    collisions: int = 0
    waypoints: int = 0
    explore: bool = False
    invalid: bool = False
    found_ids: list[str] = field(default_factory=list)
    opened_id: str | None = None
    doors_opened: int = 0
    interaction: str | None = None  # opened | failed | rejected_locked | None
    discovered: list[str] = field(default_factory=list)
    reward_items: list[tuple[str, float]] = field(default_factory=list)

    def finalize(self) -> "SubpolicyOutcome":
        self.reward_items = build_reward_items(
            found=len(self.found_ids), doors_opened=self.doors_opened,
            collisions=self.collisions, explore=self.explore,
            waypoints=self.waypoints, invalid=self.invalid)
        return self

    @property
    def reward(self) -> float:
        return sum_reward_items(self.reward_items)


@dataclass(frozen=True)
class FrontierPoint:
    cell: tuple[int, int]
    size: int
    distance: float        # geodesic metres from the agent, inf if cut off
    in_ego_range: bool


@dataclass(frozen=True)
class WaypointPath:
    waypoints: tuple[wd.Pose2D, ...]
    length: float          # planner path length in metres
    goal_cell: tuple[int, int]


# -- steering -----------------------------------------------------------

def _steer(pose: wd.Pose2D, tx: float, ty: float,
           kin: wd.KinematicsConfig) -> tuple[float, float]:
    """Turn-then-drive controller toward a metric point."""
    bearing = math.atan2(ty - pose.y, tx - pose.x)
    dh = wd.wrap_angle(bearing - pose.heading)
    ang = float(np.clip(dh / kin.dt, -kin.max_ang, kin.max_ang))
    lin = kin.max_lin * math.cos(dh) if abs(dh) < math.pi / 2 else 0.0
    return lin, ang


# -- local exploration ----------------------------------------------------

def local_explore(ep: Episode, horizon: int) -> SubpolicyOutcome:
    """Greedy information-chasing walk for `horizon` steps.

    Each step descends the breadth-first distance field toward the nearest
    unfound registered target, or the nearest reachable unknown cell when no
    target is known. With nothing to chase it spins in place to sweep the
    sensor. Costs one exploration fee regardless of length.
    """
    out = SubpolicyOutcome("local_explore", steps=0, success=False,
                           explore=True)
    res = ep.spec.resolution
    kin = ep.state.kin
    for _ in range(horizon):
        if out.steps > 0 and ep.exhausted:
            break
        occ = mp.to_occupancy(ep.pmap, "blocked")
        free = occ == 0
        targets = [e for e in ep.pmap.registry.entries
                   if e.category in (mp.CAT_TARGET, mp.CAT_FOUND)
                   and not e.found]
        if targets:
            seeds = np.array([e.cell for e in targets], dtype=np.int64)
        else:
            unknown = occ == 2
            edge = np.zeros_like(unknown)
            edge[1:, :] |= unknown[1:, :] & free[:-1, :]
            edge[:-1, :] |= unknown[:-1, :] & free[1:, :]
            edge[:, 1:] |= unknown[:, 1:] & free[:, :-1]
            edge[:, :-1] |= unknown[:, :-1] & free[:, 1:]
            seeds = np.argwhere(edge).astype(np.int64)
        lin, ang = 0.0, kin.max_ang * 0.8
        if seeds.shape[0]:
            dist = bfs_field(free, seeds[:, 0].copy(), seeds[:, 1].copy())
            ax, ay = ep.state.pose.cell(res)
            best = None
            w, h = dist.shape
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1),
                           (1, 1), (1, -1), (-1, 1), (-1, -1)):
                nx, ny = ax + dx, ay + dy
                if 0 <= nx < w and 0 <= ny < h and dist[nx, ny] >= 0:
                    key = (int(dist[nx, ny]), nx * h + ny)
                    if best is None or key < best[0]:
                        best = (key, nx, ny)
            if best is not None:
                out.success = True
                tx, ty = wd.cell_center(best[1], best[2], res)
                lin, ang = _steer(ep.state.pose, tx, ty, kin)
        collided, disc, found = ep.low_step(lin, ang)
        out.steps += 1
        out.collisions += int(collided)
        out.discovered.extend(disc)
        out.found_ids.extend(found)
    if out.steps == 0:
        ep.noop_step()
        out.steps = 1
    return out.finalize()


# -- frontier detection ----------------------------------------------------

def detect_frontiers(occ: np.ndarray, agent_cell: tuple[int, int],
                     res: float) -> tuple[list[FrontierPoint], np.ndarray]:
    """Cluster the boundary between known-free and unknown space.

    Frontier cells are free cells 4-adjacent to unknown; a 5x5 box count
    must reach 3 to drop speckles. Clusters are 8-connected components; the
    representative is the member nearest the centroid, while the cluster
    distance is taken at its geodesically nearest member (a cluster can
    straddle free pockets, so the representative alone may read cut off).
    Also returns the geodesic distance field from the agent over known-free
    space (in cells) for reuse by the caller.
    """
    free = occ == 0
    unknown = occ == 2
    frontier = np.zeros_like(free)
    frontier[:-1, :] |= free[:-1, :] & unknown[1:, :]
    frontier[1:, :] |= free[1:, :] & unknown[:-1, :]
    frontier[:, :-1] |= free[:, :-1] & unknown[:, 1:]
    frontier[:, 1:] |= free[:, 1:] & unknown[:, :-1]
    count = ndi.convolve(frontier.astype(np.int16), np.ones((5, 5), np.int16),
                         mode="constant", cval=0)
    keep = frontier & (count >= 3)
    field = dijkstra_field(~free, agent_cell[0], agent_cell[1])
    if not keep.any():
        return [], field
    labels, n_lab = ndi.label(keep, structure=np.ones((3, 3), np.int8))
    points: list[FrontierPoint] = []
    ax, ay = agent_cell
    h = occ.shape[1]
    for lb in range(1, n_lab + 1):
        cells = np.argwhere(labels == lb)
        cx, cy = cells.mean(axis=0)
        d2 = (cells[:, 0] - cx) ** 2 + (cells[:, 1] - cy) ** 2
        flat = cells[:, 0] * h + cells[:, 1]
        order = np.lexsort((flat, d2))
        rep = (int(cells[order[0], 0]), int(cells[order[0], 1]))
        geo = float(field[cells[:, 0], cells[:, 1]].min()) * res
        euclid = math.hypot(rep[0] - ax, rep[1] - ay) * res
        points.append(FrontierPoint(rep, int(cells.shape[0]), geo,
                                    euclid <= mp.EGO_RANGE))
    points.sort(key=lambda p: p.cell[0] * h + p.cell[1])
    return points, field


def select_frontier(points: list[FrontierPoint], strategy: str = "nearest",
                    rng: np.random.Generator | None = None
                    ) -> FrontierPoint | None:
    """Pick the frontier to commit to; None when nothing is reachable."""
    reachable = [p for p in points if math.isfinite(p.distance)]
    if not reachable:
        return None
    if strategy == "nearest":
        return min(reachable, key=lambda p: (p.distance, p.cell))
    if strategy == "seeded_random":
        if rng is None:
            raise ValueError("seeded_random strategy needs an rng")
        return reachable[int(rng.integers(0, len(reachable)))]
    raise ValueError(strategy)


# -- path planning ----------------------------------------------------------

def plan_blocked(occ: np.ndarray, res: float,
                 inflation: float = INFLATION_RADIUS) -> np.ndarray:
    """Planning obstacles: occupied cells inflated by the safety radius,
    unknown cells blocked as-is (keeps frontier reps reachable)."""
    occupied = occ == 1
    clearance = ndi.distance_transform_edt(~occupied) * res
    return (clearance <= inflation) | (occ == 2)


def plan_path(occ: np.ndarray, start: wd.Pose2D, goal_cell: tuple[int, int],
              res: float, tol: float = 0.0,
              final_heading: float | None = None,
              face_goal: bool = False) -> WaypointPath | None:
    """A* on the inflated occupancy, downsampled to <=0.5 m waypoints.

    The start cell is relaxed to the nearest plannable cell within 0.5 m
    when the robot sits inside the inflation band. Returns None when no
    path reaches within `tol` metres of the goal. With `face_goal` the
    last waypoint turns toward the goal cell; a path that ends short of
    a narrow-FOV objective must still aim the sensor at it.
    """
    blocked = plan_blocked(occ, res)
    sx, sy = start.cell(res)
    w, h = occ.shape
    if not (0 <= sx < w and 0 <= sy < h):
        return None
    if blocked[sx, sy]:
        reach = int(0.5 / res)
        best = None
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                nx, ny = sx + dx, sy + dy
                if 0 <= nx < w and 0 <= ny < h and not blocked[nx, ny]:
                    key = (dx * dx + dy * dy, nx * h + ny)
                    if best is None or key < best[0]:
                        best = (key, nx, ny)
        if best is None:
            return None
        sx, sy = best[1], best[2]
    tol_cells = tol / res
    ok, ex, ey, cost, parent = astar(blocked, sx, sy, goal_cell[0],
                                     goal_cell[1], tol_cells)
    if not ok:
        return None
    cells = []
    idx = ex * h + ey
    while idx >= 0:
        cells.append((idx // h, idx % h))
        idx = parent[idx] if parent[idx] != -1 else -1
        if idx == -1:
            break
    cells.reverse()
    pts = [wd.cell_center(ix, iy, res) for ix, iy in cells]
    way: list[tuple[float, float]] = []
    acc = 0.0
    for i in range(1, len(pts)):
        step = math.hypot(pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1])
        if acc + step > WAYPOINT_SPACING + 1e-9:
            way.append(pts[i - 1])
            acc = step
        else:
            acc += step
    if not pts:
        return None
    if not way or way[-1] != pts[-1]:
        way.append(pts[-1])
    gx, gy = wd.cell_center(goal_cell[0], goal_cell[1], res)
    poses: list[wd.Pose2D] = []
    for i, (x, y) in enumerate(way):
        if i + 1 < len(way):
            heading = math.atan2(way[i + 1][1] - y, way[i + 1][0] - x)
        elif final_heading is not None:
            heading = final_heading
        elif face_goal and math.hypot(gx - x, gy - y) > 1e-9:
            heading = math.atan2(gy - y, gx - x)
        elif len(way) > 1:
            heading = math.atan2(y - way[i - 1][1], x - way[i - 1][0])
        else:
            heading = start.heading
        poses.append(wd.Pose2D(x, y, heading))
    return WaypointPath(tuple(poses), float(cost) * res, tuple(goal_cell))


# -- waypoint following -----------------------------------------------------

def navigate(ep: Episode, path: WaypointPath, mode: str,
             out: SubpolicyOutcome) -> bool:
    """Drive the waypoint chain; fills steps/collisions/waypoints/found on
    `out`. Returns True when the final waypoint was reached."""
    if mode == "teleport":
        return _navigate_teleport(ep, path, out)
    if mode == "kinematic":
        return _navigate_kinematic(ep, path, out)
    raise ValueError(mode)


def _navigate_teleport(ep: Episode, path: WaypointPath,
                       out: SubpolicyOutcome) -> bool:
    radius = ep.state.kin.robot_radius
    res = ep.spec.resolution
    for wp in path.waypoints:
        if out.steps > 0 and ep.exhausted:
            return False
        # the whole segment must be clear, not just the landing pose;
        # a bare endpoint check lets a jump tunnel through a thin wall
        pose = ep.state.pose
        _, _, collided = sweep_move(ep.state.blocked, pose.x, pose.y,
                                    wp.x, wp.y, radius, res)
        if collided:
            return False
        disc, found = ep.teleport_step(wp)
        out.steps += 1
        out.waypoints += 1
        out.discovered.extend(disc)
        out.found_ids.extend(found)
    return True


def _navigate_kinematic(ep: Episode, path: WaypointPath,
                        out: SubpolicyOutcome) -> bool:
    kin = ep.state.kin
    for wp in path.waypoints:
        best = math.inf
        stall = 0
        while True:
            d = math.hypot(wp.x - ep.state.pose.x, wp.y - ep.state.pose.y)
            if d <= ARRIVE_DIST:
                break
            if out.steps > 0 and ep.exhausted:
                return False
            lin, ang = _steer(ep.state.pose, wp.x, wp.y, kin)
            collided, disc, found = ep.low_step(lin, ang)
            out.steps += 1
            out.collisions += int(collided)
            out.discovered.extend(disc)
            out.found_ids.extend(found)
            if d < best - 0.02:
                best = d
                stall = 0
            else:
                stall += 1
                if stall > 30:
                    return False
        out.waypoints += 1
    # settle on the approach heading so the sensor faces the goal
    final = path.waypoints[-1]
    while abs(wd.wrap_angle(final.heading - ep.state.pose.heading)) > 0.15:
        if ep.exhausted:
            return False
        dh = wd.wrap_angle(final.heading - ep.state.pose.heading)
        ang = float(np.clip(dh / kin.dt, -kin.max_ang, kin.max_ang))
        collided, disc, found = ep.low_step(0.0, ang)
        out.steps += 1
        out.collisions += int(collided)
        out.discovered.extend(disc)
        out.found_ids.extend(found)
    return True


# -- composite subpolicies ----------------------------------------------------

def commit_frontier(ep: Episode, points: list[FrontierPoint],
                    strategy: str = "nearest",
                    rng: np.random.Generator | None = None,
                    occ: np.ndarray | None = None
                    ) -> tuple[FrontierPoint | None, WaypointPath | None]:
    """Choose the frontier to chase and plan a route to it, skipping to
    the next candidate when planning fails (the inflated known-free space
    can be cut even where the raw geodesic is finite). Returns the
    committed point with its path, or (None, None)."""
    reachable = [p for p in points if math.isfinite(p.distance)]
    if strategy == "nearest":
        reachable.sort(key=lambda p: (p.distance, p.cell))
    elif strategy == "seeded_random":
        if rng is None:
            raise ValueError("seeded_random strategy needs an rng")
        if reachable:
            idx = rng.permutation(len(reachable))
            reachable = [reachable[int(i)] for i in idx]
    else:
        raise ValueError(strategy)
    if occ is None:
        occ = mp.to_occupancy(ep.pmap, "blocked")
    for point in reachable:
        path = plan_path(occ, ep.state.pose, point.cell, ep.spec.resolution,
                         tol=FRONTIER_TOL, face_goal=True)
        if path is not None:
            return point, path
    return None, None


def goto_frontier_path(ep: Episode, path: WaypointPath | None, mode: str
                       ) -> SubpolicyOutcome:
    """Drive an already-planned frontier route."""
    out = SubpolicyOutcome("goto_frontier", steps=0, success=False)
    if path is not None:
        out.success = navigate(ep, path, mode, out)
    if out.steps == 0:
        ep.noop_step()
        out.steps = 1
    return out.finalize()


def goto_frontier(ep: Episode, point: FrontierPoint, mode: str
                  ) -> SubpolicyOutcome:
    """Plan to the committed frontier representative and drive there."""
    occ = mp.to_occupancy(ep.pmap, "blocked")
    path = plan_path(occ, ep.state.pose, point.cell, ep.spec.resolution,
                     tol=FRONTIER_TOL, face_goal=True)
    return goto_frontier_path(ep, path, mode)


def navigate_to_instance(ep: Episode, entry: mp.RegistryEntry, mode: str
                         ) -> SubpolicyOutcome:
    """Drive to a registered instance; on arrival at a door or container,
    try the magic open (15% of attempts fail; locked doors always reject).
    Opening triggers an immediate re-scan so revealed contents register."""
    out = SubpolicyOutcome(f"goto_instance[{entry.entity_id}]", steps=0,
                           success=False)
    occ = mp.to_occupancy(ep.pmap, "blocked")
    res = ep.spec.resolution
    pose = ep.state.pose

    if entry.category in (mp.CAT_TARGET, mp.CAT_FOUND):
        path = plan_path(occ, pose, entry.cell, res, tol=TARGET_TOL,
                         face_goal=True)
        if path is None:
            ep.noop_step()
            out.steps = 1
            return out.finalize()
        out.success = navigate(ep, path, mode, out)
        if out.steps == 0:
            ep.noop_step()
            out.steps = 1
        return out.finalize()

    # door or container: approach one of its front poses
    if entry.category == mp.CAT_DOOR:
        fronts = ep.spec.door_by_id(entry.entity_id).fronts
    else:
        fronts = (ep.spec.container_by_id(entry.entity_id).front,)
    order = sorted(fronts, key=lambda f: (pose.distance_to(f), f.x, f.y))
    path = None
    for front in order:
        path = plan_path(occ, pose, front.cell(res), res, tol=FRONT_TOL,
                         final_heading=front.heading)
        if path is not None:
            break
    if path is None:
        ep.noop_step()
        out.steps = 1
        return out.finalize()
    reached = navigate(ep, path, mode, out)
    if out.steps == 0:
        ep.noop_step()
        out.steps = 1
    if not reached:
        return out.finalize()

    eid = entry.entity_id
    if entry.category == mp.CAT_DOOR and ep.spec.door_by_id(eid).locked:
        out.interaction = "rejected_locked"
        return out.finalize()
    result = ep.state.interact(eid)
    if not result.success:
        out.interaction = "failed"
        return out.finalize()
    out.interaction = "opened"
    out.opened_id = eid
    out.success = True
    mp.annotate(ep.pmap, mp.OpenedEvent(eid))
    if result.kind == "door":
        out.doors_opened = 1
    disc, found = ep.sense()
    out.discovered.extend(disc)
    out.found_ids.extend(found)
    return out.finalize()
