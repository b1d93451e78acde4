"""Panoptic mapping: accumulated category/instance grids, the bounded
instance registry, event annotations, ego-centric crops, and occupancy
extraction for the planners.

Map categories live on the same [ix, iy] grid as the world. Integration is
idempotent: re-observing identical geometry never changes the map, and a
higher-priority observation always wins over a lower one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import world as wd

CAT_UNEXPLORED = 0
CAT_FREE = 1
CAT_WALL = 2
CAT_DOOR = 3
CAT_CONTAINER = 4
CAT_TARGET = 5
CAT_FOUND = 6
CAT_TRACE = 7
N_MAP_CATEGORIES = 8

# resolution priority when observations disagree on a cell
PRIORITY = np.array([0, 1, 2, 3, 3, 4, 5, 1], dtype=np.int32)

_SIGHT_TO_CAT = {
    wd.SIGHT_WALL: CAT_WALL,
    wd.SIGHT_DOOR: CAT_DOOR,
    wd.SIGHT_CONTAINER: CAT_CONTAINER,
    wd.SIGHT_TARGET: CAT_TARGET,
    wd.SIGHT_FOUND: CAT_FOUND,
}

REGISTRY_CAPACITY = 10
EGO_RANGE = 7.4  # metres: half-extent of the coarse ego map

COARSE_SIZE = 224
COARSE_RES = 0.066
FINE_SIZE = 84
FINE_RES = 0.033


class RegistryFullError(RuntimeError):
    """More distinct instances observed than the registry can hold."""


@dataclass(frozen=True)
class SensorConfig:
    n_rays: int = 128
    fov: float = math.radians(79.0)
    max_depth: float = 5.6


@dataclass
class SensorFrame:
    """One panoptic range scan: per-ray depth, category code, entity id,
    hit cell, plus every pass-through cell for free-space carving."""
    pose: wd.Pose2D
    dists: np.ndarray        # (R,) float64
    codes: np.ndarray        # (R,) uint8 sight codes
    entity_ids: tuple[str | None, ...]
    hit_cells: np.ndarray    # (R, 2) int32, -1 when no cell was hit
    vis: np.ndarray          # (R, V, 2) int32 pass-through cells
    vis_n: np.ndarray        # (R,) int32


_VIS_CAP = 304  # upper bound on cells a 5.6 m ray can cross at 0.033 m


def raycast_frame(state: wd.WorldState, cfg: SensorConfig | None = None,
                  pose: wd.Pose2D | None = None) -> SensorFrame:
    """Cast the sensor fan from the given pose (default: robot pose)."""
    cfg = cfg or SensorConfig()
    pose = pose or state.pose
    r = cfg.n_rays
    dists = np.empty(r, dtype=np.float64)
    codes = np.empty(r, dtype=np.uint8)
    hit_insts = np.empty(r, dtype=np.int32)
    hit_cells = np.empty((r, 2), dtype=np.int32)
    vis = np.empty((r, _VIS_CAP, 2), dtype=np.int32)
    vis_n = np.empty(r, dtype=np.int32)
    from .kernels import cast_rays
    cast_rays(state.sight, state.inst, pose.x, pose.y, pose.heading,
              cfg.fov, cfg.max_depth, state.spec.resolution,
              dists, codes, hit_insts, hit_cells, vis, vis_n)
    ids = tuple(state.entity_id_for_inst(int(c)) if c >= 0 else None
                for c in hit_insts)
    return SensorFrame(pose, dists, codes, ids, hit_cells, vis, vis_n)


@dataclass
class RegistryEntry:
    inst_id: int             # discovery-order index, also the action slot
    entity_id: str
    category: int            # CAT_* code
    color: int
    cell: tuple[int, int]    # first observed cell, kept stable
    opened: bool = False
    found: bool = False


class InstanceRegistry:
    def __init__(self, capacity: int = REGISTRY_CAPACITY):
        self.capacity = capacity
        self.entries: list[RegistryEntry] = []
        self._by_entity: dict[str, RegistryEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._by_entity

    def get(self, entity_id: str) -> RegistryEntry:
        return self._by_entity[entity_id]

    def by_slot(self, inst_id: int) -> RegistryEntry:
        return self.entries[inst_id]

    def register(self, entity_id: str, category: int,
                 cell: tuple[int, int]) -> RegistryEntry:
        if entity_id in self._by_entity:
            return self._by_entity[entity_id]
        if len(self.entries) >= self.capacity:
            raise RegistryFullError(
                f"cannot register {entity_id}: {self.capacity} slots in use")
        entry = RegistryEntry(len(self.entries), entity_id, category,
                              color=len(self.entries), cell=cell)
        self.entries.append(entry)
        self._by_entity[entity_id] = entry
        return entry


# -- annotation events ----------------------------------------------------

@dataclass(frozen=True)
class TraceEvent:
    pose: wd.Pose2D


@dataclass(frozen=True)
class FoundEvent:
    entity_id: str


@dataclass(frozen=True)
class OpenedEvent:
    entity_id: str


@dataclass(frozen=True)
class MarkerEvent:
    x: float
    y: float
    agent: wd.Pose2D


@dataclass(frozen=True)
class ClearMarkerEvent:
    pass


class PanopticMap:
    def __init__(self, shape: tuple[int, int], res: float):
        self.res = res
        self.cat = np.zeros(shape, dtype=np.uint8)
        self.inst = np.full(shape, -1, dtype=np.int32)
        self.registry = InstanceRegistry()
        self.marker: tuple[float, float, bool] | None = None

    @property
    def explored_cells(self) -> int:
        return int((self.cat != CAT_UNEXPLORED).sum())


def integrate_frame(pmap: PanopticMap, frame: SensorFrame
                    ) -> list[RegistryEntry]:
    """Fuse one scan into the map. Returns entries registered by this frame.

    Pass-through cells upgrade unexplored to free; hit cells follow category
    priority, so a target sighting wins over a stale container paint but a
    wall can never erase a door. Unknown instances register in discovery
    order; an overflow past capacity raises RegistryFullError.
    """
    w, h = pmap.cat.shape
    total = int(frame.vis_n.sum())
    if total:
        flat = np.empty(total, dtype=np.int64)
        k = 0
        for r in range(frame.vis_n.shape[0]):
            n = int(frame.vis_n[r])
            if n:
                cells = frame.vis[r, :n]
                flat[k:k + n] = cells[:, 0].astype(np.int64) * h + cells[:, 1]
                k += n
        flat = np.unique(flat)
        sel = pmap.cat.reshape(-1)[flat] == CAT_UNEXPLORED
        pmap.cat.reshape(-1)[flat[sel]] = CAT_FREE

    new_entries: list[RegistryEntry] = []
    for r in range(frame.codes.shape[0]):
        code = int(frame.codes[r])
        if code == wd.SIGHT_PASS:
            continue
        ix = int(frame.hit_cells[r, 0])
        iy = int(frame.hit_cells[r, 1])
        if ix < 0 or iy < 0 or ix >= w or iy >= h:
            continue
        cat = _SIGHT_TO_CAT[code]
        old = int(pmap.cat[ix, iy])
        if PRIORITY[cat] > PRIORITY[old]:
            pmap.cat[ix, iy] = cat
        eid = frame.entity_ids[r]
        if eid is not None and cat in (CAT_DOOR, CAT_CONTAINER, CAT_TARGET,
                                       CAT_FOUND):
            if eid not in pmap.registry:
                entry = pmap.registry.register(eid, cat, (ix, iy))
                if cat == CAT_FOUND:
                    entry.found = True
                new_entries.append(entry)
            entry = pmap.registry.get(eid)
            if pmap.inst[ix, iy] < 0:
                pmap.inst[ix, iy] = entry.inst_id
    return new_entries


def annotate(pmap: PanopticMap, event) -> None:
    """Apply a non-sensor map event: trajectory trace, found/opened flags,
    or the frontier marker."""
    if isinstance(event, TraceEvent):
        ix, iy = event.pose.cell(pmap.res)
        if 0 <= ix < pmap.cat.shape[0] and 0 <= iy < pmap.cat.shape[1]:
            if pmap.cat[ix, iy] == CAT_FREE:
                pmap.cat[ix, iy] = CAT_TRACE
    elif isinstance(event, FoundEvent):
        entry = pmap.registry.get(event.entity_id)
        entry.found = True
        sel = (pmap.inst == entry.inst_id) & (pmap.cat == CAT_TARGET)
        pmap.cat[sel] = CAT_FOUND
    elif isinstance(event, OpenedEvent):
        entry = pmap.registry.get(event.entity_id)
        entry.opened = True
    elif isinstance(event, MarkerEvent):
        dx = event.x - event.agent.x
        dy = event.y - event.agent.y
        d = math.hypot(dx, dy)
        if d <= EGO_RANGE:
            pmap.marker = (event.x, event.y, True)
        else:
            s = EGO_RANGE / d
            pmap.marker = (event.agent.x + dx * s, event.agent.y + dy * s,
                           False)
    elif isinstance(event, ClearMarkerEvent):
        pmap.marker = None
    else:
        raise TypeError(f"unknown map event {event!r}")


@dataclass
class EgoCrop:
    kind: str                # "coarse" or "fine"
    res: float
    cat: np.ndarray          # (N, N) uint8
    inst: np.ndarray         # (N, N) int32
    marker: np.ndarray       # (N, N) uint8: 0 none, 1 in range, 2 projected


def _sample_grid(pmap: PanopticMap, pose: wd.Pose2D, n: int, res: float
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Rotated ego window: row 0 lies ahead of the agent, columns increase
    to its right. Out-of-map samples read unexplored / no instance."""
    half = n * 0.5
    idx = np.arange(n, dtype=np.float64)
    fwd = (half - idx - 0.5) * res          # per row
    rgt = (idx + 0.5 - half) * res          # per column
    ch = math.cos(pose.heading)
    sh = math.sin(pose.heading)
    wx = pose.x + fwd[:, None] * ch + rgt[None, :] * sh
    wy = pose.y + fwd[:, None] * sh - rgt[None, :] * ch
    gx = np.floor(wx / pmap.res).astype(np.int64)
    gy = np.floor(wy / pmap.res).astype(np.int64)
    w, h = pmap.cat.shape
    ok = (gx >= 0) & (gy >= 0) & (gx < w) & (gy < h)
    gxc = np.clip(gx, 0, w - 1)
    gyc = np.clip(gy, 0, h - 1)
    cat = np.where(ok, pmap.cat[gxc, gyc], CAT_UNEXPLORED).astype(np.uint8)
    inst = np.where(ok, pmap.inst[gxc, gyc], -1).astype(np.int32)
    return cat, inst


def _majority_2x2(cat: np.ndarray, inst: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """2:1 downsample. Category by vote, ties broken by priority; instance
    ids keep the largest id in the block (registered beats empty)."""
    n = cat.shape[0] // 2
    blocks = cat.reshape(n, 2, n, 2).transpose(0, 2, 1, 3).reshape(n, n, 4)
    score = np.zeros((N_MAP_CATEGORIES, n, n), dtype=np.int32)
    for code in range(N_MAP_CATEGORIES):
        cnt = (blocks == code).sum(axis=2).astype(np.int32)
        score[code] = cnt * 8 + int(PRIORITY[code])
        score[code][cnt == 0] = -1
    out_cat = score.argmax(axis=0).astype(np.uint8)
    iblocks = inst.reshape(n, 2, n, 2).transpose(0, 2, 1, 3).reshape(n, n, 4)
    out_inst = iblocks.max(axis=2)
    return out_cat, out_inst


def _draw_marker(pmap: PanopticMap, pose: wd.Pose2D, n: int, res: float,
                 radius_px: int) -> np.ndarray:
    grid = np.zeros((n, n), dtype=np.uint8)
    if pmap.marker is None:
        return grid
    mx, my, in_range = pmap.marker
    dx = mx - pose.x
    dy = my - pose.y
    ch = math.cos(pose.heading)
    sh = math.sin(pose.heading)
    f = dx * ch + dy * sh
    r = dx * sh - dy * ch
    half = n * 0.5
    row = half - 0.5 - f / res
    col = half - 0.5 + r / res
    irow = int(round(row))
    icol = int(round(col))
    val = 1 if in_range else 2
    for dr in range(-radius_px, radius_px + 1):
        for dc in range(-radius_px, radius_px + 1):
            if dr * dr + dc * dc > radius_px * radius_px:
                continue
            rr = irow + dr
            cc = icol + dc
            if 0 <= rr < n and 0 <= cc < n:
                grid[rr, cc] = val
    return grid


def ego_crop(pmap: PanopticMap, pose: wd.Pose2D, kind: str) -> EgoCrop:
    """Agent-centred rotated crop of the map.

    coarse: 224 px at 0.066 m (14.8 m window), sampled at map resolution
    and majority-downsampled 2:1. fine: 84 px straight at 0.033 m.
    """
    from .kernels import ego_coarse, ego_fine
    ch = math.cos(pose.heading)
    sh = math.sin(pose.heading)
    if kind == "coarse":
        cat = np.empty((COARSE_SIZE, COARSE_SIZE), dtype=np.uint8)
        inst = np.empty((COARSE_SIZE, COARSE_SIZE), dtype=np.int32)
        ego_coarse(pmap.cat, pmap.inst, PRIORITY, pose.x, pose.y, ch, sh,
                   COARSE_SIZE, COARSE_RES, pmap.res, cat, inst)
        marker = _draw_marker(pmap, pose, COARSE_SIZE, COARSE_RES, 3)
        return EgoCrop("coarse", COARSE_RES, cat, inst, marker)
    if kind == "fine":
        cat = np.empty((FINE_SIZE, FINE_SIZE), dtype=np.uint8)
        inst = np.empty((FINE_SIZE, FINE_SIZE), dtype=np.int32)
        ego_fine(pmap.cat, pmap.inst, pose.x, pose.y, ch, sh,
                 FINE_SIZE, FINE_RES, pmap.res, cat, inst)
        marker = _draw_marker(pmap, pose, FINE_SIZE, FINE_RES, 6)
        return EgoCrop("fine", FINE_RES, cat, inst, marker)
    raise ValueError(kind)


def ego_crop_reference(pmap: PanopticMap, pose: wd.Pose2D, kind: str
                       ) -> EgoCrop:
    """Plain-numpy twin of ego_crop, kept as the behavioural oracle."""
    if kind == "coarse":
        cat2, inst2 = _sample_grid(pmap, pose, 2 * COARSE_SIZE, FINE_RES)
        cat, inst = _majority_2x2(cat2, inst2)
        marker = _draw_marker(pmap, pose, COARSE_SIZE, COARSE_RES, 3)
        return EgoCrop("coarse", COARSE_RES, cat, inst, marker)
    if kind == "fine":
        cat, inst = _sample_grid(pmap, pose, FINE_SIZE, FINE_RES)
        marker = _draw_marker(pmap, pose, FINE_SIZE, FINE_RES, 6)
        return EgoCrop("fine", FINE_RES, cat, inst, marker)
    raise ValueError(kind)


_OCC_TABLE = np.array([2, 0, 1, 1, 1, 1, 1, 0], dtype=np.uint8)


def to_occupancy(pmap: PanopticMap, closed_doors: str = "blocked"
                 ) -> np.ndarray:
    """Occupancy view of the map: 0 free, 1 occupied, 2 unknown.

    Door cells follow the registry: opened doors read free; closed ones
    read per `closed_doors` ("blocked" for execution, "free" for planning
    through doors the agent intends to open).
    """
    if closed_doors not in ("blocked", "free"):
        raise ValueError(closed_doors)
    occ = _OCC_TABLE[pmap.cat]
    for entry in pmap.registry.entries:
        if entry.category != CAT_DOOR:
            continue
        if entry.opened or closed_doors == "free":
            sel = (pmap.inst == entry.inst_id) & (pmap.cat == CAT_DOOR)
            occ[sel] = 0
    return occ
