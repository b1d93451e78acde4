"""Decision-makers over the search SMDP: observation encoding for the
network, masked categorical sampling, the learned policy wrapper, and the
three scripted baselines (random, greedy, sgolam_plus).

Baselines are deterministic functions of (observation, mask, map view,
seeded rng): the same inputs always produce the same action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mapping as mp
from .kernels import astar
from .seeding import stream

N_CATS = 8
IMG_SIZE = 56
IMG_CHANNELS = N_CATS + 2   # one-hot categories + marker in-range/projected
VEC_DIM = 6 + 10 + 22       # goal bits + instance validity + robot state

_PRIORITY = np.asarray(mp.PRIORITY, dtype=np.int64)
_CODES = np.arange(N_CATS, dtype=np.uint8)


def encode_compact(obs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """HLObservation -> (cat56 (56,56) u8, marks (2,56,56) u8, vec (38,) f32).

    The 224-cell coarse crop is reduced 4x by per-block majority vote with
    the same priority tie-break the mapper uses; the marker plane max-pools
    so a marker survives downsampling. This compact form is what rollout
    buffers store; expand_img turns it into network input.
    """
    cat = obs.coarse.cat
    s = IMG_SIZE
    blocks = cat.reshape(s, 4, s, 4).transpose(0, 2, 1, 3).reshape(s, s, 16)
    counts = (blocks[:, :, :, None] == _CODES).sum(axis=2)
    score = counts * 8 + _PRIORITY
    cat56 = np.argmax(score, axis=-1).astype(np.uint8)
    marker = obs.coarse.marker
    mb = marker.reshape(s, 4, s, 4).transpose(0, 2, 1, 3).reshape(s, s, 16)
    marks = np.stack([(mb == 1).any(axis=-1), (mb == 2).any(axis=-1)])
    vec = np.concatenate([
        np.asarray(obs.g, dtype=np.float32),
        np.asarray(obs.v, dtype=np.float32),
        np.asarray(obs.robot_state, dtype=np.float32),
    ])
    return cat56, marks.astype(np.uint8), vec


def expand_img(cat56: np.ndarray, marks: np.ndarray) -> np.ndarray:
    """(B,56,56) category codes + (B,2,56,56) marker bits -> one-hot
    network input (B,10,56,56) float32."""
    b, s, _ = cat56.shape
    img = np.zeros((b, IMG_CHANNELS, s, s), dtype=np.float32)
    img[:, :N_CATS] = cat56[:, None, :, :] == _CODES[None, :, None, None]
    img[:, N_CATS:] = marks
    return img


def encode_observation(obs) -> tuple[np.ndarray, np.ndarray]:
    """HLObservation -> (img (10,56,56) float32, vec (38,) float32)."""
    cat56, marks, vec = encode_compact(obs)
    return expand_img(cat56[None], marks[None])[0], vec


def mask_and_sample(logits: np.ndarray, mask: np.ndarray,
                    rng: np.random.Generator | None,
                    mode: str = "sample") -> tuple[int, float]:
    """Sample (or argmax) from the categorical over valid actions only.

    Invalid logits are pinned to -1e8 before the softmax, which drives
    their probability to exactly zero in float64. Returns the chosen
    action and its log-probability under the masked distribution.
    """
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise ValueError("mask has no valid action")
    ml = np.where(np.asarray(mask) > 0, logits.astype(np.float64), -1e8)
    z = ml - ml.max()
    logp_all = z - np.log(np.exp(z).sum())
    if mode == "argmax":
        a = int(np.argmax(ml))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sampling requires an rng")
        p = np.exp(logp_all)
        p /= p.sum()
        c = np.cumsum(p)
        a = int(np.searchsorted(c, rng.random(), side="right"))
        if a >= len(p) or mask[a] == 0:
            # cumsum round-off pushed us past the last valid bin
            a = int(valid[np.argmax(p[valid])])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return a, float(logp_all[a])


class LearnedPolicy:
    """Actor-critic driven policy. mode='argmax' for evaluation,
    'sample' during training rollouts."""

    def __init__(self, model, mode: str = "argmax", seed: int = 0):
        self.model = model
        self.mode = mode
        self.rng = stream(seed, "policy-sample")

    def act(self, obs, env) -> int:
        a, _, _ = self.act_full(obs, env.valid_action_mask())
        return a

    def act_full(self, obs, mask: np.ndarray) -> tuple[int, float, float]:
        img, vec = encode_observation(obs)
        logits, value, _ = self.model.forward(img[None], vec[None])
        a, logp = mask_and_sample(logits[0], mask, self.rng, self.mode)
        return a, logp, float(value[0])


# -- scripted baselines -------------------------------------------------------

@dataclass
class BaselineView:
    """The slice of environment state the scripted policies may read."""
    entries: tuple
    inst: np.ndarray
    geodesic: np.ndarray
    occupancy: np.ndarray
    frontier_cell: tuple[int, int] | None
    agent_cell: tuple[int, int]
    resolution: float

    @classmethod
    def from_env(cls, env) -> "BaselineView":
        ep = env.episode
        sel = env.selected_frontier
        return cls(entries=tuple(ep.pmap.registry.entries),
                   inst=ep.pmap.inst,
                   geodesic=env.geodesic,
                   occupancy=env.occupancy,
                   frontier_cell=None if sel is None else sel.cell,
                   agent_cell=ep.state.pose.cell(env.spec.resolution),
                   resolution=env.spec.resolution)


def _instance_distance(view: BaselineView, entry) -> float:
    """Geodesic cost from the agent to the closest free cell touching the
    instance. The instance's own cells are obstacles, so probe a small
    window around each observed cell; falls back to euclidean distance
    when nothing reachable is known yet."""
    cells = np.argwhere(view.inst == entry.inst_id)
    if cells.size == 0:
        cells = np.asarray([entry.cell])
    w, h = view.geodesic.shape
    best = np.inf
    for dx in range(-2, 3):
        for dy in range(-2, 3):
            xs = cells[:, 0] + dx
            ys = cells[:, 1] + dy
            ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            if ok.any():
                d = view.geodesic[xs[ok], ys[ok]].min()
                best = min(best, d)
    if not np.isfinite(best):
        ax, ay = view.agent_cell
        ex, ey = entry.cell
        best = 1e6 + float(np.hypot(ex - ax, ey - ay))
    return float(best)


def _nearest_slot(view: BaselineView, slots: list[int]) -> int:
    scored = [(_instance_distance(view, view.entries[a - 2]), a)
              for a in slots]
    return min(scored)[1]


def baseline_action(kind: str, obs, mask: np.ndarray, view: BaselineView,
                    rng: np.random.Generator) -> int:
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise ValueError("mask has no valid action")
    slots = [int(a) for a in valid if a >= 2]
    if kind == "random":
        return int(valid[rng.integers(valid.size)])
    if kind == "greedy":
        if slots:
            return _nearest_slot(view, slots)
        return _explore_choice(mask, rng)
    if kind == "sgolam_plus":
        target_slots = [a for a in slots
                        if view.entries[a - 2].category
                        in (mp.CAT_TARGET, mp.CAT_FOUND)]
        if target_slots:
            return _nearest_slot(view, target_slots)
        if mask[1]:
            blocking = _doors_on_frontier_route(view, slots)
            if blocking:
                return _nearest_slot(view, blocking)
            return 1
        if slots:
            return _nearest_slot(view, slots)
        return _explore_choice(mask, rng)
    raise ValueError(f"unknown baseline kind {kind!r}")


def _explore_choice(mask: np.ndarray, rng: np.random.Generator) -> int:
    if mask[0] and mask[1]:
        return int(rng.integers(2))
    if mask[0]:
        return 0
    if mask[1]:
        return 1
    return int(np.flatnonzero(mask)[0])


def _doors_on_frontier_route(view: BaselineView,
                             slots: list[int]) -> list[int]:
    """Doors whose cells the frontier route crosses, planning as if every
    known closed door were already open. Opening these unblocks global
    exploration; anything else is left to the frontier walk."""
    if view.frontier_cell is None:
        return []
    door_slots = [a for a in slots
                  if view.entries[a - 2].category == mp.CAT_DOOR]
    if not door_slots:
        return []
    occ = view.occupancy
    passable = occ == 0
    door_mask = np.zeros_like(passable)
    for a in door_slots:
        door_mask |= view.inst == view.entries[a - 2].inst_id
    blocked = ~(passable | door_mask)
    ax, ay = view.agent_cell
    gx, gy = view.frontier_cell
    found, _, _, _, parent = astar(blocked, ax, ay, gx, gy, 0.0)
    if not found:
        return []
    w, h = blocked.shape
    on_route: set[int] = set()
    node = gx * h + gy
    while node >= 0:
        x, y = divmod(node, h)
        if door_mask[x, y]:
            inst = int(view.inst[x, y])
            for a in door_slots:
                if view.entries[a - 2].inst_id == inst:
                    on_route.add(a)
        node = int(parent[node])
    return sorted(on_route)


class _SeededBaseline:
    kind = ""

    def __init__(self, seed: int = 0):
        self.rng = stream(seed, "baseline", self.kind)

    def act(self, obs, env) -> int:
        return baseline_action(self.kind, obs, env.valid_action_mask(),
                               BaselineView.from_env(env), self.rng)


class RandomPolicy(_SeededBaseline):
    kind = "random"


class GreedyPolicy(_SeededBaseline):
    kind = "greedy"


class SgolamPolicy(_SeededBaseline):
    kind = "sgolam_plus"
