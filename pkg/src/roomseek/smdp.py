"""The high-level search task: a semi-Markov env with 12 discrete choices.

Action 0 runs local exploration, action 1 commits to the currently selected
frontier, actions 2..11 drive to registry slots 0..9 in discovery order.
Each decision executes a whole subpolicy; the env returns the accumulated
reward and the number of low-level steps it consumed, which the learner
uses to discount per transition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mapping as mp
from . import skills
from . import world as wd
from .episode import Episode
from .kernels import dijkstra_field
from .seeding import derive_seed, stream
from .worldgen import GenParams, generate_apartment, sample_goal

N_ACTIONS = 12
N_SLOTS = 10
ROBOT_STATE_DIM = 22
HISTORY_LEN = 8

GAMMA_PER_EPISODE = 0.99


class InvalidActionError(RuntimeError):
    """A masked-out action was submitted while masking is enforced."""


def adaptive_gamma(n_avg: int) -> float:
    """Per-step discount chosen so gamma**n_avg == GAMMA_PER_EPISODE."""
    return GAMMA_PER_EPISODE ** (1.0 / n_avg)


@dataclass(frozen=True)
class EnvConfig:
    gen: GenParams
    k_max: int = 6
    mode: str = "train"              # "train" or "eval"
    masking: bool = True
    use_local: bool = True           # action 0 available
    use_frontier: bool = True        # action 1 available
    frontier_strategy: str = "nearest"
    nav_mode: str | None = None      # default: teleport in train, kinematic in eval
    explore_horizon: int | None = None
    step_limit: int | None = None
    n_avg: int = 7
    world_cache: int = 64

    @property
    def resolved_nav_mode(self) -> str:
        if self.nav_mode is not None:
            return self.nav_mode
        return "teleport" if self.mode == "train" else "kinematic"

    @property
    def resolved_horizon(self) -> int:
        if self.explore_horizon is not None:
            return self.explore_horizon
        return 4 if self.mode == "train" else 20

    @property
    def resolved_step_limit(self) -> int:
        if self.step_limit is not None:
            return self.step_limit
        return 500 if self.mode == "train" else 1000


@dataclass
class HLObservation:
    coarse: mp.EgoCrop
    g: np.ndarray            # (6,) int8 remaining-category bits
    v: np.ndarray            # (10,) int8 slot validity
    robot_state: np.ndarray  # (22,) float32


@dataclass
class TransitionRecord:
    index: int
    action: int
    n: int
    reward: float
    success: bool
    found: list[str]
    opened_id: str | None
    doors_opened: int
    collisions: int
    waypoints: int
    explore: bool
    invalid: bool
    interaction: str | None
    discovered: list[str]
    pose: tuple[float, float, float]
    low_steps: int
    goal_bits: list[int]

    def to_dict(self) -> dict:
        return {
            "index": self.index, "action": self.action, "n": self.n,
            "reward": self.reward, "success": self.success,
            "found": list(self.found), "opened_id": self.opened_id,
            "doors_opened": self.doors_opened, "collisions": self.collisions,
            "waypoints": self.waypoints, "explore": self.explore,
            "invalid": self.invalid, "interaction": self.interaction,
            "discovered": list(self.discovered),
            "pose": list(self.pose), "low_steps": self.low_steps,
            "goal_bits": list(self.goal_bits),
        }


class SearchEnv:
    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self._world_cache: dict[int, object] = {}
        self.episode: Episode | None = None
        self.done = True
        self.success = False

    # -- lifecycle ----------------------------------------------------------

    def reset(self, world_seed: int, goal_seed: int,
              k: int | None = None) -> HLObservation:
        """Start an episode. k picks the eval-suite goal law (k distinct
        categories); k=None uses the training law, capped by cfg.k_max
        (a uniform k in 1..k_max when k_max < 6)."""
        cfg = self.cfg
        if world_seed not in self._world_cache:
            self._world_cache[world_seed] = generate_apartment(world_seed, cfg.gen)
            if len(self._world_cache) > cfg.world_cache:
                self._world_cache.pop(next(iter(self._world_cache)))
        base_spec = self._world_cache[world_seed]
        if k is not None:
            mode: str | int = int(k)
        elif cfg.k_max >= len(wd.CATEGORIES):
            mode = "train"
        else:
            mode = 1 + int(stream(goal_seed, "goal", "k")
                           .integers(0, cfg.k_max))
        gs = goal_seed
        for retry in range(16):
            try:
                goal, targets = sample_goal(base_spec, gs, mode)
                break
            except wd.WorldGenError:
                # this draw cannot be placed in this world; redraw on a
                # derived seed so the schedule stays deterministic
                gs = derive_seed(goal_seed, "goal-retry", retry)
        else:
            raise wd.WorldGenError(
                f"no feasible goal for world {world_seed} goal {goal_seed}")
        self.spec = base_spec.with_goal(targets)
        self.goal0 = goal
        self.goal_bits = list(goal.bits)
        episode_seed = derive_seed(world_seed, goal_seed)
        self.episode = Episode(self.spec, goal, episode_seed,
                               cfg.resolved_step_limit)
        self._rng_frontier = stream(episode_seed, "frontier")
        self._hl_history: list[tuple[float, float]] = [(0.0, 0.0)] * HISTORY_LEN
        self._decisions = 0
        self.total_reward = 0.0
        self.trace: list[TransitionRecord] = []
        # targets visible and close at spawn count as found before the
        # first decision; no reward attaches outside a transition
        for tid in [t.id for t in self.spec.targets
                    if self.episode.state.found[t.id]]:
            self._clear_goal_bit(tid)
        self.success = all(b == 0 for b in self.goal_bits)
        self.done = self.success
        self._prepare_decision()
        return self._observe()

    def _clear_goal_bit(self, target_id: str) -> None:
        cat = self.spec.target_by_id(target_id).category
        self.goal_bits[wd.CATEGORIES.index(cat)] = 0

    # -- decision preparation -------------------------------------------------

    def _prepare_decision(self) -> None:
        ep = self.episode
        occ = mp.to_occupancy(ep.pmap, "blocked")
        agent_cell = ep.state.pose.cell(self.spec.resolution)
        if self.cfg.use_frontier:
            points, geo = skills.detect_frontiers(occ, agent_cell,
                                                  self.spec.resolution)
            selected, fpath = skills.commit_frontier(
                ep, points, self.cfg.frontier_strategy, self._rng_frontier,
                occ=occ)
        else:
            points = []
            geo = dijkstra_field(occ != 0, agent_cell[0], agent_cell[1])
            selected, fpath = None, None
        if selected is not None:
            cx, cy = wd.cell_center(*selected.cell, self.spec.resolution)
            mp.annotate(ep.pmap, mp.MarkerEvent(cx, cy, ep.state.pose))
        else:
            mp.annotate(ep.pmap, mp.ClearMarkerEvent())
        self.frontiers = points
        self.selected_frontier = selected
        self._frontier_path = fpath
        self.occupancy = occ
        self.geodesic = geo
        self._mask = self._compute_mask()

    def _compute_mask(self) -> np.ndarray:
        m = np.zeros(N_ACTIONS, dtype=np.int8)
        if self.cfg.use_local:
            m[0] = 1
        if self.cfg.use_frontier and self.selected_frontier is not None:
            m[1] = 1
        for entry in self.episode.pmap.registry.entries:
            if entry.found or entry.opened:
                continue
            m[2 + entry.inst_id] = 1
        if not m.any():
            # nothing applies; fall back to a sweep so the episode can tick
            if self.cfg.use_frontier and self.selected_frontier is not None:
                m[1] = 1
            else:
                m[0] = 1
        return m

    def valid_action_mask(self) -> np.ndarray:
        return self._mask.copy()

    # -- observation ------------------------------------------------------------

    def _robot_state(self) -> np.ndarray:
        ep = self.episode
        hist = ep.collision_hist
        vec = [ep.cur_vel[0], ep.cur_vel[1], ep.last_cmd[0], ep.last_cmd[1],
               float(hist[-1]), sum(hist) / 10.0]
        for a, s in self._hl_history:
            vec.extend((a, s))
        return np.asarray(vec, dtype=np.float32)

    def _observe(self) -> HLObservation:
        ep = self.episode
        crop = mp.ego_crop(ep.pmap, ep.state.pose, "coarse")
        g = np.asarray(self.goal_bits, dtype=np.int8)
        v = self._mask[2:].astype(np.int8)
        return HLObservation(crop, g, v, self._robot_state())

    # -- transition ---------------------------------------------------------------

    def step(self, action: int
             ) -> tuple[HLObservation, float, int, bool, dict]:
        if self.done:
            raise RuntimeError("episode is over; call reset")
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action {action} out of range")
        ep = self.episode
        cfg = self.cfg
        pre_steps = ep.low_steps
        if self._mask[action] == 0:
            if cfg.masking:
                raise InvalidActionError(f"action {action} is masked out")
            ep.noop_step()
            outcome = skills.SubpolicyOutcome("invalid", steps=1,
                                              success=False,
                                              invalid=True).finalize()
        elif action == 0:
            outcome = skills.local_explore(ep, cfg.resolved_horizon)
        elif action == 1:
            outcome = skills.goto_frontier_path(ep, self._frontier_path,
                                                cfg.resolved_nav_mode)
        else:
            entry = ep.pmap.registry.by_slot(action - 2)
            outcome = skills.navigate_to_instance(ep, entry,
                                                  cfg.resolved_nav_mode)
        n = ep.low_steps - pre_steps
        assert n == outcome.steps and n >= 1
        reward = outcome.reward
        self.total_reward += reward
        for tid in outcome.found_ids:
            self._clear_goal_bit(tid)
        self._hl_history.append((action / (N_ACTIONS - 1),
                                 1.0 if outcome.success else 0.0))
        self._hl_history = self._hl_history[-HISTORY_LEN:]
        self._decisions += 1
        self.success = all(b == 0 for b in self.goal_bits)
        self.done = self.success or ep.low_steps >= ep.step_limit
        record = TransitionRecord(
            index=self._decisions - 1, action=action, n=n, reward=reward,
            success=outcome.success, found=list(outcome.found_ids),
            opened_id=outcome.opened_id, doors_opened=outcome.doors_opened,
            collisions=outcome.collisions, waypoints=outcome.waypoints,
            explore=outcome.explore, invalid=outcome.invalid,
            interaction=outcome.interaction,
            discovered=list(outcome.discovered),
            pose=(ep.state.pose.x, ep.state.pose.y, ep.state.pose.heading),
            low_steps=ep.low_steps, goal_bits=list(self.goal_bits))
        self.trace.append(record)
        self._prepare_decision()
        obs = self._observe()
        info = {"outcome": outcome, "record": record,
                "decisions": self._decisions, "success": self.success}
        return obs, reward, n, self.done, info

    @property
    def decisions(self) -> int:
        return self._decisions
