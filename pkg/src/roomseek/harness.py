"""Episode runner, metrics, deterministic evaluation suites, reward
replay checking, and trajectory rendering.

A policy is anything with .act(obs, env) -> int. Suites rebuild their
policy from a factory so repeated runs start from identical state; with a
fixed config the output CSV is byte-identical across runs.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import mapping as mp
from . import world as wd
from .kernels import bfs_field
from .seeding import derive_seed
from .skills import (build_reward_items, commit_frontier, detect_frontiers,
                     goto_frontier_path, sum_reward_items)
from .smdp import EnvConfig, SearchEnv, TransitionRecord
from .world import oracle_shortest_path
from .worldgen import generate_apartment, preset_gen


@dataclass
class EpisodeResult:
    world_seed: int
    goal_seed: int
    k: int
    success: bool
    path_len: float          # p: metres the agent actually moved
    oracle_len: float        # l: shortest tour over the goal cells
    low_steps: int
    decisions: int
    reward: float
    records: list[TransitionRecord] = field(default_factory=list)

    @property
    def spl_term(self) -> float:
        """Success-weighted path length contribution of this episode."""
        if not self.success:
            return 0.0
        denom = max(self.path_len, self.oracle_len)
        if denom == 0.0:
            return 1.0   # everything was in reach before the first step
        return self.oracle_len / denom


class PolicyProtocolError(RuntimeError):
    """A policy returned something the environment rejected."""


def run_episode(policy, env: SearchEnv, world_seed: int, goal_seed: int,
                k: int | None = None) -> EpisodeResult:
    """Reset, then observe/act/step until the episode ends."""
    obs = env.reset(world_seed, goal_seed, k)
    while not env.done:
        action = policy.act(obs, env)
        try:
            obs, _, _, _, _ = env.step(int(action))
        except Exception as exc:
            raise PolicyProtocolError(
                f"policy failed at decision {env.decisions} "
                f"(world {world_seed}, goal {goal_seed}): {exc}") from exc
    oracle = oracle_shortest_path(env.spec, env.spec.spawn,
                                  [t.cell for t in env.spec.targets])
    return EpisodeResult(
        world_seed=world_seed, goal_seed=goal_seed,
        k=len(env.spec.targets), success=bool(env.success),
        path_len=float(env.episode.path_len), oracle_len=float(oracle),
        low_steps=env.episode.low_steps, decisions=env.decisions,
        reward=float(env.total_reward), records=list(env.trace))


@dataclass
class MetricSummary:
    episodes: int
    success_rate: float
    spl: float
    excluded: int    # episodes with an unreachable oracle, left out


def compute_metrics(results: list[EpisodeResult]) -> MetricSummary:
    if not results:
        raise ValueError("no episodes")
    usable = [r for r in results if math.isfinite(r.oracle_len)]
    excluded = len(results) - len(usable)
    if not usable:
        return MetricSummary(0, 0.0, 0.0, excluded)
    sr = sum(r.success for r in usable) / len(usable)
    spl = sum(r.spl_term for r in usable) / len(usable)
    return MetricSummary(len(usable), sr, spl, excluded)


# -- reward replay ------------------------------------------------------------

def replay_reward(record: TransitionRecord) -> float:
    """Rebuild a transition's reward from its event counts through the
    canonical item list. Must equal the recorded reward bit for bit."""
    items = build_reward_items(found=len(record.found),
                               doors_opened=record.doors_opened,
                               collisions=record.collisions,
                               explore=record.explore,
                               waypoints=record.waypoints,
                               invalid=record.invalid)
    return sum_reward_items(items)


def verify_episode_rewards(result: EpisodeResult) -> list[str]:
    """Independent accountant: recompute every transition reward and the
    episode total. Returns human-readable mismatch descriptions (empty
    when everything checks out exactly)."""
    problems = []
    total = 0.0
    for rec in result.records:
        expect = replay_reward(rec)
        if expect != rec.reward:
            problems.append(
                f"decision {rec.index}: recorded {rec.reward!r} "
                f"!= replayed {expect!r}")
        total += rec.reward
    if total != result.reward:
        problems.append(f"episode total {result.reward!r} != sum of "
                        f"transitions {total!r}")
    return problems


# -- evaluation suites -----------------------------------------------------

@dataclass(frozen=True)
class SuiteConfig:
    name: str = "suite"
    preset: str = "medium"
    scenes: int = 7
    k_values: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    episodes_per: int = 25
    seed_tag: str = "heldout"     # namespace of the scene/goal schedule
    no_frontier: bool = False     # remove action 1 for the whole suite
    no_local: bool = False        # remove action 0
    no_masking: bool = False      # sample everywhere, -2.5 on invalid

    def env_config(self) -> EnvConfig:
        return EnvConfig(gen=preset_gen(self.preset), mode="eval",
                         masking=not self.no_masking,
                         use_local=not self.no_local,
                         use_frontier=not self.no_frontier,
                         world_cache=max(64, self.scenes + 1))

    def scene_seed(self, scene: int) -> int:
        return derive_seed(self.seed_tag, self.preset, "scene", scene)

    def goal_seed(self, scene: int, k: int, episode: int) -> int:
        return derive_seed(self.scene_seed(scene), "episode", k, episode)


def evaluate_suite(cfg: SuiteConfig, policy_factory, out_path: str,
                   progress=None) -> MetricSummary:
    """Run scenes x k-values x episodes and write one CSV row each, then
    a per-k summary block and the overall average. The accountant checks
    every episode; identical configs produce byte-identical files."""
    env = SearchEnv(cfg.env_config())
    policy = policy_factory()
    results: list[EpisodeResult] = []
    rows: list[str] = []
    header = ("scene,k,episode,world_seed,goal_seed,success,"
              "path_len,oracle_len,low_steps,decisions,reward")
    for scene in range(cfg.scenes):
        ws = cfg.scene_seed(scene)
        for k in cfg.k_values:
            for e in range(cfg.episodes_per):
                gs = cfg.goal_seed(scene, k, e)
                r = run_episode(policy, env, ws, gs, k)
                bad = verify_episode_rewards(r)
                if bad:
                    raise AssertionError(
                        f"reward replay mismatch (scene {scene} k {k} "
                        f"ep {e}): " + "; ".join(bad))
                results.append(r)
                rows.append(f"{scene},{k},{e},{ws},{gs},{int(r.success)},"
                            f"{r.path_len!r},{r.oracle_len!r},"
                            f"{r.low_steps},{r.decisions},{r.reward!r}")
            if progress is not None:
                progress(scene, k, len(results))
    lines = [header] + rows + ["", "summary_k,episodes,success_rate,spl"]
    per_k: dict[int, list[EpisodeResult]] = {}
    for r, row in zip(results, rows):
        kk = int(row.split(",")[1])
        per_k.setdefault(kk, []).append(r)
    for k in sorted(per_k):
        m = compute_metrics(per_k[k])
        lines.append(f"{k},{m.episodes},{m.success_rate!r},{m.spl!r}")
    overall = compute_metrics(results)
    lines.append(f"avg,{overall.episodes},{overall.success_rate!r},"
                 f"{overall.spl!r}")
    if overall.excluded:
        lines.append(f"excluded_unreachable,{overall.excluded},,")
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    with open(out_path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return overall


# -- scripted exploration sweep ----------------------------------------------

def frontier_coverage(world_seed: int, preset: str = "medium",
                      step_limit: int = 5000
                      ) -> tuple[float, int]:
    """Drive the frontier subpolicy alone until the map has no frontiers
    left, with every unlocked door opened up front. Returns (fraction of
    reachable free cells mapped, low-level steps used).

    This isolates the mapping/exploration stack from the decision policy:
    with nothing to decide, a correct frontier loop must sweep the whole
    apartment."""
    from .episode import Episode
    from .worldgen import sample_goal

    spec = generate_apartment(world_seed, preset_gen(preset))
    goal, targets = sample_goal(spec, derive_seed(world_seed, "cov-goal"), 1)
    spec = spec.with_goal(targets)
    ep = Episode(spec, goal, derive_seed(world_seed, "coverage"),
                 step_limit=step_limit)
    for door in spec.doors:
        if not door.locked:
            ep.state.door_open[door.id] = True
    ep.state._rebuild_grids()
    ep.sense()

    # ground truth: reachable free cells with those doors open
    blocked = ep.state.blocked
    sx, sy = spec.spawn.cell(spec.resolution)
    dist = bfs_field(~blocked, np.array([sx], dtype=np.int64),
                     np.array([sy], dtype=np.int64))
    reachable = (dist >= 0) & ~blocked
    denom = int(reachable.sum())

    rng = np.random.default_rng(0)
    banned: set[tuple[int, int]] = set()
    last_unknown = -1
    while not ep.exhausted:
        occ = mp.to_occupancy(ep.pmap, "blocked")
        unknown_now = int((occ == 2).sum())
        if unknown_now != last_unknown:
            banned.clear()          # map grew; retry everything
            last_unknown = unknown_now
        cell = ep.state.pose.cell(spec.resolution)
        points, _ = detect_frontiers(occ, cell, spec.resolution)
        points = [p for p in points if p.cell not in banned]
        target, path = commit_frontier(ep, points, "nearest", rng, occ=occ)
        if target is None:
            break
        goto_frontier_path(ep, path, "teleport")
        # a visit that revealed nothing won't reveal more next time
        banned.add(target.cell)
    explored = (ep.pmap.cat == mp.CAT_FREE) | (ep.pmap.cat == mp.CAT_TRACE)
    covered = int((explored & reachable).sum())
    return covered / denom, ep.low_steps


# -- rendering ----------------------------------------------------------------

_PALETTE = {
    mp.CAT_UNEXPLORED: (0, 0, 0),
    mp.CAT_FREE: (60, 90, 200),
    mp.CAT_WALL: (40, 160, 70),
    mp.CAT_DOOR: (200, 140, 40),
    mp.CAT_CONTAINER: (200, 200, 60),
    mp.CAT_TARGET: (200, 60, 180),
    mp.CAT_FOUND: (150, 150, 150),
    mp.CAT_TRACE: (220, 40, 40),
}


def render_trajectory(env: SearchEnv, out_path: str) -> None:
    """Top-down PNG of the finished episode: the accumulated map in the
    fixed palette, grey discs on found targets, red circles on unfound
    goals, and a white dot at the final pose. One pixel per map cell."""
    from PIL import Image, ImageDraw

    pmap = env.episode.pmap
    cat = pmap.cat
    w, h = cat.shape
    rgb = np.zeros((w, h, 3), dtype=np.uint8)
    for code, color in _PALETTE.items():
        rgb[cat == code] = color
    # image rows run top to bottom; map y runs up
    img = Image.fromarray(rgb.transpose(1, 0, 2)[::-1])
    draw = ImageDraw.Draw(img)
    res = env.spec.resolution
    rad = wd.FOUND_RADIUS / res

    def to_px(ix: float, iy: float) -> tuple[float, float]:
        return ix, h - 1 - iy

    for tgt in env.spec.targets:
        px, py = to_px(*tgt.cell)
        if env.episode.state.found[tgt.id]:
            draw.ellipse([px - 4, py - 4, px + 4, py + 4],
                         fill=(150, 150, 150))
        else:
            draw.ellipse([px - rad, py - rad, px + rad, py + rad],
                         outline=(255, 0, 0), width=2)
    ax, ay = env.episode.state.pose.cell(res)
    px, py = to_px(ax, ay)
    draw.ellipse([px - 3, py - 3, px + 3, py + 3], fill=(255, 255, 255))
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    img.save(out_path, format="PNG")
