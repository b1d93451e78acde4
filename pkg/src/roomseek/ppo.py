"""PPO for the search SMDP, written directly in numpy.

The learner is standard clipped-surrogate PPO with one twist: transitions
carry a duration n (low-level steps consumed by the chosen subpolicy), so
GAE discounts each step by gamma**n instead of a fixed gamma. With all
durations 1 it reduces exactly to the textbook recursion, which the tests
exploit as an oracle.

Gradients come from the hand-written backward passes in nn.py; a central
finite-difference check over every parameter guards the whole chain.
"""

from __future__ import annotations

import csv
import json
import multiprocessing as mp_proc
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .nn import ActorCritic, Adam, NetConfig, net_meta, restore_model, save_checkpoint
from .policy import encode_compact, expand_img, mask_and_sample
from .seeding import derive_seed, stream
from .smdp import EnvConfig, SearchEnv, adaptive_gamma
from .worldgen import preset_gen

N_ACTIONS = 12
_NEG = -1e8


class RolloutBuffer:
    """Fixed-capacity store for one update's worth of SMDP transitions.

    Observations are kept compact (category codes + marker bits) and only
    expanded to one-hot floats per minibatch; a full one-hot buffer would
    be ~250 MB."""

    def __init__(self, capacity: int, vec_dim: int = 38):
        self.capacity = capacity
        self.cat = np.zeros((capacity, 56, 56), dtype=np.uint8)
        self.marks = np.zeros((capacity, 2, 56, 56), dtype=np.uint8)
        self.vec = np.zeros((capacity, vec_dim), dtype=np.float32)
        self.mask = np.zeros((capacity, N_ACTIONS), dtype=np.uint8)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.logp = np.zeros(capacity, dtype=np.float64)
        self.value = np.zeros(capacity, dtype=np.float64)
        self.reward = np.zeros(capacity, dtype=np.float64)
        self.n = np.zeros(capacity, dtype=np.int64)
        self.done = np.zeros(capacity, dtype=np.uint8)
        self.size = 0

    def add(self, cat, marks, vec, mask, action, logp, value, reward, n,
            done) -> None:
        i = self.size
        if i >= self.capacity:
            raise ValueError("rollout buffer full")
        self.cat[i] = cat
        self.marks[i] = marks
        self.vec[i] = vec
        self.mask[i] = mask
        self.action[i] = action
        self.logp[i] = logp
        self.value[i] = value
        self.reward[i] = reward
        self.n[i] = n
        self.done[i] = done
        self.size = i + 1

    def reset(self) -> None:
        self.size = 0


def smdp_gae(reward: np.ndarray, value: np.ndarray, n: np.ndarray,
             done: np.ndarray, last_value: float, gamma: float,
             lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Duration-aware GAE. Per transition i the effective discount is
    gamma**n_i; done cuts both the bootstrap and the advantage chain.
    Returns (advantages, returns)."""
    t = len(reward)
    adv = np.zeros(t, dtype=np.float64)
    gae = 0.0
    for i in range(t - 1, -1, -1):
        d = gamma ** n[i]
        cont = 0.0 if done[i] else 1.0
        next_v = last_value if i == t - 1 else value[i + 1]
        delta = reward[i] + d * next_v * cont - value[i]
        gae = delta + d * lam * cont * gae
        adv[i] = gae
    return adv, adv + value


def ppo_loss(model: ActorCritic, img: np.ndarray, vec: np.ndarray,
             mask: np.ndarray, action: np.ndarray, old_logp: np.ndarray,
             adv: np.ndarray, ret: np.ndarray, clip: float = 0.1,
             v_coef: float = 0.5, e_coef: float = 0.005
             ) -> tuple[float, dict[str, np.ndarray], dict]:
    """Clipped-surrogate loss over the masked action distribution, plus
    analytic gradients for every parameter.

    Distribution math runs in float64 regardless of model dtype; the
    resulting logit/value gradients are cast back before the network
    backward pass."""
    logits, value, cache = model.forward(img, vec)
    b = len(action)
    rows = np.arange(b)

    ml = np.where(mask > 0, logits.astype(np.float64), _NEG)
    z = ml - ml.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp_all = z - lse
    p = np.exp(logp_all)
    lp_a = logp_all[rows, action]

    ratio = np.exp(lp_a - old_logp)
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    pol_loss = -np.minimum(s1, s2).mean()

    ent = -(p * logp_all).sum(axis=1)
    ent_mean = ent.mean()

    verr = value.astype(np.float64) - ret
    v_loss = (verr * verr).mean()

    loss = pol_loss + v_coef * v_loss - e_coef * ent_mean

    # d pol / d logp(a): active on the unclipped branch or inside the band
    inside = (ratio > 1.0 - clip) & (ratio < 1.0 + clip)
    active = (s1 <= s2) | inside
    dlp = np.where(active, ratio * adv, 0.0) * (-1.0 / b)
    dml = dlp[:, None] * (-p)
    dml[rows, action] += dlp
    # entropy term: dH/dz_j = -p_j (logp_j + H)
    dml += (e_coef / b) * p * (logp_all + ent[:, None])
    dlogits = np.where(mask > 0, dml, 0.0).astype(logits.dtype)
    dvalue = (v_coef * 2.0 / b) * verr.astype(value.dtype)

    grads = model.backward(cache, dlogits, dvalue)
    stats = {
        "pi_loss": float(pol_loss),
        "v_loss": float(v_loss),
        "entropy": float(ent_mean),
        "kl": float(np.mean(old_logp - lp_a)),
        "clipfrac": float(np.mean(np.abs(ratio - 1.0) > clip)),
    }
    return float(loss), grads, stats


def ppo_update(model: ActorCritic, opt: Adam, buf: RolloutBuffer,
               adv: np.ndarray, ret: np.ndarray, rng: np.random.Generator,
               epochs: int = 4, minibatches: int = 128, clip: float = 0.1,
               v_coef: float = 0.5, e_coef: float = 0.005) -> dict:
    """Run the PPO epochs over shuffled minibatches. Advantages are
    normalized once per update. A non-finite loss aborts the update and
    rolls the parameters back to their pre-update values."""
    t = buf.size
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    snapshot = {k: v.copy() for k, v in model.params.items()}
    agg: dict[str, float] = {}
    batches = 0
    mb_size = max(1, t // minibatches)
    for _ in range(epochs):
        perm = rng.permutation(t)
        for s in range(0, t, mb_size):
            idx = perm[s:s + mb_size]
            img = expand_img(buf.cat[idx], buf.marks[idx])
            loss, grads, stats = ppo_loss(
                model, img, buf.vec[idx], buf.mask[idx], buf.action[idx],
                buf.logp[idx], adv[idx], ret[idx],
                clip=clip, v_coef=v_coef, e_coef=e_coef)
            if not np.isfinite(loss):
                for k, v in snapshot.items():
                    model.params[k] = v
                return {"aborted": True, "loss": loss}
            opt.step(model.params, grads)
            for k, v in stats.items():
                agg[k] = agg.get(k, 0.0) + v
            batches += 1
    out = {k: v / batches for k, v in agg.items()}
    out["aborted"] = False
    return out


def gradient_check(model: ActorCritic, batch: dict, h: float = 1e-5,
                   per_tensor: int | None = None) -> float:
    """Central finite differences of the full PPO loss against the
    analytic gradients. Checks every entry unless per_tensor caps it.
    The model should be built with dtype float64."""
    args = (batch["img"], batch["vec"], batch["mask"], batch["action"],
            batch["old_logp"], batch["adv"], batch["ret"])
    _, grads, _ = ppo_loss(model, *args)

    def loss_only() -> float:
        logits, value, _ = model.forward(batch["img"], batch["vec"])
        b = len(batch["action"])
        rows = np.arange(b)
        ml = np.where(batch["mask"] > 0, logits.astype(np.float64), _NEG)
        z = ml - ml.max(axis=1, keepdims=True)
        logp_all = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        p = np.exp(logp_all)
        lp_a = logp_all[rows, batch["action"]]
        ratio = np.exp(lp_a - batch["old_logp"])
        s1 = ratio * batch["adv"]
        s2 = np.clip(ratio, 0.9, 1.1) * batch["adv"]
        pol = -np.minimum(s1, s2).mean()
        ent = -(p * logp_all).sum(axis=1).mean()
        verr = value.astype(np.float64) - batch["ret"]
        return float(pol + 0.5 * (verr * verr).mean() - 0.005 * ent)

    worst = 0.0
    for key in sorted(model.params):
        param = model.params[key]
        flat = param.reshape(-1)
        idxs = range(flat.size)
        if per_tensor is not None and flat.size > per_tensor:
            rng = stream(0, "gradcheck", key)
            idxs = sorted(rng.choice(flat.size, per_tensor, replace=False))
        gflat = grads[key].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_only()
            flat[i] = orig - h
            lm = loss_only()
            flat[i] = orig
            num = (lp - lm) / (2.0 * h)
            ana = float(gflat[i])
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
            worst = max(worst, rel)
    return worst


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    name: str = "run"
    out_dir: str = "runs"
    preset: str = "small"
    seed: int = 0
    masking: bool = True
    use_local: bool = True
    use_frontier: bool = True
    frontier_strategy: str = "nearest"
    k_max: int = 2
    n_avg: int = 7
    total_transitions: int = 300_000
    rollout: int = 2048
    minibatches: int = 128
    epochs: int = 4
    clip: float = 0.1
    lr: float = 5e-4
    ent_coef: float = 0.005
    v_coef: float = 0.5
    lam: float = 0.95
    workers: int = 1
    world_pool: int = 64
    eval_every: int = 8
    eval_quick: int = 50
    eval_full: int = 200
    threshold: float = 0.8
    stop_at_threshold: bool = True
    init_checkpoint: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        fields = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - fields
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def train_env_config(cfg: TrainConfig) -> EnvConfig:
    return EnvConfig(gen=preset_gen(cfg.preset), k_max=cfg.k_max,
                     mode="train", masking=cfg.masking,
                     use_local=cfg.use_local, use_frontier=cfg.use_frontier,
                     frontier_strategy=cfg.frontier_strategy,
                     n_avg=cfg.n_avg, world_cache=cfg.world_pool)


def eval_env_config(cfg: TrainConfig) -> EnvConfig:
    return EnvConfig(gen=preset_gen(cfg.preset), k_max=cfg.k_max,
                     mode="eval", masking=cfg.masking,
                     use_local=cfg.use_local, use_frontier=cfg.use_frontier,
                     frontier_strategy=cfg.frontier_strategy,
                     n_avg=cfg.n_avg, world_cache=256)


def heldout_seeds(preset: str, index: int) -> tuple[int, int]:
    """Evaluation episode schedule, disjoint from every training stream."""
    return (derive_seed("heldout", preset, "world", index),
            derive_seed("heldout", preset, "goal", index))


class RolloutCollector:
    """Owns one training env and drives it with the current policy,
    filling a buffer with a fixed number of transitions per call.
    Episodes persist across calls; worlds cycle through a fixed pool so
    the generator cache stays warm."""

    def __init__(self, cfg: TrainConfig, worker_id: int = 0):
        self.cfg = cfg
        self.wid = worker_id
        self.env = SearchEnv(train_env_config(cfg))
        self.rng = stream(cfg.seed, "sample", worker_id)
        self.ep_index = 0
        self.obs = None
        self.ep_return = 0.0
        self.ep_decisions = 0
        self.instant: list[dict] = []

    def _fresh_episode(self):
        while True:
            i = self.ep_index
            self.ep_index += 1
            ws = derive_seed(self.cfg.seed, "train-world", self.wid,
                             i % self.cfg.world_pool)
            gs = derive_seed(self.cfg.seed, "train-goal", self.wid, i)
            obs = self.env.reset(ws, gs)
            self.ep_return = 0.0
            self.ep_decisions = 0
            if not self.env.done:
                return obs
            # everything was already found at spawn; log and move on
            self.instant.append({"ret": 0.0, "steps": 0, "decisions": 0,
                                 "success": True})

    def collect(self, model: ActorCritic, buf: RolloutBuffer
                ) -> tuple[float, list[dict]]:
        """Fill `buf` to capacity. Returns (bootstrap value, episode
        stats for episodes that finished inside this window)."""
        cfg = self.cfg
        episodes: list[dict] = list(self.instant)
        self.instant = []
        if self.obs is None or self.env.done:
            self.obs = self._fresh_episode()
        ones = np.ones(N_ACTIONS, dtype=np.uint8)
        while buf.size < buf.capacity:
            cat, marks, vec = encode_compact(self.obs)
            logits, value, _ = model.forward(
                expand_img(cat[None], marks[None]), vec[None])
            mask = self.env.valid_action_mask() if cfg.masking else ones
            a, logp = mask_and_sample(logits[0], mask, self.rng, "sample")
            obs2, r, n, done, info = self.env.step(a)
            buf.add(cat, marks, vec, mask, a, logp, float(value[0]), r, n,
                    done)
            self.ep_return += r
            self.ep_decisions += 1
            if done:
                episodes.append({"ret": self.ep_return,
                                 "steps": self.env.episode.low_steps,
                                 "decisions": self.ep_decisions,
                                 "success": bool(self.env.success)})
                self.obs = self._fresh_episode()
            else:
                self.obs = obs2
        cat, marks, vec = encode_compact(self.obs)
        _, value, _ = model.forward(expand_img(cat[None], marks[None]),
                                    vec[None])
        return float(value[0]), episodes


def _worker_main(cfg_dict: dict, worker_id: int, chunk: int, start_ep: int,
                 conn) -> None:
    """Rollout worker process: receives parameters, returns one chunk of
    transitions plus its bootstrap value and episode stats."""
    cfg = TrainConfig.from_dict(cfg_dict)
    collector = RolloutCollector(cfg, worker_id=worker_id)
    collector.ep_index = start_ep
    model = ActorCritic(NetConfig(), seed=0)
    buf = RolloutBuffer(chunk)
    while True:
        msg = conn.recv()
        if msg[0] == "stop":
            conn.close()
            return
        params = msg[1]
        for k in model.params:
            model.params[k][...] = params[k]
        buf.reset()
        last_value, episodes = collector.collect(model, buf)
        conn.send({
            "cat": buf.cat, "marks": buf.marks, "vec": buf.vec,
            "mask": buf.mask, "action": buf.action, "logp": buf.logp,
            "value": buf.value, "reward": buf.reward, "n": buf.n,
            "done": buf.done, "last_value": last_value,
            "episodes": episodes, "ep_index": collector.ep_index,
        })


def evaluate_policy(model: ActorCritic, env: SearchEnv, preset: str,
                    episodes: int, masking: bool = True) -> float:
    """Success rate of the argmax policy on the held-out schedule."""
    ones = np.ones(N_ACTIONS, dtype=np.uint8)
    wins = 0
    for i in range(episodes):
        ws, gs = heldout_seeds(preset, i)
        obs = env.reset(ws, gs)
        while not env.done:
            cat, marks, vec = encode_compact(obs)
            logits, _, _ = model.forward(expand_img(cat[None], marks[None]),
                                         vec[None])
            mask = env.valid_action_mask() if masking else ones
            a, _ = mask_and_sample(logits[0], mask, None, "argmax")
            obs, _, _, _, _ = env.step(a)
        wins += int(env.success)
    return wins / episodes


class Trainer:
    """Single-process PPO driver: collect, update, periodically evaluate,
    checkpoint, and log one CSV row per update. Stops early once the
    full held-out evaluation clears the configured threshold."""

    def __init__(self, cfg: TrainConfig):
        if cfg.workers < 1 or cfg.rollout % cfg.workers:
            raise ValueError("rollout must divide evenly across workers")
        self.cfg = cfg
        os.makedirs(cfg.out_dir, exist_ok=True)
        self.gamma = adaptive_gamma(cfg.n_avg)
        if cfg.init_checkpoint:
            self.model, meta, _ = restore_model(cfg.init_checkpoint)
            if self.model.cfg.dtype != "float32":
                raise ValueError("expected a float32 training checkpoint")
        else:
            self.model = ActorCritic(NetConfig(), seed=cfg.seed)
        self.opt = Adam(self.model.params, lr=cfg.lr)
        self.update_rng = stream(cfg.seed, "ppo-shuffle")
        self.collector = (RolloutCollector(cfg, worker_id=0)
                          if cfg.workers == 1 else None)
        self._procs: list | None = None
        self._worker_ep = [0] * cfg.workers
        self.eval_env = SearchEnv(eval_env_config(cfg))
        self.transitions = 0
        self.updates = 0
        self.threshold_transitions: int | None = None
        self.best_eval = -1.0
        self._csv_path = os.path.join(cfg.out_dir, f"{cfg.name}.csv")
        self._ckpt_path = os.path.join(cfg.out_dir, f"{cfg.name}.ckpt")
        self._best_path = os.path.join(cfg.out_dir, f"{cfg.name}.best.ckpt")

    # -- persistence -------------------------------------------------------

    def _meta(self) -> dict:
        if self.collector is not None:
            ep_index = [self.collector.ep_index]
            sample_rng = self.collector.rng.bit_generator.state
        else:
            ep_index = list(self._worker_ep)
            sample_rng = None
        return {**net_meta(self.model.cfg),
                "config": asdict(self.cfg),
                "updates": self.updates,
                "transitions": self.transitions,
                "ep_index": ep_index,
                "sample_rng": sample_rng,
                "update_rng": self.update_rng.bit_generator.state,
                "threshold_transitions": self.threshold_transitions,
                "best_eval": self.best_eval}

    def save(self, path: str | None = None) -> None:
        save_checkpoint(path or self._ckpt_path, self.model.params,
                        self._meta(), self.opt)

    @classmethod
    def resume(cls, path: str) -> "Trainer":
        """Continue training from a checkpoint at the last update boundary.
        Any episode that was in flight is abandoned; the schedule picks up
        at the next episode index."""
        model, meta, opt = restore_model(path)
        cfg = TrainConfig.from_dict(meta["config"])
        tr = cls(cfg)
        tr.model = model
        tr.opt = opt if opt is not None else Adam(model.params, lr=cfg.lr)
        tr.transitions = meta["transitions"]
        tr.updates = meta["updates"]
        ep_index = meta["ep_index"]
        if tr.collector is not None:
            tr.collector.ep_index = ep_index[0]
            if meta.get("sample_rng"):
                tr.collector.rng.bit_generator.state = meta["sample_rng"]
        else:
            tr._worker_ep = list(ep_index)
        tr.update_rng.bit_generator.state = meta["update_rng"]
        tr.threshold_transitions = meta.get("threshold_transitions")
        tr.best_eval = meta.get("best_eval", -1.0)
        return tr

    # -- rollout workers ------------------------------------------------------

    def _start_workers(self) -> None:
        chunk = self.cfg.rollout // self.cfg.workers
        ctx = mp_proc.get_context("fork")
        self._procs = []
        for wid in range(self.cfg.workers):
            parent, child = ctx.Pipe()
            proc = ctx.Process(target=_worker_main,
                               args=(asdict(self.cfg), wid, chunk,
                                     self._worker_ep[wid], child),
                               daemon=True)
            proc.start()
            child.close()
            self._procs.append((proc, parent))

    def close(self) -> None:
        if self._procs:
            for proc, conn in self._procs:
                try:
                    conn.send(("stop",))
                    conn.close()
                except (BrokenPipeError, OSError):
                    pass
                proc.join(timeout=10)
            self._procs = None

    def _collect(self, buf: RolloutBuffer
                 ) -> tuple[np.ndarray, np.ndarray, list[dict]]:
        """Fill the buffer and return (advantages, returns, episode stats).
        Advantage chains never cross worker-chunk boundaries."""
        cfg = self.cfg
        if cfg.workers == 1:
            last_value, episodes = self.collector.collect(self.model, buf)
            adv, ret = smdp_gae(buf.reward[:buf.size], buf.value[:buf.size],
                                buf.n[:buf.size], buf.done[:buf.size],
                                last_value, self.gamma, cfg.lam)
            return adv, ret, episodes
        if self._procs is None:
            self._start_workers()
        for _, conn in self._procs:
            conn.send(("collect", self.model.params))
        episodes: list[dict] = []
        advs, rets = [], []
        for wid, (_, conn) in enumerate(self._procs):
            r = conn.recv()
            c = len(r["action"])
            s = buf.size
            buf.cat[s:s + c] = r["cat"]
            buf.marks[s:s + c] = r["marks"]
            buf.vec[s:s + c] = r["vec"]
            buf.mask[s:s + c] = r["mask"]
            buf.action[s:s + c] = r["action"]
            buf.logp[s:s + c] = r["logp"]
            buf.value[s:s + c] = r["value"]
            buf.reward[s:s + c] = r["reward"]
            buf.n[s:s + c] = r["n"]
            buf.done[s:s + c] = r["done"]
            buf.size = s + c
            a, rt = smdp_gae(r["reward"], r["value"], r["n"], r["done"],
                             r["last_value"], self.gamma, cfg.lam)
            advs.append(a)
            rets.append(rt)
            episodes.extend(r["episodes"])
            self._worker_ep[wid] = r["ep_index"]
        return np.concatenate(advs), np.concatenate(rets), episodes

    def _log_row(self, row: dict) -> None:
        new = not os.path.exists(self._csv_path)
        with open(self._csv_path, "a", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(row))
            if new:
                w.writeheader()
            w.writerow(row)

    # -- main loop -----------------------------------------------------------

    def run(self, verbose: bool = False) -> dict:
        cfg = self.cfg
        buf = RolloutBuffer(cfg.rollout)
        t0 = time.monotonic()
        try:
            return self._run_loop(buf, t0, verbose)
        finally:
            self.close()

    def _run_loop(self, buf: RolloutBuffer, t0: float,
                  verbose: bool) -> dict:
        cfg = self.cfg
        while self.transitions < cfg.total_transitions:
            buf.reset()
            adv, ret, episodes = self._collect(buf)
            stats = ppo_update(self.model, self.opt, buf, adv, ret,
                               self.update_rng, epochs=cfg.epochs,
                               minibatches=cfg.minibatches, clip=cfg.clip,
                               v_coef=cfg.v_coef, e_coef=cfg.ent_coef)
            if stats.get("aborted"):
                # keep the last finite state on disk and bail out
                self.save()
                return {"aborted": True, "transitions": self.transitions}
            self.transitions += buf.size
            self.updates += 1

            row = {"update": self.updates, "transitions": self.transitions,
                   "wall_s": round(time.monotonic() - t0, 1),
                   "pi_loss": round(stats["pi_loss"], 6),
                   "v_loss": round(stats["v_loss"], 6),
                   "entropy": round(stats["entropy"], 4),
                   "kl": round(stats["kl"], 6),
                   "clipfrac": round(stats["clipfrac"], 4),
                   "episodes": len(episodes),
                   "ep_return": round(float(np.mean([e["ret"] for e in episodes])), 3) if episodes else "",
                   "ep_steps": round(float(np.mean([e["steps"] for e in episodes])), 1) if episodes else "",
                   "train_sr": round(float(np.mean([e["success"] for e in episodes])), 3) if episodes else "",
                   "eval_sr": "", "eval_n": ""}

            if self.updates % cfg.eval_every == 0:
                sr = evaluate_policy(self.model, self.eval_env, cfg.preset,
                                     cfg.eval_quick, cfg.masking)
                n_eval = cfg.eval_quick
                # cheap screen first; confirm on the full held-out set
                # before declaring the threshold reached
                if sr >= cfg.threshold and cfg.eval_full > cfg.eval_quick:
                    sr = evaluate_policy(self.model, self.eval_env,
                                         cfg.preset, cfg.eval_full,
                                         cfg.masking)
                    n_eval = cfg.eval_full
                row["eval_sr"] = round(sr, 3)
                row["eval_n"] = n_eval
                if sr > self.best_eval:
                    self.best_eval = sr
                    save_checkpoint(self._best_path, self.model.params,
                                    self._meta(), self.opt)
                self.save()
                confirmed = sr >= cfg.threshold and n_eval >= max(
                    cfg.eval_quick, cfg.eval_full)
                if confirmed:
                    if self.threshold_transitions is None:
                        self.threshold_transitions = self.transitions
                        self.save()
                    if cfg.stop_at_threshold:
                        self._log_row(row)
                        break
            self._log_row(row)
            if verbose:
                print(f"update {self.updates} transitions {self.transitions} "
                      f"train_sr {row['train_sr']} eval {row['eval_sr']}",
                      flush=True)
        self.save()
        return {"aborted": False, "transitions": self.transitions,
                "updates": self.updates,
                "threshold_transitions": self.threshold_transitions,
                "best_eval": self.best_eval,
                "checkpoint": self._ckpt_path}


def train_from_config(d: dict, verbose: bool = False) -> dict:
    cfg = TrainConfig.from_dict(d)
    trainer = Trainer(cfg)
    result = trainer.run(verbose=verbose)
    with open(os.path.join(cfg.out_dir, f"{cfg.name}.result.json"),
              "w") as f:
        json.dump(result, f, indent=1, sort_keys=True)
    return result
