"""PPO with clipped surrogate, GAE, and Adam, collecting on-policy
experience from parallel environments whose robots share one policy.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .env import CrowdNavEnv
from .net import (
    ConvNet,
    action_from_index,
    gaussian_log_prob_entropy,
    log_softmax,
    sample_discrete,
    sample_gaussian,
)
from .world import Action

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PpoConfig:
    lr_policy: float = 5e-5
    lr_value: float = 1e-3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 256
    entropy_coef: float = 0.01
    grad_norm_clip: float = 0.5
    buffer_size: int = 2048
    mode: str = "discrete"

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0 and 0.0 < self.gae_lambda <= 1.0):
            raise ValueError("gamma in (0,1) and lambda in (0,1] required")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")
        if self.mode not in ("discrete", "continuous"):
            raise ValueError(f"unknown mode {self.mode!r}")


def compute_gae(rewards, values, dones, bootstrap_value, gamma, lam):
    """delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t;
    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}; returns = A + V."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values, dones must have identical shapes")
    n = rewards.shape[0]
    adv = np.zeros(n, dtype=np.float64)
    next_value = float(bootstrap_value)
    running = 0.0
    for t in range(n - 1, -1, -1):
        mask = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * mask - values[t]
        running = delta + gamma * lam * mask * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


# -- Adam -----------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(adam: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
    """Standard bias-corrected Adam update, in place; returns params."""
    adam.t += 1
    b1, b2 = adam.beta1, adam.beta2
    c1 = 1.0 - b1**adam.t
    c2 = 1.0 - b2**adam.t
    for k, g in grads.items():
        g = g.astype(params[k].dtype, copy=False)
        adam.m[k] = b1 * adam.m[k] + (1.0 - b1) * g
        adam.v[k] = b2 * adam.v[k] + (1.0 - b2) * g * g
        m_hat = adam.m[k] / c1
        v_hat = adam.v[k] / c2
        params[k] -= lr * m_hat / (np.sqrt(v_hat) + adam.eps)
    return params


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# -- rollout storage --------------------------------------------------------------


class RolloutBuffer:
    """Fixed-capacity transition store across parallel envs; per-(env,robot)
    streams stay contiguous in time because envs append in a fixed order."""

    def __init__(self, capacity: int, mode: str, map_shape=(4, 48, 48), goal_dim=3):
        self.capacity = capacity
        self.mode = mode
        self.maps = np.zeros((capacity, *map_shape), dtype=np.float32)
        self.goals = np.zeros((capacity, goal_dim), dtype=np.float32)
        if mode == "discrete":
            self.actions = np.zeros(capacity, dtype=np.int64)
        else:
            self.actions = np.zeros((capacity, 2), dtype=np.float64)
        self.log_probs = np.zeros(capacity, dtype=np.float64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.values = np.zeros(capacity, dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=bool)
        self.env_ids = np.zeros(capacity, dtype=np.int16)
        self.robot_ids = np.zeros(capacity, dtype=np.int16)
        self.advantages = np.zeros(capacity, dtype=np.float64)
        self.returns = np.zeros(capacity, dtype=np.float64)
        self.pos = 0

    def reset(self):
        self.pos = 0

    @property
    def full(self) -> bool:
        return self.pos >= self.capacity

    def add(self, maps, goal, action, log_prob, reward, value, done, env_id, robot_id):
        i = self.pos
        if i >= self.capacity:
            raise IndexError("rollout buffer is full")
        self.maps[i] = maps
        self.goals[i] = goal
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.rewards[i] = reward
        self.values[i] = value
        self.dones[i] = done
        self.env_ids[i] = env_id
        self.robot_ids[i] = robot_id
        self.pos += 1

    def stream_indices(self):
        """Time-ordered index arrays per (env, robot) stream."""
        keys = self.env_ids[: self.pos].astype(np.int64) * 10_000 + self.robot_ids[: self.pos]
        out = {}
        for key in np.unique(keys):
            out[(int(key // 10_000), int(key % 10_000))] = np.nonzero(keys == key)[0]
        return out

    def compute_advantages(self, bootstraps: dict, gamma: float, lam: float):
        """GAE per stream; bootstraps maps (env_id, robot_id) to V(s_next)
        for streams whose final stored transition is not terminal."""
        if not self.full:
            raise RuntimeError("advantages are computed only on a full buffer")
        for key, idx in self.stream_indices().items():
            boot = 0.0 if self.dones[idx[-1]] else float(bootstraps.get(key, 0.0))
            adv, ret = compute_gae(
                self.rewards[idx], self.values[idx], self.dones[idx], boot, gamma, lam
            )
            self.advantages[idx] = adv
            self.returns[idx] = ret


# -- collection --------------------------------------------------------------------


@dataclass
class EpisodeStats:
    reward: float
    length: int
    outcome: str


class RolloutCollector:
    """Steps the parallel envs in lockstep under the current policy and
    fills the buffer round-robin; episodes reset automatically."""

    def __init__(self, envs: list[CrowdNavEnv], mode: str, seed: int):
        self.envs = envs
        self.mode = mode
        self.rng = np.random.default_rng(seed)
        self.obs = [env.reset() for env in envs]
        self._acc_reward = [dict() for _ in envs]
        self._acc_len = [dict() for _ in envs]
        self.completed: deque[EpisodeStats] = deque(maxlen=200)

    def _policy_rows(self):
        """(env_idx, robot_idx, maps, goal) for every live robot."""
        rows = []
        for e, env in enumerate(self.envs):
            for r in env.live_robots():
                ob = self.obs[e][r]
                rows.append((e, r, ob.maps_tensor(), ob.goal_vector()))
        return rows

    def collect(self, policy: ConvNet, value: ConvNet, buffer: RolloutBuffer) -> dict:
        """Fill the buffer; returns bootstrap values per unfinished stream."""
        buffer.reset()
        while not buffer.full:
            rows = self._policy_rows()
            maps = np.stack([r[2] for r in rows])
            goals = np.stack([r[3] for r in rows])
            head, _ = policy.forward(maps, goals)
            vals, _ = value.forward(maps, goals)
            vals = vals[:, 0]

            if self.mode == "discrete":
                idx, logp = sample_discrete(head, self.rng)
                stored = idx
                env_actions = [action_from_index(int(i)) for i in idx]
            else:
                raw, clipped, logp = sample_gaussian(head, policy.params["log_std"], self.rng)
                stored = raw
                env_actions = [Action(float(v), float(w)) for v, w in clipped]

            per_env: dict[int, dict[int, int]] = {}
            for k, (e, r, _, _) in enumerate(rows):
                per_env.setdefault(e, {})[r] = k

            for e, robot_rows in per_env.items():
                env = self.envs[e]
                actions = {r: env_actions[k] for r, k in robot_rows.items()}
                results = env.step(actions)
                for r, k in robot_rows.items():
                    res = results[r]
                    self._acc_reward[e][r] = self._acc_reward[e].get(r, 0.0) + res.reward
                    self._acc_len[e][r] = self._acc_len[e].get(r, 0) + 1
                    if not buffer.full:
                        buffer.add(
                            rows[k][2],
                            rows[k][3],
                            stored[k],
                            logp[k],
                            res.reward,
                            vals[k],
                            res.done,
                            e,
                            r,
                        )
                    if res.done:
                        self.completed.append(
                            EpisodeStats(self._acc_reward[e].pop(r), self._acc_len[e].pop(r), res.outcome)
                        )
                    if res.observation is not None:
                        self.obs[e][r] = res.observation
                if env.done:
                    self.obs[e] = env.reset()

        rows = self._policy_rows()
        if not rows:
            return {}
        maps = np.stack([r[2] for r in rows])
        goals = np.stack([r[3] for r in rows])
        vals, _ = value.forward(maps, goals)
        return {(e, r): float(vals[k, 0]) for k, (e, r, _, _) in enumerate(rows)}


# -- update -------------------------------------------------------------------------


def surrogate_loss_and_grad(head, log_std, actions, logp_old, advantages, cfg: PpoConfig):
    """Clipped PPO objective with entropy bonus for one minibatch.

    Returns (loss, d_head, d_log_std, stats).  Gradients are with respect to
    the policy head output (logits or action mean) and the standalone
    log-std block (continuous mode).
    """
    n = head.shape[0]
    if cfg.mode == "discrete":
        logp_all = log_softmax(head)
        logp_new = np.take_along_axis(logp_all, actions[:, None], axis=1)[:, 0]
        probs = np.exp(logp_all)
        entropy = -(probs * logp_all).sum(axis=1)
    else:
        logp_new, entropy = gaussian_log_prob_entropy(head, log_std, actions)

    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * advantages
    surrogate = np.minimum(unclipped, clipped)
    loss = -surrogate.mean() - cfg.entropy_coef * entropy.mean()

    # gradient flows only where the unclipped branch is active
    clip_hi = (advantages >= 0.0) & (ratio > 1.0 + cfg.clip_eps)
    clip_lo = (advantages < 0.0) & (ratio < 1.0 - cfg.clip_eps)
    active = ~(clip_hi | clip_lo)
    gcoef = np.where(active, -ratio * advantages, 0.0) / n  # d loss / d logp_new

    if cfg.mode == "discrete":
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), actions] = 1.0
        d_head = gcoef[:, None] * (onehot - probs)
        # entropy term: dH/dz_j = -p_j (log p_j + H)
        d_head += cfg.entropy_coef * probs * (logp_all + entropy[:, None]) / n
        d_log_std = None
    else:
        std = np.exp(log_std)
        z = (actions - head) / std
        d_head = gcoef[:, None] * (z / std)
        d_log_std = (gcoef[:, None] * (z * z - 1.0)).sum(axis=0) - cfg.entropy_coef * np.ones_like(
            log_std
        )

    stats = {
        "clip_fraction": float((np.abs(ratio - 1.0) > cfg.clip_eps).mean()),
        "approx_kl": float((logp_old - logp_new).mean()),
        "entropy": float(entropy.mean()),
        "ratio_mean": float(ratio.mean()),
    }
    return float(loss), d_head, d_log_std, stats


def value_loss_and_grad(v, returns):
    err = v[:, 0] - returns
    loss = float((err**2).mean())
    d_v = (2.0 * err / err.shape[0])[:, None]
    return loss, d_v


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(policy, value, policy_adam, value_adam, buffer: RolloutBuffer, cfg: PpoConfig, rng):
    """Epochs of shuffled minibatch updates; separate Adam steps for policy
    and value.  On a non-finite loss the whole update rolls back and is
    flagged in the returned stats."""
    n = buffer.capacity
    adv = normalize_advantages(buffer.advantages[:n].copy())
    snapshot = {k: p.copy() for k, p in policy.params.items()}
    snapshot_v = {k: p.copy() for k, p in value.params.items()}
    adam_snap = (
        {k: m.copy() for k, m in policy_adam.m.items()},
        {k: v.copy() for k, v in policy_adam.v.items()},
        policy_adam.t,
        {k: m.copy() for k, m in value_adam.m.items()},
        {k: v.copy() for k, v in value_adam.v.items()},
        value_adam.t,
    )

    agg: dict[str, list] = {
        "policy_loss": [],
        "value_loss": [],
        "clip_fraction": [],
        "approx_kl": [],
        "entropy": [],
    }
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            mb = perm[start : start + cfg.minibatch_size]
            maps = buffer.maps[mb]
            goals = buffer.goals[mb]
            head, cache = policy.forward(maps, goals)
            log_std = policy.params.get("log_std")
            p_loss, d_head, d_log_std, stats = surrogate_loss_and_grad(
                head, log_std, buffer.actions[mb], buffer.log_probs[mb], adv[mb], cfg
            )
            v_out, v_cache = value.forward(maps, goals)
            v_loss, d_v = value_loss_and_grad(v_out, buffer.returns[mb])

            if not (math.isfinite(p_loss) and math.isfinite(v_loss)):
                policy.params.update(snapshot)
                value.params.update(snapshot_v)
                log.warning("non-finite loss; PPO update rolled back")
                return {"aborted": True, "policy_loss": p_loss, "value_loss": v_loss}

            grads = policy.backward(d_head, cache)
            if d_log_std is not None:
                grads["log_std"] = d_log_std
            clip_grad_norm(grads, cfg.grad_norm_clip)
            adam_step(policy_adam, policy.params, grads, cfg.lr_policy)

            v_grads = value.backward(d_v, v_cache)
            clip_grad_norm(v_grads, cfg.grad_norm_clip)
            adam_step(value_adam, value.params, v_grads, cfg.lr_value)

            agg["policy_loss"].append(p_loss)
            agg["value_loss"].append(v_loss)
            agg["clip_fraction"].append(stats["clip_fraction"])
            agg["approx_kl"].append(stats["approx_kl"])
            agg["entropy"].append(stats["entropy"])

    out = {k: float(np.mean(v)) for k, v in agg.items()}
    out["aborted"] = False
    return out


# -- trainer ------------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    mean_reward: float
    success_rate: float
    episodes: int
    policy_loss: float
    value_loss: float
    clip_fraction: float
    approx_kl: float
    entropy: float

    def as_line(self) -> str:
        return (
            f"iter={self.iteration} mean_reward={self.mean_reward:.6f} "
            f"success_rate={self.success_rate:.6f} episodes={self.episodes} "
            f"policy_loss={self.policy_loss:.6f} value_loss={self.value_loss:.6f} "
            f"clip_fraction={self.clip_fraction:.6f} approx_kl={self.approx_kl:.6f} "
            f"entropy={self.entropy:.6f}"
        )


class Trainer:
    """One PPO run: collector + buffer + optimizers around the two nets."""

    def __init__(self, policy: ConvNet, value: ConvNet, envs, ppo_cfg: PpoConfig, seed: int):
        self.policy = policy
        self.value = value
        self.cfg = ppo_cfg
        self.collector = RolloutCollector(envs, ppo_cfg.mode, seed=seed)
        self.buffer = RolloutBuffer(ppo_cfg.buffer_size, ppo_cfg.mode)
        self.policy_adam = AdamState.for_params(policy.params)
        self.value_adam = AdamState.for_params(value.params)
        self.update_rng = np.random.default_rng(seed + 1)
        self.iteration = 0

    def run_iteration(self) -> IterationRecord:
        bootstraps = self.collector.collect(self.policy, self.value, self.buffer)
        self.buffer.compute_advantages(bootstraps, self.cfg.gamma, self.cfg.gae_lambda)
        stats = ppo_update(
            self.policy, self.value, self.policy_adam, self.value_adam, self.buffer, self.cfg,
            self.update_rng,
        )
        self.iteration += 1
        episodes = list(self.collector.completed)
        mean_reward = float(np.mean([e.reward for e in episodes])) if episodes else 0.0
        success = (
            float(np.mean([1.0 if e.outcome == "reached" else 0.0 for e in episodes]))
            if episodes
            else 0.0
        )
        return IterationRecord(
            iteration=self.iteration,
            mean_reward=mean_reward,
            success_rate=success,
            episodes=len(episodes),
            policy_loss=stats.get("policy_loss", math.nan),
            value_loss=stats.get("value_loss", math.nan),
            clip_fraction=stats.get("clip_fraction", math.nan),
            approx_kl=stats.get("approx_kl", math.nan),
            entropy=stats.get("entropy", math.nan),
        )
