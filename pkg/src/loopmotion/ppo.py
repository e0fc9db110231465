"""PPO for the tracking policy: corpus-replay pretraining and closed-loop
fine-tuning with the planner frozen.

Rollouts fan out over independent environments (one SimWorld each); the
update phase is exclusive. A single policy is shared by all tasks; the only
task information it ever sees is the tracker state itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .config import Config
from .errors import ShapeError, SimulationError
from .loop import TASK_KINDS, ClosedLoopSession, TaskSpec
from .motion import GlobalMotion
from .planner import DiPlanner
from .simworld import SimWorld
from .tracker import TrackingPolicy, build_state, reset_check, tracking_reward


class ReplayEnv:
    """Tracks corpus clips converted to world-frame references."""

    def __init__(self, skeleton, config: Config, references: list[GlobalMotion],
                 rng: np.random.Generator):
        self.skeleton = skeleton
        self.cfg = config
        self.references = references
        self.rng = rng
        self.world = SimWorld(skeleton, config.sim, config.objects)
        self.ref: GlobalMotion | None = None
        self.idx = 0
        self.task = "replay"
        self.reset()

    def reset(self):
        self.ref = self.references[self.rng.integers(len(self.references))]
        self.world.reset_to_pose(self.ref.positions[0], self.ref.velocities[0])
        self.idx = 1 if len(self.ref) > 1 else 0

    def observe(self) -> np.ndarray:
        return build_state(self.ref.frame(self.idx), self.world.snapshot())

    def step(self, action: np.ndarray):
        ref = self.ref.frame(self.idx)
        try:
            self.world.control_step(ref.joint_pos + action)
        except SimulationError:
            return 0.0, True, {"aborted": True, "task": self.task}
        frame = self.world.snapshot()
        reward = tracking_reward(ref, frame, action,
                                 self.cfg.tracker.k_r, self.cfg.tracker.w_e)
        self.idx += 1
        failed = reset_check(ref, frame, self.cfg.tracker.reset_threshold)
        done = failed or self.idx >= len(self.ref)
        return reward, done, {"task": self.task, "failed": failed,
                              "success": done and not failed}


class ClosedLoopEnv:
    """Samples a task uniformly per episode and runs the full loop."""

    def __init__(self, planner: DiPlanner, config: Config, rng: np.random.Generator,
                 tasks=TASK_KINDS):
        self.planner = planner
        self.cfg = config
        self.rng = rng
        self.tasks = tasks
        self.session: ClosedLoopSession | None = None
        self.task = ""
        self.reset()

    def reset(self):
        kind = self.tasks[self.rng.integers(len(self.tasks))]
        self.task = kind
        hold = 5 if kind in ("sit", "getup") else 1
        seed = int(self.rng.integers(0, 2 ** 62))
        self.session = ClosedLoopSession(self.planner, self.cfg,
                                         TaskSpec(kind, done_hold=hold), seed)

    def observe(self) -> np.ndarray:
        return self.session.observe()

    def step(self, action: np.ndarray):
        reward, done, info = self.session.step(action)
        info.setdefault("task", self.task)
        if done:
            info.setdefault("success", self.session.log.success)
            info.setdefault("failed", self.session.log.failed)
        return reward, done, info


@dataclass
class RolloutBatch:
    states: np.ndarray       # (N, S)
    raw_actions: np.ndarray  # (N, A) pre-clamp Gaussian samples
    log_probs: np.ndarray    # (N,)
    rewards: np.ndarray      # (N,)
    values: np.ndarray       # (N,)
    dones: np.ndarray        # (N,) bool
    advantages: np.ndarray   # (N,), normalized
    returns: np.ndarray      # (N,)
    episodes: list = field(default_factory=list)  # (task, success, failed)

    def __len__(self) -> int:
        return self.states.shape[0]


def compute_gae(rewards, values, dones, last_values, gamma: float, lam: float):
    """rewards/values/dones are (T, E); last_values (E,)."""
    t_len, n_env = rewards.shape
    adv = np.zeros((t_len, n_env), dtype=np.float64)
    running = np.zeros(n_env)
    next_values = last_values
    for t in range(t_len - 1, -1, -1):
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * alive - values[t]
        running = delta + gamma * lam * alive * running
        adv[t] = running
        next_values = values[t]
    returns = adv + values
    return adv, returns


def collect_rollouts(policy: TrackingPolicy, envs: list, horizon: int,
                     generator: torch.Generator, gamma: float, lam: float) -> RolloutBatch:
    """Gather horizon steps from every env; resets finished episodes."""
    if not envs or horizon < 1:
        raise ShapeError("need at least one env and one step")
    n = len(envs)
    state_dim = envs[0].observe().shape[0]
    action_dim = 3 * policy.skeleton.joint_count
    states = np.zeros((horizon, n, state_dim), np.float32)
    raws = np.zeros((horizon, n, action_dim), np.float32)
    logps = np.zeros((horizon, n), np.float64)
    rewards = np.zeros((horizon, n), np.float64)
    values = np.zeros((horizon, n), np.float64)
    dones = np.zeros((horizon, n), np.float64)
    episodes = []
    for t in range(horizon):
        obs = np.stack([env.observe() for env in envs])
        action, raw, logp, value = policy.act_batch(obs, generator)
        states[t] = obs
        raws[t] = raw
        logps[t] = logp
        values[t] = value
        for i, env in enumerate(envs):
            reward, done, info = env.step(action[i].reshape(-1, 3))
            rewards[t, i] = reward
            dones[t, i] = float(done)
            if done:
                episodes.append({"task": info.get("task"),
                                 "success": bool(info.get("success", False)),
                                 "failed": bool(info.get("failed", False))})
                env.reset()
    final_obs = np.stack([env.observe() for env in envs])
    with torch.no_grad():
        last_values = policy.net(torch.as_tensor(final_obs))[1].numpy()
    adv, returns = compute_gae(rewards, values, dones, last_values, gamma, lam)
    adv_flat = adv.reshape(-1)
    adv_norm = (adv_flat - adv_flat.mean()) / (adv_flat.std() + 1e-8)
    return RolloutBatch(
        states=states.reshape(-1, state_dim),
        raw_actions=raws.reshape(-1, action_dim),
        log_probs=logps.reshape(-1),
        rewards=rewards.reshape(-1),
        values=values.reshape(-1),
        dones=dones.reshape(-1).astype(bool),
        advantages=adv_norm,
        returns=returns.reshape(-1),
        episodes=episodes,
    )


def ppo_update(batch: RolloutBatch, policy: TrackingPolicy,
               optimizer: torch.optim.Optimizer, cfg: Config,
               generator: torch.Generator | None = None) -> dict:
    """Clipped-surrogate update; returns losses, clip fraction, approximate KL."""
    if len(batch) == 0:
        raise ShapeError("empty rollout batch")
    ppo = cfg.ppo
    states = torch.as_tensor(batch.states)
    raw_actions = torch.as_tensor(batch.raw_actions)
    old_logp = torch.as_tensor(batch.log_probs, dtype=torch.float32)
    advantages = torch.as_tensor(batch.advantages, dtype=torch.float32)
    returns = torch.as_tensor(batch.returns, dtype=torch.float32)
    n = len(batch)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "clip_fraction": 0.0, "approx_kl": 0.0, "skipped": 0, "batches": 0}
    gen = generator or torch.Generator().manual_seed(0)
    for _ in range(ppo.epochs):
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, ppo.minibatch):
            idx = order[start: start + ppo.minibatch]
            mean, value = policy.net(states[idx])
            std = policy.net.log_std.exp()
            dist = torch.distributions.Normal(mean, std)
            logp = dist.log_prob(raw_actions[idx]).sum(-1)
            ratio = torch.exp(logp - old_logp[idx])
            adv = advantages[idx]
            surr = ratio * adv
            clipped = torch.clamp(ratio, 1.0 - ppo.clip, 1.0 + ppo.clip) * adv
            policy_loss = -torch.min(surr, clipped).mean()
            value_loss = 0.5 * ((value - returns[idx]) ** 2).mean()
            entropy = dist.entropy().sum(-1).mean()
            loss = policy_loss + ppo.value_coef * value_loss - ppo.entropy * entropy
            if not torch.isfinite(loss):
                stats["skipped"] += 1
                continue
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(policy.net.parameters(), ppo.max_grad_norm)
            optimizer.step()
            with torch.no_grad():
                stats["policy_loss"] += float(policy_loss)
                stats["value_loss"] += float(value_loss)
                stats["entropy"] += float(entropy)
                stats["clip_fraction"] += float(((ratio - 1.0).abs() > ppo.clip).float().mean())
                stats["approx_kl"] += float((old_logp[idx] - logp).mean())
                stats["batches"] += 1
    for key in ("policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl"):
        stats[key] /= max(stats["batches"], 1)
    return stats


def train_tracking_policy(policy: TrackingPolicy, envs: list, updates: int,
                          cfg: Config, seed: int = 0, log_fn=None) -> list[dict]:
    """Rollout/update loop shared by pretraining and fine-tuning."""
    optimizer = torch.optim.Adam(policy.net.parameters(), lr=cfg.ppo.lr)
    rollout_gen = torch.Generator()
    rollout_gen.manual_seed(seed)
    update_gen = torch.Generator()
    update_gen.manual_seed(seed + 1)
    history = []
    for step in range(updates):
        batch = collect_rollouts(policy, envs, cfg.ppo.horizon, rollout_gen,
                                 cfg.ppo.gamma, cfg.ppo.gae_lambda)
        stats = ppo_update(batch, policy, optimizer, cfg, update_gen)
        stats["mean_reward"] = float(batch.rewards.mean())
        stats["episodes"] = len(batch.episodes)
        if batch.episodes:
            stats["success_rate"] = float(np.mean([e["success"] for e in batch.episodes]))
        history.append(stats)
        if log_fn:
            log_fn(step, stats)
    return history
