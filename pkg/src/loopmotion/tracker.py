"""Tracking controller: state building, PD-residual actions, reward, reset.

The policy sees the reference-vs-simulation delta plus the reference itself,
both expressed in the character's heading-local frame, and outputs per-joint
PD target offsets added to the reference pose. A zero policy therefore falls
back to pure PD tracking of the reference.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt
from .config import TrackerSection
from .errors import DataError
from .motion import GlobalFrame, rotate_xz
from .skeleton import SkeletonSpec, make_skeleton


def _localize(frame: GlobalFrame, heading: float, root_xz: np.ndarray):
    """Positions/velocities of a frame in a given heading-local frame."""
    pos = frame.joint_pos.copy()
    pos[:, 0] -= root_xz[0]
    pos[:, 2] -= root_xz[1]
    px, pz = rotate_xz(pos[:, 0], pos[:, 2], -heading)
    vx, vz = rotate_xz(frame.joint_vel[:, 0], frame.joint_vel[:, 2], -heading)
    pos_local = np.stack([px, pos[:, 1], pz], axis=1)
    vel_local = np.stack([vx, frame.joint_vel[:, 1], vz], axis=1)
    return pos_local, vel_local


def build_state(ref: GlobalFrame, sim: GlobalFrame) -> np.ndarray:
    """Tracker state (12*J,): (ref - sim, ref), heading-localized by sim."""
    heading, root = sim.heading, sim.root_xz
    ref_p, ref_v = _localize(ref, heading, root)
    sim_p, sim_v = _localize(sim, heading, root)
    delta = np.concatenate([(ref_p - sim_p).reshape(-1), (ref_v - sim_v).reshape(-1)])
    reference = np.concatenate([ref_p.reshape(-1), ref_v.reshape(-1)])
    return np.concatenate([delta, reference]).astype(np.float32)


def tracking_reward(ref: GlobalFrame, sim_next: GlobalFrame, action: np.ndarray,
                    k_r: float = 5.0, w_e: float = 0.01) -> float:
    """exp(-k_r * mean squared joint distance) minus the energy penalty."""
    err = np.mean(np.sum((ref.joint_pos - sim_next.joint_pos) ** 2, axis=1))
    return float(np.exp(-k_r * err) - w_e * float(np.sum(action ** 2)))


def reset_check(ref: GlobalFrame, sim: GlobalFrame, threshold: float = 0.5) -> bool:
    """True = terminate: some joint strayed at least `threshold` meters
    (the threshold itself terminates)."""
    err = np.linalg.norm(ref.joint_pos - sim.joint_pos, axis=1)
    return bool(np.max(err) >= threshold)


class PolicyNet(nn.Module):
    """Gaussian policy (state-independent log-std) plus a value head."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int = 256,
                 log_std_init: float = -3.0):
        super().__init__()
        self.actor = nn.Sequential(
            nn.Linear(state_dim, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
            nn.Linear(hidden, action_dim),
        )
        self.critic = nn.Sequential(
            nn.Linear(state_dim, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
            nn.Linear(hidden, 1),
        )
        self.log_std = nn.Parameter(torch.full((action_dim,), float(log_std_init)))
        # start near the pure-PD baseline
        nn.init.orthogonal_(self.actor[-1].weight, gain=0.01)
        nn.init.zeros_(self.actor[-1].bias)

    def forward(self, state: torch.Tensor):
        return self.actor(state), self.critic(state).squeeze(-1)

    def distribution(self, state: torch.Tensor) -> torch.distributions.Normal:
        mean = self.actor(state)
        return torch.distributions.Normal(mean, self.log_std.exp())


@dataclass
class TrackingPolicy:
    """Policy network bound to a skeleton with the action clamp."""

    skeleton: SkeletonSpec
    net: PolicyNet
    a_max: float
    cfg: TrackerSection

    @classmethod
    def fresh(cls, skeleton: SkeletonSpec, cfg: TrackerSection, a_max: float,
              seed: int = 0) -> "TrackingPolicy":
        torch.manual_seed(seed)
        j = skeleton.joint_count
        net = PolicyNet(12 * j, 3 * j, cfg.hidden, cfg.log_std_init)
        return cls(skeleton, net, a_max, cfg)

    def act(self, state: np.ndarray, stochastic: bool = False,
            generator: torch.Generator | None = None) -> np.ndarray:
        """PD target offsets (J, 3), clamped to +-a_max."""
        with torch.no_grad():
            mean = self.net.actor(torch.as_tensor(state, dtype=torch.float32))
            if stochastic:
                std = self.net.log_std.exp()
                noise = torch.randn(mean.shape, generator=generator)
                mean = mean + std * noise
            action = torch.clamp(mean, -self.a_max, self.a_max)
        return action.numpy().reshape(-1, 3).astype(np.float64)

    def act_batch(self, states: np.ndarray, generator: torch.Generator):
        """Stochastic batch actions with log-probs and values (for rollouts)."""
        with torch.no_grad():
            s = torch.as_tensor(states, dtype=torch.float32)
            mean, value = self.net(s)
            std = self.net.log_std.exp()
            noise = torch.randn(mean.shape, generator=generator)
            raw = mean + std * noise
            logp = torch.distributions.Normal(mean, std).log_prob(raw).sum(-1)
            action = torch.clamp(raw, -self.a_max, self.a_max)
        return (action.numpy().astype(np.float64), raw.numpy(),
                logp.numpy(), value.numpy())

    def save(self, path, config_hash: str = "", phase: str = "pretrain") -> None:
        tensors = {f"param/{k}": v.detach().cpu().numpy()
                   for k, v in self.net.state_dict().items()}
        meta = {"kind": "tracker", "config_hash": config_hash, "phase": phase,
                "a_max": self.a_max, "tracker": asdict(self.cfg),
                "skeleton": {"joints": self.skeleton.joint_count,
                             "frame_rate": self.skeleton.frame_rate}}
        ckpt.save_container(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "TrackingPolicy":
        tensors, meta = ckpt.load_container(path)
        if meta.get("kind") != "tracker":
            raise DataError(f"{path}: not a tracker checkpoint")
        skeleton = make_skeleton(meta["skeleton"]["joints"], meta["skeleton"]["frame_rate"])
        cfg = TrackerSection(**meta["tracker"])
        policy = cls.fresh(skeleton, cfg, meta["a_max"])
        state = {k[len("param/"):]: torch.from_numpy(v)
                 for k, v in tensors.items() if k.startswith("param/")}
        policy.net.load_state_dict(state)
        policy.config_hash = meta.get("config_hash", "")
        policy.phase = meta.get("phase", "")
        return policy
