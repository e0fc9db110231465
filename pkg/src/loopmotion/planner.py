"""The diffusion planner: a transformer-decoder denoiser over motion tokens.

The denoiser sees N_p clean prefix frames plus N_g noisy prediction frames as
one token sequence and cross-attends to a condition sequence built from the
diffusion step, the joint/heading target, and the encoded text prompt. It
predicts the clean prediction window; prefix-position outputs are discarded.

Text is encoded with a small learned token-embedding encoder over the corpus
vocabulary. All model I/O happens in normalized feature space; corpus
statistics travel with the checkpoint.
"""
from __future__ import annotations

import math
import re
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt
from .diffusion import DiffusionSchedule, make_schedule, q_sample, sample_loop
from .errors import DataError, ShapeError, StateError
from .motion import (RelativeMotion, TargetCondition, FeatureLayout,
                     angle_diff_torch, relative_to_global_torch)
from .skeleton import SkeletonSpec, make_skeleton

PAD, UNK = 0, 1
_WORD = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def build_vocab(prompts) -> list[str]:
    """Ordered vocabulary: reserved pad/unk tokens then sorted corpus words."""
    words = set()
    for p in prompts:
        words.update(tokenize(p))
    return ["<pad>", "<unk>"] + sorted(words)


@dataclass
class DenoiserConfig:
    layers: int = 4
    latent_dim: int = 64
    heads: int = 4
    prefix_frames: int = 20
    pred_frames: int = 40
    text_tokens: int = 12
    lambda_target: float = 1.0
    vocab_size: int = 2

    def __post_init__(self):
        if self.prefix_frames < 1 or self.pred_frames < 1:
            raise ShapeError("prefix and prediction windows must be >= 1 frame")
        if self.latent_dim % self.heads:
            raise ShapeError("latent_dim must be divisible by heads")


def _sinusoidal(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    args = t[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class MotionDenoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig, feature_width: int, target_width: int):
        super().__init__()
        self.cfg = cfg
        d = cfg.latent_dim
        self.feature_width = feature_width
        self.target_width = target_width
        self.input_proj = nn.Linear(feature_width, d)
        self.pos_embed = nn.Parameter(torch.randn(cfg.prefix_frames + cfg.pred_frames, d) * 0.02)
        self.token_embed = nn.Embedding(cfg.vocab_size, d, padding_idx=PAD)
        self.text_proj = nn.Linear(d, d)
        self.step_embed = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.target_embed = nn.Sequential(nn.Linear(target_width, d), nn.SiLU(), nn.Linear(d, d))
        layer = nn.TransformerDecoderLayer(d, cfg.heads, dim_feedforward=4 * d,
                                           dropout=0.0, batch_first=True)
        self.decoder = nn.TransformerDecoder(layer, cfg.layers)
        self.out_proj = nn.Linear(d, feature_width)

    @property
    def dtype(self):
        return self.out_proj.weight.dtype

    def encode_text(self, ids: torch.Tensor):
        """ids (B, N_tokens) -> (tokens (B, N_tokens, d), pad mask (B, N_tokens))."""
        mask = ids == PAD
        return self.text_proj(self.token_embed(ids)), mask

    def pooled_text(self, ids: torch.Tensor) -> torch.Tensor:
        """Mean over non-pad token embeddings (all-pad prompts pool to zero)."""
        tokens, mask = self.encode_text(ids)
        keep = (~mask).to(tokens.dtype)[..., None]
        total = keep.sum(dim=1).clamp(min=1.0)
        return (tokens * keep).sum(dim=1) / total

    def forward(self, prefix: torch.Tensor, x_t: torch.Tensor, t: torch.Tensor,
                text_ids: torch.Tensor, target_vec: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if prefix.shape[-2] != cfg.prefix_frames:
            raise ShapeError(f"prefix must have {cfg.prefix_frames} frames, got {prefix.shape[-2]}")
        if x_t.shape[-2] != cfg.pred_frames:
            raise ShapeError(f"prediction must have {cfg.pred_frames} frames, got {x_t.shape[-2]}")
        tokens = self.input_proj(torch.cat([prefix, x_t], dim=-2)) + self.pos_embed
        text, text_mask = self.encode_text(text_ids)
        c_t = self.step_embed(_sinusoidal(t.to(self.dtype), cfg.latent_dim))
        c_target = self.target_embed(target_vec)
        cond = torch.cat([(c_t + c_target)[:, None, :], text], dim=1)
        cond_mask = torch.cat(
            [torch.zeros(text_mask.shape[0], 1, dtype=torch.bool, device=text_mask.device),
             text_mask], dim=1)
        hidden = self.decoder(tokens, cond, memory_key_padding_mask=cond_mask)
        return self.out_proj(hidden)[..., cfg.prefix_frames:, :]


@dataclass
class PlanSegment:
    """One denoised prediction plus the conditions that produced it."""

    features: np.ndarray        # (N_g, F), raw units
    prefix: np.ndarray          # (N_p, F), raw units
    prompt: str
    target: TargetCondition
    guidance: float
    seed: int | None
    wall_time_ms: float
    diffusion_steps: int


def target_loss(skeleton: SkeletonSpec, features: torch.Tensor, targets_pos: torch.Tensor,
                targets_valid: torch.Tensor, heading_target: torch.Tensor,
                heading_valid: torch.Tensor) -> torch.Tensor:
    """Distance of the last predicted frame to the valid targets.

    features (..., N_g, F) in raw (denormalized) units, anchored at identity;
    targets_pos (..., K, 3) over skeleton.target_joints, flags as 0/1 floats.
    Invalid entries contribute exactly zero. Returns (...,) summed loss.
    """
    pos, head = relative_to_global_torch(skeleton, features)
    last = pos[..., -1, :, :]
    picked = last[..., list(skeleton.target_joints), :]
    sq = ((picked - targets_pos) ** 2).sum(dim=-1)
    loss = (targets_valid * sq).sum(dim=-1)
    hd = angle_diff_torch(head[..., -1], heading_target)
    return loss + heading_valid * hd * hd


def target_loss_single(skeleton: SkeletonSpec, features: torch.Tensor,
                       target: TargetCondition) -> torch.Tensor:
    dtype = features.dtype
    return target_loss(
        skeleton, features,
        torch.as_tensor(target.joint_targets, dtype=dtype),
        torch.as_tensor(target.joint_valid.astype(float), dtype=dtype),
        torch.as_tensor(float(target.heading_target if target.heading_valid else 0.0), dtype=dtype),
        torch.as_tensor(float(target.heading_valid), dtype=dtype),
    )


class DiPlanner:
    """Denoiser + schedule + normalization + vocabulary, ready to plan."""

    def __init__(self, skeleton: SkeletonSpec, dcfg: DenoiserConfig,
                 schedule: DiffusionSchedule, vocab: list[str],
                 mean: np.ndarray | None = None, std: np.ndarray | None = None,
                 seed: int = 0):
        self.skeleton = skeleton
        self.cfg = dcfg
        self.schedule = schedule
        self.vocab = list(vocab)
        self.word_ids = {w: i for i, w in enumerate(self.vocab)}
        f = skeleton.feature_width
        k = len(skeleton.target_joints)
        torch.manual_seed(seed)
        self.denoiser = MotionDenoiser(dcfg, f, 4 * k + 2)
        self.denoiser.eval()
        self.mean = np.zeros(f, dtype=np.float32) if mean is None else mean.astype(np.float32)
        self.std = np.ones(f, dtype=np.float32) if std is None else std.astype(np.float32)
        self.step_count = 0
        self.config_hash = ""

    # -- text ---------------------------------------------------------------
    def prompt_ids(self, prompt: str) -> np.ndarray:
        """Token ids padded/truncated to the fixed token count."""
        ids = [self.word_ids.get(w, UNK) for w in tokenize(prompt)][: self.cfg.text_tokens]
        ids += [PAD] * (self.cfg.text_tokens - len(ids))
        return np.array(ids, dtype=np.int64)

    def encode_text(self, prompt: str):
        """C_text (N_tokens, d) plus its padding mask."""
        ids = torch.from_numpy(self.prompt_ids(prompt))[None]
        with torch.no_grad():
            tokens, mask = self.denoiser.encode_text(ids)
        return tokens[0], mask[0]

    # -- normalization ------------------------------------------------------
    def normalize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.mean) / self.std

    def denormalize_torch(self, feats: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.mean, dtype=feats.dtype)
        std = torch.as_tensor(self.std, dtype=feats.dtype)
        return feats * std + mean

    # -- denoising ----------------------------------------------------------
    def denoise(self, prefix: RelativeMotion, x_t: torch.Tensor, t: int,
                prompt: str, target: TargetCondition) -> torch.Tensor:
        """x0 prediction in normalized units for a single window."""
        if len(prefix) != self.cfg.prefix_frames:
            raise ShapeError(f"prefix length {len(prefix)} != {self.cfg.prefix_frames}")
        dtype = self.denoiser.dtype
        prefix_t = torch.as_tensor(self.normalize(prefix.features), dtype=dtype)[None]
        ids = torch.from_numpy(self.prompt_ids(prompt))[None]
        tvec = torch.as_tensor(target.encode(), dtype=dtype)[None]
        with torch.no_grad():
            out = self.denoiser(prefix_t, x_t[None].to(dtype),
                                torch.tensor([t]), ids, tvec)
        return out[0]

    def plan(self, prefix: RelativeMotion, prompt: str, target: TargetCondition,
             guidance: float = 1.0, seed: int | None = None,
             generator: torch.Generator | None = None) -> PlanSegment:
        """Sample one prediction window conditioned on prompt and target.

        The target is expressed in the prefix-anchor frame (the transform of
        the last prefix frame); the caller localizes world targets first.
        """
        if self.step_count == 0:
            raise StateError("planner has no trained checkpoint loaded")
        start = time.perf_counter()
        if generator is None:
            generator = torch.Generator()
            generator.manual_seed(0 if seed is None else int(seed))
        dtype = self.denoiser.dtype
        prefix_t = torch.as_tensor(self.normalize(prefix.features), dtype=dtype)[None]
        ids = torch.from_numpy(self.prompt_ids(prompt))[None]
        null_ids = torch.full_like(ids, PAD)
        tvec = torch.as_tensor(target.encode(), dtype=dtype)[None]
        null_tvec = torch.zeros_like(tvec)  # encoding of the all-invalid target

        # The sampling loop asks for the conditional and unconditional outputs
        # back to back at each step; run them as one batch-2 forward and hand
        # the cached half to the null-condition call.
        cache: dict = {}

        def denoise_fn(_prefix, x, t, cond):
            if cond == "null":
                return cache.pop(t)
            with torch.no_grad():
                if guidance == 1.0:
                    return self.denoiser(prefix_t, x[None], torch.tensor([t]),
                                         ids, tvec)[0]
                both = self.denoiser(
                    torch.cat([prefix_t, prefix_t]), torch.stack([x, x]),
                    torch.tensor([t, t]), torch.cat([ids, null_ids]),
                    torch.cat([tvec, null_tvec]))
            cache[t] = both[1]
            return both[0]

        x0 = sample_loop(self.schedule, denoise_fn, None, "cond",
                         shape=(self.cfg.pred_frames, self.skeleton.feature_width),
                         generator=generator, guidance=guidance,
                         null_cond="null", dtype=dtype)
        feats = self.denormalize_torch(x0).numpy().astype(np.float64)
        feats = self._postprocess(feats)
        ms = (time.perf_counter() - start) * 1e3
        return PlanSegment(feats, prefix.features.copy(), prompt, target,
                           guidance, seed, ms, self.schedule.steps)

    def _postprocess(self, feats: np.ndarray, penetration_tol: float = 0.01) -> np.ndarray:
        lay = FeatureLayout(self.skeleton.joint_count)
        feats[:, lay.contacts] = np.clip(feats[:, lay.contacts], 0.0, 1.0)
        feats[:, lay.height] = np.maximum(feats[:, lay.height], -penetration_tol)
        return feats

    # -- persistence ---------------------------------------------------------
    def save(self, path, config_hash: str = "") -> None:
        tensors = {f"param/{k}": v.detach().cpu().numpy()
                   for k, v in self.denoiser.state_dict().items()}
        tensors["norm/mean"] = self.mean
        tensors["norm/std"] = self.std
        meta = {
            "kind": "dip",
            "config_hash": config_hash,
            "denoiser": asdict(self.cfg),
            "schedule": self.schedule.describe(),
            "skeleton": {"joints": self.skeleton.joint_count,
                         "frame_rate": self.skeleton.frame_rate},
            "vocab": self.vocab,
            "step": self.step_count,
        }
        ckpt.save_container(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "DiPlanner":
        tensors, meta = ckpt.load_container(path)
        if meta.get("kind") != "dip":
            raise DataError(f"{path}: not a planner checkpoint")
        skeleton = make_skeleton(meta["skeleton"]["joints"], meta["skeleton"]["frame_rate"])
        dcfg = DenoiserConfig(**meta["denoiser"])
        schedule = make_schedule(meta["schedule"]["steps"], meta["schedule"]["kind"])
        planner = cls(skeleton, dcfg, schedule, meta["vocab"],
                      tensors["norm/mean"], tensors["norm/std"])
        state = {k[len("param/"):]: torch.from_numpy(v)
                 for k, v in tensors.items() if k.startswith("param/")}
        planner.denoiser.load_state_dict(state)
        planner.denoiser.eval()
        planner.step_count = int(meta["step"])
        planner.config_hash = meta.get("config_hash", "")
        return planner


class DipTrainer:
    """Training loop: random crops, step sampling, condition dropout, Adam."""

    def __init__(self, planner: DiPlanner, clip_features: list[np.ndarray],
                 clip_prompts: list[list[str]], lr: float = 1e-4,
                 batch_size: int = 64, cond_dropout: float = 0.1, seed: int = 0):
        self.planner = planner
        self.skeleton = planner.skeleton
        self.cfg = planner.cfg
        window = self.cfg.prefix_frames + self.cfg.pred_frames
        for i, feats in enumerate(clip_features):
            if feats.shape[0] < window:
                raise DataError(f"clip {i} has {feats.shape[0]} frames; need >= {window}")
        self.clips = [f.astype(np.float32) for f in clip_features]
        self.prompts = clip_prompts
        self.batch_size = batch_size
        self.cond_dropout = cond_dropout
        self.rng = np.random.default_rng(seed)
        self._fit_normalization()
        self.optimizer = torch.optim.Adam(planner.denoiser.parameters(), lr=lr)
        planner.denoiser.train()

    def _fit_normalization(self):
        stacked = np.concatenate(self.clips, axis=0)
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), 1e-4)
        self.planner.mean = mean.astype(np.float32)
        self.planner.std = std.astype(np.float32)

    def sample_batch(self, batch_size: int | None = None, clip_ids=None) -> dict:
        """Crop windows, split prefix/prediction, and build ground-truth targets."""
        b = batch_size or self.batch_size
        cfg, rng = self.cfg, self.rng
        window = cfg.prefix_frames + cfg.pred_frames
        if clip_ids is None:
            clip_ids = rng.integers(len(self.clips), size=b)
        prefix = np.empty((b, cfg.prefix_frames, self.skeleton.feature_width), np.float32)
        x0 = np.empty((b, cfg.pred_frames, self.skeleton.feature_width), np.float32)
        ids = np.empty((b, cfg.text_tokens), np.int64)
        for i, ci in enumerate(clip_ids):
            feats = self.clips[ci]
            off = rng.integers(feats.shape[0] - window + 1)
            prefix[i] = feats[off: off + cfg.prefix_frames]
            x0[i] = feats[off + cfg.prefix_frames: off + window]
            prompt = self.prompts[ci][rng.integers(len(self.prompts[ci]))]
            ids[i] = self.planner.prompt_ids(prompt)

        # ground-truth target: one random joint from the target set plus the
        # heading, both read off the last predicted frame via the converter
        k = len(self.skeleton.target_joints)
        joint_slot = rng.integers(k, size=b)
        with torch.no_grad():
            pos, head = relative_to_global_torch(self.skeleton, torch.from_numpy(x0))
        joints = np.array([self.skeleton.target_joints[s] for s in joint_slot])
        last = pos[:, -1].numpy()[np.arange(b), joints]
        heading_last = head[:, -1].numpy()

        tvec = np.zeros((b, 4 * k + 2), np.float32)
        tvec[np.arange(b), 3 * joint_slot + 0] = last[:, 0]
        tvec[np.arange(b), 3 * joint_slot + 1] = last[:, 1]
        tvec[np.arange(b), 3 * joint_slot + 2] = last[:, 2]
        tvec[np.arange(b), 3 * k + joint_slot] = 1.0
        tvec[:, 4 * k] = heading_last
        tvec[:, 4 * k + 1] = 1.0

        drop_text = rng.random(b) < self.cond_dropout
        drop_target = rng.random(b) < self.cond_dropout
        ids[drop_text] = PAD
        tvec[drop_target] = 0.0

        return {
            "prefix": self.planner.normalize(prefix).astype(np.float32),
            "x0": self.planner.normalize(x0).astype(np.float32),
            "ids": ids,
            "target_vec": tvec,
            "t": rng.integers(1, self.schedule_steps + 1, size=b),
            "noise": rng.standard_normal(x0.shape).astype(np.float32),
            "target_slot": joint_slot,
            "target_kept": ~drop_target,
        }

    def losses(self, batch: dict):
        """L_simple and L_target for a batch (pure in the batch, differentiable)."""
        planner = self.planner
        dtype = planner.denoiser.dtype
        prefix = torch.as_tensor(batch["prefix"], dtype=dtype)
        x0 = torch.as_tensor(batch["x0"], dtype=dtype)
        ids = torch.as_tensor(batch["ids"])
        tvec = torch.as_tensor(batch["target_vec"], dtype=dtype)
        b = x0.shape[0]
        t = torch.as_tensor(batch["t"], dtype=torch.long)
        noise = torch.as_tensor(batch["noise"], dtype=dtype)
        x_t = q_sample(self.planner.schedule, x0, t, noise)
        x0_hat = planner.denoiser(prefix, x_t, t, ids, tvec)
        l_simple = ((x0_hat - x0) ** 2).mean()

        k = len(self.skeleton.target_joints)
        raw = planner.denormalize_torch(x0_hat)
        l_target = target_loss(
            self.skeleton, raw,
            tvec[:, : 3 * k].reshape(b, k, 3),
            tvec[:, 3 * k: 4 * k],
            tvec[:, 4 * k],
            tvec[:, 4 * k + 1],
        ).mean()
        return l_simple, l_target

    @property
    def schedule_steps(self) -> int:
        return self.planner.schedule.steps

    def train_step(self, batch: dict | None = None) -> dict:
        if batch is None:
            batch = self.sample_batch()
        l_simple, l_target = self.losses(batch)
        total = l_simple + self.cfg.lambda_target * l_target
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        self.planner.step_count += 1
        return {"l_simple": float(l_simple.detach()),
                "l_target": float(l_target.detach()),
                "total": float(total.detach())}

    def validation_target_loss(self, batches: int = 4) -> float:
        """Mean target loss on freshly sampled crops (checkpoint selection)."""
        self.planner.denoiser.eval()
        vals = []
        with torch.no_grad():
            for _ in range(batches):
                batch = self.sample_batch()
                _, l_target = self.losses(batch)
                vals.append(float(l_target))
        self.planner.denoiser.train()
        return float(np.mean(vals))

    def train(self, steps: int, log_every: int = 0, log_fn=print) -> list[dict]:
        history = []
        for i in range(steps):
            stats = self.train_step()
            history.append(stats)
            if log_every and (i + 1) % log_every == 0:
                log_fn(f"step {self.planner.step_count}: "
                       f"simple {stats['l_simple']:.4f} target {stats['l_target']:.4f}")
        self.planner.denoiser.eval()
        return history
