"""Configuration: one flat file of TOML-style sections covering every knob.

Unknown keys are rejected. The stable hash of a config is stamped into every
artifact (corpus index, checkpoints, episode logs, reports) so mixed-config
inputs can be detected.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class SkeletonSection:
    joints: int = 22
    frame_rate: float = 20.0


@dataclass
class ScheduleSection:
    steps: int = 10
    kind: str = "cosine"


@dataclass
class ModelSection:
    layers: int = 4
    latent_dim: int = 64
    heads: int = 4
    prefix_frames: int = 20
    pred_frames: int = 40
    text_tokens: int = 12
    lambda_target: float = 1.0


@dataclass
class TrainSection:
    lr: float = 1e-4
    batch_size: int = 64
    steps: int = 8000
    cond_dropout: float = 0.1
    seed: int = 0
    log_every: int = 500
    select: str = "final"  # or "best_target": keep the lowest validation target loss
    val_clips: int = 16


@dataclass
class SimSection:
    dt: float = 1.0 / 60.0
    substeps: int = 3
    gravity: float = 9.81
    kp: float = 400.0
    kd: float = 40.0
    f_max: float = 600.0
    a_max: float = 0.25
    iterations: int = 8
    friction: float = 0.8
    gravity_comp: bool = True
    total_mass: float = 60.0


@dataclass
class TrackerSection:
    k_r: float = 5.0
    w_e: float = 0.01
    reset_threshold: float = 0.5
    hidden: int = 256
    log_std_init: float = -3.0


@dataclass
class PPOSection:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 512
    lr: float = 3e-4
    entropy: float = 1e-3
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    n_envs: int = 64
    horizon: int = 128
    pretrain_updates: int = 60
    finetune_updates: int = 60


@dataclass
class TasksSection:
    success_radius: float = 0.3
    bag_fall_angle: float = 75.0
    v_max_walk: float = 1.5
    v_max_run: float = 3.0
    done_hold: int = 10
    getup_wait: int = 40  # frames between sit done and the get-up switch (2 s)
    guidance: float = 2.5
    max_frames: int = 240
    reach_min: float = 1.2
    reach_max: float = 3.0
    strike_distance: float = 0.65
    strike_perturb: float = 0.3
    sofa_distance: float = 1.4
    sofa_perturb: float = 0.3
    sofa_yaw_perturb: float = 0.35
    sit_height_band: float = 0.15
    getup_target_forward: float = 0.3
    getup_target_height: float = 0.9


@dataclass
class ObjectsSection:
    bag_radius: float = 0.12
    bag_height: float = 1.2
    bag_mass: float = 6.0
    bag_tip_impulse: float = 2.5
    seat_width: float = 1.1
    seat_depth: float = 0.55
    seat_height: float = 0.42
    back_height: float = 0.45
    back_depth: float = 0.15


@dataclass
class ContactsSection:
    height: float = 0.05
    speed: float = 0.1


@dataclass
class MetricsSection:
    tolerance_mm: float = 5.0


@dataclass
class CorpusSection:
    locomote: int = 120
    strike: int = 80
    sit: int = 48
    getup: int = 48
    noise: float = 0.006
    seed: int = 1234


_SECTIONS = {
    "skeleton": SkeletonSection,
    "schedule": ScheduleSection,
    "model": ModelSection,
    "train": TrainSection,
    "sim": SimSection,
    "tracker": TrackerSection,
    "ppo": PPOSection,
    "tasks": TasksSection,
    "objects": ObjectsSection,
    "contacts": ContactsSection,
    "metrics": MetricsSection,
    "corpus": CorpusSection,
}


@dataclass
class Config:
    skeleton: SkeletonSection = field(default_factory=SkeletonSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    sim: SimSection = field(default_factory=SimSection)
    tracker: TrackerSection = field(default_factory=TrackerSection)
    ppo: PPOSection = field(default_factory=PPOSection)
    tasks: TasksSection = field(default_factory=TasksSection)
    objects: ObjectsSection = field(default_factory=ObjectsSection)
    contacts: ContactsSection = field(default_factory=ContactsSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        cfg = cls()
        for section, values in data.items():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            target = getattr(cfg, section)
            known = {f.name: f.type for f in fields(target)}
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f"unknown config key {section}.{key}")
                setattr(target, key, _coerce(value, getattr(target, key), f"{section}.{key}"))
        return cfg

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def apply_overrides(self, overrides: list[str]) -> None:
        """Apply "section.key=value" strings (CLI flags beat file values)."""
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            dotted, raw = item.split("=", 1)
            parts = dotted.strip().split(".")
            if len(parts) != 2:
                raise ConfigError(f"override key {dotted!r} must be section.key")
            section, key = parts
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            target = getattr(self, section)
            if key not in {f.name for f in fields(target)}:
                raise ConfigError(f"unknown config key {section}.{key}")
            setattr(target, key, _coerce(_parse_scalar(raw.strip()), getattr(target, key), dotted))


def _coerce(value, current, where: str):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported config value type")


_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_]+)\]$")
_KEY_RE = re.compile(r"^([A-Za-z0-9_]+)\s*=\s*(.+)$")


def _parse_scalar(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    if len(text) >= 2 and text[0] == '"' and text[-1] == '"':
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict:
    """Minimal TOML-subset reader: [sections] of scalar key = value lines."""
    data: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1)
            data.setdefault(section, {})
            continue
        m = _KEY_RE.match(line)
        if not m:
            raise ConfigError(f"config line {lineno}: cannot parse {raw!r}")
        if section is None:
            raise ConfigError(f"config line {lineno}: key outside of any [section]")
        data[section][m.group(1)] = _parse_scalar(m.group(2).strip())
    return data


def load_config(path=None, overrides: list[str] | None = None) -> Config:
    cfg = Config() if path is None else Config.from_dict(parse_config_text(Path(path).read_text()))
    if overrides:
        cfg.apply_overrides(list(overrides))
    return cfg


def dump_config(cfg: Config) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            if isinstance(value, bool):
                rep = "true" if value else "false"
            elif isinstance(value, str):
                rep = f'"{value}"'
            else:
                rep = repr(value)
            lines.append(f"{key} = {rep}")
        lines.append("")
    return "\n".join(lines)
