"""Physics-plausibility metrics and evaluation reports.

All three metrics are reported in millimeters and are invariant to ground-
plane translation and yaw. Penetration and floating average over all frames;
skating averages the horizontal displacement of the contacting joint over
adjacent frame pairs that both have a joint within the contact tolerance.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .motion import GlobalMotion

TOLERANCE_MM = 5.0


def penetration(motion: GlobalMotion) -> float:
    """Mean depth of the lowest below-ground joint, mm (0 when none)."""
    lowest = motion.positions[:, :, 1].min(axis=1)
    return float(np.maximum(0.0, -lowest).mean() * 1000.0)


def floating(motion: GlobalMotion, tolerance_mm: float = TOLERANCE_MM) -> float:
    """Mean height of the lowest joint beyond the contact tolerance, mm."""
    lowest = motion.positions[:, :, 1].min(axis=1) * 1000.0
    return float(np.maximum(0.0, lowest - tolerance_mm).mean())


def skating(motion: GlobalMotion, tolerance_mm: float = TOLERANCE_MM) -> float:
    """Mean horizontal slide of the contacting joint during ground contact, mm.

    A frame pair counts when both frames have their lowest joint within the
    tolerance; the displacement is measured on the earlier frame's lowest
    joint. Returns 0 when there are no contact pairs.
    """
    if len(motion) < 2:
        raise DataError("skating needs at least 2 frames")
    heights = motion.positions[:, :, 1] * 1000.0
    lowest = heights.min(axis=1)
    contact = lowest <= tolerance_mm
    pairs = contact[:-1] & contact[1:]
    if not np.any(pairs):
        return 0.0
    joint = heights.argmin(axis=1)
    idx = np.nonzero(pairs)[0]
    a = motion.positions[idx, joint[idx]][:, [0, 2]]
    b = motion.positions[idx + 1, joint[idx]][:, [0, 2]]
    return float(np.linalg.norm(b - a, axis=1).mean() * 1000.0)


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """95% binomial confidence interval (Wilson score)."""
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class MetricsReport:
    penetration_mm: float = 0.0
    floating_mm: float = 0.0
    skating_mm: float = 0.0
    success_rates: dict = field(default_factory=dict)
    confidence: dict = field(default_factory=dict)
    episode_counts: dict = field(default_factory=dict)
    skipped: int = 0
    config_hash: str = ""

    def __post_init__(self):
        assert self.penetration_mm >= 0 and self.floating_mm >= 0 and self.skating_mm >= 0

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    def to_csv(self) -> str:
        """One row per task, matching the success-rate table layout."""
        lines = ["task,episodes,success_rate,ci_low,ci_high"]
        for task in sorted(self.success_rates):
            lo, hi = self.confidence[task]
            lines.append(f"{task},{self.episode_counts[task]},"
                         f"{self.success_rates[task]:.4f},{lo:.4f},{hi:.4f}")
        lines.append(f"penetration_mm,,{self.penetration_mm:.4f},,")
        lines.append(f"floating_mm,,{self.floating_mm:.4f},,")
        lines.append(f"skating_mm,,{self.skating_mm:.4f},,")
        return "\n".join(lines)


def evaluate(episodes, tolerance_mm: float = TOLERANCE_MM,
             config_hash: str = "", warn=None) -> MetricsReport:
    """Aggregate (manifest, GlobalMotion) pairs into a report.

    Episodes may also be (None, motion) for raw motion files; unreadable
    entries should be passed as (None, None) so they count as skipped.
    """
    episodes = list(episodes)
    if not episodes:
        raise DataError("no episodes to evaluate")
    pens, floats, skates = [], [], []
    wins: dict[str, int] = {}
    counts: dict[str, int] = {}
    skipped = 0
    for manifest, motion in episodes:
        if motion is None:
            skipped += 1
            if warn:
                warn("skipping unreadable episode")
            continue
        pens.append(penetration(motion))
        floats.append(floating(motion, tolerance_mm))
        if len(motion) >= 2:
            skates.append(skating(motion, tolerance_mm))
        if manifest is not None:
            task = manifest["task"]
            counts[task] = counts.get(task, 0) + 1
            wins[task] = wins.get(task, 0) + (1 if manifest["success"] else 0)
    if not pens:
        raise DataError("all episodes were unreadable")
    report = MetricsReport(
        penetration_mm=float(np.mean(pens)),
        floating_mm=float(np.mean(floats)),
        skating_mm=float(np.mean(skates)) if skates else 0.0,
        success_rates={t: wins[t] / counts[t] for t in counts},
        confidence={t: wilson_interval(wins[t], counts[t]) for t in counts},
        episode_counts=counts,
        skipped=skipped,
        config_hash=config_hash,
    )
    return report
