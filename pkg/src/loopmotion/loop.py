"""Closed-loop orchestration: plan, execute, feed realized frames back.

Each planning segment anchors the reference at the current simulated root
transform, executes frame by frame through the tracking policy, and converts
the last realized frames back to the relative representation as the next
prefix. The open-loop baseline feeds the planner its own prediction instead
and chains reference anchors without looking at the simulation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import Config
from .corpus import seated_pose
from .errors import DataError, SimulationError
from .motion import (GlobalFrame, GlobalMotion, RelativeMotion, TargetCondition,
                     global_to_relative, hold_pose, relative_to_global, wrap_angle)
from .motion_io import load_motion, save_motion
from .planner import DiPlanner, PlanSegment
from .simworld import SimWorld
from .tracker import TrackingPolicy, build_state, reset_check, tracking_reward

TASK_KINDS = ("reach", "strike", "sit", "getup")

REACH_PROMPTS = ("a person walks forward", "someone is walking straight ahead",
                 "a person walks forward at a steady pace")
SIT_PROMPTS = ("a person walks to the sofa and sits down",
               "a person sits down on the sofa")
GETUP_PROMPTS = ("a person stands up from the sofa and remains standing",
                 "a person gets up from the couch")
STRIKE_LIMBS = ("left_hand", "right_hand", "left_foot", "right_foot")


@dataclass
class TaskSpec:
    """Per-task conditioning contract and success rule."""

    kind: str
    done_hold: int = 1
    limb: str | None = None  # strike only

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise DataError(f"unknown task kind {self.kind!r}")
        if self.kind == "strike" and self.limb is not None and self.limb not in STRIKE_LIMBS:
            raise DataError(f"strike limb must be a hand or a foot, got {self.limb!r}")


def intermediate_target(current_xz, final_xz, v_max: float, horizon_s: float):
    """Point on the segment toward the goal, at most v_max * horizon away."""
    current = np.asarray(current_xz, dtype=float)
    final = np.asarray(final_xz, dtype=float)
    delta = final - current
    dist = float(np.linalg.norm(delta))
    reach = v_max * horizon_s
    if dist <= reach or dist < 1e-9:
        return final.copy()
    return current + delta / dist * reach


def strike_prompts(limb: str) -> tuple[str, ...]:
    side, part = limb.split("_")
    verb = "kicks" if part == "foot" else "punches"
    return (f"a person {verb} with the {side} {part}",
            f"a person strikes the target with the {side} {part}")


def task_success(task: TaskSpec, world: SimWorld, frame: GlobalFrame,
                 target_world: TargetCondition, cfg: Config) -> bool:
    pelvis = frame.joint_pos[0]
    if task.kind == "reach":
        goal = target_world.joint_targets[0]
        return float(np.hypot(pelvis[0] - goal[0], pelvis[2] - goal[2])) <= cfg.tasks.success_radius
    if task.kind == "strike":
        return world.bag is not None and world.bag.angle_to_ground_deg < cfg.tasks.bag_fall_angle
    if task.kind == "sit":
        if world.sofa is None:
            return False
        on_seat = world.sofa.contains_xz(pelvis[[0, 2]])
        band = abs(pelvis[1] - world.sofa.seat_height) <= cfg.tasks.sit_height_band
        return bool(on_seat and band)
    # getup: pelvis near a standing point in front of the sofa
    goal = target_world.joint_targets[0]
    return float(np.linalg.norm(pelvis - goal)) <= cfg.tasks.success_radius


def state_machine_step(current: TaskSpec, done: bool, rng: np.random.Generator,
                       bag_standing: bool) -> TaskSpec | None:
    """Pick the next task once the current one signals done.

    Get-up is only valid right after sitting; a fallen bag removes strike
    from the pool. Returns None when the task is not done yet.
    """
    if not done:
        return None
    if current.kind == "sit":
        return TaskSpec("getup", done_hold=5)
    pool = ["reach", "sit"]
    if bag_standing:
        pool.append("strike")
    kind = str(rng.choice(sorted(pool)))
    if kind == "strike":
        limb = STRIKE_LIMBS[rng.integers(len(STRIKE_LIMBS))]
        return TaskSpec("strike", done_hold=1, limb=limb)
    return TaskSpec(kind, done_hold=5 if kind == "sit" else 1)


@dataclass
class EpisodeLog:
    task: str
    seed: int
    config_hash: str
    frame_rate: float = 20.0
    done_hold: int = 1
    frames: GlobalMotion | None = None
    segments: list[PlanSegment] = field(default_factory=list)
    segment_meta: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    bag_angles: list[float] = field(default_factory=list)
    success: bool = False
    failed: bool = False
    aborted: bool = False
    open_loop: bool = False

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        joints = self.frames.joint_count
        save_motion(out / "frames.lmo", self.frames, joints, self.frame_rate)
        if self.segments:
            stacked = RelativeMotion(np.concatenate([s.features for s in self.segments]))
            save_motion(out / "segments.lmo", stacked, joints, self.frame_rate)
        manifest = {
            "task": self.task, "seed": self.seed, "config_hash": self.config_hash,
            "success": self.success, "failed": self.failed, "aborted": self.aborted,
            "open_loop": self.open_loop, "frame_count": len(self.frames),
            "done_hold": self.done_hold,
            "events": self.events, "segments": self.segment_meta,
            "bag_angles": [round(a, 4) for a in self.bag_angles],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1))

    @staticmethod
    def load(path):
        root = Path(path)
        manifest = json.loads((root / "manifest.json").read_text())
        frames, _, _ = load_motion(root / "frames.lmo")
        segments = None
        if (root / "segments.lmo").exists():
            segments, _, _ = load_motion(root / "segments.lmo")
        return manifest, frames, segments


class ClosedLoopSession:
    """One episode of the plan/execute loop, stepped one control frame at a time."""

    def __init__(self, planner: DiPlanner, config: Config, task: TaskSpec,
                 seed: int, open_loop: bool = False, state_machine: bool = False,
                 max_frames: int | None = None):
        self.planner = planner
        self.skeleton = planner.skeleton
        self.cfg = config
        self.task = task
        self.seed = seed
        self.open_loop = open_loop
        self.state_machine = state_machine
        self.max_frames = max_frames or config.tasks.max_frames
        self.n_prefix = planner.cfg.prefix_frames
        self.n_pred = planner.cfg.pred_frames

        ss = np.random.SeedSequence(seed)
        self.rng = np.random.default_rng(ss.spawn(1)[0])
        self._plan_seed_seq = ss.spawn(1)[0]

        self.world = SimWorld(self.skeleton, config.sim, config.objects)
        self.world.place_task_objects(task.kind, self.rng, config.tasks)
        if task.kind == "strike" and task.limb is None:
            task.limb = STRIKE_LIMBS[self.rng.integers(len(STRIKE_LIMBS))]

        if task.kind == "getup":
            sofa = self.world.sofa
            init_pos = seated_pose(self.skeleton, sofa.center_xz, sofa.face_dir(),
                                   sofa.seat_height)
        else:
            init_pos = self.skeleton.rest_pose()
        self.world.reset_to_pose(init_pos)

        self.log = EpisodeLog(task.kind, seed, config.hash(),
                              frame_rate=self.skeleton.frame_rate,
                              done_hold=task.done_hold, open_loop=open_loop)
        self.history: list[GlobalFrame] = [self.world.snapshot()
                                           for _ in range(self.n_prefix + 1)]
        self.frames_out: list[GlobalFrame] = []
        self.frame_idx = 0
        self.seg_pos = self.n_pred  # force a plan on the first step
        self.ref: GlobalMotion | None = None
        self.prev_segment: PlanSegment | None = None
        self.done = False
        self.hold_count = 0
        self.task_done_frame: int | None = None
        self.pending_task: TaskSpec | None = None
        self.switch_ready_frame: int | None = None
        self.prompt = ""
        self.target_world = TargetCondition.none(self.skeleton)
        self._manual_prompt: str | None = None
        self._manual_target: TargetCondition | None = None
        self._assign_task_conditions()
        self.log.events.append(self._task_event(0, "task_start"))

    def _task_event(self, frame: int, kind: str) -> dict:
        return {"frame": frame, "kind": kind, "task": self.task.kind,
                "limb": self.task.limb, "objects": self.world.describe_objects(),
                "target_world": self.target_world.joint_targets.tolist(),
                "target_valid": self.target_world.joint_valid.tolist(),
                "heading_target": float(self.target_world.heading_target),
                "done_hold": self.task.done_hold}

    # -- task conditioning ----------------------------------------------------
    def _assign_task_conditions(self) -> None:
        sk, cfg, task = self.skeleton, self.cfg, self.task
        if self._manual_prompt is not None:
            self.prompt = self._manual_prompt
        if self._manual_target is not None:
            self.target_world = self._manual_target
            if self._manual_prompt is not None:
                return
        if task.kind == "reach":
            if self._manual_target is None:
                dist = self.rng.uniform(cfg.tasks.reach_min, cfg.tasks.reach_max)
                ang = self.rng.uniform(-np.pi, np.pi)
                anchor = self.history[-1].joint_pos[0]
                goal = np.array([anchor[0] + dist * np.cos(ang),
                                 sk.rest_pose()[0, 1] - 0.02,
                                 anchor[2] + dist * np.sin(ang)])
                heading = float(np.arctan2(goal[2] - anchor[2], goal[0] - anchor[0]))
                self.target_world = TargetCondition.for_joint(sk, 0, goal, heading)
            if self._manual_prompt is None:
                self.prompt = REACH_PROMPTS[self.rng.integers(len(REACH_PROMPTS))]
        elif task.kind == "strike":
            bag = self.world.bag
            goal = np.array([bag.center_xz[0], 0.5 * bag.height, bag.center_xz[1]])
            joint = sk.joint_index(task.limb if "foot" in task.limb
                                   else task.limb.replace("hand", self._hand_joint()))
            anchor = self.history[-1].joint_pos[0]
            heading = float(np.arctan2(goal[2] - anchor[2], goal[0] - anchor[0]))
            self.target_world = TargetCondition.for_joint(sk, joint, goal, heading)
            if self._manual_prompt is None:
                pool = strike_prompts(self.task.limb)
                self.prompt = pool[self.rng.integers(len(pool))]
        elif task.kind == "sit":
            sofa = self.world.sofa
            goal = np.array([sofa.center_xz[0], sofa.seat_height + 0.05, sofa.center_xz[1]])
            self.target_world = TargetCondition.for_joint(sk, 0, goal, sofa.facing)
            if self._manual_prompt is None:
                self.prompt = SIT_PROMPTS[self.rng.integers(len(SIT_PROMPTS))]
        else:  # getup
            sofa = self.world.sofa
            stand = (sofa.center_xz + sofa.face_dir()
                     * (sofa.seat_depth / 2.0 + cfg.tasks.getup_target_forward))
            goal = np.array([stand[0], cfg.tasks.getup_target_height, stand[1]])
            self.target_world = TargetCondition.for_joint(sk, 0, goal, sofa.facing)
            if self._manual_prompt is None:
                self.prompt = GETUP_PROMPTS[self.rng.integers(len(GETUP_PROMPTS))]

    def _hand_joint(self) -> str:
        return "wrist" if "left_wrist" in self.skeleton.joint_names else "hand"

    # -- prompt/target edits (service) ----------------------------------------
    def request_prompt(self, prompt: str) -> int:
        """Takes effect at the next segment boundary; returns that frame index."""
        self._manual_prompt = prompt
        return self.next_boundary_frame()

    def request_target(self, target: TargetCondition) -> int:
        self._manual_target = target
        return self.next_boundary_frame()

    def request_task(self, task: TaskSpec) -> int:
        self.pending_task = task
        self.switch_ready_frame = self.frame_idx
        return self.next_boundary_frame()

    def next_boundary_frame(self) -> int:
        return self.frame_idx + (self.n_pred - self.seg_pos)

    # -- planning ---------------------------------------------------------------
    def _anchor(self) -> GlobalFrame:
        if self.open_loop and self.ref is not None:
            return self.ref.frame(len(self.ref) - 1)
        return self.history[-1]

    def _prefix(self) -> RelativeMotion:
        if self.open_loop and self.prev_segment is not None:
            return RelativeMotion(self.prev_segment.features[-self.n_prefix:].copy())
        window = GlobalMotion.from_frames(self.history[-(self.n_prefix + 1):])
        rel = global_to_relative(self.skeleton, window,
                                 self.cfg.contacts.height, self.cfg.contacts.speed)
        return RelativeMotion(rel.features[1:])

    def _segment_target(self, anchor: GlobalFrame) -> TargetCondition:
        """World target for this segment (intermediate targets for locomotion)."""
        target = self.target_world
        if self.task.kind == "reach":
            v_max = (self.cfg.tasks.v_max_run if "run" in self.prompt
                     else self.cfg.tasks.v_max_walk)
            horizon = self.n_pred / self.skeleton.frame_rate
            current = anchor.joint_pos[0, [0, 2]]
            goal = target.joint_targets[0]
            step = intermediate_target(current, goal[[0, 2]], v_max, horizon)
            inter = np.array([step[0], goal[1], step[1]])
            heading = target.heading_target
            if np.linalg.norm(goal[[0, 2]] - current) > 0.15:
                heading = float(np.arctan2(goal[2] - anchor.joint_pos[0, 2],
                                           goal[0] - anchor.joint_pos[0, 0]))
            out = TargetCondition.for_joint(self.skeleton, 0, inter, heading)
            return out
        return target

    def _replan(self) -> None:
        boundary_frame = self.frame_idx
        if self.pending_task is not None and (
                self.switch_ready_frame is None or self.frame_idx >= self.switch_ready_frame):
            self._switch_task(self.pending_task, boundary_frame)
            self.pending_task = None
            self.switch_ready_frame = None
        if self._manual_prompt is not None or self._manual_target is not None:
            self._assign_task_conditions()
        anchor = self._anchor()
        prefix = self._prefix()
        target_world = self._segment_target(anchor)
        target_local = target_world.localized(anchor.heading, anchor.root_xz)
        seed_child = self._plan_seed_seq.spawn(1)[0]
        gen = torch.Generator()
        gen.manual_seed(int(seed_child.generate_state(1, np.uint64)[0] % (2 ** 63)))
        segment = self.planner.plan(prefix, self.prompt, target_local,
                                    guidance=self.cfg.tasks.guidance, generator=gen)
        self.ref = relative_to_global(self.skeleton, RelativeMotion(segment.features), anchor)
        self.prev_segment = segment
        self.seg_pos = 0
        self.log.segments.append(segment)
        self.log.segment_meta.append({
            "start_frame": boundary_frame, "prompt": self.prompt,
            "task": self.task.kind,
            "target_world": target_world.joint_targets.tolist(),
            "target_valid": target_world.joint_valid.tolist(),
            "heading": target_world.heading_target,
            "anchor_heading": anchor.heading,
            "anchor_xz": anchor.root_xz.tolist(),
            "wall_ms": segment.wall_time_ms,
        })

    def _switch_task(self, task: TaskSpec, frame: int) -> None:
        self.task = task
        self._manual_prompt = None
        self._manual_target = None
        if task.kind == "strike" and task.limb is None:
            task.limb = STRIKE_LIMBS[self.rng.integers(len(STRIKE_LIMBS))]
        if task.kind in ("strike",) and self.world.bag is None:
            self.world.place_task_objects("strike", self.rng, self.cfg.tasks)
        if task.kind in ("sit", "getup") and self.world.sofa is None:
            self.world.place_task_objects(task.kind, self.rng, self.cfg.tasks)
        self.hold_count = 0
        self.task_done_frame = None
        self._assign_task_conditions()
        self.log.events.append(self._task_event(frame, "task_switch"))

    # -- stepping ---------------------------------------------------------------
    def observe(self) -> np.ndarray:
        if self.seg_pos >= self.n_pred:
            self._replan()
        return build_state(self.ref.frame(self.seg_pos), self.history[-1])

    def current_ref(self) -> GlobalFrame:
        if self.seg_pos >= self.n_pred:
            self._replan()
        return self.ref.frame(self.seg_pos)

    def step(self, action: np.ndarray):
        """Execute one control frame; returns (reward, done, info)."""
        if self.done:
            raise SimulationError("episode already finished")
        ref = self.current_ref()
        pd = ref.joint_pos + action
        try:
            self.world.control_step(pd)
        except SimulationError:
            self.log.aborted = True
            self.done = True
            return 0.0, True, {"aborted": True}
        frame = self.world.snapshot()
        self.history.append(frame)
        if len(self.history) > self.n_prefix + 1:
            self.history.pop(0)
        self.frames_out.append(frame)
        self.log.bag_angles.append(self.world.bag.angle_to_ground_deg
                                   if self.world.bag is not None else 90.0)
        reward = tracking_reward(ref, frame, action,
                                 self.cfg.tracker.k_r, self.cfg.tracker.w_e)
        self.frame_idx += 1
        self.seg_pos += 1

        info = {"task": self.task.kind}
        if reset_check(ref, frame, self.cfg.tracker.reset_threshold):
            self.log.failed = True
            self.done = True
            self.log.events.append({"frame": self.frame_idx, "kind": "tracking_reset"})
            return reward, True, {**info, "failed": True}

        if task_success(self.task, self.world, frame, self.target_world, self.cfg):
            self.hold_count += 1
        else:
            self.hold_count = 0
        if self.hold_count >= self.task.done_hold and self.task_done_frame is None:
            self.task_done_frame = self.frame_idx
            self.log.success = True
            self.log.events.append({"frame": self.frame_idx, "kind": "task_done",
                                    "task": self.task.kind})
            if self.state_machine:
                nxt = state_machine_step(self.task, True, self.rng,
                                         self.world.bag is not None
                                         and not self.world.bag.fallen)
                wait = self.cfg.tasks.getup_wait if self.task.kind == "sit" else 0
                self.pending_task = nxt
                self.switch_ready_frame = self.frame_idx + wait
            else:
                self.done = True
                return reward, True, {**info, "success": True}

        if self.frame_idx >= self.max_frames:
            self.done = True
            info["timeout"] = True
        return reward, self.done, info

    def finish(self) -> EpisodeLog:
        self.log.frames = GlobalMotion.from_frames(self.frames_out) if self.frames_out \
            else hold_pose(self.skeleton, self.history[-1], 1)
        return self.log


def run_episode(planner: DiPlanner, policy: TrackingPolicy, config: Config,
                task: TaskSpec, seed: int, open_loop: bool = False,
                state_machine: bool = False, max_frames: int | None = None) -> EpisodeLog:
    """Run one full episode with a deterministic policy."""
    session = ClosedLoopSession(planner, config, task, seed, open_loop=open_loop,
                                state_machine=state_machine, max_frames=max_frames)
    while not session.done:
        state = session.observe()
        action = policy.act(state, stochastic=False)
        session.step(action)
    return session.finish()


def offline_success(manifest: dict, frames: GlobalMotion, cfg: Config) -> bool:
    """Recompute the success flag from a persisted log (online/offline agreement).

    Covers the episode's initial task up to the first task switch, mirroring
    the online success flag.
    """
    task_kind = manifest["task"]
    start = next(e for e in manifest["events"] if e["kind"] == "task_start")
    hold = manifest["done_hold"]
    switches = [e["frame"] for e in manifest["events"] if e["kind"] == "task_switch"]
    cutoff = min(switches) if switches else len(frames)
    goal = None
    for pos, valid in zip(start["target_world"], start["target_valid"]):
        if valid:
            goal = np.array(pos)
    if task_kind == "strike":
        ok = [a < cfg.tasks.bag_fall_angle for a in manifest["bag_angles"][:cutoff]]
    else:
        ok = []
        for i in range(min(cutoff, len(frames))):
            pelvis = frames.positions[i, 0]
            if task_kind == "reach":
                ok.append(np.hypot(pelvis[0] - goal[0], pelvis[2] - goal[2])
                          <= cfg.tasks.success_radius)
            elif task_kind == "sit":
                ok.append(_sit_ok(pelvis, start["objects"]["sofa"], cfg))
            else:
                ok.append(np.linalg.norm(pelvis - goal) <= cfg.tasks.success_radius)
    run = 0
    for flag in ok:
        run = run + 1 if flag else 0
        if run >= hold:
            return True
    return False


def _sit_ok(pelvis: np.ndarray, sofa: dict, cfg: Config) -> bool:
    from .simworld import SofaState
    state = SofaState(np.array(sofa["center"]), sofa["facing"], sofa["seat"][0],
                      sofa["seat"][1], sofa["seat"][2], sofa["back"][0], sofa["back"][1])
    on_seat = state.contains_xz(pelvis[[0, 2]])
    return bool(on_seat and abs(pelvis[1] - state.seat_height) <= cfg.tasks.sit_height_band)
