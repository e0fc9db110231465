"""Procedural (motion, text) corpus: gaits, strikes, sofa sit/get-up.

Clips are generated in world space at the configured frame rate with a
plant-based gait model (feet stay put during stance, 2-bone IK for knees and
elbows), then smooth low-frequency noise is added. Every clip starts at the
origin heading 0; the relative representation removes the anchor anyway.

Storage: a directory of canonical motion files plus one JSON index mapping
clip id to prompts and tags; the prompt vocabulary is closed under the corpus
and stored in the index.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config
from .errors import DataError
from .motion import GlobalMotion, RelativeMotion, global_to_relative, wrap_angle, yaw_matrix
from .motion_io import load_motion, save_motion
from .skeleton import SkeletonSpec

TASKS = ("locomote", "strike", "sit", "getup")


@dataclass
class CorpusClip:
    clip_id: str
    motion: GlobalMotion
    prompts: list[str]
    task: str
    style: str


# ---------------------------------------------------------------------------
# kinematic pose builder


def _two_bone_ik(a: np.ndarray, c: np.ndarray, l1: float, l2: float,
                 bend: np.ndarray) -> np.ndarray:
    """Middle joint position for a 2-bone chain from a to c bending toward bend."""
    ac = c - a
    d = np.linalg.norm(ac)
    d = np.clip(d, abs(l1 - l2) + 1e-4, l1 + l2 - 1e-4)
    axis = ac / max(np.linalg.norm(ac), 1e-9)
    t = (l1 * l1 - l2 * l2 + d * d) / (2.0 * d)
    t = np.clip(t, -l1, l1)
    radial = np.sqrt(max(l1 * l1 - t * t, 0.0))
    side = bend - np.dot(bend, axis) * axis
    n = np.linalg.norm(side)
    side = side / n if n > 1e-9 else np.array([0.0, 1.0, 0.0])
    return a + t * axis + radial * side


class BodyBuilder:
    """Turns (pelvis, heading, toe/hand extras) into full joint positions."""

    def __init__(self, skeleton: SkeletonSpec):
        self.sk = skeleton
        rest = skeleton.rest_pose()
        self.rest = rest
        idx = skeleton.joint_index
        self.has_arms = "left_elbow" in skeleton.joint_names
        self.pelvis_y = rest[0, 1]
        self.off = {name: rest[idx(name)] - rest[0] for name in skeleton.joint_names}
        self.thigh = float(np.linalg.norm(rest[idx("left_knee")] - rest[idx("left_hip")]))
        self.shank = float(np.linalg.norm(rest[idx("left_ankle")] - rest[idx("left_knee")]))
        self.toe_from_ankle = rest[idx("left_foot")] - rest[idx("left_ankle")]
        if self.has_arms:
            self.upper_arm = float(np.linalg.norm(rest[idx("left_elbow")] - rest[idx("left_shoulder")]))
            self.forearm = float(np.linalg.norm(rest[idx("left_wrist")] - rest[idx("left_elbow")]))
            self.hand_names = ("left_wrist", "right_wrist")
        else:
            self.hand_names = ("left_hand", "right_hand")
        self.hand_reach = {
            side: float(np.linalg.norm(rest[idx(name)] - rest[idx(self._hand_anchor())]))
            for side, name in zip(("left", "right"), self.hand_names)
        }

    def _hand_anchor(self) -> str:
        return "left_shoulder" if self.has_arms else "chest"

    def hand_anchor_position(self, pelvis, heading, side: str) -> np.ndarray:
        r = yaw_matrix(heading)
        name = f"{side}_shoulder" if self.has_arms else "chest"
        return pelvis + r @ self.off[name]

    def frame(self, pelvis, heading, toe_l, toe_r, foot_heading_l=None,
              foot_heading_r=None, lean: float = 0.0, arm_swing=(0.0, 0.0),
              hand_l=None, hand_r=None) -> np.ndarray:
        sk, idx = self.sk, self.sk.joint_index
        r = yaw_matrix(heading)
        fwd = np.array([np.cos(heading), 0.0, np.sin(heading)])
        pos = np.zeros((sk.joint_count, 3))
        pos[0] = pelvis

        for side, toe, fh, swing, hand in (
            ("left", toe_l, foot_heading_l, arm_swing[0], hand_l),
            ("right", toe_r, foot_heading_r, arm_swing[1], hand_r),
        ):
            hip = pelvis + r @ self.off[f"{side}_hip"]
            rf = yaw_matrix(heading if fh is None else fh)
            ankle = np.asarray(toe) - rf @ self.toe_from_ankle
            knee = _two_bone_ik(hip, ankle, self.thigh, self.shank, fwd)
            pos[idx(f"{side}_hip")] = hip
            pos[idx(f"{side}_knee")] = knee
            pos[idx(f"{side}_ankle")] = ankle
            pos[idx(f"{side}_foot")] = np.asarray(toe)

        # torso stacked above the pelvis, leaning forward by `lean` meters at
        # chest height (scaled with joint height)
        torso = [n for n in sk.joint_names
                 if n in ("spine1", "spine2", "spine3", "chest", "neck", "head",
                          "left_collar", "right_collar")]
        for name in torso:
            h = self.off[name][1]
            pos[idx(name)] = pelvis + r @ self.off[name] + lean * (h / 0.45) * fwd

        if self.has_arms:
            for side, swing, hand in (("left", arm_swing[0], hand_l),
                                      ("right", arm_swing[1], hand_r)):
                base = self.off[f"{side}_shoulder"][1]
                shoulder = pelvis + r @ self.off[f"{side}_shoulder"] + lean * (base / 0.45) * fwd
                pos[idx(f"{side}_shoulder")] = shoulder
                if hand is None:
                    wrist = pelvis + r @ self.off[f"{side}_wrist"] + swing * fwd
                else:
                    wrist = np.asarray(hand, dtype=float)
                reach = self.upper_arm + self.forearm - 1e-3
                delta = wrist - shoulder
                dist = np.linalg.norm(delta)
                if dist > reach:
                    wrist = shoulder + delta / dist * reach
                bend = -0.8 * fwd + np.array([0.0, -0.6, 0.0])
                pos[idx(f"{side}_elbow")] = _two_bone_ik(shoulder, wrist,
                                                         self.upper_arm, self.forearm, bend)
                pos[idx(f"{side}_wrist")] = wrist
        else:
            chest = pos[idx("chest")]
            for side, swing, hand in (("left", arm_swing[0], hand_l),
                                      ("right", arm_swing[1], hand_r)):
                if hand is None:
                    wrist = pelvis + r @ self.off[f"{side}_hand"] + swing * fwd + lean * fwd
                else:
                    # hands hang off the chest: keep the bone length feasible
                    delta = np.asarray(hand, dtype=float) - chest
                    dist = np.linalg.norm(delta)
                    reach = self.hand_reach[side]
                    wrist = chest + delta / max(dist, 1e-9) * min(dist, reach)
                pos[idx(f"{side}_hand")] = wrist
        return pos


# ---------------------------------------------------------------------------
# gait machinery


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


class _GaitTrack:
    """Plant-based foot schedule following an arbitrary root track."""

    def __init__(self, body: BodyBuilder, pos_fn, heading_fn, cadence: float,
                 lift: float, lead_time: float = 0.12):
        self.body = body
        self.pos_fn = pos_fn
        self.heading_fn = heading_fn
        self.cadence = cadence
        self.lift = lift
        self.lead = lead_time
        self.swing = 0.38
        self._plants: dict[tuple[str, int], np.ndarray] = {}

    def _phase_offset(self, side: str) -> float:
        return 0.0 if side == "left" else 0.5

    def plant(self, side: str, k: int) -> np.ndarray:
        key = (side, k)
        if key not in self._plants:
            t_land = (k + self.swing - self._phase_offset(side)) / self.cadence
            theta = self.heading_fn(t_land + self.lead)
            root = self.pos_fn(t_land + self.lead)
            lat = -0.10 if side == "left" else 0.10
            off = yaw_matrix(theta) @ np.array([0.12, 0.0, lat])
            self._plants[key] = np.array([root[0] + off[0], 0.02, root[1] + off[2]])
        return self._plants[key]

    def toe(self, side: str, t: float):
        """Toe position and its heading at time t."""
        p = self.cadence * t + self._phase_offset(side)
        k = int(np.floor(p))
        u = p - k
        a, b = self.plant(side, k - 1), self.plant(side, k)
        t_land = (k + self.swing - self._phase_offset(side)) / self.cadence
        theta = self.heading_fn(max(t_land, 0.0))
        if u >= self.swing:
            return b.copy(), theta
        step = np.linalg.norm(b - a)
        prev_land = (k - 1 + self.swing - self._phase_offset(side)) / self.cadence
        turn = abs(self.heading_fn(max(t_land, 0.0)) - self.heading_fn(max(prev_land, 0.0)))
        scale = np.clip(step / 0.10 + turn / 0.4, 0.0, 1.0)
        s = _smoothstep(u / self.swing)
        toe = a + (b - a) * s
        toe[1] = 0.02 + self.lift * scale * np.sin(np.pi * u / self.swing)
        return toe, theta


def _track_frames(body: BodyBuilder, pos_fn, heading_fn, n: int, fps: float,
                  cadence: float, lift: float, arm_amp: float,
                  bob: float = 0.015, pelvis_drop: float = 0.02):
    """Full-body frames for a root track; returns (frames, headings, gait)."""
    gait = _GaitTrack(body, pos_fn, heading_fn, cadence, lift)
    frames = np.zeros((n, body.sk.joint_count, 3))
    headings = np.zeros(n)
    for i in range(n):
        t = i / fps
        theta = heading_fn(t)
        root = pos_fn(t)
        toe_l, fh_l = gait.toe("left", t)
        toe_r, fh_r = gait.toe("right", t)
        y = body.pelvis_y - pelvis_drop + bob * np.sin(2.0 * np.pi * 2.0 * cadence * t)
        pelvis = np.array([root[0], y, root[1]])
        swing = arm_amp * np.sin(2.0 * np.pi * cadence * t)
        frames[i] = body.frame(pelvis, theta, toe_l, toe_r, fh_l, fh_r,
                               arm_swing=(-swing, swing))
        headings[i] = theta
    return frames, headings, gait


def _smooth_noise(rng: np.random.Generator, n: int, shape: tuple, fps: float,
                  level: float) -> np.ndarray:
    """Sum of low-frequency sinusoids, std roughly `level` meters."""
    t = np.arange(n) / fps
    out = np.zeros((n,) + shape)
    for _ in range(3):
        freq = rng.uniform(0.3, 1.5, shape)
        phase = rng.uniform(0.0, 2.0 * np.pi, shape)
        amp = rng.uniform(0.4, 1.0, shape) * level
        out += amp * np.sin(2.0 * np.pi * freq * t[:, None, None] + phase)
    return out


def _assemble(skeleton: SkeletonSpec, frames: np.ndarray, headings: np.ndarray,
              rng: np.random.Generator, noise: float) -> GlobalMotion:
    if noise > 0.0:
        frames = frames + _smooth_noise(rng, frames.shape[0], frames.shape[1:],
                                        skeleton.frame_rate, noise)
    frames[..., 1] = np.maximum(frames[..., 1], 0.001)
    vel = np.zeros_like(frames)
    if frames.shape[0] > 1:
        vel[1:] = (frames[1:] - frames[:-1]) * skeleton.frame_rate
        vel[0] = vel[1]
    return GlobalMotion(frames, vel, wrap_angle(headings))


# ---------------------------------------------------------------------------
# clip families


def _linear_track(start: np.ndarray, end: np.ndarray, duration: float,
                  ease: bool = False):
    """Straight-line root track; optionally easing in and out."""
    delta = end - start

    def pos(t):
        u = np.clip(t / duration, 0.0, 1.0) if duration > 0 else 1.0
        if ease:
            u = _smoothstep(u)
        return start + delta * u

    return pos


def _make_locomotion(body: BodyBuilder, rng: np.random.Generator, noise: float):
    sk = body.sk
    fps = sk.frame_rate
    style = rng.choice(["idle", "slow", "walk", "run", "turn", "stop"],
                       p=[0.08, 0.16, 0.26, 0.18, 0.22, 0.10])
    n = int(rng.integers(90, 150))
    duration = n / fps
    turn_rate = 0.0
    if style == "idle":
        speed = 0.0
    elif style == "slow":
        speed = rng.uniform(0.25, 0.8)
    elif style == "walk":
        speed = rng.uniform(0.8, 1.5)
    elif style == "run":
        speed = rng.uniform(1.8, 2.6)
    elif style == "turn":
        speed = rng.uniform(0.6, 1.3)
        turn_rate = rng.uniform(0.3, 0.9) * rng.choice([-1.0, 1.0])
    else:  # stop: walk then decelerate to stand
        speed = rng.uniform(0.8, 1.5)

    stop_at = rng.uniform(0.45, 0.7) * duration if style == "stop" else None
    # half the clips start from standing so episode bootstraps are in-distribution
    lead_in = rng.uniform(0.4, 1.2) if (style != "idle" and rng.random() < 0.5) else 0.0

    def heading_fn(t):
        t = max(t - lead_in, 0.0)
        return turn_rate * min(t, duration)

    def pos_fn(t):
        t = max(t - lead_in, 0.0)
        if stop_at is not None:
            t = min(t, stop_at)
        if abs(turn_rate) < 1e-6:
            return np.array([speed * t, 0.0])
        # constant-speed arc
        r = speed / turn_rate
        return np.array([r * np.sin(turn_rate * t), r * (1.0 - np.cos(turn_rate * t))])

    cadence = 0.7 + 0.35 * max(speed, 0.4)
    lift = 0.035 + 0.03 * speed
    arm = 0.05 + 0.06 * speed
    frames, headings, _ = _track_frames(body, pos_fn, heading_fn, n, fps,
                                        cadence, lift, arm,
                                        pelvis_drop=0.015 + 0.015 * min(speed, 1.5))

    side = "left" if turn_rate > 0 else "right"
    verb = {"idle": "stands", "slow": "walks", "walk": "walks", "run": "runs",
            "turn": "walks", "stop": "walks"}[style]
    if style == "idle":
        prompts = ["a person stands still", "someone stands in place",
                   "a person is standing and waiting"]
    elif style == "turn":
        # heading turn rate > 0 curves toward +z which is the right side
        side = "right" if turn_rate > 0 else "left"
        prompts = [f"a person walks in a {side} curve",
                   f"a person walks while turning {side}",
                   f"someone turns {side} while walking"]
    elif style == "run":
        prompts = ["a person runs forward", "a person is running fast",
                   "someone jogs straight ahead"]
    elif style == "slow":
        prompts = ["a person walks forward slowly", "someone is walking slowly",
                   "a person strolls forward"]
    elif style == "stop":
        prompts = ["a person walks forward and stops",
                   "someone walks ahead then stands still"]
    else:
        prompts = ["a person walks forward", "someone is walking straight ahead",
                   "a person walks forward at a steady pace"]
    return frames, headings, prompts, style, {"speed": speed, "stop_at": stop_at,
                                              "lead_in": lead_in}


def _make_strike(body: BodyBuilder, rng: np.random.Generator):
    sk = body.sk
    fps = sk.frame_rate
    idx = sk.joint_index
    side = rng.choice(["left", "right"])
    limb = rng.choice(["hand", "foot"])
    n = int(rng.integers(85, 135))
    frames = np.zeros((n, sk.joint_count, 3))
    headings = np.zeros(n)

    rest_toe_l = np.array([0.12, 0.02, -0.10])
    rest_toe_r = np.array([0.12, 0.02, 0.10])
    pelvis0 = np.array([0.0, body.pelvis_y - 0.01, 0.0])

    # sample a reachable target for the striking limb: the anchor position at
    # full extension (shifted pelvis, rotated heading) bounds the distance
    azim = rng.uniform(-0.45, 0.45)
    shift_max = 0.16
    pelvis1 = pelvis0 + shift_max * np.array([np.cos(azim), 0.0, np.sin(azim)])
    heading1 = 0.25 * azim
    if limb == "foot":
        height = rng.uniform(0.25, 0.75)
        anchor = pelvis1 + yaw_matrix(heading1) @ body.off[f"{side}_hip"]
        reach = body.thigh + body.shank - 0.03
    else:
        height = rng.uniform(0.5, 1.25)
        anchor = body.hand_anchor_position(pelvis1, heading1, side)
        name = f"{side}_shoulder" if body.has_arms else "chest"
        lean_shift = 0.05 * (body.off[name][1] / 0.45)
        anchor = anchor + lean_shift * np.array([np.cos(heading1), 0.0, np.sin(heading1)])
        reach = (body.upper_arm + body.forearm - 0.02) if body.has_arms \
            else body.hand_reach[side] - 0.005
    # farthest point at this azimuth and height still within reach of the anchor
    def _max_dist(h):
        b = anchor[0] * np.cos(azim) + anchor[2] * np.sin(azim)
        c = float(anchor @ anchor) - 2.0 * h * anchor[1] + h * h - reach * reach
        return b * b - c, b

    disc, b = _max_dist(height)
    if disc <= 0.0:  # height band misses the reach sphere; aim level with the anchor
        height = float(anchor[1])
        disc, b = _max_dist(height)
    d_max = b + np.sqrt(max(disc, 1e-4))
    dist = rng.uniform(0.55, 0.95) * d_max
    target = np.array([dist * np.cos(azim), height, dist * np.sin(azim)])

    # strike windows: 1-2 repetitions
    reps = int(rng.integers(1, 3))
    windows = []
    start = rng.uniform(0.4, 0.8)
    for _ in range(reps):
        out_t = rng.uniform(0.35, 0.5)
        back_t = rng.uniform(0.4, 0.6)
        hold = rng.uniform(0.05, 0.15)
        if (start + out_t + hold + back_t) * fps >= n - 8:
            break
        windows.append((start, out_t, hold, back_t))
        start += out_t + hold + back_t + rng.uniform(0.4, 0.9)

    joint_name = f"{side}_{'hand' if limb == 'hand' else 'foot'}"
    if body.has_arms and limb == "hand":
        joint_name = f"{side}_wrist"

    for i in range(n):
        t = i / fps
        ext = 0.0
        for (s, out_t, hold, back_t) in windows:
            if s <= t < s + out_t:
                ext = _smoothstep((t - s) / out_t)
            elif s + out_t <= t < s + out_t + hold:
                ext = 1.0
            elif s + out_t + hold <= t < s + out_t + hold + back_t:
                ext = 1.0 - _smoothstep((t - s - out_t - hold) / back_t)
        sway = 0.008 * np.sin(2.0 * np.pi * 0.4 * t)
        shift = ext * shift_max
        pelvis = pelvis0 + np.array([shift * np.cos(azim), sway, shift * np.sin(azim)])
        heading = 0.25 * azim * ext
        kw = {"lean": 0.05 * ext}
        toe_l, toe_r = rest_toe_l.copy(), rest_toe_r.copy()
        if limb == "foot":
            anchor = pelvis + yaw_matrix(heading) @ body.off[f"{side}_hip"]
            rest = rest_toe_l if side == "left" else rest_toe_r
            limb_pos = rest + (target - rest) * ext
            # keep the kick reachable from the (shifted) hip
            delta = limb_pos - anchor
            reach = body.thigh + body.shank - 0.02 + np.linalg.norm(body.toe_from_ankle)
            d = np.linalg.norm(delta)
            if d > reach:
                limb_pos = anchor + delta / d * reach
            if side == "left":
                toe_l = limb_pos
            else:
                toe_r = limb_pos
        else:
            anchor = body.hand_anchor_position(pelvis, heading, side)
            rest_hand = body.rest[idx(joint_name)]
            limb_pos = rest_hand + (target - rest_hand) * ext
            kw["hand_l" if side == "left" else "hand_r"] = limb_pos
        frames[i] = body.frame(pelvis, heading, toe_l, toe_r, **kw)
        headings[i] = heading

    verb = "kicks" if limb == "foot" else "punches"
    noun = "foot" if limb == "foot" else "hand"
    prompts = [
        f"a person {verb} with the {side} {noun}",
        f"a person strikes the target with the {side} {noun}",
        f"someone {verb} the target with a {side} {noun} strike",
    ]
    if limb == "foot" and height > 0.55:
        prompts.append(f"a person performs a high kick with the {side} foot")
    achieved = frames[:, idx(joint_name)]
    miss = np.min(np.linalg.norm(achieved - target, axis=1)) if windows else np.inf
    return frames, headings, prompts, f"{side}_{limb}", {"target": target, "miss": miss,
                                                         "windows": windows}


def _sit_geometry(rng: np.random.Generator, cfg: Config):
    """Sample sofa placement relative to the clip origin."""
    gamma = rng.uniform(-0.5, 0.5)
    d = rng.uniform(0.8, 1.8)
    toward = np.array([np.cos(gamma), np.sin(gamma)])
    face = -toward
    yaw_jitter = rng.uniform(-0.3, 0.3)
    c, s = np.cos(yaw_jitter), np.sin(yaw_jitter)
    face = np.array([c * face[0] - s * face[1], s * face[0] + c * face[1]])
    seat_center = d * toward
    stand = seat_center + face * (cfg.objects.seat_depth / 2.0 + 0.18)
    return seat_center, face, stand


def _seated_arrays(body: BodyBuilder, seat_xz: np.ndarray, face: np.ndarray,
                   seat_height: float):
    """Pelvis/toe placement for sitting on a seat facing `face`."""
    theta = float(np.arctan2(face[1], face[0]))
    pelvis = np.array([seat_xz[0], seat_height + 0.05, seat_xz[1]])
    ahead = 0.32
    toes = []
    for lat in (-0.10, 0.10):
        off = yaw_matrix(theta) @ np.array([ahead, 0.0, lat])
        toes.append(np.array([seat_xz[0] + off[0], 0.02, seat_xz[1] + off[2]]))
    return pelvis, toes[0], toes[1], theta


def seated_pose(skeleton: SkeletonSpec, seat_xz, face, seat_height: float) -> np.ndarray:
    """Static seated pose on a seat; used to initialize the get-up task."""
    body = BodyBuilder(skeleton)
    pelvis, toe_l, toe_r, theta = _seated_arrays(body, np.asarray(seat_xz, float),
                                                 np.asarray(face, float), seat_height)
    return body.frame(pelvis, theta, toe_l, toe_r, lean=0.03)


def _make_sit(body: BodyBuilder, rng: np.random.Generator, cfg: Config):
    sk = body.sk
    fps = sk.frame_rate
    seat_center, face, stand = _sit_geometry(rng, cfg)
    theta_sit = float(np.arctan2(face[1], face[0]))

    start = np.zeros(2)
    approach_dist = float(np.linalg.norm(stand - start))
    v = rng.uniform(0.7, 1.1)
    t_lead = rng.uniform(0.3, 0.9) if rng.random() < 0.6 else 0.0
    t_walk = max(approach_dist / v, 0.3)
    t_turn = 0.8
    t_down = 0.9
    t_idle = rng.uniform(0.8, 1.6)
    n = int(np.ceil((t_lead + t_walk + t_turn + t_down + t_idle) * fps)) + 1
    n = max(n, 80)

    walk_dir = (stand - start) / max(approach_dist, 1e-6)
    theta_walk = float(np.arctan2(walk_dir[1], walk_dir[0]))
    theta0 = theta_walk + (rng.uniform(-0.6, 0.6) if rng.random() < 0.5 else 0.0)
    # unwrapped turn from the walking heading to the sitting heading
    dturn = float(wrap_angle(theta_sit - theta_walk))

    def heading_fn(t):
        t = max(t - t_lead, 0.0)
        if t < t_walk:
            u0 = _smoothstep(t / 0.6)
            return theta0 + (theta_walk - theta0) * u0
        u = np.clip((t - t_walk) / t_turn, 0.0, 1.0)
        return theta_walk + dturn * _smoothstep(u)

    track = _linear_track(start, stand, t_walk, ease=True)

    def pos_fn(t):
        return track(np.clip(t - t_lead, 0.0, t_walk))

    cadence = 0.7 + 0.35 * v
    n_move = int(np.ceil((t_lead + t_walk + t_turn) * fps))
    frames_move, headings_move, gait = _track_frames(
        body, pos_fn, heading_fn, n_move, fps, cadence, 0.05, 0.05 + 0.05 * v)

    # hold the feet where the turn left them; descend onto the seat
    toe_l, _ = gait.toe("left", (n_move - 1) / fps)
    toe_r, _ = gait.toe("right", (n_move - 1) / fps)
    toe_l[1] = toe_r[1] = 0.02
    pelvis_sit, _, _, _ = _seated_arrays(body, seat_center, face, cfg.objects.seat_height)
    pelvis_stand = np.array([stand[0], body.pelvis_y - 0.02, stand[1]])

    frames = np.zeros((n, sk.joint_count, 3))
    headings = np.zeros(n)
    frames[:n_move] = frames_move
    headings[:n_move] = headings_move
    for i in range(n_move, n):
        t = i / fps
        u = np.clip((t - t_lead - t_walk - t_turn) / t_down, 0.0, 1.0)
        s = _smoothstep(u)
        pelvis = pelvis_stand + (pelvis_sit - pelvis_stand) * s
        lean = 0.10 * np.sin(np.pi * min(u, 1.0))
        frames[i] = body.frame(pelvis, theta_sit, toe_l, toe_r, lean=lean + 0.02)
        headings[i] = theta_sit

    prompts = ["a person walks to the sofa and sits down",
               "a person sits down on the sofa",
               "someone sits down on the couch",
               "a person is sitting down"]
    return frames, headings, prompts, "sit", {"seat_center": seat_center, "face": face}


def _make_getup(body: BodyBuilder, rng: np.random.Generator, cfg: Config):
    sk = body.sk
    fps = sk.frame_rate
    # canonical: seated near the origin facing +x with jitter
    yaw = rng.uniform(-0.4, 0.4)
    face = np.array([np.cos(yaw), np.sin(yaw)])
    seat_center = rng.uniform(-0.1, 0.1, size=2)
    stand = seat_center + face * (cfg.objects.seat_depth / 2.0 + 0.18)

    t_idle0 = rng.uniform(0.6, 1.2)
    t_up = 0.9
    t_walk = rng.uniform(0.8, 1.4)
    t_idle1 = rng.uniform(0.8, 1.4)
    n = int(np.ceil((t_idle0 + t_up + t_walk + t_idle1) * fps)) + 1
    n = max(n, 80)

    theta = float(np.arctan2(face[1], face[0]))
    walk_target = stand + face * rng.uniform(0.3, 0.5)

    def heading_fn(t):
        return theta

    track = _linear_track(stand, walk_target, t_walk, ease=True)
    t_walk_start = t_idle0 + t_up

    def pos_fn(t):
        return track(np.clip(t - t_walk_start, 0.0, t_walk))

    cadence = 0.95
    n_rise = int(np.ceil(t_walk_start * fps))
    frames = np.zeros((n, sk.joint_count, 3))
    headings = np.full(n, theta)

    frames_walk, headings_walk, gait = _track_frames(
        body, pos_fn, heading_fn, n, fps, cadence, 0.045, 0.06)
    toe_l, _ = gait.toe("left", 0.0)
    toe_r, _ = gait.toe("right", 0.0)
    toe_l[1] = toe_r[1] = 0.02
    pelvis_sit, _, _, _ = _seated_arrays(body, seat_center, face, cfg.objects.seat_height)
    pelvis_stand = np.array([stand[0], body.pelvis_y - 0.02, stand[1]])

    for i in range(n_rise):
        t = i / fps
        if t < t_idle0:
            s = 0.0
        else:
            s = _smoothstep((t - t_idle0) / t_up)
        pelvis = pelvis_sit + (pelvis_stand - pelvis_sit) * s
        lean = 0.12 * np.sin(np.pi * np.clip((t - t_idle0) / t_up, 0.0, 1.0))
        frames[i] = body.frame(pelvis, theta, toe_l, toe_r, lean=lean + 0.02)
    frames[n_rise:] = frames_walk[n_rise:]
    headings[n_rise:] = headings_walk[n_rise:]

    prompts = ["a person stands up from the sofa and remains standing",
               "a person gets up from the couch",
               "someone stands up and stays standing",
               "a person rises to a standing position"]
    return frames, headings, prompts, "getup", {"seat_center": seat_center, "face": face,
                                                "stand": stand}


# ---------------------------------------------------------------------------
# corpus generation, storage, loading


def generate_corpus(cfg: Config, skeleton: SkeletonSpec, out_dir) -> list[CorpusClip]:
    """Generate and write the corpus; deterministic for a fixed seed."""
    rng = np.random.default_rng(cfg.corpus.seed)
    body = BodyBuilder(skeleton)
    clips: list[CorpusClip] = []
    counts = [("locomote", cfg.corpus.locomote), ("strike", cfg.corpus.strike),
              ("sit", cfg.corpus.sit), ("getup", cfg.corpus.getup)]
    for task, count in counts:
        for i in range(count):
            clip_rng = np.random.default_rng(rng.integers(0, 2 ** 63))
            if task == "locomote":
                frames, headings, prompts, style, info = _make_locomotion(body, clip_rng,
                                                                          cfg.corpus.noise)
            elif task == "strike":
                frames, headings, prompts, style, info = _make_strike(body, clip_rng)
                if info["windows"] and info["miss"] > 0.05:
                    raise DataError(f"strike clip missed its target by {info['miss']:.3f} m")
            elif task == "sit":
                frames, headings, prompts, style, info = _make_sit(body, clip_rng, cfg)
            else:
                frames, headings, prompts, style, info = _make_getup(body, clip_rng, cfg)
            motion = _assemble(skeleton, frames, headings, clip_rng, cfg.corpus.noise)
            if task == "locomote" and info.get("stop_at") is None and info["speed"] > 0.3:
                skip = int(np.ceil(info["lead_in"] * skeleton.frame_rate)) + 1
                steps = np.diff(motion.positions[skip:, 0, [0, 2]], axis=0)
                mean_speed = np.linalg.norm(steps, axis=1).mean() * skeleton.frame_rate
                if abs(mean_speed - info["speed"]) > 0.1 * info["speed"]:
                    raise DataError(
                        f"locomotion clip speed {mean_speed:.2f} vs commanded {info['speed']:.2f}")
            clips.append(CorpusClip(f"{task}_{i:04d}", motion, prompts, task, style))

    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    index = {"clips": [], "vocab": [], "joints": skeleton.joint_count,
             "frame_rate": skeleton.frame_rate, "config_hash": cfg.hash()}
    words = set()
    for clip in clips:
        rel_path = f"clips/{clip.clip_id}.lmo"
        save_motion(out_dir / rel_path, clip.motion, skeleton.joint_count,
                    skeleton.frame_rate)
        index["clips"].append({"id": clip.clip_id, "file": rel_path,
                               "prompts": clip.prompts, "task": clip.task,
                               "style": clip.style})
        for p in clip.prompts:
            words.update(p.lower().replace(",", " ").split())
    index["vocab"] = sorted(words)
    (out_dir / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    return clips


def load_corpus(path):
    """Stream clips from a corpus directory; validates sizes against the index."""
    root = Path(path)
    index_path = root / "index.json"
    if not index_path.exists():
        raise DataError(f"{index_path}: missing corpus index")
    index = json.loads(index_path.read_text())
    joints = index["joints"]
    for entry in index["clips"]:
        motion, j, _fps = load_motion(root / entry["file"])
        if j != joints or not isinstance(motion, GlobalMotion):
            raise DataError(f"{entry['file']}: clip does not match corpus skeleton")
        yield CorpusClip(entry["id"], motion, entry["prompts"], entry["task"],
                         entry["style"])


def corpus_index(path) -> dict:
    return json.loads((Path(path) / "index.json").read_text())


def corpus_features(skeleton: SkeletonSpec, clips, contact_height: float,
                    contact_speed: float):
    """Featurize clips for training; returns (features list, prompts list, clips list)."""
    feats, prompts, kept = [], [], []
    for clip in clips:
        rel = global_to_relative(skeleton, clip.motion, contact_height, contact_speed)
        feats.append(rel.features.astype(np.float32))
        prompts.append(clip.prompts)
        kept.append(clip)
    return feats, prompts, kept
