"""Live-control socket service hosting the closed loop in real time.

One control-loop thread advances the episode at the skeleton frame rate
(best effort, with an explicit "lagging" event when compute-bound) and
broadcasts a state_update every control frame. Inbound prompt/target/task
changes are acknowledged with the frame index at which they take effect (the
next planning-segment boundary). Clients talk JSON over WebSocket; a bounded
per-client outbound buffer drops oldest frames so the loop never blocks.
"""
from __future__ import annotations

import json
import queue
import threading
import time
from collections import deque
from pathlib import Path

import numpy as np

from .config import Config
from .errors import LoopMotionError
from .loop import ClosedLoopSession, TaskSpec, STRIKE_LIMBS, TASK_KINDS
from .motion import TargetCondition
from .planner import DiPlanner
from .tracker import TrackingPolicy

OUTBOUND_BUFFER = 256


class _Client:
    _next_id = 0

    def __init__(self, conn):
        self.conn = conn
        self.queue: deque = deque(maxlen=OUTBOUND_BUFFER)
        self.event = threading.Event()
        self.alive = True
        _Client._next_id += 1
        self.id = _Client._next_id

    def send(self, payload: str):
        self.queue.append(payload)
        self.event.set()


class ControlService:
    """Owns the session, the message queues, and the broadcast fan-out."""

    def __init__(self, planner: DiPlanner, policy: TrackingPolicy, config: Config,
                 task: str = "reach", seed: int = 0, log_dir=None,
                 open_loop: bool = False, state_machine: bool = True):
        self.planner = planner
        self.policy = policy
        self.config = config
        self.task_kind = task
        self.seed = seed
        self.log_dir = Path(log_dir) if log_dir else None
        self.open_loop = open_loop
        self.state_machine = state_machine
        self.inbound: queue.Queue = queue.Queue()
        self.clients: dict[int, _Client] = {}
        self.clients_lock = threading.Lock()
        self.paused = False
        self.stop_event = threading.Event()
        self.episode_index = 0
        self.session = self._new_session(seed)
        self.streamed_frames = 0

    # -- session lifecycle -----------------------------------------------------
    def _new_session(self, seed: int) -> ClosedLoopSession:
        hold = 5 if self.task_kind in ("sit", "getup") else 1
        session = ClosedLoopSession(
            self.planner, self.config, TaskSpec(self.task_kind, done_hold=hold),
            seed, open_loop=self.open_loop, state_machine=self.state_machine,
            max_frames=10 ** 9 if self.state_machine else self.config.tasks.max_frames)
        return session

    def _finish_episode(self, reason: str):
        log = self.session.finish()
        if self.log_dir is not None and log.frames is not None:
            log.save(self.log_dir / f"ep_{self.episode_index:04d}")
        self.episode_index += 1
        self._broadcast({"type": "event", "event": "episode_reset", "reason": reason,
                         "frame": self.session.frame_idx})
        self.session = self._new_session(self.seed + self.episode_index)
        self.streamed_frames = 0

    # -- inbound messages --------------------------------------------------------
    def _apply(self, client: _Client | None, msg: dict) -> dict:
        kind = msg.get("type")
        req = msg.get("req_id")
        try:
            if kind == "set_prompt":
                prompt = msg["prompt"]
                if not isinstance(prompt, str) or not prompt.strip():
                    return {"type": "rejection", "req_id": req,
                            "reason": "prompt must be a non-empty string"}
                frame = self.session.request_prompt(prompt.strip())
                return {"type": "ack", "req_id": req, "effect_frame": frame}
            if kind == "set_target":
                target = self._parse_target(msg)
                frame = self.session.request_target(target)
                return {"type": "ack", "req_id": req, "effect_frame": frame}
            if kind == "set_task":
                task = msg["task"]
                if task not in TASK_KINDS:
                    return {"type": "rejection", "req_id": req,
                            "reason": f"unknown task {task!r}"}
                limb = msg.get("limb")
                if limb is not None and limb not in STRIKE_LIMBS:
                    return {"type": "rejection", "req_id": req,
                            "reason": f"unknown limb {limb!r}"}
                hold = 5 if task in ("sit", "getup") else 1
                frame = self.session.request_task(TaskSpec(task, done_hold=hold, limb=limb))
                return {"type": "ack", "req_id": req, "effect_frame": frame}
            if kind == "pause":
                self.paused = True
                return {"type": "ack", "req_id": req, "effect_frame": self.session.frame_idx}
            if kind == "resume":
                self.paused = False
                return {"type": "ack", "req_id": req, "effect_frame": self.session.frame_idx}
            if kind == "reset":
                self._finish_episode("reset")
                return {"type": "ack", "req_id": req, "effect_frame": 0}
            return {"type": "rejection", "req_id": req,
                    "reason": f"unknown message type {kind!r}"}
        except (KeyError, TypeError, ValueError, LoopMotionError) as exc:
            return {"type": "rejection", "req_id": req, "reason": str(exc)}

    def _parse_target(self, msg: dict) -> TargetCondition:
        sk = self.planner.skeleton
        joint = msg["joint"]
        if isinstance(joint, str):
            joint = sk.joint_index(joint)
        if joint not in sk.target_joints:
            raise ValueError(f"joint {msg['joint']!r} is not a valid target joint")
        position = [float(v) for v in msg["position"]]
        if len(position) != 3:
            raise ValueError("position must have 3 components")
        heading = msg.get("heading")
        return TargetCondition.for_joint(sk, joint, position,
                                         None if heading is None else float(heading))

    # -- broadcast ----------------------------------------------------------------
    def _broadcast(self, payload: dict):
        text = json.dumps(payload)
        with self.clients_lock:
            for client in self.clients.values():
                client.send(text)

    def _state_update(self, lagging: bool):
        frame = self.session.history[-1]
        target = self.session.target_world
        payload = {
            "type": "state_update",
            "frame": self.session.frame_idx,
            "episode": self.episode_index,
            "task": self.session.task.kind,
            "prompt": self.session.prompt,
            "joints": np.asarray(frame.joint_pos, np.float32).tolist(),
            "heading": float(np.float32(frame.heading)),
            "objects": self.session.world.describe_objects(),
            "target": {"positions": target.joint_targets.tolist(),
                       "valid": target.joint_valid.tolist(),
                       "heading": target.heading_target,
                       "heading_valid": bool(target.heading_valid)},
            "paused": self.paused,
            "lagging": lagging,
        }
        self._broadcast(payload)

    # -- control loop ----------------------------------------------------------
    def run_control_loop(self, max_frames: int | None = None):
        """Paced loop; runs until stop_event (or max_frames, for tests)."""
        fps = self.planner.skeleton.frame_rate
        tick = 1.0 / fps
        next_deadline = time.monotonic() + tick
        frames_done = 0
        while not self.stop_event.is_set():
            while True:
                try:
                    client, msg = self.inbound.get_nowait()
                except queue.Empty:
                    break
                reply = self._apply(client, msg)
                if client is not None:
                    client.send(json.dumps(reply))
            if not self.paused:
                events_before = len(self.session.log.events)
                state = self.session.observe()
                action = self.policy.act(state, stochastic=False)
                self.session.step(action)
                frames_done += 1
                lag = time.monotonic() > next_deadline + tick
                self._state_update(lagging=lag)
                for event in self.session.log.events[events_before:]:
                    self._broadcast({"type": "event", **event})
                if lag:
                    self._broadcast({"type": "event", "event": "lagging",
                                     "frame": self.session.frame_idx})
                self.streamed_frames += 1
                if self.session.done:
                    self._finish_episode("episode_end")
            if max_frames is not None and frames_done >= max_frames:
                break
            delay = next_deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
                next_deadline += tick
            else:
                next_deadline = time.monotonic() + tick  # best effort when behind
        self._finish_episode("shutdown")

    # -- websocket plumbing -------------------------------------------------------
    def handle_client(self, conn):
        client = _Client(conn)
        with self.clients_lock:
            self.clients[client.id] = client
        writer = threading.Thread(target=self._writer_loop, args=(client,), daemon=True)
        writer.start()
        try:
            for raw in conn:
                try:
                    msg = json.loads(raw)
                    if not isinstance(msg, dict):
                        raise ValueError("message must be a JSON object")
                except (json.JSONDecodeError, ValueError) as exc:
                    client.send(json.dumps({"type": "rejection", "req_id": None,
                                            "reason": f"malformed message: {exc}"}))
                    continue
                self.inbound.put((client, msg))
        except Exception:
            pass
        finally:
            client.alive = False
            client.event.set()
            with self.clients_lock:
                self.clients.pop(client.id, None)

    def _writer_loop(self, client: _Client):
        while client.alive:
            client.event.wait(timeout=0.5)
            client.event.clear()
            while client.queue:
                try:
                    client.conn.send(client.queue.popleft())
                except Exception:
                    client.alive = False
                    return


def serve(planner: DiPlanner, policy: TrackingPolicy, config: Config, port: int,
          task: str = "reach", seed: int = 0, log_dir=None,
          ready_event: threading.Event | None = None,
          stop_event: threading.Event | None = None) -> ControlService:
    """Run the service until stop_event is set (blocks)."""
    from websockets.sync.server import serve as ws_serve

    service = ControlService(planner, policy, config, task=task, seed=seed,
                             log_dir=log_dir)
    if stop_event is not None:
        service.stop_event = stop_event
    server = ws_serve(service.handle_client, "127.0.0.1", port)
    server_thread = threading.Thread(target=server.serve_forever, daemon=True)
    server_thread.start()
    if ready_event is not None:
        ready_event.set()
    try:
        service.run_control_loop()
    finally:
        server.shutdown()
    return service
