"""Simplified physics world: the character as constrained particles.

Each joint is a particle driven by a PD force toward its target position
(optionally with gravity feed-forward); bones are distance constraints solved
by Gauss-Seidel projection; ground and sofa contacts project positions and
damp velocities Coulomb-style. A kickboxing bag tips about its base rim when
struck hard enough. Everything is double-precision numpy and bitwise
deterministic for a fixed action stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ObjectsSection, SimSection
from .errors import SimulationError
from .motion import GlobalFrame, heading_from_positions, yaw_matrix
from .skeleton import SkeletonSpec


@dataclass
class BagState:
    center_xz: np.ndarray
    radius: float
    height: float
    mass: float
    tip_impulse: float
    tilt: float = 0.0          # rad from vertical; 0 is upright
    tilt_vel: float = 0.0
    tip_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    fallen: bool = False

    @property
    def angle_to_ground_deg(self) -> float:
        return 90.0 - np.degrees(self.tilt)

    def describe(self) -> dict:
        return {"center": self.center_xz.tolist(), "radius": self.radius,
                "height": self.height, "tilt_deg": float(np.degrees(self.tilt)),
                "tip_axis": self.tip_axis.tolist(), "fallen": self.fallen}


@dataclass
class SofaState:
    center_xz: np.ndarray
    facing: float  # yaw of the direction the seat faces
    seat_width: float
    seat_depth: float
    seat_height: float
    back_height: float
    back_depth: float

    def face_dir(self) -> np.ndarray:
        return np.array([np.cos(self.facing), np.sin(self.facing)])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """World (N, 3) -> sofa frame: x toward the front, z lateral."""
        rel = points.copy()
        rel[:, 0] -= self.center_xz[0]
        rel[:, 2] -= self.center_xz[1]
        return rel @ yaw_matrix(self.facing)

    def from_local_dir(self, d: np.ndarray) -> np.ndarray:
        return yaw_matrix(self.facing) @ d

    def seat_polygon(self) -> np.ndarray:
        """Seat-top corners in the ground plane, (4, 2)."""
        hw, hd = self.seat_width / 2.0, self.seat_depth / 2.0
        corners = np.array([[hd, hw], [hd, -hw], [-hd, -hw], [-hd, hw]])
        c, s = np.cos(self.facing), np.sin(self.facing)
        rot = np.array([[c, -s], [s, c]])
        return corners @ rot.T + self.center_xz

    def contains_xz(self, xz: np.ndarray) -> bool:
        rel = np.array([xz[0] - self.center_xz[0], 0.0, xz[1] - self.center_xz[1]])
        local = yaw_matrix(self.facing).T @ rel
        return (abs(local[0]) <= self.seat_depth / 2.0
                and abs(local[2]) <= self.seat_width / 2.0)

    def describe(self) -> dict:
        return {"center": self.center_xz.tolist(), "facing": self.facing,
                "seat": [self.seat_width, self.seat_depth, self.seat_height],
                "back": [self.back_height, self.back_depth]}


def joint_masses(skeleton: SkeletonSpec, total_mass: float) -> np.ndarray:
    """Heuristic mass split: heavier joints carry longer adjacent bones."""
    raw = np.ones(skeleton.joint_count)
    for j in range(1, skeleton.joint_count):
        length = skeleton.bone_length(j)
        raw[j] += 4.0 * length
        raw[skeleton.parent_index[j]] += 4.0 * length
    return raw / raw.sum() * total_mass


class SimWorld:
    def __init__(self, skeleton: SkeletonSpec, sim: SimSection, objects: ObjectsSection):
        self.skeleton = skeleton
        self.cfg = sim
        self.objects_cfg = objects
        self.mass = joint_masses(skeleton, sim.total_mass)
        self.inv_mass = 1.0 / self.mass
        self.bones = [(j, skeleton.parent_index[j], skeleton.bone_length(j))
                      for j in range(1, skeleton.joint_count)]
        self._bone_child = np.array([b[0] for b in self.bones], dtype=int)
        self._bone_parent = np.array([b[1] for b in self.bones], dtype=int)
        self._bone_rest = np.array([b[2] for b in self.bones], dtype=float)
        self._bone_w = (self.inv_mass[self._bone_child]
                        + self.inv_mass[self._bone_parent])
        self.pos = skeleton.rest_pose()
        self.vel = np.zeros_like(self.pos)
        self.bag: BagState | None = None
        self.sofa: SofaState | None = None
        self._inside_bag = np.zeros(skeleton.joint_count, dtype=bool)
        self.time = 0.0

    # -- setup ---------------------------------------------------------------
    def reset_to_pose(self, positions: np.ndarray, velocities: np.ndarray | None = None):
        self.pos = np.array(positions, dtype=np.float64)
        self.vel = np.zeros_like(self.pos) if velocities is None else np.array(velocities)
        self._inside_bag[:] = False
        self.time = 0.0

    def place_task_objects(self, task: str, rng: np.random.Generator,
                           tasks_cfg) -> None:
        """Spawn/perturb task objects; the character is assumed at the origin
        heading +x (the episode anchors the world that way)."""
        self.bag = None
        self.sofa = None
        obj = self.objects_cfg
        if task == "strike":
            center = np.array([tasks_cfg.strike_distance, 0.0])
            center += rng.uniform(-tasks_cfg.strike_perturb, tasks_cfg.strike_perturb, 2)
            self.bag = BagState(center, obj.bag_radius, obj.bag_height,
                                obj.bag_mass, obj.bag_tip_impulse)
        elif task in ("sit", "getup"):
            center = np.array([tasks_cfg.sofa_distance, 0.0])
            center += rng.uniform(-tasks_cfg.sofa_perturb, tasks_cfg.sofa_perturb, 2)
            facing = np.pi + rng.uniform(-tasks_cfg.sofa_yaw_perturb,
                                         tasks_cfg.sofa_yaw_perturb)
            self.sofa = SofaState(center, facing, obj.seat_width, obj.seat_depth,
                                  obj.seat_height, obj.back_height, obj.back_depth)
        elif task != "reach":
            raise SimulationError(f"unknown task {task!r}")

    # -- stepping ------------------------------------------------------------
    def control_step(self, pd_targets: np.ndarray) -> None:
        for _ in range(self.cfg.substeps):
            self.step(pd_targets, self.cfg.dt)

    def step(self, pd_targets: np.ndarray, dt: float) -> None:
        """One substep: PD forces, integration, constraints, contacts."""
        cfg = self.cfg
        if not np.all(np.isfinite(pd_targets)):
            raise SimulationError("non-finite PD targets")
        force = cfg.kp * (pd_targets - self.pos) - cfg.kd * self.vel
        norm = np.linalg.norm(force, axis=1, keepdims=True)
        scale = np.minimum(1.0, cfg.f_max / np.maximum(norm, 1e-9))
        force = force * scale
        acc = force * self.inv_mass[:, None]
        if not cfg.gravity_comp:
            acc[:, 1] -= cfg.gravity
        self.vel = self.vel + acc * dt
        prev = self.pos.copy()
        self.pos = self.pos + self.vel * dt

        for _ in range(cfg.iterations):
            self._project_bones()

        contact_normals = self._project_contacts()

        self.vel = (self.pos - prev) / dt
        for j, normal in contact_normals:
            vn = float(self.vel[j] @ normal)
            if vn < 0.0:
                self.vel[j] -= vn * normal
                vt = self.vel[j] - (self.vel[j] @ normal) * normal
                speed = np.linalg.norm(vt)
                if speed > 1e-9:
                    keep = max(0.0, 1.0 - cfg.friction * (-vn) / speed)
                    self.vel[j] = self.vel[j] - vt + vt * keep

        self._update_bag(dt)
        self.time += dt
        if not (np.all(np.isfinite(self.pos)) and np.all(np.isfinite(self.vel))):
            raise SimulationError("simulation state became non-finite")

    def _project_bones(self, relax: float = 0.9) -> None:
        """One Jacobi-style projection pass over all bone constraints."""
        child, parent = self._bone_child, self._bone_parent
        d = self.pos[child] - self.pos[parent]
        length = np.sqrt(np.einsum("ij,ij->i", d, d))
        safe = np.maximum(length, 1e-9)
        c = length - self._bone_rest
        corr = (relax * c / (safe * self._bone_w))[:, None] * d
        np.add.at(self.pos, child, -self.inv_mass[child, None] * corr)
        np.add.at(self.pos, parent, self.inv_mass[parent, None] * corr)

    def _project_contacts(self) -> list:
        """Push joints out of the ground and sofa; returns (joint, normal) pairs."""
        contacts = []
        below = self.pos[:, 1] < 0.0
        for j in np.nonzero(below)[0]:
            self.pos[j, 1] = 0.0
        for j in np.nonzero(self.pos[:, 1] <= 1e-9)[0]:
            contacts.append((j, np.array([0.0, 1.0, 0.0])))

        if self.sofa is not None:
            local = self.sofa.to_local(self.pos)
            contacts.extend(self._project_box(
                local,
                (-self.sofa.seat_depth / 2.0, self.sofa.seat_depth / 2.0),
                (0.0, self.sofa.seat_height),
                (-self.sofa.seat_width / 2.0, self.sofa.seat_width / 2.0)))
            local = self.sofa.to_local(self.pos)
            contacts.extend(self._project_box(
                local,
                (-self.sofa.seat_depth / 2.0 - self.sofa.back_depth,
                 -self.sofa.seat_depth / 2.0),
                (0.0, self.sofa.seat_height + self.sofa.back_height),
                (-self.sofa.seat_width / 2.0, self.sofa.seat_width / 2.0)))
        return contacts

    def _project_box(self, local: np.ndarray, xr, yr, zr) -> list:
        """Push joints out of an axis-aligned box in sofa-local coordinates."""
        contacts = []
        inside = ((local[:, 0] > xr[0]) & (local[:, 0] < xr[1])
                  & (local[:, 1] > yr[0]) & (local[:, 1] < yr[1])
                  & (local[:, 2] > zr[0]) & (local[:, 2] < zr[1]))
        for j in np.nonzero(inside)[0]:
            x, y, z = local[j]
            # candidate pushes: +x/-x, +y (top), +z/-z; never through the floor
            options = [
                (xr[1] - x, np.array([1.0, 0.0, 0.0])),
                (x - xr[0], np.array([-1.0, 0.0, 0.0])),
                (yr[1] - y, np.array([0.0, 1.0, 0.0])),
                (zr[1] - z, np.array([0.0, 0.0, 1.0])),
                (z - zr[0], np.array([0.0, 0.0, -1.0])),
            ]
            depth, normal_local = min(options, key=lambda o: o[0])
            normal = self.sofa.from_local_dir(normal_local)
            self.pos[j] += depth * normal
            contacts.append((j, normal))
        return contacts

    def _update_bag(self, dt: float) -> None:
        bag = self.bag
        if bag is None:
            return
        if bag.fallen:
            self._inside_bag[:] = False
            return
        rel = self.pos[:, [0, 2]] - bag.center_xz
        dist = np.linalg.norm(rel, axis=1)
        inside = (dist < bag.radius) & (self.pos[:, 1] > 0.0) & (self.pos[:, 1] < bag.height)
        entered = inside & ~self._inside_bag
        impulse_vec = np.zeros(2)
        impulse = 0.0
        contact_height = 0.0
        for j in np.nonzero(entered)[0]:
            v_h = self.vel[j, [0, 2]]
            speed = np.linalg.norm(v_h)
            if speed < 1e-6:
                continue
            impulse_j = self.mass[j] * speed
            impulse += impulse_j
            impulse_vec += self.mass[j] * v_h
            contact_height = max(contact_height, self.pos[j, 1])
        self._inside_bag = inside

        inertia = bag.mass * bag.height ** 2 / 3.0
        if impulse > 0.0 and (bag.tilt > 0.0 or impulse >= bag.tip_impulse):
            if np.linalg.norm(impulse_vec) > 1e-9:
                bag.tip_axis = impulse_vec / np.linalg.norm(impulse_vec)
            lever = np.clip(contact_height, 0.5 * bag.height, bag.height)
            bag.tilt_vel += impulse * lever / inertia

        if bag.tilt > 0.0 or bag.tilt_vel > 0.0:
            torque = bag.mass * self.cfg.gravity * (
                (bag.height / 2.0) * np.sin(bag.tilt) - bag.radius * np.cos(bag.tilt))
            bag.tilt_vel += torque / inertia * dt - 0.5 * bag.tilt_vel * dt
            bag.tilt += bag.tilt_vel * dt
            if bag.tilt <= 0.0:
                bag.tilt = 0.0
                bag.tilt_vel = max(0.0, bag.tilt_vel)
                if torque < 0.0:
                    bag.tilt_vel = 0.0
            if bag.tilt >= np.pi / 2.0:
                bag.tilt = np.pi / 2.0
                bag.tilt_vel = 0.0
                bag.fallen = True

    # -- observation ----------------------------------------------------------
    def snapshot(self) -> GlobalFrame:
        return GlobalFrame(self.pos.copy(), self.vel.copy(),
                           heading_from_positions(self.skeleton, self.pos))

    def describe_objects(self) -> dict:
        out = {}
        if self.bag is not None:
            out["bag"] = self.bag.describe()
        if self.sofa is not None:
            out["sofa"] = self.sofa.describe()
        return out
