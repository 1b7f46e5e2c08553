"""Contact episode generation and on-disk persistence.

An episode keeps the object fixed at the world origin and slides the sensor
along a parametric trajectory while staying in contact.  Ground-truth poses,
noisy end-effector measurements, a noisy start-of-episode vision prior and
perturbed normal images are produced deterministically from a seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import geometry, imageio
from .geometry import Pose
from .render import (DepthImage, GelConfig, NormalImage, contact_touches_border,
                     depth_to_normals, perturb_normals, render_depth,
                     _trace_lower_envelope)
from .shapes import ShapeSDF, shape_from_descriptor


class EpisodeGenerationError(RuntimeError):
    pass


@dataclass
class TrajectorySpec:
    """Sensor motion over the object: linear / arc slide, in-place rotation,
    or a composite slide-plus-spin."""

    kind: str = "linear"           # linear | arc | rotation | composite
    steps: int = 12
    indent: float = 1.0            # target max indentation at the start pose (mm)
    length: float = 3.0            # slide length (mm), linear/composite
    direction_deg: float | None = 0.0   # slide direction in the gel plane; None = seeded random
    arc_radius: float = 5.0        # arc variant (mm)
    arc_angle_deg: float = 40.0
    spin_deg: float = 0.0          # rotation about the contact axis (rotation/composite)
    dt: float = 0.1

    def to_dict(self):
        return {"kind": self.kind, "steps": self.steps, "indent": self.indent,
                "length": self.length, "direction_deg": self.direction_deg,
                "arc_radius": self.arc_radius, "arc_angle_deg": self.arc_angle_deg,
                "spin_deg": self.spin_deg, "dt": self.dt}

    @staticmethod
    def from_dict(d):
        return TrajectorySpec(**d)


@dataclass
class NoiseSpec:
    """Noise magnitudes: per-axis sigmas for pose noise (rad, mm) and the
    angular sigma of the normal-image perturbation (rad)."""

    normal_sigma: float = 0.03
    eff_sigma_rot: float = 0.01
    eff_sigma_trans: float = 1.0
    vis_sigma_rot: float = 0.05
    vis_sigma_trans: float = 2.0

    def eff_sigmas(self):
        return np.array([self.eff_sigma_rot] * 3 + [self.eff_sigma_trans] * 3)

    def vis_sigmas(self):
        return np.array([self.vis_sigma_rot] * 3 + [self.vis_sigma_trans] * 3)

    def to_dict(self):
        return {"normal_sigma": self.normal_sigma,
                "eff_sigma_rot": self.eff_sigma_rot,
                "eff_sigma_trans": self.eff_sigma_trans,
                "vis_sigma_rot": self.vis_sigma_rot,
                "vis_sigma_trans": self.vis_sigma_trans}

    @staticmethod
    def from_dict(d):
        return NoiseSpec(**d)


@dataclass
class Frame:
    timestamp: float
    object_pose: Pose
    eff_pose: Pose
    eff_measured: Pose
    normals: NormalImage
    depth_gt: DepthImage | None = None


@dataclass
class Episode:
    frames: list
    vision_prior: Pose
    noise: NoiseSpec
    shape_descriptor: dict
    gel: GelConfig
    seed: int
    dropped_steps: list = field(default_factory=list)

    @property
    def shape(self) -> ShapeSDF:
        return shape_from_descriptor(self.shape_descriptor)


def _sample_pose_noise(rng, sigmas) -> np.ndarray:
    return rng.normal(0.0, 1.0, size=6) * np.asarray(sigmas)


def _rotation_about_point(axis_angle: np.ndarray, center: np.ndarray) -> Pose:
    rot = geometry.exp(np.concatenate([axis_angle, np.zeros(3)])).rotation
    return Pose(rot, center - rot @ center)


def find_contact_base(shape: ShapeSDF, gel: GelConfig, indent: float) -> Pose:
    """Sensor pose (identity rotation) placing the gel plane `indent` mm above
    the object's lowest surface point, laterally centred on that point."""
    xs = np.linspace(-gel.extent_x / 2, gel.extent_x / 2, 129)
    ys = np.linspace(-gel.extent_y / 2, gel.extent_y / 2, 129)
    gx, gy = np.meshgrid(xs, ys)
    hit, z_surf = _trace_lower_envelope(shape, Pose.identity(), gx, gy,
                                        z_start=-60.0, z_range=120.0)
    if not hit.any():
        raise EpisodeGenerationError("object has no surface above the search window")
    i, j = np.unravel_index(np.nanargmin(np.where(hit, z_surf, np.inf)), z_surf.shape)
    z_low = z_surf[i, j]
    return Pose(np.eye(3), np.array([gx[i, j], gy[i, j], z_low + indent]))


def _trajectory_delta(traj: TrajectorySpec, frac: float, direction: float,
                      contact_center: np.ndarray) -> Pose:
    """World-frame motion applied on top of the base sensor pose."""
    d = np.array([np.cos(direction), np.sin(direction), 0.0])
    if traj.kind == "linear":
        return Pose(np.eye(3), frac * traj.length * d)
    if traj.kind == "arc":
        psi = np.deg2rad(traj.arc_angle_deg) * frac
        side = np.array([-d[1], d[0], 0.0])
        offs = traj.arc_radius * (np.sin(psi) * d + (1.0 - np.cos(psi)) * side)
        return Pose(np.eye(3), offs)
    if traj.kind == "rotation":
        angle = np.deg2rad(traj.spin_deg) * frac
        return _rotation_about_point(np.array([0.0, 0.0, angle]), contact_center)
    if traj.kind == "composite":
        angle = np.deg2rad(traj.spin_deg) * frac
        spin = _rotation_about_point(np.array([0.0, 0.0, angle]), contact_center)
        slide = Pose(np.eye(3), frac * traj.length * d)
        return geometry.compose(slide, spin)
    raise EpisodeGenerationError(f"unknown trajectory kind {traj.kind!r}")


def generate_episode(shape: ShapeSDF, trajectory: TrajectorySpec, gel: GelConfig,
                     noise: NoiseSpec, seed: int,
                     max_contact_breaks: int = 2,
                     drop_border_frames: bool = True) -> Episode:
    """Simulate one contact episode; deterministic for a fixed seed.

    Frames whose contact region touches the image border are dropped, as the
    Poisson boundary condition cannot handle them.  More than
    `max_contact_breaks` consecutive out-of-contact steps abort generation.
    """
    if trajectory.steps < 3:
        raise EpisodeGenerationError("episodes need at least 3 steps")
    rng = np.random.default_rng(seed)
    direction = (np.deg2rad(trajectory.direction_deg)
                 if trajectory.direction_deg is not None
                 else rng.uniform(0.0, 2.0 * np.pi))

    base = find_contact_base(shape, gel, trajectory.indent)
    contact_center = base.translation - np.array([0.0, 0.0, trajectory.indent])
    object_pose = Pose.identity()

    frames, dropped = [], []
    consecutive_breaks = 0
    for k in range(trajectory.steps):
        frac = k / max(trajectory.steps - 1, 1)
        delta = _trajectory_delta(trajectory, frac, direction, contact_center)
        eff = geometry.compose(delta, base)
        depth = render_depth(shape, object_pose, eff, gel)
        if not depth.mask.any():
            consecutive_breaks += 1
            if consecutive_breaks > max_contact_breaks:
                raise EpisodeGenerationError(
                    f"contact lost for more than {max_contact_breaks} "
                    f"consecutive steps at step {k}")
        else:
            consecutive_breaks = 0
        if drop_border_frames and contact_touches_border(depth.mask):
            dropped.append(k)
            continue
        normals = depth_to_normals(depth, gel)
        normals = perturb_normals(normals, noise.normal_sigma,
                                  seed=int(rng.integers(0, 2**31 - 1)))
        eff_measured = geometry.oplus(eff, _sample_pose_noise(rng, noise.eff_sigmas()))
        frames.append(Frame(timestamp=k * trajectory.dt, object_pose=object_pose,
                            eff_pose=eff, eff_measured=eff_measured,
                            normals=normals, depth_gt=depth))
    if len(frames) < 3:
        raise EpisodeGenerationError(
            f"only {len(frames)} usable frames after border filtering")
    vision_prior = geometry.oplus(object_pose, _sample_pose_noise(rng, noise.vis_sigmas()))
    return Episode(frames=frames, vision_prior=vision_prior, noise=noise,
                   shape_descriptor=shape.descriptor(), gel=gel, seed=seed,
                   dropped_steps=dropped)


def save_episode(episode: Episode, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    meta = {
        "seed": episode.seed,
        "shape": episode.shape_descriptor,
        "gel": episode.gel.to_dict(),
        "noise": episode.noise.to_dict(),
        "vision_prior": geometry.to_quat_trans(episode.vision_prior),
        "dropped_steps": episode.dropped_steps,
        "frames": [],
    }
    for i, fr in enumerate(episode.frames):
        names = {"normals": f"normals_{i:04d}.pfm", "mask": f"mask_{i:04d}.pgm",
                 "depth": f"depth_{i:04d}.pfm"}
        imageio.write_pfm(os.path.join(directory, names["normals"]), fr.normals.values)
        imageio.write_pgm_mask(os.path.join(directory, names["mask"]), fr.normals.mask)
        if fr.depth_gt is not None:
            imageio.write_pfm(os.path.join(directory, names["depth"]), fr.depth_gt.values)
        meta["frames"].append({
            "timestamp": fr.timestamp,
            "object_pose": geometry.to_quat_trans(fr.object_pose),
            "eff_pose": geometry.to_quat_trans(fr.eff_pose),
            "eff_measured": geometry.to_quat_trans(fr.eff_measured),
            **names,
        })
    with open(os.path.join(directory, "episode.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_episode(directory) -> Episode:
    with open(os.path.join(directory, "episode.json")) as f:
        meta = json.load(f)
    gel = GelConfig.from_dict(meta["gel"])
    frames = []
    for fr in meta["frames"]:
        normals = imageio.read_pfm(os.path.join(directory, fr["normals"])).astype(float)
        mask = imageio.read_pgm_mask(os.path.join(directory, fr["mask"]))
        depth_path = os.path.join(directory, fr["depth"])
        depth = None
        if os.path.exists(depth_path):
            values = imageio.read_pfm(depth_path).astype(float)
            depth = DepthImage(values=values, mask=mask.copy())
        frames.append(Frame(
            timestamp=fr["timestamp"],
            object_pose=geometry.from_quat_trans(fr["object_pose"]),
            eff_pose=geometry.from_quat_trans(fr["eff_pose"]),
            eff_measured=geometry.from_quat_trans(fr["eff_measured"]),
            normals=NormalImage(values=normals, mask=mask),
            depth_gt=depth))
    return Episode(frames=frames,
                   vision_prior=geometry.from_quat_trans(meta["vision_prior"]),
                   noise=NoiseSpec.from_dict(meta["noise"]),
                   shape_descriptor=meta["shape"], gel=gel, seed=meta["seed"],
                   dropped_steps=meta.get("dropped_steps", []))
