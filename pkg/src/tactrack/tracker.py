"""Per-timestep tracking pipeline: reconstruct the contact cloud, register it
(image-to-image and/or image-to-patch), assemble factors, optimize, update
the local patch map."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import factors, geometry, patchmap, registration
from .factors import (ConstVelFactor, FactorGraph, Im2ImFactor, Im2PatchFactor,
                      MotionPriorFactor, NoiseModel, OptimizerParams, eff_key,
                      eff_prior, obj_key, vis_prior)
from .geometry import Pose
from .patchmap import KeyframePolicy, PatchMap
from .reconstruct import PointCloud, reconstruct_cloud
from .registration import ICPParams
from .render import GelConfig, NormalImage, contact_touches_border
from .shapes import ShapeSDF


class TrackerMode(str, enum.Enum):
    CONST_VEL = "constvel"
    IMAGE_TO_IMAGE = "im2im"
    PATCH_GRAPH = "patchgraph"
    GROUNDTRUTH_PATCH = "gtpatch"


class ConfigurationError(ValueError):
    pass


@dataclass
class TrackerConfig:
    gel: GelConfig = field(default_factory=GelConfig)
    sigma_eff: tuple = (0.01, 1.0)        # (rad, mm) per axis
    sigma_vis: tuple = (0.05, 2.0)
    sigma_im2im: tuple = (0.05, 2.5)
    # Patch registrations target the self-built local map, which inherits the
    # bias and noise of the poses it was fused at, so they get far less
    # weight than registrations against a known object model.
    sigma_im2pc: tuple = (0.12, 8.0)
    sigma_im2gt: tuple = (0.02, 1.0)
    # Tight quasi-static motion prior: grasped objects barely move between
    # frames, and a looser prior lets the optimizer absorb end-effector
    # measurement noise as spurious object motion, random-walking the
    # estimate over an episode.
    sigma_vel: tuple = (0.005, 0.1)
    icp: ICPParams = field(default_factory=ICPParams)
    # Short episodes benefit from a dense patch: more keyframes mean better
    # overlap for patch registrations.
    keyframes: KeyframePolicy = field(
        default_factory=lambda: KeyframePolicy(interval=2))
    voxel_size: float = 0.3
    optimizer: OptimizerParams = field(default_factory=OptimizerParams)
    im2im_in_patchgraph: bool = True      # ablation switch
    # Registrations whose result jumps this far from their initialization
    # landed in a wrong basin (symmetric imprints) and are discarded.
    # The rotation gate stays loose for patch registrations: rotationally
    # symmetric contacts (spheres) wander freely in rotation while still
    # carrying good translation information.
    gate_im2im: tuple = (0.2, 3.0)        # (rad, mm)
    gate_im2pc: tuple = (1.0, 8.0)
    fixed_lag: int | None = None          # None = full batch
    gt_sample_radius_scale: float = 1.5   # ball diameter as multiple of gel extent
    gt_sample_count: int = 4000
    seed: int = 0

    def noise(self, pair) -> NoiseModel:
        return NoiseModel.isotropic(*pair)

    def to_dict(self):
        return {
            "gel": self.gel.to_dict(),
            "sigma_eff": list(self.sigma_eff), "sigma_vis": list(self.sigma_vis),
            "sigma_im2im": list(self.sigma_im2im),
            "sigma_im2pc": list(self.sigma_im2pc),
            "sigma_im2gt": list(self.sigma_im2gt),
            "sigma_vel": list(self.sigma_vel),
            "icp": {"max_iterations": self.icp.max_iterations,
                    "max_correspondence_distance": self.icp.max_correspondence_distance,
                    "convergence_threshold": self.icp.convergence_threshold,
                    "min_correspondences": self.icp.min_correspondences},
            "keyframes": {"variant": self.keyframes.variant,
                          "interval": self.keyframes.interval,
                          "overlap_fraction": self.keyframes.overlap_fraction},
            "voxel_size": self.voxel_size,
            "optimizer": {"max_iterations": self.optimizer.max_iterations,
                          "lambda_init": self.optimizer.lambda_init,
                          "lambda_scale": self.optimizer.lambda_scale,
                          "cost_tolerance": self.optimizer.cost_tolerance},
            "im2im_in_patchgraph": self.im2im_in_patchgraph,
            "gate_im2im": list(self.gate_im2im),
            "gate_im2pc": list(self.gate_im2pc),
            "fixed_lag": self.fixed_lag,
            "gt_sample_radius_scale": self.gt_sample_radius_scale,
            "gt_sample_count": self.gt_sample_count,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrackerConfig":
        cfg = TrackerConfig()
        if "gel" in d:
            cfg.gel = GelConfig.from_dict(d["gel"])
        for name in ("sigma_eff", "sigma_vis", "sigma_im2im", "sigma_im2pc",
                     "sigma_im2gt", "sigma_vel"):
            if name in d:
                setattr(cfg, name, tuple(d[name]))
        if "icp" in d:
            cfg.icp = ICPParams(**d["icp"])
        if "keyframes" in d:
            cfg.keyframes = KeyframePolicy(**d["keyframes"])
        if "optimizer" in d:
            cfg.optimizer = OptimizerParams(**d["optimizer"])
        for name in ("voxel_size", "im2im_in_patchgraph", "fixed_lag",
                     "gt_sample_radius_scale", "gt_sample_count", "seed"):
            if name in d:
                setattr(cfg, name, d[name])
        for name in ("gate_im2im", "gate_im2pc"):
            if name in d:
                setattr(cfg, name, tuple(d[name]))
        return cfg


@dataclass
class PoseEstimate:
    object_pose: Pose
    eff_pose: Pose
    diagnostics: dict


@dataclass
class EpisodeResult:
    object_trajectory: list
    eff_trajectory: list
    final_rotation_error: float     # rad
    final_translation_error: float  # mm
    diagnostics: list
    patch: PatchMap
    warnings: list


def pose_errors(estimate: Pose, truth: Pose):
    """(geodesic rotation error rad, Euclidean translation error mm) of the
    relative pose estimate^-1 * truth."""
    rel = geometry.compose(geometry.inverse(estimate), truth)
    return (geometry.rotation_angle(rel.rotation),
            float(np.linalg.norm(rel.translation)))


def _sample_sdf_surface(shape: ShapeSDF, center: np.ndarray, radius: float,
                        spacing: float, count: int, seed: int) -> PointCloud:
    """Surface points of the true SDF near the contact, density-matched to
    reconstruction clouds via voxel spacing."""
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(count, 3))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    raw *= radius * rng.uniform(0, 1, size=(count, 1)) ** (1.0 / 3.0)
    pts = shape.project_to_surface(center + raw)
    keep = (np.abs(shape.sdf(pts)) < 1e-3) & \
           (np.linalg.norm(pts - center, axis=1) <= radius)
    pts = pts[keep]
    if len(pts) == 0:
        return PointCloud(points=np.zeros((0, 3)), normals=np.zeros((0, 3)),
                          frame="object")
    normals = shape.gradient(pts)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    pts, normals = patchmap._voxel_downsample(pts, normals, spacing)
    return PointCloud(points=pts, normals=normals, frame="object")


class Tracker:
    """Single-episode tracking loop over one of the four baseline modes."""

    def __init__(self, mode: TrackerMode, config: TrackerConfig,
                 vision_prior: Pose, first_eff_measurement: Pose,
                 shape: ShapeSDF = None):
        mode = TrackerMode(mode)
        if mode is TrackerMode.GROUNDTRUTH_PATCH and shape is None:
            raise ConfigurationError("GroundtruthPatch mode needs the object shape")
        self.mode = mode
        self.config = config
        self.shape = shape
        self.graph = FactorGraph()
        self.values: dict = {}
        self.patch = PatchMap(voxel_size=config.voxel_size)
        self.prev_cloud: PointCloud | None = None
        self.prev_eff_measurement: Pose | None = None
        self.gt_target: PointCloud | None = None
        self.t = 0
        self.warnings: list = []
        self.diagnostics: list = []

        self.graph.add(vis_prior(1, vision_prior, config.noise(config.sigma_vis)))
        self.graph.add(eff_prior(1, first_eff_measurement,
                                 config.noise(config.sigma_eff)))
        self.values[obj_key(1)] = vision_prior
        self.values[eff_key(1)] = first_eff_measurement

    # -- helpers -----------------------------------------------------------

    def _object_from_sensor(self, t: int) -> Pose:
        return geometry.compose(geometry.inverse(self.values[obj_key(t)]),
                                self.values[eff_key(t)])

    def _extrapolate_object(self) -> Pose:
        t = self.t
        if t <= 2:
            return self.values[obj_key(t - 1)]
        prev, prev2 = self.values[obj_key(t - 1)], self.values[obj_key(t - 2)]
        velocity = geometry.compose(geometry.inverse(prev2), prev)
        return geometry.compose(prev, velocity)

    def _warn(self, message: str):
        self.warnings.append({"step": self.t, "message": message})

    def _register(self, source, target, init):
        return registration.icp_register(source, target, init, self.config.icp)

    def _ensure_gt_target(self, cloud: PointCloud):
        if self.gt_target is not None:
            return
        obj_from_sensor = self._object_from_sensor(self.t)
        center = obj_from_sensor.transform_points(cloud.points).mean(axis=0)
        radius = self.config.gt_sample_radius_scale * self.config.gel.extent_x / 2.0
        self.gt_target = _sample_sdf_surface(
            self.shape, center, radius, spacing=self.config.gel.pitch_x,
            count=self.config.gt_sample_count, seed=self.config.seed)

    # -- pipeline ----------------------------------------------------------

    def step(self, normal_image: NormalImage, eff_measurement: Pose) -> PoseEstimate:
        """Process one frame; the first call corresponds to the frame whose
        measurement already seeded the priors at construction."""
        self.t += 1
        t = self.t
        cfg = self.config
        diag = {"step": t, "icp_im2im": None, "icp_im2patch": None,
                "skipped_registration": False, "keyframe": False}

        if t > 1:
            self.values[eff_key(t)] = eff_measurement
            self.values[obj_key(t)] = self._extrapolate_object()
            self.graph.add(eff_prior(t, eff_measurement, cfg.noise(cfg.sigma_eff)))
            if t == 2:
                # Seed the velocity chain: without this the first step's
                # velocity is a free direction (steady drift costs nothing).
                self.graph.add(MotionPriorFactor(t, cfg.noise(cfg.sigma_vel)))
            if t >= 3:
                self.graph.add(ConstVelFactor(t, cfg.noise(cfg.sigma_vel)))

        cloud = None
        if not normal_image.mask.any():
            diag["skipped_registration"] = True
            self._warn("empty contact mask; registration skipped")
        elif contact_touches_border(normal_image.mask):
            diag["skipped_registration"] = True
            self._warn("contact touches image border; registration skipped")
        else:
            _, cloud = reconstruct_cloud(normal_image, cfg.gel, step=t)

        wants_im2im = self.mode is TrackerMode.IMAGE_TO_IMAGE or (
            self.mode is TrackerMode.PATCH_GRAPH and cfg.im2im_in_patchgraph)
        if wants_im2im and cloud is not None and self.prev_cloud is not None:
            # Initialize at the measured relative sensor motion.  Directions
            # the contact geometry cannot observe (e.g. sliding on a sphere)
            # then stay at an unbiased, graph-independent estimate instead of
            # being pulled toward zero motion (steady drift) or toward the
            # graph's own prediction (self-confirming feedback).
            init = geometry.compose(geometry.inverse(self.prev_eff_measurement),
                                    eff_measurement)
            try:
                result = self._register(cloud, self.prev_cloud, init)
                diag["icp_im2im"] = result.to_dict()
                jump = geometry.ominus(init, result.transform)
                if (np.linalg.norm(jump[:3]) > cfg.gate_im2im[0]
                        or np.linalg.norm(jump[3:]) > cfg.gate_im2im[1]):
                    self._warn("im2im registration jumped far from its "
                               "initialization; factor omitted")
                else:
                    self.graph.add(Im2ImFactor(t, result.transform,
                                               cfg.noise(cfg.sigma_im2im)))
            except (registration.DegenerateGeometryError,
                    registration.InsufficientOverlapError) as err:
                self._warn(f"im2im registration dropped: {err}")

        if cloud is not None and self.mode in (TrackerMode.PATCH_GRAPH,
                                               TrackerMode.GROUNDTRUTH_PATCH):
            if self.mode is TrackerMode.GROUNDTRUTH_PATCH:
                self._ensure_gt_target(cloud)
                target = self.gt_target
            else:
                target = None if self.patch.is_empty() else self.patch.cloud
            if target is not None and len(target) > 0:
                init = self._object_from_sensor(t)
                sigma = (cfg.sigma_im2gt
                         if self.mode is TrackerMode.GROUNDTRUTH_PATCH
                         else cfg.sigma_im2pc)
                try:
                    result = self._register(cloud, target, init)
                    diag["icp_im2patch"] = result.to_dict()
                    jump = geometry.ominus(init, result.transform)
                    if (np.linalg.norm(jump[:3]) > cfg.gate_im2pc[0]
                            or np.linalg.norm(jump[3:]) > cfg.gate_im2pc[1]):
                        self._warn("im2patch registration jumped far from its "
                                   "initialization; factor omitted")
                    else:
                        self.graph.add(Im2PatchFactor(t, result.transform,
                                                      cfg.noise(sigma)))
                except (registration.DegenerateGeometryError,
                        registration.InsufficientOverlapError) as err:
                    self._warn(f"im2patch registration dropped: {err}")

        fixed = set()
        if cfg.fixed_lag is not None:
            horizon = t - cfg.fixed_lag
            fixed = {k for k in self.values if k.t < horizon}
        # Variables no factor touches yet (e.g. the object pose at t = 2 in
        # constant-velocity mode, before the first velocity triplet closes)
        # stay pinned at their extrapolated initialization.
        touched = {k for f in self.graph.factors for k in f.keys}
        fixed = frozenset(fixed | (set(self.values) - touched))
        self.values, stats = factors.optimize(self.graph, self.values,
                                              cfg.optimizer, fixed=fixed)
        diag["optimizer"] = {"iterations": stats.iterations,
                             "initial_cost": stats.initial_cost,
                             "final_cost": stats.final_cost}

        if (self.mode is TrackerMode.PATCH_GRAPH and cloud is not None
                and patchmap.should_add_keyframe(cfg.keyframes, t - 1)):
            self.patch = patchmap.fuse_keyframe(self.patch, cloud,
                                                self._object_from_sensor(t))
            diag["keyframe"] = True

        self.prev_cloud = cloud
        self.prev_eff_measurement = eff_measurement
        self.diagnostics.append(diag)
        return PoseEstimate(object_pose=self.values[obj_key(t)],
                            eff_pose=self.values[eff_key(t)],
                            diagnostics=diag)

    def finalize(self, gt_object_poses: list, gt_eff_poses: list = None) -> EpisodeResult:
        """Final-step tracking errors plus the serialized trajectory."""
        if self.t < 1:
            raise RuntimeError("finalize requires at least one processed step")
        rot_err, trans_err = pose_errors(self.values[obj_key(self.t)],
                                         gt_object_poses[self.t - 1])
        obj_traj, eff_traj = [], []
        for t in range(1, self.t + 1):
            obj_traj.append(geometry.to_quat_trans(self.values[obj_key(t)]))
            eff_traj.append(geometry.to_quat_trans(self.values[eff_key(t)]))
        return EpisodeResult(object_trajectory=obj_traj, eff_trajectory=eff_traj,
                             final_rotation_error=rot_err,
                             final_translation_error=trans_err,
                             diagnostics=self.diagnostics, patch=self.patch,
                             warnings=self.warnings)


def track_episode(episode, mode: TrackerMode, config: TrackerConfig = None) -> EpisodeResult:
    """Run the tracker over a generated episode and score it against the
    stored ground truth."""
    config = config or TrackerConfig(gel=episode.gel)
    shape = episode.shape if TrackerMode(mode) is TrackerMode.GROUNDTRUTH_PATCH else None
    tracker = Tracker(mode, config, episode.vision_prior,
                      episode.frames[0].eff_measured, shape=shape)
    for frame in episode.frames:
        tracker.step(frame.normals, frame.eff_measured)
    return tracker.finalize([f.object_pose for f in episode.frames],
                            [f.eff_pose for f in episode.frames])
