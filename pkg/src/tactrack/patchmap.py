"""Online local patch map: keyframe selection and fusion of sensor clouds
into an object-frame cloud with voxel downsampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose
from .reconstruct import PointCloud


@dataclass
class KeyframePolicy:
    """fixed-interval: keyframe every k steps; overlap-threshold: keyframe
    when the measured overlap with the map drops below the fraction."""

    variant: str = "fixed_interval"   # fixed_interval | overlap_threshold
    interval: int = 5
    overlap_fraction: float = 0.5

    def __post_init__(self):
        if self.variant not in ("fixed_interval", "overlap_threshold"):
            raise ValueError(f"unknown keyframe policy {self.variant!r}")
        if self.interval < 1:
            raise ValueError("keyframe interval must be >= 1")
        if not 0.0 < self.overlap_fraction < 1.0:
            raise ValueError("overlap fraction must lie in (0, 1)")


def should_add_keyframe(policy: KeyframePolicy, step: int,
                        overlap: float = None) -> bool:
    if step < 0:
        raise ValueError("step index must be non-negative")
    if policy.variant == "fixed_interval":
        return step % policy.interval == 0
    if overlap is None:
        raise ValueError("overlap-threshold policy needs a measured overlap")
    return overlap < policy.overlap_fraction


@dataclass
class KeyframeRecord:
    step: int
    cloud: PointCloud               # sensor frame, as reconstructed
    object_from_sensor: Pose        # estimate used at fusion time


def _voxel_downsample(points, normals, voxel: float):
    keys = np.floor(points / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                   return_counts=True)
    centroids = np.zeros((len(counts), 3))
    mean_normals = np.zeros((len(counts), 3))
    np.add.at(centroids, inverse, points)
    np.add.at(mean_normals, inverse, normals)
    centroids /= counts[:, None]
    norms = np.linalg.norm(mean_normals, axis=1, keepdims=True)
    norms[norms < 1e-9] = 1.0
    mean_normals /= norms

    # Voxel centroids near a shared boundary can end up arbitrarily close;
    # merge any pair closer than half a voxel so the spacing bound holds.
    min_sep = voxel / 2.0
    while len(centroids) > 1:
        pairs = cKDTree(centroids).query_pairs(min_sep, output_type="ndarray")
        if len(pairs) == 0:
            break
        drop = np.zeros(len(centroids), dtype=bool)
        for a, b in pairs:
            if not drop[a] and not drop[b]:
                centroids[a] = 0.5 * (centroids[a] + centroids[b])
                merged = mean_normals[a] + mean_normals[b]
                n = np.linalg.norm(merged)
                mean_normals[a] = merged / n if n > 1e-9 else mean_normals[a]
                drop[b] = True
        centroids = centroids[~drop]
        mean_normals = mean_normals[~drop]
    return centroids, mean_normals


@dataclass
class PatchMap:
    """Fused object-frame cloud plus the keyframe records that produced it."""

    voxel_size: float = 0.3
    cloud: PointCloud = None
    keyframes: list = field(default_factory=list)

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel size must be positive")
        if self.cloud is None:
            self.cloud = PointCloud(points=np.zeros((0, 3)),
                                    normals=np.zeros((0, 3)), frame="object")

    def is_empty(self) -> bool:
        return len(self.cloud) == 0


def fuse_keyframe(pmap: PatchMap, cloud: PointCloud,
                  object_from_sensor: Pose) -> PatchMap:
    """Transform a sensor-frame cloud into the object frame, append it to the
    map and voxel-downsample (centroid per voxel, normals averaged and
    renormalized).  Returns a new PatchMap; the input map is not modified."""
    if cloud.frame != "sensor":
        raise ValueError(f"expected a sensor-frame cloud, got {cloud.frame!r}")
    moved = cloud.transformed(object_from_sensor, frame="object")
    points = np.vstack([pmap.cloud.points, moved.points])
    normals = np.vstack([pmap.cloud.normals, moved.normals])
    points, normals = _voxel_downsample(points, normals, pmap.voxel_size)
    fused = PointCloud(points=points, normals=normals, frame="object")
    record = KeyframeRecord(step=cloud.step, cloud=cloud,
                            object_from_sensor=object_from_sensor)
    return PatchMap(voxel_size=pmap.voxel_size, cloud=fused,
                    keyframes=pmap.keyframes + [record])


def overlap_fraction(cloud: PointCloud, pmap: PatchMap, radius: float) -> float:
    """Fraction of cloud points with a map point within `radius` mm."""
    if len(cloud) == 0:
        raise ValueError("overlap query needs a nonempty cloud")
    if pmap.is_empty():
        return 0.0
    dists, _ = cKDTree(pmap.cloud.points).query(cloud.points,
                                                distance_upper_bound=radius)
    return float(np.isfinite(dists).mean())
