"""Point-to-plane ICP producing the measured relative transforms consumed by
the factor graph, with fitness and degeneracy diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import geometry
from .geometry import Pose
from .reconstruct import PointCloud

CONDITION_LIMIT = 1e8


class DegenerateGeometryError(RuntimeError):
    """Normal matrix is rank deficient (flat or featureless geometry)."""

    def __init__(self, condition_number: float):
        super().__init__(f"degenerate registration geometry "
                         f"(condition number {condition_number:.3e})")
        self.condition_number = condition_number


class InsufficientOverlapError(RuntimeError):
    def __init__(self, count: int, required: int):
        super().__init__(f"only {count} correspondences, need {required}")
        self.count = count
        self.required = required


@dataclass
class ICPParams:
    max_iterations: int = 30
    # Large enough that a vision-prior-sized initialization error (a few mm)
    # still yields correspondences on the first registration of an episode.
    max_correspondence_distance: float = 6.0   # mm
    convergence_threshold: float = 1e-5        # update twist norm
    min_correspondences: int = 20

    def __post_init__(self):
        if (self.max_iterations <= 0 or self.max_correspondence_distance <= 0
                or self.convergence_threshold <= 0 or self.min_correspondences <= 0):
            raise ValueError("ICP parameters must be strictly positive")


@dataclass
class ICPResult:
    """Transform maps source-frame points into the target frame."""

    transform: Pose
    converged: bool
    iterations: int
    inlier_rmse: float
    correspondence_count: int
    condition_number: float

    def to_dict(self):
        return {"transform": geometry.to_quat_trans(self.transform),
                "converged": self.converged, "iterations": self.iterations,
                "inlier_rmse": self.inlier_rmse,
                "correspondence_count": self.correspondence_count,
                "condition_number": self.condition_number}


def nearest_neighbors(source: PointCloud, target: PointCloud, max_dist: float):
    """(source index, target index) pairs for each source point whose
    Euclidean-nearest target point lies within max_dist."""
    if len(source) == 0 or len(target) == 0:
        raise ValueError("both clouds must be nonempty")
    tree = cKDTree(target.points)
    dists, idx = tree.query(source.points, distance_upper_bound=max_dist)
    keep = np.isfinite(dists)
    return np.column_stack([np.nonzero(keep)[0], idx[keep]])


def _normal_system(src_pts, tgt_pts, tgt_normals):
    # Rows of the linearized point-to-plane system for twist [w, v]:
    # residual n . (p + w x p + v - q).
    a = np.hstack([np.cross(src_pts, tgt_normals), tgt_normals])
    b = np.einsum("ij,ij->i", tgt_normals, tgt_pts - src_pts)
    ata = a.T @ a
    atb = a.T @ b
    return ata, atb


def point_to_plane_step(source: PointCloud, target: PointCloud,
                        correspondences: np.ndarray) -> np.ndarray:
    """One linearized point-to-plane solve; returns the update twist.

    Raises DegenerateGeometryError when the 6x6 normal matrix has condition
    number above 1e8 (e.g. a flat patch sliding in-plane).
    """
    if len(correspondences) < 6:
        raise InsufficientOverlapError(len(correspondences), 6)
    src = source.points[correspondences[:, 0]]
    tgt = target.points[correspondences[:, 1]]
    nrm = target.normals[correspondences[:, 1]]
    ata, atb = _normal_system(src, tgt, nrm)
    cond = np.linalg.cond(ata)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise DegenerateGeometryError(cond)
    return np.linalg.solve(ata, atb)


def _point_rmse(src, tgt):
    return float(np.sqrt(np.mean(np.sum((src - tgt) ** 2, axis=1))))


def icp_register(source: PointCloud, target: PointCloud, init: Pose,
                 params: ICPParams = None) -> ICPResult:
    """Iterative point-to-plane registration from an initial guess.

    Correspondences are re-estimated each iteration with a k-d tree; the
    point-to-point inlier RMSE is reported as the fitness metric.
    """
    params = params or ICPParams()
    if len(source) == 0 or len(target) == 0:
        raise InsufficientOverlapError(min(len(source), len(target)),
                                       params.min_correspondences)
    tree = cKDTree(target.points)
    transform = init
    converged = False
    iterations = 0
    rmse = np.inf
    cond = 1.0
    count = 0
    for iterations in range(1, params.max_iterations + 1):
        moved = transform.transform_points(source.points)
        dists, idx = tree.query(moved, distance_upper_bound=params.max_correspondence_distance)
        keep = np.isfinite(dists)
        count = int(keep.sum())
        if count < params.min_correspondences:
            raise InsufficientOverlapError(count, params.min_correspondences)
        src = moved[keep]
        tgt = target.points[idx[keep]]
        nrm = target.normals[idx[keep]]
        rmse = _point_rmse(src, tgt)
        ata, atb = _normal_system(src, tgt, nrm)
        cond = float(np.linalg.cond(ata))
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise DegenerateGeometryError(cond)
        delta = np.linalg.solve(ata, atb)
        transform = geometry.compose(geometry.exp(delta), transform)
        if np.linalg.norm(delta) < params.convergence_threshold:
            converged = True
            break
    moved = transform.transform_points(source.points)
    dists, idx = tree.query(moved, distance_upper_bound=params.max_correspondence_distance)
    keep = np.isfinite(dists)
    if keep.any():
        rmse = _point_rmse(moved[keep], target.points[idx[keep]])
        count = int(keep.sum())
    return ICPResult(transform=transform, converged=converged,
                     iterations=iterations, inlier_rmse=rmse,
                     correspondence_count=count, condition_number=cond)
