"""Surface reconstruction: normal image -> depth gradients -> Poisson-integrated
depth -> unprojected 3-D point cloud with per-point normals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .render import DepthImage, GelConfig, NormalImage

N_Z_CLAMP = 0.05  # bounds gradients at slope 20 for grazing normals


@dataclass
class GradientField:
    """Per-pixel depth gradients p = dz/dx, q = dz/dy (mm per mm)."""

    p: np.ndarray
    q: np.ndarray
    mask: np.ndarray


@dataclass
class PointCloud:
    """3-D points (mm) with unit normals, expressed in a declared frame."""

    points: np.ndarray
    normals: np.ndarray
    frame: str = "sensor"
    step: int = -1

    def __len__(self):
        return len(self.points)

    def transformed(self, pose, frame: str) -> "PointCloud":
        return PointCloud(points=pose.transform_points(self.points),
                          normals=self.normals @ pose.rotation.T,
                          frame=frame, step=self.step)


def normals_to_gradients(normals: NormalImage) -> GradientField:
    """Invert the normal/gradient relation: p = n_x / n_z, q = n_y / n_z,
    with n_z clamped below at 0.05 before the division.

    The gradient support is the contact mask plus any tilted pixels in the
    one-pixel ring around it; keeping that ring preserves the rim of the
    contact, which the integrator needs to recover the depth step there.
    The returned field's mask covers exactly that support, so gradients
    are zero outside it.
    """
    n = normals.values
    nz = np.maximum(n[..., 2], N_Z_CLAMP)
    p = n[..., 0] / nz
    q = n[..., 1] / nz
    support = normals.mask | (p != 0.0) | (q != 0.0)
    p = np.where(support, p, 0.0)
    q = np.where(support, q, 0.0)
    return GradientField(p=p, q=q, mask=support)


def dst2(field: np.ndarray) -> np.ndarray:
    """Separable type-I discrete sine transform along both axes."""
    field = np.asarray(field, dtype=float)
    if field.shape[0] < 2 or field.shape[1] < 2:
        raise ValueError("dst2 requires at least a 2x2 field")
    return sfft.dst(sfft.dst(field, type=1, axis=0), type=1, axis=1)


def idst2(coeffs: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`dst2` (normalization 2/(n+1) per axis)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] < 2 or coeffs.shape[1] < 2:
        raise ValueError("idst2 requires at least a 2x2 field")
    return sfft.idst(sfft.idst(coeffs, type=1, axis=0), type=1, axis=1)


def poisson_solve(grad: GradientField, pixel_pitch: float,
                  boundary_value: float = 0.0) -> DepthImage:
    """Integrate a gradient field into depth with a DST Poisson solver.

    Solves the discrete Poisson equation Lap(z) = dp/dx + dq/dy (central
    difference divergence) with Dirichlet boundary on the image border, by
    diagonalizing the 5-point Laplacian with the type-I DST.  The result is
    shifted so the unmasked region means `boundary_value`.
    """
    p, q = np.asarray(grad.p, float), np.asarray(grad.q, float)
    if not (np.isfinite(p).all() and np.isfinite(q).all()):
        raise ValueError("gradient field must be finite")
    if p.shape != q.shape:
        raise ValueError("p and q must share dimensions")
    h = float(pixel_pitch)
    rows, cols = p.shape
    if rows < 3 or cols < 3:
        raise ValueError("image too small for the Poisson solve")

    div = np.gradient(p, h, axis=1) + np.gradient(q, h, axis=0)
    rhs = div[1:-1, 1:-1]

    m, n = rhs.shape
    u = np.arange(1, m + 1)
    v = np.arange(1, n + 1)
    eig = ((2.0 * np.cos(np.pi * u / (m + 1)) - 2.0)[:, None]
           + (2.0 * np.cos(np.pi * v / (n + 1)) - 2.0)[None, :]) / h**2
    z_int = idst2(dst2(rhs) / eig)
    z = np.zeros_like(p)
    z[1:-1, 1:-1] = z_int

    if grad.mask.any() and (~grad.mask).any():
        z += boundary_value - z[~grad.mask].mean()
    else:
        z += boundary_value
    return DepthImage(values=z, mask=grad.mask.copy())


def _clip_projection_matrix(gel: GelConfig) -> np.ndarray:
    # Symmetric frustum sized so the gel extent fills the image at the gel
    # plane, which sits `far` millimetres from the camera.
    n, f = gel.near, gel.far
    r = (gel.extent_x / 2.0) * n / f
    t = (gel.extent_y / 2.0) * n / f
    return np.array([
        [n / r, 0, 0, 0],
        [0, n / t, 0, 0],
        [0, 0, -(f + n) / (f - n), -2 * f * n / (f - n)],
        [0, 0, -1, 0],
    ])


def depth_to_pointcloud(depth: DepthImage, normals: NormalImage,
                        gel: GelConfig, step: int = -1) -> PointCloud:
    """Unproject masked pixels into a sensor-frame cloud with normals.

    The sensor frame has its origin at the gel centre; depth d maps to
    z = -d.  The orthographic model scales pixels by the physical pitch;
    the clip model runs the standard inverse projection with a homogeneous
    divide, followed by the inverse view matrix.
    """
    if depth.values.shape != normals.values.shape[:2]:
        raise ValueError("depth and normal images must share dimensions")
    if depth.mask.shape != depth.values.shape:
        raise ValueError("mask and depth must share dimensions")
    mask = depth.mask
    xs, ys = gel.pixel_centers()
    d = depth.values[mask]
    if gel.camera == "orthographic":
        pts = np.column_stack([xs[mask], ys[mask], -d])
    else:
        proj = _clip_projection_matrix(gel)
        inv_proj = np.linalg.inv(proj)
        ndc_x = xs[mask] / (gel.extent_x / 2.0)
        ndc_y = ys[mask] / (gel.extent_y / 2.0)
        # Camera at (0, 0, far) looking down -z; surface at camera depth far + d.
        z_eye = -(gel.far + d)
        ndc_z = (-(gel.far + gel.near) * z_eye - 2 * gel.far * gel.near) / ((gel.far - gel.near) * -z_eye)
        w_clip = -z_eye
        clip = np.column_stack([ndc_x * w_clip, ndc_y * w_clip, ndc_z * w_clip, w_clip])
        eye = clip @ inv_proj.T
        eye = eye[:, :3] / eye[:, 3:4]
        # Inverse view: camera frame -> sensor frame is a +far shift along z.
        pts = eye + np.array([0.0, 0.0, gel.far])
    return PointCloud(points=pts, normals=normals.values[mask].copy(),
                      frame="sensor", step=step)


def reconstruct_cloud(normals: NormalImage, gel: GelConfig, step: int = -1):
    """Full per-frame pipeline: normals -> gradients -> depth -> cloud.

    Returns (DepthImage, PointCloud); the cloud is empty when the mask is.
    """
    grad = normals_to_gradients(normals)
    depth = poisson_solve(grad, gel.pitch_x, boundary_value=0.0)
    # Unproject only true contact pixels; the integration support is wider
    # by the one-pixel rim ring, which carries no surface points.
    contact = DepthImage(values=depth.values, mask=normals.mask.copy())
    cloud = depth_to_pointcloud(contact, normals, gel, step=step)
    return contact, cloud
