"""Signed-distance primitives used by the tactile renderer.

Each shape evaluates a signed distance (negative inside, positive outside)
for points given in the object frame.  Every primitive carries an offset
pose (object-from-shape) so compound objects can be assembled from unions.
The distances are exact for sphere and box; the pyramid uses a half-space
intersection which is a conservative lower bound, which is all sphere
tracing requires.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import Pose


@dataclass
class ShapeSDF:
    """Base class: signed distance in the object frame."""

    offset: Pose = field(default_factory=Pose.identity)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        local = geometry.inverse(self.offset).transform_points(points)
        return self._sdf_local(local)

    def _sdf_local(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, points: np.ndarray, eps: float = 1e-5) -> np.ndarray:
        """Finite-difference SDF gradient (unit surface normal away from edges)."""
        grad = np.empty_like(points, dtype=float)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = eps
            grad[:, axis] = (self.sdf(points + step) - self.sdf(points - step)) / (2 * eps)
        return grad

    def project_to_surface(self, points: np.ndarray, iters: int = 12) -> np.ndarray:
        """Move points onto the zero level set by sphere-trace style projection."""
        pts = np.asarray(points, dtype=float).copy()
        for _ in range(iters):
            d = self.sdf(pts)
            g = self.gradient(pts)
            norm = np.linalg.norm(g, axis=1, keepdims=True)
            norm[norm < 1e-12] = 1.0
            pts -= (d[:, None]) * g / norm
        return pts

    def descriptor(self) -> dict:
        raise NotImplementedError


@dataclass
class Sphere(ShapeSDF):
    radius: float = 6.35

    def _sdf_local(self, points):
        return np.linalg.norm(points, axis=1) - self.radius

    def descriptor(self):
        return {"type": "sphere", "radius": self.radius,
                "offset": geometry.to_quat_trans(self.offset)}


@dataclass
class Box(ShapeSDF):
    half_extents: tuple = (10.0, 10.0, 10.0)

    def _sdf_local(self, points):
        h = np.asarray(self.half_extents, dtype=float)
        q = np.abs(points) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    def descriptor(self):
        return {"type": "box", "half_extents": list(self.half_extents),
                "offset": geometry.to_quat_trans(self.offset)}


@dataclass
class Pyramid(ShapeSDF):
    """Square pyramid, apex pointing down -z at (0, 0, -height/2)."""

    base_half_length: float = 22.225
    height: float = 12.7

    def _sdf_local(self, points):
        a, h = self.base_half_length, self.height
        apex = np.array([0.0, 0.0, -h / 2.0])
        rel = points - apex
        scale = 1.0 / np.hypot(h, a)
        # Four side faces through the apex, plus the base plane on top.
        d = np.maximum.reduce([
            (h * rel[:, 0] - a * rel[:, 2]) * scale,
            (-h * rel[:, 0] - a * rel[:, 2]) * scale,
            (h * rel[:, 1] - a * rel[:, 2]) * scale,
            (-h * rel[:, 1] - a * rel[:, 2]) * scale,
            points[:, 2] - h / 2.0,
        ])
        return d

    def descriptor(self):
        return {"type": "pyramid", "base_half_length": self.base_half_length,
                "height": self.height, "offset": geometry.to_quat_trans(self.offset)}


@dataclass
class Union(ShapeSDF):
    parts: list = field(default_factory=list)

    def _sdf_local(self, points):
        return np.minimum.reduce([p.sdf(points) for p in self.parts])

    def descriptor(self):
        return {"type": "union", "offset": geometry.to_quat_trans(self.offset),
                "parts": [p.descriptor() for p in self.parts]}


def shape_from_descriptor(desc: dict) -> ShapeSDF:
    offset = geometry.from_quat_trans(desc.get("offset", [1, 0, 0, 0, 0, 0, 0]))
    kind = desc["type"]
    if kind == "sphere":
        return Sphere(offset=offset, radius=float(desc["radius"]))
    if kind == "box":
        return Box(offset=offset, half_extents=tuple(float(v) for v in desc["half_extents"]))
    if kind == "pyramid":
        return Pyramid(offset=offset, base_half_length=float(desc["base_half_length"]),
                       height=float(desc["height"]))
    if kind == "union":
        return Union(offset=offset, parts=[shape_from_descriptor(d) for d in desc["parts"]])
    raise ValueError(f"unknown shape type {kind!r}")
