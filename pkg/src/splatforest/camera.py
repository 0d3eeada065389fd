"""Pinhole camera: world-to-camera rigid transform plus intrinsics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    rotation: np.ndarray     # (3, 3) world-to-camera
    translation: np.ndarray  # (3,) camera = R @ world + t
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size {self.width}x{self.height} must be >= 1x1")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"camera rotation not orthonormal (max deviation {err:.3g})")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) -> camera-space points."""
        return points @ self.rotation.T + self.translation


def look_at(eye, target, up=(0.0, 0.0, 1.0), *, fx: float, fy: float,
            cx: float, cy: float, width: int, height: int) -> Camera:
    """Camera at ``eye`` with +z toward ``target`` (y points down-image)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        # view direction parallel to up: pick any perpendicular axis
        up = np.array([1.0, 0.0, 0.0]) if abs(forward[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return Camera(rotation=rotation, translation=-rotation @ eye,
                  fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
