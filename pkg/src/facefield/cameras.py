"""Pinhole cameras, ray generation and point projection.

Conventions: right-handed camera frame with +x right, +y up, looking down -z.
Pixel (row, col) maps to image-plane coordinates (x=col, y=row), so the ray
through pixel (cy, cx) of an identity-pose camera is the optical axis
(0, 0, -1).  Poses are 3x4 camera-to-world matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

WORLD_UP = np.array([0.0, 1.0, 0.0])


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    pose: np.ndarray  # 3x4 camera-to-world, rotation part orthonormal
    width: int
    height: int
    near: float = 0.5
    far: float = 2.5

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.pose.shape != (3, 4):
            raise InvalidInputError(f"pose must be 3x4, got {self.pose.shape}")
        if not (0 < self.near < self.far):
            raise InvalidInputError(f"need 0 < near < far, got near={self.near} far={self.far}")
        rot = self.pose[:, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise InvalidInputError("rotation part of pose is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:, :3]

    @property
    def center(self) -> np.ndarray:
        return self.pose[:, 3]

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "pose": [[float(v) for v in row] for row in self.pose],
            "width": self.width,
            "height": self.height,
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
            pose=np.array(d["pose"], dtype=np.float64),
            width=d["width"], height=d["height"], near=d["near"], far=d["far"],
        )


def look_at(position: np.ndarray, target=(0.0, 0.0, 0.0), up=WORLD_UP) -> np.ndarray:
    """Camera-to-world 3x4 pose at ``position`` looking toward ``target``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise InvalidInputError("camera position coincides with target")
    forward /= norm
    z_axis = -forward
    x_axis = np.cross(forward, up)
    if np.linalg.norm(x_axis) < 1e-9:
        x_axis = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    pose = np.empty((3, 4))
    pose[:, 0] = x_axis
    pose[:, 1] = y_axis
    pose[:, 2] = z_axis
    pose[:, 3] = position
    return pose


def orbit_position(yaw_deg: float, pitch_deg: float, radius: float) -> np.ndarray:
    """Point on the radius sphere; yaw rotates about +y, pitch lifts toward +y.

    (0, 0) sits on the +z axis, facing the canonical head front-on.
    """
    yaw = math.radians(yaw_deg)
    pitch = math.radians(pitch_deg)
    return radius * np.array(
        [math.sin(yaw) * math.cos(pitch), math.sin(pitch), math.cos(yaw) * math.cos(pitch)]
    )


def orbit_camera(
    yaw_deg: float,
    pitch_deg: float,
    radius: float = 1.5,
    width: int = 256,
    height: int = 256,
    fov_deg: float = 45.0,
    near: float = 0.5,
    far: float = 2.5,
) -> Camera:
    """Look-at-origin camera on the orbit sphere with a vertical field of view."""
    focal = 0.5 * height / math.tan(math.radians(fov_deg) / 2)
    pose = look_at(orbit_position(yaw_deg, pitch_deg, radius))
    return Camera(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
                  pose=pose, width=width, height=height, near=near, far=far)


def generate_rays(cam: Camera, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World-space rays through the given (row, col) pixel centers.

    Returns (origins (N, 3), directions (N, 3)); directions are unit length and
    origins all equal the camera center.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    rows, cols = pixels[:, 0], pixels[:, 1]
    if (rows < 0).any() or (rows > cam.height - 1).any() or (cols < 0).any() or (cols > cam.width - 1).any():
        raise InvalidInputError("pixel outside image bounds")
    dirs_cam = np.stack(
        [(cols - cam.cx) / cam.fx, -(rows - cam.cy) / cam.fy, -np.ones_like(cols)], axis=-1
    )
    dirs = dirs_cam @ cam.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(cam.center, dirs.shape).copy()
    return origins, dirs


def frame_pixels(cam: Camera) -> np.ndarray:
    """All (row, col) pixel coordinates of the frame in row-major order."""
    rows, cols = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    return np.stack([rows.reshape(-1), cols.reshape(-1)], axis=-1)


def project_points(cam: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project world points to (row, col) pixel coordinates.

    Returns (pixels (N, 2), visible (N,)); a point is flagged not visible when
    it lies at or behind the camera plane, in which case its pixel entry is NaN.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cam_pts = (points - cam.center) @ cam.rotation
    depth = -cam_pts[:, 2]
    visible = depth > 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        cols = cam.fx * cam_pts[:, 0] / depth + cam.cx
        rows = cam.cy - cam.fy * cam_pts[:, 1] / depth
    pix = np.stack([rows, cols], axis=-1)
    pix[~visible] = np.nan
    return pix, visible
