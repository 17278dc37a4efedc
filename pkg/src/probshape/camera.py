"""Pinhole camera model and similarity transforms."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass
class Sim3Transform:
    """Similarity: scene_point = scale * rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.scale <= 0:
            raise UsageError("scale must be positive")
        if np.abs(self.rotation @ self.rotation.T - np.eye(3)).max() > 1e-6:
            raise UsageError("rotation must be orthonormal")

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation

    def inverse_apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation / self.scale

    def compose(self, other: "Sim3Transform"):
        """self after other: x -> self(other(x))."""
        return Sim3Transform(
            rotation=self.rotation @ other.rotation,
            translation=self.scale * self.rotation @ other.translation
            + self.translation,
            scale=self.scale * other.scale,
        )

    def to_dict(self):
        return {
            "rotation": self.rotation.reshape(-1).tolist(),
            "translation": self.translation.tolist(),
            "scale": float(self.scale),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            rotation=np.asarray(d["rotation"]).reshape(3, 3),
            translation=np.asarray(d["translation"]),
            scale=float(d["scale"]),
        )

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), 1.0)


@dataclass
class Camera:
    """Pinhole camera with world-to-camera extrinsics and a d x d image."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # world-to-camera
    translation: np.ndarray
    resolution: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise UsageError("focal lengths must be positive")
        if (
            np.abs(self.rotation @ self.rotation.T - np.eye(3)).max() > 1e-6
            or np.linalg.det(self.rotation) < 0
        ):
            raise UsageError("rotation must be orthonormal with det +1")

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def to_world(self, points):
        return (np.asarray(points) - self.translation) @ self.rotation

    def pixel_rays(self):
        """World-frame origins and unit directions for all pixel centers.

        Returns (origin (3,), dirs (d, d, 3)); row index is the pixel row v,
        column index the pixel column u.
        """
        d = self.resolution
        u = np.arange(d) + 0.5
        v = np.arange(d) + 0.5
        uu, vv = np.meshgrid(u, v)
        x = (uu - self.cx) / self.fx
        y = (vv - self.cy) / self.fy
        dirs_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
        dirs_cam /= np.linalg.norm(dirs_cam, axis=-1, keepdims=True)
        dirs_world = dirs_cam @ self.rotation
        return self.center, dirs_world

    def project(self, points_world):
        """Pixel coordinates (u, v) and camera-frame z for world points."""
        pc = self.to_camera(points_world)
        u = self.fx * pc[:, 0] / pc[:, 2] + self.cx
        v = self.fy * pc[:, 1] / pc[:, 2] + self.cy
        return np.stack([u, v], axis=1), pc[:, 2]

    def to_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "rotation": self.rotation.reshape(-1).tolist(),
            "translation": self.translation.tolist(),
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            fx=d["fx"],
            fy=d["fy"],
            cx=d["cx"],
            cy=d["cy"],
            rotation=np.asarray(d["rotation"]).reshape(3, 3),
            translation=np.asarray(d["translation"]),
            resolution=int(d["resolution"]),
        )


def look_at_camera(eye, target, up, fov_deg, resolution):
    """Camera at ``eye`` looking toward ``target`` (z forward, y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        raise UsageError("up vector parallel to view direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])  # world-to-camera rows
    trans = -rot @ eye
    f = 0.5 * resolution / np.tan(np.deg2rad(fov_deg) / 2.0)
    c = resolution / 2.0
    return Camera(f, f, c, c, rot, trans, resolution)


def rotation_about_axis(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [
            [0, -axis[2], axis[1]],
            [axis[2], 0, -axis[0]],
            [-axis[1], axis[0], 0],
        ]
    )
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def save_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def load_json(path):
    with open(path) as f:
        return json.load(f)
