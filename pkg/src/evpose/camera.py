"""Pinhole camera model, projection, and the normalized prediction cube.

World joints (millimeters) map through the 3x4 extrinsic into the camera
frame, then through the 3x3 intrinsic onto the image plane. For network
targets, camera-frame joints are normalized into a [-1, 1]^3 cube that is
anchored at a reference depth (the head joint in practice):

  1. project every joint through the camera center onto the plane
     parallel to the image plane at depth z_ref;
  2. scale plane coordinates by the view half-extents at that depth,
     a_x = cx * z_ref / fx and a_y = cy * z_ref / fy (the principal
     point is assumed centered on the sensor);
  3. express depth as (z - z_ref) / a_x, sharing the horizontal extent
     so x and z are metrically comparable.

The mapping is affine per axis, exactly invertible given the camera and
z_ref, and sends the reference joint's depth coordinate to exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DataError, InvalidDepth


@dataclass(frozen=True)
class CameraModel:
    intrinsic: np.ndarray = field(repr=False)   # 3x3
    extrinsic: np.ndarray = field(repr=False)   # 3x4, world -> camera, mm

    def __post_init__(self):
        k = np.ascontiguousarray(self.intrinsic, dtype=np.float64)
        e = np.ascontiguousarray(self.extrinsic, dtype=np.float64)
        if k.shape != (3, 3):
            raise DataError(f"intrinsic must be 3x3, got {k.shape}")
        if e.shape != (3, 4):
            raise DataError(f"extrinsic must be 3x4, got {e.shape}")
        if k[1, 0] != 0 or k[2, 0] != 0 or k[2, 1] != 0 or k[2, 2] != 1:
            raise DataError("intrinsic must be upper-triangular with K[2,2] = 1")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise DataError("focal entries must be positive")
        k.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "intrinsic", k)
        object.__setattr__(self, "extrinsic", e)

    @property
    def fx(self) -> float:
        return float(self.intrinsic[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsic[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsic[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsic[1, 2])


def to_camera_frame(cam: CameraModel, pts_world: np.ndarray) -> np.ndarray:
    """Apply the extrinsic transform to (N, 3) world points."""
    pts = np.asarray(pts_world, dtype=np.float64)
    return pts @ cam.extrinsic[:, :3].T + cam.extrinsic[:, 3]


def project_camera_points(cam: CameraModel, pts_cam: np.ndarray) -> np.ndarray:
    """Pinhole projection of camera-frame points to (N, 2) pixels."""
    pts = np.asarray(pts_cam, dtype=np.float64)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise BehindCamera(f"{int(np.sum(z <= 0))} point(s) at non-positive depth")
    uvw = pts @ cam.intrinsic.T
    return uvw[:, :2] / uvw[:, 2:3]


def project_points(cam: CameraModel, pts_world: np.ndarray) -> np.ndarray:
    return project_camera_points(cam, to_camera_frame(cam, pts_world))


def view_half_extents(cam: CameraModel, z_ref: float) -> tuple[float, float]:
    """Half width/height of the viewed plane at depth z_ref (mm)."""
    if z_ref <= 0:
        raise InvalidDepth(f"reference depth must be positive, got {z_ref}")
    return cam.cx * z_ref / cam.fx, cam.cy * z_ref / cam.fy


def normalize_camera_points(cam: CameraModel, pts_cam: np.ndarray,
                            z_ref: float) -> np.ndarray:
    """Map camera-frame points (mm) into the [-1, 1]^3 cube at z_ref."""
    pts = np.asarray(pts_cam, dtype=np.float64)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise BehindCamera(f"{int(np.sum(z <= 0))} point(s) at non-positive depth")
    ax, ay = view_half_extents(cam, z_ref)
    out = np.empty_like(pts)
    out[:, 0] = pts[:, 0] * z_ref / z / ax
    out[:, 1] = pts[:, 1] * z_ref / z / ay
    out[:, 2] = (z - z_ref) / ax
    return out


def denormalize_camera_points(cam: CameraModel, pts_norm: np.ndarray,
                              z_ref: float) -> np.ndarray:
    """Exact inverse of normalize_camera_points."""
    pts = np.asarray(pts_norm, dtype=np.float64)
    ax, ay = view_half_extents(cam, z_ref)
    z = z_ref + pts[:, 2] * ax
    if np.any(z <= 0):
        raise BehindCamera("denormalized point lands at non-positive depth")
    out = np.empty_like(pts)
    out[:, 0] = pts[:, 0] * ax * z / z_ref
    out[:, 1] = pts[:, 1] * ay * z / z_ref
    out[:, 2] = z
    return out


# -- text file format: 9 intrinsic floats then 12 extrinsic floats, row-major --


def save_camera(path, cam: CameraModel) -> None:
    with open(path, "w") as f:
        for row in cam.intrinsic:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")
        for row in cam.extrinsic:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_camera(path) -> CameraModel:
    vals = []
    with open(path) as f:
        for line in f:
            vals.extend(float(v) for v in line.split())
    if len(vals) != 21:
        raise DataError(f"camera file must hold 9 + 12 floats, got {len(vals)}")
    a = np.asarray(vals, dtype=np.float64)
    return CameraModel(intrinsic=a[:9].reshape(3, 3), extrinsic=a[9:].reshape(3, 4))
