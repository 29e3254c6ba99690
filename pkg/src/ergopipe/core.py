"""Domain types, validation and the canonical keypoint layout.

Every other module refers to keypoints through :data:`KP` rather than bare
indices, so the COCO-17 ordering lives in exactly one place.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

COCO17_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

KP = IntEnum("KP", [(n.upper(), i) for i, n in enumerate(COCO17_NAMES)])
NUM_KEYPOINTS = len(COCO17_NAMES)

DEFAULT_C_MIN = 0.3
SCHEMA_VERSION = "1.0"


class ErgoError(Exception):
    """Base class for all errors raised by ergopipe."""


class WrongKeypointCount(ErgoError, ValueError):
    pass


class NonFiniteCoordinate(ErgoError, ValueError):
    pass


class ConfidenceOutOfRange(ErgoError, ValueError):
    pass


class NonOrthonormalRotation(ErgoError, ValueError):
    pass


class DegenerateIntrinsics(ErgoError, ValueError):
    pass


class ShapeMismatch(ErgoError, ValueError):
    pass


class ParseError(ErgoError, ValueError):
    pass


class MissingFile(ErgoError, FileNotFoundError):
    pass


class SchemaVersionMismatch(ErgoError, ValueError):
    pass


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    conf: float = 1.0


@dataclass(frozen=True)
class Pose2D:
    """One person's keypoints in one camera view (pixel coordinates)."""

    keypoints: tuple[Keypoint, ...]
    detection_score: float = 1.0
    camera_id: str = ""
    frame_id: str = ""
    bbox_area: Optional[float] = None

    @classmethod
    def from_array(cls, arr, **kw) -> "Pose2D":
        arr = np.asarray(arr, dtype=float)
        if arr.shape[1] == 2:
            arr = np.hstack([arr, np.ones((len(arr), 1))])
        kps = tuple(Keypoint(float(x), float(y), float(c)) for x, y, c in arr)
        return cls(kps, **kw)

    def xy(self) -> np.ndarray:
        return np.array([[k.x, k.y] for k in self.keypoints], dtype=float).reshape(-1, 2)

    def conf(self) -> np.ndarray:
        return np.array([k.conf for k in self.keypoints], dtype=float)

    def visibility(self, c_min: float = DEFAULT_C_MIN) -> np.ndarray:
        return self.conf() >= c_min

    def to_dict(self) -> dict:
        d = {
            "score": self.detection_score,
            "keypoints": [[k.x, k.y, k.conf] for k in self.keypoints],
        }
        if self.bbox_area is not None:
            d["bbox_area"] = self.bbox_area
        return d

    @classmethod
    def from_dict(cls, d: dict, camera_id: str = "", frame_id: str = "") -> "Pose2D":
        kps = tuple(Keypoint(float(x), float(y), float(c)) for x, y, c in d["keypoints"])
        area = d.get("bbox_area")
        return cls(kps, float(d.get("score", 1.0)), camera_id, frame_id,
                   None if area is None else float(area))


@dataclass(frozen=True)
class GroundTruthPose:
    """Labeled keypoints; ``visibility`` holds COCO flags 0/1/2.

    ``segment_area`` may be None when the annotation has no area; OKS then
    falls back to the prediction's bounding box.
    """

    xy: tuple[tuple[float, float], ...]
    visibility: tuple[int, ...]
    segment_area: Optional[float]
    camera_id: str = ""
    frame_id: str = ""

    def __post_init__(self):
        if len(self.xy) != len(self.visibility):
            raise WrongKeypointCount("xy and visibility lengths differ")
        labeled = any(v > 0 for v in self.visibility)
        if labeled and self.segment_area is not None and not self.segment_area > 0:
            raise ValueError("segment_area must be positive when keypoints are labeled")

    @classmethod
    def from_arrays(cls, xy, visibility, segment_area, **kw) -> "GroundTruthPose":
        xy = tuple((float(a), float(b)) for a, b in np.asarray(xy, dtype=float))
        area = None if segment_area is None else float(segment_area)
        return cls(xy, tuple(int(v) for v in visibility), area, **kw)

    def xy_array(self) -> np.ndarray:
        return np.array(self.xy, dtype=float).reshape(-1, 2)

    def to_dict(self) -> dict:
        d = {"keypoints": [[x, y, 1.0] for x, y in self.xy], "visibility": list(self.visibility)}
        if self.segment_area is not None:
            d["segment_area"] = self.segment_area
        return d

    @classmethod
    def from_dict(cls, d: dict, camera_id: str = "", frame_id: str = "") -> "GroundTruthPose":
        xy = tuple((float(k[0]), float(k[1])) for k in d["keypoints"])
        area = d.get("segment_area")
        return cls(xy, tuple(int(v) for v in d["visibility"]),
                   None if area is None else float(area), camera_id, frame_id)


@dataclass(frozen=True, eq=False)
class CameraParams:
    """Pinhole camera. ``R``/``t`` map world to camera; ``dist`` is (k1, k2, p1, p2, k3)."""

    camera_id: str
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    dist: np.ndarray = field(default_factory=lambda: np.zeros(5))
    image_size: tuple[int, int] = (1920, 1080)

    def __post_init__(self):
        for name, shape in (("K", (3, 3)), ("R", (3, 3)), ("t", (3,)), ("dist", (5,))):
            arr = np.array(getattr(self, name), dtype=float).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))

    def __eq__(self, other):
        if not isinstance(other, CameraParams):
            return NotImplemented
        return (self.camera_id == other.camera_id and self.image_size == other.image_size
                and all(np.array_equal(getattr(self, n), getattr(other, n))
                        for n in ("K", "R", "t", "dist")))

    __hash__ = None

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def P(self) -> np.ndarray:
        return self.K @ np.hstack([self.R, self.t[:, None]])

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "K": self.K.ravel().tolist(),
            "R": self.R.ravel().tolist(),
            "t": self.t.tolist(),
            "dist": self.dist.tolist(),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraParams":
        return cls(str(d["camera_id"]), d["K"], d["R"], d["t"],
                   d.get("dist", [0.0] * 5), tuple(d.get("image_size", (1920, 1080))))


def _finite_or_none(v: float):
    # JSON has no NaN/inf; invalid joints serialise as null
    return v if math.isfinite(v) else None


def _none_to_nan(v) -> float:
    return math.nan if v is None else float(v)


@dataclass(frozen=True)
class Joint3D:
    position: tuple[float, float, float]
    valid: bool
    reproj_rms: float
    n_views: int


@dataclass(frozen=True)
class Skeleton3D:
    joints: tuple[Joint3D, ...]
    person_id: str = "0"
    frame_id: str = ""

    @classmethod
    def from_points(cls, pts, valid=None, **kw) -> "Skeleton3D":
        pts = np.asarray(pts, dtype=float)
        if valid is None:
            valid = np.ones(len(pts), dtype=bool)
        joints = tuple(
            Joint3D(tuple(p), bool(v), 0.0, 2 if v else 0)
            for p, v in zip(pts.tolist(), valid)
        )
        return cls(joints, **kw)

    def positions(self) -> np.ndarray:
        return np.array([j.position for j in self.joints], dtype=float).reshape(-1, 3)

    def valid_mask(self) -> np.ndarray:
        return np.array([j.valid for j in self.joints], dtype=bool)

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "person_id": self.person_id,
            "joints": [
                {"xyz": [_finite_or_none(c) for c in j.position], "valid": j.valid,
                 "reproj_rms": _finite_or_none(j.reproj_rms), "n_views": j.n_views}
                for j in self.joints
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton3D":
        joints = tuple(
            Joint3D(tuple(_none_to_nan(c) for c in j["xyz"]), bool(j["valid"]),
                    _none_to_nan(j["reproj_rms"]), int(j["n_views"]))
            for j in d["joints"]
        )
        return cls(joints, str(d.get("person_id", "0")), str(d.get("frame_id", "")))


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """8-bit raster, stored as an (H, W, C) uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ShapeMismatch(f"expected HxW or HxWx{{1,3}}, got {arr.shape}")
        if arr.dtype != np.uint8:
            raise TypeError(f"ImageBuffer needs uint8 samples, got {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_raw(cls, width: int, height: int, channels: int, samples: bytes) -> "ImageBuffer":
        if len(samples) != width * height * channels:
            raise ShapeMismatch("data length != width * height * channels")
        arr = np.frombuffer(bytes(samples), dtype=np.uint8).reshape(height, width, channels)
        return cls(arr.copy())

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class WorldConvention:
    up_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    length_unit: str = "m"

    def __post_init__(self):
        up = tuple(float(v) for v in self.up_axis)
        if abs(math.sqrt(sum(v * v for v in up)) - 1.0) > 1e-12:
            raise ValueError(f"up_axis must be a unit vector, got {up}")
        object.__setattr__(self, "up_axis", up)

    @property
    def up(self) -> np.ndarray:
        return np.array(self.up_axis)


def validate_pose(pose: Pose2D, expected_k: int = NUM_KEYPOINTS) -> Pose2D:
    if len(pose.keypoints) != expected_k:
        raise WrongKeypointCount(f"expected {expected_k} keypoints, got {len(pose.keypoints)}")
    for i, kp in enumerate(pose.keypoints):
        if not (math.isfinite(kp.x) and math.isfinite(kp.y)):
            raise NonFiniteCoordinate(f"keypoint {i} has non-finite coordinates")
        if not 0.0 <= kp.conf <= 1.0:
            raise ConfidenceOutOfRange(f"keypoint {i} confidence {kp.conf} outside [0, 1]")
    return pose


def validate_camera(cam: CameraParams) -> CameraParams:
    R = cam.R
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) <= 0:
        raise NonOrthonormalRotation(f"camera {cam.camera_id}: R is not a proper rotation")
    K = cam.K
    if np.abs(np.tril(K, -1)).max() > 0 or K[0, 0] <= 0 or K[1, 1] <= 0 or K[2, 2] == 0:
        raise DegenerateIntrinsics(f"camera {cam.camera_id}: bad intrinsic matrix")
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(cam.t)) and np.all(np.isfinite(cam.dist))):
        raise DegenerateIntrinsics(f"camera {cam.camera_id}: non-finite parameters")
    return cam
