"""Synthetic camera rigs and posed 3D COCO-17 skeletons for end-to-end checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import KP, NUM_KEYPOINTS, CameraParams, Pose2D, Skeleton3D
from .geometry import project_many


def look_at(camera_id: str, eye, target, f: float = 1200.0, size=(1600, 1200),
            up=(0.0, 0.0, 1.0)) -> CameraParams:
    """Camera at ``eye`` looking at ``target`` with image y pointing towards -up."""
    eye, target, up = (np.asarray(v, dtype=float) for v in (eye, target, up))
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    t = -R @ eye
    w, h = size
    K = np.array([[f, 0, w / 2], [0, f, h / 2], [0, 0, 1.0]])
    return CameraParams(camera_id, K, R, t, np.zeros(5), size)


def arc_rig(n: int = 4, radius: float = 3.0, baseline: float = 2.0, height: float = 1.6,
            target=(0.0, 0.0, 1.0), f: float = 1200.0) -> list[CameraParams]:
    """``n`` cameras on a circular arc around ``target``, adjacent centers ``baseline`` apart."""
    step = 2 * np.arcsin(min(1.0, baseline / (2 * radius)))
    angles = (np.arange(n) - (n - 1) / 2) * step - np.pi / 2
    cams = []
    for i, a in enumerate(angles):
        eye = (target[0] + radius * np.cos(a), target[1] + radius * np.sin(a), height)
        cams.append(look_at(f"cam{i}", eye, target, f))
    return cams


def ring_rig(n: int = 4, radius: float = 3.0, height: float = 1.6, target=(0.0, 0.0, 1.0),
             f: float = 1200.0) -> list[CameraParams]:
    """``n`` cameras evenly spaced around ``target`` (the four-corner work-cell layout)."""
    cams = []
    for i in range(n):
        a = 2 * np.pi * i / n + np.pi / 4
        eye = (target[0] + radius * np.cos(a), target[1] + radius * np.sin(a), height)
        cams.append(look_at(f"cam{i}", eye, target, f))
    return cams


@dataclass(frozen=True)
class PostureParams:
    """Generating angles in degrees (the ground truth a REBA pipeline should recover)."""

    trunk_flexion: float = 0.0
    side_bend: float = 0.0
    neck_flexion: float = 0.0
    upper_arm_left: float = 0.0
    upper_arm_right: float = 0.0
    elbow_left: float = 0.0
    elbow_right: float = 0.0
    knee_left: float = 0.0
    knee_right: float = 0.0
    heading: float = 0.0


def _tilt(a: np.ndarray, towards: np.ndarray, deg: float) -> np.ndarray:
    b = towards - np.dot(towards, a) * a
    b /= np.linalg.norm(b)
    r = np.radians(deg)
    return np.cos(r) * a + np.sin(r) * b


def posed_skeleton(p: PostureParams, origin=(0.0, 0.0), scale: float = 1.0) -> np.ndarray:
    """COCO-17 joint positions (meters) for the given posture, standing on z = 0."""
    up = np.array([0.0, 0.0, 1.0])
    h = np.radians(p.heading)
    fwd = np.array([np.cos(h), np.sin(h), 0.0])
    left = np.cross(up, fwd)
    s = scale
    J = np.zeros((NUM_KEYPOINTS, 3))

    mid_hip = np.array([origin[0], origin[1], 0.95 * s])
    J[KP.LEFT_HIP] = mid_hip + 0.10 * s * left
    J[KP.RIGHT_HIP] = mid_hip - 0.10 * s * left

    trunk = _tilt(up, fwd, p.trunk_flexion)
    trunk = _tilt(trunk, left, p.side_bend)
    lat = left - np.dot(left, trunk) * trunk
    lat /= np.linalg.norm(lat)
    front = np.cross(lat, trunk)
    mid_sh = mid_hip + 0.52 * s * trunk
    J[KP.LEFT_SHOULDER] = mid_sh + 0.19 * s * lat
    J[KP.RIGHT_SHOULDER] = mid_sh - 0.19 * s * lat

    neck = _tilt(trunk, front, p.neck_flexion)
    head = mid_sh + 0.22 * s * neck
    head_front = np.cross(lat, neck)
    J[KP.LEFT_EAR] = head + 0.075 * s * lat
    J[KP.RIGHT_EAR] = head - 0.075 * s * lat
    J[KP.NOSE] = head + 0.10 * s * head_front + 0.01 * s * neck
    J[KP.LEFT_EYE] = head + 0.08 * s * head_front + 0.035 * s * lat + 0.03 * s * neck
    J[KP.RIGHT_EYE] = head + 0.08 * s * head_front - 0.035 * s * lat + 0.03 * s * neck

    for side, sign, ua, el in (("LEFT", 1, p.upper_arm_left, p.elbow_left),
                               ("RIGHT", -1, p.upper_arm_right, p.elbow_right)):
        sh = J[KP[f"{side}_SHOULDER"]]
        d1 = _tilt(-trunk, front, ua)
        elbow = sh + 0.30 * s * d1
        d2 = _tilt(d1, front if ua < 170 else trunk, el)
        J[KP[f"{side}_ELBOW"]] = elbow
        J[KP[f"{side}_WRIST"]] = elbow + 0.27 * s * d2

    for side, knee in (("LEFT", p.knee_left), ("RIGHT", p.knee_right)):
        hip = J[KP[f"{side}_HIP"]]
        thigh = _tilt(-up, fwd, 0.5 * knee)
        shin = _tilt(thigh, -fwd, knee)
        kn = hip + 0.45 * s * thigh
        J[KP[f"{side}_KNEE"]] = kn
        J[KP[f"{side}_ANKLE"]] = kn + 0.43 * s * shin
    # keep the lowest ankle on the floor
    J[:, 2] -= min(J[KP.LEFT_ANKLE, 2], J[KP.RIGHT_ANKLE, 2]) - 0.08 * s
    return J


def random_posture(rng: np.random.Generator) -> PostureParams:
    return PostureParams(
        trunk_flexion=rng.uniform(0, 80),
        side_bend=rng.uniform(0, 20),
        neck_flexion=rng.uniform(0, 40),
        upper_arm_left=rng.uniform(0, 120),
        upper_arm_right=rng.uniform(0, 120),
        elbow_left=rng.uniform(0, 130),
        elbow_right=rng.uniform(0, 130),
        knee_left=rng.uniform(0, 90),
        knee_right=rng.uniform(0, 90),
        heading=rng.uniform(-180, 180),
    )


def observe(points: np.ndarray, cams, rng: np.random.Generator | None = None, noise_px: float = 0.0,
            frame_id: str = "", score: float = 1.0) -> dict[str, Pose2D]:
    """Project a skeleton into every camera, optionally adding Gaussian pixel noise."""
    out = {}
    for cam in cams:
        px = project_many(points, cam)
        if noise_px > 0:
            px = px + rng.normal(0.0, noise_px, size=px.shape)
        out[cam.camera_id] = Pose2D.from_array(px, detection_score=score, camera_id=cam.camera_id,
                                               frame_id=frame_id)
    return out


def skeleton_from_points(points: np.ndarray, person_id: str = "0", frame_id: str = "") -> Skeleton3D:
    return Skeleton3D.from_points(points, person_id=person_id, frame_id=frame_id)
