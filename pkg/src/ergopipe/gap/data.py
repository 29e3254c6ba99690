"""Synthetic stick-figure scenes with identity-bearing texture.

Each scene is a small grayscale image of an articulated stick figure. The
pose is the utility signal; the per-identity background level and the
textured patch on the torso are the private signal an adversary would try to
recover.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ImageBuffer

STICK_JOINTS = (
    "head",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hip", "right_hip",
    "left_knee", "right_knee",
    "left_ankle", "right_ankle",
)
N_STICK = len(STICK_JOINTS)
J = {n: i for i, n in enumerate(STICK_JOINTS)}

STICK_SEGMENTS = (
    ("left_shoulder", "right_shoulder"),
    ("left_hip", "right_hip"),
    ("left_shoulder", "left_elbow"), ("left_elbow", "left_wrist"),
    ("right_shoulder", "right_elbow"), ("right_elbow", "right_wrist"),
    ("left_hip", "left_knee"), ("left_knee", "left_ankle"),
    ("right_hip", "right_knee"), ("right_knee", "right_ankle"),
)

FIGURE_LEVEL = 0.95
LINE_HALF_WIDTH = 1.0
HEAD_RADIUS = 2.5
PATCH_SIZE = (6, 8)  # width, height in pixels


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image: ImageBuffer
    keypoints: np.ndarray  # (N_STICK, 2), normalized (x, y) in [0, 1]
    identity_id: int
    identity_patch_region: tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive)

    def as_float(self) -> np.ndarray:
        return self.image.data[:, :, 0].astype(np.float64) / 255.0


def identity_look(identity_id: int) -> tuple[float, np.ndarray]:
    """Background level and 4x4 binary texture for one identity (deterministic)."""
    rng = np.random.default_rng([0x1D, identity_id])
    background = float(rng.uniform(0.05, 0.45))
    texture = rng.integers(0, 2, size=(4, 4)).astype(float)
    return background, texture


def _pose(rng: np.random.Generator) -> np.ndarray:
    s = rng.uniform(0.85, 1.05)
    cx = rng.uniform(0.38, 0.62)
    hip_y = rng.uniform(0.52, 0.60)
    lean = rng.uniform(-0.6, 0.6)
    torso = 0.24 * s
    half_sh = 0.09 * s
    half_hip = 0.06 * s
    mid_hip = np.array([cx, hip_y])
    up = np.array([np.sin(lean), -np.cos(lean)])
    across = np.array([-up[1], up[0]])
    mid_sh = mid_hip + torso * up
    p = np.zeros((N_STICK, 2))
    p[J["head"]] = mid_sh + 0.09 * s * up
    p[J["left_shoulder"]] = mid_sh + half_sh * across
    p[J["right_shoulder"]] = mid_sh - half_sh * across
    p[J["left_hip"]] = mid_hip + half_hip * across
    p[J["right_hip"]] = mid_hip - half_hip * across

    def limb(root, a1, a2, l1, l2):
        d1 = np.array([np.sin(a1), np.cos(a1)])
        d2 = np.array([np.sin(a2), np.cos(a2)])
        mid = root + l1 * d1
        return mid, mid + l2 * d2

    for side, sign in (("left", 1.0), ("right", -1.0)):
        a1 = sign * rng.uniform(0.1, 2.4)
        a2 = a1 + sign * rng.uniform(-0.3, 2.0)
        p[J[f"{side}_elbow"]], p[J[f"{side}_wrist"]] = limb(p[J[f"{side}_shoulder"]], a1, a2, 0.13 * s, 0.12 * s)
        b1 = sign * rng.uniform(-0.1, 0.7)
        b2 = b1 - sign * rng.uniform(0.0, 0.9)
        p[J[f"{side}_knee"]], p[J[f"{side}_ankle"]] = limb(p[J[f"{side}_hip"]], b1, b2, 0.16 * s, 0.16 * s)
    return p


def _segment_distance(px: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((px - a) @ ab) / max(ab @ ab, 1e-12), 0.0, 1.0)
    return np.linalg.norm(px - (a + t[..., None] * ab), axis=-1)


def render(kp: np.ndarray, identity_id: int, size: int = 48) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    background, texture = identity_look(identity_id)
    yy, xx = np.mgrid[0:size, 0:size]
    pix = np.stack([xx + 0.5, yy + 0.5], axis=-1).astype(float)
    pts = kp * size
    img = np.full((size, size), background)

    mid_sh = 0.5 * (pts[J["left_shoulder"]] + pts[J["right_shoulder"]])
    mid_hip = 0.5 * (pts[J["left_hip"]] + pts[J["right_hip"]])
    # textured torso patch, drawn first so the skeleton lines stay on top
    cx, cy = 0.5 * (mid_sh + mid_hip)
    w, h = PATCH_SIZE
    x0, y0 = int(np.floor(cx - w / 2)), int(np.floor(cy - h / 2))
    x0, y0 = min(max(x0, 0), size - w), min(max(y0, 0), size - h)
    tex = np.kron(texture, np.ones((h // 4, w // 4 + 1)))[:h, :w]
    img[y0:y0 + h, x0:x0 + w] = 0.55 + 0.3 * tex

    segs = [(pts[J[a]], pts[J[b]]) for a, b in STICK_SEGMENTS]
    segs.append((mid_sh, mid_hip))
    segs.append((mid_sh, pts[J["head"]]))
    fg = np.zeros((size, size), dtype=bool)
    for a, b in segs:
        fg |= _segment_distance(pix, a, b) <= LINE_HALF_WIDTH
    fg |= np.linalg.norm(pix - pts[J["head"]], axis=-1) <= HEAD_RADIUS
    img[fg] = FIGURE_LEVEL
    return img, (x0, y0, x0 + w, y0 + h)


def generate_dataset(n: int, n_identities: int = 8, seed: int = 0, size: int = 48) -> list[SyntheticScene]:
    if n < 0 or n_identities < 1:
        raise ValueError("n must be >= 0 and n_identities >= 1")
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(n):
        ident = int(rng.integers(n_identities))
        while True:
            kp = _pose(rng)
            if np.all((kp > 0.04) & (kp < 0.96)):
                break
        img, region = render(kp, ident, size)
        u8 = np.floor(img * 255.0 + 0.5).astype(np.uint8)
        scenes.append(SyntheticScene(ImageBuffer(u8), kp, ident, region))
    return scenes


def to_batch(scenes) -> tuple[np.ndarray, np.ndarray]:
    """Stack scenes into (N, 1, H, W) images in [0, 1] and (N, 2K) keypoint targets."""
    X = np.stack([s.as_float() for s in scenes])[:, None]
    Y = np.stack([s.keypoints.ravel() for s in scenes])
    return X, Y
