"""Multi-view geometry: projection, epipolar matching of people, DLT triangulation."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_C_MIN,
    CameraParams,
    ErgoError,
    Joint3D,
    Pose2D,
    Skeleton3D,
)

log = logging.getLogger(__name__)

TAU_EPI = 10.0
TAU_REPROJ = 8.0
N_MIN_SHARED = 5
MAX_CONDITION = 1e12


class BehindCamera(ErgoError, ValueError):
    pass


class NoConvergence(ErgoError, RuntimeError):
    pass


class CoincidentCenters(ErgoError, ValueError):
    pass


class FewerThanTwoCameras(ErgoError, ValueError):
    pass


class InsufficientViews(ErgoError, ValueError):
    pass


class DegenerateGeometry(ErgoError, ValueError):
    pass


class GroupTooSmall(ErgoError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    F: np.ndarray
    view_pair: tuple[str, str]


@dataclass(frozen=True)
class MatchGroup:
    """Detections believed to be one person; ``members`` maps camera_id to detection index."""

    members: tuple[tuple[str, int], ...]
    mean_epi_dist: float = 0.0

    def as_dict(self) -> dict[str, int]:
        return dict(self.members)

    def __len__(self):
        return len(self.members)


def _distort_normalized(xn: np.ndarray, dist: np.ndarray) -> np.ndarray:
    k1, k2, p1, p2, k3 = dist
    x, y = xn[..., 0], xn[..., 1]
    r2 = x * x + y * y
    radial = 1 + k1 * r2 + k2 * r2**2 + k3 * r2**3
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def _distortion_jacobian(xn: np.ndarray, dist: np.ndarray) -> np.ndarray:
    k1, k2, p1, p2, k3 = dist
    x, y = xn
    r2 = x * x + y * y
    radial = 1 + k1 * r2 + k2 * r2**2 + k3 * r2**3
    drad = k1 + 2 * k2 * r2 + 3 * k3 * r2**2  # d radial / d r2
    return np.array([
        [radial + 2 * x * x * drad + 2 * p1 * y + 6 * p2 * x,
         2 * x * y * drad + 2 * p1 * x + 2 * p2 * y],
        [2 * x * y * drad + 2 * p1 * x + 2 * p2 * y,
         radial + 2 * y * y * drad + 6 * p1 * y + 2 * p2 * x],
    ])


def normalized_to_pixel(xn: np.ndarray, cam: CameraParams) -> np.ndarray:
    xn = np.asarray(xn, dtype=float)
    h = np.concatenate([xn, np.ones(xn.shape[:-1] + (1,))], axis=-1)
    p = h @ cam.K.T
    return p[..., :2] / p[..., 2:]


def project(point, cam: CameraParams) -> tuple[float, float, float]:
    """Project a world point to pixels. Returns ``(x, y, depth)``."""
    Xc = cam.R @ np.asarray(point, dtype=float) + cam.t
    depth = float(Xc[2])
    if depth <= 0:
        raise BehindCamera(f"point has depth {depth:.4g} in camera {cam.camera_id}")
    xn = Xc[:2] / depth
    if np.any(cam.dist):
        xn = _distort_normalized(xn, cam.dist)
    x, y = normalized_to_pixel(xn, cam)
    return float(x), float(y), depth


def project_many(points, cam: CameraParams) -> np.ndarray:
    """Vectorised :func:`project` without the depth check; returns (N, 2) pixels."""
    Xc = np.asarray(points, dtype=float) @ cam.R.T + cam.t
    xn = Xc[:, :2] / Xc[:, 2:3]
    if np.any(cam.dist):
        xn = _distort_normalized(xn, cam.dist)
    return normalized_to_pixel(xn, cam)


def undistort_point(pt, cam: CameraParams, max_iter: int = 20, tol_px: float = 1e-6) -> np.ndarray:
    """Invert lens distortion for one pixel; returns normalized image coordinates.

    Newton iterations on the forward radial-tangential model, stopping when the
    redistorted point lands within ``tol_px`` of the input.
    """
    pt = np.asarray(pt, dtype=float)
    Kinv = np.linalg.inv(cam.K)
    target = (Kinv @ np.array([pt[0], pt[1], 1.0]))[:2]
    if not np.any(cam.dist):
        return target
    fx, fy = cam.K[0, 0], cam.K[1, 1]
    xn = target.copy()
    for _ in range(max_iter):
        resid = _distort_normalized(xn, cam.dist) - target
        if max(abs(resid[0]) * fx, abs(resid[1]) * fy) < tol_px:
            return xn
        xn = xn - np.linalg.solve(_distortion_jacobian(xn, cam.dist), resid)
    resid = _distort_normalized(xn, cam.dist) - target
    if max(abs(resid[0]) * fx, abs(resid[1]) * fy) < tol_px:
        return xn
    raise NoConvergence(f"undistortion of {pt.tolist()} did not converge")


def undistort_pixels(pts, cam: CameraParams) -> np.ndarray:
    """Map distorted pixels to ideal (distortion-free) pixels."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if not np.any(cam.dist):
        return pts.copy()
    xn = np.array([undistort_point(p, cam) for p in pts])
    return normalized_to_pixel(xn, cam)


def _skew(v) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=float)


def fundamental_from_cameras(cam_a: CameraParams, cam_b: CameraParams) -> FundamentalMatrix:
    """F with ``x_b^T F x_a = 0`` for ideal pixel correspondences, scaled to unit norm."""
    baseline = np.linalg.norm(cam_a.center - cam_b.center)
    if baseline < 1e-9:
        raise CoincidentCenters(f"cameras {cam_a.camera_id} and {cam_b.camera_id} share a center")
    R = cam_b.R @ cam_a.R.T
    t = cam_b.t - R @ cam_a.t
    E = _skew(t) @ R
    F = np.linalg.inv(cam_b.K).T @ E @ np.linalg.inv(cam_a.K)
    # enforce exact rank 2 against roundoff
    U, S, Vt = np.linalg.svd(F)
    S[2] = 0.0
    F = U @ np.diag(S) @ Vt
    F /= np.linalg.norm(F)
    return FundamentalMatrix(F, (cam_a.camera_id, cam_b.camera_id))


def _line_distance(pt: np.ndarray, line: np.ndarray) -> np.ndarray:
    norm = np.hypot(line[..., 0], line[..., 1])
    val = np.abs(np.sum(line[..., :2] * pt, axis=-1) + line[..., 2])
    return val / np.maximum(norm, 1e-300)


def symmetric_epipolar_distance(pt_a, pt_b, F) -> float | np.ndarray:
    """Mean distance of each point to the epipolar line of its partner (pixels).

    Accepts single points or (N, 2) arrays, in which case a vector is returned.
    """
    F = F.F if isinstance(F, FundamentalMatrix) else np.asarray(F)
    a = np.asarray(pt_a, dtype=float)
    b = np.asarray(pt_b, dtype=float)
    ha = np.concatenate([a, np.ones(a.shape[:-1] + (1,))], axis=-1)
    hb = np.concatenate([b, np.ones(b.shape[:-1] + (1,))], axis=-1)
    line_b = ha @ F.T  # F x_a, lines in image b
    line_a = hb @ F  # F^T x_b, lines in image a
    d = 0.5 * (_line_distance(b, line_b) + _line_distance(a, line_a))
    return float(d) if d.ndim == 0 else d


def pose_affinity(pose_a: Pose2D, pose_b: Pose2D, F, c_min: float = DEFAULT_C_MIN,
                  n_min: int = N_MIN_SHARED, cams: Optional[tuple[CameraParams, CameraParams]] = None
                  ) -> Optional[float]:
    """Confidence-weighted mean symmetric epipolar distance between two detections.

    Returns ``None`` (incomparable) when fewer than ``n_min`` keypoints are confident
    in both views. Pass ``cams`` to undistort the keypoints first.
    """
    if len(pose_a.keypoints) != len(pose_b.keypoints):
        raise ValueError("poses have different keypoint layouts")
    ca, cb = pose_a.conf(), pose_b.conf()
    shared = (ca >= c_min) & (cb >= c_min)
    if shared.sum() < n_min:
        return None
    xa, xb = pose_a.xy()[shared], pose_b.xy()[shared]
    if cams is not None:
        xa, xb = undistort_pixels(xa, cams[0]), undistort_pixels(xb, cams[1])
    w = np.minimum(ca, cb)[shared]
    d = symmetric_epipolar_distance(xa, xb, F)
    return float(np.sum(w * d) / np.sum(w))


def match_across_views(detections: Mapping[str, Sequence[Pose2D]], cams: Sequence[CameraParams],
                       tau_epi: float = TAU_EPI, c_min: float = DEFAULT_C_MIN,
                       n_min: int = N_MIN_SHARED) -> tuple[list[MatchGroup], float]:
    """Greedy agglomerative grouping of detections across cameras.

    All cross-view pairs are sorted by affinity (ties by camera id and index) and
    merged while the affinity is within ``tau_epi`` and no camera would appear twice
    in a group. Returns the groups (sorted) and the fraction of detections left as
    singletons.
    """
    cam_by_id = {c.camera_id: c for c in cams}
    if len(cam_by_id) < 2:
        raise FewerThanTwoCameras("matching needs at least two cameras")
    cam_ids = sorted(cid for cid in cam_by_id if cid in detections)

    edges = []
    for ca, cb in itertools.combinations(cam_ids, 2):
        F = fundamental_from_cameras(cam_by_id[ca], cam_by_id[cb])
        pair = (cam_by_id[ca], cam_by_id[cb])
        for i, pa in enumerate(detections[ca]):
            for j, pb in enumerate(detections[cb]):
                aff = pose_affinity(pa, pb, F, c_min, n_min, pair)
                if aff is not None and aff <= tau_epi:
                    edges.append((aff, ca, i, cb, j))
    edges.sort()

    # union-find over (camera_id, index) nodes
    parent = {(c, i): (c, i) for c in cam_ids for i in range(len(detections[c]))}
    members = {n: {n[0]: n[1]} for n in parent}
    dists: dict = {n: [] for n in parent}

    def find(n):
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    for aff, ca, i, cb, j in edges:
        ra, rb = find((ca, i)), find((cb, j))
        if ra == rb or set(members[ra]) & set(members[rb]):
            continue
        root, other = min(ra, rb), max(ra, rb)
        parent[other] = root
        members[root].update(members.pop(other))
        dists[root] = dists[root] + dists.pop(other) + [aff]

    groups = []
    for root, mem in members.items():
        d = dists[root]
        groups.append(MatchGroup(tuple(sorted(mem.items())), float(np.mean(d)) if d else 0.0))
    groups.sort(key=lambda g: (-len(g), g.members))
    n_total = len(parent)
    n_single = sum(1 for g in groups if len(g) < 2)
    return groups, (n_single / n_total if n_total else 0.0)


def _hartley(cam: CameraParams) -> np.ndarray:
    # similarity mapping the image to a box centred on 0 with mean radius ~sqrt(2)
    w, h = cam.image_size
    s = np.sqrt(2.0) / (0.5 * np.hypot(w, h))
    return np.array([[s, 0, -s * w / 2], [0, s, -s * h / 2], [0, 0, 1.0]])


def triangulate_point(observations: Sequence[tuple[str, Sequence[float], float]],
                      cams: Sequence[CameraParams] | Mapping[str, CameraParams],
                      c_min: float = DEFAULT_C_MIN) -> tuple[np.ndarray, float, int]:
    """Linear (DLT) triangulation of one point.

    ``observations`` holds ``(camera_id, (x, y), conf)``; observations below
    ``c_min`` are ignored. Returns ``(xyz, reproj_rms_px, n_views)``.
    """
    cam_by_id = cams if isinstance(cams, Mapping) else {c.camera_id: c for c in cams}
    used = [(cid, np.asarray(pt, dtype=float), cf) for cid, pt, cf in observations if cf >= c_min]
    if len(used) < 2:
        raise InsufficientViews(f"{len(used)} confident view(s); need at least 2")
    rows = []
    for cid, pt, _ in used:
        cam = cam_by_id[cid]
        ideal = undistort_pixels(pt, cam)[0]
        T = _hartley(cam)
        P = T @ cam.P
        x, y, _ = T @ np.array([ideal[0], ideal[1], 1.0])
        for r in (x * P[2] - P[0], y * P[2] - P[1]):
            rows.append(r / np.linalg.norm(r))
    A = np.array(rows)
    _, S, Vt = np.linalg.svd(A)
    # rank-3 conditioning: a well-posed system has a 1-D null space, so compare
    # the largest singular value against the third
    if S[2] <= S[0] / MAX_CONDITION:
        raise DegenerateGeometry("near-parallel rays; DLT system is rank deficient")
    Xh = Vt[-1]
    if abs(Xh[3]) < 1e-15:
        raise DegenerateGeometry("triangulated point at infinity")
    X = Xh[:3] / Xh[3]
    errs = []
    for cid, pt, _ in used:
        cam = cam_by_id[cid]
        Xc = cam.R @ X + cam.t
        if Xc[2] <= 0:
            errs.append(np.inf)
            continue
        errs.append(float(np.sum((project_many(X[None], cam)[0] - pt) ** 2)))
    rms = float(np.sqrt(np.mean(errs)))
    return X, rms, len(used)


def triangulate_skeleton(group: MatchGroup, detections: Mapping[str, Sequence[Pose2D]],
                         cams: Sequence[CameraParams] | Mapping[str, CameraParams],
                         tau_reproj: float = TAU_REPROJ, c_min: float = DEFAULT_C_MIN,
                         person_id: str = "0", frame_id: str = "") -> Skeleton3D:
    if len(group) < 2:
        raise GroupTooSmall("a skeleton needs detections from at least two cameras")
    cam_by_id = cams if isinstance(cams, Mapping) else {c.camera_id: c for c in cams}
    poses = [(cid, detections[cid][idx]) for cid, idx in group.members]
    n_kp = len(poses[0][1].keypoints)
    joints = []
    for k in range(n_kp):
        obs = [(cid, (p.keypoints[k].x, p.keypoints[k].y), p.keypoints[k].conf) for cid, p in poses]
        n_conf = sum(1 for o in obs if o[2] >= c_min)
        if n_conf < 2:
            joints.append(Joint3D((float("nan"),) * 3, False, float("nan"), n_conf))
            continue
        try:
            X, rms, n = triangulate_point(obs, cam_by_id, c_min)
        except DegenerateGeometry:
            joints.append(Joint3D((float("nan"),) * 3, False, float("nan"), n_conf))
            continue
        joints.append(Joint3D(tuple(float(v) for v in X), bool(rms <= tau_reproj), rms, n))
    return Skeleton3D(tuple(joints), person_id, frame_id)


def triangulate_frame(detections: Mapping[str, Sequence[Pose2D]], cams: Sequence[CameraParams],
                      tau_epi: float = TAU_EPI, tau_reproj: float = TAU_REPROJ,
                      c_min: float = DEFAULT_C_MIN, frame_id: str = ""
                      ) -> tuple[list[Skeleton3D], list[MatchGroup], float]:
    """Match then triangulate every multi-view group of one frame."""
    groups, unmatched = match_across_views(detections, cams, tau_epi, c_min)
    skels = []
    for g in groups:
        if len(g) < 2:
            continue
        skels.append(triangulate_skeleton(g, detections, cams, tau_reproj, c_min,
                                          person_id=str(len(skels)), frame_id=frame_id))
    return skels, groups, unmatched
