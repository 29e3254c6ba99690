"""REBA (Rapid Entire Body Assessment) scoring from 3D skeletons.

Lookup tables follow Hignett & McAtamney (2000). Angle conventions are
magnitude-based because COCO keypoints carry no sagittal sign; see the README
for the list of adaptations.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .core import KP, ErgoError, Skeleton3D, WorldConvention


class MissingCoreJoints(ErgoError, ValueError):
    pass


class NonFiniteAngle(ErgoError, ValueError):
    pass


class IndexOutOfRange(ErgoError, IndexError):
    pass


class RiskCategory(str, Enum):
    NEGLIGIBLE = "Negligible"
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"
    VERY_HIGH = "VeryHigh"


# TABLE_A[trunk-1][neck-1][legs-1]
TABLE_A = np.array([
    [[1, 2, 3, 4], [1, 2, 3, 4], [3, 3, 5, 6]],
    [[2, 3, 4, 5], [3, 4, 5, 6], [4, 5, 6, 7]],
    [[2, 4, 5, 6], [4, 5, 6, 7], [5, 6, 7, 8]],
    [[3, 5, 6, 7], [5, 6, 7, 8], [6, 7, 8, 9]],
    [[4, 6, 7, 8], [6, 7, 8, 9], [7, 8, 9, 9]],
])

# TABLE_B[upper_arm-1][lower_arm-1][wrist-1]
TABLE_B = np.array([
    [[1, 2, 2], [1, 2, 3]],
    [[1, 2, 3], [2, 3, 4]],
    [[3, 4, 5], [4, 5, 5]],
    [[4, 5, 5], [5, 6, 7]],
    [[6, 7, 8], [7, 8, 8]],
    [[7, 8, 8], [8, 9, 9]],
])

# TABLE_C[score_a-1][score_b-1]
TABLE_C = np.array([
    [1, 1, 1, 2, 3, 3, 4, 5, 6, 7, 7, 7],
    [1, 2, 2, 3, 4, 4, 5, 6, 6, 7, 7, 8],
    [2, 3, 3, 3, 4, 5, 6, 7, 7, 8, 8, 8],
    [3, 4, 4, 4, 5, 6, 7, 8, 8, 9, 9, 9],
    [4, 4, 4, 5, 6, 7, 8, 8, 9, 9, 9, 9],
    [6, 6, 6, 7, 8, 8, 9, 9, 10, 10, 10, 10],
    [7, 7, 7, 8, 9, 9, 9, 10, 10, 11, 11, 11],
    [8, 8, 8, 9, 10, 10, 10, 10, 10, 11, 11, 11],
    [9, 9, 9, 10, 10, 10, 11, 11, 11, 12, 12, 12],
    [10, 10, 10, 11, 11, 11, 11, 12, 12, 12, 12, 12],
    [11, 11, 11, 11, 12, 12, 12, 12, 12, 12, 12, 12],
    [12, 12, 12, 12, 12, 12, 12, 12, 12, 12, 12, 12],
])

PART_NAMES = ("trunk", "neck", "legs", "upper_arm", "lower_arm", "wrist")


@dataclass(frozen=True)
class JointAngles:
    """Joint angles in degrees. NaN marks angles whose joints were not valid."""

    trunk_flexion: float
    neck_flexion: float
    knee_flexion_left: float
    knee_flexion_right: float
    upper_arm_flexion_left: float
    upper_arm_flexion_right: float
    elbow_flexion_left: float
    elbow_flexion_right: float
    side_bend: float
    neck_side_bend: float = 0.0


@dataclass(frozen=True)
class RebaParams:
    force_load: int = 0
    coupling: int = 0
    activity: int = 0
    wrist_default: int = 1


@dataclass(frozen=True)
class RebaBreakdown:
    trunk: int
    neck: int
    legs: int
    upper_arm: int
    lower_arm: int
    wrist: int
    table_a: int
    table_b: int
    score_a: int
    score_b: int
    table_c: int
    activity: int
    reba: int
    category: RiskCategory
    frame_id: str = ""
    person_id: str = ""

    def partials(self) -> dict[str, int]:
        return {p: getattr(self, p) for p in PART_NAMES}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["category"] = self.category.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RebaBreakdown":
        kw = {f.name: d[f.name] for f in fields(cls) if f.name in d}
        kw["category"] = RiskCategory(kw["category"])
        return cls(**kw)


def _unit(v: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(v @ v))
    return v / n if n > 0 else np.full_like(v, np.nan)


def _angle(u: np.ndarray, v: np.ndarray) -> float:
    c = float(np.dot(_unit(u), _unit(v)))
    return math.degrees(math.acos(min(1.0, max(-1.0, c)))) if math.isfinite(c) else math.nan


def _lateral_deviation(vec: np.ndarray, lateral: np.ndarray) -> float:
    # angle between vec and the plane orthogonal to the lateral axis
    c = float(np.dot(_unit(vec), lateral))
    return math.degrees(math.asin(min(1.0, abs(c)))) if math.isfinite(c) else math.nan


def joint_angles(skel: Skeleton3D, world: WorldConvention = WorldConvention()) -> JointAngles:
    P = skel.positions()
    ok = skel.valid_mask()
    core = (KP.LEFT_HIP, KP.RIGHT_HIP, KP.LEFT_SHOULDER, KP.RIGHT_SHOULDER)
    if not all(ok[j] for j in core):
        raise MissingCoreJoints("hips and shoulders must be valid")
    up = world.up
    mid_hip = 0.5 * (P[KP.LEFT_HIP] + P[KP.RIGHT_HIP])
    mid_sh = 0.5 * (P[KP.LEFT_SHOULDER] + P[KP.RIGHT_SHOULDER])
    trunk = mid_sh - mid_hip
    trunk_u = _unit(trunk)

    if ok[KP.LEFT_EAR] and ok[KP.RIGHT_EAR]:
        head = 0.5 * (P[KP.LEFT_EAR] + P[KP.RIGHT_EAR])
    elif ok[KP.NOSE]:
        head = P[KP.NOSE]
    else:
        head = None
    neck = head - mid_sh if head is not None else None

    # lateral axis from the hips, levelled against gravity
    hip_axis = P[KP.LEFT_HIP] - P[KP.RIGHT_HIP]
    lat = _unit(hip_axis - np.dot(hip_axis, up) * up)
    side_bend = _lateral_deviation(trunk, lat)
    if neck is not None:
        sh_axis = P[KP.LEFT_SHOULDER] - P[KP.RIGHT_SHOULDER]
        sh_lat = _unit(sh_axis - np.dot(sh_axis, trunk_u) * trunk_u)
        neck_flex = _angle(neck, trunk)
        neck_side = _lateral_deviation(neck, sh_lat)
    else:
        neck_flex = neck_side = math.nan

    def limb_flexion(a, b, c):
        if not (ok[a] and ok[b] and ok[c]):
            return math.nan
        return 180.0 - _angle(P[a] - P[b], P[c] - P[b])

    def upper_arm(sh, el):
        if not (ok[sh] and ok[el]):
            return math.nan
        return _angle(P[el] - P[sh], -trunk)

    return JointAngles(
        trunk_flexion=_angle(trunk, up),
        neck_flexion=neck_flex,
        knee_flexion_left=limb_flexion(KP.LEFT_HIP, KP.LEFT_KNEE, KP.LEFT_ANKLE),
        knee_flexion_right=limb_flexion(KP.RIGHT_HIP, KP.RIGHT_KNEE, KP.RIGHT_ANKLE),
        upper_arm_flexion_left=upper_arm(KP.LEFT_SHOULDER, KP.LEFT_ELBOW),
        upper_arm_flexion_right=upper_arm(KP.RIGHT_SHOULDER, KP.RIGHT_ELBOW),
        elbow_flexion_left=limb_flexion(KP.LEFT_SHOULDER, KP.LEFT_ELBOW, KP.LEFT_WRIST),
        elbow_flexion_right=limb_flexion(KP.RIGHT_SHOULDER, KP.RIGHT_ELBOW, KP.RIGHT_WRIST),
        side_bend=side_bend,
        neck_side_bend=neck_side,
    )


def trunk_score(flexion: float, side_bend: float = 0.0) -> int:
    if flexion < 5:
        s = 1
    elif flexion <= 20:
        s = 2
    elif flexion <= 60:
        s = 3
    else:
        s = 4
    return s + (1 if side_bend > 10 else 0)


def neck_score(flexion: float, side_bend: float = 0.0) -> int:
    return (1 if flexion <= 20 else 2) + (1 if side_bend > 10 else 0)


def legs_score(knee_flexion: float) -> int:
    if knee_flexion > 60:
        return 3
    if knee_flexion > 30:
        return 2
    return 1


def upper_arm_score(flexion: float) -> int:
    if flexion <= 20:
        return 1
    if flexion <= 45:
        return 2
    if flexion <= 90:
        return 3
    return 4


def lower_arm_score(elbow_flexion: float) -> int:
    return 1 if 60 <= elbow_flexion <= 100 else 2


def _worse_side(left: float, right: float, scorer, name: str) -> int:
    scores = [scorer(a) for a in (left, right) if math.isfinite(a)]
    if not scores:
        raise NonFiniteAngle(f"{name}: no finite angle on either side")
    return max(scores)


def partial_scores(angles: JointAngles, params: RebaParams = RebaParams()) -> tuple[int, ...]:
    """Return (trunk, neck, legs, upper_arm, lower_arm, wrist) partial scores."""
    if not math.isfinite(angles.trunk_flexion):
        raise NonFiniteAngle("trunk flexion is not finite")
    if not math.isfinite(angles.neck_flexion):
        raise NonFiniteAngle("neck flexion is not finite")
    side = angles.side_bend if math.isfinite(angles.side_bend) else 0.0
    neck_side = angles.neck_side_bend if math.isfinite(angles.neck_side_bend) else 0.0
    return (
        trunk_score(angles.trunk_flexion, side),
        neck_score(angles.neck_flexion, neck_side),
        _worse_side(angles.knee_flexion_left, angles.knee_flexion_right, legs_score, "legs"),
        _worse_side(angles.upper_arm_flexion_left, angles.upper_arm_flexion_right,
                    upper_arm_score, "upper arm"),
        _worse_side(angles.elbow_flexion_left, angles.elbow_flexion_right,
                    lower_arm_score, "lower arm"),
        params.wrist_default,
    )


def _lookup(table: np.ndarray, *idx: int) -> int:
    for i, (v, n) in enumerate(zip(idx, table.shape)):
        if not 1 <= v <= n:
            raise IndexOutOfRange(f"argument {i} = {v} outside [1, {n}]")
    return int(table[tuple(v - 1 for v in idx)])


def table_a(trunk: int, neck: int, legs: int) -> int:
    return _lookup(TABLE_A, trunk, neck, legs)


def table_b(upper_arm: int, lower_arm: int, wrist: int) -> int:
    return _lookup(TABLE_B, upper_arm, lower_arm, wrist)


def table_c(score_a: int, score_b: int) -> int:
    return _lookup(TABLE_C, score_a, score_b)


def risk_category(reba: int) -> RiskCategory:
    if reba <= 1:
        return RiskCategory.NEGLIGIBLE
    if reba <= 3:
        return RiskCategory.LOW
    if reba <= 7:
        return RiskCategory.MEDIUM
    if reba <= 10:
        return RiskCategory.HIGH
    return RiskCategory.VERY_HIGH


def score_from_partials(parts: Sequence[int], params: RebaParams = RebaParams(),
                        frame_id: str = "", person_id: str = "") -> RebaBreakdown:
    trunk, neck, legs, ua, la, wrist = parts
    ta = table_a(trunk, neck, legs)
    tb = table_b(ua, la, wrist)
    sa = ta + params.force_load
    sb = tb + params.coupling
    tc = table_c(min(sa, 12), min(sb, 12))
    reba = tc + params.activity
    return RebaBreakdown(trunk, neck, legs, ua, la, wrist, ta, tb, sa, sb, tc,
                         params.activity, reba, risk_category(reba), frame_id, person_id)


def reba_score(skel: Skeleton3D, params: RebaParams = RebaParams(),
               world: WorldConvention = WorldConvention()) -> RebaBreakdown:
    parts = partial_scores(joint_angles(skel, world), params)
    return score_from_partials(parts, params, skel.frame_id, skel.person_id)


@dataclass
class Distribution:
    score_counts: dict[int, int]
    category_counts: dict[str, int]
    n: int

    @property
    def score_fractions(self) -> dict[int, float]:
        return {k: v / self.n for k, v in self.score_counts.items()}

    @property
    def category_fractions(self) -> dict[str, float]:
        return {k: v / self.n for k, v in self.category_counts.items()}


def score_distribution(breakdowns: Sequence[RebaBreakdown]) -> Distribution:
    scores = Counter(b.reba for b in breakdowns)
    cats = Counter(b.category.value for b in breakdowns)
    order = [c.value for c in RiskCategory]
    return Distribution(
        dict(sorted(scores.items())),
        {c: cats[c] for c in order if c in cats},
        len(breakdowns),
    )


@dataclass
class DeltaReport:
    """Obfuscated-minus-original differences over aligned pairs."""

    part_deltas: dict[str, dict[int, float]]
    reba_deltas: dict[int, float]
    exact_match_rate: float
    same_category_rate: float
    n_compared: int
    n_unmatched: int
    unmatched_fraction: float


def compare_breakdowns(orig: Sequence[RebaBreakdown],
                       obf: Sequence[Optional[RebaBreakdown]]) -> DeltaReport:
    """Compare aligned breakdown lists; ``None`` entries in ``obf`` count as unmatched."""
    if len(orig) != len(obf):
        raise ValueError("breakdown lists must be aligned (use None for unmatched)")
    pairs = [(o, b) for o, b in zip(orig, obf) if b is not None]
    n = len(pairs)
    n_unmatched = len(orig) - n

    def hist(values):
        c = Counter(values)
        return {k: c[k] / n for k in sorted(c)} if n else {}

    part_deltas = {p: hist(getattr(b, p) - getattr(o, p) for o, b in pairs) for p in PART_NAMES}
    return DeltaReport(
        part_deltas=part_deltas,
        reba_deltas=hist(b.reba - o.reba for o, b in pairs),
        exact_match_rate=sum(o.reba == b.reba for o, b in pairs) / n if n else 0.0,
        same_category_rate=sum(o.category == b.category for o, b in pairs) / n if n else 0.0,
        n_compared=n,
        n_unmatched=n_unmatched,
        unmatched_fraction=n_unmatched / len(orig) if orig else 0.0,
    )
