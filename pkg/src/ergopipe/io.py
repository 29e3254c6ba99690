"""Readers and writers for the JSON and CSV interchange files.

Floats are written with ``repr`` (shortest round-trip form) so identical
inputs always give byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .core import (
    NUM_KEYPOINTS,
    SCHEMA_VERSION,
    CameraParams,
    GroundTruthPose,
    MissingFile,
    ParseError,
    Pose2D,
    SchemaVersionMismatch,
    Skeleton3D,
    WorldConvention,
    validate_camera,
)
from .reba import PART_NAMES, DeltaReport, Distribution, RebaBreakdown

log = logging.getLogger(__name__)

KNOWN_FORMATS = {"coco17": NUM_KEYPOINTS}


@dataclass
class KeypointFrame:
    frame_id: str
    cameras: dict[str, list] = field(default_factory=dict)  # camera_id -> Pose2D or GroundTruthPose


def _load_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path}: no such file")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}") from e


def _check_schema(doc: dict, path) -> None:
    ver = doc.get("schema_version")
    if ver is None:
        raise ParseError(f"{path}: missing schema_version")
    if str(ver).split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise SchemaVersionMismatch(f"{path}: schema_version {ver} not supported (expected {SCHEMA_VERSION})")


def _warn_unknown(d: dict, known: set, where: str) -> None:
    for k in sorted(set(d) - known):
        log.warning("%s: ignoring unknown field %r", where, k)


def dump_json(doc, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=False, allow_nan=False) + "\n")


def parse_keypoints_file(path, ground_truth: bool = False) -> list[KeypointFrame]:
    """Parse a detections (or ground-truth) keypoints file into frames."""
    doc = _load_json(path)
    _check_schema(doc, path)
    _warn_unknown(doc, {"schema_version", "keypoint_format", "frames"}, str(path))
    fmt = doc.get("keypoint_format", "coco17")
    if fmt not in KNOWN_FORMATS:
        raise ParseError(f"{path}: unknown keypoint_format {fmt!r}")
    n_kp = KNOWN_FORMATS[fmt]
    frames = []
    for fi, fr in enumerate(doc.get("frames", [])):
        frame_id = str(fr.get("frame_id", fi))
        _warn_unknown(fr, {"frame_id", "cameras"}, f"{path}: frame {frame_id}")
        kf = KeypointFrame(frame_id)
        for cam in fr.get("cameras", []):
            cid = str(cam.get("camera_id", ""))
            _warn_unknown(cam, {"camera_id", "detections"}, f"{path}: frame {frame_id} camera {cid}")
            dets = []
            for pi, det in enumerate(cam.get("detections", [])):
                where = f"{path}: frame {frame_id} camera {cid} person {pi}"
                dets.append(_parse_detection(det, n_kp, ground_truth, cid, frame_id, where))
            kf.cameras[cid] = dets
        frames.append(kf)
    return frames


def _parse_detection(det: dict, n_kp: int, ground_truth: bool, cid: str, frame_id: str, where: str):
    known = {"score", "keypoints", "bbox_area"} | ({"visibility", "segment_area"} if ground_truth else set())
    _warn_unknown(det, known, where)
    kps = det.get("keypoints")
    if not isinstance(kps, list) or len(kps) != n_kp:
        raise ParseError(f"{where}: expected {n_kp} keypoints")
    for ki, k in enumerate(kps):
        if not isinstance(k, list) or len(k) != 3:
            raise ParseError(f"{where}: keypoint {ki} must be [x, y, conf]")
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in k):
            raise ParseError(f"{where}: keypoint {ki} has non-numeric or non-finite values")
    try:
        if ground_truth:
            vis = det.get("visibility")
            if not isinstance(vis, list) or len(vis) != n_kp:
                raise ParseError(f"{where}: expected {n_kp} visibility flags")
            return GroundTruthPose.from_dict(det, cid, frame_id)
        pose = Pose2D.from_dict(det, cid, frame_id)
    except (TypeError, ValueError) as e:
        if isinstance(e, ParseError):
            raise
        raise ParseError(f"{where}: {e}") from e
    if any(not 0.0 <= k.conf <= 1.0 for k in pose.keypoints):
        raise ParseError(f"{where}: confidence outside [0, 1]")
    return pose


def write_keypoints_file(frames: Sequence[KeypointFrame], path, keypoint_format: str = "coco17") -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "keypoint_format": keypoint_format,
        "frames": [
            {
                "frame_id": f.frame_id,
                "cameras": [
                    {"camera_id": cid, "detections": [d.to_dict() for d in dets]}
                    for cid, dets in f.cameras.items()
                ],
            }
            for f in frames
        ],
    }
    dump_json(doc, path)


def parse_calibration_file(path) -> tuple[list[CameraParams], WorldConvention]:
    doc = _load_json(path)
    _check_schema(doc, path)
    _warn_unknown(doc, {"schema_version", "up_axis", "cameras"}, str(path))
    cams = []
    for i, c in enumerate(doc.get("cameras", [])):
        try:
            cams.append(validate_camera(CameraParams.from_dict(c)))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ParseError):
                raise
            raise ParseError(f"{path}: camera {i}: {e}") from e
    world = WorldConvention(tuple(doc.get("up_axis", (0.0, 0.0, 1.0))))
    return cams, world


def write_calibration_file(cams: Sequence[CameraParams], path, world: WorldConvention = WorldConvention()) -> None:
    dump_json({"schema_version": SCHEMA_VERSION, "up_axis": list(world.up_axis),
               "cameras": [c.to_dict() for c in cams]}, path)


@dataclass
class SkeletonFrame:
    frame_id: str
    skeletons: list[Skeleton3D]
    n_detections: int = 0
    n_unmatched: int = 0


def write_skeleton_file(frames: Sequence[SkeletonFrame], path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "keypoint_format": "coco17",
        "frames": [
            {
                "frame_id": f.frame_id,
                "n_detections": f.n_detections,
                "n_unmatched": f.n_unmatched,
                "skeletons": [s.to_dict() for s in f.skeletons],
            }
            for f in frames
        ],
    }
    dump_json(doc, path)


def parse_skeleton_file(path) -> list[SkeletonFrame]:
    doc = _load_json(path)
    _check_schema(doc, path)
    frames = []
    for fi, fr in enumerate(doc.get("frames", [])):
        frame_id = str(fr.get("frame_id", fi))
        skels = []
        for si, s in enumerate(fr.get("skeletons", [])):
            try:
                sk = Skeleton3D.from_dict({**s, "frame_id": frame_id})
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(f"{path}: frame {frame_id} skeleton {si}: {e}") from e
            skels.append(sk)
        frames.append(SkeletonFrame(frame_id, skels, int(fr.get("n_detections", 0)),
                                    int(fr.get("n_unmatched", 0))))
    return frames


def fmt(v) -> str:
    """Deterministic cell formatting: shortest round-trip floats, ``inf``/``nan`` spelled out."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = (),
              trailer: Sequence[Sequence] = ()) -> None:
    """CSV with a leading ``# schema_version`` line, optional comments and a trailing block."""
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    if trailer:
        buf.write("\n")
        for r in trailer:
            w.writerow([fmt(v) for v in r])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def read_csv(path) -> tuple[dict, list[dict], list[list[str]]]:
    """Inverse of :func:`write_csv`: returns (metadata, rows, trailer rows)."""
    text = Path(path).read_text()
    lines = text.split("\n")
    meta = {}
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        if "=" in body:
            k, v = body.split("=", 1)
            meta[k.strip()] = v.strip()
        i += 1
    if "schema_version" not in meta:
        raise ParseError(f"{path}: missing schema_version line")
    if meta["schema_version"].split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise SchemaVersionMismatch(f"{path}: schema_version {meta['schema_version']}")
    rest = lines[i:]
    try:
        split = rest.index("")
    except ValueError:
        split = len(rest)
    table = list(csv.reader(rest[:split]))
    header, body = table[0], table[1:]
    trailer = [r for r in csv.reader(rest[split + 1:]) if r]
    return meta, [dict(zip(header, r)) for r in body], trailer


REBA_COLUMNS = ("frame_id", "person_id", *PART_NAMES, "table_a", "table_b", "score_a", "score_b",
                "table_c", "activity", "reba", "category")


def write_reba_report(breakdowns: Sequence[RebaBreakdown], path, distribution: Distribution,
                      unmatched_fraction: float = 0.0) -> None:
    """One row per (frame, person) followed by a summary block of score/category fractions."""
    rows = [[getattr(b, c) for c in REBA_COLUMNS] for b in breakdowns]
    trailer: list[list] = [["section", "key", "count", "fraction"]]
    for score, n in distribution.score_counts.items():
        trailer.append(["score", score, n, n / distribution.n])
    for cat, n in distribution.category_counts.items():
        trailer.append(["category", cat, n, n / distribution.n])
    trailer.append(["unmatched_fraction", "", "", float(unmatched_fraction)])
    write_csv(path, REBA_COLUMNS, rows, trailer=trailer)


def read_reba_report(path) -> tuple[list[RebaBreakdown], list[list[str]]]:
    _, rows, trailer = read_csv(path)
    out = []
    for r in rows:
        d = {k: (v if k in ("frame_id", "person_id", "category") else int(v)) for k, v in r.items()}
        out.append(RebaBreakdown.from_dict(d))
    return out, trailer


def write_delta_report(report: DeltaReport, path) -> None:
    rows = []
    for part, hist in report.part_deltas.items():
        for delta, frac in hist.items():
            rows.append([part, delta, frac])
    for delta, frac in report.reba_deltas.items():
        rows.append(["reba", delta, frac])
    trailer = [
        ["metric", "value"],
        ["n_compared", report.n_compared],
        ["n_unmatched", report.n_unmatched],
        ["unmatched_fraction", float(report.unmatched_fraction)],
        ["exact_match_rate", float(report.exact_match_rate)],
        ["same_category_rate", float(report.same_category_rate)],
    ]
    write_csv(path, ["part", "delta", "fraction"], rows, trailer=trailer)
