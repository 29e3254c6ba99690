"""End-to-end workflows behind the CLI subcommands."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import filters, geometry
from .core import (
    DEFAULT_C_MIN,
    KP,
    SCHEMA_VERSION,
    ErgoError,
    GroundTruthPose,
    ImageBuffer,
    MissingFile,
    ParseError,
    Pose2D,
    Skeleton3D,
    WorldConvention,
)
from .gap.checkpoint import load_model, save_checkpoint
from .gap.data import N_STICK, SyntheticScene, generate_dataset, to_batch
from .gap.trainer import (
    GapConfig,
    evaluate_privacy_utility,
    predict,
    train_adversarial,
    train_task_network,
)
from .imageio import list_images, read_image, write_image
from .io import (
    KeypointFrame,
    SkeletonFrame,
    dump_json,
    parse_calibration_file,
    parse_keypoints_file,
    parse_skeleton_file,
    write_calibration_file,
    write_csv,
    write_delta_report,
    write_keypoints_file,
    write_reba_report,
    write_skeleton_file,
)
from .metrics import OksConstants, average_precision_frames, psnr, ssim
from .reba import (
    MissingCoreJoints,
    NonFiniteAngle,
    RebaBreakdown,
    RebaParams,
    compare_breakdowns,
    reba_score,
    score_distribution,
)
from . import plotting, synth

log = logging.getLogger(__name__)

STICK_KAPPA = 0.1


@dataclass
class RunConfig:
    c_min: float = DEFAULT_C_MIN
    tau_epi: float = geometry.TAU_EPI
    tau_reproj: float = geometry.TAU_REPROJ
    oks_threshold: float = 0.5
    up_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        for name in ("c_min", "tau_epi", "tau_reproj", "oks_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def world(self) -> WorldConvention:
        return WorldConvention(tuple(self.up_axis))


# ---------------------------------------------------------------- obfuscation


def obfuscate_dir(in_dir, out_dir, spec: filters.FilterSpec) -> list[filters.SweepRow]:
    images = list_images(in_dir)
    if not images:
        raise MissingFile(f"{in_dir}: no images found")
    manifest = []
    for image_id, path in images:
        out_path = Path(out_dir) / path.relative_to(in_dir)
        write_image(out_path, filters.apply(read_image(path), spec))
        manifest.append(filters.SweepRow(image_id, spec.method.value, spec.intensity, spec.seed,
                                         out_path.relative_to(out_dir).as_posix()))
    write_csv(Path(out_dir) / "manifest.csv", ["image_id", "method", "intensity", "seed", "output_path"],
              [[r.image_id, r.method, float(r.intensity), r.seed, r.output_path] for r in manifest])
    return manifest


def privacy_eval_dirs(orig_dir, obf_dir) -> list[list]:
    """Per-image SSIM/PSNR rows for images present in both directories, plus a mean row."""
    orig = dict(list_images(orig_dir))
    obf = dict(list_images(obf_dir))
    common = sorted(set(orig) & set(obf))
    if not common:
        raise MissingFile(f"no image ids shared between {orig_dir} and {obf_dir}")
    rows = []
    for image_id in common:
        a, b = read_image(orig[image_id]), read_image(obf[image_id])
        rows.append([image_id, ssim(a, b), psnr(a, b)])
    rows.append(["mean", float(np.mean([r[1] for r in rows])), _mean_psnr([r[2] for r in rows])])
    return rows


def _mean_psnr(values: Sequence[float]) -> float:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return math.inf
    return float(np.mean(finite)) if len(finite) == len(values) else math.inf


# ---------------------------------------------------------------- keypoint evaluation


def kp_eval(pred_path, gt_path, threshold: float = 0.5, consts: OksConstants = OksConstants()) -> dict:
    preds = {f.frame_id: f.cameras for f in parse_keypoints_file(pred_path)}
    gts = {f.frame_id: f.cameras for f in parse_keypoints_file(gt_path, ground_truth=True)}
    images = []
    for fid in sorted(set(preds) | set(gts)):
        p_cams, g_cams = preds.get(fid, {}), gts.get(fid, {})
        for cid in sorted(set(p_cams) | set(g_cams)):
            images.append((p_cams.get(cid, []), g_cams.get(cid, [])))
    res = average_precision_frames(images, consts, threshold)
    return {
        "schema_version": SCHEMA_VERSION,
        "ap": res.ap,
        "oks_threshold": res.threshold,
        "n_gt": res.n_gt,
        "n_pred": res.n_pred,
        "n_images": len(images),
        "pr_curve": [list(p) for p in res.pr_curve],
    }


# ---------------------------------------------------------------- triangulation and REBA


def triangulate_frames(frames: Sequence[KeypointFrame], cams, cfg: RunConfig) -> list[SkeletonFrame]:
    out = []
    for f in frames:
        dets = {cid: d for cid, d in f.cameras.items() if cid in {c.camera_id for c in cams}}
        n_det = sum(len(d) for d in dets.values())
        if n_det == 0:
            out.append(SkeletonFrame(f.frame_id, [], 0, 0))
            continue
        skels, groups, _ = geometry.triangulate_frame(dets, cams, cfg.tau_epi, cfg.tau_reproj,
                                                     cfg.c_min, f.frame_id)
        n_single = sum(1 for g in groups if len(g) < 2)
        out.append(SkeletonFrame(f.frame_id, skels, n_det, n_single))
    return out


def triangulate_file(keypoints_path, calib_path, out_path, cfg: RunConfig) -> list[SkeletonFrame]:
    cams, _ = parse_calibration_file(calib_path)
    frames = triangulate_frames(parse_keypoints_file(keypoints_path), cams, cfg)
    write_skeleton_file(frames, out_path)
    return frames


def unmatched_fraction(frames: Sequence[SkeletonFrame]) -> float:
    n = sum(f.n_detections for f in frames)
    return sum(f.n_unmatched for f in frames) / n if n else 0.0


def score_frames(frames: Sequence[SkeletonFrame], params: RebaParams = RebaParams(),
                 world: WorldConvention = WorldConvention()) -> list[RebaBreakdown]:
    out = []
    for f in frames:
        for s in f.skeletons:
            try:
                out.append(reba_score(s, params, world))
            except (MissingCoreJoints, NonFiniteAngle) as e:
                log.warning("frame %s person %s: not scored (%s)", f.frame_id, s.person_id, e)
    return out


def _mid_hip(s: Skeleton3D) -> np.ndarray:
    P = s.positions()
    return 0.5 * (P[KP.LEFT_HIP] + P[KP.RIGHT_HIP])


def align_people(reference: Sequence[Skeleton3D], candidates: Sequence[Skeleton3D],
                 max_dist: float = 0.3) -> list[Optional[int]]:
    """Index of the candidate closest (by mid-hip) to each reference skeleton, or None."""
    pairs = []
    for i, r in enumerate(reference):
        for j, c in enumerate(candidates):
            d = float(np.linalg.norm(_mid_hip(r) - _mid_hip(c)))
            if math.isfinite(d) and d <= max_dist:
                pairs.append((d, i, j))
    out: list[Optional[int]] = [None] * len(reference)
    used = set()
    for d, i, j in sorted(pairs):
        if out[i] is None and j not in used:
            out[i] = j
            used.add(j)
    return out


def reba_report(skeleton_path, out_csv, compare_path=None, params: RebaParams = RebaParams(),
                world: Optional[WorldConvention] = None) -> dict:
    """Score a skeleton file; with ``compare_path`` also diff against a second (obfuscated) run."""
    world = world or WorldConvention()
    frames = parse_skeleton_file(skeleton_path)
    breakdowns = score_frames(frames, params, world)
    dist = score_distribution(breakdowns)
    write_reba_report(breakdowns, out_csv, dist, unmatched_fraction(frames))
    out_csv = Path(out_csv)
    plotting.plot_reba_distribution(dist, out_csv.with_name(out_csv.stem + "_distribution.png"))
    summary = {"n_scored": len(breakdowns), "unmatched_fraction": unmatched_fraction(frames)}
    if compare_path is None:
        return summary
    other = {f.frame_id: f for f in parse_skeleton_file(compare_path)}
    orig_b, obf_b = [], []
    for f in frames:
        of = other.get(f.frame_id)
        cands = of.skeletons if of else []
        match = align_people(f.skeletons, cands)
        for s, j in zip(f.skeletons, match):
            try:
                ob = reba_score(s, params, world)
            except (MissingCoreJoints, NonFiniteAngle):
                continue
            fb = None
            if j is not None:
                try:
                    fb = reba_score(cands[j], params, world)
                except (MissingCoreJoints, NonFiniteAngle):
                    fb = None
            orig_b.append(ob)
            obf_b.append(fb)
    report = compare_breakdowns(orig_b, obf_b)
    write_delta_report(report, out_csv.with_name(out_csv.stem + "_compare.csv"))
    plotting.plot_reba_comparison(score_distribution(orig_b), score_distribution([b for b in obf_b if b]),
                                  report, out_csv.with_name(out_csv.stem + "_compare.png"))
    summary.update(exact_match_rate=report.exact_match_rate, same_category_rate=report.same_category_rate,
                   compare_unmatched_fraction=report.unmatched_fraction)
    return summary


# ---------------------------------------------------------------- synthetic end-to-end demo


def demo_synth(seed: int, n_frames: int, noise_px: float, out_dir, cfg: RunConfig = RunConfig(),
               max_people: int = 2) -> dict:
    """Synthetic 4-camera capture: generate, observe, match, triangulate, score, compare."""
    rng = np.random.default_rng(seed)
    cams = synth.ring_rig(4)
    out = Path(out_dir)
    kp_frames, gt_frames, postures = [], [], []
    for fi in range(n_frames):
        fid = f"{fi:05d}"
        n_people = int(rng.integers(1, max_people + 1))
        origins = _spread_origins(rng, n_people)
        gt_skels, per_cam = [], {c.camera_id: [] for c in cams}
        for pi, origin in enumerate(origins):
            posture = synth.random_posture(rng)
            pts = synth.posed_skeleton(posture, origin=origin, scale=rng.uniform(0.9, 1.1))
            gt_skels.append(synth.skeleton_from_points(pts, person_id=str(pi), frame_id=fid))
            for cid, pose in synth.observe(pts, cams, rng, noise_px, frame_id=fid).items():
                per_cam[cid].append(pose)
        for cid in per_cam:
            order = rng.permutation(len(per_cam[cid]))
            per_cam[cid] = [per_cam[cid][i] for i in order]
        kp_frames.append(KeypointFrame(fid, per_cam))
        gt_frames.append(SkeletonFrame(fid, gt_skels, 0, 0))

    write_calibration_file(cams, out / "calibration.json")
    write_keypoints_file(kp_frames, out / "keypoints.json")
    write_skeleton_file(gt_frames, out / "gt_skeletons.json")
    est_frames = triangulate_file(out / "keypoints.json", out / "calibration.json", out / "skeletons.json", cfg)

    gt_b = score_frames(gt_frames)
    write_reba_report(gt_b, out / "reba_gt.csv", score_distribution(gt_b))
    reba_report(out / "skeletons.json", out / "reba.csv")

    frame_agree = frame_cat_agree = 0
    gt_scores, est_scores = [], []
    for gf, ef in zip(gt_frames, est_frames):
        match = align_people(gf.skeletons, ef.skeletons)
        ok = ok_cat = True
        for g, j in zip(gf.skeletons, match):
            gb = reba_score(g)
            eb = None
            if j is not None:
                try:
                    eb = reba_score(ef.skeletons[j])
                except (MissingCoreJoints, NonFiniteAngle):
                    eb = None
            if eb is None:
                ok = ok_cat = False
                continue
            gt_scores.append(gb.reba)
            est_scores.append(eb.reba)
            ok &= gb.reba == eb.reba
            ok_cat &= gb.category == eb.category
        frame_agree += ok
        frame_cat_agree += ok_cat
    summary = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "frames": n_frames,
        "noise_px": noise_px,
        "reba_agreement": frame_agree / n_frames if n_frames else 1.0,
        "category_agreement": frame_cat_agree / n_frames if n_frames else 1.0,
        "unmatched_fraction": unmatched_fraction(est_frames),
    }
    dump_json(summary, out / "agreement.json")
    plotting.plot_agreement(gt_scores, est_scores, out / "agreement.png")
    return summary


def _spread_origins(rng: np.random.Generator, n: int, min_sep: float = 1.0) -> list[tuple[float, float]]:
    pts: list[tuple[float, float]] = []
    while len(pts) < n:
        p = tuple(rng.uniform(-0.7, 0.7, size=2))
        if all(math.dist(p, q) >= min_sep for q in pts):
            pts.append((float(p[0]), float(p[1])))
    return pts


# ---------------------------------------------------------------- GAP training


@dataclass
class GapRunConfig:
    gap: GapConfig = field(default_factory=GapConfig)
    n_train: int = 2000
    n_heldout: int = 400
    n_identities: int = 8
    image_size: int = 48
    data_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "GapRunConfig":
        d = dict(d)
        gap = GapConfig.from_dict(d.pop("gap", {}))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParseError(f"unknown gap-train config keys: {sorted(unknown)}")
        return cls(gap=gap, **d)


def gap_train(cfg: GapRunConfig, out_dir) -> dict:
    out = Path(out_dir)
    scenes = generate_dataset(cfg.n_train + cfg.n_heldout, cfg.n_identities, cfg.data_seed, cfg.image_size)
    train, held = scenes[: cfg.n_train], scenes[cfg.n_train:]
    T, clean = train_task_network(train, cfg.gap)
    O, logs = train_adversarial(train, T, cfg.gap)
    write_csv(out / "training_log.csv", ["epoch", "lr", "L_obf", "L_pose_term", "L_deobf_term"],
              [[r.epoch, r.lr, r.l_obf, r.l_pose, r.l_deobf] for r in logs])
    save_checkpoint(out / "obfuscator.ckpt", O, "obfuscator", image_size=cfg.image_size)
    save_checkpoint(out / "task.ckpt", T, "task", n_keypoints=N_STICK, image_size=cfg.image_size)
    rep = evaluate_privacy_utility(O, held, T, cfg.gap)
    result = {"schema_version": SCHEMA_VERSION, "task_val_rmse": clean, **asdict(rep),
              "alpha": cfg.gap.alpha, "epochs": cfg.gap.epochs}
    dump_json(_json_safe(result), out / "report.json")
    plotting.plot_training_log(logs, out / "training_curves.png")
    return result


def _json_safe(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


# ---------------------------------------------------------------- privacy/utility tradeoff


@dataclass
class TradeoffConfig:
    seed: int = 0
    n_images: int = 200
    n_identities: int = 8
    image_size: int = 48
    grids: dict = field(default_factory=lambda: {k: list(v) for k, v in filters.DEFAULT_GRIDS.items()})
    oks_threshold: float = 0.5
    kappa: float = STICK_KAPPA
    n_task_train: int = 2000
    task_epochs: int = 20
    task_checkpoint: Optional[str] = None
    obfuscator_checkpoint: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict, base: Optional[Path] = None) -> "TradeoffConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParseError(f"unknown tradeoff config keys: {sorted(unknown)}")
        cfg = cls(**d)
        for name in ("task_checkpoint", "obfuscator_checkpoint"):
            p = getattr(cfg, name)
            if p is not None and base is not None and not Path(p).is_absolute():
                setattr(cfg, name, str(base / p))
        return cfg


def _stick_gt(scene: SyntheticScene, size: int) -> GroundTruthPose:
    xy = scene.keypoints * size
    w, h = np.ptp(xy[:, 0]) + 4, np.ptp(xy[:, 1]) + 4
    return GroundTruthPose.from_arrays(xy, [2] * len(xy), float(w * h))


def tradeoff(cfg: TradeoffConfig) -> list[dict]:
    """Privacy (SSIM, PSNR) and utility (AP at the OKS threshold) per method and intensity.

    Utility is measured with the keypoint regressor standing in for the pose
    detector; a trained obfuscator checkpoint adds a ``gap`` row.
    """
    size = cfg.image_size
    if cfg.task_checkpoint:
        T, _ = load_model(cfg.task_checkpoint)
    else:
        train = generate_dataset(cfg.n_task_train, cfg.n_identities, cfg.seed + 1, size)
        T, _ = train_task_network(train, GapConfig(seed=cfg.seed, task_epochs=cfg.task_epochs,
                                                   task_target_rmse=0.0))
    scenes = generate_dataset(cfg.n_images, cfg.n_identities, cfg.seed, size)
    originals = [s.image for s in scenes]
    gts = [_stick_gt(s, size) for s in scenes]
    consts = OksConstants.uniform(cfg.kappa, N_STICK)

    def evaluate(method: str, intensity: float, images: Sequence[ImageBuffer]) -> dict:
        X = np.stack([im.data[:, :, 0] for im in images]).astype(np.float64)[:, None] / 255.0
        kp = predict(T, X).reshape(len(images), N_STICK, 2) * size
        frames = [([Pose2D.from_array(k)], [g]) for k, g in zip(kp, gts)]
        res = average_precision_frames(frames, consts, cfg.oks_threshold)
        return {
            "method": method,
            "intensity": float(intensity),
            "ssim": float(np.mean([ssim(a, b) for a, b in zip(originals, images)])),
            "psnr": _mean_psnr([psnr(a, b) for a, b in zip(originals, images)]),
            "ap50": res.ap,
            "n_images": len(images),
        }

    records = [evaluate("none", 0.0, originals)]
    for spec in filters.default_specs(cfg.seed, cfg.grids):
        records.append(evaluate(spec.method.value, spec.intensity,
                                [filters.apply(im, spec) for im in originals]))
    if cfg.obfuscator_checkpoint:
        O, _ = load_model(cfg.obfuscator_checkpoint)
        X, _ = to_batch(scenes)
        OX = predict(O, X)
        imgs = [ImageBuffer(np.floor(np.clip(o[0], 0, 1) * 255 + 0.5).astype(np.uint8)) for o in OX]
        records.append(evaluate("gap", 1.0, imgs))
    records.sort(key=lambda r: (r["method"], r["intensity"]))
    return records


TRADEOFF_COLUMNS = ("method", "intensity", "ssim", "psnr", "ap50", "n_images")


def write_tradeoff(records: Sequence[dict], out_csv) -> None:
    write_csv(out_csv, TRADEOFF_COLUMNS, [[r[c] for c in TRADEOFF_COLUMNS] for r in records],
              comments=["vif, lpips, semsim: not computed (require learned models)"])
    out_csv = Path(out_csv)
    plotting.plot_tradeoff(records, out_csv.with_suffix(".png"))


def load_json_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path}: no such file")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}") from e


