"""Small on-disk inputs for every CLI subcommand, shared by the CLI and acceptance tests."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ergopipe import synth
from ergopipe.cli import main
from ergopipe.core import GroundTruthPose, ImageBuffer
from ergopipe.gap.checkpoint import save_checkpoint
from ergopipe.gap.data import N_STICK
from ergopipe.gap.nets import TaskNet
from ergopipe.imageio import write_image
from ergopipe.io import KeypointFrame, write_calibration_file, write_keypoints_file


def build_inputs(root: Path) -> dict:
    root = Path(root)
    rng = np.random.default_rng(3)
    imgs = root / "images"
    for i in range(3):
        yy, xx = np.mgrid[0:40, 0:56]
        base = (xx * 3 + yy * 2 + 40 * i) % 256
        img = np.clip(base + rng.normal(0, 10, base.shape), 0, 255).astype(np.uint8)
        write_image(imgs / f"img{i}.png", ImageBuffer(img))
    write_image(imgs / "sub" / "rgb.ppm", ImageBuffer(rng.integers(0, 256, (24, 32, 3), dtype=np.uint8)))

    cams = synth.ring_rig(4)
    write_calibration_file(cams, root / "calib.json")
    frames, gt_frames = [], []
    for f in range(3):
        posture = synth.random_posture(rng)
        pts = synth.posed_skeleton(posture, origin=(0.2 * f, 0.0))
        obs = synth.observe(pts, cams, rng, 0.5, frame_id=str(f), score=0.9)
        frames.append(KeypointFrame(str(f), {cid: [p] for cid, p in obs.items()}))
        gts = {}
        for cid, p in obs.items():
            xy = p.xy()
            area = float(np.ptp(xy[:, 0]) * np.ptp(xy[:, 1]))
            gts[cid] = [GroundTruthPose.from_arrays(xy, [2] * len(xy), area, camera_id=cid, frame_id=str(f))]
        gt_frames.append(KeypointFrame(str(f), gts))
    write_keypoints_file(frames, root / "keypoints.json")
    write_keypoints_file(gt_frames, root / "gt.json")

    T = TaskNet(N_STICK, 48, seed=0)
    save_checkpoint(root / "task.ckpt", T, "task", n_keypoints=N_STICK, image_size=48)
    (root / "tradeoff.json").write_text(json.dumps({
        "seed": 0, "n_images": 12, "task_checkpoint": "task.ckpt",
        "grids": {"blur": [1.0, 4.0], "noise": [10.0, 40.0], "pixelate": [4, 8]},
    }))
    (root / "gap.json").write_text(json.dumps({
        "n_train": 24, "n_heldout": 8, "data_seed": 1,
        "gap": {"epochs": 1, "task_epochs": 1, "task_fail_rmse": 10.0, "adversary_epochs": 1},
    }))
    return {
        "root": root, "images": imgs, "calib": root / "calib.json", "keypoints": root / "keypoints.json",
        "gt": root / "gt.json", "tradeoff": root / "tradeoff.json", "gap": root / "gap.json",
    }


def run_all(inp: dict, out: Path) -> dict[str, int]:
    """Run every subcommand once, writing below ``out``. Returns exit codes by subcommand."""
    out = Path(out)
    s = lambda p: str(p)
    codes = {
        "obfuscate": main(["obfuscate", "--method", "noise", "--intensity", "20", "--seed", "4",
                           "--in", s(inp["images"]), "--out", s(out / "obf")]),
    }
    codes["privacy-eval"] = main(["privacy-eval", "--orig", s(inp["images"]), "--obf", s(out / "obf"),
                                  "--out", s(out / "privacy.csv")])
    codes["kp-eval"] = main(["kp-eval", "--pred", s(inp["keypoints"]), "--gt", s(inp["gt"]),
                             "--out", s(out / "ap.json")])
    codes["triangulate"] = main(["triangulate", "--keypoints", s(inp["keypoints"]), "--calib", s(inp["calib"]),
                                 "--out", s(out / "skeletons.json")])
    codes["reba"] = main(["reba", "--skeletons", s(out / "skeletons.json"), "--out", s(out / "reba.csv"),
                          "--compare", s(out / "skeletons.json")])
    codes["tradeoff"] = main(["tradeoff", "--config", s(inp["tradeoff"]), "--out", s(out / "tradeoff.csv")])
    codes["gap-train"] = main(["gap-train", "--config", s(inp["gap"]), "--out", s(out / "gap")])
    codes["demo-synth"] = main(["demo-synth", "--seed", "2", "--frames", "4", "--out", s(out / "demo")])
    return codes


def tree_bytes(root: Path) -> dict[str, bytes]:
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
