"""``ergopipe`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import filters, pipeline
from .core import ErgoError, MissingFile, WorldConvention
from .io import dump_json, write_csv

log = logging.getLogger("ergopipe")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _positive(v: str) -> float:
    x = float(v)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return x


def _existing_file(v: str) -> Path:
    p = Path(v)
    if not p.is_file():
        raise MissingFile(f"{p}: no such file")
    return p


def _existing_dir(v: str) -> Path:
    p = Path(v)
    if not p.is_dir():
        raise MissingFile(f"{p}: no such directory")
    return p


def cmd_obfuscate(a) -> None:
    spec = filters.FilterSpec(filters.Method(a.method), a.intensity, a.seed)
    rows = pipeline.obfuscate_dir(_existing_dir(a.in_dir), Path(a.out), spec)
    log.info("wrote %d images to %s", len(rows), a.out)


def cmd_privacy_eval(a) -> None:
    rows = pipeline.privacy_eval_dirs(_existing_dir(a.orig), _existing_dir(a.obf))
    write_csv(a.out, ["image_id", "ssim", "psnr"], rows,
              comments=["vif, lpips, semsim: not computed (require learned models)"])


def cmd_kp_eval(a) -> None:
    res = pipeline.kp_eval(_existing_file(a.pred), _existing_file(a.gt), a.oks_threshold)
    dump_json(res, a.out)
    log.info("AP@%.2f = %.4f", a.oks_threshold, res["ap"])


def cmd_triangulate(a) -> None:
    cfg = pipeline.RunConfig(c_min=a.c_min, tau_epi=a.tau_epi, tau_reproj=a.tau_reproj)
    frames = pipeline.triangulate_file(_existing_file(a.keypoints), _existing_file(a.calib), a.out, cfg)
    log.info("%d frames, %d skeletons", len(frames), sum(len(f.skeletons) for f in frames))


def cmd_reba(a) -> None:
    compare = _existing_file(a.compare) if a.compare else None
    world = WorldConvention(tuple(a.up_axis))
    summary = pipeline.reba_report(_existing_file(a.skeletons), a.out, compare, world=world)
    log.info("%s", summary)


def cmd_tradeoff(a) -> None:
    path = _existing_file(a.config)
    cfg = pipeline.TradeoffConfig.from_dict(pipeline.load_json_config(path), base=path.parent)
    pipeline.write_tradeoff(pipeline.tradeoff(cfg), a.out)


def cmd_gap_train(a) -> None:
    cfg = pipeline.GapRunConfig.from_dict(pipeline.load_json_config(_existing_file(a.config)))
    res = pipeline.gap_train(cfg, a.out)
    log.info("task rmse %.4f (clean %.4f), adversary mse %.4f", res["task_rmse"], res["clean_rmse"],
             res["adversary_mse"])


def cmd_demo_synth(a) -> None:
    if a.frames < 1:
        raise ValueError("--frames must be >= 1")
    summary = pipeline.demo_synth(a.seed, a.frames, a.noise_px, a.out)
    log.info("REBA agreement %.3f, category agreement %.3f", summary["reba_agreement"],
             summary["category_agreement"])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergopipe", description="Privacy-aware multi-view ergonomic assessment.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("obfuscate", help="apply a classic filter to every image in a directory")
    s.add_argument("--method", required=True, choices=[m.value for m in filters.Method])
    s.add_argument("--intensity", required=True, type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_obfuscate)

    s = sub.add_parser("privacy-eval", help="SSIM and PSNR between original and obfuscated images")
    s.add_argument("--orig", required=True)
    s.add_argument("--obf", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_privacy_eval)

    s = sub.add_parser("kp-eval", help="COCO-style keypoint AP")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--oks-threshold", type=_positive, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_kp_eval)

    s = sub.add_parser("triangulate", help="match detections across views and triangulate skeletons")
    s.add_argument("--keypoints", required=True)
    s.add_argument("--calib", required=True)
    s.add_argument("--tau-epi", type=_positive, default=pipeline.geometry.TAU_EPI)
    s.add_argument("--tau-reproj", type=_positive, default=pipeline.geometry.TAU_REPROJ)
    s.add_argument("--c-min", type=_positive, default=pipeline.DEFAULT_C_MIN)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_triangulate)

    s = sub.add_parser("reba", help="score skeletons and write the REBA report")
    s.add_argument("--skeletons", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--compare", help="second skeleton file (e.g. from obfuscated frames)")
    s.add_argument("--up-axis", type=float, nargs=3, default=(0.0, 0.0, 1.0))
    s.set_defaults(func=cmd_reba)

    s = sub.add_parser("tradeoff", help="privacy/utility sweep over filters on the synthetic corpus")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tradeoff)

    s = sub.add_parser("gap-train", help="train the adversarial obfuscator")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gap_train)

    s = sub.add_parser("demo-synth", help="synthetic end-to-end run with known ground truth")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=50)
    s.add_argument("--noise-px", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_demo_synth)
    return p


def _setup_logging() -> None:
    level = os.environ.get("ERGOPIPE_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ErgoError, ValueError, OSError) as e:
        record = {"error": type(e).__name__, "message": str(e), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
