"""Command line: ``cleavetrack <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import pipeline
from .config import ConfigError, PipelineConfig, load_config
from .generation import MissingEmbeddingError
from .io import (
    DataError,
    ensure_parent,
    read_detections,
    read_embeddings,
    read_gt,
    read_tracks,
    write_detections,
    write_embeddings,
    write_results,
)
from .seqnet import WeightFormatError

log = logging.getLogger("cleavetrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _versions() -> dict[str, str]:
    from . import kernels

    out = {"python": platform.python_version(), "numpy": np.__version__, "backend": kernels.backend()}
    try:
        from importlib.metadata import version

        out["cleavetrack"] = version("cleavetrack")
    except Exception:
        out["cleavetrack"] = "unknown"
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:
        pass
    return out


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, cfg: PipelineConfig, inputs: dict, outputs: dict, extra: dict | None = None):
    """JSON record of a run: command, config hash and text, seed, versions, file hashes."""
    doc = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.dumps(),
        "seed": cfg.seed,
        "versions": _versions(),
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in inputs.items() if v},
        "outputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in outputs.items() if v},
    }
    if extra:
        doc.update(extra)
    ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest_path(out: str) -> str:
    return os.path.join(out, "manifest.json") if os.path.isdir(out) else out + ".manifest.json"


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError(f"{args.command}: missing required flag(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _model(path):
    from .seqnet import load_model

    return load_model(path)


def _motion(cfg: PipelineConfig):
    if cfg.motion != "recurrent":
        return None
    from .seqnet import load_weights

    return load_weights(cfg.motion_weights)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(args, cfg: PipelineConfig) -> int:
    from .synth import SceneSpec, generate_scene, oracle_embeddings
    from .core import Tracklet

    _need(args, "out")
    spec = SceneSpec(
        n_identities=cfg.scene_identities,
        n_frames=cfg.scene_frames,
        width=cfg.image_width,
        height=cfg.image_height,
        miss_rate=cfg.scene_miss_rate,
        jitter=cfg.scene_jitter,
        n_random_crossings=cfg.scene_crossings,
        seed=cfg.seed,
    )
    scene = generate_scene(spec)
    emb = oracle_embeddings(scene, cfg.embedding_dim, cfg.sigma_e, seed=cfg.seed, occlusion=cfg.scene_occlusion)
    os.makedirs(args.out, exist_ok=True)
    paths = {k: os.path.join(args.out, f"{k}.txt") for k in ("det", "gt", "emb")}
    write_detections(scene.detections, paths["det"])
    write_results([Tracklet(k, v) for k, v in sorted(scene.gt_tracks().items())], paths["gt"])
    write_embeddings(emb, paths["emb"])
    write_manifest(_manifest_path(args.out), "synth", cfg, {}, paths, {"crossings": scene.crossings})
    print(f"wrote {len(scene.detections)} detections, {spec.n_identities} tracks, {len(scene.crossings)} crossings to {args.out}")
    return EXIT_OK


def cmd_track(args, cfg) -> int:
    _need(args, "dets", "embeddings", "out")
    out = pipeline.track(read_detections(args.dets), read_embeddings(args.embeddings), cfg, _motion(cfg))
    ensure_parent(args.out)
    write_results(out, args.out)
    write_manifest(_manifest_path(args.out), "track", cfg, {"dets": args.dets, "embeddings": args.embeddings}, {"tracks": args.out})
    print(f"{len(out)} tracklets -> {args.out}")
    return EXIT_OK


def cmd_cleave(args, cfg) -> int:
    _need(args, "tracks", "embeddings", "weights", "out")
    tr = read_tracks(args.tracks)
    out = pipeline.cleave(tr, read_embeddings(args.embeddings), _model(args.weights), cfg)
    ensure_parent(args.out)
    write_results(out, args.out)
    inputs = {"tracks": args.tracks, "embeddings": args.embeddings, "weights": args.weights}
    write_manifest(_manifest_path(args.out), "cleave", cfg, inputs, {"tracks": args.out})
    print(f"{len(tr)} tracklets cleaved into {len(out)} -> {args.out}")
    return EXIT_OK


def cmd_associate(args, cfg) -> int:
    _need(args, "tracks", "embeddings", "weights", "out")
    tr = read_tracks(args.tracks)
    out = pipeline.reconnect(tr, read_embeddings(args.embeddings), _model(args.weights), cfg)
    ensure_parent(args.out)
    write_results(out, args.out)
    inputs = {"tracks": args.tracks, "embeddings": args.embeddings, "weights": args.weights}
    write_manifest(_manifest_path(args.out), "associate", cfg, inputs, {"tracks": args.out})
    print(f"{len(tr)} tracklets associated into {len(out)} trajectories -> {args.out}")
    return EXIT_OK


def cmd_run(args, cfg) -> int:
    _need(args, "dets", "embeddings", "weights", "out")
    emb = read_embeddings(args.embeddings)
    out = pipeline.run(read_detections(args.dets), emb, _model(args.weights), cfg, _motion(cfg))
    ensure_parent(args.out)
    write_results(out, args.out)
    inputs = {"dets": args.dets, "embeddings": args.embeddings, "weights": args.weights}
    write_manifest(_manifest_path(args.out), "run", cfg, inputs, {"tracks": args.out})
    print(f"{len(out)} trajectories -> {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from .metrics import evaluate

    _need(args, "gt", "tracks")
    rep = evaluate(read_gt(args.gt), read_tracks(args.tracks), cfg.iou_min)
    sys.stdout.write(rep.to_text())
    if args.out:
        ensure_parent(args.out)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(rep.to_csv())
        write_manifest(_manifest_path(args.out), "eval", cfg, {"gt": args.gt, "tracks": args.tracks}, {"report": args.out})
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    from .learn import gradcheck

    t0 = time.perf_counter()
    res = gradcheck(n_points=args.points, seed=cfg.seed, weights=cfg.loss())
    dt = time.perf_counter() - t0
    for term, err in res.per_term.items():
        print(f"{term:>14}  {err:.3e}")
    ok = res.max_rel_error < GRADCHECK_TOL
    print(f"max relative error {res.max_rel_error:.3e} over {res.n_points} points ({dt:.1f} s): {'ok' if ok else 'FAIL'}")
    if args.out:
        ensure_parent(args.out)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("term,max_rel_error\n")
            for term, err in res.per_term.items():
                fh.write(f"{term},{err!r}\n")
        write_manifest(_manifest_path(args.out), "gradcheck", cfg, {}, {"report": args.out})
    return EXIT_OK if ok else EXIT_CHECK


def cmd_train_toy(args, cfg) -> int:
    from .cleave import calibrate_split_thresh
    from .seqnet import save_model

    _need(args, "out")

    def progress(epoch, loss):
        log.info("epoch %d  mean loss %.6f", epoch + 1, loss)

    model, curve = pipeline.train_model(cfg, progress)
    ensure_parent(args.out)
    save_model(model, args.out)
    curve_path = args.out + ".loss.csv"
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_loss\n")
        for k, v in enumerate(curve, 1):
            fh.write(f"{k},{v!r}\n")
    extra = {"final_mean_loss": curve[-1], "initial_mean_loss": curve[0]}
    if not args.no_calibrate:
        th = calibrate_split_thresh(model, d=cfg.embedding_dim, sigma_e=cfg.sigma_e, seed=cfg.seed + 1000)
        extra["split_thresh"] = th
        print(f"calibrated split_thresh = {th!r}")
    write_manifest(_manifest_path(args.out), "train-toy", cfg, {}, {"weights": args.out, "loss_curve": curve_path}, extra)
    print(f"trained {len(curve)} epochs, mean loss {curve[0]:.4f} -> {curve[-1]:.4f}; weights -> {args.out}")
    return EXIT_OK


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic scene (detections, ground truth, embeddings)"),
    "track": (cmd_track, "tracklet generation"),
    "cleave": (cmd_cleave, "split identity-impure tracklets"),
    "associate": (cmd_associate, "re-connect tracklets, gap fill and smooth"),
    "run": (cmd_run, "track, cleave and associate in one process"),
    "eval": (cmd_eval, "CLEAR-MOT and IDF1 metrics against ground truth"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the training gradients"),
    "train-toy": (cmd_train_toy, "train the sequence model on synthetic tracklets"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cleavetrack", description="Tracklet generation, cleaving and re-connection.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="flat key = value config file")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--out", help="output file (directory for synth)")
        if name in ("track", "run"):
            s.add_argument("--dets", help="detections CSV")
        if name in ("track", "cleave", "associate", "run"):
            s.add_argument("--embeddings", help="embedding table")
        if name in ("cleave", "associate", "run"):
            s.add_argument("--weights", help="sequence model weight file")
        if name in ("cleave", "associate", "eval"):
            s.add_argument("--tracks", help="tracks CSV")
        if name == "eval":
            s.add_argument("--gt", help="ground-truth CSV")
        if name == "gradcheck":
            s.add_argument("--points", type=int, default=100)
        if name == "train-toy":
            s.add_argument("--no-calibrate", action="store_true", help="skip the split threshold calibration")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = _config(args)
        return COMMANDS[args.command][0](args, cfg)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, MissingEmbeddingError, WeightFormatError, OSError, ValueError) as e:
        print(f"cleavetrack: {e}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as e:  # --help
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(main())
