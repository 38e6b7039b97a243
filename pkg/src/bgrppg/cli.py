"""Command-line interface.

Exit codes: 0 success, 1 gradient check above threshold, 2 configuration
error, 3 data error, 4 training divergence.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .baselines import RgbTrace, chrom, pos
from .biose import BioseConfig
from .errors import ConfigError, DivergenceError, InputError, RppgError
from .spectral import BvpTrace, HrBand, hr_from_trace, metrics
from .stmap import (TARGET_FPS, VideoClip, build_background_stmap, build_face_stmap,
                    build_global_stmap, interpolate_to_25fps, region_partition)

OUT_ENV = "BGRPPG_OUT_DIR"
EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4
MAPS = ("face", "back", "glob")


def _out_dir(args):
    d = Path(args.out or os.environ.get(OUT_ENV) or "out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(out, command, config, seed, artifacts):
    blob = json.dumps(config, sort_keys=True).encode()
    _dump_json(out / f"manifest_{command}.json", {
        "command": command,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "config": config,
        "seed": seed,
        "artifacts": sorted(str(Path(a).relative_to(out)) if Path(a).is_relative_to(out) else str(a)
                            for a in artifacts),
    })


def _load_config(args):
    return io.load_config(args.config) if getattr(args, "config", None) else {}


def _biose_cfg(config):
    try:
        return BioseConfig(s_norm=config.get("s_norm", 100), n=config.get("n_starts", 4))
    except InputError as exc:
        raise ConfigError(str(exc)) from None


def _band(config):
    try:
        return HrBand(*config["band"]) if "band" in config else HrBand()
    except InputError as exc:
        raise ConfigError(str(exc)) from None


# corpus layout: <dir>/<clip>.{face,back,glob}.stm1 + <dir>/labels.csv

def write_corpus(directory, clips):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows, paths = [], []
    for c in clips:
        for name, m in zip(MAPS, (c.face, c.back, c.glob)):
            p = directory / f"{c.clip_id}.{name}.stm1"
            io.write_stm1(p, m)
            paths.append(p)
        rows.extend(io.label_rows(c.clip_id, c.bvp.samples, c.hr_bpm))
    io.write_labels(directory / "labels.csv", rows)
    return paths + [directory / "labels.csv"]


class CorpusClip:
    """A clip loaded back from disk; quacks like ``SynthClip`` for the pipeline."""

    def __init__(self, clip_id, face, back, glob, bvp, hr_bpm):
        self.clip_id, self.face, self.back, self.glob = clip_id, face, back, glob
        self.bvp = BvpTrace(bvp, face.fs)
        self.hr_bpm = hr_bpm


def read_corpus(directory):
    directory = Path(directory)
    labels = directory / "labels.csv"
    if not labels.exists():
        raise io.FormatError(f"{directory}: no labels.csv")
    out = []
    for cid, (bvp, hr) in io.group_labels(io.read_labels(labels)).items():
        maps = [io.read_stm1(directory / f"{cid}.{name}.stm1") for name in MAPS]
        out.append(CorpusClip(cid, *maps, bvp, hr))
    return out


def _scenarios(config, seed):
    from . import synth
    if "scenarios" in config:
        return [synth.SynthScenario.from_dict(d) for d in config["scenarios"]]
    bench = config.get("benchmark", {"kind": "clean"})
    n = bench.get("n", 50 if bench["kind"] == "clean" else 100)
    if bench["kind"] == "clean":
        return synth.clean_scenarios(n, seed)
    extra = {k: bench[k] for k in ("ratio", "noise_std") if k in bench}
    return synth.interference_scenarios(n, seed, **extra)


def cmd_synth(args):
    from . import synth
    config = _load_config(args)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    if args.kind:
        config = dict(config, benchmark={"kind": args.kind, **({"n": args.n} if args.n else {})})
    try:
        scenarios = _scenarios(config, seed)
    except TypeError as exc:
        raise ConfigError(f"bad scenario: {exc}") from None
    out = _out_dir(args)
    ratio = config.get("split_ratio", 0.75)
    if args.no_split:
        train, test = [synth.gen_clip(s, f"clip{i:04d}") for i, s in enumerate(scenarios)], []
    else:
        train, test = synth.gen_dataset(scenarios, ratio, seed)
    artifacts = write_corpus(out / "train", train)
    if test:
        artifacts += write_corpus(out / "test", test)
    _write_manifest(out, "synth", config, seed, artifacts)
    print(f"wrote {len(train)} train / {len(test)} test clips to {out}")
    return EXIT_OK


def resample_landmarks(lm, fps):
    """Linear resampling of (T, 68, 2) landmarks onto the 25 fps timeline."""
    if fps == TARGET_FPS:
        return lm
    n_out = max(int(round(len(lm) * TARGET_FPS / fps)), 2)
    t = np.minimum(np.arange(n_out) * (fps / TARGET_FPS), len(lm) - 1)
    i0 = np.floor(t).astype(int)
    i1 = np.minimum(i0 + 1, len(lm) - 1)
    w = (t - i0)[:, None, None]
    return (1 - w) * lm[i0] + w * lm[i1]


def cmd_build_stmap(args):
    frames_dir = Path(args.frames)
    files = sorted(frames_dir.glob("*.ppm"))
    if not files:
        raise io.FormatError(f"{frames_dir}: no .ppm frames")
    clip = VideoClip(np.stack([io.read_ppm(f) for f in files]), args.fps)
    lm = io.read_landmarks(args.landmarks)
    if len(lm) not in (1, clip.n_frames):
        raise io.FormatError(f"{args.landmarks}: {len(lm)} landmark rows for {clip.n_frames} frames")
    if len(lm) > 1:
        lm = resample_landmarks(lm, clip.fps)
    clip = interpolate_to_25fps(clip)
    part = region_partition(lm, clip.frames.shape[1:3])
    out = _out_dir(args)
    maps = (build_face_stmap(clip, part), build_background_stmap(clip, part), build_global_stmap(clip))
    paths = []
    for name, m in zip(MAPS, maps):
        p = out / f"{args.name}.{name}.stm1"
        io.write_stm1(p, m)
        paths.append(p)
    _write_manifest(out, "build-stmap", {"frames": str(frames_dir), "landmarks": str(args.landmarks),
                                          "fps": args.fps}, None, paths)
    print(f"wrote {', '.join(p.name for p in paths)}")
    return EXIT_OK


def _train_cfg(config, seed):
    from .net.train import TrainConfig
    kw = dict(config.get("train", {}))
    if "band" in config:
        kw["band"] = tuple(config["band"])
    try:
        return TrainConfig(seed=seed, **kw)
    except (InputError, TypeError, ValueError) as exc:
        raise ConfigError(f"train section: {exc}") from None


def cmd_train(args):
    from .net import checkpoint
    from .net.train import log_lines, make_sample, train
    config = _load_config(args)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    if args.epochs:
        config.setdefault("train", {})["epochs"] = args.epochs
    cfg = _train_cfg(config, seed)
    bcfg = _biose_cfg(config)
    samples = [make_sample(c, bcfg) for c in read_corpus(args.corpus)]
    out = _out_dir(args)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as fh:
        def log(rec):
            fh.write(log_lines([rec]))
            fh.flush()
            if args.verbose:
                print(f"epoch {rec['epoch']:3d}  l_total {rec['l_total']:.5f}", file=sys.stderr)
        model, _ = train(samples, cfg, log=log)
    ckpt = out / "model.pgck"
    checkpoint.save(ckpt, model)
    _write_manifest(out, "train", config, seed, [ckpt, log_path])
    print(f"wrote {ckpt}")
    return EXIT_OK


def write_per_clip(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clip_id", "hr_gt", "hr_pred"])
        for r in rows:
            w.writerow([r["clip_id"], f"{r['hr_gt']:.12g}", f"{r['hr_pred']:.12g}"])


def read_per_clip(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"hr_gt", "hr_pred"} <= set(reader.fieldnames):
            raise io.FormatError(f"{path}: expected columns clip_id, hr_gt, hr_pred")
        return [{"clip_id": r["clip_id"], "hr_gt": float(r["hr_gt"]), "hr_pred": float(r["hr_pred"])}
                for r in reader]


def _emit_metrics(out, stem, rows, report, command, config, seed, extra=()):
    mpath, cpath = out / f"{stem}_metrics.json", out / f"{stem}_per_clip.csv"
    _dump_json(mpath, report.to_dict())
    write_per_clip(cpath, rows)
    _write_manifest(out, command, config, seed, [mpath, cpath, *extra])
    print(json.dumps(report.to_dict(), sort_keys=True))


def cmd_eval(args):
    from .net import checkpoint
    from .net.train import evaluate, make_sample
    config = _load_config(args)
    model = checkpoint.load(args.checkpoint)
    samples = [make_sample(c, _biose_cfg(config)) for c in read_corpus(args.corpus)]
    rows, report = evaluate(model, samples, _band(config))
    config = dict(config, checkpoint=hashlib.sha256(Path(args.checkpoint).read_bytes()).hexdigest())
    _emit_metrics(_out_dir(args), "eval", rows, report, "eval", config, None)
    return EXIT_OK


METHODS = {
    "chrom": lambda c: chrom(RgbTrace.from_face_map(c.face)),
    "pos": lambda c: pos(RgbTrace.from_face_map(c.face)),
    "raw": lambda c: c.face.data[0].mean(axis=0),
}


def cmd_baseline(args):
    config = _load_config(args)
    band = _band(config)
    rows = []
    for c in read_corpus(args.corpus):
        trace = METHODS[args.method](c)
        rows.append({"clip_id": c.clip_id, "hr_gt": c.hr_bpm,
                     "hr_pred": hr_from_trace(trace, c.face.fs, band)})
    report = metrics([r["hr_pred"] for r in rows], [r["hr_gt"] for r in rows])
    _emit_metrics(_out_dir(args), args.method, rows, report, "baseline",
                  dict(config, method=args.method), None)
    return EXIT_OK


def cmd_gradcheck(args):
    from .net.train import gradcheck_suite
    seeds = range(args.seed, args.seed + args.n_seeds)
    per_seed = {str(s): gradcheck_suite(s, eps=args.eps, n_coords=args.n_coords) for s in seeds}
    worst = max(v for d in per_seed.values() for v in d.values())
    report = {"eps": args.eps, "n_coords": args.n_coords, "threshold": args.threshold,
              "max_rel_err": worst, "per_seed": per_seed, "passed": worst < args.threshold}
    out = _out_dir(args)
    path = out / "gradcheck.json"
    _dump_json(path, report)
    _write_manifest(out, "gradcheck", {"eps": args.eps, "n_coords": args.n_coords,
                                       "n_seeds": args.n_seeds}, args.seed, [path])
    print(json.dumps({"max_rel_err": worst, "passed": report["passed"]}))
    return EXIT_OK if report["passed"] else EXIT_GRADCHECK


def cmd_plot(args):
    from .plotting import plot_hr
    rows = read_per_clip(args.per_clip)
    out = _out_dir(args)
    path = out / args.name
    plot_hr(rows, path, title=args.title)
    digest = hashlib.sha256(Path(args.per_clip).read_bytes()).hexdigest()
    _write_manifest(out, "plot", {"per_clip": digest, "title": args.title}, None, [path])
    print(f"wrote {path}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="bgrppg", description="Background-aware remote heart-rate estimation")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./out)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic STM1 corpus")
    s.add_argument("--config")
    s.add_argument("--kind", choices=("clean", "interference"))
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--no-split", action="store_true", help="write every clip to train/")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build-stmap", help="PPM frames + landmarks -> STM1 triple")
    s.add_argument("--frames", required=True, help="directory of .ppm frames")
    s.add_argument("--landmarks", required=True, help="CSV, one row of 136 values per frame")
    s.add_argument("--fps", type=float, default=TARGET_FPS)
    s.add_argument("--name", default="clip")
    s.set_defaults(func=cmd_build_stmap)

    s = sub.add_parser("train", help="train the disentanglement model")
    s.add_argument("--corpus", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("baseline", help="CHROM / POS / raw-mean heart rate on a corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--method", choices=sorted(METHODS), default="pos")
    s.add_argument("--config")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-seeds", type=int, default=1)
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--n-coords", type=int, default=200)
    s.add_argument("--threshold", type=float, default=1e-3)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("plot", help="per-clip CSV -> SVG of predicted vs reference HR")
    s.add_argument("--per-clip", required=True)
    s.add_argument("--name", default="hr.svg")
    s.add_argument("--title", default="")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (RppgError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
