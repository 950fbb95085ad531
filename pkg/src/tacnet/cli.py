"""Command-line entry point: ``tacnet {gen-data,train,attend,eval,ablate}``."""

import argparse
import csv
import os
import sys

import numpy as np

from . import io
from .attention import tile_and_stitch
from .persistence import critical_point_map
from .pipeline import (METRIC_NAMES, TrainConfig, evaluate, make_samples,
                       params_from_tensors, params_to_tensors, predict_slice,
                       run_ablation, split_centers, train)
from .synthetic import SyntheticSpec, gen_data, load_dataset


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _configs(args):
    raw = io.load_config(args.config)
    train_cfg = io.apply_config(TrainConfig, raw, seed=args.seed)
    return raw, train_cfg


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def cmd_gen_data(args):
    raw = io.load_config(args.config)
    spec = io.apply_config(SyntheticSpec, raw, seed=args.seed)
    gen_data(spec, args.out)


def cmd_train(args):
    _, cfg = _configs(args)
    params = None
    if args.stage == "tacnet":
        ckpt = args.checkpoint or os.path.join(args.out, "backbone.tacl")
        if not os.path.isfile(ckpt):
            raise CliError(f"stage tacnet needs a backbone checkpoint, {ckpt} not found")
        params = params_from_tensors(io.read_checkpoint(ckpt))
    image, membrane, _ = load_dataset(args.data)
    train_c, _ = split_centers(len(image), cfg.train_fraction)
    data = make_samples(image, membrane, train_c, cfg.slice_count, cfg.sample_patch)
    os.makedirs(args.out, exist_ok=True)
    params, history = train(cfg, data, params, stage=args.stage)
    io.write_checkpoint(os.path.join(args.out, f"{args.stage}.tacl"),
                        params_to_tensors(params, cfg))
    _write_csv(os.path.join(args.out, f"{args.stage}.history.csv"),
               ["epoch", "stage", "lr", "loss"],
               [(e, s, repr(lr), repr(loss)) for e, s, lr, loss in history])


def _read_volume(path):
    if os.path.isdir(path):
        return load_dataset(path)[0]
    vol = io.read_tensor(path).astype(np.float64)
    if vol.ndim == 2:
        vol = vol[None]
    if vol.ndim != 3:
        raise CliError(f"expected a (D, H, W) volume, got rank {vol.ndim}")
    return vol


def cmd_attend(args):
    _, cfg = _configs(args)
    tensors = io.read_checkpoint(args.checkpoint)
    params = params_from_tensors(tensors)
    if "meta.patch" in tensors:
        cfg.patch = int(tensors["meta.patch"])
    if "meta.slice_count" in tensors:
        cfg.slice_count = int(tensors["meta.slice_count"])
    volume = _read_volume(args.input)
    _, h, w = volume.shape
    if cfg.patch > min(h, w):
        raise CliError(f"input slices {h}x{w} are smaller than the checkpoint patch {cfg.patch}")
    slices = range(len(volume)) if args.slices is None else \
        [int(s) for s in args.slices.split(",")]
    os.makedirs(args.out, exist_ok=True)
    for z in slices:
        if not 0 <= z < len(volume):
            raise CliError(f"slice {z} outside volume of depth {len(volume)}")
        p, o, p_hat, _ = predict_slice(params, volume, z, cfg)
        cp = tile_and_stitch(p, cfg.patch, lambda t: critical_point_map(
            t[0], cfg.epsilon, cfg.sigma))[0]
        for name, arr in (("p", p), ("cp", cp), ("o", o), ("phat", p_hat)):
            stem = os.path.join(args.out, f"{name}_{z:03d}")
            io.write_tensor(stem + ".tact", arr)
            io.write_pgm(stem + ".pgm", arr)
        io.write_ppm(os.path.join(args.out, f"overlay_{z:03d}.ppm"), io.overlay_rgb(p_hat, o))


def cmd_eval(args):
    _, cfg = _configs(args)
    pred = io.read_tensor(args.pred).astype(np.float64)
    gt = io.read_tensor(args.gt) > 0.5
    if pred.shape != gt.shape:
        raise CliError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    scores = evaluate(pred, gt, cfg, seed=cfg.seed)
    _write_csv(args.out, ["metric", "value", "stddev"],
               [(m, _fmt(scores[m][0]), _fmt(scores[m][1])) for m in METRIC_NAMES])


def cmd_ablate(args):
    raw, cfg = _configs(args)
    image, membrane, _ = load_dataset(args.data)
    counts = tuple(int(s) for s in raw.get("slice_counts", "1,3,5").split(","))
    rows, timings = run_ablation(cfg, image, membrane, counts)
    header = ["model", "slices"]
    for m in METRIC_NAMES:
        header += [m, f"{m}_std"]
    out = []
    for r in rows:
        line = [r["model"], r["slices"]]
        for m in METRIC_NAMES:
            line += [_fmt(r[m][0]), _fmt(r[m][1])]
        out.append(line)
    _write_csv(args.out, header, out)
    stem, _ = os.path.splitext(args.out)
    _write_csv(stem + ".timing.csv", ["model", "slices", "seconds_per_epoch"],
               [(t["model"], t["slices"], f"{t['seconds_per_epoch']:.4f}") for t in timings])


def build_parser():
    parser = _Parser(prog="tacnet", description="Topology-attention segmentation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", required=True, help="output path")
        return p

    p = common(sub.add_parser("gen-data", help="write a synthetic dataset"))
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("train", help="train one stage"))
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--stage", choices=("backbone", "tacnet"), default="backbone")
    p.add_argument("--checkpoint", help="backbone checkpoint for --stage tacnet")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("attend", help="export attention maps"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="image volume (.tact) or dataset directory")
    p.add_argument("--slices", help="comma-separated centre slices (default: all)")
    p.set_defaults(func=cmd_attend)

    p = common(sub.add_parser("eval", help="score a probability volume"))
    p.add_argument("--pred", required=True, help="probability volume (.tact)")
    p.add_argument("--gt", required=True, help="ground-truth membrane volume (.tact)")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("ablate", help="model x slice-count comparison"))
    p.add_argument("--data", required=True, help="dataset directory")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except KeyboardInterrupt:
        print("tacnet: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # every failure becomes one diagnostic line
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"tacnet: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
