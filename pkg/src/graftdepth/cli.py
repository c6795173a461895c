"""Command-line entry point: data generation, hints, training, evaluation and inference."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("graftdepth")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(value, typ):
    if isinstance(value, typ):
        return value
    if typ is bool:
        v = str(value).lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return typ(value)


def build_train_config(args):
    from .train import TrainConfig

    types = TrainConfig.field_types()
    values = {}
    if args.config:
        for key, value in parse_config_file(args.config).items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _coerce(value, types[key])
    for key in types:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = _coerce(v, types[key])
    return TrainConfig(**values)


def _add_train_options(p):
    p.add_argument("--config", help="key = value file; command-line options override it")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--label-mode", dest="label_mode", choices=("separate", "combined"))
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--no-graft", dest="grafting", action="store_const", const=False)
    p.add_argument("--no-distill", dest="self_distill", action="store_const", const=False)
    p.add_argument("--no-encoder-scales", dest="encoder_scales", action="store_const", const=False)
    p.add_argument("--no-hints", dest="hints", action="store_const", const=False)
    p.add_argument("--no-prefetch", dest="prefetch", action="store_const", const=False)


def _add_eval_options(p):
    p.add_argument("--cap", type=float, default=80.0, help="max depth in meters")
    p.add_argument("--median-scaling", action="store_true")
    p.add_argument("--garg-crop", action="store_true")
    p.add_argument("--flip-pp", action="store_true", help="average with the prediction on the mirrored image")
    p.add_argument("--scale", default="d0", help="output head used for depth")


def cmd_gen_data(args):
    from .datagen import generate_dataset, save_dataset

    out = Path(args.out)
    for split, count, seed in (("train", args.train, args.seed), ("eval", args.eval, args.seed + 1)):
        samples = generate_dataset(count, seed=seed, height=args.height, width=args.width)
        save_dataset(samples, out / split)
        print(f"wrote {count} samples to {out / split}")


def cmd_hints(args):
    from .datagen import load_dataset
    from .sgm import compute_fused_hint, has_hint, save_hint

    samples = load_dataset(args.data_root)
    done = 0
    for s in samples:
        if not args.force and has_hint(args.data_root, s.sample_id):
            continue
        save_hint(compute_fused_hint(s.left, s.right, max_disp=args.max_disp), args.data_root, s.sample_id)
        done += 1
    print(f"computed hints for {done} of {len(samples)} samples under {Path(args.data_root) / 'hints'}")


def cmd_train(args):
    from .train import train

    cfg = build_train_config(args)
    log.info("training with %s", asdict(cfg))

    def progress(rec):
        if rec.step % cfg.log_every == 0 or rec.step == cfg.steps:
            log.info("step %d loss %.4f (ph %.4f sd %.4f h %.4f) %.2fs", rec.step, rec.loss,
                     rec.photometric, rec.distill, rec.hint, rec.seconds)

    res = train(cfg, progress=progress)
    print(f"checkpoint written to {res.checkpoint}")


def _eval_opts(args):
    from .metrics import EvalOptions

    return EvalOptions(cap=args.cap, median_scaling=args.median_scaling, garg_crop=args.garg_crop)


def cmd_eval(args):
    from .datagen import load_dataset
    from .metrics import evaluate_model, format_summary, write_csv
    from .network import load_checkpoint

    model, step = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data_root)
    mean, per_sample = evaluate_model(model, samples, _eval_opts(args), args.scale, args.flip_pp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(per_sample, out / "metrics.csv")
    summary = format_summary(mean, f"{args.checkpoint} (step {step}, {len(per_sample)} samples, head {args.scale})")
    (out / "summary.txt").write_text(summary)
    print(summary, end="")


def heat_map(disp: np.ndarray) -> np.ndarray:
    """Black-red-yellow-white ramp (near is bright), H x W x 3 uint8."""
    t = np.clip(disp / max(float(disp.max()), 1e-6), 0.0, 1.0)
    rgb = np.stack([np.clip(3 * t, 0, 1), np.clip(3 * t - 1, 0, 1), np.clip(3 * t - 2, 0, 1)], axis=-1)
    return (rgb * 255 + 0.5).astype(np.uint8)


def cmd_infer(args):
    from PIL import Image

    from .autodiff import serialize
    from .datagen import read_png
    from .metrics import predict_disparity
    from .network import load_checkpoint, prune_for_inference

    model, _ = load_checkpoint(args.checkpoint)
    model = prune_for_inference(model, [args.scale])
    img = read_png(Path(args.image))
    disp = predict_disparity(model, img.transpose(2, 0, 1)[None].copy(), args.scale, args.flip_pp)[0]
    out = Path(args.out)
    stem = out.with_suffix("") if out.suffix in (".png", ".epct") else out
    stem.parent.mkdir(parents=True, exist_ok=True)
    serialize.save(stem.with_suffix(".epct"), disp)
    Image.fromarray(heat_map(disp)).save(stem.with_suffix(".png"))
    print(f"disparity range [{disp.min():.3f}, {disp.max():.3f}] written to {stem}.epct and {stem}.png")


def _write_label(out: Path, prefix: str, lab, names) -> None:
    from .autodiff import serialize

    serialize.save(out / f"{prefix}y.epct", lab.y.data[0, 0])
    serialize.save(out / f"{prefix}e_min.epct", np.asarray(lab.e_min[0, 0], dtype=np.float32))
    serialize.save(out / f"{prefix}source_scale.epct", lab.source_scale[0, 0].astype(np.float32))
    fractions = lab.win_fractions(len(names))
    lines = ["scale,win_fraction"] + [f"{n},{f:.6f}" for n, f in zip(names, fractions)]
    (out / f"{prefix}win_fractions.csv").write_text("\n".join(lines) + "\n")


def cmd_distill_label(args):
    """Labels from explicit per-scale disparity files, or from a checkpoint over a dataset."""
    from .autodiff import Tensor, no_grad, serialize
    from .datagen import load_dataset, read_png
    from .network import load_checkpoint
    from .spp import DECODER, ENCODER, build_labels, selective_post_process

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.disp:
        if not (args.left and args.right):
            raise ValueError("--disp needs --left and --right")
        T = Tensor(read_png(Path(args.left)).transpose(2, 0, 1)[None].copy())
        S = Tensor(read_png(Path(args.right)).transpose(2, 0, 1)[None].copy())
        maps = []
        for path in args.disp:
            d = serialize.load(path)
            if d.ndim != 2:
                raise ValueError(f"{path}: expected an H x W disparity map, got shape {d.shape}")
            maps.append(d[None, None])
        lab = selective_post_process(T, S, maps)
        _write_label(out, "", lab, [Path(p).stem for p in args.disp])
        print(f"label from {len(maps)} scales written to {out}")
        return
    if not (args.checkpoint and args.data_root):
        raise ValueError("give --left/--right/--disp, or --checkpoint and --data-root")
    model, _ = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data_root)
    for s in samples:
        T = Tensor(s.left.transpose(2, 0, 1)[None].copy())
        S = Tensor(s.right.transpose(2, 0, 1)[None].copy())
        with no_grad():
            y_e, y_d = build_labels(T, S, model(T).items(), mode=args.mode)
        if args.mode == "combined":
            _write_label(out, f"{s.sample_id}.", y_d, [n for n in DECODER + ENCODER if n in model.keep])
            continue
        for tag, lab, names in (("decoder", y_d, DECODER), ("encoder", y_e, ENCODER)):
            if lab is not None:
                _write_label(out, f"{s.sample_id}.{tag}.", lab, [n for n in names if n in model.keep])
    print(f"wrote labels for {len(samples)} samples to {out}")


def cmd_ablate(args):
    from .datagen import load_dataset
    from .metrics import METRIC_ORDER, DepthMetrics
    from .train import ablation_row, load_hints, run_ablation

    base = build_train_config(args)
    rows = {name: ablation_row(name) for name in args.rows.split(",")}
    seeds = [int(s) for s in args.seeds.split(",")]
    train_samples = load_dataset(base.data_root)
    hints = load_hints(base.data_root, train_samples) if any(r.get("hints") for r in rows.values()) else None
    eval_samples = load_dataset(args.eval_root)
    results = run_ablation(base, rows, seeds, train_samples, eval_samples, hints, _eval_opts(args))
    lines = ["row," + ",".join(METRIC_ORDER)]
    for name, per_seed in results.items():
        m = DepthMetrics.mean(per_seed)
        lines.append(name + "," + ",".join(f"{getattr(m, k):.6f}" for k in METRIC_ORDER))
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graftdepth", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic stereo dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--eval", type=int, default=40)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=192)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("hints", help="compute and cache fused SGM hints")
    p.add_argument("--data-root", required=True)
    p.add_argument("--max-disp", type=int)
    p.add_argument("--force", action="store_true", help="recompute cached hints")
    p.set_defaults(func=cmd_hints)

    p = sub.add_parser("train", help="train a model")
    _add_train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", required=True)
    _add_eval_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict disparity for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output stem; writes <stem>.epct and a <stem>.png heat map")
    p.add_argument("--scale", default="d0")
    p.add_argument("--flip-pp", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("distill-label", help="dump selective post-processing labels")
    p.add_argument("--left", help="target view PNG (with --right and --disp)")
    p.add_argument("--right", help="source view PNG")
    p.add_argument("--disp", nargs="+", help="per-scale disparity EPCT files, in priority order")
    p.add_argument("--checkpoint", help="alternatively: label every sample of --data-root with this model")
    p.add_argument("--data-root")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("separate", "combined"), default="separate")
    p.set_defaults(func=cmd_distill_label)

    p = sub.add_parser("ablate", help="train and evaluate switch combinations over seeds")
    _add_train_options(p)
    p.add_argument("--eval-root", required=True)
    p.add_argument("--rows", default="baseline,+DG,+SD,+FS,HR,full",
                   help="comma list of baseline, full, +DG, +SD, +FS, HR or combinations such as HR+DG")
    p.add_argument("--seeds", default="0,1,2")
    _add_eval_options(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
