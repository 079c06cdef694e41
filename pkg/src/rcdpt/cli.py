"""Command-line entry point: gen-data, train, eval, compare, gradcheck."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import TrainConfig, format_kv, parse_kv
from .data import Dataset, split_dir, write_dataset
from .model import load_checkpoint
from .reassemble import FusionMode

log = logging.getLogger("rcdpt")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser, skip=("mode",)) -> None:
    """Mirror every TrainConfig key as an optional flag; None means 'not given'."""
    g = p.add_argument_group("configuration overrides")
    for f in dataclasses.fields(TrainConfig):
        if f.name in skip:
            continue
        g.add_argument(_flag(f.name), dest=f.name, default=None, metavar="V",
                       help=f"default {format_kv({'x': f.default}).split('=', 1)[1].strip()}")


def load_config(args: argparse.Namespace, **forced) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = TrainConfig()
    if getattr(args, "config", None):
        cfg = TrainConfig.from_kv(parse_kv(Path(args.config).read_text()), cfg)
    flags = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)
             if getattr(args, f.name, None) is not None}
    flags.update({k: v for k, v in forced.items() if v is not None})
    return TrainConfig.from_kv(flags, cfg)


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if args.val:
        write_dataset(out / "train", args.n, args.size, args.seed, args.radar_channels)
        write_dataset(out / "val", args.val, args.size, args.seed, args.radar_channels, first_index=args.n)
        log.info("wrote %d train + %d val scenes to %s", args.n, args.val, out)
    else:
        write_dataset(out, args.n, args.size, args.seed, args.radar_channels)
        log.info("wrote %d scenes to %s", args.n, out)
    return 0


def cmd_train(args) -> int:
    from .plotting import plot_loss_curves
    from .train import train

    cfg = load_config(args, mode=args.mode)
    data = Dataset(split_dir(args.data, "train"))
    res = train(cfg, data, args.out)
    plot_loss_curves({f"{cfg.mode.value} seed {cfg.seed}": res.epoch_loss}, Path(args.out) / "loss_curve.png")
    first, last = res.epoch_loss[0], res.epoch_loss[-1]
    print(f"{cfg.mode.value}: epoch-1 loss {first:.4f} -> final {last:.4f} "
          f"({100 * (1 - last / first):.1f}% reduction) in {res.seconds:.0f}s")
    return 0


def cmd_eval(args) -> int:
    from .plotting import plot_depth_examples, write_pgm16
    from .train import evaluate, predict_dataset, write_metrics_csv

    model = load_checkpoint(args.ckpt)
    data = Dataset(split_dir(args.data, "val"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    preds = predict_dataset(model, data)
    kw = dict(absrel_denominator=args.absrel_denominator, depth_cap=args.depth_cap, preds=preds)
    rep = evaluate(model, data, target="lidar", **kw)
    dense = evaluate(model, data, target="dense", **kw)
    write_metrics_csv(out / "metrics.csv", [(model.mode.value, model.seed, rep)])
    write_metrics_csv(out / "metrics_dense.csv", [(model.mode.value, model.seed, dense)])
    if args.pgm:
        (out / "depth").mkdir(exist_ok=True)
        for path, pred in zip(data.paths, preds):
            write_pgm16(out / "depth" / f"{path.name}.pgm", pred)
    if not args.no_figures:
        k = min(4, len(data))
        samples = [data[i] for i in range(k)]
        plot_depth_examples([s.image for s in samples], [s.radar for s in samples], preds[:k],
                            [s.dense_depth for s in samples], out / "examples.png")
    print(f"{model.mode.value}: delta1 {rep.delta1:.4f} delta2 {rep.delta2:.4f} delta3 {rep.delta3:.4f} "
          f"rmse {rep.rmse:.4f} absrel {rep.absrel:.4f} ({rep.n_pixels} px)")
    return 0


def cmd_compare(args) -> int:
    from .plotting import plot_comparison, plot_loss_curves
    from .train import compare, summarize

    cfg = load_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    train_data = Dataset(split_dir(args.data, "train"))
    eval_data = Dataset(split_dir(args.data, "val"))
    if train_data.root == eval_data.root:
        log.warning("no train/val split under %s; evaluating on the training scenes", args.data)
    runs = compare(cfg, seeds, train_data, eval_data, args.out, save_checkpoints=args.save_checkpoints)
    summary = summarize(runs)
    out = Path(args.out)
    if not args.no_figures:
        plot_comparison(summary, out / "comparison.png")
        plot_loss_curves({f"{r.mode.value} seed {r.seed}": r.epoch_loss for r in runs}, out / "loss_curves.png")
    print(f"{'mode':18s} {'rmse':>16s} {'absrel':>16s} {'delta1':>16s}")
    for row in summary:
        print(f"{row['mode']:18s} {row['rmse_mean']:8.3f}±{row['rmse_std']:<7.3f} "
              f"{row['absrel_mean']:8.4f}±{row['absrel_std']:<7.4f} {row['delta1_mean']:8.4f}±{row['delta1_std']:<7.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_report, run_all

    results = run_all(seed=args.seed)
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcdpt", description="Radar-camera depth transformer toolkit")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic radar/camera/lidar dataset")
    g.add_argument("--n", type=int, required=True, help="training scenes")
    g.add_argument("--size", type=int, default=48)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--val", type=int, default=0, help="also write this many held-out scenes under out/val")
    g.add_argument("--radar-channels", type=int, default=3)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one fusion mode")
    t.add_argument("--mode", default=None, choices=[m.value for m in FusionMode] + ["rcdpt"])
    t.add_argument("--config", help="key = value file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics of a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--absrel-denominator", choices=("target", "prediction"), default="target")
    e.add_argument("--depth-cap", type=float, default=80.0)
    e.add_argument("--pgm", action="store_true", help="write 16-bit PGM depth maps (0-80 m)")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="train and evaluate all four modes over several seeds")
    c.add_argument("--seeds", default="0,1,2")
    c.add_argument("--config", help="key = value file")
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--save-checkpoints", action="store_true")
    c.add_argument("--no-figures", action="store_true")
    _add_config_flags(c, skip=("mode", "seed"))
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("gradcheck", help="finite-difference check of all ops and models (float64)")
    k.add_argument("--seed", type=int, default=0)
    k.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
