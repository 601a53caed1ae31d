"""Command line: plan | train | eval | sweep | gen-charac.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 no viable bias point.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import mapping
from .data_io import DataMissingError, load_cifar10, subset, synthetic_split
from .errors import CimBnnError, FlippedCharacterizationError, FormatError, NoViablePointError
from .evaluator import baseline_accuracy, mc_inference
from .nn.arch import ARCHITECTURES, get_arch
from .nn.checkpoint import load_checkpoint
from .sweep import run_sweep
from .tensor_core import RngStream
from .trainer import TrainConfig, train
from .variation import (SyntheticKnobs, generate_synthetic_characterization,
                        load_characterization, save_characterization, zero_variation)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NO_VIABLE = 0, 2, 3, 4
DEFAULT_EPOCHS = {"vgg9": 150, "resnet18": 250, "tiny": 20}


class DataError(CimBnnError):
    pass


class ConfigError(CimBnnError):
    pass


def _point(text):
    try:
        v_wl, v_bl = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected V_WL,V_BL, got {text!r}") from None
    return v_wl, v_bl


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _add_common(p, data=True):
    p.add_argument("--arch", choices=sorted(ARCHITECTURES), default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--config", default=None, help="JSON file of option defaults (flags still win)")
    p.add_argument("--array-size", type=int, default=mapping.DEFAULT_ARRAY_SIZE)
    if data:
        p.add_argument("--data", default="synthetic", help="CIFAR-10 binary directory, or 'synthetic'")
        p.add_argument("--subset", type=int, default=None, help="stratified training subset size")
        p.add_argument("--test-subset", type=int, default=None, help="stratified evaluation subset size")
        p.add_argument("--eval-split", choices=["test", "train"], default="test")
        p.add_argument("--train-size", type=int, default=5000, help="synthetic training samples")
        p.add_argument("--test-size", type=int, default=1000, help="synthetic test samples")
        p.add_argument("--noise", type=float, default=0.4, help="synthetic pixel noise std")
        p.add_argument("--data-seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)


def _add_training(p):
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--thresh", type=float, default=0.5)
    p.add_argument("--act-stddev", type=float, default=None, help="threshold noise std (default 0.1*thresh)")
    p.add_argument("--ste-hi", default="1", help="upper STE gate bound: a number or 'thresh'")
    p.add_argument("--merge-rule", choices=["majority"], default="majority")
    p.add_argument("--lr-scale", choices=["init-std", "none"], default="init-std")


def build_parser():
    ap = argparse.ArgumentParser(prog="cimbnn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="print the input-splitting plan")
    _add_common(p, data=False)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("train", help="train a (variation-aware) split BNN")
    _add_common(p)
    _add_training(p)
    p.add_argument("--variation", default="none", help="characterization file, or 'none'")
    p.add_argument("--point", type=_point, default=None, help="V_WL,V_BL record to train under")
    p.add_argument("--resume", default=None, help="checkpoint directory to continue from")
    p.add_argument("--warm-start", default=None, help="checkpoint directory to initialize weights from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Monte-Carlo inference of a trained checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--charac", default="none", help="characterization file, or 'none' for zero variation")
    p.add_argument("--point", type=_point, default=None)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--act-stddev", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate every bias point of a characterization table")
    _add_common(p)
    _add_training(p)
    p.add_argument("--charac", required=True)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--fast", action="store_true", help="train one shared model instead of one per point")
    p.add_argument("--reference", type=_point, default=None, help="shared-model training point")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-charac", help="write a synthetic characterization table")
    p.add_argument("--out", required=True, help="output JSON file")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--v-wl", type=_floats, default=None, help="comma-separated V_WL values")
    p.add_argument("--v-bl", type=_floats, default=None, help="comma-separated V_BL values")
    for f in SyntheticKnobs.__dataclass_fields__.values():
        p.add_argument("--" + f.name.replace("_", "-"), type=float, default=f.default)
    p.set_defaults(func=cmd_gen_charac)
    return ap


# ------------------------------------------------------------------ helpers

def _resolved(args):
    d = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return json.loads(json.dumps(d, default=list))


def _dump_config(args, out):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(_resolved(args), indent=2, sort_keys=True) + "\n")


def _out(args, default):
    return Path(args.out if args.out is not None else default)


def _load_data(args, arch_name):
    try:
        if args.data == "synthetic":
            shape = (3, 8, 8) if arch_name == "tiny" else (3, 32, 32)
            train_ds, test_ds = synthetic_split(args.train_size, args.test_size, 10, shape, args.data_seed, args.noise)
        else:
            train_ds, test_ds = load_cifar10(args.data)
        if args.subset is not None:
            train_ds = subset(train_ds, args.subset, args.data_seed)
        if args.test_subset is not None:
            test_ds = subset(test_ds, args.test_subset, args.data_seed)
    except (DataMissingError, FormatError, OSError) as e:
        raise DataError(str(e)) from e
    except ValueError as e:
        raise DataError(str(e)) from e
    return train_ds, test_ds


def _arch(args, ds=None):
    if args.arch == "tiny" and ds is not None:
        c, h, _ = ds.shape
        return get_arch("tiny", input_hw=h, in_channels=c)
    return get_arch(args.arch)


def _ste_hi(args):
    return args.thresh if str(args.ste_hi) == "thresh" else float(args.ste_hi)


def _select(table, point, what):
    if point is not None:
        try:
            return table.find(*point)
        except KeyError as e:
            raise ConfigError(str(e)) from None
    if len(table) == 1:
        return table[0]
    raise ConfigError(f"{what} holds {len(table)} points; pick one with --point V_WL,V_BL")


def _train_config(args, variation):
    return TrainConfig(epochs=args.epochs or DEFAULT_EPOCHS[args.arch], lr=args.lr, thresh=args.thresh,
                       act_stddev=args.act_stddev, array_size=args.array_size, seed=args.seed,
                       batch_size=args.batch_size, ste_hi=_ste_hi(args), variation=variation,
                       lr_scale=args.lr_scale, warm_start=getattr(args, "warm_start", None))


# ----------------------------------------------------------------- commands

def cmd_plan(args):
    plan = mapping.plan_network(get_arch(args.arch), args.array_size)
    sys.stdout.write(plan.table_text())
    if args.out is not None:
        out = Path(args.out)
        _dump_config(args, out)
        (out / "plan.csv").write_text(plan.table_csv())
    return EXIT_OK


def cmd_train(args):
    out = _out(args, "runs/train")
    variation = None
    if args.variation != "none":
        variation = _select(load_characterization(args.variation), args.point, args.variation)
        if variation.flipped:
            raise FlippedCharacterizationError(variation.v_wl, variation.v_bl)
    train_ds, test_ds = _load_data(args, args.arch)
    arch = _arch(args, train_ds)
    config = _train_config(args, variation)
    _dump_config(args, out)
    result = train(config, arch, train_ds, out_dir=out, resume=args.resume, log=print)
    acc = baseline_accuracy(result.model, test_ds if args.eval_split == "test" else train_ds, config.thresh)
    print(f"baseline accuracy ({args.eval_split}): {acc:.4f}")
    print(f"checkpoint: {out / 'checkpoint'}")
    return EXIT_OK


def cmd_eval(args):
    out = _out(args, "runs/eval")
    model, manifest, _ = load_checkpoint(args.checkpoint)
    tcfg = manifest["config"].get("train", {})
    thresh = tcfg.get("thresh", 0.5)
    act = args.act_stddev if args.act_stddev is not None else tcfg.get("act_stddev", 0.1 * thresh)
    charac = zero_variation() if args.charac == "none" else _select(load_characterization(args.charac), args.point, args.charac)
    if args.charac == "none" and args.act_stddev is None:
        act = 0.0
    train_ds, test_ds = _load_data(args, model.spec.name)
    ds = test_ds if args.eval_split == "test" else train_ds
    _dump_config(args, out)
    report = mc_inference(model, charac, ds, args.runs, args.seed, act, thresh, args.threads)
    report.save(out / "report.json")
    (out / "runs.csv").write_text(report.runs_csv())
    if report.flipped:
        print(f"v_wl={charac.v_wl} v_bl={charac.v_bl}: Flipped")
    else:
        base = baseline_accuracy(model, ds, thresh)
        print(f"baseline accuracy: {base:.4f}")
        print(f"MC accuracy over {report.n_runs} chips: mean {report.mean:.4f} std {report.std:.4f}")
    return EXIT_OK


def cmd_sweep(args):
    out = _out(args, "runs/sweep")
    table = load_characterization(args.charac)
    train_ds, test_ds = _load_data(args, args.arch)
    arch = _arch(args, train_ds)
    config = _train_config(args, None)
    mode = "shared-model" if args.fast else "retrain-per-point"
    _dump_config(args, out)
    result = run_sweep(table, arch, train_ds, test_ds, config, mode, args.runs, args.seed, args.threads,
                       args.reference, log=print)
    result.save(out)
    print(f"best point: v_wl={result.best[0]} v_bl={result.best[1]} mean accuracy {result.best_mean:.4f}")
    return EXIT_OK


def cmd_gen_charac(args):
    knobs = SyntheticKnobs(**{k: getattr(args, k) for k in SyntheticKnobs.__dataclass_fields__})
    grid = None
    if args.v_wl is not None or args.v_bl is not None:
        from .variation import DEFAULT_V_BL, DEFAULT_V_WL
        grid = [(w, b) for w in (args.v_wl or DEFAULT_V_WL) for b in (args.v_bl or DEFAULT_V_BL)]
    table = generate_synthetic_characterization(grid, knobs, RngStream(args.seed))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_characterization(table, args.out)
    flipped = sum(r.flipped for r in table)
    print(f"wrote {len(table)} points ({flipped} flipped) to {args.out}")
    return EXIT_OK


def parse_args(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            ap.exit(EXIT_CONFIG, f"cimbnn: cannot read --config: {e}\n")
        known = set(vars(args)) - {"func", "command", "config"}
        unknown = set(overrides) - known
        if unknown:
            ap.exit(EXIT_CONFIG, f"cimbnn: unknown keys in --config: {sorted(unknown)}\n")
        sub = ap._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**overrides)
        args = ap.parse_args(argv)
    return args


def main(argv=None):
    args = parse_args(sys.argv[1:] if argv is None else argv)
    try:
        return args.func(args)
    except NoViablePointError as e:
        print(f"cimbnn: {e}", file=sys.stderr)
        return EXIT_NO_VIABLE
    except DataError as e:
        print(f"cimbnn: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (CimBnnError, ValueError, OSError, KeyError) as e:
        print(f"cimbnn: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
