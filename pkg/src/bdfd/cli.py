"""Command-line front end.

    bdfd synth  --n 200 --seed 7 --out d/
    bdfd poison --attack lsa_rotate --phi 30 --beta 0.1 --alpha 1.0 \\
                --trigger patch_solid --size 0.1 --in d/ --out dp/
    bdfd train  --data dp/ --out m.bdfd
    bdfd eval   --model m.bdfd --data test/ --triggered --out report.json
    bdfd defend --model m.bdfd --data test/ --triggered --report report.json
    bdfd align  --model m.bdfd --data test/ --out aligned/
    bdfd report --inputs a.json b.json --out summary.json

Exit status: 0 success, 1 configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .anchors import CONF_THRESHOLD, NMS_THRESHOLD
from .core import LEFT_EYE, LEFT_MOUTH
from .defend import ConsistencyRuleSet
from .detector import TrainConfig, TrainingDiverged
from .io import DataError
from .metrics import MetricError
from .poison import PoisonConfig
from .seeding import resolve_seed
from .synth import SceneParams
from .triggers import TriggerSpec

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _pair(kind):
    def parse(s):
        parts = s.split(",")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {s!r}")
        return tuple(kind(p) for p in parts)
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bdfd", description="Backdoor attack/defense lab for single-shot face detection.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--seed", type=int, default=None,
                        help="global seed (falls back to $BDFD_SEED, then 0)")
        return sp

    s = add("synth", "generate a synthetic face dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--image-size", type=int, default=64)
    s.add_argument("--faces", type=_pair(int), default=(1, 3), metavar="MIN,MAX")
    s.add_argument("--scale", type=_pair(float), default=(0.2, 0.5), metavar="MIN,MAX")
    s.add_argument("--clutter", type=_pair(int), default=(0, 5), metavar="MIN,MAX")

    s = add("poison", "poison a dataset with FGA or LSA")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--attack", choices=["fga", "lsa_rotate", "lsa_swap"], required=True)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--trigger", choices=["patch_noise_border", "patch_solid", "sinusoid"],
                   default=None)
    s.add_argument("--size", type=float, default=0.15)
    s.add_argument("--border", type=int, default=1)
    s.add_argument("--frequency", type=float, default=6.0)
    s.add_argument("--phi", type=float, default=30.0)
    s.add_argument("--swap", type=_pair(int), default=(LEFT_EYE, LEFT_MOUTH), metavar="I,J")
    s.add_argument("--fga-size-range", type=_pair(int), default=(10, 20), metavar="MIN,MAX")

    s = add("train", "train a detector")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", default=None, help="loss log JSON (default: <out>.log.json)")
    d = TrainConfig()
    s.add_argument("--epochs", type=int, default=d.epochs)
    s.add_argument("--batch-size", type=int, default=d.batch_size)
    s.add_argument("--lr", type=float, default=d.learning_rate)
    s.add_argument("--momentum", type=float, default=d.momentum)
    s.add_argument("--lr-drops", type=int, nargs="*", default=list(d.lr_drop_epochs))
    s.add_argument("--lr-drop-factor", type=float, default=d.lr_drop_factor)
    s.add_argument("--neg-ratio", type=float, default=d.hard_negative_ratio)
    s.add_argument("--no-flip", action="store_true")

    for name, help in (("eval", "evaluate a checkpoint"), ("defend", "run the defenses")):
        s = add(name, help)
        s.add_argument("--model", required=True)
        s.add_argument("--data", required=True)
        s.add_argument("--triggered", action="store_true",
                       help="data is a poisoned (triggered) set carrying its audit")
        s.add_argument("--conf", type=float, default=CONF_THRESHOLD)
        s.add_argument("--nms", type=float, default=NMS_THRESHOLD)
        if name == "eval":
            s.add_argument("--out", default=None, help="report JSON (default: stdout)")
        else:
            s.add_argument("--report", default=None, help="report JSON to extend (or create)")
            s.add_argument("--landmark-threshold", type=float, default=2.0)

    s = add("align", "write aligned face crops")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--conf", type=float, default=CONF_THRESHOLD)
    s.add_argument("--nms", type=float, default=NMS_THRESHOLD)

    s = add("report", "merge JSON reports into one summary")
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--out", required=True)
    return p


def _emit(obj, out):
    if out:
        ex.write_json(out, obj)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))


def _configs(args, seed):
    """Build the config objects for a command; ValueError means a config error."""
    if args.command == "synth":
        return SceneParams(args.image_size, args.faces, args.scale, args.clutter, seed)
    if args.command == "poison":
        kind = args.trigger or ("patch_noise_border" if args.attack == "fga" else "patch_solid")
        trig = TriggerSpec(kind, args.alpha, args.size, args.border, args.frequency)
        return PoisonConfig(args.attack, args.beta, trig, args.phi, args.swap,
                            args.fga_size_range, seed)
    if args.command == "train":
        return TrainConfig(args.epochs, args.batch_size, args.lr, args.momentum,
                           tuple(args.lr_drops), args.lr_drop_factor, args.neg_ratio,
                           hflip=not args.no_flip, seed=seed)
    return None


def run(args) -> int:
    seed = resolve_seed(args.seed)
    try:
        cfg = _configs(args, seed)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    c = args.command
    if c == "synth":
        if args.n < 1:
            raise ConfigError("--n must be >= 1")
        ex.stage_synth(args.n, cfg, args.out)
    elif c == "poison":
        _, audit = ex.stage_poison(args.inp, cfg, args.out)
        print(f"poisoned {len(audit.records)} samples -> {args.out}")
    elif c == "train":
        log_path = args.log or str(args.out) + ".log.json"
        result = ex.stage_train(args.data, cfg, args.out, log_path)
        print(f"final loss {result.history[-1][1]:.5f} -> {args.out}")
    elif c == "eval":
        _emit(ex.stage_eval(args.model, args.data, args.triggered, args.conf, args.nms), args.out)
    elif c == "defend":
        rep = ex.read_json(args.report) if args.report and Path(args.report).exists() else {}
        rep.update(ex.stage_defend(args.model, args.data, args.triggered, ConsistencyRuleSet(),
                                   args.conf, args.nms, args.landmark_threshold))
        _emit(rep, args.report)
    elif c == "align":
        s = ex.stage_align(args.model, args.data, args.out, args.conf, args.nms)
        print(f"aligned {s['alignment.count']} faces -> {args.out}")
    elif c == "report":
        merged = {}
        for path in args.inputs:
            try:
                merged[Path(path).stem] = ex.read_json(path)
            except (OSError, json.JSONDecodeError) as e:
                raise DataError(f"{path}: {e}") from e
        ex.write_json(args.out, merged)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return run(args)
    except ConfigError as e:
        print(f"bdfd: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MetricError, TrainingDiverged, FileNotFoundError) as e:
        print(f"bdfd: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
