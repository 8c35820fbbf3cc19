"""
Command-line entry point.

    python -m maskattn train   --config copy_c5.cfg
    python -m maskattn ablate  --config local.cfg --orderings C1,C2,C3,C4,C5 --seeds 3 [--smans]
    python -m maskattn analyze --checkpoint runs/x/checkpoint --dataset runs/x/test_set.txt

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import capture_attention, dump_attention, locality_report
from .config import ExperimentConfig
from .errors import ConfigError, CorruptionError, DivergenceError
from .model import PRESETS, BlockOrdering, Seq2SeqModel, load_checkpoint
from .training.ablation import run_ablation
from .training.trainer import train

log = logging.getLogger("maskattn")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _out_dir(cfg, override=None):
    out = Path(override or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_dataset(pairs, path):
    Path(path).write_text("".join(" ".join(map(str, src)) + "\n" for src, _ in pairs))


def read_dataset(path):
    seqs = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            seqs.append(np.array([int(t) for t in line.split()], dtype=np.int64))
    return seqs


def cmd_train(args):
    cfg = ExperimentConfig.load(args.config)
    seed = cfg.seeds[0]
    out = _out_dir(cfg, args.out)
    (out / "config.cfg").write_text(cfg.to_text())
    task = cfg.task_for(seed)
    model = Seq2SeqModel(cfg.model, seed=seed)
    try:
        report = train(model, task, cfg.train, seed=seed, checkpoint_dir=out / "checkpoint",
                       log_every=args.log_every)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(report.to_json())
    write_dataset(task.samples(cfg.train.eval_size, "test"), out / "test_set.txt")
    print(f"token_accuracy={report.token_accuracy:.4f} exact_match={report.exact_match:.4f} -> {out}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = ExperimentConfig.load(args.config)
    names = [n.strip() for n in args.orderings.split(",") if n.strip()]
    for n in names:
        BlockOrdering.parse(n)
    if args.smans:
        names += [n for n in ("BASE", "SMAN1", "SMAN2") if n not in names]
    seeds = cfg.seeds if args.seeds is None else [cfg.seeds[0] + i for i in range(args.seeds)]
    out = _out_dir(cfg, args.out)
    (out / "config.cfg").write_text(cfg.to_text())
    table = run_ablation(names, cfg.task_for(seeds[0]), seeds, cfg.model, cfg.train, workers=args.workers)
    (out / "ablation.csv").write_text(table.to_csv())
    (out / "ablation.json").write_text(table.to_json())
    print(table.to_csv(), end="")
    return EXIT_OK


def _parse_ints(text, what):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated integers, got {text!r}") from None


def cmd_analyze(args):
    windows = _parse_ints(args.windows, "--windows")
    if any(w < 0 for w in windows):
        raise ConfigError("--windows must be non-negative")
    try:
        model = load_checkpoint(args.checkpoint)
    except CorruptionError as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not Path(args.dataset).is_file():
        raise ConfigError(f"dataset file not found: {args.dataset}")
    data = read_dataset(args.dataset)
    record = capture_attention(model, data, dataset_id=str(args.dataset))
    layers = None if args.layers == "all" else _parse_ints(args.layers, "--layers")
    if layers is not None:
        bad = [l for l in layers if l not in record.layers]
        if bad:
            raise ConfigError(f"--layers: no such layer(s) {bad}; model has {record.layers}")
    report = locality_report(record, windows=windows, layers=layers)
    out = Path(args.out or Path(args.checkpoint).parent / "analysis")
    out.mkdir(parents=True, exist_ok=True)
    (out / "locality.csv").write_text(report.to_csv())
    (out / "locality.json").write_text(report.to_json())
    if args.dump_attention:
        dump_attention(record, out / "attention")
    print(report.to_csv(), end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="maskattn", description="Mask attention network experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model and evaluate it")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (overrides the config)")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="compare block orderings over several seeds")
    a.add_argument("--config", required=True)
    a.add_argument("--orderings", default="C1,C2,C3,C4,C5",
                   help=f"comma-separated presets ({', '.join(PRESETS)}) or arrow chains")
    a.add_argument("--seeds", type=int, help="number of seeds, counting up from the first config seed")
    a.add_argument("--smans", action="store_true", help="add the BASE, SMAN1 and SMAN2 rows")
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    z = sub.add_parser("analyze", help="windowed attention locality of a trained model")
    z.add_argument("--checkpoint", required=True)
    z.add_argument("--dataset", required=True, help="text file, one source sequence of token ids per line")
    z.add_argument("--windows", default="1,2,4")
    z.add_argument("--layers", default="all")
    z.add_argument("--out")
    z.add_argument("--dump-attention", action="store_true")
    z.set_defaults(func=cmd_analyze)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
