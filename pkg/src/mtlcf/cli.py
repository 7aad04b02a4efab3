"""Command-line experiment runner.

Subcommands::

    gen-data  write both domains' train/dev/test JSONL files
    train     run one method (base, ft, rt, mtlcf) into a run directory
    eval      decode a checkpoint over the test splits and write per-utterance CSVs
    sweep     MTLCF over several alpha or beta values, the other fixed at 0.5
    report    comparison table, per-run curve CSVs and PNG figures

Exit codes: 0 success, 2 bad config or arguments, 3 missing input,
4 numeric abort (non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from types import SimpleNamespace

from .config import ConfigError, ExperimentConfig, load_config
from .data import DatasetSplit, SPLIT_NAMES, gen_domain, read_split, write_split
from .evaluation import COMPARISON_HEADER, build_comparison, evaluate, read_rows, write_rows
from .losses import HyperParams, NonFiniteLossError
from .model import load_checkpoint, save_checkpoint
from .trainer import TrainRun, read_history, train_base, train_ft, train_mtlcf, train_rt

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

CURVE_HEADER = ("epoch", "cer_org", "cer_tar")
SWEEP_HEADER = ("value", "cer_org", "cer_tar")

log = logging.getLogger("mtlcf")


class MissingInput(Exception):
    pass


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "method", None):
        changes["method"] = args.method
    if getattr(args, "data", None):
        changes["data_dir"] = str(Path(args.data).resolve())
    if getattr(args, "base", None):
        changes["base_checkpoint"] = str(Path(args.base).resolve())
    if getattr(args, "out", None):
        changes["output_dir"] = str(args.out)
    return cfg.replace(**changes) if changes else cfg


def _has_domain(directory: Path, domain_id: int) -> bool:
    return all((directory / f"domain{domain_id}_{n}.jsonl").is_file() for n in SPLIT_NAMES)


def _load_domain(directory, domain_id: int, required: bool) -> DatasetSplit | None:
    if directory is None:
        if required:
            raise MissingInput("no data directory given (--data or data_dir in the config)")
        return None
    directory = Path(directory)
    if not _has_domain(directory, domain_id):
        if required:
            raise MissingInput(f"{directory} lacks domain{domain_id}_{{train,dev,test}}.jsonl")
        return None
    return read_split(directory, domain_id)


# ------------------------------------------------------------------ commands

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    for spec in (cfg.domain0, cfg.domain1):
        write_split(gen_domain(spec), out, spec.domain_id)
    cfg.save(out / "config.json")
    print(f"wrote 6 split files to {out}")
    return EXIT_OK


def run_training(cfg: ExperimentConfig, out: Path) -> TrainRun:
    """Train ``cfg.method`` and write the run directory layout."""
    method = cfg.method
    data0 = _load_domain(cfg.data_dir, 0, required=method != "ft")
    data1 = _load_domain(cfg.data_dir, 1, required=method != "base")
    base = None
    if method in ("ft", "mtlcf"):
        if not cfg.base_checkpoint or not Path(cfg.base_checkpoint).is_file():
            raise MissingInput(f"method {method} needs a base checkpoint (--base); got {cfg.base_checkpoint!r}")
        base = load_checkpoint(cfg.base_checkpoint)
    elif cfg.base_checkpoint:
        log.warning("method %s ignores the base checkpoint %s", method, cfg.base_checkpoint)

    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    kw = dict(seed=cfg.seed, checkpoint_dir=out / "checkpoints")
    if method == "base":
        run = train_base(cfg.model, data0, cfg.hyper, cfg.schedule, data1=data1, **kw)
    elif method == "ft":
        run = train_ft(base, data1, cfg.hyper, cfg.schedule, data0=data0, **kw)
    elif method == "rt":
        run = train_rt(cfg.model, data0, data1, cfg.hyper, cfg.schedule, **kw)
    else:
        run = train_mtlcf(base, data0, data1, cfg.hyper, cfg.schedule, **kw)

    run.write_history(out / "history.csv")
    run.write_steps(out / "steps.csv")
    save_checkpoint(run.params, out / "model.npz")
    meta = {"method": run.method, "seed": run.seed, "scale_tar": run.scale_tar, "test_key": run.test_key, "converged": run.converged}
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return run


def cmd_train(args) -> int:
    cfg = _config(args)
    run = run_training(cfg, Path(cfg.output_dir))
    last = run.history[-1]
    print(f"{run.method}: {len(run.history) - 1} epochs, cer_org={last.cer_org:.4f} cer_tar={last.cer_tar:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise MissingInput(f"checkpoint {args.checkpoint} not found")
    model = load_checkpoint(args.checkpoint)
    data = Path(args.data)
    found = [d for d in (0, 1) if _has_domain(data, d)]
    if not found:
        raise MissingInput(f"{data} contains no domain split files")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for d in found:
        report = evaluate(model, read_split(data, d)[args.split], f"domain{d}_{args.split}")
        report.write_csv(out / f"eval_domain{d}_{args.split}.csv")
        print(f"{report.dataset_id}: {report.utterance_count} utterances, mean CER {report.mean_cer:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.values:
        raise ConfigError("values", "sweep needs at least one value")
    cfg = _config(args).replace(method="mtlcf")
    out = Path(cfg.output_dir)
    rows = []
    for v in args.values:
        hyper = {"alpha": 0.5, "beta": 0.5, args.param: v}
        try:
            h = HyperParams(hyper["alpha"], hyper["beta"], cfg.hyper.temperature, cfg.hyper.batch_size, cfg.hyper.reduction)
        except ValueError as exc:
            raise ConfigError(args.param, str(exc)) from exc
        run = run_training(cfg.replace(hyper=h), out / f"{args.param}_{v:g}")
        last = run.history[-1]
        rows.append({"value": v, "cer_org": last.cer_org, "cer_tar": last.cer_tar})
        print(f"{args.param}={v:g}: cer_org={last.cer_org:.4f} cer_tar={last.cer_tar:.4f}")
    write_rows(rows, SWEEP_HEADER, out / f"sweep_{args.param}.csv")
    from .plotting import plot_sweep

    plot_sweep(rows, args.param, out / f"sweep_{args.param}.png")
    return EXIT_OK


def load_run(directory) -> SimpleNamespace:
    """Summary of a finished run directory, shaped for ``build_comparison``."""
    directory = Path(directory)
    missing = [n for n in ("run.json", "history.csv", "config.json") if not (directory / n).is_file()]
    if missing:
        raise MissingInput(f"incomplete run directory {directory}: missing {', '.join(missing)}")
    meta = json.loads((directory / "run.json").read_text())
    history = read_history(directory / "history.csv")
    if not history:
        raise MissingInput(f"incomplete run directory {directory}: empty history.csv")
    return SimpleNamespace(name=directory.name, history=history, **meta)


def cmd_report(args) -> int:
    runs = [load_run(d) for d in args.runs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = build_comparison(runs)
    write_rows(rows, COMPARISON_HEADER, out / "comparison.csv")
    curves = {}
    for r in runs:
        pts = [{"epoch": h.epoch, "cer_org": h.cer_org, "cer_tar": h.cer_tar} for h in r.history]
        write_rows(pts, CURVE_HEADER, out / f"curve_{r.name}.csv")
        curves[r.name] = read_rows(out / f"curve_{r.name}.csv")
    from .plotting import plot_comparison, plot_curves

    plot_comparison(rows, out / "comparison.png")
    plot_curves(curves, out / "curves.png")
    for row in rows:
        print(f"{row['method']:>9} scale_tar={row['scale_tar']:>5} cer_org={row['cer_org']:.4f} cer_tar={row['cer_tar']:.4f}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtlcf", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate both synthetic domains")
    g.add_argument("--config", help="experiment config JSON (defaults if omitted)")
    g.add_argument("--out", required=True, help="directory for the split files")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one method")
    t.add_argument("--config")
    t.add_argument("--method", choices=["base", "ft", "rt", "mtlcf"])
    t.add_argument("--data", help="directory holding the split files")
    t.add_argument("--base", help="original-domain checkpoint (ft and mtlcf)")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=list(SPLIT_NAMES), default="test")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="MTLCF over alpha or beta values")
    s.add_argument("--config")
    s.add_argument("--param", choices=["alpha", "beta"], required=True)
    s.add_argument("--values", type=float, nargs="*", required=True)
    s.add_argument("--data")
    s.add_argument("--base")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="tables, curves and figures from run directories")
    r.add_argument("runs", nargs="+", help="run directories")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInput, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NonFiniteLossError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
