"""Command-line interface: ``stprompt <subcommand> ...``.

Configuration precedence: built-in defaults, then ``--config`` JSON (flat
keys named like the flags, with underscores), then explicit flags.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import analysis
from .checkpoint import load_model, save_model
from .config import FIELD_HELP, RunConfig
from .data import ShiftSpec, SplitSpec, gen_synthetic, load_csv, load_dataset, save_dataset
from .errors import NumericalError, STPromptError, UsageError
from .graph import load_graph
from .training import COMPARISON_MODES, compare, evaluate, make_task, pretrain, prompt_tune


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (flags override --config)")
    g.add_argument("--config", help="JSON file with RunConfig keys")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            g.add_argument(flag, action="store_true", default=None, help=FIELD_HELP[f.name])
        else:
            kind = {"int": int, "float": float, "str": str}[f.type if isinstance(f.type, str) else f.type.__name__]
            g.add_argument(flag, type=kind, default=None, metavar=f.name.upper(), help=FIELD_HELP[f.name])


def _add_data_flags(p: argparse.ArgumentParser, many: bool = False) -> None:
    p.add_argument("--data", required=True,
                   help="comma-separated dataset files" if many else "dataset file (.stds, or .csv with --layout/--graph)")
    p.add_argument("--layout", help="JSON layout descriptor for CSV data")
    p.add_argument("--graph", help="edge list or distance CSV for CSV data")
    p.add_argument("--split", default="0.6,0.2,0.2", help="train,val,test ratios (default 0.6,0.2,0.2)")
    p.add_argument("--strict-split", action="store_true", help="drop windows overlapping the previous split")


def _add_log_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--log-file", help="write per-epoch JSON records here instead of the console")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stprompt", description="Spatio-temporal prompt tuning for traffic forecasting.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset with its road graph")
    p.add_argument("--out", required=True, help="output .stds file")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--regions", type=int, default=20, help="number of regions R (default 20)")
    p.add_argument("--steps", type=int, default=672, help="number of time steps T (default 672)")
    p.add_argument("--features", type=int, default=1, help="number of features F (default 1)")
    p.add_argument("--name", help="dataset name (default synthetic-<seed>)")
    for f in fields(ShiftSpec):
        kind = {"float": float, "int": int, "str": str}[f.type if isinstance(f.type, str) else f.type.__name__]
        p.add_argument("--" + f.name.replace("_", "-"), type=kind, default=f.default,
                       help=f"distribution knob (default {f.default})")

    p = sub.add_parser("pretrain", help="round-robin pre-training over several datasets")
    _add_data_flags(p, many=True)
    p.add_argument("--out", required=True, help="output checkpoint (.stck)")
    p.add_argument("--epochs", type=int, help="override pretrain_epochs")
    _add_log_flag(p)
    _add_config_flags(p)

    p = sub.add_parser("prompt-tune", help="tune the prompt network on a target with the downstream model frozen")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--epochs", type=int, help="override tune_epochs (default 20)")
    p.add_argument("--out", help="write the tuned checkpoint here")
    _add_log_flag(p)
    _add_config_flags(p)

    p = sub.add_parser("compare", help="reference protocols: " + ", ".join(COMPARISON_MODES))
    p.add_argument("--mode", required=True, choices=COMPARISON_MODES)
    p.add_argument("--checkpoint", help="pre-trained checkpoint (ignored by end_to_end)")
    _add_data_flags(p)
    p.add_argument("--epochs", type=int, help="override max_epochs (default 100)")
    p.add_argument("--out", help="write the resulting checkpoint here")
    _add_log_flag(p)
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="metrics of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--on", choices=("train", "val", "test"), default="test", help="split to score (default test)")
    _add_config_flags(p)

    p = sub.add_parser("analyze", help="embedding projection and uniformity statistics")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-samples", type=int, default=2048, help="cap on projected embeddings (default 2048)")
    p.add_argument("--scaling", action="store_true", help="also run the default scaling sweeps into scaling.csv")
    _add_config_flags(p)

    p = sub.add_parser("bench", help="time a component over a size sweep and fit the log-log slope")
    p.add_argument("--component", required=True, choices=analysis.COMPONENTS)
    p.add_argument("--variable", default="R", choices=analysis.VARIABLES, help="swept size (default R)")
    p.add_argument("--values", help="comma-separated sweep values (default: built-in sweep)")
    p.add_argument("--repetitions", type=int, default=10, help="timed repetitions per point (default 10)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", help="scaling CSV path")
    return parser


# -- helpers ----------------------------------------------------------------------

def _config(args, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise STPromptError(f"config file {path} not found")
        cfg = RunConfig.from_dict({**cfg.to_dict(), **json.loads(path.read_text())})
    changes = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    return cfg.override(**changes)


def _split(args) -> SplitSpec:
    try:
        ratios = tuple(float(v) for v in args.split.split(","))
    except ValueError:
        raise UsageError(f"--split expects three comma-separated numbers, got {args.split!r}") from None
    if len(ratios) != 3:
        raise UsageError(f"--split expects three ratios, got {len(ratios)}")
    return SplitSpec(ratios, strict=args.strict_split)


def _load_data(path: str, args):
    if path.endswith(".csv"):
        if not (args.layout and args.graph):
            raise UsageError("CSV data needs --layout and --graph")
        return load_csv(path, args.layout, load_graph(args.graph))
    return load_dataset(path)


def _datasets(args) -> list:
    return [_load_data(p.strip(), args) for p in args.data.split(",") if p.strip()]


class _LogSink:
    def __init__(self, path: str | None, console):
        self.fh = open(path, "w") if path else console
        self.owned = path is not None

    def __call__(self, record: dict) -> None:
        self.fh.write(json.dumps(record) + "\n")
        self.fh.flush()

    def close(self):
        if self.owned:
            self.fh.close()


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _checkpoint_model(args, cfg_args=True):
    model, meta = load_model(args.checkpoint)
    cfg = _config(args, model.cfg) if cfg_args else model.cfg
    if cfg != model.cfg:
        # architecture must still match the stored tensors
        rebuilt, _ = load_model(args.checkpoint, cfg)
        model = rebuilt
    return model


# -- subcommands ---------------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    shift = ShiftSpec(**{f.name: getattr(args, f.name) for f in fields(ShiftSpec)})
    ds = gen_synthetic(args.seed, args.regions, args.steps, args.features, shift, args.name)
    save_dataset(ds, args.out)
    _emit({"name": ds.name, "regions": ds.R, "steps": ds.T, "features": ds.F,
           "edges": ds.graph.edge_count, "out": args.out})
    return 0


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    sink = _LogSink(args.log_file, sys.stdout)
    try:
        model, result = pretrain(_datasets(args), cfg, epochs=args.epochs, log=sink, split=_split(args))
    finally:
        sink.close()
    save_model(model, args.out, {"phase": "pretrain", "best_epoch": result.best_epoch,
                                 "datasets": [p.strip() for p in args.data.split(",")]})
    print(json.dumps({"checkpoint": args.out, "best_epoch": result.best_epoch, "steps": result.steps}),
          file=sys.stderr)
    return 0


def cmd_prompt_tune(args) -> int:
    model = _checkpoint_model(args)
    sink = _LogSink(args.log_file, sys.stderr)
    try:
        tuned, result = prompt_tune(_load_data(args.data, args), model, model.cfg, args.epochs, sink, _split(args))
    finally:
        sink.close()
    if args.out:
        save_model(tuned, args.out, {"phase": "prompt_tune", "best_epoch": result.best_epoch})
    _emit(result.to_dict())
    return 0


def cmd_compare(args) -> int:
    if args.mode == "end_to_end":
        model, cfg = None, _config(args)
    else:
        if not args.checkpoint:
            raise UsageError(f"--mode {args.mode} needs --checkpoint")
        model = _checkpoint_model(args)
        cfg = model.cfg
    sink = _LogSink(args.log_file, sys.stderr)
    try:
        trained, result = compare(args.mode, _load_data(args.data, args), cfg, model, args.epochs, sink, _split(args))
    finally:
        sink.close()
    if args.out:
        save_model(trained, args.out, {"phase": args.mode, "best_epoch": result.best_epoch})
    _emit(result.to_dict())
    return 0


def cmd_evaluate(args) -> int:
    model = _checkpoint_model(args)
    task = make_task(_load_data(args.data, args), model.cfg, _split(args))
    windows = {"train": task.data.train, "val": task.data.val, "test": task.data.test}[args.on]
    _emit({"split": args.on, **evaluate(model, windows, task).to_dict()})
    return 0


def cmd_analyze(args) -> int:
    from .autodiff import no_grad

    model = _checkpoint_model(args)
    task = make_task(_load_data(args.data, args), model.cfg, _split(args))
    batch = next(task.data.test.batches(model.cfg.batch_size))
    with no_grad():
        emb = model.prompt.forward(model.store, batch.inputs, batch.tod[:, -1], batch.dow[:, -1], task.graph).output
    flat = emb.data.reshape(-1, emb.shape[-1])
    if len(flat) > args.max_samples:
        flat = flat[np.random.default_rng(model.cfg.seed).choice(len(flat), args.max_samples, replace=False)]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    proj = analysis.project_embeddings(flat)
    analysis.write_projection_csv(proj, out / "projection.csv")
    stats = {**analysis.uniformity_stats(flat), "dropped": proj.dropped}
    analysis.write_stats_json(stats, out / "stats.json")
    if args.scaling:
        reports = [analysis.bench_scaling(c, v, seed=model.cfg.seed) for c, v in analysis.DEFAULT_SWEEPS]
        analysis.write_scaling_csv(reports, out / "scaling.csv")
    _emit(stats)
    return 0


def cmd_bench(args) -> int:
    values = None
    if args.values:
        try:
            values = [int(v) for v in args.values.split(",")]
        except ValueError:
            raise UsageError(f"--values expects comma-separated integers, got {args.values!r}") from None
    report = analysis.bench_scaling(args.component, args.variable, values,
                                    repetitions=args.repetitions, seed=args.seed)
    if args.out:
        analysis.write_scaling_csv([report], args.out)
    _emit(report.to_dict())
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "pretrain": cmd_pretrain,
    "prompt-tune": cmd_prompt_tune,
    "compare": cmd_compare,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return exc.exit_code
    except STPromptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
