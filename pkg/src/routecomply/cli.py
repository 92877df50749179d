"""Command-line entry point: ``routecomply <subcommand> [--config FILE] [--seed N] [--out DIR]``.

Every subcommand starts from the built-in defaults, applies the config file
when given, then the flag overrides. Outputs go to ``--out`` (or
``$ROUTECOMPLY_OUTPUT``, or ``./results``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .behavior import dumps_history, loads_history
from .compliance import load_model, save_model
from .harness import (
    SCENARIOS,
    Config,
    allocate,
    build_context,
    build_network,
    compare_scenarios,
    comparison_csv,
    dumps_config,
    emit_report,
    load_config,
    make_oracle,
    output_root,
    population,
    provenance_line,
    replications_csv,
    run_scenario,
    simulate_history,
    train_compliance,
)
from .netcore import load_network, save_network
from .recommender import BudgetExceeded
from .soflow import ConvergenceWarning

log = logging.getLogger("routecomply")


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config().validate()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else output_root()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _network(args, cfg):
    return load_network(args.network) if args.network else build_network(cfg)


def _model(args):
    return load_model(args.model) if args.model else None


def _write(out: Path, name: str, text: str) -> Path:
    p = out / name
    p.write_text(text)
    print(p)
    return p


def _context(args, cfg, needs_model: bool):
    """Shared context; trains a model only when one is needed and none was passed."""
    model = _model(args)
    ctx = build_context(cfg, _network(args, cfg), model, train=False)
    if needs_model and ctx.model is None:
        history = loads_history(Path(args.history).read_text()) if args.history else None
        ctx.model, ctx.eval_report = train_compliance(ctx, history)
    return ctx


def cmd_generate_network(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    p = out / "network.json"
    save_network(build_network(cfg), p)
    print(p)
    return 0


def cmd_simulate_history(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    ctx = build_context(cfg, _network(args, cfg), train=False)
    _write(out, "history.csv", dumps_history(simulate_history(ctx)))
    return 0


def cmd_train_compliance(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    ctx = build_context(cfg, _network(args, cfg), train=False)
    history = loads_history(Path(args.history).read_text()) if args.history else None
    model, report = train_compliance(ctx, history)
    p = out / "model.json"
    save_model(model, p)
    print(p)
    _write(out, "confusion.csv", provenance_line(cfg) + report.confusion_csv())
    _write(out, "calibration.csv", provenance_line(cfg) + report.calibration_csv())
    summary = {
        "accuracy": report.accuracy,
        "majority_baseline": report.majority_baseline,
        "log_loss": report.log_loss,
        "params": model.metadata["params"],
    }
    _write(out, "eval.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return 0


def cmd_optimize_flow(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        ctx = build_context(cfg, _network(args, cfg), train=False)
    for w in caught:
        print(f"routecomply: warning: {w.message}", file=sys.stderr)
    sol = ctx.so.to_dict()
    sol["config_hash"] = cfg.hash()
    sol["master_seed"] = cfg.master_seed
    _write(out, "so_solution.json", json.dumps(sol, indent=1, sort_keys=True) + "\n")
    lines = [provenance_line(cfg), "edge,tail,head,so_flow,target_occupancy,edge_scale\n"]
    for e in ctx.net.edges:
        i = e.id
        lines.append(f"{i},{e.tail},{e.head},{ctx.so.edge_flows[i]!r},{ctx.targets[i]!r},{ctx.edge_scale[i]!r}\n")
    _write(out, "targets.csv", "".join(lines))
    return 0


def cmd_recommend(args) -> int:
    cfg = _config(args)
    if args.scenario == "selfish":
        raise ValueError("the selfish scenario makes no recommendations")
    out = _out_dir(args)
    ctx = _context(args, cfg, args.scenario == "learned")
    travelers = population(ctx, args.replication)
    planner = "perfect" if args.scenario == "naive" else args.scenario
    oracle = make_oracle(ctx, planner, travelers)
    assignment, _ = allocate(ctx, oracle, travelers, args.replication)
    text = provenance_line(cfg) + f"# objective={assignment.objective!r} replication={args.replication}\n"
    text += assignment.to_csv(travelers, ctx.catalog, oracle, args.scenario)
    _write(out, f"assignment_{args.scenario}.csv", text)
    return 0


def cmd_run_scenario(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    ctx = _context(args, cfg, args.scenario == "learned")
    res = run_scenario(ctx, args.scenario)
    _write(out, f"scenario_{args.scenario}.csv", comparison_csv([res], cfg))
    _write(out, f"scenario_{args.scenario}_replications.csv", replications_csv([res], cfg))
    return 0


def _batch(args, cfg):
    ctx = _context(args, cfg, "learned" in cfg.experiment.scenarios)
    return ctx, compare_scenarios(ctx)


def cmd_compare(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    _, results = _batch(args, cfg)
    _write(out, "comparison.csv", comparison_csv(results, cfg))
    _write(out, "replications.csv", replications_csv(results, cfg))
    return 0


def cmd_report(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    ctx, results = _batch(args, cfg)
    for p in emit_report(results, ctx, out):
        print(p)
    return 0


def cmd_show_config(args) -> int:
    sys.stdout.write(dumps_config(_config(args)))
    return 0


COMMANDS = {
    "generate-network": (cmd_generate_network, "build the synthetic grid and write network.json"),
    "simulate-history": (cmd_simulate_history, "simulate the recommendation history and write history.csv"),
    "train-compliance": (cmd_train_compliance, "train the compliance forest; writes model.json and eval tables"),
    "optimize-flow": (cmd_optimize_flow, "solve the system-optimal flow; writes so_solution.json and targets.csv"),
    "recommend": (cmd_recommend, "allocate recommendations for one population; writes assignment_<scenario>.csv"),
    "run-scenario": (cmd_run_scenario, "run one scenario over all replications"),
    "compare": (cmd_compare, "run every configured scenario on shared seeds; writes comparison.csv"),
    "report": (cmd_report, "compare, then write all tables, SVG charts and manifest.json"),
    "show-config": (cmd_show_config, "print the effective configuration"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routecomply",
        description="Compliance-aware system-optimal route recommendation on synthetic grids.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="INI config file; omitted keys keep their defaults")
    common.add_argument("--seed", type=int, metavar="N", help="override [experiment] master_seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: $ROUTECOMPLY_OUTPUT or ./results)")
    common.add_argument("--network", metavar="FILE", help="use this network.json instead of generating one")
    common.add_argument("-v", "--verbose", action="count", default=0, help="log progress (-vv for debug)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, (fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=fn)
        if name in ("train-compliance", "recommend", "run-scenario", "compare", "report"):
            p.add_argument("--history", metavar="FILE", help="train on this history.csv instead of simulating one")
        if name in ("recommend", "run-scenario", "compare", "report"):
            p.add_argument("--model", metavar="FILE", help="use this model.json instead of training one")
        if name in ("recommend", "run-scenario"):
            p.add_argument("--scenario", choices=SCENARIOS, default="known", help="scenario tag (default: known)")
        if name == "recommend":
            p.add_argument("--replication", type=int, default=0, metavar="R", help="population index (default: 0)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, BudgetExceeded) as exc:
        print(f"routecomply {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
