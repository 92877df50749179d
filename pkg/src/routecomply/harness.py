"""Scenario runner: builds the shared network/SO/learner context and compares
recommendation strategies over shared-seed replications."""

from __future__ import annotations

import ast
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path as FilePath
from typing import Sequence

import numpy as np

from . import __version__
from .behavior import DEFAULT_RATIONALITY, LatentModel, generate_history, sample_population, simulate_day, with_adherence
from .compliance import (
    EvalReport,
    FeatureSchema,
    RandomForestModel,
    TreeParams,
    evaluate,
    featurize_dataset,
    split_dataset,
    train_forest,
)
from .netcore import DemandSpec, GridAttrRanges, Network, PathCatalog, build_grid, total_system_time
from .recommender import (
    DEFAULT_BUDGET,
    AllocationProblem,
    Assignment,
    ComplianceOracle,
    solve_exact,
    solve_local_search,
)
from .rng import derive_seed
from .soflow import PathFlowSolution, occupancy_targets, solve_so

log = logging.getLogger(__name__)

SCENARIOS = ("perfect", "known", "learned", "naive", "selfish")
OUTPUT_ENV = "ROUTECOMPLY_OUTPUT"
FORCED_ADHERENCE = math.inf
COMPARISON_COLUMNS = (
    "scenario",
    "obj_value_mean",
    "obj_value_std",
    "flow_diff_mean",
    "flow_diff_std",
    "travel_time_mean",
    "travel_time_std",
)


@dataclass
class NetworkConfig:
    rows: int = 4
    cols: int = 4
    seed: int | None = None  # None: derived from the master seed
    length: tuple[float, float] = (200.0, 600.0)
    speed: tuple[float, float] = (10.0, 15.0)
    capacity: tuple[float, float] = (0.3, 0.9)
    risk: tuple[float, float] = (0.0, 1.0)
    toll: tuple[float, float] = (0.0, 2.0)
    base_fraction: tuple[float, float] = (0.0, 0.5)

    def ranges(self) -> GridAttrRanges:
        return GridAttrRanges(self.length, self.speed, self.capacity, self.risk, self.toll, self.base_fraction)


@dataclass
class DemandConfig:
    od_nodes: tuple[int, ...] = (1, 7, 8, 14)
    rate: float = 0.33

    def demands(self) -> list[DemandSpec]:
        return [DemandSpec(o, d, self.rate) for o in self.od_nodes for d in self.od_nodes if o != d]


@dataclass
class BehaviorConfig:
    n_per_demand: int = 10
    candidates: int = 3
    rationality: float = DEFAULT_RATIONALITY
    theta4_max: float = 2.0
    noise: float = 0.1
    latent_spread: float = 1.0
    risk: tuple[float, float, float] = LatentModel.risk
    time: tuple[float, float, float] = LatentModel.time
    toll: tuple[float, float, float] = LatentModel.toll
    adherence: tuple[float, float, float] = LatentModel.adherence

    def latent_model(self) -> LatentModel:
        return LatentModel(
            risk=self.risk,
            time=self.time,
            toll=self.toll,
            adherence=self.adherence,
            noise=self.noise,
            latent_spread=self.latent_spread,
            theta4_max=self.theta4_max,
        )


@dataclass
class MLConfig:
    days: int = 200
    policy: str = "random"
    n_trees: int = 100
    max_depth: tuple[int, ...] = (8, 12)
    min_leaf: tuple[int, ...] = (5, 20)
    features_per_split: int | None = None
    bootstrap: bool = True

    def grid(self) -> list[TreeParams]:
        return [TreeParams(d, m, self.features_per_split) for d in self.max_depth for m in self.min_leaf]


@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 10000
    method: str = "pairwise"
    restarts: int = 10
    kicks: int = 30
    exact_budget: int = DEFAULT_BUDGET
    squared: bool = False
    occupancy: str = "latency"  # latency | global | none
    base_in_latency: bool = True
    target_scale: float = 1.0
    known_variant: str = "softmax"  # softmax | uniform


@dataclass
class ExperimentConfig:
    replications: int = 10
    master_seed: int = 0
    scenarios: tuple[str, ...] = SCENARIOS


@dataclass
class Config:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    demand: DemandConfig = field(default_factory=DemandConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    ml: MLConfig = field(default_factory=MLConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self) -> "Config":
        if self.experiment.replications < 1:
            raise ValueError("replications must be at least 1")
        bad = set(self.experiment.scenarios) - set(SCENARIOS)
        if bad:
            raise ValueError(f"unknown scenario(s) {sorted(bad)}")
        if self.solver.occupancy not in ("latency", "global", "none"):
            raise ValueError(f"unknown occupancy mode {self.solver.occupancy!r}")
        if self.solver.known_variant not in ("uniform", "softmax"):
            raise ValueError(f"unknown known_variant {self.solver.known_variant!r}")
        if self.behavior.candidates < 2:
            raise ValueError("need at least two candidate paths per traveler")
        if self.behavior.n_per_demand < 1:
            raise ValueError("n_per_demand must be at least 1")
        self.network.ranges().validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def master_seed(self) -> int:
        return self.experiment.master_seed

    def with_seed(self, seed: int) -> "Config":
        return replace(self, experiment=replace(self.experiment, master_seed=int(seed)))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


SECTIONS = {
    "network": NetworkConfig,
    "demand": DemandConfig,
    "behavior": BehaviorConfig,
    "ml": MLConfig,
    "solver": SolverConfig,
    "experiment": ExperimentConfig,
}


def _coerce(raw: str):
    try:
        val = ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        low = raw.strip().lower()
        if low in ("true", "yes", "on"):
            return True
        if low in ("false", "no", "off"):
            return False
        if low == "none":
            return None
        return raw.strip()
    return tuple(val) if isinstance(val, list) else val


def parse_config(text: str) -> Config:
    """Parse an INI-style config; every key must name a known field."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    parts = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        cls = SECTIONS[section]
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw in cp.items(section):
            if key not in known:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            values[key] = _coerce(raw)
        parts[section] = cls(**values)
    return Config(**parts).validate()


def load_config(path) -> Config:
    p = FilePath(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text())


def dumps_config(cfg: Config) -> str:
    out = []
    for section, part in cfg.to_dict().items():
        out.append(f"[{section}]")
        for key, val in part.items():
            if isinstance(val, (list, tuple)):
                val = list(val)
            out.append(f"{key} = {val!r}" if isinstance(val, str) else f"{key} = {val}")
        out.append("")
    return "\n".join(out)


def output_root(default="results") -> FilePath:
    return FilePath(os.environ.get(OUTPUT_ENV, default))


@dataclass
class Context:
    """Everything shared by all scenarios of one comparison batch."""

    cfg: Config
    net: Network
    catalog: PathCatalog
    so: PathFlowSolution
    targets: np.ndarray
    edge_scale: np.ndarray
    edge_times: np.ndarray
    model: RandomForestModel | None = None
    eval_report: EvalReport | None = None


def network_seed(cfg: Config) -> int:
    if cfg.network.seed is not None:
        return int(cfg.network.seed)
    return derive_seed(cfg.master_seed, "network")


def build_network(cfg: Config) -> Network:
    return build_grid(cfg.network.rows, cfg.network.cols, network_seed(cfg), cfg.network.ranges())


def build_context(cfg: Config, net: Network | None = None, model: RandomForestModel | None = None, train: bool = True) -> Context:
    net = net or build_network(cfg)
    demands = cfg.demand.demands()
    catalog = PathCatalog.build(net, demands, cfg.behavior.candidates)
    so = solve_so(net, demands, catalog.paths, cfg.solver.tol, cfg.solver.max_iter, cfg.solver.method)
    targets = occupancy_targets(net, so.edge_flows, cfg.solver.base_in_latency, cfg.solver.target_scale)
    edge_scale = occupancy_scale(cfg.solver.occupancy, net, so.edge_flows, targets, cfg.solver.base_in_latency)
    ctx = Context(cfg, net, catalog, so, targets, edge_scale, net.latency(np.zeros(net.n_edges)), model)
    if model is None and train and "learned" in cfg.experiment.scenarios:
        ctx.model, ctx.eval_report = train_compliance(ctx)
    return ctx


def occupancy_scale(mode: str, net: Network, so_flows, targets, base_in_latency=True) -> np.ndarray:
    """Per-edge factor turning traveler flow into occupancy comparable to the targets.

    ``latency``: Little's law with the travel time of the target state.
    ``global``: one constant so total scaled SO flow equals total target.
    ``none``: compare raw flows with the targets.
    """
    if mode == "latency":
        return net.latency(so_flows, include_base=base_in_latency)
    if mode == "global":
        tot = float(np.sum(so_flows))
        return np.full(net.n_edges, float(np.sum(targets)) / tot if tot > 0 else 1.0)
    if mode == "none":
        return np.ones(net.n_edges)
    raise ValueError(f"unknown occupancy mode {mode!r}")


def simulate_history(ctx: Context):
    cfg = ctx.cfg
    return generate_history(
        ctx.net,
        ctx.catalog,
        cfg.ml.days,
        cfg.behavior.n_per_demand,
        derive_seed(cfg.master_seed, "history"),
        cfg.ml.policy,
        cfg.behavior.latent_model(),
        cfg.behavior.rationality,
    )


def train_compliance(ctx: Context, history=None):
    """History -> stratified split -> forest tuned on validation -> eval report."""
    cfg = ctx.cfg
    history = history if history is not None else simulate_history(ctx)
    schema = FeatureSchema.from_catalog(ctx.catalog)
    train, val, ev = split_dataset(history, derive_seed(cfg.master_seed, "split"))
    Xt, yt = featurize_dataset(train, ctx.net, ctx.catalog, schema)
    Xv, yv = featurize_dataset(val, ctx.net, ctx.catalog, schema)
    Xe, ye = featurize_dataset(ev, ctx.net, ctx.catalog, schema)
    model = train_forest(
        Xt,
        yt,
        Xv,
        yv,
        schema,
        n_trees=cfg.ml.n_trees,
        grid=cfg.ml.grid(),
        seed=derive_seed(cfg.master_seed, "forest"),
        bootstrap=cfg.ml.bootstrap,
    )
    report = evaluate(model, Xe, ye)
    log.info("compliance model: eval accuracy %.4f (majority %.4f)", report.accuracy, report.majority_baseline)
    return model, report


def population(ctx: Context, replication: int):
    cfg = ctx.cfg
    return sample_population(
        ctx.catalog.demands,
        cfg.behavior.n_per_demand,
        derive_seed(cfg.master_seed, "population", replication),
        cfg.behavior.latent_model(),
        cfg.behavior.rationality,
    )


def make_oracle(ctx: Context, variant: str, travelers) -> ComplianceOracle:
    K = ctx.cfg.behavior.candidates
    if variant == "perfect":
        return ComplianceOracle.perfect(len(travelers), K)
    if variant == "known":
        return ComplianceOracle.known(
            travelers, ctx.net, ctx.catalog, ctx.edge_times, ctx.cfg.solver.known_variant == "softmax"
        )
    if variant == "learned":
        if ctx.model is None:
            raise ValueError("the learned scenario needs a trained compliance model")
        return ComplianceOracle.learned(ctx.model, travelers, ctx.net, ctx.catalog)
    raise ValueError(f"unknown oracle {variant!r}")


def allocate(ctx: Context, oracle: ComplianceOracle, travelers, replication: int) -> tuple[Assignment, AllocationProblem]:
    s = ctx.cfg.solver
    problem = AllocationProblem.build(
        oracle, travelers, ctx.catalog, ctx.net, ctx.targets, ctx.edge_scale, squared=s.squared
    )
    if problem.n_candidates ** problem.n_travelers <= s.exact_budget:
        return solve_exact(problem, s.exact_budget), problem
    seed = derive_seed(ctx.cfg.master_seed, f"allocation-{oracle.variant}", replication)
    return solve_local_search(problem, seed, s.restarts, s.kicks), problem


@dataclass
class ReplicationRecord:
    replication: int
    obj_value: float | None
    flow_diff: float
    travel_time: float
    realized_flow: np.ndarray
    assignment: Assignment | None = None
    obj_true: float | None = None  # same assignment scored under the simulator's true choice law


def _realize(ctx: Context, travelers, recs, replication: int):
    _, flows, _ = simulate_day(
        ctx.net, ctx.catalog, travelers, recs, derive_seed(ctx.cfg.master_seed, "choice", replication)
    )
    occupancy = flows * ctx.edge_scale
    return flows, float(np.sum(np.abs(ctx.targets - occupancy))), total_system_time(ctx.net, flows)


def run_replication(ctx: Context, tag: str, replication: int) -> ReplicationRecord:
    """One scenario on one shared-seed population."""
    travelers = population(ctx, replication)
    if tag == "selfish":
        flows, diff, tt = _realize(ctx, travelers, [None] * len(travelers), replication)
        return ReplicationRecord(replication, None, diff, tt, flows)
    planner = {"perfect": "perfect", "naive": "perfect", "known": "known", "learned": "learned"}.get(tag)
    if planner is None:
        raise ValueError(f"unknown scenario {tag!r}")
    oracle = make_oracle(ctx, planner, travelers)
    assignment, _ = allocate(ctx, oracle, travelers, replication)
    actors = with_adherence(travelers, FORCED_ADHERENCE) if tag == "perfect" else travelers
    flows, diff, tt = _realize(ctx, actors, [int(k) for k in assignment.choice], replication)
    truth = ComplianceOracle.known(actors, ctx.net, ctx.catalog, ctx.edge_times, full_softmax=True)
    true_problem = AllocationProblem.build(
        truth, actors, ctx.catalog, ctx.net, ctx.targets, ctx.edge_scale, squared=ctx.cfg.solver.squared
    )
    return ReplicationRecord(
        replication, assignment.objective, diff, tt, flows, assignment, true_problem.objective(assignment.choice)
    )


@dataclass
class ScenarioResult:
    scenario: str
    records: list[ReplicationRecord]

    def _values(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def aggregate(self, name) -> tuple[float, float] | tuple[None, None]:
        vals = self._values(name) if name != "obj_value" or self.records[0].obj_value is not None else None
        if vals is None:
            return None, None
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        return float(np.mean(vals)), std

    def row(self) -> dict:
        out = {"scenario": self.scenario}
        for name in ("obj_value", "flow_diff", "travel_time"):
            out[f"{name}_mean"], out[f"{name}_std"] = self.aggregate(name)
        return out


def run_scenario(cfg: Config | Context, tag: str) -> ScenarioResult:
    ctx = cfg if isinstance(cfg, Context) else build_context(replace(cfg, experiment=replace(cfg.experiment, scenarios=(tag,))))
    if tag not in SCENARIOS:
        raise ValueError(f"unknown scenario {tag!r}")
    R = ctx.cfg.experiment.replications
    return ScenarioResult(tag, [run_replication(ctx, tag, r) for r in range(R)])


def compare_scenarios(ctx: Context, scenarios: Sequence[str] | None = None) -> list[ScenarioResult]:
    """All scenarios over the same network, SO targets, model and populations."""
    scenarios = tuple(scenarios or ctx.cfg.experiment.scenarios)
    if len(scenarios) < 1:
        raise ValueError("no scenarios to compare")
    return [run_scenario(ctx, tag) for tag in scenarios]


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def provenance_line(cfg: Config) -> str:
    return f"# config_hash={cfg.hash()} master_seed={cfg.master_seed} version={__version__}\n"


def comparison_csv(results: Sequence[ScenarioResult], cfg: Config) -> str:
    buf = io.StringIO()
    buf.write(provenance_line(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_COLUMNS)
    for res in results:
        row = res.row()
        w.writerow([row["scenario"]] + [_fmt(row[c]) for c in COMPARISON_COLUMNS[1:]])
    return buf.getvalue()


def replications_csv(results: Sequence[ScenarioResult], cfg: Config) -> str:
    buf = io.StringIO()
    buf.write(provenance_line(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "replication", "obj_value", "obj_value_true", "flow_diff", "travel_time"])
    for res in results:
        for r in res.records:
            w.writerow(
                [res.scenario, r.replication, _fmt(r.obj_value), _fmt(r.obj_true), _fmt(r.flow_diff), _fmt(r.travel_time)]
            )
    return buf.getvalue()


def edge_deviation_csv(results: Sequence[ScenarioResult], ctx: Context) -> str:
    buf = io.StringIO()
    buf.write(provenance_line(ctx.cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "edge", "tail", "head", "target_occupancy", "mean_occupancy", "mean_deviation"])
    for res in results:
        occ = np.mean([r.realized_flow * ctx.edge_scale for r in res.records], axis=0)
        for e in ctx.net.edges:
            w.writerow(
                [res.scenario, e.id, e.tail, e.head, _fmt(ctx.targets[e.id]), _fmt(occ[e.id]), _fmt(occ[e.id] - ctx.targets[e.id])]
            )
    return buf.getvalue()


def read_table(text: str) -> list[dict]:
    """Parse a provenance-prefixed CSV back into rows of floats/strings."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = []
    for row in csv.DictReader(lines):
        parsed = {}
        for k, v in row.items():
            if v == "":
                parsed[k] = None
                continue
            try:
                parsed[k] = int(v)
            except ValueError:
                try:
                    parsed[k] = float(v)
                except ValueError:
                    parsed[k] = v
        rows.append(parsed)
    return rows


def _bar_chart(path, labels, means, stds, title, ylabel, stamp):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "routecomply", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(labels, means, yerr=stds, capsize=4, color="#4c72b0")
        ax.set_title(title)
        ax.set_ylabel(ylabel)
        fig.text(0.01, 0.01, stamp, fontsize=6, color="gray")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Title": stamp})
        plt.close(fig)


def _calibration_chart(path, report: EvalReport, stamp):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "routecomply", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        pred = [c["mean_predicted"] for c in report.calibration]
        emp = [c["empirical_rate"] for c in report.calibration]
        size = [max(10.0, 200.0 * c["count"] / max(1, sum(b["count"] for b in report.calibration))) for c in report.calibration]
        ax.plot([0, 1], [0, 1], "--", color="gray", lw=1)
        ax.scatter(pred, emp, s=size, color="#dd8452")
        ax.set_xlabel("predicted compliance probability")
        ax.set_ylabel("observed compliance rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        fig.text(0.01, 0.01, stamp, fontsize=6, color="gray")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Title": stamp})
        plt.close(fig)


def emit_report(results: Sequence[ScenarioResult], ctx: Context, out_dir) -> list[FilePath]:
    """Write tables, charts and a manifest; nothing is written if ``results`` is empty."""
    if not results or any(len(r.records) == 0 for r in results):
        raise ValueError("no replication results to report")
    out = FilePath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"cannot write to {out}")
    cfg = ctx.cfg
    stamp = f"config_hash={cfg.hash()} master_seed={cfg.master_seed}"
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    put("comparison.csv", comparison_csv(results, cfg))
    put("replications.csv", replications_csv(results, cfg))
    put("edge_deviation.csv", edge_deviation_csv(results, ctx))
    if ctx.eval_report is not None:
        put("confusion.csv", provenance_line(cfg) + ctx.eval_report.confusion_csv())
        put("calibration.csv", provenance_line(cfg) + ctx.eval_report.calibration_csv())
        p = out / "calibration.svg"
        _calibration_chart(p, ctx.eval_report, stamp)
        written.append(p)

    rows = [r.row() for r in results]
    labels = [r["scenario"] for r in rows]
    for metric, title, ylabel in (
        ("flow_diff", "Deviation from system-optimal occupancy", "sum of |target - realized|"),
        ("travel_time", "Total travel time", "vehicle-seconds per second"),
    ):
        p = out / f"{metric}.svg"
        _bar_chart(p, labels, [r[f"{metric}_mean"] for r in rows], [r[f"{metric}_std"] for r in rows], title, ylabel, stamp)
        written.append(p)

    manifest = {
        "config_hash": cfg.hash(),
        "master_seed": cfg.master_seed,
        "version": __version__,
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "so": {"objective": ctx.so.objective, "gap": ctx.so.gap, "iterations": ctx.so.iterations},
        "files": sorted(p.name for p in written),
    }
    if ctx.eval_report is not None:
        manifest["compliance_eval"] = {
            "accuracy": ctx.eval_report.accuracy,
            "majority_baseline": ctx.eval_report.majority_baseline,
            "log_loss": ctx.eval_report.log_loss,
        }
    put("manifest.json", json.dumps(manifest, indent=1, sort_keys=True, default=list) + "\n")
    return written
