"""Allocate recommendations for one population under different compliance oracles."""

from pathlib import Path

import numpy as np

from routecomply.harness import allocate, build_context, load_config, make_oracle, population
from routecomply.recommender import AllocationProblem, solve_exact, solve_local_search
from routecomply.rng import make_rng

cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "quick.cfg")
ctx = build_context(cfg)
travelers = population(ctx, 0)

for variant in ("perfect", "known", "learned"):
    oracle = make_oracle(ctx, variant, travelers)
    a, _ = allocate(ctx, oracle, travelers, 0)
    share = np.bincount(a.choice, minlength=3) / len(a.choice)
    print(f"{variant:8s} objective {a.objective:8.3f}  recommended rank shares {share.round(3)}")

# small instance: the heuristic against exhaustive search
full = AllocationProblem.build(make_oracle(ctx, "known", travelers), travelers, ctx.catalog, ctx.net, ctx.targets, ctx.edge_scale)
sub = make_rng(0).choice(len(travelers), 7, replace=False)
small = AllocationProblem(full.contrib[sub], full.targets)
print(f"7 travelers: exact {solve_exact(small).objective:.4f}, local search {solve_local_search(small, seed=0).objective:.4f}")
