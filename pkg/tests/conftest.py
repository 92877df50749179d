import numpy as np
import pytest

from routecomply.harness import Config, build_context, build_network
from routecomply.netcore import DemandSpec, Edge, Network, PathCatalog, build_grid


@pytest.fixture(scope="session")
def default_cfg():
    return Config().validate()


@pytest.fixture(scope="session")
def default_net(default_cfg):
    return build_network(default_cfg)


@pytest.fixture(scope="session")
def default_catalog(default_cfg, default_net):
    return PathCatalog.build(default_net, default_cfg.demand.demands(), default_cfg.behavior.candidates)


@pytest.fixture(scope="session")
def base_ctx(default_cfg, default_net):
    """Default network, SO flow and targets; no compliance model."""
    return build_context(default_cfg, default_net, train=False)


@pytest.fixture(scope="session")
def full_ctx(default_cfg):
    """The complete default pipeline, including the 100-tree forest (about 20 s)."""
    return build_context(default_cfg)


def parallel_net(t0s, caps, base=None):
    """Two nodes joined by one edge per entry of ``t0s``."""
    edges = [
        Edge(i, 0, 1, float(t), float(c), 100.0, 0.5, 1.0, float(t) * 3.4) for i, (t, c) in enumerate(zip(t0s, caps))
    ]
    return Network([0, 1], edges, base)


def two_route_net(t0a, capa, t0b, capb):
    """Two disjoint single-edge routes 0 -> 1 (through different edges)."""
    net = parallel_net([t0a, t0b], [capa, capb])
    return net, DemandSpec(0, 1, 1.0)


def random_ip_instance(seed, n_travelers=6, n_candidates=3):
    """Seeded allocation instance on a 3x3 grid with a random uniform-deviation oracle.

    Targets are the expected counts of a random assignment under the same
    oracle, perturbed so they are usually not exactly attainable.
    """
    from routecomply.behavior import sample_population
    from routecomply.recommender import AllocationProblem, ComplianceOracle

    rng = np.random.default_rng(seed)
    net = build_grid(3, 3, seed=int(rng.integers(2**31)))
    demands = [DemandSpec(0, 8, 0.3), DemandSpec(2, 6, 0.3), DemandSpec(1, 7, 0.3)]
    catalog = PathCatalog.build(net, demands, n_candidates)
    pop = sample_population(demands, n_travelers, seed=int(rng.integers(2**31)))
    travelers = [pop[i] for i in sorted(rng.choice(len(pop), n_travelers, replace=False))]
    oracle = ComplianceOracle("learned", rng.uniform(0.3, 1.0, (n_travelers, n_candidates)))
    probe = AllocationProblem.build(oracle, travelers, catalog, net, np.zeros(net.n_edges), weights=np.ones(n_travelers))
    targets = probe.expected_counts(rng.integers(n_candidates, size=n_travelers))
    targets = np.clip(targets + rng.normal(0, 0.3, net.n_edges), 0, None)
    problem = AllocationProblem.build(oracle, travelers, catalog, net, targets, weights=np.ones(n_travelers))
    return problem, oracle, travelers, catalog, net


def independent_objective(oracle, travelers, catalog, net, targets, choice):
    """Objective rebuilt from the per-traveler distributions, one edge at a time."""
    E = np.zeros(net.n_edges)
    for n, (t, k) in enumerate(zip(travelers, choice)):
        dist = oracle.distribution(n, k)
        for p, path in enumerate(catalog.paths[t.demand]):
            for e in path.edge_ids:
                E[e] += dist[p]
    return float(np.sum(np.abs(targets - E)))


def enumerate_optimum(oracle, travelers, catalog, net, targets):
    """Independent brute force over every assignment; first minimum wins."""
    import itertools

    K = oracle.phi.shape[1]
    best_val, best_choice = np.inf, None
    for choice in itertools.product(range(K), repeat=len(travelers)):
        val = independent_objective(oracle, travelers, catalog, net, targets, choice)
        if val < best_val:
            best_val, best_choice = val, choice
    return best_val, np.array(best_choice)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
