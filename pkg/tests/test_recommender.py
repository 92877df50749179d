import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from routecomply.behavior import choice_probabilities, sample_population
from routecomply.compliance import FeatureSchema, RandomForestModel
from routecomply.recommender import (
    AllocationProblem,
    BudgetExceeded,
    ComplianceOracle,
    _local_search_once,
    allocation_objective,
    compliance_distribution,
    expected_edge_counts,
    solve_exact,
    solve_local_search,
)
from routecomply.rng import make_rng

from conftest import enumerate_optimum, independent_objective, random_ip_instance


def test_distribution_examples():
    np.testing.assert_array_equal(compliance_distribution(1.0, 3, 1), [0.0, 1.0, 0.0])
    np.testing.assert_allclose(compliance_distribution(0.7, 3, 0), [0.7, 0.15, 0.15], rtol=1e-15)
    np.testing.assert_allclose(compliance_distribution(0.25, 4, 2), [0.25] * 4, rtol=1e-15)


def test_distribution_rejects_bad_input():
    with pytest.raises(ValueError):
        compliance_distribution(0.5, 3, 3)
    with pytest.raises(ValueError):
        compliance_distribution(0.5, 1, 0)
    with pytest.raises(ValueError):
        compliance_distribution(1.2, 3, 0)


@given(st.floats(0, 1), st.integers(2, 6), st.data())
def test_distribution_law(phi, K, data):
    k = data.draw(st.integers(0, K - 1))
    d = compliance_distribution(phi, K, k)
    assert np.all(d >= 0) and abs(d.sum() - 1) <= 1e-12
    assert d[k] == phi
    others = np.delete(d, k)
    assert np.all(others == (1 - phi) / (K - 1))


def test_oracle_distributions_match_pointwise():
    phi = np.random.default_rng(0).uniform(size=(5, 4))
    o = ComplianceOracle("learned", phi)
    D = o.distributions()
    for n in range(5):
        for k in range(4):
            np.testing.assert_allclose(D[n, k], o.distribution(n, k), rtol=1e-15)


def single_traveler_problem(default_net, default_catalog, phi, demand=5):
    pop = sample_population(default_catalog.demands, 1, seed=0)
    trav = [pop[demand]]
    oracle = ComplianceOracle("learned", np.full((1, 3), phi))
    prob = AllocationProblem.build(oracle, trav, default_catalog, default_net, np.zeros(default_net.n_edges), weights=[1.0])
    return prob, trav


def test_expected_counts_single_traveler_patterns(default_net, default_catalog):
    prob, (t,) = single_traveler_problem(default_net, default_catalog, 0.7)
    paths = default_catalog.paths[t.demand]
    for k in range(3):
        E = expected_edge_counts(prob, [k])
        # every subset sum of {0.7, 0.15, 0.15}
        assert set(np.round(E, 12)) <= {0.0, 0.15, 0.3, 0.7, 0.85, 1.0}
        for e in range(default_net.n_edges):
            member = [e in p.edge_ids for p in paths]
            expect = sum(0.7 if j == k else 0.15 for j, m in enumerate(member) if m)
            assert E[e] == pytest.approx(expect, abs=1e-12)


def test_perfect_oracle_counts_equal_tally(default_net, default_catalog):
    pop = sample_population(default_catalog.demands, 2, seed=1)
    oracle = ComplianceOracle.perfect(len(pop), 3)
    prob = AllocationProblem.build(oracle, pop, default_catalog, default_net, np.zeros(default_net.n_edges), weights=np.ones(len(pop)))
    choice = make_rng(0).integers(3, size=len(pop))
    tally = np.zeros(default_net.n_edges)
    for t, k in zip(pop, choice):
        tally[list(default_catalog.paths[t.demand][k].edge_ids)] += 1
    assert np.array_equal(prob.expected_counts(choice), tally)
    L = np.random.default_rng(2).uniform(0, 3, default_net.n_edges)
    prob.targets = L
    assert prob.objective(choice) == float(np.sum(np.abs(L - tally)))


def test_counts_are_linear_in_travelers():
    prob, *_ = random_ip_instance(3)
    a = np.array([0, 1, 2, 0, 1, 2])
    sub = [AllocationProblem(prob.contrib[[n]], prob.targets) for n in range(6)]
    total = sum(s.expected_counts([a[n]]) for n, s in enumerate(sub))
    np.testing.assert_allclose(prob.expected_counts(a), total, rtol=1e-14)


def test_objective_examples():
    prob, *_ = random_ip_instance(4)
    a = np.zeros(6, dtype=int)
    E = prob.expected_counts(a)
    assert allocation_objective(E, E) == 0.0
    empty = AllocationProblem(np.zeros((0, 3, prob.targets.size)), prob.targets)
    assert empty.objective([]) == pytest.approx(prob.targets.sum(), rel=1e-15)
    manual = 0.0
    for Le, Ee in zip(prob.targets, E):
        manual += abs(Le - Ee)
    assert prob.objective(a) == pytest.approx(manual, rel=1e-13)
    sq = AllocationProblem(prob.contrib, prob.targets, squared=True)
    assert sq.objective(a) == pytest.approx(float(np.sum((prob.targets - E) ** 2)), rel=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.permutations(range(6)))
def test_objective_permutation_symmetric(seed, perm):
    prob, *_ = random_ip_instance(seed)
    a = make_rng(seed).integers(3, size=6)
    permuted = AllocationProblem(prob.contrib[list(perm)], prob.targets)
    assert permuted.objective(a[list(perm)]) == pytest.approx(prob.objective(a), rel=1e-13)


def test_exact_single_traveler_is_argmin(default_net, default_catalog):
    prob, _ = single_traveler_problem(default_net, default_catalog, 0.6)
    prob.targets = np.random.default_rng(0).uniform(0, 1, default_net.n_edges)
    vals = [prob.objective([k]) for k in range(3)]
    assert solve_exact(prob).choice[0] == int(np.argmin(vals))
    assert solve_local_search(prob, seed=1).objective == solve_exact(prob).objective


@pytest.mark.parametrize("seed", [0, 1, 2, 21, 34, 35])
def test_exact_matches_independent_enumeration(seed):
    prob, oracle, trav, cat, net = random_ip_instance(seed)
    ex = solve_exact(prob)
    val, choice = enumerate_optimum(oracle, trav, cat, net, prob.targets)
    assert ex.objective == pytest.approx(val, rel=1e-12)
    assert independent_objective(oracle, trav, cat, net, prob.targets, ex.choice) == pytest.approx(val, rel=1e-12)
    assert prob.objective(choice) == pytest.approx(ex.objective, rel=1e-12)


def test_exact_zero_when_targets_realizable(default_net, default_catalog):
    pop = sample_population(default_catalog.demands[:3], 2, seed=4)
    oracle = ComplianceOracle.perfect(len(pop), 3)
    prob = AllocationProblem.build(oracle, pop, default_catalog, default_net, np.zeros(default_net.n_edges))
    prob.targets = prob.expected_counts([2, 0, 1, 1, 0, 2])
    assert solve_exact(prob).objective == pytest.approx(0.0, abs=1e-15)


def test_exact_tie_break_lexicographic():
    contrib = np.zeros((2, 3, 4))
    prob = AllocationProblem(contrib, np.ones(4))
    assert list(solve_exact(prob).choice) == [0, 0]


def test_exact_budget():
    prob, *_ = random_ip_instance(0)
    with pytest.raises(BudgetExceeded, match="solve_local_search"):
        solve_exact(prob, budget=100)


@pytest.mark.parametrize("n", [4, 6, 8])
def test_local_search_close_to_exact(n):
    ratios = []
    for seed in range(15):
        prob, *_ = random_ip_instance(100 + seed, n)
        ex, ls = solve_exact(prob), solve_local_search(prob, seed=seed)
        assert ex.objective <= ls.objective + 1e-12
        ratios.append(ls.objective / ex.objective)
    assert max(ratios) <= 1.02
    assert np.mean(np.isclose(ratios, 1.0, rtol=0, atol=1e-12)) >= 0.8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_local_search_history_and_cache(seed):
    prob, *_ = random_ip_instance(seed, 8)
    res = _local_search_once(prob, make_rng(seed), kicks=10)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 0)
    assert res.objective <= h[0] + 1e-12
    assert res.drift <= 1e-9
    assert res.objective == prob.objective(res.choice)


def test_local_search_deterministic():
    prob, *_ = random_ip_instance(9, 8)
    a, b = solve_local_search(prob, seed=3), solve_local_search(prob, seed=3)
    assert np.array_equal(a.choice, b.choice)
    with pytest.raises(ValueError):
        solve_local_search(prob, restarts=0)


def test_known_oracle_is_true_compliance_probability(base_ctx):
    pop = sample_population(base_ctx.catalog.demands, 2, seed=5)
    o = ComplianceOracle.known(pop, base_ctx.net, base_ctx.catalog, base_ctx.edge_times)
    o_full = ComplianceOracle.known(pop, base_ctx.net, base_ctx.catalog, base_ctx.edge_times, full_softmax=True)
    for n, t in enumerate(pop):
        ps = base_ctx.catalog.paths[t.demand]
        for k in range(3):
            p = choice_probabilities(t, base_ctx.net, ps, k, base_ctx.edge_times)
            assert o.phi[n, k] == pytest.approx(p[k], rel=1e-13)
            np.testing.assert_allclose(o_full.distribution(n, k), p, rtol=1e-13)
            assert o.distribution(n, k)[k] == pytest.approx(p[k], rel=1e-13)


def test_learned_oracle_uses_model(base_ctx):
    pop = sample_population(base_ctx.catalog.demands, 1, seed=5)
    schema = FeatureSchema.from_catalog(base_ctx.catalog)
    from routecomply.compliance import DecisionTree

    stump = DecisionTree(*(np.array([x]) for x in (-1, 0.0, -1, -1, 0.8, 1)))
    model = RandomForestModel([stump], schema)
    o = ComplianceOracle.learned(model, pop, base_ctx.net, base_ctx.catalog)
    assert o.phi.shape == (len(pop), 3) and np.all(o.phi == 0.8)


def test_assignment_csv(base_ctx):
    pop = sample_population(base_ctx.catalog.demands, 1, seed=5)
    o = ComplianceOracle.perfect(len(pop), 3)
    prob = AllocationProblem.build(o, pop, base_ctx.catalog, base_ctx.net, base_ctx.targets, base_ctx.edge_scale)
    res = solve_local_search(prob, seed=0, restarts=2)
    lines = res.to_csv(pop, base_ctx.catalog, o, "perfect").splitlines()
    assert lines[0] == "traveler,recommended_path,phi_hat,scenario"
    assert len(lines) == len(pop) + 1
    first = lines[1].split(",")
    assert int(first[1]) == base_ctx.catalog.path_id(pop[0].demand, int(res.choice[0])) and first[3] == "perfect"
