"""Compliance-aware route allocation.

Each traveler gets exactly one recommended candidate path. Given a
recommendation, a traveler's path distribution follows the uniform-deviation
model: the recommended path with probability ``phi``, every other candidate
with ``(1 - phi) / (K - 1)``. The planner picks recommendations so the
expected edge occupancy tracks the system-optimal target.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .behavior import Traveler, choice_matrix
from .compliance import RandomForestModel, featurize_parts, path_attributes
from .netcore import Network, PathCatalog, path_incidence
from .rng import derive_seed, make_rng

ORACLES = ("perfect", "known", "learned")
DEFAULT_BUDGET = 10**6


def compliance_distribution(phi_hat: float, n_candidates: int, recommended: int) -> np.ndarray:
    """Choice distribution over ``n_candidates`` paths given a recommendation."""
    if n_candidates < 2:
        raise ValueError("need at least two candidate paths")
    if not 0 <= recommended < n_candidates:
        raise ValueError("recommendation outside candidate set")
    if not 0.0 <= phi_hat <= 1.0:
        raise ValueError("compliance probability must lie in [0, 1]")
    dist = np.full(n_candidates, (1.0 - phi_hat) / (n_candidates - 1))
    dist[recommended] = phi_hat
    return dist


@dataclass
class ComplianceOracle:
    """Planner-side compliance model for one population.

    ``phi[n, k]`` is the predicted probability that traveler ``n`` follows
    candidate ``k`` when it is recommended. ``matrices``, when present,
    replaces the uniform-deviation distributions with full per-recommendation
    choice distributions (``matrices[n, k]`` sums to one).
    """

    variant: str
    phi: np.ndarray
    matrices: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in ORACLES:
            raise ValueError(f"unknown oracle {self.variant!r}")
        if np.any(self.phi < 0) or np.any(self.phi > 1):
            raise ValueError("compliance probabilities must lie in [0, 1]")

    @classmethod
    def perfect(cls, n_travelers: int, n_candidates: int) -> "ComplianceOracle":
        return cls("perfect", np.ones((n_travelers, n_candidates)))

    @classmethod
    def known(
        cls,
        travelers: Sequence[Traveler],
        net: Network,
        catalog: PathCatalog,
        edge_times,
        full_softmax: bool = False,
    ) -> "ComplianceOracle":
        mats = np.array([choice_matrix(t, net, catalog.paths[t.demand], edge_times) for t in travelers])
        phi = np.clip(np.diagonal(mats, axis1=1, axis2=2).copy(), 0.0, 1.0)
        return cls("known", phi, mats if full_softmax else None)

    @classmethod
    def learned(
        cls,
        model: RandomForestModel,
        travelers: Sequence[Traveler],
        net: Network,
        catalog: PathCatalog,
    ) -> "ComplianceOracle":
        rows = []
        K = len(catalog.paths[travelers[0].demand]) if travelers else 0
        for t in travelers:
            ids = [catalog.path_id(t.demand, k) for k in range(len(catalog.paths[t.demand]))]
            for pid in ids:
                attrs = path_attributes(net, catalog, ids, pid)
                rows.append(featurize_parts(model.schema, t.origin, t.destination, t.latent, attrs))
        if not rows:
            return cls("learned", np.zeros((0, K)))
        phi = model.predict_proba(np.array(rows)).reshape(len(travelers), K)
        return cls("learned", phi)

    def distribution(self, n: int, recommended: int) -> np.ndarray:
        if self.matrices is not None:
            return self.matrices[n, recommended]
        return compliance_distribution(float(self.phi[n, recommended]), self.phi.shape[1], recommended)

    def distributions(self) -> np.ndarray:
        """Array ``D[n, k, p]``: probability of path ``p`` given recommendation ``k``."""
        if self.matrices is not None:
            return self.matrices
        N, K = self.phi.shape
        if K < 2:
            raise ValueError("need at least two candidate paths")
        D = np.repeat(((1.0 - self.phi) / (K - 1))[:, :, None], K, axis=2)
        idx = np.arange(K)
        D[:, idx, idx] = self.phi
        return D


@dataclass
class AllocationProblem:
    """Precomputed per-(traveler, recommendation) expected edge contributions.

    ``contrib[n, k, e]`` is traveler ``n``'s expected contribution to edge
    ``e`` when recommended candidate ``k``: weight x edge scale x
    probability mass on paths through ``e``.
    """

    contrib: np.ndarray
    targets: np.ndarray
    squared: bool = False

    @property
    def n_travelers(self) -> int:
        return self.contrib.shape[0]

    @property
    def n_candidates(self) -> int:
        return self.contrib.shape[1]

    @classmethod
    def build(
        cls,
        oracle: ComplianceOracle,
        travelers: Sequence[Traveler],
        catalog: PathCatalog,
        net: Network,
        targets,
        edge_scale=None,
        weights=None,
        squared: bool = False,
    ) -> "AllocationProblem":
        targets = np.asarray(targets, dtype=float)
        scale = np.ones(net.n_edges) if edge_scale is None else np.asarray(edge_scale, dtype=float)
        w = np.array([t.weight for t in travelers]) if weights is None else np.asarray(weights, dtype=float)
        D = oracle.distributions()
        inc = {m: path_incidence(net, ps).T for m, ps in enumerate(catalog.paths)}  # (K, E)
        contrib = np.empty((len(travelers), D.shape[1], net.n_edges))
        for n, t in enumerate(travelers):
            contrib[n] = w[n] * (D[n] @ inc[t.demand]) * scale
        return cls(contrib, targets, squared)

    def expected_counts(self, assignment) -> np.ndarray:
        a = np.asarray(assignment, dtype=int)
        if self.n_travelers == 0:
            return np.zeros_like(self.targets)
        return self.contrib[np.arange(self.n_travelers), a].sum(axis=0)

    def objective(self, assignment) -> float:
        return allocation_objective(self.expected_counts(assignment), self.targets, self.squared)


def expected_edge_counts(problem: AllocationProblem, assignment) -> np.ndarray:
    return problem.expected_counts(assignment)


def allocation_objective(expected, targets, squared: bool = False) -> float:
    """``sum_e |L_e - E_e|`` (or the squared deviation)."""
    dev = np.asarray(targets, dtype=float) - np.asarray(expected, dtype=float)
    return float(np.sum(dev**2) if squared else np.sum(np.abs(dev)))


def _objective_rows(E, targets, squared):
    dev = targets - E
    return np.sum(dev**2, axis=-1) if squared else np.sum(np.abs(dev), axis=-1)


@dataclass
class Assignment:
    choice: np.ndarray  # recommended candidate index per traveler
    objective: float
    history: list[float] = field(default_factory=list)
    drift: float = 0.0  # |cached - recomputed| objective after the search

    def to_csv(self, travelers, catalog: PathCatalog, oracle: ComplianceOracle | None, tag: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["traveler", "recommended_path", "phi_hat", "scenario"])
        for n, (t, k) in enumerate(zip(travelers, self.choice)):
            phi = "" if oracle is None else repr(float(oracle.phi[n, k]))
            w.writerow([t.id, catalog.path_id(t.demand, int(k)), phi, tag])
        return buf.getvalue()


class BudgetExceeded(RuntimeError):
    pass


def solve_exact(problem: AllocationProblem, budget: int = DEFAULT_BUDGET, chunk: int = 4096) -> Assignment:
    """Exhaustive search over all ``K^N`` recommendation vectors.

    Vectors are visited in lexicographic order and only a strictly better
    objective replaces the incumbent, so ties resolve to the smallest vector.
    """
    N, K = problem.n_travelers, problem.n_candidates
    total = K**N
    if total > budget:
        raise BudgetExceeded(
            f"{K}^{N} = {total} assignments exceeds the budget {budget}; use solve_local_search"
        )
    if N == 0:
        return Assignment(np.zeros(0, dtype=int), problem.objective([]))
    powers = K ** np.arange(N - 1, -1, -1)
    best_val, best_idx = np.inf, 0
    for start in range(0, total, chunk):
        ids = np.arange(start, min(start + chunk, total))
        digits = (ids[:, None] // powers[None, :]) % K
        E = np.zeros((len(ids), problem.targets.size))
        for n in range(N):
            E += problem.contrib[n, digits[:, n]]
        vals = _objective_rows(E, problem.targets, problem.squared)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best_idx = float(vals[i]), int(ids[i])
    choice = (best_idx // powers) % K
    return Assignment(choice.astype(int), problem.objective(choice))


def _descend(problem: AllocationProblem, E, choice, current, history, tol):
    """Best-improvement single-traveler swaps until none helps."""
    C, L = problem.contrib, problem.targets
    rows = np.arange(problem.n_travelers)
    while True:
        base = E[None, None, :] - C[rows, choice][:, None, :]
        vals = _objective_rows(base + C, L, problem.squared)
        n, k = np.unravel_index(int(np.argmin(vals)), vals.shape)
        if not vals[n, k] < current - tol:
            return E, current
        E = E - C[n, choice[n]] + C[n, k]
        choice[n] = k
        current = float(vals[n, k])
        history.append(current)


def _local_search_once(problem: AllocationProblem, rng, kicks=0, kick_size=3, tol=1e-12) -> Assignment:
    N, K = problem.n_travelers, problem.n_candidates
    L = problem.targets
    C = problem.contrib
    E = np.zeros_like(L)
    choice = np.zeros(N, dtype=int)
    # greedy construction in random order
    for n in rng.permutation(N):
        vals = _objective_rows(E[None, :] + C[n], L, problem.squared)
        k = int(np.argmin(vals))
        choice[n] = k
        E = E + C[n, k]
    current = allocation_objective(E, L, problem.squared)
    history = [current]
    E, current = _descend(problem, E, choice, current, history, tol)
    # iterated local search: re-draw a few recommendations, descend, keep only improvements
    rows = np.arange(N)
    for _ in range(kicks if N > 0 else 0):
        trial = choice.copy()
        idx = rng.choice(N, size=min(kick_size, N), replace=False)
        trial[idx] = rng.integers(K, size=len(idx))
        E2 = C[rows, trial].sum(axis=0)
        scratch = []
        E2, val = _descend(problem, E2, trial, allocation_objective(E2, L, problem.squared), scratch, tol)
        if val < current - tol:
            E, current, choice = E2, val, trial
            history.append(current)
    exact = problem.objective(choice)
    return Assignment(choice, exact, history, abs(current - exact))


def solve_local_search(problem: AllocationProblem, seed=0, restarts: int = 10, kicks: int = 30) -> Assignment:
    """Greedy construction plus best-improvement single swaps, best of ``restarts``.

    The greedy pass inserts travelers in a random order, each taking the
    recommendation that minimises the objective so far. Swaps then change
    one traveler's recommendation at a time, always the single move with
    the largest decrease, until none improves. Each restart then tries
    ``kicks`` perturbations (three random travelers re-drawn, then the same
    descent) and keeps a perturbed solution only if it is strictly better,
    so the result is never worse than the plain swap optimum.
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    if kicks < 0:
        raise ValueError("kicks must be nonnegative")
    best = None
    for r in range(restarts):
        res = _local_search_once(problem, make_rng(derive_seed(seed, "local-search", r)), kicks)
        if best is None or res.objective < best.objective:
            best = res
    return best
