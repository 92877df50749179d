"""Ground-truth driver simulator.

Travelers weigh risk, normalised travel time, toll, and a penalty for
ignoring the recommendation, then pick a candidate path by a Boltzmann
(softmax) rule. Preference weights come from a two-coordinate latent
"demographic" model; see :class:`LatentModel`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .netcore import Network, Path, PathCatalog
from .rng import derive_seed, make_rng

HISTORY_SCHEMA = "routecomply-history/1"
POLICIES = ("random", "shortest")
DEFAULT_RATIONALITY = 10.0


@dataclass(frozen=True)
class LatentModel:
    """Affine map from latent coordinates ``u`` in [0,1]^2 to preferences.

    ``raw_k = base_k + coef_k . u + N(0, noise^2)`` for risk, time and toll,
    clipped at zero and normalised to the simplex. The adherence weight is
    ``theta4_max * clip(base + coef . u, 0, 1)``, which spans
    ``[0, theta4_max]``.
    """

    risk: tuple[float, float, float] = (0.6, 0.3, 0.0)
    time: tuple[float, float, float] = (0.1, -0.1, 0.1)
    toll: tuple[float, float, float] = (0.1, 0.0, 0.3)
    adherence: tuple[float, float, float] = (-0.1, 0.25, 0.85)
    noise: float = 0.1
    latent_spread: float = 1.0
    theta4_max: float = 2.0

    def theta4(self, latent) -> np.ndarray:
        latent = np.asarray(latent, dtype=float)
        a = np.asarray(self.adherence)
        return self.theta4_max * np.clip(a[0] + latent @ a[1:], 0.0, 1.0)


@dataclass
class Traveler:
    id: int
    demand: int
    origin: int
    destination: int
    latent: np.ndarray
    theta: np.ndarray  # (risk, time, toll, adherence)
    rationality: float = DEFAULT_RATIONALITY
    weight: float = 1.0  # vehicles/second carried by this traveler

    @property
    def features(self) -> np.ndarray:
        return np.concatenate(([self.origin, self.destination], self.latent))


@dataclass
class ObservationRecord:
    day: int
    traveler: int
    origin: int
    destination: int
    latent: tuple[float, ...]
    candidates: tuple[int, ...]
    recommended: int
    chosen: int

    @property
    def label(self) -> int:
        return int(self.chosen == self.recommended)


@dataclass
class HistoryDataset:
    records: list[ObservationRecord]
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=int)

    def subset(self, idx) -> "HistoryDataset":
        return HistoryDataset([self.records[i] for i in idx], dict(self.provenance))


def sample_population(
    demands,
    n_per_demand: int,
    seed,
    latent: LatentModel | None = None,
    rationality: float = DEFAULT_RATIONALITY,
    id_offset: int = 0,
) -> list[Traveler]:
    """Draw ``n_per_demand`` travelers for each demand, in demand order."""
    if n_per_demand < 1:
        raise ValueError("n_per_demand must be at least 1")
    model = latent or LatentModel()
    rng = make_rng(seed)
    n = n_per_demand * len(demands)
    u = 0.5 + model.latent_spread * (rng.uniform(0.0, 1.0, size=(n, 2)) - 0.5)
    eps = rng.normal(0.0, 1.0, size=(n, 3)) * model.noise

    coefs = np.array([model.risk, model.time, model.toll])  # (3, 3): base, c1, c2
    raw = coefs[:, 0] + u @ coefs[:, 1:].T + eps
    raw = np.clip(raw, 0.0, None)
    sums = raw.sum(axis=1, keepdims=True)
    # all-zero rows fall back to equal weights
    w = np.where(sums > 0, raw / np.where(sums > 0, sums, 1.0), 1.0 / 3.0)
    theta4 = model.theta4(u)

    travelers = []
    for i in range(n):
        m = i // n_per_demand
        d = demands[m]
        travelers.append(
            Traveler(
                id=id_offset + i,
                demand=m,
                origin=d.origin,
                destination=d.destination,
                latent=u[i].copy(),
                theta=np.append(w[i], theta4[i]),
                rationality=rationality,
                weight=d.rate / n_per_demand,
            )
        )
    return travelers


def base_path_terms(traveler: Traveler, net: Network, paths: Sequence[Path], edge_times) -> np.ndarray:
    """Per-path cost without the adherence penalty."""
    th = traveler.theta
    per_edge = th[0] * net.risk + th[1] * np.asarray(edge_times) / net.max_time + th[2] * net.toll
    return np.array([per_edge[list(p.edge_ids)].sum() for p in paths])


def path_cost(traveler: Traveler, net: Network, path: Path, edge_times, recommended: Path | None) -> float:
    """Total cost of ``path`` for ``traveler``; ``recommended=None`` drops the adherence term."""
    cost = base_path_terms(traveler, net, [path], edge_times)[0]
    if recommended is not None and path != recommended:
        cost += traveler.theta[3]
    return float(cost)


def softmax(costs, rationality: float) -> np.ndarray:
    z = -rationality * np.asarray(costs, dtype=float)
    z -= z.max()
    p = np.exp(z)
    return p / p.sum()


def choice_probabilities(
    traveler: Traveler,
    net: Network,
    paths: Sequence[Path],
    recommended: int | None,
    edge_times,
) -> np.ndarray:
    """Boltzmann choice distribution over ``paths``.

    ``recommended`` is an index into ``paths``; ``None`` means no
    recommendation, so nobody pays an adherence penalty.
    """
    if len(paths) < 2:
        raise ValueError("need at least two candidate paths")
    costs = base_path_terms(traveler, net, paths, edge_times)
    if recommended is not None:
        if not 0 <= recommended < len(paths):
            raise ValueError("recommended path outside candidate set")
        penalty = np.full(len(paths), traveler.theta[3])
        penalty[recommended] = 0.0
        costs = costs + penalty
    return softmax(costs, traveler.rationality)


def choice_matrix(traveler: Traveler, net: Network, paths: Sequence[Path], edge_times) -> np.ndarray:
    """Row ``k`` is the choice distribution when candidate ``k`` is recommended."""
    costs = base_path_terms(traveler, net, paths, edge_times)
    K = len(paths)
    pen = np.where(np.eye(K, dtype=bool), 0.0, traveler.theta[3])
    z = -traveler.rationality * (costs[None, :] + pen)
    z -= z.max(axis=1, keepdims=True)
    P = np.exp(z)
    return P / P.sum(axis=1, keepdims=True)


def draw_choice(probs, u: float) -> int:
    """Inverse-CDF draw with a pre-sampled uniform ``u`` (common random numbers)."""
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


def simulate_day(
    net: Network,
    catalog: PathCatalog,
    travelers: Sequence[Traveler],
    recommendations: Sequence[int | None],
    seed,
    day: int = 0,
    prior_flow=None,
):
    """Sample one day of choices.

    Edge times are evaluated once at base flow plus ``prior_flow`` (the
    previous day's controlled flow, zero if absent). ``recommendations[i]``
    is a candidate index for traveler ``i``, or ``None`` for selfish routing.
    Traveler ``i`` uses the ``i``-th uniform of the day's stream, so two
    recommendation plans compared under the same seed share randomness.

    Returns ``(records, realized_edge_flows, chosen_indices)``.
    """
    if len(recommendations) != len(travelers):
        raise ValueError("one recommendation per traveler is required")
    prior = np.zeros(net.n_edges) if prior_flow is None else np.asarray(prior_flow, dtype=float)
    times = net.latency(prior)
    uniforms = make_rng(seed).uniform(size=len(travelers))

    records = []
    chosen = np.empty(len(travelers), dtype=int)
    flows = np.zeros(net.n_edges)
    for i, (trav, rec) in enumerate(zip(travelers, recommendations)):
        cands = catalog.paths[trav.demand]
        probs = choice_probabilities(trav, net, cands, rec, times)
        k = draw_choice(probs, uniforms[i])
        chosen[i] = k
        flows[list(cands[k].edge_ids)] += trav.weight
        if rec is not None:
            ids = tuple(catalog.path_id(trav.demand, j) for j in range(len(cands)))
            records.append(
                ObservationRecord(
                    day=day,
                    traveler=trav.id,
                    origin=trav.origin,
                    destination=trav.destination,
                    latent=tuple(float(v) for v in trav.latent),
                    candidates=ids,
                    recommended=ids[rec],
                    chosen=ids[k],
                )
            )
    return records, flows, chosen


def recommend_policy(policy: str, travelers, catalog: PathCatalog, rng) -> list[int]:
    if policy == "random":
        return [int(rng.integers(len(catalog.paths[t.demand]))) for t in travelers]
    if policy == "shortest":
        return [0 for _ in travelers]
    raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")


def generate_history(
    net: Network,
    catalog: PathCatalog,
    days: int,
    n_per_demand: int,
    seed: int,
    policy: str = "random",
    latent: LatentModel | None = None,
    rationality: float = DEFAULT_RATIONALITY,
) -> HistoryDataset:
    """Simulate ``days`` days, each with a freshly sampled population.

    Edge times on day ``d`` see the controlled flow realised on day ``d-1``.
    """
    if days < 1:
        raise ValueError("days must be at least 1")
    latent = latent or LatentModel()
    provenance = {
        "schema": HISTORY_SCHEMA,
        "days": days,
        "n_per_demand": n_per_demand,
        "seed": int(seed),
        "policy": policy,
        "rationality": rationality,
        "latent_model": asdict(latent),
    }
    if not catalog.demands:
        return HistoryDataset([], provenance)

    records: list[ObservationRecord] = []
    prior = np.zeros(net.n_edges)
    per_day = n_per_demand * len(catalog.demands)
    for day in range(days):
        pop = sample_population(
            catalog.demands,
            n_per_demand,
            derive_seed(seed, "history-population", day),
            latent,
            rationality,
            id_offset=day * per_day,
        )
        recs = recommend_policy(policy, pop, catalog, make_rng(derive_seed(seed, "history-policy", day)))
        day_records, prior, _ = simulate_day(
            net, catalog, pop, recs, derive_seed(seed, "history-choice", day), day=day, prior_flow=prior
        )
        records.extend(day_records)
    return HistoryDataset(records, provenance)


HISTORY_COLUMNS = (
    "day",
    "traveler",
    "origin",
    "destination",
    "latent",
    "candidates",
    "recommended",
    "chosen",
    "label",
)


def dumps_history(ds: HistoryDataset) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={HISTORY_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for r in ds.records:
        w.writerow(
            [
                r.day,
                r.traveler,
                r.origin,
                r.destination,
                " ".join(repr(v) for v in r.latent),
                " ".join(str(c) for c in r.candidates),
                r.recommended,
                r.chosen,
                r.label,
            ]
        )
    return buf.getvalue()


def loads_history(text: str) -> HistoryDataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema="):
        raise ValueError("missing history schema line")
    schema = lines[0].split("=", 1)[1].strip()
    if schema != HISTORY_SCHEMA:
        raise ValueError(f"unsupported history schema {schema!r}")
    reader = csv.DictReader(lines[1:])
    records = []
    for row in reader:
        rec = ObservationRecord(
            day=int(row["day"]),
            traveler=int(row["traveler"]),
            origin=int(row["origin"]),
            destination=int(row["destination"]),
            latent=tuple(float(v) for v in row["latent"].split()),
            candidates=tuple(int(v) for v in row["candidates"].split()),
            recommended=int(row["recommended"]),
            chosen=int(row["chosen"]),
        )
        if rec.label != int(row["label"]):
            raise ValueError(f"inconsistent label in row for traveler {rec.traveler}")
        records.append(rec)
    return HistoryDataset(records, {"schema": schema})


def with_adherence(travelers: Sequence[Traveler], theta4: float) -> list[Traveler]:
    """Copies of ``travelers`` with the adherence weight overridden."""
    out = []
    for t in travelers:
        th = t.theta.copy()
        th[3] = theta4
        out.append(replace(t, theta=th))
    return out
