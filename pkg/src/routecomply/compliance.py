"""Compliance-probability estimation with a from-scratch random forest.

Trees are CART classifiers grown on weighted Gini impurity; each leaf
stores the fraction of compliant samples that reached it, and the forest
averages those fractions.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path as FilePath
from typing import Sequence

import numpy as np

from .behavior import HistoryDataset, ObservationRecord
from .netcore import Network, PathCatalog, free_flow_cost
from .rng import derive_seed, make_rng

MODEL_FORMAT = "routecomply-forest/1"
LOGLOSS_EPS = 1e-15
PATH_FEATURES = ("length", "free_flow_time", "toll", "mean_risk", "n_edges", "rank")


@dataclass(frozen=True)
class FeatureSchema:
    """Layout of the compliance feature vector.

    One-hot origin, one-hot destination, latent coordinates, then the
    attributes of the recommended path (never the chosen one).
    """

    origins: tuple[int, ...]
    destinations: tuple[int, ...]
    n_latent: int = 2

    @classmethod
    def from_catalog(cls, catalog: PathCatalog, n_latent: int = 2) -> "FeatureSchema":
        return cls(
            tuple(sorted({d.origin for d in catalog.demands})),
            tuple(sorted({d.destination for d in catalog.demands})),
            n_latent,
        )

    @property
    def names(self) -> list[str]:
        return (
            [f"origin={o}" for o in self.origins]
            + [f"destination={d}" for d in self.destinations]
            + [f"latent{i}" for i in range(self.n_latent)]
            + [f"path_{n}" for n in PATH_FEATURES]
        )

    @property
    def dim(self) -> int:
        return len(self.origins) + len(self.destinations) + self.n_latent + len(PATH_FEATURES)

    @property
    def path_slice(self) -> slice:
        return slice(self.dim - len(PATH_FEATURES), self.dim)


def path_attributes(net: Network, catalog: PathCatalog, candidates: Sequence[int], recommended: int) -> np.ndarray:
    if recommended not in candidates:
        raise KeyError(f"recommended path {recommended} not among candidates")
    rec = catalog.get(recommended)
    e = list(rec.edge_ids)
    ff = [free_flow_cost(net, catalog.get(c)) for c in candidates]
    # stable order: equal free-flow times keep candidate order
    order = sorted(range(len(candidates)), key=lambda i: ff[i])
    rank = order.index(list(candidates).index(recommended))
    return np.array(
        [
            net.length[e].sum(),
            net.t0[e].sum(),
            net.toll[e].sum(),
            net.risk[e].mean(),
            float(len(e)),
            float(rank),
        ]
    )


def featurize_parts(schema: FeatureSchema, origin, destination, latent, path_attrs) -> np.ndarray:
    z = np.zeros(schema.dim)
    if origin not in schema.origins or destination not in schema.destinations:
        raise ValueError(f"od ({origin}, {destination}) outside the feature schema")
    z[schema.origins.index(origin)] = 1.0
    z[len(schema.origins) + schema.destinations.index(destination)] = 1.0
    k = len(schema.origins) + len(schema.destinations)
    if len(latent) != schema.n_latent:
        raise ValueError("latent dimension mismatch")
    z[k : k + schema.n_latent] = latent
    z[schema.path_slice] = path_attrs
    return z


def featurize(record: ObservationRecord, net: Network, catalog: PathCatalog, schema: FeatureSchema) -> np.ndarray:
    attrs = path_attributes(net, catalog, record.candidates, record.recommended)
    return featurize_parts(schema, record.origin, record.destination, record.latent, attrs)


def featurize_dataset(ds: HistoryDataset, net, catalog, schema) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([featurize(r, net, catalog, schema) for r in ds.records]).reshape(len(ds), schema.dim)
    return X, ds.labels.astype(float)


def split_dataset(ds: HistoryDataset, seed, fractions=(0.6, 0.2)):
    """Stratified train/validation/evaluation split.

    Sizes are ``floor(0.6 N)``, ``floor(0.2 N)`` and the remainder. Each
    (origin, destination) stratum is shuffled and cut proportionally, with
    at least one record per split when the stratum has three or more.
    Overfull splits then shed random records to underfull ones so the
    global sizes come out exact.
    """
    N = len(ds)
    if N < 10:
        raise ValueError("dataset too small to split (need at least 10 records)")
    rng = make_rng(seed)
    quotas = [math.floor(fractions[0] * N), math.floor(fractions[1] * N)]
    quotas.append(N - sum(quotas))

    strata: dict[tuple[int, int], list[int]] = {}
    for i, r in enumerate(ds.records):
        strata.setdefault((r.origin, r.destination), []).append(i)

    parts: list[list[int]] = [[], [], []]
    rest = []
    for key in sorted(strata):
        idx = np.array(strata[key])
        rng.shuffle(idx)
        n = len(idx)
        take = [math.floor(fractions[0] * n), math.floor(fractions[1] * n)]
        take.append(n - sum(take))
        if n >= 3:
            # make sure every split gets at least one record of this OD
            for j in range(3):
                if take[j] == 0:
                    donor = int(np.argmax(take))
                    take[donor] -= 1
                    take[j] += 1
        pos = 0
        for j in range(3):
            parts[j].extend(idx[pos : pos + take[j]].tolist())
            pos += take[j]

    # rebalance to the exact global quotas
    for j in range(3):
        while len(parts[j]) > quotas[j]:
            rest.append(parts[j].pop(int(rng.integers(len(parts[j])))))
    rest = sorted(rest)
    rng.shuffle(rest)
    for j in range(3):
        need = quotas[j] - len(parts[j])
        parts[j].extend(rest[:need])
        rest = rest[need:]
    return tuple(ds.subset(sorted(p)) for p in parts)


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 12
    min_leaf: int = 5
    features_per_split: int | None = None  # None: ceil(sqrt(d))


@dataclass
class DecisionTree:
    """Flattened binary tree. ``left[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=int)
        active = self.left[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            n = node[rows]
            go_left = X[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])
            active[rows] = self.left[node[rows]] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            np.array(d["feature"], dtype=int),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=int),
            np.array(d["right"], dtype=int),
            np.array(d["value"], dtype=float),
            np.array(d["n_samples"], dtype=int),
        )


def _best_split(X, y, idx, features, min_leaf):
    """Best (feature, threshold, score) by weighted Gini ``n_L G_L + n_R G_R``."""
    n = len(idx)
    pos_total = y[idx].sum()
    best = (None, None, n * (1.0 - (pos_total / n) ** 2 - (1 - pos_total / n) ** 2))
    parent = best[2]
    for f in features:
        col = X[idx, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        cum = np.cumsum(y[idx][order])
        n_left = np.arange(1, n)
        # split after position i: left = first i+1 samples
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        pl = cum[:-1]
        pr = pos_total - pl
        nl = n_left.astype(float)
        nr = n - nl
        # n * Gini = n - (pos^2 + neg^2) / n
        score = (nl - (pl**2 + (nl - pl) ** 2) / nl) + (nr - (pr**2 + (nr - pr) ** 2) / nr)
        score = np.where(valid, score, np.inf)
        i = int(np.argmin(score))
        if score[i] < best[2] - 1e-12 * max(parent, 1.0):
            thr = 0.5 * (xs[i] + xs[i + 1])
            if not xs[i] <= thr < xs[i + 1]:
                thr = xs[i]  # adjacent floats: midpoint rounds up
            best = (int(f), float(thr), float(score[i]))
    return best


def train_tree(X, y, params: TreeParams = TreeParams(), seed=0) -> DecisionTree:
    """Grow one CART tree depth-first (left subtree before right)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("cannot grow a tree on an empty sample")
    rng = make_rng(seed)
    d = X.shape[1]
    m = params.features_per_split or math.ceil(math.sqrt(d))
    m = min(m, d)

    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        count.append(len(idx))
        pure = value[node] in (0.0, 1.0)
        if depth >= params.max_depth or pure or len(idx) < 2 * params.min_leaf:
            return node
        feats = rng.choice(d, size=m, replace=False)
        f, thr, _ = _best_split(X, y, idx, feats, params.min_leaf)
        if f is None:
            return node
        mask = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return DecisionTree(
        np.array(feature, dtype=int),
        np.array(threshold, dtype=float),
        np.array(left, dtype=int),
        np.array(right, dtype=int),
        np.array(value, dtype=float),
        np.array(count, dtype=int),
    )


@dataclass
class RandomForestModel:
    trees: list[DecisionTree]
    schema: FeatureSchema
    metadata: dict = field(default_factory=dict)

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.schema.dim:
            raise ValueError(f"expected {self.schema.dim} features, got {X.shape[1]}")
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "schema": asdict(self.schema),
            "feature_names": self.schema.names,
            "metadata": self.metadata,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForestModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        s = d["schema"]
        schema = FeatureSchema(tuple(s["origins"]), tuple(s["destinations"]), s["n_latent"])
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], schema, d["metadata"])


def save_model(model: RandomForestModel, path) -> None:
    FilePath(path).write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n")


def load_model(path) -> RandomForestModel:
    return RandomForestModel.from_dict(json.loads(FilePath(path).read_text()))


def log_loss(y, p) -> float:
    y = np.asarray(y, dtype=float)
    p = np.clip(np.asarray(p, dtype=float), LOGLOSS_EPS, 1 - LOGLOSS_EPS)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def fit_ensemble(X, y, n_trees: int, params: TreeParams, seed, bootstrap: bool = True) -> list[DecisionTree]:
    trees = []
    n = len(y)
    for t in range(n_trees):
        tree_seed = derive_seed(seed, "tree", t)
        if bootstrap:
            idx = make_rng(derive_seed(seed, "bootstrap", t)).integers(0, n, size=n)
            trees.append(train_tree(X[idx], y[idx], params, tree_seed))
        else:
            trees.append(train_tree(X, y, params, tree_seed))
    return trees


DEFAULT_GRID = (
    TreeParams(max_depth=8, min_leaf=5),
    TreeParams(max_depth=12, min_leaf=5),
    TreeParams(max_depth=12, min_leaf=20),
)


def train_forest(
    X_train,
    y_train,
    X_val,
    y_val,
    schema: FeatureSchema,
    n_trees: int = 100,
    grid: Sequence[TreeParams] = DEFAULT_GRID,
    seed=0,
    bootstrap: bool = True,
) -> RandomForestModel:
    """Fit one ensemble per grid point; keep the lowest validation log-loss.

    Every grid point reuses the same seed so candidates differ only in
    their hyperparameters. Ties go to the earlier grid point.
    """
    if len(y_train) == 0 or len(y_val) == 0:
        raise ValueError("training and validation sets must be nonempty")
    X_train = np.asarray(X_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    best = None
    scores = []
    for params in grid:
        trees = fit_ensemble(X_train, y_train, n_trees, params, seed, bootstrap)
        model = RandomForestModel(trees, schema)
        loss = log_loss(y_val, model.predict_proba(X_val))
        scores.append({"params": asdict(params), "val_log_loss": loss})
        if best is None or loss < best[0]:
            best = (loss, model, params)
    loss, model, params = best
    model.metadata = {
        "seed": int(seed),
        "n_trees": n_trees,
        "bootstrap": bootstrap,
        "params": asdict(params),
        "val_log_loss": loss,
        "grid": scores,
    }
    return model


def predict_compliance(model: RandomForestModel, z) -> np.ndarray | float:
    """Mean leaf fraction across trees; ``z`` is one feature vector or a matrix."""
    z = np.asarray(z, dtype=float)
    p = model.predict_proba(z)
    return float(p[0]) if z.ndim == 1 else p


@dataclass
class EvalReport:
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    log_loss: float
    calibration: list[dict]  # bin_lo, bin_hi, mean_predicted, empirical_rate, count
    majority_baseline: float

    @property
    def confusion(self) -> np.ndarray:
        """Rows: actual (1, 0); columns: predicted (1, 0)."""
        return np.array([[self.tp, self.fn], [self.fp, self.tn]])

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["actual", "predicted_comply", "predicted_deviate"])
        w.writerow(["comply", self.tp, self.fn])
        w.writerow(["deviate", self.fp, self.tn])
        return buf.getvalue()

    def calibration_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["bin_lo", "bin_hi", "mean_predicted", "empirical_rate", "count"]
        w.writerow(cols)
        for row in self.calibration:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
        return buf.getvalue()


def evaluate_predictions(y, p, threshold: float = 0.5, n_bins: int = 10) -> EvalReport:
    y = np.asarray(y, dtype=int)
    p = np.asarray(p, dtype=float)
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    pred = (p >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    bins = np.minimum((p * n_bins).astype(int), n_bins - 1)
    calib = []
    for b in range(n_bins):
        sel = bins == b
        if sel.any():
            calib.append(
                {
                    "bin_lo": b / n_bins,
                    "bin_hi": (b + 1) / n_bins,
                    "mean_predicted": float(p[sel].mean()),
                    "empirical_rate": float(y[sel].mean()),
                    "count": int(sel.sum()),
                }
            )
    rate = y.mean()
    return EvalReport(
        accuracy=(tp + tn) / len(y),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        log_loss=log_loss(y, p),
        calibration=calib,
        majority_baseline=float(max(rate, 1 - rate)),
    )


def evaluate(model: RandomForestModel, X_eval, y_eval, **kw) -> EvalReport:
    return evaluate_predictions(y_eval, model.predict_proba(X_eval), **kw)


def tree_grid(max_depths=(8, 12), min_leafs=(5, 20)) -> list[TreeParams]:
    return [TreeParams(d, m) for d, m in itertools.product(max_depths, min_leafs)]
