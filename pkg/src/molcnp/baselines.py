"""Supervised QSAR baselines on binary fingerprints.

* k-nearest neighbours (``k=5``, Hamming) and fingerprint similarity search
  (``k=1``, Tanimoto);
* a random forest of binary-split regression trees;
* a plain feed-forward regressor with six linear layers;
* a multi-output network pretrained on many functions, then fine-tuned on
  one.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from molcnp import chem, kernels, nn
from molcnp.errors import EmptyTrainingSet, KTooLarge, NonFiniteLoss, UnknownFunction

PREDICTION_COLUMNS = ("function_id", "molecule_id", "model", "n_train_or_context", "prediction", "variance")


def _as_bits(x) -> np.ndarray:
    return np.ascontiguousarray(np.atleast_2d(np.asarray(x)).astype(np.uint8))


# ---------------------------------------------------------------------------
# k-nearest neighbours


@dataclass
class KnnModel:
    train_x: np.ndarray
    train_y: np.ndarray
    k: int = 5
    metric: str = "hamming"
    train_ids: Sequence | None = None

    def __post_init__(self):
        self.train_x = _as_bits(self.train_x)
        self.train_y = np.asarray(self.train_y, dtype=np.float64)
        n = len(self.train_y)
        if n == 0:
            raise EmptyTrainingSet("KNN needs at least one training point")
        if not 1 <= self.k <= n:
            raise KTooLarge(f"k={self.k} with {n} training points")
        if self.metric not in ("hamming", "tanimoto"):
            raise ValueError(f"unknown metric {self.metric!r}")

    def neighbors(self, query_x) -> np.ndarray:
        """Indices of the k nearest training rows per query row.

        Distance ties go to the smaller training id (row index by default).
        """
        q = _as_bits(query_x)
        if self.metric == "hamming":
            key = chem.pairwise_hamming(q, self.train_x).astype(np.float64)
        else:
            key = -chem.pairwise_tanimoto(q, self.train_x)
        if self.train_ids is None:
            tie = np.arange(len(self.train_y))
        else:
            tie = np.argsort(np.argsort(np.asarray(self.train_ids), kind="stable"), kind="stable")
        out = np.empty((q.shape[0], self.k), dtype=np.int64)
        for i in range(q.shape[0]):
            out[i] = np.lexsort((tie, key[i]))[: self.k]
        return out

    def predict(self, query_x) -> np.ndarray:
        return self.train_y[self.neighbors(query_x)].mean(axis=1)


def knn_fit_predict(train_x, train_y, query_x, k: int = 5, metric: str = "hamming", train_ids=None) -> np.ndarray:
    return KnnModel(train_x, train_y, k, metric, train_ids).predict(query_x)


def fss_fit_predict(train_x, train_y, query_x, train_ids=None) -> np.ndarray:
    """Fingerprint similarity search: label of the most Tanimoto-similar point."""
    return knn_fit_predict(train_x, train_y, query_x, 1, "tanimoto", train_ids)


# ---------------------------------------------------------------------------
# Random forest


@dataclass
class ForestConfig:
    n_estimators: int = 200
    max_features: float = 1.0 / 3.0
    min_samples_leaf: int = 2
    bootstrap: bool = True


@dataclass
class Tree:
    feature: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, x) -> np.ndarray:
        return kernels.tree_predict(self.feature, self.left, self.right, self.value, _as_bits(x))


@dataclass
class ForestModel:
    trees: list[Tree]
    nbits: int
    config: ForestConfig = field(default_factory=ForestConfig)


def n_candidate_features(nbits: int, fraction: float) -> int:
    return max(1, min(nbits, int(nbits * fraction)))


def forest_plan(n_samples: int, config: ForestConfig, rng: np.random.Generator) -> list[tuple[np.ndarray, int]]:
    """Per-tree ``(bootstrap rows, tree seed)``, derived from (base seed, tree index)."""
    base = int(rng.integers(0, 2**63 - 1))
    plan = []
    for t in range(config.n_estimators):
        tree_rng = np.random.default_rng([base, t])
        if config.bootstrap:
            rows = tree_rng.integers(0, n_samples, size=n_samples)
        else:
            rows = np.arange(n_samples)
        plan.append((rows.astype(np.int64), int(tree_rng.integers(0, 2**63 - 1))))
    return plan


def rf_fit(train_x, train_y, config: ForestConfig | None = None, rng: np.random.Generator | None = None) -> ForestModel:
    config = config or ForestConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    x = _as_bits(train_x)
    y = np.ascontiguousarray(train_y, dtype=np.float64)
    if len(y) == 0:
        raise EmptyTrainingSet("random forest needs at least one training point")
    k = n_candidate_features(x.shape[1], config.max_features)
    trees = []
    for rows, tree_seed in forest_plan(len(y), config, rng):
        arrays = kernels.build_tree(x, y, rows, k, config.min_samples_leaf, tree_seed)
        trees.append(Tree(*arrays))
    return ForestModel(trees, x.shape[1], config)


def rf_predict(model: ForestModel, query_x) -> np.ndarray:
    q = _as_bits(query_x)
    total = np.zeros(q.shape[0])
    for tree in model.trees:
        total += tree.predict(q)
    return total / len(model.trees)


# ---------------------------------------------------------------------------
# Feed-forward regressors


@dataclass
class NnConfig:
    hidden: tuple[int, ...] = (256, 256, 256, 256, 256)
    epochs: int = 300
    lr: float = 1e-3
    pretrain_epochs: int = 300
    finetune_epochs: int = 200
    finetune_lr_factor: float = 0.1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)


def _standardize(y: np.ndarray) -> tuple[float, float]:
    std = float(y.std()) if len(y) > 1 else 0.0
    return float(y.mean()), std if std > 0 else 1.0


def _fit_masked(net: nn.DenseNet, x, y, mask, epochs: int, lr: float, params=None, grad_filter=None) -> None:
    """Full-batch Adam on masked mean squared error (normalized targets)."""
    params = net.parameters() if params is None else params
    adam = nn.AdamState.for_params(params, lr=lr)
    denom = max(float(mask.sum()), 1.0)
    for _ in range(epochs):
        acts = nn.forward_cache(net, x)
        resid = (acts[-1] - y) * mask
        loss = float((resid * resid).sum() / denom)
        if not np.isfinite(loss):
            raise NonFiniteLoss("regressor loss is not finite")
        grads = nn.backward_cache(net, acts, 2.0 * resid / denom, need_input=False).arrays()
        nn.adam_update(params, grads, adam)


def _predict_rows(net: nn.DenseNet, query_x) -> np.ndarray:
    """First output per query row; identical rows give bit-identical outputs."""
    q = np.atleast_2d(np.asarray(query_x, dtype=np.float64))
    uniq, inverse = np.unique(q, axis=0, return_inverse=True)
    return nn.forward_cache(net, uniq)[-1][:, 0][inverse.reshape(-1)]


def nn_fit_predict(train_x, train_y, query_x, config: NnConfig | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    config = config or NnConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    y = np.asarray(train_y, dtype=np.float64)
    if len(y) == 0:
        raise EmptyTrainingSet("regressor needs at least one training point")
    mean, std = _standardize(y)
    net = nn.init_dense([x.shape[1], *config.hidden, 1], rng)
    target = ((y - mean) / std)[:, None]
    _fit_masked(net, x, target, np.ones_like(target), config.epochs, config.lr)
    return _predict_rows(net, query_x) * std + mean


@dataclass
class MultiOutputNet:
    net: nn.DenseNet
    function_ids: list[str]
    y_mean: float
    y_std: float

    @property
    def output_dim(self) -> int:
        return self.net.output_dim


def _head_rows(function_ids: Sequence[str], fan_in: int, base: int) -> tuple[np.ndarray, np.ndarray]:
    bound = np.sqrt(6.0 / fan_in)
    rows = []
    for fid in function_ids:
        r = np.random.default_rng([base, zlib.crc32(fid.encode())])
        rows.append(r.uniform(-bound, bound, size=fan_in))
    return np.array(rows).reshape(len(function_ids), fan_in), np.zeros(len(function_ids))


def pretrain_multi_output(x, scores: np.ndarray, function_ids: Sequence[str], config: NnConfig, rng: np.random.Generator) -> MultiOutputNet:
    """Train one output per function on the observed cells (NaN = masked)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    scores = np.asarray(scores, dtype=np.float64)
    mask = ~np.isnan(scores)
    if not mask.any():
        raise EmptyTrainingSet("no observed scores to pretrain on")
    mean, std = _standardize(scores[mask])
    trunk = nn.init_dense([x.shape[1], *config.hidden], rng, ["relu"] * len(config.hidden))
    base = int(rng.integers(0, 2**63 - 1))
    w, b = _head_rows(function_ids, config.hidden[-1], base)
    net = nn.DenseNet(trunk.layers + [nn.Layer(w, b, "identity")])
    target = np.where(mask, (scores - mean) / std, 0.0)
    _fit_masked(net, x, target, mask.astype(np.float64), config.pretrain_epochs, config.lr)
    return MultiOutputNet(net, list(function_ids), mean, std)


def finetune(pretrained: MultiOutputNet, train_x, train_y, query_x, config: NnConfig, rng: np.random.Generator) -> np.ndarray:
    """Swap the head for a single fresh output and train every layer on one function."""
    x = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    y = np.asarray(train_y, dtype=np.float64)
    if len(y) == 0:
        raise EmptyTrainingSet("fine-tuning needs at least one training point")
    net = pretrained.net.copy()
    fan_in = net.layers[-1].weight.shape[1]
    bound = np.sqrt(6.0 / fan_in)
    net.layers[-1] = nn.Layer(rng.uniform(-bound, bound, size=(1, fan_in)), np.zeros(1), "identity")
    target = ((y - pretrained.y_mean) / pretrained.y_std)[:, None]
    _fit_masked(net, x, target, np.ones_like(target), config.finetune_epochs, config.lr * config.finetune_lr_factor)
    return _predict_rows(net, query_x) * pretrained.y_std + pretrained.y_mean


def pretrain_finetune(table, split, target_function: str, config: NnConfig | None = None, rng: np.random.Generator | None = None, train_molecules=None) -> np.ndarray:
    """Pretrain on (dtrain x ftrain), fine-tune on the target's dtrain scores,
    predict every dtest molecule (in ``split.dtest`` order)."""
    config = config or NnConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if target_function not in split.ftest or target_function not in table.function_ids:
        raise UnknownFunction(f"{target_function!r} is not an ftest function of this table")
    rows = table.molecule_index(split.dtrain)
    cols = [table.function_index(f) for f in split.ftrain]
    pretrained = pretrain_multi_output(table.fingerprints[rows], table.scores[np.ix_(rows, cols)], split.ftrain, config, rng)
    obs = table.observations(target_function, split.dtrain if train_molecules is None else train_molecules)
    test_rows = table.molecule_index(split.dtest)
    return finetune(pretrained, obs.x, obs.y, table.fingerprints[test_rows], config, rng)


# ---------------------------------------------------------------------------
# Shared predictions CSV


def write_predictions_csv(path, rows: Sequence[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for row in rows:
            var = row.get("variance")
            writer.writerow(
                [
                    row["function_id"],
                    row["molecule_id"],
                    row["model"],
                    int(row["n_train_or_context"]),
                    repr(float(row["prediction"])),
                    "" if var is None else repr(float(var)),
                ]
            )


def read_predictions_csv(path) -> list[dict]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "function_id": row["function_id"],
                    "molecule_id": row["molecule_id"],
                    "model": row["model"],
                    "n_train_or_context": int(row["n_train_or_context"]),
                    "prediction": float(row["prediction"]),
                    "variance": float(row["variance"]) if row["variance"] else None,
                }
            )
    return out
