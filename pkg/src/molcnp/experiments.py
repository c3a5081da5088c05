"""Experiment runners and shared metrics.

* ``run_calibration``: regression quality and held-out log-probability of a
  CNP as training proceeds, on the four (function x datapoint) quadrants;
* ``run_fewshot``: CNP against supervised baselines as the number of
  observed points of an unseen function grows;
* ``run_generalization``: plain vs. plain+QED-modified training, evaluated
  on both score classes;
* ``run_bo``: pool-based Bayesian optimization with random, greedy and
  lower-confidence-bound acquisition.

Randomness always comes from ``np.random.default_rng([seed, *cell])`` so a
cell's result does not depend on which other cells ran.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from molcnp import baselines, cnp, nn
from molcnp.data import QED_SUFFIX, SplitSpec, TaskTable, derive_modified_functions
from molcnp.errors import ConstantTruth, InsufficientObservations, LengthMismatch, PoolExhausted, UnknownFunction

METRICS = ("r2", "avg_log_prob", "rmse", "best_so_far")
REPORT_COLUMNS = ("tag", "function_id", "model", "x", "metric", "value", "dispersion", "seed", "flag")
BO_COLUMNS = ("strategy", "seed", "iteration", "molecule_id", "true_score", "best_so_far")
QUADRANTS = (("ftrain", "dtrain"), ("ftrain", "dtest"), ("ftest", "dtrain"), ("ftest", "dtest"))
ALL_FUNCTIONS = "ALL"

GRID_ROWS = ("Plain scores", "Plain and QED-modified scores")
GRID_COLUMNS = ("Plain scores", "QED-modified scores")


# ---------------------------------------------------------------------------
# Metrics


def _pair(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"lengths differ: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise LengthMismatch("empty inputs")
    return y_true, y_pred


def r2(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        raise ConstantTruth("r2 is undefined for constant y_true")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


def rmse(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def avg_log_prob(dist: cnp.PredictiveDistribution, y_true) -> float:
    y_true, means = _pair(y_true, dist.means)
    return -float(np.mean(nn.gaussian_nll(means, dist.variances, y_true)))


# ---------------------------------------------------------------------------
# Records and reports


@dataclass
class MetricRecord:
    tag: str
    function_id: str
    model: str
    x: float
    metric: str
    value: float
    dispersion: float | None = None
    seed: int | None = None
    flag: str = ""

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        self.value = float(self.value)
        if not math.isfinite(self.value):
            self.flag = "divergent"

    def sort_key(self):
        return (self.tag, self.function_id, self.model, float(self.x), self.metric, -1 if self.seed is None else self.seed)


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    f = float(v)
    return str(int(f)) if f.is_integer() and abs(f) < 2**53 else repr(f)


def emit_report(records: Sequence[MetricRecord], path, fmt: str | None = None) -> Path:
    """Write records sorted by (tag, function, model, x, metric, seed)."""
    if not records:
        raise ValueError("no records to write")
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    ordered = sorted(records, key=MetricRecord.sort_key)
    if fmt == "json":
        payload = [asdict(r) for r in ordered]
        text = json.dumps(payload, indent=1, sort_keys=True, allow_nan=True) + "\n"
        path.write_text(text)
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for r in ordered:
                writer.writerow(
                    [r.tag, r.function_id, r.model, _num(r.x), r.metric, _num(r.value), _num(r.dispersion), _num(r.seed), r.flag]
                )
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def read_report(path) -> list[MetricRecord]:
    path = Path(path)
    if path.suffix == ".json":
        return [MetricRecord(**row) for row in json.loads(path.read_text())]
    out = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                MetricRecord(
                    row["tag"],
                    row["function_id"],
                    row["model"],
                    float(row["x"]),
                    row["metric"],
                    float(row["value"]),
                    float(row["dispersion"]) if row["dispersion"] else None,
                    int(row["seed"]) if row["seed"] else None,
                    row["flag"],
                )
            )
    return out


def select(records: Iterable[MetricRecord], **match) -> list[MetricRecord]:
    return [r for r in records if all(getattr(r, k) == v for k, v in match.items())]


def series(records: Iterable[MetricRecord], **match) -> tuple[np.ndarray, np.ndarray]:
    """(x, value) arrays of the matching records, sorted by x."""
    rows = sorted(select(records, **match), key=lambda r: r.x)
    return np.array([r.x for r in rows]), np.array([r.value for r in rows])


def _summary(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std()) if arr.size > 1 else 0.0


# ---------------------------------------------------------------------------
# Calibration over training epochs


@dataclass
class EvalSet:
    function_id: str
    context_x: np.ndarray
    context_y: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray


def build_eval_sets(table: TaskTable, split: SplitSpec, context_size: int, seed: int) -> dict[str, list[EvalSet]]:
    """Fixed contexts from dtrain and targets from the quadrant's datapoints.

    For dtrain quadrants the targets are the dtrain points not used as context.
    """
    out = {}
    for qi, (fset, dset) in enumerate(QUADRANTS):
        sets = []
        for fi, fid in enumerate(getattr(split, fset)):
            train_obs = table.observations(fid, split.dtrain)
            rng = np.random.default_rng([seed, 7, qi, fi])
            c = min(context_size, len(train_obs) - 1)
            perm = rng.permutation(len(train_obs))
            ctx = np.sort(perm[:c])
            if dset == "dtrain":
                tgt = np.sort(perm[c:])
                tx, ty = train_obs.x[tgt], train_obs.y[tgt]
            else:
                test_obs = table.observations(fid, split.dtest)
                tx, ty = test_obs.x, test_obs.y
            sets.append(EvalSet(fid, train_obs.x[ctx], train_obs.y[ctx], tx, ty))
        out[f"{fset}-{dset}"] = sets
    return out


def evaluate_cnp(model: cnp.CnpModel, sets: Sequence[EvalSet]) -> list[tuple[str, float, float]]:
    """(function, r2, avg_log_prob) per evaluation set."""
    rows = []
    for s in sets:
        dist = cnp.predict(model, s.context_x, s.context_y, s.target_x)
        rows.append((s.function_id, r2(s.target_y, dist.means), avg_log_prob(dist, s.target_y)))
    return rows


def training_tasks(table: TaskTable, functions: Sequence[str], molecules: Sequence[str]) -> list[cnp.TaskObservations]:
    return [table.observations(f, molecules) for f in functions]


def new_cnp(config: cnp.CnpConfig, tasks: Sequence[cnp.TaskObservations], seed: int) -> cnp.CnpModel:
    model = cnp.init_cnp(config, np.random.default_rng([seed, 1]))
    model.y_mean, model.y_std = cnp.normalization_stats(tasks)
    return model


@dataclass
class CalibrationResult:
    records: list[MetricRecord]
    model: cnp.CnpModel
    log: list[dict]
    snapshots: dict[int, cnp.CnpModel] = field(default_factory=dict)


def run_calibration(
    table: TaskTable,
    split: SplitSpec,
    model_config: cnp.CnpConfig,
    train_config: cnp.TrainConfig,
    checkpoints: Sequence[int],
    seed: int = 0,
    eval_context: int = 100,
    keep: Sequence[int] = (),
    progress: Callable[[int, float], None] | None = None,
) -> CalibrationResult:
    checkpoints = sorted(set(int(c) for c in checkpoints))
    tasks = training_tasks(table, split.ftrain, split.dtrain)
    model = new_cnp(model_config, tasks, seed)
    sets = build_eval_sets(table, split, eval_context, seed)
    records: list[MetricRecord] = []
    snapshots: dict[int, cnp.CnpModel] = {}

    def record(epoch: int, m: cnp.CnpModel):
        for quadrant, qsets in sets.items():
            rows = evaluate_cnp(m, qsets)
            tag = f"calibration:{quadrant}"
            for fid, r2v, lp in rows:
                records.append(MetricRecord(tag, fid, "cnp", epoch, "r2", r2v, seed=seed))
                records.append(MetricRecord(tag, fid, "cnp", epoch, "avg_log_prob", lp, seed=seed))
            for k, metric in ((1, "r2"), (2, "avg_log_prob")):
                mean, sd = _summary([row[k] for row in rows])
                records.append(MetricRecord(tag, ALL_FUNCTIONS, "cnp", epoch, metric, mean, sd, seed))
        if epoch in keep:
            snapshots[epoch] = m.copy()

    def on_epoch(epoch: int, m: cnp.CnpModel, loss: float):
        if epoch in checkpoints:
            record(epoch, m)
        if progress is not None:
            progress(epoch, loss)

    if 0 in checkpoints:
        record(0, model)
    epochs = checkpoints[-1] if checkpoints else 0
    log = cnp.train(model, tasks, epochs, train_config, np.random.default_rng([seed, 2]), [on_epoch])
    return CalibrationResult(records, model, log, snapshots)


# ---------------------------------------------------------------------------
# Few-shot sweep


FEWSHOT_MODELS = ("cnp", "knn", "fss", "rf", "nn", "finetuned_nn")
_DETERMINISTIC = ("knn", "fss")


@dataclass
class BaselineSettings:
    knn_k: int = 5
    knn_metric: str = "hamming"
    forest: baselines.ForestConfig = field(default_factory=baselines.ForestConfig)
    network: baselines.NnConfig = field(default_factory=baselines.NnConfig)


def run_fewshot(
    table: TaskTable,
    split: SplitSpec,
    model: cnp.CnpModel | None,
    context_sizes: Sequence[int],
    models: Sequence[str] = FEWSHOT_MODELS,
    n_repeats: int = 10,
    seed: int = 0,
    settings: BaselineSettings | None = None,
    functions: Sequence[str] | None = None,
) -> list[MetricRecord]:
    """r2 on (ftest, dtest) after observing ``m`` points of (ftest, dtrain).

    The CNP is re-conditioned on ``n_repeats`` different context draws; the
    baselines all train on the first draw with ``n_repeats`` training seeds.
    """
    settings = settings or BaselineSettings()
    functions = list(split.ftest if functions is None else functions)
    unknown = [m for m in models if m not in FEWSHOT_MODELS]
    if unknown:
        raise ValueError(f"unknown few-shot models {unknown}")
    if "cnp" in models and model is None:
        raise ValueError("a trained CNP is required for the few-shot sweep")
    pretrained: dict[int, baselines.MultiOutputNet] = {}

    def get_pretrained(r: int) -> baselines.MultiOutputNet:
        if r not in pretrained:
            rows = table.molecule_index(split.dtrain)
            cols = [table.function_index(f) for f in split.ftrain]
            pretrained[r] = baselines.pretrain_multi_output(
                table.fingerprints[rows],
                table.scores[np.ix_(rows, cols)],
                split.ftrain,
                settings.network,
                np.random.default_rng([seed, 11, r]),
            )
        return pretrained[r]

    records = []
    for fi, fid in enumerate(functions):
        train_obs = table.observations(fid, split.dtrain)
        test_obs = table.observations(fid, split.dtest)
        for m in context_sizes:
            if m > len(train_obs):
                raise InsufficientObservations(f"context size {m} exceeds the {len(train_obs)} dtrain observations of {fid}")
            repeats = 1 if m == len(train_obs) else n_repeats
            draws = []
            for r in range(repeats):
                rng = np.random.default_rng([seed, 3, fi, m, r])
                draws.append(np.sort(rng.choice(len(train_obs), size=m, replace=False)))
            first = draws[0]
            tx, ty = train_obs.x[first], train_obs.y[first]
            ids = train_obs.molecule_index[first]
            for name in models:
                scores = []
                if name == "cnp":
                    for idx in draws:
                        dist = cnp.predict(model, train_obs.x[idx], train_obs.y[idx], test_obs.x)
                        scores.append(r2(test_obs.y, dist.means))
                elif name in _DETERMINISTIC:
                    # no seed dependence: one fit stands for every repeat
                    if name == "knn":
                        k = min(settings.knn_k, m)
                        pred = baselines.knn_fit_predict(tx, ty, test_obs.x, k, settings.knn_metric, ids)
                    else:
                        pred = baselines.fss_fit_predict(tx, ty, test_obs.x, ids)
                    scores = [r2(test_obs.y, pred)] * repeats
                else:
                    for r in range(repeats):
                        rng = np.random.default_rng([seed, 5, fi, m, r, FEWSHOT_MODELS.index(name)])
                        if name == "rf":
                            forest = baselines.rf_fit(tx, ty, settings.forest, rng)
                            pred = baselines.rf_predict(forest, test_obs.x)
                        elif name == "nn":
                            pred = baselines.nn_fit_predict(tx, ty, test_obs.x, settings.network, rng)
                        else:
                            pred = baselines.finetune(get_pretrained(r), tx, ty, test_obs.x, settings.network, rng)
                        scores.append(r2(test_obs.y, pred))
                mean, sd = _summary(scores)
                records.append(MetricRecord("fewshot", fid, name, m, "r2", mean, sd, seed))
    for name in models:
        for m in context_sizes:
            mean, sd = _summary([rec.value for rec in records if rec.model == name and rec.x == m])
            records.append(MetricRecord("fewshot", ALL_FUNCTIONS, name, m, "r2", mean, sd, seed))
    return records


# ---------------------------------------------------------------------------
# Generalization to a modified function class


@dataclass
class GeneralizationResult:
    mean: np.ndarray
    spread: np.ndarray
    records: list[MetricRecord]
    row_labels: tuple[str, ...] = GRID_ROWS
    column_labels: tuple[str, ...] = GRID_COLUMNS
    models: dict[str, cnp.CnpModel] = field(default_factory=dict)

    def cell(self, row: int, col: int) -> str:
        return f"{self.mean[row, col]:.2f} ± {self.spread[row, col]:.2f}"

    def to_rows(self) -> list[list[str]]:
        out = [[""] + list(self.column_labels)]
        for i, label in enumerate(self.row_labels):
            out.append([label] + [self.cell(i, j) for j in range(len(self.column_labels))])
        return out

    def write(self, path) -> Path:
        path = Path(path)
        if path.suffix == ".json":
            payload = {
                "rows": list(self.row_labels),
                "columns": list(self.column_labels),
                "mean": self.mean.tolist(),
                "spread": self.spread.tolist(),
            }
            path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        else:
            with path.open("w", newline="") as fh:
                csv.writer(fh, delimiter="\t", lineterminator="\n").writerows(self.to_rows())
        return path


def run_generalization(
    table: TaskTable,
    split: SplitSpec,
    model_config: cnp.CnpConfig,
    train_config: cnp.TrainConfig,
    epochs: int,
    functions: Sequence[str] = ("PARP1", "KIT", "F2"),
    seed: int = 0,
    eval_context: int = 100,
    n_resamples: int = 5,
) -> GeneralizationResult:
    """Train on plain ftrain scores vs. plain + QED-modified ftrain scores and
    test both on plain and modified versions of ``functions``."""
    for f in functions:
        if f not in table.function_ids:
            raise UnknownFunction(f"unknown function {f!r}")
    derived = derive_modified_functions(table, list(split.ftrain) + list(functions))
    variants = {
        GRID_ROWS[0]: list(split.ftrain),
        GRID_ROWS[1]: list(split.ftrain) + [f + QED_SUFFIX for f in split.ftrain],
    }
    mean = np.zeros((2, 2))
    spread = np.zeros((2, 2))
    records = []
    trained = {}
    for i, (row_label, train_functions) in enumerate(variants.items()):
        tasks = training_tasks(derived, train_functions, split.dtrain)
        model = new_cnp(model_config, tasks, seed)
        cnp.train(model, tasks, epochs, train_config, np.random.default_rng([seed, 2]))
        trained[row_label] = model
        for j, suffix in enumerate(("", QED_SUFFIX)):
            per_function = []
            for fi, base in enumerate(functions):
                fid = base + suffix
                train_obs = derived.observations(fid, split.dtrain)
                test_obs = derived.observations(fid, split.dtest)
                vals = []
                for r in range(n_resamples):
                    # same context molecules for both score classes and models
                    rng = np.random.default_rng([seed, 9, fi, r])
                    c = min(eval_context, len(train_obs))
                    idx = np.sort(rng.choice(len(train_obs), size=c, replace=False))
                    dist = cnp.predict(model, train_obs.x[idx], train_obs.y[idx], test_obs.x)
                    vals.append(r2(test_obs.y, dist.means))
                value = float(np.mean(vals))
                per_function.append(value)
                records.append(MetricRecord(f"generalization:{GRID_COLUMNS[j]}", fid, f"cnp[{row_label}]", eval_context, "r2", value, float(np.std(vals)), seed))
            mean[i, j], spread[i, j] = _summary(per_function)
    return GeneralizationResult(mean, spread, records, models=trained)


# ---------------------------------------------------------------------------
# Bayesian optimization


@dataclass
class AcquisitionConfig:
    strategy: str = "lcb"
    beta: float = 1.0
    n_init: int = 5
    n_iterations: int = 4995

    def __post_init__(self):
        if self.strategy not in ("random", "greedy", "lcb"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.n_init < 1 or self.n_iterations < 0:
            raise ValueError("n_init must be positive and n_iterations non-negative")


@dataclass
class BoStep:
    strategy: str
    seed: int
    iteration: int
    molecule_id: str
    true_score: float
    best_so_far: float


class PoolScorer:
    """CNP predictions over a fixed pool with an incrementally grown context.

    The fingerprint half of the decoder's first layer is computed once for
    the whole pool; each call only adds the representation half.
    """

    def __init__(self, model: cnp.CnpModel, pool_x: np.ndarray):
        self.model = model
        first = model.decoder.layers[0]
        nb = model.nbits
        self.pool_pre = np.asarray(pool_x, dtype=np.float64) @ first.weight[:, :nb].T
        self.w_repr = first.weight[:, nb:]
        self.rep_sum = np.zeros(model.repr_dim)
        self.count = 0

    def add(self, x: np.ndarray, y: np.ndarray) -> None:
        reps = cnp.encode(self.model, x, y)
        self.rep_sum += reps.sum(axis=0)
        self.count += reps.shape[0]

    def predict(self, rows: np.ndarray) -> cnp.PredictiveDistribution:
        m = self.model
        r = self.rep_sum / self.count
        first = m.decoder.layers[0]
        h = self.pool_pre[rows] + (self.w_repr @ r + first.bias)
        if first.activation == "relu":
            h = np.maximum(h, 0.0)
        for layer in m.decoder.layers[1:]:
            h = h @ layer.weight.T + layer.bias
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
        mu = h[:, 0] * m.y_std + m.y_mean
        var = (cnp.softplus(h[:, 1]) + m.variance_floor) * m.y_std**2
        return cnp.PredictiveDistribution(mu, var)


def run_bo(
    table: TaskTable,
    function_id: str,
    acquisition: AcquisitionConfig,
    model: cnp.CnpModel | None,
    seeds: Sequence[int],
    pool: Sequence[str] | None = None,
) -> list[BoStep]:
    """Minimize ``function_id`` over the pool, one molecule per iteration.

    Initial molecules are recorded with iteration 0; acquisitions are
    numbered from 1.  The CNP is never retrained, only re-conditioned.
    """
    if function_id not in table.function_ids:
        raise UnknownFunction(f"unknown function {function_id!r}")
    obs = table.observations(function_id, pool)
    n = len(obs)
    if acquisition.n_init + acquisition.n_iterations > n:
        raise PoolExhausted(f"{acquisition.n_init} + {acquisition.n_iterations} selections exceed the pool of {n}")
    if acquisition.strategy != "random" and model is None:
        raise ValueError(f"strategy {acquisition.strategy!r} needs a model")
    ids = [table.molecule_ids[i] for i in obs.molecule_index]
    id_rank = np.argsort(np.argsort(np.array(ids), kind="stable"), kind="stable")
    steps = []
    for seed in seeds:
        rng = np.random.default_rng([int(seed), 13])
        selected = np.zeros(n, dtype=bool)
        order = list(rng.choice(n, size=acquisition.n_init, replace=False))
        scorer = None
        if acquisition.strategy != "random":
            scorer = PoolScorer(model, obs.x)
            scorer.add(obs.x[order], obs.y[order])
        selected[order] = True
        best = math.inf
        for row in order:
            best = min(best, float(obs.y[row]))
            steps.append(BoStep(acquisition.strategy, int(seed), 0, ids[row], float(obs.y[row]), best))
        for it in range(1, acquisition.n_iterations + 1):
            cand = np.flatnonzero(~selected)
            if acquisition.strategy == "random":
                pick = int(cand[rng.integers(len(cand))])
            else:
                dist = scorer.predict(cand)
                score = dist.means
                if acquisition.strategy == "lcb":
                    score = score - acquisition.beta * dist.stds
                lowest = np.flatnonzero(score == score.min())
                pick = int(cand[lowest[np.argmin(id_rank[cand[lowest]])]])
                scorer.add(obs.x[pick : pick + 1], obs.y[pick : pick + 1])
            selected[pick] = True
            best = min(best, float(obs.y[pick]))
            steps.append(BoStep(acquisition.strategy, int(seed), it, ids[pick], float(obs.y[pick]), best))
    return steps


def split_traces(steps: Sequence[BoStep]) -> dict[tuple[str, int], list[BoStep]]:
    out: dict[tuple[str, int], list[BoStep]] = {}
    for s in steps:
        out.setdefault((s.strategy, s.seed), []).append(s)
    return out


def draws_to_minimum(trace: Sequence[BoStep], pool_min: float) -> int | None:
    """1-based count of selections (initial ones included) until the pool minimum is drawn."""
    for k, step in enumerate(trace, start=1):
        if step.true_score == pool_min:
            return k
    return None


def write_bo_trace(steps: Sequence[BoStep], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BO_COLUMNS)
        for s in steps:
            writer.writerow([s.strategy, s.seed, s.iteration, s.molecule_id, repr(s.true_score), repr(s.best_so_far)])
    return path


def read_bo_trace(path) -> list[BoStep]:
    with Path(path).open(newline="") as fh:
        return [
            BoStep(r["strategy"], int(r["seed"]), int(r["iteration"]), r["molecule_id"], float(r["true_score"]), float(r["best_so_far"]))
            for r in csv.DictReader(fh)
        ]


def bo_records(steps: Sequence[BoStep], function_id: str) -> list[MetricRecord]:
    return [MetricRecord("bo", function_id, s.strategy, s.iteration, "best_so_far", s.best_so_far, seed=s.seed) for s in steps if s.iteration > 0]


# ---------------------------------------------------------------------------
# Flat SVG export


def write_svg(series_map: dict[str, tuple[Sequence[float], Sequence[float]]], path, title: str = "", width: int = 640, height: int = 400) -> Path:
    """Plain polyline chart, one line per series, for quick inspection."""
    palette = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series_map.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series_map.values()])
    finite = np.isfinite(ys)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = (float(ys[finite].min()), float(ys[finite].max())) if finite.any() else (0.0, 1.0)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    pad = 40

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{pad}" y="20" font-size="14">{title}</text>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="#999"/>',
        f'<text x="{pad}" y="{height - 10}" font-size="10">x: {x0:g} .. {x1:g}   y: {y0:.4g} .. {y1:.4g}</text>',
    ]
    for k, (name, (x, y)) in enumerate(sorted(series_map.items())):
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, y) if np.isfinite(b))
        color = palette[k % len(palette)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 150}" y="{pad + 14 * (k + 1)}" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path
