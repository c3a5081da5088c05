"""Conditional neural process over binary fingerprints.

Context pairs ``(x, y)`` are encoded independently, mean-aggregated into a
single representation ``r`` and every target fingerprint is decoded together
with ``r`` into a Gaussian mean and variance.  Scores are standardized with
one global (mean, std) pair fitted on the training functions; all public
predictions are returned in original score units.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from molcnp import nn
from molcnp.errors import (
    DimensionMismatch,
    EmptyContext,
    InsufficientObservations,
    NonFiniteLoss,
)

MODEL_FORMAT = "molcnp-cnp"


@dataclass
class CnpConfig:
    nbits: int = 1024
    repr_dim: int = 128
    encoder_hidden: tuple[int, ...] = (256, 256)
    decoder_hidden: tuple[int, ...] = (256, 256)
    variance_floor: float = 1e-6

    def __post_init__(self):
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.decoder_hidden = tuple(int(h) for h in self.decoder_hidden)


@dataclass
class TrainConfig:
    context_range: tuple[int, int] = (5, 256)
    target_range: tuple[int, int] = (256, 256)
    lr: float = 1e-3

    def __post_init__(self):
        self.context_range = (int(self.context_range[0]), int(self.context_range[1]))
        self.target_range = (int(self.target_range[0]), int(self.target_range[1]))


@dataclass
class CnpModel:
    encoder: nn.DenseNet
    decoder: nn.DenseNet
    variance_floor: float = 1e-6
    y_mean: float = 0.0
    y_std: float = 1.0

    def __post_init__(self):
        if self.decoder.output_dim != 2:
            raise DimensionMismatch("decoder must emit (mean, raw variance)")
        if self.decoder.input_dim != self.nbits + self.repr_dim:
            raise DimensionMismatch("decoder input must be nbits + repr_dim")

    @property
    def nbits(self) -> int:
        return self.encoder.input_dim - 1

    @property
    def repr_dim(self) -> int:
        return self.encoder.output_dim

    def parameters(self) -> list[np.ndarray]:
        return self.encoder.parameters() + self.decoder.parameters()

    def copy(self) -> "CnpModel":
        return CnpModel(self.encoder.copy(), self.decoder.copy(), self.variance_floor, self.y_mean, self.y_std)

    def config(self) -> CnpConfig:
        return CnpConfig(
            nbits=self.nbits,
            repr_dim=self.repr_dim,
            encoder_hidden=tuple(self.encoder.dims[1:-1]),
            decoder_hidden=tuple(self.decoder.dims[1:-1]),
            variance_floor=self.variance_floor,
        )


@dataclass
class PredictiveDistribution:
    means: np.ndarray
    variances: np.ndarray

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def __len__(self):
        return len(self.means)


@dataclass
class Episode:
    function_id: str
    context_x: np.ndarray
    context_y: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray
    context_index: np.ndarray | None = None
    target_index: np.ndarray | None = None


@dataclass
class TaskObservations:
    """All observed (fingerprint, score) pairs of one function."""

    function_id: str
    x: np.ndarray
    y: np.ndarray
    molecule_index: np.ndarray | None = None

    def __len__(self):
        return len(self.y)


def init_cnp(config: CnpConfig, rng: np.random.Generator) -> CnpModel:
    enc = nn.init_dense([config.nbits + 1, *config.encoder_hidden, config.repr_dim], rng)
    dec = nn.init_dense([config.nbits + config.repr_dim, *config.decoder_hidden, 2], rng)
    return CnpModel(enc, dec, config.variance_floor)


def softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------
# encode / aggregate / decode


def _check_x(model: CnpModel, x, name) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.nbits:
        raise DimensionMismatch(f"{name} has {x.shape[1]} bits, model expects {model.nbits}")
    return x


def _normalize(model: CnpModel, y) -> np.ndarray:
    return (np.asarray(y, dtype=np.float64) - model.y_mean) / model.y_std


def encode(model: CnpModel, context_x, context_y) -> np.ndarray:
    """One representation row per context pair (scores in original units)."""
    context_y = np.atleast_1d(np.asarray(context_y, dtype=np.float64))
    if context_y.size == 0:
        raise EmptyContext("context set is empty")
    cx = _check_x(model, context_x, "context_x")
    if cx.shape[0] != context_y.shape[0]:
        raise DimensionMismatch("context_x and context_y lengths differ")
    inp = np.hstack([cx, _normalize(model, context_y)[:, None]])
    return nn.forward_cache(model.encoder, inp)[-1]


def aggregate(reps) -> np.ndarray:
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[0] == 0:
        raise EmptyContext("nothing to aggregate")
    return reps.mean(axis=0)


def _decode_normalized(model: CnpModel, x: np.ndarray, r: np.ndarray):
    inp = np.hstack([x, np.broadcast_to(r, (x.shape[0], r.shape[-1]))])
    out = nn.forward_cache(model.decoder, inp)[-1]
    return out[:, 0], softplus(out[:, 1]) + model.variance_floor


def decode(model: CnpModel, x, r):
    """Mean and variance (original units) for one fingerprint or a batch."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (model.repr_dim,):
        raise DimensionMismatch(f"representation must have {model.repr_dim} entries")
    single = np.asarray(x).ndim == 1
    mu, var = _decode_normalized(model, _check_x(model, x, "x"), r)
    mu = mu * model.y_std + model.y_mean
    var = var * model.y_std**2
    if single:
        return float(mu[0]), float(var[0])
    return mu, var


def predict(model: CnpModel, context_x, context_y, target_x) -> PredictiveDistribution:
    r = aggregate(encode(model, context_x, context_y))
    tx = _check_x(model, target_x, "target_x")
    if tx.shape[0] == 0:
        raise EmptyContext("no target points")
    mu, var = decode(model, tx, r)
    return PredictiveDistribution(np.asarray(mu), np.asarray(var))


def episode_loss(model: CnpModel, episode: Episode) -> float:
    """Mean Gaussian NLL of the targets given the context (original units)."""
    dist = predict(model, episode.context_x, episode.context_y, episode.target_x)
    return float(np.mean(nn.gaussian_nll(dist.means, dist.variances, episode.target_y)))


# ---------------------------------------------------------------------------
# Batched loss and gradients


def batch_loss_and_grads(model: CnpModel, episodes: Sequence[Episode], need_grads: bool = True):
    """Average of per-episode mean NLLs and its gradient w.r.t. all parameters.

    Returns ``(loss, grads)`` with ``grads`` a list aligned with
    ``model.parameters()`` (``None`` when ``need_grads`` is false).
    """
    n_ep = len(episodes)
    if n_ep == 0:
        raise EmptyContext("no episodes")
    c_counts = np.array([len(e.context_y) for e in episodes])
    t_counts = np.array([len(e.target_y) for e in episodes])
    if np.any(c_counts == 0) or np.any(t_counts == 0):
        raise EmptyContext("every episode needs context and target points")
    cx = np.vstack([np.asarray(e.context_x, dtype=np.float64) for e in episodes])
    cy = _normalize(model, np.concatenate([e.context_y for e in episodes]))
    tx = np.vstack([np.asarray(e.target_x, dtype=np.float64) for e in episodes])
    ty = _normalize(model, np.concatenate([e.target_y for e in episodes]))
    c_seg = np.repeat(np.arange(n_ep), c_counts)
    t_seg = np.repeat(np.arange(n_ep), t_counts)
    c_starts = np.concatenate([[0], np.cumsum(c_counts)[:-1]])
    t_starts = np.concatenate([[0], np.cumsum(t_counts)[:-1]])

    enc_acts = nn.forward_cache(model.encoder, np.hstack([cx, cy[:, None]]))
    r = np.add.reduceat(enc_acts[-1], c_starts, axis=0) / c_counts[:, None]
    dec_acts = nn.forward_cache(model.decoder, np.hstack([tx, r[t_seg]]))
    out = dec_acts[-1]
    mu, raw = out[:, 0], out[:, 1]
    var = softplus(raw) + model.variance_floor
    resid = ty - mu
    nll = nn.HALF_LOG_2PI + 0.5 * np.log(var) + resid * resid / (2.0 * var)
    weights = 1.0 / (n_ep * t_counts[t_seg])
    loss = float(np.sum(weights * nll)) + math.log(model.y_std)
    if not need_grads:
        return loss, None

    d_mu = -weights * resid / var
    d_var = weights * (0.5 / var - 0.5 * resid * resid / (var * var))
    upstream = np.column_stack([d_mu, d_var * _sigmoid(raw)])
    dec_grads = nn.backward_cache(model.decoder, dec_acts, upstream, need_input=True)
    d_r_targets = dec_grads.input[:, model.nbits :]
    d_r = np.add.reduceat(d_r_targets, t_starts, axis=0)
    d_reps = (d_r / c_counts[:, None])[c_seg]
    enc_grads = nn.backward_cache(model.encoder, enc_acts, d_reps, need_input=False)
    return loss, enc_grads.arrays() + dec_grads.arrays()


# ---------------------------------------------------------------------------
# Episode sampling and training


def sample_partition(n_obs: int, rng: np.random.Generator, context_range, target_range):
    """Disjoint (context, target) index arrays over ``range(n_obs)``."""
    c_lo, c_hi = context_range
    t_lo, t_hi = target_range
    if c_lo < 1 or t_lo < 1:
        raise ValueError("context and target sizes must be at least 1")
    if n_obs < c_lo + t_lo:
        raise InsufficientObservations(f"{n_obs} observations, need at least {c_lo + t_lo}")
    c = int(rng.integers(c_lo, min(c_hi, n_obs - t_lo) + 1))
    t = min(int(rng.integers(t_lo, t_hi + 1)), n_obs - c)
    perm = rng.permutation(n_obs)
    return perm[:c], perm[c : c + t]


def sample_episode(task: TaskObservations, rng: np.random.Generator, context_range=(5, 256), target_range=(256, 256)) -> Episode:
    ctx, tgt = sample_partition(len(task), rng, context_range, target_range)
    return Episode(task.function_id, task.x[ctx], task.y[ctx], task.x[tgt], task.y[tgt], ctx, tgt)


def normalization_stats(tasks: Iterable[TaskObservations]) -> tuple[float, float]:
    """Global mean and std of all scores across the given functions."""
    ys = np.concatenate([t.y for t in tasks])
    std = float(ys.std())
    return float(ys.mean()), std if std > 0 else 1.0


def train(
    model: CnpModel,
    tasks: Sequence[TaskObservations],
    epochs: int,
    config: TrainConfig,
    rng: np.random.Generator,
    callbacks: Sequence[Callable[[int, CnpModel, float], None]] = (),
    adam: nn.AdamState | None = None,
    start_epoch: int = 0,
) -> list[dict]:
    """One episode per function, one Adam step per epoch.

    Mutates ``model`` in place.  Pass the returned-through ``adam`` state and
    ``start_epoch`` to continue a previous run.
    """
    params = model.parameters()
    if adam is None:
        adam = nn.AdamState.for_params(params, lr=config.lr)
    log = []
    for epoch in range(start_epoch + 1, start_epoch + epochs + 1):
        episodes = [sample_episode(t, rng, config.context_range, config.target_range) for t in tasks]
        loss, grads = batch_loss_and_grads(model, episodes)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise NonFiniteLoss("training loss is not finite", epoch)
        nn.adam_update(params, grads, adam)
        log.append({"epoch": epoch, "loss": loss})
        for cb in callbacks:
            cb(epoch, model, loss)
    return log


# ---------------------------------------------------------------------------
# Checkpoints


def save_model(model: CnpModel, path, manifest: dict | None = None) -> Path:
    """Write ``<path>`` (npz parameters) plus ``<path>.json`` manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"version": np.array(nn.CHECKPOINT_VERSION)}
    arrays.update(nn.net_arrays(model.encoder, "encoder."))
    arrays.update(nn.net_arrays(model.decoder, "decoder."))
    arrays["scalars"] = np.array([model.variance_floor, model.y_mean, model.y_std], dtype=np.float64)
    nn.write_npz(path, arrays)
    meta = {
        "format": MODEL_FORMAT,
        "version": nn.CHECKPOINT_VERSION,
        "architecture": asdict(model.config()),
        "normalization": {"y_mean": model.y_mean, "y_std": model.y_std},
    }
    meta.update(manifest or {})
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_model(path) -> CnpModel:
    with np.load(Path(path)) as data:
        if int(data["version"]) != nn.CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
        enc = nn.net_from_arrays(data, "encoder.")
        dec = nn.net_from_arrays(data, "decoder.")
        floor, y_mean, y_std = (float(v) for v in data["scalars"])
    return CnpModel(enc, dec, floor, y_mean, y_std)

