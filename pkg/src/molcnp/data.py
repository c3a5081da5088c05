"""Task tables, datapoint/function splits, QED-modified scores and a
synthetic task family with shared latent structure.

A :class:`TaskTable` is a molecules x functions score matrix with ``NaN``
marking missing cells.  Lower scores are better (docking convention).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from molcnp import chem
from molcnp.cnp import TaskObservations
from molcnp.errors import (
    BadNumeric,
    DuplicateMoleculeId,
    InsufficientPool,
    InvalidSplit,
    MalformedHeader,
    MissingQed,
    QedOutOfRange,
    RaggedRow,
    SmilesError,
    UnknownFunctionName,
)

DEFAULT_FTEST = ("ESR2", "KIT", "PARP1", "PGR", "F2")
QED_SUFFIX = "_qed"
RESERVED_COLUMNS = ("molecule_id", "smiles", "qed", "fingerprint")


@dataclass
class TaskTable:
    molecule_ids: list[str]
    smiles: list[str]
    function_ids: list[str]
    scores: np.ndarray
    qed: np.ndarray | None = None
    fingerprints: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(len(self.molecule_ids), len(self.function_ids))
        if len(set(self.molecule_ids)) != len(self.molecule_ids):
            raise DuplicateMoleculeId("molecule ids are not unique")
        if len(set(self.function_ids)) != len(self.function_ids):
            raise MalformedHeader("function ids are not unique")
        if len(self.smiles) != len(self.molecule_ids):
            raise ValueError("smiles list length differs from molecule count")
        if self.qed is not None:
            self.qed = np.asarray(self.qed, dtype=np.float64)
            present = self.qed[~np.isnan(self.qed)]
            if np.any((present < 0) | (present > 1)):
                raise QedOutOfRange("qed values must lie in [0, 1]")
        if self.fingerprints is not None:
            self.fingerprints = np.asarray(self.fingerprints, dtype=np.uint8)
            if self.fingerprints.shape[0] != len(self.molecule_ids):
                raise ValueError("fingerprint rows differ from molecule count")
        self._mol_index = {m: i for i, m in enumerate(self.molecule_ids)}
        self._fn_index = {f: j for j, f in enumerate(self.function_ids)}

    @property
    def n_molecules(self) -> int:
        return len(self.molecule_ids)

    @property
    def nbits(self) -> int | None:
        return None if self.fingerprints is None else int(self.fingerprints.shape[1])

    def molecule_index(self, ids: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self._mol_index[m] for m in ids], dtype=np.int64)
        except KeyError as exc:
            raise InvalidSplit(f"unknown molecule id {exc.args[0]!r}") from None

    def function_index(self, fid: str) -> int:
        try:
            return self._fn_index[fid]
        except KeyError:
            raise UnknownFunctionName(f"unknown function {fid!r}") from None

    def column(self, fid: str) -> np.ndarray:
        return self.scores[:, self.function_index(fid)]

    def observations(self, fid: str, molecule_ids: Sequence[str] | None = None) -> TaskObservations:
        """Observed (fingerprint, score) pairs of ``fid``, missing cells skipped."""
        rows = np.arange(self.n_molecules) if molecule_ids is None else self.molecule_index(molecule_ids)
        col = self.column(fid)[rows]
        keep = ~np.isnan(col)
        rows = rows[keep]
        return TaskObservations(fid, self.fingerprints[rows], col[keep], rows)

    def copy(self) -> "TaskTable":
        return TaskTable(
            list(self.molecule_ids),
            list(self.smiles),
            list(self.function_ids),
            self.scores.copy(),
            None if self.qed is None else self.qed.copy(),
            None if self.fingerprints is None else self.fingerprints.copy(),
            dict(self.meta),
        )


# ---------------------------------------------------------------------------
# TSV I/O


def _parse_float(text: str, line: int, column: str) -> float:
    text = text.strip()
    if text == "" or text == "NaN":
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise BadNumeric(line, column, text) from None
    if math.isnan(value):
        return math.nan
    return value


def load_task_table(path, radius: int = 3, nbits: int = 1024, compute_fingerprints: bool = True) -> TaskTable:
    """Read a tab-separated task table.

    Required columns: ``molecule_id`` and ``smiles``; optional ``qed`` and
    ``fingerprint`` (hex, see :func:`molcnp.chem.bits_to_hex`); every other
    column is a function.  When no fingerprint column exists, fingerprints
    are computed from SMILES with the given radius and length.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise MalformedHeader(f"{path}: duplicate column names")
        for required in ("molecule_id", "smiles"):
            if required not in header:
                raise MalformedHeader(f"{path}: missing required column {required!r}")
        col = {name: i for i, name in enumerate(header)}
        functions = [h for h in header if h not in RESERVED_COLUMNS]
        if any(not f for f in functions):
            raise MalformedHeader(f"{path}: empty column name")
        ids, smiles, qed, hexes, rows = [], [], [], [], []
        seen = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRow(line_no, len(header), len(row))
            mol_id = row[col["molecule_id"]]
            if mol_id in seen:
                raise DuplicateMoleculeId(f"{path}:{line_no}: duplicate molecule id {mol_id!r}")
            seen.add(mol_id)
            ids.append(mol_id)
            smiles.append(row[col["smiles"]])
            if "qed" in col:
                qed.append(_parse_float(row[col["qed"]], line_no, "qed"))
            if "fingerprint" in col:
                hexes.append(row[col["fingerprint"]].strip())
            rows.append([_parse_float(row[col[f]], line_no, f) for f in functions])

    fps = None
    if hexes:
        width = len(hexes[0]) * 4 if hexes else nbits
        try:
            fps = np.array([chem.hex_to_bits(h, width) for h in hexes], dtype=np.uint8)
        except ValueError as exc:
            raise BadNumeric(0, "fingerprint", str(exc)) from None
    elif compute_fingerprints:
        fps = np.zeros((len(ids), nbits), dtype=np.uint8)
        for i, smi in enumerate(smiles):
            try:
                fps[i] = chem.smiles_fingerprint(smi, radius, nbits).bits
            except SmilesError as exc:
                raise type(exc)(f"molecule {ids[i]!r} (line {i + 2}): {exc.message}", exc.offset) from None
    scores = np.array(rows, dtype=np.float64).reshape(len(ids), len(functions))
    return TaskTable(ids, smiles, functions, scores, np.array(qed) if qed else None, fps)


def _fmt(value: float) -> str:
    return "NaN" if math.isnan(value) else format(value, ".17g")


def save_task_table(table: TaskTable, path, include_fingerprints: bool = True) -> None:
    header = ["molecule_id", "smiles"]
    if table.qed is not None:
        header.append("qed")
    write_fp = include_fingerprints and table.fingerprints is not None
    if write_fp:
        header.append("fingerprint")
    header.extend(table.function_ids)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        for i, mol_id in enumerate(table.molecule_ids):
            row = [mol_id, table.smiles[i]]
            if table.qed is not None:
                row.append(_fmt(table.qed[i]))
            if write_fp:
                row.append(chem.bits_to_hex(table.fingerprints[i]))
            row.extend(_fmt(v) for v in table.scores[i])
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Splits


@dataclass
class SplitSpec:
    dtrain: list[str]
    dtest: list[str]
    ftrain: list[str]
    ftest: list[str]

    def validate(self, table: TaskTable) -> "SplitSpec":
        for name in ("dtrain", "dtest", "ftrain", "ftest"):
            ids = getattr(self, name)
            if len(set(ids)) != len(ids):
                raise InvalidSplit(f"{name} contains duplicate ids")
        if set(self.dtrain) & set(self.dtest):
            raise InvalidSplit("dtrain and dtest overlap")
        if set(self.ftrain) & set(self.ftest):
            raise InvalidSplit("ftrain and ftest overlap")
        table.molecule_index(self.dtrain)
        table.molecule_index(self.dtest)
        for fid in self.ftrain + self.ftest:
            table.function_index(fid)
        return self


@dataclass
class SplitConfig:
    dtrain: list[str] | None = None
    dtest: list[str] | None = None
    ftrain: list[str] | None = None
    ftest: list[str] | None = None
    n_dtrain: int = 2500
    n_dtest: int = 2500
    dtrain_pool: list[str] | None = None
    dtest_pool: list[str] | None = None


def make_splits(table: TaskTable, config: SplitConfig, rng: np.random.Generator) -> SplitSpec:
    """Explicit id lists are validated and echoed; otherwise molecules are
    sampled uniformly without replacement from the pools."""
    ftest = list(config.ftest) if config.ftest is not None else list(DEFAULT_FTEST)
    for fid in ftest:
        if fid not in table.function_ids:
            raise UnknownFunctionName(f"unknown function {fid!r}")
    if config.ftrain is not None:
        ftrain = list(config.ftrain)
    else:
        ftrain = [f for f in table.function_ids if f not in ftest and not f.endswith(QED_SUFFIX)]

    if config.dtrain is not None and config.dtest is not None:
        dtrain, dtest = list(config.dtrain), list(config.dtest)
    else:
        order = table._mol_index

        def draw(pool, size, exclude, label):
            pool = [m for m in pool if m not in exclude]
            if size > len(pool):
                raise InsufficientPool(f"{label}: need {size} molecules, pool has {len(pool)}")
            picked = rng.choice(len(pool), size=size, replace=False)
            return sorted((pool[i] for i in picked), key=order.__getitem__)

        all_ids = table.molecule_ids
        if config.dtrain is not None:
            dtrain = list(config.dtrain)
        else:
            dtrain = draw(config.dtrain_pool or all_ids, config.n_dtrain, set(), "dtrain")
        if config.dtest is not None:
            dtest = list(config.dtest)
        else:
            dtest = draw(config.dtest_pool or all_ids, config.n_dtest, set(dtrain), "dtest")
    return SplitSpec(dtrain, dtest, ftrain, ftest).validate(table)


def write_split_files(split: SplitSpec, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("dtrain", "dtest", "ftrain", "ftest"):
        ids = getattr(split, name)
        (directory / f"{name}.txt").write_text("".join(f"{i}\n" for i in ids))


def read_id_list(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def read_split_files(directory) -> SplitSpec:
    directory = Path(directory)
    return SplitSpec(*(read_id_list(directory / f"{n}.txt") for n in ("dtrain", "dtest", "ftrain", "ftest")))


# ---------------------------------------------------------------------------
# QED-modified scores


def qed_modified_score(s, qed):
    """``s + 10 * (1 - qed)``; works elementwise on arrays."""
    q = np.asarray(qed, dtype=np.float64)
    if np.any((q < 0) | (q > 1)):
        raise QedOutOfRange("qed must lie in [0, 1]")
    out = np.asarray(s, dtype=np.float64) + 10.0 * (1.0 - q)
    return float(out) if out.ndim == 0 else out


def derive_modified_functions(table: TaskTable, functions: Sequence[str], suffix: str = QED_SUFFIX) -> TaskTable:
    """Copy of ``table`` with a ``<f><suffix>`` column per selected function.

    Re-deriving an existing column overwrites it.
    """
    out = table.copy()
    if not functions:
        return out
    if table.qed is None:
        raise MissingQed("table has no qed column")
    for fid in functions:
        base = table.column(fid)
        scored = ~np.isnan(base)
        if np.any(np.isnan(table.qed[scored])):
            raise MissingQed(f"qed missing for molecules scored on {fid!r}")
        derived = np.full(table.n_molecules, np.nan)
        derived[scored] = qed_modified_score(base[scored], table.qed[scored])
        name = fid + suffix
        if name in out._fn_index:
            out.scores[:, out._fn_index[name]] = derived
        else:
            out.function_ids.append(name)
            out.scores = np.column_stack([out.scores, derived])
            out._fn_index[name] = len(out.function_ids) - 1
    return out


# ---------------------------------------------------------------------------
# Synthetic task family


def _standardize(v: np.ndarray) -> np.ndarray:
    v = v - v.mean()
    sd = v.std()
    return v / sd if sd > 0 else v


def synthetic_task_family(
    seed: int,
    n_functions: int,
    n_molecules: int,
    nbits: int,
    noise_sd: float,
    latent_dim: int = 8,
    density: float = 0.1,
    bias_mean: float = -8.0,
    bias_sd: float = 1.0,
    weight_scale: float = 1.5,
    weight_correlation: float = 0.0,
    qed_logit_scale: float = 1.0,
    qed_score_correlation: float = 0.0,
) -> TaskTable:
    """Random binary fingerprints scored by linear functions of a shared
    low-dimensional projection: ``f_i(x) = w_i . (P x) + b_i + noise``.

    ``weight_correlation`` mixes a direction shared by all functions into
    every ``w_i`` (1 gives identical weights).  The ``qed`` column holds a
    per-molecule value ``u(m)`` in (0, 1): a logistic function of a random
    projection of the fingerprint.  ``qed_score_correlation`` couples that
    logit to the shared scoring direction; a positive value makes low scores
    go with low ``u``, as with docking scores where large molecules bind
    better and are less drug-like.  Generating parameters are kept in
    ``table.meta``.
    """
    if min(n_functions, n_molecules, nbits, latent_dim) <= 0:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    x = (rng.random((n_molecules, nbits)) < density).astype(np.uint8)
    projection = rng.normal(size=(latent_dim, nbits)) / math.sqrt(nbits * density)
    latent = x @ projection.T
    if not 0.0 <= weight_correlation <= 1.0:
        raise ValueError("weight_correlation must lie in [0, 1]")
    if not -1.0 <= qed_score_correlation <= 1.0:
        raise ValueError("qed_score_correlation must lie in [-1, 1]")
    shared = rng.normal(size=latent_dim)
    own = rng.normal(size=(n_functions, latent_dim))
    weights = math.sqrt(weight_correlation) * shared + math.sqrt(1.0 - weight_correlation) * own
    weights *= weight_scale / math.sqrt(latent_dim)
    biases = bias_mean + bias_sd * rng.normal(size=n_functions)
    scores = latent @ weights.T + biases
    if noise_sd > 0:
        scores = scores + noise_sd * rng.normal(size=scores.shape)
    qed_dir = rng.normal(size=nbits)
    qed_raw = _standardize((x - x.mean(axis=0)) @ qed_dir)
    common = _standardize(latent @ shared)
    qed_raw = _standardize(qed_score_correlation * common + math.sqrt(1.0 - qed_score_correlation**2) * qed_raw)
    qed = 1.0 / (1.0 + np.exp(-qed_logit_scale * qed_raw))
    width = len(str(max(n_functions - 1, 1)))
    table = TaskTable(
        [f"m{i:05d}" for i in range(n_molecules)],
        [""] * n_molecules,
        [f"f{j:0{width}d}" for j in range(n_functions)],
        scores,
        qed,
        x,
    )
    table.meta.update(projection=projection, weights=weights, biases=biases, qed_direction=qed_dir, seed=seed, noise_sd=noise_sd)
    return table
