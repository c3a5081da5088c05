import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molcnp import data
from molcnp.errors import (
    BadNumeric,
    DuplicateMoleculeId,
    InsufficientPool,
    InvalidSplit,
    MalformedHeader,
    MissingQed,
    QedOutOfRange,
    RaggedRow,
    UnbalancedParenthesis,
    UnknownFunctionName,
)


def write(tmp_path, text, name="t.tsv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_toy_table(tmp_path):
    path = write(tmp_path, "molecule_id\tsmiles\tA\tB\nm1\tCCO\t-1.5\t2\nm2\tc1ccccc1\t\t-3.25\n")
    table = data.load_task_table(path, nbits=64)
    assert table.molecule_ids == ["m1", "m2"] and table.function_ids == ["A", "B"]
    assert table.scores[0, 0] == -1.5 and table.scores[1, 1] == -3.25
    # an empty cell is missing, not zero
    assert math.isnan(table.scores[1, 0])
    assert table.fingerprints.shape == (2, 64)
    obs = table.observations("A")
    assert len(obs) == 1 and obs.y[0] == -1.5


def test_nan_literal_is_missing(tmp_path):
    path = write(tmp_path, "molecule_id\tsmiles\tA\nm1\tC\tNaN\n")
    assert math.isnan(data.load_task_table(path, nbits=16).scores[0, 0])


@pytest.mark.parametrize(
    "text, error",
    [
        ("molecule_id\tsmiles\tA\nm1\tC\t1\nm1\tCC\t2\n", DuplicateMoleculeId),
        ("molecule_id\tA\nm1\t1\n", MalformedHeader),
        ("", MalformedHeader),
        ("molecule_id\tsmiles\tA\tA\nm1\tC\t1\t2\n", MalformedHeader),
        ("molecule_id\tsmiles\tA\nm1\tC\n", RaggedRow),
        ("molecule_id\tsmiles\tA\nm1\tC\tabc\n", BadNumeric),
        ("molecule_id\tsmiles\tA\nm1\tC(\t1\n", UnbalancedParenthesis),
    ],
)
def test_load_errors(tmp_path, text, error):
    with pytest.raises(error):
        data.load_task_table(write(tmp_path, text), nbits=16)


def test_bad_numeric_location(tmp_path):
    path = write(tmp_path, "molecule_id\tsmiles\tA\tB\nm1\tC\t1\t2\nm2\tC\t3\tx\n")
    with pytest.raises(BadNumeric) as err:
        data.load_task_table(path, nbits=16)
    assert err.value.line == 3 and err.value.column == "B"


def test_save_load_round_trip(tmp_path):
    table = data.synthetic_task_family(0, 3, 20, 32, 0.5)
    table.scores[2, 1] = np.nan
    path = tmp_path / "t.tsv"
    data.save_task_table(table, path)
    back = data.load_task_table(path)
    assert back.molecule_ids == table.molecule_ids and back.function_ids == table.function_ids
    assert np.array_equal(back.scores, table.scores, equal_nan=True)
    assert np.array_equal(back.qed, table.qed)
    assert np.array_equal(back.fingerprints, table.fingerprints)


# --- splits -----------------------------------------------------------------


def named_table(n_molecules=5000):
    others = [f"T{k:02d}" for k in range(53)]
    functions = others + list(data.DEFAULT_FTEST)
    rng = np.random.default_rng(0)
    return data.TaskTable(
        [f"m{i}" for i in range(n_molecules)],
        [""] * n_molecules,
        functions,
        rng.normal(size=(n_molecules, len(functions))),
        rng.random(n_molecules),
    )


def test_default_splits():
    table = named_table()
    split = data.make_splits(table, data.SplitConfig(), np.random.default_rng(0))
    assert len(split.dtrain) == 2500 and len(split.dtest) == 2500
    assert set(split.ftest) == {"ESR2", "KIT", "PARP1", "PGR", "F2"}
    assert len(split.ftrain) == 53
    assert not set(split.dtrain) & set(split.dtest)
    order = {m: i for i, m in enumerate(table.molecule_ids)}
    assert [order[m] for m in split.dtrain] == sorted(order[m] for m in split.dtrain)


def test_splits_are_seeded():
    table = named_table(300)
    config = data.SplitConfig(n_dtrain=100, n_dtest=100)
    a = data.make_splits(table, config, np.random.default_rng(5))
    b = data.make_splits(table, config, np.random.default_rng(5))
    c = data.make_splits(table, config, np.random.default_rng(6))
    assert a == b and a.dtrain != c.dtrain


def test_qed_columns_excluded_from_default_ftrain():
    table = data.derive_modified_functions(named_table(50), ["T00"])
    split = data.make_splits(table, data.SplitConfig(n_dtrain=10, n_dtest=10), np.random.default_rng(0))
    assert "T00_qed" not in split.ftrain


@pytest.mark.parametrize(
    "config, error",
    [
        (data.SplitConfig(dtrain=["m1", "m2"], dtest=["m2", "m3"]), InvalidSplit),
        (data.SplitConfig(ftrain=["T00", "KIT"], n_dtrain=5, n_dtest=5), InvalidSplit),
        (data.SplitConfig(ftest=["nope"]), UnknownFunctionName),
        (data.SplitConfig(n_dtrain=40, n_dtest=20), InsufficientPool),
        (data.SplitConfig(dtrain=["m1", "zz"], dtest=["m2"]), InvalidSplit),
    ],
)
def test_split_errors(config, error):
    with pytest.raises(error):
        data.make_splits(named_table(50), config, np.random.default_rng(0))


def test_split_files_round_trip(tmp_path):
    table = named_table(60)
    split = data.make_splits(table, data.SplitConfig(n_dtrain=20, n_dtest=20), np.random.default_rng(1))
    data.write_split_files(split, tmp_path / "s")
    assert (tmp_path / "s" / "ftest.txt").read_text().splitlines() == split.ftest
    assert data.read_split_files(tmp_path / "s") == split


# --- QED-modified scores ----------------------------------------------------


def test_qed_modified_examples():
    assert data.qed_modified_score(-9.2, 0.75) == pytest.approx(-6.7, abs=1e-12)
    assert data.qed_modified_score(-9.2, 1.0) == -9.2
    assert data.qed_modified_score(-9.2, 0.0) == pytest.approx(0.8, abs=1e-12)


def test_qed_out_of_range():
    with pytest.raises(QedOutOfRange):
        data.qed_modified_score(1.0, 1.5)
    with pytest.raises(QedOutOfRange):
        data.qed_modified_score(np.array([1.0, 2.0]), np.array([0.5, -0.1]))


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 5, allow_nan=False), st.floats(0, 1))
def test_qed_modified_properties(s, q):
    v = data.qed_modified_score(s, q)
    assert s <= v <= s + 10
    assert v == s + 10 * (1 - q)


def test_derive_appends_and_is_idempotent():
    table = named_table(30)
    once = data.derive_modified_functions(table, ["PARP1", "KIT", "F2"])
    assert once.function_ids[-3:] == ["PARP1_qed", "KIT_qed", "F2_qed"]
    assert len(once.function_ids) == len(table.function_ids) + 3
    expected = table.column("KIT") + 10 * (1 - table.qed)
    assert np.allclose(once.column("KIT_qed"), expected, rtol=0, atol=1e-12)
    twice = data.derive_modified_functions(once, ["PARP1", "KIT", "F2"])
    assert twice.function_ids == once.function_ids
    assert np.array_equal(twice.scores, once.scores)
    assert len(table.function_ids) == 58


def test_derive_keeps_missing_cells():
    table = named_table(10)
    table.scores[3, table.function_index("F2")] = np.nan
    out = data.derive_modified_functions(table, ["F2"])
    assert math.isnan(out.column("F2_qed")[3])


def test_derive_needs_qed():
    table = named_table(10)
    table.qed = None
    with pytest.raises(MissingQed):
        data.derive_modified_functions(table, ["F2"])


# --- synthetic family -------------------------------------------------------


def test_synthetic_identical_functions():
    table = data.synthetic_task_family(1, 4, 200, 64, noise_sd=0.0, weight_correlation=1.0, bias_sd=0.0)
    cols = table.scores
    assert all(np.array_equal(cols[:, 0], cols[:, j]) for j in range(1, 4))


def test_synthetic_ridge_recovers_weights():
    table = data.synthetic_task_family(2, 3, 500, 128, noise_sd=0.0)
    latent = table.fingerprints @ table.meta["projection"].T
    design = np.column_stack([latent, np.ones(len(latent))])
    lam = 1e-10
    for j in range(3):
        coef = np.linalg.solve(design.T @ design + lam * np.eye(design.shape[1]), design.T @ table.scores[:, j])
        assert np.max(np.abs(coef[:-1] - table.meta["weights"][j])) < 1e-6
        assert abs(coef[-1] - table.meta["biases"][j]) < 1e-6


def test_synthetic_is_seeded_and_valid():
    a = data.synthetic_task_family(3, 5, 100, 32, 0.3)
    b = data.synthetic_task_family(3, 5, 100, 32, 0.3)
    assert np.array_equal(a.scores, b.scores) and np.array_equal(a.fingerprints, b.fingerprints)
    assert np.all((a.qed > 0) & (a.qed < 1))
    assert a.fingerprints.dtype == np.uint8 and set(np.unique(a.fingerprints)) <= {0, 1}
