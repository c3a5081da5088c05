import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molcnp import chem
from molcnp.errors import (
    CacheError,
    EmptyInput,
    InvalidBond,
    LengthMismatch,
    UnbalancedParenthesis,
    UnclosedRingBond,
    UnknownAtomToken,
)


# --- parsing ----------------------------------------------------------------


def test_methane_single_atom():
    mol = chem.parse_smiles("C")
    assert len(mol.atoms) == 1 and mol.bonds == ()
    assert mol.atoms[0].hydrogens == 4


def test_unclosed_branch_offset():
    with pytest.raises(UnbalancedParenthesis) as err:
        chem.parse_smiles("C(")
    assert err.value.offset == 1


def test_cyclopropane():
    mol = chem.parse_smiles("C1CC1")
    assert len(mol.atoms) == 3 and len(mol.bonds) == 3
    assert all(a.hydrogens == 2 for a in mol.atoms)


def test_benzene_aromatic():
    mol = chem.parse_smiles("c1ccccc1")
    assert len(mol.atoms) == 6 and all(a.aromatic for a in mol.atoms)
    assert len(mol.bonds) == 6 and all(o == chem.AROMATIC_BOND for _, _, o in mol.bonds)
    assert all(a.hydrogens == 1 for a in mol.atoms)


@pytest.mark.parametrize(
    "smiles, error, offset",
    [
        ("", EmptyInput, 0),
        ("C)", UnbalancedParenthesis, 1),
        ("C1CC", UnclosedRingBond, 1),
        ("CX", UnknownAtomToken, 1),
        ("C[13C]", UnknownAtomToken, 2),
        ("C[C@H](O)N", UnknownAtomToken, 3),
        ("C=", InvalidBond, 1),
        ("C11", InvalidBond, 2),
        ("=C", InvalidBond, 0),
        ("C1CC=1", None, None),
    ],
)
def test_parse_errors(smiles, error, offset):
    if error is None:
        chem.parse_smiles(smiles)
        return
    with pytest.raises(error) as err:
        chem.parse_smiles(smiles)
    assert err.value.offset == offset


def test_bracket_atoms_and_charges():
    mol = chem.parse_smiles("[NH4+].[O-]C(=O)C")
    assert mol.atoms[0].symbol == "N" and mol.atoms[0].hydrogens == 4 and mol.atoms[0].charge == 1
    assert mol.atoms[1].charge == -1
    assert len(mol.bonds) == 3


def test_two_letter_halogens_and_percent_rings():
    mol = chem.parse_smiles("ClC%12CC%12Br")
    assert [a.symbol for a in mol.atoms] == ["Cl", "C", "C", "C", "Br"]
    assert len(mol.bonds) == 5


def test_ring_bond_order_from_either_end():
    a = chem.parse_smiles("C=1CC1")
    b = chem.parse_smiles("C1CC=1")
    assert sorted(o for *_, o in a.bonds) == sorted(o for *_, o in b.bonds) == [1, 1, 2]


def test_implicit_hydrogens():
    mol = chem.parse_smiles("CC(=O)O")
    assert [a.hydrogens for a in mol.atoms] == [3, 0, 0, 1]
    assert chem.parse_smiles("c1ccncc1").atoms[3].hydrogens == 0


# --- hashing ----------------------------------------------------------------


def test_mix64_matches_splitmix64_reference_stream():
    # reference splitmix64 seeded with 0: state advances by the golden gamma
    expected = [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
    state = 0
    for value in expected:
        state = (state + 0x9E3779B97F4A7C15) & ((1 << 64) - 1)
        assert chem.mix64(state) == value


# --- fingerprints -----------------------------------------------------------


def fp(smiles, nbits=1024, radius=3):
    return chem.smiles_fingerprint(smiles, radius, nbits)


def test_methane_fingerprint_nonempty_and_deterministic():
    a, b = fp("C"), fp("C")
    assert a.popcount() >= 1
    assert a == b


def test_atom_order_invariance():
    assert fp("CCO") == fp("OCC")
    assert fp("CCO") != fp("CCC")


@pytest.mark.parametrize(
    "variants",
    [
        ["c1ccccc1O", "Oc1ccccc1", "c1cc(O)ccc1", "c1ccc(cc1)O"],
        ["CC(=O)Nc1ccc(O)cc1", "Oc1ccc(NC(C)=O)cc1", "c1cc(NC(=O)C)ccc1O"],
        ["C1CCNCC1", "N1CCCCC1", "C1CNCCC1"],
    ],
)
def test_rotated_and_reversed_smiles(variants):
    prints = [fp(s) for s in variants]
    assert all(p == prints[0] for p in prints)


def test_radius_zero_counts_atom_types():
    # radius 0: one identifier per distinct atom environment (C with 3 H, C with 2 H, O with 1 H)
    assert fp("CCO", radius=0, nbits=1 << 20).popcount() == 3


def test_fingerprint_length_validation():
    with pytest.raises(ValueError):
        fp("C", nbits=1000)
    with pytest.raises(ValueError):
        fp("C", nbits=4)


def _write_tree_smiles(symbols, edges, root, rng):
    """SMILES for a tree molecule, traversed from ``root`` in a random child order."""
    adj = {i: [] for i in range(len(symbols))}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)

    def walk(node, parent):
        children = [c for c in adj[node] if c != parent]
        rng.shuffle(children)
        out = symbols[node]
        for c in children[:-1]:
            out += "(" + walk(c, node) + ")"
        if children:
            out += walk(children[-1], node)
        return out

    return walk(root, None)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=1, max_value=12))
def test_fingerprint_independent_of_traversal(seed, n_atoms):
    rng = np.random.default_rng(seed)
    symbols = ["C"] + [str(s) for s in rng.choice(["C", "C", "C", "N", "O", "Cl"], size=n_atoms - 1)]
    # halogens stay leaves
    edges = []
    for k in range(1, n_atoms):
        parents = [p for p in range(k) if symbols[p] != "Cl"]
        edges.append((int(rng.choice(parents)), k))
    a = _write_tree_smiles(symbols, edges, 0, rng)
    b = _write_tree_smiles(symbols, edges, int(rng.integers(n_atoms)), rng)
    assert fp(a, nbits=256) == fp(b, nbits=256)


# --- similarity -------------------------------------------------------------


def bits(ones, n=16):
    v = np.zeros(n, dtype=np.uint8)
    v[list(ones)] = 1
    return chem.Fingerprint(v)


def test_tanimoto_examples():
    assert chem.tanimoto(bits({1, 2, 3}), bits({1, 2, 3})) == 1.0
    assert chem.tanimoto(bits({1, 2}), bits({3, 4})) == 0.0
    assert chem.tanimoto(bits({0, 1, 2, 3}), bits({2, 3, 4, 5})) == pytest.approx(2 / 6, abs=0)
    assert chem.tanimoto(bits(set()), bits(set())) == 1.0


def test_hamming_complement():
    rng = np.random.default_rng(3)
    v = rng.integers(0, 2, size=1024).astype(np.uint8)
    assert chem.hamming_distance(chem.Fingerprint(v), chem.Fingerprint(1 - v)) == 1024


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        chem.tanimoto(bits({1}, 16), bits({1}, 32))
    with pytest.raises(LengthMismatch):
        chem.hamming_distance(bits({1}, 16), bits({1}, 32))


bitvec = st.lists(st.integers(0, 1), min_size=70, max_size=70).map(lambda v: chem.Fingerprint(np.array(v, dtype=np.uint8)))


@settings(max_examples=200, deadline=None)
@given(bitvec, bitvec, bitvec)
def test_similarity_properties(a, b, c):
    t = chem.tanimoto(a, b)
    assert 0.0 <= t <= 1.0 and t == chem.tanimoto(b, a)
    h = chem.hamming_distance
    assert h(a, c) <= h(a, b) + h(b, c)
    assert h(a, b) == h(b, a) and h(a, a) == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 200))
def test_pairwise_kernels_match_scalar(seed, nbits):
    rng = np.random.default_rng(seed)
    a = (rng.random((4, nbits)) < 0.3).astype(np.uint8)
    b = (rng.random((5, nbits)) < 0.3).astype(np.uint8)
    ham = chem.pairwise_hamming(a, b)
    tan = chem.pairwise_tanimoto(a, b)
    for i in range(4):
        for j in range(5):
            fa, fb = chem.Fingerprint(a[i]), chem.Fingerprint(b[j])
            assert ham[i, j] == chem.hamming_distance(fa, fb)
            assert tan[i, j] == chem.tanimoto(fa, fb)


# --- hex and cache files ----------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=8, max_size=300))
def test_hex_round_trip(values):
    v = np.array(values, dtype=np.uint8)
    assert np.array_equal(chem.hex_to_bits(chem.bits_to_hex(v), len(v)), v)


def test_hex_bit_order():
    v = np.zeros(8, dtype=np.uint8)
    v[0] = 1
    assert chem.bits_to_hex(v) == "80"


def test_cache_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    b = rng.integers(0, 2, size=(3, 64)).astype(np.uint8)
    path = tmp_path / "fp.tsv"
    chem.write_fingerprint_cache(path, ["a", "b", "c"], b, 2, 64)
    first = path.read_text().splitlines()[0]
    assert first == f"#ecfp radius=2 nbits=64 hash={chem.HASH_ID}"
    header, ids, back = chem.read_fingerprint_cache(path)
    assert header == {"radius": 2, "nbits": 64, "hash": chem.HASH_ID}
    assert ids == ["a", "b", "c"] and np.array_equal(back, b)


@pytest.mark.parametrize("first_line", ["", "ecfp radius=3", "#ecfp radius=x nbits=64 hash=h", "#ecfp nbits=64"])
def test_corrupt_cache_header(tmp_path, first_line):
    path = tmp_path / "fp.tsv"
    path.write_text(first_line + "\na\t00\n")
    with pytest.raises(CacheError):
        chem.read_fingerprint_cache(path)
