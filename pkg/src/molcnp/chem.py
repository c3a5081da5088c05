"""SMILES parsing, circular (ECFP-style) fingerprints and bit-vector similarity.

The parser covers the organic subset, bracket atoms with H-count and charge,
branches, ring closures (including ``%nn``), explicit bond symbols and
aromatic lowercase atoms.  Stereochemistry, isotopes and atom classes are
rejected with :class:`UnknownAtomToken` instead of being dropped.

Fingerprints use a seedless splitmix64-style mixing hash, so bits are stable
across processes and platforms but are not compatible with RDKit's Morgan
bits.  Precomputed fingerprints can be ingested through :mod:`molcnp.data`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from molcnp import kernels
from molcnp.errors import (
    CacheError,
    EmptyInput,
    InvalidBond,
    LengthMismatch,
    UnbalancedParenthesis,
    UnclosedRingBond,
    UnknownAtomToken,
)

HASH_ID = "splitmix64-v1"
AROMATIC_BOND = 4

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# fmt: off
_ELEMENTS = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga",
    "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd",
    "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm",
    "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os",
    "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa",
    "U",
]
# fmt: on
ATOMIC_NUMBER = {sym: z for z, sym in enumerate(_ELEMENTS, start=1)}

_ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
_AROMATIC_BRACKET = ("se", "as", "b", "c", "n", "o", "p", "s")
_DEFAULT_VALENCE = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}
_BOND_SYMBOLS = {"-": 1, "=": 2, "#": 3, ":": AROMATIC_BOND}


@dataclass(frozen=True)
class Atom:
    symbol: str
    aromatic: bool
    charge: int
    hydrogens: int


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[tuple[int, int, int], ...]

    def neighbors(self) -> list[list[tuple[int, int]]]:
        """Adjacency as ``(bond order, neighbor index)`` lists per atom."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for i, j, order in self.bonds:
            adj[i].append((order, j))
            adj[j].append((order, i))
        return adj


@dataclass
class Fingerprint:
    bits: np.ndarray
    radius: int = 3
    nbits: int = field(init=False)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1:
            raise ValueError("fingerprint bits must be a 1-D vector")
        self.nbits = int(self.bits.shape[0])

    def __eq__(self, other):
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return self.nbits == other.nbits and bool(np.array_equal(self.bits, other.bits))

    def popcount(self) -> int:
        return int(self.bits.sum())

    def to_hex(self) -> str:
        return bits_to_hex(self.bits)


# ---------------------------------------------------------------------------
# SMILES parsing


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[dict] = []
        self.bonds: dict[tuple[int, int], int] = {}
        self.explicit_h: list[bool] = []

    def parse(self) -> MolGraph:
        text = self.text
        prev: int | None = None
        pending_bond: int | None = None
        branch_stack: list[tuple[int | None, int]] = []
        rings: dict[int, tuple[int, int | None, int]] = {}

        while self.pos < len(text):
            ch = text[self.pos]
            start = self.pos
            if ch == "(":
                if prev is None or pending_bond is not None:
                    raise UnbalancedParenthesis("branch without a preceding atom", start)
                branch_stack.append((prev, start))
                self.pos += 1
            elif ch == ")":
                if not branch_stack or pending_bond is not None:
                    raise UnbalancedParenthesis("unmatched ')'", start)
                prev, _ = branch_stack.pop()
                self.pos += 1
            elif ch in _BOND_SYMBOLS:
                if prev is None or pending_bond is not None:
                    raise InvalidBond(f"bond symbol {ch!r} without a preceding atom", start)
                pending_bond = _BOND_SYMBOLS[ch]
                self.pos += 1
            elif ch == ".":
                if prev is None or pending_bond is not None:
                    raise InvalidBond("misplaced '.'", start)
                prev = None
                self.pos += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    raise UnclosedRingBond("ring-closure digit without an atom", start)
                label = self._ring_label()
                if label in rings:
                    other, other_bond, _ = rings.pop(label)
                    if pending_bond is not None and other_bond is not None and pending_bond != other_bond:
                        raise InvalidBond("conflicting ring-closure bond symbols", start)
                    order = pending_bond if pending_bond is not None else other_bond
                    self._add_bond(other, prev, order, start)
                else:
                    rings[label] = (prev, pending_bond, start)
                pending_bond = None
            else:
                idx = self._atom()
                if prev is not None:
                    self._add_bond(prev, idx, pending_bond, start)
                elif pending_bond is not None:
                    raise InvalidBond("bond symbol without a preceding atom", start)
                pending_bond = None
                prev = idx

        if pending_bond is not None:
            raise InvalidBond("dangling bond symbol", len(text) - 1)
        if branch_stack:
            raise UnbalancedParenthesis("unclosed '('", branch_stack[-1][1])
        if rings:
            offset = min(r[2] for r in rings.values())
            raise UnclosedRingBond("ring bond opened but never closed", offset)
        return self._finish()

    def _ring_label(self) -> int:
        text = self.text
        if text[self.pos] == "%":
            digits = text[self.pos + 1 : self.pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise UnclosedRingBond("'%' must be followed by two digits", self.pos)
            self.pos += 3
            return int(digits)
        label = int(text[self.pos])
        self.pos += 1
        return label

    def _add_bond(self, i: int, j: int, order: int | None, offset: int) -> None:
        if i == j:
            raise InvalidBond("atom bonded to itself", offset)
        key = (min(i, j), max(i, j))
        if key in self.bonds:
            raise InvalidBond("duplicate bond between the same atoms", offset)
        if order is None:
            both_aromatic = self.atoms[i]["aromatic"] and self.atoms[j]["aromatic"]
            order = AROMATIC_BOND if both_aromatic else 1
        self.bonds[key] = order

    def _atom(self) -> int:
        text = self.text
        start = self.pos
        if text[start] == "[":
            return self._bracket_atom()
        for sym in _ORGANIC:
            if text.startswith(sym, start):
                self.pos += len(sym)
                return self._new_atom(sym, False, 0, None)
        for sym in _AROMATIC_ORGANIC:
            if text.startswith(sym, start):
                self.pos += 1
                return self._new_atom(sym.upper(), True, 0, None)
        raise UnknownAtomToken(f"unexpected character {text[start]!r}", start)

    def _bracket_atom(self) -> int:
        text = self.text
        start = self.pos
        end = text.find("]", start)
        if end < 0:
            raise UnknownAtomToken("unterminated bracket atom", start)
        body = text[start + 1 : end]
        i = 0
        if body[:1].isdigit():
            raise UnknownAtomToken("isotopes are not supported", start + 1)
        aromatic = False
        symbol = None
        for sym in _AROMATIC_BRACKET:
            if body.startswith(sym, i):
                symbol, aromatic = sym.capitalize(), True
                break
        if symbol is None:
            two, one = body[i : i + 2], body[i : i + 1]
            if two in ATOMIC_NUMBER:
                symbol = two
            elif one in ATOMIC_NUMBER:
                symbol = one
            else:
                raise UnknownAtomToken(f"unknown element in {body!r}", start + 1)
        i += len(symbol)
        hydrogens = 0
        if body[i : i + 1] == "H":
            i += 1
            j = i
            while j < len(body) and body[j].isdigit():
                j += 1
            hydrogens = int(body[i:j]) if j > i else 1
            i = j
        charge = 0
        if body[i : i + 1] in ("+", "-"):
            sign = 1 if body[i] == "+" else -1
            j = i + 1
            while j < len(body) and body[j] == body[i]:
                j += 1
            if j > i + 1:
                charge = sign * (j - i)
                i = j
            else:
                k = j
                while k < len(body) and body[k].isdigit():
                    k += 1
                charge = sign * (int(body[j:k]) if k > j else 1)
                i = k
        if i != len(body):
            raise UnknownAtomToken(f"unsupported bracket-atom feature {body[i:]!r}", start + 1 + i)
        self.pos = end + 1
        return self._new_atom(symbol, aromatic, charge, hydrogens)

    def _new_atom(self, symbol, aromatic, charge, hydrogens) -> int:
        self.atoms.append({"symbol": symbol, "aromatic": aromatic, "charge": charge, "h": hydrogens})
        return len(self.atoms) - 1

    def _finish(self) -> MolGraph:
        valence = [0] * len(self.atoms)
        has_aromatic_bond = [False] * len(self.atoms)
        for (i, j), order in self.bonds.items():
            step = 1 if order == AROMATIC_BOND else order
            valence[i] += step
            valence[j] += step
            if order == AROMATIC_BOND:
                has_aromatic_bond[i] = has_aromatic_bond[j] = True
        atoms = []
        for idx, a in enumerate(self.atoms):
            h = a["h"]
            if h is None:
                used = valence[idx] + (1 if a["aromatic"] or has_aromatic_bond[idx] else 0)
                h = 0
                for target in _DEFAULT_VALENCE[a["symbol"]]:
                    if target >= used:
                        h = target - used
                        break
            atoms.append(Atom(a["symbol"], a["aromatic"], a["charge"], h))
        bonds = tuple((i, j, o) for (i, j), o in sorted(self.bonds.items()))
        return MolGraph(tuple(atoms), bonds)


def parse_smiles(text: str) -> MolGraph:
    """Parse a SMILES string into a :class:`MolGraph`.

    Raises a :class:`~molcnp.errors.SmilesError` subclass carrying the byte
    offset of the fault.
    """
    if not text:
        raise EmptyInput("empty SMILES", 0)
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Hashing and fingerprints


def mix64(z: int) -> int:
    """splitmix64 finalizer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def hash_sequence(values: Iterable[int]) -> int:
    h = _GOLDEN
    for v in values:
        h = mix64((h ^ (v & _MASK)) + _GOLDEN)
    return h


def atom_invariant(mol: MolGraph, index: int, degree: int) -> int:
    a = mol.atoms[index]
    return hash_sequence(
        (ATOMIC_NUMBER[a.symbol], degree, a.hydrogens, a.charge, 1 if a.aromatic else 0)
    )


def environment_ids(mol: MolGraph, radius: int) -> list[list[int]]:
    """Identifiers per iteration: ``ids[k][atom]`` for k in 0..radius."""
    adj = mol.neighbors()
    current = [atom_invariant(mol, i, len(adj[i])) for i in range(len(mol.atoms))]
    history = [current]
    for iteration in range(1, radius + 1):
        nxt = []
        for i, nbrs in enumerate(adj):
            pairs = sorted((order, current[j]) for order, j in nbrs)
            flat = [iteration, current[i]]
            for order, ident in pairs:
                flat.append(order)
                flat.append(ident)
            nxt.append(hash_sequence(flat))
        current = nxt
        history.append(current)
    return history


def ecfp_fingerprint(mol: MolGraph, radius: int = 3, nbits: int = 1024) -> Fingerprint:
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if nbits < 8 or nbits & (nbits - 1):
        raise ValueError("nbits must be a power of two and at least 8")
    bits = np.zeros(nbits, dtype=np.uint8)
    for ids in environment_ids(mol, radius):
        for ident in ids:
            bits[ident % nbits] = 1
    return Fingerprint(bits, radius=radius)


def smiles_fingerprint(smiles: str, radius: int = 3, nbits: int = 1024) -> Fingerprint:
    return ecfp_fingerprint(parse_smiles(smiles), radius, nbits)


# ---------------------------------------------------------------------------
# Similarity


def _check_lengths(a: Fingerprint, b: Fingerprint) -> None:
    if a.nbits != b.nbits:
        raise LengthMismatch(f"fingerprint lengths differ: {a.nbits} vs {b.nbits}")


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    _check_lengths(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    return 1.0 if union == 0 else inter / union


def hamming_distance(a: Fingerprint, b: Fingerprint) -> int:
    _check_lengths(a, b)
    return int(np.count_nonzero(a.bits ^ b.bits))


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a (n, nbits) 0/1 matrix into (n, words) uint64 rows, zero padded."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    n, nbits = bits.shape
    words = max(1, -(-nbits // 64))
    padded = np.zeros((n, words * 64), dtype=np.uint8)
    padded[:, :nbits] = bits
    return np.ascontiguousarray(np.packbits(padded, axis=1, bitorder="little").view("<u8"))


def pairwise_hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamming distances between rows of two 0/1 matrices."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    if a.shape[1] != b.shape[1]:
        raise LengthMismatch(f"fingerprint lengths differ: {a.shape[1]} vs {b.shape[1]}")
    return kernels.pairwise_hamming(pack_bits(a), pack_bits(b))


def pairwise_tanimoto(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    if a.shape[1] != b.shape[1]:
        raise LengthMismatch(f"fingerprint lengths differ: {a.shape[1]} vs {b.shape[1]}")
    return kernels.pairwise_tanimoto(pack_bits(a), pack_bits(b))


# ---------------------------------------------------------------------------
# Hex encoding and the fingerprint cache file


def bits_to_hex(bits: np.ndarray) -> str:
    """Hex of the bit vector packed MSB-first (bit 0 is the top bit of byte 0)."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


def hex_to_bits(text: str, nbits: int) -> np.ndarray:
    raw = bytes.fromhex(text)
    if len(raw) * 8 < nbits:
        raise ValueError(f"hex string encodes {len(raw) * 8} bits, need {nbits}")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:nbits].copy()


def cache_header(radius: int, nbits: int) -> str:
    return f"#ecfp radius={radius} nbits={nbits} hash={HASH_ID}"


def parse_cache_header(line: str, path) -> dict:
    parts = line.strip().split()
    if not parts or parts[0] != "#ecfp":
        raise CacheError(f"{path}: missing '#ecfp' header")
    fields = {}
    for part in parts[1:]:
        key, sep, value = part.partition("=")
        if not sep:
            raise CacheError(f"{path}: malformed header field {part!r}")
        fields[key] = value
    try:
        return {"radius": int(fields["radius"]), "nbits": int(fields["nbits"]), "hash": fields["hash"]}
    except (KeyError, ValueError) as exc:
        raise CacheError(f"{path}: malformed header {line.strip()!r}") from exc


def write_fingerprint_cache(path, ids, bits: np.ndarray, radius: int, nbits: int) -> None:
    lines = [cache_header(radius, nbits)]
    for mol_id, row in zip(ids, bits):
        lines.append(f"{mol_id}\t{bits_to_hex(row)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_fingerprint_cache(path):
    """Return ``(header, ids, bits)`` from a cache file."""
    path = Path(path)
    with path.open() as fh:
        header = parse_cache_header(fh.readline(), path)
        ids, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            mol_id, sep, hexbits = line.partition("\t")
            if not sep:
                raise CacheError(f"{path}:{lineno}: expected '<id>\\t<hex>'")
            try:
                rows.append(hex_to_bits(hexbits, header["nbits"]))
            except ValueError as exc:
                raise CacheError(f"{path}:{lineno}: {exc}") from exc
            ids.append(mol_id)
    bits = np.array(rows, dtype=np.uint8).reshape(len(rows), header["nbits"])
    return header, ids, bits
