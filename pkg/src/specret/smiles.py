"""SMILES tokenization, parsing, canonicalization and simple molecular descriptors.

Supported subset: organic-subset atoms, bracket atoms with H count and charge,
branches, ring-bond digits 0-9, explicit bond symbols and '.' separated
components. Stereochemistry, isotopes and wildcards are rejected.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "H")
ORGANIC = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC = ("b", "c", "n", "o", "p", "s")

# allowed valences for organic-subset atoms, lowest that fits wins
DEFAULT_VALENCES = {
    "B": (3,), "C": (4,), "N": (3,), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,), "H": (1,),
}
MAX_VALENCE = {
    "B": 3, "C": 4, "N": 3, "O": 2, "P": 5, "S": 6,
    "F": 1, "Cl": 1, "Br": 1, "I": 1, "H": 1,
}

MONOISOTOPIC_MASS = {
    "H": 1.00782503207,
    "B": 11.0093054,
    "C": 12.0,
    "N": 14.0030740048,
    "O": 15.99491461956,
    "F": 18.99840322,
    "P": 30.97376163,
    "S": 31.97207100,
    "Cl": 34.96885268,
    "Br": 78.9183371,
    "I": 126.904473,
}

SINGLE, DOUBLE, TRIPLE, AROMATIC_BOND = 1, 2, 3, 4
BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC_BOND}
_BOND_TEXT = {SINGLE: "-", DOUBLE: "=", TRIPLE: "#", AROMATIC_BOND: ":"}

# ---------------------------------------------------------------------------
# errors


class SmilesError(ValueError):
    """Base class for every SMILES tokenization or parse failure."""


class UnknownCharacter(SmilesError):
    def __init__(self, position: int, char: str):
        super().__init__(f"unknown character {char!r} at position {position}")
        self.position = position
        self.char = char


class UnclosedRing(SmilesError):
    def __init__(self, digit: str):
        super().__init__(f"ring bond {digit} never closed")
        self.digit = digit


class UnclosedBranch(SmilesError):
    def __init__(self):
        super().__init__("unclosed branch")


class ValenceOverflow(SmilesError):
    def __init__(self, atom_index: int, valence: int, allowed: int):
        super().__init__(
            f"atom {atom_index} has valence {valence}, max allowed {allowed}"
        )
        self.atom_index = atom_index


class SmilesSyntaxError(SmilesError):
    pass


# ---------------------------------------------------------------------------
# vocabulary and tokenizer

PAD, BOS, EOS, CLS = "<pad>", "<bos>", "<eos>", "<cls>"
SPECIAL_TOKENS = (PAD, BOS, EOS, CLS)

_SURFACE_TOKENS = (
    list(ORGANIC)
    + list(AROMATIC)
    + ["H"]
    + ["-", "=", "#", ":", "+"]
    + ["(", ")", "[", "]", "."]
    + [str(d) for d in range(10)]
)


class Vocabulary:
    """Fixed token vocabulary: special tokens followed by surface tokens."""

    def __init__(self, tokens: Sequence[str] = SPECIAL_TOKENS + tuple(_SURFACE_TOKENS)):
        self.tokens = tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id = self.index[PAD]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]
        self.cls_id = self.index[CLS]

    def __len__(self) -> int:
        return len(self.tokens)

    def is_special(self, token_id: int) -> bool:
        return self.tokens[token_id] in SPECIAL_TOKENS


VOCAB = Vocabulary()


def tokenize_text(smiles: str) -> list[str]:
    """Split a SMILES string into surface tokens.

    Raises UnknownCharacter for characters outside the supported alphabet.
    """
    if not smiles:
        raise SmilesSyntaxError("empty SMILES")
    out = []
    i = 0
    n = len(smiles)
    while i < n:
        ch = smiles[i]
        two = smiles[i:i + 2]
        if two in ("Cl", "Br"):
            out.append(two)
            i += 2
            continue
        if ch in VOCAB.index and ch not in SPECIAL_TOKENS:
            out.append(ch)
            i += 1
            continue
        raise UnknownCharacter(i, ch)
    return out


def tokenize(smiles: str, vocab: Vocabulary = VOCAB) -> list[int]:
    return [vocab.index[t] for t in tokenize_text(smiles)]


def detokenize(ids: Iterable[int], vocab: Vocabulary = VOCAB) -> str:
    """Concatenate surface forms, skipping special tokens."""
    return "".join(vocab.tokens[i] for i in ids if not vocab.is_special(i))


def encode_for_model(smiles: str, vocab: Vocabulary = VOCAB) -> list[int]:
    """Token ids wrapped in BOS/EOS, the decoder target form."""
    return [vocab.bos_id] + tokenize(smiles, vocab) + [vocab.eos_id]


# ---------------------------------------------------------------------------
# graph types


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    explicit_h: int = 0
    aromatic: bool = False
    bracket: bool = False

    def __post_init__(self):
        if self.element not in ELEMENTS:
            raise SmilesSyntaxError(f"unsupported element {self.element!r}")
        if not 0 <= self.explicit_h <= 6:
            raise SmilesSyntaxError(f"explicit H count {self.explicit_h} out of range")
        if abs(self.formal_charge) > 3:
            raise SmilesSyntaxError(f"formal charge {self.formal_charge} out of range")


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: int = SINGLE

    @property
    def key(self) -> tuple[int, int]:
        return (self.a, self.b) if self.a < self.b else (self.b, self.a)


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = ()

    def __post_init__(self):
        seen = set()
        n = len(self.atoms)
        for bond in self.bonds:
            if bond.a == bond.b:
                raise SmilesSyntaxError(f"self-loop on atom {bond.a}")
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise SmilesSyntaxError("bond endpoint out of range")
            if bond.key in seen:
                raise SmilesSyntaxError(f"duplicate bond {bond.key}")
            seen.add(bond.key)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per atom: (neighbor, bond order) pairs."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.a].append((bond.b, bond.order))
            adj[bond.b].append((bond.a, bond.order))
        return tuple(tuple(a) for a in adj)

    @cached_property
    def hydrogens(self) -> tuple[int, ...]:
        return tuple(_hydrogen_count(self, i) for i in range(self.num_atoms))

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def permute(self, order: Sequence[int]) -> "MolGraph":
        """Relabel atoms: new atom k is old atom order[k]."""
        inverse = {old: new for new, old in enumerate(order)}
        atoms = tuple(self.atoms[old] for old in order)
        bonds = tuple(Bond(inverse[b.a], inverse[b.b], b.order) for b in self.bonds)
        return MolGraph(atoms, bonds)

    def components(self) -> list[list[int]]:
        seen = [False] * self.num_atoms
        comps = []
        for start in range(self.num_atoms):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                u = stack.pop()
                comp.append(u)
                for v, _ in self.adjacency[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
            comps.append(sorted(comp))
        return comps


def _bond_valence(graph: MolGraph, i: int, aromatic_bonus: bool = True) -> int:
    total = 0
    aromatic_bonds = 0
    for _, order in graph.adjacency[i]:
        if order == AROMATIC_BOND:
            aromatic_bonds += 1
            total += 1
        else:
            total += order
    if aromatic_bonus and graph.atoms[i].aromatic and aromatic_bonds:
        total += 1
    return total


def _max_valence(element: str, charge: int) -> int:
    base = MAX_VALENCE[element]
    if element in ("B",):
        return max(base - charge, 0)
    if element in ("C", "H"):
        return max(base - abs(charge), 0)
    return max(base + charge, 0)


def _hydrogen_count(graph: MolGraph, i: int) -> int:
    atom = graph.atoms[i]
    if atom.bracket:
        return atom.explicit_h
    used = _bond_valence(graph, i)
    for valence in DEFAULT_VALENCES[atom.element]:
        if valence >= used:
            return valence - used
    return 0


def check_valences(graph: MolGraph) -> None:
    for i, atom in enumerate(graph.atoms):
        used = _bond_valence(graph, i, aromatic_bonus=False) + (atom.explicit_h if atom.bracket else 0)
        allowed = _max_valence(atom.element, atom.formal_charge)
        if used > allowed:
            raise ValenceOverflow(i, used, allowed)


# ---------------------------------------------------------------------------
# parser


def _parse_bracket(tokens: list[str], pos: int) -> tuple[Atom, int]:
    """Parse tokens after '['; returns the atom and the index past ']'."""

    def at(k):
        return tokens[k] if k < len(tokens) else None

    sym = at(pos)
    if sym in ORGANIC or sym == "H":
        element, aromatic = sym, False
    elif sym in AROMATIC:
        element, aromatic = sym.upper(), True
    else:
        raise SmilesSyntaxError(f"bad bracket atom symbol {sym!r}")
    pos += 1
    hcount = 0
    if at(pos) == "H":
        pos += 1
        hcount = 1
        if at(pos) is not None and at(pos).isdigit():
            hcount = int(at(pos))
            pos += 1
    charge = 0
    if at(pos) in ("+", "-"):
        sign = 1 if at(pos) == "+" else -1
        pos += 1
        if at(pos) is not None and at(pos).isdigit():
            charge = sign * int(at(pos))
            pos += 1
        else:
            charge = sign
            while at(pos) == ("+" if sign > 0 else "-"):
                charge += sign
                pos += 1
    if at(pos) != "]":
        raise SmilesSyntaxError("unterminated or malformed bracket atom")
    return Atom(element, charge, hcount, aromatic, bracket=True), pos + 1


def parse(smiles: str) -> MolGraph:
    """Parse a SMILES string into a MolGraph."""
    tokens = tokenize_text(smiles)
    atoms: list[Atom] = []
    bonds: dict[tuple[int, int], Bond] = {}
    branch_stack: list[int] = []
    rings: dict[str, tuple[int, int | None]] = {}
    prev: int | None = None
    pending_bond: int | None = None
    branch_open_empty = False

    def add_bond(a: int, b: int, order: int | None):
        if a == b:
            raise SmilesSyntaxError(f"self-loop on atom {a}")
        if order is None:
            order = AROMATIC_BOND if atoms[a].aromatic and atoms[b].aromatic else SINGLE
        key = (a, b) if a < b else (b, a)
        if key in bonds:
            raise SmilesSyntaxError(f"duplicate bond between atoms {a} and {b}")
        bonds[key] = Bond(key[0], key[1], order)

    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok in ORGANIC or tok in AROMATIC or tok == "[":
            if tok == "[":
                atom, i = _parse_bracket(tokens, i + 1)
            else:
                if tok in AROMATIC:
                    atom = Atom(tok.upper(), aromatic=True)
                else:
                    atom = Atom(tok)
                i += 1
            idx = len(atoms)
            atoms.append(atom)
            if prev is not None:
                add_bond(prev, idx, pending_bond)
            elif pending_bond is not None:
                raise SmilesSyntaxError("bond symbol without a preceding atom")
            prev = idx
            pending_bond = None
            branch_open_empty = False
            continue
        if tok in BOND_SYMBOLS:
            if prev is None or pending_bond is not None:
                raise SmilesSyntaxError(f"misplaced bond symbol at token {i}")
            pending_bond = BOND_SYMBOLS[tok]
        elif tok.isdigit():
            if prev is None:
                raise SmilesSyntaxError("ring bond digit before any atom")
            if tok in rings:
                other, order = rings.pop(tok)
                if order is not None and pending_bond is not None and order != pending_bond:
                    raise SmilesSyntaxError(f"conflicting bond orders on ring bond {tok}")
                add_bond(other, prev, pending_bond if pending_bond is not None else order)
            else:
                rings[tok] = (prev, pending_bond)
            pending_bond = None
        elif tok == "(":
            if prev is None or pending_bond is not None:
                raise SmilesSyntaxError("branch without a preceding atom")
            branch_stack.append(prev)
            branch_open_empty = True
        elif tok == ")":
            if not branch_stack:
                raise SmilesSyntaxError("unmatched ')'")
            if branch_open_empty or pending_bond is not None:
                raise SmilesSyntaxError("empty branch or dangling bond")
            prev = branch_stack.pop()
        elif tok == ".":
            if prev is None or pending_bond is not None or branch_stack:
                raise SmilesSyntaxError("misplaced '.'")
            prev = None
        else:
            raise SmilesSyntaxError(f"unexpected token {tok!r}")
        i += 1

    if branch_stack:
        raise UnclosedBranch()
    if rings:
        raise UnclosedRing(sorted(rings)[0])
    if pending_bond is not None or prev is None:
        raise SmilesSyntaxError("SMILES ends with a bond or separator")
    graph = MolGraph(tuple(atoms), tuple(bonds[k] for k in sorted(bonds)))
    check_valences(graph)
    return graph


# ---------------------------------------------------------------------------
# canonicalization


def _atom_invariant(graph: MolGraph, i: int) -> tuple:
    atom = graph.atoms[i]
    return (
        ELEMENTS.index(atom.element),
        atom.aromatic,
        atom.formal_charge,
        graph.degree(i),
        graph.hydrogens[i],
    )


def _dense_ranks(keys: Sequence) -> list[int]:
    order = sorted(set(keys))
    lookup = {k: r for r, k in enumerate(order)}
    return [lookup[k] for k in keys]


def _refine(graph: MolGraph, ranks: list[int]) -> list[int]:
    """Iterate neighbourhood refinement until the partition is stable."""
    while True:
        keys = [
            (ranks[i], tuple(sorted((ranks[j], order) for j, order in graph.adjacency[i])))
            for i in range(graph.num_atoms)
        ]
        new = _dense_ranks(keys)
        if len(set(new)) == len(set(ranks)):
            return new
        ranks = new


def _twins(graph: MolGraph, i: int, j: int) -> bool:
    """True when swapping i and j is an automorphism (identical neighbourhoods)."""
    ni = {(v, o) for v, o in graph.adjacency[i] if v != j}
    nj = {(v, o) for v, o in graph.adjacency[j] if v != i}
    return graph.atoms[i] == graph.atoms[j] and ni == nj


_TIE_BUDGET = 2000


def _emit_component(graph: MolGraph, ranks: list[int], comp: list[int]) -> str:
    start = min(comp, key=lambda a: ranks[a])
    visited: set[int] = set()
    parent: dict[int, int] = {}
    order: list[int] = []
    ring_bonds: list[tuple[int, int]] = []
    # iterative DFS to fix the spanning tree and ring-closure bonds
    stack = [(start, -1)]
    while stack:
        u, p = stack.pop()
        if u in visited:
            continue
        visited.add(u)
        order.append(u)
        if p >= 0:
            parent[u] = p
        nbrs = sorted((v for v, _ in graph.adjacency[u]), key=lambda v: ranks[v], reverse=True)
        for v in nbrs:
            if v not in visited:
                stack.append((v, u))
    tree = {(min(u, p), max(u, p)) for u, p in parent.items()}
    pos = {a: k for k, a in enumerate(order)}
    for bond in graph.bonds:
        if bond.a in visited and bond.key not in tree:
            ring_bonds.append(bond.key)
    bond_order = {b.key: b.order for b in graph.bonds}

    # ring openings sorted by closing partner position for stable digits
    openings: dict[int, list[int]] = {a: [] for a in order}
    closings: dict[int, list[int]] = {a: [] for a in order}
    for a, b in ring_bonds:
        first, second = (a, b) if pos[a] < pos[b] else (b, a)
        openings[first].append(second)
        closings[second].append(first)

    children: dict[int, list[int]] = {a: [] for a in order}
    for child, p in parent.items():
        children[p].append(child)
    for a in children:
        children[a].sort(key=lambda v: pos[v])

    free_digits = list(range(1, 10)) + [0]
    assigned: dict[tuple[int, int], int] = {}
    out: list[str] = []

    def bond_text(u: int, v: int) -> str:
        o = bond_order[(min(u, v), max(u, v))]
        au, av = graph.atoms[u].aromatic, graph.atoms[v].aromatic
        if o == AROMATIC_BOND:
            return "" if au and av else ":"
        if o == SINGLE:
            return "-" if au and av else ""
        return _BOND_TEXT[o]

    def visit(u: int):
        out.append(_atom_text(graph, u))
        tokens = []
        for v in sorted(closings[u], key=lambda w: pos[w]):
            d = assigned.pop((v, u))
            tokens.append((d, str(d)))
            free_digits.append(d)
        for v in sorted(openings[u], key=lambda w: pos[w]):
            if not free_digits:
                raise SmilesError("more than 10 simultaneously open rings")
            free_digits.sort(key=_digit_key)
            d = free_digits.pop(0)
            assigned[(u, v)] = d
            tokens.append((d, bond_text(u, v) + str(d)))
        free_digits.sort(key=_digit_key)
        out.extend(t for _, t in tokens)
        kids = children[u]
        for k, v in enumerate(kids):
            last = k == len(kids) - 1
            if not last:
                out.append("(")
            out.append(bond_text(u, v))
            visit(v)
            if not last:
                out.append(")")

    visit(start)
    return "".join(out)


def _digit_key(d: int) -> int:
    return 10 if d == 0 else d


def _atom_text(graph: MolGraph, i: int) -> str:
    atom = graph.atoms[i]
    h = graph.hydrogens[i]
    if atom.element in ORGANIC and atom.formal_charge == 0:
        plain = Atom(atom.element, aromatic=atom.aromatic)
        trial = MolGraph(graph.atoms[:i] + (plain,) + graph.atoms[i + 1:], graph.bonds)
        if _hydrogen_count(trial, i) == h:
            return atom.element.lower() if atom.aromatic else atom.element
    sym = atom.element.lower() if atom.aromatic else atom.element
    text = "[" + sym
    if h:
        text += "H" if h == 1 else f"H{h}"
    q = atom.formal_charge
    if q:
        text += ("+" if q > 0 else "-") + (str(abs(q)) if abs(q) > 1 else "")
    return text + "]"


def _canonical_component(sub: MolGraph) -> str:
    ranks = _refine(sub, _dense_ranks([_atom_invariant(sub, i) for i in range(sub.num_atoms)]))
    best: list[str | None] = [None]
    leaves = [0]
    everything = list(range(sub.num_atoms))

    def search(ranks: list[int]):
        if leaves[0] >= _TIE_BUDGET and best[0] is not None:
            return
        counts = Counter(ranks)
        tied = [r for r, c in counts.items() if c > 1]
        if not tied:
            leaves[0] += 1
            text = _emit_component(sub, ranks, everything)
            if best[0] is None or text < best[0]:
                best[0] = text
            return
        target = min(tied)
        cell = sorted(i for i in everything if ranks[i] == target)
        tried: list[int] = []
        for atom in cell:
            if any(_twins(sub, atom, t) for t in tried):
                continue
            tried.append(atom)
            split = [2 * r + (0 if (i == atom or r != target) else 1) for i, r in enumerate(ranks)]
            search(_refine(sub, _dense_ranks(split)))

    search(ranks)
    return best[0]


def canonicalize(graph: MolGraph) -> str:
    """Deterministic SMILES invariant under atom permutation."""
    parts = []
    for comp in graph.components():
        parts.append(_canonical_component(_subgraph(graph, comp)))
    return ".".join(sorted(parts))


def _subgraph(graph: MolGraph, atoms: Sequence[int]) -> MolGraph:
    keep = {a: k for k, a in enumerate(atoms)}
    # bracket status is lost on subgraphs, so pin hydrogens explicitly
    new_atoms = tuple(
        Atom(graph.atoms[a].element, graph.atoms[a].formal_charge, graph.hydrogens[a],
             graph.atoms[a].aromatic, bracket=True)
        for a in atoms
    )
    bonds = tuple(
        Bond(keep[b.a], keep[b.b], b.order)
        for b in graph.bonds if b.a in keep and b.b in keep
    )
    return MolGraph(new_atoms, bonds)


def canonical_smiles(smiles: str) -> str:
    return canonicalize(parse(smiles))


# ---------------------------------------------------------------------------
# descriptors


def molecular_formula(graph: MolGraph) -> dict[str, int]:
    counts: Counter[str] = Counter()
    for i, atom in enumerate(graph.atoms):
        counts[atom.element] += 1
        counts["H"] += graph.hydrogens[i]
    return {k: v for k, v in sorted(counts.items()) if v}


def formula_string(formula: dict[str, int]) -> str:
    """Hill-order formula text, e.g. C2H6O."""
    keys = sorted(formula)
    if "C" in formula:
        keys = ["C"] + (["H"] if "H" in formula else []) + [k for k in keys if k not in ("C", "H")]
    return "".join(k + (str(formula[k]) if formula[k] != 1 else "") for k in keys if formula[k])


def parse_formula(text: str) -> dict[str, int]:
    import re

    counts: Counter[str] = Counter()
    pos = 0
    for m in re.finditer(r"([A-Z][a-z]?)(\d*)", text):
        if m.start() != pos:
            raise ValueError(f"bad formula {text!r}")
        pos = m.end()
        counts[m.group(1)] += int(m.group(2) or 1)
    if pos != len(text):
        raise ValueError(f"bad formula {text!r}")
    return {k: v for k, v in sorted(counts.items()) if v}


def formula_mass(formula: dict[str, int]) -> float:
    # fixed element order keeps the float sum independent of dict ordering
    return float(sum(MONOISOTOPIC_MASS[el] * formula[el] for el in sorted(formula)))


def monoisotopic_mass(graph: MolGraph) -> float:
    return formula_mass(molecular_formula(graph))


def _stable_hash(*parts) -> int:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def morgan_fingerprint(graph: MolGraph, radius: int = 2, bits: int = 2048) -> np.ndarray:
    """Circular fingerprint by iterative neighbourhood hashing, as a bool vector."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if bits <= 0 or bits & (bits - 1):
        raise ValueError("bits must be a power of two")
    ids = [_stable_hash(_atom_invariant(graph, i)) for i in range(graph.num_atoms)]
    features = set(ids)
    for _ in range(radius):
        ids = [
            _stable_hash(ids[i], tuple(sorted((order, ids[j]) for j, order in graph.adjacency[i])))
            for i in range(graph.num_atoms)
        ]
        features.update(ids)
    fp = np.zeros(bits, dtype=bool)
    for f in features:
        fp[f % bits] = True
    return fp


def fingerprint_to_hex(fp: np.ndarray) -> str:
    return np.packbits(fp.astype(np.uint8)).tobytes().hex()


def fingerprint_from_hex(text: str, bits: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    return np.unpackbits(raw)[:bits].astype(bool)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MoleculeRecord:
    smiles: str
    canonical_smiles: str
    graph: MolGraph = field(repr=False, compare=False)
    formula: dict[str, int] = field(compare=False)
    parent_mass: float = field(compare=False)

    @classmethod
    def from_smiles(cls, smiles: str) -> "MoleculeRecord":
        graph = parse(smiles)
        canon = canonicalize(graph)
        formula = molecular_formula(graph)
        return cls(smiles, canon, graph, formula, formula_mass(formula))

    @property
    def formula_text(self) -> str:
        return formula_string(self.formula)
