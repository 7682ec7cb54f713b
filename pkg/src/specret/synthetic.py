"""Seeded random molecule corpora for desk-scale experiments and tests."""

from __future__ import annotations

import numpy as np

from . import smiles as sm

_ELEMENTS = ("C", "N", "O", "S", "Cl")
_WEIGHTS = np.array([0.62, 0.13, 0.17, 0.04, 0.04])


def random_molecule(rng: np.random.Generator, min_atoms: int = 4, max_atoms: int = 10,
                    ring_prob: float = 0.3, double_prob: float = 0.15) -> sm.MolGraph:
    """Grow a random valence-respecting heavy-atom graph."""
    n = int(rng.integers(min_atoms, max_atoms + 1))
    elements: list[str] = ["C"]
    bonds: dict[tuple[int, int], int] = {}
    used = [0]

    def free(i: int) -> int:
        return sm.MAX_VALENCE[elements[i]] - used[i] if elements[i] != "S" else 2 - used[i]

    while len(elements) < n:
        el = _ELEMENTS[rng.choice(len(_ELEMENTS), p=_WEIGHTS)]
        hosts = [i for i in range(len(elements)) if free(i) >= 1]
        if not hosts:
            break
        host = int(rng.choice(hosts))
        order = 1
        cap = min(free(host), sm.MAX_VALENCE[el] if el != "S" else 2)
        if cap >= 2 and rng.random() < double_prob:
            order = 2
        elements.append(el)
        used.append(order)
        used[host] += order
        bonds[(host, len(elements) - 1)] = order
    if rng.random() < ring_prob and len(elements) >= 5:
        dist = _distances(len(elements), bonds)
        pairs = [(i, j) for i in range(len(elements)) for j in range(i + 1, len(elements))
                 if free(i) >= 1 and free(j) >= 1 and 4 <= dist[i][j] + 1 <= 6]
        if pairs:
            i, j = pairs[int(rng.integers(len(pairs)))]
            bonds[(i, j)] = 1
            used[i] += 1
            used[j] += 1
    atoms = tuple(sm.Atom(el) for el in elements)
    return sm.MolGraph(atoms, tuple(sm.Bond(a, b, o) for (a, b), o in sorted(bonds.items())))


def _distances(n: int, bonds) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in bonds:
        adj[a].append(b)
        adj[b].append(a)
    out = []
    for s in range(n):
        dist = [10 ** 6] * n
        dist[s] = 0
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if dist[v] > dist[u] + 1:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        out.append(dist)
    return out


def molecule_corpus(count: int, seed: int = 0, exclude=(), **kwargs) -> list[str]:
    """`count` distinct canonical SMILES, none in `exclude`."""
    rng = np.random.default_rng(seed)
    seen = set(exclude)
    out: list[str] = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 200 * count + 1000:
            raise RuntimeError("could not generate enough distinct molecules")
        g = random_molecule(rng, **kwargs)
        if not g.bonds:
            continue
        canon = sm.canonicalize(g)
        if canon in seen:
            continue
        seen.add(canon)
        out.append(canon)
    return out
