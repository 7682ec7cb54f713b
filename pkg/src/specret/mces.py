"""Maximum common edge subgraph (MCES) distance between heavy-atom graphs.

Distance is |E1| + |E2| - 2 * (common edges). Two solvers live here: an
exact branch-and-bound search over edge assignments, and a small-graph
brute force that checks edge subsets directly, used as its oracle.
"""

from __future__ import annotations

import itertools
from collections import Counter, deque
from dataclasses import dataclass, field

from . import smiles as sm

DEFAULT_NODE_BUDGET = 1_000_000
BRUTEFORCE_MAX_EDGES = 8


class TooLarge(ValueError):
    pass


class BoundViolation(AssertionError):
    """The search bound undercut an achievable subtree optimum."""


AtomLabel = tuple[str, bool]


@dataclass(frozen=True)
class EdgeLabel:
    ends: tuple[AtomLabel, AtomLabel]
    order: int

    @classmethod
    def of(cls, a: AtomLabel, b: AtomLabel, order: int) -> "EdgeLabel":
        return cls(tuple(sorted((a, b))), order)


@dataclass
class MCESResult:
    common_edge_count: int
    distance: int
    mapping: list[tuple[int, int]] = field(default_factory=list)
    optimal: bool = True
    nodes_expanded: int = 0
    upper_bound: int | None = None


@dataclass
class _Graph:
    labels: list[AtomLabel]
    edges: list[tuple[int, int, int]]  # (u, v, order), u < v
    adj: dict[int, dict[int, int]]  # node -> neighbor -> edge index

    def edge_label(self, j: int) -> EdgeLabel:
        u, v, order = self.edges[j]
        return EdgeLabel.of(self.labels[u], self.labels[v], order)


def heavy_graph(graph: sm.MolGraph) -> _Graph:
    """Drop explicit hydrogens and relabel the remaining atoms densely."""
    keep = [i for i, a in enumerate(graph.atoms) if a.element != "H"]
    new = {old: k for k, old in enumerate(keep)}
    labels = [(graph.atoms[i].element, graph.atoms[i].aromatic) for i in keep]
    edges = []
    for b in graph.bonds:
        if b.a in new and b.b in new:
            u, v = sorted((new[b.a], new[b.b]))
            edges.append((u, v, b.order))
    adj: dict[int, dict[int, int]] = {i: {} for i in range(len(labels))}
    for j, (u, v, _) in enumerate(edges):
        adj[u][v] = j
        adj[v][u] = j
    return _Graph(labels, edges, adj)


def _as_graph(g) -> _Graph:
    if isinstance(g, _Graph):
        return g
    if isinstance(g, str):
        g = sm.parse(g)
    return heavy_graph(g)


def _result(g1: _Graph, g2: _Graph, common: int, mapping, optimal=True, nodes=0, ub=None) -> MCESResult:
    return MCESResult(common, len(g1.edges) + len(g2.edges) - 2 * common, sorted(mapping),
                      optimal, nodes, common if ub is None else ub)


# -- brute force -------------------------------------------------------------

def _embeds(g1: _Graph, subset: tuple[int, ...], g2: _Graph) -> list[tuple[int, int]] | None:
    """Injective label-preserving node map sending every subset edge onto an
    equal-order edge of g2, or None."""
    nodes: list[int] = []
    for j in subset:
        u, v, _ = g1.edges[j]
        for x in (u, v):
            if x not in nodes:
                nodes.append(x)
    need = {x: [] for x in nodes}
    for j in subset:
        u, v, order = g1.edges[j]
        need[u].append((v, order))
        need[v].append((u, order))
    phi: dict[int, int] = {}

    def place(k: int) -> bool:
        if k == len(nodes):
            return True
        x = nodes[k]
        for y, label in enumerate(g2.labels):
            if label != g1.labels[x] or y in phi.values():
                continue
            ok = True
            for w, order in need[x]:
                if w in phi:
                    j2 = g2.adj[y].get(phi[w])
                    if j2 is None or g2.edges[j2][2] != order:
                        ok = False
                        break
            if ok:
                phi[x] = y
                if place(k + 1):
                    return True
                del phi[x]
        return False

    if not place(0):
        return None
    out = []
    for j in subset:
        u, v, _ = g1.edges[j]
        out.append((j, g2.adj[phi[u]][phi[v]]))
    return out


def mces_bruteforce(g1, g2) -> MCESResult:
    """Largest edge subset of the smaller graph that embeds in the other."""
    a, b = _as_graph(g1), _as_graph(g2)
    swapped = len(a.edges) > len(b.edges)
    if swapped:
        a, b = b, a
    if len(a.edges) > BRUTEFORCE_MAX_EDGES:
        raise TooLarge(f"brute force limited to {BRUTEFORCE_MAX_EDGES} edges on the smaller graph")
    for size in range(len(a.edges), 0, -1):
        for subset in itertools.combinations(range(len(a.edges)), size):
            mapping = _embeds(a, subset, b)
            if mapping is not None:
                if swapped:
                    mapping = [(y, x) for x, y in mapping]
                    return _result(b, a, size, mapping)
                return _result(a, b, size, mapping)
    return _result(a, b, 0, []) if not swapped else _result(b, a, 0, [])


# -- branch and bound --------------------------------------------------------

class _BudgetExhausted(Exception):
    pass


def _edge_order(g: _Graph) -> list[int]:
    """Breadth-first edge order so neighbouring edges are decided together."""
    seen_e: list[int] = []
    mark = set()
    for start in range(len(g.labels)):
        queue = deque([start])
        visited = {start}
        while queue:
            x = queue.popleft()
            for y, j in sorted(g.adj[x].items()):
                if j not in mark:
                    mark.add(j)
                    seen_e.append(j)
                if y not in visited:
                    visited.add(y)
                    queue.append(y)
    return seen_e


class _Search:
    def __init__(self, g1: _Graph, g2: _Graph, budget: int, check_bound: bool):
        self.g1, self.g2 = g1, g2
        self.order = _edge_order(g1)
        self.budget = budget
        self.check_bound = check_bound
        self.phi: dict[int, int] = {}
        self.inv: dict[int, int] = {}
        self.used = [False] * len(g2.edges)
        self.assigned: list[tuple[int, int]] = []
        self.best = 0
        self.best_map: list[tuple[int, int]] = []
        self.nodes = 0
        self.e1_label = [g1.edge_label(j) for j in range(len(g1.edges))]
        self.unused_by_label = Counter(g2.edge_label(j) for j in range(len(g2.edges)))
        self.e2_label = [g2.edge_label(j) for j in range(len(g2.edges))]

    def options(self, j1: int) -> list[tuple[int, int, int]]:
        """(image of u, image of v, g2 edge) choices consistent with the map."""
        u, v, order = self.g1.edges[j1]
        lu, lv = self.g1.labels[u], self.g1.labels[v]
        out = []
        pu, pv = self.phi.get(u), self.phi.get(v)
        if pu is not None and pv is not None:
            j2 = self.g2.adj[pu].get(pv)
            if j2 is not None and not self.used[j2] and self.g2.edges[j2][2] == order:
                out.append((pu, pv, j2))
            return out
        if pu is not None or pv is not None:
            fixed, free_label, fixed_is_u = (pu, lv, True) if pu is not None else (pv, lu, False)
            for y, j2 in sorted(self.g2.adj[fixed].items()):
                if (not self.used[j2] and y not in self.inv and self.g2.labels[y] == free_label
                        and self.g2.edges[j2][2] == order):
                    out.append((fixed, y, j2) if fixed_is_u else (y, fixed, j2))
            return out
        for j2, (a, b, o2) in enumerate(self.g2.edges):
            if self.used[j2] or o2 != order or a in self.inv or b in self.inv:
                continue
            for x, y in ((a, b), (b, a)):
                if self.g2.labels[x] == lu and self.g2.labels[y] == lv:
                    out.append((x, y, j2))
        return out

    def bound(self, depth: int) -> int:
        """Per edge label, min(assignable remaining g1 edges, unused g2 edges)."""
        feasible = Counter()
        for j1 in self.order[depth:]:
            u, v, _ = self.g1.edges[j1]
            if u in self.phi or v in self.phi:
                if not self.options(j1):
                    continue
            feasible[self.e1_label[j1]] += 1
        return sum(min(c, self.unused_by_label[lab]) for lab, c in feasible.items())

    def run(self, depth: int, count: int) -> int:
        """Explore; returns the best additional edge count found below."""
        self.nodes += 1
        if self.nodes > self.budget:
            raise _BudgetExhausted
        if count > self.best:
            self.best = count
            self.best_map = list(self.assigned)
        if depth == len(self.order):
            return 0
        ub = self.bound(depth)
        if not self.check_bound and count + ub <= self.best:
            return 0
        j1 = self.order[depth]
        u, v, _ = self.g1.edges[j1]
        best_below = 0
        for x, y, j2 in self.options(j1):
            new_u, new_v = u not in self.phi, v not in self.phi
            self.phi[u], self.phi[v] = x, y
            self.inv[x], self.inv[y] = u, v
            self.used[j2] = True
            self.unused_by_label[self.e2_label[j2]] -= 1
            self.assigned.append((j1, j2))
            best_below = max(best_below, 1 + self.run(depth + 1, count + 1))
            self.assigned.pop()
            self.unused_by_label[self.e2_label[j2]] += 1
            self.used[j2] = False
            if new_u:
                del self.phi[u], self.inv[x]
            if new_v:
                del self.phi[v], self.inv[y]
        best_below = max(best_below, self.run(depth + 1, count))
        if self.check_bound and ub < best_below:
            raise BoundViolation(f"bound {ub} < subtree optimum {best_below} at depth {depth}")
        return best_below


def mces_exact(g1, g2, node_budget: int = DEFAULT_NODE_BUDGET, check_bound: bool = False) -> MCESResult:
    """Exact MCES by depth-first branch and bound.

    With `check_bound` the incumbent pruning is switched off and every node's
    bound is compared against the subtree optimum, raising BoundViolation if
    it ever undercuts it.
    """
    a, b = _as_graph(g1), _as_graph(g2)
    swapped = len(a.edges) > len(b.edges)
    if swapped:
        a, b = b, a
    search = _Search(a, b, node_budget, check_bound)
    root_bound = search.bound(0)
    optimal = True
    try:
        search.run(0, 0)
    except _BudgetExhausted:
        optimal = False
    mapping = search.best_map
    if swapped:
        mapping = [(y, x) for x, y in mapping]
        a, b = b, a
    ub = search.best if optimal else max(search.best, root_bound)
    return _result(a, b, search.best, mapping, optimal, min(search.nodes, node_budget), ub)


def mces_distance(smiles_a: str, smiles_b: str, node_budget: int = DEFAULT_NODE_BUDGET) -> int:
    return mces_exact(smiles_a, smiles_b, node_budget).distance


def format_batch(rows) -> str:
    """TSV lines: distance, common_edges, optimal flag, nodes expanded."""
    lines = ["distance\tcommon_edges\toptimal\tnodes_expanded"]
    for r in rows:
        if isinstance(r, Exception):
            lines.append(f"error\terror\t{type(r).__name__}\t0")
        else:
            lines.append(f"{r.distance}\t{r.common_edge_count}\t{int(r.optimal)}\t{r.nodes_expanded}")
    return "\n".join(lines) + "\n"
