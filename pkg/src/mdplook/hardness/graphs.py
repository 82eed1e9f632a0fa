"""Undirected graphs for the gadget construction, plus exhaustive independent-set search."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from mdplook.errors import BudgetExceededError, MdpFormatError

MAX_EXHAUSTIVE_VERTICES = 20


@dataclass(frozen=True)
class Graph:
    """Simple graph on vertices ``1..n``; edge ``edges[i]`` has index ``i + 1``."""

    n: int
    edges: tuple

    def __post_init__(self):
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop at vertex {u}")
            if not (1 <= u <= self.n and 1 <= v <= self.n):
                raise ValueError(f"edge ({u}, {v}) has an endpoint outside 1..{self.n}")
            key = frozenset((u, v))
            if key in seen:
                raise ValueError(f"duplicate edge ({u}, {v})")
            seen.add(key)

    @property
    def m(self) -> int:
        return len(self.edges)

    def incident(self, v: int) -> list:
        """``(edge index, other endpoint)`` for each edge touching ``v``, by index."""
        out = []
        for i, (a, b) in enumerate(self.edges, start=1):
            if a == v:
                out.append((i, b))
            elif b == v:
                out.append((i, a))
        return out

    def degree(self, v: int) -> int:
        return len(self.incident(v))

    def adjacent(self, u: int, v: int) -> bool:
        return any({a, b} == {u, v} for a, b in self.edges)

    def is_independent(self, vertices) -> bool:
        vs = set(vertices)
        return not any(a in vs and b in vs for a, b in self.edges)


@dataclass(frozen=True)
class RegularityReport:
    regular: bool
    degree: int
    offending_vertex: int | None = None

    def __bool__(self):
        return self.regular


def check_regular(graph: Graph, d: int = 3) -> RegularityReport:
    for v in range(1, graph.n + 1):
        if graph.degree(v) != d:
            return RegularityReport(False, d, v)
    return RegularityReport(True, d)


def parse_graph(text: str, source: str = "<string>") -> Graph:
    lines = [(i, ln.split()) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise MdpFormatError(f"{source}: empty graph file")
    lineno, head = lines[0]
    try:
        n, m = (int(x) for x in head)
    except ValueError:
        raise MdpFormatError(f"{source}: line {lineno}: expected 'n m'") from None
    body = lines[1:]
    if len(body) != m:
        raise MdpFormatError(f"{source}: header announces {m} edges, found {len(body)}")
    edges = []
    for lineno, parts in body:
        try:
            u, v = (int(x) for x in parts)
        except ValueError:
            raise MdpFormatError(f"{source}: line {lineno}: expected 'u v'") from None
        edges.append((u, v))
    try:
        return Graph(n, tuple(edges))
    except ValueError as exc:
        raise MdpFormatError(f"{source}: {exc}") from None


def load_graph(path) -> Graph:
    with open(path) as fh:
        return parse_graph(fh.read(), str(path))


def format_graph(graph: Graph) -> str:
    return "\n".join([f"{graph.n} {graph.m}"] + [f"{u} {v}" for u, v in graph.edges]) + "\n"


# -- fixtures ---------------------------------------------------------------


def complete_k4() -> Graph:
    return Graph(4, tuple(itertools.combinations(range(1, 5), 2)))


def complete_bipartite_k33() -> Graph:
    return Graph(6, tuple((u, v) for u in (1, 2, 3) for v in (4, 5, 6)))


def cube_q3() -> Graph:
    # vertices are 3-bit labels shifted to 1..8; edges flip one bit
    edges = [(x + 1, (x ^ (1 << b)) + 1) for x in range(8) for b in range(3) if x < x ^ (1 << b)]
    return Graph(8, tuple(edges))


def petersen() -> Graph:
    outer = [(i, i % 5 + 1) for i in range(1, 6)]
    spokes = [(i, i + 5) for i in range(1, 6)]
    inner = [(i + 5, (i + 1) % 5 + 6) for i in range(1, 6)]
    return Graph(10, tuple(outer + spokes + inner))


FIXTURES = {
    "k4": complete_k4,
    "k33": complete_bipartite_k33,
    "q3": cube_q3,
    "petersen": petersen,
}

# independence numbers of the fixtures
INDEPENDENCE_NUMBER = {"k4": 1, "k33": 3, "q3": 4, "petersen": 4}


def fixture(name: str) -> Graph:
    try:
        return FIXTURES[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown graph fixture {name!r}; choose from {sorted(FIXTURES)}") from None


# -- exhaustive search ------------------------------------------------------


def _check_size(graph: Graph, cap: int = MAX_EXHAUSTIVE_VERTICES):
    if graph.n > cap:
        raise BudgetExceededError(f"exhaustive search limited to n <= {cap}, got n = {graph.n}")


def independent_sets_of_size(graph: Graph, k: int):
    """Independent ``k``-subsets in lexicographic order."""
    _check_size(graph)
    for combo in itertools.combinations(range(1, graph.n + 1), k):
        if graph.is_independent(combo):
            yield combo


def max_independent_set_bruteforce(graph: Graph) -> tuple:
    """Lexicographically first maximum independent set and its size."""
    _check_size(graph)
    for k in range(graph.n, 0, -1):
        found = next(independent_sets_of_size(graph, k), None)
        if found is not None:
            return found, k
    return (), 0
