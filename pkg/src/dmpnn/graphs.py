"""Two-layer multiplex networks: a physical (interference) graph and a social
(backhaul) graph over the same nodes.

Nodes are 0-based internally; the text file format is 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

Edge = tuple[int, int]


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _canon(edges: Iterable[Edge], n: int) -> frozenset[Edge]:
    out = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise ValueError(f"self-loop at node {i}")
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i}, {j}) outside 0..{n - 1}")
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


@dataclass(frozen=True)
class MultiplexNetwork:
    n: int
    physical: frozenset[Edge]
    social: frozenset[Edge]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("network needs at least one node")
        object.__setattr__(self, "physical", _canon(self.physical, self.n))
        object.__setattr__(self, "social", _canon(self.social, self.n))

    def adjacency(self, layer: str) -> np.ndarray:
        """Symmetric boolean adjacency of layer ``"P"`` or ``"S"``."""
        edges = {"P": self.physical, "S": self.social}[layer]
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in edges:
            adj[i, j] = adj[j, i] = True
        return adj

    def neighbors(self, i: int, layer: str = "PS") -> list[int]:
        """Sorted neighbours of ``i`` in layer P, S or their union PS."""
        out = set()
        for name in layer:
            edges = {"P": self.physical, "S": self.social}[name]
            for a, b in edges:
                if a == i:
                    out.add(b)
                elif b == i:
                    out.add(a)
        return sorted(out)

    def degrees(self, layer: str) -> list[int]:
        return self.adjacency(layer).sum(axis=1).tolist()


@dataclass(frozen=True)
class Permutation:
    """Bijection on 0..n-1 given as ``forward[i] = pi(i)``."""

    forward: tuple[int, ...]

    def __post_init__(self):
        fwd = tuple(int(v) for v in self.forward)
        if sorted(fwd) != list(range(len(fwd))):
            raise ValueError(f"not a permutation of 0..{len(fwd) - 1}: {fwd}")
        object.__setattr__(self, "forward", fwd)

    @classmethod
    def from_one_based(cls, images: Iterable[int]) -> "Permutation":
        return cls(tuple(int(v) - 1 for v in images))

    @classmethod
    def random(cls, n: int, seed=None) -> "Permutation":
        return cls(tuple(as_rng(seed).permutation(n).tolist()))

    @property
    def n(self) -> int:
        return len(self.forward)

    @property
    def inverse(self) -> "Permutation":
        inv = [0] * self.n
        for i, p in enumerate(self.forward):
            inv[p] = i
        return Permutation(tuple(inv))

    def __call__(self, i: int) -> int:
        return self.forward[i]

    def apply_rows(self, values: np.ndarray) -> np.ndarray:
        """Per-node array relabelled so that ``out[pi(i)] = values[i]``."""
        out = np.empty_like(values)
        out[list(self.forward)] = values
        return out

    def apply_matrix(self, m: np.ndarray) -> np.ndarray:
        """Pairwise array relabelled so that ``out[pi(j), pi(i)] = m[j, i]``."""
        idx = list(self.inverse.forward)
        return m[np.ix_(idx, idx)]


def complete_graph(n: int) -> frozenset[Edge]:
    if n < 1:
        raise ValueError("complete_graph needs n >= 1")
    return frozenset((i, j) for i in range(n) for j in range(i + 1, n))


def sample_erdos_renyi(n: int, p: float, seed=None) -> frozenset[Edge]:
    """G(n, p); one uniform draw per pair in lexicographic pair order."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability {p} outside [0, 1]")
    if n < 1:
        raise ValueError("sample_erdos_renyi needs n >= 1")
    rng = as_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    draws = rng.random(len(pairs))
    return frozenset(e for e, u in zip(pairs, draws) if u < p)


def sample_training_topology(n_max: int, n: int, p: float, seed=None,
                             p_physical: float = 1.0) -> MultiplexNetwork:
    """Decimate a complete ``n_max``-node multiplex graph down to ``n`` nodes,
    then thin the social (and optionally physical) layer independently.

    Survivors keep their relative order when relabelled to 0..n-1.
    """
    if not 1 <= n <= n_max:
        raise ValueError(f"need 1 <= n <= n_max, got n={n}, n_max={n_max}")
    rng = as_rng(seed)
    # which original nodes survive does not change the relabelled graph, but the
    # draw is kept so the stream layout is the same for every n
    rng.choice(n_max, size=n, replace=False)
    if p_physical >= 1.0:
        phys = complete_graph(n)
    else:
        phys = sample_erdos_renyi(n, p_physical, rng)
    social = sample_erdos_renyi(n, p, rng)
    return MultiplexNetwork(n, phys, social)


def permute(net: MultiplexNetwork, perm: Permutation) -> MultiplexNetwork:
    if perm.n != net.n:
        raise ValueError(f"permutation over {perm.n} nodes applied to {net.n}-node network")
    relabel = lambda edges: [(perm(i), perm(j)) for i, j in edges]  # noqa: E731
    return MultiplexNetwork(net.n, relabel(net.physical), relabel(net.social))


# ---------------------------------------------------------------- text format
#
#   N
#   P i j        (one line per physical edge, 1-based)
#   S i j        (one line per social edge, 1-based)
#
# Blank lines and lines starting with '#' are ignored.

def format_graph(net: MultiplexNetwork) -> str:
    lines = [str(net.n)]
    lines += [f"P {i + 1} {j + 1}" for i, j in sorted(net.physical)]
    lines += [f"S {i + 1} {j + 1}" for i, j in sorted(net.social)]
    return "\n".join(lines) + "\n"


def parse_graph(text: str, source: str = "<string>") -> MultiplexNetwork:
    rows = [(k + 1, ln.strip()) for k, ln in enumerate(text.splitlines())]
    rows = [(k, ln) for k, ln in rows if ln and not ln.startswith("#")]
    if not rows:
        raise ValueError(f"{source}: empty graph file")
    lineno, head = rows[0]
    try:
        n = int(head)
    except ValueError:
        raise ValueError(f"{source}:{lineno}: expected node count, got {head!r}") from None
    phys, social = [], []
    for lineno, ln in rows[1:]:
        parts = ln.split()
        if len(parts) != 3 or parts[0] not in ("P", "S"):
            raise ValueError(f"{source}:{lineno}: expected 'P i j' or 'S i j', got {ln!r}")
        try:
            i, j = int(parts[1]) - 1, int(parts[2]) - 1
        except ValueError:
            raise ValueError(f"{source}:{lineno}: non-integer node in {ln!r}") from None
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"{source}:{lineno}: invalid edge {ln!r} for N={n}")
        (phys if parts[0] == "P" else social).append((i, j))
    return MultiplexNetwork(n, phys, social)


def read_graph(path) -> MultiplexNetwork:
    path = Path(path)
    return parse_graph(path.read_text(), source=str(path))


def write_graph(net: MultiplexNetwork, path) -> None:
    Path(path).write_text(format_graph(net))
