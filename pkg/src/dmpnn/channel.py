"""Interference-channel observations, per-link rates and network utilities.

``gains[j, i]`` is the power gain from transmitter ``j`` to receiver ``i``;
the diagonal holds the direct gains.  Noise power is 1 and rates are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import MultiplexNetwork, Permutation, as_rng

DEFAULT_POWER = 10.0


@dataclass(frozen=True)
class ChannelRealization:
    gains: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"gains must be square, got {g.shape}")
        if not (np.all(np.isfinite(g)) and np.all(g > 0)):
            raise ValueError("gains must be positive and finite")
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)

    @property
    def n(self) -> int:
        return self.gains.shape[0]

    @property
    def direct(self) -> np.ndarray:
        return np.diag(self.gains).copy()

    def permuted(self, perm: Permutation) -> "ChannelRealization":
        return ChannelRealization(perm.apply_matrix(self.gains))


def sample_channels(n: int, seed=None) -> ChannelRealization:
    """Unit-mean exponential gains.

    Draw order: the ``n`` direct gains by ascending ``i``, then the cross gains
    ``a_ji`` in lexicographic ``(j, i)`` order.
    """
    if n < 1:
        raise ValueError("need at least one link")
    rng = as_rng(seed)
    direct = rng.exponential(1.0, size=n)
    cross = rng.exponential(1.0, size=n * (n - 1))
    g = np.empty((n, n))
    g[np.diag_indices(n)] = direct
    off = ~np.eye(n, dtype=bool)
    g[off] = cross  # row-major boolean fill is (j, i) lexicographic
    return ChannelRealization(g)


def _mask(physical, n: int) -> np.ndarray:
    if isinstance(physical, MultiplexNetwork):
        return physical.adjacency("P")
    if isinstance(physical, np.ndarray) and physical.dtype == bool:
        return physical
    adj = np.zeros((n, n), dtype=bool)
    for i, j in physical:
        adj[i, j] = adj[j, i] = True
    return adj


def interference(a: ChannelRealization, x, physical) -> np.ndarray:
    """Received interference at every receiver, from physical neighbours only."""
    x = np.asarray(x, dtype=np.float64)
    masked = np.where(_mask(physical, a.n), a.gains, 0.0)
    return masked.T @ x


def rates(a: ChannelRealization, x, physical) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(a.direct * x / (1.0 + interference(a, x, physical)))


def rate(i: int, a: ChannelRealization, x, physical) -> float:
    """Achievable rate of link ``i``; ``physical`` is an edge set, adjacency
    mask or a network whose physical layer is used."""
    x = np.asarray(x, dtype=np.float64)
    adj = _mask(physical, a.n)
    interf = 0.0
    for j in range(a.n):
        if adj[j, i]:
            interf += a.gains[j, i] * x[j]
    return float(np.log1p(a.gains[i, i] * x[i] / (1.0 + interf)))


def sum_rate(a: ChannelRealization, x, physical) -> float:
    return float(np.sum(rates(a, x, physical)))


def min_rate(a: ChannelRealization, x, physical) -> float:
    return float(np.min(rates(a, x, physical)))


def argmin_rate(a: ChannelRealization, x, physical) -> int:
    """Index of the worst link (lowest index on ties)."""
    return int(np.argmin(rates(a, x, physical)))


UTILITIES = {"sum-rate": sum_rate, "min-rate": min_rate}


def utility(tag: str, a: ChannelRealization, x, physical) -> float:
    try:
        return UTILITIES[tag](a, x, physical)
    except KeyError:
        raise ValueError(f"unknown objective {tag!r}; expected one of {sorted(UTILITIES)}") from None
