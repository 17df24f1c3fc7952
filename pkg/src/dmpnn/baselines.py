"""Reference power-control solvers: scalar WMMSE, peak power, random power
and an exhaustive grid oracle for small networks.

All solvers take the channel gains ``a`` (``gains[j, i]`` from transmitter
``j`` to receiver ``i``) and the physical layer, which decides who
interferes with whom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import DEFAULT_POWER, ChannelRealization, _mask
from .graphs import as_rng

GRID_MAX_N = 4
GRID_CHUNK = 1 << 16


class SolverDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class WmmseConfig:
    max_iter: int = 500
    tol: float = 1e-6

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("need at least one iteration")


@dataclass
class WmmseResult:
    powers: np.ndarray        # x_i = v_i^2
    history: np.ndarray       # sum rate at the initial point and after every iteration
    iterations: int

    @property
    def sum_rate(self) -> float:
        return float(self.history[-1])


def _coupling(a: ChannelRealization, physical) -> np.ndarray:
    """Gains restricted to physical neighbours plus the direct links."""
    adj = _mask(physical, a.n)
    return np.where(adj | np.eye(a.n, dtype=bool), a.gains, 0.0)


def _sum_rate(coupling: np.ndarray, direct: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sum rate for one or many power vectors (rows of ``x``)."""
    received = x @ coupling             # sum_j a_ji x_j including j = i
    signal = direct * x
    return np.log1p(signal / (1.0 + received - signal)).sum(axis=-1)


def wmmse(a: ChannelRealization, physical, power: float = DEFAULT_POWER,
          config: WmmseConfig = WmmseConfig()) -> WmmseResult:
    """Scalar-link WMMSE from full power (v_i = sqrt(P)).

    u_i = sqrt(a_ii) v_i / (1 + sum_{j in N_P(i) + i} a_ji v_j^2)
    w_i = 1 / (1 - u_i sqrt(a_ii) v_i)
    v_i = clip(w_i u_i sqrt(a_ii) / sum_{j: i in N_P(j) + j} w_j u_j^2 a_ij, 0, sqrt(P))

    Stops once the sum rate changes by less than ``config.tol``.
    """
    coupling = _coupling(a, physical)
    direct = a.direct
    root = np.sqrt(direct)
    v = np.full(a.n, np.sqrt(power))
    history = [float(_sum_rate(coupling, direct, v * v))]
    k = 0
    for k in range(1, config.max_iter + 1):
        u = root * v / (1.0 + coupling.T @ (v * v))
        w = 1.0 / (1.0 - u * root * v)
        v = np.clip(w * u * root / (coupling @ (w * u * u)), 0.0, np.sqrt(power))
        current = float(_sum_rate(coupling, direct, v * v))
        if not (np.all(np.isfinite(v)) and np.isfinite(current)):
            raise SolverDiverged(f"WMMSE produced non-finite values at iteration {k}; "
                                 f"gains={a.gains.tolist()!r}")
        history.append(current)
        if abs(history[-1] - history[-2]) < config.tol:
            break
    return WmmseResult(v * v, np.array(history), k)


def peak_power(n: int, power: float = DEFAULT_POWER) -> np.ndarray:
    return np.full(n, float(power))


def random_power(n: int, power: float = DEFAULT_POWER, seed=None) -> np.ndarray:
    return as_rng(seed).uniform(0.0, power, size=n)


def _grid_utility(coupling, direct, x, objective: str) -> np.ndarray:
    received = x @ coupling
    signal = direct * x
    r = np.log1p(signal / (1.0 + received - signal))
    if objective == "sum-rate":
        return r.sum(axis=1)
    if objective == "min-rate":
        return r.min(axis=1)
    raise ValueError(f"unknown objective {objective!r}")


def grid_oracle(a: ChannelRealization, physical, power: float = DEFAULT_POWER,
                objective: str = "sum-rate", points: int = 51) -> tuple[np.ndarray, float]:
    """Exhaustive search over ``{0, P/(G-1), ..., P}^N``.

    Grid points are visited in lexicographic order and only a strict
    improvement replaces the incumbent, so ties resolve to the
    lexicographically smallest power vector.
    """
    n = a.n
    if n > GRID_MAX_N:
        raise ValueError(f"grid oracle is limited to N <= {GRID_MAX_N} (cost G^N), got N={n}")
    if points < 2:
        raise ValueError("need at least 2 grid points")
    levels = np.linspace(0.0, power, points)
    coupling = _coupling(a, physical)
    direct = a.direct
    total = points ** n
    best_value, best_index = -np.inf, 0
    for lo in range(0, total, GRID_CHUNK):
        index = np.arange(lo, min(lo + GRID_CHUNK, total))
        digits = np.stack(np.unravel_index(index, (points,) * n), axis=1)
        values = _grid_utility(coupling, direct, levels[digits], objective)
        k = int(np.argmax(values))
        if values[k] > best_value:
            best_value, best_index = float(values[k]), int(index[k])
    x = levels[np.array(np.unravel_index(best_index, (points,) * n))]
    return x, best_value
