"""Distributed message-passing inference.

Each iteration runs generation -> combination -> aggregation -> update ->
decision for every node.  Any number of networks is evaluated together as
one disjoint union (:class:`GraphBatch`); a single network is a batch of one.
Within one iteration all messages are produced before any is combined.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Segments, Tensor
from .channel import ChannelRealization
from .graphs import MultiplexNetwork, Permutation, as_rng, permute
from .neural import ModelDims, ParameterSet, dims_of, fnn_forward, gru_step

INIT_MODES = ("gaussian", "zeros", "provided")


@dataclass(frozen=True)
class DmpConfig:
    iterations: int = 10  # T
    init: str = "gaussian"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.init not in INIT_MODES:
            raise ValueError(f"init mode {self.init!r} not in {INIT_MODES}")


def mask_observation(i: int, j: int, a: ChannelRealization, net: MultiplexNetwork) -> np.ndarray:
    """What node ``i`` knows about transmitter ``j``: ``a_ji`` if they are
    physical neighbours, otherwise a zero vector."""
    if i == j:
        raise ValueError("masked observation is defined for distinct nodes only")
    if j in net.neighbors(i, "P"):
        return np.array([a.gains[j, i]])
    return np.zeros(1)


class Incidence:
    """Directed (src -> dst) rows reduced into ``n`` destinations.

    Rows are reduced in ascending ``(dst, src)`` order whatever order they
    were supplied in, so the aggregate is bit-identical across presentations.
    """

    def __init__(self, src, dst, n: int):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.n = int(n)
        order = np.lexsort((self.src, self.dst))
        self.order = None if np.array_equal(order, np.arange(order.size)) else order
        self.segments = Segments(self.dst[order], self.n)

    def __len__(self) -> int:
        return self.src.size


def aggregate(combined: Tensor, incidence: Incidence) -> Tensor:
    """Sum of incoming combined messages per node; zero for isolated nodes."""
    if incidence.order is not None:
        combined = ad.gather(combined, incidence.order)
    return ad.segment_sum(combined, incidence.segments)


class GraphBatch:
    """Disjoint union of ``(network, channel)`` samples with precomputed
    edge index arrays for messages, combinations and interference."""

    def __init__(self, samples: Sequence[tuple[MultiplexNetwork, ChannelRealization]]):
        if not samples:
            raise ValueError("empty batch")
        self.networks = [net for net, _ in samples]
        self.channels = [ch for _, ch in samples]
        sizes = []
        for net, ch in samples:
            if net.n != ch.n:
                raise ValueError(f"network has {net.n} nodes but channel has {ch.n}")
            sizes.append(net.n)
        self.sizes = np.array(sizes)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        self.n_nodes = int(self.sizes.sum())
        self.n_samples = len(samples)
        self.node_sample = np.repeat(np.arange(self.n_samples), self.sizes)
        self.sample_segments = Segments(self.node_sample, self.n_samples)

        direct, m_src, m_dst, m_obs = [], [], [], []
        c_src, c_dst, c_msg, c_obs = [], [], [], []
        i_src, i_dst, i_gain = [], [], []
        for net, ch, off in zip(self.networks, self.channels, self.offsets):
            g = ch.gains
            phys = net.adjacency("P")
            soc = net.adjacency("S")
            direct.append(np.diag(g))
            base = len(m_src)
            msg_index = {}
            # message i -> j for every social neighbour j of i, input a~_ji
            for i in range(net.n):
                for j in np.flatnonzero(soc[i]):
                    msg_index[(i, j)] = base + len(msg_index)
                    m_src.append(off + i)
                    m_dst.append(off + j)
                    m_obs.append(g[j, i] if phys[i, j] else 0.0)
            # combination at i of everything heard from j in N(i), ascending (i, j)
            for i in range(net.n):
                for j in np.flatnonzero(phys[i] | soc[i]):
                    c_src.append(off + j)
                    c_dst.append(off + i)
                    c_msg.append(msg_index.get((j, i), -1))
                    c_obs.append(g[j, i] if phys[i, j] else 0.0)
                for j in np.flatnonzero(phys[:, i]):
                    i_src.append(off + j)
                    i_dst.append(off + i)
                    i_gain.append(g[j, i])

        self.direct = np.concatenate(direct).reshape(-1, 1)
        self.msg_src = np.array(m_src, dtype=np.int64)
        self.msg_dst = np.array(m_dst, dtype=np.int64)
        self.msg_obs = np.array(m_obs).reshape(-1, 1)
        self.comb_msg = np.array(c_msg, dtype=np.int64)
        self.comb_obs = np.array(c_obs).reshape(-1, 1)
        self.comb = Incidence(c_src, c_dst, self.n_nodes)
        self.intf_src = np.array(i_src, dtype=np.int64)
        self.intf_gain = np.array(i_gain).reshape(-1, 1)
        self.intf = Incidence(i_src, i_dst, self.n_nodes)

    @classmethod
    def single(cls, net: MultiplexNetwork, channel: ChannelRealization) -> "GraphBatch":
        return cls([(net, channel)])

    def split(self, values: np.ndarray) -> list[np.ndarray]:
        """Per-node array cut back into one array per sample."""
        return [values[o:o + n] for o, n in zip(self.offsets, self.sizes)]


# ---------------------------------------------------------------- operators

def generate_messages(states: Tensor, batch: GraphBatch, params: ParameterSet) -> Tensor:
    """One message row per directed social edge, ``M([s_i; a~_ji])``."""
    if len(batch.msg_src) == 0:
        return Tensor(np.zeros((0, params.message.out_dim)))
    inp = ad.concat([ad.gather(states, batch.msg_src), Tensor(batch.msg_obs)])
    return fnn_forward(params.message, inp)


def combine(messages: Tensor, batch: GraphBatch, params: ParameterSet) -> Tensor:
    """One row per ``(j, i)`` with ``j`` in N(i): ``C([m~_ji; a~_ji])``, where a
    missing social link contributes a zero message."""
    if len(batch.comb) == 0:
        return Tensor(np.zeros((0, params.combine.out_dim)))
    if messages.shape[0] == 0:
        m = Tensor(np.zeros((len(batch.comb), params.message.out_dim)))
    else:
        m = ad.gather(messages, batch.comb_msg)
    return fnn_forward(params.combine, ad.concat([m, Tensor(batch.comb_obs)]))


def update_state(states: Tensor, aggregated: Tensor, direct, params: ParameterSet) -> Tensor:
    return gru_step(params.update, states, ad.concat([aggregated, ad.as_tensor(direct)]))


def decide(states: Tensor, params: ParameterSet) -> Tensor:
    return fnn_forward(params.decide, states)


def aggregate_batch(combined: Tensor, batch: GraphBatch, width: int) -> Tensor:
    if len(batch.comb) == 0:
        return Tensor(np.zeros((batch.n_nodes, width)))
    return aggregate(combined, batch.comb)


@dataclass
class Trajectory:
    decisions: list[Tensor]   # x^[t], t = 1..T, each (n_nodes, X)
    states: list[Tensor]      # s^[t], t = 0..T

    def powers(self) -> np.ndarray:
        """(T, n_nodes) array of the first decision coordinate."""
        return np.stack([x.data[:, 0] for x in self.decisions])


def initial_states(batch: GraphBatch, state_dim: int, config: DmpConfig, seed=None,
                   provided: np.ndarray | None = None) -> np.ndarray:
    if config.init == "provided":
        if provided is None:
            raise ValueError("init mode 'provided' needs initial states")
        provided = np.asarray(provided, dtype=np.float64)
        if provided.shape != (batch.n_nodes, state_dim):
            raise ValueError(f"initial states {provided.shape}, expected {(batch.n_nodes, state_dim)}")
        return provided
    if config.init == "zeros":
        return np.zeros((batch.n_nodes, state_dim))
    # node by node, ascending global index
    return as_rng(seed).standard_normal((batch.n_nodes, state_dim))


def run_inference(batch: GraphBatch, params: ParameterSet, config: DmpConfig, seed=None,
                  init_states: np.ndarray | None = None) -> Trajectory:
    dims: ModelDims = dims_of(params)
    if dims.pair_obs != 1 or dims.local_obs != 1:
        raise ValueError("scalar channel observations need K1 = K2 = 1")
    if params.message.out_dim + 1 != params.combine.in_dim:
        raise ValueError("message width does not match combination input")
    if params.decide.in_dim != dims.state:
        raise ValueError("decision input does not match state width")
    s = Tensor(initial_states(batch, dims.state, config, seed, init_states))
    direct = Tensor(batch.direct)
    states, decisions = [s], []
    for _ in range(config.iterations):
        msgs = generate_messages(s, batch, params)
        comb = combine(msgs, batch, params)
        c = aggregate_batch(comb, batch, dims.combined)
        s = update_state(s, c, direct, params)
        decisions.append(decide(s, params))
        states.append(s)
    return Trajectory(decisions, states)


# ---------------------------------------------------------------- utilities

def node_rates(x: Tensor, batch: GraphBatch) -> Tensor:
    """Per-node rate, ``ln(1 + a_ii x_i / (1 + I))`` with ``I`` the
    interference from physical neighbours."""
    if len(batch.intf) == 0:
        interf = Tensor(np.zeros((batch.n_nodes, 1)))
    else:
        contrib = ad.mul(ad.gather(x, batch.intf_src), Tensor(batch.intf_gain))
        interf = aggregate(contrib, batch.intf)
    signal = ad.mul(Tensor(batch.direct), x)
    return ad.log1p(ad.div(signal, ad.add_scalar(interf, 1.0)))


def sample_utility(x: Tensor, batch: GraphBatch, objective: str) -> Tensor:
    """Per-sample network utility, shape (n_samples, 1)."""
    r = node_rates(x, batch)
    if objective == "sum-rate":
        return ad.segment_sum(r, batch.sample_segments)
    if objective == "min-rate":
        return ad.segment_min(r, batch.sample_segments)
    raise ValueError(f"unknown objective {objective!r}")


def permute_batch_inputs(net: MultiplexNetwork, channel: ChannelRealization, states: np.ndarray,
                         perm: Permutation):
    """Relabel a single sample (graphs, gains, initial states) by ``perm``."""
    return permute(net, perm), channel.permuted(perm), perm.apply_rows(states)
