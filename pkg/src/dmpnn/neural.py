"""Operator realisations: fully-connected nets, a GRU cell, Adam ascent and the
parameter checkpoint format.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import as_rng

ACTIVATIONS = ("relu", "linear", "scaled-sigmoid")
MAGIC = "DMPNN1"


@dataclass
class Dense:
    weight: Tensor  # out x in
    bias: Tensor
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class FeedForwardNet:
    layers: list[Dense]
    out_scale: float = 1.0  # P for the scaled-sigmoid output

    def __post_init__(self):
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer {k} outputs {a.out_dim} but layer {k + 1} expects {b.in_dim}")
        for k, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.activation == "scaled-sigmoid" and k != len(self.layers) - 1:
                raise ValueError("scaled-sigmoid is only allowed on the output layer")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


@dataclass
class GruCell:
    w_z: Tensor  # S x (S + input)
    b_z: Tensor
    w_r: Tensor
    b_r: Tensor
    w_h: Tensor
    b_h: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.w_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_z.shape[1] - self.hidden_dim


@dataclass
class ParameterSet:
    message: FeedForwardNet
    combine: FeedForwardNet
    update: GruCell
    decide: FeedForwardNet

    def tensors(self) -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for tag, net in (("M", self.message), ("C", self.combine)):
            for k, layer in enumerate(net.layers):
                out[f"{tag}.{k}.W"] = layer.weight
                out[f"{tag}.{k}.b"] = layer.bias
        for nm in ("w_z", "b_z", "w_r", "b_r", "w_h", "b_h"):
            out[f"S.{nm}"] = getattr(self.update, nm)
        for k, layer in enumerate(self.decide.layers):
            out[f"D.{k}.W"] = layer.weight
            out[f"D.{k}.b"] = layer.bias
        return out

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data.copy()) for k, t in self.tensors().items())

    def zero_grad(self) -> None:
        for t in self.tensors().values():
            t.grad = None

    def grads(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.grad if t.grad is not None else np.zeros(t.shape))
                           for k, t in self.tensors().items())

    def count(self) -> int:
        return int(sum(t.data.size for t in self.tensors().values()))

    @property
    def power(self) -> float:
        return self.decide.out_scale


@dataclass(frozen=True)
class ModelDims:
    """Operator widths.  ``fnn_layers`` counts affine layers (hidden + output)."""

    state: int = 50        # S
    message: int = 10      # M
    combined: int = 50     # C
    decision: int = 1      # X
    local_obs: int = 1     # K1
    pair_obs: int = 1      # K2
    hidden: int = 100
    fnn_layers: int = 3
    power: float = 10.0    # P

    def __post_init__(self):
        for k in ("state", "message", "combined", "decision", "local_obs", "pair_obs",
                  "hidden", "fnn_layers"):
            if getattr(self, k) < 1:
                raise ValueError(f"dimension {k} must be positive")
        if self.power <= 0:
            raise ValueError("power must be positive")


def _glorot(rng, fan_out: int, fan_in: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


def _param(arr, name) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


def make_fnn(sizes: list[int], rng, out_activation: str = "linear",
             out_scale: float = 1.0) -> FeedForwardNet:
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive: {sizes}")
    layers = []
    for k, (i, o) in enumerate(zip(sizes, sizes[1:])):
        act = out_activation if k == len(sizes) - 2 else "relu"
        layers.append(Dense(_param(_glorot(rng, o, i), None), _param(np.zeros(o), None), act))
    return FeedForwardNet(layers, out_scale=out_scale)


def make_gru(input_dim: int, hidden_dim: int, rng) -> GruCell:
    if input_dim < 1 or hidden_dim < 1:
        raise ValueError("GRU dimensions must be positive")
    fan_in = hidden_dim + input_dim
    mats = {}
    for g in ("z", "r", "h"):
        mats[f"w_{g}"] = _param(_glorot(rng, hidden_dim, fan_in), None)
        mats[f"b_{g}"] = _param(np.zeros(hidden_dim), None)
    return GruCell(**mats)


def init_params(dims: ModelDims, seed=None) -> ParameterSet:
    """Glorot-uniform weights, zero biases; M, C, S, D drawn in that order."""
    rng = as_rng(seed)
    hid = [dims.hidden] * (dims.fnn_layers - 1)
    message = make_fnn([dims.state + dims.pair_obs, *hid, dims.message], rng)
    combine = make_fnn([dims.message + dims.pair_obs, *hid, dims.combined], rng)
    update = make_gru(dims.combined + dims.local_obs, dims.state, rng)
    decide = make_fnn([dims.state, *hid, dims.decision], rng, "scaled-sigmoid", dims.power)
    params = ParameterSet(message, combine, update, decide)
    for name, t in params.tensors().items():
        t.name = name
    return params


def dims_of(params: ParameterSet) -> ModelDims:
    m = params.message
    return ModelDims(
        state=params.update.hidden_dim,
        message=m.out_dim,
        combined=params.combine.out_dim,
        decision=params.decide.out_dim,
        local_obs=params.update.input_dim - params.combine.out_dim,
        pair_obs=m.in_dim - params.update.hidden_dim,
        hidden=m.layers[0].out_dim if len(m.layers) > 1 else m.out_dim,
        fnn_layers=len(m.layers),
        power=params.decide.out_scale,
    )


# ---------------------------------------------------------------- forward

def fnn_forward(net: FeedForwardNet, z) -> Tensor:
    z = ad.as_tensor(z)
    if z.shape[-1] != net.in_dim:
        raise ad.ShapeError("fnn_forward", f"input width {z.shape[-1]} != net in-dim {net.in_dim}")
    for layer in net.layers:
        z = ad.linear(z, layer.weight, layer.bias)
        if layer.activation == "relu":
            z = ad.relu(z)
        elif layer.activation == "scaled-sigmoid":
            z = ad.scale(ad.sigmoid(z), net.out_scale)
    return z


def gru_step(cell: GruCell, hidden, inp) -> Tensor:
    """One GRU step.

    z = sig(Wz [h; x] + bz), r = sig(Wr [h; x] + br),
    h~ = tanh(Wh [r*h; x] + bh), h' = h + z * (h~ - h).
    """
    hidden, inp = ad.as_tensor(hidden), ad.as_tensor(inp)
    if hidden.shape[-1] != cell.hidden_dim or inp.shape[-1] != cell.input_dim:
        raise ad.ShapeError(
            "gru_step",
            f"hidden {hidden.shape} / input {inp.shape} vs cell ({cell.hidden_dim}, {cell.input_dim})")
    if hidden.shape[:-1] != inp.shape[:-1]:
        raise ad.ShapeError("gru_step", f"batch shapes differ: {hidden.shape} vs {inp.shape}")
    hx = ad.concat([hidden, inp])
    z = ad.sigmoid(ad.linear(hx, cell.w_z, cell.b_z))
    r = ad.sigmoid(ad.linear(hx, cell.w_r, cell.b_r))
    cand = ad.tanh(ad.linear(ad.concat([ad.mul(r, hidden), inp]), cell.w_h, cell.b_h))
    return ad.add(hidden, ad.mul(z, ad.sub(cand, hidden)))


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(state: AdamState, params: ParameterSet, grads) -> None:
    """One bias-corrected Adam step in the ascent direction, in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.tensors().items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data + state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------- checkpoints
#
# Plain text, one record per line:
#   DMPNN1
#   meta <key> <value>            (repeated)
#   tensor <name> <ndim> <d1> ... <dk>
#   <row-major values, space separated, repr precision>
#
# Meta keys: power, fnn_layers, hidden, and the activation tags are implied
# (ReLU hidden, linear outputs for M/C, scaled-sigmoid for D).

def save_checkpoint(params: ParameterSet, path, meta: dict | None = None) -> None:
    lines = [MAGIC, f"meta power {params.power!r}"]
    for k, v in (meta or {}).items():
        lines.append(f"meta {k} {v}")
    for name, t in params.tensors().items():
        shape = " ".join(str(d) for d in t.shape)
        lines.append(f"tensor {name} {t.data.ndim} {shape}")
        lines.append(" ".join(repr(float(v)) for v in t.data.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MAGIC:
        raise ValueError(f"{path}: not a {MAGIC} checkpoint")
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    k = 1
    while k < len(text):
        parts = text[k].split()
        if not parts:
            k += 1
            continue
        if parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
            k += 1
        elif parts[0] == "tensor":
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(d) for d in parts[3:3 + ndim])
            vals = np.array([float(v) for v in text[k + 1].split()], dtype=np.float64)
            if vals.size != int(np.prod(shape)):
                raise ValueError(f"{path}:{k + 2}: tensor {name} has {vals.size} values, shape {shape}")
            tensors[name] = vals.reshape(shape)
            k += 2
        else:
            raise ValueError(f"{path}:{k + 1}: unexpected record {parts[0]!r}")
    return tensors, meta


def load_checkpoint(path) -> ParameterSet:
    tensors, meta = read_checkpoint(path)
    power = float(meta.get("power", 10.0))

    def net(tag, out_act, scale=1.0):
        layers = []
        k = 0
        while f"{tag}.{k}.W" in tensors:
            layers.append(Dense(_param(tensors[f"{tag}.{k}.W"], f"{tag}.{k}.W"),
                                _param(tensors[f"{tag}.{k}.b"], f"{tag}.{k}.b"), "relu"))
            k += 1
        if not layers:
            raise ValueError(f"{path}: no layers for operator {tag}")
        layers[-1].activation = out_act
        return FeedForwardNet(layers, out_scale=scale)

    gru = GruCell(**{nm: _param(tensors[f"S.{nm}"], f"S.{nm}")
                     for nm in ("w_z", "b_z", "w_r", "b_r", "w_h", "b_h")})
    return ParameterSet(net("M", "linear"), net("C", "linear"), gru,
                        net("D", "scaled-sigmoid", power))


def set_arrays(params: ParameterSet, arrays) -> None:
    for name, t in params.tensors().items():
        t.data = np.array(arrays[name], dtype=np.float64)


def rebind(params: ParameterSet, tensors) -> ParameterSet:
    """Same architecture with its leaves replaced by ``tensors[name]``."""

    def net(tag, src: FeedForwardNet):
        layers = [Dense(tensors[f"{tag}.{k}.W"], tensors[f"{tag}.{k}.b"], layer.activation)
                  for k, layer in enumerate(src.layers)]
        return FeedForwardNet(layers, out_scale=src.out_scale)

    gru = GruCell(**{nm: tensors[f"S.{nm}"] for nm in ("w_z", "b_z", "w_r", "b_r", "w_h", "b_h")})
    return ParameterSet(net("M", params.message), net("C", params.combine), gru,
                        net("D", params.decide))
