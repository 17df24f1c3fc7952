"""Finite-difference gradient suite over every differentiable composite.

Each composite is reduced to a scalar by a fixed random projection so that
no coordinate of the output is privileged.  Biases are drawn at random: with
the zero biases of a fresh model many ReLU units sit exactly on their kink,
where central differences are meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .channel import sample_channels
from .dmp import DmpConfig, GraphBatch, run_inference, sample_utility
from .graphs import MultiplexNetwork, complete_graph, sample_erdos_renyi
from .neural import ModelDims, fnn_forward, gru_step, init_params, make_fnn, make_gru, rebind

TOLERANCE = 1e-5

# The unrolled objective stacks ~60 affine maps.  At production width the
# float64 backprop itself carries absolute roundoff comparable to its smallest
# entries, so the end-to-end check runs on a narrow model of identical
# structure; the operators are also checked individually at full width.
OBJECTIVE_DIMS = dict(state=6, message=3, combined=5, hidden=8)


@dataclass
class CheckResult:
    name: str
    max_error: float
    coords: int

    @property
    def ok(self) -> bool:
        return self.max_error <= TOLERANCE


def _random_biases(arrays: dict, rng) -> dict:
    return {k: rng.normal(0.0, 0.1, v.shape) if k.endswith("b") or ".b_" in k else v
            for k, v in arrays.items()}


def _projected(out: ad.Tensor, weights: np.ndarray) -> ad.Tensor:
    return ad.sum(ad.mul(out, ad.Tensor(weights)))


def _fnn_arrays(net) -> dict:
    out = {}
    for k, layer in enumerate(net.layers):
        out[f"{k}.W"] = layer.weight.data.copy()
        out[f"{k}.b"] = layer.bias.data.copy()
    return out


def check_fnn(name: str, sizes: list[int], out_activation: str, scale: float, rows: int,
              rng, n_coords: int) -> CheckResult:
    net = make_fnn(sizes, rng, out_activation, scale)
    inputs = _random_biases(_fnn_arrays(net), rng)
    inputs["x"] = rng.standard_normal((rows, sizes[0]))
    proj = rng.standard_normal((rows, sizes[-1]))

    def fn(x, **params):
        layers = [replace(layer, weight=params[f"{k}.W"], bias=params[f"{k}.b"])
                  for k, layer in enumerate(net.layers)]
        return _projected(fnn_forward(type(net)(layers, net.out_scale), x), proj)

    err = ad.grad_check(fn, inputs, n_coords=n_coords, rng=rng)
    return CheckResult(name, err, n_coords)


def check_gru(dims: ModelDims, rows: int, rng, n_coords: int) -> CheckResult:
    cell = make_gru(dims.combined + dims.local_obs, dims.state, rng)
    names = ("w_z", "b_z", "w_r", "b_r", "w_h", "b_h")
    inputs = _random_biases({nm: getattr(cell, nm).data.copy() for nm in names}, rng)
    inputs["h"] = rng.standard_normal((rows, dims.state))
    inputs["x"] = rng.standard_normal((rows, dims.combined + dims.local_obs))
    proj = rng.standard_normal((rows, dims.state))

    def fn(h, x, **params):
        return _projected(gru_step(type(cell)(**params), h, x), proj)

    return CheckResult("gru", ad.grad_check(fn, inputs, n_coords=n_coords, rng=rng), n_coords)


def check_objective(dims: ModelDims, objective: str, rng, n_coords: int,
                    iterations: int = 5) -> CheckResult:
    """Full sqrt(t)-weighted objective unrolled over ``iterations`` steps."""
    params = init_params(dims, rng)
    inputs = _random_biases(dict(params.arrays()), rng)
    samples = []
    for _ in range(2):
        n = int(rng.integers(3, 6))
        net = MultiplexNetwork(n, complete_graph(n), sample_erdos_renyi(n, 0.5, rng))
        samples.append((net, sample_channels(n, rng)))
    batch = GraphBatch(samples)
    config = DmpConfig(iterations, "provided")
    s0 = rng.standard_normal((batch.n_nodes, dims.state))

    def fn(**tensors):
        traj = run_inference(batch, rebind(params, tensors), config, init_states=s0)
        total = None
        for t, x in enumerate(traj.decisions, start=1):
            term = ad.scale(ad.sum(sample_utility(x, batch, objective)),
                            np.sqrt(t) / batch.n_samples)
            total = term if total is None else ad.add(total, term)
        return total

    err = ad.grad_check(fn, inputs, n_coords=n_coords, rng=rng)
    return CheckResult(f"objective:{objective}:T={iterations}", err, n_coords)


def run_suite(dims: ModelDims = ModelDims(), seed: int = 0, n_coords: int = 100,
              rows: int = 6) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    hid = [dims.hidden] * (dims.fnn_layers - 1)
    results = [
        check_fnn("fnn:message", [dims.state + dims.pair_obs, *hid, dims.message],
                  "linear", 1.0, rows, rng, n_coords),
        check_fnn("fnn:combine", [dims.message + dims.pair_obs, *hid, dims.combined],
                  "linear", 1.0, rows, rng, n_coords),
        check_fnn("fnn:decide", [dims.state, *hid, dims.decision],
                  "scaled-sigmoid", dims.power, rows, rng, n_coords),
        check_gru(dims, rows, rng, n_coords),
    ]
    small = replace(dims, **OBJECTIVE_DIMS)
    for objective in ("sum-rate", "min-rate"):
        results.append(check_objective(small, objective, rng, n_coords))
    return results
