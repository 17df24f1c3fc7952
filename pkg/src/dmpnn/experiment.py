"""Experiment configuration files and the sweeps behind the command line.

Config files are flat ``key = value`` lines grouped under ``[section]``
headers; ``#`` starts a comment.  Every key must be one of the documented
keys below, so a typo fails loudly (with its line number) instead of
silently falling back to a default.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import baselines
from .channel import ChannelRealization, sample_channels, utility
from .dmp import DmpConfig, GraphBatch, node_rates, permute_batch_inputs, run_inference
from .graphs import MultiplexNetwork, Permutation, complete_graph, sample_erdos_renyi
from .neural import ModelDims, ParameterSet, dims_of
from .seeding import stream
from .trainer import TrainConfig, evaluate_trajectory, frozen

log = logging.getLogger(__name__)

PRESET_SUFFIX = ".cfg"
METHODS = ("wmmse", "peak", "random", "grid")


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _str_list(text: str) -> list[str]:
    return [v for v in text.replace(",", " ").split()]


def _optional(parse: Callable) -> Callable:
    return lambda text: None if text.strip().lower() in ("", "none") else parse(text)


# section -> key -> parser
SCHEMA: dict[str, dict[str, Callable[[str], object]]] = {
    "experiment": {"name": str, "seed": int, "out": str},
    "model": {"state": int, "message": int, "combined": int, "hidden": int, "layers": int,
              "power": float},
    "train": {"objective": str, "n_min": int, "n_max": int, "n_pool": _optional(int),
              "p_train": float, "p_physical": float, "iterations": int, "batch_size": int,
              "epochs": int, "batches_per_epoch": int, "lr": float, "beta1": float,
              "beta2": float, "eps": float, "val_samples": int, "val_p": _optional(float)},
    "eval": {"n": _int_list, "p_test": _float_list, "samples": int, "iterations": _optional(int),
             "methods": _str_list, "grid_points": int, "graph": _optional(str),
             "permute": _optional(_int_list)},
}

MODEL_KEYS = {"state": "state", "message": "message", "combined": "combined",
              "hidden": "hidden", "layers": "fnn_layers", "power": "power"}


@dataclass
class EvalConfig:
    n: list[int] = field(default_factory=lambda: [3, 4, 5])
    p_test: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0])
    samples: int = 1000
    iterations: int | None = None   # defaults to the training T
    methods: list[str] = field(default_factory=lambda: ["wmmse", "peak", "random"])
    grid_points: int = 51
    graph: str | None = None
    permute: list[int] | None = None

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("sample count must be >= 1")
        if not self.n or min(self.n) < 1:
            raise ValueError("N list must hold positive sizes")
        if any(not 0.0 <= p <= 1.0 for p in self.p_test):
            raise ValueError("p_test values must lie in [0, 1]")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown baseline methods {sorted(unknown)}; expected {METHODS}")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    out: str = "runs"
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    source: str = "<defaults>"

    @property
    def objective(self) -> str:
        return self.train.objective

    @property
    def dims(self) -> ModelDims:
        return self.train.dims

    @property
    def eval_iterations(self) -> int:
        return self.eval.iterations or self.train.iterations

    def canonical(self) -> str:
        """Every effective setting, one ``section.key=value`` per line."""
        lines = [f"experiment.name={self.name}", f"experiment.seed={self.seed}"]
        for key, attr in MODEL_KEYS.items():
            lines.append(f"model.{key}={getattr(self.dims, attr)!r}")
        for f in fields(TrainConfig):
            if f.name not in ("dims", "seed"):
                lines.append(f"train.{f.name}={getattr(self.train, f.name)!r}")
        for f in fields(EvalConfig):
            lines.append(f"eval.{f.name}={getattr(self.eval, f.name)!r}")
        return "\n".join(lines)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def with_overrides(self, seed: int | None = None, samples: int | None = None,
                       out: str | None = None) -> "ExperimentConfig":
        cfg = replace(self)
        if seed is not None:
            cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed))
        if samples is not None:
            cfg = replace(cfg, eval=replace(cfg.eval, samples=samples))
        if out is not None:
            cfg = replace(cfg, out=out)
        return cfg


# ---------------------------------------------------------------- parsing

def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    values: dict[str, dict[str, object]] = {s: {} for s in SCHEMA}
    lines_of: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]; "
                                  f"expected one of {sorted(SCHEMA)}")
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"{where}: key outside of any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"{where}: unknown key {key!r} in [{section}]; "
                              f"documented keys: {', '.join(sorted(SCHEMA[section]))}")
        if key in values[section]:
            raise ConfigError(f"{where}: duplicate key {key!r} in [{section}] "
                              f"(first set on line {lines_of[section, key]})")
        try:
            values[section][key] = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {section}.{key}: {exc}") from None
        lines_of[section, key] = lineno

    try:
        return _build(values, source)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def _build(values: dict[str, dict[str, object]], source: str) -> ExperimentConfig:
    exp = values["experiment"]
    seed = int(exp.get("seed", 0))
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    dims = ModelDims(**{MODEL_KEYS[k]: v for k, v in values["model"].items()})
    train = TrainConfig(**values["train"], seed=seed, dims=dims)
    evaluation = EvalConfig(**values["eval"])
    return ExperimentConfig(name=str(exp.get("name", Path(source).stem)), seed=seed,
                            out=str(exp.get("out", "runs")), train=train, eval=evaluation,
                            source=source)


def preset_names() -> list[str]:
    folder = resources.files("dmpnn") / "presets"
    return sorted(p.name[:-len(PRESET_SUFFIX)] for p in folder.iterdir()
                  if p.name.endswith(PRESET_SUFFIX))


def load_config(path_or_preset) -> ExperimentConfig:
    """Read a config file; a bare preset name such as ``p1-desk`` selects a
    shipped preset."""
    path = Path(path_or_preset)
    if path.is_file():
        return parse_config_text(path.read_text(), str(path))
    name = str(path_or_preset)
    if name in preset_names():
        text = (resources.files("dmpnn") / "presets" / f"{name}{PRESET_SUFFIX}").read_text()
        return parse_config_text(text, f"preset:{name}")
    raise ConfigError(f"{path}: no such config file or preset (presets: {', '.join(preset_names())})")


# ---------------------------------------------------------------- samples

def eval_network(seed: int, n: int, p_test: float, index: int,
                 p_physical: float = 1.0) -> MultiplexNetwork:
    """Test topology ``index`` of size ``n``.

    The social draw comes from the ``graphs`` substream keyed by ``(n, index)``
    only, so graphs for a smaller ``p_test`` are subgraphs of those for a
    larger one.
    """
    social = sample_erdos_renyi(n, p_test, stream(seed, "graphs", n, index))
    if p_physical >= 1.0:
        physical = complete_graph(n)
    else:
        physical = sample_erdos_renyi(n, p_physical, stream(seed, "physical", n, index))
    return MultiplexNetwork(n, physical, social)


def eval_channel(seed: int, n: int, index: int) -> ChannelRealization:
    return sample_channels(n, stream(seed, "channels", n, index))


def eval_samples(seed: int, n: int, p_test: float, count: int, p_physical: float = 1.0):
    return [(eval_network(seed, n, p_test, k, p_physical), eval_channel(seed, n, k))
            for k in range(count)]


# ---------------------------------------------------------------- sweeps

@dataclass
class CellResult:
    n: int
    p_test: float | None
    method: str
    mean: float
    stderr: float
    samples: int

    def row(self) -> list:
        p = "" if self.p_test is None else repr(self.p_test)
        return [self.n, p, self.method, repr(self.mean), repr(self.stderr), self.samples]


def summarize(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    err = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return float(values.mean()), err


def check_dims(params: ParameterSet, config: ExperimentConfig) -> None:
    got, want = dims_of(params), config.dims
    if got != want:
        raise ValueError(f"checkpoint dimensions {got} do not match config {want}")


def dmpnn_cell(params: ParameterSet, config: ExperimentConfig, n: int, p_test: float,
               samples: int | None = None) -> np.ndarray:
    """Per-sample utility at the final iterate for one ``(N, p_test)`` cell."""
    count = samples or config.eval.samples
    data = eval_samples(config.seed, n, p_test, count, config.train.p_physical)
    states = stream(config.seed, "states", n, round(p_test * 1_000_000))
    traj = evaluate_trajectory(params, data, config.eval_iterations, config.objective, states)
    return traj[-1]


def _cells(fn: Callable, cells: list[tuple], workers: int) -> list:
    """``fn(*cell)`` for every cell, in cell order whatever the completion order."""
    if workers <= 1 or len(cells) <= 1:
        return [fn(*cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*cells)))


def _dmpnn_summary(params, config, n, p) -> CellResult:
    mean, err = summarize(dmpnn_cell(params, config, n, p))
    return CellResult(n, p, "dmpnn", mean, err, config.eval.samples)


def sweep_dmpnn(params: ParameterSet, config: ExperimentConfig, workers: int = 1) -> list[CellResult]:
    check_dims(params, config)
    cells = [(params, config, n, p) for n in config.eval.n for p in config.eval.p_test]
    return _cells(_dmpnn_summary, cells, workers)


def baseline_values(method: str, config: ExperimentConfig, n: int,
                    samples: int | None = None) -> np.ndarray:
    """Per-sample utility of a reference method on the shared eval samples."""
    count = samples or config.eval.samples
    power, objective = config.dims.power, config.objective
    values = np.empty(count)
    for k in range(count):
        # social layer is irrelevant to the baselines; physical layer is shared
        net = eval_network(config.seed, n, 0.0, k, config.train.p_physical)
        ch = eval_channel(config.seed, n, k)
        if method == "wmmse":
            x = baselines.wmmse(ch, net, power).powers
        elif method == "peak":
            x = baselines.peak_power(n, power)
        elif method == "random":
            x = baselines.random_power(n, power, stream(config.seed, "random-power", n, k))
        elif method == "grid":
            x, _ = baselines.grid_oracle(ch, net, power, objective, config.eval.grid_points)
        else:
            raise ValueError(f"unknown method {method!r}")
        values[k] = utility(objective, ch, x, net)
    return values


def _baseline_summary(method, config, n) -> CellResult:
    mean, err = summarize(baseline_values(method, config, n))
    return CellResult(n, None, method, mean, err, config.eval.samples)


def sweep_baselines(config: ExperimentConfig, workers: int = 1) -> list[CellResult]:
    cells = []
    for n in config.eval.n:
        for method in config.eval.methods:
            if method == "grid" and n > baselines.GRID_MAX_N:
                log.warning("skipping grid oracle at N=%d (limit %d)", n, baselines.GRID_MAX_N)
                continue
            cells.append((method, config, n))
    return _cells(_baseline_summary, cells, workers)


# ---------------------------------------------------------------- trajectories

@dataclass
class TrajectoryResult:
    powers: np.ndarray      # (T, samples, N)
    rates: np.ndarray       # (T, samples, N)
    utility: np.ndarray     # (T, samples)

    def curve(self) -> np.ndarray:
        return self.utility.mean(axis=1)


def run_trajectory(params: ParameterSet, config: ExperimentConfig, network: MultiplexNetwork,
                   perm: Permutation | None = None, samples: int | None = None) -> TrajectoryResult:
    """Fixed-graph convergence study.

    Channel draws and initial states are generated for the graph as given; a
    permutation then relabels graph, gains and states together, so the
    permuted run sees exactly the relabelled inputs.
    """
    check_dims(params, config)
    count = samples or config.eval.samples
    n, width = network.n, config.dims.state
    data, states = [], []
    for k in range(count):
        ch = sample_channels(n, stream(config.seed, "trajectory-channels", n, k))
        s0 = stream(config.seed, "trajectory-states", n, k).standard_normal((n, width))
        net = network
        if perm is not None:
            net, ch, s0 = permute_batch_inputs(net, ch, s0, perm)
        data.append((net, ch))
        states.append(s0)
    batch = GraphBatch(data)
    traj = run_inference(batch, frozen(params), DmpConfig(config.eval_iterations, "provided"),
                         init_states=np.concatenate(states))
    powers = np.stack([x.data[:, 0].reshape(count, n) for x in traj.decisions])
    rates = np.stack([node_rates(x, batch).data[:, 0].reshape(count, n)
                      for x in traj.decisions])
    if config.objective == "sum-rate":
        util = rates.sum(axis=2)
    else:
        util = rates.min(axis=2)
    return TrajectoryResult(powers, rates, util)


# ---------------------------------------------------------------- CSV output

def csv_comment(config: ExperimentConfig) -> str:
    return f"# experiment={config.name} config_hash={config.hash()} seed={config.seed}"


def csv_header(config: ExperimentConfig, columns: Sequence[str]) -> str:
    return csv_comment(config) + "\n" + ",".join(columns) + "\n"


def write_csv(path, config: ExperimentConfig, columns: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(csv_header(config, columns))
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    return path


SWEEP_COLUMNS = ("N", "p_test", "method", "mean_utility", "stderr", "samples")
TRAJECTORY_COLUMNS = ("t", "node", "x", "r_i")
CURVE_COLUMNS = ("t", "mean_utility", "stderr", "samples")


def trajectory_rows(result: TrajectoryResult):
    T, _, n = result.powers.shape
    for t in range(T):
        for i in range(n):
            yield [t + 1, i + 1, repr(float(result.powers[t, :, i].mean())),
                   repr(float(result.rates[t, :, i].mean()))]


def curve_rows(result: TrajectoryResult):
    for t, values in enumerate(result.utility, start=1):
        mean, err = summarize(values)
        yield [t, repr(mean), repr(err), values.size]

