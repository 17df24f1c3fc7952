import csv

import numpy as np
import pytest

from dmpnn import autodiff as ad
from dmpnn.cli import main
from dmpnn.graphs import MultiplexNetwork, complete_graph, write_graph
from dmpnn.neural import load_checkpoint

SMOKE = """
[experiment]
name = smoke
seed = 3

[model]
state = 4
message = 3
combined = 4
hidden = 6

[train]
n_min = 3
n_max = 4
iterations = 3
batch_size = 4
epochs = 2
batches_per_epoch = 2
lr = {lr}
val_samples = 8

[eval]
n = 3
p_test = {p_test}
samples = 12
methods = peak, random
"""


def read_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# experiment=smoke config_hash=") and "seed=3" in lines[0]
    return list(csv.DictReader(lines[1:]))


@pytest.fixture
def trained(tmp_path):
    cfg = tmp_path / "smoke.cfg"
    cfg.write_text(SMOKE.format(lr="1e-3", p_test="0, 1"))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def test_train_writes_log_and_checkpoint(trained):
    _, out = trained
    rows = read_rows(out / "train_log.csv")
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert set(rows[0]) == {"epoch", "train_objective", "val_utility", "seconds"}
    load_checkpoint(out / "checkpoint.dmpnn")


def test_zero_learning_rate_leaves_initial_params(tmp_path):
    from dmpnn.experiment import load_config
    from dmpnn.neural import init_params
    from dmpnn.seeding import stream
    cfg = tmp_path / "smoke.cfg"
    cfg.write_text(SMOKE.format(lr="0", p_test="1"))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    fresh = init_params(load_config(cfg).dims, stream(3, "init"))
    trained = load_checkpoint(tmp_path / "checkpoint.dmpnn")
    for k, v in fresh.arrays().items():
        np.testing.assert_array_equal(trained.arrays()[k], v)


def test_eval_is_reproducible(trained):
    cfg, out = trained
    assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
    first = (out / "eval.csv").read_text()
    assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "eval.csv").read_text() == first
    rows = read_rows(out / "eval.csv")
    assert [(r["N"], r["p_test"], r["method"]) for r in rows] == [("3", "0.0", "dmpnn"),
                                                                  ("3", "1.0", "dmpnn")]


def test_single_cell_gives_one_row(trained, tmp_path):
    cfg, out = trained
    one = tmp_path / "one.cfg"
    one.write_text(cfg.read_text().replace("p_test = 0, 1", "p_test = 0.5"))
    assert main(["eval", "--config", str(one), "--out", str(out),
                 "--checkpoint", str(out / "checkpoint.dmpnn"), "--samples", "5"]) == 0
    rows = read_rows(out / "eval.csv")
    assert len(rows) == 1 and rows[0]["samples"] == "5"


def test_baseline_rows(trained):
    cfg, out = trained
    assert main(["baseline", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_rows(out / "baseline.csv")
    assert [r["method"] for r in rows] == ["peak", "random"]
    assert all(r["p_test"] == "" for r in rows)


def test_trajectory_pair_and_single_step(trained, tmp_path):
    cfg, out = trained
    graph = tmp_path / "g.txt"
    write_graph(MultiplexNetwork(3, complete_graph(3), {(0, 1)}), graph)
    base = ["trajectory", "--config", str(cfg), "--out", str(out), "--graph", str(graph)]
    assert main(base + ["--name", "a"]) == 0
    assert main(base + ["--name", "b", "--permute", "2,3,1"]) == 0
    a = read_rows(out / "curve_a.csv")
    b = read_rows(out / "curve_b.csv")
    assert len(a) == 3
    for ra, rb in zip(a, b):
        assert abs(float(ra["mean_utility"]) - float(rb["mean_utility"])) <= 1e-6
    traj = read_rows(out / "trajectory_a.csv")
    assert set(traj[0]) == {"t", "node", "x", "r_i"} and len(traj) == 3 * 3

    one = tmp_path / "t1.cfg"
    one.write_text(cfg.read_text().replace("methods = peak, random",
                                           "methods = peak, random\niterations = 1"))
    assert main(["trajectory", "--config", str(one), "--out", str(out), "--graph", str(graph),
                 "--checkpoint", str(out / "checkpoint.dmpnn"), "--name", "t1"]) == 0
    assert len(read_rows(out / "curve_t1.csv")) == 1


def test_missing_files_are_errors(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert "no such config" in capsys.readouterr().err
    cfg = tmp_path / "smoke.cfg"
    cfg.write_text(SMOKE.format(lr="1e-3", p_test="1"))
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "none")]) == 2


def test_unknown_key_is_reported_with_line(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[train]\nlearning_rate = 1\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert f"{cfg}:2:" in capsys.readouterr().err


def test_seed_must_be_u64():
    with pytest.raises(SystemExit):
        main(["train", "--config", "p1-desk", "--seed", "-1"])


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--coords", "10"]) == 0
    out = capsys.readouterr().out
    for name in ("fnn:message", "fnn:combine", "fnn:decide", "gru", "objective:sum-rate",
                 "objective:min-rate"):
        assert name in out
    assert "6/6" in out


def test_gradcheck_detects_corrupted_gradient(monkeypatch, capsys):
    def bad_sigmoid(a):
        s = 1.0 / (1.0 + np.exp(-a.data))
        return ad._result(s, (a,), lambda g: [g * s], "sigmoid")   # drops the (1 - s) factor

    monkeypatch.setattr(ad, "sigmoid", bad_sigmoid)
    assert main(["gradcheck", "--coords", "10"]) == 1
    assert "FAIL" in capsys.readouterr().out
