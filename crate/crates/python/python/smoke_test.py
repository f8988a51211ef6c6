"""Smoke test for the pars_py extension module.

Build and install first, e.g. `maturin build --release` and
`pip install target/wheels/pars_py-*.whl`, then run this script.
"""

import math
import random
import tempfile
from pathlib import Path

import pars_py

CONFIG = """
seed = 4

[ars]
iterations = 6
num_directions = 4
top_directions = 2

[policy]
kind = "linear"

[eval]
every = 3
checkpoint_every = 3
"""


def check_param_counts():
    assert pars_py.param_count("linear", 7, 3, history_stack=9) == 210
    assert pars_py.param_count("fnn", 7, 3, [32, 32], 9) == 3427
    assert pars_py.param_count("lstm", 7, 3, [32, 32]) == 6275
    try:
        pars_py.param_count("gru", 7, 3)
    except ValueError as err:
        assert "gru" in str(err)
    else:
        raise AssertionError("unknown policy kind accepted")


def check_normalizer():
    rng = random.Random(0)
    data = [[rng.gauss(1.0, 0.1), rng.gauss(-2.0, 3.0)] for _ in range(500)]
    left, right = pars_py.Normalizer(2), pars_py.Normalizer(2)
    for x in data[:123]:
        left.update(x)
    for x in data[123:]:
        right.update(x)
    merged = left.merge(right)
    assert merged.count == len(data)
    for j in range(2):
        col = [x[j] for x in data]
        mean = sum(col) / len(col)
        std = math.sqrt(sum((v - mean) ** 2 for v in col) / len(col))
        assert math.isclose(merged.mean[j], mean, rel_tol=1e-12)
        assert math.isclose(merged.std[j], std, rel_tol=1e-12)


def check_training_round_trip():
    cfg = pars_py.RunConfig(CONFIG)
    assert cfg.obs_dim == 5 and cfg.act_dim == 2
    assert len(cfg.tasks("train")) == 9
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "run"
        ckpt = pars_py.train(cfg, str(out))
        assert ckpt.iteration == 6 and ckpt.kind == "linear"
        assert len(ckpt.weights) == cfg.param_count()
        assert (out / "curve.csv").exists() and (out / "checkpoints" / "iter_000003.json").exists()

        in_memory = pars_py.train(cfg)
        assert in_memory.weights == ckpt.weights, "training is not deterministic"

        loaded = pars_py.Checkpoint.load(str(out / "checkpoint.json"))
        assert loaded.to_json() == ckpt.to_json()

        rows = pars_py.evaluate(cfg, loaded, "train")
        assert len(rows) == 9 and all("reward" in r for r in rows)

        summary = pars_py.compare_to_baseline(cfg, loaded)
        assert summary["tasks"] == len(cfg.tasks("test"))
        assert len(summary["differences"]) == summary["tasks"]

        same = pars_py.compare_to_baseline(cfg, loaded, baseline=loaded)
        assert all(d == 0.0 for d in same["differences"])


def check_oracle():
    cfg = pars_py.RunConfig()
    reward, schedule = pars_py.oracle(cfg, 1, 0.1)
    assert -1000.0 < reward < 0.0
    assert len(schedule) == 5 and all(len(step) == 2 for step in schedule)
    big = pars_py.RunConfig("[oracle]\ndecision_steps = 40\n")
    try:
        pars_py.oracle(big, 1, 0.1)
    except ValueError as err:
        assert "exceeds" in str(err)
    else:
        raise AssertionError("oracle guard did not trigger")


if __name__ == "__main__":
    check_param_counts()
    check_normalizer()
    check_training_round_trip()
    check_oracle()
    print("pars_py smoke test passed")
