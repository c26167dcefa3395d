import csv
import json
import statistics
import sys
from pathlib import Path

import numpy as np
import pytest

from bssrl import bench, cli
from bssrl.errors import ConfigError, ContractViolation
from bssrl.trace import ConvergenceTrace

CHILD = Path(__file__).parent / "data" / "child_objective.py"

TINY = """\
test_function: booth
num_batches: 2
episodes: 1
restarts: 1
train_restarts: 1
"""


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def trace_of(values, evals, dimension=2):
    t = ConvergenceTrace(dimension=dimension)
    for k, (v, e) in enumerate(zip(values, evals)):
        t.append(k, e, v, 0.0, 0.0, 0.0)
    return t


# -- parsing -------------------------------------------------------------------


def test_minimal_config_gets_defaults():
    cfg = cli.parse_config("task: baseline\ntest_function: booth\n")
    assert cfg.batch_sizes == [5]
    assert cfg.num_batches == 30
    assert cfg.discount == 1.0 and cfg.alpha_explore == 1.0
    assert cfg.samples_per_action == 10 and cfg.episodes == 200
    assert cfg.initial_points == 3
    assert set(cfg.resolved()) == set(cli.DEFAULTS)


@pytest.mark.parametrize(
    "text, key, line",
    [
        ("task: baseline\ntest_function: booth\nbatch_size: 0\n", "batch_size", 3),
        ("task: baseline\ntest_function: booth\ntest_function: ackley\n", "test_function", 3),
        ("task: baseline\nbogus: 1\ntest_function: booth\n", "bogus", 2),
        ("task: baseline\ntest_function: booth\nnum_batches: 2.5\n", "num_batches", 3),
        ("task: baseline\ntest_function: booth\nrestarts: true\n", "restarts", 3),
        ("task: baseline\ntest_function: booth\ndiscount: 1.5\n", "discount", 3),
        ("task: baseline\ntest_function: booth\nliar: worst\n", "liar", 3),
        ("task: deploy\ntest_function: booth\n", "checkpoint", None),
        ("task: baseline\ntest_function: booth\ndataset: x.csv\n", "dataset", 3),
        ("task: baseline\ndataset: missing.csv\n", "dataset", 2),
        ("task: fly\ntest_function: booth\n", "task", 1),
        ("task: baseline\n", "test_function", None),
        ("task: train\nshift_low: -4\n", "shift_low", 2),
        ("task: baseline\ntest_function: booth\nbudget: 4\n", "budget", 3),
    ],
)
def test_config_errors_name_key_and_line(tmp_path, text, key, line):
    with pytest.raises(ConfigError) as info:
        cli.parse_config(text, base_dir=tmp_path)
    assert info.value.key == key
    assert info.value.line == line
    assert f"'{key}'" in str(info.value)


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError) as info:
        cli.parse_config("task: baseline\ntest_function: [booth\n")
    assert info.value.line is not None


def test_budget_sets_batch_counts():
    cfg = cli.parse_config("task: compare\ntest_function: booth\nbudget: 150\nbatch_size: [1, 5, 10]\n")
    assert [cfg.num_batches_for("bssrl", n) for n in (1, 5, 10)] == [149, 29, 14]
    assert [cfg.num_batches_for("batch_bo", n) for n in (1, 5, 10)] == [147, 29, 14]
    for n in (1, 5, 10):
        assert cfg.env_config(n).budget <= 150
        assert cfg.baseline_config(n).budget <= 150


def test_relative_paths_resolve_against_config(tmp_path):
    g = bench.GridDataset(np.zeros((3, 1)) + [[0.0], [1.0], [2.0]], [0.0, 1.0, 2.0])
    bench.write_pregen_dataset(g, tmp_path / "data.csv")
    write(tmp_path / "c.yaml", "task: baseline\ndataset: data.csv\n")
    cfg = cli.load_config(tmp_path / "c.yaml")
    assert isinstance(cfg.make_objective(), bench.DatasetObjective)


# -- summaries -----------------------------------------------------------------


def test_single_trace_summary_is_the_trace():
    t = trace_of([3.0, 2.0, 1.5], [5, 10, 15])
    s = cli.compare_summary({"a": [t]})
    assert s.checkpoints.tolist() == [5, 10, 15]
    assert s.median["a"].tolist() == [3.0, 2.0, 1.5]
    assert s.iqr["a"].tolist() == [0.0, 0.0, 0.0]


def test_threshold_above_everything_hits_first_checkpoint():
    s = cli.compare_summary({"a": [trace_of([3.0, 2.0], [5, 10])], "b": [trace_of([4.0], [3])]}, threshold=100.0)
    assert s.checkpoints.tolist() == [3, 5, 10]
    assert s.evals_to_threshold == {"a": 5, "b": 3}
    assert np.isnan(s.median["a"][0])


def test_threshold_never_reached():
    s = cli.compare_summary({"a": [trace_of([3.0, 2.0], [5, 10])]}, threshold=0.0)
    assert s.evals_to_threshold["a"] is None


def test_summary_medians_and_quartiles():
    traces = [trace_of([v, v - 1], [2, 4]) for v in (1.0, 2.0, 3.0, 10.0)]
    s = cli.compare_summary({"m": traces})
    assert s.median["m"].tolist() == [2.5, 1.5]
    assert s.q25["m"][0] == np.percentile([1, 2, 3, 10], 25)


def test_summary_rejects_mixed_dimensions():
    with pytest.raises(ContractViolation):
        cli.compare_summary({"a": [trace_of([1.0], [1], 2)], "b": [trace_of([1.0], [1], 3)]})


# -- running -------------------------------------------------------------------


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_compare_run_outputs_and_summary_consistency(tmp_path):
    cfg_path = write(tmp_path / "c.yaml", TINY + "batch_size: [1, 2]\nseeds: [0, 1]\n")
    out = tmp_path / "run"
    assert cli.main(["compare", "--config", str(cfg_path), "--out", str(out)]) == 0
    traces = sorted(p.name for p in out.glob("*_seed*.csv") if not p.name.startswith("training"))
    assert traces == [f"{m}_n{n}_seed{s}.csv" for m in ("batch_bo", "bssrl") for n in (1, 2) for s in (0, 1)]
    assert (out / "policy_n1_seed0.json").exists() and (out / "training_n2_seed0.csv").exists()
    assert not (out / "INCOMPLETE").exists()

    resolved = json.loads((out / "resolved_config.json").read_text())
    assert set(resolved) == set(cli.DEFAULTS) and resolved["task"] == "compare"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "complete"

    # recompute medians straight from the CSV files
    for n in ("1", "2"):
        entry = summary["batch_sizes"][n]
        for method, stats in entry["methods"].items():
            rows = [read_csv(out / f"{method}_n{n}_seed{s}.csv") for s in (0, 1)]
            for c, med in zip(entry["checkpoints"], stats["median"]):
                seen = [min(float(r["best_observed"]) for r in rs if int(r["evals"]) <= c) for rs in rows if int(rs[0]["evals"]) <= c]
                if seen:
                    assert abs(statistics.median(seen) - med) <= 1e-12
                else:
                    assert med is None


def test_runs_are_byte_identical(tmp_path):
    cfg_path = write(tmp_path / "c.yaml", TINY + "batch_size: 2\n")
    for name in ("a", "b"):
        assert cli.main(["compare", "--config", str(cfg_path), "--seed", "3,4", "--out", str(tmp_path / name)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "bssrl_n2_seed4.csv" in files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_then_deploy(tmp_path):
    cfg_path = write(tmp_path / "t.yaml", TINY + "batch_size: 2\n")
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "t")]) == 0
    ckpt = tmp_path / "t" / "policy_n2_seed0.json"
    assert ckpt.exists()
    dep = write(tmp_path / "d.yaml", TINY + f"batch_size: 2\ncheckpoint: {ckpt}\n")
    assert cli.main(["deploy", "--config", str(dep), "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "bssrl_n2_seed0.csv").exists()
    # a checkpoint for another batch size is an error in the config sense
    bad = write(tmp_path / "e.yaml", TINY + f"batch_size: 3\ncheckpoint: {ckpt}\n")
    assert cli.main(["deploy", "--config", str(bad), "--out", str(tmp_path / "e")]) == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    cfg_path = write(tmp_path / "c.yaml", "test_function: booth\nnum_batches: 1\nrestarts: 1\nbatch_size: 2\n")
    monkeypatch.setenv(cli.OUTPUT_ENV_VAR, str(tmp_path / "envout"))
    assert cli.main(["baseline", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "envout" / "batch_bo_n2_seed0.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    cfg_path = write(tmp_path / "c.yaml", "test_function: booth\nbatch_size: 0\n")
    assert cli.main(["baseline", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 2
    assert "batch_size" in capsys.readouterr().err
    assert cli.main(["baseline", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_failed_run_is_labelled_incomplete(tmp_path):
    command = f"{sys.executable} {CHILD} nan"
    cfg_path = write(tmp_path / "c.yaml", f"command: {command}\ncommand_dimension: 2\nnum_batches: 1\nrestarts: 1\n")
    out = tmp_path / "o"
    assert cli.main(["baseline", "--config", str(cfg_path), "--out", str(out)]) == 1
    assert (out / "INCOMPLETE").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "incomplete" and "EvaluationError" in summary["error"]


def test_subprocess_objective_run(tmp_path):
    command = f"{sys.executable} {CHILD}"
    cfg_path = write(
        tmp_path / "c.yaml",
        f"command: {command}\ncommand_dimension: 2\ncommand_bounds: [[-1, 1], [-1, 1]]\nnum_batches: 2\nrestarts: 1\nbatch_size: 2\n",
    )
    assert cli.main(["baseline", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "batch_bo_n2_seed0.csv")
    assert int(rows[-1]["evals"]) == 3 + 2 * 2
    assert float(rows[-1]["best_observed"]) >= -2.0
