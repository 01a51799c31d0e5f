"""
Tests for the cli.py module.
"""

import pandas as pd
from pytest import raises

from kvevict.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

CONFIG = """\
[workload]
layers = 1
heads = 2
head_dim = 16
prompt_len = 32
gen_len = 8

[policy]
name = ["sink", "h2o"]

[budget]
preset = "20%"

[output]
dir = "{out}"
"""


def _config(tmp_path, text=CONFIG):
    path = tmp_path / "run.toml"
    path.write_text(text.format(out=(tmp_path / "out").as_posix()))
    return path


def test_compare_policies(tmp_path, capsys):
    assert main(["-q", "compare-policies", str(_config(tmp_path)), "--workers", "2"]) == EXIT_OK
    results = pd.read_csv(tmp_path / "out" / "results.csv")
    assert list(dict.fromkeys(results["policy"])) == ["sink", "h2o"]
    assert (tmp_path / "out" / "trace-h2o-seed0.csv").exists()
    assert "retained_count" in capsys.readouterr().out


def test_simulate(tmp_path):
    assert main(["simulate", str(_config(tmp_path))]) == EXIT_OK
    results = pd.read_csv(tmp_path / "out" / "results.csv")
    assert set(results["policy"]) == {"sink"}


def test_heatmap(tmp_path):
    main(["-q", "simulate", str(_config(tmp_path))])
    out = tmp_path / "grid.csv"
    trace = tmp_path / "out" / "trace-sink-seed0.csv"
    assert main(["heatmap", str(trace), "--layer", "0", "--head", "1", "--out", str(out)]) == 0
    grid = pd.read_csv(out)
    assert grid["phase"].tolist() == ["encode", "generate"]
    assert grid.shape[1] == 2 + 40


def test_heatmap_errors(tmp_path):
    missing = tmp_path / "missing.csv"
    assert main(["heatmap", str(missing), "--layer", "0", "--head", "0"]) == EXIT_RUNTIME
    main(["-q", "simulate", str(_config(tmp_path))])
    trace = tmp_path / "out" / "trace-sink-seed0.csv"
    assert main(["heatmap", str(trace), "--layer", "3", "--head", "0"]) == EXIT_RUNTIME


def test_heatmap_malformed_trace(tmp_path, caplog):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["-q", "heatmap", str(bad), "--layer", "0", "--head", "0"]) == EXIT_RUNTIME
    assert "retained_indices" in caplog.text
    bad.write_text("")
    assert main(["-q", "heatmap", str(bad), "--layer", "0", "--head", "0"]) == EXIT_RUNTIME
    bad.write_text("layer,head,phase,step,retained_indices\nx,0,encode,0,1;2\n")
    assert main(["-q", "heatmap", str(bad), "--layer", "0", "--head", "0"]) == EXIT_RUNTIME


def test_invalid_config(tmp_path):
    text = CONFIG.replace('preset = "20%"', 'preset = "55%"')
    assert main(["compare-policies", str(_config(tmp_path, text))]) == EXIT_CONFIG
    assert main(["simulate", str(tmp_path / "missing.toml")]) == EXIT_CONFIG


def test_memory_model(tmp_path):
    out = tmp_path / "memory.csv"
    args = ["memory-model", "--layers", "32", "--heads", "32", "--head-dim", "128",
            "--min-seq", "1024", "--max-seq", "4096", "--budgets", "1.0,0.2", "--out", str(out)]
    assert main(args) == EXIT_OK
    df = pd.read_csv(out)
    assert df["seq_len"].tolist() == [1024, 1024, 2048, 2048, 4096, 4096]
    assert df["kv_gib"].iloc[0] == 0.5


def test_kernel_check(capsys):
    args = ["kernel-check", "--sizes", "4,9", "--tiles", "2,0", "--precisions", "float64"]
    assert main(args) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("n_q,n_k,br,bc,precision")
    assert len(lines) == 1 + 4


def test_sparsity(tmp_path):
    out = tmp_path / "sparsity.csv"
    assert main(["sparsity", str(_config(tmp_path)), "--lengths", "16,32", "--out", str(out)]) == 0
    assert pd.read_csv(out)["prefix_len"].tolist() == [16, 32]


def test_requires_command():
    with raises(SystemExit):
        main([])
