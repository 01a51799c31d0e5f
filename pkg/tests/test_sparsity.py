"""
Tests for the sparsity.py module.
"""

import numpy as np
from pytest import approx, raises

import kvevict as ke


def test_uniform_row():
    p = ke.masked_softmax_rows(ke.ScoreMatrix(np.zeros((1, 4))))
    assert ke.sparsity(p, 0.5).aggregate == 1.0
    assert ke.sparsity(p, 0.1).aggregate == 0.0


def test_masked_entries_not_counted():
    p = ke.masked_softmax_rows(ke.ScoreMatrix(np.zeros((2, 2)), causal=True))
    report = ke.sparsity(p, 0.75)
    assert list(report.rows) == [0.0, 1.0]
    assert report.aggregate == approx(0.5)


def test_threshold_must_be_positive():
    p = ke.masked_softmax_rows(ke.ScoreMatrix([[0.0]]))
    with raises(ValueError):
        ke.sparsity(p, 0.0)


def test_sweep_grows_with_length():
    w = ke.Workload(layers=1, heads=2, head_dim=16, prompt_len=32, seed=0,
                    pivotal=[(3, 4.0)])
    df = ke.sparsity_sweep(w, [32, 128, 512])
    assert list(df.columns) == ["prefix_len", "threshold", "sparsity"]
    assert list(df["prefix_len"]) == [32, 128, 512]
    values = df["sparsity"].tolist()
    assert values == sorted(values)
    assert values[0] < values[-1]
