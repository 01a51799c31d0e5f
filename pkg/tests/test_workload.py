"""
Tests for the workload.py module.
"""

import numpy as np
from pytest import approx, raises

import kvevict as ke


def test_shapes():
    w = ke.Workload(layers=2, heads=3, head_dim=8, prompt_len=16, gen_len=4, seed=3)
    acts = ke.generate_workload(w)
    assert len(acts) == 6
    h = acts[1, 2]
    assert h.queries.shape == (16, 8)
    assert h.keys.shape == (16, 8)
    assert h.values.shape == (16, 8)
    assert h.gen_queries.shape == (4, 8)


def test_deterministic():
    w = ke.Workload(layers=1, heads=2, head_dim=8, prompt_len=16, seed=5)
    a = ke.generate_workload(w)[0, 1]
    b = ke.generate_workload(w)[0, 1]
    assert (a.keys == b.keys).all()
    assert (a.queries == b.queries).all()


def test_single_head_matches_full_generation():
    w = ke.Workload(layers=3, heads=3, head_dim=4, prompt_len=10, seed=9)
    acts = ke.generate_workload(w)
    alone = w.head(2, 1)
    assert (alone.values == acts[2, 1].values).all()


def test_seed_changes_values():
    w = ke.Workload(layers=1, heads=1, head_dim=4, prompt_len=10, seed=1)
    a = w.head(0, 0).keys
    b = w.with_seed(2).head(0, 0).keys
    assert not np.allclose(a, b)


def test_heads_differ():
    w = ke.Workload(layers=1, heads=2, head_dim=4, prompt_len=10)
    assert not np.allclose(w.head(0, 0).keys, w.head(0, 1).keys)


def test_pivot_channel_logit():
    w = ke.Workload(layers=1, heads=1, head_dim=16, prompt_len=20, gen_len=2,
                    pivotal=[(7, 5.0)], question_len=3)
    h = w.head(0, 0)
    d = 16
    for r in (17, 18, 19):
        assert h.queries[r, 0] * h.keys[7, 0] / np.sqrt(d) == approx(5.0)
    assert (h.queries[:17, 0] == 0).all()
    assert (h.keys[np.arange(20) != 7, 0] == 0).all()
    assert h.gen_queries[:, 0] * h.keys[7, 0] / np.sqrt(d) == approx([5.0, 5.0])


def test_hidden_pivot_only_seen_in_generation():
    w = ke.Workload(layers=1, heads=1, head_dim=8, prompt_len=10, gen_len=1,
                    pivotal=[ke.PivotalToken(4, 3.0, proxy_visible=False)])
    h = w.head(0, 0)
    assert (h.queries[:, 0] == 0).all()
    assert h.gen_queries[0, 0] != 0


def test_pivot_ranks_first_for_question_rows():
    w = ke.Workload(layers=1, heads=1, head_dim=64, prompt_len=100,
                    pivotal=[(50, 5.0)], question_len=8)
    top = 0
    for seed in range(100):
        a = w.with_seed(seed).head(0, 0).prompt_scores()
        scores = ke.score_proxy(a, ke.ProxySet(range(92, 100))).values
        top += int(np.argmax(scores) == 50)
    assert top >= 95


def test_step_rows():
    w = ke.Workload(layers=2, heads=2, head_dim=4, prompt_len=8, gen_len=2)
    acts = ke.generate_workload(w)
    rows = acts.step_rows(2)
    assert rows.step == 2
    assert rows.position == 9
    q, k, v = rows.rows[1, 0]
    assert (k == acts[1, 0].gen_keys[1]).all()
    with raises(IndexError):
        acts.step_rows(3)


def test_dict_round_trip():
    w = ke.Workload(layers=1, heads=2, head_dim=8, prompt_len=16, gen_len=3, seed=4,
                    pivotal=[(3, 2.0, False)], question_len=2)
    assert ke.Workload.from_dict(w.to_dict()) == w


def test_validation():
    with raises(ValueError):
        ke.Workload(layers=0, heads=1, head_dim=4, prompt_len=4)
    with raises(ValueError):
        ke.Workload(layers=1, heads=1, head_dim=4, prompt_len=4, pivotal=[(4, 1.0)])
    with raises(ValueError):
        ke.Workload(layers=1, heads=1, head_dim=2, prompt_len=4, pivotal=[(0, 1.0), (1, 1.0)])
    with raises(ValueError):
        ke.Workload(layers=1, heads=1, head_dim=4, prompt_len=4, question_len=5)
    with raises(IndexError):
        ke.Workload(layers=1, heads=1, head_dim=4, prompt_len=4).head(1, 0)
