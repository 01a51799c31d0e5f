"""
Tests for the tiled_reduce.py module.
"""

import tracemalloc

import numpy as np
from pytest import approx, raises

import kvevict as ke


def _qk(nq, nk, d=16, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((nq, d)), rng.standard_normal((nk, d))


def _lse(q, k, causal):
    return ke.logsumexp_rows(ke.compute_scores(q, k, causal=causal))


def test_naive_column_sums():
    q, k = np.zeros((3, 2)), np.ones((4, 2))
    reduced = ke.reduce_naive(q, k)
    assert reduced.values == approx([0.75] * 4)
    assert reduced.total() == approx(3.0)


def test_tiled_matches_naive():
    for nq, nk in [(1, 1), (7, 7), (31, 33), (64, 64), (33, 100)]:
        q, k = _qk(nq, nk)
        for causal in (True, False):
            naive = ke.reduce_naive(q, k, causal).values
            lse = _lse(q, k, causal)
            for tiles in (ke.TileSpec(1, 1), ke.TileSpec(7, 8), ke.TileSpec(32, 32),
                          ke.TileSpec(nq, nk)):
                tiled = ke.reduce_tiled(q, k, lse, causal, tiles).values
                assert tiled == approx(naive, rel=1e-12, abs=1e-12)


def test_single_entry_is_exact():
    q, k = _qk(1, 1)
    tiled = ke.reduce_tiled(q, k, _lse(q, k, False), tiles=ke.TileSpec(1, 1)).values
    assert tiled[0] - 1.0 == approx(0, abs=1e-15)


def test_float32_precision():
    q, k = _qk(128, 128)
    naive = ke.reduce_naive(q, k, True).values
    tiled = ke.reduce_tiled(q, k, _lse(q, k, True), True, ke.TileSpec(32, 32),
                            dtype=np.float32).values
    assert np.max(np.abs(tiled - naive)) / np.max(naive) < 1e-4


def test_column_order_does_not_matter():
    q, k = _qk(64, 64)
    lse = _lse(q, k, True)
    tiles = ke.TileSpec(16, 16)
    forward = ke.reduce_tiled(q, k, lse, True, tiles).values
    shuffled = ke.reduce_tiled(q, k, lse, True, tiles, column_order=[3, 1, 0, 2]).values
    assert (forward == shuffled).all()
    with raises(ke.ShapeError):
        ke.reduce_tiled(q, k, lse, True, tiles, column_order=[0, 1, 2])


def test_mass_is_preserved():
    q, k = _qk(50, 50)
    reduced = ke.reduce_tiled(q, k, _lse(q, k, True), True, ke.TileSpec(8, 8))
    assert reduced.total() == approx(50.0, rel=1e-12)


def test_causal_tiles_are_skipped():
    q, k = _qk(64, 64)
    counter = ke.OpCounter()
    ke.reduce_tiled(q, k, _lse(q, k, True), True, ke.TileSpec(16, 16), counter=counter)
    assert counter.tiles == 10
    counter.reset()
    ke.reduce_tiled(q, k, _lse(q, k, False), False, ke.TileSpec(16, 16), counter=counter)
    assert counter.tiles == 16
    assert counter.score_entries == 64 * 64


def test_tiled_logsumexp():
    for causal in (True, False):
        q, k = _qk(45, 45, seed=3)
        lse = ke.tiled_logsumexp(q, k, causal, ke.TileSpec(8, 16))
        assert lse == approx(_lse(q, k, causal), rel=1e-12)


def test_shape_errors():
    q, k = _qk(4, 4)
    with raises(ke.ShapeError):
        ke.reduce_tiled(q, k, np.zeros(3))
    with raises(ke.ShapeError):
        ke.reduce_tiled(q, k[:, :8], np.zeros(4))
    with raises(ValueError):
        ke.TileSpec(0, 4)


def test_tiled_memory_stays_below_full_matrix():
    nq = nk = 512
    q, k = _qk(nq, nk)
    lse = _lse(q, k, True)
    tracemalloc.start()
    ke.reduce_tiled(q, k, lse, True, ke.TileSpec(32, 32))
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert peak < nq * nk * 8 / 4


def test_recompute_proxy_scores():
    p = 96
    w = ke.Workload(layers=1, heads=1, head_dim=16, prompt_len=p, seed=2)
    h = w.head(0, 0)
    pos = np.arange(80, 96)
    expected = ke.score_proxy(h.prompt_scores(), ke.ProxySet(pos)).values

    counter = ke.OpCounter()
    scores = ke.recompute_proxy_scores(h.queries[pos], h.keys, pos, counter=counter)
    assert scores.values == approx(expected, rel=1e-12, abs=1e-15)
    assert counter.score_entries == len(pos) * p

    tiled = ke.recompute_proxy_scores(h.queries[pos], h.keys, pos, tiles=ke.TileSpec(8, 32))
    assert tiled.values == approx(expected, rel=1e-10, abs=1e-15)


def test_recompute_needs_positions():
    q, k = _qk(2, 8)
    with raises(ke.PolicyConfigError):
        ke.recompute_proxy_scores(q, k)
    assert len(ke.recompute_proxy_scores(q, k, causal=False)) == 8


def test_kernel_sweep():
    sizes = [1, 2, 3, 4, 5, 6, 7, 8, 31, 32, 33, 64, 128, 256]
    for nq in sizes:
        for nk in (nq, nq + 7):
            q, k = _qk(nq, nk, seed=nq + nk)
            naive = ke.reduce_naive(q, k, True).values
            lse = _lse(q, k, True)
            for t in (1, 7, 8, 32, 0):
                tiles = ke.TileSpec(nq, nk) if t == 0 else ke.TileSpec(t, t)
                tiled = ke.reduce_tiled(q, k, lse, True, tiles).values
                assert np.max(np.abs(tiled - naive)) <= 1e-10
                assert abs(tiled.sum() - nq) <= 1e-9 * nq
