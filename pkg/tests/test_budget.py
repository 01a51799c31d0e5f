"""
Tests for the budget.py module.
"""

import numpy as np
from pytest import raises

import kvevict as ke


def test_preset_20():
    c = ke.budget_preset("20%").counts(100)
    assert (c.total, c.protect, c.proxy_evict, c.random, c.score_proxy) == (20, 2, 6, 12, 18)


def test_preset_10():
    c = ke.budget_preset("10%").counts(100)
    assert (c.total, c.protect, c.proxy_evict, c.random, c.score_proxy) == (10, 1, 2, 7, 3)


def test_preset_30():
    c = ke.budget_preset(30).counts(100)
    assert (c.total, c.protect, c.proxy_evict, c.random, c.score_proxy) == (30, 1, 10, 19, 20)


def test_preset_name_forms():
    assert ke.budget_preset("20") == ke.budget_preset(0.2)
    assert ke.budget_preset("20%", interval_m=4).interval_m == 4


def test_unknown_preset():
    with raises(ke.BudgetError):
        ke.budget_preset("50%")


def test_total_count_rounds_half_up():
    assert ke.BudgetConfig(0.2).total_count(256) == 51
    assert ke.BudgetConfig(0.25).total_count(10) == 3
    assert ke.BudgetConfig(0.01).total_count(10) == 1
    assert ke.BudgetConfig(0.1).total_count(4) == 1
    assert ke.BudgetConfig(0.0).total_count(7) == 1


def test_shares_add_up():
    b = ke.budget_preset("20%")
    for p in (7, 33, 100, 256, 1000):
        c = b.counts(p)
        assert c.protect + c.proxy_evict + c.random == c.total == b.total_count(p)


def test_exact_split_without_random():
    b = ke.BudgetConfig(0.25, 0.0625, None, 0.0, 0.125)
    c = b.counts(64)
    assert (c.total, c.protect, c.proxy_evict, c.random) == (16, 4, 12, 0)
    assert c.score_proxy == 8


def test_proxy_share_default():
    b = ke.BudgetConfig(0.3, protect_proxy_frac=0.05, random_frac=0.1)
    assert abs(b.proxy_evict_frac - 0.15) < 1e-12


def test_invalid_budgets():
    with raises(ke.BudgetError):
        ke.BudgetConfig(1.5)
    with raises(ke.BudgetError):
        ke.BudgetConfig(0.2, 0.1, 0.1, 0.1)
    with raises(ke.BudgetError):
        ke.BudgetConfig(0.2, interval_m=0)
    with raises(ke.BudgetError):
        ke.BudgetConfig(0.2).counts(0)


def test_full_budget():
    c = ke.BudgetConfig(1.0).counts(10)
    assert c.total == 10
    assert c.proxy_evict == 10


def test_counts_property():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        total = float(rng.integers(1, 101)) / 100
        protect = float(rng.integers(0, 101)) / 100 * total
        random = float(rng.integers(0, 101)) / 100 * (total - protect)
        b = ke.BudgetConfig(total, protect, None, random, float(rng.integers(0, 21)) / 100)
        p = int(rng.integers(1, 2000))
        c = b.counts(p)
        assert c.protect + c.proxy_evict + c.random == c.total == b.total_count(p)
        assert min(c.protect, c.proxy_evict, c.random) >= 0
        assert 1 <= c.score_proxy <= p
