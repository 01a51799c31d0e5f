"""
Tests for the cache_manager.py module.
"""

import time

import numpy as np
from pytest import approx, raises

import kvevict as ke


def _workload(**kw):
    d = dict(layers=2, heads=2, head_dim=16, prompt_len=100, gen_len=16, seed=1)
    d.update(kw)
    return ke.Workload(**d)


def test_encode_sizes():
    w = _workload()
    cache, trace = ke.encode(w, ke.make_policy("nacl"), ke.budget_preset("20%"))
    assert cache.step == 0
    assert cache.capacity == 20
    assert len(trace) == 4
    for coord in cache:
        assert len(cache[coord]) == 20
        assert {98, 99} <= set(cache[coord].retained())


def test_encode_head_order_does_not_matter():
    w = _workload()
    policy = ke.make_policy("nacl")
    b = ke.budget_preset("20%")
    first, _ = ke.encode(w, policy, b)
    order = [(1, 1), (0, 1), (1, 0), (0, 0)]
    second, _ = ke.encode(w, policy, b, head_order=order)
    assert first.retained() == second.retained()


def test_encode_accepts_activations():
    w = _workload()
    acts = ke.generate_workload(w)
    policy = ke.make_policy("h2o")
    a, _ = ke.encode(acts, policy, ke.budget_preset("10%"))
    b, _ = ke.encode(w, policy, ke.budget_preset("10%"))
    assert a.retained() == b.retained()


def test_encode_failure_names_the_head():
    policy = ke.NaclPolicy(protect_indices=range(30))
    with raises(ke.HeadEvictionError) as e:
        ke.encode(_workload(), policy, ke.budget_preset("20%"))
    assert (e.value.layer, e.value.head) == (0, 0)
    assert isinstance(e.value.cause, ke.BudgetError)


def test_generate_evicts_every_interval():
    w = _workload()
    acts = ke.generate_workload(w)
    policy = ke.make_policy("nacl")
    cache, trace = ke.encode(acts, policy, ke.budget_preset("20%", interval_m=8))
    ke.generate(cache, policy, acts, steps=7)
    assert all(len(cache[c]) == 27 for c in cache)
    ke.generate(cache, policy, acts, steps=8)
    assert all(len(cache[c]) == 20 for c in cache)
    ke.generate(cache, policy, acts)
    assert cache.step == 16
    counts = ke.count_evictions(trace)
    assert counts[0, 0, "encode"] == 1
    assert counts[1, 1, "generate"] == 2
    assert [r.step for r in trace.find(0, 1, phase="generate")] == [8, 16]


def test_generate_new_token_is_cached():
    w = _workload(gen_len=3)
    acts = ke.generate_workload(w)
    policy = ke.make_policy("msrnn")
    cache, _ = ke.encode(acts, policy, ke.budget_preset("20%"))
    ke.generate(cache, policy, acts)
    assert list(cache[0, 0].indices[-3:]) == [100, 101, 102]


def test_full_policy_never_evicts():
    w = _workload()
    acts = ke.generate_workload(w)
    policy = ke.FullPolicy()
    cache, trace = ke.encode(acts, policy, ke.budget_preset("20%"))
    ke.generate(cache, policy, acts)
    assert len(cache[1, 0]) == 116
    assert ke.count_evictions(trace)[0, 0, "generate"] == 0


def test_generate_step_out_of_order():
    w = _workload()
    acts = ke.generate_workload(w)
    policy = ke.make_policy("sink")
    cache, _ = ke.encode(acts, policy, ke.budget_preset("20%"))
    with raises(ke.SequenceError):
        ke.generate_step(cache, policy, acts.step_rows(2))


def test_stepwise_h2o_matches_greedy_baseline():
    w = _workload(layers=1, gen_len=0, prompt_len=64)
    b = ke.BudgetConfig(0.25, interval_m=1)
    cache, trace = ke.reference_stepwise_encode(w, ke.H2OPolicy(), b)
    for coord in cache:
        a = w.head(*coord).prompt_scores()
        assert cache[coord].retained() == ke.baseline_h2o(a, 8, 8)
    assert ke.count_evictions(trace)[0, 0, "encode"] == 64 - 16


def test_stepwise_msrnn_matches_greedy_baseline():
    w = _workload(layers=1, gen_len=0, prompt_len=64)
    b = ke.BudgetConfig(0.25, interval_m=1)
    cache, _ = ke.reference_stepwise_encode(w, ke.MsrnnPolicy(), b)
    for coord in cache:
        a = w.head(*coord).prompt_scores()
        assert cache[coord].retained() == ke.baseline_msrnn(a, 16)


def test_one_shot_needs_fewer_calls():
    w = _workload(layers=1, heads=1, gen_len=0, prompt_len=256)
    b = ke.budget_preset("20%")
    _, one_shot = ke.encode(w, ke.make_policy("nacl"), b)
    _, stepwise = ke.reference_stepwise_encode(w, ke.make_policy("nacl"), b)
    assert len(one_shot) == 1
    assert len(stepwise) == 256 - b.total_count(256)


def test_one_shot_calls_at_long_prompt():
    w = _workload(layers=1, heads=1, head_dim=8, gen_len=0, prompt_len=1024)
    b = ke.budget_preset("20%")
    _, one_shot = ke.encode(w, ke.make_policy("h2o"), b)
    _, stepwise = ke.reference_stepwise_encode(w, ke.make_policy("h2o"), b)
    assert ke.count_evictions(one_shot)[0, 0, "encode"] == 1
    assert ke.count_evictions(stepwise)[0, 0, "encode"] >= 1024 - b.total_count(1024)


def _evict_micros(trace):
    return sum(r.evict_micros for r in trace)


def test_one_shot_is_faster_at_long_prompt():
    w = _workload(layers=1, heads=1, head_dim=8, gen_len=0, prompt_len=1024)
    b = ke.budget_preset("20%")
    for name, ratio in (("nacl", 20), ("h2o", 2)):
        _, one_shot = ke.encode(w, ke.make_policy(name), b)
        _, stepwise = ke.reference_stepwise_encode(w, ke.make_policy(name), b)
        assert _evict_micros(stepwise) >= ratio * _evict_micros(one_shot), name


class _SlowObserveH2O(ke.H2OPolicy):
    def observe(self, cache, logits):
        time.sleep(0.002)
        super().observe(cache, logits)


def test_stepwise_time_includes_observe():
    w = _workload(layers=1, heads=1, gen_len=0, prompt_len=20)
    _, trace = ke.reference_stepwise_encode(w, _SlowObserveH2O(), ke.BudgetConfig(0.25))
    assert len(trace) == 15
    assert _evict_micros(trace) >= 20 * 2000


def test_generate_time_includes_observe():
    w = _workload(layers=1, heads=1, gen_len=4)
    acts = ke.generate_workload(w)
    policy = _SlowObserveH2O()
    cache, trace = ke.encode(acts, policy, ke.budget_preset("20%", interval_m=4))
    ke.generate(cache, policy, acts)
    record = trace.find(0, 0, phase="generate")[0]
    assert record.evict_micros >= 4 * 2000
    assert cache[0, 0].observe_micros == 0.0


def test_generate_step_matches_composed_steps():
    w = _workload(gen_len=16, seed=3)
    acts = ke.generate_workload(w)
    b = ke.budget_preset("20%", interval_m=4)
    policy = ke.NaclPolicy()
    cache, _ = ke.encode(acts, policy, b, seed=7)
    composed, _ = ke.encode(acts, policy, b, seed=7)
    for t in range(1, 17):
        rows = acts.step_rows(t)
        ke.generate_step(cache, policy, rows)
        for (layer, head), hc in composed.heads.items():
            q, k, v = rows.rows[layer, head]
            hc.append(rows.position, k, v)
            logits = hc.logits(q)
            policy.observe(hc, logits)
            if t % 4 == 0:
                rng = policy.stream(7, layer, head).at(t)
                hc.retain(policy.step_select(hc, logits, composed.counts, rng))
        for coord in cache:
            assert cache[coord].retained() == composed[coord].retained(), (t, coord)
            assert np.array_equal(cache[coord].keys, composed[coord].keys)
    assert cache.step == 16


def test_generate_step_cache_length():
    w = _workload(gen_len=16)
    acts = ke.generate_workload(w)
    policy = ke.NaclPolicy()
    cache, _ = ke.encode(acts, policy, ke.budget_preset("20%", interval_m=4))
    c = cache.capacity
    for t in range(1, 17):
        ke.generate_step(cache, policy, acts.step_rows(t))
        for coord in cache:
            assert len(cache[coord]) == c + t % 4, (t, coord)


def test_head_cache_append_and_retain():
    hc = ke.HeadCache(0, 0, 2)
    hc.append(0, [1.0, 0.0], [0.0, 1.0])
    hc.append(3, [0.0, 1.0], [1.0, 0.0])
    assert len(hc) == 2
    with raises(ke.SequenceError):
        hc.append(3, [0.0, 0.0], [0.0, 0.0])
    assert hc.logits([1.0, 0.0]) == approx([1 / np.sqrt(2), 0.0])
    hc.retain(ke.RetainedSet([3]))
    assert hc.retained().indices == (3,)
    assert hc.keys.tolist() == [[0.0, 1.0]]
    with raises(ValueError):
        hc.retain(ke.RetainedSet([0]))


def test_trace_csv(tmp_path):
    w = _workload(gen_len=8)
    acts = ke.generate_workload(w)
    policy = ke.make_policy("h2o")
    cache, trace = ke.encode(acts, policy, ke.budget_preset("20%"))
    ke.generate(cache, policy, acts)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "layer,head,phase,step,retained_indices,evict_micros,prompt_len"
    again = ke.EvictionTrace.read_csv(path)
    assert again.prompt_len == 100
    assert list(again) == sorted(trace, key=lambda r: (r.layer, r.head, r.phase, r.step))
    assert again.to_frame(timing=False).equals(trace.to_frame(timing=False))


def test_trace_find_missing():
    trace = ke.EvictionTrace()
    with raises(ke.TraceLookupError):
        trace.find(0, 0)


def test_trace_csv_without_prompt_len(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("layer,head,phase,step,retained_indices\n0,1,encode,0,3;1\n")
    trace = ke.EvictionTrace.read_csv(path)
    assert trace.prompt_len is None
    assert list(trace) == [ke.EvictionRecord(0, 1, "encode", 0, ke.RetainedSet([1, 3]))]


def test_trace_csv_missing_columns(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("a,b\n1,2\n")
    with raises(ke.TraceFormatError) as e:
        ke.EvictionTrace.read_csv(path)
    assert "layer, head, phase, step, retained_indices" in str(e.value)


def test_trace_csv_malformed(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("")
    with raises(ke.TraceFormatError):
        ke.EvictionTrace.read_csv(path)
    path.write_text("layer,head,phase,step,retained_indices\n0,0,encode,0,1;x\n")
    with raises(ke.TraceFormatError):
        ke.EvictionTrace.read_csv(path)
