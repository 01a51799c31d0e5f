"""
Per-head KV caches with one-shot prompt eviction and periodic generation-phase
eviction.
"""

import logging
import time
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .attention import compute_scores
from .errors import (
    HeadEvictionError,
    KvevictError,
    SequenceError,
    TraceFormatError,
    TraceLookupError,
)
from .selection import RetainedSet
from .workload import Activations, generate_workload

logger = logging.getLogger(__name__)

ENCODE = "encode"
GENERATE = "generate"


class HeadCache:
    """
    Key and value cache of one attention head.

    Entries are kept sorted by their original token position.

    Parameters
    ----------
    layer : int
        Layer index.
    head : int
        Head index.
    head_dim : int
        Dimension of the key and value vectors.

    Attributes
    ----------
    indices : ndarray of int
        Original token position of every cached entry.
    keys, values : ndarray
        Cached vectors, one row per entry.
    accumulated : ndarray
        Running attention sums of the cached entries (heavy-hitter policy).
    history : deque
        Recent sets of above-average tokens (Scissorhands policy).
    protected : tuple of int
        Token positions that evictions must keep.
    observe_micros : float
        Time spent in the policy's ``observe`` since the last eviction
        record, in microseconds.
    """

    def __init__(self, layer, head, head_dim):
        self.layer = layer
        self.head = head
        self.indices = np.zeros(0, dtype=np.int64)
        self.keys = np.zeros((0, head_dim))
        self.values = np.zeros((0, head_dim))
        self.accumulated = np.zeros(0)
        self.history = deque()
        self.protected = ()
        self.observe_micros = 0.0

    def __len__(self):
        return self.indices.size

    def __repr__(self):
        return f"HeadCache(layer={self.layer}, head={self.head}, entries={len(self)})"

    @classmethod
    def from_prompt(cls, acts, retained):
        """
        Cache holding the retained prompt entries of a head.

        Parameters
        ----------
        acts : HeadActivations
            Activations of the head.
        retained : RetainedSet
            Prompt positions to keep.
        """
        cache = cls(acts.layer, acts.head, acts.keys.shape[1])
        idx = retained.as_array()
        cache.indices = idx
        cache.keys = acts.keys[idx].copy()
        cache.values = acts.values[idx].copy()
        cache.accumulated = np.zeros(idx.size)
        return cache

    def append(self, position, key, value):
        """
        Add the entry of a new token at the end of the cache.
        """
        if len(self) and position <= self.indices[-1]:
            raise SequenceError(f"Token {position} does not follow cached token {self.indices[-1]}")
        self.indices = np.append(self.indices, position)
        self.keys = np.vstack([self.keys, key])
        self.values = np.vstack([self.values, value])
        self.accumulated = np.append(self.accumulated, 0.0)

    def logits(self, query):
        """
        Scores of one query vector over the cached keys.
        """
        return compute_scores(np.atleast_2d(query), self.keys).data[0]

    def retain(self, retained):
        """
        Drop every entry whose token position is not in ``retained``.

        Raises
        ------
        ValueError
            If ``retained`` names a token that is not cached.
        """
        keep = np.isin(self.indices, retained.as_array())
        if keep.sum() != len(retained):
            raise ValueError(f"Retained set {retained.indices} is not a subset of the cache")
        self.indices = self.indices[keep]
        self.keys = self.keys[keep]
        self.values = self.values[keep]
        self.accumulated = self.accumulated[keep]

    def retained(self):
        """
        Token positions currently cached.
        """
        return RetainedSet(self.indices.tolist())


@dataclass(frozen=True)
class EvictionRecord:
    """
    One eviction call on one head.

    Attributes
    ----------
    layer, head : int
        Head coordinates.
    phase : str
        'encode' or 'generate'.
    step : int
        Generation step, or the prompt token for step-by-step encoding; 0 for
        one-shot encoding.
    retained : RetainedSet
        Tokens kept by the call.
    evict_micros : float
        Wall-clock time of the call in microseconds, including the
        ``observe`` updates since the previous record of the head.
    """

    layer: int
    head: int
    phase: str
    step: int
    retained: RetainedSet
    evict_micros: float = field(default=0.0, compare=False)


class EvictionTrace:
    """
    Append-only log of eviction calls.

    Parameters
    ----------
    records : iterable of EvictionRecord, optional
        Initial records.
    prompt_len : int, optional
        Prompt length of the traced run. When set it is written as a trailing
        ``prompt_len`` column and sets the default heatmap width.
    """

    columns = ["layer", "head", "phase", "step", "retained_indices", "evict_micros"]
    required = columns[:5]

    def __init__(self, records=None, prompt_len=None):
        self.records = list(records) if records is not None else []
        self.prompt_len = prompt_len

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def add(self, record):
        """
        Append a record.
        """
        self.records.append(record)

    def find(self, layer, head, phase=None, step=None):
        """
        Records of one head, optionally for one phase and step.

        Raises
        ------
        TraceLookupError
            If no record matches.
        """
        found = [
            r for r in self.records
            if r.layer == layer and r.head == head
            and (phase is None or r.phase == phase)
            and (step is None or r.step == step)
        ]
        if not found:
            raise TraceLookupError(f"No eviction record for layer {layer}, head {head}")
        return sorted(found, key=lambda r: (r.phase, r.step))

    def to_frame(self, timing=True):
        """
        Records as a DataFrame sorted by head, phase, and step.

        Parameters
        ----------
        timing : bool, optional
            Include the ``evict_micros`` column. Default is True.
        """
        rows = [
            (r.layer, r.head, r.phase, r.step, ";".join(str(i) for i in r.retained), r.evict_micros)
            for r in self.records
        ]
        df = pd.DataFrame(rows, columns=self.columns)
        df = df.sort_values(["layer", "head", "phase", "step"], kind="stable")
        df = df.reset_index(drop=True)
        if not timing:
            df = df.drop(columns="evict_micros")
        if self.prompt_len is not None:
            df["prompt_len"] = self.prompt_len
        return df

    def to_csv(self, path, timing=True):
        """
        Write the trace to a CSV file.
        """
        self.to_frame(timing).to_csv(path, index=False)

    @classmethod
    def read_csv(cls, path):
        """
        Read a trace written by :meth:`to_csv`.

        Raises
        ------
        TraceFormatError
            If the file is empty, lacks a required column, or holds a row
            that does not parse.
        """
        try:
            df = pd.read_csv(path, dtype=str, keep_default_na=False)
        except ValueError as e:
            raise TraceFormatError(f"Cannot read trace {path}: {e}") from e
        missing = [c for c in cls.required if c not in df.columns]
        if missing:
            raise TraceFormatError(f"Trace {path} lacks columns: {', '.join(missing)}")

        trace = cls()
        try:
            if "prompt_len" in df.columns and len(df):
                trace.prompt_len = int(df["prompt_len"].iloc[0])
            for row in df.itertuples(index=False):
                text = row.retained_indices
                retained = RetainedSet(int(i) for i in text.split(";")) if text else RetainedSet()
                micros = float(getattr(row, "evict_micros", "") or 0.0)
                trace.add(EvictionRecord(int(row.layer), int(row.head), row.phase, int(row.step),
                                         retained, micros))
        except ValueError as e:
            raise TraceFormatError(f"Malformed row in trace {path}: {e}") from e
        return trace


class ModelCache:
    """
    Caches of every head of a model.

    Parameters
    ----------
    workload : Workload
        Workload that produced the activations.
    budget : BudgetConfig
        Cache budget.
    seed : int
        Master seed of the eviction decisions.
    heads : dict
        Maps ``(layer, head)`` to a :class:`HeadCache`.
    trace : EvictionTrace, optional
        Trace that receives the eviction records.

    Attributes
    ----------
    step : int
        Last generation step applied; 0 after encoding.
    counts : BudgetCounts
        Token counts of the budget for the prompt length.
    """

    def __init__(self, workload, budget, seed, heads, trace=None):
        self.workload = workload
        self.budget = budget
        self.seed = seed
        self.heads = heads
        self.trace = trace if trace is not None else EvictionTrace()
        self.step = 0
        self.counts = budget.counts(workload.prompt_len)

    def __getitem__(self, coord):
        return self.heads[coord]

    def __iter__(self):
        return iter(self.heads)

    @property
    def capacity(self):
        """
        Cache budget C in tokens.
        """
        return self.counts.total

    def retained(self):
        """
        Retained token positions of every head.
        """
        return {coord: cache.retained() for coord, cache in self.heads.items()}


def _timed(fn, *args):
    t0 = time.perf_counter_ns()
    out = fn(*args)
    return out, (time.perf_counter_ns() - t0) / 1000.0


def _activations(workload):
    if isinstance(workload, Activations):
        return workload.workload, workload
    return workload, generate_workload(workload)


def encode(workload, policy, budget, head_order=None, seed=None):
    """
    Evict the prompt of every head in one call per head.

    Parameters
    ----------
    workload : Workload or Activations
        Workload, or its already generated activations.
    policy : EvictionPolicy
        Eviction policy.
    budget : BudgetConfig
        Cache budget.
    head_order : list of tuple, optional
        Order in which heads are processed. Default is layer-major order.
        The result does not depend on the order.
    seed : int, optional
        Master seed of the eviction decisions. Default is the workload seed.

    Returns
    -------
    cache : ModelCache
        Cache after prompt eviction, with ``cache.step == 0``.
    trace : EvictionTrace
        One encode record per head.

    Raises
    ------
    HeadEvictionError
        If the policy fails on a head; the error carries the head coordinates.

    Examples
    --------
    >>> w = ke.Workload(layers=2, heads=2, head_dim=8, prompt_len=100, seed=1)
    >>> cache, trace = ke.encode(w, ke.make_policy("nacl"), ke.budget_preset("20%"))
    >>> len(cache[1, 0]), len(trace)
    (20, 4)
    """
    workload, acts = _activations(workload)
    seed = workload.seed if seed is None else seed
    order = sorted(acts) if head_order is None else list(head_order)

    trace = EvictionTrace(prompt_len=workload.prompt_len)
    heads = {}
    for layer, head in order:
        head_acts = acts[layer, head]
        a = head_acts.prompt_scores()
        rng = policy.stream(seed, layer, head)
        try:
            retained, micros = _timed(policy.encode_select, a, budget, rng)
            cache = HeadCache.from_prompt(head_acts, retained)
            policy.init_state(cache, a, budget)
        except KvevictError as e:
            raise HeadEvictionError(layer, head, e) from e
        heads[layer, head] = cache
        trace.add(EvictionRecord(layer, head, ENCODE, 0, retained, micros))
        logger.debug("Encoded layer %d head %d, kept %d tokens", layer, head, len(retained))

    heads = {coord: heads[coord] for coord in sorted(heads)}
    logger.info("Encoded %d heads with %s", len(heads), policy.name)
    return ModelCache(workload, budget, seed, heads, trace), trace


def generate_step(cache, policy, rows):
    """
    Append one generated token to every head and evict every ``m`` steps.

    Parameters
    ----------
    cache : ModelCache
        Cache at step ``t - 1``; it is updated in place.
    policy : EvictionPolicy
        Eviction policy.
    rows : StepRows
        Query, key, and value rows of step ``t`` for every head.

    Returns
    -------
    cache : ModelCache
        The same cache at step ``t``.

    Raises
    ------
    SequenceError
        If ``rows.step`` is not ``cache.step + 1``.
    HeadEvictionError
        If the policy fails on a head.
    """
    t = rows.step
    if t != cache.step + 1:
        raise SequenceError(f"Expected step {cache.step + 1}, got step {t}")

    evict = policy.evicts and t % cache.budget.interval_m == 0
    for (layer, head), hc in cache.heads.items():
        q, k, v = rows.rows[layer, head]
        hc.append(rows.position, k, v)
        logits = hc.logits(q)
        _, observed = _timed(policy.observe, hc, logits)
        hc.observe_micros += observed
        if not evict:
            continue
        rng = policy.stream(cache.seed, layer, head).at(t)
        try:
            retained, micros = _timed(policy.step_select, hc, logits, cache.counts, rng)
            hc.retain(retained)
        except KvevictError as e:
            raise HeadEvictionError(layer, head, e) from e
        cache.trace.add(EvictionRecord(layer, head, GENERATE, t, retained,
                                       hc.observe_micros + micros))
        hc.observe_micros = 0.0

    cache.step = t
    return cache


def generate(cache, policy, acts, steps=None):
    """
    Run generation steps from ``cache.step + 1`` through ``steps``.

    Parameters
    ----------
    cache : ModelCache
        Cache to update in place.
    policy : EvictionPolicy
        Eviction policy.
    acts : Activations
        Activations holding the generation rows.
    steps : int, optional
        Last step to run. Default is the workload's ``gen_len``.
    """
    steps = acts.workload.gen_len if steps is None else steps
    for t in range(cache.step + 1, steps + 1):
        generate_step(cache, policy, acts.step_rows(t))
    logger.debug("Generated through step %d", cache.step)
    return cache


def reference_stepwise_encode(workload, policy, budget, seed=None):
    """
    Evict the prompt one token at a time.

    Prompt tokens are fed to an empty cache as if they were generated, and
    the policy's step rule evicts whenever the cache exceeds the budget. This
    is the procedure of methods that evict during encoding the same way as
    during generation and needs ``p - C`` eviction calls per head.

    Parameters
    ----------
    workload : Workload or Activations
        Workload, or its already generated activations.
    policy : EvictionPolicy
        Eviction policy.
    budget : BudgetConfig
        Cache budget.
    seed : int, optional
        Master seed of the eviction decisions. Default is the workload seed.

    Returns
    -------
    cache : ModelCache
        Cache after the prompt, with ``cache.step == 0``.
    trace : EvictionTrace
        One encode record per eviction call, stepped by prompt token.
        Each record's time covers the step rule and the ``observe`` updates
        since the previous call on the head.
    """
    workload, acts = _activations(workload)
    seed = workload.seed if seed is None else seed
    counts = budget.counts(workload.prompt_len)

    trace = EvictionTrace(prompt_len=workload.prompt_len)
    heads = {}
    for layer, head in sorted(acts):
        head_acts = acts[layer, head]
        hc = HeadCache(layer, head, workload.head_dim)
        hc.protected = policy.protected_indices(workload.prompt_len, budget)
        stream = policy.stream(seed, layer, head)
        try:
            for i in range(workload.prompt_len):
                hc.append(i, head_acts.keys[i], head_acts.values[i])
                logits = hc.logits(head_acts.queries[i])
                _, observed = _timed(policy.observe, hc, logits)
                hc.observe_micros += observed
                if policy.evicts and len(hc) > counts.total:
                    retained, micros = _timed(policy.step_select, hc, logits, counts,
                                              stream.at(i))
                    hc.retain(retained)
                    trace.add(EvictionRecord(layer, head, ENCODE, i, retained,
                                             hc.observe_micros + micros))
                    hc.observe_micros = 0.0
        except KvevictError as e:
            raise HeadEvictionError(layer, head, e) from e
        heads[layer, head] = hc

    logger.info("Step-by-step encoded %d heads with %s, %d eviction calls",
                len(heads), policy.name, len(trace))
    return ModelCache(workload, budget, seed, heads, trace), trace


def count_evictions(trace):
    """
    Number of eviction calls per head and phase.

    Parameters
    ----------
    trace : EvictionTrace
        Eviction trace.

    Returns
    -------
    counts : collections.Counter
        Maps ``(layer, head, phase)`` to the number of calls.

    Examples
    --------
    >>> w = ke.Workload(layers=1, heads=2, head_dim=8, prompt_len=32)
    >>> _, trace = ke.encode(w, ke.make_policy("h2o"), ke.budget_preset("20%"))
    >>> ke.count_evictions(trace)
    Counter({(0, 0, 'encode'): 1, (0, 1, 'encode'): 1})
    """
    return Counter((r.layer, r.head, r.phase) for r in trace)
