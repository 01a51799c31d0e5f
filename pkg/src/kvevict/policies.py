"""
Eviction policies used by the cache manager.

A policy has two rules. ``encode_select`` evicts a whole prompt in one call
from its score matrix; ``step_select`` evicts from a live head cache using the
scores of the current query row over the cached keys. Policies that need
running statistics keep them on the head cache through ``init_state`` and
``observe``.
"""

from collections import deque

import numpy as np
from scipy.special import softmax

from .attention import masked_softmax_rows
from .baselines import (
    baseline_attention_sink,
    baseline_h2o,
    baseline_msrnn,
    baseline_scissorhands,
)
from .errors import PolicyConfigError
from .nacl import default_proxy_sets, hybrid_select, nacl_select
from .rng import HeadRngStream
from .selection import ProxySet, RetainedSet, TokenScores, select_topk


def _keep_local(cache, positions):
    """
    Retained set from positions within the cache.
    """
    return RetainedSet(int(i) for i in cache.indices[np.asarray(list(positions), dtype=np.int64)])


class EvictionPolicy:
    """
    Base class for eviction policies.

    Attributes
    ----------
    name : str
        Policy name used in configs and result files.
    evicts : bool
        False for policies that never drop tokens.
    """

    name = ""
    evicts = True

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"

    def params(self):
        """
        Policy parameters as a dictionary.
        """
        return {}

    def stream(self, seed, layer, head):
        """
        Random stream used for the evictions of one head.
        """
        return HeadRngStream(seed, layer, head)

    def protected_indices(self, p, budget):
        """
        Prompt positions that must survive every eviction.
        """
        return ()

    def encode_select(self, a, budget, rng):
        """
        Retained set for a whole prompt, chosen in one call.

        Parameters
        ----------
        a : ScoreMatrix
            Causal prompt logits of the head.
        budget : BudgetConfig
            Cache budget.
        rng : HeadRngStream
            Random stream of the head.

        Returns
        -------
        retained : RetainedSet
            Prompt positions to keep.
        """
        raise NotImplementedError

    def init_state(self, cache, a, budget):
        """
        Set the running statistics of a head cache after prompt eviction.
        """
        cache.protected = self.protected_indices(a.cols, budget)

    def observe(self, cache, logits):
        """
        Update running statistics with the scores of the current query row.
        """

    def step_select(self, cache, logits, counts, rng):
        """
        Retained set for a live head cache.

        Parameters
        ----------
        cache : HeadCache
            Cache of the head, including the newest token.
        logits : ndarray
            Scores of the current query row over the cached keys.
        counts : BudgetCounts
            Token counts of the budget.
        rng : HeadRngStream
            Random stream of the head at the current step.

        Returns
        -------
        retained : RetainedSet
            Token positions to keep.
        """
        raise NotImplementedError


class NaclPolicy(EvictionPolicy):
    """
    Proxy-token scoring combined with random eviction.

    Parameters
    ----------
    distribution : {'score', 'uniform'}, optional
        Sampling distribution of the random share. Default is 'score'.
    rng_scope : {'head', 'layer', 'model'}, optional
        Whether each head draws its own random tokens, or the heads of a layer
        or of the whole model share the draws. Default is 'head'.
    protect_in_generation : bool, optional
        Keep the protected proxy tokens during generation-phase evictions.
        Default is True.
    protect_indices : list of int, optional
        Explicit protected proxy tokens. Default is the end of the prompt.
    score_indices : list of int, optional
        Explicit proxy rows for scoring. Default is the end of the prompt.
    """

    name = "nacl"

    def __init__(self, distribution="score", rng_scope="head", protect_in_generation=True,
                 protect_indices=None, score_indices=None):
        if distribution not in ("score", "uniform"):
            raise PolicyConfigError(f"Unknown sampling distribution '{distribution}'")
        if rng_scope not in ("head", "layer", "model"):
            raise PolicyConfigError(f"Unknown random scope '{rng_scope}'")
        if score_indices is not None and len(score_indices) == 0:
            raise PolicyConfigError("Proxy set for scoring must not be empty")
        self.distribution = distribution
        self.rng_scope = rng_scope
        self.protect_in_generation = protect_in_generation
        self.protect_indices = None if protect_indices is None else tuple(protect_indices)
        self.score_indices = None if score_indices is None else tuple(score_indices)

    def params(self):
        return {
            "distribution": self.distribution,
            "rng_scope": self.rng_scope,
            "protect_in_generation": self.protect_in_generation,
            "protect_indices": self.protect_indices,
            "score_indices": self.score_indices,
        }

    def stream(self, seed, layer, head):
        if self.rng_scope == "layer":
            return HeadRngStream(seed, layer, 0)
        if self.rng_scope == "model":
            return HeadRngStream(seed, 0, 0)
        return HeadRngStream(seed, layer, head)

    def proxy_sets(self, p, budget):
        """
        Protected and scoring proxy sets for a prompt of ``p`` tokens.
        """
        protect, score = default_proxy_sets(p, budget)
        if self.protect_indices is not None:
            protect = ProxySet(self.protect_indices)
        if self.score_indices is not None:
            score = ProxySet(self.score_indices)
        return protect, score

    def protected_indices(self, p, budget):
        if not self.protect_in_generation:
            return ()
        return self.proxy_sets(p, budget)[0].indices

    def encode_select(self, a, budget, rng):
        protect, score = self.proxy_sets(a.cols, budget)
        return nacl_select(a, budget, protect, score, rng, self.distribution)

    def step_select(self, cache, logits, counts, rng):
        n = len(cache)
        protected = ProxySet(i for i, idx in enumerate(cache.indices) if idx in cache.protected)
        n_proxy = counts.proxy_evict
        if not self.protect_in_generation:
            n_proxy += counts.protect
        scores = TokenScores(softmax(logits), origin="current-row")
        total = min(counts.total, n)
        parts = hybrid_select(scores, total, n_proxy, protected, rng, self.distribution)
        return _keep_local(cache, parts.retained)


def _recent_split(total, recent_ratio):
    n_recent = int(np.floor(total * recent_ratio + 1e-9))
    return total - n_recent, n_recent


class H2OPolicy(EvictionPolicy):
    """
    Heavy hitters by accumulated attention plus a recent window.

    Parameters
    ----------
    recent_ratio : float, optional
        Share of the budget given to the most recent tokens. Default is 0.5.
    """

    name = "h2o"

    def __init__(self, recent_ratio=0.5):
        if not 0.0 <= recent_ratio <= 1.0:
            raise PolicyConfigError(f"recent_ratio = {recent_ratio} is outside [0, 1]")
        self.recent_ratio = recent_ratio

    def params(self):
        return {"recent_ratio": self.recent_ratio}

    def encode_select(self, a, budget, rng):
        k, n_recent = _recent_split(budget.total_count(a.cols), self.recent_ratio)
        return baseline_h2o(a, k, n_recent, greedy=False)

    def init_state(self, cache, a, budget):
        super().init_state(cache, a, budget)
        sums = masked_softmax_rows(a).column_sums()
        cache.accumulated = sums[cache.indices].copy()

    def observe(self, cache, logits):
        cache.accumulated = cache.accumulated + softmax(logits)

    def step_select(self, cache, logits, counts, rng):
        _, n_recent = _recent_split(counts.total, self.recent_ratio)
        keep = list(range(len(cache)))
        acc = cache.accumulated
        while len(keep) > counts.total:
            candidates = keep[: len(keep) - n_recent]
            values = acc[candidates]
            drop = len(values) - 1 - int(np.argmin(values[::-1]))
            del keep[drop]
        return _keep_local(cache, keep)


class MsrnnPolicy(EvictionPolicy):
    """
    Evict by the attention of the current token only.
    """

    name = "msrnn"

    def encode_select(self, a, budget, rng):
        return baseline_msrnn(a, budget.total_count(a.cols), greedy=False)

    def step_select(self, cache, logits, counts, rng):
        n_drop = max(len(cache) - counts.total, 0)
        order = np.argsort(softmax(logits), kind="stable")
        return _keep_local(cache, np.sort(order[n_drop:]))


class SinkPolicy(EvictionPolicy):
    """
    Keep the initial (sink) tokens and the most recent tokens.

    Parameters
    ----------
    n_initial : int, optional
        Number of sink tokens. Default is 4.
    """

    name = "sink"

    def __init__(self, n_initial=4):
        if n_initial < 0:
            raise PolicyConfigError(f"n_initial = {n_initial} must be non-negative")
        self.n_initial = n_initial

    def params(self):
        return {"n_initial": self.n_initial}

    def encode_select(self, a, budget, rng):
        total = budget.total_count(a.cols)
        n_initial = min(self.n_initial, total)
        return baseline_attention_sink(a.cols, n_initial, total - n_initial)

    def step_select(self, cache, logits, counts, rng):
        n = len(cache)
        if n <= counts.total:
            return cache.retained()
        n_initial = min(self.n_initial, counts.total)
        keep = list(range(n_initial)) + list(range(n - (counts.total - n_initial), n))
        return _keep_local(cache, keep)


class ScissorhandsPolicy(EvictionPolicy):
    """
    Keep a recent window plus the tokens most often above the row mean.

    Parameters
    ----------
    window : int, optional
        History window in query rows. Default is 8.
    """

    name = "scissorhands"

    def __init__(self, window=8):
        if window < 1:
            raise PolicyConfigError(f"window = {window} must be at least 1")
        self.window = window

    def params(self):
        return {"window": self.window}

    def encode_select(self, a, budget, rng):
        return baseline_scissorhands(a, budget.total_count(a.cols), min(self.window, a.cols))

    def init_state(self, cache, a, budget):
        super().init_state(cache, a, budget)
        rows = a.take_rows(np.arange(max(a.rows - self.window, 0), a.rows))
        probs = masked_softmax_rows(rows)
        visible = probs.mask.sum(axis=1)
        above = (probs.data > (1.0 / visible)[:, np.newaxis]) & probs.mask
        cache.history = deque((frozenset(np.flatnonzero(r).tolist()) for r in above),
                              maxlen=self.window)

    def observe(self, cache, logits):
        probs = softmax(logits)
        above = cache.indices[probs > 1.0 / probs.size]
        if not isinstance(cache.history, deque) or cache.history.maxlen != self.window:
            cache.history = deque(cache.history, maxlen=self.window)
        cache.history.append(frozenset(above.tolist()))

    def step_select(self, cache, logits, counts, rng):
        n = len(cache)
        if n <= counts.total:
            return cache.retained()
        counters = [sum(int(idx) in s for s in cache.history) for idx in cache.indices]
        recent = ProxySet.trailing(n, min(self.window, counts.total))
        keep = select_topk(TokenScores(counters), counts.total - len(recent), recent)
        return _keep_local(cache, keep)


class FullPolicy(EvictionPolicy):
    """
    Keep every token.
    """

    name = "full"
    evicts = False

    def encode_select(self, a, budget, rng):
        return RetainedSet(range(a.cols))

    def step_select(self, cache, logits, counts, rng):
        return cache.retained()


POLICIES = {
    cls.name: cls
    for cls in (NaclPolicy, H2OPolicy, MsrnnPolicy, SinkPolicy, ScissorhandsPolicy, FullPolicy)
}


def make_policy(name, **params):
    """
    Create an eviction policy from its name.

    Parameters
    ----------
    name : str
        One of 'nacl', 'h2o', 'msrnn', 'sink', 'scissorhands', or 'full'.
    **params
        Policy-specific parameters.

    Returns
    -------
    policy : EvictionPolicy
        The configured policy.

    Raises
    ------
    PolicyConfigError
        If the name is unknown or a parameter is not accepted.

    Examples
    --------
    >>> ke.make_policy("sink", n_initial=2)
    SinkPolicy(n_initial=2)
    """
    try:
        cls = POLICIES[name.lower()]
    except KeyError:
        available = ", ".join(POLICIES)
        raise PolicyConfigError(f"Unknown policy '{name}', choose one of {available}") from None
    try:
        return cls(**params)
    except TypeError as e:
        raise PolicyConfigError(f"Invalid parameters for policy '{name}': {e}") from None
