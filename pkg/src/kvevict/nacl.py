"""
Hybrid eviction: proxy-token scoring with probabilistic random eviction.
"""

from dataclasses import dataclass

from .errors import BudgetError
from .selection import ProxySet, RetainedSet, sample_random, score_proxy, select_topk


def default_proxy_sets(p, budget):
    """
    Default protected and scoring proxy sets for a prompt.

    Proxy tokens sit at the end of the prompt, where the question usually is.
    The protected set is the last ``protect`` tokens and the scoring set is
    the last ``noprotect`` tokens, at least the final token. With the default
    placement the scoring set covers the protected tokens whenever it is at
    least as long.

    Parameters
    ----------
    p : int
        Prompt length.
    budget : BudgetConfig
        Budget fractions.

    Returns
    -------
    protect : ProxySet
        Tokens that are always retained.
    score : ProxySet
        Tokens whose attention rows score the prompt.

    Examples
    --------
    >>> protect, score = ke.default_proxy_sets(100, ke.budget_preset("20%"))
    >>> protect.indices
    (98, 99)
    >>> len(score)
    18
    """
    counts = budget.counts(p)
    return ProxySet.trailing(p, counts.protect), ProxySet.trailing(p, counts.score_proxy)


@dataclass(frozen=True)
class NaclSelection:
    """
    The three disjoint parts of a hybrid selection.

    Attributes
    ----------
    protected : RetainedSet
        Protected proxy tokens.
    proxy : RetainedSet
        Top-k tokens by proxy score.
    random : RetainedSet
        Tokens sampled from the proxy-score distribution.
    """

    protected: RetainedSet
    proxy: RetainedSet
    random: RetainedSet

    @property
    def retained(self):
        """
        Union of the three parts.
        """
        return self.protected | self.proxy | self.random


def hybrid_select(scores, total, n_proxy, protected, rng, distribution="score"):
    """
    Keep protected columns, the top ``n_proxy`` by score, and sample the rest.

    This is the selection step shared by encoding-phase and generation-phase
    eviction; it takes ready-made scores instead of an attention matrix.

    Parameters
    ----------
    scores : TokenScores
        Column scores.
    total : int
        Number of columns to keep.
    n_proxy : int
        Columns chosen by top-k score; the remainder after protected and
        top-k columns is sampled.
    protected : ProxySet
        Columns that are always kept.
    rng : HeadRngStream
        Source of randomness for the random share.
    distribution : {'score', 'uniform'}, optional
        Sampling distribution of the random share. Default is 'score'.

    Returns
    -------
    selection : NaclSelection
        The three parts of the selection.

    Raises
    ------
    BudgetError
        If the protected columns alone exceed the budget or fewer than
        ``total`` columns exist.
    """
    n = len(scores)
    if total > n:
        raise BudgetError(f"Budget {total} exceeds the {n} available columns")
    if len(protected) > total:
        raise BudgetError(f"{len(protected)} protected tokens exceed the budget of {total}")

    n_proxy = min(n_proxy, total - len(protected))
    n_random = total - len(protected) - n_proxy

    kept = select_topk(scores, n_proxy, protected)
    top = RetainedSet(i for i in kept if i not in protected)
    sampled = sample_random(scores, n_random, kept, rng, distribution=distribution)
    return NaclSelection(RetainedSet(protected.indices), top, sampled)


def nacl_parts(a, budget, protect=None, score=None, rng=None, distribution="score"):
    """
    Encoding-phase hybrid selection, returned as its three parts.

    Parameters are the same as :func:`nacl_select`.

    Returns
    -------
    selection : NaclSelection
        Protected, top-k, and random parts; pairwise disjoint.
    """
    p = a.cols
    counts = budget.counts(p)
    default_protect, default_score = default_proxy_sets(p, budget)
    protect = default_protect if protect is None else protect
    score = default_score if score is None else score

    scores = score_proxy(a, score)
    return hybrid_select(scores, counts.total, counts.proxy_evict, protect, rng, distribution)


def nacl_select(a, budget, protect=None, score=None, rng=None, distribution="score"):
    """
    One-shot hybrid eviction of a prompt.

    The retained set is the protected proxy tokens, the top ``C_p`` tokens by
    proxy score, and ``C_r`` tokens sampled without replacement from the
    softmax of the same proxy scores over the tokens not yet kept.

    Parameters
    ----------
    a : ScoreMatrix
        Causal prompt logits, ``p x p``.
    budget : BudgetConfig
        Budget fractions.
    protect : ProxySet, optional
        Protected proxy tokens. Default is the last ``protect`` tokens.
    score : ProxySet, optional
        Proxy rows for scoring. Default is the last ``noprotect`` tokens, at
        least the final token.
    rng : HeadRngStream
        Random stream of the head.
    distribution : {'score', 'uniform'}, optional
        Sampling distribution of the random share. Default is 'score'.

    Returns
    -------
    retained : RetainedSet
        Exactly ``budget.total_count(p)`` tokens: ``total_frac * p`` rounded
        half up, but never fewer than one.

    Examples
    --------
    >>> w = ke.Workload(layers=1, heads=1, head_dim=8, prompt_len=100, seed=1)
    >>> a = w.head(0, 0).prompt_scores()
    >>> s = ke.nacl_select(a, ke.budget_preset("20%"), rng=ke.HeadRngStream(1))
    >>> len(s), 98 in s, 99 in s
    (20, True, True)
    """
    return nacl_parts(a, budget, protect, score, rng, distribution).retained
