"""
Baseline eviction policies: attention sink, H2O, MSRNN, and Scissorhands.

All baselines take a causal prompt score matrix and return the retained token
positions. Ties are broken toward keeping the lower token index unless noted.
"""

import numpy as np
from scipy.special import softmax

from .attention import masked_softmax_rows
from .errors import BudgetError, ShapeError
from .selection import ProxySet, RetainedSet, TokenScores, score_proxy, select_topk


def _check_square(a, name):
    if a.rows != a.cols:
        raise ShapeError(f"{name} needs a square prompt matrix, got {a.rows}x{a.cols}")


def _argmin_last(values):
    """
    Position of the minimum, taking the last position on ties.
    """
    values = np.asarray(values)
    return values.size - 1 - int(np.argmin(values[::-1]))


def baseline_attention_sink(p, n_initial, n_recent):
    """
    Keep the initial tokens and the most recent tokens.

    Parameters
    ----------
    p : int
        Prompt length.
    n_initial : int
        Number of initial (sink) tokens to keep.
    n_recent : int
        Number of most recent tokens to keep.

    Returns
    -------
    retained : RetainedSet
        ``{0..n_initial-1} | {p-n_recent..p-1}``.

    Raises
    ------
    BudgetError
        If the two windows overlap.

    Examples
    --------
    >>> ke.baseline_attention_sink(10, 2, 3).indices
    (0, 1, 7, 8, 9)
    """
    if n_initial < 0 or n_recent < 0:
        raise BudgetError("Sink and recent window sizes must be non-negative")
    if n_initial + n_recent > p:
        raise BudgetError(f"{n_initial} initial + {n_recent} recent tokens exceed {p} tokens")
    return RetainedSet(list(range(n_initial)) + list(range(p - n_recent, p)))


def baseline_h2o(a, k, n_recent, greedy=True):
    """
    Heavy-hitter eviction with a recent window.

    The greedy form processes the rows in order. Each new token joins the
    cache, the attention of its row over the cached tokens is added to their
    accumulated scores, and when the cache exceeds ``k + n_recent`` the
    non-recent token with the lowest accumulated score is dropped (the higher
    index goes first on ties). The one-shot form keeps the recent window plus
    the top ``k`` columns of the full masked-softmax column sums.

    Parameters
    ----------
    a : ScoreMatrix
        Causal prompt logits.
    k : int
        Number of heavy-hitter tokens.
    n_recent : int
        Number of most recent tokens that are always kept.
    greedy : bool, optional
        Use the step-by-step procedure. Default is True.

    Returns
    -------
    retained : RetainedSet
        ``k + n_recent`` tokens.

    Raises
    ------
    BudgetError
        If ``k + n_recent`` exceeds the prompt length.

    References
    ----------
    Zhenyu Zhang, Ying Sheng, Tianyi Zhou, et al. H2O: Heavy-Hitter Oracle for
    Efficient Generative Inference of Large Language Models. NeurIPS, 2023.
    """
    p = a.cols
    if k < 0 or n_recent < 0 or k + n_recent > p:
        raise BudgetError(f"{k} heavy hitters + {n_recent} recent tokens exceed {p} tokens")

    if not greedy:
        sums = TokenScores(masked_softmax_rows(a).column_sums(), origin="h2o")
        recent = ProxySet.trailing(p, n_recent)
        return select_topk(sums, k, recent)

    _check_square(a, "Greedy H2O")
    budget = k + n_recent
    cached = []
    acc = np.zeros(0)
    for i in range(a.rows):
        cached.append(i)
        acc = np.append(acc, 0.0)
        acc += softmax(a.data[i, cached])
        if len(cached) > budget:
            drop = _argmin_last(acc[: len(cached) - n_recent])
            del cached[drop]
            acc = np.delete(acc, drop)
    return RetainedSet(cached)


def baseline_msrnn(a, k, greedy=True):
    """
    Evict by the attention of the current token only.

    The greedy form keeps a cache of ``k`` tokens. At each new row the cached
    tokens and the new token are scored by that row's softmax and the lowest
    scoring one is dropped (the lower index goes first on ties). The one-shot
    form keeps the top ``k`` columns of the last row's softmax.

    Parameters
    ----------
    a : ScoreMatrix
        Causal prompt logits.
    k : int
        Cache budget in tokens.
    greedy : bool, optional
        Use the step-by-step procedure. Default is True.

    Returns
    -------
    retained : RetainedSet
        ``k`` tokens.

    Raises
    ------
    BudgetError
        If ``k`` exceeds the prompt length.

    References
    ----------
    Matanel Oren, Michael Hassid, Yossi Adi, and Roy Schwartz. Transformers
    are Multi-State RNNs. arXiv:2401.06104, 2024.
    """
    p = a.cols
    if k < 0 or k > p:
        raise BudgetError(f"Budget {k} is outside 0..{p}")

    if not greedy:
        return select_topk(score_proxy(a, ProxySet([a.rows - 1])), k)

    _check_square(a, "Greedy MSRNN")
    cached = []
    for i in range(a.rows):
        cached.append(i)
        if len(cached) > k:
            probs = softmax(a.data[i, cached])
            del cached[int(np.argmin(probs))]
    return RetainedSet(cached)


def scissorhands_counters(a, window_w):
    """
    Count how often each column is above its row mean in the last rows.

    For each of the last ``window_w`` rows, every visible column whose
    probability is strictly above the mean of the row's visible entries gets
    one count.

    Parameters
    ----------
    a : ScoreMatrix
        Causal prompt logits.
    window_w : int
        Number of trailing rows in the history window.

    Returns
    -------
    counters : ndarray of int
        One counter per column.
    """
    window = a.take_rows(np.arange(max(a.rows - window_w, 0), a.rows))
    probs = masked_softmax_rows(window)
    visible = probs.mask.sum(axis=1)
    above = (probs.data > (1.0 / visible)[:, np.newaxis]) & probs.mask
    return above.sum(axis=0)


def baseline_scissorhands(a, k, window_w):
    """
    Keep the recent window plus the columns most often above the row mean.

    The most recent ``window_w`` tokens are kept first and count against the
    budget; the rest of the budget goes to the highest counters from
    :func:`scissorhands_counters`. This follows the published description of
    the method (a counter of above-average attention within a history window)
    and is an approximation of its full algorithm.

    Parameters
    ----------
    a : ScoreMatrix
        Causal prompt logits.
    k : int
        Cache budget in tokens.
    window_w : int
        History window in rows.

    Returns
    -------
    retained : RetainedSet
        ``k`` tokens.

    Raises
    ------
    BudgetError
        If the window or budget is outside the prompt.

    References
    ----------
    Zichang Liu, Aditya Desai, Fangshuo Liao, et al. Scissorhands: Exploiting
    the Persistence of Importance Hypothesis for LLM KV Cache Compression at
    Test Time. NeurIPS, 2023.
    """
    p = a.cols
    if not 1 <= window_w <= p:
        raise BudgetError(f"Window {window_w} is outside 1..{p}")
    if k < 0 or k > p:
        raise BudgetError(f"Budget {k} is outside 0..{p}")

    recent = ProxySet.trailing(p, min(window_w, k))
    counters = TokenScores(scissorhands_counters(a, window_w), origin="scissorhands")
    return select_topk(counters, k - len(recent), recent)
