"""
Token scoring and selection primitives shared by all eviction policies.

Ties are always broken toward the lower token index.
"""

from dataclasses import dataclass

import numpy as np

from .attention import masked_softmax_rows
from .errors import BudgetError, PolicyConfigError, ShapeError
from .rng import HeadRngStream


def _index_tuple(indices):
    arr = np.unique(np.asarray(list(indices), dtype=np.int64))
    if arr.size and arr[0] < 0:
        raise ValueError("Token indices must be non-negative")
    return tuple(int(i) for i in arr)


@dataclass(frozen=True)
class ProxySet:
    """
    Token positions whose attention rows score the other tokens.

    Parameters
    ----------
    indices : iterable of int
        Token positions; duplicates are dropped and the result is sorted.

    Examples
    --------
    >>> ke.ProxySet([9, 7, 8]).indices
    (7, 8, 9)
    """

    indices: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "indices", _index_tuple(self.indices))

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i):
        return i in self.indices

    @classmethod
    def trailing(cls, p, n):
        """
        The last ``n`` positions of a prompt with ``p`` tokens.
        """
        return cls(range(max(p - n, 0), p))


@dataclass(frozen=True)
class RetainedSet:
    """
    Sorted token positions kept in one head's cache.

    Parameters
    ----------
    indices : iterable of int
        Token positions; duplicates are dropped and the result is sorted.
    """

    indices: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "indices", _index_tuple(self.indices))

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i):
        return i in self.indices

    def __or__(self, other):
        return RetainedSet(self.indices + tuple(other))

    def as_array(self):
        """
        Indices as an integer array.
        """
        return np.array(self.indices, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class TokenScores:
    """
    One importance score per candidate column.

    Parameters
    ----------
    values : array_like
        Finite scores.
    origin : str, optional
        Name of the scoring rule that produced the values.
    """

    values: np.ndarray
    origin: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if not np.all(np.isfinite(values)):
            raise ValueError("Token scores must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


def score_proxy(a, proxies):
    r"""
    Score every column by the attention it receives from the proxy rows.

    .. math:: F(j) = \sum_{x_p \in P} \mathrm{softmax}(A_{x_p, *})_j

    Parameters
    ----------
    a : ScoreMatrix
        Attention logits.
    proxies : ProxySet
        Rows of ``a`` used for scoring.

    Returns
    -------
    scores : TokenScores
        Column scores; masked positions contribute nothing.

    Raises
    ------
    PolicyConfigError
        If the proxy set is empty.
    ShapeError
        If a proxy index is not a row of ``a``.

    Examples
    --------
    >>> a = ke.ScoreMatrix([[0.0, 0.0]])
    >>> ke.score_proxy(a, ke.ProxySet([0])).values
    array([0.5, 0.5])
    """
    if len(proxies) == 0:
        raise PolicyConfigError("Proxy set for scoring must not be empty")
    if proxies.indices[-1] >= a.rows:
        raise ShapeError(f"Proxy row {proxies.indices[-1]} is outside {a.rows} rows")
    probs = masked_softmax_rows(a.take_rows(proxies.indices))
    return TokenScores(probs.column_sums(), origin="proxy")


def _check_protected(protected, n):
    protected = protected if protected is not None else ProxySet()
    if len(protected) and protected.indices[-1] >= n:
        raise PolicyConfigError(f"Protected index {protected.indices[-1]} is outside {n} columns")
    return protected


def _top(values, candidates, k):
    """
    The ``k`` candidates with the largest values, lower index first on ties.
    """
    order = np.argsort(-values[candidates], kind="stable")
    return candidates[order[:k]]


def select_topk(scores, k, protected=None):
    """
    Keep the protected columns plus the top ``k`` other columns.

    Parameters
    ----------
    scores : TokenScores
        Column scores.
    k : int
        Number of non-protected columns to keep.
    protected : ProxySet, optional
        Columns that are always kept. Default is none.

    Returns
    -------
    retained : RetainedSet
        ``k + len(protected)`` columns.

    Raises
    ------
    BudgetError
        If fewer than ``k`` non-protected columns exist.

    Examples
    --------
    >>> ke.select_topk(ke.TokenScores([0.1, 0.9, 0.5]), 1).indices
    (1,)
    >>> ke.select_topk(ke.TokenScores([0.5, 0.5]), 1).indices
    (0,)
    """
    n = len(scores)
    protected = _check_protected(protected, n)
    is_protected = np.zeros(n, dtype=bool)
    is_protected[list(protected.indices)] = True
    candidates = np.flatnonzero(~is_protected)
    if k < 0 or k > candidates.size:
        raise BudgetError(f"Cannot keep {k} of {candidates.size} non-protected columns")
    top = _top(scores.values, candidates, k)
    return RetainedSet(protected.indices + tuple(int(i) for i in top))


def sample_random(scores, k, exclude=None, rng=None, distribution="score"):
    """
    Sample ``k`` distinct columns without replacement.

    Columns are drawn one at a time from the softmax of the scores over the
    remaining candidates, renormalizing after each draw. The draws use the
    Gumbel-top-k construction, which has exactly this distribution: every
    column gets the key ``score + G`` with ``G`` a standard Gumbel draw and
    the ``k`` largest keys win.

    Parameters
    ----------
    scores : TokenScores
        Column scores.
    k : int
        Number of columns to draw.
    exclude : RetainedSet, optional
        Columns that cannot be drawn. Default is none.
    rng : HeadRngStream or numpy.random.Generator
        Source of randomness.
    distribution : {'score', 'uniform'}, optional
        Sample from the softmax of the scores or uniformly over the
        candidates. Default is 'score'.

    Returns
    -------
    sampled : RetainedSet
        The ``k`` drawn columns.

    Raises
    ------
    BudgetError
        If fewer than ``k`` candidates remain.
    PolicyConfigError
        If the distribution is unknown or no random source is given.

    Examples
    --------
    >>> s = ke.TokenScores([0.0, 0.0, 0.0, 0.0])
    >>> ke.sample_random(s, 4, rng=ke.HeadRngStream(0)).indices
    (0, 1, 2, 3)
    """
    if distribution not in ("score", "uniform"):
        raise PolicyConfigError(f"Unknown sampling distribution '{distribution}'")
    n = len(scores)
    excluded = np.zeros(n, dtype=bool)
    if exclude is not None and len(exclude):
        excluded[list(exclude.indices)] = True
    candidates = np.flatnonzero(~excluded)
    if k < 0 or k > candidates.size:
        raise BudgetError(f"Cannot sample {k} of {candidates.size} candidate columns")
    if k == 0:
        return RetainedSet()
    if rng is None:
        raise PolicyConfigError("A random stream is required for sampling")

    gen = rng.generator() if isinstance(rng, HeadRngStream) else rng
    keys = gen.gumbel(size=n)
    if distribution == "score":
        keys = keys + scores.values
    return RetainedSet(int(i) for i in _top(keys, candidates, k))
