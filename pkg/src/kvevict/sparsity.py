"""
Sparsity of attention matrices.
"""

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .attention import masked_softmax_rows
from .workload import generate_workload


@dataclass(frozen=True, eq=False)
class SparsityReport:
    """
    Share of near-zero entries in each row of an attention matrix.

    Attributes
    ----------
    threshold : float
        Entries with absolute value below this count as zero.
    rows : ndarray
        Sparsity of each row, between 0 and 1.
    aggregate : float
        Mean sparsity over the rows.
    """

    threshold: float
    rows: np.ndarray
    aggregate: float


def sparsity(a, t):
    r"""
    Fraction of entries below a threshold in each row.

    .. math:: \mathrm{Sparsity}(t, i) = \frac{1}{N_i} \sum_j \mathbb{1}(|A_{ij}| < t)

    Only visible entries are counted, so for a causal matrix ``N_i`` is the
    number of unmasked entries of row ``i``.

    Parameters
    ----------
    a : ScoreMatrix or ProbMatrix
        Attention logits or probabilities.
    t : float
        Threshold, greater than zero.

    Returns
    -------
    report : SparsityReport
        Per-row and mean sparsity.

    Examples
    --------
    >>> p = ke.masked_softmax_rows(ke.ScoreMatrix(np.zeros((1, 4))))
    >>> ke.sparsity(p, 0.5).aggregate
    1.0
    """
    if t <= 0:
        raise ValueError(f"Sparsity threshold {t} must be greater than zero")
    small = (np.abs(a.data) < t) & a.mask
    rows = small.sum(axis=1) / a.mask.sum(axis=1)
    return SparsityReport(threshold=t, rows=rows, aggregate=float(rows.mean()))


def sparsity_sweep(workload, prefix_lens, t=1e-3):
    """
    Aggregate sparsity of softmaxed causal attention for several prompt lengths.

    Parameters
    ----------
    workload : Workload
        Template whose dimensions and seed are used; pivotal tokens and
        generation steps are dropped.
    prefix_lens : list of int
        Prompt lengths to measure.
    t : float, optional
        Threshold. Default is 1e-3.

    Returns
    -------
    df : pandas.DataFrame
        Columns ``prefix_len``, ``threshold``, and ``sparsity`` (mean over
        all heads).
    """
    rows = []
    for n in prefix_lens:
        w = replace(workload, prompt_len=int(n), gen_len=0, pivotal=(), question_len=1)
        values = [
            sparsity(masked_softmax_rows(head.prompt_scores()), t).aggregate
            for _, head in generate_workload(w).items()
        ]
        rows.append((int(n), t, float(np.mean(values))))
    return pd.DataFrame(rows, columns=["prefix_len", "threshold", "sparsity"])
