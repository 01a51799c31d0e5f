"""
Column sums of softmaxed attention computed tile by tile.

The kernel never forms the full probability matrix. Given the logsumexp ``L``
of every score row, each tile of probabilities is rebuilt as
``exp(Q_i K_j^T / sqrt(d) - L_i)`` and reduced over its rows straight away.
"""

from dataclasses import dataclass

import numpy as np

from .attention import _as_matrix, compute_scores, masked_softmax_rows
from .errors import PolicyConfigError, ShapeError
from .selection import TokenScores


@dataclass(frozen=True)
class TileSpec:
    """
    Row and column block sizes of the kernel.

    Parameters
    ----------
    br : int, optional
        Query rows per tile. Default is 32.
    bc : int, optional
        Key columns per tile. Default is 32.
    """

    br: int = 32
    bc: int = 32

    def __post_init__(self):
        if self.br < 1 or self.bc < 1:
            raise ValueError(f"Tile sizes must be at least 1, got {self.br}x{self.bc}")


@dataclass(frozen=True, eq=False)
class ReducedScores:
    """
    Attention received by every key column, summed over the query rows.

    Parameters
    ----------
    values : array_like
        One non-negative finite value per key column.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("Reduced scores must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def total(self):
        """
        Total attention mass, equal to the number of query rows.
        """
        return float(self.values.sum())


class OpCounter:
    """
    Work counters for the score kernels.

    Attributes
    ----------
    score_entries : int
        Query-key dot products evaluated.
    tiles : int
        Tiles processed.
    """

    def __init__(self):
        self.score_entries = 0
        self.tiles = 0

    def __repr__(self):
        return f"OpCounter(score_entries={self.score_entries}, tiles={self.tiles})"

    def add(self, rows, cols):
        """
        Count one tile of ``rows x cols`` scores.
        """
        self.score_entries += rows * cols
        self.tiles += 1

    def reset(self):
        """
        Set all counters to zero.
        """
        self.score_entries = 0
        self.tiles = 0


def _inputs(q, k, row_positions):
    qm = _as_matrix(q, "Q")
    km = _as_matrix(k, "K")
    if qm.shape[1] != km.shape[1]:
        raise ShapeError(f"Q has dimension {qm.shape[1]} but K has dimension {km.shape[1]}")
    nq, nk = qm.shape[0], km.shape[0]
    if row_positions is None:
        row_positions = np.arange(nq) + max(nk - nq, 0)
    pos = np.asarray(row_positions, dtype=np.int64)
    if pos.shape != (nq,):
        raise ShapeError(f"Expected {nq} row positions, got {pos.shape[0]}")
    return qm, km, pos


def _column_blocks(nk, bc, column_order):
    n_blocks = -(-nk // bc)
    if column_order is None:
        return range(n_blocks)
    order = [int(j) for j in column_order]
    if sorted(order) != list(range(n_blocks)):
        raise ShapeError(f"column_order must be a permutation of the {n_blocks} column blocks")
    return order


def reduce_naive(q, k, causal=False, row_positions=None):
    """
    Column sums of the full masked softmax.

    Parameters
    ----------
    q : array_like
        Query rows, ``N_q x d``.
    k : array_like
        Key rows, ``N_k x d``.
    causal : bool, optional
        Apply the causal mask. Default is False.
    row_positions : array_like of int, optional
        Token position of each query row. Default places the rows at the end
        of the key sequence.

    Returns
    -------
    reduced : ReducedScores
        ``N_k`` column sums.

    Examples
    --------
    >>> q = np.zeros((3, 2))
    >>> k = np.ones((4, 2))
    >>> ke.reduce_naive(q, k).values
    array([0.75, 0.75, 0.75, 0.75])
    """
    s = compute_scores(q, k, causal=causal, row_positions=row_positions)
    return ReducedScores(masked_softmax_rows(s).column_sums())


def reduce_tiled(q, k, lse, causal=False, tiles=None, dtype=np.float64, row_positions=None,
                 column_order=None, counter=None):
    """
    Column sums of the masked softmax, one tile at a time.

    For every column block ``j`` and every row block ``i`` the tile
    ``P = exp(Q_i K_j^T / sqrt(d) - L_i)`` is formed with masked entries set
    to zero and its column sums are added to the accumulator of block ``j``.
    Tiles that lie entirely above the causal diagonal are skipped. Each column
    block has its own accumulator, so the blocks can be processed in any
    order.

    Parameters
    ----------
    q : array_like
        Query rows, ``N_q x d``.
    k : array_like
        Key rows, ``N_k x d``.
    lse : array_like
        Logsumexp of every masked score row, length ``N_q``.
    causal : bool, optional
        Apply the causal mask. Default is False.
    tiles : TileSpec, optional
        Block sizes. Default is 32 x 32.
    dtype : numpy dtype, optional
        Working precision, ``np.float64`` or ``np.float32``. Default is
        ``np.float64``.
    row_positions : array_like of int, optional
        Token position of each query row. Default places the rows at the end
        of the key sequence.
    column_order : sequence of int, optional
        Processing order of the column blocks. Default is left to right.
    counter : OpCounter, optional
        Receives the number of tiles and score entries computed.

    Returns
    -------
    reduced : ReducedScores
        ``N_k`` column sums.

    Raises
    ------
    ShapeError
        If the dimensions, the logsumexp length, or the column order do not
        match the inputs.

    Examples
    --------
    >>> q = np.zeros((3, 2))
    >>> k = np.ones((4, 2))
    >>> lse = np.full(3, np.log(4))
    >>> ke.reduce_tiled(q, k, lse, tiles=ke.TileSpec(2, 2)).values
    array([0.75, 0.75, 0.75, 0.75])
    """
    tiles = TileSpec() if tiles is None else tiles
    qm, km, pos = _inputs(q, k, row_positions)
    nq, d = qm.shape
    nk = km.shape[0]
    lse = np.asarray(lse, dtype=np.float64).ravel()
    if lse.shape != (nq,):
        raise ShapeError(f"Expected {nq} logsumexp values, got {lse.size}")

    dtype = np.dtype(dtype).type
    qm = qm.astype(dtype, copy=False)
    km = km.astype(dtype, copy=False)
    lse = lse.astype(dtype, copy=False)
    root_d = np.sqrt(dtype(d))
    out = np.zeros(nk)

    for j in _column_blocks(nk, tiles.bc, column_order):
        c0, c1 = j * tiles.bc, min((j + 1) * tiles.bc, nk)
        kj = km[c0:c1]
        acc = np.zeros(c1 - c0, dtype=dtype)
        for r0 in range(0, nq, tiles.br):
            r1 = min(r0 + tiles.br, nq)
            if causal and pos[r0:r1].max() < c0:
                continue
            s = (qm[r0:r1] @ kj.T) / root_d
            p = np.zeros_like(s)
            if causal:
                visible = np.arange(c0, c1)[np.newaxis, :] <= pos[r0:r1, np.newaxis]
                np.exp(s - lse[r0:r1, np.newaxis], out=p, where=visible)
            else:
                np.exp(s - lse[r0:r1, np.newaxis], out=p)
            acc += p.sum(axis=0)
            if counter is not None:
                counter.add(r1 - r0, c1 - c0)
        out[c0:c1] = acc

    return ReducedScores(out)


def tiled_logsumexp(q, k, causal=False, tiles=None, row_positions=None, counter=None):
    """
    Logsumexp of every masked score row with a running maximum over tiles.

    Parameters are the same as :func:`reduce_tiled`.

    Returns
    -------
    lse : ndarray
        One value per query row.
    """
    tiles = TileSpec() if tiles is None else tiles
    qm, km, pos = _inputs(q, k, row_positions)
    nq, d = qm.shape
    nk = km.shape[0]
    root_d = np.sqrt(d)
    lse = np.empty(nq)

    for r0 in range(0, nq, tiles.br):
        r1 = min(r0 + tiles.br, nq)
        m = np.full(r1 - r0, -np.inf)
        total = np.zeros(r1 - r0)
        for c0 in range(0, nk, tiles.bc):
            c1 = min(c0 + tiles.bc, nk)
            if causal and pos[r0:r1].max() < c0:
                break
            s = (qm[r0:r1] @ km[c0:c1].T) / root_d
            visible = np.ones(s.shape, dtype=bool)
            if causal:
                visible = np.arange(c0, c1)[np.newaxis, :] <= pos[r0:r1, np.newaxis]
            new_m = np.maximum(m, np.max(s, axis=1, where=visible, initial=-np.inf))
            p = np.zeros_like(s)
            np.exp(s - new_m[:, np.newaxis], out=p, where=visible)
            rescale = np.zeros_like(m)
            np.exp(m - new_m, out=rescale, where=np.isfinite(m))
            total = total * rescale + p.sum(axis=1)
            m = new_m
            if counter is not None:
                counter.add(r1 - r0, c1 - c0)
        lse[r0:r1] = m + np.log(total)

    return lse


def recompute_proxy_scores(q_p, k, row_positions=None, causal=True, counter=None, tiles=None):
    """
    Proxy-token scores from the proxy queries alone.

    Only the ``|P| x N_k`` block of scores belonging to the proxy rows is
    computed, so the cost grows with the number of proxy tokens rather than
    with the prompt length squared. With ``tiles`` the block is processed by
    the tiled kernel: one pass for the row logsumexp and one for the column
    sums.

    Parameters
    ----------
    q_p : array_like
        Query rows of the proxy tokens, ``|P| x d``.
    k : array_like
        Key rows of the prompt, ``N_k x d``.
    row_positions : array_like of int
        Prompt position of each proxy row; required when ``causal`` is True.
    causal : bool, optional
        Apply the causal mask. Default is True.
    counter : OpCounter, optional
        Receives the number of score entries computed.
    tiles : TileSpec, optional
        Run the tiled kernel with these block sizes. Default computes the
        proxy block in one piece.

    Returns
    -------
    scores : TokenScores
        One score per key column.

    Raises
    ------
    PolicyConfigError
        If ``causal`` is True and the row positions are missing.
    """
    if causal and row_positions is None:
        raise PolicyConfigError("Causal proxy scoring needs the prompt position of every proxy row")

    if tiles is None:
        s = compute_scores(q_p, k, causal=causal, row_positions=row_positions)
        if counter is not None:
            counter.add(s.rows, s.cols)
        return TokenScores(masked_softmax_rows(s).column_sums(), origin="proxy")

    lse = tiled_logsumexp(q_p, k, causal, tiles, row_positions, counter)
    reduced = reduce_tiled(q_p, k, lse, causal, tiles, row_positions=row_positions, counter=counter)
    return TokenScores(reduced.values, origin="proxy")
