"""
Attention scores, masked softmax, and logsumexp.
"""

import io
import numpy as np
import pandas as pd

from .errors import DegenerateRowError, ShapeError


def _frozen(array, dtype=np.float64):
    """
    Return a read-only copy of an array.
    """
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _as_matrix(x, name):
    """
    Convert input to a two-dimensional float array or raise a shape error.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


class ScoreMatrix:
    """
    Raw pre-softmax attention logits for one attention head.

    Masked entries are tracked with an explicit boolean mask so that no
    infinite value ever enters the arithmetic.

    Parameters
    ----------
    data : array_like
        Logits as a ``q x k`` matrix.
    causal : bool, optional
        Apply the causal mask where key column ``j`` is visible to query row
        ``i`` only when ``j <= row_positions[i]``. Default is False.
    row_positions : array_like of int, optional
        Token position of each query row. Default places the rows at the end
        of the key sequence, so a square causal matrix masks ``col > row``.

    Attributes
    ----------
    data : ndarray
        Read-only ``q x k`` logits.
    causal : bool
        Whether the causal mask applies.
    row_positions : ndarray
        Token position of each query row.
    mask : ndarray
        Read-only boolean matrix, True where the entry is visible.

    Raises
    ------
    ShapeError
        If the matrix is empty or the row positions do not match the rows.
    ValueError
        If a visible entry is not finite.

    Examples
    --------
    >>> s = ke.ScoreMatrix([[1.0, 2.0], [3.0, 4.0]], causal=True)
    >>> s.mask
    array([[ True, False],
           [ True,  True]])
    """

    def __init__(self, data, causal=False, row_positions=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"Score matrix must be non-empty 2-D, got shape {arr.shape}")

        q, k = arr.shape
        if row_positions is None:
            row_positions = np.arange(q) + max(k - q, 0)
        row_positions = np.asarray(row_positions, dtype=np.int64)
        if row_positions.shape != (q,):
            raise ShapeError(f"Expected {q} row positions, got {row_positions.shape[0]}")

        if causal:
            mask = np.arange(k)[np.newaxis, :] <= row_positions[:, np.newaxis]
        else:
            mask = np.ones((q, k), dtype=bool)

        if not np.all(np.isfinite(arr[mask])):
            raise ValueError("Unmasked score entries must be finite")

        self.data = _frozen(arr)
        self.causal = bool(causal)
        self.row_positions = _frozen(row_positions, dtype=np.int64)
        self.mask = _frozen(mask, dtype=bool)

    def __repr__(self):
        return f"ScoreMatrix(rows={self.rows}, cols={self.cols}, causal={self.causal})"

    @property
    def rows(self):
        """
        Number of query rows.
        """
        return self.data.shape[0]

    @property
    def cols(self):
        """
        Number of key columns.
        """
        return self.data.shape[1]

    def take_rows(self, indices):
        """
        Return a new score matrix holding only the given rows.

        Row positions travel with the rows so the causal mask is unchanged.
        """
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0 or indices.min() < 0 or indices.max() >= self.rows:
            raise ShapeError(f"Row indices out of range for {self.rows} rows")
        return ScoreMatrix(
            self.data[indices], causal=self.causal, row_positions=self.row_positions[indices]
        )

    def to_csv(self, path):
        """
        Write the matrix as CSV.

        The first line is the header ``rows,cols,causal``, the second line
        holds those values, and the remaining lines are the row-major logits.
        Masked entries are written as they are stored.
        """
        header = pd.DataFrame(
            {"rows": [self.rows], "cols": [self.cols], "causal": [int(self.causal)]}
        )
        with open(path, "w", newline="") as f:
            header.to_csv(f, index=False)
            pd.DataFrame(self.data).to_csv(f, header=False, index=False, float_format="%.17g")

    @classmethod
    def read_csv(cls, path):
        """
        Read a matrix written by :meth:`to_csv`.
        """
        with open(path) as f:
            text = f.read()
        lines = text.splitlines()
        header = pd.read_csv(io.StringIO("\n".join(lines[:2])))
        q = int(header["rows"].iloc[0])
        k = int(header["cols"].iloc[0])
        causal = bool(header["causal"].iloc[0])
        data = pd.read_csv(io.StringIO("\n".join(lines[2:])), header=None).to_numpy()
        if data.shape != (q, k):
            raise ShapeError(f"CSV declares {q}x{k} but holds {data.shape[0]}x{data.shape[1]}")
        return cls(data, causal=causal)


class ProbMatrix:
    """
    Row-stochastic attention probabilities.

    Parameters
    ----------
    data : array_like
        Probabilities as a ``q x k`` matrix.
    mask : array_like of bool
        Visible entries; masked entries must be exactly zero.

    Attributes
    ----------
    data : ndarray
        Read-only probabilities.
    mask : ndarray
        Read-only visibility mask.

    Raises
    ------
    ValueError
        If a row does not sum to one within 1e-9, an entry lies outside
        [0, 1], or a masked entry is not zero.
    """

    def __init__(self, data, mask):
        data = np.asarray(data, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if data.shape != mask.shape:
            raise ShapeError(f"Mask shape {mask.shape} does not match data {data.shape}")
        if np.any(data < 0) or np.any(data > 1):
            raise ValueError("Probabilities must lie in [0, 1]")
        if np.any(data[~mask] != 0):
            raise ValueError("Masked probabilities must be exactly 0")
        if not np.allclose(data.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("Each probability row must sum to 1")
        self.data = _frozen(data)
        self.mask = _frozen(mask, dtype=bool)

    def __repr__(self):
        return f"ProbMatrix(rows={self.data.shape[0]}, cols={self.data.shape[1]})"

    def column_sums(self):
        """
        Sum of the probabilities in each column.
        """
        return self.data.sum(axis=0)


def compute_scores(q, k, causal=False, row_positions=None):
    r"""
    Scaled dot-product attention logits.

    .. math:: A_{ij} = \frac{Q_i \cdot K_j}{\sqrt{d}}

    Parameters
    ----------
    q : array_like
        Query rows as a ``q x d`` matrix.
    k : array_like
        Key rows as a ``k x d`` matrix.
    causal : bool, optional
        Record causal masking on the result. Default is False.
    row_positions : array_like of int, optional
        Token position of each query row, see :class:`ScoreMatrix`.

    Returns
    -------
    scores : ScoreMatrix
        Logits for every query and key pair.

    Raises
    ------
    ShapeError
        If the query and key dimensions differ.

    Examples
    --------
    >>> ke.compute_scores([[1, 0]], [[1, 0], [0, 1]]).data
    array([[0.70710678, 0.        ]])
    """
    qm = _as_matrix(q, "Q")
    km = _as_matrix(k, "K")
    if qm.shape[1] != km.shape[1]:
        raise ShapeError(f"Q has dimension {qm.shape[1]} but K has dimension {km.shape[1]}")
    d = qm.shape[1]
    data = (qm @ km.T) / np.sqrt(d)
    return ScoreMatrix(data, causal=causal, row_positions=row_positions)


def _row_max(s):
    """
    Maximum visible logit of each row.
    """
    empty = ~s.mask.any(axis=1)
    if np.any(empty):
        row = int(np.flatnonzero(empty)[0])
        raise DegenerateRowError(f"Row {row} has no unmasked entry")
    return np.max(s.data, axis=1, where=s.mask, initial=-np.inf)


def masked_softmax_rows(s):
    """
    Numerically stable softmax of each row over the visible entries.

    Parameters
    ----------
    s : ScoreMatrix
        Attention logits.

    Returns
    -------
    probs : ProbMatrix
        Row-wise softmax; masked entries are exactly zero.

    Raises
    ------
    DegenerateRowError
        If a row has no visible entry.

    Examples
    --------
    >>> ke.masked_softmax_rows(ke.ScoreMatrix([[0.0, 0.0]])).data
    array([[0.5, 0.5]])
    """
    m = _row_max(s)
    e = np.zeros_like(s.data)
    np.exp(s.data - m[:, np.newaxis], out=e, where=s.mask)
    total = e.sum(axis=1)
    return ProbMatrix(e / total[:, np.newaxis], s.mask)


def logsumexp_rows(s):
    r"""
    Log of the summed exponentials of each row over the visible entries.

    .. math:: L_i = m_i + \log \sum_j \exp(S_{ij} - m_i)

    where :math:`m_i` is the maximum visible logit of row :math:`i`.

    Parameters
    ----------
    s : ScoreMatrix
        Attention logits.

    Returns
    -------
    lse : ndarray
        One value per row.

    Raises
    ------
    DegenerateRowError
        If a row has no visible entry.

    Examples
    --------
    >>> ke.logsumexp_rows(ke.ScoreMatrix([[0.0, 0.0]]))
    array([0.69314718])
    """
    m = _row_max(s)
    e = np.zeros_like(s.data)
    np.exp(s.data - m[:, np.newaxis], out=e, where=s.mask)
    return m + np.log(e.sum(axis=1))
