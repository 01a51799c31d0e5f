"""
Memory footprint of the KV cache.
"""

from dataclasses import dataclass

import pandas as pd

GIB = 2**30


@dataclass(frozen=True)
class ModelShape:
    """
    Dimensions of a transformer that determine its KV-cache size.

    Parameters
    ----------
    layers : int
        Number of layers.
    heads : int
        Attention heads per layer.
    head_dim : int
        Dimension of each head.
    bytes_per_elem : int, optional
        Storage size of one cached number. Default is 2 (half precision).
    batch : int, optional
        Number of sequences. Default is 1.
    """

    layers: int
    heads: int
    head_dim: int
    bytes_per_elem: int = 2
    batch: int = 1

    def __post_init__(self):
        for name in ("layers", "heads", "head_dim", "bytes_per_elem", "batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"Model shape {name} must be at least 1")


def kv_bytes(shape, seq_len, budget_frac=1.0):
    r"""
    Size of the key and value caches in bytes.

    .. math:: 2 \cdot l \cdot h \cdot d_h \cdot n \cdot b \cdot s \cdot f

    Parameters
    ----------
    shape : ModelShape
        Model dimensions.
    seq_len : int
        Number of cached tokens per sequence before eviction.
    budget_frac : float, optional
        Fraction of the tokens kept after eviction. Default is 1.

    Returns
    -------
    nbytes : float
        Cache size in bytes.

    Raises
    ------
    ValueError
        If ``seq_len`` is less than one or ``budget_frac`` is outside (0, 1].

    Examples
    --------
    >>> shape = ke.ModelShape(layers=32, heads=32, head_dim=128, bytes_per_elem=2, batch=4)
    >>> ke.kv_bytes(shape, 32768) / ke.GIB
    64.0
    """
    if seq_len < 1:
        raise ValueError(f"Sequence length {seq_len} must be at least 1")
    if not 0.0 < budget_frac <= 1.0:
        raise ValueError(f"Budget fraction {budget_frac} is outside (0, 1]")
    s = shape
    full = 2 * s.layers * s.heads * s.head_dim * seq_len * s.batch * s.bytes_per_elem
    return full * budget_frac


def kv_table(shape, seq_lens, budget_fracs):
    """
    KV-cache size for every sequence length and budget fraction.

    Parameters
    ----------
    shape : ModelShape
        Model dimensions.
    seq_lens : list of int
        Sequence lengths.
    budget_fracs : list of float
        Budget fractions.

    Returns
    -------
    df : pandas.DataFrame
        Columns ``seq_len``, ``budget_frac``, ``kv_bytes``, and ``kv_gib``,
        one row per combination.
    """
    rows = []
    for n in seq_lens:
        for f in budget_fracs:
            b = kv_bytes(shape, n, f)
            rows.append((n, f, b, b / GIB))
    return pd.DataFrame(rows, columns=["seq_len", "budget_frac", "kv_bytes", "kv_gib"])
