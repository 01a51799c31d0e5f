"""
Deterministic synthetic attention workloads.

Every entry of the query, key, and value matrices is a standard normal draw
from a Philox generator keyed on ``(seed, layer, head)``; the entry at
``(row, col)`` is the draw at counter position ``row * head_dim + col`` of its
matrix. A head can therefore be regenerated alone, in any order, on any
worker, and always gives the same numbers.

Pivotal tokens are planted on reserved channels. Pivot number ``c`` owns
channel ``c``: the channel is cleared on every query and key row, then the
pivot's key gets ``boost * d**0.25`` and every query that should see the pivot
gets ``d**0.25``, so that the scaled logit between them is exactly ``boost``
while all other logits are untouched by the channel.
"""

from dataclasses import dataclass, field

import numpy as np

from .attention import compute_scores
from .rng import WORKLOAD_STREAM, keyed_generator


@dataclass(frozen=True)
class PivotalToken:
    """
    A planted token that later queries attend to strongly.

    Parameters
    ----------
    index : int
        Prompt position of the token.
    boost : float
        Logit added between the token's key and the queries that see it.
    proxy_visible : bool, optional
        If True the question rows at the end of the prompt see the token,
        otherwise only the generation queries do. Default is True.
    """

    index: int
    boost: float
    proxy_visible: bool = True


@dataclass(frozen=True)
class Workload:
    """
    Synthetic multi-layer, multi-head attention trace.

    Parameters
    ----------
    layers : int
        Number of layers.
    heads : int
        Number of attention heads per layer.
    head_dim : int
        Dimension of each query, key, and value vector.
    prompt_len : int
        Number of prompt tokens.
    gen_len : int, optional
        Number of generation steps. Default is 0.
    seed : int, optional
        Master seed. Default is 0.
    pivotal : tuple of PivotalToken, optional
        Planted pivotal tokens. Default is none.
    question_len : int, optional
        Number of trailing prompt rows that see proxy-visible pivots.
        Default is 1 (the last prompt row only).

    Raises
    ------
    ValueError
        If a size is not positive, a pivotal index is outside the prompt, or
        there are more pivotal tokens than channels.

    Examples
    --------
    >>> w = ke.Workload(layers=1, heads=2, head_dim=8, prompt_len=16, seed=3)
    >>> acts = ke.generate_workload(w)
    >>> acts[0, 1].queries.shape
    (16, 8)
    """

    layers: int
    heads: int
    head_dim: int
    prompt_len: int
    gen_len: int = 0
    seed: int = 0
    pivotal: tuple = field(default_factory=tuple)
    question_len: int = 1

    def __post_init__(self):
        for name in ("layers", "heads", "head_dim", "prompt_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"Workload {name} must be at least 1")
        if self.gen_len < 0:
            raise ValueError("Workload gen_len must be non-negative")
        if self.seed < 0:
            raise ValueError("Workload seed must be non-negative")
        if not 1 <= self.question_len <= self.prompt_len:
            raise ValueError(f"question_len must be in 1..{self.prompt_len}")

        pivots = tuple(p if isinstance(p, PivotalToken) else PivotalToken(*p) for p in self.pivotal)
        object.__setattr__(self, "pivotal", pivots)
        if len(pivots) >= self.head_dim:
            msg = f"At most {self.head_dim - 1} pivotal tokens fit in {self.head_dim} dims"
            raise ValueError(msg)
        for p in pivots:
            if not 0 <= p.index < self.prompt_len:
                raise ValueError(f"Pivotal index {p.index} is outside the prompt")

    def to_dict(self):
        """
        Flat key-value form used by the run config.
        """
        return {
            "layers": self.layers,
            "heads": self.heads,
            "head_dim": self.head_dim,
            "prompt_len": self.prompt_len,
            "gen_len": self.gen_len,
            "seed": self.seed,
            "question_len": self.question_len,
            "pivotal": [[p.index, p.boost, p.proxy_visible] for p in self.pivotal],
        }

    @classmethod
    def from_dict(cls, d):
        """
        Build a workload from the flat key-value form.
        """
        d = dict(d)
        d["pivotal"] = tuple(PivotalToken(int(i), float(b), bool(v)) for i, b, v in
                             (_pivot_triple(x) for x in d.get("pivotal", ())))
        return cls(**d)

    def with_seed(self, seed):
        """
        Copy of the workload with another seed.
        """
        d = self.to_dict()
        d["seed"] = seed
        return Workload.from_dict(d)

    def head(self, layer, head):
        """
        Generate the activations of one attention head.

        Parameters
        ----------
        layer : int
            Layer index.
        head : int
            Head index.

        Returns
        -------
        acts : HeadActivations
            Prompt and generation-step vectors for the head.
        """
        if not (0 <= layer < self.layers and 0 <= head < self.heads):
            raise IndexError(f"Head ({layer}, {head}) is outside the workload")

        p, t, d = self.prompt_len, self.gen_len, self.head_dim
        rng = keyed_generator(self.seed, WORKLOAD_STREAM, layer, head)
        q = rng.standard_normal((p + t, d))
        k = rng.standard_normal((p + t, d))
        v = rng.standard_normal((p + t, d))

        scale = d**0.25
        for c, pivot in enumerate(self.pivotal):
            q[:, c] = 0.0
            k[:, c] = 0.0
            k[pivot.index, c] = pivot.boost * scale
            if pivot.proxy_visible:
                q[p - self.question_len:p, c] = scale
            q[p:, c] = scale

        return HeadActivations(
            layer=layer,
            head=head,
            queries=_readonly(q[:p]),
            keys=_readonly(k[:p]),
            values=_readonly(v[:p]),
            gen_queries=_readonly(q[p:]),
            gen_keys=_readonly(k[p:]),
            gen_values=_readonly(v[p:]),
        )


def _pivot_triple(x):
    """
    Accept ``[index, boost]`` or ``[index, boost, visible]``.
    """
    x = list(x)
    if len(x) == 2:
        x.append(True)
    if len(x) != 3:
        raise ValueError(f"Pivotal entry must be [index, boost, visible], got {x}")
    return x


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HeadActivations:
    """
    Query, key, and value vectors of one attention head.

    Attributes
    ----------
    layer, head : int
        Head coordinates.
    queries, keys, values : ndarray
        Prompt vectors, ``prompt_len x head_dim`` each.
    gen_queries, gen_keys, gen_values : ndarray
        Generation-step vectors, ``gen_len x head_dim`` each.
    """

    layer: int
    head: int
    queries: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    gen_queries: np.ndarray
    gen_keys: np.ndarray
    gen_values: np.ndarray

    def prompt_scores(self):
        """
        Causal score matrix of the prompt.
        """
        return compute_scores(self.queries, self.keys, causal=True)


@dataclass(frozen=True)
class StepRows:
    """
    New query, key, and value rows for one generation step.

    Attributes
    ----------
    step : int
        Generation time step, starting at 1.
    position : int
        Token position of the new token.
    rows : dict
        Maps ``(layer, head)`` to a ``(query, key, value)`` tuple of vectors.
    """

    step: int
    position: int
    rows: dict


class Activations:
    """
    Activations of every head of a workload.

    Supports ``acts[layer, head]`` lookup and iteration over coordinates.
    """

    def __init__(self, workload, heads):
        self.workload = workload
        self._heads = heads

    def __getitem__(self, coord):
        return self._heads[coord]

    def __iter__(self):
        return iter(self._heads)

    def __len__(self):
        return len(self._heads)

    def items(self):
        """
        Pairs of head coordinates and activations.
        """
        return self._heads.items()

    def step_rows(self, t):
        """
        Rows appended to every head's cache at generation step ``t``.

        Parameters
        ----------
        t : int
            Step number from 1 to ``gen_len``.

        Returns
        -------
        rows : StepRows
            The new rows keyed by head coordinates.
        """
        w = self.workload
        if not 1 <= t <= w.gen_len:
            raise IndexError(f"Step {t} is outside 1..{w.gen_len}")
        rows = {
            coord: (a.gen_queries[t - 1], a.gen_keys[t - 1], a.gen_values[t - 1])
            for coord, a in self._heads.items()
        }
        return StepRows(step=t, position=w.prompt_len + t - 1, rows=rows)


def generate_workload(w):
    """
    Generate the activations of every head of a workload.

    Parameters
    ----------
    w : Workload
        Workload description.

    Returns
    -------
    acts : Activations
        Activations keyed by ``(layer, head)``; generation rows are available
        through :meth:`Activations.step_rows`.

    Examples
    --------
    >>> w = ke.Workload(layers=2, heads=2, head_dim=4, prompt_len=8, gen_len=2)
    >>> acts = ke.generate_workload(w)
    >>> len(acts)
    4
    >>> acts.step_rows(1).position
    8
    """
    heads = {
        (layer, head): w.head(layer, head)
        for layer in range(w.layers)
        for head in range(w.heads)
    }
    return Activations(w, heads)
