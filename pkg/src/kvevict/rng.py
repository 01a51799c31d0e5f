"""
Counter-based random streams keyed on attention-head coordinates.
"""

from dataclasses import dataclass, replace

import numpy as np

# Stream tags keep workload draws and policy draws apart for the same head
WORKLOAD_STREAM = 0
POLICY_STREAM = 1
MONTE_CARLO_STREAM = 2


def keyed_generator(seed, *coords):
    """
    Create a Philox generator keyed on a seed and integer coordinates.

    The same seed and coordinates always give the same generator, no matter
    how many other generators were created before it.

    Parameters
    ----------
    seed : int
        Master seed, any non-negative 64-bit integer.
    *coords : int
        Non-negative integer coordinates such as stream tag, layer, and head.

    Returns
    -------
    rng : numpy.random.Generator
        Generator backed by the counter-based Philox bit generator.

    Examples
    --------
    >>> a = ke.keyed_generator(7, 0, 1, 2).standard_normal(3)
    >>> b = ke.keyed_generator(7, 0, 1, 2).standard_normal(3)
    >>> bool((a == b).all())
    True
    """
    if seed < 0 or any(c < 0 for c in coords):
        raise ValueError("Seed and coordinates must be non-negative integers")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(c) for c in coords))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class HeadRngStream:
    """
    Random stream for the eviction decisions of one attention head.

    Streams are plain values. Two streams with equal fields produce identical
    draws, and advancing a stream returns a new value instead of mutating.

    Parameters
    ----------
    master_seed : int
        Seed of the whole run.
    layer : int
        Layer index.
    head : int
        Head index.
    step : int, optional
        Draw counter, incremented once per eviction call. Default is 0.

    Examples
    --------
    >>> s = ke.HeadRngStream(3, layer=0, head=1)
    >>> s.advance().step
    1
    """

    master_seed: int
    layer: int = 0
    head: int = 0
    step: int = 0

    def __post_init__(self):
        if min(self.master_seed, self.layer, self.head, self.step) < 0:
            raise ValueError("Seed, layer, head, and step must be non-negative")

    def generator(self):
        """
        Generator for the current step of this stream.
        """
        return keyed_generator(self.master_seed, POLICY_STREAM, self.layer, self.head, self.step)

    def advance(self):
        """
        Stream for the next step.
        """
        return replace(self, step=self.step + 1)

    def at(self, step):
        """
        Stream positioned at a given step.
        """
        return replace(self, step=step)
