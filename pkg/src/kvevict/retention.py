"""
Probability that a token survives head-wise random eviction.

If each head keeps a token independently with probability ``C``, the token is
lost from a layer only when every one of its ``h`` heads drops it.
"""

from typing import NamedTuple

from scipy import stats

from .rng import MONTE_CARLO_STREAM, keyed_generator


class Retention(NamedTuple):
    """
    Retention probabilities within one layer and across all layers.
    """

    per_layer: float
    across_layers: float


class MonteCarloRetention(NamedTuple):
    """
    Simulated retention frequencies with their binomial standard errors.
    """

    per_layer: float
    across_layers: float
    per_layer_sigma: float
    across_layers_sigma: float
    trials: int


def _check(c, heads, layers):
    if not 0.0 < c <= 1.0:
        raise ValueError(f"Retention fraction {c} is outside (0, 1]")
    if heads < 1 or layers < 1:
        raise ValueError("Heads and layers must be at least 1")


def retention_probability(c, heads, layers=1):
    r"""
    Probability that a token is kept by at least one head.

    .. math::

        P_{layer} = 1 - (1 - C)^h \qquad P_{model} = 1 - (1 - C)^{h l}

    Parameters
    ----------
    c : float
        Fraction of tokens each head keeps.
    heads : int
        Attention heads per layer.
    layers : int, optional
        Number of layers. Default is 1.

    Returns
    -------
    retention : Retention
        Probabilities for one layer and for the whole model.

    Examples
    --------
    >>> r = ke.retention_probability(0.2, 32)
    >>> round(r.per_layer, 5)
    0.99921
    """
    _check(c, heads, layers)
    miss = (1.0 - c) ** heads
    return Retention(1.0 - miss, 1.0 - miss**layers)


def monte_carlo_retention(c, heads, layers=1, trials=100_000, seed=0):
    """
    Simulate independent per-head retention of one tracked token.

    Each trial draws a keep or drop decision for every head of every layer.
    The per-layer frequency is counted over all (trial, layer) pairs and the
    across-layers frequency over trials. Standard errors come from the
    binomial distribution at the closed-form probabilities.

    Parameters
    ----------
    c : float
        Fraction of tokens each head keeps.
    heads : int
        Attention heads per layer.
    layers : int, optional
        Number of layers. Default is 1.
    trials : int, optional
        Number of simulated tokens. Default is 100 000.
    seed : int, optional
        Seed of the simulation. Default is 0.

    Returns
    -------
    estimate : MonteCarloRetention
        Empirical frequencies and standard errors.
    """
    _check(c, heads, layers)
    if trials < 1:
        raise ValueError(f"Number of trials {trials} must be at least 1")

    rng = keyed_generator(seed, MONTE_CARLO_STREAM)
    chunk = max(1, 2**20 // (heads * layers))
    layer_hits = 0
    model_hits = 0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        kept = rng.random((n, layers, heads)) < c
        in_layer = kept.any(axis=2)
        layer_hits += int(in_layer.sum())
        model_hits += int(in_layer.any(axis=1).sum())
        done += n

    exact = retention_probability(c, heads, layers)
    n_layer = trials * layers
    sigma_layer = stats.binom(n_layer, exact.per_layer).std() / n_layer
    sigma_model = stats.binom(trials, exact.across_layers).std() / trials
    return MonteCarloRetention(
        layer_hits / n_layer, model_hits / trials, float(sigma_layer), float(sigma_model), trials
    )

