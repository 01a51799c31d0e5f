"""
Cache budget configuration and its conversion to token counts.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from .errors import BudgetError

# Absorbs representation error such as 0.29 * 100 = 28.999999999999996
_EPS = 1e-9


def _floor(x):
    return int(math.floor(x + _EPS))


@dataclass(frozen=True)
class BudgetCounts:
    """
    Token counts derived from a budget for a given prompt length.

    Attributes
    ----------
    total : int
        Cache budget C.
    protect : int
        Protected proxy tokens that are always kept.
    proxy_evict : int
        Tokens chosen by proxy-score top-k (C_p).
    random : int
        Tokens sampled at random (C_r).
    score_proxy : int
        Size of the proxy set used for scoring, at least one token.
    """

    total: int
    protect: int
    proxy_evict: int
    random: int
    score_proxy: int


@dataclass(frozen=True)
class BudgetConfig:
    """
    Cache budget split into protected, proxy-scored, and random shares.

    All shares are fractions of the prompt length. The protected, proxy
    eviction, and random shares add up to the total budget; the no-protect
    proxy share only sizes the proxy set used for scoring.

    Parameters
    ----------
    total_frac : float
        Total cache budget as a fraction of the prompt length.
    protect_proxy_frac : float, optional
        Trailing proxy tokens that are always retained. Default is 0.
    proxy_evict_frac : float, optional
        Share retained by proxy-score top-k. Default is the total minus the
        protected and random shares.
    random_frac : float, optional
        Share retained by random sampling. Default is 0.
    noprotect_proxy_frac : float, optional
        Proxy tokens whose rows score the prompt; they are not retained unless
        another share keeps them. Default is 0, which scores with the final token.
    interval_m : int, optional
        Generation-phase eviction period in tokens. Default is 8.

    Raises
    ------
    BudgetError
        If a fraction is outside [0, 1], the shares do not add up to the
        total within 1e-9, or the interval is less than one.

    Examples
    --------
    >>> b = ke.BudgetConfig(0.2, 0.02, 0.06, 0.12, 0.18)
    >>> b.counts(100)
    BudgetCounts(total=20, protect=2, proxy_evict=6, random=12, score_proxy=18)
    """

    total_frac: float
    protect_proxy_frac: float = 0.0
    proxy_evict_frac: float = None
    random_frac: float = 0.0
    noprotect_proxy_frac: float = 0.0
    interval_m: int = 8

    def __post_init__(self):
        if self.proxy_evict_frac is None:
            rest = self.total_frac - self.protect_proxy_frac - self.random_frac
            object.__setattr__(self, "proxy_evict_frac", max(rest, 0.0))

        fracs = {
            "total_frac": self.total_frac,
            "protect_proxy_frac": self.protect_proxy_frac,
            "proxy_evict_frac": self.proxy_evict_frac,
            "random_frac": self.random_frac,
            "noprotect_proxy_frac": self.noprotect_proxy_frac,
        }
        for name, value in fracs.items():
            if not 0.0 <= value <= 1.0:
                raise BudgetError(f"{name} = {value} is outside [0, 1]")

        parts = self.protect_proxy_frac + self.proxy_evict_frac + self.random_frac
        if abs(parts - self.total_frac) > _EPS:
            msg = (
                f"Protected ({self.protect_proxy_frac}), proxy eviction ({self.proxy_evict_frac})"
                f" and random ({self.random_frac}) shares must sum to {self.total_frac}"
            )
            raise BudgetError(msg)

        if self.interval_m < 1:
            raise BudgetError(f"Eviction interval {self.interval_m} must be at least 1")

    def total_count(self, p):
        """
        Cache budget C in tokens for a prompt of ``p`` tokens.

        The count is ``total_frac * p`` rounded half up, at least one token
        and at most ``p``. A budget that rounds to zero still keeps one token.

        Examples
        --------
        >>> ke.BudgetConfig(0.1).total_count(4)
        1
        >>> ke.BudgetConfig(0.2).total_count(256)
        51
        """
        if p < 1:
            raise BudgetError(f"Prompt length {p} must be at least 1")
        return min(p, max(1, _floor(self.total_frac * p + 0.5)))

    def counts(self, p):
        """
        Convert the fractions to token counts for a prompt of ``p`` tokens.

        Each share is floored and the remainder goes to the random share, so
        the three retained shares add up to :meth:`total_count` exactly.

        Parameters
        ----------
        p : int
            Prompt length in tokens.

        Returns
        -------
        counts : BudgetCounts
            Token counts for each share.
        """
        total = self.total_count(p)
        protect = min(_floor(self.protect_proxy_frac * p), total)
        proxy_evict = min(_floor(self.proxy_evict_frac * p), total - protect)
        random = total - protect - proxy_evict
        score_proxy = min(p, max(1, _floor(self.noprotect_proxy_frac * p)))
        return BudgetCounts(total, protect, proxy_evict, random, score_proxy)

    def to_dict(self):
        """
        Flat key-value form used by the run config.
        """
        return {
            "total_frac": self.total_frac,
            "protect_proxy_frac": self.protect_proxy_frac,
            "proxy_evict_frac": self.proxy_evict_frac,
            "random_frac": self.random_frac,
            "noprotect_proxy_frac": self.noprotect_proxy_frac,
            "interval_m": self.interval_m,
        }


def budget_preset(name, interval_m=8):
    """
    Budget allocation from the preset table.

    The table ships with the package as ``data/budget-presets.csv`` and holds
    the 10 %, 20 %, and 30 % allocations of the hybrid policy.

    Parameters
    ----------
    name : str or float
        Budget such as ``"20%"``, ``"20"``, ``20``, or ``0.2``.
    interval_m : int, optional
        Generation-phase eviction period. Default is 8.

    Returns
    -------
    budget : BudgetConfig
        Budget with the preset fractions.

    Raises
    ------
    BudgetError
        If the preset is not in the table.

    Examples
    --------
    >>> ke.budget_preset("10%").random_frac
    0.07
    """
    value = float(str(name).rstrip("%"))
    if value <= 1.0:
        value *= 100

    path = Path(__file__).parent.absolute()
    df = pd.read_csv(path / "data/budget-presets.csv")
    row = df[(df["Budget"] - value).abs() < 1e-6]
    if len(row) == 0:
        available = ", ".join(f"{b:g}%" for b in df["Budget"])
        raise BudgetError(f"Budget preset {name} not found, choose one of {available}")

    return BudgetConfig(
        total_frac=float(row["Budget"].iloc[0]) / 100,
        protect_proxy_frac=float(row["ProtectProxy"].iloc[0]) / 100,
        proxy_evict_frac=float(row["ProxyEviction"].iloc[0]) / 100,
        random_frac=float(row["RandomEviction"].iloc[0]) / 100,
        noprotect_proxy_frac=float(row["NoprotectProxy"].iloc[0]) / 100,
        interval_m=interval_m,
    )
