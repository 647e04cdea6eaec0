import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import binomtest, chi2

logger = logging.getLogger(__name__)

# Below this many discordant pairs the chi-square approximation is not used.
EXACT_THRESHOLD = 25


@dataclass(frozen=True)
class McNemarResult:
    statistic: float
    p_value: float
    n01: int
    n10: int
    method: str  # "exact", "chi2" or "none"

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n01": self.n01,
            "n10": self.n10,
            "method": self.method,
        }


def mcnemar(outcomes_a: Sequence[int], outcomes_b: Sequence[int]) -> McNemarResult:
    """
    Paired significance test on two binary outcome vectors.

    The statistic is always the continuity-corrected chi-square value. Its
    p-value comes from the chi-square(1) upper tail, or from the exact
    two-sided binomial test when there are fewer than 25 discordant pairs.
    """
    a = np.asarray(outcomes_a, dtype=int)
    b = np.asarray(outcomes_b, dtype=int)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"outcome vectors must have equal length, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise ValueError("outcome vectors must be non-empty")
    if not (np.isin(a, (0, 1)).all() and np.isin(b, (0, 1)).all()):
        raise ValueError("outcomes must be binary")

    n01 = int(np.sum((a == 0) & (b == 1)))
    n10 = int(np.sum((a == 1) & (b == 0)))
    discordant = n01 + n10
    if discordant == 0:
        return McNemarResult(0.0, 1.0, n01, n10, "none")

    statistic = (abs(n01 - n10) - 1) ** 2 / discordant
    if discordant < EXACT_THRESHOLD:
        p_value = binomtest(min(n01, n10), discordant, 0.5, alternative="two-sided").pvalue
        method = "exact"
    else:
        p_value = chi2.sf(statistic, 1)
        method = "chi2"
    return McNemarResult(float(statistic), float(min(1.0, p_value)), n01, n10, method)
