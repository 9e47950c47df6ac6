"""RMSE of quantile estimates and the Wilcoxon signed-rank test."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import DegenerateSampleError, DomainError

EXACT_MAX = 12
ALTERNATIVES = ("less", "greater", "two_sided")


@dataclass(frozen=True)
class PairedSample:
    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self):
        xs = tuple(float(v) for v in self.xs)
        ys = tuple(float(v) for v in self.ys)
        if len(xs) != len(ys) or not xs:
            raise DomainError(f"paired sample needs equal nonempty lengths, got {len(xs)} and {len(ys)}")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def differences(self) -> np.ndarray:
        return np.array(self.xs) - np.array(self.ys)


def rmse(truth, estimate) -> float:
    t = np.asarray(getattr(truth, "values", truth), dtype=float)
    e = np.asarray(getattr(estimate, "values", estimate), dtype=float)
    if t.shape != e.shape:
        raise DomainError(f"length mismatch: {t.shape} vs {e.shape}")
    return float(np.sqrt(np.mean((t - e) ** 2)))


def _signed_ranks(sample: PairedSample) -> tuple[np.ndarray, np.ndarray]:
    d = sample.differences()
    d = d[d != 0]
    if len(d) == 0:
        raise DegenerateSampleError("all paired differences are zero")
    return rankdata(np.abs(d)), d > 0


def exact_null(ranks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Support and probabilities of W over all 2^m sign assignments of ``ranks``."""
    m = len(ranks)
    signs = (np.arange(2 ** m)[:, None] >> np.arange(m)) & 1
    w = signs @ ranks
    support, counts = np.unique(w, return_counts=True)
    return support, counts / 2.0 ** m


def wilcoxon_signed_rank(sample: PairedSample, alternative: str = "two_sided") -> tuple[float, float]:
    """Wilcoxon signed-rank test on ``xs - ys``.

    Zero differences are dropped and tied magnitudes get midranks. ``W`` is the
    sum of ranks of positive differences. ``greater`` tests whether ``xs``
    tends to exceed ``ys``. The p-value comes from enumerating all sign
    assignments when at most ``EXACT_MAX`` nonzero differences remain, and from
    the normal approximation with tie and continuity corrections otherwise.

    Returns
    -------
    (W, p_value)
    """
    if alternative not in ALTERNATIVES:
        raise DomainError(f"unknown alternative {alternative!r}")
    ranks, positive = _signed_ranks(sample)
    w = float(ranks[positive].sum())
    m = len(ranks)
    if m <= EXACT_MAX:
        support, probs = exact_null(ranks)
        tol = 1e-9
        p_ge = float(probs[support >= w - tol].sum())
        p_le = float(probs[support <= w + tol].sum())
    else:
        mean = m * (m + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = m * (m + 1) * (2 * m + 1) / 24.0 - float((tie_counts ** 3 - tie_counts).sum()) / 48.0
        sd = math.sqrt(var)
        p_ge = float(ndtr(-(w - mean - 0.5) / sd))
        p_le = float(ndtr((w - mean + 0.5) / sd))
    if alternative == "greater":
        p = p_ge
    elif alternative == "less":
        p = p_le
    else:
        p = min(1.0, 2.0 * min(p_ge, p_le))
    return w, min(p, 1.0)


def significance_band(p: float, star: float = 0.05) -> str:
    if p <= 1e-3:
        return "***"
    if p <= star:
        return "*"
    return "ns"


def five_number(values: Sequence[float]) -> tuple[float, float, float, float, float]:
    from .objective import quantile_values

    x = np.asarray(values, dtype=float)
    if len(x) == 0:
        raise DomainError("five-number summary of an empty sample")
    q1, med, q3 = quantile_values(x, (0.25, 0.5, 0.75))
    return float(x.min()), float(q1), float(med), float(q3), float(x.max())
