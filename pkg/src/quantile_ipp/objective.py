"""Empirical quantiles, their standard errors, and the planning objective."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .field import Cell, GridSpec, raster_points
from .gp import BeliefModel

EPS = 1e-6
_SQRT_2PI = math.sqrt(2.0 * math.pi)

QUARTILES = (0.25, 0.5, 0.75)
EXTREMA = (0.9, 0.95, 0.99)


@dataclass(frozen=True)
class QuantileSet:
    qs: tuple[float, ...]

    def __post_init__(self):
        qs = tuple(float(q) for q in self.qs)
        if not qs:
            raise DomainError("quantile set must be nonempty")
        if any(not (0.0 < q < 1.0) for q in qs):
            raise DomainError(f"quantile levels must lie in (0, 1): {qs}")
        if any(b <= a for a, b in zip(qs, qs[1:])):
            raise DomainError(f"quantile levels must be strictly increasing: {qs}")
        object.__setattr__(self, "qs", qs)

    def __len__(self):
        return len(self.qs)

    def __iter__(self):
        return iter(self.qs)

    @classmethod
    def named(cls, name: str) -> "QuantileSet":
        try:
            return cls({"quartiles": QUARTILES, "extrema": EXTREMA}[name])
        except KeyError:
            raise DomainError(f"unknown quantile set {name!r}") from None


@dataclass(frozen=True)
class QuantileEstimate:
    values: tuple[float, ...]
    source: str = "aggregate"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.source not in ("model", "aggregate", "truth"):
            raise DomainError(f"unknown estimate source {self.source!r}")

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


def _levels(q) -> np.ndarray:
    if isinstance(q, QuantileSet):
        return np.array(q.qs)
    return np.array(QuantileSet(tuple(q)).qs)


def _interp_sorted(xs: np.ndarray, qs: np.ndarray) -> np.ndarray:
    n = len(xs)
    h = qs * (n - 1)
    lo = np.floor(h).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    a, b = xs[lo], xs[hi]
    return a + (h - lo) * (b - a)


def quantile_values(values, qs) -> np.ndarray:
    """Linear-interpolation quantiles (h = q (n - 1), zero based) as an array."""
    x = np.asarray(values, dtype=float).ravel()
    if len(x) == 0:
        raise DomainError("quantiles of an empty sample")
    return _interp_sorted(np.sort(x), np.asarray(qs, dtype=float))


def quantiles(values, q, source: str = "aggregate") -> QuantileEstimate:
    out = quantile_values(values, _levels(q))
    # fp rounding in a + t(b - a) can break monotonicity by an ulp across levels
    return QuantileEstimate(tuple(np.maximum.accumulate(out)), source)


def _silverman(n: int, sd: float, iqr: float) -> float:
    spread = min(sd, iqr / 1.34)
    if spread <= 0:
        spread = max(sd, iqr / 1.34)
    return max(0.9 * spread * n ** -0.2, EPS)


def silverman_bandwidth(x) -> float:
    """0.9 min(sd, IQR / 1.34) n^(-1/5), floored at EPS."""
    x = np.asarray(x, dtype=float).ravel()
    sd = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
    q1, q3 = quantile_values(x, (0.25, 0.75))
    return _silverman(len(x), sd, q3 - q1)


_KDE_CUTOFF = 10.0  # bandwidths; dropped terms are below exp(-50) each


def _se_from_sample(x: np.ndarray, qs: np.ndarray, n_eff: float) -> np.ndarray:
    n = len(x)
    xs = np.sort(x)
    v = _interp_sorted(xs, np.concatenate([qs, (0.25, 0.75)]))
    if n > 1:
        centered = xs - xs.mean()
        sd = math.sqrt(float(centered @ centered) / (n - 1))
    else:
        sd = 0.0
    h = _silverman(n, sd, v[-1] - v[-2])
    vq = v[:-2]
    lo = np.searchsorted(xs, vq - _KDE_CUTOFF * h, side="left")
    hi = np.searchsorted(xs, vq + _KDE_CUTOFF * h, side="right")
    dens = np.empty(len(vq))
    scale = -0.5 / (h * h)
    for i, (a, b) in enumerate(zip(lo, hi)):
        z = xs[a:b] - vq[i]
        dens[i] = np.exp(scale * (z * z)).sum()
    dens /= n * h * _SQRT_2PI
    return np.sqrt(qs * (1.0 - qs) / n_eff) / np.maximum(dens, EPS)


def quantile_se(values, q, n_eff: float) -> np.ndarray:
    """Asymptotic standard error of each empirical quantile.

    ``sqrt(q (1 - q) / n_eff) / f(v_q)`` where ``f`` is a Gaussian KDE of
    ``values`` (Silverman bandwidth) and the density is floored at ``EPS``.
    """
    x = np.asarray(values, dtype=float).ravel()
    if len(x) == 0:
        raise DomainError("standard error of an empty sample")
    if n_eff < 1:
        raise DomainError(f"n_eff must be >= 1, got {n_eff}")
    return _se_from_sample(x, _levels(q), float(n_eff))


def se_gap(se_before: np.ndarray, se_after: np.ndarray, n_levels: int) -> float:
    return float(np.abs(se_before - se_after).sum()) / n_levels


def objective_score(belief: BeliefModel, candidate_cells: Cell | Sequence[Cell], q, c: float,
                    grid: GridSpec, lattice: np.ndarray | None = None, values=None,
                    se_basis: str = "lattice") -> float:
    """Reward for imaging ``candidate_cells`` next.

    ``||se(mu_before) - se(mu_after)||_1 / |Q| + c * sum(var_before(footprint))``,
    with ``mu`` the posterior mean over ``lattice`` (the measurement lattice by
    default) before and after conditioning a copy of ``belief`` on the footprint.
    ``values`` are the hallucinated readings; the posterior mean is used when
    omitted. ``se_basis`` picks the sample size behind the standard error:
    ``"lattice"`` (|lattice|) or ``"measurements"`` (training-set size).
    """
    if isinstance(candidate_cells, tuple) and len(candidate_cells) == 2 and \
            all(isinstance(v, (int, np.integer)) for v in candidate_cells):
        candidate_cells = [candidate_cells]
    levels = _levels(q)
    pts = raster_points(list(candidate_cells), grid)
    lattice = grid.lattice_points() if lattice is None else np.asarray(lattice, dtype=float)
    mean_fp, var_fp = belief.predict(pts)
    ys = mean_fp if values is None else np.asarray(values, dtype=float).ravel()
    after = belief.update(pts, ys)
    if se_basis == "lattice":
        n_before = n_after = len(lattice)
    elif se_basis == "measurements":
        n_before, n_after = max(len(belief), 1), max(len(after), 1)
    else:
        raise DomainError(f"unknown se basis {se_basis!r}")
    se_before = quantile_se(belief.predict_mean(lattice), levels, n_before)
    se_after = quantile_se(after.predict_mean(lattice), levels, n_after)
    return se_gap(se_before, se_after, len(levels)) + c * float(var_fp.sum())
