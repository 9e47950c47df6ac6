"""Exact Gaussian-process belief with a squared-exponential kernel.

``BeliefModel`` is a value: ``update`` returns a new model that shares nothing
mutable with the old one. The Cholesky factor of ``K + (noise + jitter) I`` is
grown block-wise, so conditioning on ``m`` new points costs O(n^2 m) instead of
a fresh O((n+m)^3) factorization.

``LatticeKernel`` exploits separability of the SE kernel on the regular
measurement lattice: ``K(lattice, P) @ w`` for lattice-located ``P`` is two
small dense products, independent of ``len(P)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DomainError, NumericError
from .field import GridSpec

JITTER = 1e-8
PRIOR_MEAN = 0.5
_CHUNK = 4096


@dataclass(frozen=True)
class KernelParams:
    lengthscale: float = 12.0
    signal_variance: float = 1.0
    noise_variance: float = 0.05 ** 2

    def __post_init__(self):
        if not (self.lengthscale > 0 and self.signal_variance > 0 and self.noise_variance > 0):
            raise DomainError("kernel parameters must be strictly positive")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d2 = (np.subtract.outer(a[:, 0], b[:, 0]) ** 2
              + np.subtract.outer(a[:, 1], b[:, 1]) ** 2)
        return self.signal_variance * np.exp(-0.5 * d2 / self.lengthscale ** 2)


def _as_points(xs) -> np.ndarray:
    pts = np.asarray(xs, dtype=float)
    if pts.size == 0:
        return np.empty((0, 2))
    return pts.reshape(-1, 2)


def _cholesky(mat: np.ndarray, what: str) -> np.ndarray:
    try:
        return linalg.cholesky(mat, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        cond = np.linalg.cond(mat)
        raise NumericError(f"{what} is not positive definite (condition number ~{cond:.3g})") from exc


class BeliefModel:
    """GP posterior over the field conditioned on ``(train_x, train_y)``."""

    def __init__(self, kernel: KernelParams | None = None, prior_mean: float = PRIOR_MEAN,
                 jitter: float = JITTER):
        self.kernel = kernel or KernelParams()
        self.prior_mean = float(prior_mean)
        self.jitter = float(jitter)
        self.train_x = np.empty((0, 2))
        self.train_y = np.empty(0)
        self._chol = np.empty((0, 0))
        self._alpha = np.empty(0)

    def __len__(self):
        return len(self.train_y)

    @property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of the regularized training covariance."""
        return self._chol

    @property
    def alpha(self) -> np.ndarray:
        """``(K + noise I)^-1 (y - prior_mean)``."""
        return self._alpha

    def _diag_noise(self) -> float:
        return self.kernel.noise_variance + self.jitter

    def _replace(self, x, y, chol) -> "BeliefModel":
        new = BeliefModel.__new__(BeliefModel)
        new.kernel, new.prior_mean, new.jitter = self.kernel, self.prior_mean, self.jitter
        new.train_x, new.train_y, new._chol = x, y, chol
        new._alpha = linalg.cho_solve((chol, True), y - self.prior_mean, check_finite=False) \
            if len(y) else np.empty(0)
        return new

    def update(self, xs, ys) -> "BeliefModel":
        xs = _as_points(xs)
        ys = np.asarray(ys, dtype=float).ravel()
        if len(xs) != len(ys):
            raise DomainError(f"{len(xs)} locations but {len(ys)} values")
        if len(ys) == 0:
            return self
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise NumericError("non-finite training data")
        k_new = self.kernel(xs, xs) + self._diag_noise() * np.eye(len(xs))
        n = len(self.train_y)
        if n == 0:
            chol = _cholesky(k_new, "training covariance")
        else:
            cross = linalg.solve_triangular(self._chol, self.kernel(self.train_x, xs),
                                            lower=True, check_finite=False)
            schur = k_new - cross.T @ cross
            l22 = _cholesky(schur, "Schur complement of the training covariance")
            m = len(ys)
            chol = np.zeros((n + m, n + m))
            chol[:n, :n] = self._chol
            chol[n:, :n] = cross.T
            chol[n:, n:] = l22
        return self._replace(np.vstack([self.train_x, xs]), np.concatenate([self.train_y, ys]), chol)

    def predict_mean(self, query) -> np.ndarray:
        q = _as_points(query)
        if len(self.train_y) == 0:
            return np.full(len(q), self.prior_mean)
        out = np.empty(len(q))
        for s in range(0, len(q), _CHUNK):
            out[s:s + _CHUNK] = self.prior_mean + self.kernel(q[s:s + _CHUNK], self.train_x) @ self._alpha
        return out

    def predict(self, query) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent-function variance at ``query``."""
        q = _as_points(query)
        sv = self.kernel.signal_variance
        if len(self.train_y) == 0:
            return np.full(len(q), self.prior_mean), np.full(len(q), sv)
        means = np.empty(len(q))
        var = np.empty(len(q))
        for s in range(0, len(q), _CHUNK):
            ks = self.kernel(q[s:s + _CHUNK], self.train_x)
            means[s:s + _CHUNK] = self.prior_mean + ks @ self._alpha
            v = linalg.solve_triangular(self._chol, ks.T, lower=True, check_finite=False)
            var[s:s + _CHUNK] = sv - np.einsum("ij,ij->j", v, v)
        return means, np.maximum(var, 0.0)

    def posterior_cov(self, a, b=None) -> np.ndarray:
        a = _as_points(a)
        b = a if b is None else _as_points(b)
        kab = self.kernel(a, b)
        if len(self.train_y) == 0:
            return kab
        va = linalg.solve_triangular(self._chol, self.kernel(self.train_x, a), lower=True, check_finite=False)
        vb = va if b is a else linalg.solve_triangular(
            self._chol, self.kernel(self.train_x, b), lower=True, check_finite=False)
        return kab - va.T @ vb

    def dump_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.train_x, self.train_y]), delimiter=",",
                   header="x,y,value", comments="", fmt="%.17g")


def dense_posterior(kernel: KernelParams, x, y, query, prior_mean: float = PRIOR_MEAN,
                    jitter: float = JITTER) -> tuple[np.ndarray, np.ndarray]:
    """Reference posterior from one dense solve; used to check ``BeliefModel``."""
    x, q = _as_points(x), _as_points(query)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        return np.full(len(q), prior_mean), np.full(len(q), kernel.signal_variance)
    kxx = kernel(x, x) + (kernel.noise_variance + jitter) * np.eye(len(x))
    kqx = kernel(q, x)
    sol = np.linalg.solve(kxx, np.column_stack([y - prior_mean, kqx.T]))
    mean = prior_mean + kqx @ sol[:, 0]
    var = kernel.signal_variance - np.einsum("ij,ji->i", kqx, sol[:, 1:])
    return mean, var


class LatticeKernel:
    """Separable SE kernel between the measurement lattice and lattice-located points."""

    def __init__(self, grid: GridSpec, kernel: KernelParams):
        self.grid = grid
        self.kernel = kernel
        xs, ys = grid.lattice_axes()
        ell2 = kernel.lengthscale ** 2
        self.kx = np.exp(-0.5 * np.subtract.outer(xs, xs) ** 2 / ell2)
        self.ky = np.exp(-0.5 * np.subtract.outer(ys, ys) ** 2 / ell2)
        self.shape = grid.lattice_shape
        self.size = self.shape[0] * self.shape[1]

    def apply(self, indices: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """``K(lattice, lattice[indices]) @ weights`` as a flat lattice vector."""
        nx = self.shape[1]
        rows = np.unique(indices // nx)
        cols = np.unique(indices % nx)
        # scatter into the touched sub-block only; the products shrink accordingly
        r_pos = np.searchsorted(rows, indices // nx)
        c_pos = np.searchsorted(cols, indices % nx)
        w = np.bincount(r_pos * len(cols) + c_pos, weights=weights,
                        minlength=len(rows) * len(cols)).reshape(len(rows), len(cols))
        out = (self.ky[:, rows] @ w) @ self.kx[:, cols].T
        return self.kernel.signal_variance * out.ravel()

    def mean(self, model: BeliefModel) -> np.ndarray:
        """Posterior mean over the whole lattice."""
        if len(model) == 0:
            return np.full(self.size, model.prior_mean)
        idx = self.grid.lattice_indices(model.train_x)
        if idx is None or model.kernel != self.kernel:
            return model.predict_mean(self.grid.lattice_points())
        return model.prior_mean + self.apply(idx, model.alpha)
