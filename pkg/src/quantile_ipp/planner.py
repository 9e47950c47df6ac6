"""Online POMCPOW planning of the next grid move for one robot.

The tree lives in belief space: a node is the robot's GP belief plus the
readings hallucinated along the branch. Observations are joint draws from the
GP predictive distribution of the footprint readings, so the planner never
touches the ground-truth field. Only observations are progressively widened;
the action set (at most four moves) is enumerated.

Two branch evaluators implement the same contract:

* ``LatticeBranches`` (default) keeps the root factorization fixed and
  expresses every branch as a low-rank correction of the root posterior, with
  lattice-wide means computed through the separable kernel. Cost per
  expansion is independent of the lattice size apart from two small products.
* ``DenseBranches`` conditions real ``BeliefModel`` copies. It is the fallback
  when training points are off the lattice and the reference in tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .errors import DomainError, NumericError, PlanningError
from .field import Cell, GridSpec, footprint, footprint_indices
from .gp import BeliefModel, LatticeKernel
from .objective import _levels, _se_from_sample, se_gap


class Move(Enum):
    PLUS_X = (1, 0)
    MINUS_X = (-1, 0)
    PLUS_Y = (0, 1)
    MINUS_Y = (0, -1)

    def apply(self, cell: Cell) -> Cell:
        return cell[0] + self.value[0], cell[1] + self.value[1]


MOVES = tuple(Move)
Region = Optional[Callable[[Cell], bool]]


def legal_actions(position: Cell, grid: GridSpec, region=None) -> list[Move]:
    """Moves that stay on the grid and, if ``region`` is given, inside it.

    ``region`` is any container of cells (or a predicate) describing the
    robot's allowed area.
    """
    if not grid.contains_cell(position):
        raise DomainError(f"position {position} is off the grid")
    inside = region if callable(region) else (region.__contains__ if region is not None else None)
    out = []
    for m in MOVES:
        nxt = m.apply(position)
        if grid.contains_cell(nxt) and (inside is None or inside(nxt)):
            out.append(m)
    return out


@dataclass(frozen=True)
class PlannerConfig:
    rollouts_per_step: int = 100
    max_depth: int = 4
    discount: float = 0.8
    ucb_c: float = 2.0
    k_obs: float = 4.0
    alpha_obs: float = 0.25
    rollout_policy: str = "random"

    def __post_init__(self):
        if self.rollouts_per_step < 1 or self.max_depth < 1:
            raise DomainError("rollouts_per_step and max_depth must be >= 1")
        if not (0.0 < self.discount <= 1.0):
            raise DomainError("discount must lie in (0, 1]")
        if self.rollout_policy not in ("random", "greedy"):
            raise DomainError(f"unknown rollout policy {self.rollout_policy!r}")


@dataclass
class PlanningState:
    position: Cell
    belief: BeliefModel
    steps_remaining: int


# ----------------------------------------------------------------- evaluators

# Thin LAPACK wrappers: the tree calls these hundreds of times per step and the
# scipy.linalg front ends cost more than the 25x25 solves themselves.

def _chol(a: np.ndarray) -> np.ndarray:
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info != 0:
        raise NumericError(f"predictive covariance not positive definite (info={info})")
    return c


def _cho_solve(c: np.ndarray, b: np.ndarray) -> np.ndarray:
    return lapack.dpotrs(c, b, lower=1)[0]


def _tri_solve(c: np.ndarray, b: np.ndarray, trans: int = 0) -> np.ndarray:
    if c.flags.c_contiguous and not c.flags.f_contiguous:
        # c.T is a Fortran-ordered upper factor; avoids an n x n copy inside f2py
        return lapack.dtrtrs(c.T, b, lower=0, trans=1 - trans)[0]
    return lapack.dtrtrs(c, b, lower=1, trans=trans)[0]


def _sample_readings(mean: np.ndarray, pred_chol: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return mean + pred_chol @ rng.standard_normal(len(mean))


class _Branch:
    __slots__ = ("cells", "hidx", "hy", "gh", "s_chol", "mu", "se", "n_meas", "model")


class LatticeBranches:
    """Branch beliefs as low-rank corrections of a fixed root posterior."""

    def __init__(self, root: BeliefModel, grid: GridSpec, q, c: float, se_basis: str = "lattice",
                 lattice_kernel: LatticeKernel | None = None):
        self.grid = grid
        self.root = root
        self.levels = _levels(q)
        self.c = float(c)
        self.se_basis = se_basis
        self.lk = lattice_kernel or LatticeKernel(grid, root.kernel)
        self.points = grid.lattice_points()
        self.diag = root.kernel.noise_variance + root.jitter
        self.x_idx = grid.lattice_indices(root.train_x) if len(root) else np.empty(0, np.intp)
        if self.x_idx is None:
            raise DomainError("root training points are not on the measurement lattice")
        self._g: dict[Cell, np.ndarray] = {}
        self._fidx: dict[Cell, np.ndarray] = {}
        p2 = grid.measurements_per_image
        fp0 = footprint((0, 0), grid)
        self._kff = root.kernel(fp0, fp0)  # translation invariant across cells
        self._eye = np.eye(p2)

    def _n_eff(self, n_meas: int) -> float:
        return float(len(self.points)) if self.se_basis == "lattice" else float(max(n_meas, 1))

    def _footprint_idx(self, cell: Cell) -> np.ndarray:
        idx = self._fidx.get(cell)
        if idx is None:
            idx = self._fidx[cell] = footprint_indices(cell, self.grid)
        return idx

    def _gcol(self, cell: Cell) -> np.ndarray:
        g = self._g.get(cell)
        if g is None:
            if len(self.root):
                kxf = self.root.kernel(self.root.train_x, self.points[self._footprint_idx(cell)])
                g = _tri_solve(self.root.chol, kxf)
            else:
                g = np.empty((0, self.grid.measurements_per_image))
            self._g[cell] = g
        return g

    def root_branch(self) -> _Branch:
        b = _Branch()
        b.cells = ()
        b.hidx = np.empty(0, np.intp)
        b.hy = np.empty(0)
        b.gh = np.empty((len(self.root), 0))
        b.s_chol = np.empty((0, 0))
        if len(self.root):
            b.mu = self.root.prior_mean + self.lk.apply(self.x_idx, self.root.alpha)
        else:
            b.mu = np.full(len(self.points), self.root.prior_mean)
        b.n_meas = len(self.root)
        b.se = _se_from_sample(b.mu, self.levels, self._n_eff(b.n_meas))
        b.model = None
        return b

    def _root_cov_h(self, b: _Branch, cell: Cell) -> np.ndarray:
        """Root posterior covariance between the branch readings and ``cell``'s footprint."""
        k = self.root.kernel(self.points[b.hidx], self.points[self._footprint_idx(cell)])
        if len(self.root):
            k -= b.gh.T @ self._gcol(cell)
        return k

    def footprint_cov(self, b: _Branch, cell: Cell) -> tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
        """Posterior covariance of ``cell``'s footprint under branch ``b``."""
        g = self._gcol(cell)
        cff = self._kff - g.T @ g
        if not b.cells:
            return cff, None, None
        c_hf = self._root_cov_h(b, cell)
        a = _cho_solve(b.s_chol, c_hf)
        return cff - c_hf.T @ a, c_hf, a

    def footprint_variance(self, b: _Branch, cell: Cell) -> np.ndarray:
        return np.maximum(np.diag(self.footprint_cov(b, cell)[0]), 0.0)

    def expand(self, b: _Branch, cell: Cell, rng: np.random.Generator | None = None,
               values=None) -> tuple[_Branch, float]:
        """Condition ``b`` on readings at ``cell``; return the child and its reward."""
        fidx = self._footprint_idx(cell)
        cff, c_hf, a = self.footprint_cov(b, cell)
        var_f = np.maximum(np.diag(cff), 0.0)
        p_chol = _chol(cff + self.diag * self._eye)
        mu_f = b.mu[fidx]
        if values is None:
            values = _sample_readings(mu_f, p_chol, rng)
        values = np.asarray(values, dtype=float).ravel()
        w = _cho_solve(p_chol, values - mu_f)
        g_f = self._gcol(cell)
        gz_w = g_f @ w
        if a is None:
            z_idx, z_w = fidx, w
        else:
            w_h = -(a @ w)
            gz_w = gz_w + b.gh @ w_h
            z_idx = np.concatenate([fidx, b.hidx])
            z_w = np.concatenate([w, w_h])
        if len(self.root):
            beta = _tri_solve(self.root.chol, gz_w, trans=1)
            delta = self.lk.apply(np.concatenate([z_idx, self.x_idx]), np.concatenate([z_w, -beta]))
        else:
            delta = self.lk.apply(z_idx, z_w)

        child = _Branch()
        child.cells = b.cells + (cell,)
        child.hidx = np.concatenate([b.hidx, fidx])
        child.hy = np.concatenate([b.hy, values])
        child.gh = np.hstack([b.gh, g_f])
        if b.cells:
            l21 = _tri_solve(b.s_chol, c_hf).T
            m = len(b.hidx)
            s = np.zeros((m + len(fidx), m + len(fidx)))
            s[:m, :m] = b.s_chol
            s[m:, :m] = l21
            s[m:, m:] = p_chol
            child.s_chol = s
        else:
            child.s_chol = p_chol
        child.mu = b.mu + delta
        child.n_meas = b.n_meas + len(fidx)
        child.se = _se_from_sample(child.mu, self.levels, self._n_eff(child.n_meas))
        child.model = None
        reward = se_gap(b.se, child.se, len(self.levels)) + self.c * float(var_f.sum())
        return child, reward


class DenseBranches:
    """Reference evaluator conditioning explicit ``BeliefModel`` copies."""

    def __init__(self, root: BeliefModel, grid: GridSpec, q, c: float, se_basis: str = "lattice",
                 lattice: np.ndarray | None = None):
        self.grid = grid
        self.root = root
        self.levels = _levels(q)
        self.c = float(c)
        self.se_basis = se_basis
        self.lattice = grid.lattice_points() if lattice is None else lattice
        self.diag = root.kernel.noise_variance + root.jitter

    def _n_eff(self, n_meas: int) -> float:
        return float(len(self.lattice)) if self.se_basis == "lattice" else float(max(n_meas, 1))

    def _wrap(self, model: BeliefModel, cells) -> _Branch:
        b = _Branch()
        b.cells = cells
        b.model = model
        b.mu = model.predict_mean(self.lattice)
        b.n_meas = len(model)
        b.se = _se_from_sample(b.mu, self.levels, self._n_eff(b.n_meas))
        return b

    def root_branch(self) -> _Branch:
        return self._wrap(self.root, ())

    def footprint_variance(self, b: _Branch, cell: Cell) -> np.ndarray:
        return b.model.predict(footprint(cell, self.grid))[1]

    def expand(self, b: _Branch, cell: Cell, rng: np.random.Generator | None = None,
               values=None) -> tuple[_Branch, float]:
        pts = footprint(cell, self.grid)
        cff = b.model.posterior_cov(pts)
        var_f = np.maximum(np.diag(cff), 0.0)
        if values is None:
            p_chol = linalg.cholesky(cff + self.diag * np.eye(len(pts)), lower=True, check_finite=False)
            values = _sample_readings(b.model.predict_mean(pts), p_chol, rng)
        child = self._wrap(b.model.update(pts, values), b.cells + (cell,))
        reward = se_gap(b.se, child.se, len(self.levels)) + self.c * float(var_f.sum())
        return child, reward


def make_evaluator(belief: BeliefModel, grid: GridSpec, q, c: float, se_basis: str = "lattice",
                   lattice_kernel: LatticeKernel | None = None):
    if len(belief) == 0 or grid.lattice_indices(belief.train_x) is not None:
        return LatticeBranches(belief, grid, q, c, se_basis, lattice_kernel)
    return DenseBranches(belief, grid, q, c, se_basis)


# ------------------------------------------------------------------- the tree

class _ActionNode:
    __slots__ = ("n", "q", "children", "counts")

    def __init__(self):
        self.n = 0
        self.q = 0.0
        self.children: list[tuple["_BeliefNode", float]] = []
        self.counts: list[int] = []


class _BeliefNode:
    __slots__ = ("branch", "position", "n", "actions", "legal")

    def __init__(self, branch, position, legal):
        self.branch = branch
        self.position = position
        self.n = 0
        self.legal = legal
        self.actions = {m: _ActionNode() for m in legal}


class _Search:
    def __init__(self, evaluator, config: PlannerConfig, grid: GridSpec, region, rng):
        self.ev = evaluator
        self.cfg = config
        self.grid = grid
        self.region = region
        self.rng = rng

    def legal(self, pos: Cell) -> list[Move]:
        return legal_actions(pos, self.grid, self.region)

    def select(self, node: _BeliefNode) -> Move:
        best, best_val = None, -math.inf
        log_n = math.log(max(node.n, 1))
        for m in node.legal:
            an = node.actions[m]
            if an.n == 0:
                return m
            val = an.q + self.cfg.ucb_c * math.sqrt(log_n / an.n)
            if val > best_val:
                best, best_val = m, val
        return best

    def rollout(self, branch, pos: Cell, depth: int) -> float:
        total, disc = 0.0, 1.0
        for _ in range(depth):
            legal = self.legal(pos)
            if not legal:
                break
            if self.cfg.rollout_policy == "greedy":
                scores = [self.ev.footprint_variance(branch, m.apply(pos)).sum() for m in legal]
                move = legal[int(np.argmax(scores))]
            else:
                move = legal[int(self.rng.integers(len(legal)))]
            pos = move.apply(pos)
            branch, r = self.ev.expand(branch, pos, self.rng)
            total += disc * r
            disc *= self.cfg.discount
        return total

    def simulate(self, node: _BeliefNode, depth: int) -> float:
        if depth == 0 or not node.legal:
            return 0.0
        move = self.select(node)
        an = node.actions[move]
        limit = math.ceil(self.cfg.k_obs * (an.n + 1) ** self.cfg.alpha_obs)
        if len(an.children) < limit:
            pos = move.apply(node.position)
            branch, r = self.ev.expand(node.branch, pos, self.rng)
            child = _BeliefNode(branch, pos, self.legal(pos))
            an.children.append((child, r))
            an.counts.append(1)
            total = r + self.cfg.discount * self.rollout(branch, pos, depth - 1)
        else:
            counts = np.asarray(an.counts, dtype=float)
            k = int(self.rng.choice(len(counts), p=counts / counts.sum()))
            an.counts[k] += 1
            child, r = an.children[k]
            total = r + self.cfg.discount * self.simulate(child, depth - 1)
        node.n += 1
        an.n += 1
        an.q += (total - an.q) / an.n
        return total


def search(state: PlanningState, config: PlannerConfig, q, c: float, rng: np.random.Generator, *,
           grid: GridSpec, region=None, se_basis: str = "lattice", evaluator=None,
           lattice_kernel: LatticeKernel | None = None) -> dict[Move, tuple[int, float]]:
    """Run the tree search and return ``{move: (visits, mean return)}`` at the root."""
    legal = legal_actions(state.position, grid, region)
    if not legal:
        raise PlanningError(f"no legal move from {state.position}")
    ev = evaluator or make_evaluator(state.belief, grid, q, c, se_basis, lattice_kernel)
    root = _BeliefNode(ev.root_branch(), state.position, legal)
    s = _Search(ev, config, grid, region, rng)
    depth = max(1, min(config.max_depth, state.steps_remaining))
    for _ in range(config.rollouts_per_step):
        s.simulate(root, depth)
    return {m: (root.actions[m].n, root.actions[m].q) for m in legal}


def plan_step(state: PlanningState, config: PlannerConfig, q, c: float, rng: np.random.Generator, *,
              grid: GridSpec, region=None, se_basis: str = "lattice", evaluator=None,
              lattice_kernel: LatticeKernel | None = None) -> Move:
    """Choose the next move. Ties go to the earliest move in ``MOVES`` order."""
    legal = legal_actions(state.position, grid, region)
    if not legal:
        raise PlanningError(f"no legal move from {state.position}")
    if len(legal) == 1:
        return legal[0]
    stats = search(state, config, q, c, rng, grid=grid, region=region, se_basis=se_basis,
                   evaluator=evaluator, lattice_kernel=lattice_kernel)
    best, best_q = None, -math.inf
    for m in legal:
        visits, value = stats[m]
        if visits > 0 and value > best_q:
            best, best_q = m, value
    return best
