"""Multirobot missions: placement, budgets, communication, partitioning.

A mission runs in synchronized rounds. Round 0 is the free initial image at
each start cell. In every later round each robot with budget left (in id
order) plans, moves one cell, images its footprint, conditions its own GP, and
broadcasts the new readings. Deliveries are decided at broadcast time (using
the receivers' positions at that moment) and applied at the end of the round.

Randomness is split by purpose with ``SeedSequence`` spawn keys, so every
robot's planning and sensing streams depend only on the trial seed, the robot
id and the round number.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, PlanningError
from .field import Cell, Field, GridSpec, Measurement, footprint, sample
from .gp import BeliefModel, KernelParams, LatticeKernel
from .objective import QuantileEstimate, QuantileSet, quantiles
from .planner import PlannerConfig, PlanningState, legal_actions, make_evaluator, plan_step
from .stats import rmse

COMM_REGIMES = ("none", "stochastic", "full", "partitioned")
BUDGET_POLICIES = ("complete", "shared")
POLICIES = ("pomcpow", "random_walk")

# spawn-key tags
_PLACE, _ROBOT, _COMM = 0, 1, 2
_PLAN, _SENSE = 0, 1


def _child(seq: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seq.entropy, spawn_key=tuple(seq.spawn_key) + tuple(key))


def _rng(seq: np.random.SeedSequence, *key: int) -> np.random.Generator:
    return np.random.default_rng(_child(seq, *key))


# ------------------------------------------------------------------ placement

@dataclass(frozen=True)
class PlacementSpec:
    n_robots: int
    alpha: float
    workspace: tuple[float, float] = (80.0, 60.0)
    lloyd_iters: int = 100
    samples_per_robot: int = 100

    def __post_init__(self):
        if self.n_robots < 1:
            raise DomainError("n_robots must be >= 1")
        if not (0.0 <= self.alpha <= 1.0):
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")

    def rectangle(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of the centered alpha-scaled start rectangle."""
        w, h = self.workspace
        return (w * (1 - self.alpha) / 2, h * (1 - self.alpha) / 2,
                w * (1 + self.alpha) / 2, h * (1 + self.alpha) / 2)


def _snap(point: np.ndarray, rect, grid: GridSpec) -> Cell:
    x0, y0, x1, y1 = rect
    cx = (np.arange(grid.cells_x) + 0.5) * grid.cell_width
    cy = (np.arange(grid.cells_y) + 0.5) * grid.cell_height
    ok_x = np.flatnonzero((cx >= x0) & (cx <= x1))
    ok_y = np.flatnonzero((cy >= y0) & (cy <= y1))
    if len(ok_x) == 0 or len(ok_y) == 0:
        return grid.cell_of(float(point[0]), float(point[1]))
    # nearest admissible center per axis (separable for an axis-aligned box)
    ix = ok_x[np.argmin(np.abs(cx[ok_x] - point[0]))]
    iy = ok_y[np.argmin(np.abs(cy[ok_y] - point[1]))]
    return int(ix), int(iy)


def place_initial(spec: PlacementSpec, rng: np.random.Generator, grid: GridSpec | None = None) -> list[Cell]:
    """Lloyd-relaxed start cells spread over the alpha rectangle.

    Each iteration draws ``samples_per_robot * n_robots`` uniform points in the
    rectangle, assigns them to the nearest current site, and moves every site
    to the centroid of its points (sites with no points stay put). Final sites
    snap to the nearest cell whose center lies in the rectangle.
    """
    grid = grid or GridSpec(width_m=spec.workspace[0], height_m=spec.workspace[1])
    x0, y0, x1, y1 = rect = spec.rectangle()
    lo, hi = np.array([x0, y0]), np.array([x1, y1])
    sites = lo + (hi - lo) * rng.random((spec.n_robots, 2))
    m = spec.samples_per_robot * spec.n_robots
    for _ in range(spec.lloyd_iters):
        pts = lo + (hi - lo) * rng.random((m, 2))
        d2 = ((pts[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
        owner = np.argmin(d2, axis=1)
        counts = np.bincount(owner, minlength=spec.n_robots)
        sums = np.zeros_like(sites)
        np.add.at(sums, owner, pts)
        has = counts > 0
        sites[has] = sums[has] / counts[has, None]
    return [_snap(s, rect, grid) for s in sites]


# --------------------------------------------------------------------- budget

@dataclass(frozen=True)
class BudgetSpec:
    total: int
    policy: str = "complete"

    def __post_init__(self):
        if self.total < 0:
            raise DomainError("budget total must be >= 0")
        if self.policy not in BUDGET_POLICIES:
            raise DomainError(f"unknown budget policy {self.policy!r}")


def allocate_budgets(spec: BudgetSpec, n_robots: int) -> list[int]:
    """Per-robot planning steps; shared budgets give the remainder to the lowest ids."""
    if n_robots < 1:
        raise DomainError("n_robots must be >= 1")
    if spec.policy == "complete":
        return [spec.total] * n_robots
    base, extra = divmod(spec.total, n_robots)
    return [base + 1 if i < extra else base for i in range(n_robots)]


# -------------------------------------------------------------- communication

@dataclass(frozen=True)
class CommSpec:
    regime: str = "stochastic"
    eta: float = 0.5
    r: float = 10.0

    def __post_init__(self):
        if self.regime not in COMM_REGIMES:
            raise DomainError(f"unknown communication regime {self.regime!r}")
        if not (self.eta > 0 and self.r > 0):
            raise DomainError("eta and r must be positive")


def comm_success_prob(distance: float, spec: CommSpec) -> float:
    """Sigmoid delivery probability ``1 / (1 + exp(eta (d - r)))``."""
    if distance < 0:
        raise DomainError("distance must be >= 0")
    z = spec.eta * (distance - spec.r)
    # branch keeps exp() from overflowing at long range
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


@dataclass
class RobotState:
    id: int
    position: Cell
    budget_left: int
    belief: BeliefModel
    log: list = dc_field(default_factory=list)
    region: Optional[frozenset] = None
    path: list = dc_field(default_factory=list)
    inbox: list = dc_field(default_factory=list)
    finished: bool = False

    def receive(self, payload) -> None:
        xs, ys = payload
        self.belief = self.belief.update(xs, ys)


def broadcast(sender: RobotState, others: Sequence[RobotState], spec: CommSpec, payload,
              rng: np.random.Generator, grid: GridSpec | None = None, deliver: bool = True) -> list[bool]:
    """Attempt all-or-nothing delivery of ``payload`` = (locations, values) to each robot in ``others``.

    Returns one success flag per receiver. With ``deliver`` the receivers'
    beliefs are updated immediately; otherwise the payload is queued in their
    inbox for the caller to apply later.
    """
    grid = grid or GridSpec()
    outcomes = []
    for other in others:
        if spec.regime == "full":
            ok = True
        elif spec.regime == "stochastic":
            sx, sy = grid.cell_center(sender.position)
            ox, oy = grid.cell_center(other.position)
            ok = bool(rng.random() < comm_success_prob(math.hypot(sx - ox, sy - oy), spec))
        else:
            ok = False
        outcomes.append(ok)
        if ok:
            if deliver:
                other.receive(payload)
            else:
                other.inbox.append(payload)
    return outcomes


# ------------------------------------------------------------------ partition

@dataclass(frozen=True)
class Partition:
    grid: GridSpec
    seeds: tuple[Cell, ...]
    assignment: np.ndarray  # (cells_y, cells_x) robot id per cell

    def __call__(self, cell: Cell) -> int:
        return int(self.assignment[cell[1], cell[0]])

    def region(self, robot_id: int) -> frozenset:
        ys, xs = np.nonzero(self.assignment == robot_id)
        return frozenset(zip(xs.tolist(), ys.tolist()))

    def boundary_segments(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        """Cell edges (in meters) separating different regions."""
        g, a = self.grid, self.assignment
        segs = []
        for cy in range(g.cells_y):
            for cx in range(g.cells_x):
                if cx + 1 < g.cells_x and a[cy, cx] != a[cy, cx + 1]:
                    x = (cx + 1) * g.cell_width
                    segs.append(((x, cy * g.cell_height), (x, (cy + 1) * g.cell_height)))
                if cy + 1 < g.cells_y and a[cy, cx] != a[cy + 1, cx]:
                    y = (cy + 1) * g.cell_height
                    segs.append(((cx * g.cell_width, y), ((cx + 1) * g.cell_width, y)))
        return segs


def separate_duplicates(cells: Sequence[Cell], grid: GridSpec) -> list[Cell]:
    """Move repeated cells to the nearest free cell (ring by ring, fixed scan order)."""
    taken: set[Cell] = set()
    out = []
    for cell in cells:
        if cell not in taken:
            out.append(cell)
            taken.add(cell)
            continue
        found = None
        for radius in range(1, max(grid.cells_x, grid.cells_y) + 1):
            ring = [(cell[0] + dx, cell[1] + dy) for dy in range(-radius, radius + 1)
                    for dx in range(-radius, radius + 1) if max(abs(dx), abs(dy)) == radius]
            ring.sort(key=lambda c: ((c[0] - cell[0]) ** 2 + (c[1] - cell[1]) ** 2, c[1], c[0]))
            found = next((c for c in ring if grid.contains_cell(c) and c not in taken), None)
            if found:
                break
        if found is None:
            raise ConfigError("more robots than grid cells")
        out.append(found)
        taken.add(found)
    return out


def voronoi_partition(workspace: GridSpec, seeds: Sequence[Cell]) -> Partition:
    """Assign each cell to the nearest seed cell center; ties go to the lowest id."""
    grid = workspace
    seeds = separate_duplicates(list(seeds), grid)
    cx = (np.arange(grid.cells_x) + 0.5) * grid.cell_width
    cy = (np.arange(grid.cells_y) + 0.5) * grid.cell_height
    gx, gy = np.meshgrid(cx, cy)
    best = np.full(gx.shape, np.inf)
    owner = np.zeros(gx.shape, dtype=int)
    for i, s in enumerate(seeds):
        sx, sy = grid.cell_center(s)
        d2 = (gx - sx) ** 2 + (gy - sy) ** 2
        closer = d2 < best  # strict: earlier ids keep ties
        best[closer] = d2[closer]
        owner[closer] = i
    owner.setflags(write=False)
    return Partition(grid, tuple(seeds), owner)


# -------------------------------------------------------------------- mission

@dataclass(frozen=True)
class MissionConfig:
    n_robots: int = 1
    alpha: float = 0.66
    budget: int = 15
    budget_policy: str = "complete"
    comm: str = "none"
    eta: float = 0.5
    r: float = 10.0
    quantiles: tuple[float, ...] = (0.25, 0.5, 0.75)
    c: float = 1.0
    noise_sd: float = 0.05
    lengthscale: float = 12.0
    signal_variance: float = 1.0
    noise_variance: float = 0.05 ** 2
    prior_mean: float = 0.5
    se_basis: str = "lattice"
    policy: str = "pomcpow"
    planner: PlannerConfig = PlannerConfig()
    lloyd_iters: int = 100
    samples_per_robot: int = 100

    def validate(self) -> None:
        if self.n_robots < 1:
            raise ConfigError("n_robots must be >= 1")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        if self.budget_policy not in BUDGET_POLICIES:
            raise ConfigError(f"unknown budget policy {self.budget_policy!r}")
        if self.comm not in COMM_REGIMES:
            raise ConfigError(f"unknown communication regime {self.comm!r}")
        if self.comm == "partitioned" and self.alpha != 1.0:
            raise ConfigError(f"partitioned missions require alpha = 1.0, got {self.alpha}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.se_basis not in ("lattice", "measurements"):
            raise ConfigError(f"unknown se basis {self.se_basis!r}")
        if self.noise_sd < 0 or self.c < 0:
            raise ConfigError("noise_sd and c must be >= 0")
        try:
            QuantileSet(tuple(self.quantiles))
            KernelParams(self.lengthscale, self.signal_variance, self.noise_variance)
            CommSpec("none" if self.comm == "partitioned" else self.comm, self.eta, self.r)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def kernel(self) -> KernelParams:
        return KernelParams(self.lengthscale, self.signal_variance, self.noise_variance)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantiles"] = list(self.quantiles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MissionConfig":
        d = dict(d)
        if "planner" in d and isinstance(d["planner"], dict):
            d["planner"] = PlannerConfig(**d["planner"])
        if "quantiles" in d:
            d["quantiles"] = tuple(d["quantiles"])
        return cls(**d)


@dataclass
class TrialResult:
    config: dict
    starts: list
    paths: list
    measurements: list  # per robot: list of (x, y, value, step)
    truth: QuantileEstimate
    final: QuantileEstimate
    per_robot: list
    rmse: float
    rewards: list
    planning_steps: int
    budgets: list
    partition: Optional[list] = None
    wall_time: float = 0.0

    def all_measurements(self) -> list[Measurement]:
        return [Measurement((x, y), v, rid, step)
                for rid, log in enumerate(self.measurements) for (x, y, v, step) in log]

    def to_dict(self, with_timing: bool = True) -> dict:
        d = {
            "config": self.config,
            "starts": [list(c) for c in self.starts],
            "paths": [[list(c) for c in p] for p in self.paths],
            "measurements": [[list(m) for m in log] for log in self.measurements],
            "truth": list(self.truth.values),
            "final": list(self.final.values),
            "per_robot": [list(e.values) for e in self.per_robot],
            "rmse": self.rmse,
            "rewards": self.rewards,
            "planning_steps": self.planning_steps,
            "budgets": self.budgets,
            "partition": self.partition,
        }
        if with_timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, with_timing: bool = True) -> str:
        return json.dumps(self.to_dict(with_timing), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(
            config=d["config"],
            starts=[tuple(c) for c in d["starts"]],
            paths=[[tuple(c) for c in p] for p in d["paths"]],
            measurements=[[tuple(m) for m in log] for log in d["measurements"]],
            truth=QuantileEstimate(d["truth"], "truth"),
            final=QuantileEstimate(d["final"], "aggregate"),
            per_robot=[QuantileEstimate(e, "model") for e in d["per_robot"]],
            rmse=d["rmse"],
            rewards=d["rewards"],
            planning_steps=d["planning_steps"],
            budgets=d["budgets"],
            partition=d.get("partition"),
            wall_time=d.get("wall_time", 0.0),
        )


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def robot_seed(trial_seed, robot_id: int) -> np.random.SeedSequence:
    """The per-robot stream a mission derives from its trial seed."""
    return _child(_as_seed_sequence(trial_seed), _ROBOT, robot_id)


def _realized_reward(lk: LatticeKernel, before: BeliefModel, cell: Cell, values: np.ndarray,
                     grid: GridSpec, qs, c: float, se_basis: str) -> tuple[BeliefModel, float]:
    """Objective value of the readings actually taken at ``cell``, plus the updated belief."""
    ev = make_evaluator(before, grid, qs, c, se_basis, lk)
    _, reward = ev.expand(ev.root_branch(), cell, values=values)
    return before.update(footprint(cell, grid), values), reward


def run_mission(config: MissionConfig, field: Field, seed=0, *, starts: Sequence[Cell] | None = None,
                robot_seeds: Sequence[np.random.SeedSequence] | None = None) -> TrialResult:
    """Simulate one multirobot survey and score its final quantile estimate.

    ``starts`` overrides Lloyd placement and ``robot_seeds`` overrides the
    per-robot random streams (both in robot-id order).
    """
    config.validate()
    t0 = time.perf_counter()
    grid = field.grid
    seq = _as_seed_sequence(seed)
    qset = QuantileSet(tuple(config.quantiles))
    kernel = config.kernel
    lk = LatticeKernel(grid, kernel)
    n = config.n_robots

    if starts is None:
        pspec = PlacementSpec(n, config.alpha, (grid.width_m, grid.height_m),
                              config.lloyd_iters, config.samples_per_robot)
        starts = place_initial(pspec, _rng(seq, _PLACE), grid)
    else:
        starts = [tuple(int(v) for v in s) for s in starts]
        if len(starts) != n or not all(grid.contains_cell(s) for s in starts):
            raise ConfigError("starts must give one in-grid cell per robot")
    partition = None
    if config.comm == "partitioned":
        partition = voronoi_partition(grid, starts)
        starts = list(partition.seeds)
    if robot_seeds is None:
        robot_seeds = [robot_seed(seq, i) for i in range(n)]
    elif len(robot_seeds) != n:
        raise ConfigError("robot_seeds must give one stream per robot")

    budgets = allocate_budgets(BudgetSpec(config.budget, config.budget_policy), n)
    comm = CommSpec("none" if config.comm == "partitioned" else config.comm, config.eta, config.r)
    robots = [RobotState(i, starts[i], budgets[i], BeliefModel(kernel, config.prior_mean),
                         region=partition.region(i) if partition else None, path=[starts[i]])
              for i in range(n)]
    rewards: list[list[float]] = [[] for _ in range(n)]

    def sense_and_share(robot: RobotState, rnd: int, comm_rng) -> None:
        pts = footprint(robot.position, grid)
        vals = sample(field, pts, config.noise_sd, _rng(robot_seeds[robot.id], rnd, _SENSE))
        robot.log.extend((float(x), float(y), float(v), rnd) for (x, y), v in zip(pts, vals))
        if rnd == 0:
            robot.belief = robot.belief.update(pts, vals)
        else:
            robot.belief, reward = _realized_reward(lk, robot.belief, robot.position, vals, grid,
                                                    qset, config.c, config.se_basis)
            rewards[robot.id].append(reward)
        others = [o for o in robots if o.id != robot.id]
        broadcast(robot, others, comm, (pts, vals), comm_rng, grid, deliver=False)

    def flush_inboxes() -> None:
        for robot in robots:
            for payload in robot.inbox:
                robot.receive(payload)
            robot.inbox.clear()

    comm_rng = _rng(seq, _COMM, 0)
    for robot in robots:
        sense_and_share(robot, 0, comm_rng)
    flush_inboxes()

    steps = 0
    rnd = 0
    while any(r.budget_left > 0 and not r.finished for r in robots):
        rnd += 1
        comm_rng = _rng(seq, _COMM, rnd)
        for robot in robots:
            if robot.budget_left <= 0 or robot.finished:
                continue
            plan_rng = _rng(robot_seeds[robot.id], rnd, _PLAN)
            legal = legal_actions(robot.position, grid, robot.region)
            if not legal:
                robot.finished = True
                continue
            if config.policy == "random_walk":
                move = legal[int(plan_rng.integers(len(legal)))]
            else:
                try:
                    move = plan_step(PlanningState(robot.position, robot.belief, robot.budget_left),
                                     config.planner, qset, config.c, plan_rng, grid=grid,
                                     region=robot.region, se_basis=config.se_basis, lattice_kernel=lk)
                except PlanningError:
                    robot.finished = True
                    continue
            robot.position = move.apply(robot.position)
            robot.path.append(robot.position)
            robot.budget_left -= 1
            steps += 1
            sense_and_share(robot, rnd, comm_rng)
        flush_inboxes()

    pooled = np.array([m[2] for r in robots for m in r.log])
    truth = quantiles(field.values.ravel(), qset, source="truth")
    final = quantiles(pooled, qset, source="aggregate")
    per_robot = [quantiles(lk.mean(r.belief), qset, source="model") for r in robots]
    return TrialResult(
        config=config.to_dict(),
        starts=list(starts),
        paths=[list(r.path) for r in robots],
        measurements=[list(r.log) for r in robots],
        truth=truth,
        final=final,
        per_robot=per_robot,
        rmse=rmse(truth, final),
        rewards=rewards,
        planning_steps=steps,
        budgets=budgets,
        partition=partition.assignment.tolist() if partition else None,
        wall_time=time.perf_counter() - t0,
    )
