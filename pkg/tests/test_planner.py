import numpy as np
import pytest

from quantile_ipp.errors import DomainError, PlanningError
from quantile_ipp.field import GridSpec, footprint, synth_field
from quantile_ipp.gp import BeliefModel, LatticeKernel
from quantile_ipp.objective import QUARTILES, objective_score
from quantile_ipp.planner import (MOVES, DenseBranches, LatticeBranches, Move, PlannerConfig, PlanningState,
                                  legal_actions, make_evaluator, plan_step, search)
from quantile_ipp.team import voronoi_partition

SMALL = GridSpec(6, 6)


def _belief(grid, cells, seed=0):
    f = synth_field("blobs", grid, seed)
    rng = np.random.default_rng(seed)
    b = BeliefModel()
    for cell in cells:
        pts = footprint(cell, grid)
        b = b.update(pts, f.truth_at(pts) + rng.normal(0, 0.05, len(pts)))
    return b


def test_move_order_and_apply():
    assert [m.name for m in MOVES] == ["PLUS_X", "MINUS_X", "PLUS_Y", "MINUS_Y"]
    assert Move.PLUS_X.apply((2, 3)) == (3, 3)
    assert Move.MINUS_Y.apply((2, 3)) == (2, 2)


def test_legal_actions_corner_and_interior():
    g = GridSpec()
    assert set(legal_actions((0, 0), g)) == {Move.PLUS_X, Move.PLUS_Y}
    assert legal_actions((5, 5), g) == list(MOVES)
    assert set(legal_actions((24, 24), g)) == {Move.MINUS_X, Move.MINUS_Y}


def test_legal_actions_respect_partition():
    g = GridSpec(6, 4)
    part = voronoi_partition(g, [(1, 1), (4, 1)])
    for cell in g.cells():
        rid = part(cell)
        region = part.region(rid)
        for m in legal_actions(cell, g, region):
            assert part(m.apply(cell)) == rid
        for m in set(legal_actions(cell, g)) - set(legal_actions(cell, g, region)):
            assert part(m.apply(cell)) != rid
    # predicate form gives the same answer
    assert legal_actions((2, 1), g, lambda c: part(c) == 0) == legal_actions((2, 1), g, part.region(0))


def test_config_validation():
    with pytest.raises(DomainError):
        PlannerConfig(rollouts_per_step=0)
    with pytest.raises(DomainError):
        PlannerConfig(discount=0.0)
    with pytest.raises(DomainError):
        PlannerConfig(rollout_policy="smart")


def test_lattice_and_dense_evaluators_agree():
    b = _belief(SMALL, [(0, 0), (2, 3), (3, 3)])
    lb, db = LatticeBranches(b, SMALL, QUARTILES, 1.0), DenseBranches(b, SMALL, QUARTILES, 1.0)
    x, y = lb.root_branch(), db.root_branch()
    rng = np.random.default_rng(0)
    for cell in [(3, 4), (4, 4), (4, 4), (0, 5)]:
        vals = rng.normal(0.5, 0.1, 25)
        x, rx = lb.expand(x, cell, values=vals)
        y, ry = db.expand(y, cell, values=vals)
        assert rx == pytest.approx(ry, abs=1e-10)
        np.testing.assert_allclose(x.mu, y.mu, atol=1e-10)
        np.testing.assert_allclose(lb.footprint_variance(x, (1, 1)), db.footprint_variance(y, (1, 1)), atol=1e-10)


def test_evaluator_reward_matches_objective_score():
    b = _belief(SMALL, [(1, 1)])
    for basis in ("lattice", "measurements"):
        ev = make_evaluator(b, SMALL, QUARTILES, 1.0, basis)
        vals = b.predict_mean(footprint((2, 1), SMALL))
        _, r = ev.expand(ev.root_branch(), (2, 1), values=vals)
        assert r == pytest.approx(objective_score(b, (2, 1), QUARTILES, 1.0, SMALL, se_basis=basis), abs=1e-10)


def test_make_evaluator_falls_back_off_lattice():
    b = BeliefModel().update([[0.3, 0.3]], [0.5])
    assert isinstance(make_evaluator(b, SMALL, QUARTILES, 1.0), DenseBranches)
    assert isinstance(make_evaluator(_belief(SMALL, [(0, 0)]), SMALL, QUARTILES, 1.0, lattice_kernel=LatticeKernel(
        SMALL, BeliefModel().kernel)), LatticeBranches)


def test_single_legal_action_is_forced():
    g = GridSpec(1, 3)
    state = PlanningState((0, 0), BeliefModel(), 5)
    assert plan_step(state, PlannerConfig(rollouts_per_step=1), QUARTILES, 1.0, np.random.default_rng(0),
                     grid=g) == Move.PLUS_Y


def test_no_legal_action_raises():
    g = GridSpec(1, 1)
    with pytest.raises(PlanningError):
        plan_step(PlanningState((0, 0), BeliefModel(), 3), PlannerConfig(), QUARTILES, 1.0,
                  np.random.default_rng(0), grid=g)


def test_deterministic_for_fixed_seed():
    b = _belief(SMALL, [(2, 2), (3, 2)])
    state = PlanningState((2, 2), b, 4)
    cfg = PlannerConfig(rollouts_per_step=40)
    a = [plan_step(state, cfg, QUARTILES, 1.0, np.random.default_rng(7), grid=SMALL) for _ in range(2)]
    assert a[0] == a[1]
    s1 = search(state, cfg, QUARTILES, 1.0, np.random.default_rng(7), grid=SMALL)
    s2 = search(state, cfg, QUARTILES, 1.0, np.random.default_rng(7), grid=SMALL)
    assert s1 == s2


def test_root_values_nonnegative_and_action_legal():
    b = _belief(SMALL, [(0, 0), (5, 5)])
    for pos in [(0, 0), (3, 2), (5, 0)]:
        state = PlanningState(pos, b, 3)
        stats = search(state, PlannerConfig(rollouts_per_step=30), QUARTILES, 1.0, np.random.default_rng(1),
                       grid=SMALL)
        assert set(stats) == set(legal_actions(pos, SMALL))
        assert all(q >= 0 for _, q in stats.values())
        assert sum(n for n, _ in stats.values()) == 30
        move = plan_step(state, PlannerConfig(rollouts_per_step=30), QUARTILES, 1.0, np.random.default_rng(1),
                         grid=SMALL)
        assert move in legal_actions(pos, SMALL)


def test_depth_one_prefers_unmeasured_footprint():
    # two legal moves: (1, 0) was imaged repeatedly, (0, 1) never was
    g = GridSpec(2, 2)
    b = BeliefModel()
    for _ in range(3):
        b = b.update(footprint((1, 0), g), np.full(25, 0.4))
    state = PlanningState((0, 0), b, 1)
    for seed in range(5):
        move = plan_step(state, PlannerConfig(max_depth=1, rollouts_per_step=20), QUARTILES, 1.0,
                         np.random.default_rng(seed), grid=g)
        assert move == Move.PLUS_Y


def test_region_confines_search():
    g = GridSpec(6, 4)
    part = voronoi_partition(g, [(1, 1), (4, 1)])
    b = _belief(g, [(1, 1)])
    region = part.region(0)
    for seed in range(3):
        move = plan_step(PlanningState((2, 1), b, 4), PlannerConfig(rollouts_per_step=30), QUARTILES, 1.0,
                         np.random.default_rng(seed), grid=g, region=region)
        assert move.apply((2, 1)) in region


def test_greedy_rollout_runs():
    b = _belief(SMALL, [(2, 2)])
    move = plan_step(PlanningState((2, 2), b, 4), PlannerConfig(rollouts_per_step=20, rollout_policy="greedy"),
                     QUARTILES, 1.0, np.random.default_rng(0), grid=SMALL)
    assert move in MOVES
