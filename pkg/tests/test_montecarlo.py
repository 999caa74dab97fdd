import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from problems import degenerate, jump_diffusion, time_to_go, two_mode_oracle
from switchgrid.functions import Constant
from switchgrid.grid import Lattice
from switchgrid.model import SwitchingProblem
from switchgrid.montecarlo import (
    NeverSwitch, PathState, PolicyStrategy, ScheduledSwitch, SimConfig, Strategy,
    SwitchLoopError, ThresholdStrategy, compare, evaluate_strategy, random_strategy,
    simulate_step,
)
from switchgrid.scheme import solve


def rng(seed=0):
    return np.random.default_rng(seed)


# --- one step -----------------------------------------------------------------------

def test_step_without_dynamics_is_identity():
    s = PathState.start([0.3], 0, 5)
    simulate_step(s, degenerate(), 0.0, 0.1, rng())
    assert np.array_equal(s.x, np.full((5, 1), 0.3))


def test_step_with_pure_drift():
    s = PathState.start([0.0], 0, 3)
    simulate_step(s, jump_diffusion(0.0, (), drift=0.5), 0.0, 0.2, rng())
    assert np.allclose(s.x, 0.1)


def test_diffusion_variance_has_no_half_factor():
    s = PathState.start([0.0], 0, 200_000)
    simulate_step(s, jump_diffusion(0.5, ()), 0.0, 0.1, rng(1))
    # generator a = sigma^2 per unit time in front of u'' means variance 2 sigma^2 dt
    assert s.x.var() == pytest.approx(2 * 0.25 * 0.1, rel=0.02)


def test_compensated_small_jump_has_zero_mean():
    s = PathState.start([0.0], 0, 400_000)
    simulate_step(s, jump_diffusion(0.0, ((0.3, 2.0),)), 0.0, 0.05, rng(2))
    # mean zero, standard deviation of the mean is 0.3 sqrt(2 * 0.05 / n)
    assert abs(s.x.mean()) <= 5 * 0.3 * math.sqrt(0.1 / 400_000)


def test_large_jump_mean_is_the_drift_flow():
    s = PathState.start([0.0], 0, 400_000)
    simulate_step(s, jump_diffusion(0.0, ((1.5, 2.0),)), 0.0, 0.05, rng(3))
    assert s.x.mean() == pytest.approx(1.5 * 2.0 * 0.05, abs=5 * 1.5 * math.sqrt(0.1 / 400_000))


def test_small_atom_paths_are_jump_counts_minus_compensator():
    # every path sits on the lattice of jump counts shifted by -w dt eta
    s = PathState.start([0.0], 0, 10)
    model = jump_diffusion(0.0, ((0.3, 2.0),))
    simulate_step(s, model, 0.0, 0.05, np.random.default_rng(np.random.PCG64(0)))
    jumps = np.rint((s.x[:, 0] + 0.3 * 2.0 * 0.05) / 0.3)
    assert np.allclose(s.x[:, 0], 0.3 * jumps - 0.03)


# --- strategies on closed forms -------------------------------------------------------

def test_never_switch_time_to_go_is_exact():
    est = evaluate_strategy(time_to_go(), degenerate(), NeverSwitch(), [0.0], 0,
                            SimConfig(paths=64, dt=0.01))
    assert est.mean == pytest.approx(1.0, abs=1e-12)
    assert est.stderr == 0.0 and est.mean_switches == 0.0


def test_switch_at_start_pays_cost():
    p = SwitchingProblem.constant_costs([[0, 0.3], [0.3, 0]], [Constant(1.0)] * 2,
                                        [Constant(0.0)] * 2, 1.0)
    est = evaluate_strategy(p, degenerate(), ScheduledSwitch(((0.0, 1),)), [0.0], 0,
                            SimConfig(paths=16, dt=0.01))
    assert est.mean == pytest.approx(0.7, abs=1e-12)
    assert est.per_mode["1"]["fraction"] == 1.0


def test_seed_determinism_and_thread_independence():
    p = two_mode_oracle()
    model = jump_diffusion()
    strat = ThresholdStrategy(0.0, 1, 0)
    base = SimConfig(paths=3000, dt=0.05, seed=11, chunk=512)
    a = evaluate_strategy(p, model, strat, [0.1], 0, base)
    b = evaluate_strategy(p, model, strat, [0.1], 0, base)
    c = evaluate_strategy(p, model, strat, [0.1], 0,
                          SimConfig(paths=3000, dt=0.05, seed=11, chunk=512, threads=3))
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.samples, c.samples)
    d = evaluate_strategy(p, model, strat, [0.1], 0, SimConfig(paths=3000, dt=0.05, seed=12, chunk=512))
    assert not np.array_equal(a.samples, d.samples)


def test_logged_costs_equal_accrued_costs():
    p = two_mode_oracle()
    est = evaluate_strategy(p, jump_diffusion(0.4), ThresholdStrategy(0.0, 1, 0), [0.0], 0,
                            SimConfig(paths=500, dt=0.02, seed=5, chunk=128))
    assert est.mean_switches > 0
    assert np.allclose(est.logged_costs, est.costs, atol=1e-12)


class _PingPong(Strategy):
    def decide(self, n, t, x, mode):
        return 1 - mode


def test_switch_loop_is_refused():
    p = SwitchingProblem.constant_costs([[0, 0.0], [0.0, 0]], [Constant(0.0)] * 2,
                                        [Constant(0.0)] * 2, 1.0)
    with pytest.raises(SwitchLoopError):
        evaluate_strategy(p, degenerate(), _PingPong(), [0.0], 0, SimConfig(paths=4, dt=0.5))


def test_antithetic_pairs_and_bad_configs():
    est = evaluate_strategy(two_mode_oracle(), jump_diffusion(0.3, ()), NeverSwitch(), [0.0], 0,
                            SimConfig(paths=200, dt=0.1, antithetic=True, chunk=64))
    assert est.paths == 200
    with pytest.raises(ValueError):
        SimConfig(paths=3, antithetic=True)
    with pytest.raises(ValueError):
        SimConfig(dt=0.3).steps(1.0)
    with pytest.raises(ValueError):
        SimConfig(jump_handling="exact")


@given(st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_random_strategies_are_admissible(seed):
    p = two_mode_oracle()
    s = random_strategy(np.random.default_rng(seed), p, ((-1.0, 1.0),))
    x = np.linspace(-1, 1, 7)[:, None]
    for t in (0.0, 0.5, 0.99):
        for m in range(2):
            a = s.decide(0, t, x, np.full(7, m))
            assert np.all((a == -1) | ((a >= 0) & (a < 2) & (a != m)))


# --- policy evaluation and comparison ---------------------------------------------------

LAT = Lattice(((-1.0, 1.0),), (201,), 200)


def test_oracle_policy_reproduces_pde_value():
    p = two_mode_oracle()
    sol = solve(p, degenerate(), LAT)
    pts = [((0.2,), 0), ((0.2,), 1), ((-0.6,), 1)]
    rep = compare(sol.field, sol.policy, p, degenerate(), pts, SimConfig(paths=32, dt=0.005))
    assert rep.passed
    assert max(r.gap for r in rep.rows) <= 1e-10
    assert all(r.exit_fraction == 0.0 for r in rep.rows)


def test_wrong_field_is_detected():
    p = two_mode_oracle()
    sol = solve(p, degenerate(), LAT)
    wrong = sol.field.with_values(sol.field.values + 0.05)
    rep = compare(wrong, sol.policy, p, degenerate(), [((0.2,), 0)], SimConfig(paths=32, dt=0.005))
    assert not rep.passed
    assert rep.rows[0].gap == pytest.approx(0.05, abs=1e-10)


def test_policy_strategy_counts_exits():
    p = two_mode_oracle()
    sol = solve(p, jump_diffusion(), Lattice(((-1.0, 1.0),), (41,), 20))
    strat = PolicyStrategy(sol.policy)
    evaluate_strategy(p, jump_diffusion(), strat, [0.9], 0, SimConfig(paths=400, dt=0.05, seed=1))
    assert 0.0 < strat.exit_fraction < 1.0
