import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from problems import (
    degenerate, jump_diffusion, lattice_1d, sym_problem, time_to_go, two_mode_oracle, zero_problem,
)
from switchgrid.functions import (
    Affine, Constant, ConstantMatrix, ConstantVector, DiagQuadratic, LinearJump, SineSquared,
)
from switchgrid.grid import Boundary, Lattice
from switchgrid.model import LevyMeasure, LevyModel, SwitchingProblem
from switchgrid.scheme import (
    STAY, CFLError, MonotonicityError, NoLoopError, SolverConfig, ValidationFailed,
    boundary_layer_width, coupled_step, diffusion_matrix, discretize_local, explicit_dt_bound,
    explicit_matrix, obstacle_gaps, project_obstacles, residual, restrict, richardson_error, solve,
    transform_consistency,
)


def model_1d(sigma=0.0, drift=0.0, atoms=()):
    meas = LevyMeasure.atoms(list(atoms)) if atoms else LevyMeasure.empty()
    return LevyModel(1, ConstantVector((drift,)), ConstantMatrix(((sigma,),)), LinearJump(((1.0,),)), meas)


# --- stencils ---------------------------------------------------------------------------

def test_degenerate_stencil_is_zero():
    st_ = discretize_local(degenerate(), lattice_1d(), 0.0)
    assert st_.matrix.nnz == 0


def test_second_difference_weights():
    lat = Lattice(((0.0, 1.0),), (11,))
    h = 0.1
    D = diffusion_matrix(model_1d(sigma=math.sqrt(2.0)), lat, 0.0).toarray()
    row = D[5, 4:7]
    assert np.allclose(row, [2 / h ** 2, -4 / h ** 2, 2 / h ** 2], rtol=1e-12)
    assert np.count_nonzero(D[5]) == 3


@pytest.mark.parametrize("drift,left,right", [(1.0, 0.0, 1.0), (-1.0, 1.0, 0.0)])
def test_upwind_direction_follows_drift_sign(drift, left, right):
    lat = Lattice(((0.0, 1.0),), (11,))
    S = discretize_local(model_1d(drift=drift), lat, 0.0).advection.toarray()
    assert S[5, 4] == pytest.approx(left / 0.1)
    assert S[5, 6] == pytest.approx(right / 0.1)
    assert S[5, 5] == pytest.approx(-1 / 0.1)


def _cross_model(rho):
    a = np.array([[1.0, rho], [rho, 1.0]])
    s = np.linalg.cholesky(a)
    return LevyModel(2, ConstantVector((0.0, 0.0)), ConstantMatrix(tuple(map(tuple, s))),
                     LinearJump(((1.0,), (0.0,))), LevyMeasure.empty())


def test_cross_diffusion_stencil_is_monotone_and_consistent():
    lat = Lattice(((-1, 1), (-1, 1)), (21, 21))
    D = diffusion_matrix(_cross_model(0.6), lat, 0.0)
    off = D - np.diag(D.diagonal())
    assert off.min() >= 0
    # exact on quadratics: d_xx + 2 rho d_xy + d_yy of x^2 + x y + y^2 is 2 + 2*0.6 + 2
    x, y = lat.points.T
    u = x ** 2 + x * y + y ** 2
    inner = lat.interior_mask(1)
    assert np.allclose((D @ u)[inner], 4 + 2 * 0.6, atol=1e-10)


def test_cross_diffusion_too_strong_raises_with_node():
    lat = Lattice(((-1, 1), (-1, 1)), (21, 6))
    with pytest.raises(MonotonicityError, match="node"):
        diffusion_matrix(_cross_model(0.5), lat, 0.0)


def test_explicit_bound_and_cfl_error():
    lat = lattice_1d(nodes=41, steps=2)
    model = model_1d(drift=1.0, atoms=[(0.4, 1.0)])
    E, _ = explicit_matrix(model, lat, 0.0)
    bound = explicit_dt_bound(E)
    # compensated drift 1 - 0.4 = 0.6 over h = 0.1, plus intensity 1
    assert bound == pytest.approx(1 / (0.6 / 0.1 + 1.0))
    with pytest.raises(CFLError, match="dt"):
        solve(time_to_go(), model, lat)


def test_boundary_layer_width():
    lat = lattice_1d(nodes=41)
    assert boundary_layer_width(degenerate(), lat, [0.0]) == 1
    assert boundary_layer_width(model_1d(atoms=[(0.35, 1.0)]), lat, [0.0]) == 4


# --- closed forms -------------------------------------------------------------------------

def test_zero_problem_is_zero():
    sol = solve(zero_problem(), jump_diffusion(), lattice_1d())
    assert np.all(sol.field.values == 0.0)


def test_time_to_go():
    sol = solve(time_to_go(), degenerate(), lattice_1d())
    assert np.allclose(sol.field.values[:, 0, :], (1 - sol.field.times)[:, None], atol=1e-14)


def test_prohibitive_costs_oracle():
    p = SwitchingProblem.constant_costs([[0, 10.0], [10.0, 0]], [Constant(1.0), Constant(0.0)],
                                        [Constant(0.0)] * 2, 1.0, growth_bound=20.0)
    sol = solve(p, degenerate(), lattice_1d())
    t = sol.field.times[:, None]
    assert np.allclose(sol.field.values[:, 0], 1 - t, atol=1e-14)
    assert np.all(sol.field.values[:, 1] == 0.0)
    assert np.all(sol.policy.actions == STAY)


def test_symmetric_modes_equal_single_mode_solve():
    g = Affine(0.0, (0.4,))
    psi = SineSquared(0.1, 1.0)
    model = jump_diffusion()
    lat = lattice_1d(nodes=81, steps=80)
    three = SwitchingProblem.constant_costs(np.ones((3, 3)) - np.eye(3), [psi] * 3, [g] * 3, 1.0)
    one = SwitchingProblem.constant_costs([[0.0]], [psi], [g], 1.0)
    u3 = solve(three, model, lat).field.values
    u1 = solve(one, model, lat).field.values
    for i in range(3):
        assert np.max(np.abs(u3[:, i] - u1[:, 0])) <= 1e-12


def test_driftless_linear_terminal_is_a_martingale():
    lat = Lattice(((-4.0, 4.0),), (161,), 100)
    p = SwitchingProblem.constant_costs([[0.0]], [Constant(0.0)], [Affine(0.0, (1.0,))], 1.0)
    sol = solve(p, model_1d(sigma=0.3), lat)
    x = lat.points[:, 0]
    centre = np.abs(x) <= 2.0
    # clamp contamination from |x| = 4 decays like a Gaussian tail; well below 1e-6 here
    assert np.max(np.abs(sol.field.values[0, 0, centre] - x[centre])) < 1e-6


def test_quadratic_oracle_converges_under_refinement():
    # u = x^2 + (2 sigma^2 + sum w eta^2)(T - t) for small compensated atoms, psi = 0
    sigma, atoms = 0.3, [(0.3, 1.0), (-0.2, 2.0)]
    model = model_1d(sigma=sigma, atoms=atoms)
    p = SwitchingProblem.constant_costs([[0.0]], [Constant(0.0)], [DiagQuadratic(0.0, (0.0,), (1.0,))],
                                        1.0, growth_bound=50.0)
    c = 2 * sigma ** 2 + sum(w * z * z for z, w in atoms)
    errs = []
    for n in (41, 81, 161):
        lat = Lattice(((-4.0, 4.0),), (n,), n - 1)
        sol = solve(p, model, lat)
        x = lat.points[:, 0]
        centre = np.abs(x) <= 1.0
        errs.append(np.max(np.abs(sol.field.values[0, 0, centre] - (x[centre] ** 2 + c))))
    assert errs[0] > errs[1] > errs[2]


def test_terminal_slice_is_exact():
    p = sym_problem()
    sol = solve(p, jump_diffusion(), lattice_1d())
    assert np.array_equal(sol.field.values[-1], p.terminals(lattice_1d().points).T)


# --- obstacle coupling ------------------------------------------------------------------

def test_projection_terminates_and_respects_obstacles():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(3, 50))
    C = np.broadcast_to(np.array([[0, 0.2, 0.5], [0.4, 0, 0.3], [0.1, 0.3, 0]]), (50, 3, 3))
    u = project_obstacles(v, C)
    assert np.all(u >= v)
    for i in range(3):
        for j in range(3):
            if i != j:
                assert np.all(u[i] >= u[j] - C[:, i, j] - 1e-15)


def test_projection_negative_cycle_raises_with_cycle():
    v = np.array([[0.0], [1.0]])
    C = np.array([[[0.0, 1.0], [-1.5, 0.0]]])
    with pytest.raises(NoLoopError) as exc:
        project_obstacles(v, C)
    assert exc.value.cycle in ((0, 1, 0), (1, 0, 1))


def test_solve_refuses_no_loop_violation_unless_forced():
    p = SwitchingProblem.constant_costs([[0, 1.0], [-1.0, 0]], [Constant(0.0)] * 2,
                                        [Constant(0.0)] * 2, 1.0)
    with pytest.raises(ValidationFailed, match="no_loop"):
        solve(p, degenerate(), lattice_1d())
    # a zero-cost cycle is a fixed point of the projection; a negative one is not
    q = SwitchingProblem.constant_costs([[0, 1.0], [-1.5, 0]], [Constant(0.0), Constant(1.0)],
                                        [Constant(0.0)] * 2, 1.0)
    with pytest.raises(NoLoopError):
        solve(q, degenerate(), lattice_1d(), force=True)


def test_exact_coupling_has_tiny_residual_and_split_does_not_worsen_feasibility():
    p = sym_problem(0.3)
    model = jump_diffusion()
    lat = lattice_1d(nodes=81, steps=80)
    exact = solve(p, model, lat)
    split = solve(p, model, lat, SolverConfig(coupling="split"))
    assert exact.residual.linf <= 1e-10
    assert obstacle_gaps(split.field, p).min() >= -1e-10
    assert split.residual.linf >= exact.residual.linf


def test_policy_switches_match_obstacle():
    p = sym_problem(0.3)
    sol = solve(p, jump_diffusion(), lattice_1d(nodes=81, steps=80))
    vals, acts = sol.field.values, sol.policy.actions
    C = p.cost_matrix(lattice_1d(nodes=81).points, 0.0)
    assert np.any(acts != STAY)
    n, i, k = np.nonzero(acts != STAY)
    j = acts[n, i, k]
    assert np.allclose(vals[n, i, k], vals[n, j, k] - C[k, i, j], atol=1e-10)
    assert obstacle_gaps(sol.field, p).min() >= -1e-10


def test_coupled_step_identity_fast_path_matches_general_path():
    rng = np.random.default_rng(3)
    import scipy.sparse as sp
    M = 20
    rhs = rng.normal(size=(2, M))
    C = np.broadcast_to(np.array([[0, 0.1], [0.2, 0]]), (M, 2, 2))
    fast = coupled_step(sp.identity(M, format="csr") * 1.5, rhs, C, 0.0)
    A = sp.identity(M, format="csr") * 1.5
    A = A + sp.diags(np.full(M - 1, 1e-300), 1)        # defeats the identity shortcut
    slow = coupled_step(A.tocsr(), rhs, C, 0.0)
    assert np.allclose(fast.values, slow.values, atol=1e-14)


# --- residual ------------------------------------------------------------------------------

def test_residual_of_solution_and_stale_field():
    p = sym_problem()
    model = jump_diffusion()
    lat = lattice_1d(nodes=81, steps=80)
    sol = solve(p, model, lat)
    rep = residual(sol.field, model, SolverConfig(), p)
    assert rep.linf <= 1e-8
    assert rep.layer_width == 8        # atom 0.4 over h = 0.05
    stale = np.broadcast_to(sol.field.values[-1], sol.field.values.shape).copy()
    rep_stale = residual(sol.field.with_values(stale), model, SolverConfig(), p)
    assert rep_stale.pde_part[:, :, rep_stale.interior].max() < 0


def test_residual_is_local():
    p = sym_problem()
    model = model_1d(sigma=0.3, drift=0.2)
    lat = lattice_1d(nodes=41, steps=40)
    sol = solve(p, model, lat)
    base = residual(sol.field, model, SolverConfig(), p).residual
    vals = sol.field.values.copy()
    n, k = 20, 20
    vals[n, 0, k] += 0.1
    bumped = residual(sol.field.with_values(vals), model, SolverConfig(), p).residual
    changed = np.argwhere(np.abs(bumped - base) > 1e-12)
    assert len(changed) > 0
    assert set(changed[:, 0]) <= {n - 1, n}
    assert np.all(np.abs(changed[:, 2] - k) <= 1)


# --- properties ----------------------------------------------------------------------------

@given(st.floats(0.0, 0.5), st.floats(0.0, 1.0), st.floats(-0.3, 0.3), st.floats(0.05, 1.0))
@settings(max_examples=15, deadline=None)
def test_comparison_in_payoff_and_terminal(dpsi, dg, drift, cost):
    model = model_1d(sigma=0.25, drift=drift, atoms=[(0.3, 0.5)])
    lat = lattice_1d(nodes=21, steps=20)

    def make(a, b):
        return SwitchingProblem.constant_costs(
            [[0, cost], [cost, 0]], [SineSquared(a, 1.0), Constant(a)], [Affine(b, (0.2,))] * 2, 1.0)
    u1 = solve(make(0.0, 0.0), model, lat).field.values
    u2 = solve(make(dpsi, dg), model, lat).field.values
    assert np.all(u1 <= u2 + 1e-10)


def test_solve_is_deterministic():
    p = sym_problem(0.3)
    a = solve(p, jump_diffusion(), lattice_1d())
    b = solve(p, jump_diffusion(), lattice_1d())
    assert np.array_equal(a.field.values, b.field.values)
    assert np.array_equal(a.policy.actions, b.policy.actions)


def test_kappa_does_not_change_the_discrete_operator():
    p = sym_problem()
    model = jump_diffusion(0.3, ((0.04, 2.0), (0.4, 1.0)))
    a = solve(p, model, lattice_1d(), SolverConfig(kappa=0.1)).field.values
    b = solve(p, model, lattice_1d(), SolverConfig(kappa=0.05)).field.values
    assert np.max(np.abs(a - b)) <= 1e-12


def test_extrapolation_boundary_flags_non_monotone():
    sol = solve(time_to_go(), model_1d(sigma=0.2), lattice_1d(),
                SolverConfig(boundary=Boundary("extrapolate", 1)))
    assert sol.residual.diagnostics["monotone_boundary"] is False


# --- refinement helpers ---------------------------------------------------------------------

def test_restrict_and_richardson():
    p = time_to_go()
    lat = lattice_1d(nodes=21, steps=10)
    fine = solve(p, degenerate(), lat.refined())
    assert restrict(fine.field, lat).shape == (11, 1, 21)
    err = richardson_error(p, degenerate(), lat, [(np.array([0.0]), 0)])
    assert err.shape == (1,) and err[0] <= 1e-14


def test_transform_consistency_is_first_order():
    # the untransformed solve is exact here; the transformed one carries the
    # O(dt) error of the explicit payoff and implicit discount terms
    coarse = transform_consistency(two_mode_oracle(), degenerate(), Lattice(((-1, 1),), (21,), 20))
    fine = transform_consistency(two_mode_oracle(), degenerate(), Lattice(((-1, 1),), (21,), 40))
    assert fine.discrepancy == pytest.approx(coarse.discrepancy / 2, rel=0.05)
    assert coarse.ratio <= 2.0 and fine.ratio <= 2.0
