"""Small problem builders shared by the test modules."""
from __future__ import annotations

import numpy as np

from switchgrid.functions import (
    Affine, Constant, ConstantMatrix, ConstantVector, DiagQuadratic, LinearJump, SineSquared,
)
from switchgrid.grid import Lattice
from switchgrid.model import LevyMeasure, LevyModel, SwitchingProblem


def degenerate(dim: int = 1) -> LevyModel:
    return LevyModel.degenerate(dim)


def jump_diffusion(sigma: float = 0.3, atoms=((0.4, 1.0), (-0.3, 0.5)), drift: float = 0.0,
                   jump_scale: float = 1.0) -> LevyModel:
    """One-dimensional model with constant coefficients and a few atoms."""
    meas = LevyMeasure.atoms(list(atoms)) if atoms else LevyMeasure.empty()
    return LevyModel(1, ConstantVector((drift,)), ConstantMatrix(((sigma,),)),
                     LinearJump(((jump_scale,),)), meas)


def zero_problem(horizon: float = 1.0) -> SwitchingProblem:
    return SwitchingProblem.constant_costs([[0.0]], [Constant(0.0)], [Constant(0.0)], horizon)


def time_to_go(horizon: float = 1.0) -> SwitchingProblem:
    """psi = 1 and g = 0 on a single mode: u = T - t when the dynamics are trivial."""
    return SwitchingProblem.constant_costs([[0.0]], [Constant(1.0)], [Constant(0.0)], horizon)


def two_mode_oracle(cost: float = 0.3, slope: float = 0.5, horizon: float = 1.0) -> SwitchingProblem:
    """psi_0 = 1 + slope x, psi_1 = 0, g = 0, constant costs.

    Without dynamics and with psi_0 > 0 on [-1, 1] the value is
    u_0 = psi_0 (T - t) and u_1 = max(0, u_0 - cost).
    """
    return SwitchingProblem.constant_costs(
        [[0.0, cost], [cost, 0.0]], [Affine(1.0, (slope,)), Constant(0.0)],
        [Constant(0.0), Constant(0.0)], horizon)


def three_mode_oracle(horizon: float = 1.0) -> SwitchingProblem:
    """Three constant payoff rates with g = 0 and asymmetric costs."""
    costs = [[0.0, 0.2, 0.5], [0.4, 0.0, 0.3], [0.1, 0.3, 0.0]]
    return SwitchingProblem.constant_costs(
        costs, [Constant(0.2), Affine(0.6, (0.3,)), Constant(1.0)],
        [Constant(0.0)] * 3, horizon)


def exact_dp_deterministic(problem: SwitchingProblem, x: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Exact value of a switching problem with frozen state and time-independent data.

    With ``X_t = x`` the problem is a finite-horizon control problem over
    modes; with constant payoff rates and costs, the continuous-time value
    is attained by at most one switch at the initial time.  The value is
    ``max_j (-c_ij + r_j (T - t))`` when ``g = 0``, every switch cycle has
    positive cost and the costs satisfy the triangle inequality.
    """
    d = problem.modes
    out = np.empty((len(times), d, len(x)))
    for n, t in enumerate(times):
        rates = problem.payoffs(x, t)                    # (M, d)
        C = problem.cost_matrix(x, t)                    # (M, d, d)
        stay = rates * (problem.horizon - t)             # (M, d)
        best = stay[:, None, :] - C                      # (M, i, j)
        out[n] = best.max(axis=2).T
    return out


def sym_problem(cost: float = 1.0, horizon: float = 1.0, slope: float = 0.5) -> SwitchingProblem:
    """Two modes with a common terminal ``g = slope x`` and sine-squared payoffs."""
    g = Affine(0.0, (slope,))
    return SwitchingProblem.constant_costs(
        [[0.0, cost], [cost, 0.0]], [SineSquared(0.0, 1.0), Constant(0.4)], [g, g], horizon)


def lattice_1d(lo: float = -2.0, hi: float = 2.0, nodes: int = 41, steps: int = 40) -> Lattice:
    return Lattice(((lo, hi),), (nodes,), steps)


def quadratic_candidate(c0: float, c1: float, c2: float) -> DiagQuadratic:
    return DiagQuadratic(c0, (c1,), (c2,))
