"""Backward-in-time monotone scheme for the switching system.

One step from ``t_{n+1}`` to ``t_n`` for mode ``i``:

    rhs_i = u_i^{n+1} + dt (E^{n+1} u_i^{n+1} + psi_i(., t_{n+1}))
    min{ A^n u_i - rhs_i ,  u_i - max_{j != i}(-c_ij(., t_n) + u_j) } = 0

with ``A^n = (1 + r dt) I - dt D^n``.  ``D`` is the implicit diffusion
stencil, ``E`` the explicit upwind drift plus the nonlocal term over the
full atom list, ``r`` the problem's discount.  The coupled obstacle problem
is started from Gauss–Seidel max-projection of the continuation value and
finished by policy iteration, so the discrete system holds exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Boundary, FieldSlice, Lattice, axis_weights, interpolation_matrix
from .model import (
    LevyModel, SampleSpec, SwitchingProblem, ValidationReport, exponential_transform,
    validate_all,
)

STAY = -1


class SchemeError(RuntimeError):
    """Base class for solver aborts."""


class MonotonicityError(SchemeError):
    pass


class CFLError(SchemeError):
    def __init__(self, dt: float, bound: float, t: float):
        self.dt, self.bound, self.t = dt, bound, t
        super().__init__(f"time step dt={dt:.6g} violates the monotonicity bound "
                         f"dt <= {bound:.6g} (at t={t:.6g})")


class NoLoopError(SchemeError):
    def __init__(self, cycle, node: int, t: float):
        self.cycle, self.node, self.t = cycle, node, t
        super().__init__(f"obstacle projection did not stabilise at node {node}, t={t:.6g}: "
                         f"switching cycle {cycle} has non-positive total cost")


class NonFiniteError(SchemeError):
    def __init__(self, last_good: int):
        self.last_good = last_good
        super().__init__(f"non-finite values; last good time index {last_good}")


class ValidationFailed(SchemeError):
    def __init__(self, report: ValidationReport):
        self.report = report
        names = ", ".join(c.name for c in report.failed())
        super().__init__(f"problem fails assumption checks: {names}")


@dataclass(frozen=True)
class SolverConfig:
    kappa: float = 0.1
    boundary: Boundary = field(default_factory=Boundary)
    coupling: str = "exact"          # "exact" (policy iteration) or "split" (projection only)
    max_policy_iterations: int = 200
    obstacle_tol: float = 1e-10
    validate: bool = True
    max_cycle: int | None = None
    no_loop_margin: float = 0.0
    validation_samples: int = 9

    def __post_init__(self):
        if self.coupling not in ("exact", "split"):
            raise ValueError("coupling must be 'exact' or 'split'")


# --- discrete operators -----------------------------------------------------

def _neighbour(lattice: Lattice, offset, boundary: Boundary):
    """Flat indices/weights of ``node + offset`` (in node units) for every node."""
    idx = lattice.multi_index
    per_axis = []
    for k, m in enumerate(lattice.nodes):
        j = (idx[:, k] + int(offset[k])).astype(float)
        per_axis.append(axis_weights(j, 0.0, 1.0, m, boundary))
    K = [iw[0].shape[-1] for iw in per_axis]
    flat = np.zeros((lattice.size, 1), dtype=np.int64)
    w = np.ones((lattice.size, 1))
    for k, (ii, ww) in enumerate(per_axis):
        flat = (flat[:, :, None] + ii[:, None, :] * lattice.strides[k]).reshape(lattice.size, -1)
        w = (w[:, :, None] * ww[:, None, :]).reshape(lattice.size, -1)
    del K
    return flat, w


class _Assembler:
    def __init__(self, lattice: Lattice, boundary: Boundary):
        self.lattice = lattice
        self.boundary = boundary
        self.rows, self.cols, self.vals = [], [], []
        self.diag = np.zeros(lattice.size)
        self._cache = {}

    def add_difference(self, offset, coef):
        """Add ``coef * (u[node + offset] - u[node])`` to every row."""
        coef = np.asarray(coef, float)
        if not np.any(coef):
            return
        key = tuple(int(o) for o in offset)
        if key not in self._cache:
            self._cache[key] = _neighbour(self.lattice, key, self.boundary)
        flat, w = self._cache[key]
        rows = np.repeat(np.arange(self.lattice.size), flat.shape[1])
        self.rows.append(rows)
        self.cols.append(flat.reshape(-1))
        self.vals.append((coef[:, None] * w).reshape(-1))
        self.diag -= coef

    def add_matrix(self, mat: sp.spmatrix, coef: float):
        coo = mat.tocoo()
        self.rows.append(coo.row)
        self.cols.append(coo.col)
        self.vals.append(coef * coo.data)
        self.diag -= coef * np.asarray(mat.sum(axis=1)).reshape(-1)

    def build(self) -> sp.csr_matrix:
        n = self.lattice.size
        rows = np.concatenate(self.rows + [np.arange(n)])
        cols = np.concatenate(self.cols + [np.arange(n)])
        vals = np.concatenate(self.vals + [self.diag])
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        mat.sum_duplicates()
        mat.eliminate_zeros()
        return mat


@dataclass(frozen=True)
class Stencil:
    """Discrete local operator at one time level.

    ``diffusion`` approximates ``sum a_ij d_ij``, ``advection`` the upwinded
    ``sum a_i d_i``.  Both have non-negative off-diagonals for the clamp policy.
    """

    diffusion: sp.csr_matrix
    advection: sp.csr_matrix

    @property
    def matrix(self) -> sp.csr_matrix:
        return (self.diffusion + self.advection).tocsr()


def _check_nonneg_offdiag(mat: sp.csr_matrix, lattice: Lattice, what: str):
    coo = mat.tocoo()
    off = coo.row != coo.col
    scale = max(1.0, float(np.abs(coo.data).max(initial=0.0)))
    bad = off & (coo.data < -1e-12 * scale)
    if np.any(bad):
        node = int(coo.row[bad][0])
        raise MonotonicityError(f"{what} stencil has a negative off-diagonal weight at node {node} "
                                f"(x={lattice.points[node].tolist()})")


def diffusion_matrix(model: LevyModel, lattice: Lattice, t: float,
                     boundary: Boundary = Boundary()) -> sp.csr_matrix:
    """Second-order stencil for ``sum_ij a_ij d_ij`` with positive-coefficient cross terms."""
    pts = lattice.points
    a = model.diffusion_matrix(pts, t)
    n = lattice.dim
    h = lattice.spacing
    asm = _Assembler(lattice, boundary)
    for k in range(n):
        cross = np.zeros(lattice.size)
        for l in range(n):
            if l != k:
                cross += np.abs(a[:, k, l]) / (h[k] * h[l])
        main = a[:, k, k] / h[k] ** 2
        deficit = main - cross
        scale = np.maximum(np.abs(main), 1.0)
        if np.any(deficit < -1e-12 * scale):
            node = int(np.argmin(deficit / scale))
            raise MonotonicityError(
                f"cross-diffusion too strong for a monotone 7-point stencil at node {node} "
                f"(x={pts[node].tolist()}, t={t:g}): a_kk/h_k^2={main[node]:.6g} < "
                f"sum |a_kl|/(h_k h_l)={cross[node]:.6g}")
        e = np.zeros(n, dtype=int)
        e[k] = 1
        asm.add_difference(e, deficit)
        asm.add_difference(-e, deficit)
    for k in range(n):
        for l in range(k + 1, n):
            akl = a[:, k, l] + a[:, l, k]      # both symmetric entries
            c = np.abs(akl) / (2 * h[k] * h[l])
            ek = np.zeros(n, dtype=int)
            el = np.zeros(n, dtype=int)
            ek[k] = 1
            el[l] = 1
            pos = np.where(akl > 0, c, 0.0)
            neg = np.where(akl < 0, c, 0.0)
            asm.add_difference(ek + el, pos)
            asm.add_difference(-ek - el, pos)
            asm.add_difference(ek - el, neg)
            asm.add_difference(-ek + el, neg)
    mat = asm.build()
    if boundary.monotone:
        _check_nonneg_offdiag(mat, lattice, "diffusion")
    return mat


def upwind_matrix(b: np.ndarray, lattice: Lattice, boundary: Boundary = Boundary()) -> sp.csr_matrix:
    """First-order upwind stencil for ``sum_k b_k d_k``."""
    asm = _Assembler(lattice, boundary)
    n = lattice.dim
    for k in range(n):
        e = np.zeros(n, dtype=int)
        e[k] = 1
        asm.add_difference(e, np.maximum(b[:, k], 0.0) / lattice.spacing[k])
        asm.add_difference(-e, np.maximum(-b[:, k], 0.0) / lattice.spacing[k])
    return asm.build()


def discretize_local(model: LevyModel, lattice: Lattice, t: float,
                     boundary: Boundary = Boundary()) -> Stencil:
    drift = np.asarray(model.drift(lattice.points, t), float).reshape(lattice.size, lattice.dim)
    return Stencil(diffusion_matrix(model, lattice, t, boundary),
                   upwind_matrix(drift, lattice, boundary))


def jump_matrix(model: LevyModel, lattice: Lattice, t: float,
                boundary: Boundary = Boundary()) -> tuple[sp.csr_matrix, int]:
    """``sum_m w_m (P_m - I)``, ``P_m`` interpolating at ``x + eta(x, t, z_m)``.

    Also returns the number of displacements that left the box.
    """
    pts = lattice.points
    meas = model.levy_measure
    out = sp.csr_matrix((lattice.size, lattice.size))
    n_out = 0
    eye = sp.identity(lattice.size, format="csr")
    for z, w in zip(meas.nodes, meas.weights):
        target = pts + model.jump_amplitude(pts, t, z)
        n_out += int(np.count_nonzero(~lattice.inside(target)))
        out = out + w * (interpolation_matrix(lattice, target, boundary) - eye)
    return out.tocsr(), n_out


def explicit_matrix(model: LevyModel, lattice: Lattice, t: float,
                    boundary: Boundary = Boundary()) -> tuple[sp.csr_matrix, int]:
    """Upwinded compensated drift plus the full nonlocal term."""
    b = np.asarray(model.compensated_drift(lattice.points, t), float).reshape(lattice.size, lattice.dim)
    J, n_out = jump_matrix(model, lattice, t, boundary)
    return (upwind_matrix(b, lattice, boundary) + J).tocsr(), n_out


def explicit_dt_bound(E: sp.csr_matrix) -> float:
    """Largest dt keeping ``I + dt E`` entrywise non-negative on the diagonal."""
    worst = float(np.max(-E.diagonal(), initial=0.0))
    return math.inf if worst <= 0 else 1.0 / worst


def boundary_layer_width(model: LevyModel, lattice: Lattice, times) -> int:
    width = 1
    if len(model.levy_measure):
        for t in times:
            eta = np.abs(model.jumps(lattice.points, t))
            for k in range(lattice.dim):
                width = max(width, int(math.ceil(eta[..., k].max() / lattice.spacing[k] - 1e-12)))
    return width


@dataclass
class _Level:
    t: float
    D: sp.csr_matrix
    E: sp.csr_matrix
    out_of_box: int
    D_is_zero: bool


def _build_level(model, lattice, t, boundary) -> _Level:
    D = diffusion_matrix(model, lattice, t, boundary)
    E, n_out = explicit_matrix(model, lattice, t, boundary)
    return _Level(t, D, E, n_out, D.nnz == 0)


# --- fields and policies ----------------------------------------------------

@dataclass(frozen=True)
class ValueField:
    """``values[n, i, k]`` is mode ``i`` at time ``times[n]`` on node ``k``."""

    lattice: Lattice
    times: np.ndarray
    values: np.ndarray
    boundary: Boundary = field(default_factory=Boundary)

    @property
    def modes(self) -> int:
        return self.values.shape[1]

    def slice(self, n: int, mode: int) -> FieldSlice:
        return FieldSlice(self.lattice, self.values[n, mode], self.boundary)

    def value_at(self, x, mode: int, n: int = 0) -> np.ndarray:
        return self.slice(n, mode)(np.asarray(x, float))

    def with_values(self, values) -> "ValueField":
        return ValueField(self.lattice, self.times, np.asarray(values, float), self.boundary)


def obstacle(values: np.ndarray, C: np.ndarray) -> np.ndarray:
    """``max_{j != i}(-c_ij + u_j)`` for ``values`` (d, M) and ``C`` (M, d, d)."""
    d = values.shape[0]
    cand = -np.transpose(C, (1, 2, 0)) + values[None, :, :]      # (i, j, M)
    cand[np.arange(d), np.arange(d)] = -np.inf
    return cand.max(axis=1)


def obstacle_gaps(field: ValueField, problem: SwitchingProblem) -> np.ndarray:
    """``u_i - max_{j != i}(-c_ij + u_j)`` for every time, mode and node."""
    pts = field.lattice.points
    out = np.empty_like(field.values)
    for n, t in enumerate(field.times):
        if problem.modes == 1:
            out[n] = np.inf
            continue
        out[n] = field.values[n] - obstacle(field.values[n], problem.cost_matrix(pts, t))
    return out


@dataclass(frozen=True)
class SwitchPolicy:
    """``actions[n, i, k]``: ``-1`` to stay in mode ``i``, else the target mode."""

    lattice: Lattice
    times: np.ndarray
    actions: np.ndarray

    def action(self, n: int, mode, node) -> np.ndarray:
        return self.actions[n, mode, node]


def _targets(values, C, rows_mode, tol):
    """Lowest-index j attaining the obstacle max, per (mode, node)."""
    d, M = values.shape
    cand = -np.transpose(C, (1, 2, 0)) + values[None, :, :]
    cand[np.arange(d), np.arange(d)] = -np.inf
    best = cand.max(axis=1, keepdims=True)
    hit = cand >= best - tol
    return np.argmax(hit, axis=1)


def project_obstacles(v: np.ndarray, C: np.ndarray, t: float = 0.0):
    """Gauss–Seidel max-projection of ``v`` (d, M) onto the coupled obstacles.

    Returns the projected values.  Terminates within ``d`` sweeps when every
    switching cycle has positive cost; otherwise raises :class:`NoLoopError`.
    """
    d = v.shape[0]
    u = v.copy()
    if d == 1:
        return u
    idx = np.arange(d)
    for _ in range(d + 1):
        changed = np.zeros(u.shape[1], dtype=bool)
        for i in range(d):
            cand = -C[:, i, :].T + u                 # (j, M)
            cand[i] = -np.inf
            obs = cand.max(axis=0)
            up = obs > u[i]
            if np.any(up):
                u[i, up] = obs[up]
                changed |= up
        if not np.any(changed):
            return u
    node = int(np.argmax(changed))
    cand = -np.transpose(C[node], (0, 1)) + u[:, node][None, :]
    cand[idx, idx] = -np.inf
    ptr = cand.argmax(axis=1)
    seen, i = [], 0
    while i not in seen:
        seen.append(i)
        i = int(ptr[i])
    cycle = tuple(seen[seen.index(i):]) + (i,)
    raise NoLoopError(cycle, node, t)


class _StepResult(NamedTuple):
    values: np.ndarray
    actions: np.ndarray
    iterations: int


def _policy_solve(A, rhs, C, policy):
    d, M = rhs.shape
    rows, cols, vals = [], [], []
    b = np.empty(d * M)
    A = A.tocsr()
    for i in range(d):
        stay = np.flatnonzero(policy[i] == STAY)
        if stay.size:
            sub = A[stay].tocoo()
            rows.append(i * M + stay[sub.row])
            cols.append(i * M + sub.col)
            vals.append(sub.data)
            b[i * M + stay] = rhs[i, stay]
        sw = np.flatnonzero(policy[i] != STAY)
        if sw.size:
            j = policy[i, sw]
            rows += [i * M + sw, i * M + sw]
            cols += [i * M + sw, j * M + sw]
            vals += [np.ones(sw.size), -np.ones(sw.size)]
            b[i * M + sw] = -C[sw, i, j]
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(d * M, d * M))
    u = spla.spsolve(mat.tocsc(), b)
    return u.reshape(d, M)


def coupled_step(A: sp.csr_matrix, rhs: np.ndarray, C: np.ndarray, t: float,
                 coupling: str = "exact", max_iter: int = 200) -> _StepResult:
    """Solve ``min{A u_i - rhs_i, u_i - max_j(-c_ij + u_j)} = 0`` for all modes."""
    d, M = rhs.shape
    identity_like = _is_scaled_identity(A)
    if identity_like is not None:
        v = rhs / identity_like
    else:
        lu = spla.splu(A.tocsc())
        v = np.stack([lu.solve(r) for r in rhs])
    u = project_obstacles(v, C, t)
    if d == 1:
        return _StepResult(u, np.full((1, M), STAY, dtype=np.int64), 0)
    scale = max(1.0, float(np.abs(u).max()))
    tol = 1e-12 * scale
    policy = np.where(u > v, _targets(u, C, None, tol), STAY)
    if coupling == "split" or identity_like is not None:
        return _StepResult(u, policy, 0)
    modes = np.arange(d)
    solves = 0

    def branch_values(u):
        stay_val = np.stack([A @ u[i] for i in range(d)]) - rhs             # (d, M)
        sw_val = u[:, None, :] + np.transpose(C, (1, 2, 0)) - u[None, :, :]  # (i, j, M)
        sw_val[modes, modes] = np.inf
        return np.concatenate([stay_val[:, None, :], sw_val], axis=1)       # (i, 1+d, M)

    for _ in range(max_iter):
        branches = branch_values(u)
        current = np.take_along_axis(branches, (policy + 1)[:, None, :], axis=1)[:, 0, :]
        if np.abs(current).max() > tol:
            u = _policy_solve(A, rhs, C, policy)
            solves += 1
            if not np.all(np.isfinite(u)):
                raise SchemeError(f"policy iteration produced a singular system at t={t:g}")
            branches = branch_values(u)
            current = np.take_along_axis(branches, (policy + 1)[:, None, :], axis=1)[:, 0, :]
        best = branches.min(axis=1)
        improve = current > best + tol
        if not np.any(improve):
            policy = np.where(policy == STAY, STAY, _targets(u, C, None, tol))
            return _StepResult(u, policy, solves)
        choice = branches.argmin(axis=1) - 1
        policy = np.where(improve, choice, policy)
    raise SchemeError(f"policy iteration did not converge in {max_iter} iterations at t={t:g}")


def _is_scaled_identity(A: sp.csr_matrix):
    diag = A.diagonal()
    if A.nnz == np.count_nonzero(diag) and np.allclose(diag, diag[0], rtol=0, atol=0):
        if (A - sp.diags(diag)).count_nonzero() == 0:
            return float(diag[0])
    return None


# --- residuals ----------------------------------------------------------------

@dataclass
class ResidualReport:
    """Discrete residual ``min{-H^h u_i - psi_i, u_i - obstacle_i}``.

    ``residual`` has shape ``(n_t, d, M)`` (the terminal level is data);
    norms are taken over interior nodes, i.e. excluding ``layer_width``
    nodes at every face.
    """

    residual: np.ndarray
    pde_part: np.ndarray
    obstacle_part: np.ndarray
    interior: np.ndarray
    layer_width: int
    linf: float
    l1: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {"linf": self.linf, "l1": self.l1, "layer_width": self.layer_width,
                "interior_nodes": int(self.interior.sum()),
                "min_residual": float(self.residual[:, :, self.interior].min(initial=0.0)),
                "max_residual": float(self.residual[:, :, self.interior].max(initial=0.0)),
                "diagnostics": self.diagnostics}


def _levels(model, lattice, times, boundary):
    return [_build_level(model, lattice, t, boundary) for t in times]


def _residual_from_levels(values, levels, lattice, problem, layer, dt):
    n_t = len(levels) - 1
    d = problem.modes
    pts = lattice.points
    pde = np.empty((n_t, d, lattice.size))
    obs = np.full((n_t, d, lattice.size), np.inf)
    r = problem.discount
    for n in range(n_t):
        lo, hi = levels[n], levels[n + 1]
        psi = problem.payoffs(pts, hi.t)
        for i in range(d):
            un, up = values[n, i], values[n + 1, i]
            pde[n, i] = ((1 + r * dt) * un - dt * (lo.D @ un) - up - dt * (hi.E @ up)) / dt - psi[:, i]
        if d > 1:
            obs[n] = values[n] - obstacle(values[n], problem.cost_matrix(pts, lo.t))
    res = np.minimum(pde, obs)
    interior = lattice.interior_mask(layer)
    sel = np.abs(res[:, :, interior])
    linf = float(sel.max(initial=0.0))
    l1 = float(sel.sum() * np.prod(lattice.spacing) * dt)
    return ResidualReport(res, pde, obs, interior, layer, linf, l1)


def residual(field: ValueField, model: LevyModel, cfg: SolverConfig,
             problem: SwitchingProblem) -> ResidualReport:
    """Discrete min-residual of an arbitrary field under the scheme's operator."""
    lattice = field.lattice
    levels = _levels(model, lattice, field.times, cfg.boundary)
    layer = boundary_layer_width(model, lattice, field.times)
    dt = float(field.times[1] - field.times[0])
    return _residual_from_levels(field.values, levels, lattice, problem, layer, dt)


# --- driver -------------------------------------------------------------------

class Solution(NamedTuple):
    field: ValueField
    policy: SwitchPolicy
    residual: ResidualReport


def default_sample_spec(problem: SwitchingProblem, lattice: Lattice, samples: int = 9) -> SampleSpec:
    return SampleSpec.for_problem(lattice.box, problem, samples)


def step_backward(u_next: np.ndarray, level_n: _Level, level_next: _Level,
                  problem: SwitchingProblem, lattice: Lattice, dt: float,
                  cfg: SolverConfig) -> _StepResult:
    """One backward step: explicit part on ``u_next``, implicit diffusion + obstacles at ``t_n``."""
    bound = explicit_dt_bound(level_next.E)
    if dt > bound * (1 + 1e-12):
        raise CFLError(dt, bound, level_next.t)
    pts = lattice.points
    psi = problem.payoffs(pts, level_next.t)
    rhs = np.stack([u_next[i] + dt * (level_next.E @ u_next[i] + psi[:, i])
                    for i in range(problem.modes)])
    n = lattice.size
    A = ((1.0 + problem.discount * dt) * sp.identity(n, format="csr") - dt * level_n.D).tocsr()
    C = problem.cost_matrix(pts, level_n.t)
    return coupled_step(A, rhs, C, level_n.t, cfg.coupling, cfg.max_policy_iterations)


def solve(problem: SwitchingProblem, model: LevyModel, lattice: Lattice,
          cfg: SolverConfig = SolverConfig(), force: bool = False) -> Solution:
    """Terminal data, ``n_t`` backward steps, residual report."""
    if model.dim_state != lattice.dim:
        raise ValueError("model and lattice dimensions differ")
    if cfg.validate and not force:
        report = validate_all(problem, model, default_sample_spec(problem, lattice, cfg.validation_samples),
                              cfg.max_cycle, cfg.no_loop_margin, include_triangle=False)
        if not report.passed:
            raise ValidationFailed(report)
    times = lattice.times(problem.horizon)
    dt = problem.horizon / lattice.time_steps
    d = problem.modes
    levels = _levels(model, lattice, times, cfg.boundary)
    values = np.empty((lattice.time_steps + 1, d, lattice.size))
    actions = np.full_like(values, STAY, dtype=np.int64)
    values[-1] = problem.terminals(lattice.points).T
    iterations = 0
    for n in range(lattice.time_steps - 1, -1, -1):
        step = step_backward(values[n + 1], levels[n], levels[n + 1], problem, lattice, dt, cfg)
        if not np.all(np.isfinite(step.values)):
            raise NonFiniteError(n + 1)
        values[n] = step.values
        actions[n] = step.actions
        iterations += step.iterations
    field_ = ValueField(lattice, times, values, cfg.boundary)
    layer = boundary_layer_width(model, lattice, times)
    report = _residual_from_levels(values, levels, lattice, problem, layer, dt)
    report.diagnostics.update({
        "policy_iterations": iterations,
        "out_of_box_jumps": int(sum(lv.out_of_box for lv in levels[1:])),
        "dt": dt,
        "dt_bound": min(explicit_dt_bound(lv.E) for lv in levels[1:]),
        "monotone_boundary": cfg.boundary.monotone,
    })
    return Solution(field_, SwitchPolicy(lattice, times, actions), report)


def self_convergence_error(problem: SwitchingProblem, model: LevyModel, lattice: Lattice,
                           cfg: SolverConfig = SolverConfig(), force: bool = False,
                           coarse: Solution | None = None) -> float:
    """L-infinity distance between the solve on ``lattice`` and on its refinement.

    Compared at the coarse nodes and times, over interior nodes only.
    """
    coarse = coarse or solve(problem, model, lattice, cfg, force)
    fine = solve(problem, model, lattice.refined(), cfg, force)
    return float(np.max(np.abs(restrict(fine.field, lattice) - coarse.field.values)
                        [:, :, coarse.residual.interior], initial=0.0))


def restrict(field: ValueField, coarse: Lattice) -> np.ndarray:
    """Values of a refined field at the nodes and times of ``coarse``."""
    fine = field.lattice
    step_t = (len(field.times) - 1) // coarse.time_steps
    vals = field.values[::step_t]
    grid = vals.reshape(vals.shape[:2] + fine.nodes)
    sl = (slice(None), slice(None)) + tuple(slice(None, None, (mf - 1) // (mc - 1))
                                            for mf, mc in zip(fine.nodes, coarse.nodes))
    return grid[sl].reshape(vals.shape[:2] + (coarse.size,))


def richardson_error(problem: SwitchingProblem, model: LevyModel, lattice: Lattice, points,
                     cfg: SolverConfig = SolverConfig(), order: int = 1, force: bool = False,
                     coarse: Solution | None = None) -> np.ndarray:
    """Estimated error of the ``lattice`` solve at ``(x, mode)`` probes, at ``t = 0``.

    Uses ``|u_h - u_{h/2}| * 2^p / (2^p - 1)`` with the scheme order ``p``
    (one for upwinded drift and linear jump interpolation).
    """
    coarse = coarse or solve(problem, model, lattice, cfg, force)
    fine = solve(problem, model, lattice.refined(), cfg, force)
    factor = 2.0 ** order / (2.0 ** order - 1.0)
    out = []
    for x, mode in points:
        x = np.atleast_1d(np.asarray(x, float))[None, :]
        out.append(factor * abs(float(coarse.field.value_at(x, mode)[0] - fine.field.value_at(x, mode)[0])))
    return np.array(out)


class TransformCheck(NamedTuple):
    discrepancy: float      # max interior |e^t u - u~|
    self_convergence: float  # e^t-weighted error of u plus the error of u~
    ratio: float


def transform_consistency(problem: SwitchingProblem, model: LevyModel, lattice: Lattice,
                          cfg: SolverConfig = SolverConfig(), force: bool = False) -> TransformCheck:
    """Compare ``e^t u`` with the solve of the exponentially transformed system.

    The reference scale is the measured self-convergence error of both
    solves (``lattice`` against its refinement), the one of ``u`` weighted
    by ``e^t`` so that both are in the units of the transformed values.
    """
    tp = exponential_transform(problem)
    coarse = solve(problem, model, lattice, cfg, force)
    coarse_t = solve(tp, model, lattice, cfg, force)
    fine = solve(problem, model, lattice.refined(), cfg, force)
    fine_t = solve(tp, model, lattice.refined(), cfg, force)
    inner = coarse.residual.interior
    growth = np.exp(coarse.field.times)[:, None, None]
    gap = np.abs(growth * coarse.field.values - coarse_t.field.values)[:, :, inner].max()
    err_u = (growth * np.abs(restrict(fine.field, lattice) - coarse.field.values))[:, :, inner].max()
    err_t = np.abs(restrict(fine_t.field, lattice) - coarse_t.field.values)[:, :, inner].max()
    scale = float(err_u + err_t)
    if scale > 0:
        ratio = float(gap) / scale
    else:
        ratio = 0.0 if gap == 0 else math.inf
    return TransformCheck(float(gap), scale, ratio)
