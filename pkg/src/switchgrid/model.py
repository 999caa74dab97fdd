"""Problem data and structural-assumption validators.

The operator is ``H = L + I`` with

    L phi = sum a_ij d_ij phi + sum a_i d_i phi + d_t phi,   a = sigma sigma^T
    I phi = sum_m w_m [phi(x + eta(x,t,z_m)) - phi(x) - 1{|z_m| <= 1} eta . D phi]

where the Lévy measure is a finite list of weighted atoms ``(z_m, w_m)``.
Validators sample a user-supplied box; they make no claim between samples.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .functions import (
    Constant, JumpField, MatrixField, ScalarField, Scaled, VectorField, ZeroJump,
    zero_diffusion, zero_drift,
)


class InvalidMeasureError(ValueError):
    """Raised for Lévy atoms with non-positive weight or inside the cutoff."""


# --- Lévy measure ---------------------------------------------------------

@dataclass(frozen=True)
class LevyMeasure:
    """Finite quadrature representation of a Lévy measure.

    ``nodes`` has shape ``(M, l)``, ``weights`` shape ``(M,)``.  Atoms closer
    to the origin than ``r_min`` are not allowed: the singularity at 0 is
    removed by truncation.
    """

    nodes: np.ndarray
    weights: np.ndarray
    r_min: float = 1e-8

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if nodes.ndim == 1:
            nodes = nodes.reshape(len(weights), -1) if len(weights) else nodes.reshape(0, 1)
        if nodes.shape[0] != weights.shape[0]:
            raise InvalidMeasureError("nodes and weights differ in length")
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise InvalidMeasureError(f"atom weights must be positive, got {weights.tolist()}")
        if self.r_min <= 0:
            raise InvalidMeasureError("r_min must be positive")
        norms = np.linalg.norm(nodes, axis=1)
        if np.any(norms < self.r_min):
            raise InvalidMeasureError(
                f"atom at |z|={norms.min():g} lies inside the cutoff r_min={self.r_min:g}")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def empty(cls, dim_jump: int = 1) -> "LevyMeasure":
        return cls(np.zeros((0, dim_jump)), np.zeros(0))

    @classmethod
    def atoms(cls, pairs: Sequence[tuple], r_min: float = 1e-8) -> "LevyMeasure":
        """Build from ``[(z, w), ...]`` where ``z`` is a scalar or a vector."""
        if not pairs:
            return cls.empty()
        nodes = np.array([np.atleast_1d(np.asarray(z, float)) for z, _ in pairs])
        weights = np.array([float(w) for _, w in pairs])
        return cls(nodes, weights, r_min)

    def __len__(self):
        return len(self.weights)

    def __hash__(self):
        return hash((self.nodes.tobytes(), self.weights.tobytes(), self.r_min))

    def __eq__(self, other):
        return (isinstance(other, LevyMeasure) and self.r_min == other.r_min
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.weights, other.weights))

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.nodes, axis=1)

    @property
    def intensity(self) -> float:
        return float(self.weights.sum())

    def merge(self, other: "LevyMeasure") -> "LevyMeasure":
        return LevyMeasure(np.vstack([self.nodes, other.nodes]),
                           np.concatenate([self.weights, other.weights]),
                           min(self.r_min, other.r_min))


def gauss_legendre_measure(density, r_min: float, r_max: float, nodes: int,
                           symmetric: bool = True) -> LevyMeasure:
    """Quadrature atoms for a one-dimensional Lévy density on ``|z| in [r_min, r_max]``.

    ``density(r)`` is evaluated at the positive Gauss–Legendre nodes; with
    ``symmetric`` the mirrored atoms at ``-r`` get ``density(-r)`` when the
    callable accepts negative input, so asymmetric densities are supported.
    """
    if not 0 < r_min < r_max:
        raise InvalidMeasureError("need 0 < r_min < r_max")
    xi, wi = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * (r_max - r_min) * xi + 0.5 * (r_max + r_min)
    w = 0.5 * (r_max - r_min) * wi
    zs, ws = [r], [w * np.asarray(density(r), float)]
    if symmetric:
        zs.append(-r)
        ws.append(w * np.asarray(density(-r), float))
    z = np.concatenate(zs)
    wt = np.concatenate(ws)
    keep = wt > 0
    return LevyMeasure(z[keep].reshape(-1, 1), wt[keep], r_min)


def tempered_stable_density(c: float, alpha: float, beta: float = 0.0):
    """``c exp(-beta |z|) / |z|^(1 + alpha)``."""
    return lambda z: c * np.exp(-beta * np.abs(z)) / np.abs(z) ** (1.0 + alpha)


# --- model / problem --------------------------------------------------------

@dataclass(frozen=True)
class LevyModel:
    """Coefficients of ``H = L + I`` plus the constants the validators test against.

    ``lipschitz_bound`` is A, ``jump_bound`` is B-tilde, ``measure_bound`` is
    A-tilde and ``exp_tail_rate`` is Lambda.
    """

    dim_state: int
    drift: VectorField
    diffusion_factor: MatrixField
    jump_amplitude: JumpField
    levy_measure: LevyMeasure
    exp_tail_rate: float = 1.0
    lipschitz_bound: float = 10.0
    jump_bound: float = 10.0
    measure_bound: float = 100.0

    def __post_init__(self):
        if self.dim_state < 1:
            raise ValueError("dim_state must be >= 1")
        if self.exp_tail_rate <= 0:
            raise ValueError("exp_tail_rate must be positive")

    @property
    def dim_jump(self) -> int:
        return self.levy_measure.dim

    @classmethod
    def degenerate(cls, dim_state: int = 1) -> "LevyModel":
        """a = 0, sigma = 0, no jumps: H reduces to d/dt."""
        return cls(dim_state, zero_drift(dim_state), zero_diffusion(dim_state),
                   ZeroJump(dim_state), LevyMeasure.empty())

    def diffusion_matrix(self, x, t: float) -> np.ndarray:
        s = self.diffusion_factor(x, t)
        return s @ np.swapaxes(s, -1, -2)

    def jumps(self, x, t: float) -> np.ndarray:
        """Displacements for every atom: shape ``(M, ..., N)``."""
        x = np.asarray(x, float)
        m = len(self.levy_measure)
        if m == 0:
            return np.zeros((0,) + x.shape)
        return np.stack([self.jump_amplitude(x, t, z) for z in self.levy_measure.nodes])

    def compensated_drift(self, x, t: float) -> np.ndarray:
        """``a(x,t) - sum_{|z_m| <= 1} w_m eta(x,t,z_m)``: the net first-order coefficient."""
        b = np.asarray(self.drift(x, t), float)
        meas = self.levy_measure
        for z, w, r in zip(meas.nodes, meas.weights, meas.norms):
            if r <= 1.0:
                b = b - w * self.jump_amplitude(x, t, z)
        return b


@dataclass(frozen=True)
class SwitchingProblem:
    """The d-mode system with payoffs, switching costs and terminal data.

    ``costs[i][j]`` is the cost of switching from mode ``i`` to ``j``
    (``None`` on the diagonal).  ``discount`` adds a zeroth-order term
    ``+ discount * u`` to ``-H u``; it is zero for the problem proper and
    one after the exponential time transform.
    """

    modes: int
    payoff: tuple[ScalarField, ...]
    costs: tuple[tuple[ScalarField | None, ...], ...]
    terminal: tuple[ScalarField, ...]
    horizon: float
    growth_bound: float = 10.0
    growth_exponent: float = 1.0
    discount: float = 0.0

    def __post_init__(self):
        d = self.modes
        if d < 1:
            raise ValueError("modes must be >= 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if len(self.payoff) != d or len(self.terminal) != d:
            raise ValueError("payoff and terminal need one entry per mode")
        if len(self.costs) != d or any(len(row) != d for row in self.costs):
            raise ValueError("costs must be a d x d table")
        object.__setattr__(self, "payoff", tuple(self.payoff))
        object.__setattr__(self, "terminal", tuple(self.terminal))
        object.__setattr__(self, "costs", tuple(tuple(r) for r in self.costs))

    @classmethod
    def constant_costs(cls, matrix, payoff, terminal, horizon, **kw) -> "SwitchingProblem":
        """Convenience constructor from a numeric cost matrix (diagonal ignored)."""
        m = np.asarray(matrix, float)
        d = m.shape[0]
        costs = tuple(tuple(None if i == j else Constant(float(m[i, j])) for j in range(d))
                      for i in range(d))
        return cls(d, tuple(payoff), costs, tuple(terminal), horizon, **kw)

    def cost(self, i: int, j: int, x, t: float) -> np.ndarray:
        c = self.costs[i][j]
        if i == j or c is None:
            return np.zeros(np.asarray(x, float).shape[:-1])
        return c(x, t)

    def cost_matrix(self, x, t: float) -> np.ndarray:
        """All costs at once, shape ``(..., d, d)`` with zero diagonal."""
        x = np.asarray(x, float)
        d = self.modes
        out = np.zeros(x.shape[:-1] + (d, d))
        for i in range(d):
            for j in range(d):
                if i != j:
                    out[..., i, j] = self.cost(i, j, x, t)
        return out

    def payoffs(self, x, t: float) -> np.ndarray:
        x = np.asarray(x, float)
        return np.stack([p(x, t) for p in self.payoff], axis=-1)

    def terminals(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.stack([g(x, self.horizon) for g in self.terminal], axis=-1)

    @property
    def common_terminal(self) -> ScalarField | None:
        first = self.terminal[0]
        return first if all(g == first for g in self.terminal) else None


def exponential_transform(problem: SwitchingProblem) -> SwitchingProblem:
    """Data of the system solved by ``e^t u``.

    psi -> e^t psi, c -> e^t c, g -> e^T g and a unit zeroth-order term.
    """
    T = problem.horizon
    costs = tuple(tuple(None if c is None else Scaled(c, 1.0) for c in row)
                  for row in problem.costs)
    return SwitchingProblem(
        problem.modes,
        tuple(Scaled(p, 1.0) for p in problem.payoff),
        costs,
        tuple(Scaled(g, 1.0, fixed_time=T) for g in problem.terminal),
        T, problem.growth_bound, problem.growth_exponent,
        problem.discount + 1.0,
    )


# --- validation reports -----------------------------------------------------

@dataclass(frozen=True)
class SampleSpec:
    """Where validators look: a tensor grid over ``box`` at ``times``.

    With ``refine`` the Lipschitz checks are repeated at half the spacing.
    """

    box: tuple[tuple[float, float], ...]
    samples: int = 9
    times: tuple[float, ...] = (0.0,)
    refine: bool = True

    def __post_init__(self):
        if self.samples < 2:
            raise ValueError("need at least 2 samples per dimension")
        object.__setattr__(self, "box", tuple((float(a), float(b)) for a, b in self.box))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))

    @classmethod
    def for_problem(cls, box, problem: SwitchingProblem, samples: int = 9, n_times: int = 3):
        return cls(tuple(box), samples, tuple(np.linspace(0.0, problem.horizon, n_times)))

    def axes(self, samples: int | None = None):
        n = samples or self.samples
        return [np.linspace(a, b, n) for a, b in self.box]

    def points(self, samples: int | None = None) -> np.ndarray:
        axes = self.axes(samples)
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def to_dict(self):
        return {"box": [list(b) for b in self.box], "samples": self.samples,
                "times": list(self.times), "refine": self.refine}


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    measured: float | None = None
    bound: float | None = None
    witness: dict | None = None
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "measured": _jsonable(self.measured),
                "bound": _jsonable(self.bound), "witness": _jsonable(self.witness),
                "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)
    sample_spec: SampleSpec | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def extend(self, other: "ValidationReport") -> "ValidationReport":
        self.checks.extend(other.checks)
        if self.sample_spec is None:
            self.sample_spec = other.sample_spec
        return self

    def to_dict(self):
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks],
                "sample_spec": None if self.sample_spec is None else self.sample_spec.to_dict()}


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if np.isfinite(f) else str(f)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _witness(points, t, k) -> dict:
    return {"x": [float(c) for c in points[k]], "t": float(t)}


# --- operator validators ----------------------------------------------------

def _axis_quotients(values: np.ndarray, axes) -> np.ndarray:
    """Max over axis-neighbour pairs of |f(x) - f(y)| / |x - y|.

    ``values`` has shape ``grid_shape + comp_shape``; returns the per-node
    maximum quotient (attributed to the left node of each pair).
    """
    grid_nd = len(axes)
    q = np.zeros(values.shape[:grid_nd])
    for k, ax in enumerate(axes):
        h = np.diff(ax)
        diff = np.abs(np.diff(values, axis=k))
        diff = diff.reshape(diff.shape[:grid_nd] + (-1,)).max(axis=-1) if diff.ndim > grid_nd else diff
        shape = [1] * grid_nd
        shape[k] = -1
        quot = diff / h.reshape(shape)
        pad = [(0, 0)] * grid_nd
        pad[k] = (0, 1)
        q = np.maximum(q, np.pad(quot, pad))
    return q


def _coeff_values(model: LevyModel, spec: SampleSpec, samples: int, t: float):
    axes = spec.axes(samples)
    pts = spec.points(samples)
    shape = tuple(len(a) for a in axes)
    n = model.dim_state
    a = np.asarray(model.drift(pts, t), float).reshape(shape + (n,))
    s = np.asarray(model.diffusion_factor(pts, t), float).reshape(shape + (n, n))
    return axes, pts, a, s


def validate_coefficients(model: LevyModel, spec: SampleSpec,
                          growth_ratio_limit: float = 1.25) -> ValidationReport:
    """Sampled Lipschitz / linear-growth / PSD checks for the local coefficients.

    The Lipschitz estimate is the largest finite-difference quotient of the
    drift and diffusion factor along grid axes, at fixed ``t``.  With
    ``spec.refine`` the estimate is recomputed at half spacing; a ratio above
    ``growth_ratio_limit`` marks the quotient as unbounded under refinement.
    """
    report = ValidationReport(sample_spec=spec)
    A = model.lipschitz_bound
    worst_lip, lip_wit = 0.0, None
    worst_growth, growth_wit = 0.0, None
    worst_ratio, ratio_wit = 1.0, None
    psd_fail, nonfinite = None, None
    worst_eig = 0.0
    for t in spec.times:
        axes, pts, a, s = _coeff_values(model, spec, spec.samples, t)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(s))):
            bad = ~(np.isfinite(a.reshape(len(pts), -1)).all(1) & np.isfinite(s.reshape(len(pts), -1)).all(1))
            nonfinite = nonfinite or _witness(pts, t, int(np.argmax(bad)))
            continue
        grid_nd = len(axes)
        comp = np.concatenate([a.reshape(a.shape[:grid_nd] + (-1,)),
                               s.reshape(s.shape[:grid_nd] + (-1,))], axis=-1)
        q = _axis_quotients(comp, axes).reshape(-1)
        k = int(np.argmax(q))
        if q[k] > worst_lip:
            worst_lip, lip_wit = float(q[k]), _witness(pts, t, k)
        if spec.refine:
            fine = 2 * spec.samples - 1
            axes_f, pts_f, a_f, s_f = _coeff_values(model, spec, fine, t)
            if np.all(np.isfinite(a_f)) and np.all(np.isfinite(s_f)):
                comp_f = np.concatenate([a_f.reshape(a_f.shape[:grid_nd] + (-1,)),
                                         s_f.reshape(s_f.shape[:grid_nd] + (-1,))], axis=-1)
                q_f = _axis_quotients(comp_f, axes_f).reshape(-1)
                ratio = q_f.max() / q[k] if q[k] > 0 else (np.inf if q_f.max() > 0 else 1.0)
                if ratio > worst_ratio:
                    worst_ratio, ratio_wit = float(ratio), _witness(pts_f, t, int(np.argmax(q_f)))
        # linear growth: |a_i| + |sigma_ij| <= A (1 + |x|)
        flat_a = np.abs(a.reshape(len(pts), -1))
        flat_s = np.abs(s.reshape(len(pts), -1))
        combo = (flat_a.max(axis=1) + flat_s.max(axis=1)) / (1.0 + np.linalg.norm(pts, axis=1))
        k = int(np.argmax(combo))
        if combo[k] > worst_growth:
            worst_growth, growth_wit = float(combo[k]), _witness(pts, t, k)
        mat = s.reshape(len(pts), model.dim_state, model.dim_state)
        amat = mat @ np.swapaxes(mat, -1, -2)
        eig = np.linalg.eigvalsh(0.5 * (amat + np.swapaxes(amat, -1, -2)))
        scale = max(1.0, float(np.abs(amat).max()))
        kmin = int(np.argmin(eig.min(axis=1)))
        worst_eig = min(worst_eig, float(eig.min()))
        if eig.min() < -1e-12 * scale and psd_fail is None:
            psd_fail = _witness(pts, t, kmin)

    if nonfinite is not None:
        report.checks.append(Check("coefficients_finite", False, witness=nonfinite,
                                   detail="non-finite drift or diffusion value"))
    else:
        report.checks.append(Check("coefficients_finite", True))
    lip_ok = worst_lip <= A and worst_ratio <= growth_ratio_limit
    detail = ""
    if worst_ratio > growth_ratio_limit:
        detail = (f"difference quotient grows by factor {worst_ratio:.3f} when the sample "
                  "spacing is halved")
    report.checks.append(Check("coefficients_lipschitz", bool(lip_ok), worst_lip, A,
                               None if lip_ok else (ratio_wit if worst_ratio > growth_ratio_limit else lip_wit),
                               detail))
    report.checks.append(Check("coefficients_growth", bool(worst_growth <= A), worst_growth, A,
                               None if worst_growth <= A else growth_wit))
    report.checks.append(Check("diffusion_psd", psd_fail is None, worst_eig, 0.0, psd_fail))
    return report


def lipschitz_estimate(report: ValidationReport) -> float:
    return float(report["coefficients_lipschitz"].measured)


def growth_constant(report: ValidationReport) -> float:
    return float(report["coefficients_growth"].measured)


def levy_masses(measure: LevyMeasure, rate: float) -> tuple[float, float]:
    """``sum_{|z|<=1} |z|^2 w`` and ``sum_{|z|>1} exp(rate |z|) w``."""
    r = measure.norms
    w = measure.weights
    small = r <= 1.0
    return float(np.sum(r[small] ** 2 * w[small])), float(np.sum(np.exp(rate * r[~small]) * w[~small]))


def validate_levy(measure: LevyMeasure, rate: float, bound: float) -> tuple[float, float, bool]:
    """Second-moment / exponential-tail condition on the Lévy measure."""
    small, tail = levy_masses(measure, rate)
    ok = bool(np.isfinite(small) and np.isfinite(tail) and small + tail <= bound)
    return small, tail, ok


def check_levy(model: LevyModel) -> ValidationReport:
    small, tail, ok = validate_levy(model.levy_measure, model.exp_tail_rate, model.measure_bound)
    wit = None
    if not ok and len(model.levy_measure):
        r = model.levy_measure.norms
        contrib = np.where(r <= 1, r ** 2, np.exp(model.exp_tail_rate * r)) * model.levy_measure.weights
        k = int(np.argmax(contrib))
        wit = {"z": model.levy_measure.nodes[k].tolist(), "w": float(model.levy_measure.weights[k])}
    return ValidationReport([Check("levy_moments", ok, small + tail, model.measure_bound, wit,
                                   f"small_mass={small:.6g} tail_mass={tail:.6g}")])


def validate_jump_amplitude(model: LevyModel, spec: SampleSpec) -> ValidationReport:
    """|eta_k| <= B min(|z|,1) and its Lipschitz quotient in x, at every atom."""
    report = ValidationReport(sample_spec=spec)
    meas = model.levy_measure
    B = model.jump_bound
    worst_size, size_wit = 0.0, None
    worst_lip, lip_wit = 0.0, None
    for t in spec.times:
        axes = spec.axes()
        pts = spec.points()
        shape = tuple(len(a) for a in axes)
        for z, r in zip(meas.nodes, meas.norms):
            eta = np.asarray(model.jump_amplitude(pts, t, z), float)
            cap = min(r, 1.0)
            size = np.abs(eta).max(axis=-1) / cap
            k = int(np.argmax(size))
            if size[k] > worst_size:
                worst_size = float(size[k])
                size_wit = dict(_witness(pts, t, k), z=z.tolist())
            q = _axis_quotients(eta.reshape(shape + (-1,)), axes).reshape(-1) / cap
            k = int(np.argmax(q))
            if q[k] > worst_lip:
                worst_lip = float(q[k])
                lip_wit = dict(_witness(pts, t, k), z=z.tolist())
    report.checks.append(Check("jump_size", worst_size <= B, worst_size, B,
                               None if worst_size <= B else size_wit))
    report.checks.append(Check("jump_lipschitz", worst_lip <= B, worst_lip, B,
                               None if worst_lip <= B else lip_wit))
    return report


# --- switching-cost validators --------------------------------------------

def _cost_samples(problem: SwitchingProblem, spec: SampleSpec, times=None):
    pts = spec.points()
    times = spec.times if times is None else times
    return pts, [(t, problem.cost_matrix(pts, t)) for t in times]


def simple_cycles(d: int, max_len: int):
    """Closed index cycles of distinct modes, canonical (smallest index first)."""
    for k in range(2, max_len + 1):
        for first in range(d):
            for rest in itertools.permutations(range(first + 1, d), k - 1):
                yield (first,) + rest


def check_no_loop(problem: SwitchingProblem, spec: SampleSpec, max_cycle: int | None = None,
                  margin: float = 0.0) -> ValidationReport:
    """Every simple cycle of length <= ``max_cycle`` has total cost > ``margin``.

    Longer closed walks decompose into simple cycles, so the cap only limits
    which simple cycles are seen.  Witness cycles are closed tuples of 0-based
    modes, e.g. ``(0, 1, 0)``.
    """
    d = problem.modes
    max_cycle = min(d, 4) if max_cycle is None else max_cycle
    if max_cycle > d:
        raise ValueError("max_cycle cannot exceed the number of modes")
    pts, samples = _cost_samples(problem, spec)
    worst = np.inf
    wit = None
    for cyc in simple_cycles(d, max_cycle):
        closed = cyc + (cyc[0],)
        for t, C in samples:
            total = sum(C[:, a, b] for a, b in zip(closed[:-1], closed[1:]))
            k = int(np.argmin(total))
            if total[k] < worst:
                worst = float(total[k])
                wit = dict(_witness(pts, t, k), cycle=list(closed))
    ok = bool(worst > margin) if np.isfinite(worst) else True
    measured = None if not np.isfinite(worst) else worst
    return ValidationReport([Check("no_loop", ok, measured, margin, None if ok else wit,
                                   f"max_cycle={max_cycle}")], spec)


def check_zero_diagonal(problem: SwitchingProblem) -> ValidationReport:
    ok = all(problem.costs[i][i] is None or
             (isinstance(problem.costs[i][i], ScalarField) and problem.costs[i][i] == Constant(0.0))
             for i in range(problem.modes))
    return ValidationReport([Check("cost_diagonal_zero", ok)])


def check_triangle(problem: SwitchingProblem, spec: SampleSpec, tol: float = 0.0) -> ValidationReport:
    """``c[i1,i2] + c[i2,i3] >= c[i1,i3]`` for every index triple at every sample."""
    d = problem.modes
    pts, samples = _cost_samples(problem, spec)
    worst, wit = np.inf, None
    for t, C in samples:
        # slack[s, a, b, c] = C[a,b] + C[b,c] - C[a,c]
        slack = C[:, :, :, None] + C[:, None, :, :] - C[:, :, None, :]
        flat = slack.reshape(len(pts), -1)
        s, idx = np.unravel_index(int(np.argmin(flat)), flat.shape)
        if flat[s, idx] < worst:
            worst = float(flat[s, idx])
            a, b, c = np.unravel_index(idx, (d, d, d))
            wit = dict(_witness(pts, t, s), triple=[int(a), int(b), int(c)])
    ok = bool(worst >= -tol)
    return ValidationReport([Check("triangle", ok, worst, -tol if tol else 0.0, None if ok else wit)], spec)


def check_terminal(problem: SwitchingProblem, spec: SampleSpec, tol: float = 0.0) -> ValidationReport:
    """``g_i >= max_{j != i}(-c_ij(., T) + g_j)`` at every sample."""
    d = problem.modes
    pts = spec.points()
    g = problem.terminals(pts)
    C = problem.cost_matrix(pts, problem.horizon)
    worst, wit = np.inf, None
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            gap = g[:, i] - (-C[:, i, j] + g[:, j])
            k = int(np.argmin(gap))
            if gap[k] < worst:
                worst = float(gap[k])
                wit = dict(_witness(pts, problem.horizon, k), mode=i, target=j)
    if d == 1:
        worst = 0.0
    ok = bool(worst >= -tol)
    return ValidationReport([Check("terminal_compatibility", ok, worst, -tol if tol else 0.0, None if ok else wit)], spec)


def check_growth(problem: SwitchingProblem, spec: SampleSpec) -> ValidationReport:
    """|psi_i| + |c_ij| + |g_i| <= B (1 + |x|^gamma)."""
    pts = spec.points()
    B, gam = problem.growth_bound, problem.growth_exponent
    denom = 1.0 + np.linalg.norm(pts, axis=1) ** gam
    worst, wit = 0.0, None
    g = np.abs(problem.terminals(pts))
    for t in spec.times:
        psi = np.abs(problem.payoffs(pts, t))
        C = np.abs(problem.cost_matrix(pts, t))
        for i in range(problem.modes):
            tot = (psi[:, i] + C[:, i, :].max(axis=-1) + g[:, i]) / denom
            k = int(np.argmax(tot))
            if tot[k] > worst:
                worst, wit = float(tot[k]), dict(_witness(pts, t, k), mode=i)
    ok = bool(np.isfinite(worst) and worst <= B)
    return ValidationReport([Check("data_growth", ok, worst, B, None if ok else wit)], spec)


# names of the six assumption validators, in a fixed order
ASSUMPTION_CHECKS = (
    "coefficients",     # Lipschitz / growth of a, sigma
    "levy_moments",     # second moment near 0, exponential tail
    "jump_amplitude",   # size / Lipschitz bound on eta
    "no_loop",          # positive cycle costs
    "triangle",         # c12 + c23 >= c13
    "terminal",         # terminal data above the obstacle
)


def validate_all(problem: SwitchingProblem, model: LevyModel, spec: SampleSpec,
                 max_cycle: int | None = None, no_loop_margin: float = 0.0,
                 include_triangle: bool = True, growth_ratio_limit: float = 1.25) -> ValidationReport:
    report = ValidationReport(sample_spec=spec)
    report.extend(validate_coefficients(model, spec, growth_ratio_limit))
    report.extend(check_levy(model))
    report.extend(validate_jump_amplitude(model, spec))
    report.extend(check_zero_diagonal(problem))
    report.extend(check_growth(problem, spec))
    report.extend(check_no_loop(problem, spec, max_cycle, no_loop_margin))
    if include_triangle:
        report.extend(check_triangle(problem, spec))
    report.extend(check_terminal(problem, spec))
    return report


def assumption_verdicts(report: ValidationReport) -> dict[str, bool]:
    """Collapse a full report into one verdict per assumption validator."""
    def ok(*names):
        return all(report[n].passed for n in names if any(c.name == n for c in report.checks))

    return {
        "coefficients": ok("coefficients_finite", "coefficients_lipschitz",
                           "coefficients_growth", "diffusion_psd"),
        "levy_moments": ok("levy_moments"),
        "jump_amplitude": ok("jump_size", "jump_lipschitz"),
        "no_loop": ok("no_loop"),
        "triangle": ok("triangle"),
        "terminal": ok("terminal_compatibility"),
    }
