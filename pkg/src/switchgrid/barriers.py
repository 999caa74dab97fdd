"""Explicit barrier families, the polynomial perturbation, and sandwich checks.

For a common terminal function ``g``, anchor mode ``i`` and anchor point
``y`` the upper family is, for every mode ``j``,

    u_j^+(x, t) = g(y) + (K / eps^2)(T - t)
                  + L (exp(lam (T - t)) + 1) sqrt(|x - y|^2 + eps) + c_ij(x, t)

and the lower family is its mirror with every non-constant term negated.
Candidates are verified in closed form: derivatives are analytic and the
nonlocal term is evaluated on the candidate itself, so no lattice
interpolation enters the check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .functions import Constant, ScalarField
from .grid import Lattice
from .model import LevyModel, SampleSpec, SwitchingProblem, check_terminal, check_triangle
from .nonlocal_ops import NonlocalConfig, apply_Hkappa
from .scheme import ValueField, boundary_layer_width, obstacle

ABOVE = 1
BELOW = -1


class CalibrationError(RuntimeError):
    def __init__(self, message: str, witness: dict | None = None):
        self.witness = witness
        super().__init__(message)


@dataclass(frozen=True)
class BarrierSpec:
    anchor_mode: int
    anchor_point: tuple[float, ...]
    epsilon: float
    K: float = 1.0
    lam: float = 1.0
    lipschitz: float = 0.0
    history: tuple = ()

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.K < 0 or self.lam < 0 or self.lipschitz < 0:
            raise ValueError("K, lambda and L must be non-negative")
        object.__setattr__(self, "anchor_point", tuple(float(v) for v in np.atleast_1d(self.anchor_point)))

    def to_dict(self):
        return {"anchor_mode": self.anchor_mode, "anchor_point": list(self.anchor_point),
                "epsilon": self.epsilon, "K": self.K, "lambda": self.lam,
                "lipschitz": self.lipschitz,
                "history": [{"K": k, "lambda": l, "passed": p, "failed_part": f}
                            for k, l, p, f in self.history]}


def _common_g(problem: SwitchingProblem) -> ScalarField:
    g = problem.common_terminal
    if g is None:
        raise CalibrationError("barriers need a terminal function shared by all modes")
    return g


class BarrierMode(ScalarField):
    """Component ``j`` of the upper (``sign=+1``) or lower (``sign=-1``) barrier."""

    def __init__(self, spec: BarrierSpec, j: int, problem: SwitchingProblem, sign: int = ABOVE):
        self.spec = spec
        self.j = j
        self.sign = sign
        self.T = problem.horizon
        self.gy = float(_common_g(problem)(np.asarray(spec.anchor_point)[None, :], self.T)[0])
        c = problem.costs[spec.anchor_mode][j]
        self.cost = Constant(0.0) if (c is None or j == spec.anchor_mode) else c

    def _parts(self, x, t):
        x = np.asarray(x, float)
        s = self.spec
        diff = x - np.asarray(s.anchor_point)
        r = np.sqrt(np.sum(diff * diff, axis=-1) + s.epsilon)
        growth = math.exp(s.lam * (self.T - t))
        return x, diff, r, growth

    def __call__(self, x, t=0.0):
        x, _, r, growth = self._parts(x, t)
        s = self.spec
        body = s.K / s.epsilon ** 2 * (self.T - t) + s.lipschitz * (growth + 1) * r + self.cost(x, t)
        return self.gy + self.sign * body

    def grad(self, x, t=0.0):
        x, diff, r, growth = self._parts(x, t)
        g = self.spec.lipschitz * (growth + 1) * diff / r[..., None] + self.cost.grad(x, t)
        return self.sign * g

    def hess(self, x, t=0.0):
        x, diff, r, growth = self._parts(x, t)
        n = x.shape[-1]
        outer = diff[..., :, None] * diff[..., None, :]
        h = (np.eye(n) / r[..., None, None] - outer / r[..., None, None] ** 3)
        h = self.spec.lipschitz * (growth + 1) * h + self.cost.hess(x, t)
        return self.sign * h

    def dt(self, x, t=0.0):
        x, _, r, growth = self._parts(x, t)
        s = self.spec
        d = -s.K / s.epsilon ** 2 - s.lipschitz * s.lam * growth * r + self.cost.dt(x, t)
        return self.sign * d


def barrier_family(spec: BarrierSpec, problem: SwitchingProblem, sign: int = ABOVE) -> list[BarrierMode]:
    return [BarrierMode(spec, j, problem, sign) for j in range(problem.modes)]


def eval_barrier_above(spec: BarrierSpec, j: int, x, t: float, problem: SwitchingProblem):
    return BarrierMode(spec, j, problem, ABOVE)(np.asarray(x, float), t)


def eval_barrier_below(spec: BarrierSpec, j: int, x, t: float, problem: SwitchingProblem):
    return BarrierMode(spec, j, problem, BELOW)(np.asarray(x, float), t)


# --- closed-form residuals of smooth candidates -------------------------------

@dataclass
class CandidateReport:
    """Continuous residual components of a smooth candidate system on lattice nodes.

    ``pde[n, j, k] = -H^kappa phi_j - psi_j`` at ``t_n`` for ``n < n_t``;
    ``obstacle[n, j, k] = phi_j - max_{l != j}(-c_jl + phi_l)``;
    ``terminal[j, k] = phi_j(x, T) - g_j(x)``.
    """

    times: np.ndarray
    pde: np.ndarray
    obstacle: np.ndarray
    terminal: np.ndarray
    points: np.ndarray

    def super_margin(self) -> float:
        """Smallest of the three components; ``>= -tol`` means supersolution."""
        return float(min(self.pde.min(), self.obstacle.min(), self.terminal.min()))

    def sub_margin(self) -> float:
        """``-max(min(pde, obstacle))`` and ``-max terminal``; ``>= -tol`` means subsolution."""
        both = np.minimum(self.pde, self.obstacle[:-1])
        return float(min(-both.max(), -self.terminal.max()))

    def failing_part(self, sign: int, tol: float) -> str | None:
        if sign == ABOVE:
            if self.obstacle.min() < -tol:
                return "obstacle"
            if self.terminal.min() < -tol:
                return "terminal"
            if self.pde.min() < -tol:
                return "pde"
            return None
        if self.terminal.max() > tol:
            return "terminal"
        if np.minimum(self.pde, self.obstacle[:-1]).max() > tol:
            return "pde"
        return None

    def witness(self, sign: int) -> dict:
        if sign == ABOVE:
            arr, name = self.pde, "pde"
            if self.obstacle.min() < arr.min():
                arr, name = self.obstacle, "obstacle"
            n, j, k = np.unravel_index(int(np.argmin(arr)), arr.shape)
            val = float(arr[n, j, k])
        else:
            arr = np.minimum(self.pde, self.obstacle[:-1])
            n, j, k = np.unravel_index(int(np.argmax(arr)), arr.shape)
            name, val = "pde", float(arr[n, j, k])
        return {"part": name, "mode": int(j), "t": float(self.times[n]),
                "x": self.points[k].tolist(), "value": val}


def candidate_residual(candidates, model: LevyModel, problem: SwitchingProblem,
                       lattice: Lattice, cfg: NonlocalConfig = NonlocalConfig(),
                       times=None) -> CandidateReport:
    """Evaluate both parts of the system on a smooth candidate at lattice nodes."""
    pts = lattice.points
    times = lattice.times(problem.horizon) if times is None else np.asarray(times, float)
    d = problem.modes
    pde = np.empty((len(times) - 1, d, len(pts)))
    obs = np.full((len(times), d, len(pts)), np.inf)
    for n, t in enumerate(times):
        vals = np.stack([phi(pts, t) for phi in candidates])
        if d > 1:
            obs[n] = vals - obstacle(vals, problem.cost_matrix(pts, t))
        if n < len(times) - 1:
            psi = problem.payoffs(pts, t)
            for j, phi in enumerate(candidates):
                pde[n, j] = -apply_Hkappa(model, cfg, pts, t, phi) - psi[:, j]
    T = problem.horizon
    term = np.stack([phi(pts, T) for phi in candidates]) - problem.terminals(pts).T
    return CandidateReport(times, pde, obs, term, pts)


def verify_supersolution(spec_or_candidates, model: LevyModel, problem: SwitchingProblem,
                         lattice: Lattice, cfg: NonlocalConfig = NonlocalConfig()) -> CandidateReport:
    cands = (barrier_family(spec_or_candidates, problem, ABOVE)
             if isinstance(spec_or_candidates, BarrierSpec) else spec_or_candidates)
    return candidate_residual(cands, model, problem, lattice, cfg)


def verify_subsolution(spec_or_candidates, model: LevyModel, problem: SwitchingProblem,
                       lattice: Lattice, cfg: NonlocalConfig = NonlocalConfig()) -> CandidateReport:
    cands = (barrier_family(spec_or_candidates, problem, BELOW)
             if isinstance(spec_or_candidates, BarrierSpec) else spec_or_candidates)
    return candidate_residual(cands, model, problem, lattice, cfg)


def lipschitz_of_terminal(problem: SwitchingProblem, lattice: Lattice, inflate: float = 1.05) -> float:
    """Largest axis difference quotient of the common ``g`` over the lattice, times ``inflate``."""
    g = _common_g(problem)
    vals = g(lattice.points, problem.horizon).reshape(lattice.nodes)
    q = 0.0
    for k, h in enumerate(lattice.spacing):
        q = max(q, float(np.abs(np.diff(vals, axis=k)).max() / h))
    return inflate * q


def barrier_prerequisites(problem: SwitchingProblem, lattice: Lattice, samples: int = 9) -> list[str]:
    """Names of the barrier prerequisites that fail on the lattice box."""
    bad = []
    if problem.common_terminal is None:
        bad.append("common_terminal")
    spec = SampleSpec.for_problem(lattice.box, problem, samples)
    if not check_triangle(problem, spec).passed:
        bad.append("triangle")
    if not check_terminal(problem, spec).passed:
        bad.append("terminal_compatibility")
    return bad


def calibrate(problem: SwitchingProblem, model: LevyModel, lattice: Lattice, epsilon: float,
              anchor_mode: int = 0, anchor_point=None, cfg: NonlocalConfig = NonlocalConfig(),
              tol: float = 1e-8, max_doublings: int = 40, force: bool = False) -> BarrierSpec:
    """Double ``(K, lam)`` from ``(1, 1)`` until both barrier families verify.

    Failures of the obstacle or terminal part do not depend on ``K`` or
    ``lam`` and abort immediately.
    """
    if not force:
        bad = barrier_prerequisites(problem, lattice)
        if bad:
            raise CalibrationError(f"barrier prerequisites fail: {', '.join(bad)}")
    if anchor_point is None:
        anchor_point = np.mean(np.asarray(lattice.box), axis=1)
    L = lipschitz_of_terminal(problem, lattice)
    spec = BarrierSpec(anchor_mode, tuple(np.atleast_1d(anchor_point)), epsilon, 1.0, 1.0, L)
    history = []
    for _ in range(max_doublings + 1):
        up = verify_supersolution(spec, model, problem, lattice, cfg)
        lo = verify_subsolution(spec, model, problem, lattice, cfg)
        fail_up = up.failing_part(ABOVE, tol)
        fail_lo = lo.failing_part(BELOW, tol)
        failed = fail_up or fail_lo
        history.append((spec.K, spec.lam, failed is None, failed))
        if failed is None:
            return replace(spec, history=tuple(history))
        if failed in ("obstacle", "terminal"):
            rep, sign = (up, ABOVE) if fail_up else (lo, BELOW)
            raise CalibrationError(f"barrier {failed} condition fails independently of K and lambda",
                                   rep.witness(sign))
        spec = replace(spec, K=2 * spec.K, lam=2 * spec.lam)
    rep, sign = (up, ABOVE) if fail_up else (lo, BELOW)
    raise CalibrationError(f"no passing (K, lambda) after {max_doublings} doublings",
                           rep.witness(sign))


# --- polynomial perturbation ---------------------------------------------------

@dataclass(frozen=True)
class PerturbationSpec:
    theta: float = 0.0
    lam: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be non-negative")
        if self.gamma < 0.5:
            raise ValueError("gamma must be at least 1/2")


class Perturbation(ScalarField):
    """``theta exp(-lam t)(|x|^(2 gamma + 2) + 1)`` with analytic derivatives."""

    def __init__(self, spec: PerturbationSpec):
        self.spec = spec
        self.p = 2.0 * spec.gamma + 2.0

    def _w(self, x):
        r2 = np.sum(x * x, axis=-1)
        return r2 ** (self.p / 2) + 1.0, r2

    def __call__(self, x, t=0.0):
        x = np.asarray(x, float)
        w, _ = self._w(x)
        return self.spec.theta * math.exp(-self.spec.lam * t) * w

    def grad(self, x, t=0.0):
        x = np.asarray(x, float)
        _, r2 = self._w(x)
        f = self.spec.theta * math.exp(-self.spec.lam * t)
        return f * self.p * (r2 ** (self.p / 2 - 1))[..., None] * x

    def hess(self, x, t=0.0):
        x = np.asarray(x, float)
        n = x.shape[-1]
        _, r2 = self._w(x)
        f = self.spec.theta * math.exp(-self.spec.lam * t)
        p = self.p
        with np.errstate(divide="ignore", invalid="ignore"):
            second = np.where(r2 > 0, (p - 2) * r2 ** (p / 2 - 2), 0.0)
        outer = x[..., :, None] * x[..., None, :]
        return f * p * ((r2 ** (p / 2 - 1))[..., None, None] * np.eye(n)
                        + second[..., None, None] * outer)

    def dt(self, x, t=0.0):
        return -self.spec.lam * self(x, t)


class _Sum(ScalarField):
    def __init__(self, a: ScalarField, b: ScalarField):
        self.a, self.b = a, b

    def __call__(self, x, t=0.0):
        return self.a(x, t) + self.b(x, t)

    def grad(self, x, t=0.0):
        return self.a.grad(x, t) + self.b.grad(x, t)

    def hess(self, x, t=0.0):
        return self.a.hess(x, t) + self.b.hess(x, t)

    def dt(self, x, t=0.0):
        return self.a.dt(x, t) + self.b.dt(x, t)


def perturb_candidates(candidates, pspec: PerturbationSpec) -> list[ScalarField]:
    """Add the same perturbation to every component of a smooth candidate."""
    pert = Perturbation(pspec)
    return [_Sum(c, pert) for c in candidates]


def perturb_supersolution(field: ValueField, pspec: PerturbationSpec) -> ValueField:
    """Add ``theta exp(-lam t_n)(|x|^(2 gamma + 2) + 1)`` to every mode, node and time."""
    pert = Perturbation(pspec)
    add = np.stack([pert(field.lattice.points, t) for t in field.times])
    return field.with_values(field.values + add[:, None, :])


def perturbation_threshold(model: LevyModel, gamma: float, lattice: Lattice,
                           cfg: NonlocalConfig = NonlocalConfig(), times=None) -> float:
    """Measured ``c = max (L_x w + I w) / w`` with ``w = |x|^(2 gamma + 2) + 1``.

    For ``lam >= c`` the perturbation has ``-H(theta e^{-lam t} w) >= 0`` at every
    lattice node, which is what makes the perturbed field a supersolution.
    """
    w = Perturbation(PerturbationSpec(1.0, 0.0, gamma))
    pts = lattice.points
    times = [0.0] if times is None else times
    c = -np.inf
    for t in times:
        # with lam = 0 the time derivative vanishes, leaving L_x w + I w
        val = apply_Hkappa(model, cfg, pts, t, w) / w(pts, t)
        c = max(c, float(val.max()))
    return c


# --- sandwich -------------------------------------------------------------------

@dataclass
class SandwichResult:
    spec: BarrierSpec
    verified: bool
    super_margin: float
    sub_margin: float
    above_margin: float = math.nan     # min over interior (u^+ - u)
    below_margin: float = math.nan     # min over interior (u - u^-)
    holds: bool = False
    witness: dict | None = None
    limit_gap: float = math.nan        # u_i^+(y, T) - g(y)
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "verified": self.verified,
                "super_margin": self.super_margin, "sub_margin": self.sub_margin,
                "above_margin": self.above_margin, "below_margin": self.below_margin,
                "holds": self.holds, "witness": self.witness, "limit_gap": self.limit_gap,
                "expected_limit_gap": 2 * self.spec.lipschitz * math.sqrt(self.spec.epsilon)}


def sandwich_check(field: ValueField, problem: SwitchingProblem, model: LevyModel,
                   specs, cfg: NonlocalConfig = NonlocalConfig(), tol: float = 1e-8,
                   sandwich_tol: float = 1e-10) -> list[SandwichResult]:
    """Check ``u^-_j <= u_j <= u^+_j`` on interior nodes for each verified spec.

    A spec whose barriers do not verify is reported with ``verified=False``
    and no sandwich assertion is made for it.
    """
    lattice = field.lattice
    layer = boundary_layer_width(model, lattice, field.times)
    interior = lattice.interior_mask(layer)
    pts = lattice.points
    out = []
    for spec in specs:
        up = verify_supersolution(spec, model, problem, lattice, cfg)
        lo = verify_subsolution(spec, model, problem, lattice, cfg)
        res = SandwichResult(spec, False, up.super_margin(), lo.sub_margin())
        y = np.asarray(spec.anchor_point)[None, :]
        res.limit_gap = float(eval_barrier_above(spec, spec.anchor_mode, y, problem.horizon, problem)[0]
                              - _common_g(problem)(y, problem.horizon)[0])
        res.verified = res.super_margin >= -tol and res.sub_margin >= -tol
        if res.verified:
            amin, bmin, wit = math.inf, math.inf, None
            for n, t in enumerate(field.times):
                for j in range(problem.modes):
                    u = field.values[n, j]
                    a = eval_barrier_above(spec, j, pts, t, problem) - u
                    b = u - eval_barrier_below(spec, j, pts, t, problem)
                    a_i, b_i = a[interior], b[interior]
                    if a_i.min() < amin:
                        amin = float(a_i.min())
                        if amin < -sandwich_tol:
                            k = int(np.flatnonzero(interior)[np.argmin(a_i)])
                            wit = {"side": "above", "mode": j, "t": float(t), "x": pts[k].tolist()}
                    if b_i.min() < bmin:
                        bmin = float(b_i.min())
                        if bmin < -sandwich_tol and wit is None:
                            k = int(np.flatnonzero(interior)[np.argmin(b_i)])
                            wit = {"side": "below", "mode": j, "t": float(t), "x": pts[k].tolist()}
                    if n == 0:
                        for k in np.flatnonzero(interior):
                            res.rows.append((j, float(t), *pts[k].tolist(), float(u[k]),
                                             float(u[k] - b[k]), float(u[k] + a[k]),
                                             float(b[k]), float(a[k])))
            res.above_margin, res.below_margin = amin, bmin
            res.holds = amin >= -sandwich_tol and bmin >= -sandwich_tol
            res.witness = wit
        out.append(res)
    return out
