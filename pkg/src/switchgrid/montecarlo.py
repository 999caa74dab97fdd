"""Monte-Carlo evaluation of switching strategies for the controlled jump SDE.

Paths are simulated in fixed-size chunks; chunk ``c`` draws from a Philox
stream seeded by ``SeedSequence([seed, c])``, so estimates do not depend on
how chunks are scheduled across threads.

The PDE generator uses ``a = sigma sigma^T`` without a factor one half, so
the simulated Brownian increment is scaled by ``diffusion_scale = sqrt(2)``
by default to target the same dynamics.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import LevyModel, SwitchingProblem
from .scheme import STAY, SwitchPolicy, ValueField


class SwitchLoopError(RuntimeError):
    """A strategy asked for more than ``d`` switches within one time step."""


@dataclass(frozen=True)
class SimConfig:
    paths: int = 10_000
    dt: float = 0.01
    seed: int = 0
    antithetic: bool = False
    chunk: int = 4096
    threads: int = 1
    diffusion_scale: float = math.sqrt(2.0)
    jump_handling: str = "thinning-from-atoms"

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.antithetic and self.paths % 2:
            raise ValueError("antithetic sampling needs an even path count")
        if self.jump_handling != "thinning-from-atoms":
            raise ValueError("only thinning-from-atoms jump handling is implemented")

    def steps(self, horizon: float) -> int:
        n = int(round(horizon / self.dt))
        if n < 1 or abs(n * self.dt - horizon) > 1e-9 * max(horizon, 1.0):
            raise ValueError(f"dt={self.dt} does not divide T={horizon}")
        return n


@dataclass
class PathState:
    """State of a batch of paths: positions, modes, running payoff and switch log."""

    x: np.ndarray
    mode: np.ndarray
    accrued: np.ndarray
    costs: np.ndarray
    switch_log: list = field(default_factory=list)   # (path, t, from, to, cost)
    alive: np.ndarray | None = None

    @classmethod
    def start(cls, x0, i0: int, paths: int) -> "PathState":
        x0 = np.atleast_1d(np.asarray(x0, float))
        return cls(np.tile(x0, (paths, 1)), np.full(paths, int(i0), dtype=np.int64),
                   np.zeros(paths), np.zeros(paths), [], np.ones(paths, dtype=bool))


def _normals(rng, shape, antithetic: bool):
    if not antithetic:
        return rng.standard_normal(shape)
    half = rng.standard_normal((shape[0] // 2,) + shape[1:])
    return np.concatenate([half, -half])


def simulate_step(state: PathState, model: LevyModel, t: float, dt: float, rng,
                  diffusion_scale: float = math.sqrt(2.0), antithetic: bool = False) -> PathState:
    """Euler–Maruyama step with Poisson counts per atom and compensated small jumps."""
    x = state.x
    P, N = x.shape
    drift = np.asarray(model.drift(x, t), float)
    sig = np.asarray(model.diffusion_factor(x, t), float)
    xi = _normals(rng, (P, N), antithetic)
    new = x + drift * dt + diffusion_scale * math.sqrt(dt) * np.einsum("pij,pj->pi", sig, xi)
    meas = model.levy_measure
    for z, w, r in zip(meas.nodes, meas.weights, meas.norms):
        eta = np.asarray(model.jump_amplitude(x, t, z), float)
        counts = rng.poisson(w * dt, size=P)
        new = new + counts[:, None] * eta
        if r < 1.0:
            new = new - w * dt * eta
    finite = np.all(np.isfinite(new), axis=1)
    if state.alive is not None:
        state.alive &= finite
    state.x = np.where(finite[:, None], new, x)
    return state


# --- strategies -----------------------------------------------------------------

class Strategy:
    """Returns, per path, ``-1`` to stay or the mode to switch to."""

    def decide(self, n: int, t: float, x: np.ndarray, mode: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


class NeverSwitch(Strategy):
    def decide(self, n, t, x, mode):
        return np.full(len(mode), STAY, dtype=np.int64)


@dataclass
class ScheduledSwitch(Strategy):
    """Switch to ``schedule[k][1]`` at the first step with ``t >= schedule[k][0]``."""

    schedule: tuple[tuple[float, int], ...]

    def __post_init__(self):
        self.schedule = tuple(sorted((float(s), int(m)) for s, m in self.schedule))

    def decide(self, n, t, x, mode):
        target = None
        for s, m in self.schedule:
            if t + 1e-12 >= s:
                target = m
        if target is None:
            return np.full(len(mode), STAY, dtype=np.int64)
        return np.where(mode == target, STAY, target).astype(np.int64)


@dataclass
class ThresholdStrategy(Strategy):
    """Occupy ``high_mode`` while ``x[axis] > level`` and ``low_mode`` otherwise."""

    level: float
    low_mode: int
    high_mode: int
    axis: int = 0
    start_time: float = 0.0

    def decide(self, n, t, x, mode):
        if t + 1e-12 < self.start_time:
            return np.full(len(mode), STAY, dtype=np.int64)
        want = np.where(x[:, self.axis] > self.level, self.high_mode, self.low_mode)
        return np.where(mode == want, STAY, want).astype(np.int64)


class PolicyStrategy(Strategy):
    """Follow a solver policy by nearest-node, nearest-time lookup."""

    def __init__(self, policy: SwitchPolicy):
        self.policy = policy
        self.lookups = 0
        self.exits = 0

    def decide(self, n, t, x, mode):
        pol = self.policy
        times = pol.times
        k = int(np.clip(np.rint(t / (times[1] - times[0])), 0, len(times) - 1))
        inside = pol.lattice.inside(x)
        self.lookups += len(x)
        self.exits += int(np.count_nonzero(~inside))
        node = pol.lattice.nearest_index(x)
        return pol.actions[k, mode, node]

    @property
    def exit_fraction(self) -> float:
        return self.exits / self.lookups if self.lookups else 0.0


def random_strategy(rng: np.random.Generator, problem: SwitchingProblem, box) -> Strategy:
    """A random admissible strategy: never, scheduled, or threshold-type."""
    d = problem.modes
    kind = rng.integers(0, 3)
    if kind == 0 or d == 1:
        return NeverSwitch()
    if kind == 1:
        times = np.sort(rng.uniform(0, problem.horizon, size=rng.integers(1, 3)))
        return ScheduledSwitch(tuple((float(s), int(rng.integers(0, d))) for s in times))
    lo, hi = box[0]
    a, b = rng.choice(d, size=2, replace=False)
    return ThresholdStrategy(float(rng.uniform(lo, hi)), int(a), int(b),
                             start_time=float(rng.uniform(0, problem.horizon / 2)))


# --- estimation -------------------------------------------------------------------

@dataclass
class EstimateReport:
    mean: float
    stderr: float
    ci95: tuple[float, float]
    paths: int
    per_mode: dict
    exit_fraction: float = 0.0
    mean_switches: float = 0.0
    aborted_paths: int = 0
    seed: int = 0
    dt: float = 0.0
    samples: np.ndarray | None = field(default=None, repr=False)
    costs: np.ndarray | None = field(default=None, repr=False)
    logged_costs: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        return {"mean": self.mean, "stderr": self.stderr, "ci95": list(self.ci95),
                "paths": self.paths, "per_mode": self.per_mode,
                "exit_fraction": self.exit_fraction, "mean_switches": self.mean_switches,
                "aborted_paths": self.aborted_paths, "seed": self.seed, "dt": self.dt}


def _run_chunk(problem, model, strategy, x0, i0, cfg: SimConfig, n_steps, chunk_id, size):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, chunk_id])))
    st = PathState.start(x0, i0, size)
    d = problem.modes
    dt = problem.horizon / n_steps
    logged = np.zeros(size)
    n_switch = np.zeros(size, dtype=np.int64)
    for n in range(n_steps):
        t = n * dt
        for k in range(d + 1):
            target = np.asarray(strategy.decide(n, t, st.x, st.mode), dtype=np.int64)
            move = (target >= 0) & (target != st.mode)
            if not np.any(move):
                break
            if k == d:
                raise SwitchLoopError(f"strategy requested more than {d} switches at t={t:g}; "
                                      "switching cycles must have positive cost")
            idx = np.flatnonzero(move)
            C = problem.cost_matrix(st.x[idx], t)
            cost = C[np.arange(len(idx)), st.mode[idx], target[idx]]
            st.costs[idx] += cost
            st.accrued[idx] -= cost
            n_switch[idx] += 1
            st.switch_log.extend(zip(idx.tolist(), [t] * len(idx), st.mode[idx].tolist(),
                                     target[idx].tolist(), cost.tolist()))
            st.mode[idx] = target[idx]
        psi = problem.payoffs(st.x, t)
        st.accrued += psi[np.arange(size), st.mode] * dt
        simulate_step(st, model, t, dt, rng, cfg.diffusion_scale, cfg.antithetic)
    g = problem.terminals(st.x)
    st.accrued += g[np.arange(size), st.mode]
    if st.switch_log:
        who = np.array([e[0] for e in st.switch_log], dtype=np.int64)
        paid = np.array([e[4] for e in st.switch_log])
        logged = np.bincount(who, weights=paid, minlength=size)
    return st, logged, n_switch


def evaluate_strategy(problem: SwitchingProblem, model: LevyModel, strategy: Strategy,
                      x0, i0: int, cfg: SimConfig = SimConfig()) -> EstimateReport:
    """Estimate ``E[int psi_mode dt - sum costs + g_mode(X_T)]`` under ``strategy``."""
    n_steps = cfg.steps(problem.horizon)
    chunk = cfg.chunk + (cfg.chunk % 2 if cfg.antithetic else 0)
    sizes = []
    left = cfg.paths
    while left > 0:
        sizes.append(min(chunk, left))
        left -= sizes[-1]
    jobs = [(c, s) for c, s in enumerate(sizes)]

    def run(job):
        return _run_chunk(problem, model, strategy, x0, i0, cfg, n_steps, *job)

    if cfg.threads > 1 and not isinstance(strategy, PolicyStrategy):
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    vals = np.concatenate([r[0].accrued for r in results])
    costs = np.concatenate([r[0].costs for r in results])
    logged = np.concatenate([r[1] for r in results])
    modes = np.concatenate([r[0].mode for r in results])
    alive = np.concatenate([r[0].alive for r in results])
    switches = np.concatenate([r[2] for r in results])
    aborted = int(np.count_nonzero(~alive))
    vals_ok = vals[alive]
    if cfg.antithetic:
        # pair i with i + size/2 inside each chunk
        pairs, off = [], 0
        for s in sizes:
            a = vals[off: off + s]
            ok = alive[off: off + s]
            h = s // 2
            keep = ok[:h] & ok[h:]
            pairs.append(0.5 * (a[:h][keep] + a[h:][keep]))
            off += s
        eff = np.concatenate(pairs)
    else:
        eff = vals_ok
    mean = float(eff.mean())
    stderr = float(eff.std(ddof=1) / math.sqrt(len(eff))) if len(eff) > 1 else 0.0
    per_mode = {}
    for m in range(problem.modes):
        sel = (modes == m) & alive
        per_mode[str(m)] = {"fraction": float(sel.mean()),
                            "mean": float(vals[sel].mean()) if np.any(sel) else None}
    exit_fraction = strategy.exit_fraction if isinstance(strategy, PolicyStrategy) else 0.0
    return EstimateReport(mean, stderr, (mean - 1.96 * stderr, mean + 1.96 * stderr), len(vals_ok),
                          per_mode, exit_fraction, float(switches.mean()), aborted, cfg.seed,
                          problem.horizon / n_steps, vals, costs, logged)


def evaluate_policy(problem: SwitchingProblem, model: LevyModel, field: ValueField,
                    policy: SwitchPolicy, x0, i0: int, cfg: SimConfig = SimConfig()) -> EstimateReport:
    """Simulate paths that follow ``policy``; compare the mean with ``u_{i0}(x0, 0)``."""
    return evaluate_strategy(problem, model, PolicyStrategy(policy), x0, i0, cfg)


# --- comparison ---------------------------------------------------------------------

@dataclass
class CompareRow:
    x0: tuple
    i0: int
    pde: float
    mc: float
    stderr: float
    ci95: tuple[float, float]
    gap: float
    dt_budget: float
    pde_budget: float
    passed: bool
    exit_fraction: float

    @property
    def allowed(self) -> float:
        return 3 * self.stderr + self.dt_budget + self.pde_budget


@dataclass
class CompareReport:
    rows: list[CompareRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def compare(field: ValueField, policy: SwitchPolicy, problem: SwitchingProblem, model: LevyModel,
            points, cfg: SimConfig = SimConfig(), pde_budget=0.0, richardson: bool = True) -> CompareReport:
    """PDE value vs Monte-Carlo policy evaluation at each ``(x0, i0)``.

    A point passes when ``|gap| <= 3 stderr + dt_budget + pde_budget``.  The
    ``dt_budget`` is the statistically significant part of the difference
    between runs at ``dt`` and ``dt/2`` (zero when ``richardson`` is off);
    ``pde_budget`` (scalar or per point) accounts for the lattice error.
    """
    budgets = np.broadcast_to(np.asarray(pde_budget, float), (len(points),))
    rows = []
    for (x0, i0), pb in zip(points, budgets):
        x0 = np.atleast_1d(np.asarray(x0, float))
        pde = float(field.value_at(x0[None, :], i0, 0)[0])
        est = evaluate_policy(problem, model, field, policy, x0, i0, cfg)
        dt_b = 0.0
        if richardson:
            half = SimConfig(cfg.paths, cfg.dt / 2, cfg.seed + 1, cfg.antithetic, cfg.chunk,
                             cfg.threads, cfg.diffusion_scale)
            est2 = evaluate_policy(problem, model, field, policy, x0, i0, half)
            noise = 3 * math.hypot(est.stderr, est2.stderr)
            dt_b = max(0.0, abs(est.mean - est2.mean) - noise)
        gap = abs(est.mean - pde)
        allowed = 3 * est.stderr + dt_b + float(pb)
        rows.append(CompareRow(tuple(x0.tolist()), int(i0), pde, est.mean, est.stderr, est.ci95,
                               gap, dt_b, float(pb), bool(gap <= allowed), est.exit_fraction))
    return CompareReport(rows)
