"""Command line entry point.

    switchgrid {validate|solve|barriers|compare} --config <path>
               [--force] [--out <dir>] [--threads n] [--seed s]

Exit codes: 0 success, 2 failed assumption checks, 3 solver abort,
4 barrier calibration or sandwich failure, 5 Monte-Carlo comparison
failure, 64 unusable configuration.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from .barriers import (
    CalibrationError, calibrate, perturb_supersolution, perturbation_threshold, sandwich_check,
)
from .model import assumption_verdicts, validate_all
from .montecarlo import SwitchLoopError, compare
from .outputs import read_field, write_csv, write_field, write_json
from .scheme import (
    SchemeError, SwitchPolicy, ValueField, obstacle_gaps, richardson_error, solve,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_CALIBRATION = 4
EXIT_COMPARE = 5
EXIT_CONFIG = 64


def _say(msg: str):
    print(msg, flush=True)


def _validate(cfg: C.RunConfig, include_triangle: bool):
    vb = cfg.validation
    return validate_all(cfg.problem, cfg.model, cfg.sample_spec, vb.get("max_cycle"),
                        vb.get("no_loop_margin", 0.0), include_triangle,
                        vb.get("growth_ratio_limit", 1.25))


def _print_failures(report):
    for c in report.failed():
        _say(f"FAIL {c.name}: measured={c.measured} bound={c.bound} witness={c.witness} {c.detail}".rstrip())


def cmd_validate(cfg: C.RunConfig, args) -> int:
    report = _validate(cfg, include_triangle=True)
    verdicts = assumption_verdicts(report)
    write_json(cfg.out_dir / "validation.json",
               {"passed": report.passed, "verdicts": verdicts, "report": report.to_dict()}, cfg.hash)
    for name, ok in verdicts.items():
        _say(f"{'pass' if ok else 'FAIL'} {name}")
    _print_failures(report)
    return EXIT_OK if report.passed else EXIT_VALIDATION


def _solve(cfg: C.RunConfig, force: bool):
    if not force:
        report = _validate(cfg, include_triangle=False)
        if not report.passed:
            _print_failures(report)
            _say("assumption checks failed; rerun with --force to solve anyway")
            return None, EXIT_VALIDATION
    try:
        return solve(cfg.problem, cfg.model, cfg.lattice, cfg.solver, force=True), EXIT_OK
    except SchemeError as exc:
        _say(f"solver aborted: {exc}")
        return None, EXIT_SOLVER


def _field_rows(field: ValueField, policy: SwitchPolicy, with_value: bool):
    pts = field.lattice.points
    for n, t in enumerate(field.times):
        for i in range(field.modes):
            vals = field.values[n, i]
            acts = policy.actions[n, i]
            for k in range(len(pts)):
                row = [*pts[k], t, i]
                if with_value:
                    row.append(vals[k])
                row.append(int(acts[k]))
                yield row


def cmd_solve(cfg: C.RunConfig, args) -> int:
    sol, code = _solve(cfg, args.force)
    if sol is None:
        return code
    coords = [f"x{k}" for k in range(cfg.lattice.dim)]
    write_csv(cfg.out_dir / "values.csv", coords + ["t", "mode", "value", "action"],
              _field_rows(sol.field, sol.policy, True), cfg.hash)
    write_csv(cfg.out_dir / "policy.csv", coords + ["t", "mode", "action"],
              _field_rows(sol.field, sol.policy, False), cfg.hash)
    write_json(cfg.out_dir / "residual.json",
               {"residual": sol.residual.to_dict(), "lattice": cfg.lattice.to_dict(),
                "solver": {"kappa": cfg.solver.kappa, "boundary": cfg.solver.boundary.policy,
                           "extrapolation_degree": cfg.solver.boundary.degree,
                           "coupling": cfg.solver.coupling}}, cfg.hash)
    write_field(cfg.out_dir / "field.npz", sol.field, sol.policy, cfg.hash)
    _say(f"solved: residual linf={sol.residual.linf:.3e} "
         f"(interior, boundary layer {sol.residual.layer_width} nodes)")
    return EXIT_OK


def _load_or_solve(cfg: C.RunConfig, force: bool, explicit: str | None = None):
    """Field and policy from a previous ``solve`` (matching config hash), else solve now."""
    path = Path(explicit) if explicit else cfg.out_dir / "field.npz"
    if path.exists():
        data = read_field(path)
        same_grid = (tuple(data["nodes"].tolist()) == cfg.lattice.nodes
                     and len(data["times"]) == cfg.lattice.time_steps + 1)
        if explicit or (str(data["config_hash"]) == cfg.hash and same_grid):
            if not same_grid:
                raise C.ConfigError(f"field {path} does not match the configured lattice")
            field = ValueField(cfg.lattice, data["times"], data["values"], cfg.solver.boundary)
            return field, SwitchPolicy(cfg.lattice, data["times"], data["actions"]), EXIT_OK
    sol, code = _solve(cfg, force)
    if sol is None:
        return None, None, code
    return sol.field, sol.policy, EXIT_OK


def cmd_barriers(cfg: C.RunConfig, args) -> int:
    field, _, code = _load_or_solve(cfg, args.force)
    if field is None:
        return code
    bb = cfg.barriers
    anchors = bb.get("anchors") or [{"mode": 0, "point": np.mean(np.asarray(cfg.lattice.box), axis=1).tolist()}]
    eps_list = bb.get("epsilon", [0.25])
    tol = bb.get("tol", 1e-8)
    specs = []
    try:
        for a in anchors:
            for eps in eps_list:
                specs.append(calibrate(cfg.problem, cfg.model, cfg.lattice, eps, a["mode"], a["point"],
                                       cfg.nonlocal_cfg, tol, bb.get("max_doublings", 40), args.force))
    except CalibrationError as exc:
        write_json(cfg.out_dir / "barriers.json", {"calibrated": False, "error": str(exc),
                                                    "witness": exc.witness}, cfg.hash)
        _say(f"calibration failed: {exc} witness={exc.witness}")
        return EXIT_CALIBRATION
    results = sandwich_check(field, cfg.problem, cfg.model, specs, cfg.nonlocal_cfg, tol)
    coords = [f"x{k}" for k in range(cfg.lattice.dim)]
    rows = []
    for s_idx, r in enumerate(results):
        rows.extend((s_idx, *row) for row in r.rows)
    write_csv(cfg.out_dir / "sandwich.csv",
              ["spec", "mode", "t"] + coords + ["u", "below", "above", "margin_below", "margin_above"],
              rows, cfg.hash)

    # polynomial perturbation: threshold, gap invariance
    pspec_block = bb.get("perturbation", {})
    gamma = pspec_block.get("gamma", 1.0)
    thresh = perturbation_threshold(cfg.model, gamma, cfg.lattice, cfg.nonlocal_cfg,
                                    times=[field.times[0], field.times[-1]])
    pspec = C.perturbation_spec(bb, max(thresh, 0.0))
    perturbed = perturb_supersolution(field, pspec)
    before = obstacle_gaps(field, cfg.problem)
    after = obstacle_gaps(perturbed, cfg.problem)
    finite = np.isfinite(before)
    change = float(np.max(np.abs(after[finite] - before[finite]), initial=0.0))
    pts = cfg.lattice.points
    gap_rows = [(i, *pts[k], before[0, i, k], after[0, i, k])
                for i in range(cfg.problem.modes) for k in range(len(pts))]
    write_csv(cfg.out_dir / "perturbation_gaps.csv", ["mode"] + coords + ["gap", "perturbed_gap"],
              gap_rows, cfg.hash)

    ok = all(r.verified and r.holds for r in results)
    write_json(cfg.out_dir / "barriers.json", {
        "calibrated": True,
        "sandwich_passed": ok,
        "results": [r.to_dict() for r in results],
        "perturbation": {"threshold": thresh, "theta": pspec.theta, "lambda": pspec.lam,
                         "gamma": pspec.gamma, "max_gap_change": change,
                         "lambda_above_threshold": pspec.lam >= thresh},
    }, cfg.hash)
    for r in results:
        s = r.spec
        _say(f"{'pass' if r.verified and r.holds else 'FAIL'} anchor mode={s.anchor_mode} "
             f"y={list(s.anchor_point)} eps={s.epsilon:g} K={s.K:g} lambda={s.lam:g} L={s.lipschitz:.6g} "
             f"margins above={r.above_margin:.3e} below={r.below_margin:.3e}")
    _say(f"perturbation threshold={thresh:.6g}, max obstacle-gap change={change:.3e}")
    return EXIT_OK if ok else EXIT_CALIBRATION


def cmd_compare(cfg: C.RunConfig, args) -> int:
    field, policy, code = _load_or_solve(cfg, args.force, cfg.mc_options.get("field"))
    if field is None:
        return code
    points = C.mc_points(cfg)
    budget = cfg.mc_options.get("pde_budget", "self_convergence")
    if budget == "self_convergence":
        try:
            budget = richardson_error(cfg.problem, cfg.model, cfg.lattice, points, cfg.solver, force=True)
        except SchemeError as exc:
            _say(f"solver aborted while estimating the lattice error: {exc}")
            return EXIT_SOLVER
    try:
        rep = compare(field, policy, cfg.problem, cfg.model, points, cfg.mc, budget,
                      cfg.mc_options.get("richardson", True))
    except SwitchLoopError as exc:
        _say(f"simulation aborted: {exc}")
        return EXIT_COMPARE
    coords = [f"x{k}" for k in range(cfg.lattice.dim)]
    rows = [(*r.x0, r.i0, r.pde, r.mc, r.stderr, r.ci95[0], r.ci95[1], r.gap,
             r.dt_budget, r.pde_budget, r.allowed, r.passed, r.exit_fraction) for r in rep.rows]
    write_csv(cfg.out_dir / "compare.csv",
              coords + ["mode", "pde", "mc", "stderr", "ci_low", "ci_high", "gap", "dt_budget",
                        "pde_budget", "allowed", "passed", "exit_fraction"],
              rows, cfg.hash, seed=cfg.mc.seed, paths=cfg.mc.paths)
    for r in rep.rows:
        _say(f"{'pass' if r.passed else 'FAIL'} x={list(r.x0)} mode={r.i0} pde={r.pde:.6g} "
             f"mc={r.mc:.6g} gap={r.gap:.3e} allowed={r.allowed:.3e}")
    return EXIT_OK if rep.passed else EXIT_COMPARE


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "barriers": cmd_barriers,
            "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="switchgrid", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"switchgrid {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--force", action="store_true", help="proceed even if assumption checks fail")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for path simulation")
    ap.add_argument("--seed", type=int, help="override mc.seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        _say("--threads must be >= 1")
        return EXIT_CONFIG
    try:
        cfg = C.load(args.config, seed=args.seed, threads=args.threads, out_dir=args.out)
        return COMMANDS[args.command](cfg, args)
    except C.ConfigError as exc:
        _say(f"config error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":   # pragma: no cover
    sys.exit(main())
