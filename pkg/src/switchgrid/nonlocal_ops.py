"""Integro-differential kernel and the small/large jump split.

Test functions are :class:`~switchgrid.functions.ScalarField` objects (they
carry ``grad``, ``hess`` and ``dt``).  The "solution" argument of the
large-jump part may be a :class:`~switchgrid.grid.FieldSlice` (interpolated
monotonically) or any callable ``u(x, t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Boundary, FieldSlice
from .model import LevyMeasure, LevyModel


@dataclass(frozen=True)
class NonlocalConfig:
    """``kappa`` separates small jumps (``|z| < kappa``) from large ones."""

    kappa: float = 0.1
    boundary: Boundary = field(default_factory=Boundary)

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")


def default_kappa(measure: LevyMeasure) -> float:
    return min(max(measure.r_min, 0.1), 0.999)


def _eval(u, x, t, diagnostics):
    if isinstance(u, FieldSlice):
        vals, outside = u.interpolate(x)
        if diagnostics is not None:
            diagnostics["out_of_box"] = diagnostics.get("out_of_box", 0) + int(np.count_nonzero(outside))
            diagnostics["jumps"] = diagnostics.get("jumps", 0) + int(np.size(outside))
        return vals
    return np.asarray(u(x, t), float)


def kernel_K(model: LevyModel, x, t: float, z, phi, p, diagnostics: dict | None = None):
    """``phi(x + eta) - phi(x) - 1{|z| <= 1} eta . p``."""
    x = np.asarray(x, float)
    z = np.atleast_1d(np.asarray(z, float))
    eta = np.asarray(model.jump_amplitude(x, t, z), float)
    out = _eval(phi, x + eta, t, diagnostics) - _eval(phi, x, t, None)
    if np.linalg.norm(z) <= 1.0:
        out = out - np.sum(eta * np.asarray(p, float), axis=-1)
    return out


def _partial(model, x, t, u, p, select, diagnostics=None):
    x = np.asarray(x, float)
    meas = model.levy_measure
    total = np.zeros(x.shape[:-1])
    for z, w, r in zip(meas.nodes, meas.weights, meas.norms):
        if select(r):
            total = total + w * kernel_K(model, x, t, z, u, p, diagnostics)
    return total


def apply_small(model: LevyModel, cfg: NonlocalConfig, x, t: float, phi, p):
    """Contribution of the atoms with ``|z| < kappa``."""
    return _partial(model, x, t, phi, p, lambda r: r < cfg.kappa)


def apply_large(model: LevyModel, cfg: NonlocalConfig, x, t: float, u, p,
                diagnostics: dict | None = None):
    """Contribution of the atoms with ``|z| >= kappa``, applied to ``u``.

    Displacements leaving the lattice of a :class:`FieldSlice` are resolved
    by the slice's boundary policy; ``diagnostics`` (if given) accumulates
    ``out_of_box`` and ``jumps`` counts.
    """
    if isinstance(u, FieldSlice) and u.boundary != cfg.boundary:
        u = FieldSlice(u.lattice, u.values, cfg.boundary)
    return _partial(model, x, t, u, p, lambda r: r >= cfg.kappa, diagnostics)


def apply_nonlocal(model: LevyModel, x, t: float, phi, p):
    """The full integral over every atom."""
    return _partial(model, x, t, phi, p, lambda r: True)


def apply_local(model: LevyModel, x, t: float, phi) -> np.ndarray:
    """``sum a_ij d_ij phi + sum a_i d_i phi + d_t phi`` with ``a = sigma sigma^T``."""
    x = np.asarray(x, float)
    a = model.diffusion_matrix(x, t)
    second = np.sum(a * phi.hess(x, t), axis=(-2, -1))
    first = np.sum(np.asarray(model.drift(x, t), float) * phi.grad(x, t), axis=-1)
    return second + first + phi.dt(x, t)


def apply_Hkappa(model: LevyModel, cfg: NonlocalConfig, x, t: float, phi, u=None,
                 diagnostics: dict | None = None):
    """``L phi + I_kappa(phi, D phi) + I^kappa(u, D phi)``; ``u`` defaults to ``phi``."""
    x = np.asarray(x, float)
    p = phi.grad(x, t)
    u = phi if u is None else u
    return (apply_local(model, x, t, phi) + apply_small(model, cfg, x, t, phi, p)
            + apply_large(model, cfg, x, t, u, p, diagnostics))
