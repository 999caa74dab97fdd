"""Coefficient families.

Every coefficient in a problem is one of a small number of registered
families.  Scalar families (payoff rates, switching costs, terminal data)
expose analytic space/time derivatives because the barrier construction
differentiates them; the generic :class:`Expr` wrapper falls back to
central differences.

Conventions: ``x`` has shape ``(..., N)``, ``t`` is a float.  Scalar
values come back with shape ``(...)``, gradients ``(..., N)``, Hessians
``(..., N, N)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_FD_STEP = 1e-5


def _as_points(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


class ScalarField:
    """Base class for scalar functions of ``(x, t)``."""

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x, t: float = 0.0) -> np.ndarray:
        x = _as_points(x)
        n = x.shape[-1]
        out = np.empty(x.shape)
        for k in range(n):
            e = np.zeros(n)
            e[k] = _FD_STEP
            out[..., k] = (self(x + e, t) - self(x - e, t)) / (2 * _FD_STEP)
        return out

    def hess(self, x, t: float = 0.0) -> np.ndarray:
        x = _as_points(x)
        n = x.shape[-1]
        out = np.empty(x.shape + (n,))
        step = 1e-4
        for k in range(n):
            e = np.zeros(n)
            e[k] = step
            out[..., :, k] = (self.grad(x + e, t) - self.grad(x - e, t)) / (2 * step)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def dt(self, x, t: float = 0.0) -> np.ndarray:
        return (self(x, t + _FD_STEP) - self(x, t - _FD_STEP)) / (2 * _FD_STEP)


@dataclass(frozen=True)
class Constant(ScalarField):
    value: float = 0.0

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        return np.full(x.shape[:-1], float(self.value))

    def grad(self, x, t=0.0):
        return np.zeros(_as_points(x).shape)

    def hess(self, x, t=0.0):
        x = _as_points(x)
        return np.zeros(x.shape + (x.shape[-1],))

    def dt(self, x, t=0.0):
        return np.zeros(_as_points(x).shape[:-1])


@dataclass(frozen=True)
class Affine(ScalarField):
    """``value + gradient . x + time * t``."""

    value: float = 0.0
    gradient: tuple[float, ...] = ()
    time: float = 0.0

    def _b(self, n):
        b = np.zeros(n)
        b[: len(self.gradient)] = self.gradient
        return b

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        return self.value + x @ self._b(x.shape[-1]) + self.time * t

    def grad(self, x, t=0.0):
        x = _as_points(x)
        return np.broadcast_to(self._b(x.shape[-1]), x.shape).copy()

    def hess(self, x, t=0.0):
        x = _as_points(x)
        return np.zeros(x.shape + (x.shape[-1],))

    def dt(self, x, t=0.0):
        return np.full(_as_points(x).shape[:-1], float(self.time))


@dataclass(frozen=True)
class DiagQuadratic(ScalarField):
    """``value + gradient . x + sum_k curvature_k x_k^2 + time * t``."""

    value: float = 0.0
    gradient: tuple[float, ...] = ()
    curvature: tuple[float, ...] = ()
    time: float = 0.0

    def _vec(self, v, n):
        out = np.zeros(n)
        out[: len(v)] = v
        return out

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        n = x.shape[-1]
        return (self.value + x @ self._vec(self.gradient, n)
                + (x * x) @ self._vec(self.curvature, n) + self.time * t)

    def grad(self, x, t=0.0):
        x = _as_points(x)
        n = x.shape[-1]
        return self._vec(self.gradient, n) + 2.0 * x * self._vec(self.curvature, n)

    def hess(self, x, t=0.0):
        x = _as_points(x)
        n = x.shape[-1]
        h = np.diag(2.0 * self._vec(self.curvature, n))
        return np.broadcast_to(h, x.shape + (n,)).copy()

    def dt(self, x, t=0.0):
        return np.full(_as_points(x).shape[:-1], float(self.time))


@dataclass(frozen=True)
class SineSquared(ScalarField):
    """``value + amplitude * sin(x_axis)^2``."""

    value: float = 0.0
    amplitude: float = 1.0
    axis: int = 0

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        return self.value + self.amplitude * np.sin(x[..., self.axis]) ** 2

    def grad(self, x, t=0.0):
        x = _as_points(x)
        out = np.zeros(x.shape)
        out[..., self.axis] = self.amplitude * np.sin(2 * x[..., self.axis])
        return out

    def hess(self, x, t=0.0):
        x = _as_points(x)
        n = x.shape[-1]
        out = np.zeros(x.shape + (n,))
        out[..., self.axis, self.axis] = 2 * self.amplitude * np.cos(2 * x[..., self.axis])
        return out

    def dt(self, x, t=0.0):
        return np.zeros(_as_points(x).shape[:-1])


@dataclass(frozen=True)
class Tabulated(ScalarField):
    """Multilinear interpolation of values tabulated on a tensor grid in x.

    Outside the table the nearest boundary value is used.  Derivatives
    are piecewise: the gradient is the cell slope, the Hessian is zero.
    """

    axes: tuple[tuple[float, ...], ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        shape = tuple(len(a) for a in self.axes)
        if vals.shape != shape:
            raise ValueError(f"tabulated values have shape {vals.shape}, axes imply {shape}")
        object.__setattr__(self, "values", vals)

    def __hash__(self):
        return hash((self.axes, self.values.tobytes()))

    def __eq__(self, other):
        return (isinstance(other, Tabulated) and self.axes == other.axes
                and np.array_equal(self.values, other.values))

    def _cell(self, x):
        idx, frac = [], []
        for k, ax in enumerate(self.axes):
            ax = np.asarray(ax)
            s = np.clip(x[..., k], ax[0], ax[-1])
            i = np.clip(np.searchsorted(ax, s, side="right") - 1, 0, len(ax) - 2)
            idx.append(i)
            frac.append((s - ax[i]) / (ax[i + 1] - ax[i]))
        return idx, frac

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        idx, frac = self._cell(x)
        n = len(self.axes)
        out = np.zeros(x.shape[:-1])
        for corner in range(2 ** n):
            w = np.ones(x.shape[:-1])
            sel = []
            for k in range(n):
                bit = (corner >> k) & 1
                w = w * (frac[k] if bit else 1.0 - frac[k])
                sel.append(idx[k] + bit)
            out += w * self.values[tuple(sel)]
        return out

    def grad(self, x, t=0.0):
        x = _as_points(x)
        idx, frac = self._cell(x)
        n = len(self.axes)
        out = np.zeros(x.shape)
        for d in range(n):
            ax = np.asarray(self.axes[d])
            h = ax[idx[d] + 1] - ax[idx[d]]
            for corner in range(2 ** n):
                w = np.ones(x.shape[:-1])
                sel = []
                for k in range(n):
                    bit = (corner >> k) & 1
                    if k == d:
                        w = w * ((1.0 if bit else -1.0) / h)
                    else:
                        w = w * (frac[k] if bit else 1.0 - frac[k])
                    sel.append(idx[k] + bit)
                out[..., d] += w * self.values[tuple(sel)]
        return out

    def hess(self, x, t=0.0):
        x = _as_points(x)
        return np.zeros(x.shape + (x.shape[-1],))

    def dt(self, x, t=0.0):
        return np.zeros(_as_points(x).shape[:-1])


class Expr(ScalarField):
    """Wrap an arbitrary vectorised callable ``fn(x, t)``.

    Derivatives are analytic when supplied, central differences otherwise.
    """

    def __init__(self, fn: Callable, grad: Callable | None = None,
                 hess: Callable | None = None, dt: Callable | None = None):
        self.fn = fn
        self._grad = grad
        self._hess = hess
        self._dt = dt

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        return np.broadcast_to(np.asarray(self.fn(x, t), dtype=float), x.shape[:-1]).copy()

    def grad(self, x, t=0.0):
        return self._grad(_as_points(x), t) if self._grad else super().grad(x, t)

    def hess(self, x, t=0.0):
        return self._hess(_as_points(x), t) if self._hess else super().hess(x, t)

    def dt(self, x, t=0.0):
        return self._dt(_as_points(x), t) if self._dt else super().dt(x, t)


@dataclass(frozen=True)
class Scaled(ScalarField):
    """``exp(rate * t) * base``; used by the exponential time transform."""

    base: ScalarField
    rate: float = 1.0
    fixed_time: float | None = None

    def _factor(self, t):
        return np.exp(self.rate * (t if self.fixed_time is None else self.fixed_time))

    def __call__(self, x, t=0.0):
        return self._factor(t) * self.base(x, t)

    def grad(self, x, t=0.0):
        return self._factor(t) * self.base.grad(x, t)

    def hess(self, x, t=0.0):
        return self._factor(t) * self.base.hess(x, t)

    def dt(self, x, t=0.0):
        f = self._factor(t)
        out = f * self.base.dt(x, t)
        if self.fixed_time is None:
            out = out + self.rate * f * self.base(x, t)
        return out


# --- vector / matrix coefficients of the operator ------------------------

class VectorField:
    """Drift ``a(x, t)``: returns shape ``(..., N)``."""

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantVector(VectorField):
    value: tuple[float, ...]

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        return np.broadcast_to(np.asarray(self.value, float), x.shape).copy()


@dataclass(frozen=True)
class AffineVector(VectorField):
    """``offset + matrix @ x``."""

    offset: tuple[float, ...]
    matrix: tuple[tuple[float, ...], ...]

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        return np.asarray(self.offset, float) + x @ np.asarray(self.matrix, float).T


class MatrixField:
    """Diffusion factor ``sigma(x, t)``: returns shape ``(..., N, N)``."""

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantMatrix(MatrixField):
    value: tuple[tuple[float, ...], ...]

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        m = np.asarray(self.value, float)
        return np.broadcast_to(m, x.shape[:-1] + m.shape).copy()


@dataclass(frozen=True)
class DiagonalQuadraticMatrix(MatrixField):
    """Diagonal ``sigma_kk = offset_k + slope_k x_k + curvature_k x_k^2``."""

    offset: tuple[float, ...]
    slope: tuple[float, ...] = ()
    curvature: tuple[float, ...] = ()

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        n = x.shape[-1]

        def vec(v):
            out = np.zeros(n)
            out[: len(v)] = v
            return out

        diag = vec(self.offset) + vec(self.slope) * x + vec(self.curvature) * x * x
        return diag[..., :, None] * np.eye(n)


@dataclass(frozen=True)
class DiagonalSqrtAbs(MatrixField):
    """Diagonal ``sigma_kk = scale * sqrt(|x_k|)``: Hölder but not Lipschitz at 0."""

    scale: float = 1.0

    def __call__(self, x, t=0.0):
        x = _as_points(x)
        n = x.shape[-1]
        return (self.scale * np.sqrt(np.abs(x)))[..., :, None] * np.eye(n)


class JumpField:
    """Jump amplitude ``eta(x, t, z)`` for a single mark ``z`` (shape ``(l,)``)."""

    def __call__(self, x, t: float, z) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearJump(JumpField):
    """``eta = matrix @ z``, independent of the state."""

    matrix: tuple[tuple[float, ...], ...]

    def __call__(self, x, t, z):
        x = _as_points(x)
        eta = np.asarray(self.matrix, float) @ np.asarray(z, float)
        return np.broadcast_to(eta, x.shape).copy()


@dataclass(frozen=True)
class SaturatingJump(JumpField):
    """``eta = matrix @ z / max(|z|, 1)``: bounded by ``|matrix| min(|z|, 1)``."""

    matrix: tuple[tuple[float, ...], ...]

    def __call__(self, x, t, z):
        x = _as_points(x)
        z = np.asarray(z, float)
        eta = np.asarray(self.matrix, float) @ z / max(float(np.linalg.norm(z)), 1.0)
        return np.broadcast_to(eta, x.shape).copy()


@dataclass(frozen=True)
class ZeroJump(JumpField):
    dim: int = 1

    def __call__(self, x, t, z):
        return np.zeros(_as_points(x).shape)


def zero_drift(n: int) -> ConstantVector:
    return ConstantVector(tuple([0.0] * n))


def zero_diffusion(n: int) -> ConstantMatrix:
    return ConstantMatrix(tuple(tuple([0.0] * n) for _ in range(n)))


# --- registry used by the JSON ingestion ----------------------------------

def _tuple(v):
    if isinstance(v, (list, tuple)):
        return tuple(_tuple(e) for e in v)
    return float(v)


def _scalar_constant(p):
    return Constant(float(p["value"]))


def _scalar_affine(p):
    return Affine(float(p.get("value", 0.0)), _tuple(p.get("gradient", [])), float(p.get("time", 0.0)))


def _scalar_diag_quadratic(p):
    return DiagQuadratic(float(p.get("value", 0.0)), _tuple(p.get("gradient", [])),
                         _tuple(p.get("curvature", [])), float(p.get("time", 0.0)))


def _scalar_sine_squared(p):
    return SineSquared(float(p.get("value", 0.0)), float(p.get("amplitude", 1.0)), int(p.get("axis", 0)))


def _scalar_tabulated(p):
    return Tabulated(_tuple(p["axes"]), np.asarray(p["values"], float))


SCALAR_FAMILIES: dict[str, Callable[[dict], ScalarField]] = {
    "constant": _scalar_constant,
    "affine": _scalar_affine,
    "diagonal_quadratic": _scalar_diag_quadratic,
    "sine_squared": _scalar_sine_squared,
    "tabulated": _scalar_tabulated,
}

DRIFT_FAMILIES: dict[str, Callable[[dict], VectorField]] = {
    "constant": lambda p: ConstantVector(_tuple(p["value"])),
    "affine": lambda p: AffineVector(_tuple(p["offset"]), _tuple(p["matrix"])),
}

DIFFUSION_FAMILIES: dict[str, Callable[[dict], MatrixField]] = {
    "constant": lambda p: ConstantMatrix(_tuple(p["matrix"])),
    "diagonal_quadratic": lambda p: DiagonalQuadraticMatrix(
        _tuple(p["offset"]), _tuple(p.get("slope", [])), _tuple(p.get("curvature", []))),
    "diagonal_sqrt_abs": lambda p: DiagonalSqrtAbs(float(p.get("scale", 1.0))),
}

JUMP_FAMILIES: dict[str, Callable[[dict], JumpField]] = {
    "linear": lambda p: LinearJump(_tuple(p["matrix"])),
    "saturating": lambda p: SaturatingJump(_tuple(p["matrix"])),
}


def build(registry: dict, spec: dict, what: str):
    """Instantiate ``spec = {"family": name, ...params}`` from ``registry``."""
    name = spec.get("family")
    if name not in registry:
        raise KeyError(f"unknown {what} family {name!r}; registered: {sorted(registry)}")
    params = {k: v for k, v in spec.items() if k != "family"}
    return registry[name](params)
