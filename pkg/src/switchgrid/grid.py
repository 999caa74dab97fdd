"""Tensor lattices, grid functions and monotone interpolation."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

CLAMP = "clamp"
EXTRAPOLATE = "extrapolate"


@dataclass(frozen=True)
class Boundary:
    """How values outside the box are obtained.

    ``clamp`` extends the field by its boundary value (monotone).
    ``extrapolate`` uses the Lagrange polynomial of ``degree`` through the
    nodes nearest the boundary; it is not monotone for ``degree >= 1``.
    """

    policy: str = CLAMP
    degree: int = 1

    def __post_init__(self):
        if self.policy not in (CLAMP, EXTRAPOLATE):
            raise ValueError(f"unknown boundary policy {self.policy!r}")
        if self.degree < 0:
            raise ValueError("extrapolation degree must be >= 0")

    @property
    def monotone(self) -> bool:
        return self.policy == CLAMP or self.degree == 0


@dataclass(frozen=True)
class Lattice:
    box: tuple[tuple[float, float], ...]
    nodes: tuple[int, ...]
    time_steps: int = 1

    def __post_init__(self):
        box = tuple((float(a), float(b)) for a, b in self.box)
        nodes = tuple(int(m) for m in self.nodes)
        if len(box) != len(nodes):
            raise ValueError("box and nodes differ in dimension")
        if any(m < 3 for m in nodes):
            raise ValueError("need at least 3 nodes per dimension")
        if any(b <= a for a, b in box):
            raise ValueError("box sides must have positive length")
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "nodes", nodes)

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes

    @cached_property
    def spacing(self) -> np.ndarray:
        return np.array([(b - a) / (m - 1) for (a, b), m in zip(self.box, self.nodes)])

    @cached_property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, m) for (a, b), m in zip(self.box, self.nodes)]

    @cached_property
    def strides(self) -> np.ndarray:
        st = np.ones(self.dim, dtype=np.int64)
        for k in range(self.dim - 2, -1, -1):
            st[k] = st[k + 1] * self.nodes[k + 1]
        return st

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        pts.setflags(write=False)
        return pts

    @cached_property
    def multi_index(self) -> np.ndarray:
        idx = np.stack(np.unravel_index(np.arange(self.size), self.nodes), axis=-1)
        idx.setflags(write=False)
        return idx

    def times(self, horizon: float) -> np.ndarray:
        return np.linspace(0.0, horizon, self.time_steps + 1)

    def refined(self) -> "Lattice":
        """Half the spacing in space and time."""
        return Lattice(self.box, tuple(2 * m - 1 for m in self.nodes), 2 * self.time_steps)

    def interior_mask(self, width: int) -> np.ndarray:
        idx = self.multi_index
        mask = np.ones(self.size, dtype=bool)
        for k, m in enumerate(self.nodes):
            mask &= (idx[:, k] >= width) & (idx[:, k] <= m - 1 - width)
        return mask

    def nearest_index(self, x) -> np.ndarray:
        """Flat index of the nearest node (clamped into the box)."""
        x = np.asarray(x, float)
        flat = np.zeros(x.shape[:-1], dtype=np.int64)
        for k, ((lo, _), m, h) in enumerate(zip(self.box, self.nodes, self.spacing)):
            i = np.clip(np.rint((x[..., k] - lo) / h), 0, m - 1).astype(np.int64)
            flat += i * self.strides[k]
        return flat

    def inside(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, float)
        ok = np.ones(x.shape[:-1], dtype=bool)
        for k, (lo, hi) in enumerate(self.box):
            span = hi - lo
            ok &= (x[..., k] >= lo - tol * span) & (x[..., k] <= hi + tol * span)
        return ok

    def to_dict(self):
        return {"box": [list(b) for b in self.box], "nodes": list(self.nodes),
                "time_steps": self.time_steps}


def axis_weights(s: np.ndarray, lo: float, h: float, m: int, boundary: Boundary):
    """One-dimensional interpolation stencil for coordinates ``s``.

    Returns ``(idx, w)`` each of shape ``s.shape + (k,)``.  Inside the box the
    stencil is linear (two nodes, convex weights); outside it follows the
    boundary policy.
    """
    s = np.asarray(s, float)
    deg = boundary.degree if boundary.policy == EXTRAPOLATE else 0
    k = max(2, deg + 1)
    u = (s - lo) / h
    hi_u = m - 1
    inside_u = np.clip(u, 0.0, hi_u)
    i0 = np.clip(np.floor(inside_u).astype(np.int64), 0, m - 2)
    frac = inside_u - i0
    idx = np.zeros(s.shape + (k,), dtype=np.int64)
    w = np.zeros(s.shape + (k,))
    idx[..., 0] = i0
    idx[..., 1] = i0 + 1
    w[..., 0] = 1.0 - frac
    w[..., 1] = frac
    if deg >= 1:
        for side in ("low", "high"):
            out = u < 0 if side == "low" else u > hi_u
            if not np.any(out):
                continue
            nodes = np.arange(deg + 1) if side == "low" else hi_u - np.arange(deg + 1)
            uo = u[out]
            lag = np.ones((uo.size, deg + 1))
            for a in range(deg + 1):
                for b in range(deg + 1):
                    if a != b:
                        lag[:, a] *= (uo - nodes[b]) / (nodes[a] - nodes[b])
            ii = np.zeros((uo.size, k), dtype=np.int64)
            ww = np.zeros((uo.size, k))
            ii[:, : deg + 1] = nodes
            ww[:, : deg + 1] = lag
            idx[out] = ii
            w[out] = ww
    return idx, w


def interpolation_weights(lattice: Lattice, x, boundary: Boundary = Boundary()):
    """Tensor-product weights: ``(flat_idx, w)`` with shape ``x.shape[:-1] + (K,)``."""
    x = np.asarray(x, float)
    per_axis = [axis_weights(x[..., k], lo, h, m, boundary)
                for k, ((lo, _), h, m) in enumerate(zip(lattice.box, lattice.spacing, lattice.nodes))]
    combos = list(itertools.product(*[range(iw[0].shape[-1]) for iw in per_axis]))
    flat = np.zeros(x.shape[:-1] + (len(combos),), dtype=np.int64)
    wts = np.ones(x.shape[:-1] + (len(combos),))
    for c, choice in enumerate(combos):
        for k, (idx, w) in enumerate(per_axis):
            flat[..., c] += idx[..., choice[k]] * lattice.strides[k]
            wts[..., c] *= w[..., choice[k]]
    return flat, wts


def interpolation_matrix(lattice: Lattice, x, boundary: Boundary = Boundary()) -> sp.csr_matrix:
    """Sparse ``P`` with ``(P @ u)[p] = interpolated u at x[p]``."""
    x = np.asarray(x, float).reshape(-1, lattice.dim)
    flat, wts = interpolation_weights(lattice, x, boundary)
    rows = np.repeat(np.arange(len(x)), flat.shape[-1])
    mat = sp.csr_matrix((wts.reshape(-1), (rows, flat.reshape(-1))), shape=(len(x), lattice.size))
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


@dataclass(frozen=True)
class FieldSlice:
    """Values of one mode at one time level on a lattice."""

    lattice: Lattice
    values: np.ndarray
    boundary: Boundary = Boundary()

    def __post_init__(self):
        v = np.asarray(self.values, float).reshape(-1)
        if v.size != self.lattice.size:
            raise ValueError(f"expected {self.lattice.size} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    def interpolate(self, x, boundary: Boundary | None = None):
        """Interpolated values and the mask of points that fell outside the box."""
        x = np.asarray(x, float)
        flat, w = interpolation_weights(self.lattice, x, boundary or self.boundary)
        return (w * self.values[flat]).sum(axis=-1), ~self.lattice.inside(x)

    def __call__(self, x, t: float | None = None):
        return self.interpolate(x)[0]

    def __add__(self, other: "FieldSlice") -> "FieldSlice":
        return FieldSlice(self.lattice, self.values + other.values, self.boundary)

    def scaled(self, a: float) -> "FieldSlice":
        return FieldSlice(self.lattice, a * self.values, self.boundary)

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.lattice.nodes)

    def gradient(self) -> np.ndarray:
        """Centered differences in the interior, one-sided at the box faces; shape ``(size, N)``."""
        g = np.gradient(self.grid(), *self.lattice.axes, edge_order=1)
        if self.lattice.dim == 1:
            g = [g]
        return np.stack([c.reshape(-1) for c in g], axis=-1)
