"""Uniform tensor grids on a box domain and discrete L2 fields.

The domain is the box [-L_1, L_1] x ... x [-L_d, L_d] sampled on a uniform
tensor grid with an odd number of points per axis, so the origin is always a
grid node.  Quadrature is the tensor trapezoidal rule; the resulting node
weights turn sums into L2 integrals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REAL = "real"
COMPLEX = "complex"


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Discretized box domain with quadrature weights.

    Fields with ``n_components`` components live on the grid as arrays of
    shape ``(node_count, n_components)``.  ``weights`` has one entry per node
    (units of volume) and sums to the box volume.
    """

    dim: int
    half_widths: tuple
    points_per_axis: tuple
    n_components: int
    field_kind: str
    spacing: tuple = field(init=False)
    weights: np.ndarray = field(init=False, repr=False)
    origin_index: int = field(init=False)

    def __post_init__(self):
        if self.dim < 1:
            raise GridError("dim must be >= 1")
        if len(self.half_widths) != self.dim or len(self.points_per_axis) != self.dim:
            raise GridError("half_widths and points_per_axis must have length dim")
        if self.n_components < 1:
            raise GridError("n_components must be >= 1")
        if self.field_kind not in (REAL, COMPLEX):
            raise GridError(f"unknown field_kind {self.field_kind!r}")
        for L in self.half_widths:
            if L <= 0:
                raise GridError("half_widths must be positive")
        for n in self.points_per_axis:
            if n < 3:
                raise GridError("points_per_axis must be >= 3")
            if n % 2 == 0:
                raise GridError("points_per_axis must be odd so the origin is a node")
        spacing = tuple(2.0 * L / (n - 1) for L, n in zip(self.half_widths, self.points_per_axis))
        object.__setattr__(self, "spacing", spacing)

        axis_weights = []
        for h, n in zip(spacing, self.points_per_axis):
            w = np.full(n, h)
            w[0] = w[-1] = h / 2.0
            axis_weights.append(w)
        w = axis_weights[0]
        for wa in axis_weights[1:]:
            w = np.multiply.outer(w, wa)
        w = np.ascontiguousarray(w.ravel())
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

        # origin sits at the middle index of every axis
        mid = [n // 2 for n in self.points_per_axis]
        origin = np.ravel_multi_index(mid, self.points_per_axis)
        object.__setattr__(self, "origin_index", int(origin))

    @property
    def node_count(self):
        return int(np.prod(self.points_per_axis))

    @property
    def dof_count(self):
        """Scalar degrees of freedom: node_count * n_components."""
        return self.node_count * self.n_components

    @property
    def volume(self):
        return float(np.prod([2.0 * L for L in self.half_widths]))

    def axes(self):
        return [np.linspace(-L, L, n) for L, n in zip(self.half_widths, self.points_per_axis)]

    def coordinates(self):
        """Node coordinates, shape (node_count, dim)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def dof_weights(self):
        """Quadrature weight per scalar degree of freedom (node-major layout)."""
        return np.repeat(self.weights, self.n_components)

    def dtype(self):
        return np.complex128 if self.field_kind == COMPLEX else np.float64

    def neighbor_index(self, axis, step):
        """Index of the node ``step`` grid points from the origin along ``axis``."""
        mid = [n // 2 for n in self.points_per_axis]
        mid[axis] += step
        if not (0 <= mid[axis] < self.points_per_axis[axis]):
            raise GridError("neighbor outside grid")
        return int(np.ravel_multi_index(mid, self.points_per_axis))


def build_grid(dim, half_widths, points_per_axis, n_components=1, field_kind=REAL):
    """Build a Grid; scalars are broadcast across axes."""
    if np.isscalar(half_widths):
        half_widths = (float(half_widths),) * dim
    if np.isscalar(points_per_axis):
        points_per_axis = (int(points_per_axis),) * dim
    return Grid(dim, tuple(float(L) for L in half_widths),
                tuple(int(n) for n in points_per_axis), int(n_components), field_kind)


@dataclass(frozen=True)
class Field:
    """Values of an N-component field on a grid, shape (node_count, n_components)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        expected = (self.grid.node_count, self.grid.n_components)
        if v.shape != expected:
            raise GridError(f"field shape {v.shape} does not match grid {expected}")
        if self.grid.field_kind == REAL:
            if np.iscomplexobj(v):
                raise GridError("complex values on a real-kind grid")
            v = v.astype(np.float64, copy=False)
        else:
            v = v.astype(np.complex128, copy=False)
        object.__setattr__(self, "values", v)

    def flat(self):
        """Node-major flat view of the values (dof layout)."""
        return self.values.reshape(-1)


def inner_product(f, g):
    """Quadrature L2 inner product, conjugate-linear in the first argument."""
    if f.grid is not g.grid and f.grid != g.grid:
        raise GridError("fields live on different grids")
    w = f.grid.weights
    s = np.sum(w[:, None] * np.conj(f.values) * g.values)
    return complex(s) if f.grid.field_kind == COMPLEX else float(s.real)


def l2_norm(f):
    w = f.grid.weights
    return float(np.sqrt(np.sum(w[:, None] * np.abs(f.values) ** 2)))


def field_from_flat(grid, flat):
    return Field(grid, np.asarray(flat).reshape(grid.node_count, grid.n_components))
