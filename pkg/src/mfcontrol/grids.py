"""Uniform space-time grids, grid fields and monotone multilinear interpolation.

All grid data is evaluated off-grid through one interpolation operator:
multilinear tent-function interpolation in space (clamped to the bounding
box) and, for policies, piecewise-constant evaluation in time on the Euler
partition.  The interpolation weights are nonnegative, sum to one and are
supported on the 2^d corners of the enclosing cell, which makes the
operator monotone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform tensor grid on [0, T] x prod_i [lo_i, hi_i]."""

    horizon: float
    time_steps: int
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    nodes: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "nodes", tuple(int(v) for v in self.nodes))
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        if not (len(self.lo) == len(self.hi) == len(self.nodes)):
            raise ValueError("lo, hi, nodes must have equal lengths")
        for lo, hi, n in zip(self.lo, self.hi, self.nodes):
            if n < 2:
                raise ValueError("need at least two nodes per dimension")
            if not lo < hi:
                raise ValueError("need lo < hi per dimension")

    @property
    def state_dim(self) -> int:
        return len(self.nodes)

    @property
    def dt(self) -> float:
        return self.horizon / self.time_steps

    @property
    def h(self) -> np.ndarray:
        lo = np.array(self.lo)
        hi = np.array(self.hi)
        n = np.array(self.nodes)
        return (hi - lo) / (n - 1)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.time_steps + 1) * self.dt

    def axes(self) -> list[np.ndarray]:
        return [
            np.array(self.lo[i]) + np.arange(self.nodes[i]) * self.h[i]
            for i in range(self.state_dim)
        ]

    def node_coords(self) -> np.ndarray:
        """All node coordinates, flattened in C order; shape (num_nodes, d)."""
        idx = np.indices(self.nodes).reshape(self.state_dim, -1).T
        return np.array(self.lo) + idx * self.h

    def boundary_mask(self) -> np.ndarray:
        """True on nodes lying on the boundary of the box; shape (num_nodes,)."""
        idx = np.indices(self.nodes).reshape(self.state_dim, -1).T
        n = np.array(self.nodes)
        return ((idx == 0) | (idx == n - 1)).any(axis=1)

    def time_index(self, t: float) -> int:
        """floor(t / dt), capped at M; robust against roundoff at grid times."""
        j = int(np.floor(t / self.dt + 1e-12))
        return min(max(j, 0), self.time_steps)


def multilinear_eval(grid: SpaceTimeGrid, slice_values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Tent-function interpolation of one time slice at query points.

    slice_values has shape (*grid.nodes, c); x has shape (P, d).  Points are
    clamped componentwise to the bounding box before weights are computed,
    so the field extends constantly outside the domain.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise ValueError(f"non-finite query coordinate {bad[1]} at point {bad[0]}")
    d = grid.state_dim
    c = slice_values.shape[-1]
    lo = np.array(grid.lo)
    h = grid.h
    n = np.array(grid.nodes)

    xc = np.clip(x, lo, np.array(grid.hi))
    u = (xc - lo) / h
    i0 = np.floor(u).astype(np.int64)
    np.clip(i0, 0, n - 2, out=i0)
    frac = np.clip(u - i0, 0.0, 1.0)

    strides = np.ones(d, dtype=np.int64)
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * n[i + 1]
    flat = slice_values.reshape(-1, c)
    base = i0 @ strides

    out = np.zeros((x.shape[0], c))
    for corner in range(1 << d):
        bits = np.array([(corner >> i) & 1 for i in range(d)], dtype=np.int64)
        w = np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=1)
        out += w[:, None] * flat[base + bits @ strides]
    return out


@dataclass
class GridField:
    """Values on a space-time grid; shape (M+1, *nodes, c)."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        expected = (self.grid.time_steps + 1,) + self.grid.nodes
        if self.values.shape[:-1] != expected:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {expected}+(c,)"
            )

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid, components: int) -> "GridField":
        shape = (grid.time_steps + 1,) + grid.nodes + (components,)
        return cls(grid, np.zeros(shape))

    @property
    def components(self) -> int:
        return self.values.shape[-1]

    def copy(self) -> "GridField":
        return type(self)(self.grid, self.values.copy())

    def slice_flat(self, j: int) -> np.ndarray:
        """Node values of time slice j, shape (num_nodes, c)."""
        return self.values[j].reshape(-1, self.components)

    def eval_slice(self, j: int, x: np.ndarray) -> np.ndarray:
        """Multilinear evaluation of time slice j at points x."""
        return multilinear_eval(self.grid, self.values[j], x)

    def interpolate(self, t: float, x: np.ndarray) -> np.ndarray:
        """Evaluate at (t, x): multilinear in space, slice floor(t/dt) in time."""
        return self.eval_slice(self.grid.time_index(t), x)


class PolicyField(GridField):
    """Feedback control on the grid: multilinear in space with clamping,
    piecewise-constant in time on [t_j, t_{j+1})."""

    def evaluate(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.eval_slice(self.grid.time_index(t), x)


def max_principle_check(field: GridField) -> tuple[np.ndarray, np.ndarray]:
    """Exact componentwise extrema per time slice; shapes (M+1, c)."""
    flat = field.values.reshape(field.values.shape[0], -1, field.components)
    return flat.min(axis=1), flat.max(axis=1)


def field_to_csv(field: GridField, path) -> None:
    """Serialize as rows `t, x1..xd, c1..cc` with 17 significant digits."""
    d = field.grid.state_dim
    c = field.components
    coords = field.grid.node_coords()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i+1}" for i in range(d)] + [f"c{i+1}" for i in range(c)])
        for j, t in enumerate(field.grid.times):
            vals = field.slice_flat(j)
            for p in range(coords.shape[0]):
                row = [f"{t:.17g}"]
                row += [f"{v:.17g}" for v in coords[p]]
                row += [f"{v:.17g}" for v in vals[p]]
                writer.writerow(row)


def field_from_csv(path, policy: bool = False) -> GridField:
    """Reconstruct a GridField written by field_to_csv."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = sum(1 for name in header if name.startswith("x"))
        c = sum(1 for name in header if name.startswith("c"))
        rows = np.array([[float(v) for v in row] for row in reader])
    times = np.unique(rows[:, 0])
    axes = [np.unique(rows[:, 1 + i]) for i in range(d)]
    nodes = tuple(len(ax) for ax in axes)
    M = len(times) - 1
    grid = SpaceTimeGrid(
        horizon=float(times[-1]),
        time_steps=M,
        lo=tuple(ax[0] for ax in axes),
        hi=tuple(ax[-1] for ax in axes),
        nodes=nodes,
    )
    expected_rows = (M + 1) * grid.num_nodes
    if rows.shape[0] != expected_rows:
        raise ValueError(f"expected {expected_rows} rows, found {rows.shape[0]}")
    values = rows[:, 1 + d :].reshape((M + 1,) + nodes + (c,))
    cls = PolicyField if policy else GridField
    return cls(grid, values)
