"""Qubit x depth grid view of ansatz angles, and angle normalization for diffusion.

Each qubit's parameterized gates are packed left to right in application
order, so entangling gates never open empty columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quantum import CircuitLayout


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class ParamGrid:
    values: np.ndarray  # (n_qubits, n_columns)
    mask: np.ndarray  # bool, same shape
    normalized: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@lru_cache(maxsize=64)
def _cells(layout: CircuitLayout) -> tuple[tuple[int, int, int], ...]:
    """(param index, row, column) for every parameterized gate."""
    next_col = [0] * layout.n_qubits
    cells = []
    for g in layout.parameterized:
        cells.append((g.param, g.target, next_col[g.target]))
        next_col[g.target] += 1
    return tuple(cells)


def grid_shape(layout: CircuitLayout) -> tuple[int, int]:
    cols = max((c for _, _, c in _cells(layout)), default=-1) + 1
    return layout.n_qubits, cols


def grid_mask(layout: CircuitLayout) -> np.ndarray:
    mask = np.zeros(grid_shape(layout), dtype=bool)
    for _, r, c in _cells(layout):
        mask[r, c] = True
    return mask


def encode_grid(layout: CircuitLayout, theta) -> ParamGrid:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (layout.n_params,):
        raise EncodingError(f"expected {layout.n_params} angles, got shape {theta.shape}")
    values = np.zeros(grid_shape(layout))
    for k, r, c in _cells(layout):
        values[r, c] = theta[k]
    return ParamGrid(values, grid_mask(layout))


def decode_grid(layout: CircuitLayout, grid: ParamGrid) -> np.ndarray:
    values = np.asarray(grid.values if isinstance(grid, ParamGrid) else grid, dtype=float)
    if values.shape != grid_shape(layout):
        raise EncodingError(f"grid shape {values.shape} does not match layout {grid_shape(layout)}")
    theta = np.empty(layout.n_params)
    for k, r, c in _cells(layout):
        theta[k] = values[r, c]
    return theta


def wrap_angle(x):
    """Map angles into [-pi, pi); 3*pi maps to -pi."""
    x = np.asarray(x, dtype=float)
    w = np.mod(x + np.pi, 2 * np.pi) - np.pi
    return np.where(w >= np.pi, w - 2 * np.pi, w)


def normalize_angles(grid: ParamGrid, direction: str = "forward") -> ParamGrid:
    """``forward``: wrap then divide by pi. ``inverse``: multiply by pi.

    A grid already in the requested representation is returned unchanged.
    """
    if not np.all(np.isfinite(grid.values)):
        raise EncodingError("grid contains non-finite values")
    if direction == "forward":
        if grid.normalized:
            return grid
        vals = np.where(grid.mask, wrap_angle(grid.values) / np.pi, 0.0)
        return ParamGrid(vals, grid.mask, normalized=True)
    if direction == "inverse":
        if not grid.normalized:
            return grid
        vals = np.where(grid.mask, grid.values * np.pi, 0.0)
        return ParamGrid(vals, grid.mask, normalized=False)
    raise EncodingError(f"direction must be 'forward' or 'inverse', not {direction!r}")


def theta_to_vector(layout: CircuitLayout, theta) -> np.ndarray:
    """Normalized occupied cells, row-major: the diffusion model's x0."""
    g = normalize_angles(encode_grid(layout, theta))
    return g.values[g.mask]


def vector_to_theta(layout: CircuitLayout, x) -> np.ndarray:
    """Inverse of :func:`theta_to_vector` (no unwrapping)."""
    mask = grid_mask(layout)
    vals = np.zeros(mask.shape)
    vals[mask] = np.asarray(x, dtype=float)
    raw = normalize_angles(ParamGrid(vals, mask, normalized=True), "inverse")
    return decode_grid(layout, raw)
