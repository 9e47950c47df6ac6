"""Workspace geometry, ground-truth rasters, camera footprints and noisy sampling.

Two lattices live on the workspace rectangle:

* the planning grid (``cells_x`` x ``cells_y`` cells) that robots move on, and
* the measurement lattice, ``pixels_per_cell_side`` sub-pixels per cell side,
  whose nodes are the sub-pixel centers.

Rasters are stored row-major as ``values[iy, ix]`` with row 0 at the minimum-y
edge. Lattice points are flattened in the same order (``iy * nx + ix``).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, FieldFormatError, RangeError

Cell = tuple[int, int]

DRONE_ALTITUDE_M = 7.0


@dataclass(frozen=True)
class GridSpec:
    cells_x: int = 25
    cells_y: int = 25
    width_m: float = 80.0
    height_m: float = 60.0
    pixels_per_cell_side: int = 5
    cell_width: float = dc_field(init=False, repr=False, compare=False)
    cell_height: float = dc_field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.cells_x < 1 or self.cells_y < 1:
            raise DomainError(f"grid needs at least one cell per axis, got {self.cells_x}x{self.cells_y}")
        if not (self.width_m > 0 and self.height_m > 0):
            raise DomainError("workspace width and height must be positive")
        if self.pixels_per_cell_side < 1:
            raise DomainError("pixels_per_cell_side must be >= 1")
        object.__setattr__(self, "cell_width", self.width_m / self.cells_x)
        object.__setattr__(self, "cell_height", self.height_m / self.cells_y)

    @property
    def measurements_per_image(self) -> int:
        return self.pixels_per_cell_side ** 2

    @property
    def lattice_shape(self) -> tuple[int, int]:
        """(rows, cols) of the measurement lattice, i.e. (ny, nx)."""
        p = self.pixels_per_cell_side
        return self.cells_y * p, self.cells_x * p

    @property
    def pixel_width(self) -> float:
        return self.cell_width / self.pixels_per_cell_side

    @property
    def pixel_height(self) -> float:
        return self.cell_height / self.pixels_per_cell_side

    def lattice_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Sub-pixel center coordinates along x and along y."""
        ny, nx = self.lattice_shape
        xs = (np.arange(nx) + 0.5) * self.pixel_width
        ys = (np.arange(ny) + 0.5) * self.pixel_height
        return xs, ys

    def lattice_points(self) -> np.ndarray:
        """All measurement-lattice nodes, shape (ny*nx, 2), flattened row-major."""
        xs, ys = self.lattice_axes()
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def lattice_indices(self, points: np.ndarray, atol: float = 1e-9) -> np.ndarray | None:
        """Flat lattice index of each point, or None if any point is off-lattice."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        fx = points[:, 0] / self.pixel_width - 0.5
        fy = points[:, 1] / self.pixel_height - 0.5
        ix = np.rint(fx)
        iy = np.rint(fy)
        ny, nx = self.lattice_shape
        if (np.any(np.abs(fx - ix) > atol) or np.any(np.abs(fy - iy) > atol)
                or np.any(ix < 0) or np.any(ix >= nx) or np.any(iy < 0) or np.any(iy >= ny)):
            return None
        return (iy * nx + ix).astype(np.intp)

    def contains_cell(self, cell: Cell) -> bool:
        cx, cy = cell
        return 0 <= cx < self.cells_x and 0 <= cy < self.cells_y

    def cell_center(self, cell: Cell) -> tuple[float, float]:
        cx, cy = cell
        return (cx + 0.5) * self.cell_width, (cy + 0.5) * self.cell_height

    def cell_of(self, x: float, y: float) -> Cell:
        """Cell containing a point; points on the far edges belong to the last cell."""
        cx = min(max(int(np.floor(x / self.cell_width)), 0), self.cells_x - 1)
        cy = min(max(int(np.floor(y / self.cell_height)), 0), self.cells_y - 1)
        return cx, cy

    def cells(self) -> Iterable[Cell]:
        for cy in range(self.cells_y):
            for cx in range(self.cells_x):
                yield cx, cy


@dataclass(frozen=True)
class Field:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.lattice_shape:
            raise DimensionError(
                f"raster shape {values.shape} does not match lattice {self.grid.lattice_shape}")
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise RangeError("field values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def truth_at(self, points: np.ndarray) -> np.ndarray:
        """Ground truth at continuous points: value of the nearest lattice node."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        g = self.grid
        x, y = points[:, 0], points[:, 1]
        outside = (x < 0) | (x > g.width_m) | (y < 0) | (y > g.height_m) | ~np.isfinite(x) | ~np.isfinite(y)
        if np.any(outside):
            bad = points[np.argmax(outside)]
            raise DomainError(f"point ({bad[0]}, {bad[1]}) lies outside the workspace")
        ny, nx = g.lattice_shape
        ix = np.clip(np.floor(x / g.pixel_width).astype(int), 0, nx - 1)
        iy = np.clip(np.floor(y / g.pixel_height).astype(int), 0, ny - 1)
        return self.values[iy, ix]


@dataclass(frozen=True)
class Measurement:
    location: tuple[float, float]
    value: float
    robot_id: int
    step: int


def footprint(cell: Cell, grid: GridSpec) -> np.ndarray:
    """Sub-pixel centers imaged from ``cell``, shape (p*p, 2), row-major within the cell."""
    if not grid.contains_cell(cell):
        raise IndexError(f"cell {cell} outside {grid.cells_x}x{grid.cells_y} grid")
    p = grid.pixels_per_cell_side
    cx, cy = cell
    xs = (cx * p + np.arange(p) + 0.5) * grid.pixel_width
    ys = (cy * p + np.arange(p) + 0.5) * grid.pixel_height
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def footprint_indices(cell: Cell, grid: GridSpec) -> np.ndarray:
    """Flat lattice indices of ``footprint(cell, grid)`` in the same order."""
    if not grid.contains_cell(cell):
        raise IndexError(f"cell {cell} outside {grid.cells_x}x{grid.cells_y} grid")
    p = grid.pixels_per_cell_side
    nx = grid.cells_x * p
    cx, cy = cell
    iy, ix = np.meshgrid(cy * p + np.arange(p), cx * p + np.arange(p), indexing="ij")
    return (iy * nx + ix).ravel()


def sample(field: Field, points: np.ndarray, noise_sd: float, rng: np.random.Generator) -> np.ndarray:
    """Noisy readings at ``points``. Noise is additive and never clamped."""
    truth = field.truth_at(points)
    if noise_sd == 0:
        return truth.copy()
    return truth + rng.normal(0.0, noise_sd, size=truth.shape)


# --------------------------------------------------------------------------- I/O

def _grid_for_raster(shape: tuple[int, int], grid: GridSpec | None, pixels_per_cell_side: int,
                     width_m: float, height_m: float) -> GridSpec:
    rows, cols = shape
    if grid is not None:
        if (rows, cols) != grid.lattice_shape:
            raise DimensionError(f"raster is {rows}x{cols}, grid expects {grid.lattice_shape}")
        return grid
    p = pixels_per_cell_side
    if rows % p or cols % p:
        raise DimensionError(f"raster {rows}x{cols} is not a multiple of {p} px per cell side")
    return GridSpec(cells_x=cols // p, cells_y=rows // p, width_m=width_m, height_m=height_m,
                    pixels_per_cell_side=p)


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise FieldFormatError(f"{path}:{lineno}: non-numeric entry") from exc
    if not rows:
        raise FieldFormatError(f"{path}: empty CSV")
    width = len(rows[0])
    for i, row in enumerate(rows, 1):
        if len(row) != width:
            raise FieldFormatError(f"{path}: row {i} has {len(row)} columns, expected {width}")
    return np.array(rows, dtype=float)


def _pgm_tokens(data: bytes, count: int, start: int = 0) -> tuple[list[bytes], int]:
    tokens = []
    i = start
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise FieldFormatError("truncated PGM header")
        j = i
        while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i


def _read_pgm(path: Path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), end = _pgm_tokens(data, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FieldFormatError(f"{path}: bad PGM header") from exc
    if not (0 < maxval <= 65535) or w < 1 or h < 1:
        raise FieldFormatError(f"{path}: bad PGM header values")
    if magic == b"P2":
        toks, _ = _pgm_tokens(data, w * h, end) if w * h else ([], end)
        try:
            pixels = np.array([int(t) for t in toks], dtype=np.int64)
        except ValueError as exc:
            raise FieldFormatError(f"{path}: non-integer pixel") from exc
    elif magic == b"P5":
        body = data[end + 1:]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(body) < w * h * dtype.itemsize:
            raise FieldFormatError(f"{path}: truncated PGM raster")
        pixels = np.frombuffer(body[:w * h * dtype.itemsize], dtype=dtype).astype(np.int64)
    else:
        raise FieldFormatError(f"{path}: unsupported PGM magic {magic!r}")
    return pixels.reshape(h, w), maxval


def load_field(path, fmt: str | None = None, grid: GridSpec | None = None, *,
               pixels_per_cell_side: int = 5, width_m: float = 80.0, height_m: float = 60.0,
               maxval: float = 1.0) -> Field:
    """Read a raster and normalize it to [0, 1].

    Parameters
    ----------
    path : path-like
        CSV (comma separated, row 0 = minimum-y edge) or PGM (P2/P5).
    fmt : {"csv", "pgm"}, optional
        Inferred from the suffix when omitted.
    grid : GridSpec, optional
        When given the raster must match its lattice exactly; otherwise the grid
        is derived from the raster shape and ``pixels_per_cell_side``.
    maxval : float
        Full-scale value for CSV input. PGM files carry their own.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        raw = _read_csv(path)
        full_scale = float(maxval)
    elif fmt == "pgm":
        raw, full_scale = _read_pgm(path)
        raw = raw.astype(float)
    else:
        raise FieldFormatError(f"unknown raster format {fmt!r}")
    if not np.all(np.isfinite(raw)) or raw.min() < 0 or raw.max() > full_scale:
        raise RangeError(f"{path}: values must lie in [0, {full_scale:g}]")
    g = _grid_for_raster(raw.shape, grid, pixels_per_cell_side, width_m, height_m)
    return Field(g, raw / full_scale)


def save_field(field: Field, path) -> None:
    """Write a CSV that ``load_field`` reads back to identical values."""
    np.savetxt(path, field.values, delimiter=",", fmt="%.17g")


# ---------------------------------------------------------------------- synthetic

def _blobs(grid: GridSpec, rng: np.random.Generator, n_blobs: int = 8) -> np.ndarray:
    xs, ys = grid.lattice_axes()
    gx, gy = np.meshgrid(xs, ys)
    out = np.zeros(gx.shape)
    scale = min(grid.width_m, grid.height_m)
    for _ in range(n_blobs):
        cx = rng.uniform(0, grid.width_m)
        cy = rng.uniform(0, grid.height_m)
        sx, sy = rng.uniform(0.06, 0.2, size=2) * scale
        amp = rng.uniform(0.3, 1.0)
        out += amp * np.exp(-0.5 * (((gx - cx) / sx) ** 2 + ((gy - cy) / sy) ** 2))
    lo, hi = out.min(), out.max()
    if hi - lo <= 0:
        return np.zeros_like(out)
    return (out - lo) / (hi - lo)


def synth_field(kind: str, grid: GridSpec, seed: int | np.random.SeedSequence = 0) -> Field:
    """Deterministic synthetic ground truth.

    ``blobs``: sum of random anisotropic Gaussian bumps, min-max normalized.
    ``gradient``: 0 on the first lattice column rising linearly to 1 on the last.
    ``checker``: alternating 0/1 planning cells.
    """
    ny, nx = grid.lattice_shape
    if kind == "blobs":
        values = _blobs(grid, np.random.default_rng(seed))
    elif kind == "gradient":
        col = np.linspace(0.0, 1.0, nx) if nx > 1 else np.zeros(1)
        values = np.tile(col, (ny, 1))
    elif kind == "checker":
        p = grid.pixels_per_cell_side
        iy, ix = np.indices((ny, nx))
        values = ((ix // p + iy // p) % 2).astype(float)
    else:
        raise DomainError(f"unknown synthetic field kind {kind!r}")
    return Field(grid, values)


def raster_points(cells: Sequence[Cell], grid: GridSpec) -> np.ndarray:
    """Concatenated footprints of several cells."""
    if not cells:
        return np.empty((0, 2))
    return np.vstack([footprint(c, grid) for c in cells])
