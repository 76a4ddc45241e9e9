"""Uniform rectilinear grids and the material arrays sampled on them.

Arrays are stored ``(ny, nx)``: row index is ``y``, column index is ``x``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ValidationError


@dataclass(frozen=True)
class GridSpec:
    """Cell ``(j, i)`` spans ``[x0 + i dx, x0 + (i+1) dx] x [y0 + j dy, ...]``.

    ``offset`` shifts the sampling point inside each cell in units of the
    cell size (``(0, 0)`` is the cell center, ``(0.5, 0)`` a Yee-style
    half-step in ``x``).
    """

    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int
    offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise ValidationError("grid spacing must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValidationError("grid counts must be >= 1")
        for v in (self.x0, self.y0, self.dx, self.dy):
            if not np.isfinite(v):
                raise ValidationError("grid geometry must be finite")

    @classmethod
    def from_extent(cls, xmin, xmax, ymin, ymax, dx, dy=None) -> "GridSpec":
        dy = dx if dy is None else dy
        nx = int(round((xmax - xmin) / dx))
        ny = int(round((ymax - ymin) / dy))
        return cls(xmin, ymin, dx, dy, nx, ny)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def m(self) -> int:
        return self.nx * self.ny

    @property
    def xc(self) -> np.ndarray:
        return self.x0 + (np.arange(self.nx) + 0.5 + self.offset[0]) * self.dx

    @property
    def yc(self) -> np.ndarray:
        return self.y0 + (np.arange(self.ny) + 0.5 + self.offset[1]) * self.dy

    @property
    def x(self) -> np.ndarray:
        """Sample x coordinates as a broadcastable ``(1, nx)`` row."""
        return self.xc[None, :]

    @property
    def y(self) -> np.ndarray:
        """Sample y coordinates as a broadcastable ``(ny, 1)`` column."""
        return self.yc[:, None]

    @property
    def x_edges(self) -> np.ndarray:
        return self.x0 + np.arange(self.nx + 1) * self.dx

    @property
    def y_edges(self) -> np.ndarray:
        return self.y0 + np.arange(self.ny + 1) * self.dy

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x0 + self.nx * self.dx, self.y0, self.y0 + self.ny * self.dy)

    def shifted(self, ox: float, oy: float) -> "GridSpec":
        return GridSpec(self.x0, self.y0, self.dx, self.dy, self.nx, self.ny, (ox, oy))

    def refined(self, q: int) -> "GridSpec":
        """Uniform ``q x q`` subgrid covering the same cells."""
        if q < 1:
            raise ValidationError("q must be >= 1")
        return GridSpec(self.x0, self.y0, self.dx / q, self.dy / q, self.nx * q, self.ny * q)

    def same_as(self, other: "GridSpec") -> bool:
        return (self.nx, self.ny) == (other.nx, other.ny) and np.allclose(
            [self.x0, self.y0, self.dx, self.dy, *self.offset],
            [other.x0, other.y0, other.dx, other.dy, *other.offset], rtol=0, atol=1e-12)

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "dx": self.dx, "dy": self.dy,
                "nx": self.nx, "ny": self.ny, "offset": list(self.offset)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(float(d["x0"]), float(d["y0"]), float(d["dx"]), float(d.get("dy", d["dx"])),
                   int(d["nx"]), int(d["ny"]), tuple(float(v) for v in d.get("offset", (0.0, 0.0))))


@dataclass
class MaterialGrid:
    values: np.ndarray
    grid: GridSpec
    bounds: tuple[float, float] = field(default=(0.0, 1.0))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            self.values = np.broadcast_to(self.values, self.grid.shape).copy()
        lo, hi = min(self.bounds), max(self.bounds)
        slack = 1e-9 * max(1.0, abs(lo), abs(hi))
        if self.values.size and (self.values.min() < lo - slack or self.values.max() > hi + slack):
            raise ValidationError(
                f"material values [{self.values.min()}, {self.values.max()}] outside bounds {self.bounds}")

    def check_same_grid(self, other: "MaterialGrid") -> None:
        if not self.grid.same_as(other.grid):
            raise ContractError("material grids are defined on different grids")

    # serialization ------------------------------------------------------
    def to_csv(self, path) -> None:
        g = self.grid
        header = (f"x0={g.x0!r},y0={g.y0!r},dx={g.dx!r},dy={g.dy!r},nx={g.nx},ny={g.ny},"
                  f"ox={g.offset[0]!r},oy={g.offset[1]!r},eps_b={self.bounds[0]!r},eps_s={self.bounds[1]!r}")
        buf = io.StringIO()
        np.savetxt(buf, self.values, delimiter=",", fmt="%.17g")
        Path(path).write_text("# " + header + "\n" + buf.getvalue())

    @classmethod
    def from_csv(cls, path) -> "MaterialGrid":
        text = Path(path).read_text().splitlines()
        if not text or not text[0].startswith("#"):
            raise ValidationError(f"{path}: missing grid header")
        meta = dict(kv.split("=") for kv in text[0][1:].strip().split(","))
        grid = GridSpec(float(meta["x0"]), float(meta["y0"]), float(meta["dx"]), float(meta["dy"]),
                        int(meta["nx"]), int(meta["ny"]), (float(meta["ox"]), float(meta["oy"])))
        values = np.loadtxt(text[1:], delimiter=",", ndmin=2)
        return cls(values, grid, (float(meta["eps_b"]), float(meta["eps_s"])))

    def to_pgm(self, path, vmin=None, vmax=None) -> None:
        write_pgm(path, self.values, vmin=min(self.bounds) if vmin is None else vmin,
                  vmax=max(self.bounds) if vmax is None else vmax)


def write_pgm(path, values, vmin=None, vmax=None) -> None:
    """16-bit binary graymap; the top image row is the largest ``y``."""
    a = np.asarray(values, dtype=float)
    vmin = float(a.min()) if vmin is None else float(vmin)
    vmax = float(a.max()) if vmax is None else float(vmax)
    span = vmax - vmin if vmax > vmin else 1.0
    img = np.round(np.clip((a - vmin) / span, 0.0, 1.0) * 65535).astype(">u2")[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm` (returns normalized values, y-up rows)."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    img = np.frombuffer(parts[3], dtype=">u2").reshape(h, w)
    return img[::-1].astype(float) / 65535.0
