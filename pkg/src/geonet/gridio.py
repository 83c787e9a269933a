"""On-disk formats: GEOGRID v1 density grids and 16-bit PGM renders.

GEOGRID v1 is a plain text format chosen for diff-ability and portability:

    GEOGRID 1
    <nx> <ny>
    <x_min> <x_max> <y_min> <y_max>
    <density|histogram>
    <nx*ny whitespace-separated values, row-major, x fastest>

Floats are written with 17 significant digits so values round-trip exactly.
"""

from __future__ import annotations

import os

import numpy as np

from .data import DENSITY, HISTOGRAM, DensityGrid, MeshSpec
from .errors import FormatError


def write_geogrid(path: str, grid: DensityGrid) -> None:
    mesh = grid.mesh
    lines = [
        "GEOGRID 1",
        f"{mesh.nx} {mesh.ny}",
        " ".join(format(v, ".17g") for v in mesh.bounds()),
        grid.convention,
    ]
    values = grid.values
    # Eight values per line keeps files diffable without bloating them.
    for i in range(0, values.size, 8):
        lines.append(" ".join(format(v, ".17g") for v in values[i : i + 8]))
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_geogrid(path: str) -> DensityGrid:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "GEOGRID 1":
        raise FormatError(f"{path}: missing GEOGRID 1 header")
    try:
        nx, ny = (int(v) for v in lines[1].split())
        x_min, x_max, y_min, y_max = (float(v) for v in lines[2].split())
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed mesh header") from exc
    convention = lines[3].strip() if len(lines) > 3 else ""
    if convention not in (DENSITY, HISTOGRAM):
        raise FormatError(f"{path}: unknown mass convention {convention!r}")
    try:
        values = np.array(" ".join(lines[4:]).split(), dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric grid values") from exc
    if values.size != nx * ny:
        raise FormatError(f"{path}: expected {nx * ny} values, found {values.size}")
    mesh = MeshSpec(nx, ny, x_min, x_max, y_min, y_max)
    return DensityGrid(mesh, values, convention)


def write_pgm(path: str, grid: DensityGrid) -> None:
    """16-bit PGM render, tone-mapped to the frame maximum, negatives clamped."""
    values = np.maximum(grid.values2d(), 0.0)
    peak = values.max()
    scaled = np.zeros_like(values) if peak <= 0 else values / peak * 65535.0
    pixels = scaled.round().astype(">u2")
    # Grid row 0 is y_min; image row 0 is the top of the picture.
    pixels = pixels[::-1, :]
    header = f"P5\n{grid.mesh.nx} {grid.mesh.ny}\n65535\n".encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(header + pixels.tobytes())
    os.replace(tmp, path)
