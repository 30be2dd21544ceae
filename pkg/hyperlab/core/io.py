"""Text and binary formats for configurations, field grids and couplings."""

import io
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from hyperlab.core.geometry import PointConfiguration, TorusBox
from hyperlab.core.grids import ScalarFieldGrid, VectorFieldGrid

GRID_MAGIC = b"HLGRID1\x00"
_GRID_HEADER = struct.Struct("<8sId")

PathLike = Union[str, Path]


def format_configuration(config: PointConfiguration) -> str:
    buffer = io.StringIO()
    buffer.write(f"L={config.box.L!r} count={config.total_count}\n")
    if len(config):
        table = np.column_stack([config.positions, config.multiplicities])
        np.savetxt(buffer, table, fmt=["%.17g", "%.17g", "%d"])
    return buffer.getvalue()


def parse_configuration(text: str) -> PointConfiguration:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty configuration file")
    header = dict(item.split("=", 1) for item in lines[0].split())
    box = TorusBox(float(header["L"]))
    body = [line for line in lines[1:] if line.strip()]
    if not body:
        config = PointConfiguration.empty(box)
    else:
        table = np.loadtxt(io.StringIO("\n".join(body)), ndmin=2)
        config = PointConfiguration(box, table[:, :2], table[:, 2].astype(np.int64))
    declared = int(header.get("count", config.total_count))
    if declared != config.total_count:
        raise ValueError(f"header count {declared} disagrees with body total {config.total_count}")
    return config


def write_configuration(config: PointConfiguration, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_configuration(config))
    logging.info(f"Wrote configuration with {config.total_count} points to {path}")
    return path


def read_configuration(path: PathLike) -> PointConfiguration:
    return parse_configuration(Path(path).read_text())


def grid_bytes(grid: Union[ScalarFieldGrid, VectorFieldGrid]) -> bytes:
    header = _GRID_HEADER.pack(GRID_MAGIC, grid.n, grid.box.L)
    return header + np.ascontiguousarray(grid.values, dtype="<f8").tobytes()


def write_grid(grid: Union[ScalarFieldGrid, VectorFieldGrid], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(grid_bytes(grid))
    return path


def read_grid(path: PathLike) -> Union[ScalarFieldGrid, VectorFieldGrid]:
    payload = Path(path).read_bytes()
    magic, n, L = _GRID_HEADER.unpack_from(payload)
    if magic != GRID_MAGIC:
        raise ValueError(f"{path} is not an HLGRID1 file")
    values = np.frombuffer(payload, dtype="<f8", offset=_GRID_HEADER.size)
    box = TorusBox(L)
    if values.size == n * n:
        return ScalarFieldGrid(box, values.reshape(n, n).copy())
    if values.size == 2 * n * n:
        return VectorFieldGrid(box, values.reshape(n, n, 2).copy())
    raise ValueError(f"{path}: payload of {values.size} values does not match n={n}")


def coupling_frame(coupling: dict, grid_m: int) -> pd.DataFrame:
    """Sparse triplets (point_id, cell_i, cell_j, mass) sorted for stable output."""
    rows = [
        (point_id, cell // grid_m, cell % grid_m, mass)
        for point_id, entries in coupling.items()
        for cell, mass in entries
    ]
    frame = pd.DataFrame(rows, columns=["point_id", "cell_i", "cell_j", "mass"])
    return frame.sort_values(["point_id", "cell_i", "cell_j"], kind="mergesort").reset_index(drop=True)


def write_coupling_csv(coupling: dict, grid_m: int, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coupling_frame(coupling, grid_m).to_csv(path, index=False, float_format="%.17g")
    return path
