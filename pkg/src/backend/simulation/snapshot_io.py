"""
Binary Snapshot Dump

Layout, all little-endian:
    8 bytes   magic b"BCSNAP01"
    int64     n
    int64[n]  node counts per axis
    float64   h
    float64   dt
    int64[n]  grid offsets (node i on axis k sits at (offset_k + i) * h)
    int64     total time steps of the run
    int64     number of stored snapshots S
    int64[S]  stored step indices
    float64[S * nodes * 2]  row-major (re, im) pairs per node, snapshot by snapshot
"""
import logging
from pathlib import Path
from typing import Union

import numpy as np

from ..grid.grids import SpatialGrid, TimeGrid
from .wave_solver import SpaceTimeField

logger = logging.getLogger(__name__)

MAGIC = b"BCSNAP01"


def write_snapshots(path: Union[str, Path], field: SpaceTimeField) -> Path:
    path = Path(path)
    grid, tg = field.grid, field.time_grid
    pairs = np.empty(field.values.shape + (2,), dtype="<f8")
    pairs[..., 0] = field.values.real
    pairs[..., 1] = field.values.imag
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([grid.dimension], dtype="<i8").tobytes())
        fh.write(np.array(grid.counts, dtype="<i8").tobytes())
        fh.write(np.array([grid.spacing, tg.dt], dtype="<f8").tobytes())
        fh.write(np.array(grid.offsets, dtype="<i8").tobytes())
        fh.write(np.array([tg.steps, len(field.steps)], dtype="<i8").tobytes())
        fh.write(np.asarray(field.steps, dtype="<i8").tobytes())
        fh.write(pairs.tobytes(order="C"))
    logger.info(f"Wrote {len(field.steps)} snapshots to {path}")
    return path


def read_snapshots(path: Union[str, Path]) -> SpaceTimeField:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path} is not a snapshot dump")
    pos = 8

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal pos
        size = np.dtype(dtype).itemsize * count
        out = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
        pos += size
        return out

    n = int(take("<i8", 1)[0])
    counts = tuple(int(c) for c in take("<i8", n))
    h, dt = (float(v) for v in take("<f8", 2))
    offsets = tuple(int(o) for o in take("<i8", n))
    total, stored = (int(v) for v in take("<i8", 2))
    steps = take("<i8", stored).astype(int)
    nodes = int(np.prod(counts))
    pairs = take("<f8", stored * nodes * 2).reshape((stored,) + counts + (2,))
    grid = SpatialGrid(n, h, offsets, counts)
    time_grid = TimeGrid(total * dt, total)
    return SpaceTimeField(grid, time_grid, steps, pairs[..., 0] + 1j * pairs[..., 1])
