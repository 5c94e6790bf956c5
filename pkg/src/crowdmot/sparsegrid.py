"""Sparse voxel grids and the resolution algebra of the point-cloud encoder.

Models the encoder's shape/occupancy behavior without any learned weights:
voxelization of a (two-frame) point cloud, stride-doubling downsamples, and
the two high-resolution fusion topologies. Feature transforms are fixed
seeded matrices standing in for convolution kernels, so every operation is
a deterministic function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SNAP = 1e-9

VALID_STRIDES = (1, 2, 4, 8)

# Default feature widths for the four encoder stages.
DEFAULT_WIDTHS = (16, 32, 64, 128)


@dataclass(frozen=True)
class VoxelSpec:
    """3D voxel grid geometry: metric extents and per-axis cell sizes."""

    x_min: float = -96.0
    x_max: float = 96.0
    y_min: float = -48.0
    y_max: float = 48.0
    z_min: float = -5.0
    z_max: float = 3.0
    dx: float = 0.075
    dy: float = 0.075
    dz: float = 0.20

    def __post_init__(self) -> None:
        if self.dx <= 0 or self.dy <= 0 or self.dz <= 0:
            raise ValueError("voxel sizes must be positive")
        for lo, hi, step, name in (
            (self.x_min, self.x_max, self.dx, "x"),
            (self.y_min, self.y_max, self.dy, "y"),
            (self.z_min, self.z_max, self.dz, "z"),
        ):
            if hi <= lo:
                raise ValueError(f"degenerate {name} extent [{lo}, {hi}]")
            cells = (hi - lo) / step
            if abs(cells - round(cells)) > 1e-9 * max(1.0, abs(cells)):
                raise ValueError(
                    f"{name} extent [{lo}, {hi}] is not a whole number of {step} m voxels"
                )

    @property
    def shape(self) -> tuple[int, int, int]:
        """Dense voxel-count bound (nx, ny, nz) at stride 1."""
        return (
            round((self.x_max - self.x_min) / self.dx),
            round((self.y_max - self.y_min) / self.dy),
            round((self.z_max - self.z_min) / self.dz),
        )

    def strided_shape(self, stride: int) -> tuple[int, int, int]:
        nx, ny, nz = self.shape
        return (-(-nx // stride), -(-ny // stride), -(-nz // stride))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points as an (n, 5) array of x, y, z, intensity, time_flag."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 5:
            raise ValueError(f"points must be (n, 5), got {pts.shape}")
        flags = pts[:, 4]
        if not np.isin(flags, (0.0, 1.0)).all():
            raise ValueError("time_flag channel must be 0 or 1")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_two_frames(cls, current: np.ndarray, previous: np.ndarray) -> "PointCloud":
        """Concatenate two (n, 4) x/y/z/intensity frames with time flags 0 and 1."""
        curr = np.asarray(current, dtype=np.float64)
        prev = np.asarray(previous, dtype=np.float64)
        stacked = []
        for arr, flag in ((curr, 0.0), (prev, 1.0)):
            if arr.ndim != 2 or arr.shape[1] != 4:
                raise ValueError(f"each frame must be (n, 4), got {arr.shape}")
            stacked.append(np.hstack([arr, np.full((arr.shape[0], 1), flag)]))
        return cls(np.vstack(stacked))


@dataclass(frozen=True, eq=False)
class SparseGrid:
    """Occupied voxels only: integer coordinates mapped to feature vectors."""

    spec: VoxelSpec
    stride: int
    channels: int
    cells: dict[tuple[int, int, int], np.ndarray]
    n_dropped: int = 0

    def __post_init__(self) -> None:
        if self.stride not in VALID_STRIDES:
            raise ValueError(f"stride must be one of {VALID_STRIDES}, got {self.stride}")
        nx, ny, nz = self.spec.strided_shape(self.stride)
        for coord, feat in self.cells.items():
            cx, cy, cz = coord
            if not (0 <= cx < nx and 0 <= cy < ny and 0 <= cz < nz):
                raise ValueError(f"coordinate {coord} outside {nx}x{ny}x{nz} bound")
            if feat.shape != (self.channels,):
                raise ValueError(
                    f"feature at {coord} has shape {feat.shape}, expected ({self.channels},)"
                )

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def occupancy(self) -> set[tuple[int, int, int]]:
        return set(self.cells)

    @property
    def resolution(self) -> tuple[float, float, float]:
        """Metric size of one cell at this stride."""
        return (
            self.spec.dx * self.stride,
            self.spec.dy * self.stride,
            self.spec.dz * self.stride,
        )

    @property
    def bev_shape(self) -> tuple[int, int]:
        nx, ny, _ = self.spec.strided_shape(self.stride)
        return nx, ny


@dataclass(frozen=True, eq=False)
class ChannelMap:
    """Fixed linear feature transform standing in for a learned kernel."""

    weights: np.ndarray

    @classmethod
    def seeded(cls, n_in: int, n_out: int, seed: int = 0) -> "ChannelMap":
        rng = np.random.default_rng([seed, n_in, n_out])
        return cls(rng.standard_normal((n_out, n_in)) / math.sqrt(n_in))

    @classmethod
    def identity(cls, n: int) -> "ChannelMap":
        return cls(np.eye(n))

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def apply(self, feature: np.ndarray) -> np.ndarray:
        return self.weights @ feature


def voxelize(pc: PointCloud, spec: VoxelSpec = VoxelSpec()) -> SparseGrid:
    """Bucket points into stride-1 voxels.

    Each occupied voxel's feature is (point count, mean intensity, mean
    time_flag). Points outside the extents are dropped and counted in the
    returned grid's n_dropped. Boundary coordinates quantize with exact
    floor semantics despite float division.
    """
    pts = pc.points
    mins = np.array([spec.x_min, spec.y_min, spec.z_min])
    maxs = np.array([spec.x_max, spec.y_max, spec.z_max])
    deltas = np.array([spec.dx, spec.dy, spec.dz])
    inside = ((pts[:, :3] >= mins) & (pts[:, :3] < maxs)).all(axis=1)
    kept = pts[inside]
    n_dropped = int(len(pts) - len(kept))
    cells: dict[tuple[int, int, int], np.ndarray] = {}
    if len(kept):
        shape = np.array(spec.shape)
        idx = np.floor((kept[:, :3] - mins) / deltas + _SNAP).astype(np.int64)
        np.minimum(idx, shape - 1, out=idx)
        order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
        idx = idx[order]
        kept = kept[order]
        uniq, starts, counts = np.unique(
            idx, axis=0, return_index=True, return_counts=True
        )
        for coord, start, count in zip(uniq, starts, counts):
            block = kept[start : start + count]
            cells[tuple(int(c) for c in coord)] = np.array(
                [float(count), float(block[:, 3].mean()), float(block[:, 4].mean())]
            )
    return SparseGrid(spec=spec, stride=1, channels=3, cells=cells, n_dropped=n_dropped)


def downsample(grid: SparseGrid, mix: ChannelMap) -> SparseGrid:
    """Halve the spatial resolution (double the stride).

    Parent occupancy is the union of child occupancies; each parent feature
    is the channel map applied to the average of its occupied children.
    """
    if grid.stride > 4:
        raise ValueError(f"stride {grid.stride} cannot be downsampled further")
    if mix.n_in != grid.channels:
        raise ValueError(f"channel map expects {mix.n_in} channels, grid has {grid.channels}")
    groups: dict[tuple[int, int, int], list[np.ndarray]] = {}
    for (cx, cy, cz), feat in grid.cells.items():
        groups.setdefault((cx // 2, cy // 2, cz // 2), []).append(feat)
    cells = {
        coord: mix.apply(np.mean(feats, axis=0)) for coord, feats in groups.items()
    }
    return SparseGrid(
        spec=grid.spec,
        stride=grid.stride * 2,
        channels=mix.n_out,
        cells=cells,
        n_dropped=grid.n_dropped,
    )


def _resample_occupancy(occ: set[tuple[int, int, int]], factor: int) -> set[tuple[int, int, int]]:
    """Coarsen an occupancy set by an integer power-of-two factor."""
    return {(x // factor, y // factor, z // factor) for x, y, z in occ}


def _pooled_cells(grid: SparseGrid, factor: int) -> dict[tuple[int, int, int], np.ndarray]:
    """Mean-pool a grid's cells onto coordinates coarsened by `factor`."""
    groups: dict[tuple[int, int, int], list[np.ndarray]] = {}
    for (cx, cy, cz), feat in grid.cells.items():
        groups.setdefault((cx // factor, cy // factor, cz // factor), []).append(feat)
    return {coord: np.mean(feats, axis=0) for coord, feats in groups.items()}


def _resampler(grid: SparseGrid, stride: int):
    """Lookup returning `grid`'s feature at a coordinate expressed at `stride`.

    Finer grids are mean-pooled over the target block; coarser grids
    replicate their ancestor cell; missing cells contribute zeros.
    """
    zeros = np.zeros(grid.channels)
    if grid.stride == stride:
        cells = grid.cells
        return lambda coord: cells.get(coord, zeros)
    if grid.stride > stride:
        factor = grid.stride // stride
        cells = grid.cells
        return lambda coord: cells.get(
            (coord[0] // factor, coord[1] // factor, coord[2] // factor), zeros
        )
    pooled = _pooled_cells(grid, stride // grid.stride)
    return lambda coord: pooled.get(coord, zeros)


def fuse_hr(sf2: SparseGrid, sf4: SparseGrid) -> SparseGrid:
    """Fuse the second-stage and final-stage features at stride 4 (0.3 m BEV).

    The stride-2 input is pooled down one step and the stride-8 input is
    replicated up one step; features are concatenated channel-wise on the
    pooled stride-2 footprint.
    """
    if sf2.stride != 2 or sf4.stride != 8:
        raise ValueError(
            f"fuse_hr expects strides (2, 8), got ({sf2.stride}, {sf4.stride})"
        )
    if sf2.spec != sf4.spec:
        raise ValueError("inputs use different voxel specs")
    pooled = downsample(sf2, ChannelMap.identity(sf2.channels))
    cells = {}
    for coord, feat in pooled.cells.items():
        anc = (coord[0] // 2, coord[1] // 2, coord[2] // 2)
        upper = sf4.cells.get(anc)
        if upper is None:
            upper = np.zeros(sf4.channels)
        cells[coord] = np.concatenate([feat, upper])
    return SparseGrid(
        spec=sf2.spec,
        stride=4,
        channels=sf2.channels + sf4.channels,
        cells=cells,
        n_dropped=sf2.n_dropped,
    )


def fuse_ms(
    sf1: SparseGrid,
    sf2: SparseGrid,
    sf3: SparseGrid,
    sf4: SparseGrid,
    width: int = 64,
    seed: int = 0,
) -> SparseGrid:
    """Multi-scale fusion of all four encoder stages at stride 4.

    Every stage is projected to a common width, then two exchange rounds run:
    each round resamples every scale onto every other scale's native
    occupancy, sums the contributions, and applies a per-scale channel map.
    The exchanged features are finally resampled to stride 4, concatenated,
    and projected back to `width` channels.
    """
    grids = [sf1, sf2, sf3, sf4]
    strides = [g.stride for g in grids]
    if strides != [1, 2, 4, 8]:
        raise ValueError(f"fuse_ms expects strides [1, 2, 4, 8], got {strides}")
    if len({g.spec for g in grids}) != 1:
        raise ValueError("inputs use different voxel specs")

    projected = []
    for level, g in enumerate(grids):
        pmap = ChannelMap.seeded(g.channels, width, seed=seed * 101 + level)
        projected.append(
            SparseGrid(
                spec=g.spec,
                stride=g.stride,
                channels=width,
                cells={c: pmap.apply(f) for c, f in g.cells.items()},
            )
        )

    current = projected
    for rnd in range(2):
        exchanged = []
        for level, target in enumerate(current):
            emap = ChannelMap.seeded(width, width, seed=seed * 101 + 10 * (rnd + 1) + level)
            lookups = [_resampler(source, target.stride) for source in current]
            cells = {}
            for coord in target.cells:
                total = np.zeros(width)
                for lookup in lookups:
                    total = total + lookup(coord)
                cells[coord] = emap.apply(total)
            exchanged.append(
                SparseGrid(spec=target.spec, stride=target.stride, channels=width, cells=cells)
            )
        current = exchanged

    out_occ = (
        _resample_occupancy(current[0].occupancy, 4)
        | _resample_occupancy(current[1].occupancy, 2)
        | current[2].occupancy
    )
    out_map = ChannelMap.seeded(4 * width, width, seed=seed * 101 + 97)
    lookups = [_resampler(g, 4) for g in current]
    cells = {}
    for coord in sorted(out_occ):
        stacked = np.concatenate([lookup(coord) for lookup in lookups])
        cells[coord] = out_map.apply(stacked)
    return SparseGrid(
        spec=sf1.spec,
        stride=4,
        channels=width,
        cells=cells,
        n_dropped=sf1.n_dropped,
    )


def encoder_chain(
    base: SparseGrid,
    widths: tuple[int, int, int, int] = DEFAULT_WIDTHS,
    seed: int = 0,
) -> tuple[SparseGrid, SparseGrid, SparseGrid, SparseGrid]:
    """Build the four encoder stages SF1..SF4 from a stride-1 grid.

    SF1 keeps stride 1 at widths[0] channels; each later stage halves the
    resolution and changes width, ending at stride 8 (0.6 m BEV cells).
    """
    if base.stride != 1:
        raise ValueError("encoder chain starts from a stride-1 grid")
    stem = ChannelMap.seeded(base.channels, widths[0], seed=seed * 101 + 50)
    sf1 = SparseGrid(
        spec=base.spec,
        stride=1,
        channels=widths[0],
        cells={c: stem.apply(f) for c, f in base.cells.items()},
        n_dropped=base.n_dropped,
    )
    sf2 = downsample(sf1, ChannelMap.seeded(widths[0], widths[1], seed=seed * 101 + 51))
    sf3 = downsample(sf2, ChannelMap.seeded(widths[1], widths[2], seed=seed * 101 + 52))
    sf4 = downsample(sf3, ChannelMap.seeded(widths[2], widths[3], seed=seed * 101 + 53))
    return sf1, sf2, sf3, sf4


def topology_report(
    pc: PointCloud,
    spec: VoxelSpec = VoxelSpec(),
    topology: str = "a",
    widths: tuple[int, int, int, int] = DEFAULT_WIDTHS,
    width_ms: int = 64,
    seed: int = 0,
) -> list[dict]:
    """Stride/resolution/occupancy table for one encoder topology.

    Topology 'a' is the plain downsampling chain ending at 0.6 m, 'b' fuses
    the stride-2 and stride-8 stages to 0.3 m, and 'c' is the multi-scale
    variant, also at 0.3 m. Returns one row per stage plus the output row.
    """
    if topology not in ("a", "b", "c"):
        raise ValueError(f"topology must be 'a', 'b' or 'c', got {topology!r}")
    base = voxelize(pc, spec)
    sf1, sf2, sf3, sf4 = encoder_chain(base, widths, seed)
    rows = []
    for name, g in (("input", base), ("SF1", sf1), ("SF2", sf2), ("SF3", sf3), ("SF4", sf4)):
        rows.append(_row(name, g))
    if topology == "a":
        rows.append(_row("output", sf4))
    elif topology == "b":
        rows.append(_row("output", fuse_hr(sf2, sf4)))
    else:
        rows.append(_row("output", fuse_ms(sf1, sf2, sf3, sf4, width=width_ms, seed=seed)))
    rows[-1]["dropped_points"] = base.n_dropped
    return rows


def _row(name: str, g: SparseGrid) -> dict:
    nx, ny, nz = g.spec.strided_shape(g.stride)
    return {
        "name": name,
        "stride": g.stride,
        "bev_resolution_m": g.spec.dx * g.stride,
        "shape": (nx, ny, nz),
        "occupied": len(g),
        "channels": g.channels,
    }
