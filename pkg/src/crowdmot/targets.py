"""Ground-truth training targets for BEV pedestrian detection.

Builds center heatmaps, density-aware loss weights, inter-frame motion
offsets and nearest-neighbor relationship offsets from annotated objects,
and evaluates the density-weighted focal loss with its analytic gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np

from .geometry import Box3D, GridSpec, quantize_to_grid

# Predicted probabilities are clamped into [EPS, 1-EPS] before the loss.
PROB_EPS = 1e-7

DEFAULT_NEIGHBOR_RADIUS = 3.0


class GridMismatchError(ValueError):
    """Dense grids passed to one operation do not share a GridSpec."""


@dataclass(frozen=True, eq=False)
class DenseGrid2D:
    """A dense nx-by-ny array of values laid over a BEV grid.

    values[j, k] corresponds to cell (j, k) of the grid; j indexes x, k
    indexes y.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (self.grid.nx, self.grid.ny):
            raise GridMismatchError(
                f"values shape {arr.shape} does not match grid "
                f"({self.grid.nx}, {self.grid.ny})"
            )
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "DenseGrid2D":
        return cls(grid, np.zeros((grid.nx, grid.ny)))


@dataclass(frozen=True)
class GtObject:
    """One annotated object in one frame."""

    instance_id: Hashable
    box: Box3D
    frame: int = 0


@dataclass(frozen=True)
class MotionOffset:
    """Displacement from an object's current position to its previous one."""

    ox: float
    oy: float
    oz: float
    newborn: bool = False

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.ox, self.oy, self.oz)


@dataclass(frozen=True)
class RelationshipOffset:
    """BEV vector from an object to its nearest neighbor, if one is in range."""

    rx: float
    ry: float
    defined: bool

    @classmethod
    def undefined(cls) -> "RelationshipOffset":
        return cls(0.0, 0.0, False)


@dataclass(frozen=True)
class LossParams:
    """Focal-loss exponents and target-shaping parameters.

    alpha/gamma are the focal exponents; sigma is the Gaussian spread of the
    heatmap in cell units; th is the density-weight radius in meters;
    weight_floor is the minimum effective per-cell weight.
    """

    alpha: float = 2.0
    gamma: float = 4.0
    weight_floor: float = 1.0
    sigma: float = 1.0
    th: float = 2.0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.gamma < 0 or self.weight_floor < 0:
            raise ValueError("alpha, gamma and weight_floor must be non-negative")
        if self.sigma <= 0 or self.th <= 0:
            raise ValueError("sigma and th must be positive")


def _check_unique_ids(objects: Iterable[GtObject]) -> None:
    seen = set()
    for obj in objects:
        if obj.instance_id in seen:
            raise ValueError(f"duplicate instance_id {obj.instance_id!r} in frame")
        seen.add(obj.instance_id)


def make_heatmap(
    objects: list[GtObject],
    grid: GridSpec,
    sigma: float = 1.0,
    combine: str = "max",
) -> DenseGrid2D:
    """Render the ground-truth center heatmap for one frame.

    Each object contributes exp(-((j-j*)^2 + (k-k*)^2) / sigma^2) around its
    quantized cell (j*, k*), with sigma measured in cells. Contributions are
    combined per cell with `max` (default; centers are exactly 1 and values
    stay in [0, 1]) or `sum` (the literal additive form, which can exceed 1
    where objects are adjacent).
    """
    if combine not in ("max", "sum"):
        raise ValueError(f"combine must be 'max' or 'sum', got {combine!r}")
    heat = np.zeros((grid.nx, grid.ny))
    if not objects:
        return DenseGrid2D(grid, heat)
    jj = np.arange(grid.nx, dtype=np.float64)[:, None]
    kk = np.arange(grid.ny, dtype=np.float64)[None, :]
    inv_s2 = 1.0 / (sigma * sigma)
    for obj in objects:
        j_star, k_star = quantize_to_grid(obj.box.cx, obj.box.cy, grid)
        kernel = np.exp(-((jj - j_star) ** 2 + (kk - k_star) ** 2) * inv_s2)
        if combine == "max":
            np.maximum(heat, kernel, out=heat)
        else:
            heat += kernel
    return DenseGrid2D(grid, heat)


def make_daw(
    objects: list[GtObject],
    grid: GridSpec,
    th: float = 2.0,
    midpoint: bool = False,
) -> DenseGrid2D:
    """Density-aware spatial weights: per cell, the number of objects nearby.

    w[j, k] counts objects whose BEV distance from the cell point
    (x_min + j*dx, y_min + k*dy) is strictly below th meters. The cell point
    is the origin corner by default, the cell midpoint with midpoint=True.
    """
    weights = np.zeros((grid.nx, grid.ny))
    if not objects:
        return DenseGrid2D(grid, weights)
    shift = 0.5 if midpoint else 0.0
    gx = grid.x_min + (np.arange(grid.nx) + shift) * grid.dx
    gy = grid.y_min + (np.arange(grid.ny) + shift) * grid.dy
    th2 = th * th
    for obj in objects:
        # Validates the object is on the grid, like the heatmap path.
        quantize_to_grid(obj.box.cx, obj.box.cy, grid)
        d2 = (gx[:, None] - obj.box.cx) ** 2 + (gy[None, :] - obj.box.cy) ** 2
        weights += d2 < th2
    return DenseGrid2D(grid, weights)


def focal_daw_loss(
    pred: DenseGrid2D,
    gt: DenseGrid2D,
    weights: DenseGrid2D,
    params: LossParams = LossParams(),
) -> tuple[float, DenseGrid2D]:
    """Density-weighted focal loss and its per-cell gradient.

    At cells where the target heatmap is exactly 1 the penalty is
    -w * (1-p)^alpha * log(p); elsewhere it is
    -w * (1-c)^gamma * p^alpha * log(1-p), with w = max(weight, weight_floor).
    The total is normalized by the number of target-1 cells (floor 1).
    Predictions are clamped to [1e-7, 1 - 1e-7] first; the gradient is the
    exact derivative of the normalized total with respect to the clamped
    prediction. With all weights equal to 1 this is the plain focal loss.
    """
    if not (pred.grid == gt.grid == weights.grid):
        raise GridMismatchError("pred, gt and weights must share one GridSpec")
    p = np.clip(pred.values, PROB_EPS, 1.0 - PROB_EPS)
    c = gt.values
    w = np.maximum(weights.values, params.weight_floor)
    pos = c == 1.0

    log_p = np.log(p)
    log_1p = np.log1p(-p)
    one_m_p = 1.0 - p
    alpha, gamma = params.alpha, params.gamma

    pos_term = -w * one_m_p**alpha * log_p
    neg_term = -w * (1.0 - c) ** gamma * p**alpha * log_1p
    terms = np.where(pos, pos_term, neg_term)

    pos_grad = w * (alpha * one_m_p ** (alpha - 1.0) * log_p - one_m_p**alpha / p)
    neg_grad = -w * (1.0 - c) ** gamma * (
        alpha * p ** (alpha - 1.0) * log_1p - p**alpha / one_m_p
    )
    grad = np.where(pos, pos_grad, neg_grad)

    norm = max(1, int(np.count_nonzero(pos)))
    loss = float(np.sum(terms) / norm)
    return loss, DenseGrid2D(pred.grid, grad / norm)


def make_motion_offsets(
    curr: list[GtObject], prev: list[GtObject]
) -> dict[Hashable, MotionOffset]:
    """Per-object displacement from the current frame back to the previous one.

    Objects absent from the previous frame get a zero offset flagged newborn,
    so downstream arrays stay aligned with the current frame.
    """
    _check_unique_ids(curr)
    _check_unique_ids(prev)
    prev_pos = {o.instance_id: o.box for o in prev}
    offsets: dict[Hashable, MotionOffset] = {}
    for obj in curr:
        before = prev_pos.get(obj.instance_id)
        if before is None:
            offsets[obj.instance_id] = MotionOffset(0.0, 0.0, 0.0, newborn=True)
        else:
            offsets[obj.instance_id] = MotionOffset(
                before.cx - obj.box.cx,
                before.cy - obj.box.cy,
                before.cz - obj.box.cz,
            )
    return offsets


def make_relationship_offsets(
    objects: list[GtObject], radius: float = DEFAULT_NEIGHBOR_RADIUS
) -> dict[Hashable, RelationshipOffset]:
    """BEV vector from each object to its nearest neighbor within `radius`.

    The neighbor minimizes squared BEV distance; exact ties go to the
    smallest instance_id. Objects with no neighbor in range get an undefined
    offset (masked, not regressed to zero).
    """
    _check_unique_ids(objects)
    n = len(objects)
    result: dict[Hashable, RelationshipOffset] = {}
    if n == 0:
        return result
    if n == 1:
        return {objects[0].instance_id: RelationshipOffset.undefined()}

    order = sorted(range(n), key=lambda i: objects[i].instance_id)
    xs = np.array([objects[i].box.cx for i in order])
    ys = np.array([objects[i].box.cy for i in order])
    d2 = (xs[:, None] - xs[None, :]) ** 2 + (ys[:, None] - ys[None, :]) ** 2
    np.fill_diagonal(d2, np.inf)
    # Rows/cols are in ascending-id order, so argmin's first-hit rule breaks
    # distance ties toward the smaller instance_id.
    nearest = np.argmin(d2, axis=1)
    best_d2 = d2[np.arange(n), nearest]
    for row, idx in enumerate(order):
        obj = objects[idx]
        if best_d2[row] <= radius * radius:
            other = objects[order[nearest[row]]]
            result[obj.instance_id] = RelationshipOffset(
                other.box.cx - obj.box.cx, other.box.cy - obj.box.cy, True
            )
        else:
            result[obj.instance_id] = RelationshipOffset.undefined()
    return result
