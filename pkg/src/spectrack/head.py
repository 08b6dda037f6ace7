"""Center-based prediction head and its training losses.

Three small conv branches read the search feature grid: a score map (one
channel), a size map and an offset map (two channels each), all squashed
by a sigmoid so sizes are fractions of the search side and offsets stay in
[0, 1). Decoding picks the peak score cell; training combines a
penalty-reduced focal loss on the score map with an L1 term and a
generalised-IoU term at the ground-truth cell, weighted 1 / 14 / 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, ValidationError
from .nn import param, trunc_normal

Array = np.ndarray

FOCAL_ALPHA = 2.0   # exponent on the prediction error at positives
FOCAL_BETA = 4.0    # exponent on the heatmap penalty at negatives
_PROB_EPS = 1e-12   # keeps log() finite for saturated sigmoids


@dataclass
class LossWeights:
    focal: float = 1.0
    l1: float = 14.0
    giou: float = 1.0


@dataclass
class ConvBranch:
    """3x3 conv -> GELU -> 1x1 conv -> sigmoid."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @staticmethod
    def init(rng: np.random.Generator, d: int, out_channels: int) -> "ConvBranch":
        return ConvBranch(
            w1=param(trunc_normal(rng, (3, 3, d, d))),
            b1=param(np.zeros(d)),
            w2=param(trunc_normal(rng, (1, 1, d, out_channels))),
            b2=param(np.zeros(out_channels)),
        )

    def __call__(self, feature: Tensor) -> Tensor:
        hidden = ad.gelu(ad.conv2d(feature, self.w1, self.b1))
        return ad.sigmoid(ad.conv2d(hidden, self.w2, self.b2))


@dataclass
class HeadParams:
    score: ConvBranch
    size: ConvBranch
    offset: ConvBranch


def init_head_params(d: int, rng: np.random.Generator) -> HeadParams:
    return HeadParams(
        score=ConvBranch.init(rng, d, 1),
        size=ConvBranch.init(rng, d, 2),
        offset=ConvBranch.init(rng, d, 2),
    )


@dataclass
class TrackOutputs:
    """Raw head maps plus the decoded box.

    score is [g, g]; size and offset are [2, g, g] (w/h and dx/dy planes).
    box is (cx, cy, w, h) in search-patch pixels.
    """

    score: Tensor
    size: Tensor
    offset: Tensor
    box: tuple[float, float, float, float]
    peak_score: float
    peak_cell: tuple[int, int]
    search_side: int


def decode_box(
    score: Array, size: Array, offset: Array, search_side: int
) -> tuple[tuple[float, float, float, float], float, tuple[int, int]]:
    """Peak cell + offset -> centre; size plane -> box sides, clamped inside."""
    g = score.shape[0]
    flat = int(np.argmax(score))
    i, j = divmod(flat, g)
    cell = float(search_side) / g
    cx = (j + offset[0, i, j]) * cell
    cy = (i + offset[1, i, j]) * cell
    w = size[0, i, j] * search_side
    h = size[1, i, j] * search_side
    x1 = min(max(cx - w / 2.0, 0.0), float(search_side))
    x2 = min(max(cx + w / 2.0, 0.0), float(search_side))
    y1 = min(max(cy - h / 2.0, 0.0), float(search_side))
    y2 = min(max(cy + h / 2.0, 0.0), float(search_side))
    w = max(x2 - x1, 1e-6)
    h = max(y2 - y1, 1e-6)
    return ((x1 + x2) / 2.0, (y1 + y2) / 2.0, w, h), float(score[i, j]), (i, j)


def head_forward(feature: Tensor, params: HeadParams, search_side: int) -> TrackOutputs:
    """Run the three branches on a [g, g, D] feature grid."""
    if feature.ndim != 3 or feature.shape[0] != feature.shape[1]:
        raise DimensionError(f"head expects a square [g, g, D] feature grid, got {feature.shape}")
    g = feature.shape[0]
    score = ad.reshape(params.score(feature), (g, g))
    size = ad.permute(params.size(feature), (2, 0, 1))
    offset = ad.permute(params.offset(feature), (2, 0, 1))
    box, peak, cell = decode_box(score.data, size.data, offset.data, search_side)
    return TrackOutputs(
        score=score,
        size=size,
        offset=offset,
        box=box,
        peak_score=peak,
        peak_cell=cell,
        search_side=search_side,
    )


# ---------------------------------------------------------------------------
# targets


def gaussian_heatmap(grid: int, center: tuple[int, int], radius: float) -> Array:
    """Unit-peak Gaussian splat around a cell; exactly 1.0 at the centre."""
    if not (0 <= center[0] < grid and 0 <= center[1] < grid):
        raise ValidationError(f"centre cell {center} outside a {grid}x{grid} grid")
    if radius <= 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    sigma = radius / 3.0
    ii, jj = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    d2 = (ii - center[0]) ** 2 + (jj - center[1]) ** 2
    heat = np.exp(-d2 / (2.0 * sigma * sigma))
    heat[center] = 1.0
    return heat


@dataclass
class CellTargets:
    """Ground truth quantities resolved onto the head grid."""

    cell: tuple[int, int]              # (row, col) of the positive cell
    heatmap: Array                     # [g, g], 1.0 only at `cell`
    size_frac: tuple[float, float]     # (w, h) / search_side
    offset_frac: tuple[float, float]   # sub-cell (dx, dy) in [0, 1)


def build_targets(gt_box: tuple[float, float, float, float], grid: int, search_side: int) -> CellTargets:
    cx, cy, w, h = gt_box
    if w <= 0 or h <= 0:
        raise ValidationError(f"ground-truth sides must be positive, got w={w}, h={h}")
    cell = float(search_side) / grid
    j = min(max(int(math.floor(cx / cell)), 0), grid - 1)
    i = min(max(int(math.floor(cy / cell)), 0), grid - 1)
    dx = min(max(cx / cell - j, 0.0), 1.0 - 1e-9)
    dy = min(max(cy / cell - i, 0.0), 1.0 - 1e-9)
    radius = max(1.0, min(w / cell, h / cell) / 3.0)
    return CellTargets(
        cell=(i, j),
        heatmap=gaussian_heatmap(grid, (i, j), radius),
        size_frac=(w / search_side, h / search_side),
        offset_frac=(dx, dy),
    )


# ---------------------------------------------------------------------------
# losses


def focal_loss(score: Tensor, center: tuple[int, int], radius: float = 1.0) -> Tensor:
    """Penalty-reduced focal loss with a single positive cell.

    Negatives near the centre are discounted by (1 - heat)^4; the result is
    normalised by the positive count (always 1 here).
    """
    g = score.shape[0]
    if score.ndim != 2 or score.shape[1] != g:
        raise DimensionError(f"focal loss expects a square score map, got {score.shape}")
    heat = gaussian_heatmap(g, center, radius)
    pos_mask = (heat >= 1.0).astype(np.float64)
    neg_weight = (1.0 - heat) ** FOCAL_BETA * (1.0 - pos_mask)

    # Clamp probabilities away from {0, 1} before the logs.
    eps = ad.constant(np.full((g, g), _PROB_EPS))
    one = ad.constant(np.ones((g, g)))
    p = ad.minimum(ad.maximum(score, eps), ad.sub(one, eps))

    miss = ad.sub(one, p)
    pos_term = ad.mul(ad.mul(miss, miss), ad.log(p))
    neg_term = ad.mul(ad.mul(p, p), ad.log(miss))
    weighted = ad.add(
        ad.mul(pos_term, ad.constant(pos_mask)),
        ad.mul(neg_term, ad.constant(neg_weight)),
    )
    return ad.scale(ad.sum_all(weighted), -1.0)


def _corners(box: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    cx = ad.narrow(box, 0, 0, 1)
    cy = ad.narrow(box, 0, 1, 1)
    w = ad.narrow(box, 0, 2, 1)
    h = ad.narrow(box, 0, 3, 1)
    half = ad.constant(np.array([0.5]))
    hw = ad.mul(w, half)
    hh = ad.mul(h, half)
    return ad.sub(cx, hw), ad.sub(cy, hh), ad.add(cx, hw), ad.add(cy, hh)


def giou_loss(pred: Tensor, gt: Tensor | Array) -> Tensor:
    """1 - GIoU of two (cx, cy, w, h) boxes; differentiable through pred."""
    if pred.shape != (4,):
        raise DimensionError(f"pred box must be a flat 4-vector, got {pred.shape}")
    gt_t = gt if isinstance(gt, Tensor) else ad.constant(np.asarray(gt, dtype=np.float64))
    if gt_t.shape != (4,):
        raise DimensionError(f"gt box must be a flat 4-vector, got {gt_t.shape}")
    if pred.data[2] <= 0 or pred.data[3] <= 0 or gt_t.data[2] <= 0 or gt_t.data[3] <= 0:
        raise ValidationError("boxes passed to giou_loss must have positive sides")

    ax1, ay1, ax2, ay2 = _corners(pred)
    bx1, by1, bx2, by2 = _corners(gt_t)

    inter_w = ad.relu(ad.sub(ad.minimum(ax2, bx2), ad.maximum(ax1, bx1)))
    inter_h = ad.relu(ad.sub(ad.minimum(ay2, by2), ad.maximum(ay1, by1)))
    inter = ad.mul(inter_w, inter_h)

    area_a = ad.mul(ad.sub(ax2, ax1), ad.sub(ay2, ay1))
    area_b = ad.mul(ad.sub(bx2, bx1), ad.sub(by2, by1))
    union = ad.sub(ad.add(area_a, area_b), inter)
    iou = ad.div(inter, union)

    hull_w = ad.sub(ad.maximum(ax2, bx2), ad.minimum(ax1, bx1))
    hull_h = ad.sub(ad.maximum(ay2, by2), ad.minimum(ay1, by1))
    hull = ad.mul(hull_w, hull_h)
    giou = ad.sub(iou, ad.div(ad.sub(hull, union), hull))

    one = ad.constant(np.array([1.0]))
    return ad.reshape(ad.sub(one, giou), ())


def combine_losses(focal: Tensor, l1: Tensor, giou: Tensor, weights: LossWeights | None = None) -> Tensor:
    w = weights if weights is not None else LossWeights()
    return ad.add(
        ad.add(ad.scale(focal, w.focal), ad.scale(l1, w.l1)),
        ad.scale(giou, w.giou),
    )


def total_loss(
    outputs: TrackOutputs,
    gt_box: tuple[float, float, float, float],
    weights: LossWeights | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Focal + L1 + GIoU at the ground-truth cell, with the standard weights.

    gt_box is (cx, cy, w, h) in search-patch pixels. The L1 term averages
    the four absolute errors of (w, h, dx, dy) in normalised units; the
    GIoU term decodes a box from the maps at the ground-truth cell.
    """
    g = outputs.score.shape[0]
    side = outputs.search_side
    targets = build_targets(gt_box, g, side)
    i, j = targets.cell

    cell_radius = max(1.0, min(gt_box[2], gt_box[3]) * g / side / 3.0)
    focal = focal_loss(outputs.score, targets.cell, cell_radius)

    def at_cell(plane: Tensor) -> Tensor:
        column = ad.narrow(ad.narrow(plane, 1, i, 1), 2, j, 1)  # [2, 1, 1]
        return ad.reshape(column, (2,))

    pred_size = at_cell(outputs.size)
    pred_offset = at_cell(outputs.offset)
    pred4 = ad.concat([pred_size, pred_offset], axis=0)
    target4 = ad.constant(
        np.array([*targets.size_frac, *targets.offset_frac], dtype=np.float64)
    )
    l1 = ad.scale(ad.sum_all(ad.abs_(ad.sub(pred4, target4))), 0.25)

    cell = float(side) / g
    scale_vec = ad.constant(np.array([cell, cell, float(side), float(side)]))
    shift_vec = ad.constant(np.array([j * cell, i * cell, 0.0, 0.0]))
    pred_box = ad.add(
        ad.mul(ad.concat([pred_offset, pred_size], axis=0), scale_vec),
        shift_vec,
    )
    giou = giou_loss(pred_box, np.asarray(gt_box, dtype=np.float64))

    total = combine_losses(focal, l1, giou, weights)
    parts = {
        "focal": float(focal.data),
        "l1": float(l1.data),
        "giou": float(giou.data),
        "total": float(total.data),
    }
    return total, parts
