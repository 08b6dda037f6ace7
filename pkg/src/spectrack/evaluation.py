"""Tracking metrics, the sequence-level loop, and training/diagnostic runs.

Success rate sweeps IoU thresholds 0..1 in steps of 0.01 (the area under
that curve is the mean over its 101 points); precision sweeps centre
distances 0..50 px in 1 px steps with 20 px as the headline radius.
Comparisons are inclusive (iou >= t, dist <= r) and the curves are built
with plain Python loops so an independent brute-force implementation can
match them bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tensor, grad_check
from .backbone import TrackConfig, set_layer, std_layer
from .errors import ContractError, ValidationError
from .events import CropGeometry, Patch, crop_with_geometry, event_voxel
from .head import LossWeights, head_forward, init_head_params, total_loss
from .model import TrackerModel
from .nn import parameter_sites
from .sequences import TrackSequence
from .spectral import dff_forward, make_filter_bank
from .wavelet import dwf, dwt, idwt, make_dwf_params, make_wer_params, wer_forward

Array = np.ndarray

IOU_THRESHOLDS: list[float] = [i / 100 for i in range(101)]
DIST_THRESHOLDS: list[float] = [float(i) for i in range(51)]

Box = tuple[float, float, float, float]


def iou(box_a: Box, box_b: Box) -> float:
    """Intersection over union of two (cx, cy, w, h) boxes."""
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValidationError(f"iou needs positive box sides, got {box_a} and {box_b}")
    ix = min(ax + aw / 2, bx + bw / 2) - max(ax - aw / 2, bx - bw / 2)
    iy = min(ay + ah / 2, by + bh / 2) - max(ay - ah / 2, by - bh / 2)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union


def center_distance(box_a: Box, box_b: Box) -> float:
    dx = box_a[0] - box_b[0]
    dy = box_a[1] - box_b[1]
    return math.sqrt(dx * dx + dy * dy)


def success_rate(ious: list[float], threshold: float) -> float:
    if not ious:
        raise ContractError("success rate of an empty list is undefined")
    return sum(1 for v in ious if v >= threshold) / len(ious)


def precision_rate(distances: list[float], radius: float = 20.0) -> float:
    if not distances:
        raise ContractError("precision of an empty list is undefined")
    return sum(1 for v in distances if v <= radius) / len(distances)


def sr_curve(ious: list[float]) -> list[float]:
    return [success_rate(ious, t) for t in IOU_THRESHOLDS]


def pr_curve(distances: list[float]) -> list[float]:
    return [precision_rate(distances, r) for r in DIST_THRESHOLDS]


def auc(ious: list[float]) -> float:
    curve = sr_curve(ious)
    return sum(curve) / len(curve)


@dataclass
class SequenceResult:
    ious: list[float]
    distances: list[float]
    sr: list[float]
    pr: list[float]

    def __post_init__(self) -> None:
        if any(b > a for a, b in zip(self.sr, self.sr[1:])):
            raise ContractError("success curve must be non-increasing in the threshold")
        if any(b < a for a, b in zip(self.pr, self.pr[1:])):
            raise ContractError("precision curve must be non-decreasing in the radius")

    @property
    def sr_auc(self) -> float:
        return sum(self.sr) / len(self.sr)

    @property
    def sr_at_05(self) -> float:
        return self.sr[50]

    @property
    def pr_at_20(self) -> float:
        return self.pr[20]


def compute_metrics(pred_boxes: list[Box], gt_boxes: list[Box | None]) -> SequenceResult:
    """Pair predictions with labelled frames; unlabeled frames are skipped."""
    if len(pred_boxes) != len(gt_boxes):
        raise ContractError(f"{len(pred_boxes)} predictions vs {len(gt_boxes)} ground-truth rows")
    ious: list[float] = []
    dists: list[float] = []
    for pred, gt in zip(pred_boxes, gt_boxes):
        if gt is None:
            continue
        ious.append(iou(pred, gt))
        dists.append(center_distance(pred, gt))
    if not ious:
        raise ContractError("no labelled frames to evaluate")
    return SequenceResult(ious=ious, distances=dists, sr=sr_curve(ious), pr=pr_curve(dists))


# ---------------------------------------------------------------------------
# sequence-level tracking


@dataclass
class PredictionRow:
    frame_id: int
    box: Box
    score: float


def template_patches(seq: TrackSequence, config: TrackConfig) -> tuple[Patch, Patch]:
    """Crop the fixed template pair (RGB + event voxel) from frame 0."""
    first = seq.frames[0]
    if first.bbox is None:
        raise ContractError("the first frame needs a ground-truth box to cut the template")
    geom = CropGeometry.around_box(first.bbox, config.template_context, config.template_side)
    rgb = crop_with_geometry(seq.images[0], geom, "template", "rgb")
    voxel = event_voxel(seq.events, first, bins=config.event_bins)
    ev = crop_with_geometry(voxel, geom.scaled(config.ev_template_side), "template", "event")
    return rgb, ev


def search_patches(
    seq: TrackSequence, frame_index: int, around: Box, config: TrackConfig
) -> tuple[Patch, Patch, CropGeometry]:
    geom = CropGeometry.around_box(around, config.search_context, config.search_side)
    rgb = crop_with_geometry(seq.images[frame_index], geom, "search", "rgb")
    voxel = event_voxel(seq.events, seq.frames[frame_index], bins=config.event_bins)
    ev = crop_with_geometry(voxel, geom.scaled(config.ev_search_side), "search", "event")
    return rgb, ev, geom


def track_sequence(
    model, seq: TrackSequence, config: TrackConfig | None = None
) -> tuple[SequenceResult, list[PredictionRow]]:
    """Run a tracker over a sequence: template from frame 0, then frame by
    frame with the search window centred on the previous prediction.

    `model` needs a track_step(...) with the TrackerModel signature; the
    crop geometry and frame id are forwarded so diagnostic trackers can use
    them. Returns metrics over every labelled frame (frame 0 scores the
    initialisation box) plus one prediction row per frame in image pixels.
    """
    config = config if config is not None else model.config
    first = seq.frames[0]
    if first.bbox is None:
        raise ContractError("tracking needs ground truth on the first frame")
    t_rgb, t_ev = template_patches(seq, config)

    rows = [PredictionRow(frame_id=first.frame_id, box=first.bbox, score=1.0)]
    prev_box = first.bbox
    for idx in range(1, len(seq)):
        s_rgb, s_ev, geom = search_patches(seq, idx, prev_box, config)
        box_patch, score = model.track_step(
            t_rgb, t_ev, s_rgb, s_ev, geometry=geom, frame_id=seq.frames[idx].frame_id
        )
        box_img = geom.box_to_image(box_patch)
        rows.append(PredictionRow(frame_id=seq.frames[idx].frame_id, box=box_img, score=score))
        prev_box = box_img

    result = compute_metrics([r.box for r in rows], [f.bbox for f in seq.frames])
    return result, rows


# ---------------------------------------------------------------------------
# toy training


def train_toy(
    model: TrackerModel,
    seq: TrackSequence,
    steps: int,
    lr: float = 0.01,
    seed: int = 0,
    optimizer: str = "sgd",
    jitter: float = 4.0,
) -> list[dict[str, float]]:
    """Overfit the tracker to one synthetic sequence with full-batch steps.

    Each step samples a labelled frame, crops a search window around the
    ground truth jittered by up to `jitter` px, and descends the combined
    loss. Plain gradient descent by default; optimizer="adamw" switches to
    AdamW (lr is reused, betas 0.9/0.999, weight decay 0.01). Returns one
    history row per step; a non-finite loss aborts naming the step.
    """
    if optimizer not in ("sgd", "adamw"):
        raise ContractError(f"unknown optimizer {optimizer!r}")
    if steps < 1:
        raise ContractError("need at least one training step")
    labelled = [i for i in range(1, len(seq)) if seq.frames[i].bbox is not None]
    if not labelled or seq.frames[0].bbox is None:
        raise ContractError("toy training needs ground truth on frame 0 and at least one later frame")

    rng = np.random.default_rng(seed)
    config = model.config
    t_rgb, t_ev = template_patches(seq, config)
    params = model.parameters()

    adam_m = [np.zeros_like(p.data) for p in params]
    adam_v = [np.zeros_like(p.data) for p in params]
    history: list[dict[str, float]] = []
    for step in range(steps):
        frame_index = int(labelled[rng.integers(0, len(labelled))])
        gt = seq.frames[frame_index].bbox
        off = rng.uniform(-jitter, jitter, size=2)
        around = (gt[0] + float(off[0]), gt[1] + float(off[1]), gt[2], gt[3])
        s_rgb, s_ev, geom = search_patches(seq, frame_index, around, config)
        gt_patch = geom.box_to_patch(gt)

        try:
            loss, parts = model.loss(t_rgb, t_ev, s_rgb, s_ev, gt_patch)
        except ValidationError as exc:
            raise ContractError(f"loss became degenerate at step {step}: {exc}") from exc
        if not math.isfinite(parts["total"]):
            raise ContractError(f"loss became non-finite at step {step}: {parts}")
        model.zero_grads()
        ad.backward(loss)
        if optimizer == "sgd":
            model.sgd_step(lr)
        else:
            b1, b2, eps, wd = 0.9, 0.999, 1e-8, 0.01
            t = step + 1
            for k, p in enumerate(params):
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                adam_m[k] = b1 * adam_m[k] + (1 - b1) * g
                adam_v[k] = b2 * adam_v[k] + (1 - b2) * g * g
                m_hat = adam_m[k] / (1 - b1 ** t)
                v_hat = adam_v[k] / (1 - b2 ** t)
                p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * p.data)
        history.append({"step": float(step), **parts})
    return history


# ---------------------------------------------------------------------------
# gradient-check suite


def tiny_track_config() -> TrackConfig:
    """The diagnostic geometry: D=8, 4 template and 16 search tokens."""
    return TrackConfig(
        d_model=8,
        heads=2,
        mlp_ratio=2,
        template_side=32,
        search_side=64,
        event_bins=2,
        spectral_filters=2,
        spectral_router_hidden=8,
        wavelet_filters=2,
        wavelet_router_hidden=8,
    )


def _weighted_sum(out: Tensor, rng: np.random.Generator) -> Tensor:
    w = ad.constant(rng.normal(size=out.shape))
    return ad.sum_all(ad.mul(out, w))


def _check_sites(name: str, forward, x: Tensor, sites, h: float, tol: float) -> list[tuple[str, GradCheckReport]]:
    """Check the explicit input plus every parameter site of a unit."""
    results = [(f"{name}.input", grad_check(lambda v: forward(v), x, h=h, tol=tol))]
    for site_name, tensor, setter in sites:
        def f(v: Tensor, _setter=setter, _orig=tensor) -> Tensor:
            _setter(v)
            try:
                return forward(x)
            finally:
                _setter(_orig)
        results.append((f"{name}.{site_name}", grad_check(f, tensor, h=h, tol=tol)))
    return results


def gradient_checks(module: str = "all", tol: float = 1e-4, h: float = 1e-6) -> list[tuple[str, GradCheckReport]]:
    """Finite-difference validation of every differentiable unit.

    module selects one of dff|dwf|wer|set|std|head|loss, or "all".
    """
    known = ("all", "dff", "dwf", "wer", "set", "std", "head", "loss")
    if module not in known:
        raise ContractError(f"unknown module {module!r}; pick one of {known}")
    config = tiny_track_config()
    rng = np.random.default_rng(7)
    d = config.d_model
    n = config.seq_len
    n_ev = config.n_event_tokens
    results: list[tuple[str, GradCheckReport]] = []

    if module in ("all", "dff"):
        bank = make_filter_bank(d, config.heads, n, config.spectral_filters,
                                config.spectral_router_hidden, rng)
        x = Tensor(rng.normal(size=(n, d)))
        wsum = rng.normal(size=(n, d))
        forward = lambda v: ad.sum_all(ad.mul(dff_forward(v, bank), ad.constant(wsum)))
        results += _check_sites("dff", forward, x, parameter_sites(bank), h, tol)

    if module in ("all", "dwf"):
        params = make_dwf_params(d, config.coeff_max, config.wavelet_filters,
                                 config.wavelet_router_hidden, rng)
        kernel_x = Tensor(rng.normal(size=(n_ev, d)))
        wa = rng.normal(size=((n_ev + 1) // 2, d))
        wb = rng.normal(size=((n_ev + 1) // 2, d))
        from .wavelet import haar_kernel
        kern = haar_kernel(requires_grad=False)

        def dwf_forward(v: Tensor) -> Tensor:
            state = dwf(dwt(v, kern), params)
            return ad.add(
                ad.sum_all(ad.mul(state.ca, ad.constant(wa))),
                ad.sum_all(ad.mul(state.cd, ad.constant(wb))),
            )

        results += _check_sites("dwf", dwf_forward, kernel_x, parameter_sites(params), h, tol)

    if module in ("all", "wer"):
        params = make_wer_params(d, config.coeff_max, config.wavelet_filters,
                                 config.wavelet_router_hidden, rng, use_post=True)
        x = Tensor(rng.normal(size=(n_ev, d)))
        wsum = rng.normal(size=(n_ev, d))
        forward = lambda v: ad.sum_all(ad.mul(wer_forward(v, params), ad.constant(wsum)))
        results += _check_sites("wer", forward, x, parameter_sites(params), h, tol)

    if module in ("all", "set", "std"):
        from .backbone import init_backbone_params
        bb = init_backbone_params(config, rng)
        x = Tensor(rng.normal(size=(n, d)))
        wsum = rng.normal(size=(n, d))
        if module in ("all", "set"):
            layer = bb.layers[0]
            forward = lambda v: ad.sum_all(ad.mul(set_layer(v, layer), ad.constant(wsum)))
            results += _check_sites("set", forward, x, parameter_sites(layer), h, tol)
        if module in ("all", "std"):
            layer = bb.layers[config.set_layers]
            forward = lambda v: ad.sum_all(ad.mul(std_layer(v, layer), ad.constant(wsum)))
            results += _check_sites("std", forward, x, parameter_sites(layer), h, tol)

    if module in ("all", "head", "loss"):
        head = init_head_params(d, rng)
        g = config.search_grid
        feat = Tensor(rng.normal(size=(g, g, d)))
        if module in ("all", "head"):
            ws = rng.normal(size=(g, g))
            wz = rng.normal(size=(2, g, g))
            wo = rng.normal(size=(2, g, g))

            def head_scalar(v: Tensor) -> Tensor:
                out = head_forward(v, head, config.search_side)
                return ad.add(
                    ad.sum_all(ad.mul(out.score, ad.constant(ws))),
                    ad.add(
                        ad.sum_all(ad.mul(out.size, ad.constant(wz))),
                        ad.sum_all(ad.mul(out.offset, ad.constant(wo))),
                    ),
                )

            results += _check_sites("head", head_scalar, feat, parameter_sites(head), h, tol)
        if module in ("all", "loss"):
            gt_box = (30.0, 27.0, 20.0, 16.0)

            def loss_scalar(v: Tensor) -> Tensor:
                out = head_forward(v, head, config.search_side)
                loss, _ = total_loss(out, gt_box, LossWeights())
                return loss

            results += _check_sites("loss", loss_scalar, feat, parameter_sites(head), h, tol)

    return results


# ---------------------------------------------------------------------------
# report and CSV plumbing


def report_payload(result: SequenceResult) -> dict:
    return {
        "sr_auc": result.sr_auc,
        "sr@0.5": result.sr_at_05,
        "pr@20": result.pr_at_20,
        "curves": {
            "iou_thresholds": IOU_THRESHOLDS,
            "sr": result.sr,
            "dist_thresholds": DIST_THRESHOLDS,
            "pr": result.pr,
        },
    }


def write_report(result: SequenceResult, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report_payload(result), indent=1))
    return path


def write_curves_csv(report: dict, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["curve", "threshold", "value"])
        curves = report["curves"]
        for t, v in zip(curves["iou_thresholds"], curves["sr"]):
            writer.writerow(["sr", t, v])
        for t, v in zip(curves["dist_thresholds"], curves["pr"]):
            writer.writerow(["pr", t, v])
    return path


def write_predictions(rows: list[PredictionRow], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_id", "cx", "cy", "w", "h", "score"])
        for row in rows:
            writer.writerow([row.frame_id, *row.box, row.score])
    return path


def read_predictions(path: str | Path) -> list[PredictionRow]:
    rows: list[PredictionRow] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                PredictionRow(
                    frame_id=int(rec["frame_id"]),
                    box=(float(rec["cx"]), float(rec["cy"]), float(rec["w"]), float(rec["h"])),
                    score=float(rec["score"]),
                )
            )
    return rows


def write_history_csv(history: list[dict[str, float]], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total", "focal", "l1", "giou"])
        for row in history:
            writer.writerow([int(row["step"]), row["total"], row["focal"], row["l1"], row["giou"]])
    return path
