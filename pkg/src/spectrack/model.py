"""The assembled tracker: backbone plus head, with checkpoint plumbing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import BackboneParams, TrackConfig, forward_backbone, init_backbone_params
from .errors import ContractError, DimensionError
from .events import CropGeometry, Patch
from .head import HeadParams, LossWeights, TrackOutputs, head_forward, init_head_params, total_loss
from .nn import named_parameters


@dataclass
class ModelParams:
    backbone: BackboneParams
    head: HeadParams


class TrackerModel:
    """Stateless per-call tracker; all state lives in `params`.

    identity_init builds the diagnostic configuration whose backbone is a
    pass-through (used by the invariance tests), not something to train.
    """

    def __init__(self, config: TrackConfig | None = None, seed: int = 0, identity_init: bool = False):
        self.config = config if config is not None else TrackConfig()
        rng = np.random.default_rng(seed)
        self.params = ModelParams(
            backbone=init_backbone_params(self.config, rng, identity=identity_init),
            head=init_head_params(self.config.d_model, rng),
        )

    # -- parameter access ----------------------------------------------------

    def named_parameters(self):
        yield from named_parameters(self.params)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters() if t.requires_grad]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise ContractError(
                f"checkpoint does not match the model: missing {missing[:3]}..., extra {extra[:3]}..."
                if len(missing) > 3 or len(extra) > 3
                else f"checkpoint does not match the model: missing {missing}, extra {extra}"
            )
        for name, tensor in own.items():
            arr = arrays[name]
            if arr.shape != tensor.data.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != model shape {tensor.data.shape}")
            tensor.data = arr.astype(np.float64).copy()

    # -- forward paths ---------------------------------------------------------

    def outputs(
        self,
        template_rgb: Patch,
        template_ev: Patch,
        search_rgb: Patch,
        search_ev: Patch,
    ) -> tuple[TrackOutputs, Tensor]:
        """Full forward pass; returns head outputs and the token sequence."""
        tokens, feature = forward_backbone(
            template_rgb, template_ev, search_rgb, search_ev, self.params.backbone, self.config
        )
        return head_forward(feature, self.params.head, self.config.search_side), tokens

    def track_step(
        self,
        template_rgb: Patch,
        template_ev: Patch,
        search_rgb: Patch,
        search_ev: Patch,
        geometry: CropGeometry | None = None,
        frame_id: int | None = None,
    ) -> tuple[tuple[float, float, float, float], float]:
        """One tracking step; returns (box in search-patch pixels, score).

        geometry and frame_id are part of the step protocol so alternative
        trackers (e.g. test oracles) can use them; this model ignores both.
        """
        del geometry, frame_id
        out, _ = self.outputs(template_rgb, template_ev, search_rgb, search_ev)
        return out.box, out.peak_score

    def loss(
        self,
        template_rgb: Patch,
        template_ev: Patch,
        search_rgb: Patch,
        search_ev: Patch,
        gt_box_search: tuple[float, float, float, float],
        weights: LossWeights | None = None,
    ) -> tuple[Tensor, dict[str, float]]:
        out, _ = self.outputs(template_rgb, template_ev, search_rgb, search_ev)
        return total_loss(out, gt_box_search, weights)

    # -- optimisation ----------------------------------------------------------

    def zero_grads(self) -> None:
        ad.zero_grads(self.parameters())

    def sgd_step(self, lr: float) -> None:
        for p in self.parameters():
            if p.grad is not None:
                p.data = p.data - lr * p.grad
