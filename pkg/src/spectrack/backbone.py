"""Dual-modality token backbone.

Four token sets are projected independently (template/search x RGB/event),
position embeddings are shared across modalities within each branch, the
event tokens pass through a wavelet edge-refinement unit, and the joint
sequence [rgb_t; ev_t; rgb_s; ev_s] runs through a stack where the first
`set_layers` blocks prepend dynamic frequency filtering to attention
(frequency first, then spatial attention, then the MLP; each sub-block is
a pre-norm residual) and the remaining blocks are standard pre-norm
attention + MLP. Event patches are cut at a quarter of the RGB patch side
from quarter-resolution crops so token counts line up per branch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError
from .events import Patch
from .nn import AffineParams, AttentionParams, LayerNormParams, MlpParams, param, trunc_normal
from .spectral import SpectralFilterBank, dff_forward, make_filter_bank
from .wavelet import WerParams, make_wer_params, wer_forward

WER_MODES = ("input_only", "per_layer")


@dataclass
class TrackConfig:
    """Geometry and width settings for the full tracker."""

    d_model: int = 32
    depth: int = 12
    set_layers: int = 6
    heads: int = 4
    mlp_ratio: int = 4
    rgb_patch: int = 16
    ev_patch: int = 4
    template_side: int = 64
    search_side: int = 128
    event_bins: int = 4
    spectral_filters: int = 4
    spectral_router_hidden: int = 32
    wavelet_filters: int = 4
    wavelet_router_hidden: int = 32
    wer_mode: str = "per_layer"
    wer_post_block: bool = True
    template_context: float = 2.0
    search_context: float = 4.0

    def __post_init__(self) -> None:
        if self.d_model % self.heads != 0:
            raise ConfigError(f"{self.heads} heads do not divide width {self.d_model}")
        if not (0 <= self.set_layers <= self.depth):
            raise ConfigError(f"set_layers {self.set_layers} must lie within depth {self.depth}")
        if self.wer_mode not in WER_MODES:
            raise ConfigError(f"wer_mode must be one of {WER_MODES}, got {self.wer_mode!r}")
        if self.rgb_patch % self.ev_patch != 0:
            raise ConfigError(f"event patch {self.ev_patch} must divide RGB patch {self.rgb_patch}")
        for name, side in (("template_side", self.template_side), ("search_side", self.search_side)):
            if side % self.rgb_patch != 0:
                raise ConfigError(f"{name} {side} is not a multiple of the RGB patch {self.rgb_patch}")
            if (side * self.ev_patch) % self.rgb_patch != 0:
                raise ConfigError(f"{name} {side} does not shrink cleanly to the event resolution")
        if self.event_bins < 1:
            raise ConfigError(f"event_bins must be >= 1, got {self.event_bins}")
        if self.template_context <= 0 or self.search_context <= 0:
            raise ConfigError("crop context factors must be positive")

    # -- derived geometry ---------------------------------------------------

    @property
    def template_grid(self) -> int:
        return self.template_side // self.rgb_patch

    @property
    def search_grid(self) -> int:
        return self.search_side // self.rgb_patch

    @property
    def n_template(self) -> int:
        return self.template_grid ** 2

    @property
    def n_search(self) -> int:
        return self.search_grid ** 2

    @property
    def seq_len(self) -> int:
        return 2 * (self.n_template + self.n_search)

    @property
    def ev_template_side(self) -> int:
        return (self.template_side * self.ev_patch) // self.rgb_patch

    @property
    def ev_search_side(self) -> int:
        return (self.search_side * self.ev_patch) // self.rgb_patch

    @property
    def n_event_tokens(self) -> int:
        return self.n_template + self.n_search

    @property
    def coeff_max(self) -> int:
        # One wavelet level over the longest refined slice (template+search events).
        return (max(self.n_template, self.n_search, self.n_event_tokens) + 1) // 2

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.__dict__, indent=1))
        return path

    @staticmethod
    def from_json(path: str | Path) -> "TrackConfig":
        raw = json.loads(Path(path).read_text())
        return TrackConfig(**raw)


def token_slices(config: TrackConfig) -> dict[str, tuple[int, int]]:
    """Start/stop rows of each branch inside the assembled sequence."""
    nt, ns = config.n_template, config.n_search
    return {
        "rgb_t": (0, nt),
        "ev_t": (nt, 2 * nt),
        "rgb_s": (2 * nt, 2 * nt + ns),
        "ev_s": (2 * nt + ns, 2 * nt + 2 * ns),
    }


# ---------------------------------------------------------------------------
# parameters


@dataclass
class EncoderLayerParams:
    norm_attn: LayerNormParams
    attn: AttentionParams
    norm_mlp: LayerNormParams
    mlp: MlpParams
    norm_dff: LayerNormParams | None = None
    dff: SpectralFilterBank | None = None

    @property
    def has_dff(self) -> bool:
        return self.dff is not None


@dataclass
class BackboneParams:
    proj_rgb_t: AffineParams
    proj_ev_t: AffineParams
    proj_rgb_s: AffineParams
    proj_ev_s: AffineParams
    pos_template: Tensor
    pos_search: Tensor
    wer_input: WerParams
    wer_layers: list[WerParams]
    layers: list[EncoderLayerParams]


def _patch_dim(side: int, patch: int, channels: int) -> int:
    return channels * patch * patch


def init_backbone_params(
    config: TrackConfig,
    rng: np.random.Generator,
    identity: bool = False,
) -> BackboneParams:
    """Fresh parameters. identity=True zeroes every residual branch output,
    pins the spectral/wavelet units to pass-throughs and disables the WER
    post block, so the whole stack maps H0 to itself.
    """
    d = config.d_model
    layers: list[EncoderLayerParams] = []
    for i in range(config.depth):
        layer = EncoderLayerParams(
            norm_attn=LayerNormParams.init(d),
            attn=AttentionParams.init(rng, d, config.heads),
            norm_mlp=LayerNormParams.init(d),
            mlp=MlpParams.init(rng, d, config.mlp_ratio * d),
        )
        if i < config.set_layers:
            layer.norm_dff = LayerNormParams.init(d)
            layer.dff = make_filter_bank(
                d, config.heads, config.seq_len, config.spectral_filters,
                config.spectral_router_hidden, rng, identity=identity,
            )
        if identity:
            layer.attn.out = AffineParams.zeros(d, d)
            layer.mlp.fc2 = AffineParams.zeros(config.mlp_ratio * d, d)
            if layer.dff is not None:
                layer.dff.proj_out = AffineParams.zeros(d, d)
        layers.append(layer)

    use_post = config.wer_post_block and not identity
    def fresh_wer() -> WerParams:
        return make_wer_params(
            d, config.coeff_max, config.wavelet_filters, config.wavelet_router_hidden,
            None if identity else rng, routed=True, use_post=use_post,
        )

    n_wer = config.set_layers if config.wer_mode == "per_layer" else 0
    return BackboneParams(
        proj_rgb_t=AffineParams.init(rng, _patch_dim(config.template_side, config.rgb_patch, 3), d),
        proj_ev_t=AffineParams.init(rng, _patch_dim(config.ev_template_side, config.ev_patch, config.event_bins), d),
        proj_rgb_s=AffineParams.init(rng, _patch_dim(config.search_side, config.rgb_patch, 3), d),
        proj_ev_s=AffineParams.init(rng, _patch_dim(config.ev_search_side, config.ev_patch, config.event_bins), d),
        pos_template=param(trunc_normal(rng, (config.n_template, d))),
        pos_search=param(trunc_normal(rng, (config.n_search, d))),
        wer_input=fresh_wer(),
        wer_layers=[fresh_wer() for _ in range(n_wer)],
        layers=layers,
    )


# ---------------------------------------------------------------------------
# forward pieces


def patch_tokens(patch: Patch, patch_side: int) -> Tensor:
    """Cut [C, S, S] into non-overlapping patches, flattened row-major.

    Token g*gy+gx holds channel-major pixels of cell (gy, gx); output is
    [grid^2, C * patch_side^2].
    """
    c, s, _ = patch.data.shape
    if s % patch_side != 0:
        raise DimensionError(f"side {s} is not a multiple of patch {patch_side}")
    g = s // patch_side
    x = ad.constant(patch.data)
    cells = ad.reshape(x, (c, g, patch_side, g, patch_side))
    by_token = ad.permute(cells, (1, 3, 0, 2, 4))
    return ad.reshape(by_token, (g * g, c * patch_side * patch_side))


def project_tokens(patch: Patch, proj: AffineParams, patch_side: int, pos: Tensor | None) -> Tensor:
    """Patchify, linearly embed, and add (shared) position embeddings."""
    tokens = patch_tokens(patch, patch_side)
    if tokens.shape[1] != proj.w.shape[0]:
        raise DimensionError(
            f"patch vector width {tokens.shape[1]} does not match projection input {proj.w.shape[0]}"
        )
    embedded = proj(tokens)
    if pos is not None:
        if pos.shape != embedded.shape:
            raise DimensionError(f"position table {pos.shape} does not fit tokens {embedded.shape}")
        embedded = ad.add(embedded, pos)
    return embedded


def assemble(
    rgb_t: Tensor,
    ev_t: Tensor,
    rgb_s: Tensor,
    ev_s: Tensor,
    wer_input: WerParams,
) -> Tensor:
    """Refine the event tokens, then stack [rgb_t; ev_t; rgb_s; ev_s]."""
    nt = rgb_t.shape[0]
    ns = rgb_s.shape[0]
    if ev_t.shape[0] != nt or ev_s.shape[0] != ns:
        raise DimensionError(
            f"event token counts ({ev_t.shape[0]}, {ev_s.shape[0]}) must match RGB ({nt}, {ns})"
        )
    refined = wer_forward(ad.concat([ev_t, ev_s], axis=0), wer_input)
    ev_t_r, ev_s_r = ad.split(refined, [nt, ns], axis=0)
    return ad.concat([rgb_t, ev_t_r, rgb_s, ev_s_r], axis=0)


def std_layer(h: Tensor, layer: EncoderLayerParams) -> Tensor:
    """Pre-norm residual attention followed by a pre-norm residual MLP."""
    h = ad.add(h, layer.attn(layer.norm_attn(h)))
    h = ad.add(h, layer.mlp(layer.norm_mlp(h)))
    return h


def set_layer(h: Tensor, layer: EncoderLayerParams) -> Tensor:
    """Frequency filtering first, then attention, then the MLP."""
    if layer.dff is None or layer.norm_dff is None:
        raise ContractError("set_layer needs a layer with a spectral filter bank")
    h = ad.add(h, dff_forward(layer.norm_dff(h), layer.dff))
    return std_layer(h, layer)


def _refine_event_slices(h: Tensor, wer: WerParams, config: TrackConfig) -> Tensor:
    nt, ns = config.n_template, config.n_search
    rgb_t, ev_t, rgb_s, ev_s = ad.split(h, [nt, nt, ns, ns], axis=0)
    refined = wer_forward(ad.concat([ev_t, ev_s], axis=0), wer)
    ev_t_r, ev_s_r = ad.split(refined, [nt, ns], axis=0)
    return ad.concat([rgb_t, ev_t_r, rgb_s, ev_s_r], axis=0)


def forward_backbone(
    template_rgb: Patch,
    template_ev: Patch,
    search_rgb: Patch,
    search_ev: Patch,
    params: BackboneParams,
    config: TrackConfig,
) -> tuple[Tensor, Tensor]:
    """Run the full stack; returns (tokens [seq_len, D], search feature grid).

    The search feature is the mean of the RGB-search and event-search token
    slices, reshaped to [grid, grid, D] for the prediction head.
    """
    for patch, kind, modality, side in (
        (template_rgb, "template", "rgb", config.template_side),
        (template_ev, "template", "event", config.ev_template_side),
        (search_rgb, "search", "rgb", config.search_side),
        (search_ev, "search", "event", config.ev_search_side),
    ):
        if patch.kind != kind or patch.modality != modality:
            raise ContractError(
                f"expected a {kind}/{modality} patch, got {patch.kind}/{patch.modality}"
            )
        if patch.side != side:
            raise DimensionError(f"{kind}/{modality} patch side {patch.side} != configured {side}")

    rgb_t = project_tokens(template_rgb, params.proj_rgb_t, config.rgb_patch, params.pos_template)
    ev_t = project_tokens(template_ev, params.proj_ev_t, config.ev_patch, params.pos_template)
    rgb_s = project_tokens(search_rgb, params.proj_rgb_s, config.rgb_patch, params.pos_search)
    ev_s = project_tokens(search_ev, params.proj_ev_s, config.ev_patch, params.pos_search)

    h = assemble(rgb_t, ev_t, rgb_s, ev_s, params.wer_input)
    if h.shape != (config.seq_len, config.d_model):
        raise DimensionError(f"assembled sequence is {h.shape}, expected {(config.seq_len, config.d_model)}")

    for i, layer in enumerate(params.layers):
        if i < config.set_layers:
            if config.wer_mode == "per_layer":
                h = _refine_event_slices(h, params.wer_layers[i], config)
            h = set_layer(h, layer)
        else:
            h = std_layer(h, layer)

    slices = token_slices(config)
    rgb_s_out = ad.narrow(h, 0, slices["rgb_s"][0], config.n_search)
    ev_s_out = ad.narrow(h, 0, slices["ev_s"][0], config.n_search)
    fused = ad.scale(ad.add(rgb_s_out, ev_s_out), 0.5)
    g = config.search_grid
    feature = ad.reshape(fused, (g, g, config.d_model))
    return h, feature
