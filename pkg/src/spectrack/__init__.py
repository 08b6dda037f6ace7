"""Frequency-aware RGB + event-camera single-object tracking, desk scale."""

from .autodiff import (
    GradCheckReport,
    Tensor,
    backward,
    grad_check,
    load_checkpoint,
    save_checkpoint,
    zero_grads,
)
from .backbone import (
    BackboneParams,
    TrackConfig,
    assemble,
    forward_backbone,
    init_backbone_params,
    project_tokens,
    set_layer,
    std_layer,
    token_slices,
)
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    EventParseError,
    NumericalContractError,
    SpectrackError,
    ValidationError,
)
from .evaluation import (
    SequenceResult,
    auc,
    compute_metrics,
    gradient_checks,
    iou,
    pr_curve,
    precision_rate,
    sr_curve,
    success_rate,
    track_sequence,
    train_toy,
)
from .events import (
    CropGeometry,
    EventStream,
    FrameIndex,
    Patch,
    TimeSurface,
    crop_patch,
    crop_with_geometry,
    event_voxel,
    parse_events,
    time_surface,
)
from .head import (
    HeadParams,
    LossWeights,
    TrackOutputs,
    focal_loss,
    giou_loss,
    head_forward,
    init_head_params,
    total_loss,
)
from .model import ModelParams, TrackerModel
from .sequences import TrackSequence, load_sequence, write_sequence
from .simulate import SimConfig, synth_sequence
from .spectral import (
    ComplexTensor,
    SpectralFilterBank,
    dff_forward,
    dft_1d,
    idft_1d,
    make_filter_bank,
    mixed_filter,
    routing_weights,
)
from .wavelet import (
    DwfParams,
    WaveletKernel,
    WaveletState,
    WerParams,
    dwf,
    dwt,
    haar_kernel,
    idwt,
    make_dwf_params,
    make_wer_params,
    wer_forward,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
