"""Single-level learnable wavelet analysis along the token axis.

A two-tap filter pair (initialised to Haar) splits a token sequence into
approximation and detail rows; per-coefficient masks modulate each band,
optionally mixed by a routing MLP; synthesis uses the transpose of the
analysis matrix, which is the exact inverse while the taps stay
orthonormal. Odd-length sequences replicate their last row before pairing
and drop the synthetic element after reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .nn import LayerNormParams, RouterParams, param


@dataclass
class WaveletKernel:
    """Analysis taps: lo picks up the local average, hi the local difference."""

    lo: Tensor  # [2]
    hi: Tensor  # [2]

    def __post_init__(self) -> None:
        if self.lo.shape != (2,) or self.hi.shape != (2,):
            raise DimensionError(f"wavelet taps must be length 2, got lo {self.lo.shape}, hi {self.hi.shape}")

    def analysis_matrix(self) -> Tensor:
        """[2, 2] matrix whose columns are (lo, hi)."""
        return ad.concat([ad.reshape(self.lo, (2, 1)), ad.reshape(self.hi, (2, 1))], axis=1)


def haar_kernel(requires_grad: bool = True) -> WaveletKernel:
    r = 1.0 / math.sqrt(2.0)
    return WaveletKernel(
        lo=param([r, r], requires_grad=requires_grad),
        hi=param([r, -r], requires_grad=requires_grad),
    )


@dataclass
class WaveletState:
    """One analysis level: approximation and detail rows plus pad bookkeeping."""

    ca: Tensor  # [M, D]
    cd: Tensor  # [M, D]
    pad: int    # 1 if the analysed sequence was extended by one row

    def __post_init__(self) -> None:
        if self.ca.shape != self.cd.shape:
            raise DimensionError(f"band shapes differ: ca {self.ca.shape} vs cd {self.cd.shape}")
        if self.pad not in (0, 1):
            raise ContractError(f"pad flag must be 0 or 1, got {self.pad}")


def dwt(x: Tensor, kernel: WaveletKernel) -> WaveletState:
    """Analyse x [N, D] into ceil(N/2) approximation/detail rows."""
    if x.ndim != 2:
        raise DimensionError(f"dwt expects [tokens, channels], got {x.shape}")
    n, d = x.shape
    if n < 1:
        raise DimensionError("dwt needs at least one token")
    pad = n % 2
    xp = ad.concat([x, ad.narrow(x, 0, n - 1, 1)], axis=0) if pad else x
    m = (n + pad) // 2
    pairs = ad.reshape(ad.permute(ad.reshape(xp, (m, 2, d)), (0, 2, 1)), (m * d, 2))
    bands = ad.matmul(pairs, kernel.analysis_matrix())
    ca = ad.reshape(ad.narrow(bands, 1, 0, 1), (m, d))
    cd = ad.reshape(ad.narrow(bands, 1, 1, 1), (m, d))
    return WaveletState(ca=ca, cd=cd, pad=pad)


def idwt(state: WaveletState, kernel: WaveletKernel, n: int) -> Tensor:
    """Synthesise a length-n sequence from one analysis level.

    Uses the transpose of the analysis matrix, i.e. assumes orthonormal
    taps; reconstruction error grows smoothly as learned taps drift.
    """
    m, d = state.ca.shape
    if n % 2 != state.pad or (n + state.pad) // 2 != m:
        raise DimensionError(f"cannot synthesise length {n} from {m} coefficient rows (pad={state.pad})")
    bands = ad.concat([ad.reshape(state.ca, (m * d, 1)), ad.reshape(state.cd, (m * d, 1))], axis=1)
    synthesis = ad.permute(kernel.analysis_matrix(), (1, 0))
    pairs = ad.matmul(bands, synthesis)
    full = ad.reshape(ad.permute(ad.reshape(pairs, (m, d, 2)), (0, 2, 1)), (2 * m, d))
    return ad.narrow(full, 0, 0, n) if state.pad else full


@dataclass
class DwfParams:
    """Per-band coefficient masks, optionally routed over K candidates.

    basis_* are [K, M_max, D]; rows beyond the current coefficient count are
    simply unused. router=None (or K == 1) applies the first mask statically.
    """

    basis_ca: Tensor
    basis_cd: Tensor
    router: RouterParams | None

    def __post_init__(self) -> None:
        if self.basis_ca.shape != self.basis_cd.shape:
            raise DimensionError(f"mask banks differ: {self.basis_ca.shape} vs {self.basis_cd.shape}")
        if self.basis_ca.ndim != 3:
            raise DimensionError(f"mask bank must be [K, M_max, D], got {self.basis_ca.shape}")

    @property
    def filters(self) -> int:
        return self.basis_ca.shape[0]

    @property
    def coeff_max(self) -> int:
        return self.basis_ca.shape[1]


def make_dwf_params(
    d_model: int,
    coeff_max: int,
    filters: int,
    router_hidden: int,
    rng: np.random.Generator | None,
    routed: bool = True,
) -> DwfParams:
    """All-ones masks (identity filtering) with an optional routing MLP."""
    if filters < 1:
        raise ContractError(f"need at least one mask, got {filters}")
    basis_ca = param(np.ones((filters, coeff_max, d_model)))
    basis_cd = param(np.ones((filters, coeff_max, d_model)))
    if routed and filters > 1:
        if rng is None:
            router = RouterParams.uniform(d_model, router_hidden, filters)
        else:
            router = RouterParams.init(rng, d_model, router_hidden, filters)
    else:
        router = None
    return DwfParams(basis_ca=basis_ca, basis_cd=basis_cd, router=router)


def _mix_masks(alpha: Tensor, basis: Tensor, m: int) -> Tensor:
    k, m_max, d = basis.shape
    flat = ad.reshape(basis, (k, m_max * d))
    mixed = ad.reshape(ad.matmul(ad.reshape(alpha, (1, k)), flat), (m_max, d))
    return ad.narrow(mixed, 0, 0, m)


def dwf(state: WaveletState, params: DwfParams) -> WaveletState:
    """Modulate both bands elementwise by (possibly routed) masks."""
    m, d = state.ca.shape
    if params.basis_ca.shape[2] != d:
        raise DimensionError(f"masks are {params.basis_ca.shape[2]} channels wide, bands have {d}")
    if m > params.coeff_max:
        raise DimensionError(f"{m} coefficient rows exceed mask capacity {params.coeff_max}")
    if params.router is not None and params.filters > 1:
        pooled = ad.mean_over_tokens(ad.concat([state.ca, state.cd], axis=0))
        alpha = params.router(pooled)
        mask_ca = _mix_masks(alpha, params.basis_ca, m)
        mask_cd = _mix_masks(alpha, params.basis_cd, m)
    else:
        mask_ca = ad.reshape(ad.narrow(params.basis_ca, 0, 0, 1), (params.coeff_max, d))
        mask_ca = ad.narrow(mask_ca, 0, 0, m)
        mask_cd = ad.reshape(ad.narrow(params.basis_cd, 0, 0, 1), (params.coeff_max, d))
        mask_cd = ad.narrow(mask_cd, 0, 0, m)
    return WaveletState(ca=ad.mul(state.ca, mask_ca), cd=ad.mul(state.cd, mask_cd), pad=state.pad)


@dataclass
class WerParams:
    """One edge-refinement unit: analyse, filter, synthesise, smooth.

    The post block (depthwise conv along tokens + layer norm) is optional
    because layer norm is never the identity map; identity configurations
    switch it off, the default keeps it with identity-initialised taps.
    """

    kernel: WaveletKernel
    dwf: DwfParams
    post_taps: Tensor | None      # [3, D]
    post_norm: LayerNormParams | None
    use_post: bool

    def __post_init__(self) -> None:
        if self.use_post and (self.post_taps is None or self.post_norm is None):
            raise ContractError("use_post requires post_taps and post_norm")


def make_wer_params(
    d_model: int,
    coeff_max: int,
    filters: int,
    router_hidden: int,
    rng: np.random.Generator | None,
    routed: bool = True,
    use_post: bool = True,
) -> WerParams:
    taps = np.zeros((3, d_model))
    taps[1, :] = 1.0
    return WerParams(
        kernel=haar_kernel(),
        dwf=make_dwf_params(d_model, coeff_max, filters, router_hidden, rng, routed=routed),
        post_taps=param(taps) if use_post else None,
        post_norm=LayerNormParams.init(d_model) if use_post else None,
        use_post=use_post,
    )


def wer_forward(e: Tensor, params: WerParams) -> Tensor:
    """Refine event tokens e [N, D]; output keeps the shape."""
    n = e.shape[0]
    state = dwt(e, params.kernel)
    filtered = dwf(state, params.dwf)
    out = idwt(filtered, params.kernel, n)
    if params.use_post:
        out = params.post_norm(ad.depthwise_conv1d(out, params.post_taps))
    return out
