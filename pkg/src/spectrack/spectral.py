"""One-sided real DFT along the token axis and dynamic spectral filtering.

Conventions, fixed across the package:

* forward transform is unnormalised: X[k] = sum_n x[n] exp(-2i pi k n / N),
  kept one-sided with F = floor(N/2) + 1 bins;
* inverse restores x[n] = (1/N) sum_k w_k (Re[k] cos - Im[k] sin), where the
  bin weight w_k is 1 for the self-conjugate bins (k = 0, and k = N/2 for
  even N) and 2 elsewhere;
* with those weights, sum_n x[n]^2 == (1/N) sum_k w_k |X[k]|^2.

Both directions exist as differentiable ops. The forward computation runs a
radix-2 decimation when N is a power of two and an O(N^2) trig matrix
product otherwise; the matrices double as the reference implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor
from .errors import ContractError, DimensionError, NumericalContractError
from .nn import AffineParams, RouterParams, param

IM_RESIDUE_LIMIT = 1e-6


def n_bins(n: int) -> int:
    """Number of one-sided spectrum rows for a length-n signal."""
    if n < 1:
        raise DimensionError(f"signal length must be positive, got {n}")
    return n // 2 + 1


def parseval_weights(n: int) -> Array:
    """Per-bin weights that make the one-sided energy identity hold."""
    f = n_bins(n)
    w = np.full(f, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


_FORWARD_CACHE: dict[int, tuple[Array, Array]] = {}
_INVERSE_CACHE: dict[int, tuple[Array, Array]] = {}


def _forward_matrices(n: int) -> tuple[Array, Array]:
    """(C, S) with C[k,m] = cos(2 pi k m / n) and S[k,m] = -sin(2 pi k m / n)."""
    cached = _FORWARD_CACHE.get(n)
    if cached is None:
        k = np.arange(n_bins(n)).reshape(-1, 1)
        m = np.arange(n).reshape(1, -1)
        ang = 2.0 * np.pi * k * m / n
        cached = (np.cos(ang), -np.sin(ang))
        _FORWARD_CACHE[n] = cached
    return cached


def _inverse_matrices(n: int) -> tuple[Array, Array]:
    """(Ci, Di) so that x = Ci @ Re + Di @ Im."""
    cached = _INVERSE_CACHE.get(n)
    if cached is None:
        f = n_bins(n)
        m = np.arange(n).reshape(-1, 1)
        k = np.arange(f).reshape(1, -1)
        ang = 2.0 * np.pi * k * m / n
        w = parseval_weights(n).reshape(1, -1)
        cached = (w * np.cos(ang) / n, -w * np.sin(ang) / n)
        _INVERSE_CACHE[n] = cached
    return cached


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def dft_reference_arrays(x: Array) -> tuple[Array, Array]:
    """Direct O(N^2) transform of real columns x [N, D] -> (re, im) [F, D]."""
    c, s = _forward_matrices(x.shape[0])
    return c @ x, s @ x


def _fft_complex(a: Array) -> Array:
    # radix-2 decimation in time over axis 0; a.shape[0] must be a power of two
    n = a.shape[0]
    if n == 1:
        return a.copy()
    even = _fft_complex(a[0::2])
    odd = _fft_complex(a[1::2])
    tw = np.exp(-2j * np.pi * np.arange(n // 2) / n)
    tw = tw.reshape((-1,) + (1,) * (a.ndim - 1))
    t = tw * odd
    return np.concatenate([even + t, even - t], axis=0)


def dft_radix2_arrays(x: Array) -> tuple[Array, Array]:
    """Power-of-two fast path; same contract as dft_reference_arrays."""
    n = x.shape[0]
    if not is_power_of_two(n):
        raise DimensionError(f"radix-2 path requires a power-of-two length, got {n}")
    full = _fft_complex(x.astype(np.complex128))
    half = full[: n_bins(n)]
    return np.ascontiguousarray(half.real), np.ascontiguousarray(half.imag)


def _dft_arrays(x: Array) -> tuple[Array, Array]:
    if is_power_of_two(x.shape[0]):
        return dft_radix2_arrays(x)
    return dft_reference_arrays(x)


@dataclass
class ComplexTensor:
    """Paired real/imaginary tensors of identical shape."""

    re: Tensor
    im: Tensor

    def __post_init__(self) -> None:
        if self.re.shape != self.im.shape:
            raise DimensionError(f"complex parts differ in shape: {self.re.shape} vs {self.im.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape


def dft_1d(x: Tensor) -> ComplexTensor:
    """One-sided DFT of each column of x [N, D] along the token axis."""
    if x.ndim != 2:
        raise DimensionError(f"dft_1d expects [tokens, channels], got {x.shape}")
    n = x.shape[0]
    re_data, im_data = _dft_arrays(x.data)
    c, s = _forward_matrices(n)

    re = ad.Tensor(re_data)
    im = ad.Tensor(im_data)
    if x.requires_grad or x._vjp is not None:
        re._parents = (x,)
        re._vjp = lambda g: (c.T @ g,)
        im._parents = (x,)
        im._vjp = lambda g: (s.T @ g,)
    return ComplexTensor(re, im)


def idft_1d(spectrum: ComplexTensor, n: int) -> Tensor:
    """Inverse of dft_1d back to a length-n real signal.

    The one-sided layout can only represent real signals whose DC (and
    Nyquist, for even n) bins are real; a non-negligible imaginary part
    there means the caller built an inconsistent spectrum, and the op
    raises rather than silently discarding energy.
    """
    if spectrum.re.ndim != 2:
        raise DimensionError(f"idft_1d expects [bins, channels], got {spectrum.shape}")
    f = n_bins(n)
    if spectrum.re.shape[0] != f:
        raise DimensionError(f"idft_1d: {spectrum.re.shape[0]} bins cannot invert to length {n} (need {f})")

    im = spectrum.im.data
    if n % 2 == 0 and f >= 2:
        residue = max(np.abs(im[0] + im[-1]).max(), np.abs(im[0] - im[-1]).max()) / n
    else:
        residue = np.abs(im[0]).max() / n
    if residue > IM_RESIDUE_LIMIT:
        raise NumericalContractError(
            f"imaginary residue {residue:.3e} at the self-conjugate bins exceeds {IM_RESIDUE_LIMIT:.0e}"
        )

    ci, di = _inverse_matrices(n)
    out = ci @ spectrum.re.data + di @ im

    def vjp(g: Array):
        return (ci.T @ g, di.T @ g)

    return ad._node(out, (spectrum.re, spectrum.im), vjp)


# ---------------------------------------------------------------------------
# dynamic spectral filtering


@dataclass
class SpectralFilterBank:
    """K learnable complex filters per attention head plus an input router.

    The bank is sized for sequences up to n_max tokens; shorter inputs use
    the leading bins of each filter. Projections wrap the filtering so the
    unit is a drop-in token mixer: out = proj_out(IDFT(DFT(proj_in(h)) * W)).
    """

    heads: int
    n_max: int
    basis_re: Tensor  # [K, heads, F_max, d_head]
    basis_im: Tensor
    router: RouterParams
    proj_in: AffineParams
    proj_out: AffineParams

    def __post_init__(self) -> None:
        if self.basis_re.shape != self.basis_im.shape:
            raise DimensionError(
                f"filter bank parts differ: {self.basis_re.shape} vs {self.basis_im.shape}"
            )
        if self.basis_re.ndim != 4:
            raise DimensionError(f"filter bank must be [K, heads, F_max, d_head], got {self.basis_re.shape}")
        if self.basis_re.shape[1] != self.heads:
            raise DimensionError(f"bank built for {self.basis_re.shape[1]} heads, config says {self.heads}")
        if self.basis_re.shape[2] != n_bins(self.n_max):
            raise DimensionError(
                f"bank has {self.basis_re.shape[2]} bins but n_max {self.n_max} needs {n_bins(self.n_max)}"
            )

    @property
    def filters(self) -> int:
        return self.basis_re.shape[0]

    @property
    def f_max(self) -> int:
        return self.basis_re.shape[2]

    @property
    def d_model(self) -> int:
        return self.heads * self.basis_re.shape[3]


def make_filter_bank(
    d_model: int,
    heads: int,
    n_max: int,
    filters: int,
    router_hidden: int,
    rng: np.random.Generator,
    identity: bool = False,
) -> SpectralFilterBank:
    """All-pass initialisation: every filter starts as 1 + 0i everywhere.

    identity=True additionally pins the projections to the identity map and
    the router to the uniform mixture, making the whole unit an identity
    within roundoff. The default keeps trunc-normal projections and router.
    """
    if d_model % heads != 0:
        raise DimensionError(f"{heads} heads do not divide model width {d_model}")
    if filters < 1:
        raise ContractError(f"filter bank needs at least one filter, got {filters}")
    d_head = d_model // heads
    f_max = n_bins(n_max)
    basis_re = param(np.ones((filters, heads, f_max, d_head)))
    basis_im = param(np.zeros((filters, heads, f_max, d_head)))
    if identity:
        return SpectralFilterBank(
            heads=heads,
            n_max=n_max,
            basis_re=basis_re,
            basis_im=basis_im,
            router=RouterParams.uniform(d_model, router_hidden, filters),
            proj_in=AffineParams.identity(d_model),
            proj_out=AffineParams.identity(d_model),
        )
    return SpectralFilterBank(
        heads=heads,
        n_max=n_max,
        basis_re=basis_re,
        basis_im=basis_im,
        router=RouterParams.init(rng, d_model, router_hidden, filters),
        proj_in=AffineParams.init(rng, d_model, d_model),
        proj_out=AffineParams.init(rng, d_model, d_model),
    )


def routing_weights(h: Tensor, bank: SpectralFilterBank) -> Tensor:
    """Softmax mixture over the K filters from the mean input token."""
    if h.ndim != 2 or h.shape[1] != bank.d_model:
        raise DimensionError(f"routing input {h.shape} does not match bank width {bank.d_model}")
    pooled = ad.mean_over_tokens(h)
    return bank.router(pooled)


def mixed_filter(alpha: Tensor, bank: SpectralFilterBank, n: int) -> ComplexTensor:
    """Alpha-weighted sum of the bank, reshaped to [F, d_model] for length n.

    The imaginary part is zeroed at the self-conjugate bins (k = 0 and, for
    even n, k = N/2) so that modulating a real signal's spectrum keeps the
    reconstruction real.
    """
    k = bank.filters
    if alpha.shape != (k,):
        raise DimensionError(f"alpha has shape {alpha.shape}, bank holds {k} filters")
    f = n_bins(n)
    if f > bank.f_max:
        raise DimensionError(f"sequence length {n} needs {f} bins, bank holds {bank.f_max}")
    alpha_row = ad.reshape(alpha, (1, k))

    def mix(basis: Tensor) -> Tensor:
        flat = ad.reshape(basis, (k, bank.heads * bank.f_max * (bank.d_model // bank.heads)))
        mixed = ad.matmul(alpha_row, flat)
        cube = ad.reshape(mixed, (bank.heads, bank.f_max, bank.d_model // bank.heads))
        by_bin = ad.permute(cube, (1, 0, 2))
        full = ad.reshape(by_bin, (bank.f_max, bank.d_model))
        return ad.narrow(full, 0, 0, f)

    mask = np.ones((f, 1))
    mask[0, 0] = 0.0
    if n % 2 == 0:
        mask[-1, 0] = 0.0
    mask = np.broadcast_to(mask, (f, bank.d_model)).copy()
    re = mix(bank.basis_re)
    im = ad.mul(mix(bank.basis_im), ad.constant(mask))
    return ComplexTensor(re, im)


def dff_forward(h: Tensor, bank: SpectralFilterBank) -> Tensor:
    """Dynamic frequency filtering of a token sequence h [N, d_model]."""
    if h.ndim != 2 or h.shape[1] != bank.d_model:
        raise DimensionError(f"input {h.shape} does not match bank width {bank.d_model}")
    n = h.shape[0]
    alpha = routing_weights(h, bank)
    filt = mixed_filter(alpha, bank, n)
    spectrum = dft_1d(bank.proj_in(h))
    out_re = ad.sub(ad.mul(spectrum.re, filt.re), ad.mul(spectrum.im, filt.im))
    out_im = ad.add(ad.mul(spectrum.re, filt.im), ad.mul(spectrum.im, filt.re))
    mixed = idft_1d(ComplexTensor(out_re, out_im), n)
    return bank.proj_out(mixed)
