#!/usr/bin/env python3
"""One-sided DFT identities and dynamic frequency filtering.

Walks the spectral stack bottom-up: transform round trip, the weighted
Parseval identity, the radix-2 fast path, then a routed filter bank acting
on a token sequence.
"""

import time

import numpy as np

from spectrack import autodiff as ad
from spectrack import spectral as sp


def transform_identities():
    rng = np.random.default_rng(0)
    print("== transform ==")
    for n in (1, 3, 7, 16, 33):
        x = rng.normal(size=(n, 4))
        spec = sp.dft_1d(ad.tensor(x))
        back = sp.idft_1d(spec, n)
        w = sp.parseval_weights(n).reshape(-1, 1)
        energy_time = np.sum(x * x, axis=0)
        energy_freq = np.sum(w * (spec.re.data**2 + spec.im.data**2), axis=0) / n
        print(f"n={n:3d}  bins={sp.n_bins(n)}  |idft(dft(x)) - x|={np.abs(back.data - x).max():.2e}"
              f"  |parseval gap|={np.abs(energy_time - energy_freq).max():.2e}")


def fast_path():
    rng = np.random.default_rng(1)
    print("\n== radix-2 fast path ==")
    x = rng.normal(size=(1024, 8))
    t0 = time.perf_counter()
    re_f, im_f = sp.dft_radix2_arrays(x)
    t_fast = time.perf_counter() - t0
    t0 = time.perf_counter()
    re_r, im_r = sp.dft_reference_arrays(x)
    t_ref = time.perf_counter() - t0
    gap = max(np.abs(re_f - re_r).max(), np.abs(im_f - im_r).max())
    print(f"n=1024: fast {t_fast * 1e3:.1f} ms, reference {t_ref * 1e3:.1f} ms, agree to {gap:.2e}")


def filtering():
    rng = np.random.default_rng(2)
    print("\n== dynamic frequency filtering ==")
    d_model, heads, n_max = 8, 2, 16
    bank = sp.make_filter_bank(d_model, heads, n_max, filters=3, router_hidden=8, rng=rng)

    h = rng.normal(size=(12, d_model))
    alpha = sp.routing_weights(ad.tensor(h), bank)
    print(f"router mixture over {bank.filters} filters: {np.round(alpha.data, 4)} (sums to {alpha.data.sum():.12f})")

    out = sp.dff_forward(ad.tensor(h), bank)
    print(f"filtered tokens: {out.shape}, change |out - h| mean = {np.abs(out.data - h).mean():.3f}")

    ident = sp.make_filter_bank(d_model, heads, n_max, filters=3, router_hidden=8, rng=rng, identity=True)
    out_id = sp.dff_forward(ad.tensor(h), ident)
    print(f"identity-config bank: |out - h| max = {np.abs(out_id.data - h).max():.2e}")

    # the whole unit is differentiable end to end
    loss = ad.sum_all(ad.mul(out, out))
    ad.backward(loss)
    print(f"gradient norms: basis_re {np.linalg.norm(bank.basis_re.grad):.2e}, "
          f"router fc1.w {np.linalg.norm(bank.router.fc1.w.grad):.2e}")


if __name__ == "__main__":
    transform_identities()
    fast_path()
    filtering()
