#!/usr/bin/env python3
"""Single-level wavelet analysis and the event-token refinement unit."""

import numpy as np

from spectrack import autodiff as ad
from spectrack import wavelet as wv


def analysis_synthesis():
    rng = np.random.default_rng(0)
    kernel = wv.haar_kernel()
    print("== analysis / synthesis ==")
    for n in (6, 7, 64):
        x = rng.normal(size=(n, 4))
        state = wv.dwt(ad.tensor(x), kernel)
        back = wv.idwt(state, kernel, n)
        line = (f"n={n:2d}  bands {state.ca.shape[0]} rows (pad={state.pad})  "
                f"|recon - x|={np.abs(back.data - x).max():.2e}")
        if state.pad == 0:
            # the energy identity only holds without the replicated odd row
            gap = abs(float(np.sum(state.ca.data**2) + np.sum(state.cd.data**2) - np.sum(x * x)))
            line += f"  |energy gap|={gap:.2e}"
        print(line)


def detail_suppression():
    rng = np.random.default_rng(1)
    kernel = wv.haar_kernel()
    print("\n== zeroing the detail band ==")
    x = rng.normal(size=(8, 1))
    state = wv.dwt(ad.tensor(x), kernel)
    squashed = wv.WaveletState(ca=state.ca, cd=ad.tensor(np.zeros_like(state.cd.data)), pad=0)
    smooth = wv.idwt(squashed, kernel, 8)
    pairs = np.repeat((x[0::2] + x[1::2]) / 2.0, 2, axis=0)
    print("input       :", np.round(x[:, 0], 3))
    print("cd -> 0     :", np.round(smooth.data[:, 0], 3))
    print("pair average:", np.round(pairs[:, 0], 3))


def refinement_unit():
    rng = np.random.default_rng(2)
    print("\n== event-token refinement ==")
    d_model = 8
    params = wv.make_wer_params(d_model, coeff_max=16, filters=2, router_hidden=8, rng=rng)
    e = rng.normal(size=(10, d_model))
    out = wv.wer_forward(ad.tensor(e), params)
    print(f"refined tokens: {out.shape}, change |out - e| mean = {np.abs(out.data - e).mean():.3f}")

    ident = wv.make_wer_params(d_model, coeff_max=16, filters=2, router_hidden=8, rng=None, use_post=False)
    out_id = wv.wer_forward(ad.tensor(e), ident)
    print(f"identity config (all-ones masks, no post block): |out - e| max = {np.abs(out_id.data - e).max():.2e}")

    loss = ad.sum_all(ad.mul(out, out))
    ad.backward(loss)
    print(f"gradient norm of the analysis taps: {np.linalg.norm(params.kernel.lo.grad):.3f}")


if __name__ == "__main__":
    analysis_synthesis()
    detail_suppression()
    refinement_unit()
