"""Fit the tiny backend on the toy domain and write ``weights/tiny_v1.npz``.

Run ``python -m wmbench.diffusion.fit_tiny``. Fitting is deterministic:
PCA for the autoencoder, a radially binned DCT power spectrum for the
latent prior, and a small grid search over attention sharpness and mixing
weights that minimises clean-latent reconstruction error across timesteps.
"""

from __future__ import annotations

import argparse
import itertools
import logging

import numpy as np
from scipy.fft import dctn

from ..core import derive_stream
from ..toydata import toy_set
from .tiny import (
    CHANNELS,
    FACTOR,
    SITES,
    WEIGHTS_PATH,
    TinyDenoiser,
    image_to_patches,
    tiny_schedule,
)

log = logging.getLogger(__name__)

N_BINS = 48


def fit_autoencoder(images, channels=CHANNELS):
    P = np.concatenate([image_to_patches(im.values, FACTOR).reshape(-1, FACTOR * FACTOR * 3) for im in images])
    mean = P.mean(axis=0)
    cov = np.cov((P - mean).T)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:channels]
    basis = evecs[:, order].T
    # deterministic sign: largest-magnitude entry positive
    signs = np.sign(basis[np.arange(channels), np.argmax(np.abs(basis), axis=1)])
    basis = basis * signs[:, None]
    scales = np.sqrt(evals[order])
    return mean, basis, scales


def fit_spectrum(latents):
    C, h, w = latents[0].shape
    fy = np.arange(h) / (2.0 * h)
    fx = np.arange(w) / (2.0 * w)
    r = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    edges = np.linspace(0.0, r.max() + 1e-9, N_BINS + 1)
    idx = np.clip(np.digitize(r, edges) - 1, 0, N_BINS - 1)
    acc = np.zeros((C, N_BINS))
    cnt = np.bincount(idx.ravel(), minlength=N_BINS).astype(float)
    for z in latents:
        D = dctn(z, axes=(-2, -1), norm="ortho") ** 2
        for c in range(C):
            acc[c] += np.bincount(idx.ravel(), weights=D[c].ravel(), minlength=N_BINS)
    power = acc / (cnt[None, :] * len(latents))
    centres = np.array([r[idx == k].mean() if cnt[k] else np.nan for k in range(N_BINS)])
    ok = ~np.isnan(centres)
    return centres[ok], power[:, ok]


def _x0_error(den: TinyDenoiser, Z: np.ndarray, ts, rng) -> float:
    err = 0.0
    for t in ts:
        ab = den.schedule.alpha_bar[t]
        eps = rng.normal(Z.shape)
        zt = np.sqrt(ab) * Z + np.sqrt(1 - ab) * eps
        e = den.predict(zt, t)
        err += float(np.mean((e - eps) ** 2)) * (1 - ab) / ab
    return err / len(ts)


def fit(n_images: int = 256, size: int = 128, seed: int = 0) -> dict:
    images = toy_set(n_images, size, seed, prefix="fit")
    mean, basis, scales = fit_autoencoder(images)
    latents = []
    for im in images:
        p = image_to_patches(im.values) - mean
        latents.append(((p @ basis.T) / scales).transpose(2, 0, 1))
    freq, power = fit_spectrum(latents)
    latent_mean = np.mean([z.mean(axis=(1, 2)) for z in latents], axis=0)
    weights = {
        "patch_mean": mean,
        "basis": basis,
        "scales": scales,
        "freq_bins": freq,
        "power": power,
        "latent_mean": latent_mean,
    }

    Z = np.stack(latents[:24])
    ts = [2, 7, 15, 25, 40]
    best = None
    for beta, mix_d, mix_m in itertools.product([0.5, 1.0, 2.0, 4.0], [0.0, 0.25, 0.5, 0.75], [0.0, 0.25, 0.5]):
        trial = dict(weights, beta_down=beta, mix_down=mix_d, beta_mid=beta, mix_mid=mix_m)
        den = TinyDenoiser(tiny_schedule(), trial)
        err = _x0_error(den, Z, ts, derive_stream(seed, "fit:grid"))
        log.info("beta=%.2f mix_down=%.2f mix_mid=%.2f err=%.5f", beta, mix_d, mix_m, err)
        if best is None or err < best[0]:
            best = (err, trial)
    return best[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(WEIGHTS_PATH))
    ap.add_argument("--n-images", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    w = fit(args.n_images, seed=args.seed)
    np.savez(args.out, **{k: np.asarray(v, dtype=np.float64) for k, v in w.items()})
    log.info("wrote %s", args.out)


if __name__ == "__main__":
    main()
