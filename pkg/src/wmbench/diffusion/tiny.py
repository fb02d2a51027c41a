"""Self-contained desk-scale latent diffusion backend.

Autoencoder: a stride-4, kernel-4 convolution (one linear map per 4x4x3
patch) onto C channels and its transpose, fitted by PCA on the toy domain
and whitened so each latent channel has unit variance.

Denoiser: the minimum-mean-square-error noise prediction under a
stationary Gaussian latent prior (a DCT-domain Wiener filter with a fitted
radial power spectrum), followed by two non-local self-attention sites
that pull each token's clean estimate toward tokens with matching 3x3
neighbourhoods. The attention sites are where an
:class:`~wmbench.diffusion.attention.AttentionRouter` is consulted.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import zoom

from ..core import ImageBuffer, Latent, ShapeError, check_divisible
from .attention import AttentionRouter, view_attention
from .schedule import NoiseSchedule

WEIGHTS_PATH = Path(__file__).with_name("weights") / "tiny_v1.npz"

T_TINY = 50
BETA_START, BETA_END = 0.002, 0.2
FACTOR = 4
CHANNELS = 4
SITES = (("down", 0), ("mid", 0))


def tiny_schedule() -> NoiseSchedule:
    return NoiseSchedule.linear_beta(T_TINY, BETA_START, BETA_END)


def _fingerprint(arrays: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrays[k], dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# autoencoder


def image_to_patches(x: np.ndarray, f: int = FACTOR) -> np.ndarray:
    """(H, W, 3) -> (H/f, W/f, f*f*3)."""
    H, W, _ = x.shape
    p = x.reshape(H // f, f, W // f, f, 3).transpose(0, 2, 1, 3, 4)
    return p.reshape(H // f, W // f, f * f * 3)


def patches_to_image(p: np.ndarray, f: int = FACTOR) -> np.ndarray:
    h, w, _ = p.shape
    return p.reshape(h, w, f, f, 3).transpose(0, 2, 1, 3, 4).reshape(h * f, w * f, 3)


class TinyAutoencoder:
    downsampling_factor = FACTOR

    def __init__(self, patch_mean: np.ndarray, basis: np.ndarray, scales: np.ndarray):
        self.patch_mean = np.asarray(patch_mean, dtype=np.float64)
        self.basis = np.asarray(basis, dtype=np.float64)  # (C, f*f*3), orthonormal rows
        self.scales = np.asarray(scales, dtype=np.float64)  # (C,)
        self.latent_channels = self.basis.shape[0]

    def encode(self, img: ImageBuffer) -> Latent:
        check_divisible(img, self.downsampling_factor)
        p = image_to_patches(img.values) - self.patch_mean
        z = (p @ self.basis.T) / self.scales
        return Latent(z.transpose(2, 0, 1))

    def decode(self, z: Latent, source_id: str = "decoded") -> ImageBuffer:
        v = z.values
        if v.shape[0] != self.latent_channels:
            raise ShapeError(f"latent has {v.shape[0]} channels, expected {self.latent_channels}")
        p = (v.transpose(1, 2, 0) * self.scales) @ self.basis + self.patch_mean
        return ImageBuffer.from_array(patches_to_image(p), source_id)

    def latent_shape(self, height: int, width: int) -> tuple:
        f = self.downsampling_factor
        if height % f or width % f:
            raise ShapeError(f"{height}x{width} not divisible by {f}")
        return (self.latent_channels, height // f, width // f)


# --------------------------------------------------------------------------
# denoiser


def neighbourhood_tokens(x: np.ndarray) -> np.ndarray:
    """(B, C, h, w) -> (B, h*w, 9C + 2) tokens ``[patch, |patch|^2, 1]``."""
    B, C, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    cols = [xp[:, :, dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)]
    f = np.stack(cols, axis=2).reshape(B, C * 9, h * w).transpose(0, 2, 1)
    sq = np.sum(f * f, axis=-1, keepdims=True)
    return np.concatenate([f, sq, np.ones_like(sq)], axis=-1)


@lru_cache(maxsize=8)
def _attention_projections(C: int, beta: float):
    """Projections that turn dot-product logits into -beta/2 |f_q - f_k|^2 (+ const per query)."""
    D = 9 * C
    d = D + 1
    a = np.sqrt(beta * np.sqrt(d))
    w_q = np.zeros((D + 2, d))
    w_q[:D, :D] = np.eye(D) * a
    w_q[D + 1, D] = a
    w_k = np.zeros((D + 2, d))
    w_k[:D, :D] = np.eye(D) * a
    w_k[D, D] = -0.5 * a
    w_v = np.zeros((D + 2, C))
    centre = 4  # middle of the 3x3 neighbourhood
    for c in range(C):
        w_v[c * 9 + centre, c] = 1.0
    return w_q, w_k, w_v


class TinyDenoiser:
    def __init__(self, schedule: NoiseSchedule, weights: dict):
        self.schedule = schedule
        self.freq_bins = np.asarray(weights["freq_bins"], dtype=np.float64)
        self.power = np.asarray(weights["power"], dtype=np.float64)  # (C, K)
        self.latent_mean = np.asarray(weights["latent_mean"], dtype=np.float64)
        self.site_beta = {s: float(weights[f"beta_{s[0]}"]) for s in SITES}
        self.site_mix = {s: float(weights[f"mix_{s[0]}"]) for s in SITES}
        self.channels = self.power.shape[0]
        self.attention_sites = SITES
        self.parameter_fingerprint = _fingerprint(
            {k: np.asarray(v) for k, v in weights.items()} | {"alphas": schedule.alphas}
        )

    def null_conditioning(self) -> np.ndarray:
        return np.zeros(self.channels)

    @lru_cache(maxsize=16)
    def _power_grid(self, h: int, w: int) -> np.ndarray:
        fy = np.arange(h) / (2.0 * h)
        fx = np.arange(w) / (2.0 * w)
        r = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
        grid = np.stack([np.interp(r, self.freq_bins, p) for p in self.power])
        return np.maximum(grid, 1e-6)

    def wiener_eps(self, z: np.ndarray, t: int, cond: np.ndarray) -> np.ndarray:
        ab = self.schedule.alpha_bar[t]
        mean = self.latent_mean + cond
        zc = z - np.sqrt(ab) * mean[None, :, None, None]
        S = self._power_grid(z.shape[-2], z.shape[-1])
        gain = np.sqrt(1.0 - ab) / (ab * S + (1.0 - ab))
        return idctn(gain * dctn(zc, axes=(-2, -1), norm="ortho"), axes=(-2, -1), norm="ortho")

    def _attend(self, site, t, x: np.ndarray, router) -> np.ndarray:
        B, C, h, w = x.shape
        tokens = neighbourhood_tokens(x)
        kv = router.keys_values(site, t, tokens) if router is not None else tokens
        w_q, w_k, w_v = _attention_projections(C, self.site_beta[site])
        out = view_attention(tokens, kv, w_q, w_k, w_v, layer=f"{site[0]}.{site[1]}")
        return out.transpose(0, 2, 1).reshape(B, C, h, w)

    def predict(self, z_t, t: int, cond=None, router: AttentionRouter | None = None) -> np.ndarray:
        """Noise prediction for a latent or a ``(B, C, h, w)`` batch at timestep ``t >= 1``."""
        single = isinstance(z_t, Latent)
        z = z_t.values[None] if single else np.asarray(z_t, dtype=np.float64)
        if z.ndim != 4 or z.shape[1] != self.channels:
            raise ShapeError(f"denoiser expects (B, {self.channels}, h, w), got {z.shape}")
        if not 1 <= t <= self.schedule.T:
            raise ValueError(f"timestep {t} outside [1, {self.schedule.T}]")
        cond = self.null_conditioning() if cond is None else np.asarray(cond, dtype=np.float64)
        ab = self.schedule.alpha_bar[t]
        eps = self.wiener_eps(z, t, cond)
        x0 = (z - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)

        # attention features are unreliable at high noise; fade the sites out with alpha_bar
        site = SITES[0]
        x0 = x0 + ab * self.site_mix[site] * (self._attend(site, t, x0, router) - x0)

        site = SITES[1]
        B, C, h, w = x0.shape
        ph, pw = h + h % 2, w + w % 2
        xp = np.pad(x0, ((0, 0), (0, 0), (0, ph - h), (0, pw - w)), mode="edge")
        pooled = xp.reshape(B, C, ph // 2, 2, pw // 2, 2).mean(axis=(3, 5))
        delta = self._attend(site, t, pooled, router) - pooled
        up = zoom(delta, (1, 1, 2, 2), order=1, mode="nearest", grid_mode=True)[:, :, :h, :w]
        x0 = x0 + ab * self.site_mix[site] * up

        out = (z - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
        return out[0] if single else out


def load_tiny(weights_path=None):
    path = Path(weights_path) if weights_path else WEIGHTS_PATH
    if not path.exists():
        raise FileNotFoundError(
            f"tiny backend weights not found at {path}; regenerate with "
            "`python -m wmbench.diffusion.fit_tiny`"
        )
    with np.load(path) as npz:
        w = {k: npz[k] for k in npz.files}
    ae = TinyAutoencoder(w["patch_mean"], w["basis"], w["scales"])
    schedule = tiny_schedule()
    den_w = {k: v for k, v in w.items() if k not in ("patch_mean", "basis", "scales")}
    den = TinyDenoiser(schedule, den_w)
    den.parameter_fingerprint = _fingerprint(w | {"alphas": schedule.alphas})
    return ae, den, schedule
