"""Adapter for pretrained latent diffusion checkpoints in diffusers layout.

Covers Stable Diffusion 1.x/2.x style models: an ``AutoencoderKL`` (vae),
a ``UNet2DConditionModel`` (unet), a scheduler config with
``alphas_cumprod`` and a CLIP text encoder used once to embed the empty
prompt. Self-attention (``attn1``) layers get a processor that asks the
:class:`AttentionRouter` for their key/value source, so view-guided
routing works exactly as with the tiny backend.

Sites are named ``(block, index)`` with block in {down, mid, up} and
index counting ``attn1`` layers within that block group in module order.
"""

from __future__ import annotations

import hashlib
from typing import Optional

import numpy as np

from ..core import ImageBuffer, Latent, ShapeError
from .schedule import NoiseSchedule


def _torch():
    try:
        import torch
    except ImportError as e:  # pragma: no cover - exercised only without torch
        from .backend import BackendError

        raise BackendError("pretrained backends need torch and diffusers (pip install 'artifact[pretrained]')") from e
    return torch


class _RouteState:
    def __init__(self):
        self.router = None
        self.t = 0


class RoutedSelfAttnProcessor:
    """Plain scaled-dot-product attention with router-chosen keys/values."""

    def __init__(self, site, state: _RouteState):
        self.site = site
        self.state = state

    def __call__(self, attn, hidden_states, encoder_hidden_states=None, attention_mask=None, temb=None, **kwargs):
        residual = hidden_states
        if getattr(attn, "spatial_norm", None) is not None:
            hidden_states = attn.spatial_norm(hidden_states, temb)
        input_ndim = hidden_states.ndim
        if input_ndim == 4:
            b, c, h, w = hidden_states.shape
            hidden_states = hidden_states.view(b, c, h * w).transpose(1, 2)
        if getattr(attn, "group_norm", None) is not None:
            hidden_states = attn.group_norm(hidden_states.transpose(1, 2)).transpose(1, 2)

        if encoder_hidden_states is None:
            kv = hidden_states
            if self.state.router is not None:
                kv = self.state.router.keys_values(self.site, self.state.t, hidden_states)
        else:
            kv = encoder_hidden_states
            if attn.norm_cross:
                kv = attn.norm_encoder_hidden_states(kv)

        q = attn.head_to_batch_dim(attn.to_q(hidden_states))
        k = attn.head_to_batch_dim(attn.to_k(kv))
        v = attn.head_to_batch_dim(attn.to_v(kv))
        probs = attn.get_attention_scores(q, k, attention_mask)
        out = attn.batch_to_head_dim(probs @ v)
        out = attn.to_out[1](attn.to_out[0](out))
        if input_ndim == 4:
            out = out.transpose(-1, -2).reshape(b, c, h, w)
        if attn.residual_connection:
            out = out + residual
        return out / attn.rescale_output_factor


def install_router_hooks(unet, state: _RouteState) -> list:
    """Replace every attn1 processor; returns the site names in module order."""
    procs, sites, counters = {}, [], {"down": 0, "mid": 0, "up": 0}
    for name in unet.attn_processors:
        block = name.split(".")[0].split("_")[0]  # down_blocks / mid_block / up_blocks
        if name.endswith("attn1.processor"):
            site = (block, counters[block])
            counters[block] += 1
            procs[name] = RoutedSelfAttnProcessor(site, state)
            sites.append(site)
        else:
            procs[name] = unet.attn_processors[name]
    unet.set_attn_processor(procs)
    return sites


def _fingerprint(*modules) -> str:
    h = hashlib.sha256()
    for m in modules:
        for k, v in sorted(m.state_dict().items()):
            h.update(k.encode())
            h.update(v.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()[:16]


class DiffusersAutoencoder:
    def __init__(self, vae):
        self.vae = vae
        self.scaling = float(getattr(vae.config, "scaling_factor", 0.18215))
        self.downsampling_factor = 2 ** (len(vae.config.block_out_channels) - 1)
        self.channels = int(vae.config.latent_channels)

    def latent_shape(self, height: int, width: int) -> tuple:
        f = self.downsampling_factor
        return (self.channels, height // f, width // f)

    def encode(self, img: ImageBuffer) -> Latent:
        torch = _torch()
        f = self.downsampling_factor
        if img.height % f or img.width % f:
            raise ShapeError(f"image {img.height}x{img.width} is not divisible by {f}")
        x = torch.from_numpy(img.values.transpose(2, 0, 1)[None].copy()).float() * 2 - 1
        with torch.no_grad():
            z = self.vae.encode(x).latent_dist.mean * self.scaling
        return Latent(z[0].double().numpy())

    def decode(self, z: Latent, source_id: str = "decoded") -> ImageBuffer:
        torch = _torch()
        with torch.no_grad():
            x = self.vae.decode(torch.from_numpy(z.values[None].copy()).float() / self.scaling).sample
        x = ((x[0].double().numpy().transpose(1, 2, 0) + 1) / 2).clip(0, 1)
        return ImageBuffer.from_array(x, source_id)


class DiffusersDenoiser:
    """ε-prediction through a UNet2DConditionModel; timestep t maps to unet step t - 1."""

    def __init__(self, unet, null_embedding, schedule: NoiseSchedule, fingerprint: str):
        self.unet = unet
        self.schedule = schedule
        self._null = np.asarray(null_embedding, dtype=np.float64)
        self.parameter_fingerprint = fingerprint
        self.channels = int(unet.config.in_channels)
        self._state = _RouteState()
        self.sites = install_router_hooks(unet, self._state)

    def null_conditioning(self) -> np.ndarray:
        return self._null

    def predict(self, z_t, t: int, cond=None, router=None) -> np.ndarray:
        torch = _torch()
        single = isinstance(z_t, Latent)
        z = z_t.values[None] if single else np.asarray(z_t, dtype=np.float64)
        if z.ndim != 4 or z.shape[1] != self.channels:
            raise ShapeError(f"denoiser expects (B, {self.channels}, h, w), got {z.shape}")
        if not 1 <= t <= self.schedule.T:
            raise ValueError(f"timestep {t} outside [1, {self.schedule.T}]")
        cond = self._null if cond is None else np.asarray(cond, dtype=np.float64)
        enc = torch.from_numpy(np.broadcast_to(cond, (z.shape[0],) + cond.shape[-2:]).copy()).float()
        self._state.router, self._state.t = router, t
        try:
            with torch.no_grad():
                eps = self.unet(torch.from_numpy(np.array(z)).float(), t - 1, encoder_hidden_states=enc).sample
        finally:
            self._state.router = None
        out = eps.double().numpy()
        return out[0] if single else out


def schedule_from_alphas_cumprod(alphas_cumprod) -> NoiseSchedule:
    ab = np.asarray(alphas_cumprod, dtype=np.float64)
    alphas = ab / np.concatenate([[1.0], ab[:-1]])
    return NoiseSchedule(alphas, "pretrained")


def backend_from_modules(vae, unet, alphas_cumprod, null_embedding, spec):
    from .backend import Backend

    vae.eval()
    unet.eval()
    ae = DiffusersAutoencoder(vae)
    if unet.config.in_channels != ae.channels:
        from .backend import BackendError

        raise BackendError(f"unet expects {unet.config.in_channels} channels, vae gives {ae.channels}")
    sched = schedule_from_alphas_cumprod(alphas_cumprod)
    den = DiffusersDenoiser(unet, null_embedding, sched, _fingerprint(vae, unet))
    return Backend(ae, den, sched, spec)


def load_diffusers_backend(source: str, spec, cache_dir: Optional[str] = None):
    """Load vae/unet/scheduler/text encoder from a diffusers checkpoint dir or hub id."""
    from .backend import BackendError

    torch = _torch()
    try:
        from diffusers import AutoencoderKL, DDIMScheduler, UNet2DConditionModel
        from transformers import CLIPTextModel, CLIPTokenizer
    except ImportError as e:
        raise BackendError("pretrained backends need diffusers and transformers installed") from e
    kw = {"cache_dir": cache_dir} if cache_dir else {}
    try:
        vae = AutoencoderKL.from_pretrained(source, subfolder="vae", **kw)
        unet = UNet2DConditionModel.from_pretrained(source, subfolder="unet", **kw)
        sched = DDIMScheduler.from_pretrained(source, subfolder="scheduler", **kw)
        tok = CLIPTokenizer.from_pretrained(source, subfolder="tokenizer", **kw)
        te = CLIPTextModel.from_pretrained(source, subfolder="text_encoder", **kw)
    except (OSError, ValueError) as e:
        raise BackendError(
            f"could not load pretrained weights from {source!r} ({e}); point weights_path at a "
            "diffusers checkpoint or set WMBENCH_WEIGHTS_DIR to a cache that holds it"
        ) from e
    with torch.no_grad():
        ids = tok([""], padding="max_length", max_length=tok.model_max_length, return_tensors="pt").input_ids
        null = te(ids)[0][0].double().numpy()
    return backend_from_modules(vae, unet, sched.alphas_cumprod.numpy(), null, spec)
