"""View-synthesis watermark removal.

Pipeline for one image: encode, partially noise to timestep floor(s*T),
translate the noisy latent as if the camera moved, denoise the untouched
latent (reference path) and the translated one (attack path) together
with the attack path's self-attention reading keys/values from the
reference path, decode the attack path, then pull colour and luminance
statistics back toward the input in CIELAB.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ..core import ImageBuffer, Latent, ShapeError, check_divisible, image_stream
from ..diffusion.attention import AttentionRouter
from ..diffusion.backend import Backend, check_latent_shape
from ..diffusion.ddim import DiffusionError, sample_batch
from ..diffusion.schedule import forward_noise, strength_to_timestep
from .transfer import color_transfer, contrast_transfer

log = logging.getLogger(__name__)

BOUNDARIES = ("edge_replicate", "reflect", "wrap")


# --------------------------------------------------------------------------
# latent viewpoint modulation


@dataclass(frozen=True)
class ViewTransform:
    """Global camera translation.

    ``delta_px = (dx, dy)`` follows ``C(i, j) = (i + dx, j + dy)``: the first
    component offsets the row index, the second the column index. Output
    site (i, j) fetches from the shifted source location.
    """

    delta_px: Tuple[float, float] = (0.0, 0.0)
    factor: int = 1
    boundary: str = "edge_replicate"
    kind: str = "global_translation"

    def __post_init__(self):
        if self.kind != "global_translation":
            raise ValueError(f"unsupported view transform {self.kind!r}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if not all(math.isfinite(d) for d in self.delta_px):
            raise ValueError("translation must be finite")
        if self.factor < 1:
            raise ValueError("factor must be >= 1")

    @property
    def delta_latent(self) -> Tuple[float, float]:
        return (self.delta_px[0] / self.factor, self.delta_px[1] / self.factor)

    @classmethod
    def from_latent(cls, di: float, dj: float, boundary: str = "edge_replicate") -> "ViewTransform":
        return cls((float(di), float(dj)), 1, boundary)


def _resolve(idx: np.ndarray, n: int, boundary: str) -> np.ndarray:
    if boundary == "wrap":
        return np.mod(idx, n)
    if boundary == "edge_replicate" or n == 1:
        return np.clip(idx, 0, n - 1)
    period = 2 * (n - 1)
    k = np.mod(idx, period)
    return np.where(k >= n, period - k, k)


def _taps(n: int, shift: float, boundary: str):
    base = math.floor(shift)
    frac = shift - base
    i0 = _resolve(np.arange(n) + base, n, boundary)
    i1 = _resolve(np.arange(n) + base + 1, n, boundary)
    return i0, i1, frac


def warp_array(a: np.ndarray, di: float, dj: float, boundary: str = "edge_replicate") -> np.ndarray:
    """Bilinear translation over the last two axes: ``out[..., i, j] = a[..., i + di, j + dj]``."""
    h, w = a.shape[-2:]
    r0, r1, fr = _taps(h, di, boundary)
    c0, c1, fc = _taps(w, dj, boundary)
    rows = a[..., r0, :] if fr == 0 else (1 - fr) * a[..., r0, :] + fr * a[..., r1, :]
    return rows[..., c0] if fc == 0 else (1 - fc) * rows[..., c0] + fc * rows[..., c1]


def warp_latent(z: Latent, view: ViewTransform) -> Latent:
    di, dj = view.delta_latent
    return Latent(warp_array(z.values, di, dj, view.boundary), z.timestep)


# --------------------------------------------------------------------------
# configuration and tracing


@dataclass(frozen=True)
class RavenConfig:
    strength: float = 0.15
    steps: int = 50
    guidance: float = 2.5
    translation_px: Tuple[float, float] = (24.0, 32.0)
    sign_mode: str = "shared"
    noising_mode: str = "stochastic"
    boundary: str = "edge_replicate"
    color_transfer: bool = True
    contrast_transfer: bool = True
    view_guided: bool = True
    seed: int = 0
    fixed_delta_px: Optional[Tuple[float, float]] = None
    # translation_px is quoted at this image side; None means absolute pixels
    reference_size: Optional[int] = 512

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength must lie in [0, 1], got {self.strength}")
        lo, hi = self.translation_px
        if not 0 < lo <= hi:
            raise ValueError("translation interval must satisfy 0 < low <= high so a shift is always applied")
        if self.sign_mode not in ("shared", "independent"):
            raise ValueError("sign_mode must be 'shared' or 'independent'")
        if self.noising_mode not in ("stochastic", "ddim-inversion"):
            raise ValueError(f"unknown noising_mode {self.noising_mode!r}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.reference_size is not None and self.reference_size < 1:
            raise ValueError("reference_size must be positive or None")


def translation_bounds(cfg: RavenConfig, image_side: Optional[int] = None) -> Tuple[int, int]:
    """Integer magnitude range, rescaled from ``reference_size`` to ``image_side``."""
    lo, hi = cfg.translation_px
    if cfg.reference_size is not None and image_side is not None:
        lo, hi = lo * image_side / cfg.reference_size, hi * image_side / cfg.reference_size
    ilo, ihi = int(math.ceil(lo - 1e-9)), int(math.floor(hi + 1e-9))
    if ilo > ihi:
        ilo = ihi = max(1, int(round(lo)))
    return max(1, ilo), max(1, ihi)


def sample_view(cfg: RavenConfig, rng, factor: int, image_side: Optional[int] = None) -> ViewTransform:
    """Diagonal translation: integer pixel magnitudes per axis from the configured interval."""
    if cfg.fixed_delta_px is not None:
        return ViewTransform(tuple(float(d) for d in cfg.fixed_delta_px), factor, cfg.boundary)
    lo, hi = translation_bounds(cfg, image_side)
    mags = rng.integers(lo, hi + 1, size=2)
    if cfg.sign_mode == "shared":
        signs = np.repeat(1 if rng.uniform() < 0.5 else -1, 2)
    else:
        signs = np.where(rng.uniform(size=2) < 0.5, 1, -1)
    delta = tuple(float(m * s) for m, s in zip(mags, signs))
    return ViewTransform(delta, factor, cfg.boundary)


@dataclass
class AttackTrace:
    image_id: str
    tau: int
    delta_px: Tuple[float, float]
    delta_latent: Tuple[float, float]
    noising_mode: str
    boundary: str
    seed: int
    streams: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)
    routed_sites: list = field(default_factory=list)
    transfer_stats: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=list)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path


# --------------------------------------------------------------------------


def _noise(z: Latent, cfg: RavenConfig, backend: Backend, image_id: str, trace_streams: dict) -> Latent:
    if cfg.noising_mode == "stochastic":
        key = f"image:{image_id}:stage:noise"
        trace_streams["noise"] = key
        z_tau, _ = forward_noise(z, cfg.strength, backend.schedule, image_stream(cfg.seed, image_id, "noise"))
        return z_tau
    tau = strength_to_timestep(cfg.strength, backend.schedule.T)
    if tau == 0:
        return z.tagged(0)
    return backend.invert(z, cfg.steps, target=tau, conditioning=backend.null_conditioning(), guidance=cfg.guidance)


def run_raven(x_w: ImageBuffer, cfg: RavenConfig, backend: Backend, image_id: Optional[str] = None):
    """Attack one watermarked image; returns ``(x_tilde, trace)``."""
    t_start = time.perf_counter()
    image_id = image_id or x_w.source_id
    check_divisible(x_w, backend.factor)
    streams: dict = {}
    hashes: dict = {"input": x_w.digest()}

    z = backend.encode(x_w)
    check_latent_shape(backend, x_w, z)
    hashes["z"] = z.digest()
    try:
        z_tau = _noise(z, cfg, backend, image_id, streams)
    except DiffusionError as e:
        raise DiffusionError(f"stage 'partial_inversion': {e}") from e
    hashes["z_tau"] = z_tau.digest()

    streams["view"] = f"image:{image_id}:stage:view"
    view = sample_view(cfg, image_stream(cfg.seed, image_id, "view"), backend.factor,
                       min(x_w.height, x_w.width))
    z_tilde = warp_latent(z_tau, view)
    hashes["z_tilde_tau"] = z_tilde.digest()

    router = (
        AttentionRouter("view_guided", pairs={1: 0}) if cfg.view_guided else AttentionRouter("standard")
    )
    if z_tau.timestep == 0:
        z0_ref, z0_att = z_tau.values, z_tilde.values
    else:
        try:
            out = sample_batch(
                backend.denoiser,
                backend.schedule,
                np.stack([z_tau.values, z_tilde.values]),
                z_tau.timestep,
                cfg.steps,
                backend.null_conditioning(),
                cfg.guidance,
                router,
            )
        except DiffusionError as e:
            raise DiffusionError(f"stage 'dual_path_denoise': {e}") from e
        z0_ref, z0_att = out[0], out[1]
    hashes["z0_reference"] = Latent(z0_ref, 0).digest()
    hashes["z0_attack"] = Latent(z0_att, 0).digest()

    x_opt = backend.decode(Latent(z0_att, 0), image_id)
    hashes["x_opt"] = x_opt.digest()
    stats: dict = {}
    x = x_opt
    if cfg.color_transfer:
        x = color_transfer(x, x_w, stats)
    if cfg.contrast_transfer:
        x = contrast_transfer(x, x_w, stats)
    x_tilde = ImageBuffer(x.values, source_id=image_id)
    hashes["output"] = x_tilde.digest()

    trace = AttackTrace(
        image_id=image_id,
        tau=int(z_tau.timestep),
        delta_px=tuple(view.delta_px),
        delta_latent=tuple(view.delta_latent),
        noising_mode=cfg.noising_mode,
        boundary=cfg.boundary,
        seed=cfg.seed,
        streams=streams,
        hashes=hashes,
        routed_sites=sorted(f"{b}.{i}" for b, i in router.sites_seen()),
        transfer_stats=stats,
        config=asdict(cfg),
        seconds=time.perf_counter() - t_start,
    )
    log.debug("raven %s tau=%d delta=%s", image_id, trace.tau, view.delta_px)
    return x_tilde, trace
