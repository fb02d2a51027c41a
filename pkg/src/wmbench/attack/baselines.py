"""Comparison attacks: pixel-space distortions, crops and diffusion regeneration."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter
from skimage.transform import resize

from ..colorspace import lab_to_rgb, rgb_to_lab
from ..core import ImageBuffer, RngStream, image_stream
from ..diffusion.schedule import forward_noise

log = logging.getLogger(__name__)

SIGNAL_ATTACKS = ("brightness", "contrast", "jpeg", "gaussian_blur", "gaussian_noise", "center_crop", "random_crop")
DIFFUSION_ATTACKS = ("regen", "rinse", "raven")
ATTACK_NAMES = SIGNAL_ATTACKS + DIFFUSION_ATTACKS + ("external",)

DEFAULT_PARAMS = {
    "brightness": {"factor": 0.5},
    "contrast": {"factor": 0.5},
    "jpeg": {"quality": 25},
    "gaussian_blur": {"sigma": 1.0},
    "gaussian_noise": {"sigma": 0.05},
    "center_crop": {"ratio": 0.75},
    "random_crop": {"ratio": 0.75},
    "regen": {"strength": 0.15},
    "rinse": {"strength": 0.15, "passes": 2},
    "raven": {},
    "external": {},
}
REQUIRED = {
    "brightness": ("factor",), "contrast": ("factor",), "jpeg": ("quality",), "gaussian_blur": ("sigma",),
    "gaussian_noise": ("sigma",), "center_crop": ("ratio",), "random_crop": ("ratio",),
    "regen": ("strength",), "rinse": ("strength", "passes"), "raven": (), "external": ("command",),
}


class UnknownAttack(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    name: str
    params: dict = field(default_factory=dict)
    seed_key: str = ""

    def __post_init__(self):
        if self.name not in ATTACK_NAMES:
            raise UnknownAttack(f"unknown attack {self.name!r}; expected one of {ATTACK_NAMES}")
        missing = [p for p in REQUIRED[self.name] if p not in self.params]
        if missing:
            raise ValueError(f"attack {self.name!r} is missing params {missing}")

    @classmethod
    def default(cls, name: str, **overrides) -> "AttackSpec":
        if name not in ATTACK_NAMES:
            raise UnknownAttack(f"unknown attack {name!r}; expected one of {ATTACK_NAMES}")
        return cls(name, {**DEFAULT_PARAMS[name], **overrides}, seed_key=name)

    @property
    def label(self) -> str:
        return self.seed_key or self.name


# --------------------------------------------------------------------------
# pixel-space


def _jpeg(x: np.ndarray, quality: int) -> np.ndarray:
    buf = io.BytesIO()
    Image.fromarray(np.round(np.clip(x, 0, 1) * 255).astype(np.uint8)).save(
        buf, format="JPEG", quality=int(quality), subsampling=2, optimize=False, progressive=False
    )
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64) / 255.0


def _crop_resize(x: np.ndarray, ratio: float, top: int, left: int) -> np.ndarray:
    h, w = x.shape[:2]
    ch, cw = max(1, int(round(h * ratio))), max(1, int(round(w * ratio)))
    if (ch, cw) == (h, w):
        return x
    patch = x[top: top + ch, left: left + cw]
    return resize(patch, (h, w, 3), order=1, mode="edge", anti_aliasing=False)


def apply_signal_attack(x_w: ImageBuffer, spec: AttackSpec, rng: Optional[RngStream] = None) -> ImageBuffer:
    p, x = spec.params, x_w.values
    if spec.name == "brightness":
        if p["factor"] == 1.0:
            return x_w
        lab = rgb_to_lab(x)
        lab[..., 0] = lab[..., 0] * p["factor"]
        out = lab_to_rgb(lab)
    elif spec.name == "contrast":
        mu = x.mean(axis=(0, 1), keepdims=True)
        out = mu + p["factor"] * (x - mu)
    elif spec.name == "jpeg":
        out = _jpeg(x, p["quality"])
    elif spec.name == "gaussian_blur":
        s = float(p["sigma"])
        if s == 0:
            return x_w
        # kernel of 2*ceil(3 sigma)+1 taps
        radius = int(math.ceil(3 * s))
        out = np.stack([gaussian_filter(x[..., c], s, mode="reflect", radius=radius) for c in range(3)], axis=-1)
    elif spec.name == "gaussian_noise":
        s = float(p["sigma"])
        if s == 0:
            return x_w
        if rng is None:
            raise ValueError("gaussian_noise needs an rng stream")
        out = x + s * rng.normal(x.shape)
    elif spec.name == "center_crop":
        h, w = x.shape[:2]
        ch, cw = int(round(h * p["ratio"])), int(round(w * p["ratio"]))
        out = _crop_resize(x, p["ratio"], (h - ch) // 2, (w - cw) // 2)
    elif spec.name == "random_crop":
        h, w = x.shape[:2]
        ch, cw = int(round(h * p["ratio"])), int(round(w * p["ratio"]))
        if rng is None:
            raise ValueError("random_crop needs an rng stream")
        top, left = int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1))
        out = _crop_resize(x, p["ratio"], top, left)
    else:
        raise UnknownAttack(f"{spec.name!r} is not a signal attack")
    return ImageBuffer.from_array(out, x_w.source_id)


# --------------------------------------------------------------------------
# diffusion regeneration


def regen(x_w: ImageBuffer, strength: float, backend, seed: int = 0, image_id: Optional[str] = None,
          stage: str = "regen") -> ImageBuffer:
    """Encode, noise to ``floor(strength*T)``, DDIM back with plain attention, decode."""
    image_id = image_id or x_w.source_id
    z = backend.encode(x_w)
    z_tau, _ = forward_noise(z, strength, backend.schedule, image_stream(seed, image_id, stage))
    z0 = backend.sample(z_tau, conditioning=backend.null_conditioning())
    return backend.decode(z0, x_w.source_id)


def rinse(x_w: ImageBuffer, strength: float, passes: int, backend, seed: int = 0,
          image_id: Optional[str] = None) -> ImageBuffer:
    """``passes`` chained regenerations; pass 0 shares the Regen stream so passes=1 equals Regen."""
    if passes < 1:
        raise ValueError("rinse needs passes >= 1")
    image_id = image_id or x_w.source_id
    x = x_w
    for k in range(passes):
        x = regen(x, strength, backend, seed, image_id, stage="regen" if k == 0 else f"regen.pass{k}")
    return x


def apply_attack(x_w: ImageBuffer, spec: AttackSpec, backend=None, seed: int = 0,
                 image_id: Optional[str] = None, raven_config=None, return_trace: bool = False):
    """Dispatch any attack; diffusion attacks need ``backend``."""
    image_id = image_id or x_w.source_id
    trace = None
    if spec.name in SIGNAL_ATTACKS:
        out = apply_signal_attack(x_w, spec, image_stream(seed, image_id, f"attack:{spec.label}"))
    elif spec.name in DIFFUSION_ATTACKS:
        if backend is None:
            raise ValueError(f"attack {spec.name!r} needs a diffusion backend")
        if spec.name == "regen":
            out = regen(x_w, spec.params["strength"], backend, seed, image_id)
        elif spec.name == "rinse":
            out = rinse(x_w, spec.params["strength"], int(spec.params["passes"]), backend, seed, image_id)
        else:
            from .raven import RavenConfig, run_raven

            cfg = raven_config or RavenConfig(seed=seed, **spec.params)
            out, trace = run_raven(x_w, cfg, backend, image_id)
    else:
        from ..watermarks.external import ExternalAdapter

        params = {k: v for k, v in spec.params.items() if k != "command"}
        out = ExternalAdapter(spec.params["command"]).attack(x_w, params)
        if out.shape != x_w.shape:
            raise ValueError(f"external attack changed dims {x_w.shape} -> {out.shape}")
    return (out, trace) if return_trace else out
