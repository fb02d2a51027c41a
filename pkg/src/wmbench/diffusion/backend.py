"""Backend loading and the handle bundle every attack and scheme consumes."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..core import ImageBuffer, Latent
from . import ddim
from .schedule import NoiseSchedule

WEIGHTS_ENV = "WMBENCH_WEIGHTS_DIR"
NOISING_MODES = ("stochastic", "ddim-inversion")


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class BackendSpec:
    name: str = "tiny"
    weights_path: Optional[str] = None
    steps: int = 50
    guidance: float = 2.5
    noising_mode: str = "stochastic"
    inversion_refine: int = 1

    def __post_init__(self):
        if self.noising_mode not in NOISING_MODES:
            raise ValueError(f"noising_mode must be one of {NOISING_MODES}, got {self.noising_mode!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


@dataclass
class Backend:
    """Autoencoder, denoiser and schedule loaded from one :class:`BackendSpec`.

    Unpacks as ``ae, denoiser, schedule = backend``.
    """

    autoencoder: object
    denoiser: object
    schedule: NoiseSchedule
    spec: BackendSpec = field(default_factory=BackendSpec)

    def __iter__(self):
        return iter((self.autoencoder, self.denoiser, self.schedule))

    @property
    def factor(self) -> int:
        return self.autoencoder.downsampling_factor

    @property
    def fingerprint(self) -> str:
        return self.denoiser.parameter_fingerprint

    def null_conditioning(self):
        return self.denoiser.null_conditioning()

    def encode(self, img: ImageBuffer) -> Latent:
        return self.autoencoder.encode(img)

    def decode(self, z: Latent, source_id: str = "decoded") -> ImageBuffer:
        return self.autoencoder.decode(z, source_id)

    def invert(self, z0: Latent, steps: Optional[int] = None, target: Optional[int] = None,
               conditioning=None, guidance: Optional[float] = None) -> Latent:
        return ddim.ddim_invert(
            self.denoiser, self.schedule, z0,
            steps or self.spec.steps, conditioning,
            self.spec.guidance if guidance is None else guidance, target,
            refine_iters=self.spec.inversion_refine,
        )

    def sample(self, z_tau: Latent, steps: Optional[int] = None, conditioning=None,
               guidance: Optional[float] = None, router=None) -> Latent:
        return ddim.ddim_sample(
            self.denoiser, self.schedule, z_tau,
            steps or self.spec.steps, conditioning,
            self.spec.guidance if guidance is None else guidance, router,
        )

    def manifest(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "fingerprint": self.fingerprint,
            "schedule_hash": self.schedule.digest(),
            "noising_mode": self.spec.noising_mode,
            "T": self.schedule.T,
            "factor": self.factor,
        }


_TINY_CACHE: dict = {}


def load_backend(spec: BackendSpec | str | dict = "tiny") -> Backend:
    """Load ``"tiny"`` or a ``"diffusers:<model dir or id>"`` adapter."""
    if isinstance(spec, str):
        spec = BackendSpec(name=spec)
    elif isinstance(spec, dict):
        spec = BackendSpec(**spec)
    if spec.name == "tiny":
        from .tiny import load_tiny

        key = spec.weights_path
        if key not in _TINY_CACHE:
            try:
                _TINY_CACHE[key] = load_tiny(spec.weights_path)
            except FileNotFoundError as e:
                raise BackendError(str(e)) from e
        ae, den, sched = _TINY_CACHE[key]
        return Backend(ae, den, sched, spec)
    if spec.name.startswith("diffusers:"):
        from .pretrained import load_diffusers_backend

        source = spec.weights_path or spec.name.split(":", 1)[1]
        cache = os.environ.get(WEIGHTS_ENV)
        return load_diffusers_backend(source, spec, cache_dir=cache)
    raise BackendError(f"unknown backend {spec.name!r}; expected 'tiny' or 'diffusers:<model>'")


def check_latent_shape(backend: Backend, img: ImageBuffer, z: Latent) -> None:
    f = backend.factor
    if z.shape[1:] != (img.height // f, img.width // f):
        raise BackendError(
            f"latent spatial dims {z.shape[1:]} do not match image {img.height}x{img.width} / {f}"
        )


def as_batch(*latents: Latent) -> np.ndarray:
    return np.stack([z.values for z in latents])
