from .attention import AttentionRouter, view_attention
from .backend import Backend, BackendError, BackendSpec, load_backend
from .ddim import DiffusionError, ddim_invert, ddim_sample, timestep_grid
from .schedule import NoiseSchedule, forward_noise, strength_to_timestep

__all__ = [
    "AttentionRouter",
    "Backend",
    "BackendError",
    "BackendSpec",
    "DiffusionError",
    "NoiseSchedule",
    "ddim_invert",
    "ddim_sample",
    "forward_noise",
    "load_backend",
    "strength_to_timestep",
    "timestep_grid",
    "view_attention",
]
