from ..diffusion.attention import view_attention
from .baselines import AttackSpec, apply_attack, apply_signal_attack, regen, rinse
from .raven import (
    AttackTrace,
    RavenConfig,
    ViewTransform,
    run_raven,
    sample_view,
    warp_array,
    warp_latent,
)
from .transfer import color_transfer, contrast_transfer, match_luminance

__all__ = [
    "AttackSpec",
    "AttackTrace",
    "RavenConfig",
    "apply_attack",
    "apply_signal_attack",
    "ViewTransform",
    "color_transfer",
    "contrast_transfer",
    "match_luminance",
    "regen",
    "rinse",
    "run_raven",
    "sample_view",
    "view_attention",
    "warp_array",
    "warp_latent",
]
