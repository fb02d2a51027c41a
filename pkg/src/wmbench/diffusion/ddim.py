from __future__ import annotations

import numpy as np

from ..core import Latent


class DiffusionError(RuntimeError):
    pass


def timestep_grid(T: int, steps: int) -> list[int]:
    """Ascending DDIM grid of ``steps`` timesteps in [1, T]; equals 1..T when steps == T."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    steps = min(steps, T)
    return sorted({int(round(k * T / steps)) for k in range(1, steps + 1)})


def sampling_path(T: int, steps: int, start: int) -> list[int]:
    """Descending timesteps visited when denoising from ``start`` to 0."""
    below = [g for g in reversed(timestep_grid(T, steps)) if g < start]
    return ([start] + below + [0]) if start > 0 else [0]


def _guided_eps(denoiser, z, t, cond, guidance, router):
    null = denoiser.null_conditioning()
    eps_u = denoiser.predict(z, t, null, router)
    if cond is None or guidance == 1.0 or np.array_equal(np.asarray(cond), null):
        return eps_u
    eps_c = denoiser.predict(z, t, cond, router)
    return eps_u + guidance * (eps_c - eps_u)


def _check(z, stage, t):
    if not np.all(np.isfinite(z)):
        raise DiffusionError(f"non-finite latent during {stage} at timestep {t}")


def ddim_step(z, eps, ab_from, ab_to):
    x0 = (z - np.sqrt(1.0 - ab_from) * eps) / np.sqrt(ab_from)
    return np.sqrt(ab_to) * x0 + np.sqrt(1.0 - ab_to) * eps


def sample_batch(denoiser, schedule, z, start: int, steps: int, cond=None, guidance=1.0, router=None):
    """Deterministic DDIM denoising of a ``(B, C, h, w)`` batch from ``start`` to 0."""
    z = np.array(z, dtype=np.float64, copy=True)
    path = sampling_path(schedule.T, steps, start)
    for t, t_prev in zip(path[:-1], path[1:]):
        eps = _guided_eps(denoiser, z, t, cond, guidance, router)
        z = ddim_step(z, eps, schedule.alpha_bar[t], schedule.alpha_bar[t_prev])
        _check(z, "ddim_sample", t)
    return z


def ddim_sample(denoiser, schedule, z_tau: Latent, steps: int, conditioning=None, guidance: float = 1.0, router=None) -> Latent:
    if z_tau.timestep is None:
        raise DiffusionError("ddim_sample needs a latent tagged with its timestep")
    if z_tau.timestep == 0:
        return z_tau
    out = sample_batch(denoiser, schedule, z_tau.values[None], z_tau.timestep, steps, conditioning, guidance, router)
    return Latent(out[0], 0)


def ddim_invert(
    denoiser,
    schedule,
    z0: Latent,
    steps: int,
    conditioning=None,
    guidance: float = 1.0,
    target: int | None = None,
    refine_iters: int = 1,
) -> Latent:
    """Run the DDIM ODE backwards from the clean latent up to ``target`` (default T).

    Each step first predicts noise at the destination timestep from the
    current latent (plain DDIM inversion), then re-evaluates it at the
    proposed destination latent ``refine_iters`` times. The fixed-point
    correction keeps invert-then-sample close to the identity when the
    denoiser is stiff at low noise; ``refine_iters=0`` gives plain inversion.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    target = schedule.T if target is None else int(target)
    if not 0 <= target <= schedule.T:
        raise ValueError(f"target timestep {target} outside [0, {schedule.T}]")
    path = list(reversed(sampling_path(schedule.T, steps, target)))
    z = z0.values[None].copy()
    for t_from, t_to in zip(path[:-1], path[1:]):
        ab_from, ab_to = schedule.alpha_bar[t_from], schedule.alpha_bar[t_to]
        eps = _guided_eps(denoiser, z, t_to, conditioning, guidance, None)
        z_next = ddim_step(z, eps, ab_from, ab_to)
        for _ in range(refine_iters):
            eps = _guided_eps(denoiser, z_next, t_to, conditioning, guidance, None)
            z_next = ddim_step(z, eps, ab_from, ab_to)
        z = z_next
        _check(z, "ddim_invert", t_to)
    return Latent(z[0], target)
