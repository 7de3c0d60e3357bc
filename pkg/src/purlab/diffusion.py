"""Forward noising, deterministic reverse sampling, and the image-level
reconstruction and masked-editing pipelines built on the toy models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from purlab import tensor as T
from purlab.models import (AutoencoderParams, DenoiserParams, LATENT_SHAPE,
                           decode, denoiser_predict, encode)
from purlab.rng import SeedStream
from purlab.tensor import DiffTensor, ShapeError, no_tape

__all__ = ["NoiseSchedule", "SamplerConfig", "LdmModels", "make_schedule",
           "q_sample", "ddim_timesteps", "ddim_reverse", "generate",
           "reconstruct_ldm", "edit_image", "downsample_mask"]


@dataclass
class NoiseSchedule:
    """Per-step variances and their cumulative signal products.

    beta[t-1] is the variance added at step t (1-based); alpha_bar(t) is
    the product of (1-beta) up to t, with alpha_bar(0) = 1.
    """

    num_steps: int
    beta: np.ndarray
    alpha_bar_tail: np.ndarray  # alpha_bar at t=1..T

    def alpha_bar(self, t):
        t = np.asarray(t)
        out = np.where(t > 0, self.alpha_bar_tail[np.maximum(t, 1) - 1], 1.0)
        return float(out) if out.ndim == 0 else out


@dataclass
class SamplerConfig:
    """Deterministic reverse sampler settings (eta fixed at 0)."""

    steps: int = 20
    start_t: int = 100
    kind: str = "ddim"
    eta: float = 0.0

    def __post_init__(self):
        if self.kind != "ddim":
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.eta != 0.0:
            raise ValueError("only the deterministic eta=0 sampler is supported")
        if self.steps < 1:
            raise ValueError(f"sampler steps must be >= 1, got {self.steps}")


@dataclass
class LdmModels:
    """The trained pieces a whole-pipeline operation needs."""

    autoencoder: AutoencoderParams
    denoiser: DenoiserParams
    schedule: NoiseSchedule
    sampler_steps: int = 20


def make_schedule(num_steps: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Linear beta schedule with running-product alpha_bar."""
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got "
                         f"[{beta_min}, {beta_max}]")
    beta = np.linspace(beta_min, beta_max, num_steps)
    return NoiseSchedule(num_steps, beta, np.cumprod(1.0 - beta))


def q_sample(schedule: NoiseSchedule, z, t, eps) -> DiffTensor:
    """Closed-form forward marginal sqrt(ab_t) z + sqrt(1-ab_t) eps.

    t may be a scalar or per-sample array in [0, T]; differentiable in z.
    """
    z_t = z if isinstance(z, DiffTensor) else DiffTensor(z)
    t_arr = np.atleast_1d(np.asarray(t))
    if np.any(t_arr < 0) or np.any(t_arr > schedule.num_steps):
        raise ValueError(f"t out of range [0,{schedule.num_steps}]: {t_arr}")
    batched = z_t.data.ndim == len(LATENT_SHAPE) + 1
    eps_arr = eps.data if isinstance(eps, DiffTensor) else np.asarray(eps)
    if eps_arr.shape != z_t.data.shape:
        raise ShapeError(f"eps shape {eps_arr.shape} != z shape {z_t.data.shape}")

    ab = schedule.alpha_bar(t_arr)
    if not batched:
        return z_t * float(np.sqrt(ab[0])) + \
            DiffTensor(eps_arr * np.sqrt(1.0 - ab[0]))
    if t_arr.size == 1:
        ab = np.full(z_t.data.shape[0], ab[0])
    return T.scale_rows(z_t, np.sqrt(ab)) + \
        DiffTensor(eps_arr * np.sqrt(1.0 - ab)[:, None, None, None])


def ddim_timesteps(start_t: int, steps: int) -> list[int]:
    """Evenly spaced descending timesteps from start_t to 0, deduplicated."""
    raw = np.round(np.linspace(start_t, 0, steps + 1)).astype(int)
    out = [int(raw[0])]
    for v in raw[1:]:
        if int(v) != out[-1]:
            out.append(int(v))
    return out


def _check_params_finite(dn: DenoiserParams):
    for name, p in dn.params.items():
        if not np.isfinite(p.data).all():
            raise ValueError(f"denoiser parameter {name} contains NaN/inf")


def ddim_reverse(schedule: NoiseSchedule, dn: DenoiserParams, z_start,
                 config: SamplerConfig, grad_tail: int | None = None) -> DiffTensor:
    """Deterministic reverse recursion from start_t down to 0.

    With grad_tail=K, only the last K denoiser evaluations join the
    differentiation graph; earlier steps use frozen noise estimates so
    the chain stays affine (cheap, constant-memory backprop).
    """
    if config.start_t > schedule.num_steps:
        raise ValueError(f"start_t {config.start_t} exceeds schedule "
                         f"T={schedule.num_steps}")
    _check_params_finite(dn)
    z = z_start if isinstance(z_start, DiffTensor) else DiffTensor(z_start)
    if config.start_t == 0:
        return z
    taus = ddim_timesteps(config.start_t, config.steps)
    num_transitions = len(taus) - 1
    if grad_tail is not None and grad_tail > num_transitions:
        raise ValueError(f"grad_tail {grad_tail} exceeds the {num_transitions} "
                         f"sampler transitions")
    for k in range(num_transitions):
        t_cur, t_next = taus[k], taus[k + 1]
        frozen = grad_tail is not None and k < num_transitions - grad_tail
        if frozen:
            with no_tape():
                eps_hat = denoiser_predict(dn, z.detach(), t_cur,
                                           schedule.num_steps).detach()
        else:
            eps_hat = denoiser_predict(dn, z, t_cur, schedule.num_steps)
        ab_cur = schedule.alpha_bar(t_cur)
        ab_next = schedule.alpha_bar(t_next)
        # x0_hat = (z - sqrt(1-ab) eps) / sqrt(ab); z' = sqrt(ab') x0_hat
        #          + sqrt(1-ab') eps
        c_z = float(np.sqrt(ab_next / ab_cur))
        c_eps = float(np.sqrt(1.0 - ab_next) -
                      np.sqrt(ab_next / ab_cur) * np.sqrt(1.0 - ab_cur))
        z = z * c_z + eps_hat * c_eps
    return z


def generate(models: LdmModels, count: int, rng: SeedStream) -> np.ndarray:
    """Decode DDIM samples drawn from the latent prior at t=T."""
    noise = rng.stream("prior").normal((count,) + LATENT_SHAPE)
    cfg = SamplerConfig(steps=models.sampler_steps,
                        start_t=models.schedule.num_steps)
    z0 = ddim_reverse(models.schedule, models.denoiser, noise, cfg)
    return decode(models.autoencoder, z0).data


def reconstruct_ldm(models: LdmModels, x, strength: float,
                    rng: SeedStream) -> DiffTensor:
    """Round trip encoder -> partial noising -> reverse -> decoder.

    strength in (0,1] sets the noising depth start_t = round(strength*T).
    """
    if not 0.0 < strength <= 1.0:
        raise ValueError(f"strength must lie in (0,1], got {strength}")
    start_t = max(1, int(round(strength * models.schedule.num_steps)))
    z = encode(models.autoencoder, x)
    eps = rng.stream("reconstruct-noise").normal(z.data.shape)
    z_t = q_sample(models.schedule, z, start_t, eps)
    cfg = SamplerConfig(steps=models.sampler_steps, start_t=start_t)
    z0 = ddim_reverse(models.schedule, models.denoiser, z_t, cfg)
    return decode(models.autoencoder, z0)


def downsample_mask(mask: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 4x downsample of a 32x32 pixel mask to 8x8."""
    if mask.shape != (32, 32):
        raise ShapeError(f"mask must be 32x32, got {mask.shape}")
    return mask[::4, ::4].astype(np.float64)


def edit_image(models: LdmModels, x, mask: np.ndarray, strength: float,
               rng: SeedStream) -> np.ndarray:
    """Masked regeneration: mask=1 marks the preserved region.

    The kept region is re-imposed from the partially-noised source
    latent at every reverse step; the complement starts from prior
    noise and is regenerated, so with an all-zero mask and strength 1
    the output is independent of x.
    """
    if not 0.0 < strength <= 1.0:
        raise ValueError(f"strength must lie in (0,1], got {strength}")
    x_arr = x.data if isinstance(x, DiffTensor) else np.asarray(x)
    single = x_arr.ndim == 3
    if single:
        x_arr = x_arr[None]
    m = downsample_mask(mask)[None, None, :, :]
    start_t = max(1, int(round(strength * models.schedule.num_steps)))
    schedule = models.schedule

    z_src = encode(models.autoencoder, x_arr).data
    noise_stream = rng.stream("edit-noise")
    prior = noise_stream.stream("prior").normal(z_src.shape)
    taus = ddim_timesteps(start_t, models.sampler_steps)

    # regenerated region starts from the zero-mean marginal at start_t
    z = np.sqrt(1.0 - schedule.alpha_bar(start_t)) * prior
    for k, t_cur in enumerate(taus):
        eps_k = noise_stream.stream(f"keep:{k}").normal(z_src.shape)
        z_keep = q_sample(schedule, z_src, t_cur, eps_k).data
        z = m * z_keep + (1.0 - m) * z
        if t_cur == 0:
            break
        t_next = taus[k + 1]
        with no_tape():
            eps_hat = denoiser_predict(models.denoiser, z, t_cur,
                                       schedule.num_steps).data
        ab_cur, ab_next = schedule.alpha_bar(t_cur), schedule.alpha_bar(t_next)
        c_z = np.sqrt(ab_next / ab_cur)
        c_eps = np.sqrt(1.0 - ab_next) - c_z * np.sqrt(1.0 - ab_cur)
        z = c_z * z + c_eps * eps_hat
    out = decode(models.autoencoder, z).data
    return out[0] if single else out
