"""Protection perturbations: encoder attack, whole-pipeline diffusion
attack, style-cloaking with a perceptual budget, and the adaptive
variant with a reconstruction-consistency regularizer.

All attacks optimize a per-image perturbation delta, project onto the
declared budget ball after every step, and clip pixels to [-1,1]; the
result records the worst constraint violation observed (exactly 0.0
for a correct run).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from purlab import tensor as T
from purlab.diffusion import (LdmModels, SamplerConfig, ddim_reverse,
                              ddim_timesteps, q_sample)
from purlab.metrics import lpips_pair
from purlab.models import (AutoencoderParams, FeatureNetParams, decode,
                           encode, validate_image)
from purlab.optim import OptimizerState
from purlab.rng import SeedStream
from purlab.styles import StyleSample, style_transfer_proxy
from purlab.tensor import DiffTensor, Tape, no_tape

__all__ = ["AttackConfig", "AttackResult", "encoder_attack",
           "diffusion_attack", "glaze_protect", "adaptive_glaze_protect",
           "orthogonal_step"]

GRAY_TARGET = np.zeros((3, 32, 32))


@dataclass
class AttackConfig:
    budget_kind: str                    # linf | l2 | lpips
    budget: float
    steps: int
    lr: float
    optimizer: str = "pgd"              # pgd | adam
    lpips_weight: float = 30.0          # hinge weight for the lpips budget
    consistency_weight: float = 0.0     # adaptive regularizer weight
    target: np.ndarray | None = None
    target_style: int | None = None
    grad_tail: int = 5                  # sampler steps differentiated through
    strength: float = 0.6
    seed: int = 0
    opgd: str = "off"                   # off | protect_primary | consistency_primary

    def __post_init__(self):
        if self.budget_kind not in ("linf", "l2", "lpips"):
            raise ValueError(f"budget_kind must be linf|l2|lpips, "
                             f"got {self.budget_kind!r}")
        if self.budget < 0 or self.lr < 0 or self.steps < 0:
            raise ValueError("budget, lr and steps must be non-negative")
        if self.optimizer not in ("pgd", "adam"):
            raise ValueError(f"optimizer must be pgd or adam, got "
                             f"{self.optimizer!r}")
        if self.opgd not in ("off", "protect_primary", "consistency_primary"):
            raise ValueError(f"unknown opgd mode {self.opgd!r}")


@dataclass
class AttackResult:
    x_ptb: np.ndarray
    loss_curve: np.ndarray                 # (steps, batch) total objective
    components: dict = field(default_factory=dict)
    max_violation: float = 0.0

    def curve(self) -> np.ndarray:
        """Batch-mean loss per step."""
        return self.loss_curve.mean(axis=1)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 3:
        return arr[None].copy(), True
    return arr.copy(), False


def _per_image_sq(diff: DiffTensor) -> DiffTensor:
    return T.square(diff).mean(axis=tuple(range(1, diff.data.ndim)))


def _violation_linf(delta: np.ndarray, budget: float, x_adv: np.ndarray) -> float:
    v = max(float(np.abs(delta).max() - budget), 0.0)
    return max(v, float(np.abs(x_adv).max() - 1.0), 0.0)


def _violation_l2(delta: np.ndarray, budget: float, x_adv: np.ndarray) -> float:
    norms = np.linalg.norm(delta.reshape(delta.shape[0], -1), axis=1)
    v = max(float(norms.max() - budget), 0.0)
    return max(v, float(np.abs(x_adv).max() - 1.0), 0.0)


def _project_l2(delta: np.ndarray, budget: float) -> np.ndarray:
    flat = delta.reshape(delta.shape[0], -1)
    for _ in range(4):
        norms = np.linalg.norm(flat, axis=1)
        over = norms > budget
        if not np.any(over):
            break
        flat[over] *= (budget / norms[over])[:, None]
    return flat.reshape(delta.shape)


def encoder_attack(ae: AutoencoderParams, x, config: AttackConfig) -> AttackResult:
    """Drag the encoder embedding of x+delta toward the target's
    embedding under an L-infinity pixel budget (projected gradient)."""
    if config.target is None:
        raise ValueError("encoder attack needs config.target")
    if config.budget_kind != "linf":
        raise ValueError("encoder attack uses budget_kind='linf'")
    xb, single = _as_batch(x)
    validate_image(xb)
    with no_tape():
        z_target = encode(ae, config.target).data
    if z_target.ndim == 3:
        z_target = np.broadcast_to(z_target[None], (xb.shape[0],) + z_target.shape)

    delta = DiffTensor(np.zeros_like(xb), requires_grad=True)
    opt = (OptimizerState([delta], kind="adam", lr=config.lr)
           if config.optimizer == "adam" else None)
    losses = np.zeros((config.steps, xb.shape[0]))
    worst = 0.0
    for step in range(config.steps):
        delta.zero_grad()
        with Tape() as tape:
            z = encode(ae, DiffTensor(xb) + delta)
            per = _per_image_sq(z - DiffTensor(z_target))
            tape.backward(per.mean())
        losses[step] = per.data
        if opt is not None:
            opt.step()
        else:
            delta.data -= config.lr * np.sign(delta.grad)
        np.clip(delta.data, -config.budget, config.budget, out=delta.data)
        x_adv = np.clip(xb + delta.data, -1.0, 1.0)
        delta.data = x_adv - xb
        worst = max(worst, _violation_linf(delta.data, config.budget, x_adv))
    x_ptb = np.clip(xb + delta.data, -1.0, 1.0)
    return AttackResult(x_ptb[0] if single else x_ptb, losses,
                        max_violation=worst)


def diffusion_attack(models: LdmModels, x, config: AttackConfig) -> AttackResult:
    """Drag the whole reconstruction pipeline's output toward the target
    under an L2 pixel budget.

    The noising draw is fixed across iterations, and only the last
    grad_tail sampler steps contribute denoiser gradients (earlier
    steps keep their affine algebra but freeze the noise estimates).
    """
    if config.target is None:
        raise ValueError("diffusion attack needs config.target")
    if config.budget_kind != "l2":
        raise ValueError("diffusion attack uses budget_kind='l2'")
    xb, single = _as_batch(x)
    validate_image(xb)
    schedule = models.schedule
    start_t = max(1, int(round(config.strength * schedule.num_steps)))
    sampler = SamplerConfig(steps=models.sampler_steps, start_t=start_t)
    num_transitions = len(ddim_timesteps(start_t, sampler.steps)) - 1
    if config.grad_tail > num_transitions:
        raise ValueError(f"grad_tail {config.grad_tail} exceeds the "
                         f"{num_transitions} sampler transitions")

    target = np.asarray(config.target, dtype=np.float64)
    if target.ndim == 3:
        target = np.broadcast_to(target[None], xb.shape)
    eps = SeedStream(config.seed).stream("diffusion-attack-noise").normal(
        (xb.shape[0],) + (4, 8, 8))

    delta = DiffTensor(np.zeros_like(xb), requires_grad=True)
    opt = (OptimizerState([delta], kind="adam", lr=config.lr)
           if config.optimizer == "adam" else None)
    losses = np.zeros((config.steps, xb.shape[0]))
    worst = 0.0
    for step in range(config.steps):
        delta.zero_grad()
        with Tape() as tape:
            z = encode(models.autoencoder, DiffTensor(xb) + delta)
            z_t = q_sample(schedule, z, start_t, eps)
            z0 = ddim_reverse(schedule, models.denoiser, z_t, sampler,
                              grad_tail=config.grad_tail)
            out = decode(models.autoencoder, z0)
            per = _per_image_sq(out - DiffTensor(target))
            tape.backward(per.mean())
        losses[step] = per.data
        if opt is not None:
            opt.step()
        else:
            flat = delta.grad.reshape(xb.shape[0], -1)
            norms = np.linalg.norm(flat, axis=1, keepdims=True)
            direction = (flat / np.maximum(norms, 1e-12)).reshape(xb.shape)
            delta.data -= config.lr * direction
        delta.data = _project_l2(delta.data, config.budget)
        x_adv = np.clip(xb + delta.data, -1.0, 1.0)
        delta.data = x_adv - xb
        worst = max(worst, _violation_l2(delta.data, config.budget, x_adv))
    x_ptb = np.clip(xb + delta.data, -1.0, 1.0)
    return AttackResult(x_ptb[0] if single else x_ptb, losses,
                        max_violation=worst)


def orthogonal_step(primary_grad: np.ndarray, secondary_grad: np.ndarray
                    ) -> tuple[np.ndarray, bool]:
    """Combine two gradients with the secondary projected onto the
    orthogonal complement of the primary.

    Returns (primary + secondary_perp, fallback) where fallback is True
    when the primary gradient is zero and the secondary is returned
    unchanged.
    """
    g1 = np.asarray(primary_grad, dtype=np.float64)
    g2 = np.asarray(secondary_grad, dtype=np.float64)
    if g1.shape != g2.shape:
        raise ValueError(f"gradient shapes differ: {g1.shape} vs {g2.shape}")
    norm = np.linalg.norm(g1)
    if norm == 0.0:
        return g2.copy(), True
    unit = g1 / norm
    return g1 + (g2 - np.sum(g2 * unit) * unit), False


def _orthogonal_step_batch(g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    out = np.empty_like(g1)
    for i in range(g1.shape[0]):
        out[i], _ = orthogonal_step(g1[i], g2[i])
    return out


def _style_batch(samples) -> list[StyleSample]:
    if isinstance(samples, StyleSample):
        return [samples]
    return list(samples)


def glaze_protect(ae: AutoencoderParams, featurenet: FeatureNetParams,
                  samples, config: AttackConfig) -> AttackResult:
    """Style cloaking: push the embedding of x+delta toward the
    style-transferred image's embedding under a perceptual budget."""
    cfg_dict = config.__dict__ | {"consistency_weight": 0.0, "opgd": "off"}
    return adaptive_glaze_protect(ae, featurenet, samples,
                                  AttackConfig(**cfg_dict))


def adaptive_glaze_protect(ae: AutoencoderParams, featurenet: FeatureNetParams,
                           samples, config: AttackConfig) -> AttackResult:
    """Style cloaking plus an encode-decode consistency regularizer.

    With consistency_weight 0 this reduces exactly (bit-for-bit) to the
    plain cloaking objective; the regularizer branch is skipped, not
    multiplied by zero.
    """
    if config.budget_kind != "lpips":
        raise ValueError("style cloaking uses budget_kind='lpips'")
    if config.target_style is None:
        raise ValueError("style cloaking needs config.target_style")
    if config.consistency_weight < 0:
        raise ValueError("consistency_weight must be >= 0")
    batch = _style_batch(samples)
    single = isinstance(samples, StyleSample)
    for s in batch:
        if s.label == config.target_style:
            raise ValueError(f"target style {config.target_style} equals the "
                             f"sample's own style: degenerate protection")
    xb = np.stack([s.image for s in batch])
    validate_image(xb)
    omega = np.stack([style_transfer_proxy(s, config.target_style)
                      for s in batch])
    with no_tape():
        z_omega = encode(ae, omega).data

    beta = config.consistency_weight
    use_opgd = beta > 0 and config.opgd != "off"
    delta = DiffTensor(np.zeros_like(xb), requires_grad=True)
    opt = (OptimizerState([delta], kind="adam", lr=config.lr)
           if config.optimizer == "adam" else None)
    losses = np.zeros((config.steps, xb.shape[0]))
    comp = {"protect": np.zeros_like(losses),
            "lpips_hinge": np.zeros_like(losses),
            "consistency": np.zeros_like(losses)}
    worst = 0.0

    def protect_terms(x_adv: DiffTensor):
        z = encode(ae, x_adv)
        protect = _per_image_sq(z - DiffTensor(z_omega))
        dist = lpips_pair(featurenet, DiffTensor(xb), x_adv)
        hinge = T.relu(dist - config.budget)
        return protect, hinge

    for step in range(config.steps):
        if use_opgd:
            delta.zero_grad()
            with Tape() as tape:
                x_adv = DiffTensor(xb) + delta
                protect, hinge = protect_terms(x_adv)
                tape.backward((protect + hinge * config.lpips_weight).mean())
            g_protect = delta.grad.copy()
            delta.zero_grad()
            with Tape() as tape:
                x_adv = DiffTensor(xb) + delta
                consistency = _per_image_sq(x_adv - decode(ae, encode(ae, x_adv)))
                tape.backward((consistency * beta).mean())
            g_cons = delta.grad.copy()
            if config.opgd == "protect_primary":
                grad = _orthogonal_step_batch(g_protect, g_cons)
            else:
                grad = _orthogonal_step_batch(g_cons, g_protect)
            delta.grad = grad
            total = (protect.data + config.lpips_weight * hinge.data
                     + beta * consistency.data)
        else:
            delta.zero_grad()
            with Tape() as tape:
                x_adv = DiffTensor(xb) + delta
                protect, hinge = protect_terms(x_adv)
                loss_t = protect + hinge * config.lpips_weight
                if beta > 0:
                    consistency = _per_image_sq(
                        x_adv - decode(ae, encode(ae, x_adv)))
                    loss_t = loss_t + consistency * beta
                tape.backward(loss_t.mean())
            total = loss_t.data
        losses[step] = total
        comp["protect"][step] = protect.data
        comp["lpips_hinge"][step] = hinge.data
        if beta > 0:
            comp["consistency"][step] = consistency.data
        if opt is not None:
            opt.step()
        else:
            delta.data -= config.lr * np.sign(delta.grad)
        x_adv_arr = np.clip(xb + delta.data, -1.0, 1.0)
        delta.data = x_adv_arr - xb
        worst = max(worst, max(float(np.abs(x_adv_arr).max()) - 1.0, 0.0))
    x_ptb = np.clip(xb + delta.data, -1.0, 1.0)
    return AttackResult(x_ptb[0] if single else x_ptb, losses,
                        components=comp, max_violation=worst)
