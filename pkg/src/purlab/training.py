"""Seeded training loops for the toy models.

Each loop is deterministic given (dataset bytes, config, seed): batches,
noise draws and weight init all come from labeled sub-streams, so a
re-run reproduces parameters bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from purlab import tensor as T
from purlab.diffusion import NoiseSchedule, q_sample
from purlab.models import (AutoencoderParams, DenoiserParams,
                           FeatureNetParams, LATENT_SHAPE, cross_entropy,
                           classify_style, decode, denoiser_predict, encode)
from purlab.optim import OptimizerState
from purlab.rng import SeedStream
from purlab.tensor import DiffTensor, Tape, no_tape

__all__ = ["TrainConfig", "ClassifierTrainConfig", "train_autoencoder",
           "train_denoiser", "train_style_classifier", "encode_dataset"]


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    lr_final: float | None = None   # linear decay target; None keeps lr fixed

    def lr_at(self, step: int) -> float:
        if self.lr_final is None or self.steps <= 1:
            return self.lr
        frac = step / (self.steps - 1)
        return self.lr + (self.lr_final - self.lr) * frac


@dataclass
class ClassifierTrainConfig(TrainConfig):
    holdout_frac: float = 0.2
    augment_sigma: float = 0.1


def _check_dataset(dataset: np.ndarray):
    if dataset.size == 0 or dataset.shape[0] == 0:
        raise ValueError("dataset is empty")


def train_autoencoder(dataset: np.ndarray, config: TrainConfig
                      ) -> tuple[AutoencoderParams, list[float]]:
    """Minimize mean squared reconstruction error; returns per-step losses."""
    _check_dataset(dataset)
    rng = SeedStream(config.seed)
    ae = AutoencoderParams.init(rng)
    opt = OptimizerState(ae.tensors(), kind=config.optimizer, lr=config.lr)
    batches = rng.stream("ae-batches")
    losses: list[float] = []
    for step in range(config.steps):
        idx = batches.integers(0, dataset.shape[0], config.batch_size)
        x = DiffTensor(dataset[idx])
        with Tape() as tape:
            loss = T.mse(decode(ae, encode(ae, x)), x)
            tape.backward(loss)
        losses.append(loss.item())
        opt.lr = config.lr_at(step)
        opt.step()
        opt.zero_grad()
    return ae, losses


def encode_dataset(ae: AutoencoderParams, dataset: np.ndarray,
                   chunk: int = 256) -> np.ndarray:
    """Encode a full image set to latents without building any graph."""
    parts = []
    with no_tape():
        for i in range(0, dataset.shape[0], chunk):
            parts.append(encode(ae, dataset[i:i + chunk]).data)
    return np.concatenate(parts, axis=0)


def train_denoiser(ae: AutoencoderParams, dataset: np.ndarray,
                   schedule: NoiseSchedule, config: TrainConfig,
                   start_from: DenoiserParams | None = None
                   ) -> tuple[DenoiserParams, list[float]]:
    """Noise-prediction training on frozen-encoder latents.

    Each step draws images, per-sample t uniform in [1,T] and unit
    noise, and minimizes ||eps - eps_hat(z_t, t)||^2. start_from warm
    starts fine-tuning; the given params are cloned, not mutated.
    """
    _check_dataset(dataset)
    latents = encode_dataset(ae, dataset)
    if latents.shape[1:] != LATENT_SHAPE:
        raise ValueError(f"latent shape {latents.shape[1:]} does not match "
                         f"{LATENT_SHAPE}")
    rng = SeedStream(config.seed)
    dn = start_from.clone() if start_from is not None else DenoiserParams.init(rng)
    for p in dn.tensors():
        p.requires_grad = True
    opt = OptimizerState(dn.tensors(), kind=config.optimizer, lr=config.lr)
    batches = rng.stream("dn-batches")
    noise = rng.stream("dn-noise")
    tsteps = rng.stream("dn-t")
    losses: list[float] = []
    for step in range(config.steps):
        idx = batches.integers(0, latents.shape[0], config.batch_size)
        z0 = latents[idx]
        t = tsteps.integers(1, schedule.num_steps + 1, config.batch_size)
        eps = noise.normal(z0.shape)
        z_t = q_sample(schedule, z0, t, eps)
        with Tape() as tape:
            pred = denoiser_predict(dn, z_t, t, schedule.num_steps)
            loss = T.mse(pred, DiffTensor(eps))
            tape.backward(loss)
        losses.append(loss.item())
        opt.lr = config.lr_at(step)
        opt.step()
        opt.zero_grad()
    return dn, losses


def train_style_classifier(dataset: np.ndarray, labels: np.ndarray,
                           config: ClassifierTrainConfig
                           ) -> tuple[FeatureNetParams, float, list[float]]:
    """Cross-entropy training; returns params, held-out accuracy, losses.

    Training batches get additive Gaussian pixel noise (augment_sigma)
    so the classifier stays reliable on decoded generations; held-out
    accuracy is measured on clean images.
    """
    _check_dataset(dataset)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError(f"need at least 2 classes, got {classes.size}")
    rng = SeedStream(config.seed)
    order = rng.stream("clf-split").permutation(dataset.shape[0])
    n_hold = max(1, int(round(config.holdout_frac * dataset.shape[0])))
    hold_idx, train_idx = order[:n_hold], order[n_hold:]

    fn = FeatureNetParams.init(rng, int(classes.size))
    opt = OptimizerState(fn.tensors(), kind=config.optimizer, lr=config.lr)
    batches = rng.stream("clf-batches")
    jitter = rng.stream("clf-augment")
    losses: list[float] = []
    for step in range(config.steps):
        idx = train_idx[batches.integers(0, train_idx.shape[0],
                                         config.batch_size)]
        x = dataset[idx]
        if config.augment_sigma > 0:
            x = np.clip(x + config.augment_sigma * jitter.normal(x.shape),
                        -1.0, 1.0)
        with Tape() as tape:
            loss = cross_entropy(fn, DiffTensor(x), labels[idx])
            tape.backward(loss)
        losses.append(loss.item())
        opt.lr = config.lr_at(step)
        opt.step()
        opt.zero_grad()
    accuracy = classifier_accuracy(fn, dataset[hold_idx], labels[hold_idx])
    return fn, accuracy, losses


def classifier_accuracy(fn: FeatureNetParams, images: np.ndarray,
                        labels: np.ndarray, chunk: int = 256) -> float:
    hits = 0
    for i in range(0, images.shape[0], chunk):
        _, pred = classify_style(fn, images[i:i + chunk])
        hits += int((pred == labels[i:i + chunk]).sum())
    return hits / images.shape[0]
