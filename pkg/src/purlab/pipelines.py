"""End-to-end experiment pipelines.

The style-mimicking pipeline conditions a fine-tune set (clean,
protected, post-processed), fine-tunes a copy of the base denoiser on
it, generates samples from the latent prior and scores the fraction
classified as the victim style. The editing pipeline compares
masked-edit outputs of each condition against the clean edit under the
fidelity metrics. Every condition draws from its own labeled
sub-stream, so serial and parallel execution produce identical reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from purlab import modelio
from purlab.attacks import (AttackConfig, adaptive_glaze_protect,
                            diffusion_attack, glaze_protect)
from purlab.diffusion import LdmModels, NoiseSchedule, edit_image, generate, make_schedule
from purlab.metrics import MetricReport, lpips_pair, psnr, ssim, vifp
from purlab.models import AutoencoderParams, DenoiserParams, FeatureNetParams
from purlab.purify import (BASELINES, PurifyConfig, apply_baseline,
                           impress_purify)
from purlab.report import config_hash
from purlab.rng import SeedStream
from purlab.styles import StyleDatasetSpec, StyleSample, generate_style_dataset
from purlab.training import TrainConfig, train_denoiser, classifier_accuracy
from purlab.models import classify_style

__all__ = ["ExperimentConfig", "LabModels", "ConfigError",
           "run_style_pipeline", "run_edit_pipeline", "run_ablation_sweep",
           "default_style_attack", "default_edit_attack",
           "default_style_purify", "default_edit_purify", "center_mask"]

STYLE_CONDITIONS_BASE = ("clean", "protected")


class ConfigError(ValueError):
    pass


def default_style_attack() -> AttackConfig:
    """Style-cloaking defaults: perceptual budget 0.05, weight 30,
    500 adam steps at 1e-2."""
    return AttackConfig(budget_kind="lpips", budget=0.05, steps=500, lr=1e-2,
                        optimizer="adam", lpips_weight=30.0, target_style=1)


def default_edit_attack() -> AttackConfig:
    """Whole-pipeline attack defaults: L2 budget, gray target."""
    return AttackConfig(budget_kind="l2", budget=3.0, steps=100, lr=0.1,
                        optimizer="pgd", target=np.zeros((3, 32, 32)),
                        grad_tail=5, strength=0.6)


def default_style_purify() -> PurifyConfig:
    """Desk-scale purification for the style task: published balance
    (alpha 0.1, budget 0.1, adam 1e-2) at 600 steps, which converges at
    32x32."""
    return PurifyConfig(alpha=0.1, lpips_budget=0.1, lr=1e-2, steps=600)


def default_edit_purify() -> PurifyConfig:
    return PurifyConfig(alpha=1e-2, lpips_budget=0.1, lr=5e-3, steps=400)


def center_mask(size: int = 32, area_fraction: float = 0.25) -> np.ndarray:
    """Centered square keep-mask (1 = preserved) covering the fraction."""
    side = int(round(size * np.sqrt(area_fraction)))
    lo = (size - side) // 2
    mask = np.zeros((size, size))
    mask[lo:lo + side, lo:lo + side] = 1.0
    return mask


@dataclass
class LabModels:
    """Trained models a pipeline runs on, with optional provenance."""

    autoencoder: AutoencoderParams
    denoiser: DenoiserParams
    featurenet: FeatureNetParams
    schedule: NoiseSchedule
    sampler_steps: int = 20
    hashes: dict = field(default_factory=dict)

    def ldm(self) -> LdmModels:
        return LdmModels(self.autoencoder, self.denoiser, self.schedule,
                         self.sampler_steps)

    @classmethod
    def load(cls, paths: dict, schedule: NoiseSchedule, sampler_steps: int = 20,
             expected_hashes: dict | None = None) -> "LabModels":
        for key in ("autoencoder", "denoiser", "classifier"):
            if key not in paths:
                raise ConfigError(f"model path for {key!r} missing")
            if not Path(paths[key]).exists():
                raise ConfigError(f"model file not found: {paths[key]}")
        hashes = {k: modelio.file_sha256(p) for k, p in paths.items()}
        if expected_hashes:
            for key, expect in expected_hashes.items():
                if hashes.get(key) != expect:
                    raise ConfigError(
                        f"model file {key!r} hash mismatch: manifest {expect} "
                        f"!= actual {hashes.get(key)}")
        return cls(
            AutoencoderParams.from_params(modelio.load_params(paths["autoencoder"])),
            DenoiserParams.from_params(modelio.load_params(paths["denoiser"])),
            FeatureNetParams.from_params(modelio.load_params(paths["classifier"])),
            schedule, sampler_steps, hashes)


@dataclass
class ExperimentConfig:
    task: str = "style_mimicking"
    seed: int = 0
    victim_style: int = 0
    target_style: int = 1
    finetune_count: int = 24
    eval_count: int = 100
    edit_count: int = 24
    dataset: StyleDatasetSpec = field(default_factory=StyleDatasetSpec)
    attack: AttackConfig = field(default_factory=default_style_attack)
    purify: PurifyConfig = field(default_factory=default_style_purify)
    baselines: tuple = tuple(sorted(BASELINES))
    include_clean_purified: bool = False
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(
        steps=500, batch_size=16, lr=1e-3))
    strength: float = 0.6

    def __post_init__(self):
        tasks = ("style_mimicking", "malicious_editing", "ablation_sweep",
                 "adaptive_protect")
        if self.task not in tasks:
            raise ConfigError(f"unknown task {self.task!r}")
        for b in self.baselines:
            if b not in BASELINES:
                raise ConfigError(f"unknown baseline {b!r}")
        if self.task in ("style_mimicking", "adaptive_protect") and \
                self.victim_style == self.target_style:
            raise ConfigError("victim and target styles must differ")
        if self.eval_count < 1 or self.finetune_count < 1:
            raise ConfigError("eval_count and finetune_count must be >= 1")

    def hash(self) -> str:
        return config_hash(describe_config(self))


def describe_config(config: ExperimentConfig) -> dict:
    def plain(obj):
        if hasattr(obj, "__dict__"):
            return {k: plain(v) for k, v in vars(obj).items()}
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        return obj

    return plain(config)


def _victim_samples(ds, config: ExperimentConfig, rng: SeedStream
                    ) -> list[StyleSample]:
    pool = ds.of_style(config.victim_style)
    if pool.size < config.finetune_count:
        raise ConfigError(f"style {config.victim_style} has only {pool.size} "
                          f"images for a {config.finetune_count}-image fine-tune set")
    picked = rng.stream("finetune-split").choice(pool.size,
                                                 config.finetune_count)
    return [ds.sample(int(pool[i])) for i in picked]


def _protect(models: LabModels, samples: list[StyleSample],
             config: ExperimentConfig) -> np.ndarray:
    attack = replace(config.attack, target_style=config.target_style,
                     seed=config.seed)
    if config.task == "adaptive_protect" or attack.consistency_weight > 0:
        res = adaptive_glaze_protect(models.autoencoder, models.featurenet,
                                     samples, attack)
    else:
        res = glaze_protect(models.autoencoder, models.featurenet, samples,
                            attack)
    if res.max_violation > 0:
        raise RuntimeError(f"attack violated its constraints by "
                           f"{res.max_violation}")
    return res.x_ptb


def _styled_accuracy(models: LabModels, images: np.ndarray,
                     config: ExperimentConfig, condition: str,
                     report: MetricReport):
    """Fine-tune a copy of the base denoiser on `images`, generate, classify."""
    ft_cfg = replace(config.finetune, seed=config.seed)
    tuned, _ = train_denoiser(models.autoencoder, images, models.schedule,
                              ft_cfg, start_from=models.denoiser)
    bundle = LdmModels(models.autoencoder, tuned, models.schedule,
                       models.sampler_steps)
    gen_rng = SeedStream(config.seed).stream("style-eval-generation")
    samples = generate(bundle, config.eval_count, gen_rng)
    _, labels = classify_style(models.featurenet, samples)
    for i, lab in enumerate(labels):
        report.add(f"gen{i:03d}", condition, "victim_style_hit",
                   1.0 if int(lab) == config.victim_style else 0.0)


def run_style_pipeline(models: LabModels, config: ExperimentConfig
                       ) -> MetricReport:
    """Style-mimicking accuracy per condition (clean, protected,
    post-processed); deterministic per (config, seed)."""
    if config.task not in ("style_mimicking", "adaptive_protect"):
        raise ConfigError(f"style pipeline cannot run task {config.task!r}")
    report = MetricReport(task=config.task, seed=config.seed,
                          config_hash=config.hash(),
                          model_hashes=dict(models.hashes))
    rng = SeedStream(config.seed).stream("style-pipeline")
    ds = generate_style_dataset(config.dataset)
    samples = _victim_samples(ds, config, rng)
    clean = np.stack([s.image for s in samples])

    protected = _protect(models, samples, config)
    conditioned: dict[str, np.ndarray] = {"clean": clean,
                                          "protected": protected}
    for name in config.baselines:
        seed_b = SeedStream(config.seed).stream(f"baseline:{name}").integers(
            0, 2 ** 31)
        conditioned[name] = apply_baseline(name, protected, seed=int(seed_b))
    purify_cfg = replace(config.purify, seed=config.seed)
    conditioned["impress"] = impress_purify(
        models.autoencoder, models.featurenet, protected, purify_cfg).x_pur
    if config.include_clean_purified:
        conditioned["clean_impress"] = impress_purify(
            models.autoencoder, models.featurenet, clean, purify_cfg).x_pur

    for name, images in conditioned.items():
        _styled_accuracy(models, images, config, name, report)
    return report


def run_edit_pipeline(models: LabModels, config: ExperimentConfig,
                      mask: np.ndarray | None = None) -> MetricReport:
    """Editing-fidelity metrics of each condition against the clean edit."""
    if config.task != "malicious_editing":
        raise ConfigError(f"edit pipeline cannot run task {config.task!r}")
    mask = center_mask() if mask is None else np.asarray(mask, dtype=np.float64)
    if mask.shape != (32, 32):
        raise ConfigError(f"mask must be 32x32, got {mask.shape}")
    report = MetricReport(task=config.task, seed=config.seed,
                          config_hash=config.hash(),
                          model_hashes=dict(models.hashes))
    rng = SeedStream(config.seed).stream("edit-pipeline")
    ds = generate_style_dataset(config.dataset)
    picked = rng.stream("edit-pool").choice(len(ds), config.edit_count)
    clean = ds.images[np.sort(picked)]

    attack = replace(config.attack, seed=config.seed)
    res = diffusion_attack(models.ldm(), clean, attack)
    if res.max_violation > 0:
        raise RuntimeError(f"attack violated its constraints by "
                           f"{res.max_violation}")
    protected = res.x_ptb

    conditioned: dict[str, np.ndarray] = {"clean": clean,
                                          "protected": protected}
    for name in config.baselines:
        seed_b = SeedStream(config.seed).stream(f"baseline:{name}").integers(
            0, 2 ** 31)
        conditioned[name] = apply_baseline(name, protected, seed=int(seed_b))
    purify_cfg = replace(config.purify, seed=config.seed)
    conditioned["impress"] = impress_purify(
        models.autoencoder, models.featurenet, protected, purify_cfg).x_pur

    ldm = models.ldm()

    def edit_all(images: np.ndarray) -> np.ndarray:
        out = []
        for i, img in enumerate(images):
            stream = SeedStream(config.seed).stream(f"edit-image:{i}")
            out.append(edit_image(ldm, img, mask, config.strength, stream))
        return np.stack(out)

    edited_clean = edit_all(clean)
    for name, images in conditioned.items():
        edited = edited_clean if name == "clean" else edit_all(images)
        for i in range(edited.shape[0]):
            report.add(f"img{i:03d}", name, "ssim",
                       ssim(edited_clean[i], edited[i]))
            report.add(f"img{i:03d}", name, "psnr",
                       psnr(edited_clean[i], edited[i]))
            report.add(f"img{i:03d}", name, "vifp",
                       vifp(edited_clean[i], edited[i]))
    return report


def run_ablation_sweep(models: LabModels, config: ExperimentConfig,
                       parameter: str, values) -> list[dict]:
    """Repeat the designated pipeline per parameter value.

    parameter: alpha / delta_L (purifier) or beta_adapt (adaptive
    protection weight). Returns one row per (value, condition, metric).
    """
    values = list(values)
    if len(values) < 2:
        raise ConfigError("sweep needs at least 2 values")
    if parameter not in ("alpha", "delta_L", "beta_adapt"):
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    rows = []
    for value in values:
        if parameter == "alpha":
            cfg = replace(config, purify=replace(config.purify, alpha=value))
        elif parameter == "delta_L":
            cfg = replace(config, purify=replace(config.purify,
                                                 lpips_budget=value))
        else:
            cfg = replace(config, task="adaptive_protect",
                          attack=replace(config.attack,
                                         consistency_weight=value))
        if cfg.task == "malicious_editing":
            report = run_edit_pipeline(models, cfg)
            metrics = ("ssim", "psnr", "vifp")
        else:
            report = run_style_pipeline(models, cfg)
            metrics = ("victim_style_hit",)
        for condition in report.conditions():
            for metric in metrics:
                mean, std = report.aggregate(condition, metric)
                rows.append({"parameter": parameter, "value": value,
                             "condition": condition, "metric": metric,
                             "mean": mean, "std": std})
    return rows
