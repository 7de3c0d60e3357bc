"""Command-line interface.

Subcommands: gen-data, train-ae, train-diffusion, train-classifier,
protect, purify, run-style, run-edit, sweep, report. Shared flags:
--config (JSON), --seed, --out. Exit codes: 0 success, 2 config error,
3 separability-gate failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from purlab import imgio, modelio
from purlab.attacks import (AttackConfig, adaptive_glaze_protect,
                            diffusion_attack, encoder_attack, glaze_protect)
from purlab.diffusion import make_schedule
from purlab.metrics import MetricReport
from purlab.pipelines import (ConfigError, ExperimentConfig, LabModels,
                              default_edit_attack, default_edit_purify,
                              default_style_attack, default_style_purify,
                              describe_config, run_ablation_sweep,
                              run_edit_pipeline, run_style_pipeline)
from purlab.purify import PurifyConfig, apply_baseline, impress_purify
from purlab.rng import SeedStream
from purlab.styles import (GateError, StyleDatasetSpec, generate_style_dataset,
                           run_separability_gate)
from purlab.training import (ClassifierTrainConfig, TrainConfig,
                             train_autoencoder, train_denoiser,
                             train_style_classifier)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GATE = 3


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")


def _build(cls, payload: dict, **overrides):
    try:
        return cls(**{**payload, **overrides})
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__} options: {exc}")


def _dataset_spec(cfg: dict, seed: int) -> StyleDatasetSpec:
    return _build(StyleDatasetSpec, cfg.get("dataset", {}), seed=seed)


def _schedule(cfg: dict):
    sched = cfg.get("schedule", {})
    return make_schedule(sched.get("num_steps", 100),
                         sched.get("beta_min", 1e-3),
                         sched.get("beta_max", 0.2))


def _models(cfg: dict, out: Path) -> LabModels:
    paths = cfg.get("models", {
        "autoencoder": out / "autoencoder.bin",
        "denoiser": out / "denoiser.bin",
        "classifier": out / "classifier.bin",
    })
    return LabModels.load({k: str(v) for k, v in paths.items()},
                          _schedule(cfg),
                          sampler_steps=cfg.get("sampler_steps", 20),
                          expected_hashes=cfg.get("model_hashes"))


def _experiment(cfg: dict, seed: int, task: str) -> ExperimentConfig:
    exp = dict(cfg.get("experiment", {}))
    attack_payload = cfg.get("attack")
    purify_payload = cfg.get("purify")
    if task == "malicious_editing":
        attack = default_edit_attack()
        purify = default_edit_purify()
    else:
        attack = default_style_attack()
        purify = default_style_purify()
    if attack_payload:
        if "target" in attack_payload:
            attack_payload = dict(attack_payload)
            attack_payload["target"] = np.asarray(attack_payload["target"])
        attack = _build(AttackConfig, {**attack.__dict__, **attack_payload})
    if purify_payload:
        purify = _build(PurifyConfig, {**purify.__dict__, **purify_payload})
    exp.pop("task", None)
    exp.pop("seed", None)
    dataset = _dataset_spec(cfg, exp.pop("dataset_seed", seed))
    return _build(ExperimentConfig, exp, task=task, seed=seed,
                  dataset=dataset, attack=attack, purify=purify)


def _write_images(out: Path, prefix: str, images: np.ndarray,
                  sidecars: list[dict] | None = None) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"{prefix}_{i:04d}.png"
        imgio.write_png16(out / name, img)
        names.append(name)
        if sidecars is not None:
            (out / f"{prefix}_{i:04d}.json").write_text(
                json.dumps(sidecars[i], sort_keys=True, indent=2,
                           default=str) + "\n")
    return names


def cmd_gen_data(args, cfg: dict) -> int:
    spec = _dataset_spec(cfg, args.seed)
    ds = generate_style_dataset(spec)
    run_separability_gate(ds)
    out = Path(args.out)
    names = _write_images(out, "img", ds.images)
    labels = {"labels": ds.labels.tolist(),
              "thetas": ds.thetas.tolist(),
              "files": names,
              "seed": spec.seed}
    (out / "labels.json").write_text(json.dumps(labels, sort_keys=True) + "\n")
    print(f"wrote {len(names)} images + labels.json to {out}")
    return EXIT_OK


def _training_images(cfg: dict, args) -> np.ndarray:
    if getattr(args, "data", None):
        return imgio.ingest_images(args.data)
    ds = generate_style_dataset(_dataset_spec(cfg, args.seed))
    order = SeedStream(args.seed).stream("train-shuffle").permutation(len(ds))
    return ds.images[order]


def cmd_train_ae(args, cfg: dict) -> int:
    images = _training_images(cfg, args)
    tc = _build(TrainConfig, cfg.get("train", {}).get("autoencoder", {}),
                seed=args.seed) if cfg.get("train", {}).get("autoencoder") \
        else TrainConfig(steps=4000, batch_size=16, lr=2e-3, seed=args.seed)
    ae, losses = train_autoencoder(images, tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modelio.save_params(out / "autoencoder.bin", ae.params)
    _write_loss_curve(out / "autoencoder_loss.csv", losses)
    print(f"autoencoder: final loss {np.mean(losses[-50:]):.6f} -> "
          f"{out / 'autoencoder.bin'}")
    return EXIT_OK


def cmd_train_diffusion(args, cfg: dict) -> int:
    images = _training_images(cfg, args)
    if args.exclude_style is not None:
        ds = generate_style_dataset(_dataset_spec(cfg, args.seed))
        images = ds.images[ds.labels != args.exclude_style]
    ae_path = args.autoencoder or str(Path(args.out) / "autoencoder.bin")
    from purlab.models import AutoencoderParams, DenoiserParams
    ae = AutoencoderParams.from_params(modelio.load_params(ae_path))
    start = None
    if args.init:
        start = DenoiserParams.from_params(modelio.load_params(args.init))
    tc = _build(TrainConfig, cfg.get("train", {}).get("denoiser", {}),
                seed=args.seed) if cfg.get("train", {}).get("denoiser") \
        else TrainConfig(steps=4000, batch_size=32, lr=2e-3, seed=args.seed)
    dn, losses = train_denoiser(ae, images, _schedule(cfg), tc,
                                start_from=start)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modelio.save_params(out / "denoiser.bin", dn.params)
    _write_loss_curve(out / "denoiser_loss.csv", losses)
    print(f"denoiser: final loss {np.mean(losses[-50:]):.6f} -> "
          f"{out / 'denoiser.bin'}")
    return EXIT_OK


def cmd_train_classifier(args, cfg: dict) -> int:
    ds = generate_style_dataset(_dataset_spec(cfg, args.seed))
    tc = _build(ClassifierTrainConfig,
                cfg.get("train", {}).get("classifier", {}), seed=args.seed) \
        if cfg.get("train", {}).get("classifier") \
        else ClassifierTrainConfig(steps=1200, batch_size=32, lr=1e-3,
                                   seed=args.seed)
    fn, accuracy, losses = train_style_classifier(ds.images, ds.labels, tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modelio.save_params(out / "classifier.bin", fn.params)
    _write_loss_curve(out / "classifier_loss.csv", losses)
    print(f"classifier: held-out accuracy {accuracy:.3f} -> "
          f"{out / 'classifier.bin'}")
    return EXIT_OK


def _write_loss_curve(path: Path, losses) -> None:
    lines = ["step,loss"] + [f"{i},{v!r}" for i, v in enumerate(losses)]
    path.write_text("\n".join(lines) + "\n")


def cmd_protect(args, cfg: dict) -> int:
    out = Path(args.out)
    models = _models(cfg, out)
    seed = args.seed
    if args.method in ("glaze", "adaptive-glaze"):
        exp = _experiment(cfg, seed, "style_mimicking")
        ds = generate_style_dataset(exp.dataset)
        pool = ds.of_style(exp.victim_style)
        picked = SeedStream(seed).stream("style-pipeline").stream(
            "finetune-split").choice(pool.size, exp.finetune_count)
        samples = [ds.sample(int(pool[i])) for i in picked]
        attack = replace(exp.attack, seed=seed,
                         target_style=exp.target_style)
        if args.method == "adaptive-glaze" and attack.consistency_weight == 0:
            attack = replace(attack, consistency_weight=40.0)
        fnc = adaptive_glaze_protect if args.method == "adaptive-glaze" \
            else glaze_protect
        res = fnc(models.autoencoder, models.featurenet, samples, attack)
        originals = np.stack([s.image for s in samples])
    else:
        if args.data:
            originals = imgio.ingest_images(args.data)
        else:
            exp = _experiment(cfg, seed, "malicious_editing")
            ds = generate_style_dataset(exp.dataset)
            picked = SeedStream(seed).stream("edit-pipeline").stream(
                "edit-pool").choice(len(ds), exp.edit_count)
            originals = ds.images[np.sort(picked)]
        if args.method == "encoder":
            attack = cfg.get("attack", {})
            acfg = _build(AttackConfig, {
                "budget_kind": "linf", "budget": 0.06, "steps": 200,
                "lr": 0.01, "optimizer": "pgd", **attack},
                target=np.zeros((3, 32, 32)), seed=seed)
            res = encoder_attack(models.autoencoder, originals, acfg)
        else:
            acfg = replace(default_edit_attack(), seed=seed,
                           **cfg.get("attack", {}))
            res = diffusion_attack(models.ldm(), originals, acfg)
    final_losses = res.loss_curve[-1] if res.loss_curve.size else \
        np.zeros(len(originals))
    sidecars = [{"method": args.method, "seed": seed,
                 "final_loss": float(final_losses[i]),
                 "config": _load_config(args.config)}
                for i in range(len(originals))]
    names = _write_images(out, "protected", np.atleast_3d(res.x_ptb)
                          if res.x_ptb.ndim == 3 else res.x_ptb, sidecars)
    print(f"wrote {len(names)} protected images to {out} "
          f"(max constraint violation {res.max_violation})")
    return EXIT_OK


def cmd_purify(args, cfg: dict) -> int:
    out = Path(args.out)
    if not args.data:
        raise ConfigError("purify needs --data pointing at protected images")
    images = imgio.ingest_images(args.data)
    if args.method == "impress":
        models = _models(cfg, out)
        pcfg = _build(PurifyConfig, cfg.get("purify", {}), seed=args.seed) \
            if cfg.get("purify") else replace(default_style_purify(),
                                              seed=args.seed)
        res = impress_purify(models.autoencoder, models.featurenet, images,
                             pcfg)
        purified = res.x_pur
        traj_path = out / "purify_trajectory.csv"
        out.mkdir(parents=True, exist_ok=True)
        rows = ["step,consistency_loss,lpips_value,combined_loss"]
        rows += [f"{i},{c!r},{l!r},{t!r}"
                 for i, (c, l, t) in enumerate(res.trajectory)]
        traj_path.write_text("\n".join(rows) + "\n")
        extra = {"trajectory": traj_path.name}
    else:
        purified = apply_baseline(args.method, images, seed=args.seed)
        extra = {}
    sidecars = [{"method": args.method, "seed": args.seed,
                 "config": _load_config(args.config), **extra}
                for _ in range(len(purified))]
    names = _write_images(out, "purified", purified, sidecars)
    print(f"wrote {len(names)} purified images to {out}")
    return EXIT_OK


def cmd_run_style(args, cfg: dict) -> int:
    out = Path(args.out)
    models = _models(cfg, out)
    exp = _experiment(cfg, args.seed, "style_mimicking")
    report = run_style_pipeline(models, exp)
    _emit(report, out, exp)
    for cond in report.conditions():
        mean, _ = report.aggregate(cond, "victim_style_hit")
        print(f"{cond:14s} accuracy {100 * mean:5.1f}%")
    return EXIT_OK


def cmd_run_edit(args, cfg: dict) -> int:
    out = Path(args.out)
    models = _models(cfg, out)
    exp = _experiment(cfg, args.seed, "malicious_editing")
    report = run_edit_pipeline(models, exp)
    _emit(report, out, exp)
    for cond in report.conditions():
        vals = [f"{m}={report.aggregate(cond, m)[0]:.3f}"
                for m in ("ssim", "psnr", "vifp")]
        print(f"{cond:14s} " + "  ".join(vals))
    return EXIT_OK


def cmd_sweep(args, cfg: dict) -> int:
    out = Path(args.out)
    models = _models(cfg, out)
    task = "malicious_editing" if args.task == "edit" else "style_mimicking"
    exp = _experiment(cfg, args.seed, task)
    try:
        values = [float(v) for v in args.values.split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"bad --values list: {exc}")
    rows = run_ablation_sweep(models, exp, args.parameter, values)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{args.parameter}.csv"
    lines = ["parameter,value,condition,metric,mean,std"]
    lines += [f"{r['parameter']},{r['value']!r},{r['condition']},"
              f"{r['metric']},{r['mean']!r},{r['std']!r}" for r in rows]
    path.write_text("\n".join(lines) + "\n")
    (out / f"sweep_{args.parameter}.json").write_text(
        json.dumps(rows, sort_keys=True, indent=2) + "\n")
    print(f"wrote sweep table to {path}")
    return EXIT_OK


def cmd_report(args, cfg: dict) -> int:
    from purlab.report import emit_report, load_report
    reports = [load_report(p) for p in args.inputs]
    paths = emit_report(reports, args.out, cfg, formats=tuple(args.formats))
    print(f"emitted {len(paths)} files to {args.out}")
    return EXIT_OK


def _emit(report: MetricReport, out: Path, exp: ExperimentConfig):
    from purlab.report import emit_report
    emit_report(report, out, describe_config(exp))


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON config file")
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--out", default="out", help="output directory")

    parser = argparse.ArgumentParser(
        prog="purlab",
        description="toy lab for image-protection perturbations and "
                    "consistency-based purification")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[shared],
                   help="generate the procedural style dataset (runs the "
                        "separability gate)")
    p = sub.add_parser("train-ae", parents=[shared], help="train the autoencoder")
    p.add_argument("--data", help="directory of PNGs (default: procedural set)")
    p = sub.add_parser("train-diffusion", parents=[shared],
                       help="train the latent denoiser")
    p.add_argument("--data", help="directory of PNGs (default: procedural set)")
    p.add_argument("--autoencoder", help="path to autoencoder.bin")
    p.add_argument("--init", help="warm-start denoiser params (fine-tune)")
    p.add_argument("--exclude-style", type=int, default=None,
                   help="hold one style out of pre-training")
    sub.add_parser("train-classifier", parents=[shared],
                   help="train the style classifier")
    p = sub.add_parser("protect", parents=[shared], help="run a protection attack")
    p.add_argument("--method", required=True,
                   choices=["encoder", "diffusion", "glaze", "adaptive-glaze"])
    p.add_argument("--data", help="directory of PNGs to protect")
    p = sub.add_parser("purify", parents=[shared],
                       help="purify protected images")
    p.add_argument("--method", required=True,
                   choices=["impress", "jpeg", "noise", "resize", "lowpass",
                            "combo"])
    p.add_argument("--data", help="directory of protected PNGs")
    sub.add_parser("run-style", parents=[shared],
                   help="style-mimicking pipeline over all conditions")
    sub.add_parser("run-edit", parents=[shared],
                   help="masked-editing pipeline over all conditions")
    p = sub.add_parser("sweep", parents=[shared], help="hyperparameter sweep")
    p.add_argument("--parameter", required=True,
                   choices=["alpha", "delta_L", "beta_adapt"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--task", choices=["style", "edit"], default="style")
    p = sub.add_parser("report", parents=[shared],
                       help="re-emit reports from JSON")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--formats", nargs="+", default=["json", "csv"],
                   choices=["json", "csv"])
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-ae": cmd_train_ae,
    "train-diffusion": cmd_train_diffusion,
    "train-classifier": cmd_train_classifier,
    "protect": cmd_protect,
    "purify": cmd_purify,
    "run-style": cmd_run_style,
    "run-edit": cmd_run_edit,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except GateError as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
