"""Command-line orchestration of the study pipeline.

Subcommands: ``phantom``, ``preprocess``, ``pretrain-classifier``, ``train``,
``generate``, ``evaluate``, ``report``. Every command writes a
``run_manifest.json`` into its output directory recording the resolved
configuration, seed, content fingerprints of its inputs, and relative paths
of its artifacts (``wall_time_s`` is the only field that varies between
identical runs).

Configuration precedence: explicit CLI flag > ``--config`` file (flat JSON
keys, dotted names) > preset > built-in default. A flag that contradicts a
key pinned by the chosen preset is an error naming both.

Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__, ingest, models, phantom, reporting, training
from .metrics import EvalConfig, evaluate_run

QUIET = False


def _say(*args) -> None:
    if not QUIET:
        print(*args)


def _fingerprint(path: Path) -> str:
    """Content fingerprint of a file or directory (names and sizes, no timestamps)."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_file():
        h.update(path.read_bytes())
    elif path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(path)).encode())
                h.update(str(p.stat().st_size).encode())
    else:
        h.update(b"missing")
    return h.hexdigest()


def _write_run_manifest(out_dir: Path, command: str, config: dict, seed, inputs: dict, artifacts: list[str], t0: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {name: _fingerprint(Path(p)) for name, p in inputs.items()},
        "artifacts": sorted(artifacts),
        "tool_version": __version__,
        "wall_time_s": time.monotonic() - t0,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))


def _rel_artifacts(out_dir: Path) -> list[str]:
    return [
        str(p.relative_to(out_dir))
        for p in sorted(out_dir.rglob("*"))
        if p.is_file() and p.name != "run_manifest.json"
    ]


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    raw = json.loads(p.read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"config file {p} must hold a flat JSON object")
    return raw


class _Resolver:
    """flag > config file > preset > default, tracking which keys a preset pins."""

    def __init__(self, args: argparse.Namespace, file_cfg: dict, preset: dict | None, preset_name: str = ""):
        self.args = args
        self.file_cfg = file_cfg
        self.preset = preset or {}
        self.preset_name = preset_name

    def get(self, flag_attr: str, file_key: str, default, pinned: bool = False):
        flag_value = getattr(self.args, flag_attr, None)
        if flag_value is not None:
            if pinned and file_key in self.preset and flag_value != self.preset[file_key]:
                raise ValueError(
                    f"preset {self.preset_name!r} pins {file_key}={self.preset[file_key]!r}; "
                    f"conflicting flag --{flag_attr.replace('_', '-')}={flag_value!r}"
                )
            return flag_value
        if file_key in self.file_cfg:
            return self.file_cfg[file_key]
        if file_key in self.preset:
            return self.preset[file_key]
        return default


def _parse_window(text: str) -> ingest.HuWindow:
    try:
        low, high = text.split(":")
        return ingest.HuWindow(float(low), float(high))
    except ValueError as exc:
        raise ValueError(f"window must be 'low:high' in HU, got {text!r} ({exc})") from exc


def _parse_interval(text: str | None):
    if text is None:
        return None
    try:
        start, end = text.split(":")
        return int(start), int(end)
    except ValueError as exc:
        raise ValueError(f"interval must be 'start:end', got {text!r}") from exc


# ---------------------------------------------------------------------------
# train presets

# paper-best: the recommended phase-2 recipe (deep residual generator,
# three-layer patch discriminator, least-squares adversarial + SSIM cycle,
# classifier weight 0.3 on the reconstructed CT).
TRAIN_PRESETS: dict[str, dict] = {
    "paper-best": {
        "mode": "pe_cyclegan",
        "generator.backbone": "resnet",
        "generator.blocks": 50,
        "discriminator.kind": "patch",
        "discriminator.layers": 3,
        "adversarial_kind": "mse",
        "cycle_kind": "ssim",
        "lambda_classifier": 0.3,
        "supervision_target": "rec_ct",
    },
}

# Ablation matrices: one trained run per column of the corresponding
# comparison table. Columns needing classifier supervision require
# --classifier; the plain column ignores it.
ABLATION_PRESETS: dict[str, list[tuple[str, str, dict]]] = {
    "table2": [
        ("with_classifier", "Classification model",
         {"mode": "pe_cyclegan", "lambda_classifier": 0.3, "supervision_target": "rec_ct"}),
        ("without_classifier", "Without classification model", {"mode": "cyclegan"}),
    ],
    "table3": [
        ("ratio_1", "Ratio = 1",
         {"mode": "pe_cyclegan", "lambda_classifier": 1.0, "supervision_target": "rec_ct"}),
        ("ratio_0p3", "Ratio = 0.3",
         {"mode": "pe_cyclegan", "lambda_classifier": 0.3, "supervision_target": "rec_ct"}),
        ("ratio_0p1", "Ratio = 0.1",
         {"mode": "pe_cyclegan", "lambda_classifier": 0.1, "supervision_target": "rec_ct"}),
    ],
    "table4": [
        ("disc_3_layers", "3-layers",
         {"mode": "pe_cyclegan", "generator.blocks": 34, "discriminator.layers": 3,
          "lambda_classifier": 0.3, "supervision_target": "rec_ct"}),
        ("disc_4_layers", "4-layers",
         {"mode": "pe_cyclegan", "generator.blocks": 34, "discriminator.layers": 4,
          "lambda_classifier": 0.3, "supervision_target": "rec_ct"}),
    ],
    "table5": [
        ("bce_l1", "BCE+L1",
         {"mode": "pe_cyclegan", "adversarial_kind": "bce", "cycle_kind": "l1",
          "lambda_classifier": 0.3, "supervision_target": "rec_ct"}),
        ("bce_ssim", "BCE+SSIM",
         {"mode": "pe_cyclegan", "adversarial_kind": "bce", "cycle_kind": "ssim",
          "lambda_classifier": 0.3, "supervision_target": "rec_ct"}),
        ("mse_ssim", "MSE+SSIM",
         {"mode": "pe_cyclegan", "adversarial_kind": "mse", "cycle_kind": "ssim",
          "lambda_classifier": 0.3, "supervision_target": "rec_ct"}),
    ],
    "table6": [
        ("on_rec_ct", "On Rec_CT",
         {"mode": "pe_cyclegan", "lambda_classifier": 0.3, "supervision_target": "rec_ct"}),
        ("on_fake_ct", "On Fake_CT",
         {"mode": "pe_cyclegan", "lambda_classifier": 0.3, "supervision_target": "fake_ct"}),
    ],
}


def _resolve_train_config(args, file_cfg: dict, preset: dict, preset_name: str) -> training.TrainConfig:
    r = _Resolver(args, file_cfg, preset, preset_name)
    mode = r.get("mode", "mode", "cyclegan", pinned=True)
    gen = models.GeneratorConfig(
        backbone=r.get("gen", "generator.backbone", "resnet", pinned=True),
        n_residual_blocks=int(r.get("blocks", "generator.blocks", 9, pinned=True)),
        base_channels=int(r.get("base_channels", "generator.base_channels", 64)),
    )
    disc = models.DiscriminatorConfig(
        kind=r.get("disc", "discriminator.kind", "patch", pinned=True),
        n_layers=int(r.get("disc_layers", "discriminator.layers", 3, pinned=True)),
        base_channels=int(r.get("disc_base_channels", "discriminator.base_channels", 64)),
    )
    loss = training.LossConfig(
        adversarial_kind=r.get("adv_loss", "adversarial_kind", "bce", pinned=True),
        cycle_kind=r.get("cycle_loss", "cycle_kind", "l1", pinned=True),
        lambda_cycle=float(r.get("lambda_cycle", "lambda_cycle", 10.0)),
        lambda_identity=float(r.get("lambda_idt", "lambda_identity", 0.0)),
        lambda_classifier=float(r.get("lambda_cls", "lambda_classifier", 0.0, pinned=True)),
        supervision_target=r.get("target", "supervision_target", "none", pinned=True),
    )
    if mode == "pe_cyclegan" and loss.supervision_target == "none":
        loss.supervision_target = "rec_ct"
    cfg = training.TrainConfig(
        mode=mode,
        generator=gen,
        discriminator=disc,
        loss=loss,
        epochs=int(r.get("epochs", "epochs", 1)),
        learning_rate=float(r.get("lr", "learning_rate", 2e-4)),
        batch_size=int(r.get("batch_size", "batch_size", 1)),
        seed=int(r.get("seed", "seed", 0)),
        checkpoint_interval=int(r.get("checkpoint_interval", "checkpoint_interval", 0)),
        replay_buffer_size=int(r.get("replay_buffer", "replay_buffer_size", 50)),
        classifier_checkpoint=r.get("classifier", "classifier_checkpoint", None),
    )
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom(args) -> int:
    t0 = time.monotonic()
    file_cfg = _load_config_file(args.config)
    r = _Resolver(args, file_cfg, None)
    spec = phantom.PhantomSpec(
        image_size=int(r.get("image_size", "image_size", 256)),
        n_slices=int(r.get("slices", "n_slices", 16)),
        vessel_tree_depth=int(r.get("depth", "vessel_tree_depth", 4)),
        vessel_brightening_delta=float(r.get("delta", "vessel_brightening_delta", 300.0)),
        pe_lesion_probability=float(r.get("pe_prob", "pe_lesion_probability", 0.5)),
        pe_lesion_darkening=float(r.get("darkening", "pe_lesion_darkening", 250.0)),
        noise_sigma=float(r.get("noise_sigma", "noise_sigma", 8.0)),
        seed=int(r.get("seed", "seed", 0)),
    )
    out = Path(args.out)
    manifest = phantom.generate_dataset(spec, args.n, out)
    _say(f"phantom: wrote {manifest.n_studies} studies to {out}")
    _write_run_manifest(
        out, "phantom", {"spec": manifest.spec, "n_studies": args.n}, spec.seed, {}, _rel_artifacts(out), t0
    )
    return 0


def cmd_preprocess(args) -> int:
    t0 = time.monotonic()
    file_cfg = _load_config_file(args.config)
    r = _Resolver(args, file_cfg, None)
    window_text = r.get("window", "window", None)
    if window_text is not None:
        window = _parse_window(window_text)
    else:
        window = ingest.HuWindow(
            float(r.get("window_low", "window.low", -1000.0)),
            float(r.get("window_high", "window.high", 400.0)),
        )
    interval_text = r.get("interval", "interval", None)
    if interval_text is None:
        start = r.get("interval_start", "interval.start", None)
        end = r.get("interval_end", "interval.end", None)
        interval = (int(start), int(end)) if start is not None and end is not None else None
    else:
        interval = _parse_interval(interval_text)
    size = int(r.get("size", "image_size", 256))
    seed = int(r.get("seed", "seed", 0))
    out = Path(args.out)
    result = ingest.preprocess_dataset(args.data, out, window=window, size=size, interval=interval, seed=seed)
    _say(f"preprocess: {len(result.manifest['studies'])} studies -> {out}")
    _write_run_manifest(
        out,
        "preprocess",
        {
            "data": str(args.data),
            "window": {"low": window.low, "high": window.high},
            "image_size": size,
            "interval": list(interval) if interval else None,
        },
        seed,
        {"data": args.data},
        _rel_artifacts(out),
        t0,
    )
    return 0


def cmd_pretrain_classifier(args) -> int:
    t0 = time.monotonic()
    file_cfg = _load_config_file(args.config)
    r = _Resolver(args, file_cfg, None)
    cfg = training.ClassifierTrainConfig(
        classifier=models.ClassifierConfig(
            depth=int(r.get("depth", "classifier.depth", 2)),
            base_channels=int(r.get("base_channels", "classifier.base_channels", 16)),
        ),
        epochs=int(r.get("epochs", "epochs", 15)),
        learning_rate=float(r.get("lr", "learning_rate", 1e-3)),
        batch_size=int(r.get("batch_size", "batch_size", 8)),
        seed=int(r.get("seed", "seed", 0)),
        val_fraction=float(r.get("val_fraction", "val_fraction", 0.25)),
    )
    images, labels, study_ids = ingest.load_labeled_ct_slices(args.data)
    out = Path(args.out)
    artifacts = training.pretrain_classifier(cfg, images, labels, study_ids, out)
    _say(f"pretrain-classifier: val_accuracy={artifacts.val_accuracy:.3f} -> {out}")
    _write_run_manifest(
        out,
        "pretrain-classifier",
        {"data": str(args.data), "train_config": cfg.to_dict(), "val_accuracy": artifacts.val_accuracy},
        cfg.seed,
        {"data": args.data},
        _rel_artifacts(out),
        t0,
    )
    return 0


def cmd_train(args) -> int:
    t0 = time.monotonic()
    file_cfg = _load_config_file(args.config)
    preset_name = args.preset or ""
    out = Path(args.out)

    if preset_name in ABLATION_PRESETS:
        runs = []
        for slug, label, preset in ABLATION_PRESETS[preset_name]:
            cfg = _resolve_train_config(args, file_cfg, preset, f"{preset_name}:{slug}")
            run_dir = out / slug
            _run_one_training(cfg, args, run_dir)
            runs.append({"slug": slug, "label": label, "run_dir": str(run_dir.relative_to(out))})
            _say(f"train[{preset_name}]: finished column {label!r}")
        _write_run_manifest(
            out,
            "train",
            {"preset": preset_name, "columns": runs, "data": str(args.data)},
            int(args.seed or 0),
            {"data": args.data},
            _rel_artifacts(out),
            t0,
        )
        return 0

    preset = TRAIN_PRESETS.get(preset_name)
    if preset_name and preset is None:
        raise ValueError(
            f"unknown preset {preset_name!r}; choose from "
            f"{sorted(TRAIN_PRESETS) + sorted(ABLATION_PRESETS)}"
        )
    cfg = _resolve_train_config(args, file_cfg, preset or {}, preset_name)
    _run_one_training(cfg, args, out)
    _write_run_manifest(
        out,
        "train",
        {"preset": preset_name or None, "train_config": cfg.to_dict(), "data": str(args.data)},
        cfg.seed,
        {"data": args.data},
        _rel_artifacts(out),
        t0,
    )
    return 0


def _run_one_training(cfg: training.TrainConfig, args, run_dir: Path) -> training.RunArtifacts:
    pairing = args.pairing or ("paired" if cfg.mode == "pix2pix" else "unpaired")
    dataset = ingest.load_preprocessed(args.data, mode=pairing, seed=cfg.seed)
    if cfg.mode == "pix2pix":
        return training.train_pix2pix(cfg, dataset, run_dir)
    if cfg.mode == "pe_cyclegan":
        return training.train_pe_cyclegan(cfg, dataset, run_dir)
    return training.train_cyclegan(cfg, dataset, run_dir)


def _resolve_generator_checkpoint(path: Path) -> Path:
    """Accept a model dir, an epoch dir, or a whole run dir."""
    path = Path(path)
    if (path / "manifest.json").exists():
        return path
    for name in ("gen_a", "gen"):
        if (path / name / "manifest.json").exists():
            return path / name
    ckpts = sorted((path / "checkpoints").glob("epoch_*")) if (path / "checkpoints").is_dir() else []
    if ckpts:
        return _resolve_generator_checkpoint(ckpts[-1])
    raise FileNotFoundError(f"no generator checkpoint found under {path}")


def cmd_generate(args) -> int:
    t0 = time.monotonic()
    ckpt = _resolve_generator_checkpoint(Path(args.checkpoint))
    dataset = ingest.load_preprocessed(args.data, mode="unpaired", seed=int(args.seed or 0))
    out = Path(args.out)
    outputs = training.generate(ckpt, dataset.ct_items, out)
    _say(f"generate: {len(outputs)} slices -> {out}")
    _write_run_manifest(
        out,
        "generate",
        {"checkpoint": str(args.checkpoint), "data": str(args.data)},
        int(args.seed or 0),
        {"checkpoint": ckpt, "data": args.data},
        _rel_artifacts(out),
        t0,
    )
    return 0


def cmd_evaluate(args) -> int:
    t0 = time.monotonic()
    file_cfg = _load_config_file(args.config)
    r = _Resolver(args, file_cfg, None)
    config = EvalConfig(
        align=bool(args.align or file_cfg.get("align", False)),
        extractor=r.get("extractor", "extractor", "tiny"),
        lpips_distance=r.get("lpips_distance", "lpips_distance", "cosine"),
    )
    out = Path(args.out)
    report = evaluate_run(args.generated, args.reference, config, out_dir=out)
    agg = report.aggregate
    _say(
        "evaluate: "
        + " ".join(f"{k}={reporting.format_metric(k, agg[k])}" for k in ("PSNR", "SSIM", "MAE", "LPIPS", "FID"))
    )
    _write_run_manifest(
        out,
        "evaluate",
        {
            "generated": str(args.generated),
            "reference": str(args.reference),
            "align": config.align,
            "extractor": config.extractor,
        },
        int(args.seed or 0),
        {"generated": args.generated, "reference": args.reference},
        _rel_artifacts(out),
        t0,
    )
    return 0


def cmd_report(args) -> int:
    t0 = time.monotonic()
    eval_dirs = [Path(d) for d in args.runs]
    values = [reporting.load_run_aggregate(d) for d in eval_dirs]
    labels = args.labels or [d.name for d in eval_dirs]
    if len(labels) != len(eval_dirs):
        raise ValueError(f"got {len(labels)} labels for {len(eval_dirs)} runs")

    pair_sets = [reporting.load_run_pair_names(d) for d in eval_dirs]
    for d, names in zip(eval_dirs[1:], pair_sets[1:]):
        if names != pair_sets[0]:
            raise ValueError(f"run {d} evaluated a different pair set than {eval_dirs[0]}")

    if args.preset:
        table = reporting.render_preset_table(args.preset, values)
    else:
        table = reporting.render_table(list(zip(labels, values)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.txt").write_text(table + "\n")
    _say(table)

    grids = []
    if args.generated:
        grids = reporting.comparison_grids(
            args.generated, out / "grids", input_dir=args.inputs, reference_dir=args.reference
        )
        _say(f"report: wrote {len(grids)} comparison grids")
    _write_run_manifest(
        out,
        "report",
        {"runs": [str(d) for d in eval_dirs], "labels": labels, "preset": args.preset},
        int(args.seed or 0),
        {f"run_{i}": d for i, d in enumerate(eval_dirs)},
        _rel_artifacts(out),
        t0,
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ct2ctpa", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ct2ctpa {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root random seed")
    common.add_argument("--config", default=None, help="flat JSON config file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="generate a synthetic paired dataset")
    p.add_argument("--n", type=int, required=True, help="number of studies")
    p.add_argument("--image-size", dest="image_size", type=int, default=None)
    p.add_argument("--slices", type=int, default=None)
    p.add_argument("--depth", type=int, default=None, help="vessel tree depth")
    p.add_argument("--delta", type=float, default=None, help="vessel brightening HU")
    p.add_argument("--pe-prob", dest="pe_prob", type=float, default=None)
    p.add_argument("--darkening", type=float, default=None, help="lesion darkening HU")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("preprocess", parents=[common], help="window, resize, and export slices")
    p.add_argument("--data", required=True, help="dataset root (phantom layout or DICOM)")
    p.add_argument("--window", default=None, help="HU window 'low:high'")
    p.add_argument("--size", type=int, default=None, help="output pixels per side")
    p.add_argument("--interval", default=None, help="slice interval 'start:end' (end exclusive)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain-classifier", parents=[common], help="train the PE classifier")
    p.add_argument("--data", required=True, help="preprocessed dataset directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--base-channels", dest="base_channels", type=int, default=None)
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=None)
    p.set_defaults(func=cmd_pretrain_classifier)

    p = sub.add_parser("train", parents=[common], help="train a translation model")
    p.add_argument("--data", required=True, help="preprocessed dataset directory")
    p.add_argument("--mode", choices=training.MODES, default=None)
    p.add_argument("--preset", default=None, help="paper-best or table2..table6")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--gen", choices=("resnet", "unet"), default=None)
    p.add_argument("--blocks", type=int, default=None, help="residual blocks (9/34/50)")
    p.add_argument("--base-channels", dest="base_channels", type=int, default=None)
    p.add_argument("--disc", choices=("patch", "pixel"), default=None)
    p.add_argument("--disc-layers", dest="disc_layers", type=int, default=None)
    p.add_argument("--disc-base-channels", dest="disc_base_channels", type=int, default=None)
    p.add_argument("--adv-loss", dest="adv_loss", choices=("bce", "mse"), default=None)
    p.add_argument("--cycle-loss", dest="cycle_loss", choices=("l1", "ssim"), default=None)
    p.add_argument("--lambda-cycle", dest="lambda_cycle", type=float, default=None)
    p.add_argument("--lambda-idt", dest="lambda_idt", type=float, default=None)
    p.add_argument("--lambda-cls", dest="lambda_cls", type=float, default=None)
    p.add_argument("--target", choices=("rec_ct", "fake_ct"), default=None)
    p.add_argument("--classifier", default=None, help="pretrained classifier checkpoint dir")
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int, default=None)
    p.add_argument("--pairing", choices=("paired", "unpaired"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="run a trained generator over CT slices")
    p.add_argument("--checkpoint", required=True, help="generator/run checkpoint directory")
    p.add_argument("--data", required=True, help="preprocessed dataset directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="score generated against reference exports")
    p.add_argument("--generated", required=True, help="directory of generated PNGs")
    p.add_argument("--reference", required=True, help="directory of reference PNGs")
    p.add_argument("--align", action="store_true", help="align candidates before scoring")
    p.add_argument("--extractor", default=None, help="tiny, vgg16, or inception_v3")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="comparison tables and grids over runs")
    p.add_argument("--runs", nargs="+", required=True, help="evaluated run directories")
    p.add_argument("--labels", nargs="+", default=None, help="column labels (default: dir names)")
    p.add_argument("--preset", default=None, help="table1..table6 layout")
    p.add_argument("--generated", nargs="+", default=None, help="generated dirs for image grids")
    p.add_argument("--inputs", default=None, help="input CT export dir for grids")
    p.add_argument("--reference", default=None, help="reference CTPA export dir for grids")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    global QUIET
    parser = build_parser()
    args = parser.parse_args(argv)
    QUIET = bool(getattr(args, "quiet", False))
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"ct2ctpa {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
