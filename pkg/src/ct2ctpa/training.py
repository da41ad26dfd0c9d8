"""The three trainers (pix2pix, cyclegan, pe-cyclegan) plus classifier
pretraining and pure inference.

Every random stream (weight init, epoch shuffles, replay buffers, splits)
derives from the single config seed, so runs are reproducible end to end.
Run directories hold ``config.json``, ``losses.csv`` (one row per step,
full-precision floats), ``checkpoints/epoch_<k>/<model>/``, ``samples/``
grids, and a final ``manifest.json``; ``wall_time_s`` in the manifest is the
only field that varies between identical runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import models
from .ingest import NormalizedImage, PairedSlices, SliceDataset, export_png
from .losses import adversarial_loss, classifier_supervision_loss, cycle_loss
from .seeds import derive_seed, rng_for

MODES = ("pix2pix", "cyclegan", "pe_cyclegan")
SUPERVISION_TARGETS = ("rec_ct", "fake_ct", "none")


@dataclass
class LossConfig:
    adversarial_kind: str = "bce"
    cycle_kind: str = "l1"
    lambda_cycle: float = 10.0
    lambda_identity: float = 0.0
    lambda_classifier: float = 0.0
    supervision_target: str = "none"

    def validate(self) -> None:
        if self.adversarial_kind not in ("bce", "mse"):
            raise ValueError(f"adversarial_kind must be bce or mse, got {self.adversarial_kind!r}")
        if self.cycle_kind not in ("l1", "ssim"):
            raise ValueError(f"cycle_kind must be l1 or ssim, got {self.cycle_kind!r}")
        if self.lambda_cycle < 0 or self.lambda_identity < 0:
            raise ValueError("loss weights must be nonnegative")
        if not 0.0 <= self.lambda_classifier <= 1.0:
            raise ValueError(f"lambda_classifier must be in [0, 1], got {self.lambda_classifier}")
        if self.supervision_target not in SUPERVISION_TARGETS:
            raise ValueError(
                f"supervision_target must be one of {SUPERVISION_TARGETS}, got {self.supervision_target!r}"
            )


@dataclass
class TrainConfig:
    mode: str = "cyclegan"
    generator: models.GeneratorConfig = field(default_factory=models.GeneratorConfig)
    discriminator: models.DiscriminatorConfig = field(default_factory=models.DiscriminatorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 1
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 1
    seed: int = 0
    checkpoint_interval: int = 0  # epochs between checkpoints; 0 keeps only the final one
    sample_interval: int = 0  # epochs between sample grids; 0 samples with checkpoints
    replay_buffer_size: int = 50
    classifier_checkpoint: str | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.generator.validate()
        self.discriminator.validate()
        self.loss.validate()
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mode == "pe_cyclegan":
            if not self.classifier_checkpoint:
                raise ValueError("pe_cyclegan mode requires a pretrained classifier checkpoint")
            if self.loss.supervision_target == "none":
                raise ValueError("pe_cyclegan mode requires supervision_target rec_ct or fake_ct")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        raw["generator"] = models.GeneratorConfig(**raw["generator"])
        raw["discriminator"] = models.DiscriminatorConfig(**raw["discriminator"])
        raw["loss"] = LossConfig(**raw["loss"])
        return cls(**raw)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class RunArtifacts:
    run_dir: Path
    config: TrainConfig
    losses_csv: Path
    checkpoint_dirs: list[Path]
    manifest_path: Path

    def final_checkpoint(self) -> Path:
        return self.checkpoint_dirs[-1]


class ReplayBuffer:
    """Pool of past fakes; discriminators never see real images through it."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.images: list[torch.Tensor] = []

    def push_and_pop(self, batch: torch.Tensor) -> torch.Tensor:
        out = []
        for image in batch.detach():
            image = image.unsqueeze(0)
            if self.capacity == 0:
                out.append(image)
            elif len(self.images) < self.capacity:
                self.images.append(image)
                out.append(image)
            elif self.rng.random() < 0.5:
                idx = int(self.rng.integers(0, self.capacity))
                out.append(self.images[idx])
                self.images[idx] = image
            else:
                out.append(image)
        return torch.cat(out)


class LossLog:
    """Accumulates per-step named scalars and writes losses.csv."""

    def __init__(self, columns: list[str]):
        self.columns = columns
        self.rows: list[list] = []

    def append(self, step: int, epoch: int, values: dict) -> None:
        row = [step, epoch] + [values[c] for c in self.columns]
        self.rows.append(row)

    def write(self, path: Path) -> None:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "epoch", *self.columns])
            for row in self.rows:
                writer.writerow([row[0], row[1]] + [self._fmt(v) for v in row[2:]])

    @staticmethod
    def _fmt(v):
        return repr(float(v)) if isinstance(v, (int, float, np.floating)) else str(v)


def _to_tensor(img: NormalizedImage) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.pixels))[None]


def _batches(items: list[PairedSlices], batch_size: int):
    # Trailing partial batches are dropped so every step sees a full batch.
    for start in range(0, len(items) - batch_size + 1, batch_size):
        yield items[start : start + batch_size]


def _stack_ct(chunk: list[PairedSlices]) -> torch.Tensor:
    return torch.stack([_to_tensor(it.ct) for it in chunk])


def _stack_ctpa(chunk: list[PairedSlices]) -> torch.Tensor:
    return torch.stack([_to_tensor(it.ctpa) for it in chunk])


def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def _label_tensor(labels: list, like: torch.Tensor) -> torch.Tensor:
    if any(lb is None for lb in labels):
        raise ValueError("classifier supervision needs has_pe labels for every item in the batch")
    return torch.tensor([[float(bool(lb))] for lb in labels], dtype=like.dtype)


def _save_grid(path: Path, panels: list[torch.Tensor]) -> None:
    """One row per example, one column per panel tensor (N,1,H,W) in [-1,1]."""
    arrays = [p.detach().numpy()[:, 0] for p in panels]
    rows = [np.concatenate([a[i] for a in arrays], axis=1) for i in range(arrays[0].shape[0])]
    export_png(np.clip(np.concatenate(rows, axis=0), -1.0, 1.0), path)


def _run_dirs(out_dir: Path) -> tuple[Path, Path, Path]:
    ckpt = out_dir / "checkpoints"
    samples = out_dir / "samples"
    ckpt.mkdir(parents=True, exist_ok=True)
    samples.mkdir(parents=True, exist_ok=True)
    return out_dir, ckpt, samples


def _write_manifest(
    out_dir: Path, cfg: TrainConfig, checkpoints: list[Path], wall_time: float, extra: dict | None = None
) -> Path:
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "checkpoints": [str(p.relative_to(out_dir)) for p in checkpoints],
        "losses_csv": "losses.csv",
        "wall_time_s": wall_time,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return path


def _checkpoint_epochs(cfg: TrainConfig) -> set[int]:
    if cfg.checkpoint_interval > 0:
        marks = set(range(cfg.checkpoint_interval, cfg.epochs + 1, cfg.checkpoint_interval))
    else:
        marks = set()
    marks.add(cfg.epochs)
    return marks


# ---------------------------------------------------------------------------
# cyclegan / pe-cyclegan


CYCLEGAN_COLUMNS = [
    "loss_d_a",
    "loss_d_b",
    "loss_g_adv_a",
    "loss_g_adv_b",
    "loss_g_cycle_a",
    "loss_g_cycle_b",
    "loss_g_idt",
    "loss_g_cls",
    "loss_g_total",
    "supervised_role",
]


def train_cyclegan(
    cfg: TrainConfig, dataset: SliceDataset, out_dir: Path | str, classifier=None
) -> RunArtifacts:
    """Two-cycle adversarial training; optionally adds frozen-classifier
    supervision on the image named by ``loss.supervision_target``.

    Both cycles run each step: Fake_CTPA = G_A(ct) -> Rec_CT = G_B(Fake_CTPA)
    and Fake_CT = G_B(ctpa) -> Rec_CTPA = G_A(Fake_CT). Discriminator fake
    batches come from replay buffers only.
    """
    cfg.validate()
    if cfg.mode not in ("cyclegan", "pe_cyclegan"):
        raise ValueError(f"train_cyclegan drives cyclegan modes, got {cfg.mode!r}")
    out_dir, ckpt_root, samples_dir = _run_dirs(Path(out_dir))
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2))

    lam = cfg.loss
    use_classifier = classifier is not None and lam.lambda_classifier > 0.0
    if use_classifier:
        models.freeze(classifier)

    g_a = models.build_generator(cfg.generator, derive_seed(cfg.seed, "init", "gen_a"))
    g_b = models.build_generator(cfg.generator, derive_seed(cfg.seed, "init", "gen_b"))
    d_a = models.build_discriminator(cfg.discriminator, derive_seed(cfg.seed, "init", "disc_a"))
    d_b = models.build_discriminator(cfg.discriminator, derive_seed(cfg.seed, "init", "disc_b"))

    opt_g = torch.optim.Adam(
        list(g_a.parameters()) + list(g_b.parameters()),
        lr=cfg.learning_rate,
        betas=(cfg.beta1, cfg.beta2),
    )
    opt_d = torch.optim.Adam(
        list(d_a.parameters()) + list(d_b.parameters()),
        lr=cfg.learning_rate,
        betas=(cfg.beta1, cfg.beta2),
    )
    pool_a = ReplayBuffer(cfg.replay_buffer_size, rng_for(cfg.seed, "pool", "a"))
    pool_b = ReplayBuffer(cfg.replay_buffer_size, rng_for(cfg.seed, "pool", "b"))

    log = LossLog(CYCLEGAN_COLUMNS)
    checkpoints: list[Path] = []
    marks = _checkpoint_epochs(cfg)
    sample_every = cfg.sample_interval
    t0 = time.monotonic()
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for chunk in _batches(dataset.epoch_items(epoch - 1), cfg.batch_size):
            real_ct = _stack_ct(chunk)
            real_ctpa = _stack_ctpa(chunk)

            fake_ctpa = g_a(real_ct)
            rec_ct = g_b(fake_ctpa)
            fake_ct = g_b(real_ctpa)
            rec_ctpa = g_a(fake_ct)

            _set_requires_grad(d_a, False)
            _set_requires_grad(d_b, False)
            adv_a = adversarial_loss(lam.adversarial_kind, d_a(fake_ctpa), True)
            adv_b = adversarial_loss(lam.adversarial_kind, d_b(fake_ct), True)
            cyc_a = lam.lambda_cycle * cycle_loss(lam.cycle_kind, rec_ct, real_ct)
            cyc_b = lam.lambda_cycle * cycle_loss(lam.cycle_kind, rec_ctpa, real_ctpa)
            if lam.lambda_identity > 0:
                idt = lam.lambda_identity * (
                    cycle_loss("l1", g_a(real_ctpa), real_ctpa)
                    + cycle_loss("l1", g_b(real_ct), real_ct)
                )
            else:
                idt = real_ct.new_zeros(())
            role = ""
            if use_classifier:
                if lam.supervision_target == "rec_ct":
                    supervised, labels = rec_ct, [it.ct_has_pe for it in chunk]
                else:
                    supervised, labels = fake_ct, [it.ctpa_has_pe for it in chunk]
                role = lam.supervision_target
                target = _label_tensor(labels, supervised)
                logit = classifier(supervised)
                cls = lam.lambda_classifier * torch.nn.functional.binary_cross_entropy_with_logits(
                    logit, target
                )
            else:
                cls = real_ct.new_zeros(())
            total_g = adv_a + adv_b + cyc_a + cyc_b + idt + cls
            opt_g.zero_grad()
            total_g.backward()
            opt_g.step()

            _set_requires_grad(d_a, True)
            _set_requires_grad(d_b, True)
            loss_d_a = 0.5 * (
                adversarial_loss(lam.adversarial_kind, d_a(real_ctpa), True)
                + adversarial_loss(lam.adversarial_kind, d_a(pool_a.push_and_pop(fake_ctpa)), False)
            )
            loss_d_b = 0.5 * (
                adversarial_loss(lam.adversarial_kind, d_b(real_ct), True)
                + adversarial_loss(lam.adversarial_kind, d_b(pool_b.push_and_pop(fake_ct)), False)
            )
            opt_d.zero_grad()
            (loss_d_a + loss_d_b).backward()
            opt_d.step()

            step += 1
            log.append(
                step,
                epoch,
                {
                    "loss_d_a": loss_d_a.item(),
                    "loss_d_b": loss_d_b.item(),
                    "loss_g_adv_a": adv_a.item(),
                    "loss_g_adv_b": adv_b.item(),
                    "loss_g_cycle_a": cyc_a.item(),
                    "loss_g_cycle_b": cyc_b.item(),
                    "loss_g_idt": idt.item(),
                    "loss_g_cls": cls.item(),
                    "loss_g_total": total_g.item(),
                    "supervised_role": role,
                },
            )

        if epoch in marks or (sample_every and epoch % sample_every == 0):
            with torch.no_grad():
                probe = dataset.epoch_items(0)[: min(4, len(dataset))]
                p_ct, p_ctpa = _stack_ct(probe), _stack_ctpa(probe)
                p_fake_ctpa = g_a(p_ct)
                p_rec_ct = g_b(p_fake_ctpa)
                p_fake_ct = g_b(p_ctpa)
                p_rec_ctpa = g_a(p_fake_ct)
                _save_grid(
                    samples_dir / f"epoch_{epoch:03d}.png",
                    [p_ct, p_fake_ctpa, p_rec_ct, p_ctpa, p_fake_ct, p_rec_ctpa],
                )
        if epoch in marks:
            epoch_dir = ckpt_root / f"epoch_{epoch:03d}"
            for name, model, kind, mcfg in (
                ("gen_a", g_a, "generator", cfg.generator),
                ("gen_b", g_b, "generator", cfg.generator),
                ("disc_a", d_a, "discriminator", cfg.discriminator),
                ("disc_b", d_b, "discriminator", cfg.discriminator),
            ):
                models.save_checkpoint(epoch_dir / name, model, kind, mcfg, seed=cfg.seed)
            checkpoints.append(epoch_dir)

    losses_csv = out_dir / "losses.csv"
    log.write(losses_csv)
    manifest = _write_manifest(out_dir, cfg, checkpoints, time.monotonic() - t0)
    return RunArtifacts(out_dir, cfg, losses_csv, checkpoints, manifest)


def train_pe_cyclegan(
    cfg: TrainConfig, dataset: SliceDataset, out_dir: Path | str
) -> RunArtifacts:
    """CycleGAN plus frozen-classifier supervision loaded from the config's
    classifier checkpoint; reduces exactly to train_cyclegan at lambda 0."""
    cfg.validate()
    if cfg.mode != "pe_cyclegan":
        raise ValueError(f"train_pe_cyclegan requires mode=pe_cyclegan, got {cfg.mode!r}")
    classifier, _ = models.load_checkpoint(cfg.classifier_checkpoint)
    models.freeze(classifier)
    return train_cyclegan(cfg, dataset, out_dir, classifier=classifier)


# ---------------------------------------------------------------------------
# pix2pix

PIX2PIX_COLUMNS = [
    "loss_d_pixel",
    "loss_d_patch",
    "loss_g_adv_pixel",
    "loss_g_adv_patch",
    "loss_g_recon",
    "loss_g_total",
]


def train_pix2pix(cfg: TrainConfig, dataset: SliceDataset, out_dir: Path | str) -> RunArtifacts:
    """Paired conditional training with both a pixel and a patch discriminator.

    The generator maps CT to CTPA; each discriminator judges the (CT, CTPA)
    channel pair. Reconstruction is weighted L1 against the registered CTPA.
    """
    cfg.validate()
    if cfg.mode != "pix2pix":
        raise ValueError(f"train_pix2pix requires mode=pix2pix, got {cfg.mode!r}")
    if dataset.mode != "paired":
        raise ValueError("pix2pix training requires a paired dataset")
    out_dir, ckpt_root, samples_dir = _run_dirs(Path(out_dir))
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2))

    lam = cfg.loss
    gen = models.build_generator(cfg.generator, derive_seed(cfg.seed, "init", "gen"))
    patch_cfg = (
        cfg.discriminator
        if cfg.discriminator.kind == "patch"
        else models.DiscriminatorConfig(kind="patch", base_channels=cfg.discriminator.base_channels)
    )
    pixel_cfg = models.DiscriminatorConfig(kind="pixel", base_channels=cfg.discriminator.base_channels)
    d_patch = models.build_discriminator(
        patch_cfg, derive_seed(cfg.seed, "init", "disc_patch"), in_channels=2
    )
    d_pixel = models.build_discriminator(
        pixel_cfg, derive_seed(cfg.seed, "init", "disc_pixel"), in_channels=2
    )
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(
        list(d_patch.parameters()) + list(d_pixel.parameters()),
        lr=cfg.learning_rate,
        betas=(cfg.beta1, cfg.beta2),
    )

    log = LossLog(PIX2PIX_COLUMNS)
    checkpoints: list[Path] = []
    marks = _checkpoint_epochs(cfg)
    t0 = time.monotonic()
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for chunk in _batches(dataset.epoch_items(epoch - 1), cfg.batch_size):
            real_ct = _stack_ct(chunk)
            real_ctpa = _stack_ctpa(chunk)
            fake_ctpa = gen(real_ct)

            _set_requires_grad(d_patch, False)
            _set_requires_grad(d_pixel, False)
            fake_pair = torch.cat([real_ct, fake_ctpa], dim=1)
            adv_pixel = adversarial_loss(lam.adversarial_kind, d_pixel(fake_pair), True)
            adv_patch = adversarial_loss(lam.adversarial_kind, d_patch(fake_pair), True)
            recon = lam.lambda_cycle * cycle_loss("l1", fake_ctpa, real_ctpa)
            total_g = adv_pixel + adv_patch + recon
            opt_g.zero_grad()
            total_g.backward()
            opt_g.step()

            _set_requires_grad(d_patch, True)
            _set_requires_grad(d_pixel, True)
            real_pair = torch.cat([real_ct, real_ctpa], dim=1)
            fake_pair = fake_pair.detach()
            loss_d_pixel = 0.5 * (
                adversarial_loss(lam.adversarial_kind, d_pixel(real_pair), True)
                + adversarial_loss(lam.adversarial_kind, d_pixel(fake_pair), False)
            )
            loss_d_patch = 0.5 * (
                adversarial_loss(lam.adversarial_kind, d_patch(real_pair), True)
                + adversarial_loss(lam.adversarial_kind, d_patch(fake_pair), False)
            )
            opt_d.zero_grad()
            (loss_d_pixel + loss_d_patch).backward()
            opt_d.step()

            step += 1
            log.append(
                step,
                epoch,
                {
                    "loss_d_pixel": loss_d_pixel.item(),
                    "loss_d_patch": loss_d_patch.item(),
                    "loss_g_adv_pixel": adv_pixel.item(),
                    "loss_g_adv_patch": adv_patch.item(),
                    "loss_g_recon": recon.item(),
                    "loss_g_total": total_g.item(),
                },
            )
        if epoch in marks:
            with torch.no_grad():
                probe = dataset.epoch_items(0)[: min(4, len(dataset))]
                p_ct, p_ctpa = _stack_ct(probe), _stack_ctpa(probe)
                _save_grid(samples_dir / f"epoch_{epoch:03d}.png", [p_ct, gen(p_ct), p_ctpa])
            epoch_dir = ckpt_root / f"epoch_{epoch:03d}"
            models.save_checkpoint(epoch_dir / "gen", gen, "generator", cfg.generator, seed=cfg.seed)
            models.save_checkpoint(
                epoch_dir / "disc_patch", d_patch, "discriminator", patch_cfg, seed=cfg.seed
            )
            models.save_checkpoint(
                epoch_dir / "disc_pixel", d_pixel, "discriminator", pixel_cfg, seed=cfg.seed
            )
            checkpoints.append(epoch_dir)

    losses_csv = out_dir / "losses.csv"
    log.write(losses_csv)
    manifest = _write_manifest(out_dir, cfg, checkpoints, time.monotonic() - t0)
    return RunArtifacts(out_dir, cfg, losses_csv, checkpoints, manifest)


# ---------------------------------------------------------------------------
# classifier pretraining


@dataclass
class ClassifierTrainConfig:
    classifier: models.ClassifierConfig = field(default_factory=models.ClassifierConfig)
    epochs: int = 40
    learning_rate: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    val_fraction: float = 0.25
    augment_flips: bool = True  # seeded horizontal/vertical flips during training
    augment_max_shift: int = 4  # seeded circular translations, pixels

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ClassifierArtifacts:
    checkpoint_dir: Path
    val_accuracy: float
    n_train: int
    n_val: int


def _split_by_study(study_ids: list[str], labels: list[bool], val_fraction: float, seed: int):
    """Stratified train/val split at study granularity."""
    rng = rng_for(seed, "split")
    by_label: dict[bool, list[str]] = {True: [], False: []}
    for sid in sorted(set(study_ids)):
        label = next(lb for s, lb in zip(study_ids, labels) if s == sid)
        by_label[bool(label)].append(sid)
    val_studies: set[str] = set()
    for group in by_label.values():
        group = list(rng.permutation(group))
        n_val = max(1, int(round(val_fraction * len(group)))) if group else 0
        val_studies.update(group[:n_val])
    return val_studies


def pretrain_classifier(
    cfg: ClassifierTrainConfig,
    images: list[NormalizedImage],
    labels: list[bool],
    study_ids: list[str],
    out_dir: Path | str,
) -> ClassifierArtifacts:
    """Train the PE classifier on labeled CT slices and emit a frozen checkpoint.

    The validation split is stratified by study; the manifest records the
    held-out accuracy. A dataset with a single class cannot be trained.
    """
    if len(images) != len(labels) or len(images) != len(study_ids):
        raise ValueError("images, labels, and study_ids must be parallel lists")
    if len(set(bool(lb) for lb in labels)) < 2:
        raise ValueError("classifier pretraining needs both PE and no-PE studies")
    cfg.classifier.validate()

    val_studies = _split_by_study(study_ids, labels, cfg.val_fraction, cfg.seed)
    train_idx = [i for i, s in enumerate(study_ids) if s not in val_studies]
    val_idx = [i for i, s in enumerate(study_ids) if s in val_studies]
    if not train_idx or not val_idx:
        raise ValueError("train/val split left one side empty; need more studies")

    clf = models.build_classifier(cfg.classifier, derive_seed(cfg.seed, "init", "classifier"))
    opt = torch.optim.Adam(clf.parameters(), lr=cfg.learning_rate)
    for epoch in range(cfg.epochs):
        rng = rng_for(cfg.seed, "epoch", epoch)
        order = rng.permutation(train_idx)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tensors = []
            for i in idx:
                t = _to_tensor(images[i])
                if cfg.augment_flips:
                    if rng.random() < 0.5:
                        t = torch.flip(t, dims=(2,))
                    if rng.random() < 0.5:
                        t = torch.flip(t, dims=(1,))
                if cfg.augment_max_shift:
                    m = cfg.augment_max_shift
                    dy = int(rng.integers(-m, m + 1))
                    dx = int(rng.integers(-m, m + 1))
                    t = torch.roll(t, shifts=(dy, dx), dims=(1, 2))
                tensors.append(t)
            batch = torch.stack(tensors)
            target = torch.tensor([[float(bool(labels[i]))] for i in idx])
            loss = torch.nn.functional.binary_cross_entropy_with_logits(clf(batch), target)
            opt.zero_grad()
            loss.backward()
            opt.step()

    clf.eval()
    correct = 0
    with torch.no_grad():
        for i in val_idx:
            p = float(clf.probability(_to_tensor(images[i])[None]))
            correct += int((p >= 0.5) == bool(labels[i]))
    accuracy = correct / len(val_idx)

    models.freeze(clf)
    ckpt = models.save_checkpoint(
        Path(out_dir),
        clf,
        "classifier",
        cfg.classifier,
        seed=cfg.seed,
        extra={
            "val_accuracy": accuracy,
            "n_train": len(train_idx),
            "n_val": len(val_idx),
            "train_config": cfg.to_dict(),
        },
    )
    return ClassifierArtifacts(ckpt, accuracy, len(train_idx), len(val_idx))


def evaluate_classifier(checkpoint_dir: Path | str, images, labels) -> float:
    """Held-out accuracy of a saved classifier checkpoint (deterministic)."""
    clf, _ = models.load_checkpoint(checkpoint_dir)
    clf.eval()
    correct = 0
    with torch.no_grad():
        for img, lb in zip(images, labels):
            p = float(clf.probability(_to_tensor(img)[None]))
            correct += int((p >= 0.5) == bool(lb))
    return correct / len(images)


def classifier_loss_on(checkpoint_dir: Path | str, images, labels) -> float:
    """Mean supervision BCE of a saved classifier over labeled images."""
    clf, _ = models.load_checkpoint(checkpoint_dir)
    models.freeze(clf)
    total = 0.0
    with torch.no_grad():
        for img, lb in zip(images, labels):
            total += float(classifier_supervision_loss(clf, _to_tensor(img)[None], lb))
    return total / len(images)


# ---------------------------------------------------------------------------
# inference


def generate(
    checkpoint_dir: Path | str,
    ct_items: list[tuple[str, NormalizedImage]],
    out_dir: Path | str | None = None,
) -> list[tuple[str, NormalizedImage]]:
    """Pure inference: run the saved generator over CT slices.

    Returns (study_id, simulated CTPA) tuples; when ``out_dir`` is given also
    writes ``<study>_<slice>.npy`` and identically named PNG exports.
    """
    model, manifest = models.load_checkpoint(checkpoint_dir)
    if manifest["kind"] != "generator":
        raise ValueError(f"checkpoint {checkpoint_dir} holds a {manifest['kind']}, not a generator")
    models.freeze(model)
    outputs = []
    with torch.no_grad():
        for sid, img in ct_items:
            try:
                y = model(_to_tensor(img)[None])
            except (ValueError, RuntimeError) as exc:
                raise ValueError(
                    f"checkpoint {checkpoint_dir} incompatible with input shape "
                    f"{img.pixels.shape}: {exc}"
                ) from exc
            sim = NormalizedImage(
                pixels=np.clip(y[0, 0].numpy(), -1.0, 1.0),
                source_series=f"{img.source_series}_sim",
                slice_index=img.slice_index,
            )
            outputs.append((sid, sim))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for sid, sim in outputs:
            stem = f"{sid}_{sim.slice_index:03d}"
            np.save(out_dir / f"{stem}.npy", sim.pixels)
            export_png(sim, out_dir / f"{stem}.png")
    return outputs
