"""Network zoo: U-Net and residual-block generators, pixel and N-layer patch
discriminators, and the small residual PE classifier.

All builders take an optional seed so freshly built models are bit-identical
across processes. Checkpoints are an open format: one ``.npy`` per named
parameter plus a JSON manifest with the config, seed, and a sha256
fingerprint over the parameter bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

RESNET_BLOCK_CHOICES = (9, 34, 50)
PATCH_LAYER_CHOICES = (3, 4, 6)


@dataclass(frozen=True)
class GeneratorConfig:
    backbone: str = "resnet"  # "resnet" or "unet"
    n_residual_blocks: int = 9
    base_channels: int = 64
    in_channels: int = 1
    out_channels: int = 1

    def validate(self) -> None:
        if self.backbone not in ("resnet", "unet"):
            raise ValueError(f"backbone must be 'resnet' or 'unet', got {self.backbone!r}")
        if self.backbone == "resnet" and self.n_residual_blocks not in RESNET_BLOCK_CHOICES:
            raise ValueError(
                f"n_residual_blocks must be one of {RESNET_BLOCK_CHOICES}, got {self.n_residual_blocks}"
            )
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")


@dataclass(frozen=True)
class DiscriminatorConfig:
    kind: str = "patch"  # "patch" or "pixel"
    n_layers: int = 3
    base_channels: int = 64

    def validate(self) -> None:
        if self.kind not in ("patch", "pixel"):
            raise ValueError(f"kind must be 'patch' or 'pixel', got {self.kind!r}")
        if self.kind == "patch" and self.n_layers not in PATCH_LAYER_CHOICES:
            raise ValueError(f"n_layers must be one of {PATCH_LAYER_CHOICES}, got {self.n_layers}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")


@dataclass(frozen=True)
class ClassifierConfig:
    depth: int = 3  # residual stages (stem + 3 per stage ~= 10 conv layers)
    base_channels: int = 16
    input_size: int = 256

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")


def _init_weights(module: nn.Module, seed: int | None) -> None:
    """Gaussian(0, 0.02) init on conv/linear weights, zero biases."""
    g = torch.Generator()
    g.manual_seed(0 if seed is None else seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                m.weight.normal_(0.0, 0.02, generator=g)
                if m.bias is not None:
                    m.bias.zero_()


def _init_weights_kaiming(module: nn.Module, seed: int | None) -> None:
    """Fan-in scaled Gaussian init, needed where no normalization layers
    restore the activation scale (the classifier)."""
    g = torch.Generator()
    g.manual_seed(0 if seed is None else seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                m.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=g)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.Linear):
                m.weight.normal_(0.0, (2.0 / m.in_features) ** 0.5, generator=g)
                if m.bias is not None:
                    m.bias.zero_()


class ResnetBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """Encoder, N residual blocks, decoder; tanh-bounded output."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        c = cfg.base_channels
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(cfg.in_channels, c, kernel_size=7),
            nn.InstanceNorm2d(c),
            nn.ReLU(inplace=True),
        ]
        for mult in (1, 2):
            layers += [
                nn.Conv2d(c * mult, c * mult * 2, kernel_size=3, stride=2, padding=1),
                nn.InstanceNorm2d(c * mult * 2),
                nn.ReLU(inplace=True),
            ]
        layers += [ResnetBlock(c * 4) for _ in range(cfg.n_residual_blocks)]
        for mult in (4, 2):
            layers += [
                nn.ConvTranspose2d(
                    c * mult, c * mult // 2, kernel_size=3, stride=2, padding=1, output_padding=1
                ),
                nn.InstanceNorm2d(c * mult // 2),
                nn.ReLU(inplace=True),
            ]
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(c, cfg.out_channels, kernel_size=7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class _UnetBlock(nn.Module):
    """One U-Net level: down, submodule, up, with the skip concatenation."""

    def __init__(self, outer_c, inner_c, in_c=None, submodule=None, outermost=False, innermost=False):
        super().__init__()
        self.outermost = outermost
        in_c = in_c or outer_c
        downconv = nn.Conv2d(in_c, inner_c, kernel_size=4, stride=2, padding=1)
        downrelu = nn.LeakyReLU(0.2, inplace=True)
        downnorm = nn.InstanceNorm2d(inner_c)
        uprelu = nn.ReLU(inplace=True)
        upnorm = nn.InstanceNorm2d(outer_c)
        if outermost:
            upconv = nn.ConvTranspose2d(inner_c * 2, outer_c, kernel_size=4, stride=2, padding=1)
            model = [downconv, submodule, uprelu, upconv, nn.Tanh()]
        elif innermost:
            upconv = nn.ConvTranspose2d(inner_c, outer_c, kernel_size=4, stride=2, padding=1)
            model = [downrelu, downconv, uprelu, upconv, upnorm]
        else:
            upconv = nn.ConvTranspose2d(inner_c * 2, outer_c, kernel_size=4, stride=2, padding=1)
            model = [downrelu, downconv, downnorm, submodule, uprelu, upconv, upnorm]
        self.model = nn.Sequential(*model)

    def forward(self, x):
        if self.outermost:
            return self.model(x)
        return torch.cat([x, self.model(x)], dim=1)


class UnetGenerator(nn.Module):
    """Six-level U-Net with mirrored skip connections (input side divisible by 64)."""

    NUM_DOWNS = 6

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        c = cfg.base_channels
        block = _UnetBlock(c * 8, c * 8, innermost=True)
        for _ in range(self.NUM_DOWNS - 5):
            block = _UnetBlock(c * 8, c * 8, submodule=block)
        for mult in (4, 2, 1):
            block = _UnetBlock(c * mult, c * mult * 2, submodule=block)
        self.model = _UnetBlock(
            cfg.out_channels, c, in_c=cfg.in_channels, submodule=block, outermost=True
        )

    def forward(self, x):
        side = x.shape[-1]
        if side % (2**self.NUM_DOWNS) != 0:
            raise ValueError(f"unet input side must be divisible by {2**self.NUM_DOWNS}, got {side}")
        return self.model(x)


class PixelDiscriminator(nn.Module):
    """1x1 receptive field: one real/fake logit per pixel."""

    def __init__(self, cfg: DiscriminatorConfig, in_channels: int = 1):
        super().__init__()
        c = cfg.base_channels
        self.model = nn.Sequential(
            nn.Conv2d(in_channels, c, kernel_size=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c, c * 2, kernel_size=1),
            nn.InstanceNorm2d(c * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c * 2, 1, kernel_size=1),
        )

    def forward(self, x):
        return self.model(x)


class PatchDiscriminator(nn.Module):
    """N stride-2 stages then two stride-1 convs; emits a patch-logit grid."""

    def __init__(self, cfg: DiscriminatorConfig, in_channels: int = 1):
        super().__init__()
        c = cfg.base_channels
        layers: list[nn.Module] = [
            nn.Conv2d(in_channels, c, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        mult = 1
        for _ in range(1, cfg.n_layers):
            prev, mult = mult, min(mult * 2, 8)
            layers += [
                nn.Conv2d(c * prev, c * mult, kernel_size=4, stride=2, padding=1),
                nn.InstanceNorm2d(c * mult),
                nn.LeakyReLU(0.2, inplace=True),
            ]
        prev, mult = mult, min(mult * 2, 8)
        layers += [
            nn.Conv2d(c * prev, c * mult, kernel_size=4, stride=1, padding=1),
            nn.InstanceNorm2d(c * mult),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c * mult, 1, kernel_size=4, stride=1, padding=1),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class _PlainResBlock(nn.Module):
    """Norm-free residual block; the classifier must keep absolute intensity,
    which per-instance normalization would erase."""

    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, kernel_size=3, padding=1),
        )

    def forward(self, x):
        return torch.relu(x + self.block(x))


class PEClassifier(nn.Module):
    """Small residual classifier emitting one PE logit per image (any input size)."""

    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        c = cfg.base_channels
        stem = [nn.Conv2d(1, c, kernel_size=3, padding=1), nn.ReLU(inplace=True)]
        stages: list[nn.Module] = []
        ch = c
        for _ in range(cfg.depth):
            nxt = min(ch * 2, c * 8)
            stages += [
                _PlainResBlock(ch),
                nn.Conv2d(ch, nxt, kernel_size=3, stride=2, padding=1),
                nn.ReLU(inplace=True),
            ]
            ch = nxt
        self.body = nn.Sequential(*stem, *stages)
        # avg pooling summarizes context, max pooling catches small focal findings
        self.head = nn.Linear(ch * 2, 1)

    def forward(self, x):
        maps = self.body(x)
        feats = torch.cat([maps.mean(dim=(2, 3)), maps.amax(dim=(2, 3))], dim=1)
        return self.head(feats)

    def probability(self, x) -> torch.Tensor:
        """PE probability in [0, 1], shape (batch, 1)."""
        return torch.sigmoid(self.forward(x))

    def two_way_scores(self, x) -> torch.Tensor:
        """(batch, 2) scores for (no-PE, PE) that sum to one."""
        p = self.probability(x)
        return torch.cat([1.0 - p, p], dim=1)


def build_generator(cfg: GeneratorConfig, seed: int | None = None) -> nn.Module:
    cfg.validate()
    model = ResnetGenerator(cfg) if cfg.backbone == "resnet" else UnetGenerator(cfg)
    _init_weights(model, seed)
    return model


def build_discriminator(cfg: DiscriminatorConfig, seed: int | None = None, in_channels: int = 1) -> nn.Module:
    cfg.validate()
    cls = PatchDiscriminator if cfg.kind == "patch" else PixelDiscriminator
    model = cls(cfg, in_channels=in_channels)
    _init_weights(model, seed)
    return model


def build_classifier(cfg: ClassifierConfig, seed: int | None = None) -> PEClassifier:
    cfg.validate()
    model = PEClassifier(cfg)
    _init_weights_kaiming(model, seed)
    return model


def count_parameters(model: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def freeze(model: nn.Module) -> nn.Module:
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    return model


def param_fingerprint(model: nn.Module) -> str:
    """sha256 over all named parameters (names and bytes, sorted by name)."""
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# checkpoints

_CONFIG_TYPES = {
    "generator": GeneratorConfig,
    "discriminator": DiscriminatorConfig,
    "classifier": ClassifierConfig,
}


def save_checkpoint(
    ckpt_dir: Path | str,
    model: nn.Module,
    kind: str,
    config,
    seed: int | None = None,
    extra: dict | None = None,
) -> Path:
    """Write named parameter arrays plus a JSON manifest; returns the directory."""
    if kind not in _CONFIG_TYPES:
        raise ValueError(f"kind must be one of {sorted(_CONFIG_TYPES)}, got {kind!r}")
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    params = []
    for name, tensor in sorted(model.state_dict().items()):
        arr = tensor.detach().cpu().numpy()
        np.save(ckpt_dir / f"{name}.npy", arr)
        params.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
    manifest = {
        "format_version": 1,
        "kind": kind,
        "config": asdict(config),
        "seed": seed,
        "fingerprint": param_fingerprint(model),
        "params": params,
    }
    if extra:
        manifest["extra"] = extra
    (ckpt_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return ckpt_dir


def load_checkpoint(ckpt_dir: Path | str, in_channels: int = 1) -> tuple[nn.Module, dict]:
    """Rebuild the model named by the manifest and load its parameters bit-exactly."""
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in checkpoint directory {ckpt_dir}")
    manifest = json.loads(manifest_path.read_text())
    kind = manifest["kind"]
    cfg = _CONFIG_TYPES[kind](**manifest["config"])
    if kind == "generator":
        model = build_generator(cfg)
    elif kind == "discriminator":
        model = build_discriminator(cfg, in_channels=in_channels)
    else:
        model = build_classifier(cfg)
    state = {}
    for entry in manifest["params"]:
        arr = np.load(ckpt_dir / f"{entry['name']}.npy")
        state[entry["name"]] = torch.from_numpy(arr)
    model.load_state_dict(state)
    loaded_fp = param_fingerprint(model)
    if loaded_fp != manifest["fingerprint"]:
        raise ValueError(f"checkpoint {ckpt_dir} fingerprint mismatch after load")
    return model, manifest
