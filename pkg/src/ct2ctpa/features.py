"""Feature extractors backing the perceptual distance and FID.

Two families:

* ``tiny`` — a small fixed-seed convolutional stack built in-process. It is
  untrained but deterministic, needs no download, and supports every metric
  property (identity, symmetry, monotonicity under distortion). It is the
  offline default for desk-scale runs and tests.
* ``vgg16`` / ``inception_v3`` — torchvision backbones loaded from weight
  files that must already sit in the cache directory (``$CT2CTPA_CACHE``,
  default ``~/.cache/ct2ctpa``). Files are pinned by the hash fragment in
  their canonical names; a missing file raises a DependencyError carrying
  fetch instructions rather than attempting a download.
"""

from __future__ import annotations

import hashlib
import math
import os
from pathlib import Path

import numpy as np
import torch
from torch import nn

CACHE_ENV = "CT2CTPA_CACHE"

PRETRAINED_FILES = {
    "vgg16": ("vgg16-397923af.pth", "397923af"),
    "inception_v3": ("inception_v3_google-0cc3c7bd.pth", "0cc3c7bd"),
}

PRETRAINED_URLS = {
    "vgg16": "https://download.pytorch.org/models/vgg16-397923af.pth",
    "inception_v3": "https://download.pytorch.org/models/inception_v3_google-0cc3c7bd.pth",
}


class DependencyError(RuntimeError):
    """A pretrained artifact is missing from the cache."""


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "ct2ctpa"))


def _to_batch(image) -> torch.Tensor:
    """A single [-1, 1] grayscale image (2D array or NormalizedImage) to (1,1,H,W)."""
    pixels = getattr(image, "pixels", image)
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {arr.shape}")
    return torch.from_numpy(arr)[None, None]


class TinyConvExtractor:
    """Four stride-2 conv stages with fixed random weights, tapped after each ReLU."""

    name = "tiny"
    SEED = 0x7E_AC_11

    def __init__(self):
        g = torch.Generator().manual_seed(self.SEED)
        layers = []
        channels = [1, 16, 32, 64, 128]
        for cin, cout in zip(channels[:-1], channels[1:]):
            conv = nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                std = math.sqrt(2.0 / (cin * 9))
                conv.weight.normal_(0.0, std, generator=g)
                conv.bias.zero_()
            layers.append(conv)
        self.convs = nn.ModuleList(layers)
        self.convs.eval()
        for p in self.convs.parameters():
            p.requires_grad_(False)

    def _taps(self, batch: torch.Tensor) -> list[torch.Tensor]:
        out = []
        x = batch
        for conv in self.convs:
            x = torch.relu(conv(x))
            out.append(x)
        return out

    def feature_maps(self, image, layers=None) -> list[np.ndarray]:
        with torch.no_grad():
            taps = self._taps(_to_batch(image))
        picked = taps if layers is None else [taps[i] for i in layers]
        return [t[0].numpy() for t in picked]

    def embed(self, images, batch_size: int = 16) -> np.ndarray:
        rows = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                batch = torch.cat([_to_batch(im) for im in images[start : start + batch_size]])
                feats = self._taps(batch)[-1]
                rows.append(feats.mean(dim=(2, 3)).numpy())
        return np.concatenate(rows).astype(np.float64)


def _require_weights(kind: str) -> Path:
    filename, tag = PRETRAINED_FILES[kind]
    path = cache_dir() / filename
    if not path.exists():
        raise DependencyError(
            f"pretrained {kind} weights not found at {path}. Fetch them once with:\n"
            f"  mkdir -p {cache_dir()} && curl -L -o {path} {PRETRAINED_URLS[kind]}\n"
            f"or set {CACHE_ENV} to a directory that already holds {filename}."
        )
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    if not digest.startswith(tag):
        raise DependencyError(
            f"{path} is corrupt: sha256 {digest[:8]}... does not match pinned fragment {tag}"
        )
    return path


class Vgg16Extractor:
    """Torchvision VGG16 tapped at the five standard perceptual-layer ReLUs."""

    name = "vgg16"
    TAPS = (3, 8, 15, 22, 29)
    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self):
        try:
            from torchvision.models import vgg16
        except ImportError as exc:
            raise DependencyError(
                "the vgg16 extractor needs the optional 'torchvision' dependency "
                "(pip install ct2ctpa[pretrained])"
            ) from exc
        weights_path = _require_weights("vgg16")
        model = vgg16()
        model.load_state_dict(torch.load(weights_path, map_location="cpu", weights_only=True))
        self.features = model.features.eval()
        for p in self.features.parameters():
            p.requires_grad_(False)

    def _preprocess(self, image) -> torch.Tensor:
        x = (_to_batch(image) + 1.0) / 2.0
        x = x.repeat(1, 3, 1, 1)
        mean = torch.tensor(self.MEAN).view(1, 3, 1, 1)
        std = torch.tensor(self.STD).view(1, 3, 1, 1)
        return (x - mean) / std

    def _taps(self, batch: torch.Tensor) -> list[torch.Tensor]:
        out = []
        x = batch
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.TAPS:
                out.append(x)
        return out

    def feature_maps(self, image, layers=None) -> list[np.ndarray]:
        with torch.no_grad():
            taps = self._taps(self._preprocess(image))
        picked = taps if layers is None else [taps[i] for i in layers]
        return [t[0].numpy() for t in picked]

    def embed(self, images, batch_size: int = 8) -> np.ndarray:
        rows = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                batch = torch.cat([self._preprocess(im) for im in images[start : start + batch_size]])
                feats = self._taps(batch)[-1]
                rows.append(feats.mean(dim=(2, 3)).numpy())
        return np.concatenate(rows).astype(np.float64)


class InceptionV3Extractor:
    """Torchvision Inception v3; embeddings from the final pooling layer."""

    name = "inception_v3"

    def __init__(self):
        try:
            from torchvision.models import inception_v3
        except ImportError as exc:
            raise DependencyError(
                "the inception_v3 extractor needs the optional 'torchvision' dependency "
                "(pip install ct2ctpa[pretrained])"
            ) from exc
        weights_path = _require_weights("inception_v3")
        model = inception_v3(init_weights=False, aux_logits=True)
        model.load_state_dict(torch.load(weights_path, map_location="cpu", weights_only=True))
        model.fc = nn.Identity()
        self.model = model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)

    def _preprocess(self, image) -> torch.Tensor:
        x = (_to_batch(image) + 1.0) / 2.0
        x = x.repeat(1, 3, 1, 1)
        x = torch.nn.functional.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
        return x * 2.0 - 1.0  # inception's expected input scaling

    def feature_maps(self, image, layers=None) -> list[np.ndarray]:
        raise NotImplementedError(
            "inception_v3 provides embeddings for FID only; use vgg16 or tiny for LPIPS"
        )

    def embed(self, images, batch_size: int = 4) -> np.ndarray:
        rows = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                batch = torch.cat([self._preprocess(im) for im in images[start : start + batch_size]])
                rows.append(self.model(batch).numpy())
        return np.concatenate(rows).astype(np.float64)


_EXTRACTORS = {
    "tiny": TinyConvExtractor,
    "vgg16": Vgg16Extractor,
    "inception_v3": InceptionV3Extractor,
}


def get_extractor(name: str = "tiny"):
    if name not in _EXTRACTORS:
        raise ValueError(f"unknown extractor {name!r}; choose from {sorted(_EXTRACTORS)}")
    return _EXTRACTORS[name]()
