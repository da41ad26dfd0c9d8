"""Training losses: adversarial (BCE or least-squares), cycle (L1 or
1 - SSIM), and the frozen-classifier supervision term.

The differentiable SSIM here mirrors the metric-suite formula (Gaussian
window, three factors, valid locations only) on the [-1, 1] training range
(dynamic range 2).
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

ADVERSARIAL_KINDS = ("bce", "mse")
CYCLE_KINDS = ("l1", "ssim")


def adversarial_loss(kind: str, logits: torch.Tensor, target_is_real: bool) -> torch.Tensor:
    """Mean adversarial loss of a logit map against an all-real/all-fake target."""
    if kind not in ADVERSARIAL_KINDS:
        raise ValueError(f"adversarial kind must be one of {ADVERSARIAL_KINDS}, got {kind!r}")
    if not torch.isfinite(logits).all():
        raise FloatingPointError("adversarial_loss received non-finite logits")
    target = torch.ones_like(logits) if target_is_real else torch.zeros_like(logits)
    if kind == "bce":
        return F.binary_cross_entropy_with_logits(logits, target)
    return F.mse_loss(logits, target)


def gaussian_window_2d(size: int, sigma: float, dtype=torch.float32) -> torch.Tensor:
    ax = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(ax * ax) / (2.0 * sigma * sigma))
    w = torch.outer(g, g)
    return w / w.sum()


def ssim_torch(
    x: torch.Tensor,
    y: torch.Tensor,
    data_range: float = 2.0,
    window_size: int = 11,
    sigma: float = 1.5,
    c3_half_c2: bool = True,
) -> torch.Tensor:
    """Differentiable mean SSIM over (N, 1, H, W) batches, valid windows only."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if min(x.shape[-2:]) < window_size:
        raise ValueError(f"image {tuple(x.shape[-2:])} smaller than SSIM window {window_size}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    c3 = c2 / 2.0 if c3_half_c2 else c2
    w = gaussian_window_2d(window_size, sigma, dtype=x.dtype)[None, None]

    def wmean(a):
        return F.conv2d(a, w)

    mu_x, mu_y = wmean(x), wmean(y)
    var_x = (wmean(x * x) - mu_x * mu_x).clamp(min=0.0)
    var_y = (wmean(y * y) - mu_y * mu_y).clamp(min=0.0)
    cov = wmean(x * y) - mu_x * mu_y
    sd_x = torch.sqrt(var_x + 1e-12)
    sd_y = torch.sqrt(var_y + 1e-12)

    lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    con = (2.0 * sd_x * sd_y + c2) / (var_x + var_y + c2)
    stru = (cov + c3) / (sd_x * sd_y + c3)
    return (lum * con * stru).mean()


def cycle_loss(
    kind: str,
    reconstructed: torch.Tensor,
    original: torch.Tensor,
    window_size: int = 11,
    sigma: float = 1.5,
) -> torch.Tensor:
    """Reconstruction penalty: mean |diff| or 1 - SSIM; zero iff faithful."""
    if kind not in CYCLE_KINDS:
        raise ValueError(f"cycle kind must be one of {CYCLE_KINDS}, got {kind!r}")
    if reconstructed.shape != original.shape:
        raise ValueError(
            f"shape mismatch: {tuple(reconstructed.shape)} vs {tuple(original.shape)}"
        )
    if kind == "l1":
        return (reconstructed - original).abs().mean()
    return 1.0 - ssim_torch(reconstructed, original, window_size=window_size, sigma=sigma)


def classifier_supervision_loss(classifier, image: torch.Tensor, label) -> torch.Tensor:
    """BCE of the frozen classifier's PE logit against the study label.

    Gradients reach the generator through ``image``; the classifier's own
    parameters must already be frozen (requires_grad False).
    """
    if label is None:
        raise ValueError("classifier supervision needs a has_pe label for the supervised image")
    logit = classifier(image)
    target = torch.full_like(logit, float(bool(label)))
    return F.binary_cross_entropy_with_logits(logit, target)


LN2 = math.log(2.0)
