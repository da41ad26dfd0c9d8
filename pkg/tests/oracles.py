"""Independent brute-force oracles the tests check the library against.

These deliberately recompute everything the slow way (explicit windows,
definition-form statistics, closed forms) and share no code with the
implementations they verify.
"""

from __future__ import annotations

import numpy as np


def gaussian_weights(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_brute_force(
    reference: np.ndarray,
    candidate: np.ndarray,
    L: float = 255.0,
    window_size: int = 11,
    sigma: float = 1.5,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float = 1.0,
) -> float:
    """SSIM by materializing every window and using definition-form statistics
    (weighted sums of squared deviations, not E[x^2] - mu^2)."""
    x = reference.astype(np.float64)
    y = candidate.astype(np.float64)
    c1 = (0.01 * L) ** 2
    c2 = (0.03 * L) ** 2
    c3 = c2 / 2.0
    w = gaussian_weights(window_size, sigma)
    h, wd = x.shape
    k = window_size
    values = []
    for i in range(h - k + 1):
        for j in range(wd - k + 1):
            wx = x[i : i + k, j : j + k]
            wy = y[i : i + k, j : j + k]
            mu_x = float((w * wx).sum())
            mu_y = float((w * wy).sum())
            var_x = float((w * (wx - mu_x) ** 2).sum())
            var_y = float((w * (wy - mu_y) ** 2).sum())
            cov = float((w * (wx - mu_x) * (wy - mu_y)).sum())
            sd_x, sd_y = np.sqrt(max(var_x, 0.0)), np.sqrt(max(var_y, 0.0))
            lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
            con = (2 * sd_x * sd_y + c2) / (var_x + var_y + c2)
            stru = (cov + c3) / (sd_x * sd_y + c3)
            values.append(lum**alpha * con**beta * stru**gamma)
    return float(np.mean(values))


def block_mean_resize(image: np.ndarray, factor: int) -> np.ndarray:
    """Downsampling oracle for integer ratios: explicit block averaging."""
    h, w = image.shape
    out = np.zeros((h // factor, w // factor))
    for i in range(h // factor):
        for j in range(w // factor):
            out[i, j] = image[i * factor : (i + 1) * factor, j * factor : (j + 1) * factor].mean()
    return out


def frechet_equal_cov(mu_a: np.ndarray, mu_b: np.ndarray) -> float:
    """Closed-form Fréchet distance when both covariances are equal."""
    d = mu_a - mu_b
    return float(d @ d)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a.astype(np.float64).ravel() - a.mean()
    b = b.astype(np.float64).ravel() - b.mean()
    return float((a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum()))
