"""Image-quality metric suite: MSE/PSNR/MAE, windowed SSIM, perceptual
distance, Fréchet distance on feature statistics, and the pre-metric
alignment search.

All pixel metrics operate on 8-bit image pairs (dynamic range 255) in double
precision. The perceptual metric and feature statistics take a feature
extractor from :mod:`ct2ctpa.features`; everything else is self-contained
numpy/scipy.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage
from scipy.signal import fftconvolve

from .ingest import load_png, png_to_normalized

PSNR_BANDS = (
    (30.0, "differences hard to perceive"),
    (20.0, "some perceptible difference"),
    (10.0, "obvious noise, similarity still visible"),
    (-math.inf, "similarity hard to judge"),
)


@dataclass
class ImagePair:
    """Reference image I and candidate image K, both 8-bit and equally sized."""

    reference: np.ndarray
    candidate: np.ndarray

    def __post_init__(self):
        self.reference = np.asarray(self.reference)
        self.candidate = np.asarray(self.candidate)
        if self.reference.ndim != 2:
            raise ValueError(f"images must be 2D, got shape {self.reference.shape}")
        if self.reference.shape != self.candidate.shape:
            raise ValueError(
                f"shape mismatch: reference {self.reference.shape} vs candidate {self.candidate.shape}"
            )
        for name, arr in (("reference", self.reference), ("candidate", self.candidate)):
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError(f"{name} values outside [0, 255]")


def mse(pair: ImagePair) -> float:
    """Mean squared error over all pixels, double precision."""
    diff = pair.reference.astype(np.float64) - pair.candidate.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(pair: ImagePair, max_value: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give the inf sentinel."""
    err = mse(pair)
    if err == 0.0:
        return math.inf
    return float(10.0 * math.log10(max_value * max_value / err))


def psnr_band(value: float) -> str:
    """Qualitative reading of a PSNR value (reporting flavor)."""
    for threshold, label in PSNR_BANDS:
        if value >= threshold:
            return label
    return PSNR_BANDS[-1][1]


def mae(pair: ImagePair) -> float:
    """Mean absolute error over all pixels."""
    diff = pair.reference.astype(np.float64) - pair.candidate.astype(np.float64)
    return float(np.mean(np.abs(diff)))


# ---------------------------------------------------------------------------
# SSIM


@dataclass
class SsimConstants:
    """Stabilizers, exponents, and window of the three-factor SSIM."""

    L: float = 255.0
    C1: float | None = None
    C2: float | None = None
    C3: float | None = None
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    window_size: int = 11
    sigma: float = 1.5

    def __post_init__(self):
        if self.C1 is None:
            self.C1 = (0.01 * self.L) ** 2
        if self.C2 is None:
            self.C2 = (0.03 * self.L) ** 2
        if self.C3 is None:
            self.C3 = self.C2 / 2.0
        if min(self.C1, self.C2, self.C3) <= 0:
            raise ValueError("SSIM constants C1, C2, C3 must be > 0")
        if self.window_size % 2 != 1 or self.window_size < 3:
            raise ValueError(f"window_size must be odd and >= 3, got {self.window_size}")


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized 2D Gaussian weights (sum 1)."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(pair: ImagePair, consts: SsimConstants | None = None) -> float:
    """Mean local SSIM of the pair under a Gaussian window.

    Local means, variances, and covariance are taken under the window at
    every fully-contained location; luminance, contrast, and structure are
    combined with the configured exponents and averaged.
    """
    consts = consts or SsimConstants()
    x = pair.reference.astype(np.float64)
    y = pair.candidate.astype(np.float64)
    k = consts.window_size
    if min(x.shape) < k:
        raise ValueError(f"image {x.shape} smaller than SSIM window {k}x{k}")
    w = gaussian_window(k, consts.sigma)

    def winmean(a: np.ndarray) -> np.ndarray:
        return np.einsum("ijkl,kl->ij", sliding_window_view(a, (k, k)), w)

    mu_x, mu_y = winmean(x), winmean(y)
    var_x = np.clip(winmean(x * x) - mu_x * mu_x, 0.0, None)
    var_y = np.clip(winmean(y * y) - mu_y * mu_y, 0.0, None)
    cov = winmean(x * y) - mu_x * mu_y
    sd_x, sd_y = np.sqrt(var_x), np.sqrt(var_y)

    lum = (2.0 * mu_x * mu_y + consts.C1) / (mu_x * mu_x + mu_y * mu_y + consts.C1)
    con = (2.0 * sd_x * sd_y + consts.C2) / (var_x + var_y + consts.C2)
    stru = (cov + consts.C3) / (sd_x * sd_y + consts.C3)
    ssim_map = (
        np.power(lum, consts.alpha) * np.power(con, consts.beta) * np.power(stru, consts.gamma)
    )
    return float(ssim_map.mean())


# ---------------------------------------------------------------------------
# feature statistics and Fréchet distance


@dataclass
class FeatureStats:
    """Sample mean and covariance of feature embeddings."""

    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.n < 2:
            raise ValueError(f"feature statistics need n >= 2 samples, got {self.n}")
        if self.sigma.shape != (self.mu.size, self.mu.size):
            raise ValueError(f"covariance shape {self.sigma.shape} does not match mu {self.mu.shape}")
        scale = max(1.0, float(np.abs(self.sigma).max(initial=0.0)))
        if np.abs(self.sigma - self.sigma.T).max(initial=0.0) > 1e-8 * scale:
            raise ValueError("covariance is not symmetric within tolerance")
        eigmin = float(np.linalg.eigvalsh((self.sigma + self.sigma.T) / 2.0).min())
        if eigmin < -1e-8 * scale:
            raise ValueError(f"covariance is not PSD within tolerance (eigmin {eigmin:.3e})")


def compute_feature_stats(images, extractor, batch_size: int = 16) -> FeatureStats:
    """Embed every image and return the sample mean/covariance of the embeddings."""
    embeddings = extractor.embed(images, batch_size=batch_size)
    if embeddings.shape[0] < 2:
        raise ValueError(f"need at least 2 images for feature statistics, got {embeddings.shape[0]}")
    mu = embeddings.mean(axis=0)
    sigma = np.cov(embeddings, rowvar=False, ddof=1)
    sigma = np.atleast_2d(sigma)
    return FeatureStats(mu=mu, sigma=sigma, n=embeddings.shape[0])


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(stats_a: FeatureStats, stats_b: FeatureStats) -> float:
    """Wasserstein-2 distance between the two feature Gaussians.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the matrix
    square root taken through the symmetric eigendecomposition of
    S_a^{1/2} S_b S_a^{1/2} (eigenvalues clamped at zero).
    """
    if stats_a.mu.shape != stats_b.mu.shape:
        raise ValueError(
            f"feature dimension mismatch: {stats_a.mu.shape} vs {stats_b.mu.shape}"
        )
    sqrt_a = _sqrtm_psd(stats_a.sigma)
    inner = sqrt_a @ stats_b.sigma @ sqrt_a
    vals = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2.0), 0.0, None)
    tr_sqrt = float(np.sqrt(vals).sum())
    diff = stats_a.mu - stats_b.mu
    value = float(diff @ diff + np.trace(stats_a.sigma) + np.trace(stats_b.sigma) - 2.0 * tr_sqrt)
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# perceptual distance


def lpips(image_a, image_b, extractor, layers=None, distance: str = "cosine") -> float:
    """Average per-location feature distance across the extractor's layers.

    Feature vectors are unit-normalized per spatial location; the distance is
    their cosine distance (or, behind the flag, the squared L2 of the
    normalized vectors). Zero for identical inputs.
    """
    if distance not in ("cosine", "squared_l2"):
        raise ValueError(f"unknown distance {distance!r}")
    feats_a = extractor.feature_maps(image_a, layers=layers)
    feats_b = extractor.feature_maps(image_b, layers=layers)
    per_layer = []
    for fa, fb in zip(feats_a, feats_b):
        ua = fa / (np.linalg.norm(fa, axis=0, keepdims=True) + 1e-10)
        ub = fb / (np.linalg.norm(fb, axis=0, keepdims=True) + 1e-10)
        if distance == "cosine":
            d = 1.0 - (ua * ub).sum(axis=0)
        else:
            d = ((ua - ub) ** 2).sum(axis=0)
        per_layer.append(float(np.clip(d, 0.0, None).mean()))
    return float(np.mean(per_layer))


# ---------------------------------------------------------------------------
# alignment


@dataclass
class AlignmentTransform:
    """Translation (pixels) and isotropic scale applied to the candidate."""

    dx: float = 0.0
    dy: float = 0.0
    scale: float = 1.0
    degenerate_reference: bool = False

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    @property
    def is_identity(self) -> bool:
        return self.dx == 0.0 and self.dy == 0.0 and self.scale == 1.0


def _rescale_about_center(image: np.ndarray, scale: float) -> np.ndarray:
    if scale == 1.0:
        return image.astype(np.float64, copy=True)
    c = (np.asarray(image.shape, dtype=np.float64) - 1.0) / 2.0
    matrix = np.diag([1.0 / scale, 1.0 / scale])
    offset = c - matrix @ c
    return ndimage.affine_transform(
        image.astype(np.float64), matrix, offset=offset, order=1, mode="constant", cval=0.0
    )


def _apply_transform(image: np.ndarray, t: AlignmentTransform) -> np.ndarray:
    out = _rescale_about_center(image, t.scale)
    if t.dy or t.dx:
        out = ndimage.shift(out, (t.dy, t.dx), order=1, mode="constant", cval=0.0)
    return out


def ncc(a: np.ndarray, b: np.ndarray, margin: int = 8) -> float:
    """Pearson correlation over the central crop (the alignment criterion)."""
    ac = a.astype(np.float64)[margin:-margin or None, margin:-margin or None]
    bc = b.astype(np.float64)[margin:-margin or None, margin:-margin or None]
    ac, bc = ac - ac.mean(), bc - bc.mean()
    denom = np.sqrt((ac * ac).sum() * (bc * bc).sum())
    if denom == 0:
        return 0.0
    return float((ac * bc).sum() / denom)


def _shift_scores(template: np.ndarray, reference: np.ndarray, max_shift: int) -> np.ndarray:
    """Pearson correlation of the (zero-mean) template against every placement
    of a same-sized window within +/- max_shift, via FFT correlation."""
    th, tw = template.shape
    region = reference  # (th + 2m, tw + 2m)
    t0 = template - template.mean()
    t_norm = math.sqrt((t0 * t0).sum())
    if t_norm == 0:
        return np.full((2 * max_shift + 1, 2 * max_shift + 1), -np.inf)
    num = fftconvolve(region, t0[::-1, ::-1], mode="valid")
    ones = np.ones((th, tw))
    s1 = fftconvolve(region, ones, mode="valid")
    s2 = fftconvolve(region * region, ones, mode="valid")
    var = np.clip(s2 - s1 * s1 / (th * tw), 0.0, None)
    denom = t_norm * np.sqrt(var)
    r = np.full_like(denom, -np.inf)
    ok = denom > 0
    # t0 sums to ~0, so this is the exact Pearson numerator up to float error.
    r[ok] = (num[ok] - s1[ok] * (t0.sum() / (th * tw))) / denom[ok]
    return r


def align_for_metrics(
    candidate: np.ndarray,
    reference: np.ndarray,
    max_shift: int = 8,
    scale_bounds: tuple[float, float] = (0.9, 1.1),
    n_scales: int = 41,
    min_gain: float = 1e-4,
) -> tuple[np.ndarray, AlignmentTransform]:
    """Grid-search translation and scale maximizing correlation with the reference.

    Returns the resampled candidate and the winning transform; the identity is
    returned unless some transform beats it by more than ``min_gain``
    correlation. A constant reference cannot be aligned against and comes back
    identity with the degenerate flag set.
    """
    candidate = np.asarray(candidate)
    reference = np.asarray(reference)
    if candidate.shape != reference.shape:
        raise ValueError(f"shape mismatch: candidate {candidate.shape} vs reference {reference.shape}")
    if min(candidate.shape) <= 2 * max_shift + 2:
        raise ValueError(f"image {candidate.shape} too small for max_shift {max_shift}")

    ref = reference.astype(np.float64)
    if float(ref.std()) == 0.0:
        warnings.warn("alignment reference is constant; returning identity", stacklevel=2)
        return candidate.copy(), AlignmentTransform(degenerate_reference=True)

    m = max_shift
    scales = np.linspace(scale_bounds[0], scale_bounds[1], n_scales)
    scales[np.abs(scales - 1.0) < 1e-9] = 1.0
    if not np.any(scales == 1.0):
        scales = np.sort(np.append(scales, 1.0))

    best = (-np.inf, AlignmentTransform())
    identity_score = -np.inf
    for s in scales:
        scaled = _rescale_about_center(candidate.astype(np.float64), float(s))
        template = scaled[m:-m, m:-m]
        r = _shift_scores(template, ref, m)
        u, v = np.unravel_index(np.argmax(r), r.shape)
        score = float(r[u, v])
        if s == 1.0:
            identity_score = float(r[m, m])
        if score > best[0]:
            best = (score, AlignmentTransform(dx=float(v - m), dy=float(u - m), scale=float(s)))

    if not (best[0] > identity_score + min_gain) or best[1].is_identity:
        return candidate.copy(), AlignmentTransform()
    aligned = _apply_transform(candidate.astype(np.float64), best[1])
    if np.issubdtype(candidate.dtype, np.integer):
        aligned = np.clip(np.floor(aligned + 0.5), 0, 255).astype(candidate.dtype)
    return aligned, best[1]


# ---------------------------------------------------------------------------
# run evaluation


@dataclass
class EvalConfig:
    align: bool = False
    extractor: str = "tiny"
    lpips_distance: str = "cosine"
    ssim: SsimConstants = field(default_factory=SsimConstants)
    max_shift: int = 8
    scale_bounds: tuple[float, float] = (0.9, 1.1)


@dataclass
class MetricsReport:
    """Per-pair and aggregate metric values with run provenance."""

    pairs: list[dict]
    aggregate: dict
    provenance: dict

    METRIC_COLUMNS = ("PSNR", "SSIM", "MAE", "LPIPS")

    def write_csv(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", *self.METRIC_COLUMNS, "FID"])
            for row in self.pairs:
                writer.writerow([row["name"]] + [repr(row[c]) for c in self.METRIC_COLUMNS] + [""])
            writer.writerow(
                ["aggregate"]
                + [repr(self.aggregate[c]) for c in self.METRIC_COLUMNS]
                + [repr(self.aggregate["FID"]) if self.aggregate["FID"] is not None else ""]
            )

    def write_json(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)

        def encode(obj):
            if isinstance(obj, float) and math.isinf(obj):
                return "inf"
            if isinstance(obj, dict):
                return {k: encode(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [encode(v) for v in obj]
            return obj

        payload = {"pairs": self.pairs, "aggregate": self.aggregate, "provenance": self.provenance}
        path.write_text(json.dumps(encode(payload), sort_keys=True, indent=2))


def evaluate_run(
    generated_dir: Path | str,
    reference_dir: Path | str,
    config: EvalConfig | None = None,
    extractor=None,
    out_dir: Path | str | None = None,
) -> MetricsReport:
    """Compare two directories of identically named 8-bit PNG exports.

    Computes per-pair PSNR/SSIM/MAE/LPIPS (after optional alignment of each
    candidate to its reference) and one corpus-level FID; writes
    ``metrics.csv`` and ``metrics.json`` when ``out_dir`` is given.
    """
    config = config or EvalConfig()
    generated_dir, reference_dir = Path(generated_dir), Path(reference_dir)
    gen_names = {p.name for p in generated_dir.glob("*.png")}
    ref_names = {p.name for p in reference_dir.glob("*.png")}
    if gen_names != ref_names:
        missing = sorted(ref_names - gen_names)
        extra = sorted(gen_names - ref_names)
        raise ValueError(
            f"unmatched filenames between {generated_dir} and {reference_dir}: "
            f"missing from generated {missing}, extra in generated {extra}"
        )
    if not gen_names:
        raise ValueError(f"no PNG files found in {generated_dir}")

    if extractor is None:
        from .features import get_extractor

        extractor = get_extractor(config.extractor)

    pairs_rows = []
    candidates, references = [], []
    degenerate_warned = False
    for name in sorted(gen_names):
        cand = load_png(generated_dir / name)
        ref = load_png(reference_dir / name)
        transform = AlignmentTransform()
        if config.align:
            cand, transform = align_for_metrics(
                cand, ref, max_shift=config.max_shift, scale_bounds=config.scale_bounds
            )
            degenerate_warned |= transform.degenerate_reference
        pair = ImagePair(reference=ref, candidate=cand)
        row = {
            "name": name,
            "PSNR": psnr(pair),
            "SSIM": ssim(pair, config.ssim),
            "MAE": mae(pair),
            "LPIPS": lpips(
                png_to_normalized(cand), png_to_normalized(ref), extractor, distance=config.lpips_distance
            ),
            "transform": {"dx": transform.dx, "dy": transform.dy, "scale": transform.scale},
        }
        pairs_rows.append(row)
        candidates.append(png_to_normalized(cand))
        references.append(png_to_normalized(ref))

    fid_value = None
    if len(candidates) >= 2:
        fid_value = fid(
            compute_feature_stats(references, extractor),
            compute_feature_stats(candidates, extractor),
        )

    aggregate = {c: float(np.mean([r[c] for r in pairs_rows])) for c in MetricsReport.METRIC_COLUMNS}
    aggregate["FID"] = fid_value
    report = MetricsReport(
        pairs=pairs_rows,
        aggregate=aggregate,
        provenance={
            "generated_dir": str(generated_dir),
            "reference_dir": str(reference_dir),
            "align": config.align,
            "extractor": getattr(extractor, "name", config.extractor),
            "lpips_distance": config.lpips_distance,
            "n_pairs": len(pairs_rows),
            "degenerate_alignment_reference": degenerate_warned,
        },
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        report.write_csv(out_dir / "metrics.csv")
        report.write_json(out_dir / "metrics.json")
    return report
