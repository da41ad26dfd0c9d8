"""Synthetic paired CT/CTPA studies with vessel and embolism ground truth.

The generator draws a chest-like cross section (body ellipse, bone rim, two
lung fields), grows a random branching vessel tree inside each lung, and
renders two volumes from the same geometry: a plain CT and a contrast CTPA
in which vessel pixels are brightened by a fixed HU delta. A study may carry
a pulmonary embolism: a contiguous segment of one vessel branch, darkened in
the CTPA (the filling defect) and rendered as a slightly distended,
mildly hyperdense clot in the CT so that the label is learnable from the
CT domain as well. Everything is deterministic in (spec, study_seed).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .seeds import derive_seed, rng_for

HU_AIR = -1000.0
HU_BODY = 40.0
HU_LUNG = -850.0
HU_BONE = 700.0
HU_VESSEL = 60.0

HU_MIN = -2048
HU_MAX = 4096

RESCALE_SLOPE = 1.0
RESCALE_INTERCEPT = -1024.0

MANIFEST_NAME = "manifest.json"
LAYOUT_VERSION = 1


@dataclass(frozen=True)
class PhantomSpec:
    """Knobs of the synthetic study generator.

    ``pe_ct_clot_delta`` and ``pe_bulge_factor`` control how visible the
    embolism is in the plain CT rendering (hyperdense, slightly distended
    clot); both are needed so a classifier can be pretrained on CT slices.
    """

    image_size: int = 256
    n_slices: int = 16
    vessel_tree_depth: int = 4
    vessel_brightening_delta: float = 300.0
    pe_lesion_probability: float = 0.5
    pe_lesion_darkening: float = 250.0
    noise_sigma: float = 8.0
    seed: int = 0
    pe_ct_clot_delta: float = 100.0
    pe_bulge_factor: float = 3.0

    def validate(self) -> None:
        size = self.image_size
        if size < 32 or (size & (size - 1)) != 0:
            raise ValueError(f"image_size must be >= 32 and a power of two, got {size}")
        if self.n_slices < 1:
            raise ValueError(f"n_slices must be >= 1, got {self.n_slices}")
        if self.vessel_tree_depth < 1:
            raise ValueError(f"vessel_tree_depth must be >= 1, got {self.vessel_tree_depth}")
        if self.vessel_brightening_delta <= 0:
            raise ValueError(
                f"vessel_brightening_delta must be > 0, got {self.vessel_brightening_delta}"
            )
        if not 0.0 <= self.pe_lesion_probability <= 1.0:
            raise ValueError(
                f"pe_lesion_probability must be in [0, 1], got {self.pe_lesion_probability}"
            )
        if self.pe_lesion_darkening < 0:
            raise ValueError(f"pe_lesion_darkening must be >= 0, got {self.pe_lesion_darkening}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.pe_bulge_factor < 1.0:
            raise ValueError(f"pe_bulge_factor must be >= 1, got {self.pe_bulge_factor}")


@dataclass
class PhantomStudy:
    """One generated study: both volumes in HU plus ground-truth masks."""

    ct: np.ndarray          # (n_slices, size, size) int16, HU
    ctpa: np.ndarray        # same shape as ct
    vessel_mask: np.ndarray  # bool, same shape
    pe_mask: np.ndarray      # bool, subset of vessel_mask
    has_pe: bool
    seed: int
    spacing: tuple[float, float, float] = (2.0, 1.0, 1.0)

    @property
    def pe_slices(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.pe_mask.any(axis=(1, 2)))]


def _ellipse_mask(size: int, center: tuple[float, float], axes: tuple[float, float]) -> np.ndarray:
    rr, cc = np.mgrid[0:size, 0:size]
    return ((rr - center[0]) / axes[0]) ** 2 + ((cc - center[1]) / axes[1]) ** 2 <= 1.0


def _disc_offsets(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    dr, dc = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dr * dr + dc * dc <= radius * radius
    return np.stack([dr[keep], dc[keep]], axis=1)


def _stamp(mask: np.ndarray, points: np.ndarray, radius: float) -> None:
    size = mask.shape[0]
    offs = _disc_offsets(radius)
    px = (points[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    px = px[(px[:, 0] >= 0) & (px[:, 0] < size) & (px[:, 1] >= 0) & (px[:, 1] < size)]
    mask[px[:, 0], px[:, 1]] = True


@dataclass
class _Branch:
    points: np.ndarray  # (n, 2) int pixel coordinates along the centerline
    radius: float
    level: int


def _grow_tree(
    rng: np.random.Generator,
    lung_center: tuple[float, float],
    lung_axes: tuple[float, float],
    depth: int,
    size: int,
) -> list[_Branch]:
    """Random-walk vessel tree: branches split in two with shrinking radius."""

    def inside(p) -> bool:
        return ((p[0] - lung_center[0]) / lung_axes[0]) ** 2 + (
            (p[1] - lung_center[1]) / lung_axes[1]
        ) ** 2 <= 0.92

    base_radius = max(1.5, size / 56.0)
    step = max(1.0, size / 128.0)
    root = np.array([lung_center[0], lung_center[1]], dtype=float)
    # Roots point outward from the hilum with some spread.
    branches: list[_Branch] = []
    stack = [(root, rng.uniform(0, 2 * np.pi), base_radius, 0)]
    while stack:
        pos, angle, radius, level = stack.pop()
        n_steps = int(rng.integers(size // 16, size // 8 + 1))
        pts = []
        p = pos.copy()
        for _ in range(n_steps):
            angle += rng.normal(0.0, 0.22)
            q = p + step * np.array([np.sin(angle), np.cos(angle)])
            if not inside(q):
                # Steer back toward the lung center instead of leaving the field.
                to_center = np.array([lung_center[0] - p[0], lung_center[1] - p[1]])
                angle = np.arctan2(to_center[0], to_center[1]) + rng.normal(0.0, 0.3)
                q = p + step * np.array([np.sin(angle), np.cos(angle)])
                if not inside(q):
                    break
            p = q
            pts.append([p[0], p[1]])
        if pts:
            branches.append(_Branch(np.rint(pts).astype(int), radius, level))
            if level + 1 < depth and radius > 0.9:
                spread = rng.uniform(0.4, 0.9)
                for sign in (-1.0, 1.0):
                    stack.append((p.copy(), angle + sign * spread, radius * 0.68, level + 1))
    return branches


def generate_study(spec: PhantomSpec, study_seed: int) -> PhantomStudy:
    """Generate one paired CT/CTPA study, deterministic in (spec, study_seed)."""
    spec.validate()
    size = spec.image_size
    rng_geom = rng_for(spec.seed, "study", study_seed, "geom")
    rng_tree = rng_for(spec.seed, "study", study_seed, "tree")
    rng_pe = rng_for(spec.seed, "study", study_seed, "pe")
    rng_noise = rng_for(spec.seed, "study", study_seed, "noise")

    body_axes = (size * rng_geom.uniform(0.31, 0.35), size * rng_geom.uniform(0.42, 0.46))
    center = (size * 0.52, size * 0.5)
    body = _ellipse_mask(size, center, body_axes)
    rim = body & ~_ellipse_mask(size, center, (body_axes[0] * 0.92, body_axes[1] * 0.94))
    lungs = []
    for side in (-1.0, 1.0):
        lc = (size * rng_geom.uniform(0.50, 0.54), size * (0.5 + side * rng_geom.uniform(0.19, 0.23)))
        la = (size * rng_geom.uniform(0.21, 0.25), size * rng_geom.uniform(0.13, 0.16))
        lungs.append((lc, la, _ellipse_mask(size, lc, la)))

    canvas = np.full((size, size), HU_AIR)
    canvas[body] = HU_BODY
    canvas[rim] = HU_BONE
    for _, _, lung_mask in lungs:
        canvas[lung_mask] = HU_LUNG

    has_pe = bool(rng_pe.random() < spec.pe_lesion_probability)
    if has_pe:
        span = max(1, int(round(spec.n_slices * 0.4)))
        pe_start = int(rng_pe.integers(0, spec.n_slices - span + 1))
        pe_lung = int(rng_pe.integers(0, 2))
    else:
        span, pe_start, pe_lung = 0, 0, 0

    vessel_mask = np.zeros((spec.n_slices, size, size), dtype=bool)
    pe_mask = np.zeros_like(vessel_mask)
    for k in range(spec.n_slices):
        slice_trees = []
        for lc, la, _ in lungs:
            slice_trees.append(_grow_tree(rng_tree, lc, la, spec.vessel_tree_depth, size))
        for tree in slice_trees:
            for br in tree:
                _stamp(vessel_mask[k], br.points, br.radius)
        if has_pe and pe_start <= k < pe_start + span:
            tree = slice_trees[pe_lung] or slice_trees[1 - pe_lung]
            if not tree:
                continue
            # Prefer a thick proximal branch with enough steps to host a clot.
            host = max(tree, key=lambda b: (len(b.points) >= 4, -b.level, len(b.points)))
            n = len(host.points)
            run = max(2, n // 2)
            first = int(rng_pe.integers(0, n - run + 1)) if n > run else 0
            seg = host.points[first : first + run]
            _stamp(pe_mask[k], seg, host.radius * spec.pe_bulge_factor)
            if not pe_mask[k].any():
                _stamp(pe_mask[k], seg[:1], max(1.0, host.radius))
    if has_pe and not pe_mask.any():
        # Degenerate tree fallback: keep has_pe <=> pe_mask nonempty airtight.
        lc = lungs[pe_lung][0]
        pe_mask[pe_start, int(lc[0]), int(lc[1])] = True
    vessel_mask |= pe_mask

    ct = np.broadcast_to(canvas, vessel_mask.shape).copy()
    ctpa = ct.copy()
    plain = vessel_mask & ~pe_mask
    ct[plain] = HU_VESSEL
    ct[pe_mask] = HU_VESSEL + spec.pe_ct_clot_delta
    ctpa[plain] = HU_VESSEL + spec.vessel_brightening_delta
    ctpa[pe_mask] = HU_VESSEL + spec.vessel_brightening_delta - spec.pe_lesion_darkening

    if spec.noise_sigma > 0:
        ct = ct + rng_noise.normal(0.0, spec.noise_sigma, ct.shape)
        ctpa = ctpa + rng_noise.normal(0.0, spec.noise_sigma, ctpa.shape)
    ct = np.clip(np.rint(ct), HU_MIN, HU_MAX).astype(np.int16)
    ctpa = np.clip(np.rint(ctpa), HU_MIN, HU_MAX).astype(np.int16)

    mm = 400.0 / size
    return PhantomStudy(
        ct=ct,
        ctpa=ctpa,
        vessel_mask=vessel_mask,
        pe_mask=pe_mask,
        has_pe=has_pe,
        seed=study_seed,
        spacing=(2.0, mm, mm),
    )


@dataclass
class DatasetManifest:
    """Root manifest of a written phantom dataset."""

    spec: dict
    n_studies: int
    studies: list[dict] = field(default_factory=list)
    layout_version: int = LAYOUT_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        raw = json.loads(text)
        return cls(
            spec=raw["spec"],
            n_studies=raw["n_studies"],
            studies=raw["studies"],
            layout_version=raw.get("layout_version", LAYOUT_VERSION),
        )

    def labels(self) -> dict[str, bool]:
        return {s["study_id"]: bool(s["has_pe"]) for s in self.studies}


def _slice_header(study: PhantomStudy, series_id: str, modality: str, index: int) -> dict:
    return {
        "rows": int(study.ct.shape[1]),
        "cols": int(study.ct.shape[2]),
        "pixel_spacing_mm": [study.spacing[1], study.spacing[2]],
        "slice_thickness_mm": study.spacing[0],
        "slice_location_mm": index * study.spacing[0],
        "instance_index": index,
        "rescale_slope": RESCALE_SLOPE,
        "rescale_intercept": RESCALE_INTERCEPT,
        "modality": modality,
        "series_id": series_id,
        "dtype": "int16",
        "byte_order": "little",
    }


def _write_series(series_dir: Path, volume: np.ndarray, study: PhantomStudy, series_id: str, modality: str) -> None:
    series_dir.mkdir(parents=True, exist_ok=True)
    for i in range(volume.shape[0]):
        stored = np.asarray(
            (volume[i].astype(np.float64) - RESCALE_INTERCEPT) / RESCALE_SLOPE
        )
        stored = np.rint(stored).astype("<i2")
        (series_dir / f"slice_{i:03d}.raw").write_bytes(stored.tobytes())
        header = _slice_header(study, series_id, modality, i)
        (series_dir / f"slice_{i:03d}.json").write_text(json.dumps(header, sort_keys=True, indent=2))


def _write_mask_png(path: Path, mask: np.ndarray) -> None:
    Image.fromarray((mask.astype(np.uint8)) * 255, mode="L").save(path)


def load_mask_series(masks_dir: Path | str, prefix: str) -> np.ndarray:
    """Load a bool mask stack written by ``generate_dataset`` (e.g. prefix='vessel')."""
    masks_dir = Path(masks_dir)
    files = sorted(masks_dir.glob(f"{prefix}_*.png"))
    if not files:
        raise FileNotFoundError(f"no {prefix}_*.png masks under {masks_dir}")
    return np.stack([np.asarray(Image.open(f)) > 127 for f in files])


def generate_dataset(spec: PhantomSpec, n_studies: int, out_dir: Path | str) -> DatasetManifest:
    """Write ``n_studies`` studies to disk in the layout the ingest module reads.

    Layout: ``study_<k>/{ct,ctpa}/slice_<i>.raw`` (int16 little-endian) with a
    JSON sidecar per slice, ``study_<k>/masks/{vessel,pe}_<i>.png``, and a
    ``manifest.json`` at the root listing seeds and labels.
    """
    spec.validate()
    if n_studies < 0:
        raise ValueError(f"n_studies must be >= 0, got {n_studies}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out_dir}: {exc}") from exc

    manifest = DatasetManifest(spec=asdict(spec), n_studies=n_studies)
    for k in range(n_studies):
        study = generate_study(spec, k)
        study_id = f"study_{k:04d}"
        study_dir = out_dir / study_id
        _write_series(study_dir / "ct", study.ct, study, f"{study_id}_ct", "CT")
        _write_series(study_dir / "ctpa", study.ctpa, study, f"{study_id}_ctpa", "CTPA")
        masks_dir = study_dir / "masks"
        masks_dir.mkdir(parents=True, exist_ok=True)
        for i in range(spec.n_slices):
            _write_mask_png(masks_dir / f"vessel_{i:03d}.png", study.vessel_mask[i])
            _write_mask_png(masks_dir / f"pe_{i:03d}.png", study.pe_mask[i])
        manifest.studies.append(
            {
                "study_id": study_id,
                "study_seed": k,
                "has_pe": study.has_pe,
                "n_slices": spec.n_slices,
                "pe_slices": study.pe_slices,
            }
        )
    (out_dir / MANIFEST_NAME).write_text(manifest.to_json())
    return manifest


def load_manifest(dataset_dir: Path | str) -> DatasetManifest:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {dataset_dir}")
    return DatasetManifest.from_json(path.read_text())
