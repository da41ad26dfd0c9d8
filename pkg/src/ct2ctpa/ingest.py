"""Series loading, HU windowing, resizing, slice selection, and pairing.

Two on-disk sources are understood: the phantom layout written by
:mod:`ct2ctpa.phantom` (``slice_<i>.raw`` + JSON sidecar per slice) and, when
``pydicom`` is installed, standard DICOM series. Both are mapped to Hounsfield
units through the header's rescale slope/intercept and sorted by slice
position before any further processing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import phantom as _phantom
from .seeds import rng_for

HU_RANGE = (-2048, 4096)


@dataclass
class HuVolume:
    """A CT or CTPA series in Hounsfield units, slices sorted by position."""

    voxels: np.ndarray  # (n_slices, rows, cols) signed integer HU
    spacing: tuple[float, float, float]
    series_id: str
    modality_tag: str  # "CT" or "CTPA"

    def __post_init__(self):
        if self.voxels.ndim != 3:
            raise ValueError(f"voxels must be 3D (slice, row, col), got shape {self.voxels.shape}")
        lo, hi = int(self.voxels.min(initial=0)), int(self.voxels.max(initial=0))
        if lo < HU_RANGE[0] or hi > HU_RANGE[1]:
            raise ValueError(f"HU values outside {HU_RANGE}: observed [{lo}, {hi}]")
        if self.modality_tag not in ("CT", "CTPA"):
            raise ValueError(f"modality_tag must be CT or CTPA, got {self.modality_tag!r}")

    @property
    def n_slices(self) -> int:
        return self.voxels.shape[0]


@dataclass(frozen=True)
class HuWindow:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"window low must be < high, got [{self.low}, {self.high}]")


DEFAULT_WINDOW = HuWindow(-1000.0, 400.0)


@dataclass
class NormalizedImage:
    """A single 2D slice windowed into [-1, 1], ready for the networks."""

    pixels: np.ndarray  # (size, size) float32
    source_series: str
    slice_index: int

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError(f"pixels must be 2D, got shape {self.pixels.shape}")
        if float(self.pixels.min(initial=0.0)) < -1.0 or float(self.pixels.max(initial=0.0)) > 1.0:
            raise ValueError("normalized pixels must lie in [-1, 1]")


@dataclass
class PairedSlices:
    """A CT slice with, in paired mode, its registered CTPA counterpart.

    In unpaired mode ``ctpa`` comes from an independently shuffled stream and
    ``study_id`` names the CT side's study. ``ct_has_pe``/``ctpa_has_pe``
    carry the source studies' labels when the dataset manifest provides them.
    """

    ct: NormalizedImage
    ctpa: NormalizedImage | None
    study_id: str
    ct_has_pe: bool | None = None
    ctpa_has_pe: bool | None = None

    def __post_init__(self):
        if self.ctpa is not None and self.ctpa.pixels.shape != self.ct.pixels.shape:
            raise ValueError("paired ct/ctpa slices must share one shape")


# ---------------------------------------------------------------------------
# series loading


def _load_phantom_series(series_dir: Path) -> HuVolume:
    raws = sorted(series_dir.glob("slice_*.raw"))
    entries = []
    for raw in raws:
        sidecar = raw.with_suffix(".json")
        if not sidecar.exists():
            raise FileNotFoundError(f"missing sidecar header {sidecar}")
        header = json.loads(sidecar.read_text())
        for tag in ("rescale_slope", "rescale_intercept"):
            if tag not in header:
                raise ValueError(f"{raw.name}: missing required header tag {tag!r}")
        entries.append((raw, header))

    shapes = {(e[1]["rows"], e[1]["cols"]) for e in entries}
    if len(shapes) > 1:
        offending = [e[0].name for e in entries]
        raise ValueError(f"inconsistent slice shapes {sorted(shapes)} in files {offending}")

    entries.sort(key=lambda e: (e[1].get("slice_location_mm", 0.0), e[1].get("instance_index", 0)))
    slices = []
    for raw, header in entries:
        stored = np.frombuffer(raw.read_bytes(), dtype="<i2").reshape(header["rows"], header["cols"])
        hu = stored.astype(np.float64) * header["rescale_slope"] + header["rescale_intercept"]
        slices.append(np.rint(hu).astype(np.int16))
    first = entries[0][1]
    spacing = (
        float(first.get("slice_thickness_mm", 1.0)),
        float(first["pixel_spacing_mm"][0]),
        float(first["pixel_spacing_mm"][1]),
    )
    return HuVolume(
        voxels=np.stack(slices),
        spacing=spacing,
        series_id=str(first.get("series_id", series_dir.name)),
        modality_tag=str(first.get("modality", "CT")),
    )


def _load_dicom_series(series_dir: Path) -> HuVolume:
    try:
        import pydicom
    except ImportError as exc:  # pragma: no cover - exercised only with the extra installed
        raise ImportError(
            "reading DICOM series requires the optional 'pydicom' dependency "
            "(pip install ct2ctpa[dicom])"
        ) from exc

    files = sorted(series_dir.glob("*.dcm")) or sorted(
        p for p in series_dir.iterdir() if p.is_file() and not p.suffix
    )
    datasets = [pydicom.dcmread(str(f)) for f in files]
    entries = []
    for f, ds in zip(files, datasets):
        for tag in ("RescaleSlope", "RescaleIntercept"):
            if not hasattr(ds, tag):
                raise ValueError(f"{f.name}: missing required DICOM tag {tag}")
        pos = float(ds.ImagePositionPatient[2]) if hasattr(ds, "ImagePositionPatient") else float(
            getattr(ds, "InstanceNumber", 0)
        )
        entries.append((pos, f, ds))
    shapes = {(int(ds.Rows), int(ds.Columns)) for _, _, ds in entries}
    if len(shapes) > 1:
        offending = [f.name for _, f, _ in entries]
        raise ValueError(f"inconsistent slice shapes {sorted(shapes)} in files {offending}")
    entries.sort(key=lambda e: e[0])
    slices = [
        np.rint(ds.pixel_array.astype(np.float64) * float(ds.RescaleSlope) + float(ds.RescaleIntercept)).astype(np.int16)
        for _, _, ds in entries
    ]
    ds0 = entries[0][2]
    spacing = (
        float(getattr(ds0, "SliceThickness", 1.0)),
        float(ds0.PixelSpacing[0]) if hasattr(ds0, "PixelSpacing") else 1.0,
        float(ds0.PixelSpacing[1]) if hasattr(ds0, "PixelSpacing") else 1.0,
    )
    modality = "CTPA" if "CTPA" in str(getattr(ds0, "SeriesDescription", "")).upper() else "CT"
    return HuVolume(
        voxels=np.stack(slices),
        spacing=spacing,
        series_id=str(getattr(ds0, "SeriesInstanceUID", series_dir.name)),
        modality_tag=modality,
    )


def load_series(series_dir: Path | str) -> HuVolume:
    """Load one series directory into HU, sorted by slice position."""
    series_dir = Path(series_dir)
    if not series_dir.is_dir():
        raise FileNotFoundError(f"series directory not found: {series_dir}")
    if any(series_dir.glob("slice_*.raw")):
        return _load_phantom_series(series_dir)
    if any(series_dir.glob("*.dcm")):
        return _load_dicom_series(series_dir)
    raise ValueError(f"no recognizable series (slice_*.raw or *.dcm) in {series_dir}")


# ---------------------------------------------------------------------------
# per-slice transforms


def hu_window(volume: HuVolume | np.ndarray, window: HuWindow = DEFAULT_WINDOW) -> np.ndarray:
    """Clamp HU to [low, high] and map linearly onto [-1, 1]."""
    values = volume.voxels if isinstance(volume, HuVolume) else np.asarray(volume)
    clipped = np.clip(values.astype(np.float64), window.low, window.high)
    return (2.0 * (clipped - window.low) / (window.high - window.low) - 1.0).astype(np.float32)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix averaging input cells into output cells by overlap."""
    ratio = n_in / n_out
    weights = np.zeros((n_out, n_in))
    for j in range(n_out):
        lo, hi = j * ratio, (j + 1) * ratio
        i0, i1 = int(np.floor(lo)), int(np.ceil(hi))
        for i in range(i0, min(i1, n_in)):
            overlap = min(hi, i + 1) - max(lo, i)
            if overlap > 0:
                weights[j, i] = overlap / ratio
    return weights


def resize(image: np.ndarray, target: int) -> np.ndarray:
    """Area-averaged downsampling of a square image to target x target."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"resize expects a square 2D image, got shape {image.shape}")
    side = image.shape[0]
    if target > side:
        raise ValueError(f"target {target} exceeds input side {side}")
    if target == side:
        return image.copy()
    if side % target == 0:
        f = side // target
        return image.reshape(target, f, target, f).mean(axis=(1, 3))
    w = _area_weights(side, target)
    return w @ image @ w.T


def select_pe_interval(volume: HuVolume, interval: tuple[int, int]) -> list[np.ndarray]:
    """Return exactly the slices with index in [start, end), order preserved."""
    start, end = interval
    n = volume.n_slices
    if not (0 <= start <= end <= n):
        raise ValueError(f"interval [{start}, {end}) outside volume bounds [0, {n})")
    return [volume.voxels[i] for i in range(start, end)]


def export_png(image: NormalizedImage | np.ndarray, path: Path | str) -> None:
    """Write a [-1, 1] image as 8-bit grayscale PNG (round-half-up)."""
    pixels = image.pixels if isinstance(image, NormalizedImage) else np.asarray(image)
    u8 = np.clip(np.floor(255.0 * (pixels.astype(np.float64) + 1.0) / 2.0 + 0.5), 0, 255)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(u8.astype(np.uint8), mode="L").save(path)
    except OSError as exc:
        raise OSError(f"failed writing PNG {path}: {exc}") from exc


def load_png(path: Path | str) -> np.ndarray:
    """Read an 8-bit grayscale PNG as uint8."""
    return np.asarray(Image.open(Path(path)).convert("L"))


def png_to_normalized(u8: np.ndarray) -> np.ndarray:
    """Map 8-bit pixels back onto [-1, 1] (inverse of export_png up to quantization)."""
    return (2.0 * u8.astype(np.float64) / 255.0 - 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# dataset assembly


def _normalize_volume(
    volume: HuVolume, window: HuWindow, size: int, interval: tuple[int, int] | None
) -> list[NormalizedImage]:
    sel = range(volume.n_slices) if interval is None else range(interval[0], interval[1])
    if interval is not None:
        select_pe_interval(volume, interval)  # bounds check with the same error contract
    out = []
    for i in sel:
        windowed = hu_window(volume.voxels[i], window)
        small = resize(windowed, size)
        out.append(
            NormalizedImage(
                pixels=np.clip(small, -1.0, 1.0).astype(np.float32),
                source_series=volume.series_id,
                slice_index=int(i),
            )
        )
    return out


def _discover_studies(root: Path, modality_subdir: str) -> dict[str, Path]:
    """Map study_id -> series dir for either a dataset root or a bare series dir."""
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"data root not found: {root}")
    studies = {}
    for study_dir in sorted(root.glob("study_*")):
        series = study_dir / modality_subdir
        if series.is_dir():
            studies[study_dir.name] = series
    if not studies:
        if any(root.glob("slice_*.raw")) or any(root.glob("*.dcm")):
            studies[root.name] = root
        else:
            raise ValueError(f"no study_*/{modality_subdir} series found under {root}")
    return studies


class SliceDataset:
    """Windowed, resized slices grouped by study, with seeded epoch iteration.

    Paired mode yields registered (ct, ctpa) slices in a seeded shuffled
    order; unpaired mode reshuffles the two streams independently each epoch
    (epoch-derived seeds) and zips them to the shorter length.
    """

    def __init__(
        self,
        ct_by_study: dict[str, list[NormalizedImage]],
        ctpa_by_study: dict[str, list[NormalizedImage]],
        mode: str,
        seed: int,
        labels: dict[str, bool] | None = None,
    ):
        if mode not in ("paired", "unpaired"):
            raise ValueError(f"mode must be 'paired' or 'unpaired', got {mode!r}")
        self.mode = mode
        self.seed = seed
        self.labels = labels or {}
        self.ct_by_study = ct_by_study
        self.ctpa_by_study = ctpa_by_study
        if mode == "paired":
            for sid, ct_slices in ct_by_study.items():
                n_ctpa = len(ctpa_by_study.get(sid, []))
                if len(ct_slices) != n_ctpa:
                    raise ValueError(
                        f"paired mode: study {sid} has {len(ct_slices)} CT slices "
                        f"but {n_ctpa} CTPA slices"
                    )
        self.ct_items = [(sid, img) for sid in sorted(ct_by_study) for img in ct_by_study[sid]]
        self.ctpa_items = [(sid, img) for sid in sorted(ctpa_by_study) for img in ctpa_by_study[sid]]
        self._pairs = []
        if mode == "paired":
            for sid in sorted(ct_by_study):
                for ct, ctpa in zip(ct_by_study[sid], ctpa_by_study[sid]):
                    self._pairs.append((sid, ct, ctpa))

    def __len__(self) -> int:
        if self.mode == "paired":
            return len(self._pairs)
        return min(len(self.ct_items), len(self.ctpa_items))

    def epoch_items(self, epoch: int) -> list[PairedSlices]:
        rng = rng_for(self.seed, "epoch", epoch)
        if self.mode == "paired":
            items = []
            for i in rng.permutation(len(self._pairs)):
                sid, ct, ctpa = self._pairs[i]
                label = self.labels.get(sid)
                items.append(PairedSlices(ct, ctpa, sid, label, label))
            return items
        ct_order = rng.permutation(len(self.ct_items))
        ctpa_order = rng.permutation(len(self.ctpa_items))
        items = []
        for i in range(len(self)):
            ct_sid, ct = self.ct_items[ct_order[i]]
            ctpa_sid, ctpa = self.ctpa_items[ctpa_order[i]]
            items.append(
                PairedSlices(ct, ctpa, ct_sid, self.labels.get(ct_sid), self.labels.get(ctpa_sid))
            )
        return items


def build_dataset(
    ct_root: Path | str,
    ctpa_root: Path | str,
    mode: str = "paired",
    window: HuWindow = DEFAULT_WINDOW,
    size: int = 256,
    interval: tuple[int, int] | None = None,
    seed: int = 0,
) -> SliceDataset:
    """Load, window, and resize both modality streams into a SliceDataset.

    ``ct_root``/``ctpa_root`` may both point at one phantom dataset root; the
    ``ct``/``ctpa`` series subdirectories are discovered per study.
    """
    ct_studies = _discover_studies(Path(ct_root), "ct")
    ctpa_studies = _discover_studies(Path(ctpa_root), "ctpa")
    labels = None
    try:
        labels = _phantom.load_manifest(ct_root).labels()
    except (FileNotFoundError, json.JSONDecodeError):
        pass

    ct_by_study = {
        sid: _normalize_volume(load_series(d), window, size, interval) for sid, d in ct_studies.items()
    }
    ctpa_by_study = {
        sid: _normalize_volume(load_series(d), window, size, interval)
        for sid, d in ctpa_studies.items()
    }
    return SliceDataset(ct_by_study, ctpa_by_study, mode, seed, labels)


# ---------------------------------------------------------------------------
# preprocessing to disk (the CLI `preprocess` stage)

PREP_MANIFEST = "preprocess_manifest.json"


@dataclass
class PreprocessResult:
    out_dir: Path
    manifest: dict = field(default_factory=dict)


def preprocess_dataset(
    data_root: Path | str,
    out_dir: Path | str,
    window: HuWindow = DEFAULT_WINDOW,
    size: int = 256,
    interval: tuple[int, int] | None = None,
    seed: int = 0,
) -> PreprocessResult:
    """Materialize windowed/resized slices plus 8-bit exports for metrics.

    Writes ``study_<k>/{ct,ctpa}/slice_<i>.npy`` (float32 in [-1, 1]),
    ``exports/{ct,ctpa}/<study>_<i>.png``, and a manifest carrying the window,
    size, interval, seed, and per-study PE labels.
    """
    data_root, out_dir = Path(data_root), Path(out_dir)
    ct_studies = _discover_studies(data_root, "ct")
    ctpa_studies = _discover_studies(data_root, "ctpa")
    labels = {}
    try:
        labels = _phantom.load_manifest(data_root).labels()
    except FileNotFoundError:
        pass

    pe_slices = {}
    try:
        pe_slices = {
            s["study_id"]: s.get("pe_slices", []) for s in _phantom.load_manifest(data_root).studies
        }
    except FileNotFoundError:
        pass

    out_dir.mkdir(parents=True, exist_ok=True)
    studies_meta = []
    for sid in sorted(ct_studies):
        ct_imgs = _normalize_volume(load_series(ct_studies[sid]), window, size, interval)
        ctpa_imgs = (
            _normalize_volume(load_series(ctpa_studies[sid]), window, size, interval)
            if sid in ctpa_studies
            else []
        )
        for kind, imgs in (("ct", ct_imgs), ("ctpa", ctpa_imgs)):
            series_dir = out_dir / sid / kind
            series_dir.mkdir(parents=True, exist_ok=True)
            for img in imgs:
                np.save(series_dir / f"slice_{img.slice_index:03d}.npy", img.pixels)
                export_png(img, out_dir / "exports" / kind / f"{sid}_{img.slice_index:03d}.png")
        studies_meta.append(
            {
                "study_id": sid,
                "has_pe": labels.get(sid),
                "pe_slices": pe_slices.get(sid, []),
                "n_ct_slices": len(ct_imgs),
                "n_ctpa_slices": len(ctpa_imgs),
            }
        )

    manifest = {
        "source": str(data_root),
        "window": {"low": window.low, "high": window.high},
        "image_size": size,
        "interval": list(interval) if interval is not None else None,
        "seed": seed,
        "studies": studies_meta,
    }
    (out_dir / PREP_MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return PreprocessResult(out_dir=out_dir, manifest=manifest)


def load_preprocessed(prep_dir: Path | str, mode: str, seed: int = 0) -> SliceDataset:
    """Build a SliceDataset from a preprocess_dataset output directory."""
    prep_dir = Path(prep_dir)
    manifest_path = prep_dir / PREP_MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"no {PREP_MANIFEST} in {prep_dir}; run preprocess first")
    manifest = json.loads(manifest_path.read_text())
    labels = {
        s["study_id"]: s["has_pe"] for s in manifest["studies"] if s.get("has_pe") is not None
    }

    def read_series(sid: str, kind: str) -> list[NormalizedImage]:
        series_dir = prep_dir / sid / kind
        out = []
        for f in sorted(series_dir.glob("slice_*.npy")):
            idx = int(f.stem.split("_")[1])
            out.append(NormalizedImage(np.load(f), f"{sid}_{kind}", idx))
        return out

    ct_by_study, ctpa_by_study = {}, {}
    for s in manifest["studies"]:
        sid = s["study_id"]
        ct = read_series(sid, "ct")
        if ct:
            ct_by_study[sid] = ct
        ctpa = read_series(sid, "ctpa")
        if ctpa:
            ctpa_by_study[sid] = ctpa
    return SliceDataset(ct_by_study, ctpa_by_study, mode, seed, labels)


def load_labeled_ct_slices(
    prep_dir: Path | str, positives_interval_only: bool = True
) -> tuple[list[NormalizedImage], list[bool], list[str]]:
    """CT slices with study PE labels, for classifier pretraining.

    PE-positive studies contribute only their lesion-bearing slices (the
    manifest's ``pe_slices``) when ``positives_interval_only`` is set, so that
    every positive example actually shows the finding; negative studies
    contribute all slices.
    """
    prep_dir = Path(prep_dir)
    manifest = json.loads((prep_dir / PREP_MANIFEST).read_text())
    dataset = load_preprocessed(prep_dir, mode="unpaired")
    images, labels, study_ids = [], [], []
    meta = {s["study_id"]: s for s in manifest["studies"]}
    for sid, img in dataset.ct_items:
        info = meta.get(sid, {})
        label = info.get("has_pe")
        if label is None:
            continue
        if label and positives_interval_only:
            pe_slices = info.get("pe_slices") or []
            if pe_slices and img.slice_index not in pe_slices:
                continue
        images.append(img)
        labels.append(bool(label))
        study_ids.append(sid)
    if not images:
        raise ValueError(f"no labeled CT slices found under {prep_dir}")
    return images, labels, study_ids
