"""Comparison tables and side-by-side image grids for evaluated runs.

Tables are rendered as tab-separated text in the layout of the study's
result tables: metric names down the left, one column per run. Values are
formatted with the publication precision (two decimals for PSNR/MAE/FID,
three for SSIM/LPIPS).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import export_png, load_png, png_to_normalized

METRIC_ORDER = ("PSNR", "SSIM", "MAE", "LPIPS", "FID")

_DECIMALS = {"PSNR": 2, "SSIM": 3, "MAE": 2, "LPIPS": 3, "FID": 2}


@dataclass(frozen=True)
class TableLayout:
    corner: str
    columns: tuple[str, ...]
    metrics: tuple[str, ...]


# Column structures of the study's comparison tables. table1 is the headline
# single-run summary; table2..table6 are the ablation grids.
TABLE_LAYOUTS: dict[str, TableLayout] = {
    "table1": TableLayout("", ("Simulated CTPA",), METRIC_ORDER),
    "table2": TableLayout(
        "", ("Classification model", "Without classification model"), ("PSNR", "SSIM", "MAE", "LPIPS")
    ),
    "table3": TableLayout(
        "", ("Ratio = 1", "Ratio = 0.3", "Ratio = 0.1"), ("PSNR", "SSIM", "MAE", "LPIPS")
    ),
    "table4": TableLayout(
        "Target CTPA", ("3-layers", "4-layers"), ("PSNR", "SSIM", "MAE", "LPIPS")
    ),
    "table5": TableLayout(
        "", ("BCE+L1", "BCE+SSIM", "MSE+SSIM"), ("PSNR", "SSIM", "MAE", "LPIPS")
    ),
    "table6": TableLayout("Target CTPA", ("On Rec_CT", "On Fake_CT"), METRIC_ORDER),
}


def format_metric(name: str, value) -> str:
    if value is None:
        return ""
    value = float(value)
    if math.isinf(value):
        return "inf"
    return f"{value:.{_DECIMALS.get(name, 3)}f}"


def render_table(
    columns: list[tuple[str, dict]], metrics: tuple[str, ...] = METRIC_ORDER, corner: str = ""
) -> str:
    """Tab-separated table: one (label, metric-dict) pair per run column."""
    if not columns:
        raise ValueError("render_table needs at least one run column")
    lines = ["\t".join([corner] + [label for label, _ in columns])]
    for metric in metrics:
        cells = [format_metric(metric, values.get(metric)) for _, values in columns]
        lines.append("\t".join([metric] + cells))
    return "\n".join(lines)


def render_preset_table(preset: str, run_values: list[dict]) -> str:
    """Render one of the study's table layouts from per-run aggregate metrics."""
    if preset not in TABLE_LAYOUTS:
        raise ValueError(f"unknown table preset {preset!r}; choose from {sorted(TABLE_LAYOUTS)}")
    layout = TABLE_LAYOUTS[preset]
    if len(run_values) != len(layout.columns):
        raise ValueError(
            f"{preset} expects {len(layout.columns)} runs ({', '.join(layout.columns)}), "
            f"got {len(run_values)}"
        )
    columns = list(zip(layout.columns, run_values))
    return render_table(columns, metrics=layout.metrics, corner=layout.corner)


def load_run_aggregate(eval_dir: Path | str) -> dict:
    """Aggregate metrics from an evaluated run directory (metrics.json)."""
    path = Path(eval_dir) / "metrics.json"
    if not path.exists():
        raise FileNotFoundError(f"no metrics.json in {eval_dir}; run evaluate first")
    payload = json.loads(path.read_text())
    agg = dict(payload["aggregate"])
    for key, value in agg.items():
        if value == "inf":
            agg[key] = math.inf
    return agg


def load_run_pair_names(eval_dir: Path | str) -> list[str]:
    payload = json.loads((Path(eval_dir) / "metrics.json").read_text())
    return [row["name"] for row in payload["pairs"]]


def comparison_grids(
    run_generated_dirs: list[Path | str],
    out_dir: Path | str,
    input_dir: Path | str | None = None,
    reference_dir: Path | str | None = None,
    max_items: int = 4,
) -> list[Path]:
    """Side-by-side panels per sample: input CT | one column per run | reference CTPA.

    All runs must cover the same pair set; mismatches are an error.
    """
    run_dirs = [Path(d) for d in run_generated_dirs]
    name_sets = [sorted(p.name for p in d.glob("*.png")) for d in run_dirs]
    for d, names in zip(run_dirs[1:], name_sets[1:]):
        if names != name_sets[0]:
            raise ValueError(
                f"run {d} covers a different pair set than {run_dirs[0]} "
                f"({len(names)} vs {len(name_sets[0])} files)"
            )
    if not name_sets[0]:
        raise ValueError(f"no generated PNGs in {run_dirs[0]}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in name_sets[0][:max_items]:
        panels = []
        if input_dir is not None:
            panels.append(png_to_normalized(load_png(Path(input_dir) / name)))
        for d in run_dirs:
            panels.append(png_to_normalized(load_png(d / name)))
        if reference_dir is not None:
            panels.append(png_to_normalized(load_png(Path(reference_dir) / name)))
        grid = np.concatenate(panels, axis=1)
        path = out_dir / f"grid_{name}"
        export_png(grid, path)
        written.append(path)
    return written
