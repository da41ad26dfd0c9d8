import math

import numpy as np
import pytest

from ct2ctpa.ingest import export_png
from ct2ctpa.reporting import (
    TABLE_LAYOUTS,
    comparison_grids,
    format_metric,
    render_preset_table,
    render_table,
)

TABLE1_VALUES = {"PSNR": 11.24, "SSIM": 0.324, "MAE": 102.13, "LPIPS": 0.439, "FID": 223.68}


def test_table1_row_verbatim():
    table = render_preset_table("table1", [TABLE1_VALUES])
    lines = table.splitlines()
    assert lines[0] == "\tSimulated CTPA"
    assert lines[1] == "PSNR\t11.24"
    assert lines[2] == "SSIM\t0.324"
    assert lines[3] == "MAE\t102.13"
    assert lines[4] == "LPIPS\t0.439"
    assert lines[5] == "FID\t223.68"


def test_table2_structure():
    vals = [{"PSNR": 11.227, "SSIM": 0.325, "MAE": 96.9, "LPIPS": 0.494},
            {"PSNR": 7.79, "SSIM": 0.207, "MAE": 114.72, "LPIPS": 0.526}]
    table = render_preset_table("table2", vals)
    lines = table.splitlines()
    assert lines[0].split("\t") == ["", "Classification model", "Without classification model"]
    assert [ln.split("\t")[0] for ln in lines[1:]] == ["PSNR", "SSIM", "MAE", "LPIPS"]


def test_table3_structure_three_ratio_columns():
    vals = [{"PSNR": 11.19}, {"PSNR": 11.227}, {"PSNR": 11.23}]
    table = render_preset_table("table3", vals)
    assert table.splitlines()[0].split("\t") == ["", "Ratio = 1", "Ratio = 0.3", "Ratio = 0.1"]


def test_table4_and_table6_corner_header():
    t4 = render_preset_table("table4", [{"PSNR": 11.23}, {"PSNR": 11.25}])
    assert t4.splitlines()[0].split("\t") == ["Target CTPA", "3-layers", "4-layers"]
    t6 = render_preset_table("table6", [TABLE1_VALUES, TABLE1_VALUES])
    assert t6.splitlines()[0].split("\t") == ["Target CTPA", "On Rec_CT", "On Fake_CT"]
    assert [ln.split("\t")[0] for ln in t6.splitlines()[1:]] == ["PSNR", "SSIM", "MAE", "LPIPS", "FID"]


def test_table5_structure():
    table = render_preset_table("table5", [{}, {}, {}])
    assert table.splitlines()[0].split("\t") == ["", "BCE+L1", "BCE+SSIM", "MSE+SSIM"]


def test_table2_omits_fid():
    assert "FID" not in TABLE_LAYOUTS["table2"].metrics
    assert "FID" in TABLE_LAYOUTS["table1"].metrics


def test_preset_wrong_run_count():
    with pytest.raises(ValueError, match="expects 3 runs"):
        render_preset_table("table3", [{}, {}])


def test_single_run_generic_table():
    table = render_table([("my_run", TABLE1_VALUES)])
    assert table.splitlines()[0] == "\tmy_run"
    assert "PSNR\t11.24" in table


def test_format_metric_rules():
    assert format_metric("PSNR", 11.2371) == "11.24"
    assert format_metric("SSIM", 0.3239) == "0.324"
    assert format_metric("LPIPS", 0.4385) == "0.439"  # round-half-even not triggered
    assert format_metric("MAE", 102.131) == "102.13"
    assert format_metric("FID", 223.684) == "223.68"
    assert format_metric("PSNR", math.inf) == "inf"
    assert format_metric("FID", None) == ""


def test_comparison_grids(tmp_path):
    rng = np.random.default_rng(0)
    names = [f"s_{i}.png" for i in range(3)]
    for d in ("run_a", "run_b", "inputs", "ref"):
        for n in names:
            export_png(rng.random((16, 16)).astype(np.float32) * 2 - 1, tmp_path / d / n)
    grids = comparison_grids(
        [tmp_path / "run_a", tmp_path / "run_b"],
        tmp_path / "out",
        input_dir=tmp_path / "inputs",
        reference_dir=tmp_path / "ref",
        max_items=2,
    )
    assert len(grids) == 2
    from ct2ctpa.ingest import load_png

    grid = load_png(grids[0])
    assert grid.shape == (16, 16 * 4)  # input | run_a | run_b | reference


def test_comparison_grids_mismatched_pair_sets(tmp_path):
    rng = np.random.default_rng(1)
    export_png(rng.random((8, 8)) * 2 - 1, tmp_path / "a" / "x.png")
    export_png(rng.random((8, 8)) * 2 - 1, tmp_path / "b" / "y.png")
    with pytest.raises(ValueError, match="pair set"):
        comparison_grids([tmp_path / "a", tmp_path / "b"], tmp_path / "out")
