import csv
import json
import sys

import numpy as np
import pytest

from wmbench.attack.baselines import AttackSpec
from wmbench.evaluation.grid import (
    CLEAN,
    CSV_COLUMNS,
    EvalConfig,
    calibrate_schemes,
    evaluate_grid,
    load_report,
    scheme_key,
)
from wmbench.evaluation.plots import render_all
from wmbench.toydata import toy_set


@pytest.fixture(scope="module")
def grid(backend):
    cfg = EvalConfig(seed=2)
    data = toy_set(6, 64, seed=40, prefix="g")
    nulls = toy_set(100, 64, seed=41, prefix="n")
    keys = [scheme_key(s, cfg) for s in ("dwt_dct", "dwt_dct_svd")]
    phis, null = calibrate_schemes(keys, cfg, null_images=nulls)
    attacks = [AttackSpec.default("jpeg"), AttackSpec.default("gaussian_blur"), AttackSpec.default("regen")]
    rep = evaluate_grid(["dwt_dct", "dwt_dct_svd"], attacks, data, cfg, backend, phis, null)
    return rep, phis, data, cfg


def test_report_is_schema_valid(grid, tmp_path):
    rep = grid[0]
    rep.validate()
    d = load_report(rep.write_json(tmp_path / "r.json"))
    assert d["report_version"] == 1 and not d["failures"]


def test_grid_shape(grid):
    rep = grid[0]
    rows = {(c["scheme"], c["attack"]) for c in rep.cells}
    assert rows == {(s, a) for s in ("dwt_dct", "dwt_dct_svd") for a in (CLEAN, "jpeg", "gaussian_blur", "regen")}
    assert len(rep.records) == 2 * 4 * 6


def test_cells_equal_record_means(grid):
    rep = grid[0]
    for s in ("dwt_dct", "dwt_dct_svd"):
        for a in (CLEAN, "jpeg", "regen"):
            recs = [r for r in rep.records if (r["scheme"], r["attack"]) == (s, a)]
            assert rep.cell(s, a, "bit_accuracy") == pytest.approx(np.mean([r["bit_accuracy"] for r in recs]))
            assert rep.cell(s, a, "tpr_at_fpr") == pytest.approx(np.mean([r["statistic"] > rep.thresholds[s]
                                                                          for r in recs]))
            assert rep.cell(s, a, "psnr") == pytest.approx(np.mean([r["psnr"] for r in recs]))


def test_clean_row_matches_round_trip(grid):
    rep = grid[0]
    for s in ("dwt_dct", "dwt_dct_svd"):
        assert rep.cell(s, CLEAN, "bit_accuracy") >= 0.99
        assert rep.cell(s, CLEAN, "psnr") >= 38
        assert rep.cell(s, CLEAN, "tpr_at_fpr") == 1.0


def test_thresholds_calibrated(grid):
    rep, phis = grid[0], grid[1]
    for s, phi in phis.items():
        nulls = np.asarray(rep.null_scores[s])
        assert nulls.size == 100 and np.mean(nulls > phi) <= 0.01


def test_empty_attack_list_gives_clean_rows(grid):
    _, phis, data, cfg = grid
    rep = evaluate_grid(["dwt_dct"], [], data, cfg, None, phis)
    assert {c["attack"] for c in rep.cells} == {CLEAN}
    rep.validate()


def test_missing_threshold_is_an_error(grid):
    _, _, data, cfg = grid
    with pytest.raises(ValueError, match="threshold"):
        evaluate_grid(["dwt_dct"], [], data, cfg, None, {})


def test_failures_recorded_and_run_continues(grid):
    _, phis, data, cfg = grid
    bad = AttackSpec("external", {"command": [sys.executable, "-c", "import sys; sys.exit(2)"]})
    rep = evaluate_grid(["dwt_dct"], [bad, AttackSpec.default("jpeg")], data[:2], cfg, None, phis)
    assert [f["attack"] for f in rep.failures] == ["external"]
    assert rep.cell("dwt_dct", "jpeg", "bit_accuracy") is not None
    rep.validate()


def test_csv_and_markdown(grid, tmp_path):
    rep = grid[0]
    rows = list(csv.reader(rep.write_csv(tmp_path / "r.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == len(rep.cells) + 1
    md = rep.to_markdown()
    assert md.count("\n") == len({(c["scheme"], c["attack"]) for c in rep.cells}) + 2


def test_plots_render(grid, tmp_path):
    paths = render_all(json.loads(json.dumps(grid[0].to_dict())), tmp_path)
    assert len(paths) == 3
    for p in paths:
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
