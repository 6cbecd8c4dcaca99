import csv
import io

import numpy as np
import pytest

from immunebranch.analytics import DomainError, Regime
from immunebranch.engine import StopRule
from immunebranch.sweep import (
    Axis,
    Estimator,
    GridSpec,
    emit_csv,
    emit_phase_svg,
    overlay_curve,
    parse_grid,
    run_sweep,
)
from immunebranch.validation import svg_overlay_vertices

STOP = StopRule(100.0, 500)


def small_spec(**kw):
    base = dict(
        axis1=Axis("lambda", 0.05, 1.5, 3),
        axis2=Axis("r", 0.0, 1.0, 3),
        fixed={"p": 1.0},
        per_cell_reps=400,
        stop=STOP,
        master_seed=3,
    )
    base.update(kw)
    return GridSpec(**base)


def csv_text(cells):
    buf = io.StringIO()
    emit_csv(cells, buf)
    return buf.getvalue()


def test_axis_values_clamp_unit_interval():
    assert Axis("r", 0.0, 1.0, 3).values()[0] == pytest.approx(1e-3)
    np.testing.assert_allclose(Axis("lambda", 0.5, 1.5, 3).values(), [0.5, 1.0, 1.5])
    with pytest.raises(DomainError):
        Axis("q", 0, 1, 3)


def test_parse_grid():
    a1, a2, fixed = parse_grid("lambda=0.05:1.2:20,r=0:1:20,p=0.2")
    assert (a1.name, a1.lo, a1.hi, a1.steps) == ("lambda", 0.05, 1.2, 20)
    assert (a2.name, a2.steps) == ("r", 20)
    assert fixed == {"p": 0.2}
    for bad in ("lambda=0:1:3", "lambda=0:1,r=0:1:3", "x=0:1:3,r=0:1:3", "lambda=1:2:3,r=0:1:3,p=0:1:2"):
        with pytest.raises(DomainError):
            parse_grid(bad)


def test_corner_verdicts_match_regimes():
    spec = small_spec(axis1=Axis("lambda", 0.05, 3.0, 2), axis2=Axis("r", 0.0, 1.0, 2))
    cells = run_sweep(spec)
    for c in cells:
        if c.analytic_regime is Regime.SUPERCRITICAL:
            assert c.estimate.mean > 0.05
        else:
            assert c.estimate.ci95[1] < 0.02


def test_single_row_transition_at_one_quarter():
    spec = small_spec(axis1=Axis("lambda", 0.1, 2.0, 8), axis2=Axis("r", 1.0, 1.0, 1))
    cells = run_sweep(spec)
    below = [c for c in cells if c.params.lam <= 0.25]
    assert below and all(c.estimate.mean == 0 for c in below)
    assert cells[-1].estimate.mean > 0.1


def test_window_row_at_lambda_one():
    spec = small_spec(
        axis1=Axis("lambda", 1.0, 1.0, 1), axis2=Axis("r", 0.02, 1.0, 5), fixed={"p": 0.2}, per_cell_reps=3000
    )
    cells = run_sweep(spec)
    assert cells[0].estimate.mean > 0  # r = 0.02, well inside the window
    assert all(c.estimate.ci95[1] < 0.01 for c in cells if c.params.r > 0.9)


def test_csv_layout_and_determinism():
    cells = run_sweep(small_spec())
    text = csv_text(cells)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == [
        "lambda", "r", "p", "n_reps", "estimate_mean", "stderr", "ci_low", "ci_high",
        "censored_fraction", "lambda_c", "regime",
    ]
    assert len(rows) == 1 + 9
    assert {row[-1] for row in rows[1:]} <= {"subcritical", "critical", "supercritical"}
    # row-major: first axis outer
    assert [row[0] for row in rows[1:4]] == [rows[1][0]] * 3
    assert csv_text(run_sweep(small_spec())) == text


def test_one_cell_csv():
    spec = small_spec(axis1=Axis("lambda", 0.2, 0.2, 1), axis2=Axis("r", 0.5, 0.5, 1), per_cell_reps=10)
    assert len(csv_text(run_sweep(spec)).splitlines()) == 2


def test_csv_worker_invariance():
    spec = small_spec()
    texts = {csv_text(run_sweep(spec, workers=w)) for w in (1, 4, 8)}
    assert len(texts) == 1


def test_progeny_estimator():
    spec = small_spec(axis1=Axis("lambda", 0.05, 0.2, 2), axis2=Axis("r", 0.3, 1.0, 2), estimator=Estimator.MEAN_PROGENY)
    for c in run_sweep(spec):
        assert c.estimate.mean >= 1.0


def test_overlay_endpoints_p_one(tmp_path):
    spec = small_spec(axis1=Axis("lambda", 0.05, 1.2, 3), axis2=Axis("r", 0.0, 1.0, 3), per_cell_reps=20)
    path = tmp_path / "p1.svg"
    emit_phase_svg(run_sweep(spec), True, path)
    verts = svg_overlay_vertices(path)
    assert len(verts) == 200
    assert verts[0][1] == pytest.approx(1.0, abs=1e-5)
    assert verts[-1] == (1.0, 0.25)
    for r, lam in verts:
        assert lam == pytest.approx((1 + np.sqrt(r)) ** -2, abs=1e-12)


def test_overlay_minimum_for_p_point_two():
    verts = overlay_curve("r", "lambda", (1e-12, 1.0), {"p": 0.2}, n=201)
    r_min, lam_min = min(verts, key=lambda v: v[1])
    assert lam_min == pytest.approx(0.8, abs=1e-12)
    assert r_min == pytest.approx(0.25, abs=1e-12)


def test_svg_without_overlay(tmp_path):
    spec = small_spec(per_cell_reps=20)
    path = tmp_path / "h.svg"
    emit_phase_svg(run_sweep(spec), False, path)
    text = path.read_text()
    assert text.startswith("<?xml") and "<svg" in text and 'id="heatmap"' in text
    assert "critical-curve" not in text
    assert ">λ<" in text and ">r<" in text


def test_rp_plane_overlay():
    verts = overlay_curve("r", "p", (0.05, 1.0), {"lambda": 0.7})
    from immunebranch.analytics import critical_lambda_mixed

    assert verts
    for r, p in verts:
        assert critical_lambda_mixed(r, p) == pytest.approx(0.7, abs=1e-12)
