import numpy as np
import pytest

from scanstream.codec import C_MAX, C_MIN, Q_MAX, Q_MIN
from scanstream.predictor import (
    FEATURE_NAMES,
    MODEL_FORMAT,
    ConfigFloor,
    ConfigGrid,
    FitError,
    RateSample,
    SelectionError,
    build_grid,
    featurize,
    fit,
    load_model,
    predict,
    read_samples,
    save_model,
    select_config,
    select_from_grid,
    write_samples,
)


def poly_surface(q, c, n):
    # ground-truth rate surface used to synthesize exact training data
    return 5e4 + 300.0 * q + 40.0 * q * q - 900.0 * c + 12.0 * c * c + 2.0 * n + 0.9 * q * c


def synth_samples(n_points=4096):
    return [
        RateSample(q=q, c=c, n_points=n_points, measured_bps=poly_surface(q, c, n_points))
        for q in range(Q_MIN, Q_MAX + 1)
        for c in range(C_MIN, C_MAX + 1)
    ]


def test_featurize_order():
    f = featurize(3.0, 2.0, 10.0)
    assert len(FEATURE_NAMES) == 9
    assert f.tolist() == [3.0, 2.0, 10.0, 9.0, 4.0, 100.0, 6.0, 30.0, 20.0]


def test_fit_recovers_polynomial_surface():
    model = fit(synth_samples(), 10.0)
    for q, c in [(8, 0), (16, 5), (24, 9), (11, 3)]:
        truth = poly_surface(q, c, 4096)
        assert predict(model, q, c, 4096) == pytest.approx(truth, rel=1e-6)
    assert model.diagnostics["rel_rmse"] < 1e-6


def test_fit_rejects_thin_data():
    samples = synth_samples()[:10]
    with pytest.raises(FitError):
        fit(samples, 10.0)
    # enough rows but too few distinct q values
    narrow = [s for s in synth_samples() if s.q in (8, 9)]
    with pytest.raises(FitError):
        fit(narrow, 10.0)
    narrow_c = [s for s in synth_samples() if s.c in (0, 1)]
    with pytest.raises(FitError):
        fit(narrow_c, 10.0)


def test_fit_tolerates_constant_n():
    # every corpus shares one sensor, so the n columns are degenerate; the
    # fit must cope instead of blowing up
    model = fit(synth_samples(), 10.0)
    assert "n" in model.diagnostics["degenerate_features"]


def test_grid_covers_full_product():
    model = fit(synth_samples(), 10.0)
    grid = build_grid(model, 4096)
    assert len(grid.qs) == (Q_MAX - Q_MIN + 1) * (C_MAX - C_MIN + 1) == 170
    assert grid.n_points == 4096
    assert np.all(grid.predicted_bps >= 1.0)


def test_select_matches_exhaustive_argmin():
    model = fit(synth_samples(), 10.0)
    grid = build_grid(model, 4096)
    floor = ConfigFloor(min_q=Q_MIN)
    rng = np.random.default_rng(99)
    lo, hi = grid.predicted_bps.min(), grid.predicted_bps.max()
    for r_trg in rng.uniform(0.5 * lo, 1.5 * hi, size=200):
        cfg = select_from_grid(grid, float(r_trg), floor)
        best = np.argmin(np.abs(grid.predicted_bps - r_trg))
        assert abs(predict(model, cfg.q, cfg.c, 4096) - r_trg) == pytest.approx(
            abs(grid.predicted_bps[best] - r_trg), abs=1e-9
        )


def test_select_tie_breaks_to_higher_q_then_lower_c():
    model = fit(synth_samples(), 10.0)
    base = build_grid(model, 4096)
    pred = np.full_like(base.predicted_bps, 9.9e6)
    ties = {(12, 4): 3.0e6, (12, 2): 3.0e6, (10, 0): 3.0e6, (14, 8): 4.0e6}
    for i, (q, c) in enumerate(zip(base.qs, base.cs)):
        if (q, c) in ties:
            pred[i] = ties[q, c]
    grid = ConfigGrid(n_points=4096, qs=base.qs, cs=base.cs, predicted_bps=pred)
    # exact three-way tie at 3.0 Mbps: larger q wins, then smaller c
    cfg = select_from_grid(grid, 3.0e6, ConfigFloor(min_q=8))
    assert (cfg.q, cfg.c) == (12, 2)
    # equidistant between 3.0 and 4.0: prefer the larger-q side
    cfg = select_from_grid(grid, 3.5e6, ConfigFloor(min_q=8))
    assert (cfg.q, cfg.c) == (14, 8)


def test_select_respects_floor():
    model = fit(synth_samples(), 10.0)
    grid = build_grid(model, 4096)
    lo_rate = float(grid.predicted_bps.min())
    cfg = select_from_grid(grid, lo_rate, ConfigFloor(min_q=18))
    assert cfg.q >= 18


def test_select_empty_floor_raises():
    model = fit(synth_samples(), 10.0)
    grid = build_grid(model, 4096)
    with pytest.raises(SelectionError):
        select_from_grid(grid, 1e6, ConfigFloor(min_q=Q_MAX + 1))


def test_select_config_matches_grid_path():
    model = fit(synth_samples(), 10.0)
    a = select_config(model, 2.0e6, 4096)
    b = select_from_grid(build_grid(model, 4096), 2.0e6, ConfigFloor())
    assert (a.q, a.c) == (b.q, b.c)


def test_model_io_roundtrip(tmp_path):
    model = fit(synth_samples(), 10.0)
    path = tmp_path / "model.json"
    save_model(model, path)
    clone = load_model(path)
    for q, c in [(8, 0), (20, 7)]:
        assert predict(clone, q, c, 4096) == predict(model, q, c, 4096)
    assert clone.diagnostics["rel_rmse"] == model.diagnostics["rel_rmse"]


def test_load_model_rejects_wrong_format(tmp_path):
    path = tmp_path / "model.json"
    model = fit(synth_samples(), 10.0)
    save_model(model, path)
    text = path.read_text().replace(MODEL_FORMAT, "other-format-v9")
    path.write_text(text)
    with pytest.raises(ValueError):
        load_model(path)


def test_samples_io_roundtrip(tmp_path):
    samples = synth_samples()[:40]
    path = tmp_path / "samples.csv"
    write_samples(path, samples)
    clone = read_samples(path)
    assert len(clone) == 40
    assert clone[7] == samples[7]
