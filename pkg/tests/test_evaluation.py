import json
import math

import numpy as np
import pytest

from mocaprecon.bvh import PoseSequence
from mocaprecon.corruption import long_gap_mask
from mocaprecon.errors import ConfigError, DimensionMismatch, NoMissingMarkers
from mocaprecon.evaluation import (
    EvalReport,
    baseline_methods,
    degradation,
    find_report,
    per_frame_rmse,
    rmse_missing,
    run_gap_sweep,
    run_long_gap,
    run_rate_table,
    write_reports,
)
from mocaprecon.pipeline import fit_normalizer, normalize


def brute_force_rmse(truth, recon, present, scale):
    total, count = 0.0, 0
    for t in range(present.shape[0]):
        for m in range(present.shape[1]):
            if not present[t, m]:
                for k in range(3):
                    d = recon[t, 3 * m + k] - truth[t, 3 * m + k]
                    total += d * d
                    count += 1
    return math.sqrt(total / count) * scale


def random_fixture(seed):
    rng = np.random.default_rng(seed)
    frames, markers = rng.integers(1, 30), rng.integers(1, 8)
    truth = rng.normal(size=(frames, 3 * markers)) * rng.uniform(0.1, 10)
    recon = truth + rng.normal(size=truth.shape)
    present = rng.random((frames, markers)) < rng.uniform(0.2, 0.9)
    present.flat[rng.integers(present.size)] = False
    return truth, recon, present, float(rng.uniform(0.5, 6))


def test_hand_case():
    truth = np.zeros((2, 6))
    recon = truth.copy()
    recon[1, 3:6] = [1, 2, 2]
    present = np.array([[True, True], [True, False]])
    assert rmse_missing(truth, recon, present) == pytest.approx(math.sqrt(3), abs=1e-12)
    assert round(rmse_missing(truth, recon, present), 4) == 1.7321


@pytest.mark.parametrize("seed", range(100))
def test_matches_brute_force(seed):
    truth, recon, present, scale = random_fixture(seed)
    assert abs(rmse_missing(truth, recon, present, unit_scale_to_cm=scale) - brute_force_rmse(truth, recon, present, scale)) < 1e-12


def test_normalized_inputs_are_denormalized(rng):
    truth = rng.normal(size=(20, 6)) * 3
    recon = truth + rng.normal(size=truth.shape)
    present = rng.random((20, 2)) < 0.5
    norm = fit_normalizer([truth])
    a = rmse_missing(normalize(truth, norm), normalize(recon, norm), present, norm, 2.0)
    assert a == pytest.approx(rmse_missing(truth, recon, present, unit_scale_to_cm=2.0), rel=1e-12)


def test_observed_cells_do_not_count(rng):
    truth, recon, present, _ = random_fixture(3)
    coords = np.repeat(present, 3, axis=1)
    changed = np.where(coords, recon + 100, recon)
    assert rmse_missing(truth, changed, present) == rmse_missing(truth, recon, present)
    assert rmse_missing(truth, truth, present) == 0


def test_rmse_errors():
    with pytest.raises(NoMissingMarkers):
        rmse_missing(np.zeros((3, 6)), np.ones((3, 6)), np.ones((3, 2), dtype=bool))
    with pytest.raises(DimensionMismatch):
        rmse_missing(np.zeros((3, 6)), np.zeros((3, 9)), np.ones((3, 2), dtype=bool))


def test_per_frame_curve(rng):
    truth = rng.normal(size=(6, 6))
    recon = truth.copy()
    recon[2:4, :3] += [1, 2, 2]
    mask = long_gap_mask(6, 2, [0], 2, 2)
    curve = per_frame_rmse(truth, recon, mask, unit_scale_to_cm=2.0)
    np.testing.assert_allclose(curve, [0, 0, 2 * math.sqrt(3), 2 * math.sqrt(3), 0, 0])


def affine_sequences(rng, count=2, frames=1000, markers=12):
    out = {}
    for k in range(count):
        a = rng.integers(-50, 50, size=3 * markers).astype(float)
        b = rng.integers(-3, 4, size=3 * markers).astype(float)
        out[f"s{k}"] = PoseSequence([f"m{i}" for i in range(markers)], 120.0, 2.0, a + np.arange(frames)[:, None] * b)
    return out


def test_drivers_report_zero_for_interpolation_on_lines(rng):
    seqs = affine_sequences(rng)
    norm = fit_normalizer(list(seqs.values()))
    methods = {"interpolation": baseline_methods(norm)["interpolation"]}
    reports = run_rate_table(methods, seqs, repeats=2)
    reports += run_gap_sweep(methods, seqs, [1, 50, 300], n_missing=5, repeats=2)
    reports += run_long_gap(methods, seqs, marker_counts=(3, 10), repeats=2, start_s=0.5, lead_in_s=0.5, gap_s=5, lead_out_s=1)
    assert len(reports) == 2 * 3 + 2 * 3 + 2 * 2
    assert all(r.mean == 0 and r.std == 0 for r in reports)
    assert all((r.curves == 0).all() for r in reports if r.curves is not None)


def test_rate_table_shape_and_determinism(rng):
    seqs = affine_sequences(rng, count=1)
    seqs["s0"] = seqs["s0"].replace(seqs["s0"].positions + rng.normal(size=seqs["s0"].positions.shape))
    methods = baseline_methods(fit_normalizer(list(seqs.values())))
    a = run_rate_table(methods, seqs, repeats=3, seed=5)
    b = run_rate_table(methods, seqs, repeats=3, seed=5)
    assert [(r.method, r.setting, r.rmse_cm, r.seeds) for r in a] == [(r.method, r.setting, r.rmse_cm, r.seeds) for r in b]
    assert {r.setting for r in a} == {"rate=0.10", "rate=0.20", "rate=0.30"}
    assert all(r.repeats == 3 and r.std >= 0 and len(set(r.seeds)) == 3 for r in a)
    interp = find_report(a, method="interpolation", setting="rate=0.10")
    mean = find_report(a, method="mean", setting="rate=0.10")
    assert interp.mean < mean.mean
    with pytest.raises(NoMissingMarkers):
        run_rate_table(methods, seqs, rates=(0.0,))
    assert isinstance(NoMissingMarkers("x"), ConfigError)


def test_methods_must_not_touch_observed(rng):
    seqs = affine_sequences(rng, count=1, frames=100)
    with pytest.raises(ValueError, match="altered"):
        run_rate_table({"bad": lambda p, m: np.zeros_like(p)}, seqs, rates=(0.1,), repeats=1)


def test_methods_never_see_missing_values(rng):
    seqs = affine_sequences(rng, count=1, frames=200)
    seen = []

    def spy(positions, mask):
        seen.append(np.isnan(positions) == ~mask.coordinates())
        return np.where(mask.coordinates(), positions, 0.0)

    run_rate_table({"spy": spy}, seqs, rates=(0.2,), repeats=1)
    assert seen and all(s.all() for s in seen)


def test_gap_sweep_setup(rng):
    seqs = affine_sequences(rng, count=1, frames=400)
    masks = []

    def spy(positions, mask):
        masks.append(mask)
        return np.where(mask.coordinates(), positions, 0.0)

    run_gap_sweep({"spy": spy}, seqs, [40], n_missing=5, repeats=3)
    for mask in masks:
        missing = ~mask.present
        assert missing[:, 0].sum() == 0
        rows = np.flatnonzero(missing.any(axis=1))
        assert len(rows) == 40 and rows[-1] - rows[0] == 39
        assert (missing[rows].sum(axis=1) == 5).all()
        assert rows[0] >= 1 and rows[-1] <= 398
    with pytest.raises(ConfigError):
        run_gap_sweep({"spy": spy}, seqs, [399])


def test_long_gap_protocol(rng):
    seqs = affine_sequences(rng, count=1, frames=1200)
    seqs["s0"] = seqs["s0"].replace(seqs["s0"].positions + rng.normal(size=(1200, 36)))
    norm = fit_normalizer(list(seqs.values()))
    reports = run_long_gap(baseline_methods(norm), seqs, marker_counts=(3,), repeats=5)
    r = find_report(reports, method="interpolation")
    # measurement window: 1 s lead-in, 5 s gap, 1 s lead-out at 120 Hz
    assert r.curves.shape == (5, 840)
    assert (r.curves[:, :120] == 0).all() and (r.curves[:, 720:] == 0).all()
    assert (r.curves[:, 120:720] > 0).all()
    assert r.config["start_frame"] == 180 and r.config["gap"] == 600
    with pytest.raises(ConfigError):
        run_long_gap(baseline_methods(norm), {"s": seqs["s0"].replace(seqs["s0"].positions[:900])})


def test_report_files(tmp_path, rng):
    curves = rng.random((2, 4))
    reports = [
        EvalReport("long_gap", "a", "s", "markers=3", [1.0, 2.0], [11, 12], {"x": 1}, curves),
        EvalReport("long_gap", "b", "s", "markers=3", [3.0, 3.0], [11, 12], {"x": 1}, curves * 2),
    ]
    written = write_reports(reports, tmp_path, "lg")
    rows = (tmp_path / "lg.csv").read_text().splitlines()
    assert rows[0] == "experiment,method,sequence,setting,repeat,seed,rmse_cm"
    assert len(rows) == 5
    summary = json.loads((tmp_path / "lg.json").read_text())
    assert summary[0]["mean_cm"] == 1.5 and summary[0]["std_cm"] == 0.5 and summary[0]["repeats"] == 2
    assert summary[1]["seeds"] == [11, 12]
    curve_rows = written[0].read_text().splitlines()
    assert curve_rows[0] == "frame,a,b" and len(curve_rows) == 5


def test_degradation():
    reports = [
        EvalReport("generalization", "lstm", "x", "complete", [2.0], [1]),
        EvalReport("generalization", "lstm", "y", "complete", [4.0], [1]),
        EvalReport("generalization", "lstm", "x", "without_subject", [3.0], [1]),
        EvalReport("generalization", "lstm", "y", "without_subject", [4.5], [1]),
    ]
    assert degradation(reports) == {"without_subject": pytest.approx(0.25)}


def test_generalization_runs_each_variant(catalog, split):
    from mocaprecon.evaluation import run_generalization
    from mocaprecon.models import TrainConfig

    cfg = TrainConfig(arch="window", width=8, seq_len=4, epochs=1, steps_per_epoch=3, batch_size=4)
    cache = {}
    kwargs = dict(test_ids=["14_01"], repeats=2, max_test_frames=600, model_cache=cache)
    reports = run_generalization(catalog, split, cfg, **kwargs)
    assert [r.setting for r in reports] == ["complete", "without_subject", "without_motion"]
    assert len(cache) == 3
    subject = catalog["14_01"].subject
    assert all(catalog[i].subject != subject for i in reports[1].config["train_ids"])
    again = run_generalization(catalog, split, cfg, **{**kwargs, "model_cache": None})
    assert [r.rmse_cm for r in again] == [r.rmse_cm for r in reports]
    assert set(degradation(reports)) == {"without_subject", "without_motion"}
    with pytest.raises(ConfigError):
        run_generalization(catalog, split, cfg, variants=("complete", "w/o everything"))
