"""Reconstruction error metrics and the experiment drivers.

A *method* is any callable ``method(positions, mask) -> positions`` working
in dataset units; missing cells of the input are NaN so a method cannot peek
at them. Trained models (:class:`~mocaprecon.models.ModelBundle`) and the
baselines from :func:`baseline_methods` both fit this signature.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import fill_mean, interpolate_linear
from .bvh import PoseSequence
from .corruption import GapSpec, MaskSequence, long_gap_mask, sample_mask
from .errors import ConfigError, DimensionMismatch, NoMissingMarkers
from .pipeline import denormalize


def _arr(x):
    return x.positions if isinstance(x, PoseSequence) else np.asarray(x, dtype=np.float64)


def _present(mask):
    return mask.present if isinstance(mask, MaskSequence) else np.asarray(mask, dtype=bool)


def rmse_missing(truth, recon, mask, norm=None, unit_scale_to_cm: float = 1.0) -> float:
    """Root mean squared coordinate error over missing cells, in centimeters.

    With ``norm``, ``truth`` and ``recon`` are normalized and are mapped back
    to dataset units first.
    """
    truth, recon, present = _arr(truth), _arr(recon), _present(mask)
    if truth.shape != recon.shape or present.shape != (truth.shape[0], truth.shape[1] // 3):
        raise DimensionMismatch(f"truth {truth.shape}, recon {recon.shape}, mask {present.shape}")
    missing = ~np.repeat(present, 3, axis=1)
    if not missing.any():
        raise NoMissingMarkers("no missing markers to score")
    if norm is not None:
        truth, recon = denormalize(truth, norm), denormalize(recon, norm)
    err = (recon - truth)[missing]
    return float(np.sqrt(np.mean(err * err)) * unit_scale_to_cm)


def per_frame_rmse(truth, recon, mask, norm=None, unit_scale_to_cm: float = 1.0) -> np.ndarray:
    """RMSE over each frame's missing cells; frames with nothing missing score 0."""
    truth, recon, present = _arr(truth), _arr(recon), _present(mask)
    if norm is not None:
        truth, recon = denormalize(truth, norm), denormalize(recon, norm)
    missing = ~np.repeat(present, 3, axis=1)
    sq = np.where(missing, (recon - truth) ** 2, 0.0).sum(axis=1)
    counts = missing.sum(axis=1)
    return np.sqrt(np.divide(sq, counts, out=np.zeros_like(sq), where=counts > 0)) * unit_scale_to_cm


@dataclass
class EvalReport:
    experiment: str
    method: str
    sequence: str
    setting: str
    rmse_cm: list[float]
    seeds: list[int]
    config: dict = field(default_factory=dict)
    curves: np.ndarray | None = field(default=None, repr=False)

    @property
    def repeats(self) -> int:
        return len(self.rmse_cm)

    @property
    def mean(self) -> float:
        return float(np.mean(self.rmse_cm))

    @property
    def std(self) -> float:
        """Population standard deviation over repeats."""
        return float(np.std(self.rmse_cm))

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "method": self.method,
            "sequence": self.sequence,
            "setting": self.setting,
            "mean_cm": self.mean,
            "std_cm": self.std,
            "repeats": self.repeats,
            "seeds": list(self.seeds),
            "config": self.config,
        }


def find_report(reports, **match) -> EvalReport:
    hits = [r for r in reports if all(getattr(r, k) == v for k, v in match.items())]
    if len(hits) != 1:
        raise LookupError(f"{len(hits)} reports match {match}")
    return hits[0]


def write_reports(reports, out_dir, name: str = "report"):
    """Write ``<name>.csv`` (one row per repeat), ``<name>.json`` and per-frame curve CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{name}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "method", "sequence", "setting", "repeat", "seed", "rmse_cm"])
        for r in reports:
            for k, (err, seed) in enumerate(zip(r.rmse_cm, r.seeds)):
                writer.writerow([r.experiment, r.method, r.sequence, r.setting, k, seed, repr(err)])
    (out_dir / f"{name}.json").write_text(json.dumps([r.summary() for r in reports], indent=2))
    groups: dict[tuple, list] = {}
    for r in reports:
        if r.curves is not None:
            groups.setdefault((r.sequence, r.setting), []).append(r)
    written = []
    for (seq, setting), group in groups.items():
        path = out_dir / f"{name}_curve_{seq}_{setting}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame"] + [r.method for r in group])
            means = [np.mean(r.curves, axis=0) for r in group]
            for t in range(len(means[0])):
                writer.writerow([t] + [repr(float(m[t])) for m in means])
        written.append(path)
    return written


def baseline_methods(norm) -> dict:
    return {
        "interpolation": lambda positions, mask: interpolate_linear(positions, mask, norm.mean_pose),
        "mean": lambda positions, mask: fill_mean(positions, mask, norm),
    }


def _seed(*parts) -> int:
    key = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def _score(methods, seq: PoseSequence, mask: MaskSequence):
    coords = mask.coordinates()
    observed = np.where(coords, seq.positions, np.nan)
    results = {}
    for name, method in methods.items():
        recon = np.asarray(method(observed, mask), dtype=np.float64)
        if not np.isfinite(recon).all():
            raise ValueError(f"method {name!r} returned non-finite values")
        if not np.array_equal(recon[coords], seq.positions[coords]):
            raise ValueError(f"method {name!r} altered observed markers")
        results[name] = recon
    return results


def run_rate_table(methods: dict, sequences: dict, rates=(0.10, 0.20, 0.30), repeats: int = 3, seed: int = 0,
                   gap_mean: float = 10.0, gap_std: float = 5.0) -> list[EvalReport]:
    """Random gaps at each missing rate; fresh masks per repeat, shared by all methods."""
    if any(rate <= 0 for rate in rates):
        raise NoMissingMarkers("rate_table needs positive missing rates")
    reports = []
    for seq_id, seq in sequences.items():
        for rate in rates:
            errs = {name: [] for name in methods}
            seeds = []
            for r in range(repeats):
                s = _seed(seed, seq_id, round(rate * 1000), r)
                seeds.append(s)
                mask = sample_mask(seq.n_frames, seq.n_markers, GapSpec(rate, gap_mean, gap_std, s))
                for name, recon in _score(methods, seq, mask).items():
                    errs[name].append(rmse_missing(seq.positions, recon, mask, unit_scale_to_cm=seq.unit_scale_to_cm))
            cfg = {"rate": rate, "gap_mean": gap_mean, "gap_std": gap_std, "repeats": repeats, "seed": seed}
            reports += [EvalReport("rate_table", name, seq_id, f"rate={rate:.2f}", errs[name], seeds, cfg) for name in methods]
    return reports


def _pick_markers(rng, n_markers: int, count: int, exclude=(0,)):
    pool = np.array([m for m in range(n_markers) if m not in set(exclude)])
    if count > len(pool):
        raise ConfigError(f"cannot pick {count} of {len(pool)} markers")
    return sorted(rng.choice(pool, size=count, replace=False).tolist())


def run_gap_sweep(methods: dict, sequences: dict, gap_lengths, n_missing: int = 5, repeats: int = 3,
                  seed: int = 0, exclude_markers=(0,)) -> list[EvalReport]:
    """``n_missing`` random markers vanish together for each gap length.

    The gap start is uniform over positions that leave at least one observed
    frame on both sides. The hip marker (index 0) is excluded by default
    because it is identically zero after hip-centering.
    """
    reports = []
    for seq_id, seq in sequences.items():
        for length in gap_lengths:
            if length + 2 > seq.n_frames:
                raise ConfigError(f"gap of {length} frames does not fit sequence {seq_id}")
            errs = {name: [] for name in methods}
            seeds = []
            for r in range(repeats):
                s = _seed(seed, seq_id, int(length), r)
                seeds.append(s)
                rng = np.random.default_rng(s)
                markers = _pick_markers(rng, seq.n_markers, n_missing, exclude_markers)
                start = int(rng.integers(1, seq.n_frames - length))
                mask = long_gap_mask(seq.n_frames, seq.n_markers, markers, start, int(length))
                for name, recon in _score(methods, seq, mask).items():
                    errs[name].append(rmse_missing(seq.positions, recon, mask, unit_scale_to_cm=seq.unit_scale_to_cm))
            cfg = {"gap": int(length), "n_missing": n_missing, "repeats": repeats, "seed": seed}
            reports += [EvalReport("gap_sweep", name, seq_id, f"gap={int(length)}", errs[name], seeds, cfg) for name in methods]
    return reports


def run_long_gap(methods: dict, sequences: dict, marker_counts=(3, 30), repeats: int = 5, seed: int = 0,
                 start_s: float = 1.5, lead_in_s: float = 1.0, gap_s: float = 5.0, lead_out_s: float = 1.0,
                 exclude_markers=(0,)) -> list[EvalReport]:
    """The same markers vanish for one long stretch.

    Measurement starts ``start_s`` into the clip: ``lead_in_s`` with every
    marker present, ``gap_s`` with the chosen markers missing, then
    ``lead_out_s`` with everything present again. The clip is cut after the
    lead-out. Reports carry per-frame error curves over the measurement
    period, one row per repeat.
    """
    reports = []
    for seq_id, seq in sequences.items():
        fps = seq.frame_rate
        start, lead, gap, tail = (int(round(s * fps)) for s in (start_s, lead_in_s, gap_s, lead_out_s))
        end = start + lead + gap + tail
        if end > seq.n_frames:
            raise ConfigError(f"sequence {seq_id} has {seq.n_frames} frames, protocol needs {end}")
        clip = seq.replace(seq.positions[:end])
        for count in marker_counts:
            errs = {name: [] for name in methods}
            curves = {name: [] for name in methods}
            seeds = []
            for r in range(repeats):
                s = _seed(seed, seq_id, int(count), r)
                seeds.append(s)
                markers = _pick_markers(np.random.default_rng(s), seq.n_markers, count, exclude_markers)
                mask = long_gap_mask(end, seq.n_markers, markers, start + lead, gap)
                for name, recon in _score(methods, clip, mask).items():
                    errs[name].append(rmse_missing(clip.positions, recon, mask, unit_scale_to_cm=seq.unit_scale_to_cm))
                    curve = per_frame_rmse(clip.positions, recon, mask, unit_scale_to_cm=seq.unit_scale_to_cm)
                    curves[name].append(curve[start:end])
            cfg = {"markers": count, "start_frame": start, "lead_in": lead, "gap": gap, "lead_out": tail,
                   "repeats": repeats, "seed": seed}
            reports += [
                EvalReport("long_gap", name, seq_id, f"markers={count}", errs[name], seeds, cfg, np.array(curves[name]))
                for name in methods
            ]
    return reports


GENERALIZATION_VARIANTS = ("complete", "without_subject", "without_motion")


def run_generalization(catalog, split, cfg, test_ids=None, variants=GENERALIZATION_VARIANTS, rate: float = 0.20,
                       gap: int = 100, repeats: int = 3, seed: int = 0, max_test_frames=None,
                       model_cache=None) -> list[EvalReport]:
    """Retrain per split variant and score each test sequence at ``rate`` with ``gap``-frame gaps.

    ``without_subject`` drops the test sequence's subject from training and
    ``without_motion`` its motion type. ``model_cache`` (a dict) reuses
    models across calls; keys are the training id tuples.
    """
    from .models import ModelBundle, train
    from .pipeline import fit_normalizer, make_splits, normalize

    unknown = set(variants) - set(GENERALIZATION_VARIANTS)
    if unknown:
        raise ConfigError(f"unknown generalization variants {sorted(unknown)}; valid: {GENERALIZATION_VARIANTS}")
    cache = {} if model_cache is None else model_cache
    loaded: dict[str, PoseSequence] = {}

    def get(seq_id):
        if seq_id not in loaded:
            loaded[seq_id] = catalog.load(seq_id)
        return loaded[seq_id]

    test_ids = list(split.test) if test_ids is None else list(test_ids)
    reports = []
    for seq_id in test_ids:
        entry = catalog[seq_id]
        seq = get(seq_id)
        if max_test_frames:
            seq = seq.replace(seq.positions[:max_test_frames])
        for variant in variants:
            filters = {
                "complete": {},
                "without_subject": {"without_subjects": [entry.subject]},
                "without_motion": {"without_motions": [entry.motion]},
            }[variant]
            tr, va, _ = make_splits(catalog, split, **filters)
            key = (tuple(tr.ids), tuple(va.ids), cfg.digest())
            if key not in cache:
                train_seqs = [get(i) for i in tr.ids]
                norm = fit_normalizer(train_seqs)
                model, log = train(
                    [normalize(s.positions, norm) for s in train_seqs],
                    [normalize(get(i).positions, norm) for i in va.ids],
                    cfg, norm, catalog.unit_scale_to_cm,
                )
                cache[key] = ModelBundle(model, norm, cfg, catalog.unit_scale_to_cm, seq.marker_names)
            bundle = cache[key]
            errs, seeds = [], []
            for r in range(repeats):
                s = _seed(seed, seq_id, variant, r)
                seeds.append(s)
                mask = sample_mask(seq.n_frames, seq.n_markers, GapSpec(rate, float(gap), 0.0, s))
                recon = _score({"model": bundle}, seq, mask)["model"]
                errs.append(rmse_missing(seq.positions, recon, mask, unit_scale_to_cm=seq.unit_scale_to_cm))
            run_cfg = {"variant": variant, "rate": rate, "gap": gap, "train_ids": tr.ids, "train": cfg.to_dict()}
            reports.append(EvalReport("generalization", cfg.arch, seq_id, variant, errs, seeds, run_cfg))
    return reports


def degradation(reports) -> dict[str, float]:
    """Relative change of the mean RMSE (over test sequences) of each variant versus ``complete``."""
    by_variant: dict[str, list[float]] = {}
    for r in reports:
        by_variant.setdefault(r.setting, []).append(r.mean)
    base = float(np.mean(by_variant["complete"]))
    return {v: float(np.mean(errs)) / base - 1.0 for v, errs in by_variant.items() if v != "complete"}
