"""Command-line entry point: ``mocaprecon <command> ...``.

Commands read JSON config files; ``--set key=value`` overrides a key (dotted
paths reach nested keys, values parse as JSON and fall back to strings).
Relative paths inside a config resolve against the config file's directory.

Exit codes: 0 success, 1 runtime failure, 2 I/O problem, 3 parse or config error.
"""

from __future__ import annotations

import argparse
import csv
import inspect
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation
from .bvh import PoseSequence, forward_kinematics, read_bvh
from .corruption import GapSpec, sample_mask
from .errors import (
    BvhParseError,
    ConfigError,
    CorruptFile,
    DimensionMismatch,
    MocapError,
    UnknownSequenceId,
    VersionMismatch,
)
from .models import ModelBundle, TrainConfig, load_model, save_model, train
from .pipeline import SplitSpec, fit_normalizer, hip_center, load_catalog, make_splits, normalize

EXIT_OK, EXIT_RUNTIME, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3
MODEL_FILE = "model.mnn"
EXPERIMENTS = {
    "rate_table": evaluation.run_rate_table,
    "gap_sweep": evaluation.run_gap_sweep,
    "long_gap": evaluation.run_long_gap,
    "generalization": evaluation.run_generalization,
}
BASELINES = ("interpolation", "mean")


# config handling


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_overrides(config: dict, overrides) -> dict:
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        node = config
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[leaf] = _parse_value(value)
    return config


def load_config(path, overrides=(), allowed=None, required=()) -> dict:
    path = Path(path)
    try:
        config = json.loads(path.read_text())
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: top level must be an object")
    config = apply_overrides(config, overrides)
    if allowed is not None:
        unknown = set(config) - set(allowed)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")
    missing = [k for k in required if k not in config]
    if missing:
        raise ConfigError(f"{path}: missing keys {missing}")
    config["_base"] = path.resolve().parent
    return config


def _path(config: dict, key: str, default=None) -> Path | None:
    value = config.get(key, default)
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else config["_base"] / p


def _catalog_and_split(config):
    catalog = load_catalog(_path(config, "catalog"))
    split_path = _path(config, "split") or Path(catalog.root) / "split.json"
    return catalog, SplitSpec.load(split_path)


# pose CSV files


def pose_csv_header(marker_names) -> list[str]:
    return [f"{name}.{axis}" for name in marker_names for axis in "xyz"]


def write_pose_csv(path, marker_names, rows, unit_scale_to_cm: float, frame_rate=None):
    """Write poses row by row (``rows`` may be a generator) plus the sidecar JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sidecar = {"unit_scale_to_cm": unit_scale_to_cm, "frame_rate": frame_rate, "marker_names": list(marker_names)}
    Path(f"{path}.json").write_text(json.dumps(sidecar, indent=2))
    count = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(pose_csv_header(marker_names))
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
            fh.flush()
            count += 1
    return count


def _marker_names_from_header(header, path) -> list[str]:
    if len(header) % 3:
        raise ConfigError(f"{path}: header has {len(header)} columns, not a multiple of 3")
    names = []
    for k in range(0, len(header), 3):
        stems = {h.rsplit(".", 1)[0] for h in header[k : k + 3]}
        axes = [h.rsplit(".", 1)[-1] for h in header[k : k + 3]]
        if len(stems) != 1 or axes != ["x", "y", "z"]:
            raise ConfigError(f"{path}: columns {header[k:k + 3]} are not name.x, name.y, name.z")
        names.append(stems.pop())
    return names


def iter_pose_csv(path):
    """``(marker_names, sidecar, rows)``; rows are parsed lazily, NaN allowed."""
    path = Path(path)
    sidecar_path = Path(f"{path}.json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    fh = open(path, newline="")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise ConfigError(f"{path}: empty pose CSV") from None
    names = _marker_names_from_header(header, path)

    def rows():
        with fh:
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise ConfigError(f"{path}:{lineno}: {len(row)} values, expected {len(header)}")
                try:
                    yield np.array([float(v) for v in row])
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from exc

    return names, sidecar, rows()


def read_pose_csv(path) -> PoseSequence:
    names, sidecar, rows = iter_pose_csv(path)
    data = np.array(list(rows)).reshape(-1, 3 * len(names))
    return PoseSequence(names, sidecar.get("frame_rate") or 120.0, sidecar.get("unit_scale_to_cm", 1.0), data)


def iter_mask_csv(path, n_markers: int):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if len(row) != n_markers or any(v.strip() not in ("0", "1") for v in row):
                raise ConfigError(f"{path}:{lineno}: mask row must hold {n_markers} values of 0/1")
            yield np.array([v.strip() == "1" for v in row])


# commands


def cmd_inspect(args) -> int:
    skeleton, frames = read_bvh(args.path)
    poses = forward_kinematics(skeleton, frames)
    print(f"file: {args.path}")
    print(f"joints: {len(skeleton.joints)}")
    print(f"markers: {poses.n_markers}")
    print(f"pose dimension: {3 * poses.n_markers}")
    print(f"channels: {skeleton.n_channels}")
    print(f"frames: {frames.n_frames}")
    print(f"frame rate: {frames.frame_rate:g} Hz")
    print(f"duration: {frames.n_frames / frames.frame_rate:.3f} s")
    return EXIT_OK


def cmd_synth_data(args) -> int:
    from .synth import write_dataset

    path = write_dataset(args.out, seed=args.seed)
    print(f"catalog: {path}")
    return EXIT_OK


PREPROCESS_KEYS = {"catalog", "split", "output_dir", "sequences"}


def cmd_preprocess(args) -> int:
    """Fit the normalizer on the training split and export hip-centered pose CSVs."""
    config = load_config(args.config, args.set, PREPROCESS_KEYS, ("catalog", "output_dir"))
    catalog, split = _catalog_and_split(config)
    out = _path(config, "output_dir")
    out.mkdir(parents=True, exist_ok=True)
    norm = fit_normalizer([catalog.load(i) for i in split.train])
    (out / "normalizer.json").write_text(json.dumps(norm.to_dict()))
    ids = config.get("sequences") or catalog.ids
    for seq_id in ids:
        seq = catalog.load(seq_id)
        write_pose_csv(out / f"{seq_id}.csv", seq.marker_names, seq.positions, seq.unit_scale_to_cm, seq.frame_rate)
    print(f"normalizer fit on {len(split.train)} training sequences; {len(ids)} pose files in {out}")
    return EXIT_OK


TRAIN_KEYS = {"catalog", "split", "output_dir", "train", "without_subjects", "without_motions"}


def cmd_train(args) -> int:
    config = load_config(args.config, args.set, TRAIN_KEYS, ("catalog", "output_dir", "train"))
    cfg = TrainConfig.from_dict(config["train"])
    catalog, split = _catalog_and_split(config)
    tr, va, _ = make_splits(catalog, split, config.get("without_subjects", ()), config.get("without_motions", ()))
    train_seqs = [catalog.load(i) for i in tr.ids]
    norm = fit_normalizer(train_seqs)
    val = [normalize(catalog.load(i).positions, norm) for i in va.ids]

    def progress(step, loss):
        if args.verbose and step % 100 == 0:
            print(f"step {step} loss {loss:.6g}", file=sys.stderr)

    model, log = train(
        [normalize(s.positions, norm) for s in train_seqs], val, cfg, norm, catalog.unit_scale_to_cm, progress
    )
    out = _path(config, "output_dir")
    out.mkdir(parents=True, exist_ok=True)
    bundle = ModelBundle(model, norm, cfg, catalog.unit_scale_to_cm, train_seqs[0].marker_names)
    save_model(out / MODEL_FILE, bundle)
    log.write_loss_csv(out / "train_loss.csv")
    log.write_val_csv(out / "val_rmse.csv")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    print(f"model: {out / MODEL_FILE}")
    print(f"steps: {len(log.losses)}  wall: {log.wall_seconds:.1f} s")
    if log.val_rmse_cm:
        print(f"final validation RMSE: {log.val_rmse_cm[-1]:.4f} cm")
    else:
        print("final validation RMSE: n/a")
    return EXIT_OK


def _load_input(path, bundle: ModelBundle):
    """Positions in dataset units as ``(marker_names, sidecar, row iterator)``."""
    path = Path(path)
    if path.suffix.lower() == ".bvh":
        seq = hip_center(forward_kinematics(*read_bvh(path), unit_scale_to_cm=bundle.unit_scale_to_cm))
        sidecar = {"unit_scale_to_cm": seq.unit_scale_to_cm, "frame_rate": seq.frame_rate}
        return seq.marker_names, sidecar, iter(seq.positions)
    return iter_pose_csv(path)


def stream_reconstruct(bundle: ModelBundle, rows, masks, n_markers: int):
    """Yield one reconstructed pose per input row, reading nothing ahead.

    ``masks`` is an iterator of presence rows or None; NaN in a row also
    marks that marker as missing.
    """
    streamer = bundle.streamer()
    for k, pose in enumerate(rows):
        if masks is not None:
            try:
                present = next(masks)
            except StopIteration:
                raise DimensionMismatch(f"mask ends before input frame {k}") from None
        else:
            present = np.ones(n_markers, dtype=bool)
        present = present & np.isfinite(pose).reshape(-1, 3).all(axis=1)
        yield streamer.step(pose, present)


def cmd_reconstruct(args) -> int:
    bundle = load_model(args.model)
    names, sidecar, rows = _load_input(args.input, bundle)
    n_markers = len(names)
    if 3 * n_markers != bundle.normalizer.dim:
        raise DimensionMismatch(f"input has {n_markers} markers, model expects {bundle.normalizer.dim // 3}")
    if args.mask:
        masks = iter_mask_csv(args.mask, n_markers)
    elif args.missing_rate is not None:
        rows = list(rows)
        spec = GapSpec(args.missing_rate, args.gap_mean, args.gap_std, args.seed)
        mask = sample_mask(len(rows), n_markers, spec)
        if args.mask_out:
            mask.to_csv(args.mask_out)
        masks = iter(mask.present)
    else:
        masks = None

    outputs = stream_reconstruct(bundle, rows, masks, n_markers)
    count = write_pose_csv(
        args.output, names, outputs, sidecar.get("unit_scale_to_cm", bundle.unit_scale_to_cm), sidecar.get("frame_rate")
    )
    print(f"reconstructed {count} frames -> {args.output}")
    return EXIT_OK


EXPERIMENT_KEYS = {"experiment", "catalog", "split", "output_dir", "methods", "sequences", "params", "train", "workers", "name"}


def _driver_params(name: str, params: dict) -> dict:
    driver = EXPERIMENTS[name]
    skip = {"methods", "sequences", "catalog", "split", "cfg", "model_cache"}
    allowed = set(inspect.signature(driver).parameters) - skip
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"unknown {name} params {sorted(unknown)}; allowed: {sorted(allowed)}")
    return dict(params)


def _methods(config, catalog, split) -> dict:
    spec = config.get("methods") or {}
    if not isinstance(spec, dict) or not spec:
        raise ConfigError("methods must be a non-empty object of name -> model path (null for baselines)")
    methods = {}
    baselines = None
    for name, model_path in spec.items():
        if model_path is None:
            if name not in BASELINES:
                raise ConfigError(f"unknown baseline {name!r}; valid: {BASELINES}")
            if baselines is None:
                baselines = evaluation.baseline_methods(fit_normalizer([catalog.load(i) for i in split.train]))
            methods[name] = baselines[name]
        else:
            p = Path(model_path)
            methods[name] = load_model(p if p.is_absolute() else config["_base"] / p)
    return methods


def cmd_experiment(args) -> int:
    config = load_config(args.config, args.set, EXPERIMENT_KEYS, ("experiment", "catalog", "output_dir"))
    name = config["experiment"]
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; valid: {sorted(EXPERIMENTS)}")
    params = _driver_params(name, config.get("params") or {})
    workers = config.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError(f"workers must be a positive integer, got {workers!r}")
    catalog, split = _catalog_and_split(config)
    ids = config.get("sequences") or list(split.test)
    for seq_id in ids:
        catalog[seq_id]  # raises UnknownSequenceId early
    if name == "generalization":
        if "train" not in config:
            raise ConfigError("generalization needs a train config")
        cfg = TrainConfig.from_dict(config["train"])
        reports = evaluation.run_generalization(catalog, split, cfg, test_ids=ids, **params)
    else:
        methods = _methods(config, catalog, split)
        driver = EXPERIMENTS[name]

        def run(seq_id):
            return driver(methods, {seq_id: catalog.load(seq_id)}, **params)

        # cells are seeded per sequence, so thread scheduling cannot change any number
        if workers == 1:
            parts = [run(i) for i in ids]
        else:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(run, ids))
        reports = [r for part in parts for r in part]
    out = _path(config, "output_dir")
    evaluation.write_reports(reports, out, config.get("name", name))
    for r in reports:
        print(f"{r.experiment} {r.method} {r.sequence} {r.setting}: {r.mean:.4f} +/- {r.std:.4f} cm ({r.repeats} repeats)")
    if name == "generalization":
        for variant, change in evaluation.degradation(reports).items():
            print(f"degradation {variant}: {100 * change:+.1f}%")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are config errors, keeping exit 2 for I/O
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mocaprecon", description="Missing-marker reconstruction for motion capture.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="summarize a BVH file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("synth-data", help="write the synthetic CMU-style dataset")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    for name, func, text in [
        ("preprocess", cmd_preprocess, "fit the normalizer and export hip-centered poses"),
        ("train", cmd_train, "train a model from a config file"),
        ("experiment", cmd_experiment, "run an evaluation protocol from a config file"),
    ]:
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.set_defaults(func=func)
    sub.choices["train"].add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("reconstruct", help="fill missing markers frame by frame")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="BVH file or pose CSV (NaN cells count as missing)")
    p.add_argument("--output", required=True)
    p.add_argument("--mask", help="mask CSV, one 0/1 row per frame")
    p.add_argument("--missing-rate", type=float, help="sample a random-gap mask instead of reading one")
    p.add_argument("--gap-mean", type=float, default=10.0)
    p.add_argument("--gap-std", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-out", help="save the sampled mask")
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BvhParseError, ConfigError, UnknownSequenceId) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CorruptFile, VersionMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MocapError, ValueError, KeyError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
