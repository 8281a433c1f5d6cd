"""
Quickstart: fill missing markers in a synthetic capture
========================================================

Build a small CMU-style dataset, train a tiny LSTM on it and use the model
to fill gaps in a held-out take, both on the whole sequence and frame by
frame as a live stream would deliver it.

Runs in about a minute on one CPU core.
"""

import tempfile
from pathlib import Path

import numpy as np

from mocaprecon import (
    GapSpec,
    ModelBundle,
    SplitSpec,
    TrainConfig,
    fit_normalizer,
    interpolate_linear,
    load_catalog,
    normalize,
    rmse_missing,
    sample_mask,
    train,
)
from mocaprecon.synth import write_dataset

root = Path(tempfile.mkdtemp(prefix="mocap_"))
catalog = load_catalog(write_dataset(root, seed=0))
split = SplitSpec.load(root / "split.json")
print(f"{len(catalog.ids)} takes written to {root}")

###############################################################################
# Every take is turned into 41 hip-centred marker positions per frame.
# Statistics for normalization come from the training takes only.

train_seqs = [catalog.load(i) for i in split.train]
norm = fit_normalizer(train_seqs)
seq = catalog.load("14_01")
print(f"boxing take: {seq.n_frames} frames, {seq.n_markers} markers, {seq.duration:.0f} s")

###############################################################################
# A deliberately small model. ``TrainConfig.desk`` gives the CPU-sized
# defaults and ``TrainConfig.paper`` the published ones.

cfg = TrainConfig.desk("lstm", width=64, epochs=2, steps_per_epoch=150, val_max_frames=300)
model, log = train(
    [normalize(s.positions, norm) for s in train_seqs],
    [normalize(catalog.load(i).positions, norm) for i in split.validation],
    cfg,
    norm,
    catalog.unit_scale_to_cm,
)
bundle = ModelBundle(model, norm, cfg, catalog.unit_scale_to_cm, seq.marker_names)
print(f"trained {len(log.losses)} steps in {log.wall_seconds:.0f} s, validation RMSE {log.val_rmse_cm[-1]:.2f} cm")

###############################################################################
# Knock out 20% of the marker cells in gaps of about 10 frames and compare.

mask = sample_mask(seq.n_frames, seq.n_markers, GapSpec(0.2, 10, 5, rng_seed=1))
holed = np.where(mask.coordinates(), seq.positions, np.nan)
scale = catalog.unit_scale_to_cm
for name, recon in [("interpolation", interpolate_linear(holed, mask)), ("lstm", bundle(holed, mask))]:
    print(f"{name:>13}: {rmse_missing(seq.positions, recon, mask, unit_scale_to_cm=scale):.2f} cm")

# Three hundred steps is nowhere near enough to beat interpolation on
# 10-frame gaps; demos/03_long_gaps.py shows where a trained model pays off.

###############################################################################
# Streaming: one pose in, one pose out, no look-ahead.

streamer = bundle.streamer()
live = np.array([streamer.step(holed[t], mask.present[t]) for t in range(seq.n_frames)])
print("streamed output matches batch:", np.allclose(live, bundle(holed, mask)))
