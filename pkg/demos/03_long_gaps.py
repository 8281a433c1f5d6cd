"""
Long gaps: interpolation against a trained LSTM
================================================

Five markers disappear for several seconds. Interpolation draws a straight
line through the hole, which is fine for a fraction of a second and poor
after that. The LSTM keeps using the markers that are still visible.

Trains a desk-sized model first (a few minutes). Pass a model file path as
the first argument to skip training.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from mocaprecon import (
    ModelBundle,
    SplitSpec,
    TrainConfig,
    baseline_methods,
    fit_normalizer,
    load_catalog,
    load_model,
    normalize,
    run_gap_sweep,
    run_long_gap,
    save_model,
    train,
)
from mocaprecon.evaluation import find_report
from mocaprecon.synth import write_dataset

root = Path(tempfile.mkdtemp(prefix="mocap_"))
catalog = load_catalog(write_dataset(root, seed=0))
split = SplitSpec.load(root / "split.json")
train_seqs = [catalog.load(i) for i in split.train]
norm = fit_normalizer(train_seqs)
tests = {i: catalog.load(i) for i in split.test}

if len(sys.argv) > 1:
    bundle = load_model(sys.argv[1])
else:
    cfg = TrainConfig.desk("lstm", epochs=2, steps_per_epoch=500, val_max_frames=600)
    model, log = train(
        [normalize(s.positions, norm) for s in train_seqs],
        [normalize(catalog.load(i).positions, norm) for i in split.validation],
        cfg, norm, catalog.unit_scale_to_cm,
        progress=lambda step, loss: step % 100 == 0 and print(f"  step {step:5d}  loss {loss:.5f}"),
    )
    bundle = ModelBundle(model, norm, cfg, catalog.unit_scale_to_cm, train_seqs[0].marker_names)
    save_model(root / "lstm.mnn", bundle)
    print(f"model saved to {root / 'lstm.mnn'}")

methods = {"interpolation": baseline_methods(norm)["interpolation"], "lstm": bundle}

###############################################################################
# Gap length sweep: one gap per missing marker, all starting together.

gaps = (30, 120, 240, 480)
sweep = run_gap_sweep(methods, tests, gaps, n_missing=5, repeats=3)
print("RMSE cm, interpolation / lstm per gap length in frames")
print("        " + " ".join(f"{g:>13}" for g in gaps))
for seq_id in tests:
    row = [f"{find_report(sweep, method=m, sequence=seq_id, setting=f'gap={g}').mean:6.2f}"
           for g in gaps for m in methods]
    print(f"{seq_id:>7} " + " ".join(row))

###############################################################################
# Error over time inside a 5 s gap, averaged over five marker draws.
# The curve covers 1 s before the gap, the gap and 1 s after; below are the
# per-second means inside the gap.

long = run_long_gap(methods, tests, marker_counts=(5,), repeats=5)
for seq_id in tests:
    for name in methods:
        r = find_report(long, method=name, sequence=seq_id)
        curve = r.curves.mean(axis=0)
        lead, gap = r.config["lead_in"], r.config["gap"]
        seconds = curve[lead:lead + gap].reshape(-1, 120).mean(axis=1)
        print(f"{seq_id} {name:>13}: " + " ".join(f"{v:5.2f}" for v in seconds))

try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    fig, axes = plt.subplots(len(tests), 1, sharex=True, figsize=(7, 8))
    for ax, seq_id in zip(axes, tests):
        for name in methods:
            curve = find_report(long, method=name, sequence=seq_id).curves.mean(axis=0)
            ax.plot(np.arange(curve.size) / 120, curve, label=name)
        ax.set_ylabel(f"{seq_id} cm")
    axes[0].legend()
    axes[-1].set_xlabel("seconds")
    fig.savefig(root / "long_gap.png")
    print(f"figure written to {root / 'long_gap.png'}")
