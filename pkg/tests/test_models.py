import numpy as np
import pytest

from mocaprecon.corruption import GapSpec, sample_mask
from mocaprecon.errors import ConfigError, CorruptFile, DimensionMismatch, VersionMismatch
from mocaprecon.models import (
    LstmModel,
    LstmStreamer,
    ModelBundle,
    TrainConfig,
    WindowModel,
    WindowStreamer,
    load_model,
    reconstruct_sequence,
    reconstruct_stream,
    reconstruct_window,
    save_model,
    train,
)
from mocaprecon.pipeline import fit_normalizer
from test_nn import numeric_grad, rel_error


def toy_sequences(rng, n_seq=3, frames=80, markers=4):
    t = np.arange(frames)[:, None]
    out = []
    for _ in range(n_seq):
        freq = rng.uniform(0.05, 0.15, size=3 * markers)
        phase = rng.uniform(0, 2 * np.pi, size=3 * markers)
        out.append(0.5 * np.sin(freq * t + phase))
    return out


@pytest.fixture
def toy_norm(rng):
    return fit_normalizer(toy_sequences(rng))


def tiny_lstm(seed=0, pose_dim=6, width=5, depth=2):
    return LstmModel.init(pose_dim, width, depth, np.random.default_rng(seed))


@pytest.mark.parametrize("arch", ["window", "lstm"])
@pytest.mark.parametrize("keep_prob", [1.0, 0.7])
def test_model_gradients(arch, keep_prob):
    rng = np.random.default_rng(1)
    if arch == "window":
        model = WindowModel.init(6, 3, 5, 2, rng)
        x, y = rng.normal(size=(2, 18)), rng.normal(size=(2, 18))
    else:
        model = tiny_lstm(1)
        x, y = rng.normal(size=(2, 3, 6)), rng.normal(size=(2, 3, 6))
    # replaying the same dropout draw makes the loss a deterministic function of the weights
    _, grads = model.loss_and_grads(x, y, keep_prob, np.random.default_rng(9))
    for param, grad in zip(model.parameters(), grads):
        numeric = numeric_grad(lambda: model.loss_and_grads(x, y, keep_prob, np.random.default_rng(9))[0], param)
        assert rel_error(grad, numeric) < 1e-5


def test_config_tables():
    lstm = TrainConfig.paper("lstm")
    assert (lstm.width, lstm.depth, lstm.keep_prob, lstm.learning_rate, lstm.seq_len, lstm.batch_size) == (1024, 2, 0.9, 2e-4, 64, 32)
    window = TrainConfig.paper("window")
    assert (window.width, window.learning_rate, window.seq_len) == (512, 1e-4, 20)
    assert TrainConfig.desk("window").seq_len == 10
    assert TrainConfig.desk("lstm").width == 256
    with pytest.raises(ConfigError, match="colour"):
        TrainConfig.from_dict({"colour": 1})
    with pytest.raises(ConfigError):
        TrainConfig(arch="transformer")
    with pytest.raises(ConfigError):
        TrainConfig(keep_prob=0.0)
    assert TrainConfig.from_dict(lstm.to_dict()) == lstm
    assert lstm.digest() != window.digest()


def test_epochs_zero_returns_initial_weights(rng, toy_norm):
    cfg = TrainConfig(arch="lstm", width=8, epochs=0, rng_seed=4)
    model, log = train(toy_sequences(rng), [], cfg, toy_norm)
    again, _ = train(toy_sequences(rng), [], cfg, toy_norm)
    assert log.losses == []
    for a, b in zip(model.parameters(), again.parameters()):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("arch", ["window", "lstm"])
def test_training_is_deterministic(rng, toy_norm, arch):
    seqs = toy_sequences(rng)
    cfg = TrainConfig(arch=arch, width=16, seq_len=8, batch_size=4, epochs=2, steps_per_epoch=5, rng_seed=11)
    _, log1 = train(seqs, seqs[:1], cfg, toy_norm)
    _, log2 = train(seqs, seqs[:1], cfg, toy_norm)
    assert log1.loss_csv() == log2.loss_csv()
    assert len(log1.losses) == 10 and len(log1.val_rmse_cm) == 2
    _, log3 = train(seqs, [], TrainConfig(**{**cfg.to_dict(), "rng_seed": 12}), toy_norm)
    assert log3.losses != log1.losses


@pytest.mark.parametrize("arch", ["window", "lstm"])
def test_overfit_probe(arch):
    # a clean, noise-free, mask-free single sequence must be learnable
    rng = np.random.default_rng(0)
    seq = toy_sequences(rng, n_seq=1, frames=40, markers=2)
    norm = fit_normalizer(seq)
    x = (seq[0] - norm.mean_pose) / norm.max_abs
    cfg = TrainConfig(
        arch=arch, width=32, depth=1, seq_len=8, batch_size=8, epochs=1, steps_per_epoch=2000,
        keep_prob=1.0, noise_alpha=0.0, missing_rate=0.0, learning_rate=3e-3, rng_seed=0,
    )
    _, log = train([x], [], cfg, norm)
    assert np.mean(log.losses[-20:]) < 1e-3


def test_window_reconstruction_passthrough_and_clip(rng):
    model = WindowModel.init(6, 4, 8, 2, rng)
    model.layers[-1].b[:] = 5.0
    window = rng.uniform(-1, 1, size=(4, 6))
    out = reconstruct_window(model, window)
    assert out.max() <= 1.0
    present = np.ones((4, 2), dtype=bool)
    present[1, 0] = False
    out = reconstruct_window(model, window, present)
    np.testing.assert_array_equal(out[present.repeat(3, axis=1)], window[present.repeat(3, axis=1)])
    np.testing.assert_array_equal(out[1, :3], 1.0)
    with pytest.raises(DimensionMismatch):
        reconstruct_window(model, window[:3])


def test_lstm_outputs_are_causal(rng):
    model = tiny_lstm(2)
    for _ in range(10):
        frames = rng.uniform(-1, 1, size=(30, 6))
        cut = int(rng.integers(1, 29))
        perturbed = frames.copy()
        perturbed[cut:] = rng.uniform(-1, 1, size=perturbed[cut:].shape)
        a = reconstruct_sequence(model, frames)
        b = reconstruct_sequence(model, perturbed)
        np.testing.assert_array_equal(a[:cut], b[:cut])


def test_window_outputs_are_causal(rng):
    model = WindowModel.init(6, 5, 8, 2, rng)
    frames = rng.uniform(-1, 1, size=(30, 6))
    perturbed = frames.copy()
    perturbed[17:] += 0.5
    np.testing.assert_array_equal(reconstruct_sequence(model, frames)[:17], reconstruct_sequence(model, perturbed)[:17])


def test_streaming_matches_whole_sequence(rng):
    model = tiny_lstm(3)
    frames = rng.uniform(-1, 1, size=(25, 6))
    whole = model.predict(frames[None])[0]
    streamed = np.array(list(reconstruct_stream(model, iter(frames))))
    np.testing.assert_allclose(streamed, whole, atol=1e-12)
    np.testing.assert_array_equal(reconstruct_stream(model, frames), streamed)
    batch = LstmStreamer(model, batch=2)
    both = np.stack([frames, frames[::-1]], axis=1)
    out = np.array([batch.step(row) for row in both])
    np.testing.assert_allclose(out[:, 0], whole, atol=1e-12)


def test_window_streamer_matches_batch(rng):
    model = WindowModel.init(6, 4, 8, 2, rng)
    frames = rng.uniform(-1, 1, size=(20, 6))
    streamer = WindowStreamer(model)
    streamed = np.array([streamer.step(f) for f in frames])
    np.testing.assert_allclose(streamed, reconstruct_sequence(model, frames), atol=1e-12)


def test_stream_reads_one_frame_at_a_time(rng):
    model = tiny_lstm(4)
    reads = []

    def source():
        for t in range(10):
            reads.append(t)
            yield rng.uniform(-1, 1, size=6)

    for t, _ in enumerate(reconstruct_stream(model, source())):
        assert reads[-1] == t


@pytest.mark.parametrize("arch", ["window", "lstm"])
def test_save_load_bit_exact(tmp_path, rng, toy_norm, arch):
    cfg = TrainConfig(arch=arch, width=8, seq_len=4, epochs=1, steps_per_epoch=3, batch_size=2)
    model, _ = train(toy_sequences(rng), [], cfg, toy_norm)
    bundle = ModelBundle(model, toy_norm, cfg, 5.6, [f"m{i}" for i in range(4)])
    save_model(tmp_path / "m.mnn", bundle)
    loaded = load_model(tmp_path / "m.mnn", expect_arch=arch)
    assert loaded.arch == arch and loaded.config == cfg and loaded.marker_names == bundle.marker_names
    for a, b in zip(model.parameters(), loaded.model.parameters()):
        assert a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(loaded.normalizer.mean_pose, toy_norm.mean_pose)
    save_model(tmp_path / "again.mnn", loaded)
    assert (tmp_path / "again.mnn").read_bytes() == (tmp_path / "m.mnn").read_bytes()


def test_model_file_errors(tmp_path, rng, toy_norm):
    bundle = ModelBundle(WindowModel.init(12, 2, 4, 1, rng), toy_norm, TrainConfig(arch="window"))
    path = tmp_path / "m.mnn"
    save_model(path, bundle)
    data = bytearray(path.read_bytes())
    with pytest.raises(VersionMismatch):
        load_model(path, expect_arch="lstm")
    tampered = data.copy()
    tampered[-100] ^= 1
    (tmp_path / "t.mnn").write_bytes(bytes(tampered))
    with pytest.raises(CorruptFile, match="checksum"):
        load_model(tmp_path / "t.mnn")
    (tmp_path / "junk.mnn").write_bytes(b"not a model at all, clearly" * 3)
    with pytest.raises(CorruptFile):
        load_model(tmp_path / "junk.mnn")
    import hashlib
    import struct

    body = bytearray(data[:-32])
    struct.pack_into("<I", body, 8, 2)
    (tmp_path / "v2.mnn").write_bytes(bytes(body) + hashlib.sha256(body).digest())
    with pytest.raises(VersionMismatch):
        load_model(tmp_path / "v2.mnn")


def test_bundle_passthrough_and_nan_input(rng, toy_norm):
    cfg = TrainConfig(arch="lstm", width=8)
    bundle = ModelBundle(LstmModel.init(12, 8, 1, rng), toy_norm, cfg)
    positions = toy_sequences(rng, 1, 50)[0]
    full = np.ones((50, 4), dtype=bool)
    np.testing.assert_array_equal(bundle(positions, full), positions)
    mask = sample_mask(50, 4, GapSpec(0.3, rng_seed=1))
    coords = mask.coordinates()
    holed = np.where(coords, positions, np.nan)
    out = bundle(holed, mask)
    assert np.isfinite(out).all()
    np.testing.assert_array_equal(out[coords], positions[coords])
    np.testing.assert_array_equal(out, bundle(np.where(coords, positions, 123.0), mask))
    streamer = bundle.streamer()
    streamed = np.array([streamer.step(holed[t], mask.present[t]) for t in range(50)])
    np.testing.assert_allclose(streamed, out, atol=1e-12)
