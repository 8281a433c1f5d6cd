"""Window-based and LSTM-based reconstruction networks.

Both networks work on normalized poses. The window network maps a flattened
window of corrupted poses to the clean window through ``depth`` tanh layers.
The LSTM network runs ``depth`` stacked LSTM cells over the corrupted
sequence and maps every hidden state to a pose through a linear readout.
Training samples random windows, corrupts them with fresh masks and Gaussian
input noise, and minimizes the MSE to the clean windows with Adam.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .corruption import GapSpec, MaskSequence, corrupt, sample_mask
from .errors import ConfigError, CorruptFile, DimensionMismatch, NonFinite, VersionMismatch
from .nn import (
    AdamState,
    Dense,
    LstmCell,
    adam_step,
    dense_backward,
    dense_forward,
    dropout_mask,
    lstm_backward,
    lstm_forward,
    lstm_step,
    mse_loss,
)
from .pipeline import Normalizer, denormalize, normalize

ARCHITECTURES = ("window", "lstm")


@dataclass
class TrainConfig:
    arch: str = "lstm"
    width: int = 256
    depth: int = 2
    keep_prob: float = 0.9
    learning_rate: float = 2e-4
    seq_len: int = 32
    batch_size: int = 32
    epochs: int = 1
    steps_per_epoch: int | None = None
    train_stride: int = 1
    noise_alpha: float = 0.3
    missing_rate: float = 0.2
    gap_mean: float = 10.0
    gap_std: float = 5.0
    lr_decay: float = 1.0
    grad_clip: float | None = None
    val_missing_rate: float | None = None
    val_max_frames: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.width < 1 or self.depth < 1 or self.seq_len < 1:
            raise ConfigError("batch_size, width, depth and seq_len must be >= 1 and epochs >= 0")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError(f"keep_prob must lie in (0, 1], got {self.keep_prob}")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError(f"missing_rate must lie in [0, 1), got {self.missing_rate}")
        if self.noise_alpha < 0 or self.learning_rate <= 0 or self.train_stride < 1:
            raise ConfigError("noise_alpha >= 0, learning_rate > 0 and train_stride >= 1 required")

    @classmethod
    def paper(cls, arch: str, **overrides) -> TrainConfig:
        """Published hyperparameters (width, depth, dropout keep, learning rate, sequence length)."""
        table = {
            "lstm": dict(width=1024, depth=2, keep_prob=0.9, learning_rate=2e-4, seq_len=64),
            "window": dict(width=512, depth=2, keep_prob=0.9, learning_rate=1e-4, seq_len=20),
        }
        return cls(arch=arch, **{**table[arch], **overrides})

    @classmethod
    def desk(cls, arch: str, **overrides) -> TrainConfig:
        """CPU-sized defaults: width 256; 32-frame LSTM sequences, 10-frame windows."""
        table = {
            "lstm": dict(width=256, depth=2, keep_prob=0.9, learning_rate=1e-3, seq_len=32),
            "window": dict(width=256, depth=2, keep_prob=0.9, learning_rate=1e-3, seq_len=10),
        }
        return cls(arch=arch, **{**table[arch], **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class WindowModel:
    layers: list[Dense]
    window_len: int
    pose_dim: int
    arch = "window"

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    @classmethod
    def init(cls, pose_dim: int, window_len: int, width: int, depth: int, rng) -> WindowModel:
        sizes = [window_len * pose_dim] + [width] * depth + [window_len * pose_dim]
        layers = [
            Dense.init(a, b, rng, "tanh" if k < depth else "identity")
            for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        return cls(layers, window_len, pose_dim)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Flattened windows ``(B, window_len * pose_dim)`` in, same shape out."""
        for layer in self.layers:
            x = dense_forward(layer, x)
        return x

    def loss_and_grads(self, x, target, keep_prob=1.0, rng=None):
        acts, masks = [x], []
        h = x
        for k, layer in enumerate(self.layers):
            y = dense_forward(layer, h)
            acts.append(y)
            if k < len(self.layers) - 1 and keep_prob < 1.0:
                m = dropout_mask(y.shape, keep_prob, rng)
                masks.append(m)
                h = y * m
            else:
                masks.append(None)
                h = y
        loss, dy = mse_loss(h, target)
        grads = []
        for k in reversed(range(len(self.layers))):
            if masks[k] is not None:
                dy = dy * masks[k]
            inp = acts[k] if k == 0 or masks[k - 1] is None else acts[k] * masks[k - 1]
            dW, db, dy = dense_backward(self.layers[k], inp, acts[k + 1], dy)
            grads = [dW, db] + grads
        return loss, grads


@dataclass
class LstmModel:
    cells: list[LstmCell]
    readout: Dense
    pose_dim: int
    arch = "lstm"

    def parameters(self) -> list[np.ndarray]:
        return [p for cell in self.cells for p in cell.parameters()] + self.readout.parameters()

    @classmethod
    def init(cls, pose_dim: int, width: int, depth: int, rng) -> LstmModel:
        cells = [LstmCell.init(pose_dim if k == 0 else width, width, rng) for k in range(depth)]
        return cls(cells, Dense.init(width, pose_dim, rng), pose_dim)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Sequences ``(B, T, pose_dim)`` in, same shape out, zero initial state."""
        h = x
        for cell in self.cells:
            h, _ = lstm_forward(cell, h)
        return dense_forward(self.readout, h)

    def loss_and_grads(self, x, target, keep_prob=1.0, rng=None):
        caches, masks = [], []
        h = x
        for cell in self.cells:
            h, cache = lstm_forward(cell, h)
            caches.append(cache)
            m = dropout_mask(h.shape, keep_prob, rng) if keep_prob < 1.0 else None
            masks.append(m)
            h = h if m is None else h * m
        y = dense_forward(self.readout, h)
        loss, dy = mse_loss(y, target)
        dW, db, dh = dense_backward(self.readout, h, y, dy)
        grads = [dW, db]
        for cell, cache, m in reversed(list(zip(self.cells, caches, masks))):
            if m is not None:
                dh = dh * m
            cW, cb, dh, _, _ = lstm_backward(cell, cache, dh)
            grads = [cW, cb] + grads
        return loss, grads


def init_model(cfg: TrainConfig, pose_dim: int, rng: np.random.Generator):
    if cfg.arch == "window":
        return WindowModel.init(pose_dim, cfg.seq_len, cfg.width, cfg.depth, rng)
    return LstmModel.init(pose_dim, cfg.width, cfg.depth, rng)


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    val_rmse_cm: list[float] = field(default_factory=list)
    wall_seconds: float = 0.0

    def loss_csv(self) -> str:
        return "step,loss\n" + "".join(f"{i},{loss!r}\n" for i, loss in enumerate(self.losses))

    def write_loss_csv(self, path):
        Path(path).write_text(self.loss_csv())

    def write_val_csv(self, path):
        Path(path).write_text("epoch,val_rmse_cm\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(self.val_rmse_cm)))


def _clip(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        grads = [g * (max_norm / total) for g in grads]
    return grads


def train(train_seqs, val_seqs, cfg: TrainConfig, norm: Normalizer, unit_scale_to_cm: float = 1.0, progress=None):
    """Fit a model on normalized training sequences.

    ``train_seqs`` and ``val_seqs`` are lists of normalized ``(frames, 3n)``
    arrays. Validation RMSE (cm, missing markers only, no input noise) is
    recorded after every epoch on masks fixed before training starts.
    ``progress``, if given, is called as ``progress(step, loss)``.
    """
    started = time.perf_counter()
    seqs = [np.asarray(s, dtype=np.float64) for s in train_seqs]
    if not seqs:
        raise ConfigError("no training sequences")
    pose_dim = seqs[0].shape[1]
    if any(s.shape[1] != pose_dim for s in seqs) or pose_dim != norm.dim:
        raise DimensionMismatch("training sequences and normalizer disagree on pose dimension")
    n_markers = pose_dim // 3
    init_ss, order_ss, mask_ss, noise_ss, drop_ss, val_ss = np.random.SeedSequence(cfg.rng_seed).spawn(6)
    model = init_model(cfg, pose_dim, np.random.default_rng(init_ss))
    log = TrainLog()
    if cfg.epochs == 0:
        log.wall_seconds = time.perf_counter() - started
        return model, log

    L = cfg.seq_len
    index = np.array(
        [(i, s) for i, seq in enumerate(seqs) if seq.shape[0] >= L for s in range(0, seq.shape[0] - L + 1, cfg.train_stride)],
        dtype=np.int64,
    )
    if len(index) == 0:
        raise ConfigError(f"no training sequence has {L} frames")
    steps = cfg.steps_per_epoch or math.ceil(len(index) / cfg.batch_size)
    order_rng = np.random.default_rng(order_ss)
    mask_rng = np.random.default_rng(mask_ss)
    noise_rng = np.random.default_rng(noise_ss)
    drop_rng = np.random.default_rng(drop_ss)
    gaps = GapSpec(cfg.missing_rate, cfg.gap_mean, cfg.gap_std)
    sigma = norm.normalized_sigma

    val_rate = cfg.missing_rate if cfg.val_missing_rate is None else cfg.val_missing_rate
    val_items = []
    val_rng = np.random.default_rng(val_ss)
    for seq in val_seqs:
        seq = np.asarray(seq, dtype=np.float64)[: cfg.val_max_frames]
        if val_rate > 0:
            mask = sample_mask(seq.shape[0], n_markers, GapSpec(val_rate, cfg.gap_mean, cfg.gap_std), rng=val_rng)
            val_items.append((seq, mask))

    params = model.parameters()
    state = AdamState.zeros_like(params)
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay**epoch
        perm = order_rng.permutation(len(index))
        for k in range(steps):
            picks = index[perm[np.arange(k * cfg.batch_size, (k + 1) * cfg.batch_size) % len(perm)]]
            clean = np.stack([seqs[i][s : s + L] for i, s in picks])
            present = np.stack([sample_mask(L, n_markers, gaps, rng=mask_rng).present for _ in picks])
            noisy = corrupt(clean, present, cfg.noise_alpha, sigma, noise_rng)
            if cfg.arch == "window":
                noisy, clean = noisy.reshape(len(picks), -1), clean.reshape(len(picks), -1)
            try:
                loss, grads = model.loss_and_grads(noisy, clean, cfg.keep_prob, drop_rng)
            except NonFinite as exc:
                raise NonFinite(f"training diverged at step {step}: {exc}") from exc
            if cfg.grad_clip is not None:
                grads = _clip(grads, cfg.grad_clip)
            adam_step(params, grads, state, lr)
            log.losses.append(loss)
            if progress is not None:
                progress(step, loss)
            step += 1
        if val_items:
            from .evaluation import rmse_missing

            errs = []
            for seq, mask in val_items:
                recon = reconstruct_sequence(model, corrupt(seq, mask), mask)
                errs.append(rmse_missing(seq, recon, mask, norm, unit_scale_to_cm))
            log.val_rmse_cm.append(float(np.mean(errs)))
    log.wall_seconds = time.perf_counter() - started
    return model, log


def _present_coords(mask, shape) -> np.ndarray | None:
    if mask is None:
        return None
    present = mask.present if isinstance(mask, MaskSequence) else np.asarray(mask, dtype=bool)
    coords = np.repeat(present, 3, axis=-1)
    if coords.shape != shape:
        raise DimensionMismatch(f"mask for {coords.shape} poses applied to {shape}")
    return coords


def reconstruct_window(model: WindowModel, window: np.ndarray, mask=None) -> np.ndarray:
    """Reconstruct one corrupted window ``(window_len, pose_dim)``.

    The network output is clipped to the normalized range [-1, 1]. With a
    mask, observed markers are copied from the input unchanged.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (model.window_len, model.pose_dim):
        raise DimensionMismatch(f"window shape {window.shape} != {(model.window_len, model.pose_dim)}")
    out = np.clip(model.predict(window.reshape(1, -1)).reshape(window.shape), -1.0, 1.0)
    coords = _present_coords(mask, window.shape)
    return out if coords is None else np.where(coords, window, out)


def _window_sequence(model: WindowModel, frames: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Frame ``t`` comes from the window ending at ``t``; the start is padded with frame 0."""
    L = model.window_len
    padded = np.concatenate([np.repeat(frames[:1], L - 1, axis=0), frames], axis=0)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (L, frames.shape[1]))[:, 0]
    out = np.empty_like(frames)
    for a in range(0, frames.shape[0], chunk):
        batch = windows[a : a + chunk].reshape(-1, L * frames.shape[1])
        pred = model.predict(batch).reshape(-1, L, frames.shape[1])
        out[a : a + chunk] = pred[:, -1]
    return np.clip(out, -1.0, 1.0)


class LstmStreamer:
    """Online LSTM reconstruction: one pose in, one pose out, state carried along.

    Inputs may carry a leading batch axis to run independent streams side by side.
    """

    def __init__(self, model: LstmModel, batch: int | None = None):
        self.model = model
        self.batch = batch
        shape = (model.cells[0].n_hidden,) if batch is None else (batch, model.cells[0].n_hidden)
        self.h = [np.zeros(shape) for _ in model.cells]
        self.c = [np.zeros(shape) for _ in model.cells]
        self.frames_seen = 0

    def step(self, pose: np.ndarray, present=None) -> np.ndarray:
        pose = np.asarray(pose, dtype=np.float64)
        if pose.shape[-1] != self.model.pose_dim:
            raise DimensionMismatch(f"pose width {pose.shape[-1]} != {self.model.pose_dim}")
        x = pose
        for k, cell in enumerate(self.model.cells):
            self.h[k], self.c[k] = lstm_step(cell, x, self.h[k], self.c[k])
            x = self.h[k]
        out = dense_forward(self.model.readout, x)
        self.frames_seen += 1
        if present is not None:
            out = np.where(np.repeat(np.asarray(present, dtype=bool), 3, axis=-1), pose, out)
        return out


class WindowStreamer:
    """Online window-model reconstruction keeping only the last ``window_len`` poses."""

    def __init__(self, model: WindowModel):
        self.model = model
        self.buffer = None
        self.frames_seen = 0

    def step(self, pose: np.ndarray, present=None) -> np.ndarray:
        pose = np.asarray(pose, dtype=np.float64)
        if pose.shape != (self.model.pose_dim,):
            raise DimensionMismatch(f"pose shape {pose.shape} != ({self.model.pose_dim},)")
        if self.buffer is None:
            self.buffer = np.repeat(pose[None], self.model.window_len, axis=0)
        else:
            self.buffer = np.concatenate([self.buffer[1:], pose[None]])
        pred = self.model.predict(self.buffer.reshape(1, -1)).reshape(self.buffer.shape)[-1]
        out = np.clip(pred, -1.0, 1.0)
        self.frames_seen += 1
        if present is not None:
            out = np.where(np.repeat(np.asarray(present, dtype=bool), 3), pose, out)
        return out


def reconstruct_stream(model: LstmModel, frames, mask=None):
    """Online reconstruction of ``frames`` (an array or any iterable of poses).

    With an array input, returns an array ``(F, pose_dim)``; with an iterator,
    yields one reconstructed pose per input pose as it arrives.
    """
    if isinstance(frames, np.ndarray):
        if frames.ndim != 2 or frames.shape[1] != model.pose_dim:
            raise DimensionMismatch(f"frames shape {frames.shape} does not match pose dim {model.pose_dim}")
        coords_mask = None if mask is None else (mask.present if isinstance(mask, MaskSequence) else np.asarray(mask))
        streamer = LstmStreamer(model)
        out = np.empty_like(frames, dtype=np.float64)
        for t in range(frames.shape[0]):
            out[t] = streamer.step(frames[t], None if coords_mask is None else coords_mask[t])
        return out
    return _stream_iter(model, frames, mask)


def _stream_iter(model, frames, mask):
    streamer = LstmStreamer(model)
    present_rows = iter(mask) if mask is not None else None
    for pose in frames:
        present = next(present_rows) if present_rows is not None else None
        yield streamer.step(pose, present)


def reconstruct_sequence(model, corrupted: np.ndarray, mask=None) -> np.ndarray:
    """Reconstruct a whole normalized sequence causally, one output per input frame."""
    corrupted = np.asarray(corrupted, dtype=np.float64)
    if corrupted.ndim != 2 or corrupted.shape[1] != model.pose_dim:
        raise DimensionMismatch(f"sequence shape {corrupted.shape} does not match pose dim {model.pose_dim}")
    if corrupted.shape[0] == 0:
        return corrupted.copy()
    if isinstance(model, WindowModel):
        out = _window_sequence(model, corrupted)
    else:
        out = reconstruct_stream(model, corrupted)
    coords = _present_coords(mask, corrupted.shape)
    return out if coords is None else np.where(coords, corrupted, out)


@dataclass
class ModelBundle:
    model: WindowModel | LstmModel
    normalizer: Normalizer
    config: TrainConfig
    unit_scale_to_cm: float = 1.0
    marker_names: list[str] | None = None

    @property
    def arch(self) -> str:
        return self.model.arch

    def reconstruct(self, positions: np.ndarray, mask) -> np.ndarray:
        """Fill missing markers of a sequence in dataset units.

        Values at missing cells of ``positions`` are ignored (they may be NaN);
        observed cells are returned unchanged.
        """
        positions = np.asarray(positions, dtype=np.float64)
        present = mask.present if isinstance(mask, MaskSequence) else np.asarray(mask, dtype=bool)
        coords = np.repeat(present, 3, axis=1)
        if coords.shape != positions.shape:
            raise DimensionMismatch(f"mask {present.shape} does not fit positions {positions.shape}")
        filled = np.where(coords, positions, self.normalizer.mean_pose)
        corrupted = corrupt(normalize(filled, self.normalizer), present)
        recon = denormalize(reconstruct_sequence(self.model, corrupted), self.normalizer)
        return np.where(coords, positions, recon)

    __call__ = reconstruct

    def streamer(self) -> PoseStreamer:
        return PoseStreamer(self)


class PoseStreamer:
    """Frame-by-frame reconstruction in dataset units; nothing after the current frame is needed."""

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle
        model = bundle.model
        self.inner = WindowStreamer(model) if isinstance(model, WindowModel) else LstmStreamer(model)

    def step(self, pose: np.ndarray, present) -> np.ndarray:
        pose = np.asarray(pose, dtype=np.float64)
        present = np.asarray(present, dtype=bool)
        coords = np.repeat(present, 3)
        if coords.shape != pose.shape:
            raise DimensionMismatch(f"mask row {present.shape} does not fit pose {pose.shape}")
        norm = self.bundle.normalizer
        x = np.where(coords, normalize(np.where(coords, pose, norm.mean_pose)[None], norm)[0], 0.0)
        recon = denormalize(self.inner.step(x)[None], norm)[0]
        return np.where(coords, pose, recon)


MAGIC = b"MOCAPNN\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII")


def _param_layout(model) -> list[tuple[str, np.ndarray]]:
    if isinstance(model, WindowModel):
        named = []
        for k, layer in enumerate(model.layers):
            named += [(f"layers.{k}.W", layer.W), (f"layers.{k}.b", layer.b)]
        return named
    named = []
    for k, cell in enumerate(model.cells):
        named += [(f"cells.{k}.W", cell.W), (f"cells.{k}.b", cell.b)]
    return named + [("readout.W", model.readout.W), ("readout.b", model.readout.b)]


def save_model(path, bundle: ModelBundle):
    """Write a model file: magic, version, JSON header, little-endian float64 blobs, SHA-256."""
    model = bundle.model
    layout = _param_layout(model)
    header = {
        "arch": model.arch,
        "pose_dim": model.pose_dim,
        "window_len": getattr(model, "window_len", None),
        "activations": [layer.activation for layer in model.layers] if isinstance(model, WindowModel) else None,
        "params": [{"name": name, "shape": list(arr.shape)} for name, arr in layout],
        "normalizer": bundle.normalizer.to_dict(),
        "config": bundle.config.to_dict(),
        "config_hash": bundle.config.digest(),
        "unit_scale_to_cm": bundle.unit_scale_to_cm,
        "marker_names": bundle.marker_names,
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = _HEADER.pack(MAGIC, FORMAT_VERSION, len(head)) + head
    body += b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in layout)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_model(path, expect_arch: str | None = None) -> ModelBundle:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 32 or data[:8] != MAGIC:
        raise CorruptFile(f"{path}: not a model file")
    body, checksum = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise CorruptFile(f"{path}: checksum mismatch")
    _, version, head_len = _HEADER.unpack_from(body)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        header = json.loads(body[_HEADER.size : _HEADER.size + head_len])
    except ValueError as exc:
        raise CorruptFile(f"{path}: unreadable header") from exc
    if expect_arch is not None and header["arch"] != expect_arch:
        raise VersionMismatch(f"{path}: holds a {header['arch']} model, expected {expect_arch}")
    offset = _HEADER.size + head_len
    arrays = {}
    for item in header["params"]:
        count = int(np.prod(item["shape"]))
        arrays[item["name"]] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(item["shape"])
        offset += 8 * count
    if offset != len(body):
        raise CorruptFile(f"{path}: parameter blobs do not match header")
    if header["arch"] == "window":
        n = len(header["params"]) // 2
        layers = [Dense(arrays[f"layers.{k}.W"], arrays[f"layers.{k}.b"], header["activations"][k]) for k in range(n)]
        model = WindowModel(layers, header["window_len"], header["pose_dim"])
    elif header["arch"] == "lstm":
        n = (len(header["params"]) - 2) // 2
        cells = [LstmCell(arrays[f"cells.{k}.W"], arrays[f"cells.{k}.b"]) for k in range(n)]
        model = LstmModel(cells, Dense(arrays["readout.W"], arrays["readout.b"]), header["pose_dim"])
    else:
        raise VersionMismatch(f"{path}: unknown architecture {header['arch']!r}")
    return ModelBundle(
        model,
        Normalizer.from_dict(header["normalizer"]),
        TrainConfig.from_dict(header["config"]),
        header["unit_scale_to_cm"],
        header["marker_names"],
    )
