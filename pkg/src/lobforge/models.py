"""Forecasting architectures, training loop and checkpoints.

Four convolutional forecasters plus a no-change baseline:

* ``SimpleCNN`` (stacked): two conv/relu/pool blocks, MLP head.
* ``SimpleCNN_2D`` (merged): four conv/relu/pool blocks, MLP head.
* ``CNNModel_2D`` (merged): five conv/relu/pool blocks, wider MLP head.
* ``CNN2LSTM`` (stacked): a convolutional encoder turns the whole ``L``-frame
  stack into one vector of length ``ceil-ish((D+2)/2) * max(16, 2L)``
  (``26 * max(16, 2L)`` at depth 50), a learned linear expansion turns it
  into an ``L``-step sequence, and an LSTM reads that sequence.
* ``Persistence``: predicts zero change.
"""
from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (CorruptChecksum, EmptySet, FormatError, InvalidArch, RepresentationMismatch,
                     ShapeMismatch, VersionMismatch)
from .nn import (LSTM, Adam, Conv2d, Dense, Flatten, MaxPool2d, Module, ReLU, Reshape, Rng,
                 Sequential, mse_loss)
from .sampling import Sample, SampleSet, SampleSpec, TargetScaler, decode_prediction

log = logging.getLogger(__name__)

STACKED_KINDS = ("SimpleCNN", "CNN2LSTM")
MERGED_KINDS = ("SimpleCNN_2D", "CNNModel_2D")
ARCH_KINDS = STACKED_KINDS + MERGED_KINDS + ("Persistence",)

_DEFAULT_CHANNELS = {
    "SimpleCNN": (32, 64),
    "SimpleCNN_2D": (16, 32, 64, 64),
    "CNNModel_2D": (16, 32, 64, 64, 128),
}
_DEFAULT_HIDDEN = {"SimpleCNN": 128, "SimpleCNN_2D": 128, "CNNModel_2D": 256}

MAGIC = b"LOBM"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArchSpec:
    kind: str
    frames: int  # L, input channels of the stacked tensor
    depth: int  # D
    columns: int  # C
    output_dim: int = 1
    channels: tuple | None = None
    hidden: int | None = None
    kernel: int = 3
    lstm_hidden: int = 64
    step_width: int = 64
    # fixed multiplier applied to inputs; embedded frames live on a 0..255 scale
    input_scale: float = 1.0 / 255.0

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise InvalidArch(f"unknown architecture {self.kind!r}; choose from {ARCH_KINDS}")
        if min(self.frames, self.depth, self.columns, self.output_dim) < 1:
            raise InvalidArch("frames, depth, columns and output_dim must be positive")
        if self.channels is not None:
            object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    @property
    def representation(self) -> str | None:
        if self.kind in STACKED_KINDS:
            return "stacked"
        if self.kind in MERGED_KINDS:
            return "merged"
        return None

    @property
    def conv_channels(self) -> tuple:
        if self.channels is not None:
            return self.channels
        if self.kind == "CNN2LSTM":
            return (max(16, 2 * self.frames),)
        return _DEFAULT_CHANNELS.get(self.kind, ())

    @property
    def dense_hidden(self) -> int:
        return self.hidden if self.hidden is not None else _DEFAULT_HIDDEN.get(self.kind, 0)

    def input_shape(self) -> tuple:
        if self.representation == "merged":
            return (self.depth, self.columns * self.frames)
        return (self.frames, self.depth, self.columns)

    def to_meta(self) -> dict:
        meta = asdict(self)
        meta["channels"] = list(self.channels) if self.channels is not None else None
        return meta

    @classmethod
    def from_meta(cls, meta: dict) -> "ArchSpec":
        return cls(**meta)


def cnn2lstm_encoder_length(frames: int, depth: int = 50) -> int:
    """Encoder output length; ``26 * max(16, 2L)`` at depth 50."""
    return ((depth + 2) // 2) * max(16, 2 * frames)


# -- networks ----------------------------------------------------------------------

class _Net(Module):
    """Validates the input layout, then runs ``body``."""

    def __init__(self, arch: ArchSpec, body: Module):
        self.arch = arch
        self.body = body

    def children(self):
        return [self.body]

    def _check(self, x):
        rep = self.arch.representation
        want = self.arch.input_shape()
        if x.ndim - 1 != len(want):
            other = "merged" if rep == "stacked" else "stacked"
            raise RepresentationMismatch(
                f"{self.arch.kind} takes {rep} input {want}; got shape {x.shape[1:]} ({other}?)")
        if tuple(x.shape[1:]) != want:
            raise ShapeMismatch(f"{self.arch.kind} expects input {want}, got {tuple(x.shape[1:])}")

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        if self.arch.representation == "merged":
            x = x[:, None]
        return self.body.forward(x * self.arch.input_scale)

    def backward(self, dout):
        dx = self.body.backward(dout) * self.arch.input_scale
        return dx[:, 0] if self.arch.representation == "merged" else dx


def _conv_blocks(cin, h, w, widths, kernel, make_rng):
    layers = []
    for k, cout in enumerate(widths):
        layers += [Conv2d(cin, cout, kernel, padding=kernel // 2, rng=make_rng(f"conv{k}"), name=f"conv{k}"),
                   ReLU()]
        ph, pw = min(2, h), min(2, w)
        layers.append(MaxPool2d((ph, pw)))
        h, w, cin = h // ph, w // pw, cout
    return layers, cin * h * w


def _build_body(arch: ArchSpec, seed: int) -> Module:
    def make_rng(name):
        return Rng(seed, f"init:{name}")

    if arch.kind in ("SimpleCNN", "SimpleCNN_2D", "CNNModel_2D"):
        if arch.kind == "SimpleCNN":
            cin, h, w = arch.frames, arch.depth, arch.columns
        else:
            cin, h, w = 1, arch.depth, arch.columns * arch.frames
        if arch.kernel % 2 == 0:
            raise InvalidArch("kernel size must be odd")
        layers, flat = _conv_blocks(cin, h, w, arch.conv_channels, arch.kernel, make_rng)
        hid = arch.dense_hidden
        layers += [Flatten(), Dense(flat, hid, make_rng("fc0"), "fc0"), ReLU(),
                   Dense(hid, arch.output_dim, make_rng("fc1"), "fc1")]
        return Sequential(*layers)

    if arch.kind == "CNN2LSTM":
        (ce,) = arch.conv_channels[:1]
        L, D, C = arch.frames, arch.depth, arch.columns
        rows = (D + 2) // 2
        enc = rows * ce
        expected = cnn2lstm_encoder_length(L, D) if arch.channels is None else enc
        assert enc == expected, f"encoder length {enc} != {expected}"
        if D == 50 and arch.channels is None:
            assert enc == 26 * max(16, 2 * L)
        return Sequential(
            Conv2d(L, ce, 3, padding=(2, 1), rng=make_rng("enc"), name="enc"),
            ReLU(),
            MaxPool2d((2, C)),
            Flatten(),
            Dense(enc, L * arch.step_width, make_rng("expand"), "expand"),
            Reshape(L, arch.step_width),
            LSTM(arch.step_width, arch.lstm_hidden, make_rng("lstm"), "lstm"),
            Dense(arch.lstm_hidden, arch.output_dim, make_rng("head"), "head"),
        )
    raise InvalidArch(f"no network for {arch.kind}")


class _PersistenceNet(Module):
    def __init__(self, arch):
        self.arch = arch

    def forward(self, x):
        return np.zeros((np.shape(x)[0], self.arch.output_dim))

    def backward(self, dout):
        raise InvalidArch("Persistence has no trainable parameters")


# -- model wrapper -------------------------------------------------------------------

@dataclass(eq=False)
class Model:
    arch: ArchSpec
    net: Module
    seed: int = 0
    sample_spec: SampleSpec | None = None
    scaler: TargetScaler | None = None
    history: list = field(default_factory=list)

    @property
    def params(self):
        return self.net.all_params()

    @property
    def n_params(self) -> int:
        return int(sum(p.value.size for p in self.params))

    @property
    def encoder_length(self) -> int | None:
        if self.arch.kind != "CNN2LSTM":
            return None
        return self.net.body.layers[4].weight.shape[1]

    def forward(self, x) -> np.ndarray:
        return self.net.forward(x)

    def state_dict(self) -> dict:
        return {p.name: p.value for p in self.params}


def build_model(arch: ArchSpec, seed: int = 0) -> Model:
    if arch.kind == "Persistence":
        return Model(arch, _PersistenceNet(arch), seed)
    return Model(arch, _Net(arch, _build_body(arch, seed)), seed)


def arch_for(samples: SampleSet, kind: str, **overrides) -> ArchSpec:
    _, L, D, C = samples.inputs.shape
    return ArchSpec(kind, L, D, C, output_dim=samples.n_targets, **overrides)


def cnn2lstm_encode(model: Model, frames) -> tuple[np.ndarray, np.ndarray]:
    """Run the CNN2LSTM encoder; returns ``(encoder_vectors, lstm_sequences)``."""
    if model.arch.kind != "CNN2LSTM":
        raise InvalidArch("cnn2lstm_encode needs a CNN2LSTM model")
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    model.net._check(x)
    x = x * model.arch.input_scale
    layers = model.net.body.layers
    for layer in layers[:4]:
        x = layer.forward(x)
    enc = x
    seq = layers[5].forward(layers[4].forward(enc))
    return enc, seq


# -- training ------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch: int = 32
    lr: float = 1e-3
    seed: int = 0


def _check_repr(model: Model, samples: SampleSet) -> None:
    rep = model.arch.representation
    if rep is not None and samples.spec.representation != rep:
        raise RepresentationMismatch(
            f"{model.arch.kind} needs {rep} samples, the set is {samples.spec.representation}")


def train(model: Model, samples: SampleSet, cfg: TrainConfig = TrainConfig(), progress=None):
    """Minimise MSE on standardised targets with Adam; deterministic given the seed."""
    if len(samples) == 0:
        raise EmptySet("training set is empty")
    _check_repr(model, samples)
    scaler = samples.target_scaler or TargetScaler.fit(samples.target)
    model.scaler = scaler
    model.sample_spec = samples.spec
    y = scaler.apply(samples.target)
    if model.arch.kind == "Persistence":
        const, _ = mse_loss(scaler.apply(np.zeros_like(samples.target)), y)
        model.history = [const] * cfg.epochs
        return model, model.history

    x_all = samples.model_inputs(model.arch.representation)
    opt = Adam(model.params, lr=cfg.lr)
    rng = Rng(cfg.seed, "shuffle")
    history = []
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            idx = np.sort(order[start:start + cfg.batch])
            out = model.net.forward(x_all[idx])
            loss, grad = mse_loss(out, y[idx])
            opt.zero_grad()
            model.net.backward(grad)
            opt.step()
            total += loss * len(idx)
        history.append(total / n)
        if progress is not None:
            progress(epoch, history[-1])
        log.debug("epoch %d loss %.6g", epoch, history[-1])
    model.history = history
    return model, history


# -- prediction ----------------------------------------------------------------------

def _as_batch(model: Model, samples):
    if isinstance(samples, SampleSet):
        _check_repr(model, samples)
        return samples.model_inputs(model.arch.representation), samples.anchor_mid
    if isinstance(samples, Sample):
        return np.asarray(samples.input)[None], np.atleast_1d(samples.anchor_mid)[None]
    raise TypeError(f"expected SampleSet or Sample, got {type(samples).__name__}")


def predict_raw_inputs(model: Model, x, batch: int = 256) -> np.ndarray:
    """Target-space predictions for raw model inputs, ``(N, K)``."""
    x = np.asarray(x)
    if model.arch.kind == "Persistence":
        return np.zeros((x.shape[0], model.arch.output_dim))
    scaler = model.scaler or TargetScaler.identity(model.arch.output_dim)
    outs = [model.net.forward(x[i:i + batch]) for i in range(0, x.shape[0], batch)]
    out = np.concatenate(outs) if outs else np.zeros((0, model.arch.output_dim))
    return scaler.invert(out)


def predict_raw(model: Model, samples) -> np.ndarray:
    x, _ = _as_batch(model, samples)
    return predict_raw_inputs(model, x)


def predict(model: Model, samples) -> np.ndarray:
    """Decoded mid forecasts, ``(N, K)``."""
    x, anchor = _as_batch(model, samples)
    kind = model.sample_spec.target_kind if model.sample_spec else "delta"
    return decode_prediction(predict_raw_inputs(model, x), anchor, kind)


# -- checkpoints ---------------------------------------------------------------------

def checkpoint_bytes(model: Model, provenance: dict | None = None) -> bytes:
    meta = {
        "arch": model.arch.to_meta(),
        "seed": model.seed,
        "sample_spec": None if model.sample_spec is None else model.sample_spec.to_meta(),
        "target_scaler": None if model.scaler is None else model.scaler.to_meta(),
        "history": [float(h) for h in model.history],
    }
    if provenance is not None:
        meta["provenance"] = provenance
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(blob)), blob]
    params = model.params
    parts.append(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        arr = np.ascontiguousarray(p.value, dtype="<f4")
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(model: Model, path, provenance: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, provenance))


def checkpoint_from_bytes(raw: bytes) -> Model:
    if raw[:4] != MAGIC:
        raise FormatError("not a model checkpoint (bad magic)")
    if len(raw) < 14:
        raise CorruptChecksum("checkpoint truncated")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptChecksum("checkpoint CRC-32 mismatch (truncated or corrupted file)")
    version, n_meta = struct.unpack_from("<HI", body, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {version} not supported (expected {FORMAT_VERSION})")
    off = 10
    meta = json.loads(body[off:off + n_meta].decode("utf-8"))
    off += n_meta
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        size = int(np.prod(shape)) * 4
        tensors[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=off).reshape(shape).astype(np.float32)
        off += size
    if off != len(body):
        raise CorruptChecksum("trailing bytes after tensor table")

    arch = ArchSpec.from_meta(meta["arch"])
    model = build_model(arch, meta["seed"])
    for p in model.params:
        if p.name not in tensors or tensors[p.name].shape != p.shape:
            raise FormatError(f"checkpoint tensor {p.name} missing or mis-shaped")
        p.value = tensors[p.name]
    if meta["sample_spec"] is not None:
        model.sample_spec = SampleSpec.from_meta(meta["sample_spec"])
    model.scaler = TargetScaler.from_meta(meta["target_scaler"])
    model.history = list(meta["history"])
    return model


def load_checkpoint(path) -> Model:
    return checkpoint_from_bytes(Path(path).read_bytes())
