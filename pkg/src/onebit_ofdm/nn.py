"""Fully connected networks in float64 numpy: forward, backprop, Adam, checkpoints."""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if min(self.layer_sizes) < 1:
            raise ValueError("layer sizes must be positive")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ValueError("one activation per non-input layer")
        bad = set(self.activations) - set(ACTIVATIONS)
        if bad:
            raise ValueError(f"unknown activation(s): {sorted(bad)}")

    @property
    def n_layers(self) -> int:
        return len(self.activations)

    def weight_shapes(self) -> list[tuple[int, int]]:
        s = self.layer_sizes
        return [(s[i + 1], s[i] + 1) for i in range(self.n_layers)]

    def n_params(self, bias: bool = True) -> int:
        return sum(o * (i if bias else i - 1) for o, i in self.weight_shapes())


@dataclass
class MlpModel:
    """Weights are stored per layer as (out, in + 1) with the bias as the last column."""

    spec: MlpSpec
    weights: list[np.ndarray]

    def __post_init__(self):
        shapes = self.spec.weight_shapes()
        if len(self.weights) != len(shapes):
            raise ValueError("weight count does not match spec")
        for w, shp in zip(self.weights, shapes):
            if w.shape != shp:
                raise ValueError(f"weight shape {w.shape} does not match {shp}")

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator) -> "MlpModel":
        """He scaling in front of relu layers, Glorot in front of linear ones; zero biases."""
        ws = []
        for (out, inp1), act in zip(spec.weight_shapes(), spec.activations):
            fan_in = inp1 - 1
            std = np.sqrt(2.0 / fan_in) if act == "relu" else np.sqrt(2.0 / (fan_in + out))
            w = np.zeros((out, inp1))
            w[:, :-1] = rng.standard_normal((out, fan_in)) * std
            ws.append(w)
        return cls(spec, ws)

    def copy(self) -> "MlpModel":
        return MlpModel(self.spec, [w.copy() for w in self.weights])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activations
    squeeze: bool


def forward(m: MlpModel, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != m.spec.layer_sizes[0]:
        raise ValueError(f"input size {a.shape[1]} does not match {m.spec.layer_sizes[0]}")
    inputs, pre = [], []
    for w, act in zip(m.weights, m.spec.activations):
        inputs.append(a)
        z = a @ w[:, :-1].T + w[:, -1]
        pre.append(z)
        a = np.maximum(z, 0.0) if act == "relu" else z
    return (a[0] if squeeze else a), ForwardCache(inputs, pre, squeeze)


def backward(m: MlpModel, cache: ForwardCache, grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients of sum(grad_out * output) with respect to every weight matrix.

    The relu derivative at exactly zero is taken as 0.
    """
    g = np.atleast_2d(np.asarray(grad_out, dtype=float))
    if g.shape != cache.pre[-1].shape:
        raise ValueError("grad_out does not match the cached forward pass")
    grads: list[np.ndarray] = [None] * m.spec.n_layers  # type: ignore[list-item]
    for i in reversed(range(m.spec.n_layers)):
        if m.spec.activations[i] == "relu":
            g = g * (cache.pre[i] > 0)
        a = cache.inputs[i]
        if a.shape[1] != m.weights[i].shape[1] - 1:
            raise ValueError("stale cache: layer input size changed")
        gw = np.empty_like(m.weights[i])
        gw[:, :-1] = g.T @ a
        gw[:, -1] = g.sum(axis=0)
        grads[i] = gw
        if i:
            g = g @ m.weights[i][:, :-1]
    return grads


def mse_loss(out: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over rows of the squared error norm, and its gradient w.r.t. ``out``."""
    out2 = np.atleast_2d(out)
    diff = out2 - np.atleast_2d(target)
    n = diff.shape[0]
    return float(np.sum(diff**2) / n), 2.0 * diff / n


def gradient_check(
    m: MlpModel,
    x: np.ndarray,
    target: np.ndarray,
    step: float = 1e-6,
    n_probe: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backprop and central differences of the MSE loss.

    With ``n_probe`` set, only that many randomly chosen weights per layer are probed.
    The denominator is floored at the roundoff level of the central difference
    (eps * |loss| / step, scaled to the 1e-5 tolerance), so gradients that the finite
    difference cannot resolve are compared absolutely.
    """
    out, cache = forward(m, x)
    loss0, g = mse_loss(out, target)
    floor = max(1e-8, np.finfo(float).eps * abs(loss0) / step / 1e-5)
    grads = backward(m, cache, g)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for li, w in enumerate(m.weights):
        flat = w.ravel()
        idx = np.arange(flat.size)
        if n_probe is not None and n_probe < flat.size:
            idx = rng.choice(flat.size, n_probe, replace=False)
        for j in idx:
            old = flat[j]
            flat[j] = old + step
            lp = mse_loss(forward(m, x)[0], target)[0]
            flat[j] = old - step
            lm = mse_loss(forward(m, x)[0], target)[0]
            flat[j] = old
            num = (lp - lm) / (2 * step)
            ana = grads[li].ravel()[j]
            denom = max(abs(num), abs(ana), floor)
            worst = max(worst, abs(num - ana) / denom)
    return worst


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None
    step: int = 0


def adam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], st: AdamState) -> None:
    """Bias-corrected Adam step applied in place to ``params``.

    Uses the algebraically identical form lr_t * m / (sqrt(v) + eps * sqrt(c2)) with
    lr_t = lr * sqrt(c2) / c1, which avoids temporaries on large layers.
    """
    if st.m is None:
        st.m = [np.zeros_like(p) for p in params]
        st.v = [np.zeros_like(p) for p in params]
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    st.step += 1
    c1 = 1 - st.beta1**st.step
    c2 = 1 - st.beta2**st.step
    lr_t = st.lr * np.sqrt(c2) / c1
    eps_t = st.eps * np.sqrt(c2)
    for p, g, m, v in zip(params, grads, st.m, st.v):
        tmp = np.multiply(g, 1 - st.beta1)
        m *= st.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1 - st.beta2
        v *= st.beta2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp += eps_t
        np.divide(m, tmp, out=tmp)
        tmp *= lr_t
        p -= tmp


def adam_step(m: MlpModel, grads: list[np.ndarray], st: AdamState) -> tuple[MlpModel, AdamState]:
    adam_update(m.weights, grads, st)
    return m, st


@dataclass
class TrainingConfig:
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    shuffle: bool = True
    lr: float = 0.01
    val_fraction: float = 0.0
    patience: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass
class TrainResult:
    model: MlpModel
    losses: list[float]
    val_losses: list[float] = field(default_factory=list)
    state: AdamState | None = None


# (inputs, rng) -> network inputs; lets a stochastic layer (noise, quantizer) sit in
# front of the trainable stack and be redrawn on every pass.
InputTransform = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def train(
    m: MlpModel,
    inputs: np.ndarray,
    labels: np.ndarray,
    cfg: TrainingConfig,
    st: AdamState | None = None,
    transform: InputTransform | None = None,
) -> TrainResult:
    """Mini-batch Adam on the mean squared error norm; deterministic given ``cfg.seed``."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if inputs.shape[0] == 0:
        raise ValueError("empty dataset")
    if inputs.shape[0] != labels.shape[0]:
        raise ValueError("inputs and labels differ in length")
    if labels.shape[1] != m.spec.layer_sizes[-1]:
        raise ValueError("label size does not match the output layer")
    st = st or AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    n = inputs.shape[0]
    n_val = int(round(cfg.val_fraction * n)) if cfg.val_fraction else 0
    order = rng.permutation(n) if n_val else np.arange(n)
    val_idx, tr_idx = order[:n_val], order[n_val:]

    losses, val_losses = [], []
    best, best_w, bad_epochs = np.inf, None, 0
    for _ in range(cfg.epochs):
        idx = rng.permutation(tr_idx) if cfg.shuffle else tr_idx
        total = 0.0
        for start in range(0, idx.size, cfg.batch_size):
            b = idx[start : start + cfg.batch_size]
            xb = inputs[b] if transform is None else transform(inputs[b], rng)
            out, cache = forward(m, xb)
            loss, g = mse_loss(out, labels[b])
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite training loss")
            adam_update(m.weights, backward(m, cache, g), st)
            total += loss * b.size
        losses.append(total / idx.size)
        if n_val:
            xv = inputs[val_idx] if transform is None else transform(inputs[val_idx], rng)
            vl = mse_loss(forward(m, xv)[0], labels[val_idx])[0]
            val_losses.append(vl)
            if cfg.patience is not None:
                if vl < best:
                    best, best_w, bad_epochs = vl, [w.copy() for w in m.weights], 0
                else:
                    bad_epochs += 1
                    if bad_epochs > cfg.patience:
                        break
    if best_w is not None:
        m.weights = best_w
    return TrainResult(m, losses, val_losses, st)


# -- checkpoints -------------------------------------------------------------

MAGIC = b"OBOFDMCK"
VERSION = 1
KIND_MLP = 1
KIND_MATRIX = 2
_ACT_CODE = {"linear": 0, "relu": 1}
_CODE_ACT = {v: k for k, v in _ACT_CODE.items()}


class CheckpointError(Exception):
    pass


class BadHeaderError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def _pack(kind: int, header: bytes, payload: bytes) -> bytes:
    body = MAGIC + struct.pack("<II", VERSION, kind) + header + payload
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(m: MlpModel, path: str | Path) -> None:
    """Write spec and weights: magic, version, kind, layer count, sizes, activations,
    row-major float64 LE weights, CRC32 trailer."""
    s = m.spec
    header = struct.pack("<I", s.n_layers)
    header += struct.pack(f"<{len(s.layer_sizes)}I", *s.layer_sizes)
    header += bytes(_ACT_CODE[a] for a in s.activations)
    payload = b"".join(np.ascontiguousarray(w, dtype="<f8").tobytes() for w in m.weights)
    Path(path).write_bytes(_pack(KIND_MLP, header, payload))


def save_matrix(a: np.ndarray, path: str | Path) -> None:
    """Complex matrix in the same container: rows, cols, then interleaved re/im float64."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2:
        raise ValueError("expected a matrix")
    header = struct.pack("<II", *a.shape)
    payload = np.ascontiguousarray(a).astype("<c16").tobytes()
    Path(path).write_bytes(_pack(KIND_MATRIX, header, payload))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError("truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _open(path: str | Path, want_kind: int) -> _Reader:
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise BadHeaderError("bad header")
    rd = _Reader(buf)
    rd.take(len(MAGIC))
    (version,) = rd.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    (kind,) = rd.unpack("<I")
    if kind != want_kind:
        raise BadHeaderError(f"bad header: checkpoint kind {kind}, expected {want_kind}")
    if len(buf) < rd.pos + 4:
        raise TruncatedCheckpointError("truncated checkpoint")
    return rd


def _finish(rd: _Reader) -> None:
    body_end = rd.pos
    (crc,) = rd.unpack("<I")
    if rd.pos != len(rd.buf):
        raise ChecksumError("trailing bytes after checksum")
    if zlib.crc32(rd.buf[:body_end]) != crc:
        raise ChecksumError("checksum mismatch")


def load_checkpoint(path: str | Path) -> MlpModel:
    rd = _open(path, KIND_MLP)
    (n_layers,) = rd.unpack("<I")
    if n_layers < 1 or n_layers > 1024:
        raise BadHeaderError("bad header: implausible layer count")
    sizes = rd.unpack(f"<{n_layers + 1}I")
    codes = rd.take(n_layers)
    try:
        acts = tuple(_CODE_ACT[c] for c in codes)
    except KeyError:
        raise BadHeaderError("bad header: unknown activation code") from None
    spec = MlpSpec(sizes, acts)
    ws = []
    for out, inp in spec.weight_shapes():
        raw = rd.take(8 * out * inp)
        ws.append(np.frombuffer(raw, dtype="<f8").reshape(out, inp).astype(float))
    _finish(rd)
    return MlpModel(spec, ws)


def load_matrix(path: str | Path) -> np.ndarray:
    rd = _open(path, KIND_MATRIX)
    rows, cols = rd.unpack("<II")
    raw = rd.take(16 * rows * cols)
    a = np.frombuffer(raw, dtype="<c16").reshape(rows, cols).astype(complex)
    _finish(rd)
    return a
