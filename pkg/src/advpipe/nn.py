"""Dense-tensor numeric core for the digit-string recognizer.

A fixed feedforward architecture in float64 throughout:

    28x120 grayscale window
      -> 3x3 conv (stride 1, same padding), few channels, tanh
      -> 3x3 conv (stride 1, same padding), few channels, tanh
      -> split into 6 cells of 28x20, shared affine head per cell
      -> 6 rows of 11 logits (digits 0-9 plus '.')

Forward evaluation and reverse-mode gradients (with respect to both the
input window and every parameter) are written out explicitly so they can
be validated against central finite differences. All public operations
are pure: identical inputs give bitwise-identical outputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .errors import DimensionMismatch, TargetLengthMismatch, UnknownSymbol

ALPHABET = "0123456789."
N_CLASSES = len(ALPHABET)
N_CELLS = 6
CELL_H, CELL_W = 28, 20
WINDOW_H, WINDOW_W = CELL_H, CELL_W * N_CELLS

CONV1_CHANNELS = 3
CONV2_CHANNELS = 6
HEAD_FEATURES = CONV2_CHANNELS * CELL_H * CELL_W

_CHAR_TO_INDEX = {c: i for i, c in enumerate(ALPHABET)}

# serialization: magic, version, u32 dims per tensor, then raw float64 data
_MAGIC = b"KOSN"
_VERSION = 1


def label_to_indices(label: str) -> np.ndarray:
    """Map a length-6 string over the alphabet to per-cell class indices."""
    if len(label) != N_CELLS:
        raise TargetLengthMismatch(
            f"label {label!r} has length {len(label)}, expected {N_CELLS}"
        )
    try:
        return np.array([_CHAR_TO_INDEX[c] for c in label], dtype=np.int64)
    except KeyError as exc:
        raise UnknownSymbol(f"character {exc.args[0]!r} not in {ALPHABET!r}") from None


def indices_to_label(indices: np.ndarray) -> str:
    return "".join(ALPHABET[int(i)] for i in indices)


@dataclass(frozen=True)
class NetworkParams:
    """All recognizer weights and biases, immutable after construction."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray

    def __post_init__(self):
        c1 = self.conv1_w.shape[0]
        c2 = self.conv2_w.shape[0]
        expected = {
            "conv1_w": (c1, 1, 3, 3),
            "conv1_b": (c1,),
            "conv2_w": (c2, c1, 3, 3),
            "conv2_b": (c2,),
            "head_w": (N_CLASSES, c2 * CELL_H * CELL_W),
            "head_b": (N_CLASSES,),
        }
        for f in fields(self):
            arr = getattr(self, f.name)
            if arr.shape != expected[f.name]:
                raise DimensionMismatch(
                    f"{f.name} has shape {arr.shape}, expected {expected[f.name]}"
                )
            if arr.dtype != np.float64:
                arr = arr.astype(np.float64)
            elif arr.flags.writeable:
                arr = arr.copy()  # never freeze (or alias) a caller's array
            arr.flags.writeable = False
            object.__setattr__(self, f.name, arr)

    def tensors(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    def count(self) -> int:
        return sum(t.size for t in self.tensors())


@dataclass(frozen=True)
class GradientPair:
    """A scalar loss together with its gradient w.r.t. the input window."""

    value: float
    input_grad: np.ndarray


def init_params(seed: int) -> NetworkParams:
    """Seeded random initialization (zero biases, 1/sqrt(fan-in) weights)."""
    rng = np.random.default_rng(seed)
    c1, c2 = CONV1_CHANNELS, CONV2_CHANNELS
    return NetworkParams(
        conv1_w=rng.normal(0.0, 1.0 / 3.0, (c1, 1, 3, 3)),
        conv1_b=np.zeros(c1),
        conv2_w=rng.normal(0.0, 1.0 / np.sqrt(9 * c1), (c2, c1, 3, 3)),
        conv2_b=np.zeros(c2),
        head_w=rng.normal(0.0, 1.0 / np.sqrt(HEAD_FEATURES), (N_CLASSES, HEAD_FEATURES)),
        head_b=np.zeros(N_CLASSES),
    )


def zero_params() -> NetworkParams:
    c1, c2 = CONV1_CHANNELS, CONV2_CHANNELS
    return NetworkParams(
        conv1_w=np.zeros((c1, 1, 3, 3)),
        conv1_b=np.zeros(c1),
        conv2_w=np.zeros((c2, c1, 3, 3)),
        conv2_b=np.zeros(c2),
        head_w=np.zeros((N_CLASSES, HEAD_FEATURES)),
        head_b=np.zeros(N_CLASSES),
    )


def _check_window(crop: np.ndarray) -> np.ndarray:
    if crop.shape != (WINDOW_H, WINDOW_W):
        raise DimensionMismatch(
            f"crop has shape {crop.shape}, expected {(WINDOW_H, WINDOW_W)}"
        )
    return np.asarray(crop, dtype=np.float64)


def _conv3x3_forward(x, w, b):
    # x: (N, H, W, C) channels-last, w: (O, C, 3, 3); stride 1, zero padding 1.
    # im2col with tap-major columns, one GEMM for the whole batch.
    n, h, wd, c = x.shape
    o = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n * h * wd, 9 * c))
    cols_taps = cols.reshape(n, h, wd, 9, c)
    for tap in range(9):
        di, dj = divmod(tap, 3)
        cols_taps[:, :, :, tap, :] = xp[:, di:di + h, dj:dj + wd, :]
    w_t = w.transpose(2, 3, 1, 0).reshape(9 * c, o)
    out = (cols @ w_t + b).reshape(n, h, wd, o)
    return out, cols


def _conv3x3_backward(dout, cols, w, in_channels):
    # dout: (N, H, W, O); returns (dw, db, dx) with dx channels-last
    n, h, wd, o = dout.shape
    c = in_channels
    dout_rows = dout.reshape(-1, o)
    dw = (cols.T @ dout_rows).reshape(3, 3, c, o).transpose(3, 2, 0, 1)
    db = dout_rows.sum(axis=0)
    w_t = w.transpose(2, 3, 1, 0).reshape(9 * c, o)
    dcols = (dout_rows @ w_t.T).reshape(n, h, wd, 9, c)
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for tap in range(9):
        di, dj = divmod(tap, 3)
        dxp[:, di:di + h, dj:dj + wd, :] += dcols[:, :, :, tap, :]
    return dw, db, dxp[:, 1:h + 1, 1:wd + 1, :]


def _forward_batch(params: NetworkParams, x: np.ndarray):
    """Forward pass on a (N, 28, 120) batch; returns (logits, cache)."""
    n = x.shape[0]
    xin = x[:, :, :, None]
    a1, cols1 = _conv3x3_forward(xin, params.conv1_w, params.conv1_b)
    z1 = np.tanh(a1)
    a2, cols2 = _conv3x3_forward(z1, params.conv2_w, params.conv2_b)
    z2 = np.tanh(a2)
    cellfeat = np.ascontiguousarray(
        z2.reshape(n, WINDOW_H, N_CELLS, CELL_W, CONV2_CHANNELS).transpose(0, 2, 1, 3, 4)
    ).reshape(n, N_CELLS, HEAD_FEATURES)
    logits = cellfeat @ params.head_w.T + params.head_b
    cache = (cols1, z1, cols2, z2, cellfeat)
    return logits, cache


def _softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def _cross_entropy(probs, targets):
    # probs: (N, D, K), targets: (N, D); per-sample loss summed over cells.
    # A target probability that underflows to zero yields +inf, which
    # training surfaces as TrainingDiverged.
    n, d, _ = probs.shape
    picked = probs[np.arange(n)[:, None], np.arange(d)[None, :], targets]
    with np.errstate(divide="ignore"):
        return -np.log(picked).sum(axis=1)


def _backward_batch(params: NetworkParams, cache, dlogits):
    """Backpropagate dlogits; returns (param_grads: NetworkParams, dx)."""
    cols1, z1, cols2, z2, cellfeat = cache
    n = dlogits.shape[0]
    dhead_w = dlogits.reshape(-1, N_CLASSES).T @ cellfeat.reshape(-1, HEAD_FEATURES)
    dhead_b = dlogits.sum(axis=(0, 1))
    dcell = dlogits @ params.head_w
    dz2 = np.ascontiguousarray(
        dcell.reshape(n, N_CELLS, WINDOW_H, CELL_W, CONV2_CHANNELS).transpose(0, 2, 1, 3, 4)
    ).reshape(n, WINDOW_H, WINDOW_W, CONV2_CHANNELS)
    da2 = dz2 * (1.0 - z2 * z2)
    dw2, db2, dz1 = _conv3x3_backward(da2, cols2, params.conv2_w, CONV1_CHANNELS)
    da1 = dz1 * (1.0 - z1 * z1)
    dw1, db1, dxin = _conv3x3_backward(da1, cols1, params.conv1_w, 1)
    grads = NetworkParams(
        conv1_w=dw1, conv1_b=db1, conv2_w=dw2, conv2_b=db2,
        head_w=dhead_w, head_b=dhead_b,
    )
    return grads, dxin[:, :, :, 0]


def forward(params: NetworkParams, crop: np.ndarray) -> np.ndarray:
    """Logits for one window: (6 cells, 11 classes)."""
    x = _check_window(crop)
    logits, _ = _forward_batch(params, x[None])
    return logits[0]


def forward_batch(params: NetworkParams, crops: np.ndarray) -> np.ndarray:
    """Logits for a (N, 28, 120) stack of windows: (N, 6, 11)."""
    if crops.ndim != 3 or crops.shape[1:] != (WINDOW_H, WINDOW_W):
        raise DimensionMismatch(f"batch has shape {crops.shape}")
    logits, _ = _forward_batch(params, np.asarray(crops, dtype=np.float64))
    return logits


def decode_logits(logits: np.ndarray) -> str:
    """Per-cell argmax decode; ties break toward the lowest class index."""
    return indices_to_label(np.argmax(logits, axis=-1))


def loss_and_input_grad(params: NetworkParams, crop: np.ndarray, target: str) -> GradientPair:
    """Summed per-cell cross-entropy against `target` and its exact input gradient."""
    x = _check_window(crop)
    tidx = label_to_indices(target)
    logits, cache = _forward_batch(params, x[None])
    probs = _softmax(logits)
    loss = float(_cross_entropy(probs, tidx[None])[0])
    dlogits = probs.copy()
    dlogits[0, np.arange(N_CELLS), tidx] -= 1.0
    _, dx = _backward_batch(params, cache, dlogits)
    return GradientPair(value=loss, input_grad=dx[0])


def param_grad(params: NetworkParams, crop: np.ndarray, target: str) -> NetworkParams:
    """Gradients of the same loss w.r.t. every parameter; shapes mirror NetworkParams."""
    x = _check_window(crop)
    tidx = label_to_indices(target)
    logits, cache = _forward_batch(params, x[None])
    probs = _softmax(logits)
    dlogits = probs
    dlogits[0, np.arange(N_CELLS), tidx] -= 1.0
    grads, _ = _backward_batch(params, cache, dlogits)
    return grads


def batch_loss_and_input_grad(params: NetworkParams, crops: np.ndarray, target: str):
    """Per-window losses against one target and the matching input gradients."""
    tidx = label_to_indices(target)
    x = np.asarray(crops, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (WINDOW_H, WINDOW_W):
        raise DimensionMismatch(f"batch has shape {x.shape}")
    n = x.shape[0]
    logits, cache = _forward_batch(params, x)
    probs = _softmax(logits)
    losses = _cross_entropy(probs, np.broadcast_to(tidx, (n, N_CELLS)))
    dlogits = probs
    dlogits[:, np.arange(N_CELLS), tidx] -= 1.0
    _, dx = _backward_batch(params, cache, dlogits)
    return losses, dx


def batch_loss_and_param_grad(params: NetworkParams, crops: np.ndarray, targets: np.ndarray,
                              label_smoothing: float = 0.0):
    """Mean (over the batch) of the summed-cell cross-entropy, plus parameter grads.

    `label_smoothing` blends the one-hot targets toward uniform; training
    uses it to keep logit margins moderate, the default leaves the loss
    exactly the one the public gradient operations expose.
    """
    logits, cache = _forward_batch(params, crops)
    probs = _softmax(logits)
    n = crops.shape[0]
    loss = float(_cross_entropy(probs, targets).mean())
    dlogits = probs
    if label_smoothing:
        dlogits -= label_smoothing / N_CLASSES
        dlogits[np.arange(n)[:, None], np.arange(N_CELLS)[None, :], targets] -= 1.0 - label_smoothing
    else:
        dlogits[np.arange(n)[:, None], np.arange(N_CELLS)[None, :], targets] -= 1.0
    dlogits /= n
    grads, _ = _backward_batch(params, cache, dlogits)
    return loss, grads


def sgd_step(params: NetworkParams, grads: NetworkParams, learning_rate: float) -> NetworkParams:
    """One gradient-descent update; returns fresh params, inputs untouched."""
    updated = {}
    for f in fields(NetworkParams):
        p = getattr(params, f.name)
        g = getattr(grads, f.name)
        if p.shape != g.shape:
            raise DimensionMismatch(f"{f.name}: {p.shape} vs {g.shape}")
        updated[f.name] = p - learning_rate * g
    return NetworkParams(**updated)


def save_params(params: NetworkParams, path) -> None:
    """Flat binary dump: magic, version byte, u32-LE dims, float64-LE data."""
    blob = bytearray(_MAGIC)
    blob.append(_VERSION)
    for t in params.tensors():
        for dim in t.shape:
            blob += struct.pack("<I", dim)
    for t in params.tensors():
        blob += t.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_params(path) -> NetworkParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC or blob[4] != _VERSION:
        raise DimensionMismatch(f"{path}: bad magic or version")
    ndims = [4, 1, 4, 1, 2, 1]
    off = 5
    shapes = []
    for nd in ndims:
        dims = struct.unpack_from(f"<{nd}I", blob, off)
        off += 4 * nd
        shapes.append(dims)
    tensors = []
    for shape in shapes:
        size = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        tensors.append(arr.copy())
    names = [f.name for f in fields(NetworkParams)]
    return NetworkParams(**dict(zip(names, tensors)))
