"""Deterministic synthetic document generator.

Renders check-like grayscale images (1.0 = white paper, 0.0 = black ink)
containing a six-character amount string, plus crop-sized labeled samples
for training the recognizer. Everything regenerates bit-exactly from
integer seeds; no fonts or external assets.

Glyph bitmaps are a hand-coded 7x5 pixel font scaled 3x into a 28x20
cell. Around the solid ink body sits a one-pixel gray halo (0.62): dark
enough that a bounded perturbation can push it below the detector's 0.5
ink threshold, light enough that rendering noise never does. This is
what makes the detector's output sensitive to in-budget attacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionMismatch, NoInkFound, TrainingDiverged, UnknownSymbol
from .nn import ALPHABET, CELL_H, CELL_W, N_CELLS, WINDOW_H, WINDOW_W, NetworkParams

DOC_H, DOC_W = 192, 384

INK_THRESHOLD = 0.5   # pixel < 0.5 counts as ink; shared with the detector
DETECT_PADDING = 2
HALO_VALUE = 0.62
NOISE_AMP = 0.1
JITTER_Y = 2          # vertical jitter range in px
JITTER_X = 1          # horizontal range; +-2 could push a strip's ink span
                      # past what the fixed window can cover (see ledger)

_FONT_SCALE = 3
_BODY_TOP, _BODY_LEFT = 3, 2          # 21x15 body inside the 28x20 cell

_FONT = {
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": (".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", "..#..", "..#..", "..#.."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
    ".": (".....", ".....", ".....", ".....", ".....", ".##..", ".##.."),
}

_TEMPLATES: dict[str, np.ndarray] = {}


def _build_template(symbol: str) -> np.ndarray:
    rows = _FONT[symbol]
    ink = np.zeros((CELL_H, CELL_W), dtype=bool)
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "#":
                r0 = _BODY_TOP + r * _FONT_SCALE
                c0 = _BODY_LEFT + c * _FONT_SCALE
                ink[r0:r0 + _FONT_SCALE, c0:c0 + _FONT_SCALE] = True
    halo = np.zeros_like(ink)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            halo[max(0, di):CELL_H + min(0, di), max(0, dj):CELL_W + min(0, dj)] |= \
                ink[max(0, -di):CELL_H - max(0, di), max(0, -dj):CELL_W - max(0, dj)]
    halo &= ~ink
    cell = np.ones((CELL_H, CELL_W))
    cell[halo] = HALO_VALUE
    cell[ink] = 0.0
    return cell


def glyph_template(symbol: str) -> np.ndarray:
    """Canonical 28x20 bitmap of one symbol (no jitter, no noise)."""
    if symbol not in _FONT:
        raise UnknownSymbol(f"no glyph for {symbol!r}")
    if symbol not in _TEMPLATES:
        _TEMPLATES[symbol] = _build_template(symbol)
    return _TEMPLATES[symbol].copy()


def render_glyph(symbol, cell_h=CELL_H, cell_w=CELL_W, jitter_seed=0, *,
                 jitter_y=JITTER_Y, jitter_x=JITTER_X, noise_amp=NOISE_AMP) -> np.ndarray:
    """One glyph cell with seeded position jitter and additive noise."""
    if (cell_h, cell_w) != (CELL_H, CELL_W):
        raise DimensionMismatch(f"cell dims {(cell_h, cell_w)} != {(CELL_H, CELL_W)}")
    template = glyph_template(symbol)
    rng = np.random.default_rng(jitter_seed)
    dy = int(rng.integers(-jitter_y, jitter_y + 1))
    dx = int(rng.integers(-jitter_x, jitter_x + 1))
    cell = np.ones((CELL_H, CELL_W))
    # non-paper content sits in [2:25, 1:18]; jitter keeps it inside the cell
    cell[2 + dy:25 + dy, 1 + dx:18 + dx] = template[2:25, 1:18]
    if noise_amp > 0.0:
        cell = cell + rng.uniform(-noise_amp, noise_amp, cell.shape)
    return np.clip(cell, 0.0, 1.0)


def _render_strip(label: str, cell_seeds, **render_kw) -> np.ndarray:
    cells = [render_glyph(ch, jitter_seed=int(s), **render_kw)
             for ch, s in zip(label, cell_seeds)]
    return np.hstack(cells)


def ink_anchor(img: np.ndarray, threshold=INK_THRESHOLD, padding=DETECT_PADDING,
               win_h=WINDOW_H, win_w=WINDOW_W) -> tuple[int, int]:
    """Top-left of the fixed window: min ink row/col minus padding, clipped."""
    rows, cols = np.nonzero(img < threshold)
    if rows.size == 0:
        raise NoInkFound("no pixel below the ink threshold")
    top = min(max(int(rows.min()) - padding, 0), img.shape[0] - win_h)
    left = min(max(int(cols.min()) - padding, 0), img.shape[1] - win_w)
    return top, left


@dataclass(frozen=True)
class DocumentSample:
    """One rendered check image with its ground truth."""

    full_image: np.ndarray
    true_region: "RegionSpec"  # noqa: F821 - pipeline.RegionSpec, kept untyped to avoid a cycle
    label: str
    seed: int


def render_document(label: str, placement_seed: int) -> DocumentSample:
    """Place a rendered amount strip on a speckled white canvas."""
    from .pipeline import RegionSpec  # local import: pipeline depends on nn only

    nn.label_to_indices(label)  # validates length and alphabet
    rng = np.random.default_rng(placement_seed)
    top = int(rng.integers(8, DOC_H - WINDOW_H - 8 + 1))
    left = int(rng.integers(8, DOC_W - WINDOW_W - 8 + 1))
    cell_seeds = rng.integers(0, 2**63, size=N_CELLS)
    strip = _render_strip(label, cell_seeds)

    canvas = np.ones((DOC_H, DOC_W))
    n_speckle = 160
    sr = rng.integers(0, DOC_H, size=n_speckle)
    sc = rng.integers(0, DOC_W, size=n_speckle)
    sv = rng.uniform(0.70, 0.95, size=n_speckle)
    gap = 6
    keep = ~((sr >= top - gap) & (sr < top + WINDOW_H + gap)
             & (sc >= left - gap) & (sc < left + WINDOW_W + gap))
    canvas[sr[keep], sc[keep]] = sv[keep]
    canvas[top:top + WINDOW_H, left:left + WINDOW_W] = strip

    anchor = ink_anchor(canvas)
    region = RegionSpec(top=anchor[0], left=anchor[1], height=WINDOW_H, width=WINDOW_W)
    return DocumentSample(full_image=canvas, true_region=region,
                          label=label, seed=placement_seed)


def _render_training_crop(label: str, rng: np.random.Generator) -> np.ndarray:
    # micro-canvas with the same anchor geometry the pipeline's detector uses
    cell_seeds = rng.integers(0, 2**63, size=N_CELLS)
    strip = _render_strip(label, cell_seeds)
    canvas = np.ones((WINDOW_H + 12, WINDOW_W + 16))
    canvas[6:6 + WINDOW_H, 8:8 + WINDOW_W] = strip
    t, l = ink_anchor(canvas)
    return canvas[t:t + WINDOW_H, l:l + WINDOW_W].copy()


def canonical_crop(label: str) -> np.ndarray:
    """Noise- and jitter-free window rendering of `label` at detector alignment."""
    nn.label_to_indices(label)
    cells = [render_glyph(ch, jitter_seed=0, jitter_y=0, jitter_x=0, noise_amp=0.0)
             for ch in label]
    strip = np.hstack(cells)
    canvas = np.ones((WINDOW_H + 12, WINDOW_W + 16))
    canvas[6:6 + WINDOW_H, 8:8 + WINDOW_W] = strip
    t, l = ink_anchor(canvas)
    return canvas[t:t + WINDOW_H, l:l + WINDOW_W].copy()


def make_training_set(n: int, seed: int) -> list[tuple[np.ndarray, str]]:
    """n labeled crop-sized samples; sample i is derived from seed + i."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    out = []
    for i in range(n):
        rng = np.random.default_rng(seed + i)
        label = "".join(ALPHABET[j] for j in rng.integers(0, len(ALPHABET), N_CELLS))
        out.append((_render_training_crop(label, rng), label))
    return out


def train(train_set, epochs: int, learning_rate: float, seed: int, *,
          loss_history: list | None = None) -> NetworkParams:
    """Minibatch SGD on labeled crops; raises TrainingDiverged on non-finite loss.

    If `loss_history` is given, the mean training loss of each epoch is
    appended to it.
    """
    if not train_set:
        raise ValueError("empty training set")
    x = np.stack([c for c, _ in train_set])
    t = np.stack([nn.label_to_indices(lbl) for _, lbl in train_set])
    params = nn.init_params(seed)
    shuffle_rng = np.random.default_rng(seed + 1)
    batch = 8
    smoothing = 0.1  # keeps logit margins moderate
    for _ in range(epochs):
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            loss, grads = nn.batch_loss_and_param_grad(params, x[idx], t[idx],
                                                       label_smoothing=smoothing)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss}")
            params = nn.sgd_step(params, grads, learning_rate)
            losses.append(loss)
        if loss_history is not None:
            loss_history.append(float(np.mean(losses)))
    return params


def full_string_accuracy(params: NetworkParams, samples) -> float:
    """Fraction of samples whose whole decoded string matches the label."""
    crops = np.stack([c for c, _ in samples])
    logits = nn.forward_batch(params, crops)
    preds = np.argmax(logits, axis=-1)
    hits = sum(nn.indices_to_label(p) == lbl for p, (_, lbl) in zip(preds, samples))
    return hits / len(samples)
