"""The two-stage system under attack.

Stage one is a query-only ink-region detector: it scans for the minimal
ink row and column, backs off by a fixed padding, and returns a
fixed-size window anchored there. Stage two is the trained digit-string
recognizer. Both are reached through a PipelineHandle that counts every
evaluation, so attack cost is measured exactly.

Attack code must treat the detector as opaque: only detect_region /
run_pipeline are public, and the threshold and padding live in private
attributes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionMismatch, OutOfBounds
from .glyphs import DETECT_PADDING, INK_THRESHOLD, ink_anchor
from .nn import WINDOW_H, WINDOW_W, NetworkParams


@dataclass(frozen=True)
class RegionSpec:
    """Top-left anchor of the fixed recognizer window inside a document."""

    top: int
    left: int
    height: int = WINDOW_H
    width: int = WINDOW_W


def same_domain(a: RegionSpec, b: RegionSpec) -> bool:
    """True iff both windows are anchored at exactly the same coordinates."""
    return a.top == b.top and a.left == b.left


def crop(doc: np.ndarray, region: RegionSpec) -> np.ndarray:
    """Exact pixel copy of the window."""
    h, w = doc.shape
    if (region.top < 0 or region.left < 0
            or region.top + region.height > h or region.left + region.width > w):
        raise OutOfBounds(f"{region} does not fit a {doc.shape} image")
    return doc[region.top:region.top + region.height,
               region.left:region.left + region.width].copy()


def reinsert(doc: np.ndarray, region: RegionSpec, patch: np.ndarray) -> np.ndarray:
    """Copy of doc with the window overwritten by patch, clamped to [0, 1]."""
    if patch.shape != (region.height, region.width):
        raise DimensionMismatch(f"patch {patch.shape} vs region {region}")
    h, w = doc.shape
    if (region.top < 0 or region.left < 0
            or region.top + region.height > h or region.left + region.width > w):
        raise OutOfBounds(f"{region} does not fit a {doc.shape} image")
    out = doc.copy()
    out[region.top:region.top + region.height,
        region.left:region.left + region.width] = np.clip(patch, 0.0, 1.0)
    return out


class PipelineHandle:
    """Query access to detector + recognizer with per-stage call counting."""

    def __init__(self, params: NetworkParams, *,
                 ink_threshold: float = INK_THRESHOLD,
                 padding: int = DETECT_PADDING):
        self.params = params
        self._ink_threshold = ink_threshold
        self._padding = padding
        self.h1_queries = 0
        self.h2_queries = 0
        self._lock = threading.Lock()

    def _count(self, h1: int = 0, h2: int = 0) -> None:
        with self._lock:
            self.h1_queries += h1
            self.h2_queries += h2

    def detect_region(self, doc: np.ndarray) -> RegionSpec:
        """Fixed-size window anchored at (min ink row, min ink col) - padding."""
        self._count(h1=1)
        top, left = ink_anchor(doc, threshold=self._ink_threshold, padding=self._padding)
        return RegionSpec(top=top, left=left)

    def recognize(self, window: np.ndarray) -> str:
        """Per-cell argmax decode of the recognizer logits."""
        self._count(h2=1)
        return nn.decode_logits(nn.forward(self.params, window))

    def recognize_batch(self, windows: np.ndarray) -> list[str]:
        self._count(h2=len(windows))
        preds = []
        for start in range(0, len(windows), 16):  # keep conv buffers cache-sized
            logits = nn.forward_batch(self.params, windows[start:start + 16])
            preds.extend(nn.indices_to_label(ix) for ix in np.argmax(logits, axis=-1))
        return preds

    def run_pipeline(self, doc: np.ndarray) -> tuple[str, RegionSpec]:
        """detect -> crop -> recognize; exactly one query to each stage."""
        region = self.detect_region(doc)
        return self.recognize(crop(doc, region)), region

    def run_pipeline_batch(self, docs) -> list[str]:
        """Full-pipeline decision for each document (counts one query pair each)."""
        regions = [self.detect_region(d) for d in docs]
        windows = np.stack([crop(d, r) for d, r in zip(docs, regions)])
        return self.recognize_batch(windows)
