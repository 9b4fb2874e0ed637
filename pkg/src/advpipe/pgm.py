"""Binary PGM (P5) dumps of grayscale images for eyeballing results."""

import numpy as np

from .errors import IOFailure


def to_bytes(img: np.ndarray) -> bytes:
    """P5 encoding, maxval 255, round-half-up quantization of [0,1] pixels."""
    h, w = img.shape
    q = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + q.tobytes()


def write_pgm(img: np.ndarray, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(to_bytes(img))
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc
