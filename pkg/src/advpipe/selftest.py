"""Quick self-contained oracle and property checks, runnable from the CLI.

Each check re-derives its expected values independently of the code
under test (finite differences, exhaustive recursion, brute-force
scans), so a pass means the fast paths agree with first principles.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import glyphs, metrics, nn
from .pipeline import PipelineHandle, crop, reinsert, RegionSpec


def _central_diff(f, x, i, h=1e-5):
    xp = x.copy()
    xp.flat[i] += h
    up = f(xp)
    xp.flat[i] -= 2 * h
    um = f(xp)
    return (up - um) / (2 * h)


def check_input_gradients(n_coords=60, seed=123) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    params = nn.init_params(seed)
    x = rng.uniform(0, 1, (nn.WINDOW_H, nn.WINDOW_W))
    target = "304.57"
    g = nn.loss_and_input_grad(params, x, target).input_grad
    f = lambda img: nn.loss_and_input_grad(params, img, target).value
    worst = 0.0
    for i in rng.choice(x.size, size=n_coords, replace=False):
        fd = _central_diff(f, x, i)
        err = abs(g.flat[i] - fd) / max(abs(g.flat[i]), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst <= 1e-4, f"worst relative error {worst:.2e}"


def check_param_gradients(n_coords=40, seed=321) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    params = nn.init_params(seed)
    x = rng.uniform(0, 1, (nn.WINDOW_H, nn.WINDOW_W))
    target = "88.201"
    grads = nn.param_grad(params, x, target)
    names = [f.name for f in dataclasses.fields(nn.NetworkParams)]
    worst = 0.0
    for _ in range(n_coords):
        name = names[rng.integers(0, len(names))]
        tensor = getattr(params, name)
        i = int(rng.integers(0, tensor.size))

        def f_at(v):
            t = tensor.copy()
            t.flat[i] = v
            p = nn.NetworkParams(**{n: (t if n == name else getattr(params, n)) for n in names})
            return nn.loss_and_input_grad(p, x, target).value

        h = 1e-5
        v0 = tensor.flat[i]
        fd = (f_at(v0 + h) - f_at(v0 - h)) / (2 * h)
        an = getattr(grads, name).flat[i]
        err = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst <= 1e-4, f"worst relative error {worst:.2e}"


def _lev_recursive(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        _lev_recursive(a[1:], b) + 1,
        _lev_recursive(a, b[1:]) + 1,
        _lev_recursive(a[1:], b[1:]) + (a[0] != b[0]),
    )


def check_levenshtein(max_len=4) -> tuple[bool, str]:
    import itertools
    symbols = "01."
    pairs = 0
    for la in range(max_len + 1):
        for lb in range(max_len + 1):
            for a in itertools.product(symbols, repeat=la):
                for b in itertools.product(symbols, repeat=lb):
                    sa, sb = "".join(a), "".join(b)
                    if metrics.levenshtein(sa, sb) != _lev_recursive(sa, sb):
                        return False, f"mismatch on ({sa!r}, {sb!r})"
                    pairs += 1
    return True, f"{pairs} pairs agree with the recursive oracle"


def _scan_oracle(doc, threshold=0.5, padding=2):
    rmin = cmin = None
    h, w = doc.shape
    for r in range(h):
        for c in range(w):
            if doc[r, c] < threshold:
                rmin = r if rmin is None else min(rmin, r)
                cmin = c if cmin is None else min(cmin, c)
    top = min(max(rmin - padding, 0), h - nn.WINDOW_H)
    left = min(max(cmin - padding, 0), w - nn.WINDOW_W)
    return top, left


def check_detector(n_docs=25, seed=55) -> tuple[bool, str]:
    params = nn.zero_params()
    handle = PipelineHandle(params)
    for i in range(n_docs):
        sample = glyphs.render_document("510.46", seed + i)
        region = handle.detect_region(sample.full_image)
        top, left = _scan_oracle(sample.full_image)
        if (region.top, region.left) != (top, left):
            return False, f"doc seed {seed + i}: {region} vs scan ({top},{left})"
    return True, f"{n_docs} documents agree with the scan oracle"


def check_reinsert_roundtrip(n=25, seed=77) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for _ in range(n):
        doc = rng.uniform(0, 1, (glyphs.DOC_H, glyphs.DOC_W))
        top = int(rng.integers(0, glyphs.DOC_H - nn.WINDOW_H + 1))
        left = int(rng.integers(0, glyphs.DOC_W - nn.WINDOW_W + 1))
        region = RegionSpec(top=top, left=left)
        out = reinsert(doc, region, crop(doc, region))
        if not np.array_equal(out, doc):
            return False, "round trip not bit-exact"
    return True, f"{n} crop/reinsert round trips bit-exact"


CHECKS = (
    ("input gradients vs finite differences", check_input_gradients),
    ("parameter gradients vs finite differences", check_param_gradients),
    ("levenshtein vs recursive oracle", check_levenshtein),
    ("detector vs brute-force scan", check_detector),
    ("crop/reinsert round trip", check_reinsert_roundtrip),
)


def run_all(log=print) -> bool:
    ok = True
    for name, fn in CHECKS:
        passed, detail = fn()
        ok &= passed
        log(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    return ok
