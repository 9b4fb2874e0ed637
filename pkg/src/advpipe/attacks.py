"""Attack strategies against the two-stage pipeline.

Four methods, all sharing the same outcome record:

  baseline_reinsert_attack - attack the recognizer's window once, paste
      the result back, hope the detector still anchors the same place.
  eot_crop_robust_attack   - average window gradients over randomly
      offset crops of a slightly larger context so the perturbation
      tolerates small anchor shifts.
  kos_attack               - iterative re-synchronization: every K
      gradient steps, re-insert and ask the detector where it now looks;
      when the anchor moves, adopt the new window and keep attacking.
  hop_skip_jump            - decision-based search against the boolean
      end-to-end oracle, no gradients at all.

Success is always judged end-to-end: a fresh full-pipeline evaluation of
the returned document must equal the target string.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigInvalid, DimensionMismatch, InvalidInitialization
from .metrics import MetricBundle, levenshtein, mse
from .pipeline import PipelineHandle, RegionSpec, crop, reinsert, same_domain

# The EoT attacker's own notion of "text pixels" when choosing crop
# offsets. It inspects the image it is attacking, not the detector.
_TEXT_DARKNESS = 0.5


@dataclass(frozen=True)
class AttackConfig:
    """Shared knobs for every attack method."""

    epsilon: float = 0.25        # L-inf budget per window
    step_size: float = 0.01
    k: int = 5                   # gradient steps between detector checks
    max_iterations: int = 400    # gradient steps per adopted window
    max_restarts: int = 10       # window re-adoptions before giving up
    eot_crops: int = 10
    eot_margin: int = 4          # extra context pixels around the window
    hsj_queries: int = 20000     # total pipeline queries for hop_skip_jump
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0 or self.step_size <= 0:
            raise ConfigInvalid("epsilon and step_size must be positive")
        if self.k < 1:
            raise ConfigInvalid("k must be >= 1")
        for name in ("max_iterations", "max_restarts", "eot_crops",
                     "eot_margin", "hsj_queries"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be >= 0")


@dataclass
class AttackOutcome:
    """Everything one attack attempt produced.

    final_crop_pred is the recognizer's reading of the crafted crop fed
    to it directly (bypassing the detector); final_full_pred is the
    reading of the full document through the whole pipeline. Query
    counts are deltas on the handle used for the attack.
    """

    success: bool
    adversarial_doc: np.ndarray
    final_crop_pred: str
    final_full_pred: str
    metrics: MetricBundle
    h1_queries: int
    h2_queries: int
    gradient_calls: int
    elapsed_seconds: float


def _ball_bounds(center: np.ndarray, epsilon: float):
    return np.maximum(center - epsilon, 0.0), np.minimum(center + epsilon, 1.0)


def _decode(params, window) -> str:
    return nn.decode_logits(nn.forward(params, window))


def _pgd_steps(params, x, center, y_target, cfg, max_steps):
    """Signed-gradient descent steps toward y_target inside the budget ball.

    Stops as soon as the window decodes to the target. Returns the last
    iterate and the number of gradient evaluations consumed.
    """
    lo, hi = _ball_bounds(center, cfg.epsilon)
    steps = 0
    while steps < max_steps:
        if _decode(params, x) == y_target:
            break
        g = nn.loss_and_input_grad(params, x, y_target).input_grad
        x = np.clip(x - cfg.step_size * np.sign(g), lo, hi)
        steps += 1
    assert np.all(np.abs(x - center) <= cfg.epsilon + 1e-12)
    return x, steps


def pgd_targeted(params, window: np.ndarray, y_target: str, cfg: AttackConfig) -> np.ndarray:
    """Targeted PGD on the recognizer alone; the Attack primitive."""
    nn.label_to_indices(y_target)
    if window.shape != (nn.WINDOW_H, nn.WINDOW_W):
        raise DimensionMismatch(f"window has shape {window.shape}")
    x0 = np.asarray(window, dtype=np.float64)
    adv, _ = _pgd_steps(params, x0.copy(), x0, y_target, cfg, cfg.max_iterations)
    return adv


def _finalize(handle, doc, adv_doc, y_target, crop_pred, t0, h1_0, h2_0, grad_calls):
    """Fresh end-to-end evaluation of the returned document, then bookkeeping."""
    final_pred, region = handle.run_pipeline(adv_doc)
    if crop_pred is None:
        crop_pred = _decode(handle.params, crop(adv_doc, region))
    elapsed = time.perf_counter() - t0
    bundle = MetricBundle(
        l_full=levenshtein(y_target, final_pred),
        l_crop=levenshtein(y_target, crop_pred),
        mse_full=mse(doc, adv_doc),
        elapsed_seconds=elapsed,
    )
    return AttackOutcome(
        success=final_pred == y_target,
        adversarial_doc=adv_doc,
        final_crop_pred=crop_pred,
        final_full_pred=final_pred,
        metrics=bundle,
        h1_queries=handle.h1_queries - h1_0,
        h2_queries=handle.h2_queries - h2_0,
        gradient_calls=grad_calls,
        elapsed_seconds=elapsed,
    )


def baseline_reinsert_attack(handle: PipelineHandle, doc, y_target, cfg) -> AttackOutcome:
    """One window attack, one paste, one end-to-end check. No feedback."""
    t0 = time.perf_counter()
    h1_0, h2_0 = handle.h1_queries, handle.h2_queries
    region = handle.detect_region(doc)
    window = crop(doc, region)
    adv_crop, steps = _pgd_steps(handle.params, window.copy(), window,
                                 y_target, cfg, cfg.max_iterations)
    adv_doc = reinsert(doc, region, adv_crop)
    crop_pred = _decode(handle.params, adv_crop)
    return _finalize(handle, doc, adv_doc, y_target, crop_pred, t0, h1_0, h2_0, steps)


def _eot_offset_ranges(ctx: np.ndarray, win_h: int, win_w: int):
    rows, cols = np.nonzero(ctx < _TEXT_DARKNESS)
    r_lo = max(0, int(rows.max()) - (win_h - 1))
    r_hi = min(ctx.shape[0] - win_h, int(rows.min()))
    c_lo = max(0, int(cols.max()) - (win_w - 1))
    c_hi = min(ctx.shape[1] - win_w, int(cols.min()))
    return (r_lo, max(r_lo, r_hi)), (c_lo, max(c_lo, c_hi))


def eot_crop_robust_attack(handle: PipelineHandle, doc, y_target, cfg) -> AttackOutcome:
    """Gradient averaging over randomly offset windows of a padded context."""
    t0 = time.perf_counter()
    h1_0, h2_0 = handle.h1_queries, handle.h2_queries
    nn.label_to_indices(y_target)
    rng = np.random.default_rng(cfg.seed)

    region = handle.detect_region(doc)
    win_h, win_w = region.height, region.width
    c_top = max(region.top - cfg.eot_margin, 0)
    c_left = max(region.left - cfg.eot_margin, 0)
    c_bot = min(region.top + win_h + cfg.eot_margin, doc.shape[0])
    c_right = min(region.left + win_w + cfg.eot_margin, doc.shape[1])
    ctx0 = doc[c_top:c_bot, c_left:c_right].copy()
    ctx = ctx0.copy()
    lo, hi = _ball_bounds(ctx0, cfg.epsilon)
    # offsets that keep every text pixel of the original context in view
    (r_lo, r_hi), (c_lo, c_hi) = _eot_offset_ranges(ctx0, win_h, win_w)

    grad_calls = 0
    adv_doc = doc.copy()
    success_seen = False
    steps = 0
    while steps < cfg.max_iterations and not success_seen:
        oys = rng.integers(r_lo, r_hi + 1, size=cfg.eot_crops)
        oxs = rng.integers(c_lo, c_hi + 1, size=cfg.eot_crops)
        subs = np.stack([ctx[oy:oy + win_h, ox:ox + win_w] for oy, ox in zip(oys, oxs)])
        _, grads = nn.batch_loss_and_input_grad(handle.params, subs, y_target)
        grad_calls += cfg.eot_crops
        acc = np.zeros_like(ctx)
        for g, oy, ox in zip(grads, oys, oxs):
            acc[oy:oy + win_h, ox:ox + win_w] += g
        acc /= cfg.eot_crops
        ctx = np.clip(ctx - cfg.step_size * np.sign(acc), lo, hi)
        steps += 1
        if steps % cfg.k == 0 or steps == cfg.max_iterations:
            adv_doc = doc.copy()
            adv_doc[c_top:c_bot, c_left:c_right] = ctx
            pred, _ = handle.run_pipeline(adv_doc)
            success_seen = pred == y_target
    adv_doc = doc.copy()
    adv_doc[c_top:c_bot, c_left:c_right] = ctx
    crop_pred = _decode(handle.params, ctx[region.top - c_top:region.top - c_top + win_h,
                                           region.left - c_left:region.left - c_left + win_w])
    return _finalize(handle, doc, adv_doc, y_target, crop_pred, t0, h1_0, h2_0, grad_calls)


def kos_attack(handle: PipelineHandle, doc, y_target, cfg) -> AttackOutcome:
    """Keep attacking, re-adopting the detector's window whenever it moves.

    Outer loop: adopt the currently detected window as the domain
    reference and take the corresponding crops of the working document
    and of the pristine original (the perturbation budget stays anchored
    to original pixels). Inner loop, while the detector still agrees
    with the reference: stop if the full pipeline already reads the
    target, otherwise run K gradient steps on the working crop and paste
    it back into the original document. A moved anchor or an exhausted
    iteration budget ends the inner loop and consumes one restart.
    """
    t0 = time.perf_counter()
    h1_0, h2_0 = handle.h1_queries, handle.h2_queries
    nn.label_to_indices(y_target)

    x0 = np.asarray(doc, dtype=np.float64)
    x0_adv = x0.copy()
    grad_calls = 0
    x_adv = None
    for _ in range(cfg.max_restarts):
        ref = handle.detect_region(x0_adv)
        x_adv = crop(x0_adv, ref)
        center = crop(x0, ref)
        j = 0
        while True:
            current = handle.detect_region(x0_adv)
            if not same_domain(current, ref) or j >= cfg.max_iterations:
                break
            pred, _ = handle.run_pipeline(x0_adv)
            if pred == y_target:
                return _finalize(handle, doc, x0_adv, y_target,
                                 _decode(handle.params, x_adv),
                                 t0, h1_0, h2_0, grad_calls)
            x_adv, used = _pgd_steps(handle.params, x_adv, center, y_target, cfg,
                                     min(cfg.k, cfg.max_iterations - j))
            grad_calls += used
            j += used
            x0_adv = reinsert(x0, ref, x_adv)
            if used == 0:
                break
    crop_pred = _decode(handle.params, x_adv) if x_adv is not None else None
    return _finalize(handle, doc, x0_adv, y_target, crop_pred, t0, h1_0, h2_0, grad_calls)


def boundary_search(is_adv, origin: np.ndarray, adv: np.ndarray,
                    tol: float = 1e-3, max_queries: int | None = None) -> np.ndarray:
    """Bisect the segment origin->adv down to the decision boundary.

    Returns the adversarial-side point once the bracketing interval is
    below `tol` in pixel units (interval width times the largest
    per-pixel difference along the segment).
    """
    lo, hi = 0.0, 1.0
    span = float(np.max(np.abs(adv - origin)))
    queries = 0
    while (hi - lo) * span > tol:
        if max_queries is not None and queries >= max_queries:
            break
        mid = 0.5 * (lo + hi)
        if is_adv((1.0 - mid) * origin + mid * adv):
            hi = mid
        else:
            lo = mid
        queries += 1
    return (1.0 - hi) * origin + hi * adv


def hop_skip_jump(handle: PipelineHandle, doc, y_target, init_adv_doc, cfg) -> AttackOutcome:
    """Decision-based attack on the boolean oracle [pipeline output == target].

    Classic boundary-attack loop: bisect to the boundary, estimate a
    gradient direction from random probes (probe count grows with the
    square root of the iteration), then search geometrically for a step
    that stays adversarial. Keeps the lowest-MSE adversarial document
    seen; every pipeline evaluation counts against cfg.hsj_queries.
    """
    t0 = time.perf_counter()
    h1_0, h2_0 = handle.h1_queries, handle.h2_queries
    rng = np.random.default_rng(cfg.seed)
    x0 = np.asarray(doc, dtype=np.float64)

    def remaining():
        return cfg.hsj_queries - (handle.h1_queries - h1_0)

    def is_adv(img):
        pred, _ = handle.run_pipeline(img)
        return pred == y_target

    if not is_adv(init_adv_doc):
        raise InvalidInitialization("starting document does not decode to the target")

    best = np.asarray(init_adv_doc, dtype=np.float64).copy()
    best_err = mse(x0, best)

    def consider(img):
        nonlocal best, best_err
        err = mse(x0, img)
        if err < best_err:
            best, best_err = img.copy(), err

    x_adv = best.copy()
    d = x0.size
    t = 0
    stale_rounds = 0
    while remaining() > 60 and stale_rounds < 6:
        round_best = best_err
        x_b = boundary_search(is_adv, x0, x_adv, tol=1e-3,
                              max_queries=min(40, remaining() - 20))
        consider(x_b)
        diff = x_b - x0
        dist = float(np.sqrt(np.sum(diff * diff)))
        if dist == 0.0:
            break

        n_probe = min(128, int(24 * np.sqrt(t + 1)), remaining() - 20)
        if n_probe < 4:
            break
        delta = max(1e-2, dist / np.sqrt(d))
        # Rademacher probes, built in place: probe_i = clip(x_b + delta * u_i)
        cands = rng.integers(0, 2, size=(n_probe,) + x0.shape).astype(np.float64)
        cands *= 2.0 * delta
        cands -= delta
        cands += x_b
        np.clip(cands, 0.0, 1.0, out=cands)
        flags = np.array([p == y_target for p in handle.run_pipeline_batch(cands)])
        f = 2.0 * flags - 1.0
        if np.all(flags) or not np.any(flags):
            direction = (cands.mean(axis=0) - x_b) * (1.0 if flags[0] else -1.0)
        else:
            f -= f.mean()
            # sum_i (f_i - fbar) * (cand_i - x_b): the x_b term cancels
            direction = np.einsum("n,nhw->hw", f, cands) / n_probe
        norm = float(np.sqrt(np.sum(direction * direction)))
        if norm == 0.0:
            x_adv = x_b
            t += 1
            stale_rounds += 1
            continue
        direction /= norm

        step = dist / np.sqrt(t + 1)
        x_adv = x_b
        while step > 1e-6 and remaining() > 2:
            cand = np.clip(x_b + step * direction, 0.0, 1.0)
            if is_adv(cand):
                x_adv = cand
                consider(cand)
                break
            step *= 0.5
        t += 1
        # stop once rounds no longer buy a meaningful error reduction
        if round_best - best_err < 0.003 * round_best:
            stale_rounds += 1
        else:
            stale_rounds = 0

    return _finalize(handle, doc, best, y_target, None, t0, h1_0, h2_0, 0)
