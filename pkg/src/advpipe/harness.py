"""Experiment runner: trains or loads the recognizer, renders trial
documents, runs the selected attack methods, and writes the report CSVs
plus PGM image dumps."""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import attacks, glyphs, metrics, nn, pgm
from .attacks import AttackConfig, AttackOutcome
from .errors import ConfigInvalid, GateFailed, IOFailure
from .pipeline import PipelineHandle, crop, reinsert

METHOD_ORDER = ("baseline", "eot", "kos", "hsj")

GATE_ACCURACY = 0.98
HELDOUT_SEED = 10_000_000   # training seed ranges stay below this
HELDOUT_N = 500
DEFAULT_TRAIN_N = 1500
DEFAULT_EPOCHS = 10
DEFAULT_LR = 0.01
DEFAULT_PAIR = ("079.12", "100.00")

TRIAL_HEADER = ("method,trial,success,l_full,l_crop,mse_full,time_s,"
                "h1_queries,h2_queries,gradient_calls")
SUMMARY_HEADER = "method,success_rate,mean_l_full,mean_l_crop,mean_mse,mean_time_s"


@dataclass(frozen=True)
class ExperimentConfig:
    n_trials: int = 20
    root_seed: int = 0
    attack: AttackConfig = field(default_factory=AttackConfig)
    methods: tuple = METHOD_ORDER
    target_mode: str = "swap"          # "swap" or "random"
    pair: tuple = DEFAULT_PAIR
    out_dir: str = "out"
    params_path: str | None = None     # load if present, else train and save here

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigInvalid("n_trials must be >= 1")
        if not self.methods:
            raise ConfigInvalid("methods must be non-empty")
        for m in self.methods:
            if m not in METHOD_ORDER:
                raise ConfigInvalid(f"unknown method {m!r}")
        if self.target_mode not in ("swap", "random"):
            raise ConfigInvalid(f"unknown target mode {self.target_mode!r}")
        for s in self.pair:
            nn.label_to_indices(s)
        if self.pair[0] == self.pair[1]:
            raise ConfigInvalid("pair must contain two distinct amounts")


@dataclass
class TrialRow:
    method: str
    trial: int
    outcome: AttackOutcome


@dataclass
class ExperimentResult:
    rows: list
    summaries: dict
    skipped: list
    trials_csv: str
    summary_csv: str


def train_recognizer(seed=0, epochs=DEFAULT_EPOCHS, lr=DEFAULT_LR,
                     n_train=DEFAULT_TRAIN_N, loss_history=None) -> nn.NetworkParams:
    train_set = glyphs.make_training_set(n_train, seed)
    return glyphs.train(train_set, epochs, lr, seed, loss_history=loss_history)


def heldout_accuracy(params: nn.NetworkParams) -> float:
    """Full-string accuracy on the fixed held-out sample range."""
    heldout = glyphs.make_training_set(HELDOUT_N, HELDOUT_SEED)
    return glyphs.full_string_accuracy(params, heldout)


def check_gate(params: nn.NetworkParams) -> float:
    acc = heldout_accuracy(params)
    if acc < GATE_ACCURACY:
        raise GateFailed(f"held-out accuracy {acc:.4f} < {GATE_ACCURACY}")
    return acc


def trial_targets(cfg: ExperimentConfig, trial: int) -> tuple[str, str]:
    """(true label, attack target) for one trial under the target policy."""
    if cfg.target_mode == "swap":
        a, b = cfg.pair
        return (a, b) if trial % 2 == 0 else (b, a)
    rng = np.random.default_rng(cfg.root_seed * 1_000_003 + trial)
    alphabet = nn.ALPHABET
    label = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), nn.N_CELLS))
    while True:
        target = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), nn.N_CELLS))
        if target != label:
            return label, target


def _attack_once(method: str, params, doc, sample_region, y_target, cfg: AttackConfig):
    handle = PipelineHandle(params)
    if method == "baseline":
        return attacks.baseline_reinsert_attack(handle, doc, y_target, cfg)
    if method == "eot":
        return attacks.eot_crop_robust_attack(handle, doc, y_target, cfg)
    if method == "kos":
        return attacks.kos_attack(handle, doc, y_target, cfg)
    if method == "hsj":
        init = reinsert(doc, sample_region, glyphs.canonical_crop(y_target))
        return attacks.hop_skip_jump(handle, doc, y_target, init, cfg)
    raise ConfigInvalid(f"unknown method {method!r}")


def emit_report(rows) -> str:
    """Per-trial CSV text; floats carry six decimals, lines end in newline."""
    lines = [TRIAL_HEADER]
    for r in rows:
        o = r.outcome
        lines.append(
            f"{r.method},{r.trial},{int(o.success)},{o.metrics.l_full},"
            f"{o.metrics.l_crop},{o.metrics.mse_full:.6f},{o.elapsed_seconds:.6f},"
            f"{o.h1_queries},{o.h2_queries},{o.gradient_calls}"
        )
    return "\n".join(lines) + "\n"


def emit_summary(summaries: dict) -> str:
    lines = [SUMMARY_HEADER]
    for method, s in summaries.items():
        lines.append(
            f"{method},{s.success_rate:.6f},{s.mean_l_full:.6f},"
            f"{s.mean_l_crop:.6f},{s.mean_mse:.6f},{s.mean_time_s:.6f}"
        )
    return "\n".join(lines) + "\n"


def _write_text(path, text):
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def load_or_train_params(params_path, out_dir, log=print) -> nn.NetworkParams:
    if params_path and os.path.exists(params_path):
        log(f"loading recognizer params from {params_path}")
        return nn.load_params(params_path)
    log(f"training recognizer ({DEFAULT_TRAIN_N} samples, {DEFAULT_EPOCHS} epochs)")
    params = train_recognizer()
    dest = params_path or os.path.join(out_dir, "params.kosn")
    try:
        nn.save_params(params, dest)
    except OSError as exc:
        raise IOFailure(f"cannot write {dest}: {exc}") from exc
    log(f"saved recognizer params to {dest}")
    return params


def run_experiment(cfg: ExperimentConfig, log=print) -> ExperimentResult:
    """Render trials, attack each with every selected method, write reports."""
    img_dir = os.path.join(cfg.out_dir, "images")
    try:
        os.makedirs(img_dir, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create {cfg.out_dir}: {exc}") from exc

    params = load_or_train_params(cfg.params_path, cfg.out_dir, log=log)
    acc = check_gate(params)
    log(f"recognizer gate: held-out accuracy {acc:.4f} (>= {GATE_ACCURACY})")

    methods = [m for m in METHOD_ORDER if m in cfg.methods]
    rows, skipped = [], []
    for trial in range(cfg.n_trials):
        label, target = trial_targets(cfg, trial)
        sample = glyphs.render_document(label, cfg.root_seed + trial)
        doc = sample.full_image
        verify = PipelineHandle(params)
        clean_pred, clean_region = verify.run_pipeline(doc)
        if clean_pred != label:
            skipped.append(trial)
            log(f"trial {trial}: clean pipeline read {clean_pred!r} != {label!r}, skipping")
            continue
        pgm.write_pgm(doc, os.path.join(img_dir, f"trial{trial:03d}_original_doc.pgm"))
        pgm.write_pgm(crop(doc, clean_region),
                      os.path.join(img_dir, f"trial{trial:03d}_original_crop.pgm"))
        for method in methods:
            acfg = dataclasses.replace(cfg.attack, seed=cfg.attack.seed + 1_000_003 * trial)
            outcome = _attack_once(method, params, doc, clean_region, target, acfg)
            rows.append(TrialRow(method=method, trial=trial, outcome=outcome))
            adv = outcome.adversarial_doc
            pgm.write_pgm(adv, os.path.join(img_dir, f"trial{trial:03d}_{method}_adv_doc.pgm"))
            t, l = glyphs.ink_anchor(adv)
            pgm.write_pgm(adv[t:t + nn.WINDOW_H, l:l + nn.WINDOW_W],
                          os.path.join(img_dir, f"trial{trial:03d}_{method}_adv_crop.pgm"))
            log(f"trial {trial} {method}: success={outcome.success} "
                f"l_full={outcome.metrics.l_full} mse={outcome.metrics.mse_full:.6f} "
                f"time={outcome.elapsed_seconds:.2f}s")

    summaries = {}
    for method in methods:
        outs = [r.outcome for r in rows if r.method == method]
        if outs:
            summaries[method] = metrics.aggregate(outs)

    trials_csv = os.path.join(cfg.out_dir, "trials.csv")
    summary_csv = os.path.join(cfg.out_dir, "summary.csv")
    _write_text(trials_csv, emit_report(rows))
    _write_text(summary_csv, emit_summary(summaries))
    return ExperimentResult(rows=rows, summaries=summaries, skipped=skipped,
                            trials_csv=trials_csv, summary_csv=summary_csv)


def _silent(*_args, **_kw):
    pass


def quiet_log():
    return _silent


def print_summaries(summaries: dict, stream=sys.stdout):
    stream.write(SUMMARY_HEADER.replace(",", "  ") + "\n")
    for method, s in summaries.items():
        stream.write(f"{method:10s} {s.success_rate:12.3f} {s.mean_l_full:12.3f} "
                     f"{s.mean_l_crop:12.3f} {s.mean_mse:12.6f} {s.mean_time_s:12.2f}\n")
