import csv
import dataclasses
import io
import os

import numpy as np
import pytest

from advpipe import cli, harness, metrics, nn
from advpipe.attacks import AttackConfig, AttackOutcome
from advpipe.errors import ConfigInvalid
from advpipe.harness import ExperimentConfig, TrialRow, emit_report, emit_summary
from advpipe.metrics import MetricBundle


def _outcome(success=True, l_full=0, l_crop=0, mse=0.001, t=1.5, h1=2, h2=1, g=40):
    return AttackOutcome(
        success=success,
        adversarial_doc=np.zeros((2, 2)),
        final_crop_pred="100.00",
        final_full_pred="100.00" if success else "079.12",
        metrics=MetricBundle(l_full=l_full, l_crop=l_crop, mse_full=mse, elapsed_seconds=t),
        h1_queries=h1, h2_queries=h2, gradient_calls=g, elapsed_seconds=t,
    )


def test_emit_report_header_only():
    text = emit_report([])
    assert text == ("method,trial,success,l_full,l_crop,mse_full,time_s,"
                    "h1_queries,h2_queries,gradient_calls\n")


def test_emit_report_exact_bytes():
    rows = [TrialRow(method="kos", trial=3, outcome=_outcome())]
    text = emit_report(rows)
    assert text.splitlines()[1] == "kos,3,1,0,0,0.001000,1.500000,2,1,40"
    assert text.endswith("\n")


def test_emit_report_roundtrip():
    rows = [TrialRow(method="baseline", trial=0, outcome=_outcome(success=False, l_full=4)),
            TrialRow(method="kos", trial=1, outcome=_outcome())]
    parsed = list(csv.DictReader(io.StringIO(emit_report(rows))))
    assert len(parsed) == 2
    assert parsed[0]["method"] == "baseline"
    assert int(parsed[0]["l_full"]) == 4
    assert float(parsed[1]["mse_full"]) == pytest.approx(0.001)


def test_emit_summary_format():
    s = metrics.aggregate([_outcome(), _outcome(success=False, l_full=4, l_crop=2)])
    text = emit_summary({"kos": s})
    lines = text.splitlines()
    assert lines[0] == "method,success_rate,mean_l_full,mean_l_crop,mean_mse,mean_time_s"
    assert lines[1] == "kos,0.500000,2.000000,1.000000,0.001000,1.500000"


def test_experiment_config_validation():
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(n_trials=0)
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(methods=())
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(methods=("nope",))
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(target_mode="weird")
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(pair=("100.00", "100.00"))


def test_trial_targets_swap():
    cfg = ExperimentConfig()
    assert harness.trial_targets(cfg, 0) == ("079.12", "100.00")
    assert harness.trial_targets(cfg, 1) == ("100.00", "079.12")


def test_trial_targets_random_distinct():
    cfg = ExperimentConfig(target_mode="random", root_seed=5)
    seen = set()
    for i in range(20):
        label, target = harness.trial_targets(cfg, i)
        assert label != target
        assert len(label) == 6 and len(target) == 6
        seen.add(label)
    assert len(seen) > 10
    assert harness.trial_targets(cfg, 3) == harness.trial_targets(cfg, 3)


@pytest.fixture(scope="module")
def params_file(tmp_path_factory, trained_params):
    path = tmp_path_factory.mktemp("params") / "params.kosn"
    nn.save_params(trained_params, path)
    return str(path)


def test_run_experiment_single_trial_accounting(tmp_path, params_file):
    cfg = ExperimentConfig(n_trials=1, methods=("baseline",),
                           out_dir=str(tmp_path), params_path=params_file)
    result = harness.run_experiment(cfg, log=lambda *a, **k: None)
    assert len(result.rows) == 1
    assert set(result.summaries) == {"baseline"}
    trials = open(result.trials_csv).read().splitlines()
    assert len(trials) == 2  # header + one row
    summary = open(result.summary_csv).read().splitlines()
    assert len(summary) == 2
    imgs = os.listdir(os.path.join(str(tmp_path), "images"))
    assert "trial000_original_doc.pgm" in imgs
    assert "trial000_baseline_adv_doc.pgm" in imgs
    assert "trial000_baseline_adv_crop.pgm" in imgs


def test_summary_consistent_with_trials(tmp_path, params_file):
    cfg = ExperimentConfig(n_trials=2, methods=("baseline", "kos"),
                           out_dir=str(tmp_path), params_path=params_file)
    result = harness.run_experiment(cfg, log=lambda *a, **k: None)
    rows = list(csv.DictReader(open(result.trials_csv)))
    summaries = list(csv.DictReader(open(result.summary_csv)))
    for srow in summaries:
        mrows = [r for r in rows if r["method"] == srow["method"]]
        assert float(srow["success_rate"]) == pytest.approx(
            np.mean([int(r["success"]) for r in mrows]))
        assert float(srow["mean_l_full"]) == pytest.approx(
            np.mean([int(r["l_full"]) for r in mrows]), abs=1e-6)
        assert float(srow["mean_mse"]) == pytest.approx(
            np.mean([float(r["mse_full"]) for r in mrows]), abs=1e-6)


def strip_time_columns(csv_text):
    # time_s is column 6 in the trial file, mean_time_s column 5 in summary
    out = []
    for line in csv_text.splitlines():
        cells = line.split(",")
        drop = 6 if len(cells) == 10 else 5
        out.append(",".join(c for i, c in enumerate(cells) if i != drop))
    return "\n".join(out)


def test_csv_determinism_modulo_time(tmp_path, params_file):
    texts = []
    for run in ("a", "b"):
        cfg = ExperimentConfig(n_trials=2, root_seed=7, methods=("baseline", "kos"),
                               out_dir=str(tmp_path / run), params_path=params_file)
        result = harness.run_experiment(cfg, log=lambda *a, **k: None)
        texts.append((strip_time_columns(open(result.trials_csv).read()),
                      strip_time_columns(open(result.summary_csv).read())))
    assert texts[0] == texts[1]


def test_cli_config_file(tmp_path, params_file):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(
        f"method=baseline\ntrials=1\nseed=3\nout={tmp_path}/out\nparams={params_file}\n"
        "# comment line\nepsilon=0.25\n")
    rc = cli.main(["attack", "--config", str(cfg_file)])
    assert rc == 0
    assert os.path.exists(tmp_path / "out" / "trials.csv")


def test_cli_flag_overrides_config(tmp_path, params_file):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(f"method=baseline\ntrials=2\nout={tmp_path}/o1\nparams={params_file}\n")
    rc = cli.main(["attack", "--config", str(cfg_file), "--trials", "1",
                   "--out", str(tmp_path / "o2")])
    assert rc == 0
    rows = open(tmp_path / "o2" / "trials.csv").read().splitlines()
    assert len(rows) == 2  # header + 1 trial


def test_cli_bad_config_exit_code(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("trials=zero\n")
    assert cli.main(["attack", "--config", str(cfg_file)]) == 1


def test_cli_missing_config_io_failure(tmp_path):
    assert cli.main(["attack", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_cli_bad_flag_exit_code():
    assert cli.main(["attack", "--method", "bogus"]) == 1


def test_cli_selftest_smoke():
    assert cli.main(["selftest"]) == 0
