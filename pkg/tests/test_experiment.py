import json

import numpy as np
import pytest

from cfgnn import cli, dataset, gnn
from cfgnn.config import parse_config
from cfgnn.errors import CheckpointError, ConfigError, InvalidArgumentError
from cfgnn.experiment import (
    Experiment,
    MetricsRecord,
    export_csv,
    load_records,
    run_experiment,
    save_records,
)


def baseline_config(out, **eval_section):
    section = {"methods": ["cb", "zf"], "snr_sweep_db": [0, 10, 20]}
    section.update(eval_section)
    return parse_config({
        "scenario": {"users": 2, "aps": 8},
        "dataset": {"synthetic": {"count": 200}},
        "eval": section,
        "output": str(out),
    })


def measured_config(tmp_path, positions=30, users=2, **extra):
    rng = np.random.default_rng(3)
    ms = dataset.simulate_measurements(positions, 4, dataset.SyntheticSpec(), rng)
    csv_path = tmp_path / "meas.csv"
    dataset.write_measurements(ms, csv_path)
    doc = {
        "scenario": {"users": users, "aps": 4},
        "dataset": {"synthetic": {"count": 120}, "target": {"measured": {"path": str(csv_path)}}},
        "model": {"hidden_width": 6},
        "train": {"epochs": 1, "batch_size": 32},
        "finetune": {"epochs": 1, "batch_size": 32},
        "eval": {"snr_sweep_db": [0, 10]},
        "output": str(tmp_path / "run"),
    }
    doc.update(extra)
    return parse_config(doc)


def test_baselines_record_grid(tmp_path):
    records = run_experiment(baseline_config(tmp_path))
    assert len(records) == 6
    assert {(r.method, r.snr_db) for r in records} == {
        (m, s) for m in ("cb", "zf") for s in (0.0, 10.0, 20.0)}
    assert all(r.count == 20 for r in records)
    rate = {(r.method, r.snr_db): r.mean_sum_rate for r in records}
    assert rate["zf", 20.0] >= rate["cb", 20.0]
    zf = [rate["zf", s] for s in (0.0, 10.0, 20.0)]
    assert zf == sorted(zf)
    assert all(np.isfinite(r.std) and r.std >= 0 for r in records)


def test_identity_channels_give_two_bits(tmp_path):
    # unitary pairs from e0, e1, -e1; the (e1, -e1) pair is singular and skipped by ZF
    ms = dataset.MeasurementSet(np.array([[1, 0], [0, 1], [0, -1]], dtype=complex))
    path = tmp_path / "id.csv"
    dataset.write_measurements(ms, path)
    cfg = parse_config({
        "scenario": {"users": 2, "aps": 2},
        "dataset": {"target": {"measured": {"path": str(path)}},
                    "fractions": [0.34, 0.0, 0.66]},
        "train": {"total_power": 2.0},
        "eval": {"methods": ["zf"], "snr_sweep_db": [0]},
    })
    exp = Experiment(cfg, tmp_path / "run")
    (rec,) = exp.evaluate("target")
    assert rec.count + rec.skipped == 2
    assert rec.count >= 1
    assert abs(rec.mean_sum_rate - 2.0) <= 1e-12


def test_export_csv_layout_and_stability(tmp_path):
    records = run_experiment(baseline_config(tmp_path))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    export_csv(records, a)
    export_csv(list(reversed(records)), b)
    lines = a.read_text().splitlines()
    assert len(lines) == 7
    assert lines[0] == "method,freeze,snr_db,mean_sum_rate,std,count"
    assert [l.split(",")[0] for l in lines[1:]] == ["cb"] * 3 + ["zf"] * 3
    assert a.read_bytes() == b.read_bytes()
    with pytest.raises(InvalidArgumentError):
        export_csv([], tmp_path / "empty.csv")


def test_records_round_trip(tmp_path):
    records = [MetricsRecord("gnn_finetuned", 10.0, 3.25, 0.5, 40, freeze=4)]
    save_records(records, tmp_path / "r.json")
    assert load_records(tmp_path / "r.json") == records


def test_run_writes_manifest(tmp_path):
    run_experiment(baseline_config(tmp_path))
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 0
    assert manifest["files"] == {"source": "metrics_source.csv"}
    assert manifest["zf_skipped"] == {"source": 0}
    assert len(manifest["config_sha256"]) == 64


def test_freeze_sweep_covers_every_level(tmp_path):
    cfg = measured_config(tmp_path)
    exp = Experiment(cfg)
    records = exp.freeze_sweep(list(range(9)))
    assert sorted({r.freeze for r in records}) == list(range(9))
    assert len(records) == 9 * 2
    for l in range(9):
        assert (exp.out / f"finetuned_freeze{l}.json").exists()
    pre = exp.pretrained()
    full = exp.finetuned(8)
    for a, b in zip(pre.layers, full.layers):
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, y)


def test_measured_four_user_samples(tmp_path):
    cfg = measured_config(tmp_path, positions=12, users=4,
                          eval={"methods": ["cb"], "snr_sweep_db": [10]})
    exp = Experiment(cfg)
    ms, samples = exp.measured_samples(exp.measurements())
    assert samples.samples.shape == (66, 4)
    assert len({tuple(s) for s in samples.samples}) == 66


def test_checkpoints_are_reused(tmp_path):
    cfg = measured_config(tmp_path)
    first = Experiment(cfg).pretrained()
    again = Experiment(cfg).pretrained()
    for a, b in zip(first.layers, again.layers):
        assert np.array_equal(a.edge, b.edge)


def test_checkpoint_architecture_mismatch(tmp_path):
    cfg = measured_config(tmp_path)
    out = tmp_path / "run"
    out.mkdir()
    other = gnn.init_params(5, np.random.default_rng(0))
    gnn.save_checkpoint(other, out / "pretrained.json")
    with pytest.raises(CheckpointError):
        Experiment(cfg).pretrained()
    # retraining overwrites the stale checkpoint
    params = Experiment(cfg, retrain=True).pretrained()
    assert params.hidden_width == 6


def test_stage_without_target_is_a_config_error(tmp_path):
    exp = Experiment(baseline_config(tmp_path))
    with pytest.raises(ConfigError):
        exp.target()


def test_measurement_ap_count_must_match(tmp_path):
    cfg = measured_config(tmp_path, scenario={"users": 2, "aps": 5})
    with pytest.raises(ConfigError):
        Experiment(cfg).measurements()


@pytest.fixture
def cli_config(tmp_path):
    rng = np.random.default_rng(5)
    ms = dataset.simulate_measurements(16, 4, dataset.SyntheticSpec(), rng)
    dataset.write_measurements(ms, tmp_path / "meas.csv")
    path = tmp_path / "run.yaml"
    path.write_text(f"""\
scenario: {{users: 2, aps: 4}}
dataset:
  synthetic: {{count: 100}}
  target:
    measured: {{path: {tmp_path / 'meas.csv'}}}
model: {{hidden_width: 4}}
train: {{epochs: 1, batch_size: 32}}
finetune: {{epochs: 1, batch_size: 32, freeze: 2}}
eval: {{snr_sweep_db: [0, 10]}}
output: {tmp_path / 'out'}
""")
    return path


def test_cli_stages(cli_config, tmp_path, capsys):
    out = tmp_path / "out"
    base = ["--config", str(cli_config)]
    assert cli.main(["gen-synth", *base]) == 0
    assert dataset.load_channels(out / "source_channels.npz").shape == (100, 2, 4)
    assert cli.main(["ingest", *base]) == 0
    assert (out / "measurements.csv").exists()
    assert cli.main(["pairs", *base]) == 0
    assert "120 samples" in capsys.readouterr().out
    assert cli.main(["pretrain", *base]) == 0
    assert cli.main(["finetune", *base]) == 0
    assert (out / "finetuned_freeze2.json").exists()
    assert cli.main(["freeze-sweep", *base, "--levels", "0", "8"]) == 0
    assert (out / "freeze_sweep.csv").read_text().count("gnn_finetuned") == 4
    assert cli.main(["eval", *base]) == 0
    metrics = (out / "metrics_target.csv").read_text()
    for method in ("cb", "zf", "gnn_pretrained", "gnn_finetuned", "gnn_scratch"):
        assert method in metrics
    dest = tmp_path / "copy.csv"
    assert cli.main(["export", *base, "--csv", str(dest)]) == 0
    assert dest.read_bytes() == (out / "metrics_target.csv").read_bytes()


def test_cli_reports_errors(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("scenario: {users: 2, aps: 4}\ndataset: {}\ntrain: {learning_rate: -1}\n")
    assert cli.main(["eval", "--config", str(path)]) == 2
    assert "train.learning_rate" in capsys.readouterr().err


def test_cli_seed_override_changes_output(cli_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["gen-synth", "--config", str(cli_config), "--out", str(a)])
    cli.main(["gen-synth", "--config", str(cli_config), "--out", str(b), "--seed", "9"])
    assert not np.array_equal(dataset.load_channels(a / "source_channels.npz"),
                              dataset.load_channels(b / "source_channels.npz"))
