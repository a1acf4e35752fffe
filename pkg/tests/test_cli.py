import json
from pathlib import Path

import pytest
import yaml

from fedcast.cli import main
from fedcast.dataio import load_csv


def write_config(tmp_path, setting="federated", **overrides):
    raw = {
        "name": "cli-check",
        "setting": setting,
        "output_dir": str(tmp_path / "out"),
        "seeds": [0],
        "data": {
            "synthetic": {
                "seed": 0,
                "clients": [
                    {"client_id": "bs000", "days": 1, "noise_scale": 0.04},
                    {"client_id": "bs001", "days": 1, "base_level": 1.4,
                     "phase": 1.2, "noise_scale": 0.04},
                ],
            }
        },
        "preprocessing": {"window_size": 6},
        "model": {"architecture": "mlp", "window_size": 6, "hidden_sizes": [16]},
        "training": {"max_epochs": 2, "patience": 2},
    }
    if setting == "federated":
        raw["federation"] = {"rounds": 2, "local_epochs": 1}
        raw["aggregator"] = {"strategy": "fedavg"}
    raw.update(overrides)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_generate_writes_loadable_traces(tmp_path, capsys):
    config = write_config(tmp_path)
    data_dir = tmp_path / "data"
    assert main(["generate", "--config", str(config), "--out-dir", str(data_dir)]) == 0
    out = capsys.readouterr().out
    assert "bs000.csv" in out and "bs001.csv" in out
    ds = load_csv(data_dir / "bs000.csv")
    assert ds.client_id == "bs000"
    assert len(ds.values) == 720


def test_generate_requires_synthetic_data(tmp_path, capsys):
    config = write_config(
        tmp_path, setting="centralized",
        data={"paths": [str(tmp_path / "missing.csv")]},
    )
    assert main(["generate", "--config", str(config), "--out-dir",
                 str(tmp_path / "d")]) == 2
    assert "error:" in capsys.readouterr().err


def test_run_executes_experiment(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["run", "--config", str(config)]) == 0
    out = capsys.readouterr().out
    assert "'cli-check' (federated): 1 runs" in out
    assert "avg_nrmse=" in out
    out_dir = tmp_path / "out"
    assert (out_dir / "summary.json").exists()
    assert (out_dir / "base" / "seed-0" / "rounds.csv").exists()


def test_run_overrides_output_dir_and_seeds(tmp_path):
    config = write_config(tmp_path)
    other = tmp_path / "elsewhere"
    assert main(["run", "--config", str(config), "--output-dir", str(other),
                 "--seeds", "3,4"]) == 0
    assert (other / "base" / "seed-3" / "metrics.json").exists()
    assert (other / "base" / "seed-4" / "metrics.json").exists()
    assert not (tmp_path / "out").exists()


def test_run_rejects_bad_seed_override(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["run", "--config", str(config), "--seeds", "a,b"]) == 2
    assert main(["run", "--config", str(config), "--seeds", ","]) == 2
    assert "--seeds" in capsys.readouterr().err


def test_run_rejects_invalid_config(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"name": "x", "setting": "bogus"}))
    assert main(["run", "--config", str(path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_run_missing_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == 2
    assert "error:" in capsys.readouterr().err


def test_full_chain_generate_run_report(tmp_path, capsys):
    # generate traces, rerun the same experiment from CSV paths, report
    gen_config = write_config(tmp_path)
    data_dir = tmp_path / "data"
    assert main(["generate", "--config", str(gen_config),
                 "--out-dir", str(data_dir)]) == 0

    raw = yaml.safe_load(gen_config.read_text())
    raw["data"] = {"paths": [str(data_dir / "bs000.csv"),
                             str(data_dir / "bs001.csv")]}
    raw["output_dir"] = str(tmp_path / "from-csv")
    csv_config = tmp_path / "from-csv.yaml"
    csv_config.write_text(yaml.safe_dump(raw))
    assert main(["run", "--config", str(csv_config)]) == 0

    plot = tmp_path / "plot.csv"
    assert main(["report", "--runs", str(tmp_path / "from-csv"),
                 "--out", str(plot)]) == 0
    assert "rows)" in capsys.readouterr().out
    header = plot.read_text().split("\n", 1)[0]
    assert header == "experiment,cell,seed,round,metric,value"

    # the CSV round trip preserves the synthetic traces exactly, so both
    # paths must produce identical metrics
    direct = json.loads(
        (tmp_path / "from-csv" / "base" / "seed-0" / "metrics.json").read_text()
    )
    assert main(["run", "--config", str(gen_config)]) == 0
    synthetic = json.loads(
        (tmp_path / "out" / "base" / "seed-0" / "metrics.json").read_text()
    )
    assert direct["avg_nrmse"] == synthetic["avg_nrmse"]


def test_report_rejects_unfinished_dir(tmp_path, capsys):
    assert main(["report", "--runs", str(tmp_path), "--out",
                 str(tmp_path / "p.csv")]) == 2
    assert "summary.json" in capsys.readouterr().err


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
