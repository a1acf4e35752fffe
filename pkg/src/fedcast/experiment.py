"""Config-driven experiment runner.

A config picks a setting (individual, centralized, federated), a data
source (CSV paths or a synthetic cohort), preprocessing, a model, and, for
the federated setting, federation plus aggregator parameters. run_experiment
executes every (grid cell, seed) pair, writes per-run artifacts (round or
epoch CSVs, checkpoints, metric JSON), a manifest that reruns the experiment
verbatim, and a summary with mean/std across seeds. All emitted bytes are
deterministic: same config, same files.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import yaml

from fedcast import __version__
from fedcast.aggregation import AggregatorConfig, TUNING_GRIDS
from fedcast.dataio import (
    ClientWindows,
    PreprocessConfig,
    TimeSeriesDataset,
    load_csv,
    preprocess_clients,
)
from fedcast.federation import (
    FederationConfig,
    FederationHistory,
    account_communication,
    fine_tune,
    megabytes,
    run_centralized,
    run_federated,
    run_individual,
)
from fedcast.metrics import MetricReport, evaluate_forecasts
from fedcast.nn.models import ModelSpec, predict
from fedcast.nn.params import ParameterVector, serialize_params
from fedcast.nn.training import TrainReport
from fedcast.synthetic import SyntheticClientSpec, SyntheticSpec, generate_synthetic

SETTINGS = ("individual", "centralized", "federated")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field path."""


@dataclass(frozen=True)
class TrainingConfig:
    """Early-stopping budget for the individual and centralized settings."""

    max_epochs: int = 270
    patience: int = 50

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class DataConfig:
    """Exactly one source: CSV paths on disk or a synthetic cohort."""

    paths: tuple[str, ...] = ()
    synthetic: Optional[SyntheticSpec] = None

    def __post_init__(self) -> None:
        if bool(self.paths) == (self.synthetic is not None):
            raise ValueError("provide exactly one of paths / synthetic")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    setting: str
    output_dir: str
    seeds: tuple[int, ...]
    data: DataConfig
    preprocessing: PreprocessConfig
    model: ModelSpec
    training: TrainingConfig = TrainingConfig()
    federation: Optional[FederationConfig] = None
    aggregator: Optional[AggregatorConfig] = None
    grid: Optional[dict[str, tuple]] = None
    fine_tune: bool = False
    fine_tune_epochs: int = 3

    def __post_init__(self) -> None:
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.setting == "federated":
            if self.federation is None or self.aggregator is None:
                raise ValueError(
                    "federated setting requires federation and aggregator sections"
                )
        if self.grid:
            agg_fields = {f.name for f in dataclasses.fields(AggregatorConfig)}
            for key in self.grid:
                if key not in agg_fields or key == "strategy":
                    raise ValueError(f"grid key {key!r} is not a tunable parameter")
            if self.setting != "federated":
                raise ValueError("grid search applies to the federated setting only")
        if self.fine_tune and self.setting == "individual":
            raise ValueError("fine_tune applies to shared-model settings only")
        if self.fine_tune_epochs < 0:
            raise ValueError("fine_tune_epochs must be >= 0")


def _build(cls, payload: Mapping, path: str, casts: Optional[dict] = None):
    """Construct a dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(payload, Mapping):
        raise ConfigError(f"{path}: expected a mapping, got {type(payload).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = dict(payload)
    for key, cast in (casts or {}).items():
        if key in kwargs:
            try:
                kwargs[key] = cast(kwargs[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}.{key}: {exc}") from exc
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(raw: Mapping) -> ExperimentConfig:
    """Parse and validate a config mapping (see config_to_dict for layout)."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config root must be a mapping")
    if "config" in raw and set(raw) <= {"config", "package_version", "format"}:
        # A manifest wraps the config it ran; accept it verbatim.
        raw = raw["config"]
    top_known = {
        "name", "setting", "output_dir", "seeds", "data", "preprocessing",
        "model", "training", "federation", "aggregator", "grid",
        "fine_tune", "fine_tune_epochs",
    }
    unknown = sorted(set(raw) - top_known)
    if unknown:
        raise ConfigError(f"config: unknown keys {unknown}")
    for key in ("name", "setting", "output_dir", "seeds", "data", "model"):
        if key not in raw:
            raise ConfigError(f"config.{key}: required")

    seeds = raw["seeds"]
    if not isinstance(seeds, (list, tuple)) or not all(
        isinstance(s, int) for s in seeds
    ):
        raise ConfigError("config.seeds: must be a list of integers")

    data_raw = raw["data"]
    if not isinstance(data_raw, Mapping):
        raise ConfigError("config.data: expected a mapping")
    synthetic = None
    paths: tuple[str, ...] = ()
    if "synthetic" in data_raw and "paths" in data_raw:
        raise ConfigError("config.data: provide exactly one of paths / synthetic")
    if "synthetic" in data_raw:
        syn_raw = dict(data_raw["synthetic"])
        clients_raw = syn_raw.pop("clients", None)
        if not isinstance(clients_raw, list) or not clients_raw:
            raise ConfigError("config.data.synthetic.clients: non-empty list required")
        clients = tuple(
            _build(SyntheticClientSpec, c, f"config.data.synthetic.clients[{i}]")
            for i, c in enumerate(clients_raw)
        )
        synthetic = _build(
            SyntheticSpec,
            {**syn_raw, "clients": clients},
            "config.data.synthetic",
        )
    elif "paths" in data_raw:
        paths_raw = data_raw["paths"]
        if not isinstance(paths_raw, list) or not paths_raw:
            raise ConfigError("config.data.paths: non-empty list required")
        paths = tuple(str(p) for p in paths_raw)
    else:
        raise ConfigError("config.data: provide exactly one of paths / synthetic")
    data = _build(DataConfig, {"paths": paths, "synthetic": synthetic}, "config.data")

    preprocessing = _build(
        PreprocessConfig,
        raw.get("preprocessing", {}),
        "config.preprocessing",
        casts={
            "per_client_percentiles": lambda m: {
                k: tuple(v) for k, v in dict(m).items()
            },
        },
    )
    model = _build(
        ModelSpec,
        raw["model"],
        "config.model",
        casts={"hidden_sizes": tuple, "conv_filters": tuple},
    )
    training = _build(TrainingConfig, raw.get("training", {}), "config.training")
    federation = (
        _build(FederationConfig, raw["federation"], "config.federation")
        if "federation" in raw
        else None
    )
    aggregator = None
    if "aggregator" in raw:
        agg_raw = dict(raw["aggregator"])
        strategy = agg_raw.pop("strategy", None)
        if strategy is None:
            raise ConfigError("config.aggregator.strategy: required")
        try:
            aggregator = AggregatorConfig.for_strategy(strategy, **agg_raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.aggregator: {exc}") from exc

    grid = None
    if raw.get("grid"):
        grid_raw = raw["grid"]
        if not isinstance(grid_raw, Mapping):
            raise ConfigError("config.grid: expected a mapping of lists")
        grid = {}
        for key, vals in grid_raw.items():
            if not isinstance(vals, (list, tuple)) or not vals:
                raise ConfigError(f"config.grid.{key}: non-empty list required")
            grid[key] = tuple(vals)

    return _build(
        ExperimentConfig,
        {
            "name": raw["name"],
            "setting": raw["setting"],
            "output_dir": raw["output_dir"],
            "seeds": tuple(seeds),
            "data": data,
            "preprocessing": preprocessing,
            "model": model,
            "training": training,
            "federation": federation,
            "aggregator": aggregator,
            "grid": grid,
            "fine_tune": raw.get("fine_tune", False),
            "fine_tune_epochs": raw.get("fine_tune_epochs", 3),
        },
        "config",
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    """Plain-type mapping; config_from_dict(config_to_dict(c)) == c."""
    out: dict = {
        "name": config.name,
        "setting": config.setting,
        "output_dir": config.output_dir,
        "seeds": list(config.seeds),
        "model": _dataclass_dict(config.model),
        "preprocessing": _dataclass_dict(config.preprocessing),
        "training": _dataclass_dict(config.training),
        "fine_tune": config.fine_tune,
        "fine_tune_epochs": config.fine_tune_epochs,
    }
    if config.data.synthetic is not None:
        syn = _dataclass_dict(config.data.synthetic)
        syn["clients"] = [_dataclass_dict(c) for c in config.data.synthetic.clients]
        out["data"] = {"synthetic": syn}
    else:
        out["data"] = {"paths": list(config.data.paths)}
    if config.federation is not None:
        out["federation"] = _dataclass_dict(config.federation)
    if config.aggregator is not None:
        out["aggregator"] = _dataclass_dict(config.aggregator)
    if config.grid:
        out["grid"] = {k: list(v) for k, v in config.grid.items()}
    return out


def _dataclass_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = list(value)
        elif isinstance(value, Mapping):
            value = {k: list(v) if isinstance(v, tuple) else v
                     for k, v in value.items()}
        out[f.name] = value
    return out


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a YAML (or JSON: YAML superset) config or manifest file."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raise ConfigError(f"{path}: empty config")
    return config_from_dict(raw)


def materialize_data(config: ExperimentConfig) -> list[TimeSeriesDataset]:
    if config.data.synthetic is not None:
        return generate_synthetic(config.data.synthetic)
    return [load_csv(p) for p in config.data.paths]


@dataclass(frozen=True)
class RunResult:
    cell: str
    seed: int
    avg_nrmse: float
    avg_mae: float
    avg_rmse: float
    best_index: Optional[int]
    server_total_mb: Optional[float]
    per_client: dict[str, MetricReport]
    fine_tuned: dict[str, MetricReport]


@dataclass(frozen=True)
class ExperimentSummary:
    name: str
    setting: str
    cells: tuple[str, ...]
    runs: tuple[RunResult, ...]
    output_dir: str


def _grid_cells(config: ExperimentConfig) -> list[tuple[str, dict]]:
    if not config.grid:
        return [("base", {})]
    keys = sorted(config.grid)
    cells = []
    for combo in itertools.product(*(config.grid[k] for k in keys)):
        assignment = dict(zip(keys, combo))
        label = "_".join(f"{k}={assignment[k]:g}" for k in keys)
        cells.append((label, assignment))
    return cells


def default_grid(strategy: str) -> dict[str, tuple]:
    """The reference tuning grid for one aggregation strategy."""
    return {k: tuple(v) for k, v in TUNING_GRIDS[strategy].items()}


def _client_mean(reports: Mapping[str, MetricReport], attr: str) -> float:
    return float(np.mean([getattr(r, attr) for r in reports.values()]))


def _score_params(
    spec: ModelSpec, params: ParameterVector, clients: Sequence[ClientWindows]
) -> dict[str, MetricReport]:
    out = {}
    for cw in clients:
        pred = predict(spec, params, cw.test.inputs)
        out[cw.client_id] = evaluate_forecasts(pred, cw.test.targets, cw.scaler)
    return out


def _write_rounds_csv(path: Path, history: FederationHistory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["round", "client", "sampled", "train_loss", "val_mse", "val_mae",
             "local_steps", "n_samples", "uplink_bytes", "downlink_bytes",
             "agg_val_mse", "agg_val_mae"]
        )
        for record in history.rounds:
            for cid in history.client_ids:
                st = record.client_stats[cid]
                writer.writerow([
                    record.round,
                    cid,
                    int(cid in record.sampled),
                    _fmt(st.train_loss),
                    _fmt(st.val_mse),
                    _fmt(st.val_mae),
                    st.local_steps,
                    st.n_samples,
                    st.uplink_bytes,
                    st.downlink_bytes,
                    _fmt(record.agg_val_mse),
                    _fmt(record.agg_val_mae),
                ])


def _write_epochs_csv(path: Path, reports: Mapping[str, TrainReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client", "epoch", "train_loss", "val_mse", "val_mae"])
        for cid in sorted(reports):
            report = reports[cid]
            for e, loss in enumerate(report.train_losses):
                writer.writerow([
                    cid,
                    e,
                    _fmt(loss),
                    _fmt(report.val_losses[e]),
                    _fmt(report.val_maes[e]),
                ])


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def _json_dump(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_experiment(
    config: ExperimentConfig, output_dir: Optional[str] = None
) -> ExperimentSummary:
    """Execute every (grid cell, seed) run and write all artifacts."""
    out_root = Path(output_dir if output_dir is not None else config.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    datasets = materialize_data(config)
    clients = preprocess_clients(datasets, config.preprocessing)
    spec = config.model

    cells = _grid_cells(config)
    runs: list[RunResult] = []
    for cell_label, assignment in cells:
        aggregator = config.aggregator
        if aggregator is not None and assignment:
            aggregator = dataclasses.replace(aggregator, **assignment)
        for seed in config.seeds:
            run_dir = out_root / cell_label / f"seed-{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            if config.setting == "federated":
                result = _run_federated_once(
                    config, spec, clients, aggregator, seed, run_dir, cell_label
                )
            elif config.setting == "centralized":
                result = _run_centralized_once(
                    config, spec, clients, seed, run_dir, cell_label
                )
            else:
                result = _run_individual_once(
                    config, spec, clients, seed, run_dir, cell_label
                )
            runs.append(result)

    summary = ExperimentSummary(
        name=config.name,
        setting=config.setting,
        cells=tuple(label for label, _ in cells),
        runs=tuple(runs),
        output_dir=str(out_root),
    )
    _json_dump(out_root / "summary.json", _summary_payload(summary))
    _json_dump(
        out_root / "manifest.json",
        {
            "format": 1,
            "package_version": __version__,
            "config": config_to_dict(config),
        },
    )
    return summary


def _run_federated_once(
    config, spec, clients, aggregator, seed, run_dir: Path, cell: str
) -> RunResult:
    federation = dataclasses.replace(config.federation, seed=seed)
    history = run_federated(spec, clients, federation, aggregator)
    _write_rounds_csv(run_dir / "rounds.csv", history)
    chosen = history.best_global
    with open(run_dir / "checkpoint.bin", "wb") as fh:
        fh.write(serialize_params(chosen))
    per_client = _score_params(spec, chosen, clients)
    fine_tuned: dict[str, MetricReport] = {}
    if config.fine_tune:
        for cw in clients:
            tuned = fine_tune(spec, chosen, cw, config.fine_tune_epochs, seed)
            pred = predict(spec, tuned, cw.test.inputs)
            fine_tuned[cw.client_id] = evaluate_forecasts(
                pred, cw.test.targets, cw.scaler
            )
    ledger = account_communication(history)
    result = RunResult(
        cell=cell,
        seed=seed,
        avg_nrmse=_client_mean(per_client, "avg_nrmse"),
        avg_mae=_client_mean(per_client, "avg_mae"),
        avg_rmse=_client_mean(per_client, "avg_rmse"),
        best_index=history.best_round,
        server_total_mb=megabytes(ledger.server_total_bytes),
        per_client=per_client,
        fine_tuned=fine_tuned,
    )
    _json_dump(run_dir / "metrics.json", _run_payload(result))
    return result


def _run_centralized_once(
    config, spec, clients, seed, run_dir: Path, cell: str
) -> RunResult:
    report = run_centralized(
        spec, clients, config.training.max_epochs, config.training.patience, seed
    )
    _write_epochs_csv(run_dir / "epochs.csv", {"pooled": report})
    with open(run_dir / "checkpoint.bin", "wb") as fh:
        fh.write(serialize_params(report.params))
    per_client = _score_params(spec, report.params, clients)
    fine_tuned: dict[str, MetricReport] = {}
    if config.fine_tune:
        for cw in clients:
            tuned = fine_tune(spec, report.params, cw, config.fine_tune_epochs, seed)
            pred = predict(spec, tuned, cw.test.inputs)
            fine_tuned[cw.client_id] = evaluate_forecasts(
                pred, cw.test.targets, cw.scaler
            )
    result = RunResult(
        cell=cell,
        seed=seed,
        avg_nrmse=_client_mean(per_client, "avg_nrmse"),
        avg_mae=_client_mean(per_client, "avg_mae"),
        avg_rmse=_client_mean(per_client, "avg_rmse"),
        best_index=report.best_epoch,
        server_total_mb=None,
        per_client=per_client,
        fine_tuned=fine_tuned,
    )
    _json_dump(run_dir / "metrics.json", _run_payload(result))
    return result


def _run_individual_once(
    config, spec, clients, seed, run_dir: Path, cell: str
) -> RunResult:
    reports: dict[str, TrainReport] = {}
    per_client: dict[str, MetricReport] = {}
    for cw in clients:
        report = run_individual(
            spec, cw, config.training.max_epochs, config.training.patience, seed
        )
        reports[cw.client_id] = report
        pred = predict(spec, report.params, cw.test.inputs)
        per_client[cw.client_id] = evaluate_forecasts(
            pred, cw.test.targets, cw.scaler
        )
        with open(run_dir / f"checkpoint-{cw.client_id}.bin", "wb") as fh:
            fh.write(serialize_params(report.params))
    _write_epochs_csv(run_dir / "epochs.csv", reports)
    result = RunResult(
        cell=cell,
        seed=seed,
        avg_nrmse=_client_mean(per_client, "avg_nrmse"),
        avg_mae=_client_mean(per_client, "avg_mae"),
        avg_rmse=_client_mean(per_client, "avg_rmse"),
        best_index=None,
        server_total_mb=None,
        per_client=per_client,
        fine_tuned={},
    )
    _json_dump(run_dir / "metrics.json", _run_payload(result))
    return result


def _run_payload(result: RunResult) -> dict:
    return {
        "cell": result.cell,
        "seed": result.seed,
        "avg_nrmse": result.avg_nrmse,
        "avg_mae": result.avg_mae,
        "avg_rmse": result.avg_rmse,
        "best_index": result.best_index,
        "server_total_mb": result.server_total_mb,
        "per_client": {k: v.to_dict() for k, v in sorted(result.per_client.items())},
        "fine_tuned": {k: v.to_dict() for k, v in sorted(result.fine_tuned.items())},
    }


def _summary_payload(summary: ExperimentSummary) -> dict:
    cells = []
    for cell in summary.cells:
        cell_runs = [r for r in summary.runs if r.cell == cell]
        nrmses = [r.avg_nrmse for r in cell_runs]
        maes = [r.avg_mae for r in cell_runs]
        rmses = [r.avg_rmse for r in cell_runs]
        cells.append(
            {
                "cell": cell,
                "runs": [_run_payload(r) for r in cell_runs],
                "mean_avg_nrmse": float(np.mean(nrmses)),
                "std_avg_nrmse": float(np.std(nrmses)),
                "mean_avg_mae": float(np.mean(maes)),
                "std_avg_mae": float(np.std(maes)),
                "mean_avg_rmse": float(np.mean(rmses)),
                "std_avg_rmse": float(np.std(rmses)),
            }
        )
    return {
        "name": summary.name,
        "setting": summary.setting,
        "n_runs": len(summary.runs),
        "cells": cells,
    }


def emit_plot_data(run_dirs: Sequence[str | Path], out_path: str | Path) -> int:
    """Flatten finished experiments into one long-format CSV.

    Columns: experiment, cell, seed, round, metric, value. Per-round (or
    per-epoch) validation curves use their own index; final test metrics use
    round -1. Returns the number of data rows written.
    """
    rows: list[list] = []
    for run_dir in run_dirs:
        root = Path(run_dir)
        summary_path = root / "summary.json"
        if not summary_path.exists():
            raise FileNotFoundError(f"{root}: no summary.json (not a finished run?)")
        with open(summary_path) as fh:
            summary = json.load(fh)
        name = summary["name"]
        for cell in summary["cells"]:
            for run in cell["runs"]:
                seed = run["seed"]
                rows.extend(
                    [name, cell["cell"], seed, -1, metric, run[metric]]
                    for metric in ("avg_nrmse", "avg_mae", "avg_rmse")
                    if run[metric] is not None
                )
                run_dir2 = root / cell["cell"] / f"seed-{seed}"
                rounds_csv = run_dir2 / "rounds.csv"
                epochs_csv = run_dir2 / "epochs.csv"
                if rounds_csv.exists():
                    rows.extend(_curve_rows(name, cell["cell"], seed, rounds_csv,
                                            "round", ("agg_val_mse", "agg_val_mae")))
                elif epochs_csv.exists():
                    rows.extend(_curve_rows(name, cell["cell"], seed, epochs_csv,
                                            "epoch", ("val_mse", "val_mae")))
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "cell", "seed", "round", "metric", "value"])
        writer.writerows(rows)
    return len(rows)


def _curve_rows(name, cell, seed, csv_path: Path, index_col, metrics) -> list[list]:
    rows = []
    seen: set[tuple[int, str]] = set()
    with open(csv_path, newline="") as fh:
        for record in csv.DictReader(fh):
            idx = int(record[index_col])
            client = record.get("client", "")
            for metric in metrics:
                value = record.get(metric, "")
                if value == "":
                    continue
                if metric.startswith("agg_") or client in ("", "pooled"):
                    label = metric
                else:
                    label = f"{metric}[{client}]"
                if (idx, label) in seen:
                    continue  # per-round aggregates repeat on every client row
                seen.add((idx, label))
                rows.append([name, cell, seed, idx, label, value])
    return rows
