"""Federated orchestration: sampling, rounds, settings, and byte accounting.

One round: sample clients, broadcast the global weights, run E local epochs
per sampled client (each client keeps its own Adam state and epoch counter
across rounds, so a one-epoch-per-round run retraces a plain local run
step for step), aggregate, then evaluate the new global weights on every
client's validation windows. The centralized and individual settings reuse
the same trainer on pooled or single-client windows.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from fedcast.aggregation import (
    AggregatorConfig,
    ClientUpdate,
    ServerState,
    aggregate,
)
from fedcast.dataio import ClientWindows, concat_windows
from fedcast.nn.models import ModelSpec, init_model
from fedcast.nn.params import ParameterVector, payload_nbytes
from fedcast.nn.training import (
    AdamState,
    TrainReport,
    evaluate,
    train_local,
    train_with_early_stopping,
)


class FederationError(ValueError):
    """Invalid federation configuration or client cohort."""


@dataclass(frozen=True)
class FederationConfig:
    rounds: int
    local_epochs: int
    sampling_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise FederationError("rounds must be >= 0")
        if self.local_epochs < 0:
            raise FederationError("local_epochs must be >= 0")
        if not (0.0 < self.sampling_fraction <= 1.0):
            raise FederationError("sampling_fraction must be in (0, 1]")


@dataclass(frozen=True)
class ClientRoundStats:
    """Per-client bookkeeping for one round.

    Unsampled clients carry train_loss None, zero steps, zero bytes; their
    val scores are still measured against the post-aggregation global.
    """

    train_loss: Optional[float]
    val_mse: Optional[float]
    val_mae: Optional[float]
    local_steps: int
    n_samples: int
    uplink_bytes: int
    downlink_bytes: int


@dataclass(frozen=True)
class RoundRecord:
    round: int
    sampled: tuple[str, ...]
    client_stats: dict[str, ClientRoundStats]
    agg_val_mse: float
    agg_val_mae: float
    uplink_bytes: int
    downlink_bytes: int


@dataclass(frozen=True)
class FederationHistory:
    rounds: tuple[RoundRecord, ...]
    best_round: Optional[int]
    best_global: ParameterVector
    final_global: ParameterVector
    payload_bytes: int
    client_ids: tuple[str, ...]

    def sampled_sets(self) -> list[tuple[str, ...]]:
        return [record.sampled for record in self.rounds]


def client_stream_seed(seed: int, client_id: str) -> int:
    """Stable per-client shuffle seed: SeedSequence([seed, crc32(id)])."""
    crc = zlib.crc32(client_id.encode("utf-8"))
    seq = np.random.SeedSequence([seed, crc])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def sample_clients(
    client_ids: Sequence[str], fraction: float, round_index: int, seed: int
) -> list[str]:
    """Uniform sample without replacement of max(1, floor(f * N)) clients.

    Deterministic in (seed, round_index); the result preserves client-list
    order. fraction == 1 returns every client.
    """
    if not client_ids:
        raise FederationError("no clients to sample from")
    if not (0.0 < fraction <= 1.0):
        raise FederationError("fraction must be in (0, 1]")
    n = len(client_ids)
    count = max(1, int(np.floor(fraction * n)))
    if count >= n:
        return list(client_ids)
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, round_index, 1]))
    )
    chosen = rng.choice(n, size=count, replace=False)
    return [client_ids[i] for i in sorted(chosen)]


def _check_cohort(clients: Sequence[ClientWindows]) -> None:
    if not clients:
        raise FederationError("cohort is empty")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise FederationError(f"duplicate client ids: {ids}")


def run_federated(
    spec: ModelSpec,
    clients: Sequence[ClientWindows],
    federation: FederationConfig,
    aggregator: AggregatorConfig,
    initial: Optional[ParameterVector] = None,
) -> FederationHistory:
    """Run the full federated session and return its history.

    The best round is the one whose post-aggregation global scores the
    lowest validation MSE (sample-weighted over all clients); ties keep the
    earliest round.
    """
    _check_cohort(clients)
    by_id = {c.client_id: c for c in clients}
    ids = tuple(c.client_id for c in clients)
    if federation.rounds > 0:
        # A round needs at least one optimizer step per sampled client.
        if federation.local_epochs < 1:
            raise FederationError("local_epochs must be >= 1 when rounds > 0")
        for c in clients:
            if c.train.count == 0:
                raise FederationError(f"{c.client_id}: no training windows")
        if all(c.validation.count == 0 for c in clients):
            raise FederationError("no client has validation windows")

    global_pv = initial if initial is not None else init_model(spec, federation.seed)
    payload = payload_nbytes(global_pv.layout)
    server_state = ServerState.zeros(global_pv.size)
    stream_seeds = {cid: client_stream_seed(federation.seed, cid) for cid in ids}
    trainers: dict[str, tuple[AdamState, int]] = {
        cid: (AdamState.zeros(global_pv.size), 0) for cid in ids
    }
    is_fedprox = aggregator.strategy == "fedprox" and aggregator.mu > 0.0

    records: list[RoundRecord] = []
    best_round: Optional[int] = None
    best_mse = np.inf
    best_global = global_pv.copy()

    for r in range(federation.rounds):
        sampled = sample_clients(ids, federation.sampling_fraction, r, federation.seed)
        sampled_set = set(sampled)
        updates: list[ClientUpdate] = []
        train_stats: dict[str, tuple[float, int]] = {}
        for cid in sampled:
            cw = by_id[cid]
            state, offset = trainers[cid]
            report = train_local(
                spec,
                global_pv,
                cw.train,
                None,
                epochs=federation.local_epochs,
                seed=stream_seeds[cid],
                proximal_mu=aggregator.mu if is_fedprox else 0.0,
                proximal_anchor=global_pv.values if is_fedprox else None,
                state=state,
                epoch_offset=offset,
            )
            trainers[cid] = (report.state, report.next_epoch)
            delta = global_pv.replace_values(
                report.final_params.values - global_pv.values
            )
            updates.append(
                ClientUpdate(
                    client_id=cid,
                    delta=delta,
                    n_samples=cw.train.count,
                    local_steps=report.steps,
                    local_params=report.final_params,
                )
            )
            train_stats[cid] = (report.train_losses[-1], report.steps)

        global_pv, server_state = aggregate(
            aggregator, server_state, global_pv, updates
        )

        stats: dict[str, ClientRoundStats] = {}
        weighted_mse = 0.0
        weighted_mae = 0.0
        val_total = 0
        for cid in ids:
            cw = by_id[cid]
            if cw.validation.count > 0:
                v_mse, v_mae = evaluate(spec, global_pv, cw.validation)
                weighted_mse += v_mse * cw.validation.count
                weighted_mae += v_mae * cw.validation.count
                val_total += cw.validation.count
            else:
                v_mse, v_mae = None, None
            in_round = cid in sampled_set
            loss, steps = train_stats.get(cid, (None, 0))
            stats[cid] = ClientRoundStats(
                train_loss=loss,
                val_mse=v_mse,
                val_mae=v_mae,
                local_steps=steps,
                n_samples=cw.train.count,
                uplink_bytes=payload if in_round else 0,
                downlink_bytes=payload if in_round else 0,
            )
        agg_mse = weighted_mse / val_total
        agg_mae = weighted_mae / val_total
        records.append(
            RoundRecord(
                round=r,
                sampled=tuple(sampled),
                client_stats=stats,
                agg_val_mse=agg_mse,
                agg_val_mae=agg_mae,
                uplink_bytes=payload * len(sampled),
                downlink_bytes=payload * len(sampled),
            )
        )
        if agg_mse < best_mse:
            best_mse = agg_mse
            best_round = r
            best_global = global_pv.copy()

    return FederationHistory(
        rounds=tuple(records),
        best_round=best_round,
        best_global=best_global,
        final_global=global_pv,
        payload_bytes=payload,
        client_ids=ids,
    )


def run_centralized(
    spec: ModelSpec,
    clients: Sequence[ClientWindows],
    max_epochs: int,
    patience: int,
    seed: int = 0,
    initial: Optional[ParameterVector] = None,
) -> TrainReport:
    """Pool every client's train/validation windows and train one model.

    The shuffle stream is derived from the sorted client ids, so pooling a
    single client reproduces run_individual for that client exactly.
    """
    _check_cohort(clients)
    train = concat_windows([c.train for c in clients])
    validation = concat_windows([c.validation for c in clients])
    params = initial if initial is not None else init_model(spec, seed)
    cohort_id = "+".join(sorted(c.client_id for c in clients))
    return train_with_early_stopping(
        spec,
        params,
        train,
        validation,
        max_epochs,
        patience,
        seed=client_stream_seed(seed, cohort_id),
    )


def run_individual(
    spec: ModelSpec,
    client: ClientWindows,
    max_epochs: int,
    patience: int,
    seed: int = 0,
    initial: Optional[ParameterVector] = None,
) -> TrainReport:
    """Train one model on one client's own windows only."""
    params = initial if initial is not None else init_model(spec, seed)
    return train_with_early_stopping(
        spec,
        params,
        client.train,
        client.validation,
        max_epochs,
        patience,
        seed=client_stream_seed(seed, client.client_id),
    )


def fine_tune(
    spec: ModelSpec,
    global_params: ParameterVector,
    client: ClientWindows,
    epochs: int,
    seed: int = 0,
) -> ParameterVector:
    """Continue from the global weights on one client's train windows.

    Starts a FRESH Adam state (the server never ships optimizer moments);
    epochs == 0 returns the global weights unchanged.
    """
    report = train_local(
        spec,
        global_params,
        client.train,
        None,
        epochs=epochs,
        seed=client_stream_seed(seed, client.client_id),
    )
    return report.final_params


@dataclass(frozen=True)
class CommunicationLedger:
    """Byte totals for the first rounds_counted rounds of a session.

    Every sampled client uploads exactly one payload and downloads exactly
    one payload per round, so per-client uplink == downlink and the server
    one-directional total is payload * sum_t |S_t|.
    """

    payload_bytes: int
    rounds_counted: int
    per_client_uplink_bytes: dict[str, int]
    per_client_downlink_bytes: dict[str, int]
    server_rx_bytes: int
    server_tx_bytes: int

    @property
    def server_total_bytes(self) -> int:
        return self.server_rx_bytes + self.server_tx_bytes

    def client_total_bytes(self, client_id: str) -> int:
        return self.per_client_uplink_bytes.get(
            client_id, 0
        ) + self.per_client_downlink_bytes.get(client_id, 0)


def megabytes(n_bytes: int) -> float:
    """Decimal megabytes (1 MB = 1e6 bytes)."""
    return n_bytes / 1e6


def account_communication(
    history: FederationHistory,
    payload_bytes: Optional[int] = None,
    upto_round: Optional[int] = None,
) -> CommunicationLedger:
    """Tally transferred bytes over the first upto_round rounds.

    payload_bytes overrides the session's own payload (for what-if sizing);
    upto_round counts rounds (1-indexed count), default all.
    """
    payload = history.payload_bytes if payload_bytes is None else payload_bytes
    if payload < 0:
        raise FederationError("payload_bytes must be >= 0")
    n_rounds = len(history.rounds)
    upto = n_rounds if upto_round is None else upto_round
    if not (0 <= upto <= n_rounds):
        raise FederationError(
            f"upto_round must be in [0, {n_rounds}], got {upto}"
        )
    uplink = {cid: 0 for cid in history.client_ids}
    total_participants = 0
    for record in history.rounds[:upto]:
        for cid in record.sampled:
            uplink[cid] += payload
        total_participants += len(record.sampled)
    server_one_way = payload * total_participants
    return CommunicationLedger(
        payload_bytes=payload,
        rounds_counted=upto,
        per_client_uplink_bytes=uplink,
        per_client_downlink_bytes=dict(uplink),
        server_rx_bytes=server_one_way,
        server_tx_bytes=server_one_way,
    )


def estimate_total_transfer_bytes(
    payload_bytes: int, n_clients: int, fraction: float, rounds: int
) -> int:
    """Closed-form both-directions total: 2 * payload * per_round * rounds."""
    if n_clients < 1:
        raise FederationError("n_clients must be >= 1")
    if rounds < 0:
        raise FederationError("rounds must be >= 0")
    if not (0.0 < fraction <= 1.0):
        raise FederationError("fraction must be in (0, 1]")
    per_round = max(1, int(np.floor(fraction * n_clients)))
    return 2 * payload_bytes * per_round * rounds
