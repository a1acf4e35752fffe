"""Server-side aggregation strategies.

Every client i reports delta_i = w_local - w_global, its sample count, its
local optimizer step count tau_i, and the full local weights. The weighted
round update is dW = sum_i (n_i / n) delta_i with n = sum_i n_i, and every
strategy ADDS its update to the global weights:

  fedavg / fedprox   w + eta * dW            (eta == 1 averages client models)
  fedavgm            u = beta * u + dW;                    w + u
  fednova            u = rho * u + (sum_i n_i tau_i / n)
                         * sum_i (n_i / (n tau_i)) delta_i; w + eta * u
  fedadagrad         u = u + dW^2;                w + eta * dW / (sqrt(u) + lam)
  fedyogi            m = b1 m + (1-b1) dW;
                     u = u - (1-b2) dW^2 sign(u - dW^2);
                                                  w + eta * m / (sqrt(u) + lam)
  fedadam            m = b1 m + (1-b1) dW;  u = b2 u + (1-b2) dW^2;
                                                  w + eta * m / (sqrt(u) + lam)
  simpleavg          unweighted mean of client models
  medianavg          coordinate-wise median of client models

Updates are merged in ascending client-id order regardless of arrival
order, so aggregation is invariant to update ordering, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from fedcast.nn.params import ParameterVector

STRATEGIES: tuple[str, ...] = (
    "fedavg",
    "fedprox",
    "fedavgm",
    "fednova",
    "fedadagrad",
    "fedyogi",
    "fedadam",
    "simpleavg",
    "medianavg",
)

# Reference first/second-moment constants for the adaptive strategies.
ADAPTIVE_BETAS: dict[str, tuple[float, float]] = {
    "fedadagrad": (0.0, 0.99),
    "fedyogi": (0.9, 0.99),
    "fedadam": (0.9, 0.99),
}

# Hyper-parameter search grids from the reference evaluation.
TUNING_GRIDS: dict[str, dict[str, list[float]]] = {
    "fedavg": {},
    "simpleavg": {},
    "medianavg": {},
    "fedprox": {"mu": [1e-3, 1e-2, 1e-1, 1.0]},
    "fedavgm": {"beta": [0.0, 0.7, 0.9, 0.97, 0.99, 0.997]},
    "fednova": {"rho": [0.0, 1e-3, 1e-2, 1e-1, 0.99]},
    "fedadagrad": {"server_lr": [1e-2, 1e-1, 1.0],
                   "adaptivity": [1e-4, 1e-3, 1e-2, 1e-1]},
    "fedyogi": {"server_lr": [1e-2, 1e-1, 1.0],
                "adaptivity": [1e-4, 1e-3, 1e-2, 1e-1]},
    "fedadam": {"server_lr": [1e-2, 1e-1, 1.0],
                "adaptivity": [1e-4, 1e-3, 1e-2, 1e-1]},
}


class AggregationError(ValueError):
    """Invalid aggregator configuration or update set."""


@dataclass(frozen=True)
class AggregatorConfig:
    """Strategy name plus its hyper-parameters.

    server_lr is eta; mu is the FedProx client proximal weight; beta the
    FedAvgM momentum; rho the FedNova momentum; beta1/beta2/adaptivity the
    adaptive-strategy moments and lambda.
    """

    strategy: str
    server_lr: float = 1.0
    mu: float = 0.0
    beta: float = 0.0
    rho: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.99
    adaptivity: float = 1e-3

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise AggregationError(
                f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}"
            )
        if self.server_lr <= 0:
            raise AggregationError("server_lr must be positive")
        if self.mu < 0:
            raise AggregationError("mu must be >= 0")
        for name in ("beta", "rho", "beta1", "beta2"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise AggregationError(f"{name} must be in [0, 1), got {v}")
        if self.adaptivity <= 0:
            raise AggregationError("adaptivity must be positive")

    @staticmethod
    def for_strategy(strategy: str, **overrides) -> "AggregatorConfig":
        """Config with the reference beta1/beta2 for adaptive strategies."""
        base = AggregatorConfig(strategy=strategy)
        if strategy in ADAPTIVE_BETAS:
            b1, b2 = ADAPTIVE_BETAS[strategy]
            base = replace(base, beta1=b1, beta2=b2)
        return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class ClientUpdate:
    """One client's round contribution.

    delta = local - global in the round's reference frame; local_params are
    the raw post-training weights (used by the model-averaging strategies so
    a single-client round reproduces local training bit for bit).
    """

    client_id: str
    delta: ParameterVector
    n_samples: int
    local_steps: int
    local_params: Optional[ParameterVector] = None

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise AggregationError(
                f"{self.client_id}: n_samples must be >= 1, got {self.n_samples}"
            )
        if self.local_steps < 1:
            raise AggregationError(
                f"{self.client_id}: local_steps must be >= 1"
            )


@dataclass(frozen=True)
class ServerState:
    """Slow server-side accumulators threaded across rounds."""

    momentum: np.ndarray
    second_moment: np.ndarray
    round: int = 0

    @staticmethod
    def zeros(size: int) -> "ServerState":
        return ServerState(np.zeros(size, dtype=np.float64),
                           np.zeros(size, dtype=np.float64))


def proximal_loss_term(
    values, anchor, mu: float
) -> tuple[float, np.ndarray]:
    """mu/2 * ||w - anchor||^2 and its gradient mu * (w - anchor).

    Accepts ParameterVector or plain array arguments.
    """
    if mu < 0:
        raise AggregationError("mu must be >= 0")
    if isinstance(values, ParameterVector):
        values = values.values
    if isinstance(anchor, ParameterVector):
        anchor = anchor.values
    values = np.asarray(values, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if values.shape != anchor.shape:
        raise AggregationError("anchor shape differs from parameter shape")
    if mu == 0.0:
        return 0.0, np.zeros_like(values)
    diff = values - anchor
    return 0.5 * mu * float(diff @ diff), mu * diff


def _sorted_updates(updates: Sequence[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise AggregationError("no client updates to aggregate")
    ids = [u.client_id for u in updates]
    if len(set(ids)) != len(ids):
        raise AggregationError(f"duplicate client ids in updates: {ids}")
    size = updates[0].delta.size
    for u in updates:
        if u.delta.size != size:
            raise AggregationError("client updates have mismatched layouts")
    return sorted(updates, key=lambda u: u.client_id)


def weighted_delta(updates: Sequence[ClientUpdate]) -> np.ndarray:
    """dW = sum_i (n_i / n) delta_i in ascending client-id order."""
    ordered = _sorted_updates(updates)
    n = sum(u.n_samples for u in ordered)
    total = np.zeros(ordered[0].delta.size, dtype=np.float64)
    for u in ordered:
        total += (u.n_samples / n) * u.delta.values
    return total


def _local_values(update: ClientUpdate, global_params: ParameterVector) -> np.ndarray:
    if update.local_params is not None:
        return update.local_params.values
    return global_params.values + update.delta.values


def _weighted_model_average(
    updates: list[ClientUpdate], global_params: ParameterVector
) -> np.ndarray:
    n = sum(u.n_samples for u in updates)
    total = np.zeros(global_params.size, dtype=np.float64)
    for u in updates:
        total += (u.n_samples / n) * _local_values(u, global_params)
    return total


def aggregate(
    config: AggregatorConfig,
    state: ServerState,
    global_params: ParameterVector,
    updates: Sequence[ClientUpdate],
) -> tuple[ParameterVector, ServerState]:
    """One server round: returns (new global weights, new server state)."""
    ordered = _sorted_updates(updates)
    if ordered[0].delta.size != global_params.size:
        raise AggregationError("updates do not match the global layout")
    w = global_params.values
    eta = config.server_lr
    strategy = config.strategy
    new_momentum = state.momentum
    new_second = state.second_moment

    if strategy == "simpleavg":
        stack = np.stack([_local_values(u, global_params) for u in ordered])
        new_w = stack.mean(axis=0)
    elif strategy == "medianavg":
        stack = np.stack([_local_values(u, global_params) for u in ordered])
        new_w = np.median(stack, axis=0)
    elif strategy in ("fedavg", "fedprox"):
        # eta == 1 averages client models directly: exact (not just close)
        # for a single client, and equal to w + dW up to float rounding.
        if eta == 1.0:
            new_w = _weighted_model_average(ordered, global_params)
        else:
            new_w = w + eta * weighted_delta(ordered)
    elif strategy == "fedavgm":
        # eta is absorbed into the momentum step for this strategy.
        new_momentum = config.beta * state.momentum + weighted_delta(ordered)
        new_w = w + new_momentum
    elif strategy == "fednova":
        n = sum(u.n_samples for u in ordered)
        normalized = np.zeros(global_params.size, dtype=np.float64)
        for u in ordered:
            normalized += (u.n_samples / (n * u.local_steps)) * u.delta.values
        coeff = sum(u.n_samples * u.local_steps for u in ordered) / n
        new_momentum = config.rho * state.momentum + coeff * normalized
        new_w = w + eta * new_momentum
    elif strategy == "fedadagrad":
        dw = weighted_delta(ordered)
        new_second = state.second_moment + dw * dw
        new_w = w + eta * dw / (np.sqrt(new_second) + config.adaptivity)
    elif strategy == "fedyogi":
        dw = weighted_delta(ordered)
        new_momentum = config.beta1 * state.momentum + (1.0 - config.beta1) * dw
        sq = dw * dw
        new_second = state.second_moment - (1.0 - config.beta2) * sq * np.sign(
            state.second_moment - sq
        )
        new_w = w + eta * new_momentum / (np.sqrt(new_second) + config.adaptivity)
    elif strategy == "fedadam":
        dw = weighted_delta(ordered)
        new_momentum = config.beta1 * state.momentum + (1.0 - config.beta1) * dw
        new_second = config.beta2 * state.second_moment + (1.0 - config.beta2) * (
            dw * dw
        )
        new_w = w + eta * new_momentum / (np.sqrt(new_second) + config.adaptivity)
    else:  # pragma: no cover - guarded by AggregatorConfig validation
        raise AggregationError(f"unknown strategy {strategy!r}")

    new_params = global_params.replace_values(new_w)
    new_state = ServerState(new_momentum, new_second, state.round + 1)
    return new_params, new_state
