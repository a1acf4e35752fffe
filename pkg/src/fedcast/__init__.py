"""Deterministic federated-learning simulator for base-station traffic forecasting.

Subsystems: dataio (traces and preprocessing), nn (autodiff engine, the five
forecaster architectures, training, serialization), aggregation (server
strategies), federation (rounds, settings, byte accounting), metrics
(original-unit scores), synthetic (trace generator), experiment + cli
(config-driven runs).
"""

__version__ = "0.1.0"
