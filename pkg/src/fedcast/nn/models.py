"""The five forecaster architectures over a shared flat-parameter ABI.

Every model maps a (batch, T, d) window to the next step's five targets.
Weights initialize uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases and
recurrent initial states are zero, which makes the all-zero parameter vector
predict exactly zero everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from fedcast.nn import engine as eg
from fedcast.nn.engine import Tensor
from fedcast.nn.params import Layout, ParameterVector, TensorSpec

ARCHITECTURES: tuple[str, ...] = ("mlp", "rnn", "lstm", "gru", "cnn")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture choice plus shape and optimizer hyper-parameters.

    Defaults follow the reference configuration: 10-step windows over 11
    features, 5 targets, MLP hidden stack (256, 128, 64), 128 recurrent
    units with a 128-unit ReLU head, CNN filters (16, 16, 32, 32) with 3x3
    kernels, Adam at lr 0.001, batch size 128.
    """

    architecture: str
    window_size: int = 10
    n_features: int = 11
    n_targets: int = 5
    hidden_sizes: tuple[int, ...] = (256, 128, 64)
    recurrent_units: int = 128
    dense_units: int = 128
    conv_filters: tuple[int, ...] = (16, 16, 32, 32)
    kernel_size: int = 3
    learning_rate: float = 0.001
    batch_size: int = 128

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {self.architecture!r}, "
                f"expected one of {ARCHITECTURES}"
            )
        for name in ("window_size", "n_features", "n_targets", "recurrent_units",
                     "dense_units", "kernel_size", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be positive")
        if any(f < 1 for f in self.conv_filters):
            raise ValueError("conv_filters must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def layout_for(spec: ModelSpec) -> Layout:
    """Canonical tensor table for one spec; identical specs share offsets."""
    d, t_len = spec.n_features, spec.window_size
    out = spec.n_targets
    tensors: list[TensorSpec] = []

    def dense(prefix: str, n_in: int, n_out: int) -> None:
        tensors.append(TensorSpec(f"{prefix}.w", (n_in, n_out), fan_in=n_in))
        tensors.append(TensorSpec(f"{prefix}.b", (n_out,)))

    if spec.architecture == "mlp":
        width = t_len * d
        for i, h in enumerate(spec.hidden_sizes):
            dense(f"fc{i}", width, h)
            width = h
        dense("out", width, out)
    elif spec.architecture in ("rnn", "lstm", "gru"):
        units = spec.recurrent_units
        gates = {"rnn": 1, "lstm": 4, "gru": 3}[spec.architecture]
        tensors.append(TensorSpec("cell.w_x", (d, gates * units), fan_in=d))
        tensors.append(TensorSpec("cell.w_h", (units, gates * units), fan_in=units))
        tensors.append(TensorSpec("cell.b", (gates * units,)))
        dense("head", units, spec.dense_units)
        dense("out", spec.dense_units, out)
    elif spec.architecture == "cnn":
        k2 = spec.kernel_size * spec.kernel_size
        channels = 1
        for i, f in enumerate(spec.conv_filters):
            tensors.append(
                TensorSpec(f"conv{i}.w", (channels * k2, f), fan_in=channels * k2)
            )
            tensors.append(TensorSpec(f"conv{i}.b", (f,)))
            channels = f
        dense("head", channels, spec.dense_units)
        dense("out", spec.dense_units, out)
    return Layout(tuple(tensors), tag=spec.architecture)


def parameter_count(spec: ModelSpec) -> int:
    return layout_for(spec).size


def init_model(spec: ModelSpec, seed: int) -> ParameterVector:
    """Deterministic init: one PCG64 stream, tensors drawn in layout order."""
    layout = layout_for(spec)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    values = np.zeros(layout.size, dtype=np.float64)
    pv = ParameterVector(values, layout)
    for tensor in layout.tensors:
        if tensor.fan_in is None:
            continue
        bound = 1.0 / np.sqrt(tensor.fan_in)
        lo, hi = layout.offsets[tensor.name]
        values[lo:hi] = rng.uniform(-bound, bound, size=tensor.size)
    return pv


def forward_graph(
    spec: ModelSpec, tensors: Mapping[str, Tensor], inputs: np.ndarray
) -> Tensor:
    """Build the prediction graph for a batch of windows.

    tensors maps layout names to engine Tensors (leaves when training,
    constants when predicting). inputs is (batch, T, d).
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != spec.window_size or x.shape[2] != spec.n_features:
        raise ValueError(
            f"expected inputs (batch, {spec.window_size}, {spec.n_features}), "
            f"got {x.shape}"
        )
    if spec.architecture == "mlp":
        return _mlp(spec, tensors, x)
    if spec.architecture == "rnn":
        return _rnn(spec, tensors, x)
    if spec.architecture == "lstm":
        return _lstm(spec, tensors, x)
    if spec.architecture == "gru":
        return _gru(spec, tensors, x)
    return _cnn(spec, tensors, x)


def _dense_head(tensors: Mapping[str, Tensor], h: Tensor) -> Tensor:
    h = eg.relu(eg.add(eg.matmul(h, tensors["head.w"]), tensors["head.b"]))
    return eg.add(eg.matmul(h, tensors["out.w"]), tensors["out.b"])


def _mlp(spec, tensors, x):
    batch = x.shape[0]
    h: Tensor = Tensor(x.reshape(batch, spec.window_size * spec.n_features))
    for i in range(len(spec.hidden_sizes)):
        h = eg.relu(eg.add(eg.matmul(h, tensors[f"fc{i}.w"]), tensors[f"fc{i}.b"]))
    return eg.add(eg.matmul(h, tensors["out.w"]), tensors["out.b"])


def _rnn(spec, tensors, x):
    batch = x.shape[0]
    w_x, w_h, b = tensors["cell.w_x"], tensors["cell.w_h"], tensors["cell.b"]
    h = Tensor(np.zeros((batch, spec.recurrent_units)))
    for t in range(spec.window_size):
        step = Tensor(x[:, t, :])
        h = eg.tanh(eg.add(eg.add(eg.matmul(step, w_x), eg.matmul(h, w_h)), b))
    return _dense_head(tensors, h)


def _lstm(spec, tensors, x):
    batch, units = x.shape[0], spec.recurrent_units
    w_x, w_h, b = tensors["cell.w_x"], tensors["cell.w_h"], tensors["cell.b"]
    h = Tensor(np.zeros((batch, units)))
    c = Tensor(np.zeros((batch, units)))
    for t in range(spec.window_size):
        step = Tensor(x[:, t, :])
        z = eg.add(eg.add(eg.matmul(step, w_x), eg.matmul(h, w_h)), b)
        # Gate order along the combined axis: input, forget, cell, output.
        i = eg.sigmoid(eg.narrow(z, 1, 0, units))
        f = eg.sigmoid(eg.narrow(z, 1, units, units))
        g = eg.tanh(eg.narrow(z, 1, 2 * units, units))
        o = eg.sigmoid(eg.narrow(z, 1, 3 * units, units))
        c = eg.add(eg.mul(f, c), eg.mul(i, g))
        h = eg.mul(o, eg.tanh(c))
    return _dense_head(tensors, h)


def _gru(spec, tensors, x):
    batch, units = x.shape[0], spec.recurrent_units
    w_x, w_h, b = tensors["cell.w_x"], tensors["cell.w_h"], tensors["cell.b"]
    # Gate order along the combined axis: reset, update, candidate.
    w_x_ru = eg.narrow(w_x, 1, 0, 2 * units)
    w_x_n = eg.narrow(w_x, 1, 2 * units, units)
    w_h_ru = eg.narrow(w_h, 1, 0, 2 * units)
    w_h_n = eg.narrow(w_h, 1, 2 * units, units)
    b_ru = eg.narrow(b, 0, 0, 2 * units)
    b_n = eg.narrow(b, 0, 2 * units, units)
    h = Tensor(np.zeros((batch, units)))
    one = Tensor(np.float64(1.0))
    for t in range(spec.window_size):
        step = Tensor(x[:, t, :])
        ru = eg.sigmoid(
            eg.add(eg.add(eg.matmul(step, w_x_ru), eg.matmul(h, w_h_ru)), b_ru)
        )
        r = eg.narrow(ru, 1, 0, units)
        u = eg.narrow(ru, 1, units, units)
        n = eg.tanh(
            eg.add(eg.add(eg.matmul(step, w_x_n), eg.matmul(eg.mul(r, h), w_h_n)), b_n)
        )
        h = eg.add(eg.mul(eg.sub(one, u), h), eg.mul(u, n))
    return _dense_head(tensors, h)


def _cnn(spec, tensors, x):
    batch = x.shape[0]
    # One input channel: the window is a (T, d) image.
    h: Tensor = Tensor(
        np.ascontiguousarray(
            x.reshape(batch, 1, spec.window_size, spec.n_features)
        )
    )
    pad = spec.kernel_size // 2
    for i in range(len(spec.conv_filters)):
        h = eg.relu(
            eg.conv2d(h, tensors[f"conv{i}.w"], tensors[f"conv{i}.b"],
                      spec.kernel_size, pad)
        )
    return _dense_head(tensors, eg.spatial_mean(h))


def _constant_tensors(params: ParameterVector) -> dict[str, Tensor]:
    return {t.name: Tensor(params.view(t.name)) for t in params.layout.tensors}


def leaf_tensors(params: ParameterVector) -> dict[str, Tensor]:
    """Parameter views wrapped as gradient-bearing graph leaves."""
    return {
        t.name: Tensor(params.view(t.name), requires_grad=True)
        for t in params.layout.tensors
    }


def forward(spec: ModelSpec, params: ParameterVector, inputs: np.ndarray) -> np.ndarray:
    """Predict (batch, n_targets) without building a gradient graph."""
    return forward_graph(spec, _constant_tensors(params), inputs).data


def predict(
    spec: ModelSpec,
    params: ParameterVector,
    inputs: np.ndarray,
    chunk_size: int = 1024,
) -> np.ndarray:
    """forward in bounded-memory chunks.

    Chunked matmuls can round differently from one full-batch call, so
    agreement with forward is to float precision, not bitwise; the chunk
    boundaries themselves depend only on the input length, so repeated
    calls on the same inputs are bit-identical.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if len(x) <= chunk_size:
        return forward(spec, params, x)
    parts = [
        forward(spec, params, x[i : i + chunk_size])
        for i in range(0, len(x), chunk_size)
    ]
    return np.concatenate(parts, axis=0)
