"""Dense-layer machinery: the three activations, forward/backward passes,
the per-sample gradient-descent update, and the text model format.

The update rule is plain online gradient descent on the half-squared
layer-chain error: w <- w - eta * grad(0.5*||target - y||^2). For a
vector error e = target - y this equals the elementwise product
e * de/dw that defines the trainer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ACTIVATIONS = ("tansig", "logsig", "purelin")
MODEL_MAGIC = "spp-cascadenet-model v1"

_FMT = "%.17g"


class NNError(ValueError):
    """Structural problem: bad dimensions, unknown activation, bad model file."""


class DivergenceError(RuntimeError):
    """Non-finite gradients or weights; training must abort."""


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    """Elementwise tansig/logsig/purelin."""
    x = np.asarray(x, dtype=float)
    if kind == "tansig":
        return np.tanh(x)
    if kind == "logsig":
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if kind == "purelin":
        return x.copy()
    raise NNError(f"unknown activation {kind!r}")


def _activation_slope(kind: str, y: np.ndarray) -> np.ndarray:
    # derivative in terms of the activation output
    if kind == "tansig":
        return 1.0 - y * y
    if kind == "logsig":
        return y * (1.0 - y)
    if kind == "purelin":
        return np.ones_like(y)
    raise NNError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    """Fully connected layer: y = act(W @ x + b), W is (out, in)."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        if self.activation not in ACTIVATIONS:
            raise NNError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2:
            raise NNError(f"weights must be 2-d, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise NNError(
                f"bias shape {self.biases.shape} inconsistent with "
                f"weight shape {self.weights.shape}"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise NNError("layer parameters must be finite")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)

    @classmethod
    def initialise(
        cls,
        fan_out: int,
        fan_in: int,
        activation: str,
        rng: np.random.Generator,
        init_scale: float = 0.5,
    ) -> "DenseLayer":
        """Uniform weights in [-init_scale, init_scale]/sqrt(fan_in), zero biases."""
        bound = init_scale / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        return cls(w, np.zeros(fan_out), activation)


@dataclass(frozen=True)
class LayerCache:
    """Per-layer forward context kept for the backward pass."""

    x: np.ndarray
    pre_activation: np.ndarray
    y: np.ndarray


def forward(layer: DenseLayer, x: np.ndarray) -> tuple[np.ndarray, LayerCache]:
    x = np.asarray(x, dtype=float)
    if x.shape != (layer.fan_in,):
        raise NNError(f"input shape {x.shape} does not match fan-in {layer.fan_in}")
    z = layer.weights @ x + layer.biases
    y = activation(layer.activation, z)
    return y, LayerCache(x=x, pre_activation=z, y=y)


def forward_chain(
    layers: Sequence[DenseLayer], x: np.ndarray
) -> tuple[np.ndarray, list[LayerCache]]:
    caches = []
    cur = np.asarray(x, dtype=float)
    for layer in layers:
        cur, cache = forward(layer, cur)
        caches.append(cache)
    return cur, caches


def gradients_from_error(
    layers: Sequence[DenseLayer], caches: Sequence[LayerCache], error: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Backward pass for loss 0.5*||e||^2 given e = target - y at the chain output."""
    delta = -np.asarray(error, dtype=float)  # dL/dy at the output
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore
    for i in range(len(layers) - 1, -1, -1):
        layer, cache = layers[i], caches[i]
        delta = delta * _activation_slope(layer.activation, cache.y)  # now dL/dz
        grads[i] = (np.outer(delta, cache.x), delta.copy())
        if i > 0:
            delta = layer.weights.T @ delta  # dL/dy of the previous layer
    return grads


def backprop(
    layers: Sequence[DenseLayer], x: np.ndarray, target: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of 0.5*||target - chain(x)||^2 for every weight and bias."""
    y, caches = forward_chain(layers, x)
    target = np.asarray(target, dtype=float)
    if target.shape != y.shape:
        raise NNError(f"target shape {target.shape} does not match output {y.shape}")
    return gradients_from_error(layers, caches, target - y)


def gd_update(
    layer: DenseLayer, grads: tuple[np.ndarray, np.ndarray], eta: float
) -> DenseLayer:
    """In-place step w <- w - eta*g; rejects non-finite gradients or results."""
    if eta <= 0:
        raise NNError(f"learning rate must be > 0, got {eta}")
    gw, gb = grads
    if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
        raise DivergenceError("non-finite gradient")
    with np.errstate(over="ignore", invalid="ignore"):
        layer.weights -= eta * gw
        layer.biases -= eta * gb
    if not (np.isfinite(layer.weights).all() and np.isfinite(layer.biases).all()):
        raise DivergenceError("weights overflowed during update")
    return layer


def mse(predictions: Iterable, targets: Iterable) -> float:
    """Mean of squared componentwise differences over all entries."""
    p = np.asarray(list(predictions), dtype=float)
    t = np.asarray(list(targets), dtype=float)
    if p.size == 0:
        raise NNError("mse of empty input")
    if p.shape != t.shape:
        raise NNError(f"length mismatch: {p.shape} vs {t.shape}")
    d = p - t
    return float(np.mean(d * d))


# ---------------------------------------------------------------------------
# model persistence
# ---------------------------------------------------------------------------


def save_model(
    path: str | Path,
    named_layers: Sequence[tuple[str, DenseLayer]],
    metadata: Mapping[str, str] | None = None,
) -> None:
    """Self-describing text format: versioned header, block manifest, then
    per-layer dims/activation and row-major parameters at 17 significant
    digits, then `meta key value` lines."""
    lines = [MODEL_MAGIC]
    lines.append("blocks " + " ".join(name for name, _ in named_layers))
    for name, layer in named_layers:
        lines.append(f"layer {name} {layer.fan_out} {layer.fan_in} {layer.activation}")
        lines.append("w " + " ".join(_FMT % v for v in layer.weights.ravel()))
        lines.append("b " + " ".join(_FMT % v for v in layer.biases))
    for key in sorted(metadata or {}):
        value = str(metadata[key])
        if "\n" in value:
            raise NNError(f"metadata value for {key!r} must be single-line")
        lines.append(f"meta {key} {value}")
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> tuple[dict[str, DenseLayer], dict[str, str]]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise NNError(f"{path}: not a model file (missing '{MODEL_MAGIC}' header)")
    if "end" not in lines:
        raise NNError(f"{path}: truncated model file (no 'end' marker)")
    layers: dict[str, DenseLayer] = {}
    metadata: dict[str, str] = {}
    manifest: list[str] = []
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line == "end":
            continue
        kind, _, rest = line.partition(" ")
        if kind == "blocks":
            manifest = rest.split()
        elif kind == "layer":
            try:
                name, fan_out, fan_in, act = rest.split()
                fan_out, fan_in = int(fan_out), int(fan_in)
                wline = lines[i].strip()
                bline = lines[i + 1].strip()
                i += 2
                if not wline.startswith("w ") or not bline.startswith("b "):
                    raise ValueError("expected 'w' and 'b' lines after layer header")
                w = np.array(wline[2:].split(), dtype=float).reshape(fan_out, fan_in)
                b = np.array(bline[2:].split(), dtype=float)
                if b.shape != (fan_out,):
                    raise ValueError(f"bias count {b.size} != fan-out {fan_out}")
            except (ValueError, IndexError) as exc:
                raise NNError(f"{path}: bad layer block: {exc}") from exc
            layers[name] = DenseLayer(w, b, act)
        elif kind == "meta":
            key, _, value = rest.partition(" ")
            metadata[key] = value
        else:
            raise NNError(f"{path}: unknown record {kind!r}")
    missing = [n for n in manifest if n not in layers]
    if missing:
        raise NNError(f"{path}: manifest names missing layer blocks: {missing}")
    return layers, metadata
