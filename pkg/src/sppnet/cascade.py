"""The full two-stage cascade topology and its gated training step.

Signal path: a 2-vector input feeds a parameter layer (II, three logsig
regression neurons decoded into window position / window length / taper
width, plus an implicit passthrough of the input) and the first
feed-forward stage (IIIa: 10 tansig -> IVa: 7 logsig). Stage-1 output is
spectrally validated; when accepted it is concatenated with the input and
sent through the second stage (IIIb: 8 tansig -> IVb: 5 tansig). A merge
controller assembles the final 12-vector for the two-neuron purelin
output layer (VI); rejected samples get zero padding in place of stage-2
output and carry a NaN flag in the second output component.

Training is phase-split: phase A owns {II, IIIa, IVa}, phase B owns
{IIIb, IVb, VI}. The two sets are disjoint by construction, which is
what allows the pipeline to run both phases concurrently without locks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nncore
from .nncore import DenseLayer

# block name -> (fan_out, fan_in, activation)
TOPOLOGY = {
    "II": (3, 2, "logsig"),
    "IIIa": (10, 2, "tansig"),
    "IVa": (7, 10, "logsig"),
    "IIIb": (8, 9, "tansig"),
    "IVb": (5, 8, "tansig"),
    "VI": (2, 12, "purelin"),
}
BLOCK_ORDER = ("II", "IIIa", "IVa", "IIIb", "IVb", "VI")
PHASE_A_BLOCKS = ("II", "IIIa", "IVa")
PHASE_B_BLOCKS = ("IIIb", "IVb", "VI")

MIN_WINDOW = 4

# fixed linear encoders for the per-stage training signals: stage 1
# replicates the normalized plasmon wavelength into the logsig codomain,
# stage 2 replicates the normalized propagation length into tansig range
STAGE1_OFFSET, STAGE1_GAIN = 0.5, 0.4
STAGE2_GAIN = 0.8
_RAW_CLIP = 0.01  # keeps logsig regression targets reachable


class CascadeError(ValueError):
    """Topology violation or gating-contract breach."""


@dataclass(frozen=True)
class ValidationParams:
    """Decoded window parameters: anchor index, window length, taper width."""

    tau: int
    window: int
    sigma: float

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise CascadeError(f"tau must be >= 0, got {self.tau}")
        if self.window < MIN_WINDOW:
            raise CascadeError(f"window must be >= {MIN_WINDOW}, got {self.window}")
        if not 0.0 < self.sigma <= 1.0:
            raise CascadeError(f"sigma must be in (0, 1], got {self.sigma}")


@dataclass(frozen=True)
class Stage1Result:
    """Forward outputs of the parameter layer and first stage."""

    x: np.ndarray  # (2,) input
    y_iva: np.ndarray  # (7,)
    raw_params: np.ndarray  # (3,) logsig outputs of II
    params: ValidationParams


@dataclass(frozen=True)
class StageOutput:
    y_iva: np.ndarray
    y_ivb: np.ndarray | None
    validated: bool

    def __post_init__(self) -> None:
        if self.validated and self.y_ivb is None:
            raise CascadeError("validated output must carry stage-2 data")
        if not self.validated and self.y_ivb is not None:
            raise CascadeError("rejected output must not carry stage-2 data")


@dataclass(frozen=True)
class TargetBundle:
    """Per-sample training signals for the three trainable groups."""

    stage1: np.ndarray  # (7,) encoded plasmon wavelength
    stage2: np.ndarray  # (5,) encoded propagation length
    output: np.ndarray  # (2,) normalized (wavelength, length)
    params_raw: np.ndarray  # (3,) raw-space regression target for layer II


def encode_stage1_target(lambda_norm: float) -> np.ndarray:
    return np.full(7, STAGE1_OFFSET + STAGE1_GAIN * lambda_norm)


def decode_stage1_output(y_iva: np.ndarray) -> float:
    return (float(np.mean(y_iva)) - STAGE1_OFFSET) / STAGE1_GAIN


def encode_stage2_target(length_norm: float) -> np.ndarray:
    return np.full(5, STAGE2_GAIN * length_norm)


def make_targets(
    lambda_norm: float,
    length_norm: float,
    window_start: int,
    horizon: int,
    window: int,
    sigma_star: float,
) -> TargetBundle:
    span = max(horizon - 1, 1)
    params_raw = np.array(
        [
            min(max(window_start / span, _RAW_CLIP), 1.0 - _RAW_CLIP),
            (window - MIN_WINDOW) / (2 * window - MIN_WINDOW),
            min(max(sigma_star, _RAW_CLIP), 1.0 - _RAW_CLIP),
        ]
    )
    return TargetBundle(
        stage1=encode_stage1_target(lambda_norm),
        stage2=encode_stage2_target(length_norm),
        output=np.array([lambda_norm, length_norm]),
        params_raw=params_raw,
    )


class CascadeNet:
    """Weight state for all six blocks plus the window decode context.

    `window` is the configured validation window length; `horizon` is the
    number of samples per training epoch (used to decode the window-anchor
    neuron back into a sample index).
    """

    def __init__(self, layers: dict[str, DenseLayer], window: int = 32, horizon: int = 1024):
        missing = [n for n in BLOCK_ORDER if n not in layers]
        if missing:
            raise CascadeError(f"missing blocks: {missing}")
        for name in BLOCK_ORDER:
            fan_out, fan_in, act = TOPOLOGY[name]
            layer = layers[name]
            if layer.weights.shape != (fan_out, fan_in):
                raise CascadeError(
                    f"block {name}: expected weights {(fan_out, fan_in)}, "
                    f"got {layer.weights.shape}"
                )
            if layer.activation != act:
                raise CascadeError(
                    f"block {name}: expected activation {act}, got {layer.activation}"
                )
        if window < MIN_WINDOW:
            raise CascadeError(f"window must be >= {MIN_WINDOW}, got {window}")
        if horizon < 1:
            raise CascadeError(f"horizon must be >= 1, got {horizon}")
        self.layers = {name: layers[name] for name in BLOCK_ORDER}
        self.window = int(window)
        self.horizon = int(horizon)

    @classmethod
    def initialise(
        cls, seed: int, window: int = 32, horizon: int = 1024, init_scale: float = 0.5
    ) -> "CascadeNet":
        rng = np.random.default_rng(seed)
        layers = {
            name: DenseLayer.initialise(*TOPOLOGY[name][:2], TOPOLOGY[name][2], rng, init_scale)
            for name in BLOCK_ORDER
        }
        return cls(layers, window=window, horizon=horizon)

    def copy(self) -> "CascadeNet":
        return CascadeNet(
            {name: layer.copy() for name, layer in self.layers.items()},
            window=self.window,
            horizon=self.horizon,
        )

    def weight_vector(self) -> np.ndarray:
        """All parameters flattened in block order (for equivalence checks)."""
        parts = []
        for name in BLOCK_ORDER:
            parts.append(self.layers[name].weights.ravel())
            parts.append(self.layers[name].biases.ravel())
        return np.concatenate(parts)

    # -- forward ------------------------------------------------------------

    def decode_params(self, raw: np.ndarray) -> ValidationParams:
        # logsig saturates to exactly 0/1 in float; clamp so the decoded
        # parameters satisfy their invariants for any raw layer output
        tau = int(round(float(raw[0]) * max(self.horizon - 1, 1)))
        window = int(round(MIN_WINDOW + float(raw[1]) * (2 * self.window - MIN_WINDOW)))
        sigma = min(max(float(raw[2]), 1e-12), 1.0)
        return ValidationParams(tau=tau, window=max(window, MIN_WINDOW), sigma=sigma)

    def stage1_forward(self, x: np.ndarray) -> Stage1Result:
        x = np.asarray(x, dtype=float)
        if x.shape != (2,):
            raise CascadeError(f"input must be a 2-vector, got shape {x.shape}")
        raw, _ = nncore.forward(self.layers["II"], x)
        y_iva, _ = nncore.forward_chain([self.layers["IIIa"], self.layers["IVa"]], x)
        if not (np.isfinite(raw).all() and np.isfinite(y_iva).all()):
            raise nncore.DivergenceError("non-finite stage-1 activations")
        return Stage1Result(x=x, y_iva=y_iva, raw_params=raw, params=self.decode_params(raw))

    def stage2_forward(
        self, x: np.ndarray, y_iva: np.ndarray, validated: bool = True
    ) -> np.ndarray:
        if not validated:
            raise CascadeError("stage-2 forward invoked on unvalidated stage-1 output")
        x9 = np.concatenate([np.asarray(x, dtype=float), np.asarray(y_iva, dtype=float)])
        y_ivb, _ = nncore.forward_chain([self.layers["IIIb"], self.layers["IVb"]], x9)
        if not np.isfinite(y_ivb).all():
            raise nncore.DivergenceError("non-finite stage-2 activations")
        return y_ivb

    def merge_and_output(self, stage: StageOutput) -> np.ndarray:
        """Final 2-vector; component 2 is NaN-flagged for rejected samples."""
        if stage.validated:
            merged = np.concatenate([stage.y_iva, stage.y_ivb])
            y_vi, _ = nncore.forward(self.layers["VI"], merged)
            return y_vi
        merged = np.concatenate([stage.y_iva, np.zeros(5)])
        y_vi, _ = nncore.forward(self.layers["VI"], merged)
        return np.array([y_vi[0], math.nan])

    # -- training -----------------------------------------------------------

    def phase_a_update(
        self, sim: Stage1Result, targets: TargetBundle, eta: float
    ) -> np.ndarray:
        """Update {II, IIIa, IVa}; returns the stage-1 error signal."""
        stage1 = [self.layers["IIIa"], self.layers["IVa"]]
        for layer, g in zip(stage1, nncore.backprop(stage1, sim.x, targets.stage1)):
            nncore.gd_update(layer, g, eta)
        (g_ii,) = nncore.backprop([self.layers["II"]], sim.x, targets.params_raw)
        nncore.gd_update(self.layers["II"], g_ii, eta)
        return targets.stage1 - sim.y_iva

    def phase_b_update(
        self, sim: Stage1Result, targets: TargetBundle, validated: bool, eta: float
    ) -> "PhaseBResult":
        """Update {IIIb, IVb, VI} under the gating contract.

        Accepted samples train the whole second stage and both output
        neurons; rejected samples leave stage 2 untouched and adjust only
        the first output neuron's incoming weights.
        """
        stage2_error = None
        if validated:
            y_ivb = self.stage2_forward(sim.x, sim.y_iva, validated=True)
            stage2_error = targets.stage2 - y_ivb
            x9 = np.concatenate([sim.x, sim.y_iva])
            chain = [self.layers["IIIb"], self.layers["IVb"]]
            for layer, g in zip(chain, nncore.backprop(chain, x9, targets.stage2)):
                nncore.gd_update(layer, g, eta)
            merged = np.concatenate([sim.y_iva, y_ivb])
            y_vi, cache = nncore.forward(self.layers["VI"], merged)
            output_error = targets.output - y_vi
            (g_vi,) = nncore.gradients_from_error(
                [self.layers["VI"]], [cache], output_error
            )
            nncore.gd_update(self.layers["VI"], g_vi, eta)
            reported = y_vi
        else:
            merged = np.concatenate([sim.y_iva, np.zeros(5)])
            y_vi, cache = nncore.forward(self.layers["VI"], merged)
            masked_error = np.array([targets.output[0] - y_vi[0], 0.0])
            (g_vi,) = nncore.gradients_from_error(
                [self.layers["VI"]], [cache], masked_error
            )
            nncore.gd_update(self.layers["VI"], g_vi, eta)
            output_error = np.array([masked_error[0], math.nan])
            reported = np.array([y_vi[0], math.nan])
        return PhaseBResult(
            stage2_error=stage2_error,
            output_error=output_error,
            output=reported,
            stage2_updated=validated,
        )

    def train_step(
        self, x: np.ndarray, targets: TargetBundle, eta: float, validated: bool
    ) -> "TrainStepResult":
        """One full gated step: stage-1 pass, phase A, phase B."""
        sim = self.stage1_forward(x)
        stage1_error = self.phase_a_update(sim, targets, eta)
        b = self.phase_b_update(sim, targets, validated, eta)
        return TrainStepResult(
            sim=sim,
            stage1_error=stage1_error,
            stage2_error=b.stage2_error,
            output_error=b.output_error,
            output=b.output,
            global_error=global_error(stage1_error, b.stage2_error),
        )

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path, metadata: dict[str, str] | None = None) -> None:
        meta = dict(metadata or {})
        meta["cascade.window"] = str(self.window)
        meta["cascade.horizon"] = str(self.horizon)
        named = [(name, self.layers[name]) for name in BLOCK_ORDER]
        nncore.save_model(path, named, meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["CascadeNet", dict[str, str]]:
        layers, meta = nncore.load_model(path)
        window = int(meta.get("cascade.window", 32))
        horizon = int(meta.get("cascade.horizon", 1024))
        return cls(layers, window=window, horizon=horizon), meta


@dataclass(frozen=True)
class PhaseBResult:
    stage2_error: np.ndarray | None
    output_error: np.ndarray  # component 2 NaN when rejected
    output: np.ndarray  # component 2 NaN when rejected
    stage2_updated: bool


@dataclass(frozen=True)
class TrainStepResult:
    sim: Stage1Result
    stage1_error: np.ndarray
    stage2_error: np.ndarray | None
    output_error: np.ndarray
    output: np.ndarray
    global_error: float


def global_error(stage1_error: np.ndarray, stage2_error: np.ndarray | None) -> float:
    """Worst absolute component across both local error signals."""
    worst = float(np.max(np.abs(stage1_error)))
    if stage2_error is not None:
        worst = max(worst, float(np.max(np.abs(stage2_error))))
    return worst
