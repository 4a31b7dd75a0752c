"""Four-activity training pipeline with a sequential reference trainer.

Per sample, the work splits into: simulation (stage-1 forward pass),
phase A (update the first weight group), frequency-domain validation
(gate decision), and phase B (update the second weight group under the
gate). The parallel runner executes the four activities as long-lived
worker threads joined by bounded single-producer/single-consumer queues;
phase A and validation run concurrently, and phase B pipelines behind
them. Because the two phases write disjoint weight blocks and every
reader is gated on the writers of the blocks it reads, the parallel
schedule performs the exact same floating-point operations in the same
order as the sequential reference, so final weights agree bitwise.
"""

from __future__ import annotations

import math
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import cascade, dataset, omegaval

STAGE_SIMULATION = "simulation"
STAGE_PHASE_A = "phase_a"
STAGE_VALIDATION = "omega_validation"
STAGE_PHASE_B = "phase_b"

KIND_RESULT = "stage1-result"
KIND_VERDICT = "validation-verdict"
KIND_EPOCH_END = "epoch-end"
KIND_STOP = "stop"

METRICS_HEADER = "epoch,mse,ea_mean,eb_mean,pass_rate,wall_ms,overlap_ratio"
TIMELINE_HEADER = "tau,stage,start_ns,end_ns"


class PipelineError(RuntimeError):
    """Configuration or protocol failure inside the training pipeline."""


class PipelineStallError(PipelineError):
    """No progress within the configured timeout (deadlock suspicion)."""


class _Aborted(Exception):
    """Internal: another worker failed; unwind quietly."""


@dataclass(frozen=True)
class PipelineConfig:
    epochs: int
    eta: float = 0.01
    seed: int = 0
    window: int = 32
    warmup_epochs: int = 1
    percentile: float = 0.9
    mse_goal: float = 0.0
    queue_capacity: int = 64
    stall_timeout_s: float = 30.0
    validation_component: int = 0  # which stage-1 component the gate compares
    write_audit: bool = False  # sequential runner verifies phase write sets

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise PipelineError(f"epochs must be >= 0, got {self.epochs}")
        if self.eta <= 0:
            raise PipelineError(f"eta must be > 0, got {self.eta}")
        if self.window < 4:
            raise PipelineError(f"window must be >= 4, got {self.window}")
        if self.warmup_epochs < 1:
            raise PipelineError(f"warmup_epochs must be >= 1, got {self.warmup_epochs}")
        if self.queue_capacity < 1:
            raise PipelineError(f"queue_capacity must be >= 1, got {self.queue_capacity}")
        if not 0 <= self.validation_component < 7:
            raise PipelineError(
                f"validation_component must index the stage-1 output, "
                f"got {self.validation_component}"
            )


@dataclass(frozen=True)
class WorkMessage:
    kind: str
    tau: int
    epoch: int
    payload: object = None


@dataclass(frozen=True)
class SimPacket:
    tau: int
    epoch: int
    index: int
    sim: cascade.Stage1Result


@dataclass(frozen=True)
class PhaseAPacket:
    tau: int
    epoch: int
    index: int
    sim: cascade.Stage1Result
    stage1_error_inf: float


@dataclass(frozen=True)
class VerdictPacket:
    tau: int
    epoch: int
    accepted: bool


@dataclass(frozen=True)
class SampleEvent:
    epoch: int
    tau: int
    index: int
    stage1_error_inf: float
    stage2_error_inf: float | None
    global_error: float
    accepted: bool
    stage2_updated: bool
    bound_holds: bool


@dataclass(frozen=True)
class StageSpan:
    tau: int
    stage: str
    start_ns: int
    end_ns: int


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    mse: float
    ea_mean: float
    eb_mean: float  # NaN when no sample was accepted
    pass_rate: float
    wall_ms: float
    overlap_ratio: float
    bound_fraction: float  # monitored global-error inequality


@dataclass
class TrainingMetrics:
    epochs: list[EpochMetrics] = field(default_factory=list)
    events: list[SampleEvent] = field(default_factory=list)
    spans: list[StageSpan] = field(default_factory=list)
    validation_trace: list[str] = field(default_factory=list)
    region: omegaval.AcceptanceRegion | None = None

    @property
    def final_epoch_mse(self) -> float:
        return self.epochs[-1].mse if self.epochs else math.nan


# ---------------------------------------------------------------------------
# shared per-run state and the four activities
# ---------------------------------------------------------------------------


@dataclass
class _TrainingSetup:
    net: cascade.CascadeNet
    validator: omegaval.OmegaValidator
    inputs: np.ndarray
    targets: list[cascade.TargetBundle]
    eta: float
    n: int
    validation_component: int = 0


def _prepare(ds: dataset.Dataset, net: cascade.CascadeNet, cfg: PipelineConfig) -> _TrainingSetup:
    if ds.normalization is None:
        raise PipelineError("training requires a normalized dataset")
    n = len(ds)
    if n == 0:
        raise PipelineError("training dataset is empty")
    work_net = cascade.CascadeNet(
        {name: layer.copy() for name, layer in net.layers.items()},
        window=cfg.window,
        horizon=n,
    )
    lambda_norm = ds.values[:, 2]
    length_norm = ds.values[:, 3]
    # deterministic window-width regression target: spectral half-power
    # width of the epoch's stage-1 training signal
    signal = cascade.STAGE1_OFFSET + cascade.STAGE1_GAIN * lambda_norm
    sigma_star = (
        omegaval.dominant_peak_width_fraction(signal) if n >= omegaval.MIN_WINDOW else 0.5
    )
    targets = [
        cascade.make_targets(
            float(lambda_norm[i]),
            float(length_norm[i]),
            window_start=max(0, i - cfg.window + 1),
            horizon=n,
            window=cfg.window,
            sigma_star=sigma_star,
        )
        for i in range(n)
    ]
    validator = omegaval.OmegaValidator(
        window=cfg.window, warmup_epochs=cfg.warmup_epochs, percentile=cfg.percentile
    )
    return _TrainingSetup(
        net=work_net,
        validator=validator,
        inputs=np.array(ds.values[:, :2]),
        targets=targets,
        eta=cfg.eta,
        n=n,
        validation_component=cfg.validation_component,
    )


def _simulate_activity(setup: _TrainingSetup, epoch: int, index: int, tau: int) -> SimPacket:
    sim = setup.net.stage1_forward(setup.inputs[index])
    return SimPacket(tau=tau, epoch=epoch, index=index, sim=sim)


def _phase_a_activity(setup: _TrainingSetup, pkt: SimPacket) -> PhaseAPacket:
    error = setup.net.phase_a_update(pkt.sim, setup.targets[pkt.index], setup.eta)
    return PhaseAPacket(
        tau=pkt.tau,
        epoch=pkt.epoch,
        index=pkt.index,
        sim=pkt.sim,
        stage1_error_inf=float(np.max(np.abs(error))),
    )


def _validation_activity(setup: _TrainingSetup, pkt: SimPacket) -> VerdictPacket:
    target = setup.targets[pkt.index]
    c = setup.validation_component
    record = setup.validator.observe(
        pkt.epoch,
        pkt.tau,
        float(pkt.sim.y_iva[c]),
        float(target.stage1[c]),
        pkt.sim.params.sigma,
    )
    return VerdictPacket(tau=pkt.tau, epoch=pkt.epoch, accepted=record.accepted)


def _phase_b_activity(
    setup: _TrainingSetup, apkt: PhaseAPacket, verdict: VerdictPacket
) -> SampleEvent:
    if apkt.tau != verdict.tau:
        raise PipelineError(
            f"sequence mismatch joining phase B inputs: {apkt.tau} vs {verdict.tau}"
        )
    result = setup.net.phase_b_update(
        apkt.sim, setup.targets[apkt.index], verdict.accepted, setup.eta
    )
    e2_inf = (
        float(np.max(np.abs(result.stage2_error)))
        if result.stage2_error is not None
        else None
    )
    e_star = apkt.stage1_error_inf if e2_inf is None else max(apkt.stage1_error_inf, e2_inf)
    finite = np.isfinite(result.output_error)
    bound_holds = bool(np.all(e_star >= np.abs(result.output_error[finite])))
    return SampleEvent(
        epoch=apkt.epoch,
        tau=apkt.tau,
        index=apkt.index,
        stage1_error_inf=apkt.stage1_error_inf,
        stage2_error_inf=e2_inf,
        global_error=e_star,
        accepted=verdict.accepted,
        stage2_updated=result.stage2_updated,
        bound_holds=bound_holds,
    )


# ---------------------------------------------------------------------------
# sequential reference
# ---------------------------------------------------------------------------


def _snapshot(net: cascade.CascadeNet, blocks) -> dict[str, np.ndarray]:
    return {
        name: np.concatenate([net.layers[name].weights.ravel(), net.layers[name].biases])
        for name in blocks
    }


def _audit_unchanged(net: cascade.CascadeNet, before: dict[str, np.ndarray], stage: str):
    for name, snap in before.items():
        now = np.concatenate([net.layers[name].weights.ravel(), net.layers[name].biases])
        if not np.array_equal(snap, now):
            raise PipelineError(f"write-audit: {stage} modified non-owned block {name}")


def run_sequential(
    ds: dataset.Dataset, net: cascade.CascadeNet, cfg: PipelineConfig
) -> tuple[cascade.CascadeNet, TrainingMetrics]:
    """Simulation -> phase A -> validation -> phase B, strictly in order per
    sample. Deterministic given the dataset order and configuration; the
    input net is copied, never mutated. With `write_audit` enabled, every
    activity is checked against its declared weight-block write set (the
    disjoint-write contract that makes the parallel schedule safe)."""
    setup = _prepare(ds, net, cfg)
    events: list[SampleEvent] = []
    spans: list[StageSpan] = []
    wall_ms: list[float] = []
    tau = 0
    for epoch in range(1, cfg.epochs + 1):
        epoch_t0 = time.perf_counter()
        square_sum = 0.0
        for index in range(setup.n):
            t0 = time.perf_counter_ns()
            pkt = _simulate_activity(setup, epoch, index, tau)
            t1 = time.perf_counter_ns()
            spans.append(StageSpan(tau, STAGE_SIMULATION, t0, t1))

            guard = _snapshot(setup.net, cascade.PHASE_B_BLOCKS) if cfg.write_audit else None
            t0 = time.perf_counter_ns()
            apkt = _phase_a_activity(setup, pkt)
            t1 = time.perf_counter_ns()
            spans.append(StageSpan(tau, STAGE_PHASE_A, t0, t1))
            if guard is not None:
                _audit_unchanged(setup.net, guard, STAGE_PHASE_A)

            t0 = time.perf_counter_ns()
            verdict = _validation_activity(setup, pkt)
            t1 = time.perf_counter_ns()
            spans.append(StageSpan(tau, STAGE_VALIDATION, t0, t1))

            guard = _snapshot(setup.net, cascade.PHASE_A_BLOCKS) if cfg.write_audit else None
            t0 = time.perf_counter_ns()
            event = _phase_b_activity(setup, apkt, verdict)
            t1 = time.perf_counter_ns()
            spans.append(StageSpan(tau, STAGE_PHASE_B, t0, t1))
            if guard is not None:
                _audit_unchanged(setup.net, guard, STAGE_PHASE_B)

            events.append(event)
            square_sum += event.global_error**2
            tau += 1
        setup.validator.end_epoch(epoch)
        wall_ms.append((time.perf_counter() - epoch_t0) * 1e3)
        if square_sum / setup.n <= cfg.mse_goal:
            break
    if not events:
        return setup.net, TrainingMetrics(validation_trace=setup.validator.trace_rows())
    metrics = record_metrics(
        events, spans, setup.n, wall_ms, setup.validator.trace_rows()
    )
    metrics.region = setup.validator.region
    return setup.net, metrics


# ---------------------------------------------------------------------------
# parallel pipeline
# ---------------------------------------------------------------------------


class _Channels:
    def __init__(self, capacity: int, stall_timeout_s: float):
        self.sim_to_a = queue.Queue(maxsize=capacity)
        self.sim_to_v = queue.Queue(maxsize=capacity)
        self.a_to_b = queue.Queue(maxsize=capacity)
        self.v_to_b = queue.Queue(maxsize=capacity)
        self.a_tokens = queue.Queue(maxsize=capacity)
        self.b_summaries = queue.Queue(maxsize=capacity)
        self.abort = threading.Event()
        self.stall_timeout_s = stall_timeout_s

    def put(self, q: queue.Queue, item) -> None:
        deadline = time.monotonic() + self.stall_timeout_s
        while True:
            if self.abort.is_set():
                raise _Aborted()
            try:
                q.put(item, timeout=0.1)
                return
            except queue.Full:
                if time.monotonic() > deadline:
                    raise PipelineStallError(
                        f"queue full for {self.stall_timeout_s:.0f}s; pipeline stalled"
                    )

    def get(self, q: queue.Queue):
        deadline = time.monotonic() + self.stall_timeout_s
        while True:
            if self.abort.is_set():
                raise _Aborted()
            try:
                return q.get(timeout=0.1)
            except queue.Empty:
                if time.monotonic() > deadline:
                    raise PipelineStallError(
                        f"no message for {self.stall_timeout_s:.0f}s; pipeline stalled"
                    )


def _sim_worker(setup, cfg, ch, spans, wall_ms):
    tau = 0
    for epoch in range(1, cfg.epochs + 1):
        epoch_t0 = time.perf_counter()
        for index in range(setup.n):
            if tau > 0:
                token = ch.get(ch.a_tokens)  # phase A done with the previous sample
                if token != tau - 1:
                    raise PipelineError(f"token out of order: {token} != {tau - 1}")
            t0 = time.perf_counter_ns()
            pkt = _simulate_activity(setup, epoch, index, tau)
            t1 = time.perf_counter_ns()
            spans.append(StageSpan(tau, STAGE_SIMULATION, t0, t1))
            msg = WorkMessage(KIND_RESULT, tau, epoch, pkt)
            ch.put(ch.sim_to_a, msg)
            ch.put(ch.sim_to_v, msg)
            tau += 1
        marker = WorkMessage(KIND_EPOCH_END, tau, epoch)
        ch.put(ch.sim_to_a, marker)
        ch.put(ch.sim_to_v, marker)
        epoch_mse = ch.get(ch.b_summaries)  # phase B drained the epoch
        wall_ms.append((time.perf_counter() - epoch_t0) * 1e3)
        if epoch_mse <= cfg.mse_goal:
            break
    stop = WorkMessage(KIND_STOP, tau, 0)
    ch.put(ch.sim_to_a, stop)
    ch.put(ch.sim_to_v, stop)


def _phase_a_worker(setup, ch, spans):
    while True:
        msg = ch.get(ch.sim_to_a)
        if msg.kind == KIND_STOP:
            ch.put(ch.a_to_b, msg)
            return
        if msg.kind == KIND_EPOCH_END:
            ch.put(ch.a_to_b, msg)
            continue
        t0 = time.perf_counter_ns()
        # per-sample work is far below the interpreter switch interval, so
        # without a scheduling point here the sibling stage would only start
        # after this one finished; yield once so both spans run concurrently
        time.sleep(0)
        apkt = _phase_a_activity(setup, msg.payload)
        t1 = time.perf_counter_ns()
        spans.append(StageSpan(msg.tau, STAGE_PHASE_A, t0, t1))
        ch.put(ch.a_tokens, msg.tau)  # frees the next simulation first
        ch.put(ch.a_to_b, WorkMessage(KIND_RESULT, msg.tau, msg.epoch, apkt))


def _validation_worker(setup, ch, spans):
    while True:
        msg = ch.get(ch.sim_to_v)
        if msg.kind == KIND_STOP:
            ch.put(ch.v_to_b, msg)
            return
        if msg.kind == KIND_EPOCH_END:
            setup.validator.end_epoch(msg.epoch)
            ch.put(ch.v_to_b, msg)
            continue
        t0 = time.perf_counter_ns()
        time.sleep(0)  # see _phase_a_worker: opens the span before yielding
        verdict = _validation_activity(setup, msg.payload)
        t1 = time.perf_counter_ns()
        spans.append(StageSpan(msg.tau, STAGE_VALIDATION, t0, t1))
        ch.put(ch.v_to_b, WorkMessage(KIND_VERDICT, msg.tau, msg.epoch, verdict))


def _phase_b_worker(setup, ch, spans, events):
    square_sum = 0.0
    count = 0
    while True:
        amsg = ch.get(ch.a_to_b)
        vmsg = ch.get(ch.v_to_b)
        sample_pair = amsg.kind == KIND_RESULT and vmsg.kind == KIND_VERDICT
        control_pair = amsg.kind == vmsg.kind and amsg.kind in (KIND_EPOCH_END, KIND_STOP)
        if not (sample_pair or control_pair) or amsg.tau != vmsg.tau:
            raise PipelineError(
                f"stream join mismatch: ({amsg.kind}, {amsg.tau}) vs ({vmsg.kind}, {vmsg.tau})"
            )
        if amsg.kind == KIND_STOP:
            return
        if amsg.kind == KIND_EPOCH_END:
            ch.put(ch.b_summaries, square_sum / count if count else math.inf)
            square_sum = 0.0
            count = 0
            continue
        t0 = time.perf_counter_ns()
        event = _phase_b_activity(setup, amsg.payload, vmsg.payload)
        t1 = time.perf_counter_ns()
        spans.append(StageSpan(amsg.tau, STAGE_PHASE_B, t0, t1))
        events.append(event)
        square_sum += event.global_error**2
        count += 1


def run_parallel(
    ds: dataset.Dataset, net: cascade.CascadeNet, cfg: PipelineConfig
) -> tuple[cascade.CascadeNet, TrainingMetrics]:
    """Pipelined execution of the exact dependency graph of the sequential
    trainer: four worker threads, bounded SPSC queues, no intra-epoch
    barriers. Final weights match run_sequential bitwise for identical
    configuration and dataset order."""
    setup = _prepare(ds, net, cfg)
    if cfg.epochs == 0:
        return setup.net, TrainingMetrics(validation_trace=setup.validator.trace_rows())
    ch = _Channels(cfg.queue_capacity, cfg.stall_timeout_s)
    sim_spans: list[StageSpan] = []
    a_spans: list[StageSpan] = []
    v_spans: list[StageSpan] = []
    b_spans: list[StageSpan] = []
    events: list[SampleEvent] = []
    wall_ms: list[float] = []
    failures: list[BaseException] = []
    failure_lock = threading.Lock()

    def guard(fn, *args):
        def runner():
            try:
                fn(*args)
            except _Aborted:
                pass
            except BaseException as exc:  # noqa: BLE001 - reported to the caller
                with failure_lock:
                    failures.append(exc)
                ch.abort.set()

        return runner

    workers = [
        threading.Thread(target=guard(_sim_worker, setup, cfg, ch, sim_spans, wall_ms),
                         name="nn-simulation"),
        threading.Thread(target=guard(_phase_a_worker, setup, ch, a_spans), name="phase-a"),
        threading.Thread(target=guard(_validation_worker, setup, ch, v_spans),
                         name="omega-validation"),
        threading.Thread(target=guard(_phase_b_worker, setup, ch, b_spans, events),
                         name="phase-b"),
    ]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    if failures:
        raise PipelineError("pipeline worker failed") from failures[0]

    spans = sim_spans + a_spans + v_spans + b_spans
    metrics = record_metrics(
        events, spans, setup.n, wall_ms, setup.validator.trace_rows()
    )
    metrics.region = setup.validator.region
    return setup.net, metrics


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def record_metrics(
    events: list[SampleEvent],
    spans: list[StageSpan],
    samples_per_epoch: int,
    wall_ms: list[float],
    validation_trace: list[str] | None = None,
) -> TrainingMetrics:
    """Aggregate the raw event stream into per-epoch rows.

    The event stream must cover every sample of every epoch it touches;
    a partially recorded epoch is an error.
    """
    if not events:
        raise PipelineError("empty event stream")
    by_epoch: dict[int, list[SampleEvent]] = {}
    for ev in events:
        by_epoch.setdefault(ev.epoch, []).append(ev)
    a_spans = {s.tau: s for s in spans if s.stage == STAGE_PHASE_A}
    v_spans = {s.tau: s for s in spans if s.stage == STAGE_VALIDATION}

    rows: list[EpochMetrics] = []
    for pos, epoch in enumerate(sorted(by_epoch)):
        evs = by_epoch[epoch]
        if len(evs) != samples_per_epoch:
            raise PipelineError(
                f"epoch {epoch} incomplete: {len(evs)} of {samples_per_epoch} samples"
            )
        square_sum = 0.0
        for ev in evs:
            square_sum += ev.global_error**2
        accepted = [ev for ev in evs if ev.accepted]
        eb_values = [ev.stage2_error_inf for ev in evs if ev.stage2_error_inf is not None]
        overlaps = 0
        for ev in evs:
            a, v = a_spans.get(ev.tau), v_spans.get(ev.tau)
            if a and v and a.start_ns < v.end_ns and v.start_ns < a.end_ns:
                overlaps += 1
        rows.append(
            EpochMetrics(
                epoch=epoch,
                mse=square_sum / samples_per_epoch,
                ea_mean=float(np.mean([ev.stage1_error_inf for ev in evs])),
                eb_mean=float(np.mean(eb_values)) if eb_values else math.nan,
                pass_rate=len(accepted) / samples_per_epoch,
                wall_ms=wall_ms[pos] if pos < len(wall_ms) else math.nan,
                overlap_ratio=overlaps / samples_per_epoch,
                bound_fraction=float(np.mean([ev.bound_holds for ev in evs])),
            )
        )
    return TrainingMetrics(
        epochs=rows,
        events=list(events),
        spans=list(spans),
        validation_trace=list(validation_trace or []),
    )


def metrics_csv_rows(metrics: TrainingMetrics) -> list[str]:
    rows = [METRICS_HEADER]
    for em in metrics.epochs:
        rows.append(
            "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g"
            % (em.epoch, em.mse, em.ea_mean, em.eb_mean, em.pass_rate, em.wall_ms,
               em.overlap_ratio)
        )
    return rows


def timeline_csv_rows(metrics: TrainingMetrics) -> list[str]:
    rows = [TIMELINE_HEADER]
    for span in sorted(metrics.spans, key=lambda s: (s.tau, s.start_ns)):
        rows.append("%d,%s,%d,%d" % (span.tau, span.stage, span.start_ns, span.end_ns))
    return rows


# ---------------------------------------------------------------------------
# evaluation sweep (frozen weights)
# ---------------------------------------------------------------------------


PREDICTIONS_HEADER = (
    "lambda0_nm,t_nm,lambda_spp_true,lambda_spp_pred,L_spp_true,L_spp_pred,rejected_flag"
)


@dataclass
class EvalResult:
    rows: list[tuple]
    mse: float
    lambda_rel_errors: np.ndarray  # every sample
    length_rel_errors: np.ndarray  # accepted samples only
    accepted_count: int

    def csv_rows(self) -> list[str]:
        out = [PREDICTIONS_HEADER]
        for row in self.rows:
            out.append(
                "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d" % row
            )
        return out


def evaluate(
    net: cascade.CascadeNet,
    ds: dataset.Dataset,
    region: omegaval.AcceptanceRegion | None,
    validation_component: int = 0,
) -> EvalResult:
    """Frozen-weight sweep over the dataset in order: stage-1 forward,
    gate decision with a fresh delay line, stage-2/merge, denormalized
    predictions. Rejected samples carry a NaN propagation-length
    prediction and the flag column. The reported MSE uses the same
    global-error convention as training, which makes an evaluation over
    the training split reproduce the recorded final training MSE exactly.
    """
    if ds.normalization is None:
        raise PipelineError("evaluation requires a normalized dataset")
    n = len(ds)
    if n == 0:
        raise PipelineError("evaluation dataset is empty")
    state = ds.normalization
    validator = omegaval.OmegaValidator(window=net.window, warmup_epochs=0, percentile=0.9)
    validator.region = region

    rows: list[tuple] = []
    lambda_rel: list[float] = []
    length_rel: list[float] = []
    square_sum = 0.0
    accepted_count = 0
    c = validation_component
    for i in range(n):
        x = ds.values[i, :2]
        lambda_norm, length_norm = float(ds.values[i, 2]), float(ds.values[i, 3])
        targets = cascade.make_targets(
            lambda_norm, length_norm, window_start=0, horizon=n,
            window=net.window, sigma_star=0.5,
        )
        sim = net.stage1_forward(x)
        record = validator.observe(
            1, i, float(sim.y_iva[c]), float(targets.stage1[c]), sim.params.sigma
        )
        accepted = record.accepted
        stage1_error = targets.stage1 - sim.y_iva
        if accepted:
            y_ivb = net.stage2_forward(x, sim.y_iva, validated=True)
            stage2_error = targets.stage2 - y_ivb
            output = net.merge_and_output(
                cascade.StageOutput(sim.y_iva, y_ivb, validated=True)
            )
            accepted_count += 1
        else:
            stage2_error = None
            output = net.merge_and_output(
                cascade.StageOutput(sim.y_iva, None, validated=False)
            )
        square_sum += cascade.global_error(stage1_error, stage2_error) ** 2

        raw_in = state.invert(
            np.array([[x[0], x[1], lambda_norm, length_norm]])
        )[0]
        lambda_pred = float(state.invert_column("lambda_spp_nm", output[0]))
        length_pred = float(state.invert_column("L_spp_nm", output[1]))
        rows.append(
            (
                raw_in[0],
                raw_in[1],
                raw_in[2],
                lambda_pred,
                raw_in[3],
                length_pred,
                0 if accepted else 1,
            )
        )
        lambda_rel.append(abs(lambda_pred - raw_in[2]) / raw_in[2])
        if accepted:
            length_rel.append(abs(length_pred - raw_in[3]) / raw_in[3])
    return EvalResult(
        rows=rows,
        mse=square_sum / n,
        lambda_rel_errors=np.array(lambda_rel),
        length_rel_errors=np.array(length_rel),
        accepted_count=accepted_count,
    )
