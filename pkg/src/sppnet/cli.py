"""Command-line entry point: dataset generation, training, evaluation,
and the sequential-vs-parallel benchmark.

Configuration comes from a flat key=value text file (--config) with
command-line flags taking precedence. Every output artifact embeds the
fully resolved configuration and seed as `# key=value` comment lines.

Exit codes: 0 success, 1 usage/config error, 2 numerical divergence or
pipeline failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import cascade, dataset, nncore, omegaval, physics, pipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGENCE = 2
EXIT_IO = 3

BENCH_REPORT_MAGIC = "sppnet bench report v1"

_FMT = "%.17g"


class UsageError(Exception):
    """Bad flags or configuration file contents."""


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------


def load_config_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


class _Resolver:
    """Merges CLI flags over config-file values over defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file_cfg = load_config_file(args.config) if args.config else {}
        self.resolved: dict[str, str] = {}

    def get(self, key: str, cast, default):
        flag_value = getattr(self.args, key, None)
        if flag_value is not None:
            value = flag_value
        elif key in self.file_cfg:
            try:
                value = cast(self.file_cfg[key])
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
        else:
            value = default
        if value is not None:
            if isinstance(value, (tuple, list)):
                self.resolved[key] = ",".join("%g" % v for v in value)
            else:
                self.resolved[key] = str(value)
        return value

    def unknown_keys(self, known: set[str]) -> list[str]:
        return sorted(set(self.file_cfg) - known)

    def provenance(self, command: str) -> dict[str, str]:
        meta = {f"config.{k}": v for k, v in sorted(self.resolved.items())}
        meta["config.command"] = command
        return meta


def _parse_thicknesses(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise UsageError(f"bad thickness list {text!r}: {exc}") from exc
    if not values:
        raise UsageError("thickness list is empty")
    return values


def _write_csv(path: Path, meta: dict[str, str], rows: list[str]) -> None:
    lines = [f"# {k}={v}" for k, v in sorted(meta.items())]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines + rows) + "\n")


def _out_dir(resolver: _Resolver) -> Path:
    out = Path(resolver.get("out_dir", str, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


_GEN_KEYS = {
    "out_dir", "seed", "out", "exclusions", "thickness", "lambda_min",
    "lambda_max", "n_lambda", "eps_d", "metal_table", "film_mode",
}


def cmd_gen_data(args: argparse.Namespace) -> int:
    r = _Resolver(args)
    unknown = r.unknown_keys(_GEN_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys for gen-data: {unknown}")
    out_dir = _out_dir(r)
    seed = r.get("seed", int, 0)
    out_path = Path(r.get("out", str, str(out_dir / "dataset.csv")))
    excl_path = Path(r.get("exclusions", str, str(out_dir / "exclusions.csv")))
    thicknesses = r.get("thickness", _parse_thicknesses, dataset.DEFAULT_THICKNESSES_NM)
    lambda_min = r.get("lambda_min", float, dataset.DEFAULT_LAMBDA_MIN_NM)
    lambda_max = r.get("lambda_max", float, dataset.DEFAULT_LAMBDA_MAX_NM)
    n_lambda = r.get("n_lambda", int, dataset.DEFAULT_N_LAMBDA)
    eps_d = r.get("eps_d", float, 1.0)
    metal_table = r.get("metal_table", str, None)
    film_mode = r.get("film_mode", str, physics.MODE_ANTISYMMETRIC)

    metal = (
        physics.TabulatedPermittivity.from_csv(metal_table)
        if metal_table
        else physics.MOLYBDENUM
    )
    model = physics.SppModel(metal=metal, eps_dielectric=eps_d, mode=film_mode)
    result = dataset.generate_grid(
        thicknesses_nm=thicknesses,
        lambda_min_nm=lambda_min,
        lambda_max_nm=lambda_max,
        n_lambda=n_lambda,
        model=model,
    )
    ds = result.dataset
    ds.metadata.update(r.provenance("gen-data"))
    ds.metadata["seed"] = str(seed)
    dataset.save_csv(ds, out_path)
    dataset.save_exclusions(result.exclusions, excl_path, ds.metadata)
    print(f"wrote {len(ds)} samples to {out_path}")
    print(f"excluded {len(result.exclusions)} grid points (log: {excl_path})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


_TRAIN_KEYS = {
    "out_dir", "seed", "data", "mode", "epochs", "eta", "train_fraction",
    "window", "warmup_epochs", "percentile", "mse_goal", "queue_capacity",
}


def _pipeline_config(r: _Resolver, seed: int) -> pipeline.PipelineConfig:
    try:
        return pipeline.PipelineConfig(
            epochs=r.get("epochs", int, 200),
            eta=r.get("eta", float, 0.01),
            seed=seed,
            window=r.get("window", int, 32),
            warmup_epochs=r.get("warmup_epochs", int, 1),
            percentile=r.get("percentile", float, 0.9),
            mse_goal=r.get("mse_goal", float, 0.0),
            queue_capacity=r.get("queue_capacity", int, 64),
        )
    except pipeline.PipelineError as exc:
        raise UsageError(str(exc)) from exc


def _region_meta(region: omegaval.AcceptanceRegion | None) -> dict[str, str]:
    if region is None:
        return {}
    return {
        "region.theta_max": _FMT % region.theta_max,
        "region.theta_min": _FMT % region.theta_min,
    }


def _region_from_meta(meta: dict[str, str]) -> omegaval.AcceptanceRegion | None:
    if "region.theta_max" not in meta:
        return None
    return omegaval.AcceptanceRegion(
        float(meta["region.theta_max"]), float(meta["region.theta_min"])
    )


def _normalized_from_raw(
    raw: dataset.Dataset, state: dataset.NormalizationState
) -> dataset.Dataset:
    return dataset.Dataset(state.apply(raw.values), state, dict(raw.metadata))


def cmd_train(args: argparse.Namespace) -> int:
    r = _Resolver(args)
    unknown = r.unknown_keys(_TRAIN_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys for train: {unknown}")
    data_path = r.get("data", str, None)
    if not data_path:
        raise UsageError("train requires --data")
    mode = r.get("mode", str, "sequential")
    if mode not in ("sequential", "parallel"):
        raise UsageError(f"unknown training mode {mode!r}")
    seed = r.get("seed", int, 0)
    fraction = r.get("train_fraction", float, 0.8)
    out_dir = _out_dir(r)
    cfg = _pipeline_config(r, seed)

    raw = dataset.load_csv(data_path)
    normalized = dataset.normalize(raw)
    train_ds, held_ds = dataset.split(normalized, fraction, seed)

    net = cascade.CascadeNet.initialise(seed, window=cfg.window, horizon=len(train_ds))
    runner = pipeline.run_parallel if mode == "parallel" else pipeline.run_sequential
    t0 = time.perf_counter()
    trained, metrics = runner(train_ds, net, cfg)
    wall_s = time.perf_counter() - t0

    provenance = r.provenance("train")
    provenance["seed"] = str(seed)

    # persist the raw-unit splits so evaluation runs on original data
    train_raw = dataset.denormalize(train_ds)
    held_raw = dataset.denormalize(held_ds)
    train_raw.metadata.update(provenance)
    held_raw.metadata.update(provenance)
    train_split_path = out_dir / "train_split.csv"
    eval_split_path = out_dir / "eval_split.csv"
    dataset.save_csv(train_raw, train_split_path)
    dataset.save_csv(held_raw, eval_split_path)

    # the recorded final MSE goes through the identical artifact path that
    # `sppnet eval` will use, so the two agree exactly
    model_meta = dict(provenance)
    model_meta.update(normalized.normalization.to_meta())
    model_meta.update(_region_meta(metrics.region))
    final = pipeline.evaluate(
        trained,
        _normalized_from_raw(dataset.load_csv(train_split_path), normalized.normalization),
        metrics.region,
    )
    model_meta["final_mse"] = _FMT % final.mse
    model_path = out_dir / "model.txt"
    trained.save(model_path, model_meta)

    _write_csv(out_dir / "metrics.csv", provenance, pipeline.metrics_csv_rows(metrics))
    _write_csv(out_dir / "validation_trace.csv", provenance,
               metrics.validation_trace or [omegaval.TRACE_HEADER])
    _write_csv(out_dir / "timeline.csv", provenance, pipeline.timeline_csv_rows(metrics))

    epochs_run = len(metrics.epochs)
    print(f"trained {epochs_run} epochs ({mode}) on {len(train_ds)} samples in {wall_s:.2f}s")
    if metrics.epochs:
        last = metrics.epochs[-1]
        print(f"last epoch: mse={last.mse:.6e} pass_rate={last.pass_rate:.3f}")
    print(f"final mse (frozen weights, training split): {final.mse:.17g}")
    print(f"model: {model_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


_EVAL_KEYS = {"out_dir", "seed", "data", "model", "out"}


def cmd_eval(args: argparse.Namespace) -> int:
    r = _Resolver(args)
    unknown = r.unknown_keys(_EVAL_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys for eval: {unknown}")
    model_path = r.get("model", str, None)
    data_path = r.get("data", str, None)
    if not model_path or not data_path:
        raise UsageError("eval requires --model and --data")
    out_dir = _out_dir(r)
    out_path = Path(r.get("out", str, str(out_dir / "predictions.csv")))

    net, meta = cascade.CascadeNet.load(model_path)
    try:
        state = dataset.NormalizationState.from_meta(meta)
    except dataset.DatasetError as exc:
        raise UsageError(
            f"model {model_path} carries no normalization state; "
            f"cannot evaluate a foreign dataset against it ({exc})"
        ) from exc
    region = _region_from_meta(meta)
    raw = dataset.load_csv(data_path)
    ds = _normalized_from_raw(raw, state)

    result = pipeline.evaluate(net, ds, region)
    provenance = r.provenance("eval")
    provenance["seed"] = meta.get("seed", "")
    _write_csv(out_path, provenance, result.csv_rows())

    finite_lambda = result.lambda_rel_errors
    max_rel = float(np.max(finite_lambda)) if finite_lambda.size else float("nan")
    if result.length_rel_errors.size:
        max_rel = max(max_rel, float(np.max(result.length_rel_errors)))
    print(f"evaluated {len(result.rows)} samples ({result.accepted_count} accepted)")
    print(f"mse: {result.mse:.17g}")
    print(f"max relative error: {max_rel:.6e}")
    print(f"predictions: {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


_BENCH_KEYS = {
    "out_dir", "seed", "data", "epochs", "eta", "window", "warmup_epochs",
    "percentile", "mse_goal", "queue_capacity",
}


def cmd_bench(args: argparse.Namespace) -> int:
    r = _Resolver(args)
    unknown = r.unknown_keys(_BENCH_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys for bench: {unknown}")
    data_path = r.get("data", str, None)
    if not data_path:
        raise UsageError("bench requires --data")
    seed = r.get("seed", int, 0)
    out_dir = _out_dir(r)
    cfg = _pipeline_config(r, seed)
    if cfg.epochs == 0:
        raise UsageError("bench needs epochs >= 1")

    cores = os.cpu_count() or 1
    if cores < 2:
        print("warning: single hardware thread; parallel numbers are not meaningful",
              file=sys.stderr)

    raw = dataset.load_csv(data_path)
    ds = dataset.normalize(raw)
    net = cascade.CascadeNet.initialise(seed, window=cfg.window, horizon=len(ds))

    t0 = time.perf_counter()
    net_seq, m_seq = pipeline.run_sequential(ds, net, cfg)
    seq_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    net_par, m_par = pipeline.run_parallel(ds, net, cfg)
    par_s = time.perf_counter() - t0

    max_dw = float(np.max(np.abs(net_seq.weight_vector() - net_par.weight_vector())))
    equal = max_dw <= 1e-12
    overlap = (
        float(np.mean([em.overlap_ratio for em in m_par.epochs])) if m_par.epochs else 0.0
    )

    provenance = r.provenance("bench")
    provenance["seed"] = str(seed)
    _write_csv(out_dir / "timeline_sequential.csv", provenance,
               pipeline.timeline_csv_rows(m_seq))
    _write_csv(out_dir / "timeline_parallel.csv", provenance,
               pipeline.timeline_csv_rows(m_par))

    report = [
        BENCH_REPORT_MAGIC,
        f"data={data_path}",
        f"samples={len(ds)}",
        f"epochs={len(m_seq.epochs)}",
        f"seed={seed}",
        f"hardware_threads={cores}",
        f"sequential_wall_s={seq_s:.6f}",
        f"parallel_wall_s={par_s:.6f}",
        f"speedup={seq_s / par_s:.6f}",
        f"mean_overlap_ratio={overlap:.6f}",
        f"max_weight_difference={max_dw:.3e}",
        f"weights_equal={'true' if equal else 'false'}",
    ]
    (out_dir / "bench_report.txt").write_text("\n".join(report) + "\n")
    print("\n".join(report))
    if not equal:
        print("error: sequential/parallel outputs diverged; benchmark invalid",
              file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------------------
# dispatcher
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 1, not argparse's 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sppnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--seed", type=int, help="RNG seed recorded in artifacts")
        p.add_argument("--out-dir", dest="out_dir", help="output directory (default .)")

    g = sub.add_parser("gen-data", help="synthesize the dispersion training grid")
    shared(g)
    g.add_argument("--out", help="dataset CSV path")
    g.add_argument("--exclusions", help="exclusion log path")
    g.add_argument("--thickness", type=_parse_thicknesses,
                   help="comma-separated film thicknesses in nm")
    g.add_argument("--lambda-min", dest="lambda_min", type=float)
    g.add_argument("--lambda-max", dest="lambda_max", type=float)
    g.add_argument("--n-lambda", dest="n_lambda", type=int)
    g.add_argument("--eps-d", dest="eps_d", type=float, help="cladding permittivity")
    g.add_argument("--metal-table", dest="metal_table",
                   help="CSV permittivity table instead of the built-in metal model")
    g.add_argument("--film-mode", dest="film_mode",
                   choices=(physics.MODE_ANTISYMMETRIC, physics.MODE_SYMMETRIC))
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the cascade on a dataset CSV")
    shared(t)
    t.add_argument("--data", help="dataset CSV from gen-data")
    t.add_argument("--mode", choices=("sequential", "parallel"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--eta", type=float, help="learning rate")
    t.add_argument("--train-fraction", dest="train_fraction", type=float)
    t.add_argument("--window", type=int, help="validation window length in samples")
    t.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    t.add_argument("--percentile", type=float, help="acceptance-region quantile")
    t.add_argument("--mse-goal", dest="mse_goal", type=float)
    t.add_argument("--queue-capacity", dest="queue_capacity", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained model on a dataset CSV")
    shared(e)
    e.add_argument("--model", help="model file from train")
    e.add_argument("--data", help="dataset CSV")
    e.add_argument("--out", help="predictions CSV path")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="compare sequential and parallel training")
    shared(b)
    b.add_argument("--data", help="dataset CSV")
    b.add_argument("--epochs", type=int)
    b.add_argument("--eta", type=float)
    b.add_argument("--window", type=int)
    b.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    b.add_argument("--percentile", type=float)
    b.add_argument("--mse-goal", dest="mse_goal", type=float)
    b.add_argument("--queue-capacity", dest="queue_capacity", type=int)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except dataset.GridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except nncore.DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (pipeline.PipelineError, cascade.CascadeError, omegaval.ValidationError) as exc:
        cause = exc.__cause__
        if isinstance(cause, nncore.DivergenceError):
            print(f"error: training diverged: {cause}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (dataset.DatasetError, nncore.NNError, physics.PhysicsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
