"""End-to-end command tests: artifact schemas, byte-level reproducibility,
mode equivalence through the CLI, the model-file-driven offline
recomputation oracle, and the exit-code contract."""

import math

import numpy as np
import pytest

from sppnet import cascade, cli, dataset, nncore

from oracles import act_scalar


def _run(argv):
    return cli.main(argv)


def _gen(tmp_path, extra=()):
    out = tmp_path / "dataset.csv"
    code = _run(
        ["gen-data", "--out-dir", str(tmp_path), "--out", str(out),
         "--n-lambda", "6", "--thickness", "36,48,60"] + list(extra)
    )
    assert code == cli.EXIT_OK
    return out


def _train(tmp_path, data, extra=()):
    code = _run(
        ["train", "--data", str(data), "--out-dir", str(tmp_path),
         "--epochs", "15", "--window", "4", "--seed", "7"] + list(extra)
    )
    assert code == cli.EXIT_OK
    return tmp_path / "model.txt"


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def test_gen_data_default_grid(tmp_path):
    out = tmp_path / "d.csv"
    code = _run(["gen-data", "--out-dir", str(tmp_path), "--out", str(out)])
    assert code == cli.EXIT_OK
    ds = dataset.load_csv(out)
    assert len(ds) == 909
    assert sorted(set(ds.values[:, 1])) == [36, 42, 48, 54, 60, 72, 84, 96, 128]
    excl_lines = [
        ln for ln in (tmp_path / "exclusions.csv").read_text().splitlines()
        if not ln.startswith("#")
    ]
    assert excl_lines[0] == "lambda0_nm,t_nm,reason"


def test_gen_data_single_point(tmp_path):
    out = tmp_path / "one.csv"
    code = _run(
        ["gen-data", "--out-dir", str(tmp_path), "--out", str(out),
         "--n-lambda", "1", "--thickness", "48"]
    )
    assert code == cli.EXIT_OK
    assert len(dataset.load_csv(out)) == 1


def test_gen_data_is_byte_reproducible(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    for out in (a, b):
        code = _run(
            ["gen-data", "--out-dir", str(tmp_path), "--out", str(out),
             "--n-lambda", "4", "--thickness", "36,48", "--seed", "5"]
        )
        assert code == cli.EXIT_OK
    assert a.read_bytes().replace(b"a.csv", b"") == b.read_bytes().replace(b"b.csv", b"")


def test_gen_data_embeds_resolved_config(tmp_path):
    out = _gen(tmp_path)
    text = out.read_text()
    assert "# config.command=gen-data" in text
    assert "# seed=0" in text


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def test_train_same_seed_identical_model_files(tmp_path):
    data = _gen(tmp_path)
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    for d in (d1, d2):
        code = _run(
            ["train", "--data", str(data), "--out-dir", str(d),
             "--mode", "sequential", "--epochs", "10", "--window", "4", "--seed", "7"]
        )
        assert code == cli.EXIT_OK
    m1 = (d1 / "model.txt").read_text().replace(str(d1), "OUT")
    m2 = (d2 / "model.txt").read_text().replace(str(d2), "OUT")
    assert m1 == m2


def test_train_parallel_matches_sequential(tmp_path):
    data = _gen(tmp_path)
    ds, dp = tmp_path / "seq", tmp_path / "par"
    for d, mode in ((ds, "sequential"), (dp, "parallel")):
        code = _run(
            ["train", "--data", str(data), "--out-dir", str(d), "--mode", mode,
             "--epochs", "12", "--window", "4", "--seed", "7"]
        )
        assert code == cli.EXIT_OK
    seq_net, _ = cascade.CascadeNet.load(ds / "model.txt")
    par_net, _ = cascade.CascadeNet.load(dp / "model.txt")
    diff = np.abs(seq_net.weight_vector() - par_net.weight_vector())
    assert diff.max() <= 1e-12


def test_train_zero_epochs_keeps_initialization(tmp_path):
    data = _gen(tmp_path)
    code = _run(
        ["train", "--data", str(data), "--out-dir", str(tmp_path / "z"),
         "--epochs", "0", "--window", "4", "--seed", "11"]
    )
    assert code == cli.EXIT_OK
    net, meta = cascade.CascadeNet.load(tmp_path / "z" / "model.txt")
    train_rows = dataset.load_csv(tmp_path / "z" / "train_split.csv")
    fresh = cascade.CascadeNet.initialise(11, window=4, horizon=len(train_rows))
    assert np.array_equal(net.weight_vector(), fresh.weight_vector())


def test_train_writes_fixed_schema_artifacts(tmp_path):
    data = _gen(tmp_path)
    _train(tmp_path, data)
    metrics_lines = [
        ln for ln in (tmp_path / "metrics.csv").read_text().splitlines()
        if not ln.startswith("#")
    ]
    assert metrics_lines[0] == "epoch,mse,ea_mean,eb_mean,pass_rate,wall_ms,overlap_ratio"
    assert len(metrics_lines) == 16  # header + 15 epochs
    trace_lines = [
        ln for ln in (tmp_path / "validation_trace.csv").read_text().splitlines()
        if not ln.startswith("#")
    ]
    assert trace_lines[0] == "epoch,tau,delta_tau,sigma,M,m,accepted"
    timeline_lines = [
        ln for ln in (tmp_path / "timeline.csv").read_text().splitlines()
        if not ln.startswith("#")
    ]
    assert timeline_lines[0] == "tau,stage,start_ns,end_ns"


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def test_eval_on_training_split_reports_final_mse(tmp_path, capsys):
    data = _gen(tmp_path)
    model = _train(tmp_path, data)
    _, meta = cascade.CascadeNet.load(model)
    capsys.readouterr()
    code = _run(
        ["eval", "--model", str(model), "--data", str(tmp_path / "train_split.csv"),
         "--out-dir", str(tmp_path)]
    )
    assert code == cli.EXIT_OK
    out = capsys.readouterr().out
    printed = float(next(ln for ln in out.splitlines() if ln.startswith("mse:")).split()[1])
    assert abs(printed - float(meta["final_mse"])) <= 1e-12


def test_eval_rejected_rows_flagged_nan(tmp_path):
    data = _gen(tmp_path)
    model = _train(tmp_path, data)
    code = _run(
        ["eval", "--model", str(model), "--data", str(tmp_path / "eval_split.csv"),
         "--out", str(tmp_path / "preds.csv"), "--out-dir", str(tmp_path)]
    )
    assert code == cli.EXIT_OK
    rows = [
        ln for ln in (tmp_path / "preds.csv").read_text().splitlines()
        if not ln.startswith("#")
    ]
    assert rows[0] == (
        "lambda0_nm,t_nm,lambda_spp_true,lambda_spp_pred,L_spp_true,L_spp_pred,"
        "rejected_flag"
    )
    saw_rejected = False
    for row in rows[1:]:
        cols = row.split(",")
        if cols[6] == "1":
            saw_rejected = True
            assert math.isnan(float(cols[5]))
            assert np.isfinite(float(cols[3]))
    # the eval sweep starts with an empty delay line, so at least the first
    # window-length samples are always rejected
    assert saw_rejected


def test_eval_requires_normalization_in_model(tmp_path):
    # a bare nncore model without normalization metadata must be refused
    data = _gen(tmp_path)
    rng = np.random.default_rng(0)
    layers = [
        (name, nncore.DenseLayer(
            rng.normal(size=(fan_out, fan_in)), np.zeros(fan_out), act))
        for name, (fan_out, fan_in, act) in cascade.TOPOLOGY.items()
    ]
    bare = tmp_path / "bare.txt"
    nncore.save_model(bare, layers, {"cascade.window": "4", "cascade.horizon": "10"})
    code = _run(["eval", "--model", str(bare), "--data", str(data),
                 "--out-dir", str(tmp_path)])
    assert code == cli.EXIT_USAGE


# ---------------------------------------------------------------------------
# offline recomputation from the model file (independent forward pass)
# ---------------------------------------------------------------------------


def _parse_model_file(path):
    lines = path.read_text().splitlines()
    layers = {}
    meta = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("layer "):
            _, name, fan_out, fan_in, act = line.split()
            w_vals = [float(v) for v in lines[i + 1][2:].split()]
            b_vals = [float(v) for v in lines[i + 2][2:].split()]
            fan_out, fan_in = int(fan_out), int(fan_in)
            weights = [w_vals[r * fan_in : (r + 1) * fan_in] for r in range(fan_out)]
            layers[name] = (weights, b_vals, act)
            i += 3
            continue
        if line.startswith("meta "):
            key, _, value = line[5:].partition(" ")
            meta[key] = value
        i += 1
    return layers, meta


def _loops_forward(layer, x):
    weights, biases, act = layer
    out = []
    for i in range(len(biases)):
        acc = biases[i]
        for j, xv in enumerate(x):
            acc += weights[i][j] * xv
        out.append(act_scalar(act, acc))
    return out


def test_offline_recomputation_matches_predictions(tmp_path):
    data = _gen(tmp_path)
    model = _train(tmp_path, data, extra=["--epochs", "25"])
    code = _run(
        ["eval", "--model", str(model), "--data", str(tmp_path / "eval_split.csv"),
         "--out", str(tmp_path / "preds.csv"), "--out-dir", str(tmp_path)]
    )
    assert code == cli.EXIT_OK

    layers, meta = _parse_model_file(model)
    norm = {}
    for col in ("lambda0_nm", "t_nm", "lambda_spp_nm", "L_spp_nm"):
        lo, hi, kind = meta[f"norm.{col}"].split()
        norm[col] = (float(lo), float(hi), kind)

    def norm_col(col, v):
        lo, hi, kind = norm[col]
        if kind == "log10":
            v = math.log10(v)
        return 2.0 * (v - lo) / (hi - lo) - 1.0

    def denorm_col(col, v):
        lo, hi, kind = norm[col]
        raw = (v + 1.0) / 2.0 * (hi - lo) + lo
        return 10.0**raw if kind == "log10" else raw

    rows = [
        ln for ln in (tmp_path / "preds.csv").read_text().splitlines()
        if not ln.startswith("#")
    ][1:]
    checked = 0
    for row in rows:
        cols = [float(c) for c in row.split(",")]
        lam0, t_nm = cols[0], cols[1]
        x = [norm_col("lambda0_nm", lam0), norm_col("t_nm", t_nm)]
        y_iva = _loops_forward(layers["IVa"], _loops_forward(layers["IIIa"], x))
        if cols[6] == 0:
            y_ivb = _loops_forward(layers["IVb"], _loops_forward(layers["IIIb"], x + y_iva))
        else:
            y_ivb = [0.0] * 5
        y_vi = _loops_forward(layers["VI"], y_iva + y_ivb)
        lam_pred = denorm_col("lambda_spp_nm", y_vi[0])
        assert lam_pred == pytest.approx(cols[3], rel=1e-10)
        rel_recomputed = abs(lam_pred - cols[2]) / cols[2]
        rel_reported = abs(cols[3] - cols[2]) / cols[2]
        assert rel_recomputed == pytest.approx(rel_reported, rel=1e-9, abs=1e-12)
        if cols[6] == 0:
            L_pred = denorm_col("L_spp_nm", y_vi[1])
            assert L_pred == pytest.approx(cols[5], rel=1e-10)
        checked += 1
    assert checked == len(rows) > 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def test_bench_report_and_equivalence(tmp_path, capsys):
    data = _gen(tmp_path)
    code = _run(
        ["bench", "--data", str(data), "--out-dir", str(tmp_path),
         "--epochs", "3", "--window", "4", "--seed", "2"]
    )
    assert code == cli.EXIT_OK
    report = (tmp_path / "bench_report.txt").read_text().splitlines()
    assert report[0] == "sppnet bench report v1"
    fields = dict(ln.split("=", 1) for ln in report[1:])
    assert fields["weights_equal"] == "true"
    assert float(fields["mean_overlap_ratio"]) > 0.0
    assert float(fields["speedup"]) > 0.0
    assert (tmp_path / "timeline_sequential.csv").exists()
    assert (tmp_path / "timeline_parallel.csv").exists()


# ---------------------------------------------------------------------------
# config file and exit codes
# ---------------------------------------------------------------------------


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_lambda = 4\nthickness = 36,48\n")
    out = tmp_path / "d.csv"
    code = _run(
        ["gen-data", "--config", str(cfg), "--out", str(out),
         "--out-dir", str(tmp_path), "--n-lambda", "3"]
    )
    assert code == cli.EXIT_OK
    assert len(dataset.load_csv(out)) == 6  # 3 wavelengths x 2 thicknesses


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochz = 4\n")
    code = _run(["gen-data", "--config", str(cfg), "--out-dir", str(tmp_path)])
    assert code == cli.EXIT_USAGE


def test_missing_required_flag_is_usage_error(tmp_path):
    assert _run(["train", "--out-dir", str(tmp_path)]) == cli.EXIT_USAGE


def test_unreadable_data_is_io_error(tmp_path):
    code = _run(
        ["train", "--data", str(tmp_path / "missing.csv"), "--out-dir", str(tmp_path)]
    )
    assert code == cli.EXIT_IO


def test_divergence_is_exit_code_2(tmp_path):
    data = _gen(tmp_path)
    code = _run(
        ["train", "--data", str(data), "--out-dir", str(tmp_path / "div"),
         "--epochs", "5", "--window", "4", "--eta", "1e18"]
    )
    assert code == cli.EXIT_DIVERGENCE


def test_bad_subcommand_is_usage_error():
    assert _run(["frobnicate"]) == cli.EXIT_USAGE
