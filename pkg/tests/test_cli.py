import json

from spoc.battery import run_battery
from spoc.cli import dispatch


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {
        "model": {"name": "mean_field_ou"},
        "schedule": {"kind": "harmonic", "max_n": 1000000},
        "initial": {"kind": "point", "value": 1.0},
        "T": 1.0,
        "M": 30,
        "N": 300,
        "seed": 2024,
        "replications": 2,
        "milestones": [50, 300],
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_simulate_writes_manifest_and_outputs(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert dispatch(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["complete"] is True
    assert manifest["algorithm"] == "spoc"
    assert (out / "summary.csv").exists()
    # rerun detects completeness and is a no-op
    assert dispatch(["simulate", "--config", str(cfg), "--out", str(out)]) == 0


def test_simulate_rerun_reproduces_outputs_bitwise(tmp_path):
    cfg = write_config(tmp_path, measure_backend="full_atoms")
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert dispatch(["simulate", "--config", str(cfg), "--out", str(out1)]) == 0
    assert dispatch(["simulate", "--config", str(cfg), "--out", str(out2)]) == 0
    assert (out1 / "summary.csv").read_text() == (out2 / "summary.csv").read_text()
    s1 = sorted((out1 / "snapshots").glob("*.csv"))
    s2 = sorted((out2 / "snapshots").glob("*.csv"))
    assert [p.name for p in s1] == [p.name for p in s2]
    for a, b in zip(s1, s2):
        assert a.read_text() == b.read_text()


def test_config_error_unknown_key(tmp_path, capsys):
    cfg = write_config(tmp_path, bogus_key=12)
    code = dispatch(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "bogus_key" in capsys.readouterr().err


def test_config_error_bad_json_reports_line(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"model": \n broken}')
    code = dispatch(["simulate", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "line" in capsys.readouterr().err


def test_config_error_type_mismatch(tmp_path, capsys):
    cfg = write_config(tmp_path, N="many")
    code = dispatch(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "N" in capsys.readouterr().err


def test_set_overrides_typed(tmp_path):
    cfg = write_config(tmp_path, model={"name": "curie_weiss",
                                        "params": {"beta": 1.0, "K": 0.5, "sigma": 1.0}})
    out = tmp_path / "run"
    code = dispatch([
        "simulate", "--config", str(cfg), "--out", str(out),
        "--set", "model.params.beta=2.0", "--set", "N=100",
        "--set", "milestones=[100]",
    ])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["model"]["params"]["beta"] == 2.0
    assert manifest["config"]["N"] == 100


def test_set_override_unknown_key_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code = dispatch(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"),
                     "--set", "nonsense=1"])
    assert code == 2
    assert "nonsense" in capsys.readouterr().err


def test_blowup_exit_code(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        model={"name": "curie_weiss", "params": {"beta": 1.0, "K": 0.5, "sigma": 1.0}},
        initial={"kind": "point", "value": 60.0},
        N=20, milestones=[20], replications=1,
    )
    code = dispatch(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 3
    err = capsys.readouterr().err
    assert "particle" in err and "step" in err


def test_rates_iid_mode(tmp_path, capsys):
    cfg = tmp_path / "iid.json"
    cfg.write_text(json.dumps({
        "model": None,
        "schedule": {"kind": "harmonic", "max_n": 100000},
        "seed": 7,
        "replications": 5,
        "milestones": [128, 512, 2048],
    }))
    out = tmp_path / "rates"
    assert dispatch(["rates", "--config", str(cfg), "--out", str(out),
                     "--format", "json"]) == 0
    assert (out / "rates_w2_sq_to_reference.csv").exists()
    assert (out / "rates_w2_sq_to_reference.json").exists()
    svg = (out / "rates_w2_sq_to_reference.svg").read_text()
    assert svg.startswith("<svg") and "slope -0.5" in svg
    assert "slope" in capsys.readouterr().out


def test_rates_sde_mode(tmp_path):
    cfg = write_config(tmp_path, N=600, milestones=[75, 300, 600],
                       replications=3, metric="mean_abs_err",
                       measure_backend="summary_only")
    out = tmp_path / "rates_sde"
    assert dispatch(["rates", "--config", str(cfg), "--out", str(out)]) == 0
    text = (out / "rates_mean_abs_err.csv").read_text().strip().split("\n")
    assert text[0] == "n,err,ci_lo,ci_hi"
    assert len(text) == 4


def test_compare_outputs_matched_tables(tmp_path):
    cfg = write_config(tmp_path, N=400, milestones=[100, 200, 400], replications=3,
                       measure_backend="summary_only")
    out = tmp_path / "cmp"
    assert dispatch(["compare", "--config", str(cfg), "--out", str(out)]) == 0
    seq = (out / "sequential_mean_abs_err.csv").read_text().strip().split("\n")
    cls = (out / "classical_mean_abs_err.csv").read_text().strip().split("\n")
    seq_ns = [row.split(",")[0] for row in seq[1:]]
    cls_ns = [row.split(",")[0] for row in cls[1:]]
    assert seq_ns == cls_ns == ["100", "200", "400"]
    assert (out / "compare_mean_abs_err.svg").exists()


def test_density_outputs(tmp_path):
    cfg = write_config(tmp_path, N=500, milestones=[100, 500], replications=1,
                       bins=24, range=[-2.0, 2.0])
    out = tmp_path / "dens"
    assert dispatch(["density", "--config", str(cfg), "--out", str(out)]) == 0
    for n in (100, 500):
        rows = (out / f"density_n{n}.csv").read_text().strip().split("\n")
        assert rows[0] == "bin_lo,bin_hi,density"
        assert len(rows) == 25
    assert (out / "density.svg").exists()


def test_schedule_diag(tmp_path, capsys):
    cfg = tmp_path / "sched.json"
    cfg.write_text(json.dumps({"schedule": {"kind": "power_law", "r": 0.5,
                                            "max_n": 10000}, "gamma": 0.5}))
    out = tmp_path / "diag"
    assert dispatch(["schedule-diag", "--config", str(cfg), "--out", str(out)]) == 0
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["regime"] == "rate_alpha_gamma"
    assert (out / "theta.csv").exists()
    assert "rate_alpha_gamma" in capsys.readouterr().out


def test_verify_battery_passes(tmp_path, capsys):
    assert dispatch(["verify", "--out", str(tmp_path / "v")]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out
    results = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert all(item["passed"] for item in results)


def test_battery_checks_named():
    names = {c.name for c in run_battery()}
    assert {"theta_harmonic_identity", "transport_lp_vs_quantile",
            "f_profile_battery"} <= names


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path, N=100, milestones=[100], replications=1)
    out_a, out_b, out_c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert dispatch(["simulate", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert dispatch(["simulate", "--config", str(cfg), "--out", str(out_b),
                     "--seed", "999"]) == 0
    assert dispatch(["simulate", "--config", str(cfg), "--out", str(out_c),
                     "--seed", "999"]) == 0
    summary_a = (out_a / "summary.csv").read_text()
    summary_b = (out_b / "summary.csv").read_text()
    assert summary_a != summary_b  # different seed, different draws
    assert summary_b == (out_c / "summary.csv").read_text()
    manifest = json.loads((out_b / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 999


def test_workers_flag_keeps_outputs_identical(tmp_path):
    cfg = write_config(tmp_path, N=200, milestones=[200], replications=4)
    out_a, out_b = tmp_path / "w1", tmp_path / "w4"
    assert dispatch(["simulate", "--config", str(cfg), "--out", str(out_a),
                     "--workers", "1"]) == 0
    assert dispatch(["simulate", "--config", str(cfg), "--out", str(out_b),
                     "--workers", "4"]) == 0
    assert (out_a / "summary.csv").read_text() == (out_b / "summary.csv").read_text()
