import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rydberg_cnot import harness, metrics
from rydberg_cnot.cli import main
from rydberg_cnot.harness import ConfigError, ExperimentConfig, ScanSpec, load_config, parse_config
from rydberg_cnot.noise import PhysicsConfig, blockade_shift, run_monte_carlo
from rydberg_cnot.protocols import ProtocolSpec

NOISELESS_B = 1e4 * PhysicsConfig().rabi_rydberg


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(data if isinstance(data, str) else json.dumps(data))
    return p


def experiment(tmp_path, physics=None, protocol=None, scan=None, **kw):
    return ExperimentConfig(physics or PhysicsConfig(), protocol or ProtocolSpec("HCZ_CNOT"), scan,
                            tmp_path / "out", **kw)


# -- config loading ----------------------------------------------------------------------------

def test_empty_object_gives_defaults(tmp_path):
    exp = load_config(write(tmp_path, {}))
    assert exp.physics == PhysicsConfig()
    assert exp.physics.rabi_rydberg / (2 * np.pi) == pytest.approx(0.67e6)
    assert exp.physics.blockade_anchor / (2 * np.pi) == pytest.approx(9.3e6)
    assert exp.protocol.name == "HCZ_CNOT" and exp.scan is None
    assert load_config(write(tmp_path, "", "blank.json")).physics == PhysicsConfig()


def test_single_override(tmp_path):
    exp = load_config(write(tmp_path, {"physics": {"sigmaAxial": 0}}))
    assert exp.physics == PhysicsConfig(sigma_axial=0.0)


@pytest.mark.parametrize("data,field", [
    ({"scan": {"parameterName": "nope"}}, "scan.parameterName"),
    ({"physics": {"sigmaAxal": 1}}, "physics.sigmaAxal"),
    ({"physics": {"sigmaAxial": -1}}, "physics.sigmaAxial"),
    ({"physics": {"trials": 2.5}}, "physics.trials"),
    ({"protocol": {"name": "SWAP"}}, "protocol"),
    ({"scan": {"parameterName": "gapDuration", "start": 0, "stop": 1, "steps": 1}}, "scan.steps"),
    ({"formats": ["xml"]}, "formats"),
    ({"extra": 1}, "extra"),
])
def test_validation_errors_name_the_field(tmp_path, data, field):
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, data))
    assert info.value.field == field


def test_parse_error(tmp_path):
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(write(tmp_path, "{nope"))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_scan_accepts_physics_and_protocol_scalars():
    exp = parse_config({"protocol": {"name": "GAP_SCAN"},
                        "scan": {"parameterName": "gapDuration", "start": 0, "stop": 1e-5, "steps": 3}})
    assert np.allclose(exp.scan.values, [0, 5e-6, 1e-5])
    parse_config({"scan": {"parameterName": "rydbergAreaError", "start": 0, "stop": 0.2, "steps": 2}})


# -- output formatting ---------------------------------------------------------------------------

def test_floats_round_trip():
    x = 0.1 + 0.2
    assert float(harness.fmt(x)) == x
    assert harness.csv_text(["a", "b"], [(1, x)]) == "a,b\n1,0.30000000000000004\n"


# -- truth tables ----------------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["HCZ_CNOT", "AS_CNOT"])
def test_noiseless_truth_table(tmp_path, name):
    exp = experiment(tmp_path, PhysicsConfig.noiseless(trials=200), ProtocolSpec(name))
    s = harness.run_truth_table(exp)
    assert s["fidelity"] >= 0.999
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert files == ["losses.csv", "manifest.json", "summary.json", "summary.txt", "truth_table.csv"]
    header = (tmp_path / "out" / "truth_table.csv").read_text().splitlines()[0]
    assert header == "input,output,detected,trials,raw,rawStdErr,normalized,normalizedStdErr,ideal"


def test_manifest_echoes_resolved_config(tmp_path):
    exp = experiment(tmp_path, PhysicsConfig(trials=5), ProtocolSpec("CZ"))
    harness.run_truth_table(exp)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["command"] == "truth-table"
    assert manifest["config"]["physics"]["rydbergAreaError"] == PhysicsConfig().rydberg_area_error
    assert manifest["config"]["physics"]["trials"] == 5
    # the manifest is itself a loadable config
    cfg = dict(manifest["config"])
    assert parse_config(cfg).physics == exp.physics


def test_truth_table_scan(tmp_path):
    scan = ScanSpec("rydbergAreaError", 0.0, 0.2, 2)
    s = harness.run_truth_table(experiment(tmp_path, PhysicsConfig(trials=100), scan=scan))
    assert len(s["fidelity"]) == 2 and s["fidelity"][0] > s["fidelity"][1]


def test_format_selection(tmp_path):
    exp = experiment(tmp_path, PhysicsConfig(trials=5), ProtocolSpec("CZ"), formats=("json",))
    harness.run_truth_table(exp)
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["manifest.json", "summary.json"]


def test_truth_table_rejects_bell_protocol(tmp_path):
    with pytest.raises(ConfigError):
        harness.run_truth_table(experiment(tmp_path, protocol=ProtocolSpec("BELL_B1")))


# -- Bell ------------------------------------------------------------------------------------------

@pytest.mark.parametrize("cnot", ["HCZ", "AS"])
def test_noiseless_bell(tmp_path, cnot):
    exp = experiment(tmp_path, PhysicsConfig.noiseless(trials=20), ProtocolSpec("BELL_B1", {"cnot": cnot}))
    s = harness.run_bell(exp)
    assert s["fidelityRaw"] >= 0.999
    assert s["absC1"] == pytest.approx(0.5, abs=1e-3)
    rows = (tmp_path / "out" / "parity_scan.csv").read_text().splitlines()
    assert rows[0] == "phi,parity,parityStdErr" and len(rows) == 13


def test_bell_b2(tmp_path):
    exp = experiment(tmp_path, PhysicsConfig.noiseless(trials=20), ProtocolSpec("BELL_B2"))
    s = harness.run_bell(exp)
    assert s["populations"][1] == pytest.approx(0.5, abs=1e-6)
    assert s["fidelityRaw"] >= 0.999


def test_losses_make_corrected_fidelity_larger(tmp_path):
    s = harness.run_bell(experiment(tmp_path, PhysicsConfig(trials=300)))
    assert s["trace"] < 1
    assert s["fidelityCorrected"] > s["fidelityRaw"]


def _bell_from_raw(physics, trials):
    """Bell fidelity and trace from un-normalized populations and parity."""
    base = ProtocolSpec("BELL_B1")
    raw = run_monte_carlo(base, None, physics, trials=trials).frequencies[:, 0]
    phases = np.linspace(0, np.pi, 12, endpoint=False)
    par = []
    for k, phi in enumerate(phases):
        spec = ProtocolSpec("BELL_B1", {"analysisPhase": float(phi)})
        r = run_monte_carlo(spec, None, physics, trials=trials, stream=k + 1).frequencies[:, 0]
        par.append(metrics.parity(*r))
    fit = metrics.fit_parity_curve(phases, par)
    f, _ = metrics.bell_fidelity(raw[0], raw[3], fit.abs_c1)
    return f, raw.sum()


def test_trace_correction_matches_lossless_run():
    n = 2000
    lossy = PhysicsConfig.noiseless(background_loss_per_run=0.10, trap_off_loss=0.05)
    f_raw, trace = _bell_from_raw(lossy, n)
    f_clean, trace_clean = _bell_from_raw(PhysicsConfig.noiseless(), n)
    assert abs(trace_clean - 1) < 3 * np.sqrt(2 * 0.25 / n)
    # standard error of a fidelity built from ~n binomial samples at p ~ 0.72
    se = 2 * np.sqrt(0.72 * 0.28 / n) / 0.72
    assert abs(metrics.trace_correct(f_raw, trace) - f_clean) < 3 * se


# -- gap scan --------------------------------------------------------------------------------------

def test_gap_scan_without_detuning_is_degenerate(tmp_path):
    exp = experiment(tmp_path, PhysicsConfig.noiseless(gap_detuning=0.0, trials=10),
                     scan=ScanSpec("gapDuration", 0, 40e-6, 9))
    s = harness.run_gap_scan(exp)
    assert s["degenerate"] and s["relativePhase"] is None and s["period"] is None


def test_gap_scan_period_and_phase(tmp_path):
    exp = experiment(tmp_path, PhysicsConfig.noiseless(trials=5))
    s = harness.run_gap_scan(exp, estimator="expected")
    assert s["period"] == pytest.approx(20e-6, rel=0.01)
    assert abs(s["relativePhase"]) == pytest.approx(np.pi, abs=0.1)
    rows = (tmp_path / "out" / "gap_scan.csv").read_text().splitlines()
    assert rows[0] == "gapDuration,input,pTarget1,stdErr" and len(rows) == 1 + 2 * 61


def test_gap_scan_phase_shift_matches_light_shift(tmp_path):
    # finite B: the target 2pi pulse with the control in r picks up an ac Stark
    # phase pi Omega / (2 B), which shifts the conditional phase away from pi
    cfg = PhysicsConfig.noiseless(trials=5, blockade_anchor=PhysicsConfig().blockade_anchor)
    s = harness.run_gap_scan(experiment(tmp_path, cfg), estimator="expected")
    b = blockade_shift(cfg.nominal_separation, cfg)
    shift = np.pi * cfg.rabi_rydberg / (2 * b)
    assert np.pi - abs(s["relativePhase"]) == pytest.approx(shift, rel=0.05)


def test_gap_scan_calibrated_noise_keeps_period(tmp_path):
    s = harness.run_gap_scan(experiment(tmp_path, PhysicsConfig(trials=100)), estimator="expected")
    assert s["period"] == pytest.approx(20e-6, rel=0.01)
    # the thermal spread of B only adds to the nominal light shift
    assert 2.5 < abs(s["relativePhase"]) < np.pi - 0.1


def test_gap_scan_curves_are_antiphase(tmp_path):
    exp = experiment(tmp_path, PhysicsConfig.noiseless(trials=5))
    harness.run_gap_scan(exp, estimator="expected")
    lines = (tmp_path / "out" / "gap_scan.csv").read_text().splitlines()[1:]
    a = np.array([float(r.split(",")[2]) for r in lines if ",01," in r])
    b = np.array([float(r.split(",")[2]) for r in lines if ",11," in r])
    a, b = a - a.mean(), b - b.mean()
    lags = range(-10, 11)
    xc = [np.dot(a, np.roll(b, k)) for k in lags]
    assert list(lags)[int(np.argmin(xc))] == 0


# -- p2 check --------------------------------------------------------------------------------------

def test_p2_check(tmp_path):
    s = harness.run_p2_check(experiment(tmp_path, PhysicsConfig(trials=5000)))
    assert s["analyticP2Nominal"] == pytest.approx(2.6e-3, rel=0.02)
    assert 0.02 <= s["thermalMeanP2"] <= 0.2
    assert set(s["exponentSensitivity"]) == {"p=3", "p=6"}
    assert s["exponentSensitivity"]["p=6"] == pytest.approx(s["thermalMeanP2"])


def test_p2_check_zero_sigma(tmp_path):
    c = PhysicsConfig(sigma_axial=0.0, sigma_transverse=0.0, trials=50)
    s = harness.run_p2_check(experiment(tmp_path, c))
    assert s["thermalMeanP2"] == pytest.approx(s["simulatedP2Nominal"], rel=1e-12)


# -- fixture replay --------------------------------------------------------------------------------

def test_replay_fixture_values():
    s = harness.replay_fixture(harness.default_fixture())
    assert s["fidelity_AS_CNOT"] == pytest.approx(0.73, abs=0.005)
    assert s["fidelity_HCZ_CNOT"] == pytest.approx(0.72, abs=0.005)
    assert s["bellFidelity"] == pytest.approx(0.48, abs=1e-9)
    assert s["bellFidelityCorrected"] == pytest.approx(0.578, abs=0.001)


# -- CLI --------------------------------------------------------------------------------------------

def csv_bodies(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


@pytest.mark.parametrize("args", [
    ["truth-table", "--protocol", "AS_CNOT", "--records"],
    ["gap-scan"],
    ["parity-scan"],
])
def test_cli_outputs_independent_of_workers(tmp_path, args):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--trials", "300", "--seed", "5", "--out", str(a)]) == 0
    assert main(args + ["--trials", "300", "--seed", "5", "--out", str(b), "--workers", "3"]) == 0
    assert csv_bodies(a) and csv_bodies(a) == csv_bodies(b)


def test_cli_seed_changes_output(tmp_path):
    main(["truth-table", "--trials", "200", "--out", str(tmp_path / "a")])
    main(["truth-table", "--trials", "200", "--seed", "3", "--out", str(tmp_path / "b")])
    assert csv_bodies(tmp_path / "a") != csv_bodies(tmp_path / "b")


def test_cli_config_error_record(tmp_path, capsys):
    cfg = write(tmp_path, {"scan": {"parameterName": "nope"}})
    assert main(["truth-table", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "ConfigError" and record["field"] == "scan.parameterName"


def test_cli_bad_trials(tmp_path, capsys):
    assert main(["truth-table", "--trials", "0", "--out", str(tmp_path / "o")]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "physics"


def test_cli_replay_and_summary(tmp_path, capsys):
    assert main(["replay-fixture", "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "fidelity_AS_CNOT: 0.73" in out
    assert (tmp_path / "o" / "replay.csv").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rydberg_cnot", "p2-check", "--trials", "100",
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "analyticP2Nominal" in proc.stdout


def test_shipped_configs_load():
    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "noiseless.json").physics == PhysicsConfig.noiseless()
    assert load_config(root / "calibrated.json").physics == PhysicsConfig()
    assert load_config(root / "parity_scan.json").scan.parameter_name == "analysisPhase"
