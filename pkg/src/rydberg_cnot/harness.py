"""Config ingestion and experiment runners that write CSV/JSON/text results."""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import metrics as m
from .noise import LOSS_CAUSES, PhysicsConfig, double_excitation_probability, run_monte_carlo, thermal_leakage
from .noise import blockade_shift
from .dynamics import blockade_leakage
from .protocols import InputState, ProtocolSpec, build_protocol, ideal_pattern

FORMATS = ("csv", "json", "text-summary")
TRUTH_TABLE_PROTOCOLS = ("HCZ_CNOT", "AS_CNOT", "CZ", "PREP")
STATE_LABELS = ("00", "01", "10", "11")


class ConfigError(ValueError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


def camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(p[:1].upper() + p[1:] for p in rest)


PHYSICS_KEYS = {camel(f.name): f.name for f in fields(PhysicsConfig)}


@dataclass(frozen=True)
class ScanSpec:
    parameter_name: str
    start: float
    stop: float
    steps: int

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)


@dataclass
class ExperimentConfig:
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    protocol: ProtocolSpec = field(default_factory=lambda: ProtocolSpec("HCZ_CNOT"))
    scan: ScanSpec | None = None
    output: Path = Path("results")
    formats: tuple[str, ...] = FORMATS

    def to_dict(self) -> dict:
        return {
            "physics": {camel(k): v for k, v in self.physics.to_dict().items()},
            "protocol": {"name": self.protocol.name,
                         "parameters": {k: self.protocol.get(k)
                                        for k in ProtocolSpec.allowed(self.protocol.name)}},
            "scan": None if self.scan is None else {
                "parameterName": self.scan.parameter_name, "start": self.scan.start,
                "stop": self.scan.stop, "steps": self.scan.steps},
            "output": str(self.output),
            "formats": list(self.formats),
        }


def _number(where: str, v, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(where, "must be a number")
    if integer and int(v) != v:
        raise ConfigError(where, "must be an integer")
    return int(v) if integer else float(v)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config mapping, filling defaults. Unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = set(data) - {"physics", "protocol", "scan", "output", "formats"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")

    phys_in = data.get("physics", {}) or {}
    if not isinstance(phys_in, dict):
        raise ConfigError("physics", "must be an object")
    kwargs = {}
    for k, v in phys_in.items():
        if k not in PHYSICS_KEYS:
            raise ConfigError(f"physics.{k}", "unknown key")
        integer = k in ("rngSeed", "trials")
        kwargs[PHYSICS_KEYS[k]] = _number(f"physics.{k}", v, integer)
    try:
        physics = PhysicsConfig(**kwargs)
    except ValueError as exc:
        name = next((camel(n) for n in kwargs if n in str(exc)), "")
        raise ConfigError(f"physics.{name}" if name else "physics", str(exc)) from None

    prot_in = data.get("protocol", {}) or {}
    if not isinstance(prot_in, dict):
        raise ConfigError("protocol", "must be an object")
    bad = set(prot_in) - {"name", "parameters"}
    if bad:
        raise ConfigError(f"protocol.{sorted(bad)[0]}", "unknown key")
    try:
        protocol = ProtocolSpec(prot_in.get("name", "HCZ_CNOT"), dict(prot_in.get("parameters", {})))
    except ValueError as exc:
        raise ConfigError("protocol", str(exc)) from None

    scan = None
    if data.get("scan") is not None:
        s = data["scan"]
        if not isinstance(s, dict):
            raise ConfigError("scan", "must be an object")
        bad = set(s) - {"parameterName", "start", "stop", "steps"}
        if bad:
            raise ConfigError(f"scan.{sorted(bad)[0]}", "unknown key")
        name = s.get("parameterName")
        allowed = set(PHYSICS_KEYS) | {"gapDuration", "analysisPhase"} | set(
            ProtocolSpec.allowed(protocol.name))
        if name not in allowed:
            raise ConfigError("scan.parameterName",
                              f"{name!r} is not a physics or protocol scalar")
        for key in ("start", "stop", "steps"):
            if key not in s:
                raise ConfigError(f"scan.{key}", "missing")
        steps = _number("scan.steps", s["steps"], integer=True)
        if steps < 2:
            raise ConfigError("scan.steps", "must be >= 2")
        scan = ScanSpec(name, _number("scan.start", s["start"]), _number("scan.stop", s["stop"]), steps)

    formats = data.get("formats", list(FORMATS))
    if not isinstance(formats, list) or not set(formats) <= set(FORMATS) or not formats:
        raise ConfigError("formats", f"must be a non-empty subset of {list(FORMATS)}")
    output = data.get("output", "results")
    if not isinstance(output, str):
        raise ConfigError("output", "must be a path string")
    return ExperimentConfig(physics, protocol, scan, Path(output), tuple(formats))


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(data)


# -- output helpers ----------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


class Writer:
    def __init__(self, exp: ExperimentConfig, command: str):
        self.exp = exp
        self.out = Path(exp.output)
        self.out.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []
        manifest = {"command": command, "version": __version__, "config": exp.to_dict()}
        self._write("manifest.json", json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")

    def _write(self, name, text):
        (self.out / name).write_text(text)
        self.written.append(name)

    def csv(self, name, header, rows):
        if "csv" in self.exp.formats:
            self._write(name, csv_text(header, rows))

    def summary(self, summary: dict):
        if "json" in self.exp.formats:
            self._write("summary.json", json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        if "text-summary" in self.exp.formats:
            lines = [f"{k}: {_text(v)}" for k, v in summary.items()]
            self._write("summary.txt", "\n".join(lines) + "\n")


def _text(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, np.ndarray):
        return np.array2string(v, precision=4)
    return str(_jsonable(v))


def _with_param(exp: ExperimentConfig, name: str, value: float):
    """Copy of (physics, protocol) with one scalar replaced."""
    if name in PHYSICS_KEYS:
        key = PHYSICS_KEYS[name]
        if key in ("rng_seed", "trials"):
            value = int(round(value))
        return exp.physics.replace(**{key: value}), exp.protocol
    params = dict(exp.protocol.parameters)
    params[name] = value
    return exp.physics, ProtocolSpec(exp.protocol.name, params)


# -- truth table ------------------------------------------------------------------------

def _truth_table(physics, protocol, workers, record=False, stream=0, estimator="sampled"):
    seq, inputs = build_protocol(protocol, physics)
    res = run_monte_carlo(seq, inputs, physics, workers=workers, record=record, stream=stream,
                          estimator=estimator)
    pattern = ideal_pattern(seq, physics)
    s2 = physics.survival ** 2
    raw = res.frequencies
    raw_se = res.standard_errors
    with np.errstate(all="ignore"):
        norm = raw / s2
    norm_se = raw_se / s2
    fid = m.truth_table_fidelity(norm, pattern)
    fid_se = float(np.sqrt(np.sum((pattern * norm_se) ** 2)) / 4)
    return dict(result=res, pattern=pattern, raw=raw, raw_se=raw_se, normalized=norm,
                normalized_se=norm_se, fidelity=fid, fidelity_se=fid_se,
                raw_fidelity=m.truth_table_fidelity(raw, pattern))


def run_truth_table(exp: ExperimentConfig, workers: int = 1, records: bool = False,
                    estimator: str = "sampled") -> dict:
    if exp.protocol.name not in TRUTH_TABLE_PROTOCOLS:
        raise ConfigError("protocol.name", f"truth-table needs one of {TRUTH_TABLE_PROTOCOLS}")
    w = Writer(exp, "truth-table")
    if exp.scan is not None:
        rows = []
        for k, v in enumerate(exp.scan.values):
            phys, prot = _with_param(exp, exp.scan.parameter_name, v)
            t = _truth_table(phys, prot, workers, stream=k, estimator=estimator)
            rows.append((v, t["fidelity"], t["fidelity_se"], float(t["normalized"].sum(0).mean())))
        w.csv("scan.csv", [exp.scan.parameter_name, "fidelity", "fidelityStdErr", "meanTrace"], rows)
        summary = {"protocol": exp.protocol.name, "scanParameter": exp.scan.parameter_name,
                   "fidelity": [r[1] for r in rows], "values": [r[0] for r in rows]}
        w.summary(summary)
        return summary

    t = _truth_table(exp.physics, exp.protocol, workers, record=records, estimator=estimator)
    res = t["result"]
    rows = []
    for col, inp in enumerate(res.inputs):
        for row in range(4):
            rows.append((inp.label, STATE_LABELS[row], int(res.counts[row, col]), res.trials,
                         t["raw"][row, col], t["raw_se"][row, col], t["normalized"][row, col],
                         t["normalized_se"][row, col], int(t["pattern"][row, col])))
    w.csv("truth_table.csv", ["input", "output", "detected", "trials", "raw", "rawStdErr",
                              "normalized", "normalizedStdErr", "ideal"], rows)
    w.csv("losses.csv", ["input", "cause", "count"],
          [(inp.label, c, n) for inp, d in zip(res.inputs, res.loss_breakdown())
           for c, n in d.items()])
    if records and res.records is not None:
        _write_records(w, res.records)
    summary = {
        "protocol": exp.protocol.name,
        "trials": res.trials,
        "estimator": estimator,
        "fidelity": t["fidelity"],
        "fidelityStdErr": t["fidelity_se"],
        "rawFidelity": t["raw_fidelity"],
        "columnTrace": t["normalized"].sum(0),
        "meanColumnTrace": float(t["normalized"].sum(0).mean()),
        "rawMatrix": t["raw"],
        "normalizedMatrix": t["normalized"],
        "idealPattern": t["pattern"],
        "lossBreakdown": dict(zip((i.label for i in res.inputs), res.loss_breakdown())),
        "meanDoubleExcitation": res.mean_leakage,
    }
    w.summary(summary)
    return summary


def _write_records(w: Writer, rec: dict):
    cols = list(rec)
    w.csv("trials.csv", cols, zip(*(rec[c] for c in cols)))


# -- Bell state and parity -------------------------------------------------------------

def _bell_protocol(exp: ExperimentConfig) -> ProtocolSpec:
    name = exp.protocol.name if exp.protocol.name in ("BELL_B1", "BELL_B2") else "BELL_B1"
    params = {k: v for k, v in exp.protocol.parameters.items()
              if k in ProtocolSpec.allowed(name) and k != "analysisPhase"}
    return ProtocolSpec(name, params)


def run_bell(exp: ExperimentConfig, workers: int = 1, records: bool = False,
             estimator: str = "expected") -> dict:
    """Bell-state populations, a parity scan over the analysis phase, and the fidelity.

    The default ``expected`` estimator averages each trial's exact detection
    probability instead of its sampled outcome, which removes projection
    noise from the parity coherence.
    """
    w = Writer(exp, "bell")
    physics = exp.physics
    base = _bell_protocol(exp)
    s2 = physics.survival ** 2

    res = run_monte_carlo(base, None, physics, workers=workers, record=records, estimator=estimator)
    raw = res.frequencies[:, 0]
    pops = raw / s2
    pops_se = res.standard_errors[:, 0] / s2
    w.csv("populations.csv", ["output", "raw", "normalized", "normalizedStdErr"],
          [(STATE_LABELS[k], raw[k], pops[k], pops_se[k]) for k in range(4)])
    if records and res.records is not None:
        _write_records(w, res.records)

    if exp.scan is not None and exp.scan.parameter_name == "analysisPhase":
        phases = exp.scan.values
    else:
        phases = np.linspace(0.0, np.pi, 12, endpoint=False)
    par, par_se = [], []
    for k, phi in enumerate(phases):
        spec = ProtocolSpec(base.name, {**base.parameters, "analysisPhase": float(phi)})
        r = run_monte_carlo(spec, None, physics, workers=workers, stream=k + 1, estimator=estimator)
        p = r.frequencies[:, 0] / s2
        par.append(m.parity(*p))
        # the four outputs come from independent trials
        par_se.append(float(np.sqrt(np.sum(r.standard_errors[:, 0] ** 2)) / s2))
    fit = m.fit_parity_curve(phases, par)
    scan = m.ParityScanResult(np.asarray(phases), np.asarray(par), np.asarray(par_se), fit)
    w.csv("parity_scan.csv", ["phi", "parity", "parityStdErr"],
          zip(scan.phases, scan.parity, scan.stderr))

    p00, p11 = (pops[0], pops[3]) if base.name == "BELL_B1" else (pops[1], pops[2])
    f_raw, entangled = m.bell_fidelity(p00, p11, fit.abs_c1)
    trace = float(pops.sum())
    f_corr = m.trace_correct(f_raw, min(trace, 1.0))
    summary = {
        "protocol": base.name,
        "cnot": base.get("cnot"),
        "trials": res.trials,
        "estimator": estimator,
        "rawPopulations": raw,
        "populations": pops,
        "reC2": fit.re_c2,
        "absC1": fit.abs_c1,
        "xi": fit.xi,
        "fitResidual": fit.residual,
        "fidelityRaw": f_raw,
        "entangled": entangled,
        "trace": trace,
        "fidelityCorrected": f_corr,
    }
    w.summary(summary)
    return summary


# -- gap scan -----------------------------------------------------------------------------

GAP_INPUTS = (InputState(0, 1), InputState(1, 1))


def run_gap_scan(exp: ExperimentConfig, workers: int = 1, estimator: str = "sampled") -> dict:
    """P(target ends in |1>) versus the gap before the last pi/2 pulse, for |01> and |11>."""
    w = Writer(exp, "gap-scan")
    physics = exp.physics
    if exp.scan is not None and exp.scan.parameter_name == "gapDuration":
        gaps = exp.scan.values
    else:
        delta = abs(physics.gap_detuning)
        span = 3 * 2 * np.pi / delta if delta > 0 else 60e-6
        gaps = np.linspace(0.0, span, 61)
    offset = float(exp.protocol.get("secondHalfPhaseOffset")) if exp.protocol.name in (
        "GAP_SCAN", "HCZ_CNOT") else np.pi
    s2 = physics.survival ** 2
    curves = {inp.label: [] for inp in GAP_INPUTS}
    rows = []
    for k, gap in enumerate(gaps):
        spec = ProtocolSpec("GAP_SCAN", {"gapDuration": float(gap), "secondHalfPhaseOffset": offset})
        seq, _ = build_protocol(spec, physics)
        for inp in GAP_INPUTS:
            sel = 2 * inp.control + 1
            r = run_monte_carlo(seq, [inp], physics, workers=workers, stream=k, outputs=[sel],
                                estimator=estimator)
            p = r.frequencies[sel, 0] / s2
            se = float(r.standard_errors[sel, 0]) / s2
            curves[inp.label].append(p)
            rows.append((gap, inp.label, p, se))
    w.csv("gap_scan.csv", ["gapDuration", "input", "pTarget1", "stdErr"], rows)
    fit = m.fit_oscillation(gaps, [curves["01"], curves["11"]])
    summary = {
        "gapDetuning": physics.gap_detuning,
        "expectedPeriod": (2 * np.pi / abs(physics.gap_detuning)) if physics.gap_detuning else None,
        "degenerate": fit.relative_phase is None,
        "period": fit.period if fit.relative_phase is not None else None,
        "relativePhase": fit.relative_phase,
        "amplitudes": fit.amplitudes,
    }
    w.summary(summary)
    return summary


# -- blockade leakage check ---------------------------------------------------------------

def run_p2_check(exp: ExperimentConfig, workers: int = 1) -> dict:
    w = Writer(exp, "p2-check")
    physics = exp.physics
    omega = physics.rabi_rydberg
    b_nom = blockade_shift(physics.nominal_separation, physics)
    analytic = double_excitation_probability(omega, b_nom)
    simulated_nominal = float(blockade_leakage(omega, b_nom))
    sep, b, p2 = thermal_leakage(physics)
    w.csv("p2_trials.csv", ["trialIndex", "separation", "blockadeShift", "p2Simulated", "p2Analytic"],
          zip(range(len(sep)), sep, b, p2, double_excitation_probability(omega, b)))
    sensitivity = {}
    for p in (3.0, 6.0):
        _, _, pp = thermal_leakage(physics.replace(interaction_exponent=p))
        sensitivity[f"p={p:g}"] = float(pp.mean())
    summary = {
        "rabiRydberg": omega,
        "nominalBlockadeShift": b_nom,
        "analyticP2Nominal": analytic,
        "simulatedP2Nominal": simulated_nominal,
        "thermalMeanP2": float(p2.mean()),
        "thermalMedianP2": float(np.median(p2)),
        "fractionAbove10umAxial": float(np.mean(sep > np.hypot(physics.nominal_separation, 10.0))),
        "exponentSensitivity": sensitivity,
        "trials": len(sep),
    }
    w.summary(summary)
    return summary


# -- fixture replay ----------------------------------------------------------------------

def default_fixture() -> dict:
    return json.loads(resources.files("rydberg_cnot").joinpath("data/reported_fixture.json").read_text())


def replay_fixture(fixture: dict) -> dict:
    """Recompute reported figures from printed matrices and numbers; no simulation."""
    out: dict[str, Any] = {}
    patterns = {"CNOT": m.CNOT_PATTERN, "INVERTED_CNOT": m.INVERTED_CNOT_PATTERN,
                "IDENTITY": np.eye(4)}
    for name, entry in fixture.get("truthTables", {}).items():
        f = m.truth_table_fidelity(np.array(entry["matrix"]), patterns[entry["pattern"]])
        out[f"fidelity_{name}"] = f
        out[f"columnSums_{name}"] = np.array(entry["matrix"]).sum(axis=0)
    bell = fixture.get("bell")
    if bell:
        f, ent = m.bell_fidelity(bell["p00PlusP11"] / 2, bell["p00PlusP11"] / 2, bell["absC1"])
        out["bellFidelity"] = f
        out["entangled"] = ent
        out["bellFidelityCorrected"] = m.trace_correct(f, bell["trace"])
    return out


def run_replay(exp: ExperimentConfig, fixture_path=None) -> dict:
    w = Writer(exp, "replay-fixture")
    fixture = json.loads(Path(fixture_path).read_text()) if fixture_path else default_fixture()
    summary = replay_fixture(fixture)
    w.csv("replay.csv", ["quantity", "value"],
          [(k, v) for k, v in summary.items() if isinstance(v, float)])
    w.summary(summary)
    return summary
