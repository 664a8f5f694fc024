"""Pulse-sequence builders for the blockade gates.

Sequences are plain data (``PulseSequence``); execution lives in
``dynamics`` and ``noise``. Every sequence carries the hyperfine label map
of its protocol, because which qubit level is f=2 decides both the
Rydberg coupling and which level the blow-away light removes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

import numpy as np

from .dynamics import (
    Q0,
    Q1,
    GapSpec,
    InteractionSetting,
    PulseSpec,
    Segment,
    VirtualZ,
    apply_sequence,
    basis_state,
    populations,
)

PROTOCOL_NAMES = ("CZ", "HCZ_CNOT", "AS_CNOT", "BELL_B1", "BELL_B2", "GAP_SCAN", "PREP")

# Allowed parameters and defaults per protocol. analysisPhase=None means no analysis pulses.
_PARAMETERS: dict[str, dict[str, Any]] = {
    "CZ": {},
    "HCZ_CNOT": {"secondHalfPhaseOffset": np.pi},
    "AS_CNOT": {"frameCorrection": True},
    "BELL_B1": {"cnot": "HCZ", "analysisPhase": None, "secondHalfPhaseOffset": np.pi,
                "frameCorrection": True},
    "BELL_B2": {"cnot": "HCZ", "analysisPhase": None, "secondHalfPhaseOffset": np.pi,
                "frameCorrection": True},
    "GAP_SCAN": {"gapDuration": 0.0, "secondHalfPhaseOffset": np.pi},
    "PREP": {},
}


@dataclass(frozen=True)
class LabelMap:
    """Which logical qubit level is the f=2 hyperfine state.

    The Rydberg lasers couple f=2 and the blow-away light removes it, so
    the surviving (detected) level is the other one.
    """

    f2_level: int

    @property
    def rydberg_level(self) -> int:
        return self.f2_level

    @property
    def survivor_level(self) -> int:
        return 1 - self.f2_level


# H-C_Z: |0>,|1> = f=1,f=2.  A-S: |0>,|1> = f=2,f=1.
HCZ_LABELS = LabelMap(f2_level=Q1)
AS_LABELS = LabelMap(f2_level=Q0)


@dataclass(frozen=True)
class InputState:
    """Two-atom input; ``control='plus_i'`` means (|0> + i|1>)/sqrt(2)."""

    control: int | str
    target: int

    def __post_init__(self):
        if self.control not in (0, 1, "plus_i"):
            raise ValueError(f"invalid control input {self.control!r}")
        if self.target not in (0, 1):
            raise ValueError(f"invalid target input {self.target!r}")

    @property
    def code(self) -> int:
        c = 2 if self.control == "plus_i" else self.control
        return 2 * c + self.target

    @property
    def label(self) -> str:
        c = "+i" if self.control == "plus_i" else str(self.control)
        return f"{c}{self.target}"


BASIS_INPUTS = tuple(InputState(c, t) for c in (0, 1) for t in (0, 1))


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[Segment, ...]
    labels: LabelMap
    name: str = ""

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def __add__(self, other: "PulseSequence") -> "PulseSequence":
        if other.labels != self.labels:
            raise ValueError("cannot join sequences with different label maps")
        return PulseSequence(self.segments + other.segments, self.labels, self.name)

    @property
    def pulses(self) -> list[PulseSpec]:
        return [s for s in self.segments if isinstance(s, PulseSpec)]

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments if not isinstance(s, VirtualZ))


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in PROTOCOL_NAMES:
            raise ValueError(f"unknown protocol {self.name!r}")
        unknown = set(self.parameters) - set(_PARAMETERS[self.name])
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        cnot = self.parameters.get("cnot")
        if cnot is not None and cnot not in ("HCZ", "AS"):
            raise ValueError("cnot must be 'HCZ' or 'AS'")

    def get(self, key: str) -> Any:
        return self.parameters.get(key, _PARAMETERS[self.name][key])

    @staticmethod
    def allowed(name: str) -> tuple[str, ...]:
        return tuple(_PARAMETERS[name])


def _ryd(atom, area, config, labels, phase=0.0) -> PulseSpec:
    return PulseSpec(atom, "rydberg", area, config.rabi_rydberg, phase=phase,
                     ground_level=labels.rydberg_level)


def _raman(atom, area, config, phase=0.0) -> PulseSpec:
    return PulseSpec(atom, "ground", area, config.rabi_ground, phase=phase)


def cz_sequence(config, labels: LabelMap = HCZ_LABELS) -> PulseSequence:
    """Control pi, target 2pi, control pi on the Rydberg transition."""
    return PulseSequence((
        _ryd("control", np.pi, config, labels),
        _ryd("target", 2 * np.pi, config, labels),
        _ryd("control", np.pi, config, labels),
    ), labels, "CZ")


def hcz_cnot_sequence(config, phase_offset: float = np.pi, gap: GapSpec | None = None) -> PulseSequence:
    """pi/2 on the target, C_Z, pi/2 on the target with a phase offset.

    An offset of pi (the default) gives the orientation where the target
    flips for control |0>; an offset of 0 flips it for control |1>. A gap,
    if given, goes before the final pi/2 pulse.
    """
    first = _raman("target", np.pi / 2, config)
    last = _raman("target", np.pi / 2, config, phase=phase_offset)
    middle = cz_sequence(config, HCZ_LABELS).segments
    segs = (first,) + middle + ((gap,) if gap is not None else ()) + (last,)
    return PulseSequence(segs, HCZ_LABELS, "HCZ_CNOT")


def as_cnot_sequence(config, frame_correction: bool = True) -> PulseSequence:
    """Controlled amplitude swap: 7 pulses, with R_r R_g R_r R_g R_r on the target.

    Without blockade the target swap leaves a factor i on control |1>;
    ``frame_correction`` removes it with a virtual Z on the control.
    """
    lab = AS_LABELS
    segs = [
        _ryd("control", np.pi, config, lab),
        _ryd("target", np.pi, config, lab),
        _raman("target", np.pi, config),
        _ryd("target", np.pi, config, lab),
        _raman("target", np.pi, config),
        _ryd("target", np.pi, config, lab),
        _ryd("control", np.pi, config, lab),
    ]
    if frame_correction:
        segs.append(VirtualZ("control", -np.pi / 2))
    return PulseSequence(tuple(segs), lab, "AS_CNOT")


def analysis_pulses(phase: float, config, labels: LabelMap = HCZ_LABELS,
                    mirrored: bool = False) -> PulseSequence:
    """pi/2 ground pulses at phase ``phase``, control first then target.

    With ``mirrored`` the target pulse uses ``-phase``; the parity then
    oscillates at 2 phi through the |01>,|10> coherence instead of the
    |00>,|11> one, which is what a |B2> analysis needs.
    """
    return PulseSequence((
        _raman("control", np.pi / 2, config, phase=phase),
        _raman("target", np.pi / 2, config, phase=-phase if mirrored else phase),
    ), labels, "ANALYSIS")


def gap_scan_sequence(gap_duration: float, config, phase_offset: float = np.pi) -> PulseSequence:
    if gap_duration < 0:
        raise ValueError("gap duration must be >= 0")
    seq = hcz_cnot_sequence(config, phase_offset, GapSpec(gap_duration, config.gap_detuning))
    return PulseSequence(seq.segments, seq.labels, "GAP_SCAN")


def ideal_truth_table(seq: PulseSequence, config) -> np.ndarray:
    """Noise-free 4x4 population table of ``seq`` with a near-perfect blockade.

    Columns are inputs (00, 01, 10, 11) and rows outputs.
    """
    interaction = InteractionSetting(1e4 * config.rabi_rydberg)
    table = np.empty((4, 4))
    for col, inp in enumerate(BASIS_INPUTS):
        pops = populations(apply_sequence(basis_state(inp.control, inp.target), seq, interaction))
        table[:, col] = pops[:2, :2].ravel()
    return table


def ideal_pattern(seq: PulseSequence, config) -> np.ndarray:
    """0/1 permutation pattern of the ideal truth table."""
    table = ideal_truth_table(seq, config)
    pattern = (table > 0.5).astype(float)
    if not np.array_equal(pattern.sum(axis=0), np.ones(4)) or not np.array_equal(
        pattern.sum(axis=1), np.ones(4)
    ):
        raise ValueError(f"sequence {seq.name!r} is not a classical permutation")
    return pattern


def _cnot_for(spec: ProtocolSpec, config) -> PulseSequence:
    if spec.get("cnot") == "AS":
        return as_cnot_sequence(config, bool(spec.get("frameCorrection")))
    return hcz_cnot_sequence(config, float(spec.get("secondHalfPhaseOffset")))


def bell_target_input(which: str, cnot: PulseSequence, config) -> int:
    """Target input that makes control |0> map to |00> (B1) or |01> (B2)."""
    want = {"B1": 0, "B2": 1}[which]
    pattern = ideal_pattern(cnot, config)
    # columns 0, 1 are inputs |00>, |01>; rows 0, 1 are outputs |00>, |01>
    for t in (0, 1):
        if pattern[want, t]:
            return t
    raise ValueError("no target input yields the requested Bell state")


def bell_prep_sequence(which: str, config, cnot: PulseSequence | None = None) -> PulseSequence:
    """pi/2 on the control (|0> -> (|0> + i|1>)/sqrt2), then the CNOT.

    Start from ``|0, bell_target_input(which, cnot)>``.
    """
    cnot = cnot if cnot is not None else hcz_cnot_sequence(config)
    prep = _raman("control", np.pi / 2, config, phase=np.pi)
    return PulseSequence((prep,) + cnot.segments, cnot.labels, f"BELL_{which}")


def build_protocol(spec: ProtocolSpec, config) -> tuple[PulseSequence, list[InputState]]:
    """Gate sequence plus its default list of inputs for the Monte Carlo runner.

    Bell protocols return just the CNOT (plus optional analysis pulses);
    the control superposition is made during state preparation.
    """
    name = spec.name
    if name == "PREP":
        return PulseSequence((), HCZ_LABELS, "PREP"), list(BASIS_INPUTS)
    if name == "CZ":
        return cz_sequence(config), list(BASIS_INPUTS)
    if name == "HCZ_CNOT":
        return hcz_cnot_sequence(config, float(spec.get("secondHalfPhaseOffset"))), list(BASIS_INPUTS)
    if name == "AS_CNOT":
        return as_cnot_sequence(config, bool(spec.get("frameCorrection"))), list(BASIS_INPUTS)
    if name == "GAP_SCAN":
        seq = gap_scan_sequence(float(spec.get("gapDuration")), config,
                                float(spec.get("secondHalfPhaseOffset")))
        return seq, [InputState(0, 1), InputState(1, 1)]
    which = name.split("_")[1]
    cnot = _cnot_for(spec, config)
    t = bell_target_input(which, cnot, config)
    seq = PulseSequence(cnot.segments, cnot.labels, name)
    phi = spec.get("analysisPhase")
    if phi is not None:
        seq = seq + analysis_pulses(float(phi), config, cnot.labels, mirrored=which == "B2")
    return seq, [InputState("plus_i", t)]
