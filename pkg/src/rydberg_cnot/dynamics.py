"""Two-atom state space and piecewise-constant pulse evolution.

Each atom carries four levels: the two hyperfine qubit levels ``Q0``/``Q1``,
the Rydberg level ``RYD`` and an inert ``LOST`` pseudo-level that collects
population removed by incoherent channels. Joint states are length-16
complex vectors indexed ``4 * control + target``.

Units are SI throughout: angular frequencies in rad/s, times in s.

Rotation convention: a resonant pulse of area ``theta`` and phase ``phi``
maps ``|g> -> cos(theta/2)|g> - i exp(-i phi) sin(theta/2)|e>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.linalg

Q0, Q1, RYD, LOST = 0, 1, 2, 3
N_LEVELS = 4
DIM = N_LEVELS * N_LEVELS

ATOMS = ("control", "target", "both")
TRANSITIONS = ("ground", "rydberg")

HERMITIAN_TOL = 1e-10


def index(control: int, target: int) -> int:
    return N_LEVELS * control + target


RR = index(RYD, RYD)


@dataclass(frozen=True)
class PulseSpec:
    """One square Rabi pulse addressed to one or both atoms.

    ``ground`` pulses couple Q0 <-> Q1 (two-photon Raman). ``rydberg``
    pulses couple ``ground_level`` <-> RYD; which qubit level that is
    depends on the protocol's hyperfine label map.
    """

    target: str
    transition: str
    area: float
    rabi: float
    phase: float = 0.0
    detuning: float = 0.0
    ground_level: int = Q0
    duration_override: float | None = None

    def __post_init__(self):
        if self.target not in ATOMS:
            raise ValueError(f"unknown pulse target {self.target!r}")
        if self.transition not in TRANSITIONS:
            raise ValueError(f"unknown transition {self.transition!r}")
        if self.ground_level not in (Q0, Q1):
            raise ValueError("ground_level must be Q0 or Q1")
        for name in ("area", "rabi", "phase", "detuning"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"pulse {name} must be finite")
        if self.area < 0:
            raise ValueError("pulse area must be non-negative")
        if self.rabi <= 0:
            raise ValueError("rabi frequency must be positive")
        if self.duration_override is not None and not (
            np.isfinite(self.duration_override) and self.duration_override >= 0
        ):
            raise ValueError("duration override must be finite and >= 0")

    @property
    def duration(self) -> float:
        if self.duration_override is not None:
            return self.duration_override
        return self.area / self.rabi

    @property
    def levels(self) -> tuple[int, int]:
        """(lower, upper) levels coupled by this pulse."""
        if self.transition == "ground":
            return Q0, Q1
        return self.ground_level, RYD


@dataclass(frozen=True)
class GapSpec:
    """Free evolution; each atom's Q1 picks up ``exp(-i detuning * t)``."""

    duration: float
    detuning: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.duration) and self.duration >= 0):
            raise ValueError("gap duration must be finite and >= 0")
        if not np.isfinite(self.detuning):
            raise ValueError("gap detuning must be finite")


@dataclass(frozen=True)
class VirtualZ:
    """Instantaneous frame update: multiply Q1 of the addressed atom(s) by exp(i phase)."""

    target: str
    phase: float

    def __post_init__(self):
        if self.target not in ATOMS:
            raise ValueError(f"unknown target {self.target!r}")


@dataclass(frozen=True)
class InteractionSetting:
    """Blockade shift B (rad/s) applied to the doubly excited |rr> state."""

    blockade_shift: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.blockade_shift) and self.blockade_shift >= 0):
            raise ValueError("blockade shift must be finite and >= 0")


Segment = Union[PulseSpec, GapSpec, VirtualZ]


# -- states -----------------------------------------------------------------

def basis_state(control: int, target: int) -> np.ndarray:
    psi = np.zeros(DIM, dtype=complex)
    psi[index(control, target)] = 1.0
    return psi


def product_state(control: Sequence[complex], target: Sequence[complex]) -> np.ndarray:
    """Joint state from two single-atom amplitude vectors (length <= 4, zero padded)."""
    a = np.zeros(N_LEVELS, dtype=complex)
    b = np.zeros(N_LEVELS, dtype=complex)
    a[: len(control)] = control
    b[: len(target)] = target
    return np.kron(a, b)


def populations(state: np.ndarray) -> np.ndarray:
    """4x4 array of joint level populations, ``[control_level, target_level]``."""
    return (np.abs(state) ** 2).reshape(state.shape[:-1] + (N_LEVELS, N_LEVELS))


def qubit_block(state: np.ndarray) -> np.ndarray:
    """Amplitudes on the computational subspace ordered 00, 01, 10, 11."""
    return state[..., [index(0, 0), index(0, 1), index(1, 0), index(1, 1)]]


# -- hamiltonians -------------------------------------------------------------

def single_atom_hamiltonian(pulse: PulseSpec) -> np.ndarray:
    lo, hi = pulse.levels
    h = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    h[hi, lo] = 0.5 * pulse.rabi * np.exp(-1j * pulse.phase)
    h[lo, hi] = 0.5 * pulse.rabi * np.exp(1j * pulse.phase)
    h[hi, hi] = -pulse.detuning
    return h


def _embed(h_control: np.ndarray | None, h_target: np.ndarray | None) -> np.ndarray:
    eye = np.eye(N_LEVELS)
    out = np.zeros((DIM, DIM), dtype=complex)
    if h_control is not None:
        out += np.kron(h_control, eye)
    if h_target is not None:
        out += np.kron(eye, h_target)
    return out


def build_hamiltonian(pulse: PulseSpec, interaction: InteractionSetting) -> np.ndarray:
    """16x16 rotating-frame Hamiltonian for ``pulse`` plus the |rr> blockade shift."""
    h1 = single_atom_hamiltonian(pulse)
    h = _embed(
        h1 if pulse.target in ("control", "both") else None,
        h1 if pulse.target in ("target", "both") else None,
    )
    h[RR, RR] += interaction.blockade_shift
    return h


def _check_hermitian(h: np.ndarray) -> None:
    if not np.all(np.isfinite(h)):
        raise ValueError("hamiltonian has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(h))))
    if np.max(np.abs(h - h.conj().T)) > HERMITIAN_TOL * scale:
        raise ValueError("hamiltonian is not Hermitian")


def evolve(state: np.ndarray, h: np.ndarray, duration: float) -> np.ndarray:
    """Return ``exp(-i h t) state``."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    _check_hermitian(h)
    return scipy.linalg.expm(-1j * duration * h) @ state


def gap_phases(gap: GapSpec, blockade_shift: float = 0.0) -> np.ndarray:
    """Diagonal of the free-evolution propagator for a gap."""
    single = np.ones(N_LEVELS, dtype=complex)
    single[Q1] = np.exp(-1j * gap.detuning * gap.duration)
    diag = np.kron(single, single)
    diag[RR] *= np.exp(-1j * blockade_shift * gap.duration)
    return diag


def virtual_z_phases(vz: VirtualZ) -> np.ndarray:
    on = np.ones(N_LEVELS, dtype=complex)
    on[Q1] = np.exp(1j * vz.phase)
    off = np.ones(N_LEVELS, dtype=complex)
    a = on if vz.target in ("control", "both") else off
    b = on if vz.target in ("target", "both") else off
    return np.kron(a, b)


def apply_sequence(
    state: np.ndarray, seq: Iterable[Segment], interaction: InteractionSetting
) -> np.ndarray:
    """Compose the segments of ``seq`` left to right on ``state``."""
    psi = np.asarray(state, dtype=complex)
    for seg in seq:
        if isinstance(seg, PulseSpec):
            psi = evolve(psi, build_hamiltonian(seg, interaction), seg.duration)
        elif isinstance(seg, GapSpec):
            psi = gap_phases(seg, interaction.blockade_shift) * psi
        elif isinstance(seg, VirtualZ):
            psi = virtual_z_phases(seg) * psi
        else:
            raise TypeError(f"unsupported sequence element {seg!r}")
    return psi


def sequence_unitary(seq: Iterable[Segment], interaction: InteractionSetting) -> np.ndarray:
    """Full 16x16 propagator of a sequence (columns are evolved basis states)."""
    seq = list(seq)
    return np.stack([apply_sequence(basis_state(*divmod(k, N_LEVELS)), seq, interaction)
                     for k in range(DIM)], axis=1)


# -- batched propagation (Monte Carlo path) --------------------------------------

def batch_propagate(
    states: np.ndarray,
    seg: Segment,
    blockade: np.ndarray,
    area_scale: np.ndarray | None = None,
) -> np.ndarray:
    """Apply one segment to a stack of states with per-row blockade and area scaling.

    ``states`` has shape (n, 16); ``blockade`` (n,) holds B in rad/s and
    ``area_scale`` (n,) multiplies each pulse duration.
    """
    blockade = np.asarray(blockade, dtype=float)
    if isinstance(seg, GapSpec):
        single = np.ones(N_LEVELS, dtype=complex)
        single[Q1] = np.exp(-1j * seg.detuning * seg.duration)
        out = states * np.kron(single, single)
        out[:, RR] *= np.exp(-1j * blockade * seg.duration)
        return out
    if isinstance(seg, VirtualZ):
        return states * virtual_z_phases(seg)

    t = seg.duration * (np.ones(len(states)) if area_scale is None else area_scale)
    h0 = build_hamiltonian(seg, InteractionSetting(0.0))
    couples_rr = np.any(h0[RR, :RR] != 0) or np.any(h0[RR, RR + 1:] != 0)
    if not couples_rr:
        # |rr> is decoupled, so the blockade only adds a phase to it.
        e, v = np.linalg.eigh(h0)
        phases = np.exp(-1j * np.outer(t, e))
        out = ((states @ v.conj()) * phases) @ v.T
        out[:, RR] *= np.exp(-1j * blockade * t)
        return out
    h = np.broadcast_to(h0, (len(states), DIM, DIM)).copy()
    h[:, RR, RR] += blockade
    e, v = np.linalg.eigh(h)
    coeff = np.matmul(states[:, None, :], v.conj())[:, 0, :] * np.exp(-1j * e * t[:, None])
    return np.matmul(v, coeff[:, :, None])[:, :, 0]


def blockade_leakage(rabi: float, blockade: np.ndarray | float) -> np.ndarray:
    """Time-averaged |rr> population during a 2pi Rydberg pulse on the target.

    The control starts in RYD and the target in its Rydberg-coupled level;
    the average is taken exactly over the pulse duration 2pi/rabi from the
    eigendecomposition of the full 16x16 Hamiltonian. For ``B >> rabi`` this
    approaches ``rabi**2 / (2 B**2)``.
    """
    b = np.atleast_1d(np.asarray(blockade, dtype=float))
    pulse = PulseSpec("target", "rydberg", 2 * np.pi, rabi)
    h = np.broadcast_to(build_hamiltonian(pulse, InteractionSetting(0.0)), (len(b), DIM, DIM)).copy()
    h[:, RR, RR] += b
    e, v = np.linalg.eigh(h)
    a = v[:, RR, :] * v.conj()[:, index(RYD, Q0), :]  # <rr|k><k|psi0>
    x = (e[:, :, None] - e[:, None, :]) * pulse.duration
    small = np.abs(x) < 1e-12
    # mean over [0, T] of exp(-i w t) is (1 - exp(-i w T)) / (i w T)
    kernel = np.where(small, 1.0, (1 - np.exp(-1j * x)) / (1j * np.where(small, 1.0, x)))
    out = np.einsum("nk,nl,nkl->n", a, a.conj(), kernel).real
    return out if np.ndim(blockade) else out[0]
