"""Physical randomness and the Monte Carlo measurement pipeline.

One trial is: sample atom positions (fixing the blockade shift), pump
both atoms into f=2 with a per-atom failure probability, apply the
preparation pulses, the gate, photoionize any Rydberg population when the
traps come back, apply the selection pulses, blow away f=2 and check
whether both atoms are still present.

All randomness of a trial comes from a generator seeded by
``(rng_seed, *key, trial_index)``, so results do not depend on how the
trials are split between workers.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import dynamics as dyn
from .dynamics import LOST, Q0, RYD, PulseSpec
from .protocols import (
    BASIS_INPUTS,
    InputState,
    LabelMap,
    ProtocolSpec,
    PulseSequence,
    build_protocol,
)

TWO_PI = 2 * np.pi

LOSS_CAUSES = ("none", "background", "trapOff", "photoionization", "blowAway")
NONE, BACKGROUND, TRAP_OFF, PHOTOIONIZATION, BLOW_AWAY = range(5)

CHUNK = 256  # trials per work unit; fixed so results never depend on worker count


@dataclass(frozen=True)
class PhysicsConfig:
    """Calibrated physical parameters. Angular frequencies in rad/s, lengths in um."""

    rabi_ground: float = np.pi / 600e-9  # ~600 ns pi pulse
    rabi_rydberg: float = TWO_PI * 0.67e6
    blockade_anchor: float = TWO_PI * 9.3e6
    anchor_separation: float = 10.2
    interaction_exponent: float = 6.0
    nominal_separation: float = 10.2
    sigma_transverse: float = 0.3
    sigma_axial: float = 4.0
    prep_error_per_atom: float = 0.0871  # calibrate_prep_error(PhysicsConfig(), trials=4000)
    pulse_area_error: float = 0.03
    rydberg_area_error: float = 0.20
    background_loss_per_run: float = 0.10
    trap_off_loss: float = 0.05
    gap_detuning: float = TWO_PI * 50e3
    rng_seed: int = 2009
    trials: int = 1000
    # documentation only
    trap_depth_mK: float = 5.1
    trap_waist_um: float = 3.0
    temperature_uK: float = 200.0

    def __post_init__(self):
        for name in ("prep_error_per_atom", "background_loss_per_run", "trap_off_loss"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.background_loss_per_run + self.trap_off_loss > 1.0:
            raise ValueError("background_loss_per_run + trap_off_loss must not exceed 1")
        for name in ("sigma_transverse", "sigma_axial", "pulse_area_error", "rydberg_area_error"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("rabi_ground", "rabi_rydberg", "blockade_anchor", "anchor_separation",
                     "nominal_separation"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive")
        if not (1 <= self.interaction_exponent <= 12):
            raise ValueError("interaction_exponent must lie in [1, 12]")
        if not np.isfinite(self.gap_detuning):
            raise ValueError("gap_detuning must be finite")
        if int(self.rng_seed) != self.rng_seed or self.rng_seed < 0:
            raise ValueError("rng_seed must be a non-negative integer")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError("trials must be a positive integer")

    @property
    def survival(self) -> float:
        """Per-atom probability of surviving the gate-independent losses."""
        return 1.0 - self.background_loss_per_run - self.trap_off_loss

    def replace(self, **changes) -> "PhysicsConfig":
        return replace(self, **changes)

    @classmethod
    def noiseless(cls, **changes) -> "PhysicsConfig":
        """No randomness, no losses and a blockade 10^4 times the Rydberg Rabi frequency."""
        base = cls()
        kw = dict(
            sigma_transverse=0.0, sigma_axial=0.0, prep_error_per_atom=0.0,
            pulse_area_error=0.0, rydberg_area_error=0.0, background_loss_per_run=0.0, trap_off_loss=0.0,
            blockade_anchor=1e4 * base.rabi_rydberg,
        )
        kw.update(changes)
        return replace(base, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def config_field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(PhysicsConfig))


# -- single-quantity helpers ---------------------------------------------------

def trial_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, key)])


def blockade_shift(r, config: PhysicsConfig):
    """B(R) = B0 (R0 / R)^p in rad/s."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("separation must be positive")
    out = config.blockade_anchor * (config.anchor_separation / r) ** config.interaction_exponent
    return float(out) if out.ndim == 0 else out


def double_excitation_probability(omega, blockade):
    """Perturbative blockade leakage Omega^2 / (2 B^2), clamped to 1; B = 0 gives 1."""
    omega = np.asarray(omega, dtype=float)
    b = np.asarray(blockade, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(b > 0, omega ** 2 / (2 * np.where(b > 0, b, 1.0) ** 2), 1.0)
    p = np.minimum(p, 1.0)
    return float(p) if p.ndim == 0 else p


# -- per-trial draws -------------------------------------------------------------

@dataclass
class TrialDraws:
    positions: np.ndarray  # (n, 2, 3) um
    flip_u: np.ndarray  # (n, 2)
    loss_u: np.ndarray  # (n, 2)
    outcome_u: np.ndarray  # (n,)
    area_z: np.ndarray  # (n, k)

    @property
    def separation(self) -> np.ndarray:
        return np.linalg.norm(self.positions[:, 1] - self.positions[:, 0], axis=1)


def draw_trials(config: PhysicsConfig, trial_ids: Sequence[int], key: Sequence[int] = (),
                n_area: int = 0) -> TrialDraws:
    n = len(trial_ids)
    u = np.empty((n, 5))
    z = np.empty((n, 6 + n_area))
    for k, i in enumerate(trial_ids):
        g = trial_rng(config.rng_seed, *key, i)
        u[k] = g.random(5)
        z[k] = g.standard_normal(6 + n_area)
    sig = np.array([config.sigma_transverse, config.sigma_transverse, config.sigma_axial])
    site = np.array([[0.0, 0.0, 0.0], [config.nominal_separation, 0.0, 0.0]])
    positions = site[None] + z[:, :6].reshape(n, 2, 3) * sig
    return TrialDraws(positions, u[:, 0:2], u[:, 2:4], u[:, 4], z[:, 6:])


def sample_positions(config: PhysicsConfig, trial_index: int, key: Sequence[int] = ()):
    """(posA, posB) in um for one trial."""
    d = draw_trials(config, [trial_index], key)
    return d.positions[0, 0], d.positions[0, 1]


def sample_separations(config: PhysicsConfig, trial_ids: Sequence[int], key: Sequence[int] = ()):
    return draw_trials(config, trial_ids, key).separation


# -- pipeline stages (batched over trials) ------------------------------------------

def prep_pulses(inp: InputState, labels: LabelMap, config: PhysicsConfig) -> list[PulseSpec | None]:
    """Ground pulses taking each atom from its pumped f=2 level to the requested input."""
    out: list[PulseSpec | None] = []
    for atom, want in (("control", inp.control), ("target", inp.target)):
        if want == "plus_i":
            # from Q0 phase pi, from Q1 phase 0, gives (|0> + i|1>)/sqrt2 up to global phase
            phase = np.pi if labels.f2_level == Q0 else 0.0
            out.append(PulseSpec(atom, "ground", np.pi / 2, config.rabi_ground, phase=phase))
        elif want != labels.f2_level:
            out.append(PulseSpec(atom, "ground", np.pi, config.rabi_ground))
        else:
            out.append(None)
    return out


def selection_pulses(selected: int, labels: LabelMap, config: PhysicsConfig) -> list[PulseSpec | None]:
    """pi pulses moving the selected output to the level that survives blow-away."""
    bits = divmod(selected, 2)
    return [PulseSpec(atom, "ground", np.pi, config.rabi_ground) if bit == labels.f2_level else None
            for atom, bit in zip(("control", "target"), bits)]


def _apply_optional(states, pulses, blockade, scales):
    for p, s in zip(pulses, scales.T):
        if p is not None:
            states = dyn.batch_propagate(states, p, blockade, s)
    return states


def pulse_sigma(pulse: PulseSpec, config: PhysicsConfig) -> float:
    """Fractional area spread of a pulse; Rydberg pulses add their own term in quadrature."""
    if pulse.transition == "rydberg":
        return float(np.hypot(config.pulse_area_error, config.rydberg_area_error))
    return config.pulse_area_error


def _area_scales(config: PhysicsConfig, z: np.ndarray, pulses=None) -> np.ndarray:
    if pulses is None:
        sig = config.pulse_area_error
    else:
        sig = np.array([pulse_sigma(p, config) for p in pulses])
    return np.clip(1.0 + sig * z, 0.0, None)


def _initial_states(inp: InputState, labels: LabelMap, flips: np.ndarray) -> np.ndarray:
    pumped = labels.f2_level
    lv = np.where(flips, 1 - pumped, pumped)  # (n, 2)
    states = np.zeros((len(flips), dyn.DIM), dtype=complex)
    states[np.arange(len(flips)), dyn.N_LEVELS * lv[:, 0] + lv[:, 1]] = 1.0
    return states


def photoionize(states: np.ndarray) -> np.ndarray:
    """Move Rydberg amplitude of each atom into its LOST level (LOST starts empty)."""
    s = states.reshape(-1, 4, 4).copy()
    s[:, [RYD, LOST], :] = s[:, [LOST, RYD], :]
    s[:, :, [RYD, LOST]] = s[:, :, [LOST, RYD]]
    return s.reshape(-1, dyn.DIM)


def _classical_losses(draws, config):
    bg = draws.loss_u < config.background_loss_per_run
    to = ~bg & (draws.loss_u < config.background_loss_per_run + config.trap_off_loss)
    return bg, to


def _measure(states, selected, labels, config, draws, sel_scales, blockade):
    """Selection, losses, blow-away and detection.

    Returns (detected, cause, p_expected) where ``p_expected`` is the exact
    detection probability given the trial's positions, pumping flips and
    pulse errors, with the independent classical losses averaged out.
    """
    sel = selection_pulses(selected, labels, config)
    states = _apply_optional(states, sel, blockade, sel_scales)
    probs = np.abs(states) ** 2
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    idx = np.minimum((cdf < draws.outcome_u[:, None]).sum(axis=1), dyn.DIM - 1)
    levels = np.stack(divmod(idx, dyn.N_LEVELS), axis=1)  # (n, 2)

    bg, to = _classical_losses(draws, config)
    ion = (levels == LOST) | (levels == RYD)
    blown = levels == labels.f2_level

    cause = np.full(len(idx), NONE)
    for mask, code in ((blown, BLOW_AWAY), (ion, PHOTOIONIZATION), (to, TRAP_OFF), (bg, BACKGROUND)):
        cause = np.where(mask.any(axis=1), code, cause)
    s = labels.survivor_level
    p_expected = probs[:, dyn.index(s, s)] * config.survival ** 2
    return cause == NONE, cause, p_expected


def n_area_draws(seq: PulseSequence) -> int:
    return 2 + len(seq.pulses) + 2


def simulate_block(
    seq: PulseSequence,
    inp: InputState,
    selected: int,
    config: PhysicsConfig,
    trial_ids: Sequence[int],
    key: Sequence[int] = (),
    flips: tuple[bool, bool] | None = None,
) -> dict:
    """Run a block of trials for one (input, selected output) pair.

    Each trial yields a sampled detection outcome and ``p_expected``, its
    exact detection probability conditional on the sampled physics.
    ``flips`` forces the pumping-failure pattern (used for calibration).
    """
    labels = seq.labels
    draws = draw_trials(config, trial_ids, key, n_area_draws(seq))
    sep = draws.separation
    blockade = blockade_shift(sep, config)
    n_gate = len(seq.pulses)
    scales = _area_scales(config, draws.area_z)
    scales[:, 2:2 + n_gate] = _area_scales(config, draws.area_z[:, 2:2 + n_gate], seq.pulses)

    if flips is None:
        flip = draws.flip_u < config.prep_error_per_atom
    else:
        flip = np.broadcast_to(np.asarray(flips, dtype=bool), (len(trial_ids), 2))
    states = _initial_states(inp, labels, flip)
    states = _apply_optional(states, prep_pulses(inp, labels, config), blockade, scales[:, :2])

    col = 2
    for seg in seq:
        if isinstance(seg, PulseSpec):
            states = dyn.batch_propagate(states, seg, blockade, scales[:, col])
            col += 1
        else:
            states = dyn.batch_propagate(states, seg, blockade)
    states = photoionize(states)
    detected, cause, p_expected = _measure(states, selected, labels, config, draws,
                                           scales[:, 2 + n_gate:], blockade)
    return {"separation": sep, "blockade": blockade, "detected": detected, "cause": cause,
            "p_expected": p_expected}


# -- single-trial API ---------------------------------------------------------------

@dataclass(frozen=True)
class TrialOutcome:
    selected_state: int
    detected_both_atoms: bool
    loss_cause: str


def prepare_input(basis: InputState, config: PhysicsConfig, trial_index: int,
                  labels: LabelMap, key: Sequence[int] = ()) -> np.ndarray:
    """Pumping errors and preparation pulses for one trial; returns the joint state."""
    draws = draw_trials(config, [trial_index], key, 2)
    flip = draws.flip_u < config.prep_error_per_atom
    blockade = blockade_shift(draws.separation, config)
    states = _initial_states(basis, labels, flip)
    states = _apply_optional(states, prep_pulses(basis, labels, config), blockade,
                             _area_scales(config, draws.area_z))
    return states[0]


def measure_with_selection(final_state: np.ndarray, selected: int, config: PhysicsConfig,
                           trial_index: int, labels: LabelMap, key: Sequence[int] = ()) -> TrialOutcome:
    """Photoionize, select, apply losses and blow-away, then detect both atoms."""
    final_state = np.asarray(final_state, dtype=complex)
    if abs(np.linalg.norm(final_state) - 1.0) > 1e-9:
        raise ValueError("final state is not normalized")
    if not 0 <= selected < 4:
        raise ValueError("selected must be in 0..3")
    draws = draw_trials(config, [trial_index], key, 2)
    blockade = blockade_shift(draws.separation, config)
    states = photoionize(final_state[None, :])
    detected, cause, _ = _measure(states, selected, labels, config, draws,
                                  _area_scales(config, draws.area_z), blockade)
    return TrialOutcome(selected, bool(detected[0]), LOSS_CAUSES[int(cause[0])])


# -- Monte Carlo driver -----------------------------------------------------------------

ESTIMATORS = ("sampled", "expected")


@dataclass
class MonteCarloResult:
    """Aggregated trials. Rows of the tables are selected outputs, columns inputs.

    ``counts`` holds sampled detections. ``expected_sum``/``expected_sumsq``
    accumulate the per-trial exact detection probabilities, a lower-variance
    estimator of the same quantity. ``estimator`` picks which one
    ``frequencies`` reports.
    """

    inputs: list[InputState]
    labels: LabelMap
    trials: int
    counts: np.ndarray
    expected_sum: np.ndarray
    expected_sumsq: np.ndarray
    loss_counts: np.ndarray  # (n_inputs, 5) summed over selected outputs
    mean_leakage: float
    estimator: str = "sampled"
    records: dict | None = None

    @property
    def frequencies(self) -> np.ndarray:
        if self.estimator == "expected":
            return self.expected_sum / self.trials
        return self.counts / self.trials

    @property
    def standard_errors(self) -> np.ndarray:
        n = self.trials
        if self.estimator == "expected":
            mean = self.expected_sum / n
            var = np.clip(self.expected_sumsq / n - mean ** 2, 0, None)
            return np.sqrt(var / n)
        p = self.counts / n
        return np.sqrt(p * (1 - p) / n)

    @property
    def column_trace(self) -> np.ndarray:
        return self.frequencies.sum(axis=0)

    def loss_breakdown(self) -> list[dict[str, int]]:
        return [dict(zip(LOSS_CAUSES, map(int, row))) for row in self.loss_counts]


def _run_task(task):
    seq, inp, selected, config, start, stop, key = task
    ids = range(start, stop)
    res = simulate_block(seq, inp, selected, config, ids, key=(*key, inp.code, selected))
    res["leakage"] = dyn.blockade_leakage(config.rabi_rydberg, res["blockade"])
    return res


def run_monte_carlo(
    protocol: ProtocolSpec | PulseSequence,
    inputs: Sequence[InputState] | None,
    config: PhysicsConfig,
    *,
    trials: int | None = None,
    workers: int = 1,
    stream: int = 0,
    record: bool = False,
    outputs: Sequence[int] | None = None,
    estimator: str = "sampled",
) -> MonteCarloResult:
    """Estimate the measured output-probability table of a protocol.

    For every input and each of the four selected outputs, ``trials``
    independent runs of the full prepare/gate/select/detect sequence are
    simulated. ``stream`` separates otherwise identical experiments (for
    example the points of a scan). ``outputs`` restricts which selected
    outputs are simulated; rows for the others stay zero.
    """
    if isinstance(protocol, ProtocolSpec):
        seq, default_inputs = build_protocol(protocol, config)
    else:
        seq, default_inputs = protocol, list(BASIS_INPUTS)
    inputs = list(inputs) if inputs is not None else default_inputs
    n = int(trials if trials is not None else config.trials)
    if n < 1:
        raise ValueError("trials must be >= 1")
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}")

    sels = list(range(4)) if outputs is None else [int(o) for o in outputs]
    if any(not 0 <= o < 4 for o in sels):
        raise ValueError("outputs must be in 0..3")
    key = (int(stream),)
    tasks = [(seq, inp, sel, config, s, min(s + CHUNK, n), key)
             for inp in inputs for sel in sels for s in range(0, n, CHUNK)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = list(map(_run_task, tasks))

    counts = np.zeros((4, len(inputs)), dtype=np.int64)
    esum = np.zeros((4, len(inputs)))
    esq = np.zeros((4, len(inputs)))
    loss = np.zeros((len(inputs), len(LOSS_CAUSES)), dtype=np.int64)
    leak_sum = 0.0
    rows = {k: [] for k in ("trialIndex", "input", "selected", "detected", "lossCause",
                            "sampledSeparation", "sampledB")}
    for (_, inp, sel, _, start, stop, _), res in zip(tasks, results):
        col = inputs.index(inp)
        counts[sel, col] += int(res["detected"].sum())
        esum[sel, col] += float(res["p_expected"].sum())
        esq[sel, col] += float((res["p_expected"] ** 2).sum())
        loss[col] += np.bincount(res["cause"], minlength=len(LOSS_CAUSES))
        leak_sum += float(res["leakage"].sum())
        if record:
            rows["trialIndex"].extend(range(start, stop))
            rows["input"].extend([inp.label] * (stop - start))
            rows["selected"].extend([f"{sel >> 1}{sel & 1}"] * (stop - start))
            rows["detected"].extend(res["detected"].astype(int).tolist())
            rows["lossCause"].extend(LOSS_CAUSES[c] for c in res["cause"])
            rows["sampledSeparation"].extend(res["separation"].tolist())
            rows["sampledB"].extend(res["blockade"].tolist())
    total = len(inputs) * len(sels) * n
    return MonteCarloResult(inputs, seq.labels, n, counts, esum, esq, loss, leak_sum / total,
                            estimator, rows if record else None)


# -- calibration ------------------------------------------------------------------------

def expected_prep_diagonal(config: PhysicsConfig, trials: int = 2000):
    """Return f(eps): expected loss-normalized mean diagonal of the preparation table.

    The pulse-error average is estimated once per pumping-failure pattern
    with fixed draws, so f is an exact polynomial in eps.
    """
    empty = build_protocol(ProtocolSpec("PREP"), config)[0]
    # normalized data: gate-independent losses divide out exactly
    lossless = config.replace(background_loss_per_run=0.0, trap_off_loss=0.0)
    d = np.zeros((2, 2))
    for fa in (0, 1):
        for fb in (0, 1):
            vals = [simulate_block(empty, inp, k, lossless, range(trials), key=(99, inp.code, k),
                                   flips=(bool(fa), bool(fb)))["p_expected"].mean()
                    for k, inp in enumerate(BASIS_INPUTS)]
            d[fa, fb] = np.mean(vals)

    def diag(eps: float) -> float:
        w = np.array([1 - eps, eps])
        return float(w @ d @ w)

    return diag


def calibrate_prep_error(config: PhysicsConfig, target: float = 0.83, trials: int = 2000,
                         tol: float = 1e-6) -> float:
    """Solve for the per-atom pumping error so the preparation diagonal averages ``target``."""
    f = expected_prep_diagonal(config, trials)
    if f(0.0) < target:
        raise ValueError(f"pulse errors alone already push the diagonal below {target}")
    return float(brentq(lambda eps: f(eps) - target, 0.0, 0.5, xtol=tol))


def thermal_leakage(config: PhysicsConfig, trials: int | None = None, key: Sequence[int] = (7,)):
    """Per-trial simulated blockade leakage over sampled atom positions."""
    n = int(trials if trials is not None else config.trials)
    sep = sample_separations(config, range(n), key)
    b = blockade_shift(sep, config)
    return sep, b, dyn.blockade_leakage(config.rabi_rydberg, b)
