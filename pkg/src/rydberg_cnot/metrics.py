"""Scalar figures of merit: truth-table fidelity, loss normalization, parity fits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.optimize

# rows: measured outputs 00, 01, 10, 11; columns: inputs in the same order
CNOT_PATTERN = np.array([
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 0, 1],
    [0, 0, 1, 0],
], dtype=float)

# target flips when the control is |0>
INVERTED_CNOT_PATTERN = np.array([
    [0, 1, 0, 0],
    [1, 0, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 0, 1],
], dtype=float)


def truth_table_fidelity(measured, ideal) -> float:
    """Mean probability of the correct output, 1/4 Tr(|ideal^T| measured)."""
    measured = np.asarray(measured, dtype=float)
    ideal = np.asarray(ideal, dtype=float)
    if measured.shape != (4, 4) or ideal.shape != (4, 4):
        raise ValueError(f"expected 4x4 matrices, got {measured.shape} and {ideal.shape}")
    if not (np.all(np.isin(ideal, (0.0, 1.0)))
            and np.all(ideal.sum(axis=0) == 1) and np.all(ideal.sum(axis=1) == 1)):
        raise ValueError("ideal must be a 0/1 permutation pattern")
    return float(np.trace(np.abs(ideal).T @ measured) / 4)


def loss_normalize(raw, survival: float) -> np.ndarray:
    """Divide two-atom probabilities by the pair survival ``survival**2``.

    Entries that end up above 1 are reported with a warning, not clipped.
    """
    if not survival > 0 or survival > 1:
        raise ValueError("survival must lie in (0, 1]")
    out = np.asarray(raw, dtype=float) / survival ** 2
    if np.any(out > 1):
        warnings.warn(f"{int(np.sum(out > 1))} normalized entries exceed 1", RuntimeWarning,
                      stacklevel=2)
    return out


def binomial_se(p, n):
    p = np.asarray(p, dtype=float)
    return np.sqrt(np.clip(p * (1 - p), 0, None) / n)


def parity(p00, p01, p10, p11):
    return p00 + p11 - p01 - p10


@dataclass(frozen=True)
class ParityFit:
    re_c2: float
    abs_c1: float
    xi: float
    residual: float

    def __call__(self, phi):
        return 2 * self.re_c2 - 2 * self.abs_c1 * np.cos(2 * np.asarray(phi) + self.xi)


@dataclass
class ParityScanResult:
    phases: np.ndarray
    parity: np.ndarray
    stderr: np.ndarray
    fit: ParityFit


def fit_parity_curve(phases, values, *, degenerate_tol: float = 1e-12) -> ParityFit:
    """Least-squares fit of P(phi) = 2 Re C2 - 2 |C1| cos(2 phi + xi).

    Linear in the basis {1, cos 2phi, sin 2phi}. ``xi`` lies in (-pi, pi]
    and is 0 when |C1| vanishes.
    """
    phi = np.asarray(phases, dtype=float)
    y = np.asarray(values, dtype=float)
    if phi.shape != y.shape or phi.ndim != 1:
        raise ValueError("phases and values must be 1-d arrays of equal length")
    if len(phi) < 4:
        raise ValueError("need at least 4 samples")
    design = np.column_stack([np.ones_like(phi), np.cos(2 * phi), np.sin(2 * phi)])
    distinct = np.unique(np.round(np.mod(phi, np.pi), 12))
    if len(distinct) < 3 or np.linalg.matrix_rank(design) < 3:
        raise ValueError("rank-deficient design: need >= 3 distinct phases modulo pi")
    (a, b, c), *_ = np.linalg.lstsq(design, y, rcond=None)
    abs_c1 = 0.5 * np.hypot(b, c)
    if abs_c1 <= degenerate_tol:
        abs_c1, xi = 0.0, 0.0
    else:
        xi = float(np.arctan2(c, -b))
        if xi == -np.pi:
            xi = np.pi
    resid = float(np.max(np.abs(design @ np.array([a, b, c]) - y)))
    return ParityFit(float(a / 2), float(abs_c1), xi, resid)


def bell_fidelity(p00: float, p11: float, abs_c1: float) -> tuple[float, bool]:
    """F = (P00 + P11)/2 + |C1| and whether it witnesses entanglement (F > 1/2)."""
    if min(p00, p11, abs_c1) < 0:
        raise ValueError("inputs must be non-negative")
    f = 0.5 * (p00 + p11) + abs_c1
    return f, f > 0.5


def trace_correct(fidelity: float, trace: float) -> float:
    if not trace > 0 or trace > 1 + 1e-12:
        raise ValueError("trace must lie in (0, 1]")
    return fidelity / trace


@dataclass(frozen=True)
class OscillationFit:
    period: float
    phases: tuple[float, ...]
    amplitudes: tuple[float, ...]
    relative_phase: float | None  # phases[1] - phases[0] wrapped to (-pi, pi]; None if degenerate


def fit_oscillation(t, curves, *, min_amplitude: float = 1e-3) -> OscillationFit:
    """Fit y_k(t) = a_k + A_k cos(w t + phi_k) with one shared w to one or more curves.

    The starting frequency comes from the FFT peak of the summed
    mean-removed spectra. Curves with amplitude below ``min_amplitude``
    make the fit degenerate (infinite period, no relative phase).
    """
    t = np.asarray(t, dtype=float)
    ys = [np.asarray(y, dtype=float) for y in curves]
    if any(np.ptp(y) < 2 * min_amplitude for y in ys):
        return OscillationFit(float("inf"), tuple(0.0 for _ in ys), tuple(0.0 for _ in ys), None)

    dt = t[1] - t[0]
    pad = 16 * len(t)
    spec = sum(np.abs(np.fft.rfft(y - y.mean(), pad)) for y in ys)
    freqs = np.fft.rfftfreq(pad, dt)
    w0 = 2 * np.pi * freqs[1 + np.argmax(spec[1:])]

    def linear_part(w):
        design = np.column_stack([np.ones_like(t), np.cos(w * t), np.sin(w * t)])
        coefs = [np.linalg.lstsq(design, y, rcond=None)[0] for y in ys]
        return design, coefs

    def residuals(p):
        design, coefs = linear_part(p[0] * w0)
        return np.concatenate([design @ c - y for c, y in zip(coefs, ys)])

    # solve for w / w0 so the tolerances are relative
    sol = scipy.optimize.least_squares(residuals, [1.0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    w = float(sol.x[0] * w0)
    _, coefs = linear_part(w)
    # a + b cos + c sin = a + A cos(w t + phi) with A cos phi = b, -A sin phi = c
    amps = tuple(float(np.hypot(b, c)) for _, b, c in coefs)
    phis = tuple(float(np.arctan2(-c, b)) for _, b, c in coefs)
    rel = None
    if len(ys) > 1 and min(amps) >= min_amplitude:
        rel = float(np.angle(np.exp(1j * (phis[1] - phis[0]))))
        if rel == -np.pi:
            rel = np.pi
    return OscillationFit(2 * np.pi / abs(w), phis, amps, rel)
