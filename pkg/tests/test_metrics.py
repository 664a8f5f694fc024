import itertools
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rydberg_cnot import metrics as m
from rydberg_cnot.harness import default_fixture

FIXTURE = default_fixture()

PERMUTATIONS = [np.eye(4)[list(p)].T for p in itertools.permutations(range(4))]
prob = st.floats(0, 1)
matrices = hnp.arrays(float, (4, 4), elements=prob)


# -- truth-table fidelity -------------------------------------------------------------------

def test_reported_as_matrix():
    f = m.truth_table_fidelity(FIXTURE["truthTables"]["AS_CNOT"]["matrix"], m.CNOT_PATTERN)
    assert f == pytest.approx(0.73, abs=0.005)


def test_reported_hcz_matrix():
    f = m.truth_table_fidelity(FIXTURE["truthTables"]["HCZ_CNOT"]["matrix"], m.INVERTED_CNOT_PATTERN)
    assert f == pytest.approx(0.72, abs=0.005)


def test_fidelity_hand_arithmetic():
    # high elements of the printed tables
    assert m.truth_table_fidelity(FIXTURE["truthTables"]["AS_CNOT"]["matrix"], m.CNOT_PATTERN) == \
        pytest.approx((0.73 + 0.72 + 0.72 + 0.75) / 4, abs=1e-12)
    assert m.truth_table_fidelity(FIXTURE["truthTables"]["prep"]["matrix"], np.eye(4)) == \
        pytest.approx((0.77 + 0.81 + 0.81 + 0.93) / 4, abs=1e-12)


@pytest.mark.parametrize("k", range(0, 24, 5))
def test_ideal_pattern_scores_one(k):
    assert m.truth_table_fidelity(PERMUTATIONS[k], PERMUTATIONS[k]) == 1.0


def test_fidelity_errors():
    with pytest.raises(ValueError):
        m.truth_table_fidelity(np.eye(3), np.eye(4))
    with pytest.raises(ValueError):
        m.truth_table_fidelity(np.eye(4), np.full((4, 4), 0.25))


@given(matrices, matrices, st.floats(-3, 3), st.sampled_from(PERMUTATIONS))
def test_fidelity_is_linear(a, b, c, ideal):
    lhs = m.truth_table_fidelity(a + c * b, ideal)
    rhs = m.truth_table_fidelity(a, ideal) + c * m.truth_table_fidelity(b, ideal)
    assert lhs == pytest.approx(rhs, abs=1e-9)


@given(matrices, matrices, st.sampled_from(PERMUTATIONS))
def test_only_pattern_entries_contribute(a, extra, ideal):
    assert m.truth_table_fidelity(a + extra * (1 - ideal), ideal) == pytest.approx(
        m.truth_table_fidelity(a, ideal), abs=1e-12)


@given(hnp.arrays(float, (4, 4), elements=st.floats(0.01, 1)), st.sampled_from(PERMUTATIONS))
def test_fidelity_in_unit_interval_for_stochastic_input(a, ideal):
    stochastic = a / a.sum(axis=0)
    assert 0 <= m.truth_table_fidelity(stochastic, ideal) <= 1 + 1e-12


# -- loss normalization ----------------------------------------------------------------------

def test_survival_one_is_identity():
    raw = np.random.default_rng(0).uniform(0, 1, (4, 4))
    assert np.array_equal(m.loss_normalize(raw, 1.0), raw)


def test_normalize_arithmetic():
    assert m.loss_normalize(np.array([0.61]), 0.85)[0] == pytest.approx(0.61 / 0.7225)
    assert m.loss_normalize(np.array([0.61]), 0.85)[0] == pytest.approx(0.8443, abs=5e-5)


@pytest.mark.parametrize("s", [0.0, -0.1, 1.2])
def test_normalize_rejects_bad_survival(s):
    with pytest.raises(ValueError):
        m.loss_normalize(np.eye(4), s)


def test_normalize_reports_entries_above_one():
    with pytest.warns(RuntimeWarning, match="exceed 1"):
        out = m.loss_normalize(np.array([0.8]), 0.85)
    assert out[0] > 1
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m.loss_normalize(np.array([0.5]), 0.85)


# -- parity and its fit ----------------------------------------------------------------------

def test_parity_values():
    assert m.parity(0.5, 0, 0, 0.5) == 1
    assert m.parity(0, 0.5, 0.5, 0) == -1
    assert m.parity(0.25, 0.25, 0.25, 0.25) == 0


@given(hnp.arrays(float, 4, elements=prob))
def test_parity_bound(q):
    assume(q.sum() > 0)
    q = q / max(1.0, q.sum())
    assert abs(m.parity(*q)) <= 1 + 1e-12


def test_fit_recovers_reported_parameters():
    phi = np.linspace(0, np.pi, 12, endpoint=False)
    y = 2 * (-0.02) - 2 * 0.10 * np.cos(2 * phi + 0.3)
    fit = m.fit_parity_curve(phi, y)
    assert abs(fit.re_c2 + 0.02) < 1e-9
    assert abs(fit.abs_c1 - 0.10) < 1e-9
    assert abs(fit.xi - 0.3) < 1e-9
    assert fit.residual < 1e-9


def test_fit_constant_samples():
    fit = m.fit_parity_curve(np.linspace(0, 3, 8), np.full(8, 0.5))
    assert fit.re_c2 == pytest.approx(0.25)
    assert fit.abs_c1 == 0.0 and fit.xi == 0.0


def test_fit_rejects_rank_deficient_design():
    with pytest.raises(ValueError):
        m.fit_parity_curve(np.array([0.1, 0.1 + np.pi, 0.1 + 2 * np.pi, 0.1]), np.zeros(4))
    with pytest.raises(ValueError):
        m.fit_parity_curve(np.array([0.0, 1.0, 2.0]), np.zeros(3))


@settings(max_examples=200)
@given(st.floats(-0.5, 0.5), st.floats(1e-3, 0.5), st.floats(-np.pi + 1e-6, np.pi),
       st.lists(st.floats(0, 2 * np.pi), min_size=4, max_size=30))
def test_fit_is_exact_on_model_family(re_c2, abs_c1, xi, phases):
    phi = np.array(phases)
    distinct = np.unique(np.round(np.mod(phi, np.pi), 6))
    assume(len(distinct) >= 3 and np.min(np.diff(np.sort(np.append(distinct, distinct[0] + np.pi)))) > 0.05)
    y = 2 * re_c2 - 2 * abs_c1 * np.cos(2 * phi + xi)
    fit = m.fit_parity_curve(phi, y)
    assert fit.residual < 1e-9
    assert fit.re_c2 == pytest.approx(re_c2, abs=1e-9)
    assert fit.abs_c1 == pytest.approx(abs_c1, abs=1e-9)
    assert np.angle(np.exp(1j * (fit.xi - xi))) == pytest.approx(0, abs=1e-6)
    assert -np.pi < fit.xi <= np.pi
    assert np.allclose(fit(phi), y, atol=1e-9)


# -- Bell fidelity and trace correction -------------------------------------------------------

def test_reported_bell_fidelity():
    f, entangled = m.bell_fidelity(0.38, 0.38, 0.10)
    assert f == pytest.approx(0.48, abs=1e-12) and not entangled


def test_bell_fidelity_limits():
    assert m.bell_fidelity(0.5, 0.5, 0.5) == (1.0, True)
    f, ent = m.bell_fidelity(1, 0, 0)
    assert f == 0.5 and ent is False


def test_trace_correction():
    assert m.trace_correct(0.48, 0.83) == pytest.approx(0.578, abs=5e-4)
    assert m.trace_correct(0.61, 1.0) == 0.61
    with pytest.raises(ValueError):
        m.trace_correct(0.5, 0.0)


# -- oscillation fit ---------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.floats(5e-6, 40e-6), st.floats(-np.pi, np.pi), st.floats(0.1, 0.5))
def test_oscillation_fit_recovers_period_and_phase(period, phase, amp):
    t = np.linspace(0, 3 * period, 61)
    w = 2 * np.pi / period
    a = 0.5 + amp * np.cos(w * t + phase)
    b = 0.5 + amp * np.cos(w * t + phase + np.pi)
    fit = m.fit_oscillation(t, [a, b])
    assert fit.period == pytest.approx(period, rel=1e-6)
    assert abs(fit.relative_phase) == pytest.approx(np.pi, abs=1e-6)


def test_flat_curves_are_degenerate():
    t = np.linspace(0, 1, 20)
    fit = m.fit_oscillation(t, [np.full(20, 0.4), np.full(20, 0.6)])
    assert fit.relative_phase is None and np.isinf(fit.period)
