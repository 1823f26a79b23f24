"""Readout pulse shaping: objective evaluation, baselines, optimizer."""

import cmath
import math

import numpy as np
import pytest
from scipy.integrate import quad

from leakbench.errors import DegenerateReadoutError, ValidationError
from leakbench.numerics import RandomStream
from leakbench.pulse_shaping import (
    PulseConstraint,
    PulseObjective,
    best_boxcar,
    boxcar,
    evaluate_objective,
    optimize_pulse,
    pulse_from_json,
    pulse_to_json,
    read_pulse,
    write_pulse,
)
from leakbench.resonator import ResonatorParams, ShapedPulse, steady_state

TWO_PI = 2 * math.pi

KAPPA_R = TWO_PI * 12e6
KAPPA_EXT = TWO_PI * 11.6e6
KERR = TWO_PI * -60e3
CHI_QR = TWO_PI * -6.4e6

PAPER = ResonatorParams.from_couplings(KAPPA_EXT, KAPPA_R - KAPPA_EXT, KERR, CHI_QR)
LINEAR = ResonatorParams(KAPPA_R, KAPPA_EXT, KAPPA_R - KAPPA_EXT, 0.0, CHI_QR)

TAU_RO = 160e-9


def linear_branch_amplitude(amp, detuning, t):
    """Closed-form ring-up of the driven damped mode from vacuum."""
    lam = 1j * detuning + 0.5 * KAPPA_R
    return (amp / lam) * (1.0 - cmath.exp(-lam * t))


# ---------------------------------------------------------------------------
# evaluate_objective
# ---------------------------------------------------------------------------


def test_boxcar_theta_matches_closed_form_integrals():
    # Linear resonator: both branch trajectories and the ring-down have
    # closed forms, so theta reduces to two quadratures over |s(t)|^2.
    amp = 4e7
    constraint = PulseConstraint(n_max=100.0, tau_ro=TAU_RO, segment_count=1)
    result = evaluate_objective(LINEAR, boxcar(amp, TAU_RO), constraint)

    delta_g = -0.5 * CHI_QR
    delta_e = +0.5 * CHI_QR

    def sep2_in(t):
        s = linear_branch_amplitude(amp, delta_g, t) - linear_branch_amplitude(
            amp, delta_e, t
        )
        return abs(s) ** 2

    g_end = linear_branch_amplitude(amp, delta_g, TAU_RO)
    e_end = linear_branch_amplitude(amp, delta_e, TAU_RO)

    def sep2_tail(t):
        g = g_end * cmath.exp(-(1j * delta_g + 0.5 * KAPPA_R) * t)
        e = e_end * cmath.exp(-(1j * delta_e + 0.5 * KAPPA_R) * t)
        return abs(g - e) ** 2

    in_pulse, _ = quad(sep2_in, 0.0, TAU_RO, limit=400)
    tail, _ = quad(sep2_tail, 0.0, 10 / KAPPA_R, limit=400)
    assert abs(result.theta - tail / in_pulse) / (tail / in_pulse) < 0.02


def test_pulse_returning_both_branches_to_vacuum():
    # Solve the 2x2 linear system for the last two segment amplitudes that
    # park both branches back at the origin; theta then collapses.
    l1, l3, l4 = 100e-9, 30e-9, 30e-9
    amp1 = 4e7
    lengths = (0.5 * l1, 0.5 * l1, l3, l4)
    deltas = (-0.5 * CHI_QR, +0.5 * CHI_QR)

    rows, rhs = [], []
    for delta in deltas:
        lam = 1j * delta + 0.5 * KAPPA_R
        drive_in = linear_branch_amplitude(amp1, delta, l1)
        carried = drive_in * cmath.exp(-lam * (l3 + l4))
        coeff3 = cmath.exp(-lam * l4) * (1.0 - cmath.exp(-lam * l3)) / lam
        coeff4 = (1.0 - cmath.exp(-lam * l4)) / lam
        rows.append([coeff3, coeff4])
        rhs.append(-carried)
    amp3, amp4 = np.linalg.solve(np.array(rows), np.array(rhs))

    pulse = ShapedPulse(
        (
            (amp1, lengths[0]),
            (amp1, lengths[1]),
            (complex(amp3), lengths[2]),
            (complex(amp4), lengths[3]),
        )
    )
    constraint = PulseConstraint(n_max=100.0, tau_ro=sum(lengths), segment_count=4)
    result = evaluate_objective(LINEAR, pulse, constraint)
    assert result.theta < 1e-3
    assert result.residual_n < 1e-4


def test_zero_amplitude_pulse_is_degenerate():
    constraint = PulseConstraint(n_max=2.8, tau_ro=TAU_RO, segment_count=1)
    with pytest.raises(DegenerateReadoutError):
        evaluate_objective(PAPER, boxcar(0.0, TAU_RO), constraint)


def test_duration_mismatch_rejected():
    constraint = PulseConstraint(n_max=2.8, tau_ro=TAU_RO, segment_count=1)
    with pytest.raises(ValidationError):
        evaluate_objective(PAPER, boxcar(1e7, 2 * TAU_RO), constraint)


def test_cap_violation_is_flagged_not_raised():
    constraint = PulseConstraint(n_max=0.01, tau_ro=TAU_RO, segment_count=1)
    result = evaluate_objective(PAPER, boxcar(4e7, TAU_RO), constraint)
    assert result.cap_exceeded
    assert result.peak_n > constraint.n_max


def test_boxcar_peak_photon_matches_steady_state():
    # Amplitude chosen for 1.2 photons on the linear branch; 240 ns is long
    # enough (18 lifetimes) that the peak sits on the steady plateau.
    target_n = 1.2
    worst = max(
        steady_state(PAPER, sign * 0.5 * CHI_QR, math.sqrt(target_n) * KAPPA_R / 2)[0][0]
        for sign in (-1.0, 1.0)
    )
    amp = math.sqrt(target_n) * KAPPA_R / 2
    constraint = PulseConstraint(n_max=100.0, tau_ro=240e-9, segment_count=1)
    result = evaluate_objective(PAPER, boxcar(amp, 240e-9), constraint)
    assert abs(result.peak_n - worst) / worst < 0.05


def test_theta_invariant_under_global_phase():
    constraint = PulseConstraint(n_max=100.0, tau_ro=TAU_RO, segment_count=4)
    segments = ((3e7, 50e-9), (1e7 + 2e7j, 40e-9), (-2e7, 40e-9), (5e6j, 30e-9))
    base = evaluate_objective(PAPER, ShapedPulse(segments, detuning=2e6), constraint)
    for phase in (0.7, -2.1, math.pi / 2):
        rot = cmath.exp(1j * phase)
        rotated = ShapedPulse(
            tuple((a * rot, l) for a, l in segments), detuning=2e6
        )
        result = evaluate_objective(PAPER, rotated, constraint)
        assert abs(result.theta - base.theta) <= 1e-9 * base.theta
        assert abs(result.peak_n - base.peak_n) <= 1e-9 * base.peak_n


def test_theta_invariant_under_detuning_reflection_with_kerr_flip():
    # Conjugating the field maps (K, Delta_0, A) to (-K, -Delta_0, conj A)
    # and swaps the branches; the separation integrals are unchanged.
    flipped = ResonatorParams(KAPPA_R, KAPPA_EXT, KAPPA_R - KAPPA_EXT, -KERR, CHI_QR)
    constraint = PulseConstraint(n_max=100.0, tau_ro=TAU_RO, segment_count=4)
    segments = ((3e7, 50e-9), (1e7 + 2e7j, 40e-9), (-2e7, 40e-9), (5e6j, 30e-9))
    base = evaluate_objective(
        PAPER, ShapedPulse(segments, detuning=3e6), constraint
    )
    mirrored = ShapedPulse(
        tuple((a.conjugate(), l) for a, l in segments), detuning=-3e6
    )
    result = evaluate_objective(flipped, mirrored, constraint)
    assert abs(result.theta - base.theta) <= 1e-12 * max(base.theta, 1.0)
    assert abs(result.peak_n - base.peak_n) <= 1e-12 * base.peak_n


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

FAST_SEARCH = dict(restarts=6, max_evaluations=400)


def test_two_segment_pulse_boosts_the_ring_up():
    constraint = PulseConstraint(n_max=2.8, tau_ro=TAU_RO, segment_count=2)
    pulse, objective = optimize_pulse(
        LINEAR, constraint, RandomStream(seed=5), **FAST_SEARCH
    )
    assert len(pulse.segments) == 2
    first, second = pulse.segments
    assert abs(first[0]) > abs(second[0])
    assert not objective.cap_exceeded


def test_returned_pulse_respects_the_cap():
    constraint = PulseConstraint(n_max=2.8, tau_ro=TAU_RO, segment_count=4)
    pulse, objective = optimize_pulse(
        PAPER, constraint, RandomStream(seed=3), **FAST_SEARCH
    )
    fresh = evaluate_objective(PAPER, pulse, constraint)
    assert fresh.peak_n <= constraint.n_max * (1.0 + 1e-6)
    assert abs(fresh.theta - objective.theta) <= 1e-9 * objective.theta


def test_optimizer_trace_is_monotone():
    constraint = PulseConstraint(n_max=2.8, tau_ro=TAU_RO, segment_count=4)
    trace = []
    optimize_pulse(PAPER, constraint, RandomStream(seed=8), trace=trace, **FAST_SEARCH)
    values = np.array(trace)
    assert len(values) > 0
    assert np.all(np.diff(values) <= 0.0)


def test_optimizer_is_deterministic_for_fixed_seed():
    constraint = PulseConstraint(n_max=2.8, tau_ro=TAU_RO, segment_count=2)
    first = optimize_pulse(LINEAR, constraint, RandomStream(seed=10), **FAST_SEARCH)
    second = optimize_pulse(LINEAR, constraint, RandomStream(seed=10), **FAST_SEARCH)
    assert first[0].segments == second[0].segments
    assert first[1].theta == second[1].theta


def test_shaped_pulse_beats_plain_boxcar():
    constraint = PulseConstraint(n_max=2.8, tau_ro=TAU_RO, segment_count=4)
    stream = RandomStream(seed=4)
    _, flat = best_boxcar(PAPER, constraint, stream.spawn(0), restarts=4,
                          max_evaluations=200)
    _, shaped = optimize_pulse(PAPER, constraint, stream.spawn(1), **FAST_SEARCH)
    assert shaped.theta < flat.theta


def test_best_boxcar_single_segment():
    constraint = PulseConstraint(n_max=2.8, tau_ro=TAU_RO, segment_count=4)
    pulse, objective = best_boxcar(
        PAPER, constraint, RandomStream(seed=2), restarts=4, max_evaluations=200
    )
    assert len(pulse.segments) == 1
    assert not objective.cap_exceeded


def test_segment_count_must_be_shapeable():
    constraint = PulseConstraint(n_max=2.8, tau_ro=TAU_RO, segment_count=1)
    with pytest.raises(ValidationError):
        optimize_pulse(PAPER, constraint, RandomStream(seed=1))


def test_objective_rejects_negative_theta():
    with pytest.raises(ValidationError):
        PulseObjective(theta=-0.1, peak_n=1.0, residual_n=0.0)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_boxcar_round_trips_through_json():
    pulse = boxcar(3.7e7 + 0.0j, 240e-9, 0.0)
    again = pulse_from_json(pulse_to_json(pulse))
    assert again.segments == pulse.segments
    assert again.detuning == pulse.detuning


def test_json_text_is_stable_under_reserialization():
    pulse = ShapedPulse(((1e7 + 2e7j, 50e-9), (-3e7, 110e-9)), detuning=1.5e6)
    text = pulse_to_json(pulse)
    assert pulse_to_json(pulse_from_json(text)) == text


def test_pulse_file_round_trip(tmp_path):
    pulse = ShapedPulse(((2e7, 80e-9), (1e7j, 80e-9)), detuning=-2e6)
    path = tmp_path / "pulse.json"
    write_pulse(path, pulse)
    again = read_pulse(path)
    assert again.segments == pulse.segments
    assert again.detuning == pulse.detuning


def test_unknown_pulse_keys_rejected():
    with pytest.raises(ValidationError):
        pulse_from_json('{"detuning_hz": 0.0, "segments": [], "extra": 1}')
    with pytest.raises(ValidationError):
        pulse_from_json(
            '{"detuning_hz": 0.0, "segments": '
            '[{"re_amp": 1.0, "im_amp": 0.0, "length_ns": 10.0, "oops": 2}]}'
        )
