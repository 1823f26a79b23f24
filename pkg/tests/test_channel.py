"""Binary readout channel: joint tables, IQ blobs, metrics, identities."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from leakbench.channel import (
    IQModel,
    ReadoutChannel,
    TransitionRates,
    assignment_probability,
    channel_from_json,
    channel_from_physics,
    channel_to_json,
    default_iq_model,
    metrics_from_channel,
    optimize_threshold,
    read_channel,
    sample_iq,
    two_readout_enumerate,
    write_channel,
)
from leakbench.errors import UndefinedRepeatabilityError, ValidationError
from leakbench.numerics import RandomStream, least_squares

IDENTITY = ReadoutChannel(
    table_g=np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]),
    table_e=np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
)

# Ground input mostly stays and reads 0; small heating, leakage, and
# misassignment terms with a leaked state that still reads 0 nine times
# out of ten.
TOY = ReadoutChannel(
    table_g=np.array([[0.97, 0.005], [0.01, 0.004], [0.01, 0.001]]),
    table_e=np.array([[0.015, 0.03], [0.005, 0.93], [0.0, 0.02]]),
    p0_given_lg=0.9,
    p0_given_le=0.0,
)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def test_identity_channel_scores_perfectly():
    m = metrics_from_channel(IDENTITY)
    assert m.fidelity == 1.0
    assert m.repeatability == 1.0
    assert m.qndness == 1.0
    assert m.qnd_fidelity == 1.0
    assert m.xi == 0.0
    assert m.leakage == 0.0


def test_toy_channel_ground_metrics():
    m = metrics_from_channel(TOY)
    assert m.fidelity_g == 0.99
    expected_xi = (0.01 * 0.02 + 0.01 * 0.9) / 0.99
    assert abs(m.xi_g - expected_xi) < 1e-15
    assert abs(m.repeatability_g - (0.97 + expected_xi)) < 1e-15
    assert m.qndness_g == 0.97 + 0.005
    assert m.qnd_fidelity_g == 0.97
    assert m.leakage_g == 0.011


def test_leakage_free_channel_reduces_to_heating_term():
    ch = ReadoutChannel(
        table_g=np.array([[0.96, 0.01], [0.02, 0.01], [0.0, 0.0]]),
        table_e=np.array([[0.03, 0.02], [0.02, 0.93], [0.0, 0.0]]),
    )
    m = metrics_from_channel(ch)
    assert m.leakage == 0.0
    p0_e = 0.03 + 0.02
    f_g = 0.96 + 0.02
    assert abs((m.repeatability_g - m.qnd_fidelity_g) - 0.02 * p0_e / f_g) < 1e-15


def test_zero_fidelity_has_no_repeatability():
    ch = ReadoutChannel(
        table_g=np.array([[0.0, 0.97], [0.0, 0.02], [0.0, 0.01]]),
        table_e=np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
    )
    with pytest.raises(UndefinedRepeatabilityError):
        metrics_from_channel(ch)


def test_malformed_tables_rejected():
    good = np.array([[0.5, 0.5], [0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValidationError):
        ReadoutChannel(table_g=np.array([[0.97, 0.03]]), table_e=good)
    with pytest.raises(ValidationError):
        ReadoutChannel(table_g=good * 0.97, table_e=good)
    with pytest.raises(ValidationError):
        ReadoutChannel(
            table_g=np.array([[1.1, -0.1], [0.0, 0.0], [0.0, 0.0]]), table_e=good
        )
    with pytest.raises(ValidationError):
        ReadoutChannel(table_g=good, table_e=good, p0_given_lg=1.5)


@st.composite
def channels(draw):
    def table(low_column):
        weights = [draw(st.floats(0.0, 1.0)) for _ in range(6)]
        # Keep both fidelities well away from zero so R is defined.
        weights[low_column] += 3.0
        arr = np.array(weights).reshape(3, 2)
        return arr / arr.sum()

    return ReadoutChannel(
        table_g=table(0),
        table_e=table(3),
        p0_given_lg=draw(st.floats(0.0, 1.0)),
        p0_given_le=draw(st.floats(0.0, 1.0)),
    )


@given(channels())
@settings(max_examples=300, deadline=None)
def test_repeatability_decompositions_hold(ch):
    m = metrics_from_channel(ch)
    assert abs(m.repeatability_g - (m.qnd_fidelity_g + m.xi_g)) < 1e-12
    assert abs(m.repeatability_e - (m.qnd_fidelity_e + m.xi_e)) < 1e-12
    slack = 0.5 * (ch.table_g[0, 1] + ch.table_e[1, 0])
    assert abs(m.repeatability - (m.qndness - slack + m.xi)) < 1e-12
    assert m.xi_g >= 0.0
    assert m.xi_e >= 0.0
    for field in ("fidelity", "repeatability", "qndness", "qnd_fidelity", "leakage"):
        value = getattr(m, field)
        assert 0.0 <= value <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# Two-readout enumeration
# ---------------------------------------------------------------------------


def test_identity_channel_always_reads_zero_twice():
    joint = two_readout_enumerate(IDENTITY, "g")
    assert joint[(0, 0)] == 1.0
    assert joint[(0, 1)] == joint[(1, 0)] == joint[(1, 1)] == 0.0


def test_enumeration_reproduces_repeatability():
    # P(x,x | s) / P(x | s) recomputes R_s through an independent path.
    m = metrics_from_channel(TOY)
    joint_g = two_readout_enumerate(TOY, "g")
    joint_e = two_readout_enumerate(TOY, "e")
    p0_g = float(TOY.table_g[:, 0].sum())
    p1_e = float(TOY.table_e[:, 1].sum())
    assert abs(joint_g[(0, 0)] / p0_g - m.repeatability_g) < 1e-15
    assert abs(joint_e[(1, 1)] / p1_e - m.repeatability_e) < 1e-15


def test_coin_flip_leakage_shows_up_at_half_weight():
    half = ReadoutChannel(TOY.table_g, TOY.table_e, p0_given_lg=0.5)
    opaque = ReadoutChannel(TOY.table_g, TOY.table_e, p0_given_lg=0.0)
    gain = two_readout_enumerate(half, "g")[(0, 0)] - two_readout_enumerate(
        opaque, "g"
    )[(0, 0)]
    assert abs(gain - 0.5 * TOY.table_g[2, 0]) < 1e-15


def test_enumeration_is_normalized_and_validates_input():
    joint = two_readout_enumerate(TOY, "e")
    assert abs(sum(joint.values()) - 1.0) < 1e-12
    with pytest.raises(ValidationError):
        two_readout_enumerate(TOY, "l_g")


def test_monte_carlo_two_readouts_match_enumeration():
    # Vectorized resampling of the two-readout tree from raw uniforms.
    n = 100_000
    stream = RandomStream(seed=303)
    cells = TOY.table_g.ravel()
    edges = np.cumsum(cells)
    first = np.searchsorted(edges, stream.draw_array(n), side="right")
    post = first // 2
    x1 = first % 2
    p0_next = np.array(
        [
            TOY.outcome_distribution("g")[0],
            TOY.outcome_distribution("e")[0],
            TOY.p0_given_lg,
        ]
    )
    x2 = (stream.draw_array(n) >= p0_next[post]).astype(int)
    joint = two_readout_enumerate(TOY, "g")
    for pair, p in joint.items():
        hits = int(np.sum((x1 == pair[0]) & (x2 == pair[1])))
        se = math.sqrt(max(p * (1.0 - p) / n, 1e-12))
        assert abs(hits / n - p) < 4.0 * se


# ---------------------------------------------------------------------------
# IQ model
# ---------------------------------------------------------------------------


def test_noiseless_blob_reads_its_side_of_the_threshold():
    model = default_iq_model(separation=2.0, sigma=1e-12)
    stream = RandomStream(seed=7)
    for _ in range(20):
        _, outcome = sample_iq(model, "g", stream)
        assert outcome == 0
        _, outcome = sample_iq(model, "e", stream)
        assert outcome == 1


def test_six_sigma_separation_misassigns_at_the_gaussian_tail():
    model = default_iq_model(separation=6.0, sigma=1.0)
    expected = norm.cdf(-3.0)
    n = 500_000
    for state, bad in (("g", 1), ("e", 0)):
        stream = RandomStream(seed=11 if state == "g" else 12)
        wrong = sum(sample_iq(model, state, stream)[1] == bad for _ in range(n))
        se = math.sqrt(expected * (1.0 - expected) / n)
        assert abs(wrong / n - expected) < 3.0 * se


def test_coincident_leak_blob_reads_like_e():
    model = default_iq_model(2.0, 0.7, leak_centers={"l_g": 1.0 + 0.0j})
    assert assignment_probability(model, "l_g", 1) == assignment_probability(
        model, "e", 1
    )
    point_l, out_l = sample_iq(model, "l_g", RandomStream(seed=40))
    point_e, out_e = sample_iq(model, "e", RandomStream(seed=40))
    assert point_l == point_e
    assert out_l == out_e


def test_assignment_probability_is_the_gaussian_integral():
    model = default_iq_model(separation=2.0, sigma=0.5)
    assert abs(assignment_probability(model, "g", 1) - norm.cdf(-2.0)) < 1e-12
    assert abs(assignment_probability(model, "e", 1) - norm.cdf(2.0)) < 1e-12
    assert (
        abs(
            assignment_probability(model, "e", 0)
            + assignment_probability(model, "e", 1)
            - 1.0
        )
        < 1e-15
    )


def test_projection_phase_rotates_the_discrimination_axis():
    centers = {"g": -1.0j, "e": 1.0j}
    model = IQModel(centers=centers, sigma=0.4, threshold=0.0,
                    projection_phase=math.pi / 2)
    assert abs(model.projected("e") - 1.0) < 1e-12
    assert abs(assignment_probability(model, "e", 1) - norm.cdf(2.5)) < 1e-12


def test_threshold_optimizer_finds_the_midpoint():
    skewed = IQModel(
        centers={"g": -1.0 + 0.0j, "e": 1.0 + 0.0j}, sigma=0.3, threshold=0.71
    )
    best = optimize_threshold(skewed)
    # The error curve is flat to machine precision near the optimum, so the
    # search settles within a small plateau around the midpoint.
    assert abs(best.threshold) < 1e-6
    with pytest.raises(ValidationError):
        optimize_threshold(IQModel(centers={"g": 0.0j, "e": 0.0j}, sigma=1.0,
                                   threshold=0.0))


def test_iq_model_validation():
    with pytest.raises(ValidationError):
        IQModel(centers={"g": 0.0j}, sigma=1.0, threshold=0.0)
    with pytest.raises(ValidationError):
        IQModel(centers={"g": 0.0j, "e": 1.0}, sigma=0.0, threshold=0.0)
    with pytest.raises(ValidationError):
        default_iq_model(1.0, 1.0, leak_centers={"e": 2.0})
    model = default_iq_model(1.0, 1.0)
    with pytest.raises(ValidationError):
        sample_iq(model, "l_g", RandomStream(seed=1))
    with pytest.raises(ValidationError):
        assignment_probability(model, "g", 2)


# ---------------------------------------------------------------------------
# Channel construction from physics
# ---------------------------------------------------------------------------


def test_perfect_ingredients_compose_to_the_identity_channel():
    ch = channel_from_physics(math.inf, TransitionRates(), default_iq_model(2.0, 1.0))
    np.testing.assert_array_equal(ch.table_g, IDENTITY.table_g)
    np.testing.assert_array_equal(ch.table_e, IDENTITY.table_e)


def test_pure_discrimination_error_channel():
    eps = 0.01
    snr = 2.0 * norm.isf(eps) ** 2
    ch = channel_from_physics(snr, TransitionRates(), default_iq_model(2.0, 1.0))
    m = metrics_from_channel(ch)
    assert abs(m.fidelity - (1.0 - eps)) < 1e-12
    assert m.xi == 0.0
    assert m.leakage == 0.0


def test_transitions_land_in_the_right_rows():
    rates = TransitionRates(heating=0.03, decay=0.05, leak_g=0.01, leak_e=0.02)
    ch = channel_from_physics(math.inf, rates, default_iq_model(2.0, 1.0))
    assert abs(ch.table_g[1].sum() - 0.03) < 1e-15
    assert abs(ch.table_g[2].sum() - 0.01) < 1e-15
    assert abs(ch.table_e[0].sum() - 0.05) < 1e-15
    assert abs(ch.table_e[2].sum() - 0.02) < 1e-15
    # The outcome latches from the input blob, so every transition branch
    # of input g still reads 0 at infinite SNR.
    assert ch.table_g[1, 1] == 0.0
    assert ch.table_g[2, 0] == 0.01
    # No leakage blob in the IQ model: the leaked state reads 1 from the
    # second readout onward.
    assert ch.p0_given_lg == 0.0


def test_repeatability_falls_below_fidelity_with_transitions():
    # Decay and heating leave the latched outcome intact but corrupt the
    # repeat, which is exactly how R ends up below F.
    snr = 2.0 * norm.isf(0.002) ** 2
    ch = channel_from_physics(
        snr, TransitionRates(heating=0.004, decay=0.004), default_iq_model(2.0, 1.0)
    )
    m = metrics_from_channel(ch)
    assert m.repeatability < m.fidelity


def test_leak_blob_between_the_computational_blobs():
    iq = default_iq_model(2.0, 1.0, leak_centers={"l_g": 0.0j, "l_e": 0.0j})
    snr = 8.0
    ch = channel_from_physics(snr, TransitionRates(leak_g=0.1, leak_e=0.1), iq)
    # Midpoint blob: the leaked state is a coin flip on later readouts,
    # while the leak row of readout one still reads from the g blob.
    assert abs(ch.p0_given_lg - 0.5) < 1e-12
    assert abs(ch.table_g[2, 0] - 0.1 * norm.cdf(2.0)) < 1e-12


def test_rates_validation():
    with pytest.raises(ValidationError):
        TransitionRates(heating=0.6, leak_g=0.5)
    with pytest.raises(ValidationError):
        TransitionRates(decay=-0.1)
    with pytest.raises(ValidationError):
        channel_from_physics(0.0, TransitionRates(), default_iq_model(2.0, 1.0))
    coincident = IQModel(centers={"g": 1.0 + 0.0j, "e": 1.0 + 0.0j}, sigma=1.0,
                         threshold=0.0)
    with pytest.raises(ValidationError):
        channel_from_physics(10.0, TransitionRates(), coincident)


def test_inverse_designed_channel_hits_published_metrics():
    # Solve (discrimination error, transition rate, leakage rate) so the
    # composed channel lands on F=99.63%, R=99.12%, L=0.12%, then confirm
    # the round trip. Squared parameters keep every trial physical.
    iq = default_iq_model(2.0, 1.0)
    targets = np.array([0.9963, 0.9912, 0.0012])

    def build(params):
        eps = params[0] ** 2
        trans = params[1] ** 2
        leak = params[2] ** 2
        snr = 2.0 * norm.isf(eps) ** 2
        ch = channel_from_physics(
            snr, TransitionRates(heating=trans, decay=trans, leak_g=leak,
                                 leak_e=leak), iq
        )
        return ch

    def model(params, _):
        m = metrics_from_channel(build(params))
        return np.array([m.fidelity, m.repeatability, m.leakage])

    x0 = [math.sqrt(0.002), math.sqrt(0.004), math.sqrt(0.0012)]
    fit = least_squares(model, (None, targets, None), x0)
    assert fit.converged
    m = metrics_from_channel(build(fit.parameters))
    assert abs(m.fidelity - 0.9963) < 2e-4
    assert abs(m.repeatability - 0.9912) < 2e-4
    assert abs(m.leakage - 0.0012) < 2e-4


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_channel_round_trips_through_json():
    text = channel_to_json(TOY)
    again = channel_from_json(text)
    np.testing.assert_array_equal(again.table_g, TOY.table_g)
    np.testing.assert_array_equal(again.table_e, TOY.table_e)
    assert again.p0_given_lg == TOY.p0_given_lg
    assert channel_to_json(again) == text


def test_channel_file_round_trip(tmp_path):
    path = tmp_path / "channel.json"
    write_channel(path, TOY)
    again = read_channel(path)
    np.testing.assert_array_equal(again.table_e, TOY.table_e)


def test_channel_json_rejects_unknown_and_missing_keys():
    import json

    doc = json.loads(channel_to_json(TOY))
    extra = dict(doc)
    extra["P(0|x)"] = 0.5
    with pytest.raises(ValidationError) as exc:
        channel_from_json(json.dumps(extra))
    assert "P(0|x)" in str(exc.value)
    doc.pop("P(e,1|e)")
    with pytest.raises(ValidationError) as exc:
        channel_from_json(json.dumps(doc))
    assert "P(e,1|e)" in str(exc.value)
