"""Shared numerical kernels: RNG, RK4, Levenberg-Marquardt, cubic roots."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leakbench.errors import (
    DegenerateFitError,
    IntegrationDivergedError,
    PolynomialDegreeError,
    ValidationError,
)
from leakbench.numerics import (
    RandomStream,
    cubic_real_roots,
    draw,
    integrate_ode,
    least_squares,
    stream_base_array,
    uniforms_at,
)

N_STAT_DRAWS = 1_000_000


# ---------------------------------------------------------------------------
# RandomStream
# ---------------------------------------------------------------------------


def test_same_seed_and_stream_repeats_exactly():
    a = RandomStream(seed=1234, stream_id=7)
    b = RandomStream(seed=1234, stream_id=7)
    assert [a.draw() for _ in range(100)] == [b.draw() for _ in range(100)]


def test_different_seeds_diverge_immediately():
    a = RandomStream(seed=0)
    b = RandomStream(seed=1)
    first_a = [a.draw() for _ in range(10)]
    first_b = [b.draw() for _ in range(10)]
    assert all(x != y for x, y in zip(first_a, first_b))


def test_draw_function_matches_method():
    assert draw(RandomStream(seed=9)) == RandomStream(seed=9).draw()


def test_counter_resumes_mid_sequence():
    full = RandomStream(seed=42, stream_id=3)
    values = [full.draw() for _ in range(8)]
    resumed = RandomStream(seed=42, stream_id=3, counter=5)
    assert resumed.draw() == values[5]


def test_spawn_addresses_stream_id():
    root = RandomStream(seed=11)
    assert root.spawn(4).draw() == RandomStream(seed=11, stream_id=4).draw()


def test_draw_array_equals_scalar_draws():
    scalar = RandomStream(seed=77, stream_id=2)
    vector = RandomStream(seed=77, stream_id=2)
    expected = np.array([scalar.draw() for _ in range(64)])
    assert np.array_equal(vector.draw_array(64), expected)


def test_vectorized_addressing_matches_streams():
    ids = np.array([0, 1, 5, 1000], dtype=np.uint64)
    bases = stream_base_array(19, ids)
    for counter in (0, 3):
        block = uniforms_at(bases, counter)
        for col, sid in enumerate(ids):
            stream = RandomStream(seed=19, stream_id=int(sid), counter=counter)
            assert block[col] == stream.draw()


def test_uniform_mean():
    values = RandomStream(seed=2024).draw_array(N_STAT_DRAWS)
    assert abs(values.mean() - 0.5) < 0.002


def test_uniform_chi_square():
    values = RandomStream(seed=31415).draw_array(N_STAT_DRAWS)
    bins = 100
    counts, _ = np.histogram(values, bins=bins, range=(0.0, 1.0))
    expected = N_STAT_DRAWS / bins
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # chi2.sf(stat, 99) > 0.001 iff stat below the 0.999 quantile.
    from scipy.stats import chi2 as chi2_dist

    assert chi2_dist.sf(chi2, bins - 1) > 0.001


def test_streams_pairwise_uncorrelated():
    n = 100_000
    streams = [RandomStream(seed=5, stream_id=sid).draw_array(n) for sid in range(4)]
    for i in range(len(streams)):
        for j in range(i + 1, len(streams)):
            r = np.corrcoef(streams[i], streams[j])[0, 1]
            assert abs(r) < 0.01


def test_normal_moments():
    values = RandomStream(seed=8).normal_array(200_000)
    assert abs(values.mean()) < 0.01
    assert abs(values.std() - 1.0) < 0.01


def test_draws_lie_in_unit_interval():
    values = RandomStream(seed=63).draw_array(10_000)
    assert values.min() >= 0.0
    assert values.max() < 1.0


# ---------------------------------------------------------------------------
# integrate_ode
# ---------------------------------------------------------------------------


def test_exponential_decay_accuracy():
    times, states = integrate_ode(lambda t, y: -y, 1.0 + 0.0j, (0.0, 1.0), 1e-3)
    assert times[-1] == 1.0
    assert abs(states[-1] - math.exp(-1.0)) < 1e-9


def test_rk4_fourth_order_convergence():
    # Steps coarse enough that truncation error dominates rounding error.
    def err(dt):
        _, states = integrate_ode(lambda t, y: -y, 1.0 + 0.0j, (0.0, 1.0), dt)
        return abs(states[-1] - math.exp(-1.0))

    assert err(0.1) / err(0.05) >= 14.0


def test_rotation_conserves_norm():
    omega = 2.0
    dt = 1e-3
    _, states = integrate_ode(
        lambda t, y: 1j * omega * y, 1.0 + 0.0j, (0.0, 1000 * dt), dt
    )
    assert np.max(np.abs(np.abs(states) - 1.0)) < 1e-8


def test_linear_ring_up_matches_closed_form():
    kappa = 2 * math.pi * 12e6
    amp = 3e7

    def rhs(t, y):
        return -0.5 * kappa * y + amp

    times, states = integrate_ode(rhs, 0.0 + 0.0j, (0.0, 10 / kappa), 1 / (200 * kappa))
    analytic = (2 * amp / kappa) * (1.0 - np.exp(-0.5 * kappa * times))
    worst = np.max(np.abs(states - analytic)) / np.max(np.abs(analytic))
    assert worst < 1e-6


def test_final_sample_lands_on_t1():
    # Span deliberately not a multiple of dt: the last step is shortened.
    times, _ = integrate_ode(lambda t, y: -y, 1.0 + 0.0j, (0.0, 0.35), 0.1)
    assert times[-1] == 0.35
    assert np.all(np.diff(times) > 0)


def test_divergence_reports_failure_time():
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(
        IntegrationDivergedError
    ) as exc:
        integrate_ode(lambda t, y: y * y, 2.0 + 0.0j, (0.0, 10.0), 0.05)
    assert exc.value.time > 0.0
    assert f"{exc.value.time:.9e}" in str(exc.value)


def test_bad_step_rejected():
    with pytest.raises(ValidationError):
        integrate_ode(lambda t, y: -y, 1.0 + 0.0j, (0.0, 1.0), 0.0)
    with pytest.raises(ValidationError):
        integrate_ode(lambda t, y: -y, 1.0 + 0.0j, (1.0, 0.0), 0.1)


# ---------------------------------------------------------------------------
# least_squares
# ---------------------------------------------------------------------------


def test_exact_line_fit():
    x = np.linspace(-3.0, 5.0, 30)
    y = 2.0 * x + 1.0
    fit = least_squares(lambda p, t: p[0] * t + p[1], (x, y, None), [0.3, -0.2])
    assert fit.converged
    assert np.max(np.abs(fit.parameters - [2.0, 1.0])) < 1e-10


def test_exponential_rate_recovery():
    x = np.linspace(0.0, 40.0, 60)
    y = 3.5 * np.exp(-0.08 * x)
    fit = least_squares(
        lambda p, t: p[0] * np.exp(-p[1] * t), (x, y, None), [2.0, 0.05]
    )
    assert abs(fit.parameters[1] - 0.08) < 1e-6


def test_lorentzian_dip_round_trip():
    depth, width, center = 0.62, 1.8e6, 4.2e6

    def model(p, f):
        d, w, c = p
        return 1.0 - d / (1.0 + ((f - c) / w) ** 2)

    f = np.linspace(-20e6, 20e6, 201)
    y = model((depth, width, center), f)
    fit = least_squares(model, (f, y, None), [0.4, 1e6, 2e6])
    assert fit.converged
    rel = np.abs(fit.parameters - [depth, width, center]) / [depth, width, center]
    assert np.max(rel) < 1e-6


def test_reordering_data_leaves_parameters():
    rng = np.random.default_rng(3)
    x = np.linspace(0.0, 10.0, 40)
    y = 1.3 * np.exp(-0.21 * x) + rng.normal(0.0, 0.01, x.size)
    perm = rng.permutation(x.size)

    def model(p, t):
        return p[0] * np.exp(-p[1] * t)

    direct = least_squares(model, (x, y, None), [1.0, 0.1])
    shuffled = least_squares(model, (x[perm], y[perm], None), [1.0, 0.1])
    assert np.max(np.abs(direct.parameters - shuffled.parameters)) < 1e-12


def test_weights_steer_the_fit():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, 1.0, 2.0, 10.0])
    w_out = np.array([1.0, 1.0, 1.0, 1e-12])
    fit = least_squares(lambda p, t: p[0] * t, (x, y, w_out), [0.5])
    assert abs(fit.parameters[0] - 1.0) < 1e-6


def test_singular_jacobian_raises():
    x = np.linspace(0.0, 1.0, 10)
    y = 2.0 * x
    with pytest.raises(DegenerateFitError):
        # Second parameter never enters the model.
        least_squares(lambda p, t: p[0] * t + 0.0 * p[1], (x, y, None), [1.0, 1.0])


def test_iteration_cap_reports_nonconvergence():
    x = np.linspace(0.1, 1.0, 12)
    y = np.sin(37.0 * x)
    fit = least_squares(
        lambda p, t: np.sin(p[0] * t),
        (x, y, None),
        [0.5],
        max_iterations=2,
        residual_tol=0.0,
        step_tol=0.0,
    )
    assert not fit.converged
    assert fit.iterations <= 2


def test_covariance_is_symmetric_psd():
    x = np.linspace(0.0, 5.0, 25)
    rng = np.random.default_rng(11)
    y = 0.7 * np.exp(-0.4 * x) + rng.normal(0.0, 0.02, x.size)
    fit = least_squares(
        lambda p, t: p[0] * np.exp(-p[1] * t), (x, y, None), [1.0, 0.3]
    )
    cov = fit.covariance
    assert np.array_equal(cov, cov.T)
    assert np.min(np.linalg.eigvalsh(cov)) >= -1e-18


def test_more_parameters_than_points_rejected():
    with pytest.raises(ValidationError):
        least_squares(lambda p, t: p[0] + p[1] * t, ([0.0], [1.0], None), [1.0, 1.0])


# ---------------------------------------------------------------------------
# cubic_real_roots
# ---------------------------------------------------------------------------


def test_single_real_root():
    roots = cubic_real_roots(1.0, 0.0, 0.0, -1.0)
    assert len(roots) == 1
    assert abs(roots[0] - 1.0) < 1e-12


def test_three_integer_roots_ascending():
    roots = cubic_real_roots(1.0, -6.0, 11.0, -6.0)
    assert np.max(np.abs(np.array(roots) - [1.0, 2.0, 3.0])) < 1e-9


def test_zero_leading_coefficient_rejected():
    with pytest.raises(PolynomialDegreeError):
        cubic_real_roots(0.0, 1.0, 2.0, 3.0)


def _bracket_scan_roots(coeffs, lo, hi, n=1_000_000):
    """Sign-change bracketing plus bisection, independent of np.roots."""
    poly = np.polynomial.polynomial.Polynomial(coeffs[::-1])
    xs = np.linspace(lo, hi, n)
    ys = poly(xs)
    roots = []
    sign_change = np.nonzero(np.sign(ys[:-1]) * np.sign(ys[1:]) < 0)[0]
    for k in sign_change:
        a, b = xs[k], xs[k + 1]
        fa = poly(a)
        for _ in range(200):
            mid = 0.5 * (a + b)
            fm = poly(mid)
            if fa * fm <= 0:
                b = mid
            else:
                a, fa = mid, fm
        roots.append(0.5 * (a + b))
    return roots


def test_bistable_duffing_point_matches_bracketing_oracle():
    # Steady-state cubic K^2 n^3 + 2 d K n^2 + (d^2 + kappa^2/4) n = |A|^2
    # at a red-detuned drive past the bifurcation (three branches).
    kappa = 2 * math.pi * 12e6
    kerr = -2 * math.pi * 60e3
    detuning = 2 * math.pi * 25e6
    amp2 = 1e18
    coeffs = (kerr * kerr, 2 * detuning * kerr, detuning**2 + kappa**2 / 4, -amp2)

    roots = cubic_real_roots(*coeffs)
    oracle = _bracket_scan_roots(coeffs, 0.0, 1000.0)
    assert len(roots) == 3
    assert len(oracle) == 3
    for found, expected in zip(roots, oracle):
        assert abs(found - expected) <= 1e-9 * max(1.0, abs(expected))


def test_root_residuals_are_small():
    coeffs = (2.0, -3.0, -11.0, 6.0)
    scale = max(abs(c) for c in coeffs)
    for root in cubic_real_roots(*coeffs):
        value = ((coeffs[0] * root + coeffs[1]) * root + coeffs[2]) * root + coeffs[3]
        assert abs(value) < 1e-9 * scale


finite_coeff = st.floats(
    min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False
)


@given(finite_coeff, finite_coeff, finite_coeff, finite_coeff)
@settings(max_examples=300, deadline=None)
def test_root_count_and_order(c3, c2, c1, c0):
    if abs(c3) < 1e-6:
        c3 = 1.0
    roots = cubic_real_roots(c3, c2, c1, c0)
    assert 1 <= len(roots) <= 3
    assert roots == sorted(roots)
    scale = max(abs(c) for c in (c3, c2, c1, c0))
    for root in roots:
        value = ((c3 * root + c2) * root + c1) * root + c0
        assert abs(value) < 1e-9 * scale
