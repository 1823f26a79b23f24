"""Repeated-readout leakage benchmarking.

The protocol interleaves M cycles of (random bit-flip, readout) starting
from the ground state, XORs consecutive outcomes into a flipped-or-not
string, and correlates it with the input string. Pauli and discrimination
errors corrupt the correlation only locally, but a shot stuck in a leakage
state stops responding to the flips, so the mean correlation decays
geometrically with the cycle number at the leakage rate:

    <C>_m = (A + B (1 - L)^m) / 2

Everything here is deterministic given the configuration seed: every shot
owns a counter-based random stream, so results are independent of execution
order and thread count.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

from scipy.optimize import minimize_scalar

from . import _io
from .channel import ReadoutChannel
from .errors import ClampedFitWarning, InvalidDataError, ValidationError
from .numerics import FitResult, least_squares, stream_base_array, uniforms_at

__all__ = [
    "X",
    "I",
    "RILBConfig",
    "LeakageModel",
    "CycleModel",
    "RILBRun",
    "RILBResult",
    "generate_sequences",
    "simulate_run",
    "decode",
    "aggregate",
    "decay_model",
    "fit_leakage",
    "superoperator_leakage",
    "run_protocol",
    "aggregate_to_csv",
    "read_aggregate",
    "fit_to_json",
    "write_outcomes",
    "read_outcomes",
]

X = 1
I = 0

_SHOT_BIT = np.uint64(1) << np.uint64(62)
_DRAWS_PER_CYCLE = 4


def _check_probability(value: float, name: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class RILBConfig:
    """Protocol dimensions and error knobs.

    m_cycles: readouts per shot (M); k_randomizations: number of random
    input strings (K); n_shots: shots per randomization (N); pi_error:
    probability a commanded flip fails; p_ini: initial leakage population
    surviving pre-selection; seed: root of all randomness.
    """

    m_cycles: int
    k_randomizations: int
    n_shots: int
    seed: int
    pi_error: float = 0.0
    p_ini: float = 0.0

    def __post_init__(self):
        if self.m_cycles < 2:
            raise ValidationError("m_cycles must be at least 2")
        if self.k_randomizations < 1 or self.k_randomizations > 1 << 30:
            raise ValidationError("k_randomizations must lie in [1, 2^30]")
        if self.n_shots < 1 or self.n_shots > (1 << 32) - 1:
            raise ValidationError("n_shots must lie in [1, 2^32 - 1]")
        _check_probability(self.pi_error, "pi_error")
        _check_probability(self.p_ini, "p_ini")
        object.__setattr__(self, "seed", int(self.seed) & ((1 << 64) - 1))


@dataclass(frozen=True)
class LeakageModel:
    """Aggregate leakage/seepage channel over (computational, leaked).

    l_up: per-cycle probability of leaving the computational subspace;
    l_down: per-cycle probability of returning (to g or e uniformly);
    p0_given_l: readout outcome-0 response while leaked.
    """

    l_up: float
    l_down: float
    p0_given_l: float = 0.0

    def __post_init__(self):
        _check_probability(self.l_up, "l_up")
        _check_probability(self.l_down, "l_down")
        _check_probability(self.p0_given_l, "p0_given_l")
        if self.l_up + self.l_down > 1.0:
            raise ValidationError("l_up + l_down must not exceed 1")

    @property
    def total(self) -> float:
        return self.l_up + self.l_down


@dataclass(frozen=True)
class CycleModel:
    """Per-cycle stochastic model: leakage plus computational-subspace errors.

    decay: e -> g probability per cycle; heating: g -> e; eps_g / eps_e:
    discrimination errors P(1|g) and P(0|e); leakage: the LeakageModel
    applied identically from either computational state.
    """

    leakage: LeakageModel
    decay: float = 0.0
    heating: float = 0.0
    eps_g: float = 0.0
    eps_e: float = 0.0

    def __post_init__(self):
        for name in ("decay", "heating", "eps_g", "eps_e"):
            _check_probability(getattr(self, name), name)
        if self.leakage.l_up + self.heating > 1.0:
            raise ValidationError("l_up + heating must not exceed 1")
        if self.leakage.l_up + self.decay > 1.0:
            raise ValidationError("l_up + decay must not exceed 1")


@dataclass(frozen=True)
class RILBRun:
    """Raw protocol output.

    outcomes[k, n, m] is readout bit r_m of shot n under randomization k.
    Column 0 is the pre-selection readout of the prepared state: nominally
    0, but subject to the same discrimination error as every other readout
    so that o_1 = r_0 XOR r_1 carries the same error rate as later cycles.
    states, present when state recording was requested, holds the
    post-transition state of each cycle (0 = g, 1 = e, 2+ = leaked).
    """

    config: RILBConfig
    sequences: np.ndarray
    outcomes: np.ndarray
    states: np.ndarray | None = None


@dataclass(frozen=True)
class RILBResult:
    """Aggregated correlation statistics, one entry per cycle.

    stderr follows the protocol's convention: the average of the standard
    deviations of the per-randomization means within the i_m = X and
    i_m = I classes (an empty class is skipped). mean_corr_x / mean_corr_i
    are the class means themselves (NaN for an empty class).
    """

    cycles: np.ndarray
    mean_correlation: np.ndarray
    stderr: np.ndarray
    mean_corr_x: np.ndarray
    mean_corr_i: np.ndarray
    fit: FitResult | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean_correlation, dtype=float)
        if np.any(np.abs(mean) > 1.0 + 1e-12) or not np.all(np.isfinite(mean)):
            raise ValidationError("mean correlations must be finite and lie in [-1, 1]")


def generate_sequences(config: RILBConfig) -> np.ndarray:
    """K random input strings of length M, bits uniform over {I, X}.

    Randomization k draws from stream_id = k, so any subset of sequences is
    reproducible independently of the others.
    """
    k, m = config.k_randomizations, config.m_cycles
    bases = stream_base_array(config.seed, np.arange(k, dtype=np.uint64))
    bits = np.empty((k, m), dtype=np.uint8)
    for cycle in range(m):
        bits[:, cycle] = uniforms_at(bases, cycle) < 0.5
    return bits


def _validate_sequences(sequences: np.ndarray, config: RILBConfig) -> np.ndarray:
    seq = np.asarray(sequences, dtype=np.uint8)
    if seq.shape != (config.k_randomizations, config.m_cycles):
        raise ValidationError(
            f"sequences must have shape (K, M) = "
            f"({config.k_randomizations}, {config.m_cycles}), got {seq.shape}"
        )
    if np.any(seq > 1):
        raise ValidationError("sequence entries must be 0 (I) or 1 (X)")
    return seq


def _shot_bases(config: RILBConfig) -> np.ndarray:
    k = np.arange(config.k_randomizations, dtype=np.uint64)
    n = np.arange(config.n_shots, dtype=np.uint64)
    ids = _SHOT_BIT | (k[:, None] << np.uint64(32)) | n[None, :]
    return stream_base_array(config.seed, ids.ravel())


def simulate_run(
    config: RILBConfig,
    model: CycleModel | ReadoutChannel,
    sequences: np.ndarray | None = None,
    record_states: bool = False,
) -> RILBRun:
    """Monte Carlo of the full protocol over all randomizations and shots.

    Each shot first records the pre-selection readout r_0 of its prepared
    state (ground, or leaked with probability p_ini), drawn with the same
    outcome response as every later readout; any state disturbance of that
    readout is considered absorbed into p_ini. Each cycle then applies the
    commanded flip (failing with pi_error and doing nothing to a leaked
    shot), the per-cycle transitions, and the readout bit. A CycleModel
    includes seepage back to a uniform computational state; a
    ReadoutChannel draws (post-state, outcome) jointly from its tables and
    treats leakage as absorbing, reading out through P(0|l_g) / P(0|l_e).

    Every shot consumes a fixed number of draws per cycle from its own
    stream, so results are bit-identical regardless of how shots are
    batched or parallelized.
    """
    if sequences is None:
        sequences = generate_sequences(config)
    seq = _validate_sequences(sequences, config)
    if isinstance(model, CycleModel):
        return _simulate_cycle_model(config, model, seq, record_states)
    if isinstance(model, ReadoutChannel):
        return _simulate_channel(config, model, seq, record_states)
    raise ValidationError(f"unsupported model type {type(model).__name__}")


def _simulate_cycle_model(config, model, seq, record_states):
    k_rand, n_shots, m_cycles = config.k_randomizations, config.n_shots, config.m_cycles
    shots = k_rand * n_shots
    bases = _shot_bases(config)
    leak = model.leakage

    states = np.where(uniforms_at(bases, 0) < config.p_ini, 2, 0).astype(np.uint8)
    outcomes = np.zeros((shots, m_cycles + 1), dtype=np.uint8)
    recorded = np.empty((shots, m_cycles), dtype=np.uint8) if record_states else None
    p_one = np.array([model.eps_g, 1.0 - model.eps_e, 1.0 - leak.p0_given_l])
    outcomes[:, 0] = uniforms_at(bases, 1) < p_one[states]

    for m in range(m_cycles):
        c0 = 2 + _DRAWS_PER_CYCLE * m
        u_flip = uniforms_at(bases, c0)
        u_trans = uniforms_at(bases, c0 + 1)
        u_seep = uniforms_at(bases, c0 + 2)
        u_out = uniforms_at(bases, c0 + 3)

        flip_bit = np.repeat(seq[:, m], n_shots)
        computational = states < 2
        do_flip = computational & (flip_bit == 1) & (u_flip >= config.pi_error)
        states = np.where(do_flip, states ^ 1, states)

        in_g = states == 0
        in_e = states == 1
        in_l = states == 2
        to_leak = ~in_l & (u_trans < leak.l_up)
        to_heat = in_g & ~to_leak & (u_trans < leak.l_up + model.heating)
        to_decay = in_e & ~to_leak & (u_trans < leak.l_up + model.decay)
        seep = in_l & (u_trans < leak.l_down)

        new_states = states.copy()
        new_states[to_leak] = 2
        new_states[to_heat] = 1
        new_states[to_decay] = 0
        new_states[seep] = np.where(u_seep[seep] < 0.5, 0, 1)
        states = new_states
        if recorded is not None:
            recorded[:, m] = states

        outcomes[:, m + 1] = u_out < p_one[states]

    shape = (k_rand, n_shots, m_cycles)
    return RILBRun(
        config=config,
        sequences=seq,
        outcomes=outcomes.reshape(k_rand, n_shots, m_cycles + 1),
        states=recorded.reshape(shape) if recorded is not None else None,
    )


def _simulate_channel(config, channel, seq, record_states):
    k_rand, n_shots, m_cycles = config.k_randomizations, config.n_shots, config.m_cycles
    shots = k_rand * n_shots
    bases = _shot_bases(config)

    # States: 0 = g, 1 = e, 2 = leaked from g, 3 = leaked from e (absorbing).
    states = np.where(uniforms_at(bases, 0) < config.p_ini, 2, 0).astype(np.uint8)
    outcomes = np.zeros((shots, m_cycles + 1), dtype=np.uint8)
    recorded = np.empty((shots, m_cycles), dtype=np.uint8) if record_states else None

    # Flattened joint rows in (post, outcome) order: g0 g1 e0 e1 l0 l1.
    cum_g = np.cumsum(channel.table_g.ravel())
    cum_e = np.cumsum(channel.table_e.ravel())
    p_one_leaked = np.array([0.0, 0.0, 1.0 - channel.p0_given_lg, 1.0 - channel.p0_given_le])
    p_one_initial = p_one_leaked.copy()
    p_one_initial[0] = channel.table_g[:, 1].sum()
    p_one_initial[1] = channel.table_e[:, 1].sum()
    outcomes[:, 0] = uniforms_at(bases, 1) < p_one_initial[states]

    for m in range(m_cycles):
        c0 = 2 + _DRAWS_PER_CYCLE * m
        u_flip = uniforms_at(bases, c0)
        u_joint = uniforms_at(bases, c0 + 1)
        u_out = uniforms_at(bases, c0 + 3)

        flip_bit = np.repeat(seq[:, m], n_shots)
        computational = states < 2
        do_flip = computational & (flip_bit == 1) & (u_flip >= config.pi_error)
        states = np.where(do_flip, states ^ 1, states)

        in_g = states == 0
        in_e = states == 1
        outcome = (u_out < p_one_leaked[states]).astype(np.uint8)
        new_states = states.copy()
        for mask, cum, leak_code in ((in_g, cum_g, 2), (in_e, cum_e, 3)):
            if not np.any(mask):
                continue
            idx = np.searchsorted(cum, u_joint[mask], side="right")
            idx = np.minimum(idx, 5)
            post = (idx >> 1).astype(np.uint8)
            post = np.where(post == 2, leak_code, post).astype(np.uint8)
            new_states[mask] = post
            outcome[mask] = idx & 1
        states = new_states
        if recorded is not None:
            recorded[:, m] = states

        outcomes[:, m + 1] = outcome

    shape = (k_rand, n_shots, m_cycles)
    return RILBRun(
        config=config,
        sequences=seq,
        outcomes=outcomes.reshape(k_rand, n_shots, m_cycles + 1),
        states=recorded.reshape(shape) if recorded is not None else None,
    )


def decode(outcomes: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Correlations C_m = 1 - 2 (i_m XOR o_m) with o_m = r_{m-1} XOR r_m.

    ``outcomes`` carries r_0 .. r_M on its last axis, r_0 being the
    pre-selection readout bit; ``inputs`` carries i_1 .. i_M and must
    broadcast against the outcome shots. Returns int8 values in {-1, +1}.
    """
    r = np.asarray(outcomes, dtype=np.uint8)
    i = np.asarray(inputs, dtype=np.uint8)
    if r.shape[-1] != i.shape[-1] + 1:
        raise ValidationError(
            f"outcomes must have one more entry than inputs "
            f"(got {r.shape[-1]} vs {i.shape[-1]})"
        )
    if np.any(r > 1) or np.any(i > 1):
        raise ValidationError("outcome and input entries must be bits")
    if r.ndim == 3 and i.ndim == 2:
        i = i[:, None, :]
    o = r[..., 1:] ^ r[..., :-1]
    return (1 - 2 * (i ^ o).astype(np.int8)).astype(np.int8)


def aggregate(correlations: np.ndarray, sequences: np.ndarray) -> RILBResult:
    """Mean correlation per cycle with per-input-class statistics.

    The mean is an exact integer sum over all shots and randomizations.
    Per-randomization means are classed by the input bit at each position;
    the reported stderr is the average of the two class standard deviations
    (sample std over randomization means; an empty class is skipped).
    """
    corr = np.asarray(correlations)
    if corr.ndim != 3:
        raise ValidationError("correlations must have shape (K, N, M)")
    k_rand, n_shots, m_cycles = corr.shape
    seq = np.asarray(sequences, dtype=np.uint8)
    if seq.shape != (k_rand, m_cycles):
        raise ValidationError("sequences shape must match correlations (K, M)")

    shot_sums = corr.sum(axis=1, dtype=np.int64)
    per_rand_mean = shot_sums / float(n_shots)
    mean = shot_sums.sum(axis=0, dtype=np.int64) / float(n_shots * k_rand)

    mean_x = np.full(m_cycles, math.nan)
    mean_i = np.full(m_cycles, math.nan)
    stderr = np.zeros(m_cycles)
    for m in range(m_cycles):
        is_x = seq[:, m] == 1
        stds = []
        for mask, out in ((is_x, mean_x), (~is_x, mean_i)):
            count = int(mask.sum())
            if count == 0:
                continue
            values = per_rand_mean[mask, m]
            out[m] = shot_sums[mask, m].sum() / float(n_shots * count)
            stds.append(float(values.std(ddof=1)) if count > 1 else 0.0)
        stderr[m] = sum(stds) / len(stds)

    return RILBResult(
        cycles=np.arange(1, m_cycles + 1),
        mean_correlation=mean,
        stderr=stderr,
        mean_corr_x=mean_x,
        mean_corr_i=mean_i,
    )


_DECAY_F_THRESHOLD = 10.0
_L_MAX = 0.999
# Correlations are bounded by 1, so the asymptote A/2 and the extrapolated
# m -> 0 value (A + B)/2 must lie in [-1, 1] with a nonnegative decaying
# amplitude. Without the bound, data whose decay is nearly linear over the
# window admits a cost ridge B -> inf, L -> 0 that derails the fit.
_AMP_BOX = ((-2.0, 2.0), (0.0, 2.0))


def decay_model(parameters, cycles):
    """Correlation curve (A + B (1-L)^m) / 2 at the given cycle numbers."""
    a, b, l = parameters
    return 0.5 * (a + b * np.power(1.0 - l, cycles))


def _box_lstsq(design, target):
    """Two-column weighted least squares on the physical (A, B) box.

    The quadratic cost is convex, so the constrained minimum is either the
    unconstrained solution or the clamped 1-parameter solution on one of
    the four box edges.
    """
    (a_lo, a_hi), (b_lo, b_hi) = _AMP_BOX
    sol, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
    if a_lo <= sol[0] <= a_hi and b_lo <= sol[1] <= b_hi:
        candidates = [sol]
    else:
        candidates = []
        col_a, col_b = design[:, 0], design[:, 1]
        for b_fix in (b_lo, b_hi):
            norm = float(col_a @ col_a)
            a = float(col_a @ (target - col_b * b_fix)) / norm if norm > 0 else 0.0
            candidates.append(np.array([min(max(a, a_lo), a_hi), b_fix]))
        for a_fix in (a_lo, a_hi):
            norm = float(col_b @ col_b)
            b = float(col_b @ (target - col_a * a_fix)) / norm if norm > 0 else 0.0
            candidates.append(np.array([a_fix, min(max(b, b_lo), b_hi)]))

    def cost(c):
        resid = design @ c - target
        return float(resid @ resid)

    best = min(candidates, key=cost)
    return best, cost(best)


class _ProfiledModel:
    """Decay model with (A, B) profiled out exactly at each fixed L.

    full=True fits both the offset A and the amplitude B; full=False pins
    A = 0 (decay toward zero asymptote), leaving B the only linear
    coefficient. Either way the profiled cost is a 1-d function of L,
    minimized by a grid scan plus bounded refinement.
    """

    def __init__(self, cycles, target, sqrt_w, full):
        self.cycles = cycles
        self.target = target
        self.sqrt_w = sqrt_w
        self.full = full
        self.evaluations = 0

    def solve_at(self, l0):
        self.evaluations += 1
        decay_col = 0.5 * np.power(1.0 - l0, self.cycles) * self.sqrt_w
        if self.full:
            offset_col = 0.5 * self.sqrt_w
            (a, b), cost = _box_lstsq(
                np.column_stack([offset_col, decay_col]), self.target
            )
        else:
            b_lo, b_hi = _AMP_BOX[1]
            norm = float(decay_col @ decay_col)
            b = float(decay_col @ self.target) / norm if norm > 0 else 0.0
            b = min(max(b, b_lo), b_hi)
            resid = decay_col * b - self.target
            a, cost = 0.0, float(resid @ resid)
        return np.array([a, b, l0]), cost

    def minimize(self):
        grid = np.concatenate([[0.0], np.geomspace(1e-5, _L_MAX, 160)])
        costs = [self.solve_at(l0)[1] for l0 in grid]
        pivot = int(np.argmin(costs))
        lo = grid[pivot - 1] if pivot > 0 else 0.0
        hi = grid[pivot + 1] if pivot + 1 < len(grid) else _L_MAX
        refined = minimize_scalar(
            lambda l0: self.solve_at(l0)[1], bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-13},
        )
        best_l = float(refined.x) if refined.fun <= costs[pivot] else float(grid[pivot])
        return self.solve_at(best_l)


def _escalation_significant(cost_simple, cost_complex, df_extra, dof_complex):
    """Nested-model F-test at the acceptance threshold.

    A perfect complex fit over an imperfect simple one always escalates;
    otherwise the mean-square improvement per extra parameter must exceed
    the residual mean square by the threshold factor.
    """
    if cost_complex == 0.0:
        return cost_simple > 0.0
    if dof_complex <= 0:
        return False
    f_ratio = ((cost_simple - cost_complex) / df_extra) / (cost_complex / dof_complex)
    return f_ratio >= _DECAY_F_THRESHOLD


def _constant_fallback(cycles, mean, weights):
    fit = least_squares(
        lambda p, m: np.full(len(m), p[0]), (cycles, mean, weights), [float(np.mean(mean))]
    )
    covariance = np.zeros((3, 3))
    covariance[0, 0] = 4.0 * fit.covariance[0, 0]
    return FitResult(
        parameters=np.array([2.0 * fit.parameters[0], 0.0, 0.0]),
        covariance=covariance,
        residual_norm=fit.residual_norm,
        converged=fit.converged,
        iterations=fit.iterations,
    )


def fit_leakage(result: RILBResult) -> FitResult:
    """Weighted fit of <C>_m = (A + B (1-L)^m) / 2 over (A, B, L).

    Weights are 1/stderr^2; zero standard errors are floored at 1e-6 of the
    largest to keep weights finite, and all-zero standard errors fall back
    to uniform weighting. (A, B) are profiled out exactly at each L on
    their physical box (every correlation lies in [-1, 1], so the asymptote
    A/2 and the extrapolated initial value (A + B)/2 do too), which is
    immune to the flat B -> inf, L -> 0 cost ridge that defeats
    unconstrained descent when the window captures only the linear onset
    of the decay.

    Model complexity is chosen by stepwise nested F-tests: the constant
    model (L = 0) is nested in the zero-asymptote decay (A = 0, L free via
    B (1-L)^m = B at L = 0), which is nested in the full three-parameter
    model. Each escalation must improve the simpler fit by an F-ratio of
    at least 10; this keeps noise from masquerading as decay (the L -> 1
    term can fit any single-point excursion) and keeps the barely-curved
    small-L regime from wandering along the offset/amplitude ridge. Data
    without a significant decay is reported as the constant fit with L = 0
    and ClampedFitWarning; the bounded search makes a fitted L outside
    [0, 1] unrepresentable.
    """
    cycles = np.asarray(result.cycles, dtype=np.int64)
    mean = np.asarray(result.mean_correlation, dtype=float)
    if len(cycles) < 3:
        raise ValidationError("need at least 3 cycle points to fit (A, B, L)")
    stderr = np.asarray(result.stderr, dtype=float)
    if np.any(stderr < 0) or not np.all(np.isfinite(stderr)):
        raise InvalidDataError("standard errors must be finite and nonnegative")
    top = stderr.max()
    if top == 0.0:
        weights = None
    else:
        floored = np.maximum(stderr, 1e-6 * top)
        weights = 1.0 / floored**2

    sqrt_w = np.ones(len(mean)) if weights is None else np.sqrt(weights)
    target = mean * sqrt_w
    points = len(cycles)

    constant = _constant_fallback(cycles, mean, weights)
    cost_const = constant.residual_norm**2

    zero_asym = _ProfiledModel(cycles, target, sqrt_w, full=False)
    params_zero, cost_zero = zero_asym.minimize()
    full = _ProfiledModel(cycles, target, sqrt_w, full=True)
    params_full, cost_full = full.minimize()
    evaluations = zero_asym.evaluations + full.evaluations

    winner, cost_winner, free = None, cost_const, 1
    if _escalation_significant(cost_const, cost_zero, 1, points - 2):
        winner, cost_winner, free = params_zero, cost_zero, 2
    if _escalation_significant(cost_winner, cost_full, 3 - free, points - 3):
        winner, cost_winner, free = params_full, cost_full, 3

    if winner is None:
        if cost_const > 0.0 and points > 2:
            f_ratio = (cost_const - cost_zero) / (cost_zero / (points - 2))
            detail = f"is not significant against the constant model (F = {f_ratio:.2f})"
        else:
            detail = "is unidentifiable"
        warnings.warn(
            f"decay {detail}; reporting the constant fit with L = 0",
            ClampedFitWarning,
            stacklevel=2,
        )
        return constant

    a_hat, b_hat, leakage = winner
    decay_pow = np.power(1.0 - leakage, cycles)
    columns = [decay_pow, -b_hat * cycles * np.power(1.0 - leakage, cycles - 1)]
    if free == 3:
        columns.insert(0, np.ones(points))
    jacobian = 0.5 * np.column_stack(columns) * sqrt_w[:, None]
    singular = np.linalg.svd(jacobian, compute_uv=False)
    if singular[-1] <= 1e-14 * singular[0]:
        warnings.warn(
            "decay amplitude is unidentifiable; reporting the constant fit with L = 0",
            ClampedFitWarning,
            stacklevel=2,
        )
        return constant
    dof = points - free
    scale = cost_winner / dof if dof > 0 else 1.0
    block = scale * np.linalg.inv(jacobian.T @ jacobian)
    block = 0.5 * (block + block.T)
    covariance = np.zeros((3, 3))
    kept = [0, 1, 2] if free == 3 else [1, 2]
    covariance[np.ix_(kept, kept)] = block
    return FitResult(
        parameters=np.asarray(winner, dtype=float),
        covariance=covariance,
        residual_norm=math.sqrt(cost_winner),
        converged=True,
        iterations=evaluations,
    )


def superoperator_leakage(model: LeakageModel, m: int, p_ini: float = 0.0) -> float:
    """Leakage population after m cycles of the (L_up, L_down) channel.

    Closed form of the m-th power of the 2x2 population superoperator:
    L_up/L - (1-L)^m (L_up/L - p_ini) with L = L_up + L_down, reducing to
    p_ini when L = 0.
    """
    if m < 0:
        raise ValidationError("cycle count must be nonnegative")
    _check_probability(p_ini, "p_ini")
    total = model.total
    if total == 0.0:
        return p_ini
    fixed_point = model.l_up / total
    return fixed_point - (1.0 - total) ** m * (fixed_point - p_ini)


def run_protocol(
    config: RILBConfig,
    model: CycleModel | ReadoutChannel,
    sequences: np.ndarray | None = None,
    record_states: bool = False,
) -> tuple[RILBRun, RILBResult]:
    """Simulate, decode, aggregate, and fit in one pass."""
    run = simulate_run(config, model, sequences=sequences, record_states=record_states)
    correlations = decode(run.outcomes, run.sequences)
    result = aggregate(correlations, run.sequences)
    fit = fit_leakage(result)
    return run, replace(result, fit=fit)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_OUTCOME_MAGIC = b"RBO1"
_OUTCOME_HEADER = struct.Struct("<4sIIIQ")


def aggregate_to_csv(result: RILBResult, path) -> None:
    rows = zip(
        result.cycles,
        result.mean_correlation,
        result.stderr,
        result.mean_corr_x,
        result.mean_corr_i,
    )
    _io.write_csv(path, ["m", "mean_corr", "stderr", "mean_corr_X", "mean_corr_I"], rows)


def read_aggregate(path) -> RILBResult:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != ["m", "mean_corr", "stderr", "mean_corr_X", "mean_corr_I"]:
            raise InvalidDataError(f"unexpected aggregate header {header!r}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if not rows:
        raise InvalidDataError("aggregate file has no data rows")
    data = np.array([[float(cell) for cell in row] for row in rows])
    return RILBResult(
        cycles=data[:, 0].astype(np.int64),
        mean_correlation=data[:, 1],
        stderr=data[:, 2],
        mean_corr_x=data[:, 3],
        mean_corr_i=data[:, 4],
    )


def fit_to_json(fit: FitResult) -> str:
    a, b, leakage = (float(v) for v in fit.parameters)
    return _io.dump_json(
        {
            "A": a,
            "B": b,
            "L": leakage,
            "L_stderr": math.sqrt(max(float(fit.covariance[2, 2]), 0.0)),
            "converged": bool(fit.converged),
        }
    )


def write_outcomes(path, run: RILBRun) -> None:
    """Raw outcome bits, packed; header carries (M, K, N, seed).

    Each shot contributes M + 1 bits (r_0 through r_M) in cycle order;
    shots are packed consecutively in (randomization, shot) order.
    """
    header = _OUTCOME_HEADER.pack(
        _OUTCOME_MAGIC,
        run.config.m_cycles,
        run.config.k_randomizations,
        run.config.n_shots,
        run.config.seed,
    )
    packed = np.packbits(run.outcomes.reshape(-1))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(packed.tobytes())


def read_outcomes(path) -> tuple[dict, np.ndarray]:
    """Inverse of write_outcomes: header fields and the (K, N, M+1) bits."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _OUTCOME_HEADER.size:
        raise InvalidDataError("outcome file too short for its header")
    magic, m_cycles, k_rand, n_shots, seed = _OUTCOME_HEADER.unpack_from(raw)
    if magic != _OUTCOME_MAGIC:
        raise InvalidDataError(f"bad outcome-file magic {magic!r}")
    n_bits = k_rand * n_shots * (m_cycles + 1)
    body = np.frombuffer(raw, dtype=np.uint8, offset=_OUTCOME_HEADER.size)
    if len(body) != (n_bits + 7) // 8:
        raise InvalidDataError("outcome payload length does not match the header")
    bits = np.unpackbits(body, count=n_bits).reshape(k_rand, n_shots, m_cycles + 1)
    header = {"M": m_cycles, "K": k_rand, "N": n_shots, "seed": seed}
    return header, bits
