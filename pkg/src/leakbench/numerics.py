"""Shared numerical kernels.

Four pieces the rest of the toolkit builds on:

* a counter-based deterministic random source (:class:`RandomStream`),
* a fixed-step classical RK4 integrator (:func:`integrate_ode`),
* a Levenberg-Marquardt nonlinear least-squares solver (:func:`least_squares`),
* a real-cubic root finder (:func:`cubic_real_roots`).

Everything is pure given its inputs. Randomness is a hash of
(seed, stream_id, counter), so results are independent of thread count and
platform; reordering work units cannot change any drawn value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateFitError,
    IntegrationDivergedError,
    PolynomialDegreeError,
    ValidationError,
)

__all__ = [
    "FitResult",
    "RandomStream",
    "draw",
    "integrate_ode",
    "least_squares",
    "cubic_real_roots",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xD1B54A32D192ED03


def _mix64(z: int) -> int:
    """SplitMix64 finalizer: a 64-bit bijection with good avalanche."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


def stream_base(seed: int, stream_id: int) -> int:
    """Starting point of the (seed, stream_id) counter sequence."""
    return _mix64(_mix64(seed & _MASK64) ^ _mix64((stream_id ^ _STREAM_SALT) & _MASK64))


def stream_base_array(seed: int, stream_ids: np.ndarray) -> np.ndarray:
    """Vectorized :func:`stream_base` over many stream ids."""
    ids = np.asarray(stream_ids, dtype=np.uint64)
    mixed = _mix64_array(ids ^ np.uint64(_STREAM_SALT))
    return _mix64_array(np.uint64(_mix64(seed & _MASK64)) ^ mixed)


def uniforms_at(bases: np.ndarray, counter: int) -> np.ndarray:
    """Uniform [0,1) values at a fixed counter for many streams at once.

    Bit-identical to RandomStream(seed, id) advanced to the same counter.
    """
    words = _mix64_array(
        np.asarray(bases, dtype=np.uint64)
        + np.uint64(((counter + 1) * _GOLDEN) & _MASK64)
    )
    return (words >> np.uint64(11)) * 2.0**-53


@dataclass
class RandomStream:
    """Deterministic uniform source addressed by (seed, stream_id, counter).

    Value-like: copies are independent, and any number of streams derived
    from the same seed may be consumed concurrently. The n-th draw of a
    given (seed, stream_id) is the same on every platform and thread.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0
    _base: int = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream_id = int(self.stream_id) & _MASK64
        self.counter = int(self.counter)
        self._base = stream_base(self.seed, self.stream_id)

    def spawn(self, stream_id: int) -> "RandomStream":
        """Fresh stream with the same seed and a new stream id."""
        return RandomStream(self.seed, stream_id)

    def _word(self, index: int) -> int:
        return _mix64((self._base + ((index + 1) * _GOLDEN & _MASK64)) & _MASK64)

    def draw(self) -> float:
        """Next uniform value in [0, 1)."""
        value = (self._word(self.counter) >> 11) * 2.0**-53
        self.counter += 1
        return value

    def draw_array(self, n: int) -> np.ndarray:
        """Next n uniforms as a vector (same values as n scalar draws)."""
        if n < 0:
            raise ValidationError("draw count must be nonnegative")
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        words = _mix64_array(np.uint64(self._base) + idx * np.uint64(_GOLDEN))
        self.counter += n
        return (words >> np.uint64(11)) * 2.0**-53

    def normal(self) -> float:
        """Standard normal deviate (Box-Muller; consumes two uniforms)."""
        u1 = self.draw()
        u2 = self.draw()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def normal_array(self, n: int) -> np.ndarray:
        u = self.draw_array(2 * n)
        r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        return r * np.cos(2.0 * np.pi * u[1::2])


def draw(stream: RandomStream) -> float:
    """Uniform real in [0, 1), deterministic per (seed, stream_id, draw index)."""
    return stream.draw()


# ---------------------------------------------------------------------------
# ODE integration
# ---------------------------------------------------------------------------


def rk4_sample_times(t0: float, t1: float, dt: float) -> np.ndarray:
    """Fixed-step sample grid: t0, t0+dt, ..., with the final point exactly t1."""
    span = t1 - t0
    n_full = int(math.floor(span / dt + 1e-9))
    if n_full * dt > span * (1.0 + 1e-12):
        n_full -= 1
    times = t0 + dt * np.arange(n_full + 1, dtype=float)
    if span - n_full * dt > 1e-9 * dt:
        times = np.append(times, t1)
    else:
        times[-1] = t1
    return times


def integrate_ode(
    derivative: Callable[[float, np.ndarray], np.ndarray],
    initial,
    t_span: Sequence[float],
    dt: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Classical 4th-order Runge-Kutta with a fixed step.

    Samples at t0, t0+dt, ... and exactly at t1 (the last step is shortened
    when the span is not an integer number of steps). Returns
    ``(times, states)`` where ``states[k]`` is the state at ``times[k]``.

    Raises IntegrationDivergedError (naming the failure time) if the state
    becomes non-finite.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if not t1 > t0:
        raise ValidationError("t_span must satisfy t1 > t0")

    y = np.asarray(initial, dtype=complex)
    times = rk4_sample_times(t0, t1, dt)
    states = np.empty((len(times),) + y.shape, dtype=complex)
    states[0] = y

    for k in range(1, len(times)):
        t = times[k - 1]
        h = times[k] - t
        k1 = derivative(t, y)
        k2 = derivative(t + 0.5 * h, y + (0.5 * h) * k1)
        k3 = derivative(t + 0.5 * h, y + (0.5 * h) * k2)
        k4 = derivative(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationDivergedError(times[k])
        states[k] = y

    return times, states


# ---------------------------------------------------------------------------
# Nonlinear least squares (Levenberg-Marquardt)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    """Outcome of a least-squares fit.

    parameters: fitted values; covariance: scaled inverse approximate
    Hessian (symmetric PSD when converged); residual_norm: ||weighted
    residual|| at the solution; converged: whether a stopping criterion was
    met before the iteration cap; iterations: accepted LM steps.
    """

    parameters: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int

    def __post_init__(self):
        if self.residual_norm < 0:
            raise ValidationError("residual_norm must be nonnegative")


def _forward_jacobian(residual_fn, p, r0, rel_step):
    n_par = len(p)
    jac = np.empty((len(r0), n_par))
    for j in range(n_par):
        h = rel_step * max(abs(p[j]), 1.0)
        pj = p.copy()
        pj[j] += h
        jac[:, j] = (residual_fn(pj) - r0) / h
    return jac


def least_squares(
    model: Callable,
    data: tuple,
    initial_guess,
    *,
    max_iterations: int = 500,
    jacobian_step: float = 1e-7,
    residual_tol: float = 1e-10,
    step_tol: float = 1e-12,
) -> FitResult:
    """Levenberg-Marquardt descent on weighted residuals.

    ``data`` is ``(inputs, observations, weights)``; weights may be None for
    uniform weighting. ``model(parameters, inputs)`` returns predictions
    aligned with observations. Convergence: relative residual-norm-squared
    change < residual_tol, or step norm < step_tol (relative to 1 + |p|).

    The covariance is ``s^2 (J^T J)^{-1}`` with ``s^2`` the reduced chi-square
    at the solution. A numerically singular Jacobian at the solution raises
    DegenerateFitError; hitting the iteration cap returns converged=False.
    """
    inputs, observations, weights = data
    obs = np.asarray(observations, dtype=float).ravel()
    if weights is None:
        sqrt_w = np.ones_like(obs)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != obs.shape:
            raise ValidationError("weights must match observations in length")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be positive and finite")
        sqrt_w = np.sqrt(w)

    p = np.asarray(initial_guess, dtype=float).ravel().copy()
    if len(obs) < len(p):
        raise ValidationError("observation count must be at least the parameter count")

    def residual(params):
        pred = np.asarray(model(params, inputs), dtype=float).ravel()
        if pred.shape != obs.shape:
            raise ValidationError("model output must match observations in length")
        return sqrt_w * (pred - obs)

    r = residual(p)
    if not np.all(np.isfinite(r)):
        raise ValidationError("model returned non-finite residuals at the initial guess")
    cost = float(r @ r)
    lam = 1e-3
    iterations = 0
    converged = False

    for _ in range(max_iterations):
        jac = _forward_jacobian(residual, p, r, jacobian_step)
        if not np.all(np.isfinite(jac)):
            raise DegenerateFitError("non-finite Jacobian")
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj).copy()
        if np.any(diag == 0.0):
            raise DegenerateFitError(
                "singular Jacobian: a parameter has no effect on the residuals"
            )
        accepted = False
        while lam <= 1e13:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError as exc:  # pragma: no cover - diag>0 guards this
                raise DegenerateFitError("singular normal equations") from exc
            trial = p + step
            r_trial = residual(trial)
            cost_trial = float(r_trial @ r_trial)
            if np.isfinite(cost_trial) and cost_trial <= cost:
                rel_change = (cost - cost_trial) / max(cost, np.finfo(float).tiny)
                step_small = np.linalg.norm(step) < step_tol * (1.0 + np.linalg.norm(p))
                p, r, cost = trial, r_trial, cost_trial
                iterations += 1
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if rel_change < residual_tol or step_small:
                    converged = True
                break
            lam *= 10.0
        if not accepted:
            # Damping pushed the step below resolution: stationary point.
            converged = True
            break
        if converged:
            break

    jac = _forward_jacobian(residual, p, r, jacobian_step)
    singular_values = np.linalg.svd(jac, compute_uv=False)
    if singular_values[0] == 0.0 or singular_values[-1] <= 1e-14 * singular_values[0]:
        raise DegenerateFitError("singular Jacobian at the solution")
    jtj = jac.T @ jac
    dof = len(obs) - len(p)
    scale = cost / dof if dof > 0 else 1.0
    covariance = scale * np.linalg.inv(jtj)
    covariance = 0.5 * (covariance + covariance.T)

    return FitResult(
        parameters=p,
        covariance=covariance,
        residual_norm=math.sqrt(cost),
        converged=converged,
        iterations=iterations,
    )


# ---------------------------------------------------------------------------
# Real cubic roots
# ---------------------------------------------------------------------------


def _polish_newton(coeffs: np.ndarray, x: float, max_iter: int = 80) -> float:
    c3, c2, c1, c0 = coeffs
    for _ in range(max_iter):
        p = ((c3 * x + c2) * x + c1) * x + c0
        dp = (3.0 * c3 * x + 2.0 * c2) * x + c1
        if dp == 0.0:
            break
        step = p / dp
        x_new = x - step
        if not math.isfinite(x_new):
            break
        if abs(step) <= 1e-16 * (1.0 + abs(x_new)):
            x = x_new
            break
        x = x_new
    return x


def cubic_real_roots(c3: float, c2: float, c1: float, c0: float) -> list[float]:
    """All real roots of c3 x^3 + c2 x^2 + c1 x + c0, ascending.

    Each returned root r satisfies |p(r)| < 1e-9 * max|c_i|. A complex
    conjugate pair is excluded, so the count is 1 or 3 except at double
    roots (where the repeated value appears once).
    """
    if c3 == 0:
        raise PolynomialDegreeError("leading cubic coefficient is zero")
    coeffs = np.array([c3, c2, c1, c0], dtype=float)
    if not np.all(np.isfinite(coeffs)):
        raise ValidationError("cubic coefficients must be finite")
    scale = float(np.max(np.abs(coeffs)))
    raw = np.roots(coeffs)

    polished = []
    for z in raw:
        x = float(_polish_newton(coeffs, float(z.real)))
        p_val = ((c3 * x + c2) * x + c1) * x + c0
        if abs(p_val) < 1e-9 * scale:
            polished.append(x)

    polished.sort()
    roots: list[float] = []
    for x in polished:
        if roots and abs(x - roots[-1]) <= 1e-8 * (1.0 + abs(x)):
            continue
        roots.append(x)
    if not roots:
        # Fall back to the most-real candidate; a real cubic always has a root.
        z = min(raw, key=lambda v: abs(v.imag))
        roots = [float(_polish_newton(coeffs, float(z.real)))]
    return roots
