"""Driven Kerr (Duffing) model of the readout resonator.

The resonator obeys, in the frame rotating at the drive,

    d(alpha)/dt = -(i*delta_eff + i*K*|alpha|^2 + kappa_r/2) * alpha + A(t)

with one effective detuning per qubit branch. The drive detuning is
referenced to the midpoint of the two branch resonances, so the branches
see ``detuning -/+ chi_qr/2`` (minus for ground). This module provides
trajectory simulation under piecewise-constant drives, steady-state
solutions of the cubic photon-number equation, photon-number calibration,
the normalized measurement rate, and SNR/efficiency utilities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _io
from .errors import (
    DataConsistencyWarning,
    DegenerateReadoutError,
    InvalidDataError,
    IonizationRegimeError,
    ValidationError,
)
from .numerics import FitResult, cubic_real_roots, least_squares, rk4_sample_times

__all__ = [
    "ResonatorParams",
    "ShapedPulse",
    "Trajectory",
    "simulate_trajectories",
    "steady_state",
    "calibrate_photon_number",
    "measurement_rate",
    "snr_slope",
    "fit_efficiency",
    "trajectory_to_csv",
]

PHOTON_DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class ResonatorParams:
    """Duffing model coefficients, all rates in rad/s.

    kappa_r must equal kappa_ext + kappa_int (checked to 1e-9 relative);
    kerr is the self-Kerr K, chi_qr the qubit-state dispersive shift, and
    k_sca the dimensionless DAC-amplitude-to-drive-rate conversion.
    """

    kappa_r: float
    kappa_ext: float
    kappa_int: float
    kerr: float
    chi_qr: float
    k_sca: complex = 1.0 + 0.0j

    def __post_init__(self):
        if self.kappa_ext < 0 or self.kappa_int < 0:
            raise ValidationError("kappa_ext and kappa_int must be nonnegative")
        total = self.kappa_ext + self.kappa_int
        if abs(self.kappa_r - total) > 1e-9 * max(abs(self.kappa_r), abs(total), 1e-300):
            raise ValidationError(
                "kappa_r must equal kappa_ext + kappa_int "
                f"(got {self.kappa_r!r} vs {total!r})"
            )

    @classmethod
    def from_couplings(cls, kappa_ext, kappa_int, kerr, chi_qr, k_sca=1.0 + 0.0j):
        return cls(kappa_ext + kappa_int, kappa_ext, kappa_int, kerr, chi_qr, k_sca)


@dataclass(frozen=True)
class ShapedPulse:
    """Piecewise-constant complex drive envelope with one global detuning.

    segments: ordered (amplitude rad/s, length s) pairs, all lengths > 0.
    detuning: drive offset from the low-power branch midpoint, rad/s.
    """

    segments: tuple[tuple[complex, float], ...]
    detuning: float = 0.0

    def __post_init__(self):
        segs = tuple((complex(a), float(l)) for a, l in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValidationError("pulse needs at least one segment")
        for _, length in segs:
            if not length > 0:
                raise ValidationError("segment lengths must be positive")

    @property
    def duration(self) -> float:
        return sum(length for _, length in self.segments)


@dataclass(frozen=True)
class Trajectory:
    """Complex resonator amplitudes vs time for the two qubit branches."""

    times: np.ndarray
    alpha_g: np.ndarray
    alpha_e: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.alpha_g) == len(self.alpha_e)):
            raise ValidationError("trajectory arrays must have equal length")
        if not (np.all(np.isfinite(self.alpha_g)) and np.all(np.isfinite(self.alpha_e))):
            raise ValidationError("trajectory amplitudes must be finite")


def default_time_step(kappa_r: float, segment_length: float) -> float:
    """Integration step: fine enough for both the linewidth and the segment."""
    return min(1.0 / (50.0 * kappa_r), segment_length / 20.0)


def _advance_branch_pair(ag, ae, lin_g, lin_e, kerr, amp, times, out_g, out_e, start, t_offset):
    """RK4 through one constant-drive segment for both branches at once.

    ``times`` are the segment-local sample instants (first entry is the
    current time). The stage math is spelled out inline: this loop runs
    millions of times inside the pulse optimizer. Diverging amplitude
    raises IonizationRegimeError.
    """
    ik = 1j * kerr
    limit = PHOTON_DIVERGENCE_LIMIT
    # Plain-float grid: numpy scalars in this loop are several times slower.
    grid = [float(t) for t in times]
    for k in range(1, len(grid)):
        h = grid[k] - grid[k - 1]
        half = 0.5 * h

        k1g = (lin_g - ik * (ag.real * ag.real + ag.imag * ag.imag)) * ag + amp
        k1e = (lin_e - ik * (ae.real * ae.real + ae.imag * ae.imag)) * ae + amp
        yg = ag + half * k1g
        ye = ae + half * k1e
        k2g = (lin_g - ik * (yg.real * yg.real + yg.imag * yg.imag)) * yg + amp
        k2e = (lin_e - ik * (ye.real * ye.real + ye.imag * ye.imag)) * ye + amp
        yg = ag + half * k2g
        ye = ae + half * k2e
        k3g = (lin_g - ik * (yg.real * yg.real + yg.imag * yg.imag)) * yg + amp
        k3e = (lin_e - ik * (ye.real * ye.real + ye.imag * ye.imag)) * ye + amp
        yg = ag + h * k3g
        ye = ae + h * k3e
        k4g = (lin_g - ik * (yg.real * yg.real + yg.imag * yg.imag)) * yg + amp
        k4e = (lin_e - ik * (ye.real * ye.real + ye.imag * ye.imag)) * ye + amp
        ag = ag + (h / 6.0) * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
        ae = ae + (h / 6.0) * (k1e + 2.0 * k2e + 2.0 * k3e + k4e)

        ng = ag.real * ag.real + ag.imag * ag.imag
        ne = ae.real * ae.real + ae.imag * ae.imag
        if not (ng < limit and ne < limit):
            raise IonizationRegimeError(
                "photon number exceeded "
                f"{PHOTON_DIVERGENCE_LIMIT:g} at t = {t_offset + grid[k]:.3e} s; "
                "the dispersive model is not trustworthy here, lower the drive power"
            )
        out_g[start + k] = ag
        out_e[start + k] = ae
    return ag, ae


def simulate_trajectories(
    params: ResonatorParams,
    pulse: ShapedPulse,
    tail: float | None = None,
    dt: float | None = None,
) -> Trajectory:
    """Integrate both qubit branches from vacuum through the pulse plus tail.

    The ground branch sees ``detuning - chi_qr/2`` and the excited branch
    ``detuning + chi_qr/2``; after the last segment the drive is zero for
    ``tail`` seconds (default 10/kappa_r). Piecewise-constant segments are
    integrated one at a time, so every segment boundary (and the pulse end)
    is an exact sample point.
    """
    if tail is None:
        tail = 10.0 / params.kappa_r
    if tail < 0:
        raise ValidationError("tail must be nonnegative")

    delta_g = pulse.detuning - 0.5 * params.chi_qr
    delta_e = pulse.detuning + 0.5 * params.chi_qr
    lin_g = -(1j * delta_g + 0.5 * params.kappa_r)
    lin_e = -(1j * delta_e + 0.5 * params.kappa_r)

    pieces = [(complex(a), float(l)) for a, l in pulse.segments]
    if tail > 0:
        pieces.append((0.0 + 0.0j, tail))

    local_grids = []
    n_total = 1
    for _, length in pieces:
        step = dt if dt is not None else default_time_step(params.kappa_r, length)
        if not step > 0:
            raise ValidationError("dt must be positive")
        grid = rk4_sample_times(0.0, length, step)
        local_grids.append(grid)
        n_total += len(grid) - 1

    times = np.empty(n_total)
    alpha_g = np.empty(n_total, dtype=complex)
    alpha_e = np.empty(n_total, dtype=complex)
    times[0] = 0.0
    alpha_g[0] = 0.0 + 0.0j
    alpha_e[0] = 0.0 + 0.0j

    ag = 0.0 + 0.0j
    ae = 0.0 + 0.0j
    pos = 0
    t_offset = 0.0
    for (amp, length), grid in zip(pieces, local_grids):
        ag, ae = _advance_branch_pair(
            ag, ae, lin_g, lin_e, params.kerr, amp, grid, alpha_g, alpha_e, pos, t_offset
        )
        times[pos + 1 : pos + len(grid)] = t_offset + grid[1:]
        pos += len(grid) - 1
        t_offset += length
        times[pos] = t_offset

    return Trajectory(times=times, alpha_g=alpha_g, alpha_e=alpha_e)


def steady_state(
    params: ResonatorParams, detuning: float, amplitude: complex
) -> list[tuple[float, complex]]:
    """Steady solutions of [(delta + K n)^2 + kappa^2/4] n = |A|^2.

    Returns (photon number, complex amplitude) pairs sorted by photon
    number; one or three solutions depending on bistability.
    """
    amp2 = abs(complex(amplitude)) ** 2
    kappa = params.kappa_r
    kerr = params.kerr
    if kerr == 0.0:
        denom = detuning * detuning + 0.25 * kappa * kappa
        n_values = [amp2 / denom]
    else:
        n_values = cubic_real_roots(
            kerr * kerr,
            2.0 * detuning * kerr,
            detuning * detuning + 0.25 * kappa * kappa,
            -amp2,
        )
        n_values = [max(n, 0.0) for n in n_values if n > -1e-12]
    solutions = []
    for n in sorted(n_values):
        alpha = complex(amplitude) / (1j * (detuning + kerr * n) + 0.5 * kappa)
        solutions.append((n, alpha))
    return solutions


def _nearest_steady_photon(kerr, kappa, detuning, amp2, observed):
    """Steady photon number on the branch closest to the observation."""
    if kerr == 0.0:
        return amp2 / (detuning * detuning + 0.25 * kappa * kappa)
    roots = cubic_real_roots(
        kerr * kerr,
        2.0 * detuning * kerr,
        detuning * detuning + 0.25 * kappa * kappa,
        -amp2,
    )
    return min(roots, key=lambda n: abs(n - observed))


def calibrate_photon_number(
    data: Sequence[tuple[float, float, float]],
    guess: tuple[float, float, float],
) -> FitResult:
    """Fit (K, kappa_r, |k_sca|) to observed steady photon numbers.

    ``data`` rows are (drive detuning rad/s, DAC amplitude, observed photon
    number); the model drive rate is |k_sca| * |a_DAC|. When the cubic is
    bistable the branch nearest each observation is used. Emits
    DataConsistencyWarning when the fitted Kerr is within one standard
    error of zero.
    """
    rows = [(float(d), abs(a), float(n)) for d, a, n in data]
    if len({d for d, _, _ in rows}) < 3:
        raise ValidationError("need at least 3 distinct detunings")
    if len({a for _, a, _ in rows}) < 2:
        raise ValidationError("need at least 2 distinct drive amplitudes")
    observed = np.array([n for _, _, n in rows])

    def model(p, _inputs):
        kerr, kappa, ksca = p
        return np.array(
            [
                _nearest_steady_photon(kerr, kappa, d, (ksca * a) ** 2, n_obs)
                for d, a, n_obs in rows
            ]
        )

    fit = least_squares(model, (None, observed, None), np.asarray(guess, dtype=float))
    kerr, kappa, ksca = fit.parameters
    # kappa and |k_sca| enter the model squared; report the positive sheet.
    params = np.array([kerr, abs(kappa), abs(ksca)])
    fit = FitResult(
        parameters=params,
        covariance=fit.covariance,
        residual_norm=fit.residual_norm,
        converged=fit.converged,
        iterations=fit.iterations,
    )
    kerr_sigma = math.sqrt(max(fit.covariance[0, 0], 0.0))
    if abs(kerr) < kerr_sigma:
        warnings.warn(
            "fitted Kerr coefficient is consistent with zero within one standard error",
            DataConsistencyWarning,
            stacklevel=2,
        )
    return fit


def measurement_rate(traj: Trajectory) -> np.ndarray:
    """|alpha_g - alpha_e|^2 normalized to unit peak, sampled on traj.times."""
    sep = np.abs(traj.alpha_g - traj.alpha_e) ** 2
    peak = sep.max() if len(sep) else 0.0
    if peak == 0.0:
        raise DegenerateReadoutError(
            "the two branches never separate; measurement rate is identically zero"
        )
    return sep / peak


def snr_slope(params: ResonatorParams, nbar_r: float, eta: float) -> float:
    """Steady-state SNR accumulation rate, 1/s.

    slope = eta * nbar_r * kappa_ext * 8 chi_qr^2 / (chi_qr^2 + kappa_r^2)
    """
    if not nbar_r > 0:
        raise ValidationError("photon number must be positive")
    if not 0.0 <= eta <= 1.0:
        raise ValidationError("efficiency must lie in [0, 1]")
    chi2 = params.chi_qr * params.chi_qr
    return eta * nbar_r * params.kappa_ext * 8.0 * chi2 / (chi2 + params.kappa_r * params.kappa_r)


def fit_efficiency(
    data: Sequence[tuple[float, float]],
    params: ResonatorParams,
    nbar_r: float,
) -> FitResult:
    """Extract the efficiency from steady-state SNR vs integration time.

    Fits a line through the origin to (tau_int, SNR) pairs and divides the
    slope by the eta=1 prediction. A negative fitted slope means the data
    cannot come from this channel model and raises InvalidDataError.
    """
    if len(data) < 3:
        raise ValidationError("need at least 3 integration times")
    taus = np.array([t for t, _ in data], dtype=float)
    snrs = np.array([s for _, s in data], dtype=float)
    unit_slope = snr_slope(params, nbar_r, 1.0)

    fit = least_squares(lambda p, t: p[0] * unit_slope * t, (taus, snrs, None), [0.5])
    eta = float(fit.parameters[0])
    if eta < 0:
        raise InvalidDataError("fitted SNR slope is negative; not a valid efficiency")
    return fit


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write t_ns, branch quadratures, and the normalized measurement rate."""
    m_norm = measurement_rate(traj)
    rows = zip(
        traj.times * 1e9,
        traj.alpha_g.real,
        traj.alpha_g.imag,
        traj.alpha_e.real,
        traj.alpha_e.imag,
        m_norm,
    )
    _io.write_csv(
        path,
        ["t_ns", "re_alpha_g", "im_alpha_g", "re_alpha_e", "im_alpha_e", "M_norm"],
        rows,
    )
