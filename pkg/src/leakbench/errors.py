"""Exception and warning types shared across the toolkit.

Two error families matter downstream: configuration/usage problems
(:class:`ValidationError`, CLI exit code 2) and failures of a numerical
procedure on otherwise valid input (:class:`NumericalError`, exit code 3).
"""

from __future__ import annotations


class LeakbenchError(Exception):
    """Base class for all toolkit-specific errors."""


class ValidationError(LeakbenchError):
    """Invalid input, configuration, or precondition violation."""


class PolynomialDegreeError(ValidationError):
    """Leading polynomial coefficient is zero; the requested degree is absent."""


class NumericalError(LeakbenchError):
    """A numerical procedure failed on structurally valid input."""


class IntegrationDivergedError(NumericalError):
    """The ODE state became non-finite during integration."""

    def __init__(self, time: float, message: str | None = None):
        self.time = time
        super().__init__(message or f"integration diverged: non-finite state at t = {time:.9e} s")


class IonizationRegimeError(NumericalError):
    """Resonator amplitude exceeded the trusted photon-number range."""


class DegenerateFitError(NumericalError):
    """Singular Jacobian: at least one parameter direction is unconstrained by the data."""


class DegenerateReadoutError(NumericalError):
    """The two readout branches are indistinguishable (zero pointer separation)."""


class UndefinedRepeatabilityError(NumericalError):
    """Repeatability is undefined because a conditioning fidelity is zero."""


class InfeasiblePulseError(NumericalError):
    """No pulse satisfying the photon cap was found in any optimizer restart."""

    def __init__(self, best_penalized: float):
        self.best_penalized = best_penalized
        super().__init__(
            "no feasible pulse found in any restart; "
            f"best penalized objective was {best_penalized:.6g}"
        )


class InvalidDataError(NumericalError):
    """Data is inconsistent with the model family being fitted (e.g. negative slope)."""


class CutoffConvergenceError(NumericalError):
    """Truncated-basis result changed too much when the cutoff was enlarged."""


class EigenmodeError(NumericalError):
    """No usable eigenmode (underdamped, near target) exists in the network."""


class DataConsistencyWarning(UserWarning):
    """Fit succeeded but the data is also consistent with a simpler model."""


class ClampedFitWarning(UserWarning):
    """A fitted parameter was outside its physical range and was clamped."""


class TransmonRegimeWarning(UserWarning):
    """E_J/E_C ratio is low; the asymptotic transmon expressions lose accuracy."""
