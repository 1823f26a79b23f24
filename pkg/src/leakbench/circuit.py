"""Circuit-level analysis of a symmetric two-junction qubit and its readout.

The device is two Josephson junctions grounded at a shared center node and
bridged by a shunt capacitor. Its quadrupolar normal mode (the "qubit") has
no net dipole, so it cannot couple linearly to the readout resonator; the
dipolar mode (the "mediator") couples normally and passes the qubit a purely
nonlinear, detuning-independent dispersive shift through their cross-Kerr
interaction. This module computes that spectrum analytically, checks it
against exact diagonalization of the truncated three-mode Hamiltonian, and
estimates radiative (Purcell) lifetimes of the linearized lumped network,
plus the thermal-population and emission-spectroscopy conversions used to
calibrate those lifetimes against measurement.

Conventions: Josephson and charging energies are exchanged as frequencies
(E/h, Hz), capacitances in farads, inductances in henries, mode frequencies
and shifts in rad/s.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.constants import Boltzmann, elementary_charge, h, hbar
from scipy.linalg import eigh

from . import _io
from .errors import (
    CutoffConvergenceError,
    EigenmodeError,
    TransmonRegimeWarning,
    ValidationError,
)
from .numerics import FitResult, least_squares

__all__ = [
    "PHI0",
    "DimonParams",
    "DimonSpectrum",
    "LumpedCircuit",
    "dimon_spectrum",
    "transmon_chi",
    "chi_qr_detuning_invariance",
    "numeric_dispersive_check",
    "network_modes",
    "purcell_t1",
    "dimon_purcell_circuit",
    "transmon_purcell_circuit",
    "rabi_to_purcell",
    "thermal_populations",
    "emission_s11",
    "fit_emission",
    "purcell_t1_from_emission",
    "asymmetry_sweep",
    "asymmetry_sweep_to_csv",
    "frequency_sweep",
    "frequency_sweep_to_csv",
]

TWO_PI = 2.0 * math.pi
PHI0 = hbar / (2.0 * elementary_charge)


def _require_positive(value: float, name: str) -> None:
    if not (math.isfinite(value) and value > 0.0):
        raise ValidationError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class DimonParams:
    """Physical inputs of the two-junction device and its resonator.

    ej1, ej2: Josephson energies as E/h in Hz; c_j1, c_j2: junction pad
    capacitances to the grounded center node; c_s: pad-to-pad shunt
    capacitance; g_mr: mediator-resonator coupling in rad/s; omega_r:
    dressed resonator frequency in rad/s. Offset charges n_g_q / n_g_m are
    accepted for completeness but ignored everywhere: the computed levels
    are in the charge-insensitive regime.
    """

    ej1: float
    ej2: float
    c_j1: float
    c_j2: float
    c_s: float
    g_mr: float
    omega_r: float
    n_g_q: float = 0.0
    n_g_m: float = 0.0

    def __post_init__(self):
        for name in ("ej1", "ej2", "c_j1", "c_j2", "omega_r"):
            _require_positive(getattr(self, name), name)
        # c_s = 0 is legal: it degenerates the two charging energies.
        if not (math.isfinite(self.c_s) and self.c_s >= 0.0):
            raise ValidationError(f"c_s must be finite and nonnegative, got {self.c_s!r}")
        for name in ("g_mr", "n_g_q", "n_g_m"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    @property
    def asymmetry(self) -> float:
        """Junction asymmetry (E_J1 - E_J2) / (E_J1 + E_J2), in (-1, 1)."""
        return (self.ej1 - self.ej2) / (self.ej1 + self.ej2)


@dataclass(frozen=True)
class DimonSpectrum:
    """Derived spectrum: charging energies (E/h, Hz) and rad/s frequencies."""

    e_cq: float
    e_cm: float
    omega_q: float
    omega_m: float
    delta_q: float
    delta_m: float
    chi_qm: float
    chi_mr: float
    chi_qr: float
    delta_mr: float


def dimon_spectrum(params: DimonParams) -> DimonSpectrum:
    """Fourth-order mode spectrum of the symmetrized two-junction circuit.

    Works with the symmetric averages E_J = (E_J1 + E_J2)/2 and
    C_J = (C_1 + C_2)/2 of the device. The quadrupolar (qubit) and dipolar
    (mediator) modes charge as E_cq = e^2/(4 C_J) and
    E_cm = e^2/(4 C_J + 8 C_s); their transition frequencies carry the Kerr
    Lamb shifts, the anharmonicities equal the negative charging energies,
    and the cross-Kerr is fixed algebraically at -2 sqrt(E_cq E_cm). The
    mediator hands the resonator both its own transmon-like shift chi_mr
    and the mediated qubit shift chi_qr, which depends only on (g_mr,
    chi_qm, Delta_mr), never on the qubit-resonator detuning.

    Emits TransmonRegimeWarning when E_J/E_c < 10 on either mode, where the
    fourth-order expansion loses accuracy.
    """
    e_j = 0.5 * (params.ej1 + params.ej2)
    c_j = 0.5 * (params.c_j1 + params.c_j2)
    e_cq = elementary_charge**2 / (4.0 * c_j) / h
    e_cm = elementary_charge**2 / (4.0 * c_j + 8.0 * params.c_s) / h
    if e_j / e_cq < 10.0 or e_j / e_cm < 10.0:
        warnings.warn(
            f"E_J/E_c = {e_j / e_cq:.2f} (qubit), {e_j / e_cm:.2f} (mediator); "
            "the fourth-order spectrum is unreliable below 10",
            TransmonRegimeWarning,
            stacklevel=2,
        )

    cross = math.sqrt(e_cq * e_cm)
    omega_q = TWO_PI * (4.0 * math.sqrt(e_cq * e_j) - e_cq - cross)
    omega_m = TWO_PI * (4.0 * math.sqrt(e_cm * e_j) - e_cm - cross)
    chi_qm = -TWO_PI * 2.0 * cross
    delta_mr = omega_m - params.omega_r

    g = params.g_mr
    if g == 0.0:
        chi_mr = 0.0
        chi_qr = 0.0
    else:
        e_cm_rad = TWO_PI * e_cm
        if delta_mr == 0.0 or delta_mr == e_cm_rad or delta_mr == -chi_qm:
            raise ValidationError(
                "mediator-resonator detuning sits on a dispersive pole"
            )
        chi_mr = -2.0 * g**2 * e_cm_rad / (delta_mr * (delta_mr - e_cm_rad))
        chi_qr = g**2 * chi_qm / (delta_mr * (delta_mr + chi_qm))

    return DimonSpectrum(
        e_cq=e_cq,
        e_cm=e_cm,
        omega_q=omega_q,
        omega_m=omega_m,
        delta_q=-TWO_PI * e_cq,
        delta_m=-TWO_PI * e_cm,
        chi_qm=chi_qm,
        chi_mr=chi_mr,
        chi_qr=chi_qr,
        delta_mr=delta_mr,
    )


def transmon_chi(g: float, delta_qr: float, anharmonicity: float) -> float:
    """Dispersive shift of a directly coupled transmon, rad/s inputs.

    chi = g^2 delta / [Delta (Delta + delta)]: explicitly a function of the
    qubit-resonator detuning, unlike the mediated shift.
    """
    if delta_qr == 0.0 or delta_qr == -anharmonicity:
        raise ValidationError("qubit-resonator detuning sits on a dispersive pole")
    return g**2 * anharmonicity / (delta_qr * (delta_qr + anharmonicity))


def chi_qr_detuning_invariance(spectrum: DimonSpectrum, omega_q_shift: float) -> float:
    """chi_qr recomputed after shifting the qubit frequency.

    The mediated shift is built from (g_mr, chi_qm, Delta_mr) only; a qubit
    frequency shift changes the qubit-resonator detuning but enters none of
    those three quantities, so the recomputed value equals the original.
    The function exists to make that independence executable.
    """
    if not math.isfinite(omega_q_shift):
        raise ValidationError("omega_q_shift must be finite")
    if spectrum.chi_qm == 0.0 or spectrum.chi_qr == 0.0:
        return spectrum.chi_qr
    g_squared = (
        spectrum.chi_qr
        * spectrum.delta_mr
        * (spectrum.delta_mr + spectrum.chi_qm)
        / spectrum.chi_qm
    )
    shifted = replace(spectrum, omega_q=spectrum.omega_q + omega_q_shift)
    return g_squared * shifted.chi_qm / (shifted.delta_mr * (shifted.delta_mr + shifted.chi_qm))


def _dressed_dispersive(spectrum: DimonSpectrum, g_mr: float, cutoffs) -> tuple[float, float]:
    n_q, n_m, n_r = (int(c) + 1 for c in cutoffs)
    omega_r = spectrum.omega_m - spectrum.delta_mr
    dim = n_q * n_m * n_r

    def index(iq, im, ir):
        return (iq * n_m + im) * n_r + ir

    hamil = np.zeros((dim, dim))
    for iq in range(n_q):
        for im in range(n_m):
            for ir in range(n_r):
                row = index(iq, im, ir)
                hamil[row, row] = (
                    spectrum.omega_q * iq
                    + spectrum.omega_m * im
                    + omega_r * ir
                    + 0.5 * spectrum.delta_q * iq * (iq - 1)
                    + 0.5 * spectrum.delta_m * im * (im - 1)
                    + spectrum.chi_qm * iq * im
                )
                if im + 1 < n_m and ir > 0:
                    col = index(iq, im + 1, ir - 1)
                    element = g_mr * math.sqrt((im + 1) * ir)
                    hamil[row, col] = element
                    hamil[col, row] = element

    energies, vectors = eigh(hamil)

    def dressed(iq, im, ir):
        overlap = np.abs(vectors[index(iq, im, ir), :])
        return energies[int(np.argmax(overlap))]

    ground = dressed(0, 0, 0)
    photon = dressed(0, 0, 1) - ground
    chi_qr = dressed(1, 0, 1) - dressed(1, 0, 0) - photon
    chi_mr = dressed(0, 1, 1) - dressed(0, 1, 0) - photon
    return chi_qr, chi_mr


def numeric_dispersive_check(
    spectrum: DimonSpectrum, g_mr: float, cutoffs=(6, 6, 8)
) -> tuple[float, float]:
    """Exact dispersive shifts from the truncated three-mode Hamiltonian.

    Diagonalizes H = sum_k omega_k n_k + (delta_q/2) n_q(n_q-1)
    + (delta_m/2) n_m(n_m-1) + chi_qm n_q n_m + g (a_m^dag a_r + h.c.)
    on a Fock grid, labels dressed levels by maximal overlap with the bare
    basis, and returns (chi_qr, chi_mr) from the dressed photon-addition
    differences. Raises CutoffConvergenceError if either shift moves by
    more than 1% when every cutoff is raised by 2.
    """
    cutoffs = tuple(int(c) for c in cutoffs)
    if len(cutoffs) != 3 or any(c < 4 for c in cutoffs):
        raise ValidationError(f"cutoffs must be three integers >= 4, got {cutoffs!r}")
    if not math.isfinite(g_mr):
        raise ValidationError("g_mr must be finite")
    base = _dressed_dispersive(spectrum, g_mr, cutoffs)
    grown = _dressed_dispersive(spectrum, g_mr, tuple(c + 2 for c in cutoffs))
    for name, lo, hi in zip(("chi_qr", "chi_mr"), base, grown):
        if abs(hi - lo) > 0.01 * max(abs(hi), 1e-300):
            raise CutoffConvergenceError(
                f"{name} changed by {abs(hi - lo):.3e} rad/s (> 1%) when the "
                f"Fock cutoffs grew from {cutoffs}; enlarge the basis"
            )
    return base


# ---------------------------------------------------------------------------
# Linearized lumped networks
# ---------------------------------------------------------------------------

_ELEMENT_TYPES = ("C", "L", "J", "R")


@dataclass(frozen=True)
class LumpedCircuit:
    """Nodal matrices of a linear(ized) lumped circuit.

    labels: non-ground node names; c: capacitance matrix (F); gamma:
    inverse-inductance matrix (1/H, junctions linearized as
    L_J = phi0^2 / E_J); g: conductance matrix (S) from load resistors.
    elements keeps the normalized netlist when the circuit was built from
    one, enabling exact round-trip serialization.
    """

    labels: tuple[str, ...]
    c: np.ndarray
    gamma: np.ndarray
    g: np.ndarray
    elements: tuple[tuple, ...] | None = None

    def __post_init__(self):
        n = len(self.labels)
        if len(set(self.labels)) != n or "gnd" in self.labels:
            raise ValidationError("node labels must be unique and exclude 'gnd'")
        for name in ("c", "gamma", "g"):
            matrix = np.asarray(getattr(self, name), dtype=float)
            if matrix.shape != (n, n):
                raise ValidationError(f"{name} must be {n}x{n} to match the labels")
            if not np.allclose(matrix, matrix.T, rtol=1e-12, atol=0.0):
                raise ValidationError(f"{name} must be symmetric")
            object.__setattr__(self, name, matrix)
        try:
            np.linalg.cholesky(self.c)
        except np.linalg.LinAlgError:
            raise ValidationError(
                "capacitance matrix must be positive definite; every node "
                "island needs a capacitive path to ground"
            ) from None
        for name in ("gamma", "g"):
            smallest = float(np.linalg.eigvalsh(getattr(self, name))[0])
            scale = float(np.abs(getattr(self, name)).max()) or 1.0
            if smallest < -1e-12 * scale:
                raise ValidationError(f"{name} must be positive semidefinite")

    def node_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown node label {label!r}") from None

    @classmethod
    def from_netlist(cls, netlist: dict) -> "LumpedCircuit":
        """Build from {"nodes": [...], "elements": [{type, nodes, value}, ...]}.

        Element types: C (farads), L (henries), J (Josephson energy as E/h
        in Hz, linearized), R (ohms). "gnd" names the ground node and must
        not appear in the node list. Unknown keys are rejected.
        """
        if not isinstance(netlist, dict) or set(netlist) != {"nodes", "elements"}:
            raise ValidationError("netlist must have exactly the keys 'nodes' and 'elements'")
        labels = tuple(netlist["nodes"])
        if not labels or not all(isinstance(l, str) for l in labels):
            raise ValidationError("netlist nodes must be a non-empty list of strings")
        if len(set(labels)) != len(labels) or "gnd" in labels:
            raise ValidationError("node labels must be unique and exclude 'gnd'")
        index = {label: i for i, label in enumerate(labels)}
        n = len(labels)
        c = np.zeros((n, n))
        gamma = np.zeros((n, n))
        g = np.zeros((n, n))
        normalized = []
        for element in netlist["elements"]:
            if not isinstance(element, dict) or set(element) != {"type", "nodes", "value"}:
                raise ValidationError(
                    "each element must have exactly the keys 'type', 'nodes', 'value'"
                )
            kind = element["type"]
            if kind not in _ELEMENT_TYPES:
                raise ValidationError(f"unknown element type {kind!r}")
            pair = element["nodes"]
            if not isinstance(pair, (list, tuple)) or len(pair) != 2 or pair[0] == pair[1]:
                raise ValidationError(f"element nodes must be two distinct labels, got {pair!r}")
            for label in pair:
                if label != "gnd" and label not in index:
                    raise ValidationError(f"element references unknown node {label!r}")
            value = element["value"]
            _require_positive(value, f"{kind} element value")
            if kind == "C":
                stamp, matrix = value, c
            elif kind == "L":
                stamp, matrix = 1.0 / value, gamma
            elif kind == "J":
                stamp, matrix = (value * h) / PHI0**2, gamma
            else:
                stamp, matrix = 1.0 / value, g
            i = index.get(pair[0])
            j = index.get(pair[1])
            if i is not None:
                matrix[i, i] += stamp
            if j is not None:
                matrix[j, j] += stamp
            if i is not None and j is not None:
                matrix[i, j] -= stamp
                matrix[j, i] -= stamp
            normalized.append((kind, (str(pair[0]), str(pair[1])), float(value)))
        return cls(labels=labels, c=c, gamma=gamma, g=g, elements=tuple(normalized))

    def to_netlist(self) -> dict:
        """Inverse of from_netlist; only available for netlist-built circuits."""
        if self.elements is None:
            raise ValidationError("circuit was built from matrices, not a netlist")
        return {
            "nodes": list(self.labels),
            "elements": [
                {"type": kind, "nodes": list(pair), "value": value}
                for kind, pair, value in self.elements
            ],
        }


def network_modes(circuit: LumpedCircuit) -> tuple[np.ndarray, np.ndarray]:
    """Complex eigenvalues s and flux eigenvectors of the damped network.

    The node equations C Phi'' + G Phi' + Gamma Phi = 0 become the
    first-order system d/dt [Phi, Phi'] = [[0, I], [-C^-1 Gamma, -C^-1 G]];
    eigenvalues come in pairs s = -gamma/2 +- i omega. The companion matrix
    is assembled in a natural frequency unit so that a symmetry-protected
    mode's zero damping is not polluted by the omega^2 dynamic range.
    """
    n = len(circuit.labels)
    stiffness = np.linalg.solve(circuit.c, circuit.gamma)
    damping = np.linalg.solve(circuit.c, circuit.g)
    scale = math.sqrt(float(np.linalg.norm(stiffness, 2))) or 1.0
    companion = np.zeros((2 * n, 2 * n))
    companion[:n, n:] = np.eye(n)
    companion[n:, :n] = -stiffness / scale**2
    companion[n:, n:] = -damping / scale
    values, vectors = np.linalg.eig(companion)
    return values * scale, vectors[:n, :]


def purcell_t1(
    circuit: LumpedCircuit,
    target_frequency: float,
    nodes=None,
    min_participation: float = 0.01,
) -> tuple[float, float]:
    """(mode frequency rad/s, T1 seconds) of the eigenmode nearest a target.

    Only oscillatory modes count (overdamped and zero-frequency solutions
    are discarded); when node labels are given, candidates must hold at
    least min_participation of their flux weight on those nodes, which
    disambiguates near-degenerate qubit and filter branches. T1 = 1/gamma
    with gamma = -2 Re s; a symmetry-protected mode returns T1 = inf.
    """
    _require_positive(target_frequency, "target_frequency")
    if not np.any(circuit.g):
        raise ValidationError("the network has no dissipative load (G = 0)")
    values, vectors = network_modes(circuit)
    freq = values.imag
    floor = 1e-9 * float(np.abs(freq).max() or 1.0)
    keep = freq > floor
    if nodes is not None:
        rows = [circuit.node_index(label) for label in nodes]
        weight = np.abs(vectors) ** 2
        participation = weight[rows, :].sum(axis=0) / weight.sum(axis=0)
        keep &= participation >= min_participation
    if not np.any(keep):
        raise EigenmodeError("no oscillatory eigenmode matches the node filter")
    kept = np.flatnonzero(keep)
    span_lo, span_hi = freq[kept].min(), freq[kept].max()
    if not 0.5 * span_lo <= target_frequency <= 2.0 * span_hi:
        raise EigenmodeError(
            f"target frequency {target_frequency:.6g} rad/s lies outside the "
            f"network's oscillatory range [{span_lo:.6g}, {span_hi:.6g}]"
        )
    chosen = kept[int(np.argmin(np.abs(freq[kept] - target_frequency)))]
    gamma = -2.0 * values[chosen].real
    t1 = math.inf if gamma <= 0.0 else 1.0 / gamma
    return float(freq[chosen]), t1


def dimon_purcell_circuit(
    params: DimonParams,
    c_g: float,
    c_r: float,
    l_r: float,
    c_kappa: float,
    load_resistance: float = 50.0,
) -> LumpedCircuit:
    """Two-junction device coupled to a loaded differential resonator.

    The resonator (c_r, l_r) floats between nodes r1 and r2 and couples
    antisymmetrically to the device pads p1/p2 through equal gate
    capacitors, so the quadrupolar mode decouples exactly when the network
    is mirror-symmetric. The transmission line is a resistor bridged
    between the two halves of a symmetric c_kappa chain: dissipation is
    seen only by modes of odd mirror parity, reproducing the intrinsic
    protection of the even qubit mode at zero junction asymmetry.
    """
    for name, value in (("c_g", c_g), ("c_r", c_r), ("l_r", l_r), ("c_kappa", c_kappa)):
        _require_positive(value, name)
    _require_positive(load_resistance, "load_resistance")
    return LumpedCircuit.from_netlist(
        {
            "nodes": ["p1", "p2", "r1", "r2", "l1", "l2"],
            "elements": [
                {"type": "J", "nodes": ["p1", "gnd"], "value": params.ej1},
                {"type": "J", "nodes": ["p2", "gnd"], "value": params.ej2},
                {"type": "C", "nodes": ["p1", "gnd"], "value": params.c_j1},
                {"type": "C", "nodes": ["p2", "gnd"], "value": params.c_j2},
                {"type": "C", "nodes": ["p1", "p2"], "value": params.c_s},
                {"type": "C", "nodes": ["p1", "r1"], "value": c_g},
                {"type": "C", "nodes": ["p2", "r2"], "value": c_g},
                {"type": "C", "nodes": ["r1", "r2"], "value": c_r},
                {"type": "L", "nodes": ["r1", "r2"], "value": l_r},
                {"type": "C", "nodes": ["r1", "l1"], "value": c_kappa},
                {"type": "R", "nodes": ["l1", "l2"], "value": load_resistance},
                {"type": "C", "nodes": ["l2", "r2"], "value": c_kappa},
            ],
        }
    )


def transmon_purcell_circuit(
    ej: float,
    c_t: float,
    c_g: float,
    c_r: float,
    l_r: float,
    c_kappa: float,
    load_resistance: float = 50.0,
) -> LumpedCircuit:
    """Single-junction contrast device on a grounded loaded resonator.

    Canonical single-ended Purcell stack: transmon to ground, gate
    capacitor to a grounded LC resonator, output capacitor to a grounded
    load. The qubit mode holds a dipole at any coupling and inherits
    resonator loss the ordinary way; every island is capacitively
    referenced to ground, so the network has no spurious soft modes.
    """
    for name, value in (("ej", ej), ("c_t", c_t), ("c_g", c_g), ("c_r", c_r),
                        ("l_r", l_r), ("c_kappa", c_kappa)):
        _require_positive(value, name)
    _require_positive(load_resistance, "load_resistance")
    return LumpedCircuit.from_netlist(
        {
            "nodes": ["t1", "r1", "l1"],
            "elements": [
                {"type": "J", "nodes": ["t1", "gnd"], "value": ej},
                {"type": "C", "nodes": ["t1", "gnd"], "value": c_t},
                {"type": "C", "nodes": ["t1", "r1"], "value": c_g},
                {"type": "C", "nodes": ["r1", "gnd"], "value": c_r},
                {"type": "L", "nodes": ["r1", "gnd"], "value": l_r},
                {"type": "C", "nodes": ["r1", "l1"], "value": c_kappa},
                {"type": "R", "nodes": ["l1", "gnd"], "value": load_resistance},
            ],
        }
    )


# ---------------------------------------------------------------------------
# Measurement-side conversions
# ---------------------------------------------------------------------------


def rabi_to_purcell(omega_drive: float, rabi_rate: float, power: float) -> float:
    """Radiative decay rate through a port from the Rabi rate it drives.

    Gamma = Omega^2 hbar omega_d / (4 P): the same coupling that lets
    power P drive coherent rotations at Omega lets the mode radiate back
    out. Inputs in rad/s and watts; returns 1/s.
    """
    _require_positive(omega_drive, "omega_drive")
    _require_positive(power, "power")
    if not math.isfinite(rabi_rate):
        raise ValidationError("rabi_rate must be finite")
    return rabi_rate**2 * hbar * omega_drive / (4.0 * power)


def thermal_populations(levels_hz, temperature_k: float) -> np.ndarray:
    """Boltzmann occupations of the given levels (E/h in Hz) at T kelvin."""
    _require_positive(temperature_k, "temperature_k")
    levels = np.asarray(levels_hz, dtype=float)
    if levels.ndim != 1 or len(levels) < 2:
        raise ValidationError("need at least two energy levels")
    if not np.all(np.isfinite(levels)):
        raise ValidationError("levels must be finite")
    exponents = -(levels - levels.min()) * h / (Boltzmann * temperature_k)
    weights = np.exp(exponents)
    return weights / weights.sum()


def emission_s11(omega_d, gamma1_tilde: float, gamma2: float, saturation: float, omega_m: float):
    """Reflection off a weakly saturated radiating mode.

    S11 = 1 - (G1/G2) (1 - i (omega_m - omega_d)/G2)
              / (1 + s + (omega_m - omega_d)^2 / G2^2),
    the shape fitted to emission spectroscopy to extract the radiative
    linewidth. omega_d may be scalar or an array; returns complex values.
    """
    _require_positive(gamma2, "gamma2")
    detuning = omega_m - np.asarray(omega_d, dtype=float)
    response = (1.0 - 1j * detuning / gamma2) / (1.0 + saturation + (detuning / gamma2) ** 2)
    return 1.0 - (gamma1_tilde / gamma2) * response


def fit_emission(omega_d, s11, initial_guess=None) -> FitResult:
    """Least-squares recovery of (Gamma1~, Gamma2, s, omega_m) from S11 data.

    Real and imaginary parts are stacked into one residual vector. When no
    initial guess is given, the resonance is seeded at the deepest point of
    Re S11, the linewidth at a tenth of the scanned span, and the amplitude
    from the dip depth.
    """
    omega = np.asarray(omega_d, dtype=float)
    data = np.asarray(s11, dtype=complex)
    if omega.ndim != 1 or omega.shape != data.shape or len(omega) < 4:
        raise ValidationError("need matching 1-d arrays of at least 4 points")
    if initial_guess is None:
        dip = int(np.argmin(data.real))
        span = float(omega.max() - omega.min())
        gamma2 = span / 10.0 if span > 0 else 1.0
        depth = max(1.0 - float(data.real[dip]), 1e-3)
        initial_guess = [depth * gamma2, gamma2, 0.1, float(omega[dip])]

    def model(p, x):
        prediction = emission_s11(x, p[0], abs(p[1]), p[2], p[3])
        return np.concatenate([prediction.real, prediction.imag])

    observations = np.concatenate([data.real, data.imag])
    fit = least_squares(model, (omega, observations, None), initial_guess)
    parameters = fit.parameters.copy()
    parameters[1] = abs(parameters[1])
    return replace(fit, parameters=parameters)


def purcell_t1_from_emission(gamma1_tilde: float, r_th: float) -> float:
    """T1 = (1 - r_th)/(1 + r_th) / Gamma1~.

    The raw fitted linewidth overestimates the decay rate when thermal
    occupation r_th (excited/ground population ratio) stimulates extra
    emission; this applies the detailed-balance correction.
    """
    _require_positive(gamma1_tilde, "gamma1_tilde")
    if not 0.0 <= r_th < 1.0:
        raise ValidationError(f"r_th must lie in [0, 1), got {r_th!r}")
    return (1.0 - r_th) / (1.0 + r_th) / gamma1_tilde


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def asymmetry_sweep(
    params: DimonParams,
    lambdas,
    *,
    c_g: float,
    c_r: float,
    l_r: float,
    c_kappa: float,
    load_resistance: float = 50.0,
    mapper=map,
) -> list[tuple[float, float, float]]:
    """Qubit-mode Purcell T1 versus junction asymmetry.

    Each point redistributes the mean Josephson energy as
    E_J (1 +- lambda), rebuilds the loaded network, and reads the lifetime
    of the mode nearest the analytic qubit frequency with at least 1% flux
    weight on the device pads. Rows are (lambda, chi_qr in Hz, T1 in s);
    mapper may be an executor map for parallel evaluation.
    """
    mean_ej = 0.5 * (params.ej1 + params.ej2)

    def point(lam: float) -> tuple[float, float, float]:
        if not -1.0 < lam < 1.0:
            raise ValidationError(f"asymmetry must lie in (-1, 1), got {lam!r}")
        tilted = replace(params, ej1=mean_ej * (1.0 + lam), ej2=mean_ej * (1.0 - lam))
        spectrum = dimon_spectrum(tilted)
        network = dimon_purcell_circuit(
            tilted, c_g=c_g, c_r=c_r, l_r=l_r, c_kappa=c_kappa,
            load_resistance=load_resistance,
        )
        _, t1 = purcell_t1(network, spectrum.omega_q, nodes=("p1", "p2"))
        return (float(lam), spectrum.chi_qr / TWO_PI, t1)

    return list(mapper(point, lambdas))


def asymmetry_sweep_to_csv(rows, path) -> None:
    _io.write_csv(path, ["lambda", "chi_qr_hz", "t1_purcell_s"], rows)


def frequency_sweep(
    params: DimonParams,
    transmon_ej: float,
    transmon_c_t: float,
    transmon_c_g: float,
    scales,
    *,
    c_g: float,
    c_r: float,
    l_r: float,
    c_kappa: float,
    transmon_c_kappa: float | None = None,
    load_resistance: float = 50.0,
    mapper=map,
) -> list[tuple[float, float, float, float]]:
    """Purcell T1 of the protected device versus an equivalent transmon.

    Both qubits are tuned by scaling their junction inductances (energies
    divide by the scale factor) on comparable loaded resonators. The
    transmon's output capacitor defaults to c_kappa / 2, the series
    equivalent of the differential bridge, so both resonators present the
    same external linewidth. Rows are (qubit frequency in Hz, device T1 in
    s, transmon T1 in s, mediated chi_qr in Hz), with each lifetime read
    at the respective analytic mode frequency.
    """
    for name, value in (("transmon_ej", transmon_ej), ("transmon_c_t", transmon_c_t),
                        ("transmon_c_g", transmon_c_g)):
        _require_positive(value, name)
    if transmon_c_kappa is None:
        transmon_c_kappa = 0.5 * c_kappa
    e_ct = elementary_charge**2 / (2.0 * transmon_c_t) / h

    def point(scale: float) -> tuple[float, float, float, float]:
        _require_positive(scale, "scale")
        tuned = replace(params, ej1=params.ej1 / scale, ej2=params.ej2 / scale)
        spectrum = dimon_spectrum(tuned)
        dimon_net = dimon_purcell_circuit(
            tuned, c_g=c_g, c_r=c_r, l_r=l_r, c_kappa=c_kappa,
            load_resistance=load_resistance,
        )
        _, t1_dimon = purcell_t1(dimon_net, spectrum.omega_q, nodes=("p1", "p2"))

        ej_t = transmon_ej / scale
        omega_t = TWO_PI * (math.sqrt(8.0 * e_ct * ej_t) - e_ct)
        transmon_net = transmon_purcell_circuit(
            ej_t, transmon_c_t, transmon_c_g, c_r=c_r, l_r=l_r,
            c_kappa=transmon_c_kappa, load_resistance=load_resistance,
        )
        _, t1_transmon = purcell_t1(transmon_net, omega_t, nodes=("t1",))
        return (spectrum.omega_q / TWO_PI, t1_dimon, t1_transmon, spectrum.chi_qr / TWO_PI)

    return list(mapper(point, scales))


def frequency_sweep_to_csv(rows, path) -> None:
    _io.write_csv(path, ["omega_q_hz", "t1_dimon_s", "t1_transmon_s", "chi_hz"], rows)
