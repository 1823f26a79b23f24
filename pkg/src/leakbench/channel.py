"""Binary readout as an error channel over {g, e} plus aggregate leakage.

A single readout maps an input computational state to a post-measurement
state (g, e, or a mixed leakage state) and a binary outcome. The channel is
fully described by the two joint probability tables P(s', x | s) together
with the outcome response P(0 | l) of each leakage state. From the tables
follow the standard readout metrics and the exact identities

    R = F_QND + Xi
    R = Q - [P(g,1|g) + P(e,0|e)]/2 + Xi   (averaged forms)

where the overlook probability Xi quantifies agreement between repeated
readouts that does not come from faithful QND operation: errors the binary
outcome cannot see.

The module also provides the Gaussian IQ-blob signal model that generates
such channels from physical inputs (signal-to-noise ratio, per-readout
transition probabilities, blob geometry).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import _io
from .errors import UndefinedRepeatabilityError, ValidationError
from .numerics import RandomStream

__all__ = [
    "ReadoutChannel",
    "ChannelMetrics",
    "IQModel",
    "TransitionRates",
    "metrics_from_channel",
    "two_readout_enumerate",
    "default_iq_model",
    "optimize_threshold",
    "sample_iq",
    "assignment_probability",
    "channel_from_physics",
    "channel_to_json",
    "channel_from_json",
    "write_channel",
    "read_channel",
    "metrics_to_csv",
]

_PROB_TOL = 1e-12
# Row order of the joint tables: post-state g, e, leak; columns: outcome 0, 1.
_POST_G, _POST_E, _POST_L = 0, 1, 2


def _valid_probability(p: float, name: str) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {p!r}")
    return p


@dataclass(frozen=True)
class ReadoutChannel:
    """Joint tables P(post-state, outcome | input) for inputs g and e.

    table_g and table_e are (3, 2) arrays with rows (g, e, leak) and columns
    (outcome 0, outcome 1); the leak row of table_g is the input-specific
    mixed state l_g, likewise l_e for table_e. p0_given_lg / p0_given_le are
    the outcome-0 responses of those leakage states in a subsequent readout.
    Each table must be elementwise nonnegative and sum to 1 within 1e-12.
    """

    table_g: np.ndarray
    table_e: np.ndarray
    p0_given_lg: float = 0.0
    p0_given_le: float = 0.0

    def __post_init__(self):
        for name, raw in (("table_g", self.table_g), ("table_e", self.table_e)):
            table = np.asarray(raw, dtype=float)
            if table.shape != (3, 2):
                raise ValidationError(f"{name} must have shape (3, 2)")
            if np.any(table < 0.0) or not np.all(np.isfinite(table)):
                raise ValidationError(f"{name} entries must be finite and nonnegative")
            if abs(table.sum() - 1.0) > _PROB_TOL:
                raise ValidationError(
                    f"{name} probabilities must sum to 1 within {_PROB_TOL:g}, "
                    f"got {table.sum()!r}"
                )
            table.flags.writeable = False
            object.__setattr__(self, name, table)
        _valid_probability(self.p0_given_lg, "p0_given_lg")
        _valid_probability(self.p0_given_le, "p0_given_le")

    def outcome_distribution(self, state: str) -> tuple[float, float]:
        """(P(0|state), P(1|state)) for state in {g, e, l_g, l_e}."""
        if state == "g":
            p0 = float(self.table_g[:, 0].sum())
        elif state == "e":
            p0 = float(self.table_e[:, 0].sum())
        elif state == "l_g":
            p0 = self.p0_given_lg
        elif state == "l_e":
            p0 = self.p0_given_le
        else:
            raise ValidationError(f"unknown state {state!r}")
        return p0, 1.0 - p0


@dataclass(frozen=True)
class ChannelMetrics:
    """All six readout metrics, per input and averaged, each in [0, 1].

    fidelity F: correct outcome; qndness Q: state preserved regardless of
    outcome; qnd_fidelity F_QND: correct outcome and state preserved;
    xi: overlook probability (repeat agreement not due to QND operation);
    repeatability R = F_QND + xi; leakage L: population left outside {g, e}.
    """

    fidelity_g: float
    fidelity_e: float
    fidelity: float
    repeatability_g: float
    repeatability_e: float
    repeatability: float
    qndness_g: float
    qndness_e: float
    qndness: float
    qnd_fidelity_g: float
    qnd_fidelity_e: float
    qnd_fidelity: float
    xi_g: float
    xi_e: float
    xi: float
    leakage_g: float
    leakage_e: float
    leakage: float


_METRIC_FIELDS = (
    "fidelity_g",
    "fidelity_e",
    "fidelity",
    "repeatability_g",
    "repeatability_e",
    "repeatability",
    "qndness_g",
    "qndness_e",
    "qndness",
    "qnd_fidelity_g",
    "qnd_fidelity_e",
    "qnd_fidelity",
    "xi_g",
    "xi_e",
    "xi",
    "leakage_g",
    "leakage_e",
    "leakage",
)


def metrics_from_channel(ch: ReadoutChannel) -> ChannelMetrics:
    """Evaluate F, R, Q, F_QND, Xi, L from the joint tables.

    For input g the correct outcome is 0 and the overlook terms weight the
    wrong-post-state branches by their chance of also reading 0 next time:
    Xi_g = [P(e,0|g) P(0|e) + P(l_g,0|g) P(0|l_g)] / F_g. Input e mirrors
    with outcome 1 (its cross term uses P(1|g), the probability the decayed
    branch also misreads on the repeat). A vanishing F_g or F_e leaves the
    conditional repeatability undefined and raises
    UndefinedRepeatabilityError.
    """
    tg, te = ch.table_g, ch.table_e
    p0_g = float(tg[:, 0].sum())
    p0_e = float(te[:, 0].sum())
    p1_g = 1.0 - p0_g
    p1_e = 1.0 - p0_e

    fidelity_g = p0_g
    fidelity_e = p1_e
    if fidelity_g == 0.0 or fidelity_e == 0.0:
        raise UndefinedRepeatabilityError(
            "conditional repeatability is undefined when a fidelity is zero "
            f"(F_g={fidelity_g!r}, F_e={fidelity_e!r})"
        )

    qnd_fidelity_g = float(tg[_POST_G, 0])
    qnd_fidelity_e = float(te[_POST_E, 1])
    qndness_g = float(tg[_POST_G].sum())
    qndness_e = float(te[_POST_E].sum())
    leakage_g = float(tg[_POST_L].sum())
    leakage_e = float(te[_POST_L].sum())

    xi_g = (tg[_POST_E, 0] * p0_e + tg[_POST_L, 0] * ch.p0_given_lg) / fidelity_g
    xi_e = (te[_POST_G, 1] * p1_g + te[_POST_L, 1] * (1.0 - ch.p0_given_le)) / fidelity_e

    repeatability_g = qnd_fidelity_g + xi_g
    repeatability_e = qnd_fidelity_e + xi_e

    def avg(a, b):
        return 0.5 * (a + b)

    return ChannelMetrics(
        fidelity_g=fidelity_g,
        fidelity_e=fidelity_e,
        fidelity=avg(fidelity_g, fidelity_e),
        repeatability_g=float(repeatability_g),
        repeatability_e=float(repeatability_e),
        repeatability=avg(float(repeatability_g), float(repeatability_e)),
        qndness_g=qndness_g,
        qndness_e=qndness_e,
        qndness=avg(qndness_g, qndness_e),
        qnd_fidelity_g=qnd_fidelity_g,
        qnd_fidelity_e=qnd_fidelity_e,
        qnd_fidelity=avg(qnd_fidelity_g, qnd_fidelity_e),
        xi_g=float(xi_g),
        xi_e=float(xi_e),
        xi=avg(float(xi_g), float(xi_e)),
        leakage_g=leakage_g,
        leakage_e=leakage_e,
        leakage=avg(leakage_g, leakage_e),
    )


def two_readout_enumerate(ch: ReadoutChannel, input_state: str) -> dict[tuple[int, int], float]:
    """Exact joint distribution of two back-to-back outcomes.

    P(x1, x2 | s) = sum over intermediate post-states s' of
    P(s', x1 | s) * P(x2 | s'); the second readout reuses the same tables
    and a leaked intermediate state stays leaked (response P(x | l_s)).
    """
    if input_state == "g":
        table = ch.table_g
        leak = "l_g"
    elif input_state == "e":
        table = ch.table_e
        leak = "l_e"
    else:
        raise ValidationError(f"input_state must be 'g' or 'e', got {input_state!r}")

    responses = [
        ch.outcome_distribution("g"),
        ch.outcome_distribution("e"),
        ch.outcome_distribution(leak),
    ]
    joint = {}
    for x1 in (0, 1):
        for x2 in (0, 1):
            joint[(x1, x2)] = float(
                sum(table[post, x1] * responses[post][x2] for post in range(3))
            )
    return joint


# ---------------------------------------------------------------------------
# IQ-blob signal model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IQModel:
    """Gaussian blob geometry in the IQ plane with a projected threshold.

    centers maps state labels to complex blob means; "g" and "e" are
    required, leakage states ("l_g", "l_e", or finer labels) are optional.
    The outcome is 1 when the measured point, projected onto the
    projection_phase quadrature, exceeds threshold.
    """

    centers: Mapping[str, complex]
    sigma: float
    threshold: float
    projection_phase: float = 0.0

    def __post_init__(self):
        centers = {str(k): complex(v) for k, v in dict(self.centers).items()}
        for required in ("g", "e"):
            if required not in centers:
                raise ValidationError(f"IQModel centers must include {required!r}")
        object.__setattr__(self, "centers", centers)
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")

    def projected(self, state: str) -> float:
        """Blob mean projected onto the discrimination quadrature."""
        if state not in self.centers:
            raise ValidationError(f"state {state!r} has no blob center")
        z = self.centers[state] * complex(math.cos(-self.projection_phase),
                                          math.sin(-self.projection_phase))
        return z.real


def default_iq_model(
    separation: float,
    sigma: float,
    leak_centers: Mapping[str, complex] | None = None,
) -> IQModel:
    """g/e blobs on the real axis, threshold at the midpoint.

    g sits at -separation/2 (reads 0), e at +separation/2 (reads 1);
    additional leakage blobs may be supplied as a mapping.
    """
    centers = {"g": complex(-0.5 * separation, 0.0), "e": complex(0.5 * separation, 0.0)}
    if leak_centers:
        overlap = set(leak_centers) & {"g", "e"}
        if overlap:
            raise ValidationError(f"leak_centers may not redefine {sorted(overlap)}")
        centers.update({str(k): complex(v) for k, v in leak_centers.items()})
    return IQModel(centers=centers, sigma=sigma, threshold=0.0)


def assignment_probability(model: IQModel, state: str, outcome: int) -> float:
    """Exact Gaussian probability of reading ``outcome`` from ``state``."""
    if outcome not in (0, 1):
        raise ValidationError("outcome must be 0 or 1")
    mean = model.projected(state)
    z = (model.threshold - mean) / (model.sigma * math.sqrt(2.0))
    p1 = 0.5 * math.erfc(z)
    return p1 if outcome == 1 else 1.0 - p1


def optimize_threshold(model: IQModel) -> IQModel:
    """Golden-section placement of the threshold between the g and e means.

    Minimizes the mean assignment error [P(1|g) + P(0|e)]/2; with a common
    sigma the optimum is the midpoint, but the search does not assume that.
    Returns a new model with the optimized threshold.
    """
    a = model.projected("g")
    b = model.projected("e")
    if a == b:
        raise ValidationError("g and e blobs coincide; no threshold separates them")
    if a > b:
        a, b = b, a
    sign = 1.0 if model.projected("e") >= model.projected("g") else -1.0

    def error(t):
        trial = IQModel(model.centers, model.sigma, t, model.projection_phase)
        if sign > 0:
            wrong_g = assignment_probability(trial, "g", 1)
            wrong_e = assignment_probability(trial, "e", 0)
        else:
            wrong_g = assignment_probability(trial, "g", 0)
            wrong_e = assignment_probability(trial, "e", 1)
        return 0.5 * (wrong_g + wrong_e)

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = a, b
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = error(x1), error(x2)
    for _ in range(200):
        if hi - lo <= 1e-14 * (1.0 + abs(lo) + abs(hi)):
            break
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = error(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = error(x2)
    best = 0.5 * (lo + hi)
    return IQModel(model.centers, model.sigma, best, model.projection_phase)


def sample_iq(model: IQModel, state: str, stream: RandomStream) -> tuple[complex, int]:
    """Draw one IQ point for ``state`` and threshold it to a binary outcome.

    The point is the blob center plus isotropic Gaussian noise of width
    sigma per quadrature; the outcome is 1 when the projection onto the
    projection_phase axis exceeds the threshold.
    """
    center = model.centers.get(state)
    if center is None:
        raise ValidationError(f"state {state!r} has no blob center")
    point = center + complex(model.sigma * stream.normal(), model.sigma * stream.normal())
    rotated = point * complex(math.cos(-model.projection_phase),
                              math.sin(-model.projection_phase))
    outcome = 1 if rotated.real > model.threshold else 0
    return point, outcome


# ---------------------------------------------------------------------------
# Channel construction from physical ingredients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransitionRates:
    """Per-readout transition probabilities between qubit populations.

    heating: g -> e; decay: e -> g; leak_g: g -> l_g; leak_e: e -> l_e.
    Each input's outgoing probabilities must not exceed 1.
    """

    heating: float = 0.0
    decay: float = 0.0
    leak_g: float = 0.0
    leak_e: float = 0.0

    def __post_init__(self):
        for name in ("heating", "decay", "leak_g", "leak_e"):
            _valid_probability(getattr(self, name), name)
        if self.heating + self.leak_g > 1.0 + _PROB_TOL:
            raise ValidationError("heating + leak_g exceeds 1")
        if self.decay + self.leak_e > 1.0 + _PROB_TOL:
            raise ValidationError("decay + leak_e exceeds 1")


def channel_from_physics(
    snr: float,
    rates: TransitionRates,
    iq: IQModel,
) -> ReadoutChannel:
    """Compose transitions with Gaussian assignment into a ReadoutChannel.

    The outcome latches from the input state's blob while the transition
    independently sets the post-state: P(s', x | s) = P(s' | s) * P(x | s).
    This is what lets repeatability fall below fidelity: a decay event
    leaves the current outcome intact but corrupts the repeat. The supplied
    SNR rescales the blob width to sigma = d / sqrt(2 * snr) with d the
    projected g-e separation, so P(1|g) = P(0|e) = Phi(-sqrt(snr/2)) at the
    midpoint threshold; snr = inf gives error-free assignment. The leakage
    blob (or outcome 1 with certainty, when the IQ model has none) only
    enters through the leaked state's response in the next readout,
    P(0|l_g) and P(0|l_e).
    """
    if not snr > 0:
        raise ValidationError("snr must be positive")
    d = abs(iq.projected("e") - iq.projected("g"))
    if d == 0.0:
        raise ValidationError("g and e blobs coincide; SNR scaling is undefined")
    if math.isinf(snr):
        scaled = IQModel(iq.centers, d, iq.threshold, iq.projection_phase)
        p1 = {
            state: 1.0 if scaled.projected(state) > iq.threshold else 0.0
            for state in iq.centers
        }
    else:
        sigma = d / math.sqrt(2.0 * snr)
        scaled = IQModel(iq.centers, sigma, iq.threshold, iq.projection_phase)
        p1 = {state: assignment_probability(scaled, state, 1) for state in iq.centers}

    def leak_response(label: str) -> float:
        # Outcome-1 probability of the leaked state; defaults to certainty.
        if label in p1:
            return p1[label]
        if "l" in p1:
            return p1["l"]
        return 1.0

    def table(stay: str, move: str, leak_label: str, p_move: float, p_leak: float):
        p_stay = 1.0 - p_move - p_leak
        if p_stay < -_PROB_TOL:
            raise ValidationError("transition probabilities exceed 1")
        p_stay = max(p_stay, 0.0)
        outcome = np.array([1.0 - p1[stay], p1[stay]])
        rows = np.empty((3, 2))
        order = {"g": _POST_G, "e": _POST_E}
        rows[order[stay]] = p_stay * outcome
        rows[order[move]] = p_move * outcome
        rows[_POST_L] = p_leak * outcome
        return rows, leak_response(leak_label)

    table_g, leak_p1_g = table("g", "e", "l_g", rates.heating, rates.leak_g)
    table_e, leak_p1_e = table("e", "g", "l_e", rates.decay, rates.leak_e)
    return ReadoutChannel(
        table_g=table_g,
        table_e=table_e,
        p0_given_lg=1.0 - leak_p1_g,
        p0_given_le=1.0 - leak_p1_e,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_JSON_KEYS_G = [
    ("P(g,0|g)", _POST_G, 0),
    ("P(g,1|g)", _POST_G, 1),
    ("P(e,0|g)", _POST_E, 0),
    ("P(e,1|g)", _POST_E, 1),
    ("P(l_g,0|g)", _POST_L, 0),
    ("P(l_g,1|g)", _POST_L, 1),
]
_JSON_KEYS_E = [
    ("P(g,0|e)", _POST_G, 0),
    ("P(g,1|e)", _POST_G, 1),
    ("P(e,0|e)", _POST_E, 0),
    ("P(e,1|e)", _POST_E, 1),
    ("P(l_e,0|e)", _POST_L, 0),
    ("P(l_e,1|e)", _POST_L, 1),
]


def channel_to_json(ch: ReadoutChannel) -> str:
    doc = {}
    for key, row, col in _JSON_KEYS_G:
        doc[key] = float(ch.table_g[row, col])
    for key, row, col in _JSON_KEYS_E:
        doc[key] = float(ch.table_e[row, col])
    doc["P(0|l_g)"] = ch.p0_given_lg
    doc["P(0|l_e)"] = ch.p0_given_le
    return _io.dump_json(doc)


def channel_from_json(text: str) -> ReadoutChannel:
    doc = json.loads(text)
    expected = (
        {key for key, _, _ in _JSON_KEYS_G}
        | {key for key, _, _ in _JSON_KEYS_E}
        | {"P(0|l_g)", "P(0|l_e)"}
    )
    unknown = set(doc) - expected
    if unknown:
        raise ValidationError(f"unknown channel keys: {sorted(unknown)}")
    missing = expected - set(doc)
    if missing:
        raise ValidationError(f"missing channel keys: {sorted(missing)}")
    table_g = np.zeros((3, 2))
    table_e = np.zeros((3, 2))
    for key, row, col in _JSON_KEYS_G:
        table_g[row, col] = doc[key]
    for key, row, col in _JSON_KEYS_E:
        table_e[row, col] = doc[key]
    return ReadoutChannel(
        table_g=table_g,
        table_e=table_e,
        p0_given_lg=doc["P(0|l_g)"],
        p0_given_le=doc["P(0|l_e)"],
    )


def write_channel(path, ch: ReadoutChannel) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(channel_to_json(ch))


def read_channel(path) -> ReadoutChannel:
    with open(path, "r", encoding="utf-8") as fh:
        return channel_from_json(fh.read())


def metrics_to_csv(rows, path) -> None:
    """Write labeled metric rows: one channel per line, all 18 columns."""
    header = ["label", *_METRIC_FIELDS]
    data = [
        [label, *(getattr(metrics, field) for field in _METRIC_FIELDS)]
        for label, metrics in rows
    ]
    _io.write_csv(path, header, data)
