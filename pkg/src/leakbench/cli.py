"""Command-line front end for the readout-leakage toolkit.

One JSON document configures each invocation; flags carry only paths, the
seed, and the worker cap. Every config is checked against a strict schema
(unknown keys are rejected, physical quantities carry unit suffixes in
their key names) and then against the domain invariants, by the same code
path whether the run executes or stops at ``--validate-only``. Commands
print a single-line JSON summary to stdout and write their data files,
deterministic byte for byte, into the output directory.

Exit codes: 0 success, 2 invalid configuration or usage, 3 numerical
failure on otherwise valid input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import _io, circuit, pulse_shaping, resonator, rilb
from .channel import channel_from_json, metrics_from_channel, metrics_to_csv
from .errors import NumericalError, ValidationError
from .numerics import RandomStream

__all__ = ["main", "run", "validate", "preset_path", "preset_names"]

TWO_PI = 2.0 * math.pi

# ---------------------------------------------------------------------------
# Schema checking
#
# A schema node is one of:
#   ("map", {key: (node, required, default)})
#   ("list", item_node, min_items)
#   ("variant", tag_key, {tag: map_node})        -- dispatch on a string tag
#   ("number", predicate) / ("integer", predicate)
#   ("string",) / ("boolean",)
#   ("choice", (value, ...))
# Walking a document against a node appends "path: problem" diagnostics and
# returns the value with defaults filled in (None when the branch failed).
# ---------------------------------------------------------------------------

_PREDICATES = {
    "any": (lambda v: True, "be a number"),
    "positive": (lambda v: v > 0, "be positive"),
    "nonnegative": (lambda v: v >= 0, "be nonnegative"),
    "probability": (lambda v: 0.0 <= v <= 1.0, "lie in [0, 1]"),
    "open_unit": (lambda v: -1.0 < v < 1.0, "lie strictly between -1 and 1"),
}


def _walk(node, value, path, diags):
    kind = node[0]
    if kind == "map":
        return _walk_map(node[1], value, path, diags)
    if kind == "variant":
        return _walk_variant(node, value, path, diags)
    if kind == "list":
        return _walk_list(node, value, path, diags)
    if kind == "number":
        return _walk_number(node, value, path, diags, integral=False)
    if kind == "integer":
        return _walk_number(node, value, path, diags, integral=True)
    if kind == "string":
        if not isinstance(value, str):
            diags.append(f"{path}: must be a string")
            return None
        return value
    if kind == "boolean":
        if not isinstance(value, bool):
            diags.append(f"{path}: must be true or false")
            return None
        return value
    if kind == "choice":
        if value not in node[1]:
            options = ", ".join(repr(c) for c in node[1])
            diags.append(f"{path}: must be one of {options}")
            return None
        return value
    raise AssertionError(f"unknown schema node {kind!r}")


def _walk_map(fields, value, path, diags):
    if not isinstance(value, dict):
        diags.append(f"{path}: must be a JSON object")
        return None
    result = {}
    for key in value:
        if key not in fields:
            diags.append(f"{path}.{key}: unknown key")
    for key, (node, required, default) in fields.items():
        if key in value:
            result[key] = _walk(node, value[key], f"{path}.{key}", diags)
        elif required:
            diags.append(f"{path}.{key}: missing required key")
        else:
            result[key] = default
    return result


def _walk_variant(node, value, path, diags):
    _, tag_key, branches = node
    if not isinstance(value, dict):
        diags.append(f"{path}: must be a JSON object")
        return None
    tag = value.get(tag_key)
    if tag not in branches:
        options = ", ".join(repr(t) for t in branches)
        diags.append(f"{path}.{tag_key}: must be one of {options}")
        return None
    fields = dict(branches[tag][1])
    fields[tag_key] = (("choice", tuple(branches)), True, None)
    return _walk_map(fields, value, path, diags)


def _walk_list(node, value, path, diags):
    _, item_node, min_items = node
    if not isinstance(value, list):
        diags.append(f"{path}: must be a JSON array")
        return None
    if len(value) < min_items:
        diags.append(f"{path}: needs at least {min_items} entries")
        return None
    return [_walk(item_node, item, f"{path}[{i}]", diags) for i, item in enumerate(value)]


def _walk_number(node, value, path, diags, integral):
    predicate, clause = _PREDICATES[node[1]]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        diags.append(f"{path}: must be a number")
        return None
    if integral and not isinstance(value, int):
        diags.append(f"{path}: must be an integer")
        return None
    if not math.isfinite(value):
        diags.append(f"{path}: must be finite")
        return None
    if not predicate(value):
        diags.append(f"{path}: must {clause}")
        return None
    return int(value) if integral else float(value)


def _num(predicate="any"):
    return ("number", predicate)


def _int(predicate="positive"):
    return ("integer", predicate)


def _req(node):
    return (node, True, None)


def _opt(node, default=None):
    return (node, False, default)


# ---------------------------------------------------------------------------
# Shared blocks and builders
# ---------------------------------------------------------------------------

_RESONATOR_SCHEMA = ("map", {
    "kappa_r_hz": _req(_num("positive")),
    "kappa_ext_hz": _req(_num("nonnegative")),
    "kappa_int_hz": _opt(_num("nonnegative")),
    "kerr_hz": _opt(_num(), 0.0),
    "chi_qr_hz": _opt(_num(), 0.0),
    "k_sca": _opt(_num(), 1.0),
})


def _build_resonator(block) -> resonator.ResonatorParams:
    kappa_r = block["kappa_r_hz"]
    kappa_ext = block["kappa_ext_hz"]
    if kappa_ext > kappa_r:
        raise ValidationError(
            "resonator: kappa_ext_hz exceeds kappa_r_hz, violating "
            "kappa_r = kappa_ext + kappa_int"
        )
    kappa_int = block["kappa_int_hz"]
    if kappa_int is None:
        kappa_int = kappa_r - kappa_ext
    return resonator.ResonatorParams(
        kappa_r=TWO_PI * kappa_r,
        kappa_ext=TWO_PI * kappa_ext,
        kappa_int=TWO_PI * kappa_int,
        kerr=TWO_PI * block["kerr_hz"],
        chi_qr=TWO_PI * block["chi_qr_hz"],
        k_sca=complex(block["k_sca"]),
    )


_CHANNEL_KEYS = (
    "P(g,0|g)", "P(g,1|g)", "P(e,0|g)", "P(e,1|g)", "P(l_g,0|g)", "P(l_g,1|g)",
    "P(g,0|e)", "P(g,1|e)", "P(e,0|e)", "P(e,1|e)", "P(l_e,0|e)", "P(l_e,1|e)",
    "P(0|l_g)", "P(0|l_e)",
)

_CHANNEL_SCHEMA = ("map", {key: _req(_num("probability")) for key in _CHANNEL_KEYS})


def _build_channel(block):
    return channel_from_json(json.dumps(block))


_DEVICE_SCHEMA = ("map", {
    "ej1_hz": _req(_num("positive")),
    "ej2_hz": _req(_num("positive")),
    "c_j1_ff": _req(_num("positive")),
    "c_j2_ff": _req(_num("positive")),
    "c_s_ff": _req(_num("nonnegative")),
    "g_mr_hz": _opt(_num("nonnegative"), 0.0),
    "omega_r_hz": _req(_num("positive")),
    "n_g_q": _opt(_num(), 0.0),
    "n_g_m": _opt(_num(), 0.0),
})


def _build_device(block) -> circuit.DimonParams:
    return circuit.DimonParams(
        ej1=block["ej1_hz"],
        ej2=block["ej2_hz"],
        c_j1=block["c_j1_ff"] * 1e-15,
        c_j2=block["c_j2_ff"] * 1e-15,
        c_s=block["c_s_ff"] * 1e-15,
        g_mr=TWO_PI * block["g_mr_hz"],
        omega_r=TWO_PI * block["omega_r_hz"],
        n_g_q=block["n_g_q"],
        n_g_m=block["n_g_m"],
    )


_NETWORK_SCHEMA = ("map", {
    "c_g_ff": _req(_num("positive")),
    "c_r_ff": _req(_num("positive")),
    "l_r_nh": _req(_num("positive")),
    "c_kappa_ff": _req(_num("positive")),
    "load_ohm": _opt(_num("positive"), 50.0),
})


def _network_kwargs(block) -> dict:
    return {
        "c_g": block["c_g_ff"] * 1e-15,
        "c_r": block["c_r_ff"] * 1e-15,
        "l_r": block["l_r_nh"] * 1e-9,
        "c_kappa": block["c_kappa_ff"] * 1e-15,
        "load_resistance": block["load_ohm"],
    }


def _pick_seed(config_seed, flag_seed, command):
    if flag_seed is not None:
        return int(flag_seed)
    if config_seed is not None:
        return int(config_seed)
    raise ValidationError(f"{command} needs a seed (config key or --seed flag)")


def _fit_summary(fit) -> dict:
    a, b, leakage = (float(v) for v in fit.parameters)
    return {
        "A": a,
        "B": b,
        "L": leakage,
        "L_stderr": math.sqrt(max(float(fit.covariance[2, 2]), 0.0)),
        "converged": bool(fit.converged),
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_steady_state(doc, ctx):
    params = _build_resonator(doc["resonator"])
    drive = doc["drive"]
    if ctx.validate_only:
        return None
    solutions = resonator.steady_state(
        params, TWO_PI * drive["detuning_hz"], TWO_PI * drive["amplitude_hz"]
    )
    rows = [
        {"photon_number": n, "alpha_re": alpha.real, "alpha_im": alpha.imag}
        for n, alpha in solutions
    ]
    _io.write_json(ctx.out / "steady_state.json", {"solutions": rows})
    return {
        "photon_numbers": [n for n, _ in solutions],
        "files": ["steady_state.json"],
    }


_STEADY_SCHEMA = {
    "resonator": _req(_RESONATOR_SCHEMA),
    "drive": _req(("map", {
        "detuning_hz": _req(_num()),
        "amplitude_hz": _req(_num("nonnegative")),
    })),
}


def _build_pulse(block) -> resonator.ShapedPulse:
    segments = tuple(
        (
            TWO_PI * seg["amplitude_hz"] * complex(math.cos(seg["phase_rad"]),
                                                   math.sin(seg["phase_rad"])),
            seg["length_ns"] * 1e-9,
        )
        for seg in block["segments"]
    )
    return resonator.ShapedPulse(segments, TWO_PI * block["detuning_hz"])


def _cmd_trajectory(doc, ctx):
    params = _build_resonator(doc["resonator"])
    pulse = _build_pulse(doc["pulse"])
    tail = None if doc["tail_ns"] is None else doc["tail_ns"] * 1e-9
    dt = None if doc["dt_ns"] is None else doc["dt_ns"] * 1e-9
    if ctx.validate_only:
        return None
    traj = resonator.simulate_trajectories(params, pulse, tail=tail, dt=dt)
    resonator.trajectory_to_csv(traj, ctx.out / "trajectory.csv")
    peak = float(
        max(np.abs(traj.alpha_g).max(), np.abs(traj.alpha_e).max()) ** 2
    )
    return {
        "points": int(len(traj.times)),
        "peak_photon_number": peak,
        "files": ["trajectory.csv"],
    }


_TRAJECTORY_SCHEMA = {
    "resonator": _req(_RESONATOR_SCHEMA),
    "pulse": _req(("map", {
        "detuning_hz": _opt(_num(), 0.0),
        "segments": _req(("list", ("map", {
            "amplitude_hz": _req(_num("nonnegative")),
            "phase_rad": _opt(_num(), 0.0),
            "length_ns": _req(_num("positive")),
        }), 1)),
    })),
    "tail_ns": _opt(_num("nonnegative")),
    "dt_ns": _opt(_num("positive")),
}


def _cmd_calibrate_photon(doc, ctx):
    rows = [
        (TWO_PI * r["detuning_hz"], r["dac_amplitude"], r["photon_number"])
        for r in doc["data"]
    ]
    guess = doc["guess"]
    if ctx.validate_only:
        # The row-count preconditions are part of validation.
        if len({d for d, _, _ in rows}) < 3:
            raise ValidationError("data: need at least 3 distinct detunings")
        if len({a for _, a, _ in rows}) < 2:
            raise ValidationError("data: need at least 2 distinct drive amplitudes")
        return None
    fit = resonator.calibrate_photon_number(
        rows,
        (TWO_PI * guess["kerr_hz"], TWO_PI * guess["kappa_r_hz"], guess["k_sca"]),
    )
    sigmas = np.sqrt(np.clip(np.diag(fit.covariance), 0.0, None))
    report = {
        "kerr_hz": fit.parameters[0] / TWO_PI,
        "kerr_hz_stderr": sigmas[0] / TWO_PI,
        "kappa_r_hz": fit.parameters[1] / TWO_PI,
        "kappa_r_hz_stderr": sigmas[1] / TWO_PI,
        "k_sca": fit.parameters[2],
        "k_sca_stderr": sigmas[2],
        "converged": bool(fit.converged),
    }
    _io.write_json(ctx.out / "calibration.json", report)
    return {**report, "files": ["calibration.json"]}


_CALIBRATE_SCHEMA = {
    "data": _req(("list", ("map", {
        "detuning_hz": _req(_num()),
        "dac_amplitude": _req(_num("nonnegative")),
        "photon_number": _req(_num("nonnegative")),
    }), 3)),
    "guess": _req(("map", {
        "kerr_hz": _req(_num()),
        "kappa_r_hz": _req(_num("positive")),
        "k_sca": _req(_num("positive")),
    })),
}


def _cmd_optimize_pulse(doc, ctx):
    params = _build_resonator(doc["resonator"])
    block = doc["constraint"]
    constraint = pulse_shaping.PulseConstraint(
        n_max=block["n_max"],
        tau_ro=block["tau_ro_ns"] * 1e-9,
        segment_count=block["segment_count"],
    )
    seed = _pick_seed(doc["seed"], ctx.seed, "optimize-pulse")
    if ctx.validate_only:
        return None
    options = doc["optimizer"]
    pulse, objective = pulse_shaping.optimize_pulse(
        params,
        constraint,
        RandomStream(seed),
        restarts=options["restarts"],
        max_evaluations=options["max_evaluations"],
    )
    summary = {
        "theta": objective.theta,
        "peak_n": objective.peak_n,
        "residual_n": objective.residual_n,
    }
    if doc["baseline"]:
        _, box = pulse_shaping.best_boxcar(params, constraint, RandomStream(seed + 1))
        summary["boxcar_theta"] = box.theta
    pulse_shaping.write_pulse(ctx.out / "pulse.json", pulse)
    _io.write_json(ctx.out / "objective.json", summary)
    return {**summary, "files": ["pulse.json", "objective.json"]}


_OPTIMIZE_SCHEMA = {
    "resonator": _req(_RESONATOR_SCHEMA),
    "constraint": _req(("map", {
        "n_max": _req(_num("positive")),
        "tau_ro_ns": _req(_num("positive")),
        "segment_count": _opt(("choice", (2, 4)), 4),
    })),
    "optimizer": _opt(("map", {
        "restarts": _opt(_int(), 20),
        "max_evaluations": _opt(_int(), 1200),
    }), {"restarts": 20, "max_evaluations": 1200}),
    "baseline": _opt(("boolean",), True),
    "seed": _opt(_int("nonnegative")),
}


def _cmd_channel_metrics(doc, ctx):
    ch = _build_channel(doc["channel"])
    if ctx.validate_only:
        return None
    metrics = metrics_from_channel(ch)
    metrics_to_csv([("channel", metrics)], ctx.out / "metrics.csv")
    return {
        "fidelity": metrics.fidelity,
        "qnd_fidelity": metrics.qnd_fidelity,
        "qndness": metrics.qndness,
        "xi": metrics.xi,
        "repeatability": metrics.repeatability,
        "leakage": metrics.leakage,
        "files": ["metrics.csv"],
    }


_CHANNEL_METRICS_SCHEMA = {"channel": _req(_CHANNEL_SCHEMA)}


_LEAKAGE_SCHEMA = ("map", {
    "l_up": _req(_num("probability")),
    "l_down": _opt(_num("probability"), 0.0),
    "p0_given_l": _opt(_num("probability"), 0.0),
})

_MODEL_SCHEMA = ("variant", "type", {
    "cycle": ("map", {
        "leakage": _req(_LEAKAGE_SCHEMA),
        "decay": _opt(_num("probability"), 0.0),
        "heating": _opt(_num("probability"), 0.0),
        "eps_g": _opt(_num("probability"), 0.0),
        "eps_e": _opt(_num("probability"), 0.0),
    }),
    "channel": ("map", {
        "channel": _req(_CHANNEL_SCHEMA),
    }),
})


def _build_model(block):
    if block["type"] == "channel":
        return _build_channel(block["channel"])
    leak = block["leakage"]
    return rilb.CycleModel(
        leakage=rilb.LeakageModel(
            l_up=leak["l_up"],
            l_down=leak["l_down"],
            p0_given_l=leak["p0_given_l"],
        ),
        decay=block["decay"],
        heating=block["heating"],
        eps_g=block["eps_g"],
        eps_e=block["eps_e"],
    )


def _build_rilb_config(block, seed) -> rilb.RILBConfig:
    return rilb.RILBConfig(
        m_cycles=block["m_cycles"],
        k_randomizations=block["k_randomizations"],
        n_shots=block["n_shots"],
        seed=seed,
        pi_error=block["pi_error"],
        p_ini=block["p_ini"],
    )


def _cmd_simulate_rilb(doc, ctx):
    seed = _pick_seed(doc["protocol"]["seed"], ctx.seed, "simulate-rilb")
    config = _build_rilb_config(doc["protocol"], seed)
    model = _build_model(doc["model"])
    if ctx.validate_only:
        return None
    run_data, result = rilb.run_protocol(
        config, model, record_states=doc["record_states"]
    )
    rilb.write_outcomes(ctx.out / "outcomes.bin", run_data)
    rilb.aggregate_to_csv(result, ctx.out / "aggregate.csv")
    (ctx.out / "fit.json").write_text(rilb.fit_to_json(result.fit))
    return {
        **_fit_summary(result.fit),
        "files": ["outcomes.bin", "aggregate.csv", "fit.json"],
    }


_SIMULATE_RILB_SCHEMA = {
    "protocol": _req(("map", {
        "m_cycles": _req(_int()),
        "k_randomizations": _req(_int()),
        "n_shots": _req(_int()),
        "pi_error": _opt(_num("probability"), 0.0),
        "p_ini": _opt(_num("probability"), 0.0),
        "seed": _opt(_int("nonnegative")),
    })),
    "model": _req(_MODEL_SCHEMA),
    "record_states": _opt(("boolean",), False),
}


def _cmd_fit_rilb(doc, ctx):
    path = Path(doc["aggregate_csv"])
    if not path.is_file():
        raise ValidationError(f"aggregate_csv: no such file: {path}")
    if ctx.validate_only:
        return None
    result = rilb.read_aggregate(path)
    fit = rilb.fit_leakage(result)
    (ctx.out / "fit.json").write_text(rilb.fit_to_json(fit))
    return {**_fit_summary(fit), "files": ["fit.json"]}


_FIT_RILB_SCHEMA = {"aggregate_csv": _req(("string",))}


def _cmd_circuit_report(doc, ctx):
    device = _build_device(doc["device"])
    if ctx.validate_only:
        return None
    spectrum = circuit.dimon_spectrum(device)
    report = {
        "e_cq_hz": spectrum.e_cq,
        "e_cm_hz": spectrum.e_cm,
        "omega_q_hz": spectrum.omega_q / TWO_PI,
        "omega_m_hz": spectrum.omega_m / TWO_PI,
        "delta_q_hz": spectrum.delta_q / TWO_PI,
        "delta_m_hz": spectrum.delta_m / TWO_PI,
        "chi_qm_hz": spectrum.chi_qm / TWO_PI,
        "chi_mr_hz": spectrum.chi_mr / TWO_PI,
        "chi_qr_hz": spectrum.chi_qr / TWO_PI,
        "delta_mr_hz": spectrum.delta_mr / TWO_PI,
    }
    if doc["numeric_check"] is not None:
        cutoffs = tuple(doc["numeric_check"]["cutoffs"])
        chi_qr_num, chi_mr_num = circuit.numeric_dispersive_check(
            spectrum, device.g_mr, cutoffs
        )
        report["chi_qr_numeric_hz"] = chi_qr_num / TWO_PI
        report["chi_mr_numeric_hz"] = chi_mr_num / TWO_PI
    if doc["network"] is not None:
        network = circuit.dimon_purcell_circuit(
            device, **_network_kwargs(doc["network"])
        )
        mode_freq, t1 = circuit.purcell_t1(
            network, spectrum.omega_q, nodes=("p1", "p2")
        )
        res_freq, res_t1 = circuit.purcell_t1(
            network, device.omega_r, nodes=("r1", "r2"), min_participation=0.2
        )
        report["qubit_mode_hz"] = mode_freq / TWO_PI
        report["t1_purcell_s"] = t1
        report["resonator_mode_hz"] = res_freq / TWO_PI
        report["kappa_r_hz"] = (0.0 if math.isinf(res_t1) else 1.0 / res_t1) / TWO_PI
        report["netlist"] = network.to_netlist()
    _io.write_json(ctx.out / "circuit_report.json", report)
    summary = {
        key: report[key]
        for key in ("omega_q_hz", "omega_m_hz", "chi_qm_hz", "chi_qr_hz")
    }
    for key in ("t1_purcell_s", "kappa_r_hz", "chi_qr_numeric_hz"):
        if key in report:
            summary[key] = report[key]
    summary["files"] = ["circuit_report.json"]
    return summary


_CIRCUIT_REPORT_SCHEMA = {
    "device": _req(_DEVICE_SCHEMA),
    "numeric_check": _opt(("map", {
        "cutoffs": _req(("list", _int(), 3)),
    })),
    "network": _opt(_NETWORK_SCHEMA),
}


def _cmd_purcell_sweep(doc, ctx):
    device = _build_device(doc["device"])
    kwargs = _network_kwargs(doc["network"])
    sweep = doc["sweep"]
    if ctx.validate_only:
        return None

    def execute(mapper):
        if sweep["type"] == "asymmetry":
            rows = circuit.asymmetry_sweep(
                device, sweep["lambdas"], mapper=mapper, **kwargs
            )
            circuit.asymmetry_sweep_to_csv(rows, ctx.out / "asymmetry_sweep.csv")
            finite = [(lam, t1) for lam, _, t1 in rows if lam > 0 and math.isfinite(t1)]
            summary = {"rows": len(rows), "files": ["asymmetry_sweep.csv"]}
            if len(finite) >= 2:
                slope = np.polyfit(
                    np.log([lam for lam, _ in finite]),
                    np.log([t1 for _, t1 in finite]),
                    1,
                )[0]
                summary["loglog_slope"] = float(slope)
            return summary
        transmon = sweep["transmon"]
        extra = transmon["c_kappa_ff"]
        rows = circuit.frequency_sweep(
            device,
            transmon["ej_hz"],
            transmon["c_t_ff"] * 1e-15,
            transmon["c_g_ff"] * 1e-15,
            sweep["scales"],
            transmon_c_kappa=None if extra is None else extra * 1e-15,
            mapper=mapper,
            **kwargs,
        )
        circuit.frequency_sweep_to_csv(rows, ctx.out / "frequency_sweep.csv")
        return {"rows": len(rows), "files": ["frequency_sweep.csv"]}

    if ctx.threads > 1:
        with ThreadPoolExecutor(max_workers=ctx.threads) as pool:
            return execute(pool.map)
    return execute(map)


_PURCELL_SWEEP_SCHEMA = {
    "device": _req(_DEVICE_SCHEMA),
    "network": _req(_NETWORK_SCHEMA),
    "sweep": _req(("variant", "type", {
        "asymmetry": ("map", {
            "lambdas": _req(("list", _num("open_unit"), 2)),
        }),
        "frequency": ("map", {
            "scales": _req(("list", _num("positive"), 2)),
            "transmon": _req(("map", {
                "ej_hz": _req(_num("positive")),
                "c_t_ff": _req(_num("positive")),
                "c_g_ff": _req(_num("positive")),
                "c_kappa_ff": _opt(_num("positive")),
            })),
        }),
    })),
}


def _cmd_thermal(doc, ctx):
    levels = doc["levels_hz"]
    temperature = doc["temperature_mk"] * 1e-3
    if len(set(levels)) != len(levels):
        raise ValidationError("levels_hz: levels must be distinct")
    if ctx.validate_only:
        return None
    populations = circuit.thermal_populations(levels, temperature)
    report = {
        "levels_hz": levels,
        "temperature_k": temperature,
        "populations": [float(p) for p in populations],
    }
    _io.write_json(ctx.out / "thermal.json", report)
    return {"populations": report["populations"], "files": ["thermal.json"]}


_THERMAL_SCHEMA = {
    "levels_hz": _req(("list", _num("nonnegative"), 2)),
    "temperature_mk": _req(_num("positive")),
}


def _cmd_efficiency(doc, ctx):
    params = _build_resonator(doc["resonator"])
    nbar = doc["nbar_r"]
    eta = doc["eta"]
    data = doc["snr_data"]
    if (eta is None) == (data is None):
        raise ValidationError("provide exactly one of 'eta' and 'snr_data'")
    if ctx.validate_only:
        return None
    if eta is not None:
        slope = resonator.snr_slope(params, nbar, eta)
        report = {"eta": eta, "snr_slope_per_ns": slope * 1e-9}
    else:
        pairs = [(row["tau_ns"] * 1e-9, row["snr"]) for row in data]
        fit = resonator.fit_efficiency(pairs, params, nbar)
        eta_hat = float(fit.parameters[0])
        report = {
            "eta": eta_hat,
            "eta_stderr": math.sqrt(max(float(fit.covariance[0, 0]), 0.0)),
            "snr_slope_per_ns": resonator.snr_slope(params, nbar, eta_hat) * 1e-9,
        }
    _io.write_json(ctx.out / "efficiency.json", report)
    return {**report, "files": ["efficiency.json"]}


_EFFICIENCY_SCHEMA = {
    "resonator": _req(_RESONATOR_SCHEMA),
    "nbar_r": _req(_num("positive")),
    "eta": _opt(_num("probability")),
    "snr_data": _opt(("list", ("map", {
        "tau_ns": _req(_num("positive")),
        "snr": _req(_num("nonnegative")),
    }), 3)),
}


_COMMANDS = {
    "steady-state": (_STEADY_SCHEMA, _cmd_steady_state),
    "trajectory": (_TRAJECTORY_SCHEMA, _cmd_trajectory),
    "calibrate-photon": (_CALIBRATE_SCHEMA, _cmd_calibrate_photon),
    "optimize-pulse": (_OPTIMIZE_SCHEMA, _cmd_optimize_pulse),
    "channel-metrics": (_CHANNEL_METRICS_SCHEMA, _cmd_channel_metrics),
    "simulate-rilb": (_SIMULATE_RILB_SCHEMA, _cmd_simulate_rilb),
    "fit-rilb": (_FIT_RILB_SCHEMA, _cmd_fit_rilb),
    "circuit-report": (_CIRCUIT_REPORT_SCHEMA, _cmd_circuit_report),
    "purcell-sweep": (_PURCELL_SWEEP_SCHEMA, _cmd_purcell_sweep),
    "thermal": (_THERMAL_SCHEMA, _cmd_thermal),
    "efficiency": (_EFFICIENCY_SCHEMA, _cmd_efficiency),
}


def _full_schema(command) -> dict:
    fields = dict(_COMMANDS[command][0])
    fields["command"] = _opt(("choice", tuple(_COMMANDS)))
    fields["description"] = _opt(("string",))
    return fields


class _Context:
    """Per-invocation knobs handed to command executors."""

    def __init__(self, out, seed, threads, validate_only):
        self.out = out
        self.seed = seed
        self.threads = threads
        self.validate_only = validate_only


def _load_document(config_path) -> tuple[dict | None, list[str]]:
    try:
        text = Path(config_path).read_text()
    except OSError as exc:
        return None, [f"{config_path}: cannot read config: {exc.strerror or exc}"]
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, [
            f"{config_path}: invalid JSON at line {exc.lineno}, "
            f"column {exc.colno}: {exc.msg}"
        ]
    if not isinstance(doc, dict):
        return None, [f"{config_path}: top level must be a JSON object"]
    return doc, []


def _check_document(command, doc) -> tuple[dict | None, list[str]]:
    # Check the declared command before the schema walk: a config written for
    # another subcommand should say so instead of drowning in unknown keys.
    declared = doc.get("command")
    if isinstance(declared, str) and declared != command:
        return None, [f"config.command: declares {declared!r}, invoked as {command!r}"]
    diags: list[str] = []
    checked = _walk_map(_full_schema(command), doc, "config", diags)
    if diags:
        return None, diags
    return checked, []


def validate(config_path, command: str | None = None) -> list[str]:
    """Full schema and invariant validation without execution.

    When ``command`` is omitted the config's own ``command`` key selects the
    schema. Returns a list of diagnostics; empty means valid.
    """
    doc, diags = _load_document(config_path)
    if diags:
        return diags
    if command is None:
        command = doc.get("command")
        if command not in _COMMANDS:
            return [
                "config.command: needed to select a schema; must be one of "
                + ", ".join(sorted(_COMMANDS))
            ]
    checked, diags = _check_document(command, doc)
    if diags:
        return diags
    ctx = _Context(Path("."), None, 1, validate_only=True)
    try:
        _COMMANDS[command][1](checked, ctx)
    except ValidationError as exc:
        return [str(exc)]
    return []


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leakbench",
        description="Dispersive-readout leakage benchmarking toolkit",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", required=True, help="JSON config path")
        sub.add_argument("--out", default=".", help="output directory")
        sub.add_argument("--seed", type=int, default=None, help="override config seed")
        sub.add_argument("--threads", type=int, default=1, help="worker thread cap")
        sub.add_argument("--validate-only", action="store_true",
                         help="check the config and exit")
    return parser


def run(argv=None) -> int:
    """Execute one subcommand; returns the process exit code."""
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return 2

    doc, diags = _load_document(args.config)
    if not diags:
        checked, diags = _check_document(args.command, doc)
    if args.validate_only:
        if not diags:
            ctx = _Context(Path(args.out), args.seed, args.threads, validate_only=True)
            try:
                _COMMANDS[args.command][1](checked, ctx)
            except ValidationError as exc:
                diags = [str(exc)]
        print(json.dumps(
            {"command": args.command, "valid": not diags, "diagnostics": diags},
            sort_keys=True,
        ))
        return 0 if not diags else 2
    if diags:
        for diag in diags:
            print(diag, file=sys.stderr)
        return 2

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = _Context(out_dir, args.seed, args.threads, validate_only=False)
    try:
        summary = _COMMANDS[args.command][1](checked, ctx)
    except ValidationError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(
        {"command": args.command, "out": str(out_dir), **summary}, sort_keys=True
    ))
    return 0


def main() -> None:
    sys.exit(run())


# ---------------------------------------------------------------------------
# Bundled presets
# ---------------------------------------------------------------------------


def preset_names() -> list[str]:
    """Names of the bundled example configs, usable with preset_path."""
    root = resources.files("leakbench") / "presets"
    return sorted(p.name[: -len(".json")] for p in root.iterdir()
                  if p.name.endswith(".json"))


def preset_path(name: str) -> Path:
    """Filesystem path of a bundled example config."""
    path = resources.files("leakbench") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ValidationError(
            f"no preset named {name!r}; available: {', '.join(preset_names())}"
        )
    return Path(str(path))
