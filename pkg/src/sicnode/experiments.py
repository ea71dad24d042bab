"""Experiment runners: config in, :class:`ExperimentResult` out.

Each runner is a deterministic function of the config (seed included) and
the requested thread count does not change its output.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .fitting import fit_decay, fit_lorentzian_dips, fit_rabi, fit_ramsey
from .noise import (NoiseModel, Readout, READOUT_STREAM, average_channel, calibrate_ou,
                    predicted_t2, sample_rng, sigma_from_t2star)
from .pulses import (RF, Delay, PulseSequence, Register, SequenceError, build_bell_prep,
                     build_decoupling, build_ramsey, mw_rotation, selective_rf)
from .spincore import build_hamiltonian, odmr_spectrum, transition_table
from .states import BELL_STATE, DensityMatrix, polarized_initial_state
from .tomography import (bootstrap_error, mle_reconstruct, simulate_tomography,
                         standard_settings, state_fidelity)
from .units import MHZ_PER_KHZ, TWO_PI

log = logging.getLogger(__name__)

SPECTRUM_CSV_NAMES = ("freq_mhz", "rel_pl")


@dataclass
class ExperimentResult:
    """Scan data, fits and provenance of one run.

    ``columns`` holds extra per-point data written next to ``x`` and ``y``
    in the CSV file; every column has the same length as ``x``.
    ``csv_names`` overrides the default ``<name>_<unit>`` headers of the
    first two CSV columns.
    """

    kind: str
    x: np.ndarray
    y: np.ndarray
    x_name: str
    x_unit: str
    y_name: str
    y_unit: str
    fits: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    columns: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    csv_names: tuple = None

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y)
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have equal length")
        for name, col in self.columns.items():
            if len(col) != len(self.x):
                raise ValueError(f"column {name} has the wrong length")


def _provenance(cfg: ExperimentConfig, kind):
    return {"config_hash": cfg.hash(), "seed": cfg.seed, "code_version": __version__,
            "kind": kind}


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    return v


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


def write_result(result: ExperimentResult, out_dir, name=None):
    """Write ``<name>.result.json`` and ``<name>.data.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = name or result.kind
    doc = {
        "kind": result.kind,
        "x": {"name": result.x_name, "unit": result.x_unit, "values": result.x},
        "y": {"name": result.y_name, "unit": result.y_unit, "values": result.y},
        "fits": result.fits,
        "flags": result.flags,
        "details": result.details,
        "provenance": result.provenance,
    }
    jpath = out / f"{name}.result.json"
    jpath.write_text(json.dumps(_plain(doc), sort_keys=True, indent=1) + "\n")
    cpath = out / f"{name}.data.csv"
    names = list(result.csv_names or (f"{result.x_name}_{result.x_unit}",
                                      f"{result.y_name}_{result.y_unit}"))
    names += list(result.columns)
    with open(cpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        cols = [result.x, result.y] + [np.asarray(c) for c in result.columns.values()]
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    return jpath, cpath


# ------------------------------------------------------------------ setup


def noise_model(cfg: ExperimentConfig):
    """Noise model from the config, plus the bath calibration if one was run.

    A Hahn time triggers the bath fit; adding a DD time fits the
    quasi-static and OU parts jointly to all three times.
    """
    n = cfg.noise
    readout = Readout(n["contrast"], n["photons_per_shot"], int(n["shots"]))
    if not n["enabled"]:
        return NoiseModel(nuclear_sigma=0.0, readout=readout), None
    nuclear = 0.0
    if n["t2star_n_us"] is not None:
        nuclear = sigma_from_t2star(n["t2star_n_us"]) / MHZ_PER_KHZ
    base = NoiseModel(nuclear_sigma=nuclear, readout=readout)
    t2s = n["t2star_e_us"]
    if t2s is not None and n["hahn_t2_us"] is not None:
        cal = calibrate_ou(t2s, n["hahn_t2_us"], n["dd_t2_us"], n["dd_n"])
        return cal.model(base), cal
    if t2s is not None:
        return base.replace(quasi_static_sigma=sigma_from_t2star(t2s)), None
    return base, None


def _noise_seed(cfg):
    s = cfg.noise["seed"]
    return cfg.seed if s is None else int(s)


def _samples(cfg):
    return int(cfg.noise["n_noise_samples"])


def _calibration_details(cal):
    if cal is None:
        return None
    return {"quasi_static_sigma_mhz": cal.quasi_static_sigma, "ou_sigma_mhz": cal.sigma,
            "ou_tau_c_us": cal.tau_c, "predicted_t2_us": {str(k): v for k, v in cal.predicted.items()}}


def _electron_p0(rho):
    m = rho.matrix
    return float(np.real(m[0, 0] + m[1, 1]))


# ---------------------------------------------------------------- spectra


def _photon_noisy(curve, cfg, stream_index):
    """Normalized PL with Poisson counting noise at the configured shots."""
    n = cfg.noise
    scale = n["shots"] * n["photons_per_shot"]
    counts = sample_rng(cfg.seed, stream_index, READOUT_STREAM).poisson(scale * curve)
    return counts / scale


def _field(params, b):
    if b is None:
        return params
    vec = [0.0, 0.0, float(b)] if np.isscalar(b) else [float(v) for v in b]
    return params.replace(b_field=vec)


def run_odmr(cfg: ExperimentConfig, threads=1) -> ExperimentResult:
    """Electron spin resonance spectrum with Lorentzian line-centre fits."""
    e = cfg.experiment("odmr")
    params = _field(cfg.params(), e["b_gs"])
    table = transition_table(build_hamiltonian(params), "electron")
    span = e["span"] or [params.d_gs - 20.0, params.d_gs + 20.0]
    grid = np.linspace(span[0], span[1], int(e["points"]))
    spectrum = odmr_spectrum(table, e["linewidth_mhz"], cfg.noise["contrast"], grid)
    pl = _photon_noisy(spectrum.rel_pl, cfg, 0)
    fit = fit_lorentzian_dips(grid, pl, width_guess=e["linewidth_mhz"])
    fits = {"fit": fit.to_dict()}
    if fit.success:
        c = fit.params["centers"]
        fits["centers_mhz"] = c
        fits["n_lines"] = len(c)
        if len(c) == 2:
            fits["splitting_mhz"] = c[1] - c[0]
    lines = sorted({round(t.frequency, 9) for t in table.entries})
    return ExperimentResult(
        "odmr", grid, pl, "frequency", "MHz", "relative_pl", "1", fits,
        {"fit_failed": not fit.success},
        details={"b_gs": list(params.b_field), "model_lines_mhz": lines},
        provenance=_provenance(cfg, "odmr"), csv_names=SPECTRUM_CSV_NAMES)


def run_odnmr(cfg: ExperimentConfig, threads=1) -> ExperimentResult:
    """Nuclear resonance in the electron |-1> manifold, single-line fit."""
    e = cfg.experiment("odnmr")
    params = _field(cfg.params(), e["b_gs"])
    table = transition_table(build_hamiltonian(params), "nuclear")
    entries = tuple(t for t in table.entries if t.labels[0][0] == -1)
    sub = type(table)("nuclear", entries)
    grid = np.linspace(e["span"][0], e["span"][1], int(e["points"]))
    spectrum = odmr_spectrum(sub, e["linewidth_mhz"], cfg.noise["contrast"], grid)
    pl = _photon_noisy(spectrum.rel_pl, cfg, 1)
    fit = fit_lorentzian_dips(grid, pl, n_lines=1, width_guess=e["linewidth_mhz"])
    fits = {"fit": fit.to_dict()}
    if fit.success:
        fits["center_mhz"] = fit.params["centers"][0]
        fits["center_stderr_mhz"] = fit.stderr.get("center_0")
    return ExperimentResult(
        "odnmr", grid, pl, "frequency", "MHz", "relative_pl", "1", fits,
        {"fit_failed": not fit.success},
        details={"b_gs": list(params.b_field), "model_lines_mhz": [t.frequency for t in entries]},
        provenance=_provenance(cfg, "odnmr"), csv_names=SPECTRUM_CSV_NAMES)


# ----------------------------------------------------------------- rabi


def run_rabi(cfg: ExperimentConfig, threads=1) -> ExperimentResult:
    """Nuclear flip probability against RF length with the electron in |-1>."""
    e = cfg.experiment("rabi")
    reg = Register.from_params(cfg.params())
    model, _ = noise_model(cfg)
    rabi_khz = e["rf_rabi_khz"]
    rabi_khz = 1e3 * reg.params.rabi_n if rabi_khz is None else float(rabi_khz)
    rho0 = polarized_initial_state(cfg.init_polarization)
    flip = mw_rotation(np.pi, reg.params, "MW1")
    durations = np.linspace(0.0, e["max_duration"], int(e["points"]))
    probs = []
    for i, t in enumerate(durations):
        seq = PulseSequence((flip, RF(reg.rf1, rabi_khz, float(t))), "rabi")
        rho = average_channel(seq, rho0, model, _samples(cfg), _noise_seed(cfg) + i, reg, threads)
        m = rho.matrix
        probs.append(float(np.real(m[1, 1] + m[3, 3])))
    probs = np.array(probs)
    fit = fit_rabi(durations, probs)
    fits = {"fit": fit.to_dict()}
    if fit.success:
        fits["t_pi_us"] = fit.params["t_pi"]
        fits["t_pi_stderr_us"] = fit.stderr.get("t_pi")
    return ExperimentResult(
        "rabi", durations, probs, "rf_duration", "us", "flip_probability", "1", fits,
        {"fit_failed": not fit.success}, details={"rf_rabi_khz": rabi_khz},
        provenance=_provenance(cfg, "rabi"))


# --------------------------------------------------------------- ramsey


def _nuclear_ramsey(delay, reg, fringe_mhz):
    """Selective RF pi/2 - delay - RF pi/2 in the electron |-1> manifold.

    The second pulse phase follows the frame precession, plus a ramp at
    ``fringe_mhz``, so fringes appear at that frequency.
    """
    nu1 = reg.precession()[1]
    flip = mw_rotation(np.pi, reg.params, "MW1")
    first = selective_rf(np.pi / 2, reg, -1, 0.0)
    spacing = first.duration + delay
    phase = np.pi + TWO_PI * (nu1 + fringe_mhz) * spacing
    last = RF(first.carrier, first.rabi, first.duration, float(np.mod(phase, TWO_PI)))
    return PulseSequence((flip, first, Delay(delay), last), "ramsey-n")


def run_ramsey(cfg: ExperimentConfig, target=None, threads=1) -> ExperimentResult:
    """Free-induction fringes and a Gaussian-envelope T2* fit.

    The nuclear scan keeps the electron in |-1>, where electron detuning
    shifts both nuclear levels equally and drops out, so only the nuclear
    part of the bath is sampled.
    """
    e = cfg.experiment("ramsey")
    target = target or e["target"]
    if target not in ("electron", "nuclear"):
        raise ValueError("target must be electron or nuclear")
    reg = Register.from_params(cfg.params())
    model, _ = noise_model(cfg)
    rho0 = polarized_initial_state(cfg.init_polarization)
    if target == "electron":
        max_delay = e["max_delay"] or 6.0
        points = e["points"] or 241
        fringe = e["fringe_mhz"] if e["fringe_mhz"] is not None else 0.0
    else:
        max_delay = e["max_delay"] or 400.0
        points = e["points"] or 201
        fringe = e["fringe_mhz"] if e["fringe_mhz"] is not None else 0.02
        model = model.replace(quasi_static_sigma=0.0, ou=None)
    # x is the pulse centre-to-centre spacing, so dephasing during the
    # finite pulses is counted as free evolution
    if target == "electron":
        t_pulse = mw_rotation(np.pi / 2, reg.params).duration
    else:
        t_pulse = selective_rf(np.pi / 2, reg, -1).duration
    spacing = np.linspace(t_pulse, t_pulse + max_delay, int(points))
    signal = []
    for i, s in enumerate(spacing):
        d = max(float(s - t_pulse), 0.0)
        if target == "electron":
            seq = build_ramsey(d, reg.params, "broadband", fringe)
        else:
            seq = _nuclear_ramsey(d, reg, fringe)
        rho = average_channel(seq, rho0, model, _samples(cfg), _noise_seed(cfg) + i, reg, threads)
        m = rho.matrix
        if target == "electron":
            signal.append(_electron_p0(rho))
        else:
            signal.append(float(np.real(m[0, 0] + m[2, 2])))
    signal = np.array(signal)
    fit = fit_ramsey(spacing, signal, spacing[-1])
    fits = {"fit": fit.to_dict()}
    if fit.success:
        fits["t2star_us"] = fit.params["t2star"]
        fits["t2star_stderr_us"] = fit.stderr.get("t2star")
        fits["t2star_lower_bound"] = fit.params["t2star_lower_bound"]
    y_name = "p_electron_0" if target == "electron" else "p_nuclear_up"
    return ExperimentResult(
        f"ramsey-{target}", spacing, signal, "pulse_spacing", "us", y_name, "1", fits,
        {"fit_failed": not fit.success}, details={"target": target, "fringe_mhz": fringe},
        provenance=_provenance(cfg, f"ramsey-{target}"))


# ------------------------------------------------------------------ DD


def dd_coherence(n_pulses, totals, reg, model, rho0, n_samples, seed, threads=1):
    """Echo coherence ``2 P(0) - 1`` after ``n_pulses`` at each total time."""
    out = []
    for i, total in enumerate(totals):
        seq = build_decoupling(int(n_pulses), float(total) / (2 * n_pulses), reg.params)
        rho = average_channel(seq, rho0, model, n_samples, seed + 1000 * int(n_pulses) + i,
                              reg, threads)
        out.append(2.0 * _electron_p0(rho) - 1.0)
    return np.array(out)


def run_dd_t2(cfg: ExperimentConfig, threads=1) -> ExperimentResult:
    """Coherence against total free-evolution time for each pulse count."""
    e = cfg.experiment("dd_t2")
    reg = Register.from_params(cfg.params())
    model, cal = noise_model(cfg)
    rho0 = polarized_initial_state(cfg.init_polarization)
    scan = e["tau_scan"]
    p = reg.params
    xs, ys, ns = [], [], []
    fits, flags = {}, {}
    for n in e["n_list"]:
        t_max = scan["max_total_us"]
        if t_max is None:
            guess = predicted_t2(n, model.quasi_static_sigma, model.ou)
            t_max = float(np.clip(2.5 * guess, 5.0, 150.0)) if np.isfinite(guess) else 60.0
        t_min = max(n * 1.5 * p.t_pi_e, 0.02 * t_max)
        totals = np.linspace(t_min, t_max, int(scan["points"]))
        coh = dd_coherence(n, totals, reg, model, rho0, _samples(cfg), _noise_seed(cfg), threads)
        fit = fit_decay(totals, coh)
        fits[f"N{n}"] = fit.to_dict()
        flags[f"fit_failed_N{n}"] = not fit.success
        if fit.success:
            fits[f"t2_N{n}_us"] = fit.params["t2"]
        xs += list(totals)
        ys += list(coh)
        ns += [n] * len(totals)
    return ExperimentResult(
        "dd_t2", np.array(xs), np.array(ys), "total_time", "us", "coherence", "1", fits, flags,
        columns={"n_pulses": np.array(ns)}, details={"calibration": _calibration_details(cal)},
        provenance=_provenance(cfg, "dd_t2"))


# ---------------------------------------------------------------- Bell


def bell_point(prep, cfg, reg, model, rho0, shots, n_resamples, threads=1, seed_offset=0):
    """Tomography, reconstruction and bootstrap for one preparation."""
    seed = cfg.seed + seed_offset
    settings = standard_settings(reg)
    table = simulate_tomography(prep, model, settings, seed, reg, rho0, _samples(cfg),
                                threads, shots, poisson=cfg.noise["enabled"])
    rec = mle_reconstruct(table)
    bell = DensityMatrix.pure(BELL_STATE)
    f, f2 = state_fidelity(rec.rho, bell)
    boot = bootstrap_error(table, n_resamples, seed, bell, threads)
    return {"F": f, "F2": f2, "F_std": boot.fidelity_std, "F_boot_mean": boot.fidelity_mean,
            "rho14_abs": abs(rec.rho.rho14), "iterations": rec.iterations,
            "log_likelihood": rec.log_likelihood,
            "rho_real": np.real(rec.rho.matrix), "rho_imag": np.imag(rec.rho.matrix),
            "bootstrap_failure_fraction": boot.failure_fraction}, table


def run_bell(cfg: ExperimentConfig, threads=1) -> ExperimentResult:
    """Bell-state fidelity at fixed total duration, naive and DDRF preparations.

    The naive row is reported with ``n = 0``.
    """
    e = cfg.experiment("bell")
    reg = Register.from_params(cfg.params())
    model, cal = noise_model(cfg)
    rho0 = polarized_initial_state(cfg.init_polarization)
    shots = e["shots"] or cfg.noise["shots"]
    duration = e["fixed_duration_us"]
    jobs = []
    if e["variant"] in ("naive", "both"):
        jobs.append(("naive", 0))
    if e["variant"] in ("ddrf", "both"):
        jobs += [("ddrf", int(n)) for n in e["n_list"]]
    rows, errors = [], {}
    for k, (variant, n) in enumerate(jobs):
        try:
            if variant == "naive":
                prep = build_bell_prep("naive", reg, duration)
            else:
                prep = build_bell_prep("ddrf", reg, duration, n_units=n)
        except SequenceError as exc:
            errors[f"{variant}_N{n}"] = str(exc)
            continue
        point, _ = bell_point(prep, cfg, reg, model, rho0, shots, e["bootstrap_resamples"],
                              threads, seed_offset=k)
        point.update(variant=variant, n=n, duration_us=prep.total_duration)
        rows.append(point)
    ns = np.array([r["n"] for r in rows], dtype=int)
    fits = {f"{r['variant']}_N{r['n']}": {k: v for k, v in r.items()
                                         if k not in ("variant", "n")} for r in rows}
    return ExperimentResult(
        "bell", ns, np.array([r["F"] for r in rows]), "n_units", "1", "fidelity", "1", fits,
        {"errors": errors},
        columns={"variant": [r["variant"] for r in rows],
                 "fidelity_sq": np.array([r["F2"] for r in rows]),
                 "fidelity_std": np.array([r["F_std"] for r in rows]),
                 "rho14_abs": np.array([r["rho14_abs"] for r in rows])},
        details={"fixed_duration_us": duration, "shots": shots,
                 "calibration": _calibration_details(cal)},
        provenance=_provenance(cfg, "bell"))


def run_tomo(cfg: ExperimentConfig, threads=1):
    """Counts table and reconstruction for one preparation.

    Returns the result and the :class:`CountsTable` (for the CSV export).
    """
    e = cfg.experiment("tomo")
    reg = Register.from_params(cfg.params())
    model, _ = noise_model(cfg)
    rho0 = polarized_initial_state(cfg.init_polarization)
    if e["prep"] == "none":
        prep = PulseSequence((), "none")
    elif e["prep"] == "naive":
        prep = build_bell_prep("naive", reg, e["fixed_duration_us"])
    else:
        prep = build_bell_prep("ddrf", reg, e["fixed_duration_us"], n_units=e["n_units"])
    point, table = bell_point(prep, cfg, reg, model, rho0, e["shots"], e["bootstrap_resamples"],
                              threads)
    labels = [r.setting for r in table.rows]
    counts = np.array([r.counts for r in table.rows])
    result = ExperimentResult(
        "tomo", np.arange(len(labels)), counts, "row", "1", "counts", "1", {"reconstruction": point},
        {}, columns={"setting": labels, "shots": [r.shots for r in table.rows]},
        details={"prep": e["prep"], "contrast": table.contrast,
                 "photons_per_shot": table.photons_per_shot},
        provenance=_provenance(cfg, "tomo"))
    return result, table


RUNNERS = {
    "odmr": run_odmr,
    "odnmr": run_odnmr,
    "rabi": run_rabi,
    "ramsey": run_ramsey,
    "dd-t2": run_dd_t2,
    "bell": run_bell,
}
