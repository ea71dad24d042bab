"""Experiment configuration: YAML file -> validated dataclasses.

Layout::

    register:    {d_gs_mhz, gamma_e_mhz_per_gs, gamma_n_khz_per_gs, gamma_n_sign,
                  a_zz_mhz | a_tensor_mhz, b_gs | b_field_gs, t_pi_e_us, t_pi_n_us}
    noise:       {enabled, t2star_e_us, t2star_n_us, hahn_t2_us, dd_t2_us, dd_n,
                  contrast, photons_per_shot, shots, n_noise_samples, seed}
    experiments: {odmr: {...}, odnmr: {...}, rabi: {...}, ramsey: {...},
                  dd_t2: {...}, bell: {...}, tomo: {...}}
    seed: int
    output_path: str
    init_polarization: float
"""

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .spincore import ParameterError, SpinRegisterParams


class ConfigError(Exception):
    """Base class; ``field`` names the offending key when known."""

    kind = "config"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ConfigUnreadable(ConfigError):
    kind = "unreadable_config"


class SchemaViolation(ConfigError):
    kind = "schema_violation"


_REGISTER = {
    "d_gs_mhz": None,  # required
    "gamma_e_mhz_per_gs": 0.28,
    "gamma_n_khz_per_gs": 0.85,
    "gamma_n_sign": 1,
    "a_zz_mhz": 12.4,
    "a_tensor_mhz": None,  # 9 values, row-major; overrides a_zz_mhz
    "b_gs": 0.0,
    "b_field_gs": None,  # 3-vector; overrides b_gs
    "t_pi_e_us": 0.1,
    "t_pi_n_us": 2.328,
}

_NOISE = {
    "enabled": True,
    "t2star_e_us": 2.04,
    "t2star_n_us": 143.0,
    "hahn_t2_us": 8.2,
    "dd_t2_us": 31.7,
    "dd_n": 16,
    "contrast": 0.30,
    "photons_per_shot": 1.0,
    "shots": 100000,
    "n_noise_samples": 1000,
    "seed": None,
}

EXPERIMENT_DEFAULTS = {
    "odmr": {"b_gs": None, "span": None, "points": 801, "linewidth_mhz": 1.0},
    "odnmr": {"b_gs": 330.0, "span": [11.4, 13.2], "points": 721, "linewidth_mhz": 0.05},
    "rabi": {"max_duration": 10.0, "points": 101, "rf_rabi_khz": None},
    "ramsey": {"target": "electron", "max_delay": None, "points": None, "fringe_mhz": None},
    "dd_t2": {"n_list": [1, 2, 4, 8, 16], "tau_scan": {"points": 14, "max_total_us": None}},
    "bell": {"variant": "both", "n_list": [4, 12, 16], "fixed_duration_us": 14.7,
             "shots": None, "bootstrap_resamples": 100},
    "tomo": {"prep": "ddrf", "n_units": 16, "shots": 1000000, "fixed_duration_us": 14.7,
             "bootstrap_resamples": 100},
}

_TOP = {"register", "noise", "experiments", "seed", "output_path", "init_polarization"}


@dataclass
class ExperimentConfig:
    register: dict
    noise: dict
    experiments: dict
    seed: int = 0
    output_path: str = "results"
    init_polarization: float = 0.99
    raw: dict = field(default_factory=dict, repr=False)

    def params(self) -> SpinRegisterParams:
        r = self.register
        if r["a_tensor_mhz"] is not None:
            hf = np.array(r["a_tensor_mhz"], dtype=float).reshape(3, 3)
        else:
            hf = np.diag([0.0, 0.0, float(r["a_zz_mhz"])])
        b = r["b_gs"] if r["b_field_gs"] is None else r["b_field_gs"]
        b = [0.0, 0.0, float(b)] if np.isscalar(b) else [float(v) for v in b]
        return SpinRegisterParams(
            d_gs=float(r["d_gs_mhz"]), gamma_e=float(r["gamma_e_mhz_per_gs"]),
            gamma_n=float(r["gamma_n_khz_per_gs"]), gamma_n_sign=int(r["gamma_n_sign"]),
            hyperfine=hf, b_field=b, t_pi_e=float(r["t_pi_e_us"]), t_pi_n=float(r["t_pi_n_us"]))

    def experiment(self, kind):
        return self.experiments[kind]

    def with_seed(self, seed):
        out = copy.deepcopy(self)
        out.seed = int(seed)
        return out

    def canonical(self):
        return {"register": self.register, "noise": self.noise, "experiments": self.experiments,
                "seed": self.seed, "output_path": self.output_path,
                "init_polarization": self.init_polarization}

    def hash(self):
        """SHA-256 of the canonical JSON form, seed included."""
        text = json.dumps(self.canonical(), sort_keys=True, default=float)
        return hashlib.sha256(text.encode()).hexdigest()


def _merge(block, defaults, where):
    block = {} if block is None else block
    if not isinstance(block, dict):
        raise SchemaViolation(f"{where} must be a mapping", where)
    unknown = sorted(set(block) - set(defaults))
    if unknown:
        raise SchemaViolation(f"unknown key {where}.{unknown[0]}", f"{where}.{unknown[0]}")
    out = copy.deepcopy(defaults)
    out.update(block)
    return out


def _number(d, key, where, lo=None, hi=None, integer=False, strict_lo=False, allow_none=False):
    v = d[key]
    name = f"{where}.{key}" if where else key
    if v is None and allow_none:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaViolation(f"{name} must be a number", name)
    if integer and int(v) != v:
        raise SchemaViolation(f"{name} must be an integer", name)
    if not np.isfinite(v):
        raise SchemaViolation(f"{name} must be finite", name)
    if lo is not None and (v < lo or (strict_lo and v == lo)):
        raise SchemaViolation(f"{name} must be {'>' if strict_lo else '>='} {lo}", name)
    if hi is not None and v > hi:
        raise SchemaViolation(f"{name} must be <= {hi}", name)


def _int_list(d, key, where, rule, message):
    name = f"{where}.{key}"
    v = d[key]
    if not isinstance(v, list) or not v:
        raise SchemaViolation(f"{name} must be a nonempty list", name)
    for n in v:
        if isinstance(n, bool) or not isinstance(n, int) or not rule(n):
            raise SchemaViolation(f"{name}: {n!r} {message}", name)


def _validate_register(r):
    if r["d_gs_mhz"] is None:
        raise SchemaViolation("register.d_gs_mhz is required", "register.d_gs_mhz")
    _number(r, "d_gs_mhz", "register")
    _number(r, "gamma_e_mhz_per_gs", "register", 0, strict_lo=True)
    _number(r, "gamma_n_khz_per_gs", "register", 0)
    if r["gamma_n_sign"] not in (1, -1):
        raise SchemaViolation("register.gamma_n_sign must be +1 or -1", "register.gamma_n_sign")
    _number(r, "a_zz_mhz", "register")
    _number(r, "t_pi_e_us", "register", 0, strict_lo=True)
    _number(r, "t_pi_n_us", "register", 0, strict_lo=True)
    b = r["b_gs"]
    if not (isinstance(b, (int, float)) and not isinstance(b, bool)):
        if not (isinstance(b, list) and len(b) == 3):
            raise SchemaViolation("register.b_gs must be a number or a 3-vector", "register.b_gs")
    for key, size in (("a_tensor_mhz", 9), ("b_field_gs", 3)):
        v = r[key]
        if v is None:
            continue
        ok = isinstance(v, list) and len(v) == size and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x) for x in v)
        if not ok:
            raise SchemaViolation(f"register.{key} must be {size} finite numbers", f"register.{key}")


def _validate_noise(n):
    if not isinstance(n["enabled"], bool):
        raise SchemaViolation("noise.enabled must be true or false", "noise.enabled")
    for key in ("t2star_e_us", "t2star_n_us", "hahn_t2_us", "dd_t2_us"):
        _number(n, key, "noise", 0, strict_lo=True, allow_none=True)
    _number(n, "dd_n", "noise", 2, integer=True)
    _number(n, "contrast", "noise", 0, 1, strict_lo=True)
    _number(n, "photons_per_shot", "noise", 0, strict_lo=True)
    _number(n, "shots", "noise", 1, integer=True)
    _number(n, "n_noise_samples", "noise", 1, integer=True)
    _number(n, "seed", "noise", 0, integer=True, allow_none=True)
    if n["hahn_t2_us"] is not None and n["t2star_e_us"] is not None \
            and n["hahn_t2_us"] <= n["t2star_e_us"]:
        raise SchemaViolation("noise.hahn_t2_us must exceed noise.t2star_e_us", "noise.hahn_t2_us")


def _validate_experiment(kind, e):
    w = f"experiments.{kind}"
    if kind in ("odmr", "odnmr"):
        _number(e, "points", w, 2, integer=True)
        _number(e, "linewidth_mhz", w, 0, strict_lo=True)
        if e["span"] is not None and not (isinstance(e["span"], list) and len(e["span"]) == 2
                                         and e["span"][1] > e["span"][0]):
            raise SchemaViolation(f"{w}.span must be [start, stop] with stop > start", f"{w}.span")
    elif kind == "rabi":
        _number(e, "points", w, 2, integer=True)
        _number(e, "max_duration", w, 0, strict_lo=True)
        _number(e, "rf_rabi_khz", w, 0, allow_none=True)
    elif kind == "ramsey":
        if e["target"] not in ("electron", "nuclear"):
            raise SchemaViolation(f"{w}.target must be electron or nuclear", f"{w}.target")
        _number(e, "points", w, 2, integer=True, allow_none=True)
        _number(e, "max_delay", w, 0, strict_lo=True, allow_none=True)
        _number(e, "fringe_mhz", w, allow_none=True)
    elif kind == "dd_t2":
        _int_list(e, "n_list", w, lambda n: n == 1 or (n >= 2 and n % 2 == 0),
                  "must be 1 or an even pulse count")
        scan = e["tau_scan"]
        if not isinstance(scan, dict) or set(scan) - {"points", "max_total_us"}:
            raise SchemaViolation(f"{w}.tau_scan must map points/max_total_us", f"{w}.tau_scan")
        scan = {"points": 14, "max_total_us": None, **scan}
        e["tau_scan"] = scan
        _number(scan, "points", f"{w}.tau_scan", 2, integer=True)
        _number(scan, "max_total_us", f"{w}.tau_scan", 0, strict_lo=True, allow_none=True)
    elif kind in ("bell", "tomo"):
        if kind == "bell":
            if e["variant"] not in ("naive", "ddrf", "both"):
                raise SchemaViolation(f"{w}.variant must be naive, ddrf or both", f"{w}.variant")
            _int_list(e, "n_list", w, lambda n: n > 0 and n % 4 == 0, "must be a positive multiple of 4")
            _number(e, "shots", w, 1, integer=True, allow_none=True)
        else:
            if e["prep"] not in ("naive", "ddrf", "none"):
                raise SchemaViolation(f"{w}.prep must be naive, ddrf or none", f"{w}.prep")
            _number(e, "n_units", w, 4, integer=True)
            if e["n_units"] % 4:
                raise SchemaViolation(f"{w}.n_units must be a multiple of 4", f"{w}.n_units")
            _number(e, "shots", w, 1, integer=True)
        _number(e, "fixed_duration_us", w, 0, strict_lo=True)
        _number(e, "bootstrap_resamples", w, 100, integer=True)


def config_from_dict(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise SchemaViolation("config root must be a mapping")
    unknown = sorted(set(raw) - _TOP)
    if unknown:
        raise SchemaViolation(f"unknown top-level key {unknown[0]}", unknown[0])
    if "register" not in raw:
        raise SchemaViolation("missing register block (register.d_gs_mhz is required)",
                              "register.d_gs_mhz")
    reg = _merge(raw.get("register"), _REGISTER, "register")
    _validate_register(reg)
    noise = _merge(raw.get("noise"), _NOISE, "noise")
    _validate_noise(noise)
    exps_raw = raw.get("experiments") or {}
    if not isinstance(exps_raw, dict):
        raise SchemaViolation("experiments must be a mapping", "experiments")
    bad = sorted(set(exps_raw) - set(EXPERIMENT_DEFAULTS))
    if bad:
        raise SchemaViolation(f"unknown experiment kind {bad[0]}", f"experiments.{bad[0]}")
    exps = {}
    for kind, defaults in EXPERIMENT_DEFAULTS.items():
        block = _merge(exps_raw.get(kind), defaults, f"experiments.{kind}")
        _validate_experiment(kind, block)
        exps[kind] = block
    top = {"seed": raw.get("seed", 0), "init_polarization": raw.get("init_polarization", 0.99)}
    _number(top, "seed", "", 0, integer=True)
    _number(top, "init_polarization", "", 0, 1)
    out = raw.get("output_path", "results")
    if not isinstance(out, str):
        raise SchemaViolation("output_path must be a string", "output_path")
    cfg = ExperimentConfig(reg, noise, exps, int(top["seed"]), out,
                           float(top["init_polarization"]), raw)
    try:
        cfg.params()
    except ParameterError as exc:
        raise SchemaViolation(f"register: {exc}", "register") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigUnreadable(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigUnreadable(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw)
