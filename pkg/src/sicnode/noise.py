"""Electron dephasing, noise-averaged evolution and photon-counting readout.

The bath is a Gaussian quasi-static detuning plus an optional
Ornstein-Uhlenbeck (OU) process, both added to the electron |-1> levels. A
quasi-static nuclear detuning is added to the nuclear ``dn`` levels.

Every Monte Carlo sample ``k`` draws from its own counter-based generator
(Philox keyed by ``SeedSequence([seed, stream, k])``), and samples are reduced in
fixed-size chunks in index order, so results do not depend on the number of
worker threads.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq, least_squares
from scipy.signal import lfilter

from .pulses import MW, PulseSequence, as_register, compose, element_propagator
from .spincore import ParameterError
from .states import DensityMatrix, as_matrix, clip_to_physical
from .units import MHZ_PER_KHZ, TWO_PI

log = logging.getLogger(__name__)

DEFAULT_T2STAR_N_US = 143.0
DEFAULT_DT_US = 0.01
CHUNK = 64


def sigma_from_t2star(t2star):
    """Detuning std (MHz) whose Gaussian average decays as exp(-(t/T2*)^2)."""
    if not t2star > 0:
        raise ValueError("t2star must be positive")
    if np.isinf(t2star):
        return 0.0
    return float(np.sqrt(2.0) / (TWO_PI * t2star))


@dataclass(frozen=True)
class OUProcess:
    sigma: float
    tau_c: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ParameterError("OU sigma must be >= 0")
        if not self.tau_c > 0:
            raise ParameterError("OU tau_c must be positive")


@dataclass(frozen=True)
class Readout:
    contrast: float = 0.30
    photons_per_shot: float = 1.0
    shots: int = 100_000

    def __post_init__(self):
        if not 0 < self.contrast <= 1:
            raise ParameterError("contrast must lie in (0, 1]")
        if not self.photons_per_shot > 0:
            raise ParameterError("photons_per_shot must be positive")
        if int(self.shots) != self.shots or self.shots < 1:
            raise ParameterError("shots must be a positive integer")


@dataclass(frozen=True)
class NoiseModel:
    """Bath and readout description.

    Parameters
    ----------
    quasi_static_sigma : float
        Std of the static electron detuning (MHz).
    ou : OUProcess, optional
        Fluctuating electron detuning (sigma in MHz, tau_c in us).
    nuclear_sigma : float
        Std of the static nuclear detuning (kHz).
    readout : Readout
    """

    quasi_static_sigma: float = 0.0
    ou: Optional[OUProcess] = None
    nuclear_sigma: float = field(
        default_factory=lambda: sigma_from_t2star(DEFAULT_T2STAR_N_US) / MHZ_PER_KHZ)
    readout: Readout = field(default_factory=Readout)

    def __post_init__(self):
        if not (self.quasi_static_sigma >= 0 and self.nuclear_sigma >= 0):
            raise ParameterError("noise sigmas must be >= 0")

    @property
    def is_silent(self):
        ou = self.ou is None or self.ou.sigma == 0
        return self.quasi_static_sigma == 0 and self.nuclear_sigma == 0 and ou

    def replace(self, **changes):
        kw = dict(quasi_static_sigma=self.quasi_static_sigma, ou=self.ou,
                  nuclear_sigma=self.nuclear_sigma, readout=self.readout)
        kw.update(changes)
        return NoiseModel(**kw)


def noiseless():
    return NoiseModel(nuclear_sigma=0.0)


@dataclass(frozen=True, eq=False)
class NoiseTrajectory:
    """Electron detuning (MHz) on a time grid, plus the static nuclear detuning."""

    times: np.ndarray
    detuning: np.ndarray
    seed: int
    nuclear_detuning: float = 0.0

    def __post_init__(self):
        if np.shape(self.times) != np.shape(self.detuning):
            raise ValueError("times and detuning must have the same length")


# independent streams under one user seed
NOISE_STREAM, READOUT_STREAM, BOOTSTRAP_STREAM = 0, 1, 2


def sample_rng(seed, index=0, stream=NOISE_STREAM):
    """Philox generator keyed by (seed, stream, index)."""
    key = np.random.SeedSequence([int(seed), int(stream), int(index)])
    return np.random.Generator(np.random.Philox(key))


def _grid_size(duration, dt):
    return int(np.floor(duration / dt + 1e-9)) + 1


def _draw(model, n_grid, dt, rng):
    """One sample: (static electron, static nuclear MHz, OU path)."""
    qs = model.quasi_static_sigma * rng.standard_normal()
    nuc = model.nuclear_sigma * MHZ_PER_KHZ * rng.standard_normal()
    path = np.zeros(n_grid)
    if model.ou is not None and model.ou.sigma > 0:
        xi = rng.standard_normal(n_grid)
        rho = np.exp(-dt / model.ou.tau_c)
        kick = model.ou.sigma * np.sqrt(1.0 - rho * rho)
        drive = kick * xi
        drive[0] = model.ou.sigma * xi[0]
        # x_j = rho x_{j-1} + kick xi_j, started from the stationary law
        path = lfilter([1.0], [1.0, -rho], drive)
    return qs, nuc, path


def sample_trajectory(model: NoiseModel, duration, dt, seed, index=0) -> NoiseTrajectory:
    """Electron detuning path: static offset plus exactly discretized OU."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not duration >= 0:
        raise ValueError("duration must be >= 0")
    n = _grid_size(duration, dt)
    qs, nuc, path = _draw(model, n, dt, sample_rng(seed, index))
    return NoiseTrajectory(np.arange(n) * dt, qs + path, int(seed), nuc)


def _cumulative(path, dt):
    """Running integral at grid points of a piecewise-constant (left value) path."""
    c = np.zeros(path.shape[:-1] + (path.shape[-1] + 1,))
    c[..., 1:] = np.cumsum(path, axis=-1) * dt
    return c


def _integral_to(cum, path, dt, t):
    j = min(int(np.floor(t / dt + 1e-12)), path.shape[-1] - 1)
    return cum[..., j] + path[..., j] * (t - j * dt)


def noisy_unitaries(seq, register, static, nuclear, paths=None, dt=DEFAULT_DT_US, t0=0.0):
    """Stack of sequence unitaries, one per noise sample.

    ``static`` and ``nuclear`` have shape ``(S,)`` (MHz); ``paths`` has shape
    ``(S, M)`` with value ``paths[:, j]`` on ``[j dt, (j + 1) dt)``. The
    sequence starts at absolute time ``t0`` on that grid.

    The electron detuning commutes with RF pulses and free evolution, so for
    those it enters as an exact phase on the |-1> levels. MW pulses are split
    at grid boundaries and propagated with the piecewise-constant detuning.
    """
    reg = as_register(register)
    static = np.asarray(static, dtype=float)
    nuclear = np.asarray(nuclear, dtype=float)
    s = static.shape[0]
    u = np.broadcast_to(np.eye(4, dtype=complex), (s, 4, 4)).copy()
    cum = None if paths is None else _cumulative(paths, dt)
    t = t0
    for e in seq.elements:
        d = e.duration
        if d == 0.0:
            continue
        if isinstance(e, MW):
            cuts = [t]
            if paths is not None:
                j0, j1 = int(np.floor(t / dt)) + 1, int(np.ceil((t + d) / dt))
                cuts += [j * dt for j in range(j0, j1) if t < j * dt < t + d]
            cuts.append(t + d)
            for a, b in zip(cuts[:-1], cuts[1:]):
                det = static
                if paths is not None:
                    j = min(int(np.floor(0.5 * (a + b) / dt)), paths.shape[1] - 1)
                    det = static + paths[:, j]
                u = element_propagator(e, reg.frame, reg.h4, t, det, nuclear, span=(a, b)) @ u
        else:
            phase = static * d
            if paths is not None:
                phase = phase + _integral_to(cum, paths, dt, t + d) - _integral_to(cum, paths, dt, t)
            step = element_propagator(e, reg.frame, reg.h4, t, 0.0, nuclear)
            step = np.broadcast_to(step, (s, 4, 4)).copy()
            step[:, 2:, :] *= np.exp(-1j * TWO_PI * phase)[:, None, None]
            u = step @ u
        t += d
    return u


def _chunk_sums(prefix, suffixes, reg, rho, model, seed, start, stop, dt):
    longest = prefix.total_duration + max(sf.total_duration for sf in suffixes)
    n_grid = _grid_size(longest, dt) + 1
    draws = [_draw(model, n_grid, dt, sample_rng(seed, k)) for k in range(start, stop)]
    static = np.array([d[0] for d in draws])
    nuclear = np.array([d[1] for d in draws])
    paths = None
    if model.ou is not None and model.ou.sigma > 0:
        paths = np.array([d[2] for d in draws])
    up = noisy_unitaries(prefix, reg, static, nuclear, paths, dt)
    mid = up @ rho @ np.swapaxes(up.conj(), -1, -2)
    out = []
    for sf in suffixes:
        us = noisy_unitaries(sf, reg, static, nuclear, paths, dt, t0=prefix.total_duration)
        out.append((us @ mid @ np.swapaxes(us.conj(), -1, -2)).sum(axis=0))
    return np.array(out)


def average_channels(prefix, suffixes, rho_in, model: NoiseModel, n_samples, seed,
                     register, threads=1, dt=DEFAULT_DT_US):
    """Noise-averaged output of ``prefix + suffix`` for each suffix.

    Each noise sample is evolved through ``prefix`` once and then continued,
    on the same noise realization, through every suffix. Equivalent to
    calling :func:`average_channel` on each concatenation with the same seed.
    """
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValueError("n_samples must be a positive integer")
    reg = as_register(register)
    rho = as_matrix(rho_in)
    suffixes = list(suffixes)
    if model.is_silent:
        up = compose(prefix, reg.frame, reg.h4)
        mid = up @ rho @ up.conj().T
        outs = []
        for sf in suffixes:
            us = compose(sf, reg.frame, reg.h4, prefix.total_duration)
            outs.append(DensityMatrix(clip_to_physical(us @ mid @ us.conj().T)))
        return outs
    bounds = [(i, min(i + CHUNK, n_samples)) for i in range(0, int(n_samples), CHUNK)]

    def work(b):
        return _chunk_sums(prefix, suffixes, reg, rho, model, seed, b[0], b[1], dt)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    total = np.zeros((len(suffixes), 4, 4), dtype=complex)
    for part in parts:
        total = total + part
    return [DensityMatrix(clip_to_physical(m / n_samples)) for m in total]


def average_channel(seq, rho_in, model: NoiseModel, n_samples, seed, register,
                    threads=1, dt=DEFAULT_DT_US) -> DensityMatrix:
    """Mean of ``U_k rho U_k^dag`` over ``n_samples`` noise realizations.

    Parameters
    ----------
    seq : PulseSequence
    rho_in : DensityMatrix or ndarray
    model : NoiseModel
    n_samples : int
    seed : int
    register : SpinRegisterParams or Register
    threads : int
        Worker threads; the result is identical for any value.
    dt : float
        OU grid step (us).
    """
    return average_channels(seq, [PulseSequence()], rho_in, model, n_samples, seed,
                            register, threads, dt)[0]


def electron_populations(rho):
    """(p0, p-1): populations of the electron |0> and |-1> manifolds."""
    m = as_matrix(rho)
    p = np.real(np.diag(m))
    return float(p[0] + p[1]), float(p[2] + p[3])


def expected_counts(rho, readout: Readout):
    p0, p1 = electron_populations(rho)
    return readout.shots * readout.photons_per_shot * (p0 + (1.0 - readout.contrast) * p1)


def simulate_readout(rho, model: NoiseModel, seed, index=0):
    """Poissonian photon count for ``readout.shots`` repetitions.

    The |-1> manifold is dimmer than |0> by the ODMR contrast.
    """
    lam = expected_counts(rho, model.readout)
    return int(sample_rng(seed, index, READOUT_STREAM).poisson(max(lam, 0.0)))


# ------------------------------------------------------------ calibration


class CalibrationError(RuntimeError):
    def __init__(self, msg, residuals):
        super().__init__(f"{msg}; residuals={list(np.round(residuals, 6))}")
        self.residuals = np.asarray(residuals)


def switching_edges(n_pulses, total):
    """Segment edges of the electron sign function for ideal instant pulses.

    ``n_pulses = 0`` is a Ramsey (free induction) window and ``1`` a Hahn echo.
    Larger counts place pulses at ``(k + 1/2) total / n``.
    """
    if n_pulses == 0:
        return np.array([0.0, total])
    if n_pulses == 1:
        return np.array([0.0, 0.5 * total, total])
    return np.concatenate([[0.0], (np.arange(n_pulses) + 0.5) / n_pulses * total, [total]])


def _ou_phase_variance(edges, sigma, tau_c):
    """Variance of 2 pi * integral of s(t) x(t) for an OU process x."""
    a, b = edges[:-1], edges[1:]
    n = len(a)
    s = (-1.0) ** np.arange(n)
    tc = tau_c
    length = b - a
    lo = np.minimum.outer(np.arange(n), np.arange(n))
    hi = np.maximum.outer(np.arange(n), np.arange(n))
    A, B, C, D = a[lo], b[lo], a[hi], b[hi]

    def ex(x):
        return np.exp(np.minimum(x, 0.0) / tc)

    cross = tc * tc * (ex(-(C - B)) - ex(-(D - B)) - ex(-(C - A)) + ex(-(D - A)))
    diag = 2.0 * tc * (length - tc * (1.0 - np.exp(-length / tc)))
    cross[np.arange(n), np.arange(n)] = diag
    return (TWO_PI * sigma) ** 2 * float(s @ cross @ s)


def phase_variance(n_pulses, total, quasi_static_sigma, ou: Optional[OUProcess]):
    edges = switching_edges(n_pulses, total)
    s = (-1.0) ** np.arange(len(edges) - 1)
    var = (TWO_PI * quasi_static_sigma * np.dot(s, np.diff(edges))) ** 2
    if ou is not None and ou.sigma > 0:
        var += _ou_phase_variance(edges, ou.sigma, ou.tau_c)
    return var


def predicted_coherence(n_pulses, total, quasi_static_sigma, ou=None):
    """Gaussian-phase coherence exp(-var/2) for ideal instantaneous pulses."""
    return float(np.exp(-0.5 * phase_variance(n_pulses, total, quasi_static_sigma, ou)))


def predicted_t2(n_pulses, quasi_static_sigma, ou=None, t_max=1e5):
    """Total time at which the predicted coherence falls to 1/e."""
    f = lambda t: phase_variance(n_pulses, t, quasi_static_sigma, ou) - 2.0
    if f(t_max) < 0:
        return np.inf
    return float(brentq(f, 1e-6, t_max, xtol=1e-12))


@dataclass(frozen=True)
class OUCalibration:
    sigma: float
    tau_c: float
    quasi_static_sigma: float
    predicted: dict
    residuals: tuple

    @property
    def ou(self):
        return OUProcess(self.sigma, self.tau_c)

    def model(self, base: Optional[NoiseModel] = None):
        base = NoiseModel() if base is None else base
        return base.replace(quasi_static_sigma=self.quasi_static_sigma, ou=self.ou)


def calibrate_ou(t2star, t2_hahn, t2_dd=None, n_dd=16, rtol=1e-6):
    """Fit bath parameters to measured coherence times.

    With only ``t2star`` and ``t2_hahn`` the bath is a pure OU process whose
    ``sigma`` and ``tau_c`` reproduce both times. Passing ``t2_dd`` (the 1/e
    time of an ``n_dd``-pulse train) adds a quasi-static component and fits
    all three parameters.

    Times come from the Gaussian-phase filter formula with instantaneous
    pulses, so the fit is deterministic.
    """
    if not (t2star > 0 and t2_hahn > t2star):
        raise ValueError("need t2_hahn > t2star > 0")
    if t2_dd is not None and not t2_dd > t2_hahn:
        raise ValueError("need t2_dd > t2_hahn")
    targets = [(0, t2star), (1, t2_hahn)]
    if t2_dd is not None:
        targets.append((int(n_dd), t2_dd))

    def unpack(x):
        if t2_dd is None:
            return 0.0, np.exp(x[0]), np.exp(x[1])
        return np.exp(x[0]), np.exp(x[1]), np.exp(x[2])

    def resid(x):
        qs, so, tc = unpack(x)
        return [np.log(predicted_t2(n, qs, OUProcess(so, tc)) / t) for n, t in targets]

    s0 = sigma_from_t2star(t2star)
    x0 = [np.log(s0), np.log(t2star)] if t2_dd is None else \
        [np.log(0.8 * s0), np.log(0.5 * s0), np.log(t2star)]
    fit = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    res = np.asarray(fit.fun)
    if not np.all(np.isfinite(res)) or np.max(np.abs(res)) > rtol:
        raise CalibrationError("no bath parameters reproduce the targets", res)
    qs, so, tc = unpack(fit.x)
    ou = OUProcess(float(so), float(tc))
    predicted = {n: predicted_t2(n, qs, ou) for n in (0, 1, 2, 4, 8, 16)}
    log.info("calibrated bath: qs=%.5g MHz, ou sigma=%.5g MHz, tau_c=%.5g us", qs, so, tc)
    return OUCalibration(float(so), float(tc), float(qs), predicted, tuple(float(r) for r in res))
