"""Pulse elements, rotating-frame propagators and composite sequence builders.

All propagators act on the 4-level working subspace ordered
``|0,up>, |0,dn>, |-1,up>, |-1,dn>`` and are expressed in a rotating frame
``G`` whose levels sit at ``[0, n, e, e + n]`` above ``|0,up>`` (``e`` and
``n`` are the frame's electron and nuclear references).

Drives are treated in the rotating-wave approximation on the secular
(diagonal) part of the working-subspace Hamiltonian. A drive's ``phase`` is
its phase in frame ``G`` at the midpoint of the element, so a resonant pulse
acts in ``G`` as ``free(T/2) @ rotation(phase) @ free(T/2)`` regardless of
where it sits in a sequence.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Optional

import numpy as np

from .spincore import SpinRegisterParams, subspace_hamiltonian
from .units import MHZ_PER_KHZ, TWO_PI

log = logging.getLogger(__name__)

MW_TRANSITIONS = {"MW1": ((0, 2),), "MW2": ((1, 3),), "broadband": ((0, 2), (1, 3))}
RF_PAIRS = ((0, 1), (2, 3))
DEFAULT_GUARD_BAND_MHZ = 1.0


class SequenceError(ValueError):
    """Invalid pulse element or sequence parameters."""


class OffResonantRFWarning(UserWarning):
    """RF carrier far from both nuclear transitions."""


def _check_duration(duration):
    if not np.isfinite(duration) or duration < 0:
        raise SequenceError(f"duration must be finite and >= 0, got {duration}")


@dataclass(frozen=True)
class MW:
    """Microwave pulse on MW1, MW2 or both. ``rabi`` and ``detuning`` in MHz."""

    transition: str
    rabi: float
    duration: float
    phase: float = 0.0
    detuning: float = 0.0

    def __post_init__(self):
        if self.transition not in MW_TRANSITIONS:
            raise SequenceError(f"unknown MW transition {self.transition!r}")
        _check_duration(self.duration)
        if not np.isfinite(self.rabi) or self.rabi < 0:
            raise SequenceError("MW rabi must be finite and >= 0")
        if not (np.isfinite(self.phase) and np.isfinite(self.detuning)):
            raise SequenceError("MW phase and detuning must be finite")


@dataclass(frozen=True)
class RF:
    """Radio-frequency pulse. ``carrier`` in MHz, ``rabi`` in kHz."""

    carrier: float
    rabi: float
    duration: float
    phase: float = 0.0

    def __post_init__(self):
        _check_duration(self.duration)
        if not np.isfinite(self.rabi) or self.rabi < 0:
            raise SequenceError("RF rabi must be finite and >= 0")
        if not (np.isfinite(self.phase) and np.isfinite(self.carrier)):
            raise SequenceError("RF phase and carrier must be finite")


@dataclass(frozen=True)
class Delay:
    duration: float

    def __post_init__(self):
        _check_duration(self.duration)


@dataclass(frozen=True)
class PulseSequence:
    elements: tuple = ()
    label: str = ""
    info: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "info", MappingProxyType(dict(self.info)))
        for e in self.elements:
            if not isinstance(e, (MW, RF, Delay)):
                raise SequenceError(f"not a pulse element: {e!r}")

    @property
    def total_duration(self):
        return float(sum(e.duration for e in self.elements))

    @property
    def metadata(self):
        meta = {"total_duration": self.total_duration, "label": self.label}
        meta.update(self.info)
        return meta

    def __len__(self):
        return len(self.elements)

    def __add__(self, other):
        label = "+".join(s for s in (self.label, other.label) if s)
        return PulseSequence(self.elements + other.elements, label)


@dataclass(frozen=True)
class RotatingFrame:
    """Frame rotating at ``electron_ref`` (MHz) and ``nuclear_ref`` (MHz).

    ``nuclear_ref`` is the frame energy of ``dn`` above ``up``; it carries the
    sign of that energy difference.
    """

    electron_ref: float
    nuclear_ref: float
    phase_origin: float = 0.0

    def __post_init__(self):
        vals = (self.electron_ref, self.nuclear_ref, self.phase_origin)
        if not all(np.isfinite(v) for v in vals):
            raise SequenceError("frame frequencies must be finite")
        if self.electron_ref < 0:
            raise SequenceError("electron_ref must be >= 0")

    def levels(self, origin=0.0):
        e, n = self.electron_ref, self.nuclear_ref
        return origin + np.array([0.0, n, e, e + n])

    @classmethod
    def from_subspace(cls, h4, phase_origin=0.0):
        """Frame at the mean electron and mean nuclear transition frequencies.

        In this frame the secular hyperfine term is the only residual, so
        ``(|0,up> + |-1,dn>)/sqrt(2)`` is stationary and electron flips
        refocus the nuclear precession.
        """
        en = np.real(np.diag(h4))
        f1, f2 = en[2] - en[0], en[3] - en[1]
        w0, w1 = en[1] - en[0], en[3] - en[2]
        return cls(0.5 * (f1 + f2), 0.5 * (w0 + w1), phase_origin)


@dataclass(frozen=True, eq=False)
class Register:
    """Parameters bundled with their working-subspace matrix and frame."""

    params: SpinRegisterParams
    h4: np.ndarray
    frame: RotatingFrame

    @classmethod
    def from_params(cls, params):
        h4 = subspace_hamiltonian(params)
        return cls(params, h4, RotatingFrame.from_subspace(h4))

    @property
    def energies(self):
        return np.real(np.diag(self.h4))

    @property
    def mw1(self):
        en = self.energies
        return en[2] - en[0]

    @property
    def mw2(self):
        en = self.energies
        return en[3] - en[1]

    @property
    def rf0(self):
        """Nuclear transition frequency with the electron in |0>."""
        en = self.energies
        return en[1] - en[0]

    @property
    def rf1(self):
        """Nuclear transition frequency with the electron in |-1>."""
        en = self.energies
        return en[3] - en[2]

    def precession(self):
        """Nuclear precession rates (MHz) in the frame, for electron |0> and |-1>."""
        return precession_rates(self.frame, self.h4)


def as_register(params_or_register):
    if isinstance(params_or_register, Register):
        return params_or_register
    return Register.from_params(params_or_register)


def precession_rates(frame, h4):
    en = np.real(np.diag(h4))
    resid = en - frame.levels(en[0])
    return resid[1] - resid[0], resid[3] - resid[2]


def _drives(e, energies):
    """(a, b, rabi MHz, carrier MHz, phase) for every driven level pair."""
    if isinstance(e, MW):
        return [(a, b, e.rabi, energies[b] - energies[a] + e.detuning, e.phase)
                for a, b in MW_TRANSITIONS[e.transition]]
    if isinstance(e, RF):
        return [(a, b, e.rabi * MHZ_PER_KHZ, e.carrier, e.phase) for a, b in RF_PAIRS]
    return []


def _expm_herm(h, t):
    """exp(-2 pi i h t) for a stack of Hermitian matrices."""
    w, v = np.linalg.eigh(h)
    ph = np.exp(-1j * TWO_PI * w * t)
    return (v * ph[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def _check_rf_guard(e, energies, guard_band):
    w0 = energies[1] - energies[0]
    w1 = energies[3] - energies[2]
    if min(abs(e.carrier - w0), abs(e.carrier - w1)) > guard_band:
        msg = (f"RF carrier {e.carrier:.6g} MHz is more than {guard_band} MHz from "
               f"both nuclear transitions ({w0:.6g}, {w1:.6g} MHz)")
        log.warning(msg)
        warnings.warn(msg, OffResonantRFWarning, stacklevel=3)
        return True
    return False


def element_propagator(e, frame: RotatingFrame, h4, t0=0.0, detuning=0.0,
                       nuclear_detuning=0.0, span=None,
                       guard_band=DEFAULT_GUARD_BAND_MHZ):
    """Propagator of one element in the rotating frame.

    Parameters
    ----------
    e : MW, RF or Delay
    frame : RotatingFrame
    h4 : ndarray
        4x4 working-subspace Hamiltonian (MHz). Only its diagonal enters.
    t0 : float
        Absolute start time of the element (us).
    detuning, nuclear_detuning : float or ndarray
        Extra energy (MHz) added to the electron |-1> levels and to the
        nuclear ``dn`` levels. Arrays of shape ``(S,)`` give a stack of
        ``S`` propagators.
    span : tuple, optional
        Absolute ``(start, stop)`` sub-interval of the element to propagate.
        Defaults to the whole element.

    Returns
    -------
    ndarray
        ``(4, 4)`` unitary, or ``(S, 4, 4)`` if a detuning array was given.
    """
    energies = np.real(np.diag(h4))
    de = np.asarray(detuning, dtype=float)
    dn = np.asarray(nuclear_detuning, dtype=float)
    batch = np.broadcast_shapes(de.shape, dn.shape)
    shift = np.zeros(batch + (4,))
    shift[..., 2:] += de[..., None]
    shift[..., [1, 3]] += dn[..., None]

    s0, s1 = (t0, t0 + e.duration) if span is None else span
    dt = s1 - s0
    g = frame.levels(energies[0])
    drives = _drives(e, energies)
    if isinstance(e, RF):
        _check_rf_guard(e, energies, guard_band)

    if not drives:
        ph = np.exp(-1j * TWO_PI * (energies + shift - g) * dt)
        return ph[..., :, None] * np.eye(4)

    f = g.copy()
    for a, b, _, carrier, _ in drives:
        f[b] = f[a] + carrier
    t_ref = t0 + 0.5 * e.duration - frame.phase_origin
    h = np.zeros(batch + (4, 4), dtype=complex)
    idx = np.arange(4)
    h[..., idx, idx] = energies + shift - f
    for a, b, rabi, carrier, phase in drives:
        p = phase - TWO_PI * (carrier - (g[b] - g[a])) * t_ref
        c = 0.5 * rabi * np.exp(-1j * p)
        h[..., b, a] += c
        h[..., a, b] += np.conj(c)
    u = _expm_herm(h, dt)
    gf = g - f
    left = np.exp(1j * TWO_PI * gf * (s1 - frame.phase_origin))
    right = np.exp(-1j * TWO_PI * gf * (s0 - frame.phase_origin))
    return left[:, None] * u * right[None, :]


def compose(seq, frame, h4, t0=0.0, detuning=0.0, nuclear_detuning=0.0):
    """Ordered product of element propagators (last element leftmost)."""
    elements = seq.elements if isinstance(seq, PulseSequence) else tuple(seq)
    shape = np.broadcast_shapes(np.shape(detuning), np.shape(nuclear_detuning))
    u = np.broadcast_to(np.eye(4, dtype=complex), shape + (4, 4)).copy()
    t = t0
    for e in elements:
        if e.duration == 0.0:
            continue
        u = element_propagator(e, frame, h4, t, detuning, nuclear_detuning) @ u
        t += e.duration
    return u


def sequence_unitary(seq, params_or_register):
    reg = as_register(params_or_register)
    return compose(seq, reg.frame, reg.h4)


# ---------------------------------------------------------------- builders


def mw_rotation(angle, params, transition="broadband", phase=0.0, rabi=None):
    """Resonant MW pulse rotating by ``angle`` at the register's electron Rabi rate."""
    rabi = params.rabi_e if rabi is None else rabi
    return MW(transition, rabi, angle / (TWO_PI * rabi), phase)


def _pi_half_pair(params, transition):
    return mw_rotation(np.pi / 2, params, transition), mw_rotation(np.pi / 2, params, transition, np.pi)


def build_ramsey(delay, params, transition="broadband", fringe_mhz=0.0):
    """pi/2 - delay - pi/2, with the second pulse's phase advanced by
    ``2 pi fringe_mhz delay`` so that the fringes oscillate at ``fringe_mhz``
    in addition to any free precession in the frame."""
    first, last = _pi_half_pair(params, transition)
    last = MW(last.transition, last.rabi, last.duration, np.pi + TWO_PI * fringe_mhz * delay)
    return PulseSequence((first, Delay(delay), last), "ramsey",
                         {"delay": delay, "transition": transition})


def _centred_windows(n_pulses, tau, t_edge, t_pi):
    """Delays that put ``tau`` (ends) and ``2 tau`` (middle) between pulse centres.

    ``t_edge`` is the duration of the outer pulses (0 if absent). Measuring
    from centres balances the free precession on either side of every flip,
    so any static detuning refocuses, including during the pulses themselves.
    """
    end = tau - 0.5 * (t_edge + t_pi)
    mid = 2 * tau - t_pi
    if end < -1e-12 or (n_pulses > 1 and mid < -1e-12):
        raise SequenceError(f"tau = {tau} us is shorter than the pulses it separates")
    end, mid = max(end, 0.0), max(mid, 0.0)
    return [end] + [mid] * (n_pulses - 1) + [end]


def _echo_train(n_pulses, tau, params, pi_phase, with_readout_pulses, label):
    pi = mw_rotation(np.pi, params, "broadband", pi_phase)
    first, last = _pi_half_pair(params, "broadband")
    t_edge = first.duration if with_readout_pulses else 0.0
    windows = _centred_windows(n_pulses, tau, t_edge, pi.duration)
    core = [Delay(windows[0])]
    for w in windows[1:]:
        core += [pi, Delay(w)]
    if with_readout_pulses:
        core = [first] + core + [last]
    info = {"n_pulses": int(n_pulses), "tau": tau, "free_evolution": 2 * n_pulses * tau}
    return PulseSequence(core, label, info)


def build_hahn(tau, params, pi_phase=np.pi / 2, with_readout_pulses=True):
    """Single-refocusing echo pi/2 - tau - pi - tau - pi/2 (N = 1).

    ``tau`` runs between pulse centres.
    """
    if not tau >= 0:
        raise SequenceError("tau must be >= 0")
    return _echo_train(1, tau, params, pi_phase, with_readout_pulses, "hahn")


def build_dd(n_pulses, tau, params, pi_phase=np.pi / 2, with_readout_pulses=True):
    """Dynamical decoupling: pi/2, (tau, pi, 2tau, pi, tau) x N/2, pi/2.

    Spacings are measured between pulse centres, so the electron spends
    ``2 N tau`` between the two pi/2 centres. The trailing pi/2 has phase pi:
    an unperturbed register returns to electron |0> and ``2 P(0) - 1`` reads
    the echo coherence.
    """
    if int(n_pulses) != n_pulses or n_pulses < 2 or n_pulses % 2:
        raise SequenceError(f"n_pulses must be even and >= 2, got {n_pulses}")
    if not tau >= 0:
        raise SequenceError("tau must be >= 0")
    return _echo_train(int(n_pulses), tau, params, pi_phase, with_readout_pulses, "dd")


def build_decoupling(n_pulses, tau, params):
    """Hahn echo for ``n_pulses == 1``, otherwise the DD train."""
    if n_pulses == 1:
        return build_hahn(tau, params)
    return build_dd(n_pulses, tau, params)


def _spectator_shift(rabi, detuning):
    """Change of a driven-but-detuned nuclear precession rate (MHz).

    An RF drive at Rabi rate ``rabi`` detuned by ``detuning`` from a
    transition dresses it: the levels split by the generalized Rabi rate
    instead of by the bare detuning.
    """
    return np.sign(detuning) * (np.hypot(rabi, detuning) - abs(detuning))


def synchronized_rf_duration(angle, window, detuning):
    """Longest RF length <= ``window`` rotating a resonant nucleus by
    ``angle`` while a transition detuned by ``detuning`` (MHz) completes an
    integer number of generalized Rabi cycles."""
    a = angle / TWO_PI
    d = abs(detuning)
    if d == 0:
        return window
    m = np.floor(np.hypot(d * window, a) + 1e-12)
    if m < 1 or m * m <= a * a:
        return window
    return float(np.sqrt(m * m - a * a) / d)


def _ddrf_windows(n_units):
    """Window lengths in units of tau between consecutive pi pulses."""
    half = n_units // 2
    return [1] + [2] * (half - 1) + [1]


def ddrf_from_segments(n_units, tau, segment_angles, target_phases, params,
                       rf_duration=None, compensate=True, phase_offset=0.0,
                       pi_phase=np.pi / 2, label="ddrf"):
    """DD skeleton with one RF segment in every tau half-window.

    Parameters
    ----------
    n_units : int
        Number of tau units; must be divisible by 4. The skeleton has
        ``n_units // 2`` electron pi pulses and ``n_units`` RF segments.
    tau : float
        Half-window length (us).
    segment_angles, target_phases : sequence of float
        Per-segment nuclear rotation angle and target axis phase (rad),
        expressed for the branch that is resonant during that segment.
    rf_duration : float, optional
        RF segment length, centered in its half-window. By default each
        segment takes the longest length within ``tau`` for which the
        detuned spectator branch completes whole generalized Rabi cycles,
        so the off-resonant drive leaves it unrotated.
    compensate : bool
        If True, each segment's phase is advanced by the precession its
        resonant branch has accumulated in the frame up to the segment
        center. If False, the RF keeps a constant lab phase.
    """
    reg = as_register(params)
    p = reg.params
    if int(n_units) != n_units or n_units < 0 or n_units % 4:
        raise SequenceError(f"n_units must be a non-negative multiple of 4, got {n_units}")
    n_units = int(n_units)
    if n_units == 0:
        return PulseSequence((), label, {"n_units": 0, "tau": tau})
    if len(segment_angles) != n_units or len(target_phases) != n_units:
        raise SequenceError("need one angle and one phase per RF segment")
    nu0, nu1 = reg.precession()
    carrier = reg.rf1
    spectator_detuning = reg.rf0 - carrier
    if rf_duration is None:
        durations = [synchronized_rf_duration(a, tau, spectator_detuning) for a in segment_angles]
    else:
        durations = [rf_duration] * n_units
    for d in durations:
        if d > tau + 1e-12 or d <= 0:
            raise SequenceError(f"RF segment of {d} us does not fit a {tau} us window")
    pi = mw_rotation(np.pi, p, "broadband", pi_phase)
    # precession accumulated by each branch; branch 1 starts with electron in |-1>
    acc = {0: 0.0, 1: 0.0}
    state = {0: 0, 1: 1}
    t = 0.0
    elements = []

    def advance(dt, resonant=None, spectator_shift=0.0):
        for b in (0, 1):
            rate = nu1 if state[b] else nu0
            if resonant is not None and b != resonant:
                rate += spectator_shift
            acc[b] += TWO_PI * rate * dt

    k = 0
    for w, units in enumerate(_ddrf_windows(n_units)):
        if w > 0:
            advance(0.5 * pi.duration)
            for b in (0, 1):
                state[b] ^= 1
            advance(0.5 * pi.duration)
            elements.append(pi)
            t += pi.duration
        resonant = 1 if w % 2 == 0 else 0
        for _ in range(units):
            rf_duration = durations[k]
            gap = 0.5 * (tau - rf_duration)
            if gap > 0:
                elements.append(Delay(gap))
                advance(gap)
                t += gap
            rabi = segment_angles[k] / (TWO_PI * rf_duration)
            stark = _spectator_shift(rabi, spectator_detuning)
            advance(0.5 * rf_duration, resonant, stark)
            t_c = t + 0.5 * rf_duration
            if compensate:
                phase = target_phases[k] + acc[resonant] + phase_offset
            else:
                phase = phase_offset + TWO_PI * (carrier - reg.frame.nuclear_ref) * (t_c - reg.frame.phase_origin)
            elements.append(RF(carrier, 1e3 * rabi, rf_duration, float(np.mod(phase, TWO_PI))))
            advance(0.5 * rf_duration, resonant, stark)
            t += rf_duration
            if gap > 0:
                elements.append(Delay(gap))
                advance(gap)
                t += gap
            k += 1
    frame_advance = float(np.angle(np.exp(1j * acc[1])))
    info = {"n_units": n_units, "tau": tau, "rf_duration": min(durations),
            "compensate": compensate, "nuclear_frame_advance": frame_advance}
    return PulseSequence(elements, label, info)


def build_ddrf(n_units, tau, theta_total, conditional, params, rf_duration=None,
               compensate=True, phase_offset=0.0):
    """DDRF gate: C_eROT(+-theta) if ``conditional`` else ROT(theta).

    Each electron branch is resonant in ``n_units / 2`` segments, so every
    segment rotates by ``2 theta / n_units``. For the conditional gate the
    branch starting in electron |0> is driven about the opposite axis.
    """
    if not 0 < theta_total <= TWO_PI + 1e-12:
        raise SequenceError("theta_total must lie in (0, 2 pi]")
    n_units = int(n_units)
    if n_units % 4:
        raise SequenceError(f"n_units must be a multiple of 4, got {n_units}")
    angles, phases = [], []
    for w, units in enumerate(_ddrf_windows(n_units) if n_units else []):
        branch = 1 if w % 2 == 0 else 0
        for _ in range(units):
            angles.append(2.0 * theta_total / n_units)
            phases.append(np.pi if (conditional and branch == 0) else 0.0)
    seq = ddrf_from_segments(n_units, tau, angles, phases, params, rf_duration,
                             compensate, phase_offset,
                             label="ddrf-cond" if conditional else "ddrf-uncond")
    info = dict(seq.info, theta_total=theta_total, conditional=bool(conditional))
    return PulseSequence(seq.elements, seq.label, info)


def nuclear_frame_shift(advance):
    """Diagonal unitary taking an operator from frame ``G`` into the nuclear
    frame advanced by ``advance`` (rad), as reported by the DDRF builders."""
    return np.diag(np.exp(0.5j * advance * np.array([-1.0, 1.0, -1.0, 1.0])))


def build_rot_crot(n_units, tau, theta, params, rf_duration=None):
    """C_eROT(+-theta) followed by ROT(theta).

    The second train is phased in the nuclear frame the first one leaves
    behind, so in the tracked frame (see :func:`nuclear_frame_shift`) the
    pair is a rotation by 0 for electron |0> and 2 theta for |-1>.
    """
    first = build_ddrf(n_units, tau, theta, True, params, rf_duration)
    advance = first.info.get("nuclear_frame_advance", 0.0)
    second = build_ddrf(n_units, tau, theta, False, params, rf_duration, phase_offset=advance)
    total = advance + second.info.get("nuclear_frame_advance", 0.0)
    info = {"n_units": int(n_units), "tau": tau, "theta": theta, "nuclear_frame_advance": total}
    return PulseSequence(first.elements + second.elements, "rot-crot", info)


def build_controlled_flip(n_units, tau, params, rf_duration=None, theta=np.pi / 2):
    """One DDRF train realizing ROT(theta) C_eROT(+-theta).

    The first half of the segments carries conditional phases and the second
    half unconditional ones, with ``4 theta / n_units`` per segment, so the
    electron-|-1> branch rotates by ``2 theta`` and the |0> branch not at all.
    """
    n_units = int(n_units)
    if n_units < 4 or n_units % 4:
        raise SequenceError(f"n_units must be a positive multiple of 4, got {n_units}")
    branches = []
    for w, units in enumerate(_ddrf_windows(n_units)):
        branches += [1 if w % 2 == 0 else 0] * units
    angles, phases = [], []
    for k, b in enumerate(branches):
        angles.append(4.0 * theta / n_units)
        conditional_half = k < n_units // 2
        phases.append(np.pi if (conditional_half and b == 0) else 0.0)
    return ddrf_from_segments(n_units, tau, angles, phases, params, rf_duration,
                              label="ddrf-flip")


def _block_phase(u, block):
    i = 2 * block
    return np.angle(u[i + 1, i + 1] * np.conj(u[i, i]))


def selective_rf(angle, params, manifold=-1, phase=0.0, rabi=None, window=0.08,
                 no_slower=False):
    """RF pulse resonant with one electron manifold, rotating by ``angle``.

    The Rabi rate is trimmed from its nominal value (``params.rabi_n`` unless
    given, in MHz) to the nearest value at which the spectator manifold's
    nuclear spin ends with no relative phase, so the off-resonant drive
    leaves that manifold unchanged. With ``no_slower`` only rates at or
    above the nominal one are accepted, so the pulse never outgrows its slot.
    """
    reg = as_register(params)
    nominal = reg.params.rabi_n if rabi is None else rabi
    carrier = reg.rf1 if manifold == -1 else reg.rf0
    spectator = 0 if manifold == -1 else 1

    def residual(r):
        e = RF(carrier, 1e3 * r, angle / (TWO_PI * r), phase)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OffResonantRFWarning)
            u = element_propagator(e, reg.frame, reg.h4)
        return _block_phase(u, spectator)

    grid = nominal * np.linspace(1 - window, 1 + window, 801)
    res = np.array([residual(r) for r in grid])
    roots = []
    for i in range(len(grid) - 1):
        a, b = res[i], res[i + 1]
        if a == 0.0:
            roots.append(grid[i])
        elif a * b < 0 and abs(a - b) < np.pi:
            lo, hi = grid[i], grid[i + 1]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if residual(lo) * residual(mid) <= 0:
                    hi = mid
                else:
                    lo = mid
            roots.append(0.5 * (lo + hi))
    if no_slower:
        roots = [x for x in roots if x >= nominal]
    r = min(roots, key=lambda x: abs(x - nominal)) if roots else nominal
    if not roots:
        log.warning("no spectator-neutral RF rate near %.6g MHz; using nominal", nominal)
    return RF(carrier, 1e3 * r, angle / (TWO_PI * r), phase)


def cnot_sequences(direction, params):
    """CNOT gates of the register.

    ``"e-controls-n"``: RF pi resonant only in the electron |-1> manifold.
    ``"n-controls-e"``: MW1 pi, flipping the electron only for nuclear up.
    """
    reg = as_register(params)
    if direction == "e-controls-n":
        return PulseSequence((selective_rf(np.pi, reg, -1),), "cnot-e-n")
    if direction == "n-controls-e":
        return PulseSequence((mw_rotation(np.pi, reg.params, "MW1"),), "cnot-n-e")
    raise SequenceError(f"unknown CNOT direction {direction!r}")


def _rephase_first(seq, reg, target_index=3):
    """Shift the first element's phase so the final |0,up>/target amplitude
    ratio is real and positive when starting from |0,up>."""
    psi = compose(seq, reg.frame, reg.h4)[:, 0]
    chi = np.angle(psi[target_index] * np.conj(psi[0]))
    first = seq.elements[0]
    first = MW(first.transition, first.rabi, first.duration,
               float(np.mod(first.phase + chi, TWO_PI)), first.detuning)
    return PulseSequence((first,) + seq.elements[1:], seq.label, seq.info)


def ddrf_tau_for_duration(n_units, total_duration, params):
    """tau that makes MW1 pi/2 + DDRF(n_units) last ``total_duration``."""
    t_half = 0.5 * params.t_pi_e
    t_pi = params.t_pi_e
    return (total_duration - t_half - 0.5 * n_units * t_pi) / n_units


def build_bell_prep(variant, params, total_duration: Optional[float] = 14.7,
                    n_units=None, tau=None, rf_duration=None):
    """Sequence taking |0,up> to (|0,up> + |-1,dn>)/sqrt(2).

    ``variant="naive"`` uses MW1 pi/2 followed by a selective RF pi whose
    Rabi rate is set so the whole sequence lasts ``total_duration``.
    ``variant="ddrf"`` replaces the RF pi by a decoupled controlled flip with
    ``n_units`` RF segments; ``tau`` is solved from ``total_duration`` when
    not given.
    """
    reg = as_register(params)
    p = reg.params
    half = mw_rotation(np.pi / 2, p, "MW1")
    if variant == "naive":
        if total_duration is None:
            rabi = p.rabi_n
        else:
            t_rf = total_duration - half.duration
            if t_rf <= 0:
                raise SequenceError("total duration shorter than the MW1 pi/2 pulse")
            rabi = 0.5 / t_rf
        rf = selective_rf(np.pi, reg, -1, rabi=rabi, window=0.02,
                          no_slower=total_duration is not None)
        elements = (half, rf)
        if total_duration is not None:
            # the trimmed rate is a little faster; idle out the remainder
            pad = total_duration - half.duration - rf.duration
            elements += (Delay(max(pad, 0.0)),)
        seq = PulseSequence(elements, "bell-naive", {"variant": "naive"})
    elif variant == "ddrf":
        if n_units is None:
            raise SequenceError("ddrf variant needs n_units")
        if tau is None:
            if total_duration is None:
                raise SequenceError("ddrf variant needs tau or total_duration")
            tau = ddrf_tau_for_duration(n_units, total_duration, p)
        elif total_duration is not None:
            implied = half.duration + 0.5 * n_units * p.t_pi_e + n_units * tau
            if abs(implied - total_duration) > 1e-9:
                raise SequenceError(
                    f"tau={tau} gives {implied:.9g} us, not the requested {total_duration} us")
        if tau <= 0:
            raise SequenceError(f"no positive tau fits n_units={n_units} in {total_duration} us")
        flip = build_controlled_flip(n_units, tau, reg, rf_duration)
        seq = PulseSequence((half,) + flip.elements, "bell-ddrf",
                            {"variant": "ddrf", "n_units": int(n_units), "tau": tau})
    else:
        raise SequenceError(f"unknown Bell variant {variant!r}")
    return _rephase_first(seq, reg)


# ----------------------------------------------------------- serialization


def element_to_dict(e):
    if isinstance(e, MW):
        return {"type": "MW", "transition": e.transition, "rabi": e.rabi,
                "phase": e.phase, "duration": e.duration, "detuning": e.detuning}
    if isinstance(e, RF):
        return {"type": "RF", "carrier": e.carrier, "rabi": e.rabi,
                "phase": e.phase, "duration": e.duration}
    return {"type": "Delay", "duration": e.duration}


def element_from_dict(d):
    kind = d.get("type")
    try:
        if kind == "MW":
            return MW(d["transition"], float(d["rabi"]), float(d["duration"]),
                      float(d.get("phase", 0.0)), float(d.get("detuning", 0.0)))
        if kind == "RF":
            return RF(float(d["carrier"]), float(d["rabi"]), float(d["duration"]),
                      float(d.get("phase", 0.0)))
        if kind == "Delay":
            return Delay(float(d["duration"]))
    except KeyError as exc:
        raise SequenceError(f"element {d!r} is missing {exc}") from None
    raise SequenceError(f"unknown element type {kind!r}")


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def sequence_to_json(seq: PulseSequence) -> str:
    doc = {"metadata": {k: _plain(v) for k, v in seq.metadata.items()},
           "elements": [element_to_dict(e) for e in seq.elements]}
    return json.dumps(doc, sort_keys=True)


def sequence_from_json(text: str) -> PulseSequence:
    doc = json.loads(text)
    meta = dict(doc.get("metadata", {}))
    elements = [element_from_dict(d) for d in doc.get("elements", [])]
    total = meta.pop("total_duration", None)
    label = meta.pop("label", "")
    seq = PulseSequence(elements, label, meta)
    if total is not None and abs(seq.total_duration - total) > 1e-9:
        raise SequenceError("metadata total_duration disagrees with the elements")
    return seq
