"""Electron-conditioned nuclear rotations extracted from 4x4 unitaries."""

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
LEAKAGE_LIMIT = 0.01
_AXIS_TOL = 1e-9


@dataclass(frozen=True)
class AxisAngle:
    axis: tuple
    angle: float

    def matrix(self):
        n = np.asarray(self.axis, dtype=float)
        gen = sum(c * p for c, p in zip(n, PAULI))
        return np.cos(self.angle / 2) * np.eye(2) - 1j * np.sin(self.angle / 2) * gen


@dataclass(frozen=True)
class ConditionalRotation:
    """Nuclear rotations for electron |0> (``r0``) and |-1> (``r1``)."""

    r0: AxisAngle
    r1: AxisAngle
    leakage: float
    global_phase_diff: float

    @property
    def reliable(self):
        return self.leakage <= LEAKAGE_LIMIT

    @property
    def axis_dot(self):
        return float(np.dot(self.r0.axis, self.r1.axis))

    def to_dict(self):
        return {
            "r0": {"axis": list(self.r0.axis), "angle": self.r0.angle},
            "r1": {"axis": list(self.r1.axis), "angle": self.r1.angle},
            "leakage": self.leakage,
            "global_phase_diff": self.global_phase_diff,
            "reliable": self.reliable,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def nearest_unitary(m):
    """Unitary factor of the polar decomposition (via SVD)."""
    w, _, vh = np.linalg.svd(m)
    return w @ vh


def su2_axis_angle(u):
    """Axis-angle of a 2x2 unitary, ignoring its global phase.

    Returns the projective SU(2) element's phase as well. The angle lies in
    [0, pi]; at angle pi (and angle 0) the axis is sign-normalized so its
    first nonzero component is positive.
    """
    v = nearest_unitary(u)
    det = np.linalg.det(v)
    phase = 0.5 * np.angle(det)
    s = v * np.exp(-1j * phase)
    # s = cos(a/2) I - i sin(a/2) n.sigma, defined up to an overall sign
    c = 0.5 * np.real(np.trace(s))
    vec = np.array([0.5 * np.real(1j * np.trace(s @ p)) for p in PAULI])
    if c < 0:
        c, vec, phase = -c, -vec, phase + np.pi
    sin_half = np.linalg.norm(vec)
    angle = 2.0 * np.arctan2(sin_half, c)
    if sin_half < 1e-12:
        return AxisAngle((0.0, 0.0, 1.0), 0.0), phase
    axis = vec / sin_half
    if abs(angle - np.pi) < _AXIS_TOL:
        nz = np.flatnonzero(np.abs(axis) > _AXIS_TOL)
        if nz.size and axis[nz[0]] < 0:
            axis = -axis
    return AxisAngle(tuple(float(x) for x in axis), float(angle)), float(phase)


def conditional_decompose(u) -> ConditionalRotation:
    """Split ``u`` into nuclear rotations conditioned on the electron state."""
    u = np.asarray(u)
    b0, b1 = u[:2, :2], u[2:, 2:]
    leak = float(np.sqrt(np.linalg.norm(u[:2, 2:]) ** 2 + np.linalg.norm(u[2:, :2]) ** 2))
    if leak > LEAKAGE_LIMIT:
        log.warning("decomposition unreliable: inter-block leakage %.3g", leak)
    r0, p0 = su2_axis_angle(b0)
    r1, p1 = su2_axis_angle(b1)
    dphi = float(np.angle(np.exp(1j * (p1 - p0))))
    return ConditionalRotation(r0, r1, leak, dphi)


def reassemble(rot: ConditionalRotation):
    """Block-diagonal unitary with the given rotations and relative phase."""
    u = np.zeros((4, 4), dtype=complex)
    u[:2, :2] = rot.r0.matrix()
    u[2:, 2:] = np.exp(1j * rot.global_phase_diff) * rot.r1.matrix()
    return u


def gate_fidelity(u, v_target):
    """Average gate fidelity (|Tr U^dag V|^2 + d) / (d (d + 1))."""
    u = np.asarray(u)
    d = u.shape[0]
    tr = np.trace(u.conj().T @ np.asarray(v_target))
    return float((abs(tr) ** 2 + d) / (d * (d + 1)))


def rotation_scan(builder, ks, electron_init, unitary_of):
    """Nuclear flip probability after each sequence in a family.

    Parameters
    ----------
    builder : callable
        ``builder(k)`` returns the sequence for unit count ``k``.
    ks : iterable of int
    electron_init : {0, -1}
    unitary_of : callable
        Maps a sequence to its 4x4 noiseless unitary.

    Returns
    -------
    ks, flip : ndarray
    """
    if electron_init not in (0, -1):
        raise ValueError("electron_init must be 0 or -1")
    start = 0 if electron_init == 0 else 2
    ks = np.asarray(list(ks))
    flips = []
    for k in ks:
        psi = unitary_of(builder(int(k)))[:, start]
        flips.append(abs(psi[1]) ** 2 + abs(psi[3]) ** 2)
    return ks, np.array(flips)


def write_scan_csv(path, ks, flips):
    """Write a rotation scan as ``k,flip_probability`` rows (9 significant digits)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "flip_probability"])
        for k, p in zip(ks, flips):
            w.writerow([int(k), format(float(p), ".9g")])


CNOT_E_N = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
