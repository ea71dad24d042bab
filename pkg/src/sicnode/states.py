"""Density matrices on the 4-level working subspace."""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-9
TRACE_TOL = 1e-9
PSD_TOL = 1e-10


class DensityMatrixError(ValueError):
    """Matrix is not a valid density matrix."""


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Validated 4x4 state in the basis |0,up>, |0,dn>, |-1,up>, |-1,dn>."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise DensityMatrixError(f"expected a 4x4 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DensityMatrixError("matrix has non-finite entries")
        herm = np.max(np.abs(m - m.conj().T))
        if herm > HERMITIAN_TOL:
            raise DensityMatrixError(f"not Hermitian (max deviation {herm:.3g})")
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise DensityMatrixError(f"trace {tr:.12g} differs from 1")
        lo = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
        if lo < -PSD_TOL:
            raise DensityMatrixError(f"negative eigenvalue {lo:.3g}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def populations(self):
        return np.real(np.diag(self.matrix)).copy()

    @property
    def rho14(self):
        """Coherence between |0,up> and |-1,dn>."""
        return complex(self.matrix[0, 3])

    def expectation(self, op):
        return float(np.real(np.trace(self.matrix @ op)))

    @classmethod
    def pure(cls, psi):
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls):
        return cls(np.eye(4) / 4)


def clip_to_physical(m, tol=PSD_TOL):
    """Hermitize, clip eigenvalues in [-tol, 0) to zero and renormalize.

    Eigenvalues below ``-tol`` are an error rather than something to hide.
    """
    m = np.asarray(m, dtype=complex)
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    if w[0] < -tol:
        raise DensityMatrixError(f"negative eigenvalue {w[0]:.3g} beyond tolerance")
    if w[0] < 0:
        log.debug("clipping eigenvalues down to %.3g", w[0])
        w = np.clip(w, 0.0, None)
        m = (v * w) @ v.conj().T
    return m / np.trace(m).real


def as_matrix(rho):
    return rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def polarized_initial_state(polarization=1.0):
    """p |0,up><0,up| + (1 - p) |0,dn><0,dn|."""
    if not 0.0 <= polarization <= 1.0:
        raise ValueError("polarization must lie in [0, 1]")
    return DensityMatrix(np.diag([polarization, 1.0 - polarization, 0.0, 0.0]))


BELL_STATE = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex) / np.sqrt(2.0)
