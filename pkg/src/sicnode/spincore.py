"""Static Hamiltonian of a spin-1 electron coupled to a spin-1/2 nucleus.

Basis order is fixed everywhere in the package::

    0: |+1,up>  1: |+1,dn>  2: |0,up>  3: |0,dn>  4: |-1,up>  5: |-1,dn>

with ``up`` meaning m_I = +1/2. The working subspace keeps indices 2..5, which
is the Kronecker product of the electron pair {|0>, |-1>} with the nuclear
pair {up, dn}.
"""

from dataclasses import dataclass, field

import numpy as np

from .units import GAMMA_E_MHZ_PER_GS, GAMMA_N_KHZ_PER_GS, MHZ_PER_KHZ

BASIS_LABELS = ((+1, +0.5), (+1, -0.5), (0, +0.5), (0, -0.5), (-1, +0.5), (-1, -0.5))
SUBSPACE_INDICES = (2, 3, 4, 5)
SUBSPACE_LABELS = tuple(BASIS_LABELS[i] for i in SUBSPACE_INDICES)

_S2 = 1.0 / np.sqrt(2.0)
SX = _S2 * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
SY = _S2 * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex)
SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)
IX = 0.5 * np.array([[0, 1], [1, 0]], dtype=complex)
IY = 0.5 * np.array([[0, -1j], [1j, 0]], dtype=complex)
IZ = 0.5 * np.diag([1.0, -1.0]).astype(complex)
_E3 = np.eye(3)
_E2 = np.eye(2)

ELECTRON_OPS = tuple(np.kron(s, _E2) for s in (SX, SY, SZ))
NUCLEAR_OPS = tuple(np.kron(_E3, i) for i in (IX, IY, IZ))


class ParameterError(ValueError):
    """Raised when register parameters violate their invariants."""


def _frozen_array(values, shape):
    arr = np.array(values, dtype=float).reshape(shape)
    arr.flags.writeable = False
    return arr


def default_hyperfine(a_zz=12.4, a_xx=0.0, a_yy=0.0):
    return np.diag([a_xx, a_yy, a_zz])


@dataclass(frozen=True, eq=False)
class SpinRegisterParams:
    """Physical constants of the electron-nuclear register.

    Parameters
    ----------
    d_gs : float
        Zero-field splitting in MHz. Required, there is no default.
    gamma_e : float
        Electron gyromagnetic ratio in MHz/Gs.
    gamma_n : float
        Magnitude of the nuclear gyromagnetic ratio in kHz/Gs.
    gamma_n_sign : int
        Sign applied to ``gamma_n`` (+1 or -1).
    hyperfine : array_like
        3x3 symmetric hyperfine tensor in MHz.
    b_field : array_like
        Static field vector in Gs.
    t_pi_e, t_pi_n : float
        Electron and nuclear pi-pulse durations in microseconds.
    """

    d_gs: float
    gamma_e: float = GAMMA_E_MHZ_PER_GS
    gamma_n: float = GAMMA_N_KHZ_PER_GS
    gamma_n_sign: int = 1
    hyperfine: np.ndarray = field(default_factory=default_hyperfine)
    b_field: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_pi_e: float = 0.1
    t_pi_n: float = 2.328

    def __post_init__(self):
        object.__setattr__(self, "hyperfine", _frozen_array(self.hyperfine, (3, 3)))
        object.__setattr__(self, "b_field", _frozen_array(self.b_field, (3,)))
        self.validate()

    def validate(self):
        a = self.hyperfine
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(self.b_field)):
            raise ParameterError("hyperfine tensor and field must be finite")
        if np.max(np.abs(a - a.T)) > 1e-12:
            raise ParameterError("hyperfine tensor is not symmetric")
        if not self.gamma_e > 0:
            raise ParameterError("gamma_e must be positive")
        if self.gamma_n_sign not in (1, -1):
            raise ParameterError("gamma_n_sign must be +1 or -1")
        if not (self.t_pi_e > 0 and self.t_pi_n > 0):
            raise ParameterError("pi-pulse durations must be positive")
        if not np.isfinite(self.d_gs):
            raise ParameterError("d_gs must be finite")

    @property
    def gamma_n_mhz(self):
        """Signed nuclear gyromagnetic ratio in MHz/Gs."""
        return self.gamma_n_sign * self.gamma_n * MHZ_PER_KHZ

    @property
    def a_zz(self):
        return float(self.hyperfine[2, 2])

    @property
    def rabi_e(self):
        """Electron Rabi frequency (MHz) giving a pi rotation in ``t_pi_e``."""
        return 0.5 / self.t_pi_e

    @property
    def rabi_n(self):
        """Nuclear Rabi frequency (MHz) giving a pi rotation in ``t_pi_n``."""
        return 0.5 / self.t_pi_n

    def replace(self, **changes):
        kw = dict(d_gs=self.d_gs, gamma_e=self.gamma_e, gamma_n=self.gamma_n,
                  gamma_n_sign=self.gamma_n_sign, hyperfine=self.hyperfine,
                  b_field=self.b_field, t_pi_e=self.t_pi_e, t_pi_n=self.t_pi_n)
        kw.update(changes)
        return SpinRegisterParams(**kw)


@dataclass(frozen=True, eq=False)
class StaticHamiltonian:
    matrix: np.ndarray
    basis_labels: tuple = BASIS_LABELS

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class Transition:
    levels: tuple
    frequency: float
    weight: float
    labels: tuple


@dataclass(frozen=True)
class TransitionTable:
    kind: str
    entries: tuple = ()

    @property
    def frequencies(self):
        return np.array([t.frequency for t in self.entries])

    @property
    def weights(self):
        return np.array([t.weight for t in self.entries])

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class Eigenlevels:
    values: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True, eq=False)
class Spectrum:
    freq_mhz: np.ndarray
    rel_pl: np.ndarray


@dataclass(frozen=True, eq=False)
class WorkingSubspace:
    """Principal 4x4 block of the Hamiltonian.

    ``discarded_coupling_norm`` is the Frobenius norm of the matrix elements
    linking the kept levels to the m_s = +1 levels, which the projection drops.
    """

    matrix: np.ndarray
    discarded_coupling_norm: float

    @property
    def discards_coupling(self):
        return self.discarded_coupling_norm > 1e-12


def build_hamiltonian(params: SpinRegisterParams) -> StaticHamiltonian:
    """Assemble the 6x6 ground-state Hamiltonian in MHz."""
    params.validate()
    b = params.b_field
    a = params.hyperfine
    h = params.d_gs * ELECTRON_OPS[2] @ ELECTRON_OPS[2]
    for k in range(3):
        h = h + params.gamma_e * b[k] * ELECTRON_OPS[k]
        h = h + params.gamma_n_mhz * b[k] * NUCLEAR_OPS[k]
    for i in range(3):
        for j in range(3):
            if a[i, j] != 0.0:
                h = h + a[i, j] * ELECTRON_OPS[i] @ NUCLEAR_OPS[j]
    h = 0.5 * (h + h.conj().T)
    return StaticHamiltonian(h)


def eigenlevels(h) -> Eigenlevels:
    """Ascending eigenvalues (MHz) and orthonormal eigenvectors (columns)."""
    m = h.matrix if isinstance(h, StaticHamiltonian) else np.asarray(h)
    vals, vecs = np.linalg.eigh(m)
    return Eigenlevels(vals, vecs)


def _labelled_levels(h: StaticHamiltonian, tol=1e-9):
    """Eigenlevels with degenerate clusters rotated onto product-state labels."""
    lv = eigenlevels(h)
    vals, vecs = lv.values, lv.vectors.copy()
    label_op = np.diag([10.0 * ms + mi for ms, mi in BASIS_LABELS]).astype(complex)
    scale = max(1.0, np.max(np.abs(vals)))
    start = 0
    n = len(vals)
    while start < n:
        stop = start + 1
        while stop < n and vals[stop] - vals[start] < tol * scale:
            stop += 1
        if stop - start > 1:
            v = vecs[:, start:stop]
            _, w = np.linalg.eigh(v.conj().T @ label_op @ v)
            vecs[:, start:stop] = v @ w
        start = stop
    labels = [BASIS_LABELS[int(np.argmax(np.abs(vecs[:, k]) ** 2))] for k in range(n)]
    return vals, vecs, labels


def transition_table(h: StaticHamiltonian, kind: str = "electron") -> TransitionTable:
    """List allowed transitions with normalized dipole weights.

    Electron lines change m_s by one and keep m_I; nuclear lines flip m_I at
    fixed m_s. Weights are squared S_x (or I_x) matrix elements between
    eigenvectors, scaled so the strongest line has weight 1.
    """
    if kind not in ("electron", "nuclear"):
        raise ValueError(f"unknown transition kind {kind!r}")
    vals, vecs, labels = _labelled_levels(h)
    op = ELECTRON_OPS[0] if kind == "electron" else NUCLEAR_OPS[0]
    raw = []
    for i in range(6):
        for j in range(i + 1, 6):
            (msi, mii), (msj, mij) = labels[i], labels[j]
            if kind == "electron":
                allowed = abs(msi - msj) == 1 and mii == mij
            else:
                allowed = msi == msj and mii != mij
            if not allowed:
                continue
            elem = vecs[:, i].conj() @ op @ vecs[:, j]
            raw.append(((i, j), abs(vals[j] - vals[i]), abs(elem) ** 2, (labels[i], labels[j])))
    wmax = max((r[2] for r in raw), default=0.0)
    entries = []
    for levels, freq, w, lab in sorted(raw, key=lambda r: r[1]):
        weight = w / wmax if wmax > 0 else 0.0
        entries.append(Transition(levels, float(freq), float(min(max(weight, 0.0), 1.0)), lab))
    return TransitionTable(kind, tuple(entries))


def _as_grid(grid):
    if isinstance(grid, tuple) and len(grid) == 3:
        return np.linspace(grid[0], grid[1], int(grid[2]))
    return np.asarray(grid, dtype=float)


def odmr_spectrum(table: TransitionTable, linewidth, contrast, grid) -> Spectrum:
    """Relative PL as a sum of Lorentzian dips on a unit baseline.

    ``linewidth`` is the full width at half maximum in MHz. ``grid`` is either
    an array of frequencies or a ``(start, stop, points)`` tuple.
    """
    if not linewidth > 0:
        raise ValueError("linewidth must be positive")
    if not 0 < contrast <= 1:
        raise ValueError("contrast must lie in (0, 1]")
    f = _as_grid(grid)
    hw2 = (0.5 * linewidth) ** 2
    pl = np.ones_like(f)
    for t in table.entries:
        pl -= t.weight * contrast * hw2 / ((f - t.frequency) ** 2 + hw2)
    return Spectrum(f, pl)


def working_subspace(h: StaticHamiltonian) -> WorkingSubspace:
    m = h.matrix
    idx = list(SUBSPACE_INDICES)
    sub = np.array(m[np.ix_(idx, idx)])
    cross = m[np.ix_(idx, [0, 1])]
    return WorkingSubspace(sub, float(np.sqrt(2.0) * np.linalg.norm(cross)))


def subspace_hamiltonian(params: SpinRegisterParams) -> np.ndarray:
    """Shortcut: the 4x4 working-subspace matrix for ``params``."""
    return working_subspace(build_hamiltonian(params)).matrix
