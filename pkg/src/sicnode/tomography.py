"""Two-qubit state tomography from photon counts.

Only the electron state is read optically: the |-1> manifold fluoresces
less than |0> by the ODMR contrast. Every Pauli setting is therefore
measured with three mappings applied after its pre-rotation:

``e``  no mapping, counts track the electron Z,
``p``  MW2 pi, counts track the parity Z x Z,
``n``  selective RF pi in |-1> then MW2 pi, counts track the nuclear Z.

Two reference rows (``bright``: the initial state, ``dark``: after a
broadband pi) calibrate the count rate and contrast.
"""

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gates import PAULI
from .noise import BOOTSTRAP_STREAM, NoiseModel, average_channels, expected_counts, sample_rng, simulate_readout
from .pulses import PulseSequence, as_register, compose, mw_rotation, precession_rates, selective_rf
from .states import BELL_STATE, DensityMatrix, DensityMatrixError, as_matrix, clip_to_physical, polarized_initial_state
from .units import TWO_PI

log = logging.getLogger(__name__)

PAULI_LABELS = "XYZ"
SETTING_LABELS = tuple(a + b for a in PAULI_LABELS for b in PAULI_LABELS)
READOUTS = ("e", "p", "n")
REFERENCE_ROWS = ("bright", "dark")
BRIGHT_PROJECTOR = np.diag([1.0, 1.0, 0.0, 0.0]).astype(complex)
_I2 = np.eye(2, dtype=complex)
_PAULI = dict(zip("XYZ", PAULI))
_PAULI["I"] = _I2


def pauli_pair(label):
    return np.kron(_PAULI[label[0]], _PAULI[label[1]])


def _rotation(phase, angle=np.pi / 2):
    """Ideal drive rotation with coupling exp(-i phase)|lower><upper| + h.c."""
    gen = np.cos(phase) * PAULI[0] - np.sin(phase) * PAULI[1]
    return np.cos(angle / 2) * _I2 - 1j * np.sin(angle / 2) * gen


def _phase_for(pauli):
    """Drive phase whose pi/2 rotation R satisfies R^dag Z R = pauli."""
    for phase in (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi):
        r = _rotation(phase)
        if np.allclose(r.conj().T @ PAULI[2] @ r, _PAULI[pauli], atol=1e-12):
            return phase, r
    raise AssertionError(f"no quarter-turn phase maps Z to {pauli}")


@dataclass(frozen=True, eq=False)
class TomographySetting:
    """Pre-rotation mapping a Pauli pair onto the Z x Z measurement.

    ``target`` is the ideal two-qubit rotation; ``pre_rotation`` is the
    pulse fragment that implements it on the register.
    """

    label: str
    pre_rotation: PulseSequence
    target: np.ndarray

    def conjugation_error(self):
        zz = pauli_pair("ZZ")
        u = self.target
        return float(np.max(np.abs(u.conj().T @ zz @ u - pauli_pair(self.label))))


def standard_settings(params):
    """The nine settings {X, Y, Z} x {X, Y, Z}, electron first.

    The electron is rotated by a broadband MW pi/2. The nucleus is rotated
    by a manifold-selective RF pi/2 in each electron manifold, with each RF
    phase advanced by the frame precession of its manifold up to the pulse
    centre.
    """
    reg = as_register(params)
    p = reg.params
    nu = dict(zip((0, -1), precession_rates(reg.frame, reg.h4)))
    settings = []
    for label in SETTING_LABELS:
        pe, pn = label
        elements = []
        u_e = u_n = _I2
        if pe != "Z":
            phase, u_e = _phase_for(pe)
            elements.append(mw_rotation(np.pi / 2, p, "broadband", phase))
        if pn != "Z":
            phase, u_n = _phase_for(pn)
            t = sum(e.duration for e in elements)
            for manifold in (0, -1):
                draft = selective_rf(np.pi / 2, reg, manifold, 0.0)
                t_c = t + 0.5 * draft.duration
                ph = float(np.mod(phase + TWO_PI * nu[manifold] * t_c, TWO_PI))
                elements.append(selective_rf(np.pi / 2, reg, manifold, ph))
                t += draft.duration
        seq = PulseSequence(elements, f"tomo-{label}")
        settings.append(TomographySetting(label, seq, np.kron(u_e, u_n)))
    return settings


def readout_sequences(params):
    reg = as_register(params)
    mw2 = mw_rotation(np.pi, reg.params, "MW2")
    return {
        "e": PulseSequence((), "read-e"),
        "p": PulseSequence((mw2,), "read-p"),
        "n": PulseSequence((selective_rf(np.pi, reg, -1), mw2), "read-n"),
    }


def reference_sequences(params):
    reg = as_register(params)
    return {"bright": PulseSequence((), "bright"),
            "dark": PulseSequence((mw_rotation(np.pi, reg.params, "broadband"),), "dark")}


def measurement_rows(params, settings=None):
    """Row labels, their mapping sequences and bright-state projectors."""
    reg = as_register(params)
    settings = standard_settings(reg) if settings is None else settings
    reads = readout_sequences(reg)
    labels, seqs, effects = [], [], []
    for s in settings:
        for r in READOUTS:
            seq = s.pre_rotation + reads[r]
            u = compose(seq, reg.frame, reg.h4)
            labels.append(f"{s.label}:{r}")
            seqs.append(seq)
            effects.append(u.conj().T @ BRIGHT_PROJECTOR @ u)
    return labels, seqs, np.array(effects)


def information_rank(effects):
    """Rank of the map from traceless Hermitian 4x4 matrices to row signals."""
    basis = [pauli_pair(a + b) for a in "IXYZ" for b in "IXYZ"][1:]
    m = np.array([[np.real(np.trace(e @ b)) for b in basis] for e in effects])
    return int(np.linalg.matrix_rank(m, tol=1e-9))


@dataclass(frozen=True)
class CountRow:
    setting: str
    counts: int
    shots: int


@dataclass(frozen=True, eq=False)
class CountsTable:
    """Photon counts per row plus the readout description needed to invert them.

    ``effects[k]`` is the projector whose expectation is the bright
    (electron |0>) probability for measurement row ``k``.
    """

    rows: tuple
    contrast: float
    photons_per_shot: float
    effects: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        labels = [r.setting for r in self.rows]
        for r in self.rows:
            if int(r.counts) != r.counts or r.counts < 0:
                raise ValueError(f"row {r.setting}: counts must be a non-negative integer")
            if r.shots < 1:
                raise ValueError(f"row {r.setting}: shots must be positive")
        for ref in REFERENCE_ROWS:
            if ref not in labels:
                raise ValueError(f"missing reference row {ref!r}")
        present = {lab.split(":")[0] for lab in labels}
        missing = [s for s in SETTING_LABELS if s not in present]
        if missing:
            raise ValueError(f"missing Pauli settings {missing}")
        eff = np.asarray(self.effects, dtype=complex)
        if eff.shape != (len(self.measurement_rows), 4, 4):
            raise ValueError("need one 4x4 effect per measurement row")
        eff.flags.writeable = False
        object.__setattr__(self, "effects", eff)

    @property
    def measurement_rows(self):
        return [r for r in self.rows if r.setting not in REFERENCE_ROWS]

    def row(self, label):
        for r in self.rows:
            if r.setting == label:
                return r
        raise KeyError(label)

    def with_counts(self, counts):
        rows = [CountRow(r.setting, int(c), r.shots) for r, c in zip(self.rows, counts)]
        return CountsTable(rows, self.contrast, self.photons_per_shot, self.effects)

    def counts_array(self):
        return np.array([r.counts for r in self.rows])

    def to_csv(self, path):
        """Write ``setting,counts,shots`` and a ``.meta.json`` sidecar."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["setting", "counts", "shots"])
            for r in self.rows:
                w.writerow([r.setting, r.counts, r.shots])
        meta = {"contrast": self.contrast, "photons_per_shot": self.photons_per_shot,
                "effects_real": np.real(self.effects).tolist(),
                "effects_imag": np.imag(self.effects).tolist()}
        path.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True))

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with open(path, newline="") as fh:
            rows = [CountRow(d["setting"], int(d["counts"]), int(d["shots"]))
                    for d in csv.DictReader(fh)]
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        eff = np.array(meta["effects_real"]) + 1j * np.array(meta["effects_imag"])
        return cls(rows, meta["contrast"], meta["photons_per_shot"], eff)


def simulate_tomography(state_prep, model: NoiseModel, settings, seed, register,
                        rho_init=None, n_samples=200, threads=1, shots=None, poisson=True):
    """Counts for every tomography row after ``state_prep``.

    Each row's state is the noise-averaged output of prep, pre-rotation and
    readout mapping; its count is Poisson around the expected photon number
    (or that number rounded, with ``poisson=False``). Reference rows are
    taken on the initial state without the prep.
    """
    reg = as_register(register)
    rho_init = polarized_initial_state(1.0) if rho_init is None else rho_init
    readout = model.readout
    if shots is not None:
        from .noise import Readout
        readout = Readout(readout.contrast, readout.photons_per_shot, int(shots))
        model = model.replace(readout=readout)
    labels, seqs, effects = measurement_rows(reg, settings)
    states = average_channels(state_prep, seqs, rho_init, model, n_samples, seed, reg, threads)
    refs = reference_sequences(reg)
    ref_states = average_channels(PulseSequence(), [refs[k] for k in REFERENCE_ROWS],
                                  rho_init, model, n_samples, seed, reg, threads)
    rows = []
    for i, (lab, rho) in enumerate(zip(REFERENCE_ROWS + tuple(labels), ref_states + states)):
        if poisson:
            n = simulate_readout(rho, model, seed, i)
        else:
            n = int(round(expected_counts(rho, readout)))
        rows.append(CountRow(lab, n, readout.shots))
    return CountsTable(rows, readout.contrast, readout.photons_per_shot, effects)


def expected_table(rho, table: CountsTable, bright=None):
    """Mean counts of every row of ``table`` for state ``rho`` (no sampling)."""
    from .noise import Readout
    m = as_matrix(rho)
    out = []
    eff = iter(table.effects)
    for r in table.rows:
        ro = Readout(table.contrast, table.photons_per_shot, r.shots)
        if r.setting == "bright":
            lam = expected_counts(np.diag([1.0, 0, 0, 0]), ro)
        elif r.setting == "dark":
            lam = expected_counts(np.diag([0, 0, 1.0, 0]), ro)
        else:
            e = next(eff)
            p0 = float(np.real(np.trace(m @ e)))
            lam = expected_counts(np.diag([p0, 0, 1 - p0, 0]), ro)
        out.append(lam)
    return np.array(out)


# ------------------------------------------------------------------ MLE


class MLEConvergenceError(RuntimeError):
    def __init__(self, rho, likelihoods):
        super().__init__(f"MLE did not converge after {len(likelihoods)} iterations")
        self.rho = rho
        self.likelihoods = likelihoods


@dataclass(frozen=True, eq=False)
class Reconstruction:
    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    likelihoods: np.ndarray
    bright_rate: float
    contrast: float

    def to_dict(self, fidelity=None):
        d = {"rho_real": np.real(self.rho.matrix).tolist(),
             "rho_imag": np.imag(self.rho.matrix).tolist(),
             "iterations": self.iterations, "log_likelihood": self.log_likelihood}
        if fidelity is not None:
            d["F"], d["F2"] = fidelity
        return d


def _calibration(table):
    b_row, d_row = table.row("bright"), table.row("dark")
    bright = max(b_row.counts, 1) / b_row.shots
    dark = d_row.counts / d_row.shots
    contrast = float(np.clip(1.0 - dark / bright, 1e-6, 1.0))
    return bright, contrast


def mle_reconstruct(counts: CountsTable, tol=1e-9, max_iters=50000, rho0=None):
    """Maximum-likelihood density matrix for Poissonian counts.

    Row ``k`` has mean ``shots_k * b * (1 - c + c Tr(rho E_k))`` with rate
    ``b`` and contrast ``c`` from the reference rows. The iteration is a
    diluted R-rho-R step, ``rho -> (I + eps G) rho (I + eps G) / norm``, with
    ``G`` the trace-free likelihood gradient; ``eps`` shrinks whenever a step
    would lower the likelihood, so the likelihood never decreases.

    Stops when an accepted step gains less than ``tol`` in log-likelihood.
    """
    bright, c = _calibration(counts)
    rows = counts.measurement_rows
    n = np.array([r.counts for r in rows], dtype=float)
    scale = np.array([r.shots for r in rows], dtype=float) * bright
    eff = counts.effects
    eye = np.eye(4)

    def mean(rho):
        p = np.real(np.einsum("ij,kji->k", rho, eff))
        return scale * (1.0 - c + c * p) + 1e-300

    def loglik(mu):
        return float(np.sum(n * np.log(mu) - mu))

    rho = np.eye(4, dtype=complex) / 4 if rho0 is None else as_matrix(rho0).copy()
    mu = mean(rho)
    ll = loglik(mu)
    trace = [ll]
    eps = None
    for it in range(1, max_iters + 1):
        grad = np.einsum("k,kij->ij", (n / mu - 1.0) * scale * c, eff)
        grad = 0.5 * (grad + grad.conj().T)
        grad -= np.real(np.trace(grad @ rho)) * eye
        norm = np.max(np.abs(np.linalg.eigvalsh(grad)))
        if norm == 0.0:
            break
        if eps is None:
            eps = 0.5 / norm
        accepted = False
        for _ in range(60):
            step = eye + eps * grad
            cand = step @ rho @ step.conj().T
            cand = cand / np.real(np.trace(cand))
            mu_c = mean(cand)
            ll_c = loglik(mu_c)
            if ll_c >= ll:
                accepted = True
                break
            eps *= 0.5
        if not accepted:
            break
        gain = ll_c - ll
        assert gain >= 0.0, "likelihood decreased"
        rho, mu, ll = cand, mu_c, ll_c
        trace.append(ll)
        eps = min(eps * 1.5, 1e6 / norm)
        if gain < tol:
            break
    else:
        raise MLEConvergenceError(DensityMatrix(clip_to_physical(rho)), np.array(trace))
    try:
        out = DensityMatrix(0.5 * (rho + rho.conj().T) / np.real(np.trace(rho)))
    except DensityMatrixError:
        log.info("projecting the MLE iterate onto the PSD cone")
        out = DensityMatrix(_project_psd(rho))
    return Reconstruction(out, ll, len(trace) - 1, np.array(trace), bright, c)


def _project_psd(m):
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    m = (v * w) @ v.conj().T
    return m / np.real(np.trace(m))


def _psd_sqrt(m):
    w, v = np.linalg.eigh(m)
    # eigenvalues at rounding level would add sqrt(eps) noise to the trace norm
    w = np.where(w > 1e-14 * max(w[-1], 1e-300), w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def state_fidelity(rho_e, rho_t):
    """Uhlmann fidelity ``Tr sqrt(sqrt(rho_e) rho_t sqrt(rho_e))`` and its square.

    Evaluated as the trace norm of ``sqrt(rho_e) sqrt(rho_t)``.
    """
    a = rho_e if isinstance(rho_e, DensityMatrix) else DensityMatrix(rho_e)
    b = rho_t if isinstance(rho_t, DensityMatrix) else DensityMatrix(rho_t)
    sv = np.linalg.svd(_psd_sqrt(a.matrix) @ _psd_sqrt(b.matrix), compute_uv=False)
    f = min(float(np.sum(sv)), 1.0)
    return f, f * f


def pauli_expectations(rho):
    m = as_matrix(rho)
    return {a + b: float(np.real(np.trace(m @ pauli_pair(a + b))))
            for a in "IXYZ" for b in "IXYZ" if a + b != "II"}


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    fidelity_mean: float
    fidelity_std: float
    rho_mean: np.ndarray
    fidelities: np.ndarray
    failure_fraction: float

    def to_dict(self):
        return {"fidelity_mean": self.fidelity_mean, "fidelity_std": self.fidelity_std,
                "failure_fraction": self.failure_fraction,
                "rho_mean_real": np.real(self.rho_mean).tolist(),
                "rho_mean_imag": np.imag(self.rho_mean).tolist()}


class BootstrapError(RuntimeError):
    pass


def bootstrap_error(counts: CountsTable, n_resamples, seed, target=None, threads=1,
                    tol=1e-9, max_iters=50000):
    """Fidelity spread under Poisson resampling of every row.

    ``target`` defaults to the Bell state (|0,up> + |-1,dn>)/sqrt(2).
    Resample ``i`` draws from its own generator, so the result does not
    depend on ``threads``.
    """
    if int(n_resamples) != n_resamples or n_resamples < 100:
        raise ValueError("n_resamples must be an integer >= 100")
    target = DensityMatrix.pure(BELL_STATE) if target is None else target
    observed = counts.counts_array()

    def one(i):
        rng = sample_rng(seed, i, BOOTSTRAP_STREAM)
        table = counts.with_counts(rng.poisson(observed))
        try:
            rec = mle_reconstruct(table, tol, max_iters)
        except (MLEConvergenceError, DensityMatrixError) as exc:
            log.warning("bootstrap resample %d failed: %s", i, exc)
            return None
        return rec.rho.matrix, state_fidelity(rec.rho, target)[0]

    idx = range(int(n_resamples))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, idx))
    else:
        results = [one(i) for i in idx]
    ok = [r for r in results if r is not None]
    failed = 1.0 - len(ok) / len(results)
    if failed > 0.1:
        raise BootstrapError(f"{failed:.1%} of bootstrap reconstructions failed")
    fids = np.array([r[1] for r in ok])
    rho_mean = np.mean([r[0] for r in ok], axis=0)
    return BootstrapResult(float(np.mean(fids)), float(np.std(fids, ddof=1)), rho_mean,
                           fids, failed)
