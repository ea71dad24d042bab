import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from sicnode.noise import CHUNK, NoiseModel, OUProcess, average_channel
from sicnode.pulses import MW, RF, Delay, PulseSequence, Register, compose
from sicnode.spincore import SpinRegisterParams
from sicnode.states import DensityMatrix

REG = Register.from_params(SpinRegisterParams(d_gs=1365.0))


def relaxed(n):
    return settings(max_examples=n, deadline=None, derandomize=True, database=None,
                    suppress_health_check=[HealthCheck.too_slow])

phases = st.floats(0.0, 2 * np.pi)
mw = st.builds(MW, st.sampled_from(["MW1", "MW2", "broadband"]), st.floats(0.0, 8.0),
               st.floats(0.0, 0.5), phases, st.floats(-2.0, 2.0))
rf = st.builds(RF, st.sampled_from([REG.rf0, REG.rf1]), st.floats(0.0, 400.0),
               st.floats(0.0, 3.0), phases)
delay = st.builds(Delay, st.floats(0.0, 3.0))
sequences = st.lists(st.one_of(mw, rf, delay), max_size=10).map(PulseSequence)


@st.composite
def states(draw):
    re = draw(st.lists(st.floats(-1, 1), min_size=16, max_size=16))
    im = draw(st.lists(st.floats(-1, 1), min_size=16, max_size=16))
    g = np.reshape(re, (4, 4)) + 1j * np.reshape(im, (4, 4))
    m = g @ g.conj().T + 1e-3 * np.eye(4)
    return DensityMatrix(m / np.trace(m).real)


models = st.builds(NoiseModel, st.floats(0.0, 0.3),
                   st.one_of(st.none(), st.builds(OUProcess, st.floats(0.0, 0.2),
                                                  st.floats(0.1, 5.0))),
                   st.floats(0.0, 5.0))


@relaxed(1000)
@given(sequences, st.floats(-1.0, 1.0), st.floats(0.0, 50.0))
def test_composed_sequences_are_unitary(seq, detuning, t0):
    u = compose(seq, REG.frame, REG.h4, t0, detuning)
    assert np.max(np.abs(u.conj().T @ u - np.eye(4))) < 1e-9


@relaxed(1000)
@given(sequences, states(), models, st.integers(0, 2**31 - 1))
def test_noise_average_is_a_density_matrix(seq, rho, model, seed):
    out = average_channel(seq, rho, model, 6, seed, REG)
    m = out.matrix
    assert np.allclose(m, m.conj().T, atol=1e-12)
    assert abs(np.trace(m).real - 1) < 1e-9
    assert np.linalg.eigvalsh(m)[0] > -1e-10


@relaxed(1000)
@given(st.lists(st.one_of(mw, rf, delay), min_size=1, max_size=4).map(PulseSequence),
       models, st.integers(0, 2**31 - 1), st.integers(2, 6))
def test_threads_do_not_change_results(seq, model, seed, threads):
    n = 2 * CHUNK + 3
    a = average_channel(seq, DensityMatrix.pure([1, 0, 0, 0]), model, n, seed, REG, threads=1)
    b = average_channel(seq, DensityMatrix.pure([1, 0, 0, 0]), model, n, seed, REG,
                        threads=threads)
    assert np.array_equal(a.matrix, b.matrix)


@relaxed(200)
@given(sequences)
def test_json_round_trip_property(seq):
    from sicnode.pulses import sequence_from_json, sequence_to_json
    assert sequence_from_json(sequence_to_json(seq)).elements == seq.elements


_TEMPLATE = None


def _template_table():
    global _TEMPLATE
    if _TEMPLATE is None:
        from sicnode.noise import noiseless
        from sicnode.pulses import build_bell_prep
        from sicnode.tomography import simulate_tomography
        _TEMPLATE = simulate_tomography(build_bell_prep("naive", REG), noiseless(), None, 1,
                                        REG, shots=1000, poisson=False)
    return _TEMPLATE


adversarial_counts = st.lists(
    st.one_of(st.just(0), st.integers(0, 5), st.integers(0, 10**6)), min_size=29, max_size=29)


@relaxed(300)
@given(adversarial_counts)
def test_mle_output_is_always_a_density_matrix(counts):
    from sicnode.tomography import MLEConvergenceError, mle_reconstruct
    table = _template_table().with_counts(counts)
    try:
        rho = mle_reconstruct(table, max_iters=2000).rho
    except MLEConvergenceError as exc:
        rho = exc.rho
    m = rho.matrix
    assert np.max(np.abs(m - m.conj().T)) <= 1e-9
    assert abs(np.trace(m).real - 1.0) <= 1e-9
    assert np.linalg.eigvalsh(m)[0] >= -1e-10


vectors = st.lists(st.floats(-500.0, 500.0), min_size=3, max_size=3)
tensors = st.lists(st.floats(-20.0, 20.0), min_size=9, max_size=9)


@relaxed(500)
@given(vectors, tensors, st.floats(1000.0, 3000.0))
def test_hamiltonian_is_hermitian(b_field, a_tensor, d_gs):
    from sicnode.spincore import build_hamiltonian
    a = np.reshape(a_tensor, (3, 3))
    params = SpinRegisterParams(d_gs=d_gs, b_field=b_field, hyperfine=0.5 * (a + a.T))
    h = build_hamiltonian(params).matrix
    assert h.shape == (6, 6)
    assert np.max(np.abs(h - h.conj().T)) <= 1e-10
