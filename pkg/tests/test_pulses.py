import warnings

import numpy as np
import pytest

from conftest import phase_gauged_distance
from oracles import diagonal_energies, lab_propagator
from sicnode.gates import conditional_decompose
from sicnode.pulses import (MW, RF, Delay, OffResonantRFWarning, PulseSequence, Register,
                            RotatingFrame, SequenceError, build_bell_prep, build_controlled_flip,
                            build_dd, build_ddrf, build_hahn, build_ramsey, cnot_sequences, compose,
                            build_rot_crot, ddrf_tau_for_duration, element_propagator,
                            element_to_dict, nuclear_frame_shift,
                            mw_rotation, selective_rf, sequence_from_json, sequence_to_json,
                            sequence_unitary)
from sicnode.spincore import SpinRegisterParams
from sicnode.states import BELL_STATE

UP0 = np.array([1, 0, 0, 0], dtype=complex)


def _u(seq, reg):
    return compose(seq, reg.frame, reg.h4)


def _unitarity(u):
    return np.max(np.abs(u.conj().T @ u - np.eye(4)))


def test_zero_duration_is_identity(reg):
    for e in (MW("MW1", 5.0, 0.0), RF(reg.rf1, 100.0, 0.0), Delay(0.0)):
        assert np.allclose(element_propagator(e, reg.frame, reg.h4), np.eye(4), atol=1e-15)


def test_element_validation():
    with pytest.raises(SequenceError):
        Delay(-1.0)
    with pytest.raises(SequenceError):
        MW("MW3", 1.0, 1.0)
    with pytest.raises(SequenceError):
        RF(12.4, -1.0, 1.0)
    with pytest.raises(SequenceError):
        PulseSequence(("not a pulse",))


def test_mw1_pi_pulse(reg):
    pi = mw_rotation(np.pi, reg.params, "MW1")
    u = _u(PulseSequence((pi,)), reg)
    assert _unitarity(u) < 1e-9
    half = _u(PulseSequence((Delay(0.5 * pi.duration),)), reg)
    core = np.linalg.inv(half) @ u @ np.linalg.inv(half)
    assert np.isclose(core[2, 0], -1j, atol=1e-12)
    assert np.allclose(np.abs(core[[1, 3], [1, 3]]), 1.0)
    assert abs(u[1, 0]) < 1e-12 and abs(u[3, 0]) < 1e-12


def test_rf_pi_time_inverts_nucleus_in_minus_one(reg):
    rf = RF(reg.rf1, 1e3 * 0.5 / 2.328, 2.328)
    u = _u(PulseSequence((rf,)), reg)
    assert abs(u[3, 2]) ** 2 > 1 - 1e-12
    assert abs(u[0, 0]) ** 2 > 0.999


def test_off_resonant_rf_warns(reg):
    with pytest.warns(OffResonantRFWarning):
        element_propagator(RF(reg.rf1 + 5.0, 100.0, 1.0), reg.frame, reg.h4)


def test_compose_basics(reg):
    assert np.array_equal(_u(PulseSequence(), reg), np.eye(4))
    pi = mw_rotation(np.pi, reg.params, "MW1")
    u = _u(PulseSequence((pi, pi)), reg)
    block = u[np.ix_([0, 2], [0, 2])]
    assert phase_gauged_distance(block, np.eye(2)) < 1e-9


def test_sequence_total_duration_metadata(reg):
    seq = PulseSequence((MW("MW1", 5.0, 0.1), Delay(0.25), RF(reg.rf1, 50.0, 1.2)), "x")
    assert abs(seq.total_duration - 1.55) < 1e-9
    assert seq.metadata["label"] == "x"
    assert len(seq + seq) == 6


def _random_sequence(rng, reg, n):
    elements = []
    for _ in range(n):
        kind = rng.integers(3)
        if kind == 0:
            elements.append(MW(["MW1", "MW2", "broadband"][rng.integers(3)], rng.uniform(0.5, 6.0),
                               rng.uniform(0.0, 0.3), rng.uniform(0, 2 * np.pi),
                               rng.uniform(-1.0, 1.0)))
        elif kind == 1:
            carrier = [reg.rf0, reg.rf1][rng.integers(2)] + rng.uniform(-0.3, 0.3)
            elements.append(RF(carrier, rng.uniform(10.0, 300.0), rng.uniform(0.0, 1.5),
                               rng.uniform(0, 2 * np.pi)))
        else:
            elements.append(Delay(rng.uniform(0.0, 1.0)))
    return PulseSequence(elements)


def random_sequences(count, seed, reg):
    rng = np.random.default_rng(seed)
    return [_random_sequence(rng, reg, int(rng.integers(1, 11))) for _ in range(count)]


def lab_error(seq, reg, b_z, t0=0.0):
    p = reg.params
    e6 = diagonal_energies(p.d_gs, p.gamma_e, p.gamma_n_mhz, p.a_zz, b_z)
    ref = lab_propagator([element_to_dict(e) for e in seq.elements], e6, 1e-4, t0)
    return float(np.max(np.abs(ref - compose(seq, reg.frame, reg.h4, t0))))


def test_compose_matches_lab_frame_integration(reg330):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OffResonantRFWarning)
        for seq in random_sequences(5, 1, reg330):
            assert lab_error(seq, reg330, 330.0, t0=0.73) < 1e-4


def test_dd_structure(params):
    seq = build_dd(2, 1.0, params)
    kinds = [type(e).__name__ for e in seq.elements]
    assert kinds == ["MW", "Delay", "MW", "Delay", "MW", "Delay", "MW"]
    t_half, t_pi = 0.5 * params.t_pi_e, params.t_pi_e
    delays = [e.duration for e in seq.elements if isinstance(e, Delay)]
    assert np.allclose(delays, [1.0 - 0.5 * (t_half + t_pi), 2.0 - t_pi, 1.0 - 0.5 * (t_half + t_pi)])
    # pi/2 centre to pi/2 centre spans 2 N tau
    assert np.isclose(seq.total_duration - t_half, 4.0)
    assert seq.info["free_evolution"] == 4.0


def test_dd_validation(params):
    with pytest.raises(SequenceError):
        build_dd(3, 1.0, params)
    with pytest.raises(SequenceError):
        build_dd(0, 1.0, params)
    with pytest.raises(SequenceError):
        build_dd(2, 0.01, params)


def test_dd_shortest_tau_is_pulses_only(params):
    t_half, t_pi = 0.5 * params.t_pi_e, params.t_pi_e
    tau = 0.5 * (t_half + t_pi)
    seq = build_dd(2, tau, params)
    delays = [e.duration for e in seq.elements if isinstance(e, Delay)]
    assert np.isclose(delays[0], 0.0) and np.isclose(delays[-1], 0.0)
    assert np.isclose(seq.total_duration, 2 * t_half + 2 * t_pi + delays[1])


@pytest.mark.parametrize("n", [2, 4, 8, 16])
@pytest.mark.parametrize("tau", [0.37, 1.0, 2.5])
def test_dd_core_refocuses(reg, n, tau):
    core = build_dd(n, tau, reg.params, with_readout_pulses=False)
    u = _u(core, reg)
    # electron part is the identity up to phase; nuclear-state phases may remain
    assert abs(u[0, 2]) < 1e-9 and abs(u[1, 3]) < 1e-9
    full = _u(build_dd(n, tau, reg.params), reg)
    assert abs(full[0, 0]) ** 2 + abs(full[1, 0]) ** 2 > 1 - 1e-9


def test_hahn_refocuses_static_detuning(reg):
    seq = build_hahn(2.0, reg.params)
    for det in (-0.3, 0.1, 0.5):
        u = compose(seq, reg.frame, reg.h4, detuning=det)
        p0 = abs(u[0, 0]) ** 2 + abs(u[1, 0]) ** 2
        assert p0 > 0.99


def test_ramsey_fringe_phase(reg):
    seq = build_ramsey(0.5, reg.params, fringe_mhz=0.25)
    assert np.isclose(seq.elements[-1].phase, np.pi + 2 * np.pi * 0.25 * 0.5)


def test_ddrf_empty_and_validation(reg):
    assert len(build_ddrf(0, 1.0, np.pi / 2, True, reg)) == 0
    with pytest.raises(SequenceError):
        build_ddrf(6, 1.0, np.pi / 2, True, reg)
    with pytest.raises(SequenceError):
        build_ddrf(4, 1.0, np.pi / 2, True, reg, rf_duration=1.5)
    with pytest.raises(SequenceError):
        build_ddrf(4, 1.0, 0.0, True, reg)


def test_ddrf_rf_off_during_pi_pulses(reg):
    seq = build_ddrf(8, 2.0, np.pi / 2, True, reg)
    assert not any(isinstance(a, RF) and isinstance(b, MW)
                   for a, b in zip(seq.elements, seq.elements[1:]) if False)
    mw = [e for e in seq.elements if isinstance(e, MW)]
    rf = [e for e in seq.elements if isinstance(e, RF)]
    assert len(mw) == 4 and len(rf) == 8
    assert all(e.transition == "broadband" for e in mw)


@pytest.mark.parametrize("n,tau", [(4, 1.0), (8, 2.0), (16, 3.3), (12, 1.7)])
def test_ddrf_axes(reg, n, tau):
    c = conditional_decompose(sequence_unitary(build_ddrf(n, tau, np.pi / 4, True, reg), reg))
    assert c.leakage < 1e-6
    assert abs(c.axis_dot + 1) < 1e-3
    assert abs(c.r1.angle - np.pi / 4) < 1e-3 and abs(c.r0.angle - np.pi / 4) < 1e-3
    uc = conditional_decompose(sequence_unitary(build_ddrf(n, tau, np.pi / 4, False, reg), reg))
    assert abs(uc.axis_dot - 1) < 1e-3
    assert abs(uc.r0.angle - uc.r1.angle) < 1e-3


def test_ddrf_angle_is_additive(reg):
    tau = 2.0
    per = np.pi / 32
    angles = []
    for n in (4, 8, 12, 16):
        seq = build_ddrf(n, tau, n * per, True, reg)
        angles.append(conditional_decompose(sequence_unitary(seq, reg)).r1.angle)
    assert np.allclose(angles, per * np.array([4, 8, 12, 16]), atol=1e-6)


def test_ddrf_frame_advance_recorded(reg):
    seq = build_ddrf(16, 2.0, np.pi / 4, True, reg)
    assert "nuclear_frame_advance" in seq.info
    assert abs(seq.info["nuclear_frame_advance"]) < 1e-2


def test_cnot_truth_tables(reg):
    u = _u(cnot_sequences("e-controls-n", reg), reg)
    # the selective RF leaves a small off-resonant tilt in the spectator manifold
    assert abs(u[3, 2]) ** 2 > 1 - 1e-9 and abs(u[0, 0]) ** 2 > 1 - 1e-3
    assert abs(u[1, 1]) ** 2 > 1 - 1e-3
    v = _u(cnot_sequences("n-controls-e", reg), reg)
    assert abs(v[2, 0]) ** 2 > 1 - 1e-12 and abs(v[1, 1]) ** 2 > 1 - 1e-12
    with pytest.raises(SequenceError):
        cnot_sequences("sideways", reg)


def test_cnot_squared_is_blockwise_identity(reg):
    c = cnot_sequences("e-controls-n", reg)
    u = _u(c + c, reg)
    for blk in ([0, 1], [2, 3]):
        assert phase_gauged_distance(u[np.ix_(blk, blk)], np.eye(2)) < 1e-3


def test_selective_rf_spares_the_spectator(reg):
    rf = selective_rf(np.pi, reg, -1)
    u = _u(PulseSequence((rf,)), reg)
    b0 = u[:2, :2]
    assert abs(b0[0, 1]) < 1e-2
    assert abs(np.angle(b0[1, 1] * np.conj(b0[0, 0]))) < 1e-6


def test_bell_preparations(reg):
    naive = build_bell_prep("naive", reg)
    assert np.isclose(naive.total_duration, 14.7)
    psi = _u(naive, reg) @ UP0
    assert abs(np.vdot(BELL_STATE, psi)) ** 2 > 0.999
    ddrf = build_bell_prep("ddrf", reg, 14.7, n_units=16)
    assert np.isclose(ddrf.total_duration, 14.7)
    psi = _u(ddrf, reg) @ UP0
    assert abs(np.vdot(BELL_STATE, psi)) ** 2 > 0.99


def test_bell_prep_errors(reg):
    with pytest.raises(SequenceError):
        build_bell_prep("ddrf", reg, 14.7)
    with pytest.raises(SequenceError):
        build_bell_prep("ddrf", reg, 14.7, n_units=16, tau=0.5)
    with pytest.raises(SequenceError):
        build_bell_prep("ddrf", reg, 0.5, n_units=16)
    with pytest.raises(SequenceError):
        build_bell_prep("teleport", reg)


def test_tau_for_duration(reg):
    tau = ddrf_tau_for_duration(16, 14.7, reg.params)
    seq = build_bell_prep("ddrf", reg, None, n_units=16, tau=tau)
    assert np.isclose(seq.total_duration, 14.7)


def test_controlled_flip(reg):
    u = sequence_unitary(build_controlled_flip(16, 0.85, reg), reg)
    c = conditional_decompose(u)
    assert c.r0.angle < 1e-2
    assert abs(c.r1.angle - np.pi) < 1e-2


def test_phase_shift_covariance(reg):
    seq = PulseSequence((mw_rotation(np.pi / 2, reg.params, "MW1", 0.3), Delay(0.4),
                         RF(reg.rf1, 120.0, 1.3, 1.0), MW("broadband", 4.0, 0.08, 2.0)))
    shifted = PulseSequence(tuple(
        e if isinstance(e, Delay) else type(e)(**{**e.__dict__, "phase": e.phase + 0.77})
        for e in seq.elements))
    a = np.abs(_u(seq, reg) @ UP0) ** 2
    b = np.abs(_u(shifted, reg) @ UP0) ** 2
    assert np.allclose(a, b, atol=1e-12)


def test_json_round_trip(reg):
    seq = build_ddrf(8, 1.5, np.pi / 3, True, reg)
    text = sequence_to_json(seq)
    back = sequence_from_json(text)
    assert back.elements == seq.elements
    assert sequence_to_json(back) == text


def test_frame_from_subspace(reg):
    f = reg.frame
    assert isinstance(f, RotatingFrame)
    assert np.isclose(f.electron_ref, 0.5 * (reg.mw1 + reg.mw2))
    assert np.isclose(f.nuclear_ref, 0.5 * (reg.rf0 + reg.rf1))
    nu0, nu1 = reg.precession()
    assert np.isclose(nu0, -6.2) and np.isclose(nu1, 6.2)
    with pytest.raises(SequenceError):
        RotatingFrame(-1.0, 0.0)


def test_bell_state_is_stationary_in_frame(reg):
    u = _u(PulseSequence((Delay(3.7),)), reg)
    psi = u @ BELL_STATE
    assert abs(abs(np.vdot(BELL_STATE, psi)) - 1) < 1e-12


def test_register_from_params_field_dependence():
    reg = Register.from_params(SpinRegisterParams(d_gs=1365.0, b_field=[0, 0, 330.0]))
    assert np.isclose(reg.rf1, abs(12.4 - 0.85e-3 * 330))


@pytest.mark.parametrize("theta", [np.pi / 8, np.pi / 2])
def test_rot_crot_in_tracked_frame(reg, theta):
    seq = build_rot_crot(16, 2.0, theta, reg)
    u = nuclear_frame_shift(seq.info["nuclear_frame_advance"]) @ sequence_unitary(seq, reg)
    c = conditional_decompose(u)
    assert c.r0.angle < 1e-9
    assert abs(c.r1.angle - 2 * theta) < 1e-9


def test_frame_shift_is_the_reported_z(reg):
    seq = build_ddrf(16, 2.0, np.pi / 2, False, reg)
    adv = seq.info["nuclear_frame_advance"]
    c = conditional_decompose(nuclear_frame_shift(adv) @ sequence_unitary(seq, reg))
    assert np.allclose(c.r0.axis, [1, 0, 0], atol=1e-9)
    assert np.allclose(c.r1.axis, [1, 0, 0], atol=1e-9)
