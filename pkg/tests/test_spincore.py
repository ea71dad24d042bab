import numpy as np
import pytest

from oracles import charpoly_roots, diagonal_energies
from sicnode.spincore import (ELECTRON_OPS, NUCLEAR_OPS, ParameterError, SpinRegisterParams,
                              build_hamiltonian, eigenlevels, odmr_spectrum, subspace_hamiltonian,
                              transition_table, working_subspace)

D = 1365.0


def _params(**kw):
    return SpinRegisterParams(d_gs=D, **kw)


def test_zero_field_no_hyperfine_levels():
    p = _params(hyperfine=np.zeros((3, 3)))
    vals = eigenlevels(build_hamiltonian(p)).values
    assert np.allclose(vals, [0, 0, D, D, D, D], atol=1e-9)


def test_field_splits_ms_manifolds():
    p = _params(hyperfine=np.zeros((3, 3)), b_field=[0, 0, 4.2])
    e = np.real(np.diag(build_hamiltonian(p).matrix))
    split = (e[0] + e[1]) / 2 - (e[4] + e[5]) / 2
    assert np.isclose(split, 2 * 0.28 * 4.2) and np.isclose(split, 2.352)


def test_nuclear_line_at_330_gs():
    p = _params(b_field=[0, 0, 330.0])
    table = transition_table(build_hamiltonian(p), "nuclear")
    minus = [t.frequency for t in table.entries if t.labels[0][0] == -1]
    assert np.isclose(minus[0], abs(12.4 - 0.85e-3 * 330), atol=1e-9)
    assert abs(minus[0] - 12.12) < 0.01


def test_hamiltonian_matches_closed_form_diagonal():
    p = _params(b_field=[0, 0, 330.0])
    h = build_hamiltonian(p).matrix
    assert np.allclose(np.diag(h).real, diagonal_energies(D, 0.28, 0.85e-3, 12.4, 330.0), atol=1e-12)
    assert np.count_nonzero(np.abs(h - np.diag(np.diag(h))) > 0) == 0


def test_eigenvalues_match_characteristic_polynomial_roots():
    hf = np.array([[3.0, 0.5, 0.0], [0.5, 2.0, 0.1], [0.0, 0.1, 12.4]])
    p = _params(hyperfine=hf, b_field=[20.0, -5.0, 330.0])
    h = build_hamiltonian(p).matrix
    lv = eigenlevels(h)
    assert np.max(np.abs(lv.values - charpoly_roots(h))) < 1e-6
    v = lv.vectors
    assert np.max(np.abs(v.conj().T @ v - np.eye(6))) < 1e-9
    assert np.max(np.abs(v @ np.diag(lv.values) @ v.conj().T - h)) < 1e-8


def test_eigenlevels_trivial_cases():
    assert np.allclose(eigenlevels(3.0 * np.eye(6)).values, 3.0)
    d = np.diag([5.0, 1.0, 3.0, 2.0, 4.0, 0.0])
    lv = eigenlevels(d)
    assert np.allclose(lv.values, np.sort(np.diag(d)))
    assert np.allclose(np.abs(lv.vectors), np.eye(6)[:, np.argsort(np.diag(d))])


def test_asymmetric_hyperfine_rejected():
    with pytest.raises(ParameterError):
        _params(hyperfine=[[0, 1, 0], [0, 0, 0], [0, 0, 12.4]])


def test_parameter_validation():
    with pytest.raises(ParameterError):
        _params(gamma_e=0.0)
    with pytest.raises(ParameterError):
        _params(t_pi_n=0.0)
    with pytest.raises(ParameterError):
        _params(gamma_n_sign=2)


def test_zero_field_electron_pairs_split_by_hyperfine():
    table = transition_table(build_hamiltonian(_params()), "electron")
    f = table.frequencies
    assert np.all(np.diff(f) >= 0)
    assert np.all((table.weights >= 0) & (table.weights <= 1))
    lines = np.unique(np.round(f, 9))
    assert len(lines) == 2 and np.isclose(lines[1] - lines[0], 12.4)


def test_four_electron_lines_at_4p2_gs():
    table = transition_table(build_hamiltonian(_params(b_field=[0, 0, 4.2])), "electron")
    assert len(np.unique(np.round(table.frequencies, 6))) == 4


def test_bare_larmor_without_hyperfine():
    p = _params(hyperfine=np.zeros((3, 3)), b_field=[0, 0, 500.0])
    table = transition_table(build_hamiltonian(p), "nuclear")
    assert np.allclose(table.frequencies, 0.85e-3 * 500.0, atol=1e-12)


def test_transition_frequencies_are_eigenvalue_differences():
    p = _params(b_field=[0, 0, 37.0])
    vals = eigenlevels(build_hamiltonian(p)).values
    diffs = np.abs(vals[:, None] - vals[None, :])
    for t in transition_table(build_hamiltonian(p), "electron").entries:
        assert np.min(np.abs(diffs - t.frequency)) < 1e-9


def test_unknown_transition_kind():
    with pytest.raises(ValueError):
        transition_table(build_hamiltonian(_params()), "muon")


def test_product_eigenstates_and_commuting_zeeman():
    h = build_hamiltonian(_params(b_field=[0, 0, 100.0])).matrix
    for op in (ELECTRON_OPS[2], NUCLEAR_OPS[2]):
        assert np.max(np.abs(h @ op - op @ h)) < 1e-12
    v = eigenlevels(h).vectors
    assert np.allclose(np.sort(np.max(np.abs(v), axis=0)), 1.0, atol=1e-9)


def test_eigenvalues_invariant_under_diagonal_phase_change():
    h = build_hamiltonian(_params(hyperfine=np.diag([1.0, 2.0, 12.4]), b_field=[3, 1, 50])).matrix
    d = np.diag(np.exp(1j * np.linspace(0, 5, 6)))
    assert np.allclose(eigenlevels(d @ h @ d.conj().T).values, eigenlevels(h).values, atol=1e-9)


def test_single_line_depth_equals_contrast():
    from sicnode.spincore import Transition, TransitionTable
    table = TransitionTable("electron", (Transition((0, 1), 100.0, 1.0, ()),))
    s = odmr_spectrum(table, 1.0, 0.3, np.array([100.0]))
    assert np.isclose(s.rel_pl[0], 0.7)


def test_two_resolved_dips_and_merged_limit():
    from scipy.signal import find_peaks
    table = transition_table(build_hamiltonian(_params()), "electron")
    grid = (D - 20, D + 20, 40001)
    s = odmr_spectrum(table, 1.0, 0.3, grid)
    peaks, _ = find_peaks(-s.rel_pl)
    assert len(peaks) == 2
    assert abs(np.diff(s.freq_mhz[peaks])[0] - 12.4) < 0.05
    merged = odmr_spectrum(table, 200.0, 0.3, grid)
    assert len(find_peaks(-merged.rel_pl)[0]) == 1


def test_empty_table_is_flat_and_lorentzian_area():
    from sicnode.spincore import TransitionTable, Transition
    flat = odmr_spectrum(TransitionTable("electron"), 1.0, 0.3, (0, 10, 11))
    assert np.all(flat.rel_pl == 1.0)
    table = TransitionTable("electron", (Transition((0, 1), 0.0, 1.0, ()),
                                         Transition((0, 2), 3.0, 0.5, ())))
    s = odmr_spectrum(table, 0.8, 0.3, (-4000, 4000, 800001))
    area = np.trapezoid(1.0 - s.rel_pl, s.freq_mhz)
    expected = np.pi * 0.8 * (0.3 * 1.0 + 0.3 * 0.5) / 2
    assert abs(area / expected - 1) < 0.01


def test_odmr_argument_checks():
    table = transition_table(build_hamiltonian(_params()), "electron")
    with pytest.raises(ValueError):
        odmr_spectrum(table, 0.0, 0.3, (0, 1, 3))
    with pytest.raises(ValueError):
        odmr_spectrum(table, 1.0, 1.5, (0, 1, 3))


def test_working_subspace_projection():
    h = build_hamiltonian(_params(b_field=[0, 0, 330.0]))
    ws = working_subspace(h)
    assert np.allclose(ws.matrix, h.matrix[2:, 2:])
    assert ws.discarded_coupling_norm == 0.0
    e = np.real(np.diag(ws.matrix))
    assert np.isclose(e[3] - e[2], abs(12.4 - 0.85e-3 * 330))


def test_transverse_hyperfine_reports_discarded_coupling():
    h = build_hamiltonian(_params(hyperfine=np.diag([2.0, 2.0, 12.4])))
    ws = working_subspace(h)
    assert ws.discards_coupling
    full = np.linalg.norm(h.matrix)
    kept = np.linalg.norm(ws.matrix)
    assert ws.discarded_coupling_norm > 0 and kept < full


def test_propagators_use_the_secular_part_only():
    from sicnode.pulses import Delay, RotatingFrame, element_propagator
    h4 = subspace_hamiltonian(_params(hyperfine=np.diag([2.0, 2.0, 12.4]), b_field=[0, 0, 10]))
    assert np.abs(h4[1, 2]) > 1.0
    frame = RotatingFrame.from_subspace(h4)
    u = element_propagator(Delay(0.3), frame, h4)
    u_sec = element_propagator(Delay(0.3), frame, np.diag(np.diag(h4)))
    assert np.array_equal(u, u_sec)
