import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from pulsecascade.dynamics import (
    SystemSpec,
    Trajectory,
    cascaded_generator,
    cascaded_hamiltonian,
    cascaded_space,
    dissipator,
    integrate,
    jump_operator_L0,
    read_snapshot,
    write_snapshot,
)
from pulsecascade.errors import ConfigurationError, IntegrationError, LeakageWarning
from pulsecascade.fock import (
    CompositeSpace,
    DensityMatrix,
    FockWindow,
    annihilation,
    coherent_state,
    fock_state,
    mode_operator,
    product_state,
)
from pulsecascade.pulses import TimeGrid, gaussian_mode, make_schedule

SIGMA = np.array([[0, 1], [0, 0]], dtype=complex)
I2 = np.eye(2)


@pytest.fixture(scope="module")
def sched():
    grid = TimeGrid.span(0.0, 12.0, 1e-3).refined(4)
    return make_schedule(gaussian_mode(4.0, 1.0, grid))


def cascade_state(u_state, c_state, v_state):
    return product_state(u_state, c_state, v_state, labels=("u", "c", "v"))


def test_dissipator_examples():
    a = annihilation(FockWindow(0, 3)).data
    np.testing.assert_array_equal(dissipator(np.zeros((3, 3)), np.eye(3) / 3), 0)
    vac = fock_state(0, FockWindow(0, 3))
    np.testing.assert_array_equal(dissipator(a, vac), 0)
    one = fock_state(1, FockWindow(0, 3))
    np.testing.assert_allclose(dissipator(a, one), np.diag([1, -1, 0]))


def test_dissipator_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        dissipator(np.zeros((2, 2)), np.eye(3) / 3)


def test_hamiltonian_is_hermitian(sched):
    spec = SystemSpec()
    sp = cascaded_space(FockWindow(0, 3), spec, FockWindow(0, 3))
    for t in np.linspace(0, 12, 37):
        h = cascaded_hamiltonian(spec, sched, t, sp).data
        assert np.max(np.abs(h - h.conj().T)) < 1e-12


def test_hamiltonian_reduces_to_scatterer(sched):
    hs = np.diag([0.0, 0.3])
    spec = SystemSpec(gamma=0.0, hamiltonian=hs)
    sp = cascaded_space(FockWindow(0, 2), spec, FockWindow(0, 2))
    # before g_v switches on the u-v product vanishes
    h = cascaded_hamiltonian(spec, sched, 0.0, sp).data
    np.testing.assert_allclose(h, np.kron(np.kron(I2, hs), I2), atol=1e-15)


def test_two_by_two_by_two_brute_force(sched):
    spec = SystemSpec(gamma=0.7)
    sp = cascaded_space(FockWindow(0, 2), spec, FockWindow(0, 2))
    au = np.kron(np.kron(SIGMA, I2), I2)
    c = np.kron(np.kron(I2, SIGMA), I2)
    av = np.kron(np.kron(I2, I2), SIGMA)
    dag = lambda m: m.conj().T
    for t in (2.0, 4.0, 6.3):
        gu, gv = sched.at(t)
        sg = np.sqrt(0.7)
        x = sg * gu * dag(au) @ c + sg * np.conj(gv) * dag(c) @ av + gu * np.conj(gv) * dag(au) @ av
        h_ref = 0.5j * (x - dag(x))
        np.testing.assert_allclose(cascaded_hamiltonian(spec, sched, t, sp).data, h_ref, atol=1e-14)
        l_ref = sg * c + np.conj(gu) * au + np.conj(gv) * av
        np.testing.assert_allclose(jump_operator_L0(spec, sched, t, sp).data, l_ref, atol=1e-14)


def test_jump_operator_before_pulse(sched):
    spec = SystemSpec()
    sp = cascaded_space(FockWindow(0, 2), spec, FockWindow(0, 2))
    L = jump_operator_L0(spec, sched, 0.0, sp).data
    c = mode_operator(sp, "c").data
    # only the u term survives, with the tiny pulse amplitude at t = 0
    assert np.max(np.abs(L - c)) < 1e-3
    vac = cascade_state(fock_state(0, FockWindow(0, 2)), fock_state(0, FockWindow(0, 2)), fock_state(0, FockWindow(0, 2)))
    L = jump_operator_L0(spec, sched, 4.0, sp).data
    np.testing.assert_array_equal(L @ vac.data @ L.conj().T, 0)


def test_integrate_frozen_state():
    sp = CompositeSpace.single(FockWindow(0, 3))
    rho0 = coherent_state(0.4, FockWindow(0, 3), min_weight=0.99)
    tr = integrate(np.zeros((3, 3)), [], rho0, TimeGrid.span(0, 1, 0.01))
    np.testing.assert_allclose(tr.final.data, rho0.data, atol=1e-15)


def test_integrate_exponential_decay():
    w = FockWindow(0, 2)
    sp = CompositeSpace.single(w)
    kappa = 0.8
    L = np.sqrt(kappa) * annihilation(w).data
    n = np.diag([0.0, 1.0])
    tr = integrate(np.zeros((2, 2)), [L], fock_state(1, w), TimeGrid.span(0, 5, 1e-3), {"n": n}, sample_every=10)
    np.testing.assert_allclose(tr["n"].real, np.exp(-kappa * tr.times), atol=1e-6)
    assert tr.backend == "sectors"


def test_trace_error_on_non_trace_preserving_generator():
    w = FockWindow(0, 2)
    bad = np.array([[0, 0], [0, -1j]])
    with pytest.raises(IntegrationError, match="reduce the time step"):
        integrate(bad, [], fock_state(1, w), TimeGrid.span(0, 1, 0.01), backend="dense")


def _liouvillian(H, Ls):
    # column-stacking vec: vec(A X B) = (B^T kron A) vec(X)
    n = H.shape[0]
    eye = np.eye(n)
    out = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for L in Ls:
        LdL = L.conj().T @ L
        out += np.kron(L.conj(), L) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye)
    return out


def test_single_photon_matches_expm_oracle(sched):
    spec = SystemSpec()
    w = FockWindow(0, 2)
    sp = cascaded_space(w, spec, w)
    rho0 = cascade_state(fock_state(1, w), fock_state(0, w), fock_state(0, w))
    H, Ls = cascaded_generator(spec, sched, sp)
    grid = TimeGrid.span(0.0, 10.0, 1e-3)
    nc = mode_operator(sp, "c").dag() @ mode_operator(sp, "c")
    tr = integrate(H, Ls, rho0, grid, {"nc": nc}, sample_every=100)

    # piecewise-constant propagators at dt/10, generators evaluated at sub-step midpoints
    h = grid.dt / 10
    mids = np.arange(grid.steps * 10) * h + 0.5 * h
    vec = rho0.data.reshape(-1, order="F")
    nc_ref = [vec.reshape(8, 8, order="F")[np.diag_indices(8)] @ np.diag(nc.data).real]
    chunk = 1000
    for start in range(0, len(mids), chunk):
        gens = np.stack([_liouvillian(H.dense(t), [L.dense(t) for L in Ls]) for t in mids[start : start + chunk]])
        props = expm(h * gens)
        for k, P in enumerate(props):
            vec = P @ vec
            if (start + k + 1) % 1000 == 0:
                nc_ref.append(np.real(np.diag(vec.reshape(8, 8, order="F")) @ np.diag(nc.data)))
    np.testing.assert_allclose(tr["nc"].real, nc_ref, atol=1e-5)
    assert tr["nc"].real.max() > 0.3


def test_trace_and_positivity(sched):
    spec = SystemSpec()
    w = FockWindow(0, 4)
    sp = cascaded_space(w, spec, w)
    rho0 = cascade_state(fock_state(3, w), fock_state(0, FockWindow(0, 2)), fock_state(0, w))
    H, Ls = cascaded_generator(spec, sched, sp)
    tr = integrate(H, Ls, rho0, TimeGrid.span(0.0, 12.0, 1e-3), snapshots=range(0, 12001, 2000))
    assert tr.trace_drift <= 1e-6
    assert tr.min_eigenvalue >= -1e-6
    assert len(tr.states) == 7


@pytest.mark.parametrize("c_exc, v_exc", [(1, 0), (0, 1), (1, 1)])
def test_no_backflow(sched, c_exc, v_exc):
    spec = SystemSpec()
    w = FockWindow(0, 3)
    sp = cascaded_space(w, spec, w)
    rho0 = cascade_state(fock_state(0, w), fock_state(c_exc, FockWindow(0, 2)), fock_state(v_exc, w))
    H, Ls = cascaded_generator(spec, sched, sp)
    au = mode_operator(sp, "u")
    tr = integrate(H, Ls, rho0, TimeGrid.span(0.0, 12.0, 1e-3), {"nu": au.dag() @ au}, sample_every=10)
    assert np.max(np.abs(tr["nu"])) <= 1e-8


def test_instant_decay_law(sched):
    spec = SystemSpec()
    w = FockWindow(0, 4)
    sp = cascaded_space(FockWindow(0, 1), spec, w)
    beta0 = 0.05
    start = sched.v_start
    grid = TimeGrid.span(0.0, 12.0, 1e-3)
    i0 = int(np.ceil(sched.t_eps / grid.dt))
    sub = grid.starting_at(i0)
    t_start = sub.t0
    rho0 = cascade_state(fock_state(0, FockWindow(0, 1)), fock_state(0, FockWindow(0, 2)), coherent_state(beta0, w))
    H, Ls = cascaded_generator(spec, sched, sp)
    av = mode_operator(sp, "v")
    tr = integrate(H, Ls, rho0, sub, {"av": av}, sample_every=50)
    F = sched.v.cumulative()
    Ft = np.interp(tr.times, sched.grid.times, F)
    F0 = np.interp(t_start, sched.grid.times, F)
    expected = beta0 * np.sqrt(F0 / Ft)
    np.testing.assert_allclose(tr["av"].real, expected, rtol=1e-3)
    assert start > 0


def test_backends_agree(sched):
    spec = SystemSpec()
    w = FockWindow(0, 3)
    sp = cascaded_space(w, spec, w)
    rho0 = cascade_state(coherent_state(0.5, w, min_weight=0.99), fock_state(0, FockWindow(0, 2)), fock_state(0, w))
    H, Ls = cascaded_generator(spec, sched, sp)
    grid = TimeGrid.span(0.0, 8.0, 1e-3)
    a = integrate(H, Ls, rho0, grid, backend="dense")
    b = integrate(H, Ls, rho0, grid, backend="sectors")
    assert a.backend == "dense" and b.backend == "sectors"
    np.testing.assert_allclose(a.final.data, b.final.data, atol=1e-12)


def test_sector_backend_rejects_mixing_generator():
    w = FockWindow(0, 3)
    a = annihilation(w).data
    x = a + a.conj().T
    with pytest.raises(ConfigurationError):
        integrate(x, [], fock_state(0, w), TimeGrid.span(0, 1, 0.1), backend="sectors")
    tr = integrate(x, [], fock_state(0, w), TimeGrid.span(0, 1, 0.01))
    assert tr.backend == "dense"


def test_leakage_warning():
    w = FockWindow(0, 2)
    a = annihilation(w).data
    x = a + a.conj().T
    with pytest.warns(LeakageWarning, match="edge"):
        tr = integrate(x, [], fock_state(0, w), TimeGrid.span(0, 1, 0.01), monitor=[0])
    assert tr.edge_population["mode"] > 0.5


def test_trajectory_csv(tmp_path):
    w = FockWindow(0, 2)
    n = np.diag([0.0, 1.0])
    tr = integrate(np.zeros((2, 2)), [annihilation(w).data], fock_state(1, w), TimeGrid.span(0, 1, 0.1), {"n": n, "a": annihilation(w).data + 1j * n})
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,n,a_re,a_im"
    assert len(lines) == 12
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 1], tr["n"].real)


def test_snapshot_roundtrip(tmp_path):
    rho = coherent_state(0.3 + 0.2j, FockWindow(0, 5), min_weight=0.99)
    path = tmp_path / "rho.bin"
    write_snapshot(path, rho)
    raw = path.read_bytes()
    assert int.from_bytes(raw[:8], "little") == 5
    assert len(raw) == 8 + 16 * 25
    np.testing.assert_array_equal(read_snapshot(path), rho.data)
