import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.linalg import expm

from pulsecascade.analysis import (
    WignerField,
    fit_cat,
    min_variance,
    mode_moments,
    mode_overlap,
    quadrature_variance,
    reduced_density,
    state_fidelity,
    variance_scan,
    wigner,
    write_variance_scan,
    yurke_stoler_cat,
)
from pulsecascade.errors import AccuracyWarning, ConfigurationError
from pulsecascade.fock import (
    CompositeSpace,
    DensityMatrix,
    FockWindow,
    annihilation,
    coherent_state,
    coherent_vector,
    fock_state,
    product_state,
)
from pulsecascade.pulses import TimeGrid, cavity_output_mode, gaussian_mode


def single(vec, window):
    return DensityMatrix.from_vector(CompositeSpace.single(window), vec)


def squeezed_vacuum(r, window=FockWindow(0, 40), rotation=0.0):
    a = annihilation(window).data
    S = expm(0.5 * r * (a @ a - a.conj().T @ a.conj().T))
    R = np.diag(np.exp(-1j * rotation * window.numbers))
    vac = np.zeros(window.size)
    vac[0] = 1
    return single(R @ S @ vac, window)


# -- reduced states ------------------------------------------------------------------


def test_reduced_state_of_product():
    a = coherent_state(0.7, FockWindow(0, 10), min_weight=1 - 1e-3)
    b = fock_state(1, FockWindow(0, 3))
    rho = product_state(a, b, labels=("a", "b"))
    np.testing.assert_allclose(reduced_density(rho, "a").data, a.data, atol=1e-14)
    np.testing.assert_allclose(reduced_density(rho, 1).data, b.data, atol=1e-14)
    assert reduced_density(rho, "b").space.labels == ("b",)


def test_reduced_state_of_entangled_pair():
    sp = CompositeSpace((FockWindow(0, 2), FockWindow(0, 2)))
    psi = np.array([0, 1, 1, 0]) / np.sqrt(2)
    red = reduced_density(DensityMatrix.from_vector(sp, psi), 0)
    np.testing.assert_allclose(red.data, np.eye(2) / 2)
    assert red.purity() == pytest.approx(0.5)


# -- quadratures ---------------------------------------------------------------------


def test_coherent_variance_is_half():
    rho = coherent_state(1.3 + 0.4j, FockWindow(0, 25))
    phi = np.linspace(0, np.pi, 13)
    np.testing.assert_allclose(quadrature_variance(rho, phi), 0.5, atol=1e-6)


def test_fock_one_variance():
    rho = fock_state(1, FockWindow(0, 3))
    assert quadrature_variance(rho, 0.3) == pytest.approx(1.5)


def test_squeezed_vacuum_variance():
    r = 0.6
    rho = squeezed_vacuum(r)
    assert quadrature_variance(rho, 0.0) == pytest.approx(np.exp(-2 * r) / 2, rel=1e-8)
    assert quadrature_variance(rho, np.pi / 2) == pytest.approx(np.exp(2 * r) / 2, rel=1e-8)
    phi, var = min_variance(rho)
    assert var == pytest.approx(np.exp(-2 * r) / 2, rel=1e-8)
    assert min(phi, np.pi - phi) < 1e-4


@pytest.mark.parametrize("rotation", [0.2, 0.9, 2.5])
def test_min_variance_follows_rotation(rotation):
    r = 0.4
    phi0, var0 = min_variance(squeezed_vacuum(r))
    phi, var = min_variance(squeezed_vacuum(r, rotation=rotation))
    assert var == pytest.approx(var0, rel=1e-8)
    delta = (phi - phi0 - rotation) % np.pi
    assert min(delta, np.pi - delta) < 1e-4


def test_flat_landscape_returns_zero_angle():
    phi, var = min_variance(fock_state(2, FockWindow(0, 4)))
    assert phi == 0.0
    assert var == pytest.approx(2.5)


def test_variance_scan_grid():
    phi, var = variance_scan(coherent_state(0.5, FockWindow(0, 10)), step=0.01)
    assert phi[0] == 0 and phi[-1] < np.pi
    assert var.shape == phi.shape


@given(st.integers(0, 2**31 - 1), st.floats(0, np.pi))
@settings(max_examples=30, deadline=None)
def test_uncertainty_relation(seed, phi):
    rng = np.random.default_rng(seed)
    w = FockWindow(0, 8)
    g = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    # weight the low Fock states so the truncated [a, a^dag] stays close to 1
    g *= np.exp(-0.5 * np.arange(8))[:, None]
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    state = DensityMatrix(CompositeSpace.single(w), rho)
    top = rho[-1, -1].real
    v1 = quadrature_variance(state, phi)
    v2 = quadrature_variance(state, phi + np.pi / 2)
    # the truncated commutator loses 8 * rho_77 at the top edge
    assert v1 * v2 >= 0.25 * (1 - 8 * top) ** 2 - 1e-12


def test_moments_of_coherent_state():
    alpha = 0.8 - 0.3j
    m1, m2, n = mode_moments(coherent_state(alpha, FockWindow(0, 20)))
    assert m1 == pytest.approx(alpha, abs=1e-8)
    assert m2 == pytest.approx(alpha**2, abs=1e-8)
    assert n == pytest.approx(abs(alpha) ** 2, abs=1e-8)


def test_moments_need_single_mode():
    rho = product_state(fock_state(0, FockWindow(0, 2)), fock_state(0, FockWindow(0, 2)))
    with pytest.raises(ConfigurationError):
        mode_moments(rho)


# -- Wigner ---------------------------------------------------------------------------


def test_wigner_vacuum_origin():
    W = wigner(fock_state(0, FockWindow(0, 3)), [0.0], [0.0])
    assert W.W[0, 0] == pytest.approx(1 / np.pi, rel=1e-10)


def test_wigner_fock_one_origin():
    W = wigner(fock_state(1, FockWindow(0, 3)), [0.0], [0.0])
    assert W.W[0, 0] == pytest.approx(-1 / np.pi, rel=1e-10)


def test_wigner_coherent_gaussian():
    alpha = 1.2 + 0.5j
    x = np.linspace(-3, 4, 15)
    p = np.linspace(-3, 3, 13)
    W = wigner(coherent_state(alpha, FockWindow(0, 30)), x, p)
    x0, p0 = np.sqrt(2) * alpha.real, np.sqrt(2) * alpha.imag
    X, P = np.meshgrid(x, p, indexing="ij")
    np.testing.assert_allclose(W.W, np.exp(-((X - x0) ** 2) - (P - p0) ** 2) / np.pi, atol=1e-10)


def test_wigner_normalized():
    W = wigner(coherent_state(1.5j, FockWindow(0, 25)))
    assert W.integral() == pytest.approx(1.0, abs=1e-3)


def test_cat_has_negative_fringes():
    w = FockWindow(0, 30)
    W = wigner(single(yurke_stoler_cat(2.0, w), w))
    assert W.W.min() < -0.2
    assert W.integral() == pytest.approx(1.0, abs=1e-3)


def test_wigner_warns_on_edge_weight():
    w = FockWindow(0, 6)
    vec = coherent_vector(2.0, w, min_weight=0.5)
    with pytest.warns(AccuracyWarning):
        wigner(single(vec / np.linalg.norm(vec), w), [0.0], [0.0])


def test_wigner_offset_window_matches_full():
    # a state living inside an offset window gives the same field as in a full window
    full = fock_state(3, FockWindow(0, 6))
    off = fock_state(3, FockWindow(2, 3))
    x = np.linspace(-2, 2, 5)
    np.testing.assert_allclose(wigner(off, x, x).W, wigner(full, x, x).W, atol=1e-12)


def test_wigner_csv(tmp_path):
    W = WignerField(np.array([0.0, 1.0]), np.array([-1.0]), np.array([[0.1], [0.2]]))
    path = tmp_path / "w.csv"
    W.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,p,W"
    assert lines[2] == "1.0,-1.0,0.2"
    assert W.value_at(0.9, -1.0) == 0.2


# -- fidelities and cats --------------------------------------------------------------


def test_fidelity_coherent_with_cat():
    alpha = 1.1
    w = FockWindow(0, 30)
    rho = coherent_state(alpha, w)
    fid = state_fidelity(rho, yurke_stoler_cat(alpha, w))
    assert fid == pytest.approx((1 + np.exp(-4 * alpha**2)) / 2, abs=1e-8)


def test_fidelity_dimension_check():
    with pytest.raises(ConfigurationError):
        state_fidelity(fock_state(0, FockWindow(0, 3)), np.ones(4))


def test_cat_is_normalized():
    vec = yurke_stoler_cat(0.3 - 1.0j, FockWindow(0, 25))
    assert np.linalg.norm(vec) == pytest.approx(1.0)


def test_fit_cat_recovers_amplitude():
    w = FockWindow(0, 30)
    alpha = 1.5 * np.exp(0.3j)
    fitted, fid = fit_cat(single(yurke_stoler_cat(alpha, w), w))
    assert fid > 1 - 1e-8
    assert fitted == pytest.approx(alpha, abs=1e-4)


def test_fit_cat_of_coherent_state_is_poor():
    _, fid = fit_cat(coherent_state(2.0, FockWindow(0, 30)))
    assert fid < 0.6


# -- mode overlaps -------------------------------------------------------------------


def test_overlap_of_delayed_gaussians():
    g = TimeGrid.span(0.0, 16.0, 1e-3)
    a = gaussian_mode(6.0, 1.0, g)
    b = gaussian_mode(7.5, 1.0, g)
    assert mode_overlap(a, a) == pytest.approx(1.0, abs=1e-9)
    assert mode_overlap(a, b).real == pytest.approx(np.exp(-(1.5**2) / 4), abs=1e-9)


def test_overlap_with_reflected_pulse():
    # spectral oracle: <u | r u> = int |U(w)|^2 Re r(w) dw / 2 pi for a Gaussian with tau = 1
    g = TimeGrid.span(0.0, 16.0, 1e-3)
    u = gaussian_mode(4.0, 1.0, g)
    v, _ = cavity_output_mode(u, 1.0)
    oracle, _ = quad(lambda w: np.exp(-(w**2)) / np.sqrt(np.pi) * (w**2 - 0.25) / (w**2 + 0.25), -np.inf, np.inf)
    ov = mode_overlap(u, v)
    assert ov.real == pytest.approx(oracle, abs=1e-4)
    assert abs(ov) < 1


def test_overlap_grid_mismatch():
    a = gaussian_mode(4.0, 1.0, TimeGrid.span(0.0, 12.0, 1e-3))
    b = gaussian_mode(4.0, 1.0, TimeGrid.span(0.0, 12.0, 2e-3))
    with pytest.raises(ConfigurationError):
        mode_overlap(a, b)


def test_variance_scan_csv(tmp_path):
    path = tmp_path / "scan.csv"
    write_variance_scan(path, [0.0, 0.5], [0.5, 0.25])
    assert path.read_text().splitlines() == ["phi,var", "0.0,0.5", "0.5,0.25"]
