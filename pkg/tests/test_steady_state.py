import math

import numpy as np
import pytest

from helpers import dip_linewidth
from wqed.ensemble import BinnedLayout, EnsembleSpec, build_bins, build_cqed_layout
from wqed.errors import IncompatibleOffsets, InvalidGrid, NoQubit, SingularSystem, SizeLimit
from wqed.modes import ModeSet, layout_modes
from wqed.spectral import SpectralLine, response
from wqed.steady_state import (
    DriveSpec,
    SpectrumTrace,
    check_uniform_response,
    exact_steady_transmission,
    make_grid,
    narrow_feature_mask,
    resolve_doublet,
    side_illumination_spectrum,
    solve_collective_steady,
    solve_linear_response,
    spectrum_scan,
    transmission_input_output,
    transmission_product,
)

LOR = SpectralLine.lorentzian(1.0)
GAU = SpectralLine.gaussian(1.0)
UNI = SpectralLine.uniform(1.0)


def spec(n, gamma_1d=1.0, gp=0.0, line=GAU, dz=0.0, **kw):
    return EnsembleSpec(n, gamma_1d, gp, line, delta_z=dz, **kw)


def test_decoupled_limit():
    lay = build_bins(spec(400, gamma_1d=1e-14, gp=0.1, dz=0.2), 40, seed=1)
    b = solve_collective_steady(lay, 0.3, DriveSpec(amplitude=2.0))
    w = response(GAU, 0.3, 0.1)
    omega = 2.0 * np.exp(1j * 2 * math.pi * lay.positions)
    np.testing.assert_allclose(b, -math.sqrt(10) * w * omega, rtol=1e-10)


def test_single_bin_lorentzian_scalar():
    n_gamma = 99.0
    lay = build_bins(spec(99, line=LOR), 1)
    b = solve_collective_steady(lay, 0.0)
    # 1x1 algebra: (1/W + i N G / 2) B = -sqrt(N) with 1/W = i gamma/2
    assert b[0] == pytest.approx(-math.sqrt(99) / (0.5j + 0.5j * n_gamma), rel=1e-14)
    assert transmission_input_output(b, lay) == pytest.approx(0.01, abs=1e-12)


def test_product_formula_scalar_and_limits():
    assert transmission_product(ModeSet(np.array([49.5j]), "x"), LOR, 0.0, np.array([0.0])).values[0] == \
        pytest.approx(0.01, abs=1e-15)
    empty = transmission_product(ModeSet(np.array([], dtype=complex), "x"), GAU, 0.1, np.linspace(-1, 1, 5))
    assert np.all(empty.values == 1)
    for line in (GAU, UNI):
        far = transmission_product(ModeSet(np.array([0.5j]), "x"), line, 0.0, np.array([-1e3, 1e3]))
        assert np.all(np.abs(np.abs(far.values) - 1) <= 1e-3)


def test_input_output_zero_field():
    lay = build_bins(spec(10, dz=0.1), 10)
    assert transmission_input_output(np.zeros(10), lay) == 1.0


def test_collapsed_layout_matches_scalar():
    lay = build_bins(spec(99_000, gamma_1d=1e-3, line=LOR), 1000)
    b = solve_collective_steady(lay, 0.0)
    assert transmission_input_output(b, lay) == pytest.approx(0.01, abs=1e-10)
    t = spectrum_scan(lay, [0.0], method="transfer").values[0]
    assert t == pytest.approx(0.01, abs=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_route_equivalence(seed):
    nu = 0.06 * (seed + 1)
    n = 1000 * 1000
    lay = build_bins(spec(n, gamma_1d=1e-3, gp=1e-3, line=GAU, dz=nu / (2 * math.pi)), 1000, seed)
    grid = np.linspace(-4, 4, 161)
    prod = transmission_product(layout_modes(lay), GAU, 1e-3, grid).values
    io = spectrum_scan(lay, grid, method="transfer").values
    assert np.max(np.abs(prod - io)) <= 1e-8
    for dc in grid[::40]:
        b = solve_collective_steady(lay, dc)
        assert abs(transmission_input_output(b, lay) - io[grid == dc][0]) <= 1e-8


def test_transfer_coherences_match_dense():
    lay = build_bins(spec(300, gp=0.2, dz=0.3), 30, seed=5)
    for kind in ("forward", "backward"):
        d = DriveSpec(kind, 1.5)
        grid = np.array([-0.7, 0.0, 0.4])
        fast = solve_collective_steady(lay, grid, d, method="transfer")
        for row, dc in zip(fast, grid):
            np.testing.assert_allclose(row, solve_collective_steady(lay, dc, d), rtol=1e-10, atol=1e-13)


def test_passivity_random_configs():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        line = [GAU, UNI, LOR][rng.integers(3)]
        m = int(rng.integers(1, 30))
        n = m * int(rng.integers(1, 1000))
        lay = build_bins(spec(n, gamma_1d=10 ** rng.uniform(-3, 0), gp=10 ** rng.uniform(-6, 0), line=line,
                              dz=rng.uniform(0, 1.5)), m, int(rng.integers(1 << 30)))
        t = spectrum_scan(lay, np.linspace(-5, 5, 21), method="transfer").values
        assert np.all(np.abs(t) ** 2 <= 1 + 1e-9)


def test_detuning_covariance():
    lay = build_bins(spec(5000, gamma_1d=1e-3, gp=0.01, dz=0.1), 50, seed=3)
    grid = np.linspace(-3, 3, 101)
    delta = 0.37
    a = spectrum_scan(lay, grid, method="dense").values
    b = spectrum_scan(lay.shifted(delta), grid + delta, method="dense").values
    assert np.max(np.abs(a - b)) <= 1e-10


def test_dense_scan_threads_and_single_point():
    lay = build_bins(spec(600, gamma_1d=0.01, gp=0.1, dz=0.1), 60, seed=2)
    grid = np.linspace(-2, 2, 9)
    one = spectrum_scan(lay, grid, method="dense")
    many = spectrum_scan(lay, grid, method="dense", threads=3)
    assert np.array_equal(one.values, many.values)
    single = spectrum_scan(lay, [0.5], method="dense").values
    b = solve_collective_steady(lay, 0.5)
    assert single[0] == transmission_input_output(b, lay)


def test_grid_validation():
    with pytest.raises(InvalidGrid):
        make_grid([1.0, 0.0])
    with pytest.raises(InvalidGrid):
        make_grid((1.0, 0.0, 5))
    with pytest.raises(InvalidGrid):
        SpectrumTrace(np.array([0.0, 0.0]), np.ones(2))
    assert make_grid((0.0, 1.0, 1)).tolist() == [0.0]


def test_singular_system():
    with pytest.raises(SingularSystem):
        solve_linear_response(np.zeros((2, 2), complex), np.array([1.0, 0.0]), np.ones(2))


def test_error_reports_detuning():
    lay = build_bins(spec(1, line=LOR), 1)
    lay = BinnedLayout(lay.positions, lay.bin_weight, lay.ensemble_id, lay.detuning_offset,
                       (spec(1, gamma_1d=1e-30, line=LOR),))
    # a lossless Lorentzian bin exactly on resonance with vanishing coupling is still regular
    spectrum_scan(lay, [0.0], method="dense")


def test_offsets_guard():
    mirror = spec(100, dz=0.0)
    cq = build_cqed_layout(mirror.with_(gamma_1d=1.0), spec(100, dz=0.0, detuning_offset=0.5), m_per_ensemble=10,
                           compensate=False)
    with pytest.raises(IncompatibleOffsets):
        check_uniform_response(cq.layout)


def test_exact_single_emitter_extinction():
    grid = np.array([-1.0, 0.0, 1.0])
    s = spec(1, line=SpectralLine.lorentzian(1e-12), gp=0.0)
    # one emitter on its own resonance reflects everything
    from wqed.steady_state import sample_emitters

    det = sample_emitters(s, 0)[1][0]
    t = exact_steady_transmission(s, 0, grid + det).values
    assert abs(t[1]) <= 1e-12


@pytest.mark.parametrize("method", ["transfer", "dense"])
def test_exact_half_wave_pair(method):
    # identical emitters half a wavelength apart: the bright combination reflects fully on resonance
    s = spec(2, gp=1e-9, line=SpectralLine.uniform(1e-200), dz=1.0, placement="equal")
    t = exact_steady_transmission(s, 0, [0.0], method=method).values[0]
    assert abs(t) <= 1e-8
    # brute-force 2x2 solve of the same problem
    mat = 0.5j * np.array([[1, -1], [-1, 1]])
    b = np.linalg.solve(mat + 0.5j * 1e-9 * np.eye(2), -np.exp(1j * np.pi * np.array([0.0, 1.0])))
    assert t == pytest.approx(1 + 0.5j * (b[0] - b[1]), abs=1e-12)


def test_exact_routes_agree():
    s = spec(200, gp=1.0, line=SpectralLine.gaussian(10.0), dz=0.1)
    grid = np.linspace(-150, 150, 31)
    a = exact_steady_transmission(s, 4, grid, method="transfer").values
    b = exact_steady_transmission(s, 4, grid, method="dense").values
    assert np.max(np.abs(a - b)) <= 1e-10


def test_exact_size_limit():
    with pytest.raises(SizeLimit):
        exact_steady_transmission(spec(20_000), 0, [0.0])


def test_narrow_feature_mask():
    y = np.zeros(10)
    y[5] = 0.5
    mask = narrow_feature_mask(y)
    # the spike and its two shoulders are flagged, each with both neighbours
    assert mask.tolist() == [True] * 3 + [False] * 5 + [True] * 2


def _cavity(n_q, n_c, mirror_offset=0.0, seed=0, dz=0.0, m=10, gamma_1d=1.0, qubit_g=None):
    line = SpectralLine.gaussian(1.0)
    mirror = EnsembleSpec(n_c, gamma_1d, 1e-4, line, delta_z=dz, detuning_offset=mirror_offset)
    qubit = EnsembleSpec(n_q, qubit_g or gamma_1d, 1e-4, line, delta_z=dz)
    return build_cqed_layout(mirror, qubit, m_per_ensemble=m, seed=seed, compensate=False)


def test_side_illumination_ports_dense_vs_transfer():
    cq = _cavity(100, 200, dz=0.05, m=20)
    grid = np.linspace(-30, 30, 61)
    for port in ("right", "left", "both"):
        a = side_illumination_spectrum(cq, grid, method="transfer", port=port, normalize=False).values
        b = side_illumination_spectrum(cq, grid, method="dense", port=port, normalize=False).values
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-14 * b.max())


def test_side_illumination_silent_qubit():
    cq = _cavity(100, 200, qubit_g=1e-30)
    s = side_illumination_spectrum(cq, np.linspace(-5, 5, 11), normalize=False).values
    assert np.max(s) <= 1e-25


def test_side_illumination_doublet_near_2g():
    # N_Q G = 40 gamma_inh, g = sqrt(N_Q N_C / 2) G = 40 gamma_inh
    cq = _cavity(40, 80, m=10)
    grid = np.linspace(-150, 150, 3001)
    s = side_illumination_spectrum(cq, grid).values
    d = resolve_doublet(grid, s)
    assert d is not None
    assert d.splitting == pytest.approx(80.0, rel=0.2)
    assert d.peak_to_valley >= 2


def test_side_illumination_detuned_mirrors():
    # mirrors far off resonance: emission follows the bare qubit ensemble
    grid = np.linspace(-60, 60, 241)
    cq = _cavity(40, 80, mirror_offset=1e6)
    s = side_illumination_spectrum(cq, grid).values
    bare = EnsembleSpec(40, 1.0, 1e-4, SpectralLine.gaussian(1.0), role="qubit")
    lay = build_bins(bare, 10)
    ref = side_illumination_spectrum(lay, grid).values
    assert np.max(np.abs(s - ref)) <= 1e-3
    assert resolve_doublet(grid, s) is None


def test_no_qubit():
    lay = build_bins(spec(10), 10)
    with pytest.raises(NoQubit):
        side_illumination_spectrum(lay, [0.0])


@pytest.mark.parametrize("omega", [3.0, 4.0, 5.0])
def test_dip_linewidth_tail(omega):
    fitted, predicted = dip_linewidth(GAU, omega, 0.1, 0.01)
    assert fitted == pytest.approx(predicted, rel=0.15)


@pytest.mark.parametrize("kind", ["lorentzian", "gaussian", "uniform"])
def test_extinction_monotone(kind):
    line = getattr(SpectralLine, kind)(1.0)
    grid = np.linspace(-3, 3, 601)
    mins = []
    for ratio in (0.1, 1, 10, 100):
        lay = build_bins(spec(1000, gamma_1d=ratio / 1000, gp=1e-6, line=line), 1)
        mins.append(np.min(spectrum_scan(lay, grid).power))
    assert all(b < a for a, b in zip(mins, mins[1:]))
