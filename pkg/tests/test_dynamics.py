import math

import numpy as np
import pytest
from scipy.linalg import expm

from wqed.cqed import cqed_eigenvalues, reduced_evolve
from wqed.dynamics import (
    assemble_generator,
    cavity_amplitude,
    dopri5,
    ensemble_amplitude,
    evolve,
    oscillation_frequency,
    rabi_trace,
    symmetric_state,
)
from wqed.ensemble import EnsembleSpec, FrequencyGrid, build_bins, build_cqed_layout
from wqed.errors import SizeLimit, StepFailure
from wqed.spectral import SpectralLine
from wqed.steady_state import DriveSpec, solve_collective_steady

GAU = SpectralLine.gaussian(1.0)


def single_node(delta):
    return FrequencyGrid(nodes=np.array([float(delta)]), weights=np.array([1.0]))


def cavity(kind, n_q, n_c, gamma_inh, m=1, dz=0.0, gp=0.0, seed=0):
    line = getattr(SpectralLine, kind)(gamma_inh)
    mirror = EnsembleSpec(n_c, 1.0, gp, line, delta_z=dz)
    qubit = EnsembleSpec(n_q, 1.0, gp, line, delta_z=dz)
    return build_cqed_layout(mirror, qubit, m_per_ensemble=m, seed=seed)


def test_scalar_free_evolution():
    lay = build_bins(EnsembleSpec(1, 1e-300, 0.2, GAU), 1)
    # the rotating-frame detuning is delta_c minus the emitter detuning
    gen = assemble_generator(lay, [single_node(-1.5)])
    times = np.linspace(0, 50, 201)  # ten lifetimes of 2/G'
    tr = evolve(gen, np.ones(1), times, rel_tol=1e-9, abs_tol=1e-14)
    exact = np.exp((1.5j - 0.1) * times)
    assert np.max(np.abs(tr.values[:, 0] - exact) / np.abs(exact)) <= 1e-7


def test_rank_one_superradiant_decay():
    n = 500
    lay = build_bins(EnsembleSpec(n, 1.0, 0.0, GAU), 50)
    gen = assemble_generator(lay, [single_node(0.0)])
    x0 = symmetric_state(gen, 0)
    times = np.linspace(0, 10 / n, 41)
    tr = evolve(gen, x0, times, rel_tol=1e-10, abs_tol=1e-14, driven=False, observable=ensemble_amplitude(gen, 0))
    np.testing.assert_allclose(np.abs(tr.values), np.exp(-0.5 * n * times), rtol=1e-8, atol=1e-12)


def test_zero_state_stays_zero():
    lay = build_bins(EnsembleSpec(100, 1.0, 0.1, GAU, delta_z=0.1), 10)
    gen = assemble_generator(lay, n_f=8)
    tr = evolve(gen, np.zeros(gen.dim), np.linspace(0, 1, 5))
    assert np.all(tr.values == 0)


def small_generator(drive=None, delta_c=0.0):
    line = SpectralLine.uniform(2.0)
    lay = build_bins(EnsembleSpec(60, 0.3, 0.4, line, delta_z=0.3), 12, seed=9)
    return assemble_generator(lay, n_f=10, drive=drive, delta_c=delta_c)


def test_matrix_free_matches_dense():
    gen = small_generator()
    a = gen.dense()
    x = np.random.default_rng(1).normal(size=gen.dim) + 1j
    assert np.max(np.abs(a @ x - gen.apply(x, driven=False).reshape(-1))) <= 1e-12 * np.abs(a).max() * gen.dim


def test_dissipative_generator():
    a = small_generator().dense()
    herm = 0.5 * (a + a.conj().T)
    assert np.linalg.eigvalsh(herm).max() <= 1e-9 * np.linalg.norm(a, 2)


def test_steady_state_matches_frequency_domain():
    drive = DriveSpec("forward", 0.7)
    gen = small_generator(drive, delta_c=0.35)
    x = gen.steady_state(drive).reshape(-1)
    assert np.linalg.norm(gen.apply(x)) <= 1e-8 * np.linalg.norm(gen.source)
    # direct dense solve of A x + b = 0 as an independent check
    direct = np.linalg.solve(gen.dense(), -gen.source.reshape(-1))
    np.testing.assert_allclose(x, direct, rtol=1e-8, atol=1e-12)
    # bin coherences equal the frequency-domain solve with the discrete line
    resp = {0: gen.discrete_response(0)}
    b = solve_collective_steady(gen.layout, 0.35, drive, responses=resp)
    np.testing.assert_allclose(gen.bin_projection(x), b, rtol=1e-8, atol=1e-12)


def test_long_time_evolution_converges():
    drive = DriveSpec("forward", 1.0)
    gen = small_generator(drive, delta_c=-0.2)
    target = gen.steady_state(drive).reshape(-1)
    # slowest decay rate is G'/2 = 0.2: transients reach 1e-8 by t ~ 92
    tr = evolve(gen, np.zeros(gen.dim), np.array([0.0, 100.0]), rel_tol=1e-10, abs_tol=1e-14)
    assert np.linalg.norm(tr.values[-1] - target) <= 1e-6 * np.linalg.norm(target)


def test_undriven_norm_monotone():
    gen = small_generator()
    x0 = np.random.default_rng(2).normal(size=gen.dim).astype(complex)
    tr = evolve(gen, x0, np.linspace(0, 20, 11), driven=False, track_norm=True)
    norms = np.array([v for _, v in tr.stats["norms"]])
    assert np.all(norms[1:] <= norms[:-1] * (1 + 1e-8))


def test_rabi_lorentzian_matches_reduced_model():
    n_q, n_c, g_inh = 20, 40, 5.0
    cq = cavity("lorentzian", n_q, n_c, g_inh)
    g = math.sqrt(n_q * n_c / 2)
    times = np.linspace(0, 4 * math.pi / (2 * g), 301)
    full = rabi_trace(cq, times, n_f=200, rel_tol=1e-8)
    p_q, p_c = reduced_evolve(n_q, n_c, 1.0, g_inh, times)
    assert np.max(np.abs(full.values - p_q.values)) <= 0.02
    gen = assemble_generator(cq.layout, n_f=200)
    x0 = symmetric_state(gen, cq.qubit_id)
    tr = evolve(gen, x0, times, 1e-8, 1e-12, driven=False, observable=cavity_amplitude(gen, cq))
    assert np.max(np.abs(np.abs(tr.values) ** 2 - p_c.values)) <= 0.02
    bright = evolve(gen, x0, times, 1e-8, 1e-12, driven=False,
                    observable=cavity_amplitude(gen, cq, "bright"))
    assert np.max(np.abs(bright.values)) <= 1e-8


def test_free_induction_decay():
    # without waveguide coupling the symmetric coherence dephases as sum_q w_q exp(i D_q t)
    line = GAU
    lay = build_bins(EnsembleSpec(10, 1e-300, 0.05, line, role="qubit"), 2)
    times = np.linspace(0, 6, 121)
    tr = rabi_trace(lay, times, n_f=40, rel_tol=1e-9, abs_tol=1e-14)
    gen = assemble_generator(lay, n_f=40)
    w, d = gen.weights[0], gen.nodes[0]
    amp = np.exp(-0.025 * times) * np.sum(w[None, :] * np.exp(1j * np.outer(-times, d)), axis=1)
    np.testing.assert_allclose(tr.values, np.abs(amp) ** 2, atol=1e-7)


@pytest.mark.parametrize("kind", ["gaussian", "uniform"])
def test_frequency_discretization_convergence(kind):
    n_q, n_c, g_inh = 50, 100, 10.0
    cq = cavity(kind, n_q, n_c, g_inh, gp=0.01)
    lam = cqed_eigenvalues(n_q, n_c, 1.0, g_inh).lambda_plus.real
    times = np.linspace(0, 2 * math.pi / lam, 201)  # two Rabi periods of P
    a = rabi_trace(cq, times, n_f=100).values
    b = rabi_trace(cq, times, n_f=200).values
    assert np.max(np.abs(a - b)) <= 0.01


def test_tolerance_scaling():
    cq = cavity("gaussian", 50, 100, 10.0, m=25, dz=0.05, gp=0.01)
    times = np.linspace(0, 0.6, 121)
    coarse = rabi_trace(cq, times, n_f=50, rel_tol=1e-6, abs_tol=1e-9)
    fine = rabi_trace(cq, times, n_f=50, rel_tol=5e-7, abs_tol=1e-9)
    assert np.max(np.abs(coarse.values - fine.values)) <= coarse.stats["p_error_estimate"]


def test_deterministic():
    cq = cavity("uniform", 10, 20, 2.0, m=10, dz=0.05)
    times = np.linspace(0, 1, 11)
    a = rabi_trace(cq, times, n_f=20)
    b = rabi_trace(cq, times, n_f=20)
    assert np.array_equal(a.values, b.values)


def test_integrator_against_expm():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6)) - 3 * np.eye(6)
    y0 = rng.normal(size=6) + 0j
    times = np.linspace(0, 2, 9)
    out, stats = dopri5(lambda t, y: a @ y, y0, times, rtol=1e-10, atol=1e-14)
    for t, y in zip(times, out):
        np.testing.assert_allclose(y, expm(a * t) @ y0, rtol=1e-7, atol=1e-12)
    assert stats.steps > 0 and stats.fev >= 6 * stats.steps


def test_step_failure_and_tolerance_bounds():
    with pytest.raises(StepFailure) as err:
        dopri5(lambda t, y: -1e6 * y, np.ones(1), [0.0, 1.0], rtol=1e-6, max_steps=50)
    assert err.value.t_reached is not None and err.value.t_reached < 1.0
    with pytest.raises(ValueError):
        dopri5(lambda t, y: y, np.ones(1), [0.0, 1.0], rtol=1e-2)


def test_size_limit():
    lay = build_bins(EnsembleSpec(1000, 1.0, 0.1, GAU), 100)
    with pytest.raises(SizeLimit):
        assemble_generator(lay, n_f=50, dim_limit=1000)


def test_oscillation_frequency():
    t = np.linspace(0, 5, 2001)
    assert oscillation_frequency(t, np.cos(2 * math.pi * 0.7 * t) ** 2) == pytest.approx(1.4, rel=1e-4)
    assert math.isnan(oscillation_frequency(t, np.exp(-t)))
