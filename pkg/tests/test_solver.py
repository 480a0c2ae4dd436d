import logging
from dataclasses import replace

import numpy as np
import pytest

from klcoupling.basis import basis_matrix
from klcoupling.errors import DivergenceError, RealizationError
from klcoupling.klreduce import reconstruct
from klcoupling.solver import (ProblemConfig, ReactorSystem,
                               StochasticWorkspace, coefficient_energy,
                               fluctuation_energy, gauss_seidel_batch,
                               gauss_seidel_deterministic, pc_iterate_full,
                               pc_iterate_reduced, sigma_fluctuation)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_default_level_follows_degree():
    assert ProblemConfig().level == 5
    assert replace(ProblemConfig(), degree=2, quadrature_level=None).level == 3


def test_subcriticality_enforced():
    with pytest.raises(ValueError, match="subcritical"):
        ProblemConfig(absorption_ref=0.016)   # nu * 0.0075 = 0.0165 above it


def test_config_hash_stable_and_discriminating():
    assert ProblemConfig().config_hash() == ProblemConfig().config_hash()
    assert (ProblemConfig().config_hash()
            != ProblemConfig().with_conductivity(1.0).config_hash())
    # reduction tolerances identify a run variant, not the problem
    assert (ProblemConfig().config_hash()
            == replace(ProblemConfig(), kl_tolerance=0.5).config_hash())


def test_nu_sigma_f_below_sigma_a():
    cfg = ProblemConfig()
    assert cfg.neutrons_per_fission * cfg.fission_ref == pytest.approx(0.0165)
    assert cfg.absorption_ref == 0.0195


# ---------------------------------------------------------------------------
# deterministic solver
# ---------------------------------------------------------------------------

def test_decoupled_heat_at_zero_fission(desk_cfg, rng):
    cfg = replace(desk_cfg, fission_energy=0.0)
    system = ReactorSystem(cfg)
    xi = rng.uniform(-1, 1, cfg.field_terms)
    t, phi, _ = gauss_seidel_deterministic(cfg, xi, system=system)
    assert np.allclose(t, cfg.ambient_temperature, rtol=1e-12)
    # flux solves the linear neutronics at the ambient temperature
    phi_ref = system.solve_neutronics(np.full((1, 41), 390.0))[0]
    assert np.allclose(phi, phi_ref, rtol=1e-10)


def test_fixed_point_independent_of_initialization(desk_system, rng):
    cfg = desk_system.cfg
    xi = rng.uniform(-1, 1, cfg.field_terms)
    t1, phi1, _ = gauss_seidel_deterministic(cfg, xi, system=desk_system)
    init = (np.full(41, 800.0), np.full(41, 1.0e14))
    t2, phi2, tr = gauss_seidel_deterministic(cfg, xi, init=init,
                                              system=desk_system)
    assert np.linalg.norm(t1 - t2) <= 1e-7 * np.linalg.norm(t1)
    assert np.linalg.norm(phi1 - phi2) <= 1e-7 * np.linalg.norm(phi1)


def test_deterministic_field_ignores_sample(desk_cfg, rng):
    cfg = replace(desk_cfg, field_variation=0.0)
    system = ReactorSystem(cfg)
    t1, phi1, _ = gauss_seidel_deterministic(cfg, rng.uniform(-1, 1, 3),
                                             system=system)
    t2, phi2, _ = gauss_seidel_deterministic(cfg, rng.uniform(-1, 1, 3),
                                             system=system)
    assert np.array_equal(t1, t2) and np.array_equal(phi1, phi2)


def test_converged_residuals(desk_system, rng):
    xi = rng.uniform(-1, 1, 3)
    _, _, trace = gauss_seidel_deterministic(desk_system.cfg, xi,
                                             system=desk_system)
    assert trace.residual_heat.max() <= 1e-8
    assert trace.residual_neutron.max() <= 1e-8


def test_invalid_realization_propagates(desk_system):
    model = desk_system.field
    # craft a sample beyond the admissible cube to force h <= 0
    xi = -40.0 * np.ones(3)
    with pytest.raises(RealizationError):
        gauss_seidel_batch(desk_system, xi[None, :])


def test_divergence_detection(desk_system):
    class Amplifier(ReactorSystem):
        def __init__(self, base):
            self.__dict__.update(base.__dict__)

        def solve_heat(self, h_gauss, t_prev, phi_prev):
            return 1.5 * t_prev + 1.0   # expansive iteration map

    bad = Amplifier(desk_system)
    with pytest.raises(DivergenceError):
        gauss_seidel_batch(bad, np.zeros((1, 3)), max_iterations=20,
                           update_tolerance=0.0)
    # non-raising mode flags the sample instead
    _, _, trace = gauss_seidel_batch(bad, np.zeros((1, 3)), max_iterations=20,
                                     update_tolerance=0.0,
                                     raise_on_divergence=False)
    assert trace.diverged[0]


def test_batch_freezing_matches_isolated(desk_system, rng):
    xi = rng.uniform(-1, 1, (8, 3))
    t_b, phi_b, _ = gauss_seidel_batch(desk_system, xi)
    for i in range(8):
        t_s, phi_s, _ = gauss_seidel_batch(desk_system, xi[i:i + 1])
        assert np.array_equal(t_b[i], t_s[0])
        assert np.array_equal(phi_b[i], phi_s[0])


# ---------------------------------------------------------------------------
# chaos iteration without reduction
# ---------------------------------------------------------------------------

def test_pc_degenerate_randomness(desk_cfg):
    cfg = replace(desk_cfg, field_variation=0.0)
    system = ReactorSystem(cfg)
    t_pc, phi_pc, _ = pc_iterate_full(cfg, system=system)
    assert np.abs(t_pc.fluctuation).max() <= 1e-10
    assert np.abs(phi_pc.fluctuation).max() <= 1e-10 * np.abs(phi_pc.mean).max()
    t_det, phi_det, _ = gauss_seidel_deterministic(cfg, np.zeros(3),
                                                   system=system)
    assert np.allclose(t_pc.mean, t_det, rtol=1e-10)
    assert np.allclose(phi_pc.mean, phi_det, rtol=1e-10)


def test_pc_first_update_dominates(desk_cfg):
    # the first flux update is the large initial transient; iteration two is
    # already contracting for both conductivities
    for k in (100.0, 1.0):
        cfg = desk_cfg.with_conductivity(k)
        _, _, trace = pc_iterate_full(cfg)
        rel = np.array(trace.update_phi)
        assert rel[1] < rel[0]


def test_pc_surrogate_convergence_in_degree(rng):
    # m=1: surrogate error against fresh per-sample solves decreases in p
    errors = []
    for degree in (1, 2, 3, 4):
        cfg = ProblemConfig(field_terms=1, degree=degree,
                            quadrature_level=degree + 1)
        system = ReactorSystem(cfg)
        t_pc, _, _ = pc_iterate_full(cfg, system=system)
        xi = rng.uniform(-1, 1, (1000, 1))
        t_ref, _, _ = gauss_seidel_batch(system, xi)
        psi = basis_matrix(t_pc.basis, xi)
        t_eval = psi @ t_pc.coeffs
        num = np.mean(system.gram.quad_form(t_ref - t_eval))
        den = np.mean(system.gram.quad_form(t_ref))
        errors.append(float(np.sqrt(num / den)))
    assert all(e2 < e1 for e1, e2 in zip(errors, errors[1:]))


def test_pc_trace_contents(desk_cfg):
    _, _, trace = pc_iterate_full(desk_cfg)
    n = trace.n_iterations
    assert len(trace.temperature) == n + 1
    assert len(trace.update_t) == n
    assert len(trace.seconds) == n
    assert trace.kl_records is None
    assert np.all(np.isfinite(trace.update_t))


def test_node_rerun_purity(desk_cfg):
    # re-solving a single quadrature node from its recorded inputs
    # reproduces the stored fields bit-exactly
    system = ReactorSystem(desk_cfg)
    ws = StochasticWorkspace(system)
    t_prev = np.tile(np.linspace(400.0, 600.0, 41), (len(ws.rule), 1))
    phi_prev = np.tile(np.linspace(1e13, 2e14, 41), (len(ws.rule), 1))
    t_all = system.solve_heat(ws.h_gauss, t_prev, phi_prev)
    phi_all = system.solve_neutronics(t_all)
    for node in (0, len(ws.rule) // 2, len(ws.rule) - 1):
        t_one = system.solve_heat(ws.h_gauss[node:node + 1],
                                  t_prev[node:node + 1],
                                  phi_prev[node:node + 1])
        phi_one = system.solve_neutronics(t_one)
        assert np.array_equal(t_all[node], t_one[0])
        assert np.array_equal(phi_all[node], phi_one[0])


def test_pc_thread_invariance(desk_cfg):
    t1, p1, _ = pc_iterate_full(desk_cfg, threads=1)
    t2, p2, _ = pc_iterate_full(desk_cfg, threads=3)
    assert np.array_equal(t1.coeffs, t2.coeffs)
    assert np.array_equal(p1.coeffs, p2.coeffs)


def test_workspace_rejects_invalid_node(desk_system, monkeypatch):
    # a quadrature node with non-positive transmittivity aborts the setup
    # with a diagnostic naming the node
    base = desk_system.field_nodal_masked

    def sabotage(xi):
        h, valid = base(xi)
        valid = valid.copy()
        valid[3] = False
        return h, valid

    monkeypatch.setattr(desk_system, "field_nodal_masked", sabotage)
    with pytest.raises(RealizationError, match="node 3"):
        StochasticWorkspace(desk_system)


# ---------------------------------------------------------------------------
# chaos iteration with reduction
# ---------------------------------------------------------------------------

def test_reduced_needs_tolerance(desk_cfg):
    with pytest.raises(ValueError):
        pc_iterate_reduced(desk_cfg)


def test_mismatched_system_rejected(desk_cfg, desk_system):
    from klcoupling.errors import IncompatibleInputsError
    other = desk_cfg.with_conductivity(1.0)
    with pytest.raises(IncompatibleInputsError):
        pc_iterate_full(other, system=desk_system)


def test_reduced_records_dimensions(desk_cfg, desk_system):
    t_pc, _, full = pc_iterate_full(desk_cfg, system=desk_system)
    sigma_sq = sigma_fluctuation(t_pc, desk_system.gram) ** 2
    _, _, red = pc_iterate_reduced(desk_cfg, tol_fraction=0.90,
                                   sigma_sq=sigma_sq, system=desk_system)
    assert len(red.dims) == red.n_iterations
    assert red.kl_tolerance == pytest.approx(0.90 * sigma_sq)
    assert all(d >= 0 for d in red.dims)
    rec = red.kl_records[-1]
    assert rec.dim == red.dims[-1]


def test_reduced_lazy_tolerance_resolution(desk_cfg, desk_system, caplog):
    with caplog.at_level(logging.INFO, logger="klcoupling.solver"):
        _, _, red = pc_iterate_reduced(desk_cfg, tol_fraction=0.90,
                                       system=desk_system)
    assert any("resolved KL tolerance" in rec.message for rec in caplog.records)
    # the fallback must key on the first physically meaningful iterate, not
    # on the round-off fluctuation the initial transient leaves behind
    t_pc, _, _ = pc_iterate_full(desk_cfg, system=desk_system)
    sigma_sq = sigma_fluctuation(t_pc, desk_system.gram) ** 2
    assert 0.5 * 0.90 * sigma_sq < red.kl_tolerance < 2.0 * 0.90 * sigma_sq
    # iteration 1 passes the (noise-level) iterate through exactly while the
    # tolerance is pending; afterwards the resolved tolerance rules
    assert max(red.dims[1:]) <= 5


def test_gauss_seidel_ordering(desk_cfg, desk_system):
    # the neutronics consumes the current iteration's reduced temperature
    seen = []

    class Recorder(ReactorSystem):
        def __init__(self, base):
            self.__dict__.update(base.__dict__)

        def solve_neutronics(self, t_nodal):
            seen.append(t_nodal.copy())
            return super().solve_neutronics(t_nodal)

    rec_system = Recorder(desk_system)
    _, _, trace = pc_iterate_reduced(desk_cfg, tol=1.0, system=rec_system,
                                     max_iterations=3)
    ws = StochasticWorkspace(desk_system)
    for ell in range(3):
        reduced = reconstruct(trace.kl_records[ell], trace.basis)
        expected = ws.evaluate(reduced.coeffs)
        assert np.array_equal(seen[ell], expected)


def test_reduced_tol_zero_matches_full_desk(desk_cfg, desk_system):
    _, _, full = pc_iterate_full(desk_cfg, system=desk_system,
                                 update_tolerance=0.0)
    _, _, red = pc_iterate_reduced(desk_cfg, tol=0.0, system=desk_system,
                                   update_tolerance=0.0)
    t_scale = np.abs(full.temperature[-1].coeffs).max()
    p_scale = np.abs(full.flux[-1].coeffs).max()
    for a, b in zip(full.temperature, red.temperature):
        assert np.abs(a.coeffs - b.coeffs).max() <= 1e-9 * t_scale
    for a, b in zip(full.flux, red.flux):
        assert np.abs(a.coeffs - b.coeffs).max() <= 1e-9 * p_scale
