from dataclasses import replace

import numpy as np
import pytest

from klcoupling.errors import IncompatibleInputsError, RealizationError
from klcoupling.field import field_values
from klcoupling.montecarlo import (run_monte_carlo, summary_dict,
                                   surrogate_error_vs_mc, _draw_samples)
from klcoupling.solver import (ProblemConfig, ReactorSystem,
                               gauss_seidel_deterministic, pc_iterate_full)


def test_deterministic_field_identical_samples(desk_cfg):
    cfg = replace(desk_cfg, field_variation=0.0)
    mc = run_monte_carlo(cfg, 50, seed=1)
    assert np.abs(mc.temperature_samples - mc.temperature_samples[0]).max() == 0.0
    assert np.abs(mc.var_t).max() <= 1e-16 * mc.mean_t.max() ** 2


def test_field_mean_within_mc_error(benchmark_system):
    # mean of h(0, xi) over 1e5 draws within three standard errors of 0.17
    xi = _draw_samples(seed=123, n=100_000, dim=10)
    h0 = field_values(benchmark_system.field, xi)[:, 0]
    se = h0.std(ddof=1) / np.sqrt(h0.size)
    assert abs(h0.mean() - 0.17) <= 3 * se


def test_single_sample_equals_deterministic(desk_cfg, desk_system):
    mc = run_monte_carlo(desk_cfg, 1, seed=3, system=desk_system)
    t, phi, _ = gauss_seidel_deterministic(desk_cfg, mc.xi[0],
                                           system=desk_system)
    assert np.array_equal(t, mc.temperature_samples[0])
    assert np.array_equal(phi, mc.flux_samples[0])


def test_seed_reproducibility(desk_cfg, desk_system):
    a = run_monte_carlo(desk_cfg, 120, seed=9, system=desk_system)
    b = run_monte_carlo(desk_cfg, 120, seed=9, system=desk_system)
    c = run_monte_carlo(desk_cfg, 120, seed=9, system=desk_system, threads=4)
    assert a.digest() == b.digest() == c.digest()
    assert a.digest() != run_monte_carlo(desk_cfg, 120, seed=10,
                                         system=desk_system).digest()


def test_one_pass_variance_matches_two_pass(desk_cfg, desk_system):
    mc = run_monte_carlo(desk_cfg, 1000, seed=4, system=desk_system)
    two_pass = mc.temperature_samples.var(axis=0, ddof=1)
    assert np.allclose(mc.var_t, two_pass, rtol=1e-10)
    two_pass_phi = mc.flux_samples.var(axis=0, ddof=1)
    assert np.allclose(mc.var_phi, two_pass_phi, rtol=1e-10)


def test_sample_cap_limits_storage(desk_cfg, desk_system):
    mc = run_monte_carlo(desk_cfg, 40, seed=2, sample_cap=10,
                         system=desk_system)
    assert mc.n_stored == 10
    assert mc.temperature_samples.shape == (10, 41)
    assert mc.xi.shape == (40, 3)        # draws always kept


def test_failures_counted_not_fatal(desk_cfg, desk_system, monkeypatch):
    base = desk_system.field_nodal_masked

    def sabotage(xi):
        h, valid = base(xi)
        valid = valid.copy()
        valid[..., :1] = False           # first sample of every chunk
        return h, valid

    monkeypatch.setattr(desk_system, "field_nodal_masked", sabotage)
    with pytest.raises(RealizationError):
        run_monte_carlo(desk_cfg, 50, seed=0, system=desk_system)
    # a large run tolerates a sub-percent failure count
    mc = run_monte_carlo(desk_cfg, 200, seed=0, system=desk_system)
    assert mc.n_failures == 1
    assert np.all(np.isfinite(mc.mean_t))


def test_invalid_count_rejected(desk_cfg):
    with pytest.raises(ValueError):
        run_monte_carlo(desk_cfg, 0, seed=1)


def test_summary_dict_roundtrippable(desk_cfg, desk_system):
    import json
    mc = run_monte_carlo(desk_cfg, 10, seed=5, system=desk_system)
    text = json.dumps(summary_dict(mc), sort_keys=True)
    back = json.loads(text)
    assert back["n_samples"] == 10
    assert back["digest"] == mc.digest()


# ---------------------------------------------------------------------------
# surrogate error estimator
# ---------------------------------------------------------------------------

def test_config_mismatch_rejected(desk_cfg, desk_system):
    mc = run_monte_carlo(desk_cfg, 20, seed=1, system=desk_system)
    other = desk_cfg.with_conductivity(1.0)
    t_pc, phi_pc, _ = pc_iterate_full(desk_cfg, system=desk_system)
    with pytest.raises(IncompatibleInputsError):
        surrogate_error_vs_mc(t_pc, phi_pc, mc, other)


def test_one_dimensional_toy_high_degree_accuracy():
    cfg = ProblemConfig(field_terms=1, degree=6, quadrature_level=7)
    system = ReactorSystem(cfg)
    t_pc, phi_pc, _ = pc_iterate_full(cfg, system=system)
    mc = run_monte_carlo(cfg, 500, seed=8, system=system)
    err_t, err_phi = surrogate_error_vs_mc(t_pc, phi_pc, mc, cfg,
                                           system=system)
    assert err_t < 1e-4
    assert err_phi < 1e-4


def test_error_decreases_with_degree(desk_cfg):
    errors = []
    for degree in (1, 2, 3):
        cfg = replace(desk_cfg, degree=degree, quadrature_level=degree + 1)
        system = ReactorSystem(cfg)
        t_pc, phi_pc, _ = pc_iterate_full(cfg, system=system)
        mc = run_monte_carlo(cfg, 400, seed=21, system=system)
        err_t, _ = surrogate_error_vs_mc(t_pc, phi_pc, mc, cfg, system=system)
        errors.append(err_t)
    assert errors[0] > errors[1] > errors[2]


def test_estimator_stabilizes_with_samples(desk_cfg, desk_system):
    # the estimate moves less than twice its own sampling error
    t_pc, phi_pc, _ = pc_iterate_full(desk_cfg, system=desk_system)
    mc_small = run_monte_carlo(desk_cfg, 300, seed=13, system=desk_system)
    mc_large = run_monte_carlo(desk_cfg, 1200, seed=13, system=desk_system)
    e1, _ = surrogate_error_vs_mc(t_pc, phi_pc, mc_small, desk_cfg,
                                  system=desk_system)
    e2, _ = surrogate_error_vs_mc(t_pc, phi_pc, mc_large, desk_cfg,
                                  system=desk_system)
    # delta-method standard error of the ratio estimator from the small run
    from klcoupling.basis import basis_matrix
    psi = basis_matrix(t_pc.basis, mc_small.xi)
    d = desk_system.gram.quad_form(mc_small.temperature_samples
                                   - psi @ t_pc.coeffs)
    se = e1 * (d.std(ddof=1) / d.mean()) / (2 * np.sqrt(d.size))
    assert abs(e2 - e1) < 2 * max(se, 1e-12)
