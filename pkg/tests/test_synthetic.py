import numpy as np
import pytest

from klcoupling.errors import DivergenceError
from klcoupling.synthetic import (LinearCoupledSystem, coupled_fixed_point,
                                  make_random_contractive,
                                  synthetic_general_coupled)


def test_constructed_modulus_is_exact(rng):
    for rho in (0.3, 0.6, 0.9):
        system = make_random_contractive(rng, rho)
        assert system.lipschitz_modulus() == pytest.approx(rho, rel=1e-12)
        assert system.spectral_radius() < 1.0


def test_non_contractive_rejected(rng):
    base = make_random_contractive(rng, 0.5)
    r = base.a_uu.shape[0]
    bad = LinearCoupledSystem(
        a_uu=1.1 * np.eye(r), a_ux=np.zeros_like(base.a_ux),
        f_u=base.f_u, c_u=base.c_u, h_y=base.h_y, g_y=base.g_y,
        a_vv=base.a_vv, a_vy=base.a_vy, f_v=base.f_v, c_v=base.c_v,
        k_x=base.k_x, g_x=base.g_x)
    with pytest.raises(DivergenceError, match="radius"):
        synthetic_general_coupled(bad, 5, tol=0.0)


def test_tol_zero_trajectories_identical(rng):
    system = make_random_contractive(rng, 0.6)
    plain, reduced = synthetic_general_coupled(system, 30, tol=0.0)
    for name in ("u", "v", "y", "x"):
        for a, b in zip(getattr(plain, name), getattr(reduced, name)):
            assert np.abs(a - b).max() <= 1e-10


def test_unreduced_converges_to_exact_fixed_point(rng):
    system = make_random_contractive(rng, 0.5)
    plain, _ = synthetic_general_coupled(system, 80, tol=0.0)
    u_fp, v_fp, y_fp, x_fp = coupled_fixed_point(system, plain.basis)
    assert np.abs(plain.u[-1] - u_fp).max() <= 1e-10
    assert np.abs(plain.v[-1] - v_fp).max() <= 1e-10
    assert np.abs(plain.y[-1] - y_fp).max() <= 1e-10
    assert np.abs(plain.x[-1] - x_fp).max() <= 1e-10
    # the fixed point satisfies the defining equations directly
    resid = u_fp - (u_fp @ system.a_uu.T + x_fp @ system.a_ux.T)
    inject = np.zeros_like(u_fp)
    inject[0] = system.c_u
    for i in range(system.f_u.shape[1]):
        inject[1 + i] = system.f_u[:, i] / np.sqrt(3.0)
    assert np.abs(resid - inject).max() <= 1e-10


def test_rank_one_latent_selects_one_mode(rng):
    # y and v driven by a single scalar latent variable
    r, s, r0, s0 = 3, 3, 2, 2
    direction = rng.standard_normal(r)
    weights = rng.standard_normal(2)
    system = LinearCoupledSystem(
        a_uu=np.zeros((r, r)), a_ux=np.zeros((r, s0)),
        f_u=np.outer(direction, weights), c_u=rng.standard_normal(r),
        h_y=0.5 * rng.standard_normal((r0, r)), g_y=np.zeros((r0, 2)),
        a_vv=np.zeros((s, s)), a_vy=0.5 * rng.standard_normal((s, r0)),
        f_v=np.zeros((s, 2)), c_v=rng.standard_normal(s),
        k_x=0.5 * rng.standard_normal((s0, s)), g_x=np.zeros((s0, 2)))
    _, reduced = synthetic_general_coupled(system, 10, tol=1e-10)
    assert all(d == 1 for d in reduced.dims_q)


def test_injected_perturbation_magnitude(rng):
    system = make_random_contractive(rng, 0.4)
    eps = 1e-3
    plain, reduced = synthetic_general_coupled(
        system, 1, inject_eps=eps, inject_rng=np.random.default_rng(3))
    # after one iteration the u-difference is bounded by the Lipschitz image
    # of two eps-perturbations
    diff = np.linalg.norm(plain.u[1] - reduced.u[1])
    assert 0.0 < diff <= 2 * 0.4 * eps + 1e-12


def test_error_bound_over_random_systems():
    # contraction argument: distance stays within 2 rho eps / (1 - rho)
    master = np.random.default_rng(99)
    for rho in (0.3, 0.6, 0.9):
        for eps in (1e-3, 1e-2):
            for trial in range(3):
                system = make_random_contractive(master, rho)
                plain, reduced = synthetic_general_coupled(
                    system, 50, inject_eps=eps,
                    inject_rng=np.random.default_rng(trial))
                worst = 0.0
                for a, b in zip(plain.u, reduced.u):
                    worst = max(worst, np.linalg.norm(a - b))
                for a, b in zip(plain.v, reduced.v):
                    worst = max(worst, np.linalg.norm(a - b))
                assert worst <= 2 * rho * eps / (1 - rho) + 1e-9


def test_argument_validation(rng):
    system = make_random_contractive(rng, 0.5)
    with pytest.raises(ValueError):
        synthetic_general_coupled(system, 5)                     # no mode
    with pytest.raises(ValueError):
        synthetic_general_coupled(system, 5, tol=0.0, inject_eps=1e-3)
    with pytest.raises(ValueError):
        synthetic_general_coupled(system, 5, inject_eps=1e-3)    # missing rng
