"""Synthetic linear two-subproblem fixture for the coupling iterations.

A contrived bidirectionally coupled pair of affine fixed-point maps with its
own uncertain inputs on each side.  Everything is linear, so degree-1 chaos
coefficients represent every iterate exactly and the fixture isolates the
behavior of the combined-vector KL reduction and of injected truncation
errors from any discretization effect.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import MultiIndexSet, PCVector, enumerate_multi_indices
from .errors import DivergenceError
from .klreduce import reduce_pc, reconstruct


@dataclass(frozen=True)
class LinearCoupledSystem:
    """u = A_uu u + A_ux x + F_u xi + c_u,   y = H_y u + G_y xi
    v = A_vv v + A_vy y + F_v zeta + c_v,   x = K_x v + G_x zeta
    """

    a_uu: np.ndarray
    a_ux: np.ndarray
    f_u: np.ndarray     # (r, m_a)
    c_u: np.ndarray
    h_y: np.ndarray     # (r0, r)
    g_y: np.ndarray     # (r0, m_a)
    a_vv: np.ndarray
    a_vy: np.ndarray    # (s, r0)
    f_v: np.ndarray     # (s, m_b)
    c_v: np.ndarray
    k_x: np.ndarray     # (s0, s)
    g_x: np.ndarray     # (s0, m_b)

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return (self.a_uu.shape[0], self.a_vv.shape[0],
                self.h_y.shape[0], self.k_x.shape[0])

    @property
    def input_dims(self) -> tuple[int, int]:
        return self.f_u.shape[1], self.f_v.shape[1]

    def lipschitz_modulus(self) -> float:
        """Block-maximum-norm Lipschitz constant of the iteration mapping."""
        n2 = lambda a: np.linalg.norm(a, 2)
        return max(n2(self.a_uu) + n2(self.a_ux), n2(self.a_vv) + n2(self.a_vy),
                   n2(self.h_y), n2(self.k_x))

    def gauss_seidel_matrix(self) -> np.ndarray:
        """Linear map of one Gauss-Seidel sweep on the stacked state (u, v, x)."""
        r, s, _, s0 = self.sizes
        m = np.zeros((r + s + s0, r + s + s0))
        cu, cv, cx = slice(0, r), slice(r, r + s), slice(r + s, r + s + s0)
        m[cu, cu] = self.a_uu
        m[cu, cx] = self.a_ux
        m[cv, cu] = self.a_vy @ self.h_y @ self.a_uu
        m[cv, cv] = self.a_vv
        m[cv, cx] = self.a_vy @ self.h_y @ self.a_ux
        m[cx, cu] = self.k_x @ m[cv, cu]
        m[cx, cv] = self.k_x @ self.a_vv
        m[cx, cx] = self.k_x @ m[cv, cx]
        return m

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.gauss_seidel_matrix()))))


def make_random_contractive(rng: np.random.Generator, modulus: float,
                            sizes: tuple[int, int, int, int] = (3, 3, 2, 2),
                            input_dims: tuple[int, int] = (2, 2)
                            ) -> LinearCoupledSystem:
    """Random system whose block-max Lipschitz constant equals ``modulus``."""
    r, s, r0, s0 = sizes
    m_a, m_b = input_dims
    g = rng.standard_normal

    def scale_pair(a, b):
        total = np.linalg.norm(a, 2) + np.linalg.norm(b, 2)
        return a * (modulus / total), b * (modulus / total)

    def scale_one(a):
        return a * (modulus / np.linalg.norm(a, 2))

    a_uu, a_ux = scale_pair(g((r, r)), g((r, s0)))
    a_vv, a_vy = scale_pair(g((s, s)), g((s, r0)))
    return LinearCoupledSystem(
        a_uu=a_uu, a_ux=a_ux, f_u=g((r, m_a)), c_u=g(r),
        h_y=scale_one(g((r0, r))), g_y=g((r0, m_a)),
        a_vv=a_vv, a_vy=a_vy, f_v=g((s, m_b)), c_v=g(s),
        k_x=scale_one(g((s0, s))), g_x=g((s0, m_b)))


@dataclass
class SyntheticTrace:
    """Degree-1 chaos coefficient histories of all four variable blocks."""

    basis: MultiIndexSet
    u: list[np.ndarray]
    v: list[np.ndarray]
    y: list[np.ndarray]
    x: list[np.ndarray]
    dims_q: list[int]
    dims_r: list[int]


def _input_coeffs(system: LinearCoupledSystem, basis: MultiIndexSet):
    """Degree-1 chaos coefficients of the affine input terms.

    xi_i has coefficient 1/sqrt(3) on the degree-1 basis polynomial
    sqrt(3) xi_i.
    """
    m_a, m_b = system.input_dims
    n = len(basis)

    def block(f, const, width, cols):
        out = np.zeros((n, width))
        out[0] = const
        for i, col in enumerate(cols):
            out[1 + col] = f[:, i] / np.sqrt(3.0)
        return out

    r, s, r0, s0 = system.sizes
    u_in = block(system.f_u, system.c_u, r, range(m_a))
    y_in = block(system.g_y, np.zeros(r0), r0, range(m_a))
    v_in = block(system.f_v, system.c_v, s, range(m_a, m_a + m_b))
    x_in = block(system.g_x, np.zeros(s0), s0, range(m_a, m_a + m_b))
    return u_in, y_in, v_in, x_in


def _unit_perturbation(rng: np.random.Generator, shape, eps: float) -> np.ndarray:
    direction = rng.standard_normal(shape)
    return eps * direction / np.linalg.norm(direction)


def synthetic_general_coupled(system: LinearCoupledSystem, n_iters: int,
                              tol: float | None = None,
                              inject_eps: float | None = None,
                              inject_rng: np.random.Generator | None = None,
                              require_contractive: bool = True
                              ) -> tuple[SyntheticTrace, SyntheticTrace]:
    """Run the unreduced and the reduced Gauss-Seidel iterations side by side.

    The reduced run truncates the combined vectors [u; x] (before the first
    subproblem) and [y; v_prev] (before the second) either by a KL reduction
    with residual-energy tolerance ``tol``, or, when ``inject_eps`` is given,
    by adding a random perturbation of mean-square norm exactly
    ``inject_eps`` to each block.  Returns (unreduced, reduced) traces.
    """
    if require_contractive:
        rho = system.spectral_radius()
        if rho >= 1.0:
            raise DivergenceError(
                f"iteration map is not contractive: spectral radius {rho:.6g}")
    if (tol is None) == (inject_eps is None):
        raise ValueError("specify exactly one of tol or inject_eps")
    if inject_eps is not None and inject_rng is None:
        raise ValueError("inject_eps needs an inject_rng")

    m_a, m_b = system.input_dims
    basis = enumerate_multi_indices(m_a + m_b, 1)
    u_in, y_in, v_in, x_in = _input_coeffs(system, basis)
    r, s, r0, s0 = system.sizes
    n = len(basis)

    def zeros(width):
        return np.zeros((n, width))

    state = {"plain": [zeros(r), zeros(s), zeros(r0), zeros(s0)],
             "reduced": [zeros(r), zeros(s), zeros(r0), zeros(s0)]}
    traces = {key: SyntheticTrace(basis=basis, u=[state[key][0].copy()],
                                  v=[state[key][1].copy()],
                                  y=[state[key][2].copy()],
                                  x=[state[key][3].copy()],
                                  dims_q=[], dims_r=[])
              for key in state}

    def reduce_blocks(blocks, widths, dims_log):
        """Combined KL reduction (or injected perturbation) of stacked blocks."""
        if inject_eps is not None:
            dims_log.append(-1)
            return [b + _unit_perturbation(inject_rng, b.shape, inject_eps)
                    for b in blocks]
        stacked = np.concatenate(blocks, axis=1)
        record = reduce_pc(PCVector(basis, stacked), np.eye(sum(widths)), tol,
                           weighting="identity")
        dims_log.append(record.dim)
        recon = reconstruct(record, basis).coeffs
        out, start = [], 0
        for w in widths:
            out.append(recon[:, start:start + w])
            start += w
        return out

    for _ in range(n_iters):
        # unreduced sweep
        u, v, y, x = state["plain"]
        u = u @ system.a_uu.T + x @ system.a_ux.T + u_in
        y = u @ system.h_y.T + y_in
        v = v @ system.a_vv.T + y @ system.a_vy.T + v_in
        x = v @ system.k_x.T + x_in
        state["plain"] = [u, v, y, x]

        # reduced sweep
        u, v, y, x = state["reduced"]
        u_red, x_red = reduce_blocks([u, x], [r, s0], traces["reduced"].dims_r)
        u = u_red @ system.a_uu.T + x_red @ system.a_ux.T + u_in
        y = u @ system.h_y.T + y_in
        y_red, v_red = reduce_blocks([y, v], [r0, s], traces["reduced"].dims_q)
        v = v_red @ system.a_vv.T + y_red @ system.a_vy.T + v_in
        x = v @ system.k_x.T + x_in
        state["reduced"] = [u, v, y, x]

        for key in state:
            tr = traces[key]
            tr.u.append(state[key][0].copy())
            tr.v.append(state[key][1].copy())
            tr.y.append(state[key][2].copy())
            tr.x.append(state[key][3].copy())

    return traces["plain"], traces["reduced"]


def coupled_fixed_point(system: LinearCoupledSystem,
                        basis: MultiIndexSet) -> tuple[np.ndarray, ...]:
    """Exact chaos coefficients of the coupled fixed point (direct solve)."""
    r, s, r0, s0 = system.sizes
    u_in, y_in, v_in, x_in = _input_coeffs(system, basis)
    total = r + s + r0 + s0
    tmap = np.zeros((total, total))
    cu = slice(0, r)
    cv = slice(r, r + s)
    cy = slice(r + s, r + s + r0)
    cx = slice(r + s + r0, total)
    tmap[cu, cu] = system.a_uu
    tmap[cu, cx] = system.a_ux
    tmap[cy, cu] = system.h_y
    tmap[cv, cv] = system.a_vv
    tmap[cv, cy] = system.a_vy
    tmap[cx, cv] = system.k_x
    rhs = np.concatenate([u_in, v_in, y_in, x_in], axis=1)
    sol = np.linalg.solve(np.eye(total) - tmap, rhs.T).T
    return sol[:, cu], sol[:, cv], sol[:, cy], sol[:, cx]
