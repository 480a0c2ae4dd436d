"""1D linear finite elements: mesh, operator assembly, H1 Gram matrix, banded solves.

All matrices are symmetric tridiagonal (bandwidth 1) and stored as
diagonal/off-diagonal pairs.  Assembly routines accept arbitrary leading batch
dimensions on coefficient arrays so that many quadrature-node realizations can
be assembled and solved at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateCoefficientError, FactorizationError

logger = logging.getLogger(__name__)

# 2-point Gauss rule on the reference element [0, 1]: points and hat-function
# values.  Exact for cubics, hence exact for linear coefficients times N_i*N_j.
_GAUSS_REF = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_SHAPE_LEFT = 1.0 - _GAUSS_REF   # N_left at the two Gauss points
_SHAPE_RIGHT = _GAUSS_REF        # N_right at the two Gauss points


@dataclass(frozen=True)
class Mesh:
    """Uniform 1D mesh on [0, L] with r = n_elem + 1 nodes."""

    length: float
    nodes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_elem(self) -> int:
        return self.nodes.size - 1

    @property
    def dx(self) -> float:
        return self.length / self.n_elem

    def gauss_points(self) -> np.ndarray:
        """Physical coordinates of the 2-point Gauss rule, shape (n_elem, 2)."""
        left = self.nodes[:-1]
        return left[:, None] + self.dx * _GAUSS_REF[None, :]


def build_mesh(length: float, n_elem: int) -> Mesh:
    """Build a uniform mesh of ``n_elem`` equal elements on [0, length]."""
    if not np.isfinite(length) or length <= 0.0:
        raise ValueError(f"mesh length must be positive, got {length}")
    if n_elem < 1:
        raise ValueError(f"need at least one element, got {n_elem}")
    nodes = np.linspace(0.0, float(length), n_elem + 1)
    return Mesh(length=float(length), nodes=nodes)


@dataclass(frozen=True)
class SymTridiagonal:
    """Symmetric tridiagonal matrix (or a batch of them).

    ``diag`` has shape (..., r) and ``off`` shape (..., r-1); leading
    dimensions are broadcast batch dimensions.
    """

    diag: np.ndarray
    off: np.ndarray

    @property
    def size(self) -> int:
        return self.diag.shape[-1]

    def __add__(self, other: "SymTridiagonal") -> "SymTridiagonal":
        return SymTridiagonal(self.diag + other.diag, self.off + other.off)

    def scaled(self, c: float) -> "SymTridiagonal":
        return SymTridiagonal(c * self.diag, c * self.off)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Apply the matrix to vectors of shape (..., r)."""
        y = self.diag * x
        y[..., :-1] += self.off * x[..., 1:]
        y[..., 1:] += self.off * x[..., :-1]
        return y

    def quad_form(self, x: np.ndarray) -> np.ndarray:
        """x^T A x along the last axis."""
        return np.sum(x * self.matvec(x), axis=-1)

    def to_dense(self) -> np.ndarray:
        if self.diag.ndim != 1:
            raise ValueError("to_dense is only supported for single matrices")
        a = np.diag(self.diag)
        a += np.diag(self.off, 1) + np.diag(self.off, -1)
        return a

    def to_banded_upper(self) -> np.ndarray:
        """Upper banded storage understood by ``scipy.linalg.solveh_banded``."""
        if self.diag.ndim != 1:
            raise ValueError("banded storage is only supported for single matrices")
        ab = np.zeros((2, self.size))
        ab[0, 1:] = self.off
        ab[1] = self.diag
        return ab


@dataclass(frozen=True)
class FEOperators:
    """Assembled operators of the coupled reactor problem on one mesh.

    ``heat_stiffness`` (K) and ``heat_mass`` (H) build the heat operator;
    ``neutron_stiffness`` (D) and ``neutron_mass`` (M) build the neutronics
    operator; ``heat_load`` (q) and ``neutron_load`` (s) are the right-hand
    sides and ``gram`` (W) the H1 Gram matrix of the hat-function basis.
    """

    heat_stiffness: SymTridiagonal
    heat_mass: SymTridiagonal
    gram: SymTridiagonal
    neutron_stiffness: SymTridiagonal | None = None
    neutron_mass: SymTridiagonal | None = None
    heat_load: np.ndarray | None = None
    neutron_load: np.ndarray | None = None


@dataclass(frozen=True)
class ReactorCoefficients:
    """Pointwise coefficient functions of the two subproblems.

    ``conductivity``, ``transmittivity`` and ``source`` map position arrays to
    coefficient arrays; ``diffusion``, ``removal`` and ``heat_release`` map
    (clamped) temperature arrays to coefficient arrays.  ``removal`` is the
    net absorption-minus-production cross section and ``heat_release`` the
    energy deposited per unit flux.
    """

    conductivity: Callable[[np.ndarray], np.ndarray]
    transmittivity: Callable[[np.ndarray], np.ndarray]
    source: Callable[[np.ndarray], np.ndarray]
    ambient_temperature: float
    diffusion: Callable[[np.ndarray], np.ndarray] | None = None
    removal: Callable[[np.ndarray], np.ndarray] | None = None
    heat_release: Callable[[np.ndarray], np.ndarray] | None = None
    clamp: tuple[float, float] | None = None


def _scatter_elements(e_ll, e_rr, e_lr) -> SymTridiagonal:
    """Accumulate per-element 2x2 contributions into tridiagonal storage."""
    batch = e_ll.shape[:-1]
    n_elem = e_ll.shape[-1]
    diag = np.zeros(batch + (n_elem + 1,))
    diag[..., :-1] += e_ll
    diag[..., 1:] += e_rr
    return SymTridiagonal(diag=diag, off=e_lr)


def assemble_stiffness(mesh: Mesh, coeff_gauss: np.ndarray) -> SymTridiagonal:
    """Stiffness matrix from coefficient values at the Gauss points.

    ``coeff_gauss`` has shape (..., n_elem, 2).  With linear elements the
    gradients are constant, so each element contributes
    (mean coefficient / dx) * [[1, -1], [-1, 1]].
    """
    ce = 0.5 * (coeff_gauss[..., 0] + coeff_gauss[..., 1]) / mesh.dx
    return _scatter_elements(ce, ce, -ce)


def assemble_mass(mesh: Mesh, coeff_gauss: np.ndarray) -> SymTridiagonal:
    """Weighted mass matrix from coefficient values at the Gauss points."""
    w = 0.5 * mesh.dx
    c0 = coeff_gauss[..., 0]
    c1 = coeff_gauss[..., 1]
    a, b = _SHAPE_LEFT[0], _SHAPE_RIGHT[0]
    e_ll = w * (c0 * a * a + c1 * b * b)
    e_rr = w * (c0 * b * b + c1 * a * a)
    e_lr = w * (c0 + c1) * a * b
    return _scatter_elements(e_ll, e_rr, e_lr)


def assemble_load(mesh: Mesh, coeff_gauss: np.ndarray) -> np.ndarray:
    """Load vector from integrand values at the Gauss points."""
    w = 0.5 * mesh.dx
    c0 = coeff_gauss[..., 0]
    c1 = coeff_gauss[..., 1]
    a, b = _SHAPE_LEFT[0], _SHAPE_RIGHT[0]
    batch = c0.shape[:-1]
    vec = np.zeros(batch + (mesh.n_nodes,))
    vec[..., :-1] += w * (c0 * a + c1 * b)
    vec[..., 1:] += w * (c0 * b + c1 * a)
    return vec


def interp_gauss(nodal: np.ndarray) -> np.ndarray:
    """Interpolate nodal values (..., r) to the Gauss points (..., n_elem, 2)."""
    left = nodal[..., :-1]
    right = nodal[..., 1:]
    return (left[..., None] * _SHAPE_LEFT[None, :]
            + right[..., None] * _SHAPE_RIGHT[None, :])


def clamp_temperature(t_gauss: np.ndarray,
                      clamp: tuple[float, float] | None) -> np.ndarray:
    """Clamp interpolated temperatures before the coefficient laws.

    Returns the clamped array; out-of-range values are counted and logged.
    Temperatures that remain non-positive afterwards raise
    :class:`DegenerateCoefficientError`.
    """
    if clamp is not None:
        lo, hi = clamp
        n_out = int(np.count_nonzero((t_gauss < lo) | (t_gauss > hi)))
        if n_out:
            logger.info("clamped %d quadrature temperatures to [%g, %g]",
                        n_out, lo, hi)
            t_gauss = np.clip(t_gauss, lo, hi)
    if np.any(t_gauss <= 0.0):
        raise DegenerateCoefficientError(
            "non-positive temperature at a quadrature point")
    return t_gauss


def assemble_operators(mesh: Mesh,
                       coeffs: ReactorCoefficients,
                       temperature: np.ndarray | None = None,
                       flux: np.ndarray | None = None) -> FEOperators:
    """Assemble all operators of the coupled problem for one realization.

    ``temperature`` and ``flux`` are nodal arrays of the previous iterate; the
    temperature-dependent operators and the heat load are only assembled when
    the required fields are present.  Nonlinear coefficients are evaluated at
    the interpolated temperature at each Gauss point, after clamping.
    """
    xg = mesh.gauss_points()
    k_g = np.broadcast_to(np.asarray(coeffs.conductivity(xg), dtype=float), xg.shape)
    h_g = np.broadcast_to(np.asarray(coeffs.transmittivity(xg), dtype=float), xg.shape)
    s_g = np.broadcast_to(np.asarray(coeffs.source(xg), dtype=float), xg.shape)
    for arr in (k_g, h_g, s_g):
        if np.any(~np.isfinite(arr)):
            raise ValueError("coefficient functions must be finite on [0, L]")

    stiff = assemble_stiffness(mesh, k_g)
    mass = assemble_mass(mesh, h_g)
    gram = gram_matrix_h1(mesh)

    neutron_stiffness = neutron_mass = heat_load = None
    neutron_load = assemble_load(mesh, s_g)

    if temperature is not None:
        t_g = clamp_temperature(interp_gauss(np.asarray(temperature, dtype=float)),
                                coeffs.clamp)
        if coeffs.diffusion is not None:
            neutron_stiffness = assemble_stiffness(mesh, coeffs.diffusion(t_g))
        if coeffs.removal is not None:
            neutron_mass = assemble_mass(mesh, coeffs.removal(t_g))
        if coeffs.heat_release is not None and flux is not None:
            phi_g = interp_gauss(np.asarray(flux, dtype=float))
            fission_g = coeffs.heat_release(t_g) * phi_g
            heat_load = assemble_load(mesh, fission_g + h_g * coeffs.ambient_temperature)

    return FEOperators(heat_stiffness=stiff, heat_mass=mass, gram=gram,
                       neutron_stiffness=neutron_stiffness,
                       neutron_mass=neutron_mass,
                       heat_load=heat_load, neutron_load=neutron_load)


def gram_matrix_h1(mesh: Mesh) -> SymTridiagonal:
    """H1 Gram matrix of the hat-function basis: L2 mass plus stiffness."""
    ones = np.ones((mesh.n_elem, 2))
    return assemble_mass(mesh, ones) + assemble_stiffness(mesh, ones)


def solve_banded(matrix: SymTridiagonal, rhs: np.ndarray) -> np.ndarray:
    """Solve A x = b for SPD symmetric tridiagonal A, batched.

    Uses an LDL^T factorization vectorized over leading batch dimensions.
    Raises :class:`FactorizationError` when any pivot is non-positive.
    """
    diag = np.asarray(matrix.diag, dtype=float)
    off = np.asarray(matrix.off, dtype=float)
    b = np.asarray(rhs, dtype=float)
    batch = np.broadcast_shapes(diag.shape[:-1], b.shape[:-1])
    r = diag.shape[-1]
    d = np.broadcast_to(diag, batch + (r,)).copy()
    e = np.broadcast_to(off, batch + (r - 1,)).copy()
    x = np.broadcast_to(b, batch + (r,)).copy()

    for i in range(1, r):
        piv = d[..., i - 1]
        if np.any(piv <= 0.0) or np.any(~np.isfinite(piv)):
            raise FactorizationError(_pivot_message(piv, i - 1))
        li = e[..., i - 1] / piv
        d[..., i] = d[..., i] - li * e[..., i - 1]
        e[..., i - 1] = li
    last = d[..., r - 1]
    if np.any(last <= 0.0) or np.any(~np.isfinite(last)):
        raise FactorizationError(_pivot_message(last, r - 1))

    for i in range(1, r):
        x[..., i] -= e[..., i - 1] * x[..., i - 1]
    x /= d
    for i in range(r - 2, -1, -1):
        x[..., i] -= e[..., i] * x[..., i + 1]
    return x


def _pivot_message(piv: np.ndarray, row: int) -> str:
    where = ""
    if piv.ndim > 0:
        bad = np.nonzero(~(piv > 0.0))
        where = f" (batch index {tuple(int(i[0]) for i in bad)})"
    return f"matrix not positive definite: pivot {row} failed{where}"
