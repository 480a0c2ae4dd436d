"""Random thermal-transmittivity field: kernel, eigenmodes, realizations.

The field is h(x, xi) = mean * (1 + cov * sum_j sqrt(lambda_j) sqrt(3) xi_j
phi_j(x)) with xi_j independent uniform on [-1, 1] and (lambda_j, phi_j) the
leading eigenpairs of the covariance integral operator, discretized by an L2
Galerkin projection on the hat-function basis of the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DecompositionError, RealizationError
from .meshfem import Mesh, assemble_mass, interp_gauss


def covariance_kernel(x, y, corr_length: float):
    """Stationary unit-variance kernel with removable singularity at x = y.

    C(x, y) = [2a/(pi (x-y))]^2 sin^2(pi (x-y) / (2a)), which equals
    sinc((x-y)/(2a))^2 in numpy's normalized-sinc convention.
    """
    if corr_length <= 0.0:
        raise ValueError(f"correlation length must be positive, got {corr_length}")
    delta = (np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return np.sinc(delta / (2.0 * corr_length)) ** 2


@dataclass(frozen=True)
class FieldModel:
    """Truncated eigenexpansion of the transmittivity field on a mesh."""

    mesh: Mesh
    mean: float
    cov: float            # coefficient of variation
    corr_length: float
    eigenvalues: np.ndarray    # (n_terms,), descending
    modes: np.ndarray          # (n_terms, r) nodal values, L2-orthonormal

    @property
    def n_terms(self) -> int:
        return self.eigenvalues.size


def field_eigendecomposition(mesh: Mesh, corr_length: float,
                             n_terms: int) -> tuple[np.ndarray, np.ndarray]:
    """Leading eigenpairs of the covariance operator on the mesh.

    Solves the L2 Galerkin eigenproblem A c = lambda B c with
    A_ij = int int N_i(x) C(x,y) N_j(y) dy dx (2x2 Gauss per element pair)
    and B the mass matrix.  Modes are returned as nodal values, orthonormal
    in L2(0, L), eigenvalues sorted descending, sign fixed so the
    largest-magnitude entry is positive.
    """
    r = mesh.n_nodes
    if n_terms > r:
        raise ValueError(f"cannot retain {n_terms} terms on a {r}-node mesh")
    xg = mesh.gauss_points().ravel()
    wq = np.full(xg.size, 0.5 * mesh.dx)
    # hat-function values at the Gauss points, (n_gauss, r)
    shapes = interp_gauss(np.eye(r)).transpose(1, 2, 0).reshape(xg.size, r)
    pw = shapes * wq[:, None]
    a = pw.T @ covariance_kernel(xg[:, None], xg[None, :], corr_length) @ pw
    a = 0.5 * (a + a.T)
    b = assemble_mass(mesh, np.ones((mesh.n_elem, 2))).to_dense()
    try:
        lam, vec = scipy.linalg.eigh(a, b)
    except scipy.linalg.LinAlgError as exc:
        raise DecompositionError(f"covariance eigenproblem failed: {exc}") from exc
    lam = lam[::-1][:n_terms]
    vec = vec[:, ::-1][:, :n_terms]
    # eigh normalizes c^T B c = 1, i.e. the modes are L2-orthonormal already
    sign = np.sign(vec[np.argmax(np.abs(vec), axis=0), np.arange(n_terms)])
    sign[sign == 0] = 1.0
    return lam, (vec * sign).T


def build_field_model(mesh: Mesh, mean: float, cov: float,
                      corr_length: float, n_terms: int) -> FieldModel:
    """Assemble a :class:`FieldModel` from the Galerkin eigendecomposition."""
    if mean <= 0.0:
        raise ValueError(f"field mean must be positive, got {mean}")
    if not 0.0 <= cov < 1.0 / np.sqrt(3.0):
        raise ValueError(
            f"coefficient of variation must lie in [0, 1/sqrt(3)), got {cov}")
    lam, modes = field_eigendecomposition(mesh, corr_length, n_terms)
    return FieldModel(mesh=mesh, mean=mean, cov=cov, corr_length=corr_length,
                      eigenvalues=lam, modes=modes)


def field_values(model: FieldModel, xi: np.ndarray) -> np.ndarray:
    """Nodal transmittivity values without positivity checks.

    The mode sum runs in a fixed order one term at a time, so a sample's
    values are bit-identical whether it is evaluated alone or in a batch.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != model.n_terms:
        raise ValueError("sample dimension does not match the retained terms")
    scaled = xi * np.sqrt(np.clip(model.eigenvalues, 0.0, None))
    fluct = np.zeros(xi.shape[:-1] + (model.modes.shape[1],))
    for j in range(model.n_terms):
        fluct += scaled[..., j, None] * model.modes[j]
    return model.mean * (1.0 + model.cov * np.sqrt(3.0) * fluct)


def evaluate_field(model: FieldModel, xi: np.ndarray) -> np.ndarray:
    """Nodal transmittivity values for samples xi of shape (..., n_terms).

    Raises :class:`RealizationError` when any realization is non-positive.
    """
    h = field_values(model, xi)
    if np.any(h <= 0.0):
        bad = np.atleast_1d(np.any(h <= 0.0, axis=-1)).nonzero()[0]
        raise RealizationError(
            f"non-positive transmittivity realization at sample index "
            f"{bad.tolist()}")
    return h


def save_field_csv(path, model: FieldModel) -> None:
    """Eigenvalues and nodal modes as CSV for plotting."""
    with open(path, "w") as fh:
        header = "x," + ",".join(
            f"mode_{j + 1}" for j in range(model.n_terms))
        fh.write("eigenvalues," + ",".join(
            f"{v:.17g}" for v in model.eigenvalues) + "\n")
        fh.write(header + "\n")
        for i, x in enumerate(model.mesh.nodes):
            row = [f"{x:.17g}"] + [f"{model.modes[j, i]:.17g}"
                                   for j in range(model.n_terms)]
            fh.write(",".join(row) + "\n")
