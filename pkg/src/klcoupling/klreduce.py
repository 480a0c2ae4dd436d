"""Weighted Karhunen-Loeve reduction of chaos-represented random vectors.

Given a :class:`PCVector` q and an SPD weighting matrix W (the Gram matrix of
the discretization basis), the reduction solves W C W phi = lambda W phi,
keeps the smallest number of modes meeting an energy tolerance, and expresses
the reduced scalar variables by their own chaos coefficients so the truncated
vector remains a fully characterized PCVector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import MultiIndexSet, PCVector
from .errors import DecompositionError, FactorizationError

# Modes with lambda_j below this fraction of lambda_1 are never selected.
# For eigenpairs computed from an assembled covariance matrix the small
# eigenvalues are round-off noise (they can even be negative), and dividing
# by sqrt(lambda_j) there would amplify that noise into the reduced-variable
# coordinates.  The SVD route of :func:`reduce_pc` never divides by the
# singular values and its spectrum is nonnegative by construction, so there
# every positive mode is selectable and tol = 0 retains the vector exactly.
RANK_FLOOR = 1e-12
RANK_FLOOR_SVD = 0.0


@dataclass(frozen=True)
class KLRecord:
    """One weighted KL decomposition of a PC-represented random vector."""

    mean: np.ndarray         # (w,)
    eigenvalues: np.ndarray  # (w,), descending
    modes: np.ndarray        # (w, w), column j is the W-orthonormal mode j
    dim: int                 # retained dimension d
    eta: np.ndarray          # (n_terms - 1, d) chaos coordinates, |alpha| >= 1
    weighting: str = "W"

    @property
    def truncation_energy(self) -> float:
        """W-weighted mean-square truncation error, sum of dropped eigenvalues."""
        return float(np.sum(self.eigenvalues[self.dim:]))


def pc_second_order(pc: PCVector) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of a PC vector, directly from its coefficients."""
    fluct = pc.fluctuation
    cov = fluct.T @ fluct
    return pc.mean.copy(), 0.5 * (cov + cov.T)


def pc_weighted_energy(pc: PCVector, weight: np.ndarray) -> float:
    """Fluctuation energy sum_{|alpha|>=1} q_alpha^T W q_alpha."""
    fluct = pc.fluctuation
    return float(np.sum((fluct @ weight) * fluct))


def weighted_kl(mean: np.ndarray, covariance: np.ndarray,
                weight: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve W C W phi = lambda W phi via Cholesky reduction.

    Returns the full spectrum (descending) and the modes as columns of a
    (w, w) array satisfying phi_i^T W phi_j = delta_ij, signs fixed so each
    mode's largest-magnitude entry is positive.
    """
    w = np.asarray(weight, dtype=float)
    c = np.asarray(covariance, dtype=float)
    if mean is not None and np.asarray(mean).shape[0] != c.shape[0]:
        raise ValueError("mean and covariance sizes do not match")
    try:
        chol = scipy.linalg.cholesky(w, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(f"weighting matrix is not SPD: {exc}") from exc
    # L^T C L psi = lambda psi, phi = L^{-T} psi
    reduced = chol.T @ c @ chol
    try:
        lam, psi = scipy.linalg.eigh(0.5 * (reduced + reduced.T))
    except scipy.linalg.LinAlgError as exc:
        raise DecompositionError(f"symmetric eigensolve failed: {exc}") from exc
    lam = lam[::-1]
    psi = psi[:, ::-1]
    modes = scipy.linalg.solve_triangular(chol.T, psi, lower=False)
    sign = np.sign(modes[np.argmax(np.abs(modes), axis=0),
                         np.arange(modes.shape[1])])
    sign[sign == 0] = 1.0
    return lam, modes * sign


def select_dimension(eigenvalues: np.ndarray, total_energy: float,
                     tol: float, rank_floor: float = RANK_FLOOR) -> int:
    """Smallest d whose residual energy total - sum_{j<=d} lambda_j <= tol.

    ``total_energy`` is the independently computed fluctuation energy
    sum_{|alpha|>=1} q_alpha^T W q_alpha.  Modes below the rank floor
    (lambda_j <= rank_floor * lambda_1) are never selected, so d is capped
    at the numerical rank even for tol = 0.
    """
    if tol < 0.0:
        raise ValueError(f"tolerance must be nonnegative, got {tol}")
    lam = np.asarray(eigenvalues, dtype=float)
    if total_energy <= tol:
        return 0
    floor = rank_floor * max(lam[0], 0.0) if lam.size else 0.0
    n_max = int(np.count_nonzero(lam > floor))
    residual = total_energy - np.cumsum(lam[:n_max])
    meets = np.nonzero(residual <= tol)[0]
    return int(meets[0]) + 1 if meets.size else n_max


def reduced_coords(pc: PCVector, eigenvalues: np.ndarray, modes: np.ndarray,
                   weight: np.ndarray, dim: int, weighting: str = "W",
                   rank_floor: float = RANK_FLOOR) -> KLRecord:
    """Chaos coordinates of the reduced variables, eta_{j,alpha} for j <= dim.

    eta_{j,alpha} = q_alpha^T W phi^j / sqrt(lambda_j) for |alpha| >= 1; the
    selected modes must sit above the rank floor.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    floor = rank_floor * max(lam[0], 0.0) if lam.size else 0.0
    if dim > 0 and lam[dim - 1] <= floor:
        raise DecompositionError(
            f"mode {dim} has eigenvalue {lam[dim - 1]:g} at or below the rank floor")
    proj = pc.fluctuation @ (np.asarray(weight) @ modes[:, :dim])
    eta = proj / np.sqrt(lam[:dim]) if dim > 0 else proj
    return KLRecord(mean=pc.mean.copy(), eigenvalues=lam, modes=modes,
                    dim=int(dim), eta=eta, weighting=weighting)


def reconstruct(record: KLRecord, basis: MultiIndexSet) -> PCVector:
    """Truncated PC vector q^d = mean + sum_{j<=d} sqrt(lambda_j) eta_j phi^j."""
    w = record.mean.size
    coeffs = np.zeros((len(basis), w))
    coeffs[0] = record.mean
    if record.dim > 0:
        scaled = record.modes[:, :record.dim] * np.sqrt(record.eigenvalues[:record.dim])
        coeffs[1:] = record.eta @ scaled.T
    return PCVector(basis=basis, coeffs=coeffs)


def reduce_pc(pc: PCVector, weight: np.ndarray, tol: float,
              weighting: str = "W") -> KLRecord:
    """Full reduction pipeline: eigenstructure, d selection, eta coordinates.

    When the coefficient matrix has at least as many fluctuation rows as
    components, the eigenstructure is computed from an SVD of the weighted
    coefficient matrix Q L (Q the fluctuation coefficients, W = L L^T): the
    right singular vectors give the modes, the squared singular values the
    eigenvalues and the left singular vectors the eta coordinates directly.
    This is the same decomposition the covariance eigenproblem defines, but
    it resolves small modes to full precision instead of the sqrt(eps)
    attainable after forming the covariance, which exact-reduction
    round trips need.  Otherwise it falls back to the covariance route.
    """
    n_fluct, width = pc.fluctuation.shape
    total = pc_weighted_energy(pc, weight)
    if n_fluct < width:
        mean, cov = pc_second_order(pc)
        lam, modes = weighted_kl(mean, cov, weight)
        dim = select_dimension(lam, total, tol)
        return reduced_coords(pc, lam, modes, weight, dim, weighting=weighting)

    try:
        chol = scipy.linalg.cholesky(np.asarray(weight, dtype=float), lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(f"weighting matrix is not SPD: {exc}") from exc
    try:
        u, sing, vt = np.linalg.svd(pc.fluctuation @ chol, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"SVD failed: {exc}") from exc
    lam = sing ** 2
    modes = scipy.linalg.solve_triangular(chol.T, vt.T, lower=False)
    sign = np.sign(modes[np.argmax(np.abs(modes), axis=0),
                         np.arange(modes.shape[1])])
    sign[sign == 0] = 1.0
    modes = modes * sign
    eta_full = u * sign          # eta columns flip with their modes
    dim = select_dimension(lam, total, tol, rank_floor=RANK_FLOOR_SVD)
    return KLRecord(mean=pc.mean.copy(), eigenvalues=lam, modes=modes,
                    dim=int(dim), eta=eta_full[:, :dim], weighting=weighting)


def save_kl_csv(path_prefix, record: KLRecord) -> None:
    """Write eigenvalues, modes and eta coordinates as three CSV files."""
    with open(f"{path_prefix}_eigenvalues.csv", "w") as fh:
        fh.write("j,eigenvalue\n")
        for j, lam in enumerate(record.eigenvalues, start=1):
            fh.write(f"{j},{lam:.17g}\n")
    with open(f"{path_prefix}_modes.csv", "w") as fh:
        fh.write("component,mean," + ",".join(
            f"mode_{j + 1}" for j in range(record.dim)) + "\n")
        for i in range(record.mean.size):
            cells = [str(i), f"{record.mean[i]:.17g}"]
            cells += [f"{record.modes[i, j]:.17g}" for j in range(record.dim)]
            fh.write(",".join(cells) + "\n")
    with open(f"{path_prefix}_eta.csv", "w") as fh:
        fh.write("term," + ",".join(
            f"eta_{j + 1}" for j in range(record.dim)) + "\n")
        for i in range(record.eta.shape[0]):
            fh.write(",".join([str(i + 1)] + [f"{record.eta[i, j]:.17g}"
                                              for j in range(record.dim)]) + "\n")
