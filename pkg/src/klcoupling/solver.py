"""Partitioned Gauss-Seidel solvers for the stochastic reactor problem.

Three solution modes share the same assembly and banded-solve kernels: a
per-sample deterministic iteration (Monte Carlo workhorse), a chaos-based
iteration that projects both fields nonintrusively at every iteration, and
the same iteration with a per-iteration weighted KL reduction of the
temperature before it is handed to the neutronics subproblem.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import basis as pcb
from . import klreduce
from .errors import (DivergenceError, IncompatibleInputsError,
                     RealizationError)
from .field import (FieldModel, build_field_model, evaluate_field,
                    field_values)
from .klreduce import KLRecord
from .meshfem import (Mesh, ReactorCoefficients, SymTridiagonal,
                      assemble_load, assemble_mass, assemble_stiffness,
                      build_mesh, clamp_temperature, gram_matrix_h1,
                      interp_gauss, solve_banded)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProblemConfig:
    """All parameters of the reactor benchmark, with their standard values."""

    length: float = 100.0                 # cm
    n_elem: int = 40
    conductivity: float = 100.0           # J/K/cm/s
    diffusion_ref: float = 2.2            # cm
    absorption_ref: float = 0.0195        # 1/cm
    fission_ref: float = 0.0075           # 1/cm
    neutrons_per_fission: float = 2.2
    neutron_source: float = 5.0e11        # neutrons/s/cm^3
    ambient_temperature: float = 390.0    # K
    fission_energy: float = 3.0e-11       # J/neutron
    reference_temperature: float = 390.0  # K
    min_temperature: float = 390.0        # K
    max_temperature: float = 1000.0       # K
    field_mean: float = 0.17              # J/K/cm^3/s
    field_variation: float = 0.10
    correlation_length: float = 15.0      # cm
    field_terms: int = 10
    degree: int = 4
    quadrature_level: int | None = None   # defaults to degree + 1
    max_iterations: int = 20
    update_tolerance: float = 1e-10
    kl_tolerance: float | None = None
    kl_tolerance_fraction: float | None = None

    def __post_init__(self):
        for name in ("length", "conductivity", "diffusion_ref", "absorption_ref",
                     "fission_ref", "neutrons_per_fission", "neutron_source",
                     "ambient_temperature", "reference_temperature",
                     "field_mean", "correlation_length"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.fission_energy < 0.0:   # zero decouples the heat subproblem
            raise ValueError("fission_energy must be nonnegative")
        if self.absorption_ref <= self.neutrons_per_fission * self.fission_ref:
            raise ValueError("configuration is not subcritical: "
                             "absorption must exceed fission production")
        if self.field_variation < 0.0:
            raise ValueError("field_variation must be nonnegative")
        if self.quadrature_level is None:
            object.__setattr__(self, "quadrature_level", self.degree + 1)
        for name, low in (("n_elem", 1), ("field_terms", 1), ("degree", 0),
                          ("quadrature_level", 1), ("max_iterations", 1)):
            if getattr(self, name) < low:
                raise ValueError(f"{name} must be at least {low}")

    @property
    def level(self) -> int:
        return self.quadrature_level

    def config_hash(self) -> str:
        """Digest of the physical problem and iteration controls.

        Surrogate-discretization knobs (chaos degree, quadrature level) and
        reduction tolerances are run parameters, not part of the problem:
        runs that may legitimately be compared against each other (reduced
        vs unreduced, or surrogates of several degrees against one sampling
        reference) share the hash.
        """
        skip = ("kl_tolerance", "kl_tolerance_fraction",
                "degree", "quadrature_level")
        payload = {k: v for k, v in asdict(self).items() if k not in skip}
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def with_conductivity(self, k: float) -> "ProblemConfig":
        return replace(self, conductivity=k)


class ReactorSystem:
    """Mesh, field model, operators and solve kernels for one configuration."""

    def __init__(self, cfg: ProblemConfig):
        self.cfg = cfg
        self.mesh: Mesh = build_mesh(cfg.length, cfg.n_elem)
        self.gram: SymTridiagonal = gram_matrix_h1(self.mesh)
        self.gram_dense = self.gram.to_dense()
        self.field: FieldModel = build_field_model(
            self.mesh, cfg.field_mean, cfg.field_variation,
            cfg.correlation_length, cfg.field_terms)
        self.coeffs = ReactorCoefficients(
            conductivity=lambda x: np.full_like(x, cfg.conductivity),
            transmittivity=lambda x: np.full_like(x, cfg.field_mean),
            source=lambda x: np.full_like(x, cfg.neutron_source),
            ambient_temperature=cfg.ambient_temperature,
            diffusion=self.diffusion,
            removal=self.removal,
            heat_release=self.heat_release,
            clamp=(cfg.min_temperature, cfg.max_temperature),
        )
        ones = np.ones((self.mesh.n_elem, 2))
        self.heat_stiffness = assemble_stiffness(self.mesh, cfg.conductivity * ones)
        self.neutron_load = assemble_load(self.mesh, cfg.neutron_source * ones)

    # temperature laws (square-root scaling around the reference temperature)
    def diffusion(self, t: np.ndarray) -> np.ndarray:
        return self.cfg.diffusion_ref * np.sqrt(t / self.cfg.reference_temperature)

    def removal(self, t: np.ndarray) -> np.ndarray:
        net = self.cfg.absorption_ref - self.cfg.neutrons_per_fission * self.cfg.fission_ref
        return net * np.sqrt(self.cfg.reference_temperature / t)

    def heat_release(self, t: np.ndarray) -> np.ndarray:
        return (self.cfg.fission_energy * self.cfg.fission_ref
                * np.sqrt(self.cfg.reference_temperature / t))

    # ------------------------------------------------------------------
    # field realizations
    # ------------------------------------------------------------------

    def field_nodal(self, xi: np.ndarray) -> np.ndarray:
        """Nodal transmittivity values for samples xi, raising on h <= 0."""
        return evaluate_field(self.field, xi)

    def field_nodal_masked(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nodal transmittivity plus a validity mask (no raise on bad samples)."""
        h = field_values(self.field, xi)
        return h, np.all(h > 0.0, axis=-1)

    # ------------------------------------------------------------------
    # subproblem solves (batched over arbitrary leading dimensions)
    # ------------------------------------------------------------------

    def solve_heat(self, h_gauss: np.ndarray, t_prev: np.ndarray,
                   phi_prev: np.ndarray) -> np.ndarray:
        """One heat half-step: [K + H(xi)] T = q(T_prev, Phi_prev)."""
        cfg = self.cfg
        operator = self.heat_stiffness + assemble_mass(self.mesh, h_gauss)
        t_g = clamp_temperature(interp_gauss(t_prev), self.coeffs.clamp)
        fission = self.heat_release(t_g) * interp_gauss(phi_prev)
        rhs = assemble_load(self.mesh, fission + h_gauss * cfg.ambient_temperature)
        return solve_banded(operator, rhs)

    def solve_neutronics(self, t_nodal: np.ndarray) -> np.ndarray:
        """One neutronics half-step: [D(T) + M(T)] Phi = s."""
        t_g = clamp_temperature(interp_gauss(t_nodal), self.coeffs.clamp)
        operator = (assemble_stiffness(self.mesh, self.diffusion(t_g))
                    + assemble_mass(self.mesh, self.removal(t_g)))
        return solve_banded(operator, np.broadcast_to(
            self.neutron_load, t_nodal.shape).copy())

    def residuals(self, h_gauss: np.ndarray, t: np.ndarray,
                  phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Relative fixed-point residuals of both discrete equations."""
        heat_op = self.heat_stiffness + assemble_mass(self.mesh, h_gauss)
        t_g = clamp_temperature(interp_gauss(t), self.coeffs.clamp)
        fission = self.heat_release(t_g) * interp_gauss(phi)
        q = assemble_load(self.mesh,
                          fission + h_gauss * self.cfg.ambient_temperature)
        res_heat = (np.linalg.norm(heat_op.matvec(t) - q, axis=-1)
                    / np.linalg.norm(q, axis=-1))
        neut_op = (assemble_stiffness(self.mesh, self.diffusion(t_g))
                   + assemble_mass(self.mesh, self.removal(t_g)))
        res_neut = (np.linalg.norm(neut_op.matvec(phi) - self.neutron_load, axis=-1)
                    / np.linalg.norm(self.neutron_load))
        return res_heat, res_neut

    def w_norm(self, x: np.ndarray) -> np.ndarray:
        """W-weighted Euclidean norm along the last axis."""
        return np.sqrt(np.maximum(self.gram.quad_form(x), 0.0))

    def initial_fields(self, batch: tuple = ()) -> tuple[np.ndarray, np.ndarray]:
        t0 = np.full(batch + (self.mesh.n_nodes,), self.cfg.ambient_temperature)
        phi0 = np.zeros(batch + (self.mesh.n_nodes,))
        return t0, phi0


# ---------------------------------------------------------------------------
# deterministic per-sample iteration
# ---------------------------------------------------------------------------

@dataclass
class DeterministicTrace:
    update_t: np.ndarray      # (n_iters, batch) relative W-updates
    update_phi: np.ndarray
    n_iterations: int
    residual_heat: np.ndarray
    residual_neutron: np.ndarray
    diverged: np.ndarray      # per-sample flags


def gauss_seidel_batch(system: ReactorSystem, xi: np.ndarray,
                       init: tuple[np.ndarray, np.ndarray] | None = None,
                       max_iterations: int | None = None,
                       update_tolerance: float | None = None,
                       raise_on_divergence: bool = True
                       ) -> tuple[np.ndarray, np.ndarray, DeterministicTrace]:
    """Lock-step Gauss-Seidel over a batch of field samples.

    Every sample follows its own iteration bit-exactly as if solved alone:
    a sample that meets the update tolerance is frozen while the rest of the
    batch continues, so results never depend on the batch composition.
    A sample whose update norm grows three consecutive iterations either
    raises :class:`DivergenceError` or is flagged in the trace.
    """
    cfg = system.cfg
    max_iterations = cfg.max_iterations if max_iterations is None else max_iterations
    update_tolerance = (cfg.update_tolerance if update_tolerance is None
                        else update_tolerance)
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    h_nodal = system.field_nodal(xi)
    h_gauss = interp_gauss(h_nodal)

    if init is None:
        t, phi = system.initial_fields(batch=(xi.shape[0],))
    else:
        t = np.broadcast_to(init[0], (xi.shape[0], system.mesh.n_nodes)).copy()
        phi = np.broadcast_to(init[1], (xi.shape[0], system.mesh.n_nodes)).copy()

    n = xi.shape[0]
    ups_t, ups_phi = [], []
    active = np.ones(n, dtype=bool)
    grow_count = np.zeros(n, dtype=int)
    prev_abs = None
    guard = 1e-12   # relative level below which floor jitter is ignored
    for _ in range(max_iterations):
        t_new = system.solve_heat(h_gauss, t, phi)
        phi_new = system.solve_neutronics(t_new)
        abs_t = system.w_norm(t_new - t)
        abs_phi = system.w_norm(phi_new - phi)
        du_t = abs_t / np.maximum(system.w_norm(t_new), 1e-300)
        du_phi = abs_phi / np.maximum(system.w_norm(phi_new), 1e-300)
        if prev_abs is not None:
            grew = active & (((abs_t > prev_abs[0]) & (du_t > guard))
                             | ((abs_phi > prev_abs[1]) & (du_phi > guard)))
            grow_count = np.where(grew, grow_count + 1, 0)
            if np.any(grow_count >= 3):
                if raise_on_divergence:
                    bad = int(np.argmax(grow_count >= 3))
                    raise DivergenceError(
                        f"update norm grew 3 consecutive iterations (sample {bad})")
                active &= grow_count < 3
        ups_t.append(np.where(active, du_t, 0.0))
        ups_phi.append(np.where(active, du_phi, 0.0))
        t = np.where(active[:, None], t_new, t)
        phi = np.where(active[:, None], phi_new, phi)
        prev_abs = (abs_t, abs_phi)
        active &= ~((du_t < update_tolerance) & (du_phi < update_tolerance))
        if not np.any(active):
            break

    res_heat, res_neut = system.residuals(h_gauss, t, phi)
    trace = DeterministicTrace(update_t=np.array(ups_t),
                               update_phi=np.array(ups_phi),
                               n_iterations=len(ups_t),
                               residual_heat=res_heat,
                               residual_neutron=res_neut,
                               diverged=grow_count >= 3)
    return t, phi, trace


def gauss_seidel_deterministic(cfg: ProblemConfig, xi: np.ndarray,
                               init: tuple[np.ndarray, np.ndarray] | None = None,
                               system: ReactorSystem | None = None
                               ) -> tuple[np.ndarray, np.ndarray, DeterministicTrace]:
    """Solve one realization of the coupled problem."""
    system = ReactorSystem(cfg) if system is None else system
    t, phi, trace = gauss_seidel_batch(system, np.asarray(xi, dtype=float)[None, :],
                                       init=init)
    return t[0], phi[0], trace


# ---------------------------------------------------------------------------
# chaos-based iterations
# ---------------------------------------------------------------------------

class StochasticWorkspace:
    """Quadrature rule, basis matrix and per-node field data for PC runs."""

    def __init__(self, system: ReactorSystem, threads: int = 1,
                 degree: int | None = None, level: int | None = None):
        cfg = system.cfg
        degree = cfg.degree if degree is None else degree
        level = cfg.level if level is None else level
        self.system = system
        self.threads = threads
        self.rule = pcb.sparse_grid(cfg.field_terms, level)
        self.basis = pcb.enumerate_multi_indices(cfg.field_terms, degree)
        with threadpool_limits(limits=1):
            self.psi = pcb.basis_matrix(self.basis, self.rule.nodes)
        self.psi_weighted = self.psi * self.rule.weights[:, None]
        h_nodal, valid = system.field_nodal_masked(self.rule.nodes)
        if not np.all(valid):
            bad = int(np.argmin(valid))
            raise RealizationError(
                f"non-positive transmittivity at quadrature node {bad}")
        self.h_gauss = interp_gauss(h_nodal)

    def evaluate(self, coeffs: np.ndarray) -> np.ndarray:
        """Evaluate a PC surrogate at every quadrature node."""
        return pcb.rows_matmul(self.psi, coeffs, threads=self.threads)

    def project(self, node_values: np.ndarray) -> np.ndarray:
        """Nonintrusive projection of per-node values onto the basis."""
        return pcb.nodes_matmul(self.psi_weighted, node_values,
                                threads=self.threads)


@dataclass
class IterationTrace:
    """History of one chaos-based Gauss-Seidel run."""

    basis: pcb.MultiIndexSet
    config_hash: str
    temperature: list[pcb.PCVector] = field(default_factory=list)  # [0] = init
    flux: list[pcb.PCVector] = field(default_factory=list)
    update_t: list[float] = field(default_factory=list)       # absolute W-norms
    update_phi: list[float] = field(default_factory=list)
    dims: list[int] = field(default_factory=list)             # reduced runs only
    kl_records: list[KLRecord] | None = None
    kl_tolerance: float | None = None
    seconds: list[float] = field(default_factory=list)

    @property
    def n_iterations(self) -> int:
        return len(self.temperature) - 1


def fluctuation_energy(coeffs: np.ndarray, gram: SymTridiagonal) -> float:
    """Sum over |alpha| >= 1 of q_alpha^T W q_alpha."""
    return float(np.sum(gram.quad_form(coeffs[1:])))


def coefficient_energy(coeffs: np.ndarray, gram: SymTridiagonal) -> float:
    """Sum over all alpha of q_alpha^T W q_alpha."""
    return float(np.sum(gram.quad_form(coeffs)))


def _pc_iterate(cfg: ProblemConfig, system: ReactorSystem,
                reduce_temperature: bool,
                tol: float | None, tol_fraction: float | None,
                sigma_sq: float | None, threads: int,
                max_iterations: int | None = None,
                update_tolerance: float | None = None
                ) -> tuple[pcb.PCVector, pcb.PCVector, IterationTrace]:
    if cfg.config_hash() != system.cfg.config_hash():
        raise IncompatibleInputsError(
            "the supplied system was built for a different problem")
    max_iterations = cfg.max_iterations if max_iterations is None else max_iterations
    update_tolerance = (cfg.update_tolerance if update_tolerance is None
                        else update_tolerance)
    ws = StochasticWorkspace(system, threads=threads, degree=cfg.degree,
                             level=cfg.level)
    n_terms = len(ws.basis)
    r = system.mesh.n_nodes

    t_coeffs = np.zeros((n_terms, r))
    t_coeffs[0] = cfg.ambient_temperature
    phi_coeffs = np.zeros((n_terms, r))

    trace = IterationTrace(basis=ws.basis, config_hash=cfg.config_hash(),
                           kl_records=[] if reduce_temperature else None)
    trace.temperature.append(pcb.PCVector(ws.basis, t_coeffs.copy()))
    trace.flux.append(pcb.PCVector(ws.basis, phi_coeffs.copy()))

    tol_abs = tol
    if reduce_temperature and tol_abs is None and tol_fraction is not None \
            and sigma_sq is not None:
        tol_abs = tol_fraction * sigma_sq
        trace.kl_tolerance = tol_abs

    with threadpool_limits(limits=1):
        for _ in range(max_iterations):
            tic = time.perf_counter()
            t_nodes = ws.evaluate(t_coeffs)
            phi_nodes = ws.evaluate(phi_coeffs)
            t_raw = system.solve_heat(ws.h_gauss, t_nodes, phi_nodes)
            t_new = ws.project(t_raw)

            if reduce_temperature:
                if tol_abs is None:
                    # lazy fallback: the first iterate whose fluctuation
                    # energy is meaningful (the initial transient can leave
                    # round-off-level noise that must not set the tolerance)
                    energy = fluctuation_energy(t_new, system.gram)
                    total = coefficient_energy(t_new, system.gram)
                    if energy > 1e-12 * total:
                        tol_abs = tol_fraction * energy
                        trace.kl_tolerance = tol_abs
                        logger.info("resolved KL tolerance from first-iterate "
                                    "energy: %.6g", tol_abs)
                current_tol = tol_abs if tol_abs is not None else 0.0
                record = klreduce.reduce_pc(pcb.PCVector(ws.basis, t_new),
                                            system.gram_dense, current_tol,
                                            weighting="gram_h1")
                trace.kl_records.append(record)
                trace.dims.append(record.dim)
                t_pass = klreduce.reconstruct(record, ws.basis).coeffs
            else:
                t_pass = t_new

            phi_raw = system.solve_neutronics(ws.evaluate(t_pass))
            phi_new = ws.project(phi_raw)

            du_t = np.sqrt(coefficient_energy(t_new - t_coeffs, system.gram))
            du_phi = np.sqrt(coefficient_energy(phi_new - phi_coeffs, system.gram))
            t_coeffs, phi_coeffs = t_new, phi_new
            trace.temperature.append(pcb.PCVector(ws.basis, t_coeffs))
            trace.flux.append(pcb.PCVector(ws.basis, phi_coeffs))
            trace.update_t.append(du_t)
            trace.update_phi.append(du_phi)
            trace.seconds.append(time.perf_counter() - tic)

            rel_t = du_t / max(np.sqrt(coefficient_energy(t_coeffs, system.gram)),
                               1e-300)
            rel_phi = du_phi / max(
                np.sqrt(coefficient_energy(phi_coeffs, system.gram)), 1e-300)
            if rel_t < update_tolerance and rel_phi < update_tolerance:
                break

    t_pc = pcb.PCVector(ws.basis, t_coeffs)
    phi_pc = pcb.PCVector(ws.basis, phi_coeffs)
    return t_pc, phi_pc, trace


def pc_iterate_full(cfg: ProblemConfig, threads: int = 1,
                    system: ReactorSystem | None = None,
                    max_iterations: int | None = None,
                    update_tolerance: float | None = None
                    ) -> tuple[pcb.PCVector, pcb.PCVector, IterationTrace]:
    """Chaos-based Gauss-Seidel without dimension reduction."""
    system = ReactorSystem(cfg) if system is None else system
    return _pc_iterate(cfg, system, reduce_temperature=False, tol=None,
                       tol_fraction=None, sigma_sq=None, threads=threads,
                       max_iterations=max_iterations,
                       update_tolerance=update_tolerance)


def pc_iterate_reduced(cfg: ProblemConfig, tol: float | None = None,
                       tol_fraction: float | None = None,
                       sigma_sq: float | None = None, threads: int = 1,
                       system: ReactorSystem | None = None,
                       max_iterations: int | None = None,
                       update_tolerance: float | None = None
                       ) -> tuple[pcb.PCVector, pcb.PCVector, IterationTrace]:
    """Chaos-based Gauss-Seidel with per-iteration KL reduction of the temperature.

    The tolerance is the allowed residual W-energy of the truncation.  Pass
    either an absolute ``tol`` or a ``tol_fraction`` of the converged
    fluctuation energy ``sigma_sq`` of a completed unreduced run; when
    ``sigma_sq`` is omitted the fraction is resolved against the first
    iterate with nonzero fluctuation energy (logged).
    """
    if tol is None and tol_fraction is None:
        tol = cfg.kl_tolerance
        tol_fraction = cfg.kl_tolerance_fraction
    if tol is None and tol_fraction is None:
        raise ValueError("a KL tolerance (absolute or fractional) is required")
    system = ReactorSystem(cfg) if system is None else system
    return _pc_iterate(cfg, system, reduce_temperature=True, tol=tol,
                       tol_fraction=tol_fraction, sigma_sq=sigma_sq,
                       threads=threads, max_iterations=max_iterations,
                       update_tolerance=update_tolerance)


def sigma_fluctuation(pc: pcb.PCVector, gram: SymTridiagonal) -> float:
    """Root fluctuation energy sqrt(sum_{|alpha|>=1} ||q_alpha||_W^2)."""
    return float(np.sqrt(fluctuation_energy(pc.coeffs, gram)))
