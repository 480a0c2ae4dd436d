"""Monte Carlo reference solver and surrogate-vs-sampling error estimators."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .basis import PCVector, basis_matrix, rows_matmul
from .errors import IncompatibleInputsError, RealizationError
from .solver import ProblemConfig, ReactorSystem, gauss_seidel_batch

MC_CHUNK = 4096          # fixed lock-step batch; never depends on threads
DEFAULT_SAMPLE_CAP = 10_000


@dataclass
class MCResult:
    """Sampling results with streaming field statistics."""

    n_samples: int
    seed: int
    config_hash: str
    xi: np.ndarray                 # (n, m) input draws
    mean_t: np.ndarray
    var_t: np.ndarray
    mean_phi: np.ndarray
    var_phi: np.ndarray
    temperature_samples: np.ndarray  # stored fields, up to the cap
    flux_samples: np.ndarray
    n_stored: int
    n_failures: int

    def digest(self) -> str:
        """Content hash of draws, statistics and stored fields."""
        h = hashlib.sha256()
        for arr in (self.xi, self.mean_t, self.var_t, self.mean_phi,
                    self.var_phi, self.temperature_samples, self.flux_samples):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(f"{self.n_samples},{self.seed},{self.n_failures}".encode())
        return h.hexdigest()


def _draw_samples(seed: int, n: int, dim: int) -> np.ndarray:
    """Counter-based draws: sample i comes from its own Philox stream."""
    xi = np.empty((n, dim))
    key = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    for i in range(n):
        gen = np.random.Generator(
            np.random.Philox(key=np.array([key, np.uint64(i)], dtype=np.uint64)))
        xi[i] = gen.uniform(-1.0, 1.0, dim)
    return xi


def _combine_moments(stats_a, stats_b):
    """Chan's pairwise update of (count, mean, m2) running moments."""
    n_a, mean_a, m2_a = stats_a
    n_b, mean_b, m2_b = stats_b
    n = n_a + n_b
    if n == 0:
        return stats_a
    delta = mean_b - mean_a
    mean = mean_a + delta * (n_b / n)
    m2 = m2_a + m2_b + delta ** 2 * (n_a * n_b / n)
    return n, mean, m2


def run_monte_carlo(cfg: ProblemConfig, n_samples: int, seed: int,
                    sample_cap: int = DEFAULT_SAMPLE_CAP, threads: int = 1,
                    system: ReactorSystem | None = None) -> MCResult:
    """Solve ``n_samples`` independent field realizations of the coupled problem.

    Draws are keyed by (seed, sample index) and samples are solved in fixed
    lock-step chunks with per-sample freezing, so results do not depend on
    chunking or on the thread count.  Field statistics are accumulated with
    a numerically stable one-pass scheme merged in fixed chunk order.
    Invalid realizations are recorded, not fatal, unless they exceed 1% of n.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    system = ReactorSystem(cfg) if system is None else system
    r = system.mesh.n_nodes
    xi = _draw_samples(seed, n_samples, cfg.field_terms)

    def solve_chunk(chunk: slice):
        _, valid = system.field_nodal_masked(xi[chunk])
        t = np.full((valid.size, r), cfg.ambient_temperature)
        phi = np.zeros_like(t)
        if np.any(valid):
            tv, phiv, tr = gauss_seidel_batch(system, xi[chunk][valid],
                                              raise_on_divergence=False)
            valid[np.nonzero(valid)[0][tr.diverged]] = False
            t[valid] = tv[~tr.diverged]
            phi[valid] = phiv[~tr.diverged]
        return t, phi, valid

    chunks = [slice(s, min(s + MC_CHUNK, n_samples))
              for s in range(0, n_samples, MC_CHUNK)]
    with threadpool_limits(limits=1):
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(solve_chunk, chunks))
        else:
            results = [solve_chunk(c) for c in chunks]

    n_store = min(n_samples, sample_cap)
    t_store = np.zeros((n_store, r))
    phi_store = np.zeros((n_store, r))
    stats_t = (0, np.zeros(r), np.zeros(r))
    stats_phi = (0, np.zeros(r), np.zeros(r))
    n_failures = 0
    for chunk, (t, phi, valid) in zip(chunks, results):
        n_failures += int(np.count_nonzero(~valid))
        stored = slice(chunk.start, min(chunk.stop, n_store))
        if stored.start < n_store:
            keep = stored.stop - stored.start
            t_store[stored] = t[:keep]
            phi_store[stored] = phi[:keep]
        nv = int(np.count_nonzero(valid))
        if nv:
            mean_c = t[valid].mean(axis=0)
            m2_c = np.sum((t[valid] - mean_c) ** 2, axis=0)
            stats_t = _combine_moments(stats_t, (nv, mean_c, m2_c))
            mean_c = phi[valid].mean(axis=0)
            m2_c = np.sum((phi[valid] - mean_c) ** 2, axis=0)
            stats_phi = _combine_moments(stats_phi, (nv, mean_c, m2_c))

    if n_failures > 0.01 * n_samples:
        raise RealizationError(
            f"{n_failures} of {n_samples} realizations were invalid")

    n_t, mean_t, m2_t = stats_t
    n_p, mean_phi, m2_phi = stats_phi
    var_t = m2_t / (n_t - 1) if n_t > 1 else np.zeros(r)
    var_phi = m2_phi / (n_p - 1) if n_p > 1 else np.zeros(r)
    return MCResult(n_samples=n_samples, seed=seed,
                    config_hash=cfg.config_hash(), xi=xi,
                    mean_t=mean_t, var_t=var_t,
                    mean_phi=mean_phi, var_phi=var_phi,
                    temperature_samples=t_store, flux_samples=phi_store,
                    n_stored=n_store, n_failures=n_failures)


def surrogate_error_vs_mc(t_pc: PCVector, phi_pc: PCVector, mc: MCResult,
                          cfg: ProblemConfig, threads: int = 1,
                          system: ReactorSystem | None = None
                          ) -> tuple[float, float]:
    """Relative root-mean W-norm discrepancy between surrogate and samples.

    Evaluates the chaos surrogates at the stored sample inputs and returns
    sqrt(mean ||T(xi) - T^p(xi)||_W^2) / sqrt(mean ||T(xi)||_W^2) and the
    flux analogue.
    """
    if mc.config_hash != cfg.config_hash():
        raise IncompatibleInputsError(
            "surrogate and Monte Carlo results come from different configurations")
    system = ReactorSystem(cfg) if system is None else system
    xi = mc.xi[:mc.n_stored]
    with threadpool_limits(limits=1):
        psi = basis_matrix(t_pc.basis, xi)
    t_eval = rows_matmul(psi, t_pc.coeffs, threads=threads)
    phi_eval = rows_matmul(psi, phi_pc.coeffs, threads=threads)

    def rel(err, ref):
        num = np.mean(system.gram.quad_form(err))
        den = np.mean(system.gram.quad_form(ref))
        return float(np.sqrt(num / den))

    return (rel(mc.temperature_samples - t_eval, mc.temperature_samples),
            rel(mc.flux_samples - phi_eval, mc.flux_samples))


def summary_dict(mc: MCResult) -> dict:
    """JSON-ready summary of a run (used by the CLI)."""
    return {
        "n_samples": mc.n_samples,
        "seed": mc.seed,
        "config_hash": mc.config_hash,
        "n_failures": mc.n_failures,
        "digest": mc.digest(),
        "mean_temperature": mc.mean_t.tolist(),
        "var_temperature": mc.var_t.tolist(),
        "mean_flux": mc.mean_phi.tolist(),
        "var_flux": mc.var_phi.tolist(),
    }
