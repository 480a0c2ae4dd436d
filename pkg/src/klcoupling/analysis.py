"""Convergence and reduction diagnostics over iteration traces.

Implements the relative-update convergence metric, the trajectory distance
between reduced and unreduced runs, an empirical contraction-modulus
estimate, and the geometric error-bound check that the contraction argument
predicts for per-iteration truncation of the exchanged information.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import IncompatibleInputsError, InsufficientDataError
from .meshfem import SymTridiagonal
from .solver import IterationTrace

FLOOR_RATIO = 0.9   # update shrinking by less than 10% marks the solver floor


def convergence_metrics(trace: IterationTrace, gram: SymTridiagonal
                        ) -> dict[str, np.ndarray]:
    """Per-iteration relative updates, normalized by the final iterate norm."""
    n = trace.n_iterations
    if n < 2:
        raise InsufficientDataError("convergence metrics need at least two iterations")
    out = {}
    for key in ("temperature", "flux"):
        vecs = getattr(trace, key)
        final = np.sqrt(np.sum(gram.quad_form(vecs[-1].coeffs)))
        ups = [np.sqrt(np.sum(gram.quad_form(vecs[i].coeffs - vecs[i - 1].coeffs)))
               for i in range(1, n + 1)]
        out[key] = np.array(ups) / max(final, 1e-300)
    return out


def iteration_distance(full: IterationTrace, reduced: IterationTrace,
                       gram: SymTridiagonal, relative: bool = True
                       ) -> dict[str, np.ndarray]:
    """W-distance between the two trajectories at each common iteration.

    Relative distances divide by the unreduced trajectory's norm at the same
    iteration.  Traces must share the basis and configuration.
    """
    if full.basis != reduced.basis:
        raise IncompatibleInputsError("traces use different chaos bases")
    if full.config_hash != reduced.config_hash:
        raise IncompatibleInputsError("traces come from different configurations")
    n = min(full.n_iterations, reduced.n_iterations)
    out = {}
    for key in ("temperature", "flux"):
        a = getattr(full, key)
        b = getattr(reduced, key)
        dist = []
        for ell in range(1, n + 1):
            diff = np.sqrt(np.sum(gram.quad_form(a[ell].coeffs - b[ell].coeffs)))
            if relative:
                diff /= max(np.sqrt(np.sum(gram.quad_form(a[ell].coeffs))), 1e-300)
            dist.append(diff)
        out[key] = np.array(dist)
    return out


def estimate_contraction(updates) -> tuple[float, tuple[int, int]]:
    """Empirical contraction modulus from a series of update norms.

    Accepts an :class:`IterationTrace` (temperature updates are used) or any
    1D series.  The linear regime starts at the largest update (the first
    iterations can be degenerate transients) and runs until the update norm
    stops shrinking by more than 10%, which marks the solver floor; the
    estimate is the largest successive ratio inside that window.  Needs at
    least three pre-floor iterations.
    """
    if isinstance(updates, IterationTrace):
        series = np.asarray(updates.update_t, dtype=float)
    else:
        series = np.asarray(updates, dtype=float)
    if series.size < 2:
        raise InsufficientDataError("contraction estimate needs several iterations")
    start = int(np.argmax(series))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = series[start + 1:] / series[start:-1]
    floor = np.nonzero(~(ratios < FLOOR_RATIO))[0]
    end = int(floor[0]) + 1 if floor.size else ratios.size + 1
    if end < 3:
        raise InsufficientDataError(
            f"only {end} iterations before the solver floor; need at least 3")
    window = ratios[:end - 1]
    return float(np.max(window)), (start + 1, start + end)


@dataclass
class BoundReport:
    """Outcome of the geometric truncation-error bound check."""

    alpha: float
    tol_energy: float
    applicable: bool
    limit: float | None                 # 2 alpha / (1 - alpha) * sqrt(tol)
    partial_bounds: list[float] | None  # per-iteration geometric partial sums
    distances: list[float]
    satisfied: list[bool] | None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def check_error_bound(alpha: float, tol_energy: float, distances,
                      slack: float = 1e-9) -> BoundReport:
    """Check trajectory distances against the contraction bound.

    ``tol_energy`` is the residual-energy tolerance of the reduction; its
    square root is the norm-level accuracy the bound works with.  The limit
    bound is 2 alpha sqrt(tol) / (1 - alpha); per-iteration partial sums
    sum_{k<=l} 2 alpha^(l-k+1) sqrt(tol) are also checked.  For alpha >= 1
    the report is marked inapplicable rather than raising.
    """
    if tol_energy < 0.0:
        raise ValueError("tolerance energy must be nonnegative")
    dist = [float(d) for d in np.asarray(distances, dtype=float)]
    if alpha >= 1.0 or alpha < 0.0:
        return BoundReport(alpha=alpha, tol_energy=tol_energy, applicable=False,
                           limit=None, partial_bounds=None, distances=dist,
                           satisfied=None)
    tol_norm = float(np.sqrt(tol_energy))
    limit = 2.0 * alpha / (1.0 - alpha) * tol_norm
    partial = []
    running = 0.0
    for _ in dist:
        running = alpha * running + 2.0 * alpha * tol_norm
        partial.append(running)
    satisfied = [d <= b + slack for d, b in zip(dist, partial)]
    return BoundReport(alpha=alpha, tol_energy=tol_energy, applicable=True,
                       limit=limit, partial_bounds=partial, distances=dist,
                       satisfied=satisfied)


@dataclass
class DiagnosticsReport:
    """Aggregate comparison of an unreduced and a reduced run."""

    rel_updates_full_t: list[float]
    rel_updates_full_phi: list[float]
    rel_updates_reduced_t: list[float]
    rel_updates_reduced_phi: list[float]
    distance_t: list[float]
    distance_phi: list[float]
    distance_t_abs: list[float]
    distance_phi_abs: list[float]
    dims: list[int]
    alpha: float | None
    bound: BoundReport | None

    def to_json(self) -> str:
        payload = asdict(self)
        return json.dumps(payload, indent=2, sort_keys=True)


def diagnostics(full: IterationTrace, reduced: IterationTrace,
                gram: SymTridiagonal) -> DiagnosticsReport:
    """Build the full diagnostics report for a matched pair of traces."""
    conv_full = convergence_metrics(full, gram)
    conv_red = convergence_metrics(reduced, gram)
    dist_rel = iteration_distance(full, reduced, gram, relative=True)
    dist_abs = iteration_distance(full, reduced, gram, relative=False)
    try:
        alpha, _ = estimate_contraction(full)
    except InsufficientDataError:
        alpha = None
    bound = None
    if alpha is not None and reduced.kl_tolerance is not None:
        bound = check_error_bound(alpha, reduced.kl_tolerance,
                                  dist_abs["temperature"])
    return DiagnosticsReport(
        rel_updates_full_t=conv_full["temperature"].tolist(),
        rel_updates_full_phi=conv_full["flux"].tolist(),
        rel_updates_reduced_t=conv_red["temperature"].tolist(),
        rel_updates_reduced_phi=conv_red["flux"].tolist(),
        distance_t=dist_rel["temperature"].tolist(),
        distance_phi=dist_rel["flux"].tolist(),
        distance_t_abs=dist_abs["temperature"].tolist(),
        distance_phi_abs=dist_abs["flux"].tolist(),
        dims=reduced.dims,
        alpha=alpha,
        bound=bound)
