"""Multivariate Legendre chaos basis, sparse-grid quadrature, projection.

The probability measure is the uniform product measure on [-1, 1]^m.  The 1D
polynomials are normalized Legendre polynomials (orthonormal against the
density 1/2), multivariate basis functions are total-degree-bounded products
indexed by a graded lexicographic multi-index set.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import comb

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import IncompleteEvaluationError

# Fixed chunk length for node-axis reductions.  Chunk boundaries never depend
# on the thread count, which makes every reduction bit-reproducible.
NODE_CHUNK = 2048


# ---------------------------------------------------------------------------
# multi-index bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiIndexSet:
    """Total-degree-bounded multi-indices in graded lexicographic order."""

    dim: int
    degree: int
    indices: np.ndarray  # (n_terms, dim) integer array

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __eq__(self, other) -> bool:
        return (isinstance(other, MultiIndexSet) and self.dim == other.dim
                and self.degree == other.degree)

    def __hash__(self) -> int:
        return hash((self.dim, self.degree))


def _compositions(total: int, parts: int):
    """Compositions of ``total`` into ``parts`` nonnegative ints, lex order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_multi_indices(dim: int, degree: int) -> MultiIndexSet:
    """All alpha in N^dim with |alpha| <= degree, graded lexicographic."""
    if dim < 1:
        raise ValueError(f"dimension must be at least 1, got {dim}")
    if degree < 0:
        raise ValueError(f"degree must be nonnegative, got {degree}")
    rows = []
    for total in range(degree + 1):
        rows.extend(_compositions(total, dim))
    indices = np.array(rows, dtype=np.int64)
    assert indices.shape[0] == comb(dim + degree, degree)
    return MultiIndexSet(dim=dim, degree=degree, indices=indices)


# ---------------------------------------------------------------------------
# normalized Legendre polynomials
# ---------------------------------------------------------------------------

def legendre_table(points: np.ndarray, max_degree: int) -> np.ndarray:
    """Values of the orthonormal 1D polynomials, shape points.shape + (p+1,).

    psi_n = sqrt(2n+1) * P_n with P_n the classical Legendre polynomial, so
    that int psi_a psi_b dx/2 = delta_ab on [-1, 1].
    """
    x = np.asarray(points, dtype=float)
    table = np.empty(x.shape + (max_degree + 1,))
    table[..., 0] = 1.0
    if max_degree >= 1:
        table[..., 1] = x
    for n in range(1, max_degree):
        table[..., n + 1] = ((2 * n + 1) * x * table[..., n]
                             - n * table[..., n - 1]) / (n + 1)
    scale = np.sqrt(2.0 * np.arange(max_degree + 1) + 1.0)
    return table * scale


def eval_pc(alpha, point) -> float:
    """Evaluate one multivariate basis polynomial at one point."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.int64))
    point = np.atleast_1d(np.asarray(point, dtype=float))
    table = legendre_table(point, int(alpha.max(initial=0)))
    return float(np.prod(table[np.arange(alpha.size), alpha]))


def basis_matrix(index_set: MultiIndexSet, points: np.ndarray) -> np.ndarray:
    """Evaluate every basis polynomial at every point, shape (n_pts, n_terms)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[1] != index_set.dim:
        raise ValueError("point dimension does not match the index set")
    table = legendre_table(pts, index_set.degree)  # (n_pts, dim, p+1)
    out = np.ones((pts.shape[0], len(index_set)))
    for d in range(index_set.dim):
        out *= table[:, d, index_set.indices[:, d]]
    return out


# ---------------------------------------------------------------------------
# PC-represented random vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PCVector:
    """Random vector in R^w represented by chaos coefficients.

    ``coeffs`` has shape (n_terms, w), rows aligned with ``basis.indices``;
    row 0 is the mean.
    """

    basis: MultiIndexSet
    coeffs: np.ndarray

    @property
    def width(self) -> int:
        return self.coeffs.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.coeffs[0]

    @property
    def fluctuation(self) -> np.ndarray:
        """Coefficients of the zero-mean part, shape (n_terms - 1, w)."""
        return self.coeffs[1:]

    def __post_init__(self):
        if self.coeffs.shape[0] != len(self.basis):
            raise ValueError("coefficient count does not match the index set")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("PC coefficients must be finite")


def save_pc_csv(path, pc: PCVector) -> None:
    """Write a PCVector as CSV: alpha columns then component columns."""
    m, w = pc.basis.dim, pc.width
    header = ",".join([f"alpha_{i + 1}" for i in range(m)]
                      + [f"comp_{i + 1}" for i in range(w)])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for alpha, row in zip(pc.basis.indices, pc.coeffs):
            cells = [str(int(a)) for a in alpha] + [f"{v:.17g}" for v in row]
            fh.write(",".join(cells) + "\n")


def load_pc_csv(path) -> PCVector:
    """Read a PCVector written by :func:`save_pc_csv`."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        m = sum(1 for h in header if h.startswith("alpha_"))
        rows = [line.strip().split(",") for line in fh if line.strip()]
    indices = np.array([[int(c) for c in row[:m]] for row in rows], dtype=np.int64)
    coeffs = np.array([[float(c) for c in row[m:]] for row in rows])
    degree = int(indices.sum(axis=1).max(initial=0))
    basis = enumerate_multi_indices(m, degree)
    if not np.array_equal(basis.indices, indices):
        raise ValueError("CSV multi-indices are not a complete graded-lex set")
    return PCVector(basis=basis, coeffs=coeffs)


# ---------------------------------------------------------------------------
# sparse-grid Gauss-Legendre quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in [-1,1]^dim and probability weights summing to one."""

    dim: int
    level: int
    nodes: np.ndarray    # (n_nodes, dim)
    weights: np.ndarray  # (n_nodes,)

    def __len__(self) -> int:
        return self.weights.size


def _gauss_legendre_prob(n: int, cache={}) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule with weights normalized to sum to one."""
    if n not in cache:
        x, w = np.polynomial.legendre.leggauss(n)
        cache[n] = (x, w / 2.0)
    return cache[n]


def sparse_grid(dim: int, level: int) -> QuadratureRule:
    """Smolyak sparse grid built from 1D Gauss-Legendre rules.

    1D level i uses an i-point rule; the combination runs over 1D level
    multi-indices with |i|_1 <= dim + level - 1.  The resulting rule is exact
    for all polynomials of total degree <= 2*level - 1 against the uniform
    product measure.  Coincident nodes are merged (combined weights may be
    negative) and the node list is sorted lexicographically.
    """
    if dim < 1:
        raise ValueError(f"dimension must be at least 1, got {dim}")
    if level < 1:
        raise ValueError(f"level must be at least 1, got {level}")

    node_blocks = []
    weight_blocks = []
    for excess in range(max(0, level - dim), level):
        # tensor rules whose 1D levels sum to dim + excess
        coeff = (-1.0) ** (level - 1 - excess) * comb(dim - 1, level - 1 - excess)
        for levels in _compositions(excess, dim):
            sizes = [lv + 1 for lv in levels]
            pts_1d, wts_1d = zip(*(_gauss_legendre_prob(n) for n in sizes))
            grid = np.meshgrid(*pts_1d, indexing="ij")
            nodes = np.stack([g.ravel() for g in grid], axis=1)
            weights = wts_1d[0]
            for w in wts_1d[1:]:
                weights = np.multiply.outer(weights, w)
            node_blocks.append(nodes)
            weight_blocks.append(coeff * weights.ravel())

    nodes = np.concatenate(node_blocks, axis=0)
    weights = np.concatenate(weight_blocks)

    order = np.lexsort(nodes.T[::-1])
    nodes = nodes[order]
    weights = weights[order]
    # merge duplicates; values coincide exactly because 1D rules are cached
    new_row = np.any(nodes[1:] != nodes[:-1], axis=1)
    starts = np.concatenate([[0], np.nonzero(new_row)[0] + 1])
    merged_w = np.add.reduceat(weights, starts)
    return QuadratureRule(dim=dim, level=level,
                          nodes=np.ascontiguousarray(nodes[starts]),
                          weights=merged_w)


# ---------------------------------------------------------------------------
# deterministic chunked reductions over the node axis
# ---------------------------------------------------------------------------

def _chunk_slices(n: int, chunk: int = NODE_CHUNK):
    return [slice(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def _map_chunks(fn, slices, threads: int):
    # BLAS is pinned to one thread in either branch so that per-chunk results
    # (and therefore the fixed-order merge) never depend on the schedule.
    with threadpool_limits(limits=1):
        if threads <= 1 or len(slices) <= 1:
            return [fn(s) for s in slices]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, slices))


def _tree_sum(parts: list) -> np.ndarray:
    """Pairwise summation in a fixed order (independent of how parts were made)."""
    while len(parts) > 1:
        parts = [parts[i] + parts[i + 1] if i + 1 < len(parts) else parts[i]
                 for i in range(0, len(parts), 2)]
    return parts[0]


def nodes_matmul(psi: np.ndarray, values: np.ndarray, threads: int = 1) -> np.ndarray:
    """Compute psi.T @ values reducing over the node axis in fixed chunks."""
    slices = _chunk_slices(psi.shape[0])
    parts = _map_chunks(lambda s: psi[s].T @ values[s], slices, threads)
    return _tree_sum(parts)


def rows_matmul(psi: np.ndarray, coeffs: np.ndarray, threads: int = 1) -> np.ndarray:
    """Compute psi @ coeffs chunking the node rows (bit-stable per row)."""
    out = np.empty((psi.shape[0], coeffs.shape[1]))
    slices = _chunk_slices(psi.shape[0])

    def run(s):
        out[s] = psi[s] @ coeffs
        return None

    _map_chunks(run, slices, threads)
    return out


def project_nonintrusive(values_at_nodes: np.ndarray,
                         basis: MultiIndexSet,
                         rule: QuadratureRule,
                         psi: np.ndarray | None = None,
                         threads: int = 1) -> PCVector:
    """Chaos coefficients by quadrature: q_alpha = sum_k q(xi_k) psi_alpha(xi_k) w_k.

    ``values_at_nodes`` has one row per quadrature node, in node order.  The
    accumulation runs over fixed node chunks merged in a fixed pairwise order,
    so results do not depend on the thread count.
    """
    vals = np.asarray(values_at_nodes, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape[0] != len(rule):
        raise IncompleteEvaluationError(
            f"expected values at {len(rule)} nodes, got {vals.shape[0]}")
    if psi is None:
        psi = basis_matrix(basis, rule.nodes)
    coeffs = nodes_matmul(psi * rule.weights[:, None], vals, threads=threads)
    return PCVector(basis=basis, coeffs=coeffs)
