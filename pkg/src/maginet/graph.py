"""Traffic-graph representation and spectral machinery.

The graph convolution operates on Chebyshev polynomials of the scaled
Laplacian L~ = (2/lambda_max)(D - A) - I, with lambda_max estimated by
power iteration so no dense eigendecomposition is ever needed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InputError, NumericError, ShapeError

POWER_TOL = 1e-9
POWER_MAX_ITER = 10_000
EDGELESS_LAMBDA = 2.0  # fallback so L~ stays defined for (near-)edgeless graphs


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TrafficGraph:
    """Undirected weighted sensor graph: nonnegative adjacency, no self-loops."""

    adjacency: np.ndarray
    degree: np.ndarray = field(init=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ShapeError(f"adjacency must be square, got shape {adj.shape}")
        if not np.isfinite(adj).all():
            raise InputError("adjacency contains non-finite weights")
        if (adj < 0).any():
            raise InputError("adjacency contains negative weights")
        if np.diagonal(adj).any():
            raise InputError("adjacency has self-loops; strip them before constructing the graph")
        object.__setattr__(self, "adjacency", _frozen(adj))
        object.__setattr__(self, "degree", _frozen(adj.sum(axis=1)))

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def laplacian(self) -> np.ndarray:
        return np.diag(self.degree) - self.adjacency


def power_iteration(mat: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER,
                    seed: int = 0) -> float:
    """Dominant (largest-magnitude) eigenvalue of a symmetric matrix.

    Convergence is judged on the eigenvector residual ||Av - lam*v||, not
    on successive Rayleigh quotients: a +lam/-lam dominant pair makes the
    quotient plateau at a bogus value while the iterate oscillates, and
    only the residual exposes that. After reaching ``tol`` the loop keeps
    polishing toward machine precision within the same budget, so two
    row/column permutations of one matrix agree far below ``tol``.
    """
    mat = np.asarray(mat, dtype=np.float64)
    n = mat.shape[0]
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    met_tol = False
    polish = 128.0 * np.finfo(np.float64).eps
    for _ in range(max_iter):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0  # v landed in the null space; the matrix is (near-)zero on it
        lam = float(v @ w)
        residual = float(np.linalg.norm(w - lam * v))
        scale = max(1.0, abs(lam))
        if residual <= tol * scale:
            met_tol = True
        if residual <= polish * scale:
            return lam
        v = w / norm
    if met_tol:
        return lam
    raise NumericError(f"power iteration did not reach tol={tol} within {max_iter} iterations")


def spectrum_bounds(mat: np.ndarray, tol: float = POWER_TOL) -> tuple[float, float]:
    """(lambda_min, lambda_max) of a symmetric matrix via shifted power iteration.

    Shifting by +/-(I * bound) makes each extreme eigenvalue the unique
    dominant one, which plain power iteration on the raw matrix cannot
    guarantee when the spectrum straddles zero symmetrically.
    """
    mat = np.asarray(mat, dtype=np.float64)
    bound = float(np.abs(mat).sum(axis=1).max())  # Gershgorin radius
    eye = np.eye(mat.shape[0])
    lam_hi = power_iteration(mat + bound * eye, tol=tol) - bound
    lam_lo = bound - power_iteration(bound * eye - mat, tol=tol)
    return lam_lo, lam_hi


def scaled_laplacian(graph: TrafficGraph) -> tuple[np.ndarray, float]:
    """Return (L~, lambda_max) with L~ = (2/lambda_max) L - I."""
    lap = graph.laplacian()
    lam = power_iteration(lap)
    if lam < 1e-12:
        lam = EDGELESS_LAMBDA
    return (2.0 / lam) * lap - np.eye(graph.n_nodes), lam


@dataclass(frozen=True)
class ChebyshevBasis:
    """Chebyshev polynomials T_0..T_{K-1} of the scaled Laplacian."""

    order: int
    matrices: tuple[np.ndarray, ...]
    lambda_max: float


def chebyshev_basis(l_tilde: np.ndarray, order: int, lambda_max: float = float("nan")) -> ChebyshevBasis:
    """T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2}."""
    if order < 1:
        raise ContractError(f"Chebyshev order must be >= 1, got {order}")
    l_tilde = np.asarray(l_tilde, dtype=np.float64)
    n = l_tilde.shape[0]
    mats = [np.eye(n)]
    if order > 1:
        mats.append(l_tilde.copy())
    for _ in range(2, order):
        mats.append(2.0 * (l_tilde @ mats[-1]) - mats[-2])
    return ChebyshevBasis(order=order, matrices=tuple(_frozen(m) for m in mats), lambda_max=lambda_max)


def build_basis(graph: TrafficGraph, order: int) -> ChebyshevBasis:
    l_tilde, lam = scaled_laplacian(graph)
    return chebyshev_basis(l_tilde, order, lambda_max=lam)


# -- adjacency file format ------------------------------------------------


def load_adjacency(path, n_nodes: int) -> TrafficGraph:
    """Read an edge-list CSV (header src,dst,weight) into a TrafficGraph.

    Edges are symmetrized with max(A, A^T). Duplicate directed edges with
    conflicting weights are rejected rather than silently overwritten;
    self-loops are stripped.
    """
    adj = np.zeros((n_nodes, n_nodes))
    seen: dict[tuple[int, int], float] = {}
    with open(path, newline="") as handle:
        lineno = 0
        header_done = False
        for row in csv.reader(handle):
            lineno += 1
            if not row or row[0].startswith("#"):
                continue
            if not header_done:
                if [c.strip().lower() for c in row] != ["src", "dst", "weight"]:
                    raise InputError(f"{path}: line {lineno}: expected header 'src,dst,weight'")
                header_done = True
                continue
            if len(row) != 3:
                raise InputError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                src, dst = int(row[0]), int(row[1])
                weight = float(row[2])
            except ValueError:
                raise InputError(f"{path}: line {lineno}: malformed edge {row!r}") from None
            if not (0 <= src < n_nodes) or not (0 <= dst < n_nodes):
                raise InputError(f"{path}: line {lineno}: node id outside [0, {n_nodes})")
            if not np.isfinite(weight) or weight < 0:
                raise InputError(f"{path}: line {lineno}: weight must be finite and nonnegative")
            if src == dst:
                continue  # the Laplacian assumes no self-loops
            key = (src, dst)
            if key in seen and seen[key] != weight:
                raise InputError(
                    f"{path}: line {lineno}: duplicate edge {src}->{dst} with conflicting weight"
                )
            seen[key] = weight
            adj[src, dst] = weight
        if not header_done:
            raise InputError(f"{path}: missing header 'src,dst,weight'")
    return TrafficGraph(np.maximum(adj, adj.T))


def save_adjacency(path, graph: TrafficGraph, comment: str | None = None) -> None:
    with open(path, "w", newline="") as handle:
        if comment:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle)
        writer.writerow(["src", "dst", "weight"])
        adj = graph.adjacency
        for i in range(graph.n_nodes):
            for j in range(i + 1, graph.n_nodes):
                if adj[i, j] != 0.0:
                    writer.writerow([i, j, repr(float(adj[i, j]))])
