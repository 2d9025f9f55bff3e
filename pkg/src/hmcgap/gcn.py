"""Gene co-expression network: mutual-rank filtering, structural features, spectral embedding.

All structural metrics treat the graph as unweighted; mutual-rank weights
only decide which edges are kept.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

from . import _graph_kernels as kernels
from .dataset import FeatureMatrix
from .errors import InputError

logger = logging.getLogger(__name__)

STRUCTURAL_COLUMNS = (
    "degree",
    "avg_neighbor_degree",
    "eccentricity",
    "clustering_coefficient",
    "closeness",
    "betweenness",
    "hub_score",
    "authority_score",
    "coreness",
)

FEATURE_NOTES = (
    "betweenness: unnormalized, each unordered vertex pair counted once",
    "closeness: (component size - 1) / sum of hop distances within the component",
    "eccentricity: maximum hop distance within the component",
    "hub/authority: principal eigenvectors of A A^T and A^T A scaled to unit maximum",
    "isolated vertices: eccentricity, closeness, clustering, betweenness and coreness are 0",
)

HITS_TOL = 1e-10
HITS_MAX_ITER = 1000
DENSE_EIGEN_LIMIT = 2000


@dataclass(frozen=True, eq=False)
class CoexpressionGraph:
    """Undirected graph; each edge stored once with ``u < v``."""

    vertices: tuple
    edge_u: np.ndarray
    edge_v: np.ndarray
    weight: np.ndarray
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, vertices, u, v, w=None) -> "CoexpressionGraph":
        n = len(vertices)
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        w = np.ones(len(u)) if w is None else np.asarray(w, dtype=np.float64)
        if np.any(u == v):
            raise InputError("self-loops are not allowed")
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        key = lo * max(n, 1) + hi
        _, first = np.unique(key, return_index=True)
        first.sort()
        lo, hi, w = lo[first], hi[first], w[first]
        adj = sp.csr_matrix((np.ones(2 * len(lo), dtype=np.int8), (np.r_[lo, hi], np.r_[hi, lo])), shape=(n, n))
        adj.sort_indices()
        return cls(tuple(vertices), lo, hi, w, adj.indptr.astype(np.int64), adj.indices.astype(np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edge_u)

    def adjacency(self) -> sp.csr_matrix:
        n = self.n_vertices
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]


def build_graph(path: str | Path, cutoff: float = 100.0) -> CoexpressionGraph:
    """Read ``gene_a<TAB>gene_b<TAB>mutual_rank`` and keep edges with rank <= ``cutoff``."""
    names: set[str] = set()
    kept = []
    self_loops = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise InputError(f"{path}:{lineno}: expected 'gene_a<TAB>gene_b<TAB>mutual_rank'")
            a, b, w = parts
            try:
                w = float(w)
            except ValueError:
                raise InputError(f"{path}:{lineno}: mutual rank {w!r} is not a number") from None
            if not np.isfinite(w) or w <= 0:
                raise InputError(f"{path}:{lineno}: mutual rank must be positive, got {w}")
            names.add(a)
            names.add(b)
            if a == b:
                self_loops += 1
                continue
            if w <= cutoff:
                kept.append((a, b, w))
    if self_loops:
        logger.warning("%s: %d self-loop lines dropped", path, self_loops)
    vertices = tuple(sorted(names))
    index = {g: i for i, g in enumerate(vertices)}
    u = [index[a] for a, _, _ in kept]
    v = [index[b] for _, b, _ in kept]
    w = [x for _, _, x in kept]
    g = CoexpressionGraph.from_edges(vertices, u, v, w)
    if g.n_edges < len(kept):
        logger.info("%s: %d duplicate edges ignored", path, len(kept) - g.n_edges)
    return g


def write_edges_tsv(g: CoexpressionGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, w in zip(g.edge_u, g.edge_v, g.weight):
            fh.write(f"{g.vertices[a]}\t{g.vertices[b]}\t{float(w)!r}\n")


def hits_scores(adj: sp.spmatrix, tol: float = HITS_TOL, max_iter: int = HITS_MAX_ITER):
    """Power iteration for (hub, authority) from a uniform start, each scaled to unit maximum."""
    a = sp.csr_matrix(adj, dtype=np.float64)
    at = sp.csr_matrix(a.T)

    def principal(first, second):
        x = np.ones(a.shape[0])
        for _ in range(max_iter):
            nxt = first @ (second @ x)
            m = nxt.max() if nxt.size else 0.0
            if m <= 0:
                return np.zeros_like(x)
            nxt = nxt / m
            if np.max(np.abs(nxt - x)) < tol:
                return nxt
            x = nxt
        logger.warning("HITS power iteration did not converge in %d iterations", max_iter)
        return x

    return principal(a, at), principal(at, a)


def structural_features(g: CoexpressionGraph) -> FeatureMatrix:
    """Nine structural properties per vertex, columns as in ``STRUCTURAL_COLUMNS``."""
    n = g.n_vertices
    if n == 0:
        raise InputError("graph has no vertices")
    deg = g.degree().astype(np.float64)
    nbr_sum = g.adjacency() @ deg
    avg_nbr = np.divide(nbr_sum, deg, out=np.zeros(n), where=deg > 0)

    between, ecc, dist_sum, reach = kernels.bfs_metrics(g.indptr, g.indices, n)
    between = between / 2.0
    closeness = np.divide(reach - 1.0, dist_sum, out=np.zeros(n), where=dist_sum > 0)

    tri = kernels.triangles(g.indptr, g.indices, n).astype(np.float64)
    pairs = deg * (deg - 1) / 2.0
    clustering = np.divide(tri, pairs, out=np.zeros(n), where=pairs > 0)

    hub, auth = hits_scores(g.adjacency())
    core = kernels.core_numbers(g.indptr, g.indices, n).astype(np.float64)

    values = np.column_stack([deg, avg_nbr, ecc.astype(np.float64), clustering, closeness, between, hub, auth, core])
    return FeatureMatrix(g.vertices, STRUCTURAL_COLUMNS, values)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))
        if nz.size and col[nz[0]] < 0:
            vecs[:, j] = -col
    return vecs


def _component_eigenvectors(adj: sp.csr_matrix, dim: int) -> np.ndarray:
    """Eigenvectors of the normalized Laplacian for the ``dim`` smallest nonzero eigenvalues."""
    s = adj.shape[0]
    deg = np.asarray(adj.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    lap = sp.identity(s) - sp.diags(dinv) @ adj @ sp.diags(dinv)
    if s <= DENSE_EIGEN_LIMIT:
        _, vecs = np.linalg.eigh(lap.toarray())
        vecs = vecs[:, 1:dim + 1]
    else:
        v0 = np.random.default_rng(0).uniform(0.5, 1.5, s)
        vals, vecs = eigsh(sp.csc_matrix(lap), k=dim + 1, sigma=-1e-2, which="LM", v0=v0)
        vecs = vecs[:, np.argsort(vals)][:, 1:dim + 1]
    return _fix_signs(np.ascontiguousarray(vecs))


def spectral_embedding(g: CoexpressionGraph, dim: int, cap: bool = False) -> FeatureMatrix:
    """Laplacian eigenmap computed per connected component.

    With ``cap`` a component smaller than ``dim + 1`` vertices gets only
    ``size - 1`` columns (the rest zero) instead of raising.
    """
    n = g.n_vertices
    if dim < 1:
        raise InputError("embedding dimension must be >= 1")
    if dim >= n and not cap:
        raise InputError(f"embedding dimension {dim} must be smaller than the {n} vertices")
    adj = g.adjacency()
    ncomp, labels = connected_components(adj, directed=False)
    out = np.zeros((n, dim))
    capped = 0
    for comp in range(ncomp):
        members = np.flatnonzero(labels == comp)
        d = dim
        if dim >= len(members):
            if not cap:
                raise InputError(
                    f"embedding dimension {dim} >= size {len(members)} of the component containing "
                    f"{g.vertices[members[0]]!r}"
                )
            d = len(members) - 1
            capped += 1
        if d == 0:
            continue
        sub = sp.csr_matrix(adj[members][:, members])
        out[np.ix_(members, np.arange(d))] = _component_eigenvectors(sub, d)
    if capped:
        logger.warning("embedding dimension capped for %d components smaller than %d vertices", capped, dim + 1)
    return FeatureMatrix(g.vertices, tuple(f"emb_{j + 1}" for j in range(dim)), out)


def gcn_features(g: CoexpressionGraph, embed_dim: int = 0) -> FeatureMatrix:
    """Structural properties, optionally joined with a capped spectral embedding."""
    fm = structural_features(g)
    if embed_dim > 0:
        fm = fm.hstack(spectral_embedding(g, embed_dim, cap=True))
    return fm
