import logging
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hmcgap.errors import InputError
from hmcgap.gcn import (
    STRUCTURAL_COLUMNS,
    CoexpressionGraph,
    build_graph,
    gcn_features,
    hits_scores,
    spectral_embedding,
    structural_features,
    write_edges_tsv,
)

import oracles


def graph(n, edges):
    return CoexpressionGraph.from_edges([f"v{i:02d}" for i in range(n)], [u for u, _ in edges],
                                        [v for _, v in edges])


def random_edges(rng, n, p):
    return [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]


def column(fm, name, row=None):
    vals = fm.values[:, STRUCTURAL_COLUMNS.index(name)]
    return vals if row is None else vals[row]


def test_cutoff_is_inclusive(tmp_path):
    f = tmp_path / "e.tsv"
    f.write_text("a\tb\t100\nb\tc\t100.5\nc\td\t3\n")
    g = build_graph(f, cutoff=100)
    assert g.vertices == ("a", "b", "c", "d")
    kept = {(g.vertices[u], g.vertices[v]) for u, v in zip(g.edge_u, g.edge_v)}
    assert kept == {("a", "b"), ("c", "d")}
    assert np.all(g.weight <= 100)


def test_self_loops_dropped_and_errors_name_line(tmp_path, caplog):
    f = tmp_path / "e.tsv"
    f.write_text("a\ta\t1\na\tb\t2\n")
    with caplog.at_level(logging.WARNING):
        g = build_graph(f)
    assert g.n_edges == 1 and "self-loop" in caplog.text
    f.write_text("a\tb\t2\na\tb\n")
    with pytest.raises(InputError, match=":2:"):
        build_graph(f)
    f.write_text("a\tb\tx\n")
    with pytest.raises(InputError, match=":1:"):
        build_graph(f)
    f.write_text("a\tb\t-1\n")
    with pytest.raises(InputError, match="positive"):
        build_graph(f)


def test_duplicate_edges_stored_once(tmp_path):
    f = tmp_path / "e.tsv"
    f.write_text("a\tb\t5\nb\ta\t7\n")
    g = build_graph(f)
    assert g.n_edges == 1 and g.weight.tolist() == [5.0]
    out = tmp_path / "w.tsv"
    write_edges_tsv(g, out)
    assert out.read_text() == "a\tb\t5.0\n"


def test_triangle():
    fm = structural_features(graph(3, [(0, 1), (1, 2), (0, 2)]))
    for v in range(3):
        assert column(fm, "degree", v) == 2
        assert column(fm, "clustering_coefficient", v) == 1.0
        assert column(fm, "eccentricity", v) == 1
        assert column(fm, "coreness", v) == 2


def test_path_middle_vertex():
    fm = structural_features(graph(3, [(0, 1), (1, 2)]))
    assert column(fm, "closeness", 1) == 1.0
    assert column(fm, "betweenness", 1) == 1.0
    assert column(fm, "betweenness", 0) == 0.0
    assert column(fm, "closeness", 0) == pytest.approx(2 / 3)


def test_isolated_vertex_conventions():
    fm = structural_features(graph(4, [(0, 1)]))
    assert fm.values[2].tolist() == [0.0] * 9
    assert np.all(np.isfinite(fm.values))


def test_edgeless_graph_is_total():
    fm = structural_features(graph(3, []))
    assert np.array_equal(fm.values, np.zeros((3, 9)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 25), st.floats(0.0, 0.6))
def test_structural_features_match_oracle(seed, n, p):
    edges = random_edges(np.random.default_rng(seed), n, p)
    got = structural_features(graph(n, edges)).values
    want = oracles.graph_metrics(n, edges)
    ints = [STRUCTURAL_COLUMNS.index(c) for c in ("degree", "eccentricity", "coreness")]
    assert np.array_equal(got[:, ints], want[:, ints])
    assert np.allclose(got, want, rtol=1e-8, atol=1e-10)
    assert np.all(np.isfinite(got))


def test_hub_equals_authority_for_undirected(rng):
    g = graph(30, random_edges(rng, 30, 0.15))
    hub, auth = hits_scores(g.adjacency())
    assert np.allclose(hub, auth, rtol=0, atol=1e-12)
    assert hub.max() == 1.0


def test_tree_betweenness_counts_crossing_pairs():
    # random tree: unique paths, so betweenness is the number of separated pairs
    rng = np.random.default_rng(4)
    n = 15
    parents = [int(rng.integers(0, k)) for k in range(1, n)]
    edges = [(p, k) for k, p in enumerate(parents, 1)]
    fm = structural_features(graph(n, edges))
    nbrs = oracles.adjacency_lists(n, edges)
    for v in range(n):
        sizes = []
        for start in nbrs[v]:
            seen, stack = {v, start}, [start]
            while stack:
                for w in nbrs[stack.pop()]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            sizes.append(len(seen) - 1)
        crossing = (sum(sizes) ** 2 - sum(s * s for s in sizes)) / 2
        assert column(fm, "betweenness", v) == crossing


def test_k2_embedding():
    emb = spectral_embedding(graph(2, [(0, 1)]), 1).values
    assert emb[:, 0] == pytest.approx([1 / math.sqrt(2), -1 / math.sqrt(2)], abs=1e-12)


def test_twin_vertices_share_rows():
    # 0 and 1 both hang off vertex 2 of a long path; the antisymmetric twin
    # vector has eigenvalue 1, far above the three smallest nonzero ones
    edges = [(0, 2), (1, 2)] + [(k, k + 1) for k in range(2, 11)]
    emb = spectral_embedding(graph(12, edges), 3).values
    assert np.allclose(emb[0], emb[1], atol=1e-10)


def test_embedding_columns_orthonormal_and_match_dense_solver(rng):
    n = 20
    edges = random_edges(rng, n, 0.3)
    g = graph(n, edges)
    assert len(set(range(n)) - {x for e in edges for x in e}) == 0
    emb = spectral_embedding(g, 5).values
    assert np.allclose(emb.T @ emb, np.eye(5), atol=1e-8)
    a = g.adjacency().toarray()
    d = a.sum(axis=1)
    lap = np.eye(n) - a / np.sqrt(np.outer(d, d))
    vals = np.linalg.eigvalsh(lap)
    rayleigh = np.sum(emb * (lap @ emb), axis=0)
    assert np.allclose(rayleigh, vals[1:6], atol=1e-8)
    for j in range(5):
        nz = np.flatnonzero(np.abs(emb[:, j]) > 1e-12)
        assert emb[nz[0], j] > 0


def test_embedding_is_per_component():
    # two disjoint triangles: each block is a triangle's own eigenmap
    edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]
    emb = spectral_embedding(graph(6, edges), 2).values
    assert np.allclose(emb[:3].T @ emb[:3], np.eye(2), atol=1e-10)
    assert np.allclose(emb[3:].T @ emb[3:], np.eye(2), atol=1e-10)


def test_embedding_errors_and_cap(caplog):
    g = graph(5, [(0, 1), (2, 3), (3, 4)])
    with pytest.raises(InputError, match="v00"):
        spectral_embedding(g, 2)
    with pytest.raises(InputError):
        spectral_embedding(g, 0)
    with caplog.at_level(logging.WARNING):
        emb = spectral_embedding(g, 2, cap=True).values
    assert np.all(emb[:2, 1] == 0) and np.any(emb[2:, 1] != 0)
    assert "capped" in caplog.text


def test_sparse_eigensolver_path_agrees_with_dense(monkeypatch, rng):
    import hmcgap.gcn as gcn

    n = 60
    edges = random_edges(rng, n, 0.12) + [(k, k + 1) for k in range(n - 1)]
    g = graph(n, edges)
    dense = spectral_embedding(g, 3).values
    monkeypatch.setattr(gcn, "DENSE_EIGEN_LIMIT", 10)
    sparse = spectral_embedding(g, 3).values
    assert np.allclose(dense, sparse, atol=1e-8)


def test_gcn_features_join():
    g = graph(4, [(0, 1), (1, 2), (2, 3)])
    fm = gcn_features(g, 2)
    assert fm.feature_names == STRUCTURAL_COLUMNS + ("emb_1", "emb_2")
    assert gcn_features(g).feature_names == STRUCTURAL_COLUMNS


def test_adjacency_symmetric(rng):
    g = graph(12, random_edges(rng, 12, 0.4))
    a = g.adjacency()
    assert (a != a.T).nnz == 0
    assert isinstance(a, sp.csr_matrix)
