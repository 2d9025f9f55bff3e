"""Compiled CSR kernels for unweighted, undirected graphs."""

import numpy as np
from numba import njit


@njit(cache=True)
def bfs_metrics(indptr, indices, n):
    """Brandes accumulation from every source.

    Returns betweenness counted over ordered pairs (halve for undirected),
    eccentricity, sum of distances and reachable-vertex count per vertex.
    """
    between = np.zeros(n)
    ecc = np.zeros(n, dtype=np.int64)
    dist_sum = np.zeros(n, dtype=np.int64)
    reach = np.zeros(n, dtype=np.int64)
    dist = np.full(n, -1, dtype=np.int64)
    sigma = np.zeros(n)
    delta = np.zeros(n)
    order = np.empty(n, dtype=np.int64)
    for s in range(n):
        dist[s] = 0
        sigma[s] = 1.0
        order[0] = s
        head, tail = 0, 1
        while head < tail:
            v = order[head]
            head += 1
            dv = dist[v]
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dv + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dv + 1:
                    sigma[w] += sigma[v]
        total = 0
        for t in range(tail):
            total += dist[order[t]]
        dist_sum[s] = total
        ecc[s] = dist[order[tail - 1]]
        reach[s] = tail
        for t in range(tail - 1, 0, -1):
            w = order[t]
            coeff = (1.0 + delta[w]) / sigma[w]
            dw = dist[w]
            for k in range(indptr[w], indptr[w + 1]):
                v = indices[k]
                if dist[v] == dw - 1:
                    delta[v] += sigma[v] * coeff
            between[w] += delta[w]
        for t in range(tail):
            v = order[t]
            dist[v] = -1
            sigma[v] = 0.0
            delta[v] = 0.0
    return between, ecc, dist_sum, reach


@njit(cache=True)
def triangles(indptr, indices, n):
    """Edges among the neighbours of every vertex."""
    out = np.zeros(n, dtype=np.int64)
    mark = np.zeros(n, dtype=np.bool_)
    for u in range(n):
        for k in range(indptr[u], indptr[u + 1]):
            mark[indices[k]] = True
        count = 0
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            for j in range(indptr[v], indptr[v + 1]):
                if mark[indices[j]]:
                    count += 1
        out[u] = count // 2
        for k in range(indptr[u], indptr[u + 1]):
            mark[indices[k]] = False
    return out


@njit(cache=True)
def core_numbers(indptr, indices, n):
    """Batagelj-Zaversnik bucket peeling."""
    deg = np.empty(n, dtype=np.int64)
    for v in range(n):
        deg[v] = indptr[v + 1] - indptr[v]
    maxdeg = 0
    for v in range(n):
        if deg[v] > maxdeg:
            maxdeg = deg[v]
    bin_ = np.zeros(maxdeg + 1, dtype=np.int64)
    for v in range(n):
        bin_[deg[v]] += 1
    start = 0
    for d in range(maxdeg + 1):
        num = bin_[d]
        bin_[d] = start
        start += num
    pos = np.empty(n, dtype=np.int64)
    vert = np.empty(n, dtype=np.int64)
    for v in range(n):
        pos[v] = bin_[deg[v]]
        vert[pos[v]] = v
        bin_[deg[v]] += 1
    for d in range(maxdeg, 0, -1):
        bin_[d] = bin_[d - 1]
    if maxdeg >= 0:
        bin_[0] = 0
    for i in range(n):
        v = vert[i]
        for k in range(indptr[v], indptr[v + 1]):
            u = indices[k]
            if deg[u] > deg[v]:
                du = deg[u]
                pu = pos[u]
                pw = bin_[du]
                w = vert[pw]
                if u != w:
                    pos[u] = pw
                    vert[pu] = w
                    pos[w] = pu
                    vert[pw] = u
                bin_[du] += 1
                deg[u] -= 1
    return deg
