"""Embedded deformation graph: node sampling, edges, influence weights.

Nodes are a geodesically separated subset of the source points; every node
within radius ``R`` of a source point influences it with the compactly
supported weight ``(1 - D^2/R^2)^3``, normalized so the weights of each point
sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from .errors import DegenerateInputError, InvalidInputError
from .geodesic import MultiSourceField, geodesic_from, nearest_seed_labels
from .mesh import Surface, mean_edge_length, save_ply

DEFAULT_RADIUS_FACTOR = 5.0


@dataclass
class DeformationGraph:
    """Sampled nodes plus the per-source-point influence weights."""

    node_indices: np.ndarray        # (r,) indices into the source vertices
    node_positions: np.ndarray      # (r, 3)
    node_edges: np.ndarray          # (e, 2) undirected pairs of node indices
    radius: float
    influence: csr_matrix           # (n, r) normalized weights w_ij
    source_positions: np.ndarray    # (n, 3) the points the weights refer to
    fallback_points: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def n_nodes(self):
        return len(self.node_indices)

    @property
    def n_points(self):
        return self.influence.shape[0]

    def influence_list(self, i):
        """List of (node index, weight) pairs for source point ``i``."""
        row = self.influence.getrow(i)
        return list(zip(row.indices.tolist(), row.data.tolist()))


def principal_axis(points):
    """First principal axis of the point set, sign-fixed for reproducibility.

    The axis belongs to the largest eigenvalue of the covariance of the
    mean-centered points; its largest-magnitude component is made positive.
    """
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / max(len(pts), 1)
    vals, vecs = np.linalg.eigh(cov)
    axis = vecs[:, np.argmax(vals)]
    k = np.argmax(np.abs(axis))
    if axis[k] < 0:
        axis = -axis
    return axis


def sample_nodes_pca(s: Surface, R, method="auto"):
    """Scan points sorted by first-principal-axis projection; keep a point
    iff its geodesic distance to all kept points is at least ``R``."""
    if R <= 0:
        raise InvalidInputError("R must be positive")
    n = s.n_vertices
    if n == 0:
        raise DegenerateInputError("empty surface")
    axis = principal_axis(s.vertices)
    proj = s.vertices @ axis
    order = np.argsort(proj, kind="stable")
    acc = MultiSourceField(s, cap=R, method=method)
    nodes = []
    for i in order:
        if not nodes or acc.distances[i] >= R:
            nodes.append(int(i))
            acc.add_seed(int(i))
    return np.array(nodes, dtype=np.int64)


def sample_nodes_farthest(s: Surface, R, method="auto"):
    """Start from vertex 0; repeatedly add the point maximizing the minimum
    geodesic distance to the current nodes, until every point lies within
    ``R/2`` of a node.

    The half-radius coverage target is the conventional farthest-point
    stopping rule for deformation-graph nodes (each point then has several
    nodes inside its influence radius ``R``); it produces a denser node set
    than the PCA scan at the same ``R``."""
    if R <= 0:
        raise InvalidInputError("R must be positive")
    if s.n_vertices == 0:
        raise DegenerateInputError("empty surface")
    acc = MultiSourceField(s, cap=None, method=method)
    nodes = [0]
    acc.add_seed(0)
    while True:
        finite = np.where(np.isfinite(acc.distances), acc.distances, -1.0)
        far = int(np.argmax(finite))
        if finite[far] <= 0.5 * R:
            break
        nodes.append(far)
        acc.add_seed(far)
    return np.array(nodes, dtype=np.int64)


def influence_weights(s: Surface, node_indices, R, method="auto"):
    """Per-point influence sets and normalized weights.

    One geodesic field per node, capped at 2R: influence needs distances
    below R, node-edge construction below 2R.  Points farther than ``R``
    from every node get full weight on their geodesically nearest node
    (Euclidean nearest if unreachable); those fallbacks are reported
    separately."""
    n = s.n_vertices
    r = len(node_indices)
    dists = np.full((r, n), np.inf)
    for j, vi in enumerate(node_indices):
        dists[j] = geodesic_from(s, int(vi), cap=2.0 * R, method=method).distances
    raw = np.zeros((r, n))
    inside = dists < R
    raw[inside] = (1.0 - (dists[inside] / R) ** 2) ** 3
    covered = raw.sum(axis=0) > 0

    fallback = np.where(~covered)[0]
    if len(fallback) > 0:
        labels, best = nearest_seed_labels(s, [int(v) for v in node_indices])
        for i in fallback:
            j = labels[i]
            if j < 0:
                # disconnected from every node: Euclidean nearest
                d2 = np.linalg.norm(s.vertices[node_indices] - s.vertices[i], axis=1)
                j = int(np.argmin(d2))
            raw[j, i] = 1.0

    weights = raw / raw.sum(axis=0, keepdims=True)
    mat = csr_matrix(weights.T)
    mat.eliminate_zeros()
    return mat, dists, fallback


def build_graph(s: Surface, R=None, sampler="pca", method="auto"):
    """Construct the full deformation graph for a surface.

    ``R`` defaults to 5x the mean source edge length.  ``sampler`` selects
    the PCA-ordered scan or farthest-point sampling.
    """
    if R is None:
        R = DEFAULT_RADIUS_FACTOR * mean_edge_length(s)
    if R <= 0:
        raise InvalidInputError("R must be positive")
    if sampler == "pca":
        nodes = sample_nodes_pca(s, R, method=method)
    elif sampler == "farthest":
        nodes = sample_nodes_farthest(s, R, method=method)
    else:
        raise InvalidInputError(f"unknown sampler {sampler!r}")

    weights, node_fields, fallback = influence_weights(s, nodes, R, method=method)

    # Node-to-node edges connect overlapping influence regions (geodesic
    # distance < 2R).  Sampling keeps nodes at least R apart, so a sub-R
    # edge rule would always produce an empty edge set.
    r = len(nodes)
    pairs = []
    for j in range(r):
        dj = node_fields[j][nodes]
        for k in range(j + 1, r):
            if dj[k] < 2.0 * R:
                pairs.append((j, k))
    edges = np.array(pairs, dtype=np.int64) if pairs else np.empty((0, 2), dtype=np.int64)

    return DeformationGraph(
        node_indices=nodes,
        node_positions=s.vertices[nodes].copy(),
        node_edges=edges,
        radius=float(R),
        influence=weights,
        source_positions=s.vertices.copy(),
        fallback_points=fallback,
    )


def transform_points(g: DeformationGraph, X, V=None):
    """Blend per-node affine transforms into deformed positions.

    ``X`` is the stacked (4r, 3) state; ``V`` defaults to the source points
    the graph was built on.  Each point moves to
    ``sum_j w_ij (A_j (v_i - p_j) + p_j + t_j)``.
    """
    from .energy import unpack_state  # local import to avoid a cycle

    if V is None:
        V = g.source_positions
    V = np.asarray(V, dtype=np.float64)
    A, t = unpack_state(X)
    W = g.influence if len(V) == g.n_points else _weights_for(g, V)
    out = np.zeros_like(V)
    # per-node accumulation keeps the sum order deterministic
    Wc = W.tocsc()
    for j in range(g.n_nodes):
        sl = slice(Wc.indptr[j], Wc.indptr[j + 1])
        rows = Wc.indices[sl]
        w = Wc.data[sl]
        if len(rows) == 0:
            continue
        moved = (V[rows] - g.node_positions[j]) @ A[j].T + g.node_positions[j] + t[j]
        out[rows] += w[:, None] * moved
    return out


def _weights_for(g, V):
    raise InvalidInputError(
        "transform_points only supports the source points the graph was built on"
    )


def dump_graph_ply(g: DeformationGraph, path):
    """Debug dump: nodes as PLY points plus an edge-list sidecar."""
    save_ply(Surface(g.node_positions), path)
    with open(str(path) + ".edges.txt", "w", encoding="utf-8") as fh:
        for a, b in g.node_edges:
            fh.write(f"{a} {b}\n")
