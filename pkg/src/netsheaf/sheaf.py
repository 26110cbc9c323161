"""Network sheaves over sampled base points and their block Laplacians.

A sheaf graph stores sampled base points, a symmetrized k-nearest-neighbor
(or complete) edge set, heat-kernel edge weights, and per-edge geodesic
midpoints. Attaching one orthogonal transport matrix per edge yields the
block sheaf Laplacian: diagonal block i is (sum of incident weights) * I_d,
the off-diagonal block of edge (i, j) with i < j is -k_ij * P, where P maps
fiber coordinates at j into fiber coordinates at i, and the (j, i) block is
its transpose. With identity transports the operator factors exactly as
(scalar graph Laplacian) kron I_d; the assembly below shares its arithmetic
with :func:`scalar_graph_laplacian` so that factorization holds bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spd as _spd


@dataclass(frozen=True)
class SheafGraph:
    """Sampled base points with weighted edges and per-edge midpoints.

    Edges are undirected, stored once as (i, j) with i < j, no self loops.
    ``points`` and ``midpoints`` may be None for graphs restored from disk;
    the weights, bandwidth, and stalk dimension always survive a round trip.
    """

    n: int
    points: object
    edges: np.ndarray
    weights: np.ndarray
    midpoints: object
    bandwidth: float
    stalk_dim: int

    @property
    def edge_count(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class Cochain:
    """A discretized section: one fiber-coordinate vector per node."""

    n: int
    d: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.n, self.d):
            raise ValueError("cochain values must have shape (n, d)")

    @classmethod
    def from_flat(cls, flat: np.ndarray, n: int, d: int) -> "Cochain":
        flat = np.asarray(flat, dtype=float)
        if flat.size != n * d:
            raise ValueError("flat cochain has wrong length")
        return cls(n=n, d=d, values=flat.reshape(n, d).copy())

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def _kernel_weights(dists: np.ndarray, t: float) -> np.ndarray:
    return np.exp(-(dists ** 2) / (4.0 * t))


def _distance_matrix(points, distance) -> np.ndarray:
    mat = distance(points) if callable(distance) else np.asarray(distance, dtype=float)
    n = len(points)
    if mat.shape != (n, n):
        raise ValueError("distance matrix shape does not match the point count")
    return mat


def build_knn_graph(points, k: int, t: float, distance, midpoint=None,
                    stalk_dim: int = 1) -> SheafGraph:
    """Symmetrized k-nearest-neighbor sheaf graph.

    ``distance`` is either a precomputed (n, n) matrix or a callable mapping
    the point sequence to one. The edge set is the union of every node's k
    nearest neighbors (ties broken toward the smaller index); weights are
    exp(-dist^2 / (4 t)). ``midpoint``, when given, is called per edge with
    the two endpoint base points and fills the edge midpoints.
    """
    n = len(points)
    if k < 1:
        raise ValueError("k must be at least 1")
    if n <= k:
        raise ValueError(f"need at least k+1 = {k + 1} points, got {n}")
    if t <= 0.0:
        raise ValueError("bandwidth t must be positive")
    dmat = _distance_matrix(points, distance)
    pairs = set()
    for i in range(n):
        order = np.argsort(dmat[i], kind="stable")
        picked = 0
        for j in order:
            j = int(j)
            if j == i:
                continue
            pairs.add((min(i, j), max(i, j)))
            picked += 1
            if picked == k:
                break
    edges = np.array(sorted(pairs), dtype=np.int64)
    weights = _kernel_weights(dmat[edges[:, 0], edges[:, 1]], t)
    mids = None
    if midpoint is not None:
        mids = [midpoint(points[i], points[j]) for i, j in edges]
    return SheafGraph(n=n, points=points, edges=edges, weights=weights,
                      midpoints=mids, bandwidth=float(t), stalk_dim=int(stalk_dim))


def build_complete_graph(points, t: float, distance, midpoint=None,
                         stalk_dim: int = 1) -> SheafGraph:
    """Complete sheaf graph over the sample (every pair is an edge)."""
    n = len(points)
    if n < 2:
        raise ValueError("need at least 2 points")
    if t <= 0.0:
        raise ValueError("bandwidth t must be positive")
    dmat = _distance_matrix(points, distance)
    edges = np.array([(i, j) for i in range(n) for j in range(i + 1, n)],
                     dtype=np.int64)
    weights = _kernel_weights(dmat[edges[:, 0], edges[:, 1]], t)
    mids = None
    if midpoint is not None:
        mids = [midpoint(points[i], points[j]) for i, j in edges]
    return SheafGraph(n=n, points=points, edges=edges, weights=weights,
                      midpoints=mids, bandwidth=float(t), stalk_dim=int(stalk_dim))


def pairwise_bures_distance(points: np.ndarray) -> np.ndarray:
    """All-pairs Wasserstein distance matrix for a stack of SPD points."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    roots = _spd._spd_sqrt_batch(points)
    cross = np.einsum("iab,jbc,icd->ijad", roots, points, roots, optimize=True)
    ev = np.linalg.eigvalsh(0.5 * (cross + np.swapaxes(cross, -1, -2)))
    tr_cross = np.sqrt(np.clip(ev, 0.0, None)).sum(-1)
    tr = np.trace(points, axis1=-2, axis2=-1)
    w2sq = tr[:, None] + tr[None, :] - 2.0 * tr_cross
    w2sq = np.clip(0.5 * (w2sq + w2sq.T), 0.0, None)
    np.fill_diagonal(w2sq, 0.0)
    return np.sqrt(w2sq)


def spd_knn_graph(points: np.ndarray, k: int, t: float) -> SheafGraph:
    """k-nearest-neighbor graph over SPD points under the Wasserstein distance.

    Stalk dimension is p(p+1)/2; midpoints are geodesic midpoints.
    """
    points = np.asarray(points, dtype=float)
    p = points.shape[-1]
    return build_knn_graph(
        points, k, t,
        distance=pairwise_bures_distance,
        midpoint=lambda a, b: _spd.wasserstein_geodesic(a, b, 0.5),
        stalk_dim=_spd.sym_dim(p),
    )


def rescaled_edge_transports(graph: SheafGraph, steps: int = 50,
                             via_midpoints: bool = False) -> dict:
    """Ground-truth orthogonal-frame transports for every edge of an SPD graph.

    For edge (i, j) the returned matrix maps fiber coordinates at node j into
    fiber coordinates at node i. Raw transports are Euler-integrated parallel
    transport along the connecting geodesic; each is then rescaled into the
    endpoint Cholesky frames so the result is orthogonal up to the
    integration error. With ``via_midpoints`` the edge map is composed
    through the edge midpoint stalk as Q_i^T @ Q_j, where Q_i and Q_j
    transport each endpoint fiber into the midpoint fiber.
    """
    points = np.asarray(graph.points, dtype=float)
    if points.ndim != 3:
        raise ValueError("graph points must be a stack of SPD matrices")
    edges = graph.edges
    src = points[edges[:, 1]]
    dst = points[edges[:, 0]]
    _, chol, chol_inv = _spd._frames_batch(points)
    if via_midpoints:
        if graph.midpoints is None:
            raise ValueError("graph has no midpoints to compose through")
        mids = np.asarray(graph.midpoints, dtype=float)
        _, chol_m, _ = _spd._frames_batch(mids)
        to_mid_i = _spd._transport_batch(dst, mids, steps)
        to_mid_j = _spd._transport_batch(src, mids, steps)
        q_i = chol_m @ to_mid_i @ chol_inv[edges[:, 0]]
        q_j = chol_m @ to_mid_j @ chol_inv[edges[:, 1]]
        rescaled = np.swapaxes(q_i, -1, -2) @ q_j
    else:
        raw = _spd._transport_batch(src, dst, steps)
        rescaled = chol[edges[:, 0]] @ raw @ chol_inv[edges[:, 1]]
    return {(int(i), int(j)): rescaled[e] for e, (i, j) in enumerate(edges)}


def _degrees(n: int, edges: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # shared accumulation loop: scalar and block assembly must add the same
    # floats in the same order for the identity-transport factorization to
    # be exact
    deg = np.zeros(n)
    for e in range(len(edges)):
        deg[edges[e, 0]] += weights[e]
        deg[edges[e, 1]] += weights[e]
    return deg


def scalar_graph_laplacian(graph: SheafGraph) -> np.ndarray:
    """Dense weighted graph Laplacian (degree minus adjacency) of the graph."""
    lap = np.zeros((graph.n, graph.n))
    deg = _degrees(graph.n, graph.edges, graph.weights)
    np.fill_diagonal(lap, deg)
    for e, (i, j) in enumerate(graph.edges):
        lap[i, j] = -graph.weights[e]
        lap[j, i] = -graph.weights[e]
    return lap


@dataclass(frozen=True)
class BlockSheafLaplacian:
    """Symmetric positive-semidefinite block operator over a sheaf graph.

    Stored per-edge: ``offdiag`` maps each edge (i, j), i < j, to the block
    at row i, column j (the (j, i) block is its transpose); diagonal blocks
    are ``degrees[i] * I_d``. ``transports`` keeps the orthogonal edge maps
    for serialization and gauge tests.
    """

    n: int
    d: int
    bandwidth: float
    edges: np.ndarray
    weights: np.ndarray
    degrees: np.ndarray
    offdiag: dict
    transports: dict
    _blocks: np.ndarray = field(repr=False, default=None)

    @property
    def shape(self):
        nd = self.n * self.d
        return (nd, nd)

    @property
    def diag_blocks(self) -> np.ndarray:
        return self.degrees[:, None, None] * np.eye(self.d)

    def to_dense(self) -> np.ndarray:
        nd = self.n * self.d
        dense = np.zeros((nd, nd))
        eye = np.eye(self.d)
        for i in range(self.n):
            dense[i * self.d:(i + 1) * self.d, i * self.d:(i + 1) * self.d] = \
                self.degrees[i] * eye
        for e, (i, j) in enumerate(self.edges):
            block = self._blocks[e]
            dense[i * self.d:(i + 1) * self.d, j * self.d:(j + 1) * self.d] = block
            dense[j * self.d:(j + 1) * self.d, i * self.d:(i + 1) * self.d] = block.T
        return dense

    def operator_norm_bound(self) -> float:
        """Gershgorin-style upper bound on the largest eigenvalue."""
        if len(self.edges) == 0:
            return float(self.degrees.max(initial=0.0))
        return 2.0 * float(self.degrees.max())

    def apply_stack(self, values: np.ndarray) -> np.ndarray:
        """Apply to a stack shaped (n, d) or (n, d, channels)."""
        squeeze = values.ndim == 2
        s = values[:, :, None] if squeeze else values
        out = self.degrees[:, None, None] * s
        if len(self.edges):
            i_idx = self.edges[:, 0]
            j_idx = self.edges[:, 1]
            np.add.at(out, i_idx, np.matmul(self._blocks, s[j_idx]))
            np.add.at(out, j_idx, np.matmul(np.swapaxes(self._blocks, -1, -2), s[i_idx]))
        return out[:, :, 0] if squeeze else out


def assemble_laplacian(graph: SheafGraph, transports: dict,
                       orth_tol: float = 1e-6) -> BlockSheafLaplacian:
    """Assemble the block sheaf Laplacian from a graph and edge transports.

    Every edge must carry a transport, orthogonal within ``orth_tol``
    (Frobenius defect of P^T P versus the identity); a violation signals a
    broken hypothesis class and raises. The quadratic form of the result is
    the transport-consistency energy
    sum over edges of k_ij * ||s_i - P_(j to i) s_j||^2, so cochains that are
    transport-consistent across every edge lie in the kernel.
    """
    d = graph.stalk_dim
    blocks = np.empty((len(graph.edges), d, d))
    tmap = {}
    for e, (i, j) in enumerate(graph.edges):
        key = (int(i), int(j))
        try:
            p_edge = np.asarray(transports[key], dtype=float)
        except KeyError:
            raise ValueError(f"missing transport for edge {key}") from None
        if p_edge.shape != (d, d):
            raise ValueError(f"transport for edge {key} must be {d} x {d}")
        defect = np.linalg.norm(p_edge.T @ p_edge - np.eye(d))
        if defect > orth_tol:
            raise ValueError(
                f"transport for edge {key} is not orthogonal within {orth_tol}"
                f" (defect {defect:.3e})")
        blocks[e] = -graph.weights[e] * p_edge
        tmap[key] = p_edge
    deg = _degrees(graph.n, graph.edges, graph.weights)
    offdiag = {(int(i), int(j)): blocks[e] for e, (i, j) in enumerate(graph.edges)}
    return BlockSheafLaplacian(
        n=graph.n, d=d, bandwidth=graph.bandwidth, edges=graph.edges.copy(),
        weights=graph.weights.copy(), degrees=deg, offdiag=offdiag,
        transports=tmap, _blocks=blocks)


def apply_laplacian(lap: BlockSheafLaplacian, s: Cochain) -> Cochain:
    """Apply the block operator node-wise.

    (L s)_i = sum over neighbors j of k_ij (s_i - P_(j to i) s_j); agrees
    with the dense matrix-vector product to within round-off.
    """
    if s.n != lap.n or s.d != lap.d:
        raise ValueError("cochain dimensions do not match the Laplacian")
    return Cochain(n=s.n, d=s.d, values=lap.apply_stack(s.values))


def point_cloud_extension(graph: SheafGraph, transports_to_x, s_values: Cochain,
                          s_at_x: np.ndarray, dist_to_x: np.ndarray,
                          orth_tol: float = 1e-6) -> np.ndarray:
    """Sheaf Laplacian extended to an out-of-sample query point.

    Returns (1/n) * sum over samples j of
    exp(-dist(x, x_j)^2 / (4 t)) * (s(x) - P_(x_j to x) s(x_j)),
    where each transport carries the sample fiber into the query fiber.
    """
    d = graph.stalk_dim
    if s_values.n != graph.n or s_values.d != d:
        raise ValueError("cochain dimensions do not match the graph")
    s_at_x = np.asarray(s_at_x, dtype=float)
    if s_at_x.shape != (d,):
        raise ValueError(f"query value must be a vector of length {d}")
    dist_to_x = np.asarray(dist_to_x, dtype=float)
    if dist_to_x.shape != (graph.n,):
        raise ValueError("need one distance per sample point")
    if isinstance(transports_to_x, dict):
        trans = np.stack([np.asarray(transports_to_x[i], dtype=float)
                          for i in range(graph.n)])
    else:
        trans = np.asarray(transports_to_x, dtype=float)
    if trans.shape != (graph.n, d, d):
        raise ValueError("need one d x d transport per sample point")
    defect = np.linalg.norm(
        np.swapaxes(trans, -1, -2) @ trans - np.eye(d), axis=(-2, -1))
    if defect.max() > orth_tol:
        raise ValueError("a query transport is not orthogonal within tolerance")
    w = _kernel_weights(dist_to_x, graph.bandwidth)
    moved = np.einsum("jab,jb->ja", trans, s_values.values)
    return (w[:, None] * (s_at_x[None, :] - moved)).sum(0) / graph.n


def bandwidth_schedule(n: int, m: int, alpha: float) -> float:
    """Kernel bandwidth t_n = n^(-1 / (m + 2 + alpha)) for an m-manifold."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive integers")
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    return float(n) ** (-1.0 / (m + 2 + alpha))


# ---------------------------------------------------------------------------
# serialization: line-oriented text, exact float round trip
#
# header line:  n d t
# edge lines:   i j k_ij p_00 p_01 ... p_(d-1)(d-1)   (transport row-major)
# floats use 17 significant digits, which round-trips IEEE doubles exactly.
# Base points and midpoints are not part of the format; a restored graph has
# points=None and is sufficient to rebuild the Laplacian bit for bit.
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_sheaf(path, graph: SheafGraph, transports: dict) -> None:
    """Write the graph scalars and edge transports to ``path``."""
    d = graph.stalk_dim
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{graph.n} {d} {_fmt(graph.bandwidth)}\n")
        for e, (i, j) in enumerate(graph.edges):
            p_edge = np.asarray(transports[(int(i), int(j))], dtype=float)
            parts = [str(int(i)), str(int(j)), _fmt(graph.weights[e])]
            parts.extend(_fmt(v) for v in p_edge.reshape(-1))
            fh.write(" ".join(parts) + "\n")


def load_sheaf(path):
    """Read a sheaf file back; returns (graph, transports).

    The restored graph carries the structural fields only (points and
    midpoints are None).
    """
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError("malformed sheaf file header")
        n, d, t = int(header[0]), int(header[1]), float(header[2])
        edges, weights, transports = [], [], {}
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 + d * d:
                raise ValueError("malformed sheaf edge line")
            i, j = int(parts[0]), int(parts[1])
            edges.append((i, j))
            weights.append(float(parts[2]))
            transports[(i, j)] = np.array(
                [float(v) for v in parts[3:]], dtype=float).reshape(d, d)
    graph = SheafGraph(n=n, points=None, edges=np.array(edges, dtype=np.int64),
                       weights=np.array(weights), midpoints=None,
                       bandwidth=t, stalk_dim=d)
    return graph, transports


def save_laplacian(path, lap: BlockSheafLaplacian) -> None:
    """Write an assembled Laplacian in the same sheaf text format."""
    graph = SheafGraph(n=lap.n, points=None, edges=lap.edges,
                       weights=lap.weights, midpoints=None,
                       bandwidth=lap.bandwidth, stalk_dim=lap.d)
    save_sheaf(path, graph, lap.transports)


def load_laplacian(path, orth_tol: float = 1e-6) -> BlockSheafLaplacian:
    """Read a sheaf file and assemble its Laplacian."""
    graph, transports = load_sheaf(path)
    return assemble_laplacian(graph, transports, orth_tol=orth_tol)
