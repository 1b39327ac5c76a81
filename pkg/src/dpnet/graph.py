"""Network topologies and their doubly-stochastic mixing matrices."""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from . import streams
from .errors import IsolatedNode, NonMixingWarning, ParseError, SelfLoop

DENSE_SPECTRUM_LIMIT = 20_000
POWER_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected simple graph on nodes ``0..node_count-1``.

    ``edges`` is an ``(m, 2)`` integer array with ``i < j`` in every row,
    sorted and free of duplicates.
    """

    node_count: int
    edges: np.ndarray
    positions: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be positive")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size:
            if np.any(e[:, 0] == e[:, 1]):
                raise ValueError("self-loops are not allowed in a Topology")
            if e.min() < 0 or e.max() >= self.node_count:
                raise ValueError("edge endpoint out of range")
            e = np.sort(e, axis=1)
            e = np.unique(e, axis=0)
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[tuple[int, int]]) -> "Topology":
        return cls(node_count, np.array(list(edges), dtype=np.int64).reshape(-1, 2))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.node_count)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        n, e = self.node_count, self.edges
        ones = np.ones(len(e))
        a = sp.coo_matrix((np.r_[ones, ones], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
        return a.tocsr()

    def isolated_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.degrees == 0)

    def component_count(self) -> int:
        return csgraph.connected_components(self.adjacency, directed=False)[0]

    def is_connected(self) -> bool:
        return self.component_count() == 1

    def to_edge_list(self, path: str | Path, one_indexed: bool = False) -> None:
        off = 1 if one_indexed else 0
        with open(path, "w") as fh:
            for i, j in self.edges:
                fh.write(f"{i + off} {j + off}\n")


def path_graph(n: int) -> Topology:
    return Topology.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> Topology:
    return Topology.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n: int) -> Topology:
    i, j = np.triu_indices(n, k=1)
    return Topology(n, np.column_stack([i, j]))


def star_graph(leaves: int) -> Topology:
    return Topology.from_edges(leaves + 1, [(0, k) for k in range(1, leaves + 1)])


def geometric_positions(n: int, seed: int) -> np.ndarray:
    """Node coordinates in the unit square; node i depends only on (seed, i)."""
    pts = np.empty((n, 2))
    for i in range(n):
        pts[i] = streams.stream(seed, "graph", i).random(2)
    return pts


def random_geometric(n: int, radius: float, seed: int = 0) -> Topology:
    """Random geometric graph: edge iff Euclidean distance <= radius."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    pts = geometric_positions(n, seed)
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray") if n > 1 else np.empty((0, 2))
    return Topology(n, pairs, positions=pts)


_SPLIT = re.compile(r"[,\s]+")


def load_edge_list(path: str | Path, *, return_stats: bool = False):
    """Read an undirected edge list of integer pairs.

    Separators may be whitespace or commas; blank lines and ``#`` comments are
    skipped. Labels are 0-indexed when the smallest label is 0 and 1-indexed
    otherwise. Self-loops are dropped and counted; duplicate and reversed
    edges collapse.
    """
    pairs: list[tuple[int, int]] = []
    self_loops = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = [t for t in _SPLIT.split(line) if t]
            if len(tokens) != 2:
                raise ParseError(lineno, f"expected two node labels, got {len(tokens)}")
            try:
                u, v = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise ParseError(lineno, f"non-integer label in {line!r}") from None
            if u < 0 or v < 0:
                raise ParseError(lineno, "negative node label")
            if u == v:
                self_loops += 1
                continue
            pairs.append((u, v))
    if not pairs:
        raise ParseError(0, "no edges found")
    arr = np.array(pairs, dtype=np.int64)
    base = 0 if arr.min() == 0 else 1
    arr -= base
    topo = Topology(int(arr.max()) + 1, arr)
    if self_loops:
        warnings.warn(f"dropped {self_loops} self-loop(s) from {path}", SelfLoop, stacklevel=2)
    if return_stats:
        return topo, {"self_loops_dropped": self_loops, "index_base": base, "raw_pairs": len(pairs)}
    return topo


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray | None  # columns match eigenvalues; None on the iterative path
    beta_star: float


class MixingMatrix:
    """Symmetric doubly-stochastic weight matrix over a topology.

    Immutable after construction. The spectrum is computed lazily and cached.
    """

    def __init__(self, weights: sp.csr_matrix, rule: str, topology: Topology | None = None):
        w = sp.csr_matrix(weights, dtype=np.float64)
        w.sort_indices()
        w.indices = w.indices.astype(np.intc, copy=False)
        w.indptr = w.indptr.astype(np.intc, copy=False)
        for arr in (w.data, w.indices, w.indptr):
            arr.setflags(write=False)
        self._w = w
        self.rule = rule
        self.topology = topology
        self.n = w.shape[0]
        self.non_mixing = self._detect_non_mixing()
        if self.non_mixing:
            warnings.warn(
                f"{rule} mixing matrix has beta* = 1 (disconnected or periodic); consensus will not mix globally",
                NonMixingWarning,
                stacklevel=3,
            )

    @property
    def weights(self) -> sp.csr_matrix:
        return self._w

    @cached_property
    def dense(self) -> np.ndarray:
        d = self._w.toarray()
        d.setflags(write=False)
        return d

    @property
    def prefers_dense(self) -> bool:
        return self._w.nnz > 0.25 * self.n * self.n

    @cached_property
    def diagonal(self) -> np.ndarray:
        return self._w.diagonal()

    @cached_property
    def max_neighbor_weight(self) -> np.ndarray:
        """Per-row maximum off-diagonal weight, max_{j != i} a_ij."""
        off = (self._w - sp.diags(self.diagonal)).tocsr()
        off.eliminate_zeros()
        out = np.zeros(self.n)
        if off.nnz:
            out = np.asarray(off.max(axis=1).todense()).ravel()
        return out

    @property
    def max_offdiagonal(self) -> float:
        return float(self.max_neighbor_weight.max()) if self.n > 1 else 0.0

    def _detect_non_mixing(self) -> bool:
        if self.n == 1:
            return False
        pattern = self._w.copy()
        pattern.setdiag(0)
        pattern.eliminate_zeros()
        ncomp, labels = csgraph.connected_components(pattern, directed=False)
        if ncomp > 1:
            return True
        if np.any(self.diagonal > 0):
            return False
        # connected with zero diagonal: eigenvalue -1 iff the graph is bipartite
        color = np.full(self.n, -1)
        color[0] = 0
        order = csgraph.breadth_first_order(pattern, 0, directed=False, return_predecessors=False)
        indptr, indices = pattern.indptr, pattern.indices
        for u in order:
            for v in indices[indptr[u]:indptr[u + 1]]:
                if color[v] < 0:
                    color[v] = 1 - color[u]
                elif color[v] == color[u]:
                    return False
        return True

    def row_sum_error(self) -> float:
        ones = np.ones(self.n)
        return float(max(np.abs(self._w @ ones - 1).max(), np.abs(self._w.T @ ones - 1).max()))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.dense @ x if self.prefers_dense else self._w @ x

    @cached_property
    def spectrum(self) -> Spectrum:
        return spectrum(self)

    @property
    def beta_star(self) -> float:
        return self.spectrum.beta_star


def _from_offdiagonal(top: Topology, offdiag: np.ndarray, rule: str) -> MixingMatrix:
    n, e = top.node_count, top.edges
    rows = np.r_[e[:, 0], e[:, 1]]
    cols = np.r_[e[:, 1], e[:, 0]]
    vals = np.r_[offdiag, offdiag]
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    diag = 1.0 - np.asarray(off.sum(axis=1)).ravel()
    diag[diag < 0] = 0.0  # only reachable through rounding; the weights cap row sums at 1
    w = (off + sp.diags(diag)).tocsr()
    return MixingMatrix(w, rule, top)


def _check_isolated(top: Topology) -> None:
    if top.node_count == 1:
        return
    iso = top.isolated_nodes()
    if iso.size:
        raise IsolatedNode(int(iso[0]))


def mh_weights(topology: Topology) -> MixingMatrix:
    """Metropolis-Hastings weights a_ij = 1 / max(deg i, deg j)."""
    _check_isolated(topology)
    deg = topology.degrees
    e = topology.edges
    w = 1.0 / np.maximum(deg[e[:, 0]], deg[e[:, 1]])
    return _from_offdiagonal(topology, w, "mh")


def modified_mh_weights(topology: Topology) -> MixingMatrix:
    """Lazy MH weights a_ij = 1 / (2 max(deg i, deg j)); every a_ii >= 1/2."""
    _check_isolated(topology)
    deg = topology.degrees
    e = topology.edges
    w = 1.0 / (2.0 * np.maximum(deg[e[:, 0]], deg[e[:, 1]]))
    return _from_offdiagonal(topology, w, "modified_mh")


def uniform_complete(n: int) -> MixingMatrix:
    """Complete graph with every weight, diagonal included, equal to 1/n."""
    return MixingMatrix(sp.csr_matrix(np.full((n, n), 1.0 / n)), "uniform", complete_graph(n))


def from_dense(weights: np.ndarray, rule: str = "custom") -> MixingMatrix:
    """Wrap an explicit symmetric doubly-stochastic matrix (tests, degenerate cases)."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("weights must be square")
    if not np.array_equal(w, w.T):
        raise ValueError("weights must be symmetric")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if np.abs(w.sum(axis=1) - 1).max() > 1e-12:
        raise ValueError("weights must be doubly stochastic")
    return MixingMatrix(sp.csr_matrix(w), rule)


def build_weights(topology: Topology, rule: str = "mh") -> MixingMatrix:
    if rule == "mh":
        return mh_weights(topology)
    if rule == "modified_mh":
        return modified_mh_weights(topology)
    if rule == "uniform":
        if topology.edge_count != topology.node_count * (topology.node_count - 1) // 2:
            raise ValueError("uniform weights require a complete graph")
        return uniform_complete(topology.node_count)
    raise ValueError(f"unknown weight rule {rule!r}")


def _power_magnitude(op: Callable[[np.ndarray], np.ndarray], n: int, tol: float, max_iter: int = 100_000) -> float:
    rng = streams.stream(0, "partition", n)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = op(op(x))  # square the operator so +/- eigenvalue pairs do not oscillate
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        new = math.sqrt(nrm)
        x = y / nrm
        if abs(new - est) <= tol * max(1.0, new):
            return new
        est = new
    return est


def spectrum(matrix: MixingMatrix, *, dense_limit: int = DENSE_SPECTRUM_LIMIT) -> Spectrum:
    """Eigenvalues (descending), orthonormal eigenvectors and beta* = max(lambda_2, |lambda_n|)."""
    n = matrix.n
    if n == 1:
        return Spectrum(np.array([1.0]), np.ones((1, 1)), 0.0)
    if n <= dense_limit:
        vals, vecs = np.linalg.eigh(matrix.dense)
        vals, vecs = vals[::-1], vecs[:, ::-1]
        beta = float(max(vals[1], abs(vals[-1])))
        return Spectrum(vals, vecs, min(beta, 1.0))
    w = matrix.weights
    mean_free = lambda x: w @ x - x.mean()  # noqa: E731  (A - 11^T/n) x
    beta = _power_magnitude(mean_free, n, POWER_TOL)
    return Spectrum(np.array([1.0]), None, min(beta, 1.0))


class TopologySequence:
    """Time-varying topologies ``G(t)`` and their per-round mixing matrices.

    ``factory(t)`` returns the topology used at round t (t >= 1).
    """

    def __init__(self, factory: Callable[[int], Topology], weight_rule: str = "modified_mh"):
        if weight_rule not in ("static", "modified_mh"):
            raise ValueError("weight_rule must be 'static' or 'modified_mh'")
        self.factory = factory
        self.weight_rule = weight_rule
        self._cache: dict[int, MixingMatrix] = {}
        self._static: MixingMatrix | None = None

    @classmethod
    def cyclic(cls, topologies: Sequence[Topology], weight_rule: str = "modified_mh") -> "TopologySequence":
        tops = list(topologies)
        seq = cls(lambda t: tops[(t - 1) % len(tops)], weight_rule)
        return seq

    @classmethod
    def static(cls, topology: Topology) -> "TopologySequence":
        return cls(lambda t: topology, "static")

    def topology(self, t: int) -> Topology:
        return self.factory(t)

    def matrix(self, t: int) -> MixingMatrix:
        top = self.factory(t)
        key = id(top)
        if self.weight_rule == "static":
            if self._static is None:
                self._static = modified_mh_weights(top)
            return self._static
        m = self._cache.get(key)
        if m is None or m.topology is not top:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NonMixingWarning)  # per-round graphs need only be jointly connected
                m = modified_mh_weights(top)
            self._cache[key] = m
        return m

    @property
    def node_count(self) -> int:
        return self.factory(1).node_count
