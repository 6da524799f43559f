"""Mass, Laplacian and conductivity-weighted operators on a network.

All operators are assembled as symmetric ``n x n`` CSR matrices over the
global node index set. Subdomain restrictions keep the full dimension
with structural zeros outside the touched rows/columns:

* mass ``M``: diagonal, entry at node ``x`` is half the total length of
  the edges incident to ``x`` (restricted to nodes inside the subdomain),
* Laplacian ``L``: edge weights ``1/|x - y|``; for a subdomain, an edge
  with exactly one endpoint inside contributes with half weight,
* weighted operator ``K``: like ``L`` with per-edge conductivities.

Every assembly walks the canonical edge list in ascending order, so
repeated runs produce bit-identical matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.io import mmwrite
from scipy.sparse import coo_matrix, csr_matrix

from slodnet.network import SpatialNetwork


class AssemblyError(ValueError):
    """Operator assembly is impossible for the given data."""


@dataclass(frozen=True)
class EdgeWeights:
    """Per-edge conductivities together with their admissibility bounds."""

    gamma: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self):
        gamma = np.ascontiguousarray(self.gamma, dtype=np.float64)
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        if not (0 < self.alpha <= self.beta < np.inf):
            raise AssemblyError("bounds must satisfy 0 < alpha <= beta < inf")
        if gamma.size and (gamma.min() < self.alpha or gamma.max() > self.beta):
            raise AssemblyError("edge weight outside [alpha, beta]")


@dataclass(frozen=True)
class Subdomain:
    """Axis-aligned box (half-open, closed at the top face of the cube)
    or an explicit node-id set."""

    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    node_ids: Optional[np.ndarray] = None

    @classmethod
    def box(cls, lo, hi) -> "Subdomain":
        return cls(lo=np.asarray(lo, dtype=np.float64),
                   hi=np.asarray(hi, dtype=np.float64))

    @classmethod
    def nodes(cls, ids) -> "Subdomain":
        return cls(node_ids=np.asarray(ids))

    def node_mask(self, net: SpatialNetwork) -> np.ndarray:
        if self.node_ids is not None:
            ids = self.node_ids
            if ids.dtype == bool:
                return ids.copy()
            mask = np.zeros(net.n_nodes, dtype=bool)
            mask[ids] = True
            return mask
        pts = net.points
        inside = np.ones(net.n_nodes, dtype=bool)
        for axis in range(net.dimension):
            lo, hi = self.lo[axis], self.hi[axis]
            upper = pts[:, axis] <= hi if hi >= 1.0 else pts[:, axis] < hi
            inside &= (pts[:, axis] >= lo) & upper
        return inside


def _resolve_mask(net: SpatialNetwork, subdomain) -> Optional[np.ndarray]:
    if subdomain is None:
        return None
    if isinstance(subdomain, Subdomain):
        return subdomain.node_mask(net)
    mask = np.asarray(subdomain)
    if mask.dtype != bool:
        m = np.zeros(net.n_nodes, dtype=bool)
        m[mask] = True
        return m
    return mask


def mass_diagonal(net: SpatialNetwork, subdomain=None) -> np.ndarray:
    """Diagonal of the mass operator; zero outside the subdomain node set."""
    diag = np.zeros(net.n_nodes)
    half = 0.5 * net.edge_lengths
    np.add.at(diag, net.edges[:, 0], half)
    np.add.at(diag, net.edges[:, 1], half)
    mask = _resolve_mask(net, subdomain)
    if mask is not None:
        diag = np.where(mask, diag, 0.0)
    return diag


def assemble_mass(net: SpatialNetwork, subdomain=None) -> csr_matrix:
    """Diagonal edge-length mass operator, optionally subdomain-restricted."""
    diag = mass_diagonal(net, subdomain)
    n = net.n_nodes
    idx = np.arange(n)
    return csr_matrix(coo_matrix((diag, (idx, idx)), shape=(n, n)))


def _edge_factors(net: SpatialNetwork, subdomain) -> np.ndarray:
    """Per-edge multiplicity: 1 inside, 1/2 crossing, 0 outside the subdomain."""
    mask = _resolve_mask(net, subdomain)
    if mask is None:
        return np.ones(net.n_edges)
    return 0.5 * (mask[net.edges[:, 0]].astype(np.float64)
                  + mask[net.edges[:, 1]].astype(np.float64))


def _graph_operator(net: SpatialNetwork, weights: np.ndarray) -> csr_matrix:
    """Symmetric operator sum over edges of w_e * (e_i - e_j)(e_i - e_j)^T."""
    i, j = net.edges[:, 0], net.edges[:, 1]
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    data = np.concatenate([weights, weights, -weights, -weights])
    n = net.n_nodes
    mat = coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_laplacian(net: SpatialNetwork, subdomain=None) -> csr_matrix:
    """Reciprocal edge-length graph Laplacian, optionally restricted."""
    if net.n_edges and net.edge_lengths.min() <= 0:
        raise AssemblyError("zero-length edge")
    w = _edge_factors(net, subdomain) / net.edge_lengths
    return _graph_operator(net, w)


def assemble_weighted(net: SpatialNetwork, weights: EdgeWeights, subdomain=None) -> csr_matrix:
    """Conductivity-weighted graph Laplacian, optionally restricted."""
    if weights.gamma.shape != (net.n_edges,):
        raise AssemblyError("weight vector length does not match edge count")
    if net.n_edges and net.edge_lengths.min() <= 0:
        raise AssemblyError("zero-length edge")
    w = _edge_factors(net, subdomain) * weights.gamma / net.edge_lengths
    return _graph_operator(net, w)


def sample_uniform_weights(net: SpatialNetwork, lo: float, hi: float, seed: int) -> EdgeWeights:
    """Independent uniform conductivities on ``[lo, hi]`` per edge."""
    if not (0 < lo <= hi):
        raise AssemblyError("need 0 < lo <= hi")
    rng = np.random.default_rng(seed)
    gamma = rng.uniform(lo, hi, size=net.n_edges)
    return EdgeWeights(gamma=gamma, alpha=lo, beta=hi)


@dataclass(frozen=True)
class Channel:
    """Corridor around a polyline; edges whose midpoint lies within
    ``width / 2`` of the polyline belong to the channel."""

    points: np.ndarray
    width: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if pts.shape[0] < 2:
            raise AssemblyError("a channel polyline needs at least two points")
        if self.width <= 0:
            raise AssemblyError("channel width must be positive")
        object.__setattr__(self, "points", pts)

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        dmin = np.full(xy.shape[0], np.inf)
        for a, b in zip(self.points[:-1], self.points[1:]):
            ab = b - a
            denom = ab @ ab
            if denom == 0:
                d = np.linalg.norm(xy - a, axis=1)
            else:
                t = np.clip((xy - a) @ ab / denom, 0.0, 1.0)
                d = np.linalg.norm(xy - a - t[:, None] * ab, axis=1)
            dmin = np.minimum(dmin, d)
        return dmin <= 0.5 * self.width


def apply_channels(net: SpatialNetwork, weights: EdgeWeights,
                   channels: Sequence[Channel], value: float) -> EdgeWeights:
    """Override conductivity with ``value`` on all edges inside a channel."""
    if value <= 0:
        raise AssemblyError("channel conductivity must be positive")
    if not channels:
        return weights
    mid = 0.5 * (net.points[net.edges[:, 0]] + net.points[net.edges[:, 1]])
    hit = np.zeros(net.n_edges, dtype=bool)
    for ch in channels:
        hit |= ch.contains(mid)
    gamma = np.where(hit, value, weights.gamma)
    if not np.any(hit):
        return weights
    return EdgeWeights(gamma=gamma,
                       alpha=min(weights.alpha, value),
                       beta=max(weights.beta, value))


def norms(net: SpatialNetwork, v: np.ndarray, subdomain=None,
          weights: Optional[EdgeWeights] = None) -> dict:
    """Mass, Laplacian, combined and (optionally) energy norms of ``v``.

    Returns ``{"m": |v|_M, "l": |v|_L, "v": sqrt(m^2 + l^2)}`` for the
    chosen subdomain, plus ``"k"`` when conductivities are supplied.
    """
    v = np.asarray(v, dtype=np.float64)
    factors = _edge_factors(net, subdomain)
    diff2 = (v[net.edges[:, 0]] - v[net.edges[:, 1]]) ** 2
    l2 = float(np.sum(factors * diff2 / net.edge_lengths))
    m2 = float(mass_diagonal(net, subdomain) @ (v * v))
    out = {"m": np.sqrt(m2), "l": np.sqrt(l2), "v": np.sqrt(m2 + l2)}
    if weights is not None:
        k2 = float(np.sum(factors * weights.gamma * diff2 / net.edge_lengths))
        out["k"] = np.sqrt(k2)
    return out


def export_matrix_market(matrix: csr_matrix, path) -> None:
    """Write a matrix in Matrix Market coordinate format."""
    mmwrite(str(path), matrix.tocoo(), symmetry="symmetric")
