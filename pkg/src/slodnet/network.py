"""Spatial networks embedded in the unit cube.

A :class:`SpatialNetwork` is an undirected graph whose nodes carry
coordinates in ``[0, 1]^d`` and whose edges carry Euclidean lengths.
Nodes flagged in the ``dirichlet`` mask are constrained to zero by the
solvers downstream.

The random fiber generator samples straight line segments with uniform
midpoints and rotations, clips them to the unit square, turns endpoints
and pairwise segment intersections into nodes, links consecutive nodes
along each segment, and finally reduces the result to its largest
connected component with all interior hanging nodes removed.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

# Geometry tolerances for the generator pipeline.
MERGE_TOL = 1e-10        # nodes closer than this are merged
PARALLEL_TOL = 1e-14     # |cross| of unit directions below this: no intersection
PARAM_SLACK = 1e-12      # slack on the [0, 1] parameter range of a segment
BOUNDARY_TOL = 1e-12     # coordinate distance to 0/1 that counts as boundary

JSON_FORMAT_VERSION = 1
BINARY_MAGIC = b"SLODNET\x01"


class GenerationError(RuntimeError):
    """Fiber sampling produced an unusable network."""


class NetworkFormatError(ValueError):
    """A network file is malformed or violates a structural invariant."""


@dataclass(frozen=True)
class FiberGenConfig:
    """Parameters of the random fiber process.

    ``n_lines`` segments of length ``line_length`` are sampled with
    midpoints uniform in ``[-margin, 1 + margin]^d`` and angles uniform
    in ``[0, pi)``.
    """

    n_lines: int
    line_length: float
    margin: float
    seed: int
    dimension: int = 2

    def __post_init__(self):
        if self.n_lines < 1:
            raise ValueError("n_lines must be >= 1")
        if self.line_length <= 0:
            raise ValueError("line_length must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.dimension != 2:
            raise ValueError("fiber generation is only implemented for d = 2")


class SpatialNetwork:
    """Immutable embedded graph: coordinates, canonical edges, Dirichlet mask.

    Edges are stored once per undirected pair as ``(i, j)`` with ``i < j``,
    sorted lexicographically. Edge lengths always equal the Euclidean
    distance of their endpoints.
    """

    def __init__(self, points, edges, dirichlet, edge_lengths=None, validate=True):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2:
            raise ValueError("points must be a (n, d) array")
        edges = np.ascontiguousarray(edges, dtype=np.int64).reshape(-1, 2)
        dirichlet = np.ascontiguousarray(dirichlet, dtype=bool)

        if validate:
            edges = self._canonicalize_edges(edges, points.shape[0])
        lengths = np.linalg.norm(points[edges[:, 0]] - points[edges[:, 1]], axis=1)
        if edge_lengths is not None:
            given = np.asarray(edge_lengths, dtype=np.float64)
            if given.shape != lengths.shape or not np.allclose(given, lengths, rtol=1e-12, atol=0):
                raise NetworkFormatError("edge_lengths inconsistent with node coordinates")
        if validate and edges.shape[0] and not np.all(lengths > 0):
            raise NetworkFormatError("zero-length edge (coincident endpoints)")
        if dirichlet.shape != (points.shape[0],):
            raise NetworkFormatError("dirichlet mask length does not match node count")

        self.points = points
        self.edges = edges
        self.edge_lengths = lengths
        self.dirichlet = dirichlet
        for arr in (self.points, self.edges, self.edge_lengths, self.dirichlet):
            arr.setflags(write=False)
        self._adjacency = None

    @staticmethod
    def _canonicalize_edges(edges, n_nodes):
        if edges.shape[0] == 0:
            return edges.reshape(0, 2)
        if edges.min() < 0 or edges.max() >= n_nodes:
            raise NetworkFormatError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise NetworkFormatError("self-loop edge")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        order = np.lexsort((hi, lo))
        canonical = np.column_stack((lo[order], hi[order]))
        if canonical.shape[0] > 1:
            dup = np.all(canonical[1:] == canonical[:-1], axis=1)
            if np.any(dup):
                raise NetworkFormatError("duplicate (or asymmetric duplicate) edge")
        return canonical

    @property
    def n_nodes(self) -> int:
        return self.points.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def adjacency(self) -> csr_matrix:
        """Unweighted symmetric adjacency (0/1 pattern), cached."""
        if self._adjacency is None:
            n = self.n_nodes
            i, j = self.edges[:, 0], self.edges[:, 1]
            ones = np.ones(self.n_edges)
            a = coo_matrix((np.concatenate([ones, ones]),
                            (np.concatenate([i, j]), np.concatenate([j, i]))),
                           shape=(n, n))
            self._adjacency = a.tocsr()
        return self._adjacency

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def neighbors_mask(self, mask: np.ndarray) -> np.ndarray:
        """Nodes in ``mask`` together with all their graph neighbors."""
        out = np.asarray(self.adjacency @ mask.astype(np.float64)) > 0
        return out | mask

    def is_connected(self) -> bool:
        if self.n_nodes == 0:
            return False
        n_comp, _ = connected_components(self.adjacency, directed=False)
        return n_comp == 1

    def subnetwork(self, keep: np.ndarray) -> "SpatialNetwork":
        """Network induced on the kept nodes, ids compacted in ascending order."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep_ids = np.flatnonzero(keep)
        else:
            keep_ids = np.unique(keep)
        new_id = -np.ones(self.n_nodes, dtype=np.int64)
        new_id[keep_ids] = np.arange(keep_ids.size)
        emask = (new_id[self.edges[:, 0]] >= 0) & (new_id[self.edges[:, 1]] >= 0)
        edges = new_id[self.edges[emask]]
        return SpatialNetwork(self.points[keep_ids], edges, self.dirichlet[keep_ids])

    def __eq__(self, other):
        if not isinstance(other, SpatialNetwork):
            return NotImplemented
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.dirichlet, other.dirichlet))


def boundary_mask(points: np.ndarray, tol: float = BOUNDARY_TOL) -> np.ndarray:
    """True for points with some coordinate at 0 or 1 (within ``tol``)."""
    return np.any((np.abs(points) <= tol) | (np.abs(points - 1.0) <= tol), axis=1)


def segment_intersection(p0, p1, q0, q1):
    """Intersection point of two closed segments, or ``None``.

    The computation is canonicalized so the result is bitwise identical
    under swapping the two segments. Near-parallel pairs (unit-direction
    cross product below ``PARALLEL_TOL``) report no intersection.
    """
    a = (tuple(p0), tuple(p1))
    b = (tuple(q0), tuple(q1))
    if b < a:
        a, b = b, a
    p = np.asarray(a[0], dtype=np.float64)
    r = np.asarray(a[1], dtype=np.float64) - p
    q = np.asarray(b[0], dtype=np.float64)
    u = np.asarray(b[1], dtype=np.float64) - q
    rn = np.linalg.norm(r)
    un = np.linalg.norm(u)
    if rn == 0 or un == 0:
        return None
    cross = r[0] * u[1] - r[1] * u[0]
    if abs(cross) / (rn * un) < PARALLEL_TOL:
        return None
    w = q - p
    t = (w[0] * u[1] - w[1] * u[0]) / cross
    s = (w[0] * r[1] - w[1] * r[0]) / cross
    if -PARAM_SLACK <= t <= 1 + PARAM_SLACK and -PARAM_SLACK <= s <= 1 + PARAM_SLACK:
        return p + t * r
    return None


def _sample_segments(config: FiberGenConfig) -> np.ndarray:
    """Sample raw segments as an (n, 2, 2) array of endpoint pairs."""
    rng = np.random.default_rng(config.seed)  # PCG64: named, portable, 64-bit
    mid = rng.uniform(-config.margin, 1.0 + config.margin, size=(config.n_lines, 2))
    angle = rng.uniform(0.0, np.pi, size=config.n_lines)
    half = 0.5 * config.line_length * np.column_stack([np.cos(angle), np.sin(angle)])
    return np.stack([mid - half, mid + half], axis=1)


def _clip_segments(segments: np.ndarray) -> np.ndarray:
    """Clip segments to the unit square (Liang-Barsky), dropping outside ones.

    Clipped endpoints are snapped exactly onto the crossed boundary so that
    boundary detection at tolerance ``BOUNDARY_TOL`` is reliable.
    """
    p0 = segments[:, 0, :]
    d = segments[:, 1, :] - p0
    t0 = np.zeros(len(segments))
    t1 = np.ones(len(segments))
    alive = np.ones(len(segments), dtype=bool)
    for axis in range(2):
        # constraints 0 <= x_axis(t) <= 1 as pcoef * t <= qval
        for pcoef, qval in ((-d[:, axis], p0[:, axis]),
                            (d[:, axis], 1.0 - p0[:, axis])):
            alive &= ~((pcoef == 0) & (qval < 0))
            with np.errstate(divide="ignore", invalid="ignore"):
                r = qval / pcoef
            t0 = np.where(pcoef < 0, np.maximum(t0, r), t0)
            t1 = np.where(pcoef > 0, np.minimum(t1, r), t1)
    valid = alive & (t0 < t1)
    out = np.empty((int(valid.sum()), 2, 2))
    pv, dv = p0[valid], d[valid]
    out[:, 0, :] = pv + t0[valid, None] * dv
    out[:, 1, :] = pv + t1[valid, None] * dv
    np.clip(out, 0.0, 1.0, out=out)
    # snap coordinates that landed within roundoff of the boundary
    out[np.abs(out) < 1e-15] = 0.0
    out[np.abs(out - 1.0) < 1e-15] = 1.0
    return out


def _candidate_pairs(segments: np.ndarray, cell: float) -> np.ndarray:
    """Index pairs (i < j) of segments whose bounding boxes share a grid cell."""
    n = len(segments)
    lo = segments.min(axis=1)
    hi = segments.max(axis=1)
    nb = max(1, int(np.ceil(1.0 / cell)))
    ilo = np.clip((lo / cell).astype(np.int64), 0, nb - 1)
    ihi = np.clip((hi / cell).astype(np.int64), 0, nb - 1)
    seg_ids = []
    cell_ids = []
    for s in range(n):
        xs = np.arange(ilo[s, 0], ihi[s, 0] + 1)
        ys = np.arange(ilo[s, 1], ihi[s, 1] + 1)
        cc = (xs[:, None] * nb + ys[None, :]).ravel()
        cell_ids.append(cc)
        seg_ids.append(np.full(cc.size, s, dtype=np.int64))
    seg_ids = np.concatenate(seg_ids)
    cell_ids = np.concatenate(cell_ids)
    order = np.argsort(cell_ids, kind="stable")
    seg_ids = seg_ids[order]
    cell_ids = cell_ids[order]
    starts = np.flatnonzero(np.diff(cell_ids, prepend=-1))
    counts = np.diff(np.append(starts, seg_ids.size))
    pairs = []
    for st, ct in zip(starts, counts):
        if ct < 2:
            continue
        members = seg_ids[st:st + ct]
        a, b = np.meshgrid(members, members, indexing="ij")
        m = a < b
        pairs.append(np.column_stack([a[m], b[m]]))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.concatenate(pairs)
    return np.unique(pairs, axis=0)


def _pairwise_intersections(segments: np.ndarray):
    """All intersection points among segments.

    Returns ``(seg_a, seg_b, t_a, t_b, points)`` with one row per
    intersecting unordered pair.
    """
    if len(segments) < 2:
        return (np.empty(0, np.int64), np.empty(0, np.int64),
                np.empty(0), np.empty(0), np.empty((0, 2)))
    cell = max(segments.max(axis=1).__sub__(segments.min(axis=1)).max(), 1e-3)
    pairs = _candidate_pairs(segments, cell)
    if pairs.size == 0:
        return (np.empty(0, np.int64), np.empty(0, np.int64),
                np.empty(0), np.empty(0), np.empty((0, 2)))
    p = segments[pairs[:, 0], 0, :]
    r = segments[pairs[:, 0], 1, :] - p
    q = segments[pairs[:, 1], 0, :]
    u = segments[pairs[:, 1], 1, :] - q
    cross = r[:, 0] * u[:, 1] - r[:, 1] * u[:, 0]
    norm = np.linalg.norm(r, axis=1) * np.linalg.norm(u, axis=1)
    ok = np.abs(cross) >= PARALLEL_TOL * np.maximum(norm, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = q - p
        t = (w[:, 0] * u[:, 1] - w[:, 1] * u[:, 0]) / cross
        s = (w[:, 0] * r[:, 1] - w[:, 1] * r[:, 0]) / cross
    ok &= (t >= -PARAM_SLACK) & (t <= 1 + PARAM_SLACK)
    ok &= (s >= -PARAM_SLACK) & (s <= 1 + PARAM_SLACK)
    idx = np.flatnonzero(ok)
    pts = p[idx] + t[idx, None] * r[idx]
    return pairs[idx, 0], pairs[idx, 1], t[idx], s[idx], pts


def intersection_graph(segments) -> SpatialNetwork:
    """Raw node/edge structure of a segment arrangement.

    Nodes are segment endpoints and pairwise intersections (merged at
    tolerance ``MERGE_TOL``); edges connect consecutive nodes along each
    segment. No component extraction, pruning, or boundary marking is
    performed; the Dirichlet mask is the geometric boundary mask.
    """
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2, 2)
    n_seg = len(segments)
    if n_seg == 0:
        raise GenerationError("no segments inside the domain")

    seg_a, seg_b, t_a, t_b, ipts = _pairwise_intersections(segments)

    # node records: (segment id, parameter, coordinates)
    seg_of = np.concatenate([np.repeat(np.arange(n_seg), 2), seg_a, seg_b])
    t_of = np.concatenate([np.tile([0.0, 1.0], n_seg), t_a, t_b])
    raw_pts = np.concatenate([segments.reshape(-1, 2), ipts, ipts])

    # merge coincident points (endpoint sharing, symmetric intersections)
    tree = cKDTree(raw_pts)
    pairs = tree.query_pairs(MERGE_TOL, output_type="ndarray")
    parent = np.arange(len(raw_pts))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(len(raw_pts))])
    uniq, node_of_raw = np.unique(roots, return_inverse=True)
    coords = raw_pts[uniq]

    # edges: consecutive nodes along each segment in parameter order
    order = np.lexsort((t_of, seg_of))
    s_sorted = seg_of[order]
    n_sorted = node_of_raw[order]
    same_seg = s_sorted[1:] == s_sorted[:-1]
    a = n_sorted[:-1][same_seg]
    b = n_sorted[1:][same_seg]
    keep = a != b
    edges = np.column_stack([a[keep], b[keep]])
    if edges.size:
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        edges = np.unique(np.column_stack([lo, hi]), axis=0)
    return SpatialNetwork(coords, edges, boundary_mask(coords))


def largest_connected_component(net: SpatialNetwork) -> SpatialNetwork:
    """Restrict to the largest connected component (ids compacted)."""
    if net.n_nodes == 0:
        raise GenerationError("empty network")
    n_comp, labels = connected_components(net.adjacency, directed=False)
    if n_comp == 1:
        return net.subnetwork(np.ones(net.n_nodes, dtype=bool))
    sizes = np.bincount(labels, minlength=n_comp)
    return net.subnetwork(labels == np.argmax(sizes))


def remove_hanging_nodes(net: SpatialNetwork) -> SpatialNetwork:
    """Iteratively drop non-Dirichlet degree-1 nodes until none remain."""
    keep = np.ones(net.n_nodes, dtype=bool)
    edges = net.edges
    while True:
        deg = np.zeros(net.n_nodes, dtype=np.int64)
        np.add.at(deg, edges[:, 0], 1)
        np.add.at(deg, edges[:, 1], 1)
        hanging = keep & ~net.dirichlet & (deg == 1)
        # isolated interior nodes can appear after earlier rounds
        hanging |= keep & ~net.dirichlet & (deg == 0)
        if not np.any(hanging):
            break
        keep &= ~hanging
        edges = edges[keep[edges[:, 0]] & keep[edges[:, 1]]]
    out = net.subnetwork(keep)
    if out.n_nodes == 0 or out.n_edges == 0:
        raise GenerationError("pruning hanging nodes emptied the network")
    return out


def generate_fiber_network(config: FiberGenConfig, segments=None) -> SpatialNetwork:
    """Full fiber pipeline: sample, clip, intersect, reduce, mark boundary.

    ``segments`` overrides the random sampling with given endpoint pairs
    (testing hook); clipping and all later stages still apply.

    Raises :class:`GenerationError` if clipping leaves nothing, if the
    reduced network is empty, or if it contains no boundary node.
    """
    if segments is None:
        segments = _sample_segments(config)
    segments = _clip_segments(np.asarray(segments, dtype=np.float64))
    if len(segments) == 0:
        raise GenerationError("all sampled lines fall outside the unit square")
    net = intersection_graph(segments)
    net = largest_connected_component(net)
    net = remove_hanging_nodes(net)
    if not np.any(net.dirichlet):
        raise GenerationError("largest component does not reach the boundary "
                              "(no Dirichlet node)")
    return net


# ---------------------------------------------------------------------------
# persistence


def _canonical_json(net: SpatialNetwork) -> str:
    doc = {
        "version": JSON_FORMAT_VERSION,
        "dimension": net.dimension,
        "nodes": [[float(c) for c in p] for p in net.points],
        "edges": [[int(i), int(j)] for i, j in net.edges],
        "dirichlet": [bool(b) for b in net.dirichlet],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def canonical_sha256(net: SpatialNetwork) -> str:
    """SHA-256 of the canonical JSON serialization."""
    return hashlib.sha256(_canonical_json(net).encode()).hexdigest()


def save_network(net: SpatialNetwork, path) -> None:
    """Write a network file; ``.json`` suffix selects JSON, else binary."""
    path = str(path)
    if path.endswith(".json"):
        with open(path, "w") as fh:
            fh.write(_canonical_json(net))
        return
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<IQQ", net.dimension, net.n_nodes, net.n_edges))
        fh.write(net.points.astype("<f8").tobytes())
        fh.write(net.edges.astype("<u4").tobytes())
        fh.write(np.packbits(net.dirichlet).tobytes())


def load_network(path) -> SpatialNetwork:
    """Read a network file written by :func:`save_network`.

    Raises :class:`NetworkFormatError` for malformed input, including
    structurally invalid edge lists.
    """
    path = str(path)
    if path.endswith(".json"):
        with open(path) as fh:
            text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise NetworkFormatError(
                f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
        for key in ("version", "dimension", "nodes", "edges", "dirichlet"):
            if key not in doc:
                raise NetworkFormatError(f"{path}: missing field {key!r}")
        if doc["version"] != JSON_FORMAT_VERSION:
            raise NetworkFormatError(f"{path}: unsupported version {doc['version']}")
        points = np.asarray(doc["nodes"], dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != doc["dimension"]:
            raise NetworkFormatError(f"{path}: node array does not match dimension")
        edges = np.asarray(doc["edges"], dtype=np.int64).reshape(-1, 2)
        try:
            return SpatialNetwork(points, edges, np.asarray(doc["dirichlet"], dtype=bool))
        except NetworkFormatError as exc:
            raise NetworkFormatError(f"{path}: {exc}") from exc

    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(BINARY_MAGIC)] != BINARY_MAGIC:
        raise NetworkFormatError(f"{path}: bad magic (offset 0)")
    off = len(BINARY_MAGIC)
    try:
        dim, n, m = struct.unpack_from("<IQQ", blob, off)
        off += struct.calcsize("<IQQ")
        points = np.frombuffer(blob, dtype="<f8", count=n * dim, offset=off).reshape(n, dim)
        off += n * dim * 8
        edges = np.frombuffer(blob, dtype="<u4", count=2 * m, offset=off).reshape(m, 2)
        off += 2 * m * 4
        nbytes = (n + 7) // 8
        bits = np.frombuffer(blob, dtype=np.uint8, count=nbytes, offset=off)
        dirichlet = np.unpackbits(bits)[:n].astype(bool)
    except (struct.error, ValueError) as exc:
        raise NetworkFormatError(f"{path}: truncated binary data at offset {off}") from exc
    try:
        return SpatialNetwork(points.astype(np.float64), edges.astype(np.int64), dirichlet)
    except NetworkFormatError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from exc
