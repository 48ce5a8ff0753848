"""Binary topology -> member graph via thinning and guaranteed traversal.

Pipeline: Guo-Hall thinning to a 1-px skeleton, boundary-run seeding,
cell partitioning of the void, an exhaustive walk over every skeleton
section that emits nodes (junctions, endpoints, snapped boundary seeds) and
edge polylines, and finally topology-aware merging of nearby nodes where the
surviving host is the node whose re-attached members stay best inside the
solid material.

Determinism: sections are processed in raster order, walks prefer cardinal
neighbors N, E, S, W before diagonals NE, SE, SW, NW, and all ties break
toward the lowest (row, col) or lowest id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import accel
from .errors import ContractError, TraversalError

MERGE_RADIUS = 15.0
MERGE_REFERENCE_DIM = 128
MIN_DIM = 16

# neighbor preference: cardinals first, then diagonals
_STEPS = ((-1, 0), (0, 1), (1, 0), (0, -1), (-1, 1), (1, 1), (1, -1), (-1, -1))
_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class BinaryTopology:
    """Solid mask plus (optionally) the density grid it was thresholded from."""

    solid: np.ndarray
    density: np.ndarray | None = None
    threshold: float | None = None

    def __post_init__(self):
        self.solid = np.ascontiguousarray(self.solid).astype(bool)
        if self.solid.ndim != 2:
            raise ContractError("topology must be a 2D image")
        if min(self.solid.shape) < MIN_DIM:
            raise ContractError(f"topology dimensions must be >= {MIN_DIM}")
        if not self.solid.any():
            raise ContractError("topology has no solid pixels")

    @classmethod
    def from_density(cls, grid: np.ndarray, threshold: float = 0.5
                     ) -> "BinaryTopology":
        grid = np.asarray(grid, dtype=np.float64)
        return cls(solid=grid >= threshold, density=grid, threshold=threshold)

    @property
    def shape(self) -> tuple[int, int]:
        return self.solid.shape


@dataclass
class SkeletonNode:
    id: int
    row: int
    col: int
    kind: str  # boundary-seed | junction | endpoint | merged


@dataclass
class SkeletonEdge:
    id: int
    a: int
    b: int
    polyline: np.ndarray  # (n, 2) int pixels
    path_length: float
    straight_length: float


@dataclass
class SkeletonGraph:
    nodes: list[SkeletonNode] = field(default_factory=list)
    edges: list[SkeletonEdge] = field(default_factory=list)

    def node_by_id(self, node_id: int) -> SkeletonNode:
        return next(n for n in self.nodes if n.id == node_id)

    def degree(self, node_id: int) -> int:
        d = 0
        for e in self.edges:
            d += (e.a == node_id) + (e.b == node_id)
        return d

    def incident_edges(self, node_id: int) -> list[SkeletonEdge]:
        return [e for e in self.edges if node_id in (e.a, e.b)]

    def to_json_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "row": n.row, "col": n.col, "kind": n.kind}
                      for n in self.nodes],
            "edges": [{"a": e.a, "b": e.b,
                       "path_length": e.path_length,
                       "straight_length": e.straight_length,
                       "polyline": e.polyline.tolist()}
                      for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SkeletonGraph":
        nodes = [SkeletonNode(**n) for n in doc["nodes"]]
        edges = [SkeletonEdge(id=i, a=e["a"], b=e["b"],
                              polyline=np.asarray(e["polyline"], dtype=np.int64),
                              path_length=e["path_length"],
                              straight_length=e["straight_length"])
                 for i, e in enumerate(doc["edges"])]
        return cls(nodes=nodes, edges=edges)


def path_length_of(polyline: np.ndarray) -> float:
    """Arc length of a pixel polyline: cardinal steps 1, diagonal sqrt(2).

    Computed from step counts so the value is bitwise invariant under the
    grid isometries used for augmentation.
    """
    if len(polyline) < 2:
        return 0.0
    steps = np.abs(np.diff(np.asarray(polyline, dtype=np.int64), axis=0))
    chebyshev = steps.max(axis=1)
    diag = int(np.sum(steps.min(axis=1) == chebyshev) - np.sum(chebyshev == 0))
    total_steps = int(np.sum(chebyshev))
    cardinal = total_steps - diag
    return float(cardinal) + float(diag) * math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Thinning
# ---------------------------------------------------------------------------


def thin_to_skeleton(topology: BinaryTopology) -> np.ndarray:
    """Guo-Hall thinning: 8-connectivity-preserving 1-px skeleton."""
    if not topology.solid.any():
        raise ContractError("cannot thin an empty topology")
    img = topology.solid.astype(np.uint8)
    while True:
        deleted = 0
        for phase in (0, 1):
            out = img.copy()
            deleted += accel.thin_pass(img, out, phase)
            img = out
        if deleted == 0:
            break
    return img.astype(bool)


# ---------------------------------------------------------------------------
# Boundary seeds
# ---------------------------------------------------------------------------


def seed_boundary_nodes(topology: BinaryTopology) -> list[tuple[int, int]]:
    """One seed per maximal solid run along each domain edge, at its midpoint."""
    solid = topology.solid
    h, w = solid.shape
    seeds: list[tuple[int, int]] = []

    def runs(line):
        out = []
        start = None
        for i, v in enumerate(line):
            if v and start is None:
                start = i
            elif not v and start is not None:
                out.append((start, i - 1))
                start = None
        if start is not None:
            out.append((start, len(line) - 1))
        return out

    for lo, hi in runs(solid[0, :]):
        seeds.append((0, (lo + hi) // 2))
    for lo, hi in runs(solid[h - 1, :]):
        seeds.append((h - 1, (lo + hi) // 2))
    for lo, hi in runs(solid[:, 0]):
        seeds.append(((lo + hi) // 2, 0))
    for lo, hi in runs(solid[:, w - 1]):
        seeds.append(((lo + hi) // 2, w - 1))
    return seeds


# ---------------------------------------------------------------------------
# Cell partition
# ---------------------------------------------------------------------------


def partition_cells(skeleton: np.ndarray,
                    shape: tuple[int, int] | None = None) -> np.ndarray:
    """Label every non-skeleton pixel with a cell id (4-connected regions).

    Cells touching the domain boundary are first-class cells; skeleton
    pixels carry label 0.
    """
    skeleton = np.asarray(skeleton, dtype=bool)
    if shape is not None and skeleton.shape != tuple(shape):
        raise ContractError("skeleton shape does not match the domain")
    labels, _count = ndimage.label(~skeleton, structure=_FOUR)
    return labels


# ---------------------------------------------------------------------------
# Traversal
# ---------------------------------------------------------------------------


def _neighbors(r, c, skeleton):
    h, w = skeleton.shape
    out = []
    for dr, dc in _STEPS:
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w and skeleton[rr, cc]:
            out.append((rr, cc))
    return out


def _snap_seeds(skeleton, seeds, solid):
    """Map each boundary seed to the nearest skeleton pixel of its own blob."""
    comp, _ = ndimage.label(solid, structure=_EIGHT)
    sk_px = np.argwhere(skeleton)
    sk_comp = comp[skeleton]
    snapped = []
    for (sr, sc) in seeds:
        mine = sk_comp == comp[sr, sc]
        if not mine.any():
            continue
        cands = sk_px[mine]
        d2 = (cands[:, 0] - sr) ** 2 + (cands[:, 1] - sc) ** 2
        best = np.lexsort((cands[:, 1], cands[:, 0], d2))[0]
        snapped.append((int(cands[best, 0]), int(cands[best, 1])))
    return snapped


def _cardinal_count(p, skeleton):
    h, w = skeleton.shape
    n = 0
    for dr, dc in _STEPS[:4]:
        rr, cc = p[0] + dr, p[1] + dc
        if 0 <= rr < h and 0 <= cc < w and skeleton[rr, cc]:
            n += 1
    return n


def _cluster_path(start, goal, cluster, skeleton):
    """Deterministic shortest pixel path inside a junction cluster."""
    if start == goal:
        return [start]
    prev = {start: None}
    queue = [start]
    while queue:
        nxt_queue = []
        for p in queue:
            for q in _neighbors(*p, skeleton):
                if q in cluster and q not in prev:
                    prev[q] = p
                    if q == goal:
                        path = [q]
                        while prev[path[-1]] is not None:
                            path.append(prev[path[-1]])
                        return path[::-1]
                    nxt_queue.append(q)
        queue = nxt_queue
    return [start, goal]  # cluster is 8-connected, so this is unreachable


def traverse_sections(skeleton: np.ndarray,
                      seeds: list[tuple[int, int]] | None = None,
                      cells: np.ndarray | None = None,
                      solid: np.ndarray | None = None) -> SkeletonGraph:
    """Walk every skeleton pixel exactly once and emit the raw graph.

    Node pixels are junctions (>= 3 skeleton neighbors; 8-adjacent junction
    pixels cluster into one node anchored at the pixel with the most
    cardinal neighbors), endpoints (<= 1 neighbor), and snapped boundary
    seeds.  Sections (8-connected skeleton components) anchored by a seed
    start there; otherwise the walk starts at the section's first node
    pixel, or, for pure loops, its raster-first pixel, which becomes the
    loop anchor.  Walks prefer unexplored cardinal neighbors over diagonals.
    The `cells` partition is accepted for diagnostics; exhaustiveness is
    enforced directly on pixel counts.
    """
    skeleton = np.asarray(skeleton, dtype=bool)
    if solid is None:
        solid = skeleton
    seeds = seeds or []
    snapped = _snap_seeds(skeleton, seeds, solid) if seeds else []
    seed_set = set(snapped)

    nbr_count = np.zeros(skeleton.shape, dtype=np.int8)
    pad = np.pad(skeleton, 1)
    for dr, dc in _STEPS:
        nbr_count += pad[1 + dr:pad.shape[0] - 1 + dr,
                         1 + dc:pad.shape[1] - 1 + dc]

    junction_mask = skeleton & (nbr_count >= 3)
    clusters, n_clusters = ndimage.label(junction_mask, structure=_EIGHT)
    cluster_pixels: dict[int, list[tuple[int, int]]] = {}
    for p in map(tuple, np.argwhere(junction_mask)):
        cluster_pixels.setdefault(int(clusters[p]), []).append(p)

    sections, n_sections = ndimage.label(skeleton, structure=_EIGHT)
    graph = SkeletonGraph()
    node_at: dict[tuple[int, int], int] = {}
    owned: dict[int, list[tuple[int, int]]] = {}
    visited = np.zeros(skeleton.shape, dtype=bool)

    def new_node(rep, pixels, kind):
        nid = len(graph.nodes)
        graph.nodes.append(SkeletonNode(id=nid, row=int(rep[0]),
                                        col=int(rep[1]), kind=kind))
        owned[nid] = list(pixels)
        for px in pixels:
            node_at[px] = nid
        return nid

    def make_junction_node(p):
        pix = cluster_pixels[int(clusters[p])]
        rep = max(pix, key=lambda q: (_cardinal_count(q, skeleton),
                                      (-q[0], -q[1])))
        kind = "boundary-seed" if any(q in seed_set for q in pix) else "junction"
        return new_node(rep, pix, kind)

    def node_rep(nid):
        n = graph.nodes[nid]
        return (n.row, n.col)

    def add_edge(a, b, poly):
        poly = np.asarray(poly, dtype=np.int64)
        graph.edges.append(SkeletonEdge(
            id=len(graph.edges), a=a, b=b, polyline=poly,
            path_length=path_length_of(poly),
            straight_length=float(math.hypot(float(poly[-1][0] - poly[0][0]),
                                             float(poly[-1][1] - poly[0][1])))))

    for label in range(1, n_sections + 1):
        pixels = [tuple(p) for p in np.argwhere(sections == label)]
        pixel_set = set(pixels)
        sec_seeds = [p for p in snapped if p in pixel_set]

        for p in pixels:  # raster order fixes node numbering
            if p in node_at:
                continue
            if junction_mask[p]:
                make_junction_node(p)
            elif nbr_count[p] <= 1 or p in seed_set:
                kind = "boundary-seed" if p in seed_set else "endpoint"
                new_node(p, [p], kind)

        if sec_seeds:
            start_nid = node_at[sec_seeds[0]]
        else:
            sec_nodes = [node_at[p] for p in pixels if p in node_at]
            if sec_nodes:
                start_nid = sec_nodes[0]
            else:
                start_nid = new_node(pixels[0], [pixels[0]], "junction")

        explored = 0

        def touch(nid):
            nonlocal explored
            for px in owned[nid]:
                if not visited[px]:
                    visited[px] = True
                    explored += 1

        touch(start_nid)
        stack = [start_nid]
        while stack:
            nid = stack.pop()
            for p in owned[nid]:
                while True:
                    nxt = None
                    for q in _neighbors(*p, skeleton):
                        if not visited[q]:
                            nxt = q
                            break
                    if nxt is None:
                        break
                    poly = list(_cluster_path(node_rep(nid), p,
                                              set(owned[nid]), skeleton))
                    poly.append(nxt)
                    visited[nxt] = True
                    explored += 1
                    cur = nxt
                    while cur not in node_at:
                        step = None
                        for q in _neighbors(*cur, skeleton):
                            if not visited[q]:
                                step = q
                                break
                        if step is None:
                            # dead end: close onto an adjacent node pixel
                            # (loop closure), else emit a fresh endpoint
                            closer = None
                            prev = tuple(poly[-2])
                            for q in _neighbors(*cur, skeleton):
                                if q != prev and q in node_at:
                                    closer = q
                                    break
                            if closer is not None:
                                poly.append(closer)
                                cur = closer
                            else:
                                new_node(cur, [cur], "endpoint")
                            break
                        poly.append(step)
                        visited[step] = True
                        explored += 1
                        cur = step
                    other = node_at[cur]
                    touch(other)
                    if cur != node_rep(other):
                        poly.extend(_cluster_path(cur, node_rep(other),
                                                  set(owned[other]),
                                                  skeleton)[1:])
                    add_edge(nid, other, poly)
                    if other != nid:
                        stack.append(other)
        if explored != len(pixels):
            raise TraversalError(
                f"section {label} has {len(pixels)} pixels but only "
                f"{explored} were reachable; thinning left an inconsistency"
            )
    return graph


# ---------------------------------------------------------------------------
# Solid-fraction metric and node merging
# ---------------------------------------------------------------------------


def line_solid_fraction(topology: BinaryTopology, p_a: tuple[int, int],
                        p_b: tuple[int, int]) -> float:
    """Fraction of the rasterized segment p_a -> p_b lying on solid pixels."""
    h, w = topology.shape
    for (r, c) in (p_a, p_b):
        if not (0 <= r < h and 0 <= c < w):
            raise ContractError(f"point ({r}, {c}) lies outside the domain")
    px = accel.line_pixels(int(p_a[0]), int(p_a[1]), int(p_b[0]), int(p_b[1]))
    return float(topology.solid[px[:, 0], px[:, 1]].mean())


def merge_nearby_nodes(graph: SkeletonGraph, topology: BinaryTopology,
                       radius: float = MERGE_RADIUS) -> SkeletonGraph:
    """Collapse node pairs closer than `radius` px (Euclidean).

    The host of a merge is the candidate that maximizes the minimum
    line-solid-fraction over all members it would take over; the incoming
    node's edges re-attach to the host with a straight connector appended to
    their polylines, and direct host-incoming links are dropped.
    """
    nodes = {n.id: SkeletonNode(n.id, n.row, n.col, n.kind) for n in graph.nodes}
    edges = {e.id: SkeletonEdge(e.id, e.a, e.b, e.polyline.copy(),
                                e.path_length, e.straight_length)
             for e in graph.edges}

    def closest_pair():
        best = None
        ids = sorted(nodes)
        for i, a in enumerate(ids):
            na = nodes[a]
            for b in ids[i + 1:]:
                nb = nodes[b]
                d = math.hypot(na.row - nb.row, na.col - nb.col)
                if d <= radius and (best is None or d < best[0]):
                    best = (d, a, b)
        return best

    def attach_metric(host_id, incoming_id):
        host = nodes[host_id]
        worst = 1.0
        for e in edges.values():
            if incoming_id not in (e.a, e.b):
                continue
            others = [x for x in (e.a, e.b) if x != incoming_id]
            if not others or others[0] == host_id:
                continue  # internal link or self loop
            other = nodes[others[0]]
            frac = line_solid_fraction(topology, (host.row, host.col),
                                       (other.row, other.col))
            worst = min(worst, frac)
        return worst

    while True:
        pair = closest_pair()
        if pair is None:
            break
        _, a, b = pair
        ma, mb = attach_metric(a, b), attach_metric(b, a)
        host_id, in_id = (a, b) if ma >= mb else (b, a)
        host = nodes[host_id]
        for eid in list(edges):
            e = edges[eid]
            if in_id not in (e.a, e.b):
                continue
            if {e.a, e.b} == {host_id, in_id}:
                del edges[eid]  # internal link between the merged pair
                continue
            # re-attach: extend the polyline ends that sat on the incoming
            # node with a straight connector to the host
            poly = e.polyline
            in_pos = (nodes[in_id].row, nodes[in_id].col)
            host_pos = (host.row, host.col)
            connector = accel.line_pixels(*in_pos, *host_pos)
            if e.a == in_id:
                poly = np.vstack([connector[::-1], poly[1:]]) \
                    if tuple(poly[0]) == in_pos else np.vstack(
                        [connector[::-1], poly])
                e.a = host_id
            if e.b == in_id:
                poly = np.vstack([poly[:-1], connector]) \
                    if tuple(poly[-1]) == in_pos else np.vstack(
                        [poly, connector])
                e.b = host_id
            e.polyline = poly
            e.path_length = path_length_of(poly)
            pa, pb = nodes[e.a], nodes[e.b]
            e.straight_length = float(math.hypot(pa.row - pb.row,
                                                 pa.col - pb.col))
        del nodes[in_id]
        host.kind = "merged"

    out = SkeletonGraph()
    id_map = {}
    for old_id in sorted(nodes):
        n = nodes[old_id]
        id_map[old_id] = len(out.nodes)
        out.nodes.append(SkeletonNode(len(out.nodes), n.row, n.col, n.kind))
    for eid in sorted(edges):
        e = edges[eid]
        out.edges.append(SkeletonEdge(len(out.edges), id_map[e.a], id_map[e.b],
                                      e.polyline, e.path_length,
                                      e.straight_length))
    return out


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def merge_radius_for(shape: tuple[int, int]) -> float:
    """15 px at 128-px resolution, scaled by the larger image dimension."""
    return float(round(MERGE_RADIUS * max(shape) / MERGE_REFERENCE_DIM))


def extract_graph(topology: BinaryTopology) -> SkeletonGraph:
    """thin -> seed -> partition -> traverse -> merge."""
    skeleton = thin_to_skeleton(topology)
    seeds = seed_boundary_nodes(topology)
    cells = partition_cells(skeleton)
    raw = traverse_sections(skeleton, seeds, cells, solid=topology.solid)
    return merge_nearby_nodes(raw, topology, radius=merge_radius_for(
        topology.shape))


def is_connected(graph: SkeletonGraph) -> bool:
    """True iff one undirected component spans every node."""
    if not graph.nodes:
        raise ContractError("connectivity of an empty graph is undefined")
    adj: dict[int, set[int]] = {n.id: set() for n in graph.nodes}
    for e in graph.edges:
        adj[e.a].add(e.b)
        adj[e.b].add(e.a)
    start = graph.nodes[0].id
    seen = {start}
    stack = [start]
    while stack:
        for q in adj[stack.pop()]:
            if q not in seen:
                seen.add(q)
                stack.append(q)
    return len(seen) == len(graph.nodes)
