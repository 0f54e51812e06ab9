"""Conforming triangular meshes over a :class:`~cpwloss.geometry.RegionMap`.

The constrained Delaunay step is delegated to Shewchuk's Triangle; grading
toward conductor corners and thin layers is imposed by a size field and a
few passes of area-constrained re-refinement.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import shapely
import triangle
from shapely.geometry import LineString
from shapely.ops import unary_union

from .errors import MeshError, PreconditionError
from .geometry import LAYER_TAGS, RegionMap, Tag


class Boundary(enum.IntEnum):
    NONE = 0
    CONDUCTOR_TRACE = 1
    CONDUCTOR_GROUND = 2
    OUTER = 3


_MARK_TRACE, _MARK_GROUND, _MARK_OUTER = 1, 2, 3


@dataclass(frozen=True)
class RefinementPolicy:
    """Element-size controls (lengths in µm).

    ``h_edge`` is the size at conductor and trench corners; sizes grow
    linearly away from them with slope ``grading - 1`` up to ``h_max``.
    """

    h_max: float = 20.0
    h_edge: float = 0.02
    grading: float = 1.25
    layer_elements: int = 2
    min_angle: float = 20.0

    def __post_init__(self):
        if not 0 < self.h_edge <= self.h_max:
            raise PreconditionError(f"need 0 < h_edge <= h_max (h_edge={self.h_edge}, h_max={self.h_max})")
        if not 1.0 < self.grading <= 2.0:
            raise PreconditionError(f"grading must lie in (1, 2], got {self.grading}")
        if self.layer_elements < 2:
            raise PreconditionError("layer_elements must be >= 2")

    def scaled(self, s):
        from dataclasses import replace
        return replace(self, h_max=self.h_max * s, h_edge=self.h_edge * s)


@dataclass
class Mesh:
    """Linear triangle mesh.

    ``tags`` holds the :class:`Tag` of every triangle, ``region_index`` the
    index of the RegionMap polygon it came from (``-1`` if unknown).
    ``boundary_edges`` are node pairs with a :class:`Boundary` tag in
    ``boundary_tags``; for zero-thickness conductors these edges are
    interior to the triangulation.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    region_index: Optional[np.ndarray] = None
    outer: str = "grounded"
    region_map: Optional[RegionMap] = field(default=None, repr=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.tags = np.asarray(self.tags, dtype=np.int64)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = np.asarray(self.boundary_tags, dtype=np.int64)
        if self.region_index is None:
            self.region_index = np.full(len(self.triangles), -1, dtype=np.int64)
        self._edges = None

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    def edge_lengths(self):
        """(M, 3) lengths of edges opposite to local nodes 0, 1, 2."""
        p = self.nodes[self.triangles]
        return np.stack([np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                         np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
                         np.linalg.norm(p[:, 1] - p[:, 0], axis=1)], axis=1)

    def min_angles(self):
        """Smallest interior angle of every triangle, in degrees."""
        L = self.edge_lengths()
        a, b, c = L[:, 0], L[:, 1], L[:, 2]
        angs = []
        for opp, s1, s2 in ((a, b, c), (b, c, a), (c, a, b)):
            cosv = np.clip((s1 ** 2 + s2 ** 2 - opp ** 2) / (2 * s1 * s2), -1.0, 1.0)
            angs.append(np.degrees(np.arccos(cosv)))
        return np.min(angs, axis=0)

    def edges(self):
        """Unique edges and the (up to two) triangles on each side.

        Returns ``(edges, owners)`` where ``edges`` is (E, 2) with sorted node
        pairs and ``owners`` is (E, 2) with ``-1`` marking a missing side.
        """
        if self._edges is None:
            t = self.triangles
            all_e = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
            tri_id = np.tile(np.arange(len(t)), 3)
            all_e.sort(axis=1)
            key = all_e[:, 0] * (self.n_nodes + 1) + all_e[:, 1]
            order = np.argsort(key, kind="stable")
            key_s = key[order]
            uniq, start, counts = np.unique(key_s, return_index=True, return_counts=True)
            if np.any(counts > 2):
                raise MeshError(f"non-conforming mesh: {int(np.sum(counts > 2))} edges shared by >2 triangles")
            edges = all_e[order[start]]
            owners = np.full((len(uniq), 2), -1, dtype=np.int64)
            owners[:, 0] = tri_id[order[start]]
            two = counts == 2
            owners[two, 1] = tri_id[order[start[two] + 1]]
            self._edges = (edges, owners)
        return self._edges

    def audit(self):
        """Raise :class:`MeshError` unless the mesh is valid and conforming."""
        if np.any(self.signed_areas() <= 0):
            raise MeshError("mesh has non-positive triangle areas")
        edges, owners = self.edges()
        single = edges[owners[:, 1] < 0]
        outer_keys = set(map(tuple, np.sort(self.boundary_edges[self.boundary_tags == Boundary.OUTER], axis=1)))
        missing = outer_keys - set(map(tuple, single))
        if missing:
            raise MeshError(f"{len(missing)} outer boundary edges are not single-owner edges")
        # every edge on the domain boundary belongs to exactly one triangle; a
        # single-owner edge elsewhere would be a hanging node
        if self.region_map is not None:
            x0, y0, x1, y1 = self.region_map.domain.bounds
            p = self.nodes[single]
            tol = 1e-9 * max(x1 - x0, y1 - y0)
            on = ((np.abs(p[..., 0] - x0) < tol) | (np.abs(p[..., 0] - x1) < tol)).all(axis=1) | \
                 ((np.abs(p[..., 1] - y0) < tol) | (np.abs(p[..., 1] - y1) < tol)).all(axis=1)
            if not np.all(on):
                raise MeshError(f"{int(np.sum(~on))} single-owner edges inside the domain (hanging nodes)")
        return True

    def copy_with(self, **changes):
        kw = dict(nodes=self.nodes, triangles=self.triangles, tags=self.tags,
                  boundary_edges=self.boundary_edges, boundary_tags=self.boundary_tags,
                  region_index=self.region_index, outer=self.outer, region_map=self.region_map)
        kw.update(changes)
        return Mesh(**kw)


# --------------------------------------------------------------------------
# size field


class _SizeField:
    def __init__(self, regions: RegionMap, policy: RefinementPolicy):
        self.policy = policy
        self.corners = np.asarray(regions.corners, dtype=float).reshape(-1, 2)
        self.slope = policy.grading - 1.0
        self.layer_geom = None
        self.h_layer = None
        if regions.has_layers():
            t = regions.layer_thickness
            self.h_layer = t / policy.layer_elements
            self.layer_geom = unary_union([r.polygon for r in regions.regions if r.tag in LAYER_TAGS])
            shapely.prepare(self.layer_geom)

    def __call__(self, xy):
        xy = np.atleast_2d(xy)
        p = self.policy
        h = np.full(len(xy), p.h_max)
        if len(self.corners):
            # chunk to bound memory on big meshes
            dmin = np.empty(len(xy))
            for i in range(0, len(xy), 20000):
                blk = xy[i:i + 20000]
                dmin[i:i + 20000] = np.min(
                    np.linalg.norm(blk[:, None, :] - self.corners[None, :, :], axis=2), axis=1)
            h = np.minimum(h, p.h_edge + self.slope * dmin)
        if self.layer_geom is not None:
            dl = shapely.distance(shapely.points(xy), self.layer_geom)
            h = np.minimum(h, self.h_layer + self.slope * dl)
        return h


def _subdivide(a, b, size):
    """Points strictly between ``a`` and ``b`` spaced by the size field."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = np.linalg.norm(b - a)
    # sample the size field along the segment and integrate 1/h
    n_s = int(min(4000, max(8, 4 * length / max(size.policy.h_edge, 1e-12))))
    s = np.linspace(0.0, 1.0, n_s)
    h = size(a[None, :] + s[:, None] * (b - a)[None, :])
    dens = length / h
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s))])
    n_el = max(1, int(math.ceil(cum[-1] - 1e-9)))
    if n_el == 1:
        return np.zeros((0, 2))
    targets = np.linspace(0.0, cum[-1], n_el + 1)[1:-1]
    si = np.interp(targets, cum, s)
    return a[None, :] + si[:, None] * (b - a)[None, :]


def _pslg(regions: RegionMap, size):
    lines = []
    for r in regions.regions:
        for ring in [r.polygon.exterior, *r.polygon.interiors]:
            lines.append(LineString(ring.coords))
    for line, _ in regions.conductor_lines:
        lines.append(line)
    lines.append(LineString(regions.domain.exterior.coords))
    noded = unary_union(lines)
    segs = []
    for g in getattr(noded, "geoms", [noded]):
        c = np.asarray(g.coords)
        segs.extend(zip(c[:-1], c[1:]))

    x0, y0, x1, y1 = regions.domain.bounds
    tol = 1e-9 * max(x1 - x0, y1 - y0)
    cond = [(line, name) for line, name in regions.conductor_lines]

    verts = {}
    out_v, out_s, out_m = [], [], []

    def vid(p):
        k = (round(p[0] / 1e-9), round(p[1] / 1e-9))
        if k not in verts:
            verts[k] = len(out_v)
            out_v.append((float(p[0]), float(p[1])))
        return verts[k]

    for a, b in segs:
        if np.linalg.norm(b - a) < 1e-12:
            continue
        mid = 0.5 * (a + b)
        mark = 0
        for line, name in cond:
            if line.distance(shapely.Point(mid)) < tol and line.distance(shapely.Point(a)) < tol \
                    and line.distance(shapely.Point(b)) < tol:
                mark = _MARK_TRACE if name == "trace" else _MARK_GROUND
                break
        if mark == 0:
            if (abs(a[0] - b[0]) < tol and (abs(a[0] - x0) < tol or abs(a[0] - x1) < tol)) or \
                    (abs(a[1] - b[1]) < tol and (abs(a[1] - y0) < tol or abs(a[1] - y1) < tol)):
                mark = _MARK_OUTER
        pts = [a, *_subdivide(a, b, size), b]
        ids = [vid(p) for p in pts]
        for i, j in zip(ids[:-1], ids[1:]):
            if i != j:
                out_s.append((i, j))
                out_m.append(mark)
    return np.asarray(out_v), np.asarray(out_s, dtype=np.int32), np.asarray(out_m, dtype=np.int32)


def _check_slivers(regions: RegionMap, policy):
    floor = 1e-6 * policy.h_edge
    for i, r in enumerate(regions.regions):
        if r.polygon.area <= 0:
            raise MeshError(f"region {i} ({r.tag.name} '{r.name}') has zero area")
        # inscribed-width proxy: 2 * area / perimeter
        if 2.0 * r.polygon.area / r.polygon.length < floor:
            raise MeshError(f"region {i} ({r.tag.name} '{r.name}') is a sliver below mesh tolerance")


def generate_mesh(regions: RegionMap, policy: RefinementPolicy = RefinementPolicy(),
                  max_passes: int = 40) -> Mesh:
    """Triangulate ``regions`` honouring the size field of ``policy``."""
    _check_slivers(regions, policy)
    size = _SizeField(regions, policy)
    verts, segs, marks = _pslg(regions, size)
    seeds = []
    for i, r in enumerate(regions.regions):
        p = r.polygon.representative_point()
        seeds.append([p.x, p.y, float(i), 0.0])
    data = dict(vertices=verts, segments=segs, segment_markers=marks.reshape(-1, 1),
                regions=np.asarray(seeds))
    q = f"q{policy.min_angle:g}"
    try:
        tri = triangle.triangulate(data, f"p{q}AQ")
    except Exception as exc:  # Triangle reports failures as generic errors
        raise MeshError(f"triangulation failed: {exc}") from exc

    for _ in range(max_passes):
        pts = tri["vertices"]
        t = tri["triangles"]
        hv = size(pts)
        htri = hv[t].min(axis=1)
        p = pts[t]
        emax = np.max(np.stack([np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                                np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                                np.linalg.norm(p[:, 0] - p[:, 2], axis=1)]), axis=0)
        bad = emax > htri * (1 + 1e-9)
        if not np.any(bad):
            break
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        target = np.where(bad, np.minimum(0.35 * htri ** 2, 0.5 * area), -1.0)
        tri["triangle_max_area"] = target
        tri["segment_markers"] = tri["segment_markers"].reshape(-1, 1)
        tri = triangle.triangulate(tri, f"rp{q}aAQ")
    else:
        raise MeshError("mesh refinement did not meet the size field")

    return _assemble(tri, regions)


def _assemble(tri, regions: RegionMap) -> Mesh:
    nodes = tri["vertices"]
    tris = tri["triangles"].astype(np.int64)
    attr = tri["triangle_attributes"].ravel().round().astype(np.int64)
    tags = np.array([int(regions.regions[i].tag) for i in attr], dtype=np.int64)
    # orient counter-clockwise
    p = nodes[tris]
    sa = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = sa < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    mesh = Mesh(nodes=nodes, triangles=tris, tags=tags, boundary_edges=np.zeros((0, 2)),
                boundary_tags=np.zeros(0), region_index=attr, outer=regions.outer, region_map=regions)
    be, bt = _boundary_edges(mesh, tri["segments"], tri["segment_markers"].ravel())
    mesh.boundary_edges, mesh.boundary_tags = be, bt
    return mesh


def _boundary_edges(mesh: Mesh, segments, markers):
    regions = mesh.region_map
    out_e, out_t = [], []
    seg = np.sort(np.asarray(segments, dtype=np.int64), axis=1)
    for m, tag in ((_MARK_TRACE, Boundary.CONDUCTOR_TRACE), (_MARK_GROUND, Boundary.CONDUCTOR_GROUND),
                   (_MARK_OUTER, Boundary.OUTER)):
        sel = seg[markers == m]
        out_e.append(sel)
        out_t.append(np.full(len(sel), int(tag)))
    edges, owners = mesh.edges()
    is_metal = mesh.tags == Tag.METAL
    a, b = owners[:, 0], owners[:, 1]
    both = b >= 0
    ma = np.zeros(len(edges), dtype=bool)
    mb = np.zeros(len(edges), dtype=bool)
    ma[:] = is_metal[a]
    mb[both] = is_metal[b[both]]
    iface = both & (ma ^ mb)
    metal_side = np.where(ma, a, b)[iface]
    cond = np.array([regions.regions[i].conductor for i in mesh.region_index[metal_side]])
    tag = np.where(cond == "trace", int(Boundary.CONDUCTOR_TRACE), int(Boundary.CONDUCTOR_GROUND))
    out_e.append(edges[iface])
    out_t.append(tag)
    be = np.concatenate(out_e) if out_e else np.zeros((0, 2), dtype=np.int64)
    bt = np.concatenate(out_t) if out_t else np.zeros(0, dtype=np.int64)
    # drop outer edges that are also conductor edges (open parallel plates)
    keys = be[:, 0] * (mesh.n_nodes + 1) + be[:, 1]
    cond_keys = set(keys[bt != Boundary.OUTER].tolist())
    keep = np.array([bt[i] != Boundary.OUTER or keys[i] not in cond_keys for i in range(len(bt))], dtype=bool)
    return be[keep], bt[keep]


# --------------------------------------------------------------------------
# refinement


def uniform_refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four similar children (nested refinement)."""
    edges, _ = mesh.edges()
    n = mesh.n_nodes
    key = edges[:, 0] * (n + 1) + edges[:, 1]
    order = np.argsort(key)
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    nodes = np.vstack([mesh.nodes, mids])

    def mid_of(i, j):
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        k = lo * (n + 1) + hi
        pos = np.searchsorted(key[order], k)
        return n + order[pos]

    t = mesh.triangles
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    ab, bc, ca = mid_of(a, b), mid_of(b, c), mid_of(c, a)
    tris = np.concatenate([np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1),
                           np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)])
    rep = lambda arr: np.concatenate([arr] * 4)
    be = mesh.boundary_edges
    m = mid_of(be[:, 0], be[:, 1]) if len(be) else np.zeros(0, dtype=np.int64)
    new_be = np.concatenate([np.stack([be[:, 0], m], 1), np.stack([m, be[:, 1]], 1)])
    new_bt = np.concatenate([mesh.boundary_tags, mesh.boundary_tags])
    return mesh.copy_with(nodes=nodes, triangles=tris, tags=rep(mesh.tags), boundary_edges=new_be,
                          boundary_tags=new_bt, region_index=rep(mesh.region_index))


def refine_mesh(mesh: Mesh, error_indicator, fraction: float) -> Mesh:
    """Longest-edge (Rivara) bisection of the top ``fraction`` of triangles.

    Triangles are ranked by ``error_indicator``; ties go to the lowest
    triangle index.  Neighbours are bisected as needed to keep the mesh
    conforming.
    """
    ind = np.asarray(error_indicator, dtype=float)
    if ind.shape != (mesh.n_triangles,):
        raise PreconditionError(f"indicator length {ind.size} != triangle count {mesh.n_triangles}")
    if not 0 < fraction <= 1:
        raise PreconditionError(f"fraction must lie in (0, 1], got {fraction}")
    k = int(math.ceil(fraction * mesh.n_triangles - 1e-9))
    marked = np.argsort(-ind, kind="stable")[:k]

    nodes = [tuple(p) for p in mesh.nodes]
    tris = [list(t) for t in mesh.triangles]
    tags = list(mesh.tags)
    rid = list(mesh.region_index)
    alive = [True] * len(tris)
    emap = {}
    for i, t in enumerate(tris):
        for j in range(3):
            e = (min(t[j], t[(j + 1) % 3]), max(t[j], t[(j + 1) % 3]))
            emap.setdefault(e, []).append(i)
    bmap = {(min(a, b), max(a, b)): int(tg) for (a, b), tg in zip(mesh.boundary_edges, mesh.boundary_tags)}
    midpoint = {}

    def edge_key(e):
        (x0, y0), (x1, y1) = nodes[e[0]], nodes[e[1]]
        return ((x1 - x0) ** 2 + (y1 - y0) ** 2, -e[0], -e[1])

    def longest(ti):
        t = tris[ti]
        es = [(min(t[j], t[(j + 1) % 3]), max(t[j], t[(j + 1) % 3])) for j in range(3)]
        return max(es, key=edge_key)

    def split(ti, e, m):
        t = tris[ti]
        j = next(j for j in range(3) if {t[j], t[(j + 1) % 3]} == set(e))
        a, b, c = t[j], t[(j + 1) % 3], t[(j + 2) % 3]
        alive[ti] = False
        for old in ((a, b), (b, c), (c, a)):
            emap[(min(old), max(old))].remove(ti)
        for child in ((a, m, c), (m, b, c)):
            idx = len(tris)
            tris.append(list(child))
            tags.append(tags[ti])
            rid.append(rid[ti])
            alive.append(True)
            for j2 in range(3):
                ee = (min(child[j2], child[(j2 + 1) % 3]), max(child[j2], child[(j2 + 1) % 3]))
                emap.setdefault(ee, []).append(idx)

    def bisect(ti):
        while alive[ti]:
            e = longest(ti)
            nbr = [x for x in emap[e] if x != ti]
            if nbr and longest(nbr[0]) != e:
                bisect(nbr[0])
                continue
            if e in midpoint:
                m = midpoint[e]
            else:
                (x0, y0), (x1, y1) = nodes[e[0]], nodes[e[1]]
                nodes.append((0.5 * (x0 + x1), 0.5 * (y0 + y1)))
                m = midpoint[e] = len(nodes) - 1
            if e in bmap:
                tg = bmap.pop(e)
                bmap[(min(e[0], m), max(e[0], m))] = tg
                bmap[(min(e[1], m), max(e[1], m))] = tg
            for x in [ti, *nbr]:
                split(x, e, m)

    for ti in marked:
        bisect(int(ti))

    keep = np.flatnonzero(alive)
    be = np.array(list(bmap.keys()), dtype=np.int64).reshape(-1, 2)
    bt = np.array(list(bmap.values()), dtype=np.int64)
    return mesh.copy_with(nodes=np.asarray(nodes), triangles=np.asarray(tris)[keep],
                          tags=np.asarray(tags)[keep], region_index=np.asarray(rid)[keep],
                          boundary_edges=be, boundary_tags=bt)


# --------------------------------------------------------------------------
# plain-text export


def write_mesh(mesh: Mesh, fh, node_values=None, tri_values=None):
    """Write the mesh as a plain-text table.

    Layout::

        # cpwloss-mesh 1
        nodes <N> [value-columns]
        <i> <x> <y> [values...]
        triangles <M> [value-columns]
        <i> <n0> <n1> <n2> <TAG> [values...]
        boundary_edges <K>
        <n0> <n1> <BOUNDARY_TAG>

    ``node_values`` / ``tri_values`` are optional ``{column: array}`` maps
    appended as extra columns (used for field dumps).
    """
    node_values = node_values or {}
    tri_values = tri_values or {}
    fh.write("# cpwloss-mesh 1\n")
    fh.write(" ".join(["nodes", str(mesh.n_nodes), *node_values]) + "\n")
    ncols = [np.asarray(v) for v in node_values.values()]
    for i, (x, y) in enumerate(mesh.nodes):
        extra = "".join(f" {c[i]:.12g}" for c in ncols)
        fh.write(f"{i} {x:.12g} {y:.12g}{extra}\n")
    fh.write(" ".join(["triangles", str(mesh.n_triangles), *tri_values]) + "\n")
    tcols = [np.asarray(v) for v in tri_values.values()]
    for i, (t, tag) in enumerate(zip(mesh.triangles, mesh.tags)):
        extra = "".join(f" {c[i]:.12g}" for c in tcols)
        fh.write(f"{i} {t[0]} {t[1]} {t[2]} {Tag(tag).name}{extra}\n")
    fh.write(f"boundary_edges {len(mesh.boundary_edges)}\n")
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        fh.write(f"{a} {b} {Boundary(tag).name}\n")


def read_mesh(fh) -> Mesh:
    """Inverse of :func:`write_mesh` (extra value columns are ignored)."""
    lines = iter(l for l in fh if l.strip() and not l.startswith("#"))
    head = next(lines).split()
    n = int(head[1])
    nodes = np.array([[float(v) for v in next(lines).split()[1:3]] for _ in range(n)])
    head = next(lines).split()
    m = int(head[1])
    tris, tags = [], []
    for _ in range(m):
        parts = next(lines).split()
        tris.append([int(v) for v in parts[1:4]])
        tags.append(int(Tag[parts[4]]))
    head = next(lines).split()
    k = int(head[1])
    be, bt = [], []
    for _ in range(k):
        a, b, tag = next(lines).split()
        be.append((int(a), int(b)))
        bt.append(int(Boundary[tag]))
    return Mesh(nodes=nodes, triangles=tris, tags=tags, boundary_edges=be, boundary_tags=bt)
