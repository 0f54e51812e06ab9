"""Linear finite-element electrostatics on triangle meshes.

Potentials are in volts and lengths in µm, so per-element fields come out
in V/µm.  Because ``|E|^2 dA`` is then dimensionless (V^2), energies per
unit length only need the factor ``epsilon_0`` to land in J/m.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.constants import epsilon_0
from scipy.sparse.csgraph import connected_components

from .errors import PreconditionError, SolverError
from .geometry import Tag
from .mesh import Boundary, Mesh

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


@dataclass
class FieldSolution:
    mesh: Mesh = field(repr=False)
    potentials: np.ndarray = field(repr=False)
    e_field: np.ndarray = field(repr=False)
    eps_r: np.ndarray = field(repr=False)
    element_energy: np.ndarray = field(repr=False)
    energy_by_region: dict
    u_total: float
    capacitance: float
    voltage: float = 1.0
    residual: float = 0.0


def _gradients(mesh: Mesh):
    """Per-triangle gradients of the three barycentric shape functions."""
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / area2[:, None]
    by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / area2[:, None]
    return bx, by, 0.5 * area2


def dirichlet_values(mesh: Mesh, voltage=1.0, outer_potential=None, driven=False):
    """Node mask and values fixed by conductors and the outer boundary.

    The outer boundary is grounded, left free ("open" meshes), or set from
    ``outer_potential(xy)`` when that callable is given.  ``driven`` marks
    sub-domain solves, where a single conductor suffices.
    """
    fixed = np.zeros(mesh.n_nodes, dtype=bool)
    value = np.zeros(mesh.n_nodes)
    tags = mesh.boundary_tags
    trace = np.unique(mesh.boundary_edges[tags == Boundary.CONDUCTOR_TRACE])
    ground = np.unique(mesh.boundary_edges[tags == Boundary.CONDUCTOR_GROUND])
    if driven or outer_potential is not None:
        if len(trace) == 0 and len(ground) == 0 and outer_potential is None:
            raise SolverError("flux-driven solve needs at least one conductor")
    elif len(trace) == 0 or len(ground) == 0:
        raise SolverError("mesh lacks a CONDUCTOR_TRACE or CONDUCTOR_GROUND boundary")
    outer = np.unique(mesh.boundary_edges[tags == Boundary.OUTER])
    if outer_potential is not None:
        fixed[outer] = True
        value[outer] = outer_potential(mesh.nodes[outer])
    elif mesh.outer == "grounded" and not driven:
        fixed[outer] = True
    fixed[ground] = True
    value[ground] = 0.0
    # metal interiors take the potential of the conductor they belong to
    metal = np.flatnonzero(mesh.tags == Tag.METAL)
    if len(metal):
        t = mesh.triangles[metal]
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        g = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()
        _, label = connected_components(g, directed=False)
        metal_nodes = np.unique(t)
        trace_labels = set(label[np.intersect1d(trace, metal_nodes)].tolist())
        in_trace = np.isin(label[metal_nodes], list(trace_labels))
        fixed[metal_nodes] = True
        value[metal_nodes[in_trace]] = voltage
        value[metal_nodes[~in_trace]] = 0.0
    fixed[trace] = True
    value[trace] = voltage
    if np.any(np.isin(trace, ground)):
        raise SolverError("trace and ground conductors touch")
    return fixed, value


def assemble(mesh: Mesh, eps_r):
    """Global stiffness matrix ``K_ij = sum_e eps_e A_e grad(phi_i).grad(phi_j)``."""
    bx, by, area = _gradients(mesh)
    ke = (bx[:, :, None] * bx[:, None, :] + by[:, :, None] * by[:, None, :]) * (eps_r * area)[:, None, None]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsc()


def _spd_solve(A, b):
    """Factor a symmetric matrix without pivoting, rejecting non-SPD input.

    SuperLU in symmetric mode with a zero pivot threshold performs an
    LDL^T-like elimination on a symmetric ordering, so every pivot is
    positive exactly when ``A`` is positive definite.
    """
    asym = abs(A - A.T).max() if A.nnz else 0.0
    if asym > 1e-12 * abs(A).max():
        raise SolverError(f"system matrix is not symmetric (max asymmetry {asym:.3g})")
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise SolverError(f"factorization failed (singular system): {exc}") from exc
    piv = lu.U.diagonal()
    if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
        raise SolverError("system matrix is not positive definite")
    x = lu.solve(b)
    bn = np.linalg.norm(b) or 1.0
    res = np.linalg.norm(A @ x - b) / bn
    for _ in range(3):
        if res <= RESIDUAL_TOL:
            break
        x += lu.solve(b - A @ x)
        res = np.linalg.norm(A @ x - b) / bn
    if res > RESIDUAL_TOL:
        raise SolverError(f"linear solve did not converge: relative residual {res:.3e}")
    return x, res


def _outer_edge_geometry(mesh: Mesh):
    """OUTER edges with their midpoints, lengths and outward unit normals."""
    sel = mesh.boundary_tags == Boundary.OUTER
    e = mesh.boundary_edges[sel]
    a, b = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    d = b - a
    L = np.linalg.norm(d, axis=1)
    n = np.stack([d[:, 1], -d[:, 0]], axis=1) / L[:, None]
    mid = 0.5 * (a + b)
    # orient away from the domain centre; outer boundaries are boxes
    centre = 0.5 * (mesh.nodes.min(axis=0) + mesh.nodes.max(axis=0))
    flip = np.sum((mid - centre) * n, axis=1) < 0
    n[flip] *= -1
    return e, mid, L, n


def solve_electrostatic(mesh: Mesh, permittivity_of, voltage=1.0, outer_potential=None,
                        outer_flux=None) -> FieldSolution:
    """Solve div(eps grad V) = 0 with V = ``voltage`` on the trace, 0 on ground.

    ``permittivity_of`` maps region tags (``Tag`` or their names) to
    relative permittivities; METAL needs no entry.  ``outer_potential``
    optionally prescribes the outer-boundary potential and ``outer_flux``
    the outward ``eps_r * dV/dn`` on it (``outer_flux(midpoints, normals)``);
    both serve sub-domain solves driven by a coarser solution.
    """
    if outer_potential is not None and outer_flux is not None:
        raise PreconditionError("give at most one of outer_potential and outer_flux")
    perm = {Tag[k] if isinstance(k, str) else Tag(k): float(v) for k, v in permittivity_of.items()}
    present = {Tag(t) for t in np.unique(mesh.tags)} - {Tag.METAL}
    missing = present - set(perm)
    if missing:
        raise PreconditionError(f"no permittivity for regions {sorted(t.name for t in missing)}")
    eps_r = np.zeros(mesh.n_triangles)
    for tag, val in perm.items():
        eps_r[mesh.tags == tag] = val
    eps_r[mesh.tags == Tag.METAL] = 0.0

    fixed, value = dirichlet_values(mesh, voltage, outer_potential, driven=outer_flux is not None)
    free = ~fixed
    if not np.any(free):
        raise SolverError("no free nodes")
    K = assemble(mesh, eps_r)
    Kff = K[free][:, free].tocsc()
    load = np.zeros(mesh.n_nodes)
    if outer_flux is not None:
        e, mid, L, n = _outer_edge_geometry(mesh)
        q = np.asarray(outer_flux(mid, n), dtype=float) * L * 0.5
        np.add.at(load, e[:, 0], q)
        np.add.at(load, e[:, 1], q)
    rhs = load[free] - (K[free][:, fixed] @ value[fixed])
    # nodes touched only by metal triangles have empty rows
    if np.any(Kff.diagonal() <= 0):
        raise SolverError("singular system: free node with no dielectric support")
    xf, res = _spd_solve(Kff, rhs)
    V = value.copy()
    V[free] = xf

    bx, by, area = _gradients(mesh)
    Vt = V[mesh.triangles]
    e_field = -np.stack([(bx * Vt).sum(1), (by * Vt).sum(1)], axis=1)
    e2 = (e_field ** 2).sum(1)
    element_energy = 0.5 * epsilon_0 * eps_r * e2 * area
    energy_by_region = {}
    for tag in sorted({Tag(t) for t in np.unique(mesh.tags)}):
        energy_by_region[tag] = float(np.sum(element_energy[mesh.tags == tag]))
    u_total = float(sum(energy_by_region.values()))
    if not u_total > 0:
        raise SolverError("non-positive total field energy")
    log.debug("solved %d unknowns, residual %.2e, U=%.6e J/m", int(free.sum()), res, u_total)
    return FieldSolution(mesh=mesh, potentials=V, e_field=e_field, eps_r=eps_r,
                         element_energy=element_energy, energy_by_region=energy_by_region,
                         u_total=u_total, capacitance=2.0 * u_total / voltage ** 2,
                         voltage=voltage, residual=res)


def locate(mesh: Mesh, xy):
    """Containing triangle and barycentric coordinates of each point."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    p = mesh.nodes[mesh.triangles]
    lo, hi = p.min(axis=1), p.max(axis=1)
    tri = np.empty(len(xy), dtype=np.int64)
    bary = np.empty((len(xy), 3))
    tol = 1e-12
    for i, q in enumerate(xy):
        cand = np.flatnonzero(np.all((lo <= q + 1e-9) & (hi >= q - 1e-9), axis=1))
        a, b, c = p[cand, 0], p[cand, 1], p[cand, 2]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
        l1 = ((q[0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (q[1] - a[:, 1])) / det
        l2 = ((b[:, 0] - a[:, 0]) * (q[1] - a[:, 1]) - (q[0] - a[:, 0]) * (b[:, 1] - a[:, 1])) / det
        l0 = 1 - l1 - l2
        inside = np.flatnonzero((l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol))
        if len(inside) == 0:
            raise PreconditionError(f"point {tuple(q)} lies outside the mesh")
        k = inside[0]
        tri[i] = cand[k]
        bary[i] = l0[k], l1[k], l2[k]
    return tri, bary


def interpolate_potential(solution: FieldSolution, xy):
    """Evaluate the piecewise-linear potential at arbitrary points."""
    tri, bary = locate(solution.mesh, xy)
    return np.sum(solution.potentials[solution.mesh.triangles[tri]] * bary, axis=1)


def normal_flux(solution: FieldSolution, xy, normals):
    """``eps_r * dV/dn`` of ``solution`` at points, for the given unit normals."""
    tri, _ = locate(solution.mesh, xy)
    return -solution.eps_r[tri] * np.sum(solution.e_field[tri] * normals, axis=1)


def energy_integral(solution: FieldSolution, region) -> float:
    """Field energy per unit length (J/m) stored in ``region``."""
    tag = Tag[region] if isinstance(region, str) else Tag(region)
    sel = solution.mesh.tags == tag
    if not np.any(sel):
        raise PreconditionError(f"region {tag.name} is not present in the mesh")
    return float(np.sum(solution.element_energy[sel]))


# --------------------------------------------------------------------------
# surface traces

# dielectric classes used to name interfaces
_SUB = {Tag.SUBSTRATE, Tag.LAYER_MS, Tag.LAYER_SA}
_VAC = {Tag.VACUUM, Tag.LAYER_MA}

INTERFACES = {
    "MS": (Tag.METAL, Tag.SUBSTRATE),
    "MA": (Tag.METAL, Tag.VACUUM),
    "SA": (Tag.SUBSTRATE, Tag.VACUUM),
}


@dataclass
class SurfaceTrace:
    """Fields on one boundary or interface, one entry per (edge, side).

    ``normal`` is the unit normal pointing *into* the side the field was
    sampled from (away from the conductor, or from substrate into vacuum for
    the side labelled "vacuum" it points into the vacuum).
    """

    name: str
    start: np.ndarray
    end: np.ndarray
    length: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    e_par: np.ndarray
    e_perp: np.ndarray
    eps_r: np.ndarray
    side: np.ndarray
    edge_id: np.ndarray

    @property
    def midpoint(self):
        return 0.5 * (self.start + self.end)

    def arc_position(self):
        """Cumulative arc length at each edge midpoint, ordered by (x, y)."""
        order = np.lexsort((self.midpoint[:, 1], self.midpoint[:, 0]))
        s = np.empty(len(order))
        s[order] = np.cumsum(self.length[order]) - 0.5 * self.length[order]
        return s

    def rows(self):
        """``(arc_position, E_parallel, E_perpendicular, side)`` tuples."""
        return list(zip(self.arc_position(), self.e_par, self.e_perp, self.side))

    def select(self, side):
        m = self.side == side
        return SurfaceTrace(self.name, self.start[m], self.end[m], self.length[m], self.tangent[m],
                            self.normal[m], self.e_par[m], self.e_perp[m], self.eps_r[m], self.side[m],
                            self.edge_id[m])


def _edge_frame(mesh, edges, tri):
    """Tangent and normal of each edge, normal pointing into triangle ``tri``."""
    a = mesh.nodes[edges[:, 0]]
    b = mesh.nodes[edges[:, 1]]
    d = b - a
    length = np.linalg.norm(d, axis=1)
    tan = d / length[:, None]
    nrm = np.stack([-tan[:, 1], tan[:, 0]], axis=1)
    c = mesh.centroids()[tri]
    flip = ((c - a) * nrm).sum(1) < 0
    nrm[flip] *= -1
    return a, b, length, tan, nrm


def surface_field_trace(solution: FieldSolution, boundary) -> SurfaceTrace:
    """Tangential/normal field components along a boundary or interface.

    ``boundary`` is a :class:`Boundary` tag (conductor surface; field from
    the dielectric side(s)) or an interface name "MS", "MA", "SA".  For the
    dielectric SA interface both sides are returned, labelled "substrate"
    and "vacuum", with the normal on both oriented from substrate to vacuum.
    """
    mesh = solution.mesh
    edges, owners = mesh.edges()
    tags = mesh.tags
    E = solution.e_field
    rows = []  # (edge_index, triangle, side_label, normal_sign)

    if isinstance(boundary, (Boundary, int)) and not isinstance(boundary, str):
        btag = Boundary(boundary)
        bkeys = mesh.boundary_edges[mesh.boundary_tags == btag]
        if len(bkeys) == 0:
            raise PreconditionError(f"boundary {btag.name} not present")
        n = mesh.n_nodes + 1
        ek = edges[:, 0] * n + edges[:, 1]
        bs = np.sort(bkeys, axis=1)
        idx = np.searchsorted(ek, bs[:, 0] * n + bs[:, 1], sorter=np.argsort(ek))
        idx = np.argsort(ek)[idx]
        for e in idx:
            for tri in owners[e]:
                if tri >= 0 and tags[tri] != Tag.METAL:
                    cls = "substrate" if Tag(tags[tri]) in _SUB else "vacuum"
                    rows.append((e, tri, cls, 1.0))
        name = btag.name
    else:
        name = str(boundary).upper()
        if name not in INTERFACES:
            raise PreconditionError(f"unknown boundary or interface {boundary!r}")
        both = owners[:, 1] >= 0
        ta = np.where(both, tags[owners[:, 0]], -1)
        tb = np.where(both, tags[owners[:, 1]], -1)
        cls = lambda t: np.where(t == Tag.METAL, 0, np.where(np.isin(t, list(_SUB)), 1, 2))
        ca, cb = cls(ta), cls(tb)
        want = {"MS": (0, 1), "MA": (0, 2), "SA": (1, 2)}[name]
        # zero-thickness conductors: edges carrying a conductor tag between two dielectrics
        n = mesh.n_nodes + 1
        ek = edges[:, 0] * n + edges[:, 1]
        cb_edges = np.sort(mesh.boundary_edges[np.isin(mesh.boundary_tags, (Boundary.CONDUCTOR_TRACE,
                                                                           Boundary.CONDUCTOR_GROUND))], axis=1)
        on_line = both & np.isin(ek, cb_edges[:, 0] * n + cb_edges[:, 1]) & (ca != 0) & (cb != 0)
        sel = np.flatnonzero(both & (np.minimum(ca, cb) == want[0]) & (np.maximum(ca, cb) == want[1])
                             & (ca != cb) & ~on_line)
        if name != "SA":
            for e in np.flatnonzero(on_line):
                for tri, c in zip(owners[e], (ca[e], cb[e])):
                    if c == want[1]:
                        rows.append((e, tri, "substrate" if name == "MS" else "vacuum", 1.0))
        if len(sel) == 0 and not rows:
            raise PreconditionError(f"interface {name} not present in the mesh")
        for e in sel:
            t0, t1 = owners[e]
            c0 = ca[e]
            if name == "SA":
                sub, vac = (t0, t1) if c0 == 1 else (t1, t0)
                rows.append((e, sub, "substrate", -1.0))
                rows.append((e, vac, "vacuum", 1.0))
            else:
                diel = t1 if c0 == 0 else t0
                rows.append((e, diel, "substrate" if name == "MS" else "vacuum", 1.0))

    if not rows:
        raise PreconditionError(f"{name}: no dielectric-side edges found")
    e_idx = np.array([r[0] for r in rows])
    tri = np.array([r[1] for r in rows])
    side = np.array([r[2] for r in rows])
    sign = np.array([r[3] for r in rows])
    a, b, length, tan, nrm = _edge_frame(mesh, edges[e_idx], tri)
    nrm = nrm * sign[:, None]
    Et = E[tri]
    return SurfaceTrace(name=name, start=a, end=b, length=length, tangent=tan, normal=nrm,
                        e_par=(Et * tan).sum(1), e_perp=(Et * nrm).sum(1), eps_r=solution.eps_r[tri],
                        side=side, edge_id=e_idx)


def standard_permittivities(eps_substrate, eps_layer=None):
    perm = {Tag.SUBSTRATE: eps_substrate, Tag.VACUUM: 1.0}
    if eps_layer is not None:
        perm.update({Tag.LAYER_MS: eps_layer, Tag.LAYER_SA: eps_layer, Tag.LAYER_MA: eps_layer})
    return perm
