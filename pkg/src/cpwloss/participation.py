"""Interface and bulk participation ratios of CPW cross-sections.

Two routes are provided.  ``participation_direct`` integrates the field
energy inside explicitly meshed thin layers.  ``participation_perturbative``
evaluates the same energies from a layer-free solution by integrating the
surface fields along each interface, which is what makes full-size domains
tractable.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
import shapely
from scipy.constants import epsilon_0

from .errors import PreconditionError
from .geometry import (GRID, LAYER_TAGS, CpwGeometry, InterfaceLayerSpec, Region, RegionMap, Tag,
                       build_cross_section)
from .mesh import RefinementPolicy, generate_mesh
from .solver import (FieldSolution, interpolate_potential, normal_flux, solve_electrostatic, standard_permittivities,
                     surface_field_trace)

log = logging.getLogger(__name__)

LAYER_COMPONENTS = ("p_ms_perp", "p_ms_par", "p_sa_par", "p_sa_perp", "p_ma_perp", "p_ma_par")
PERP_COMPONENTS = ("p_ms_perp", "p_sa_perp", "p_ma_perp")
PAR_COMPONENTS = ("p_ms_par", "p_sa_par", "p_ma_par")
# corner boxes extend this many layer thicknesses from each corner
CORNER_RADIUS_FACTOR = 50.0


class Method(str, enum.Enum):
    DIRECT = "DIRECT"
    PERTURBATIVE = "PERTURBATIVE"


@dataclass(frozen=True)
class ParticipationVector:
    p_ms_perp: float
    p_ms_par: float
    p_sa_par: float
    p_sa_perp: float
    p_ma_perp: float
    p_ma_par: float
    p_si: float
    p_vac: float
    geometry: Optional[CpwGeometry] = None
    layer_spec: InterfaceLayerSpec = InterfaceLayerSpec()
    method: Method = Method.PERTURBATIVE

    def __post_init__(self):
        for name in (*LAYER_COMPONENTS, "p_si", "p_vac"):
            v = getattr(self, name)
            if not (-1e-12 <= v <= 1 + 1e-12):
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def p_ms(self):
        return self.p_ms_perp + self.p_ms_par

    @property
    def p_sa(self):
        return self.p_sa_par + self.p_sa_perp

    @property
    def p_ma(self):
        return self.p_ma_perp + self.p_ma_par

    @property
    def interface_total(self):
        return math.fsum(getattr(self, c) for c in LAYER_COMPONENTS)

    @property
    def total(self):
        """Bulk silicon plus all interface participation."""
        return self.p_si + self.interface_total

    def loss_row(self):
        """The four columns used by the loss model: MS-perp, SA-par, MA-perp, Si."""
        return np.array([self.p_ms_perp, self.p_sa_par, self.p_ma_perp, self.p_si])

    def dominance(self):
        """Ratios backing the usual single-orientation approximations."""
        r = lambda a, b: a / b if b > 0 else math.inf
        return {"ms_perp/par": r(self.p_ms_perp, self.p_ms_par),
                "ma_perp/par": r(self.p_ma_perp, self.p_ma_par),
                "sa_par/perp": r(self.p_sa_par, self.p_sa_perp)}

    def as_dict(self):
        d = {c: getattr(self, c) for c in (*LAYER_COMPONENTS, "p_si", "p_vac")}
        d["method"] = self.method.value
        return d


# --------------------------------------------------------------------------
# direct layer integration


def _anchor_segments(lines):
    segs = []
    for g in shapely.get_parts(lines):
        if hasattr(g, "geoms"):
            segs.extend(_anchor_segments(g))
        elif g.geom_type in ("LineString", "LinearRing"):
            c = np.asarray(g.coords)
            segs.extend(zip(c[:-1], c[1:]))
    return np.asarray(segs, dtype=float).reshape(-1, 2, 2)


def _nearest_tangent(points, segs):
    """Unit tangent of the segment nearest to each point."""
    a, b = segs[:, 0], segs[:, 1]
    d = b - a
    L2 = (d ** 2).sum(1)
    best = np.full(len(points), np.inf)
    tan = np.zeros((len(points), 2))
    for k in range(len(segs)):
        s = np.clip(((points - a[k]) @ d[k]) / L2[k], 0.0, 1.0)
        dist = np.linalg.norm(points - (a[k] + s[:, None] * d[k]), axis=1)
        upd = dist < best
        best[upd] = dist[upd]
        tan[upd] = d[k] / math.sqrt(L2[k])
    return tan


def _direct_energies(solution: FieldSolution):
    """Layer energies (J/m) per component, split on the anchor tangent."""
    mesh = solution.mesh
    rmap = mesh.region_map
    c = mesh.centroids()
    bx_area = solution.element_energy
    comps = dict.fromkeys(LAYER_COMPONENTS, 0.0)
    keys = {Tag.LAYER_MS: ("p_ms_par", "p_ms_perp"), Tag.LAYER_SA: ("p_sa_par", "p_sa_perp"),
            Tag.LAYER_MA: ("p_ma_par", "p_ma_perp")}
    for tag in LAYER_TAGS:
        sel = np.flatnonzero(mesh.tags == tag)
        if len(sel) == 0:
            continue
        if rmap is None or tag not in rmap.anchors:
            raise PreconditionError(f"no interface anchor for {tag.name}; cannot split par/perp")
        tan = _nearest_tangent(c[sel], _anchor_segments(rmap.anchors[tag]))
        E = solution.e_field[sel]
        e2 = (E ** 2).sum(1)
        et2 = ((E * tan).sum(1)) ** 2
        frac_par = np.divide(et2, e2, out=np.zeros_like(e2), where=e2 > 0)
        par_key, perp_key = keys[tag]
        comps[par_key] = float(np.sum(bx_area[sel] * frac_par))
        comps[perp_key] = float(np.sum(bx_area[sel] * (1 - frac_par)))
    return comps


def participation_direct(solution: FieldSolution, layer_spec: InterfaceLayerSpec = InterfaceLayerSpec(),
                         geometry: Optional[CpwGeometry] = None) -> ParticipationVector:
    """Participation from explicitly meshed layers, split into ∥ and ⊥ parts.

    Each layer element's field is projected on the tangent of the nearest
    segment of the interface the layer is attached to.
    """
    mesh = solution.mesh
    rmap = mesh.region_map
    present = {Tag(t) for t in np.unique(mesh.tags)}
    if not present & set(LAYER_TAGS):
        raise PreconditionError("solution has no LAYER_* regions; use participation_perturbative")
    U = solution.u_total
    comps = {k: v / U for k, v in _direct_energies(solution).items()}
    eb = solution.energy_by_region
    return ParticipationVector(**comps, p_si=eb.get(Tag.SUBSTRATE, 0.0) / U, p_vac=eb.get(Tag.VACUUM, 0.0) / U,
                               geometry=geometry or (rmap.geometry if rmap is not None else None),
                               layer_spec=layer_spec, method=Method.DIRECT)


# --------------------------------------------------------------------------
# thin-layer surface integrals

# Two-point Gauss rule on [0, 1]; element-constant fields make both points
# carry the same value, but the rule is kept so recovered fields drop in.
_GAUSS_W = np.array([0.5, 0.5])


def _edge_integral(values, length):
    vals = np.repeat(np.asarray(values)[:, None], 2, axis=1)
    return float(np.sum(length * (vals @ _GAUSS_W)))


def _inside_fraction(start, end, boxes):
    """Fraction of each segment lying inside any of the (disjoint) boxes."""
    frac = np.zeros(len(start))
    d = end - start
    for x0, y0, x1, y1 in boxes:
        lo = np.zeros(len(start))
        hi = np.ones(len(start))
        for k, (a, b) in enumerate(((x0, x1), (y0, y1))):
            dk = d[:, k]
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (a - start[:, k]) / dk
                tb = (b - start[:, k]) / dk
            par = dk == 0
            out = par & ((start[:, k] < a) | (start[:, k] > b))
            t0 = np.where(par, 0.0, np.minimum(ta, tb))
            t1 = np.where(par, 1.0, np.maximum(ta, tb))
            lo = np.maximum(lo, t0)
            hi = np.minimum(hi, np.where(out, -1.0, t1))
        frac += np.clip(hi - lo, 0.0, 1.0)
    return np.minimum(frac, 1.0)


def _line_energies(solution: FieldSolution, layer_spec: InterfaceLayerSpec, boxes=()):
    """First-order layer energies (J/m), skipping the parts inside ``boxes``."""
    t = layer_spec.t_um
    el = layer_spec.eps_nom
    half = 0.5 * epsilon_0 * t
    comps = {}

    def weight(tr):
        return tr.length * (1.0 - _inside_fraction(tr.start, tr.end, boxes)) if len(boxes) else tr.length

    for name, par_key, perp_key in (("MS", "p_ms_par", "p_ms_perp"), ("MA", "p_ma_par", "p_ma_perp")):
        tr = surface_field_trace(solution, name)
        L = weight(tr)
        comps[perp_key] = half * _edge_integral(tr.eps_r ** 2 / el * tr.e_perp ** 2, L)
        comps[par_key] = half * _edge_integral(el * tr.e_par ** 2, L)
    try:
        tr = surface_field_trace(solution, "SA")
    except PreconditionError:
        comps["p_sa_par"] = comps["p_sa_perp"] = 0.0
    else:
        sub, vac = tr.select("substrate"), tr.select("vacuum")
        # both sides list the same edges in the same order
        e_par2 = 0.5 * (sub.e_par ** 2 + vac.e_par ** 2)
        d_perp = 0.5 * (sub.eps_r * sub.e_perp + vac.eps_r * vac.e_perp)
        L = weight(sub)
        comps["p_sa_par"] = half * _edge_integral(el * e_par2, L)
        comps["p_sa_perp"] = half * _edge_integral(d_perp ** 2 / el, L)
    return comps


def corner_patches(rmap, t_um, radius_factor=CORNER_RADIUS_FACTOR):
    """Disjoint boxes around the singular corners of a cross-section.

    Each corner gets a square of half-width ``radius_factor * t`` (capped by
    the feature sizes); overlapping squares are merged into their bounding
    box until none overlap.
    """
    geom = rmap.geometry
    R = radius_factor * t_um
    if geom is not None:
        R = min(R, 0.4 * min(geom.w, geom.g))
    boxes = [[x - R, y - R, x + R, y + R] for x, y in np.asarray(rmap.corners).reshape(-1, 2)]
    merged = True
    while merged:
        merged = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                a, b = boxes[i], boxes[j]
                if a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]:
                    boxes[i] = [min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])]
                    del boxes[j]
                    merged = True
                    break
            if merged:
                break
    X0, Y0, X1, Y1 = rmap.domain.bounds
    out = []
    for x0, y0, x1, y1 in boxes:
        b = [max(x0, X0), max(y0, Y0), min(x1, X1), min(y1, Y1)]
        out.append([round(v, 9) for v in b])
    return out


def _clip_region_map(rmap: RegionMap, box) -> RegionMap:
    bx = shapely.box(*box)
    regions = []
    for r in rmap.regions:
        piece = shapely.set_precision(r.polygon.intersection(bx), GRID)
        for g in shapely.get_parts(piece):
            if g.geom_type == "Polygon" and g.area > 1e-12 * bx.area:
                regions.append(Region(g, r.tag, r.name, r.conductor))
    corners = np.asarray(rmap.corners).reshape(-1, 2)
    inside = (corners[:, 0] > box[0]) & (corners[:, 0] < box[2]) & (corners[:, 1] > box[1]) & (corners[:, 1] < box[3])
    return RegionMap(regions=regions, domain=bx, outer="grounded", corners=corners[inside],
                     anchors={k: v.intersection(bx) for k, v in rmap.anchors.items()},
                     layer_thickness=rmap.layer_thickness, geometry=rmap.geometry)


def corner_energies(base_solution: FieldSolution, geometry: CpwGeometry, layer_spec: InterfaceLayerSpec, boxes):
    """Layer energies (J/m) inside ``boxes`` from layer-resolved local solves.

    Each box is meshed with the layers present.  Boxes containing metal are
    driven by the normal displacement of ``base_solution`` on their outer
    boundary, which a thin layer leaves unchanged to first order; boxes
    without metal (trench floor corners) take its potential instead.
    """
    t = layer_spec.t_um
    layered = build_cross_section(geometry, layer_spec)
    perms = standard_permittivities(geometry.eps_substrate, layer_spec.eps_nom)
    total = dict.fromkeys(LAYER_COMPONENTS, 0.0)
    for box in boxes:
        local = _clip_region_map(layered, box)
        if not local.has_layers():
            continue
        R = max(box[2] - box[0], box[3] - box[1])
        policy = RefinementPolicy(h_max=R / 8, h_edge=t / 2, grading=1.3, layer_elements=2)
        mesh = generate_mesh(local, policy)
        if Tag.METAL in local.tags:
            centre = np.array([0.5 * (box[0] + box[2]), 0.5 * (box[1] + box[3])])

            def flux(xy, n):
                # sample just inside the box, off the base mesh's own edges
                inward = xy + 1e-7 * (centre - xy)
                return normal_flux(base_solution, inward, n)

            sol = solve_electrostatic(mesh, perms, outer_flux=flux)
        else:
            sol = solve_electrostatic(mesh, perms, outer_potential=lambda xy: interpolate_potential(base_solution, xy))
        for k, v in _direct_energies(sol).items():
            total[k] += v
    return total


def _can_correct(geometry, layer_spec):
    return geometry is not None and geometry.t_metal > 2 * layer_spec.t_um and layer_spec.t_um < geometry.g / 50


def participation_perturbative(base_solution: FieldSolution,
                               layer_spec: InterfaceLayerSpec = InterfaceLayerSpec(),
                               geometry: Optional[CpwGeometry] = None,
                               corner_correction: bool = True) -> ParticipationVector:
    """First-order participation of thin layers from a layer-free solution.

    A layer of thickness ``t`` and permittivity ``eps_l`` on an interface
    stores ``t/2 * (eps_l |E_par|^2 + D_perp^2 / eps_l)`` per unit length,
    with ``E_par`` and ``D_perp`` taken from the unperturbed field on the
    side the layer displaces (substrate for MS, vacuum for MA).  For SA the
    normal displacement is averaged over both sides.

    The first-order expression misses the energy the layers collect at
    conductor corners, where the field is singular on the scale of ``t``.
    With ``corner_correction`` the line integrals are cut out of small boxes
    around every corner and replaced by layer-resolved solves inside those
    boxes (see ``corner_energies``).  Without a cross-section geometry, or
    for metal too thin to carry layers, the plain line integrals are used.
    """
    mesh = base_solution.mesh
    present = {Tag(t) for t in np.unique(mesh.tags)}
    if present & set(LAYER_TAGS):
        raise PreconditionError("base solution already contains layer regions (would double count)")
    U = base_solution.u_total
    eb = base_solution.energy_by_region
    geometry = geometry or (mesh.region_map.geometry if mesh.region_map is not None else None)
    p_si = eb.get(Tag.SUBSTRATE, 0.0) / U
    p_vac = eb.get(Tag.VACUUM, 0.0) / U
    if layer_spec.t_um == 0:
        zeros = dict.fromkeys(LAYER_COMPONENTS, 0.0)
        return ParticipationVector(**zeros, p_si=p_si, p_vac=p_vac, geometry=geometry,
                                   layer_spec=layer_spec, method=Method.PERTURBATIVE)
    boxes = []
    if corner_correction and _can_correct(geometry, layer_spec) and mesh.region_map is not None:
        boxes = corner_patches(mesh.region_map, layer_spec.t_um)
    energies = _line_energies(base_solution, layer_spec, boxes)
    if boxes:
        for k, v in corner_energies(base_solution, geometry, layer_spec, boxes).items():
            energies[k] += v
    comps = {k: v / U for k, v in energies.items()}
    return ParticipationVector(**comps, p_si=p_si, p_vac=p_vac, geometry=geometry,
                               layer_spec=layer_spec, method=Method.PERTURBATIVE)


def rescale_thin_layer(p: ParticipationVector, t_new: float, eps_new: float) -> ParticipationVector:
    """Re-express layer participation for a layer of ``t_new`` nm and ``eps_new``.

    Parallel-field energy scales with ``t * eps``, normal-field energy with
    ``t / eps``; bulk terms are unchanged.
    """
    if not (t_new > 0 and eps_new > 0):
        raise PreconditionError(f"t_new and eps_new must be positive (got {t_new}, {eps_new})")
    ls = p.layer_spec
    rt = t_new / ls.t_nom
    f_par = rt * (eps_new / ls.eps_nom)
    f_perp = rt * (ls.eps_nom / eps_new)
    vals = {c: getattr(p, c) * f_par for c in PAR_COMPONENTS}
    vals.update({c: getattr(p, c) * f_perp for c in PERP_COMPONENTS})
    return replace(p, **vals, layer_spec=InterfaceLayerSpec(t_nom=t_new, eps_nom=eps_new))


# --------------------------------------------------------------------------
# end-to-end helpers


def default_policy(geom: CpwGeometry) -> RefinementPolicy:
    """Production mesh settings for a full-size cross-section."""
    span = geom.w + 2 * geom.g
    return RefinementPolicy(h_max=span, h_edge=0.01, grading=1.25)


def simulate(geom: CpwGeometry, layer_spec: InterfaceLayerSpec = InterfaceLayerSpec(),
             policy: Optional[RefinementPolicy] = None) -> ParticipationVector:
    """Mesh, solve and return perturbative participation for ``geom``."""
    policy = policy or default_policy(geom)
    mesh = generate_mesh(build_cross_section(geom), policy)
    sol = solve_electrostatic(mesh, standard_permittivities(geom.eps_substrate))
    return participation_perturbative(sol, layer_spec, geometry=geom)


def simulate_direct(geom: CpwGeometry, layer_spec: InterfaceLayerSpec = InterfaceLayerSpec(),
                    policy: Optional[RefinementPolicy] = None) -> ParticipationVector:
    """Mesh the layers explicitly and integrate their energy."""
    policy = policy or default_policy(geom)
    mesh = generate_mesh(build_cross_section(geom, layer_spec), policy)
    sol = solve_electrostatic(mesh, standard_permittivities(geom.eps_substrate, layer_spec.eps_nom))
    return participation_direct(sol, layer_spec, geometry=geom)


@dataclass
class DepthSweepResult:
    depths: list
    participation: list
    asymptote: ParticipationVector
    saturation_depth: float
    tolerance: float = 0.01

    def table(self):
        """Rows of depth followed by every component, for CSV export."""
        cols = ["depth_um", *LAYER_COMPONENTS, "p_si", "p_vac", "total"]
        rows = [[d, *[getattr(p, c) for c in LAYER_COMPONENTS], p.p_si, p.p_vac, p.total]
                for d, p in zip(self.depths, self.participation)]
        return cols, rows


def saturation_depth(depths, totals, tol=0.01):
    """Smallest depth from which every later total stays within ``tol`` of the last."""
    totals = np.asarray(totals, dtype=float)
    asym = totals[-1]
    ok = np.abs(totals - asym) <= tol * abs(asym)
    k = len(ok)
    while k > 0 and ok[k - 1]:
        k -= 1
    return float(depths[k])


def _sweep_one(args):
    geom, layer_spec, policy = args
    return simulate(geom, layer_spec, policy)


def sweep_geometries(geom_template: CpwGeometry, depths):
    """Geometries of a sweep sharing one domain sized for the deepest trench."""
    depths = [float(d) for d in depths]
    if len(depths) == 0 or np.any(np.diff(depths) <= 0):
        raise PreconditionError("depths must be non-empty and strictly increasing")
    span = geom_template.w + 2 * geom_template.g
    H = max(geom_template.domain_height, 10 * span + depths[-1])
    return [geom_template.replace(d=d, domain_height=H) for d in depths]


def depth_sweep(geom_template: CpwGeometry, depths, layer_spec: InterfaceLayerSpec = InterfaceLayerSpec(),
                policy: Optional[RefinementPolicy] = None, workers: int = 1, tol: float = 0.01,
                simulate_fn=None) -> DepthSweepResult:
    """Perturbative participation at each depth, with saturation analysis.

    The asymptote is the deepest point.  ``simulate_fn(geom)`` overrides
    the per-depth computation (the CLI uses it to go through its cache).
    """
    geoms = sweep_geometries(geom_template, depths)
    policy = policy or default_policy(geom_template)
    if simulate_fn is not None:
        results = [simulate_fn(g) for g in geoms]
    elif workers > 1 and len(geoms) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_one, [(g, layer_spec, policy) for g in geoms]))
    else:
        results = [simulate(g, layer_spec, policy) for g in geoms]
    totals = [p.total for p in results]
    return DepthSweepResult(depths=[g.d for g in geoms], participation=results, asymptote=results[-1],
                            saturation_depth=saturation_depth([g.d for g in geoms], totals, tol), tolerance=tol)
