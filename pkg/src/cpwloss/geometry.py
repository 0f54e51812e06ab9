r"""Polygonal cross-sections of trenched coplanar waveguides.

Coordinates are in micrometres.  The substrate surface is ``y = 0``, the
center trace is centered on ``x = 0`` and the metal film occupies
``0 <= y <= t_metal``.  The trench in each gap is a trapezoid whose top edge
spans the full gap and whose floor sits at ``y = -d``.

Sidewall angle convention (``phi`` is the angle inside the trench, between
the floor and the sidewall)::

        metal  |<------ g ------>|  metal
    ===========+                 +===========   y = 0
     substrate  \               /  substrate
                 \phi       phi/                phi > 90: wider at the top
                  +-----------+                 y = -d
                  floor = g + 2 d / tan(phi)

``phi = 90`` gives vertical sidewalls, ``phi < 90`` an undercut that
narrows the silicon pillar below the trace.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import shapely
from shapely.geometry import LineString, MultiLineString, Polygon, box
from shapely.ops import linemerge, unary_union

from .errors import GeometryError, PreconditionError

GRID = 1e-9  # µm; coordinate snapping so shared vertices coincide exactly


class Tag(enum.IntEnum):
    METAL = 0
    SUBSTRATE = 1
    VACUUM = 2
    LAYER_MS = 3
    LAYER_SA = 4
    LAYER_MA = 5


LAYER_TAGS = (Tag.LAYER_MS, Tag.LAYER_SA, Tag.LAYER_MA)


@dataclass(frozen=True)
class CpwGeometry:
    """Parametric trenched CPW cross-section (lengths in µm, angles in degrees).

    ``domain_halfwidth`` and ``domain_height`` default to ten times the total
    CPW width; the height is measured both above the substrate surface and
    below it, and is extended by the trench depth so the floor never
    approaches the outer boundary.
    """

    w: float
    g: float
    d: float = 0.0
    phi: float = 90.0
    t_metal: float = 0.15
    eps_substrate: float = 11.7
    domain_halfwidth: Optional[float] = None
    domain_height: Optional[float] = None

    def __post_init__(self):
        span = self.w + 2.0 * self.g
        if self.domain_halfwidth is None:
            object.__setattr__(self, "domain_halfwidth", 10.0 * span)
        if self.domain_height is None:
            object.__setattr__(self, "domain_height", 10.0 * span + self.d)
        self._validate()

    def _validate(self):
        if not (self.w > 0 and self.g > 0):
            raise GeometryError(f"w and g must be positive (w={self.w}, g={self.g})")
        if self.d < 0 or self.t_metal < 0:
            raise GeometryError(f"d and t_metal must be non-negative (d={self.d}, t_metal={self.t_metal})")
        if 0 < self.d < 1000 * GRID:
            raise GeometryError(f"d={self.d} is below the geometric resolution ({1000 * GRID} um); use d=0")
        if not 60.0 <= self.phi <= 120.0:
            raise GeometryError(f"phi={self.phi} outside [60, 120] degrees")
        if self.eps_substrate < 1.0:
            raise GeometryError(f"eps_substrate={self.eps_substrate} < 1")
        if self.domain_halfwidth < 10.0 * (self.w / 2 + self.g) - 1e-12:
            raise GeometryError(
                f"domain_halfwidth={self.domain_halfwidth} < 10*(w/2+g)={10 * (self.w / 2 + self.g)}")
        if self.domain_height < 10.0 * (self.w + 2 * self.g) - 1e-12:
            raise GeometryError(
                f"domain_height={self.domain_height} < 10*(w+2g)={10 * (self.w + 2 * self.g)}")
        if self.domain_height <= self.d + self.t_metal:
            raise GeometryError(f"domain_height={self.domain_height} does not contain trench depth d={self.d}")
        if self.d > 0:
            s = self.sidewall_run
            if self.g + 2 * s <= 0:
                raise GeometryError(
                    f"sidewalls cross inside the gap: g={self.g}, d={self.d}, phi={self.phi} "
                    f"(floor width {self.g + 2 * s:.4g} um)")
            if self.w - 2 * s <= 0:
                raise GeometryError(
                    f"undercut sidewalls cross below the trace: w={self.w}, d={self.d}, phi={self.phi} "
                    f"(pillar width {self.w - 2 * s:.4g} um)")
            if self.w / 2 + self.g + max(s, 0.0) >= self.domain_halfwidth:
                raise GeometryError("trench reaches the domain edge")

    @property
    def sidewall_run(self):
        """Horizontal offset of the floor corner from the top corner (µm).

        Positive values move the floor outward under the metal (undercut).
        """
        if self.d == 0 or abs(self.phi - 90.0) < 1e-12:
            return 0.0
        return self.d / math.tan(math.radians(self.phi))

    @property
    def floor_width(self):
        return self.g + 2.0 * self.sidewall_run

    def replace(self, **changes):
        from dataclasses import replace
        return replace(self, **changes)

    def scaled(self, s):
        """All lengths multiplied by ``s``."""
        return self.replace(w=self.w * s, g=self.g * s, d=self.d * s, t_metal=self.t_metal * s,
                            domain_halfwidth=self.domain_halfwidth * s,
                            domain_height=self.domain_height * s)


@dataclass(frozen=True)
class InterfaceLayerSpec:
    """Nominal thin defect layer used for every interface (nm, relative)."""

    t_nom: float = 10.0
    eps_nom: float = 10.0

    def __post_init__(self):
        if not self.t_nom >= 0:
            raise PreconditionError(f"layer thickness must be non-negative, got {self.t_nom}")
        if self.eps_nom < 1:
            raise PreconditionError(f"layer permittivity must be >= 1, got {self.eps_nom}")

    @property
    def t_um(self):
        return self.t_nom * 1e-3


@dataclass
class Region:
    polygon: Polygon
    tag: Tag
    name: str = ""
    conductor: Optional[str] = None  # "trace" or "ground" for METAL


@dataclass
class RegionMap:
    """A tiling of the rectangular domain into tagged polygons.

    Zero-thickness conductors are carried as ``conductor_lines`` rather than
    polygons.  ``outer`` selects the outer boundary condition: "grounded"
    (V = 0) or "open" (zero normal field).  ``anchors`` holds, per layer
    tag, the interface lines the layer is attached to.
    """

    regions: list
    domain: Polygon
    conductor_lines: list = field(default_factory=list)
    outer: str = "grounded"
    corners: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    anchors: dict = field(default_factory=dict)
    layer_thickness: Optional[float] = None  # µm
    geometry: Optional[CpwGeometry] = None

    @property
    def tags(self):
        return {r.tag for r in self.regions}

    def has_layers(self):
        return any(r.tag in LAYER_TAGS for r in self.regions)

    def by_tag(self, tag):
        return [r for r in self.regions if r.tag == tag]

    def trench_polygons(self):
        return [r.polygon for r in self.regions if r.name.startswith("trench")]

    def total_area(self):
        return math.fsum(r.polygon.area for r in self.regions)

    def tag_at(self, xy):
        """Region tag containing each point (``-1`` if none)."""
        xy = np.asarray(xy, dtype=float)
        out = np.full(len(xy), -1, dtype=int)
        for r in self.regions:
            hit = shapely.contains_xy(r.polygon, xy[:, 0], xy[:, 1])
            out[hit & (out < 0)] = int(r.tag)
        return out

    def vertices(self):
        pts = []
        for r in self.regions:
            for ring in [r.polygon.exterior, *r.polygon.interiors]:
                pts.extend(ring.coords[:-1])
        for line, _ in self.conductor_lines:
            pts.extend(line.coords)
        return np.unique(np.round(np.asarray(pts), 9), axis=0)


def interpolate_sidewall_angle(depth, calibration):
    """Piecewise-linear sidewall angle at ``depth`` from ``(depth, angle)`` pairs.

    Values outside the calibrated range are clamped to the nearest endpoint.
    """
    if len(calibration) == 0:
        raise PreconditionError("empty sidewall-angle calibration table")
    cal = np.asarray(calibration, dtype=float)
    if cal.ndim != 2 or cal.shape[1] != 2:
        raise PreconditionError("calibration must be a list of (depth, angle) pairs")
    if np.any(np.diff(cal[:, 0]) <= 0):
        raise PreconditionError("calibration depths must be strictly increasing")
    return float(np.interp(depth, cal[:, 0], cal[:, 1]))


def _polys(geom):
    """Flatten a shapely result to a list of non-empty polygons."""
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    return [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon) and not g.is_empty]


def _lines(geom):
    if geom.is_empty:
        return MultiLineString()
    parts = []
    for g in getattr(geom, "geoms", [geom]):
        if isinstance(g, LineString) and g.length > 0:
            parts.append(g)
        elif hasattr(g, "geoms"):
            parts.extend(x for x in g.geoms if isinstance(x, LineString) and x.length > 0)
    if not parts:
        return MultiLineString()
    merged = linemerge(parts)
    return merged if isinstance(merged, MultiLineString) else MultiLineString([merged])


def _snap(geom):
    return shapely.set_precision(geom, GRID)


def build_cross_section(geom: CpwGeometry, layers: Optional[InterfaceLayerSpec] = None) -> RegionMap:
    """Tagged polygon tiling of the CPW cross-section.

    With ``layers`` given, thin MS and SA layers are carved out of the
    substrate (under the metal, and under exposed substrate surfaces) and MA
    layers out of the vacuum around every exposed metal surface.
    """
    X, H = geom.domain_halfwidth, geom.domain_height
    w2, g, d, tm = geom.w / 2.0, geom.g, geom.d, geom.t_metal
    s = geom.sidewall_run
    domain = box(-X, -H, X, H)

    if layers is not None and layers.t_nom > 0:
        t = layers.t_um
        if not t < g / 50.0:
            raise PreconditionError(f"layer thickness {t} um is not << gap (needs t < g/50 = {g / 50} um)")
        if tm <= 2 * t:
            raise PreconditionError("interface layers need metal thicker than twice the layer")
    else:
        layers = None

    trenches = []
    if d > 0:
        for sign, name in ((1, "trench_right"), (-1, "trench_left")):
            pts = [(w2, 0.0), (w2 + g, 0.0), (w2 + g + s, -d), (w2 - s, -d)]
            poly = Polygon([(sign * x, y) for x, y in pts])
            trenches.append((_snap(shapely.geometry.polygon.orient(poly)), name))
    substrate = box(-X, -H, X, 0.0)
    for tr, _ in trenches:
        substrate = substrate.difference(tr)
    substrate = _snap(substrate)

    metals = []
    conductor_lines = []
    if tm > 0:
        metals.append((_snap(box(-w2, 0.0, w2, tm)), "trace"))
        metals.append((_snap(box(w2 + g, 0.0, X, tm)), "ground"))
        metals.append((_snap(box(-X, 0.0, -w2 - g, tm)), "ground"))
    else:
        conductor_lines.append((LineString([(-w2, 0.0), (w2, 0.0)]), "trace"))
        conductor_lines.append((LineString([(w2 + g, 0.0), (X, 0.0)]), "ground"))
        conductor_lines.append((LineString([(-X, 0.0), (-w2 - g, 0.0)]), "ground"))
    metal_union = unary_union([m for m, _ in metals]) if metals else Polygon()
    upper = _snap(box(-X, 0.0, X, H).difference(metal_union))
    vacuum_pieces = [(upper, "vacuum")] + trenches
    vacuum_all = unary_union([p for p, _ in vacuum_pieces])

    corners = []
    for m, _ in metals:
        corners.extend(c for c in m.exterior.coords[:-1] if abs(abs(c[0]) - X) > 1e-9)
    for line, _ in conductor_lines:
        corners.extend(c for c in line.coords if abs(abs(c[0]) - X) > 1e-9)
    for tr, _ in trenches:
        corners.extend(tr.exterior.coords[:-1])

    regions = []
    anchors = {}
    layer_t = None
    if layers is None:
        regions.extend(Region(p, Tag.SUBSTRATE, "substrate") for p in _polys(substrate))
    else:
        t = layer_t = layers.t_um
        bottoms = [LineString([(-w2, 0.0), (w2, 0.0)]),
                   LineString([(w2 + g, 0.0), (X, 0.0)]),
                   LineString([(-X, 0.0), (-w2 - g, 0.0)])]
        ms = unary_union([box(b.bounds[0], -t, b.bounds[2], 0.0) for b in bottoms])
        ms = _snap(ms.intersection(substrate))
        exposed_sub = _lines(substrate.boundary.intersection(vacuum_all.boundary))
        exposed_metal = _lines(metal_union.boundary.intersection(vacuum_all.boundary))
        ms_anchor = _lines(metal_union.boundary.intersection(substrate.boundary))
        sa = exposed_sub.buffer(t, cap_style="flat", join_style="mitre", mitre_limit=20.0)
        sa = _snap(sa.intersection(substrate).difference(ms))
        ma = exposed_metal.buffer(t, cap_style="flat", join_style="mitre", mitre_limit=20.0)
        ma = _snap(ma.intersection(vacuum_all))
        bulk = _snap(substrate.difference(ms).difference(sa))
        regions.extend(Region(p, Tag.SUBSTRATE, "substrate") for p in _polys(bulk))
        regions.extend(Region(p, Tag.LAYER_MS, "ms") for p in _polys(ms))
        regions.extend(Region(p, Tag.LAYER_SA, "sa") for p in _polys(sa))
        regions.extend(Region(p, Tag.LAYER_MA, "ma") for p in _polys(ma))
        vacuum_pieces = [(_snap(p.difference(ma)), n) for p, n in vacuum_pieces]
        anchors = {Tag.LAYER_MS: ms_anchor, Tag.LAYER_SA: exposed_sub, Tag.LAYER_MA: exposed_metal}

    for p, name in vacuum_pieces:
        regions.extend(Region(q, Tag.VACUUM, name) for q in _polys(p))
    for m, cond in metals:
        regions.append(Region(m, Tag.METAL, cond, conductor=cond))

    return RegionMap(regions=regions, domain=domain, conductor_lines=conductor_lines,
                     corners=np.asarray(corners, dtype=float).reshape(-1, 2),
                     anchors=anchors, layer_thickness=layer_t, geometry=geom)


def parallel_plate(width, separation, layers=()):
    """Region map of a parallel-plate capacitor with open side walls.

    ``layers`` is a sequence of ``(thickness, tag)`` stacked upward from the
    grounded bottom plate; any remaining height is SUBSTRATE.  The top plate
    is the trace at ``y = separation``.
    """
    y = 0.0
    regions = []
    for thick, tag in layers:
        regions.append(Region(box(0.0, y, width, y + thick), Tag(tag), Tag(tag).name.lower()))
        y += thick
    if y < separation - 1e-12:
        regions.append(Region(box(0.0, y, width, separation), Tag.SUBSTRATE, "fill"))
    anchors = {}
    for r in regions:
        if r.tag in LAYER_TAGS:
            anchors[r.tag] = MultiLineString([LineString([(0.0, 0.0), (width, 0.0)])])
    return RegionMap(
        regions=regions,
        domain=box(0.0, 0.0, width, separation),
        conductor_lines=[(LineString([(0.0, separation), (width, separation)]), "trace"),
                         (LineString([(0.0, 0.0), (width, 0.0)]), "ground")],
        outer="open",
        corners=np.zeros((0, 2)),
        anchors=anchors,
        layer_thickness=min((t for t, tag in layers if Tag(tag) in LAYER_TAGS), default=None),
    )
