import io

import numpy as np
import pytest
from shapely.geometry import LineString, box

from cpwloss.errors import MeshError, PreconditionError
from cpwloss.geometry import (LAYER_TAGS, CpwGeometry, InterfaceLayerSpec, Region, RegionMap, Tag,
                              build_cross_section)
from cpwloss.mesh import Boundary, RefinementPolicy, generate_mesh, read_mesh, refine_mesh, write_mesh
from cpwloss.solver import locate


def _square(side=1.0, regions=None):
    regions = regions or [Region(box(0, 0, side, side), Tag.SUBSTRATE, "square")]
    return RegionMap(regions=regions, domain=box(0, 0, side, side),
                     conductor_lines=[(LineString([(0, side), (side, side)]), "trace"),
                                      (LineString([(0, 0), (side, 0)]), "ground")], outer="open")


def test_minimal_square_mesh():
    m = generate_mesh(_square(), RefinementPolicy(h_max=0.5, h_edge=0.5, grading=1.5))
    assert m.n_triangles >= 2
    assert np.all(m.tags == Tag.SUBSTRATE)
    assert m.audit()


def test_boundary_tags_present(small_mesh):
    present = set(np.unique(small_mesh.boundary_tags))
    assert {Boundary.CONDUCTOR_TRACE, Boundary.CONDUCTOR_GROUND, Boundary.OUTER} <= present


def test_corner_elements_respect_h_edge():
    geom = CpwGeometry(16, 8, 0.68, 100)
    rm = build_cross_section(geom)
    policy = RefinementPolicy(h_max=32, h_edge=0.01, grading=1.25)
    m = generate_mesh(rm, policy)
    m.audit()
    checked = 0
    for c in rm.corners:
        node = np.flatnonzero(np.all(np.abs(m.nodes - c) < 1e-9, axis=1))
        assert len(node) == 1, f"corner {c} is not a mesh node"
        tris = np.flatnonzero(np.any(m.triangles == node[0], axis=1))
        assert m.edge_lengths()[tris].max() <= policy.h_edge * (1 + 1e-9)
        checked += 1
    assert checked == len(rm.corners) > 0


@pytest.fixture(scope="module")
def layered_mesh():
    geom = CpwGeometry(1.0, 0.6, 0.3, 90, t_metal=0.15, domain_halfwidth=11, domain_height=22)
    spec = InterfaceLayerSpec(10)
    policy = RefinementPolicy(h_max=2.2, h_edge=0.01, grading=2.0, layer_elements=2)
    return generate_mesh(build_cross_section(geom, spec), policy), spec, policy


def test_layer_elements_across_thickness(layered_mesh):
    m, spec, policy = layered_mesh
    in_layer = np.isin(m.tags, LAYER_TAGS)
    assert in_layer.any()
    # no triangle edge longer than t / layer_elements, so any segment across
    # the layer crosses at least layer_elements triangles
    assert m.edge_lengths()[in_layer].max() <= spec.t_um / policy.layer_elements * (1 + 1e-9)


def test_min_angle_outside_layers(layered_mesh, small_mesh):
    m = layered_mesh[0]
    outside = ~np.isin(m.tags, LAYER_TAGS)
    assert m.min_angles()[outside].min() >= 20.0 - 1e-6
    assert small_mesh.min_angles().min() >= 20.0 - 1e-6


def test_uniform_refinement_doubles(small_mesh):
    r = refine_mesh(small_mesh, np.ones(small_mesh.n_triangles), 1.0)
    assert r.n_triangles >= 2 * small_mesh.n_triangles
    assert r.audit()
    assert np.isclose(np.abs(r.signed_areas()).sum(), np.abs(small_mesh.signed_areas()).sum(), rtol=1e-12)


def test_zero_indicator_tie_break_lowest_index(small_mesh):
    n = small_mesh.n_triangles
    a = refine_mesh(small_mesh, np.zeros(n), 0.1)
    b = refine_mesh(small_mesh, np.zeros(n), 0.1)
    k = int(np.ceil(0.1 * n))
    first_k = np.where(np.arange(n) < k, 1.0, 0.0)
    c = refine_mesh(small_mesh, first_k, 0.1)
    for x in (b, c):
        assert np.array_equal(a.nodes, x.nodes)
        assert np.array_equal(a.triangles, x.triangles)
    assert a.audit()


def test_refinement_preserves_tags_and_boundaries(small_mesh):
    r = refine_mesh(small_mesh, np.arange(small_mesh.n_triangles, dtype=float), 0.3)
    r.audit()
    for tag in np.unique(small_mesh.tags):
        before = np.abs(small_mesh.signed_areas())[small_mesh.tags == tag].sum()
        after = np.abs(r.signed_areas())[r.tags == tag].sum()
        assert after == pytest.approx(before, rel=1e-12)
    for bt in Boundary:
        L0 = _boundary_length(small_mesh, bt)
        assert _boundary_length(r, bt) == pytest.approx(L0, rel=1e-12)


def _boundary_length(m, bt):
    e = m.boundary_edges[m.boundary_tags == bt]
    return np.linalg.norm(m.nodes[e[:, 0]] - m.nodes[e[:, 1]], axis=1).sum()


def test_energy_indicator_concentrates_near_gap_corners(small_mesh, small_solution):
    corners = small_mesh.region_map.corners
    r = refine_mesh(small_mesh, small_solution.element_energy, 0.1)
    r.audit()

    def hist(nodes):
        d = np.min(np.linalg.norm(nodes[:, None, :] - corners[None], axis=2), axis=1)
        return np.histogram(d, [0.0, 1.0, 5.0, np.inf])[0]

    before = hist(small_mesh.nodes)
    added = hist(r.nodes[small_mesh.n_nodes:])
    growth = added / before
    # relative node growth near the corners dwarfs the far field
    assert growth[0] > 10 * growth[2]
    assert added[0] > added[2]


def test_region_tag_fidelity(small_mesh, rng):
    rm = small_mesh.region_map
    x0, y0, x1, y1 = rm.domain.bounds
    # half the points uniformly, half in the near field where regions are small
    pts = np.concatenate([rng.uniform([x0, y0], [x1, y1], size=(5000, 2)),
                          rng.uniform([-3, -1], [3, 0.5], size=(5000, 2))])
    truth = rm.tag_at(pts)
    tri, _ = locate(small_mesh, pts)
    got = small_mesh.tags[tri]
    ok = truth >= 0
    assert np.mean(got[ok] == truth[ok]) >= 0.999


def test_centroid_tags_match_region_map(small_mesh):
    truth = small_mesh.region_map.tag_at(small_mesh.centroids())
    assert np.all(truth == small_mesh.tags)


def test_deterministic(small_geom, fast_policy, small_mesh):
    again = generate_mesh(build_cross_section(small_geom), fast_policy)
    assert np.array_equal(again.nodes, small_mesh.nodes)
    assert np.array_equal(again.triangles, small_mesh.triangles)
    assert np.array_equal(again.boundary_edges, small_mesh.boundary_edges)


def test_write_read_round_trip(small_mesh):
    buf = io.StringIO()
    write_mesh(small_mesh, buf)
    text = buf.getvalue()
    assert text.startswith("# cpwloss-mesh 1\nnodes ")
    back = read_mesh(io.StringIO(text))
    assert np.allclose(back.nodes, small_mesh.nodes, rtol=1e-11, atol=1e-12)
    assert np.array_equal(back.triangles, small_mesh.triangles)
    assert np.array_equal(back.tags, small_mesh.tags)
    assert np.array_equal(back.boundary_edges, small_mesh.boundary_edges)
    assert np.array_equal(back.boundary_tags, small_mesh.boundary_tags)


def test_sliver_region_reported():
    regions = [Region(box(0, 0, 1, 1e-9), Tag.SUBSTRATE, "film"),
               Region(box(0, 1e-9, 1, 1), Tag.VACUUM, "gap")]
    with pytest.raises(MeshError, match="region 0"):
        generate_mesh(_square(regions=regions), RefinementPolicy(h_max=0.5, h_edge=0.01))


@pytest.mark.parametrize("kw", [dict(h_edge=2.0, h_max=1.0), dict(grading=1.0), dict(grading=2.5),
                                dict(layer_elements=1), dict(h_edge=0.0)])
def test_policy_invariants(kw):
    with pytest.raises(PreconditionError):
        RefinementPolicy(**kw)


def test_refine_preconditions(small_mesh):
    with pytest.raises(PreconditionError):
        refine_mesh(small_mesh, np.ones(3), 0.5)
    with pytest.raises(PreconditionError):
        refine_mesh(small_mesh, np.ones(small_mesh.n_triangles), 0.0)
