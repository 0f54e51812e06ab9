import numpy as np
import pytest
import scipy.sparse as sp
from scipy.constants import epsilon_0
from shapely.geometry import box

from cpwloss.errors import PreconditionError, SolverError
from cpwloss.geometry import CpwGeometry, Region, RegionMap, Tag, build_cross_section, parallel_plate
from cpwloss.mesh import Boundary, RefinementPolicy, generate_mesh, uniform_refine
from cpwloss.solver import (RESIDUAL_TOL, _spd_solve, assemble, dirichlet_values, energy_integral,
                            interpolate_potential, solve_electrostatic, standard_permittivities,
                            surface_field_trace)

PLATE = RefinementPolicy(h_max=0.5, h_edge=0.5, grading=1.5)


def test_parallel_plate_capacitance():
    W, s, eps = 10.0, 1.0, 4.0
    m = generate_mesh(parallel_plate(W, s), PLATE)
    sol = solve_electrostatic(m, {Tag.SUBSTRATE: eps})
    assert sol.capacitance == pytest.approx(epsilon_0 * eps * W / s, rel=5e-3)
    # linear potential: every element carries the same field
    assert np.allclose(sol.e_field, [0.0, -1.0 / s], atol=1e-9)


def test_series_dielectrics_energy_split():
    t1, e1, t2, e2 = 0.3, 10.0, 0.7, 2.0
    m = generate_mesh(parallel_plate(5.0, t1 + t2, [(t1, Tag.LAYER_MS)]),
                      RefinementPolicy(h_max=0.1, h_edge=0.1, grading=1.5))
    sol = solve_electrostatic(m, {Tag.LAYER_MS: e1, Tag.SUBSTRATE: e2})
    ratio = energy_integral(sol, Tag.LAYER_MS) / energy_integral(sol, Tag.SUBSTRATE)
    assert ratio == pytest.approx((t1 / e1) / (t2 / e2), rel=5e-3)


def test_solution_invariants(small_solution):
    s = small_solution
    assert s.u_total == pytest.approx(sum(s.energy_by_region.values()), rel=1e-15)
    assert s.capacitance == pytest.approx(2 * s.u_total, rel=1e-15)
    assert all(v >= 0 for v in s.energy_by_region.values())
    assert s.u_total > 0
    assert s.residual <= RESIDUAL_TOL
    assert energy_integral(s, Tag.METAL) == 0.0
    assert sum(energy_integral(s, t) for t in s.energy_by_region) == pytest.approx(s.u_total, rel=1e-12)


def test_boundary_values_and_residual(small_solution):
    m = small_solution.mesh
    V = small_solution.potentials
    trace = np.unique(m.boundary_edges[m.boundary_tags == Boundary.CONDUCTOR_TRACE])
    ground = np.unique(m.boundary_edges[m.boundary_tags == Boundary.CONDUCTOR_GROUND])
    outer = np.unique(m.boundary_edges[m.boundary_tags == Boundary.OUTER])
    assert np.all(V[trace] == 1.0)
    assert np.all(V[ground] == 0.0) and np.all(V[outer] == 0.0)
    fixed, _ = dirichlet_values(m)
    K = assemble(m, small_solution.eps_r)
    r = (K @ V)[~fixed]
    assert np.linalg.norm(r) <= 1e-9 * np.linalg.norm((K @ np.where(fixed, V, 0))[~fixed])
    assert V.min() >= -1e-12 and V.max() <= 1 + 1e-12


def test_energy_integral_absent_region(small_solution):
    with pytest.raises(PreconditionError):
        energy_integral(small_solution, Tag.LAYER_SA)


def test_missing_conductor_is_singular():
    rm = RegionMap(regions=[Region(box(0, 0, 1, 1), Tag.SUBSTRATE)], domain=box(0, 0, 1, 1), outer="open")
    m = generate_mesh(rm, RefinementPolicy(h_max=0.5, h_edge=0.5))
    with pytest.raises(SolverError):
        solve_electrostatic(m, {Tag.SUBSTRATE: 1.0})


def test_missing_permittivity(small_mesh):
    with pytest.raises(PreconditionError, match="SUBSTRATE"):
        solve_electrostatic(small_mesh, {Tag.VACUUM: 1.0})


def test_spd_check_rejects_indefinite_and_asymmetric():
    A = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(SolverError, match="positive definite"):
        _spd_solve(A, np.ones(2))
    B = sp.csc_matrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises(SolverError, match="symmetric"):
        _spd_solve(B, np.ones(2))


def test_uniform_refinement_converges():
    geom = CpwGeometry(2.0, 1.0, t_metal=0.0)
    m = generate_mesh(build_cross_section(geom), RefinementPolicy(h_max=4.0, h_edge=0.05, grading=1.5))
    perms = standard_permittivities(geom.eps_substrate)
    caps = []
    for level in range(3):
        if level:
            m = uniform_refine(m)
        caps.append(solve_electrostatic(m, perms).capacitance)
    d = np.diff(caps)
    # energy minimisation: capacitance decreases monotonically under nested refinement
    assert np.all(d < 0)
    order = np.log(d[0] / d[1]) / np.log(2.0)
    extrapolated = caps[-1] + d[-1] / (2 ** order - 1)
    prev = caps[-2] + d[-2] / (2 ** order - 1)
    assert abs(extrapolated - prev) / extrapolated < 2e-3


@pytest.mark.parametrize("s", [0.5, 2.0])
def test_scale_invariance(s):
    geom = CpwGeometry(2.0, 1.0, 0.3, 100, t_metal=0.1)
    policy = RefinementPolicy(h_max=4.0, h_edge=0.04, grading=1.6)
    perms = standard_permittivities(geom.eps_substrate)
    c1 = solve_electrostatic(generate_mesh(build_cross_section(geom), policy), perms).capacitance
    cs = solve_electrostatic(generate_mesh(build_cross_section(geom.scaled(s)), policy.scaled(s)),
                             perms).capacitance
    assert cs == pytest.approx(c1, rel=5e-3)


def test_conductor_field_is_normal(small_solution):
    for b in (Boundary.CONDUCTOR_TRACE, Boundary.CONDUCTOR_GROUND):
        tr = surface_field_trace(small_solution, b)
        l2 = lambda v: np.sqrt(np.sum(tr.length * v ** 2))
        assert l2(tr.e_par) <= 1e-3 * l2(tr.e_perp)


def _sa_sides(sol):
    tr = surface_field_trace(sol, "SA")
    sub, vac = tr.select("substrate"), tr.select("vacuum")
    assert np.array_equal(sub.edge_id, vac.edge_id)
    return sub, vac


def test_tangential_field_continuous(small_solution):
    sub, vac = _sa_sides(small_solution)
    l2 = lambda v: np.sqrt(np.sum(sub.length * v ** 2))
    assert l2(sub.e_par - vac.e_par) <= 0.01 * l2(0.5 * (sub.e_par + vac.e_par))


def _weak_fluxes(sol, nodes):
    """Nodal normal-D fluxes into the interface nodes from each side."""
    m = sol.mesh
    is_sub = np.isin(m.tags, (Tag.SUBSTRATE,))
    f_sub = assemble(m, np.where(is_sub, sol.eps_r, 0.0)) @ sol.potentials
    f_vac = assemble(m, np.where(is_sub, 0.0, sol.eps_r)) @ sol.potentials
    return f_sub[nodes], f_vac[nodes]


def test_normal_displacement_continuous(small_solution):
    m = small_solution.mesh
    sub, _ = _sa_sides(small_solution)
    edges, _ = m.edges()
    nodes = np.unique(edges[sub.edge_id])
    fixed, _ = dirichlet_values(m)
    nodes = nodes[~fixed[nodes]]
    assert len(nodes) > 10
    f_sub, f_vac = _weak_fluxes(small_solution, nodes)
    # flux leaving the substrate side enters the vacuum side
    assert np.linalg.norm(f_sub + f_vac) <= 0.02 * np.linalg.norm(f_sub)


def test_edgewise_normal_displacement_mismatch_shrinks(small_mesh, small_solution, small_geom):
    """Element-constant D jumps across the interface but the jump falls with h."""
    corners = small_mesh.region_map.corners

    def mismatch(sol):
        sub, vac = _sa_sides(sol)
        dist = np.min(np.linalg.norm(sub.midpoint[:, None] - corners[None], axis=2), axis=1)
        k = dist > 0.05
        Ds, Dv = sub.eps_r * sub.e_perp, vac.eps_r * vac.e_perp
        l2 = lambda v: np.sqrt(np.sum(sub.length[k] * v[k] ** 2))
        return l2(Ds - Dv) / l2(0.5 * (Ds + Dv))

    fine = solve_electrostatic(uniform_refine(small_mesh), standard_permittivities(small_geom.eps_substrate))
    assert mismatch(fine) < 0.75 * mismatch(small_solution)


def test_unknown_trace_target(small_solution):
    with pytest.raises(PreconditionError):
        surface_field_trace(small_solution, "XY")


def test_dirichlet_drive_reproduces_parent():
    t1, s = 0.3, 1.0
    rm = parallel_plate(4.0, s, [(t1, Tag.LAYER_MS)])
    m = generate_mesh(rm, RefinementPolicy(h_max=0.2, h_edge=0.2, grading=1.5))
    perms = {Tag.LAYER_MS: 10.0, Tag.SUBSTRATE: 2.0}
    free = solve_electrostatic(m, perms)
    driven = solve_electrostatic(m, perms, outer_potential=lambda xy: interpolate_potential(free, xy))
    assert np.allclose(driven.potentials, free.potentials, atol=1e-10)
    flux = solve_electrostatic(m, perms, outer_flux=lambda mid, n: np.zeros(len(mid)))
    assert np.allclose(flux.potentials, free.potentials, atol=1e-10)
    with pytest.raises(PreconditionError):
        solve_electrostatic(m, perms, outer_potential=lambda xy: 0 * xy[:, 0],
                            outer_flux=lambda mid, n: 0 * mid[:, 0])
