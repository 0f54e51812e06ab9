import math
from dataclasses import replace

import numpy as np
import pytest

from cpwloss.conformal import cpw_substrate_filling
from cpwloss.errors import PreconditionError
from cpwloss.geometry import CpwGeometry, InterfaceLayerSpec, Tag, build_cross_section, parallel_plate
from cpwloss.mesh import RefinementPolicy, generate_mesh
from cpwloss.participation import (LAYER_COMPONENTS, PAR_COMPONENTS, PERP_COMPONENTS, Method, corner_patches,
                                   default_policy, depth_sweep, participation_direct, participation_perturbative,
                                   rescale_thin_layer, saturation_depth, simulate, simulate_direct,
                                   sweep_geometries)
from cpwloss.solver import solve_electrostatic, standard_permittivities


@pytest.fixture(scope="module")
def standard_vector():
    # the (16, 8, 0.68) geometry at its measured sidewall angle, production settings
    return simulate(CpwGeometry(16, 8, 0.68, 100))


@pytest.fixture(scope="module")
def plain(small_solution, small_geom):
    return participation_perturbative(small_solution, InterfaceLayerSpec(10), small_geom, corner_correction=False)


def test_direct_needs_layers(small_solution):
    with pytest.raises(PreconditionError):
        participation_direct(small_solution)


def test_perturbative_rejects_layered_mesh():
    geom = CpwGeometry(1.0, 0.6, 0.3, 90, t_metal=0.15, domain_halfwidth=11, domain_height=22)
    spec = InterfaceLayerSpec(10)
    sol = solve_electrostatic(
        generate_mesh(build_cross_section(geom, spec), RefinementPolicy(h_max=2.2, h_edge=0.01, grading=2.0)),
        standard_permittivities(geom.eps_substrate, spec.eps_nom))
    with pytest.raises(PreconditionError):
        participation_perturbative(sol, spec, geom)
    p = participation_direct(sol, spec, geom)
    assert p.method is Method.DIRECT
    total = p.p_si + p.p_vac + p.interface_total
    assert total == pytest.approx(1.0, abs=1e-6)


def test_series_layer_oracle():
    t, eps_l, s_fill, eps_fill = 0.01, 10.0, 1.0, 11.7
    rm = parallel_plate(2.0, t + s_fill, [(t, Tag.LAYER_MS)])
    m = generate_mesh(rm, RefinementPolicy(h_max=0.25, h_edge=0.25, grading=1.5))
    sol = solve_electrostatic(m, {Tag.LAYER_MS: eps_l, Tag.SUBSTRATE: eps_fill})
    p = participation_direct(sol, InterfaceLayerSpec(10, eps_l))
    oracle = (t / eps_l) / (t / eps_l + s_fill / eps_fill)
    assert p.p_ms == pytest.approx(oracle, rel=1e-2)
    # uniform normal field: all of it is the perpendicular part
    assert p.p_ms_par <= 1e-9 * p.p_ms_perp


def test_untrenched_substrate_share():
    geom = CpwGeometry(16, 8, 0, 90, t_metal=0.0)
    sol = solve_electrostatic(generate_mesh(build_cross_section(geom), default_policy(geom)),
                              standard_permittivities(geom.eps_substrate))
    p = participation_perturbative(sol, InterfaceLayerSpec(0), geom)
    assert 0.90 <= p.p_si <= 0.93
    # half-space split of the ideal CPW
    assert p.p_si == pytest.approx(cpw_substrate_filling(11.7), rel=1e-2)


def test_zero_thickness_layers(small_solution, small_geom):
    p = participation_perturbative(small_solution, InterfaceLayerSpec(0), small_geom)
    assert all(getattr(p, c) == 0.0 for c in LAYER_COMPONENTS)


def test_perturbative_normalization(plain):
    assert plain.p_si + plain.p_vac == pytest.approx(1.0, abs=1e-6)
    assert plain.method is Method.PERTURBATIVE


def test_doubling_eps_nom_scales_exactly(small_solution, small_geom, plain):
    doubled = participation_perturbative(small_solution, InterfaceLayerSpec(10, 20), small_geom,
                                         corner_correction=False)
    for c in PERP_COMPONENTS:
        assert getattr(doubled, c) == pytest.approx(getattr(plain, c) / 2, rel=1e-12)
    for c in PAR_COMPONENTS:
        assert getattr(doubled, c) == pytest.approx(getattr(plain, c) * 2, rel=1e-12)


def test_thickness_scaling_without_correction(small_solution, small_geom, plain):
    half = participation_perturbative(small_solution, InterfaceLayerSpec(5), small_geom, corner_correction=False)
    for c in LAYER_COMPONENTS:
        assert getattr(half, c) == pytest.approx(getattr(plain, c) / 2, rel=1e-12)


def test_corner_correction_only_touches_layers(small_solution, small_geom, plain):
    corrected = participation_perturbative(small_solution, InterfaceLayerSpec(10), small_geom)
    assert corrected.p_si == plain.p_si and corrected.p_vac == plain.p_vac
    # first-order integrals miss the energy the layers gather at metal corners
    assert corrected.p_ma_perp > plain.p_ma_perp


def test_corner_correction_reduces_mesh_dependence(small_geom):
    spec = InterfaceLayerSpec(10)
    plain, corrected = [], []
    for h_edge in (0.02, 0.005):
        m = generate_mesh(build_cross_section(small_geom), RefinementPolicy(h_max=4.0, h_edge=h_edge, grading=1.5))
        sol = solve_electrostatic(m, standard_permittivities(small_geom.eps_substrate))
        plain.append(participation_perturbative(sol, spec, small_geom, corner_correction=False).p_ma_perp)
        corrected.append(participation_perturbative(sol, spec, small_geom).p_ma_perp)
    spread = lambda v: abs(v[1] - v[0]) / v[1]
    assert spread(corrected) < 0.5 * spread(plain)
    assert spread(corrected) < 0.02


def test_corner_patches_cover_corners(small_mesh):
    rm = small_mesh.region_map
    boxes = corner_patches(rm, 0.01)
    for c in rm.corners:
        assert sum(b[0] < c[0] < b[2] and b[1] < c[1] < b[3] for b in boxes) == 1
    for i, a in enumerate(boxes):
        for b in boxes[i + 1:]:
            assert a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1]


def test_rescale_identity(standard_vector):
    same = rescale_thin_layer(standard_vector, 10, 10)
    for c in (*LAYER_COMPONENTS, "p_si", "p_vac"):
        assert getattr(same, c) == pytest.approx(getattr(standard_vector, c), rel=1e-15)


def test_rescale_factors(standard_vector):
    ms = rescale_thin_layer(standard_vector, 2, 11.7)
    assert ms.p_ms_perp / standard_vector.p_ms_perp == pytest.approx(0.2 / 1.17, rel=1e-12)
    assert ms.p_ms_perp / standard_vector.p_ms_perp == pytest.approx(0.17094, abs=5e-6)
    sa = rescale_thin_layer(standard_vector, 2, 4)
    assert sa.p_sa_par / standard_vector.p_sa_par == pytest.approx(0.08, rel=1e-12)
    assert sa.p_si == standard_vector.p_si
    assert sa.layer_spec == InterfaceLayerSpec(2, 4)


@pytest.mark.parametrize("t, eps", [(0, 10), (-1, 10), (2, 0)])
def test_rescale_rejects_nonpositive(standard_vector, t, eps):
    with pytest.raises(PreconditionError):
        rescale_thin_layer(standard_vector, t, eps)


def test_dominance_on_standard_geometry(standard_vector):
    ratios = standard_vector.dominance()
    for name, r in ratios.items():
        assert r >= 5, f"{name} = {r:.3g}"


def test_components_in_unit_interval(standard_vector):
    for c in (*LAYER_COMPONENTS, "p_si", "p_vac"):
        assert 0 <= getattr(standard_vector, c) <= 1


def test_saturation_depth_rules():
    assert saturation_depth([3.0], [0.9]) == 3.0
    assert saturation_depth([1, 2, 3, 4], [0.9, 0.5, 0.401, 0.4]) == 3
    assert saturation_depth([1, 2, 3, 4], [0.9, 0.5, 0.5, 0.4]) == 4


def test_single_depth_sweep(small_geom, fast_policy):
    res = depth_sweep(small_geom, [0.5], policy=fast_policy)
    assert res.saturation_depth == 0.5
    cols, rows = res.table()
    assert len(rows) == 1 and cols[0] == "depth_um"


def test_sweep_geometries_share_domain(small_geom):
    geoms = sweep_geometries(replace(small_geom, phi=90.0), [0.1, 1.0, 10.0])
    assert len({g.domain_height for g in geoms}) == 1
    assert geoms[-1].domain_height >= 10 * (small_geom.w + 2 * small_geom.g) + 10.0
    with pytest.raises(PreconditionError):
        sweep_geometries(small_geom, [1.0, 0.5])


def test_sweep_monotone_components(small_geom, fast_policy):
    template = replace(small_geom, phi=90.0)
    res = depth_sweep(template, [0.15, 0.5, 1.5, 5.0], policy=fast_policy)
    for comp in ("p_ms_perp", "p_sa_par", "p_si"):
        v = np.array([getattr(p, comp) for p in res.participation])
        assert np.all(v[1:] <= v[:-1] * 1.02), comp


def test_sa_perpendicular_is_small(standard_vector):
    assert standard_vector.p_sa_perp < 0.2 * standard_vector.p_sa_par


def test_direct_helper_matches_layers():
    geom = CpwGeometry(1.0, 0.6, 0.3, 90, t_metal=0.15, domain_halfwidth=11, domain_height=22)
    p = simulate_direct(geom, InterfaceLayerSpec(10), RefinementPolicy(h_max=2.2, h_edge=0.01, grading=2.0))
    assert p.method is Method.DIRECT and p.p_ms_perp > 0 and p.p_sa_par > 0 and p.p_ma_perp > 0
    assert math.isclose(p.total + p.p_vac, 1.0, abs_tol=1e-6)
