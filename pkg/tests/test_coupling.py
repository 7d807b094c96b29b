import numpy as np
import pytest

from qttfem.assembly import assemble_subdomain
from qttfem.coupling import (
    GlobalSystem,
    accumulate_interface_forces,
    apply_dirichlet,
    build_boundary_mask,
    build_connectivity,
    concat_blocks,
    default_gamma,
    interface_multiplicity,
    stack_components,
)
from qttfem.indexing import zorder_permutation
from qttfem.material import MaterialModel
from qttfem.mesh import SubdomainMesh
from qttfem.oracle import ConformingSystem, conforming_solve
from qttfem.topology import DomainTopology
from qttfem.ttcore import tt_contract, tt_matvec, tt_norm

MAT = MaterialModel(64.0, 0.0)
UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def row_of_squares(k, d, **kw):
    meshes = [SubdomainMesh(UNIT + [float(i), 0.0], d) for i in range(k)]
    return DomainTopology.from_subdomains(meshes, **kw)


def dense_pi_oracle(topology, m, p):
    """Coordinate/tie-range matching oracle for the connectivity matrix."""
    d = topology.d
    n = 1 << d
    perm = zorder_permutation(d)
    out = np.zeros((n * n, n * n))
    for (mm, im, jm), (pp, ip, jp) in topology.all_tied_pairs():
        if (mm, pp) == (m, p):
            out[im + n * jm, ip + n * jp] = 1.0
        elif (mm, pp) == (p, m):
            out[ip + n * jp, im + n * jm] = 1.0
    return out[np.ix_(perm, perm)]


# ------------------------------------------------------------- connectivity


@pytest.mark.parametrize("d", [1, 2, 3])
def test_connectivity_matches_coordinate_oracle(d):
    topo = row_of_squares(2, d)
    pi = build_connectivity(topo, 0, 1, "zorder")
    assert np.array_equal(tt_contract(pi), dense_pi_oracle(topo, 0, 1))
    assert tt_contract(pi).sum() == 1 << d


def test_connectivity_transpose_duality():
    topo = row_of_squares(3, 2)
    for m, p in [(0, 1), (1, 2)]:
        a = tt_contract(build_connectivity(topo, m, p, "zorder"))
        b = tt_contract(build_connectivity(topo, p, m, "zorder"))
        assert np.array_equal(a, b.T)


def test_connectivity_nonadjacent_zero():
    topo = row_of_squares(3, 2)
    pi = build_connectivity(topo, 0, 2, "zorder")
    assert tt_norm(pi) == 0.0


def test_connectivity_partial_tie_crack():
    topo = row_of_squares(2, 3, tie_overrides={(0, 1): (0.5, 1.0)})
    pi = tt_contract(build_connectivity(topo, 0, 1, "zorder"))
    assert np.array_equal(pi, dense_pi_oracle(topo, 0, 1))
    assert pi.sum() == 4  # j in {4..7} of 8 tied


def test_connectivity_reversed_orientation():
    # upper neighbor meshed rotated by 180 degrees: its local "top" side
    # coincides with the lower square's top, traversed the other way
    lower = SubdomainMesh(UNIT, 2)
    upper = SubdomainMesh(
        np.array([[1.0, 2.0], [0.0, 2.0], [0.0, 1.0], [1.0, 1.0]]), 2
    )
    topo = DomainTopology.from_subdomains([lower, upper])
    assert len(topo.interfaces) == 1
    assert topo.interfaces[0].reversed
    pi = tt_contract(build_connectivity(topo, 0, 1, "zorder"))
    assert np.array_equal(pi, dense_pi_oracle(topo, 0, 1))
    pi_t = tt_contract(build_connectivity(topo, 1, 0, "zorder"))
    assert np.array_equal(pi_t, pi.T)


def test_lshape_point_interface_connectivity():
    meshes = [
        SubdomainMesh(UNIT, 2),
        SubdomainMesh(UNIT + [1.0, 0.0], 2),
        SubdomainMesh(UNIT + [0.0, 1.0], 2),
    ]
    topo = DomainTopology.from_subdomains(meshes)
    assert len(topo.interfaces) == 2
    assert len(topo.point_interfaces) == 1
    pi = tt_contract(build_connectivity(topo, 1, 2, "zorder"))
    assert pi.sum() == 1.0
    assert np.array_equal(pi, dense_pi_oracle(topo, 1, 2))


def test_interface_multiplicity_counts():
    meshes = [
        SubdomainMesh(UNIT, 2),
        SubdomainMesh(UNIT + [1.0, 0.0], 2),
        SubdomainMesh(UNIT + [0.0, 1.0], 2),
    ]
    topo = DomainTopology.from_subdomains(meshes)
    d, n = 2, 4
    perm = zorder_permutation(d)
    inv = np.argsort(perm)
    mult = tt_contract(interface_multiplicity(topo, 0, "zorder"))[inv]
    grid = mult.reshape(n, n, order="F")
    # subdomain 0 ties: right side to 1, top side to 2 -> corner counts 2
    assert grid[n - 1, n - 1] == 2.0
    assert np.all(grid[n - 1, : n - 1] == 1.0)
    assert np.all(grid[: n - 1, n - 1] == 1.0)
    assert np.all(grid[: n - 1, : n - 1] == 0.0)


# -------------------------------------------------------------------- masks


def test_mask_all_free():
    mesh = SubdomainMesh(UNIT, 2)
    mx, my = build_boundary_mask(mesh, 2, "zorder")
    assert np.allclose(tt_contract(mx), 1.0)
    assert np.allclose(tt_contract(my), 1.0)


def test_mask_clamped_left_d1():
    mesh = SubdomainMesh(UNIT, 1, {"left": "clamped"})
    mx, my = build_boundary_mask(mesh, 1, "zorder")
    dx, dy = tt_contract(mx), tt_contract(my)
    # column i=0 nodes are (0,0) and (0,1): z indices 0 and 2
    assert np.array_equal(dx, [0.0, 1.0, 0.0, 1.0])
    assert np.array_equal(dy, [0.0, 1.0, 0.0, 1.0])
    assert int(dx.sum() + dy.sum()) == 4  # 4 constrained of 8 DOFs


def test_mask_roller_right():
    mesh = SubdomainMesh(UNIT, 2, {"right": "roller-x"})
    mx, my = build_boundary_mask(mesh, 2, "zorder")
    perm = zorder_permutation(2)
    inv = np.argsort(perm)
    gx = tt_contract(mx)[inv].reshape(4, 4, order="F")
    assert np.all(gx[3, :] == 0.0)
    assert np.all(gx[:3, :] == 1.0)
    assert np.allclose(tt_contract(my), 1.0)


def test_mask_idempotent():
    mesh = SubdomainMesh(UNIT, 2, {"left": "clamped", "bottom": "roller-y"})
    mx, my = build_boundary_mask(mesh, 2, "zorder")
    for m in (mx, my):
        dm = tt_contract(m)
        assert np.array_equal(dm * dm, dm)
        assert set(np.unique(dm)) <= {0.0, 1.0}


# -------------------------------------------------------------- stacking


def test_stack_components_block_layout():
    rng = np.random.default_rng(0)
    mesh = SubdomainMesh(UNIT, 2)
    sys_ = assemble_subdomain(mesh, MAT, "zorder", 1e-13)
    k, f = stack_components(
        sys_.kxx, sys_.kxy, sys_.kyx, sys_.kyy, sys_.fx, sys_.fy
    )
    dense = tt_contract(k)
    n = 16
    blocks = [[tt_contract(sys_.block(a, b)) for b in range(2)] for a in range(2)]
    expect = np.block(blocks)
    assert np.allclose(dense, expect, atol=1e-12)
    df = tt_contract(f)
    assert np.allclose(df[:n], tt_contract(sys_.fx))
    assert np.allclose(df[n:], tt_contract(sys_.fy))


def test_stack_zero_offdiagonal_is_block_diagonal():
    mesh = SubdomainMesh(UNIT, 1)
    sys_ = assemble_subdomain(mesh, MAT, "zorder", 1e-13)
    from qttfem.ttcore import TTMatrix

    zero = TTMatrix([np.zeros((1, 2, 2, 1))] * 2)
    k, _ = stack_components(sys_.kxx, zero, zero, sys_.kyy, sys_.fx, sys_.fy)
    dense = tt_contract(k)
    assert np.allclose(dense[:4, 4:], 0.0)
    assert np.allclose(dense[4:, :4], 0.0)


# ----------------------------------------------------- global concatenation


def solve_dense_global(gsys: GlobalSystem):
    k = tt_contract(gsys.K)
    f = tt_contract(gsys.f)
    return np.linalg.solve(k, f)


def tt_from_dense_global(gsys, u):
    from qttfem.ttcore import tt_decompose

    return tt_decompose(u, 0.0)


def gather_conforming(gsys, topo_ref, u_fields_ref):
    pass


def test_single_subdomain_global_equals_subdomain():
    d = 2
    mesh = SubdomainMesh(UNIT, d, {"left": "clamped"}, {"right": (1.0, 0.5)})
    topo = DomainTopology.from_subdomains([mesh])
    sys_ = assemble_subdomain(mesh, MAT, "zorder", 1e-13)
    gsys = concat_blocks([sys_], topo, ordering="zorder", epsilon=1e-13)
    k, f = stack_components(
        sys_.kxx, sys_.kxy, sys_.kyx, sys_.kyy, sys_.fx, sys_.fy
    )
    assert np.allclose(tt_contract(gsys.K), tt_contract(k), atol=1e-11)
    assert np.allclose(tt_contract(gsys.f), tt_contract(f), atol=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_two_subdomain_solution_matches_conforming(d):
    meshes = [
        SubdomainMesh(UNIT, d, {"left": "clamped"}),
        SubdomainMesh(
            UNIT + [1.0, 0.0], d, tractions={"right": (0.0, 1.0)}
        ),
    ]
    topo = DomainTopology.from_subdomains(meshes)
    systems = [assemble_subdomain(m, MAT, "zorder", 1e-13) for m in meshes]
    gsys = apply_dirichlet(
        concat_blocks(systems, topo, ordering="zorder", epsilon=1e-13),
        epsilon=1e-13,
    )
    u = solve_dense_global(gsys)

    ref_sys, u_ref = conforming_solve(topo, MAT)
    ref_fields = ref_sys.vector_to_fields(u_ref)

    from qttfem.ttcore import tt_decompose

    ut = tt_decompose(u, 0.0)
    scale = np.linalg.norm(u_ref)
    for m in range(2):
        got = gsys.subdomain_field(ut, m)
        assert np.linalg.norm(got - ref_fields[m]) <= 1e-8 * scale


def test_duplicated_interface_dofs_consistent():
    d = 2
    meshes = [
        SubdomainMesh(UNIT, d, {"left": "clamped"}),
        SubdomainMesh(UNIT + [1.0, 0.0], d, tractions={"right": (1.0, 0.0)}),
    ]
    topo = DomainTopology.from_subdomains(meshes)
    systems = [assemble_subdomain(m, MAT, "zorder", 1e-13) for m in meshes]
    gsys = apply_dirichlet(concat_blocks(systems, topo, epsilon=1e-13), epsilon=1e-13)
    u = solve_dense_global(gsys)
    from qttfem.ttcore import tt_decompose

    ut = tt_decompose(u, 0.0)
    f0 = gsys.subdomain_field(ut, 0)
    f1 = gsys.subdomain_field(ut, 1)
    assert np.allclose(f0[-1, :, :], f1[0, :, :], atol=1e-8 * abs(u).max())


def test_gamma_insensitivity():
    d = 2
    meshes = [
        SubdomainMesh(UNIT, d, {"left": "clamped"}),
        SubdomainMesh(UNIT + [1.0, 0.0], d, tractions={"right": (0.0, 1.0)}),
    ]
    topo = DomainTopology.from_subdomains(meshes)
    systems = [assemble_subdomain(m, MAT, "zorder", 1e-13) for m in meshes]
    g0 = default_gamma(systems)
    sols = []
    for gamma in (g0, 10 * g0):
        gsys = apply_dirichlet(
            concat_blocks(systems, topo, gamma=gamma, epsilon=1e-13),
            epsilon=1e-13,
        )
        sols.append(solve_dense_global(gsys))
    from qttfem.ttcore import tt_decompose

    a = concat_fields(gsys, sols[0])
    b = concat_fields(gsys, sols[1])
    assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(a)


def concat_fields(gsys, u_dense):
    from qttfem.ttcore import tt_decompose

    ut = tt_decompose(u_dense, 0.0)
    return np.concatenate(
        [gsys.subdomain_field(ut, m).ravel() for m in range(gsys.topology.q)]
    )


def test_interface_force_accumulation():
    d = 2
    meshes = [
        SubdomainMesh(UNIT, d),
        SubdomainMesh(UNIT + [1.0, 0.0], d, tractions={"right": (2.0, 0.0)}),
    ]
    topo = DomainTopology.from_subdomains(meshes)
    body = (0.0, -1.0)
    systems = [
        assemble_subdomain(m, MAT, "zorder", 1e-13, body_force=body)
        for m in meshes
    ]
    loads = accumulate_interface_forces(systems, topo, "zorder")
    # external traction on subdomain 1's right side: untouched by
    # accumulation on subdomain 0 beyond the shared-side body force
    ref_sys = ConformingSystem(topo, MAT, body_force=body)
    n = 1 << d
    perm = zorder_permutation(d)
    inv = np.argsort(perm)
    for m in range(2):
        ids = ref_sys.node_ids[m]
        for comp in range(2):
            got = tt_contract(loads[m][comp])[inv].reshape(n, n, order="F")
            ref = ref_sys.f[2 * ids + comp]
            # duplicated nodes carry the full conforming sum on both sides
            assert np.allclose(got, ref, atol=1e-12)


def test_zero_loads_stay_zero():
    topo = row_of_squares(2, 2)
    systems = [
        assemble_subdomain(m, MAT, "zorder", 1e-13) for m in topo.subdomains
    ]
    loads = accumulate_interface_forces(systems, topo, "zorder")
    for gx, gy in loads:
        assert tt_norm(gx) < 1e-14
        assert tt_norm(gy) < 1e-14


def test_concat_errors():
    topo = row_of_squares(2, 2)
    systems = [
        assemble_subdomain(m, MAT, "zorder", 1e-13) for m in topo.subdomains
    ]
    with pytest.raises(ValueError):
        concat_blocks(systems[:1], topo)
    with pytest.raises(ValueError):
        concat_blocks(systems, topo, gamma=-1.0)


def test_mask_application_idempotent_and_matches_elimination():
    d = 2
    mesh = SubdomainMesh(
        UNIT, d, {"left": "clamped", "bottom": "roller-y"},
        {"top": (0.5, 1.0)},
    )
    topo = DomainTopology.from_subdomains([mesh])
    systems = [assemble_subdomain(mesh, MAT, "zorder", 1e-13)]
    raw = concat_blocks(systems, topo, ordering="zorder", epsilon=1e-13)
    masked = apply_dirichlet(raw, epsilon=1e-13)
    twice = apply_dirichlet(masked, epsilon=1e-13)
    assert np.allclose(
        tt_contract(masked.K), tt_contract(twice.K), atol=1e-9
    )
    u = solve_dense_global(masked)
    # constrained DOFs decay to zero exactly
    tau = tt_contract(masked.mask)
    assert np.allclose(u[tau == 0.0], 0.0, atol=1e-12)
    # free部分 matches the eliminated conforming solve
    ref_sys, u_ref = conforming_solve(topo, MAT)
    fields_ref = ref_sys.vector_to_fields(u_ref)
    from qttfem.ttcore import tt_decompose

    ut = tt_decompose(u, 0.0)
    got = masked.subdomain_field(ut, 0)
    assert np.allclose(got, fields_ref[0], atol=1e-9 * abs(u_ref).max())


def test_cantilever_reaction_equilibrium():
    """Clamped-edge reactions balance the applied load."""
    d = 2
    mesh = SubdomainMesh(
        UNIT, d, {"left": "clamped"}, {"right": (0.0, 1.0)}
    )
    topo = DomainTopology.from_subdomains([mesh])
    sys_ = assemble_subdomain(mesh, MAT, "zorder", 1e-13)
    raw = concat_blocks([sys_], topo, ordering="zorder", epsilon=1e-13)
    masked = apply_dirichlet(raw, epsilon=1e-13)
    u = solve_dense_global(masked)
    # reaction = K_raw u - f_raw on constrained rows
    k_raw = tt_contract(raw.K)
    f_raw = tt_contract(raw.f)
    r = k_raw @ u - f_raw
    tau = tt_contract(masked.mask)
    # y-reactions (second component block) sum to -total applied y-load
    nn = k_raw.shape[0] // 2
    ry = r[nn:][tau[nn:] == 0.0]
    assert np.isclose(ry.sum(), -1.0, atol=1e-8)
