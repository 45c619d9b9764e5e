import dataclasses

import numpy as np
import pytest

from ddrom.errors import NonConvergedError, SingularSystemError
from ddrom.fem import ParameterSample, SourceSpec, SourceTerm, TimeScheme, assemble_operators
from ddrom.fom import (
    DnConfig,
    InterfaceTransfer,
    SnapshotSet,
    dn_solve_fom,
    dn_solve_fom_unsteady,
    generate_snapshots,
    monolithic_solve,
    solve_global,
    subdomain_node_maps,
    twin_solve,
)
from ddrom.mesh import BoxGeometry, build_global_mesh
from ddrom.problems import Problem, discretize, heat_analog

from conftest import TOL, mu_grid
from oracles import dn_1d_laplace


def rod_problem(geom, left=0.0, right=1.0, source="zero", cells=4):
    return Problem("diffusion_reaction", geom, (cells,), (cells,), source=source, dirichlet_values={"x-": left, "x+": right})


def test_1d_contraction_matches_closed_form(rod_geometry):
    disc = discretize(rod_problem(rod_geometry))
    st = dn_solve_fom(disc.slave, disc.master, ParameterSample(1.0, 0.0), DnConfig(0.25, 1e-12, 100))
    assert st.converged
    lam = dn_1d_laplace(0.25, 0.0, st.iters)
    expected_gap = 2 * np.abs(lam[: st.iters] - 0.5)
    np.testing.assert_allclose(st.gap_history, expected_gap, rtol=1e-10, atol=1e-14)
    ratios = np.array(st.gap_history[1:]) / np.array(st.gap_history[:-1])
    np.testing.assert_allclose(ratios, 0.5, atol=1e-8)
    assert st.u_gamma1[0] == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("omega", [0.1, 0.4, 0.6])
def test_1d_contraction_other_omegas(rod_geometry, omega):
    disc = discretize(rod_problem(rod_geometry))
    st = dn_solve_fom(disc.slave, disc.master, ParameterSample(1.0, 0.0), DnConfig(omega, 1e-12, 500))
    h = np.array(st.gap_history)
    h = h[h > 1e-8]  # ratios below this are round-off dominated
    np.testing.assert_allclose(h[1:] / h[:-1], abs(1 - 2 * omega), atol=1e-6)


def test_zero_data_converges_immediately(rod_geometry, dn_cfg):
    disc = discretize(rod_problem(rod_geometry, right=0.0))
    st = dn_solve_fom(disc.slave, disc.master, ParameterSample(1.0, 1.0), dn_cfg)
    assert st.iters == 1 and st.converged
    assert not np.any(st.u1_full) and not np.any(st.u2_full)


def test_monolithic_1d_linear_exact(rod_geometry):
    mesh, u = monolithic_solve(rod_problem(rod_geometry), ParameterSample(1.0, 0.0))
    np.testing.assert_allclose(u, mesh.nodes[:, 0], atol=1e-14)


def test_reaction_limit_gives_constant():
    geom = BoxGeometry((0.0, 0.0), (1.0, 1.0), 0.5)
    mesh = build_global_mesh(geom, (3, 4), (3, 4))
    c = 2.5
    spec = SourceSpec("bc", (SourceTerm(lambda x: np.full(x.shape[:-1], c), lambda mu, t: mu.beta),))
    ops = assemble_operators(mesh, spec, {})
    mu = ParameterSample(1.0, 1e4)
    u = solve_global(ops, (mu.alpha, mu.beta), ops.load(mu))
    np.testing.assert_allclose(u, c, rtol=1e-12)


def test_matches_monolithic(conforming_disc, dn_cfg):
    d = conforming_disc
    for mu in mu_grid(4, seed=3):
        st = dn_solve_fom(*d.slave_res, mu, dn_cfg)
        assert st.converged
        mesh, u = monolithic_solve(d.problem, mu)
        m1, m2 = subdomain_node_maps(d.problem, d.slave, d.master, mesh)
        assert np.abs(u[m1] - st.u1_full).max() <= 1e2 * TOL
        assert np.abs(u[m2] - st.u2_full).max() <= 1e2 * TOL


def test_monotone_gap_after_third_iteration(conforming_disc, dn_cfg):
    for mu in mu_grid(5, seed=7):
        h = np.array(dn_solve_fom(*conforming_disc.slave_res, mu, dn_cfg).gap_history)
        assert np.all(np.diff(h[3:]) <= 0)


def test_residual_consistency_and_flux_balance(conforming_disc, dn_cfg):
    ops1, ops2 = conforming_disc.slave_res
    st = dn_solve_fom(ops1, ops2, ParameterSample(2.0, 5.0), dn_cfg)
    r1 = st.r_gamma1
    assert np.linalg.norm(ops1.M_gamma @ st.z_gamma1 - r1) <= 1e-12 * np.linalg.norm(r1)
    assert np.linalg.norm(st.r_gamma2 + r1) <= 1e-12 * np.linalg.norm(r1)
    np.testing.assert_array_equal(st.u_gamma1, st.u1_full[ops1.index_sets.gamma])
    np.testing.assert_array_equal(st.u_gamma2, st.u2_full[ops2.index_sets.gamma])


def test_nonconforming_transfer_flux_balance(nonconforming_disc, dn_cfg):
    d = nonconforming_disc
    tr = InterfaceTransfer.nearest_node(d.slave.mesh, d.master.mesh)
    assert not tr.conforming
    st = dn_solve_fom(d.slave, d.master, ParameterSample(3.0, 2.0, 4.0, 5.0), dn_cfg, transfer=tr)
    assert st.converged
    expected = -d.master.M_gamma @ (tr.R21 @ d.slave.solve_interface_mass(st.r_gamma1))
    assert np.linalg.norm(st.r_gamma2 - expected) <= 1e-12 * np.linalg.norm(expected)


def test_nonconforming_needs_transfer(nonconforming_disc, dn_cfg):
    with pytest.raises(ValueError, match="InterfaceTransfer"):
        dn_solve_fom(nonconforming_disc.slave, nonconforming_disc.master, ParameterSample(1.0), dn_cfg)


def test_non_converged_is_flagged(conforming_disc):
    st = dn_solve_fom(*conforming_disc.slave_res, ParameterSample(1.0, 1.0), DnConfig(0.25, 1e-10, 2))
    assert not st.converged and st.iters == 2 and len(st.gap_history) == 2


def test_initial_guess(conforming_disc, dn_cfg):
    ops1, ops2 = conforming_disc.slave_res
    mu = ParameterSample(2.0, 3.0)
    ref = dn_solve_fom(ops1, ops2, mu, dn_cfg)
    warm = dn_solve_fom(ops1, ops2, mu, dataclasses.replace(dn_cfg, initial_guess=ref.u_gamma2))
    assert warm.iters < 3
    with pytest.raises(ValueError):
        dn_solve_fom(ops1, ops2, mu, dataclasses.replace(dn_cfg, initial_guess=np.zeros(3)))


def test_dn_config_validation():
    with pytest.raises(ValueError):
        DnConfig(omega=0.0)
    with pytest.raises(ValueError):
        DnConfig(tol_interface=0.0)
    with pytest.raises(ValueError):
        DnConfig(max_iters=0)


def test_singular_subdomain(conforming_disc, dn_cfg):
    ops1, ops2 = conforming_disc.slave_res
    dead = dataclasses.replace(ops2, K=0 * ops2.K, M=0 * ops2.M)
    with pytest.raises(SingularSystemError):
        dn_solve_fom(ops1, dead, ParameterSample(1.0), dn_cfg)


# --- unsteady ------------------------------------------------------------------


def heat_disc(source="heat", n=4):
    p = heat_analog(n, refine=1)
    if source != "heat":
        p = Problem("heat", p.geometry, p.cells_slave, p.cells_master, source=source)
    return discretize(p)


def test_unsteady_zero_source(dn_cfg):
    d = heat_disc("zero")
    states = dn_solve_fom_unsteady(*d.slave_res, ParameterSample(1.0), dn_cfg, TimeScheme(0.1, 5))
    assert len(states) == 5
    assert all(s.iters == 1 and not np.any(s.u1_full) for s in states)


def test_unsteady_backward_euler_exact_in_time(dn_cfg):
    # u = t solves u_t - alpha lap u = 1 with insulated walls; BE is exact
    d = heat_disc("one")
    ts = TimeScheme(0.05, 6)
    states = dn_solve_fom_unsteady(*d.slave_res, ParameterSample(2.0), dn_cfg, ts)
    for n, s in enumerate(states, start=1):
        np.testing.assert_allclose(s.u1_full, ts.time(n), atol=1e-9)
        np.testing.assert_allclose(s.u2_full, ts.time(n), atol=1e-9)


def test_heat_gate_keeps_solution_zero(dn_cfg):
    d = heat_disc()
    ts = TimeScheme(0.05, 6)
    states = dn_solve_fom_unsteady(*d.slave_res, ParameterSample(1.0), dn_cfg, ts)
    for n, s in enumerate(states, start=1):
        if ts.time(n) <= 0.2:
            assert not np.any(s.u1_full) and not np.any(s.u2_full)
        else:
            assert np.any(s.u1_full)
        assert s.converged


# --- snapshots -------------------------------------------------------------------


def test_snapshot_shapes_and_determinism(nonconforming_disc, dn_cfg):
    d = nonconforming_disc
    mus = mu_grid(3, seed=1, sources=True)
    snaps = generate_snapshots(d, [mus[0], mus[1], mus[0], mus[2]], dn_cfg)
    assert snaps.n_columns == 4
    assert snaps.S1.shape[0] == d.slave.index_sets.n_internal
    assert snaps.S2.shape[0] == d.master.index_sets.n_internal
    assert snaps.S_D.shape[0] == d.slave.index_sets.n_gamma
    assert snaps.S_N.shape[0] == d.master.index_sets.n_gamma
    for S in (snaps.S1, snaps.S2, snaps.S_D, snaps.S_N):
        np.testing.assert_array_equal(S[:, 0], S[:, 2])


def test_snapshot_columns_come_from_matching_resolution(nonconforming_disc, dn_cfg):
    d = nonconforming_disc
    mu = ParameterSample(2.0, 3.0, 4.0, 5.0)
    snaps = generate_snapshots(d, [mu], dn_cfg)
    run_s, run_m = twin_solve(d, mu, dn_cfg)
    np.testing.assert_array_equal(snaps.S_D[:, 0], run_s[0].u_gamma1)
    np.testing.assert_array_equal(snaps.S2[:, 0], run_m[0].u2_full[d.master.index_sets.internal])
    # master primal residual solves M_G2 z = r_G2
    np.testing.assert_allclose(d.master.M_gamma @ snaps.S_N[:, 0], run_m[0].r_gamma2, atol=1e-13)


def test_unsteady_snapshot_count(dn_cfg):
    d = heat_disc()
    snaps = generate_snapshots(d, [ParameterSample(1.0), ParameterSample(2.0)], dn_cfg, TimeScheme(0.1, 4))
    assert snaps.n_columns == 8
    assert [p.t_index for p in snaps.params] == [1, 2, 3, 4] * 2
    with pytest.raises(ValueError):
        generate_snapshots(d, [ParameterSample(1.0)], dn_cfg)


def test_non_converged_sample_aborts(conforming_disc):
    mu = ParameterSample(1.0, 1.0)
    with pytest.raises(NonConvergedError) as err:
        generate_snapshots(conforming_disc, [mu], DnConfig(0.25, 1e-10, 3))
    assert err.value.mu == mu and err.value.iters == 3


def test_snapshot_roundtrip(tmp_path, conforming_disc, dn_cfg):
    snaps = generate_snapshots(conforming_disc, mu_grid(2), dn_cfg)
    snaps.save(tmp_path / "s")
    manifest = (tmp_path / "s" / "manifest.json").read_text()
    assert '"format": "ddrom-snapshots/1"' in manifest
    raw = np.fromfile(tmp_path / "s" / "S1.bin", dtype="<f8")
    np.testing.assert_array_equal(raw, snaps.S1.ravel(order="F"))
    back = SnapshotSet.load(tmp_path / "s")
    for k in ("S1", "S2", "S_D", "S_N"):
        np.testing.assert_array_equal(getattr(back, k), getattr(snaps, k))
    assert back.params == snaps.params


def test_snapshot_column_mismatch():
    with pytest.raises(ValueError):
        SnapshotSet(np.zeros((2, 1)), np.zeros((2, 2)), np.zeros((1, 1)), np.zeros((1, 1)), [ParameterSample(1.0)], ("alpha",))
