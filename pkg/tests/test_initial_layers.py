import numpy as np
import pytest

from radslab import boundary_layers as bl
from radslab import initial_layers as il
from radslab import kinetic as kn
from radslab import planck as pl
from radslab.errors import DispatchError
from radslab.grids import build_slab_mesh
from radslab.scattering import (
    discretize_scattering,
    henyey_greenstein_kernel,
    isotropic_kernel,
    spectral_diagnostics,
)

SIGMA = np.pi**4 / 15.0
FOUR_PI = 4.0 * np.pi


def anisotropic_field(quad, scale=1.0):
    return scale * SIGMA * (1.0 + 0.5 * quad.nodes + 0.3 * np.abs(np.sin(3 * quad.nodes)))[:, None]


class TestDispatch:
    def test_instant_light_has_no_bulk_layer(self):
        with pytest.raises(DispatchError):
            il.InitialLayerVariant("absorption", "instant")

    def test_admissibility_by_regime(self):
        eps = 0.05
        reg = kn.ScalingRegime(eps, -1.0, 0.0, "unit")
        assert il.InitialLayerVariant.for_regime(reg).kind == "absorption"
        with pytest.raises(DispatchError):
            il.InitialLayerVariant.for_regime(reg, "scattering")
        reg2 = kn.ScalingRegime(eps, 0.0, -1.0, "unit")
        assert il.InitialLayerVariant.for_regime(reg2).kind == "scattering"
        assert il.InitialLayerVariant.for_regime(reg2, "thermalization").kind == "thermalization"
        reg4 = kn.ScalingRegime(eps, 2.0, -1.0, "power_law", kappa=1.0)
        assert il.InitialLayerVariant.for_regime(reg4).kind == "scattering"

    def test_power_law_freezes_temperature(self):
        var = il.InitialLayerVariant("absorption", "power_law")
        assert var.frozen_temperature


class TestClosedForms:
    def test_frozen_absorption_closed_scalar(self, quad16):
        # I0 = 0, frozen T: phi(tau) = B(T0)(1 - exp(-a tau))
        m = pl.grey_constant(1.0, 1.0)
        var = il.InitialLayerVariant("absorption", "power_law")
        traj = il.solve_initial_layer(var, np.zeros((quad16.size, 1)), 1.0, m, quad16, tau_max=20.0)
        expect = SIGMA * (1.0 - np.exp(-traj.tau))
        assert np.abs(traj.phi[:, 0, 0] - expect).max() < 1e-9

    def test_duhamel_matches_integrator(self, quad16):
        m = pl.grey_constant(1.0, 1.0)
        var = il.InitialLayerVariant("absorption", "unit")
        I0 = anisotropic_field(quad16, 2.0)
        traj = il.solve_initial_layer(var, I0, 1.2, m, quad16, tau_max=30.0)
        evaluate = il.closed_form_initial_layer(var, I0, traj.temperature_history(), m, quad16)
        for j in (10, 40, 70, 80):
            err = np.abs(evaluate(traj.tau[j]) - traj.phi[j]).max()
            assert err < 1e-8 * np.abs(traj.phi[j]).max()

    def test_series_matches_integrator_hg(self, quad16):
        m = pl.grey_constant(1.0, 1.0, henyey_greenstein_kernel(0.5))
        var = il.InitialLayerVariant("absorption_scattering", "unit")
        I0 = anisotropic_field(quad16)
        traj = il.solve_initial_layer(var, I0, 0.9, m, quad16, tau_max=10.0)
        evaluate = il.closed_form_initial_layer(var, I0, traj.temperature_history(), m, quad16)
        for j in (0, 30, 60, 80):
            err = np.abs(evaluate(traj.tau[j]) - traj.phi[j]).max()
            assert err < 1e-8 * max(np.abs(traj.phi[j]).max(), 1.0)

    def test_series_identity_at_zero(self, quad16):
        m = pl.grey_constant(1.0, 1.0)
        var = il.InitialLayerVariant("absorption_scattering", "unit")
        I0 = anisotropic_field(quad16)
        evaluate = il.closed_form_initial_layer(var, I0, lambda s: 0.9, m, quad16)
        assert np.array_equal(evaluate(0.0), I0)

    def test_rank_one_semigroup_isotropic_kernel(self, quad16):
        # isotropic kernel: phi(tau) = <I0> + exp(-s tau) (I0 - <I0>)
        m = pl.grey_constant(1.0, 1.3)
        var = il.InitialLayerVariant("scattering", "unit")
        I0 = anisotropic_field(quad16)
        evaluate = il.closed_form_initial_layer(var, I0, 1.0, m, quad16)
        mean = (quad16.weights @ I0) / FOUR_PI
        for tau in (0.0, 0.7, 3.0):
            expect = mean[None, :] + np.exp(-1.3 * tau) * (I0 - mean[None, :])
            assert np.abs(evaluate(tau) - expect).max() < 1e-10 * I0.max()


class TestIntegrator:
    def test_scattering_limit_is_angular_mean(self, quad16):
        m = pl.grey_constant(1.0, 1.0, henyey_greenstein_kernel(0.5))
        var = il.InitialLayerVariant("scattering", "unit")
        I0 = anisotropic_field(quad16)
        traj = il.solve_initial_layer(var, I0, 1.0, m, quad16)
        mean0 = (quad16.weights @ I0) / FOUR_PI
        assert traj.settled
        assert np.abs(traj.phi[-1] - mean0[None, :]).max() < 1e-6 * mean0.max()
        # angular mean preserved along the trajectory
        means = np.tensordot(traj.phi, quad16.weights, axes=([1], [0])) / FOUR_PI
        assert np.abs(means - mean0[None, :]).max() < 1e-10 * mean0.max()

    def test_semigroup_gap_bound(self, quad16):
        m = pl.grey_constant(1.0, 1.0, henyey_greenstein_kernel(0.5))
        op = discretize_scattering(m.kernel, quad16)
        gap = spectral_diagnostics(op)["gap"]
        var = il.InitialLayerVariant("scattering", "unit")
        I0 = anisotropic_field(quad16)
        traj = il.solve_initial_layer(var, I0, 1.0, m, quad16)
        mean0 = (quad16.weights @ I0) / FOUR_PI
        dev0 = np.abs(I0 - mean0[None, :]).max()
        for j, tau in enumerate(traj.tau):
            dev = np.abs(traj.phi[j] - mean0[None, :]).max()
            assert dev <= 2.0 * dev0 * np.exp(-gap * tau) + 1e-12 * mean0.max()

    def test_conservation_time_layer_2(self, quad16):
        m = pl.grey_constant(1.0, 1.0, henyey_greenstein_kernel(0.3))
        var = il.InitialLayerVariant("absorption_scattering", "unit")
        I0 = anisotropic_field(quad16)
        traj = il.solve_initial_layer(var, I0, 0.9, m, quad16, tau_max=20.0)
        invariant = traj.T + np.tensordot(traj.phi, quad16.weights, axes=([1], [0]))[:, 0]
        drift = np.abs(np.diff(invariant)).max() / abs(invariant[0])
        assert drift < 1e-10

    def test_absorption_settles_to_planck(self, quad16):
        m = pl.grey_constant(1.0, 1.0)
        var = il.InitialLayerVariant("absorption", "unit")
        I0 = anisotropic_field(quad16)
        traj = il.solve_initial_layer(var, I0, 1.2, m, quad16, tau_max=60.0)
        assert traj.settled
        B_inf = pl.group_emission(traj.T_inf, m.freq_grid)
        assert np.abs(traj.phi_inf - B_inf[None, :]).max() < 1e-6 * B_inf.max()

    def test_thermalization_layer_conserves(self, quad16):
        m = pl.grey_constant(1.0, 1.0)
        var = il.InitialLayerVariant("thermalization", "unit")
        phi0 = np.array([0.5 * SIGMA])
        traj = il.solve_initial_layer(var, phi0, 1.3, m, quad16, tau_max=40.0)
        invariant = traj.T + FOUR_PI * traj.phi[:, 0]
        assert np.abs(np.diff(invariant)).max() < 1e-10 * abs(invariant[0])
        assert traj.settled

    def test_power_law_keeps_temperature(self, quad16):
        m = pl.grey_constant(1.0, 1.0)
        var = il.InitialLayerVariant("absorption", "power_law")
        I0 = anisotropic_field(quad16)
        traj = il.solve_initial_layer(var, I0, 1.1, m, quad16, tau_max=30.0)
        assert np.array_equal(traj.T, np.full_like(traj.T, 1.1))
        assert traj.invariants["T_frozen"]
        B_inf = pl.group_emission(1.1, m.freq_grid)
        assert np.abs(traj.phi[-1] - B_inf[None, :]).max() < 1e-6 * B_inf.max()


class TestInitialBoundaryLayers:
    def test_equilibrium_data_constant_trajectory(self, quad16):
        m = pl.grey_constant(1.0, 0.5)
        reg = kn.ScalingRegime(0.05, -1.0, 0.0, "unit")
        g = kn.planckian_source(1.3)
        I0 = np.broadcast_to(pl.group_emission(1.3, m.freq_grid)[None, :], (quad16.size, 1)).copy()
        traj = il.solve_initial_boundary_layer(reg, I0, 1.3, g, m, quad16, tau_end=10.0, n_steps=15)
        assert np.abs(traj.I - SIGMA * 1.3**4).max() < 1e-10
        assert np.abs(traj.T - 1.3).max() < 1e-10

    def test_pure_scattering_limit_is_stationary_milne(self, quad16):
        m = pl.grey_constant(1.0, 1.0)
        reg = kn.ScalingRegime(0.05, 2.0, -1.0, "unit")
        g = kn.beam_source(0.8, 0.3, 30.0)
        I0 = np.full((quad16.size, 1), 10.0)
        traj = il.solve_initial_boundary_layer(
            reg, I0, 1.0, g, m, quad16, tau_end=30000.0, n_steps=60, domain=20.0, cells=160
        )
        assert traj.invariants["T_frozen"]
        oracle = bl.solve_milne_fixed_domain(
            bl.MilneVariant("scattering"), m, 0.0, quad16, g,
            traj.mesh.faces[-1], traj.mesh.size,
        )
        err = np.abs(traj.I - oracle.I).max() / np.abs(oracle.I).max()
        assert err < 1e-5

    def test_instant_light_quasi_static(self, quad16):
        m = pl.grey_constant(1.0, 0.5)
        reg = kn.ScalingRegime(0.05, -1.0, 0.0, "instant")
        g = kn.planckian_source(1.3)
        I0 = np.broadcast_to(pl.group_emission(1.3, m.freq_grid)[None, :], (quad16.size, 1)).copy()
        traj = il.solve_initial_boundary_layer(reg, I0, 1.3, g, m, quad16, tau_end=5.0, n_steps=8)
        assert np.abs(traj.T - 1.3).max() < 1e-10

    def test_thermalization_ibl_equilibrium(self, quad16):
        m = pl.grey_constant(1.0, 1.0)
        reg = kn.ScalingRegime(0.05, 0.0, -1.0, "unit")
        g = kn.planckian_source(1.3)
        I0 = np.broadcast_to(pl.group_emission(1.3, m.freq_grid)[None, :], (quad16.size, 1)).copy()
        traj = il.solve_initial_boundary_layer(
            reg, I0, 1.3, g, m, quad16, layer="thermalization", tau_end=15.0, n_steps=15
        )
        assert np.abs(traj.I[:, 0, 0] - SIGMA * 1.3**4).max() < 1e-10
        assert np.abs(traj.T - 1.3).max() < 1e-10

    def test_stationary_regime_has_no_ibl(self, quad16):
        m = pl.grey_constant(1.0, 0.5)
        reg = kn.ScalingRegime(0.05, -1.0, 0.0, "stationary")
        with pytest.raises(DispatchError):
            il.solve_initial_boundary_layer(reg, np.zeros((quad16.size, 1)), 1.0,
                                            kn.vacuum_source(), m, quad16)


class TestTransition:
    def test_supercritical_heat_flow_reaches_elliptic(self, quad16):
        from radslab import diffusion as df

        m = pl.grey_constant(1.0, 1.0)
        mesh = build_slab_mesh(50)
        op = discretize_scattering(isotropic_kernel(), quad16)
        IL, IR = np.array([SIGMA]), np.array([SIGMA * 16.0])
        phi_init = np.full((mesh.size, 1), float(SIGMA * 5.0))
        snaps = il.transition_to_stationary(
            "noneq_supercritical", m, mesh, op, phi_init, IL, IR,
            np.ones(mesh.size), dt=0.05, n_steps=300,
        )
        target = df.solve_nonequilibrium_stationary("noneq_supercritical", m, mesh, op, IL, IR)
        dist = [np.abs(s - target.phi0).max() for s in snaps]
        assert dist[-1] < 1e-10 * np.abs(target.phi0).max()
        assert all(a >= b - 1e-12 for a, b in zip(dist, dist[1:]))

    def test_critical_transition_frozen_T(self, quad16):
        m = pl.grey_constant(1.0, 1.0)
        mesh = build_slab_mesh(40)
        op = discretize_scattering(isotropic_kernel(), quad16)
        T_frozen = np.full(mesh.size, 1.2)
        IB = pl.group_emission(1.2, m.freq_grid)
        phi_init = np.broadcast_to(1.4 * IB, (mesh.size, 1)).copy()
        snaps = il.transition_to_stationary(
            "noneq_critical", m, mesh, op, phi_init, IB, IB, T_frozen, dt=0.1, n_steps=200,
        )
        # frozen emission B(T0) with matching Dirichlet data: phi0 -> B(T0)
        assert np.abs(snaps[-1] - IB[None, :]).max() < 1e-8 * IB.max()
