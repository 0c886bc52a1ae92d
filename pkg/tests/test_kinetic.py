import numpy as np
import pytest

from radslab import kinetic as kn
from radslab import planck as pl
from radslab.errors import ConfigError, DispatchError
from radslab.grids import build_slab_mesh

SIGMA = np.pi**4 / 15.0


def equilibrium_state(mesh, quad, model, T0):
    grid = model.freq_grid
    T = np.full(mesh.size, T0)
    I = np.broadcast_to(
        pl.group_emission(T, grid)[:, None, :], (mesh.size, quad.size, grid.size)
    ).copy()
    return kn.KineticState(mesh, quad, grid, I, T)


class TestScalingRegime:
    def test_scaling_lengths(self):
        reg = kn.ScalingRegime(0.1, beta=-1.0, gamma=0.0)
        assert reg.ell_A == pytest.approx(0.1)
        assert reg.ell_S == pytest.approx(1.0)
        assert reg.ell_M == pytest.approx(0.1)
        assert reg.ell_T == pytest.approx(0.1)
        assert reg.tau_h == pytest.approx(10.0)

    def test_heat_parameter_thick_absorption(self):
        reg = kn.ScalingRegime(0.1, beta=2.0, gamma=-1.0)
        assert reg.ell_T == pytest.approx(0.1 ** (-0.5))
        assert reg.tau_h == pytest.approx(100.0)  # ell_A when ell_T > 1

    def test_thermalization_length_formula(self):
        for beta in (-1.0, -0.5, 0.0, 0.5, 1.0, 2.0):
            reg = kn.ScalingRegime(0.05, beta=beta, gamma=-1.0)
            assert reg.ell_T == pytest.approx(0.05 ** ((1.0 - beta) / 2.0))

    def test_inadmissible_pair_rejected(self):
        with pytest.raises(ConfigError):
            kn.ScalingRegime(0.1, beta=0.0, gamma=0.0)

    def test_classification_matches_table(self):
        eps = 0.05
        assert kn.ScalingRegime(eps, -1.0, 0.0).classification() == "eq_absorption"
        assert kn.ScalingRegime(eps, -1.0, -1.0).classification() == "eq_combined"
        assert kn.ScalingRegime(eps, 0.0, -1.0).classification() == "eq_scattering"
        assert kn.ScalingRegime(eps, 1.0, -1.0).classification() == "noneq_critical"
        assert kn.ScalingRegime(eps, 2.0, -1.0).classification() == "noneq_supercritical"

    def test_power_law_needs_kappa(self):
        with pytest.raises(ConfigError):
            kn.ScalingRegime(0.1, -1.0, 0.0, "power_law")
        reg = kn.ScalingRegime(0.1, -1.0, 0.0, "power_law", kappa=2.0)
        assert reg.light_speed == pytest.approx(100.0)


class TestBoundarySource:
    def test_planckian_sample(self, quad16):
        m = pl.grey_constant(1.0, 0.0)
        g = kn.planckian_source(1.3)
        table = g.sample(0.0, quad16, m.freq_grid)
        assert np.allclose(table, SIGMA * 1.3**4)

    def test_beam_spectral_mass(self, quad16, grid64):
        g = kn.beam_source(0.8, 0.3, 2.0)
        table = g.sample(0.0, quad16, grid64)
        # unit spectral mass per direction times the angular profile
        mass = grid64.integrate(table)
        profile = 2.0 * np.exp(-0.5 * ((quad16.mu - 0.8) / 0.3) ** 2)
        assert np.allclose(mass, profile, rtol=1e-12)

    def test_fast_ramp_rejected(self):
        with pytest.raises(ConfigError):
            kn.BoundarySource("planckian", {"T": 1.0, "ramp": 100.0})

    def test_vacuum(self, quad16):
        g = kn.vacuum_source()
        assert g.sample(0.0, quad16, pl.grey_constant(1.0, 0.0).freq_grid).max() == 0.0


class TestSweep:
    def test_single_cell_attenuation(self, quad16):
        # pure absorption, unit opacity, incoming 1: outgoing exp(-dx/mu)
        sigma = np.array([[1.0]])
        q = np.zeros((1, quad16.size, 1))
        inflow = np.ones((quad16.size, 1))
        none = np.zeros((quad16.size, 1))
        _, faces = kn.exponential_sweep(np.array([0.5]), quad16.mu, sigma, q, inflow, none)
        pos = quad16.mu > 0
        assert np.abs(faces[1, pos, 0] - np.exp(-0.5 / quad16.mu[pos])).max() < 1e-14

    def test_equilibrium_source_invariance(self, quad16):
        # sigma I = q with q/sigma = B: any inflow B stays B
        B = 2.2
        sigma = np.full((5, 1), 3.0)
        q = np.full((5, quad16.size, 1), 3.0 * B)
        inflow = np.full((quad16.size, 1), B)
        bar, faces = kn.exponential_sweep(np.full(5, 0.2), quad16.mu, sigma, q, inflow, inflow)
        assert np.abs(bar - B).max() < 1e-14
        assert np.abs(faces - B).max() < 1e-14

    def test_vacuum_streaming(self, quad16):
        sigma = np.zeros((3, 1))
        q = np.zeros((3, quad16.size, 1))
        none = np.zeros((quad16.size, 1))
        bar, _ = kn.exponential_sweep(np.full(3, 0.1), quad16.mu, sigma, q, none, none)
        assert bar.max() == 0.0


class TestTransportSweepOp:
    def test_equilibrium_invariance_single_sweep(self, quad16):
        mesh = build_slab_mesh(20)
        m = pl.grey_constant(1.0, 0.0)
        reg = kn.ScalingRegime(0.2, -1.0, 0.0)
        st = equilibrium_state(mesh, quad16, m, 1.3)
        g = kn.planckian_source(1.3)
        out = kn.transport_sweep(st, reg, m, g, g)
        assert np.abs(out.I - st.I).max() < 1e-13

    def test_vacuum_sweep_vanishes(self, quad16):
        mesh = build_slab_mesh(10)
        m = pl.grey_constant(1.0, 0.0)
        reg = kn.ScalingRegime(0.2, -1.0, 0.0)
        st = equilibrium_state(mesh, quad16, m, 1.0)
        st.I[:] = 0.0
        out = kn.transport_sweep(st, reg, m, kn.vacuum_source(), kn.vacuum_source(),
                                 frozen_T=np.zeros(mesh.size))
        assert out.I.max() == 0.0


class TestStationary:
    def test_equilibrium_invariance(self, quad16):
        mesh = build_slab_mesh(40)
        m = pl.grey_constant(1.0, 0.5)
        reg = kn.ScalingRegime(0.1, -1.0, 0.0)
        st = kn.solve_stationary(reg, m, mesh, quad16, kn.planckian_source(1.4), kn.planckian_source(1.4))
        assert np.abs(st.T - 1.4).max() < 1e-9
        assert np.abs(st.I - SIGMA * 1.4**4).max() < 1e-8

    def test_vacuum_boundaries(self, quad16):
        mesh = build_slab_mesh(30)
        m = pl.grey_constant(1.0, 0.0)
        reg = kn.ScalingRegime(0.2, -1.0, 0.0)
        st = kn.solve_stationary(reg, m, mesh, quad16, kn.vacuum_source(), kn.vacuum_source())
        assert st.I.max() < 1e-12

    def test_maximum_principle_grey_pure_absorption(self, quad16):
        mesh = build_slab_mesh(80)
        m = pl.grey_constant(1.0, 0.0)
        reg = kn.ScalingRegime(0.1, -1.0, 0.0)
        st = kn.solve_stationary(reg, m, mesh, quad16, kn.planckian_source(1.0), kn.planckian_source(2.0))
        assert st.T.min() >= 1.0 - 1e-9
        assert st.T.max() <= 2.0 + 1e-9

    def test_flux_constancy(self, quad16):
        mesh = build_slab_mesh(80)
        m = pl.grey_constant(1.0, 0.5)
        reg = kn.ScalingRegime(0.1, -1.0, 0.0)
        st = kn.solve_stationary(reg, m, mesh, quad16, kn.planckian_source(1.0), kn.planckian_source(2.0))
        drift = np.abs(st.face_flux - st.face_flux.mean()).max()
        assert drift < 1e-7 * abs(st.face_flux.mean())

    def test_pure_scattering_rejected(self, quad16):
        mesh = build_slab_mesh(20)
        m = pl.grey_constant(1.0, 1.0)
        object.__setattr__(m, "alpha_a", lambda nu, x: 0.0 * nu + 0.0 * x)
        reg = kn.ScalingRegime(0.1, -1.0, -1.0)
        with pytest.raises(ValueError):
            kn.solve_stationary(reg, m, mesh, quad16, kn.planckian_source(1.0), kn.planckian_source(1.0))

    def test_light_mode_guard(self, quad16):
        mesh = build_slab_mesh(20)
        m = pl.grey_constant(1.0, 0.0)
        reg = kn.ScalingRegime(0.1, -1.0, 0.0, "instant")
        with pytest.raises(DispatchError):
            kn.solve_stationary(reg, m, mesh, quad16, kn.planckian_source(1.0), kn.planckian_source(1.0))

    def test_bulk_error_decreases_with_epsilon(self, quad16):
        # light two-point version of the acceptance refinement study
        m = pl.grey_constant(1.0, 0.0)
        margin = 0.2 * np.log(5.0)
        errs = []
        for eps in (0.2, 0.1):
            reg = kn.ScalingRegime(eps, -1.0, 0.0)
            mesh = build_slab_mesh(120)
            st = kn.solve_stationary(reg, m, mesh, quad16, kn.planckian_source(1.0), kn.planckian_source(2.0))
            oracle = (1.0 + 15.0 * mesh.centers) ** 0.25
            win = (mesh.centers > margin) & (mesh.centers < 1 - margin)
            errs.append(np.abs(st.T - oracle)[win].max())
        assert errs[1] < errs[0]


class TestTimeStepping:
    def test_instant_equilibrium_fixed_point(self, quad16):
        mesh = build_slab_mesh(30)
        m = pl.grey_constant(1.0, 0.5)
        reg = kn.ScalingRegime(0.1, -1.0, 0.0, "instant")
        st = equilibrium_state(mesh, quad16, m, 1.4)
        g = kn.planckian_source(1.4)
        out = kn.step_time_instant(st, 0.5, reg, m, g, g)
        assert np.abs(out.T - 1.4).max() < 1e-12
        assert np.abs(out.I - st.I).max() < 1e-12

    def test_instant_zero_divergence_keeps_T(self, quad16):
        # symmetric equilibrium: flux divergence vanishes, T unchanged
        mesh = build_slab_mesh(30)
        m = pl.grey_constant(1.0, 0.0)
        reg = kn.ScalingRegime(0.1, -1.0, 0.0, "instant")
        st = equilibrium_state(mesh, quad16, m, 0.9)
        g = kn.planckian_source(0.9)
        out = kn.step_time_instant(st, 5.0, reg, m, g, g)
        assert np.abs(out.T - 0.9).max() < 1e-12

    def test_finite_equilibrium_fixed_point(self, quad16):
        mesh = build_slab_mesh(30)
        m = pl.grey_constant(1.0, 0.5)
        for mode, kappa in (("unit", 0.0), ("power_law", 2.0)):
            reg = kn.ScalingRegime(0.1, -1.0, 0.0, mode, kappa)
            st = equilibrium_state(mesh, quad16, m, 1.4)
            g = kn.planckian_source(1.4)
            out = kn.step_time_finite(st, 0.05, reg, m, g, g)
            assert np.abs(out.T - 1.4).max() < 1e-11
            assert np.abs(out.I - st.I).max() < 1e-10

    def test_closed_box_conservation(self, quad16):
        mesh = build_slab_mesh(40)
        m = pl.grey_constant(1.0, 0.5)
        reg = kn.ScalingRegime(0.1, -1.0, 0.0, "unit")
        T0 = 1.0 + 0.4 * np.sin(2 * np.pi * mesh.centers)
        grid = m.freq_grid
        I0 = 1.2 * np.broadcast_to(
            pl.group_emission(T0, grid)[:, None, :], (mesh.size, quad16.size, 1)
        ).copy()
        st = kn.KineticState(mesh, quad16, grid, I0, T0.copy())
        refl = kn.reflecting_source()
        total = st.total_energy(reg.light_speed)
        for _ in range(10):
            st = kn.step_time_finite(st, 0.01, reg, m, refl, refl)
            new_total = st.total_energy(reg.light_speed)
            assert abs(new_total - total) < 1e-8 * abs(total)
            total = new_total

    def test_power_law_initial_relaxation_scale(self, quad16):
        # kappa = 2: a spatially uniform even-in-mu perturbation relaxes on
        # the fast scale eps^(2+kappa)/alpha_a, matching the frozen-T
        # absorption layer's closed form
        eps, kappa = 0.1, 2.0
        mesh = build_slab_mesh(8)
        m = pl.grey_constant(1.0, 0.1)
        reg = kn.ScalingRegime(eps, -1.0, 0.0, "power_law", kappa)
        T0 = 1.0
        B0 = SIGMA * T0**4
        P2 = 0.5 * (3 * quad16.mu**2 - 1)
        I0_dir = B0 * (1.0 + 0.4 * P2)
        I0 = np.broadcast_to(I0_dir[None, :, None], (mesh.size, quad16.size, 1)).copy()
        st = kn.KineticState(mesh, quad16, m.freq_grid, I0, np.full(mesh.size, T0))
        refl = kn.reflecting_source()
        scale = eps ** (2.0 + kappa)
        dt = 0.5 * scale
        from radslab import initial_layers as il

        # case-(i) layer: scattering enters only at relative order eps here
        var = il.InitialLayerVariant("absorption", "power_law")
        closed = il.closed_form_initial_layer(var, I0_dir[:, None], T0, m, quad16)
        for step in range(1, 7):
            st = kn.step_time_finite(st, dt, reg, m, refl, refl)
            tau = step * dt / scale
            expect = closed(tau)
            err = np.abs(st.I[4] - expect).max() / B0
            assert err < 10.0 * eps, (step, err)

    def test_instant_matches_parabolic_limit(self, quad16):
        # grey regime 1.1: quasi-static kinetic trajectory tracks the
        # diffusion-limit stepper within O(eps) + O(dt)
        from radslab import diffusion as df
        from radslab.scattering import discretize_scattering, isotropic_kernel

        eps, dt, steps = 0.05, 0.05, 8
        mesh = build_slab_mesh(160)
        m = pl.grey_constant(1.0, 0.0)
        reg = kn.ScalingRegime(eps, -1.0, 0.0, "instant")
        g_l, g_r = kn.planckian_source(1.0), kn.planckian_source(1.6)
        st = equilibrium_state(mesh, quad16, m, 1.0)
        op = discretize_scattering(isotropic_kernel(), quad16)
        d_eff = df.effective_coefficient("eq_absorption", m, mesh, op)
        dstate = df.DiffusionState(mesh, np.full(mesh.size, 1.0), d_eff)
        for _ in range(steps):
            st = kn.step_time_instant(st, dt, reg, m, g_l, g_r)
            dstate = df.step_diffusion_time(dstate, dt, "eq_absorption", "instant_light", m, op, (1.0, 1.6))
        interior = (mesh.centers > 0.2) & (mesh.centers < 0.8)
        err = np.abs(st.T - dstate.T)[interior].max()
        assert err < 10.0 * (eps + dt)


class TestDeparture:
    def test_equilibrium_is_zero(self, quad16):
        mesh = build_slab_mesh(20)
        m = pl.grey_constant(1.0, 0.0)
        st = equilibrium_state(mesh, quad16, m, 1.2)
        dep, ani = kn.equilibrium_departure(st, m)
        assert dep.max() < 1e-14
        assert ani.max() < 1e-14

    def test_metric_separation(self, quad16):
        # isotropic but off-Planck: anisotropy zero, departure positive
        mesh = build_slab_mesh(20)
        m = pl.grey_constant(1.0, 0.0)
        st = equilibrium_state(mesh, quad16, m, 1.2)
        st.I = st.I * 1.5
        dep, ani = kn.equilibrium_departure(st, m)
        assert ani.max() < 1e-14
        assert dep.min() > 0.1


class TestIO:
    def test_csv_export(self, quad16, tmp_path):
        mesh = build_slab_mesh(10)
        m = pl.grey_constant(1.0, 0.0)
        st = equilibrium_state(mesh, quad16, m, 1.0)
        path = tmp_path / "state.csv"
        kn.write_state_csv(st, m, path)
        text = path.read_text().splitlines()
        assert text[0].startswith("# columns:")
        assert text[1] == "x,T,flux,departure,anisotropy"
        assert len(text) == 12

    def test_snapshot_roundtrip(self, quad16, tmp_path):
        mesh = build_slab_mesh(7)
        m = pl.grey_constant(1.0, 0.0)
        st = equilibrium_state(mesh, quad16, m, 1.1)
        st.I[3, 2, 0] = 9.5
        path = tmp_path / "state.snapshot"
        kn.write_snapshot(path, st)
        I, T = kn.read_snapshot(path)
        assert np.array_equal(I, st.I)
        assert np.array_equal(T, st.T)

    def test_snapshot_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.snapshot"
        path.write_bytes(b"not a snapshot")
        with pytest.raises(ValueError):
            kn.read_snapshot(path)
