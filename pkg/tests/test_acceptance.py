"""Acceptance suite: one test per acceptance criterion, one printed line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import functools

import numpy as np
import pytest

from radslab import boundary_layers as bl
from radslab import diffusion as df
from radslab import harness
from radslab import initial_layers as il
from radslab import kinetic as kn
from radslab import planck as pl
from radslab import scattering as sc
from radslab.grids import (
    build_angular_quadrature,
    build_frequency_grid,
    build_slab_mesh,
)

SIGMA = np.pi**4 / 15.0
FOUR_PI = 4.0 * np.pi

QUAD = build_angular_quadrature("slab_polar", 16)


def criterion(name):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException:
                print(f"[acceptance] {name}: FAIL")
                raise
            print(f"[acceptance] {name}: PASS" + (f" ({detail})" if detail else ""))

        return run

    return wrap


@criterion("scattering spectral suite")
def test_scattering_spectral_suite():
    kernels = [("isotropic", sc.isotropic_kernel(), None)]
    kernels += [(f"hg{g}", sc.henyey_greenstein_kernel(g), g) for g in (0.1, 0.3, 0.5, 0.7, 0.9)]
    kernels += [("cutoff0.5", sc.cutoff_forward_kernel(0.5), None)]
    worst_second = 0.0
    for name, kernel, g in kernels:
        op = sc.discretize_scattering(kernel, QUAD)
        assert np.abs(op.matrix.sum(axis=1) - 1.0).max() < 1e-10, name
        d = sc.spectral_diagnostics(op)
        assert abs(d["leading_eigenvalue"] - 1.0) < 1e-10, name
        assert d["leading_eigenvector_flatness"] < 1e-8, name
        assert d["gap"] > 0.0, name
        if g is not None:
            worst_second = max(worst_second, abs(d["second_eigenvalue"] - g))
            assert abs(d["second_eigenvalue"] - g) < 1e-6, name
    return f"worst HG second-eigenvalue error {worst_second:.2e}"


@criterion("deflection identities")
def test_deflection_identities():
    mu = QUAD.nodes
    op_iso = sc.discretize_scattering(sc.isotropic_kernel(), QUAD)
    assert np.abs(sc.solve_deflection(op_iso, mu) - mu).max() < 1e-10
    worst = 0.0
    for g in (0.3, 0.5, 0.7):
        op = sc.discretize_scattering(sc.henyey_greenstein_kernel(g), QUAD)
        err = np.abs(sc.solve_deflection(op, mu) - mu / (1.0 - g)).max()
        worst = max(worst, err)
        assert err < 1e-8
        # diffusion tensor against an independent dense solve of the bordered system
        dxx = sc.diffusion_tensor(op)
        n = QUAD.size
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = np.eye(n) - op.matrix
        A[:n, n] = 1.0
        A[n, :n] = QUAD.weights
        dense = np.linalg.solve(A, np.concatenate([mu, [0.0]]))[:n]
        oracle = float(np.dot(QUAD.weights, mu * dense))
        assert abs(dxx - oracle) < 1e-10
        assert abs(dxx - (FOUR_PI / 3.0) / (1.0 - g)) < 1e-8
    return f"worst deflection error {worst:.2e}"


@criterion("planck suite")
def test_planck_suite():
    grid = build_frequency_grid("multigroup", 0.05, 30.0, 64)
    total = grid.integrate(pl.planck_B(grid.nodes, 1.0))
    assert abs(total - SIGMA) / SIGMA < 1e-6
    m = pl.MaterialModel(grid, sc.isotropic_kernel(),
                         lambda nu, x: 0.7 + 0 * nu + 0 * x,
                         lambda nu, x: 0 * nu + 0 * x)
    for xi in np.logspace(-6, 3, 50):
        T = pl.invert_F(xi, 0.0, m)
        assert abs(pl.opacity_F(T, 0.0, m) - xi) <= 1e-10 * xi
    T0 = 1.45
    I = np.broadcast_to(pl.group_emission(T0, grid), (QUAD.size, grid.size)).copy()
    T = pl.temperature_from_intensity(I, m, 0.0, weights=QUAD.weights)
    assert abs(T - T0) < 1e-10
    return f"Planck integral error {abs(total - SIGMA) / SIGMA:.2e}"


@criterion("equilibrium invariance of every solver")
def test_equilibrium_invariance_everywhere():
    T_b = 1.3
    m = pl.grey_constant(1.0, 0.5)
    mesh = build_slab_mesh(40)
    g = kn.planckian_source(T_b)
    B = SIGMA * T_b**4

    # kinetic stationary
    reg = kn.ScalingRegime(0.1, -1.0, 0.0)
    st = kn.solve_stationary(reg, m, mesh, QUAD, g, g)
    assert np.abs(st.T - T_b).max() < 1e-9 and np.abs(st.I - B).max() < 1e-8

    # kinetic time modes
    grid = m.freq_grid
    T0 = np.full(mesh.size, T_b)
    I0 = np.broadcast_to(pl.group_emission(T0, grid)[:, None, :], (mesh.size, QUAD.size, 1)).copy()
    base = kn.KineticState(mesh, QUAD, grid, I0, T0)
    out = kn.step_time_instant(base, 0.3, kn.ScalingRegime(0.1, -1.0, 0.0, "instant"), m, g, g)
    assert np.abs(out.T - T_b).max() < 1e-11
    for mode, kappa in (("unit", 0.0), ("power_law", 2.0)):
        out = kn.step_time_finite(base, 0.05, kn.ScalingRegime(0.1, -1.0, 0.0, mode, kappa), m, g, g)
        assert np.abs(out.T - T_b).max() < 1e-11

    # Milne variants
    m_full = pl.grey_constant(1.0, 1.0)
    for kind in ("absorption", "absorption_scattering", "scattering"):
        layer = bl.solve_milne(bl.MilneVariant(kind), m_full, 0.0, QUAD, g)
        assert np.abs(layer.I - B).max() < 1e-8, kind
        assert np.abs(layer.T - T_b).max() < 1e-9, kind

    # thermalization
    therm = bl.solve_thermalization(np.array([B]), m_full, 0.0, QUAD)
    assert np.abs(therm.I[:, 0, 0] - B).max() < 1e-10
    assert np.abs(therm.T - T_b).max() < 1e-10

    # initial layers (all admissible kinds, both finite light modes)
    Ieq = np.broadcast_to(pl.group_emission(T_b, grid)[None, :], (QUAD.size, 1)).copy()
    for light, kappa in (("unit", 0.0), ("power_law", 1.0)):
        for kind in ("absorption", "absorption_scattering", "scattering", "thermalization"):
            var = il.InitialLayerVariant(kind, light)
            traj = il.solve_initial_layer(var, Ieq, T_b, m_full, QUAD, tau_max=5.0)
            assert np.abs(traj.phi - B).max() < 1e-8, (kind, light)
            assert np.abs(traj.T - T_b).max() < 1e-8, (kind, light)

    # diffusion regimes, stationary and one step of each time mode
    op = sc.discretize_scattering(m_full.kernel, QUAD)
    for regime in df.EQUILIBRIUM_REGIMES:
        stt = df.solve_equilibrium_stationary(regime, m_full, mesh, op, T_b, T_b)
        assert np.abs(stt.T - T_b).max() < 1e-10, regime
        for mode in ("instant_light", "finite_light"):
            stepped = df.step_diffusion_time(stt, 0.2, regime, mode, m_full, op, (T_b, T_b))
            assert np.abs(stepped.T - T_b).max() < 1e-9, (regime, mode)
    IB = pl.group_emission(T_b, grid)
    for regime in df.NONEQUILIBRIUM_REGIMES:
        stn = df.solve_nonequilibrium_stationary(regime, m_full, mesh, op, IB, IB)
        assert np.abs(stn.T - T_b).max() < 1e-9, regime
        assert np.abs(stn.phi0 - IB[None, :]).max() < 1e-9 * B, regime
        for mode in ("instant_light", "finite_light"):
            stepped = df.step_diffusion_time(stn, 0.2, regime, mode, m_full, op, (IB, IB))
            assert np.abs(stepped.T - T_b).max() < 1e-9, (regime, mode)
    return "kinetic (4 modes), Milne (3), thermalization, initial layers (8), diffusion (5 regimes x 3 modes)"


@criterion("grey regime-1.1 stationary convergence")
def test_grey_convergence_order():
    m = pl.grey_constant(1.0, 0.5)
    eps_list = [0.2, 0.1, 0.05]
    margin = max(e * np.log(1.0 / e) for e in eps_list)
    errs = []
    for eps in eps_list:
        reg = kn.ScalingRegime(eps, -1.0, 0.0)
        mesh = build_slab_mesh(max(160, int(np.ceil(8.0 / eps))))
        st = kn.solve_stationary(reg, m, mesh, QUAD, kn.planckian_source(1.0), kn.planckian_source(2.0))
        oracle = (1.0 + 15.0 * mesh.centers) ** 0.25
        win = (mesh.centers > margin) & (mesh.centers < 1.0 - margin)
        errs.append(float(np.abs(st.T - oracle)[win].max()))
    assert all(a > b for a, b in zip(errs, errs[1:])), errs
    order = float(np.polyfit(np.log(eps_list), np.log(errs), 1)[0])
    assert order >= 0.8, (errs, order)
    return f"Linf errors {['%.4f' % e for e in errs]}, fitted order {order:.2f}"


@criterion("Milne isotropization")
def test_milne_isotropization():
    m = pl.grey_constant(1.0, 1.0)
    beam = kn.beam_source(0.8, 0.3, 30.0)
    layer = bl.solve_milne(bl.MilneVariant("scattering"), m, 0.0, QUAD, beam)
    assert layer.certificate["tail_anisotropy"] < 1e-3
    assert layer.anisotropy()[-1] < 1e-3
    assert layer.certificate["doubling_delta"] <= 1e-5
    # bit-exact independence of the intensity profile from alpha_a
    lay_a = bl.solve_milne(bl.MilneVariant("scattering"), pl.grey_constant(0.2, 1.0), 0.0, QUAD, beam)
    lay_b = bl.solve_milne(bl.MilneVariant("scattering"), pl.grey_constant(5.0, 1.0), 0.0, QUAD, beam)
    assert np.array_equal(lay_a.I, lay_b.I)
    return (
        f"tail anisotropy {layer.certificate['tail_anisotropy']:.1e}, "
        f"doubling delta {layer.certificate['doubling_delta']:.1e}"
    )


@criterion("thermalization grey collapse and two-group constraint")
def test_thermalization_criterion():
    m = pl.grey_constant(1.0, 1.0)
    datum = 2.5
    layer = bl.solve_thermalization(np.array([datum]), m, 0.0, QUAD)
    assert np.abs(layer.I[:, 0, 0] - datum).max() < 1e-11
    grid2 = build_frequency_grid("multigroup", 0.5, 10.0, 2)
    m2 = pl.from_group_values(grid2, [2.0, 0.4], [1.0, 1.0])
    datum2 = pl.group_emission(1.5, grid2) * np.array([0.5, 1.8])
    layer2 = bl.solve_thermalization(datum2, m2, 0.0, QUAD)
    far = bl.thermal_far_field(layer2)
    a, _ = layer2.model.sample(0.0)
    constraint = abs(float(grid2.integrate(
        a[:, 0] * (pl.group_emission(far["T_inf"], grid2) - far["phi_inf"])
    )))
    assert constraint < 1e-9
    return f"two-group far-field constraint {constraint:.1e}"


@criterion("initial-layer closed forms")
def test_initial_layer_closed_forms():
    kernel = sc.henyey_greenstein_kernel(0.5)
    m = pl.grey_constant(1.0, 1.0, kernel)
    I0 = SIGMA * (1.0 + 0.5 * QUAD.nodes + 0.3 * np.abs(np.sin(3 * QUAD.nodes)))[:, None]

    # Duhamel (absorption) and H-series (absorption + scattering) vs Radau
    worst = 0.0
    for kind, tau_max in (("absorption", 30.0), ("absorption_scattering", 10.0)):
        var = il.InitialLayerVariant(kind, "unit")
        traj = il.solve_initial_layer(var, I0, 1.1, m, QUAD, tau_max=tau_max)
        evaluate = il.closed_form_initial_layer(var, I0, traj.temperature_history(), m, QUAD)
        for j in (5, 30, 60, 80):
            err = np.abs(evaluate(traj.tau[j]) - traj.phi[j]).max() / np.abs(traj.phi[j]).max()
            worst = max(worst, err)
            assert err < 1e-8, (kind, j)

    # semigroup vs integrator and the tau = 50/(alpha_s * gap) limit
    var = il.InitialLayerVariant("scattering", "unit")
    op = sc.discretize_scattering(kernel, QUAD)
    gap = sc.spectral_diagnostics(op)["gap"]
    traj = il.solve_initial_layer(var, I0, 1.0, m, QUAD, tau_max=50.0 / (1.0 * gap))
    evaluate = il.closed_form_initial_layer(var, I0, 1.0, m, QUAD)
    for j in (10, 40, 80):
        err = np.abs(evaluate(traj.tau[j]) - traj.phi[j]).max() / np.abs(traj.phi[j]).max()
        worst = max(worst, err)
        assert err < 1e-8
    mean0 = (QUAD.weights @ I0) / FOUR_PI
    assert np.abs(traj.phi[-1] - mean0[None, :]).max() < 1e-6 * mean0.max()

    # conservation along the (absorption + scattering) system
    var2 = il.InitialLayerVariant("absorption_scattering", "unit")
    traj2 = il.solve_initial_layer(var2, I0, 0.9, m, QUAD, tau_max=20.0)
    invariant = traj2.T + np.tensordot(traj2.phi, QUAD.weights, axes=([1], [0]))[:, 0]
    drift = float(np.abs(np.diff(invariant)).max()) / abs(invariant[0])
    assert drift < 1e-10
    return f"worst closed-form error {worst:.1e}, conservation drift {drift:.1e}"


@criterion("finite-light closed-box conservation")
def test_finite_light_conservation():
    mesh = build_slab_mesh(40)
    m = pl.grey_constant(1.0, 0.5)
    reg = kn.ScalingRegime(0.1, -1.0, 0.0, "unit")
    T0 = 1.0 + 0.4 * np.sin(2 * np.pi * mesh.centers)
    grid = m.freq_grid
    I0 = 1.2 * np.broadcast_to(
        pl.group_emission(T0, grid)[:, None, :], (mesh.size, QUAD.size, 1)
    ).copy()
    st = kn.KineticState(mesh, QUAD, grid, I0, T0.copy())
    refl = kn.reflecting_source()
    total = st.total_energy(reg.light_speed)
    worst = 0.0
    for _ in range(100):
        st = kn.step_time_finite(st, 0.01, reg, m, refl, refl)
        new_total = st.total_energy(reg.light_speed)
        worst = max(worst, abs(new_total - total) / abs(total))
        total = new_total
    assert worst < 1e-8
    return f"worst per-step drift {worst:.1e} over 100 steps"


@criterion("Table-1 reproduction (grey presets + frequency-resolved nesting)")
def test_table1_reproduction(tmp_path):
    from radslab.config import load_config

    ini = tmp_path / "table.ini"
    ini.write_text("""
[experiment]
kind = regime_table
[regime]
epsilons = 0.05
[material]
preset = grey
alpha_a = 1.0
alpha_s = 1.0
[grids]
order = 16
cells = 200
[boundary]
left = beam:mu0=0.8,width=0.3,amplitude=0.03
right = beam:mu0=-0.8,width=0.3,amplitude=0.03
[time]
t_end = 0.3
t0 = 0.2
""")
    report = harness.run_regime_table(load_config(ini))
    assert not report.partial, report.failure
    r = report.regimes
    eps = 0.05
    # column 1: single layer, isotropization and thermalization coincide
    assert r["regime_1.1"]["classification"] == "equilibrium"
    assert r["regime_1.1"]["milne_present"]
    assert r["regime_1.1"]["thermal_kind"] == "coincident"
    # column 2 (grey run): equilibrium bulk with a Milne layer; the nested
    # second scale is a frequency-shape effect, checked below with two groups
    assert r["regime_2"]["classification"] == "equilibrium"
    assert r["regime_2"]["milne_present"]
    # column 4: no thermalization layer, non-equilibrium bulk, isotropic bulk
    assert r["regime_4"]["thermal_kind"] == "none"
    assert r["regime_4"]["bulk_departure"] > 0.1
    assert r["regime_4"]["bulk_anisotropy"] < 10.0 * eps
    assert r["regime_4"]["classification"] == "non_equilibrium"

    # regime-2 nesting with frequency resolution (same beta/gamma preset)
    grid2 = build_frequency_grid("multigroup", 0.5, 10.0, 2)
    m2 = pl.from_group_values(grid2, [3.0, 0.15], [1.0, 1.0])
    mesh = build_slab_mesh(240)
    gl = kn.beam_source(0.8, 0.3, 0.05)
    gr = kn.beam_source(-0.8, 0.3, 0.05)
    reg2 = kn.ScalingRegime(eps, -0.4, -1.0)
    st = kn.solve_stationary(reg2, m2, mesh, QUAD, gl, gr, kn.SolverOptions(max_outer=800))
    out = harness.classify_state(st, m2, reg2)
    assert out["thermal_kind"] == "nested"
    assert out["thermal_width"] >= 2.0 * out["milne_width"]
    return (
        f"regime-4 bulk departure {r['regime_4']['bulk_departure']:.2f}; "
        f"two-group widths milne {out['milne_width']:.3f} vs thermal {out['thermal_width']:.3f} "
        f"(ell_T = {reg2.ell_T:.3f})"
    )


@pytest.mark.xfail(
    strict=True,
    reason="spec defect: in a strictly grey material the stationary energy "
    "balance slaves B(T) to the angular mean, so the departure and anisotropy "
    "metrics coincide identically and the regime-2 thermalization layer has "
    "no grey observable (see the decisions ledger); the nested pattern is "
    "demonstrated with a two-group material in test_table1_reproduction",
)
def test_table1_regime2_nested_strict_grey():
    m = pl.grey_constant(1.0, 1.0)
    mesh = build_slab_mesh(240)
    gl = kn.beam_source(0.8, 0.3, 0.05)
    gr = kn.beam_source(-0.8, 0.3, 0.05)
    reg2 = kn.ScalingRegime(0.05, -0.4, -1.0)
    st = kn.solve_stationary(reg2, m, mesh, QUAD, gl, gr, kn.SolverOptions(max_outer=800))
    out = harness.classify_state(st, m, reg2)
    assert out["thermal_kind"] == "nested"
