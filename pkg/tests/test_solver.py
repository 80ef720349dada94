"""Solver checks: degeneration, residual order, slab machinery, growth."""
import dataclasses
import math

import numpy as np
import pytest

from gfsb.errors import (
    BlowupDetected,
    ConfigMismatch,
    GridMismatch,
    NoContraction,
    NonpositiveOrder,
    PreconditionViolated,
    TimeGridMismatch,
    ValidationError,
)
from gfsb.noise import NoiseConfig
from gfsb.solver import (
    EnhancedData,
    build_enhanced_data,
    continuous_dependence_probe,
    default_bundle,
    dependence_ladder,
    enhanced_difference,
    epsilon_convergence_study,
    gronwall_envelope,
    mittag_leffler,
    nonlinearity_audit,
    solve_mollified,
    solve_paracontrolled,
    solve_subcritical,
    zero_enhanced_data,
)
from gfsb.spectral import FourierField, Grid
from gfsb.trajectory import Trajectory
from gfsb.construct import TreeTrajectory
from gfsb.trees import RegularityParams

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")

PARAMS = RegularityParams(alpha=-0.2, b=0.5)


def _u0(grid, entries):
    modes = np.zeros(grid.n_modes, dtype=np.complex128)
    for i, v in enumerate(entries):
        modes[i] = v
    return FourierField(modes, grid)


def _ct_l2(modes):
    return float(np.max(np.sqrt(2.0 * np.sum(np.abs(modes) ** 2, axis=-1))))


# ------------------------------------------------------------ degeneration


def test_degenerate_inputs_reduce_to_direct_solve():
    grid = Grid(n_modes=16, gamma=2.0)
    cfg = NoiseConfig(gamma=2.0, epsilon=0.0, seed=0, dt=1e-3, t_end=0.1,
                      noise_scale=0.0)
    u0 = _u0(grid, (0.08 - 0.02j, 0.03 + 0.01j, -0.015j))
    direct = solve_mollified(cfg, u0)
    data = zero_enhanced_data(grid, direct.times, PARAMS)
    sub = solve_subcritical(data, None, u0, tol=1e-12)
    para = solve_paracontrolled(data, None, u0, tol=1e-12)
    assert _ct_l2(sub.reconstruct(data).modes - direct.modes) < 1e-12
    assert _ct_l2(para.reconstruct(data).modes - direct.modes) < 1e-12


def test_direct_solve_mild_residual_second_order():
    grid = Grid(n_modes=16, gamma=2.0)
    u0 = _u0(grid, (0.08 - 0.02j, 0.03 + 0.01j, -0.015j))
    residuals = []
    for dt in (4e-3, 2e-3, 1e-3):
        cfg = NoiseConfig(gamma=2.0, epsilon=0.0, seed=0, dt=dt, t_end=0.2,
                          noise_scale=0.0)
        traj = solve_mollified(cfg, u0)
        residuals.append(traj.meta["mild_residual"]["value"])
    assert residuals[0] == pytest.approx(9.40e-8, rel=1e-2)
    for r0, r1 in zip(residuals, residuals[1:]):
        assert 1.7 <= math.log2(r0 / r1) <= 2.3


def test_deterministic_solve_dissipates_energy():
    grid = Grid(n_modes=16, gamma=2.0)
    cfg = NoiseConfig(gamma=2.0, epsilon=0.0, seed=0, dt=1e-3, t_end=0.2,
                      noise_scale=0.0)
    traj = solve_mollified(cfg, _u0(grid, (0.08 - 0.02j, 0.03 + 0.01j)))
    energies = 2.0 * np.sum(np.abs(traj.modes) ** 2, axis=-1)
    assert energies[-1] < energies[0]
    assert np.all(np.diff(energies) <= 1e-15)


def test_transport_pairing_stays_at_roundoff():
    grid = Grid(n_modes=16, gamma=2.0)
    cfg = NoiseConfig(gamma=2.0, epsilon=0.0, seed=0, dt=1e-3, t_end=0.1,
                      noise_scale=0.0)
    traj = solve_mollified(cfg, _u0(grid, (0.08 - 0.02j, 0.03 + 0.01j)))
    assert nonlinearity_audit(traj)["max_abs"] < 1e-10


# ----------------------------------------------------- slabs and ansatz


@pytest.fixture(scope="module")
def slab_regime():
    grid = Grid(n_modes=32, gamma=1.75)
    cfg = NoiseConfig(gamma=1.75, epsilon=0.125, seed=4, dt=1e-3, t_end=0.35)
    u0 = _u0(grid, (0.05 - 0.01j, 0.02j))
    data = build_enhanced_data(cfg, grid, PARAMS)
    direct = solve_mollified(cfg, u0)
    return grid, cfg, u0, data, direct


def test_multi_slab_reconstruction_is_exact(slab_regime):
    grid, cfg, u0, data, direct = slab_regime
    sub = solve_subcritical(data, None, u0, tol=1e-12)
    para = solve_paracontrolled(data, None, u0, tol=1e-12)
    assert len(sub.diagnostics["slabs"]) == 4
    assert len(para.diagnostics["slabs"]) == 4
    assert _ct_l2(sub.reconstruct(data).modes - direct.modes) < 1e-9
    assert _ct_l2(para.reconstruct(data).modes - direct.modes) < 1e-9
    assert para.diagnostics["ansatz_residual"] < 1e-9
    for slab in sub.diagnostics["slabs"]:
        assert all(f < 1.0 for f in slab["factors"])


def test_closure_routes_agree_without_collapsing(slab_regime):
    grid, cfg, u0, data, _ = slab_regime
    exact = solve_paracontrolled(data, None, u0, tol=1e-12)
    fd = solve_paracontrolled(data, None, u0,
                              operators=default_bundle("finite-difference"),
                              tol=1e-12)
    assert exact.diagnostics["closure_route"] == "exact"
    assert fd.diagnostics["closure_route"] == "finite-difference"
    gap = _ct_l2(exact.reconstruct(data).modes - fd.reconstruct(data).modes)
    assert 1e-12 < gap < 1e-3


# ----------------------------------------------------------- growth tools


def test_mittag_leffler_classical_points():
    assert abs(mittag_leffler(1.0, 1.0) - math.e) < 1e-12
    assert mittag_leffler(2.0, 1.0) == pytest.approx(math.cosh(1.0),
                                                     rel=1e-12)
    for a in (0.5, 1.0, 1.7):
        assert mittag_leffler(a, 0.0) == 1.0
    with pytest.raises(NonpositiveOrder):
        mittag_leffler(0.0, 1.0)
    with pytest.raises(NonpositiveOrder):
        mittag_leffler(-1.0, 1.0)


def test_gronwall_envelope_closed_form_at_order_one():
    assert gronwall_envelope(2.0, 1.5, 1.0, 0.3) == pytest.approx(
        2.0 * math.exp(0.45), rel=1e-12)
    values = [gronwall_envelope(1.0, 2.0, 0.8, t)
              for t in (0.0, 0.1, 0.5, 1.0)]
    assert values[0] == 1.0
    assert all(b > a for a, b in zip(values, values[1:]))


# -------------------------------------------------------------- probes


def test_probe_identical_inputs_report_zero(slab_regime):
    grid, cfg, u0, data, _ = slab_regime
    probe = continuous_dependence_probe(data, data, u0, u0, 0.2)
    assert probe["difference"] == 0.0
    assert probe["ratio"] == 0.0


def test_probe_initial_data_perturbation(slab_regime):
    grid, cfg, u0, data, _ = slab_regime
    u0b = FourierField(u0.modes * 1.01, grid)
    probe = continuous_dependence_probe(data, data, u0, u0b, 0.2)
    assert probe["difference"] > 0.0
    # The sup sits at t = 0 where the gap equals the data gap exactly.
    assert probe["ratio"] == pytest.approx(1.0, abs=1e-9)


def test_probe_input_family_perturbation(slab_regime):
    grid, cfg, u0, data, _ = slab_regime
    other = build_enhanced_data(
        dataclasses.replace(cfg, seed=5), grid, PARAMS)
    probe = continuous_dependence_probe(data, other, u0, u0, 0.2)
    assert probe["data_difference"] > 0.0
    assert probe["ratio"] == pytest.approx(0.1285, rel=1e-2)


def test_dependence_ladder_shape_and_envelope(slab_regime):
    grid, cfg, u0, data, _ = slab_regime
    report = dependence_ladder(data, u0, 0.2, sizes=(1e-1, 1e-2, 1e-3))
    assert report["sizes"] == [1e-1, 1e-2, 1e-3]
    assert len(report["final_differences"]) == 3
    assert report["slope"] == pytest.approx(1.0, abs=1e-6)
    assert abs(report["slope_final"] - 1.0) < 0.2
    env = report["envelope"]
    assert env["order"] == 1.0
    assert max(env["margins"]) <= 1.0 + 1e-9
    assert env["margins"][0] == pytest.approx(1.0, abs=1e-12)


# ----------------------------------------------------- mollifier ladders


def test_identical_widths_collapse_to_zero():
    grid = Grid(n_modes=16, gamma=1.75)
    u0 = _u0(grid, (0.05 - 0.01j,))
    cfg = NoiseConfig(gamma=1.75, epsilon=0.25, seed=0, dt=2e-3, t_end=0.1)
    report = epsilon_convergence_study([cfg, cfg], [0, 1], u0, 0.1)
    assert report["solution"]["medians"] == [0.0]
    for key in ("n", "lr", "rLlr"):
        assert report["trees"][key]["medians"] == [0.0]


def test_ladder_validation():
    grid = Grid(n_modes=16, gamma=1.75)
    u0 = _u0(grid, (0.05,))
    cfg = NoiseConfig(gamma=1.75, epsilon=0.25, seed=0, dt=2e-3, t_end=0.1)
    with pytest.raises(ValidationError):
        epsilon_convergence_study([cfg], [0], u0, 0.1)
    other = NoiseConfig(gamma=1.8, epsilon=0.125, seed=0, dt=2e-3, t_end=0.1)
    with pytest.raises(ConfigMismatch):
        epsilon_convergence_study([cfg, other], [0], u0, 0.1)


# ------------------------------------------------------ input validation


def test_enhanced_data_requires_generator_and_closure():
    grid = Grid(n_modes=8, gamma=1.75)
    times = 0.01 * np.arange(5)
    zeros = np.zeros((5, 8), dtype=np.complex128)

    def tree(key):
        return TreeTrajectory(symbol=key,
                              trajectory=Trajectory(times, zeros, grid),
                              provenance={})

    with pytest.raises(ValidationError):
        EnhancedData.build({"lr": tree("lr")}, PARAMS)
    with pytest.raises(ValidationError, match="lr"):
        EnhancedData.build({"n": tree("n")}, PARAMS)
    other = TreeTrajectory(
        symbol="lr",
        trajectory=Trajectory(times + 0.5, zeros, grid),
        provenance={})
    with pytest.raises(TimeGridMismatch):
        EnhancedData.build({"n": tree("n"), "lr": other,
                            "rLlr": tree("rLlr")}, PARAMS)


def test_solver_exponent_preconditions(slab_regime):
    grid, cfg, u0, data, _ = slab_regime
    not_subcritical = dataclasses.replace(
        data, params=RegularityParams(alpha=-0.3, b=0.5))
    with pytest.raises(PreconditionViolated):
        solve_subcritical(not_subcritical, None, u0)
    no_gain = dataclasses.replace(
        data, params=RegularityParams(alpha=-0.6, b=0.5))
    with pytest.raises(PreconditionViolated):
        solve_paracontrolled(no_gain, None, u0)


def test_blowup_ceiling_trips(slab_regime):
    grid, cfg, u0, data, _ = slab_regime
    with pytest.raises(BlowupDetected):
        solve_subcritical(data, None, u0, 0.1, ceiling=1e-4)
    with pytest.raises(BlowupDetected):
        solve_paracontrolled(data, None, u0, t_end=0.1, ceiling=1e-4)


def test_no_contraction_at_the_slab_floor(slab_regime):
    grid, cfg, u0, data, _ = slab_regime
    with pytest.raises(NoContraction):
        solve_subcritical(data, None, u0, 0.1, coupling=50.0)


def test_enhanced_difference_basics(slab_regime):
    grid, cfg, u0, data, _ = slab_regime
    assert enhanced_difference(data, data) == 0.0
    other = build_enhanced_data(dataclasses.replace(cfg, seed=5), grid,
                                PARAMS)
    assert enhanced_difference(data, other) > 0.0
    small = Grid(n_modes=8, gamma=1.75)
    zero = zero_enhanced_data(small, data.times, PARAMS)
    with pytest.raises(GridMismatch):
        enhanced_difference(data, zero)


def test_zero_enhanced_data_has_zero_norm():
    grid = Grid(n_modes=8, gamma=1.75)
    data = zero_enhanced_data(grid, 0.01 * np.arange(4), PARAMS)
    assert data.norm == 0.0
    assert set(data.trees) == {"n", "lr", "rLlr"}
    assert np.all(data.tree("n").modes == 0.0)
