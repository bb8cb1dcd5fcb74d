from dataclasses import replace

import numpy as np
import pytest
from oracles import trapezoid_energy

from emla_design import closed_chain as cc
from emla_design import sqp
from emla_design.emla_drive import EfficiencyMap, lookup_efficiency
from emla_design.errors import ConfigurationError
from emla_design.nlp_opt import (
    EQUALITY_BLOCKS,
    INEQUALITY_BLOCKS,
    PENALTY_SENTINEL,
    Bounds,
    energy_report,
    evaluate_point,
    objective,
    objective_from_series,
    plain_energy,
    solve,
    transcribe,
)
from emla_design.pipeline import prepare
from emla_design.planar_dynamics import evaluate_dynamics
from emla_design.scenario import load_scenario


def flat_map(eta):
    return EfficiencyMap([-1e6, 1e6], [-10.0, 10.0], np.full((2, 2), eta))


def test_full_scenario_dimensions(data_dir):
    prep = prepare(load_scenario(data_dir / "scenario_full.json"))
    assert prep.nlp.size == 72
    assert (prep.nlp.n_xi, prep.nlp.n_c) == (6, 66)
    np.testing.assert_allclose(prep.nlp.x0[:6], [1.75, 0.544, 1.27, 1.75, 0.55, 1.2])


def test_initial_point_wiring(desk):
    nlp = desk.nlp
    xi, c = nlp.split(nlp.x0)
    d = nlp.definition
    assert nlp.objective(nlp.x0) == objective(xi, c, d.robot, d.maps, d.basis)
    assert np.array_equal(nlp.pack(xi, c), nlp.x0)


def test_equalities_vanish_at_initial_point(desk):
    cs = desk.nlp.constraints(desk.nlp.x0)
    assert set(cs.equality) == set(EQUALITY_BLOCKS)
    assert set(cs.inequality) == set(INEQUALITY_BLOCKS)
    assert cs.max_equality() < 1e-8
    assert cs.max_inequality() == 0.0


def test_closed_chain_rows_are_the_chain_module_rows(desk):
    nlp = desk.nlp
    xi, c = nlp.split(nlp.x0)
    robot = desk.robot.with_xi(xi)
    th, thd, thdd = desk.basis.evaluate_grid(c)
    dyn = evaluate_dynamics(robot, th, thd, thdd, check_limits=False, check_stroke=False)
    cs = nlp.constraints(nlp.x0)
    for b, idx in enumerate(robot.chain_joints):
        st = dyn.chain_states[idx]
        ch = robot.joints[idx].chain
        assert np.array_equal(cs.equality["triangle_closure"][:, b], cc.triangle_closure_residual(st.q, st.q1, st.q2))
        assert np.array_equal(cs.equality["loop_closure"][:, b],
                              cc.loop_closure_residual(ch, st.theta, st.theta1, st.x, st.theta2))


def test_stroke_overshoot_residual(desk):
    nlp = desk.nlp
    xi, c = nlp.split(nlp.x0)
    x_max = nlp.evaluate(nlp.x0).strokes[:, 0].max()
    eps = 0.01
    shift = xi[2] - (x_max - eps)
    # move length from Lc into Lc0 so the pin distance, and therefore x, is unchanged
    xi2 = xi.copy()
    xi2[1] += shift
    xi2[2] -= shift
    ev = nlp.evaluate(nlp.pack(xi2, c))
    assert np.max(ev.constraints.inequality["stroke_limits"][:, 0, 1]) == pytest.approx(eps, abs=1e-12)


def test_zero_motion_costs_nothing(desk):
    d = desk.nlp.definition
    c = np.repeat([2.5, -0.9, 1.0], d.basis.N)
    assert objective(desk.robot.xi, c, d.robot, d.maps, d.basis) == pytest.approx(0.0, abs=1e-18)


def test_constant_power_closed_form():
    K, n, dt = 11, 3, 0.25
    f = np.full((K, n), 2000.0)
    v = np.full((K, n), 0.1)
    maps = [flat_map(0.8)] * n
    expected = 0.5 * dt * K * (n * 200.0 / 0.8) ** 2
    assert objective_from_series(f, v, maps, [0, 1, 2], dt) == pytest.approx(expected, rel=1e-14)
    # generating power is returned scaled by eta rather than divided by it
    assert objective_from_series(-f, v, maps, [0, 1, 2], dt) == pytest.approx(0.5 * dt * K * (n * 200.0 * 0.8) ** 2)


def test_objective_against_explicit_loop(desk):
    nlp = desk.nlp
    d = nlp.definition
    ev = nlp.evaluate(nlp.x0)
    dt = d.basis.times[1] - d.basis.times[0]
    total = 0.0
    for k in range(ev.f_x.shape[0]):
        s = 0.0
        for i, e in enumerate(d.robot.emla_order):
            f, v = ev.f_x[k, i], ev.v_x[k, i]
            eta = lookup_efficiency(d.maps[e], f, v)
            s += f * v / eta if f * v >= 0 else f * v * eta
        total += s * s
    assert ev.objective == pytest.approx(0.5 * dt * total, rel=1e-9)


def test_permutation_invariance(desk, rng):
    ev = desk.nlp.evaluate(desk.nlp.x0)
    d = desk.nlp.definition
    perm = rng.permutation(ev.f_x.shape[0])
    a = objective_from_series(ev.f_x, ev.v_x, d.maps, d.robot.emla_order, 0.5)
    b = objective_from_series(ev.f_x[perm], ev.v_x[perm], d.maps, d.robot.emla_order, 0.5)
    assert a == pytest.approx(b, rel=1e-13)


def test_fd_gradient_matches_directional_oracle(desk, rng):
    nlp = desk.nlp

    def f(z):
        return nlp.objective(z)

    z = nlp.x0.copy()
    z[:6] = 0.5 * (nlp.lower[:6] + nlp.upper[:6])
    _, grad, _, _ = sqp.fd_jacobians(lambda zz: (f(zz), np.zeros(0), np.zeros(0)), z, 1e-6)
    for _ in range(5):
        u = rng.normal(size=z.size)
        u /= np.linalg.norm(u)
        h = 1e-5  # below the efficiency-map cell size, where the objective is smooth
        dd = (8 * (f(z + h * u) - f(z - h * u)) - (f(z + 2 * h * u) - f(z - 2 * h * u))) / (12 * h)
        assert grad @ u == pytest.approx(dd, rel=1e-4, abs=1e-4 * np.linalg.norm(grad))


def test_infeasible_geometry_gives_finite_sentinel(desk):
    nlp = desk.nlp
    xi, c = nlp.split(nlp.x0)
    chain = desk.robot.joints[desk.robot.actuated[0]].chain
    bad = c.copy()
    # a lift angle past psi would need a negative inner angle of the wrong sign: no triangle exists
    bad[: desk.basis.N] = chain.psi + 0.3
    ev = nlp.evaluate(nlp.pack(xi, bad))
    assert not ev.feasible_geometry
    assert np.isfinite(ev.objective) and ev.objective >= PENALTY_SENTINEL
    assert ev.constraints.violation() > 0


def test_bounds(robot, emlas):
    b = Bounds.from_robot(robot, emlas)
    np.testing.assert_allclose(b.xi_lower, 0.5 * robot.xi)
    assert b.force_upper.tolist() == [60000.0, 30000.0, 10000.0]
    with pytest.raises(ConfigurationError):
        Bounds.from_robot(robot, emlas, {"nonsense": 1})
    with pytest.raises(ConfigurationError):
        Bounds.from_robot(robot, emlas, {"xi_lower": -np.ones(6)})


def test_dimension_mismatch(desk):
    d = desk.nlp.definition
    with pytest.raises(ConfigurationError):
        transcribe(replace(d, c0=np.zeros(5)))
    with pytest.raises(ConfigurationError):
        transcribe(replace(d, maps=d.maps[:2]))
    with pytest.raises(ConfigurationError):
        desk.nlp.split(np.zeros(3))


def test_evaluate_point_matches_instance(desk):
    d = desk.nlp.definition
    xi, c = desk.nlp.split(desk.nlp.x0)
    ev = evaluate_point(d.robot, xi, c, d.basis, d.reference, d.bounds, d.maps)
    assert ev.objective == desk.nlp.objective(desk.nlp.x0)


# --- solved desk problem ---------------------------------------------------------------

def test_desk_solution(desk_result):
    r = desk_result
    assert r.success
    assert r.objective_final <= r.objective_initial
    assert r.violation <= 1e-6
    assert max(r.block_violations.values()) <= 1e-6


def test_energy_report(desk, desk_result):
    rep = energy_report(desk_result, desk.nlp)
    assert rep["final"]["cost"] == desk_result.objective_trace[-1]
    lengths = [row["initial"] for row in rep["link_lengths"]]
    assert lengths == [1.75, 0.544, 1.27, 1.75, 0.55, 1.2]
    t = desk_result.times
    for tag, series in (("initial", desk_result.series_initial), ("final", desk_result.series_final)):
        assert rep[tag]["plain_energy"] == pytest.approx(trapezoid_energy(t, series["p_input"].tolist()), rel=1e-12)
    assert len(rep["structure"]["final"]) == t.size
    assert plain_energy(t, np.ones((t.size, 2))) == pytest.approx(2 * (t[-1] - t[0]))


def test_restart_from_optimum_is_a_fixed_point(desk, desk_result):
    d = replace(desk.nlp.definition, c0=desk_result.c, xi0=desk_result.xi)
    again = solve(transcribe(d), desk.scenario.solver)
    assert again.iterations <= 1
    assert again.objective_final == pytest.approx(desk_result.objective_final, rel=1e-6)


def test_solve_is_deterministic(desk, desk_result):
    cfg = replace(desk.scenario.solver, max_iterations=3)
    a = solve(desk.nlp, cfg)
    b = solve(desk.nlp, cfg)
    assert a.objective_trace == b.objective_trace
    assert np.array_equal(a.z, b.z)
    assert a.objective_trace == desk_result.objective_trace[:4]
