import numpy as np
import pytest

from oracles import expm_affine_map, rk4_affine_map
from swarm_forecast import dynamics
from swarm_forecast.dynamics import ForceField
from swarm_forecast.model import AgentState, Config, Goal


def field_of(cfg, *neighbors):
    return ForceField.from_states(list(neighbors), cfg)


def test_pd_control_cases(cfg):
    at_goal = AgentState((0, 0), (0, 0))
    assert np.allclose(dynamics.pd_control(at_goal, Goal((0, 0)), cfg), (0, 0))
    x = AgentState((1, 0), (0, 0))
    assert np.allclose(dynamics.pd_control(x, Goal((0, 0)), cfg), (-1, 0))
    x = AgentState((1, 0), (1, 0))
    assert np.allclose(dynamics.pd_control(x, Goal((0, 0)), cfg), (-3, 0))


def test_pair_interaction_touching_and_decay(cfg):
    # touching: exponent is zero, magnitude exactly A_int
    x_i = AgentState((1.0, 0.0), (0, 0))
    x_j = AgentState((0.0, 0.0), (0, 0))
    f = dynamics.pair_interaction(x_i, x_j, 0.5, 0.5, cfg)
    assert np.allclose(f, (cfg.A_int, 0.0))


def test_pair_interaction_matches_hand_value():
    cfg = Config(A_int=1.0, B_int=1.0)
    x_i = AgentState((2.0, 0.0), (0, 0))
    x_j = AgentState((0.0, 0.0), (0, 0))
    f = dynamics.pair_interaction(x_i, x_j, 0.5, 0.5, cfg)
    # A*exp((r_ij - d)/B) = exp((1 - 2)/1) = e^-1 along +x
    assert np.allclose(f, (np.exp(-1.0), 0.0), atol=1e-12)


def test_pair_interaction_strictly_decreasing_in_distance(cfg):
    mags = []
    for d in np.linspace(0.5, 6.0, 30):
        f = dynamics.pair_interaction(
            AgentState((d, 0), (0, 0)), AgentState((0, 0), (0, 0)), 0.3, 0.3, cfg)
        mags.append(np.linalg.norm(f))
    assert all(a > b for a, b in zip(mags, mags[1:]))


def test_pair_interaction_newton_antisymmetry(cfg, rng):
    for _ in range(50):
        pi, pj = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
        if np.linalg.norm(pi - pj) < 1e-6:
            continue
        x_i, x_j = AgentState(tuple(pi), (0, 0)), AgentState(tuple(pj), (0, 0))
        fij = dynamics.pair_interaction(x_i, x_j, 0.4, 0.4, cfg)
        fji = dynamics.pair_interaction(x_j, x_i, 0.4, 0.4, cfg)
        assert np.allclose(fij, -fji)


def test_coincident_agents_deterministic_direction(cfg):
    x = AgentState((0, 0), (0, 0))
    f = dynamics.pair_interaction(x, x, 0.5, 0.5, cfg)
    expected = cfg.A_int * np.exp(1.0 / cfg.B_int)
    assert np.allclose(f, (expected, 0.0))


def test_total_interaction_empty_and_symmetry(cfg):
    x = AgentState((0, 0), (0, 0))
    assert np.allclose(dynamics.total_interaction(x, ForceField.empty(cfg)), (0, 0))
    field = field_of(cfg, AgentState((1, 0), (0, 0)), AgentState((-1, 0), (0, 0)))
    assert np.allclose(dynamics.total_interaction(x, field), (0, 0), atol=1e-12)


def test_total_interaction_single_neighbor_equals_pair(cfg):
    x = AgentState((0.3, 0.1), (0, 0))
    n = AgentState((1.0, -0.4), (0, 0))
    field = field_of(cfg, n)
    expected = dynamics.pair_interaction(x, n, cfg.radius_default, cfg.radius_default, cfg)
    assert np.allclose(dynamics.total_interaction(x, field), expected)


def test_neighbors_outside_zone_excluded(cfg):
    x = AgentState((0, 0), (0, 0))
    far = AgentState((cfg.d_int_tol + 0.5, 0), (0, 0))
    assert np.allclose(dynamics.total_interaction(x, field_of(cfg, far)), (0, 0))


def test_closed_loop_equilibrium_and_substitution(cfg):
    at_rest = AgentState((0, 0), (0, 0))
    d = dynamics.closed_loop_deriv(at_rest, Goal((0, 0)), ForceField.empty(cfg), cfg)
    assert np.allclose(d, np.zeros(4))
    x = AgentState((1, 0), (0, 0))
    d = dynamics.closed_loop_deriv(x, Goal((0, 0)), ForceField.empty(cfg), cfg)
    assert np.allclose(d, [0, 0, -1, 0])


def test_matrix_form_equals_component_form(cfg, rng):
    # A_cl x + g + [0;0;F] must equal the assembled derivative
    A = dynamics.a_cl(cfg)
    for _ in range(100):
        x = AgentState(tuple(rng.uniform(-5, 5, 2)), tuple(rng.uniform(-3, 3, 2)))
        g = Goal(tuple(rng.uniform(-5, 5, 2)))
        neighbor = AgentState(tuple(rng.uniform(-5, 5, 2)), (0, 0))
        field = field_of(cfg, neighbor)
        lhs = dynamics.closed_loop_deriv(x, g, field, cfg)
        f_int = dynamics.total_interaction(x, field)
        rhs = A @ x.vec + dynamics.goal_offset(g, cfg) + np.concatenate([[0, 0], f_int])
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_step_constant_velocity_exact():
    cfg = Config(K_p=-1e-12, K_v=-1e-12, A_int=0.0)  # effectively zero gains
    x = AgentState((0, 0), (1, 0))
    out = dynamics.step(x, Goal((0, 0)), ForceField.empty(cfg), cfg, 0.1)
    assert np.allclose(out.pos, (0.1, 0.0), atol=1e-12)


@pytest.mark.parametrize("p, v, goal", [
    ((1.0, 0.0), (0.0, 0.0), (0.0, 0.0)),
    ((0.0, 1.0), (0.5, 0.0), (0.0, 0.0)),
    ((-0.5, 0.5), (0.3, -0.4), (0.5, 0.0)),
    ((0.8, -0.2), (-0.6, 0.1), (0.0, 0.6)),
])
def test_step_matches_matrix_exponential(cfg, p, v, goal):
    # linear-only dynamics: one RK4 step vs expm of the affine system; the
    # truncation error is ~5e-7 per unit of shifted-state norm at dt=0.1
    A = dynamics.a_cl(cfg)
    g = Goal(goal)
    phi, c = expm_affine_map(A, dynamics.goal_offset(g, cfg), cfg.dt)
    x = AgentState(p, v)
    stepped = dynamics.step(x, g, ForceField.empty(cfg), cfg, cfg.dt)
    assert np.allclose(stepped.vec, phi @ x.vec + c, atol=1e-6)


def test_rk4_affine_map_is_exact_for_linear_dynamics(cfg, rng):
    # the RK4-induced polynomial map reproduces step() to machine precision
    A = dynamics.a_cl(cfg)
    g = Goal((2.0, -1.0))
    phi, c = rk4_affine_map(A, dynamics.goal_offset(g, cfg), cfg.dt)
    for _ in range(20):
        x = AgentState(tuple(rng.uniform(-4, 4, 2)), tuple(rng.uniform(-2, 2, 2)))
        stepped = dynamics.step(x, g, ForceField.empty(cfg), cfg, cfg.dt)
        assert np.allclose(stepped.vec, phi @ x.vec + c, atol=1e-13)


def test_critically_damped_settling(cfg):
    x = AgentState((1, 0), (0, 0))
    g = Goal((0, 0))
    for _ in range(100):  # 10 s at dt=0.1
        x = dynamics.step(x, g, ForceField.empty(cfg), cfg, cfg.dt)
    assert np.linalg.norm(x.pos) < 0.01


def test_goal_is_fixed_point_for_any_dt(cfg):
    g = Goal((3.0, -2.0))
    x = AgentState(g.p_g, (0, 0))
    for dt in (0.01, 0.1, 0.5, 2.0):
        out = dynamics.step(x, g, ForceField.empty(cfg), cfg, dt)
        assert np.allclose(out.vec, x.vec, atol=1e-14)


def test_step_deterministic(cfg):
    x = AgentState((0.5, 0.25), (1.0, -0.5))
    g = Goal((4.0, 1.0))
    field = field_of(cfg, AgentState((1.0, 0.0), (0, 0)))
    a = dynamics.step(x, g, field, cfg, cfg.dt)
    b = dynamics.step(x, g, field, cfg, cfg.dt)
    assert a.vec.tobytes() == b.vec.tobytes()


def test_batch_step_matches_single_steps(cfg, rng):
    g = Goal((1.0, 1.0))
    field = field_of(cfg, AgentState((0.5, 0.5), (0, 0)))
    X = rng.uniform(-3, 3, (7, 4))
    batch = dynamics.step_states(X, g, field, cfg, cfg.dt)
    for k in range(7):
        single = dynamics.step(AgentState.from_vec(X[k]), g, field, cfg, cfg.dt)
        assert np.allclose(batch[k], single.vec, atol=1e-14)


def test_step_rejects_nonpositive_dt(cfg):
    x = AgentState((0, 0), (0, 0))
    with pytest.raises(ValueError):
        dynamics.step(x, Goal((0, 0)), ForceField.empty(cfg), cfg, 0.0)
