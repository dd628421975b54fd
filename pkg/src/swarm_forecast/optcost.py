"""Minimum-effort transfers for a double integrator and the cost metric.

The clustering similarity is built from two boundary-value problems: the
effort for agent i to take over agent j's current state, and the effort for
agent i to reach its own goal. Both share one closed-form solution:

    u*(t) = a + t b,  t in [0, T]
    b = 12 (p0 - pf) / T^3 + 6 (v0 + vf) / T^2
    a = (vf - v0) / T - b T / 2

obtained by solving v(T)=vf, p(T)=pf for the double integrator with
v(t) = v0 + a t + b t^2/2 and p(t) = p0 + v0 t + a t^2/2 + b t^3/6.
The optimal cost uses the 1/2 convention:

    V = (1/2) (T ||a||^2 + T^2 a.b + (T^3/3) ||b||^2)

so the rest-to-rest transfer over distance d costs 6 d^2 / T^3.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AgentState, Config, Goal


@dataclass(frozen=True)
class LinearControlLaw:
    """u*(t) = a + t b on [0, horizon]."""

    a: tuple[float, float]
    b: tuple[float, float]
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "a", (float(self.a[0]), float(self.a[1])))
        object.__setattr__(self, "b", (float(self.b[0]), float(self.b[1])))
        if not np.isfinite([*self.a, *self.b, self.horizon]).all():
            raise ValueError("control law must be finite")

    def u(self, t: float) -> np.ndarray:
        return np.array(self.a) + t * np.array(self.b)

    def terminal_state(self, x0: AgentState) -> np.ndarray:
        """Integrate the double integrator under u* from x0 to the horizon."""
        T = self.horizon
        a, b = np.array(self.a), np.array(self.b)
        v = x0.vel + a * T + b * T * T / 2.0
        p = x0.pos + x0.vel * T + a * T * T / 2.0 + b * T ** 3 / 6.0
        return np.concatenate([p, v])


def _solve_arrays(p0, v0, pf, vf, T: float):
    b = 12.0 * (p0 - pf) / T ** 3 + 6.0 * (v0 + vf) / T ** 2
    a = (vf - v0) / T - b * T / 2.0
    return a, b


def solve_transfer(x0: AgentState, xf: AgentState, T_f: float) -> LinearControlLaw:
    """Unique minimum-effort law steering x0 to xf in time T_f."""
    if T_f <= 0:
        raise ValueError("T_f must be positive")
    a, b = _solve_arrays(x0.pos, x0.vel, xf.pos, xf.vel, T_f)
    return LinearControlLaw(tuple(a), tuple(b), T_f)


def cost_of_law(law: LinearControlLaw) -> float:
    """(1/2) integral of ||a + t b||^2 over [0, T]."""
    T = law.horizon
    a, b = np.array(law.a), np.array(law.b)
    return float(0.5 * (T * a @ a + T * T * (a @ b) + (T ** 3 / 3.0) * (b @ b)))


def transfer_cost(x0_i: AgentState, x0_j: AgentState, T_f: float) -> float:
    """V1: effort for agent i to interchange its state with agent j's."""
    return cost_of_law(solve_transfer(x0_i, x0_j, T_f))


def goal_cost(x0: AgentState, g: Goal, T_f: float) -> float:
    """V2: effort for the agent to reach its goal state."""
    target = AgentState(g.p_g, g.v_g)
    return cost_of_law(solve_transfer(x0, target, T_f))


def cost_distance(x_i: AgentState, x_j: AgentState, g_i: Goal, cfg: Config) -> float:
    """lambda1 * V1(x_i, x_j) + lambda2 * V2(x_i, g_i).

    Not symmetric in (i, j); the pairing algorithm evaluates it one way.
    """
    t = cfg.T_f_cost
    return cfg.lambda1 * transfer_cost(x_i, x_j, t) + cfg.lambda2 * goal_cost(x_i, g_i, t)


def _cost_from_ab(a: np.ndarray, b: np.ndarray, T: float) -> np.ndarray:
    # a, b: (..., 2)
    return 0.5 * (
        T * (a * a).sum(axis=-1)
        + T * T * (a * b).sum(axis=-1)
        + (T ** 3 / 3.0) * (b * b).sum(axis=-1)
    )


def transfer_cost_matrix(X: np.ndarray, T: float) -> np.ndarray:
    """V1 for every ordered pair: entry [i, j] = V1(x_i -> x_j).

    X is (N, 4) with rows [px, py, vx, vy]. Diagonal is zero.
    """
    P, V = X[:, :2], X[:, 2:]
    dp = P[:, None, :] - P[None, :, :]           # p0 - pf
    vs = V[:, None, :] + V[None, :, :]           # v0 + vf
    dv = V[None, :, :] - V[:, None, :]           # vf - v0
    b = 12.0 * dp / T ** 3 + 6.0 * vs / T ** 2
    a = dv / T - b * T / 2.0
    return _cost_from_ab(a, b, T)


def goal_cost_vector(X: np.ndarray, G: np.ndarray, T: float) -> np.ndarray:
    """V2 per row: X (N, 4) states, G (N, 4) goal states [pg, vg]."""
    a, b = _solve_arrays(X[:, :2], X[:, 2:], G[:, :2], G[:, 2:], T)
    return _cost_from_ab(a, b, T)
