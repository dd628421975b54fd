"""Closed-loop agent dynamics: PD goal seeking plus social-force repulsion.

The same equations drive individual agents and cluster representatives; the
caller just substitutes the cluster mean state and cluster goal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import AgentState, Config, Goal

log = logging.getLogger(__name__)

COINCIDENT_EPS = 1e-9


@dataclass(frozen=True)
class ForceField:
    """Repulsion sources frozen at the start of an integration step.

    Only neighbors within d_int_tol of the evaluated position contribute.
    """

    neighbors: tuple[tuple[AgentState, float], ...]  # (state, radius)
    self_radius: float
    a_int: float
    b_int: float
    d_int_tol: float

    def __post_init__(self):
        if self.self_radius <= 0 or any(r <= 0 for _, r in self.neighbors):
            raise ValueError("agent radii must be positive")
        pos = np.array([s.p for s, _ in self.neighbors]).reshape(-1, 2)
        radii = np.array([r for _, r in self.neighbors])
        object.__setattr__(self, "_pos", pos)
        object.__setattr__(self, "_radii", radii)

    @classmethod
    def empty(cls, cfg: Config, self_radius: float | None = None) -> "ForceField":
        return cls((), self_radius or cfg.radius_default,
                   cfg.A_int, cfg.B_int, cfg.d_int_tol)

    @classmethod
    def from_states(cls, neighbors, cfg: Config,
                    self_radius: float | None = None) -> "ForceField":
        r = self_radius or cfg.radius_default
        pairs = tuple(
            (s, rad) if rad is not None else (s, cfg.radius_default)
            for s, rad in ((n if isinstance(n, tuple) else (n, None)) for n in neighbors)
        )
        return cls(pairs, r, cfg.A_int, cfg.B_int, cfg.d_int_tol)

    @classmethod
    def from_arrays(cls, pos: np.ndarray, radii: np.ndarray, cfg: Config,
                    self_radius: float | None = None) -> "ForceField":
        """Array-backed construction bypassing per-neighbor AgentState objects."""
        field = cls((), self_radius or cfg.radius_default,
                    cfg.A_int, cfg.B_int, cfg.d_int_tol)
        object.__setattr__(field, "_pos", np.asarray(pos, dtype=float).reshape(-1, 2))
        object.__setattr__(field, "_radii", np.asarray(radii, dtype=float).reshape(-1))
        return field


def a_cl(cfg: Config) -> np.ndarray:
    """Closed-loop state matrix of the PD-controlled double integrator."""
    return np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [cfg.K_p, 0.0, cfg.K_v, 0.0],
        [0.0, cfg.K_p, 0.0, cfg.K_v],
    ])


def goal_offset(g: Goal, cfg: Config) -> np.ndarray:
    """Constant affine term [0, 0, -K_p*g] of the closed loop."""
    return np.array([0.0, 0.0, -cfg.K_p * g.p_g[0], -cfg.K_p * g.p_g[1]])


def pd_control(x: AgentState, g: Goal, cfg: Config) -> np.ndarray:
    """K_p*(p - p_g) + K_v*v, componentwise."""
    return cfg.K_p * (x.pos - np.array(g.p_g)) + cfg.K_v * x.vel


def pair_interaction(x_i: AgentState, x_j: AgentState,
                     r_i: float, r_j: float, cfg: Config) -> np.ndarray:
    """Exponential repulsion pushing agent i away from agent j.

    Coincident positions (d < 1e-9 m) leave the direction undefined; we take
    the +x axis so runs stay reproducible, and log the degeneracy.
    """
    diff = x_i.pos - x_j.pos
    d = float(np.linalg.norm(diff))
    r_sum = r_i + r_j
    if d < COINCIDENT_EPS:
        log.warning("coincident agents: repulsion direction defaulted to +x")
        return np.array([cfg.A_int * np.exp(r_sum / cfg.B_int), 0.0])
    return cfg.A_int * np.exp((r_sum - d) / cfg.B_int) * (diff / d)


def _batch_interaction(P: np.ndarray, field: ForceField) -> np.ndarray:
    """Total repulsion at each row of P (k, 2) from the frozen field."""
    npos = field._pos
    if npos.shape[0] == 0:
        return np.zeros_like(P)
    diff = P[:, None, :] - npos[None, :, :]              # (k, n, 2)
    d = np.sqrt((diff * diff).sum(axis=2))               # (k, n)
    in_zone = d <= field.d_int_tol
    if not in_zone.any():
        return np.zeros_like(P)
    r_sum = field.self_radius + field._radii[None, :]
    mag = field.a_int * np.exp((r_sum - d) / field.b_int)
    mag = np.where(in_zone, mag, 0.0)
    coincident = d < COINCIDENT_EPS
    if coincident.any():
        log.warning("coincident agents: repulsion direction defaulted to +x")
    safe_d = np.where(coincident, 1.0, d)
    n_ij = diff / safe_d[:, :, None]
    n_ij[coincident] = (1.0, 0.0)
    mag = np.where(coincident, field.a_int * np.exp(r_sum / field.b_int), mag)
    return (mag[:, :, None] * n_ij).sum(axis=1)


def total_interaction(x_i: AgentState, field: ForceField) -> np.ndarray:
    """Sum of pairwise repulsions from neighbors inside the interaction zone."""
    return _batch_interaction(x_i.pos[None, :], field)[0]


def closed_loop_deriv(x: AgentState, g: Goal, field: ForceField,
                      cfg: Config) -> np.ndarray:
    """[v; u_d + F_int]; equals A_cl x + goal_offset + [0;0;F_int]."""
    acc = pd_control(x, g, cfg) + total_interaction(x, field)
    return np.concatenate([x.vel, acc])


def _deriv_states(X: np.ndarray, gp: np.ndarray, field: ForceField,
                  cfg: Config) -> np.ndarray:
    P, V = X[:, :2], X[:, 2:]
    acc = cfg.K_p * (P - gp) + cfg.K_v * V
    acc = acc + _batch_interaction(P, field)
    return np.hstack([V, acc])


def step_states(X: np.ndarray, g: Goal, field: ForceField,
                cfg: Config, dt: float) -> np.ndarray:
    """One classical RK4 step for a batch of states (k, 4), field frozen."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    gp = np.array(g.p_g)[None, :]
    k1 = _deriv_states(X, gp, field, cfg)
    k2 = _deriv_states(X + 0.5 * dt * k1, gp, field, cfg)
    k3 = _deriv_states(X + 0.5 * dt * k2, gp, field, cfg)
    k4 = _deriv_states(X + dt * k3, gp, field, cfg)
    return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(x: AgentState, g: Goal, field: ForceField, cfg: Config, dt: float) -> AgentState:
    """Advance one agent by dt with the force field frozen at the step start."""
    out = step_states(x.vec[None, :], g, field, cfg, dt)
    return AgentState.from_vec(out[0])
