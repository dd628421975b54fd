"""Core value types and configuration shared by every other module.

All types here are immutable value objects: safe to share between workers,
cheap to copy, and serializable to flat JSON that round-trips bit-exactly
(floats are emitted with repr precision).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

Vec2 = tuple[float, float]

COV_SYMMETRY_TOL = 1e-9
COV_PSD_TOL = -1e-9


class ConfigError(ValueError):
    """A configuration value violates its documented bounds."""


def _as_vec2(v) -> Vec2:
    x, y = v
    return (float(x), float(y))


def _check_finite(label: str, values: Iterable[float]) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{label} components must be finite")


@dataclass(frozen=True)
class AgentState:
    """Planar agent state: position p (m) and velocity v (m/s)."""

    p: Vec2
    v: Vec2

    def __post_init__(self):
        object.__setattr__(self, "p", _as_vec2(self.p))
        object.__setattr__(self, "v", _as_vec2(self.v))
        _check_finite("AgentState", (*self.p, *self.v))

    @classmethod
    def from_vec(cls, x) -> "AgentState":
        x = np.asarray(x, dtype=float).reshape(4)
        return cls((x[0], x[1]), (x[2], x[3]))

    @property
    def vec(self) -> np.ndarray:
        """State as the 4-vector [px, py, vx, vy]."""
        return np.array([self.p[0], self.p[1], self.v[0], self.v[1]])

    @property
    def pos(self) -> np.ndarray:
        return np.array(self.p)

    @property
    def vel(self) -> np.ndarray:
        return np.array(self.v)

    def to_dict(self) -> dict:
        return {"p": list(self.p), "v": list(self.v)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AgentState":
        return cls(tuple(d["p"]), tuple(d["v"]))


@dataclass(frozen=True)
class Goal:
    """Goal position with an optional terminal velocity (zero = soft landing)."""

    p_g: Vec2
    v_g: Vec2 = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "p_g", _as_vec2(self.p_g))
        object.__setattr__(self, "v_g", _as_vec2(self.v_g))
        _check_finite("Goal", (*self.p_g, *self.v_g))

    @property
    def vec(self) -> np.ndarray:
        """Goal as a terminal state 4-vector [pgx, pgy, vgx, vgy]."""
        return np.array([self.p_g[0], self.p_g[1], self.v_g[0], self.v_g[1]])

    def to_dict(self) -> dict:
        return {"p_g": list(self.p_g), "v_g": list(self.v_g)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Goal":
        return cls(tuple(d["p_g"]), tuple(d.get("v_g", (0.0, 0.0))))


@dataclass(frozen=True)
class Config:
    """All tunables in one flat record.

    Gains must be negative: the closed loop pdot=v, vdot=K_p(p-p_g)+K_v*v is
    Hurwitz only for K_p<0, K_v<0. Defaults are the critically damped pair.
    """

    K_p: float = -1.0          # position gain (1/s^2), < 0
    K_v: float = -2.0          # velocity gain (1/s), < 0
    A_int: float = 5.0         # interaction strength (m/s^2)
    B_int: float = 0.5         # interaction length (m)
    d_tol: float = 2.0         # clustering distance threshold (m)
    c_tol: float = 10.0        # clustering cost threshold (cost units)
    d_int_tol: float = 3.0     # interaction-zone radius (m)
    lambda1: float = 0.5       # weight of the state-interchange cost
    lambda2: float = 0.5       # weight of the goal cost
    T_f_cost: float = 2.0      # cost-metric horizon (s)
    dt: float = 0.1            # integration step (s)
    sigma_p: float = 0.01      # singleton position variance (m^2)
    sigma_v: float = 0.01      # singleton velocity variance ((m/s)^2)
    ukf_alpha: float = 1.0
    ukf_beta: float = 2.0
    ukf_kappa: float = 0.0
    meas_noise_std: float = 0.1            # position measurement noise (m)
    proc_noise_std: tuple = (0.05, 0.1)    # per-step (position, velocity) std
    radius_default: float = 0.3            # agent radius r_i (m)
    deletion_grace: int = 3                # missed observations before deletion
    seed: int = 0                          # RNG seed for synthetic measurements
    linkage_positions_only: bool = False   # complete linkage on positions only
    scale_meas_noise_by_members: bool = False  # use R/m for averaged cluster obs

    def __post_init__(self):
        p = self.proc_noise_std
        if isinstance(p, (int, float)):
            p = (float(p), float(p))
        object.__setattr__(self, "proc_noise_std", (float(p[0]), float(p[1])))

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = dict(d)
        if "proc_noise_std" in kwargs and isinstance(kwargs["proc_noise_std"], list):
            kwargs["proc_noise_std"] = tuple(kwargs["proc_noise_std"])
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path) -> "Config":
        with open(path, "r", encoding="utf-8") as fh:
            return validate_config(cls.from_dict(json.load(fh)))


def validate_config(cfg: Config) -> Config:
    """Return cfg unchanged iff every invariant holds, else raise ConfigError.

    The error names the first offending field in declaration-ish order.
    """
    checks = [
        ("dt", cfg.dt > 0, "dt must be positive"),
        ("T_f_cost", cfg.T_f_cost > 0, "T_f_cost must be positive"),
        ("d_tol", cfg.d_tol > 0, "d_tol must be positive"),
        ("c_tol", cfg.c_tol > 0, "c_tol must be positive"),
        ("d_int_tol", cfg.d_int_tol > 0, "d_int_tol must be positive"),
        ("sigma_p", cfg.sigma_p > 0, "sigma_p must be positive"),
        ("sigma_v", cfg.sigma_v > 0, "sigma_v must be positive"),
        ("lambda1", cfg.lambda1 >= 0, "lambda1 must be non-negative"),
        ("lambda2", cfg.lambda2 >= 0, "lambda2 must be non-negative"),
        ("lambda1+lambda2", cfg.lambda1 + cfg.lambda2 > 0,
         "lambda1 + lambda2 must be positive"),
        ("K_p", cfg.K_p < 0, "K_p must be negative for stable goal seeking"),
        ("K_v", cfg.K_v < 0, "K_v must be negative for stable goal seeking"),
        ("A_int", cfg.A_int >= 0, "A_int must be non-negative"),
        ("B_int", cfg.B_int > 0, "B_int must be positive"),
        ("meas_noise_std", cfg.meas_noise_std > 0, "meas_noise_std must be positive"),
        ("proc_noise_std", cfg.proc_noise_std[0] > 0 and cfg.proc_noise_std[1] > 0,
         "proc_noise_std entries must be positive"),
        ("radius_default", cfg.radius_default > 0, "radius_default must be positive"),
        ("deletion_grace", cfg.deletion_grace >= 0, "deletion_grace must be >= 0"),
        ("ukf_alpha", cfg.ukf_alpha > 0, "ukf_alpha must be positive"),
    ]
    for _, ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    return cfg


def singleton_cov(cfg: Config) -> np.ndarray:
    """User-defined diagonal covariance for one-member clusters."""
    return np.diag([cfg.sigma_p, cfg.sigma_p, cfg.sigma_v, cfg.sigma_v])


def _cov_tuple(cov: np.ndarray) -> tuple:
    return tuple(map(tuple, np.asarray(cov, dtype=float).tolist()))


def check_cov(cov: np.ndarray, label: str = "covariance") -> np.ndarray:
    """Validate symmetry (1e-9) and positive semi-definiteness (eig >= -1e-9).

    The PSD check factors cov + 1e-9*I, which succeeds exactly when the
    smallest eigenvalue is above the -1e-9 tolerance.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (4, 4):
        raise ValueError(f"{label} must be 4x4, got {cov.shape}")
    if not np.isfinite(cov).all():
        raise ValueError(f"{label} must be finite")
    if np.abs(cov - cov.T).max() > COV_SYMMETRY_TOL:
        raise ValueError(f"{label} must be symmetric to {COV_SYMMETRY_TOL}")
    try:
        np.linalg.cholesky((cov + cov.T) / 2.0 - COV_PSD_TOL * np.eye(4))
    except np.linalg.LinAlgError:
        raise ValueError(f"{label} must be positive semi-definite") from None
    return cov


@dataclass(frozen=True)
class Cluster:
    """A group of agents tracked as one representative agent.

    mean is the arithmetic mean of member states at creation time; cov is the
    statistical member covariance (or the user diagonal for singletons), but
    construction sites may pass a filtered covariance for persisting clusters.
    """

    id: int
    members: tuple[int, ...]
    mean: AgentState
    cov: tuple
    goal: Goal

    def __post_init__(self):
        if not self.members:
            raise ValueError("cluster members must be non-empty")
        object.__setattr__(self, "members", tuple(sorted(int(m) for m in self.members)))
        cov = check_cov(np.asarray(self.cov, dtype=float), f"cluster {self.id} cov")
        object.__setattr__(self, "cov", _cov_tuple(cov))

    @property
    def cov_matrix(self) -> np.ndarray:
        return np.array(self.cov)

    @property
    def size(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "members": list(self.members),
            "mean": self.mean.to_dict(),
            "cov": [list(r) for r in self.cov],
            "goal": self.goal.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Cluster":
        return cls(
            id=int(d["id"]),
            members=tuple(d["members"]),
            mean=AgentState.from_dict(d["mean"]),
            cov=tuple(tuple(r) for r in d["cov"]),
            goal=Goal.from_dict(d["goal"]),
        )


def member_mean(member_ids: Sequence[int], states: Mapping[int, AgentState]) -> AgentState:
    """Arithmetic mean of the member states."""
    n = len(member_ids)
    px = py = vx = vy = 0.0
    for m in member_ids:
        s = states[m]
        px += s.p[0]
        py += s.p[1]
        vx += s.v[0]
        vy += s.v[1]
    return AgentState((px / n, py / n), (vx / n, vy / n))


def statistical_cov(member_ids: Sequence[int], states: Mapping[int, AgentState]) -> np.ndarray:
    """Sample covariance of the member states (1/(m-1) normalization)."""
    ids = sorted(member_ids)
    if len(ids) < 2:
        raise ValueError("statistical covariance needs at least two members")
    vecs = np.array([states[m].vec for m in ids])
    diff = vecs - vecs.mean(axis=0)
    cov = diff.T @ diff / (len(ids) - 1)
    return (cov + cov.T) / 2.0


def goal_centroid(member_ids: Sequence[int], goals: Mapping[int, Goal]) -> Goal:
    n = len(member_ids)
    px = py = vx = vy = 0.0
    for m in member_ids:
        g = goals[m]
        px += g.p_g[0]
        py += g.p_g[1]
        vx += g.v_g[0]
        vy += g.v_g[1]
    return Goal((px / n, py / n), (vx / n, vy / n))


def make_cluster(
    cluster_id: int,
    member_ids: Sequence[int],
    states: Mapping[int, AgentState],
    goals: Mapping[int, Goal],
    cfg: Config,
    cov: np.ndarray | None = None,
    mean: AgentState | None = None,
) -> Cluster:
    """Build a cluster from member states.

    cov defaults to the creation-time rule: user diagonal for singletons,
    statistical covariance otherwise. Pass cov explicitly to keep a filtered
    covariance on a persisting cluster.
    """
    ids = tuple(sorted(int(m) for m in member_ids))
    if cov is None:
        cov = singleton_cov(cfg) if len(ids) == 1 else statistical_cov(ids, states)
    if mean is None:
        mean = member_mean(ids, states)
    return Cluster(id=cluster_id, members=ids, mean=mean,
                   cov=_cov_tuple(cov), goal=goal_centroid(ids, goals))


@dataclass(frozen=True)
class ClusterSet:
    """A partition of all live agents into clusters."""

    clusters: tuple[Cluster, ...]
    agent_states: Mapping[int, AgentState]

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "agent_states", dict(self.agent_states))
        seen: set[int] = set()
        for c in self.clusters:
            overlap = seen.intersection(c.members)
            if overlap:
                raise ValueError(f"agents {sorted(overlap)} appear in multiple clusters")
            seen.update(c.members)
        live = set(self.agent_states)
        if seen != live:
            raise ValueError(
                f"clusters do not partition the live agents "
                f"(missing {sorted(live - seen)}, extra {sorted(seen - live)})"
            )

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_agents(self) -> int:
        return len(self.agent_states)

    def live_ids(self) -> list[int]:
        return sorted(self.agent_states)

    def cluster_of(self, agent_id: int) -> Cluster:
        for c in self.clusters:
            if agent_id in c.members:
                return c
        raise KeyError(agent_id)

    def member_sets(self) -> list[tuple[int, ...]]:
        return [c.members for c in self.clusters]

    def to_dict(self) -> dict:
        return {
            "clusters": [c.to_dict() for c in self.clusters],
            "agent_states": {str(i): s.to_dict() for i, s in sorted(self.agent_states.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterSet":
        return cls(
            clusters=tuple(Cluster.from_dict(c) for c in d["clusters"]),
            agent_states={int(i): AgentState.from_dict(s) for i, s in d["agent_states"].items()},
        )


def dumps(obj) -> str:
    """Canonical JSON for model objects (sorted keys, repr floats)."""
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
