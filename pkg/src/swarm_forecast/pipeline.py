"""Prediction orchestration: cluster, filter, re-cluster, emit densities.

One run walks a scene frame by frame. Every cluster is propagated through the
closed-loop dynamics by the UKF with the other clusters' representative means
acting as frozen repulsion sources; observation frames trigger measurement
updates, insertion of unknown agents, and deletion of stale ones; every step
ends with a re-clustering pass and a Gaussian-mixture snapshot.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import count
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from . import clustering, dynamics, model, ukf
from .clustering import ClusterEvent, ClusteringDecisionLog, Partitioner
from .model import AgentState, Cluster, ClusterSet, Config, Goal, validate_config
from .scene_io import Scene

_DENSITY_JITTERS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray      # (4,)
    cov: np.ndarray       # (4, 4)

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("component weight must be non-negative")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(4))
        object.__setattr__(self, "cov",
                           model.check_cov(self.cov, "mixture component cov"))


@dataclass(frozen=True)
class MixtureDensity:
    components: tuple[GaussianComponent, ...]
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("mixture needs at least one component")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {total}, expected 1")


def density_of(cs: ClusterSet, t: float = 0.0) -> MixtureDensity:
    """One component per cluster, weighted by member count."""
    n = cs.n_agents
    comps = tuple(
        GaussianComponent(weight=c.size / n, mean=c.mean.vec, cov=c.cov_matrix)
        for c in sorted(cs.clusters, key=lambda c: c.id)
    )
    return MixtureDensity(components=comps, t=t)


def _gauss_quad(diff: np.ndarray, P: np.ndarray):
    """Solve the quadratic form and log-determinant with jitter escalation."""
    for eps in _DENSITY_JITTERS:
        Pj = P + eps * np.eye(P.shape[0])
        sign, logdet = np.linalg.slogdet(Pj)
        if sign <= 0:
            continue
        try:
            sol = np.linalg.solve(Pj, diff.T)
        except np.linalg.LinAlgError:
            continue
        return (diff * sol.T).sum(axis=-1), logdet
    raise np.linalg.LinAlgError("singular component covariance after jitter")


def eval_density(d: MixtureDensity, x) -> float:
    """Mixture pdf at a state 4-vector, standard 4D normalizer."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(x.shape[0])
    for c in d.components:
        quad, logdet = _gauss_quad(x - c.mean, c.cov)
        total += c.weight * np.exp(-0.5 * quad - 0.5 * logdet - 2.0 * math.log(2 * math.pi))
    return float(total[0]) if total.shape[0] == 1 else total


def positional_marginal(d: MixtureDensity):
    """(weight, mean2, cov2) per component: velocity integrated out."""
    return [(c.weight, c.mean[:2], c.cov[:2, :2]) for c in d.components]


def eval_positional_density(d: MixtureDensity, xy) -> float:
    """2D positional marginal pdf at xy."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    total = np.zeros(xy.shape[0])
    for w, mu, P in positional_marginal(d):
        quad, logdet = _gauss_quad(xy - mu, P)
        total += w * np.exp(-0.5 * quad - 0.5 * logdet - math.log(2 * math.pi))
    return float(total[0]) if total.shape[0] == 1 else total


def sample_positions(d: MixtureDensity, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw positions from the mixture's positional marginal."""
    marg = positional_marginal(d)
    weights = np.array([w for w, _, _ in marg])
    choice = rng.choice(len(marg), size=n, p=weights / weights.sum())
    out = np.empty((n, 2))
    for k, (_, mu, P) in enumerate(marg):
        mask = choice == k
        if mask.any():
            L = ukf.sqrt_psd(P)
            out[mask] = mu + rng.standard_normal((int(mask.sum()), 2)) @ L.T
    return out


@dataclass(frozen=True)
class PredictionRun:
    """Everything one run produced; densities hold None for steps where no
    agents were live."""

    scene_id: str
    dt: float
    stride: int | None
    goal_source: str
    config: Config
    snapshots: tuple[ClusterSet, ...]
    densities: tuple[MixtureDensity | None, ...]
    logs: tuple[ClusteringDecisionLog, ...]

    def trajectory(self, agent_id: int) -> dict[int, tuple[AgentState, int]]:
        """step -> (state, cluster id) for the steps the agent is live."""
        out = {}
        for k, snap in enumerate(self.snapshots):
            if agent_id in snap.agent_states:
                out[k] = (snap.agent_states[agent_id],
                          snap.cluster_of(agent_id).id)
        return out

    def agent_ids(self) -> list[int]:
        ids: set[int] = set()
        for snap in self.snapshots:
            ids.update(snap.agent_states)
        return sorted(ids)


def provision_goals(scene: Scene, cfg: Config, mode: str = "auto"):
    """Goals per agent: explicit file beats final-truth oracle beats
    constant-velocity extrapolation. Returns (goals, source label)."""
    ids = scene.agent_ids()
    explicit = scene.goals or {}

    def first_state(a: int) -> AgentState:
        for f in scene.frames:
            if a in f:
                return f[a]
        raise KeyError(a)

    goals: dict[int, Goal] = {}
    used_oracle = False
    used_cv = False
    for a in ids:
        if mode != "cv" and a in explicit:
            goals[a] = explicit[a]
        elif mode in ("auto", "oracle"):
            goals[a] = Goal(tuple(scene.last_position(a)))
            used_oracle = True
        else:
            s = first_state(a)
            goals[a] = Goal(tuple(s.pos + s.vel * cfg.T_f_cost))
            used_cv = True
    if used_cv:
        source = "cv_extrapolation"
    elif used_oracle:
        source = "oracle_final_position"
    else:
        source = "explicit"
    return goals, source


def init_run(states: Mapping[int, AgentState], goals: Mapping[int, Goal],
             cfg: Config, id_source: Iterator[int] | None = None,
             partitioner: Partitioner | None = None):
    """Initial grouping of the first-frame states."""
    if not states:
        raise ValueError("empty scene: no agents at the initial frame")
    return clustering.cluster_agents(states, goals, cfg, id_source, partitioner)


_FIELD_PRUNE_MARGIN = 8.0  # covers sigma spread plus one-step excursions (m)


def _cluster_fields(clusters, cfg: Config) -> list[dynamics.ForceField]:
    """One repulsion field per cluster from the other clusters' means.

    Neighbors provably outside the interaction zone for every sigma point
    are dropped up front (one vectorized distance pass over cluster means).
    """
    means = np.array([c.mean.vec[:2] for c in clusters]).reshape(-1, 2)
    diff = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    reach = cfg.d_int_tol + _FIELD_PRUNE_MARGIN
    radii = np.full(len(clusters), cfg.radius_default)
    fields = []
    for k in range(len(clusters)):
        keep = (dist[k] <= reach)
        keep[k] = False
        fields.append(dynamics.ForceField.from_arrays(
            means[keep], radii[keep], cfg))
    return fields


def step_run(cs: ClusterSet, observations: Mapping[int, np.ndarray] | None,
             goals: Mapping[int, Goal], cfg: Config, dt: float,
             *, id_source: Iterator[int] | None = None,
             missed_counts: dict[int, int] | None = None,
             new_agent_states: Mapping[int, AgentState] | None = None,
             partitioner: Partitioner | None = None):
    """One prediction/update/re-cluster cycle.

    observations maps agent id -> measured position for this step (None for a
    prediction-only step). new_agent_states supplies full states for observed
    ids that are not yet live. Returns (ClusterSet, MixtureDensity, events).
    """
    if id_source is None:
        id_source = count(clustering._next_free_id(cs))
    if missed_counts is None:
        missed_counts = {}

    ordered = sorted(cs.clusters, key=lambda c: c.id)
    fields = _cluster_fields(ordered, cfg)
    new_states: dict[int, AgentState] = {}
    filtered: list[Cluster] = []
    for c, field in zip(ordered, fields):
        if c.size >= 2:
            sig = ukf.sigma_points_cluster(c, cs.agent_states)
        else:
            sig = ukf.sigma_points_singleton(
                cs.agent_states[c.members[0]], c.cov_matrix, cfg)
        pred = ukf.predict(sig, c.goal, field, cfg, dt, steps=1)

        observed = {}
        if observations is not None:
            observed = {m: observations[m] for m in c.members if m in observations}
        if observed:
            z = np.mean(np.asarray(list(observed.values()), dtype=float), axis=0)
            mm = ukf.MeasurementModel.from_config(cfg, n_observed=len(observed))
            x_post, p_post = ukf.update(pred, z, mm)
        else:
            x_post, p_post = pred.mean, pred.cov

        if c.size >= 2:
            member_states = ukf.redistribute_members(c, x_post, pred.points[1:])
            if observed:
                # members with their own observation are corrected toward it
                # through the cluster gain; unobserved members just coast on
                # the shared shift
                K, _ = ukf.kalman_gain(pred, mm)
                for m, z_m in observed.items():
                    s = member_states[m].vec
                    member_states[m] = AgentState.from_vec(
                        s + K @ (np.asarray(z_m, dtype=float) - ukf.H @ s))
        else:
            member_states = {c.members[0]: AgentState.from_vec(x_post)}
        new_states.update(member_states)
        mean_vec = np.mean([member_states[m].vec for m in c.members], axis=0)
        filtered.append(Cluster(id=c.id, members=c.members,
                                mean=AgentState.from_vec(mean_vec),
                                cov=tuple(map(tuple, p_post)), goal=c.goal))

    interim = ClusterSet(clusters=tuple(filtered), agent_states=new_states)
    events: list[ClusterEvent] = []

    if observations is not None:
        for a in interim.live_ids():
            if a in observations:
                missed_counts[a] = 0
            else:
                missed_counts[a] = missed_counts.get(a, 0) + 1
        interim, del_events = clustering.delete_agents(interim, missed_counts, cfg, goals)
        events.extend(del_events)
        for ev in del_events:
            for a in ev.agents:
                missed_counts.pop(a, None)

        fresh = {a: s for a, s in (new_agent_states or {}).items()
                 if a not in interim.agent_states}
        if fresh:
            states2 = {**interim.agent_states, **fresh}
            singles = tuple(
                model.make_cluster(next(id_source), (a,), states2, goals, cfg)
                for a in sorted(fresh)
            )
            events.extend(ClusterEvent("insert", agents=(a,)) for a in sorted(fresh))
            interim = ClusterSet(clusters=interim.clusters + singles,
                                 agent_states=states2)
            for a in fresh:
                missed_counts[a] = 0

    if not interim.agent_states:
        # every track exceeded its grace period; nothing left to cluster
        return interim, None, events
    out, re_events = clustering.recluster(
        interim, interim.agent_states, goals, cfg, id_source, partitioner)
    events.extend(re_events)
    return out, density_of(out), events


def run(scene: Scene, cfg: Config, observation_stride: int | None = None,
        partitioner: Partitioner | None = None,
        goal_mode: str = "auto") -> PredictionRun:
    """Full prediction run over a scene.

    Every observation_stride-th frame supplies position measurements (truth
    plus synthetic noise at meas_noise_std, seeded from cfg.seed); None means
    a pure prediction run.
    """
    validate_config(cfg)
    if observation_stride is not None and observation_stride < 1:
        raise ValueError("observation_stride must be >= 1 or None")
    if scene.n_frames < 1:
        raise ValueError("scene has no frames")
    goals, goal_source = provision_goals(scene, cfg, goal_mode)

    id_source = count(0)
    missed: dict[int, int] = {}
    rng = np.random.default_rng(cfg.seed)

    cs, init_events = init_run(dict(scene.frames[0]), goals, cfg, id_source,
                               partitioner)
    snapshots = [cs]
    densities = [density_of(cs, t=0.0)]
    logs = [ClusteringDecisionLog(0, tuple(init_events))]

    for k in range(1, scene.n_frames):
        obs = None
        fresh = None
        if observation_stride is not None and k % observation_stride == 0:
            truth = scene.frames[k]
            obs = {}
            for a in sorted(truth):
                obs[a] = truth[a].pos + rng.normal(0.0, cfg.meas_noise_std, 2)
            fresh = {
                a: AgentState(tuple(obs[a]), truth[a].v)
                for a in sorted(set(truth) - set(cs.agent_states))
            }
        cs, dens, events = step_run(
            cs, obs, goals, cfg, scene.dt,
            id_source=id_source, missed_counts=missed,
            new_agent_states=fresh, partitioner=partitioner)
        snapshots.append(cs)
        densities.append(None if dens is None
                         else MixtureDensity(dens.components, t=k * scene.dt))
        logs.append(ClusteringDecisionLog(k, tuple(events)))

    return PredictionRun(
        scene_id=scene.scene_id, dt=scene.dt, stride=observation_stride,
        goal_source=goal_source, config=cfg,
        snapshots=tuple(snapshots), densities=tuple(densities), logs=tuple(logs))


def export_run(run_: PredictionRun, outdir,
               density_grid: tuple[int, int] | None = None) -> Path:
    """Write the run artifact directory (deterministic byte-for-byte)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "snapshots.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for snap in run_.snapshots:
            fh.write(model.dumps(snap) + "\n")

    with open(out / "trajectories.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,agent_id,px,py,vx,vy,cluster_id\n")
        for k, snap in enumerate(run_.snapshots):
            for a in snap.live_ids():
                s = snap.agent_states[a]
                cid = snap.cluster_of(a).id
                fh.write(f"{k},{a},{s.p[0]!r},{s.p[1]!r},{s.v[0]!r},{s.v[1]!r},{cid}\n")

    clustering.write_event_log(run_.logs, out / "events.jsonl")

    meta = {
        "scene_id": run_.scene_id,
        "dt": run_.dt,
        "stride": run_.stride,
        "goal_source": run_.goal_source,
        "config": run_.config.to_dict(),
    }
    with open(out / "run_meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")

    if density_grid is not None:
        nx, ny = density_grid
        means = np.array([c.mean.vec[:2]
                          for snap in run_.snapshots for c in snap.clusters])
        if means.size == 0:
            means = np.zeros((1, 2))
        lo = means.min(axis=0) - 2.0
        hi = means.max(axis=0) + 2.0
        xs = np.linspace(lo[0], hi[0], nx)
        ys = np.linspace(lo[1], hi[1], ny)
        with open(out / "density_grid.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("step,x,y,density\n")
            for k, dens in enumerate(run_.densities):
                if dens is None:
                    continue
                gx, gy = np.meshgrid(xs, ys, indexing="ij")
                pts = np.column_stack([gx.ravel(), gy.ravel()])
                vals = eval_positional_density(dens, pts)
                for (x, y), v in zip(pts, np.atleast_1d(vals)):
                    fh.write(f"{k},{x!r},{y!r},{v!r}\n")
    return out
