"""Metrics and studies: ADE/FDE, the distance-only baseline, CD-vs-ED
comparison and the lambda sweep."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import count
from typing import Iterator, Mapping, Sequence

import numpy as np
from sklearn.cluster import DBSCAN

from . import pipeline
from .clustering import ClusterEvent, _materialize
from .model import AgentState, ClusterSet, Config, Goal
from .pipeline import PredictionRun
from .scene_io import Scene


def ade_fde(pred, truth) -> tuple[float, float]:
    """Average and final position error between aligned trajectories."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    if pred.shape != truth.shape:
        raise ValueError(f"trajectory length mismatch: {pred.shape} vs {truth.shape}")
    if pred.shape[0] == 0:
        raise ValueError("trajectories must have at least one step")
    err = np.linalg.norm(pred - truth, axis=1)
    return float(err.mean()), float(err[-1])


@dataclass(frozen=True)
class MetricsReport:
    """Per-agent and scene-aggregate errors (aggregates are sums over agents;
    per-agent means are reported too since sums depend on population size)."""

    per_agent: dict[int, tuple[float, float]]
    ade_sum: float
    fde_sum: float
    ade_mean: float
    fde_mean: float
    wall_clock_s: float
    cluster_counts: tuple[int, ...]


def report_for_run(run: PredictionRun, scene: Scene,
                   wall_clock_s: float = 0.0) -> MetricsReport:
    """Compare predicted trajectories against scene truth, agent by agent."""
    per_agent: dict[int, tuple[float, float]] = {}
    for a in run.agent_ids():
        traj = run.trajectory(a)
        steps = [k for k in sorted(traj)
                 if k < scene.n_frames and a in scene.frames[k]]
        if not steps:
            continue
        pred = np.array([traj[k][0].pos for k in steps])
        truth = np.array([scene.frames[k][a].pos for k in steps])
        per_agent[a] = ade_fde(pred, truth)
    ades = [v[0] for v in per_agent.values()]
    fdes = [v[1] for v in per_agent.values()]
    return MetricsReport(
        per_agent=per_agent,
        ade_sum=float(sum(ades)),
        fde_sum=float(sum(fdes)),
        ade_mean=float(np.mean(ades)) if ades else 0.0,
        fde_mean=float(np.mean(fdes)) if fdes else 0.0,
        wall_clock_s=wall_clock_s,
        cluster_counts=tuple(s.n_clusters for s in run.snapshots),
    )


def ed_member_sets(states: Mapping[int, AgentState], goals, cfg: Config):
    """Density-based position-only grouping: eps = d_tol, min_samples = 2.

    With min_samples=2 the DBSCAN clusters are exactly the connected
    components of the eps-neighborhood graph; noise points (label -1) become
    singletons. Emits pair/merge events so the decision log stays replayable.
    """
    ids = sorted(states)
    pos = np.array([states[a].p for a in ids]).reshape(-1, 2)
    labels = DBSCAN(eps=cfg.d_tol, min_samples=2).fit_predict(pos)

    comps: dict[int, list[int]] = {}
    member_sets = []
    for k, lab in enumerate(labels):
        if lab < 0:
            member_sets.append((ids[k],))
        else:
            comps.setdefault(int(lab), []).append(k)
    for lab in sorted(comps):
        member_sets.append(tuple(ids[k] for k in comps[lab]))
    member_sets.sort(key=lambda ms: ms[0])

    events: list[ClusterEvent] = []
    for ms in member_sets:
        if len(ms) >= 2:
            events.append(ClusterEvent("pair", members_a=ms[:2]))
            grown = list(ms[:2])
            for a in ms[2:]:
                events.append(ClusterEvent("merge", members_a=tuple(grown),
                                           members_b=(a,)))
                grown.append(a)
    return member_sets, events


def ed_baseline_cluster(states: Mapping[int, AgentState], cfg: Config,
                        goals: Mapping[int, Goal] | None = None,
                        id_source: Iterator[int] | None = None) -> ClusterSet:
    """The ED baseline as a standalone clustering op (pipeline-compatible
    means and covariances)."""
    if goals is None:
        goals = {a: Goal(tuple(s.pos + s.vel * cfg.T_f_cost))
                 for a, s in states.items()}
    member_sets, _ = ed_member_sets(states, goals, cfg)
    return _materialize(member_sets, states, goals, cfg, id_source or count())


def _timed_run(scene: Scene, cfg: Config, stride, partitioner, goal_mode):
    t0 = time.perf_counter()
    run_ = pipeline.run(scene, cfg, observation_stride=stride,
                        partitioner=partitioner, goal_mode=goal_mode)
    elapsed = time.perf_counter() - t0
    return run_, elapsed


def compare_cd_ed(scenes: Sequence[Scene], cfg: Config,
                  stride: int | None = 5, goal_mode: str = "auto"):
    """Run the identical pipeline per scene with ED then CD clustering.

    Returns one row per arm per scene: {scene, type, time_s, fde, ade}.
    Scenes run sequentially so the wall-clock columns are comparable.
    """
    if not scenes:
        raise ValueError("compare_cd_ed needs at least one scene")
    rows = []
    for scene in scenes:
        for arm, partitioner in (("ED", ed_member_sets), ("CD", None)):
            run_, elapsed = _timed_run(scene, cfg, stride, partitioner, goal_mode)
            rep = report_for_run(run_, scene, wall_clock_s=elapsed)
            rows.append({
                "scene": scene.scene_id,
                "type": arm,
                "time_s": elapsed,
                "fde": rep.fde_sum,
                "ade": rep.ade_sum,
            })
    return rows


def render_table(rows) -> str:
    """Aligned text rendering of the comparison rows."""
    header = f"{'Scene':<12} {'Type':<4} {'Time':>10} {'FDE':>12} {'ADE':>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['scene']:<12} {r['type']:<4} {r['time_s']:>10.4f} "
                     f"{r['fde']:>12.4f} {r['ade']:>12.4f}")
    return "\n".join(lines)


def write_comparison_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("scene,type,time_s,fde,ade\n")
        for r in rows:
            fh.write(f"{r['scene']},{r['type']},{r['time_s']!r},"
                     f"{r['fde']!r},{r['ade']!r}\n")


def membership_timeline(run_: PredictionRun):
    """(step, cluster_id, agent_id) rows, plot-ready."""
    rows = []
    for k, snap in enumerate(run_.snapshots):
        for c in sorted(snap.clusters, key=lambda c: c.id):
            for a in c.members:
                rows.append((k, c.id, a))
    return rows


def lambda_sweep(scene: Scene, lambda_grid: Sequence[float], cfg: Config,
                 stride: int | None = None, goal_mode: str = "auto",
                 threads: int = 1):
    """One pipeline run per lambda1 (lambda2 = 1 - lambda1).

    Returns {lambda1: timeline rows}.
    """
    grid = list(lambda_grid)
    if any(not 0.0 <= l1 <= 1.0 for l1 in grid):
        raise ValueError("lambda grid entries must lie in [0, 1]")

    def one(l1: float):
        cfg2 = replace(cfg, lambda1=float(l1), lambda2=float(1.0 - l1))
        run_ = pipeline.run(scene, cfg2, observation_stride=stride,
                            goal_mode=goal_mode)
        return float(l1), membership_timeline(run_)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, grid))
    else:
        results = [one(l1) for l1 in grid]
    return dict(results)


def write_timeline_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,cluster_id,agent_id\n")
        for step, cid, aid in rows:
            fh.write(f"{step},{cid},{aid}\n")
