"""Multi-view agglomerative grouping.

Pairing (agent-agent) picks each unassigned agent's minimum-cost partner and
gates it on Euclidean distance and on the cost metric; cluster-cluster merging
uses complete linkage (farthest cross pair) gated on cost then Hausdorff
distance. Re-clustering discards the previous partition, rebuilds it from the
current states, and reports the transition as a replayable event log.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import count
from typing import Callable, Iterator, Mapping

import numpy as np

from .model import (
    AgentState,
    Cluster,
    ClusterSet,
    Config,
    Goal,
    make_cluster,
)
from .optcost import goal_cost_vector


def euclidean(p_i, p_j) -> float:
    """Plain 2-norm between two positions."""
    return float(np.linalg.norm(np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)))


def hausdorff(X, Y) -> float:
    """Exhaustive Hausdorff distance between two non-empty 2D point sets."""
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    Y = np.asarray(Y, dtype=float).reshape(-1, 2)
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("hausdorff requires non-empty point sets")
    d = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


@dataclass(frozen=True)
class ClusterEvent:
    """One grouping decision; members are agent-id tuples.

    kinds: pair (members_a = founding pair), merge (members_a absorbs
    members_b), split (members_a dissolved to singletons), insert, delete.
    """

    kind: str
    members_a: tuple[int, ...] = ()
    members_b: tuple[int, ...] = ()
    agents: tuple[int, ...] = ()
    cost: float | None = None
    ed: float | None = None
    hd: float | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.members_a:
            d["members_a"] = list(self.members_a)
        if self.members_b:
            d["members_b"] = list(self.members_b)
        if self.agents:
            d["agents"] = list(self.agents)
        for k in ("cost", "ed", "hd"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d


@dataclass(frozen=True)
class ClusteringDecisionLog:
    step: int
    events: tuple[ClusterEvent, ...] = ()


def write_event_log(logs, path) -> None:
    """Line-delimited JSON audit file, one event per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for log_ in logs:
            for ev in log_.events:
                row = {"step": log_.step, **ev.to_dict()}
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def replay_events(member_sets, events) -> set[frozenset]:
    """Apply a decision-event stream to a partition (member sets only)."""
    parts = {frozenset(ms) for ms in member_sets}

    def take(ms):
        key = frozenset(ms)
        if key not in parts:
            raise ValueError(f"replay: no cluster with members {sorted(ms)}")
        parts.remove(key)
        return key

    for ev in events:
        if ev.kind == "pair":
            i, j = ev.members_a
            take({i})
            take({j})
            parts.add(frozenset({i, j}))
        elif ev.kind == "merge":
            a = take(ev.members_a)
            b = take(ev.members_b)
            parts.add(a | b)
        elif ev.kind == "split":
            take(ev.members_a)
            parts.update(frozenset({m}) for m in ev.members_a)
        elif ev.kind == "insert":
            parts.update(frozenset({a}) for a in ev.agents)
        elif ev.kind == "delete":
            for a in ev.agents:
                home = next(p for p in parts if a in p)
                parts.remove(home)
                rest = home - {a}
                if rest:
                    parts.add(rest)
        else:
            raise ValueError(f"unknown event kind {ev.kind!r}")
    return parts


def _goal_state_rows(ids, goals: Mapping[int, Goal]) -> np.ndarray:
    out = np.empty((len(ids), 4))
    for k, i in enumerate(ids):
        g = goals[i]
        out[k, 0], out[k, 1] = g.p_g
        out[k, 2], out[k, 3] = g.v_g
    return out


class _Metrics:
    """Pairwise cost/distance tables over the current states, by agent index.

    Everything downstream (pair gates, complete linkage, Hausdorff) indexes
    into these precomputed matrices, so the per-step cost is one vectorized
    pass regardless of how many gates get evaluated.
    """

    def __init__(self, states: Mapping[int, AgentState], goals: Mapping[int, Goal],
                 cfg: Config):
        self.ids = sorted(states)
        self.index = {a: k for k, a in enumerate(self.ids)}
        X = np.empty((len(self.ids), 4))
        for k, i in enumerate(self.ids):
            s = states[i]
            X[k, 0], X[k, 1] = s.p
            X[k, 2], X[k, 3] = s.v
        self.X = X
        self.pos = X[:, :2]
        V = X[:, 2:]
        T = cfg.T_f_cost
        # Gramian form of the minimum-effort cost with the 1/2 convention:
        # V1 = 6|dpt|^2/T^3 - 6 dpt.dv/T^2 + 2|dv|^2/T, where dpt is the
        # position defect pf - p0 - v0*T and dv = vf - v0 (equivalent to the
        # a,b law; cross-checked against optcost in the tests)
        pf_p0 = self.pos[None, :, :] - self.pos[:, None, :]
        self.pos_d = np.sqrt((pf_p0 * pf_p0).sum(axis=2))
        dpt = pf_p0 - V[:, None, :] * T
        dv = V[None, :, :] - V[:, None, :]
        dv2 = (dv * dv).sum(axis=2)
        v1 = ((dpt * dpt).sum(axis=2) * (6.0 / T ** 3)
              - (dpt * dv).sum(axis=2) * (6.0 / T ** 2)
              + dv2 * (2.0 / T))
        self.cost = cfg.lambda1 * v1
        if cfg.lambda2 != 0.0:
            v2 = goal_cost_vector(X, _goal_state_rows(self.ids, goals), T)
            self.cost = self.cost + cfg.lambda2 * v2[:, None]
        np.fill_diagonal(self.cost, np.inf)
        if cfg.linkage_positions_only:
            self.linkage = self.pos_d
        else:
            # state distance splits into position and velocity blocks
            self.linkage = np.sqrt(self.pos_d * self.pos_d + dv2)

    def farthest_cross_pair(self, idx_a, idx_b):
        sub = self.linkage[np.ix_(idx_a, idx_b)]
        k = int(np.argmax(sub))
        r, c = divmod(k, sub.shape[1])
        return idx_a[r], idx_b[c]

    def hausdorff_idx(self, idx_a, idx_b) -> float:
        sub = self.pos_d[np.ix_(idx_a, idx_b)]
        return float(max(sub.min(axis=1).max(), sub.min(axis=0).max()))

    def gate_merge(self, idx_a, idx_b, cfg: Config):
        """Merge gates: cost of the farthest cross pair, then Hausdorff."""
        mi, mj = self.farthest_cross_pair(idx_a, idx_b)
        c = float(self.cost[mi, mj])
        if not c < cfg.c_tol:
            return False, {"cost": c, "hd": None, "gate": "cost"}
        hd = self.hausdorff_idx(idx_a, idx_b)
        if not hd <= cfg.d_tol:
            return False, {"cost": c, "hd": hd, "gate": "hausdorff"}
        return True, {"cost": c, "hd": hd, "gate": None}


def _absorb_pass(metrics: _Metrics, members: list[int], candidates: list[int],
                 cfg: Config, events: list[ClusterEvent]):
    """Singleton absorption into a fresh cluster, candidates ascending.

    Vectorized over the remaining candidates: every candidate before the one
    absorbed sees the same cluster it would in a sequential scan, and the
    scan resumes past the absorbed candidate with the grown cluster.
    For a singleton candidate c the Hausdorff distance reduces to the
    farthest-member distance max_m ||p_m - p_c||; candidates failing that
    geometric gate are dropped before any cost work (a rejection either way).
    """
    ids = metrics.ids
    members = sorted(members)
    absorbed: list[int] = []
    start = 0
    while start < len(candidates):
        idx = candidates[start:]
        hds = metrics.pos_d[np.ix_(members, idx)].max(axis=0)
        near = hds <= cfg.d_tol
        if not near.any():
            break
        sub_link = metrics.linkage[np.ix_(members, idx)]
        far = np.argmax(sub_link, axis=0)
        costs = metrics.cost[[members[r] for r in far], idx]
        hits = np.flatnonzero((costs < cfg.c_tol) & near)
        if hits.size == 0:
            break
        h = int(hits[0])
        k = idx[h]
        events.append(ClusterEvent(
            "merge",
            members_a=tuple(ids[m] for m in members),
            members_b=(ids[k],),
            cost=float(costs[h]), hd=float(hds[h])))
        members = sorted(members + [k])
        absorbed.append(k)
        start += h + 1
    return members, absorbed


def _pairing_scan(metrics: _Metrics, cfg: Config):
    """Agent-agent pairing with in-line absorption of remaining agents."""
    ids = metrics.ids
    n = len(ids)
    unassigned = set(range(n))
    groups: list[list[int]] = []
    events: list[ClusterEvent] = []
    for i in range(n):
        if i not in unassigned:
            continue
        if len(unassigned) < 2:
            continue
        row = metrics.cost[i]
        # ties resolve to the lowest id (ascending scan keeps the first min)
        j = min((k for k in sorted(unassigned) if k != i), key=row.__getitem__)
        c_ij = float(row[j])
        d_ij = float(metrics.pos_d[i, j])
        if d_ij < cfg.d_tol and c_ij < cfg.c_tol:
            unassigned.discard(i)
            unassigned.discard(j)
            events.append(ClusterEvent(
                "pair", members_a=(ids[i], ids[j]), cost=c_ij, ed=d_ij))
            members, absorbed = _absorb_pass(
                metrics, [i, j], [k for k in sorted(unassigned)], cfg, events)
            unassigned.difference_update(absorbed)
            groups.append(members)
    groups.extend([i] for i in sorted(unassigned))
    return groups, events


def _merge_pass(groups, metrics: _Metrics, cfg: Config):
    """Cluster-cluster merging repeated to a fixed point (at most N-1 merges).

    Pairs whose Hausdorff distance is provably above d_tol are skipped via a
    centroid-distance lower bound (d_H >= ||c_A - c_B|| - r_A - r_B); such a
    pair would be rejected anyway, so the outcome is unchanged.
    """
    ids = metrics.ids
    pos = metrics.pos.tolist()
    groups = [sorted(g) for g in groups]
    events: list[ClusterEvent] = []
    merged = True
    budget = len(ids)

    def bound(g):
        cx = sum(pos[m][0] for m in g) / len(g)
        cy = sum(pos[m][1] for m in g) / len(g)
        r = max(((pos[m][0] - cx) ** 2 + (pos[m][1] - cy) ** 2) ** 0.5 for m in g)
        return cx, cy, r

    while merged and budget > 0:
        merged = False
        groups.sort(key=lambda g: g[0])
        bounds = [bound(g) for g in groups]
        for a in range(len(groups)):
            ax, ay, ar = bounds[a]
            for b in range(a + 1, len(groups)):
                bx, by, br = bounds[b]
                if ((ax - bx) ** 2 + (ay - by) ** 2) ** 0.5 - ar - br > cfg.d_tol:
                    continue
                ok, info = metrics.gate_merge(groups[a], groups[b], cfg)
                if ok:
                    events.append(ClusterEvent(
                        "merge",
                        members_a=tuple(ids[m] for m in groups[a]),
                        members_b=tuple(ids[m] for m in groups[b]),
                        cost=info["cost"], hd=info["hd"]))
                    groups[a] = sorted(groups[a] + groups[b])
                    del groups[b]
                    merged = True
                    budget -= 1
                    break
            if merged:
                break
    return groups, events


def cluster_member_sets(states: Mapping[int, AgentState], goals: Mapping[int, Goal],
                        cfg: Config):
    """Full grouping (pairing then merge passes) as agent-id member sets."""
    if not states:
        raise ValueError("cannot cluster an empty agent set")
    metrics = _Metrics(states, goals, cfg)
    groups, events = _pairing_scan(metrics, cfg)
    groups, merge_events = _merge_pass(groups, metrics, cfg)
    member_sets = [tuple(metrics.ids[m] for m in g) for g in groups]
    return member_sets, events + merge_events


Partitioner = Callable[[Mapping[int, AgentState], Mapping[int, Goal], Config], tuple]


def _materialize(member_sets, states, goals, cfg, id_source: Iterator[int],
                 prior: ClusterSet | None = None):
    """Build clusters, inheriting id and filtered covariance for member sets
    that survived unchanged from the prior partition."""
    prior_by_members = {}
    if prior is not None:
        prior_by_members = {frozenset(c.members): c for c in prior.clusters}
    clusters = []
    for ms in member_sets:
        old = prior_by_members.get(frozenset(ms))
        if old is not None:
            clusters.append(make_cluster(old.id, ms, states, goals, cfg,
                                         cov=old.cov_matrix))
        else:
            clusters.append(make_cluster(next(id_source), ms, states, goals, cfg))
    return ClusterSet(clusters=tuple(clusters), agent_states=dict(states))


def cluster_agents(states: Mapping[int, AgentState], goals: Mapping[int, Goal],
                   cfg: Config, id_source: Iterator[int] | None = None,
                   partitioner: "Partitioner | None" = None):
    """Pairing plus merge passes from scratch; returns (ClusterSet, events)."""
    build = partitioner or cluster_member_sets
    member_sets, events = build(states, goals, cfg)
    cs = _materialize(member_sets, states, goals, cfg, id_source or count())
    return cs, events


def pair_agents(states: Mapping[int, AgentState], goals: Mapping[int, Goal],
                cfg: Config, id_source: Iterator[int] | None = None):
    """Agent-agent pairing on the given states; returns (ClusterSet, events)."""
    if not states:
        raise ValueError("cannot cluster an empty agent set")
    metrics = _Metrics(states, goals, cfg)
    groups, events = _pairing_scan(metrics, cfg)
    member_sets = [tuple(metrics.ids[m] for m in g) for g in groups]
    cs = _materialize(member_sets, states, goals, cfg, id_source or count())
    return cs, events


def merge_clusters(c_i: Cluster, c_j: Cluster, states: Mapping[int, AgentState],
                   goals: Mapping[int, Goal], cfg: Config,
                   new_id: int | None = None):
    """Complete-linkage merge check for one cluster pair.

    Returns (merged Cluster, info) on acceptance or (None, info) with the
    failing gate named in info["gate"].
    """
    if set(c_i.members) & set(c_j.members):
        raise ValueError("merge_clusters requires disjoint clusters")
    sub = {m: states[m] for m in (*c_i.members, *c_j.members)}
    sub_goals = {m: goals[m] for m in sub}
    metrics = _Metrics(sub, sub_goals, cfg)
    idx_a = [metrics.index[m] for m in c_i.members]
    idx_b = [metrics.index[m] for m in c_j.members]
    ok, info = metrics.gate_merge(idx_a, idx_b, cfg)
    if not ok:
        return None, info
    merged_id = new_id if new_id is not None else max(c_i.id, c_j.id) + 1
    merged = make_cluster(merged_id, (*c_i.members, *c_j.members), states, goals, cfg)
    return merged, info


def recluster(prior: ClusterSet, updated_states: Mapping[int, AgentState],
              goals: Mapping[int, Goal], cfg: Config,
              id_source: Iterator[int] | None = None,
              partitioner: Partitioner | None = None):
    """Rebuild the partition from the current states.

    Prior groupings are discarded; clusters whose member set re-forms
    identically keep their id and filtered covariance, everything else gets a
    creation-rule covariance. Events describe the transition: splits of
    dissolved clusters first, then the formations that produced new clusters.
    """
    if set(prior.agent_states) != set(updated_states):
        raise ValueError("updated_states must cover exactly the live agents")
    build = partitioner or cluster_member_sets
    member_sets, formation_events = build(updated_states, goals, cfg)
    new_keys = {frozenset(ms) for ms in member_sets}
    preserved = {frozenset(c.members) for c in prior.clusters} & new_keys

    split_events = [
        ClusterEvent("split", members_a=c.members)
        for c in sorted(prior.clusters, key=lambda c: c.id)
        if len(c.members) > 1 and frozenset(c.members) not in preserved
    ]

    def final_home(ev: ClusterEvent) -> frozenset:
        probe = (ev.members_a or ev.agents)[0]
        return next(k for k in new_keys if probe in k)

    kept = [ev for ev in formation_events if final_home(ev) not in preserved]
    cs = _materialize(member_sets, updated_states, goals, cfg,
                      id_source or count(_next_free_id(prior)), prior=prior)
    return cs, split_events + kept


def _next_free_id(cs: ClusterSet) -> int:
    return max((c.id for c in cs.clusters), default=-1) + 1


def insert_agents(cs: ClusterSet, new_obs: Mapping[int, AgentState],
                  goals: Mapping[int, Goal], cfg: Config,
                  id_source: Iterator[int] | None = None):
    """Add new agents as singletons, then run a recluster pass."""
    dup = sorted(set(new_obs) & set(cs.agent_states))
    if dup:
        raise ValueError(f"agents already live: {dup}")
    if id_source is None:
        id_source = count(_next_free_id(cs))
    states = {**cs.agent_states, **new_obs}
    events = [ClusterEvent("insert", agents=(a,)) for a in sorted(new_obs)]
    singles = tuple(
        make_cluster(next(id_source), (a,), states, goals, cfg)
        for a in sorted(new_obs)
    )
    widened = ClusterSet(clusters=cs.clusters + singles, agent_states=states)
    out, re_events = recluster(widened, states, goals, cfg, id_source)
    return out, events + re_events


def delete_agents(cs: ClusterSet, missed_counts: Mapping[int, int], cfg: Config,
                  goals: Mapping[int, Goal] | None = None):
    """Remove agents unobserved for more than deletion_grace consecutive
    observation steps; shrunken clusters get recomputed means/covariances."""
    gone = sorted(
        a for a, n in missed_counts.items()
        if n > cfg.deletion_grace and a in cs.agent_states
    )
    if not gone:
        return cs, []
    states = {a: s for a, s in cs.agent_states.items() if a not in gone}
    clusters = []
    for c in cs.clusters:
        rest = tuple(m for m in c.members if m not in gone)
        if not rest:
            continue
        if rest == c.members:
            clusters.append(c)
        else:
            # without per-agent goals the shrunken cluster keeps its old goal
            rest_goals = {m: goals[m] for m in rest} if goals else {m: c.goal for m in rest}
            clusters.append(make_cluster(c.id, rest, states, rest_goals, cfg))
    out = ClusterSet(clusters=tuple(clusters), agent_states=states)
    return out, [ClusterEvent("delete", agents=(a,)) for a in gone]
