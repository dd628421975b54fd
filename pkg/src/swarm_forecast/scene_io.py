"""Scene ingestion and generation.

Canonical on-disk format is a CSV with header scene_id,frame,agent_id,x,y,vx,vy
in meters/seconds (velocities optional on read, derived by finite differences).
A Trajnet-style ndjson converter and a social-force scenario generator feed it.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import dynamics
from .model import AgentState, Config, Goal

log = logging.getLogger(__name__)

SCENE_HEADER = ["scene_id", "frame", "agent_id", "x", "y", "vx", "vy"]
GOALS_HEADER = ["agent_id", "gx", "gy"]


class SceneFormatError(ValueError):
    """Malformed scene input; message carries the offending line when known."""


@dataclass(frozen=True)
class Scene:
    """Time series of agent states at a uniform frame interval dt."""

    scene_id: str
    dt: float
    frames: tuple[Mapping[int, AgentState], ...]
    goals: Mapping[int, Goal] | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise SceneFormatError("scene dt must be positive")
        object.__setattr__(self, "frames", tuple(dict(f) for f in self.frames))
        if self.goals is not None:
            object.__setattr__(self, "goals", dict(self.goals))

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def agent_ids(self) -> list[int]:
        out: set[int] = set()
        for f in self.frames:
            out.update(f)
        return sorted(out)

    def last_position(self, agent_id: int) -> np.ndarray | None:
        for f in reversed(self.frames):
            if agent_id in f:
                return f[agent_id].pos
        return None


def _parse_float(text: str, line_no: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError as exc:
        raise SceneFormatError(f"line {line_no}: bad {col} value {text!r}") from exc
    if not math.isfinite(v):
        raise SceneFormatError(f"line {line_no}: non-finite {col} value {text!r}")
    return v


def _derive_velocities(frame_pos: dict[int, dict[int, np.ndarray]],
                       frame_ids: list[int], dt: float):
    """Central differences where both neighbors exist, one-sided at edges."""
    vel: dict[int, dict[int, np.ndarray]] = {k: {} for k in frame_ids}
    idx_of = {f: k for k, f in enumerate(frame_ids)}
    agents = sorted({a for f in frame_pos.values() for a in f})
    for a in agents:
        present = [f for f in frame_ids if a in frame_pos[f]]
        for f in present:
            k = idx_of[f]
            prev_f = frame_ids[k - 1] if k > 0 else None
            next_f = frame_ids[k + 1] if k + 1 < len(frame_ids) else None
            has_prev = prev_f is not None and a in frame_pos[prev_f]
            has_next = next_f is not None and a in frame_pos[next_f]
            p = frame_pos[f][a]
            if has_prev and has_next:
                v = (frame_pos[next_f][a] - frame_pos[prev_f][a]) / (2.0 * dt)
            elif has_next:
                v = (frame_pos[next_f][a] - p) / dt
            elif has_prev:
                v = (p - frame_pos[prev_f][a]) / dt
            else:
                v = np.zeros(2)
            vel[f][a] = v
    return vel


def read_scene_csv(path, dt: float = 0.1) -> Scene:
    """Parse the canonical scene CSV (single scene per file)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SceneFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header not in (SCENE_HEADER, SCENE_HEADER[:5]):
            raise SceneFormatError(
                f"{path}: bad header {header!r}, expected {','.join(SCENE_HEADER)}"
                " (vx,vy optional)")
        has_vel = len(header) == 7
        rows = []
        scene_ids = set()
        seen: set[tuple[int, int]] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SceneFormatError(f"line {line_no}: expected {len(header)} fields")
            scene_ids.add(row[0])
            try:
                frame = int(row[1])
                agent = int(row[2])
            except ValueError as exc:
                raise SceneFormatError(f"line {line_no}: bad frame/agent id") from exc
            if (frame, agent) in seen:
                raise SceneFormatError(f"line {line_no}: duplicate (frame, agent_id) "
                                       f"({frame}, {agent})")
            seen.add((frame, agent))
            x = _parse_float(row[3], line_no, "x")
            y = _parse_float(row[4], line_no, "y")
            v = None
            if has_vel:
                v = (_parse_float(row[5], line_no, "vx"),
                     _parse_float(row[6], line_no, "vy"))
            rows.append((frame, agent, (x, y), v))
    if not rows:
        raise SceneFormatError(f"{path}: no data rows")
    if len(scene_ids) != 1:
        raise SceneFormatError(f"{path}: expected one scene_id, found {sorted(scene_ids)}")
    rows.sort(key=lambda r: (r[0], r[1]))
    frame_ids = sorted({r[0] for r in rows})
    if len(frame_ids) > 2:
        gaps = np.diff(frame_ids)
        if len(set(gaps.tolist())) > 1:
            raise SceneFormatError(f"{path}: non-uniform frame spacing {sorted(set(gaps.tolist()))}")
    frame_pos: dict[int, dict[int, np.ndarray]] = {f: {} for f in frame_ids}
    frame_vel: dict[int, dict[int, np.ndarray]] = {f: {} for f in frame_ids}
    for frame, agent, p, v in rows:
        frame_pos[frame][agent] = np.array(p)
        if v is not None:
            frame_vel[frame][agent] = np.array(v)
    if not has_vel:
        frame_vel = _derive_velocities(frame_pos, frame_ids, dt)
    frames = tuple(
        {a: AgentState(tuple(frame_pos[f][a]), tuple(frame_vel[f][a]))
         for a in sorted(frame_pos[f])}
        for f in frame_ids
    )
    return Scene(scene_id=next(iter(scene_ids)), dt=dt, frames=frames)


def write_scene_csv(scene: Scene, path) -> None:
    """Write the canonical CSV with full round-trip float precision."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(SCENE_HEADER) + "\n")
        for k, frame in enumerate(scene.frames):
            for a in sorted(frame):
                s = frame[a]
                fh.write(f"{scene.scene_id},{k},{a},{s.p[0]!r},{s.p[1]!r},"
                         f"{s.v[0]!r},{s.v[1]!r}\n")


def read_goals_csv(path) -> dict[int, Goal]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != GOALS_HEADER:
            raise SceneFormatError(f"{path}: bad goals header {header!r}")
        goals = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            goals[int(row[0])] = Goal((_parse_float(row[1], line_no, "gx"),
                                       _parse_float(row[2], line_no, "gy")))
    return goals


def write_goals_csv(goals: Mapping[int, Goal], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(GOALS_HEADER) + "\n")
        for a in sorted(goals):
            g = goals[a]
            fh.write(f"{a},{g.p_g[0]!r},{g.p_g[1]!r}\n")


def convert_trajnet(path, dt: float = 0.4) -> list[Scene]:
    """Convert Trajnet-style ndjson ({scene, track} records) to Scenes.

    Unknown record kinds are skipped (counted in a log line); frames missing
    inside a track stay unobserved.
    """
    scenes_meta = []
    tracks: dict[int, dict[int, tuple[float, float]]] = {}  # frame -> agent -> pos
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SceneFormatError(f"line {line_no}: invalid JSON") from exc
            if "scene" in rec:
                s = rec["scene"]
                scenes_meta.append((s["id"], int(s["s"]), int(s["e"])))
            elif "track" in rec:
                t = rec["track"]
                f, p = int(t["f"]), int(t["p"])
                x = float(t["x"])
                y = float(t["y"])
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise SceneFormatError(f"line {line_no}: non-finite track coordinates")
                tracks.setdefault(f, {})[p] = (x, y)
            else:
                skipped += 1
    if skipped:
        log.info("convert_trajnet: skipped %d unknown records", skipped)
    out = []
    for scene_id, start, end in scenes_meta:
        frame_ids = [f for f in sorted(tracks) if start <= f <= end]
        if not frame_ids:
            continue
        frame_pos = {f: {a: np.array(p) for a, p in tracks[f].items()} for f in frame_ids}
        vel = _derive_velocities(frame_pos, frame_ids, dt)
        frames = tuple(
            {a: AgentState(tuple(frame_pos[f][a]), tuple(vel[f][a]))
             for a in sorted(frame_pos[f])}
            for f in frame_ids
        )
        out.append(Scene(scene_id=str(scene_id), dt=dt, frames=frames))
    return out


@dataclass(frozen=True)
class SynthGroup:
    """One group of agents sharing a start box and a goal."""

    count: int
    box: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    goal: tuple[float, float]
    speed: float

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("group count must be >= 1")


def synth_scene(groups: Sequence[SynthGroup], seed: int, duration: float,
                dt: float, cfg: Config, scene_id: str = "synthetic",
                goal_lead: float | None = None) -> Scene:
    """Ground-truth generator: closed-loop social-force simulation.

    Starts are sampled uniformly in each group's box; initial velocity points
    at the group goal with the group speed. Goals are recorded in the Scene.
    If goal_lead is given, each agent's goal is its own start advanced by
    goal_lead seconds at its initial velocity (constant-flow scenes) instead
    of the shared group goal.
    """
    rng = np.random.default_rng(seed)
    states: dict[int, AgentState] = {}
    goals: dict[int, Goal] = {}
    agent = 0
    for grp in groups:
        xmin, ymin, xmax, ymax = grp.box
        for _ in range(grp.count):
            p = rng.uniform((xmin, ymin), (xmax, ymax))
            to_goal = np.array(grp.goal) - p
            norm = np.linalg.norm(to_goal)
            direction = to_goal / norm if norm > 1e-12 else np.array([1.0, 0.0])
            v = grp.speed * direction
            states[agent] = AgentState(tuple(p), tuple(v))
            if goal_lead is not None:
                goals[agent] = Goal(tuple(p + v * goal_lead))
            else:
                goals[agent] = Goal(tuple(grp.goal))
            agent += 1

    n_steps = int(round(duration / dt))
    frames = [dict(states)]
    current = dict(states)
    ids = sorted(current)
    for _ in range(n_steps):
        nxt = {}
        for a in ids:
            field = dynamics.ForceField.from_states(
                [current[b] for b in ids if b != a], cfg)
            nxt[a] = dynamics.step(current[a], goals[a], field, cfg, dt)
        current = nxt
        frames.append(dict(current))
    return Scene(scene_id=scene_id, dt=dt, frames=tuple(frames), goals=goals)


def scene_from_trajectories(scene_id: str, dt: float,
                            trajectories: Mapping[int, Sequence],
                            goals: Mapping[int, Goal] | None = None,
                            starts: Mapping[int, int] | None = None) -> Scene:
    """Build a Scene from per-agent state sequences (handy for fixtures).

    starts maps agent id to the frame index of its first entry (default 0).
    """
    starts = dict(starts or {})
    n = max(starts.get(a, 0) + len(traj) for a, traj in trajectories.items())
    frames: list[dict[int, AgentState]] = [dict() for _ in range(n)]
    for a, traj in trajectories.items():
        k0 = starts.get(a, 0)
        for k, s in enumerate(traj):
            frames[k0 + k][a] = s if isinstance(s, AgentState) else AgentState.from_vec(s)
    return Scene(scene_id=scene_id, dt=dt, frames=tuple(frames), goals=goals)
