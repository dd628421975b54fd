"""Command-line interface: convert, synth, predict, eval, compare, sweep.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error. All
commands are non-interactive and write only to their --out targets.
"""
from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click

from . import evaluate, pipeline, scene_io
from .model import Config, ConfigError, validate_config
from .scene_io import Scene, SceneFormatError, SynthGroup


def _load_config(path: str | None) -> Config:
    if path is None:
        return validate_config(Config())
    return Config.from_json_file(path)


def _parse_stride(text: str) -> int | None:
    if text.lower() == "none":
        return None
    try:
        stride = int(text)
    except ValueError:
        raise click.UsageError("stride must be >= 1 or 'none'") from None
    if stride < 1:
        raise click.UsageError("stride must be >= 1 or 'none'")
    return stride


def _handled(fn):
    """Map domain errors to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, SceneFormatError) as exc:
            raise click.UsageError(str(exc)) from exc
        except FileNotFoundError as exc:
            raise click.UsageError(f"missing file: {exc.filename or exc}") from exc

    return wrapper


def _default_threads() -> int:
    return os.cpu_count() or 1


@click.group()
@click.option("--threads", type=int, envvar="SWARM_FORECAST_THREADS",
              default=_default_threads, show_default="available cores",
              help="Worker threads for parallel-safe regions (count).")
@click.pass_context
def cli(ctx, threads):
    """Cost-distance cluster motion forecasting for multi-agent scenes."""
    ctx.ensure_object(dict)
    ctx.obj["threads"] = max(1, threads)


@cli.command("convert")
@click.argument("ndjson", type=click.Path(exists=True, dir_okay=False))
@click.argument("outdir", type=click.Path(file_okay=False))
@click.option("--frame-dt", type=float, default=0.4, show_default=True,
              help="Seconds between consecutive frames (s).")
@_handled
def cmd_convert(ndjson, outdir, frame_dt):
    """Convert Trajnet-style ndjson into canonical scene CSVs."""
    scenes = scene_io.convert_trajnet(ndjson, dt=frame_dt)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for scene in scenes:
        scene_io.write_scene_csv(scene, out / f"scene_{scene.scene_id}.csv")
    click.echo(f"scenes: {len(scenes)}")


@cli.command("synth")
@click.option("--groups", required=True,
              help="JSON list of {count, box [xmin,ymin,xmax,ymax] (m), "
                   "goal [x,y] (m), speed (m/s)}; or @file to read a file.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="RNG seed for start positions.")
@click.option("--duration", type=float, default=10.0, show_default=True,
              help="Simulated time (s).")
@click.option("--dt", type=float, default=0.1, show_default=True,
              help="Frame interval (s).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Config JSON (defaults used otherwise).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Output scene CSV path.")
@click.option("--goals-out", type=click.Path(dir_okay=False), default=None,
              help="Optional goals CSV output path.")
@_handled
def cmd_synth(groups, seed, duration, dt, config_path, out_path, goals_out):
    """Generate a social-force ground-truth scene."""
    cfg = _load_config(config_path)
    if groups.startswith("@"):
        with open(groups[1:], "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    else:
        spec = json.loads(groups)
    group_objs = [SynthGroup(count=int(g["count"]), box=tuple(g["box"]),
                             goal=tuple(g["goal"]), speed=float(g["speed"]))
                  for g in spec]
    scene = scene_io.synth_scene(group_objs, seed=seed, duration=duration,
                                 dt=dt, cfg=cfg, scene_id=Path(out_path).stem)
    scene_io.write_scene_csv(scene, out_path)
    if goals_out:
        scene_io.write_goals_csv(scene.goals, goals_out)
    click.echo(f"scene: {out_path} (agents: {len(scene.agent_ids())}, "
               f"frames: {scene.n_frames})")


def _load_scene(scene_path, scene_dt, goals_path) -> Scene:
    scene = scene_io.read_scene_csv(scene_path, dt=scene_dt)
    if goals_path:
        goals = scene_io.read_goals_csv(goals_path)
        scene = Scene(scene_id=scene.scene_id, dt=scene.dt,
                      frames=scene.frames, goals=goals)
    return scene


@cli.command("predict")
@click.argument("scene_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Config JSON (defaults used otherwise).")
@click.option("--goals", "goals_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Explicit goals CSV (agent_id,gx,gy).")
@click.option("--stride", default="none", show_default=True,
              help="Frames between measurements, or 'none' (frames).")
@click.option("--scene-dt", type=float, default=0.1, show_default=True,
              help="Frame interval of the scene CSV (s).")
@click.option("--goal-mode", type=click.Choice(["auto", "oracle", "cv"]),
              default="auto", show_default=True,
              help="Goal provisioning when no goals file is given.")
@click.option("--seed", type=int, default=None,
              help="Override the config RNG seed.")
@click.option("--density-grid", default=None,
              help="Rasterize positional density, e.g. 40x40 (cells).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Artifact output directory.")
@_handled
def cmd_predict(scene_csv, config_path, goals_path, stride, scene_dt,
                goal_mode, seed, density_grid, out_dir):
    """Run the full prediction pipeline and export the artifacts."""
    cfg = _load_config(config_path)
    if seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=seed)
    stride_v = _parse_stride(stride)
    grid = None
    if density_grid:
        try:
            nx, ny = density_grid.lower().split("x")
            grid = (int(nx), int(ny))
        except ValueError:
            raise click.UsageError("density-grid must look like 40x40") from None
    scene = _load_scene(scene_csv, scene_dt, goals_path)
    run_ = pipeline.run(scene, cfg, observation_stride=stride_v,
                        goal_mode=goal_mode)
    pipeline.export_run(run_, out_dir, density_grid=grid)
    rep = evaluate.report_for_run(run_, scene)
    click.echo(f"ADE sum: {rep.ade_sum:.4f}  FDE sum: {rep.fde_sum:.4f}  "
               f"(per-agent means {rep.ade_mean:.4f} / {rep.fde_mean:.4f})")
    click.echo(f"artifacts: {out_dir}")


@cli.command("eval")
@click.argument("scene_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--goals", "goals_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Explicit goals CSV.")
@click.option("--stride", default="5", show_default=True,
              help="Frames between measurements, or 'none' (frames).")
@click.option("--scene-dt", type=float, default=0.1, show_default=True,
              help="Frame interval of the scene CSV (s).")
@click.option("--goal-mode", type=click.Choice(["auto", "oracle", "cv"]),
              default="auto", show_default=True)
@click.option("--out", "out_csv", required=True, type=click.Path(dir_okay=False),
              help="Per-agent metrics CSV path.")
@_handled
def cmd_eval(scene_csv, config_path, goals_path, stride, scene_dt, goal_mode,
             out_csv):
    """Predict a scene and write ADE/FDE metrics against its truth."""
    cfg = _load_config(config_path)
    scene = _load_scene(scene_csv, scene_dt, goals_path)
    run_ = pipeline.run(scene, cfg, observation_stride=_parse_stride(stride),
                        goal_mode=goal_mode)
    rep = evaluate.report_for_run(run_, scene)
    with open(out_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("agent_id,ade,fde\n")
        for a in sorted(rep.per_agent):
            ade, fde = rep.per_agent[a]
            fh.write(f"{a},{ade!r},{fde!r}\n")
    click.echo(f"ADE sum: {rep.ade_sum:.4f}  FDE sum: {rep.fde_sum:.4f}")


@cli.command("compare")
@click.argument("scene_csvs", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--stride", default="5", show_default=True,
              help="Frames between measurements, or 'none' (frames).")
@click.option("--scene-dt", type=float, default=0.1, show_default=True,
              help="Frame interval of the scene CSVs (s).")
@click.option("--goal-mode", type=click.Choice(["auto", "oracle", "cv"]),
              default="auto", show_default=True)
@click.option("--out", "out_csv", required=True, type=click.Path(dir_okay=False),
              help="Comparison table CSV path.")
@_handled
def cmd_compare(scene_csvs, config_path, stride, scene_dt, goal_mode, out_csv):
    """Run each scene with ED and CD clustering; tabulate time/FDE/ADE.

    Scenes run sequentially so wall-clock columns stay comparable.
    """
    cfg = _load_config(config_path)
    scenes = [_load_scene(p, scene_dt, None) for p in scene_csvs]
    rows = evaluate.compare_cd_ed(scenes, cfg, stride=_parse_stride(stride),
                                  goal_mode=goal_mode)
    evaluate.write_comparison_csv(rows, out_csv)
    click.echo(evaluate.render_table(rows))


@cli.command("sweep")
@click.argument("scene_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", default="0,0.5,0.7,1", show_default=True,
              help="Comma-separated lambda1 values in [0,1] (lambda2=1-lambda1).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--goals", "goals_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Explicit goals CSV.")
@click.option("--stride", default="none", show_default=True,
              help="Frames between measurements, or 'none' (frames).")
@click.option("--scene-dt", type=float, default=0.1, show_default=True,
              help="Frame interval of the scene CSV (s).")
@click.option("--goal-mode", type=click.Choice(["auto", "oracle", "cv"]),
              default="auto", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Directory for per-lambda timeline CSVs.")
@click.pass_context
@_handled
def cmd_sweep(ctx, scene_csv, grid, config_path, goals_path, stride, scene_dt,
              goal_mode, out_dir):
    """Cluster-membership timelines across the lambda grid."""
    cfg = _load_config(config_path)
    try:
        values = [float(v) for v in grid.split(",") if v.strip() != ""]
    except ValueError:
        raise click.UsageError("grid must be comma-separated numbers") from None
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise click.UsageError("grid values must lie in [0, 1]")
    scene = _load_scene(scene_csv, scene_dt, goals_path)
    timelines = evaluate.lambda_sweep(scene, values, cfg,
                                      stride=_parse_stride(stride),
                                      goal_mode=goal_mode,
                                      threads=ctx.obj["threads"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for l1, rows in sorted(timelines.items()):
        path = out / f"lambda_{l1:g}.csv"
        evaluate.write_timeline_csv(rows, path)
        click.echo(f"wrote {path}")


def main():
    try:
        cli(standalone_mode=True)
    except Exception as exc:  # runtime failures exit 1 per contract
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
