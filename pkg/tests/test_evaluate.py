from dataclasses import replace

import numpy as np
import pytest

from oracles import dbscan_reachability_brute
from scenes import lambda_fixture_scene, trap_config, trap_scene
from swarm_forecast import pipeline, ukf
from swarm_forecast.evaluate import (
    ade_fde,
    compare_cd_ed,
    ed_baseline_cluster,
    ed_member_sets,
    lambda_sweep,
    membership_timeline,
    render_table,
    report_for_run,
    write_comparison_csv,
    write_timeline_csv,
)
from swarm_forecast.model import AgentState, Config


def test_ade_fde_examples():
    truth = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    assert ade_fde(truth, truth) == (0.0, 0.0)
    ade, fde = ade_fde(truth + [1.0, 0.0], truth)
    assert (ade, fde) == (1.0, 1.0)
    pred = truth + np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
    ade, fde = ade_fde(pred, truth)
    assert ade == pytest.approx(1.0)
    assert fde == pytest.approx(2.0)


def test_ade_fde_translation_invariant(rng):
    pred = rng.uniform(-5, 5, (10, 2))
    truth = rng.uniform(-5, 5, (10, 2))
    base = ade_fde(pred, truth)
    shift = rng.uniform(-100, 100, 2)
    shifted = ade_fde(pred + shift, truth + shift)
    assert shifted == pytest.approx(base, rel=1e-9)


def test_ade_fde_length_mismatch():
    with pytest.raises(ValueError):
        ade_fde(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        ade_fde(np.zeros((0, 2)), np.zeros((0, 2)))


def test_ed_merges_regardless_of_heading(cfg):
    states = {0: AgentState((0, 0), (2.0, 0.0)), 1: AgentState((1.0, 0), (-2.0, 0.0))}
    cs = ed_baseline_cluster(states, cfg)
    assert {frozenset(c.members) for c in cs.clusters} == {frozenset({0, 1})}


def test_ed_isolated_agent_singleton(cfg):
    states = {0: AgentState((0, 0), (0, 0)), 1: AgentState((50, 0), (0, 0))}
    cs = ed_baseline_cluster(states, cfg)
    assert {frozenset(c.members) for c in cs.clusters} == {
        frozenset({0}), frozenset({1})}


def test_ed_chain_connectivity_matches_oracle(cfg):
    pts = [(0.0, 0.0), (1.5, 0.0), (3.0, 0.0), (4.5, 0.0), (6.0, 0.0)]
    states = {i: AgentState(p, (0, 0)) for i, p in enumerate(pts)}
    member_sets, _ = ed_member_sets(states, None, cfg)
    assert sorted(member_sets) == [(0, 1, 2, 3, 4)]
    assert dbscan_reachability_brute(pts, cfg.d_tol) == [(0, 1, 2, 3, 4)]


def test_ed_random_sets_match_oracle(cfg, rng):
    for _ in range(50):
        n = int(rng.integers(1, 12))
        pts = rng.uniform(-6, 6, (n, 2))
        states = {i: AgentState(tuple(pts[i]), (0, 0)) for i in range(n)}
        member_sets, _ = ed_member_sets(states, None, cfg)
        got = sorted(tuple(ms) for ms in member_sets)
        assert got == dbscan_reachability_brute(pts, cfg.d_tol)


def test_ed_partition_invariant(cfg, rng):
    pts = rng.uniform(-4, 4, (9, 2))
    states = {i: AgentState(tuple(pts[i]), (0, 0)) for i in range(9)}
    cs = ed_baseline_cluster(states, cfg)
    assert sorted(m for c in cs.clusters for m in c.members) == list(range(9))


def test_compare_table_shape_and_metrics_determinism():
    cfg = trap_config()
    scene = trap_scene("shape", 0.25, 0.7, n_sites=1, duration=2.0)
    rows_a = compare_cd_ed([scene], cfg, stride=5)
    rows_b = compare_cd_ed([scene], cfg, stride=5)
    assert [r["type"] for r in rows_a] == ["ED", "CD"]
    assert all(set(r) == {"scene", "type", "time_s", "fde", "ade"} for r in rows_a)
    for a, b in zip(rows_a, rows_b):
        assert (a["fde"], a["ade"]) == (b["fde"], b["ade"])  # time varies


def test_compare_trap_scene_cd_more_accurate():
    cfg = trap_config()
    rows = compare_cd_ed([trap_scene("trap", 0.25, 0.7)], cfg, stride=5)
    ed = next(r for r in rows if r["type"] == "ED")
    cd = next(r for r in rows if r["type"] == "CD")
    assert cd["ade"] < ed["ade"]
    assert cd["fde"] < ed["fde"]


def test_both_arms_share_filter_code_path(monkeypatch):
    calls = {"ED": 0, "CD": 0}
    real_predict = ukf.predict
    arm = {"label": None}

    def counting_predict(*args, **kwargs):
        calls[arm["label"]] += 1
        return real_predict(*args, **kwargs)

    monkeypatch.setattr(ukf, "predict", counting_predict)
    cfg = trap_config()
    scene = trap_scene("instr", 0.25, 0.7, n_sites=1, duration=1.0)
    arm["label"] = "ED"
    pipeline.run(scene, cfg, observation_stride=5, partitioner=ed_member_sets)
    arm["label"] = "CD"
    pipeline.run(scene, cfg, observation_stride=5)
    assert calls["ED"] > 0 and calls["CD"] > 0


def test_comparison_csv_and_table(tmp_path):
    rows = [
        {"scene": "a", "type": "ED", "time_s": 0.5, "fde": 2.0, "ade": 1.0},
        {"scene": "a", "type": "CD", "time_s": 0.25, "fde": 1.0, "ade": 0.5},
    ]
    path = tmp_path / "cmp.csv"
    write_comparison_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "scene,type,time_s,fde,ade"
    assert len(lines) == 3
    table = render_table(rows)
    assert "Type" in table and "FDE" in table and "ED" in table


def test_lambda_sweep_membership_flip():
    scene, cfg = lambda_fixture_scene()
    timelines = lambda_sweep(scene, [0.0, 0.5, 0.7, 1.0], cfg, stride=None)
    together = {}
    for l1, rows in timelines.items():
        step0 = [(cid, aid) for step, cid, aid in rows if step == 0]
        by_cluster = {}
        for cid, aid in step0:
            by_cluster.setdefault(cid, set()).add(aid)
        together[l1] = {frozenset({0, 1})} == set(map(frozenset, by_cluster.values()))
    assert together == {0.0: False, 0.5: True, 0.7: True, 1.0: True}


def test_lambda_sweep_rejects_bad_grid():
    scene, cfg = lambda_fixture_scene()
    with pytest.raises(ValueError):
        lambda_sweep(scene, [0.0, 1.5], cfg)


def test_timeline_csv(tmp_path):
    rows = [(0, 0, 1), (0, 0, 2), (1, 2, 1)]
    path = tmp_path / "t.csv"
    write_timeline_csv(rows, path)
    assert path.read_text().splitlines() == [
        "step,cluster_id,agent_id", "0,0,1", "0,0,2", "1,2,1"]


def test_report_for_run_near_perfect_with_dense_obs():
    cfg = Config(meas_noise_std=1e-9, seed=0)
    scene = trap_scene("exact", 0.25, 0.7, n_sites=1, duration=1.0)
    run_ = pipeline.run(scene, replace(cfg, K_p=-0.1, K_v=-0.632, A_int=0.3,
                                       B_int=0.2), observation_stride=1)
    rep = report_for_run(run_, scene)
    assert set(rep.per_agent) == set(scene.agent_ids())
    assert rep.ade_mean < 0.05
    assert len(rep.cluster_counts) == scene.n_frames
    assert rep.ade_sum == pytest.approx(
        sum(v[0] for v in rep.per_agent.values()))


def test_membership_timeline_covers_agents():
    cfg = trap_config()
    scene = trap_scene("tl", 0.25, 0.7, n_sites=1, duration=1.0)
    run_ = pipeline.run(scene, cfg, observation_stride=None)
    rows = membership_timeline(run_)
    step0 = {aid for step, _, aid in rows if step == 0}
    assert step0 == set(scene.agent_ids())
