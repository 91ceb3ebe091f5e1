"""End-to-end tests for the command-line interface.

Runs main() in process: return values are exit codes, argparse usage errors
surface as SystemExit(64).
"""

import json
import os

import numpy as np
import pytest

from epigeo.alignment import LinearVelocityModel, synthetic_preference_items
from epigeo.cli import (
    EXIT_FATAL,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_USAGE,
    RunConfig,
    check_jsonl,
    collect_videos,
    load_config,
    main,
)
from epigeo.io import read_jsonl

SCORE_FLAGS = [
    "--gaps", "1", "2", "--stride", "1", "--ransac-iterations", "300",
    "--inlier-threshold", "25", "--octaves", "3", "--ratio-threshold", "0.85",
    "--min-matches", "16", "--seed", "7",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Scene directories, a static video, and one scored manifest."""
    ws = tmp_path_factory.mktemp("cliws")
    common = ["--kind", "dolly", "--frames", "6", "--points", "110",
              "--width", "192", "--height", "192", "--focal", "260"]
    assert main(["synth", "--out", str(ws / "clean"), "--seed", "11"] + common) == EXIT_OK
    assert main(["synth", "--out", str(ws / "shaky"), "--seed", "11",
                 "--jitter", "1.0"] + common) == EXIT_OK

    static = ws / "static"
    static.mkdir()
    src = (ws / "clean" / "frames" / "frame_000.pgm").read_bytes()
    for i in range(4):
        (static / f"frame_{i:03d}.pgm").write_bytes(src)

    manifest = {
        "videos": [
            {"id": "clean", "dir": "clean/frames"},
            {"id": "shaky", "dir": "shaky/frames"},
            {"id": "static", "dir": "static"},
        ]
    }
    (ws / "manifest.json").write_text(json.dumps(manifest))
    (ws / "groups.json").write_text(json.dumps({
        "groups": [
            {"prompt_id": "p0", "video_ids": ["clean", "shaky"]},
            {"prompt_id": "p1", "video_ids": ["clean", "static"]},
        ]
    }))

    # static member is flagged, so the whole run reports partial success
    code = main(["score", str(ws / "manifest.json"),
                 "--output", str(ws / "scores.jsonl"), "--per-pair"] + SCORE_FLAGS)
    assert code == EXIT_PARTIAL
    return ws


def scores_by_id(path):
    header, records = read_jsonl(path)
    return header, {rec["video_id"]: rec for rec in records}


# ----------------------------------------------------------------- exit codes

def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("epigeo ")


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["score", "--bogus-flag", "x"])
    assert exc.value.code == EXIT_USAGE


def test_missing_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE


def test_missing_input_is_fatal(tmp_path, capsys):
    code = main(["score", str(tmp_path / "nope"),
                 "--output", str(tmp_path / "out.jsonl")])
    assert code == EXIT_FATAL
    assert "error:" in capsys.readouterr().err


def test_empty_input_dir_is_fatal(tmp_path, capsys):
    code = main(["score", str(tmp_path), "--output", str(tmp_path / "out.jsonl")])
    assert code == EXIT_FATAL
    assert "no frames" in capsys.readouterr().err


# --------------------------------------------------------------------- config

def test_runconfig_hash_is_stable_hex():
    a = RunConfig().config_hash
    assert a == RunConfig().config_hash
    assert len(a) == 16
    int(a, 16)


def test_runconfig_hash_tracks_fields():
    assert RunConfig().config_hash != RunConfig(seed=1).config_hash
    assert RunConfig().config_hash != RunConfig(tau=0.06).config_hash


def test_load_config_merges_file_and_flags(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 3, "stride": 2}))
    cfg = load_config(str(path), {"seed": 9, "tau": None})
    assert cfg.seed == 9          # flag beats file
    assert cfg.stride == 2        # file beats default
    assert cfg.tau == RunConfig().tau


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"bogus_key": 1}))
    with pytest.raises(ValueError, match="bogus_key"):
        load_config(str(path), {})


def test_load_config_rejects_non_object(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("[1, 2]")
    with pytest.raises(ValueError, match="JSON object"):
        load_config(str(path), {})


def test_config_file_matches_equivalent_flags(workspace, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "gaps": [1, 2], "stride": 1, "ransac_iterations": 300,
        "inlier_threshold": 25.0, "octaves": 3, "ratio_threshold": 0.85,
        "min_matches": 16, "seed": 7,
    }))
    out = tmp_path / "scores.jsonl"
    code = main(["score", str(workspace / "manifest.json"),
                 "--config", str(cfg), "--output", str(out), "--per-pair"])
    assert code == EXIT_PARTIAL
    assert out.read_bytes() == (workspace / "scores.jsonl").read_bytes()


# ---------------------------------------------------------------------- synth

def test_synth_writes_scene_directory(workspace):
    scene_dir = workspace / "clean"
    frames = sorted(os.listdir(scene_dir / "frames"))
    assert frames == [f"frame_{i:03d}.pgm" for i in range(6)]

    scene = json.loads((scene_dir / "scene.json").read_text())
    assert len(scene["cameras"]) == 6
    assert scene["seed"] == 11
    assert scene["dynamic_point_ids"] == []
    assert len(scene["config_hash"]) == 16

    header, records = read_jsonl(scene_dir / "correspondences.jsonl")
    assert header["config_hash"] == scene["config_hash"]
    assert records, "consecutive-frame correspondences expected"
    assert {"i", "j", "index", "x", "y", "xp", "yp", "label"} <= set(records[0])


def test_synth_rerun_is_byte_identical(workspace, tmp_path):
    out = tmp_path / "again"
    args = ["synth", "--out", str(out), "--seed", "11", "--kind", "dolly",
            "--frames", "6", "--points", "110", "--width", "192",
            "--height", "192", "--focal", "260"]
    assert main(args) == EXIT_OK
    base = workspace / "clean"
    assert (out / "scene.json").read_bytes() == (base / "scene.json").read_bytes()
    assert (out / "correspondences.jsonl").read_bytes() == (base / "correspondences.jsonl").read_bytes()
    for name in os.listdir(base / "frames"):
        assert (out / "frames" / name).read_bytes() == (base / "frames" / name).read_bytes()


def test_synth_records_dynamic_points(tmp_path):
    out = tmp_path / "dyn"
    code = main(["synth", "--out", str(out), "--frames", "4", "--points", "50",
                 "--dynamic", "0.2", "--seed", "5", "--check"])
    assert code == EXIT_OK
    scene = json.loads((out / "scene.json").read_text())
    assert len(scene["dynamic_point_ids"]) == 10
    _, records = read_jsonl(out / "correspondences.jsonl")
    labels = {rec["label"] for rec in records}
    assert "dynamic" in labels


# ---------------------------------------------------------------------- score

def test_score_records_and_header(workspace):
    header, by_id = scores_by_id(workspace / "scores.jsonl")
    assert header["record"] == "video_score"
    assert len(header["config_hash"]) == 16
    assert set(by_id) == {"clean", "shaky", "static"}
    clean = by_id["clean"]
    assert clean["consistency_score"] == pytest.approx(
        1.0 / (1.0 + clean["consistency_error"]))
    assert clean["pair_scores"], "--per-pair should embed pair records"
    assert clean["config_hash"] == header["config_hash"]


def test_score_orders_clean_above_shaky(workspace):
    _, by_id = scores_by_id(workspace / "scores.jsonl")
    assert by_id["clean"]["consistency_error"] < by_id["shaky"]["consistency_error"]


def test_score_flags_static_video(workspace):
    _, by_id = scores_by_id(workspace / "scores.jsonl")
    static = by_id["static"]
    assert static["near_static"] is True
    assert static["consistency_score"] is None


def test_score_single_video_directory(workspace, tmp_path):
    out = tmp_path / "one.jsonl"
    code = main(["score", str(workspace / "clean"), "--output", str(out),
                 "--check"] + SCORE_FLAGS)
    assert code == EXIT_OK
    _, records = read_jsonl(out)
    assert [r["video_id"] for r in records] == ["clean"]


def test_score_rerun_is_byte_identical(workspace, tmp_path):
    out = tmp_path / "rerun.jsonl"
    code = main(["score", str(workspace / "manifest.json"),
                 "--output", str(out), "--per-pair"] + SCORE_FLAGS)
    assert code == EXIT_PARTIAL
    assert out.read_bytes() == (workspace / "scores.jsonl").read_bytes()


def test_score_thread_count_does_not_change_bytes(workspace, tmp_path, monkeypatch):
    env_out = tmp_path / "env.jsonl"
    monkeypatch.setenv("EPIGEO_THREADS", "4")
    code = main(["score", str(workspace / "manifest.json"),
                 "--output", str(env_out), "--per-pair"] + SCORE_FLAGS)
    assert code == EXIT_PARTIAL
    monkeypatch.delenv("EPIGEO_THREADS")
    flag_out = tmp_path / "flag.jsonl"
    code = main(["score", str(workspace / "manifest.json"), "--threads", "3",
                 "--output", str(flag_out), "--per-pair"] + SCORE_FLAGS)
    assert code == EXIT_PARTIAL
    assert env_out.read_bytes() == (workspace / "scores.jsonl").read_bytes()
    assert flag_out.read_bytes() == (workspace / "scores.jsonl").read_bytes()


def test_collect_videos_nested_frames_dir(workspace):
    videos = collect_videos(str(workspace / "clean"))
    assert len(videos) == 1
    vid, paths = videos[0]
    assert vid == "clean"
    assert len(paths) == 6


def test_check_jsonl_detects_foreign_hash(workspace):
    path = str(workspace / "scores.jsonl")
    header, _ = read_jsonl(path)
    assert check_jsonl(path, header["config_hash"])
    assert not check_jsonl(path, "0" * 16)


# ----------------------------------------------------------------------- rank

def test_rank_orders_and_skips(workspace, tmp_path):
    out = tmp_path / "ranking.jsonl"
    code = main(["rank", "--scores", str(workspace / "scores.jsonl"),
                 "--groups", str(workspace / "groups.json"),
                 "--output", str(out), "--check"])
    assert code == EXIT_PARTIAL  # p1 has only one usable member
    _, records = read_jsonl(out)
    by_prompt = {rec["prompt_id"]: rec for rec in records}
    assert by_prompt["p0"]["ranking"] == ["clean", "shaky"]
    assert by_prompt["p1"]["skipped"] == "too_few_unflagged"


def test_rank_unscored_video_is_fatal(workspace, tmp_path, capsys):
    groups = tmp_path / "g.json"
    groups.write_text(json.dumps(
        {"groups": [{"prompt_id": "p", "video_ids": ["clean", "ghost"]}]}))
    code = main(["rank", "--scores", str(workspace / "scores.jsonl"),
                 "--groups", str(groups), "--output", str(tmp_path / "r.jsonl")])
    assert code == EXIT_FATAL
    assert "ghost" in capsys.readouterr().err


# ---------------------------------------------------------------------- pairs

def test_pairs_emits_winner_loser(workspace, tmp_path):
    out = tmp_path / "pairs.jsonl"
    code = main(["pairs", "--scores", str(workspace / "scores.jsonl"),
                 "--groups", str(workspace / "groups.json"),
                 "--output", str(out), "--tau", "1e-9", "--check"])
    assert code == EXIT_OK
    header, records = read_jsonl(out)
    assert header["tau"] == 1e-9
    assert [r["prompt_id"] for r in records] == ["p0"]
    assert records[0]["winner_id"] == "clean"
    assert records[0]["loser_id"] == "shaky"
    assert {"prompt_id": "p1", "reason": "too_few_unflagged"} in header["skipped_groups"]


def test_pairs_respects_tau(workspace, tmp_path):
    out = tmp_path / "pairs.jsonl"
    code = main(["pairs", "--scores", str(workspace / "scores.jsonl"),
                 "--groups", str(workspace / "groups.json"),
                 "--output", str(out), "--tau", "0.5"])
    assert code == EXIT_OK
    _, records = read_jsonl(out)
    assert records == []


# ------------------------------------------------------------------- dpo-demo

@pytest.fixture(scope="module")
def pairs_file(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("pairs") / "pairs.jsonl"
    code = main(["pairs", "--scores", str(workspace / "scores.jsonl"),
                 "--groups", str(workspace / "groups.json"),
                 "--output", str(out), "--tau", "1e-9"])
    assert code == EXIT_OK
    return out


def test_dpo_demo_from_pairs(pairs_file, tmp_path):
    out = tmp_path / "demo"
    code = main(["dpo-demo", "--pairs", str(pairs_file), "--out", str(out),
                 "--steps", "60", "--check"])
    assert code == EXIT_OK

    lines = (out / "loss_trace.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "step,loss"
    losses = [float(line.split(",")[1]) for line in lines[2:]]
    assert len(losses) == 61
    assert losses[-1] < losses[0]

    params = json.loads((out / "final_params.json").read_text())
    model = LinearVelocityModel.from_parameters(params["parameters"], params["dims"])
    assert model.dim == params["dims"]
    assert params["final_loss"] == losses[-1]


def test_dpo_demo_rerun_is_byte_identical(pairs_file, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["dpo-demo", "--pairs", str(pairs_file), "--out", str(out),
                     "--steps", "40"]) == EXIT_OK
        outs.append(out)
    assert (outs[0] / "loss_trace.csv").read_bytes() == (outs[1] / "loss_trace.csv").read_bytes()
    assert (outs[0] / "final_params.json").read_bytes() == (outs[1] / "final_params.json").read_bytes()


def test_dpo_demo_from_latents(tmp_path):
    items = synthetic_preference_items(3, frames=5, dims=3, seed=4)
    manifest = {"items": [
        {"x0_w": it.x0_w.tolist(), "x0_l": it.x0_l.tolist(),
         "eps_w": it.eps_w.tolist(), "eps_l": it.eps_l.tolist(), "t": it.t}
        for it in items
    ]}
    path = tmp_path / "latents.json"
    path.write_text(json.dumps(manifest))
    out = tmp_path / "demo"
    code = main(["dpo-demo", "--latents", str(path), "--out", str(out),
                 "--steps", "30"])
    assert code == EXIT_OK
    params = json.loads((out / "final_params.json").read_text())
    assert params["dims"] == 3


def test_dpo_demo_empty_pairs_is_fatal(tmp_path, capsys):
    path = tmp_path / "pairs.jsonl"
    path.write_text("")
    code = main(["dpo-demo", "--pairs", str(path),
                 "--out", str(tmp_path / "demo")])
    assert code == EXIT_FATAL
    assert "no preference items" in capsys.readouterr().err


# ----------------------------------------------------------------------- ssim

def test_ssim_stdout(workspace, capsys):
    a = str(workspace / "clean" / "frames" / "frame_000.pgm")
    code = main(["ssim", a, a])
    assert code == EXIT_OK
    record = json.loads(capsys.readouterr().out)
    assert record["ssim"] == pytest.approx(1.0)


def test_ssim_output_file(workspace, tmp_path):
    a = str(workspace / "clean" / "frames" / "frame_000.pgm")
    b = str(workspace / "clean" / "frames" / "frame_001.pgm")
    out = tmp_path / "ssim.json"
    code = main(["ssim", a, b, "--output", str(out)])
    assert code == EXIT_OK
    record = json.loads(out.read_text())
    assert 0.0 < record["ssim"] < 1.0
    assert record["frame_a"] == "frame_000.pgm"
