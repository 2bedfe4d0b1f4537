import os
import shutil
import subprocess

import numpy as np
import pytest

import masq


def cli():
    path = os.environ.get("MASQ_CLI") or shutil.which("masq")
    if not path:
        pytest.skip("command line tool not available")
    return path


def test_tasks_and_defaults():
    assert masq.tasks() == ["stack-pots", "scrape-potato", "sweep-chilis"]
    d = masq.experiment_defaults()
    assert float(d["train.lambda"]) == 10.0
    assert d["task"] == "scrape-potato"


def test_homography_recovers_a_known_map():
    h = np.array([[1.1, 0.05, 12.0], [-0.02, 0.95, -4.0], [1e-4, -2e-4, 1.0]])
    src = np.array([[10.0, 20.0], [300.0, 40.0], [50.0, 400.0], [600.0, 450.0], [320.0, 240.0], [100, 200]])
    dst = np.array([masq.warp(h, p) for p in src])
    est = masq.estimate_homography(src, dst)
    back = np.array([masq.warp(est, p) for p in src])
    assert np.max(np.abs(back - dst)) < 1e-6


def test_camera_projects_its_target_to_the_principal_point():
    cam = masq.CameraModel.look_at([0, -0.3, 0.8], [0, 0.45, 0], 500, 500, 640, 480)
    uv = cam.project_world([0, 0.45, 0])
    assert np.allclose(uv, [cam.cx, cam.cy])


def test_embedding_is_unit_and_deterministic():
    a = masq.embed_language("scrape the potato", 64)
    b = masq.embed_language("scrape the potato", 64)
    assert a.shape == (64,)
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-12
    with pytest.raises(masq.Error):
        masq.embed_language("", 64)


def test_subsample_chain():
    small = set(masq.subsample_indices(50, 0.1, 7))
    mid = set(masq.subsample_indices(50, 0.5, 7))
    assert len(small) == 5 and len(mid) == 25
    assert small <= mid


def test_schedule_and_learning_rate():
    s = masq.diffusion_schedule(100)
    assert len(s["betas"]) == 100
    assert s["betas"][0] == pytest.approx(1e-4)
    assert all(np.diff(s["alpha_bars"]) < 0)
    assert masq.cosine_lr(250, 3000, 500, 1.0) == pytest.approx(0.5)


def test_scripted_policies_score_in_thirds():
    for k in range(4):
        assert masq.scripted_score("stack-pots", 1, k) == pytest.approx(k / 3)


def test_reads_cli_outputs(tmp_path):
    exe = cli()
    data = tmp_path / "data"
    subprocess.run([exe, "gen-data", "--human-clips", "3", "--robot-demos", "2", "--out", str(data)], check=True)
    summary = masq.dataset_summary(str(data / "human" / "manifest.txt"))
    assert len(summary["clip_ids"]) == 3
    assert summary["feature_dim"] == 128

    model = tmp_path / "ft"
    subprocess.run([exe, "cotrain", "--finetune", "--robot", str(data / "robot" / "manifest.txt"), "--steps", "5",
                    "--warmup", "1", "--out", str(model)], check=True)
    info = masq.checkpoint_info(str(model / "model.ckpt"))
    assert info["step"] == 5
    assert info["extra"]["phase"] == "finetune"
    assert info["parameters"] > 0
