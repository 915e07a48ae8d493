import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import uvbody
from uvbody import forward, load_uvpm, render_position_map, save_uvpm
from uvbody.cli import main
from uvbody.fileio import read_f32, write_f32, write_json

from conftest import random_pose


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "model"
    assert main(["model-synth", "--seed", "0", "--subdiv", "1", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def model(model_dir):
    return uvbody.load_model(model_dir)


def tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_model_synth_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["model-synth", "--seed", "3", "--subdiv", "0", "--out", str(a)]) == 0
    assert main(["model-synth", "--seed", "3", "--subdiv", "0", "--out", str(b)]) == 0
    assert tree_bytes(a) == tree_bytes(b)


def test_uv_render_resample_roundtrip(tmp_path, model_dir, model):
    rng = np.random.default_rng(1)
    vertices = forward(model, random_pose(rng, 23), rng.uniform(-1, 1, 10)).vertices
    vfile = tmp_path / "verts.f32"
    write_f32(vfile, vertices)
    out_map = tmp_path / "map.uvpm"
    assert main([
        "uv-render", "--model", str(model_dir), "--vertices", str(vfile),
        "--res", "256", "--out", str(out_map),
    ]) == 0
    out_v = tmp_path / "back.f32"
    assert main([
        "uv-resample", "--model", str(model_dir), "--map", str(out_map), "--out", str(out_v),
    ]) == 0
    back = read_f32(out_v, (model.num_vertices, 3))
    err = np.linalg.norm(back - vertices, axis=1).mean()
    assert err < 0.002


def test_study_determinism_and_jobs(tmp_path, model_dir):
    outs = []
    for name, jobs in (("s1.csv", 1), ("s2.csv", 1), ("s8.csv", 8)):
        out = tmp_path / name
        assert main([
            "study", "--model", str(model_dir), "--res", "32,64",
            "--samples", "4", "--seed", "0", "--jobs", str(jobs), "--out", str(out),
        ]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] == outs[2]
    rows = outs[0].decode().strip().splitlines()
    assert rows[0] == "resolution,surface_mm,joint_mm"
    assert len(rows) == 3


def test_fit_cli_on_rendered_map(tmp_path, model_dir, model):
    rng = np.random.default_rng(5)
    pose = random_pose(rng, 23, 0.5)
    shape = rng.uniform(-2, 2, 10)
    v = forward(model, pose, shape).vertices
    ang = np.deg2rad(25)
    rz = np.array([[np.cos(ang), -np.sin(ang), 0], [np.sin(ang), np.cos(ang), 0], [0, 0, 1]])
    target = 1.2 * v @ rz.T + np.array([0.1, 0.2, 0.3])
    pmap = render_position_map(model.uv_layout, target, 256)
    map_path = tmp_path / "target.uvpm"
    save_uvpm(map_path, pmap)
    out = tmp_path / "fit.json"
    assert main([
        "fit", "--model", str(model_dir), "--input", str(map_path), "--out", str(out),
    ]) == 0
    result = json.loads(out.read_text())
    assert result["rmse_mm"] < 2.5
    assert abs(result["s"] - 1.2) < 2e-2
    assert result["converged"] is True
    assert np.array(result["theta"]).shape == (23, 3)
    assert len(result["beta"]) == 10


def test_loss_eval_cli(tmp_path, model_dir, model, capsys):
    rng = np.random.default_rng(6)
    v = forward(model, random_pose(rng, 23), rng.uniform(-1, 1, 10)).vertices
    gt = render_position_map(model.uv_layout, v, 64)
    noisy_pos = gt.positions + rng.normal(0, 0.5, gt.positions.shape)
    noisy_pos[~gt.valid] = 0.0
    pred = uvbody.PositionMap(positions=noisy_pos, valid=gt.valid.copy())
    p1 = tmp_path / "pred.uvpm"
    p2 = tmp_path / "gt.uvpm"
    save_uvpm(p1, pred)
    save_uvpm(p2, gt)
    assert main([
        "loss-eval", "--model", str(model_dir), "--pred", str(p1), "--gt", str(p2),
    ]) == 0
    payload = json.loads(capsys.readouterr().out.strip())
    assert payload["l1"] > 0
    assert payload["tv"] > 0
    assert payload["total"] == pytest.approx(payload["l1"] + 1e-3 * payload["tv"], rel=1e-9)
    # identical maps: zero l1
    assert main([
        "loss-eval", "--model", str(model_dir), "--pred", str(p2), "--gt", str(p2),
    ]) == 0
    payload = json.loads(capsys.readouterr().out.strip())
    assert payload["l1"] == 0.0


def test_metrics_cli(tmp_path, model_dir, model, capsys):
    rng = np.random.default_rng(7)
    entries_p, entries_g = [], []
    for i in range(3):
        gt = forward(model, random_pose(rng, 23), rng.uniform(-1, 1, 10)).vertices
        pred = gt + rng.normal(0, 0.01, gt.shape)
        pg = tmp_path / f"gt{i}.f32"
        pp = tmp_path / f"pred{i}.f32"
        write_f32(pg, gt)
        write_f32(pp, pred)
        entries_g.append({"path": str(pg)})
        entries_p.append({"path": str(pp)})
    (tmp_path / "pred.jsonl").write_text("\n".join(json.dumps(e) for e in entries_p) + "\n")
    (tmp_path / "gt.jsonl").write_text("\n".join(json.dumps(e) for e in entries_g) + "\n")
    out = tmp_path / "report.json"
    assert main([
        "metrics", "--model", str(model_dir),
        "--pred", str(tmp_path / "pred.jsonl"), "--gt", str(tmp_path / "gt.jsonl"),
        "--joints", "0,1,2,3,4,5,6,7", "--out", str(out),
    ]) == 0
    report = json.loads(out.read_text())
    assert report["sample_count"] == 3
    assert len(report["per_joint_mm"]) == 8
    assert report["mpjpe_mode"] == "depth_only"
    csv_lines = (tmp_path / "report.csv").read_text().strip().splitlines()
    assert len(csv_lines) == 4


def test_preprocess_and_augment_cli(tmp_path, model_dir, model):
    rng = np.random.default_rng(8)
    records = []
    for i in range(2):
        pose = random_pose(rng, 23)
        shape = rng.uniform(-1, 1, 10)
        records.append({
            "id": f"s{i}",
            "theta": pose.tolist(),
            "beta": shape.tolist(),
            "extrinsics": {"rotation": np.eye(3).tolist(), "translation": [0.0, 0.0, 0.0]},
        })
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    out_a = tmp_path / "out_a"
    out_b = tmp_path / "out_b"
    for out, jobs in ((out_a, 1), (out_b, 2)):
        assert main([
            "preprocess", "--model", str(model_dir), "--manifest", str(manifest),
            "--out-dir", str(out), "--out-size", "64", "--seed", "0", "--jobs", str(jobs),
        ]) == 0
    assert tree_bytes(out_a) == tree_bytes(out_b)
    assert (out_a / "s0.uvpm").exists()

    aug_a = tmp_path / "aug_a"
    aug_b = tmp_path / "aug_b"
    for out in (aug_a, aug_b):
        assert main([
            "augment", "--model", str(model_dir), "--map", str(out_a / "s0.uvpm"),
            "--out-dir", str(out), "--stem", "x", "--random", "--seed", "11",
        ]) == 0
    assert tree_bytes(aug_a) == tree_bytes(aug_b)
    assert load_uvpm(aug_a / "x.uvpm").resolution == 64


def test_augment_identity_keeps_map_bytes(tmp_path, model_dir):
    src = tmp_path / "m"
    rng = np.random.default_rng(9)
    model = uvbody.load_model(model_dir)
    v = forward(model, random_pose(rng, 23), rng.uniform(-1, 1, 10)).vertices
    pmap = render_position_map(model.uv_layout, v, 64)
    map_path = tmp_path / "in.uvpm"
    save_uvpm(map_path, pmap)
    out = tmp_path / "aug"
    assert main([
        "augment", "--model", str(model_dir), "--map", str(map_path),
        "--out-dir", str(out), "--stem", "j",
        "--jitter-gain", "1.2", "0.9", "1.0",
    ]) == 0
    original = map_path.read_bytes()
    augmented = (out / "j.uvpm").read_bytes()
    assert original == augmented


def test_config_file_defaults(tmp_path, model_dir):
    cfg = tmp_path / "cfg.json"
    write_json(cfg, {"samples": 2, "res": "32,64", "seed": 4})
    out = tmp_path / "study.csv"
    assert main([
        "study", "--model", str(model_dir), "--config", str(cfg), "--out", str(out),
    ]) == 0
    assert out.exists()


def test_data_error_exit_code_and_json(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "uvbody.cli", "uv-resample",
         "--model", str(tmp_path / "nope"), "--map", "missing.uvpm", "--out", "x.f32"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert "error" in err and "kind" in err


def test_usage_error_exit_code():
    proc = subprocess.run(
        [sys.executable, "-m", "uvbody.cli", "study", "--bogus-flag"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2


def test_inputs_not_mutated(tmp_path, model_dir, model):
    vfile = tmp_path / "v.f32"
    write_f32(vfile, model.template_vertices)
    before = vfile.read_bytes()
    assert main([
        "uv-render", "--model", str(model_dir), "--vertices", str(vfile),
        "--res", "32", "--out", str(tmp_path / "m.uvpm"),
    ]) == 0
    assert vfile.read_bytes() == before
