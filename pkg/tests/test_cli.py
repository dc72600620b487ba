"""CLI surface tests, driven through main(argv)."""

import json
from pathlib import Path

from abselect.cli import main

FIXTURES = Path(__file__).parent / "fixtures"
WORLD = FIXTURES / "world"
IMAGE = WORLD / "dataset" / "blobs" / "img_00.png"


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


def test_classify_outputs_json(capsys):
    code, out = run_cli(
        capsys, "classify", "--image", IMAGE, "--models", WORLD / "models",
        "--catalog", WORLD / "catalog.json", "--seed", "42",
        "--k", "5", "--n-crops", "6",
    )
    assert code == 0
    result = json.loads(out)
    assert result["predicted"] == "blobs"
    assert len(result["boxes"]) == 6
    assert result["config"]["seed"] == 42


def test_classify_baseline_mode(capsys):
    code, out = run_cli(
        capsys, "classify", "--image", IMAGE, "--models", WORLD / "models",
        "--catalog", WORLD / "catalog.json", "--baseline",
    )
    assert code == 0
    result = json.loads(out)
    assert result["mode"] == "baseline"
    assert result["predicted"] == "blobs"
    assert set(result["class_scores"]) == {"blobs", "checker", "stripes"}


def test_config_file_with_flag_override(capsys, tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"seed": 1, "k": 5, "n_crops": 3, "alpha": 0.6, "beta": 0.8}))
    code, out = run_cli(
        capsys, "classify", "--image", IMAGE, "--models", WORLD / "models",
        "--catalog", WORLD / "catalog.json", "--config", cfg, "--n-crops", "2",
    )
    assert code == 0
    result = json.loads(out)
    assert result["config"]["seed"] == 1          # from file
    assert result["config"]["n_crops"] == 2       # flag wins
    assert result["config"]["alpha"] == 0.6


def test_eval_writes_report_and_results(capsys, tmp_path):
    code, out = run_cli(
        capsys, "eval", "--dataset", WORLD / "dataset", "--models", WORLD / "models",
        "--catalog", WORLD / "catalog.json", "--output", tmp_path,
        "--seed", "42", "--k", "5", "--n-crops", "6", "--workers", "2",
    )
    assert code == 0
    report = json.loads(out)
    assert report["image_count"] == 12
    assert report["top1_accuracy"] == 1.0
    assert (tmp_path / "report.json").exists()
    lines = (tmp_path / "results.jsonl").read_text().splitlines()
    assert len(lines) == 12


def test_overlay_writes_png(capsys, tmp_path):
    out_path = tmp_path / "overlay.png"
    code, _ = run_cli(
        capsys, "overlay", "--image", IMAGE, "--models", WORLD / "models",
        "--out", out_path, "--n-crops", "4", "--k", "5",
    )
    assert code == 0
    data = out_path.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"


def test_selftest_reference_stack(capsys):
    code, out = run_cli(capsys, "selftest")
    assert code == 0
    assert "split composition identity" in out
    assert "FAIL" not in out


def test_selftest_backend_dir(capsys):
    code, out = run_cli(capsys, "selftest", "--backend", WORLD / "models" / "embedding")
    assert code == 0
    assert "composition" in out


def test_error_reports_and_exit_code(capsys):
    code = main(["classify", "--image", str(IMAGE), "--models", str(WORLD / "models"),
                 "--catalog", "/nonexistent/catalog.json"])
    assert code == 2
