"""Command-line pipeline: train, compress, index, search, eval, bench."""

import json

import numpy as np
import pytest

from annpress.cli import main
from annpress.synth import clustered_dataset
from annpress.vecio import read_fvecs, read_ivecs, write_fvecs


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny trained pipeline shared by the read-only CLI tests below."""
    root = tmp_path_factory.mktemp("cli")
    data = clustered_dataset(440, 16, clusters=4, subspace_dim=3, seed=6)
    base, queries = data[:400], data[400:]
    write_fvecs(base, root / "base.fvecs")
    write_fvecs(queries, root / "queries.fvecs")
    config = {
        "base": str(root / "base.fvecs"),
        "out_dir": str(root / "run"),
        "seed": 0,
        "model": {"d_out": 4, "n_projections": 2, "stages": 1,
                  "encoders_per_stage": [1], "heads": 2},
        "train": {"epochs": 3, "batch_size": 64, "lr0": 1e-3},
    }
    (root / "train.json").write_text(json.dumps(config))
    assert main(["train", "--config", str(root / "train.json")]) == 0
    assert main([
        "compress", "--checkpoint", str(root / "run" / "checkpoint.ckpt"),
        "--input", str(root / "base.fvecs"), "--out", str(root / "cbase.fvecs"),
    ]) == 0
    assert main([
        "compress", "--checkpoint", str(root / "run" / "checkpoint.ckpt"),
        "--input", str(root / "queries.fvecs"), "--out", str(root / "cqueries.fvecs"),
    ]) == 0
    assert main([
        "gt", "--base", str(root / "cbase.fvecs"), "--queries", str(root / "cqueries.fvecs"),
        "--k", "10", "--out", str(root / "gt.ivecs"),
    ]) == 0
    return root


def test_train_writes_checkpoint_report_manifest(workspace):
    run = workspace / "run"
    assert (run / "checkpoint.ckpt").exists()
    report = (run / "train_report.txt").read_text()
    assert report.count("epoch=") == 3
    assert "final_eval_loss=" in report
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert sorted(manifest["artifacts"]) == ["checkpoint.ckpt", "train_report.txt"]
    assert len(manifest["config_sha256"]) == 64
    assert manifest["tool_version"]
    assert manifest["config"]["model"]["d_out"] == 4


def test_compressed_vectors_have_target_width(workspace):
    assert read_fvecs(workspace / "cbase.fvecs").shape == (400, 4)
    assert read_fvecs(workspace / "cqueries.fvecs").shape == (40, 4)


@pytest.mark.parametrize("kind,extra", [
    ("flat", []),
    ("hnsw", ["--m", "8", "--ef-construction", "24"]),
    ("pq", ["--pq-m", "2"]),
    ("ivfadc", ["--pq-m", "2", "--nlist", "4"]),
    ("sq", []),
])
def test_build_search_eval_pipeline(workspace, kind, extra):
    index_path = workspace / f"{kind}.index"
    results_path = workspace / f"{kind}.ivecs"
    report_path = workspace / f"{kind}_eval.txt"
    assert main([
        "build", "--kind", kind, "--vectors", str(workspace / "cbase.fvecs"),
        "--out", str(index_path), *extra,
    ]) == 0
    search_args = ["--nprobe", "4"] if kind == "ivfadc" else []
    if kind == "hnsw":
        search_args = ["--ef-search", "40"]
    assert main([
        "search", "--index", str(index_path), "--queries", str(workspace / "cqueries.fvecs"),
        "--k", "10", "--out", str(results_path), *search_args,
    ]) == 0
    results = read_ivecs(results_path)
    assert results.shape == (40, 10)
    assert main([
        "eval", "--results", str(results_path), "--gt", str(workspace / "gt.ivecs"),
        "--out", str(report_path), "--param", f"kind={kind}",
    ]) == 0
    report = report_path.read_text()
    assert "1@10=" in report and f"param.kind={kind}" in report


def _ensure_index(workspace, kind, extra=()):
    path = workspace / f"{kind}.index"
    if not path.exists():
        assert main([
            "build", "--kind", kind, "--vectors", str(workspace / "cbase.fvecs"),
            "--out", str(path), *extra,
        ]) == 0
    return path


def test_flat_search_matches_ground_truth_exactly(workspace):
    _ensure_index(workspace, "flat")
    results_path = workspace / "flat_exact.ivecs"
    assert main([
        "search", "--index", str(workspace / "flat.index"),
        "--queries", str(workspace / "cqueries.fvecs"),
        "--k", "10", "--out", str(results_path),
    ]) == 0
    np.testing.assert_array_equal(read_ivecs(results_path), read_ivecs(workspace / "gt.ivecs"))


def test_bench_reports_throughput(workspace, capsys):
    _ensure_index(workspace, "flat")
    assert main([
        "bench", "--index", str(workspace / "flat.index"),
        "--queries", str(workspace / "cqueries.fvecs"), "--k", "5",
    ]) == 0
    out = capsys.readouterr().out
    assert "queries_per_second=" in out


def test_rerun_reproduces_identical_artifacts(workspace, tmp_path):
    config = {
        "base": str(workspace / "base.fvecs"),
        "out_dir": str(tmp_path / "run2"),
        "seed": 0,
        "model": {"d_out": 4, "n_projections": 2, "stages": 1,
                  "encoders_per_stage": [1], "heads": 2},
        "train": {"epochs": 3, "batch_size": 64, "lr0": 1e-3},
    }
    config_path = tmp_path / "train2.json"
    config_path.write_text(json.dumps(config))
    assert main(["train", "--config", str(config_path)]) == 0
    first = (workspace / "run" / "checkpoint.ckpt").read_bytes()
    second = (tmp_path / "run2" / "checkpoint.ckpt").read_bytes()
    assert first == second
    assert (workspace / "run" / "train_report.txt").read_text() == (
        tmp_path / "run2" / "train_report.txt"
    ).read_text()


def test_missing_input_exits_2(workspace, capsys):
    code = main([
        "gt", "--base", str(workspace / "nope.fvecs"),
        "--queries", str(workspace / "cqueries.fvecs"), "--out", str(workspace / "x.ivecs"),
    ])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_train_without_required_paths_exits_2(capsys):
    assert main(["train"]) == 2
    assert "out-dir" in capsys.readouterr().err


def test_unrecognized_index_file_exits_2(workspace, capsys):
    code = main([
        "search", "--index", str(workspace / "run" / "checkpoint.ckpt"),
        "--queries", str(workspace / "cqueries.fvecs"),
        "--k", "5", "--out", str(workspace / "y.ivecs"),
    ])
    assert code == 2
    assert "magic" in capsys.readouterr().err


def test_beam_narrower_than_k_exits_2(workspace, capsys):
    _ensure_index(workspace, "hnsw", ["--m", "8", "--ef-construction", "24"])
    code = main([
        "search", "--index", str(workspace / "hnsw.index"),
        "--queries", str(workspace / "cqueries.fvecs"),
        "--k", "10", "--ef-search", "5", "--out", str(workspace / "z.ivecs"),
    ])
    assert code == 2
    assert "ef_search" in capsys.readouterr().err


def test_compress_dimension_mismatch_exits_2(workspace, capsys):
    code = main([
        "compress", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
        "--input", str(workspace / "cbase.fvecs"), "--out", str(workspace / "w.fvecs"),
    ])
    assert code == 2
    assert "dim" in capsys.readouterr().err
