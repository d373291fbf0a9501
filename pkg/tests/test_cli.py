"""Command-line workflows: exit codes, artifacts, snapshot replay."""

import json

import numpy as np
import pytest

from puzzlegan import containers
from puzzlegan.cli import _parse_parts, main
from puzzlegan.errors import NumericalError, PuzzleGanError, ValidationError


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Store + tiny trained checkpoint shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main([
        "ingest", "--source", "synthetic", "--n", "24",
        "--resolution", "16", "--seed", "0", "--out", str(root / "data"),
    ]) == 0
    config = root / "train.json"
    config.write_text(json.dumps({
        "model": {"head_channels": 8, "out_resolution": 16},
        "train": {"total_steps": 2, "batch_size": 4, "log_every": 1, "seed": 1},
        "store": str(root / "data" / "store.pzgc"),
    }))
    assert main(["train", "--config", str(config), "--out", str(root / "run")]) == 0
    return {
        "root": root,
        "store": root / "data" / "store.pzgc",
        "ckpt": root / "run" / "final.ckpt",
    }


def test_ingest_and_train_artifacts(workspace):
    run = workspace["root"] / "run"
    for name in ("final.ckpt", "train_log.jsonl", "preview.png", "preview.pzgc", "resolved_config.json"):
        assert (run / name).exists(), name
    assert (workspace["root"] / "data" / "store.pzgc.manifest.json").exists()


def test_layout_check_canonical_ok(capsys):
    assert main(["layout-check", "--layout", "facial_parts"]) == 0
    out = capsys.readouterr().out
    assert "ok: 5 parts" in out


def test_layout_check_reports_violations(tmp_path, capsys):
    bad = tmp_path / "bad.layout"
    # part 3 never used
    bad.write_text("grid_height 2\ngrid_width 2\nnum_parts 3\n1 1\n2 2\n")
    assert main(["layout-check", "--layout", str(bad)]) == 1
    out = capsys.readouterr().out
    assert "violation[empty_part]" in out and "3" in out


def test_layout_parse_error_names_line(tmp_path, capsys):
    ragged = tmp_path / "ragged.layout"
    ragged.write_text("grid_height 2\ngrid_width 2\nnum_parts 1\n1 1\n1\n")
    assert main(["layout-check", "--layout", str(ragged)]) == 1
    assert "line 5" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"checkpoint": "x.ckpt", "banana": 1}))
    assert main(["sample", "--config", str(config), "--out", str(tmp_path / "o")]) == 1
    assert "unknown sample config keys" in capsys.readouterr().err


def test_snapshot_for_other_command_rejected(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"command": "sample", "checkpoint": "x.ckpt"}))
    assert main(["fid", "--config", str(config), "--out", str(tmp_path / "o")]) == 1
    assert "written by 'sample'" in capsys.readouterr().err


def test_missing_inputs_exit_1(tmp_path, capsys):
    assert main(["sample", "--out", str(tmp_path / "a")]) == 1
    assert "checkpoint" in capsys.readouterr().err
    assert main(["sample", "--checkpoint", str(tmp_path / "none.ckpt"), "--out", str(tmp_path / "b")]) == 1
    assert "does not exist" in capsys.readouterr().err
    assert main(["train", "--out", str(tmp_path / "c")]) == 1
    assert "store" in capsys.readouterr().err
    assert main(["sample", "--checkpoint", "x"]) == 1  # no --out
    assert "--out" in capsys.readouterr().err


def test_usage_errors_exit_1_not_2(capsys):
    assert main(["no-such-command"]) == 1
    assert main(["sample", "--n", "abc", "--out", "x"]) == 1


def test_sample_replays_byte_identical(workspace, tmp_path):
    first = tmp_path / "s1"
    assert main([
        "sample", "--checkpoint", str(workspace["ckpt"]), "--n", "4",
        "--seed", "3", "--out", str(first),
    ]) == 0
    replay = tmp_path / "s2"
    assert main(["sample", "--config", str(first / "resolved_config.json"), "--out", str(replay)]) == 0
    for name in ("samples.pzgc", "samples.png", "resolved_config.json"):
        assert (first / name).read_bytes() == (replay / name).read_bytes(), name


def test_swap_with_no_parts_reproduces_target_column(workspace, tmp_path):
    out = tmp_path / "swap0"
    assert main([
        "swap", "--checkpoint", str(workspace["ckpt"]), "--n", "2",
        "--seed", "0", "--out", str(out),
    ]) == 0
    meta, arrays = containers.read_container(out / "swap_grid.pzgc", expected_kind="samples")
    assert meta["columns"] == ["target", "reference", "mix()"]
    images = arrays["images"]
    assert images.shape[0] == 2 * 3
    for row in range(2):
        target, reference, mixed = images[3 * row : 3 * row + 3]
        assert np.array_equal(mixed, target)  # nothing swapped
        assert not np.array_equal(reference, target)


def test_swap_column_layout_for_multiple_parts(workspace, tmp_path, capsys):
    out = tmp_path / "swap23"
    assert main([
        "swap", "--checkpoint", str(workspace["ckpt"]), "--n", "2",
        "--parts", "2,3", "--out", str(out),
    ]) == 0
    meta, arrays = containers.read_container(out / "swap_grid.pzgc", expected_kind="samples")
    assert meta["columns"] == ["target", "reference", "mix(2)", "mix(3)", "mix(2,3)"]
    assert arrays["images"].shape[0] == 2 * 5
    assert "mix(2,3)" in capsys.readouterr().out


def test_swap_part_validation(workspace, tmp_path, capsys):
    base = ["swap", "--checkpoint", str(workspace["ckpt"]), "--out", str(tmp_path / "x")]
    assert main(base + ["--parts", "2,2"]) == 1
    assert "duplicates" in capsys.readouterr().err
    assert main(base + ["--parts", "9"]) == 1
    assert "out of range" in capsys.readouterr().err
    assert main(base + ["--parts", "two"]) == 1


def test_parse_parts_accepts_strings_and_sequences():
    assert _parse_parts("2,3") == [2, 3]
    assert _parse_parts("") == []
    assert _parse_parts(None) == []
    assert _parse_parts([4, 1]) == [4, 1]
    with pytest.raises(ValidationError, match="comma-separated"):
        _parse_parts("a,b")
    with pytest.raises(ValidationError, match="duplicates"):
        _parse_parts([1, 1])


def test_influence_exports_block_and_pixel_maps(tmp_path):
    out = tmp_path / "inf"
    assert main(["influence", "--layout", "facial_parts", "--out", str(out)]) == 0
    for name in ("part_counts.png", "bitsets.json", "block_counts.png",
                 "block_bitsets.json", "part3_interlocking.png", "resolved_config.json"):
        assert (out / name).exists(), name


def test_eval_regions_single_part(workspace, tmp_path, capsys):
    out = tmp_path / "regions"
    assert main([
        "eval-regions", "--checkpoint", str(workspace["ckpt"]), "--part", "2",
        "--n", "4", "--out", str(out),
    ]) == 0
    assert (out / "part2_heatmap.pzgc").exists()
    assert (out / "part2_heatmap.png").exists()
    text = (out / "region_stats.txt").read_text()
    assert "part 2" in text and "interlocking" in text
    assert not (out / "part1_heatmap.pzgc").exists()  # only the requested part
    assert "part 2" in capsys.readouterr().out


def test_fid_reports_value_and_replays(workspace, tmp_path, capsys):
    out = tmp_path / "fid1"
    assert main([
        "fid", "--checkpoint", str(workspace["ckpt"]), "--store", str(workspace["store"]),
        "--n", "8", "--seed", "2", "--out", str(out),
    ]) == 0
    record = json.loads((out / "fid.json").read_text())
    assert record["fid"] >= 0 and np.isfinite(record["fid"])
    assert "fid" in capsys.readouterr().out

    replay = tmp_path / "fid2"
    assert main(["fid", "--config", str(out / "resolved_config.json"), "--out", str(replay)]) == 0
    assert (out / "fid.json").read_bytes() == (replay / "fid.json").read_bytes()


def test_fid_input_validation(workspace, tmp_path, capsys):
    base = ["fid", "--checkpoint", str(workspace["ckpt"]), "--store", str(workspace["store"])]
    assert main(base + ["--extractor", "external", "--out", str(tmp_path / "a")]) == 1
    assert "library-only" in capsys.readouterr().err
    assert main(base + ["--extractor", "vgg", "--out", str(tmp_path / "b")]) == 1
    assert main(base + ["--n", "1000", "--out", str(tmp_path / "c")]) == 1
    assert "exceeds dataset size" in capsys.readouterr().err


def test_runtime_failures_map_to_exit_2(workspace, tmp_path, monkeypatch, capsys):
    import puzzlegan.cli as cli_module

    def boom(path):
        raise NumericalError("synthetic blow-up")

    monkeypatch.setattr(cli_module, "load_checkpoint", boom)
    args = ["sample", "--checkpoint", str(workspace["ckpt"]), "--out", str(tmp_path / "x")]
    assert main(args) == 2
    assert "numerical failure" in capsys.readouterr().err

    def hiss(path):
        raise PuzzleGanError("generic failure")

    monkeypatch.setattr(cli_module, "load_checkpoint", hiss)
    assert main(args) == 2
    assert "failure" in capsys.readouterr().err
