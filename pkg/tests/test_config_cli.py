import json
from pathlib import Path

import pytest

from vidpace.ablation import cell_config, grid_cells
from vidpace.cli import build_parser, dispatch
from vidpace.config import TrainConfig, load_config, parse_override, schema, set_key
from vidpace.errors import ConfigError, UnsupportedTupleSize
from vidpace.report import read_table
from vidpace.train import load_checkpoint

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY_TRAIN = [
    "arch=r3d", "width_scale=0.125", "m=8", "n=3", "epochs=1", "batch_videos=2",
    "resize=[36,48]", "crop_size=32", "pair_hidden_dim=16", "checkpoint_every=1",
]


def test_defaults_and_overrides():
    cfg = load_config(None, ["n=5", "norm.g=4", "lr=0.01", "speeds=null", "arch=r2plus1d"])
    assert cfg.n == 5 and cfg.norm.g == 4 and cfg.lr == 0.01 and cfg.arch == "r2plus1d"
    assert cfg.resolved_speeds() == (-5, -3, 1, 3, 5)
    assert TrainConfig().resolved_epochs == 300
    assert TrainConfig(task="finetune_classify").resolved_epochs == 150
    assert TrainConfig(n=3).batch_clips == 24


def test_override_type_and_key_errors():
    with pytest.raises(ConfigError):
        load_config(None, ["nonsense=1"])
    with pytest.raises(ConfigError):
        load_config(None, ["norm.bogus=1"])
    with pytest.raises(ConfigError):
        load_config(None, ["n=three"])
    with pytest.raises(ConfigError):
        load_config(None, ["n=1.5"])
    with pytest.raises(ConfigError):
        load_config(None, ["norm=2"])
    with pytest.raises(ConfigError):
        parse_override("n")
    with pytest.raises(UnsupportedTupleSize):
        load_config(None, ["n=7"])


def test_explicit_speeds_and_roundtrip(tmp_path):
    cfg = load_config(None, ["speeds=[3,-2,1]"])
    assert cfg.resolved_speeds() == (-2, 1, 3)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(path).to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        load_config(None, ["speeds=[1,1,3]"])


def test_schema_covers_every_leaf():
    keys = [k for k, _, _ in schema()]
    assert "norm.g" in keys and "lr" in keys and "norm" not in keys
    cfg = TrainConfig()
    for key, _, default in schema():
        set_key(cfg, key, default)


def test_shipped_configs_parse():
    cfg = load_config(CONFIGS / "psp.cfg", ["n=5"])
    assert cfg.resolved_speeds() == (-5, -3, 1, 3, 5)
    load_config(CONFIGS / "finetune.cfg")


def test_grid_cells():
    assert grid_cells({}) == []
    assert grid_cells({"norm.g": []}) == []
    assert len(grid_cells({"norm.g": [16, 8, 4, 2, 1]})) == 5
    assert len(grid_cells({"n": [2, 3], "direction_mode": ["FF", "RW"]})) == 4
    assert cell_config(TrainConfig(), {"direction_mode": "RW"}).resolved_speeds() == (-5, -3, -1)
    assert cell_config(TrainConfig(), {"direction_mode": "FF"}).resolved_speeds() == (1, 3, 5)


def test_usage_errors_exit_2(capsys):
    assert dispatch([]) == 2
    assert dispatch(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    assert dispatch(["pretrain"]) == 2


@pytest.mark.parametrize("cmd", ["pretrain", "finetune", "eval", "retrieve", "ablate"])
def test_help_lists_every_config_key(cmd, capsys):
    assert dispatch([cmd, "--help"]) == 0
    out = capsys.readouterr().out
    for key, _, default in schema():
        assert key in out
        assert json.dumps(default) in out


def test_synth_help_lists_keys(capsys):
    assert dispatch(["synth", "--help"]) == 0
    out = capsys.readouterr().out
    assert "velocity_range" in out and "tail_length" in out


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert dispatch(["pretrain", "--manifest", str(tmp_path / "none.jsonl"), "--output-dir", str(tmp_path)]) == 1
    assert dispatch(["synth", "--override", "bogus=1", "--output-dir", str(tmp_path)]) == 1
    assert dispatch(["synth", "--override", "velocity_range=[1,99]", "--output-dir", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("VIDPACE_OUTPUT_ROOT", str(tmp_path))
    assert dispatch(["synth", "--override", "num_videos=2", "--override", "frames_per_video=4"]) == 0
    assert (tmp_path / "synth" / "manifest.jsonl").exists()


def test_cli_pipeline(tmp_path, capsys):
    data = tmp_path / "data"
    assert dispatch(["synth", "--config", str(CONFIGS / "tiny.cfg"), "--override", "num_videos=8",
                     "--override", "frames_per_video=20", "--override", "test_fraction=0.25",
                     "--output-dir", str(data)]) == 0
    manifest = data / "manifest.jsonl"
    assert manifest.exists() and (data / "metadata.jsonl").exists()

    ssl = tmp_path / "ssl"
    ov = sum((["--override", o] for o in TINY_TRAIN), [])
    assert dispatch(["pretrain", "--manifest", str(manifest), "--output-dir", str(ssl), *ov,
                     "--override", "n=5"]) == 0
    assert "speeds=[-5, -3, 1, 3, 5]" in capsys.readouterr().out
    assert load_checkpoint(ssl / "checkpoint_last.npz").config.n == 5

    assert dispatch(["pretrain", "--manifest", str(manifest), "--output-dir", str(ssl), *ov]) == 0
    ft = tmp_path / "ft"
    assert dispatch(["finetune", "--manifest", str(manifest), "--checkpoint", str(ssl / "checkpoint_last.npz"),
                     "--output-dir", str(ft), *ov]) == 0
    assert dispatch(["eval", "--manifest", str(manifest), "--checkpoint", str(ft / "checkpoint_last.npz"),
                     "--output-dir", str(ft)]) == 0
    assert json.loads((ft / "eval.json").read_text())["num_clips"] == 2

    ret = tmp_path / "ret"
    assert dispatch(["retrieve", "--manifest", str(manifest), "--checkpoint", str(ft / "checkpoint_last.npz"),
                     "--output-dir", str(ret), "--label", "psp"]) == 0
    assert (ret / "gallery.npy").exists() and (ret / "retrieval.png").exists()
    rep = tmp_path / "rep"
    assert dispatch(["report", str(ret / "retrieval.json"), "--output-dir", str(rep)]) == 0
    assert (rep / "retrieval.png").exists()

    # mismatched architecture between checkpoint and fine-tune config
    assert dispatch(["finetune", "--manifest", str(manifest), "--checkpoint", str(ssl / "checkpoint_last.npz"),
                     "--output-dir", str(ft), *ov, "--override", "width_scale=0.25"]) == 1


def test_cli_ablate_and_empty_grid(tmp_path):
    data = tmp_path / "data"
    assert dispatch(["synth", "--override", "num_videos=4", "--override", "frames_per_video=20",
                     "--override", "test_fraction=0.25", "--output-dir", str(data)]) == 0
    ov = sum((["--override", o] for o in TINY_TRAIN), [])
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"direction_mode": ["FF", "RW", "FF+RW"]}))
    out = tmp_path / "abl"
    assert dispatch(["ablate", "--manifest", str(data / "manifest.jsonl"), "--grid", str(grid),
                     "--output-dir", str(out), "--finetune-epochs", "1", *ov]) == 0
    rows = read_table(out / "results.csv")
    assert [r["speeds"] for r in rows] == ["1 3 5", "-5 -3 -1", "-3 1 3"]
    assert all(r["finetune_acc"] != "" for r in rows)
    wide = read_table(out / "results_wide.csv")
    assert [r["metric"] for r in wide] == ["pretext_acc", "heldout_pretext_acc", "finetune_acc"]

    grid.write_text("{}")
    empty = tmp_path / "empty"
    assert dispatch(["ablate", "--manifest", str(data / "manifest.jsonl"), "--grid", str(grid),
                     "--output-dir", str(empty)]) == 0
    assert read_table(empty / "results.csv") == []


def test_parser_has_all_subcommands():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == {"ingest", "synth", "pretrain", "finetune", "eval", "retrieve", "ablate", "report"}


def test_cli_ingest(tmp_path):
    import numpy as np

    root = tmp_path / "videos"
    for cls in ("a", "b"):
        (root / cls).mkdir(parents=True)
        for k in range(3):
            np.save(root / cls / f"v{k}.npy", np.zeros((4, 3, 3, 3), np.uint8))
    test_list = tmp_path / "test.txt"
    test_list.write_text("a/v0.npy\nb/v0.npy\n")
    out = tmp_path / "ing"
    assert dispatch(["ingest", "--root", str(root), "--test-list", str(test_list), "--output-dir", str(out)]) == 0
    lines = [json.loads(x) for x in (out / "manifest.jsonl").read_text().splitlines()]
    assert len(lines) == 6 and sum(x["split"] == "test" for x in lines) == 2
    assert all(Path(x["path"]).exists() for x in lines)
