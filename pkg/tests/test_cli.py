import json
import subprocess
import sys

import pytest

from biact.cli import TRAIN_KEYS, main
from biact.config import parse_config
from biact.datalog import write_episode
from biact.errors import ConfigurationError, UsageError


def test_selftest_exits_zero(capsys):
    assert main(["selftest"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5 and all(line.startswith("PASS") for line in lines)


def test_replay_exits_zero(demos, tmp_path, capsys):
    path = write_episode(demos[500.0], tmp_path / "d.biep")
    assert main(["replay", "--episode", str(path)]) == 0
    assert "max |resimulated - logged|" in capsys.readouterr().out


def test_missing_file_is_io_exit(tmp_path, capsys):
    assert main(["replay", "--episode", str(tmp_path / "nope.biep")]) == 9
    assert "error:" in capsys.readouterr().err


def test_unknown_flag_is_usage_exit():
    with pytest.raises(SystemExit) as info:
        main(["selftest", "--bogus"])
    assert info.value.code == 2


def test_malformed_config_names_line(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("# comment\nk = 20\nmodel_dim 64\n")
    assert main(["train", "--data", str(tmp_path), "--config", str(cfg), "--out", str(tmp_path / "m")]) == 3
    assert "bad.cfg:3" in capsys.readouterr().err


def test_unknown_config_key_is_usage_exit(tmp_path, capsys):
    cfg = tmp_path / "odd.cfg"
    cfg.write_text("k = 20\nwarp_drive = 1\n")
    assert main(["train", "--data", str(tmp_path), "--config", str(cfg), "--out", str(tmp_path / "m")]) == 2
    assert "odd.cfg:2" in capsys.readouterr().err


def test_parse_config_types():
    got = parse_config("k = 5  # short chunks\n\nforce_mask = yes\nconv_channels = 4,8\nlr = 1e-3\n", TRAIN_KEYS)
    assert got == {"k": 5, "force_mask": True, "conv_channels": (4, 8), "lr": 1e-3}
    with pytest.raises(ConfigurationError, match="<config>:2"):
        parse_config("k = 5\nk = 6\n", TRAIN_KEYS)
    with pytest.raises(ConfigurationError, match="expects int"):
        parse_config("epochs = many\n", TRAIN_KEYS)
    with pytest.raises(UsageError):
        parse_config("colour = red\n", TRAIN_KEYS)


def test_pipeline_end_to_end(tmp_path, capsys):
    data, out = tmp_path / "data", tmp_path / "seqs"
    assert main(["collect", "--task", "pick", "--episodes", "1", "--seed", "2", "--out", str(data)]) == 0
    assert "valid" in capsys.readouterr().out
    assert main(["augment", "--in", str(data), "--factor", "10", "--out", str(out)]) == 0
    assert "10 sequences" in capsys.readouterr().out
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("k = 5\nlatent_dim = 4\nmodel_dim = 16\nn_heads = 2\nenc_layers = 1\ndec_layers = 1\n"
                   "ffn_dim = 16\nconv_channels = 4,8\nepochs = 1\nbatch_size = 64\n")
    model = tmp_path / "m.bin"
    assert main(["train", "--data", str(out), "--config", str(cfg), "--out", str(model)]) == 0
    report = tmp_path / "eval.json"
    assert main(["eval", "--model", str(model), "--episodes", "1", "--stiffness", "50",
                 "--json", str(report)]) == 0
    table = capsys.readouterr().out
    assert "Pick" in table
    rows = json.loads(report.read_text())["rows"]
    assert rows[0]["stiffness"] == 50.0 and rows[0]["episodes"] == 1
    assert main(["eval", "--model", str(model), "--task", "lift", "--episodes", "1"]) == 3


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "biact", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("collect", "augment", "train", "eval", "replay", "gradcheck", "selftest"):
        assert cmd in res.stdout
