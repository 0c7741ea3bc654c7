import json

import pytest

from pinsupport.cli import main
from pinsupport.config import ExperimentConfig
from pinsupport.errors import ConfigError


def _cfg(tmp_path, text, name="c.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_and_defaults():
    cfg = ExperimentConfig.from_text("system = kolmogorov  # comment\nproj = 0, 1\nb = 0.5\nK = 6\nN = 4\n")
    assert cfg.system == "kolmogorov" and cfg.proj == ((0.0, 1.0),) and cfg.b == (0.5,)
    assert cfg.projection_rows().shape == (1, 2)
    assert list(cfg.start()) == [0.0, 0.0]
    assert ExperimentConfig().validated().N == 8


@pytest.mark.parametrize(
    "text, match",
    [
        ("bogus = 1", "unknown key"),
        ("K = 6\nK = 7", "duplicate"),
        ("alpha = 0.3", "1/3 < alpha"),
        ("m = 2", "alpha"),
        ("system = nope", "unknown system"),
        ("K = 4", "N must not exceed K"),
        ("system = kolmogorov\nproj = 1, 1", "orthonormal"),
        ("system = kolmogorov\nproj = 0, 1", "b must be given"),
        ("times = 0.5, 0.25", "increasing"),
        ("K = abc", "cannot parse"),
        ("just words", "key = value"),
    ],
)
def test_config_rejections(text, match):
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_text(text)


def test_hash_is_canonical():
    a = ExperimentConfig.from_text("K = 10\nseed = 3\n")
    b = ExperimentConfig.from_text("# same\nseed=3\n\nK=10")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != a.with_overrides(seed=4).config_hash()
    assert ExperimentConfig.from_text(a.canonical_text()) == a


def _run(args):
    return main(args)


@pytest.mark.parametrize("command", ["lift", "norms", "skeleton", "rde", "variational", "gram", "hormander"])
def test_light_commands_succeed(tmp_path, command):
    cfg = _cfg(tmp_path, "system = smooth\nh = 0.5, -0.5\nK = 6\nN = 3\nn_samples = 50\n")
    out = tmp_path / command
    assert _run([command, "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "run_summary.json").read_text())
    assert summary["exit_code"] == 0 and summary["command"] == command
    assert all(summary["assertions"].values())
    files = {o["file"] for o in summary["outputs"]}
    assert {"results.json", "config.txt"} <= files
    assert all(len(o["sha256"]) == 64 for o in summary["outputs"])


def test_exit_code_for_bad_config(tmp_path):
    assert _run(["lift", "--config", _cfg(tmp_path, "alpha = 0.49\nm = 2\n"), "--out", str(tmp_path / "o")]) == 2
    assert _run(["lift", "--config", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "o")]) == 2


def test_exit_code_for_degenerate_density(tmp_path, capsys):
    cfg = _cfg(tmp_path, "system = degenerate\nK = 6\nN = 4\nn_samples = 2000\n")
    assert _run(["density", "--config", cfg, "--out", str(tmp_path / "d")]) == 3
    assert "not significantly positive" in capsys.readouterr().err
    assert json.loads((tmp_path / "d" / "run_summary.json").read_text())["exit_code"] == 3


def test_bridge_results_independent_of_workers(tmp_path):
    cfg = _cfg(tmp_path, "system = brownian\nK = 6\nN = 4\nn_bridge = 100\nn_chain = 5000\neps = 0.1\n")
    outs = []
    for w in (1, 3):
        out = tmp_path / f"w{w}"
        assert _run(["bridge", "--config", cfg, "--workers", str(w), "--out", str(out)]) == 0
        outs.append(out)
    assert (outs[0] / "results.json").read_bytes() == (outs[1] / "results.json").read_bytes()
    assert (outs[0] / "ensemble" / "manifest.json").read_bytes() == (outs[1] / "ensemble" / "manifest.json").read_bytes()


def test_seed_override_changes_results(tmp_path):
    cfg = _cfg(tmp_path, "system = brownian\nK = 6\nN = 4\nn_samples = 20\n")
    for s in ("1", "2"):
        assert _run(["norms", "--config", cfg, "--seed", s, "--out", str(tmp_path / s)]) == 0
    r1 = json.loads((tmp_path / "1" / "results.json").read_text())
    r2 = json.loads((tmp_path / "2" / "results.json").read_text())
    assert r1["config_hash"] != r2["config_hash"] and r1["results"] != r2["results"]


def test_acceptance_subset(tmp_path, capsys):
    assert _run(["acceptance", "--only", "1,4", "--out", str(tmp_path / "acc")]) == 0
    board = json.loads((tmp_path / "acc" / "scoreboard.json").read_text())
    assert [c["criterion"] for c in board["criteria"]] == [1, 4] and board["all_passed"]
    assert "[PASS] criterion  1" in capsys.readouterr().out
    assert _run(["acceptance", "--only", "13", "--out", str(tmp_path / "acc2")]) == 2
