import json
import subprocess
import sys

import numpy as np
import pytest

from pegelab import config as C
from pegelab.cli import main

SMALL_PEGE = {
    "experiment": "pege-run",
    "model": {"A": [[0.0]], "B": [[1.0, 1.0]]},
    "cost": {"kind": "quadratic", "Q": [[0.0]], "R": [[1.0, 0.0], [0.0, 1.0]], "G": [[1.0]]},
    "grid": {"T": 1.0, "n_steps": 100},
    "box": {"lower": [[-0.5, 0.5, 0.5]], "upper": [[0.5, 1.5, 1.5]]},
    "exploration": {"actions": [[1.0, 0.0], [0.0, 1.0]]},
    "n_episodes": 12,
    "seeds": {"base": 0, "count": 30},
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_unknown_key_rejected():
    bad = dict(SMALL_PEGE, colour="blue")
    with pytest.raises(C.ConfigError, match="colour"):
        C.resolve(bad)
    nested = json.loads(json.dumps(SMALL_PEGE))
    nested["grid"]["dt"] = 0.1
    with pytest.raises(C.ConfigError):
        C.resolve(nested)


def test_model_block_required():
    with pytest.raises(C.ConfigError, match="model"):
        C.resolve({"experiment": "pege-run"})


def test_defaults_and_hash_stable():
    a = C.resolve(SMALL_PEGE)
    b = C.resolve(json.loads(json.dumps(SMALL_PEGE)))
    assert a["delta"] == 0.05 and a["exploration"]["partition"] == [0.0, 0.5, 1.0]
    assert C.config_hash(a) == C.config_hash(b)
    assert C.config_hash(C.resolve(SMALL_PEGE, 5)) != C.config_hash(a)


def test_bad_config_exit_code(tmp_path, capsys):
    path = _write(tmp_path, dict(SMALL_PEGE, n_episodes=0))
    assert main(["pege-run", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert "n_episodes" in capsys.readouterr().err


def test_run_writes_outputs_and_is_reproducible(tmp_path):
    path = _write(tmp_path, SMALL_PEGE)
    outs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 3)):
        out = tmp_path / name
        assert main(["pege-run", "--config", path, "--out", str(out), "--threads", str(threads)]) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir())
    assert files == ["bernstein_noise.csv", "config_echo.json", "ledger_seed0.csv", "runs.csv",
                     "summary.json"]
    for f in files:
        ref = (outs[0] / f).read_bytes()
        assert (outs[1] / f).read_bytes() == ref, f
        assert (outs[2] / f).read_bytes() == ref, f
    summary = json.loads((outs[0] / "summary.json").read_text())
    echo = json.loads((outs[0] / "config_echo.json").read_text())
    assert summary["config_hash"] == echo["config_hash"] == C.config_hash(echo["config"])
    header = (outs[0] / "runs.csv").read_text().splitlines()[0].split(",")
    assert header[-2:] == ["n_seeds", "config_hash"]
    assert abs(summary["decomposition_gap_max"]) < 1e-9


def test_seed_override(tmp_path):
    path = _write(tmp_path, SMALL_PEGE)
    main(["pege-run", "--config", path, "--out", str(tmp_path / "o"), "--seeds", "4"])
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["n_seeds"] == 4
    rows = (tmp_path / "o" / "runs.csv").read_text().splitlines()
    assert len(rows) == 5


def test_experiment_mismatch(tmp_path):
    path = _write(tmp_path, SMALL_PEGE)
    with pytest.raises(SystemExit):
        main(["regret-scan", "--config", path, "--out", str(tmp_path / "o")])


def test_riccati_check_via_console_script(tmp_path):
    cfg = {"experiment": "riccati-check", "riccati_check": {"n_steps": [16, 32, 64, 1000]}}
    path = _write(tmp_path, cfg)
    r = subprocess.run([sys.executable, "-m", "pegelab.cli", "riccati-check", "--config", path,
                        "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["error_finest"] < 1e-8 and s["min_observed_order"] >= 3.8
