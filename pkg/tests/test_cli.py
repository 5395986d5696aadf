import json

import pytest

from tumor_control.cli import main
from tumor_control.io import read_snapshot

SMALL = """[run]
seed = 3
[domain]
cells = 16
[time]
steps = 8
[optimizer]
max_iters = 5
[verify]
probes = 2
[output]
cadence = 4
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def _err(capsys):
    lines = [l for l in capsys.readouterr().err.splitlines() if l.startswith("{")]
    return json.loads(lines[-1])


def test_unknown_subcommand(capsys):
    assert main(["bogus"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err and '"exit": 1' in err
    assert main([]) == 1


def test_missing_config_flag(capsys):
    assert main(["simulate"]) == 1


def test_bad_config_value(cfg, tmp_path, capsys):
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--override", "model.alpha=0"]) == 1
    assert _err(capsys)["error"] == "validation-error"


def test_simulate_outputs_and_determinism(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b)]) == 0
    assert (a / "monitors.csv").read_bytes() == (b / "monitors.csv").read_bytes()
    snaps = sorted(p.name for p in (a / "snapshots").iterdir())
    assert snaps == ["level_00000.tgf", "level_00004.tgf", "level_00008.tgf"]
    cells, fields = read_snapshot(a / "snapshots" / "level_00008.tgf")
    assert cells == (16,) and set(fields) == {"mu", "phi", "sigma"}
    assert "steps = 8" in (a / "config_effective.ini").read_text()


def test_gradcheck_report_line(cfg, tmp_path, capsys):
    assert main(["gradcheck", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    assert "max_rel_err <= 1e-06" in capsys.readouterr().out
    header = (tmp_path / "g" / "gradcheck.csv").read_text().splitlines()[0]
    assert header == "probe,seed,fd,adjoint,rel_err"


def test_optimize_and_seeded_repeat(cfg, tmp_path):
    for d in ("o1", "o2"):
        assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "11"]) == 0
    for name in ("history.csv", "report.csv"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()
    assert (tmp_path / "o1" / "controls_final.tgf").exists()


def test_solver_failure_exit_code(cfg, tmp_path, capsys):
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "f"),
                 "--override", "solver.max_iter=1"]) == 2
    assert _err(capsys)["exit"] == 2


def test_verify_negative_control(cfg, tmp_path, capsys):
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "v"),
                 "--override", "solver.newton_tol=1e-4"]) == 3
    assert _err(capsys)["error"] == "verification-threshold"


def test_sweep_isolation(cfg, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--sweep", "model.chi=0.5,1.0",
                 "--sweep", "solver.max_iter=1,25", "--jobs", "2"]) == 0
    rows = (out / "summary.csv").read_text().splitlines()
    assert rows[0].startswith("run,model.chi,solver.max_iter,status")
    assert len(rows) == 5
    status = [r.split(",")[3] for r in rows[1:]]
    assert status == ["failed", "ok", "failed", "ok"]
    assert sorted(p.name for p in out.iterdir() if p.is_dir()) == ["run_000", "run_001", "run_002", "run_003"]
