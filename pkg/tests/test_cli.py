import pytest

from slowfast.cli import main
from slowfast.io import read_csv, read_meta

SMALL = """\
system: linear
params: {a: -1.0, b: 1.0, c: 0.5, d: 0.0}
N: 16
L: pi
lambda: 1.0
T: 1.0
epsilons: [0.125, 0.0625, 0.03125]
replicas: 8
seed: 3
output_dir: OUT
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL.replace("OUT", str(tmp_path / "runs")))
    return path


def test_check_passes_on_reference_parameters(config, tmp_path, capsys):
    assert main(["check", "--config", str(config), "--out", str(tmp_path / "c")]) == 0
    out = capsys.readouterr().out
    assert "[PASS] H1(mu=0.6, n=3, beta=0.2)" in out and "[FAIL]" not in out
    meta = read_meta(tmp_path / "c" / "meta.jsonl")
    assert [m["stage"] for m in meta] == ["check-start", "check-end"] and meta[-1]["passed"]


def test_check_fails_on_bad_hypothesis(config, tmp_path):
    assert main(["check", "--config", str(config), "--out", str(tmp_path / "c"), "--beta", "0.4"]) == 1


def test_simulate_is_byte_identical(config, tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(config), "--out", str(tmp_path / name)]) == 0
    for f in ("results.csv", "config.yaml", "trajectory.npz", "plotdata/slow_energy.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_flag_changes_results(config, tmp_path):
    main(["simulate", "--config", str(config), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(config), "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "results.csv").read_bytes() != (tmp_path / "b" / "results.csv").read_bytes()


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("system: linear\nfoo: 1\n")
    assert main(["check", "--config", str(bad)]) == 2
    assert f"{bad}:2: unknown key 'foo'" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert main(["check", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_rate_then_report(config, tmp_path, capsys):
    out = tmp_path / "r"
    code = main(["rate", "--config", str(config), "--out", str(out), "--replicas", "4"])
    rows = read_csv(out / "results.csv")
    assert [r["epsilon"] for r in rows] == ["0.125", "0.0625", "0.03125"]
    assert list(rows[0]) == ["epsilon", "mse", "std_error", "replicas", "seed"]
    fit = read_csv(out / "fit.csv")[0]
    assert {"slope", "intercept", "r2"} <= set(fit)
    assert (out / "plotdata" / "rate.csv").exists()
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == code
    assert "fit: slope=" in (out / "summary.txt").read_text()


def test_average_and_default_run_directory(config, tmp_path):
    assert main(["average", "--config", str(config)]) == 0
    assert (tmp_path / "runs" / "average" / "results.csv").exists()
    assert main(["report", "--config", str(config)]) == 0
