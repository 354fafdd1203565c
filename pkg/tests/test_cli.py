import csv
import json

import pytest

from stepsearch.cli import main
from stepsearch.config import apply_overrides, build_experiment, load_config, parse_override
from stepsearch.problem import ConfigurationError

SMALL = """
[problem]
dim = 10
data_rows = 20
seed = 3
conditioning = 1000.0

[oracle]
kappa_g = 0.2
p = 0.8

[algo]
name = "ista"

[run]
epsilons = [1e-2, 3e-3, 1e-3]
trials = 3
master_seed = 11
"""

EXACT = SMALL.replace("kappa_g = 0.2\np = 0.8", "kappa_g = 0.0\np = 1.0\nschedule = \"none\"")


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(SMALL)
    return path


def test_unknown_keys_are_listed(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text(SMALL.replace("[run]", "[run]\ncolour = 1") + "\n[extra]\nx = 1\n")
    assert main(["montecarlo", "--config", str(path), "--output-dir", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "extra" in err and "run.colour" in err


def test_p_below_half_is_configuration_error(cfg_file, tmp_path, capsys):
    code = main(["solve", "--config", str(cfg_file), "--set", "oracle.p=0.4",
                 "--output-dir", str(tmp_path / "o")])
    assert code == 2
    assert "1/2 < p" in capsys.readouterr().err


def test_override_beats_file(cfg_file):
    raw = apply_overrides(load_config(cfg_file), ["run.trials=9", "oracle.p=0.9",
                                                  'algo.name="fista"'])
    exp = build_experiment(raw)
    assert exp.trials == 9 and exp.oracle.p == 0.9 and exp.algo.value == "fista"
    assert exp.oracle.schedule.value == "fista_decay"
    assert load_config(cfg_file)["run"]["trials"] == 3


def test_override_parsing():
    assert parse_override("run.epsilons=[0.1, 0.01]") == ("run", "epsilons", [0.1, 0.01])
    assert parse_override("algo.name=fista") == ("algo", "name", "fista")
    with pytest.raises(ConfigurationError):
        parse_override("trials=3")
    with pytest.raises(ConfigurationError):
        apply_overrides(load_config(), ["run.nope=1"])


def test_bad_toml(tmp_path):
    path = tmp_path / "x.toml"
    path.write_text("[run\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_solve_round_trip_and_tamper(cfg_file, tmp_path):
    out = tmp_path / "solve"
    for algo in ("ista", "fista"):
        d = out / algo
        assert main(["solve", "--config", str(cfg_file), "--algo", algo,
                     "--output-dir", str(d)]) == 0
        assert json.loads((d / "invariants.json").read_text())["passed"]
        assert main(["check-trace", str(d / "trace.csv")]) == 0

    trace = out / "fista" / "trace.csv"
    rows = list(csv.reader(trace.open()))
    header = rows[0]
    i = next(i for i, r in enumerate(rows[2:], start=2) if r[header.index("success")] == "0")
    gap = header.index("gap")
    rows[i][gap] = repr(float(rows[i][gap]) * 2 + 1)
    with trace.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    assert main(["check-trace", str(trace)]) == 1


def test_refuses_overwrite_without_force(cfg_file, tmp_path):
    d = str(tmp_path / "o")
    assert main(["solve", "--config", str(cfg_file), "--output-dir", d]) == 0
    assert main(["solve", "--config", str(cfg_file), "--output-dir", d]) == 2
    assert main(["solve", "--config", str(cfg_file), "--output-dir", d, "--force"]) == 0


def test_montecarlo_exact_oracle_rows(tmp_path):
    path = tmp_path / "exact.toml"
    path.write_text(EXACT)
    d = tmp_path / "mc"
    assert main(["montecarlo", "--config", str(path), "--output-dir", str(d)]) == 0
    summary = list(csv.DictReader((d / "summary.csv").open()))
    trials = list(csv.DictReader((d / "trials.csv").open()))
    assert len(summary) == 3 and all(int(r["trials"]) == 3 for r in summary)
    for e in range(3):
        assert sum(r["eps_index"] == str(e) for r in trials) == 3
    scaling = json.loads((d / "scaling.json").read_text())
    for key in ("slope", "stderr", "epsilons", "means", "medians", "censored", "theorem_bound"):
        assert key in scaling


def test_outputs_are_byte_identical(cfg_file, tmp_path):
    names = ["summary.csv", "trials.csv", "scaling.json"]
    blobs = []
    for d in ("a", "b"):
        assert main(["montecarlo", "--config", str(cfg_file),
                     "--output-dir", str(tmp_path / d)]) == 0
        blobs.append([(tmp_path / d / n).read_bytes() for n in names])
    assert blobs[0] == blobs[1]


def test_reference_cache_is_reused(cfg_file, tmp_path):
    d = tmp_path / "ref"
    assert main(["reference", "--config", str(cfg_file), "--output-dir", str(d)]) == 0
    ref = json.loads((d / "reference.json").read_text())
    assert ref["gradient_mapping_norm"] <= 1e-10
    assert main(["solve", "--config", str(cfg_file), "--output-dir", str(d)]) == 0


def test_appendix_command(tmp_path):
    d = tmp_path / "app"
    assert main(["appendix", "--kind", "ex1a", "--kind", "ex2a", "--trials", "2000",
                 "--output-dir", str(d)]) == 0
    data = json.loads((d / "appendix.json").read_text())
    assert [p["kind"] for p in data["processes"]] == ["ex1a", "ex2a"]
    assert main(["appendix", "--kind", "ex2b", "--epsilon", "0.7",
                 "--output-dir", str(tmp_path / "bad")]) == 2


def test_fista_bktr_needs_exact_oracle(cfg_file, tmp_path):
    assert main(["solve", "--config", str(cfg_file), "--algo", "fista-bktr",
                 "--output-dir", str(tmp_path / "o")]) == 2
    assert main(["solve", "--config", str(cfg_file), "--algo", "fista-bktr",
                 "--set", "oracle.kappa_g=0", "--set", "oracle.p=1",
                 "--output-dir", str(tmp_path / "o")]) == 0


def test_module_entry_point(cfg_file, tmp_path):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "stepsearch", "solve", "--config", str(cfg_file),
                           "--output-dir", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
