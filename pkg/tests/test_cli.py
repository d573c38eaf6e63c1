import json

import numpy as np
import pytest

from ebcurve import simbench
from ebcurve.cli import main

COHORT = ["--outcome", "y", "--exposure", "a", "--covariate", "X1:continuous", "--covariate", "X2:continuous", "--covariate", "X3:binary"]


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "cohort.csv"
    simbench.gen_main(400, 2).dataset().to_frame().to_csv(path, index=False)
    return str(path)


def _run(*argv):
    return main([str(a) for a in argv])


def test_weights_writes_outputs(cohort, tmp_path):
    assert _run("weights", "--input", cohort, *COHORT, "--moments", "3", "--output-dir", tmp_path) == 0
    w = np.loadtxt(tmp_path / "weights.csv", skiprows=1)
    assert w.size == 400 and w.sum() == pytest.approx(1)
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["converged"] and diag["method"] == "eb_3"
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["command"] == "weights" and cfg["pipeline"]["method"] == "eb_3"


def test_schema_file(cohort, tmp_path):
    schema = tmp_path / "s.json"
    schema.write_text(json.dumps({"outcome": "y", "exposure": "a", "covariates": {"X1": "continuous", "X3": "binary"}}))
    assert _run("weights", "--input", cohort, "--schema", schema, "--output-dir", tmp_path / "o") == 0


def test_balance_outputs(cohort, tmp_path):
    assert _run("balance", "--input", cohort, *COHORT, "--output-dir", tmp_path, "--format", "json") == 0
    rep = json.loads((tmp_path / "balance.json").read_text())
    assert rep["ess"] < 400
    assert (tmp_path / "ecdf.csv").read_text().startswith("variable,value,weighted_cdf,unweighted_cdf")


def test_drc_with_weight_file_and_bootstrap(cohort, tmp_path):
    _run("weights", "--input", cohort, *COHORT, "--output-dir", tmp_path / "w")
    out = tmp_path / "d"
    args = ["drc", "--input", cohort, *COHORT, "--weights", tmp_path / "w" / "weights.csv", "--grid", "4:30:8"]
    assert _run(*args, "--output-dir", out) == 0
    assert (out / "curve.csv").read_text().splitlines()[0] == "a0,estimate"
    assert _run(*args, "--bootstrap", 4, "--output-dir", out) == 0
    assert (out / "curve.csv").read_text().splitlines()[0] == "a0,estimate,se,lo,hi,n_replicates"


def test_rerun_is_byte_identical(cohort, tmp_path):
    for d in ("r1", "r2"):
        assert _run("bootstrap", "--input", cohort, *COHORT, "--B", 3, "--grid", "4:30:5", "--output-dir", tmp_path / d) == 0
    for name in ("curve.csv", "curve.json", "config.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_simulate_small(tmp_path):
    rc = _run("simulate", "--reps", 2, "--methods", "unweighted,eb_2", "--grid-step", 5, "--output-dir", tmp_path)
    assert rc == 0
    assert "Entropy Balancing (2)" in (tmp_path / "table.txt").read_text()


@pytest.mark.parametrize(
    "argv",
    [
        ["nope"],
        ["weights", "--input", "x.csv"],
        ["weights", "--bogus-flag"],
        ["drc", "--input", "x.csv", *COHORT, "--grid", "9:1:3", "--output-dir", "o"],
    ],
)
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    assert "usage error" in capsys.readouterr().err


def test_data_errors_exit_1(cohort, tmp_path, capsys):
    assert _run("weights", "--input", tmp_path / "missing.csv", *COHORT, "--output-dir", tmp_path) == 1
    bad = ["--outcome", "y", "--exposure", "a", "--covariate", "zzz:continuous"]
    assert _run("weights", "--input", cohort, *bad, "--output-dir", tmp_path) == 1
    assert "zzz" in capsys.readouterr().err


def test_numerical_failure_exit_2(tmp_path):
    path = tmp_path / "flat.csv"
    path.write_text("y,a,x\n" + "".join(f"{i},{i},1\n" for i in range(10)))
    rc = _run("weights", "--input", path, "--outcome", "y", "--exposure", "a", "--covariate", "x:continuous",
              "--method", "normal_gps", "--output-dir", tmp_path / "o")
    assert rc == 2
