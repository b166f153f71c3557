import csv
import json

import pytest

from hiortho.cli import EXIT_CONFIG, EXIT_RUNTIME, main

SIM = ["--authors", "120", "--papers", "800", "--duo-share", "0.15", "--seed", "3"]


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", *SIM, "--out", str(out)]) == 0
    return out / "corpus.csv"


def load(path):
    data = json.loads(path.read_text())
    data.pop("timestamp")
    return data


@pytest.fixture
def study_file(tmp_path):
    path = tmp_path / "study.ini"
    path.write_text(
        "[study]\nn_reps = 2\nq_list = 0, 2\nseed = 1\n"
        "[topology]\nn_authors = 120\nn_papers = 800\nduo_share = 0.15\nseed = 11\n"
        "[theta0]\ngamma = 0.5\n"
    )
    return path


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate"],
        ["estimate", "{corpus}"],
        ["counterfactual", "{corpus}"],
        ["quasi-diff", "{corpus}"],
        ["bootstrap", "{corpus}"],
        ["check-orthogonality"],
        ["mc-study", "{study}"],
    ],
)
def test_dry_run_writes_nothing(argv, corpus_file, study_file, tmp_path, capsys):
    out = tmp_path / "dry"
    argv = [a.format(corpus=corpus_file, study=study_file) for a in argv]
    assert main([*argv, "--dry-run", "--out", str(out)]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["dry_run"] is True and plan["command"] == argv[0]
    assert not out.exists()


def test_simulate_outputs(corpus_file):
    out = corpus_file.parent
    with open(out / "effects.csv") as fh:
        assert len(list(csv.reader(fh))) == 121
    meta = load(out / "simulate.json")
    assert meta["summary"]["papers"] == 800
    assert meta["schema_version"] == "1.0"


def test_estimate_writes_four_parameters(corpus_file, tmp_path, capsys):
    out = tmp_path / "est"
    assert main(["estimate", "--q", "2", "--splits", "5", "--seed", "7", str(corpus_file), "--out", str(out)]) == 0
    res = load(out / "results.json")
    for q in ("0", "2"):
        assert {"beta", "gamma", "sigma2_1", "sigma2_2"} <= set(res["estimates"][q])
    with open(out / "splits.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["split_id"] for r in rows} == {str(s) for s in range(5)}
    assert "plug-in" in capsys.readouterr().out


def test_estimate_is_deterministic_across_runs_and_workers(corpus_file, tmp_path):
    args = ["estimate", "--splits", "2", "--seed", "1", "--subsample", "40", str(corpus_file)]
    main([*args, "--out", str(tmp_path / "a")])
    main([*args, "--out", str(tmp_path / "b")])
    main([*args, "--workers", "2", "--out", str(tmp_path / "c")])
    ref = load(tmp_path / "a" / "results.json")
    assert load(tmp_path / "b" / "results.json") == ref
    ref["config"].pop("workers")
    other = load(tmp_path / "c" / "results.json")
    other["config"].pop("workers")
    assert other == ref
    split_csv = (tmp_path / "a" / "splits.csv").read_bytes()
    assert (tmp_path / "b" / "splits.csv").read_bytes() == split_csv
    assert (tmp_path / "c" / "splits.csv").read_bytes() == split_csv


def test_check_orthogonality_neyman_scott(tmp_path, capsys):
    out = tmp_path / "chk"
    assert main(["check-orthogonality", "--q", "2", "--model", "neyman-scott", "--points", "2", "--out", str(out)]) == 0
    assert load(out / "orthogonality.json")["max_violation"] < 1e-9
    assert "max violation" in capsys.readouterr().out


def test_quasi_diff_and_counterfactual(corpus_file, tmp_path):
    out = tmp_path / "qd"
    assert main(["quasi-diff", "--splits", "2", str(corpus_file), "--out", str(out)]) == 0
    qd = load(out / "quasi_diff.json")
    assert len(qd["splits"]) == 2
    assert main(["counterfactual", "--splits", "1", "--subsample", "40", str(corpus_file), "--out", str(out)]) == 0
    cf = load(out / "counterfactual.json")
    assert cf["estimates"]["2"]["random_realloc_ortho"] is not None


def test_mc_study_aggregate(study_file, tmp_path):
    out = tmp_path / "mc"
    assert main(["mc-study", str(study_file), "--out", str(out)]) == 0
    with open(out / "mc_aggregate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {"Median", "Mean", "q2.5", "q97.5"} <= set(rows[0])
    assert {r["estimator"] for r in rows} == {"plug-in", "q=2"}


def test_output_dir_from_environment(corpus_file, tmp_path, monkeypatch):
    monkeypatch.setenv("HIORTHO_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["quasi-diff", "--splits", "1", str(corpus_file)]) == 0
    assert (tmp_path / "env" / "quasi_diff.json").is_file()


@pytest.mark.parametrize(
    "argv",
    [
        ["estimate", "--q", "9", "{corpus}"],
        ["estimate", "--splits", "0", "{corpus}"],
        ["estimate", "missing.csv"],
        ["simulate", "--gamma", "0"],
        ["simulate", "--duo-share", "1.5"],
        ["simulate", "--authors", "500", "--papers", "600"],
        ["mc-study", "missing.ini"],
    ],
)
def test_config_errors_exit_2(argv, corpus_file, tmp_path, capsys):
    out = tmp_path / "err"
    argv = [a.format(corpus=corpus_file) for a in argv]
    assert main([*argv, "--out", str(out)]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err
    assert load(out / "error.json")["status"] == EXIT_CONFIG


def test_config_file_keys(corpus_file, tmp_path):
    good = tmp_path / "run.ini"
    good.write_text("[run]\nsplits = 1\nseed = 4\n")
    out = tmp_path / "cfg"
    assert main(["quasi-diff", "--config", str(good), str(corpus_file), "--out", str(out)]) == 0
    assert load(out / "quasi_diff.json")["config"] == {"corpus": str(corpus_file), "splits": 1, "seed": 4}
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nsplitz = 1\n")
    assert main(["quasi-diff", "--config", str(bad), str(corpus_file), "--out", str(out)]) == EXIT_CONFIG
    assert "splitz" in load(out / "error.json")["message"]


def test_unknown_study_key_rejected(tmp_path):
    path = tmp_path / "study.ini"
    path.write_text("[study]\nn_reps = 2\nreps = 3\n")
    assert main(["mc-study", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_malformed_corpus_is_config_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("paper_id,authors\nx,y\n")
    assert main(["estimate", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_runtime_failure_exit_3(tmp_path):
    # two authors and one joint paper: too little data for a fit
    path = tmp_path / "c.csv"
    path.write_text(
        "paper_id,authors,output,period\n"
        "d1,ann;bob,2.5,1\ns1,ann,1.5,1\ns2,ann,1.1,1\ns3,bob,0.5,1\ns4,bob,0.7,1\n"
    )
    out = tmp_path / "rt"
    assert main(["estimate", "--splits", "1", str(path), "--out", str(out)]) == EXIT_RUNTIME
    err = load(out / "error.json")
    assert err["status"] == EXIT_RUNTIME and err["traceback"]
