import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from difflinalg import cli


def run(*argv):
    out = io.StringIO()
    code = cli.main(list(argv), out=out)
    return code, out.getvalue()


@pytest.fixture
def toy_csv(tmp_path):
    rng = np.random.default_rng(3)
    x = rng.uniform(-3, 3, 30)
    y = np.sin(x) + 0.1 * rng.standard_normal(30)
    path = tmp_path / "toy.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        w.writerows(zip(x, y))
    return path


def test_gradcheck_single_record():
    code, out = run("gradcheck", "--ops", "potrf", "--shapes", "4", "--trials", "5", "--seed", "1",
                    "--format", "json")
    assert code == cli.EXIT_OK
    lines = out.strip().splitlines()
    assert len(lines) == 2  # one record per flag combination (lower, upper)
    rec = json.loads(lines[0])
    assert rec["op"] == "potrf" and rec["shape"] == 4 and rec["pass"] is True and rec["trials"] == 5


def test_gradcheck_text_and_report(tmp_path):
    report = tmp_path / "r.jsonl"
    code, out = run("gradcheck", "--ops", "syrk,gemm2", "--shapes", "2", "--trials", "1", "--report", str(report))
    assert code == 0
    assert out.strip().splitlines()[-1] == "# 6/6 passed"
    assert len(report.read_text().strip().splitlines()) == 6


def test_gradcheck_deterministic():
    a = run("gradcheck", "--ops", "gelqf", "--shapes", "3", "--trials", "2", "--format", "json", "--seed", "4")
    b = run("gradcheck", "--ops", "gelqf", "--shapes", "3", "--trials", "2", "--format", "json", "--seed", "4")
    assert a == b


@pytest.mark.parametrize("argv", [
    ["gradcheck", "--ops", "getrf"],
    ["gradcheck", "--shapes", "0"],
    ["gradcheck", "--trials", "0"],
    ["bench", "--sizes", "8"],
    ["bench", "--reps", "2"],
    ["fit", "gp"],
    ["nonsense"],
    [],
])
def test_usage_errors(argv):
    assert run(*argv)[0] == cli.EXIT_USAGE


def test_precision_from_environment(monkeypatch):
    monkeypatch.setenv(cli.PRECISION_ENV, "single")
    code, out = run("gradcheck", "--ops", "potrf", "--shapes", "3", "--trials", "1", "--format", "json")
    assert code == 0
    monkeypatch.setenv(cli.PRECISION_ENV, "quad")
    assert run("gradcheck", "--ops", "potrf", "--shapes", "3", "--trials", "1")[0] == cli.EXIT_USAGE


def test_gradcheck_failure_exit(monkeypatch):
    from difflinalg.tape import ops

    op = ops.get_op("syrk")
    broken = ops.OpDef(**{**op.__dict__, "backward": lambda c, i, o, x, w: [2 * g for g in op.backward(c, i, o, x, w)]})
    monkeypatch.setitem(ops.REGISTRY, "syrk", broken)
    code, out = run("gradcheck", "--ops", "syrk", "--shapes", "3", "--trials", "1")
    assert code == cli.EXIT_FAIL
    assert out.startswith("FAIL syrk")


def test_bench_records(tmp_path):
    path = tmp_path / "b.jsonl"
    fig = tmp_path / "b.png"
    code, _ = run("bench", "--ops", "potrf", "syevd", "--sizes", "16", "24", "--reps", "3", "--output", str(path),
                  "--figure", str(fig), "--threads", "2")
    assert code == 0
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(recs) == 8
    fields = {"op", "phase", "n", "precision", "repetitions", "mean_seconds", "seconds_per_n3", "threads", "backend"}
    for r in recs:
        assert fields <= set(r)
        assert r["repetitions"] == 3 and r["threads"] == 2 and r["mean_seconds"] > 0
        np.testing.assert_allclose(r["seconds_per_n3"], r["mean_seconds"] / r["n"] ** 3, rtol=1e-12)
    assert {(r["op"], r["phase"]) for r in recs} == {(o, p) for o in ("potrf", "syevd") for p in ("forward", "backward")}
    assert fig.stat().st_size > 0


def test_bench_default_reps():
    assert cli.build_parser().parse_args(["bench"]).reps == 10


def test_fit_gp(tmp_path, toy_csv):
    trace, params, fig = tmp_path / "t.csv", tmp_path / "p.json", tmp_path / "f.png"
    code, out = run("fit", "gp", "--data", str(toy_csv), "--steps", "40", "--lr", "0.05", "--trace", str(trace),
                    "--params", str(params), "--figure", str(fig))
    assert code == 0
    rows = list(csv.reader(open(trace)))
    assert rows[0] == ["step", "criterion"] and len(rows) == 42
    losses = [float(r[1]) for r in rows[1:]]
    summary = json.load(open(params))
    assert losses[-1] < losses[0]
    assert summary["final"] == losses[-1] and set(summary["hypers"]) == {"lengthscale", "amplitude", "noise"}
    assert fig.stat().st_size > 0
    assert out.startswith("initial=")


def test_fit_is_deterministic(tmp_path, toy_csv):
    outs = []
    for k in range(2):
        p = tmp_path / f"p{k}.json"
        run("fit", "sgp", "--data", str(toy_csv), "--steps", "5", "--inducing", "4", "--seed", "9",
            "--trace", str(tmp_path / f"t{k}.csv"), "--params", str(p))
        outs.append(p.read_text())
    assert outs[0] == outs[1]
    summary = json.loads(outs[0])
    assert np.shape(summary["params"]["inducing"]) == (4, 1)
    assert summary["final"] >= summary["gp_criterion_at_fit"] - 1e-9


@pytest.mark.parametrize("model,extra", [("blr", ["--path", "cholesky"]), ("kalman", ["--hidden", "1"])])
def test_fit_other_models(tmp_path, toy_csv, model, extra):
    code, _ = run("fit", model, "--data", str(toy_csv), "--steps", "3", "--trace", str(tmp_path / "t.csv"),
                  "--params", str(tmp_path / "p.json"), *extra)
    assert code == 0
    summary = json.load(open(tmp_path / "p.json"))
    assert summary["model"] == model


def test_fit_missing_file(tmp_path):
    assert run("fit", "gp", "--data", str(tmp_path / "absent.csv"))[0] == cli.EXIT_USAGE


def test_fit_malformed_csv(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1,2\n3\n")
    assert run("fit", "gp", "--data", str(path), "--trace", str(tmp_path / "t.csv"),
               "--params", str(tmp_path / "p.json"))[0] == cli.EXIT_USAGE
    assert "line 3" in capsys.readouterr().err


def test_fit_inducing_out_of_range(tmp_path, toy_csv):
    assert run("fit", "sgp", "--data", str(toy_csv), "--inducing", "31", "--trace", str(tmp_path / "t.csv"),
               "--params", str(tmp_path / "p.json"))[0] == cli.EXIT_USAGE


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "difflinalg.cli", "gradcheck", "--ops", "trsm", "--shapes", "2",
                          "--trials", "1"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.count("PASS trsm") == 8
