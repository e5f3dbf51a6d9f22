import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from treelets.cli import main
from treelets.engine import TreeletModel, basis
from treelets.exceptions import InsufficientDataError, NonFiniteInputError, TreeletError
from treelets.io import LabeledData, atomic_write_text, matrix_csv, read_csv, write_csv


def _write(path, text):
    path.write_text(text)
    return str(path)


# -- read_csv ----------------------------------------------------------------

def test_read_plain_table(tmp_path):
    X = read_csv(_write(tmp_path / "a.csv", "1,2\n3,4\n5,6\n"))
    assert X.shape == (3, 2) and X[2, 1] == 6.0


def test_read_header_and_label(tmp_path):
    f = _write(tmp_path / "a.csv", "g1,g2,class\n1,2,tumor\n3,4,normal\n5,6,tumor\n")
    d = read_csv(f, header=True, target="label")
    assert isinstance(d, LabeledData)
    assert d.header == ["g1", "g2", "class"]
    assert d.X.shape == (3, 2) and d.classes.tolist() == ["normal", "tumor"]


def test_read_integer_labels_and_response(tmp_path):
    f = _write(tmp_path / "a.csv", "1,2,0\n3,4,1\n")
    assert read_csv(f, target="label").target.tolist() == [0, 1]
    assert read_csv(f, target="response").target.dtype == np.float64


def test_header_auto_detect(tmp_path):
    assert read_csv(_write(tmp_path / "a.csv", "x,y\n1,2\n"), header="auto").shape == (1, 2)
    assert read_csv(_write(tmp_path / "b.csv", "1,2\n3,4\n"), header="auto").shape == (2, 2)


@settings(max_examples=40)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 4)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_csv_roundtrip_exact(tmp_path_factory, A):
    path = tmp_path_factory.mktemp("rt") / "m.csv"
    write_csv(path, A)
    assert np.array_equal(read_csv(path), A)


@pytest.mark.parametrize("text, exc, where", [
    ("1,2\n3\n", TreeletError, "row 2"),
    ("", InsufficientDataError, "no data"),
    ("1,nan\n", NonFiniteInputError, "row 1, column 2"),
    ("1,2\n3,inf\n", NonFiniteInputError, "row 2, column 2"),
    ("1,2\n3,abc\n", TreeletError, "row 2, column 2"),
])
def test_read_errors_with_location(tmp_path, text, exc, where):
    with pytest.raises(exc, match=where):
        read_csv(_write(tmp_path / "bad.csv", text))


def test_atomic_write_leaves_old_file_on_failure(tmp_path):
    p = tmp_path / "out.txt"
    p.write_text("old")

    class Boom:
        def __str__(self):
            raise RuntimeError

    with pytest.raises(TypeError):
        atomic_write_text(p, Boom())
    assert p.read_text() == "old"
    assert os.listdir(tmp_path) == ["out.txt"]


def test_matrix_csv_shortest_repr():
    assert matrix_csv([[0.1, 1.0]]) == "0.1,1.0\n"


# -- CLI ---------------------------------------------------------------------

@pytest.fixture
def data2(tmp_path, rng):
    X = rng.standard_normal((20, 2))
    X[:, 1] += X[:, 0]
    return _write(tmp_path / "x2.csv", matrix_csv(X))


def _err(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


def test_fit_full_two_columns(tmp_path, data2):
    out = str(tmp_path / "m.json")
    assert main(["fit", "--input", data2, "--out", out, "--full"]) == 0
    text = open(out).read()
    m = TreeletModel.from_json(text)
    assert m.height == 1
    assert m.to_json() == text
    man = json.load(open(out + ".manifest.json"))
    assert man["command"] == "fit" and man["result"] == {"L": 1}
    assert data2 in man["inputs"]


def test_fit_options(tmp_path, rng):
    X = rng.standard_normal((30, 5))
    f = _write(tmp_path / "x.csv", matrix_csv(X))
    out = str(tmp_path / "m.json")
    assert main(["fit", "--input", f, "--out", out, "--level", "2",
                 "--similarity", "corr+cov", "--lambda", "0.5", "--haar"]) == 0
    m = TreeletModel.from_json(open(out).read())
    assert m.height == 2 and np.allclose(m.thetas, np.pi / 4)


def test_level_full_conflict(tmp_path, data2, capsys):
    out = tmp_path / "m.json"
    assert main(["fit", "--input", data2, "--out", str(out), "--full", "--level", "1"]) == 2
    assert _err(capsys)["error"] == "usage"
    assert not out.exists()


def test_unknown_flag_and_missing_input(tmp_path, capsys):
    assert main(["fit", "--input", "x", "--out", "y", "--bogus"]) == 2
    assert _err(capsys)["error"] == "usage"
    out = tmp_path / "m.json"
    assert main(["fit", "--input", str(tmp_path / "nope.csv"), "--out", str(out)]) == 1
    assert _err(capsys)["error"] == "file-not-found"
    assert not out.exists()


def test_bad_data_no_partial_output(tmp_path, capsys):
    f = _write(tmp_path / "bad.csv", "1,2\n3,nan\n")
    out = tmp_path / "m.json"
    out.write_text("previous")
    assert main(["fit", "--input", f, "--out", str(out)]) == 1
    assert _err(capsys)["error"] == "non-finite-input"
    assert out.read_text() == "previous"
    assert sorted(os.listdir(tmp_path)) == ["bad.csv", "m.json"]


def test_transform_and_inverse(tmp_path, rng):
    X = rng.standard_normal((10, 4))
    f = _write(tmp_path / "x.csv", matrix_csv(X))
    m, c, r = (str(tmp_path / n) for n in ("m.json", "c.csv", "r.csv"))
    assert main(["fit", "--input", f, "--out", m]) == 0
    assert main(["transform", "--model", m, "--input", f, "--level", "2", "--out", c]) == 0
    assert main(["transform", "--model", m, "--input", c, "--level", "2", "--out", r, "--inverse"]) == 0
    model = TreeletModel.from_json(open(m).read())
    assert np.allclose(read_csv(c), X @ basis(model, 2), atol=1e-13)
    assert np.allclose(read_csv(r), X, atol=1e-13)
    assert os.path.exists(r + ".manifest.json")


def test_transform_level_out_of_range(tmp_path, data2, capsys):
    m = str(tmp_path / "m.json")
    main(["fit", "--input", data2, "--out", m])
    assert main(["transform", "--model", m, "--input", data2, "--level", "5",
                 "--out", str(tmp_path / "c.csv")]) == 1
    assert "error" in _err(capsys)


def test_synth_then_best_basis(tmp_path):
    d, r = str(tmp_path / "d.csv"), str(tmp_path / "r.csv")
    assert main(["synth", "example3", "--n", "100", "--seed", "1", "--out", d]) == 0
    assert read_csv(d).shape == (100, 500)
    assert main(["best-basis", "--input", d, "--k", "3", "--folds", "5", "--seed", "1", "--out", r]) == 0
    lines = open(r).read().splitlines()
    assert len(lines) == 1 + 500
    res = json.load(open(r + ".manifest.json"))["result"]
    assert 0 <= res["level"] <= 499 and 0 < res["knee"] < 499


def test_synth_block_and_errors(tmp_path, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"sizes": [2, 2], "within_var": [1.0, 2.0], "noise_var": 0.1}))
    out = str(tmp_path / "x.csv")
    assert main(["synth", "block", "--spec", str(spec), "--n", "7", "--seed", "3", "--out", out]) == 0
    assert read_csv(out).shape == (7, 4)
    assert main(["synth", "block", "--n", "7", "--seed", "3", "--out", out]) == 2
    assert _err(capsys)["error"] == "usage"
    assert main(["synth", "example1", "--spec", str(spec), "--n", "7", "--seed", "3", "--out", out]) == 2
    _err(capsys)


def test_bootstrap_command(tmp_path, rng):
    f = _write(tmp_path / "x.csv", matrix_csv(rng.standard_normal((30, 4))))
    out = str(tmp_path / "b.csv")
    assert main(["bootstrap", "--input", f, "--replicates", "20", "--alpha", "0.1",
                 "--level", "2", "--top-k", "2", "--seed", "4", "--out", out]) == 0
    assert open(out).readline().strip() == "treelet_rank,coordinate,lower,point,upper"
    man = json.load(open(out + ".manifest.json"))
    assert man["seed"] == 4 and 0 < man["result"]["accepted_count"] <= 20


def test_bench_convergence_and_grid_forms(tmp_path, capsys):
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert main(["bench", "convergence", "--p-grid", "20", "30", "--n-grid", "10,40",
                 "--reps", "3", "--seed", "1", "--out", a]) == 0
    assert main(["bench", "convergence", "--p-grid", "20,30", "--n-grid", "10", "40",
                 "--reps", "3", "--seed", "1", "--out", b]) == 0
    assert open(a).read() == open(b).read()
    assert len(open(a).read().splitlines()) == 5
    assert main(["bench", "convergence", "--n-grid", "10", "--reps", "3", "--seed", "1", "--out", a]) == 2
    _err(capsys)


def test_reruns_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        x, r = str(d / "x.csv"), str(d / "r.csv")
        main(["synth", "example2", "--n", "60", "--seed", "9", "--out", x])
        main(["bootstrap", "--input", x, "--replicates", "15", "--alpha", "0.2",
              "--level", "5", "--top-k", "3", "--seed", "2", "--out", r])
        outs.append([open(p, "rb").read() for p in (x, r, r + ".manifest.json")])
    assert outs[0][:2] == outs[1][:2]
    m0, m1 = (json.loads(o[2]) for o in outs)
    assert m0["output_sha256"] == m1["output_sha256"] and m0["result"] == m1["result"]


def test_threads_do_not_change_output(tmp_path):
    env = dict(os.environ)
    res = []
    for t in ("1", "4"):
        env["TREELET_THREADS"] = t
        out = str(tmp_path / f"c{t}.csv")
        subprocess.run([sys.executable, "-m", "treelets", "bench", "convergence", "--p-grid", "20",
                        "--n-grid", "15", "--reps", "6", "--seed", "5", "--out", out],
                       check=True, env=env)
        res.append(open(out).read())
    assert res[0] == res[1]


def test_module_entry_error_line(tmp_path):
    p = subprocess.run([sys.executable, "-m", "treelets", "fit", "--input",
                        str(tmp_path / "missing.csv"), "--out", str(tmp_path / "m.json")],
                       capture_output=True, text=True)
    assert p.returncode == 1
    assert p.stdout == ""
    err = json.loads(p.stderr.strip())
    assert set(err) == {"error", "message"}
