import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtlsi import (DimensionMismatch, MissingFile, MtlConfig, MultiTaskDataset, NonNumericCell,
                   RandomizationSpec, ShapeMismatch, infer_mtl, naive_inference, run_mtl_selection)
from mtlsi.cli import main
from mtlsi.inference import z_intervals
from mtlsi.io import (RunManifest, file_digest, load_multitask_csv, outcome_from_dict,
                      outcome_to_dict, read_intervals_csv, read_outcome, read_result,
                      write_intervals_csv, write_outcome, write_result)
from mtlsi.report import jaccard, project_to_original, report_cv, report_jaccard

from conftest import make_dataset


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_task(tmp_path, k, X, y):
    xp = write_csv(tmp_path / f"x{k}.csv", [f"f{j}" for j in range(X.shape[1])], X.tolist())
    yp = write_csv(tmp_path / f"y{k}.csv", ["y"], [[v] for v in y])
    return xp, yp


def write_dataset(tmp_path, ds):
    paths = [write_task(tmp_path, k, t.X, t.y) for k, t in enumerate(ds.tasks)]
    return [p[0] for p in paths], [p[1] for p in paths]


# ---------------------------------------------------------------------------
# CSV loading

def test_load_two_tasks(tmp_path):
    rng = np.random.default_rng(0)
    xs, ys = zip(*(write_task(tmp_path, k, rng.normal(size=(6, 3)), rng.normal(size=6)) for k in range(2)))
    ds, info = load_multitask_csv(xs, ys)
    assert ds.K == 2 and ds.p == 3
    assert info["features"] == ["f0", "f1", "f2"]
    for t in ds.tasks:
        np.testing.assert_allclose(t.X.mean(axis=0), 0.0, atol=1e-12)


def test_load_row_mismatch(tmp_path):
    rng = np.random.default_rng(1)
    xp = write_csv(tmp_path / "x.csv", ["a", "b"], rng.normal(size=(5, 2)).tolist())
    yp = write_csv(tmp_path / "y.csv", ["y"], [[1.0]] * 4)
    with pytest.raises(ShapeMismatch):
        load_multitask_csv([xp], [yp])


def test_load_header_only(tmp_path):
    xp = write_csv(tmp_path / "x.csv", ["a", "b"], [])
    yp = write_csv(tmp_path / "y.csv", ["y"], [])
    with pytest.raises(ShapeMismatch, match="n_k = 0"):
        load_multitask_csv([xp], [yp])


def test_load_non_numeric_cell_reports_location(tmp_path):
    xp = write_csv(tmp_path / "x.csv", ["a", "b"], [[1, 2], [3, "oops"], [5, 6]])
    yp = write_csv(tmp_path / "y.csv", ["y"], [[1], [2], [3]])
    with pytest.raises(NonNumericCell) as info:
        load_multitask_csv([xp], [yp])
    assert info.value.row == 3 and info.value.column == "b"


def test_load_missing_file(tmp_path):
    xp = write_csv(tmp_path / "x.csv", ["a"], [[1], [2]])
    with pytest.raises(MissingFile):
        load_multitask_csv([xp], [tmp_path / "absent.csv"])


def test_load_standardized_response(tmp_path):
    xp, yp = write_task(tmp_path, 0, np.arange(8.0).reshape(4, 2) ** 2, [3.0, 5.0, 9.0, 1.0])
    ds, info = load_multitask_csv([xp], [yp], standardize_response=True)
    assert np.std(ds.tasks[0].y, ddof=1) == pytest.approx(1.0)
    assert info["response_shift"] == [4.5]


# ---------------------------------------------------------------------------
# round trips

def test_outcome_round_trip_is_exact(tmp_path, small_selection):
    ds, out, _ = small_selection
    write_outcome(out, tmp_path / "o.json")
    back = read_outcome(tmp_path / "o.json")
    assert outcome_to_dict(back) == outcome_to_dict(out)
    for a, b in zip(out.tasks, back.tasks):
        np.testing.assert_array_equal(a.omega, b.omega)
        np.testing.assert_array_equal(a.weights, b.weights)


def test_result_and_interval_round_trip_is_exact(tmp_path, small_selection):
    ds, out, _ = small_selection
    res = infer_mtl(ds, out)
    write_result(res, tmp_path / "r.json")
    back = read_result(tmp_path / "r.json")
    assert back.labels == res.labels
    np.testing.assert_array_equal(back.mle, res.mle)
    np.testing.assert_array_equal(back.inv_info, res.inv_info)
    iv = res.intervals(0.1)
    write_intervals_csv(iv, tmp_path / "i.csv")
    again = read_intervals_csv(tmp_path / "i.csv")
    assert again.labels == iv.labels and again.method == iv.method and again.alpha == iv.alpha
    for name in ("estimate", "stderr", "lower", "upper"):
        np.testing.assert_array_equal(getattr(again, name), getattr(iv, name))


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=6))
def test_interval_csv_round_trip_property(tmp_path_factory, values):
    est = np.array(values)
    iv = z_intervals([(0, j) for j in range(est.size)], est, np.abs(est) + 0.5, 0.05, "m")
    path = tmp_path_factory.mktemp("iv") / "i.csv"
    write_intervals_csv(iv, path)
    back = read_intervals_csv(path)
    np.testing.assert_array_equal(back.estimate, iv.estimate)
    np.testing.assert_array_equal(back.upper, iv.upper)


def test_manifest_records_digests(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("hello\n")
    m = RunManifest(command="select", config={"lam": 1.0}, seeds={"seed": 3}, version="x")
    m.add_inputs([f])
    m.write(tmp_path / "m.json")
    back = RunManifest.read(tmp_path / "m.json")
    assert back.inputs[str(f)] == file_digest(f)
    assert back.config == {"lam": 1.0} and back.finished


def test_outcome_dict_is_json_serializable(small_selection):
    _, out, _ = small_selection
    assert outcome_from_dict(json.loads(json.dumps(outcome_to_dict(out)))).q == out.q


# ---------------------------------------------------------------------------
# reporting

@pytest.mark.parametrize("a, b, expected", [
    ({1, 2, 3}, {1, 2, 3}, 1.0),
    ({1, 2}, {3, 4}, 0.0),
    ({1, 2, 3}, {2, 3, 4}, 0.5),
    (set(), set(), 0.0),
])
def test_jaccard_examples(a, b, expected):
    assert jaccard(a, b) == expected


def test_jaccard_matrix_symmetric_with_unit_diagonal():
    J = report_jaccard([{1, 2}, {2, 3}, set()])
    np.testing.assert_array_equal(J, J.T)
    np.testing.assert_array_equal(np.diag(J), [1.0, 1.0, 0.0])
    assert J[0, 1] == pytest.approx(1 / 3)


def test_cv_examples():
    np.testing.assert_array_equal(report_cv([1.0, 0.0], np.diag([0.25, 1.0])), [0.5, np.inf])
    np.testing.assert_array_equal(report_cv([-2.0], [0.5]), [0.25])
    with pytest.raises(DimensionMismatch):
        report_cv([1.0, 2.0], [0.1])


@pytest.mark.parametrize("c", [0.01, 3.0, 250.0])
def test_naive_cv_invariant_to_response_scale(c):
    ds, _ = make_dataset(4, K=2)
    E = [np.array([0, 1]), np.array([0, 2])]
    # noise level unknown: the plug-in estimate scales with the response
    base = naive_inference(MultiTaskDataset.from_arrays([t.X for t in ds.tasks], [t.y for t in ds.tasks]), E)
    scaled = MultiTaskDataset.from_arrays([t.X for t in ds.tasks], [c * t.y for t in ds.tasks])
    other = naive_inference(scaled, E)
    np.testing.assert_allclose(report_cv(other.estimate, other.stderr),
                               report_cv(base.estimate, base.stderr), rtol=1e-9)


def test_back_projection_identity_columns_and_zero():
    A = np.eye(5)[:, [1, 3]]
    np.testing.assert_array_equal(project_to_original(A, [2.0, -1.0]), [0, 2.0, 0, -1.0, 0])
    np.testing.assert_array_equal(project_to_original(A, [0.0, 0.0]), np.zeros(5))
    with pytest.raises(DimensionMismatch):
        project_to_original(A, [1.0])


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_back_projection_orthonormal_is_isometry(seed, q):
    rng = np.random.default_rng(seed)
    A, _ = np.linalg.qr(rng.normal(size=(6, q)))
    theta = rng.normal(size=q)
    assert np.linalg.norm(project_to_original(A, theta)) == pytest.approx(np.linalg.norm(theta))


# ---------------------------------------------------------------------------
# command line

def test_select_infer_report_pipeline(tmp_path, capsys):
    ds, _ = make_dataset(2, K=2)
    xs, ys = write_dataset(tmp_path, ds)
    args = ["--x", *map(str, xs), "--y", *map(str, ys), "--sigma", "1.0"]
    sel = tmp_path / "sel"
    assert main(["select", *args, "--lambda", "1.0", "--seed", "3", "--out-dir", str(sel)]) == 0
    assert (sel / "outcome.json").is_file() and (sel / "manifest.json").is_file()
    inf = tmp_path / "inf"
    assert main(["infer", *args, "--outcome", str(sel / "outcome.json"), "--out-dir", str(inf)]) == 0
    iv = read_intervals_csv(inf / "intervals.csv")
    assert len(iv) == read_outcome(sel / "outcome.json").q
    assert (inf / "result.json").is_file()
    rep = tmp_path / "rep"
    assert main(["report", "--intervals", str(inf / "intervals.csv"), "--result",
                 str(inf / "result.json"), "--out-dir", str(rep)]) == 0
    assert (rep / "jaccard.csv").is_file() and (rep / "cv.csv").is_file()
    manifest = RunManifest.read(inf / "manifest.json")
    assert manifest.command == "infer" and str(xs[0]) in manifest.inputs


def test_select_matches_library(tmp_path):
    ds, _ = make_dataset(2, K=2)
    xs, ys = write_dataset(tmp_path, ds)
    main(["select", "--x", *map(str, xs), "--y", *map(str, ys), "--sigma", "1.0", "--lambda", "1.0",
          "--seed", "3", "--out-dir", str(tmp_path)])
    loaded, _ = load_multitask_csv(xs, ys, 1.0)
    ref = run_mtl_selection(loaded, RandomizationSpec(1.0, 3), MtlConfig(lam=1.0))
    got = read_outcome(tmp_path / "outcome.json")
    for a, b in zip(got.active_sets, ref.active_sets):
        np.testing.assert_array_equal(a, b)


def test_infer_on_empty_selection(tmp_path):
    ds, _ = make_dataset(0, K=2, scale=0.0)
    xs, ys = write_dataset(tmp_path, ds)
    args = ["--x", *map(str, xs), "--y", *map(str, ys), "--sigma", "1.0"]
    assert main(["select", *args, "--lambda", "100", "--out-dir", str(tmp_path)]) == 0
    assert read_outcome(tmp_path / "outcome.json").q == 0
    assert main(["infer", *args, "--outcome", str(tmp_path / "outcome.json"),
                 "--out-dir", str(tmp_path)]) == 0
    text = (tmp_path / "intervals.csv").read_text()
    assert text.strip() == "task,feature,estimate,lower,upper,stderr,method,alpha"


def test_select_missing_y_exits_3(tmp_path, capsys):
    xp = write_csv(tmp_path / "x.csv", ["a"], [[1.0], [2.0], [4.0]])
    code = main(["select", "--x", str(xp), "--y", str(tmp_path / "nope.csv"), "--lambda", "1",
                 "--out-dir", str(tmp_path)])
    assert code == 3
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "MissingFile" and record["exit_code"] == 3
    assert json.loads((tmp_path / "error.json").read_text()) == record


@pytest.mark.parametrize("argv", [[], ["bogus"], ["select", "--lambda", "1"],
                                  ["simulate", "--reps", "not-a-number"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_select_without_lambda_is_usage_error(tmp_path):
    ds, _ = make_dataset(0, K=1)
    xs, ys = write_dataset(tmp_path, ds)
    assert main(["select", "--x", str(xs[0]), "--y", str(ys[0]), "--out-dir", str(tmp_path)]) == 2


def test_numerical_failure_exits_4(tmp_path):
    ds, _ = make_dataset(0, K=1)
    xs, ys = write_dataset(tmp_path, ds)
    # a tampered randomization no longer satisfies the optimality conditions
    main(["select", "--x", str(xs[0]), "--y", str(ys[0]), "--lambda", "0.5", "--out-dir", str(tmp_path)])
    d = json.loads((tmp_path / "outcome.json").read_text())
    d["tasks"][0]["omega"] = [w + 5.0 for w in d["tasks"][0]["omega"]]
    (tmp_path / "outcome.json").write_text(json.dumps(d))
    code = main(["infer", "--x", str(xs[0]), "--y", str(ys[0]), "--outcome",
                 str(tmp_path / "outcome.json"), "--out-dir", str(tmp_path)])
    assert code == 4


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("n = 40\np = 6\nK = 2\nn_reps = 2\nlam = 1.0\nseed = 1\nmethods = [\"naive\"]\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--seed", "9", "--out-dir", str(out)]) == 0
    m = RunManifest.read(out / "manifest.json")
    assert m.config["seed"] == 9 and m.config["n"] == 40 and m.seeds == {"seed": 9}
    assert str(cfg) in m.inputs
    bad = tmp_path / "bad.toml"
    bad.write_text("[table]\nn = 3\n")
    assert main(["simulate", "--config", str(bad), "--out-dir", str(out)]) == 2
    unknown = tmp_path / "unknown.toml"
    unknown.write_text("colour = 3\n")
    assert main(["simulate", "--config", str(unknown), "--out-dir", str(out)]) == 2


def test_simulate_twice_gives_identical_digests(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("n = 40\np = 8\nK = 2\nn_reps = 2\nn_tune = 1\ngrid_size = 3\n")
    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["simulate", "--config", str(cfg), "--seed", "7", "--out-dir", str(out)]) == 0
        digests.append([file_digest(out / name) for name in ("metrics.csv", "tuning.csv")])
    assert digests[0] == digests[1]


def test_tune_writes_path_table(tmp_path):
    ds, _ = make_dataset(3, K=2, n=80)
    xs, ys = write_dataset(tmp_path, ds)
    val, _ = make_dataset(4, K=2, n=80)
    vdir = tmp_path / "val"
    vdir.mkdir()
    vxs, vys = write_dataset(vdir, val)
    code = main(["tune", "--x", *map(str, xs), "--y", *map(str, ys), "--val-x", *map(str, vxs),
                 "--val-y", *map(str, vys), "--lambda", "0.5", "1.0", "2.0", "--out-dir", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "tuning.csv").read_text().strip().splitlines()
    assert lines[0] == "lam,val_mse,chosen" and len(lines) == 4
    assert sum(int(l.split(",")[2]) for l in lines[1:]) == 1
