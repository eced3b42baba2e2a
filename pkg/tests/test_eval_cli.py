import json

import numpy as np
import pytest

from slotvio.cli import EXIT_DATA, EXIT_METHOD, EXIT_OK, EXIT_USAGE, main
from slotvio.eval import EvalError, EvalReport, compare, load_report, rmse

T = np.arange(5.0)
TRUTH = (T, np.column_stack([T, np.zeros(5), np.zeros(5)]))


def test_rmse_examples():
    assert rmse(TRUTH, TRUTH) == 0.0
    assert rmse((T, TRUTH[1] + [0.1, 0, 0]), TRUTH) == pytest.approx(0.1)
    e = np.zeros((4, 3))
    e[0], e[1] = [0.3, 0, 0], [0, 0.4, 0]
    t4 = T[:4]
    assert rmse((t4, TRUTH[1][:4] + e), TRUTH) == pytest.approx(0.25)


def test_rmse_interpolates_truth():
    t = np.array([0.5, 2.25])
    assert rmse((t, np.column_stack([t, np.zeros(2), np.zeros(2)])), TRUTH) == pytest.approx(0.0, abs=1e-15)


def test_rmse_alignment_removes_rigid_offset():
    c, s = np.cos(0.3), np.sin(0.3)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    p = np.column_stack([T, np.sin(T), np.zeros(5)])
    moved = p @ R.T + [1, 2, 0]
    assert rmse((T, moved), (T, p)) > 1
    assert rmse((T, moved), (T, p), align=True) < 1e-12


def test_rmse_errors():
    with pytest.raises(EvalError):
        rmse((T + 100, TRUTH[1]), TRUTH)
    with pytest.raises(EvalError):
        rmse((np.zeros(0), np.zeros((0, 3))), TRUTH)


def report(dataset_id="round@121.62", method="full", seed=0, value=0.5, failed=False):
    return EvalReport(dataset_id, method, seed, None if failed else value, [value] * 3, value, 121.6, 10,
                      failed=failed)


def test_compare_single():
    cmp = compare([report()])
    assert cmp.rows == ["round"] and cmp.methods == ["full"] and cmp.cells[("round", "full")] == 0.5
    assert "0.500" in cmp.to_text()


def test_compare_mean_over_seeds_and_fail():
    reps = [report(seed=s, value=v) for s, v in enumerate((0.3, 0.6, 0.9))]
    reps += [report("left90@4.94", "full", 0, 0.1), report("left90@4.94", "hard_match_association", 0, failed=True),
             report("round@121.62", "hard_match_association", 0, 1.0)]
    cmp = compare(reps)
    assert cmp.cells[("round", "full")] == pytest.approx(0.6)
    assert cmp.counts[("round", "full")] == 3
    assert cmp.cells[("left90", "hard_match_association")] == "fail"
    assert cmp.column_means()["hard_match_association"] == pytest.approx(1.0)
    assert "fail" in cmp.to_text()
    assert json.dumps(cmp.to_dict())


def test_compare_errors():
    with pytest.raises(EvalError):
        compare([report("round@121.62"), report("round@100.00")])
    with pytest.raises(EvalError):
        compare([])


def test_report_schema_round_trip(tmp_path):
    r = report()
    (tmp_path / "report.json").write_text(r.to_json())
    assert load_report(tmp_path) == r
    d = r.to_dict()
    d["version"] = 99
    with pytest.raises(EvalError):
        EvalReport.from_dict(d)


# --- CLI -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def short_dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("ds") / "left45"
    assert main(["simulate", "--kind", "left45", "--seed", "1", "--out", str(d)]) == EXIT_OK
    return d


def test_cli_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["simulate", "--kind", "spiral", "--out", "x"]) == EXIT_USAGE
    assert main(["run", "--dataset", "x", "--out", "y", "--method", "vins_style", "--ps-backend", "on"]) == EXIT_USAGE
    assert main(["run", "--dataset", "x", "--out", "y", "--keyframes", "1"]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_cli_data_errors(tmp_path, short_dataset):
    assert main(["run", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["compare", str(tmp_path / "nothing.json")]) == EXIT_DATA
    bad = tmp_path / "odo.jsonl"
    bad.write_text('{"schema": "other", "version": 1}\n')
    assert main(["eval", "--dataset", str(short_dataset), "--odometry", str(bad)]) == EXIT_DATA


def test_cli_run_eval_compare(tmp_path, short_dataset, capsys):
    outs = []
    for method in ("full", "vins_style"):
        out = tmp_path / method
        assert main(["run", "--dataset", str(short_dataset), "--method", method, "--out", str(out)]) == EXIT_OK
        outs.append(out)
    rep = load_report(outs[0])
    assert rep.method == "full" and np.isfinite(rep.rmse) and not rep.failed
    capsys.readouterr()
    assert main(["eval", "--dataset", str(short_dataset), "--odometry", str(outs[0] / "odometry.jsonl")]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["rmse"] == pytest.approx(rep.rmse, rel=1e-9)
    assert main(["compare", *map(str, outs), "--out", str(tmp_path / "cmp")]) == EXIT_OK
    assert "vins_style" in (tmp_path / "cmp" / "compare.txt").read_text()
    assert (tmp_path / "cmp" / "plot_data.json").exists()


def test_cli_run_is_deterministic(tmp_path, short_dataset):
    for k in range(2):
        assert main(["run", "--dataset", str(short_dataset), "--seed", "3", "--out", str(tmp_path / str(k))]) == EXIT_OK
    assert (tmp_path / "0" / "report.json").read_bytes() == (tmp_path / "1" / "report.json").read_bytes()
    assert (tmp_path / "0" / "odometry.jsonl").read_bytes() == (tmp_path / "1" / "odometry.jsonl").read_bytes()


def test_cli_zero_noise_run(tmp_path):
    d = tmp_path / "zn"
    assert main(["simulate", "--kind", "right90", "--zero-noise", "--out", str(d)]) == EXIT_OK
    assert main(["run", "--dataset", str(d), "--out", str(tmp_path / "r")]) == EXIT_OK
    assert load_report(tmp_path / "r").rmse < 0.01


def test_cli_sweep(tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--kind", "straight0", "--methods", "full,ekf", "--seeds", "0",
                 "--keyframes-grid", "7", "--features-grid", "50", "--out", str(out)])
    assert code == EXIT_OK
    cmp = json.loads((out / "compare.json").read_text())
    assert set(cmp["methods"]) == {"full", "ekf"}
    assert main(["sweep", "--kind", "straight0", "--methods", "nope", "--out", str(out)]) == EXIT_USAGE


def test_cli_method_failure_exit_code(tmp_path, short_dataset, monkeypatch):
    import slotvio.cli as cli
    from slotvio.pipeline import OdometryResult

    def broken(cfg, log, traj):
        return OdometryResult(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)), failed=True, failure="SolverError")

    monkeypatch.setattr(cli, "estimate", broken)
    assert main(["run", "--dataset", str(short_dataset), "--out", str(tmp_path / "f")]) == EXIT_METHOD
    rep = load_report(tmp_path / "f")
    assert rep.failed and rep.failure == "SolverError"
