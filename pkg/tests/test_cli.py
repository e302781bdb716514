import contextlib
import csv
import io
import math
from pathlib import Path

import numpy as np
import pytest

import lurk_vecchia
from lurk_vecchia.cli import EXIT_DATA, EXIT_OK, cross_validate, main
from lurk_vecchia.estimate import EstimationConfig
from lurk_vecchia.io import read_dataset, read_fit_artifact

SAMPLE = Path(lurk_vecchia.__file__).parent / "data" / "sample.csv"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "small.csv"
    assert main(["simulate", "--dataset", str(p), "--n", "80", "--seed", "3"]) == EXIT_OK
    return p


@pytest.fixture(scope="module")
def sample_fit(tmp_path_factory):
    out = tmp_path_factory.mktemp("fit") / "sample"
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(["fit", "--data", str(SAMPLE), "--out", str(out)])
    return code, out, buf.getvalue()


def test_sample_fit_converges(sample_fit):
    code, out, text = sample_fit
    assert code == EXIT_OK
    assert "converged   true" in text
    art = read_fit_artifact(out)
    assert art.meta["converged"] == "true" and art.meta["method"] == "lurk-vecchia"
    assert len(art.names) == 123
    assert {p.name for p in out.iterdir()} == {"fit.txt", "beta.csv", "trace.csv", "train.csv",
                                               "timings.txt"}


def test_fit_rerun_is_byte_identical(small_csv, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["fit", "--data", str(small_csv), "--m", "8", "--seed", "2"]
    assert main(args + ["--out", str(a)]) == EXIT_OK
    assert main(args + ["--out", str(b)]) == EXIT_OK
    for name in ("fit.txt", "beta.csv", "trace.csv", "train.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_missing_column_exits_2(small_csv, tmp_path, capsys):
    r = rows(small_csv)
    drop = r[0].index("t_days")
    bad = tmp_path / "bad.csv"
    with open(bad, "w", newline="") as fh:
        csv.writer(fh).writerows([[c for j, c in enumerate(row) if j != drop] for row in r])
    assert main(["fit", "--data", str(bad)]) == EXIT_DATA
    assert "t_days" in capsys.readouterr().err
    assert main(["fit", "--data", str(small_csv), "--response", "pm25"]) == EXIT_DATA
    assert "pm25" in capsys.readouterr().err


def test_bad_arguments_exit_2(small_csv, tmp_path, capsys):
    assert main(["fit", "--data", str(small_csv), "--method", "ols"]) == EXIT_DATA
    assert main(["fit", "--data", str(tmp_path / "nope.csv")]) == EXIT_DATA
    cfg = tmp_path / "run.ini"
    cfg.write_text("[estimation]\nbogus = 1\n")
    assert main(["fit", "--data", str(small_csv), "--config", str(cfg)]) == EXIT_DATA
    assert "bogus" in capsys.readouterr().err


def test_config_file_and_override(small_csv, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[run]\ndata = {small_csv}\nmethod = lur-iid\n[estimation]\nm = 12\n")
    out = tmp_path / "fit"
    assert main(["fit", "--config", str(cfg), "--out", str(out), "--m", "7"]) == EXIT_OK
    art = read_fit_artifact(out)
    assert art.meta["method"] == "lur-iid"


@pytest.fixture(scope="module")
def small_fit(small_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit") / "small"
    assert main(["fit", "--data", str(small_csv), "--m", "8", "--out", str(out)]) == EXIT_OK
    return out


def test_predict_sd_envelope(small_csv, small_fit, tmp_path):
    out = tmp_path / "pred.csv"
    assert main(["predict", "--fit", str(small_fit), "--data", str(small_csv),
                 "--out", str(out)]) == EXIT_OK
    r = rows(out)
    assert r[0] == ["x_km", "y_km", "t_days", "mu", "sd", "sd_noisy"]
    vals = np.array(r[1:], float)
    assert vals.shape[0] == 80
    th = read_fit_artifact(small_fit).theta
    sd, sdn = vals[:, 4], vals[:, 5]
    assert np.all(np.isfinite(vals))
    assert np.all(sd <= th.sigma + th.tau) and np.all(sdn >= sd)
    np.testing.assert_allclose(sdn ** 2, sd ** 2 + th.tau2, rtol=1e-12)


def test_predict_empty_file(small_csv, small_fit, tmp_path):
    header = rows(small_csv)[0]
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(header) + "\n")
    out = tmp_path / "pred.csv"
    assert main(["predict", "--fit", str(small_fit), "--data", str(empty),
                 "--out", str(out)]) == EXIT_OK
    assert len(rows(out)) == 1


def test_predict_grid(small_csv, small_fit, tmp_path):
    out = tmp_path / "tmpl.csv"
    grid = "0,4000,0,2500,4,3,100"
    assert main(["predict", "--fit", str(small_fit), "--grid", grid, "--out", str(out)]) == EXIT_OK
    r = rows(out)
    assert len(r) == 13 and len(r[0]) == 3 + 123
    lk = tmp_path / "lk"
    assert main(["fit", "--data", str(small_csv), "--method", "local-kriging", "--m", "25",
                 "--out", str(lk)]) == EXIT_OK
    out2 = tmp_path / "grid.csv"
    assert main(["predict", "--fit", str(lk), "--grid", grid, "--out", str(out2)]) == EXIT_OK
    g = np.array(rows(out2)[1:], float)
    assert g.shape == (12, 6)
    assert len(np.unique(g[:, 0])) == 4 and len(np.unique(g[:, 1])) == 3
    assert np.all(g[:, 2] == 100)


def test_cross_validate_folds(small_csv):
    ds = read_dataset(small_csv)
    cfg = EstimationConfig(m=8, max_nm_evals=40, max_outer=2)
    a = cross_validate(ds, ["lur-iid", "lurk-vecchia"], cfg, folds=4, seed=5)
    b = cross_validate(ds, ["lur-iid", "lurk-vecchia"], cfg, folds=4, seed=5)
    assert a == b
    for method in ("lur-iid", "lurk-vecchia"):
        per = [r for r in a if r[0] == method and r[1] != "all"]
        agg = [r for r in a if r[0] == method and r[1] == "all"][0]
        n = np.array([r[2] for r in per], float)
        assert n.sum() == 80 == agg[2]
        for k in (3, 4, 5):
            assert agg[k] == pytest.approx(np.sum(n * [r[k] for r in per]) / n.sum())


def test_cv_command(small_csv, tmp_path):
    out = tmp_path / "cv.csv"
    assert main(["cv", "--data", str(small_csv), "--method", "lur-iid", "--folds", "3",
                 "--out", str(out)]) == EXIT_OK
    r = rows(out)
    assert r[0] == ["method", "fold", "n", "mse", "crps", "log_score"]
    assert [x[1] for x in r[1:]] == ["0", "1", "2", "all"]


def test_benchmark_schema(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["benchmark", "--sizes", "300", "--nm-evals", "2", "--out", str(out)]) == EXIT_OK
    r = rows(out)
    assert r[0] == ["n", "stage", "wall_ms"]
    assert {x[1] for x in r[1:]} >= {"fit_iteration"}
    assert all(float(x[2]) >= 0 for x in r[1:])
    out2 = tmp_path / "cmp.csv"
    assert main(["benchmark", "--sizes", "300", "--compare-backends", "--out", str(out2)]) == EXIT_OK
    r = rows(out2)
    assert r[0] == ["n", "kernel", "backend", "wall_ms"]
    assert {"python"} <= {x[2] for x in r[1:]}


def test_simulate_smoke(tmp_path, capsys):
    out = tmp_path / "study.csv"
    assert main(["simulate", "--n", "60", "--replicates", "1", "--scenarios", "baseline",
                 "--methods", "lur-iid", "--out", str(out)]) == EXIT_OK
    r = rows(out)
    assert r[0] == ["scenario_id", "method", "replicate", "metric", "value"]
    assert {x[3] for x in r[1:]} >= {"mse", "crps", "log_score", "kappa"}
    assert all(math.isfinite(float(x[4])) for x in r[1:] if x[3] == "mse")
    assert main(["simulate", "--scenarios", "nope"]) == EXIT_DATA
