import json

import numpy as np
import pytest

from pra_toolkit import load_panel, read_sidecar
from pra_toolkit.cli import main
from pra_toolkit.pipeline import read_csv_columns


@pytest.fixture(scope="module")
def panel_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "panel.csv"
    assert main(["synth", "--n", "10", "--t", "600", "--rho0", "0.3", "--g-minus", "-1",
                 "--seed", "4", "--out", str(path)]) == 0
    return path


def test_synth(panel_csv):
    p = load_panel(panel_csv)
    assert p.returns.shape == (10, 600)


def test_leverage(panel_csv, tmp_path):
    out, binned = tmp_path / "lev.csv", tmp_path / "bin.csv"
    assert main(["leverage", "--input", str(panel_csv), "--tau-max", "20", "--out", str(out),
                 "--binned-out", str(binned)]) == 0
    assert read_csv_columns(out)["tau"] == list(range(1, 21))
    cols = read_csv_columns(binned)
    assert sorted(set(cols["series"])) == ["I2", "rho", "sigma2"]


def test_leverage_average(panel_csv, tmp_path):
    out = tmp_path / "avg.csv"
    single = tmp_path / "one.csv"
    assert main(["leverage", "--input", str(panel_csv), str(panel_csv), "--average",
                 "--tau-max", "5", "--out", str(out)]) == 0
    main(["leverage", "--input", str(panel_csv), "--tau-max", "5", "--out", str(single)])
    np.testing.assert_allclose(read_csv_columns(out)["L_I"], read_csv_columns(single)["L_I"],
                               rtol=1e-12)
    assert main(["leverage", "--input", str(panel_csv), str(panel_csv), "--out", str(out)]) == 2


def test_pra_with_sidecar(panel_csv, tmp_path):
    out, side = tmp_path / "pra.json", tmp_path / "D.bin"
    assert main(["pra", "--input", str(panel_csv), "--tau", "1:5", "--split-sign", "--out", str(out),
                 "--sidecar", str(side)]) == 0
    doc = json.loads(out.read_text())
    assert doc["lags"] == [1, 2, 3, 4, 5] and len(doc["records"]) == 5
    s = read_sidecar(side)
    assert s.matrices.shape == (5, 10, 10)
    np.testing.assert_allclose(np.linalg.eigvalsh(s.matrices[0])[0], doc["records"][0]["mu_1"],
                               rtol=1e-9)


def test_null(panel_csv, tmp_path):
    out = tmp_path / "null.json"
    assert main(["null", "--input", str(panel_csv), "--samples", "50", "--seed", "1", "--out",
                 str(out)]) == 0
    assert json.loads(out.read_text())["n_samples"] == 50
    assert main(["null", "--input", str(panel_csv), "--samples", "50", "--xi", "pos-part",
                 "--sign-split", "--out", str(out)]) == 0
    assert main(["null", "--input", str(panel_csv), "--samples", "50", "--xi", "permute",
                 "--out", str(out)]) == 0


def test_rmt(tmp_path):
    out = tmp_path / "rmt.csv"
    assert main(["rmt", "--q", "0.1", "--mu-range=-3:3:200", "--out", str(out)]) == 0
    cols = read_csv_columns(out)
    assert len(cols["mu"]) == 200 and np.all(np.array(cols["density"]) >= 0)


def test_fit(tmp_path):
    tau = np.arange(1, 101)
    y = 0.5 * np.exp(-tau / 5) + 0.3 * np.exp(-tau / 60) + 0.1
    (tmp_path / "c.csv").write_text("tau,mu\n" + "".join(f"{t},{float(v)!r}\n" for t, v in zip(tau, y)))
    out = tmp_path / "fit.json"
    assert main(["fit", "--in", str(tmp_path / "c.csv"), "--pin-asymptote", "0.1", "--out",
                 str(out)]) == 0
    res = json.loads(out.read_text())
    assert abs(res["theta1"] - 5) < 1e-4 and abs(res["theta2"] - 60) < 1e-3
    assert main(["fit", "--in", str(tmp_path / "c.csv"), "--column", "nope", "--out", str(out)]) == 2


def _config(tmp_path, name, **extra):
    body = {"synth_n_stocks": 10, "synth_n_days": 500, "lags": '"1:12"', "fit_range": '"1:12"',
            "null_samples": 100, "null_level": 0.05, "out_dir": f'"{name}"', **extra}
    path = tmp_path / f"{name}.toml"
    path.write_text("".join(f"{k} = {v}\n" for k, v in body.items()))
    return path


def test_run_and_compare(tmp_path, capsys):
    a, b = _config(tmp_path, "a"), _config(tmp_path, "b", conditioning='"raw"')
    assert main(["run", "--config", str(a), "--dry-run"]) == 0
    assert not (tmp_path / "a").exists()
    assert "config ok" in capsys.readouterr().out
    assert main(["run", "--config", str(a)]) == 0
    assert main(["run", "--config", str(b)]) == 0
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "a"), "--tol", "0"]) == 0
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 0
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b"), "--tol", "1e-12"]) == 1


def test_errors_exit_2(tmp_path, capsys):
    bad = _config(tmp_path, "bad", lags='"1:900"')
    assert main(["run", "--config", str(bad), "--dry-run"]) == 2
    assert main(["leverage", "--input", str(tmp_path / "missing.csv"), "--out", "x.csv"]) == 2
    assert main(["rmt", "--q", "1.5", "--out", str(tmp_path / "r.csv")]) == 2
    assert "error:" in capsys.readouterr().err


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["rmt", "--q", "0.1", "--mu-range", "bad", "--out", "x"])
    assert exc.value.code == 2
