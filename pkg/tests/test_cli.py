import pytest
import yaml

from gmwb.cli import DEFAULTS, main, read_csv


def _cfg(tmp_path, **blocks):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(blocks))
    return str(path)


def test_missing_config(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert main(["price", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_grid_condition_exit(tmp_path, capsys):
    cfg = _cfg(tmp_path, grid={"r_min": -5.0})
    assert main(["kernel-diag", "--config", cfg]) == 3
    assert "1 + dtau*r_min > 0" in capsys.readouterr().err


def test_bad_config_value(tmp_path):
    assert main(["kernel-diag", "--config", _cfg(tmp_path, model={"sigma_z": -1.0})]) == 2
    assert main(["kernel-diag", "--config", _cfg(tmp_path, schema_version=99)]) == 2


def test_fee_tol_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["fee", "--tol", "0"])
    assert e.value.code == 2


def test_fee_bracket_exit(tmp_path):
    cfg = _cfg(tmp_path, run={"bracket": [0.15, 0.2]})
    assert main(["fee", "--config", cfg, "--level", "0"]) == 4


def test_mc_without_controls(tmp_path):
    cfg = _cfg(tmp_path, run={"store_controls": False})
    assert main(["mc-validate", "--config", cfg, "--level", "0", "--paths", "200"]) == 5


def test_kernel_diag_deterministic(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"k{i}.csv"
        assert main(["kernel-diag", "--level", "0", "--out", str(out)]) == 0
        echo, rows = read_csv(out)
        assert len(rows) == 1
        outs.append(rows[0])
    assert outs[0]["alpha_eps"] == outs[1]["alpha_eps"]
    assert outs[0]["defect"] == outs[1]["defect"]
    assert float(outs[0]["defect"]) <= float(outs[0]["defect_bound"])
    assert echo["schema_version"] == DEFAULTS["schema_version"]


def test_price_roundtrip(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["price", "--level", "0", "--out", str(out)]) == 0
    echo, rows = read_csv(out)
    assert echo["grid"]["level"] == 0
    assert echo["model"]["jump"] == "merton"
    assert float(rows[0]["price"]) == pytest.approx(113.883, abs=2e-3)


def test_controls_csv(tmp_path):
    sol = tmp_path / "s.npz"
    cfg = _cfg(tmp_path, run={"store_controls": True, "save_solution": str(sol)})
    assert main(["price", "--config", cfg, "--level", "0", "--out", str(tmp_path / "p.csv")]) == 0
    out = tmp_path / "c.csv"
    assert main(["controls", "--config", cfg, "--level", "0", "--solution", str(sol),
                 "--t", "2.5", "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert set(rows[0]) == {"z", "a", "gamma_star", "branch"}
    assert {r["branch"] for r in rows} <= {"none", "continuous", "finite"}
    out = tmp_path / "m.csv"
    assert main(["mc-validate", "--config", cfg, "--level", "0", "--solution", str(sol),
                 "--paths", "2048", "--seed", "7", "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert int(rows[0]["n_paths"]) == 2048 and rows[0]["seed"] == "7"
    assert float(rows[0]["ci_low"]) <= float(rows[0]["mc_mean"]) <= float(rows[0]["ci_high"])
