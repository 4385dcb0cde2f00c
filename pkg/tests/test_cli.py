import json
import math
import subprocess
import sys

import pytest

from mixest.cli import main, read_config_file
from mixest.densities import GaussianLoc, sample
from mixest.measures import MixingMeasure

FAST = ["--starts", "3", "--grid-points", "513", "--m-max", "3"]


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    G = MixingMeasure([[-2.0], [2.0]], [0.5, 0.5])
    x = sample(G, GaussianLoc(), 300, 2).observations
    path = tmp_path_factory.mktemp("cli") / "data.txt"
    path.write_text("\n".join(repr(float(v)) for v in x) + "\n")
    return path


def test_fit_writes_json(data_file, tmp_path, capsys):
    code = main(["fit", "--algo", "1", "--family", "gaussian-loc", "--sigma1", "1", "--sigma0", "1",
                 "--cn", "bic", *FAST, "--out", str(tmp_path), str(data_file)])
    assert code == 0
    d = json.loads((tmp_path / "fit_result.json").read_text())
    assert d["m_hat"] == 2 and d["cap_hit"] is False
    assert d["config"]["family"] == "gaussian-loc"
    assert "m_hat = 2" in capsys.readouterr().out


@pytest.mark.parametrize("algo", ["2", "ws"])
def test_fit_other_algorithms(data_file, tmp_path, algo):
    code = main(["fit", "--algo", algo, "--family", "gaussian-loc", "--eps", "0.5", *FAST,
                 "--out", str(tmp_path), str(data_file)])
    assert code == 0
    d = json.loads((tmp_path / "fit_result.json").read_text())
    assert d["rule"] == {"2": "algorithm2", "ws": "ws"}[algo]


def test_missing_file(tmp_path, capsys):
    missing = tmp_path / "absent.txt"
    assert main(["fit", str(missing)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_sigma0_zero(data_file, capsys):
    assert main(["fit", "--sigma0", "0", str(data_file)]) == 1
    assert "sigma0 must be positive" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["bogus"], ["fit"], ["fit", "--cn", "often", "x"],
                                  ["fit", "--family", "weibull", "x"], ["distance", "l7", "a", "b"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("mixest")


def test_bad_data_line(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("1.0\nabc\n")
    assert main(["fit", str(bad)]) == 1


def test_numeric_failure_exit_code(data_file, tmp_path, monkeypatch):
    import mixest.cli as cli
    from mixest.selection import SelectionError

    def boom(*a, **k):
        raise SelectionError("fit at m=2 failed")

    monkeypatch.setattr(cli, "algorithm1", boom)
    assert main(["fit", "--out", str(tmp_path), str(data_file)]) == 2


def test_unknown_case(capsys):
    assert main(["simulate", "--case", "9.9"]) == 1
    assert "9.9" in capsys.readouterr().err


def test_slc_without_file(capsys):
    assert main(["slc"]) == 1
    assert main(["slc", "/nonexistent/slc.txt"]) == 1


def test_slc_wrong_length(data_file):
    assert main(["slc", str(data_file)]) == 1


def _simulate(out):
    return main(["simulate", "--case", "4.1", "--preset", "smoke", "--reps", "2", "--seed", "7",
                 "--jobs", "1", "--out", str(out)])


def test_simulate_deterministic(tmp_path, capsys):
    assert _simulate(tmp_path) == 0
    names = ["case_4.1_rows.csv", "case_4.1_summary.json", "case_4.1_plot.csv"]
    first = {n: (tmp_path / n).read_bytes() for n in names}
    assert "slope =" in capsys.readouterr().out
    assert _simulate(tmp_path) == 0
    assert {n: (tmp_path / n).read_bytes() for n in names} == first
    rows = first["case_4.1_rows.csv"].decode().splitlines()
    assert rows[0] == "case,n,rep,m_hat,w1" and len(rows) == 1 + 3 * 2
    assert not list(tmp_path.glob(".*"))


def test_config_file(data_file, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nfamily = gaussian-loc\ncn = 1e6\nm-max = 3\nstarts = 2\ngrid_points = 513\n")
    assert read_config_file(cfg)["m_max"] == "3"
    out = tmp_path / "o1"
    assert main(["--config", str(cfg), "fit", "--out", str(out), str(data_file)]) == 0
    d = json.loads((out / "fit_result.json").read_text())
    assert d["m_hat"] == 1 and d["config"]["starts"] == 2
    # an explicit flag beats the file
    out2 = tmp_path / "o2"
    assert main(["--config", str(cfg), "fit", "--cn", "0", "--out", str(out2), str(data_file)]) == 0
    assert json.loads((out2 / "fit_result.json").read_text())["config"]["cn"] == 0.0


@pytest.mark.parametrize("text", ["nonsense\n", "colour = blue\n"])
def test_bad_config(data_file, tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert main(["--config", str(cfg), "fit", str(data_file)]) == 1


def test_distance(tmp_path, capsys):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    A = MixingMeasure([[0.0, 1.0]], [1.0])
    B = MixingMeasure([[1.0, 2.0]], [1.0])
    a.write_text(A.to_json())
    b.write_text(B.to_json())
    assert main(["distance", "wasserstein", str(a), str(b)]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(math.sqrt(2), abs=1e-15)
    assert main(["distance", "hellinger", str(a), str(b)]) == 0
    # closed form for two normals
    v = 1.0 + 4.0
    aff = math.sqrt(2 * 1 * 2 / v) * math.exp(-1 / (4 * v))
    assert float(capsys.readouterr().out) == pytest.approx(math.sqrt(1 - aff), abs=1e-7)
    assert main(["distance", "wasserstein", str(a), str(tmp_path / "none.json")]) == 1


def test_console_entry_point(data_file):
    proc = subprocess.run([sys.executable, "-m", "mixest.cli", "simulate", "--case", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "unknown case" in proc.stderr
