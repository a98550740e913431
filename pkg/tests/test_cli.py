from __future__ import annotations

import json
import subprocess
import sys

import pytest

from grazing_optics.cli import STAGES, main

QUICK = """\
[scenario]
name = quick
seed = 3

[obstacle]
family = Poly2D
coefficients = 1.0
r = 2.0

[incidence]
theta = 1.0

[chart]
samples = 2000

[asymptotics]
T = 0.25
eps = 0.1, 0.05
mu = 0.1

[data]
center = 0.825, -0.85
width = 0.225, 0.15
mean_amplitude = 0.5

[source]
kind = sin_sum
kappa = 0.1

[grids]
n_incoming = 11, 11, 21
n_reflected = 21, 17, 21
fd_h = 0.05
"""


def _scenario(tmp_path, text=QUICK):
    p = tmp_path / "quick.ini"
    p.write_text(text)
    return str(p)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    scen = _scenario(tmp)
    out = tmp / "out"
    codes = {s: main([s, "--scenario", scen, "--out", str(out)]) for s in STAGES}
    return scen, out, codes


def test_pipeline_passes(pipeline):
    _, out, codes = pipeline
    assert all(c == 0 for c in codes.values()), codes
    report = json.loads((out / "report" / "report.json").read_text())
    assert set(report) == set(STAGES) - {"report"}
    assert all(report.values())
    assert (out / "classify" / "grazing.svg").read_text().startswith("<svg")


def test_csv_headers_carry_manifest_hash(pipeline):
    _, out, _ = pipeline
    man = json.loads((out / "flowmap" / "manifest.json").read_text())
    first = (out / "flowmap" / "flowmap.csv").read_text().splitlines()[0]
    assert first == f"# manifest_sha256={man['manifest_sha256']}"


def test_deterministic_with_threads(pipeline, tmp_path):
    scen, out, _ = pipeline
    out2 = tmp_path / "out2"
    for s in ("classify", "flowmap", "jacobian", "profiles", "synthesize"):
        assert main([s, "--scenario", scen, "--out", str(out2), "--threads", "3"]) == 0
    for name in ("residual.csv", "field.csv"):
        assert (out / "synthesize" / name).read_bytes() == (out2 / "synthesize" / name).read_bytes()


def test_missing_dependency(tmp_path):
    scen = _scenario(tmp_path)
    assert main(["jacobian", "--scenario", scen, "--out", str(tmp_path / "o")]) == 2


def test_tampered_output_rejected(pipeline, tmp_path):
    import shutil

    scen, out, _ = pipeline
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    f = copy / "flowmap" / "flowmap.csv"
    f.write_text(f.read_text() + "0,0,0,0,0\n")
    assert main(["jacobian", "--scenario", scen, "--out", str(copy)]) == 2


def test_scenario_change_rejected(pipeline, tmp_path):
    import shutil

    _, out, _ = pipeline
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    other = _scenario(tmp_path, QUICK.replace("seed = 3", "seed = 4"))
    assert main(["jacobian", "--scenario", other, "--out", str(copy)]) == 2


def test_config_error_exit(tmp_path, capsys):
    scen = _scenario(tmp_path, "[obstacle]\nfamily = Poly2D\nr = abc\n")
    assert main(["classify", "--scenario", scen, "--out", str(tmp_path / "o")]) == 2
    assert "line 3, column 5" in capsys.readouterr().err


def test_bad_arguments(tmp_path):
    scen = _scenario(tmp_path)
    assert main(["classify", "--scenario", scen, "--eps", "0.05,0.1"]) == 2
    assert main(["classify", "--scenario", scen, "--threads", "0"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 2


def test_wrong_dimension_exit(tmp_path):
    text = "[obstacle]\nfamily = IsoPower\nk = 1\ndim = 3\n[incidence]\ntheta = 1, 0\n"
    scen = _scenario(tmp_path, text)
    out = str(tmp_path / "o")
    assert main(["classify", "--scenario", scen, "--out", out]) == 0
    assert main(["flowmap", "--scenario", scen, "--out", out]) == 0
    assert main(["jacobian", "--scenario", scen, "--out", out]) == 0
    assert main(["profiles", "--scenario", scen, "--out", out]) == 2


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "grazing_optics.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "classify" in r.stdout
