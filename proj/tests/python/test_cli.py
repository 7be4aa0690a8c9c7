import csv
import json
import subprocess

import pytest


def run(cli, *args, check=True):
    proc = subprocess.run([cli, *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"exit {proc.returncode}: {proc.stderr}")
    return proc


@pytest.fixture(scope="module")
def campaign(cli, configs, tmp_path_factory):
    out = tmp_path_factory.mktemp("campaign")
    run(cli, "synth", "--config", configs / "mode01_phase.json", "--seed", 21, "--out", out)
    return out


def test_synth_is_deterministic(cli, configs, campaign, tmp_path):
    run(cli, "synth", "--config", configs / "mode01_phase.json", "--seed", 21, "--out", tmp_path)
    files = sorted(campaign.glob("spectrum_*.csv"))
    assert len(files) == 12
    for f in files:
        assert f.read_bytes() == (tmp_path / f.name).read_bytes()
    manifest = json.loads((campaign / "manifest.json").read_text())
    assert manifest["seed"] == 21
    assert [p["file"] for p in manifest["points"]] == [f.name for f in files]


def test_golden_path(cli, configs, campaign, tmp_path):
    cfg = configs / "mode01_phase.json"
    spectra = sorted(campaign.glob("spectrum_*.csv"))
    run(cli, "fit-peak", "--config", cfg, "--out", tmp_path, *spectra)
    fragments = sorted(tmp_path.glob("*.fit.json"))
    assert len(fragments) == len(spectra)
    assert len(list(tmp_path.glob("*.plot.csv"))) == len(spectra)

    run(cli, "cooling-curve", "--config", cfg, "--out", tmp_path / "cc", *fragments)
    report = json.loads((tmp_path / "cc" / "cooling.json").read_text())
    truth = json.loads((campaign / "manifest.json").read_text())
    n_min = report["cooling"]["curve"]["n_min"]
    assert abs(n_min["value"] - truth["n_min"]) < 3 * n_min["sigma"]
    assert report["provenance"]["seed"] == 21
    for name in ("cooling_points.csv", "cooling_curve.csv", "cooling.gp"):
        assert (tmp_path / "cc" / name).stat().st_size > 0


def test_predict_and_convert(cli, configs, tmp_path):
    out = tmp_path / "p.csv"
    run(cli, "predict", "--config", configs / "mode01_phase.json", "--sweep", "detuning",
        "--from", -256e3, "--to", -256e3, "--points", 1, "--out", out)
    row = next(csv.DictReader(out.open()))
    assert float(row["n_ba"]) == pytest.approx(0.0397, rel=2e-3)

    proc = run(cli, "convert", "snn-to-sphiphi", 2.2e-2, "--frequency-hz", 256e3)
    value, unit = proc.stdout.split()
    assert float(value) == pytest.approx(3.357e-13, rel=1e-3)
    assert unit == "rad^2/Hz"


def test_exit_codes(cli, configs, tmp_path):
    assert run(cli, "synth", check=False).returncode == 2
    assert run(cli, "frobnicate", check=False).returncode == 2
    flat = tmp_path / "flat.csv"
    rows = "\n".join(f"{200e3 + 10 * i},0.02" for i in range(20000))
    flat.write_text(f"# units=hz2_per_hz\n# n_averages=100\nfrequency_hz,psd\n{rows}\n")
    assert run(cli, "fit-peak", "--config", configs / "mode01_phase.json", flat, check=False).returncode == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("# units=hz2_per_hz\n# n_averages=1\n1,1\n2,1\n4,1\n")
    assert run(cli, "fit-peak", "--config", configs / "mode01_phase.json", bad, check=False).returncode == 5
