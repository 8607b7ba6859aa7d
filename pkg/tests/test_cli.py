import subprocess
import sys

import pytest

from heiskak.cli import EXIT_INPUT, EXIT_OK, EXIT_TOL, git_blob_sha1, main
from heiskak.generators import horizontal_fan, uniform_solid
from heiskak.measures import make_family, write_family


def report_items(text):
    """``key`` and ``section.key`` lookups into a report."""
    items, section = {}, ""
    for line in text.splitlines():
        if line.startswith("["):
            section = line.strip("[]")
        elif " = " in line:
            k, v = line.split(" = ", 1)
            items[k] = items[f"{section}.{k}"] = v
    return items


@pytest.fixture
def fan_file(tmp_path):
    path = tmp_path / "fan.txt"
    write_family(horizontal_fan(delta=0.15), path)
    return path


@pytest.fixture
def uniform_file(tmp_path):
    path = tmp_path / "uniform.txt"
    write_family(uniform_solid(0.25), path)
    return path


def test_git_blob_sha1_known_value():
    # git hash-object of an empty file
    assert git_blob_sha1(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert git_blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_verify_lemmas_passes_and_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["verify-lemmas", "--out", str(a), "--n-measures", "3", "--tube-points", "10"]) == EXIT_OK
    assert main(["verify-lemmas", "--out", str(b), "--n-measures", "3", "--tube-points", "10"]) == EXIT_OK
    assert (a / "lemmas.csv").read_bytes() == (b / "lemmas.csv").read_bytes()
    header = (a / "lemmas.csv").read_text().splitlines()[0]
    assert header == "suite,check,value,bound,passed"
    items = report_items((a / "verify_lemmas_report.txt").read_text())
    assert items["seed"] == "0" and items["status"] == "pass"


def test_verify_lemmas_zero_tolerance_fails(tmp_path, capsys):
    code = main(["verify-lemmas", "--out", str(tmp_path), "--n-measures", "2", "--tube-points", "5", "--tol-scale", "0"])
    assert code == EXIT_TOL
    assert "suite 'group' failed" in capsys.readouterr().err


def test_energy_report(tmp_path, uniform_file, capsys):
    code = main(["energy", str(uniform_file), "--out", str(tmp_path), "--n-theta", "9", "--n-mc", "64"])
    assert code == EXIT_OK
    items = report_items((tmp_path / "energy_report.txt").read_text())
    assert items["sha1"] == git_blob_sha1(uniform_file.read_bytes())
    assert items["q"] == "1.5" and items["balls"] == "141"
    assert float(items["ratio"]) > 0
    assert (tmp_path / "energy.svg").read_text().lstrip().startswith("<?xml")
    assert (tmp_path / "energy.csv").read_text().startswith("theta,energy\n")


def test_energy_q1_is_pi(tmp_path, uniform_file, capsys):
    main(["energy", str(uniform_file), "--out", str(tmp_path), "--q", "1", "--n-theta", "5", "--n-mc", "8", "--no-figures"])
    items = report_items((tmp_path / "energy_report.txt").read_text())
    assert float(items["energy_over_pi_mass"]) == pytest.approx(1.0, abs=1e-9)
    assert not (tmp_path / "energy.svg").exists()


def test_broad_narrow_fan(tmp_path, fan_file, capsys):
    code = main(["broad-narrow", str(fan_file), "--out", str(tmp_path), "--grid-spacing", "0.02"])
    assert code == EXIT_OK
    items = report_items((tmp_path / "broad_narrow_report.txt").read_text())
    assert int(items["grid.broad"]) > 0
    assert int(items["grid.broad"]) + int(items["grid.narrow"]) == int(items["points"])
    lines = (tmp_path / "broad_narrow.csv").read_text().splitlines()
    assert lines[0] == "x1 x2 x3 class total_weight wedge_sum"
    assert sum(line.split()[3] == "broad" for line in lines[1:]) == int(items["grid.broad"])
    assert (tmp_path / "broad_narrow.svg").exists()


def test_broad_narrow_single_ball(tmp_path, capsys):
    path = tmp_path / "one.txt"
    write_family(make_family([[0.0, 0.1, 0.0]], [1.0], 0.25), path)
    assert main(["broad-narrow", str(path), "--out", str(tmp_path), "--grid-spacing", "0.05", "--no-figures"]) == 0
    assert report_items((tmp_path / "broad_narrow_report.txt").read_text())["grid.broad"] == "0"


def test_outputs_bit_identical(tmp_path, fan_file, capsys):
    for name in ("a", "b"):
        main(["broad-narrow", str(fan_file), "--out", str(tmp_path / name), "--grid-spacing", "0.04"])
        main(["rescale-demo", str(fan_file), "--out", str(tmp_path / name), "--n-mc", "256"])
    for f in ("broad_narrow.csv", "broad_narrow.svg", "cells.csv", "cells.svg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_rescale_demo(tmp_path, uniform_file, capsys):
    code = main(["rescale-demo", str(uniform_file), "--out", str(tmp_path), "--rho", "0.25", "--n-mc", "512"])
    assert code == EXIT_OK
    items = report_items((tmp_path / "rescale_demo_report.txt").read_text())
    assert float(items["max_frostman_ratio"]) <= 1
    assert float(items["cell_mass_total"]) <= 8
    assert float(items["conjugation_relative_error"]) <= 0.05
    rows = (tmp_path / "cells.csv").read_text().splitlines()
    assert len(rows) - 1 == int(items["cells"])


def test_rescale_demo_single_dominant_cell(tmp_path, capsys):
    path = tmp_path / "tight.txt"
    write_family(make_family([[0.0, 0.05, 0.0], [0.02, 0.06, 0.0]], [1.0, 1.0], 0.1), path)
    assert main(["rescale-demo", str(path), "--out", str(tmp_path), "--no-figures", "--n-mc", "256"]) == 0
    rows = (tmp_path / "cells.csv").read_text().splitlines()[1:]
    assert max(float(r.split(",")[4]) for r in rows) == pytest.approx(1.0)


@pytest.mark.parametrize(
    "content",
    ["not a measure\n", "delta=0.1\n0 0 0 -1\n", "delta=0.1\n0 0 0.9 1\n"],
)
def test_bad_measure_exit_code(tmp_path, content, capsys):
    path = tmp_path / "bad.txt"
    path.write_text(content)
    assert main(["energy", str(path), "--out", str(tmp_path)]) == EXIT_INPUT
    assert "heiskak:" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path, capsys):
    assert main(["energy", str(tmp_path / "nope.txt"), "--out", str(tmp_path)]) == EXIT_INPUT


def test_bad_rho_exit_code(tmp_path, fan_file, capsys):
    assert main(["broad-narrow", str(fan_file), "--rho", "1.5", "--out", str(tmp_path)]) == EXIT_INPUT


def test_too_fine_grid_is_input_error(tmp_path, fan_file, capsys):
    assert main(["broad-narrow", str(fan_file), "--grid-spacing", "0.001", "--out", str(tmp_path)]) == EXIT_INPUT
    assert "coarser" in capsys.readouterr().err


@pytest.mark.parametrize("kind, count", [("uniform", 141), ("fan", 5), ("vertical", 217), ("cantor", 41)])
def test_generate(tmp_path, kind, count, capsys):
    extra = {"uniform": ["--delta", "0.25"], "fan": ["--delta", "0.1"], "vertical": [], "cantor": ["--depth", "1"]}
    assert main(["generate", kind, "--out", str(tmp_path)] + extra[kind]) == EXIT_OK
    body = (tmp_path / f"{kind}.txt").read_text().splitlines()
    assert body[0].startswith("delta=")
    assert len(body) - 1 == count


@pytest.mark.parametrize("mode, header", [("h", "theta,w_mu,w_s,xray_value"), ("abc", "a,b,c,xray_value")])
def test_xray_tables(tmp_path, mode, header, capsys):
    path = tmp_path / "one.txt"
    write_family(make_family([[0.0, 0.1, 0.0]], [1.0], 0.3), path)
    assert main(["xray", str(path), "--mode", mode, "--out", str(tmp_path), "--n-theta", "3"]) == 0
    assert (tmp_path / f"xray_{mode}.csv").read_text().splitlines()[0] == header


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "heiskak", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "verify-lemmas" in out.stdout
