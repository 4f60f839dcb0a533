import json
import subprocess
import sys
from pathlib import Path

import pytest

from mlmc_compress.cli import OUTPUT_ROOT_ENV, main
from mlmc_compress.simulator import CSV_HEADER, read_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_config(path, body):
    path.write_text(body)
    return str(path)


def quad(name="q", seeds="[0]", eta="0.5", methods="  - {name: sgd, kind: sgd}", T=10, extra=""):
    return (f"name: {name}\nproblem: {{type: quadratic, d: 3, M: 2, sigma: 0.1, xi: 0.5}}\n"
            f"T: {T}\neta: {eta}\nseeds: {seeds}\nmethods:\n{methods}\n{extra}")


def test_minimal_config_writes_one_csv(tmp_path):
    assert main(["run", str(CONFIGS / "minimal.yaml"), "--out", str(tmp_path), "-q"]) == 0
    csvs = sorted(tmp_path.glob("*.csv"))
    assert [p.name for p in csvs] == ["minimal-sgd_0.csv"]
    lines = csvs[0].read_text().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 11
    summary = json.loads((tmp_path / "minimal_summary.json").read_text())
    assert summary["schema_version"] == 1 and summary["runs"][0]["csv"] == "minimal-sgd_0.csv"


def test_one_csv_per_seed_and_method(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", quad(seeds="[0, 1, 2, 3, 4]", methods=(
        "  - {name: sgd, kind: sgd}\n  - {name: tk, kind: mlmc, compressor: topk}")))
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out), "-q"]) == 0
    csvs = sorted(out.glob("q-sgd_*.csv"))
    assert len(csvs) == 5 and len(list(out.glob("q-tk_*.csv"))) == 5
    assert len({p.read_text() for p in csvs}) == 5


def test_unknown_compressor_exits_1_naming_field(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", quad(methods="  - {name: x, kind: mlmc, compressor: zip}"))
    assert main(["run", cfg, "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "methods[0].compressor" in err and "zip" in err
    assert not list(tmp_path.glob("*.csv"))


def test_dimension_dependent_errors_are_config_errors(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", quad(methods="  - {name: r, kind: rand_k, k: 7}"))
    assert main(["run", cfg, "--out", str(tmp_path)]) == 1
    assert "methods[0]" in capsys.readouterr().err


def test_missing_config_exits_1(tmp_path, capsys):
    assert main(["run", str(tmp_path / "none.yaml")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_divergence_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", quad(eta="50.0", T=200))
    assert main(["run", cfg, "--out", str(tmp_path), "-q"]) == 2
    assert "diverged" in capsys.readouterr().err


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", quad(eta="auto", methods=(
        "  - {name: sg, kind: mlmc, compressor: stopk, s: 2, dist: static}\n"
        "  - {name: ef, kind: ef_momentum, k: 1}"), extra="").replace("eta: auto", "eta_grid: auto"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(a), "-q"]) == 0
    assert main(["run", cfg, "--out", str(b), "-q"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_output_root_from_environment(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "c.yaml", quad(extra="output_dir: nested\n"))
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert main(["run", cfg, "-q"]) == 0
    assert (tmp_path / "root" / "nested" / "q-sgd_0.csv").exists()


def test_report_table(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", quad(methods=(
        "  - {name: sgd, kind: sgd}\n  - {name: tk, kind: mlmc, compressor: topk}")))
    main(["run", cfg, "--out", str(tmp_path), "-q"])
    capsys.readouterr()
    assert main(["report", str(tmp_path), "--budgets", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[:3] == ["run", "total_bits", "final_gap"]
    rows = {ln.split()[0]: ln.split() for ln in lines[1:]}
    assert set(rows) == {"q-sgd_0", "q-tk_0"}
    # the sgd run sends 3 * 64 bits per worker per step
    assert rows["q-sgd_0"][1] == str(10 * 2 * 192)
    final = read_csv(tmp_path / "q-tk_0.csv")[-1]
    assert rows["q-tk_0"][1] == str(final["cum_bits"])


def test_report_on_empty_or_missing_dir(tmp_path):
    assert main(["report", str(tmp_path)]) == 1
    assert main(["report", str(tmp_path / "missing")]) == 1


def test_verify_bits_suite(capsys):
    assert main(["verify", "bits"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out


def test_verify_unknown_suite(capsys):
    assert main(["verify", "nope"]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mlmc_compress", "verify", "bits"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    with pytest.raises(SystemExit):
        main(["--help"])
