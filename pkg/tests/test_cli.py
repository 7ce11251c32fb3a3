from __future__ import annotations

import shutil
import subprocess
import sys

import pytest

from fibrod.cli import EXIT_CONFIG, EXIT_FLAGS, EXIT_OK, main

CFG = """
[run]
kind = {kind}
[geometry]
fiber_radius = 0.5
[load]
f3 = 1
[discretization]
h = 0.25
layers = 4
limit_elements = 8
slices = 3
eps = 0.5, 0.25, 0.125
"""


@pytest.fixture
def cfg(tmp_path):
    def make(kind="rod-limit", extra=""):
        p = tmp_path / f"{kind}.ini"
        p.write_text(CFG.format(kind=kind) + extra)
        return str(p)

    return make


def files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestExitCodes:
    def test_success(self, cfg, tmp_path):
        assert main(["rod-limit", "--config", cfg(), "--out", str(tmp_path / "o")]) == EXIT_OK
        assert (tmp_path / "o" / "limit.csv").exists()

    def test_missing_config(self, tmp_path, capsys):
        assert main(["rod-limit", "--config", str(tmp_path / "nope.ini")]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_bad_key(self, cfg, capsys):
        assert main(["rod-limit", "--config", cfg(extra="[solver]\nspeed = 3\n")]) == EXIT_CONFIG
        assert "solver" in capsys.readouterr().err

    def test_bad_eps_override(self, cfg):
        assert main(["rod-micro", "--config", cfg("rod-micro"), "--eps", "0.2,-1"]) == EXIT_CONFIG

    def test_bad_workers(self, cfg):
        assert main(["rod-limit", "--config", cfg(), "--workers", "0"]) == EXIT_CONFIG

    def test_kind_mismatch(self, cfg):
        assert main(["rod-micro", "--config", cfg("rod-limit")]) == EXIT_CONFIG

    def test_check(self, cfg, capsys, tmp_path):
        out = tmp_path / "never"
        assert main(["rod-limit", "--config", cfg(), "--check", "--out", str(out)]) == EXIT_OK
        text = capsys.readouterr().out
        assert "config ok" in text and "m_est=2" in text
        assert not out.exists()

    def test_check_reports_violation(self, cfg, capsys):
        bad = cfg(extra="[tensor]\nkind = expression\nlambda = 1\nmu = 1-2*x3\n")
        assert main(["rod-limit", "--config", bad, "--check"]) == EXIT_CONFIG
        assert "violation" in capsys.readouterr().out

    def test_sweep_prints_flags(self, cfg, tmp_path, capsys):
        code = main(["sweep", "--config", cfg("sweep"), "--out", str(tmp_path / "s")])
        assert code in (EXIT_OK, EXIT_FLAGS)
        out = capsys.readouterr().out
        assert "PASS identity" in out
        assert (tmp_path / "s" / "report.csv").exists() and (tmp_path / "s" / "rates.csv").exists()


class TestDeterminism:
    @pytest.mark.parametrize("kind", ["rod-limit", "rod-micro", "rod-nonlocal"])
    def test_byte_identical_tables(self, cfg, tmp_path, kind):
        path = cfg(kind)
        outs = []
        for k in range(2):
            d = tmp_path / f"run{k}"
            assert main([kind, "--config", path, "--out", str(d), "--eps", "0.5"]) == EXIT_OK
            outs.append(files(d))
        a, b = outs
        assert a.keys() == b.keys()
        for name in a:
            if name != "manifest.json":
                assert a[name] == b[name], name

    def test_workers_do_not_change_tables(self, cfg, tmp_path):
        path = cfg("rod-micro")
        main(["rod-micro", "--config", path, "--out", str(tmp_path / "a"), "--eps", "0.5,0.25"])
        main(["rod-micro", "--config", path, "--out", str(tmp_path / "b"), "--eps", "0.5,0.25", "--workers", "2"])
        a, b = files(tmp_path / "a"), files(tmp_path / "b")
        assert {k: v for k, v in a.items() if k.endswith(".csv")} == {k: v for k, v in b.items() if k.endswith(".csv")}


class TestMeshExport:
    def test_rod_meshes(self, cfg, tmp_path, capsys):
        assert main(["mesh", "export", "--config", cfg(), "--out", str(tmp_path / "m")]) == EXIT_OK
        names = files(tmp_path / "m")
        assert any(n.endswith("section.mesh") for n in names)
        assert any(n.endswith("rod.mesh") for n in names)


@pytest.mark.skipif(shutil.which("fibrod") is None, reason="console script not installed")
def test_console_script(cfg):
    proc = subprocess.run(["fibrod", "rod-limit", "--config", cfg(), "--check"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_module_entry(cfg):
    proc = subprocess.run([sys.executable, "-m", "fibrod.cli", "rod-limit", "--config", cfg(), "--check"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
