from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fibrod.config import parse_config_text
from fibrod.harness import (
    ConvergenceReport,
    RunResults,
    Table,
    bounded_by_coarsest,
    check_only,
    csv_text,
    emit_outputs,
    fit_rate,
    monotone_nonincreasing,
    run,
)

SMALL_ROD = """
[run]
kind = {kind}
[geometry]
fiber_radius = 0.5
[load]
f1 = x3
f3 = 1
[discretization]
h = 0.25
layers = 4
limit_elements = 8
slices = 3
eps = 0.5, 0.25, 0.125
[solver]
method = direct
"""

SMALL_HOM = """
[run]
kind = {kind}
problem = hom
[load]
f3 = 1+y1
[discretization]
eps = 0.5, 0.25, 0.125
n_per_cell = 8
hom_layers = 2
cell_n = 8
macro_xy = 1
macro_z = 2
[output]
fields = no
"""


def small(kind: str, template: str = SMALL_ROD):
    return parse_config_text(template.format(kind=kind))


class TestRates:
    @given(st.floats(0.3, 3.0), st.floats(0.1, 10.0))
    def test_exact_power_law(self, p, c):
        eps = [0.4, 0.2, 0.1, 0.05]
        fit = fit_rate(eps, [c * e ** p for e in eps])
        assert fit.status == "ok" and fit.exponent == pytest.approx(p, rel=1e-9)

    def test_indeterminate(self):
        assert fit_rate([0.4, 0.2], [1.0, 0.5]).status == "indeterminate"
        assert fit_rate([0.4, 0.2, 0.1], [1.0, 0.0, -1.0]).exponent is None
        with pytest.raises(ValueError):
            fit_rate([0.1, 0.2], [1.0])

    def test_flags(self):
        assert monotone_nonincreasing([3.0, 2.0, 2.0, 1.0])
        assert not monotone_nonincreasing([1.0, 2.0])
        assert bounded_by_coarsest([1.0, 1.9, 2.0])
        assert not bounded_by_coarsest([1.0, 2.1])

    def test_report_flags_and_tables(self):
        rep = ConvergenceReport.build("rod", [0.1, 0.4, 0.2], {"err": [0.25, 1.0, 0.5]}, {"diag": [1.5, 1.0, 1.2]},
                                      identity_residual=1e-12)
        np.testing.assert_array_equal(rep.eps, [0.4, 0.2, 0.1])
        assert rep.flags == {"monotone:err": True, "bounded:diag": True, "identity": True}
        assert rep.passed
        assert rep.rates["err"].exponent == pytest.approx(1.0)
        t = rep.rates_table()
        assert t.header[0] == "kind" and len(t.rows) == 3

    def test_report_failure(self):
        rep = ConvergenceReport.build("rod", [0.4, 0.2, 0.1], {"err": [1, 2, 1]}, {}, identity_residual=1e-6)
        assert not rep.passed
        assert not rep.flags["identity"]


class TestOutputs:
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_csv_floats_roundtrip(self, v):
        text = csv_text(["v"], [[v]])
        assert float(text.splitlines()[1]) == v

    def test_emit_writes_manifest(self, tmp_path):
        res = RunResults({"run": {"kind": "x"}}, [Table("a.csv", ["x"], [[1.5]])])
        paths = emit_outputs(res, tmp_path)
        assert (tmp_path / "a.csv").read_text() == "x\n1.5\n"
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["config"] == {"run": {"kind": "x"}}
        assert {p.name for p in paths} >= {"a.csv", "manifest.json"}


class TestRuns:
    @pytest.mark.parametrize("kind,tables", [
        ("rod-micro", {"diagnostics.csv"}), ("rod-limit", {"limit.csv", "Q.csv"}), ("rod-nonlocal", {"nonlocal.csv"}),
    ])
    def test_rod_runs(self, kind, tables):
        res = run(small(kind))
        assert tables <= {t.name for t in res.tables}

    def test_rod_nonlocal_identity(self):
        res = run(small("rod-nonlocal"))
        assert res.manifest["identity_residual"] <= 1e-8
        t = res.table("nonlocal.csv")
        rows = np.array(t.rows, dtype=float)
        col = {k: rows[:, i] for i, k in enumerate(t.header)}
        recon = col["mean_u3"] + col["m0"] * col["mean_f3_matrix"] + col["m00"]
        np.testing.assert_allclose(recon, col["U"], atol=1e-12 * np.abs(col["U"]).max())

    def test_rod_sweep_report(self):
        res = run(small("sweep"))
        rep = res.report
        assert rep is not None and list(rep.eps) == [0.5, 0.25, 0.125]
        assert rep.flags["identity"]
        assert {"report.csv", "rates.csv"} <= {t.name for t in res.tables}

    @pytest.mark.parametrize("kind", ["hom-micro", "hom-limit", "hom-nonlocal"])
    def test_hom_runs(self, kind):
        res = run(small(kind, SMALL_HOM).with_eps((0.5,)))
        assert res.tables

    def test_check_only(self):
        info = check_only(small("rod-limit"))
        assert info["ok"] and info["m_est"] == pytest.approx(2.0)
        bad = parse_config_text(SMALL_ROD.format(kind="rod-limit")
                                + "[tensor]\nkind = expression\nlambda = 1\nmu = 1-2*x3\n")
        info = check_only(bad)
        assert not info["ok"] and info["violations"]
