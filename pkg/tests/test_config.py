from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from fibrod.config import ConfigError, load_config, parse_config_text, parse_eps_list
from fibrod.tensors import FIBER, MATRIX, EvaluationPoints

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = """
[run]
kind = rod-limit
[geometry]
fiber_radius = 0.5
[load]
f3 = 1
"""


def with_extra(extra: str, base: str = BASE) -> str:
    return base + "\n" + extra


class TestShippedConfigs:
    @pytest.mark.parametrize("name,kind,problem", [
        ("rod_default.ini", "sweep", "rod"), ("hom_default.ini", "sweep", "hom"),
        ("rod_piecewise.ini", "rod-limit", "rod"),
    ])
    def test_parse(self, name, kind, problem):
        cfg = load_config(CONFIGS / name)
        assert (cfg.kind, cfg.problem) == (kind, problem)

    def test_sweep_defaults(self):
        assert load_config(CONFIGS / "rod_default.ini").eps_list == (0.4, 0.2, 0.1, 0.05)
        assert load_config(CONFIGS / "hom_default.ini").eps_list == (0.25, 0.125, 0.0625)

    def test_piecewise_regions_differ(self):
        cfg = load_config(CONFIGS / "rod_piecewise.ini")
        assert cfg.tensor.kind == "piecewise"
        assert cfg.tensor.region_matrix(FIBER)[2, 2] > cfg.tensor.region_matrix(MATRIX)[2, 2]


class TestValidation:
    @pytest.mark.parametrize("text,where", [
        ("[bogus]\na = 1", "bogus"),
        ("[geometry]\nradius = 1", "geometry"),
        ("[run]\nkind = rod-magic", "run.kind"),
        ("[geometry]\nfiber_radius = -1", "geometry.fiber_radius"),
        ("[geometry]\nfiber_radius = 2", "geometry"),
        ("[solver]\ntol = 2", "solver.tol"),
        ("[solver]\nmethod = lu", "solver.method"),
        ("[discretization]\nn_per_cell = 7", "discretization.n_per_cell"),
        ("[discretization]\nlayers = 0", "discretization.layers"),
        ("[discretization]\nh = abc", "discretization.h"),
        ("[tensor]\nkind = isotropic\nlambda = 1", "tensor"),
        ("[tensor]\nkind = mandel66\nentries = 1 2 3", "tensor"),
        ("[tensor]\nkind = cubic", "tensor.kind"),
        ("[tensor]\nkind = isotropic\nlambda = 1\nmu = 1\nnu = 2", "tensor"),
        ("[output]\nfields = maybe", "output.fields"),
    ])
    def test_errors_name_location(self, text, where):
        base = BASE.replace("[geometry]\nfiber_radius = 0.5\n", "") if "[geometry]" in text else BASE
        if "[run]" in text:
            base = base.replace("[run]\nkind = rod-limit\n", "")
        with pytest.raises(ConfigError) as exc:
            parse_config_text(with_extra(text, base))
        assert exc.value.where.startswith(where)

    def test_expression_error_reports_offset(self):
        with pytest.raises(ConfigError, match="offset 8"):
            parse_config_text(BASE.replace("f3 = 1", "f3 = x3*(1-x3"))

    def test_hom_variables_rejected_for_rod(self):
        with pytest.raises(ConfigError) as exc:
            parse_config_text(BASE.replace("f3 = 1", "f3 = y1"))
        assert exc.value.where == "load.f3"

    def test_missing_kind(self):
        with pytest.raises(ConfigError):
            parse_config_text("[load]\nf3 = 1")

    def test_kind_mismatch(self):
        with pytest.raises(ConfigError):
            parse_config_text(BASE, "rod-micro")

    def test_subcommand_supplies_kind(self):
        cfg = parse_config_text(BASE.replace("kind = rod-limit", "problem = hom"), "hom-limit")
        assert cfg.problem == "hom" and cfg.tensor.periodic

    def test_problem_contradicts_kind(self):
        with pytest.raises(ConfigError):
            parse_config_text(BASE.replace("kind = rod-limit", "kind = rod-limit\nproblem = hom"))

    def test_sweep_needs_three_eps(self):
        text = BASE.replace("kind = rod-limit", "kind = sweep") + "[discretization]\neps = 0.2, 0.1\n"
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_noncoercive_tensor(self):
        with pytest.raises(ConfigError):
            parse_config_text(with_extra("[tensor]\nkind = isotropic\nlambda = 1\nmu = -1"))

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.ini")


class TestEps:
    def test_parse_and_sort(self):
        assert parse_eps_list("0.1, 0.4;0.2") == (0.1, 0.4, 0.2)
        cfg = parse_config_text(BASE).with_eps((0.1, 0.4, 0.2))
        assert cfg.eps_list == (0.4, 0.2, 0.1)

    @pytest.mark.parametrize("text", ["", "0.1, -0.2", "0.1, 0.1", "0.1, x", "0, 0.1", "nan"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_eps_list(text)


class TestTensorBlocks:
    def test_region_value_priority(self):
        cfg = parse_config_text(with_extra("[tensor]\nkind = isotropic\nlambda = 1\nmu = 1\nmatrix.mu = 0.1"))
        assert cfg.tensor.region_matrix(FIBER)[5, 5] == pytest.approx(2.0)
        assert cfg.tensor.region_matrix(MATRIX)[5, 5] == pytest.approx(0.2)

    def test_expression_tensor(self):
        cfg = parse_config_text(with_extra("[tensor]\nkind = expression\nlambda = 1\nmu = 1+x3"))
        assert cfg.tensor.depends_on_x and not cfg.tensor.depends_on_y
        pts = EvaluationPoints(np.array([[0.0, 0.0, 0.5]]), np.array([FIBER], dtype=np.int8))
        assert cfg.tensor.evaluate(pts)[0, 5, 5] == pytest.approx(3.0)

    def test_mandel66_entries(self):
        eye = " ".join("1" if i == j else "0" for i in range(6) for j in range(6))
        cfg = parse_config_text(with_extra(f"[tensor]\nkind = mandel66\nentries = {eye}"))
        np.testing.assert_array_equal(cfg.tensor.region_matrix(FIBER), np.eye(6))


class TestEcho:
    def test_echo_is_stable(self):
        a = parse_config_text(BASE).echo()
        b = parse_config_text(BASE).echo()
        assert a == b
        assert a["load"] == {"f1": "0", "f2": "0", "f3": "1"}
        assert a["run"] == {"kind": "rod-limit", "problem": "rod"}

    def test_output_override(self):
        assert parse_config_text(BASE).with_output("x/y").output.dir == "x/y"
