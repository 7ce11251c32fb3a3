from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fibrod.loads import LoadField
from fibrod.mesh import SectionGeometry, build_section_mesh, extrude, layer_nodes
from fibrod.tensors import ElasticityTensorField, make_isotropic

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def iso() -> ElasticityTensorField:
    return ElasticityTensorField.constant(make_isotropic(1.0, 1.0))


@pytest.fixture(scope="session")
def iso_periodic() -> ElasticityTensorField:
    return ElasticityTensorField.constant(make_isotropic(1.0, 1.0), periodic=True)


@pytest.fixture(scope="session")
def disk() -> SectionGeometry:
    return SectionGeometry("disk", 1.0, 0.5)


@pytest.fixture(scope="session")
def coarse_section(disk):
    return build_section_mesh(disk, 0.25)


@pytest.fixture(scope="session")
def coarse_rod(coarse_section):
    return extrude(coarse_section, layer_nodes(1.0, 4))


@pytest.fixture(scope="session")
def axial_load() -> LoadField:
    return LoadField.parse(0, 0, 1)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
