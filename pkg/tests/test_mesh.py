from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fibrod.mesh import (
    MeshError, SectionGeometry, build_cell_mesh, build_periodic_array_mesh, build_rod_mesh, build_section_mesh,
    extrude, layer_nodes, mesh_summary, polygon_area, prisms_to_tetrahedra, read_mesh, region_submesh, write_mesh,
)
from fibrod.tensors import FIBER, MATRIX


def shoelace(xy):
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def ring_from_edges(edges):
    """Ordered vertex loop from an unordered closed edge list."""
    nxt = {}
    for a, b in edges.tolist():
        nxt.setdefault(a, []).append(b)
        nxt.setdefault(b, []).append(a)
    start = edges[0, 0]
    loop, prev, cur = [start], None, start
    while True:
        cand = [v for v in nxt[cur] if v != prev]
        prev, cur = cur, cand[0]
        if cur == start:
            return np.array(loop)
        loop.append(cur)


class TestSection:
    @pytest.mark.parametrize("h", [0.2, 0.1, 0.05])
    def test_square_matrix_area(self, h):
        r = 0.5
        m = build_section_mesh(SectionGeometry("square", 1.0, r), h)
        assert m.region_measure() == pytest.approx(4.0, abs=1e-12)
        exact = 4 - np.pi * r * r
        assert abs(m.region_measure(MATRIX) - exact) <= 2 * np.pi * r * h

    def test_fiber_area_matches_shoelace_of_interface(self, disk):
        m = build_section_mesh(disk, 0.1)
        loop = ring_from_edges(m.boundary["interface"])
        assert m.region_measure(FIBER) == pytest.approx(shoelace(m.points[loop]), rel=1e-12)
        assert m.metadata["fiber_polygon_area"] == pytest.approx(m.region_measure(FIBER), rel=1e-12)

    def test_fiber_area_converges(self, disk):
        errs = []
        for h in (0.2, 0.1, 0.05, 0.025):
            m = build_section_mesh(disk, h, "fiber")
            err = abs(m.region_measure() - np.pi * 0.25)
            assert err <= 2 * np.pi * 0.5 * h
            errs.append(err)
        assert all(b < a for a, b in zip(errs, errs[1:]))

    def test_cells_positive_and_ccw(self, disk):
        m = build_section_mesh(disk, 0.1)
        p = m.points[m.cells]
        det = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        assert det.min() > 0

    def test_region_tags_follow_radius(self, disk):
        m = build_section_mesh(disk, 0.1)
        rad = np.hypot(*m.points[m.cells].mean(axis=1).T)
        assert np.all(rad[m.cell_region == FIBER] < 0.5)
        assert np.all(rad[m.cell_region == MATRIX] > 0.45)

    def test_interface_vertices_on_circle(self, disk):
        m = build_section_mesh(disk, 0.1)
        v = m.boundary_vertices("interface")
        np.testing.assert_allclose(np.hypot(*m.points[v].T), 0.5, atol=1e-14)

    def test_square_side_tags(self):
        m = build_section_mesh(SectionGeometry("square", 1.0, 0.4), 0.2)
        np.testing.assert_allclose(m.points[m.boundary_vertices("left"), 0], -1.0)
        np.testing.assert_allclose(m.points[m.boundary_vertices("top"), 1], 1.0)

    def test_submesh(self, disk):
        m = build_section_mesh(disk, 0.2)
        ann, parent = region_submesh(m, MATRIX)
        assert np.all(ann.cell_region == MATRIX)
        np.testing.assert_array_equal(ann.points, m.points[parent])
        assert ann.region_measure() == pytest.approx(m.region_measure(MATRIX), rel=1e-13)

    def test_geometry_errors(self):
        with pytest.raises(MeshError):
            SectionGeometry("disk", 1.0, 1.0)
        with pytest.raises(MeshError):
            SectionGeometry("hexagon", 1.0, 0.5)
        with pytest.raises(MeshError):
            build_section_mesh(SectionGeometry(), 0.1, "everything")


class TestCell:
    @pytest.mark.parametrize("n", [8, 16, 32])
    def test_unit_area_and_matrix_defect(self, n):
        r = 0.3
        c = build_cell_mesh(r, n_side=n)
        assert c.region_measure() == pytest.approx(1.0, abs=1e-13)
        h = 1.0 / n
        assert abs(c.region_measure(MATRIX) - (1 - np.pi * r * r)) <= 2 * np.pi * r * h

    def test_periodic_pairs_match(self):
        c = build_cell_mesh(0.3, n_side=16)
        for key, shift in (("x", (1.0, 0.0)), ("y", (0.0, 1.0))):
            pairs = c.periodic_pairs[key]
            np.testing.assert_allclose(c.points[pairs[:, 1]] - c.points[pairs[:, 0]],
                                       np.broadcast_to(shift, (len(pairs), 2)), atol=1e-14)

    def test_errors(self):
        with pytest.raises(MeshError):
            build_cell_mesh(0.6, n_side=8)
        with pytest.raises(MeshError):
            build_cell_mesh(0.3, n_side=9)


class TestExtrusion:
    def test_layer_nodes(self):
        np.testing.assert_allclose(layer_nodes(2.0, 4), [0, 0.5, 1, 1.5, 2])
        g = layer_nodes(1.0, 6, grading=1.5)
        assert g[0] == 0 and g[-1] == pytest.approx(1.0)
        assert np.all(np.diff(g) > 0)
        with pytest.raises(MeshError):
            layer_nodes(1.0, 0)

    def test_volume_and_node_layout(self, coarse_section):
        x3 = layer_nodes(1.5, 3)
        m = extrude(coarse_section, x3)
        assert m.region_measure() == pytest.approx(1.5 * coarse_section.region_measure(), rel=1e-13)
        nv = coarse_section.n_vertices
        np.testing.assert_allclose(m.points[2 * nv:3 * nv, :2], coarse_section.points)
        np.testing.assert_allclose(m.points[2 * nv:3 * nv, 2], x3[2])
        assert m.layers == 3

    def test_tetra_split_preserves_volume(self, coarse_rod):
        t = prisms_to_tetrahedra(coarse_rod)
        assert t.n_cells == 3 * coarse_rod.n_cells
        assert t.cell_measures().min() > 0
        assert t.region_measure(FIBER) == pytest.approx(coarse_rod.region_measure(FIBER), rel=1e-12)

    def test_rod_mesh_defaults(self, disk):
        m = build_rod_mesh(disk, 1.0, 0.25)
        assert m.layers == 4
        with pytest.raises(MeshError):
            build_rod_mesh(disk, 0.0, 0.25)


class TestPeriodicArray:
    @pytest.mark.parametrize("eps", [0.5, 0.25, 0.125])
    def test_fiber_volume_exact(self, eps):
        ell, r = 0.5, 0.3
        cell = build_cell_mesh(r, n_side=8)
        m = build_periodic_array_mesh(ell, eps, r, 8, layers=2, cell=cell)
        exact = cell.metadata["fiber_polygon_area"] * (2 * ell) ** 2 * ell
        assert abs(m.region_measure(FIBER) - exact) <= 1e-12 * exact
        assert m.region_measure() == pytest.approx((2 * ell) ** 2 * ell, rel=1e-13)

    def test_shared_edges_merged(self):
        cell = build_cell_mesh(0.3, n_side=8)
        m = build_periodic_array_mesh(0.5, 0.25, 0.3, 8, layers=1, cell=cell)
        k = 4
        sec_nv = m.section.n_vertices
        # k^2 cells; inner-edge vertices appear once
        assert sec_nv == k * k * cell.n_vertices - 2 * k * (k - 1) * 9 + (k - 1) ** 2
        assert len(np.unique(np.round(m.section.points, 12), axis=0)) == sec_nv

    def test_local_coordinates_and_owner(self):
        m = build_periodic_array_mesh(0.5, 0.25, 0.3, 8, layers=1)
        sec = m.section
        centers = sec.points[sec.cells].mean(axis=1)
        i1, i2 = sec.cell_owner // 4, sec.cell_owner % 4
        np.testing.assert_allclose(centers[:, 0], -0.5 + 0.25 * (i1 + 0.5) + 0.25 * sec.cell_local_points.mean(axis=1)[:, 0], atol=1e-12)
        np.testing.assert_allclose(centers[:, 1], -0.5 + 0.25 * (i2 + 0.5) + 0.25 * sec.cell_local_points.mean(axis=1)[:, 1], atol=1e-12)

    def test_errors(self):
        with pytest.raises(MeshError):
            build_periodic_array_mesh(0.5, 0.3, 0.3, 8)
        with pytest.raises(MeshError):
            build_periodic_array_mesh(0.5, 0.25, 0.3, 6)


class TestIO:
    def test_roundtrip(self, tmp_path, coarse_rod):
        p = tmp_path / "rod.mesh"
        write_mesh(coarse_rod, p)
        back = read_mesh(p)
        np.testing.assert_array_equal(back.points, coarse_rod.points)
        np.testing.assert_array_equal(back.cells, coarse_rod.cells)
        np.testing.assert_array_equal(back.cell_region, coarse_rod.cell_region)
        assert back.cell_type == "prism"
        assert set(back.boundary) == set(coarse_rod.boundary)

    def test_rejects_garbage(self, tmp_path):
        p = tmp_path / "bad.mesh"
        p.write_text("hello\n")
        with pytest.raises(MeshError):
            read_mesh(p)

    def test_summary(self, coarse_rod):
        s = mesh_summary(coarse_rod)
        assert s["cells"] == coarse_rod.n_cells
        assert s["fiber_measure"] == pytest.approx(coarse_rod.region_measure(FIBER))


@given(st.floats(0.1, 0.8), st.sampled_from([0.3, 0.2, 0.15]))
def test_section_partition_property(r, h):
    """Fiber plus matrix cells tile the outer polygon for any admissible radius."""
    m = build_section_mesh(SectionGeometry("disk", 1.0, r), h)
    assert m.region_measure(FIBER) + m.region_measure(MATRIX) == pytest.approx(m.region_measure(), rel=1e-13)
    assert m.region_measure() == pytest.approx(polygon_area(m.points[ring_from_edges(m.boundary["outer"])]), rel=1e-12)
    assert m.region_measure(FIBER) == pytest.approx(m.metadata["fiber_polygon_area"], rel=1e-12)
