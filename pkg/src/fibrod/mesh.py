"""Region-tagged meshes for fibered rods, periodic fiber arrays and cells.

Cross-sections are built from nested closed rings of nodes. Every ring is
parametrized by ``t in [0, 1)`` starting at the angle ``-3*pi/4`` (the
lower-left corner of a square), so consecutive rings can be stitched by
merging their parameter sequences. Fiber rings are concentric circles
around a center node; matrix rings are circles (disk sections) or blends
of the fiber circle with the outer square. Stitching is done on the first
half of each ring and copied to the second half, which makes every section
mesh exactly invariant under ``x -> -x`` at the index level.

3D meshes are prism extrusions of section meshes along ``x3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from fibrod.tensors import FIBER, MATRIX

THETA0 = -0.75 * np.pi

CELL_NODES = {"triangle": 3, "prism": 6, "tetra": 4}
CELL_DIM = {"triangle": 2, "prism": 3, "tetra": 3}
FILE_CELL_NAMES = {"triangle": "tri", "prism": "prism", "tetra": "tet"}


class MeshError(ValueError):
    """Invalid geometry or mesh parameters."""


@dataclass(frozen=True)
class SectionGeometry:
    """Cross-section: outer boundary (disk of radius ``outer_size`` or square of
    half-side ``outer_size``) containing a centered circular fiber of radius
    ``fiber_radius``."""

    outer: str = "disk"
    outer_size: float = 1.0
    fiber_radius: float = 0.5

    def __post_init__(self) -> None:
        if self.outer not in ("disk", "square"):
            raise MeshError(f"unsupported outer boundary {self.outer!r}")
        if not (self.outer_size > 0 and self.fiber_radius > 0):
            raise MeshError("geometry sizes must be positive")
        # the inscribed distance of the outer boundary is outer_size for both shapes
        if self.fiber_radius >= self.outer_size * (1.0 - 1e-9):
            raise MeshError("fiber touches or crosses the outer boundary")

    @property
    def outer_area(self) -> float:
        a = self.outer_size
        return np.pi * a * a if self.outer == "disk" else 4.0 * a * a

    @property
    def fiber_area(self) -> float:
        return np.pi * self.fiber_radius ** 2


@dataclass(frozen=True, eq=False)
class RegionTaggedMesh:
    """A triangle, prism or tetrahedron mesh with fiber/matrix cell tags.

    ``boundary`` maps a tag to an array of facets (edges in 2D; triangles or
    quads in 3D). Extruded meshes keep their ``section`` and ``x3_nodes``;
    node ``k * nv2 + j`` sits above section node ``j`` at height
    ``x3_nodes[k]``. Periodic cell meshes carry ``periodic_pairs`` with
    ``(source, image)`` vertex pairs for the ``x`` and ``y`` directions.
    Periodic array meshes record the owning ε-cell of every cell and the
    local (cell-coordinate) positions of its vertices.
    """

    points: np.ndarray
    cells: np.ndarray
    cell_type: str
    cell_region: np.ndarray
    boundary: dict[str, np.ndarray] = field(default_factory=dict)
    section: "RegionTaggedMesh | None" = None
    x3_nodes: np.ndarray | None = None
    periodic_pairs: dict[str, np.ndarray] | None = None
    geometry: SectionGeometry | None = None
    cell_owner: np.ndarray | None = None
    cell_local_points: np.ndarray | None = None
    eps: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.cell_type not in CELL_NODES:
            raise MeshError(f"unknown cell type {self.cell_type!r}")
        if self.cells.ndim != 2 or self.cells.shape[1] != CELL_NODES[self.cell_type]:
            raise MeshError("cell array does not match cell type")
        if self.cells.shape[0] != self.cell_region.shape[0]:
            raise MeshError("one region tag per cell required")
        for arr in (self.points, self.cells, self.cell_region):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return CELL_DIM[self.cell_type]

    @property
    def n_vertices(self) -> int:
        return self.points.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def chi_fiber(self) -> np.ndarray:
        return (self.cell_region == FIBER).astype(float)

    @property
    def chi_matrix(self) -> np.ndarray:
        return (self.cell_region == MATRIX).astype(float)

    def cell_measures(self) -> np.ndarray:
        return cell_measures(self.points, self.cells, self.cell_type)

    def region_measure(self, region: int | None = None) -> float:
        vol = self.cell_measures()
        if region is None:
            return float(vol.sum())
        return float(vol[self.cell_region == region].sum())

    def boundary_vertices(self, tag: str) -> np.ndarray:
        if tag not in self.boundary:
            raise MeshError(f"mesh has no boundary tag {tag!r}")
        return np.unique(self.boundary[tag])

    def region_vertices(self, region: int) -> np.ndarray:
        """Vertices of the closure of a region."""
        return np.unique(self.cells[self.cell_region == region])

    @property
    def layers(self) -> int:
        if self.x3_nodes is None:
            raise MeshError("not an extruded mesh")
        return len(self.x3_nodes) - 1


# ----------------------------------------------------------------------------
# geometry helpers


def cell_measures(points: np.ndarray, cells: np.ndarray, cell_type: str) -> np.ndarray:
    """Areas of triangles or volumes of prisms/tetrahedra."""
    if cell_type == "triangle":
        p = points[cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if cell_type == "prism":
        base = cell_measures(points[:, :2], cells[:, :3], "triangle")
        height = points[cells[:, 3], 2] - points[cells[:, 0], 2]
        return base * height
    p = points[cells]
    return np.einsum("ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0])) / 6.0


def polygon_area(xy: np.ndarray) -> float:
    """Shoelace area of a closed polygon given by its vertices in order."""
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(xy: np.ndarray) -> np.ndarray:
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def fiber_segments(r: float, h: float) -> int:
    """Number of segments of the inscribed fiber polygon: at least max(16, 2*pi*r/h), a multiple of 8."""
    return _round8(max(16, int(np.ceil(2.0 * np.pi * r / h - 1e-9))))


def _round8(n: int | float) -> int:
    return int(8 * np.ceil(n / 8.0 - 1e-12))


# ----------------------------------------------------------------------------
# ring construction and stitching


def _circle(radius: float, n: int) -> np.ndarray:
    t = np.arange(n) / n
    ang = THETA0 + 2.0 * np.pi * t
    return radius * np.column_stack([np.cos(ang), np.sin(ang)])


def _square_edge_table(a: float, n_side: int) -> np.ndarray:
    """Shared coordinate table so opposite edges get bitwise equal coordinates."""
    return -a + 2.0 * a * (np.arange(n_side + 1) / n_side)


def _square(a: float, n_total: int) -> np.ndarray:
    """Square of half-side ``a`` with ``n_total = 4*n_side`` nodes, counterclockwise
    from the lower-left corner."""
    n = n_total // 4
    s = _square_edge_table(a, n)
    lo, hi = s[0], s[-1]
    bottom = np.column_stack([s[:-1], np.full(n, lo)])
    right = np.column_stack([np.full(n, hi), s[:-1]])
    top = np.column_stack([s[::-1][:-1], np.full(n, hi)])
    left = np.column_stack([np.full(n, lo), s[::-1][:-1]])
    return np.vstack([bottom, right, top, left])


def _blend(r: float, a: float, s: float, n: int) -> np.ndarray:
    if s == 1.0:
        return _square(a, n)
    return (1.0 - s) * _circle(r, n) + s * _square(a, n)


def _zip_rings(inner: np.ndarray, outer: np.ndarray) -> np.ndarray:
    """Triangulate the band between two rings given as global node ids.

    Ring node ``k`` of a ring with ``n`` nodes sits at parameter ``k/n``.
    Only the first half is stitched; the second half is the index-shifted
    copy, which keeps the mesh centrally symmetric.
    """
    na, nb = len(inner), len(outer)
    if na % 2 or nb % 2:
        raise MeshError("ring node counts must be even")
    ha, hb = na // 2, nb // 2
    local: list[tuple[int, int, int]] = []  # entries: (ring, index) encoded as +i inner / -(j+1) outer
    i = j = 0
    while i < ha or j < hb:
        if i < ha and (j == hb or (i + 1) * nb <= (j + 1) * na):
            local.append((("a", i), ("a", i + 1), ("b", j)))
            i += 1
        else:
            local.append((("a", i), ("b", j + 1), ("b", j)))
            j += 1
    tris = []
    for shift_a, shift_b in ((0, 0), (ha, hb)):
        for tri in local:
            ids = []
            for ring, k in tri:
                if ring == "a":
                    ids.append(inner[(k + shift_a) % na])
                else:
                    ids.append(outer[(k + shift_b) % nb])
            tris.append(ids)
    return np.asarray(tris, dtype=np.int64)


def _fan(center: int, ring: np.ndarray) -> np.ndarray:
    n = len(ring)
    return np.column_stack([np.full(n, center), ring, np.roll(ring, -1)]).astype(np.int64)


@dataclass
class _RingBuilder:
    points: list = field(default_factory=list)
    count: int = 0

    def add(self, xy: np.ndarray) -> np.ndarray:
        ids = np.arange(self.count, self.count + len(xy))
        self.points.append(np.asarray(xy, dtype=float).reshape(-1, 2))
        self.count += len(xy)
        return ids


def _orient_ccw(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    area = cell_measures(points, tris, "triangle")
    tris = tris.copy()
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def _ring_edges(ring: np.ndarray) -> np.ndarray:
    return np.column_stack([ring, np.roll(ring, -1)]).astype(np.int64)


def _section_rings(
    geom: SectionGeometry,
    h: float,
    with_fiber: bool,
    with_matrix: bool,
    square_side_nodes: int | None = None,
):
    if not h > 0:
        raise MeshError("mesh size h must be positive")
    r = geom.fiber_radius
    n_fib = fiber_segments(r, h)
    b = _RingBuilder()
    tris: list[np.ndarray] = []
    regions: list[np.ndarray] = []
    info: dict[str, np.ndarray] = {}

    n_radial_f = max(1, int(np.ceil(r / h - 1e-9)))
    if with_fiber:
        center = b.add(np.zeros((1, 2)))[0]
        prev = None
        for j in range(1, n_radial_f + 1):
            rho = r * j / n_radial_f
            n = n_fib if j == n_radial_f else min(n_fib, max(8, _round8(np.ceil(2 * np.pi * rho / h))))
            if prev is not None and n < len(prev):
                n = len(prev)
            ring = b.add(_circle(rho, n))
            t = _fan(center, ring) if prev is None else _zip_rings(prev, ring)
            tris.append(t)
            regions.append(np.full(len(t), FIBER, dtype=np.int8))
            prev = ring
        interface = prev
    else:
        interface = b.add(_circle(r, n_fib))
    info["interface"] = interface

    if with_matrix:
        prev = interface
        if geom.outer == "disk":
            R = geom.outer_size
            n_radial = max(1, int(np.ceil((R - r) / h - 1e-9)))
            for j in range(1, n_radial + 1):
                rho = r + (R - r) * j / n_radial
                n = max(len(prev), _round8(np.ceil(2 * np.pi * rho / h)))
                ring = b.add(_circle(rho, n))
                t = _zip_rings(prev, ring)
                tris.append(t)
                regions.append(np.full(len(t), MATRIX, dtype=np.int8))
                prev = ring
        else:
            a = geom.outer_size
            if square_side_nodes is None:
                n_side = 2 * int(np.ceil(a / h - 1e-9))
            else:
                n_side = int(square_side_nodes)
            n_sq = 4 * n_side
            if n_sq % 8:
                raise MeshError("square boundary needs an even number of segments per side")
            n_sq = max(n_sq, len(interface)) if square_side_nodes is None else n_sq
            if n_sq < len(interface):
                raise MeshError("outer square is coarser than the fiber polygon")
            gap = 0.5 * ((a - r) + (np.sqrt(2.0) * a - r))
            n_radial = max(1, int(np.ceil(gap / h - 1e-9)))
            for j in range(1, n_radial + 1):
                s = j / n_radial
                n = n_sq if j == n_radial else max(len(prev), _round8(len(interface) + (n_sq - len(interface)) * s))
                n = min(n, n_sq)
                ring = b.add(_blend(r, a, s, n))
                t = _zip_rings(prev, ring)
                tris.append(t)
                regions.append(np.full(len(t), MATRIX, dtype=np.int8))
                prev = ring
            info["square_side_nodes"] = np.array([n_sq // 4])
        info["outer"] = prev
    else:
        info["outer"] = interface

    points = np.vstack(b.points)
    tri = np.vstack(tris) if tris else np.zeros((0, 3), dtype=np.int64)
    reg = np.concatenate(regions) if regions else np.zeros(0, dtype=np.int8)
    tri = _orient_ccw(points, tri)
    return points, tri, reg, info


def _compress(points: np.ndarray, tris: np.ndarray, info: dict[str, np.ndarray]):
    """Drop vertices not referenced by any triangle and renumber."""
    used = np.zeros(len(points), dtype=bool)
    used[tris.ravel()] = True
    new_id = np.full(len(points), -1, dtype=np.int64)
    new_id[used] = np.arange(used.sum())
    out = {}
    for k, v in info.items():
        if k == "square_side_nodes":
            out[k] = v
        else:
            out[k] = new_id[v]
    return points[used], new_id[tris], out


def _square_boundary_tags(points: np.ndarray, outer_ring: np.ndarray, a: float) -> dict[str, np.ndarray]:
    edges = _ring_edges(outer_ring)
    p = points[edges]
    tags = {}
    tol = 1e-12 * a
    tags["bottom"] = edges[np.all(np.abs(p[:, :, 1] + a) <= tol, axis=1)]
    tags["right"] = edges[np.all(np.abs(p[:, :, 0] - a) <= tol, axis=1)]
    tags["top"] = edges[np.all(np.abs(p[:, :, 1] - a) <= tol, axis=1)]
    tags["left"] = edges[np.all(np.abs(p[:, :, 0] + a) <= tol, axis=1)]
    return tags


def build_section_mesh(geom: SectionGeometry, h: float, domain: str = "full") -> RegionTaggedMesh:
    """2D cross-section mesh of the full section, the fiber only, or the matrix only.

    Boundary tags: ``outer`` (edges of the outer boundary, absent for the
    fiber-only mesh), ``interface`` (the fiber polygon), and for squares
    ``left``, ``right``, ``bottom``, ``top``.
    """
    if domain not in ("full", "fiber", "matrix"):
        raise MeshError(f"unknown section domain {domain!r}")
    points, tris, reg, info = _section_rings(geom, h, domain != "matrix", domain != "fiber")
    points, tris, info = _compress(points, tris, info)
    boundary = {"interface": _ring_edges(info["interface"])}
    if domain != "fiber":
        boundary["outer"] = _ring_edges(info["outer"])
        if geom.outer == "square":
            boundary.update(_square_boundary_tags(points, info["outer"], geom.outer_size))
    meta = {
        "h": h,
        "domain": domain,
        "fiber_segments": len(info["interface"]),
        "fiber_polygon_area": polygon_area(points[info["interface"]]),
        "outer_polygon_area": polygon_area(points[info["outer"]]) if domain != "fiber" else None,
    }
    return RegionTaggedMesh(points, tris, "triangle", reg, boundary, geometry=geom, metadata=meta)


def region_submesh(mesh: RegionTaggedMesh, region: int) -> tuple[RegionTaggedMesh, np.ndarray]:
    """Cells of one region of a 2D mesh as a standalone mesh.

    Returns the submesh and ``parent_vertex`` with ``sub.points[i] ==
    mesh.points[parent_vertex[i]]``; cell order is preserved.
    """
    if mesh.cell_type != "triangle":
        raise MeshError("submeshes are taken from 2D section meshes")
    keep = np.flatnonzero(mesh.cell_region == region)
    if len(keep) == 0:
        raise MeshError("region has no cells")
    parent = np.unique(mesh.cells[keep])
    local = np.full(mesh.n_vertices, -1, dtype=np.int64)
    local[parent] = np.arange(len(parent))
    cells = local[mesh.cells[keep]]
    boundary = {}
    for tag, edges in mesh.boundary.items():
        inside = np.all(local[edges] >= 0, axis=1)
        if inside.any():
            boundary[tag] = local[edges[inside]]
    meta = dict(mesh.metadata)
    meta["parent_cells"] = keep
    sub = RegionTaggedMesh(
        mesh.points[parent], cells, "triangle", mesh.cell_region[keep], boundary,
        geometry=mesh.geometry, metadata=meta,
    )
    return sub, parent


def _periodic_pairs(points: np.ndarray, a: float) -> dict[str, np.ndarray]:
    tol = 1e-12 * a
    x, y = points[:, 0], points[:, 1]
    pairs = {}
    for key, coord, other in (("x", x, y), ("y", y, x)):
        lo = np.flatnonzero(np.abs(coord + a) <= tol)
        hi = np.flatnonzero(np.abs(coord - a) <= tol)
        lo = lo[np.argsort(other[lo], kind="stable")]
        hi = hi[np.argsort(other[hi], kind="stable")]
        if len(lo) != len(hi) or np.any(other[lo] != other[hi]):
            raise MeshError("opposite cell edges do not match")
        pairs[key] = np.column_stack([lo, hi])
    return pairs


def build_cell_mesh(r: float, h: float | None = None, n_side: int | None = None) -> RegionTaggedMesh:
    """Periodic mesh of the unit cell ``Y = (-1/2, 1/2)^2`` with the fiber disk ``D``.

    Either ``h`` or the number of boundary segments per side ``n_side``
    (even) is given; ``periodic_pairs`` holds the left/right (``x``) and
    bottom/top (``y``) vertex pairs.
    """
    if not 0 < r < 0.5:
        raise MeshError("cell fiber radius must satisfy 0 < r < 1/2")
    if n_side is None:
        if h is None or not h > 0:
            raise MeshError("cell mesh needs h > 0 or n_side")
        n_side = 2 * int(np.ceil(0.5 / h - 1e-9))
    if n_side % 2:
        raise MeshError("n_side must be even")
    h_eff = 1.0 / n_side if h is None else h
    geom = SectionGeometry("square", 0.5, r)
    points, tris, reg, info = _section_rings(geom, h_eff, True, True, square_side_nodes=n_side)
    boundary = {"interface": _ring_edges(info["interface"]), "outer": _ring_edges(info["outer"])}
    boundary.update(_square_boundary_tags(points, info["outer"], 0.5))
    pairs = _periodic_pairs(points, 0.5)
    meta = {
        "h": h_eff,
        "n_side": n_side,
        "fiber_segments": len(info["interface"]),
        "fiber_polygon_area": polygon_area(points[info["interface"]]),
        "outer_polygon_area": 1.0,
    }
    return RegionTaggedMesh(points, tris, "triangle", reg, boundary, periodic_pairs=pairs, geometry=geom, metadata=meta)


# ----------------------------------------------------------------------------
# 3D extrusion


def layer_nodes(length: float, layers: int, grading: float = 1.0) -> np.ndarray:
    """``layers + 1`` nodes on ``[0, length]``; ``grading > 1`` clusters nodes at both ends.

    Graded nodes follow ``x = length * (1 - cos(pi s)) / 2`` blended with
    uniform spacing: ``grading = 1`` is uniform, ``grading = 2`` fully cosine.
    """
    if layers < 1:
        raise MeshError("at least one layer required")
    s = np.arange(layers + 1) / layers
    if grading == 1.0:
        x = length * s
    else:
        if not 1.0 <= grading <= 2.0:
            raise MeshError("grading must lie in [1, 2]")
        w = grading - 1.0
        x = length * ((1.0 - w) * s + w * 0.5 * (1.0 - np.cos(np.pi * s)))
    x[0], x[-1] = 0.0, length
    return x


def extrude(section: RegionTaggedMesh, x3: np.ndarray) -> RegionTaggedMesh:
    """Prism extrusion of a triangle mesh through the given ``x3`` nodes."""
    if section.cell_type != "triangle":
        raise MeshError("only triangle meshes can be extruded")
    x3 = np.asarray(x3, dtype=float)
    if x3.ndim != 1 or len(x3) < 2 or np.any(np.diff(x3) <= 0):
        raise MeshError("x3 nodes must be strictly increasing")
    nv2, nl = section.n_vertices, len(x3) - 1
    pts = np.column_stack([np.tile(section.points, (nl + 1, 1)), np.repeat(x3, nv2)])
    tri = section.cells
    k = np.arange(nl)[:, None, None]
    cells = np.concatenate([tri[None] + k * nv2, tri[None] + (k + 1) * nv2], axis=2).reshape(-1, 6)
    region = np.tile(section.cell_region, nl)
    boundary = {"end_bottom": tri.copy(), "end_top": tri + nl * nv2}
    for tag, edges in section.boundary.items():
        quads = np.concatenate(
            [edges[None] + k[:, :, :1] * nv2, edges[None, :, ::-1] + (k[:, :, :1] + 1) * nv2], axis=2
        ).reshape(-1, 4)
        boundary["lateral" if tag == "outer" else tag] = quads
    owner = None if section.cell_owner is None else np.tile(section.cell_owner, nl)
    local = None if section.cell_local_points is None else np.tile(section.cell_local_points, (nl, 1, 1))
    meta = dict(section.metadata)
    meta.update({"layers": nl, "length": float(x3[-1])})
    return RegionTaggedMesh(
        pts, cells, "prism", region, boundary, section=section, x3_nodes=x3,
        geometry=section.geometry, cell_owner=owner, cell_local_points=local, eps=section.eps, metadata=meta,
    )


def build_rod_mesh(
    geom: SectionGeometry,
    length: float,
    h: float,
    layers: int | None = None,
    grading: float = 1.0,
    x3_nodes: np.ndarray | None = None,
) -> RegionTaggedMesh:
    """3D mesh of ``omega x (0, length)``: the section mesh extruded in
    ``ceil(length/h)`` layers unless ``layers`` or explicit ``x3_nodes`` are given."""
    if not length > 0:
        raise MeshError("rod length must be positive")
    section = build_section_mesh(geom, h, "full")
    if x3_nodes is None:
        nl = layers if layers is not None else int(np.ceil(length / h - 1e-9))
        x3_nodes = layer_nodes(length, nl, grading)
    return extrude(section, x3_nodes)


def prisms_to_tetrahedra(mesh: RegionTaggedMesh) -> RegionTaggedMesh:
    """Split every prism into three tetrahedra (consistent diagonals via vertex ordering)."""
    if mesh.cell_type != "prism":
        raise MeshError("expected a prism mesh")
    c = mesh.cells
    tets = []
    for p in c:
        a, b, cc, d, e, f = p
        # split using the lowest-index vertex of every quad face so neighbors agree
        tets.extend(_split_prism(a, b, cc, d, e, f))
    tets = np.asarray(tets, dtype=np.int64)
    vol = cell_measures(mesh.points, tets, "tetra")
    flip = vol < 0
    tets[flip] = tets[flip][:, [0, 2, 1, 3]]
    region = np.repeat(mesh.cell_region, 3)
    return RegionTaggedMesh(mesh.points, tets, "tetra", region, dict(mesh.boundary), geometry=mesh.geometry,
                            x3_nodes=mesh.x3_nodes, metadata=dict(mesh.metadata))


def _split_prism(a, b, c, d, e, f):
    # rotate so that the smallest vertex index is on the bottom triangle at position 0
    bottom, top = [a, b, c], [d, e, f]
    m = min(range(6), key=lambda i: (bottom + top)[i])
    if m >= 3:
        bottom, top = top, bottom
        m -= 3
    bottom = bottom[m:] + bottom[:m]
    top = top[m:] + top[:m]
    a, b, c = bottom
    d, e, f = top
    if min(b, f) < min(c, e):
        return [(a, b, c, f), (a, b, f, e), (a, e, f, d)]
    return [(a, b, c, e), (a, e, c, f), (a, e, f, d)]


# ----------------------------------------------------------------------------
# periodic fiber array


def build_periodic_array_mesh(
    ell: float,
    eps: float,
    r: float,
    n_per_cell: int,
    layers: int | None = None,
    x3_nodes: np.ndarray | None = None,
    cell: RegionTaggedMesh | None = None,
) -> RegionTaggedMesh:
    """Mesh of ``(-ell, ell)^2 x (0, ell)`` tiled by ε-cells each containing a fiber of radius ``eps*r``.

    Shared cell edges are merged through the periodic vertex pairing of the
    cell mesh, so no geometric tolerance is involved. ``cell_owner`` gives the
    ε-cell index ``i1 * k + i2`` of every prism and ``cell_local_points``
    the cell coordinates ``y`` of its vertices.
    """
    if not (ell > 0 and eps > 0):
        raise MeshError("ell and eps must be positive")
    k_float = 2.0 * ell / eps
    k = int(round(k_float))
    if k < 1 or abs(k - k_float) > 1e-9 * k_float:
        raise MeshError(f"eps = {eps} does not divide 2*ell = {2 * ell}")
    if n_per_cell < 8:
        raise MeshError("n_per_cell must be at least 8 to resolve the fiber disk")
    if n_per_cell % 2:
        raise MeshError("n_per_cell must be even")
    if cell is None:
        cell = build_cell_mesh(r, n_side=n_per_cell)
    P = cell.points
    nvc = len(P)
    px, py = cell.periodic_pairs["x"], cell.periodic_pairs["y"]
    left_to_right = dict(zip(px[:, 0].tolist(), px[:, 1].tolist()))
    bottom_to_top = dict(zip(py[:, 0].tolist(), py[:, 1].tolist()))

    ids = np.empty((k, k, nvc), dtype=np.int64)
    coords: list[np.ndarray] = []
    count = 0
    for i1 in range(k):
        for i2 in range(k):
            local = np.full(nvc, -1, dtype=np.int64)
            if i1 > 0:
                for l, rgt in left_to_right.items():
                    local[l] = ids[i1 - 1, i2, rgt]
            if i2 > 0:
                for btm, tp in bottom_to_top.items():
                    if local[btm] < 0:
                        local[btm] = ids[i1, i2 - 1, tp]
            new = local < 0
            nnew = int(new.sum())
            local[new] = np.arange(count, count + nnew)
            count += nnew
            center = np.array([-ell + eps * (i1 + 0.5), -ell + eps * (i2 + 0.5)])
            coords.append(center + eps * P[new])
            ids[i1, i2] = local
    points = np.vstack(coords)
    tris = np.vstack([ids[i1, i2][cell.cells] for i1 in range(k) for i2 in range(k)])
    region = np.tile(cell.cell_region, k * k)
    owner = np.repeat(np.arange(k * k), cell.n_cells)
    local_pts = np.tile(P[cell.cells], (k * k, 1, 1))

    edge_tags: dict[str, list] = {"left": [], "right": [], "bottom": [], "top": []}
    for i in range(k):
        edge_tags["left"].append(ids[0, i][cell.boundary["left"]])
        edge_tags["right"].append(ids[k - 1, i][cell.boundary["right"]])
        edge_tags["bottom"].append(ids[i, 0][cell.boundary["bottom"]])
        edge_tags["top"].append(ids[i, k - 1][cell.boundary["top"]])
    boundary = {t: np.vstack(v) for t, v in edge_tags.items()}
    boundary["outer"] = np.vstack([boundary[t] for t in ("bottom", "right", "top", "left")])
    boundary["interface"] = np.vstack([ids[i1, i2][cell.boundary["interface"]] for i1 in range(k) for i2 in range(k)])
    meta = {
        "eps": eps, "cells_per_side": k, "n_per_cell": n_per_cell, "fiber_radius": r,
        "cell_fiber_area": cell.metadata["fiber_polygon_area"], "cell_mesh": cell,
    }
    section = RegionTaggedMesh(
        points, tris, "triangle", region, boundary, geometry=SectionGeometry("square", ell, eps * r),
        cell_owner=owner, cell_local_points=local_pts, eps=eps, metadata=meta,
    )
    if x3_nodes is None:
        x3_nodes = layer_nodes(ell, layers if layers is not None else 8)
    return extrude(section, x3_nodes)


# ----------------------------------------------------------------------------
# ASCII mesh format


def write_mesh(mesh: RegionTaggedMesh, path: str | Path) -> None:
    """Write the ``fibrod-mesh v1`` ASCII format."""
    path = Path(path)
    lines = [f"fibrod-mesh v1 dim={mesh.dim}", f"vertices {mesh.n_vertices}"]
    fmt = " ".join(["{:.17g}"] * mesh.points.shape[1])
    lines.extend(fmt.format(*p) for p in mesh.points.tolist())
    lines.append(f"cells {mesh.n_cells}")
    name = FILE_CELL_NAMES[mesh.cell_type]
    for ids, reg in zip(mesh.cells.tolist(), mesh.cell_region.tolist()):
        lines.append(f"{name} {' '.join(map(str, ids))} {'fiber' if reg == FIBER else 'matrix'}")
    facets = [(tag, f) for tag in sorted(mesh.boundary) for f in mesh.boundary[tag].tolist()]
    lines.append(f"boundary {len(facets)}")
    lines.extend(f"{tag} {' '.join(map(str, f))}" for tag, f in facets)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write mesh file {path}: {exc}") from exc


def read_mesh(path: str | Path) -> RegionTaggedMesh:
    """Read a mesh written by :func:`write_mesh` (structure metadata is not restored)."""
    lines = Path(path).read_text().splitlines()
    it = iter(lines)
    header = next(it).split()
    if header[:2] != ["fibrod-mesh", "v1"]:
        raise MeshError(f"{path}: not a fibrod-mesh v1 file")
    dim = int(header[2].split("=")[1])
    nv = int(next(it).split()[1])
    pts = np.array([[float(v) for v in next(it).split()] for _ in range(nv)]).reshape(nv, dim)
    nc = int(next(it).split()[1])
    names = {v: k for k, v in FILE_CELL_NAMES.items()}
    ctype, cells, region = None, [], []
    for _ in range(nc):
        parts = next(it).split()
        ctype = names[parts[0]]
        cells.append([int(v) for v in parts[1:-1]])
        region.append(FIBER if parts[-1] == "fiber" else MATRIX)
    nb = int(next(it).split()[1])
    bnd: dict[str, list] = {}
    for _ in range(nb):
        parts = next(it).split()
        bnd.setdefault(parts[0], []).append([int(v) for v in parts[1:]])
    boundary = {k: np.asarray(v, dtype=np.int64) for k, v in bnd.items()}
    return RegionTaggedMesh(
        pts, np.asarray(cells, dtype=np.int64).reshape(nc, -1), ctype or "triangle",
        np.asarray(region, dtype=np.int8), boundary,
    )


def mesh_summary(mesh: RegionTaggedMesh) -> dict:
    """Counts and polygonal-approximation defects reported in run manifests."""
    out = {
        "cell_type": mesh.cell_type,
        "vertices": mesh.n_vertices,
        "cells": mesh.n_cells,
        "fiber_measure": mesh.region_measure(FIBER),
        "matrix_measure": mesh.region_measure(MATRIX),
    }
    geom = mesh.geometry
    if geom is not None:
        length = float(mesh.x3_nodes[-1]) if mesh.x3_nodes is not None else 1.0
        if mesh.eps is None:
            out["fiber_area_defect"] = geom.fiber_area * length - out["fiber_measure"]
            out["total_area_defect"] = geom.outer_area * length - out["fiber_measure"] - out["matrix_measure"]
        else:
            r = mesh.metadata.get("fiber_radius")
            out["cell_fiber_area_defect"] = np.pi * r * r - mesh.metadata["cell_fiber_area"]
    return out
