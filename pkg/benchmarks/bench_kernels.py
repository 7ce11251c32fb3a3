"""Compare the Cython and numpy element kernels on rod-mesh element data.

    python benchmarks/bench_kernels.py [--h 0.1] [--layers 20] [--repeat 5]

Times ``element_matrices`` (18x18 prism stiffness blocks), ``scatter_add_csr``
and a full energy assembly with each backend, and checks both backends
produce the same matrix.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fibrod.fem import _pykernels, assembly, operators
from fibrod.fem.assembly import MatrixAssembler, vector_dofs
from fibrod.fem.elements import element_data
from fibrod.mesh import SectionGeometry, build_rod_mesh
from fibrod.rod_micro import assemble_energy, rod_region_weights
from fibrod.tensors import ElasticityTensorField, make_isotropic

try:
    from fibrod.fem import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def assemble_with(backend, mesh, C, eps):
    saved = assembly.kernels.element_matrices, assembly.kernels.scatter_add_csr
    assembly.kernels.element_matrices = backend.element_matrices
    assembly.kernels.scatter_add_csr = backend.scatter_add_csr
    try:
        return assemble_energy(mesh, C, operators.strain_scales(eps), rod_region_weights(eps))
    finally:
        assembly.kernels.element_matrices, assembly.kernels.scatter_add_csr = saved


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=0.1)
    ap.add_argument("--layers", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    mesh = build_rod_mesh(SectionGeometry("disk", 1.0, 0.5), 1.0, args.h, layers=args.layers)
    C = ElasticityTensorField.constant(make_isotropic(1.0, 1.0))
    data = element_data(mesh)
    B = np.ascontiguousarray(operators.strain_B(data.grads, operators.strain_scales(0.1)))
    D = np.ascontiguousarray(np.broadcast_to(C.region_matrix(1), B.shape[:2] + (6, 6)))
    w = np.ascontiguousarray(data.weights)
    edofs = np.ascontiguousarray(vector_dofs(mesh.cells))
    print(f"mesh: {mesh.n_cells} prisms, {3 * mesh.n_vertices} dofs, {B.shape[1]} quadrature points per cell")

    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels is not None else [])
    results = {}
    for name, mod in backends:
        Ke = mod.element_matrices(B, D, w)
        asm = MatrixAssembler(mesh.cells, mesh.n_vertices)

        def scatter(mod=mod, Ke=Ke, asm=asm):
            asm.data[:] = 0.0
            mod.scatter_add_csr(asm.indptr, asm.indices, asm.data, edofs, Ke)

        t_elem = best_of(lambda mod=mod: mod.element_matrices(B, D, w), args.repeat)
        t_scat = best_of(scatter, args.repeat)
        t_full = best_of(lambda mod=mod: assemble_with(mod, mesh, C, 0.1), max(1, args.repeat // 2))
        results[name] = (t_elem, t_scat, t_full, assemble_with(mod, mesh, C, 0.1))
        print(f"{name:>7}: element_matrices {t_elem * 1e3:9.2f} ms   scatter {t_scat * 1e3:9.2f} ms   "
              f"full assembly {t_full * 1e3:9.2f} ms")
    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        diff = abs(py[3] - cy[3]).max() / abs(py[3]).max()
        print(f"speedup (python/cython): element_matrices {py[0] / cy[0]:.2f}x, scatter {py[1] / cy[1]:.2f}x, "
              f"full assembly {py[2] / cy[2]:.2f}x; max relative matrix difference {diff:.1e}")
    else:
        print("Cython kernels not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
