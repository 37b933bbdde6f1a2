"""Partition a randomly refined grid along both curves and write VTK files
colored by rank, for viewing in ParaView or VisIt."""
import numpy as np

from ncamr import partition as part
from ncamr.corpus import _random_refine
from ncamr.meshio import quad_grid, write_vtk

mesh = quad_grid(4, 4)
_random_refine(mesh, np.random.default_rng(7), 6, aniso=False)
for curve in (part.Z, part.HILBERT):
    assign = part.equipartition(part.sfc_enumerate(mesh, curve), 5)
    rank = assign.rank_of()
    write_vtk(mesh, f"partition_{curve}.vtk",
              cell_data={"rank": np.array([rank[e] for e in mesh.leaves])})
    print(f"{curve:8s} cut {part.stats(mesh, assign).cut}  -> partition_{curve}.vtk")
