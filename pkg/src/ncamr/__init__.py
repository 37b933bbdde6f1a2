"""Hanging-node adaptive mesh refinement for high-order H1 finite elements.

Refinement-tree meshes with anisotropic splits, master/slave interface
discovery, the conforming prolongation ``P``, variational restriction of
Poisson problems, space-filling-curve partitioning and a simulated
multi-rank engine.
"""
from .errors import *  # noqa: F401,F403
from .ncmesh import NCMesh, NIL
from .meshio import dumps, hex_grid, load, loads, quad_grid, save, tri_grid, write_vtk
from .fespace import FESpace
from .interfaces import build_interface_list
from .conforming import build_P
from .assembly import assemble_poisson, solve_poisson
from .adaptivity import BenchmarkProblem, amr_loop
from .partition import equipartition, sfc_enumerate
from .distsim import construct_parallel_P, distribute, load_balance, refine_distributed

__version__ = "0.1.0"
