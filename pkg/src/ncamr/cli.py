"""Command-line front end.

Exit codes: 0 success, 1 runtime error (message on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import sys
import warnings

import numpy as np

from . import adaptivity as amr
from . import distsim as ds
from . import meshio
from .conforming import build_P, write_coo
from .corpus import corpus
from .errors import NCAMRError
from .partition import HILBERT, Z, equipartition, sfc_enumerate, stats


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _add_mesh_source(sp):
    src = sp.add_argument_group("mesh source (one of)")
    src.add_argument("mesh", nargs="?", help="replay-format mesh file")
    src.add_argument("--corpus", metavar="NAME", help="built-in regression mesh by name")
    src.add_argument("--grid", type=_positive, nargs=2, metavar=("NX", "NY"),
                     help="NX x NY quad grid on the unit square")
    src.add_argument("--random-refine", type=_nonneg, default=0, metavar="STEPS",
                     help="random isotropic refinement rounds applied to --grid (default 0)")
    src.add_argument("--seed", type=int, default=0, help="seed for --random-refine")


def _mesh_from(args, parser):
    given = [x for x in (args.mesh, args.corpus, args.grid) if x]
    if len(given) != 1:
        parser.error("give exactly one of MESH, --corpus or --grid")
    if args.mesh:
        return meshio.load(args.mesh)
    if args.corpus:
        meshes = dict(corpus())
        if args.corpus not in meshes:
            parser.error(f"unknown corpus mesh {args.corpus!r}; choose from {', '.join(meshes)}")
        return meshes[args.corpus]
    mesh = meshio.quad_grid(*args.grid)
    if args.random_refine:
        from .corpus import _random_refine
        _random_refine(mesh, np.random.default_rng(args.seed), args.random_refine, aniso=False)
    return mesh


def build_parser():
    ap = argparse.ArgumentParser(prog="ncamr", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("benchmark", help="AMR loop on the wave-front Poisson problem")
    b.add_argument("--dim", type=int, choices=(2, 3), default=2)
    b.add_argument("--p", type=_positive, default=1, help="polynomial order")
    b.add_argument("--mode", choices=("uniform", "iso", "aniso"), default="iso")
    b.add_argument("--max-dofs", type=_positive, default=3000,
                   help="stop after the first iteration above this many true DOFs")
    b.add_argument("--max-iter", type=_positive, default=100)
    b.add_argument("--alpha", type=float, default=None, help="wave-front steepness")
    b.add_argument("--csv", default="convergence.csv", help="convergence log output")
    b.add_argument("--mesh-out", help="final mesh in replay format")
    b.add_argument("--vtk", help="final mesh and solution as legacy VTK")

    p = sub.add_parser("partition", help="space-filling-curve partition statistics")
    _add_mesh_source(p)
    p.add_argument("--ranks", "-k", type=_positive, default=2)
    p.add_argument("--curve", choices=(Z, HILBERT), default=None,
                   help="default: hilbert on 2D quad meshes, z otherwise")
    p.add_argument("--vtk", help="rank-colored VTK output")

    e = sub.add_parser("export", help="replay-format mesh to legacy VTK")
    e.add_argument("mesh")
    e.add_argument("out")

    m = sub.add_parser("pmatrix", help="write the conforming prolongation P")
    _add_mesh_source(m)
    m.add_argument("--p", type=_positive, default=1)
    m.add_argument("--out", default="-", help="coordinate-list file ('-' for stdout)")

    d = sub.add_parser("distcheck", help="compare serial and simulated parallel P^T A P")
    _add_mesh_source(d)
    d.add_argument("--p", type=_positive, default=1)
    d.add_argument("--ranks", "-k", type=_positive, nargs="+", default=[2, 3, 5, 8])
    d.add_argument("--curve", choices=(Z, HILBERT), default=None)
    d.add_argument("--tol", type=float, default=1e-12)
    d.add_argument("--trace", help="message trace CSV of the last run")
    return ap


# ----------------------------------------------------------------------
def cmd_benchmark(args, parser):
    kw = {} if args.alpha is None else {"alpha": args.alpha}
    problem = amr.BenchmarkProblem(dim=args.dim, **kw)
    final = {}

    def keep(rec, mesh, space, u_hat):
        final.update(mesh=mesh, space=space, u=u_hat)
        print(f"iter {rec.iter:3d}  dofs {rec.dofs:8d}  error {rec.error:.6e}  "
              f"elements {rec.elements:7d}  irregularity {rec.irregularity}")

    log = amr.amr_loop(problem, args.p, args.max_dofs, mode=args.mode,
                       max_iter=args.max_iter, callback=keep)
    log.to_csv(args.csv)
    if args.mesh_out:
        meshio.save(final["mesh"], args.mesh_out)
    if args.vtk:
        # the loop stops before refining, so mesh and space still match
        space, u = final["space"], final["u"]
        mesh = final["mesh"]
        vals = {v: u[i] for v, i in space.vertex_dof.items()}
        meshio.write_vtk(mesh, args.vtk, point_data={"u_h": vals})
    return 0


def cmd_partition(args, parser):
    mesh = _mesh_from(args, parser)
    curve = args.curve or ds.default_curve(mesh)
    assign = equipartition(sfc_enumerate(mesh, curve), args.ranks)
    st = stats(mesh, assign)
    print(f"curve {curve}  ranks {args.ranks}  leaves {len(assign.sequence)}")
    print(f"cut {st.cut}")
    for k, (n, box) in enumerate(zip(st.counts, st.boxes)):
        if box is None:
            print(f"rank {k}  elements {n}  box -")
        else:
            lo = " ".join(f"{x:.6g}" for x in box[0])
            hi = " ".join(f"{x:.6g}" for x in box[1])
            print(f"rank {k}  elements {n}  box [{lo}] [{hi}]")
    if args.vtk:
        rank = assign.rank_of()
        meshio.write_vtk(mesh, args.vtk, cell_data={"rank": np.array(
            [rank[e] for e in mesh.leaves], dtype=np.int64)})
    return 0


def cmd_export(args, parser):
    meshio.write_vtk(meshio.load(args.mesh), args.out)
    return 0


def cmd_pmatrix(args, parser):
    mesh = _mesh_from(args, parser)
    _, _, P = build_P(mesh, args.p)
    if args.out == "-":
        write_coo(sys.stdout, P.P)
    else:
        write_coo(args.out, P.P)
    return 0


def cmd_distcheck(args, parser):
    mesh = _mesh_from(args, parser)
    ok = True
    par = None
    for k in args.ranks:
        rms = ds.distribute(mesh, k, args.curve)
        diff, par = ds.compare_with_serial(mesh, rms, args.p)
        tr = par.transport
        good = diff <= args.tol and tr.conserved()
        ok &= good
        print(f"K={k}  max|diff| {diff:.3e}  messages {tr.messages}  "
              f"forwarded {tr.forwarded_messages}  iterations {par.iterations}  "
              f"{'ok' if good else 'MISMATCH'}")
    if args.trace and par is not None:
        par.transport.to_csv(args.trace)
    return 0 if ok else 1


COMMANDS = {"benchmark": cmd_benchmark, "partition": cmd_partition, "export": cmd_export,
            "pmatrix": cmd_pmatrix, "distcheck": cmd_distcheck}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)   # exits with 2 on usage errors
    try:
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message="coarse mesh walk")
            return COMMANDS[args.command](args, parser)
    except (NCAMRError, OSError, ValueError, KeyError) as exc:
        print(f"ncamr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
