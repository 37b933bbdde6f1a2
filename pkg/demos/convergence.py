"""Compare uniform, isotropic and anisotropic refinement on the 2D benchmark.

Writes one convergence CSV per mode into the current directory and prints
the error each mode reaches at the largest DOF count all three share.
"""
import sys

from ncamr.adaptivity import BenchmarkProblem, amr_loop, error_at

p = int(sys.argv[1]) if len(sys.argv) > 1 else 1
max_dofs = int(sys.argv[2]) if len(sys.argv) > 2 else 5000

pb = BenchmarkProblem(dim=2)
logs = {}
for mode in ("uniform", "iso", "aniso"):
    logs[mode] = amr_loop(pb, p, max_dofs, mode=mode)
    logs[mode].to_csv(f"convergence_{mode}_p{p}.csv")

common = min(max(d for d in log.column("dofs") if d <= max_dofs) for log in logs.values())
print(f"p={p}, largest common DOF count {common}")
for mode, log in logs.items():
    print(f"  {mode:8s} error {error_at(log, common):.4e}  ({len(log.records)} iterations)")
