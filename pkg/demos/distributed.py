"""Run the simulated ranks through a few refine/balance rounds, mirroring
each refinement on a serial copy, and check the parallel Galerkin product
against the serial one after each round."""
import numpy as np

from ncamr import distsim as ds
from ncamr.meshio import quad_grid

serial = quad_grid(4, 4)
rms = ds.distribute(serial, 4)
rng = np.random.default_rng(1)
for round_ in range(3):
    marked = {}
    for rm in rms:
        marked[rm.rank] = [e for e in rm.owned if rng.random() < 0.3]
        for e in marked[rm.rank]:
            serial.refine(serial.element_by_path(*rm.mesh.element_path(e)))
    tr = ds.refine_distributed(rms, marked)
    report = ds.load_balance(rms, tr)
    diff, par = ds.compare_with_serial(serial, rms, 2)
    print(f"round {round_}: leaves {serial.num_leaves}  sizes {report.sizes}  "
          f"messages {tr.messages}  max|diff| {diff:.2e}")
