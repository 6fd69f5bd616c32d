"""Per-realization minimizers of an i.i.d. 1D energy.

Run with ``python demos/quenched.py [samples]``. The spread of the per-ω
distance to the homogenized minimizer shrinks like √ε; with few samples the
estimated spread is noisy enough to break monotonicity occasionally.
"""

import sys

import numpy as np

from stochunfold.env import EnvironmentSpec, Phase
from stochunfold.grid import Domain
from stochunfold.varmin import EnergySpec, quenched_study

samples = int(sys.argv[1]) if len(sys.argv) > 1 else 32
env = EnvironmentSpec("iid", 1, (Phase(1.0), Phase(4.0)), probs=[0.5, 0.5], seed=0)
res = quenched_study(EnergySpec(env, load=1.0), Domain.unit(1, 256), ["1/8", "1/16", "1/32", "1/64"],
                     seeds=samples, workers=None)
q = res.tables["quenched"]
std = np.array(q["std_l2_distance"])
for e, m, s, g in zip(q["eps"], q["mean_l2_distance"], std, q["mean_rel_energy_gap"]):
    print(f"eps={e:>5}  mean dist {m:.5f}  std {s:.5f}  energy gap {100 * g:.2f}%")
print("std ratio per halving:", np.round(std[1:] / std[:-1], 3), "(sqrt(1/2) = 0.707)")
