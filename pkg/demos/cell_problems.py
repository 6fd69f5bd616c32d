"""Effective coefficients from corrector problems.

Run with ``python demos/cell_problems.py``. Prints the 1D harmonic mean, the
2D checkerboard under refinement with its extrapolated limit and the
Voigt and Reuss bounds, and a p=4 power-law cell value.
"""

import numpy as np

from stochunfold.cell import Ahom_refined, assemble_Ahom, corrector_convex, voigt_reuss
from stochunfold.env import EnvironmentSpec, Phase, checkerboard
from stochunfold.integrands import PowerLaw

layered = EnvironmentSpec("torus", 1, (Phase(1.0), Phase(4.0)), L=2, config=[0, 1])
print("1D layers {1, 4}:", assemble_Ahom(layered, k=1)[0, 0], "(harmonic mean 1.6)")

board = checkerboard(2, Phase(1.0), Phase(4.0))
ext, mats = Ahom_refined(board, ks=(1, 2, 4, 8))
for k, M in zip((1, 2, 4, 8), mats):
    print(f"checkerboard k={k}: {M[0, 0]:.6f}")
print(f"extrapolated: {ext[0, 0]:.6f} (sqrt(1*4) = 2)")
lo, hi = voigt_reuss(board)
print("Reuss / Voigt bounds:", np.diag(lo), np.diag(hi))

power = EnvironmentSpec("torus", 1, (Phase(1.0), Phase(16.0)), L=2, config=[0, 1])
res = corrector_convex(power, PowerLaw.from_env(power, 4.0), [1.0], tol=1e-13)
print(f"p=4 layers {{1, 16}} at F=1: {res.value:.12f} after {res.iterations} Newton steps")
