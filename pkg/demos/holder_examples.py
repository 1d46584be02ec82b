"""Conical Hoelder seminorms under grid refinement.

Run with ``python3 demos/holder_examples.py``. A function that is smooth in the
cone coordinate keeps a bounded seminorm; the angular function ``Re z_1 / |z_1|``
does not.
"""

import numpy as np

from conekit.holder_metrics import cone_disc_points, grid_function, max_equivalence_ratio, refinement_sweep

tau = 0.75
cases = {
    "|z_1|^(2 tau)": lambda p: np.abs(p[:, 0]) ** (2 * tau),
    "Re z_1 / |z_1|": lambda p: np.where(np.abs(p[:, 0]) > 0, p[:, 0].real / np.maximum(np.abs(p[:, 0]), 1e-300), 0),
}
for name, fn in cases.items():
    rep = refinement_sweep(lambda n: grid_function(fn, cone_disc_points(n, tau)), [8, 16, 32, 64], 1.0, tau)
    print(f"{name:16s} seminorms {np.round(rep.history, 4)}  diverging={rep.diverging}")

for t in (0.5, 1 / 3):
    lo, hi = max_equivalence_ratio(cone_disc_points(16, t), t)
    print(f"tau={t:.3f}: d_xi / d_uniformization in [{lo:.3f}, {hi:.3f}], sharp bound {1 / t:.3f}")
