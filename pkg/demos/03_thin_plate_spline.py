"""Restricted thin-plate splines, the moment constraints and the fold check.

    python demos/03_thin_plate_spline.py
"""

from __future__ import annotations

import numpy as np

from extremal_deformation import SplineParams, check_bijectivity, complete_deltas, grid_sites
from extremal_deformation.tps import constraint_matrix, deform_points, jacobian_det

anchors = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.2]])

# %% two free deltas per axis; the first three are solved for
full = complete_deltas([0.3, -0.2], anchors)
print("completed deltas:", np.round(full, 4))
print("constraint residuals:", constraint_matrix(anchors) @ full)

# %% map a grid and look at the Jacobian determinant
params = SplineParams.from_free(1.1, 0.9, 0.2, 1.0, tuple(range(5)), anchors, [0.3, -0.2], [0.1, 0.05])
grid = grid_sites(5, 0.0, 1.0)
moved = deform_points(params, grid.coords)
print("\nfirst grid points and their images")
for g, m in list(zip(grid.coords, moved))[:5]:
    print(f"  ({g[0]:.2f}, {g[1]:.2f}) -> ({m[0]:.3f}, {m[1]:.3f})")
det = jacobian_det(params, grid.coords)
print(f"Jacobian determinant range {det.min():.3f} .. {det.max():.3f}")
print("bijective on [0, 1]^2:", check_bijectivity(params, (0, 1, 0, 1)))

# %% growing one delta eventually folds the map
for scale in (0.25, 0.5, 0.75, 1.0, 2.0):
    p = SplineParams.from_free(1.0, 1.0, 0.0, 1.0, tuple(range(5)), anchors, [scale, 0.0], [0.0, 0.0])
    print(f"delta_4 = {scale:4.1f}: bijective = {check_bijectivity(p, (0, 1, 0, 1))}")
