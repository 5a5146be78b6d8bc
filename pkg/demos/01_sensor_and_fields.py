"""Build the virtual sensor and look at one electrostatic solve.

Walks through the first half of the measurement chain: voxelize the
12-electrode sensor, fill the lumen with oil, excite one electrode, and
inspect the potential field and the resulting 66 raw capacitances.

Run:  python3 demos/01_sensor_and_fields.py   (writes PNGs next to itself)
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ect3d import electrostatics as es
from ect3d.geometry import SensorGeometry, build_grid, electrode_pairs

out_dir = Path(__file__).parent

# The default geometry is the 50/55 mm pipe with three layers of four
# electrodes.  32x32x64 resolves the 2.5 mm wall with one voxel.
geometry = SensorGeometry()
grid = build_grid(geometry, (32, 32, 64))
print(f"grid {grid.shape}, {grid.n_lumen} lumen voxels, "
      f"{grid.n_electrodes} electrodes, hash {grid.grid_hash[:12]}")

# Region map at the height of the middle electrode layer.
mid = grid.nz // 2
fig, axes = plt.subplots(1, 3, figsize=(13, 4))
axes[0].imshow(grid.region[:, :, mid].T, origin="lower", cmap="viridis")
axes[0].set_title("regions (lumen/wall/exterior)")
axes[1].imshow(grid.electrode_id[:, :, mid].T, origin="lower", cmap="tab20")
axes[1].set_title("electrode ids, middle layer")

# Uniform oil fill, excite electrode 5 (middle layer) at 1 V.
eps = es.uniform_permittivity(grid, 2.18)
phi = es.solve_potential(grid, eps, excited=5, v_exc=1.0)
im = axes[2].imshow(phi[:, :, mid].T, origin="lower", cmap="inferno")
axes[2].set_title("potential, electrode 5 at 1 V")
fig.colorbar(im, ax=axes[2])
fig.tight_layout()
fig.savefig(out_dir / "01_fields.png", dpi=120)
print("wrote 01_fields.png")

# The full frame: 12 solves, 66 pair capacitances ordered lexicographically.
frame = es.measure_frame(grid, eps)
pairs = electrode_pairs(geometry)
print(f"frame kind={frame.kind}, {len(frame)} values")
print("strongest coupling :", pairs[int(np.argmax(frame.values))],
      f"{frame.values.max():.3e} F")
print("weakest coupling   :", pairs[int(np.argmin(frame.values))],
      f"{frame.values.min():.3e} F")

# Charge conservation: everything induced lands on conductors.
total = sum(es.electrode_charge(grid, eps, phi, e) for e in range(12))
total += es.shield_charge(grid, eps, phi)
print(f"net conductor charge (should be ~0): {total:.3e} C")
