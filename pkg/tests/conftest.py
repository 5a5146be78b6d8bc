"""Shared fixtures: desk-scale grids and cached expensive artifacts.

The default sensor wall (2.5 mm) needs ~32 cells across the shield
diameter to resolve; the desk geometry thickens the wall to 5 mm so the
16-cell grids used throughout the suite stay valid.
"""

import numpy as np
import pytest

from ect3d import electrostatics as es
from ect3d.flow import FluidProperties
from ect3d.geometry import SensorGeometry, build_grid


@pytest.fixture(scope="session")
def desk_geometry():
    return SensorGeometry(pipe_outer_diameter=0.060)


@pytest.fixture(scope="session")
def grid16(desk_geometry):
    """16x16x16 sensor grid, the acceptance-criteria workhorse."""
    return build_grid(desk_geometry, (16, 16, 16))


@pytest.fixture(scope="session")
def grid16_tall(desk_geometry):
    """16x16x32 grid for flow tests (finer axial resolution)."""
    return build_grid(desk_geometry, (16, 16, 32))


@pytest.fixture(scope="session")
def props():
    return FluidProperties()


@pytest.fixture(scope="session")
def sensitivity16(grid16):
    return es.compute_sensitivity(grid16)


@pytest.fixture(scope="session")
def calibration16(grid16):
    return es.calibration_frames(grid16)


def make_plate_grid(nx, ny, nz, h=0.001):
    """Parallel-plate capacitor: conductor slabs at x=0 and x=nx-1."""
    from ect3d.geometry import LUMEN, VoxelGrid

    region = np.full((nx, ny, nz), LUMEN, dtype=np.uint8)
    electrode_id = np.full((nx, ny, nz), -1, dtype=np.int16)
    electrode_id[0] = 0
    electrode_id[-1] = 1
    shield = np.zeros((nx, ny, nz), dtype=bool)
    return VoxelGrid(
        nx=nx, ny=ny, nz=nz, spacing=(h, h, h), origin=(0.0, 0.0, 0.0),
        region=region, electrode_id=electrode_id, shield=shield, n_electrodes=2,
    )


@pytest.fixture(scope="session")
def phantom_suite(grid16, desk_geometry):
    """Ten void-fraction phantoms: five gas spheres, five gas slugs."""
    grid = grid16
    cx, cy, cz = grid.cell_centers()
    x, y, z = np.meshgrid(cx, cy, cz, indexing="ij")
    radius = desk_geometry.inner_radius
    height = desk_geometry.domain_height

    def sphere(x0, y0, z0, r):
        phi = (np.sqrt((x - x0) ** 2 + (y - y0) ** 2 + (z - z0) ** 2) <= r).astype(float)
        phi[~grid.lumen_mask] = 0.0
        return phi

    def slug(z0, z1, r=None):
        mask = (z >= z0) & (z <= z1)
        if r is not None:
            mask &= np.hypot(x, y) <= r
        phi = mask.astype(float)
        phi[~grid.lumen_mask] = 0.0
        return phi

    return [
        sphere(0.0, 0.0, 0.5 * height, 0.35 * radius),
        sphere(0.3 * radius, 0.0, 0.4 * height, 0.3 * radius),
        sphere(-0.3 * radius, 0.2 * radius, 0.6 * height, 0.4 * radius),
        sphere(0.0, -0.35 * radius, 0.3 * height, 0.3 * radius),
        sphere(0.2 * radius, 0.2 * radius, 0.7 * height, 0.45 * radius),
        slug(0.2 * height, 0.5 * height),
        slug(0.4 * height, 0.8 * height),
        slug(0.1 * height, 0.35 * height),
        slug(0.3 * height, 0.7 * height, 0.6 * radius),
        slug(0.55 * height, 0.95 * height, 0.7 * radius),
    ]
