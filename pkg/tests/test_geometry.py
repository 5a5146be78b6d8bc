import numpy as np
import pytest

from ect3d.errors import ConfigError, WallResolutionError
from ect3d.geometry import (
    EXTERIOR,
    LUMEN,
    WALL,
    SensorGeometry,
    build_grid,
    electrode_pairs,
)


def test_default_geometry_counts():
    g = SensorGeometry()
    assert g.n_electrodes == 12
    assert g.n_measurements == 66


def test_geometry_invariants_enforced():
    with pytest.raises(ConfigError):
        SensorGeometry(electrodes_per_layer=5, electrode_coverage_angle=85.0)  # 425 deg
    with pytest.raises(ConfigError):
        SensorGeometry(shield_radius=0.020)
    with pytest.raises(ConfigError):
        SensorGeometry(domain_height=0.050)  # stack is 65 mm
    with pytest.raises(ConfigError):
        SensorGeometry(pipe_inner_diameter=0.060)


def test_electrode_pairs_order_and_counts():
    pairs = electrode_pairs(SensorGeometry())
    assert len(pairs) == 66
    assert pairs[0] == (0, 1)
    assert pairs[-1] == (10, 11)
    assert pairs == sorted(pairs)
    assert electrode_pairs(2) == [(0, 1)]
    assert len(electrode_pairs(4)) == 6


def test_default_grid_has_twelve_electrodes():
    grid = build_grid(SensorGeometry(), (32, 32, 64))
    ids = set(np.unique(grid.electrode_id)) - {-1}
    assert ids == set(range(12))


def test_coarse_grid_wall_unresolved():
    with pytest.raises(WallResolutionError):
        build_grid(SensorGeometry(), (8, 8, 8))


def test_grid_determinism():
    a = build_grid(SensorGeometry(), (32, 32, 48))
    b = build_grid(SensorGeometry(), (32, 32, 48))
    assert a.grid_hash == b.grid_hash
    assert np.array_equal(a.region, b.region)
    assert np.array_equal(a.electrode_id, b.electrode_id)


def test_lumen_volume_close_to_cylinder():
    g = SensorGeometry()
    analytic = np.pi * g.inner_radius**2 * g.domain_height

    def err(n):
        grid = build_grid(g, (n, n, 32))
        return abs(grid.n_lumen * grid.cell_volume - analytic) / analytic

    coarse = err(32)
    assert coarse < 0.05
    # staircase quantization is not monotone step to step, but it converges
    assert err(96) < coarse


def test_unknowns_dominate_measurements():
    grid = build_grid(SensorGeometry(), (32, 32, 64))
    assert grid.n_lumen > 100 * 66


def test_electrode_cells_disjoint_nonempty(grid16):
    seen = np.zeros(grid16.shape, dtype=int)
    for e in range(12):
        cells = grid16.electrode_cells(e)
        assert cells.any()
        assert grid16.electrode_surface_faces(e) > 0
        seen += cells
    assert seen.max() == 1  # no cell belongs to two electrodes


def test_electrodes_on_exterior_only(grid16):
    marked = grid16.electrode_id >= 0
    assert np.all(grid16.region[marked] == EXTERIOR)
    assert not np.any(marked & grid16.shield)


def test_wall_separates_lumen_from_exterior(grid16):
    region = grid16.region
    lum = region == LUMEN
    ext = region == EXTERIOR
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        assert not np.any(lum[tuple(lo)] & ext[tuple(hi)])
        assert not np.any(lum[tuple(hi)] & ext[tuple(lo)])


def test_lumen_embed_extract_roundtrip(grid16):
    rng = np.random.default_rng(4)
    vec = rng.random(grid16.n_lumen)
    box = grid16.embed_lumen(vec)
    assert np.array_equal(grid16.extract_lumen(box), vec)
    assert box[~grid16.lumen_mask].sum() == 0.0


def test_grid_arrays_immutable(grid16):
    with pytest.raises(ValueError):
        grid16.region[0, 0, 0] = 2
