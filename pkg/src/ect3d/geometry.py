"""Sensor geometry and Cartesian voxelization.

The virtual sensor is a vertical dielectric pipe carrying the two-phase
flow, wrapped by rectangular electrodes arranged in axial layers and
enclosed by a grounded cylindrical shield.  The computational domain is a
box spanning the shield diameter in x/y and the full pipe height in z,
discretized into cells labeled lumen / pipe wall / exterior, with
electrode and shield conductor cells marked on top of the exterior
region.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, WallResolutionError

# Region codes stored per voxel.
LUMEN = 0
WALL = 1
EXTERIOR = 2

REGION_NAMES = {LUMEN: "lumen", WALL: "pipe_wall", EXTERIOR: "exterior"}


@dataclass(frozen=True)
class SensorGeometry:
    """Dimensions of the 12-electrode, 3-layer cylindrical sensor.

    All lengths in meters, angles in degrees.  Defaults describe the
    50/55 mm pipe with three layers of four electrodes, 15 mm long with
    an 85 degree coverage angle.
    """

    pipe_inner_diameter: float = 0.050
    pipe_outer_diameter: float = 0.055
    electrode_layers: int = 3
    electrodes_per_layer: int = 4
    electrode_axial_length: float = 0.015
    electrode_coverage_angle: float = 85.0
    layer_axial_gap: float = 0.010
    shield_radius: float = 0.040
    domain_height: float = 0.100

    def __post_init__(self):
        if not 0 < self.pipe_inner_diameter < self.pipe_outer_diameter:
            raise ConfigError("pipe diameters must satisfy 0 < inner < outer")
        if self.electrode_layers < 1 or self.electrodes_per_layer < 1:
            raise ConfigError("electrode counts must be positive")
        if self.electrodes_per_layer * self.electrode_coverage_angle >= 360.0:
            raise ConfigError(
                "electrodes overlap: per-layer coverage "
                f"{self.electrodes_per_layer} x {self.electrode_coverage_angle} deg >= 360 deg"
            )
        stack = (
            self.electrode_layers * self.electrode_axial_length
            + (self.electrode_layers - 1) * self.layer_axial_gap
        )
        if stack > self.domain_height:
            raise ConfigError(
                f"electrode stack {stack:.4f} m exceeds domain height {self.domain_height:.4f} m"
            )
        if self.shield_radius <= self.pipe_outer_diameter / 2:
            raise ConfigError("shield radius must exceed the pipe outer radius")
        if self.electrode_axial_length <= 0 or self.electrode_coverage_angle <= 0:
            raise ConfigError("electrode dimensions must be positive")
        if self.layer_axial_gap < 0:
            raise ConfigError("layer axial gap must be non-negative")

    @property
    def n_electrodes(self) -> int:
        return self.electrode_layers * self.electrodes_per_layer

    @property
    def n_measurements(self) -> int:
        n = self.n_electrodes
        return n * (n - 1) // 2

    @property
    def inner_radius(self) -> float:
        return self.pipe_inner_diameter / 2

    @property
    def outer_radius(self) -> float:
        return self.pipe_outer_diameter / 2

    @property
    def wall_thickness(self) -> float:
        return (self.pipe_outer_diameter - self.pipe_inner_diameter) / 2

    def layer_z_spans(self) -> list[tuple[float, float]]:
        """Axial [start, end] of each electrode layer, bottom to top, centered in the domain."""
        stack = (
            self.electrode_layers * self.electrode_axial_length
            + (self.electrode_layers - 1) * self.layer_axial_gap
        )
        z0 = (self.domain_height - stack) / 2
        spans = []
        for layer in range(self.electrode_layers):
            start = z0 + layer * (self.electrode_axial_length + self.layer_axial_gap)
            spans.append((start, start + self.electrode_axial_length))
        return spans

    def electrode_angular_centers(self) -> list[float]:
        """Angular center (deg) of each electrode position within a layer."""
        step = 360.0 / self.electrodes_per_layer
        return [k * step for k in range(self.electrodes_per_layer)]

    def to_dict(self) -> dict:
        return {
            "pipe_inner_diameter": self.pipe_inner_diameter,
            "pipe_outer_diameter": self.pipe_outer_diameter,
            "electrode_layers": self.electrode_layers,
            "electrodes_per_layer": self.electrodes_per_layer,
            "electrode_axial_length": self.electrode_axial_length,
            "electrode_coverage_angle": self.electrode_coverage_angle,
            "layer_axial_gap": self.layer_axial_gap,
            "shield_radius": self.shield_radius,
            "domain_height": self.domain_height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorGeometry":
        return cls(**d)


@dataclass(frozen=True)
class VoxelGrid:
    """Cell-centered Cartesian discretization of the sensor domain.

    ``region`` labels every cell lumen / wall / exterior.  Conductors are
    marked on exterior cells: ``electrode_id`` holds the electrode index
    (-1 elsewhere) on the one-cell ring hugging the pipe outer surface,
    and ``shield`` flags grounded cells at and beyond the shield radius.
    Arrays are frozen after construction; the grid is safe to share.
    """

    nx: int
    ny: int
    nz: int
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    region: np.ndarray
    electrode_id: np.ndarray
    shield: np.ndarray
    n_electrodes: int
    geometry: SensorGeometry | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.region, self.electrode_id, self.shield):
            arr.setflags(write=False)

    # -- masks and orderings -------------------------------------------------

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def lumen_mask(self) -> np.ndarray:
        return self.region == LUMEN

    @property
    def conductor_mask(self) -> np.ndarray:
        """Cells held at a fixed potential: electrodes plus shield."""
        return (self.electrode_id >= 0) | self.shield

    @property
    def lumen_indices(self) -> np.ndarray:
        """Flat C-order indices of lumen cells; defines the voxel ordering
        of permittivity vectors and sensitivity-matrix columns."""
        if "lumen_indices" not in self._cache:
            idx = np.flatnonzero(self.region.ravel() == LUMEN)
            idx.setflags(write=False)
            self._cache["lumen_indices"] = idx
        return self._cache["lumen_indices"]

    @property
    def n_lumen(self) -> int:
        return int(self.lumen_indices.size)

    @property
    def cell_volume(self) -> float:
        hx, hy, hz = self.spacing
        return hx * hy * hz

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """1-D center coordinates along each axis."""
        hx, hy, hz = self.spacing
        x0, y0, z0 = self.origin
        cx = x0 + (np.arange(self.nx) + 0.5) * hx
        cy = y0 + (np.arange(self.ny) + 0.5) * hy
        cz = z0 + (np.arange(self.nz) + 0.5) * hz
        return cx, cy, cz

    def electrode_cells(self, electrode: int) -> np.ndarray:
        if not 0 <= electrode < self.n_electrodes:
            raise ConfigError(f"electrode index {electrode} outside 0..{self.n_electrodes - 1}")
        return self.electrode_id == electrode

    def electrode_surface_faces(self, electrode: int) -> int:
        """Number of labeled faces between the electrode and the pipe wall."""
        cells = self.electrode_cells(electrode)
        wall = self.region == WALL
        count = 0
        count += np.count_nonzero(cells[1:, :, :] & wall[:-1, :, :])
        count += np.count_nonzero(cells[:-1, :, :] & wall[1:, :, :])
        count += np.count_nonzero(cells[:, 1:, :] & wall[:, :-1, :])
        count += np.count_nonzero(cells[:, :-1, :] & wall[:, 1:, :])
        return count

    def embed_lumen(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Scatter a lumen-ordered vector into a dense (nx, ny, nz) box."""
        values = np.asarray(values)
        if values.shape != (self.n_lumen,):
            raise ConfigError(f"expected lumen vector of length {self.n_lumen}, got {values.shape}")
        box = np.full(self.nx * self.ny * self.nz, fill, dtype=values.dtype)
        box[self.lumen_indices] = values
        return box.reshape(self.shape)

    def extract_lumen(self, box: np.ndarray) -> np.ndarray:
        """Gather lumen cells of a dense box array into the canonical ordering."""
        box = np.asarray(box)
        if box.shape != self.shape:
            raise ConfigError(f"expected box of shape {self.shape}, got {box.shape}")
        return box.reshape(-1)[self.lumen_indices].copy()

    @property
    def grid_hash(self) -> str:
        if "hash" not in self._cache:
            h = hashlib.sha256()
            h.update(np.asarray([self.nx, self.ny, self.nz], dtype="<i8").tobytes())
            h.update(np.asarray(self.spacing, dtype="<f8").tobytes())
            h.update(np.asarray(self.origin, dtype="<f8").tobytes())
            h.update(self.region.astype("<u1").tobytes())
            h.update(self.electrode_id.astype("<i2").tobytes())
            h.update(self.shield.astype("<u1").tobytes())
            self._cache["hash"] = h.hexdigest()
        return self._cache["hash"]

    def descriptor(self) -> dict:
        """JSON-friendly structural summary used in file headers."""
        return {
            "shape": [self.nx, self.ny, self.nz],
            "spacing": list(self.spacing),
            "origin": list(self.origin),
            "n_electrodes": self.n_electrodes,
            "n_lumen": self.n_lumen,
            "grid_hash": self.grid_hash,
        }


def electrode_pairs(electrodes: "SensorGeometry | int") -> list[tuple[int, int]]:
    """All unordered electrode pairs (i, j) with i < j in lexicographic order.

    Row order of capacitance frames and sensitivity matrices.
    """
    n = electrodes.n_electrodes if isinstance(electrodes, SensorGeometry) else int(electrodes)
    if n < 2:
        raise ConfigError("at least two electrodes are required")
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def build_grid(geometry: SensorGeometry, resolution: tuple[int, int, int]) -> VoxelGrid:
    """Voxelize the sensor: label regions, mark electrode and shield cells.

    The box spans [-shield_radius, shield_radius] in x and y and
    [0, domain_height] in z.  Cells are labeled by centroid radius
    (staircase cylinder).  Electrode conductors occupy the first ring of
    exterior cells touching the wall, within each electrode's angular and
    axial extent; the outermost cell hull and everything at or beyond the
    shield radius is grounded shield.

    Raises WallResolutionError when the pipe wall is thinner than one
    voxel (the wall ring would be breached), ConfigError when electrodes
    collide with the shield or end up empty or disconnected.
    Deterministic for fixed inputs.
    """
    nx, ny, nz = (int(r) for r in resolution)
    if min(nx, ny, nz) < 8:
        raise ConfigError(f"resolution {resolution} too coarse; need at least 8 cells per axis")

    half_width = geometry.shield_radius
    hx = 2 * half_width / nx
    hy = 2 * half_width / ny
    hz = geometry.domain_height / nz
    if geometry.wall_thickness < max(hx, hy) * (1.0 - 1e-9):
        raise WallResolutionError(
            "wall unresolved: pipe wall thickness "
            f"{geometry.wall_thickness * 1e3:.2f} mm is below the in-plane voxel size "
            f"{max(hx, hy) * 1e3:.2f} mm; increase resolution or thicken the wall"
        )

    origin = (-half_width, -half_width, 0.0)
    cx = origin[0] + (np.arange(nx) + 0.5) * hx
    cy = origin[1] + (np.arange(ny) + 0.5) * hy
    cz = origin[2] + (np.arange(nz) + 0.5) * hz
    rad = np.hypot(cx[:, None], cy[None, :])

    region2d = np.full((nx, ny), EXTERIOR, dtype=np.uint8)
    region2d[rad <= geometry.inner_radius] = LUMEN
    region2d[(rad > geometry.inner_radius) & (rad <= geometry.outer_radius)] = WALL
    _check_wall_closed(region2d)
    region = np.repeat(region2d[:, :, None], nz, axis=2)

    shield2d = rad >= geometry.shield_radius
    shield2d[0, :] = shield2d[-1, :] = True
    shield2d[:, 0] = shield2d[:, -1] = True
    if np.any(shield2d & (region2d != EXTERIOR)):
        raise ConfigError("shield cells intersect the pipe; enlarge shield_radius")
    shield = np.repeat(shield2d[:, :, None], nz, axis=2)

    # Ring of exterior cells sharing an x/y face with a wall cell.
    wall2d = region2d == WALL
    ring2d = np.zeros((nx, ny), dtype=bool)
    ring2d[1:, :] |= wall2d[:-1, :]
    ring2d[:-1, :] |= wall2d[1:, :]
    ring2d[:, 1:] |= wall2d[:, :-1]
    ring2d[:, :-1] |= wall2d[:, 1:]
    ring2d &= region2d == EXTERIOR
    if np.any(ring2d & shield2d):
        raise ConfigError(
            "electrode ring reaches the shield; enlarge shield_radius or refine the grid"
        )

    theta = np.degrees(np.arctan2(cy[None, :], cx[:, None]))
    electrode_id = np.full((nx, ny, nz), -1, dtype=np.int16)
    half_cov = geometry.electrode_coverage_angle / 2
    spans = geometry.layer_z_spans()
    centers = geometry.electrode_angular_centers()
    for layer, (z_lo, z_hi) in enumerate(spans):
        in_z = (cz >= z_lo) & (cz <= z_hi)
        for k, center in enumerate(centers):
            dtheta = (theta - center + 180.0) % 360.0 - 180.0
            in_arc = ring2d & (np.abs(dtheta) <= half_cov)
            e = layer * geometry.electrodes_per_layer + k
            electrode_id[:, :, in_z] = np.where(
                in_arc[:, :, None], np.int16(e), electrode_id[:, :, in_z]
            )

    grid = VoxelGrid(
        nx=nx, ny=ny, nz=nz,
        spacing=(hx, hy, hz),
        origin=origin,
        region=region,
        electrode_id=electrode_id,
        shield=shield,
        n_electrodes=geometry.n_electrodes,
        geometry=geometry,
    )
    _validate_electrodes(grid)
    return grid


def _check_wall_closed(region2d: np.ndarray) -> None:
    """The staircase wall ring must separate lumen from exterior cells."""
    lum = region2d == LUMEN
    ext = region2d == EXTERIOR
    breached = (
        np.any(lum[1:, :] & ext[:-1, :])
        or np.any(lum[:-1, :] & ext[1:, :])
        or np.any(lum[:, 1:] & ext[:, :-1])
        or np.any(lum[:, :-1] & ext[:, 1:])
    )
    if breached:
        raise WallResolutionError(
            "wall unresolved: the staircase wall ring is breached at this resolution"
        )


def _validate_electrodes(grid: VoxelGrid) -> None:
    structure = np.ones((3, 3, 3), dtype=bool)
    for e in range(grid.n_electrodes):
        cells = grid.electrode_id == e
        if not cells.any():
            raise ConfigError(f"electrode {e} has no cells at this resolution")
        _, n_components = ndimage.label(cells, structure=structure)
        if n_components != 1:
            raise ConfigError(f"electrode {e} is split into {n_components} disconnected parts")
        if grid.electrode_surface_faces(e) == 0:
            raise ConfigError(f"electrode {e} has no faces on the pipe outer surface")
