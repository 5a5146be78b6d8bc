"""Digital-twin toolkit for 3D electrical capacitance tomography.

Simulates gas-liquid two-phase flow in a virtual 12-electrode sensor,
solves the coupled electrostatics for inter-electrode capacitances,
synthesizes labeled measurement datasets, and reconstructs normalized
permittivity volumes with LBP and Landweber baselines plus quality
metrics.
"""

from .constants import (
    AIR_PERMITTIVITY,
    OIL_PERMITTIVITY,
    PIPE_WALL_PERMITTIVITY,
    VACUUM_PERMITTIVITY,
)
from .dataset import (
    DatasetSample,
    NoiseSpec,
    add_noise,
    generate_dataset,
    load_sample,
    read_manifest,
    sample_conditions,
    validate_dataset,
)
from .electrostatics import (
    CapacitanceFrame,
    SensitivityMatrix,
    calibration_frames,
    compute_sensitivity,
    electrode_charge,
    measure_frame,
    normalize_frame,
    shield_charge,
    solve_potential,
    uniform_permittivity,
)
from .errors import (
    ConfigError,
    DatasetError,
    DegenerateCalibrationError,
    Ect3dError,
    SimulationError,
    SolverError,
    StabilityError,
    WallResolutionError,
)
from .flow import (
    FlowConditions,
    FlowDomain,
    FluidProperties,
    VelocityField,
    levelset_step,
    mixture_properties,
    ns_step,
    phase_to_permittivity,
    simulate_flow,
    uniform_phase,
)
from .geometry import SensorGeometry, VoxelGrid, build_grid, electrode_pairs
from .recon import (
    QualityReport,
    landweber,
    lbp,
    lvc_series,
    metrics,
)

__version__ = "0.1.0"
