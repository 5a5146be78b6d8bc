"""Physical constants and default material values for the virtual sensor."""

# Vacuum permittivity (F/m).
VACUUM_PERMITTIVITY = 8.8541878128e-12

# Relative permittivity of the pipe wall material.
PIPE_WALL_PERMITTIVITY = 2.6

# Air at ambient conditions.
AIR_DENSITY = 1.3            # kg/m^3
AIR_VISCOSITY = 1.81e-5      # Pa s
AIR_PERMITTIVITY = 1.0

# Industrial white oil.
OIL_DENSITY = 879.0          # kg/m^3
OIL_VISCOSITY = 0.02         # Pa s
OIL_PERMITTIVITY = 2.18

# Inlet velocity envelope of the reference flow facility (m/s).
GAS_VELOCITY_RANGE = (0.236, 2.362)
LIQUID_VELOCITY_RANGE = (0.071, 0.708)

STANDARD_GRAVITY = 9.80665   # m/s^2
