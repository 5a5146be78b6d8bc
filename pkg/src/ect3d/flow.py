"""Gas-liquid two-phase flow in the sensor lumen.

Incompressible Navier-Stokes with phase-dependent mixture density and
viscosity, advanced by an explicit projection method on a staggered
(MAC) grid restricted to the lumen cylinder, coupled to a conservative
level-set transport of the gas void fraction.  The void fraction drives
the mixture permittivity through the parallel (Wiener upper bound)
mixing rule, which is how flow states become electrostatic inputs.

Boundary conventions: no-slip pipe wall, prescribed inlet velocities at
the bottom (gas through a central disc, liquid through the annulus),
zero-pressure outlet at the top.  Closed and zero-gradient variants of
the end conditions exist for verification cases.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import LinearOperator, cg

from .constants import (
    AIR_DENSITY,
    AIR_PERMITTIVITY,
    AIR_VISCOSITY,
    OIL_DENSITY,
    OIL_PERMITTIVITY,
    OIL_VISCOSITY,
    PIPE_WALL_PERMITTIVITY,
    STANDARD_GRAVITY,
)
from .errors import ConfigError, SimulationError, SolverError, StabilityError
from .geometry import LUMEN, WALL, VoxelGrid

logger = logging.getLogger(__name__)

ADVECTIVE_CFL = 0.4

# Velocity above which a desk-scale run is considered blown up (m/s).
_BLOWUP_SPEED = 50.0


@dataclass(frozen=True)
class FluidProperties:
    """Densities, viscosities, permittivities, and body force of the two phases."""

    rho_l: float = OIL_DENSITY
    rho_g: float = AIR_DENSITY
    mu_l: float = OIL_VISCOSITY
    mu_g: float = AIR_VISCOSITY
    eps_l: float = OIL_PERMITTIVITY
    eps_g: float = AIR_PERMITTIVITY
    surface_tension: float = 0.0
    gravity: tuple[float, float, float] = (0.0, 0.0, -STANDARD_GRAVITY)

    def __post_init__(self):
        if min(self.rho_l, self.rho_g, self.mu_l, self.mu_g) <= 0:
            raise ConfigError("densities and viscosities must be positive")
        if min(self.eps_l, self.eps_g) < 1.0:
            raise ConfigError("relative permittivities must be >= 1")
        if self.surface_tension < 0:
            raise ConfigError("surface tension must be non-negative")

    def to_dict(self) -> dict:
        return {
            "rho_l": self.rho_l, "rho_g": self.rho_g,
            "mu_l": self.mu_l, "mu_g": self.mu_g,
            "eps_l": self.eps_l, "eps_g": self.eps_g,
            "surface_tension": self.surface_tension,
            "gravity": list(self.gravity),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FluidProperties":
        d = dict(d)
        if "gravity" in d:
            d["gravity"] = tuple(d["gravity"])
        return cls(**d)


@dataclass(frozen=True)
class FlowConditions:
    """One working condition of the virtual flow rig."""

    inlet_gas_velocity: float
    inlet_liquid_velocity: float
    initial_fill: str = "liquid"
    gas_inlet_radius_fraction: float = 0.5
    duration: float = 1.0
    output_interval: float = 0.1
    inlet_fluctuation: float = 0.0
    use_surface_tension: bool = False

    def __post_init__(self):
        if self.initial_fill not in ("liquid", "gas"):
            raise ConfigError(f"initial_fill must be 'liquid' or 'gas', got {self.initial_fill!r}")
        if self.inlet_gas_velocity < 0 or self.inlet_liquid_velocity < 0:
            raise ConfigError("inlet velocities must be non-negative")
        if not 0.0 < self.gas_inlet_radius_fraction < 1.0:
            raise ConfigError("gas_inlet_radius_fraction must lie in (0, 1)")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if not 0.0 < self.output_interval <= self.duration:
            raise ConfigError("output_interval must lie in (0, duration]")
        if not 0.0 <= self.inlet_fluctuation < 1.0:
            raise ConfigError("inlet_fluctuation must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "inlet_gas_velocity": self.inlet_gas_velocity,
            "inlet_liquid_velocity": self.inlet_liquid_velocity,
            "initial_fill": self.initial_fill,
            "gas_inlet_radius_fraction": self.gas_inlet_radius_fraction,
            "duration": self.duration,
            "output_interval": self.output_interval,
            "inlet_fluctuation": self.inlet_fluctuation,
            "use_surface_tension": self.use_surface_tension,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FlowConditions":
        return cls(**d)


@dataclass
class VelocityField:
    """MAC-staggered velocity components plus cell-centered pressure."""

    u: np.ndarray  # (nx+1, ny, nz)
    v: np.ndarray  # (nx, ny+1, nz)
    w: np.ndarray  # (nx, ny, nz+1)
    p: np.ndarray  # (nx, ny, nz)

    @classmethod
    def zeros(cls, shape: tuple[int, int, int]) -> "VelocityField":
        nx, ny, nz = shape
        return cls(
            u=np.zeros((nx + 1, ny, nz)),
            v=np.zeros((nx, ny + 1, nz)),
            w=np.zeros((nx, ny, nz + 1)),
            p=np.zeros((nx, ny, nz)),
        )

    def copy(self) -> "VelocityField":
        return VelocityField(self.u.copy(), self.v.copy(), self.w.copy(), self.p.copy())

    def max_speed(self) -> float:
        return max(
            float(np.abs(self.u).max()),
            float(np.abs(self.v).max()),
            float(np.abs(self.w).max()),
        )


class FlowDomain:
    """Lumen masks, face masks, and end conditions for the MAC solver.

    ``bottom`` is one of "velocity" (prescribed profile), "closed", or
    "gradient" (zero-gradient); ``top`` is "pressure" (zero-gradient
    velocity corrected against a p=0 ghost, the standard outflow),
    "closed", or "gradient".
    """

    def __init__(
        self,
        grid: VoxelGrid,
        bottom: str = "closed",
        top: str = "closed",
        inlet_velocity: np.ndarray | None = None,
        inlet_phi: np.ndarray | None = None,
    ):
        if bottom not in ("velocity", "closed", "gradient"):
            raise ConfigError(f"bad bottom condition {bottom!r}")
        if top not in ("pressure", "closed", "gradient"):
            raise ConfigError(f"bad top condition {top!r}")
        self.grid = grid
        self.bottom = bottom
        self.top = top
        self.fluid = grid.lumen_mask
        self.shape = grid.shape
        self.spacing = grid.spacing
        nx, ny, nz = grid.shape

        fl = self.fluid
        self.fx = np.zeros((nx + 1, ny, nz), dtype=bool)
        self.fy = np.zeros((nx, ny + 1, nz), dtype=bool)
        self.fz = np.zeros((nx, ny, nz + 1), dtype=bool)
        self.fx[1:-1] = fl[:-1] & fl[1:]
        self.fy[:, 1:-1] = fl[:, :-1] & fl[:, 1:]
        self.fz[:, :, 1:-1] = fl[:, :, :-1] & fl[:, :, 1:]
        self.bottom_faces = fl[:, :, 0]
        self.top_faces = fl[:, :, -1]

        if bottom == "velocity":
            if inlet_velocity is None:
                raise ConfigError("bottom='velocity' needs an inlet_velocity profile")
            self.inlet_velocity = np.where(self.bottom_faces, inlet_velocity, 0.0)
            self.inlet_phi = (
                np.where(self.bottom_faces, inlet_phi, 0.0)
                if inlet_phi is not None
                else np.zeros((nx, ny))
            )
        else:
            self.inlet_velocity = np.zeros((nx, ny))
            self.inlet_phi = np.zeros((nx, ny))
        self.n_fluid = int(fl.sum())

    @classmethod
    def from_conditions(cls, grid: VoxelGrid, cond: FlowConditions) -> "FlowDomain":
        """Standard rig setup: gas disc / liquid annulus inlet, pressure outlet."""
        if grid.geometry is None:
            raise ConfigError("grid lacks sensor geometry; build it with build_grid")
        cx, cy, _ = grid.cell_centers()
        rad = np.hypot(cx[:, None], cy[None, :])
        disc = rad <= cond.gas_inlet_radius_fraction * grid.geometry.inner_radius
        velocity = np.where(disc, cond.inlet_gas_velocity, cond.inlet_liquid_velocity)
        phi_in = np.where(disc, 1.0, 0.0)
        return cls(grid, bottom="velocity", top="pressure",
                   inlet_velocity=velocity, inlet_phi=phi_in)


# ---------------------------------------------------------------------------
# coupling to the electrostatics


def mixture_properties(phi, props: FluidProperties):
    """Mixture density, viscosity, and permittivity at void fraction phi.

    rho and mu interpolate linearly between the phases; the permittivity
    follows the parallel (upper-bound) mixing rule eps_g*phi + eps_l*(1-phi).
    """
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(phi < 0.0) or np.any(phi > 1.0):
        raise ConfigError("void fraction must lie in [0, 1]")
    rho = props.rho_l + (props.rho_g - props.rho_l) * phi
    mu = props.mu_l + (props.mu_g - props.mu_l) * phi
    eps = props.eps_g * phi + props.eps_l * (1.0 - phi)
    if phi.ndim == 0:
        return float(rho), float(mu), float(eps)
    return rho, mu, eps


def uniform_phase(grid: VoxelGrid, value: float) -> np.ndarray:
    """Void-fraction box with a uniform lumen value, zero elsewhere."""
    phi = np.zeros(grid.shape)
    phi[grid.lumen_mask] = value
    return phi


def phase_to_permittivity(
    phi: np.ndarray,
    grid: VoxelGrid,
    props: FluidProperties,
    wall_permittivity: float = PIPE_WALL_PERMITTIVITY,
) -> np.ndarray:
    """Permittivity box from a void-fraction box: mixing rule in the lumen,
    wall material on the pipe wall, unity outside."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != grid.shape:
        raise ConfigError(f"phase shape {phi.shape} != grid shape {grid.shape}")
    lum = grid.region == LUMEN
    if np.any(phi[lum] < 0.0) or np.any(phi[lum] > 1.0):
        raise ConfigError("void fraction must lie in [0, 1] on the lumen")
    eps = np.ones(grid.shape)
    eps[lum] = props.eps_g * phi[lum] + props.eps_l * (1.0 - phi[lum])
    eps[grid.region == WALL] = wall_permittivity
    return eps


# ---------------------------------------------------------------------------
# stencil helpers


def _pad_z(a: np.ndarray) -> np.ndarray:
    """Replicate the z edges (zero-gradient ghosts)."""
    return np.concatenate([a[:, :, :1], a, a[:, :, -1:]], axis=2)


def _upwind(q: np.ndarray, vel: np.ndarray, axis: int, h: float) -> np.ndarray:
    """First-order upwind derivative of q along axis, selected by vel's sign.

    Array edges fall back to zero-gradient; values there are overwritten
    by the boundary conditions anyway.
    """
    back = np.zeros_like(q)
    fwd = np.zeros_like(q)
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    diff = (q[tuple(hi)] - q[tuple(lo)]) / h
    back[tuple(hi)] = diff
    fwd[tuple(lo)] = diff
    return np.where(vel >= 0.0, back, fwd)


def _avg4(a: np.ndarray, ax1: int, ax2: int) -> np.ndarray:
    """Average over the 2x2 neighborhood straddling ax1 and ax2; shrinks both."""
    s0 = [slice(None)] * 3
    s1 = [slice(None)] * 3
    s0[ax1] = slice(None, -1)
    s1[ax1] = slice(1, None)
    first = a[tuple(s0)] + a[tuple(s1)]
    s0 = [slice(None)] * 3
    s1 = [slice(None)] * 3
    s0[ax2] = slice(None, -1)
    s1[ax2] = slice(1, None)
    return 0.25 * (first[tuple(s0)] + first[tuple(s1)])


def _shift_clamp(a: np.ndarray, axis: int, step: int) -> np.ndarray:
    """Neighbor values along axis with edge replication."""
    pad = [(0, 0)] * 3
    pad[axis] = (1, 1)
    ap = np.pad(a, pad, mode="edge")
    sl = [slice(None)] * 3
    sl[axis] = slice(1 + step, 1 + step + a.shape[axis])
    return ap[tuple(sl)]


def _viscous_laplacian(q: np.ndarray, comp: int, domain: FlowDomain) -> np.ndarray:
    """Laplacian of a velocity component with no-slip walls.

    Along the component's own axis the neighboring faces carry correct
    Dirichlet data (wall faces store zero exactly at the wall).  Along
    tangential axes a missing neighbor face means the wall runs halfway
    between samples, so the ghost is the reflection -q; open z ends fall
    back to zero-gradient.
    """
    masks = (domain.fx, domain.fy, domain.fz)
    active = masks[comp]
    out = np.zeros_like(q)
    for axis, h in zip(range(3), domain.spacing):
        plus = _shift_clamp(q, axis, +1)
        minus = _shift_clamp(q, axis, -1)
        if axis != comp:
            has_plus = _shift_clamp(active, axis, +1)
            has_minus = _shift_clamp(active, axis, -1)
            plus = np.where(has_plus, plus, -q)
            minus = np.where(has_minus, minus, -q)
            if axis == 2:
                plus[:, :, -1] = q[:, :, -1]
                minus[:, :, 0] = q[:, :, 0]
        out += (plus + minus - 2.0 * q) / h**2
    return out


def _face_density(rho: np.ndarray, shape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nx, ny, nz = shape
    rho_u = np.ones((nx + 1, ny, nz))
    rho_u[1:-1] = 0.5 * (rho[:-1] + rho[1:])
    rho_u[0], rho_u[-1] = rho[0], rho[-1]
    rho_v = np.ones((nx, ny + 1, nz))
    rho_v[:, 1:-1] = 0.5 * (rho[:, :-1] + rho[:, 1:])
    rho_v[:, 0], rho_v[:, -1] = rho[:, 0], rho[:, -1]
    rho_w = np.ones((nx, ny, nz + 1))
    rho_w[:, :, 1:-1] = 0.5 * (rho[:, :, :-1] + rho[:, :, 1:])
    rho_w[:, :, 0], rho_w[:, :, -1] = rho[:, :, 0], rho[:, :, -1]
    return rho_u, rho_v, rho_w


def _divergence(state: VelocityField, domain: FlowDomain) -> np.ndarray:
    hx, hy, hz = domain.spacing
    div = (
        (state.u[1:] - state.u[:-1]) / hx
        + (state.v[:, 1:] - state.v[:, :-1]) / hy
        + (state.w[:, :, 1:] - state.w[:, :, :-1]) / hz
    )
    div[~domain.fluid] = 0.0
    return div


def _enforce_face_bc(state: VelocityField, domain: FlowDomain,
                     inlet_velocity: np.ndarray | None = None) -> None:
    """Zero all non-fluid faces, then impose the end conditions."""
    state.u[~domain.fx] = 0.0
    state.v[~domain.fy] = 0.0
    state.w[~domain.fz] = 0.0
    bot, top = domain.bottom_faces, domain.top_faces
    if domain.bottom == "velocity":
        vel = domain.inlet_velocity if inlet_velocity is None else inlet_velocity
        state.w[:, :, 0][bot] = vel[bot]
    elif domain.bottom == "gradient":
        state.w[:, :, 0][bot] = state.w[:, :, 1][bot]
    if domain.top in ("pressure", "gradient"):
        state.w[:, :, -1][top] = state.w[:, :, -2][top]


def stability_limits(state: VelocityField, props: FluidProperties,
                     domain: FlowDomain) -> tuple[float, float]:
    """(advective, diffusive) time-step bounds for the momentum update."""
    h_min = min(domain.spacing)
    speed = state.max_speed()
    if domain.bottom == "velocity":
        speed = max(speed, float(np.abs(domain.inlet_velocity).max()))
    adv = ADVECTIVE_CFL * h_min / speed if speed > 0 else math.inf
    nu_max = max(props.mu_l / props.rho_l, props.mu_g / props.rho_g)
    diff = h_min**2 / (6.0 * nu_max)
    return adv, diff


# ---------------------------------------------------------------------------
# momentum + projection


def ns_step(
    state: VelocityField,
    phi: np.ndarray,
    props: FluidProperties,
    dt: float,
    domain: FlowDomain,
    body_force: tuple | None = None,
    inlet_velocity: np.ndarray | None = None,
    pressure_precond: str = "jacobi",
) -> VelocityField:
    """One explicit momentum step followed by a pressure projection.

    Advection is first-order upwind; diffusion uses the mixture viscosity
    sampled at the velocity face; gravity acts as a uniform acceleration
    (buoyancy enters through the variable-density projection); ``body_force``
    is an optional (fx, fy, fz) force per unit volume at cell centers.

    Raises StabilityError when dt breaks the CFL or diffusive bound and
    SolverError when the pressure solve or the post-projection divergence
    contract fails.  The returned state has per-cell divergence below
    1e-6 * max|u| / h.
    """
    adv, diff = stability_limits(state, props, domain)
    if dt > adv:
        raise StabilityError(f"dt {dt:g} exceeds the advective CFL bound {adv:g}")
    if dt > diff:
        raise StabilityError(f"dt {dt:g} exceeds the diffusive bound {diff:g}")

    hx, hy, hz = domain.spacing
    rho, mu, _ = mixture_properties(np.clip(phi, 0.0, 1.0), props)
    gx, gy, gz = props.gravity
    rho_u, rho_v, rho_w = _face_density(rho, domain.shape)
    mu_u, mu_v, mu_w = _face_density(mu, domain.shape)

    u, v, w = state.u, state.v, state.w

    v_at_u = np.zeros_like(u)
    v_at_u[1:-1] = _avg4(v, 0, 1)
    w_at_u = np.zeros_like(u)
    w_at_u[1:-1] = _avg4(w, 0, 2)
    adv_u = (
        u * _upwind(u, u, 0, hx)
        + v_at_u * _upwind(u, v_at_u, 1, hy)
        + w_at_u * _upwind(u, w_at_u, 2, hz)
    )

    u_at_v = np.zeros_like(v)
    u_at_v[:, 1:-1] = _avg4(u, 1, 0)
    w_at_v = np.zeros_like(v)
    w_at_v[:, 1:-1] = _avg4(w, 1, 2)
    adv_v = (
        u_at_v * _upwind(v, u_at_v, 0, hx)
        + v * _upwind(v, v, 1, hy)
        + w_at_v * _upwind(v, w_at_v, 2, hz)
    )

    u_at_w = np.zeros_like(w)
    u_at_w[:, :, 1:-1] = _avg4(u, 2, 0)
    v_at_w = np.zeros_like(w)
    v_at_w[:, :, 1:-1] = _avg4(v, 2, 1)
    adv_w = (
        u_at_w * _upwind(w, u_at_w, 0, hx)
        + v_at_w * _upwind(w, v_at_w, 1, hy)
        + w * _upwind(w, w, 2, hz)
    )

    new = state.copy()
    new.u += dt * (-adv_u + (mu_u / rho_u) * _viscous_laplacian(u, 0, domain) + gx)
    new.v += dt * (-adv_v + (mu_v / rho_v) * _viscous_laplacian(v, 1, domain) + gy)
    new.w += dt * (-adv_w + (mu_w / rho_w) * _viscous_laplacian(w, 2, domain) + gz)

    if body_force is not None:
        fx_c, fy_c, fz_c = body_force
        f_u = np.zeros_like(u)
        f_u[1:-1] = 0.5 * (fx_c[:-1] + fx_c[1:])
        f_v = np.zeros_like(v)
        f_v[:, 1:-1] = 0.5 * (fy_c[:, :-1] + fy_c[:, 1:])
        f_w = np.zeros_like(w)
        f_w[:, :, 1:-1] = 0.5 * (fz_c[:, :, :-1] + fz_c[:, :, 1:])
        new.u += dt * f_u / rho_u
        new.v += dt * f_v / rho_v
        new.w += dt * f_w / rho_w

    _enforce_face_bc(new, domain, inlet_velocity)
    # The projection touches only fluid-fluid and outlet faces, so the
    # boundary values above survive it untouched.
    _project(new, rho, dt, domain, precond=pressure_precond)

    div = _divergence(new, domain)
    tol = 1e-6 * max(new.max_speed(), 1e-12) / min(domain.spacing)
    worst = float(np.abs(div).max())
    if worst > tol:
        raise SolverError(
            f"post-projection divergence {worst:.3e} exceeds contract {tol:.3e}",
            residual=worst,
        )
    return new


def _project(state: VelocityField, rho: np.ndarray, dt: float,
             domain: FlowDomain, precond: str = "jacobi") -> None:
    """Pressure Poisson solve and velocity correction, in place.

    Solves div((1/rho) grad p) = div(u*)/dt over the fluid cells with
    Neumann walls/inlet and (for top="pressure") a p=0 ghost above the
    outlet.  The CG absolute tolerance is derived from the divergence
    contract of ns_step.
    """
    hx, hy, hz = domain.spacing
    nx, ny, nz = domain.shape
    fluid = domain.fluid
    n = domain.n_fluid
    cell_of = np.full(nx * ny * nz, -1, dtype=np.int64)
    flat_fluid = np.flatnonzero(fluid.ravel())
    cell_of[flat_fluid] = np.arange(n)
    volume = hx * hy * hz

    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    flat = np.arange(nx * ny * nz).reshape(domain.shape)

    def add_faces(mask_inner, axis, h, area):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        pair_mask = mask_inner
        a = flat[tuple(lo)][pair_mask]
        b = flat[tuple(hi)][pair_mask]
        beta = 2.0 / (rho.reshape(-1)[a] + rho.reshape(-1)[b])
        t = beta * area / h
        ia, ib = cell_of[a], cell_of[b]
        np.add.at(diag, ia, t)
        np.add.at(diag, ib, t)
        rows.extend([ia, ib])
        cols.extend([ib, ia])
        vals.extend([-t, -t])
        return a, b, t

    fx_pairs = add_faces(domain.fx[1:-1], 0, hx, hy * hz)
    fy_pairs = add_faces(domain.fy[:, 1:-1], 1, hy, hx * hz)
    fz_pairs = add_faces(domain.fz[:, :, 1:-1], 2, hz, hx * hy)

    has_dirichlet = domain.top == "pressure"
    out_cells = out_t = None
    if has_dirichlet:
        out_flat = flat[:, :, -1][domain.top_faces]
        beta = 1.0 / rho.reshape(-1)[out_flat]
        out_t = beta * (hx * hy) / (hz / 2.0)
        out_cells = cell_of[out_flat]
        np.add.at(diag, out_cells, out_t)

    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    matrix = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()

    div = _divergence(state, domain)
    b = -(div.reshape(-1)[flat_fluid]) * volume / dt

    x0 = state.p.reshape(-1)[flat_fluid].copy()
    if not has_dirichlet:
        imbalance = abs(b.sum())
        scale = np.abs(b).sum()
        if scale > 0 and imbalance > 1e-8 * scale:
            raise SolverError(
                f"net boundary flux {imbalance:.3e} in a closed domain; "
                "inconsistent velocity boundary conditions"
            )
        b = b - b.mean()
        x0 -= x0.mean()

    if np.linalg.norm(b) == 0.0:
        p = np.zeros(n)
    else:
        # ns_step's divergence contract: |div_new| = dt * |residual| / V.
        speed_scale = max(state.max_speed(), 1e-12)
        atol = 0.3 * (1e-6 * speed_scale / min(domain.spacing)) * volume / dt
        if precond == "amg":
            import pyamg

            rng_state = np.random.get_state()
            try:
                np.random.seed(0)
                ml = pyamg.smoothed_aggregation_solver(matrix)
            finally:
                np.random.set_state(rng_state)
            M = ml.aspreconditioner(cycle="V")
        else:
            inv_diag = 1.0 / matrix.diagonal()
            M = LinearOperator(matrix.shape, matvec=lambda q: inv_diag * q)
        p, info = cg(matrix, b, x0=x0, rtol=1e-12, atol=atol,
                     maxiter=100 * (nx + ny + nz), M=M)
        if info != 0:
            res = np.linalg.norm(b - matrix @ p)
            raise SolverError(
                f"pressure solve stalled (absolute residual {res:.3e}, target {atol:.3e})",
                residual=res,
            )
        if not has_dirichlet:
            p = p - p.mean()

    p_box = np.zeros(nx * ny * nz)
    p_box[flat_fluid] = p
    state.p = p_box.reshape(domain.shape)

    for (a, bb, t), (comp, h, area) in zip(
        (fx_pairs, fy_pairs, fz_pairs), ((0, hx, hy * hz), (1, hy, hx * hz), (2, hz, hx * hy))
    ):
        beta = t * h / area  # recover 2/(rho_a+rho_b)
        dp = (p_box[bb] - p_box[a]) / h
        corr = dt * beta * dp
        comp_arr = (state.u, state.v, state.w)[comp]
        # face position: same multi-index as the higher cell along comp
        idx = np.array(np.unravel_index(bb, domain.shape))
        comp_arr[tuple(idx)] -= corr

    if has_dirichlet:
        out_idx = np.array(np.unravel_index(flat[:, :, -1][domain.top_faces], domain.shape))
        beta = out_t * (hz / 2.0) / (hx * hy)
        dp = (0.0 - p_box[flat[:, :, -1][domain.top_faces]]) / (hz / 2.0)
        state.w[out_idx[0], out_idx[1], out_idx[2] + 1] -= dt * beta * dp


# ---------------------------------------------------------------------------
# conservative level set


def reinit_stability_bound(domain: FlowDomain, gamma: float = 1.0,
                           delta: float | None = None) -> float:
    """Largest dt for which the explicit reinitialization update is stable."""
    h_min = min(domain.spacing)
    if delta is None:
        delta = max(domain.spacing) / 2.0
    diffusive = h_min**2 / (6.0 * gamma * delta)
    compressive = h_min / (6.0 * gamma)
    return min(diffusive, compressive)


def _masked_gradient(phi: np.ndarray, domain: FlowDomain) -> list[np.ndarray]:
    """Cell-centered gradient using only fluid neighbors (one-sided at walls)."""
    grads = []
    fluid = domain.fluid
    for axis, h in zip(range(3), domain.spacing):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)

        has_plus = np.zeros(domain.shape, dtype=bool)
        has_minus = np.zeros(domain.shape, dtype=bool)
        has_plus[lo] = fluid[hi]
        has_minus[hi] = fluid[lo]
        plus_val = np.zeros(domain.shape)
        minus_val = np.zeros(domain.shape)
        plus_val[lo] = phi[hi]
        minus_val[hi] = phi[lo]

        both = has_plus & has_minus
        onlyp = has_plus & ~has_minus
        onlym = has_minus & ~has_plus
        g = np.zeros(domain.shape)
        g[both] = (plus_val[both] - minus_val[both]) / (2 * h)
        g[onlyp] = (plus_val[onlyp] - phi[onlyp]) / h
        g[onlym] = (phi[onlym] - minus_val[onlym]) / h
        g[~fluid] = 0.0
        grads.append(g)
    return grads


def interface_normal(phi: np.ndarray, domain: FlowDomain) -> list[np.ndarray]:
    """Unit normal grad(phi)/|grad(phi)| with a zero fallback in flat regions."""
    grads = _masked_gradient(phi, domain)
    mag = np.sqrt(grads[0] ** 2 + grads[1] ** 2 + grads[2] ** 2)
    safe = np.where(mag > 0, mag, 1.0)
    return [g / safe for g in grads]


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 0.5 * (np.sign(a) + np.sign(b)) * np.minimum(np.abs(a), np.abs(b))


def _advective_update(phi: np.ndarray, state: VelocityField, dt: float,
                      domain: FlowDomain, inlet_phi: np.ndarray | None) -> np.ndarray:
    """Conservative MUSCL (minmod-limited) transport of phi by the face velocities."""
    hx, hy, hz = domain.spacing
    nx, ny, nz = domain.shape
    out = phi.copy()

    for axis, (h, vel, mask) in enumerate(
        ((hx, state.u, domain.fx), (hy, state.v, domain.fy), (hz, state.w, domain.fz))
    ):
        pad = [(0, 0)] * 3
        pad[axis] = (2, 2)
        phip = np.pad(phi, pad, mode="edge")

        def shifted(k):
            sl = [slice(None)] * 3
            sl[axis] = slice(2 + k, 2 + k + phi.shape[axis] + 1)
            # values at positions face-1+k .. relative to faces 0..n along axis
            return phip[tuple(sl)]

        # cells around face i along axis: LL = i-2, L = i-1, R = i, RR = i+1
        ll = shifted(-2)
        lv = shifted(-1)
        rv = shifted(0)
        rr = shifted(1)

        up_pos = lv + 0.5 * _minmod(lv - ll, rv - lv)
        up_neg = rv - 0.5 * _minmod(rr - rv, rv - lv)
        face_phi = np.where(vel >= 0.0, up_pos, up_neg)
        flux = vel * face_phi
        flux[~mask] = 0.0

        # boundary fluxes along z
        if axis == 2:
            bot, top = domain.bottom_faces, domain.top_faces
            if domain.bottom == "velocity":
                phi_in = domain.inlet_phi if inlet_phi is None else inlet_phi
                flux[:, :, 0][bot] = state.w[:, :, 0][bot] * np.where(
                    state.w[:, :, 0][bot] >= 0, phi_in[bot], phi[:, :, 0][bot]
                )
            elif domain.bottom == "gradient":
                flux[:, :, 0][bot] = state.w[:, :, 0][bot] * phi[:, :, 0][bot]
            if domain.top in ("pressure", "gradient"):
                flux[:, :, -1][top] = state.w[:, :, -1][top] * phi[:, :, -1][top]

        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        out -= dt * (flux[tuple(hi)] - flux[tuple(lo)]) / h

    out[~domain.fluid] = phi[~domain.fluid]
    return out


def _reinit_update(phi: np.ndarray, dt: float, domain: FlowDomain,
                   gamma: float, delta: float) -> np.ndarray:
    """One explicit step of the conservative reinitialization operator:
    d(phi)/dt = gamma * div(delta grad(phi) - phi(1-phi) n).

    All reinit fluxes vanish on walls and open ends, so the update
    conserves the integral of phi exactly.
    """
    normal = interface_normal(phi, domain)
    q = [phi * (1.0 - phi) * n for n in normal]
    out = phi.copy()
    for axis, (h, mask) in enumerate(
        zip(domain.spacing, (domain.fx, domain.fy, domain.fz))
    ):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)

        flux = np.zeros(mask.shape)
        inner = [slice(None)] * 3
        inner[axis] = slice(1, -1)
        grad_face = (phi[hi] - phi[lo]) / h
        comp_face = 0.5 * (q[axis][hi] + q[axis][lo])
        flux[tuple(inner)] = delta * grad_face - comp_face
        flux[~mask] = 0.0

        out += dt * gamma * (flux[hi] - flux[lo]) / h
    out[~domain.fluid] = phi[~domain.fluid]
    return out


def levelset_step(
    phi: np.ndarray,
    state: VelocityField,
    dt: float,
    domain: FlowDomain,
    gamma: float = 1.0,
    delta: float | None = None,
    inlet_phi: np.ndarray | None = None,
    clamp: bool = True,
) -> np.ndarray:
    """Advect the void fraction and apply one conservative reinit sub-iteration.

    ``delta`` defaults to half the largest voxel edge.  The result is
    clamped to [0, 1] unless ``clamp`` is False (used to inspect the raw
    overshoot).  Raises StabilityError when dt exceeds the explicit
    reinitialization bound.
    """
    if delta is None:
        delta = max(domain.spacing) / 2.0
    bound = reinit_stability_bound(domain, gamma, delta)
    if dt > bound:
        raise StabilityError(
            f"dt {dt:g} exceeds the reinitialization stability bound {bound:g}"
        )
    phi = np.asarray(phi, dtype=np.float64)
    advected = _advective_update(phi, state, dt, domain, inlet_phi)
    updated = _reinit_update(advected, dt, domain, gamma, delta)
    if clamp:
        np.clip(updated, 0.0, 1.0, out=updated)
    return updated


# ---------------------------------------------------------------------------
# driver


def simulate_flow(
    grid: VoxelGrid,
    props: FluidProperties,
    cond: FlowConditions,
    seed: int = 0,
    pressure_precond: str = "jacobi",
) -> list[tuple[float, np.ndarray]]:
    """Run one working condition, returning (time, void fraction) snapshots.

    Alternates momentum/projection and level-set steps from the chosen
    initial fill, emitting a snapshot every ``output_interval`` seconds.
    The seed only drives the optional inlet fluctuation; a fixed seed
    reproduces the sequence exactly.
    """
    domain = FlowDomain.from_conditions(grid, cond)
    state = VelocityField.zeros(grid.shape)
    phi = uniform_phase(grid, 0.0 if cond.initial_fill == "liquid" else 1.0)
    rng = np.random.default_rng(seed)

    body_force = None
    snapshots: list[tuple[float, np.ndarray]] = []
    t = 0.0
    next_output = cond.output_interval
    step = 0
    while t < cond.duration - 1e-12:
        factor = 1.0
        if cond.inlet_fluctuation > 0.0:
            factor = 1.0 + cond.inlet_fluctuation * (2.0 * rng.random() - 1.0)
        inlet_velocity = domain.inlet_velocity * factor

        adv, diff = stability_limits(state, props, domain)
        adv = min(adv, ADVECTIVE_CFL * min(domain.spacing)
                  / max(float(np.abs(inlet_velocity).max()), 1e-12))
        dt = 0.9 * min(adv, diff, reinit_stability_bound(domain))
        dt = min(dt, next_output - t)
        if dt <= 0 or not math.isfinite(dt):
            raise SimulationError(f"time step collapsed to {dt:g}", time=t)

        if cond.use_surface_tension and props.surface_tension > 0.0:
            body_force = _surface_tension_force(phi, props, domain)

        try:
            state = ns_step(state, phi, props, dt, domain,
                            body_force=body_force, inlet_velocity=inlet_velocity,
                            pressure_precond=pressure_precond)
            phi = levelset_step(phi, state, dt, domain, inlet_phi=domain.inlet_phi)
        except (SolverError, StabilityError) as err:
            raise SimulationError(f"step failed at t={t:.4f}s: {err}", time=t) from err
        if state.max_speed() > _BLOWUP_SPEED:
            raise SimulationError(
                f"velocity blow-up ({state.max_speed():.1f} m/s)", time=t
            )

        t += dt
        step += 1
        if t >= next_output - 1e-12:
            snapshots.append((round(next_output, 12), phi.copy()))
            next_output += cond.output_interval
    logger.debug("simulated %.3f s in %d steps, %d snapshots", t, step, len(snapshots))
    return snapshots


def _surface_tension_force(phi: np.ndarray, props: FluidProperties,
                           domain: FlowDomain):
    """Continuum-surface-force term sigma * curvature * grad(phi)."""
    normal = interface_normal(phi, domain)
    grads = _masked_gradient(phi, domain)
    divergence = np.zeros(domain.shape)
    for axis in range(3):
        divergence += _masked_gradient(normal[axis], domain)[axis]
    curvature = -divergence
    return tuple(props.surface_tension * curvature * g for g in grads)
