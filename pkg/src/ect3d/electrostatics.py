"""Finite-volume electrostatics on the voxel grid.

Solves -div(eps0 * eps * grad(phi)) = 0 with Dirichlet conditions on the
electrode and shield conductors, using a cell-centered 7-point scheme
with harmonic face averaging of the permittivity.  Harmonic averaging
keeps the normal flux continuous across the wall/lumen jump and makes
the reduced system symmetric positive definite, so it is solved with
preconditioned conjugate gradients (algebraic-multigrid preconditioner
for large grids, Jacobi for small ones).

Charges are discrete Gauss integrals of the dielectric flux over the
conductor cell boundaries, which makes charge conservation and
measurement reciprocity hold to solver tolerance by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import cg

from .constants import (
    AIR_PERMITTIVITY,
    OIL_PERMITTIVITY,
    PIPE_WALL_PERMITTIVITY,
    VACUUM_PERMITTIVITY,
)
from .errors import ConfigError, DegenerateCalibrationError, SolverError
from .geometry import EXTERIOR, LUMEN, WALL, VoxelGrid, electrode_pairs

logger = logging.getLogger(__name__)

# Below this unknown count a Jacobi preconditioner beats the AMG setup cost.
_AMG_THRESHOLD = 5000


@dataclass(frozen=True)
class CapacitanceFrame:
    """One time step of inter-electrode measurements in pair order."""

    values: np.ndarray
    kind: str  # "raw" (farads) or "normalized" (dimensionless)
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size != len(self.pairs):
            raise ConfigError(
                f"frame needs {len(self.pairs)} values in pair order, got shape {values.shape}"
            )
        if self.kind not in ("raw", "normalized"):
            raise ConfigError(f"unknown frame kind {self.kind!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SensitivityMatrix:
    """Row-normalized linear map from lumen permittivity to normalized capacitance.

    ``matrix`` is M x N with rows in pair order and columns in lumen voxel
    order; every row sums to one.  ``row_scale`` holds the pre-normalization
    row sums, so ``matrix * row_scale[:, None]`` restores the unnormalized
    field-product rows.
    """

    matrix: np.ndarray
    pairs: tuple[tuple[int, int], ...]
    grid_hash: str
    row_scale: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)
        self.row_scale.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def predict(self, g: np.ndarray) -> np.ndarray:
        """Normalized capacitance frame predicted by the linear model."""
        return self.matrix @ np.asarray(g, dtype=np.float64)


def uniform_permittivity(
    grid: VoxelGrid,
    lumen_value: float,
    wall_value: float = PIPE_WALL_PERMITTIVITY,
    exterior_value: float = 1.0,
) -> np.ndarray:
    """Permittivity box with a uniform lumen fill and standard wall/exterior."""
    eps = np.empty(grid.shape, dtype=np.float64)
    eps[grid.region == LUMEN] = lumen_value
    eps[grid.region == WALL] = wall_value
    eps[grid.region == EXTERIOR] = exterior_value
    return eps


class _FieldSystem:
    """Assembled discrete operator for one (grid, permittivity) pair.

    Reused across the excitation sweep: the matrix and preconditioner are
    built once, only the Dirichlet data changes per excitation.
    """

    def __init__(self, grid: VoxelGrid, perm: np.ndarray):
        perm = np.asarray(perm, dtype=np.float64)
        if perm.shape != grid.shape:
            raise ConfigError(f"permittivity shape {perm.shape} != grid shape {grid.shape}")
        if not np.all(np.isfinite(perm)) or np.any(perm <= 0):
            raise ConfigError("permittivity must be strictly positive and finite everywhere")
        self.grid = grid
        self.perm = perm

        hx, hy, hz = grid.spacing
        ncells = grid.nx * grid.ny * grid.nz
        flat = np.arange(ncells).reshape(grid.shape)

        sides_a, sides_b, conds, geos = [], [], [], []
        for axis, factor in ((0, hy * hz / hx), (1, hx * hz / hy), (2, hx * hy / hz)):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            e1 = perm[tuple(lo)]
            e2 = perm[tuple(hi)]
            t = VACUUM_PERMITTIVITY * factor * (2.0 * e1 * e2 / (e1 + e2))
            sides_a.append(flat[tuple(lo)].ravel())
            sides_b.append(flat[tuple(hi)].ravel())
            conds.append(t.ravel())
            geos.append(np.full(t.size, VACUUM_PERMITTIVITY * factor))
        self.face_a = np.concatenate(sides_a)
        self.face_b = np.concatenate(sides_b)
        self.face_t = np.concatenate(conds)
        self.face_geo = np.concatenate(geos)

        conductor = grid.conductor_mask.ravel()
        unknown = ~conductor
        self.unknown = unknown
        self.n_unknown = int(unknown.sum())
        uidx = np.full(ncells, -1, dtype=np.int64)
        uidx[unknown] = np.arange(self.n_unknown)

        ua = uidx[self.face_a]
        ub = uidx[self.face_b]
        both = (ua >= 0) & (ub >= 0)
        a_only = (ua >= 0) & (ub < 0)
        b_only = (ua < 0) & (ub >= 0)

        diag = np.zeros(self.n_unknown)
        np.add.at(diag, ua[ua >= 0], self.face_t[ua >= 0])
        np.add.at(diag, ub[ub >= 0], self.face_t[ub >= 0])

        rows = np.concatenate([ua[both], ub[both], np.arange(self.n_unknown)])
        cols = np.concatenate([ub[both], ua[both], np.arange(self.n_unknown)])
        vals = np.concatenate([-self.face_t[both], -self.face_t[both], diag])
        self.matrix = coo_matrix(
            (vals, (rows, cols)), shape=(self.n_unknown, self.n_unknown)
        ).tocsr()

        # Couples unknowns to Dirichlet cells: rhs = coupling @ dirichlet_values.
        c_rows = np.concatenate([ua[a_only], ub[b_only]])
        c_cols = np.concatenate([self.face_b[a_only], self.face_a[b_only]])
        c_vals = np.concatenate([self.face_t[a_only], self.face_t[b_only]])
        self.coupling = coo_matrix((c_vals, (c_rows, c_cols)), shape=(self.n_unknown, ncells)).tocsr()

        self._precond = None

    def _preconditioner(self):
        if self._precond is None:
            if self.n_unknown > _AMG_THRESHOLD:
                import pyamg

                # pyamg's setup draws start vectors from the global RNG; pin it
                # so identical inputs yield bit-identical solves, and restore the
                # caller's state afterwards.
                rng_state = np.random.get_state()
                try:
                    np.random.seed(0)
                    ml = pyamg.smoothed_aggregation_solver(csr_matrix(self.matrix))
                finally:
                    np.random.set_state(rng_state)
                self._precond = ml.aspreconditioner(cycle="V")
            else:
                inv_diag = 1.0 / self.matrix.diagonal()
                from scipy.sparse.linalg import LinearOperator

                self._precond = LinearOperator(
                    self.matrix.shape, matvec=lambda v: inv_diag * v
                )
        return self._precond

    def dirichlet_values(self, excited: int, v_exc: float) -> np.ndarray:
        phi_d = np.zeros(self.grid.nx * self.grid.ny * self.grid.nz)
        phi_d[(self.grid.electrode_id == excited).ravel()] = v_exc
        return phi_d

    def solve(self, excited: int, v_exc: float, rtol: float = 1e-10) -> np.ndarray:
        """Potential box for a single-electrode excitation."""
        if not 0 <= excited < self.grid.n_electrodes:
            raise ConfigError(
                f"excited electrode {excited} outside 0..{self.grid.n_electrodes - 1}"
            )
        phi_d = self.dirichlet_values(excited, v_exc)
        rhs = self.coupling @ phi_d
        maxiter = 20 * (self.grid.nx + self.grid.ny + self.grid.nz)
        x, info = cg(self.matrix, rhs, rtol=rtol, atol=0.0, maxiter=maxiter,
                     M=self._preconditioner())
        if info != 0:
            residual = np.linalg.norm(rhs - self.matrix @ x) / max(np.linalg.norm(rhs), 1e-300)
            raise SolverError(
                f"potential solve for electrode {excited} did not reach rtol {rtol:g} "
                f"within {maxiter} iterations (relative residual {residual:.3e})",
                residual=residual,
            )
        phi = phi_d
        phi[self.unknown] = x
        return phi.reshape(self.grid.shape)

    def net_flux(self, phi: np.ndarray) -> np.ndarray:
        """Per-cell outward dielectric flux; equals the enclosed charge on conductors."""
        p = phi.ravel()
        d = self.face_t * (p[self.face_a] - p[self.face_b])
        flux = np.zeros(p.size)
        np.add.at(flux, self.face_a, d)
        np.add.at(flux, self.face_b, -d)
        return flux

    def adjoint_row(self, phi_a: np.ndarray, phi_b: np.ndarray) -> np.ndarray:
        """Exact derivative of -Q_b(excite a) with respect to each cell's
        permittivity: the face-difference (discrete field) product weighted
        by the transmissibility derivatives of the harmonic average."""
        pa = phi_a.ravel()
        pb = phi_b.ravel()
        da = pa[self.face_a] - pa[self.face_b]
        db = pb[self.face_a] - pb[self.face_b]
        prod = da * db
        eps_a = self.perm.reshape(-1)[self.face_a]
        eps_b = self.perm.reshape(-1)[self.face_b]
        denom = (eps_a + eps_b) ** 2
        w_a = self.face_geo * 2.0 * eps_b**2 / denom  # d harm / d eps_A
        w_b = self.face_geo * 2.0 * eps_a**2 / denom
        row = np.zeros(pa.size)
        np.add.at(row, self.face_a, w_a * prod)
        np.add.at(row, self.face_b, w_b * prod)
        return -row


def solve_potential(
    grid: VoxelGrid,
    perm: np.ndarray,
    excited: int,
    v_exc: float = 1.0,
    rtol: float = 1e-10,
) -> np.ndarray:
    """Electric potential for one excitation, as a (nx, ny, nz) box in volts.

    The excited electrode sits at ``v_exc``; every other electrode and the
    shield are grounded.  Satisfies the discrete maximum principle up to
    solver tolerance.
    """
    return _FieldSystem(grid, perm).solve(excited, v_exc, rtol=rtol)


def electrode_charge(
    grid: VoxelGrid, perm: np.ndarray, potential: np.ndarray, electrode: int
) -> float:
    """Induced charge (C) on one electrode: discrete flux integral over its boundary."""
    cells = grid.electrode_cells(electrode)
    if not cells.any():
        raise ConfigError(f"electrode {electrode} has no cells in this grid")
    system = _FieldSystem(grid, perm)
    return float(system.net_flux(np.asarray(potential)).reshape(grid.shape)[cells].sum())


def shield_charge(grid: VoxelGrid, perm: np.ndarray, potential: np.ndarray) -> float:
    """Induced charge (C) on the grounded shield."""
    system = _FieldSystem(grid, perm)
    return float(system.net_flux(np.asarray(potential)).reshape(grid.shape)[grid.shield].sum())


def measure_frame(
    grid: VoxelGrid, perm: np.ndarray, v_exc: float = 1.0, rtol: float = 1e-10
) -> CapacitanceFrame:
    """Raw capacitance frame: one solve per electrode, all pairs in pair order.

    Entry for pair (i, j) is C = -Q_j / V with electrode i excited.  The
    operator is assembled once and shared by the excitation sweep.
    """
    system = _FieldSystem(grid, perm)
    pairs = electrode_pairs(grid.n_electrodes)
    elec_flat = [grid.electrode_cells(e).ravel() for e in range(grid.n_electrodes)]

    charges = np.zeros((grid.n_electrodes, grid.n_electrodes))
    for excited in range(grid.n_electrodes):
        try:
            phi = system.solve(excited, v_exc, rtol=rtol)
        except SolverError as err:
            raise SolverError(
                f"excitation {excited} failed: {err}", residual=err.residual
            ) from err
        flux = system.net_flux(phi)
        for other in range(grid.n_electrodes):
            if other != excited:
                charges[excited, other] = flux[elec_flat[other]].sum()

    values = np.array([-charges[i, j] / v_exc for i, j in pairs])
    return CapacitanceFrame(values=values, kind="raw", pairs=tuple(pairs))


def normalize_frame(
    c_raw: CapacitanceFrame, c_low: CapacitanceFrame, c_high: CapacitanceFrame
) -> CapacitanceFrame:
    """Entry-wise (c_raw - c_low) / (c_high - c_low), the standard calibration."""
    if not (c_raw.pairs == c_low.pairs == c_high.pairs):
        raise ConfigError("frames do not share the same pair order")
    denom = c_high.values - c_low.values
    zero = np.flatnonzero(denom == 0.0)
    if zero.size:
        pair = c_raw.pairs[zero[0]]
        raise DegenerateCalibrationError(
            f"calibration frames coincide on pair {pair} "
            f"({zero.size} degenerate pair(s) in total)",
            pair=pair,
        )
    values = (c_raw.values - c_low.values) / denom
    return CapacitanceFrame(values=values, kind="normalized", pairs=c_raw.pairs)


def calibration_frames(
    grid: VoxelGrid,
    v_exc: float = 1.0,
    gas_permittivity: float = AIR_PERMITTIVITY,
    liquid_permittivity: float = OIL_PERMITTIVITY,
    wall_permittivity: float = PIPE_WALL_PERMITTIVITY,
    rtol: float = 1e-10,
) -> tuple[CapacitanceFrame, CapacitanceFrame]:
    """(C_low, C_high): raw frames for uniform gas and uniform liquid fills."""
    c_low = measure_frame(
        grid, uniform_permittivity(grid, gas_permittivity, wall_permittivity), v_exc, rtol
    )
    c_high = measure_frame(
        grid, uniform_permittivity(grid, liquid_permittivity, wall_permittivity), v_exc, rtol
    )
    return c_low, c_high


def compute_sensitivity(
    grid: VoxelGrid,
    v_exc: float = 1.0,
    background: np.ndarray | None = None,
    rtol: float = 1e-10,
) -> SensitivityMatrix:
    """Normalized sensitivity matrix from the electric-field dot-product form.

    Entry (m, j) for pair (a, b) is the adjoint field product
    -sum over the faces of voxel j of dT/d(eps_j) * dphi_a * dphi_b with
    unit-volt excitations on the uniform low-permittivity background:
    the exact derivative of the discrete capacitance with respect to the
    voxel permittivity.  Each row is then scaled to sum to one, so that
    S @ 1 = 1.
    """
    if background is None:
        background = uniform_permittivity(grid, AIR_PERMITTIVITY)
    system = _FieldSystem(grid, background)
    lumen = grid.lumen_indices

    potentials = [system.solve(e, v_exc, rtol=rtol) for e in range(grid.n_electrodes)]

    pairs = electrode_pairs(grid.n_electrodes)
    matrix = np.empty((len(pairs), lumen.size))
    row_scale = np.empty(len(pairs))
    for m, (a, b) in enumerate(pairs):
        row = system.adjoint_row(potentials[a], potentials[b])[lumen]
        total = row.sum()
        # The sum may legitimately be negative (axially stacked pairs lose
        # capacitance as the lumen fills); only a vanishing sum is degenerate.
        if not np.isfinite(total) or abs(total) < 1e-12 * np.abs(row).sum():
            raise SolverError(
                f"sensitivity row for pair {(a, b)} has degenerate sum {total:.3e}"
            )
        matrix[m] = row / total
        row_scale[m] = total
    logger.debug("sensitivity matrix %s assembled", matrix.shape)
    return SensitivityMatrix(
        matrix=matrix, pairs=tuple(pairs), grid_hash=grid.grid_hash, row_scale=row_scale
    )
