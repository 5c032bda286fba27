"""Space-time-age grid, the degenerate elliptic operator, and discrete inner products.

The space discretization is finite-volume with the diffusion coefficient
evaluated at cell faces, so a degenerate endpoint contributes exactly zero
flux and the operator stays symmetric in the cell-measure inner product.
Time and age are coupled (dt = da) so the transport part moves along grid
diagonals with no numerical diffusion.
"""

from dataclasses import dataclass

import numpy as np

from .coefficients import graded_spacings
from .util import solve_tridiagonal_batch


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Cell-centered (t, a, x) discretization with dt = da.

    Parameters
    ----------
    x_faces : (Nx+1,) sorted points in [0, 1], graded toward degenerate ends.
    t_levels : (Nt+1,) marching time levels including 0 and T.
    t_centers, a_centers : cell midpoints, never touching t in {0, T} or a = 0,
        where the blow-up weights live.
    """

    Nx: int
    Na: int
    Nt: int
    T: float
    A: float
    x_faces: np.ndarray
    x_centers: np.ndarray
    x_widths: np.ndarray
    x_gaps: np.ndarray  # (Nx+1,) center-to-center distances incl. boundary halves
    dt: float
    da: float
    t_levels: np.ndarray
    t_centers: np.ndarray
    a_centers: np.ndarray

    def omega_mask(self, window):
        return window.mask(self.x_centers)

    def age_mask_above(self, a_bar):
        return self.a_centers > a_bar

    def cell_measure(self):
        """(Na, Nx) weights da * h_i for the (a, x) inner product."""
        return self.da * np.broadcast_to(self.x_widths, (self.Na, self.Nx))


def build_grid(Nx, Na, Nt, T, A, grading=1.0, profile=None):
    """Construct the grid, forcing the characteristic coupling dt = da.

    The age step fixes dt; if the requested Nt does not satisfy Nt/T = Na/A
    it is adjusted up to the unique compatible value.  Incompatible (Na, T, A)
    triples (non-integer T*Na/A) raise, naming the smallest valid Nt.
    """
    if Nx < 8:
        raise GridError("Nx must be at least 8")
    if Na < 2 or Nt < 1 or T <= 0 or A <= 0:
        raise GridError("need Na >= 2, Nt >= 1 and positive T, A")
    nt_exact = T * Na / A
    nt_round = round(nt_exact)
    if abs(nt_exact - nt_round) > 1e-9 * max(1.0, nt_exact):
        raise GridError(
            f"dt = da requires Nt = T*Na/A = {nt_exact:.6g}; the smallest compatible "
            f"integer is Nt = {int(np.ceil(nt_exact))} (adjust Na, T or A)")
    Nt_eff = max(int(nt_round), 1)
    da = A / Na
    dt = T / Nt_eff

    left = profile.degenerate0 if profile is not None else True
    right = profile.degenerate1 if profile is not None else True
    widths = graded_spacings(Nx, left, right, grading)
    x_faces = np.concatenate([[0.0], np.cumsum(widths)])
    x_faces[-1] = 1.0
    x_centers = 0.5 * (x_faces[:-1] + x_faces[1:])
    x_widths = np.diff(x_faces)
    x_gaps = np.empty(Nx + 1)
    x_gaps[0] = x_centers[0] - x_faces[0]
    x_gaps[1:-1] = np.diff(x_centers)
    x_gaps[-1] = x_faces[-1] - x_centers[-1]

    return Grid(Nx=Nx, Na=Na, Nt=Nt_eff, T=T, A=A,
                x_faces=x_faces, x_centers=x_centers, x_widths=x_widths,
                x_gaps=x_gaps, dt=dt, da=da,
                t_levels=np.linspace(0.0, T, Nt_eff + 1),
                t_centers=(np.arange(Nt_eff) + 0.5) * dt,
                a_centers=(np.arange(Na) + 0.5) * da)


@dataclass(frozen=True)
class DiscreteOperator:
    """Flux-form tridiagonal elliptic operator with homogeneous Dirichlet ends.

    (A0 u)_i = [k_{i+1/2} (u_{i+1}-u_i)/g_{i+1/2} - k_{i-1/2} (u_i-u_{i-1})/g_{i-1/2}] / h_i

    with k taken at faces; Dirichlet values enter as zero ghost states through
    the boundary gaps.  Symmetric and nonpositive in the h-weighted product.
    """

    grid: Grid
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    k_faces: np.ndarray
    flux_coeff: np.ndarray  # k_f / gap_f at all Nx+1 faces

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        out = self.diag * u
        out[..., 1:] += self.sub[1:] * u[..., :-1]
        out[..., :-1] += self.sup[:-1] * u[..., 1:]
        return out

    def quadratic_form(self, u, v=None):
        """h-weighted <A0 u, v>; equals -sum_f k_f (du)^2/g_f for v = u."""
        v = u if v is None else v
        return float(np.sum(self.grid.x_widths * self.apply(u) * v))

    def gradient_energy(self, u):
        """sum over faces of k_f (du/dx)^2 * g_f, with zero Dirichlet ghosts."""
        u = np.asarray(u, dtype=float)
        du = np.empty(u.shape[:-1] + (self.grid.Nx + 1,))
        du[..., 0] = u[..., 0]
        du[..., 1:-1] = u[..., 1:] - u[..., :-1]
        du[..., -1] = -u[..., -1]
        return np.sum(self.flux_coeff * du * du, axis=-1)


def assemble_operator(grid, profile):
    k_faces = np.asarray(profile.k(grid.x_faces), dtype=float)
    if np.any(k_faces < 0):
        raise GridError("diffusion coefficient negative at a face")
    flux = k_faces / grid.x_gaps
    h = grid.x_widths
    sub = np.zeros(grid.Nx)
    sup = np.zeros(grid.Nx)
    diag = np.zeros(grid.Nx)
    sub[1:] = flux[1:-1] / h[1:]
    sup[:-1] = flux[1:-1] / h[:-1]
    diag = -(flux[:-1] + flux[1:]) / h
    return DiscreteOperator(grid=grid, sub=sub, diag=diag, sup=sup,
                            k_faces=k_faces, flux_coeff=flux)


def implicit_step_matrix(op, mu_values, tau):
    """Banded factors of (I + tau*mu - tau*A0) for the batched Thomas solve.

    ``mu_values`` broadcasts against (..., Nx).  Returns (sub, diag, sup).
    """
    sub = -tau * op.sub
    sup = -tau * op.sup
    diag = 1.0 + tau * np.asarray(mu_values, dtype=float) - tau * op.diag
    return sub, diag, sup


def implicit_solve(op, mu_values, rhs, tau):
    sub, diag, sup = implicit_step_matrix(op, mu_values, tau)
    return solve_tridiagonal_batch(sub, diag, sup, np.asarray(rhs, dtype=float))


def semigroup_apply(op, mu_slice, u, dt_total, substeps=16):
    """Propagate u by the semigroup of (A0 - mu) over dt_total.

    Backward-Euler substepping: each substep solves
    (I - tau (A0 - mu)) u_next = u.  Unconditionally stable; first-order
    accuracy controlled by ``substeps``.
    """
    if dt_total < 0:
        raise GridError("semigroup time must be nonnegative")
    if dt_total == 0.0:
        return np.array(u, dtype=float, copy=True)
    tau = dt_total / substeps
    out = np.asarray(u, dtype=float)
    for _ in range(substeps):
        out = implicit_solve(op, mu_slice, out, tau)
    return out


# ---------------------------------------------------------------------------
# inner products over (a, x) fields
# ---------------------------------------------------------------------------

def inner(field_a, field_b, grid):
    """Cell-measure inner product over (0,A) x (0,1)."""
    field_a = np.asarray(field_a, dtype=float)
    field_b = np.asarray(field_b, dtype=float)
    if field_a.shape != field_b.shape:
        raise ValueError(f"shape mismatch {field_a.shape} vs {field_b.shape}")
    return float(np.sum(field_a * field_b * grid.x_widths) * grid.da)

def norm_l2(field, grid):
    return float(np.sqrt(max(inner(field, field, grid), 0.0)))

def norm_weighted(field, weight_nodes, grid):
    """L2 norm with an extra per-node weight (e.g. an exponential factor)."""
    field = np.asarray(field, dtype=float)
    w = np.broadcast_to(np.asarray(weight_nodes, dtype=float), field.shape)
    return float(np.sqrt(np.sum(field * field * w * grid.x_widths) * grid.da))

def space_inner(u, v, grid):
    """h-weighted product over x only."""
    return float(np.sum(np.asarray(u) * np.asarray(v) * grid.x_widths))

def space_norm(u, grid):
    return float(np.sqrt(max(space_inner(u, u, grid), 0.0)))
