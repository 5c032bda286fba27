"""Carleman weight machinery for both degeneracy orientations.

Builds the spatial shape functions from quadratures of 1/k and x/k, the
time-age blow-up factor, and the modified variants that stay frozen on the
first half of the horizon so they blow up only at the final time.  All
exponential factors exp(2 s W) are exposed through log-space evaluators.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .coefficients import graded_spacings

LEFT = "left"    # k degenerates at x = 0
RIGHT = "right"  # k degenerates at x = 1

QUAD_REL_TOL = 1e-10
QUAD_ABS_TOL = 1e-13

THETA_WEIGHTS = ("Theta", "varphi", "eta")
GAMMA_WEIGHTS = ("gamma", "Phi", "sigma", "Phi_hat", "Phi_star")


class WeightQuadratureError(RuntimeError):
    """Quadrature for a weight integral failed to converge."""


class KappaPolicyError(ValueError):
    """kappa selection impossible without the truncated-domain policy."""


@dataclass(frozen=True)
class TabulatedFunction:
    """Piecewise-linear table on a clustered mesh; exact at its own nodes."""

    xs: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.xs, self.values)


def tabulation_mesh(profile, n_points=513, ratio=1.05, extra=None):
    """Mesh on [0,1] for weight tables, clustered toward degenerate ends.

    ``extra`` points (e.g. grid centers and faces) are merged in so later
    evaluations at those nodes are exact, not interpolated.
    """
    spac = graded_spacings(n_points - 1, profile.degenerate0, profile.degenerate1, ratio)
    xs = np.concatenate([[0.0], np.cumsum(spac)])
    xs[-1] = 1.0
    if extra is not None:
        xs = np.union1d(xs, np.asarray(extra, dtype=float))
    return xs


def _panel_integrals(f, xs):
    """Integral of f over each [xs[i], xs[i+1]] by adaptive quadrature.

    QUADPACK never evaluates the endpoints, so integrable endpoint
    singularities of f are handled by its extrapolation directly.
    """
    vals = np.zeros(xs.size - 1)
    for i in range(xs.size - 1):
        val, err = quad(f, xs[i], xs[i + 1], epsabs=QUAD_ABS_TOL,
                        epsrel=QUAD_REL_TOL, limit=200)
        if not np.isfinite(val) or (abs(val) > 0 and err > 1e-6 * abs(val) + 1e-9):
            raise WeightQuadratureError(
                f"weight quadrature did not converge on [{xs[i]:.3g}, {xs[i+1]:.3g}] "
                f"(value {val:.3e}, error {err:.3e})")
        vals[i] = val
    return vals


def compute_p(profile, orientation=LEFT, xs=None, n_points=513):
    """Cumulative table of the primary shape integral and its sup norm.

    Left:  p(x) = int_0^x y / k(y) dy, increasing from p(0) = 0.
    Right: p(x) = int_0^x (y-1) / k(y) dy, decreasing from 0.
    """
    if xs is None:
        xs = tabulation_mesh(profile, n_points)
    if orientation == LEFT:
        if profile.class1 != "none" and profile.M2 >= 1:
            raise WeightQuadratureError(
                "x/k is not integrable at x=1 for M2 >= 1; use the right orientation")
        f = lambda y: y / profile.k(y)
    else:
        if profile.class0 != "none" and profile.M1 >= 1:
            raise WeightQuadratureError(
                "(x-1)/k is not integrable at x=0 for M1 >= 1; use the left orientation")
        f = lambda y: (y - 1.0) / profile.k(y)
    panels = _panel_integrals(f, xs)
    values = np.concatenate([[0.0], np.cumsum(panels)])
    p_norm = float(np.max(np.abs(values)))
    if p_norm <= 0:
        raise WeightQuadratureError("degenerate shape integral: |p| vanishes identically")
    return TabulatedFunction(xs=xs, values=values), p_norm


def compute_rho(profile, orientation=LEFT, xs=None, n_points=513):
    """Table of rho = d * int 1/k, its sup, the slope bound d, and a truncation flag.

    Left integrates from x to 1, right from 0 to x.  When k vanishes at the
    primary endpoint either d = sup|k'| or int 1/k is infinite there, so the
    table is truncated at the first interior mesh node and flagged; every
    downstream use of the sup must carry the flag.
    """
    if xs is None:
        xs = tabulation_mesh(profile, n_points)
    interior = xs[(xs > 0.0) & (xs < 1.0)]
    frak_d = float(np.max(np.abs(profile.k_prime(interior))))

    truncated = profile.degenerate0 if orientation == LEFT else profile.degenerate1
    # secondary endpoint can also blow up (both-ends degeneracy)
    if orientation == LEFT and profile.degenerate1:
        truncated = True
    if orientation == RIGHT and profile.degenerate0:
        truncated = True

    if frak_d == 0.0:
        values = np.zeros_like(xs)
        return TabulatedFunction(xs=xs, values=values), 0.0, 0.0, False

    f = lambda y: 1.0 / profile.k(y)
    eval_xs = xs.copy()
    # truncate the table away from endpoints where 1/k is not integrable
    lo_cut = 1 if profile.degenerate0 else 0
    hi_cut = xs.size - 2 if profile.degenerate1 else xs.size - 1
    inner = eval_xs[lo_cut:hi_cut + 1]
    panels = _panel_integrals(f, inner)
    cum = np.concatenate([[0.0], np.cumsum(panels)])
    if orientation == LEFT:
        vals_inner = frak_d * (cum[-1] - cum)
    else:
        vals_inner = frak_d * cum
    values = np.empty_like(eval_xs)
    values[lo_cut:hi_cut + 1] = vals_inner
    # endpoints clamp to the nearest computed value (flagged truncation)
    if lo_cut == 1:
        values[0] = vals_inner[0]
    if hi_cut == xs.size - 2:
        values[-1] = vals_inner[-1]
    rho_norm = float(np.max(np.abs(values)))
    return TabulatedFunction(xs=eval_xs, values=values), rho_norm, frak_d, bool(truncated)


def kappa_max(p_norm, rho_norm):
    """Largest admissible kappa: ln(p_norm + 1) / (2 rho_norm)."""
    if p_norm <= 0:
        raise KappaPolicyError("kappa_max needs p_norm > 0")
    if not np.isfinite(rho_norm) or rho_norm <= 0:
        raise KappaPolicyError(
            "kappa_max needs a finite positive rho_norm; for strongly degenerate "
            "profiles build the weights with the truncated-domain policy")
    return math.log(p_norm + 1.0) / (2.0 * rho_norm)


@dataclass(frozen=True)
class WeightSet:
    """All weight functions of one (orientation, s, kappa) choice.

    Spatial shapes psi, Psi live on tables; time factors are closed-form.
    ``rho_truncated`` marks results that depend on the truncated-domain
    policy for sup|rho|.
    """

    orientation: str
    profile: object
    T: float
    A: float
    s: float
    p: TabulatedFunction
    p_norm: float
    rho: TabulatedFunction
    rho_norm: float
    frak_d: float
    rho_truncated: bool
    kappa: float

    # ---- spatial shapes ----
    def psi(self, x):
        return self.p(x) - 2.0 * self.p_norm

    def Psi(self, x):
        if self.kappa == 0.0 or self.rho_norm == 0.0:
            return np.zeros_like(np.asarray(x, dtype=float))
        return np.exp(self.kappa * self.rho(x)) - np.exp(2.0 * self.kappa * self.rho_norm)

    @property
    def psi_floor(self):
        """Value of psi at the degenerate end (the minimum of psi)."""
        return -2.0 * self.p_norm

    @property
    def psi_top(self):
        """Maximum of psi over [0,1]."""
        return float(self.psi(1.0)) if self.orientation == LEFT else float(self.psi(0.0))

    # ---- time factors ----
    def theta(self, t, a):
        t = np.asarray(t, dtype=float)
        a = np.asarray(a, dtype=float)
        bad = (t <= 0.0) | (t >= self.T) | (a <= 0.0)
        if np.any(bad):
            raise ValueError("Theta requires t in (0,T) and a > 0")
        return 1.0 / (t ** 4 * (self.T - t) ** 4 * a ** 4)

    def gamma(self, t, a):
        t = np.asarray(t, dtype=float)
        a = np.asarray(a, dtype=float)
        if np.any((t < 0.0) | (a <= 0.0)):
            raise ValueError("gamma requires t in [0,T) and a > 0")
        half = self.T / 2.0
        tc = np.maximum(t, half)
        with np.errstate(divide="ignore"):
            out = 1.0 / (tc ** 4 * (self.T - tc) ** 4 * a ** 4)
        return out

    # ---- combined weights ----
    def varphi(self, t, a, x):
        return self.theta(t, a) * self.psi(x)

    def eta(self, t, a, x):
        return self.theta(t, a) * self.Psi(x)

    def Phi(self, t, a, x):
        return self.gamma(t, a) * self.psi(x)

    def sigma(self, t, a, x):
        return self.gamma(t, a) * self.Psi(x)

    def Phi_hat(self, t):
        return self.gamma(t, self.A) * self.psi_top

    def Phi_star(self, t, a):
        return self.gamma(t, a) * self.psi_floor

    def eval_weight(self, which, t, a, x=None):
        if which == "Theta":
            return self.theta(t, a)
        if which == "gamma":
            return self.gamma(t, a)
        if which == "varphi":
            return self.varphi(t, a, x)
        if which == "eta":
            return self.eta(t, a, x)
        if which == "Phi":
            return self.Phi(t, a, x)
        if which == "sigma":
            return self.sigma(t, a, x)
        if which == "Phi_hat":
            return self.Phi_hat(t)
        if which == "Phi_star":
            return self.Phi_star(t, a)
        raise ValueError(f"unknown weight {which!r}")

    def eval_logweight(self, which, t, a, x=None, s=None):
        """Exponent 2 s W(t,a,x) for the factor exp(2 s W), never the factor itself."""
        s = self.s if s is None else s
        return 2.0 * s * self.eval_weight(which, t, a, x)

    def as_dict(self):
        return {"orientation": self.orientation, "s": self.s, "kappa": self.kappa,
                "p_norm": self.p_norm, "rho_norm": self.rho_norm,
                "frak_d": self.frak_d, "rho_truncated": self.rho_truncated}


def build_weights(profile, T, A, s=1.0, kappa="auto", orientation="auto",
                  n_points=513, extra_nodes=None):
    """Assemble the full weight set for a profile on the horizon (T, A).

    ``orientation='auto'`` picks left when k(0) = 0, right when only k(1)
    does.  ``kappa='auto'`` applies the admissibility cap computed from the
    (possibly truncated) sup of rho.
    """
    if orientation == "auto":
        orientation = LEFT if (profile.degenerate0 or not profile.degenerate1) else RIGHT
    xs = tabulation_mesh(profile, n_points, extra=extra_nodes)
    p, p_norm = compute_p(profile, orientation, xs=xs)
    rho, rho_norm, frak_d, truncated = compute_rho(profile, orientation, xs=xs)
    if kappa == "auto":
        kappa_val = kappa_max(p_norm, rho_norm) if rho_norm > 0 else 1.0
    else:
        kappa_val = float(kappa)
        if rho_norm > 0 and kappa_val > kappa_max(p_norm, rho_norm) * (1 + 1e-12):
            raise KappaPolicyError(
                f"kappa={kappa_val} exceeds the admissible cap "
                f"{kappa_max(p_norm, rho_norm):.6g}")
    return WeightSet(orientation=orientation, profile=profile, T=T, A=A, s=s,
                     p=p, p_norm=p_norm, rho=rho, rho_norm=rho_norm,
                     frak_d=frak_d, rho_truncated=truncated, kappa=kappa_val)


def ordering_threshold(ws, t_nodes, a_nodes, x_nodes, power=2, s_lo=1e-6, s_hi=1e6,
                       iters=80):
    """Smallest s (by bisection) with (s Theta)^h e^{2 s eta} <= (s gamma)^h e^{2 s sigma}
    at every supplied node.

    The predicate is monotone in s, so bisection on the all-nodes check is
    exact up to the bracket width.  Returns the threshold, or s_lo when the
    ordering already holds there.
    """
    tg, ag = np.meshgrid(np.asarray(t_nodes), np.asarray(a_nodes), indexing="ij")
    theta = ws.theta(tg, ag)[..., None]
    gamma = ws.gamma(tg, ag)[..., None]
    Psi = ws.Psi(np.asarray(x_nodes))[None, None, :]

    def holds(s):
        lhs = power * np.log(theta) + 2.0 * s * theta * Psi
        rhs = power * np.log(gamma) + 2.0 * s * gamma * Psi
        return bool(np.all(lhs <= rhs + 1e-12))

    if holds(s_lo):
        return s_lo
    if not holds(s_hi):
        raise RuntimeError("weight ordering fails even at the upper bracket")
    lo, hi = s_lo, s_hi
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return hi


def weight_table(ws, which, t_nodes, a_nodes, x_nodes):
    """Rows (t, a, x, value, log_exp_value) for CSV export of one weight."""
    rows = []
    for t in np.asarray(t_nodes, dtype=float):
        for a in np.asarray(a_nodes, dtype=float):
            if which in ("Theta", "gamma"):
                v = float(ws.eval_weight(which, t, a))
                rows.append((t, a, np.nan, v, 2.0 * ws.s * v))
            elif which == "Phi_hat":
                v = float(ws.Phi_hat(t))
                rows.append((t, a, np.nan, v, 2.0 * ws.s * v))
            elif which == "Phi_star":
                v = float(ws.Phi_star(t, a))
                rows.append((t, a, np.nan, v, 2.0 * ws.s * v))
            else:
                for x in np.asarray(x_nodes, dtype=float):
                    v = float(ws.eval_weight(which, t, a, x))
                    rows.append((t, a, x, v, 2.0 * ws.s * v))
    return np.array(rows, dtype=float)
