"""Diffusion profiles, demographic rates, memory kernels, and their admissibility checks.

Every hypothesis imposed on the coefficients is checked pointwise on finite
sample meshes; inequality violations are collected into reports rather than
raised, so a failed check is data the caller can act on.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .util import OVERFLOW_LOG

CLASS_NONE = "none"
CLASS_WEAK = "weak"
CLASS_STRONG = "strong"

# default density / clustering for sampled "a.e." checks
DEFAULT_MESH_POINTS = 800
DEFAULT_MESH_RATIO = 1.05


class CoefficientError(ValueError):
    """Raised for structurally inadmissible coefficient definitions."""


def classify_exponent(M):
    if M < 0 or M >= 2:
        raise CoefficientError(
            f"degeneracy exponent {M} outside the admissible range [0, 2)")
    if M == 0:
        return CLASS_NONE
    if M < 1:
        return CLASS_WEAK
    return CLASS_STRONG


@dataclass(frozen=True)
class DegeneracyProfile:
    """Diffusion coefficient k with its boundary degeneracy classification.

    ``k`` and ``k_prime`` accept numpy arrays.  ``M1``/``M2`` are the slope
    bounds at x=0 and x=1; ``theta0``/``theta1`` the monotonicity exponents
    required when an endpoint is strongly degenerate.
    """

    k: Callable
    k_prime: Callable
    M1: float
    M2: float
    theta0: Optional[float] = None
    theta1: Optional[float] = None
    class0: str = CLASS_NONE
    class1: str = CLASS_NONE
    label: str = "custom"

    @property
    def degenerate0(self):
        return self.class0 != CLASS_NONE

    @property
    def degenerate1(self):
        return self.class1 != CLASS_NONE


def power_law_profile(M1, M2):
    """Profile k(x) = x^M1 (1-x)^M2 with its exact derivative.

    Each endpoint is classified from its exponent; the monotonicity
    exponent at a strongly degenerate endpoint is the exponent itself
    (k / x^M1 is constant near 0, hence nondecreasing).
    """
    c0 = classify_exponent(M1)
    c1 = classify_exponent(M2)

    def k(x):
        x = np.asarray(x, dtype=float)
        return x ** M1 * (1.0 - x) ** M2

    def k_prime(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.zeros_like(x)
            if M1 != 0:
                out = out + M1 * x ** (M1 - 1.0) * (1.0 - x) ** M2
            if M2 != 0:
                out = out - M2 * x ** M1 * (1.0 - x) ** (M2 - 1.0)
        return out

    return DegeneracyProfile(
        k=k, k_prime=k_prime, M1=M1, M2=M2,
        theta0=M1 if c0 == CLASS_STRONG else None,
        theta1=M2 if c1 == CLASS_STRONG else None,
        class0=c0, class1=c1,
        label=f"power_law(M1={M1}, M2={M2})")


def constant_profile(value=1.0):
    if value <= 0:
        raise CoefficientError("constant diffusion must be positive")

    def k(x):
        return np.full_like(np.asarray(x, dtype=float), value)

    def k_prime(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    return DegeneracyProfile(k=k, k_prime=k_prime, M1=0.0, M2=0.0,
                             label=f"constant({value})")


def _central_difference(k, step_scale=1e-6, step_floor=1e-8):
    def k_prime(x):
        x = np.asarray(x, dtype=float)
        # local spacing proxy: distance to the nearer endpoint of (0,1)
        local = np.minimum(np.abs(x), np.abs(1.0 - x))
        h = np.maximum(step_scale * np.maximum(local, 1.0), step_floor)
        lo = np.clip(x - h, 0.0, 1.0)
        hi = np.clip(x + h, 0.0, 1.0)
        denom = hi - lo
        denom = np.where(denom > 0, denom, 1.0)
        return (k(hi) - k(lo)) / denom

    return k_prime


def tabulated_profile(xs, ks, M1, M2, theta0=None, theta1=None, label="tabulated"):
    """Profile from (x, k) samples with monotone-cubic interpolation.

    The claimed exponents are supplied by the caller and audited by
    ``validate_profile``; the derivative comes from the interpolant.
    """
    from scipy.interpolate import PchipInterpolator

    xs = np.asarray(xs, dtype=float)
    ks = np.asarray(ks, dtype=float)
    if xs.ndim != 1 or xs.size < 4 or np.any(np.diff(xs) <= 0):
        raise CoefficientError("tabulated profile needs >= 4 strictly increasing x samples")
    interp = PchipInterpolator(xs, ks, extrapolate=True)
    deriv = interp.derivative()
    c0 = classify_exponent(M1)
    c1 = classify_exponent(M2)
    return DegeneracyProfile(
        k=lambda x: np.asarray(interp(x), dtype=float),
        k_prime=lambda x: np.asarray(deriv(x), dtype=float),
        M1=M1, M2=M2,
        theta0=theta0 if theta0 is not None else (M1 if c0 == CLASS_STRONG else None),
        theta1=theta1 if theta1 is not None else (M2 if c1 == CLASS_STRONG else None),
        class0=c0, class1=c1, label=label)


def callable_profile(k, M1, M2, k_prime=None, label="callable"):
    """Wrap a user-supplied k; derivative by central differences when absent."""
    c0 = classify_exponent(M1)
    c1 = classify_exponent(M2)
    return DegeneracyProfile(
        k=k, k_prime=k_prime if k_prime is not None else _central_difference(k),
        M1=M1, M2=M2,
        theta0=M1 if c0 == CLASS_STRONG else None,
        theta1=M2 if c1 == CLASS_STRONG else None,
        class0=c0, class1=c1, label=label)


@dataclass(frozen=True)
class RateSet:
    """Fertility beta(a, x), mortality mu(t, a, x) and the fertility-free age a_bar."""

    beta: Callable
    mu: Callable
    a_bar: float
    beta_sup: float = 0.0
    label: str = "custom"


def make_rates(beta, mu, a_bar, A, beta_sup=None, label="custom"):
    if a_bar < 0 or a_bar > A:
        raise CoefficientError(f"a_bar={a_bar} must lie in [0, A]")
    if beta_sup is None:
        aa, xx = np.meshgrid(np.linspace(0, A, 101), np.linspace(0, 1, 41), indexing="ij")
        beta_sup = float(np.max(np.abs(beta(aa, xx))))
    return RateSet(beta=beta, mu=mu, a_bar=a_bar, beta_sup=beta_sup, label=label)


def beta_ramp(a_bar, amp=1.0):
    """Continuous fertility vanishing on [0, a_bar]: amp * max(a - a_bar, 0)."""
    def beta(a, x):
        a = np.asarray(a, dtype=float)
        return amp * np.maximum(a - a_bar, 0.0) * np.ones_like(np.asarray(x, dtype=float))
    return beta


def beta_constant(amp=1.0):
    def beta(a, x):
        return amp * np.ones(np.broadcast(np.asarray(a), np.asarray(x)).shape)
    return beta


def beta_zero():
    def beta(a, x):
        return np.zeros(np.broadcast(np.asarray(a), np.asarray(x)).shape)
    return beta


def mu_constant(amp=0.0):
    def mu(t, a, x):
        return amp * np.ones(np.broadcast(np.asarray(a), np.asarray(x)).shape)
    return mu


@dataclass(frozen=True)
class MemoryKernel:
    """Memory kernel b(t, s, a, x) with its sup norm.

    ``b`` receives scalar t, s and arrays a, x (broadcast to the field
    shape).  ``admissibility_constant`` stores the smallest parameter at
    which a certificate was produced, when one exists.
    """

    b: Callable
    sup_norm: float
    admissibility_constant: Optional[float] = None
    label: str = "custom"

    @property
    def is_zero(self):
        return self.sup_norm == 0.0


def kernel_zero():
    def b(t, s, a, x):
        return np.zeros(np.broadcast(np.asarray(a), np.asarray(x)).shape)
    return MemoryKernel(b=b, sup_norm=0.0, label="zero")


def kernel_constant(b0=1.0):
    def b(t, s, a, x):
        return b0 * np.ones(np.broadcast(np.asarray(a), np.asarray(x)).shape)
    return MemoryKernel(b=b, sup_norm=abs(b0), label=f"constant({b0})")


def kernel_gaussian(b0=1.0, width=0.1):
    """Short-memory kernel b0 * exp(-((t-s)/width)^2), spatially uniform."""
    def b(t, s, a, x):
        shape = np.broadcast(np.asarray(a), np.asarray(x)).shape
        return b0 * np.exp(-((t - s) / width) ** 2) * np.ones(shape)
    return MemoryKernel(b=b, sup_norm=abs(b0), label=f"gaussian_kernel({b0},{width})")


def admissible_decay_rate(s, p_norm, T):
    """Decay constant that exactly cancels the admissibility weight at s."""
    return 2.0 * (4.0 ** 4) * s * p_norm / T ** 4


def kernel_admissible_decay(b0, decay, T):
    """Kernel b0 * exp(-decay / ((T-t)^4 a^4)).

    With decay >= admissible_decay_rate(s, p_norm, T) the weighted product
    checked by ``check_memory_admissibility`` is bounded by b0 at that s.
    """
    def b(t, s, a, x):
        a = np.asarray(a, dtype=float)
        shape = np.broadcast(a, np.asarray(x)).shape
        tt = min(t, T - 1e-300)
        with np.errstate(over="ignore"):
            expo = -decay / ((T - tt) ** 4 * a ** 4)
        return b0 * np.exp(expo) * np.ones(shape)
    return MemoryKernel(b=b, sup_norm=abs(b0),
                        label=f"admissible_decay_kernel({b0},{decay:.6g})")


@dataclass(frozen=True)
class ControlWindow:
    """Open observation interval (alpha, rho_w) compactly inside (0, 1)."""

    alpha: float
    rho_w: float

    def __post_init__(self):
        if not (0.0 < self.alpha < self.rho_w < 1.0):
            raise CoefficientError(
                f"control window ({self.alpha}, {self.rho_w}) not compactly inside (0,1)")

    def mask(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.alpha) & (x < self.rho_w)

    def shrink(self, margin=0.25):
        """Strictly interior subwindow, for the Caccioppoli audit."""
        width = self.rho_w - self.alpha
        return ControlWindow(self.alpha + margin * width, self.rho_w - margin * width)


# ---------------------------------------------------------------------------
# validation reports
# ---------------------------------------------------------------------------

@dataclass
class Violation:
    check: str
    location: dict
    residual: float
    message: str

    def as_dict(self):
        return {"check": self.check, "location": self.location,
                "residual": self.residual, "message": self.message}


@dataclass
class ValidationReport:
    subject: str
    checks_run: int = 0
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def add(self, check, location, residual, message):
        self.violations.append(Violation(check, dict(location), float(residual), message))

    def as_dict(self):
        return {"subject": self.subject, "passed": self.passed,
                "checks_run": self.checks_run, "notes": list(self.notes),
                "violations": [v.as_dict() for v in self.violations]}


def inequality_mesh(n=DEFAULT_MESH_POINTS, degenerate0=True, degenerate1=True,
                    ratio=DEFAULT_MESH_RATIO):
    """Interior sample mesh of (0,1), geometrically clustered toward degenerate ends."""
    spac = graded_spacings(n + 1, degenerate0, degenerate1, ratio)
    return np.cumsum(spac)[:-1]


def graded_spacings(n, left, right, ratio):
    """n positive cell widths summing to 1, smallest toward flagged ends."""
    if ratio <= 1.0 or (not left and not right):
        return np.full(n, 1.0 / n)
    if left and right:
        half = n // 2
        s = ratio ** np.arange(half, dtype=float)
        s = np.concatenate([s, s[::-1]] if n % 2 == 0 else [s, [s[-1] * ratio], s[::-1]])
    elif left:
        s = ratio ** np.arange(n, dtype=float)
    else:
        s = ratio ** np.arange(n, dtype=float)[::-1]
    return s / s.sum()


SLOPE_TOL = 1e-12


def validate_profile(profile, mesh=None):
    """Audit a profile against every degeneracy hypothesis on a sample mesh.

    Checks positivity, vanishing at flagged endpoints, the slope bounds
    x k' <= M1 k and (x-1) k' <= M2 k, exponent class ranges, and the
    monotonicity of k/x^theta near a strongly degenerate endpoint (on the
    nearest 10% of sample points).
    """
    if mesh is None:
        mesh = inequality_mesh(degenerate0=profile.degenerate0,
                               degenerate1=profile.degenerate1)
    mesh = np.asarray(mesh, dtype=float)
    if mesh.size == 0 or np.any(np.diff(mesh) <= 0) or mesh[0] <= 0 or mesh[-1] >= 1:
        raise CoefficientError("sample mesh must be strictly increasing inside (0,1)")

    rep = ValidationReport(subject=f"profile:{profile.label}")
    kv = profile.k(mesh)
    kp = profile.k_prime(mesh)
    rep.checks_run += mesh.size

    for idx in np.nonzero(~(kv > 0.0))[0]:
        rep.add("positivity", {"x": mesh[idx]}, -kv[idx],
                f"k({mesh[idx]:.6g}) = {kv[idx]:.3e} is not positive")

    # endpoint values: degenerate ends must vanish, classified None must not
    for x_end, cls, name in ((0.0, profile.class0, "0"), (1.0, profile.class1, "1")):
        k_end = float(profile.k(np.array([x_end]))[0])
        if cls != CLASS_NONE and not abs(k_end) <= 1e-10:
            rep.add("endpoint_vanishing", {"x": x_end}, abs(k_end),
                    f"k({name}) = {k_end:.3e} but endpoint is classified degenerate")
        if cls == CLASS_NONE and k_end <= 0:
            rep.add("endpoint_positive", {"x": x_end}, -k_end,
                    f"k({name}) <= 0 but endpoint is classified nondegenerate")

    scale = np.maximum(1.0, np.abs(kv))
    res0 = mesh * kp - profile.M1 * kv
    for idx in np.nonzero(res0 > SLOPE_TOL * scale)[0]:
        rep.add("slope_bound_0", {"x": mesh[idx]}, res0[idx],
                f"x k'(x) > M1 k(x) at x={mesh[idx]:.6g} (residual {res0[idx]:.3e})")
    res1 = (mesh - 1.0) * kp - profile.M2 * kv
    for idx in np.nonzero(res1 > SLOPE_TOL * scale)[0]:
        rep.add("slope_bound_1", {"x": mesh[idx]}, res1[idx],
                f"(x-1) k'(x) > M2 k(x) at x={mesh[idx]:.6g} (residual {res1[idx]:.3e})")

    for M, cls, name in ((profile.M1, profile.class0, "0"), (profile.M2, profile.class1, "1")):
        ok = (cls == CLASS_NONE and M == 0) or \
             (cls == CLASS_WEAK and 0 < M < 1) or \
             (cls == CLASS_STRONG and 1 <= M < 2)
        if not ok:
            rep.add("class_range", {"endpoint": name}, 0.0,
                    f"exponent {M} inconsistent with class {cls} at endpoint {name}")

    n_near = max(mesh.size // 10, 3)
    if profile.class0 == CLASS_STRONG and profile.theta0 is not None:
        xs = mesh[:n_near]
        ratio = profile.k(xs) / xs ** profile.theta0
        drops = np.diff(ratio)
        for idx in np.nonzero(drops < -SLOPE_TOL * np.maximum(1.0, np.abs(ratio[:-1])))[0]:
            rep.add("monotonicity_0", {"x": xs[idx + 1]}, -drops[idx],
                    "k(x)/x^theta decreasing near 0 despite strong degeneracy")
    if profile.class1 == CLASS_STRONG and profile.theta1 is not None:
        xs = mesh[-n_near:]
        ratio = profile.k(xs) / np.abs(1.0 - xs) ** profile.theta1
        rises = np.diff(ratio)
        for idx in np.nonzero(rises > SLOPE_TOL * np.maximum(1.0, np.abs(ratio[:-1])))[0]:
            rep.add("monotonicity_1", {"x": xs[idx + 1]}, rises[idx],
                    "k(x)/|1-x|^theta increasing toward 1 despite strong degeneracy")
    return rep


def validate_rates(rates, A, T, sample_counts=(9, 65, 33)):
    """Check beta, mu >= 0, beta == 0 on [0, a_bar] x [0,1], and a_bar <= T."""
    if A <= 0 or T <= 0:
        raise CoefficientError("A and T must be positive")
    nt, na, nx = sample_counts
    rep = ValidationReport(subject=f"rates:{rates.label}")
    ts = np.linspace(0.0, T, nt)
    aa = np.linspace(0.0, A, na)
    xx = np.linspace(0.0, 1.0, nx)
    ag, xg = np.meshgrid(aa, xx, indexing="ij")

    bv = rates.beta(ag, xg)
    rep.checks_run += bv.size
    bad = np.nonzero(bv < -1e-14)
    for i, j in zip(*bad):
        rep.add("beta_nonnegative", {"a": ag[i, j], "x": xg[i, j]}, -bv[i, j],
                f"beta({ag[i, j]:.4g},{xg[i, j]:.4g}) = {bv[i, j]:.3e} negative")
        break  # one witness per check keeps reports readable

    window = ag <= rates.a_bar + 1e-14
    nz = np.nonzero(window & (np.abs(bv) > 1e-14))
    for i, j in zip(*nz):
        rep.add("beta_fertility_free", {"a": ag[i, j], "x": xg[i, j]}, abs(bv[i, j]),
                "beta nonzero on the fertility-free window [0, a_bar]")
        break

    for t in ts:
        mv = rates.mu(t, ag, xg)
        rep.checks_run += mv.size
        bad = np.nonzero(mv < -1e-14)
        if bad[0].size:
            i, j = bad[0][0], bad[1][0]
            rep.add("mu_nonnegative", {"t": t, "a": ag[i, j], "x": xg[i, j]}, -mv[i, j],
                    f"mu negative at t={t:.4g}, a={ag[i, j]:.4g}, x={xg[i, j]:.4g}")
            break

    if rates.a_bar > T:
        rep.add("a_bar_le_T", {"a_bar": rates.a_bar, "T": T}, rates.a_bar - T,
                f"a_bar={rates.a_bar} exceeds the horizon T={T}")
    return rep


def check_memory_admissibility(kernel, s, p_norm, T, A, sample_counts=(24, 6, 24, 8),
                               overflow_log=OVERFLOW_LOG):
    """Sup over a sample grid of exp(2*4^4*s*|p|/(T^4 (T-t)^4 a^4)) * |b|.

    A finite return certifies the kernel at this s on this grid; +inf means
    the weighted product overflows (log exceeding ``overflow_log``) at some
    node where b is not exactly zero.  Everything runs in log space.
    """
    if s <= 0 or p_norm <= 0:
        raise CoefficientError("admissibility check needs s > 0 and p_norm > 0")
    nt, ns, na, nx = sample_counts
    ts = (np.arange(nt) + 0.5) * (T / nt)
    ss = (np.arange(ns) + 0.5) * (T / ns)
    aa = (np.arange(na) + 0.5) * (A / na)
    xx = (np.arange(nx) + 0.5) * (1.0 / nx)
    ag, xg = np.meshgrid(aa, xx, indexing="ij")

    coeff = 2.0 * (4.0 ** 4) * s * p_norm / T ** 4
    best = -np.inf
    for t in ts:
        log_w = coeff / ((T - t) ** 4 * ag ** 4)
        for sp in ss:
            if sp > t:
                continue
            bv = np.abs(kernel.b(t, sp, ag, xg))
            mask = bv > 0.0
            if not np.any(mask):
                continue
            logs = np.log(bv[mask]) + log_w[mask]
            best = max(best, float(np.max(logs)))
    if best == -np.inf:
        return 0.0
    if best > overflow_log:
        return np.inf
    return float(np.exp(best))
