"""Log-space accumulation helpers and batched tridiagonal solves.

The Carleman weights span hundreds of orders of magnitude, so every
weighted integral is accumulated as log(sum(exp(...))) rather than as a
plain float sum.  Totals are carried around as natural logs; ``exp`` only
happens at the reporting boundary.
"""

import numpy as np
from scipy.special import logsumexp

# exp() arguments above this are reported as overflow rather than evaluated
OVERFLOW_LOG = 700.0

NEG_INF = -np.inf


def log_weighted_square_sum(values, log_weight, measure):
    """log of sum(values**2 * measure * exp(log_weight)).

    ``values``, ``log_weight`` and ``measure`` broadcast together.  Entries
    with zero value or zero measure contribute nothing; -inf log weights are
    handled by logsumexp.  Returns -inf for an empty/all-zero sum.
    """
    values = np.asarray(values, dtype=float)
    log_weight = np.broadcast_to(np.asarray(log_weight, dtype=float), values.shape)
    measure = np.broadcast_to(np.asarray(measure, dtype=float), values.shape)
    mag = values * values * measure
    mask = (mag > 0.0) & np.isfinite(log_weight)
    if not np.any(mask):
        return NEG_INF
    terms = np.log(mag[mask]) + log_weight[mask]
    return float(logsumexp(terms))


def log_add(a, b):
    """log(exp(a) + exp(b)) with -inf treated as an exact zero."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    return float(np.logaddexp(a, b))


def log_total(logs):
    total = NEG_INF
    for v in logs:
        total = log_add(total, v)
    return total


def safe_exp(log_value):
    """exp(log_value); 0.0 on deep underflow, inf above OVERFLOW_LOG."""
    if log_value == NEG_INF:
        return 0.0
    if log_value > OVERFLOW_LOG:
        return np.inf
    return float(np.exp(log_value))


def log_ratio(log_num, log_den):
    """exp(log_num - log_den); NaN when the denominator is an exact zero."""
    if log_den == NEG_INF:
        return np.nan if log_num == NEG_INF else np.inf
    if log_num == NEG_INF:
        return 0.0
    return safe_exp(log_num - log_den)


def solve_tridiagonal_batch(sub, diag, sup, rhs):
    """Solve a batch of independent tridiagonal systems by the Thomas sweep.

    All arguments have shape (..., n); the systems are indexed by the
    leading axes.  ``sub[..., 0]`` and ``sup[..., -1]`` are ignored.  The
    matrices produced by the implicit diffusion steps are strictly
    diagonally dominant, so no pivoting is needed.
    """
    diag = np.broadcast_to(diag, rhs.shape)
    sub = np.broadcast_to(sub, rhs.shape)
    sup = np.broadcast_to(sup, rhs.shape)
    n = rhs.shape[-1]
    cp = np.empty_like(rhs)
    dp = np.empty_like(rhs)
    cp[..., 0] = sup[..., 0] / diag[..., 0]
    dp[..., 0] = rhs[..., 0] / diag[..., 0]
    for i in range(1, n):
        m = diag[..., i] - sub[..., i] * cp[..., i - 1]
        cp[..., i] = sup[..., i] / m
        dp[..., i] = (rhs[..., i] - sub[..., i] * dp[..., i - 1]) / m
    out = np.empty_like(rhs)
    out[..., n - 1] = dp[..., n - 1]
    for i in range(n - 2, -1, -1):
        out[..., i] = dp[..., i] - cp[..., i] * out[..., i + 1]
    return out
