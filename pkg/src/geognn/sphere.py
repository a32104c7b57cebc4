"""Closed-form Riemannian operations on the unit hypersphere.

All functions accept either a single vector (1-D) or a batch of row
vectors (2-D) and return the matching shape. Math is float64.

Numerical policy:
  * dot products are clamped to [-1+1e-7, 1-1e-7] before arccos, so the
    derivative -1/sqrt(1-c^2) stays finite;
  * the log-map difference term uses the raw (unclamped) dot, which keeps
    log_map(x, x) == 0 exactly and the output orthogonal to the base
    point at machine precision;
  * theta/sin(theta) switches to its series 1 + theta^2/6 below
    SMALL_ANGLE, where the direct quotient loses digits;
  * exp_map output is renormalized so unit norm survives deep stacking.
"""

import numpy as np

from .errors import AntipodalError, DegenerateInputError

COS_CLAMP = 1.0 - 1e-7
SMALL_ANGLE = 1e-4
ANTIPODAL_DOT = -1.0 + 1e-6
ZERO_NORM = 1e-12


def _as_rows(v):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim == 1:
        return a[None, :], True
    if a.ndim == 2:
        return a, False
    raise ValueError(f"expected 1-D or 2-D input, got ndim={a.ndim}")


def _restore(a, single):
    return a[0] if single else a


def project_to_sphere(v):
    """Scale v (or each row of v) to unit L2 norm.

    Raises DegenerateInputError for (near-)zero rows; in-layer code that
    must not abort uses autodiff.row_normalize with its e1 fallback instead.
    """
    rows, single = _as_rows(v)
    norms = np.linalg.norm(rows, axis=1)
    bad = np.nonzero(norms < ZERO_NORM)[0]
    if bad.size:
        raise DegenerateInputError(f"cannot project zero-norm vector (row {bad[0]})")
    return _restore(rows / norms[:, None], single)


def geodesic_distance(x, y):
    """Great-circle distance arccos(clamp(x.y)) in [0, pi]."""
    xr, sx = _as_rows(x)
    yr, sy = _as_rows(y)
    dots = np.einsum("ij,ij->i", xr, yr)
    theta = np.arccos(np.clip(dots, -COS_CLAMP, COS_CLAMP))
    return _restore(theta, sx and sy)


def arc_scale(theta):
    """theta / sin(theta), with the quadratic series below SMALL_ANGLE."""
    theta = np.asarray(theta, dtype=np.float64)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    out = safe / np.sin(safe)
    return np.where(small, 1.0 + theta * theta / 6.0, out)


def arc_scale_derivative(theta):
    """d/dtheta of theta/sin(theta); series theta/3 + 7 theta^3/90 near 0."""
    theta = np.asarray(theta, dtype=np.float64)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    s = np.sin(safe)
    out = (s - safe * np.cos(safe)) / (s * s)
    return np.where(small, theta / 3.0 + 7.0 * theta**3 / 90.0, out)


def sinc(t):
    """sin(t) / t with the series 1 - t^2/6 below SMALL_ANGLE (sinc(0) = 1)."""
    t = np.asarray(t, dtype=np.float64)
    small = np.abs(t) < SMALL_ANGLE
    safe = np.where(small, 1.0, t)
    return np.where(small, 1.0 - t * t / 6.0, np.sin(safe) / safe)


def sinc_derivative(t):
    """d/dt of sin(t)/t; series -t/3 + t^3/30 near 0."""
    t = np.asarray(t, dtype=np.float64)
    small = np.abs(t) < SMALL_ANGLE
    safe = np.where(small, 1.0, t)
    out = (safe * np.cos(safe) - np.sin(safe)) / (safe * safe)
    return np.where(small, -t / 3.0 + t**3 / 30.0, out)


def log_map(x, y, strict=True):
    """Tangent vector at x whose geodesic reaches y; its norm equals the arc length.

    strict=True raises AntipodalError when x.y < -1+1e-6 (the geodesic is
    ambiguous near the antipode). With strict=False the dot is clamped and
    the second return value counts how many pairs were clamped.

    Returns v (same shape as input) in strict mode, (v, n_clamped) otherwise.
    """
    xr, sx = _as_rows(x)
    yr, sy = _as_rows(y)
    dots = np.einsum("ij,ij->i", xr, yr)
    n_antipodal = int(np.count_nonzero(dots < ANTIPODAL_DOT))
    if strict and n_antipodal:
        raise AntipodalError(
            f"{n_antipodal} pair(s) nearly antipodal (dot < {ANTIPODAL_DOT}); geodesic ambiguous"
        )
    theta = np.arccos(np.clip(dots, -COS_CLAMP, COS_CLAMP))
    v = arc_scale(theta)[:, None] * (yr - dots[:, None] * xr)
    # identical rows must map to the exact zero tangent, not |x|^2 roundoff
    identical = np.all(xr == yr, axis=1)
    if identical.any():
        v[identical] = 0.0
    v = _restore(v, sx and sy)
    return v if strict else (v, n_antipodal)


def exp_map(x, u, step=1.0):
    """Follow the geodesic from x along tangent u for length step*|u|.

    Uses the smooth form cos(step*m) x + step*sinc(step*m) u with m = |u|,
    so u -> 0 degrades gracefully to x. Output is renormalized.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    xr, sx = _as_rows(x)
    ur, _ = _as_rows(u)
    m = np.linalg.norm(ur, axis=1)
    am = step * m
    out = np.cos(am)[:, None] * xr + (step * sinc(am))[:, None] * ur
    out /= np.linalg.norm(out, axis=1)[:, None]
    still = m < ZERO_NORM
    if still.any():
        out = np.where(still[:, None], xr, out)
    return _restore(out, sx)


def is_unit(v, tol=1e-6):
    rows, single = _as_rows(v)
    ok = np.abs(np.linalg.norm(rows, axis=1) - 1.0) <= tol
    return bool(ok.all()) if not single else bool(ok[0])


def tangent_residual(x, v):
    """|x.v| per row; near zero when v lies in the tangent space at x."""
    xr, sx = _as_rows(x)
    vr, _ = _as_rows(v)
    res = np.abs(np.einsum("ij,ij->i", xr, vr))
    return _restore(res, sx)
