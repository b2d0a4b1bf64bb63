"""Continuous bead-model kernel J on integer-indexed threads.

The kernel of the bead point process is

    J(x, xi) =  (1/2pi) * int_{[-1,1]}   e^{-i xi phi} (gamma + i phi s)^x dphi   (x >= 0)
    J(x, xi) = -(1/2pi) * int_{R\[-1,1]} e^{-i xi phi} (gamma + i phi s)^x dphi   (x <  0)

with s = sqrt(1 - gamma^2).  Pairing phi with -phi conjugates the integrand,
so J is real, and it is even in xi.  The single-thread marginal J(0, xi) is
the sine kernel sin(xi)/(pi*xi).

Evaluation strategy:

* x = 0: closed form sin(xi)/(pi*xi).
* xi = 0: closed forms sin((x+1)*arccos(gamma)) / (pi*s*(x+1)) for x != -1,
  and (arccos(gamma) - pi/2)/(pi*s) for x = -1 (antiderivative of the
  Cauchy-type integrand).
* x > 0: exact binomial expansion into trigonometric moments
  M_k = int_{-1}^{1} phi^k e^{-i xi phi} dphi with a closed-form recursion
  (power series in xi where the recursion would cancel catastrophically).
* x < 0: the tail integral is rotated onto the ray phi = 1 - i*t, where the
  oscillatory factor becomes a decaying exponential:

      int_1^inf e^{-i xi phi} (gamma + i phi s)^x dphi
        = -i e^{-i xi} int_0^inf e^{-xi t} (gamma + s t + i s)^x dt     (xi > 0)

  The rotated integrand is smooth and non-oscillatory; adaptive quadrature
  plus an analytic truncation bound certify the result.

All functions here are pure; they may be called concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import AccuracyError, DomainError

DEFAULT_TOL = 1e-10

# quadrature budget for the rotated-contour tail evaluation
_QUAD_LIMIT = 400
_TMAX_CAP = 1e18


@dataclass(frozen=True)
class KernelParams:
    """Bead-model parameter gamma in (-1, 1) with cached s = sqrt(1-gamma^2)."""

    gamma: float
    s: float = None  # derived; filled in __post_init__

    def __post_init__(self):
        g = float(self.gamma)
        if not (-1.0 < g < 1.0):
            raise DomainError(f"gamma must lie in (-1, 1), got {g}")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "s", math.sqrt(1.0 - g * g))


@dataclass(frozen=True)
class KernelValue:
    value: float
    abs_error_bound: float

    def __post_init__(self):
        if not (math.isfinite(self.abs_error_bound) and self.abs_error_bound >= 0.0):
            raise DomainError("abs_error_bound must be finite and nonnegative")


def _kernel_at_zero(params: KernelParams, x: int) -> float:
    """J(x, 0) in closed form.

    From the antiderivative of (gamma + i phi s)^x: for x != -1,
    J(x,0) = sin((x+1) theta)/(pi s (x+1)) with theta = arccos(gamma);
    the x = -1 case integrates the Cauchy kernel to an arctangent.
    """
    g, s = params.gamma, params.s
    theta = math.acos(g)
    if x == -1:
        return (theta - math.pi / 2.0) / (math.pi * s)
    return math.sin((x + 1) * theta) / (math.pi * s * (x + 1))


def _moments(kmax: int, xi: float):
    """Real moment coefficients c_k (k even) and sh_k (k odd) up to kmax.

    c_k  = 2*int_0^1 phi^k cos(xi phi) dphi,
    sh_k = 2*int_0^1 phi^k sin(xi phi) dphi,
    so that M_k = int_{-1}^{1} phi^k e^{-i xi phi} dphi equals c_k for even k
    and -i*sh_k for odd k.  The upward recursion divides by xi, which is
    stable only for |xi| >~ k; otherwise the alternating power series is used.
    """
    out = np.zeros(kmax + 1)
    axi = abs(xi)
    if axi <= max(10.0, 0.9 * kmax):
        # series: c_k = 2 sum_n (-1)^n xi^(2n) / ((2n)! (k+2n+1)), similarly sh_k
        for k in range(kmax + 1):
            acc = 0.0
            term_pow = 1.0  # xi^(2n)/(2n)! or xi^(2n+1)/(2n+1)!
            if k % 2 == 1:
                term_pow = axi
            n = 0
            while True:
                if k % 2 == 0:
                    acc += (1 if n % 2 == 0 else -1) * term_pow / (k + 2 * n + 1)
                    term_pow *= axi * axi / ((2 * n + 1) * (2 * n + 2))
                else:
                    acc += (1 if n % 2 == 0 else -1) * term_pow / (k + 2 * n + 2)
                    term_pow *= axi * axi / ((2 * n + 2) * (2 * n + 3))
                n += 1
                if term_pow < 1e-18 * max(abs(acc), 1e-30) and n > 2:
                    break
                if n > 500:
                    raise AccuracyError("moment series failed to converge")
            out[k] = 2.0 * acc
    else:
        c0 = 2.0 * math.sin(axi) / axi
        out[0] = c0
        prev = c0
        for k in range(1, kmax + 1):
            if k % 2 == 1:
                cur = (k * prev - 2.0 * math.cos(axi)) / axi
            else:
                cur = (2.0 * math.sin(axi) - k * prev) / axi
            out[k] = cur
            prev = cur
    return out


def _eval_positive(params: KernelParams, x: int, xi: float):
    """Binomial-moment evaluation for x >= 1 (exact up to rounding)."""
    g, s = params.gamma, params.s
    m = _moments(x, xi)
    total = 0.0
    abs_total = 0.0
    for k in range(x + 1):
        binom = math.comb(x, k)
        if k % 2 == 0:
            w = (-1.0) ** (k // 2) * m[k]
        else:
            w = (-1.0) ** ((k - 1) // 2) * m[k]
        term = binom * (g ** (x - k)) * (s**k) * w
        total += term
        abs_total += abs(term)
    value = total / (2.0 * math.pi)
    # rounding bound: cancellation across binomial terms plus moment error
    err = (abs_total * 5e-15 + 1e-16) / (2.0 * math.pi)
    return value, err


def _tail_bound(x: int, s: float, xi: float, T: float) -> float:
    """Bound on |int_T^inf e^{-xi t} (gamma + s t + i s)^x dt| for x < 0.

    |h(t)| <= (s*t/2)^x once t >= 4/s (then gamma + s*t >= s*t/2 even for
    gamma near -1); the exponential and power-law tails are combined.
    """
    if s * T < 4.0:
        return math.inf
    env = (0.5 * s * T) ** x
    bounds = []
    if xi > 0:
        bounds.append(env * math.exp(-xi * T) / xi)
    if x <= -2:
        bounds.append((0.5 * s) ** x * T ** (x + 1) / (-x - 1))
    return min(bounds) if bounds else math.inf


# geometric panel ladder for the rotated contour: [0, 2^k0], then doubling.
_LADDER_K0 = -6
_panel_cache: dict = {}


def _gl_nodes(n):
    key = ("gl", n)
    if key not in _panel_cache:
        _panel_cache[key] = np.polynomial.legendre.leggauss(n)
    return _panel_cache[key]


def _ladder(params: KernelParams, x: int, n_levels: int, order: int):
    """Panel nodes, weights and h-values for int_0^(2^kmax) e^{-xi t} h(t) dt.

    h(t) = (gamma + s t + i s)^x does not depend on xi, so one ladder serves
    every xi; callers apply the exponential factor and truncate at the panel
    level they need.  Returns (edges, nodes, weights, hvals) with nodes grouped
    per panel.
    """
    key = (params.gamma, x, n_levels, order)
    if key not in _panel_cache:
        g, s = params.gamma, params.s
        xg, wg = _gl_nodes(order)
        edges = [0.0] + [2.0**k for k in range(_LADDER_K0, _LADDER_K0 + n_levels)]
        nodes, weights = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            nodes.append(0.5 * (hi - lo) * (xg + 1.0) + lo)
            weights.append(0.5 * (hi - lo) * wg)
        nodes = np.array(nodes)
        weights = np.array(weights)
        hvals = (g + s * nodes + 1j * s) ** x
        _panel_cache[key] = (np.array(edges), nodes, weights, hvals)
    return _panel_cache[key]


def _eval_negative_batch(params: KernelParams, x: int, xis: np.ndarray, tol: float):
    """Rotated-contour evaluation of J(x, xi) for x <= -1 over an array of xi > 0."""
    g, s = params.gamma, params.s
    xis = np.asarray(xis, dtype=float)
    xi_min = float(xis.min())
    # truncation level: smallest T in the ladder with certified tail
    T = max(8.0, 8.0 / s)
    while _tail_bound(x, s, xi_min, T) > tol / 4.0:
        T *= 2.0
        if T > _TMAX_CAP:
            raise AccuracyError(f"tail truncation for J({x}, ...) cannot reach {tol}")
    n_levels = int(math.ceil(math.log2(T))) - _LADDER_K0 + 1
    edges, nodes, weights, hvals = _ladder(params, x, n_levels, 48)
    _, nodes_lo, weights_lo, hvals_lo = _ladder(params, x, n_levels, 24)
    Tmax = edges[-1]
    tail = _tail_bound(x, s, xi_min, Tmax)

    expf = np.exp(-np.multiply.outer(xis, nodes))          # (m, panels, order)
    I_hi = np.einsum("mpo,po->m", expf, weights * hvals)
    expf_lo = np.exp(-np.multiply.outer(xis, nodes_lo))
    I_lo = np.einsum("mpo,po->m", expf_lo, weights_lo * hvals_lo)
    quad_err = np.abs(I_hi - I_lo)

    total = -1j * np.exp(-1j * xis) * I_hi
    values = -(1.0 / math.pi) * total.real
    errs = (2.0 * quad_err + tail + 5e-15) / math.pi
    return values, errs


def _eval_negative(params: KernelParams, x: int, xi: float, tol: float):
    v, e = _eval_negative_batch(params, x, np.array([xi]), tol)
    return float(v[0]), float(e[0])


def eval_kernel(params: KernelParams, x: int, xi: float, tol: float = DEFAULT_TOL) -> KernelValue:
    """Evaluate J(x, xi) with a certified absolute error bound.

    The result is real by construction (the +phi/-phi symmetrized path is
    the only one implemented).  J is even in xi, so only |xi| matters.

    Note: J(-1, .) is discontinuous at xi = 0.  The tail of the symmetrized
    integrand contains phi*s*sin(xi*phi)/(gamma^2 + s^2 phi^2), whose integral
    tends to pi/(2s) (a Dirichlet integral) as xi -> 0+ instead of 0, so

        lim_{xi->0} J(-1, xi) = J(-1, 0) + 1/(2s),

    while J(-1, 0) itself (the value returned here, an arctangent in closed
    form) uses e^{i*0} = 1 in the defining integral.  Scaling limits of
    discrete kernels approach the xi -> 0 limit, not the point value.
    """
    if not isinstance(params, KernelParams):
        params = KernelParams(params)
    x = int(x)
    xi = abs(float(xi))
    if not math.isfinite(xi):
        raise DomainError("xi must be finite")

    if x == 0:
        if xi < 1e-8:
            # removable singularity: sin(xi)/(pi xi) = (1 - xi^2/6 + ...)/pi
            return KernelValue((1.0 - xi * xi / 6.0) / math.pi, 1e-16)
        return KernelValue(math.sin(xi) / (math.pi * xi), 5e-16)
    if xi == 0.0:
        return KernelValue(_kernel_at_zero(params, x), 1e-14)
    if x > 0:
        value, err = _eval_positive(params, x, xi)
    else:
        value, err = _eval_negative(params, x, xi, tol)
    if err > max(tol, 1e-12) * 10 and err > 1e-8:
        raise AccuracyError(f"J({x}, {xi}): certified error {err:.2e} exceeds tolerance")
    return KernelValue(value, err)


def eval_kernel_many(params: KernelParams, x: int, xis, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Vectorized J(x, xi) over an array of xi values (values only)."""
    xis = np.abs(np.asarray(xis, dtype=float))
    out = np.empty(xis.shape)
    flat = xis.ravel()
    res = out.ravel()
    if x == 0:
        small = flat < 1e-8
        res[small] = (1.0 - flat[small] ** 2 / 6.0) / math.pi
        nz = ~small
        res[nz] = np.sin(flat[nz]) / (math.pi * flat[nz])
        return out
    zero = flat == 0.0
    if zero.any():
        res[zero] = _kernel_at_zero(params, x)
    nz = ~zero
    if nz.any():
        if x > 0:
            for i in np.nonzero(nz)[0]:
                res[i] = _eval_positive(params, x, flat[i])[0]
        else:
            vals, _ = _eval_negative_batch(params, x, flat[nz], tol)
            res[nz] = vals
    return out


def kernel_matrix(params: KernelParams, points) -> np.ndarray:
    """Matrix [J(x_i - x_j, xi_i - xi_j)] over a list of bead points.

    ``points`` is a sequence of (thread, position) pairs or objects with
    .thread/.position attributes.  Diagonal entries equal 1/pi.
    """
    pts = []
    for p in points:
        if hasattr(p, "thread"):
            pts.append((int(p.thread), float(p.position)))
        else:
            t, pos = p
            pts.append((int(t), float(pos)))
    for t, pos in pts:
        if not math.isfinite(pos):
            raise DomainError("bead positions must be finite")
    n = len(pts)
    threads = np.array([p[0] for p in pts])
    positions = np.array([p[1] for p in pts])
    dx = threads[:, None] - threads[None, :]
    dxi = np.abs(positions[:, None] - positions[None, :])
    out = np.empty((n, n))
    for x in np.unique(dx):
        mask = dx == x
        out[mask] = eval_kernel_many(params, int(x), dxi[mask])
    return out
