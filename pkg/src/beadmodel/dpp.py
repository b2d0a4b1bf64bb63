"""Determinantal computations for the bead process.

Correlation functions are determinants of the kernel J; counting statistics
on a window come from the factorial-moment generating function

    Q(z) = sum_n A(n) (-z)^n / n!,     P(X = n) = ((-1)^|n| / n!) d^n Q |_{z=1},

where A(n) is the n-th (multi-index) factorial moment, an integral of a block
determinant over the window.  Factorial moments are evaluated by tensor-product
Gauss-Legendre quadrature; summing the resulting determinant over all node
tuples is performed through the principal-minor identity

    sum_{|S| = m} det(M_S) = e_m(eigenvalues of M),

so the full ladder of moments costs one eigendecomposition instead of an
m-dimensional loop.  Gap probabilities use a Nystrom discretization of the
Fredholm determinant det(Id - K restricted to [0, s]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import AccuracyError, DomainError
from .kernel import KernelParams, eval_kernel, kernel_matrix

MAX_ORDER_DEFAULT = 6
_SUP_J = 1.0 / math.pi  # uniform bound on |J|


@dataclass(frozen=True)
class BeadPoint:
    thread: int
    position: float

    def __post_init__(self):
        if not math.isfinite(self.position):
            raise DomainError("bead position must be finite")
        object.__setattr__(self, "thread", int(self.thread))
        object.__setattr__(self, "position", float(self.position))


@dataclass(frozen=True)
class WindowSpec:
    """Disjoint intervals (thread, lo, hi); same-thread intervals must not overlap."""

    intervals: tuple

    def __init__(self, intervals):
        ivs = tuple((int(t), float(lo), float(hi)) for (t, lo, hi) in intervals)
        for t, lo, hi in ivs:
            if not lo < hi:
                raise DomainError(f"interval ({t}, {lo}, {hi}) must have lo < hi")
        by_thread: dict[int, list] = {}
        for t, lo, hi in ivs:
            by_thread.setdefault(t, []).append((lo, hi))
        for t, spans in by_thread.items():
            spans.sort()
            for (l1, h1), (l2, h2) in zip(spans, spans[1:]):
                if l2 < h1:
                    raise DomainError(f"overlapping intervals on thread {t}")
        object.__setattr__(self, "intervals", ivs)

    @property
    def total_length(self):
        return sum(hi - lo for _, lo, hi in self.intervals)


@dataclass
class CountDistribution:
    support: list  # tuples of per-interval counts
    probabilities: list
    tail_bound: float
    clamped_mass: float = 0.0

    def marginal_mean(self):
        return [
            sum(p * n[j] for n, p in zip(self.support, self.probabilities))
            for j in range(len(self.support[0]))
        ]

    def marginal_variance(self):
        means = self.marginal_mean()
        return [
            sum(p * (n[j] - means[j]) ** 2 for n, p in zip(self.support, self.probabilities))
            for j in range(len(self.support[0]))
        ]


def correlation(params: KernelParams, points) -> float:
    """k-point correlation density det[J(x_i - x_j, xi_i - xi_j)]."""
    pts = [p if isinstance(p, BeadPoint) else BeadPoint(*p) for p in points]
    if len(pts) == 0:
        return 1.0
    m = kernel_matrix(params, pts)
    return float(np.linalg.det(m))


def _window_nodes(window: WindowSpec, n_nodes: int):
    """Gauss-Legendre nodes/weights on each interval, concatenated."""
    xg, wg = leggauss(n_nodes)
    threads, xs, ws, labels = [], [], [], []
    for j, (t, lo, hi) in enumerate(window.intervals):
        xs.append(0.5 * (hi - lo) * (xg + 1.0) + lo)
        ws.append(0.5 * (hi - lo) * wg)
        threads.append(np.full(n_nodes, t))
        labels.append(np.full(n_nodes, j))
    return (
        np.concatenate(threads),
        np.concatenate(xs),
        np.concatenate(ws),
        np.concatenate(labels),
    )


def _weighted_kernel(params: KernelParams, window: WindowSpec, n_nodes: int):
    threads, xs, ws, labels = _window_nodes(window, n_nodes)
    pts = list(zip(threads.tolist(), xs.tolist()))
    K = kernel_matrix(params, pts)
    sw = np.sqrt(ws)
    return sw[:, None] * K * sw[None, :], labels


def _graded_minor_sums(M: np.ndarray, labels: np.ndarray, k: int, max_total: int):
    """Coefficients c[n] with det(I + sum_j z_j P_j M P_j) = sum_n c[n] z^n.

    c[n] equals the sum of principal minors of M using n_j rows from interval
    j, i.e. A(n)/prod(n_j!) under the quadrature approximation.  Extracted by
    evaluating the determinant on a tensor grid of scaled points and inverse
    FFT (coefficients in |n| <= max_total are exact up to conditioning).
    """
    # pad the transform so aliasing from degrees above max_total is negligible
    npts = max_total + 7
    # radius < 1 tames the high-degree coefficients of the determinant polynomial
    radius = 0.75
    grids = [radius * np.exp(2j * np.pi * np.arange(npts) / npts)] * k
    shape = (npts,) * k
    vals = np.empty(shape, dtype=complex)
    eye = np.eye(M.shape[0])
    for idx in np.ndindex(shape):
        z = np.array([grids[j][idx[j]] for j in range(k)])
        D = z[labels]
        vals[idx] = np.linalg.det(eye + D[:, None] * M)
    # samples are p(omega^+m); coefficient n is the forward transform / N
    coeffs = np.fft.fftn(vals) / (npts**k)
    # undo the radius scaling: coefficient of z^n picked up radius^|n|
    out = {}
    for idx in np.ndindex(shape):
        scale = radius ** sum(idx)
        c = coeffs[idx] / scale
        out[idx] = float(c.real)
    return out


def factorial_moment(params: KernelParams, window: WindowSpec, orders, n_nodes: int = 40,
                     max_order: int = MAX_ORDER_DEFAULT) -> float:
    """Factorial moment A(n) = int_{I^n} det[J block] d^n xi.

    ``orders`` gives the multiplicity per interval of the window.  Evaluated
    by Gauss-Legendre tensor quadrature, contracted through the graded
    principal-minor identity.
    """
    orders = tuple(int(n) for n in np.atleast_1d(orders))
    if len(orders) != len(window.intervals):
        raise DomainError("orders must have one entry per window interval")
    if any(n < 0 for n in orders):
        raise DomainError("orders must be nonnegative")
    total = sum(orders)
    if total == 0:
        return 1.0
    if total > max_order:
        raise DomainError(f"total order {total} exceeds configured maximum {max_order}")
    M, labels = _weighted_kernel(params, window, n_nodes)
    k = len(window.intervals)
    coeffs = _graded_minor_sums(M, labels, k, total)
    c = coeffs[orders]
    return c * float(np.prod([math.factorial(n) for n in orders]))


def _hadamard_tail(lengths, n, m_cut):
    """Bound sum_{|m| > m_cut, m >= n} |A(m)| / (n! (m-n)!) via Hadamard.

    |A(m)| <= prod |I_j|^{m_j} (sqrt(|m|)/pi)^{|m|}; collapsing the multi-index
    sum with L = sum |I_j| gives terms L^M (sqrt(M)/pi)^M / (n! j!) summed over
    total extra order j = M - |n|.
    """
    L = sum(lengths)
    ntot = sum(n)
    nfact = float(np.prod([math.factorial(v) for v in n]))
    tail = 0.0
    for M in range(m_cut + 1, m_cut + 400):
        j = M - ntot
        if j < 0:
            continue
        term = (L**M) * (math.sqrt(M) / math.pi) ** M / (nfact * math.factorial(j))
        tail += term
        if term < 1e-18 * max(tail, 1e-300) and M > m_cut + 5:
            break
    return tail


def counting_distribution(params: KernelParams, window: WindowSpec, max_n: int,
                          n_nodes: int = None, m_cut: int = None) -> CountDistribution:
    """Joint law of the per-interval bead counts, up to max_n per interval.

    Probabilities come from the alternating series over factorial moments,
    truncated at total moment order ``m_cut`` with a Hadamard tail bound;
    the bound is reported, never dropped.  Small negative values produced by
    truncation are clamped to zero and accounted in ``clamped_mass``.
    """
    max_n = int(max_n)
    if max_n > 6:
        raise DomainError("max_n must be at most 6 per interval")
    k = len(window.intervals)
    lengths = [hi - lo for _, lo, hi in window.intervals]
    if window.total_length == 0.0:
        raise DomainError("window must have positive length")

    if m_cut is None:
        # choose the truncation so the Hadamard tail is negligible
        m_cut = max_n * k + 8
        while _hadamard_tail(lengths, (0,) * k, m_cut) > 1e-10 and m_cut < 60:
            m_cut += 4
    if n_nodes is None:
        n_nodes = max(32, 2 * m_cut)

    M, labels = _weighted_kernel(params, window, n_nodes)
    coeffs = _graded_minor_sums(M, labels, k, m_cut)

    support, probs = [], []
    tail_bound = 0.0
    clamped = 0.0
    for n in np.ndindex(*((max_n + 1,) * k)):
        # P(n) = sum_j (-1)^|j| c_{n+j} prod C(n_l + j_l, n_l)
        p = 0.0
        for m in np.ndindex(*((m_cut + 1,) * k)):
            j = tuple(m_l - n_l for m_l, n_l in zip(m, n))
            if any(v < 0 for v in j) or sum(m) > m_cut:
                continue
            c = coeffs.get(m)
            if c is None:
                continue
            w = (-1.0) ** sum(j) * float(np.prod([math.comb(m_l, n_l) for m_l, n_l in zip(m, n)]))
            p += w * c
        tail = _hadamard_tail(lengths, n, m_cut)
        tail_bound = max(tail_bound, tail)
        if p < 0.0:
            if p < -1e-9 - tail:
                raise AccuracyError(f"probability {p} at {n} below clamping slack")
            clamped += -p
            p = 0.0
        support.append(tuple(n))
        probs.append(p)
    return CountDistribution(support, probs, tail_bound, clamped)


def gap_probability(params: KernelParams, s: float, n_nodes: int = 40, tol: float = 1e-10) -> float:
    """P(no bead in [0, s]) on one thread: Fredholm det(Id - sine kernel on [0,s]).

    Nystrom discretization with Gauss-Legendre nodes; the determinant of
    Id - W^(1/2) K W^(1/2) converges spectrally.  Two refinements must agree
    within ``tol`` or an AccuracyError is raised.  The single-thread marginal
    is the sine kernel for every gamma, so the value does not depend on params.
    """
    if isinstance(params, (int, float)):
        params = KernelParams(params)
    s = float(s)
    if s < 0:
        raise DomainError("s must be nonnegative")
    if s == 0.0:
        return 1.0

    def nystrom(n):
        xg, wg = leggauss(n)
        x = 0.5 * s * (xg + 1.0)
        w = 0.5 * s * wg
        d = x[:, None] - x[None, :]
        K = np.where(np.abs(d) < 1e-14, 1.0 / math.pi, np.sin(d) / (math.pi * np.where(d == 0, 1.0, d)))
        B = np.eye(n) - np.sqrt(w[:, None] * w[None, :]) * K
        sign, logdet = np.linalg.slogdet(B)
        return sign * math.exp(logdet)

    v1 = nystrom(n_nodes)
    v2 = nystrom(2 * n_nodes)
    if abs(v1 - v2) > tol:
        raise AccuracyError(f"Nystrom refinement gap {abs(v1 - v2):.2e} exceeds {tol}")
    return float(min(max(v2, 0.0), 1.0))


def average_ratio(gamma: float) -> float:
    """Mean ratio of neighbor-offset to same-thread bead spacing: arccos(gamma)/pi."""
    if not (-1.0 < gamma < 1.0):
        raise DomainError(f"gamma must lie in (-1, 1), got {gamma}")
    return math.acos(gamma) / math.pi


def particle_density(gamma: float) -> float:
    """Density of the associated exclusion particles: 1 - arccos(gamma)/pi."""
    if not (-1.0 < gamma < 1.0):
        raise DomainError(f"gamma must lie in (-1, 1), got {gamma}")
    return 1.0 - math.acos(gamma) / math.pi
