"""Periodic bipartite dimer machinery.

A Z^2-periodic bipartite graph is described by its fundamental domain:
``n`` white and ``n`` black vertices and weighted edges carrying a Kasteleyn
sign and a pair of integer exponents (dx, dy).  The Fourier transform of the
Kasteleyn operator is the n x n matrix

    K(z, w)[white, black] = sum over edges  sign * weight * z^dx * w^dy,

its determinant is the characteristic polynomial P(z, w), and Q(z, w) denotes
the adjugate (comatrix), so that Q K = P * Id.  Local statistics at magnetic
field (Bx, By) come from inverse Fourier coefficients

    Kinv_B(b at (x, y), w at (0, 0))
        = II_{T^2} z^{-y} w^{x} Q_{b,w}(e^Bx z, e^By w) / P(e^Bx z, e^By w)
          dz/(2 pi i z) dw/(2 pi i w),

where the displacement convention ties an edge's monomial to its endpoints:
an edge with exponents (dx, dy) joins a white vertex to the black vertex
displaced by (x, y) = (dy, -dx).  With that pairing the vertex partition of
unity sum_e K_e Kinv(b_e, w) = 1 is an exact algebraic identity.

The w integral is evaluated by residues: for each z on the circle the poles
are roots of the w-polynomial (computed via companion-matrix eigenvalues) plus
a possible pole at w = 0 handled by a small-circle quadrature.  The remaining
z integral is smooth except where a w-root crosses the unit circle (the liquid
phase); the circle is split at those crossings (located by bisection on the
inside-root count) and each arc is integrated by Gauss-Legendre panels with
self-convergence checks.  The Ronkin function uses the same scan through the
per-z Jensen formula.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AccuracyError, DomainError

PHASE_BOUNDARY_TOL = 1e-7
_PRUNE_REL = 1e-12


# ---------------------------------------------------------------------------
# Laurent polynomials in two variables


class LaurentPoly2:
    """Finite map (i, j) in Z^2 -> complex coefficient, representing
    sum c_{ij} z^i w^j.  Coefficients below _PRUNE_REL * max are pruned."""

    def __init__(self, coeffs: dict):
        mx = max((abs(c) for c in coeffs.values()), default=0.0)
        self.coeffs = {
            (int(i), int(j)): complex(c)
            for (i, j), c in coeffs.items()
            if abs(c) > _PRUNE_REL * mx and c != 0
        }

    def __repr__(self):
        terms = []
        for (i, j), c in sorted(self.coeffs.items()):
            terms.append(f"({c:.6g})*z^{i}*w^{j}")
        return " + ".join(terms) if terms else "0"

    def is_zero(self):
        return not self.coeffs

    def support(self):
        return list(self.coeffs.keys())

    def __call__(self, z, w):
        z = np.asarray(z, dtype=complex)
        w = np.asarray(w, dtype=complex)
        out = np.zeros(np.broadcast(z, w).shape, dtype=complex)
        for (i, j), c in self.coeffs.items():
            out += c * z**i * w**j
        return out if out.shape else complex(out)

    def scale_field(self, Bx: float, By: float) -> "LaurentPoly2":
        """Coefficients of P(e^Bx z, e^By w) as a Laurent polynomial in (z, w)."""
        return LaurentPoly2(
            {(i, j): c * math.exp(Bx * i + By * j) for (i, j), c in self.coeffs.items()}
        )

    def dz(self) -> "LaurentPoly2":
        """Exact partial derivative in the first variable."""
        return LaurentPoly2({(i - 1, j): c * i for (i, j), c in self.coeffs.items() if i != 0})

    def dw(self) -> "LaurentPoly2":
        """Exact partial derivative in the second variable."""
        return LaurentPoly2({(i, j - 1): c * j for (i, j), c in self.coeffs.items() if j != 0})

    def shift(self, di: int, dj: int) -> "LaurentPoly2":
        return LaurentPoly2({(i + di, j + dj): c for (i, j), c in self.coeffs.items()})

    def flip_z_sign(self) -> "LaurentPoly2":
        """Substitute z -> -z."""
        return LaurentPoly2({(i, j): c * (-1) ** i for (i, j), c in self.coeffs.items()})

    def scale(self, a: complex) -> "LaurentPoly2":
        return LaurentPoly2({k: a * c for k, c in self.coeffs.items()})

    def w_degree_range(self):
        js = [j for (_, j) in self.coeffs]
        return min(js), max(js)

    def w_rows(self):
        """Map j -> univariate Laurent poly in z (dict i -> coeff)."""
        rows: dict[int, dict] = {}
        for (i, j), c in self.coeffs.items():
            rows.setdefault(j, {})[i] = c
        return rows

    def w_coeff_matrix(self, zvals: np.ndarray):
        """Evaluate the w-coefficients at an array of z values.

        Returns (jmin, C) with C[a, k] = coefficient of w^(jmin+k) at z = zvals[a].
        """
        jmin, jmax = self.w_degree_range()
        zvals = np.asarray(zvals, dtype=complex)
        C = np.zeros((zvals.size, jmax - jmin + 1), dtype=complex)
        for (i, j), c in self.coeffs.items():
            C[:, j - jmin] += c * zvals**i
        return jmin, C

    def canonical_gauge(self) -> "LaurentPoly2":
        """Shift exponents to the nonnegative quadrant touching both axes and
        normalize so the coefficient at the lexicographically least Newton
        polygon vertex is positive real."""
        if self.is_zero():
            return self
        imin = min(i for i, _ in self.coeffs)
        jmin = min(j for _, j in self.coeffs)
        shifted = self.shift(-imin, -jmin)
        verts = newton_polygon(shifted)
        v0 = min(verts)
        c0 = shifted.coeffs[v0]
        return shifted.scale(abs(c0) / c0)

    def allclose(self, other: "LaurentPoly2", tol: float = 1e-9) -> bool:
        keys = set(self.coeffs) | set(other.coeffs)
        scale = max(max((abs(c) for c in self.coeffs.values()), default=0.0), 1e-300)
        return all(
            abs(self.coeffs.get(k, 0) - other.coeffs.get(k, 0)) <= tol * scale for k in keys
        )


# ---------------------------------------------------------------------------
# Graph model


@dataclass(frozen=True)
class Edge:
    white: int
    black: int
    weight: float
    sign: int
    dx: int  # z exponent of the symbol monomial
    dy: int  # w exponent

    def __post_init__(self):
        if self.weight <= 0:
            raise DomainError("edge weights must be positive")
        if self.sign not in (-1, 1):
            raise DomainError("edge signs must be +1 or -1")

    @property
    def displacement(self):
        """(x, y) lattice displacement of the black endpoint from the white."""
        return (self.dy, -self.dx)


@dataclass
class PeriodicBipartiteGraph:
    white_count: int
    black_count: int
    edges: list
    faces: list = field(default_factory=list)  # each face: list of edge indices

    def __post_init__(self):
        self.edges = [e if isinstance(e, Edge) else Edge(*e) for e in self.edges]

    @property
    def n(self):
        return self.white_count

    def with_signs(self, signs):
        edges = [
            Edge(e.white, e.black, e.weight, int(s), e.dx, e.dy)
            for e, s in zip(self.edges, signs)
        ]
        return PeriodicBipartiteGraph(self.white_count, self.black_count, edges, self.faces)

    def symbol(self, zvals, wvals):
        """K(z, w) on arrays of points: returns (..., n, n) stacked matrices."""
        z = np.asarray(zvals, dtype=complex)
        w = np.asarray(wvals, dtype=complex)
        shape = np.broadcast(z, w).shape
        K = np.zeros(shape + (self.n, self.n), dtype=complex)
        for e in self.edges:
            K[..., e.white, e.black] += e.sign * e.weight * z**e.dx * w**e.dy
        return K


@dataclass(frozen=True)
class MagneticField:
    Bx: float
    By: float

    def __post_init__(self):
        if not (math.isfinite(self.Bx) and math.isfinite(self.By)):
            raise DomainError("magnetic field components must be finite")


@dataclass
class PhaseSample:
    field: MagneticField
    phase: str  # "solid" | "liquid" | "gas" | "indeterminate"
    slope: tuple = None
    ronkin: float = None


def validate_graph(g: PeriodicBipartiteGraph):
    """Check bipartite structure, equal counts, connectivity and the face sign
    condition (product of signs around a 2k-gon equals (-1)^(k+1)).

    Returns a list of diagnostic strings; empty means the graph is admissible.
    """
    diags = []
    if g.white_count != g.black_count:
        diags.append(f"white count {g.white_count} != black count {g.black_count}")
    for idx, e in enumerate(g.edges):
        if not (0 <= e.white < g.white_count and 0 <= e.black < g.black_count):
            diags.append(f"edge {idx} references missing vertex")
    if diags:
        return diags
    # connectivity of the quotient graph
    adj = {("w", i): set() for i in range(g.white_count)}
    adj.update({("b", i): set() for i in range(g.black_count)})
    for e in g.edges:
        adj[("w", e.white)].add(("b", e.black))
        adj[("b", e.black)].add(("w", e.white))
    seen = set()
    stack = [("w", 0)] if g.white_count else []
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        stack.extend(adj[v] - seen)
    if len(seen) != g.white_count + g.black_count:
        diags.append("quotient graph is not connected")
    for fi, face in enumerate(g.faces):
        if len(face) % 2 != 0:
            diags.append(f"face {fi} has odd length {len(face)}")
            continue
        k = len(face) // 2
        prod = 1
        for ei in face:
            prod *= g.edges[ei].sign
        if prod != (-1) ** (k + 1):
            diags.append(
                f"face {fi}: sign product {prod} != (-1)^(k+1) = {(-1) ** (k + 1)}"
            )
    return diags


def kasteleyn_sign_fix(g: PeriodicBipartiteGraph) -> PeriodicBipartiteGraph:
    """Reassign edge signs so every listed face satisfies the sign condition.

    Solves the GF(2) system  sum_{e in f} x_e = t_f  where sign = (-1)^x and
    t_f encodes the required face product, keeping weights untouched.  Raises
    DomainError when the face list is inconsistent.
    """
    m = len(g.edges)
    rows = []
    rhs = []
    for face in g.faces:
        k = len(face) // 2
        target = (-1) ** (k + 1)
        cur = 1
        for ei in face:
            cur *= g.edges[ei].sign
        # flipping x_e toggles the product; need product * (-1)^(sum x) = target
        row = np.zeros(m, dtype=np.uint8)
        for ei in face:
            row[ei] ^= 1
        rows.append(row)
        rhs.append(0 if cur == target else 1)
    if not rows:
        return g
    A = np.array(rows, dtype=np.uint8)
    b = np.array(rhs, dtype=np.uint8)
    # Gaussian elimination over GF(2)
    A = A.copy()
    b = b.copy()
    r = 0
    pivots = []
    for c in range(m):
        piv = None
        for rr in range(r, len(A)):
            if A[rr, c]:
                piv = rr
                break
        if piv is None:
            continue
        A[[r, piv]] = A[[piv, r]]
        b[[r, piv]] = b[[piv, r]]
        for rr in range(len(A)):
            if rr != r and A[rr, c]:
                A[rr] ^= A[r]
                b[rr] ^= b[r]
        pivots.append(c)
        r += 1
        if r == len(A):
            break
    for rr in range(r, len(A)):
        if b[rr]:
            raise DomainError("face list admits no Kasteleyn sign assignment")
    x = np.zeros(m, dtype=np.uint8)
    for rr, c in enumerate(pivots):
        x[c] = b[rr]
    signs = [e.sign * (-1 if x[i] else 1) for i, e in enumerate(g.edges)]
    fixed = g.with_signs(signs)
    diags = validate_graph(fixed)
    face_diags = [d for d in diags if d.startswith("face")]
    if face_diags:
        raise DomainError("sign fix failed: " + "; ".join(face_diags))
    return fixed


# ---------------------------------------------------------------------------
# Characteristic polynomial and cofactors by evaluation-interpolation


def _exponent_bounds(g: PeriodicBipartiteGraph):
    """Per-variable exponent ranges of det K, from row-wise edge bounds."""
    zlo = zhi = wlo = whi = 0
    for i in range(g.n):
        zs = [e.dx for e in g.edges if e.white == i]
        ws = [e.dy for e in g.edges if e.white == i]
        if not zs:
            raise DomainError(f"white vertex {i} has no edges")
        zlo += min(zs)
        zhi += max(zs)
        wlo += min(ws)
        whi += max(ws)
    return (zlo, zhi), (wlo, whi)


def _fft_extract(vals: np.ndarray, zrange, wrange):
    """Recover Laurent coefficients from values on a roots-of-unity grid."""
    Nz, Nw = vals.shape
    co = np.fft.fft2(vals) / (Nz * Nw)
    out = {}
    for i in range(zrange[0], zrange[1] + 1):
        for j in range(wrange[0], wrange[1] + 1):
            c = co[i % Nz, j % Nw]
            if abs(c) > 1e-13:
                out[(i, j)] = c
    return out


def char_poly(g: PeriodicBipartiteGraph, check: bool = True) -> LaurentPoly2:
    """P(z, w) = det K(z, w), coefficients recovered by FFT interpolation."""
    (zlo, zhi), (wlo, whi) = _exponent_bounds(g)
    Nz, Nw = zhi - zlo + 1, whi - wlo + 1
    zg = np.exp(2j * np.pi * np.arange(Nz) / Nz)
    wg = np.exp(2j * np.pi * np.arange(Nw) / Nw)
    Z, W = np.meshgrid(zg, wg, indexing="ij")
    K = g.symbol(Z, W)
    vals = np.linalg.det(K)
    p = LaurentPoly2(_fft_extract(vals, (zlo, zhi), (wlo, whi)))
    if check:
        rng = np.random.default_rng(7)
        th = rng.uniform(0, 2 * np.pi, size=(10, 2))
        zs, ws = np.exp(1j * th[:, 0]), np.exp(1j * th[:, 1])
        direct = np.linalg.det(g.symbol(zs, ws))
        interp = p(zs, ws)
        scale = max(np.max(np.abs(direct)), 1e-300)
        if np.max(np.abs(direct - interp)) > 1e-9 * scale:
            raise AccuracyError("characteristic polynomial interpolation check failed")
    return p


def cofactor_poly(g: PeriodicBipartiteGraph, black_id: int, white_id: int,
                  check: bool = True) -> LaurentPoly2:
    """Adjugate entry Q_{black, white}(z, w), so that (Q K)_{bb'} = P delta."""
    n = g.n
    if n == 1:
        return LaurentPoly2({(0, 0): 1.0})
    (zlo, zhi), (wlo, whi) = _exponent_bounds(g)
    Nz, Nw = zhi - zlo + 1, whi - wlo + 1
    zg = np.exp(2j * np.pi * np.arange(Nz) / Nz)
    wg = np.exp(2j * np.pi * np.arange(Nw) / Nw)
    Z, W = np.meshgrid(zg, wg, indexing="ij")
    K = g.symbol(Z, W)
    rows = [i for i in range(n) if i != white_id]
    cols = [j for j in range(n) if j != black_id]
    sub = K[..., rows, :][..., :, cols]
    minor = np.linalg.det(sub)
    q = LaurentPoly2(
        {
            k: ((-1) ** (white_id + black_id)) * c
            for k, c in _fft_extract(minor, (zlo, zhi), (wlo, whi)).items()
        }
    )
    if check:
        _check_adjugate_entry(g, q, black_id, white_id)
    return q


def _check_adjugate_entry(g, q, black_id, white_id, npts=5):
    p = char_poly(g, check=False)
    rng = np.random.default_rng(11)
    th = rng.uniform(0, 2 * np.pi, size=(npts, 2))
    zs, ws = np.exp(1j * th[:, 0]), np.exp(1j * th[:, 1])
    K = g.symbol(zs, ws)
    adj = np.array([_adjugate(K[a]) for a in range(npts)])
    scale = max(np.max(np.abs(adj)), np.max(np.abs(p(zs, ws))), 1e-300)
    if np.max(np.abs(adj[:, black_id, white_id] - q(zs, ws))) > 1e-9 * scale:
        raise AccuracyError("cofactor interpolation check failed")


def _adjugate(M):
    n = M.shape[0]
    if n == 1:
        return np.ones((1, 1), dtype=complex)
    out = np.empty((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            sub = np.delete(np.delete(M, j, axis=0), i, axis=1)
            out[i, j] = (-1) ** (i + j) * np.linalg.det(sub)
    return out


def adjugate_polys(g: PeriodicBipartiteGraph):
    """All adjugate entries Q_{b,w} as LaurentPoly2, with a QK = P Id check."""
    n = g.n
    Q = [[cofactor_poly(g, b, w, check=False) for w in range(n)] for b in range(n)]
    # identity check at random torus points
    p = char_poly(g, check=False)
    rng = np.random.default_rng(13)
    th = rng.uniform(0, 2 * np.pi, size=(5, 2))
    zs, ws = np.exp(1j * th[:, 0]), np.exp(1j * th[:, 1])
    K = g.symbol(zs, ws)
    Qv = np.array([[[Q[b][w](zs[a], ws[a]) for w in range(n)] for b in range(n)]
                   for a in range(5)])
    Pv = p(zs, ws)
    for a in range(5):
        resid = Qv[a] @ K[a] - Pv[a] * np.eye(n)
        scale = max(abs(Pv[a]), np.max(np.abs(Qv[a])), 1e-300)
        if np.max(np.abs(resid)) > 1e-9 * scale:
            raise AccuracyError("adjugate identity Q K = P Id failed")
    return Q


# ---------------------------------------------------------------------------
# Newton polygon


def newton_polygon(p: LaurentPoly2):
    """Vertices of the convex hull of the support, counterclockwise, starting
    from the lexicographically smallest vertex."""
    if p.is_zero():
        raise DomainError("Newton polygon of the zero polynomial")
    pts = sorted(set(p.support()))
    if len(pts) == 1:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for q in pts:
        while len(lower) > 1 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    upper = []
    for q in reversed(pts):
        while len(upper) > 1 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 0:
        hull = [pts[0]]
    if len(pts) >= 2 and len(hull) < 2:
        hull = [pts[0], pts[-1]]
    start = hull.index(min(hull))
    return hull[start:] + hull[:start]


def _point_in_hull(pt, verts, tol=1e-8):
    """Signed check that pt lies in the convex hull (boundary within tol)."""
    if len(verts) == 1:
        return math.hypot(pt[0] - verts[0][0], pt[1] - verts[0][1]) <= tol
    if len(verts) == 2:
        (x1, y1), (x2, y2) = verts
        dx, dy = x2 - x1, y2 - y1
        L2 = dx * dx + dy * dy
        t = ((pt[0] - x1) * dx + (pt[1] - y1) * dy) / L2
        t = min(max(t, 0.0), 1.0)
        return math.hypot(pt[0] - x1 - t * dx, pt[1] - y1 - t * dy) <= tol
    for a, b in zip(verts, verts[1:] + verts[:1]):
        cr = (b[0] - a[0]) * (pt[1] - a[1]) - (b[1] - a[1]) * (pt[0] - a[0])
        if cr < -tol * max(1.0, abs(b[0] - a[0]) + abs(b[1] - a[1])):
            return False
    return True


def _point_on_hull_boundary(pt, verts, tol=1e-6):
    if len(verts) <= 2:
        return _point_in_hull(pt, verts, tol)
    for a, b in zip(verts, verts[1:] + verts[:1]):
        dx, dy = b[0] - a[0], b[1] - a[1]
        L2 = dx * dx + dy * dy
        t = ((pt[0] - a[0]) * dx + (pt[1] - a[1]) * dy) / L2
        t = min(max(t, 0.0), 1.0)
        if math.hypot(pt[0] - a[0] - t * dx, pt[1] - a[1] - t * dy) <= tol:
            return True
    return False


def _interior_lattice_points(verts):
    """Lattice points strictly inside the hull (possible gas slopes)."""
    if len(verts) <= 2:
        return []
    xs = [v[0] for v in verts]
    ys = [v[1] for v in verts]
    out = []
    for i in range(min(xs), max(xs) + 1):
        for j in range(min(ys), max(ys) + 1):
            if _point_in_hull((i, j), verts, tol=1e-12) and not _point_on_hull_boundary(
                (i, j), verts, tol=1e-9
            ):
                out.append((i, j))
    return out


# ---------------------------------------------------------------------------
# w-roots machinery


def _trim_poly_rows(C: np.ndarray, rel: float = 1e-13):
    """Indices (lo, hi) of the reliably nonzero coefficient band per row set."""
    mags = np.abs(C)
    mx = mags.max(axis=1, keepdims=True)
    mask = mags > rel * np.maximum(mx, 1e-300)
    any_col = mask.any(axis=0)
    lo = int(np.argmax(any_col))
    hi = int(len(any_col) - 1 - np.argmax(any_col[::-1]))
    return lo, hi


def _batched_roots(C: np.ndarray):
    """Roots of a family of polynomials with coefficient rows C[a, k] (k = low
    to high degree).  Returns list of root arrays, one per row."""
    lo, hi = _trim_poly_rows(C)
    C = C[:, lo : hi + 1]
    deg = C.shape[1] - 1
    out = []
    if deg <= 0:
        return [np.empty(0, dtype=complex) for _ in range(C.shape[0])], lo
    if deg == 1:
        r = -C[:, 0] / C[:, 1]
        return [np.array([v]) for v in r], lo
    m = C.shape[0]
    comp = np.zeros((m, deg, deg), dtype=complex)
    comp[:, 1:, :-1] = np.eye(deg - 1)
    comp[:, :, -1] = -C[:, :-1] / C[:, -1:][:, 0:1]
    roots = np.linalg.eigvals(comp)
    return [roots[a] for a in range(m)], lo


class _WSlice:
    """Per-z data of P(e^Bx z, e^By w) viewed as a polynomial in w."""

    def __init__(self, pB: LaurentPoly2, qB: LaurentPoly2 = None):
        self.pB = pB
        self.qB = qB
        self.p_jmin, _ = pB.w_degree_range()
        if qB is not None:
            self.q_jmin, _ = qB.w_degree_range()

    def roots_at(self, zvals):
        jmin, C = self.pB.w_coeff_matrix(zvals)
        roots, lo = _batched_roots(C)
        return roots, jmin + lo

    def inside_counts(self, zvals, radius=1.0):
        roots, _ = self.roots_at(zvals)
        return np.array([int(np.sum(np.abs(r) < radius)) for r in roots]), roots


def _signed_closest_logmod(slice_: _WSlice, thetas):
    """Per angle: log-modulus of the w-root closest to the unit circle
    (signed; +inf when the w-polynomial has no roots)."""
    roots_list, _ = slice_.roots_at(np.exp(1j * np.asarray(thetas)))
    out = np.empty(len(roots_list))
    for a, r in enumerate(roots_list):
        if r.size == 0:
            out[a] = np.inf
            continue
        lm = np.log(np.abs(r))
        out[a] = lm[np.argmin(np.abs(lm))]
    return out


def _bisect_crossings_batch(slice_, lo, hi, v_lo, iters=60):
    """Vectorized sign-change bisection over several brackets at once."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    pos_lo = np.asarray(v_lo) > 0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        v_mid = _signed_closest_logmod(slice_, mid)
        same = (v_mid > 0) == pos_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def _crossing_angles(slice_: _WSlice, n_scan: int = 256):
    """Angles where a w-root crosses the unit circle, plus auxiliary splits.

    Scans the signed log-modulus of the closest root, bisects sign changes,
    and ternary-refines local minima of |v| so that arcs far narrower than
    the scan spacing (thin tentacles) are still found.  Returns
    (crossings, extra_split_angles, min_dist) where min_dist is the smallest
    distance of a root modulus to 1 observed away from genuine crossings.
    """
    th = np.linspace(0.0, 2 * np.pi, n_scan, endpoint=False)
    v = _signed_closest_logmod(slice_, th)
    if not np.isfinite(v).any():
        return [], [], math.inf
    step = 2 * np.pi / n_scan
    sign_flip = [
        a
        for a in range(n_scan)
        if np.isfinite(v[a])
        and np.isfinite(v[(a + 1) % n_scan])
        and (v[a] > 0) != (v[(a + 1) % n_scan] > 0)
    ]
    crossings = []
    if sign_flip:
        lo = [th[a] for a in sign_flip]
        hi = [th[a] + step for a in sign_flip]
        crossings = list(_bisect_crossings_batch(slice_, lo, hi, [v[a] for a in sign_flip]))
    # refine local minima of |v| (batched ternary search) to catch narrow dips
    cand = [
        a
        for a in range(n_scan)
        if abs(v[a]) <= abs(v[(a - 1) % n_scan])
        and abs(v[a]) <= abs(v[(a + 1) % n_scan])
        and abs(v[a]) < math.log(4.0)
    ]
    cand = sorted(cand, key=lambda a: abs(v[a]))[:8]
    extra = []
    min_dist = math.inf
    if cand:
        lo = np.array([th[a] - step for a in cand])
        hi = np.array([th[a] + step for a in cand])
        for _ in range(60):
            m1 = lo + (hi - lo) / 3
            m2 = hi - (hi - lo) / 3
            v12 = np.abs(_signed_closest_logmod(slice_, np.concatenate([m1, m2])))
            v1, v2 = v12[: len(cand)], v12[len(cand):]
            take_lo = v1 < v2
            hi = np.where(take_lo, m2, hi)
            lo = np.where(take_lo, lo, m1)
        t_star = 0.5 * (lo + hi)
        v_star = _signed_closest_logmod(slice_, t_star)
        v_edge = np.array([v[a] for a in cand])
        dips = (v_star > 0) != (v_edge > 0)
        if dips.any():
            idx = np.nonzero(dips)[0]
            lo1 = [th[cand[i]] - step for i in idx]
            hi1 = [t_star[i] for i in idx]
            crossings += list(
                _bisect_crossings_batch(slice_, lo1, hi1, [v_edge[i] for i in idx])
            )
            lo2 = [t_star[i] for i in idx]
            hi2 = [th[cand[i]] + step for i in idx]
            crossings += list(
                _bisect_crossings_batch(slice_, lo2, hi2, [v_star[i] for i in idx])
            )
        for i in np.nonzero(~dips)[0]:
            extra.append(float(t_star[i]) % (2 * np.pi))
            min_dist = min(min_dist, abs(math.expm1(v_star[i])))
    else:
        min_dist = float(np.min(np.abs(np.expm1(v[np.isfinite(v)]))))
    crossings = sorted(a % (2 * np.pi) for a in crossings)
    dedup = []
    for a in crossings:
        if not dedup or abs(a - dedup[-1]) > 1e-12:
            dedup.append(a)
    return dedup, sorted(extra), min_dist


def _gl_panel(f, lo, hi, order):
    xg, wg = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (hi - lo) * (xg + 1.0) + lo
    return 0.5 * (hi - lo) * np.sum(wg * f(x))


def _adaptive_arc(f, lo, hi, tol, depth=0):
    v1 = _gl_panel(f, lo, hi, 24)
    v2 = _gl_panel(f, lo, hi, 48)
    if abs(v1 - v2) <= tol or depth >= 12:
        return v2, abs(v1 - v2)
    mid = 0.5 * (lo + hi)
    a, ea = _adaptive_arc(f, lo, mid, tol / 2, depth + 1)
    b, eb = _adaptive_arc(f, mid, hi, tol / 2, depth + 1)
    return a + b, ea + eb


def _integrate_circle(f, crossings, tol):
    """Integrate f(theta-array) over [0, 2pi) splitting at crossing angles."""
    if not crossings:
        # periodic smooth integrand: trapezoid with doubling
        n = 64
        prev = None
        while n <= 1 << 16:
            th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
            val = np.mean(f(th)) * 2 * np.pi
            if prev is not None and abs(val - prev) <= tol:
                return val, abs(val - prev)
            prev = val
            n *= 2
        raise AccuracyError("circle quadrature did not converge")
    pts = sorted(crossings)
    pts = pts + [pts[0] + 2 * np.pi]
    total = 0.0
    err = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi - lo < 1e-13:
            continue
        v, e = _adaptive_arc(f, lo, hi, tol / max(len(pts) - 1, 1))
        total += v
        err += e
    return total, err


def _inner_w_integral(slice_: _WSlice, zvals, x_pow: int, tol=1e-11):
    """(1/2 pi i) contour integral over |w| = 1 of w^(x_pow - 1) Q/P per z.

    Residues at simple roots inside the circle; a possible pole at w = 0 is
    captured by a small-circle trapezoid below the innermost root.
    """
    zvals = np.asarray(zvals, dtype=complex)
    out = np.zeros(zvals.shape, dtype=complex)
    p_jmin, Cp = slice_.pB.w_coeff_matrix(zvals)
    q_jmin, Cq = slice_.qB.w_coeff_matrix(zvals)
    roots_list, lo = _batched_roots(Cp)
    p_jmin += lo

    for a, w_roots in enumerate(roots_list):
        cp = Cp[a]
        cq = Cq[a]

        def Pw(w):
            return np.polyval(cp[::-1], w)

        def dPw(w):
            der = np.polynomial.polynomial.polyder(cp)
            return np.polyval(der[::-1], w)

        def Qw(w):
            return np.polyval(cq[::-1], w)

        # f(w) = w^(x_pow-1) * Q(w) w^q_jmin / (P(w) w^p_jmin)
        m0 = x_pow - 1 + q_jmin - p_jmin

        total = 0.0 + 0.0j
        inside = w_roots[np.abs(w_roots) < 1.0 - 1e-14]
        finite_inside = inside[np.abs(inside) > 1e-12]
        pole_at_zero = m0 < 0
        r0 = None
        if pole_at_zero or (len(inside) != len(finite_inside)):
            min_mod = np.min(np.abs(finite_inside)) if finite_inside.size else 1.0
            r0 = 0.5 * min(min_mod, 1.0)
            # trapezoid on |w| = r0 catches the w=0 pole (and any tiny roots)
            n = 64
            prev = None
            cur = 0.0 + 0.0j
            while n <= 1 << 14:
                thw = np.linspace(0, 2 * np.pi, n, endpoint=False)
                wc = r0 * np.exp(1j * thw)
                vals = wc**m0 * Qw(wc) / Pw(wc) * wc
                cur = np.mean(vals)
                if prev is not None and abs(cur - prev) <= max(tol, 1e-13 * abs(cur)):
                    break
                prev = cur
                n *= 2
            total += cur
            use_roots = finite_inside[np.abs(finite_inside) > r0]
        else:
            use_roots = finite_inside
        for wr in use_roots:
            total += wr**m0 * Qw(wr) / dPw(wr)
        out[a] = total
    return out


def inverse_kasteleyn(g: PeriodicBipartiteGraph, field: MagneticField,
                      black_id: int = 0, white_id: int = 0,
                      x: int = 0, y: int = 0, tol: float = 1e-8,
                      _cache: dict = None) -> complex:
    """Inverse Kasteleyn coefficient Kinv_B(b_(x,y) id=black_id, w_(0,0) id=white_id).

    Evaluates II z^-y w^x Q_ji / P over the torus by per-z residue summation in
    w followed by arc-split quadrature in z.  Raises a warning-level
    AccuracyError when self-convergence fails; emits near-boundary information
    through classify_phase instead of guessing.
    """
    if _cache is not None and "pq" in _cache:
        pB, qB = _cache["pq"]
    else:
        p = char_poly(g, check=False)
        q = cofactor_poly(g, black_id, white_id, check=False)
        pB = p.scale_field(field.Bx, field.By)
        qB = q.scale_field(field.Bx, field.By)
        if _cache is not None:
            _cache["pq"] = (pB, qB)
    slice_ = _WSlice(pB, qB)
    if _cache is not None and "crossings" in _cache:
        splits = _cache["crossings"]
    else:
        crossings, extra, _ = _crossing_angles(slice_)
        splits = sorted(crossings + extra) if crossings else []
        if _cache is not None:
            _cache["crossings"] = splits

    def f(thetas):
        z = np.exp(1j * np.asarray(thetas))
        inner = _inner_w_integral(slice_, z, x)
        vals = z ** (-y) * inner
        return vals.real  # imaginary part cancels by conjugation symmetry

    val, err = _integrate_circle(f, splits, tol)
    val /= 2 * np.pi
    err /= 2 * np.pi
    if err > 50 * tol and err > 1e-6:
        raise AccuracyError(f"inverse Kasteleyn quadrature error {err:.2e}")
    return complex(val, 0.0)


def edge_probabilities(g: PeriodicBipartiteGraph, field: MagneticField, tol=1e-8):
    """Probability of each fundamental-domain edge under the Gibbs measure.

    P(e) = K_e(field) * Kinv(b_e, w_e) where K_e includes the field-scaled
    monomial; the displacement of the black endpoint is (dy, -dx).
    """
    p = char_poly(g, check=False)
    pB = p.scale_field(field.Bx, field.By)
    out = []
    cof_cache = {}
    for e in g.edges:
        key = (e.black, e.white)
        if key not in cof_cache:
            cof_cache[key] = cofactor_poly(g, e.black, e.white, check=False).scale_field(
                field.Bx, field.By
            )
        qB = cof_cache[key]
        slice_ = _WSlice(pB, qB)
        crossings, extra, _ = _crossing_angles(slice_)
        splits = sorted(crossings + extra) if crossings else []
        xdisp, ydisp = e.displacement

        def f(thetas):
            z = np.exp(1j * np.asarray(thetas))
            inner = _inner_w_integral(slice_, z, xdisp)
            return (z ** (-ydisp) * inner).real

        val, err = _integrate_circle(f, splits, tol)
        kinv = val / (2 * np.pi)
        ke = e.sign * e.weight * math.exp(field.Bx * e.dx + field.By * e.dy)
        out.append(ke * kinv)
    return np.array(out)


def ronkin(g_or_poly, field: MagneticField, tol: float = 1e-9) -> float:
    """Ronkin function R(Bx, By) = II log|P(e^Bx z, e^By w)| over the torus.

    Per z the w-average is Jensen's formula: log|leading coeff| plus
    log max(|root|, 1) summed over w-roots; the z integral splits at root
    crossings of the unit circle.
    """
    p = g_or_poly if isinstance(g_or_poly, LaurentPoly2) else char_poly(g_or_poly, check=False)
    pB = p.scale_field(field.Bx, field.By)
    slice_ = _WSlice(pB, pB)
    crossings, extra, _ = _crossing_angles(slice_)
    splits = sorted(crossings + extra)

    def f(thetas):
        z = np.exp(1j * np.asarray(thetas))
        jmin, C = pB.w_coeff_matrix(z)
        roots_list, lo = _batched_roots(C)
        out = np.empty(len(z))
        for a, r in enumerate(roots_list):
            lead = C[a, -1]
            # trim may cut trailing zeros; recompute leading reliably
            k = C.shape[1] - 1
            while abs(C[a, k]) <= 1e-13 * np.max(np.abs(C[a])) and k > 0:
                k -= 1
            lead = C[a, k]
            val = math.log(abs(lead))
            if r.size:
                val += float(np.sum(np.log(np.maximum(np.abs(r), 1.0))))
            out[a] = val
        return out

    val, err = _integrate_circle(f, splits, tol=max(tol, 1e-10))
    return val / (2 * np.pi)


def classify_phase(g: PeriodicBipartiteGraph, field: MagneticField,
                   with_values: bool = True, _poly: LaurentPoly2 = None) -> PhaseSample:
    """Classify the Gibbs measure at the given field as solid, liquid or gas.

    Liquid iff P(e^Bx z, e^By w) has zeros on the unit torus, detected by a
    change in the count of inside w-roots along the z circle.  Otherwise the
    slope (gradient of the Ronkin function, by central differences of step
    1e-4) is snapped to a lattice point: boundary of N(P) means solid,
    interior means gas.  Near-tangent root configurations are reported as
    indeterminate rather than guessed.
    """
    p = _poly if _poly is not None else char_poly(g, check=False)
    pB = p.scale_field(field.Bx, field.By)
    slice_ = _WSlice(pB, pB)
    crossings, _extra, min_dist = _crossing_angles(slice_)
    if crossings:
        sample = PhaseSample(field, "liquid")
    elif min_dist < PHASE_BOUNDARY_TOL:
        return PhaseSample(field, "indeterminate")
    else:
        sample = PhaseSample(field, None)

    if not with_values:
        if sample.phase == "liquid":
            return sample
        # gas needs a strict-interior lattice point of N(P); without one,
        # any non-liquid field is solid and the slope can be skipped
        verts = newton_polygon(p)
        if not _interior_lattice_points(verts):
            sample.phase = "solid"
            return sample

    h = 1e-4
    r0 = ronkin(p, field)
    rx1 = ronkin(p, MagneticField(field.Bx + h, field.By))
    rx0 = ronkin(p, MagneticField(field.Bx - h, field.By))
    ry1 = ronkin(p, MagneticField(field.Bx, field.By + h))
    ry0 = ronkin(p, MagneticField(field.Bx, field.By - h))
    slope = ((rx1 - rx0) / (2 * h), (ry1 - ry0) / (2 * h))
    sample.ronkin = r0
    sample.slope = slope
    if sample.phase == "liquid":
        return sample

    verts = newton_polygon(p)
    snapped = (round(slope[0]), round(slope[1]))
    if abs(slope[0] - snapped[0]) > 1e-5 or abs(slope[1] - snapped[1]) > 1e-5:
        sample.phase = "indeterminate"
        return sample
    if not _point_in_hull(snapped, verts, tol=1e-8):
        sample.phase = "indeterminate"
        return sample
    sample.slope = snapped
    sample.phase = "solid" if _point_on_hull_boundary(snapped, verts) else "gas"
    return sample


def amoeba_raster(g: PeriodicBipartiteGraph, bx_range, by_range, with_values: bool = False):
    """Classify the phase on a raster of magnetic fields.

    bx_range/by_range are (lo, hi, count).  Returns a row-major list of
    PhaseSample; cells near phase boundaries come back indeterminate.
    """
    nx, ny = int(bx_range[2]), int(by_range[2])
    if nx * ny > 10**6:
        raise DomainError("raster resolution exceeds 10^6 cells")
    p = char_poly(g, check=False)
    bxs = np.linspace(bx_range[0], bx_range[1], nx)
    bys = np.linspace(by_range[0], by_range[1], ny)
    out = []
    for by in bys:
        for bx in bxs:
            out.append(
                classify_phase(g, MagneticField(bx, by), with_values=with_values, _poly=p)
            )
    return out
