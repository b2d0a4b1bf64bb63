"""Tentacle geometry of amoebas and the degeneration to the bead process.

For By -> -infinity the dominant stratum of P(e^Bx z, e^By w) is its lowest
w-degree row delta0; with

    Phat = w^(-delta0) * P,      P0(X) = Phat(X, 0),

each simple root X_r of P0 spawns a tentacle with vertical asymptote
Bx = c = log|X_r| and width parameter

    beta = -(1/X_r) * dPhat/dw (X_r, 0) / dPhat/dz (X_r, 0),

the amoeba boundary obeying Bx = c +- |beta| e^By asymptotically.  Negative
roots are carried through an explicit sign gauge eps = sign(X_r) folded into
the z variable (the kernel asymptotics pick up eps^y).

Deep in the tentacle, at field (c + beta*gamma*t, log t), inverse Kasteleyn
coefficients between vertices separated by x threads and y lattice steps decay
like t and reproduce the bead kernel:

    Kinv ~ eps^Y * t * beta * sqrt(1-gamma^2) * rho * J(X, xi),
    xi = t * beta * sqrt(1-gamma^2) * Y,

with rho a ratio of w-derivatives of adjugate and characteristic polynomials
at (X_r, 0).  Edge densities normalize exactly: summing sign*weight*rho over
the edges at one white vertex gives 1, because the delta0-row of
sum_e K_e Q_e = P vanishes at the root.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .dimers import (
    Edge,
    LaurentPoly2,
    MagneticField,
    PeriodicBipartiteGraph,
    _crossing_angles,
    _WSlice,
    adjugate_polys,
    char_poly,
    classify_phase,
    inverse_kasteleyn,
    newton_polygon,
)
from .errors import AccuracyError, DomainError
from .kernel import KernelParams, eval_kernel


@dataclass
class TentacleParams:
    c: float
    sign_gauge: int
    beta: float
    side: str
    root: float          # X_r = sign_gauge * e^c
    delta0: int          # lowest w-degree of P
    root_index: int
    all_roots: tuple


@dataclass
class EdgeDensity:
    edge_index: int
    rho: float
    crossing: bool


def _normalized_pair(p: LaurentPoly2):
    delta0, _ = p.w_degree_range()
    return p.shift(0, -delta0), delta0


def flip_vertical(g: PeriodicBipartiteGraph) -> PeriodicBipartiteGraph:
    """Substitute w -> 1/w (top side becomes bottom); fields map By -> -By."""
    edges = [Edge(e.white, e.black, e.weight, e.sign, e.dx, -e.dy) for e in g.edges]
    return PeriodicBipartiteGraph(g.white_count, g.black_count, edges, g.faces)


def propose_basis_change(side_vector):
    """SL2(Z) exponent transform N sending the primitive side vector to (1, 0).

    Apply with transform_poly; graphs can be re-gauged by mapping every edge
    exponent pair through N.
    """
    a, b = int(side_vector[0]), int(side_vector[1])
    gcd = math.gcd(abs(a), abs(b))
    if gcd == 0:
        raise DomainError("side vector must be nonzero")
    a, b = a // gcd, b // gcd
    _, p_, q_ = _ext_gcd(a, b)  # p a + q b = 1
    return np.array([[p_, q_], [-b, a]], dtype=int)


def transform_poly(p: LaurentPoly2, N) -> LaurentPoly2:
    """Exponent substitution e -> N e for an integer unimodular matrix N."""
    N = np.asarray(N, dtype=int)
    if round(abs(np.linalg.det(N))) != 1:
        raise DomainError("basis change must be unimodular")
    return LaurentPoly2(
        {
            (N[0, 0] * i + N[0, 1] * j, N[1, 0] * i + N[1, 1] * j): c
            for (i, j), c in p.coeffs.items()
        }
    )


def _ext_gcd(a, b):
    if b == 0:
        return (a, 1, 0) if a >= 0 else (-a, -1, 0)
    g_, x, y = _ext_gcd(b, a % b)
    return g_, y, x - (a // b) * y


def tentacle_params(g: PeriodicBipartiteGraph, side: str = "bottom",
                    root_index: int = 0, _poly: LaurentPoly2 = None) -> TentacleParams:
    """Asymptote and slope data for one tentacle of the given horizontal side.

    side = "bottom" analyses By -> -infinity; "top" flips w first.  Roots of
    P0 are sorted by modulus; multiple roots (within relative cluster radius
    1e-8) are rejected as non-generic.
    """
    if side == "top":
        g = flip_vertical(g)
    elif side != "bottom":
        raise DomainError("side must be 'bottom' or 'top' (apply an SL2 change first)")
    p = _poly if _poly is not None else char_poly(g, check=False)
    phat, delta0 = _normalized_pair(p)
    rows = phat.w_rows()
    row0 = rows.get(0)
    if not row0:
        raise AccuracyError("empty bottom row after normalization")
    imin = min(row0)
    imax = max(row0)
    coeffs = np.array([row0.get(i, 0.0) for i in range(imin, imax + 1)])
    roots = np.roots(coeffs[::-1])
    roots = roots[np.abs(roots) > 0]
    order = np.argsort(np.abs(roots))
    roots = roots[order]
    if root_index < 0 or root_index >= len(roots):
        raise DomainError(f"root_index {root_index} out of range ({len(roots)} roots)")
    X = roots[root_index]
    others = np.delete(roots, root_index)
    if others.size and np.min(np.abs(others - X)) < 1e-8 * max(abs(X), 1.0):
        raise DomainError("multiple root of P0: tentacle analysis needs generic weights")
    if abs(X.imag) > 1e-9 * max(abs(X), 1.0):
        raise DomainError(f"root {X} of P0 is not real; non-Harnack weights unsupported")
    Xr = float(X.real)
    dpw = phat.dw()(Xr, 0.0)
    dpz = phat.dz()(Xr, 0.0)
    if abs(dpz) < 1e-14:
        raise DomainError("degenerate tentacle: dP/dz vanishes at the root")
    beta = float((-(1.0 / Xr) * dpw / dpz).real)
    return TentacleParams(
        c=math.log(abs(Xr)),
        sign_gauge=1 if Xr > 0 else -1,
        beta=beta,
        side=side,
        root=Xr,
        delta0=delta0,
        root_index=root_index,
        all_roots=tuple(float(r.real) for r in roots),
    )


def _is_liquid(p: LaurentPoly2, field: MagneticField) -> bool:
    pB = p.scale_field(field.Bx, field.By)
    crossings, _, _ = _crossing_angles(_WSlice(pB, pB))
    return bool(crossings)


def tentacle_asymptote_check(g: PeriodicBipartiteGraph, tp: TentacleParams, by_list,
                             _poly: LaurentPoly2 = None):
    """Locate the amoeba boundary on both sides of the asymptote Bx = c.

    For each By (negative, decreasing) the two boundary abscissae are found by
    bisection of the liquid test between the axis and c +- 4|beta| e^By; the
    table reports their offsets together with the predicted |beta| e^By.
    """
    p = _poly if _poly is not None else char_poly(g, check=False)
    if tp.side == "top":
        p = LaurentPoly2({(i, -j): c for (i, j), c in p.coeffs.items()})
    rows = []
    for by in by_list:
        t = math.exp(by)
        width = 4.0 * abs(tp.beta) * t
        if not _is_liquid(p, MagneticField(tp.c, by)):
            raise AccuracyError(f"tentacle axis not liquid at By={by}")
        bounds = {}
        for sgn in (+1, -1):
            lo, hi = tp.c, tp.c + sgn * width
            if _is_liquid(p, MagneticField(hi, by)):
                raise AccuracyError(f"bisection bracket not solid at Bx={hi}, By={by}")
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if _is_liquid(p, MagneticField(mid, by)):
                    lo = mid
                else:
                    hi = mid
            bounds[sgn] = 0.5 * (lo + hi)
        rows.append(
            dict(
                By=by,
                upper_offset=bounds[+1] - tp.c,
                lower_offset=tp.c - bounds[-1],
                predicted=abs(tp.beta) * t,
            )
        )
    return rows


def _rho_numerator(qpoly: LaurentPoly2, edge: Edge, delta0: int, Xr: float,
                   include_monomial: bool) -> tuple[float, bool]:
    """(d/dw of the normalized numerator at (Xr, 0), crossing flag).

    The numerator is w^(-delta0) * [z^dx w^dy] * Q_e when the edge monomial is
    included (edge-density normalization), else w^(-delta0) * Q_e (kernel
    prefactor).  Crossing means the numerator vanishes identically at w = 0.
    """
    if include_monomial:
        q = qpoly.shift(edge.dx, edge.dy - delta0)
    else:
        q = qpoly.shift(0, -delta0)
    rows = q.w_rows()
    row0 = rows.get(0, {})
    val0 = sum(c * Xr**i for i, c in row0.items())
    crossing = all(abs(c) < 1e-12 for c in row0.values()) if row0 else True
    row1 = rows.get(1, {})
    d = sum(c * Xr**i for i, c in row1.items())
    return float(np.real(d)), crossing, float(np.real(val0))


def rho_edges(g: PeriodicBipartiteGraph, tp: TentacleParams,
              _adj=None, _poly=None) -> list[EdgeDensity]:
    """Edge densities rho_e at the tentacle root, one entry per edge.

    For thread-crossing edges rho_e = d_w[w^(-delta0) z^dx w^dy Q_e](X_r, 0)
    divided by d_w Phat(X_r, 0); multiplied by the bare edge weight these are
    the proportions of defect types along a thread and sum to 1 per white
    vertex.  Raises when a crossing edge violates the vanishing premise.
    """
    p = _poly if _poly is not None else char_poly(g, check=False)
    phat, delta0 = _normalized_pair(p)
    denom = float(np.real(phat.dw()(tp.root, 0.0)))
    if abs(denom) < 1e-14:
        raise DomainError("dPhat/dw vanishes at the root; no transverse tentacle")
    adj = _adj if _adj is not None else adjugate_polys(g)
    out = []
    for idx, e in enumerate(g.edges):
        q = adj[e.black][e.white]
        d, crossing, val0 = _rho_numerator(q, e, delta0, tp.root, include_monomial=True)
        if crossing and abs(val0) > 1e-9:
            raise AccuracyError(f"edge {idx}: crossing premise violated (Q(z,0) != 0)")
        rho = e.sign * d / denom
        out.append(EdgeDensity(edge_index=idx, rho=rho, crossing=crossing))
    return out


def crossing_sum(g: PeriodicBipartiteGraph, densities, white_id: int = 0) -> float:
    """sum of weight * rho over thread-crossing edges at one white vertex."""
    tot = 0.0
    for d in densities:
        e = g.edges[d.edge_index]
        if d.crossing and e.white == white_id:
            tot += e.weight * d.rho
    return tot


def rank1_check(g: PeriodicBipartiteGraph, tp: TentacleParams,
                blacks=None, whites=None, _adj=None):
    """Singular structure of the bordered d_w Qhat(X_r, 0) block.

    blacks/whites list the vertices bordering one thread; for graphs built by
    honeycomb_nxm they default to the pairs across the j = 0 thread boundary.
    Returns (singular_values, U over blacks, V over whites) with the gauge
    V[first white] = 1; U V^T reproduces the block.
    """
    if blacks is None or whites is None:
        if not hasattr(g, "shape_nm"):
            raise DomainError("bordering vertex lists required for custom graphs")
        n, m = g.shape_nm
        if n < 2:
            raise DomainError("rank-1 block needs at least two columns")
        # depriving (b in column 0, w in column 1) forces a transfer chain
        # wrapping through the w-carrying boundary: Qhat(z, 0) vanishes
        blacks = [0 * m + i for i in range(m)]
        whites = [1 * m + i for i in range(m)]
    adj = _adj if _adj is not None else adjugate_polys(g)
    p = char_poly(g, check=False)
    _, delta0 = _normalized_pair(p)
    M = np.empty((len(blacks), len(whites)))
    for bi, b in enumerate(blacks):
        for wi, w in enumerate(whites):
            q = adj[b][w].shift(0, -delta0)
            row1 = q.w_rows().get(1, {})
            row0 = q.w_rows().get(0, {})
            if row0 and any(abs(c) > 1e-9 for c in row0.values()):
                raise AccuracyError(
                    f"bordering pair (b={b}, w={w}): Qhat(z,0) != 0, not a frozen thread"
                )
            M[bi, wi] = float(np.real(sum(c * tp.root**i for i, c in row1.items())))
    U_, S, Vt = np.linalg.svd(M)
    u = U_[:, 0] * S[0]
    v = Vt[0, :]
    if abs(v[0]) < 1e-14:
        raise AccuracyError("gauge vertex has vanishing factor")
    U = u * v[0]
    V = v / v[0]
    return S, U, V


def isoradial_map(g: PeriodicBipartiteGraph, field: MagneticField, _adj=None):
    """Divergence-free edge 1-form at a torus zero and the induced dual data.

    Returns a dict with: the root (z0, w0), complex edge form omega(e) =
    i * K_e * Q_{b_e, w_e} at the root, dual face positions from a spanning
    tree of the face adjacency, and the periods (xhat, yhat).  Raises
    DomainError when the field is not liquid.
    """
    p = char_poly(g, check=False)
    pB = p.scale_field(field.Bx, field.By)
    slice_ = _WSlice(pB, pB)
    crossings, _, _ = _crossing_angles(slice_)
    if not crossings:
        raise DomainError("isoradial mapping needs a liquid field (torus zero)")
    theta = crossings[0]
    z0 = cmath.exp(1j * theta)
    roots, _ = slice_.roots_at(np.array([z0]))
    r = roots[0]
    w0 = r[np.argmin(np.abs(np.abs(r) - 1.0))]
    w0 = w0 / abs(w0)
    Z0 = math.exp(field.Bx) * z0
    W0 = math.exp(field.By) * w0

    adj = _adj if _adj is not None else adjugate_polys(g)
    omega = []
    for e in g.edges:
        Ke = e.sign * e.weight * Z0**e.dx * W0**e.dy
        Qe = adj[e.black][e.white](Z0, W0)
        omega.append(1j * Ke * Qe)
    omega = np.array(omega)

    xhat = 1j * Z0 * p.dz()(Z0, W0)
    yhat = 1j * W0 * p.dw()(Z0, W0)

    # divergence at vertices
    div_w = np.zeros(g.white_count, dtype=complex)
    div_b = np.zeros(g.black_count, dtype=complex)
    for i, e in enumerate(g.edges):
        div_w[e.white] += omega[i]
        div_b[e.black] += omega[i]

    # dual positions: BFS over face adjacency; an edge traversed white->black
    # in a face's boundary walk steps +omega into the neighboring face
    positions = None
    if g.faces:
        incid = {}
        for fi, face in enumerate(g.faces):
            for slot, ei in enumerate(face):
                incid.setdefault(ei, []).append((fi, slot))
        positions = {0: 0j}
        stack = [0]
        while stack:
            fi = stack.pop()
            for slot, ei in enumerate(g.faces[fi]):
                for fj, slot2 in incid.get(ei, []):
                    if fj == fi and slot2 == slot:
                        continue
                    if fj not in positions:
                        step = omega[ei] if slot % 2 == 0 else -omega[ei]
                        positions[fj] = positions[fi] + step
                        stack.append(fj)
    return dict(
        z0=z0, w0=w0, Z0=Z0, W0=W0, omega=omega, xhat=xhat, yhat=yhat,
        div_white=div_w, div_black=div_b, dual_positions=positions,
    )


def freeze_classify(a_weights, c_weights, Bx: float, tol: float = 1e-9):
    """Frozen-column labels for an n x m honeycomb at horizontal field Bx.

    Column j freezes to 'a' when Bx < sum_i log(a_ij / c_ij) - tol, to 'c'
    when above, 'critical' within the tolerance band.
    """
    a = np.asarray(a_weights, dtype=float)
    c = np.asarray(c_weights, dtype=float)
    labels = []
    for j in range(a.shape[1]):
        thr = float(np.sum(np.log(a[:, j] / c[:, j])))
        if Bx < thr - tol:
            labels.append("a")
        elif Bx > thr + tol:
            labels.append("c")
        else:
            labels.append("critical")
    return labels


def run_length_law(g: PeriodicBipartiteGraph, tp: TentacleParams, column: int,
                   gamma: float = 0.0, t: float = 1e-4):
    """Geometric law of defect runs in a frozen column.

    Probes the tentacle at field (c + beta*gamma*t, log t), takes the dual
    edge lengths l(e) = |omega(e)| from the isoradial form at the torus root,
    and returns q = prod_i l(c_i)/l(a_i) over the column, with
    P(L >= p) = q^p.  Raises when the column freezes to 'a' but q >= 1.
    """
    if not hasattr(g, "shape_nm"):
        raise DomainError("run_length_law expects a honeycomb_nxm graph")
    n, m = g.shape_nm
    Bx = tp.c + tp.beta * gamma * t
    field = MagneticField(Bx, math.log(t))
    iso = isoradial_map(g, field)
    q = 1.0
    for i in range(m):
        la = abs(iso["omega"][g.edge_ids[("a", column, i)]])
        lc = abs(iso["omega"][g.edge_ids[("c", column, i)]])
        q *= lc / la
    a_w = np.array([[g.edges[g.edge_ids[("a", j, i)]].weight for j in range(n)] for i in range(m)])
    c_w = np.array([[g.edges[g.edge_ids[("c", j, i)]].weight for j in range(n)] for i in range(m)])
    label = freeze_classify(a_w, c_w, Bx)[column]
    if label == "a" and q >= 1.0:
        raise AccuracyError(f"column {column} frozen to 'a' but q = {q} >= 1")
    return dict(q=q, column=column, label=label, field=field,
                survival=lambda p_len: q**p_len)


def tentacle_kernel_check(g: PeriodicBipartiteGraph, tp: TentacleParams,
                          gamma: float, t_list, xs, xis, edge_index: int = None,
                          tol: float = 1e-9):
    """Compare inverse Kasteleyn coefficients deep in the tentacle against the
    bead-kernel prediction eps^Y t beta s rho J(X, xi).

    The probe edge defaults to the first thread-crossing edge; displacements
    x (threads) and xi (rescaled height) are applied on top of the edge's own
    monomial.  Returns rows (t, x, xi, y, measured, predicted, error).
    """
    kp = KernelParams(gamma)
    s = kp.s
    p = char_poly(g, check=False)
    phat, delta0 = _normalized_pair(p)
    adj = adjugate_polys(g)
    dens = rho_edges(g, tp, _adj=adj, _poly=p)
    if edge_index is None:
        crossing = [d.edge_index for d in dens if d.crossing]
        if not crossing:
            raise DomainError("no thread-crossing edge found")
        edge_index = crossing[0]
    e = g.edges[edge_index]
    # kernel prefactor without the edge monomial: displacements are explicit
    denom = float(np.real(phat.dw()(tp.root, 0.0)))
    rho0_num, _, _ = _rho_numerator(adj[e.black][e.white], e, delta0, tp.root,
                                    include_monomial=False)
    rho0 = e.sign * rho0_num / denom
    eps = tp.sign_gauge
    x_base, y_base = e.displacement
    rows = []
    for t in t_list:
        field = MagneticField(tp.c + tp.beta * gamma * t, math.log(t))
        cache = {}
        for x in xs:
            pq_cache = {}
            for xi in xis:
                y = int(round(xi / (t * tp.beta * s)))
                xi_real = t * tp.beta * s * y
                X, Y = x_base + x, y_base + y
                # fresh per-entry caches: cofactor fixed, crossings shared
                ckey = (e.black, e.white)
                if ckey not in cache:
                    cache[ckey] = {}
                ki = inverse_kasteleyn(g, field, e.black, e.white, X, Y,
                                       tol=max(tol, 1e-10), _cache=cache[ckey])
                pred = (eps ** (Y % 2)) * t * tp.beta * s * rho0 * eval_kernel(
                    kp, X, xi_real
                ).value
                rows.append(
                    dict(t=t, x=x, xi=xi_real, y=y, measured=float(np.real(ki)),
                         predicted=pred, error=abs(float(np.real(ki)) - pred))
                )
    return rows
