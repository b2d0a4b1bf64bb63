"""Graph construction: builtin honeycomb generators and the text file format.

File format (sections in any order, '#' comments allowed):

    [vertices]
    white = 2
    black = 2
    [edges]
    # white black weight sign dx dy
    0 0 1.0 +1 0 0
    ...
    [faces]
    0 1 2 0 1 2

Edge exponents (dx, dy) are the monomial exponents of the edge's entry in the
Kasteleyn symbol K(z, w).
"""

from __future__ import annotations

import math

import numpy as np

from .dimers import Edge, PeriodicBipartiteGraph, validate_graph
from .errors import DomainError, GraphFormatError


def honeycomb_1x1(a: float = 1.0, b: float = 1.0, c: float = 1.0) -> PeriodicBipartiteGraph:
    """Single-domain honeycomb with symbol K(z, w) = a + b/w + c z/w.

    The quotient has one hexagonal face whose boundary walk uses each edge
    twice.  With weights (t, 1, e^(gamma t)) this is the discrete bead model;
    equivalently weights (t, t, t) probed at field (gamma t, log t).
    """
    edges = [
        Edge(0, 0, a, 1, 0, 0),
        Edge(0, 0, b, 1, 0, -1),
        Edge(0, 0, c, 1, 1, -1),
    ]
    return PeriodicBipartiteGraph(1, 1, edges, faces=[[0, 1, 2, 0, 1, 2]])


def honeycomb_nxm(a, b, c) -> PeriodicBipartiteGraph:
    """Honeycomb with an n-column, m-row fundamental domain.

    Weight arrays are indexed [i, j] with row i in 0..m-1 and column j in
    0..n-1.  Columns are the threads: a- and c-edges live inside a column
    strip, b-edges cross between strips and carry the w monomial, so the
    bottom Newton-polygon side corresponds to b-free (frozen column)
    configurations and vertical tentacles open as By -> -infinity.

    Vertex ids: white/black (j, i) -> j*m + i.  Edges per white (j, i):
      a: black (j, i),           monomial 1
      c: black (j, (i-1) mod m), monomial z   when i = 0, else 1
      b: black ((j-1) mod n, i), monomial w   when j = 0, else 1
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if not (a.shape == b.shape == c.shape) or a.ndim != 2:
        raise DomainError("weight arrays must share a 2-d shape (m rows, n columns)")
    m, n = a.shape
    if (a <= 0).any() or (b <= 0).any() or (c <= 0).any():
        raise DomainError("weights must be positive")

    def wid(j, i):
        return j * m + i

    edges = []
    eid = {}
    for j in range(n):
        for i in range(m):
            eid[("a", j, i)] = len(edges)
            edges.append(Edge(wid(j, i), wid(j, i), a[i, j], 1, 0, 0))
            eid[("c", j, i)] = len(edges)
            edges.append(Edge(wid(j, i), wid(j, (i - 1) % m), c[i, j], 1, 1 if i == 0 else 0, 0))
            eid[("b", j, i)] = len(edges)
            edges.append(Edge(wid(j, i), wid((j - 1) % n, i), b[i, j], 1, 0, 1 if j == 0 else 0))
    faces = []
    for j in range(n):
        for i in range(m):
            ip, jm = (i + 1) % m, (j - 1) % n
            faces.append(
                [
                    eid[("a", j, i)],
                    eid[("c", j, ip)],
                    eid[("b", j, ip)],
                    eid[("a", jm, ip)],
                    eid[("c", jm, ip)],
                    eid[("b", j, i)],
                ]
            )
    g = PeriodicBipartiteGraph(n * m, n * m, edges, faces)
    g.edge_ids = eid  # (kind, column j, row i) -> edge index
    g.shape_nm = (n, m)
    return g


def square_1x1(a=1.0, b=1.0, c=1.0, d=1.0) -> PeriodicBipartiteGraph:
    """Square lattice fundamental domain; all-positive signs violate the
    face condition (4-gon needs product -1), useful for sign-fixing."""
    edges = [
        Edge(0, 0, a, 1, 0, 0),
        Edge(0, 0, b, 1, 1, 0),
        Edge(0, 0, c, 1, 0, 1),
        Edge(0, 0, d, 1, 1, 1),
    ]
    faces = [[0, 1, 3, 2], [0, 2, 3, 1]]
    return PeriodicBipartiteGraph(1, 1, edges, faces)


def parse_builtin(spec: str, weightfile: str = None) -> PeriodicBipartiteGraph:
    """Builtin graph specifications: 'honeycomb:1x1' (optionally
    'honeycomb:1x1:a,b,c') and 'honeycomb:NxM' with a weight file."""
    parts = spec.split(":")
    if parts[0] != "honeycomb":
        raise DomainError(f"unknown builtin family {parts[0]!r}")
    if len(parts) < 2:
        raise DomainError("builtin spec needs a size, e.g. honeycomb:1x1")
    size = parts[1]
    try:
        n_s, m_s = size.lower().split("x")
        n, m = int(n_s), int(m_s)
    except ValueError as exc:
        raise DomainError(f"bad builtin size {size!r}") from exc
    if (n, m) == (1, 1) and len(parts) <= 3:
        if len(parts) == 3:
            try:
                a, b, c = (float(v) for v in parts[2].split(","))
            except ValueError as exc:
                raise DomainError(f"bad weight triple {parts[2]!r}") from exc
            return honeycomb_1x1(a, b, c)
        return honeycomb_1x1()
    wf = weightfile or (parts[2] if len(parts) > 2 else None)
    if wf is None:
        raise DomainError("honeycomb:NxM requires a weight file (columns i j a b c)")
    rows = {}
    with open(wf) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#")[0].strip()
            if not line or line.startswith("i"):
                continue
            try:
                i_s, j_s, av, bv, cv = line.replace(",", " ").split()
                rows[(int(i_s), int(j_s))] = (float(av), float(bv), float(cv))
            except ValueError as exc:
                raise GraphFormatError(f"bad weight row {line!r}", line=ln) from exc
    a = np.empty((m, n))
    b = np.empty((m, n))
    c = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            if (i, j) not in rows:
                raise GraphFormatError(f"missing weights for cell ({i}, {j})")
            a[i, j], b[i, j], c[i, j] = rows[(i, j)]
    return honeycomb_nxm(a, b, c)


def load_graph(path: str) -> PeriodicBipartiteGraph:
    """Parse a graph specification file and validate it."""
    section = None
    white = black = None
    edges = []
    faces = []
    seen_sections = set()
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#")[0].strip()
            if not line:
                continue
            if line.startswith("["):
                if not line.endswith("]"):
                    raise GraphFormatError(f"malformed section header {line!r}", line=ln)
                section = line[1:-1].strip().lower()
                if section not in ("vertices", "edges", "faces"):
                    raise GraphFormatError(f"unknown section {section!r}", line=ln)
                seen_sections.add(section)
                continue
            if section == "vertices":
                try:
                    key, val = (s.strip() for s in line.split("="))
                    if key == "white":
                        white = int(val)
                    elif key == "black":
                        black = int(val)
                    else:
                        raise ValueError(key)
                except ValueError as exc:
                    raise GraphFormatError(f"bad vertex line {line!r}", line=ln) from exc
            elif section == "edges":
                toks = line.split()
                if len(toks) != 6:
                    raise GraphFormatError(
                        f"edge line needs 'white black weight sign dx dy', got {line!r}",
                        line=ln,
                    )
                try:
                    edges.append(
                        Edge(
                            int(toks[0]),
                            int(toks[1]),
                            float(toks[2]),
                            int(toks[3]),
                            int(toks[4]),
                            int(toks[5]),
                        )
                    )
                except (ValueError, DomainError) as exc:
                    raise GraphFormatError(str(exc), line=ln) from exc
            elif section == "faces":
                try:
                    faces.append([int(t) for t in line.split()])
                except ValueError as exc:
                    raise GraphFormatError(f"bad face line {line!r}", line=ln) from exc
            else:
                raise GraphFormatError(f"content outside any section: {line!r}", line=ln)
    for name, present in (("vertices", white is not None and black is not None),
                          ("edges", bool(edges)), ("faces", "faces" in seen_sections)):
        if not present:
            raise GraphFormatError(f"missing section [{name}]")
    g = PeriodicBipartiteGraph(white, black, edges, faces)
    diags = validate_graph(g)
    if diags:
        raise GraphFormatError("; ".join(diags))
    return g


def save_graph(g: PeriodicBipartiteGraph, path: str):
    with open(path, "w") as fh:
        fh.write("[vertices]\n")
        fh.write(f"white = {g.white_count}\nblack = {g.black_count}\n")
        fh.write("[edges]\n# white black weight sign dx dy\n")
        for e in g.edges:
            fh.write(f"{e.white} {e.black} {e.weight!r} {e.sign:+d} {e.dx} {e.dy}\n")
        fh.write("[faces]\n")
        for face in g.faces:
            fh.write(" ".join(str(i) for i in face) + "\n")
