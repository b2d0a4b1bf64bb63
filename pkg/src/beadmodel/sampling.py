"""Random bead configurations: sequential determinantal sampling of the
continuous process, and worm+flip Monte Carlo for the discrete honeycomb
torus.

Continuous sampler.  A window is discretized into cells of width <= grid_step;
the cell indicators then form a discrete determinantal process with matrix
M_ij ~ sqrt(d_i d_j) J(x_i - x_j, xi_i - xi_j).  Cells are visited in order
and decided by their conditional probability, the current diagonal entry of an
LDL-style elimination: after deciding cell i the trailing block receives the
rank-one update M -= M[:,i] M[i,:] / (M_ii - [not taken]).  This is exact for
the discrete process and needs no symmetry of the kernel.

Discrete sampler.  Configurations are arrays match[j, i] in {a=0, b=1, c=2}
per white vertex of an n x m torus (adjacency: a -> black (j, i), b -> black
(j, i-1), c -> black (j-1, i-1)).  Hexagon flips exchange the alternating
triples {a(j,i), c(j,i+1), b(j-1,i)} <-> {c(j,i), b(j,i+1), a(j-1,i)} with
Metropolis acceptance; flips conserve the homology class (and the per-type
edge counts), so the chain is additionally driven by worm moves -- heat-bath
walks of a monomer pair whose winding closures move the chain between homology
sectors.  With orientation-uniform weights every black vertex has the same
heat-bath normalizer, so the worm satisfies detailed balance exactly.

Randomness: a master numpy PCG64 generator (seeded) draws everything on the
Python side; compiled kernels consume pre-seeded MT19937 streams derived from
it, making runs bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dpp import BeadPoint, WindowSpec
from .errors import AccuracyError, DomainError
from .honeycomb import DiscreteParams
from .kernel import KernelParams, kernel_matrix

A, B, C = 0, 1, 2


# ---------------------------------------------------------------------------
# continuous window sampler


@njit(cache=True)
def _dpp_core(M, u, out):
    m = M.shape[0]
    for i in range(m):
        p = M[i, i]
        if p < -1e-6 or p > 1.0 + 1e-6:
            return -1
        pc = p
        if pc < 0.0:
            pc = 0.0
        elif pc > 1.0:
            pc = 1.0
        take = u[i] < pc
        out[i] = 1 if take else 0
        d = p if take else p - 1.0
        if abs(d) < 1e-14:
            d = 1e-14 if d >= 0 else -1e-14
        inv = 1.0 / d
        for r in range(i + 1, m):
            f = M[r, i] * inv
            if f != 0.0:
                for s in range(i + 1, m):
                    M[r, s] -= f * M[i, s]
    return 0


def _window_cells(window: WindowSpec, grid_step: float):
    threads, centers, widths = [], [], []
    for t, lo, hi in window.intervals:
        n_c = max(1, int(math.ceil((hi - lo) / grid_step)))
        step = (hi - lo) / n_c
        for k in range(n_c):
            threads.append(t)
            centers.append(lo + (k + 0.5) * step)
            widths.append(step)
    return np.array(threads), np.array(centers), np.array(widths)


def _cell_kernel(params: KernelParams, window: WindowSpec, grid_step: float):
    threads, centers, widths = _window_cells(window, grid_step)
    K = kernel_matrix(params, list(zip(threads.tolist(), centers.tolist())))
    sw = np.sqrt(widths)
    return sw[:, None] * K * sw[None, :], threads, centers


def sample_dpp_window(params: KernelParams, window: WindowSpec, grid_step: float,
                      seed: int) -> list:
    """One determinantal sample of bead positions on the window."""
    if grid_step > 0.05:
        raise DomainError("grid_step must be at most 0.05")
    if isinstance(params, (int, float)):
        params = KernelParams(params)
    if window.total_length == 0.0:
        return []
    M, threads, centers = _cell_kernel(params, window, grid_step)
    rng = np.random.default_rng(seed)
    u = rng.random(M.shape[0])
    out = np.zeros(M.shape[0], dtype=np.uint8)
    status = _dpp_core(M.copy(), u, out)
    if status != 0:
        raise AccuracyError("conditional probability left [-1e-6, 1+1e-6]")
    return [BeadPoint(int(t), float(x)) for t, x, o in zip(threads, centers, out) if o]


def sample_dpp_many(params: KernelParams, window: WindowSpec, grid_step: float,
                    n_samples: int, seed: int):
    """Occupancy matrix (n_samples x n_cells) plus cell metadata.

    The per-sample kernel matrix is rebuilt by copy; uniforms come from one
    PCG64 stream so the run is reproducible as a whole.
    """
    if grid_step > 0.05:
        raise DomainError("grid_step must be at most 0.05")
    if isinstance(params, (int, float)):
        params = KernelParams(params)
    M0, threads, centers = _cell_kernel(params, window, grid_step)
    m = M0.shape[0]
    rng = np.random.default_rng(seed)
    occ = np.zeros((n_samples, m), dtype=np.uint8)
    buf = np.empty_like(M0)
    for s in range(n_samples):
        np.copyto(buf, M0)
        status = _dpp_core(buf, rng.random(m), occ[s])
        if status != 0:
            raise AccuracyError("conditional probability left [-1e-6, 1+1e-6]")
    return occ, threads, centers


# ---------------------------------------------------------------------------
# discrete torus sampler


@dataclass
class TorusTiling:
    n_threads: int
    n_sites: int
    match: np.ndarray  # (n_threads, n_sites) int8 in {0=a, 1=b, 2=c}
    params: DiscreteParams = None

    def counts(self):
        return tuple(int(np.sum(self.match == k)) for k in (A, B, C))


@dataclass
class SampleStats:
    empirical_density: float
    empirical_ratio: float
    pair_correlation_histogram: np.ndarray
    n_samples: int


def validate_tiling(t: TorusTiling):
    """Perfect-matching check: every black vertex covered exactly once."""
    N, M = t.n_threads, t.n_sites
    cover = np.zeros((N, M), dtype=np.int64)
    for j in range(N):
        for i in range(M):
            k = t.match[j, i]
            if k == A:
                cover[j, i] += 1
            elif k == B:
                cover[j, (i - 1) % M] += 1
            else:
                cover[(j - 1) % N, (i - 1) % M] += 1
    return bool((cover == 1).all())


@njit(cache=True)
def _worm_once(match, N, M, pa, pab):
    j0 = np.random.randint(0, N)
    i0 = np.random.randint(0, M)
    k0 = match[j0, i0]
    if k0 == 0:
        jb, ib = j0, i0
    elif k0 == 1:
        jb, ib = j0, (i0 - 1) % M
    else:
        jb, ib = (j0 - 1) % N, (i0 - 1) % M
    steps = 0
    while steps < 50_000_000:
        steps += 1
        r = np.random.random()
        if r < pa:
            k = 0
            jw, iw = jb, ib
        elif r < pab:
            k = 1
            jw, iw = jb, (ib + 1) % M
        else:
            k = 2
            jw, iw = (jb + 1) % N, (ib + 1) % M
        if jw == j0 and iw == i0:
            match[j0, i0] = k
            return steps
        kp = match[jw, iw]
        if kp == 0:
            jb2, ib2 = jw, iw
        elif kp == 1:
            jb2, ib2 = jw, (iw - 1) % M
        else:
            jb2, ib2 = (jw - 1) % N, (iw - 1) % M
        match[jw, iw] = k
        jb, ib = jb2, ib2
    return -1


@njit(cache=True)
def _flip_sweep(match, N, M, n_attempts):
    acc = 0
    for _ in range(n_attempts):
        j = np.random.randint(0, N)
        i = np.random.randint(0, M)
        ip = (i + 1) % M
        jm = (j - 1) % N
        a0 = match[j, i]
        c1 = match[j, ip]
        b2 = match[jm, i]
        if a0 == 0 and c1 == 2 and b2 == 1:
            match[j, i] = 2
            match[j, ip] = 1
            match[jm, i] = 0
            acc += 1
        elif a0 == 2 and c1 == 1 and b2 == 0:
            match[j, i] = 0
            match[j, ip] = 2
            match[jm, i] = 1
            acc += 1
    return acc


@njit(cache=True)
def _flip_sweep_weighted(match, N, M, n_attempts, la, lb, lc):
    """Metropolis flips with per-site log-weights; returns (accepted,
    accumulated log-weight change) for detailed-balance bookkeeping."""
    acc = 0
    dlog = 0.0
    for _ in range(n_attempts):
        j = np.random.randint(0, N)
        i = np.random.randint(0, M)
        ip = (i + 1) % M
        jm = (j - 1) % N
        a0 = match[j, i]
        c1 = match[j, ip]
        b2 = match[jm, i]
        if a0 == 0 and c1 == 2 and b2 == 1:
            delta = (lc[j, i] + lb[j, ip] + la[jm, i]) - (
                la[j, i] + lc[j, ip] + lb[jm, i]
            )
            if np.random.random() < min(1.0, math.exp(delta)):
                match[j, i] = 2
                match[j, ip] = 1
                match[jm, i] = 0
                acc += 1
                dlog += delta
        elif a0 == 2 and c1 == 1 and b2 == 0:
            delta = (la[j, i] + lc[j, ip] + lb[jm, i]) - (
                lc[j, i] + lb[j, ip] + la[jm, i]
            )
            if np.random.random() < min(1.0, math.exp(delta)):
                match[j, i] = 0
                match[j, ip] = 2
                match[jm, i] = 1
                acc += 1
                dlog += delta
    return acc, dlog


@njit(cache=True)
def _chain(match, N, M, pa, pab, n_sweeps, flips_per_sweep, worms_per_sweep,
           record_every, counts_out, seed):
    np.random.seed(seed)
    rec = 0
    for sweep in range(n_sweeps):
        _flip_sweep(match, N, M, flips_per_sweep)
        for _ in range(worms_per_sweep):
            if _worm_once(match, N, M, pa, pab) < 0:
                return -1
        if record_every > 0 and (sweep + 1) % record_every == 0:
            na = 0
            nb = 0
            for j in range(N):
                for i in range(M):
                    k = match[j, i]
                    if k == 0:
                        na += 1
                    elif k == 1:
                        nb += 1
            counts_out[rec, 0] = na
            counts_out[rec, 1] = nb
            counts_out[rec, 2] = N * M - na - nb
            rec += 1
    return rec


def log_weight(t: TorusTiling, weights) -> float:
    wa, wb, wc = weights
    na, nb, nc = t.counts()
    return na * math.log(wa) + nb * math.log(wb) + nc * math.log(wc)


def mcmc_tiling(params: DiscreteParams, n_threads: int, n_sites: int,
                sweeps: int, seed: int, burnin: int = None,
                worms_per_sweep: int = 4) -> TorusTiling:
    """Sample one torus dimer configuration at weights (t, 1, e^(gamma t)).

    A sweep is n_threads*n_sites flip attempts plus ``worms_per_sweep`` worm
    moves.  Burn-in defaults to 50 + 4*sqrt(n_threads*n_sites) sweeps, which
    chains validated against the exact torus computation; pass an explicit
    value for stricter runs.
    """
    if n_threads % 2 != 0:
        raise DomainError("n_threads must be even")
    if n_threads < 2 or n_sites < 2:
        raise DomainError("torus must be at least 2 x 2")
    wa, wb, wc = params.t, 1.0, math.exp(params.gamma * params.t)
    tot = wa + wb + wc
    pa, pab = wa / tot, (wa + wb) / tot
    match = np.full((n_threads, n_sites), B, dtype=np.int8)
    if burnin is None:
        burnin = 50 + int(4 * math.sqrt(n_threads * n_sites))
    rng = np.random.default_rng(seed)
    kernel_seed = int(rng.integers(0, 2**31 - 1))
    counts = np.zeros((1, 3), dtype=np.int64)
    status = _chain(match, n_threads, n_sites, pa, pab, burnin + sweeps,
                    n_threads * n_sites, worms_per_sweep, 0, counts, kernel_seed)
    if status < 0:
        raise AccuracyError("worm move failed to close")
    return TorusTiling(n_threads, n_sites, match, params)


def mcmc_counts(params: DiscreteParams, n_threads: int, n_sites: int,
                n_records: int, seed: int, burnin_sweeps: int = None,
                thin: int = 2, worms_per_sweep: int = None):
    """Chain of (N_a, N_b, N_c) records for statistics.

    Records are taken every ``thin`` sweeps after burn-in.  Returns an
    (n_records, 3) integer array.
    """
    if n_threads % 2 != 0:
        raise DomainError("n_threads must be even")
    wa, wb, wc = params.t, 1.0, math.exp(params.gamma * params.t)
    tot = wa + wb + wc
    pa, pab = wa / tot, (wa + wb) / tot
    if worms_per_sweep is None:
        worms_per_sweep = 4
    if burnin_sweeps is None:
        burnin_sweeps = 50 + int(4 * math.sqrt(n_threads * n_sites))
    match = np.full((n_threads, n_sites), B, dtype=np.int8)
    rng = np.random.default_rng(seed)
    seed1 = int(rng.integers(0, 2**31 - 1))
    seed2 = int(rng.integers(0, 2**31 - 1))
    dummy = np.zeros((1, 3), dtype=np.int64)
    if _chain(match, n_threads, n_sites, pa, pab, burnin_sweeps,
              n_threads * n_sites, worms_per_sweep, 0, dummy, seed1) < 0:
        raise AccuracyError("worm move failed to close")
    counts = np.zeros((n_records, 3), dtype=np.int64)
    got = _chain(match, n_threads, n_sites, pa, pab, n_records * thin,
                 n_threads * n_sites, worms_per_sweep, thin, counts, seed2)
    if got != n_records:
        raise AccuracyError("record count mismatch")
    return counts


def extract_beads(tiling: TorusTiling, params: DiscreteParams) -> list:
    """Bead points (thread, t*row*sqrt(1-gamma^2)) at the a-edges."""
    s = params.s
    out = []
    js, is_ = np.nonzero(tiling.match == A)
    for j, i in zip(js.tolist(), is_.tolist()):
        out.append(BeadPoint(int(j), params.t * i * s))
    return out


def interlacing_violations(tiling: TorusTiling) -> int:
    """Number of adjacent-thread pairs whose beads fail cyclic interlacing.

    Bead heights on thread j are staggered by half a row for odd j (brick
    embedding of the honeycomb); strict alternation around the torus circle is
    then well defined.  Wrap-around homology defects make violations possible
    with small probability at finite t, so this is a counter, not an asserter.
    """
    N, M = tiling.n_threads, tiling.n_sites
    heights = []
    for j in range(N):
        rows = np.nonzero(tiling.match[j] == A)[0]
        heights.append(rows + 0.5 * (j % 2))
    bad = 0
    for j in range(N):
        h1, h2 = heights[j], heights[(j + 1) % N]
        if len(h1) != len(h2):
            bad += 1
            continue
        if len(h1) == 0:
            continue
        merged = sorted([(v, 0) for v in h1] + [(v, 1) for v in h2])
        labels = [lab for _, lab in merged]
        if any(labels[k] == labels[(k + 1) % len(labels)] for k in range(len(labels))):
            bad += 1
    return bad


def collect_stats(params: DiscreteParams, tilings, bins=20, max_sep=5.0) -> SampleStats:
    """Empirical density / b-vs-c ratio / same-thread pair histogram."""
    tilings = list(tilings)
    total_beads = 0
    total_sites = 0
    nb = nc = 0
    hist = np.zeros(bins)
    edges = np.linspace(0.0, max_sep, bins + 1)
    s = params.s
    for t in tilings:
        na_, nb_, nc_ = t.counts()
        total_beads += na_
        nb += nb_
        nc += nc_
        total_sites += t.n_threads * t.n_sites
        for j in range(t.n_threads):
            rows = np.nonzero(t.match[j] == A)[0] * params.t * s
            if len(rows) > 1:
                d = np.abs(rows[:, None] - rows[None, :])
                vals = d[np.triu_indices(len(rows), 1)]
                hist += np.histogram(vals, bins=edges)[0]
    density = total_beads / (total_sites * params.t) if total_sites else 0.0
    ratio = nb / (nb + nc) if (nb + nc) else 0.0
    return SampleStats(density, ratio, hist, len(tilings))
