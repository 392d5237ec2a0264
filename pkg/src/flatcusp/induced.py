"""Induced system: the set M, return times, cells and expansion factors.

A state belongs to M unless it is a collision of a corner series, i.e. of a
maximal run of more than K0 consecutive collisions with the cusp walls.  The
return time of a state in M is then 1 unless the next collision starts a
corner series of length N, in which case it is N + 1 and the state lies in
the cell M_N.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import _core
from .dynamics import (PHI_TOL, PhasePoint, billiard_map, map_differential, s_floor,
                       ConeError, SingularInputError)
from .stats import sample_mu, ensemble_from_r_phi, make_rng

DEFAULT_CAP = 10_000_000


class UndecidableError(RuntimeError):
    """The trajectory hit a singularity before membership could be resolved."""


@dataclass(frozen=True)
class InducedConfig:
    K0: int = 10
    k0: int = 5
    phi_K0: float = float("nan")
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if int(self.K0) != self.K0 or self.K0 < 2:
            raise ValueError(f"K0 must be an integer >= 2, got {self.K0}")
        if int(self.k0) != self.k0 or self.k0 < 1:
            raise ValueError(f"k0 must be a positive integer, got {self.k0}")


@dataclass(frozen=True)
class ReturnSample:
    x: PhasePoint
    R: int
    cell: int
    expansion: float
    exit: PhasePoint


def cusp_run(table, x, cfg=InducedConfig()):
    """(belongs to a run longer than K0, forward run length) for a cusp state."""
    long_run, fwd, fl = _core.run_membership(table.packed, x.arc, x.u, x.phi, cfg.K0, cfg.cap,
                                             PHI_TOL, s_floor(table))
    if fl & _core.FATAL:
        raise UndecidableError(f"run through r={x.r}, phi={x.phi} hit a singularity")
    return bool(long_run), int(fwd)


def in_M(table, x, cfg=InducedConfig()):
    if not table.is_cusp_arc(x.arc):
        return True
    long_run, _ = cusp_run(table, x, cfg)
    return not long_run


def default_seed_B(table, x):
    return 2.0 * x.K / math.cos(x.phi) + 1.0 / table.tau_max


def return_map(table, x, cfg=InducedConfig(), B0=None):
    """Iterate until the first re-entry to M."""
    if not in_M(table, x, cfg):
        raise ValueError("state is not in M")
    if B0 is None:
        B0 = default_seed_B(table, x)
    R, cell, j, uj, pj, logL, fl = _core.excursion(table.packed, x.arc, x.u, x.phi, B0,
                                                   cfg.K0, cfg.cap, PHI_TOL, s_floor(table))
    if fl & _core.FATAL or R <= 0:
        raise UndecidableError(f"excursion from r={x.r}, phi={x.phi} flagged {fl}")
    return ReturnSample(x, int(R), int(cell), math.exp(logL), PhasePoint.from_arc(table, j, uj, pj))


@dataclass
class Expansion:
    Lambda: float
    log_Lambda: float
    lam: np.ndarray
    N: int
    tau_entry: float
    B: np.ndarray
    tau: np.ndarray
    phi: np.ndarray
    s: np.ndarray
    exit: PhasePoint


def expansion_factor(table, x, B0=None, cap=DEFAULT_CAP):
    """Expansion of a front seeded at x across the corner series it enters.

    The product runs over every flight from x to the first collision after the
    series (entry flight, the flights inside the series and the exit flight).
    lam[n] = tau_n B(x_n) for the series collisions.
    """
    if B0 is None:
        B0 = default_seed_B(table, x)
    if not B0 > 0:
        raise ConeError("seed curvature must be positive")
    arc, s, phi, tau, B, tau0, j, uj, pj, fl = _core.cusp_series(
        table.packed, x.arc, x.u, x.phi, B0, cap, PHI_TOL, s_floor(table))
    if fl & _core.FATAL:
        raise UndecidableError(f"series from r={x.r} flagged {fl}")
    if np.any(B <= 0):
        raise ConeError("front curvature became nonpositive inside the series")
    lam = tau * B
    logL = math.log1p(tau0 * B0) + np.log1p(lam).sum()
    return Expansion(math.exp(logL), logL, lam, len(s), tau0, B, tau, phi, s,
                     PhasePoint.from_arc(table, j, uj, pj))


def expansion_by_matrices(table, x, V0, steps):
    """p-metric stretch of a tangent vector of slope V0 over ``steps`` maps.

    Uses only the differential matrices, so it is independent of the front
    curvature recursion.  Returns (log stretch, final slope).
    """
    v = np.array([1.0, V0])
    logs = 0.0
    cur = x
    for _ in range(steps):
        nxt, tau = billiard_map(table, cur)
        D = map_differential(table, cur, nxt, tau)
        w = D @ v
        logs += math.log(math.cos(nxt.phi) * abs(w[0]) / (math.cos(cur.phi) * abs(v[0])))
        v = w / abs(w[0])
        cur = nxt
    return logs, v[1] / v[0]


def homogeneity_index(phi, k0=5):
    """Strip index of angle phi: 0 in the central strip, else k >= k0."""
    a = abs(phi)
    if a < 0.5 * math.pi - k0**-2:
        return 0
    d = 0.5 * math.pi - a
    if d <= 0.0:
        return math.inf
    # pi/2 - k**-2 < |phi| <= pi/2 - (k+1)**-2  <=>  k < d**-0.5 <= k + 1
    k = math.ceil(d**-0.5) - 1
    # guard against rounding at the strip edges
    while 0.5 * math.pi - (k + 1) ** -2 < a:
        k += 1
    while k > k0 and 0.5 * math.pi - k**-2 >= a:
        k -= 1
    return max(k, k0)


# Monte Carlo over samples

@dataclass
class ReturnBatch:
    inM: np.ndarray
    R: np.ndarray
    cell: np.ndarray
    log_Lambda: np.ndarray
    flags: np.ndarray
    r: np.ndarray
    phi: np.ndarray

    @property
    def discarded(self):
        return (self.flags & _core.FATAL) != 0

    @property
    def censored(self):
        return (self.flags & _core.FLAG_CENSORED) != 0


def classify(table, ensemble, cfg=InducedConfig(), full_cap=None):
    """Membership, extended return time, cell and log expansion per sample.

    For states outside M the extended return time counts the collisions left
    before re-entering M; it is followed for at most ``full_cap`` collisions
    (default ``cfg.cap``) and marked censored beyond.  Pass a small
    ``full_cap`` when only the states of M matter.
    """
    st = ensemble.states()
    full_cap = cfg.cap if full_cap is None else int(full_cap)
    inM, R, cell, logL, flags = _core.sample_returns(table.packed, st, cfg.K0, cfg.cap, full_cap,
                                                     PHI_TOL, s_floor(table), table.tau_max)
    return ReturnBatch(inM, R, cell, logL, flags, ensemble.r, ensemble.phi)


def sample_returns(table, count, seed, stream=0, cfg=InducedConfig(), full_cap=None):
    """Classify ``count`` mu-distributed states (one stream)."""
    return classify(table, sample_mu(table, count, seed, stream), cfg, full_cap)


def measure_phi_K0(batch):
    """Largest |phi| among sampled states of M (the empirical phi_K0)."""
    ok = batch.inM & ~batch.discarded
    return float(np.abs(batch.phi[ok]).max())


def grazing_check(table, count, seed, cfg=InducedConfig(), margin=1e-4):
    """Fraction of near-grazing states caught in a cusp run longer than K0.

    A state counts when it lies in such a run or its next collision does.
    Near-grazing states at the two wall corners are not caught.
    """
    rng = make_rng(seed, 0x6A2)
    r = rng.uniform(0.0, table.total_length, count)
    sgn = np.where(rng.uniform(size=count) < 0.5, -1.0, 1.0)
    phi = sgn * (0.5 * math.pi - margin * rng.uniform(0.1, 1.0, count))
    ens = ensemble_from_r_phi(table, r, phi)
    long_run = 0
    for k in range(count):
        x = PhasePoint.from_arc(table, ens.arc[k], ens.u[k], ens.phi[k])
        try:
            x1, _ = billiard_map(table, x)
        except SingularInputError:
            continue
        if table.is_cusp_arc(x1.arc):
            long_run += cusp_run(table, x1, cfg)[0]
        elif table.is_cusp_arc(x.arc):
            long_run += cusp_run(table, x, cfg)[0]
    return long_run / count


def induced_orbit(table, n_returns, seed, cfg=InducedConfig(), chunk=1_000_000):
    """Orbit of F of ``n_returns`` returns from a mu_M-distributed start.

    Returns arrays (R, cell) per return and the number of restarts (an orbit
    hitting a singular state restarts from a fresh sample).
    """
    R = np.zeros(n_returns, np.int64)
    cell = np.zeros(n_returns, np.int64)
    filled, restarts, stream = 0, 0, 0
    state = None
    sf = s_floor(table)
    while filled < n_returns:
        if state is None:
            e = sample_mu(table, 1, seed, stream=0x0B17 + stream)
            stream += 1
            x = PhasePoint.from_arc(table, e.arc[0], e.u[0], e.phi[0])
            try:
                if not in_M(table, x, cfg):
                    continue
            except UndecidableError:
                continue
            state = (x.arc, x.u, x.phi)
        want = min(chunk, n_returns - filled)
        Rs, cs, _, cnt, fl, i, u, phi = _core.induced_orbit(table.packed, *state, want, cfg.K0,
                                                            cfg.cap, PHI_TOL, sf)
        R[filled:filled + cnt] = Rs[:cnt]
        cell[filled:filled + cnt] = cs[:cnt]
        filled += cnt
        if fl & _core.FATAL:
            restarts += 1
            state = None
        else:
            state = (i, u, phi)
    return R, cell, restarts


# one-step expansion

def _euclid_factor(phi, V, phi1, V1):
    return math.cos(phi) / math.cos(phi1) * math.sqrt(1 + V1 * V1) / math.sqrt(1 + V * V)


def _curve_point(table, t, V):
    return PhasePoint.at(table, table.r_D + t, V * t)


def _piece_key(table, x, cfg, V):
    """(cell, strip of first series collision, strip of last) and Euclidean expansion."""
    B0 = (V + x.K) / math.cos(x.phi)
    ex = expansion_factor(table, x, B0=B0, cap=cfg.cap)
    if ex.N == 0:
        return (0, 0, 0), 1.0
    m = homogeneity_index(ex.phi[0], cfg.k0)
    k = homogeneity_index(ex.phi[-1], cfg.k0)
    y = ex.exit
    # slope after the last flight, from the front curvature at the exit point
    Bm = 1.0 / (ex.tau[-1] + 1.0 / ex.B[-1])
    B1 = Bm + 2.0 * y.K / math.cos(y.phi)
    V1 = B1 * math.cos(y.phi) - y.K
    return (ex.N, m, k), ex.Lambda * _euclid_factor(x.phi, V, y.phi, V1)


def cell_contribution(table, N, cfg=InducedConfig(), V=None, side=1.0, n_points=240,
                      depth=1e-9, refine=60):
    """Sum of 1/Lambda over the pieces of one cell crossed by the seed curve.

    The cell is bracketed by bisection on the curve parameter; it is then
    sampled with points clustered geometrically towards both edges, where
    the last (or first) series collision turns grazing and the homogeneity
    strips accumulate.  Pieces are runs of equal (N, first strip, last strip)
    and contribute 1/min(Lambda) over their end points and midpoint.
    """
    V = _default_slope(table) if V is None else V
    a = _cell_edge(table, cfg, V, side, N + 1, refine)
    b = _cell_edge(table, cfg, V, side, N, refine)
    half = n_points // 2
    q = np.geomspace(depth, 0.5, half)
    us = np.unique(np.concatenate([q, 1.0 - q]))
    return curve_sum(table, a + us * (b - a), cfg, V, cell=N)


def curve_sum(table, ts, cfg=InducedConfig(), V=None, cell=None):
    """Sum of 1/min(Lambda) over the pieces of the seed curve sampled at ``ts``.

    Consecutive sample points with equal (cell, first strip, last strip)
    form a piece; each piece contributes 1/min(Lambda) over its end points
    and midpoint.  With ``cell`` given only pieces of that cell count.
    Returns (sum, number of pieces).
    """
    V = _default_slope(table) if V is None else V
    keys, lams = [], []
    for t in ts:
        key, lam = _piece_key(table, _curve_point(table, t, V), cfg, V)
        keys.append(key)
        lams.append(lam)
    total, pieces, start = 0.0, 0, 0
    for idx in range(1, len(keys) + 1):
        if idx == len(keys) or keys[idx] != keys[start]:
            if cell is None or keys[start][0] == cell:
                seg = lams[start:idx]
                total += 1.0 / min(seg[0], seg[-1], seg[len(seg) // 2])
                pieces += 1
            start = idx
    return total, pieces


def _default_slope(table):
    x_D = PhasePoint.at(table, table.r_D, 0.0)
    return x_D.K + 1.0 / table.tau_max


def cell_contributions(table, n_lo, n_hi, cfg=InducedConfig(), V=None, n_cells=24,
                       n_points=240):
    """Per-cell sums (both sides of x_D) on ``n_cells`` log-spaced cells in [n_lo, n_hi]."""
    V = _default_slope(table) if V is None else V
    Ns = np.unique(np.round(np.geomspace(n_lo, n_hi, n_cells)).astype(int))
    c = np.zeros(len(Ns))
    pieces = 0
    for j, N in enumerate(Ns):
        for side in (1.0, -1.0):
            val, k = cell_contribution(table, int(N), cfg, V, side, n_points)
            c[j] += val
            pieces += k
    return Ns, c, pieces


def sum_from_cells(Ns, c, n0, tail_cells=8):
    """Sum over all N >= n0 of per-cell contributions measured on the cells Ns.

    Integer cells between measured ones use the log-log interpolant; beyond
    the last measured cell a power law fitted on the last ``tail_cells``
    cells is summed in closed form (infinite if it decays no faster than 1/N).
    """
    from .stats import power_law_fit
    if n0 < Ns[0]:
        raise ValueError(f"n0={n0} lies below the first measured cell {Ns[0]}")
    grid = np.arange(n0, Ns[-1] + 1)
    body = float(np.exp(np.interp(np.log(grid), np.log(Ns), np.log(c))).sum())
    fit = power_law_fit(Ns[-tail_cells:], c[-tail_cells:], min_points=min(8, tail_cells))
    p = fit.exponent
    tail = c[-1] * (Ns[-1] + 0.5) / -(p + 1) if p < -1 else math.inf
    return {"n0": int(n0), "sum": body + tail, "body": body, "tail_estimate": tail,
            "tail_exponent": p, "tail_stderr": fit.stderr}


def one_step_expansion_sum(table, n0, cfg=InducedConfig(), V=None, n_hi=20_000, n_cells=24,
                           n_points=240, contributions=None):
    """Sum of 1/Lambda_i over the smooth pieces of an unstable curve near x_D.

    The curve is the straight segment through x_D = (r_D, 0) with slope V
    (default: the unstable slope of a front with curvature 1/tau_max),
    restricted to the cells N >= n0 on both sides of x_D.  Per-cell
    contributions are measured exactly on log-spaced cells up to n_hi (pass
    ``contributions=(Ns, c, pieces)`` to reuse them across several n0).
    """
    V = _default_slope(table) if V is None else V
    if contributions is None:
        contributions = cell_contributions(table, n0, n_hi, cfg, V, n_cells, n_points)
    Ns, c, pieces = contributions
    if pieces < 3:
        return {"n0": n0, "sum": float("nan"), "inconclusive": True, "pieces": pieces}
    out = sum_from_cells(Ns, c, n0)
    out.update({"cells": Ns.tolist(), "per_cell": c.tolist(), "pieces": int(pieces),
                "inconclusive": False, "slope": V})
    return out


def _cell_edge(table, cfg, V, side, n0, refine):
    """Parameter t on the given side where the cell index drops below n0."""
    def cell(t):
        x = _curve_point(table, t, V)
        ex = expansion_factor(table, x, B0=(V + x.K) / math.cos(x.phi), cap=cfg.cap)
        return ex.N

    t = side * 1e-2
    while cell(t) >= n0:
        t *= 2.0
        if abs(t) > 1.0:
            raise RuntimeError("cell index never drops below n0 along the curve")
    inner = t / 2.0
    while cell(inner) < n0:
        inner /= 2.0
        if abs(inner) < 1e-15:
            raise RuntimeError("no cell above n0 found near x_D")
    a, b = inner, t
    for _ in range(refine):
        mid = 0.5 * (a + b)
        if cell(mid) >= n0:
            a = mid
        else:
            b = mid
    return a
