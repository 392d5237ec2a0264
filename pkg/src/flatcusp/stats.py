"""Sampling, power-law fits and Monte Carlo estimators for return statistics."""
from dataclasses import dataclass, asdict, field
import logging
import math

import numpy as np

from . import _core

log = logging.getLogger(__name__)


class FitError(ValueError):
    pass


@dataclass
class FitResult:
    exponent: float
    intercept: float
    stderr: float
    window: tuple
    method: str
    n_points: int
    warning: str = ""

    def to_dict(self):
        d = asdict(self)
        d["window"] = [float(w) for w in self.window]
        return d


def _ls(lx, ly, w=None):
    if w is None:
        w = np.ones_like(lx)
    W = w.sum()
    mx = (w * lx).sum() / W
    my = (w * ly).sum() / W
    sxx = (w * (lx - mx) ** 2).sum()
    if sxx <= 0:
        raise FitError("degenerate abscissae")
    slope = (w * (lx - mx) * (ly - my)).sum() / sxx
    icpt = my - slope * mx
    res = ly - icpt - slope * lx
    dof = max(len(lx) - 2, 1)
    s2 = (w * res**2).sum() / dof
    se = math.sqrt(s2 / sxx)
    return slope, icpt, max(se, np.finfo(float).eps)


def power_law_fit(xs, ys=None, window=None, method="ls", y_err=None, min_points=8):
    """Fit y ~ C x**p.

    method "ls": least squares in log-log coordinates, weighted by the
    relative errors ``y_err/y`` when given.  method "hill": ``xs`` is a raw
    sample and the result is the exponent of its survival function above
    ``window[0]`` (Hill estimator; ``ys`` is ignored).
    """
    xs = np.asarray(xs, dtype=float)
    if method == "hill":
        return hill_tail_fit(xs, window[0] if window else xs.min(), min_points=min_points)
    if method != "ls":
        raise FitError(f"unknown fit method {method!r}")
    ys = np.asarray(ys, dtype=float)
    sel = np.ones(len(xs), dtype=bool)
    if window is not None:
        sel = (xs >= window[0]) & (xs <= window[1])
    x, y = xs[sel], ys[sel]
    if len(x) < min_points:
        raise FitError(f"{len(x)} points in window, need at least {min_points}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitError("nonpositive data in fit window")
    w = None
    if y_err is not None:
        rel = np.asarray(y_err, dtype=float)[sel] / y
        w = 1.0 / np.maximum(rel, 1e-300) ** 2
    slope, icpt, se = _ls(np.log(x), np.log(y), w)
    return FitResult(slope, icpt, se, (float(x.min()), float(x.max())), "ls", int(len(x)))


def pooled_power_law_fit(groups, min_points=8):
    """Common exponent of several series y_i ~ C_i x**p (one intercept each).

    ``groups`` is an iterable of (x, y) arrays already restricted to their
    fit windows.  The intercept reported is the mean of the per-group ones.
    """
    lx, ly, icpts = [], [], []
    for x, y in groups:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0):
            continue
        a, b = np.log(x), np.log(y)
        lx.append(a - a.mean())
        ly.append(b - b.mean())
        icpts.append((a.mean(), b.mean()))
    if not lx:
        raise FitError("no usable groups")
    X = np.concatenate(lx)
    Y = np.concatenate(ly)
    if len(X) < min_points:
        raise FitError(f"{len(X)} pooled points, need at least {min_points}")
    sxx = (X**2).sum()
    slope = (X * Y).sum() / sxx
    dof = max(len(X) - len(lx) - 1, 1)
    se = math.sqrt(((Y - slope * X) ** 2).sum() / dof / sxx)
    icpt = float(np.mean([my - slope * mx for mx, my in icpts]))
    lo = min(math.exp(mx + x.min()) for (mx, _), x in zip(icpts, lx))
    hi = max(math.exp(mx + x.max()) for (mx, _), x in zip(icpts, lx))
    return FitResult(slope, icpt, max(se, np.finfo(float).eps), (lo, hi), "ls-pooled", int(len(X)))


def hill_tail_fit(samples, x_min, min_points=8):
    """Hill estimate of the survival exponent of samples above x_min."""
    x = np.asarray(samples, float)
    x = x[x >= x_min]
    if len(x) < min_points:
        raise FitError(f"{len(x)} tail samples above {x_min}, need at least {min_points}")
    # discrete samples: shift the threshold half a unit down
    xm = x_min - 0.5 if np.all(np.mod(x, 1) == 0) else x_min
    alpha = len(x) / np.log(x / xm).sum()
    return FitResult(-alpha, math.log(len(x)), alpha / math.sqrt(len(x)),
                     (float(x_min), float(x.max())), "hill", int(len(x)))


# random sampling

def make_rng(seed, stream=0):
    """Counter-based generator keyed by (seed, stream)."""
    key = np.array([int(seed) & (2**64 - 1), int(stream) & (2**64 - 1)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class Ensemble:
    """Phase points as parallel arrays (r, phi) with their arc locations."""
    r: np.ndarray
    phi: np.ndarray
    arc: np.ndarray
    u: np.ndarray

    def __len__(self):
        return len(self.r)

    def states(self):
        return np.column_stack([self.arc.astype(float), self.u, self.phi])


def ensemble_from_r_phi(table, r, phi):
    r = np.asarray(r, float) % table.total_length
    arc, u = _core.locate_many(table.packed, table.total_length, r)
    return Ensemble(r, np.asarray(phi, float), arc, u)


def sample_mu(table, count, seed, stream=0):
    """i.i.d. draws from the invariant measure cos(phi) dr dphi / (2|dQ|)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = make_rng(seed, stream)
    r = rng.uniform(0.0, table.total_length, count)
    phi = np.arcsin(2.0 * rng.uniform(0.0, 1.0, count) - 1.0)
    return ensemble_from_r_phi(table, r, phi)


# tails and cells

def log_points(lo, hi, per_decade=10):
    """Distinct integers spaced evenly in log between lo and hi."""
    k = np.arange(math.floor(per_decade * math.log10(lo)), math.ceil(per_decade * math.log10(hi)) + 1)
    pts = np.unique(np.round(10.0 ** (k / per_decade)).astype(np.int64))
    return pts[(pts >= lo) & (pts <= hi)]


@dataclass
class CellStatistics:
    n_M: int
    n_full: int
    cell_counts: dict
    tail_N: np.ndarray
    tail_M: np.ndarray
    tail_M_err: np.ndarray
    tail_full: np.ndarray
    tail_full_err: np.ndarray
    cell_bins: np.ndarray = field(default=None)
    cell_density: np.ndarray = field(default=None)
    cell_bin_counts: np.ndarray = field(default=None)

    def to_dict(self):
        return {
            "n_M": self.n_M,
            "n_full": self.n_full,
            "cell_counts": {str(k): int(v) for k, v in sorted(self.cell_counts.items())},
            "tail": [
                {"N": int(n), "mu_M_R_ge_N": float(a), "stderr_M": float(ea),
                 "mu_R_ge_N": float(b), "stderr_full": float(eb)}
                for n, a, ea, b, eb in zip(self.tail_N, self.tail_M, self.tail_M_err,
                                           self.tail_full, self.tail_full_err)
            ],
        }


def survival(values, points):
    v = np.sort(np.asarray(values))
    n = len(v)
    cnt = n - np.searchsorted(v, points, side="left")
    p = cnt / n
    return p, np.sqrt(p * (1 - p) / n), cnt


def _count_window(points, counts, lo, min_count):
    ok = (points >= lo) & (counts >= min_count)
    if not ok.any():
        return None
    idx = np.nonzero(ok)[0]
    # contiguous run starting at the first admissible point
    end = idx[0]
    while end + 1 < len(ok) and ok[end + 1]:
        end += 1
    return points[idx[0]], points[end]


def tail_and_cells(R_M, cell_M, R_full, n_min=20, min_count=50, per_decade=10):
    """Tail curves and the three exponent fits.

    ``R_M``/``cell_M`` are return times and cell indices of mu_M samples,
    ``R_full`` the (extended) return times of mu samples on the full space.
    """
    R_M = np.asarray(R_M)
    cell_M = np.asarray(cell_M)
    R_full = np.asarray(R_full)
    nmax = int(max(R_M.max(), R_full.max(), 2))
    pts = log_points(1, nmax, per_decade)
    tM, eM, cM = survival(R_M, pts)
    tF, eF, cF = survival(R_full, pts)
    cells = cell_M[cell_M > 1]
    uniq, cnt = np.unique(cells, return_counts=True)
    # log bins for cell density
    edges = np.unique(np.round(10.0 ** (np.arange(0, math.log10(nmax) + 0.2, 1.0 / per_decade))).astype(np.int64))
    h, _ = np.histogram(cells, bins=edges)
    width = np.diff(edges)
    dens = h / width / len(R_M)
    # centre of each integer bin for an N**-2.5-like profile: geometric mean of ends
    centres = np.sqrt(edges[:-1] * (edges[1:] - 1.0).clip(min=edges[:-1]))
    stats = CellStatistics(len(R_M), len(R_full), dict(zip(uniq.tolist(), cnt.tolist())),
                           pts, tM, eM, tF, eF, centres, dens, h)
    fits = {}
    fits["cells_M"] = _fit_with_window(centres, dens, h, n_min, min_count, "cell density")
    fits["tail_M"] = _fit_with_window(pts, tM, cM, n_min, min_count, "mu_M(R>=N)")
    fits["tail_full"] = _fit_with_window(pts, tF, cF, n_min, min_count, "mu(R>=N)")
    try:
        fits["hill_M"] = hill_tail_fit(R_M, n_min)
    except FitError as exc:
        fits["hill_M"] = None
        log.warning("Hill fit skipped: %s", exc)
    return stats, fits


def _fit_with_window(x, y, counts, n_min, min_count, label):
    win = _count_window(x, counts, n_min, min_count)
    if win is None:
        raise FitError(f"{label}: no bin above N={n_min} has {min_count} counts")
    fit = power_law_fit(x, y, window=win)
    decades = math.log10(win[1] / win[0])
    if decades < 5:
        fit.warning = f"window spans {decades:.2f} decades (< 5)"
    return fit


# transitions

def transition_stats(pairs, beta, band=(100, 300), K0=10, n_sub=3, min_count=20):
    """Support bounds and conditional cell law for consecutive cells (n, m).

    ``pairs`` is an (k, 2) integer array of source cell n and target cell m
    (m = 1 when the next excursion is not a long corner series).
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n, m = pairs[:, 0], pairs[:, 1]
    up = beta / (beta - 1.0)
    low = (beta - 1.0) / beta
    out = {"n_pairs": int(len(pairs)), "band": list(band)}
    long_pairs = (n > K0) & (m > K0)
    ratio_up = m[long_pairs] / n[long_pairs] ** up
    ratio_low = m[long_pairs] / n[long_pairs] ** low
    out["c2_all"] = float(ratio_up.max()) if ratio_up.size else float("nan")
    out["c1_all"] = float(ratio_low.min()) if ratio_low.size else float("nan")
    # per sub-band support constants
    edges = np.geomspace(band[0], band[1], n_sub + 1)
    sub = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = long_pairs & (n >= a) & (n < b)
        sub.append({
            "n_range": [float(a), float(b)],
            "count": int(sel.sum()),
            "c2": float((m[sel] / n[sel] ** up).max()) if sel.any() else float("nan"),
            "c1": float((m[sel] / n[sel] ** low).min()) if sel.any() else float("nan"),
            "sparse": bool(sel.sum() < min_count),
        })
    out["sub_bands"] = sub
    c2s = np.array([s["c2"] for s in sub if not s["sparse"]])
    out["c2_spread"] = float(c2s.max() / c2s.min()) if c2s.size > 1 else float("nan")
    # growth of c2 with n on equal-count subsamples (a sample maximum grows with
    # the count, so sub-bands are thinned to the smallest one first)
    dense = [(a, b) for (a, b), s_ in zip(zip(edges[:-1], edges[1:]), sub) if not s_["sparse"]]
    if len(dense) > 1:
        k = min(int((long_pairs & (n >= a) & (n < b)).sum()) for a, b in dense)
        c2k = []
        for a, b in dense:
            r = m[long_pairs & (n >= a) & (n < b)] / n[long_pairs & (n >= a) & (n < b)] ** up
            c2k.append(float(r[:k].max()))
        out["c2_matched"] = c2k
        out["c2_growth"] = float(max(c2k[1:]) / c2k[0])
    else:
        out["c2_matched"], out["c2_growth"] = [], float("nan")
    # conditional law of the next cell given a source in the band
    src = (n >= band[0]) & (n <= band[1])
    nsrc = int(src.sum())
    out["n_sources"] = nsrc
    target = m[src & (m > K0)]
    out["n_long_targets"] = int(target.size)
    fit = None
    if target.size:
        nb = math.sqrt(band[0] * band[1])
        lo = max(K0 + 1, int(math.ceil(2.0 * nb**low)))
        hi = int(target.max())
        edges = np.unique(np.round(np.geomspace(lo, max(hi, lo + 1), 24)).astype(np.int64))
        h, _ = np.histogram(target, bins=edges)
        dens = h / np.diff(edges) / nsrc
        centres = np.sqrt(edges[:-1] * (edges[1:] - 1.0).clip(min=edges[:-1]))
        win = _count_window(centres, h, lo, min_count)
        if win is not None:
            try:
                fit = power_law_fit(centres, dens, window=win, min_points=5)
            except FitError as exc:
                log.warning("transition fit failed: %s", exc)
        out["target_density"] = [[float(c), float(d), int(k)] for c, d, k in zip(centres, dens, h)]
    out["m_exponent"] = fit.to_dict() if fit else None
    # escape into much longer cells
    e = 1.0 / (2.0 * beta)
    esc = []
    esc_edges = np.geomspace(max(K0 + 1, 20), max(band[1], 40), 5)
    for a, b in zip(esc_edges[:-1], esc_edges[1:]):
        sel = (n >= a) & (n < b)
        if sel.sum() == 0:
            continue
        thr = n[sel] ** (low + e)
        esc.append([float(math.sqrt(a * b)), float(np.mean(m[sel] >= thr)), int(sel.sum())])
    out["escape"] = esc
    return out


# correlations

@dataclass
class TrigTerm:
    coef: float
    kr: int = 0
    kphi: int = 0
    phase: float = 0.0


@dataclass
class Observable:
    """Trigonometric polynomial in r/|dQ| and phi."""
    terms: list

    def __call__(self, r, phi, total_length):
        r = np.asarray(r, float)
        out = np.zeros_like(r)
        for t in self.terms:
            out += t.coef * np.cos(2.0 * np.pi * t.kr * r / total_length + t.kphi * np.asarray(phi) + t.phase)
        return out

    @classmethod
    def cos_r(cls, k=1):
        return cls([TrigTerm(1.0, kr=k)])

    @classmethod
    def constant(cls, c=1.0):
        return cls([TrigTerm(c)])


@dataclass
class ObservablePair:
    f: Observable
    g: Observable


def correlation_estimate(fv, gv, n_max, block=None, n_boot=200, seed=0):
    """Birkhoff estimate of C_n = <f o F^n, g> - <f><g> with block bootstrap.

    Returns (C, stderr) for n = 0..n_max.
    """
    fv = np.ascontiguousarray(fv, dtype=float)
    gv = np.ascontiguousarray(gv, dtype=float)
    if block is None:
        block = 10 * n_max
    S, F, G = _core.lagged_block_sums(fv, gv, n_max, block)
    nb = S.shape[0]
    if nb < 2:
        raise ValueError("orbit too short for the block length")

    def est(Ss, Fs, Gs, L):
        return Ss / L - (Fs / L) * (Gs / L)

    L = nb * block
    C = est(S.sum(0), F.sum(0), G.sum(0), L)
    rng = make_rng(seed, 0xB007)
    boots = np.empty((n_boot, n_max + 1))
    for b in range(n_boot):
        idx = rng.integers(0, nb, nb)
        boots[b] = est(S[idx].sum(0), F[idx].sum(0), G[idx].sum(0), L)
    return C, boots.std(axis=0, ddof=1)


def envelope(values):
    """Non-increasing upper envelope: max of |values| over later lags."""
    a = np.abs(np.asarray(values))
    return np.maximum.accumulate(a[::-1])[::-1]


def correlation_curve(table, pair, n_max, orbit_length, seed, burn_in=10_000, n_boot=200,
                      chunk=1_000_000, phi_tol=1e-9):
    """C_n along one long orbit started from a mu-distributed point."""
    if n_max > 200:
        raise ValueError("n_max must not exceed 200")
    from .dynamics import s_floor
    sf = s_floor(table)
    L = orbit_length + n_max
    rs = np.empty(L)
    ps = np.empty(L)
    filled = 0
    restarts = 0
    stream = 0
    state = None
    while filled < L:
        if state is None:
            e = sample_mu(table, 1, seed, stream=stream)
            stream += 1
            i, u, phi = int(e.arc[0]), float(e.u[0]), float(e.phi[0])
            r_, p_, cnt, flag, i, u, phi = _core.orbit_r(table.packed, i, u, phi, burn_in, phi_tol, sf)
            if flag & _core.FATAL:
                restarts += 1
                continue
            state = (i, u, phi)
        want = min(chunk, L - filled)
        r_, p_, cnt, flag, i, u, phi = _core.orbit_r(table.packed, *state, want, phi_tol, sf)
        rs[filled:filled + cnt] = r_[:cnt]
        ps[filled:filled + cnt] = p_[:cnt]
        filled += cnt
        if flag & _core.FATAL:
            restarts += 1
            state = None
        else:
            state = (i, u, phi)
    fv = pair.f(rs, ps, table.total_length)
    gv = fv if pair.g is pair.f else pair.g(rs, ps, table.total_length)
    C, err = correlation_estimate(fv, gv, n_max, 10 * n_max, n_boot, seed)
    return {"n": np.arange(n_max + 1), "C": C, "stderr": err, "restarts": restarts,
            "orbit_length": orbit_length}


def envelope_fit(C, n_lo=10, n_hi=100):
    env = envelope(C)
    n = np.arange(len(C))
    return power_law_fit(n, env, window=(n_lo, n_hi))


def conditional_return_scaling(n, R_next, lo=20, hi=None, per_decade=5, min_count=20):
    """Mean return time of F x given the cell n of x, binned in n, with a power fit.

    Reported without any prior on the exponent.
    """
    n = np.asarray(n)
    R_next = np.asarray(R_next, float)
    hi = int(n.max()) if hi is None else hi
    edges = log_points(lo, max(hi, lo + 1), per_decade)
    rows = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (n >= a) & (n < b)
        if sel.sum() >= min_count:
            rows.append((math.sqrt(a * (b - 1)), float(R_next[sel].mean()), int(sel.sum())))
    fit = None
    if len(rows) >= 4:
        x, y, _ = map(np.array, zip(*rows))
        try:
            fit = power_law_fit(x, y, min_points=4)
        except FitError as exc:
            log.warning("conditional return fit failed: %s", exc)
    return {"bins": [list(r) for r in rows], "fit": fit.to_dict() if fit else None}
