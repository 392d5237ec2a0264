"""Corner series: long runs of collisions between the two cusp walls.

Angles are measured in the local chart where the cusp point P is the origin
and the walls are z = +-s**beta/beta.  For a collision at chart coordinate s:

    alpha = arctan(s**(beta-1))      slope angle of the wall
    g     = oriented angle between the outgoing velocity and the wall tangent
            pointing towards P (0 < g < pi)
    gamma = pi/2 - |phi| = min(g, pi - g)
    v     = g + alpha                 angle of the velocity with the -s axis

The walls alternate, so g_{n+1} = g_n + alpha_n + alpha_{n+1} exactly, and the
flight is tau_n = (s_n**beta + s_{n+1}**beta) / (beta sin v_n).  While the
series enters (g < pi/2) gamma coincides with g.
"""
from dataclasses import dataclass
import csv
import math

import numpy as np

from . import _core
from .dynamics import PHI_TOL, PhasePoint, s_floor
from .stats import FitError, make_rng, pooled_power_law_fit, power_law_fit

GAMMA_BAR = 0.1
EDGE = 10


class ReducedStepError(RuntimeError):
    """The implicit step of the reduced recursion did not converge."""


@dataclass
class CornerSeriesRecord:
    """Per-collision history of one corner series (arrays indexed from n = 1)."""
    beta: float
    gamma_bar: float
    s: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    B: np.ndarray
    alpha: np.ndarray
    g: np.ndarray
    gamma: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    H: np.ndarray
    r_offset: np.ndarray
    N1: int
    Nbar: int
    N3: int
    tau_entry: float
    B_entry: float
    flags: int
    exit: object = None

    @property
    def N(self):
        return len(self.s)

    @property
    def valid(self):
        return self.N > 0 and not (self.flags & _core.FATAL)

    @property
    def n(self):
        return np.arange(1, self.N + 1)

    @property
    def u(self):
        return self.alpha[:-1] / self.alpha[1:]

    @property
    def w(self):
        return self.v / self.alpha

    @property
    def log_Lambda(self):
        """log of prod_{n=0}^{N} (1 + lambda_n), lambda_0 being the entry flight."""
        ent = math.log1p(self.tau_entry * self.B_entry) if math.isfinite(self.tau_entry) else 0.0
        return ent + float(np.log1p(self.lam).sum())

    def summary(self):
        return {"N": self.N, "N1": self.N1, "Nbar": self.Nbar, "N3": self.N3,
                "valid": bool(self.valid), "flags": int(self.flags), "gamma_bar": self.gamma_bar,
                "alpha1": float(self.alpha[0]) if self.N else None,
                "log_Lambda": self.log_Lambda if self.N else None}

    def write_csv(self, path):
        cols = ["n", "s", "alpha", "gamma", "v", "tau", "lam", "H", "phi"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for k in range(self.N):
                wr.writerow([k + 1] + [repr(float(a[k])) for a in
                            (self.s, self.alpha, self.gamma, self.v, self.tau, self.lam,
                             self.H, self.phi)])


def segments(alpha, gamma, gamma_bar=GAMMA_BAR):
    """(N1, Nbar, N3) as 1-based indices; N1 = 0 when already gamma_1 >= gamma_bar."""
    if len(alpha) == 0:
        return 0, 0, 0
    kbar = int(np.argmin(alpha))
    below = np.nonzero(gamma[: kbar + 1] < gamma_bar)[0]
    above = np.nonzero(gamma[kbar:] > gamma_bar)[0]
    n1 = int(below[-1]) + 1 if len(below) else 0
    n3 = kbar + int(above[-1]) + 1 if len(above) else kbar + 1
    return n1, kbar + 1, n3


def make_record(beta, s, phi, wall_dir, tau, B, tau_entry=float("nan"), B_entry=float("nan"),
                gamma_bar=GAMMA_BAR, flags=0, exit=None):
    """Assemble a record from raw per-collision data.

    wall_dir is the arc direction at each collision: -1 on the upper wall,
    where r grows towards P, +1 on the lower wall.
    """
    s = np.asarray(s, float)
    phi = np.asarray(phi, float)
    alpha = np.arctan(s ** (beta - 1.0))
    g = 0.5 * np.pi + np.asarray(wall_dir, float) * phi
    gamma = 0.5 * np.pi - np.abs(phi)
    r_off = np.array([_core.profile_arclength(x, beta) for x in s])
    N1, Nbar, N3 = segments(alpha, gamma, gamma_bar)
    tau = np.asarray(tau, float)
    B = np.asarray(B, float)
    return CornerSeriesRecord(beta, gamma_bar, s, phi, tau, B, alpha, g, gamma, g + alpha,
                              tau * B, r_off ** beta * np.cos(phi), r_off, N1, Nbar, N3,
                              float(tau_entry), float(B_entry), int(flags), exit)


def run_corner_series(table, entry, gamma_bar=GAMMA_BAR, B0=None, cap=10_000_000):
    """Follow the corner series that ``entry`` flies into, by the exact map.

    ``entry`` is the state just before the series (its next collision lies on
    a cusp wall).  The front seeded there has curvature B0, by default
    2K/cos(phi) + 1/tau_max.
    """
    if B0 is None:
        B0 = 2.0 * entry.K / math.cos(entry.phi) + 1.0 / table.tau_max
    arc, s, phi, tau, B, tau0, j, uj, pj, fl = _core.cusp_series(
        table.packed, entry.arc, entry.u, entry.phi, B0, cap, PHI_TOL, s_floor(table))
    exit_state = None if fl & _core.FATAL else PhasePoint.from_arc(table, j, uj, pj)
    return make_record(table.spec.beta, s, phi, table.packed[arc, 5], tau, B, tau0, B0,
                       gamma_bar, fl, exit_state)


def entry_state(table, offset, delta):
    """Wall state at r_D + offset whose velocity points at P rotated by delta."""
    x = PhasePoint.at(table, table.r_D + offset, 0.0)
    d = math.atan2(-x.y, -x.x) + delta
    dx, dy = math.cos(d), math.sin(d)
    nx, ny = x.normal
    phi = math.atan2(_core.PHI_SIGN * (dx * x.tx + dy * x.ty), dx * nx + dy * ny)
    return PhasePoint.from_arc(table, x.arc, x.u, phi)


def entry_ensemble(table, count, seed, n_range=(1e2, 1e4), offset=0.0, stream=0x0C5):
    """Entries whose series lengths spread log-uniformly over ``n_range``.

    The aiming error delta is drawn log-uniformly; the series length of an
    entry aimed delta away from P scales like 1/delta, with the constant
    calibrated on the table once.  Entries fire from D by default; a start
    offset along the wall makes the ray cut a wall far from P and shortens
    the series drastically.
    """
    rng = make_rng(seed, stream)
    c = _length_constant(table)
    lo, hi = math.log(n_range[0]), math.log(n_range[1])
    N_target = np.exp(rng.uniform(lo, hi, count))
    sign = np.where(rng.uniform(size=count) < 0.5, -1.0, 1.0)
    offs = rng.uniform(-offset, offset, count) if offset else np.zeros(count)
    return [entry_state(table, float(o), float(sg * c / n)) for o, sg, n in zip(offs, sign, N_target)]


def _length_constant(table, delta=1e-3):
    rec = run_corner_series(table, entry_state(table, 0.0, delta))
    return rec.N * delta


def run_ensemble(table, entries, gamma_bar=GAMMA_BAR, B0=None):
    return [run_corner_series(table, e, gamma_bar, B0) for e in entries]


# reduced recursion

@dataclass(frozen=True)
class ReducedState:
    s: float
    v: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"s must be positive, got {self.s}")
        if not 0.0 < self.v < math.pi:
            raise ValueError(f"v must lie in (0, pi), got {self.v}")


def reduced_step(state, beta):
    """Next (s, v): solve s1 = s - (s1**b + s**b)/(b tan v), then v1 = v + 2 alpha_1.

    Returns None when the flight leaves the walls (no admissible root).
    """
    s1, it = _core.reduced_next(state.s, state.v, float(beta))
    if it > 100:
        raise ReducedStepError(f"no convergence from s={state.s}, v={state.v}")
    if s1 < 0:
        return None
    return ReducedState(s1, state.v + 2.0 * math.atan(s1 ** (beta - 1.0)))


def reduced_series(s1, v1, beta, eps0, gamma_bar=GAMMA_BAR, cap=10_000_000):
    """Record of the reduced recursion from (s1, v1), run until s leaves (0, eps0].

    Only the geometric arrays are meaningful (tau from the flight formula, B
    left NaN).
    """
    s, v, status = _core.reduced_series(float(s1), float(v1), float(beta), float(eps0), cap)
    if status == 2:
        raise ReducedStepError(f"reduced recursion failed after {len(s)} steps")
    alpha = np.arctan(s ** (beta - 1.0))
    g = v - alpha
    wall = np.where(np.arange(len(s)) % 2 == 0, -1.0, 1.0)
    phi = (g - 0.5 * np.pi) * wall
    tau = np.full(len(s), np.nan)
    tau[:-1] = (s[:-1] ** beta + s[1:] ** beta) / (beta * np.sin(v[:-1]))
    return make_record(beta, s, phi, wall, tau, np.full(len(s), np.nan), gamma_bar=gamma_bar,
                       flags=_core.FLAG_CAPTURE if status == 1 else 0)


def compare(record, eps0):
    """Reduced recursion seeded at the record's first collision versus the record.

    Reports the largest relative deviation of s_n over the entering period and
    over the whole common range.
    """
    red = reduced_series(record.s[0], record.v[0], record.beta, eps0, record.gamma_bar)
    m = min(red.N, record.N)
    rel = np.abs(red.s[:m] - record.s[:m]) / record.s[:m]
    k = min(record.Nbar, m)
    return {"N_exact": record.N, "N_reduced": red.N, "max_rel_entering": float(rel[:k].max()),
            "max_rel_all": float(rel.max())}


# adiabatic invariant

def adiabatic_invariant(record):
    """H_n and its largest relative deviation from C_N over [N1, Nbar].

    C_N is the median of H_n over the same window; when N1 = 0 the window
    starts at the first collision.
    """
    lo = max(record.N1, 1)
    win = record.H[lo - 1: record.Nbar]
    C = float(np.median(win))
    dev = np.abs(win - C) / C
    return {"H": record.H, "C_N": C, "drift": float(dev.max()), "window": (lo, record.Nbar)}


# ensemble report

def _window(N, lo_pow, hi_pow, last):
    lo = max(math.ceil(N ** lo_pow), EDGE + 1)
    hi = min(math.floor(N ** hi_pow), last, N - EDGE)
    return lo, hi


def _pooled(records, key, lo_pow=0.2, hi_pow=0.8):
    groups = []
    for rec in records:
        lo, hi = _window(rec.N, lo_pow, hi_pow, rec.Nbar)
        if hi - lo < 2:
            continue
        n = np.arange(lo, hi + 1)
        groups.append((n, key(rec)[lo - 1: hi]))
    return pooled_power_law_fit(groups)


def _decade_medians(N, y, edges):
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (N >= a) & (N < b)
        if sel.sum():
            out.append({"decade": [a, b], "count": int(sel.sum()), "median": float(np.median(y[sel]))})
    return out


def lambda_limits(record, lo_pow=0.3, hi_pow=0.7):
    """Medians of n lambda_n (entering) and (N - n + 1) lambda_n (exiting)."""
    N = record.N
    lo, hi = max(math.ceil(N ** lo_pow), 1), math.floor(N ** hi_pow)
    if hi < lo:
        return float("nan"), float("nan")
    n = np.arange(lo, hi + 1)
    ent = np.median(n * record.lam[n - 1])
    ext = np.median(n * record.lam[N - n])
    return float(ent), float(ext)


def asymptotics_report(records, min_records=30):
    """Power-law fits over an ensemble of series spanning several decades of N."""
    recs = [r for r in records if r.valid and r.N > 2 * EDGE + 2]
    if len(recs) < min_records:
        raise FitError(f"{len(recs)} valid records of {len(records)}, need at least {min_records}")
    N = np.array([r.N for r in recs], float)
    fits = {
        "alpha_n": _pooled(recs, lambda r: r.alpha),
        "gamma_n": _pooled(recs, lambda r: r.gamma),
        "tau_n": _pooled(recs, lambda r: r.tau),
        "alpha1_vs_N": power_law_fit(N, np.array([r.alpha[0] for r in recs]), min_points=8),
    }
    ratio = np.array([r.N1 / r.N for r in recs])
    edges = _decade_edges(N)
    ratio_dec = _decade_medians(N, ratio, edges)
    meds = [d["median"] for d in ratio_dec if d["count"] >= 5]
    ratio_var = (max(meds) - min(meds)) / np.mean(meds) if len(meds) > 1 and np.mean(meds) > 0 \
        else float("nan")

    adi = [adiabatic_invariant(r) for r in recs]
    fits["H_median_vs_N"] = power_law_fit(N, np.array([a["C_N"] for a in adi]))
    drift = np.array([a["drift"] for a in adi])
    fits["drift_vs_N"] = power_law_fit(N[drift > 0], drift[drift > 0])
    b = recs[0].beta
    return {
        "beta": b,
        "gamma_bar": recs[0].gamma_bar,
        "records": len(recs),
        "discarded": len(records) - len(recs),
        "N_range": [int(N.min()), int(N.max())],
        "fits": {k: f.to_dict() for k, f in fits.items()},
        "targets": {
            "alpha_n": -(b - 1) / (2 * b - 1), "gamma_n": b / (2 * b - 1),
            "tau_n": -2 * b / (2 * b - 1), "alpha1_vs_N": -b / (2 * b - 1),
            "H_median_vs_N": -b / (b - 1),
        },
        "N1_over_N": {"by_decade": ratio_dec, "variation": float(ratio_var)},
    }


def _decade_edges(N):
    return [10 ** k for k in range(int(math.floor(math.log10(N.min()))),
                                   int(math.ceil(math.log10(N.max()))) + 1)]


def expansion_report(records, min_records=30):
    """Fit of Lambda against N and the limits of n lambda_n, (N - n + 1) lambda_n.

    Lambda is the full product over n = 0..N (entry flight, series
    collisions, exit flight).  The lambda limits are medians over the
    records in the upper half of the N range.
    """
    recs = [r for r in records if r.valid and r.N > 2 * EDGE + 2 and np.isfinite(r.lam).all()]
    if len(recs) < min_records:
        raise FitError(f"{len(recs)} usable records of {len(records)}, need at least {min_records}")
    N = np.array([r.N for r in recs], float)
    logL = np.array([r.log_Lambda for r in recs])
    fit = power_law_fit(N, np.exp(logL))
    lim = np.array([lambda_limits(r) for r in recs])
    big = N >= np.median(N)
    edges = _decade_edges(N)
    b = recs[0].beta
    return {
        "beta": b,
        "records": len(recs),
        "N_range": [int(N.min()), int(N.max())],
        "Lambda_vs_N": fit.to_dict(),
        "n_lambda": {"median_upper_half": float(np.median(lim[big, 0])),
                     "by_decade": _decade_medians(N, lim[:, 0], edges)},
        "exit_lambda": {"median_upper_half": float(np.median(lim[big, 1])),
                        "by_decade": _decade_medians(N, lim[:, 1], edges)},
        "targets": {"Lambda_vs_N": 1 + b / ((2 * b - 1) * (b - 1)),
                    "n_lambda": (b - 1) / (2 * b - 1), "exit_lambda": b / (2 * b - 1)},
    }
