"""Compiled inner loops for the billiard map.

Everything here is a pure function of a packed arc table (see
``geometry.Table.packed``) and plain floats, so it can be jitted with numba and
shared between processes.  The Python-facing modules wrap these kernels.

Packed arc row layout (float64, one row per boundary arc)::

    0 kind        (0 = circle, 1 = cusp profile)
    1 offset      arclength of the arc start
    2 length      arclength of the arc
    3 obstacle    id of the convex obstacle the arc belongs to
    circle : 4 cx, 5 cy, 6 radius, 7 theta_start, 8 span   (clockwise)
    profile: 4 sign (+1 upper / -1 lower), 5 dir (+1 if r grows with s),
             6 beta, 7 eps0, 8 unused
"""
import math

import numpy as np
from numba import njit

CIRCLE = 0
PROFILE = 1

# velocity = cos(phi) n + PHI_SIGN sin(phi) t, with t the unit tangent along
# increasing r and n the inward normal
PHI_SIGN = 1.0

FLAG_OK = 0
FLAG_GRAZING = 1
FLAG_CAPTURE = 2
FLAG_NOHIT = 4
FLAG_CENSORED = 8
FATAL = FLAG_CAPTURE | FLAG_NOHIT

TWO_PI = 2.0 * math.pi
EPS = 2.220446049250313e-16
HALF_PI = 0.5 * math.pi


@njit(cache=True)
def profile_arclength(s, beta):
    """Arclength of z = s**beta/beta from 0 to s (binomial series, exact to ~1e-17)."""
    if s <= 0.0:
        return 0.0
    p = 2.0 * beta - 2.0
    w = s ** p
    total = s
    coef = 1.0
    wk = 1.0
    for k in range(1, 4000):
        coef *= (0.5 - (k - 1)) / k
        wk *= w
        term = coef * s * wk / (k * p + 1.0)
        total += term
        if abs(term) < 1e-18 * total:
            break
    return total


@njit(cache=True)
def profile_s_from_arclength(ell, beta):
    if ell <= 0.0:
        return 0.0
    s = ell
    for _ in range(60):
        g = profile_arclength(s, beta) - ell
        ds = g / math.sqrt(1.0 + s ** (2.0 * beta - 2.0))
        s -= ds
        if s < 0.0:
            s = 0.0
        if abs(ds) <= 1e-16 * max(s, 1e-300):
            break
    return s


@njit(cache=True)
def profile_curvature(s, beta):
    if s <= 0.0:
        return 0.0
    return (beta - 1.0) * s ** (beta - 2.0) / (1.0 + s ** (2.0 * beta - 2.0)) ** 1.5


@njit(cache=True)
def arc_frame(arcs, i, u):
    """Position, unit tangent (along increasing r) and curvature at arc parameter u."""
    if arcs[i, 0] == CIRCLE:
        cx = arcs[i, 4]
        cy = arcs[i, 5]
        rho = arcs[i, 6]
        c = math.cos(u)
        s = math.sin(u)
        return cx + rho * c, cy + rho * s, s, -c, 1.0 / rho
    sign = arcs[i, 4]
    dr = arcs[i, 5]
    beta = arcs[i, 6]
    if u <= 0.0:
        return 0.0, 0.0, dr, 0.0, 0.0
    sp = u ** (beta - 1.0)
    nrm = math.sqrt(1.0 + sp * sp)
    return (u, sign * u * sp / beta, dr / nrm, dr * sign * sp / nrm,
            profile_curvature(u, beta))


@njit(cache=True)
def r_of(arcs, i, u):
    off = arcs[i, 1]
    length = arcs[i, 2]
    if arcs[i, 0] == CIRCLE:
        d = (arcs[i, 7] - u) % TWO_PI
        if d > arcs[i, 8] + 1e-9:
            # parameter marginally past the start; wrap toward the start
            d = d - TWO_PI if d > math.pi else d
        return off + arcs[i, 6] * d
    ell = profile_arclength(u, arcs[i, 6])
    if arcs[i, 5] > 0:
        return off + ell
    return off + length - ell


@njit(cache=True)
def locate(arcs, total, r):
    """Arc index and arc parameter for boundary coordinate r."""
    r = r % total
    n = arcs.shape[0]
    i = n - 1
    for k in range(n):
        if r < arcs[k, 1] + arcs[k, 2]:
            i = k
            break
    local = r - arcs[i, 1]
    if local < 0.0:
        local = 0.0
    if arcs[i, 0] == CIRCLE:
        return i, arcs[i, 7] - local / arcs[i, 6]
    length = arcs[i, 2]
    if arcs[i, 5] > 0:
        ell = local
    else:
        ell = length - local
    return i, profile_s_from_arclength(ell, arcs[i, 6])


@njit(cache=True)
def _circle_hit(arcs, i, x0, y0, dx, dy):
    cx = arcs[i, 4]
    cy = arcs[i, 5]
    rho = arcs[i, 6]
    px = x0 - cx
    py = y0 - cy
    b = px * dx + py * dy
    cc = px * px + py * py - rho * rho
    if b >= 0.0:
        return -1.0, 0.0
    disc = b * b - cc
    # within rounding of a double root the tangency is undecidable: snap to it
    if abs(disc) <= 4.0 * EPS * (px * px + py * py + rho * rho):
        disc = 0.0
    if disc < 0.0:
        return -1.0, 0.0
    q = -b + math.sqrt(disc)
    t = cc / q
    if t <= 0.0:
        return -1.0, 0.0
    th = math.atan2(py + t * dy, px + t * dx)
    d = (arcs[i, 7] - th) % TWO_PI
    span = arcs[i, 8]
    if d > span + 1e-12:
        if TWO_PI - d < 1e-12:
            d = 0.0
        else:
            return -1.0, 0.0
    return t, th


@njit(cache=True)
def _profile_f(sign, beta, x0, y0, dx, dy, t):
    x = x0 + t * dx
    if x < 0.0:
        x = 0.0
    return sign * (y0 + t * dy) - x ** beta / beta


@njit(cache=True)
def _profile_df(sign, beta, x0, dx, dy, t):
    x = x0 + t * dx
    if x < 0.0:
        x = 0.0
    return sign * dy - x ** (beta - 1.0) * dx


@njit(cache=True)
def _profile_hit(arcs, i, x0, y0, dx, dy):
    """First root of the concave gap function along the ray, or -1."""
    sign = arcs[i, 4]
    beta = arcs[i, 6]
    eps0 = arcs[i, 7]
    if abs(dx) < 1e-300:
        if x0 < 0.0 or x0 > eps0:
            return -1.0, 0.0
        if sign * dy <= 0.0:
            return -1.0, 0.0
        t = (x0 ** beta / beta - sign * y0) / (sign * dy)
        if t <= 0.0:
            return -1.0, 0.0
        return t, x0
    t1 = -x0 / dx
    t2 = (eps0 - x0) / dx
    ta = max(0.0, min(t1, t2))
    tb = max(t1, t2)
    if tb <= ta:
        return -1.0, 0.0
    fa = _profile_f(sign, beta, x0, y0, dx, dy, ta)
    if fa >= 0.0:
        return -1.0, 0.0
    q = sign * dy / dx
    if q > 0.0:
        tp = (q ** (1.0 / (beta - 1.0)) - x0) / dx
        if tp < ta:
            tp = ta
        elif tp > tb:
            tp = tb
    elif dx > 0.0:
        return -1.0, 0.0
    else:
        tp = tb
    fp = _profile_f(sign, beta, x0, y0, dx, dy, tp)
    if fp < 0.0:
        return -1.0, 0.0
    lo = ta
    hi = tp
    t = 0.5 * (lo + hi)
    # safeguarded Newton on the bracket [lo, hi] with f(lo) < 0 <= f(hi)
    for _ in range(85):
        f = _profile_f(sign, beta, x0, y0, dx, dy, t)
        if f < 0.0:
            lo = t
        else:
            hi = t
        df = _profile_df(sign, beta, x0, dx, dy, t)
        tn = t - f / df if df != 0.0 else 0.5 * (lo + hi)
        if not (lo < tn < hi):
            tn = 0.5 * (lo + hi)
        if abs(tn - t) <= 4e-16 * abs(t) or hi - lo <= 4e-16 * hi:
            t = tn
            break
        t = tn
    x = x0 + t * dx
    if x < 0.0:
        x = 0.0
    if x > eps0:
        x = eps0
    return t, x


@njit(cache=True)
def flight(arcs, start_arc, x0, y0, dx, dy):
    """First boundary hit along the ray; returns (arc, parameter, free path)."""
    best_t = 1e300
    best_i = -1
    best_u = 0.0
    own = arcs[start_arc, 3] if start_arc >= 0 else -1.0
    for i in range(arcs.shape[0]):
        if arcs[i, 3] == own:
            continue
        if arcs[i, 0] == CIRCLE:
            t, u = _circle_hit(arcs, i, x0, y0, dx, dy)
        else:
            t, u = _profile_hit(arcs, i, x0, y0, dx, dy)
        if t > 0.0 and t < best_t:
            best_t = t
            best_i = i
            best_u = u
    return best_i, best_u, best_t


@njit(cache=True)
def direction(arcs, i, u, phi):
    x, y, tx, ty, k = arc_frame(arcs, i, u)
    nx = -ty
    ny = tx
    c = math.cos(phi)
    s = PHI_SIGN * math.sin(phi)
    return x, y, c * nx + s * tx, c * ny + s * ty


@njit(cache=True)
def reflect_angle(arcs, i, u, dx, dy):
    """Post-collision angle for incoming direction (dx, dy) at (i, u)."""
    x, y, tx, ty, k = arc_frame(arcs, i, u)
    nx = -ty
    ny = tx
    dn = dx * nx + dy * ny
    ox = dx - 2.0 * dn * nx
    oy = dy - 2.0 * dn * ny
    phi = math.atan2(PHI_SIGN * (ox * tx + oy * ty), ox * nx + oy * ny)
    return min(max(phi, -HALF_PI), HALF_PI), ox, oy


@njit(cache=True)
def step(arcs, i, u, phi, phi_tol, s_floor):
    """One application of the billiard map.

    Returns (arc, u, phi, tau, flags); arc == -1 signals a failed flight.
    """
    x, y, dx, dy = direction(arcs, i, u, phi)
    j, uj, tau = flight(arcs, i, x, y, dx, dy)
    if j < 0:
        return -1, 0.0, 0.0, 0.0, FLAG_NOHIT
    phi1, ox, oy = reflect_angle(arcs, j, uj, dx, dy)
    flags = FLAG_OK
    if abs(phi1) > 0.5 * math.pi - phi_tol:
        flags |= FLAG_GRAZING
    if arcs[j, 0] == PROFILE and uj < s_floor:
        flags |= FLAG_CAPTURE
    return j, uj, phi1, tau, flags


@njit(cache=True)
def orbit(arcs, i, u, phi, n, phi_tol, s_floor):
    """Iterate n collisions; stops early on a flagged landing.

    Arrays hold the starting state at index 0; ``count`` is the number of
    valid states written.
    """
    arc_out = np.empty(n + 1, np.int64)
    u_out = np.empty(n + 1)
    phi_out = np.empty(n + 1)
    tau_out = np.zeros(n + 1)
    arc_out[0] = i
    u_out[0] = u
    phi_out[0] = phi
    count = 1
    flag = 0
    for k in range(n):
        j, uj, pj, tau, fl = step(arcs, i, u, phi, phi_tol, s_floor)
        tau_out[k] = tau
        if j < 0:
            flag = fl
            break
        arc_out[k + 1] = j
        u_out[k + 1] = uj
        phi_out[k + 1] = pj
        count += 1
        flag |= fl
        if fl & FATAL:
            break
        i, u, phi = j, uj, pj
    return arc_out, u_out, phi_out, tau_out, count, flag


@njit(cache=True)
def is_cusp(arcs, i):
    return arcs[i, 0] == PROFILE


@njit(cache=True)
def run_forward(arcs, i, u, phi, cap, phi_tol, s_floor):
    """Count consecutive cusp collisions starting with the given state.

    Returns (count, arc, u, phi, flags, tau_sum) where the state is the first
    one after the run (count == 0 if the given state is not in the cusp).
    """
    count = 0
    flags = 0
    while count < cap and arcs[i, 0] == PROFILE:
        count += 1
        j, uj, pj, tau, fl = step(arcs, i, u, phi, phi_tol, s_floor)
        flags |= fl
        if j < 0:
            break
        i, u, phi = j, uj, pj
        if fl & FATAL:
            break
    return count, i, u, phi, flags


@njit(cache=True)
def run_membership(arcs, i, u, phi, K0, cap, phi_tol, s_floor):
    """Decide whether a cusp state belongs to a run longer than K0.

    Returns (long_run, forward, flags): forward counts the state itself and is
    capped at ``cap``; the backward part is followed only as far as needed.
    """
    if arcs[i, 0] != PROFILE:
        return False, 0, 0
    fwd, _, _, _, f1 = run_forward(arcs, i, u, phi, cap, phi_tol, s_floor)
    if f1 & FATAL:
        return False, fwd, f1
    if fwd > K0:
        return True, fwd, f1
    bwd, _, _, _, f2 = run_forward(arcs, i, u, -phi, K0 + 2 - fwd, phi_tol, s_floor)
    return fwd + bwd - 1 > K0, fwd, f1 | f2


@njit(cache=True)
def wavefront(B, tau, K1, cos1):
    """Transport curvature B over a flight of length tau and reflect."""
    bm = 1.0 / (tau + 1.0 / B)
    return bm, bm + 2.0 * K1 / cos1


@njit(cache=True)
def excursion(arcs, i, u, phi, B0, K0, cap, phi_tol, s_floor):
    """Return-map excursion from a state of the induced set.

    Returns (R, cell, arc, u, phi, log_Lambda, flags).  ``cell`` is the length
    of the corner series visited (1 when none), and log_Lambda the p-metric log
    expansion of a front seeded with curvature B0.
    """
    start_in_cusp = arcs[i, 0] == PROFILE
    j, uj, pj, tau, fl = step(arcs, i, u, phi, phi_tol, s_floor)
    flags = fl
    if fl & FATAL:
        return 0, 0, j, uj, pj, 0.0, flags
    logL = math.log1p(tau * B0)
    if start_in_cusp or arcs[j, 0] != PROFILE:
        return 1, 1, j, uj, pj, logL, flags
    j1, u1, p1, logL1 = j, uj, pj, logL
    x1, y1, tx, ty, K1 = arc_frame(arcs, j, uj)
    bm, B = wavefront(B0, tau, K1, math.cos(pj))
    n = 0
    i, u, phi = j, uj, pj
    while arcs[i, 0] == PROFILE:
        n += 1
        if n > cap:
            return 0, n, i, u, phi, logL, flags | FLAG_CAPTURE
        j, uj, pj, tau, fl = step(arcs, i, u, phi, phi_tol, s_floor)
        flags |= fl
        if fl & FATAL:
            return 0, n, j, uj, pj, logL, flags
        logL += math.log1p(tau * B)
        x1, y1, tx, ty, K1 = arc_frame(arcs, j, uj)
        bm, B = wavefront(B, tau, K1, math.cos(pj))
        i, u, phi = j, uj, pj
    if n <= K0:
        # a short run belongs to the induced set, so the return is immediate
        return 1, 1, j1, u1, p1, logL1, flags
    return n + 1, n, i, u, phi, logL, flags


@njit(cache=True)
def seed_B(arcs, i, u, phi, tau_max):
    x, y, tx, ty, K = arc_frame(arcs, i, u)
    return 2.0 * K / math.cos(phi) + 1.0 / tau_max


@njit(cache=True)
def sample_returns(arcs, states, K0, cap, full_cap, phi_tol, s_floor, tau_max):
    """Classify mu-distributed states.

    For every state: in_M flag, extended return time R on the full space,
    cell index (M states only), log expansion and flags.  Excursions from M
    are followed up to ``cap`` collisions, the remaining run of a state
    outside M up to ``full_cap``; longer ones carry FLAG_CENSORED.
    """
    n = states.shape[0]
    inM = np.zeros(n, np.bool_)
    R = np.zeros(n, np.int64)
    cell = np.zeros(n, np.int64)
    logL = np.zeros(n)
    flags = np.zeros(n, np.int64)
    for k in range(n):
        i = int(states[k, 0])
        u = states[k, 1]
        phi = states[k, 2]
        if arcs[i, 0] == PROFILE:
            long_run, fwd, fl = run_membership(arcs, i, u, phi, K0, max(full_cap, K0 + 1),
                                               phi_tol, s_floor)
            if fl & FATAL:
                flags[k] = fl
                continue
            if long_run:
                R[k] = fwd
                if fwd >= full_cap:
                    flags[k] = FLAG_CENSORED
                continue
        inM[k] = True
        B0 = seed_B(arcs, i, u, phi, tau_max)
        r, c, j, uj, pj, lg, fl = excursion(arcs, i, u, phi, B0, K0, cap,
                                            phi_tol, s_floor)
        if fl & FLAG_CAPTURE and c > cap:
            # run longer than the cap: censored rather than lost
            fl = (fl & ~FLAG_CAPTURE) | FLAG_CENSORED
            r = cap + 1
            c = cap
        R[k] = r
        cell[k] = c
        logL[k] = lg
        flags[k] = fl
    return inM, R, cell, logL, flags


@njit(cache=True)
def induced_orbit(arcs, i, u, phi, n_returns, K0, cap, phi_tol, s_floor):
    """Orbit of the induced map from a state in M: (R, cell, r) per return."""
    Rs = np.zeros(n_returns, np.int64)
    cells = np.zeros(n_returns, np.int64)
    rs = np.zeros(n_returns)
    count = 0
    flag = 0
    for k in range(n_returns):
        r, c, j, uj, pj, lg, fl = excursion(arcs, i, u, phi, 1.0, K0, cap,
                                                 phi_tol, s_floor)
        flag |= fl
        if fl & FATAL:
            break
        Rs[k] = r
        cells[k] = c
        rs[k] = r_of(arcs, i, u)
        count += 1
        i, u, phi = j, uj, pj
    return Rs, cells, rs, count, flag, i, u, phi


@njit(cache=True)
def orbit_r(arcs, i, u, phi, n, phi_tol, s_floor):
    """Boundary coordinates and angles along an orbit (for Birkhoff sums)."""
    r_out = np.empty(n)
    phi_out = np.empty(n)
    count = 0
    flag = 0
    for k in range(n):
        r_out[k] = r_of(arcs, i, u)
        phi_out[k] = phi
        count += 1
        j, uj, pj, tau, fl = step(arcs, i, u, phi, phi_tol, s_floor)
        flag |= fl
        if fl & FATAL:
            break
        i, u, phi = j, uj, pj
    return r_out, phi_out, count, flag, i, u, phi


@njit(cache=True)
def _grow(a, n):
    b = np.empty(2 * n, a.dtype)
    b[:n] = a[:n]
    return b


@njit(cache=True)
def cusp_series(arcs, i, u, phi, B0, cap, phi_tol, s_floor):
    """Follow the cusp run that the state flies into.

    Returns arrays over the run's collisions (arc, s, phi, tau_out, B) plus
    (entry tau, exit arc, exit u, exit phi, flags).  tau_out[k] is the flight
    leaving collision k (the last one being the exit flight) and B[k] the
    post-collision front curvature there.
    """
    size = 256
    arc_out = np.empty(size, np.int64)
    s_out = np.empty(size)
    phi_out = np.empty(size)
    tau_out = np.empty(size)
    B_out = np.empty(size)
    j, uj, pj, tau0, fl = step(arcs, i, u, phi, phi_tol, s_floor)
    flags = fl
    n = 0
    if fl & FATAL or arcs[j, 0] != PROFILE:
        return arc_out[:0], s_out[:0], phi_out[:0], tau_out[:0], B_out[:0], tau0, j, uj, pj, flags
    x1, y1, tx, ty, K1 = arc_frame(arcs, j, uj)
    bm, B = wavefront(B0, tau0, K1, math.cos(pj))
    i, u, phi = j, uj, pj
    while arcs[i, 0] == PROFILE:
        if n >= cap:
            flags |= FLAG_CAPTURE
            break
        if n == size:
            arc_out = _grow(arc_out, size)
            s_out = _grow(s_out, size)
            phi_out = _grow(phi_out, size)
            tau_out = _grow(tau_out, size)
            B_out = _grow(B_out, size)
            size *= 2
        arc_out[n] = i
        s_out[n] = u
        phi_out[n] = phi
        B_out[n] = B
        j, uj, pj, tau, fl = step(arcs, i, u, phi, phi_tol, s_floor)
        tau_out[n] = tau
        n += 1
        flags |= fl
        if fl & FATAL:
            break
        x1, y1, tx, ty, K1 = arc_frame(arcs, j, uj)
        bm, B = wavefront(B, tau, K1, math.cos(pj))
        i, u, phi = j, uj, pj
    return arc_out[:n], s_out[:n], phi_out[:n], tau_out[:n], B_out[:n], tau0, i, u, phi, flags


@njit(cache=True)
def reduced_next(s, v, beta):
    """Solve s1 = s - (s1**beta + s**beta)/(beta tan v) for the next s.

    Returns (s1, iterations); s1 < 0 means no admissible root (the orbit
    leaves), iterations > 100 means the solve did not converge.
    """
    c = math.cos(v) / (beta * math.sin(v))
    sb = s ** beta
    if c == 0.0:
        return s, 0
    if c > 0.0:
        # no root in (0, s] when the flight would pass beyond the flat point
        if c * sb > s:
            return -1.0, 0
        lo = 0.0
        hi = s
    else:
        # s1 - |c| s1**beta is maximal at smax; the physical root is the
        # smaller one, bracketed by [s, smax]
        smax = (1.0 / (beta * -c)) ** (1.0 / (beta - 1.0))
        if smax < s or smax - s + c * (smax ** beta + sb) < 0.0:
            return -1.0, 0
        lo = s
        hi = smax
    x = s - 2.0 * c * sb
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    for it in range(1, 101):
        f = x - s + c * (x ** beta + sb)
        if f == 0.0:
            return x, it
        if f < 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4.0 * EPS * hi:
            return x, it
        df = 1.0 + c * beta * x ** (beta - 1.0)
        xn = x - f / df
        if not (lo <= xn <= hi):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-15 * abs(xn):
            return xn, it
        x = xn
    return x, 101


@njit(cache=True)
def reduced_series(s1, v1, beta, eps0, cap):
    """Iterate the reduced recursion from (s1, v1) until the orbit leaves.

    status: 0 left the chart, 1 hit the cap, 2 a step failed to converge.
    """
    size = 256
    s_out = np.empty(size)
    v_out = np.empty(size)
    s_out[0] = s1
    v_out[0] = v1
    n = 1
    status = 0
    s = s1
    v = v1
    while True:
        if n >= cap:
            status = 1
            break
        s_next, it = reduced_next(s, v, beta)
        if it > 100:
            status = 2
            break
        if s_next < 0.0 or s_next > eps0:
            break
        v = v + 2.0 * math.atan(s_next ** (beta - 1.0))
        s = s_next
        if n == size:
            s_out = _grow(s_out, size)
            v_out = _grow(v_out, size)
            size *= 2
        s_out[n] = s
        v_out[n] = v
        n += 1
        if v >= math.pi:
            # the velocity points away from both walls
            break
    return s_out[:n], v_out[:n], status


@njit(cache=True)
def locate_many(arcs, total, r):
    n = r.shape[0]
    arc = np.empty(n, np.int64)
    u = np.empty(n)
    for k in range(n):
        arc[k], u[k] = locate(arcs, total, r[k])
    return arc, u


@njit(cache=True)
def lagged_block_sums(f, g, n_max, block):
    """Per-block sums of f[k+n] g[k] for n = 0..n_max (k ranging over the block).

    Only k with k + n_max < len(f) are used, so every block sees the same
    lags.  Also returns per-block sums of f[k+n] and g[k].
    """
    L = f.shape[0] - n_max
    nb = L // block
    S = np.zeros((nb, n_max + 1))
    F = np.zeros((nb, n_max + 1))
    G = np.zeros(nb)
    for b in range(nb):
        k0 = b * block
        for k in range(k0, k0 + block):
            gk = g[k]
            G[b] += gk
            for n in range(n_max + 1):
                S[b, n] += f[k + n] * gk
                F[b, n] += f[k + n]
    return S, F, G
