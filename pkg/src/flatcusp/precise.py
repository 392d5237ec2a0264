"""Extended-precision corner series.

Inside the cusp chart consecutive collisions alternate between the walls
z = +-s**beta/beta, and the pair (s_n, v_n) obeys

    s_{n+1} = s_n - (s_{n+1}**beta + s_n**beta) / (beta tan v_n)
    v_{n+1} = v_n + 2 arctan(s_{n+1}**(beta-1))

exactly, so iterating it in multiple precision reproduces the billiard
orbit without the cancellation that limits the double-precision flight
solver deep in the cusp.
"""
import math

import mpmath
import numpy as np

from . import _core
from .corner_series import GAMMA_BAR, ReducedStepError, make_record
from .dynamics import PHI_TOL, PhasePoint, s_floor

DEFAULT_DPS = 30


def _next_s(s, v, beta):
    """Smaller positive root of x - s + c (x**beta + s**beta) with c = cot(v)/beta."""
    c = mpmath.cot(v) / beta
    sb = s ** beta
    if c == 0:
        return s
    f = lambda x: x - s + c * (x ** beta + sb)
    if c > 0:
        if c * sb > s:
            return None
        lo, hi = mpmath.mpf(0), s
    else:
        smax = (1 / (beta * -c)) ** (1 / (beta - 1))
        if smax < s or f(smax) < 0:
            return None
        lo, hi = s, smax
    try:
        return mpmath.findroot(f, (lo, hi), solver="anderson")
    except (ValueError, ZeroDivisionError) as exc:
        raise ReducedStepError(f"no convergence from s={s}, v={v}: {exc}") from exc


def precise_chart_series(s1, v1, beta, eps0, dps=DEFAULT_DPS, cap=1_000_000):
    """(s, v) along the series from the first collision, as mpf lists."""
    with mpmath.workdps(dps):
        beta = mpmath.mpf(beta)
        s, v = mpmath.mpf(s1), mpmath.mpf(v1)
        ss, vs = [s], [v]
        while len(ss) < cap:
            s1_ = _next_s(s, v, beta)
            if s1_ is None or s1_ <= 0 or s1_ > eps0:
                break
            v = v + 2 * mpmath.atan(s1_ ** (beta - 1))
            s = s1_
            ss.append(s)
            vs.append(v)
            if v >= mpmath.pi:
                break
        return ss, vs


def precise_corner_series(table, entry, gamma_bar=GAMMA_BAR, B0=None, dps=DEFAULT_DPS):
    """Corner series entered from ``entry``, iterated in ``dps`` digits.

    The flight into the cusp and the exit flight use the double-precision
    solver; the collisions in between come from the multiple-precision
    chart recursion.  Front curvatures follow the usual transport rule.
    """
    b = table.spec.beta
    if B0 is None:
        B0 = 2.0 * entry.K / math.cos(entry.phi) + 1.0 / table.tau_max
    sf = s_floor(table)
    j, u1, p1, tau0, fl = _core.step(table.packed, entry.arc, entry.u, entry.phi, PHI_TOL, sf)
    if fl & _core.FATAL or not table.is_cusp_arc(j):
        raise ValueError("entry does not fly into the cusp")
    wall0 = table.packed[j, 5]
    g1 = 0.5 * math.pi + wall0 * p1
    alpha1 = math.atan(u1 ** (b - 1.0))
    ss, vs = precise_chart_series(u1, g1 + alpha1, b, table.spec.eps0, dps)
    with mpmath.workdps(dps):
        n = len(ss)
        tau = np.empty(n)
        for k in range(n - 1):
            tau[k] = float((ss[k] ** b + ss[k + 1] ** b) / (b * mpmath.sin(vs[k])))
        alpha = [mpmath.atan(x ** (b - 1)) for x in ss]
        g = np.array([float(vk - ak) for vk, ak in zip(vs, alpha)])
        s = np.array([float(x) for x in ss])
    wall = np.where(np.arange(n) % 2 == 0, wall0, -wall0)
    phi = (g - 0.5 * np.pi) * wall
    arcs = np.where(wall == wall0, j, _other_wall(table, j))
    # exit flight from the last collision
    jn, un, pn, tau_exit, fl_exit = _core.step(table.packed, int(arcs[-1]), float(s[-1]),
                                              float(phi[-1]), PHI_TOL, sf)
    tau[-1] = tau_exit
    K = np.array([_core.profile_curvature(x, b) for x in s])
    B = np.empty(n)
    Bc = 1.0 / (tau0 + 1.0 / B0) + 2.0 * K[0] / math.cos(phi[0])
    for k in range(n):
        B[k] = Bc
        if k + 1 < n:
            Bc = 1.0 / (tau[k] + 1.0 / Bc) + 2.0 * K[k + 1] / math.cos(phi[k + 1])
    exit_state = None if fl_exit & _core.FATAL else PhasePoint.from_arc(table, jn, un, pn)
    return make_record(b, s, phi, wall, tau, B, tau0, B0, gamma_bar, int(fl_exit), exit_state)


def _other_wall(table, j):
    for k, a in enumerate(table.arcs):
        if a.kind == "profile" and k != j:
            return k
    raise ValueError("table has a single cusp wall")
