"""Cusped dispersing table: boundary arcs, arclength atlas and invariant checks.

The flat point P sits at the origin and the cusp opens towards +x.  The two
walls near P are the graphs z = +s**beta/beta and z = -s**beta/beta on
[0, eps0].  Each wall continues tangentially into a circular join arc, and the
two join arcs are closed off by a circular wall centred on the x-axis.  The
join arcs meet that wall transversally, so the table has two ordinary
corners besides the cusp.

Boundary coordinate r runs with the table on the left, starting at the lower
corner: wall, upper join, upper profile (s decreasing to 0), lower profile,
lower join.
"""
from dataclasses import dataclass, field, asdict
import math

import numpy as np
from scipy.integrate import quad

from . import _core


class GeometryError(ValueError):
    """Raised when a table cannot be built or a chart query is out of range."""


@dataclass(frozen=True)
class CuspProfile:
    beta: float
    eps0: float
    orientation: str = "upper"

    def __post_init__(self):
        if not self.beta > 2.0:
            raise GeometryError(f"beta must exceed 2 (got {self.beta}); beta = 2 is the classical cusp")
        if not 0.0 < self.eps0 < 1.0:
            raise GeometryError(f"eps0 must lie in (0, 1), got {self.eps0}")
        if self.orientation not in ("upper", "lower"):
            raise GeometryError(f"orientation must be 'upper' or 'lower', got {self.orientation!r}")

    @property
    def sign(self):
        return 1.0 if self.orientation == "upper" else -1.0


def _check_chart(s, profile):
    if not 0.0 <= s <= profile.eps0:
        raise GeometryError(f"s={s} outside the chart [0, {profile.eps0}]")


def cusp_profile_eval(s, profile):
    """Height, slope and second derivative of the wall at chart coordinate s."""
    _check_chart(s, profile)
    b = profile.beta
    sg = profile.sign
    if s == 0.0:
        return 0.0, 0.0, 0.0
    return sg * s**b / b, sg * s ** (b - 1.0), sg * (b - 1.0) * s ** (b - 2.0)


def profile_curvature(s, beta):
    """Curvature of the graph z = s**beta/beta (both walls have the same)."""
    if s <= 0.0:
        return 0.0
    return (beta - 1.0) * s ** (beta - 2.0) / (1.0 + s ** (2.0 * beta - 2.0)) ** 1.5


def arclength_from_s(s, profile):
    """Arclength from P to chart coordinate s by adaptive quadrature."""
    _check_chart(s, profile)
    if s == 0.0:
        return 0.0
    p = 2.0 * profile.beta - 2.0
    val, _ = quad(lambda x: math.sqrt(1.0 + x**p), 0.0, s, epsabs=1e-14, epsrel=1e-14, limit=200)
    return val


def s_from_arclength(ell, beta):
    return _core.profile_s_from_arclength(float(ell), float(beta))


@dataclass
class TableSpec:
    """Shape parameters of the table.

    ``tau_min`` is the free-path scale used for cone widths; the table has
    corners, so the true infimum of free paths is zero and a working value is
    needed.
    """
    beta: float = 3.0
    eps0: float = 0.5
    join_radius: float = 1.0
    wall_radius: float = 1.0
    wall_center_x: float = 1.6
    wall_center_y: float = 0.0
    tau_min: float = 0.05


@dataclass
class Arc:
    name: str
    kind: str
    offset: float
    length: float
    obstacle: int
    params: dict = field(default_factory=dict)


def _circle_intersections(c1, r1, c2, r2):
    d = math.hypot(c2[0] - c1[0], c2[1] - c1[1])
    if d > r1 + r2 or d < abs(r1 - r2) or d == 0.0:
        return []
    a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d)
    h = math.sqrt(max(r1 * r1 - a * a, 0.0))
    ex = ((c2[0] - c1[0]) / d, (c2[1] - c1[1]) / d)
    mx, my = c1[0] + a * ex[0], c1[1] + a * ex[1]
    return [(mx - h * ex[1], my + h * ex[0]), (mx + h * ex[1], my - h * ex[0])]


class Table:
    """Immutable cusped table; build with :func:`build_table`."""

    def __init__(self, spec, arcs, corners):
        self.spec = spec
        self.arcs = arcs
        self.corners = corners
        self.packed = np.zeros((len(arcs), 10))
        for k, a in enumerate(arcs):
            row = self.packed[k]
            row[1], row[2], row[3] = a.offset, a.length, a.obstacle
            p = a.params
            if a.kind == "circle":
                row[0] = _core.CIRCLE
                row[4:9] = p["cx"], p["cy"], p["radius"], p["theta0"], p["span"]
            else:
                row[0] = _core.PROFILE
                row[4:9] = p["sign"], p["dir"], spec.beta, spec.eps0, a.length
        self.packed.setflags(write=False)
        self.total_length = arcs[-1].offset + arcs[-1].length
        self.r_f = arcs[3].offset
        w = arcs[0].params
        theta_d = math.pi + math.asin(w["cy"] / w["radius"])
        self.r_D = _core.r_of(self.packed, 0, theta_d)
        self.D = (w["cx"] + w["radius"] * math.cos(theta_d), w["cy"] + w["radius"] * math.sin(theta_d))
        self.l_D = math.hypot(*self.D)
        self.K_min = min(1.0 / a.params["radius"] for a in arcs if a.kind == "circle")
        self.K_max = max(
            max(1.0 / a.params["radius"] for a in arcs if a.kind == "circle"),
            max(profile_curvature(s, spec.beta) for s in np.linspace(0.0, spec.eps0, 501)),
        )
        self.tau_min = spec.tau_min
        pts = self.sample_points(1500)
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        self.tau_max = float(math.sqrt(d2.max()))
        self.profile_upper = CuspProfile(spec.beta, spec.eps0, "upper")
        self.profile_lower = CuspProfile(spec.beta, spec.eps0, "lower")

    # boundary queries
    def locate(self, r):
        i, u = _core.locate(self.packed, self.total_length, float(r))
        return int(i), float(u)

    def r_of(self, arc, u):
        return float(_core.r_of(self.packed, int(arc), float(u)))

    def frame(self, r):
        """(x, y, tx, ty, K) at boundary coordinate r."""
        i, u = self.locate(r)
        return _core.arc_frame(self.packed, i, u)

    def curvature(self, r):
        return self.frame(r)[4]

    def is_cusp_arc(self, arc):
        return self.arcs[arc].kind == "profile"

    def s_chart(self, r):
        """Chart coordinate s for r on a cusp wall, NaN elsewhere."""
        i, u = self.locate(r)
        return u if self.is_cusp_arc(i) else float("nan")

    def sample_points(self, n):
        rs = np.linspace(0.0, self.total_length, n, endpoint=False)
        return np.array([self.frame(r)[:2] for r in rs])

    def junctions(self):
        """Boundary coordinates of arc junctions (excluding the cusp point)."""
        return [a.offset for a in self.arcs if a.offset != self.r_f]

    # invariants
    def invariant_report(self):
        n = len(self.arcs)
        closure = 0.0
        tangent_joins = {}
        for k in range(n):
            a = self.packed
            j = (k + 1) % n
            uk_end = self._arc_end_param(k)
            uj_start = self._arc_start_param(j)
            xk, yk, txk, tyk, _ = _core.arc_frame(a, k, uk_end)
            xj, yj, txj, tyj, _ = _core.arc_frame(a, j, uj_start)
            closure = max(closure, math.hypot(xk - xj, yk - yj))
            ang = math.atan2(txk * tyj - tyk * txj, txk * txj + tyk * tyj)
            tangent_joins[f"{self.arcs[k].name}->{self.arcs[j].name}"] = ang
        corner_names = {c["junction"] for c in self.corners}
        smooth = {k: v for k, v in tangent_joins.items() if k not in corner_names}
        # at the flat point the two walls meet tangentially with reversed direction
        cusp_key = "upper_profile->lower_profile"
        smooth_mismatch = max(
            abs(v) if k != cusp_key else abs(abs(v) - math.pi) for k, v in smooth.items()
        )
        cusp_tangent_lines = abs(math.sin(smooth[cusp_key]))
        x, y, tx, ty, _ = _core.arc_frame(self.packed, 0, self._wall_theta_d())
        # the tangent line at P is the x-axis
        perp = abs(tx)
        kmin_ok = all(
            1.0 / a.params["radius"] > 0.0 for a in self.arcs if a.kind == "circle"
        )
        return {
            "closure_gap": closure,
            "smooth_join_mismatch": smooth_mismatch,
            "cusp_tangent_mismatch": cusp_tangent_lines,
            "corner_angles": {c["junction"]: c["angle"] for c in self.corners},
            "perpendicularity_residual": perp,
            "K_min": self.K_min,
            "dispersing": kmin_ok,
            "profiles_clear_of_disks": self._profiles_clear(),
            "ok": bool(
                closure < 1e-10
                and smooth_mismatch < 1e-10
                and perp < 1e-10
                and kmin_ok
                and self._profiles_clear()
            ),
        }

    def _wall_theta_d(self):
        w = self.arcs[0].params
        return math.pi + math.asin(w["cy"] / w["radius"])

    def _arc_start_param(self, k):
        a = self.arcs[k]
        if a.kind == "circle":
            return a.params["theta0"]
        return self.spec.eps0 if a.params["dir"] < 0 else 0.0

    def _arc_end_param(self, k):
        a = self.arcs[k]
        if a.kind == "circle":
            return a.params["theta0"] - a.params["span"]
        return 0.0 if a.params["dir"] < 0 else self.spec.eps0

    def _profiles_clear(self):
        b, e = self.spec.beta, self.spec.eps0
        ss = np.linspace(0.0, e, 2001)
        for sign, join in ((1.0, self.arcs[1]), (-1.0, self.arcs[4])):
            p = join.params
            d = np.hypot(ss - p["cx"], sign * ss**b / b - p["cy"])
            if np.min(d - p["radius"]) < -1e-12:
                return False
            w = self.arcs[0].params
            if np.min(np.hypot(ss - w["cx"], sign * ss**b / b - w["cy"]) - w["radius"]) <= 0.0:
                return False
        return True

    def summary(self):
        return {
            "spec": asdict(self.spec),
            "total_length": self.total_length,
            "r_f": self.r_f,
            "r_D": self.r_D,
            "l_D": self.l_D,
            "K_min": self.K_min,
            "K_max": self.K_max,
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
            "arcs": [
                {"name": a.name, "kind": a.kind, "offset": a.offset, "length": a.length,
                 "obstacle": a.obstacle, **a.params}
                for a in self.arcs
            ],
            "invariants": self.invariant_report(),
        }


def build_table(spec=None, **overrides):
    """Build the cusped table described by ``spec`` (defaults if omitted)."""
    if spec is None:
        spec = TableSpec(**overrides)
    elif overrides:
        spec = TableSpec(**{**asdict(spec), **overrides})
    CuspProfile(spec.beta, spec.eps0)
    b, e = spec.beta, spec.eps0
    rho, Rw = spec.join_radius, spec.wall_radius
    wc = (spec.wall_center_x, spec.wall_center_y)
    if rho <= 0 or Rw <= 0:
        raise GeometryError("radii must be positive")
    if spec.tau_min <= 0:
        raise GeometryError("tau_min must be positive")
    kmax_profile = max(profile_curvature(s, b) for s in np.linspace(0.0, e, 2001))
    if 1.0 / rho < kmax_profile:
        raise GeometryError(
            f"join_radius {rho} too large: join curvature {1/rho:.4g} is below the wall "
            f"curvature {kmax_profile:.4g}, so the wall would cut into the join disk"
        )
    h = e**b / b
    m = e ** (b - 1.0)
    nm = math.sqrt(1.0 + m * m)
    cu = (e - rho * m / nm, h + rho / nm)
    cl = (e - rho * m / nm, -h - rho / nm)
    if math.hypot(cu[0] - cl[0], cu[1] - cl[1]) <= 2.0 * rho:
        raise GeometryError("join disks overlap: the boundary self-intersects")

    def corner(center, tpt, ccw):
        """First intersection with the wall circle moving away from T."""
        pts = _circle_intersections(center, rho, wc, Rw)
        if not pts:
            raise GeometryError("join arc never meets the opposite wall: boundary does not close")
        th_t = math.atan2(tpt[1] - center[1], tpt[0] - center[0])
        best = None
        for p in pts:
            th = math.atan2(p[1] - center[1], p[0] - center[0])
            d = (th - th_t) % (2 * math.pi) if ccw else (th_t - th) % (2 * math.pi)
            if best is None or d < best[0]:
                best = (d, th, p)
        return best

    # upper join goes clockwise from the corner to T_up, i.e. the corner is
    # reached counterclockwise from T_up; mirror for the lower join
    span_u, thc_u, cu_pt = corner(cu, (e, h), ccw=True)
    span_l, thc_l, cl_pt = corner(cl, (e, -h), ccw=False)
    th_tu = math.atan2(h - cu[1], e - cu[0])
    th_tl = math.atan2(-h - cl[1], e - cl[0])

    wth_u = math.atan2(cu_pt[1] - wc[1], cu_pt[0] - wc[0])
    wth_l = math.atan2(cl_pt[1] - wc[1], cl_pt[0] - wc[0])
    wth_l0 = wth_l % (2 * math.pi)
    wall_span = (wth_l0 - wth_u) % (2 * math.pi)
    theta_d = math.pi + math.asin(max(-1.0, min(1.0, wc[1] / Rw)))
    if (wth_l0 - theta_d) % (2 * math.pi) > wall_span:
        raise GeometryError("opposite wall arc does not face the cusp")
    if wc[0] - Rw <= e:
        raise GeometryError("opposite wall intrudes into the cusp chart")

    L = _core.profile_arclength(e, b)
    arcs = []
    off = 0.0

    def add(name, kind, length, obstacle, **params):
        nonlocal off
        arcs.append(Arc(name, kind, off, length, obstacle, params))
        off += length

    add("wall", "circle", Rw * wall_span, 0, cx=wc[0], cy=wc[1], radius=Rw, theta0=wth_l0, span=wall_span)
    add("upper_join", "circle", rho * span_u, 1, cx=cu[0], cy=cu[1], radius=rho,
        theta0=th_tu + span_u, span=span_u)
    add("upper_profile", "profile", L, 1, sign=1.0, dir=-1.0)
    add("lower_profile", "profile", L, 2, sign=-1.0, dir=1.0)
    add("lower_join", "circle", rho * span_l, 2, cx=cl[0], cy=cl[1], radius=rho, theta0=th_tl, span=span_l)

    def corner_angle(c_join, c_pt, wall_first):
        # angle between the incoming and outgoing tangents at the corner
        tj = ((c_pt[1] - c_join[1]) / rho, -(c_pt[0] - c_join[0]) / rho)
        tw = ((c_pt[1] - wc[1]) / Rw, -(c_pt[0] - wc[0]) / Rw)
        a, bb = (tw, tj) if wall_first else (tj, tw)
        return math.atan2(a[0] * bb[1] - a[1] * bb[0], a[0] * bb[0] + a[1] * bb[1])

    corners = [
        {"junction": "wall->upper_join", "point": cu_pt, "angle": corner_angle(cu, cu_pt, True)},
        {"junction": "lower_join->wall", "point": cl_pt, "angle": corner_angle(cl, cl_pt, False)},
    ]
    table = Table(spec, arcs, corners)
    if not table._profiles_clear():
        raise GeometryError("a cusp wall enters a join disk or the opposite wall disk")
    return table
