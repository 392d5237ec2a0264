"""Billiard map on a cusped table: flights, reflections, differential, fronts.

States are post-collision pairs (r, phi).  phi is the angle between the
outgoing velocity and the inward normal, positive when the velocity leans
towards increasing r.
"""
from dataclasses import dataclass
import csv
import math

import numpy as np

from . import _core

PHI_TOL = 1e-9
S_FLOOR_FACTOR = 1e-13


class DynamicsError(RuntimeError):
    """Flight solver failure (no boundary intersection)."""


class SingularInputError(ValueError):
    """Grazing state or vanishing cosine where the map is not smooth."""


class ConeError(ValueError):
    """A front left the dispersing cone."""


@dataclass(frozen=True)
class PhasePoint:
    r: float
    phi: float
    arc: int
    u: float
    x: float
    y: float
    tx: float
    ty: float
    K: float

    @classmethod
    def at(cls, table, r, phi):
        if abs(phi) > 0.5 * math.pi:
            raise ValueError(f"|phi| must not exceed pi/2, got {phi}")
        r = float(r) % table.total_length
        i, u = table.locate(r)
        return cls._build(table, i, u, phi, r)

    @classmethod
    def from_arc(cls, table, arc, u, phi):
        return cls._build(table, int(arc), float(u), float(phi), table.r_of(arc, u))

    @classmethod
    def _build(cls, table, i, u, phi, r):
        x, y, tx, ty, K = _core.arc_frame(table.packed, i, u)
        return cls(r, float(phi), i, u, x, y, tx, ty, K)

    @property
    def normal(self):
        return -self.ty, self.tx

    @property
    def cos_phi(self):
        return math.cos(self.phi)

    def velocity(self):
        c, s = math.cos(self.phi), _core.PHI_SIGN * math.sin(self.phi)
        nx, ny = self.normal
        return c * nx + s * self.tx, c * ny + s * self.ty

    def reversed(self, table):
        return PhasePoint.from_arc(table, self.arc, self.u, -self.phi)


@dataclass(frozen=True)
class CollisionEvent:
    start: object
    tau: float
    end: PhasePoint
    grazing: bool
    cusp_capture: bool


@dataclass(frozen=True)
class TangentData:
    V: float
    B: float
    B_minus: float
    cos_phi: float


def s_floor(table):
    return S_FLOOR_FACTOR * table.spec.eps0


def next_collision(table, point, direction, start_arc=-1, phi_tol=PHI_TOL):
    """First boundary hit of the ray from ``point`` along ``direction``.

    ``point`` may be an (x, y) pair or a PhasePoint; for a PhasePoint the arcs
    of its own convex obstacle are skipped.
    """
    if isinstance(point, PhasePoint):
        start_arc = point.arc
        x0, y0 = point.x, point.y
    else:
        x0, y0 = float(point[0]), float(point[1])
    dx, dy = float(direction[0]), float(direction[1])
    n = math.hypot(dx, dy)
    dx, dy = dx / n, dy / n
    j, uj, tau = _core.flight(table.packed, start_arc, x0, y0, dx, dy)
    if j < 0:
        raise DynamicsError(f"ray from ({x0}, {y0}) along ({dx}, {dy}) meets no boundary arc")
    phi1, _, _ = _core.reflect_angle(table.packed, j, uj, dx, dy)
    end = PhasePoint.from_arc(table, j, uj, phi1)
    grazing = abs(phi1) > 0.5 * math.pi - phi_tol
    capture = table.is_cusp_arc(j) and uj < s_floor(table)
    return CollisionEvent(point, tau, end, grazing, capture)


def _check_regular(x, phi_tol):
    if abs(x.phi) > 0.5 * math.pi - phi_tol:
        raise SingularInputError(f"grazing state r={x.r}, phi={x.phi}")


def billiard_map(table, x, phi_tol=PHI_TOL):
    """One reflection: returns (x1, tau)."""
    _check_regular(x, phi_tol)
    ev = next_collision(table, x, x.velocity(), phi_tol=phi_tol)
    return ev.end, ev.tau


def map_differential(table, x, x1=None, tau=None):
    """Derivative of the billiard map at x in (r, phi) coordinates."""
    if x1 is None:
        x1, tau = billiard_map(table, x)
    c, c1 = math.cos(x.phi), math.cos(x1.phi)
    if c1 < 1e-14:
        raise SingularInputError("cos(phi1) vanishes; differential is singular")
    K, K1 = x.K, x1.K
    m = np.array([
        [tau * K + c, tau],
        [tau * K * K1 + K * c1 + K1 * c, tau * K1 + c1],
    ])
    return -m / c1


def wavefront_step(B, tau, K, phi):
    """Transport front curvature B over a flight tau and reflect at (K, phi)."""
    if not B > 0:
        raise ConeError(f"front curvature must be positive, got {B}")
    if not tau > 0:
        raise ValueError(f"free path must be positive, got {tau}")
    bm = 1.0 / (tau + 1.0 / B) if math.isfinite(B) else 1.0 / tau
    return bm, bm + 2.0 * K / math.cos(phi)


def slope_from_curvature(B, K, phi):
    """Slope dphi/dr of the (r, phi) curve generated by a front of curvature B."""
    return B * math.cos(phi) - K


def curvature_from_slope(V, K, phi):
    return (V + K) / math.cos(phi)


def tangent_data(B, tau_prev, K, phi):
    bm = 1.0 / (tau_prev + 1.0 / B) if tau_prev is not None else float("nan")
    return TangentData(slope_from_curvature(B, K, phi), B, bm, math.cos(phi))


def cone_check(table, x, V):
    """Classify slope V at x against the unstable and stable cones."""
    K = x.K
    w = 1.0 / table.tau_min
    if K <= V <= K + w:
        return "unstable"
    if -K - w <= V <= -K:
        return "stable"
    return "neither"


def pushforward_slope(V, K, phi, tau, K1, phi1):
    """Slope at F x of the image of a vector with slope V at x."""
    return K1 + math.cos(phi1) / (tau + math.cos(phi) / (K + V))


def p_stretch(D, V, phi, phi1):
    """Expansion of a vector with slope V in the metric cos(phi)|dr|."""
    v = np.array([1.0, V])
    w = D @ v
    return math.cos(phi1) * abs(w[0]) / (math.cos(phi) * abs(v[0])), w[1] / w[0]


def trajectory(table, x, n, phi_tol=PHI_TOL):
    """Up to n collisions from x as arrays (r, phi, tau, s_chart, flags).

    tau[k] is the flight leaving state k; s_chart is NaN off the cusp walls.
    The orbit stops at the first capture or solver failure.
    """
    arc, u, ph, tau, count, _ = _core.orbit(table.packed, x.arc, x.u, x.phi, n,
                                            phi_tol, s_floor(table))
    arc, u, ph, tau = arc[:count], u[:count], ph[:count], tau[:count]
    r = np.array([_core.r_of(table.packed, a, v) for a, v in zip(arc, u)])
    prof = np.array([table.is_cusp_arc(a) for a in arc], dtype=bool)
    s = np.where(prof, u, np.nan)
    flags = np.zeros(count, dtype=np.int64)
    flags[np.abs(ph) > 0.5 * math.pi - phi_tol] |= _core.FLAG_GRAZING
    flags[prof & (u < s_floor(table))] |= _core.FLAG_CAPTURE
    return {"r": r, "phi": ph, "tau": tau, "s_chart": s, "arc": arc, "u": u, "flags": flags}


def write_trajectory_csv(path, traj):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "r", "phi", "tau", "s_chart", "flags"])
        for k in range(len(traj["r"])):
            w.writerow([k, repr(float(traj["r"][k])), repr(float(traj["phi"][k])),
                        repr(float(traj["tau"][k])), repr(float(traj["s_chart"][k])),
                        int(traj["flags"][k])])
