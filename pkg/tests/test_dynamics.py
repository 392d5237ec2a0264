import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from flatcusp import _core
from flatcusp.dynamics import (PHI_TOL, ConeError, PhasePoint, SingularInputError,
                               billiard_map, cone_check, map_differential, next_collision,
                               p_stretch, pushforward_slope, trajectory, wavefront_step)
from flatcusp.stats import make_rng, sample_mu


def _mu_states(table, n, seed):
    e = sample_mu(table, n, seed)
    return [PhasePoint.from_arc(table, e.arc[k], e.u[k], e.phi[k]) for k in range(n)]


def _regular(table, x, margin=1e-3):
    """x and its image are away from grazing, corners and the cusp floor."""
    if abs(x.phi) > 0.5 * math.pi - margin:
        return None
    try:
        x1, tau = billiard_map(table, x)
    except SingularInputError:
        return None
    if abs(x1.phi) > 0.5 * math.pi - margin:
        return None
    return x1, tau


def test_ray_oracle(table, oracles):
    for ray in oracles["rays"]:
        x = PhasePoint.from_arc(table, ray["arc"], ray["u"], 0.0)
        ev = next_collision(table, x, (math.cos(ray["psi"]), math.sin(ray["psi"])))
        assert ev.end.arc == ray["hit_arc"]
        assert abs(ev.end.x - float(ray["x"])) < 1e-11
        assert abs(ev.end.y - float(ray["y"])) < 1e-11
        assert abs(ev.tau - float(ray["tau"])) < 1e-11
        assert abs(ev.end.phi - float(ray["phi"])) < 1e-11


def test_axis_ray_hits_D_perpendicularly(table):
    # the x-axis is the cusp tangent line; D is where it meets the wall
    x0 = 0.2
    ev = next_collision(table, (x0, 0.0), (1.0, 0.0))
    assert ev.tau == pytest.approx(table.l_D - x0, abs=1e-14)
    assert abs(ev.end.phi) < 1e-14
    assert ev.end.r == pytest.approx(table.r_D, abs=1e-12)
    # reflected back along the same chord
    vx, vy = ev.end.velocity()
    assert vx == pytest.approx(-1.0, abs=1e-14) and abs(vy) < 1e-14


@pytest.mark.parametrize("arc", [0, 1, 4])
@pytest.mark.parametrize("sgn", [1.0, -1.0])
def test_tangent_ray_grazes(table, arc, sgn):
    a = table.arcs[arc].params
    th = a["theta0"] - 0.4 * a["span"]
    x, y, tx, ty, _ = _core.arc_frame(table.packed, arc, th)
    ev = next_collision(table, (x - sgn * 0.05 * tx, y - sgn * 0.05 * ty), (sgn * tx, sgn * ty))
    assert ev.grazing
    assert 0.5 * math.pi - abs(ev.end.phi) <= PHI_TOL


def test_grazing_input_rejected(table):
    x = PhasePoint.from_arc(table, 1, table.arcs[1].params["theta0"] - 0.1, 0.5 * math.pi)
    with pytest.raises(SingularInputError):
        billiard_map(table, x)


def test_reversibility(table):
    worst = 0.0
    for x in _mu_states(table, 1000, 11):
        out = _regular(table, x, 1e-6)
        if out is None:
            continue
        x1, _ = out
        back, _ = billiard_map(table, x1.reversed(table))
        dr = abs((back.r - x.r + 0.5 * table.total_length) % table.total_length
                 - 0.5 * table.total_length)
        worst = max(worst, dr, abs(back.phi + x.phi))
    assert worst < 1e-9


def test_determinant(table):
    worst = 0.0
    for x in _mu_states(table, 1000, 12):
        out = _regular(table, x, 1e-6)
        if out is None:
            continue
        x1, tau = out
        D = map_differential(table, x, x1, tau)
        ref = math.cos(x.phi) / math.cos(x1.phi)
        worst = max(worst, abs(np.linalg.det(D) - ref) / max(1.0, ref))
    assert worst < 1e-10


def _fd_jacobian(table, x, h=1e-7):
    J = np.empty((2, 2))
    L = table.total_length
    for col, (dr, dp) in enumerate(((h, 0.0), (0.0, h))):
        p, _ = billiard_map(table, PhasePoint.at(table, x.r + dr, x.phi + dp))
        m, _ = billiard_map(table, PhasePoint.at(table, x.r - dr, x.phi - dp))
        J[0, col] = ((p.r - m.r + 0.5 * L) % L - 0.5 * L) / (2 * h)
        J[1, col] = (p.phi - m.phi) / (2 * h)
    return J


def test_differential_matches_finite_differences(table):
    checked = 0
    edges = [a.offset for a in table.arcs] + [table.total_length]
    for x in _mu_states(table, 400, 13):
        out = _regular(table, x, 0.2)
        if out is None or min(abs(x.r - e) for e in edges) < 1e-4:
            continue
        x1, tau = out
        if min(abs(x1.r - e) for e in edges) < 1e-4 or tau < 0.02:
            continue
        D = map_differential(table, x, x1, tau)
        J = _fd_jacobian(table, x)
        scale = np.abs(D).max()
        assert np.all(np.abs(J - D) <= 1e-5 * np.maximum(np.abs(D), 1e-2 * scale))
        checked += 1
    assert checked > 100


def test_differential_near_flat_point(table):
    # a collision close to P: K(r) is tiny, so the (1,1) entry is about -cos(phi)/cos(phi1)
    x = PhasePoint.from_arc(table, 2, 1e-3, 0.3)
    x1, tau = billiard_map(table, x)
    D = map_differential(table, x, x1, tau)
    assert x.K < 1e-2
    assert D[0, 0] == pytest.approx(-math.cos(x.phi) / math.cos(x1.phi), rel=1e-4)


def test_wavefront_examples():
    assert wavefront_step(1.0, 1.0, 0.5, 0.0) == pytest.approx((0.5, 1.5), rel=1e-15)
    bm, _ = wavefront_step(math.inf, 0.25, 0.0, 0.0)
    assert bm == 4.0
    bm, _ = wavefront_step(1e300, 0.25, 0.0, 0.0)
    assert bm == pytest.approx(4.0)
    with pytest.raises(ConeError):
        wavefront_step(0.0, 1.0, 0.5, 0.0)


def test_expansion_identity(table):
    """1 + tau B equals the p-metric stretch of the cone vector with slope from B."""
    worst = 0.0
    for x in _mu_states(table, 300, 14):
        out = _regular(table, x, 1e-3)
        if out is None:
            continue
        x1, tau = out
        B = 2 * x.K / math.cos(x.phi) + 1.0 / table.tau_max
        V = B * math.cos(x.phi) - x.K
        stretch, _ = p_stretch(map_differential(table, x, x1, tau), V, x.phi, x1.phi)
        worst = max(worst, abs(stretch / (1 + tau * B) - 1))
    assert worst < 1e-8


def test_cone_edges(table):
    x = PhasePoint.from_arc(table, 1, table.arcs[1].params["theta0"] - 0.1, 0.2)
    assert cone_check(table, x, x.K) == "unstable"
    assert cone_check(table, x, x.K + 1 / table.tau_min) == "unstable"
    assert cone_check(table, x, 0.0) == "neither"
    assert cone_check(table, x, -x.K) == "stable"


def test_cone_invariance(table):
    rng = make_rng(15, 1)
    states = _mu_states(table, 6000, 15)
    tried = 0
    for x in states:
        out = _regular(table, x, 1e-4)
        if out is None:
            continue
        x1, tau = out
        if tau < table.tau_min:
            continue  # the cone width uses tau_min as the free-path floor
        for _ in range(5):
            V = x.K + rng.uniform() / table.tau_min
            V1 = pushforward_slope(V, x.K, x.phi, tau, x1.K, x1.phi)
            assert x1.K <= V1 <= x1.K + math.cos(x1.phi) / tau + 1e-12
            assert cone_check(table, x1, V1) == "unstable"
            tried += 1
    assert tried >= 10_000


@settings(max_examples=80, deadline=None)
@given(st.floats(0.0, 1.0, exclude_max=True), st.floats(-1.5, 1.5))
def test_map_lands_on_boundary(r_frac, phi):
    table = _table()
    x = PhasePoint.at(table, r_frac * table.total_length, phi)
    try:
        x1, tau = billiard_map(table, x)
    except SingularInputError:
        assume(False)
    assert tau > 0
    fx, fy, *_ = table.frame(x1.r)
    assert math.hypot(fx - x1.x, fy - x1.y) < 1e-10
    assert abs(x1.phi) <= 0.5 * math.pi


_cache = {}


def _table():
    from flatcusp.geometry import build_table
    if "t" not in _cache:
        _cache["t"] = build_table()
    return _cache["t"]


def test_cusp_entry_stays_on_walls(table):
    from flatcusp.corner_series import entry_state
    x = entry_state(table, 0.0, 3e-3)
    tr = trajectory(table, x, 5000)
    on = np.array([table.is_cusp_arc(a) for a in tr["arc"]])
    first = int(np.argmax(on))
    last = first + int(np.argmin(on[first:]))
    assert last - first > 100
    # every collision between entry and exit lands on a cusp wall
    assert on[first:last].all() and not on[last]


def test_invariance_of_mu(table):
    """One step of the map preserves the cos(phi)-weighted histogram (3 sigma per bin)."""
    n = 200_000
    e = sample_mu(table, n, 16)
    r0, p0 = e.r, e.phi
    r1 = np.empty(n)
    p1 = np.empty(n)
    keep = np.ones(n, bool)
    from flatcusp.dynamics import s_floor
    sf = s_floor(table)
    for k in range(n):
        j, u, ph, _, fl = _core.step(table.packed, int(e.arc[k]), float(e.u[k]), float(e.phi[k]),
                                     PHI_TOL, sf)
        if fl & _core.FATAL:
            keep[k] = False
            continue
        r1[k] = table.r_of(j, u)
        p1[k] = ph
    assert (~keep).sum() < 10
    bins = (np.linspace(0, table.total_length, 9), np.linspace(-0.5 * math.pi, 0.5 * math.pi, 9))
    h0, *_ = np.histogram2d(r0[keep], p0[keep], bins)
    h1, *_ = np.histogram2d(r1[keep], p1[keep], bins)
    sigma = np.sqrt(h0 + h1)
    assert np.all(np.abs(h1 - h0) <= 3 * np.maximum(sigma, 1))


def test_trajectory_csv(table, tmp_path):
    from flatcusp.dynamics import write_trajectory_csv
    x = PhasePoint.at(table, 0.3, 0.1)
    tr = trajectory(table, x, 50)
    path = tmp_path / "t.csv"
    write_trajectory_csv(path, tr)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,r,phi,tau,s_chart,flags" and len(lines) == 52  # start state + 50 collisions
