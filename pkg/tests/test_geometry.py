import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatcusp import _core
from flatcusp.geometry import (CuspProfile, GeometryError, TableSpec, arclength_from_s,
                               build_table, cusp_profile_eval, profile_curvature,
                               s_from_arclength)

UPPER = CuspProfile(3.0, 0.5)


def test_profile_at_flat_point():
    assert cusp_profile_eval(0.0, UPPER) == (0.0, 0.0, 0.0)


def test_profile_values_upper_and_lower():
    z, dz, ddz = cusp_profile_eval(0.5, UPPER)
    assert z == pytest.approx(0.125 / 3, rel=1e-15)
    assert dz == pytest.approx(0.25, rel=1e-15)
    assert ddz == pytest.approx(1.0, rel=1e-15)
    lo = cusp_profile_eval(0.5, CuspProfile(3.0, 0.5, "lower"))
    assert lo == pytest.approx((-z, -dz, -ddz), rel=1e-15)


def test_profile_outside_chart():
    with pytest.raises(GeometryError):
        cusp_profile_eval(1.2, CuspProfile(3.0, 0.99))
    with pytest.raises(GeometryError):
        cusp_profile_eval(-1e-3, UPPER)


def test_beta_two_rejected():
    with pytest.raises(GeometryError, match="beta"):
        CuspProfile(2.0, 0.5)
    with pytest.raises(GeometryError):
        build_table(beta=2.0)


def test_curvature_closed_forms(table):
    assert profile_curvature(0.0, 3.0) == 0.0
    assert table.curvature(table.r_f) == 0.0
    assert profile_curvature(1.0, 3.0) == pytest.approx(2 / 2 ** 1.5, rel=1e-15)
    k = profile_curvature(0.1, 3.0)
    assert k == pytest.approx(0.2 * (1 + 1e-4) ** -1.5, rel=1e-15)
    assert abs(k - 0.2) < 0.2 * 2e-4


def test_curvature_oracle(oracles):
    for row in oracles["curvature"]:
        assert profile_curvature(row["s"], row["beta"]) == pytest.approx(float(row["value"]), rel=1e-14)


def test_curvature_vanishing_rate():
    s = np.geomspace(1e-3, 1e-1, 30)
    k = [profile_curvature(x, 3.5) for x in s]
    slope = np.polyfit(np.log(s), np.log(k), 1)[0]
    assert abs(slope - 1.5) < 0.01 * 1.5


def test_arclength_small_s():
    assert arclength_from_s(0.0, UPPER) == 0.0
    d = arclength_from_s(0.1, UPPER) - 0.1
    assert 0 < d < 0.1 ** 5


def test_arclength_oracle(oracles):
    for row in oracles["arclength"]:
        eps0 = 0.5 if row["s"] <= 0.5 else 0.9
        ref = float(row["value"])
        assert abs(arclength_from_s(row["s"], CuspProfile(row["beta"], eps0)) - ref) < 1e-12
        # series evaluation used by the flight solver is an independent route
        assert abs(_core.profile_arclength(row["s"], row["beta"]) - ref) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5), st.floats(2.05, 6.0))
def test_arclength_monotone_lipschitz(a, b, beta):
    p = CuspProfile(beta, 0.5)
    la, lb = arclength_from_s(a, p), arclength_from_s(b, p)
    if a < b:
        assert la < lb
    assert abs(la - lb) <= math.sqrt(2) * abs(a - b) + 1e-15
    assert abs(la - lb) >= abs(a - b) - 1e-15


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 0.5), st.floats(2.05, 6.0))
def test_arclength_inverse(s, beta):
    ell = _core.profile_arclength(s, beta)
    assert s_from_arclength(ell, beta) == pytest.approx(s, rel=1e-12)


def test_default_table_invariants(table):
    rep = table.invariant_report()
    assert rep["ok"]
    assert rep["closure_gap"] < 1e-10
    assert rep["smooth_join_mismatch"] < 1e-10
    assert rep["perpendicularity_residual"] < 1e-10
    assert rep["dispersing"] and rep["K_min"] > 0
    assert table.l_D == pytest.approx(table.spec.wall_center_x - table.spec.wall_radius)


def test_off_axis_wall_breaks_perpendicularity():
    t = build_table(wall_center_y=0.05)
    rep = t.invariant_report()
    assert rep["perpendicularity_residual"] > 1e-3
    assert not rep["ok"]


def test_construction_errors():
    with pytest.raises(GeometryError):
        build_table(join_radius=5.0)
    with pytest.raises(GeometryError):
        build_table(wall_center_x=0.9)
    with pytest.raises(GeometryError):
        build_table(join_radius=-1.0)


def test_tangent_continuous_across_smooth_joins(table):
    # join arc -> profile and profile -> join arc; the other junctions are corners
    for r0 in (table.arcs[2].offset, table.arcs[4].offset):
        t1 = np.array(table.frame(r0 - 1e-9)[2:4])
        t2 = np.array(table.frame(r0 + 1e-9)[2:4])
        assert np.linalg.norm(t1 - t2) < 1e-6


def test_locate_roundtrip(table):
    for r in np.linspace(0, table.total_length, 97, endpoint=False):
        i, u = table.locate(r)
        assert table.r_of(i, u) == pytest.approx(r, abs=1e-12)


def test_summary_is_json_ready(table):
    import json
    json.dumps(table.summary())
    assert TableSpec().beta == 3.0
