"""Generate the frozen high-precision reference values in tests/data/oracles.json.

Everything here is computed with mpmath at 50 significant digits and shares no
code with the package apart from the arc layout of the default table (centres,
radii, angular ranges), which is read from its JSON summary.

    python3 tests/oracles/make_oracles.py
"""
import json
import pathlib
import random

import mpmath as mp

mp.mp.dps = 50
OUT = pathlib.Path(__file__).resolve().parents[1] / "data" / "oracles.json"


def arclength(s, beta):
    s, beta = mp.mpf(s), mp.mpf(beta)
    return mp.quad(lambda x: mp.sqrt(1 + x ** (2 * beta - 2)), [0, s])


def curvature(s, beta):
    s, beta = mp.mpf(s), mp.mpf(beta)
    return (beta - 1) * s ** (beta - 2) / (1 + s ** (2 * beta - 2)) ** mp.mpf(1.5)


def bisect(f, lo, hi, steps=200):
    flo = f(lo)
    for _ in range(steps):
        mid = (lo + hi) / 2
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return (lo + hi) / 2


def reduced_next(s, v, beta):
    """Root x in (0, s] (v < pi/2) or x >= s (v > pi/2) of x - s + cot(v)/beta (x^beta + s^beta)."""
    s, v, beta = mp.mpf(s), mp.mpf(v), mp.mpf(beta)
    c = mp.cot(v) / beta
    f = lambda x: x - s + c * (x ** beta + s ** beta)
    if c > 0:
        return bisect(f, mp.mpf(0), s)
    xmax = (1 / (beta * -c)) ** (1 / (beta - 1))
    return bisect(f, s, xmax)


def chart_series(s1, v1, beta, eps0, cap=5000):
    s, v = mp.mpf(s1), mp.mpf(v1)
    ss, vs = [s], [v]
    beta = mp.mpf(beta)
    while len(ss) < cap and v < mp.pi:
        c = mp.cot(v) / beta
        if c < 0:
            xmax = (1 / (beta * -c)) ** (1 / (beta - 1))
            f = lambda x: x - s + c * (x ** beta + s ** beta)
            if xmax < s or f(xmax) < 0:
                break
        s = reduced_next(s, v, beta)
        if s > eps0:
            break
        v = v + 2 * mp.atan(s ** (beta - 1))
        ss.append(s)
        vs.append(v)
    return ss, vs


# rays in the default table

def arc_point(arc, u, beta):
    if arc["kind"] == "circle":
        th = mp.mpf(u)
        c = mp.matrix([mp.cos(th), mp.sin(th)])
        return (arc["cx"] + arc["radius"] * c[0], arc["cy"] + arc["radius"] * c[1]), (c[0], c[1])
    s = mp.mpf(u)
    sg = arc["sign"]
    p = (s, sg * s ** beta / beta)
    # normal pointing into the table (away from the wall, towards the other wall)
    n = (s ** (beta - 1), -sg * mp.mpf(1))
    L = mp.sqrt(n[0] ** 2 + n[1] ** 2)
    return p, (n[0] / L, n[1] / L)


def hit_candidates(arc, p, d, beta, eps0, t_max):
    """Parameters t > 0 where the ray p + t d meets the arc (bisection on a fine grid)."""
    if arc["kind"] == "circle":
        cx, cy, R = mp.mpf(arc["cx"]), mp.mpf(arc["cy"]), mp.mpf(arc["radius"])
        f = lambda t: (p[0] + t * d[0] - cx) ** 2 + (p[1] + t * d[1] - cy) ** 2 - R ** 2
    else:
        sg = arc["sign"]

        def f(t):
            x = p[0] + t * d[0]
            y = p[1] + t * d[1]
            return y - sg * abs(x) ** beta / beta
    grid = [t_max * mp.mpf(k) / 4000 for k in range(1, 4001)]
    out = []
    prev_t, prev_f = grid[0], f(grid[0])
    for t in grid[1:]:
        ft = f(t)
        if (ft > 0) != (prev_f > 0):
            out.append(bisect(f, prev_t, t))
        prev_t, prev_f = t, ft
    keep = []
    for t in out:
        x, y = p[0] + t * d[0], p[1] + t * d[1]
        if arc["kind"] == "circle":
            th = mp.atan2(y - arc["cy"], x - arc["cx"])
            if (mp.mpf(arc["theta0"]) - th) % (2 * mp.pi) <= mp.mpf(arc["span"]):
                keep.append((t, float(th)))
        elif 0 <= x <= eps0:
            keep.append((t, float(x)))
    return keep


def tangent(arc, u, beta):
    """Unit tangent along increasing boundary coordinate."""
    if arc["kind"] == "circle":
        th = mp.mpf(u)
        return mp.sin(th), -mp.cos(th)
    s = mp.mpf(u)
    sp = s ** (beta - 1)
    L = mp.sqrt(1 + sp * sp)
    return arc["dir"] / L, arc["dir"] * arc["sign"] * sp / L


def rays(summary, count=20, seed=20240611):
    beta = mp.mpf(summary["spec"]["beta"])
    eps0 = mp.mpf(summary["spec"]["eps0"])
    arcs = summary["arcs"]
    rng = random.Random(seed)
    out = []
    while len(out) < count:
        i = len(out) % len(arcs)
        a = arcs[i]
        if a["kind"] == "circle":
            u = a["theta0"] - a["span"] * rng.uniform(0.05, 0.95)
        else:
            u = rng.uniform(0.05, 0.45)
        p, n = arc_point(a, u, beta)
        psi = float(mp.atan2(n[1], n[0])) + rng.uniform(-1.2, 1.2)
        d = (mp.cos(mp.mpf(psi)), mp.sin(mp.mpf(psi)))
        best = None
        for j, b in enumerate(arcs):
            if b["obstacle"] == a["obstacle"]:
                continue
            for t, v in hit_candidates(b, p, d, beta, eps0, mp.mpf(2)):
                if best is None or t < best[0]:
                    best = (t, j, v)
        if best is None:
            continue
        t, j, v = best
        b = arcs[j]
        x, y = p[0] + t * d[0], p[1] + t * d[1]
        if b["kind"] == "circle":
            nx, ny = mp.cos(mp.mpf(v)), mp.sin(mp.mpf(v))
            v_hit = mp.atan2(y - b["cy"], x - b["cx"])
        else:
            v_hit = x
            _, (nx, ny) = arc_point(b, x, beta)
        tx, ty = tangent(b, v_hit, beta)
        dn = d[0] * nx + d[1] * ny
        ox, oy = d[0] - 2 * dn * nx, d[1] - 2 * dn * ny
        phi = mp.atan2(ox * tx + oy * ty, ox * nx + oy * ny)
        if abs(phi) > 1.4:
            continue
        out.append({"arc": i, "u": u, "psi": psi, "hit_arc": j, "x": mp.nstr(x, 30),
                    "y": mp.nstr(y, 30), "tau": mp.nstr(t, 30), "phi": mp.nstr(phi, 30)})
    return out


def main():
    import sys
    sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[2] / "src"))
    from flatcusp.geometry import build_table

    summary = build_table().summary()
    data = {
        "arclength": [{"s": s, "beta": b, "value": mp.nstr(arclength(s, b), 30)}
                      for s, b in ((0.5, 3.0), (0.1, 3.0), (0.3, 2.5), (0.4, 4.0), (0.5, 3.7))],
        "curvature": [{"s": s, "beta": b, "value": mp.nstr(curvature(s, b), 30)}
                      for s, b in ((1.0, 3.0), (0.1, 3.0), (0.25, 2.5), (0.4, 4.0))],
        "reduced_step": [],
        "chart_series": {},
        "rays": rays(summary),
    }
    for s, v, b in ((0.1, 0.3, 3.0), (0.05, 1.2, 3.0), (0.2, 2.0, 3.0), (0.1, 0.7, 2.5), (0.3, 0.1, 4.0)):
        x = reduced_next(s, v, b)
        v1 = mp.mpf(v) + 2 * mp.atan(x ** (mp.mpf(b) - 1))
        data["reduced_step"].append({"s": s, "v": v, "beta": b, "s_next": mp.nstr(x, 30),
                                     "v_next": mp.nstr(v1, 30)})
    ss, vs = chart_series(0.2, 0.02, 3.0, 0.5)
    data["chart_series"] = {"s1": 0.2, "v1": 0.02, "beta": 3.0, "eps0": 0.5,
                            "s": [mp.nstr(x, 25) for x in ss], "v": [mp.nstr(x, 25) for x in vs]}
    OUT.write_text(json.dumps(data, indent=1) + "\n")
    print(f"wrote {OUT}: {len(data['rays'])} rays, chart series of {len(ss)} collisions")


if __name__ == "__main__":
    main()
