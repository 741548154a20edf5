#!/usr/bin/env python3
"""Write data/frameworks/{MOR,MFI}.fw from IZA asymmetric units.

T-sites are expanded by the listed symmetry operations; each pore orbit is
generated from one centre and its boundary is the set of T-sites within a
cutoff radius of the centre (minimum image).
"""
import argparse
from fractions import Fraction
from pathlib import Path

import numpy as np

TOL = 1e-3


def parse_op(s):
    W = np.zeros((3, 3))
    t = [Fraction(0)] * 3
    for r, expr in enumerate(s.split(",")):
        for term in expr.replace("-", "+-").split("+"):
            term = term.strip()
            if not term:
                continue
            sign = -1 if term.startswith("-") else 1
            body = term.lstrip("-")
            if body in "xyz":
                W[r, "xyz".index(body)] = sign
            else:
                t[r] += sign * Fraction(body)
    return W, t


def fmt_op(W, t):
    rows = []
    for r in range(3):
        s = ""
        for k, v in enumerate("xyz"):
            if W[r, k] == 1:
                s += ("+" if s else "") + v
            elif W[r, k] == -1:
                s += "-" + v
        f = t[r] % 1
        if f:
            s += "+" + str(f)
        rows.append(s)
    return ",".join(rows)


def with_centering(ops, shifts):
    out = []
    for c in shifts:
        for W, t in ops:
            out.append((W, [(t[i] + Fraction(c[i])) % 1 for i in range(3)]))
    return out


def apply(op, x):
    W, t = op
    return (W @ x + np.array([float(v) for v in t])) % 1.0


def same(a, b):
    return np.all(np.abs((a - b + 0.5) % 1.0 - 0.5) < TOL)


def orbit(ops, x):
    out = []
    for op in ops:
        y = apply(op, np.array(x, dtype=float))
        if not any(same(y, p) for p in out):
            out.append(y)
    return out


def expand(ops, asym):
    pos = []
    for x in asym:
        for y in orbit(ops, x):
            if not any(same(y, p) for p in pos):
                pos.append(y)
    return pos


def dist(L, a, b):
    d = (a - b + 0.5) % 1.0 - 0.5
    return float(np.linalg.norm(d @ L))


def clean(v):
    v = round(float(v), 6) % 1.0
    return 0.0 if abs(v) < 1e-9 or abs(v - 1.0) < 1e-9 else v


FRAMEWORKS = {
    "MOR": dict(
        lattice=(18.256, 20.534, 7.542),
        ops=["x,y,z", "-x,-y,z+1/2", "-x,y,-z+1/2", "x,-y,-z", "-x,-y,-z", "x,y,-z+1/2", "x,-y,z+1/2", "-x,y,z"],
        centering=[(0, 0, 0), (Fraction(1, 2), Fraction(1, 2), 0)],
        asym=[(0.3057, 0.0728, 0.0434), (0.3028, 0.3108, 0.0437), (0.0864, 0.3838, 0.25), (0.0873, 0.2252, 0.25)],
        # centre, boundary radius (A), cross-section area (A^2)
        pores=[((0.0, 0.0, 0.0), 7.5, 35.7), ((0.0, 0.5, 0.0), 5.5, 11.6)],
    ),
    "MFI": dict(
        lattice=(20.090, 19.738, 13.142),
        ops=["x,y,z", "-x+1/2,-y,z+1/2", "-x,y+1/2,-z", "x+1/2,-y+1/2,-z+1/2",
             "-x,-y,-z", "x+1/2,y,-z+1/2", "x,-y+1/2,z", "-x+1/2,y+1/2,z+1/2"],
        centering=[(0, 0, 0)],
        asym=[(0.4224, 0.0565, -0.3389), (0.3072, 0.0277, -0.1859), (0.2791, 0.0613, 0.0312),
              (0.1221, 0.0630, 0.0267), (0.0713, 0.0272, -0.1862), (0.1864, 0.0590, -0.3263),
              (0.4227, -0.1725, -0.3280), (0.3078, -0.1302, -0.1875), (0.2755, -0.1728, 0.0311),
              (0.1206, -0.1731, 0.0298), (0.0704, -0.1304, -0.1858), (0.1871, -0.1722, -0.3201)],
        pores=[((0.0, 0.0, 0.5), 6.3, 23.3), ((0.2, 0.25, 0.85), 6.3, 22.0), ((0.0, 0.25, 0.64), 7.4, 30.0)],
    ),
}


def write(name, spec, path):
    L = np.diag(spec["lattice"])
    ops = with_centering([parse_op(s) for s in spec["ops"]], spec["centering"])
    sites = expand(ops, spec["asym"])
    lines = ["porenet-framework 1", f"name {name}", "lattice"]
    for r in range(3):
        lines.append(" ".join(f"{L[r, k]:.4f}" for k in range(3)))
    lines += [f"symop {fmt_op(W, t)}" for W, t in ops]
    lines += ["site {:.6f} {:.6f} {:.6f}".format(*(clean(v) for v in x)) for x in sites]
    for centre, radius, area in spec["pores"]:
        for c in orbit(ops, centre):
            members = [i for i, x in enumerate(sites) if dist(L, c, x) < radius]
            cs = " ".join(f"{clean(v):.6f}" for v in c)
            lines.append(f"pore {cs} area {area} : " + " ".join(map(str, members)))
    path.write_text("\n".join(lines) + "\n")
    print(f"{name}: {len(ops)} ops, {len(sites)} sites, {len(lines)} lines -> {path}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "frameworks"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, spec in FRAMEWORKS.items():
        write(name, spec, out / f"{name}.fw")


if __name__ == "__main__":
    main()
