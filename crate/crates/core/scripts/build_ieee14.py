"""Regenerate data/ieee14.json from the standard IEEE 14-bus branch table.

Y-bus follows the usual pi-model with off-nominal transformer taps
(no phase shifters). Generator inertia/damping values are representative
machine constants, not part of the load-flow case.
"""
import json
import pathlib

import numpy as np

BASE_MVA = 100.0
# bus, Pd (MW), Bs (MVAr at V=1)
BUSES = [
    (1, 0.0, 0.0), (2, 21.7, 0.0), (3, 94.2, 0.0), (4, 47.8, 0.0), (5, 7.6, 0.0),
    (6, 11.2, 0.0), (7, 0.0, 0.0), (8, 0.0, 0.0), (9, 29.5, 19.0), (10, 9.0, 0.0),
    (11, 3.5, 0.0), (12, 6.1, 0.0), (13, 13.5, 0.0), (14, 14.9, 0.0),
]
# from, to, r, x, b, tap
BRANCHES = [
    (1, 2, 0.01938, 0.05917, 0.0528, 0), (1, 5, 0.05403, 0.22304, 0.0492, 0),
    (2, 3, 0.04699, 0.19797, 0.0438, 0), (2, 4, 0.05811, 0.17632, 0.0340, 0),
    (2, 5, 0.05695, 0.17388, 0.0346, 0), (3, 4, 0.06701, 0.17103, 0.0128, 0),
    (4, 5, 0.01335, 0.04211, 0.0, 0), (4, 7, 0.0, 0.20912, 0.0, 0.978),
    (4, 9, 0.0, 0.55618, 0.0, 0.969), (5, 6, 0.0, 0.25202, 0.0, 0.932),
    (6, 11, 0.09498, 0.19890, 0.0, 0), (6, 12, 0.12291, 0.25581, 0.0, 0),
    (6, 13, 0.06615, 0.13027, 0.0, 0), (7, 8, 0.0, 0.17615, 0.0, 0),
    (7, 9, 0.0, 0.11001, 0.0, 0), (9, 10, 0.03181, 0.08450, 0.0, 0),
    (9, 14, 0.12711, 0.27038, 0.0, 0), (10, 11, 0.08205, 0.19207, 0.0, 0),
    (12, 13, 0.22092, 0.19988, 0.0, 0), (13, 14, 0.17093, 0.34802, 0.0, 0),
]
# bus, Pg (MW), Vg (p.u.), H (s), D (p.u.)
GENERATORS = [
    (1, 232.4, 1.060, 5.148, 2.0), (2, 40.0, 1.045, 6.540, 2.0),
    (3, 0.0, 1.010, 6.540, 2.0), (6, 0.0, 1.070, 5.060, 2.0),
    (8, 0.0, 1.090, 5.060, 2.0),
]

n = len(BUSES)
Y = np.zeros((n, n), dtype=complex)
for f, t, r, x, b, tap in BRANCHES:
    tap = tap or 1.0
    ys = 1.0 / complex(r, x)
    i, j = f - 1, t - 1
    Y[i, i] += (ys + 1j * b / 2) / tap**2
    Y[j, j] += ys + 1j * b / 2
    Y[i, j] -= ys / tap
    Y[j, i] -= ys / tap
for bus, _, bs in BUSES:
    Y[bus - 1, bus - 1] += 1j * bs / BASE_MVA

assert np.allclose(Y, Y.T)
doc = {
    "name": "ieee14",
    "base_mva": BASE_MVA,
    "buses": [{"id": b, "load": round(pd / BASE_MVA, 6)} for b, pd, _ in BUSES],
    "generators": [
        {"bus": b, "H": h, "D": d, "Pm": round(pg / BASE_MVA, 6), "V": v}
        for b, pg, v, h, d in GENERATORS
    ],
    "ybus": {
        "G": [[float(f"{v:.12g}") for v in row] for row in Y.real],
        "B": [[float(f"{v:.12g}") for v in row] for row in Y.imag],
    },
    "frequencies": {"omega_B": 2 * np.pi * 60.0, "omega_s": 1.0},
}
out = pathlib.Path(__file__).resolve().parent.parent / "data" / "ieee14.json"
out.write_text(json.dumps(doc, indent=1) + "\n")
print("wrote", out)
