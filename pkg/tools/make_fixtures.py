"""Regenerate the bundled frontier and scenario fixture files.

Run from the repository root: ``python3 tools/make_fixtures.py``.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml

DATA = Path(__file__).resolve().parents[1] / "src" / "gbwm" / "data"


def markowitz_curve(means, cov):
    """Coefficients (a, b, c) of the frontier variance a*r**2 + b*r + c."""
    m = np.asarray(means, float)
    inv = np.linalg.inv(np.asarray(cov, float))
    one = np.ones(len(m))
    A, B, C = m @ inv @ one, m @ inv @ m, one @ inv @ one
    D = B * C - A * A
    g = (B * inv @ one - A * inv @ m) / D
    h = (C * inv @ m - A * inv @ one) / D
    cov = np.asarray(cov, float)
    return h @ cov @ h, 2 * g @ cov @ h, g @ cov @ g


def hyperbola(r0, s0, r1, s1):
    """Frontier with minimum volatility s0 at return r0 passing through (r1, s1)."""
    a = (s1**2 - s0**2) / (r1 - r0) ** 2
    return a, -2 * a * r0, s0**2 + a * r0**2


def write_frontier(name, coeffs, r_lo, r_hi, note, n=57):
    a, b, c = coeffs
    r = np.linspace(r_lo, r_hi, n)
    v = np.sqrt(a * r * r + b * r + c)
    doc = {
        "name": name,
        "note": note,
        "anchors": [[round(float(x), 10), round(float(y), 10)] for x, y in zip(r, v)],
    }
    (DATA / "frontiers" / f"{name}.yaml").write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))


def frontiers():
    means = [0.0493, 0.0770, 0.0886]
    cov = [[0.0017, -0.0017, -0.0021], [-0.0017, 0.0396, 0.03086], [-0.0021, 0.03086, 0.0392]]
    a, b, c = markowitz_curve(means, cov)
    r_min = -b / (2 * a)
    write_frontier(
        "baseline", (a, b, c), r_min, 0.0886,
        "Three-fund mean-variance frontier (bond, US stock, international stock), "
        "from the minimum-variance return to the highest single-fund return.",
    )
    synthetic = {
        "alt_a": (0.040, 0.030, 0.110, 0.200),
        "alt_b": (0.030, 0.025, 0.120, 0.180),
        "alt_c": (0.050, 0.045, 0.100, 0.160),
        "alt_d": (0.035, 0.040, 0.095, 0.150),
        "alt_e": (0.045, 0.035, 0.115, 0.220),
    }
    for name, (r0, s0, r1, s1) in synthetic.items():
        write_frontier(
            name, hyperbola(r0, s0, r1, s1), r0, r1,
            "Synthetic stress frontier (steeper than baseline) for out-of-distribution tests.",
        )


def goal(t, cost, util, name=None):
    d = {"t": int(t), "options": [[float(cost), float(util)]]}
    if name:
        d["name"] = name
    return d


TYPO_11_66 = "source listing reads [2,11,66,12]; interpreted as cost 11.66 at t=2"
TYPO_23_32 = "source listing reads [11,23,32,21]; interpreted as cost 23.32 at t=11"

LADDER = {
    1: (10.8, 11), 2: (11.66, 12), 3: (12.60, 13), 4: (13.60, 14), 5: (14.69, 15),
    6: (15.87, 16), 7: (17.14, 17), 8: (18.50, 18), 9: (19.99, 19), 10: (21.59, 20),
    11: (23.32, 21), 12: (25.18, 22), 13: (27.20, 23), 14: (29.37, 24), 15: (31.72, 25),
    16: (34.25, 26),
}


def base_cases():
    """The 33 infusion-free cases as (T, W0, goals, notes)."""
    cases = {}
    single = {1: (10, 150), 2: (10, 200), 3: (10, 400), 4: (40, 600), 5: (40, 1200),
              6: (40, 2400), 7: (100, 50000), 8: (100, 500000), 9: (100, 20000000)}
    for k, (T, C) in single.items():
        cases[k] = (T, 100, [goal(T, C, 1)], [])
    cases[10] = (3, 100, [goal(2, 75, 0.9), goal(3, 75, 1)], [])
    cases[11] = (20, 100, [goal(10, 200, 1.3), goal(20, 500, 1)], [])
    cases[12] = (20, 100, [goal(15, 200, 1.3), goal(20, 300, 1)], [])
    cases[13] = (35, 100, [goal(5, 50, 1), goal(25, 500, 0.5), goal(35, 1000, 1)], [])
    cases[14] = (60, 100, [goal(15, 300, 0.7), goal(30, 6000, 1.2), goal(45, 5000, 0.2), goal(60, 20000, 1)], [])
    cases[15] = (25, 100, [goal(3, 30, 0.2), goal(5, 70, 0.3), goal(8, 70, 0.3), goal(25, 1000, 1)], [])
    cases[16] = (40, 100, [goal(10, 150, 1.5), goal(30, 400, 1), goal(35, 500, 1), goal(40, 600, 1)], [])
    for k, C in zip((17, 18, 19, 20), (15, 25, 50, 75)):
        cases[k] = (20, 100, [goal(t, C, 1) for t in range(2, 21, 2)], [])
    ts = range(1, 61)
    cases[21] = (60, 100, [goal(t, 20, 1) for t in ts], [])
    cases[22] = (60, 100, [goal(t, t, 1) for t in ts], [])
    cases[23] = (60, 100, [goal(t, t, 100 + t) for t in ts], [])
    cases[24] = (60, 100, [goal(t, t, 100 - t) for t in ts], [])
    cases[25] = (60, 100, [goal(t, 60 - t / 2, 1) for t in ts], [])
    cases[26] = (60, 100, [goal(t, 60 - t / 2, 100 + t) for t in ts], [])
    cases[27] = (60, 100, [goal(t, 60 - t / 2, 100 - t) for t in ts], [])
    cases[28] = (30, 100, [goal(3, 35, 1.5), goal(6, 35, 1.3), goal(9, 5, 0.4), goal(12, 50, 1),
                           goal(15, 15, 0.7), goal(18, 5, 0.3), goal(21, 45, 0.6), goal(24, 120, 0.9),
                           goal(27, 170, 1.1), goal(30, 160, 1)], [])
    ladder_sets = {29: (12, [16]), 30: (21.63, [8, 16]), 31: (38.99, [4, 8, 12, 16]),
                   32: (70.27, list(range(2, 17, 2))), 33: (126.67, list(range(1, 17)))}
    for k, (W0, times) in ladder_sets.items():
        notes = []
        if 2 in times:
            notes.append(TYPO_11_66)
        if 11 in times:
            notes.append(TYPO_23_32)
        cases[k] = (16, W0, [goal(t, *LADDER[t]) for t in times], notes)
    return cases


SINGLE_INFUSIONS = {34: (1, 10), 36: (1, 10), 38: (6, 12), 40: (21, 19), 42: (27, 22), 44: (6, 12),
                    46: (13, 15), 48: (11, 14), 50: (10, 13), 52: (11, 14), 54: (38, 31), 56: (41, 34),
                    58: (45, 38), 60: (49, 43), 62: (14, 3), 64: (15, 6), 66: (16, 21)}


def write_case(path, name, T, W0, goals, infusions, notes, description):
    doc = {"name": name, "description": description, "T": T, "h": 1.0, "W0": float(W0),
           "infusions": infusions, "goals": goals, "portfolios": {"frontier": "baseline", "P": 15}}
    header = "".join(f"# NOTE: {n}\n" for n in notes)
    path.write_text(header + yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))


def suite66():
    out = DATA / "suite66"
    out.mkdir(parents=True, exist_ok=True)
    base = base_cases()
    files = []
    for k in range(1, 67):
        b = k if k <= 33 else k - 33
        T, W0, goals, notes = base[b]
        notes = list(notes)
        infusions = []
        desc = "no infusions" if k <= 33 else f"case {b} with infusions"
        if k > 33 and k in SINGLE_INFUSIONS:
            infusions = [list(SINGLE_INFUSIONS[k])]
        elif k > 33:
            base_amt = math.ceil(W0 / (10 * (T - 1)))
            infusions = [[t, round(1.03**t * base_amt, 12)] for t in range(1, T)]
            notes.append(f"yearly infusions 1.03**t * {base_amt}, base amount W0/(10(T-1)) rounded up")
        name = f"case_{k:02d}"
        write_case(out / f"{name}.yaml", name, T, W0, goals, infusions, notes, desc)
        files.append(f"{name}.yaml")
    (out / "manifest.yaml").write_text(yaml.safe_dump({"name": "suite66", "cases": files}, sort_keys=False))


def concurrent():
    out = DATA / "concurrent"
    out.mkdir(parents=True, exist_ok=True)
    pf = {"frontier": "baseline", "P": 15}
    yearly = [[t, 1.0] for t in range(1, 60)]
    cars = [{"t": t, "name": "car", "options": [[32.0, 125.0], [22.0, 110.0]]} for t in range(5, 60, 5)]
    trips = [{"t": t, "name": "trip", "options": [[t / 2 + 10.0, 100.0]]} for t in range(10, 60, 10)]
    cp = {}
    cp["CP1"] = {
        "description": "synthetic: three concurrent goals at t=5 (2x3x5 combinations), one partial goal at t=10",
        "T": 10, "h": 1.0, "W0": 100.0, "infusions": [],
        "goals": [
            {"t": 5, "name": "a", "options": [[40.0, 60.0]]},
            {"t": 5, "name": "b", "options": [[30.0, 40.0], [20.0, 30.0]]},
            {"t": 5, "name": "c", "options": [[50.0, 80.0], [40.0, 70.0], [30.0, 55.0], [20.0, 35.0]]},
            {"t": 10, "name": "d", "options": [[60.0, 100.0], [40.0, 75.0]]},
        ],
        "portfolios": pf,
    }
    rng = np.random.default_rng(2022)
    goals2 = []
    partial_left = 138
    for k in range(301):
        t = 1 + k % 60
        cost = round(float(rng.uniform(2.0, 12.0) * 1.03**t), 2)
        util = round(float(rng.uniform(5.0, 60.0)), 2)
        opts = [[cost, util]]
        if partial_left > 0 and k % 2 == 0:
            opts.append([round(cost * 0.6, 2), round(util * 0.75, 2)])
            partial_left -= 1
        goals2.append({"t": t, "options": opts})
    cp["CP2"] = {
        "description": "synthetic stand-in: 301 goals (138 with a partial level) over 60 years plus cars",
        "T": 60, "h": 1.0, "W0": 100.0, "infusions": [[t, 5.0] for t in range(1, 60)],
        "goals": goals2 + cars, "portfolios": pf,
    }
    cp["CP3"] = {
        "description": "car goals every five years (fancy or less fancy), 1 per year infused",
        "T": 60, "h": 1.0, "W0": 25.0, "infusions": yearly, "goals": cars, "portfolios": pf,
    }
    cp["CP4"] = {
        "description": "cars every five years plus a trip every ten years, 1 per year infused",
        "T": 60, "h": 1.0, "W0": 25.0, "infusions": yearly, "goals": cars + trips, "portfolios": pf,
    }
    notes = {"CP1": "goal values invented; only the combination structure is known",
             "CP2": "goal values invented; only the goal counts and horizon are known",
             "CP3": "horizon T=60 assumed", "CP4": "horizon T=60 assumed"}
    for name, doc in cp.items():
        doc = {"name": name, **doc}
        (out / f"{name}.yaml").write_text(f"# NOTE: {notes[name]}\n" + yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))
    (out / "manifest.yaml").write_text(yaml.safe_dump({"name": "concurrent", "cases": [f"{n}.yaml" for n in cp]}, sort_keys=False))


if __name__ == "__main__":
    frontiers()
    suite66()
    concurrent()
