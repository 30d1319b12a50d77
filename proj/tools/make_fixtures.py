#!/usr/bin/env python3
"""Regenerates the bundled network fixtures under data/.

Impedances are given per km for a Kron-reduced four-wire LV cable; branch
admittances are written in siemens.
"""
import json
import math
import pathlib

import numpy as np

DATA = pathlib.Path(__file__).resolve().parent.parent / "data"

Z_SELF = complex(0.25, 0.08)  # ohm/km
Z_MUT = complex(0.06, 0.03)
C_SHUNT = 0.3e-6  # F/km, only used by the lossy three-bus fixture


def zmat(n):
    z = np.full((n, n), Z_MUT, dtype=complex)
    np.fill_diagonal(z, Z_SELF)
    return z


def mat_json(m):
    return {"re": np.real(m).tolist(), "im": np.imag(m).tolist()}


def branch(bid, f, t, length_m, nphase=3, shunt=False):
    y = np.linalg.inv(zmat(nphase) * length_m / 1000.0)
    out = {"id": bid, "from": f, "to": t, "y_series": mat_json(y)}
    ysh = np.zeros((nphase, nphase), dtype=complex)
    if shunt:
        np.fill_diagonal(ysh, 1j * 2 * math.pi * 50 * C_SHUNT * length_m / 1000.0 / 2)
    out["y_shunt_from"] = mat_json(ysh)
    out["y_shunt_to"] = mat_json(ysh)
    return out


def bus(bid, ref=False, phases="abc"):
    return {"id": bid, "phases": list(phases), "kind": "reference" if ref else "ordinary"}


def load(lid, b, phases, p_kw):
    tan_phi = math.tan(math.acos(0.95))
    return {
        "id": lid,
        "bus": b,
        "phases": list(phases),
        "kind": "load",
        "connection": "wye",
        "profile": {"p": list(p_kw), "q": [round(p * tan_phi, 6) for p in p_kw]},
    }


def write(name, buses, branches, devices):
    net = {
        "bases": {"voltage_v": 230.0, "power_va": 1000.0},
        "units": {"admittance": "siemens", "power": "kw"},
        "buses": buses,
        "branches": branches,
        "devices": devices,
    }
    (DATA / name).write_text(json.dumps(net, indent=1) + "\n")


def two_bus():
    write("two_bus.json", [bus("b1", ref=True), bus("b2")], [branch("l1", "b1", "b2", 80.0)],
          [load("u1", "b2", "abc", [1.2, 0.7, 0.9])])


def three_bus():
    buses = [bus("s", ref=True), bus("m"), bus("e", phases="ab")]
    branches = [branch("l1", "s", "m", 60.0, shunt=True), branch("l2", "m", "e", 40.0, nphase=2, shunt=True)]
    devices = [load("u1", "m", "c", [0.8]), load("u2", "e", "a", [1.1]), load("u3", "e", "b", [0.5])]
    write("three_bus.json", buses, branches, devices)


def feeder30():
    buses = [bus("b1", ref=True)] + [bus(f"b{i}") for i in range(2, 31)]
    branches = []
    trunk_len = [25, 40, 35, 50, 45, 30, 55, 40, 35, 45, 50, 30, 40, 35, 55, 45, 40, 30, 50]
    for k, i in enumerate(range(2, 21)):
        branches.append(branch(f"l{i - 1}", f"b{i - 1}", f"b{i}", trunk_len[k]))
    lat_a = [35, 40, 30, 45, 35]
    prev = "b8"
    for k, i in enumerate(range(21, 26)):
        branches.append(branch(f"l{i - 1}", prev, f"b{i}", lat_a[k]))
        prev = f"b{i}"
    lat_b = [30, 45, 40, 35, 50]
    prev = "b14"
    for k, i in enumerate(range(26, 31)):
        branches.append(branch(f"l{i - 1}", prev, f"b{i}", lat_b[k]))
        prev = f"b{i}"
    sites = ["b5", "b9", "b12", "b16", "b18", "b20", "b23", "b25", "b27", "b30"]
    powers = [0.62, 0.35, 1.10, 0.48, 0.80, 0.27, 0.95, 0.55, 0.41, 0.73]
    devices = [load(f"u{k + 1}", s, "abc"[k % 3], [powers[k]]) for k, s in enumerate(sites)]
    write("feeder30.json", buses, branches, devices)


if __name__ == "__main__":
    two_bus()
    three_bus()
    feeder30()
