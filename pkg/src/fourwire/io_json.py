"""JSON network format.

Schema (documented in docs/network_format.md): one object with keys
``buses``, ``linecodes``, ``lines``, ``transformers``, ``loads``,
``generators``, ``shunts``, ``sources``, and optional ``bounds`` / ``meta``.
Complex numbers are [re, im] pairs; matrices are nested lists. Units are
SI: ohm/km and siemens/km for linecodes, volts for phasors and nominal
voltages, watts/vars for powers.
"""

from __future__ import annotations

import json

import numpy as np

from .network import (
    Bus,
    Generator,
    IdealTransformer,
    Line,
    LineCode,
    Load,
    Network,
    Shunt,
    Terminal,
    VoltageSource,
)


def _c2j(z):
    z = complex(z)
    return [z.real, z.imag]


def _j2c(v):
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def _mat2j(m):
    m = np.asarray(m)
    return [[float(x) for x in row] for row in m]


def _cmat2j(m):
    m = np.asarray(m, dtype=complex)
    return [[_c2j(x) for x in row] for row in m]


def _j2cmat(rows):
    return np.array([[_j2c(x) for x in row] for row in rows], dtype=complex)


def network_to_dict(net: Network) -> dict:
    out = {
        "buses": [
            {
                "id": bus.id,
                "terminals": [
                    {
                        "label": t.label,
                        **({"grounded": True} if t.grounded else {}),
                        **(
                            {"grounding_impedance": _c2j(t.grounding_impedance)}
                            if t.grounding_impedance is not None
                            else {}
                        ),
                    }
                    for t in bus.terminals
                ],
            }
            for bus in net.buses.values()
        ],
        "linecodes": {
            name: {
                "R": _mat2j(code.R),
                "X": _mat2j(code.X),
                **(
                    {
                        "G_fr": _mat2j(code.G_fr),
                        "B_fr": _mat2j(code.B_fr),
                        "G_to": _mat2j(code.G_to),
                        "B_to": _mat2j(code.B_to),
                    }
                    if code.has_shunt()
                    else {}
                ),
            }
            for name, code in net.linecodes.items()
        },
        "lines": [
            {
                "id": l.id,
                "from_bus": l.from_bus,
                "to_bus": l.to_bus,
                "length_km": l.length,
                "linecode": l.code.name,
                "map_from": list(l.map_from),
                "map_to": list(l.map_to),
                **({"i_max_a": l.i_max_a} if l.i_max_a else {}),
                **({"s_max_va": l.s_max_va} if l.s_max_va else {}),
            }
            for l in net.lines.values()
        ],
        "transformers": [
            {
                "id": t.id,
                "from_bus": t.from_bus,
                "to_bus": t.to_bus,
                "turns_ratio": t.turns_ratio,
                "map_from": list(t.map_from),
                "map_to": list(t.map_to),
            }
            for t in net.transformers.values()
        ],
        "loads": [
            {
                "id": d.id,
                "bus": d.bus,
                "connection": d.connection,
                "model": d.model,
                "P_nom": [float(p) for p in d.P_nom],
                "Q_nom": [float(q) for q in d.Q_nom],
                "map": list(d.map),
                **({"U_nom": d.U_nom} if d.U_nom else {}),
                **({"zip_weights": list(d.zip_weights)} if d.zip_weights else {}),
            }
            for d in net.loads.values()
        ],
        "generators": [
            {
                "id": g.id,
                "bus": g.bus,
                "connection": g.connection,
                "P_min": [float(v) for v in g.P_min],
                "P_max": [float(v) for v in g.P_max],
                "Q_min": [float(v) for v in g.Q_min],
                "Q_max": [float(v) for v in g.Q_max],
                "map": list(g.map),
                **({"S_max": [float(v) for v in g.S_max]} if g.S_max is not None else {}),
                **({"cost": g.cost} if g.cost else {}),
            }
            for g in net.generators.values()
        ],
        "shunts": [
            {"id": s.id, "bus": s.bus, "Y": _cmat2j(s.Y), "map": list(s.map)}
            for s in net.shunts.values()
        ],
        "sources": [
            {
                "id": s.id,
                "bus": s.bus,
                "phasors": {lbl: _c2j(ph) for lbl, ph in s.phasors.items()},
            }
            for s in net.sources.values()
        ],
    }
    if net.bounds:
        out["bounds"] = net.bounds
    if net.meta:
        out["meta"] = {
            k: v for k, v in net.meta.items() if isinstance(v, (str, int, float, dict, list))
        }
    return out


def network_from_dict(data: dict) -> Network:
    net = Network()
    for b in data.get("buses", []):
        terms = tuple(
            Terminal(
                t["label"],
                grounded=bool(t.get("grounded", False)),
                grounding_impedance=(
                    _j2c(t["grounding_impedance"])
                    if "grounding_impedance" in t
                    else None
                ),
            )
            for t in b["terminals"]
        )
        net.buses[b["id"]] = Bus(b["id"], terms)
    for name, c in data.get("linecodes", {}).items():
        net.linecodes[name] = LineCode(
            R=np.asarray(c["R"], dtype=float),
            X=np.asarray(c["X"], dtype=float),
            G_fr=np.asarray(c["G_fr"], dtype=float) if "G_fr" in c else None,
            B_fr=np.asarray(c["B_fr"], dtype=float) if "B_fr" in c else None,
            G_to=np.asarray(c["G_to"], dtype=float) if "G_to" in c else None,
            B_to=np.asarray(c["B_to"], dtype=float) if "B_to" in c else None,
            name=name,
        )
    for l in data.get("lines", []):
        code = net.linecodes[l["linecode"]]
        net.lines[l["id"]] = Line(
            id=l["id"],
            from_bus=l["from_bus"],
            to_bus=l["to_bus"],
            length=float(l["length_km"]),
            code=code,
            map_from=tuple(l["map_from"]),
            map_to=tuple(l["map_to"]),
            i_max_a=l.get("i_max_a"),
            s_max_va=l.get("s_max_va"),
        )
    for t in data.get("transformers", []):
        net.transformers[t["id"]] = IdealTransformer(
            id=t["id"],
            from_bus=t["from_bus"],
            to_bus=t["to_bus"],
            turns_ratio=float(t["turns_ratio"]),
            map_from=tuple(t["map_from"]),
            map_to=tuple(t["map_to"]),
        )
    for d in data.get("loads", []):
        net.loads[d["id"]] = Load(
            id=d["id"],
            bus=d["bus"],
            connection=d.get("connection", "wye"),
            model=d.get("model", "power"),
            P_nom=np.asarray(d["P_nom"], dtype=float),
            Q_nom=np.asarray(d["Q_nom"], dtype=float),
            map=tuple(d["map"]),
            U_nom=d.get("U_nom"),
            zip_weights=tuple(d["zip_weights"]) if "zip_weights" in d else None,
        )
    for g in data.get("generators", []):
        net.generators[g["id"]] = Generator(
            id=g["id"],
            bus=g["bus"],
            connection=g.get("connection", "wye"),
            P_min=np.asarray(g["P_min"], dtype=float),
            P_max=np.asarray(g["P_max"], dtype=float),
            Q_min=np.asarray(g["Q_min"], dtype=float),
            Q_max=np.asarray(g["Q_max"], dtype=float),
            map=tuple(g["map"]),
            S_max=np.asarray(g["S_max"], dtype=float) if "S_max" in g else None,
            cost=float(g.get("cost", 0.0)),
        )
    for s in data.get("shunts", []):
        net.shunts[s["id"]] = Shunt(
            id=s["id"], bus=s["bus"], Y=_j2cmat(s["Y"]), map=tuple(s["map"])
        )
    for s in data.get("sources", []):
        net.sources[s["id"]] = VoltageSource(
            id=s["id"],
            bus=s["bus"],
            phasors={lbl: _j2c(v) for lbl, v in s["phasors"].items()},
        )
    net.bounds = data.get("bounds", {})
    net.meta = data.get("meta", {})
    return net


def save_network(net: Network, path):
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))
