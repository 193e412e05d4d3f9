"""Bundled test networks.

All fixtures are LV-style (230 V phase-to-neutral) with SI units: ohm/km
impedances, watt/var injections. They are deliberately small; the feeder
builder produces a ~30 bus network exercising every component type.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

from .network import (
    Bus,
    Generator,
    Line,
    LineCode,
    Load,
    Network,
    Shunt,
    Terminal,
    VoltageSource,
    add_bank,
    assemble_transformer_bank,
    balanced_phasors,
)

PF_ANGLE = math.acos(0.95)
Q_OVER_P = math.tan(PF_ANGLE)  # reactive share at power factor 0.95

U_PHASE = 230.0


def _full_matrix(selfs, mutuals):
    n = len(selfs)
    z = np.zeros((n, n), dtype=complex)
    for i in range(n):
        z[i, i] = selfs[i]
    for (i, j), v in mutuals.items():
        z[i, j] = v
        z[j, i] = v
    return z


def lc4_sym() -> LineCode:
    """Fully transposed 4-wire code; z_plus = 0.30 + 0.07j ohm/km."""
    zs = 0.35 + 0.25j
    zm = 0.05 + 0.18j
    z = _full_matrix([zs] * 4, {(i, j): zm for i in range(4) for j in range(i + 1, 4)})
    return LineCode(R=z.real, X=z.imag, name="lc4_sym")


def lc4_unbal() -> LineCode:
    """Untransposed 4-wire code with distinct pairwise couplings."""
    selfs = [0.33 + 0.26j, 0.34 + 0.25j, 0.35 + 0.24j, 0.40 + 0.28j]
    mut = {
        (0, 1): 0.05 + 0.20j,
        (0, 2): 0.05 + 0.16j,
        (1, 2): 0.05 + 0.18j,
        (0, 3): 0.04 + 0.19j,
        (1, 3): 0.04 + 0.17j,
        (2, 3): 0.04 + 0.15j,
    }
    z = _full_matrix(selfs, mut)
    return LineCode(R=z.real, X=z.imag, name="lc4_unbal")


def lc4_charged() -> LineCode:
    """Symmetric code with a small capacitive shunt, for charging paths."""
    base = lc4_sym()
    b = np.diag([3.0e-6] * 4)
    return LineCode(R=base.R, X=base.X, B_fr=b, B_to=b, name="lc4_charged")


def lc2() -> LineCode:
    z = np.array([[0.40 + 0.30j, 0.05 + 0.10j], [0.05 + 0.10j, 0.45 + 0.35j]])
    return LineCode(R=z.real, X=z.imag, name="lc2")


def four_wire_bus(bid, ground_neutral=False):
    return Bus(
        bid,
        (
            Terminal("a"),
            Terminal("b"),
            Terminal("c"),
            Terminal("n", grounded=ground_neutral),
        ),
    )


def lv_phasors(u=U_PHASE):
    ph = balanced_phasors(u)
    ph["n"] = 0.0 + 0.0j
    return ph


def grid_generator(gid, bus, cost=1.0e-3):
    """Unbounded wye import/export generator modelling the upstream grid."""
    big = 1.0e9
    return Generator(
        id=gid,
        bus=bus,
        connection="wye",
        P_min=[-big] * 3,
        P_max=[big] * 3,
        Q_min=[-big] * 3,
        Q_max=[big] * 3,
        map=("a", "b", "c", "n"),
        cost=cost,
    )


def f1(ground_all=False, with_dg=False, dg_pmax=30_000.0, line_km=0.6) -> Network:
    """Two buses, one 4-wire line, one unbalanced wye constant-power load.

    The source neutral is perfectly grounded; with ``ground_all`` the load
    bus neutral is grounded as well (the exact-Kron configuration). With
    ``with_dg`` a single-phase generator on phase a of the load bus makes
    the network dispatchable.
    """
    net = Network()
    net.buses["src"] = four_wire_bus("src", ground_neutral=True)
    net.buses["load"] = four_wire_bus("load", ground_neutral=ground_all)
    code = lc4_sym()
    net.linecodes[code.name] = code
    net.lines["l1"] = Line(
        id="l1",
        from_bus="src",
        to_bus="load",
        length=line_km,
        code=code,
        map_from=("a", "b", "c", "n"),
        map_to=("a", "b", "c", "n"),
    )
    p = np.array([3000.0, 2000.0, 1000.0])
    net.loads["d1"] = Load(
        id="d1",
        bus="load",
        connection="wye",
        model="power",
        P_nom=p,
        Q_nom=p * Q_OVER_P,
        map=("a", "b", "c", "n"),
        U_nom=U_PHASE,
    )
    net.generators["grid"] = grid_generator("grid", "src")
    if with_dg:
        net.generators["dg1"] = Generator(
            id="dg1",
            bus="load",
            connection="wye",
            P_min=[0.0],
            P_max=[dg_pmax],
            Q_min=[0.0],
            Q_max=[0.0],
            map=("a", "n"),
            cost=1.0e-4,
        )
    net.sources["slack"] = VoltageSource("slack", "src", lv_phasors())
    return net


def f2() -> Network:
    """Six-bus feeder with heavily unbalanced single-phase loads.

    Neutrals are ungrounded except at the source, so the return current
    produces genuine neutral shift along the whole feeder.
    """
    net = Network()
    ids = ["s", "b1", "b2", "b3", "b4", "b5"]
    for bid in ids:
        net.buses[bid] = four_wire_bus(bid, ground_neutral=(bid == "s"))
    code = lc4_unbal()
    net.linecodes[code.name] = code
    for k in range(len(ids) - 1):
        lid = f"l{k+1}"
        net.lines[lid] = Line(
            id=lid,
            from_bus=ids[k],
            to_bus=ids[k + 1],
            length=0.3,
            code=code,
            map_from=("a", "b", "c", "n"),
            map_to=("a", "b", "c", "n"),
        )
    placements = [
        ("d1", "b1", "a", 2000.0),
        ("d2", "b2", "a", 2000.0),
        ("d3", "b3", "a", 2500.0),
        ("d4", "b4", "a", 2500.0),
        ("d5", "b4", "b", 800.0),
        ("d6", "b5", "a", 3000.0),
        ("d7", "b5", "c", 1000.0),
        ("d8", "b5", "a", 2000.0),
    ]
    for did, bus, phase, p in placements:
        net.loads[did] = Load(
            id=did,
            bus=bus,
            connection="wye",
            model="power",
            P_nom=[p],
            Q_nom=[p * Q_OVER_P],
            map=(phase, "n"),
            U_nom=U_PHASE,
        )
    net.generators["grid"] = grid_generator("grid", "s")
    net.sources["slack"] = VoltageSource("slack", "s", lv_phasors())
    return net


def f3(ground_mid=False) -> Network:
    """Three buses in a single-phase (phase + neutral) chain.

    The neutral is grounded at the source only; ``ground_mid`` grounds the
    intermediate bus neutral, which is the non-physical configuration the
    power-balance form cannot distinguish from this one.
    """
    net = Network()
    for bid, g in (("s", True), ("m", ground_mid), ("e", False)):
        net.buses[bid] = Bus(
            bid, (Terminal("a"), Terminal("n", grounded=g))
        )
    code = lc2()
    net.linecodes[code.name] = code
    for lid, fr, to in (("l1", "s", "m"), ("l2", "m", "e")):
        net.lines[lid] = Line(
            id=lid,
            from_bus=fr,
            to_bus=to,
            length=0.4,
            code=code,
            map_from=("a", "n"),
            map_to=("a", "n"),
        )
    net.loads["d1"] = Load(
        id="d1",
        bus="e",
        connection="wye",
        model="power",
        P_nom=[2000.0],
        Q_nom=[2000.0 * Q_OVER_P],
        map=("a", "n"),
        U_nom=U_PHASE,
    )
    big = 1.0e9
    net.generators["grid"] = Generator(
        id="grid",
        bus="s",
        connection="wye",
        P_min=[-big],
        P_max=[big],
        Q_min=[-big],
        Q_max=[big],
        map=("a", "n"),
        cost=1.0e-3,
    )
    net.sources["slack"] = VoltageSource(
        "slack", "s", {"a": complex(U_PHASE, 0.0), "n": 0.0 + 0.0j}
    )
    return net


def chain(n_buses, ground_all=False, line_km=0.2) -> Network:
    """Lines-only chain of four-wire buses (plus the anchoring slack)."""
    net = Network()
    ids = [f"b{k}" for k in range(n_buses)]
    for k, bid in enumerate(ids):
        net.buses[bid] = four_wire_bus(bid, ground_neutral=(k == 0 or ground_all))
    code = lc4_sym()
    net.linecodes[code.name] = code
    for k in range(n_buses - 1):
        lid = f"l{k+1}"
        net.lines[lid] = Line(
            id=lid,
            from_bus=ids[k],
            to_bus=ids[k + 1],
            length=line_km,
            code=code,
            map_from=("a", "b", "c", "n"),
            map_to=("a", "b", "c", "n"),
        )
    net.generators["grid"] = grid_generator("grid", "b0")
    net.sources["slack"] = VoltageSource("slack", "b0", lv_phasors())
    return net


def feeder30() -> Network:
    """Synthetic ~30-bus feeder exercising every component type.

    A Dy transformer feeds a four-wire main with a Yy isolation bank midway,
    two spurs, mixed load models (wye, delta, single-phase, ZIP, constant
    current), a lossy neutral grounding and one line with charging.
    """
    net = Network()
    net.buses["hv"] = Bus(
        "hv",
        (Terminal("a"), Terminal("b"), Terminal("c"), Terminal("n", grounded=True)),
    )
    main = [f"m{k:02d}" for k in range(14)]
    for k, bid in enumerate(main):
        net.buses[bid] = four_wire_bus(bid, ground_neutral=(k == 0))
    tail = [f"t{k:02d}" for k in range(5)]
    for k, bid in enumerate(tail):
        net.buses[bid] = four_wire_bus(bid, ground_neutral=(k == 0))
    for bid in ("s1", "s2", "s3", "s4"):
        net.buses[bid] = four_wire_bus(bid)
    for code in (lc4_sym(), lc4_unbal(), lc4_charged()):
        net.linecodes[code.name] = code
    sym, unbal, charged = (
        net.linecodes["lc4_sym"],
        net.linecodes["lc4_unbal"],
        net.linecodes["lc4_charged"],
    )

    def add_line(lid, fr, to, code, km):
        net.lines[lid] = Line(
            id=lid,
            from_bus=fr,
            to_bus=to,
            length=km,
            code=code,
            map_from=("a", "b", "c", "n"),
            map_to=("a", "b", "c", "n"),
        )

    for k in range(len(main) - 1):
        add_line(f"lm{k:02d}", main[k], main[k + 1], unbal if k % 2 else sym, 0.12)
    for k in range(len(tail) - 1):
        add_line(f"lt{k:02d}", tail[k], tail[k + 1], sym, 0.15)
    add_line("ls1", "m04", "s1", charged, 0.2)
    add_line("ls2", "s1", "s2", sym, 0.15)
    add_line("ls3", "m08", "s3", unbal, 0.18)
    add_line("ls4", "m12", "s4", sym, 0.22)

    u_ll = U_PHASE * math.sqrt(3.0)
    hv_phasors = balanced_phasors(400.0)
    hv_phasors["n"] = 0.0 + 0.0j
    net.sources["slack"] = VoltageSource("slack", "hv", hv_phasors)
    net.generators["grid"] = grid_generator("grid", "hv")
    # Dy step: primary winding sees 400 sqrt(3), secondary 230
    dy = assemble_transformer_bank(
        "Dy",
        "tx1",
        "hv",
        "m00",
        turns_ratio=400.0 * math.sqrt(3.0) / U_PHASE,
        series_impedance=0.015 + 0.03j,
    )
    net = add_bank(net, dy)
    yy = assemble_transformer_bank(
        "Yy",
        "tx2",
        "m13",
        "t00",
        turns_ratio=1.0,
        series_impedance=0.02 + 0.05j,
    )
    net = add_bank(net, yy)

    def wye_load(did, bus, p3):
        p = np.asarray(p3, dtype=float)
        net.loads[did] = Load(
            id=did,
            bus=bus,
            connection="wye",
            model="power",
            P_nom=p,
            Q_nom=p * Q_OVER_P,
            map=("a", "b", "c", "n"),
            U_nom=U_PHASE,
        )

    def one_phase(did, bus, phase, p, model="power", **kw):
        net.loads[did] = Load(
            id=did,
            bus=bus,
            connection="wye",
            model=model,
            P_nom=[p],
            Q_nom=[p * Q_OVER_P],
            map=(phase, "n"),
            U_nom=U_PHASE,
            **kw,
        )

    wye_load("d01", "m03", [1800.0, 1500.0, 1200.0])
    wye_load("d02", "m07", [900.0, 2100.0, 1400.0])
    wye_load("d03", "t02", [1600.0, 800.0, 1900.0])
    one_phase("d04", "m02", "a", 1500.0)
    one_phase("d05", "m05", "b", 2000.0)
    one_phase("d06", "m06", "c", 1200.0)
    one_phase("d07", "m09", "a", 2500.0)
    one_phase("d08", "s2", "b", 1000.0)
    one_phase("d09", "t03", "a", 1800.0)
    one_phase("d14", "s4", "c", 1400.0)
    one_phase("d15", "t04", "b", 900.0)
    one_phase("d10", "m10", "c", 900.0, model="current")
    one_phase("d11", "s3", "a", 1100.0, model="impedance")
    one_phase(
        "d12", "m08", "b", 1300.0, model="zip", zip_weights=(0.3, 0.3, 0.4)
    )
    net.loads["d13"] = Load(
        id="d13",
        bus="t01",
        connection="delta",
        model="impedance",
        P_nom=[700.0, 900.0, 800.0],
        Q_nom=[240.0, 300.0, 260.0],
        map=("a", "b", "c"),
        U_nom=u_ll,
    )
    net.shunts["gsh1"] = Shunt(
        "gsh1", "m06", np.array([[1.0 / (5.0 + 0.0j)]]), ("n",)
    )
    return net
