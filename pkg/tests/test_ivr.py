import cmath
import math

import numpy as np
import pytest

from fourwire import fixtures
from fourwire.formulation import BuildError, FormulationConfig
from fourwire.ivr import build_ivr
from fourwire.network import (
    Bus,
    Generator,
    Line,
    LineCode,
    Load,
    Network,
    Shunt,
    Terminal,
    VoltageSource,
)
from fourwire.reduce import kron_reduce_network
from fourwire.solve import newton_pf, solve_pf

from conftest import max_voltage_dev
from oracles import fortescue_direct


def test_f1_pf_system_is_square_with_documented_counts(f1):
    # hand count: load-bus voltages 8, series currents 8, load leg currents 6,
    # slack currents 6 + slack P/Q 6 = 34 variables; line drop 8, load power 6,
    # slack power 6, balance rows 6 (source abc) + 8 (load bus) = 34 equations
    sys = build_ivr(f1, FormulationConfig.pf())
    assert sys.n_vars == 34
    assert sys.n_eq == 34
    assert sys.n_ineq == 0


def test_source_only_network_is_trivially_feasible():
    net = Network()
    net.buses["b"] = fixtures.four_wire_bus("b", ground_neutral=True)
    net.sources["s"] = VoltageSource("s", "b", fixtures.lv_phasors())
    sys = build_ivr(net, FormulationConfig.pf())
    sol = newton_pf(sys)
    assert sol.status == "optimal"
    assert sys.n_vars == 0


def test_line_residual_zero_at_no_current(f1):
    sys = build_ivr(f1, FormulationConfig.pf())
    vm = sys.meta["varmap"]
    x = sys.initial_point().copy()
    # zero currents, equal voltages: copy source phasors onto the load bus
    for part in ("re", "im"):
        for lbl in ("a", "b", "c", "n"):
            src = vm.c[("U", "src", lbl)]
            val = src.re.b if part == "re" else src.im.b
            idx = vm.index_of.get(("U", "load", lbl, part))
            if idx is not None:
                x[idx] = val
    for key, idx in vm.index_of.items():
        if key[0] in ("Is", "Ileg"):
            x[idx] = 0.0
    vals = sys.constraint_values(x)
    for k in sys.rows_tagged("line_ohm"):
        assert abs(vals[k]) < 1e-14


def test_line_total_currents_opposite_without_shunt(f1):
    cfg = FormulationConfig.pf(series_current_only=False)
    sys = build_ivr(f1, cfg)
    vm = sys.meta["varmap"]
    sol = newton_pf(sys)
    assert sol.status == "optimal"
    for c in range(4):
        ifr = vm.c[("Il", "l1", "fr", c)].value(sol.x)
        ito = vm.c[("Il", "l1", "to", c)].value(sol.x)
        assert ifr == pytest.approx(-ito, abs=1e-11)


def test_line_residual_matches_dense_complex_oracle(rng, f1):
    sys = build_ivr(f1, FormulationConfig.pf())
    vm = sys.meta["varmap"]
    x = rng.normal(size=sys.n_vars)
    bases = sys.meta["bases"]
    Z = fixtures.lc4_sym().z * f1.lines["l1"].length / bases.z("src")
    u_fr = np.array([vm.c[("U", "src", l)].value(x) for l in "abcn"])
    u_to = np.array([vm.c[("U", "load", l)].value(x) for l in "abcn"])
    i_s = np.array([vm.c[("Is", "l1", c)].value(x) for c in range(4)])
    want = u_fr - u_to - Z @ i_s
    vals = sys.constraint_values(x)
    for c in range(4):
        got = complex(
            vals[sys.row_of(("line_ohm", "l1", c, "re"))],
            vals[sys.row_of(("line_ohm", "l1", c, "im"))],
        )
        assert got == pytest.approx(want[c], abs=1e-12)


# -- ideal transformer ---------------------------------------------------------


def _two_bus_transformer(n_t=2.0):
    net = Network()
    net.buses["p"] = Bus(
        "p", (Terminal("a"), Terminal("n", grounded=True))
    )
    net.buses["s"] = Bus("s", (Terminal("a"), Terminal("n", grounded=True)))
    from fourwire.network import IdealTransformer

    net.transformers["t1"] = IdealTransformer(
        "t1", "p", "s", n_t, ("a", "n"), ("a", "n")
    )
    net.loads["d"] = Load(
        id="d", bus="s", connection="wye", model="power",
        P_nom=[1000.0], Q_nom=[200.0], map=("a", "n"), U_nom=115.0,
    )
    net.generators["g"] = Generator(
        id="g", bus="p", connection="wye",
        P_min=[-1e9], P_max=[1e9], Q_min=[-1e9], Q_max=[1e9],
        map=("a", "n"), cost=1e-3,
    )
    net.sources["src"] = VoltageSource(
        "src", "p", {"a": complex(230.0, 0.0), "n": 0j}
    )
    return net


def test_transformer_ratio_and_current_coupling():
    net = _two_bus_transformer(n_t=2.0)
    sys = build_ivr(net, FormulationConfig.pf())
    sol = newton_pf(sys)
    assert sol.status == "optimal"
    vm = sys.meta["varmap"]
    bases = sys.meta["bases"]
    u_p = vm.c[("U", "p", "a")].value(sol.x) * bases.u("p")
    u_s = vm.c[("U", "s", "a")].value(sol.x) * bases.u("s")
    assert u_p == pytest.approx(2.0 * u_s, abs=1e-9)
    assert abs(u_s) == pytest.approx(115.0, abs=1e-9)
    i_fr = vm.c[("Itr", "t1", "fr", 0)].value(sol.x) * bases.i("p")
    i_to = vm.c[("Itr", "t1", "to", 0)].value(sol.x) * bases.i("s")
    assert 2.0 * i_fr == pytest.approx(-i_to, abs=1e-9)
    # equal-and-opposite port pairs
    i_fr_y = vm.c[("Itr", "t1", "fr", 1)].value(sol.x)
    assert vm.c[("Itr", "t1", "fr", 0)].value(sol.x) == pytest.approx(
        -i_fr_y, abs=1e-12
    )


def test_transformer_conserves_power_at_solution():
    net = _two_bus_transformer(n_t=2.0)
    sys = build_ivr(net, FormulationConfig.pf())
    sol = newton_pf(sys)
    vm = sys.meta["varmap"]
    bases = sys.meta["bases"]

    def port_power(bus, side):
        u = vm.c[("U", bus, "a")].value(sol.x) - vm.c[("U", bus, "n")].value(sol.x)
        i = vm.c[("Itr", "t1", side, 0)].value(sol.x)
        return u * np.conj(i) * bases.s_base

    assert port_power("p", "fr") + port_power("s", "to") == pytest.approx(
        0.0, abs=1e-8
    )


# -- loads ------------------------------------------------------------------------


def test_impedance_load_conductance_from_nominals():
    net = fixtures.f1()
    net.loads["d1"] = Load(
        id="d1", bus="load", connection="wye", model="impedance",
        P_nom=[1000.0], Q_nom=[0.0], map=("a", "n"), U_nom=230.0,
    )
    sys = build_ivr(net, FormulationConfig.pf())
    # g_d = P / U^2 = 1000 / 52900 siemens, scaled into per-unit
    con = sys.constraints[sys.row_of(("load_z", "d1", "re"))]
    vm = sys.meta["varmap"]
    bases = sys.meta["bases"]
    g_si = 1000.0 / 52900.0
    idx_ur = vm.index_of[("U", "load", "a", "re")]
    coef = dict(zip(con.li, con.lv))[idx_ur]
    assert -coef == pytest.approx(g_si * bases.z("load"))


def test_constant_power_load_draws_nominal(f1):
    sol, sys = solve_pf(f1, "ivr")
    vm = sys.meta["varmap"]
    u = vm.c[("U", "load", "a")].value(sol.x) - vm.c[("U", "load", "n")].value(sol.x)
    i = vm.c[("Ileg", "d1.an")].value(sol.x)
    s = u * np.conj(i) * sys.meta["bases"].s_base
    assert s.real == pytest.approx(3000.0, abs=1e-6)
    assert s.imag == pytest.approx(3000.0 * fixtures.Q_OVER_P, abs=1e-6)


def test_constant_current_load_tracks_voltage_magnitude():
    net = fixtures.f3()
    net.loads["d1"].model = "current"
    sol, sys = solve_pf(net, "ivr")
    assert sol.status == "optimal"
    vm = sys.meta["varmap"]
    u = vm.c[("U", "e", "a")].value(sol.x) - vm.c[("U", "e", "n")].value(sol.x)
    p = vm.scalars[("P", "d1")].value(sol.x) * sys.meta["bases"].s_base
    u_si = abs(u) * sys.meta["bases"].u("e")
    assert p == pytest.approx(2000.0 * u_si / 230.0, rel=1e-9)


def test_sd_recomputable_from_u_and_i(f2):
    sol, sys = solve_pf(f2, "ivr")
    vm = sys.meta["varmap"]
    for rec in vm.legs:
        if rec["kind"] != "load":
            continue
        u1 = vm.c[("U", rec["bus"], rec["t1"])].value(sol.x)
        u2 = vm.c[("U", rec["bus"], rec["t2"])].value(sol.x)
        i = vm.c[("Ileg", rec["id"])].value(sol.x)
        s = (u1 - u2) * np.conj(i) * sys.meta["bases"].s_base
        load = sys.meta["net"].loads[rec["id"]]
        assert s.real == pytest.approx(float(load.P_nom[0]), abs=1e-10 * 1e4)
        assert s.imag == pytest.approx(float(load.Q_nom[0]), abs=1e-10 * 1e4)


# -- KCL wiring (single-bus example with one of each component) --------------------


def test_kcl_rows_follow_conductor_maps():
    net = Network()
    net.buses["i"] = fixtures.four_wire_bus("i")
    net.buses["j"] = fixtures.four_wire_bus("j", ground_neutral=True)
    code = fixtures.lc4_sym()
    net.linecodes[code.name] = code
    net.lines["l"] = Line(
        id="l", from_bus="j", to_bus="i", length=0.1, code=code,
        map_from=("a", "b", "c", "n"), map_to=("a", "b", "c", "n"),
    )
    net.loads["d"] = Load(
        id="d", bus="i", connection="wye", model="power",
        P_nom=[500.0], Q_nom=[0.0], map=("b", "n"), U_nom=230.0,
    )
    net.generators["g"] = Generator(
        id="g", bus="i", connection="wye", P_min=[0.0], P_max=[1000.0],
        Q_min=[0.0], Q_max=[0.0], map=("a", "n"), cost=0.0,
    )
    net.shunts["s"] = Shunt("s", "i", np.array([[0.01 + 0.0j]]), ("n",))
    net.generators["grid"] = fixtures.grid_generator("grid", "j")
    net.sources["src"] = VoltageSource("src", "j", fixtures.lv_phasors())
    cfg = FormulationConfig(mode="opf")
    sys = build_ivr(net, cfg)
    vm = sys.meta["varmap"]

    def kcl_vars(label):
        row = sys.constraints[sys.row_of(("kcl", "i", label, "re"))]
        names = {sys.variables[i].name for i in row.li}
        return names

    # terminal a: generator current vs line conductor 0
    assert any("Ileg.g" in n for n in kcl_vars("a"))
    assert any("Is.l.0" in n for n in kcl_vars("a"))
    # terminal b: load current vs line conductor 1
    assert any("Ileg.d" in n for n in kcl_vars("b"))
    # terminal n: load return, generator return, shunt, line conductor 3
    names_n = kcl_vars("n")
    assert any("Ileg.d" in n for n in names_n)
    assert any("Ileg.g" in n for n in names_n)
    assert any("Ish.s" in n for n in names_n)


# -- envelopes ----------------------------------------------------------------------


def _sequence_fixture(vuf_max=0.02):
    net = fixtures.f1(with_dg=False)
    net.bounds["load"] = {"vuf_max": vuf_max}
    return net


def test_sequence_variables_only_where_bounded():
    net = _sequence_fixture()
    sys = build_ivr(net, FormulationConfig(mode="opf"))
    vm = sys.meta["varmap"]
    assert vm.has(("Useq", "load", "p"))
    assert not vm.has(("Useq", "src", "p"))


def test_balanced_point_has_zero_sequence_components():
    net = _sequence_fixture()
    sys = build_ivr(net, FormulationConfig(mode="opf"))
    vm = sys.meta["varmap"]
    x = sys.initial_point().copy()
    # set the load bus to a perfectly balanced triple, neutral at zero
    for lbl, ph in fixtures.lv_phasors(1.0).items():
        for part, val in (("re", ph.real), ("im", ph.imag)):
            idx = vm.index_of.get(("U", "load", lbl, part))
            if idx is not None:
                x[idx] = val if lbl != "n" else 0.0
    # sequence variables implied by the definition rows
    rows = sys.constraint_values(x)
    for seq, want in (("z", 0j), ("p", 1.0 + 0j), ("n", 0j)):
        re_row = sys.row_of(("seqdef", "load", seq, "re"))
        im_row = sys.row_of(("seqdef", "load", seq, "im"))
        ure = x[vm.index_of[("Useq", "load", seq, "re")]] - rows[re_row]
        uim = x[vm.index_of[("Useq", "load", seq, "im")]] - rows[im_row]
        assert complex(ure, uim) == pytest.approx(want, abs=1e-12)


def test_vuf_constraint_inactive_at_balanced_point():
    net = _sequence_fixture(vuf_max=0.02)
    sys = build_ivr(net, FormulationConfig(mode="opf"))
    vm = sys.meta["varmap"]
    x = sys.initial_point().copy()
    for seq, val in (("z", 0j), ("p", 1.0 + 0j), ("n", 0j)):
        x[vm.index_of[("Useq", "load", seq, "re")]] = val.real
        x[vm.index_of[("Useq", "load", seq, "im")]] = val.imag
    k = sys.row_of(("env_vuf", "load"))
    assert sys.constraint_values(x)[k] == pytest.approx(-(0.02**2) * 1.0)


def test_sequence_definition_matches_direct_fortescue(rng):
    net = _sequence_fixture()
    sys = build_ivr(net, FormulationConfig(mode="opf"))
    vm = sys.meta["varmap"]
    for _ in range(20):
        x = rng.normal(size=sys.n_vars)
        un = x[vm.index_of[("U", "load", "n", "re")]] + 1j * x[
            vm.index_of[("U", "load", "n", "im")]
        ]
        pn = [
            x[vm.index_of[("U", "load", p, "re")]]
            + 1j * x[vm.index_of[("U", "load", p, "im")]]
            - un
            for p in "abc"
        ]
        want = fortescue_direct(*pn)
        vals = sys.constraint_values(x)
        for seq, w in zip(("z", "p", "n"), want):
            got = complex(
                x[vm.index_of[("Useq", "load", seq, "re")]]
                - vals[sys.row_of(("seqdef", "load", seq, "re"))],
                x[vm.index_of[("Useq", "load", seq, "im")]]
                - vals[sys.row_of(("seqdef", "load", seq, "im"))],
            )
            assert got == pytest.approx(w, abs=1e-12)


# -- structural invariants ---------------------------------------------------------


def test_voltage_variable_ratio_four_thirds():
    net = fixtures.chain(6)
    sys4 = build_ivr(net, FormulationConfig.pf())
    red = kron_reduce_network(net)
    sys3 = build_ivr(red, FormulationConfig.pf())

    def count(sys):
        return sum(1 for v in sys.variables if v.kind == "voltage")

    assert count(sys4) * 3 == count(sys3) * 4


def test_series_current_only_does_not_change_voltages(f2):
    sol_a, sys_a = solve_pf(f2, "ivr", FormulationConfig.pf(series_current_only=True))
    sol_b, sys_b = solve_pf(f2, "ivr", FormulationConfig.pf(series_current_only=False))
    assert max_voltage_dev(sys_a, sol_a.x, sys_b, sol_b.x) < 1e-10


def test_build_is_quadratic_everywhere(rng, f1_dg):
    sys = build_ivr(f1_dg, FormulationConfig(mode="opf", pn_max_pu=1.1, vuf_max=0.02))
    mult = rng.normal(size=sys.n_cons)
    h = sys.eval_lagrangian_hessian(mult).toarray()
    x1, x2 = rng.normal(size=sys.n_vars), rng.normal(size=sys.n_vars)

    def fd_hessian(x):
        n = sys.n_vars
        H = np.zeros((n, n))
        h_step = 1e-6
        for j in range(n):
            xp, xm = x.copy(), x.copy()
            xp[j] += h_step
            xm[j] -= h_step
            H[:, j] = (sys.eval_jacobian(xp).T @ mult - sys.eval_jacobian(xm).T @ mult) / (
                2 * h_step
            )
        return H

    assert np.allclose(fd_hessian(x1), h, rtol=1e-5, atol=1e-5)
    assert np.allclose(fd_hessian(x2), h, rtol=1e-5, atol=1e-5)


def test_pf_requires_setpoints_for_nonslack_generators(f1_dg):
    with pytest.raises(BuildError):
        build_ivr(f1_dg, FormulationConfig.pf())


def test_expand_preserves_pf(f1):
    from fourwire.network import expand_composites

    sol_a, sys_a = solve_pf(f1, "ivr")
    sol_b, sys_b = solve_pf(expand_composites(f1), "ivr")
    assert max_voltage_dev(sys_a, sol_a.x, sys_b, sol_b.x) < 1e-10
