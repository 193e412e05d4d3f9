import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fourwire import fixtures
from fourwire.network import LineCode, Load
from fourwire.reduce import (
    FORTESCUE,
    FORTESCUE_INV,
    SequenceImpedance,
    aggregate_bus_power,
    balanced_equivalent,
    kron_reduce,
    kron_reduce_network,
    match_linecode,
    merge_series_lines,
    positive_sequence_of,
    sequence_impedance,
)
from fourwire.formulation import FormulationConfig
from fourwire.solve import recover_postprocessing, solve_pf

from conftest import max_voltage_dev


def _code(z):
    z = np.asarray(z, dtype=complex)
    return LineCode(R=z.real, X=z.imag)


def test_kron_zero_coupling_is_projection():
    zs = 0.4 + 0.3j
    Z = np.diag([zs, zs, zs, 0.5 + 0.4j])
    red = kron_reduce(_code(Z), 3)
    assert np.allclose(red.z, Z[:3, :3])


def test_kron_symmetric_formula():
    zs, zm = 0.4 + 0.3j, 0.1 + 0.08j
    Z = np.full((4, 4), zm, dtype=complex)
    np.fill_diagonal(Z, zs)
    red = kron_reduce(_code(Z), 3).z
    # Schur complement of the symmetric pattern, evaluated by hand
    want_diag = zs - zm * zm / zs
    want_off = zm - zm * zm / zs
    assert np.allclose(np.diag(red), want_diag)
    off = red[~np.eye(3, dtype=bool)]
    assert np.allclose(off, want_off)


def test_kron_singular_block_rejected():
    Z = np.diag([0.4 + 0.3j, 0.4 + 0.3j, 0.4 + 0.3j, 0.0 + 0.0j])
    with pytest.raises(np.linalg.LinAlgError):
        kron_reduce(_code(Z), 3)


@settings(max_examples=30, deadline=None)
@given(s=st.floats(min_value=0.1, max_value=10.0, allow_nan=False))
def test_kron_commutes_with_scaling(s):
    base = fixtures.lc4_unbal()
    a = kron_reduce(_code(base.z * s), 3).z
    b = kron_reduce(base, 3).z * s
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_sequence_of_diagonal_code():
    z = 0.3 + 0.2j
    seq = sequence_impedance(_code(np.diag([z, z, z])))
    assert seq.z_plus == pytest.approx(z)
    assert seq.z_zero == pytest.approx(z)
    assert seq.coupling == pytest.approx(0.0, abs=1e-15)


def test_sequence_symmetric_matches_matrix_oracle():
    zs, zm = 0.35 + 0.25j, 0.05 + 0.18j
    Z = np.full((3, 3), zm, dtype=complex)
    np.fill_diagonal(Z, zs)
    seq = sequence_impedance(_code(Z))
    oracle = FORTESCUE_INV @ Z @ FORTESCUE
    assert seq.z_plus == pytest.approx(complex(oracle[1, 1]), abs=1e-14)
    assert seq.z_plus == pytest.approx(zs - zm, abs=1e-12)
    assert seq.z_zero == pytest.approx(zs + 2 * zm, abs=1e-12)


def test_sequence_untransposed_reports_coupling():
    base = fixtures.lc4_unbal()
    red = kron_reduce(base, 3)
    seq = sequence_impedance(red)
    oracle = FORTESCUE_INV @ red.z @ FORTESCUE
    assert seq.z_plus == pytest.approx(complex(oracle[1, 1]), abs=1e-14)
    assert seq.coupling > 0.0


# -- linecode matching ------------------------------------------------------------


def _shifted(code, delta):
    z = code.z + delta * np.eye(code.n_conductors)
    return _code(z)


def test_match_exact_candidate():
    lib = [fixtures.lc4_sym(), _shifted(fixtures.lc4_sym(), 0.2)]
    target = SequenceImpedance(positive_sequence_of(lib[1]), 0.0)
    assert match_linecode(target, lib) is lib[1]


def test_match_prefers_nearer():
    base = fixtures.lc4_sym()
    lib = [_shifted(base, 0.2), _shifted(base, 0.1)]
    target = SequenceImpedance(positive_sequence_of(base), 0.0)
    assert match_linecode(target, lib) is lib[1]


def test_match_tie_breaks_to_lower_index():
    base = fixtures.lc4_sym()
    lib = [_shifted(base, 0.1), _shifted(base, 0.1)]
    target = SequenceImpedance(positive_sequence_of(base), 0.0)
    assert match_linecode(target, lib) is lib[0]


@settings(max_examples=25, deadline=None)
@given(delta=st.floats(min_value=-0.05, max_value=0.05, allow_nan=False))
def test_match_invariant_under_common_offset(delta):
    base = fixtures.lc4_sym()
    lib = [_shifted(base, 0.03), _shifted(base, 0.11)]
    target = SequenceImpedance(positive_sequence_of(base), 0.0)
    pick0 = match_linecode(target, lib)
    lib_shift = [_shifted(c, delta) for c in lib]
    target_shift = SequenceImpedance(target.z_plus + delta, 0.0)
    pick1 = match_linecode(target_shift, lib_shift)
    assert lib.index(pick0) == lib_shift.index(pick1)


def test_match_empty_library():
    with pytest.raises(ValueError):
        match_linecode(SequenceImpedance(0.1 + 0.1j, 0.0), [])


# -- series merging ------------------------------------------------------------


def _chain3():
    net = fixtures.chain(3, line_km=0.5)
    return net


def test_merge_two_half_km_lines():
    net = _chain3()
    out = merge_series_lines(net)
    assert len(out.lines) == 1
    line = next(iter(out.lines.values()))
    assert line.length == pytest.approx(1.0)
    assert "b1" not in out.buses


def test_merge_blocked_by_load():
    net = _chain3()
    net.loads["d"] = Load(
        id="d", bus="b1", connection="wye", model="power",
        P_nom=[100.0], Q_nom=[0.0], map=("a", "n"), U_nom=230.0,
    )
    out = merge_series_lines(net)
    assert len(out.lines) == 2


def test_merge_blocked_by_grounding():
    net = fixtures.chain(3, ground_all=True, line_km=0.5)
    out = merge_series_lines(net)
    assert len(out.lines) == 2


def test_merge_preserves_pf_voltages(f2):
    # park a bare pass-through bus in the middle of f2's first segment
    net = f2
    sol_before, sys_before = solve_pf(net, "ivr")
    merged = merge_series_lines(net)
    assert len(merged.lines) < len(net.lines) or len(merged.lines) == len(net.lines)
    sol_after, sys_after = solve_pf(merged, "ivr")
    dev = max_voltage_dev(sys_after, sol_after.x, sys_before, sol_before.x)
    assert dev < 1e-10


def test_merge_mixed_codes_sums_impedance():
    net = _chain3()
    lines = sorted(net.lines)
    other = fixtures.lc4_unbal()
    net.linecodes[other.name] = other
    l2 = net.lines[lines[1]]
    l2.code = other
    out = merge_series_lines(net)
    assert len(out.lines) == 1
    line = next(iter(out.lines.values()))
    want = fixtures.lc4_sym().z * 0.5 + other.z * 0.5
    assert np.allclose(line.z_total(), want)


# -- network-level kron / balanced ------------------------------------------------


def test_kron_network_grounds_neutrals_and_reduces_lines(f1):
    red = kron_reduce_network(f1)
    assert red.lines["l1"].code.n_conductors == 3
    assert red.buses["load"].terminal("n").grounded
    assert red.lines["l1"].map_from == ("a", "b", "c")


def test_kron_equivalence_under_full_grounding(f1_grounded):
    sol4, sys4 = solve_pf(f1_grounded, "ivr")
    red = kron_reduce_network(f1_grounded)
    solk, sysk = solve_pf(red, "ivr")
    dev = max_voltage_dev(sysk, solk.x, sys4, sol4.x, skip_labels=("n",))
    assert sol4.status == solk.status == "optimal"
    assert dev < 1e-10


def test_kron_underestimates_deviation_on_f2(f2):
    sol4, sys4 = solve_pf(f2, "ivr")
    solk, sysk = solve_pf(kron_reduce_network(f2), "ivr")

    def max_dev(sys, sol):
        rep = recover_postprocessing(sol, sys.meta["net"], sys).recovered["bus_report"]
        return max(
            abs(1.0 - v)
            for b in rep
            for v in rep[b].get("pn_pu", {}).values()
        )

    assert max_dev(sysk, solk) <= max_dev(sys4, sol4)


def test_aggregate_bus_power_totals(f1):
    p, q = aggregate_bus_power(f1, "load")
    assert p == pytest.approx(6000.0)
    assert q == pytest.approx(6000.0 * fixtures.Q_OVER_P)


def test_balanced_equivalent_structure(f1):
    bal = balanced_equivalent(f1)
    line = bal.lines["l1"]
    assert line.code.n_conductors == 1
    assert complex(line.code.z[0, 0]) == pytest.approx(
        positive_sequence_of(fixtures.lc4_sym())
    )
    # total load power conserved: three per-phase equivalents of (sum / 3)
    load = next(iter(bal.loads.values()))
    assert 3.0 * float(load.P_nom[0]) == pytest.approx(6000.0)
    gen = bal.generators["grid"]
    assert gen.cost == pytest.approx(3.0e-3)


def test_balanced_equivalent_pf_matches_phase_a():
    net = fixtures.f1()
    net.loads["d1"].P_nom = np.array([2000.0, 2000.0, 2000.0])
    net.loads["d1"].Q_nom = net.loads["d1"].P_nom * fixtures.Q_OVER_P
    soli, sysi = solve_pf(net, "ivr")
    bal = balanced_equivalent(net)
    solb, sysb = solve_pf(bal, "ivr")
    vmi, vmb = sysi.meta["varmap"], sysb.meta["varmap"]
    ua = vmi.c[("U", "load", "a")].value(soli.x) - vmi.c[("U", "load", "n")].value(
        soli.x
    )
    up = vmb.c[("U", "load", "p")].value(solb.x)
    assert abs(ua - up) < 1e-8
