import numpy as np
import pytest

from fourwire import fixtures
from fourwire.network import (
    Bus,
    Load,
    Network,
    Terminal,
    VoltageSource,
    assemble_transformer_bank,
    expand_composites,
    normalize,
    validate_network,
)


def test_f1_is_valid(f1):
    assert validate_network(f1) == []


def test_missing_terminal_flagged(f1):
    f1.loads["d1"].map = ("a", "b", "x", "n")
    diags = validate_network(f1)
    assert any("d1" in d.component and "x" in d.message for d in diags)


def test_floating_network_flagged(f1):
    f1.sources = {}
    f1.buses["src"] = Bus(
        "src", tuple(Terminal(t.label) for t in f1.buses["src"].terminals)
    )
    diags = validate_network(f1)
    assert any(d.rule == "floating" for d in diags)


def test_duplicate_labels_flagged(f1):
    f1.buses["load"] = Bus("load", (Terminal("a"), Terminal("a"), Terminal("n")))
    assert any(d.rule == "labels-unique" for d in validate_network(f1))


def test_zip_weights_checked(f1):
    f1.loads["d1"].model = "zip"
    f1.loads["d1"].zip_weights = (0.5, 0.2, 0.2)
    assert any(d.rule == "zip-weights" for d in validate_network(f1))


def test_gen_bounds_checked(f1):
    f1.generators["grid"].P_min = np.array([1.0, 1.0, 1.0])
    f1.generators["grid"].P_max = np.array([0.0, 0.0, 0.0])
    assert any(d.rule == "bounds" for d in validate_network(f1))


# -- expansion ----------------------------------------------------------------


def test_wye_load_expands_to_three_legs(f1):
    out = expand_composites(f1)
    legs = [l for l in out.loads.values() if l.group and l.group[0] == "d1"]
    assert len(legs) == 3
    assert [l.map for l in legs] == [("a", "n"), ("b", "n"), ("c", "n")]
    assert [float(l.P_nom[0]) for l in legs] == [3000.0, 2000.0, 1000.0]


def test_delta_load_expands_pairwise():
    net = fixtures.f1()
    net.loads["d1"].connection = "delta"
    net.loads["d1"].map = ("a", "b", "c")
    out = expand_composites(net)
    legs = [l for l in out.loads.values() if l.group and l.group[0] == "d1"]
    assert [l.map for l in legs] == [("a", "b"), ("b", "c"), ("c", "a")]


def test_single_phase_load_unchanged(f3):
    out = expand_composites(f3)
    assert out.loads["d1"].map == ("a", "n")
    assert out.loads["d1"].group is None


def test_expand_idempotent(f1):
    once = expand_composites(f1)
    twice = expand_composites(once)
    assert sorted(once.loads) == sorted(twice.loads)
    assert sorted(once.generators) == sorted(twice.generators)
    for k in once.loads:
        assert once.loads[k].map == twice.loads[k].map


def test_zip_lowered_to_three_model_parts(f1):
    f1.loads = {
        "dz": Load(
            id="dz",
            bus="load",
            connection="wye",
            model="zip",
            P_nom=[900.0],
            Q_nom=[300.0],
            map=("a", "n"),
            U_nom=230.0,
            zip_weights=(0.5, 0.3, 0.2),
        )
    }
    out = expand_composites(f1)
    models = sorted((l.model, float(l.P_nom[0])) for l in out.loads.values())
    assert models == [("current", 270.0), ("impedance", 450.0), ("power", 180.0)]


def test_map_round_trip(f1):
    out = expand_composites(f1)
    seen = {}
    for leg in out.loads.values():
        if leg.group and leg.group[0] == "d1":
            seen[leg.group[2]] = leg.map[0]
    assert seen == {0: "a", 1: "b", 2: "c"}


def test_lossy_grounding_lowered_to_shunt():
    net = fixtures.f1()
    bus = net.buses["load"]
    terms = tuple(
        Terminal(t.label, grounding_impedance=5.0 + 1.0j) if t.label == "n" else t
        for t in bus.terminals
    )
    net.buses["load"] = Bus("load", terms)
    out = normalize(net)
    sid = "_ground.load.n"
    assert sid in out.shunts
    assert out.shunts[sid].Y[0, 0] == pytest.approx(1.0 / (5.0 + 1.0j))
    assert not out.buses["load"].terminal("n").grounded


# -- transformer banks -----------------------------------------------------------


def test_yy_ideal_bank_is_three_transformers():
    parts = assemble_transformer_bank("Yy", "t", "b1", "b2", 1.0)
    assert len(parts.transformers) == 3
    assert not parts.lines and not parts.buses
    assert all(tr.turns_ratio == 1.0 for tr in parts.transformers)
    assert [tr.map_from for tr in parts.transformers] == [
        ("a", "n"),
        ("b", "n"),
        ("c", "n"),
    ]


def test_dy_bank_connections():
    parts = assemble_transformer_bank("Dy", "t", "b1", "b2", 2.0)
    assert [tr.map_from for tr in parts.transformers] == [
        ("a", "b"),
        ("b", "c"),
        ("c", "a"),
    ]
    assert [tr.map_to for tr in parts.transformers] == [
        ("a", "n"),
        ("b", "n"),
        ("c", "n"),
    ]


def test_unsupported_bank_kind():
    with pytest.raises(ValueError):
        assemble_transformer_bank("Zz", "t", "b1", "b2", 1.0)


def test_yy_bank_with_impedance_adds_series_lines():
    parts = assemble_transformer_bank("Yy", "t", "b1", "b2", 1.0, series_impedance=0.1 + 0.2j)
    assert len(parts.lines) == 3
    assert len(parts.buses) == 3
    code = parts.lines[0].code
    # loop impedance of the two-conductor winding line equals z
    z_loop = complex(code.R[0, 0] + code.R[1, 1], code.X[0, 0] + code.X[1, 1])
    assert z_loop == pytest.approx(0.1 + 0.2j)
