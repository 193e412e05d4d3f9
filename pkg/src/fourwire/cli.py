"""Command-line interface.

Subcommands: validate, reduce, pf, opf, dump-model, bench. Network files
use the JSON schema in docs/network_format.md; solver/formulation options
come from a JSON file passed with --opts.
"""

from __future__ import annotations

import argparse
import cmath
import json
import sys as _sys
from dataclasses import fields

from . import io_json
from .acr import build_acr
from .bench import FORMS, MODELS, model_of, run_matrix
from .formulation import BuildError, FormulationConfig
from .ipm import ipm_solve
from .ivr import build_ivr
from .network import validate_network
from .reduce import merge_series_lines
from .solve import SolverOptions, recover_postprocessing, solve_pf


def _load_opts(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _split_opts(data):
    solver_fields = {f.name for f in fields(SolverOptions)}
    form_fields = {f.name for f in fields(FormulationConfig)}
    sopts = SolverOptions(**{k: v for k, v in data.items() if k in solver_fields})
    fopts = {k: v for k, v in data.items() if k in form_fields}
    unknown = set(data) - solver_fields - form_fields
    if unknown:
        raise BuildError(f"unknown options: {sorted(unknown)}")
    return sopts, fopts


def _solution_payload(sol, sys, net):
    sol = recover_postprocessing(sol, net, sys)
    volt = {
        bus: {lbl: [v.real, v.imag] for lbl, v in terms.items()}
        for bus, terms in sol.recovered["voltages"].items()
    }
    powers = {
        k: [v.real, v.imag] for k, v in sol.recovered["element_powers"].items()
    }
    grounding = {
        f"{b}.{t}": [v.real, v.imag]
        for (b, t), v in sol.recovered["grounding_currents"].items()
    }
    return {
        "status": sol.status,
        "objective": sol.objective,
        "iterations": sol.iterations,
        "wall_time_s": sol.wall_time,
        "max_residual": sol.max_residual,
        "kkt_error": None if sol.kkt_error != sol.kkt_error else sol.kkt_error,
        "message": sol.message,
        "voltages_v": volt,
        "element_powers_va": powers,
        "grounding_currents_a": grounding,
        "bus_report": sol.recovered["bus_report"],
    }


def cmd_validate(args):
    net = io_json.load_network(args.file)
    diags = validate_network(net)
    for d in diags:
        print(d)
    if not diags:
        print("ok")
    return 1 if diags else 0


def cmd_reduce(args):
    from .reduce import kron_reduce_network, balanced_equivalent

    net = io_json.load_network(args.file)
    if args.mode == "kron":
        out = kron_reduce_network(net)
    elif args.mode == "balanced":
        out = balanced_equivalent(net)
    elif args.mode == "merge":
        out = merge_series_lines(net)
    else:
        raise SystemExit(f"unknown mode {args.mode}")
    io_json.save_network(out, args.out)
    print(f"wrote {args.out} ({len(out.buses)} buses, {len(out.lines)} lines)")
    return 0


def _prepare(args):
    net = io_json.load_network(args.file)
    net = model_of(net, args.model)
    sopts, fopts = _split_opts(_load_opts(args.opts))
    return net, sopts, fopts


def cmd_pf(args):
    net, sopts, fopts = _prepare(args)
    fopts["mode"] = "pf"
    cfg = FormulationConfig.from_dict(fopts)
    sol, sys = solve_pf(net, args.form, cfg, sopts)
    payload = _solution_payload(sol, sys, net)
    json.dump(payload, _sys.stdout, indent=1, sort_keys=True, default=float)
    print()
    return 0 if sol.status == "optimal" else 2


def cmd_opf(args):
    net, sopts, fopts = _prepare(args)
    fopts["mode"] = "opf"
    cfg = FormulationConfig.from_dict(fopts)
    build = build_ivr if args.form == "ivr" else build_acr
    sys = build(net, cfg)
    sol = ipm_solve(sys, sopts)
    payload = _solution_payload(sol, sys, net)
    json.dump(payload, _sys.stdout, indent=1, sort_keys=True, default=float)
    print()
    return 0 if sol.status == "optimal" else 2


def cmd_dump_model(args):
    net, _, fopts = _prepare(args)
    fopts["mode"] = args.mode
    cfg = FormulationConfig.from_dict(fopts)
    build = build_ivr if args.form == "ivr" else build_acr
    sys = build(net, cfg)
    _sys.stdout.write(sys.dump_text())
    return 0


def cmd_bench(args):
    import glob
    import os

    paths = sorted(glob.glob(os.path.join(args.instances, "*.json")))
    if not paths:
        raise SystemExit(f"no .json instances under {args.instances}")
    instances = {
        os.path.splitext(os.path.basename(p))[0]: io_json.load_network(p)
        for p in paths
    }
    sopts, fopts = _split_opts(_load_opts(args.opts))
    cfg = FormulationConfig.from_dict(fopts) if fopts else None
    report = run_matrix(
        instances,
        forms=tuple(args.forms.split(",")),
        models=tuple(args.models.split(",")),
        bound_pu=args.bound,
        opts=sopts,
        cfg=cfg,
    )
    report.write_csv(args.out)
    report.write_json(args.out.rsplit(".", 1)[0] + ".json")
    print(f"wrote {args.out} ({len(report.rows)} cells)")
    return 1 if report.any_failure else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fourwire",
        description="Exact unbalanced OPF for four-wire distribution networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a network file against the data model")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("reduce", help="apply a network reduction")
    p.add_argument("file")
    p.add_argument("--mode", choices=("kron", "balanced", "merge"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reduce)

    for name, fn in (("pf", cmd_pf), ("opf", cmd_opf)):
        p = sub.add_parser(name, help=f"solve a {name.upper()} problem")
        p.add_argument("file")
        p.add_argument("--form", choices=FORMS, default="ivr")
        p.add_argument("--model", choices=MODELS, default="fourwire")
        p.add_argument("--opts", default=None, help="JSON file with options")
        p.set_defaults(func=fn)

    p = sub.add_parser("dump-model", help="dump the assembled constraint system")
    p.add_argument("file")
    p.add_argument("--form", choices=FORMS, default="ivr")
    p.add_argument("--model", choices=MODELS, default="fourwire")
    p.add_argument("--mode", choices=("pf", "opf"), default="opf")
    p.add_argument("--opts", default=None)
    p.set_defaults(func=cmd_dump_model)

    p = sub.add_parser("bench", help="run the model/formulation comparison matrix")
    p.add_argument("--instances", required=True, help="directory of network .json files")
    p.add_argument("--forms", default="ivr,acr")
    p.add_argument("--models", default="fourwire,kron,balanced")
    p.add_argument("--bound", type=float, default=1.1)
    p.add_argument("--out", default="report.csv")
    p.add_argument("--opts", default=None)
    p.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
