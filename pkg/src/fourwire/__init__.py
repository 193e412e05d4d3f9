"""Exact unbalanced optimal power flow for four-wire distribution networks."""

from .acr import build_acr, kron_grounding_note, map_point_from_ivr
from .formulation import (
    BuildError,
    FormulationConfig,
    assign_bases,
    init_voltages,
)
from .ipm import ipm_solve
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
    assemble_transformer_bank,
    expand_composites,
    validate_network,
)
from .ivr import build_ivr
from .qcqp import ConstraintSystem, QuadraticConstraint, VariableRef
from .reduce import (
    SequenceImpedance,
    balanced_equivalent,
    eliminate_grounded_terminals,
    kron_reduce,
    kron_reduce_network,
    match_linecode,
    merge_series_lines,
    sequence_impedance,
)
from .solve import Solution, SolverOptions, newton_pf, recover_postprocessing

__all__ = [
    "BuildError",
    "Bus",
    "ConstraintSystem",
    "FormulationConfig",
    "Generator",
    "IdealTransformer",
    "Line",
    "LineCode",
    "Load",
    "Network",
    "QuadraticConstraint",
    "SequenceImpedance",
    "Shunt",
    "Solution",
    "SolverOptions",
    "Terminal",
    "VariableRef",
    "VoltageSource",
    "assemble_transformer_bank",
    "assign_bases",
    "balanced_equivalent",
    "build_acr",
    "build_ivr",
    "eliminate_grounded_terminals",
    "expand_composites",
    "init_voltages",
    "ipm_solve",
    "kron_grounding_note",
    "kron_reduce",
    "kron_reduce_network",
    "map_point_from_ivr",
    "match_linecode",
    "merge_series_lines",
    "newton_pf",
    "recover_postprocessing",
    "sequence_impedance",
    "validate_network",
]

__version__ = "0.1.0"
