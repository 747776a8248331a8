"""Grid model: network data, case I/O, AC power flow and monitored outputs."""

from gp_ccopf.grid.case import Bus, Generator, GridCase, Line, Load, Renewable
from gp_ccopf.grid.caseio import load_builtin_case, load_case, parse_case, serialize_case
from gp_ccopf.grid.outputs import OutputEntry, OutputSpec, extract_outputs
from gp_ccopf.grid.powerflow import (
    BusInjections,
    LineFlows,
    PfOptions,
    PfSolution,
    line_flows,
    solve_ac_pf,
)

__all__ = [
    "Bus",
    "BusInjections",
    "Generator",
    "GridCase",
    "Line",
    "LineFlows",
    "Load",
    "OutputEntry",
    "OutputSpec",
    "PfOptions",
    "PfSolution",
    "Renewable",
    "extract_outputs",
    "line_flows",
    "load_builtin_case",
    "load_case",
    "parse_case",
    "serialize_case",
    "solve_ac_pf",
]
