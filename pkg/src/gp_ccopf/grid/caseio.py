"""Reading and writing grid cases.

Two text formats are understood:

* ``native``: a JSON document with ``buses``, ``lines``, ``generators``,
  ``loads`` and ``renewables`` sections, all values per unit.
* ``matpower``: the usual ``mpc.bus`` / ``mpc.gen`` / ``mpc.branch`` /
  ``mpc.gencost`` tables in MW, MVAr and percent-free per-unit impedances, plus
  an optional ``mpc.renewable`` table with columns ``bus Pr Qr``.
"""

import json
import logging
import re
from importlib import resources
from pathlib import Path
from typing import Any, Union

import numpy as np

from gp_ccopf.errors import ParseError, ValidationError
from gp_ccopf.grid.case import GridCase

logger = logging.getLogger("gp_ccopf.grid.caseio")

FORMATS = ("native", "matpower")

# default fluctuation std-devs as a fraction of the reference injection
DEFAULT_LOAD_SIGMA = 0.15
DEFAULT_RES_SIGMA = 0.30

# stand-in rating for branches whose matpower RATE_A is 0 (unlimited), MVA
UNLIMITED_RATING_MVA = 1.0e4

_MATPOWER_BUS_TYPES = {1: "pq", 2: "pv", 3: "slack"}

_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")
_TABLE_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.DOTALL)


def parse_case(text: str, format: str = "native") -> GridCase:
    """
    Parse case text into a validated GridCase.

    Args:
        text: Case document
        format: ``"native"`` or ``"matpower"``

    Raises:
        ParseError: malformed text (details carry ``line`` and ``field`` when known)
        ValidationError: the case violates a GridCase invariant
    """
    from gp_ccopf.guards.case import CaseGuard

    if format == "native":
        document = _load_native(text)
    elif format == "matpower":
        document = matpower_to_document(text)
    else:
        raise ParseError(f"Unknown case format '{format}'", {"field": "format"})

    result = CaseGuard().verify(document)
    if not result.verified:
        raise ValidationError(result.error, result.details)
    case = GridCase.from_document(document)
    logger.debug("Parsed case %s: %d buses, %d lines", case.name, case.n_bus, len(case.lines))
    return case


def serialize_case(case: GridCase) -> str:
    """Native JSON text; ``parse_case(serialize_case(c)) == c``."""
    return json.dumps(case.to_document(), indent=2)


def load_case(path: Union[str, Path]) -> GridCase:
    """Load a case file, choosing the format from the extension (``.m`` is matpower)."""
    path = Path(path)
    fmt = "matpower" if path.suffix == ".m" else "native"
    case = parse_case(path.read_text(), fmt)
    logger.info("Loaded case %s from %s (loss factor %.4f)", case.name, path, case.loss_factor)
    return case


def load_builtin_case(name: str) -> GridCase:
    """Load one of the bundled cases (``case9`` or ``case39``)."""
    source = resources.files("gp_ccopf.grid").joinpath("cases", f"{name}.m")
    if not source.is_file():
        raise ParseError(f"No bundled case named '{name}'", {"field": "name"})
    return parse_case(source.read_text(), "matpower")


def _load_native(text: str) -> dict[str, Any]:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(
            f"Invalid case JSON: {e.msg}", {"line": e.lineno, "column": e.colno}
        ) from e
    if not isinstance(document, dict):
        raise ParseError("Case document must be an object", {"line": 1})
    return document


# -- matpower-style import --------------------------------------------------

def _parse_tables(text: str) -> tuple[dict[str, float], dict[str, np.ndarray]]:
    stripped = re.sub(r"%[^\n]*", "", text)
    scalars = {m.group(1): float(m.group(2)) for m in _SCALAR_RE.finditer(stripped)}
    tables = {}
    for match in _TABLE_RE.finditer(stripped):
        name, body = match.group(1), match.group(2)
        first_line = stripped.count("\n", 0, match.start()) + 1
        rows = []
        for line_offset, raw_line in enumerate(body.split("\n")):
            for chunk in raw_line.split(";"):
                tokens = chunk.split()
                if not tokens:
                    continue
                try:
                    rows.append([float(tok) for tok in tokens])
                except ValueError as e:
                    raise ParseError(
                        f"Non-numeric entry in mpc.{name}",
                        {"line": first_line + line_offset, "field": name},
                    ) from e
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise ParseError(f"Ragged rows in mpc.{name}", {"line": first_line, "field": name})
        tables[name] = np.array(rows, dtype=float).reshape(len(rows), widths.pop() if widths else 0)
    return scalars, tables


def _require(tables: dict[str, np.ndarray], name: str, min_cols: int) -> np.ndarray:
    if name not in tables:
        raise ParseError(f"Missing table mpc.{name}", {"field": name})
    table = tables[name]
    if table.shape[0] and table.shape[1] < min_cols:
        raise ParseError(
            f"mpc.{name} needs at least {min_cols} columns, got {table.shape[1]}",
            {"field": name},
        )
    return table


def matpower_to_document(text: str, name: str = "") -> dict[str, Any]:
    """Convert matpower-style case text into a native case document."""
    scalars, tables = _parse_tables(text)
    base = scalars.get("baseMVA", 100.0)
    bus_t = _require(tables, "bus", 13)
    gen_t = _require(tables, "gen", 10)
    branch_t = _require(tables, "branch", 11)
    cost_t = tables.get("gencost")
    res_t = tables.get("renewable", np.zeros((0, 3)))

    name_match = re.search(r"function\s+mpc\s*=\s*(\w+)", text)
    case_name = name or (name_match.group(1) if name_match else "case")

    gen_rows = [row for row in gen_t if row[7] > 0]
    v_set = {int(row[0]): float(row[5]) for row in gen_rows}

    buses = []
    loads = []
    shunt_b = {int(row[0]): row[5] / base for row in bus_t}
    for row in branch_t:
        if row[10] <= 0:
            continue
        # line charging lumped at both ends
        shunt_b[int(row[0])] = shunt_b.get(int(row[0]), 0.0) + row[4] / 2
        shunt_b[int(row[1])] = shunt_b.get(int(row[1]), 0.0) + row[4] / 2

    for row in bus_t:
        bus_id, bus_type = int(row[0]), int(row[1])
        if bus_type not in _MATPOWER_BUS_TYPES:
            raise ParseError(f"Unsupported bus type {bus_type} at bus {bus_id}", {"field": "bus"})
        kind = _MATPOWER_BUS_TYPES[bus_type]
        buses.append({
            "id": bus_id,
            "kind": kind,
            "v_min": float(row[12]),
            "v_max": float(row[11]),
            "v_set": v_set.get(bus_id, float(row[7])) if kind != "pq" else None,
            "g_shunt": float(row[4] / base),
            "b_shunt": float(shunt_b[bus_id]),
        })
        p_d, q_d = row[2] / base, row[3] / base
        if p_d or q_d:
            loads.append({
                "bus": bus_id,
                "p_ref": float(p_d),
                "q_ref": float(q_d),
                "gamma": float(q_d / p_d) if p_d else 0.0,
                "sigma": float(DEFAULT_LOAD_SIGMA * abs(p_d)),
            })

    lines = []
    for row in branch_t:
        if row[10] <= 0:
            continue
        r, x = row[2], row[3]
        z2 = r * r + x * x
        if z2 == 0:
            raise ParseError(
                f"Branch {int(row[0])}-{int(row[1])} has zero impedance", {"field": "branch"}
            )
        rating = row[5] if row[5] > 0 else UNLIMITED_RATING_MVA
        lines.append({
            "from_bus": int(row[0]),
            "to_bus": int(row[1]),
            "g": float(r / z2),
            "b": float(-x / z2),
            "s_max": float(rating / base),
            "transformer": bool(row[8] != 0 or r == 0),
        })

    generators = []
    active = [i for i, row in enumerate(gen_t) if row[7] > 0]
    for i in active:
        row = gen_t[i]
        c2, c1, c0 = _polynomial_cost(cost_t, i)
        generators.append({
            "bus": int(row[0]),
            "p_min": float(row[9] / base),
            "p_max": float(row[8] / base),
            "q_min": float(row[4] / base),
            "q_max": float(row[3] / base),
            "p_ref": float(row[1] / base),
            "c2": float(c2 * base * base),
            "c1": float(c1 * base),
            "c0": float(c0),
            "controllable": True,
        })

    renewables = []
    for row in res_t:
        p_r, q_r = row[1] / base, row[2] / base
        renewables.append({
            "bus": int(row[0]),
            "p_ref": float(p_r),
            "q_ref": float(q_r),
            "gamma": float(q_r / p_r) if p_r else 0.0,
            "sigma": float(DEFAULT_RES_SIGMA * abs(p_r)),
        })

    return {
        "name": case_name,
        "base_mva": float(base),
        "buses": buses,
        "lines": lines,
        "generators": generators,
        "loads": loads,
        "renewables": renewables,
    }


def _polynomial_cost(cost_t, index: int) -> tuple[float, float, float]:
    if cost_t is None or index >= cost_t.shape[0]:
        return 0.0, 0.0, 0.0
    row = cost_t[index]
    if int(row[0]) != 2:
        raise ParseError(
            "Only polynomial gencost (model 2) is supported",
            {"field": "gencost", "row": index + 1},
        )
    n = int(row[3])
    coeffs = list(row[4:4 + n])
    if len(coeffs) != n or n > 3:
        raise ParseError(
            f"gencost row {index + 1}: expected at most 3 coefficients",
            {"field": "gencost", "row": index + 1},
        )
    coeffs = [0.0] * (3 - n) + coeffs
    return coeffs[0], coeffs[1], coeffs[2]
