"""Case Guard - Verifies native grid case documents.

Validates that a case document describes a usable network:
- Document structure matches the case JSON schema
- Exactly one slack bus, unique bus ids, line endpoints exist
- Limit pairs are ordered and set-points lie inside their limits
- Cost coefficients and fluctuation std-devs are nonnegative
- Power ratios agree with the reference values
"""

from dataclasses import dataclass, field
from typing import Any, Optional

import jsonschema

from gp_ccopf.grid.case import BUS_KINDS, LOSS_FACTOR_MAX, LOSS_FACTOR_MIN

_NUMBER = {"type": "number"}

_INJECTION_SCHEMA = {
    "type": "object",
    "required": ["bus", "p_ref", "q_ref", "gamma"],
    "additionalProperties": False,
    "properties": {
        "bus": {"type": "integer"},
        "p_ref": _NUMBER,
        "q_ref": _NUMBER,
        "gamma": _NUMBER,
        "sigma": _NUMBER,
    },
}

CASE_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["buses", "lines", "generators"],
    "properties": {
        "name": {"type": "string"},
        "base_mva": {"type": "number", "exclusiveMinimum": 0},
        "loss_factor": _NUMBER,
        "buses": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "kind", "v_min", "v_max"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer"},
                    "kind": {"type": "string", "enum": list(BUS_KINDS)},
                    "v_min": _NUMBER,
                    "v_max": _NUMBER,
                    "v_set": {"type": ["number", "null"]},
                    "g_shunt": _NUMBER,
                    "b_shunt": _NUMBER,
                },
            },
        },
        "lines": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from_bus", "to_bus", "g", "b", "s_max"],
                "additionalProperties": False,
                "properties": {
                    "from_bus": {"type": "integer"},
                    "to_bus": {"type": "integer"},
                    "g": _NUMBER,
                    "b": _NUMBER,
                    "s_max": _NUMBER,
                    "transformer": {"type": "boolean"},
                },
            },
        },
        "generators": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["bus", "p_min", "p_max", "q_min", "q_max", "p_ref"],
                "additionalProperties": False,
                "properties": {
                    "bus": {"type": "integer"},
                    "p_min": _NUMBER,
                    "p_max": _NUMBER,
                    "q_min": _NUMBER,
                    "q_max": _NUMBER,
                    "p_ref": _NUMBER,
                    "c2": _NUMBER,
                    "c1": _NUMBER,
                    "c0": _NUMBER,
                    "controllable": {"type": "boolean"},
                },
            },
        },
        "loads": {"type": "array", "items": _INJECTION_SCHEMA},
        "renewables": {"type": "array", "items": _INJECTION_SCHEMA},
    },
}

# Relative tolerance for gamma * p_ref == q_ref
GAMMA_RTOL = 1e-9


@dataclass
class CaseGuardResult:
    """Result from Case Guard verification."""

    verified: bool
    error: Optional[str] = None
    details: dict = field(default_factory=dict)


class CaseGuard:
    """
    Verify grid case documents.

    Checks:
    1. JSON schema compliance (types, required fields, bus kinds)
    2. Bus invariants (unique ids, single slack, voltage window, set-point)
    3. Line invariants (endpoints exist, s_max > 0, nonzero admittance)
    4. Generator invariants (bus is PV/slack, p_min <= p_ref <= p_max, costs >= 0)
    5. Load / renewable invariants (bus exists, sigma >= 0, gamma consistency)
    6. Loss factor range when the document states one
    """

    def __init__(self, schema: Optional[dict] = None):
        self.schema = schema or CASE_SCHEMA

    def verify(self, document: dict[str, Any]) -> CaseGuardResult:
        """
        Verify a native case document.

        Args:
            document: Parsed case document (see CASE_SCHEMA)

        Returns:
            CaseGuardResult; ``details["errors"]`` lists every violation found
        """
        try:
            jsonschema.validate(document, self.schema)
        except jsonschema.ValidationError as e:
            return CaseGuardResult(
                verified=False,
                error=f"Schema validation failed: {e.message}",
                details={
                    "validation_method": "jsonschema",
                    "path": list(e.path),
                    "validator": e.validator,
                    "message": e.message,
                },
            )

        errors = (
            self._check_buses(document["buses"])
            + self._check_lines(document)
            + self._check_generators(document)
            + self._check_injections(document)
        )

        loss_factor = document.get("loss_factor")
        if loss_factor is not None and not LOSS_FACTOR_MIN <= loss_factor <= LOSS_FACTOR_MAX:
            errors.append(
                f"loss_factor {loss_factor} outside [{LOSS_FACTOR_MIN}, {LOSS_FACTOR_MAX}]"
            )

        if errors:
            return CaseGuardResult(
                verified=False,
                error="; ".join(errors),
                details={"errors": errors, "error_count": len(errors)},
            )
        return CaseGuardResult(
            verified=True,
            details={
                "buses": len(document["buses"]),
                "lines": len(document["lines"]),
                "generators": len(document["generators"]),
            },
        )

    def _check_buses(self, buses: list[dict]) -> list[str]:
        errors = []
        seen = set()
        for bus in buses:
            if bus["id"] in seen:
                errors.append(f"Duplicate bus id {bus['id']}")
            seen.add(bus["id"])
            if not bus["v_min"] < bus["v_max"]:
                errors.append(f"Bus {bus['id']}: v_min must be < v_max")
            v_set = bus.get("v_set")
            if bus["kind"] in ("pv", "slack"):
                if v_set is None:
                    errors.append(f"Bus {bus['id']}: {bus['kind']} bus needs v_set")
                elif not bus["v_min"] <= v_set <= bus["v_max"]:
                    errors.append(f"Bus {bus['id']}: v_set {v_set} outside voltage limits")

        slack_count = sum(1 for b in buses if b["kind"] == "slack")
        if slack_count != 1:
            errors.append(f"Expected exactly one slack bus, found {slack_count}")
        return errors

    def _check_lines(self, document: dict) -> list[str]:
        errors = []
        bus_ids = {b["id"] for b in document["buses"]}
        for i, line in enumerate(document["lines"]):
            for end in ("from_bus", "to_bus"):
                if line[end] not in bus_ids:
                    errors.append(f"Line {i}: {end} {line[end]} does not exist")
            if line["from_bus"] == line["to_bus"]:
                errors.append(f"Line {i}: endpoints are the same bus")
            if not line["s_max"] > 0:
                errors.append(f"Line {i}: s_max must be > 0")
            if line["g"] == 0 and line["b"] == 0:
                errors.append(f"Line {i}: admittance is zero")
        return errors

    def _check_generators(self, document: dict) -> list[str]:
        errors = []
        kinds = {b["id"]: b["kind"] for b in document["buses"]}
        slack_has_unit = False
        for i, gen in enumerate(document["generators"]):
            kind = kinds.get(gen["bus"])
            if kind is None:
                errors.append(f"Generator {i}: bus {gen['bus']} does not exist")
            elif kind == "pq":
                errors.append(f"Generator {i}: bus {gen['bus']} is a PQ bus")
            elif kind == "slack":
                slack_has_unit = True
            if not gen["p_min"] <= gen["p_ref"] <= gen["p_max"]:
                errors.append(f"Generator {i}: p_ref outside [p_min, p_max]")
            if not gen["q_min"] <= gen["q_max"]:
                errors.append(f"Generator {i}: q_min must be <= q_max")
            for coeff in ("c2", "c1", "c0"):
                if gen.get(coeff, 0.0) < 0:
                    errors.append(f"Generator {i}: {coeff} must be >= 0")
        if document["generators"] and not slack_has_unit:
            errors.append("Slack bus has no generator")
        return errors

    def _check_injections(self, document: dict) -> list[str]:
        errors = []
        bus_ids = {b["id"] for b in document["buses"]}
        for section in ("loads", "renewables"):
            for i, item in enumerate(document.get(section, [])):
                where = f"{section}[{i}]"
                if item["bus"] not in bus_ids:
                    errors.append(f"{where}: bus {item['bus']} does not exist")
                if item.get("sigma", 0.0) < 0:
                    errors.append(f"{where}: sigma must be >= 0")
                p_ref, q_ref = item["p_ref"], item["q_ref"]
                if p_ref != 0 and abs(item["gamma"] * p_ref - q_ref) > GAMMA_RTOL * max(1.0, abs(q_ref)):
                    errors.append(f"{where}: gamma inconsistent with q_ref / p_ref")
        return errors
