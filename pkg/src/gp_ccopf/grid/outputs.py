"""Monitored output selection.

The output vector is laid out as ``[v, q, s]``: voltage magnitudes at the
selected buses, reactive generation at the selected generator buses, and
apparent flow on the selected lines.
"""

from dataclasses import dataclass
from typing import Any, Iterable, Optional

import numpy as np

from gp_ccopf.errors import SpecMismatch
from gp_ccopf.grid.case import GridCase
from gp_ccopf.grid.powerflow import PfSolution

OUTPUT_KINDS = ("v", "q", "s")


@dataclass(frozen=True)
class OutputEntry:
    """One monitored quantity.

    ``element`` is a bus id for ``v`` and ``q`` entries and a line position for
    ``s`` entries. A ``None`` bound means the side is not constrained.
    """

    kind: str
    element: int
    label: str
    lower: Optional[float]
    upper: Optional[float]


@dataclass(frozen=True)
class OutputSpec:
    entries: tuple[OutputEntry, ...]

    def __post_init__(self):
        ranks = [OUTPUT_KINDS.index(e.kind) if e.kind in OUTPUT_KINDS else -1 for e in self.entries]
        if -1 in ranks:
            raise SpecMismatch("Unknown output kind", {"kinds": [e.kind for e in self.entries]})
        if ranks != sorted(ranks):
            raise SpecMismatch("Output entries must be ordered v, q, s")

    @classmethod
    def select(
        cls,
        case: GridCase,
        v_buses: Iterable[int] = (),
        q_buses: Iterable[int] = (),
        lines: Iterable[int] = (),
    ) -> "OutputSpec":
        """
        Build a spec from element selections, taking limits from the case.

        Args:
            case: Network
            v_buses: Bus ids whose voltage magnitude is monitored
            q_buses: Generator bus ids whose reactive output is monitored
            lines: Line positions whose apparent flow is monitored

        Raises:
            SpecMismatch: a selection references an element absent from the case
        """
        by_id = {b.id: b for b in case.buses}
        entries = []
        for bus_id in v_buses:
            bus = by_id.get(bus_id)
            if bus is None:
                raise SpecMismatch(f"No bus {bus_id} for a voltage output", {"bus": bus_id})
            entries.append(OutputEntry("v", bus_id, f"v_{bus_id}", bus.v_min, bus.v_max))
        for bus_id in q_buses:
            units = [g for g in case.generators if g.bus == bus_id]
            if not units:
                raise SpecMismatch(f"No generator at bus {bus_id}", {"bus": bus_id})
            entries.append(OutputEntry(
                "q", bus_id, f"q_{bus_id}",
                sum(g.q_min for g in units), sum(g.q_max for g in units),
            ))
        for pos in lines:
            if not 0 <= pos < len(case.lines):
                raise SpecMismatch(f"No line at position {pos}", {"line": pos})
            line = case.lines[pos]
            entries.append(OutputEntry(
                "s", pos, f"s_{line.from_bus}_{line.to_bus}", None, line.s_max,
            ))
        return cls(tuple(entries))

    @classmethod
    def default(cls, case: GridCase, include_slack_voltage: bool = False) -> "OutputSpec":
        """Voltages at PQ buses, reactive power at every generator bus, flow on every non-transformer line."""
        v_buses = [case.buses[i].id for i in case.pq]
        if include_slack_voltage:
            v_buses.insert(0, case.buses[case.slack].id)
        lines = [i for i, ln in enumerate(case.lines) if not ln.transformer]
        return cls.select(case, v_buses, case.generator_buses, lines)

    # -- views ---------------------------------------------------------------

    @property
    def n_y(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    @property
    def lower(self) -> np.ndarray:
        return np.array([-np.inf if e.lower is None else e.lower for e in self.entries])

    @property
    def upper(self) -> np.ndarray:
        return np.array([np.inf if e.upper is None else e.upper for e in self.entries])

    def indices(self, case: GridCase) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Bus positions for v and q entries and line positions for s entries."""
        idx = case.bus_index
        try:
            v_idx = np.array([idx[e.element] for e in self.entries if e.kind == "v"], dtype=int)
            q_idx = np.array([idx[e.element] for e in self.entries if e.kind == "q"], dtype=int)
        except KeyError as e:
            raise SpecMismatch(f"Output references missing bus {e.args[0]}", {"bus": e.args[0]}) from e
        s_idx = np.array([e.element for e in self.entries if e.kind == "s"], dtype=int)
        if s_idx.size and (s_idx.min() < 0 or s_idx.max() >= len(case.lines)):
            raise SpecMismatch("Output references a missing line", {"lines": s_idx.tolist()})
        return v_idx, q_idx, s_idx

    # -- serialization -------------------------------------------------------

    def to_document(self) -> list[dict[str, Any]]:
        return [
            {"kind": e.kind, "element": e.element, "label": e.label, "lower": e.lower, "upper": e.upper}
            for e in self.entries
        ]

    @classmethod
    def from_document(cls, doc: list[dict[str, Any]]) -> "OutputSpec":
        return cls(tuple(
            OutputEntry(d["kind"], int(d["element"]), d["label"], d.get("lower"), d.get("upper"))
            for d in doc
        ))


def extract_outputs(case: GridCase, sol: PfSolution, spec: OutputSpec) -> np.ndarray:
    """Flat output vector ``[v, q, s]`` in spec order."""
    v_idx, q_idx, s_idx = spec.indices(case)
    return np.concatenate([sol.v[v_idx], sol.q_gen[q_idx], sol.s[s_idx]])
