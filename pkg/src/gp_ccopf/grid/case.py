"""Static network description.

All quantities are per unit on ``base_mva``; cost coefficients are stored for
per-unit dispatch (``c2`` multiplies p.u.^2), so costs come out in currency
units per hour without further scaling.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Any, Optional

import numpy as np

BUS_KINDS = ("slack", "pv", "pq")

LOSS_FACTOR_MIN = 1.0
LOSS_FACTOR_MAX = 1.2


@dataclass(frozen=True)
class Bus:
    """A network node; ``v_set`` is only meaningful on PV and slack buses."""

    id: int
    kind: str
    v_min: float
    v_max: float
    v_set: Optional[float] = None
    g_shunt: float = 0.0
    b_shunt: float = 0.0


@dataclass(frozen=True)
class Line:
    """Series branch with admittance ``g + jb`` (``b < 0`` for inductive lines)."""

    from_bus: int
    to_bus: int
    g: float
    b: float
    s_max: float
    transformer: bool = False


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    p_ref: float
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0
    controllable: bool = True


@dataclass(frozen=True)
class Load:
    """Stochastic demand at constant power ratio ``gamma = q_ref / p_ref``."""

    bus: int
    p_ref: float
    q_ref: float
    gamma: float
    sigma: float = 0.0


@dataclass(frozen=True)
class Renewable(Load):
    """Stochastic renewable infeed; same fields as a load, opposite sign."""


@dataclass(frozen=True)
class GridCase:
    """Immutable network case.

    Construct through :func:`gp_ccopf.grid.caseio.parse_case` (or
    :meth:`from_document`), which validates the invariants first.
    """

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...] = ()
    renewables: tuple[Renewable, ...] = ()
    base_mva: float = 100.0
    loss_factor: float = 1.0
    name: str = "case"

    # -- indexing -----------------------------------------------------------

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {bus.id: i for i, bus in enumerate(self.buses)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def slack(self) -> int:
        return next(i for i, bus in enumerate(self.buses) if bus.kind == "slack")

    @cached_property
    def pv(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind == "pv"], dtype=int)

    @cached_property
    def pq(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind == "pq"], dtype=int)

    @cached_property
    def controllable(self) -> tuple[int, ...]:
        """Positions (in ``generators``) of the controllable units, i.e. ``u``."""
        return tuple(i for i, g in enumerate(self.generators) if g.controllable)

    @property
    def n_u(self) -> int:
        return len(self.controllable)

    @property
    def n_d(self) -> int:
        return len(self.loads) + len(self.renewables)

    @property
    def n_x(self) -> int:
        return self.n_u + self.n_d

    @cached_property
    def generator_buses(self) -> tuple[int, ...]:
        """Distinct generator bus ids in first-appearance order."""
        return tuple(dict.fromkeys(g.bus for g in self.generators))

    # -- network arrays -----------------------------------------------------

    @cached_property
    def line_from(self) -> np.ndarray:
        return np.array([self.bus_index[ln.from_bus] for ln in self.lines], dtype=int)

    @cached_property
    def line_to(self) -> np.ndarray:
        return np.array([self.bus_index[ln.to_bus] for ln in self.lines], dtype=int)

    @cached_property
    def line_g(self) -> np.ndarray:
        return np.array([ln.g for ln in self.lines], dtype=float)

    @cached_property
    def line_b(self) -> np.ndarray:
        return np.array([ln.b for ln in self.lines], dtype=float)

    @cached_property
    def ybus(self) -> np.ndarray:
        """Dense complex bus admittance matrix (series branches plus bus shunts)."""
        n = self.n_bus
        y = np.zeros((n, n), dtype=complex)
        y_series = self.line_g + 1j * self.line_b
        f, t = self.line_from, self.line_to
        np.add.at(y, (f, f), y_series)
        np.add.at(y, (t, t), y_series)
        np.add.at(y, (f, t), -y_series)
        np.add.at(y, (t, f), -y_series)
        shunt = np.array([b.g_shunt + 1j * b.b_shunt for b in self.buses])
        y[np.diag_indices(n)] += shunt
        return y

    # -- reference vectors --------------------------------------------------

    @property
    def u_ref(self) -> np.ndarray:
        return np.array([self.generators[k].p_ref for k in self.controllable])

    @property
    def u_min(self) -> np.ndarray:
        return np.array([self.generators[k].p_min for k in self.controllable])

    @property
    def u_max(self) -> np.ndarray:
        return np.array([self.generators[k].p_max for k in self.controllable])

    @property
    def p_load_ref(self) -> np.ndarray:
        return np.array([ld.p_ref for ld in self.loads])

    @property
    def p_res_ref(self) -> np.ndarray:
        return np.array([rs.p_ref for rs in self.renewables])

    @property
    def fixed_generation(self) -> float:
        return float(sum(g.p_ref for g in self.generators if not g.controllable))

    @property
    def cost_coefficients(self) -> np.ndarray:
        """``(n_u, 3)`` array of ``(c2, c1, c0)`` for the controllable units."""
        return np.array([[self.generators[k].c2, self.generators[k].c1, self.generators[k].c0]
                         for k in self.controllable]).reshape(-1, 3)

    @property
    def sigma_w(self) -> np.ndarray:
        """Fluctuation std-devs ordered ``[loads, renewables]``."""
        return np.array([ld.sigma for ld in self.loads] + [rs.sigma for rs in self.renewables])

    @property
    def injection_signs(self) -> np.ndarray:
        """+1 for loads, -1 for renewables: sign of each fluctuation in the net imbalance."""
        return np.concatenate([np.ones(len(self.loads)), -np.ones(len(self.renewables))])

    def with_sigma(self, load_fraction: float, res_fraction: float) -> "GridCase":
        """Copy of the case with ``sigma = fraction * |p_ref|`` on every injection."""
        loads = tuple(Load(ld.bus, ld.p_ref, ld.q_ref, ld.gamma, load_fraction * abs(ld.p_ref))
                      for ld in self.loads)
        res = tuple(Renewable(rs.bus, rs.p_ref, rs.q_ref, rs.gamma, res_fraction * abs(rs.p_ref))
                    for rs in self.renewables)
        return GridCase(self.buses, self.lines, self.generators, loads, res,
                        self.base_mva, self.loss_factor, self.name)

    # -- serialization ------------------------------------------------------

    def to_document(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "loss_factor": self.loss_factor,
            "buses": [asdict(b) for b in self.buses],
            "lines": [asdict(ln) for ln in self.lines],
            "generators": [asdict(g) for g in self.generators],
            "loads": [asdict(ld) for ld in self.loads],
            "renewables": [asdict(rs) for rs in self.renewables],
        }

    @classmethod
    def from_document(cls, doc: dict[str, Any]) -> "GridCase":
        """Build from an already validated native document."""
        buses = tuple(Bus(**b) for b in doc["buses"])
        lines = tuple(Line(**ln) for ln in doc["lines"])
        gens = tuple(Generator(**g) for g in doc["generators"])
        loads = tuple(Load(**ld) for ld in doc.get("loads", []))
        res = tuple(Renewable(**rs) for rs in doc.get("renewables", []))
        return cls(
            buses=buses,
            lines=lines,
            generators=gens,
            loads=loads,
            renewables=res,
            base_mva=float(doc.get("base_mva", 100.0)),
            loss_factor=derive_loss_factor(gens, loads, res),
            name=doc.get("name", "case"),
        )

    @cached_property
    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_document(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def derive_loss_factor(generators, loads, renewables) -> float:
    """``sum p_g_ref / (sum p_l_ref - sum p_rs_ref)`` clipped to ``[1, 1.2]``."""
    net_demand = sum(ld.p_ref for ld in loads) - sum(rs.p_ref for rs in renewables)
    if net_demand <= 0:
        return LOSS_FACTOR_MIN
    ratio = sum(g.p_ref for g in generators) / net_demand
    return float(min(max(ratio, LOSS_FACTOR_MIN), LOSS_FACTOR_MAX))
