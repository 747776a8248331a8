"""Newton-Raphson AC power flow in polar coordinates.

The slack bus fixes (v, theta); PV buses fix (p, v); PQ buses fix (p, q).
Reactive limits are not enforced here: generator q is a monitored output.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gp_ccopf.errors import NonConvergence, SingularJacobian
from gp_ccopf.grid.case import GridCase

logger = logging.getLogger("gp_ccopf.grid.powerflow")


@dataclass(frozen=True)
class PfOptions:
    tol: float = 1e-8
    max_iter: int = 30
    v0: Optional[np.ndarray] = None
    theta0: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BusInjections:
    """Per-bus set-points.

    ``p_gen`` is scheduled generation (ignored at the slack), ``p_demand`` and
    ``q_demand`` are loads minus renewables, ``v_set`` is used at PV and slack buses.
    """

    p_gen: np.ndarray
    p_demand: np.ndarray
    q_demand: np.ndarray
    v_set: np.ndarray

    @classmethod
    def from_case(
        cls,
        case: GridCase,
        u: Optional[np.ndarray] = None,
        p_load: Optional[np.ndarray] = None,
        p_res: Optional[np.ndarray] = None,
    ) -> "BusInjections":
        """
        Assemble bus set-points from element values.

        Args:
            case: Network
            u: Controllable generation (n_u); defaults to the reference dispatch
            p_load: Load active powers; default reference
            p_res: Renewable active powers; default reference

        Reactive demand follows ``q = gamma * p``. Elements with ``p_ref == 0``
        keep their reference ``q_ref``.
        """
        u = case.u_ref if u is None else np.asarray(u, dtype=float)
        p_load = case.p_load_ref if p_load is None else np.asarray(p_load, dtype=float)
        p_res = case.p_res_ref if p_res is None else np.asarray(p_res, dtype=float)
        idx = case.bus_index

        p_gen = np.zeros(case.n_bus)
        for k, value in zip(case.controllable, u):
            p_gen[idx[case.generators[k].bus]] += value
        for gen in case.generators:
            if not gen.controllable:
                p_gen[idx[gen.bus]] += gen.p_ref

        p_demand = np.zeros(case.n_bus)
        q_demand = np.zeros(case.n_bus)
        for elements, values, sign in ((case.loads, p_load, 1.0), (case.renewables, p_res, -1.0)):
            for element, p in zip(elements, values):
                q = element.gamma * p if element.p_ref != 0 else element.q_ref
                p_demand[idx[element.bus]] += sign * p
                q_demand[idx[element.bus]] += sign * q

        v_set = np.array([b.v_set if b.v_set is not None else 1.0 for b in case.buses])
        return cls(p_gen=p_gen, p_demand=p_demand, q_demand=q_demand, v_set=v_set)


@dataclass(frozen=True)
class LineFlows:
    """Directed flows per line; ``s`` is the larger of the two apparent flows."""

    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray

    @property
    def s_from(self) -> np.ndarray:
        return np.hypot(self.p_from, self.q_from)

    @property
    def s_to(self) -> np.ndarray:
        return np.hypot(self.p_to, self.q_to)

    @property
    def s(self) -> np.ndarray:
        return np.maximum(self.s_from, self.s_to)

    @property
    def losses(self) -> np.ndarray:
        return self.p_from + self.p_to


@dataclass(frozen=True)
class PfSolution:
    v: np.ndarray
    theta: np.ndarray
    p_net: np.ndarray
    q_net: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray
    flows: LineFlows
    slack: int
    converged: bool
    iterations: int
    max_residual: float
    details: dict = field(default_factory=dict)

    @property
    def slack_p(self) -> float:
        """Active generation at the slack bus."""
        return float(self.p_gen[self.slack])

    @property
    def s(self) -> np.ndarray:
        return self.flows.s

    @property
    def total_losses(self) -> float:
        return float(np.sum(self.flows.losses))


def line_flows(case: GridCase, v: np.ndarray, theta: np.ndarray) -> LineFlows:
    """
    Series flows leaving each end of every line.

    With ``theta_bk = theta_b - theta_k``::

        p_bk = v_b^2 g - v_b v_k (g cos theta_bk + b sin theta_bk)
        q_bk = -v_b^2 b - v_b v_k (g sin theta_bk - b cos theta_bk)
    """
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    f, t = case.line_from, case.line_to
    g, b = case.line_g, case.line_b
    vf, vt = v[f], v[t]
    dth = theta[f] - theta[t]
    cos, sin = np.cos(dth), np.sin(dth)
    vv = vf * vt
    return LineFlows(
        p_from=vf**2 * g - vv * (g * cos + b * sin),
        q_from=-(vf**2) * b - vv * (g * sin - b * cos),
        p_to=vt**2 * g - vv * (g * cos - b * sin),
        q_to=-(vt**2) * b - vv * (-g * sin - b * cos),
    )


def _jacobian(ybus: np.ndarray, voltage: np.ndarray, pvpq: np.ndarray, pq: np.ndarray) -> np.ndarray:
    i_bus = ybus @ voltage
    v_norm = voltage / np.abs(voltage)
    ds_dvm = voltage[:, None] * np.conj(ybus * v_norm[None, :]) + np.diag(np.conj(i_bus) * v_norm)
    ds_dva = 1j * voltage[:, None] * np.conj(np.diag(i_bus) - ybus * voltage[None, :])

    j11 = ds_dva[np.ix_(pvpq, pvpq)].real
    j12 = ds_dvm[np.ix_(pvpq, pq)].real
    j21 = ds_dva[np.ix_(pq, pvpq)].imag
    j22 = ds_dvm[np.ix_(pq, pq)].imag
    return np.block([[j11, j12], [j21, j22]])


def solve_ac_pf(
    case: GridCase,
    injections: BusInjections,
    options: Optional[PfOptions] = None,
) -> PfSolution:
    """
    Solve the AC power flow by Newton-Raphson.

    Args:
        case: Network
        injections: Bus set-points
        options: Tolerance, iteration cap and optional warm start

    Returns:
        Converged PfSolution

    Raises:
        NonConvergence: iteration cap hit; ``details`` carries iterations, residual
            and the last iterate
        SingularJacobian: the Jacobian could not be factorized
    """
    options = options or PfOptions()
    ybus = case.ybus
    pv, pq, slack = case.pv, case.pq, case.slack
    pvpq = np.concatenate([pv, pq])
    n_pvpq = len(pvpq)

    v = np.ones(case.n_bus) if options.v0 is None else np.array(options.v0, dtype=float)
    theta = np.zeros(case.n_bus) if options.theta0 is None else np.array(options.theta0, dtype=float)
    fixed_v = np.concatenate([pv, [slack]])
    v[fixed_v] = injections.v_set[fixed_v]

    p_spec = injections.p_gen - injections.p_demand
    q_spec = -injections.q_demand

    residual = np.inf
    iteration = 0
    for iteration in range(options.max_iter + 1):
        voltage = v * np.exp(1j * theta)
        s_calc = voltage * np.conj(ybus @ voltage)
        mismatch = np.concatenate([
            s_calc.real[pvpq] - p_spec[pvpq],
            s_calc.imag[pq] - q_spec[pq],
        ])
        residual = float(np.max(np.abs(mismatch))) if mismatch.size else 0.0
        logger.debug("Newton iteration %d: max mismatch %.3e", iteration, residual)

        if not np.isfinite(residual):
            break
        if residual < options.tol:
            flows = line_flows(case, v, theta)
            return PfSolution(
                v=v,
                theta=theta,
                p_net=s_calc.real,
                q_net=s_calc.imag,
                p_gen=s_calc.real + injections.p_demand,
                q_gen=s_calc.imag + injections.q_demand,
                flows=flows,
                slack=slack,
                converged=True,
                iterations=iteration,
                max_residual=residual,
            )
        if iteration == options.max_iter:
            break

        jac = _jacobian(ybus, voltage, pvpq, pq)
        try:
            step = np.linalg.solve(jac, mismatch)
        except np.linalg.LinAlgError as e:
            raise SingularJacobian(
                f"Singular power-flow Jacobian at iteration {iteration}",
                {"iteration": iteration, "max_residual": residual},
            ) from e
        if not np.all(np.isfinite(step)):
            raise SingularJacobian(
                f"Non-finite Newton step at iteration {iteration}",
                {"iteration": iteration, "max_residual": residual},
            )
        theta[pvpq] -= step[:n_pvpq]
        v[pq] -= step[n_pvpq:]

    raise NonConvergence(
        f"Power flow did not converge in {iteration} iterations "
        f"(max mismatch {residual:.3e})",
        {"iterations": iteration, "max_residual": residual, "v": v, "theta": theta},
    )
