"""
Static network: case schema, admittance matrix, Newton power flow, and the
algebraic network solve used at every dynamics evaluation.

Loads are constant power during power flow. Afterwards the active part is a
constant current (magnitude p0/v0, in phase with the bus voltage) and the
reactive part a constant impedance folded into the augmented admittance.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.csgraph import connected_components

from backend.Common.errors import (AlgebraicSolveError, DivergenceError, InputError, IslandingError,
                                   SingularBranchError, SingularJacobianError, StructuralError)
from backend.Models.generalized_pss import PssConfig
from backend.Models.machine_dynamics import ExciterParams, GovernorParams, MachineParams
from backend.Models.wams_channel import WamsConfig

logger = logging.getLogger(__name__)

PF_TOL = 1e-8
PF_MAX_ITER = 30
NETWORK_TOL = 1e-9
NETWORK_MAX_SWEEPS = 50
INFINITE_BUS_ADMITTANCE = 1e6


# -----------------------------------------------------------------------------
# Case schema
# -----------------------------------------------------------------------------

class Bus(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    kind: Literal["slack", "pv", "pq"] = "pq"
    voltage_mag: float = Field(default=1.0, gt=0)
    voltage_ang: float = 0.0
    base_kv: float = Field(default=230.0, gt=0)
    area: int = 1


class Branch(BaseModel):
    model_config = ConfigDict(frozen=True)

    from_bus: int
    to_bus: int
    series_r: float = 0.0
    series_x: float = 0.0
    shunt_b: float = 0.0
    tap: float = Field(default=1.0, gt=0)
    status: bool = True


class LoadModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    bus: int
    p0: float = 0.0
    q0: float = 0.0
    v0: Optional[float] = None


class Shunt(BaseModel):
    model_config = ConfigDict(frozen=True)

    bus: int
    g: float = 0.0
    b: float = 0.0


class Generator(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    bus: int
    p_gen: float = 0.0
    q_gen: float = 0.0
    online: bool = True
    machine: MachineParams
    exciter: Optional[ExciterParams] = None
    governor: Optional[GovernorParams] = None


class NetworkCase(BaseModel):
    """Immutable case; trips and edits produce new values via model_copy."""
    model_config = ConfigDict(frozen=True)

    name: str = "case"
    f0: float = Field(default=60.0, gt=0)
    mva_base: float = Field(default=100.0, gt=0)
    buses: List[Bus]
    branches: List[Branch] = Field(default_factory=list)
    loads: List[LoadModel] = Field(default_factory=list)
    shunts: List[Shunt] = Field(default_factory=list)
    generators: List[Generator] = Field(default_factory=list)
    pss: Dict[int, PssConfig] = Field(default_factory=dict)
    wams: Optional[WamsConfig] = None

    def bus_index(self):
        return {b.id: i for i, b in enumerate(self.buses)}

    def generator(self, unit):
        for g in self.generators:
            if g.id == unit:
                return g
        raise InputError(f"Unknown generator: {unit}. Available: {[g.id for g in self.generators]}")

    def online_generators(self):
        return [g for g in self.generators if g.online]


@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    matrix: sparse.csr_matrix
    bus_ids: tuple

    @property
    def dimension(self):
        return len(self.bus_ids)

    def toarray(self):
        return self.matrix.toarray()

    def index(self, bus_id):
        return self.bus_ids.index(bus_id)


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    voltages: np.ndarray
    bus_ids: tuple
    p_gen: Dict[int, float]
    q_gen: Dict[int, float]
    iterations: int
    max_mismatch: float
    branch_flows: List[dict] = field(default_factory=list)

    def voltage(self, bus_id):
        return self.voltages[self.bus_ids.index(bus_id)]

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "max_mismatch": self.max_mismatch,
            "buses": [{"id": b, "vm": float(abs(v)), "va_deg": float(np.degrees(np.angle(v)))}
                      for b, v in zip(self.bus_ids, self.voltages)],
            "generators": [{"id": g, "p": self.p_gen[g], "q": self.q_gen[g]} for g in self.p_gen],
            "branches": self.branch_flows,
        }


# -----------------------------------------------------------------------------
# Admittance
# -----------------------------------------------------------------------------

def _branch_stamp(branch: Branch):
    z = complex(branch.series_r, branch.series_x)
    if abs(z) == 0:
        raise SingularBranchError(f"Branch {branch.from_bus}-{branch.to_bus} has zero series impedance")
    y = 1.0 / z
    half_b = 0.5j * branch.shunt_b
    t = branch.tap
    return (y + half_b) / t ** 2, -y / t, -y / t, y + half_b


def build_admittance(case: NetworkCase, include_sources=False, include_load_impedance=False):
    """
    Bus admittance matrix of the in-service branches and shunts.

    Args:
        include_sources: add each online machine's Norton admittance 1/(j xd_p)
            at its terminal bus (system base)
        include_load_impedance: fold the reactive load part in as constant
            impedance at the power-flow voltage v0

    Raises:
        StructuralError: branch endpoint not among the buses
        SingularBranchError: in-service branch with zero series impedance
    """
    index = case.bus_index()
    n = len(case.buses)
    rows, cols, vals = [], [], []

    for br in case.branches:
        if br.from_bus not in index or br.to_bus not in index:
            raise StructuralError(f"Branch {br.from_bus}-{br.to_bus} references a missing bus. "
                                  f"Available: {list(index)}")
        if not br.status:
            continue
        yff, yft, ytf, ytt = _branch_stamp(br)
        f, t = index[br.from_bus], index[br.to_bus]
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, yft, ytf, ytt]

    for sh in case.shunts:
        if sh.bus not in index:
            raise StructuralError(f"Shunt references missing bus {sh.bus}")
        k = index[sh.bus]
        rows.append(k)
        cols.append(k)
        vals.append(complex(sh.g, sh.b))

    if include_sources:
        for gen in case.online_generators():
            params = gen.machine.on_system_base(case.mva_base)
            k = index[gen.bus]
            rows.append(k)
            cols.append(k)
            vals.append(1.0 / (1j * params.xd_p))

    if include_load_impedance:
        for load in case.loads:
            if load.v0 is None:
                raise InputError(f"Load at bus {load.bus} has no power-flow voltage; run initialization first")
            k = index[load.bus]
            rows.append(k)
            cols.append(k)
            vals.append(-1j * load.q0 / load.v0 ** 2)

    matrix = sparse.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
    return AdmittanceMatrix(matrix=matrix, bus_ids=tuple(b.id for b in case.buses))


def branch_flows(case: NetworkCase, voltages):
    index = case.bus_index()
    flows = []
    for br in case.branches:
        if not br.status:
            continue
        yff, yft, ytf, ytt = _branch_stamp(br)
        vf, vt = voltages[index[br.from_bus]], voltages[index[br.to_bus]]
        s_from = vf * np.conj(yff * vf + yft * vt)
        s_to = vt * np.conj(ytf * vf + ytt * vt)
        flows.append({"from_bus": br.from_bus, "to_bus": br.to_bus,
                      "p_from": float(s_from.real), "q_from": float(s_from.imag),
                      "p_to": float(s_to.real), "q_to": float(s_to.imag)})
    return flows


def area_interchange(case: NetworkCase, solution: PowerFlowSolution, from_area=1, to_area=2):
    """Active power leaving ``from_area`` towards ``to_area`` over tie branches."""
    area = {b.id: b.area for b in case.buses}
    total = 0.0
    for flow in solution.branch_flows:
        a_f, a_t = area[flow["from_bus"]], area[flow["to_bus"]]
        if (a_f, a_t) == (from_area, to_area):
            total += flow["p_from"]
        elif (a_f, a_t) == (to_area, from_area):
            total += flow["p_to"]
    return total


# -----------------------------------------------------------------------------
# Power flow
# -----------------------------------------------------------------------------

def _jacobian(ybus, v, pvpq, pq):
    ibus = ybus @ v
    v_norm = v / np.abs(v)
    ds_dvm = np.diag(v) @ np.conj(ybus @ np.diag(v_norm)) + np.conj(np.diag(ibus)) @ np.diag(v_norm)
    ds_dva = 1j * np.diag(v) @ np.conj(np.diag(ibus) - ybus @ np.diag(v))
    j11 = ds_dva[np.ix_(pvpq, pvpq)].real
    j12 = ds_dvm[np.ix_(pvpq, pq)].real
    j21 = ds_dva[np.ix_(pq, pvpq)].imag
    j22 = ds_dvm[np.ix_(pq, pq)].imag
    return np.block([[j11, j12], [j21, j22]])


def solve_power_flow(case: NetworkCase, tol=PF_TOL, max_iter=PF_MAX_ITER, v_start=None):
    """
    Newton-Raphson power flow in polar form.

    Args:
        case: network case (online generators inject p_gen at pv buses)
        tol: max active/reactive mismatch, per-unit
        max_iter: Newton iterations before giving up
        v_start: optional warm-start complex voltages (bus order)

    Returns:
        PowerFlowSolution

    Raises:
        StructuralError: not exactly one slack bus, or two online units on a bus
        DivergenceError: mismatch above tol after max_iter
        SingularJacobianError: Newton step undefined
    """
    index = case.bus_index()
    slack = [i for i, b in enumerate(case.buses) if b.kind == "slack"]
    if len(slack) != 1:
        raise StructuralError(f"Power flow needs exactly one slack bus, found {len(slack)}")
    pv = [i for i, b in enumerate(case.buses) if b.kind == "pv"]
    pq = [i for i, b in enumerate(case.buses) if b.kind == "pq"]
    pvpq = pv + pq

    gens_at_bus = {}
    for gen in case.online_generators():
        if gen.bus not in index:
            raise StructuralError(f"Generator {gen.id} references missing bus {gen.bus}")
        if gen.bus in gens_at_bus:
            raise StructuralError(f"Generators {gens_at_bus[gen.bus]} and {gen.id} share bus {gen.bus}")
        gens_at_bus[gen.bus] = gen.id

    ybus = build_admittance(case).toarray()
    n = len(case.buses)
    s_load = np.zeros(n, dtype=complex)
    for load in case.loads:
        s_load[index[load.bus]] += complex(load.p0, load.q0)
    s_spec = -s_load
    for gen in case.online_generators():
        s_spec[index[gen.bus]] += gen.p_gen

    if v_start is not None:
        v = np.array(v_start, dtype=complex)
    else:
        vm = np.ones(n)
        va = np.zeros(n)
        for i in pv + slack:
            vm[i] = case.buses[i].voltage_mag
        va[slack[0]] = case.buses[slack[0]].voltage_ang
        v = vm * np.exp(1j * va)

    npvpq = len(pvpq)
    mismatch = np.inf
    for iteration in range(max_iter + 1):
        s_calc = v * np.conj(ybus @ v)
        mis = s_calc - s_spec
        f = np.r_[mis[pvpq].real, mis[pq].imag]
        mismatch = float(np.max(np.abs(f))) if f.size else 0.0
        logger.debug(f"power flow iteration {iteration}: max mismatch {mismatch:.3e}")
        if mismatch <= tol:
            break
        if iteration == max_iter:
            raise DivergenceError(f"Power flow did not converge in {max_iter} iterations "
                                  f"(max mismatch {mismatch:.3e})", mismatch=mismatch)
        jac = _jacobian(ybus, v, pvpq, pq)
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError as e:
            raise SingularJacobianError(f"Power-flow Jacobian is singular at iteration {iteration}: {e}")
        va = np.angle(v)
        vm = np.abs(v)
        va[pvpq] -= dx[:npvpq]
        vm[pq] -= dx[npvpq:]
        v = vm * np.exp(1j * va)

    s_gen = s_calc + s_load
    p_gen, q_gen = {}, {}
    for bus_id, gen_id in gens_at_bus.items():
        k = index[bus_id]
        p_gen[gen_id] = float(s_gen[k].real)
        q_gen[gen_id] = float(s_gen[k].imag)

    logger.info(f"power flow converged in {iteration} iterations (max mismatch {mismatch:.2e})")
    return PowerFlowSolution(voltages=v, bus_ids=tuple(b.id for b in case.buses), p_gen=p_gen,
                             q_gen=q_gen, iterations=iteration, max_mismatch=mismatch,
                             branch_flows=branch_flows(case, v))


def attach_power_flow(case: NetworkCase, solution: PowerFlowSolution):
    """Copy of the case with bus voltages, dispatch and load v0 from the solution."""
    buses = [b.model_copy(update={"voltage_mag": float(abs(v)), "voltage_ang": float(np.angle(v))})
             for b, v in zip(case.buses, solution.voltages)]
    loads = [ld.model_copy(update={"v0": float(abs(solution.voltage(ld.bus)))}) for ld in case.loads]
    gens = [g.model_copy(update={"p_gen": solution.p_gen[g.id], "q_gen": solution.q_gen[g.id]})
            if g.id in solution.p_gen else g for g in case.generators]
    return case.model_copy(update={"buses": buses, "loads": loads, "generators": gens})


# -----------------------------------------------------------------------------
# Algebraic network solve
# -----------------------------------------------------------------------------

class AlgebraicNetwork:
    """
    Prefactored augmented admittance plus the constant-current load terms.

    solve() iterates V = Y^-1 (I_machines + I_loads(V)); the load current
    depends on the voltage angle only, so a few sweeps suffice.
    """

    def __init__(self, y_aug: AdmittanceMatrix, loads: List[LoadModel]):
        self.y_aug = y_aug
        self.dense = y_aug.toarray()
        self.lu = lu_factor(self.dense, check_finite=False)
        self.n = y_aug.dimension
        self.load_index = np.array([y_aug.index(ld.bus) for ld in loads], dtype=int)
        currents = []
        for ld in loads:
            if ld.v0 is None:
                raise InputError(f"Load at bus {ld.bus} has no power-flow voltage; run initialization first")
            currents.append(ld.p0 / ld.v0)
        self.load_current = np.array(currents, dtype=float)

    def load_injection(self, v):
        out = np.zeros(self.n, dtype=complex)
        if self.load_index.size:
            vl = v[self.load_index]
            mag = np.abs(vl)
            unit = np.divide(vl, mag, out=np.zeros_like(vl), where=mag > 1e-12)
            np.add.at(out, self.load_index, -self.load_current * unit)
        return out

    def residual(self, v, injections):
        return self.dense @ v - injections - self.load_injection(v)

    def solve(self, injections, v_guess=None, tol=NETWORK_TOL, max_sweeps=NETWORK_MAX_SWEEPS, time=None):
        # a warm start that already satisfies KCL is returned as is, so repeated
        # solves at the same state give bit-identical voltages
        if v_guess is not None and self.load_index.size:
            if np.max(np.abs(self.residual(v_guess, injections))) < tol:
                return v_guess
        v = lu_solve(self.lu, injections + self.load_injection(
            v_guess if v_guess is not None else np.ones(self.n, dtype=complex)), check_finite=False)
        if not self.load_index.size:
            return v
        for sweep in range(max_sweeps):
            rhs = injections + self.load_injection(v)
            res = np.max(np.abs(self.dense @ v - rhs))
            if res < tol:
                return v
            v_next = lu_solve(self.lu, rhs, check_finite=False)
            if np.max(np.abs(v_next - v)) < 1e-15:
                return v_next
            v = v_next
        raise AlgebraicSolveError(f"network solve exceeded {max_sweeps} sweeps"
                                  + (f" at t={time:.4f}s" if time is not None else "")
                                  + f" (KCL residual {res:.3e})", time=time, residual=res)


def network_algebraic_solve(y_aug: AdmittanceMatrix, machine_injections, loads, v_guess=None,
                            tol=NETWORK_TOL, max_sweeps=NETWORK_MAX_SWEEPS):
    """One-shot algebraic solve; the simulator keeps an AlgebraicNetwork instead."""
    network = AlgebraicNetwork(y_aug, loads)
    return network.solve(np.asarray(machine_injections, dtype=complex), v_guess, tol, max_sweeps)


# -----------------------------------------------------------------------------
# Contingencies
# -----------------------------------------------------------------------------

def island_of(case: NetworkCase, bus_id):
    index = case.bus_index()
    rows, cols = [], []
    for br in case.branches:
        if br.status:
            rows.append(index[br.from_bus])
            cols.append(index[br.to_bus])
    graph = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(index), len(index)))
    _, labels = connected_components(graph, directed=False)
    target = labels[index[bus_id]]
    return {b.id for b, lab in zip(case.buses, labels) if lab == target}


def apply_generator_trip(case: NetworkCase, unit: int):
    """
    Take a unit offline. Its Norton source drops out of the augmented
    admittance and it leaves the COI set.

    Raises:
        InputError: unknown or already offline unit
        IslandingError: the unit is the last online unit of its island
    """
    gen = case.generator(unit)
    if not gen.online:
        raise InputError(f"Generator {unit} is already offline")
    island = island_of(case, gen.bus)
    others = [g for g in case.online_generators() if g.id != unit and g.bus in island]
    if not others:
        raise IslandingError(f"Tripping generator {unit} leaves its island without generation")
    logger.info(f"tripping generator {unit} at bus {gen.bus}")
    gens = [g.model_copy(update={"online": False}) if g.id == unit else g for g in case.generators]
    return case.model_copy(update={"generators": gens})


def online_inertia(case: NetworkCase):
    """Total online inertia on system base (s)."""
    return sum(g.machine.on_system_base(case.mva_base).h for g in case.online_generators())
