"""
Nonlinear time-domain simulation of the closed system.

DynamicSystem assembles machines, exciters, governors, stabilizers and
bus-frequency sensors into one state vector. The network is solved
algebraically at every derivative evaluation. run() integrates a Scenario
with fixed-step RK4, applies events on the time grid, and routes the sensor
frequencies through the emulated WAMS channels when sampled mode is on.
"""

import logging
import re
import time as timer
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import sparse
from tqdm import tqdm

from backend.Common import config
from backend.Common.errors import (AlgebraicSolveError, DomainError, InitializationError, InputError,
                                   NumericGuardError)
from backend.Models import machine_dynamics as md
from backend.Models.generalized_pss import (PssConfig, PssState, executed_error, pss_derivatives,
                                            pss_output)
from backend.Models.grid_model import (INFINITE_BUS_ADMITTANCE, NETWORK_TOL, AdmittanceMatrix,
                                       AlgebraicNetwork, NetworkCase, apply_generator_trip,
                                       attach_power_flow, build_admittance, solve_power_flow)
from backend.Models.wams_channel import (ChannelEmulator, CoiEstimator, Datagram, WamsConfig,
                                         coi_speed_exact, resolve_weights)

logger = logging.getLogger(__name__)

DEFAULT_DT = 0.005
DEFAULT_T_END = 21.0
INIT_TOL = 1e-8
INIT_NETWORK_TOL = 1e-11
INSTABILITY_THRESHOLD = 0.2
OPEN_LOOP_LIMIT = 1e9


# -----------------------------------------------------------------------------
# Scenario schema
# -----------------------------------------------------------------------------

class Event(BaseModel):
    model_config = ConfigDict(frozen=True)

    time: float = Field(ge=0.0)
    kind: Literal["gen_trip", "vref_step", "load_step"]
    target: int
    magnitude: float = 0.0


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "scenario"
    case: Optional[str] = None
    t_end: float = Field(default=DEFAULT_T_END, gt=0)
    dt: float = Field(default=DEFAULT_DT, gt=0)
    events: List[Event] = Field(default_factory=list)
    pss: Optional[Dict[int, PssConfig]] = None
    wams: Optional[WamsConfig] = None
    record: List[str] = Field(default_factory=list)
    seed: int = 0

    @model_validator(mode="after")
    def _check_events(self):
        for ev in self.events:
            if ev.time > self.t_end:
                raise ValueError(f"event at t={ev.time}s lies beyond t_end={self.t_end}s")
        for name in self.record:
            if not RELATIVE_SPEED.fullmatch(name):
                raise ValueError(f"Unknown record signal: {name}. Expected form 'omega<id>-omega<id>'")
        return self

    @property
    def event_time(self):
        return min((ev.time for ev in self.events), default=0.0)


RELATIVE_SPEED = re.compile(r"omega(\d+)-omega(\d+)")


@dataclass
class SimulationRecord:
    time: np.ndarray
    signals: Dict[str, np.ndarray]
    metrics: dict = field(default_factory=dict)
    status: str = "completed"
    failure_time: Optional[float] = None
    unstable: bool = False
    audit: list = field(default_factory=list)

    def __getitem__(self, name):
        return self.signals[name]

    def to_frame(self):
        frame = pd.DataFrame({"time": self.time})
        for name, values in self.signals.items():
            frame[name] = values
        return frame


# -----------------------------------------------------------------------------
# Assembled system
# -----------------------------------------------------------------------------

@dataclass
class _PssUnit:
    pos: int
    gen_id: int
    cfg: PssConfig
    open_cfg: PssConfig
    idx: np.ndarray


class DynamicSystem:
    """
    Closed-loop differential-algebraic model built from a case whose loads
    already carry their power-flow voltage (see attach_power_flow).

    Slack buses without an online machine act as infinite buses.
    """

    def __init__(self, case: NetworkCase, pss: Dict[int, PssConfig] = None, wams: WamsConfig = None,
                 network_tol=NETWORK_TOL):
        self.case = case
        self.case_now = case
        self.f0 = case.f0
        self.omega_base = md.omega_base(case.f0)
        self.network_tol = network_tol
        self.bus_index = case.bus_index()
        self.n_bus = len(case.buses)

        self.gens = case.online_generators()
        self.gen_ids = [g.id for g in self.gens]
        self.gen_pos = {g.id: m for m, g in enumerate(self.gens)}
        nm = len(self.gens)
        self.nm = nm
        self.online = np.ones(nm, dtype=bool)
        self.machine_bus = np.array([self.bus_index[g.bus] for g in self.gens], dtype=int)
        self.area = np.array([case.buses[self.bus_index[g.bus]].area for g in self.gens], dtype=int)

        params = [g.machine.on_system_base(case.mva_base) for g in self.gens]
        self.params = params
        for name in ("h", "d", "omega0", "xd", "xq", "xd_p", "xq_p", "td0_p", "tq0_p"):
            setattr(self, name, np.array([getattr(p, name) for p in params], dtype=float))
        self.y_source = 1.0 / (1j * self.xd_p)

        self.labels = []
        self.i_delta = np.array([self._add(f"delta_{g.id}") for g in self.gens], dtype=int)
        self.i_omega = np.array([self._add(f"omega_{g.id}") for g in self.gens], dtype=int)

        self.ax_pos = np.array([m for m, p in enumerate(params) if p.model == "two_axis"], dtype=int)
        self.i_eq = np.array([self._add(f"eq_p_{self.gen_ids[m]}") for m in self.ax_pos], dtype=int)
        self.i_ed = np.array([self._add(f"ed_p_{self.gen_ids[m]}") for m in self.ax_pos], dtype=int)
        self.eq_const = np.zeros(nm)
        self.ed_const = np.zeros(nm)

        self.exc_pos = np.array([m for m in self.ax_pos if self.gens[m].exciter is not None], dtype=int)
        self.i_efd = np.array([self._add(f"efd_{self.gen_ids[m]}") for m in self.exc_pos], dtype=int)
        exciters = [self.gens[m].exciter for m in self.exc_pos]
        self.ka = np.array([e.ka for e in exciters], dtype=float)
        self.ta = np.array([e.ta for e in exciters], dtype=float)
        self.efd_min = np.array([e.efd_min for e in exciters], dtype=float)
        self.efd_max = np.array([e.efd_max for e in exciters], dtype=float)
        self.vref = np.zeros(len(exciters))
        self.efd_const = np.zeros(nm)

        self.gov_pos = np.array([m for m, g in enumerate(self.gens) if g.governor is not None], dtype=int)
        self.i_valve = np.array([self._add(f"valve_{self.gen_ids[m]}") for m in self.gov_pos], dtype=int)
        self.i_pm = np.array([self._add(f"pm_{self.gen_ids[m]}") for m in self.gov_pos], dtype=int)
        governors = [self.gens[m].governor.on_system_base(self.gens[m].machine.mva_base, case.mva_base)
                     for m in self.gov_pos]
        self.governors = governors
        self.inv_droop = np.array([1.0 / gv.droop_r for gv in governors], dtype=float)
        self.tg = np.array([gv.tg for gv in governors], dtype=float)
        self.tt = np.array([gv.tt for gv in governors], dtype=float)
        self.pmax = np.array([gv.pmax for gv in governors], dtype=float)
        self.pref = np.zeros(len(governors))
        self.pm_const = np.zeros(nm)

        pss = {} if pss is None else pss
        self.pss_units: List[_PssUnit] = []
        for gen_id, cfg in sorted(pss.items()):
            if gen_id not in self.gen_pos:
                raise InputError(f"PSS configured for unknown or offline generator {gen_id}. "
                                 f"Available: {self.gen_ids}")
            idx = [self._add(f"pss_washout_{gen_id}")]
            idx += [self._add(f"pss_leadlag{j + 1}_{gen_id}") for j in range(len(cfg.leadlag_stages))]
            open_cfg = cfg.model_copy(update={"gain_k": 1.0, "vs_min": -OPEN_LOOP_LIMIT,
                                              "vs_max": OPEN_LOOP_LIMIT})
            self.pss_units.append(_PssUnit(self.gen_pos[gen_id], gen_id, cfg, open_cfg, np.array(idx)))

        self.wams = wams
        sensors = wams.sensors if wams is not None else []
        for s in sensors:
            if s.bus not in self.bus_index:
                raise InputError(f"Sensor {s.sensor_id} references missing bus {s.bus}")
        self.sensor_ids = [s.sensor_id for s in sensors]
        self.sensor_bus = np.array([self.bus_index[s.bus] for s in sensors], dtype=int)
        self.i_theta = np.array([self._add(f"sensor_theta_{s.sensor_id}") for s in sensors], dtype=int)
        self.i_freq = np.array([self._add(f"freq_{s.sensor_id}") for s in sensors], dtype=int)
        inertia_by_bus = {g.bus: self.h[m] for m, g in enumerate(self.gens)}
        self.sensor_weights = resolve_weights(wams, inertia_by_bus) if sensors else np.zeros(0)
        if wams is not None:
            self.t_lp1, self.t_lp2 = wams.filter.t_lp1, wams.filter.t_lp2
        self.coi_source = "sensors" if sensors and wams.coi_source == "sensors" else "exact"
        self.sampled = bool(sensors) and self.coi_source == "sensors" and wams.mode == "sampled"

        self.infinite_bus = np.array([i for i, b in enumerate(case.buses) if b.kind == "slack"
                                      and not any(g.bus == b.id for g in self.gens)], dtype=int)
        self.infinite_emf = np.array([case.buses[i].voltage_mag * np.exp(1j * case.buses[i].voltage_ang)
                                      for i in self.infinite_bus], dtype=complex)
        self.loads = list(case.loads)
        self._build_network()
        self._v_last = None
        self._v0 = None
        self.x0 = None
        self.power_flow = None

    def _add(self, label):
        self.labels.append(label)
        return len(self.labels) - 1

    @property
    def n_states(self):
        return len(self.labels)

    def state_index(self, label):
        return self.labels.index(label)

    def _build_network(self):
        y_aug = build_admittance(self.case_now, include_sources=True, include_load_impedance=True)
        if self.infinite_bus.size:
            extra = sparse.coo_matrix((np.full(self.infinite_bus.size, INFINITE_BUS_ADMITTANCE, dtype=complex),
                                       (self.infinite_bus, self.infinite_bus)), shape=(self.n_bus, self.n_bus))
            y_aug = AdmittanceMatrix((y_aug.matrix + extra).tocsr(), y_aug.bus_ids)
        self.y_aug = y_aug
        self.network = AlgebraicNetwork(y_aug, self.loads)

    def reset(self):
        """Undo events applied by a previous run."""
        self.case_now = self.case
        self.online[:] = True
        self.loads = list(self.case.loads)
        self.vref = self._vref0.copy()
        self._v_last = self._v0
        self._build_network()

    # -------------------------------------------------------------------------

    def _internal(self, x):
        eq = self.eq_const.copy()
        ed = self.ed_const.copy()
        eq[self.ax_pos] = x[self.i_eq]
        ed[self.ax_pos] = x[self.i_ed]
        return eq, ed

    def network_voltages(self, x, t=None):
        delta = x[self.i_delta]
        eq, ed = self._internal(x)
        e_int = md.internal_voltage(delta, eq, ed)
        inj = np.zeros(self.n_bus, dtype=complex)
        np.add.at(inj, self.machine_bus[self.online], (e_int * self.y_source)[self.online])
        if self.infinite_bus.size:
            inj[self.infinite_bus] += INFINITE_BUS_ADMITTANCE * self.infinite_emf
        v = self.network.solve(inj, self._v_last, tol=self.network_tol, time=t)
        self._v_last = v
        return v, e_int, eq, ed

    def omega_bar_continuous(self, x):
        if self.coi_source == "sensors":
            return float(np.dot(self.sensor_weights, x[self.i_freq]) / self.f0)
        omega = x[self.i_omega]
        return coi_speed_exact(omega[self.online], self.h[self.online])

    def coi_exact(self, x):
        return coi_speed_exact(x[self.i_omega][self.online], self.h[self.online])

    def loop_output(self, x, gen_id):
        """-nu of a unit's stabilizer at state x, the signal its opened loop returns."""
        unit = next((u for u in self.pss_units if u.gen_id == gen_id), None)
        if unit is None:
            raise InputError(f"Generator {gen_id} carries no stabilizer. "
                             f"Available: {[u.gen_id for u in self.pss_units]}")
        omega = x[self.i_omega[unit.pos]]
        return -executed_error(omega, self.omega_bar_continuous(x), self.omega0[unit.pos], unit.cfg)

    def derivatives(self, x, omega_bar=None, u_open=None, t=None, return_aux=False):
        """
        Time derivative of the full state.

        Args:
            omega_bar: externally held COI estimate (sampled WAMS); None uses
                the continuous sensor states (or exact COI without sensors)
            u_open: {gen_id: u} replaces that unit's stabilizer input with u
                and opens its loop at unity gain
        """
        omega = x[self.i_omega]
        if np.any(omega <= 0):
            raise NumericGuardError(f"rotor speed must stay positive (t={t})")
        v, e_int, eq, ed = self.network_voltages(x, t)
        delta = x[self.i_delta]
        vt = v[self.machine_bus]
        i_d, i_q, pe = md.stator_currents(delta, e_int, vt, self.xd_p)
        pe = np.where(self.online, pe, 0.0)
        dx = np.zeros_like(x)

        if self.i_theta.size:
            theta_err = np.angle(v[self.sensor_bus] * np.exp(-1j * x[self.i_theta]))
            rate = theta_err / self.t_lp1
            dx[self.i_theta] = rate
            dx[self.i_freq] = (self.f0 + rate / (2.0 * np.pi) - x[self.i_freq]) / self.t_lp2

        if omega_bar is None:
            omega_bar = self.omega_bar_continuous(x)

        vs = np.zeros(self.nm)
        for unit in self.pss_units:
            if not self.online[unit.pos]:
                continue
            state = PssState.from_array(x[unit.idx])
            if u_open is not None and unit.gen_id in u_open:
                cfg, dnu = unit.open_cfg, u_open[unit.gen_id]
            else:
                cfg = unit.cfg
                dnu = executed_error(omega[unit.pos], omega_bar, self.omega0[unit.pos], cfg)
            d = pss_derivatives(state, dnu, cfg)
            dx[unit.idx] = (d.washout_state,) + d.leadlag_states
            vs[unit.pos] = pss_output(state, dnu, cfg)

        pm = self.pm_const.copy()
        if self.gov_pos.size:
            pm[self.gov_pos] = x[self.i_pm]
            dvalve, dpm = md.governor_rhs(x[self.i_valve], x[self.i_pm], omega[self.gov_pos], self.pref,
                                          self.inv_droop, self.tg, self.tt, self.pmax,
                                          self.omega0[self.gov_pos])
            live = self.online[self.gov_pos]
            dx[self.i_valve] = np.where(live, dvalve, 0.0)
            dx[self.i_pm] = np.where(live, dpm, 0.0)

        domega, ddelta = md.swing_rhs(omega, pm, pe, self.h, self.d, self.omega0, self.f0)
        dx[self.i_omega] = np.where(self.online, domega, 0.0)
        dx[self.i_delta] = np.where(self.online, ddelta, 0.0)

        efd = self.efd_const.copy()
        if self.exc_pos.size:
            efd[self.exc_pos] = x[self.i_efd]
            defd = md.exciter_rhs(x[self.i_efd], np.abs(vt[self.exc_pos]), vs[self.exc_pos], self.vref,
                                  self.ka, self.ta, self.efd_min, self.efd_max)
            dx[self.i_efd] = np.where(self.online[self.exc_pos], defd, 0.0)

        if self.ax_pos.size:
            a = self.ax_pos
            deq, ded = md.flux_rhs(eq[a], ed[a], efd[a], i_d[a], i_q[a], self.xd[a], self.xd_p[a],
                                   self.xq[a], self.xq_p[a], self.td0_p[a], self.tq0_p[a])
            dx[self.i_eq] = np.where(self.online[a], deq, 0.0)
            dx[self.i_ed] = np.where(self.online[a], ded, 0.0)

        if return_aux:
            return dx, {"v": v, "pe": pe, "vs": vs, "omega_bar": omega_bar, "vt": np.abs(vt), "efd": efd, "pm": pm}
        return dx

    def clip_limits(self, x):
        if self.exc_pos.size:
            x[self.i_efd] = np.clip(x[self.i_efd], self.efd_min, self.efd_max)
        if self.gov_pos.size:
            x[self.i_valve] = np.clip(x[self.i_valve], 0.0, self.pmax)
        return x

    def integrate(self, x, t_end, dt=DEFAULT_DT, u_open=None, callback=None):
        """Plain RK4 integration without events or WAMS sampling."""
        n_steps = int(round(t_end / dt))
        x = np.array(x, dtype=float)
        for k in range(n_steps):
            u = u_open(k * dt) if callable(u_open) else u_open
            u_mid = u_open((k + 0.5) * dt) if callable(u_open) else u_open
            u_end = u_open((k + 1) * dt) if callable(u_open) else u_open
            k1 = self.derivatives(x, u_open=u)
            k2 = self.derivatives(x + 0.5 * dt * k1, u_open=u_mid)
            k3 = self.derivatives(x + 0.5 * dt * k2, u_open=u_mid)
            k4 = self.derivatives(x + dt * k3, u_open=u_end)
            x = self.clip_limits(x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
            if callback is not None:
                callback((k + 1) * dt, x)
        return x

    # -------------------------------------------------------------------------

    def trip(self, gen_id):
        if gen_id not in self.gen_pos:
            raise InputError(f"Unknown generator: {gen_id}. Available: {self.gen_ids}")
        self.case_now = apply_generator_trip(self.case_now, gen_id)
        self.online[self.gen_pos[gen_id]] = False
        self._build_network()

    def apply_event(self, event: Event):
        logger.info(f"event {event.kind} target={event.target} magnitude={event.magnitude} at t={event.time}s")
        if event.kind == "gen_trip":
            self.trip(event.target)
        elif event.kind == "vref_step":
            pos = self.gen_pos.get(event.target)
            hits = np.flatnonzero(self.exc_pos == pos) if pos is not None else []
            if len(hits) == 0:
                raise InputError(f"vref_step target {event.target} has no exciter")
            self.vref[hits[0]] += event.magnitude
        elif event.kind == "load_step":
            matched = False
            for i, ld in enumerate(self.loads):
                if ld.bus == event.target:
                    self.loads[i] = ld.model_copy(update={"p0": ld.p0 + event.magnitude})
                    matched = True
            if not matched:
                raise InputError(f"load_step target bus {event.target} has no load. "
                                 f"Available: {[ld.bus for ld in self.loads]}")
            self._build_network()

    # -------------------------------------------------------------------------

    def equilibrium_state(self, solution):
        """Back-solve every state from a converged power flow."""
        if self.infinite_bus.size:
            v_pf = np.asarray(solution.voltages, dtype=complex)
            needed = self.y_aug.matrix @ v_pf - self.network.load_injection(v_pf)
            self.infinite_emf = needed[self.infinite_bus] / INFINITE_BUS_ADMITTANCE
        x = np.zeros(self.n_states)
        e_pf = np.zeros(self.nm, dtype=complex)
        for m, gen in enumerate(self.gens):
            v_term = solution.voltage(gen.bus)
            state, e_int = md.initial_machine_state(v_term, complex(gen.p_gen, gen.q_gen), self.params[m])
            x[self.i_delta[m]] = state.delta
            x[self.i_omega[m]] = self.omega0[m]
            e_pf[m] = e_int
            if self.params[m].model == "classical":
                self.eq_const[m] = state.eq_p
            else:
                k = int(np.flatnonzero(self.ax_pos == m)[0])
                x[self.i_eq[k]] = state.eq_p
                x[self.i_ed[k]] = state.ed_p

        v, e_int, eq, ed = self.network_voltages(x)
        i_d, i_q, pe = md.stator_currents(x[self.i_delta], e_int, v[self.machine_bus], self.xd_p)
        efd = eq + (self.xd - self.xd_p) * i_d
        self.efd_const = np.where(np.isin(np.arange(self.nm), self.ax_pos), efd, 0.0)
        self.pm_const = pe.copy()

        vt = np.abs(v[self.machine_bus])
        for k, m in enumerate(self.exc_pos):
            exciter = self.gens[m].exciter
            x[self.i_efd[k]] = efd[m]
            self.vref[k] = exciter.vref if exciter.vref is not None else efd[m] / exciter.ka + vt[m]
            if not exciter.efd_min <= efd[m] <= exciter.efd_max:
                raise InitializationError(f"efd_{self.gen_ids[m]} = {efd[m]:.4f} outside exciter limits",
                                          state_label=f"efd_{self.gen_ids[m]}", residual=float(efd[m]))
        for k, m in enumerate(self.gov_pos):
            x[self.i_pm[k]] = pe[m]
            x[self.i_valve[k]] = pe[m]
            gov = self.governors[k]
            self.pref[k] = gov.pref if gov.pref is not None else pe[m]
            if pe[m] > self.pmax[k]:
                raise InitializationError(f"pm_{self.gen_ids[m]} = {pe[m]:.4f} exceeds pmax {self.pmax[k]:.4f}",
                                          state_label=f"pm_{self.gen_ids[m]}", residual=float(pe[m]))
        if self.i_theta.size:
            x[self.i_theta] = np.angle(v[self.sensor_bus])
            x[self.i_freq] = self.f0
        self._vref0 = self.vref.copy()
        self._v0 = v
        return x


def initialize(case: NetworkCase, pss: Dict[int, PssConfig] = None, wams: WamsConfig = None,
               tol=INIT_TOL, pf_tol=1e-10):
    """
    Power flow, then back-solve an equilibrium of the closed system.

    Equilibrium voltages are solved to INIT_NETWORK_TOL and reused by the
    residual check and by every later reset().

    Raises:
        InitializationError: naming the state with the largest derivative
    """
    solution = solve_power_flow(case, tol=pf_tol)
    ready = attach_power_flow(case, solution)
    system = DynamicSystem(ready, pss=case.pss if pss is None else pss,
                           wams=case.wams if wams is None else wams)
    run_tol = system.network_tol
    system.network_tol = min(run_tol, INIT_NETWORK_TOL)
    try:
        x0 = system.equilibrium_state(solution)
        residual = system.derivatives(x0)
    finally:
        system.network_tol = run_tol
    worst = int(np.argmax(np.abs(residual))) if residual.size else 0
    if residual.size and abs(residual[worst]) > tol:
        label = system.labels[worst]
        raise InitializationError(f"initial derivative of {label} is {residual[worst]:.3e} (limit {tol:.0e})",
                                  state_label=label, residual=float(residual[worst]))
    system.x0 = x0
    system.power_flow = solution
    logger.info(f"initialized {case.name}: {system.n_states} states, "
                f"max |dx/dt| {np.max(np.abs(residual)) if residual.size else 0.0:.2e}")
    return system


# -----------------------------------------------------------------------------
# Time-domain run
# -----------------------------------------------------------------------------

def run(scenario: Scenario, case: NetworkCase = None, system: DynamicSystem = None):
    """
    Integrate a scenario with fixed-step RK4.

    Either an initialized ``system`` or a ``case`` (initialized here with the
    scenario's stabilizer and WAMS blocks) must be supplied.

    Returns:
        SimulationRecord; algebraic failures truncate the record and set
        failure_time, |omega - 1| > 0.2 sets the instability flag.
    """
    if system is None:
        if case is None:
            raise InputError("run() needs a case or an initialized system")
        system = initialize(case, pss=scenario.pss, wams=scenario.wams)
    if system.x0 is None:
        raise InputError("system is not initialized")

    started = timer.perf_counter()
    dt = scenario.dt
    n_steps = int(round(scenario.t_end / dt))
    times = np.arange(n_steps + 1) * dt
    events_at = {}
    for ev in sorted(scenario.events, key=lambda e: e.time):
        events_at.setdefault(int(round(ev.time / dt)), []).append(ev)

    logger.info(f"\n{'=' * 80}")
    logger.info(f"SIMULATING {scenario.name}: t_end={scenario.t_end}s dt={dt}s events={len(scenario.events)}")
    logger.info(f"{'=' * 80}")

    emulators, estimator, next_sample = [], None, None
    if system.sampled:
        emulators = [ChannelEmulator(ch, seed=scenario.seed) for ch in system.wams.sensors]
        estimator = CoiEstimator(system.sensor_ids, system.sensor_weights, system.f0,
                                 system.wams.staleness_cutoff, t0=0.0)
        next_sample = np.zeros(len(emulators))

    nm, n_pss = system.nm, len(system.pss_units)
    omega = np.zeros((n_steps + 1, nm))
    delta = np.zeros((n_steps + 1, nm))
    vt = np.zeros((n_steps + 1, nm))
    efd = np.zeros((n_steps + 1, nm))
    vs = np.zeros((n_steps + 1, n_pss))
    coi_exact = np.zeros(n_steps + 1)
    coi_est = np.zeros(n_steps + 1)
    stale = np.zeros(n_steps + 1)
    age_min = np.full(n_steps + 1, np.nan)
    age_max = np.full(n_steps + 1, np.nan)

    system.reset()
    x = system.x0.copy()
    status, failure_time, unstable = "completed", None, False
    last = n_steps

    for k in range(n_steps + 1):
        t = times[k]
        for ev in events_at.get(k, []):
            system.apply_event(ev)

        omega_bar = None
        if system.sampled:
            for j, emulator in enumerate(emulators):
                if t >= next_sample[j] - 1e-9:
                    value = float(x[system.i_freq[j]])
                    emulator.send(Datagram(sample_time=t, sensor_id=system.sensor_ids[j],
                                           seq=emulator.next_seq(), value=value))
                    next_sample[j] += emulator.channel.report_period
                estimator.receive_all(emulator.deliver(t))
            omega_bar = estimator.estimate(t)
            stale[k] = float(estimator.stale)
            ages = t - estimator.sample_times
            age_min[k], age_max[k] = float(ages.min()), float(ages.max())

        try:
            k1, aux = system.derivatives(x, omega_bar, t=t, return_aux=True)
        except AlgebraicSolveError as e:
            logger.error(f"algebraic solve failed at t={t:.4f}s: {e}")
            status, failure_time, last = "algebraic_failure", float(t), k - 1
            break
        except NumericGuardError as e:
            logger.warning(f"numeric guard tripped at t={t:.4f}s: {e}")
            status, unstable, last = "unstable", True, k - 1
            break

        omega[k] = x[system.i_omega]
        delta[k] = x[system.i_delta]
        vt[k] = aux["vt"]
        efd[k] = aux["efd"]
        vs[k] = [aux["vs"][u.pos] for u in system.pss_units]
        coi_exact[k] = system.coi_exact(x)
        coi_est[k] = aux["omega_bar"]

        if np.any(np.abs(omega[k][system.online] - 1.0) > INSTABILITY_THRESHOLD):
            logger.warning(f"speed deviation above {INSTABILITY_THRESHOLD} pu at t={t:.3f}s, stopping")
            status, unstable, last = "unstable", True, k
            break
        if k == n_steps:
            break

        try:
            k2 = system.derivatives(x + 0.5 * dt * k1, omega_bar, t=t)
            k3 = system.derivatives(x + 0.5 * dt * k2, omega_bar, t=t)
            k4 = system.derivatives(x + dt * k3, omega_bar, t=t + dt)
        except AlgebraicSolveError as e:
            logger.error(f"algebraic solve failed at t={t:.4f}s: {e}")
            status, failure_time, last = "algebraic_failure", float(t), k
            break
        except NumericGuardError as e:
            logger.warning(f"numeric guard tripped at t={t:.4f}s: {e}")
            status, unstable, last = "unstable", True, k
            break
        x = system.clip_limits(x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))

    n = last + 1
    signals = {}
    for m, gid in enumerate(system.gen_ids):
        signals[f"omega_{gid}"] = omega[:n, m]
    for m, gid in enumerate(system.gen_ids):
        signals[f"delta_{gid}"] = delta[:n, m]
    for m, gid in enumerate(system.gen_ids):
        signals[f"vt_{gid}"] = vt[:n, m]
    for m in system.exc_pos:
        signals[f"efd_{system.gen_ids[m]}"] = efd[:n, m]
    for j, unit in enumerate(system.pss_units):
        signals[f"vs_{unit.gen_id}"] = vs[:n, j]
    signals["coi_exact"] = coi_exact[:n]
    signals["coi_estimate"] = coi_est[:n]
    if system.sampled:
        signals["wams_stale"] = stale[:n]
        signals["wams_age_min"] = age_min[:n]
        signals["wams_age_max"] = age_max[:n]
    for name in scenario.record:
        a, b = (int(g) for g in RELATIVE_SPEED.fullmatch(name).groups())
        for gid in (a, b):
            if gid not in system.gen_pos:
                raise InputError(f"Unknown generator in record signal {name}. Available: {system.gen_ids}")
        signals[name] = omega[:n, system.gen_pos[a]] - omega[:n, system.gen_pos[b]]

    record = SimulationRecord(time=times[:n], signals=signals, status=status, failure_time=failure_time,
                              unstable=unstable,
                              audit=[r for e in emulators for r in e.audit])
    record.metrics = summarize(record, scenario)
    logger.info(f"simulation {status} after {timer.perf_counter() - started:.2f}s wall "
                f"(nadir {record.metrics.get('frequency_nadir', float('nan')):.6f} pu)")
    return record


def run_many(scenarios: List[Scenario], case: NetworkCase, max_workers=None):
    """Independent scenarios on a thread pool, one DynamicSystem each; results keep input order."""
    records = [None] * len(scenarios)
    with ThreadPoolExecutor(max_workers=max_workers or config.MAX_WORKERS) as pool:
        futures = [pool.submit(run, sc, case) for sc in scenarios]
        for i, fut in enumerate(tqdm(futures, desc="scenarios", disable=not config.SHOW_PROGRESS)):
            records[i] = fut.result()
    return records


# -----------------------------------------------------------------------------
# Metrics
# -----------------------------------------------------------------------------

def nadir_metric(record: SimulationRecord, event_time=0.0):
    """Minimum exact COI speed at or after the event and when it occurs."""
    if len(record.time) == 0 or event_time > record.time[-1] + 1e-12:
        raise DomainError(f"event time {event_time}s is beyond the record")
    mask = record.time >= event_time - 1e-12
    coi = record.signals["coi_exact"][mask]
    i = int(np.argmin(coi))
    return {"nadir": float(coi[i]), "time": float(record.time[mask][i])}


def steady_state_value(record: SimulationRecord, signal, window=2.0):
    mask = record.time >= record.time[-1] - window - 1e-12
    return float(np.mean(record.signals[signal][mask]))


def settling_time(record: SimulationRecord, signal, event_time, band, window=2.0):
    """Last time after the event the signal strays more than ``band`` from its final value."""
    final = steady_state_value(record, signal, window)
    mask = record.time >= event_time
    outside = np.abs(record.signals[signal][mask] - final) > band
    if not outside.any():
        return 0.0
    return float(record.time[mask][np.flatnonzero(outside)[-1]] - event_time)


def oscillation_envelope(record: SimulationRecord, signal, event_time, window=2.0):
    """Peak absolute deviation from the final value in consecutive windows after the event."""
    final = steady_state_value(record, signal, window)
    edges = np.arange(event_time, record.time[-1] + 1e-9, window)
    peaks = []
    values = record.signals[signal]
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (record.time >= lo) & (record.time < hi)
        if mask.any():
            peaks.append(float(np.max(np.abs(values[mask] - final))))
    return peaks


def summarize(record: SimulationRecord, scenario: Scenario):
    metrics = {"status": record.status, "unstable": record.unstable, "failure_time": record.failure_time}
    if len(record.time) and scenario.event_time <= record.time[-1]:
        nadir = nadir_metric(record, scenario.event_time)
        metrics["frequency_nadir"] = nadir["nadir"]
        metrics["nadir_time"] = nadir["time"]
    metrics["relative_speed"] = {}
    for name in scenario.record:
        values = record.signals[name]
        metrics["relative_speed"][name] = {"max_abs": float(np.max(np.abs(values))) if len(values) else 0.0}
    metrics["min_terminal_voltage"] = {
        key[3:]: float(np.min(values)) for key, values in record.signals.items() if key.startswith("vt_") and len(values)
    }
    if "coi_estimate" in record.signals and len(record.time):
        metrics["max_coi_estimate_error"] = float(np.max(np.abs(record.signals["coi_estimate"]
                                                                - record.signals["coi_exact"])))
    return metrics
