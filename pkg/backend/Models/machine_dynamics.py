"""
Synchronous machine, exciter/AVR and turbine-governor equations.

Two-axis machine (delta, omega, e'q, e'd) behind a transient reactance, a
single time-constant static exciter with hard limits, and a droop + servo +
turbine governor. Parameter blocks are read on machine MVA base and converted
to system base once with ``on_system_base``; every dynamic function below
expects system-base values.

The vectorised ``*_rhs`` helpers operate on numpy arrays so the assembled
system can evaluate all machines at once; the per-machine functions wrap them.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from backend.Common.errors import DomainError, NumericGuardError

logger = logging.getLogger(__name__)

DEFAULT_F0 = 60.0


class MachineParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    h: float = Field(gt=0)
    d: float = 0.0
    omega0: float = 1.0
    xd: float = Field(gt=0)
    xq: float = Field(gt=0)
    xd_p: float = Field(gt=0)
    xq_p: float = Field(gt=0)
    td0_p: float = Field(gt=0)
    tq0_p: float = Field(default=0.4, gt=0)
    mva_base: float = Field(default=100.0, gt=0)
    model: Literal["two_axis", "classical"] = "two_axis"

    @model_validator(mode="after")
    def _check_reactances(self):
        if self.xd < self.xd_p:
            raise ValueError(f"xd ({self.xd}) must be >= xd_p ({self.xd_p})")
        if self.xq < self.xq_p:
            raise ValueError(f"xq ({self.xq}) must be >= xq_p ({self.xq_p})")
        return self

    def on_system_base(self, system_mva):
        ratio = system_mva / self.mva_base
        return self.model_copy(update={
            "h": self.h / ratio,
            "d": self.d / ratio,
            "xd": self.xd * ratio,
            "xq": self.xq * ratio,
            "xd_p": self.xd_p * ratio,
            "xq_p": self.xq_p * ratio,
            "mva_base": system_mva,
        })


class ExciterParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    ka: float = Field(default=200.0, gt=0)
    ta: float = Field(default=0.01, gt=0)
    efd_min: float = -6.0
    efd_max: float = 6.0
    vref: Optional[float] = None

    @model_validator(mode="after")
    def _check_limits(self):
        if not self.efd_min < self.efd_max:
            raise ValueError(f"efd_min ({self.efd_min}) must be < efd_max ({self.efd_max})")
        return self


class GovernorParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    droop_r: float = Field(default=0.05, gt=0)
    tg: float = Field(default=0.2, gt=0)
    tt: float = Field(default=0.5, gt=0)
    pmax: float = Field(default=1.0, gt=0)
    pref: Optional[float] = None

    def on_system_base(self, machine_mva, system_mva):
        # droop stays per-unit on machine rating; pmax/pref move to system base
        ratio = machine_mva / system_mva
        return self.model_copy(update={
            "droop_r": self.droop_r / ratio,
            "pmax": self.pmax * ratio,
            "pref": None if self.pref is None else self.pref * ratio,
        })


@dataclass(frozen=True)
class MachineState:
    delta: float
    omega: float
    eq_p: float
    ed_p: float
    pm: float
    efd: float = 0.0
    valve: float = 0.0


# -----------------------------------------------------------------------------
# Vectorised right-hand sides
# -----------------------------------------------------------------------------

def internal_voltage(delta, eq_p, ed_p):
    """E' in the network frame, (e'd + j e'q) rotated by delta - pi/2."""
    return (ed_p + 1j * eq_p) * np.exp(1j * (delta - np.pi / 2))


def stator_currents(delta, e_internal, v_terminal, xd_p):
    """Return (i_d, i_q, pe) for current injected through j*xd_p."""
    current = (e_internal - v_terminal) / (1j * xd_p)
    i_dq = current * np.exp(-1j * (delta - np.pi / 2))
    pe = np.real(e_internal * np.conj(current))
    return np.real(i_dq), np.imag(i_dq), pe


def swing_rhs(omega, pm, pe, h, d, omega0=1.0, f0=DEFAULT_F0):
    if np.any(np.asarray(omega) <= 0):
        raise NumericGuardError(f"rotor speed must stay positive, got {omega}")
    domega = -(d / (2.0 * h)) * (omega - omega0) + (pm - pe) / (2.0 * h * omega)
    ddelta = 2.0 * np.pi * f0 * (omega - omega0)
    return domega, ddelta


def flux_rhs(eq_p, ed_p, efd, i_d, i_q, xd, xd_p, xq, xq_p, td0_p, tq0_p):
    deq = (efd - eq_p - (xd - xd_p) * i_d) / td0_p
    ded = (-ed_p + (xq - xq_p) * i_q) / tq0_p
    return deq, ded


def exciter_rhs(efd, v_mag, vs, vref, ka, ta, efd_min, efd_max):
    defd = (ka * (vref + vs - v_mag) - efd) / ta
    # anti-windup: hold at a limit while pushed further out
    at_max = (efd >= efd_max) & (defd > 0)
    at_min = (efd <= efd_min) & (defd < 0)
    return np.where(at_max | at_min, 0.0, defd)


def governor_rhs(valve, pm, omega, pref, inv_droop, tg, tt, pmax, omega0=1.0):
    dvalve = (pref - inv_droop * (omega - omega0) - valve) / tg
    dvalve = np.where(((valve >= pmax) & (dvalve > 0)) | ((valve <= 0.0) & (dvalve < 0)), 0.0, dvalve)
    dpm = (valve - pm) / tt
    return dvalve, dpm


# -----------------------------------------------------------------------------
# Per-machine operations
# -----------------------------------------------------------------------------

def swing_derivative(state: MachineState, pe: float, params: MachineParams, f0: float = DEFAULT_F0):
    """
    Swing equation in accelerating-power form.

    Returns:
        (domega_dt, ddelta_dt)

    Raises:
        NumericGuardError: if omega <= 0
    """
    domega, ddelta = swing_rhs(state.omega, state.pm, pe, params.h, params.d, params.omega0, f0)
    return float(domega), float(ddelta)


def ltv_damping_coefficient(pm_bar, pe_bar, omega_bar, d):
    """Damping seen along a non-equilibrium trajectory: D + (Pm - Pe)/omega^2."""
    if omega_bar <= 0:
        raise DomainError(f"omega_bar must be positive, got {omega_bar}")
    return d + (pm_bar - pe_bar) / omega_bar ** 2


@dataclass(frozen=True)
class SwingLinearization:
    a_coeff: float
    b_coeff: float


def ltv_swing_linearization(point, params: MachineParams):
    """
    Linearize the swing equation about a trajectory point.

    Args:
        point: mapping or object with pm_bar, pe_bar, omega_bar
        params: machine parameters (h, d used)

    Returns:
        SwingLinearization with a_coeff = -damping/2H and b_coeff = 1/(2H omega_bar)
    """
    if isinstance(point, dict):
        pm_bar, pe_bar, omega_bar = point["pm_bar"], point["pe_bar"], point["omega_bar"]
    else:
        pm_bar, pe_bar, omega_bar = point.pm_bar, point.pe_bar, point.omega_bar
    damping = ltv_damping_coefficient(pm_bar, pe_bar, omega_bar, params.d)
    return SwingLinearization(
        a_coeff=-damping / (2.0 * params.h),
        b_coeff=1.0 / (2.0 * params.h * omega_bar),
    )


def machine_derivatives(state: MachineState, network_voltage: complex, pss_output: float,
                        params: MachineParams, exciter: Optional[ExciterParams] = None,
                        governor: Optional[GovernorParams] = None, f0: float = DEFAULT_F0):
    """
    Full state derivative of one machine given its terminal voltage.

    Parameters are expected on system base. Absent exciter/governor blocks
    leave efd / pm constant.

    Returns:
        MachineState whose fields hold the time derivatives.
    """
    e_int = internal_voltage(state.delta, state.eq_p, state.ed_p)
    i_d, i_q, pe = stator_currents(state.delta, e_int, network_voltage, params.xd_p)
    domega, ddelta = swing_derivative(state, float(pe), params, f0)

    if params.model == "classical":
        deq = ded = 0.0
    else:
        deq, ded = flux_rhs(state.eq_p, state.ed_p, state.efd, i_d, i_q, params.xd, params.xd_p,
                            params.xq, params.xq_p, params.td0_p, params.tq0_p)

    defd = 0.0
    if exciter is not None and params.model != "classical":
        if exciter.vref is None:
            raise DomainError("exciter vref is not initialized")
        defd = exciter_rhs(state.efd, abs(network_voltage), pss_output, exciter.vref, exciter.ka,
                           exciter.ta, exciter.efd_min, exciter.efd_max)

    dvalve = dpm = 0.0
    if governor is not None:
        if governor.pref is None:
            raise DomainError("governor pref is not initialized")
        dvalve, dpm = governor_rhs(state.valve, state.pm, state.omega, governor.pref,
                                   1.0 / governor.droop_r, governor.tg, governor.tt, governor.pmax,
                                   params.omega0)

    return MachineState(delta=ddelta, omega=domega, eq_p=float(deq), ed_p=float(ded),
                        pm=float(dpm), efd=float(defd), valve=float(dvalve))


def initial_machine_state(v_terminal: complex, s_gen: complex, params: MachineParams):
    """
    Back-solve the steady state of a machine from its power-flow terminal
    voltage and generated power (system base).

    Returns:
        (MachineState, e_internal) with efd and pm consistent with zero derivatives.
    """
    current = np.conj(s_gen / v_terminal)
    if params.model == "classical":
        e_int = v_terminal + 1j * params.xd_p * current
        # classical: the internal EMF sits on the q-axis
        delta = float(np.angle(e_int))
        state = MachineState(delta=delta, omega=params.omega0, eq_p=float(abs(e_int)), ed_p=0.0,
                             pm=float(np.real(s_gen)))
        return state, e_int

    e_q_axis = v_terminal + 1j * params.xq * current
    delta = float(np.angle(e_q_axis))
    rotation = np.exp(-1j * (delta - np.pi / 2))
    i_dq = current * rotation
    v_dq = v_terminal * rotation
    i_d, i_q = float(np.real(i_dq)), float(np.imag(i_dq))
    eq_p = float(np.imag(v_dq)) + params.xd_p * i_d
    ed_p = float(np.real(v_dq)) - params.xq_p * i_q
    efd = eq_p + (params.xd - params.xd_p) * i_d
    state = MachineState(delta=delta, omega=params.omega0, eq_p=eq_p, ed_p=ed_p,
                         pm=float(np.real(s_gen)), efd=efd, valve=float(np.real(s_gen)))
    return state, internal_voltage(delta, eq_p, ed_p)


def omega_base(f0=DEFAULT_F0):
    return 2.0 * math.pi * f0
