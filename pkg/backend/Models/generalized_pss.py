"""
Generalized delta-omega stabilizer.

The control error blends a local term (omega_i - omega_bar) and a global
term (omega_bar - omega0):

    dnu = beta1 * (omega_i - omega_bar) + beta2 * (omega_bar - omega0)

It is executed in reference/feedback form (nu - nu_ref), then passed through
washout -> lead-lag stages -> gain -> output limits.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

DEFAULT_LEADLAG = [(0.25, 0.04)]


class PssConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta1: float = Field(default=1.0, ge=0.0, le=1.0)
    beta2: float = Field(default=1.0, ge=0.0, le=1.0)
    gain_k: float = 25.0
    washout_tw: float = Field(default=10.0, gt=0)
    leadlag_stages: List[Tuple[float, float]] = Field(default_factory=lambda: list(DEFAULT_LEADLAG))
    vs_min: float = -0.1
    vs_max: float = 0.1

    @field_validator("leadlag_stages")
    @classmethod
    def _check_stages(cls, stages):
        for t_num, t_den in stages:
            if t_den <= 0 or t_num < 0:
                raise ValueError(f"lead-lag stage ({t_num}, {t_den}) needs t_num >= 0 and t_den > 0")
        return stages

    @model_validator(mode="after")
    def _check_limits(self):
        if not self.vs_min < self.vs_max:
            raise ValueError(f"vs_min ({self.vs_min}) must be < vs_max ({self.vs_max})")
        return self

    @property
    def n_states(self):
        return 1 + len(self.leadlag_stages)


@dataclass(frozen=True)
class PssState:
    washout_state: float = 0.0
    leadlag_states: Tuple[float, ...] = ()

    @classmethod
    def zeros(cls, cfg: PssConfig):
        return cls(0.0, tuple(0.0 for _ in cfg.leadlag_stages))

    def as_array(self):
        return np.array((self.washout_state,) + tuple(self.leadlag_states), dtype=float)

    @classmethod
    def from_array(cls, values):
        return cls(float(values[0]), tuple(float(v) for v in values[1:]))


@dataclass(frozen=True)
class ReferenceFeedback:
    nu_ref: float
    nu: float


def control_error(omega_i, omega_bar, omega0, cfg: PssConfig):
    return cfg.beta1 * (omega_i - omega_bar) + cfg.beta2 * (omega_bar - omega0)


def reference_and_feedback(omega_i, omega_bar, omega0, cfg: PssConfig):
    return ReferenceFeedback(
        nu_ref=cfg.beta2 * omega0,
        nu=cfg.beta1 * (omega_i - omega_bar) + cfg.beta2 * omega_bar,
    )


def executed_error(omega_i, omega_bar, omega0, cfg: PssConfig):
    """Error fed to the filter chain, formed as nu - nu_ref."""
    signals = reference_and_feedback(omega_i, omega_bar, omega0, cfg)
    return signals.nu - signals.nu_ref


def equivalent_speed_signal(omega_i, omega_bar, omega0, cfg: PssConfig):
    """
    Single feedback signal omega_tilde such that beta2 * (omega_tilde - omega0)
    reproduces the control error when beta2 > 0. With beta2 = 0 the signal is
    beta1 * (omega_i - omega_bar) + omega0.
    """
    if cfg.beta2 > 0:
        if cfg.beta1 == cfg.beta2:
            return omega_i
        return (cfg.beta1 / cfg.beta2) * (omega_i - omega_bar) + omega_bar
    return cfg.beta1 * (omega_i - omega_bar) + omega0


def _chain(state: PssState, delta_nu, cfg: PssConfig):
    """Walk washout then lead-lag stages; return (derivatives, chain output)."""
    washout_out = delta_nu - state.washout_state
    derivs = [washout_out / cfg.washout_tw]
    signal = washout_out
    for (t_num, t_den), s in zip(cfg.leadlag_stages, state.leadlag_states):
        derivs.append((signal - s) / t_den)
        signal = s + (t_num / t_den) * (signal - s)
    return derivs, signal


def pss_derivatives(state: PssState, delta_nu, cfg: PssConfig):
    derivs, _ = _chain(state, delta_nu, cfg)
    return PssState(derivs[0], tuple(derivs[1:]))


def chain_output(state: PssState, delta_nu, cfg: PssConfig):
    """Unlimited, unity-gain output of washout + lead-lag."""
    return _chain(state, delta_nu, cfg)[1]


def pss_output(state: PssState, delta_nu, cfg: PssConfig):
    return float(np.clip(cfg.gain_k * chain_output(state, delta_nu, cfg), cfg.vs_min, cfg.vs_max))


def tuning_description(cfg: PssConfig):
    """Which modes a (beta1, beta2) pair emphasizes."""
    if cfg.beta1 == cfg.beta2:
        return "none" if cfg.beta1 == 0 else "standard"
    if cfg.beta1 > cfg.beta2:
        return "inter_area_local"
    return "frequency_regulation"


def equivalent_standard_gain(cfg: PssConfig):
    """Gain of the conventional stabilizer reproduced when beta1 == beta2."""
    if cfg.beta1 != cfg.beta2:
        raise ValueError(f"no single equivalent gain for beta1={cfg.beta1}, beta2={cfg.beta2}")
    return cfg.beta1 * cfg.gain_k


def standard_config(gain_k, template: PssConfig = None):
    """Conventional delta-omega stabilizer (error omega_i - omega0)."""
    template = template or PssConfig()
    return template.model_copy(update={"beta1": 1.0, "beta2": 1.0, "gain_k": gain_k})


def uncompensated_config(template: PssConfig = None):
    """Washout only, beta1 = beta2 = 1, unity gain: the plant seen by the compensator."""
    template = template or PssConfig()
    return template.model_copy(update={"beta1": 1.0, "beta2": 1.0, "gain_k": 1.0, "leadlag_stages": []})
