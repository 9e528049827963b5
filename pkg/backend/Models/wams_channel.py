"""
Wide-area measurement layer.

- bus frequency from voltage angles (derivative filter cascade)
- center-of-inertia speed, exact and sensor-estimated
- a datagram channel emulator with delay, jitter and loss
- the controller-side estimator with last-value hold and staleness cutoff
"""

import heapq
import logging
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from backend.Common.errors import DomainError, StaleMeasurementError

logger = logging.getLogger(__name__)

DEFAULT_REPORT_PERIOD = 0.03
DEFAULT_STALENESS_CUTOFF = 2.0
# mean one-way delays (s) swept by `bode --preset-delays`
DELAY_PRESETS = (0.0, 0.125, 0.625, 1.25)


class FilterParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_lp1: float = Field(default=0.05, gt=0)
    t_lp2: float = Field(default=0.05, gt=0)


class SensorChannel(BaseModel):
    model_config = ConfigDict(frozen=True)

    sensor_id: int
    bus: int
    weight: float = Field(default=1.0, ge=0.0)
    delay_mean: float = Field(default=0.0, ge=0.0)
    jitter_std: float = Field(default=0.0, ge=0.0)
    drop_prob: float = Field(default=0.0, ge=0.0, le=1.0)
    report_period: float = Field(default=DEFAULT_REPORT_PERIOD, gt=0)
    seed: Optional[int] = None


class WamsConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sensors: List[SensorChannel] = Field(default_factory=list)
    weighting: Literal["uniform", "inertia", "explicit"] = "uniform"
    filter: FilterParams = Field(default_factory=FilterParams)
    staleness_cutoff: float = Field(default=DEFAULT_STALENESS_CUTOFF, gt=0)
    mode: Literal["sampled", "continuous"] = "sampled"
    coi_source: Literal["sensors", "exact"] = "sensors"

    @model_validator(mode="after")
    def _check_sensors(self):
        ids = [s.sensor_id for s in self.sensors]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate sensor ids: {ids}")
        if self.weighting == "explicit" and self.sensors:
            total = sum(s.weight for s in self.sensors)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"explicit sensor weights must sum to 1, got {total}")
        return self

    def with_delay(self, delay_mean=None, jitter_std=None, drop_prob=None):
        """Copy with every channel's delay model overridden."""
        update = {}
        if delay_mean is not None:
            update["delay_mean"] = delay_mean
        if jitter_std is not None:
            update["jitter_std"] = jitter_std
        if drop_prob is not None:
            update["drop_prob"] = drop_prob
        return self.model_copy(update={"sensors": [s.model_copy(update=update) for s in self.sensors]})


def resolve_weights(config: WamsConfig, inertia_by_bus: Dict[int, float] = None):
    """Normalized alpha per sensor in the configured weighting policy."""
    n = len(config.sensors)
    if n == 0:
        return np.zeros(0)
    if config.weighting == "uniform":
        return np.full(n, 1.0 / n)
    if config.weighting == "explicit":
        return np.array([s.weight for s in config.sensors], dtype=float)
    inertia_by_bus = inertia_by_bus or {}
    raw = np.array([inertia_by_bus.get(s.bus, 0.0) for s in config.sensors], dtype=float)
    if raw.sum() <= 0:
        raise DomainError("inertia weighting needs at least one sensor at a machine bus")
    return raw / raw.sum()


# -----------------------------------------------------------------------------
# Frequency and COI
# -----------------------------------------------------------------------------

def bus_frequency(times, angles, filter_params: FilterParams = None, f0=60.0):
    """
    Discrete bus-frequency estimate from an unwrapped angle history.

    Backward difference, then two first-order low-pass stages discretized
    with zero-order hold. Returns the estimate at every sample; with fewer
    than two samples the sensor is warming up and reports f0.
    """
    filter_params = filter_params or FilterParams()
    times = np.asarray(times, dtype=float)
    angles = np.asarray(angles, dtype=float)
    if len(angles) < 2:
        return np.full(max(len(angles), 1), float(f0))

    dt = np.diff(times)
    rate = np.diff(angles) / dt
    out = np.empty(len(angles))
    out[0] = f0
    y1 = y2 = rate[0]
    for n, (step, x) in enumerate(zip(dt, rate), start=1):
        a1 = np.exp(-step / filter_params.t_lp1)
        a2 = np.exp(-step / filter_params.t_lp2)
        y1 = a1 * y1 + (1.0 - a1) * x
        y2 = a2 * y2 + (1.0 - a2) * y1
        out[n] = f0 + y2 / (2.0 * np.pi)
    return out


def coi_speed_exact(machine_speeds, inertias):
    speeds = np.asarray(machine_speeds, dtype=float)
    h = np.asarray(inertias, dtype=float)
    if speeds.size == 0:
        raise DomainError("center-of-inertia speed needs at least one online machine")
    if np.any(h <= 0):
        raise DomainError(f"inertias must be positive, got {h}")
    return float(np.dot(h, speeds) / h.sum())


def coi_speed_estimate(latest_values, weights, f0=60.0, included=None):
    """
    Weighted per-unit average of sensor frequencies (Hz).

    weights=None uses the arithmetic mean. Sensors outside ``included`` are
    dropped and the remaining weights renormalized.

    Raises:
        StaleMeasurementError: when no sensor is included
    """
    values = np.asarray(latest_values, dtype=float)
    alpha = np.full(values.size, 1.0 / max(values.size, 1)) if weights is None else np.asarray(weights, dtype=float)
    mask = np.ones(values.size, dtype=bool) if included is None else np.asarray(included, dtype=bool)
    alpha = np.where(mask, alpha, 0.0)
    total = alpha.sum()
    if values.size == 0 or total <= 0:
        raise StaleMeasurementError("no fresh sensor values for the COI estimate")
    return float(np.dot(alpha / total, values) / f0)


# -----------------------------------------------------------------------------
# Channel emulation
# -----------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Datagram:
    sample_time: float
    sensor_id: int
    seq: int
    value: float


@dataclass(frozen=True)
class DeliveryRecord:
    sensor_id: int
    seq: int
    sample_time: float
    delivery_time: Optional[float]
    dropped: bool
    value: float


class ChannelEmulator:
    """
    One sensor-to-controller path. Randomness comes from a private seeded
    generator so schedules are reproducible per channel.
    """

    def __init__(self, channel: SensorChannel, seed: Optional[int] = None):
        self.channel = channel
        base_seed = channel.seed if channel.seed is not None else (seed if seed is not None else 0)
        self.rng = np.random.default_rng([base_seed, channel.sensor_id])
        self._in_flight = []
        self._seq = 0
        self.audit: List[DeliveryRecord] = []

    def next_seq(self):
        self._seq += 1
        return self._seq

    def send(self, datagram: Datagram):
        dropped = bool(self.rng.random() < self.channel.drop_prob)
        delay = max(0.0, float(self.rng.normal(self.channel.delay_mean, self.channel.jitter_std))) \
            if self.channel.jitter_std > 0 else self.channel.delay_mean
        if dropped:
            self.audit.append(DeliveryRecord(datagram.sensor_id, datagram.seq, datagram.sample_time,
                                             None, True, datagram.value))
            return
        delivery = datagram.sample_time + delay
        heapq.heappush(self._in_flight, (delivery, datagram.seq, datagram))
        self.audit.append(DeliveryRecord(datagram.sensor_id, datagram.seq, datagram.sample_time,
                                         delivery, False, datagram.value))

    def deliver(self, now):
        out = []
        while self._in_flight and self._in_flight[0][0] <= now + 1e-12:
            out.append(heapq.heappop(self._in_flight)[2])
        return out


def channel_step(emulator: ChannelEmulator, now, outgoing=()):
    """Send every outgoing datagram, then return those due at ``now``."""
    for datagram in outgoing:
        emulator.send(datagram)
    return emulator.deliver(now)


class CoiEstimator:
    """
    Controller-side COI estimate from delivered datagrams.

    Keeps the newest sample per sensor (by sample_time, so late packets never
    overwrite fresher ones), drops sensors older than the staleness cutoff and
    renormalizes the remaining weights. With every sensor stale the last
    estimate is held and ``stale`` is raised.
    """

    def __init__(self, sensor_ids, weights, f0=60.0, staleness_cutoff=DEFAULT_STALENESS_CUTOFF, t0=0.0):
        self.sensor_ids = list(sensor_ids)
        self.weights = np.asarray(weights, dtype=float)
        self.f0 = f0
        self.staleness_cutoff = staleness_cutoff
        self._pos = {sid: i for i, sid in enumerate(self.sensor_ids)}
        self.values = np.full(len(self.sensor_ids), float(f0))
        self.sample_times = np.full(len(self.sensor_ids), float(t0))
        self._received = np.zeros(len(self.sensor_ids), dtype=bool)
        self.estimate_value = 1.0
        self.stale = False

    def receive(self, datagram: Datagram):
        i = self._pos.get(datagram.sensor_id)
        if i is None:
            logger.warning(f"datagram from unknown sensor {datagram.sensor_id} ignored")
            return False
        if self._received[i] and datagram.sample_time <= self.sample_times[i]:
            return False
        self._received[i] = True
        self.values[i] = datagram.value
        self.sample_times[i] = datagram.sample_time
        return True

    def receive_all(self, datagrams):
        for d in datagrams:
            self.receive(d)

    def estimate(self, now):
        fresh = (now - self.sample_times) <= self.staleness_cutoff + 1e-12
        try:
            self.estimate_value = coi_speed_estimate(self.values, self.weights, self.f0, included=fresh)
            if self.stale:
                logger.info(f"sensor data fresh again at t={now:.3f}s")
            self.stale = False
        except StaleMeasurementError:
            if not self.stale:
                logger.warning(f"all sensors stale at t={now:.3f}s, holding COI estimate {self.estimate_value:.6f}")
            self.stale = True
        return self.estimate_value
