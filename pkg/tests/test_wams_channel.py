import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from backend.Common.errors import DomainError, StaleMeasurementError
from backend.Models.wams_channel import (ChannelEmulator, CoiEstimator, Datagram, FilterParams, SensorChannel,
                                         WamsConfig, bus_frequency, channel_step, coi_speed_estimate,
                                         coi_speed_exact, resolve_weights)


def sensors(n, **kwargs):
    return [SensorChannel(sensor_id=i + 1, bus=i + 1, **kwargs) for i in range(n)]


def test_uniform_and_inertia_weights():
    cfg = WamsConfig(sensors=sensors(4))
    assert np.allclose(resolve_weights(cfg), 0.25)

    inertia = WamsConfig(sensors=sensors(3), weighting="inertia")
    alpha = resolve_weights(inertia, {1: 6.5, 2: 6.5, 3: 6.175})
    assert alpha.sum() == pytest.approx(1.0)
    assert alpha[0] == pytest.approx(6.5 / 19.175)


def test_inertia_weights_need_a_machine_bus():
    cfg = WamsConfig(sensors=sensors(2), weighting="inertia")
    with pytest.raises(DomainError):
        resolve_weights(cfg, {9: 5.0})


def test_config_validation():
    with pytest.raises(ValidationError):
        WamsConfig(sensors=[SensorChannel(sensor_id=1, bus=1), SensorChannel(sensor_id=1, bus=2)])
    with pytest.raises(ValidationError):
        WamsConfig(sensors=[SensorChannel(sensor_id=1, bus=1, weight=0.3)], weighting="explicit")
    with pytest.raises(ValidationError):
        SensorChannel(sensor_id=1, bus=1, drop_prob=1.5)


def test_with_delay_overrides_every_channel():
    cfg = WamsConfig(sensors=sensors(3, delay_mean=0.1)).with_delay(delay_mean=1.25, drop_prob=0.02)
    assert all(s.delay_mean == 1.25 and s.drop_prob == 0.02 for s in cfg.sensors)
    assert all(s.jitter_std == 0.0 for s in cfg.sensors)


def test_exact_coi_speed():
    assert coi_speed_exact([1.01, 0.99], [3.0, 1.0]) == pytest.approx(1.005)
    with pytest.raises(DomainError):
        coi_speed_exact([], [])
    with pytest.raises(DomainError):
        coi_speed_exact([1.0, 1.0], [3.0, 0.0])


@settings(max_examples=300, deadline=None)
@given(values=st.lists(st.floats(59.0, 61.0), min_size=1, max_size=8), data=st.data())
def test_estimate_is_a_weighted_mean(values, data):
    weights = data.draw(st.lists(st.floats(0.01, 1.0), min_size=len(values), max_size=len(values)))
    est = coi_speed_estimate(values, weights)
    assert min(values) / 60.0 - 1e-12 <= est <= max(values) / 60.0 + 1e-12


def test_estimate_renormalizes_over_included_sensors():
    est = coi_speed_estimate([60.0, 60.6, 59.4], [0.5, 0.25, 0.25], included=[True, True, False])
    assert est == pytest.approx((0.5 * 60.0 + 0.25 * 60.6) / 0.75 / 60.0)
    with pytest.raises(StaleMeasurementError):
        coi_speed_estimate([60.0, 60.1], [0.5, 0.5], included=[False, False])


def test_bus_frequency_tracks_a_ramp():
    times = np.arange(0.0, 2.0, 0.01)
    angles = 2 * np.pi * 0.1 * times
    freq = bus_frequency(times, angles, FilterParams(t_lp1=0.05, t_lp2=0.05))
    assert freq[0] == 60.0
    assert freq[-1] == pytest.approx(60.1, abs=1e-9)


def test_bus_frequency_warm_up():
    assert np.array_equal(bus_frequency([0.0], [0.3], f0=50.0), [50.0])
    assert np.array_equal(bus_frequency([], [], f0=60.0), [60.0])


def test_constant_delay_holds_datagrams():
    emulator = ChannelEmulator(SensorChannel(sensor_id=1, bus=1, delay_mean=0.1))
    assert channel_step(emulator, 0.0, [Datagram(0.0, 1, emulator.next_seq(), 60.0)]) == []
    assert emulator.deliver(0.05) == []
    delivered = emulator.deliver(0.1)
    assert [d.seq for d in delivered] == [1]
    assert emulator.audit[0].delivery_time == pytest.approx(0.1)


def test_dropped_datagrams_never_arrive():
    emulator = ChannelEmulator(SensorChannel(sensor_id=2, bus=2, drop_prob=1.0))
    for k in range(5):
        emulator.send(Datagram(0.03 * k, 2, emulator.next_seq(), 60.0))
    assert emulator.deliver(10.0) == []
    assert all(r.dropped and r.delivery_time is None for r in emulator.audit)


def schedule(seed):
    channel = SensorChannel(sensor_id=3, bus=3, delay_mean=0.3, jitter_std=0.05, drop_prob=0.1)
    emulator = ChannelEmulator(channel, seed=seed)
    for k in range(200):
        emulator.send(Datagram(0.03 * k, 3, emulator.next_seq(), 60.0))
    return [(r.seq, r.dropped, r.delivery_time) for r in emulator.audit]


def test_channel_schedule_is_seeded():
    assert schedule(5) == schedule(5)
    assert schedule(5) != schedule(6)


def test_jittered_delivery_never_precedes_sampling():
    channel = SensorChannel(sensor_id=1, bus=1, delay_mean=0.2, jitter_std=0.1)
    emulator = ChannelEmulator(channel, seed=1)
    for k in range(100):
        emulator.send(Datagram(0.01 * k, 1, emulator.next_seq(), 60.0))
    delivered = emulator.deliver(100.0)
    assert len(delivered) == 100
    times = [r.delivery_time for r in emulator.audit]
    assert all(t >= r.sample_time for t, r in zip(times, emulator.audit))


@settings(max_examples=200, deadline=None)
@given(order=st.permutations(list(range(6))))
def test_late_datagrams_never_overwrite_newer_ones(order):
    estimator = CoiEstimator([1], [1.0])
    packets = [Datagram(0.03 * k, 1, k + 1, 60.0 + 0.01 * k) for k in range(6)]
    for k in order:
        estimator.receive(packets[k])
    assert estimator.values[0] == pytest.approx(60.05)
    assert estimator.sample_times[0] == pytest.approx(0.15)


def test_unknown_sensor_is_ignored():
    estimator = CoiEstimator([1, 2], [0.5, 0.5])
    assert not estimator.receive(Datagram(0.0, 9, 1, 61.0))
    assert estimator.estimate(0.0) == pytest.approx(1.0)


def test_stale_sensors_hold_last_estimate():
    estimator = CoiEstimator([1, 2], [0.5, 0.5], staleness_cutoff=0.5)
    estimator.receive_all([Datagram(0.1, 1, 1, 60.6), Datagram(0.1, 2, 1, 60.0)])
    held = estimator.estimate(0.2)
    assert held == pytest.approx(60.3 / 60.0)
    assert not estimator.stale

    assert estimator.estimate(1.0) == held
    assert estimator.stale

    estimator.receive(Datagram(0.95, 2, 2, 60.0))
    assert estimator.estimate(1.0) == pytest.approx(1.0)
    assert not estimator.stale


def test_bus_frequency_gain_on_a_sinusoid():
    h, f, amp = 0.01, 0.5, 0.01
    params = FilterParams(t_lp1=0.05, t_lp2=0.05)
    times = np.arange(0.0, 20.0 + h / 2, h)
    freq = bus_frequency(times, amp * np.sin(2 * np.pi * f * times), params)
    tail = freq[times >= 16.0] - 60.0
    measured = 0.5 * (tail.max() - tail.min())
    z = np.exp(1j * 2 * np.pi * f * h)
    a1, a2 = np.exp(-h / params.t_lp1), np.exp(-h / params.t_lp2)
    cascade = (1 - 1 / z) / h * (1 - a1) / (1 - a1 / z) * (1 - a2) / (1 - a2 / z)
    assert measured == pytest.approx(amp * abs(cascade) / (2 * np.pi), rel=0.02)


def test_sample_ages_stay_within_delay_plus_report_period():
    dt, period, delay = 0.005, 0.03, 0.1
    emulator = ChannelEmulator(SensorChannel(sensor_id=1, bus=1, delay_mean=delay, report_period=period))
    estimator = CoiEstimator([1], [1.0])
    next_sample, ages = 0.0, []
    for k in range(400):
        t = k * dt
        if t >= next_sample - 1e-9:
            emulator.send(Datagram(t, 1, emulator.next_seq(), 60.0))
            next_sample += period
        estimator.receive_all(emulator.deliver(t))
        estimator.estimate(t)
        if t >= delay - 1e-9:
            ages.append(t - estimator.sample_times[0])
    assert min(ages) >= delay - 1e-9
    assert max(ages) <= delay + period + 1e-9
    assert max(ages) >= delay + period - dt - 1e-9
