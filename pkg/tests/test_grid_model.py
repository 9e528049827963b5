import numpy as np
import pytest
from scipy import optimize, sparse

from backend.Common.errors import (DivergenceError, InputError, IslandingError, SingularBranchError,
                                   SingularJacobianError, StructuralError)
from backend.Models.grid_model import (AdmittanceMatrix, AlgebraicNetwork, Branch, Bus, LoadModel, NetworkCase,
                                       apply_generator_trip, area_interchange, attach_power_flow,
                                       build_admittance, island_of, network_algebraic_solve, online_inertia,
                                       solve_power_flow)


def gauss_seidel(case, tol=1e-14, max_iter=20000):
    """Independent power-flow oracle for slack + PQ networks."""
    y = build_admittance(case).toarray()
    index = case.bus_index()
    s = np.zeros(len(case.buses), dtype=complex)
    for ld in case.loads:
        s[index[ld.bus]] -= complex(ld.p0, ld.q0)
    v = np.array([b.voltage_mag * np.exp(1j * b.voltage_ang) if b.kind == "slack" else 1.0 + 0j
                  for b in case.buses])
    for _ in range(max_iter):
        change = 0.0
        for i, b in enumerate(case.buses):
            if b.kind == "slack":
                continue
            new = (np.conj(s[i] / v[i]) - (y[i] @ v - y[i, i] * v[i])) / y[i, i]
            change = max(change, abs(new - v[i]))
            v[i] = new
        if change < tol:
            return v
    raise AssertionError("Gauss-Seidel oracle did not converge")


def test_single_branch_admittance():
    case = NetworkCase(buses=[Bus(id=1, kind="slack"), Bus(id=2)],
                       branches=[Branch(from_bus=1, to_bus=2, series_r=0.01, series_x=0.1, shunt_b=0.2)])
    y = build_admittance(case).toarray()
    ys = 1.0 / complex(0.01, 0.1)
    expected = np.array([[ys + 0.1j, -ys], [-ys, ys + 0.1j]])
    assert np.allclose(y, expected, rtol=1e-14, atol=0)
    assert np.allclose(y, y.T)


def test_tap_sits_on_from_side():
    case = NetworkCase(buses=[Bus(id=1, kind="slack"), Bus(id=2)],
                       branches=[Branch(from_bus=1, to_bus=2, series_x=0.1, tap=0.95)])
    y = build_admittance(case).toarray()
    ys = 1.0 / 0.1j
    assert y[0, 0] == pytest.approx(ys / 0.95 ** 2)
    assert y[0, 1] == pytest.approx(-ys / 0.95)
    assert y[1, 1] == pytest.approx(ys)


def test_out_of_service_branch_is_ignored():
    case = NetworkCase(buses=[Bus(id=1, kind="slack"), Bus(id=2)],
                       branches=[Branch(from_bus=1, to_bus=2, series_x=0.1, status=False)])
    assert np.count_nonzero(build_admittance(case).toarray()) == 0


def test_dangling_branch_is_structural_error():
    case = NetworkCase(buses=[Bus(id=1, kind="slack")], branches=[Branch(from_bus=1, to_bus=7, series_x=0.1)])
    with pytest.raises(StructuralError):
        build_admittance(case)


def test_zero_impedance_branch_rejected():
    case = NetworkCase(buses=[Bus(id=1, kind="slack"), Bus(id=2)], branches=[Branch(from_bus=1, to_bus=2)])
    with pytest.raises(SingularBranchError):
        build_admittance(case)


def test_power_flow_matches_gauss_seidel(three_bus_case):
    solution = solve_power_flow(three_bus_case, tol=1e-12)
    oracle = gauss_seidel(three_bus_case)
    assert np.max(np.abs(solution.voltages - oracle)) <= 1e-8


def test_power_flow_balances_injections(three_bus_case):
    solution = solve_power_flow(three_bus_case, tol=1e-10)
    y = build_admittance(three_bus_case).toarray()
    s = solution.voltages * np.conj(y @ solution.voltages)
    assert s[1] == pytest.approx(-complex(0.6, 0.2), abs=1e-9)
    assert s[2] == pytest.approx(-complex(0.4, 0.15), abs=1e-9)
    assert solution.max_mismatch <= 1e-10


def test_power_flow_needs_one_slack(three_bus_case):
    buses = [b.model_copy(update={"kind": "pq"}) for b in three_bus_case.buses]
    with pytest.raises(StructuralError):
        solve_power_flow(three_bus_case.model_copy(update={"buses": buses}))


def test_infeasible_load_diverges():
    case = NetworkCase(buses=[Bus(id=1, kind="slack"), Bus(id=2)],
                       branches=[Branch(from_bus=1, to_bus=2, series_x=0.1)],
                       loads=[LoadModel(bus=2, p0=50.0, q0=10.0)])
    with pytest.raises((DivergenceError, SingularJacobianError)):
        solve_power_flow(case, max_iter=15)


def test_divergence_carries_mismatch():
    case = NetworkCase(buses=[Bus(id=1, kind="slack"), Bus(id=2)],
                       branches=[Branch(from_bus=1, to_bus=2, series_x=0.1)],
                       loads=[LoadModel(bus=2, p0=0.5)])
    with pytest.raises(DivergenceError) as info:
        solve_power_flow(case, tol=1e-12, max_iter=1)
    assert info.value.mismatch is not None


def stiff_slack_network(case, scale=1.0):
    """Network of a solved case with its slack held by a stiff source carrying ``scale`` x its current."""
    solution = solve_power_flow(case, tol=1e-12)
    ready = attach_power_flow(case, solution)
    base = build_admittance(ready, include_load_impedance=True)
    stiff = sparse.coo_matrix(([1e3 + 0j], ([0], [0])), shape=base.matrix.shape)
    y_aug = AdmittanceMatrix((base.matrix + stiff).tocsr(), base.bus_ids)
    network = AlgebraicNetwork(y_aug, ready.loads)
    injections = y_aug.toarray() @ solution.voltages - network.load_injection(solution.voltages)
    injections[1:] = 0.0
    return solution, ready, network, scale * injections


def test_algebraic_solve_reproduces_power_flow(three_bus_case):
    solution, ready, network, injections = stiff_slack_network(three_bus_case)
    v = network.solve(injections, tol=1e-12)
    assert np.max(np.abs(v - solution.voltages)) < 1e-9
    assert np.max(np.abs(network.residual(v, injections))) < 1e-11
    one_shot = network_algebraic_solve(network.y_aug, injections, ready.loads, tol=1e-12)
    assert np.max(np.abs(one_shot - v)) < 1e-12


def test_converged_warm_start_is_returned_unchanged(three_bus_case):
    _, _, network, injections = stiff_slack_network(three_bus_case)
    v = network.solve(injections, tol=1e-12)
    again = network.solve(injections, v, tol=1e-9)
    assert np.array_equal(again, v)
    moved = network.solve(0.98 * injections, v, tol=1e-12)
    assert np.max(np.abs(moved - v)) > 1e-4


def test_solved_loads_follow_their_voltage_laws(three_bus_case):
    _, ready, network, injections = stiff_slack_network(three_bus_case, scale=0.95)
    v = network.solve(injections, tol=1e-12)
    y_branch = build_admittance(ready).toarray()
    s_net = v * np.conj(y_branch @ v)
    for ld in ready.loads:
        k = ready.bus_index()[ld.bus]
        ratio = abs(v[k]) / ld.v0
        assert abs(ratio - 1.0) > 1e-3
        drawn = complex(ld.p0 * ratio, ld.q0 * ratio ** 2)
        assert s_net[k] == pytest.approx(-drawn, abs=1e-9)


def test_halved_current_loads_match_a_dense_reference(three_bus_case):
    _, ready, network, injections = stiff_slack_network(three_bus_case)
    halved = [ld.model_copy(update={"p0": 0.5 * ld.p0}) for ld in ready.loads]
    v = AlgebraicNetwork(network.y_aug, halved).solve(injections, tol=1e-12)

    dense = network.y_aug.toarray()
    index = [ready.bus_index()[ld.bus] for ld in halved]
    current = np.array([ld.p0 / ld.v0 for ld in halved])
    n = dense.shape[0]

    def kcl(parts):
        x = parts[:n] + 1j * parts[n:]
        drawn = np.zeros(n, dtype=complex)
        drawn[index] = current * x[index] / np.abs(x[index])
        r = dense @ x - injections + drawn
        return np.concatenate([r.real, r.imag])

    guess = np.ones(n, dtype=complex)
    reference = optimize.root(kcl, np.concatenate([guess.real, guess.imag]), method="hybr", tol=1e-14)
    assert reference.success
    oracle = reference.x[:n] + 1j * reference.x[n:]
    assert np.max(np.abs(v - oracle)) < 1e-8


def test_network_without_loads_is_a_linear_solve(two_area_case):
    y_aug = build_admittance(two_area_case, include_sources=True)
    rng = np.random.default_rng(3)
    injections = rng.normal(size=y_aug.dimension) + 1j * rng.normal(size=y_aug.dimension)
    v = AlgebraicNetwork(y_aug, []).solve(injections)
    assert np.allclose(v, np.linalg.solve(y_aug.toarray(), injections), rtol=0, atol=1e-10)


def test_admittance_is_additive_over_branch_sets(two_area_case):
    half = len(two_area_case.branches) // 2
    first = two_area_case.model_copy(update={"branches": two_area_case.branches[:half]})
    second = two_area_case.model_copy(update={"branches": two_area_case.branches[half:], "shunts": []})
    y_all = build_admittance(two_area_case).toarray()
    y_sum = build_admittance(first).toarray() + build_admittance(second).toarray()
    assert np.allclose(y_all, y_sum, rtol=0, atol=1e-12)


def test_admittance_matches_branch_current_summation(two_area_case):
    y = build_admittance(two_area_case).toarray()
    index = two_area_case.bus_index()
    rng = np.random.default_rng(11)
    for _ in range(5):
        v = rng.uniform(0.9, 1.1, len(index)) * np.exp(1j * rng.uniform(-0.6, 0.6, len(index)))
        current = np.zeros(len(index), dtype=complex)
        for br in two_area_case.branches:
            if not br.status:
                continue
            z = complex(br.series_r, br.series_x)
            f, t = index[br.from_bus], index[br.to_bus]
            series = (v[f] / br.tap - v[t]) / z
            current[f] += (series + 0.5j * br.shunt_b * v[f] / br.tap) / br.tap
            current[t] += -series + 0.5j * br.shunt_b * v[t]
        for sh in two_area_case.shunts:
            current[index[sh.bus]] += complex(sh.g, sh.b) * v[index[sh.bus]]
        assert np.allclose(y @ v, current, rtol=0, atol=1e-9)


def test_trip_changes_only_the_unit_terminal_diagonal(two_area_case):
    before = build_admittance(two_area_case, include_sources=True).toarray()
    tripped = apply_generator_trip(two_area_case, 3)
    after = build_admittance(tripped, include_sources=True).toarray()
    k = two_area_case.bus_index()[two_area_case.generator(3).bus]
    diff = after - before
    xd_p = two_area_case.generator(3).machine.on_system_base(two_area_case.mva_base).xd_p
    assert diff[k, k] == pytest.approx(-1.0 / (1j * xd_p), rel=1e-12)
    diff[k, k] = 0.0
    assert np.count_nonzero(diff) == 0


def test_trip_leaves_the_system_short_of_power(two_area_system):
    system = two_area_system
    system.reset()
    system.trip(3)
    try:
        _, aux = system.derivatives(system.x0, return_aux=True)
    finally:
        system.reset()
    live = system.online.copy()
    live[system.gen_pos[3]] = False
    assert np.sum(aux["pm"][live] - aux["pe"][live]) < 0.0


@pytest.mark.slow
def test_two_area_power_flow(two_area_case):
    solution = solve_power_flow(two_area_case)
    assert solution.max_mismatch <= 1e-8
    assert set(solution.p_gen) == {1, 2, 3, 4}
    assert solution.p_gen[4] > 0
    vm = np.abs(solution.voltages)
    assert np.all((vm > 0.9) & (vm < 1.1))
    tie = area_interchange(two_area_case, solution, 1, 2)
    assert 2.0 < tie < 6.0


def test_generator_trip_and_islanding(smib_case, two_area_case):
    tripped = apply_generator_trip(two_area_case, 3)
    assert not tripped.generator(3).online
    assert two_area_case.generator(3).online
    assert online_inertia(tripped) < online_inertia(two_area_case)
    with pytest.raises(InputError):
        apply_generator_trip(tripped, 3)
    with pytest.raises(InputError):
        apply_generator_trip(two_area_case, 99)
    with pytest.raises(IslandingError):
        apply_generator_trip(smib_case, 1)


def test_island_of_follows_in_service_branches(three_bus_case):
    assert island_of(three_bus_case, 1) == {1, 2, 3}
    opened = [br.model_copy(update={"status": False}) if br.to_bus == 3 else br for br in three_bus_case.branches]
    assert island_of(three_bus_case.model_copy(update={"branches": opened}), 3) == {3}


def test_unknown_generator_lists_available(two_area_case):
    with pytest.raises(InputError, match="Available"):
        two_area_case.generator(42)
