import numpy as np
import pytest

from multires_routing.baselines import (
    BRUTE_FORCE_MAX_N,
    HELD_KARP_MAX_N,
    TooLargeError,
    brute_force,
    cvrp_reference,
    held_karp,
    heuristic_tour,
    nearest_neighbor,
    two_opt,
)
from multires_routing.instances import (
    Instance,
    Tour,
    cvrp_solution_length,
    generate_cvrp,
    generate_uniform,
    solution_cost,
    tour_length,
    validate_cvrp_solution,
)

SQUARE = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])


def test_nearest_neighbor_walks_the_line():
    inst = Instance("tsp", np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]))
    tour = nearest_neighbor(inst)
    assert np.array_equal(tour.order, [0, 1, 2])
    assert tour_length(inst, tour) == 6.0
    # starting elsewhere is honored
    assert nearest_neighbor(inst, start=2).order[0] == 2


def test_nearest_neighbor_breaks_ties_low():
    # nodes 1 and 2 are equidistant from 0; the lower index wins
    inst = Instance("tsp", np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [2.0, 0.0]]))
    tour = nearest_neighbor(inst)
    assert np.array_equal(tour.order, [0, 1, 3, 2])


def test_nearest_neighbor_square():
    inst = Instance("tsp", SQUARE)
    assert tour_length(inst, nearest_neighbor(inst)) == 4.0


def test_two_opt_uncrosses_square():
    inst = Instance("tsp", SQUARE)
    crossed = Tour([0, 2, 1, 3])
    fixed = two_opt(inst, crossed)
    assert tour_length(inst, fixed) == 4.0


def test_two_opt_never_worsens():
    rng = np.random.default_rng(0)
    for _ in range(25):
        inst = generate_uniform(12, rng)
        start = Tour(rng.permutation(12))
        before = tour_length(inst, start)
        after = tour_length(inst, two_opt(inst, start))
        assert after <= before + 1e-12


def test_two_opt_fixed_point():
    rng = np.random.default_rng(1)
    inst = generate_uniform(10, rng)
    once = two_opt(inst, Tour(rng.permutation(10)))
    twice = two_opt(inst, once)
    assert np.array_equal(once.order, twice.order)


def test_two_opt_validates_input():
    inst = Instance("tsp", SQUARE)
    with pytest.raises(ValueError):
        two_opt(inst, Tour([0, 1, 2]))


def test_heuristic_tour_square():
    inst = Instance("tsp", SQUARE)
    assert tour_length(inst, heuristic_tour(inst)) == 4.0


def test_exact_solvers_agree_and_are_canonical():
    rng = np.random.default_rng(2)
    for trial in range(8):
        inst = generate_uniform(8, rng)
        hk_tour, hk_len = held_karp(inst)
        bf_tour, bf_len = brute_force(inst)
        # identical canonical orders make the lengths bitwise identical
        assert np.array_equal(hk_tour.order, bf_tour.order)
        assert hk_len == bf_len
        assert hk_tour.order[0] == 0 and hk_tour.order[1] < hk_tour.order[-1]
        assert hk_len == tour_length(inst, hk_tour)


def test_exact_solver_optimality_dominates_heuristics():
    rng = np.random.default_rng(3)
    for _ in range(10):
        inst = generate_uniform(9, rng)
        _, opt = held_karp(inst)
        assert opt <= tour_length(inst, heuristic_tour(inst)) + 1e-12
        assert opt <= tour_length(inst, Tour(rng.permutation(9))) + 1e-12


def test_held_karp_square_and_line():
    assert held_karp(Instance("tsp", SQUARE))[1] == 4.0
    line = Instance("tsp", np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]))
    tour, length = held_karp(line)
    assert length == 6.0
    assert np.array_equal(tour.order, [0, 1, 2])


def test_held_karp_invariances():
    rng = np.random.default_rng(4)
    inst = generate_uniform(10, rng)
    tour, length = held_karp(inst)
    shifted = Instance("tsp", inst.coords + np.array([2.0, -1.0]))
    tour2, length2 = held_karp(shifted)
    assert np.array_equal(tour.order, tour2.order)
    assert abs(length2 - length) <= 1e-9
    scaled = Instance("tsp", inst.coords * 2.0)
    tour3, length3 = held_karp(scaled)
    assert np.array_equal(tour.order, tour3.order)
    assert length3 == 2.0 * length  # doubling is exact in binary


def test_size_guards():
    rng = np.random.default_rng(5)
    with pytest.raises(TooLargeError):
        held_karp(generate_uniform(HELD_KARP_MAX_N + 1, rng))
    with pytest.raises(TooLargeError):
        brute_force(generate_uniform(BRUTE_FORCE_MAX_N + 1, rng))
    with pytest.raises(ValueError):
        held_karp(generate_cvrp(5, rng))
    with pytest.raises(ValueError):
        brute_force(generate_cvrp(5, rng))
    with pytest.raises(ValueError):
        nearest_neighbor(generate_cvrp(5, rng))


def test_cvrp_reference_feasible():
    rng = np.random.default_rng(6)
    for n in (5, 10, 20):
        inst = generate_cvrp(n, rng)
        sol = cvrp_reference(inst)
        validate_cvrp_solution(inst, sol)
        assert solution_cost(inst, sol) > 0.0


def test_cvrp_reference_singleton_routes_are_out_and_back():
    # demands just over half capacity force one route per city
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [-3.0, 0.0]])
    demands = np.array([0.0, 0.6, 0.6, 0.6])
    inst = Instance("cvrp", coords, demands=demands, depot=0)
    sol = cvrp_reference(inst)
    assert sorted(len(r) for r in sol.routes) == [1, 1, 1]
    assert cvrp_solution_length(inst, sol) == 2.0 * (1.0 + 2.0 + 3.0)


def test_cvrp_reference_beats_random_splits():
    # sweep + 2-opt should comfortably beat the best of many random splits
    rng = np.random.default_rng(7)
    inst = generate_cvrp(20, rng)
    ref_cost = solution_cost(inst, cvrp_reference(inst))

    def random_solution():
        perm = rng.permutation(np.arange(1, inst.n))
        routes = []
        current: list[int] = []
        load = 0.0
        for c in perm:
            d = float(inst.demands[c])
            if current and load + d > 1.0:
                routes.append(np.array(current))
                current, load = [int(c)], d
            else:
                current.append(int(c))
                load += d
        routes.append(np.array(current))
        from multires_routing.instances import CvrpSolution

        return CvrpSolution(tuple(routes))

    best_random = min(solution_cost(inst, random_solution()) for _ in range(1280))
    assert ref_cost <= 1.25 * best_random
