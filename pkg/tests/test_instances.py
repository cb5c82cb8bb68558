import json

import numpy as np
import pytest

from multires_routing.instances import (
    CvrpSolution,
    InfeasibleSolutionError,
    Instance,
    ParseError,
    Tour,
    cvrp_feasible,
    cvrp_solution_length,
    generate_clustered,
    generate_cvrp,
    generate_mixed,
    generate_uniform,
    instance_to_record,
    load_dataset,
    load_solutions,
    pairwise_distances,
    record_to_instance,
    record_to_solution,
    save_dataset,
    save_solutions,
    solution_cost,
    solution_to_record,
    tour_length,
    validate_cvrp_solution,
    vehicle_capacity,
)

SQUARE = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])


def test_instance_validation():
    with pytest.raises(ValueError):
        Instance("tsp", np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Instance("tsp", np.zeros((3, 3)))
    with pytest.raises(ValueError):
        Instance("tsp", np.array([[0.0, np.nan], [0, 1], [1, 0]]))
    with pytest.raises(ValueError):
        Instance("xsp", SQUARE)
    # tsp must not carry cvrp fields
    with pytest.raises(ValueError):
        Instance("tsp", SQUARE, demands=np.zeros(4))
    inst = Instance("tsp", SQUARE)
    assert inst.n == 4 and inst.n_cities == 4
    assert inst.coords.dtype == np.float64
    assert np.array_equal(inst.city_indices(), np.arange(4))


def test_cvrp_instance_validation():
    demands = np.array([0.0, 0.5, 0.5])
    coords = SQUARE[:3]
    inst = Instance("cvrp", coords, demands=demands, depot=0)
    assert inst.n == 3 and inst.n_cities == 2
    assert np.array_equal(inst.city_indices(), np.array([1, 2]))
    with pytest.raises(ValueError):
        Instance("cvrp", coords)
    with pytest.raises(ValueError):
        Instance("cvrp", coords, demands=np.array([0.1, 0.5, 0.5]), depot=0)
    with pytest.raises(ValueError):
        Instance("cvrp", coords, demands=np.array([0.0, 0.5, 1.5]), depot=0)
    with pytest.raises(ValueError):
        Instance("cvrp", coords, demands=np.array([0.0, 0.5, 0.0]), depot=0)
    with pytest.raises(ValueError):
        Instance("cvrp", coords, demands=demands, depot=5)


def test_tour_validation():
    with pytest.raises(ValueError):
        Tour(np.array([0, 1, 1, 2]))
    with pytest.raises(ValueError):
        Tour(np.array([[0, 1], [2, 3]]))
    t = Tour([2, 0, 1])
    assert t.order.dtype == np.int64 and t.n == 3


def test_pairwise_distances_345():
    coords = np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]])
    d = pairwise_distances(coords)
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0.0)
    assert d[0, 1] == 3.0 and d[1, 2] == 4.0 and d[0, 2] == 5.0


def test_square_tour_lengths():
    inst = Instance("tsp", SQUARE)
    assert tour_length(inst, Tour([0, 1, 2, 3])) == 4.0
    # crossing diagonal tour: two sides plus both diagonals
    crossing = tour_length(inst, Tour([0, 2, 1, 3]))
    assert abs(crossing - (2.0 + 2.0 * np.sqrt(2.0))) < 1e-15


def test_tour_length_invariances():
    rng = np.random.default_rng(4)
    for _ in range(20):
        inst = generate_uniform(9, rng)
        order = rng.permutation(9)
        base = tour_length(inst, Tour(order))
        shift = int(rng.integers(9))
        rotated = np.roll(order, shift)
        assert abs(tour_length(inst, Tour(rotated)) - base) < 1e-12
        assert abs(tour_length(inst, Tour(order[::-1])) - base) < 1e-12


def test_tour_length_geometry():
    rng = np.random.default_rng(5)
    for _ in range(10):
        inst = generate_uniform(7, rng)
        order = rng.permutation(7)
        base = tour_length(inst, Tour(order))
        shifted = Instance("tsp", inst.coords + np.array([3.25, -1.5]))
        assert abs(tour_length(shifted, Tour(order)) - base) < 1e-12
        scaled = Instance("tsp", inst.coords * 2.5)
        assert abs(tour_length(scaled, Tour(order)) - 2.5 * base) < 1e-12


def test_tour_length_requires_cover():
    inst = Instance("tsp", SQUARE)
    with pytest.raises(ValueError):
        tour_length(inst, Tour([0, 1, 2]))


def test_cvrp_solution_length_out_and_back():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    inst = Instance("cvrp", coords, demands=np.array([0.0, 0.6, 0.6]), depot=0)
    sol = CvrpSolution((np.array([1]), np.array([2])))
    assert cvrp_solution_length(inst, sol) == 4.0
    assert solution_cost(inst, sol) == 4.0
    # one route would exceed capacity
    assert not cvrp_feasible(inst, CvrpSolution((np.array([1, 2]),)))
    with pytest.raises(InfeasibleSolutionError):
        validate_cvrp_solution(inst, CvrpSolution((np.array([1, 2]),)))


def test_cvrp_solution_validation():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    inst = Instance("cvrp", coords, demands=np.array([0.0, 0.3, 0.3]), depot=0)
    with pytest.raises(InfeasibleSolutionError):
        validate_cvrp_solution(inst, CvrpSolution((np.array([1]),)))  # missing city
    with pytest.raises(InfeasibleSolutionError):
        validate_cvrp_solution(inst, CvrpSolution((np.array([1, 1, 2]),)))
    with pytest.raises(InfeasibleSolutionError):
        validate_cvrp_solution(inst, CvrpSolution((np.array([1, 0, 2]),)))  # depot in route
    ok = CvrpSolution((np.array([2, 1]),))
    validate_cvrp_solution(inst, ok)
    expected = 1.0 + np.sqrt(2.0) + 1.0
    assert abs(cvrp_solution_length(inst, ok) - expected) < 1e-15


def test_vehicle_capacity_anchors_and_interpolation():
    assert vehicle_capacity(20) == 30
    assert vehicle_capacity(50) == 40
    assert vehicle_capacity(100) == 50
    assert vehicle_capacity(35) == 35
    assert vehicle_capacity(60) == 42
    assert vehicle_capacity(200) == 70
    assert vehicle_capacity(5) == 30  # floor
    assert isinstance(vehicle_capacity(20), int)


def test_generate_uniform():
    rng = np.random.default_rng(0)
    inst = generate_uniform(30, rng, name="u30")
    assert inst.kind == "tsp" and inst.n == 30 and inst.name == "u30"
    assert np.all(inst.coords >= 0.0) and np.all(inst.coords <= 1.0)
    again = generate_uniform(30, np.random.default_rng(0))
    assert np.array_equal(inst.coords, again.coords)


def test_generate_clustered_is_tighter_than_uniform():
    # clustered instances should have a smaller mean nearest-neighbor distance
    rng = np.random.default_rng(11)
    def mean_nn(inst):
        d = pairwise_distances(inst.coords)
        np.fill_diagonal(d, np.inf)
        return d.min(axis=1).mean()
    uni = np.mean([mean_nn(generate_uniform(50, rng)) for _ in range(30)])
    clu = np.mean([mean_nn(generate_clustered(50, 5, rng)) for _ in range(30)])
    assert clu < uni
    with pytest.raises(ValueError):
        generate_clustered(10, 0, rng)
    with pytest.raises(ValueError):
        generate_clustered(10, 11, rng)


def test_generate_mixed_layout():
    rng = np.random.default_rng(3)
    inst = generate_mixed(21, 4, rng)
    assert inst.n == 21
    assert np.all(inst.coords >= 0.0) and np.all(inst.coords <= 1.0)
    # first half reproduces the untouched uniform draw for the same seed
    rng2 = np.random.default_rng(3)
    uniform_part = rng2.uniform(0.0, 1.0, size=(10, 2))
    assert np.array_equal(inst.coords[:10], uniform_part)


def test_generate_cvrp():
    rng = np.random.default_rng(7)
    inst = generate_cvrp(20, rng)
    assert inst.kind == "cvrp" and inst.n == 21 and inst.depot == 0
    assert inst.demands[0] == 0.0
    city = inst.demands[1:]
    scaled = city * vehicle_capacity(20)
    assert np.allclose(scaled, np.round(scaled))
    assert np.all(scaled >= 1.0) and np.all(scaled <= 9.0)


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    instances = [
        generate_uniform(8, rng, name="a"),
        generate_cvrp(6, rng, name="b"),
        generate_clustered(9, 3, rng),
    ]
    path = tmp_path / "ds.jsonl"
    save_dataset(instances, path)
    back = load_dataset(path)
    assert len(back) == 3
    for orig, cp in zip(instances, back):
        assert cp.kind == orig.kind and cp.name == orig.name
        assert np.array_equal(cp.coords, orig.coords)
        if orig.kind == "cvrp":
            assert np.array_equal(cp.demands, orig.demands)
            assert cp.depot == orig.depot


def test_load_dataset_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    rec = json.dumps(instance_to_record(generate_uniform(5, np.random.default_rng(0))))
    path.write_text(rec + "\n" + "{not json\n")
    with pytest.raises(ParseError, match=":2:"):
        load_dataset(path)
    path.write_text(rec + "\n\n" + json.dumps({"kind": "tsp"}) + "\n")
    with pytest.raises(ParseError, match=":3:"):
        load_dataset(path)


def test_record_to_instance_rejects_garbage():
    with pytest.raises(ParseError):
        record_to_instance({"coords": [[0, 0], [1, 1], [2, 2]]})
    with pytest.raises(ParseError):
        record_to_instance({"kind": "tsp", "coords": [[0, 0]]})


def test_solution_records():
    t = Tour([2, 0, 1])
    rec = solution_to_record(t, objective=1.5)
    assert rec == {"order": [2, 0, 1], "objective": 1.5}
    back = record_to_solution(rec)
    assert isinstance(back, Tour) and np.array_equal(back.order, t.order)

    s = CvrpSolution((np.array([1, 2]), np.array([3]),))
    rec = solution_to_record(s)
    assert rec == {"routes": [[1, 2], [3]]}
    back = record_to_solution(rec)
    assert isinstance(back, CvrpSolution)
    assert [r.tolist() for r in back.routes] == [[1, 2], [3]]

    with pytest.raises(ParseError):
        record_to_solution({"neither": 1})
    with pytest.raises(ParseError):
        record_to_solution({"order": [0, 0, 1]})
    with pytest.raises(ValueError):
        solution_to_record("not a solution")


def test_solutions_round_trip(tmp_path):
    path = tmp_path / "sols.jsonl"
    sols = [Tour([0, 1, 2]), CvrpSolution((np.array([1]), np.array([2]),))]
    save_solutions(sols, path, extras=[{"method": "nn"}, {"method": "policy"}])
    back = load_solutions(path)
    assert isinstance(back[0], Tour) and isinstance(back[1], CvrpSolution)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert lines[0]["method"] == "nn" and lines[1]["method"] == "policy"
