import random

import pytest

from vrpd.instance import CostModel, Fleet, GeneratorSpec, Instance, Node, NodeKind, generate_instance


def make_instance(customers, hubs=(), depot=(0.0, 0.0), fleet=None, costs=None, name="t", seed=0):
    """customers: (x, y, demand) triples; hubs: (x, y) pairs."""
    nodes = [Node(0, NodeKind.DEPOT, *depot)]
    for x, y, g in customers:
        nodes.append(Node(len(nodes), NodeKind.CUSTOMER, x, y, g))
    for x, y in hubs:
        nodes.append(Node(len(nodes), NodeKind.HUB, x, y))
    return Instance(tuple(nodes), fleet or Fleet(), costs or CostModel(), seed, name)


def random_tiny(seed, n=None, trucks=2, drones=1):
    rng = random.Random(seed)
    n = n if n is not None else rng.randint(1, 4)
    spec = GeneratorSpec(n, n_hubs=rng.randint(0, 2), area_side=40.0,
                         fleet=Fleet(num_trucks=trucks, num_drones=drones, drone_endurance=40.0), seed=seed)
    return generate_instance(spec)


@pytest.fixture
def inst12():
    return generate_instance(GeneratorSpec(12, seed=3))


@pytest.fixture
def inst30():
    return generate_instance(GeneratorSpec(30, seed=11))


ACCEPTANCE_LINES = []


def report(criterion, passed, detail):
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
