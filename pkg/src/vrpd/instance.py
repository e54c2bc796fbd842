"""Immutable VRPD problem data, travel times, instance files and the seeded generator."""

from __future__ import annotations

import enum
import json
import math
import random
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, List, Optional, Tuple

TOL = 1e-9


class InstanceError(ValueError):
    """Raised when instance data violates a model invariant."""


class InstanceParseError(InstanceError):
    """Raised when an instance document is malformed."""


class NodeKind(str, enum.Enum):
    DEPOT = "Depot"
    CUSTOMER = "Customer"
    HUB = "DockingHub"


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    x: float
    y: float
    demand: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InstanceError(f"node {self.id}: non-finite coordinates")
        if self.demand < 0:
            raise InstanceError(f"node {self.id}: negative demand")
        if self.kind is not NodeKind.CUSTOMER and self.demand != 0:
            raise InstanceError(f"node {self.id}: only customers carry demand")


@dataclass(frozen=True)
class Fleet:
    num_trucks: int = 2
    num_drones: int = 2
    drone_payload: float = 5.0
    drone_endurance: float = 60.0
    truck_drone_capacity: int = 2
    truck_payload: float = 100.0
    truck_speed: float = 1.0
    drone_speed: float = 2.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise InstanceError(f"fleet.{name} must be strictly positive, got {value}")
        if self.drone_speed < self.truck_speed:
            raise InstanceError("fleet.drone_speed must be >= fleet.truck_speed")


@dataclass(frozen=True)
class CostModel:
    truck_fixed: float = 100.0
    truck_per_time: float = 1.0
    drone_per_time: float = 0.2

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise InstanceError(f"costs.{name} must be non-negative, got {value}")
        if self.drone_per_time > self.truck_per_time:
            warnings.warn("costs.drone_per_time exceeds costs.truck_per_time", stacklevel=3)


@dataclass(frozen=True)
class Instance:
    """A complete-graph VRPD instance.

    Travel-time matrices are computed lazily and cached; they are excluded
    from equality so that two instances compare field-for-field.
    """

    nodes: Tuple[Node, ...]
    fleet: Fleet = field(default_factory=Fleet)
    costs: CostModel = field(default_factory=CostModel)
    seed: int = 0
    name: str = "instance"

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise InstanceError("instance has no nodes")
        for idx, node in enumerate(self.nodes):
            if node.id != idx:
                raise InstanceError(f"node ids must be contiguous from 0; position {idx} has id {node.id}")
        depots = [n.id for n in self.nodes if n.kind is NodeKind.DEPOT]
        if depots != [0]:
            raise InstanceError(f"exactly one depot with id 0 is required, found {depots}")
        for n in self.nodes:
            if n.kind is NodeKind.CUSTOMER and n.demand > self.fleet.truck_payload + TOL:
                raise InstanceError(
                    f"customer {n.id}: demand {n.demand} exceeds truck_payload {self.fleet.truck_payload}"
                )

    # -- node sets -------------------------------------------------------

    @cached_property
    def customers(self) -> Tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.kind is NodeKind.CUSTOMER)

    @cached_property
    def hubs(self) -> Tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.kind is NodeKind.HUB)

    @cached_property
    def demand(self) -> Tuple[float, ...]:
        return tuple(n.demand for n in self.nodes)

    @cached_property
    def eligible(self) -> Tuple[bool, ...]:
        """Per node: True iff it is a customer the drone may carry."""
        cap = self.fleet.drone_payload
        return tuple(n.kind is NodeKind.CUSTOMER and n.demand <= cap + TOL for n in self.nodes)

    @cached_property
    def is_retrieval(self) -> Tuple[bool, ...]:
        """Per node: True for nodes where a truck may pick up a drone."""
        return tuple(n.kind is not NodeKind.CUSTOMER for n in self.nodes)

    @property
    def n_customers(self) -> int:
        return len(self.customers)

    # -- travel times ----------------------------------------------------

    @cached_property
    def truck_times(self) -> List[List[float]]:
        v = self.fleet.truck_speed
        pts = [(n.x, n.y) for n in self.nodes]
        return [[(abs(xi - xj) + abs(yi - yj)) / v for (xj, yj) in pts] for (xi, yi) in pts]

    @cached_property
    def drone_times(self) -> List[List[float]]:
        v = self.fleet.drone_speed
        pts = [(n.x, n.y) for n in self.nodes]
        return [[math.hypot(xi - xj, yi - yj) / v for (xj, yj) in pts] for (xi, yi) in pts]

    def _check_id(self, i: int) -> None:
        if not (isinstance(i, int) and 0 <= i < len(self.nodes)):
            raise InstanceError(f"invalid node id {i!r}")


def truck_travel_time(inst: Instance, i: int, j: int) -> float:
    """Manhattan distance over truck speed."""
    inst._check_id(i)
    inst._check_id(j)
    a, b = inst.nodes[i], inst.nodes[j]
    return (abs(a.x - b.x) + abs(a.y - b.y)) / inst.fleet.truck_speed


def drone_travel_time(inst: Instance, i: int, j: int) -> float:
    """Euclidean distance over drone speed."""
    inst._check_id(i)
    inst._check_id(j)
    a, b = inst.nodes[i], inst.nodes[j]
    return math.hypot(a.x - b.x, a.y - b.y) / inst.fleet.drone_speed


def drone_eligible(inst: Instance, c: int) -> bool:
    inst._check_id(c)
    if inst.nodes[c].kind is not NodeKind.CUSTOMER:
        raise InstanceError(f"node {c} is not a customer")
    return inst.eligible[c]


# -- generator -------------------------------------------------------------


@dataclass
class GeneratorSpec:
    """Random instance recipe.

    `fleet=None` sizes the fleet from the sampled demand: enough trucks to
    carry it at 80% load (at least two) and one drone per truck.
    """

    n_customers: int
    n_hubs: Optional[int] = None
    area_side: float = 100.0
    fleet: Optional[Fleet] = None
    costs: CostModel = field(default_factory=CostModel)
    seed: int = 0
    demand_range: Tuple[int, int] = (1, 10)
    name: Optional[str] = None


def sized_fleet(total_demand: float, base: Fleet = Fleet()) -> Fleet:
    trucks = max(2, math.ceil(total_demand / (0.8 * base.truck_payload)))
    return replace(base, num_trucks=trucks, num_drones=trucks)


def default_hub_count(n_customers: int) -> int:
    return max(1, n_customers // 10)


def sample_demands(rng: random.Random, n: int, demand_range: Tuple[int, int]) -> List[float]:
    lo, hi = demand_range
    return [float(rng.randint(lo, hi)) for _ in range(n)]


def generate_instance(spec: GeneratorSpec) -> Instance:
    """Depot at the area centre; customers and hubs uniform over the square."""
    if spec.n_customers < 1:
        raise InstanceError("n_customers must be >= 1")
    if not spec.area_side > 0:
        raise InstanceError("area_side must be > 0")
    n_hubs = default_hub_count(spec.n_customers) if spec.n_hubs is None else spec.n_hubs
    if n_hubs < 0:
        raise InstanceError("n_hubs must be >= 0")
    rng = random.Random(spec.seed)
    side = float(spec.area_side)
    nodes = [Node(0, NodeKind.DEPOT, side / 2, side / 2)]
    coords = [(rng.uniform(0, side), rng.uniform(0, side)) for _ in range(spec.n_customers)]
    demands = sample_demands(rng, spec.n_customers, spec.demand_range)
    fleet = spec.fleet or sized_fleet(sum(demands))
    for (x, y), g in zip(coords, demands):
        nodes.append(Node(len(nodes), NodeKind.CUSTOMER, x, y, min(g, fleet.truck_payload)))
    for _ in range(n_hubs):
        nodes.append(Node(len(nodes), NodeKind.HUB, rng.uniform(0, side), rng.uniform(0, side)))
    name = spec.name or f"rand-c{spec.n_customers}-h{n_hubs}-s{spec.seed}"
    return Instance(tuple(nodes), fleet, spec.costs, spec.seed, name)


# -- file format -----------------------------------------------------------

_FLEET_FIELDS = tuple(Fleet.__dataclass_fields__)
_COST_FIELDS = tuple(CostModel.__dataclass_fields__)
_NODE_FIELDS = ("id", "kind", "x", "y", "demand")
_INT_FIELDS = {"num_trucks", "num_drones", "truck_drone_capacity"}


def instance_to_dict(inst: Instance) -> dict:
    return {
        "meta": {"name": inst.name, "seed": inst.seed},
        "fleet": asdict(inst.fleet),
        "costs": asdict(inst.costs),
        "nodes": [
            {"id": n.id, "kind": n.kind.value, "x": n.x, "y": n.y, "demand": n.demand}
            for n in inst.nodes
        ],
    }


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=2) + "\n"


def _block(doc: dict, key: str, kind: type) -> Any:
    if key not in doc:
        raise InstanceParseError(f"missing '{key}' block")
    value = doc[key]
    if not isinstance(value, kind):
        raise InstanceParseError(f"'{key}' must be a {kind.__name__}")
    return value


def _fields(block: dict, where: str, names: Tuple[str, ...]) -> dict:
    unknown = sorted(set(block) - set(names))
    if unknown:
        raise InstanceParseError(f"{where}: unknown field(s) {unknown}")
    missing = [n for n in names if n not in block]
    if missing:
        raise InstanceParseError(f"{where}: missing field(s) {missing}")
    out = {}
    for n in names:
        v = block[n]
        if n == "kind" or n == "name":
            if not isinstance(v, str):
                raise InstanceParseError(f"{where}.{n}: expected a string")
        elif n in _INT_FIELDS or n in ("id", "seed"):
            if isinstance(v, bool) or not isinstance(v, int):
                raise InstanceParseError(f"{where}.{n}: expected an integer")
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InstanceParseError(f"{where}.{n}: expected a number")
        out[n] = float(v) if isinstance(v, int) and n not in _INT_FIELDS and n not in ("id", "seed") else v
    return out


def instance_from_dict(doc: Any) -> Instance:
    if not isinstance(doc, dict):
        raise InstanceParseError("instance document must be a mapping")
    unknown = sorted(set(doc) - {"meta", "fleet", "costs", "nodes"})
    if unknown:
        raise InstanceParseError(f"unknown top-level field(s) {unknown}")
    meta = _fields(_block(doc, "meta", dict), "meta", ("name", "seed"))
    fleet_kw = _fields(_block(doc, "fleet", dict), "fleet", _FLEET_FIELDS)
    cost_kw = _fields(_block(doc, "costs", dict), "costs", _COST_FIELDS)
    nodes = []
    for i, raw in enumerate(_block(doc, "nodes", list)):
        if not isinstance(raw, dict):
            raise InstanceParseError(f"nodes[{i}] must be a mapping")
        kw = _fields(raw, f"nodes[{i}]", _NODE_FIELDS)
        try:
            kw["kind"] = NodeKind(kw["kind"])
        except ValueError:
            raise InstanceParseError(f"nodes[{i}].kind: unknown kind {kw['kind']!r}") from None
        nodes.append(Node(**kw))
    return Instance(tuple(nodes), Fleet(**fleet_kw), CostModel(**cost_kw), meta["seed"], meta["name"])


def loads_instance(text: str) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceParseError(f"not a valid instance document: {exc}") from exc
    return instance_from_dict(doc)


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(dumps_instance(inst))


def load_instance(path) -> Instance:
    return loads_instance(Path(path).read_text())
