"""Candidate solutions: truck routes plus drone sorties, feasibility and evaluation."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

from .instance import TOL, Instance, NodeKind

INF = math.inf


@dataclass(slots=True)
class Sortie:
    truck: int
    launch_pos: int
    customers: List[int]
    retrieval_pos: int


@dataclass(slots=True)
class TruckRoute:
    truck: int
    stops: List[int]


@dataclass(slots=True)
class Solution:
    routes: List[TruckRoute] = field(default_factory=list)
    sorties: List[Sortie] = field(default_factory=list)
    instance_name: str = ""
    instance_seed: int = 0

    def route_of(self, truck: int) -> Optional[TruckRoute]:
        for r in self.routes:
            if r.truck == truck:
                return r
        return None

    def served(self, inst: Instance) -> List[int]:
        """All served customers, route stops first then sortie customers."""
        is_retr = inst.is_retrieval
        out = []
        for r in self.routes:
            out.extend(c for c in r.stops[1:-1] if not is_retr[c])
        for s in self.sorties:
            out.extend(s.customers)
        return out


class Violation(NamedTuple):
    name: str
    detail: str


@dataclass(frozen=True)
class EvalConfig:
    """Objective variants.

    fixed_cost: "truck" charges the fixed cost once per employed truck,
    "arc" charges it per traversed truck arc.
    time_mode: "makespan" or "sum" of per-truck completion times.
    """

    fixed_cost: str = "truck"
    time_mode: str = "makespan"


DEFAULT_CONFIG = EvalConfig()


@dataclass
class TruckTimeline:
    truck: int
    stops: List[int]
    arrival: List[float]
    departure: List[float]

    @property
    def completion(self) -> float:
        return self.departure[-1]


@dataclass
class SortieTiming:
    sortie_index: int
    launch_time: float
    landing_time: float
    truck_arrival: float
    drone_wait: float
    truck_wait: float
    airborne: float


@dataclass
class Timeline:
    trucks: List[TruckTimeline]
    sorties: List[SortieTiming]
    violations: List[Violation]


@dataclass
class EvalResult:
    feasible: bool
    violations: List[Violation]
    total_cost: float
    operational_time: float
    per_truck_completion: List[float]
    wait_times: List[Tuple[float, float]]
    truck_count: int
    truck_time: float = 0.0
    drone_time: float = 0.0


class InfeasibleSolutionError(ValueError):
    pass


def clone_solution(sol: Solution) -> Solution:
    return Solution(
        [TruckRoute(r.truck, r.stops[:]) for r in sol.routes],
        [Sortie(s.truck, s.launch_pos, s.customers[:], s.retrieval_pos) for s in sol.sorties],
        sol.instance_name,
        sol.instance_seed,
    )


def canonical_key(sol: Solution) -> tuple:
    routes = tuple(sorted((r.truck, tuple(r.stops)) for r in sol.routes))
    sorties = tuple(sorted((s.truck, s.launch_pos, s.retrieval_pos, tuple(s.customers)) for s in sol.sorties))
    return routes, sorties


def canonical_hash(sol: Solution) -> str:
    """128-bit digest invariant to route and sortie list order."""
    return hashlib.blake2b(repr(canonical_key(sol)).encode(), digest_size=16).hexdigest()


def drones_needed(n_stops: int, intervals) -> int:
    """Max number of simultaneously airborne drones over half-open position intervals."""
    if not intervals:
        return 0
    delta = [0] * (n_stops + 1)
    for lo, hi in intervals:
        delta[lo] += 1
        delta[hi] -= 1
    best = cur = 0
    for d in delta:
        cur += d
        if cur > best:
            best = cur
    return best


def _structure(inst: Instance, sol: Solution, viol: List[Violation]) -> Dict[int, list]:
    """Structural checks. Returns sorties grouped by truck as (index, sortie, flight)."""
    nodes = inst.nodes
    n_nodes = len(nodes)
    demand = inst.demand
    eligible = inst.eligible
    is_retr = inst.is_retrieval
    dt = inst.drone_times
    fleet = inst.fleet
    seen = [0] * n_nodes
    load: Dict[int, float] = {}
    route_len: Dict[int, int] = {}

    if len(sol.routes) > fleet.num_trucks:
        viol.append(Violation("TooManyTrucks", f"{len(sol.routes)} routes > {fleet.num_trucks}"))
    for r in sol.routes:
        k = r.truck
        if not (0 <= k < fleet.num_trucks):
            viol.append(Violation("InvalidTruck", f"truck {k}"))
        if k in route_len:
            viol.append(Violation("DuplicateTruck", f"truck {k}"))
        stops = r.stops
        route_len[k] = len(stops)
        if len(stops) < 2 or stops[0] != 0 or stops[-1] != 0:
            viol.append(Violation("RouteNotClosed", f"truck {k} must start and end at depot"))
        w = 0.0
        hubs_seen = set()
        for node in stops[1:-1]:
            if not (isinstance(node, int) and 0 < node < n_nodes):
                viol.append(Violation("InvalidStop", f"truck {k} stop {node}"))
                continue
            if is_retr[node]:
                if node in hubs_seen:
                    viol.append(Violation("RepeatedHub", f"truck {k} hub {node}"))
                hubs_seen.add(node)
            else:
                seen[node] += 1
                w += demand[node]
        load[k] = w

    by_truck: Dict[int, list] = {}
    cap = fleet.drone_payload
    endurance = fleet.drone_endurance
    for idx, s in enumerate(sol.sorties):
        k = s.truck
        n = route_len.get(k)
        if n is None:
            viol.append(Violation("SortieWithoutTruck", f"sortie {idx} truck {k}"))
            continue
        if not s.customers:
            viol.append(Violation("EmptySortie", f"sortie {idx}"))
        if not (0 <= s.launch_pos < s.retrieval_pos <= n - 1):
            viol.append(Violation("BadSortiePositions", f"sortie {idx} launch {s.launch_pos} retrieval {s.retrieval_pos}"))
            continue
        stops = sol.route_of(k).stops
        lnode = stops[s.launch_pos]
        rnode = stops[s.retrieval_pos]
        if not (isinstance(rnode, int) and 0 <= rnode < n_nodes and is_retr[rnode]):
            viol.append(Violation("BadRetrievalNode", f"sortie {idx} retrieval node {rnode}"))
            continue
        if not (isinstance(lnode, int) and 0 <= lnode < n_nodes):
            continue
        payload = 0.0
        flight = 0.0
        prev = lnode
        ok = True
        for c in s.customers:
            if not (isinstance(c, int) and 0 < c < n_nodes) or nodes[c].kind is not NodeKind.CUSTOMER:
                viol.append(Violation("InvalidSortieCustomer", f"sortie {idx} node {c}"))
                ok = False
                continue
            seen[c] += 1
            if not eligible[c]:
                viol.append(Violation("CustomerNotDroneEligible", f"sortie {idx} customer {c}"))
            payload += demand[c]
            flight += dt[prev][c]
            prev = c
        if not ok:
            continue
        flight += dt[prev][rnode]
        if payload > cap + TOL:
            viol.append(Violation("DronePayloadExceeded", f"sortie {idx} payload {payload} > {cap}"))
        if flight > endurance + TOL:
            viol.append(Violation("DroneEnduranceExceeded", f"sortie {idx} flight {flight:.6g} > {endurance}"))
        load[k] = load.get(k, 0.0) + payload
        by_truck.setdefault(k, []).append((idx, s, flight))

    for c in inst.customers:
        if seen[c] == 0:
            viol.append(Violation("CustomerUnserved", f"customer {c}"))
        elif seen[c] > 1:
            viol.append(Violation("CustomerMultiplyServed", f"customer {c} served {seen[c]} times"))
    for k, w in load.items():
        if w > fleet.truck_payload + TOL:
            viol.append(Violation("TruckPayloadExceeded", f"truck {k} load {w} > {fleet.truck_payload}"))
    total = 0
    for k, items in by_truck.items():
        need = drones_needed(route_len[k], [(s.launch_pos, s.retrieval_pos) for _, s, _ in items])
        if need > fleet.truck_drone_capacity:
            viol.append(Violation("TruckDroneCapacityExceeded", f"truck {k} needs {need} drones"))
        total += need
    if total > fleet.num_drones:
        viol.append(Violation("DroneCountExceeded", f"{total} drones needed > {fleet.num_drones}"))
    return by_truck


def _route_times(tt, stops, items, endurance, viol, detail=None):
    """Simulate one truck. Returns (completion, truck_travel_time)."""
    n = len(stops)
    landing_at: Dict[int, list] = {}
    for entry in items:
        landing_at.setdefault(entry[1].retrieval_pos, []).append(entry)
    dep = [0.0] * n
    arr = [0.0] * n
    t = 0.0
    travel = 0.0
    prev = stops[0]
    for p in range(1, n):
        node = stops[p]
        leg = tt[prev][node]
        travel += leg
        t += leg
        arr[p] = t
        landed = landing_at.get(p)
        if landed:
            for idx, s, flight in landed:
                launch = dep[s.launch_pos]
                land = launch + flight
                airborne = (land if land > t else t) - launch
                if airborne > endurance + TOL:
                    viol.append(Violation("DroneEnduranceExceeded", f"sortie {idx} airborne {airborne:.6g} incl. wait"))
                if detail is not None:
                    detail.append(SortieTiming(idx, launch, land, arr[p], max(0.0, arr[p] - land), max(0.0, land - arr[p]), airborne))
            for idx, s, flight in landed:
                land = dep[s.launch_pos] + flight
                if land > t:
                    t = land
        dep[p] = t
        prev = node
    return t, travel, arr, dep


def _inspect(inst: Instance, sol: Solution, detail: bool = False):
    viol: List[Violation] = []
    by_truck = _structure(inst, sol, viol)
    if viol:
        return viol, None, by_truck
    tt = inst.truck_times
    endurance = inst.fleet.drone_endurance
    trucks = []
    timings: List[SortieTiming] = [] if detail else None
    for r in sorted(sol.routes, key=lambda r: r.truck):
        done, travel, arr, dep = _route_times(tt, r.stops, by_truck.get(r.truck, ()), endurance, viol, timings)
        trucks.append((r, done, travel, arr, dep))
    return viol, trucks, by_truck


def check_feasibility(inst: Instance, sol: Solution) -> List[Violation]:
    viol, _, _ = _inspect(inst, sol)
    return viol


def simulate_timeline(inst: Instance, sol: Solution) -> Timeline:
    """Per-truck arrival/departure times with drone synchronization at retrieval stops."""
    viol: List[Violation] = []
    by_truck = _structure(inst, sol, viol)
    if viol:
        raise InfeasibleSolutionError("; ".join(f"{v.name}: {v.detail}" for v in viol))
    tt = inst.truck_times
    endurance = inst.fleet.drone_endurance
    trucks = []
    timings: List[SortieTiming] = []
    for r in sorted(sol.routes, key=lambda r: r.truck):
        _, _, arr, dep = _route_times(tt, r.stops, by_truck.get(r.truck, ()), endurance, viol, timings)
        trucks.append(TruckTimeline(r.truck, r.stops[:], arr, dep))
    timings.sort(key=lambda s: s.sortie_index)
    return Timeline(trucks, timings, viol)


def evaluate(inst: Instance, sol: Solution, config: EvalConfig = DEFAULT_CONFIG) -> EvalResult:
    viol: List[Violation] = []
    by_truck = _structure(inst, sol, viol)
    if viol:
        return EvalResult(False, viol, INF, INF, [], [], len(sol.routes))
    tt = inst.truck_times
    endurance = inst.fleet.drone_endurance
    completions = []
    truck_time = 0.0
    drone_time = 0.0
    arcs = 0
    waits: List[SortieTiming] = []
    for r in sorted(sol.routes, key=lambda r: r.truck):
        items = by_truck.get(r.truck, ())
        done, travel, _, _ = _route_times(tt, r.stops, items, endurance, viol, waits)
        completions.append(done)
        truck_time += travel
        arcs += len(r.stops) - 1
        for _, _, flight in items:
            drone_time += flight
    if viol:
        return EvalResult(False, viol, INF, INF, completions, [], len(sol.routes))
    costs = inst.costs
    n_trucks = len(sol.routes)
    fixed = costs.truck_fixed * (arcs if config.fixed_cost == "arc" else n_trucks)
    total_cost = fixed + costs.truck_per_time * truck_time + costs.drone_per_time * drone_time
    if config.time_mode == "sum":
        op_time = sum(completions)
    else:
        op_time = max(completions) if completions else 0.0
    waits.sort(key=lambda s: s.sortie_index)
    return EvalResult(
        True, [], total_cost, op_time, completions,
        [(w.truck_wait, w.drone_wait) for w in waits], n_trucks, truck_time, drone_time,
    )


class SearchScorer:
    """Memoised scorer for search loops. Agrees with evaluate() on feasibility
    and on the score up to float summation order (+inf when infeasible).

    Each route (stops plus its sorties) is checked and simulated once and
    cached; only the fleet-wide checks run on every call.
    """

    def __init__(self, inst: Instance, objective: str = "time", config: EvalConfig = DEFAULT_CONFIG,
                 max_entries: int = 200_000):
        if objective not in ("time", "cost"):
            raise ValueError(f"objective must be 'time' or 'cost', got {objective!r}")
        self.inst = inst
        self.objective = objective
        self.config = config
        self.max_entries = max_entries
        self._memo: Dict[tuple, Optional[tuple]] = {}
        self._n_customers = len(inst.customers)
        self.calls = 0
        self.hits = 0

    def _route(self, stops: tuple, sorties: tuple) -> Optional[tuple]:
        """(completion, travel, flight, arcs, drones, served) or None if the route is infeasible."""
        inst = self.inst
        fleet = inst.fleet
        n_nodes = len(inst.nodes)
        is_retr = inst.is_retrieval
        demand = inst.demand
        eligible = inst.eligible
        dt = inst.drone_times
        n = len(stops)
        if n < 2 or stops[0] != 0 or stops[-1] != 0:
            return None
        served = []
        hubs = set()
        load = 0.0
        for node in stops[1:-1]:
            if not (isinstance(node, int) and 0 < node < n_nodes):
                return None
            if is_retr[node]:
                if node in hubs:
                    return None
                hubs.add(node)
            else:
                served.append(node)
                load += demand[node]
        items = []
        flight_total = 0.0
        for idx, (lp, rp, custs) in enumerate(sorties):
            if not custs or not (0 <= lp < rp <= n - 1):
                return None
            rnode = stops[rp]
            if not is_retr[rnode]:
                return None
            prev = stops[lp]
            payload = 0.0
            flight = 0.0
            for c in custs:
                if not (isinstance(c, int) and 0 < c < n_nodes) or is_retr[c] or not eligible[c]:
                    return None
                payload += demand[c]
                flight += dt[prev][c]
                prev = c
                served.append(c)
            flight += dt[prev][rnode]
            if payload > fleet.drone_payload + TOL or flight > fleet.drone_endurance + TOL:
                return None
            load += payload
            flight_total += flight
            items.append((idx, Sortie(-1, lp, list(custs), rp), flight))
        if load > fleet.truck_payload + TOL:
            return None
        drones = drones_needed(n, [(lp, rp) for lp, rp, _ in sorties])
        if drones > fleet.truck_drone_capacity:
            return None
        viol: List[Violation] = []
        done, travel, _, _ = _route_times(inst.truck_times, stops, items, fleet.drone_endurance, viol)
        if viol:
            return None
        return done, travel, flight_total, n - 1, drones, tuple(served)

    def __call__(self, sol: Solution) -> float:
        self.calls += 1
        inst = self.inst
        fleet = inst.fleet
        if len(sol.routes) > fleet.num_trucks:
            return INF
        grouped: Dict[int, list] = {}
        for s in sol.sorties:
            grouped.setdefault(s.truck, []).append((s.launch_pos, s.retrieval_pos, tuple(s.customers)))
        memo = self._memo
        trucks = set()
        completions = []
        travel = flight = 0.0
        arcs = drones = 0
        count = 0
        seen = set()
        for r in sol.routes:
            k = r.truck
            if k in trucks or not (0 <= k < fleet.num_trucks):
                return INF
            trucks.add(k)
            srt = grouped.pop(k, ())
            if srt:
                srt.sort()
                srt = tuple(srt)
            key = (tuple(r.stops), srt)
            if key in memo:
                self.hits += 1
                res = memo[key]
            else:
                if len(memo) >= self.max_entries:
                    memo.clear()
                res = memo[key] = self._route(*key)
            if res is None:
                return INF
            completions.append(res[0])
            travel += res[1]
            flight += res[2]
            arcs += res[3]
            drones += res[4]
            count += len(res[5])
            seen.update(res[5])
        if grouped or drones > fleet.num_drones:
            return INF
        if count != self._n_customers or len(seen) != self._n_customers:
            return INF
        if self.objective == "cost":
            costs = inst.costs
            fixed = costs.truck_fixed * (arcs if self.config.fixed_cost == "arc" else len(sol.routes))
            return fixed + costs.truck_per_time * travel + costs.drone_per_time * flight
        if self.config.time_mode == "sum":
            return sum(completions)
        return max(completions) if completions else 0.0


def operational_time(inst: Instance, sol: Solution) -> float:
    """Makespan only; cheaper than evaluate() when nothing else is needed."""
    viol: List[Violation] = []
    by_truck = _structure(inst, sol, viol)
    if viol:
        return INF
    tt = inst.truck_times
    endurance = inst.fleet.drone_endurance
    best = 0.0
    for r in sol.routes:
        done = _route_times(tt, r.stops, by_truck.get(r.truck, ()), endurance, viol)[0]
        if done > best:
            best = done
    return INF if viol else best


def route_completion(inst: Instance, sol: Solution, route: TruckRoute) -> float:
    """Completion time of one route with its sorties (no feasibility checks)."""
    dt = inst.drone_times
    items = []
    for idx, s in enumerate(sol.sorties):
        if s.truck == route.truck:
            path = [route.stops[s.launch_pos], *s.customers, route.stops[s.retrieval_pos]]
            items.append((idx, s, sum(dt[a][b] for a, b in zip(path, path[1:]))))
    return _route_times(inst.truck_times, route.stops, items, INF, [])[0]


def route_completions(inst: Instance, sol: Solution) -> List[float]:
    """Per-route completion times in `sol.routes` order, without coverage checks.

    Works on partial solutions (e.g. mid ruin-and-recreate) as long as the
    sortie anchors are valid.
    """
    tt = inst.truck_times
    dt = inst.drone_times
    groups: Dict[int, list] = {}
    for idx, s in enumerate(sol.sorties):
        groups.setdefault(s.truck, []).append((idx, s))
    out = []
    sink: List[Violation] = []
    for r in sol.routes:
        items = []
        for idx, s in groups.get(r.truck, ()):
            path = [r.stops[s.launch_pos], *s.customers, r.stops[s.retrieval_pos]]
            items.append((idx, s, sum(dt[a][b] for a, b in zip(path, path[1:]))))
        out.append(_route_times(tt, r.stops, items, INF, sink)[0])
    return out


# -- arc usage view ----------------------------------------------------------


@dataclass
class ArcUsage:
    """Derived decision-variable view: truck arcs (alone / carrying drones) and drone arcs."""

    truck_alone: Dict[int, List[Tuple[int, int]]]
    truck_carrying: Dict[int, List[Tuple[int, int]]]
    drone_arcs: Dict[int, List[Tuple[int, int]]]
    onboard: Dict[int, List[int]]
    launches: Dict[int, List[int]]
    landings: Dict[int, List[int]]

    def hub_balance(self, inst: Instance) -> Dict[Tuple[int, int], Tuple[int, int]]:
        """(truck, position) at non-customer stops -> (drones in, drones out)."""
        out = {}
        for k, onboard in self.onboard.items():
            n = len(onboard) + 1
            for p in range(1, n - 1):
                arriving = onboard[p - 1] + self.landings[k][p]
                departing = onboard[p] + self.launches[k][p]
                out[(k, p)] = (arriving, departing)
        return out


def arc_usage(inst: Instance, sol: Solution) -> ArcUsage:
    alone: Dict[int, list] = {}
    carrying: Dict[int, list] = {}
    drone_arcs: Dict[int, list] = {}
    onboard_all: Dict[int, list] = {}
    launches_all: Dict[int, list] = {}
    landings_all: Dict[int, list] = {}
    next_drone = 0
    for r in sorted(sol.routes, key=lambda r: r.truck):
        k = r.truck
        n = len(r.stops)
        mine = sorted((s for s in sol.sorties if s.truck == k), key=lambda s: (s.launch_pos, s.retrieval_pos))
        fleet = drones_needed(n, [(s.launch_pos, s.retrieval_pos) for s in mine])
        launches = [0] * n
        landings = [0] * n
        free_at = [0] * fleet
        ids = list(range(next_drone, next_drone + fleet))
        next_drone += fleet
        for s in mine:
            launches[s.launch_pos] += 1
            landings[s.retrieval_pos] += 1
            slot = next(i for i in range(fleet) if free_at[i] <= s.launch_pos)
            free_at[slot] = s.retrieval_pos
            path = [r.stops[s.launch_pos], *s.customers, r.stops[s.retrieval_pos]]
            drone_arcs.setdefault(ids[slot], []).extend(zip(path, path[1:]))
        onboard = []
        cur = fleet
        for p in range(n - 1):
            cur += landings[p] - launches[p]
            onboard.append(cur)
        alone[k] = [(r.stops[p], r.stops[p + 1]) for p in range(n - 1) if onboard[p] == 0]
        carrying[k] = [(r.stops[p], r.stops[p + 1]) for p in range(n - 1) if onboard[p] > 0]
        onboard_all[k] = onboard
        launches_all[k] = launches
        landings_all[k] = landings
    return ArcUsage(alone, carrying, drone_arcs, onboard_all, launches_all, landings_all)


# -- export ------------------------------------------------------------------


def solution_to_dict(inst: Instance, sol: Solution, result: Optional[EvalResult] = None) -> dict:
    result = result or evaluate(inst, sol)
    routes = sorted(sol.routes, key=lambda r: r.truck)
    sorties = sorted(sol.sorties, key=lambda s: (s.truck, s.launch_pos, s.retrieval_pos, s.customers))
    return {
        "instance": {"name": inst.name, "seed": inst.seed},
        "routes": [r.stops for r in routes],
        "trucks": [r.truck for r in routes],
        "sorties": [
            {"truck": s.truck, "launch_pos": s.launch_pos, "customers": s.customers, "retrieval_pos": s.retrieval_pos}
            for s in sorties
        ],
        "eval": {
            "feasible": result.feasible,
            "total_cost": result.total_cost if result.feasible else None,
            "operational_time": result.operational_time if result.feasible else None,
        },
    }


def solution_from_dict(doc: dict) -> Solution:
    trucks = doc.get("trucks") or list(range(len(doc["routes"])))
    return Solution(
        [TruckRoute(int(k), [int(v) for v in stops]) for k, stops in zip(trucks, doc["routes"])],
        [Sortie(int(s["truck"]), int(s["launch_pos"]), [int(c) for c in s["customers"]], int(s["retrieval_pos"])) for s in doc["sorties"]],
        doc["instance"]["name"],
        doc["instance"]["seed"],
    )


def save_solution(inst: Instance, sol: Solution, path, result: Optional[EvalResult] = None) -> None:
    Path(path).write_text(json.dumps(solution_to_dict(inst, sol, result), indent=2) + "\n")


def load_solution(path) -> Solution:
    return solution_from_dict(json.loads(Path(path).read_text()))
