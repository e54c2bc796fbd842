"""Route-editing primitives, the capacity-balanced splitter and the greedy initializer.

Every primitive here keeps a solution structurally valid: sortie positions
are shifted with stop insertions/removals, sorties that lose their anchors
are re-anchored or dissolved, and idle hub stops are pruned.
"""

from __future__ import annotations

import math
import random
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .instance import TOL, Instance, InstanceError
from .solution import (
    EvalConfig,
    DEFAULT_CONFIG,
    INF,
    Solution,
    Sortie,
    TruckRoute,
    clone_solution,
    drones_needed,
    evaluate,
)


class InfeasibleInstanceError(InstanceError):
    """The fleet cannot carry the total demand."""


# -- small helpers -----------------------------------------------------------


def prefix_times(tt, stops: Sequence[int]) -> List[float]:
    out = [0.0]
    acc = 0.0
    for a, b in zip(stops, stops[1:]):
        acc += tt[a][b]
        out.append(acc)
    return out


def route_time(tt, stops: Sequence[int]) -> float:
    return sum(tt[a][b] for a, b in zip(stops, stops[1:]))


def sorties_of(sol: Solution, truck: int) -> List[Sortie]:
    return [s for s in sol.sorties if s.truck == truck]


def insert_stop(sol: Solution, route: TruckRoute, pos: int, node: int) -> None:
    route.stops.insert(pos, node)
    for s in sol.sorties:
        if s.truck == route.truck:
            if s.launch_pos >= pos:
                s.launch_pos += 1
            if s.retrieval_pos >= pos:
                s.retrieval_pos += 1


def remove_stop(sol: Solution, route: TruckRoute, pos: int) -> int:
    """Remove an unanchored stop and shift sortie positions."""
    node = route.stops.pop(pos)
    for s in sol.sorties:
        if s.truck == route.truck:
            if s.launch_pos > pos:
                s.launch_pos -= 1
            if s.retrieval_pos > pos:
                s.retrieval_pos -= 1
    return node


def anchored_positions(sol: Solution, truck: int) -> set:
    out = set()
    for s in sol.sorties:
        if s.truck == truck:
            out.add(s.launch_pos)
            out.add(s.retrieval_pos)
    return out


def cheapest_insertion(tt, stops: Sequence[int], node: int) -> Tuple[float, int]:
    """(detour, position) of the cheapest slot for `node`; lowest position on ties."""
    best = math.inf
    best_pos = 1
    for pos in range(1, len(stops)):
        a, b = stops[pos - 1], stops[pos]
        d = tt[a][node] + tt[node][b] - tt[a][b]
        if d < best - 1e-12:
            best, best_pos = d, pos
    return best, best_pos


def insert_cheapest(inst: Instance, sol: Solution, route: TruckRoute, node: int) -> None:
    _, pos = cheapest_insertion(inst.truck_times, route.stops, node)
    insert_stop(sol, route, pos, node)


def prune_idle_hubs(inst: Instance, sol: Solution, route: TruckRoute) -> None:
    is_retr = inst.is_retrieval
    used = anchored_positions(sol, route.truck)
    for pos in range(len(route.stops) - 2, 0, -1):
        if is_retr[route.stops[pos]] and pos not in used:
            remove_stop(sol, route, pos)


def drop_empty_routes(sol: Solution) -> None:
    busy = {s.truck for s in sol.sorties}
    sol.routes = [r for r in sol.routes if len(r.stops) > 2 or r.truck in busy]
    sol.routes.sort(key=lambda r: r.truck)


def dissolve_sortie(inst: Instance, sol: Solution, index: int) -> None:
    """Delete a sortie and serve its customers as cheapest-inserted truck stops."""
    s = sol.sorties.pop(index)
    route = sol.route_of(s.truck)
    for c in s.customers:
        insert_cheapest(inst, sol, route, c)
    prune_idle_hubs(inst, sol, route)


def free_truck(sol: Solution, num_trucks: int) -> Optional[int]:
    used = {r.truck for r in sol.routes}
    for k in range(num_trucks):
        if k not in used:
            return k
    return None


def route_loads(inst: Instance, sol: Solution) -> List[float]:
    """Departure load per route (`sol.routes` order), truck and drone parcels."""
    demand = inst.demand
    by_truck: Dict[int, float] = {}
    for s in sol.sorties:
        by_truck[s.truck] = by_truck.get(s.truck, 0.0) + sum(demand[c] for c in s.customers)
    return [sum(demand[c] for c in r.stops) + by_truck.get(r.truck, 0.0) for r in sol.routes]


_SORTIE_FAULTS = {"DroneEnduranceExceeded", "DronePayloadExceeded", "CustomerNotDroneEligible"}


def repair(inst: Instance, sol: Solution, config: EvalConfig = DEFAULT_CONFIG) -> Solution:
    """Dissolve sorties flagged by the evaluator until no sortie-level fault remains."""
    for _ in range(len(sol.sorties) + 1):
        res = evaluate(inst, sol, config)
        bad = sorted({int(v.detail.split()[1]) for v in res.violations if v.name in _SORTIE_FAULTS
                      and v.detail.startswith("sortie ")}, reverse=True)
        if not bad:
            break
        for idx in bad:
            dissolve_sortie(inst, sol, idx)
    return sol


# -- drone availability ------------------------------------------------------


def drone_usage(sol: Solution) -> Dict[int, int]:
    lengths = {r.truck: len(r.stops) for r in sol.routes}
    groups: Dict[int, list] = {}
    for s in sol.sorties:
        groups.setdefault(s.truck, []).append((s.launch_pos, s.retrieval_pos))
    return {k: drones_needed(lengths[k], iv) for k, iv in groups.items() if k in lengths}


def gap_coverage(n_stops: int, intervals) -> List[int]:
    """Airborne drones over each gap (p, p+1)."""
    delta = [0] * (n_stops + 1)
    for lo, hi in intervals:
        delta[lo] += 1
        delta[hi] -= 1
    cov = []
    cur = 0
    for p in range(n_stops - 1):
        cur += delta[p]
        cov.append(cur)
    return cov


OCCUPANCY_WEIGHT = 0.05


class RetrievalOption:
    __slots__ = ("score", "pos", "hub", "flight", "detour")

    def __init__(self, score, pos, hub, flight, detour=0.0):
        self.score = score
        self.pos = pos
        self.hub = hub
        self.flight = flight
        self.detour = detour


def best_retrieval(
    inst: Instance,
    stops: Sequence[int],
    prefix: Sequence[float],
    launch: int,
    customer: int,
    cov: Sequence[int],
    max_cov: int,
    allow_hub_insert: bool = True,
) -> Optional[RetrievalOption]:
    """Cheapest retrieval point for a single-customer sortie launched at `launch`.

    Score = truck detour for an inserted hub + expected truck wait + a small
    charge per unit of truck time the drone stays away (frees drones early for
    later sorties). Candidates
    must satisfy flight and naive airborne time <= endurance and keep the
    number of simultaneously airborne drones <= max_cov.
    """
    tt = inst.truck_times
    dt = inst.drone_times
    endurance = inst.fleet.drone_endurance + TOL
    is_retr = inst.is_retrieval
    lnode = stops[launch]
    out_leg = dt[lnode][customer]
    if out_leg > endurance:
        return None
    in_route = set(stops)
    hubs = [h for h in inst.hubs if h not in in_route] if allow_hub_insert else []
    base = prefix[launch]
    best: Optional[RetrievalOption] = None
    peak = -1
    n = len(stops)
    for q in range(launch + 1, n):
        peak = max(peak, cov[q - 1])
        if peak + 1 > max_cov:
            break
        a = stops[q - 1]
        b = stops[q]
        before = prefix[q - 1] - base
        if before > endurance:
            break
        for h in hubs:
            flight = out_leg + dt[customer][h]
            if flight > endurance:
                continue
            path = before + tt[a][h]
            if path > endurance:
                continue
            detour = tt[a][h] + tt[h][b] - tt[a][b]
            score = detour + max(0.0, flight - path) + OCCUPANCY_WEIGHT * max(path, flight)
            if best is None or score < best.score - 1e-12:
                best = RetrievalOption(score, q, h, flight, detour)
        if is_retr[b]:
            path = prefix[q] - base
            flight = out_leg + dt[customer][b]
            if flight <= endurance and path <= endurance:
                score = max(0.0, flight - path) + OCCUPANCY_WEIGHT * max(path, flight)
                if best is None or score < best.score - 1e-12:
                    best = RetrievalOption(score, q, None, flight)
    return best


def drone_limit_for(inst: Instance, sol: Solution, truck: int) -> int:
    """Max simultaneous sorties this truck may fly given L^R and the drone pool."""
    usage = drone_usage(sol)
    others = sum(v for k, v in usage.items() if k != truck)
    return min(inst.fleet.truck_drone_capacity, inst.fleet.num_drones - others)


def attach_sortie(sol: Solution, route: TruckRoute, launch: int, customer: int, opt: RetrievalOption) -> Sortie:
    retrieval = opt.pos
    if opt.hub is not None:
        insert_stop(sol, route, opt.pos, opt.hub)
    s = Sortie(route.truck, launch, [customer], retrieval)
    sol.sorties.append(s)
    return s


def convert_to_sortie(inst: Instance, sol: Solution, route: TruckRoute, pos: int, allow_hub_insert: bool = True) -> bool:
    """Turn the truck-served customer at `pos` into a sortie launched from the preceding stop."""
    c = route.stops[pos]
    if not inst.eligible[c]:
        return False
    anchored = anchored_positions(sol, route.truck)
    if pos in anchored:
        return False
    stops = route.stops[:pos] + route.stops[pos + 1:]
    intervals = []
    for s in sol.sorties:
        if s.truck == route.truck:
            lo = s.launch_pos - (s.launch_pos > pos)
            hi = s.retrieval_pos - (s.retrieval_pos > pos)
            intervals.append((lo, hi))
    limit = drone_limit_for(inst, sol, route.truck)
    if limit < 1:
        return False
    cov = gap_coverage(len(stops), intervals)
    launch = pos - 1
    opt = best_retrieval(inst, stops, prefix_times(inst.truck_times, stops), launch, c, cov, limit, allow_hub_insert)
    if opt is None:
        return False
    remove_stop(sol, route, pos)
    attach_sortie(sol, route, launch, c, opt)
    return True


# -- rebinding after route edits --------------------------------------------


def rebind(inst: Instance, sol: Solution, route: TruckRoute, old_stops: Sequence[int]) -> None:
    """Remap this truck's sorties after `route.stops` was rewritten from `old_stops`.

    Anchors follow their node. A sortie whose retrieval no longer lies after
    its launch is re-anchored to the cheapest feasible later retrieval stop;
    if that fails, or its launch node left the route, it is dissolved.
    """
    truck = route.truck
    mine = [i for i, s in enumerate(sol.sorties) if s.truck == truck]
    if mine:
        new = route.stops
        last_old = len(old_stops) - 1
        where = {node: p for p, node in enumerate(new) if 0 < p < len(new) - 1}
        broken = []
        for i in mine:
            s = sol.sorties[i]
            lo = 0 if s.launch_pos == 0 else where.get(old_stops[s.launch_pos])
            hi = len(new) - 1 if s.retrieval_pos == last_old else where.get(old_stops[s.retrieval_pos])
            if lo is None:
                s.retrieval_pos = -1
                broken.append((i, "drop"))
                continue
            s.launch_pos = lo
            if hi is None or hi <= lo:
                s.retrieval_pos = -1
                broken.append((i, "reanchor"))
            else:
                s.retrieval_pos = hi
        dissolve = []
        for i, action in broken:
            s = sol.sorties[i]
            if action == "reanchor" and len(s.customers) == 1:
                if _reanchor(inst, sol, route, s):
                    continue
            dissolve.append(i)
        for i in sorted(dissolve, reverse=True):
            s = sol.sorties.pop(i)
            for c in s.customers:
                insert_cheapest(inst, sol, route, c)
    prune_idle_hubs(inst, sol, route)


def _reanchor(inst: Instance, sol: Solution, route: TruckRoute, s: Sortie) -> bool:
    intervals = [(o.launch_pos, o.retrieval_pos) for o in sol.sorties
                 if o.truck == route.truck and o is not s and o.retrieval_pos >= 0]
    usage_others = 0
    groups: Dict[int, list] = {}
    lengths = {r.truck: len(r.stops) for r in sol.routes}
    for o in sol.sorties:
        if o.truck != route.truck and o.truck in lengths:
            groups.setdefault(o.truck, []).append((o.launch_pos, o.retrieval_pos))
    for k, iv in groups.items():
        usage_others += drones_needed(lengths[k], iv)
    limit = min(inst.fleet.truck_drone_capacity, inst.fleet.num_drones - usage_others)
    if limit < 1:
        return False
    stops = route.stops
    cov = gap_coverage(len(stops), intervals)
    opt = best_retrieval(inst, stops, prefix_times(inst.truck_times, stops), s.launch_pos, s.customers[0], cov, limit, allow_hub_insert=False)
    if opt is None:
        return False
    s.retrieval_pos = opt.pos
    return True


# -- splitter and initializer -----------------------------------------------


def split_sequence(inst: Instance, seq: Sequence[int], n_routes: Optional[int] = None) -> List[List[int]]:
    """Cut `seq` into at most `n_routes` consecutive chunks of balanced size.

    A chunk is closed early when the next customer would overload the truck;
    the remaining customers are re-balanced over the remaining trucks. May
    return more than `n_routes` chunks if capacity forces it.
    """
    n_routes = inst.fleet.num_trucks if n_routes is None else n_routes
    cap = inst.fleet.truck_payload + TOL
    demand = inst.demand
    chunks: List[List[int]] = []
    i = 0
    n = len(seq)
    while i < n:
        left = max(1, n_routes - len(chunks))
        target = math.ceil((n - i) / left)
        chunk: List[int] = []
        load = 0.0
        while i < n and len(chunk) < target and load + demand[seq[i]] <= cap:
            chunk.append(seq[i])
            load += demand[seq[i]]
            i += 1
        if not chunk:
            chunk.append(seq[i])
            i += 1
        chunks.append(chunk)
    return chunks


def _capacity_split(inst: Instance, seq: Sequence[int]) -> List[List[int]]:
    cap = inst.fleet.truck_payload + TOL
    chunks: List[List[int]] = [[]]
    load = 0.0
    for c in seq:
        g = inst.demand[c]
        if load + g > cap and chunks[-1]:
            chunks.append([])
            load = 0.0
        chunks[-1].append(c)
        load += g
    return chunks


def optimal_split(inst: Instance, seq: Sequence[int], n_routes: Optional[int] = None,
                  expand: Optional[Callable[[int], Sequence[int]]] = None) -> Optional[List[List[int]]]:
    """Cut `seq` into at most `n_routes` consecutive truck chunks minimising
    (longest route time, total route time).

    `expand(c)` gives the nodes the truck visits for customer c (default [c]);
    an empty path means c rides a drone and only counts towards the load.
    Returns None if capacity makes a split impossible.
    """
    n_routes = inst.fleet.num_trucks if n_routes is None else n_routes
    n = len(seq)
    if n == 0:
        return []
    tt = inst.truck_times
    demand = inst.demand
    cap = inst.fleet.truck_payload + TOL
    paths = [expand(c) for c in seq] if expand is not None else [(c,) for c in seq]
    inf = (INF, INF)
    # best[j] = (makespan, total) for covering seq[:j] with the routes used so far
    best = [inf] * (n + 1)
    best[0] = (0.0, 0.0)
    back: List[List[int]] = []
    for _ in range(n_routes):
        nxt = list(best)
        arg = [-1] * (n + 1)
        for i in range(n):
            mk, tot = best[i]
            if mk == INF:
                continue
            load = 0.0
            length = 0.0
            prev = 0
            for j in range(i, n):
                load += demand[seq[j]]
                if load > cap:
                    break
                for node in paths[j]:
                    length += tt[prev][node]
                    prev = node
                t = length + tt[prev][0]
                cand = (mk if mk > t else t, tot + t)
                if cand < nxt[j + 1]:
                    nxt[j + 1] = cand
                    arg[j + 1] = i
        back.append(arg)
        best = nxt
    if best[n][0] == INF:
        return None
    chunks: List[List[int]] = []
    j = n
    for arg in reversed(back):
        if j == 0:
            break
        i = arg[j]
        if i < 0:
            continue
        chunks.append(list(seq[i:j]))
        j = i
    chunks.reverse()
    return chunks


def routes_from_sequence(inst: Instance, seq: Sequence[int]) -> List[TruckRoute]:
    chunks = optimal_split(inst, seq)
    if chunks is None:
        chunks = _capacity_split(inst, seq)
    return [TruckRoute(k, [0, *chunk, 0]) for k, chunk in enumerate(chunks) if chunk]


def sweep_order(inst: Instance, offset: float = 0.0) -> List[int]:
    depot = inst.nodes[0]
    tau = 2 * math.pi

    def key(c):
        n = inst.nodes[c]
        angle = math.atan2(n.y - depot.y, n.x - depot.x)
        return ((angle - offset) % tau, c)

    return sorted(inst.customers, key=key)


def greedy_initialize(inst: Instance, seed: int = 0, config: EvalConfig = DEFAULT_CONFIG) -> Solution:
    """Sweep-and-split truck routes, then greedy single-customer sortie conversion."""
    fleet = inst.fleet
    if sum(inst.demand) > fleet.num_trucks * fleet.truck_payload + TOL:
        raise InfeasibleInstanceError("total demand exceeds fleet truck payload")
    rng = random.Random(seed)
    offset = rng.uniform(0.0, 2 * math.pi)
    routes = routes_from_sequence(inst, sweep_order(inst, offset))
    if len(routes) > fleet.num_trucks:
        raise InfeasibleInstanceError("customers cannot be packed into the available trucks")
    sol = Solution(routes, [], inst.name, inst.seed)
    current = evaluate(inst, sol, config).operational_time
    for k in range(len(sol.routes)):
        for c in list(sol.routes[k].stops[1:-1]):
            if not inst.eligible[c]:
                continue
            trial = clone_solution(sol)
            route = trial.routes[k]
            if c not in route.stops:
                continue
            if not convert_to_sortie(inst, trial, route, route.stops.index(c)):
                continue
            t = evaluate(inst, trial, config).operational_time
            if t < current - 1e-9:
                sol, current = trial, t
    return sol
