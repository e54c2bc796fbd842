"""Solution-modification operators: neighborhood moves, genetic operators and shuffling.

All operators work on a clone; their input is never modified. Every
operator returns a structurally valid solution that serves each customer
exactly once. Capacity, endurance and synchronization are left to the
evaluator.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .construct import (
    anchored_positions,
    best_retrieval,
    cheapest_insertion,
    convert_to_sortie,
    dissolve_sortie,
    drone_usage,
    drop_empty_routes,
    free_truck,
    gap_coverage,
    insert_stop,
    prefix_times,
    prune_idle_hubs,
    rebind,
    remove_stop,
    repair,
    route_loads,
    optimal_split,
    routes_from_sequence,
    attach_sortie,
)
from .instance import Instance, NodeKind
from .solution import Solution, Sortie, TruckRoute, clone_solution, route_completion, route_completions


class MoveKind(str, enum.Enum):
    NodeSwap = "NodeSwap"
    EntireSwap = "EntireSwap"
    NodeInsertion = "NodeInsertion"
    WholeInsertion = "WholeInsertion"
    NodeReversal = "NodeReversal"
    EntireReversal = "EntireReversal"
    SortieRemoval = "SortieRemoval"
    SortieAddition = "SortieAddition"
    MaSelection = "MaSelection"
    MaCrossover = "MaCrossover"
    MaMutation = "MaMutation"

    def __str__(self):
        return self.value


NS_MOVES: Tuple[MoveKind, ...] = (
    MoveKind.NodeSwap,
    MoveKind.EntireSwap,
    MoveKind.NodeInsertion,
    MoveKind.WholeInsertion,
    MoveKind.NodeReversal,
    MoveKind.EntireReversal,
    MoveKind.SortieRemoval,
    MoveKind.SortieAddition,
)


class OperatorError(ValueError):
    pass


@dataclass
class Move:
    kind: MoveKind
    params: Optional[tuple] = None


@dataclass
class MoveOutcome:
    solution: Solution
    applied: bool
    move: Move


# -- parameter pickers -------------------------------------------------------


def _customer_positions(inst: Instance, route: TruckRoute) -> List[int]:
    is_retr = inst.is_retrieval
    return [p for p in range(1, len(route.stops) - 1) if not is_retr[route.stops[p]]]


def _edit_route(inst: Instance, sol: Solution, route: TruckRoute, new_stops: List[int]) -> None:
    old = route.stops
    route.stops = new_stops
    rebind(inst, sol, route, old)


def _node_swap(inst, sol, params, rng):
    if params is None:
        cands = [r for r in sol.routes if len(r.stops) >= 4]
        if not cands:
            return None
        r = cands[rng.randrange(len(cands))]
        i, j = sorted(rng.sample(range(1, len(r.stops) - 1), 2))
        params = (r.truck, i, j)
    truck, i, j = params
    r = sol.route_of(truck)
    new = r.stops[:]
    new[i], new[j] = new[j], new[i]
    _edit_route(inst, sol, r, new)
    return params


def _entire_swap(inst, sol, params, rng):
    if params is None:
        cands = [(r, _customer_positions(inst, r)) for r in sol.routes]
        cands = [(r, ps) for r, ps in cands if ps]
        if len(cands) < 2:
            return None
        a, b = rng.sample(range(len(cands)), 2)
        (ra, pa), (rb, pb) = cands[a], cands[b]
        params = (ra.truck, pa[rng.randrange(len(pa))], rb.truck, pb[rng.randrange(len(pb))])
    ta, i, tb, j = params
    ra, rb = sol.route_of(ta), sol.route_of(tb)
    new_a, new_b = ra.stops[:], rb.stops[:]
    new_a[i], new_b[j] = rb.stops[j], ra.stops[i]
    _edit_route(inst, sol, ra, new_a)
    _edit_route(inst, sol, rb, new_b)
    return params


def _node_insertion(inst, sol, params, rng):
    if params is None:
        cands = [r for r in sol.routes if len(r.stops) >= 4]
        if not cands:
            return None
        r = cands[rng.randrange(len(cands))]
        m = len(r.stops) - 2
        i = rng.randrange(1, m + 1)
        j = rng.randrange(1, m)
        if j >= i:
            j += 1
        params = (r.truck, i, j)
    truck, i, j = params
    r = sol.route_of(truck)
    new = r.stops[:]
    node = new.pop(i)
    new.insert(j, node)
    _edit_route(inst, sol, r, new)
    return params


def _whole_insertion(inst, sol, params, rng):
    if params is None:
        sources = [(r, _customer_positions(inst, r)) for r in sol.routes]
        sources = [(r, ps) for r, ps in sources if ps]
        if not sources:
            return None
        ra, pa = sources[rng.randrange(len(sources))]
        targets = [r.truck for r in sol.routes if r.truck != ra.truck]
        spare = free_truck(sol, inst.fleet.num_trucks)
        if spare is not None:
            targets.append(spare)
        if not targets:
            return None
        tb = targets[rng.randrange(len(targets))]
        rb = sol.route_of(tb)
        n_b = len(rb.stops) if rb is not None else 2
        params = (ra.truck, pa[rng.randrange(len(pa))], tb, rng.randrange(1, n_b))
    ta, i, tb, j = params
    ra = sol.route_of(ta)
    rb = sol.route_of(tb)
    if rb is None:
        rb = TruckRoute(tb, [0, 0])
        sol.routes.append(rb)
        sol.routes.sort(key=lambda r: r.truck)
    node = ra.stops[i]
    new_a = ra.stops[:i] + ra.stops[i + 1:]
    _edit_route(inst, sol, ra, new_a)
    insert_stop(sol, rb, j, node)
    return params


def _node_reversal(inst, sol, params, rng):
    if params is None:
        cands = [r for r in sol.routes if len(r.stops) >= 4]
        if not cands:
            return None
        r = cands[rng.randrange(len(cands))]
        i, j = sorted(rng.sample(range(1, len(r.stops) - 1), 2))
        params = (r.truck, i, j)
    truck, i, j = params
    r = sol.route_of(truck)
    new = r.stops[:i] + r.stops[i:j + 1][::-1] + r.stops[j + 1:]
    _edit_route(inst, sol, r, new)
    return params


def _entire_reversal(inst, sol, params, rng):
    if params is None:
        cands = [r for r in sol.routes if len(r.stops) >= 4]
        if not cands:
            return None
        params = (cands[rng.randrange(len(cands))].truck,)
    (truck,) = params
    r = sol.route_of(truck)
    new = [0] + r.stops[-2:0:-1] + [0]
    _edit_route(inst, sol, r, new)
    return params


def _sortie_removal(inst, sol, params, rng):
    if params is None:
        if not sol.sorties:
            return None
        params = (rng.randrange(len(sol.sorties)),)
    (idx,) = params
    dissolve_sortie(inst, sol, idx)
    return params


def _sortie_addition(inst, sol, params, rng):
    if params is not None:
        truck, pos = params
        r = sol.route_of(truck)
        return params if convert_to_sortie(inst, sol, r, pos) else None
    eligible = inst.eligible
    cands = []
    for r in sol.routes:
        anchored = anchored_positions(sol, r.truck)
        for p in range(1, len(r.stops) - 1):
            if eligible[r.stops[p]] and p not in anchored:
                cands.append((r.truck, p))
    rng.shuffle(cands)
    for truck, pos in cands[:8]:
        if convert_to_sortie(inst, sol, sol.route_of(truck), pos):
            return (truck, pos)
    return None


_NS_IMPL = {
    MoveKind.NodeSwap: _node_swap,
    MoveKind.EntireSwap: _entire_swap,
    MoveKind.NodeInsertion: _node_insertion,
    MoveKind.WholeInsertion: _whole_insertion,
    MoveKind.NodeReversal: _node_reversal,
    MoveKind.EntireReversal: _entire_reversal,
    MoveKind.SortieRemoval: _sortie_removal,
    MoveKind.SortieAddition: _sortie_addition,
}


def apply_move(inst: Instance, sol: Solution, move: Move, rng: random.Random) -> MoveOutcome:
    """Apply one move to a clone of `sol`; unspecified parameters are drawn from `rng`."""
    kind = move.kind
    if not isinstance(kind, MoveKind):
        try:
            kind = MoveKind(kind)
        except ValueError:
            raise OperatorError(f"unknown move kind {move.kind!r}") from None
    if kind is MoveKind.MaMutation:
        rate = 1.0 if move.params is None else move.params[0]
        return mutate(inst, sol, rng, rate)
    if kind is MoveKind.MaCrossover:
        if not move.params:
            raise OperatorError("MaCrossover needs a partner solution: params=(partner, [i, j])")
        partner, *cut = move.params
        child = ma_crossover(inst, sol, partner, rng, tuple(cut) if cut else None)
        return MoveOutcome(child, True, Move(kind, move.params))
    if kind is MoveKind.MaSelection:
        raise OperatorError("MaSelection picks parents from a population; use ma_select")
    work = clone_solution(sol)
    params = _NS_IMPL[kind](inst, work, move.params, rng)
    if params is None:
        return MoveOutcome(clone_solution(sol), False, Move(kind, None))
    drop_empty_routes(work)
    return MoveOutcome(work, True, Move(kind, params))


def random_ns_move(inst: Instance, sol: Solution, rng: random.Random) -> MoveOutcome:
    kind = NS_MOVES[rng.randrange(len(NS_MOVES))]
    return apply_move(inst, sol, Move(kind), rng)


# -- genetic operators -------------------------------------------------------


def ma_select(population: Sequence[Tuple[Solution, float]], rng: random.Random) -> Tuple[int, int]:
    """Two binary tournaments; the second excludes the first winner.

    Ties keep the first drawn candidate so equal scores select uniformly.
    """
    n = len(population)
    if n < 2:
        raise OperatorError("population must hold at least two individuals")

    def tournament(pool: List[int]) -> int:
        a = pool[rng.randrange(len(pool))]
        b = pool[rng.randrange(len(pool))]
        return b if population[b][1] < population[a][1] else a

    first = tournament(list(range(n)))
    second = tournament([i for i in range(n) if i != first])
    return first, second


def _route_angle(inst: Instance, route: TruckRoute) -> Tuple[float, int]:
    """Polar angle of the route's stop centroid around the depot."""
    pts = [inst.nodes[v] for v in route.stops[1:-1]]
    if not pts:
        return (0.0, route.truck)
    d = inst.nodes[0]
    cx = sum(p.x for p in pts) / len(pts) - d.x
    cy = sum(p.y for p in pts) / len(pts) - d.y
    return (math.atan2(cy, cx) % (2 * math.pi), route.truck)


def giant_tour(inst: Instance, sol: Solution) -> List[int]:
    """Customer visitation sequence; sortie customers follow their launch stop."""
    is_retr = inst.is_retrieval
    seq: List[int] = []
    for r in sorted(sol.routes, key=lambda r: _route_angle(inst, r)):
        launched = {}
        for s in sol.sorties:
            if s.truck == r.truck:
                launched.setdefault(s.launch_pos, []).extend(s.customers)
        for p, node in enumerate(r.stops[:-1]):
            if p > 0 and not is_retr[node]:
                seq.append(node)
            seq.extend(launched.get(p, ()))
    return seq


def order_crossover(a: Sequence[int], b: Sequence[int], i: int, j: int) -> List[int]:
    """Keep a[i..j] in place, fill the other slots left to right in b's order."""
    kept = set(a[i:j + 1])
    fill = iter([c for c in b if c not in kept])
    return [a[p] if i <= p <= j else next(fill) for p in range(len(a))]


def _decorations(inst: Instance, sol: Solution):
    """Parent layout per customer: hubs visited just before / after it by
    truck, and, for drone customers, the node the drone landed at."""
    is_retr = inst.is_retrieval
    pre: dict = {}
    post: dict = {}
    for r in sol.routes:
        pending: List[int] = []
        last = None
        for node in r.stops[1:-1]:
            if not is_retr[node]:
                if pending:
                    pre[node] = pending
                    pending = []
                last = node
            elif last is None:
                pending.append(node)
            else:
                post.setdefault(last, []).append(node)
    landing = {}
    for s_ in sol.sorties:
        stops = sol.route_of(s_.truck).stops
        for c in s_.customers:
            landing[c] = stops[s_.retrieval_pos]
    return pre, post, landing


def _place_sortie(inst: Instance, sol: Solution, route: TruckRoute, launch_node: int, c: int, landing: Optional[int]) -> None:
    """Fly c from `launch_node`, preferably back to the parent's landing node;
    otherwise the best retrieval point; otherwise serve c by truck right after the launch."""
    stops = route.stops
    lp = stops.index(launch_node)
    limit = min(inst.fleet.truck_drone_capacity,
                inst.fleet.num_drones - sum(v for k, v in drone_usage(sol).items() if k != route.truck))
    if limit >= 1 and inst.eligible[c]:
        intervals = [(s_.launch_pos, s_.retrieval_pos) for s_ in sol.sorties if s_.truck == route.truck]
        cov = gap_coverage(len(stops), intervals)
        endurance = inst.fleet.drone_endurance + 1e-9
        dt = inst.drone_times
        if landing is not None and landing in stops[lp + 1:]:
            q = stops.index(landing, lp + 1)
            flight = dt[launch_node][c] + dt[c][landing]
            prefix = prefix_times(inst.truck_times, stops)
            if flight <= endurance and prefix[q] - prefix[lp] <= endurance and max(cov[lp:q]) + 1 <= limit:
                sol.sorties.append(Sortie(route.truck, lp, [c], q))
                return
        opt = best_retrieval(inst, stops, prefix_times(inst.truck_times, stops), lp, c, cov, limit)
        if opt is not None:
            attach_sortie(sol, route, lp, c, opt)
            return
    insert_stop(sol, route, lp + 1, c)


def _fly_if_faster(inst: Instance, sol: Solution, route: TruckRoute, launch_node: int, c: int,
                   landing: Optional[int]) -> None:
    """Serve c by drone (see _place_sortie) unless a truck stop after the launch finishes the route sooner."""
    by_truck = clone_solution(sol)
    truck_route = by_truck.route_of(route.truck)
    insert_stop(by_truck, truck_route, truck_route.stops.index(launch_node) + 1, c)
    _place_sortie(inst, sol, route, launch_node, c, landing)
    if c in route.stops:
        return
    if route_completion(inst, by_truck, truck_route) < route_completion(inst, sol, route) - 1e-9:
        route.stops[:] = truck_route.stops
        sol.sorties[:] = by_truck.sorties


def ma_crossover(inst: Instance, a: Solution, b: Solution, rng: random.Random,
                 cut: Optional[Tuple[int, int]] = None) -> Solution:
    """Order crossover on giant tours, re-split into routes.

    Each customer keeps parent a's layout around it: hubs the truck visited
    next to it and, for drone customers, the sortie (launched from the
    preceding truck stop, landing where it landed in a if still reachable).
    """
    if (a.instance_name, a.instance_seed) != (b.instance_name, b.instance_seed):
        raise OperatorError("parents belong to different instances")
    ta, tb = giant_tour(inst, a), giant_tour(inst, b)
    if sorted(ta) != sorted(tb):
        raise OperatorError("parents serve different customer sets")
    n = len(ta)
    if n == 0:
        return clone_solution(a)
    if cut is None:
        i, j = sorted((rng.randrange(n), rng.randrange(n)))
    else:
        i, j = cut
    seq = order_crossover(ta, tb, i, j)
    pre, post, landing = _decorations(inst, a)
    flown = {c for c in landing if inst.eligible[c]}

    def expand(c):
        if c in flown:
            return ()
        return (*pre.get(c, ()), c, *post.get(c, ()))

    chunks = optimal_split(inst, seq, expand=expand)
    if chunks is None:
        return Solution(routes_from_sequence(inst, seq), [], a.instance_name, a.instance_seed)
    child = Solution([], [], a.instance_name, a.instance_seed)
    for k, chunk in enumerate(chunks):
        stops = [0]
        drones: List[Tuple[int, int]] = []
        for c in chunk:
            if c in flown:
                drones.append((stops[-1], c))
                continue
            for node in expand(c):
                if node != c and node in stops:
                    continue
                stops.append(node)
        stops.append(0)
        route = TruckRoute(k, stops)
        child.routes.append(route)
        for launch_node, c in drones:
            _fly_if_faster(inst, child, route, launch_node, c, landing.get(c))
        prune_idle_hubs(inst, child, route)
    drop_empty_routes(child)
    return repair(inst, child)


def mutate(inst: Instance, sol: Solution, rng: random.Random, rate: float) -> MoveOutcome:
    if not 0.0 <= rate <= 1.0:
        raise OperatorError("mutation rate must lie in [0, 1]")
    if rng.random() < rate:
        out = random_ns_move(inst, sol, rng)
        return MoveOutcome(out.solution, out.applied, Move(MoveKind.MaMutation, (rate, out.move)))
    return MoveOutcome(clone_solution(sol), False, Move(MoveKind.MaMutation, (rate, None)))


def ma_mutate(inst: Instance, sol: Solution, rng: random.Random, rate: float) -> Solution:
    return mutate(inst, sol, rng, rate).solution


# -- shuffle (ruin and recreate) --------------------------------------------


def _remove_customer(inst: Instance, sol: Solution, c: int, pool: List[int]) -> None:
    for si, s in enumerate(sol.sorties):
        if c in s.customers:
            s.customers.remove(c)
            if not s.customers:
                sol.sorties.pop(si)
                prune_idle_hubs(inst, sol, sol.route_of(s.truck))
            return
    for r in sol.routes:
        if c in r.stops:
            pos = r.stops.index(c)
            dependants = [i for i, s in enumerate(sol.sorties) if s.truck == r.truck and s.launch_pos == pos]
            for i in reversed(dependants):
                s = sol.sorties.pop(i)
                pool.extend(s.customers)
            remove_stop(sol, r, pos)
            prune_idle_hubs(inst, sol, r)
            return


def reinsert_customer(inst: Instance, sol: Solution, c: int, objective: str = "time") -> None:
    """Greedy reinsertion at the truck slot or new sortie with the least estimated increase."""
    tt = inst.truck_times
    costs = inst.costs
    done = route_completions(inst, sol)
    loads = route_loads(inst, sol)
    room = inst.fleet.truck_payload + 1e-9 - inst.demand[c]
    order = sorted(range(len(done)), key=lambda k: -done[k])
    makespan = done[order[0]] if done else 0.0
    best_key = None
    best_action = None

    def others_max(k):
        for j in order:
            if j != k:
                return done[j]
        return 0.0

    def consider(key, action):
        nonlocal best_key, best_action
        if best_key is None or key < best_key:
            best_key, best_action = key, action

    for k, r in enumerate(sol.routes):
        if loads[k] > room:
            continue
        rest = others_max(k)
        stops = r.stops
        for pos in range(1, len(stops)):
            a, b = stops[pos - 1], stops[pos]
            detour = tt[a][c] + tt[c][b] - tt[a][b]
            if objective == "cost":
                key = (costs.truck_per_time * detour, 0.0)
            else:
                key = (max(rest, done[k] + detour), detour)
            consider(key, ("truck", k, pos))
    spare = free_truck(sol, inst.fleet.num_trucks)
    if spare is not None:
        loop = tt[0][c] + tt[c][0]
        if objective == "cost":
            key = (costs.truck_fixed + costs.truck_per_time * loop, 0.0)
        else:
            key = (max(makespan, loop), loop)
        consider(key, ("new", spare, 1))
    if inst.eligible[c]:
        usage = drone_usage(sol)
        for k, r in enumerate(sol.routes):
            if loads[k] > room:
                continue
            others = sum(v for t, v in usage.items() if t != r.truck)
            limit = min(inst.fleet.truck_drone_capacity, inst.fleet.num_drones - others)
            if limit < 1:
                continue
            stops = r.stops
            cov = gap_coverage(len(stops), [(s.launch_pos, s.retrieval_pos) for s in sol.sorties if s.truck == r.truck])
            prefix = prefix_times(tt, stops)
            rest = others_max(k)
            for launch in range(len(stops) - 1):
                opt = best_retrieval(inst, stops, prefix, launch, c, cov, limit)
                if opt is None:
                    continue
                if objective == "cost":
                    key = (costs.drone_per_time * opt.flight + costs.truck_per_time * opt.detour, 0.0)
                else:
                    key = (max(rest, done[k] + opt.score), opt.score)
                consider(key, ("drone", k, launch, opt))
    if best_action is None:
        # every truck is full: overload the lightest one and let the evaluator reject it
        k = min(range(len(sol.routes)), key=lambda i: loads[i])
        _, pos = cheapest_insertion(tt, sol.routes[k].stops, c)
        best_action = ("truck", k, pos)
    kind = best_action[0]
    if kind == "truck":
        _, k, pos = best_action
        insert_stop(sol, sol.routes[k], pos, c)
    elif kind == "new":
        _, truck, _ = best_action
        sol.routes.append(TruckRoute(truck, [0, c, 0]))
        sol.routes.sort(key=lambda r: r.truck)
    else:
        _, k, launch, opt = best_action
        attach_sortie(sol, sol.routes[k], launch, c, opt)


def shuffle(inst: Instance, sol: Solution, rng: random.Random, strength: float = 0.2,
            objective: str = "time") -> Solution:
    """Ruin ceil(strength * n) random customers and greedily recreate."""
    if not 0.0 < strength <= 1.0:
        raise OperatorError("shuffle strength must lie in (0, 1]")
    work = clone_solution(sol)
    served = sorted(work.served(inst))
    if not served:
        return work
    m = min(len(served), math.ceil(strength * len(served)))
    picked = rng.sample(served, m)
    pool: List[int] = []
    for c in picked:
        if c not in pool:
            pool.append(c)
        _remove_customer(inst, work, c, pool)
    drop_empty_routes(work)
    for c in pool:
        reinsert_customer(inst, work, c, objective)
    drop_empty_routes(work)
    return repair(inst, work)
