"""Exact reference optimum for tiny instances by exhaustive search.

The search covers: every split of customers into at most |K| routes, every
truck/drone choice for eligible customers, every drone allocation per truck
within L^R and |D|, every truck visiting order with optional hub stops, and
every single-customer sortie launch point / retrieval point. Branches are cut
only by valid lower bounds (Held-Karp truck paths), so the result is optimal
for operational_time (makespan).

It shares only the Instance data with the solvers; timing rules are
re-implemented here so the evaluator can be cross-checked against it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .instance import TOL, Instance, InstanceError
from .solution import Solution, Sortie, TruckRoute

MAX_ORACLE_CUSTOMERS = 8
INF = math.inf


class OracleRefusal(InstanceError):
    """Instance too large for exhaustive search."""


@dataclass
class OracleResult:
    feasible: bool
    operational_time: float
    solution: Optional[Solution]
    routes_examined: int = 0


class _RoutePlan:
    __slots__ = ("time", "stops", "sorties")

    def __init__(self, time, stops, sorties):
        self.time = time
        self.stops = stops
        self.sorties = sorties  # (launch_pos, customer, retrieval_pos)


class _Oracle:
    def __init__(self, inst: Instance):
        self.inst = inst
        self.tt = inst.truck_times
        self.dt = inst.drone_times
        self.customers = list(inst.customers)
        self.hubs = list(inst.hubs)
        self.endurance = inst.fleet.drone_endurance
        self.n = len(self.customers)
        self.bit = {c: 1 << i for i, c in enumerate(self.customers)}
        self._hk_path()
        self.memo: Dict[tuple, Tuple[float, Optional[_RoutePlan]]] = {}
        self.examined = 0

    # Held-Karp: path[v][mask] = min truck time from node v through all customers in mask, back to depot
    def _hk_path(self):
        n = self.n
        tt = self.tt
        cs = self.customers
        full = 1 << n
        # g[mask][i] = min time starting at customer i, visiting mask (which includes i), ending at depot
        g = [[INF] * n for _ in range(full)]
        for i in range(n):
            g[1 << i][i] = tt[cs[i]][0]
        for mask in range(1, full):
            for i in range(n):
                if not mask >> i & 1:
                    continue
                rest = mask & ~(1 << i)
                if rest == 0:
                    continue
                best = INF
                ci = cs[i]
                for j in range(n):
                    if rest >> j & 1:
                        v = tt[ci][cs[j]] + g[rest][j]
                        if v < best:
                            best = v
                g[mask][i] = best
        self.g = g

    def path_bound(self, node: int, mask: int) -> float:
        if mask == 0:
            return self.tt[node][0]
        tt = self.tt
        cs = self.customers
        row = self.g[mask]
        return min(tt[node][cs[i]] + row[i] for i in range(self.n) if mask >> i & 1)

    def tsp(self, mask: int) -> Tuple[float, List[int]]:
        if mask == 0:
            return 0.0, []
        cs = self.customers
        tt = self.tt
        best, first = INF, -1
        for i in range(self.n):
            if mask >> i & 1:
                v = tt[0][cs[i]] + self.g[mask][i]
                if v < best:
                    best, first = v, i
        order = [cs[first]]
        rest = mask & ~(1 << first)
        cur = first
        while rest:
            nxt = min((j for j in range(self.n) if rest >> j & 1),
                      key=lambda j: (tt[cs[cur]][cs[j]] + self.g[rest][j], j))
            order.append(cs[nxt])
            rest &= ~(1 << nxt)
            cur = nxt
        return best, order

    # exact single route: truck customers `tmask`, drone customers `dmask`, at most q airborne drones
    def route(self, tmask: int, dmask: int, q: int, bound: float) -> Tuple[float, Optional[_RoutePlan]]:
        key = (tmask, dmask, q)
        hit = self.memo.get(key)
        if hit is not None:
            val, plan = hit
            if plan is not None or val >= bound:
                return val, plan
        self.examined += 1
        if dmask == 0:
            t, order = self.tsp(tmask)
            plan = _RoutePlan(t, [0, *order, 0], [])
            self.memo[key] = (t, plan)
            return t, plan
        if q == 0:
            self.memo[key] = (INF, None)
            return INF, None
        val, plan = self._search(tmask, dmask, q, bound)
        if plan is None:
            val = bound  # proved: nothing strictly below `bound`
        self.memo[key] = (val, plan)
        return val, plan

    def _search(self, tmask: int, dmask: int, q: int, bound: float):
        tt, dt = self.tt, self.dt
        cs = self.customers
        hubs = self.hubs
        endurance = self.endurance + TOL
        best = [bound, None]
        drone_custs = [c for c in cs if dmask & self.bit[c]]
        truck_custs = [c for c in cs if tmask & self.bit[c]]

        # airborne: tuple of (target_node, land_time, launch_time, customer, launch_pos)
        def land(node, arrive, airborne):
            dep = arrive
            keep = []
            landed = []
            for a in airborne:
                if a[0] == node:
                    if max(a[1], arrive) - a[2] > endurance:
                        return None
                    if a[1] > dep:
                        dep = a[1]
                    landed.append(a)
                else:
                    keep.append(a)
            return dep, tuple(keep), landed

        def launches(node, pos, t, remd, airborne, hubs_left):
            """Yield (new airborne, remaining drone mask, launched records)."""
            yield airborne, remd, []
            free = q - len(airborne)
            if free <= 0 or remd == 0:
                return
            pending = [c for c in drone_custs if remd & self.bit[c]]
            targets = [0, *[h for h in hubs_left]]
            for size in range(1, min(free, len(pending)) + 1):
                for group in itertools.combinations(pending, size):
                    opts = []
                    for c in group:
                        out = dt[node][c]
                        choices = []
                        for tgt in targets:
                            fl = out + dt[c][tgt]
                            if fl <= endurance:
                                choices.append((tgt, t + fl, t, c, pos))
                        if not choices:
                            break
                        opts.append(choices)
                    else:
                        for combo in itertools.product(*opts):
                            mask = remd
                            for c in group:
                                mask &= ~self.bit[c]
                            yield airborne + combo, mask, list(combo)

        def dfs(node, pos, t, remt, remd, airborne, hubs_left, stops, sorties):
            # lower bound: truck must still cover remt and get home; drones must land
            lb = t + self.path_bound(node, remt)
            for a in airborne:
                if a[1] > lb and a[0] == 0:
                    lb = a[1]
            if lb >= best[0] - 1e-9:
                return
            for air, rd, launched in launches(node, pos, t, remd, airborne, hubs_left):
                # every launched drone needs its target still ahead; a hub target must be visited later
                new_sorties = sorties + [[a[4], a[3], a[0]] for a in launched]
                # next: a truck customer
                for c in truck_custs:
                    if remt & self.bit[c]:
                        arrive = t + tt[node][c]
                        dfs(c, pos + 1, arrive, remt & ~self.bit[c], rd, air, hubs_left, stops + [c], new_sorties)
                # next: a hub, only if someone lands there or drones remain to be launched
                for h in hubs_left:
                    if not (rd or any(a[0] == h for a in air)):
                        continue
                    res = land(h, t + tt[node][h], air)
                    if res is None:
                        continue
                    dep, keep, landed = res
                    fixed = _fix_retrieval(new_sorties, landed, pos + 1)
                    dfs(h, pos + 1, dep, remt, rd, keep, tuple(x for x in hubs_left if x != h), stops + [h], fixed)
                # next: home
                if remt == 0 and rd == 0 and all(a[0] == 0 for a in air):
                    res = land(0, t + tt[node][0], air)
                    if res is None:
                        continue
                    dep, _, landed = res
                    if dep < best[0] - 1e-9:
                        fixed = _fix_retrieval(new_sorties, landed, pos + 1)
                        best[0] = dep
                        best[1] = _RoutePlan(dep, stops + [0], [tuple(s) for s in fixed])

        dfs(0, 0, 0.0, tmask, dmask, (), tuple(hubs), [0], [])
        return best[0], best[1]


def _fix_retrieval(sorties, landed, pos):
    if not landed:
        return sorties
    out = [list(s) for s in sorties]
    for a in landed:
        for s in out:
            if s[0] == a[4] and s[1] == a[3]:
                s[2] = pos
    return out


def brute_force_oracle(inst: Instance, max_customers: int = MAX_ORACLE_CUSTOMERS) -> OracleResult:
    """Exact minimum operational_time (makespan) over the modelled solution class."""
    n = len(inst.customers)
    if n > max_customers:
        raise OracleRefusal(f"oracle refuses {n} customers (limit {max_customers})")
    empty = Solution([], [], inst.name, inst.seed)
    if n == 0:
        return OracleResult(True, 0.0, empty)
    fleet = inst.fleet
    orc = _Oracle(inst)
    cs = orc.customers
    demand = inst.demand
    eligible = inst.eligible
    cap = fleet.truck_payload + TOL
    best = [INF, None]

    # upper bound from truck-only splits, then refine with drones
    def blocks_of(assign, k):
        out = [0] * k
        for i, b in enumerate(assign):
            out[b] |= 1 << i
        return out

    partitions = []

    def gen(i, assign, used):
        if i == n:
            partitions.append(tuple(assign))
            return
        for b in range(min(used + 1, fleet.num_trucks)):
            assign.append(b)
            gen(i + 1, assign, max(used, b + 1))
            assign.pop()

    gen(0, [], 0)
    block_lists = []
    for assign in partitions:
        blocks = blocks_of(assign, max(assign) + 1)
        if any(sum(demand[cs[i]] for i in range(n) if m >> i & 1) > cap for m in blocks):
            continue
        block_lists.append(blocks)
    if not block_lists:
        return OracleResult(False, INF, None, 0)

    for blocks in block_lists:
        t = max(orc.tsp(m)[0] for m in blocks)
        if t < best[0]:
            best[0] = t
            best[1] = [(m, 0, 0) for m in blocks]

    max_q = fleet.truck_drone_capacity
    for blocks in block_lists:
        _search_blocks(orc, blocks, 0, fleet.num_drones, max_q, 0.0, [], best, eligible)

    plans = []
    for tmask, dmask, q in best[1]:
        val, plan = orc.route(tmask, dmask, q, INF)
        plans.append(plan)
    sol = _to_solution(inst, plans)
    return OracleResult(True, best[0], sol, orc.examined)


def _search_blocks(orc: _Oracle, blocks, idx, drones_left, max_q, cur, chosen, best, eligible):
    if cur >= best[0] - 1e-9:
        return
    if idx == len(blocks):
        best[0] = cur
        best[1] = list(chosen)
        return
    m = blocks[idx]
    members = [i for i in range(orc.n) if m >> i & 1]
    flyable = [i for i in members if eligible[orc.customers[i]]]
    for r in range(len(flyable) + 1):
        for fly in itertools.combinations(flyable, r):
            dmask = 0
            for i in fly:
                dmask |= 1 << i
            tmask = m & ~dmask
            # truck-only path through tmask is a lower bound on the route time
            if orc.path_bound(0, tmask) >= best[0] - 1e-9 and tmask:
                continue
            qs = [0] if dmask == 0 else range(1, min(max_q, drones_left, r) + 1)
            for q in qs:
                val, plan = orc.route(tmask, dmask, q, best[0])
                if plan is None or val >= best[0] - 1e-9:
                    continue
                chosen.append((tmask, dmask, q))
                _search_blocks(orc, blocks, idx + 1, drones_left - q, max_q, max(cur, val), chosen, best, eligible)
                chosen.pop()


def _to_solution(inst: Instance, plans: Sequence[_RoutePlan]) -> Solution:
    routes, sorties = [], []
    k = 0
    for plan in plans:
        if plan is None or (len(plan.stops) <= 2 and not plan.sorties):
            continue
        routes.append(TruckRoute(k, list(plan.stops)))
        for launch, c, retrieval in sorted(plan.sorties):
            sorties.append(Sortie(k, launch, [c], retrieval))
        k += 1
    return Solution(routes, sorties, inst.name, inst.seed)
