"""Iterative key-based lookup over simulated nodes.

Strict mode queries exactly alpha closest known-unqueried contacts per round and
waits for every reply before the next round; the hop count is the number of query
rounds, which is what the analytical chain counts. Loose mode keeps alpha queries
outstanding and counts hops as the discovery-path depth of the terminating node.
"""

from __future__ import annotations

from dataclasses import dataclass

FOUND_RESPONSIBLE = "found_responsible"
NO_CLOSER_CONTACTS = "no_closer_contacts"
TIMEOUT = "timeout"


@dataclass(frozen=True, slots=True)
class LookupResult:
    target: int
    hops: int
    queried: int
    terminated_by: str
    path_depth: int = 0


def strict_rounds(net, origin: int, target: int, round_budget: int | None = None, trace=None):
    """Generator running one strict lookup; yields once per completed round so a
    churn engine can advance simulated time between rounds. Returns LookupResult."""
    alpha = net.profile.alpha
    beta = net.profile.beta
    budget = round_budget if round_budget is not None else 2 * net.profile.b
    responsible = net.responsible_for(target)
    queried = {origin}
    pool = [c for c in net.table_closest(origin, target, alpha) if c != origin]
    rounds = 0
    n_queries = 0
    best_queried = None
    while True:
        batch = [c for c in pool if c not in queried]
        batch.sort(key=lambda c: c ^ target)
        batch = batch[:alpha]
        if not batch:
            return LookupResult(target, max(rounds, 1), n_queries, NO_CLOSER_CONTACTS, rounds)
        rounds += 1
        n_queries += len(batch)
        queried.update(batch)
        for c in batch:
            bx = c ^ target
            if best_queried is None or bx < best_queried:
                best_queried = bx
        if responsible is not None and responsible in batch:
            return LookupResult(target, rounds, n_queries, FOUND_RESPONSIBLE, rounds)
        yield rounds  # replies arrive after one simulated RTT
        returned: set[int] = set()
        for c in batch:
            if not net.is_online(c):
                continue
            returned.update(net.closest_of(c, target, beta))
        returned.discard(origin)
        if trace is not None:
            trace.append(
                {
                    "round": rounds,
                    "queried": sorted((c ^ target).bit_length() for c in batch),
                    "returned": sorted((c ^ target).bit_length() for c in returned),
                }
            )
        new = [c for c in returned if c not in queried]
        if not new or min(c ^ target for c in new) >= best_queried:
            return LookupResult(target, rounds, n_queries, NO_CLOSER_CONTACTS, rounds)
        if rounds >= budget:
            return LookupResult(target, rounds, n_queries, TIMEOUT, rounds)
        pool = list(returned)


def loose_rounds(net, origin: int, target: int, query_budget: int | None = None):
    """Generator form of the eMule-style pipelined lookup; yields once per query
    wave so a churn engine can advance time. Hop count = discovery-path depth."""
    alpha = net.profile.alpha
    beta = net.profile.beta
    budget = query_budget if query_budget is not None else 2 * net.profile.b * alpha
    responsible = net.responsible_for(target)
    depth = {}
    for c in net.table_closest(origin, target, max(alpha * 4, 8)):
        if c != origin:
            depth[c] = 1
    queried: set[int] = set()
    n_queries = 0
    best_queried = None
    best_node = None
    while True:
        cands = sorted((c ^ target, c) for c in depth if c not in queried)
        if not cands or (best_queried is not None and cands[0][0] >= best_queried):
            hops = depth.get(best_node, 1) if best_node is not None else 1
            return LookupResult(target, max(hops, 1), n_queries, NO_CLOSER_CONTACTS, max(hops, 1))
        batch = [c for _, c in cands[:alpha]]
        hit = None
        for c in batch:
            queried.add(c)
            n_queries += 1
            bx = c ^ target
            if best_queried is None or bx < best_queried:
                best_queried, best_node = bx, c
            if c == responsible:
                hit = depth[c]
        yield n_queries  # replies to this wave arrive after one RTT
        if hit is not None:
            return LookupResult(target, hit, n_queries, FOUND_RESPONSIBLE, hit)
        for c in batch:
            if not net.is_online(c):
                continue
            for r in net.closest_of(c, target, beta):
                if r != origin and (r not in depth or depth[c] + 1 < depth[r]):
                    depth[r] = depth[c] + 1
        if n_queries >= budget:
            hops = depth.get(best_node, 1) if best_node is not None else 1
            return LookupResult(target, max(hops, 1), n_queries, TIMEOUT, max(hops, 1))


def lookup_rounds(net, origin: int, target: int, mode: str = "strict",
                  round_budget: int | None = None, trace=None):
    if mode == "strict":
        return strict_rounds(net, origin, target, round_budget, trace)
    if mode == "loose":
        return loose_rounds(net, origin, target)
    raise ValueError(f"unknown lookup mode {mode!r}")


def lookup(net, origin: int, target: int, mode: str = "strict", round_budget: int | None = None,
           trace=None) -> LookupResult:
    """Run a lookup to completion (no-churn path; churn engines drive the generators)."""
    gen = lookup_rounds(net, origin, target, mode, round_budget, trace)
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            return stop.value
