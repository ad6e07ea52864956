"""Incremental fabric expansion.

Plans the re-striping from the current block count to a larger one, batches
the work into steps that never drain more than a configured fraction of the
live links, then executes each step: drain, reconfigure the switches,
qualify the new links (with retries and a spare-port fallback), release.
Everything runs on a deterministic virtual clock; wall-clock time is never
consulted.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fabric import (
    AggregationBlock,
    CapacityExceeded,
    ConfigInvalid,
    Fabric,
    PortAllocator,
    RealizedLink,
    StripingMatrix,
    Uplink,
)
from .links import qualify_link
from .topology import canonical_striping

__all__ = [
    "StepState",
    "NewAbSpec",
    "PlannedLink",
    "PlanStep",
    "RestripePlan",
    "Event",
    "EventLog",
    "Violation",
    "plan_expansion",
    "validate_plan",
    "execute_plan",
    "ExpansionError",
    "PlanStale",
]

DEFAULT_RETRY_BUDGET = 3


class ExpansionError(Exception):
    pass


class PlanStale(ExpansionError):
    pass


class StepState(enum.Enum):
    PENDING = "Pending"
    DRAINING = "Draining"
    RECONFIGURING = "Reconfiguring"
    QUALIFYING = "Qualifying"
    RELEASED = "Released"
    FAILED = "Failed"


_STATE_ORDER = {s: i for i, s in enumerate(StepState)}


@dataclass(frozen=True)
class NewAbSpec:
    generation: str
    uplink_count: int


@dataclass(frozen=True)
class PlannedLink:
    """A link the plan will create, with its placement fixed at plan time."""

    link_id: int
    ab_a: int
    ab_b: int
    ocs_id: int
    in_port: int
    out_port: int
    uplink_a: int
    uplink_b: int
    fiber_m: tuple[float, float]
    rate_gbps: float


@dataclass(frozen=True)
class PlanStep:
    index: int
    drains: tuple[int, ...]  # link ids, ordered lowest switch id first
    ops: tuple[tuple, ...]  # ("disconnect", ocs, in) / ("connect", ocs, in, out)
    adds: tuple[PlannedLink, ...]


@dataclass
class RestripePlan:
    steps: tuple[PlanStep, ...]
    source_fingerprint: str
    source_striping: np.ndarray
    target_striping: np.ndarray
    drain_limit: float
    new_ab_specs: tuple[NewAbSpec, ...]
    pre_capacity_gbps: float

    @property
    def total_drains(self) -> int:
        return sum(len(s.drains) for s in self.steps)

    @property
    def total_adds(self) -> int:
        return sum(len(s.adds) for s in self.steps)


@dataclass(frozen=True)
class Event:
    t_virtual_s: float
    step: int
    link_id: int | None
    transition: str
    detail: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "t_virtual_s": self.t_virtual_s,
                "step": self.step,
                "link_id": self.link_id,
                "transition": self.transition,
                "detail": self.detail,
            },
            sort_keys=True,
        )


@dataclass
class EventLog:
    events: list[Event] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "\n".join(e.to_json() for e in self.events)

    def released_capacity_trace(self) -> list[tuple[float, float]]:
        """(time, released capacity) at every event carrying the counter."""
        return [
            (e.t_virtual_s, e.detail["released_gbps"])
            for e in self.events
            if "released_gbps" in e.detail
        ]

    def min_released_capacity(self) -> float:
        trace = self.released_capacity_trace()
        return min((c for _, c in trace), default=math.inf)


@dataclass(frozen=True)
class Violation:
    step: int | None
    kind: str
    detail: str


def _extended_abs(fabric: Fabric, new_ab_specs) -> list[AggregationBlock]:
    table = fabric.config.table()
    out = []
    base = fabric.n_abs
    for k, spec in enumerate(new_ab_specs):
        if spec.generation not in table:
            raise ConfigInvalid(f"unknown generation {spec.generation!r}")
        if spec.uplink_count != fabric.config.uplinks_per_ab:
            raise ConfigInvalid(
                "expansion requires uniform uplink counts across blocks"
            )
        ab_id = base + k
        out.append(
            AggregationBlock(
                ab_id=ab_id,
                generation=table[spec.generation],
                uplinks=[
                    Uplink(fiber_id=f"ab{ab_id}-up{i}")
                    for i in range(spec.uplink_count)
                ],
            )
        )
    return out


def plan_expansion(
    fabric: Fabric,
    new_ab_specs: list[NewAbSpec],
    drain_limit: float,
    target: np.ndarray | None = None,
) -> RestripePlan:
    """Plan the re-striping to the expanded block count.

    The target defaults to the canonical striping for the new block count.
    Changed links are partitioned into steps so that no step drains more
    than `drain_limit` of the links projected live at that point; step
    order is deterministic with drains sorted lowest switch id first.

    Raises:
        CapacityExceeded: the target needs more switch ports than exist.
    """
    if not 0 < drain_limit <= 1:
        raise ValueError("drain_limit must be in (0, 1]")
    new_abs = _extended_abs(fabric, new_ab_specs)
    n_new = fabric.n_abs + len(new_abs)
    u = fabric.config.uplinks_per_ab
    if target is None:
        if n_new >= 2:
            target = canonical_striping(n_new, u)
        else:
            target = np.zeros((1, 1), dtype=int)
    target = np.asarray(target, dtype=int)
    if target.shape != (n_new, n_new):
        raise ValueError(f"target striping must be {n_new}x{n_new}")

    total_links = int(target.sum() // 2)
    profile = fabric.config.device_profile
    usable_per_switch = profile.radix - profile.spare_ports
    if total_links > len(fabric.ocses) * usable_per_switch:
        raise CapacityExceeded(
            f"target needs {total_links} links; switches offer "
            f"{len(fabric.ocses) * usable_per_switch} paths"
        )

    all_abs = list(fabric.abs) + new_abs
    table = {ab.ab_id: ab for ab in all_abs}

    def rate_of(a: int, b: int) -> float:
        from .links import Incompatible, negotiate_interop

        rate = negotiate_interop(table[a].generation, table[b].generation)
        if isinstance(rate, Incompatible):
            raise ConfigInvalid(
                f"blocks {a} and {b} cannot interoperate: {rate.reason}"
            )
        return float(rate)

    # Per-pair diff between the current realization and the target.
    current = fabric.recompute_striping_counts()
    cur = np.zeros((n_new, n_new), dtype=int)
    cur[: fabric.n_abs, : fabric.n_abs] = current
    links_by_pair: dict[tuple[int, int], list[RealizedLink]] = {}
    for l in fabric.links:
        links_by_pair.setdefault(l.pair, []).append(l)
    for pair_links in links_by_pair.values():
        pair_links.sort(key=lambda l: (l.ocs_id, l.in_port))

    drains: list[RealizedLink] = []
    adds_needed: list[tuple[int, int]] = []  # pair, repeated per missing link
    for a in range(n_new):
        for b in range(a + 1, n_new):
            have = int(cur[a, b])
            want = int(target[a, b])
            if have > want:
                drains.extend(links_by_pair.get((a, b), [])[want:])
            elif want > have:
                adds_needed.extend([(a, b)] * (want - have))
    drains.sort(key=lambda l: (l.ocs_id, l.in_port))
    adds_needed.sort()

    allocator = PortAllocator(fabric, extra_abs=new_abs)
    next_id = fabric.next_link_id
    pre_capacity = fabric.released_capacity_gbps()
    projected = pre_capacity

    steps: list[PlanStep] = []
    pending_adds = list(adds_needed)

    def place_adds() -> list[PlannedLink]:
        nonlocal next_id
        placed: list[PlannedLink] = []
        remaining: list[tuple[int, int]] = []
        for (a, b) in pending_adds:
            spot = allocator.place(a, b, 1)
            if spot is None:
                remaining.append((a, b))
                continue
            oid, ports, ups_a, ups_b = spot
            link_id = next_id
            next_id += 1
            fibers = fabric.fiber_lengths_for_link(link_id, 2)
            placed.append(
                PlannedLink(
                    link_id=link_id,
                    ab_a=a,
                    ab_b=b,
                    ocs_id=oid,
                    in_port=ports[0][0],
                    out_port=ports[0][1],
                    uplink_a=ups_a[0],
                    uplink_b=ups_b[0],
                    fiber_m=(fibers[0], fibers[1]),
                    rate_gbps=rate_of(a, b),
                )
            )
        pending_adds[:] = remaining
        return placed

    drain_queue = list(drains)
    step_index = 0
    while drain_queue or pending_adds:
        batch: list[RealizedLink] = []
        if steps or not pending_adds or not _placeable(allocator, pending_adds):
            # Drain a budgeted batch; the very first step is drain-free when
            # some adds fit into currently free resources.
            budget = drain_limit * projected
            batch_cap = 0.0
            while drain_queue:
                nxt = drain_queue[0]
                if batch and batch_cap + nxt.rate_gbps > budget + 1e-9:
                    break
                if not batch and nxt.rate_gbps > budget + 1e-9:
                    # A single link exceeding the budget still must move.
                    batch.append(drain_queue.pop(0))
                    batch_cap += nxt.rate_gbps
                    break
                batch.append(drain_queue.pop(0))
                batch_cap += nxt.rate_gbps
        for l in batch:
            allocator.release(l)
        step_adds = place_adds()
        if not batch and not step_adds:
            raise CapacityExceeded(
                f"{len(pending_adds)} links cannot be placed on the free ports"
            )
        ops: list[tuple] = []
        for l in batch:
            for (i, o) in l.cross_connects:
                ops.append(("disconnect", l.ocs_id, i))
        for p in step_adds:
            ops.append(("connect", p.ocs_id, p.in_port, p.out_port))
        steps.append(
            PlanStep(
                index=step_index,
                drains=tuple(l.link_id for l in batch),
                ops=tuple(ops),
                adds=tuple(step_adds),
            )
        )
        projected -= sum(l.rate_gbps for l in batch)
        projected += sum(p.rate_gbps for p in step_adds)
        step_index += 1

    return RestripePlan(
        steps=tuple(steps),
        source_fingerprint=fabric.realization_fingerprint(),
        source_striping=current,
        target_striping=target,
        drain_limit=drain_limit,
        new_ab_specs=tuple(new_ab_specs),
        pre_capacity_gbps=pre_capacity,
    )


def _placeable(allocator: PortAllocator, pending: list[tuple[int, int]]) -> bool:
    if not pending:
        return False
    a, b = pending[0]
    if len(allocator.free_uplinks.get(a, [])) < 1:
        return False
    if len(allocator.free_uplinks.get(b, [])) < 1:
        return False
    return any(
        allocator.free_in[oid] and allocator.free_out[oid]
        for oid in allocator.free_in
    )


def validate_plan(fabric: Fabric, plan: RestripePlan) -> list[Violation]:
    """Static checks: budgets, double drains, reachability, port conflicts."""
    violations: list[Violation] = []
    if plan.source_fingerprint != fabric.realization_fingerprint():
        violations.append(
            Violation(None, "stale", "fabric state differs from the plan's source")
        )
    by_id = fabric.links_by_id()
    seen: set[int] = set()
    for step in plan.steps:
        for lid in step.drains:
            if lid in seen:
                violations.append(
                    Violation(step.index, "double_drain", f"link {lid} drained twice")
                )
            seen.add(lid)
            if lid not in by_id:
                violations.append(
                    Violation(step.index, "unknown_link", f"link {lid} not realized")
                )
    n_ocs = len(fabric.ocses)
    for step in plan.steps:
        for op in step.ops:
            if not 0 <= op[1] < n_ocs:
                violations.append(
                    Violation(step.index, "unknown_resource", f"switch {op[1]} unknown")
                )

    # Drain budgets against the projected live capacity.
    projected = plan.pre_capacity_gbps
    for step in plan.steps:
        batch_cap = sum(by_id[l].rate_gbps for l in step.drains if l in by_id)
        if len(step.drains) > 1 and batch_cap > plan.drain_limit * projected + 1e-6:
            violations.append(
                Violation(
                    step.index,
                    "drain_budget",
                    f"step drains {batch_cap:.0f} Gb/s, budget "
                    f"{plan.drain_limit * projected:.0f}",
                )
            )
        projected -= batch_cap
        projected += sum(p.rate_gbps for p in step.adds)

    # Source -> target reachability at the pair-count level.
    n_new = plan.target_striping.shape[0]
    counts = np.zeros((n_new, n_new), dtype=int)
    src = plan.source_striping
    counts[: src.shape[0], : src.shape[0]] = src
    for step in plan.steps:
        for lid in step.drains:
            if lid in by_id:
                a, b = by_id[lid].pair
                counts[a, b] -= 1
                counts[b, a] -= 1
        for p in step.adds:
            a, b = min(p.ab_a, p.ab_b), max(p.ab_a, p.ab_b)
            counts[a, b] += 1
            counts[b, a] += 1
    if not np.array_equal(counts, plan.target_striping):
        violations.append(
            Violation(None, "target_mismatch", "plan does not transform source into target")
        )

    # Port availability simulated step by step.
    conn_map: dict[int, dict[int, int]] = {
        d.device_id: dict(d.connections) for d in fabric.ocses
    }
    for step in plan.steps:
        for op in step.ops:
            if op[0] == "disconnect":
                _, oid, i = op
                if oid >= n_ocs or i not in conn_map.get(oid, {}):
                    violations.append(
                        Violation(step.index, "port_state", f"switch {oid} in {i} not connected")
                    )
                else:
                    conn_map[oid].pop(i)
            elif op[0] == "connect":
                _, oid, i, o = op
                if oid >= n_ocs:
                    continue
                if i in conn_map[oid] or o in conn_map[oid].values():
                    violations.append(
                        Violation(step.index, "port_conflict", f"switch {oid} ({i},{o}) busy")
                    )
                else:
                    conn_map[oid][i] = o
    return violations


_EVENT_PRIORITY = {
    "Draining": 0,
    "link_drained": 1,
    "Reconfiguring": 2,
    "ocs_reconfigured": 3,
    "Qualifying": 4,
    "qualify_attempt": 5,
    "spare_rerealized": 6,
    "link_released": 7,
    "link_failed": 8,
    "Released": 9,
    "Failed": 9,
}


def execute_plan(
    fabric: Fabric,
    plan: RestripePlan,
    seed,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
    flake_probability: float | None = None,
) -> EventLog:
    """Execute a re-stripe plan on the virtual clock.

    Per step: drained links leave production, the switches reconfigure
    (one dark-time window), and every new link qualifies in parallel on the
    virtual clock. A link failing its audit+BERT retries up to
    `retry_budget` times, then moves to a spare port pair on its switch (if
    any remain) for one more round of attempts before being marked failed.

    Raises:
        PlanStale: the fabric no longer matches the plan's source state.
    """
    if plan.source_fingerprint != fabric.realization_fingerprint():
        raise PlanStale("fabric state diverged from the plan's source fingerprint")
    if flake_probability is None:
        flake_probability = fabric.config.link_config.flake_probability
    seed_prefix = [int(seed)] if isinstance(seed, (int, np.integer)) else list(seed)

    new_abs = _extended_abs(fabric, plan.new_ab_specs)
    fabric.abs.extend(new_abs)

    dark_s = fabric.config.device_profile.switch_time_ms / 1000.0
    bert_s = fabric.config.link_config.bert_duration_s
    raw_events: list[tuple[float, int, int, int, Event]] = []
    seq = 0

    def log(t, step, link_id, transition, detail):
        nonlocal seq
        ev = Event(t, step, link_id, transition, dict(detail))
        raw_events.append(
            (t, step, _EVENT_PRIORITY.get(transition, 50), seq, ev)
        )
        seq += 1

    by_id = fabric.links_by_id()
    t = 0.0
    for step in plan.steps:
        log(t, step.index, None, StepState.DRAINING.value, {"links": len(step.drains)})
        for lid in step.drains:
            link = by_id.pop(lid)
            link.released = False
            fabric._remove_link(link)
            log(
                t,
                step.index,
                lid,
                "link_drained",
                {"pair": list(link.pair), "rate_gbps": link.rate_gbps},
            )

        log(t, step.index, None, StepState.RECONFIGURING.value, {"ops": len(step.ops)})
        new_links: list[RealizedLink] = []
        for planned in step.adds:
            device = fabric.ocses[planned.ocs_id]
            device.reserve_path(planned.in_port, planned.out_port)
            device.connect(planned.in_port, planned.out_port)
            link = RealizedLink(
                link_id=planned.link_id,
                ab_a=planned.ab_a,
                ab_b=planned.ab_b,
                ocs_id=planned.ocs_id,
                cross_connects=((planned.in_port, planned.out_port),),
                uplinks_a=(planned.uplink_a,),
                uplinks_b=(planned.uplink_b,),
                fiber_m=planned.fiber_m,
                rate_gbps=planned.rate_gbps,
                released=False,
            )
            up_a = fabric.abs[planned.ab_a].uplinks[planned.uplink_a]
            up_a.ocs_port = (planned.ocs_id, "in", planned.in_port)
            up_a.link_id = planned.link_id
            up_b = fabric.abs[planned.ab_b].uplinks[planned.uplink_b]
            up_b.ocs_port = (planned.ocs_id, "out", planned.out_port)
            up_b.link_id = planned.link_id
            fabric.links.append(link)
            by_id[link.link_id] = link
            new_links.append(link)
        if step.ops:
            t += dark_s
        log(
            t,
            step.index,
            None,
            "ocs_reconfigured",
            {"ops": len(step.ops), "dark_time_ms": (dark_s * 1000.0 if step.ops else 0.0)},
        )

        log(t, step.index, None, StepState.QUALIFYING.value, {"links": len(new_links)})
        step_end = t
        any_failed = False
        for link in new_links:
            t_link = t
            released = False
            rounds = 0  # 0 = planned ports, 1 = spare rescue
            while not released:
                attempts = 1 + retry_budget
                for attempt in range(attempts):
                    path = fabric.link_path(link)
                    result = qualify_link(
                        path,
                        seed_prefix + [step.index, link.link_id, rounds, attempt],
                        flake_probability=flake_probability,
                    )
                    t_link += bert_s
                    log(
                        t_link,
                        step.index,
                        link.link_id,
                        "qualify_attempt",
                        {
                            "attempt": attempt,
                            "round": rounds,
                            "audit_pass": result.audit_pass,
                            "bert_pass": result.bert_pass,
                            "estimated_ber": result.estimated_ber,
                            "margin_db": result.margin_db,
                        },
                    )
                    if result.bert_pass:
                        link.released = True
                        released = True
                        log(
                            t_link,
                            step.index,
                            link.link_id,
                            "link_released",
                            {"pair": list(link.pair), "rate_gbps": link.rate_gbps},
                        )
                        break
                if released:
                    break
                log(
                    t_link,
                    step.index,
                    link.link_id,
                    "link_failed",
                    {"round": rounds, "attempts": attempts},
                )
                device = fabric.ocses[link.ocs_id]
                if rounds == 0 and device.spare_pairs_used < device.profile.spare_ports:
                    old = link.cross_connects[0]
                    spare = device.take_spare_pair()
                    device.disconnect(old[0])
                    device.release_path(old[0], old[1])
                    device.reserve_path(spare[0], spare[1])
                    device.connect(spare[0], spare[1])
                    link.cross_connects = (spare,)
                    link.spare_moves += 1
                    t_link += dark_s
                    log(
                        t_link,
                        step.index,
                        link.link_id,
                        "spare_rerealized",
                        {"from": list(old), "to": list(spare)},
                    )
                    rounds += 1
                    continue
                # Permanently failed: free its resources, keep the record.
                link.failed = True
                link.released = False
                fabric._remove_link(link)
                fabric.failed_links.append(link)
                by_id.pop(link.link_id, None)
                any_failed = True
                break
            step_end = max(step_end, t_link)
        t = step_end
        state = StepState.FAILED if any_failed else StepState.RELEASED
        log(
            t,
            step.index,
            None,
            state.value,
            {
                "released": sum(1 for l in new_links if l.released),
                "failed": sum(1 for l in new_links if l.failed),
            },
        )

    fabric.next_link_id = max(
        [fabric.next_link_id] + [l.link_id + 1 for l in fabric.links]
    )
    fabric.striping = StripingMatrix(fabric.recompute_striping_counts())
    fabric.striping.realization = fabric.links

    raw_events.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    # Annotate the running released capacity in replay order.
    released = plan.pre_capacity_gbps
    events: list[Event] = []
    for e in (r[4] for r in raw_events):
        detail = dict(e.detail)
        if e.transition == "link_drained":
            released -= detail["rate_gbps"]
        elif e.transition == "link_released":
            released += detail["rate_gbps"]
        detail["released_gbps"] = released
        events.append(
            Event(e.t_virtual_s, e.step, e.link_id, e.transition, detail)
        )
    return EventLog(events)
