"""Fabric assembly and physical layout.

Holds the aggregation blocks, the switch inventory with zone/rack
placement, the striping realization onto switch ports, and failure-domain
analysis. One realized link is one duplex cross-connect: two switch ports
and two fibers with circulators, or twice that in the duplex-pair baseline
used for comparison.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .device import DeviceProfile, OcsDevice, manufacture
from .links import (
    Incompatible,
    LinkConfig,
    LinkPath,
    ReflectionSource,
    TransceiverGeneration,
    default_generation_table,
    negotiate_interop,
)
from .topology import canonical_striping

__all__ = [
    "Uplink",
    "AggregationBlock",
    "PhysicalLayout",
    "RealizedLink",
    "StripingMatrix",
    "RealizationReport",
    "FabricConfig",
    "Fabric",
    "build_fabric",
    "realize_striping",
    "FailureTarget",
    "FailureImpact",
    "failure_impact",
    "layout_report",
    "FabricError",
    "ConfigInvalid",
    "CapacityExceeded",
    "InsufficientPorts",
]


class FabricError(Exception):
    pass


class ConfigInvalid(FabricError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class CapacityExceeded(FabricError):
    pass


class InsufficientPorts(FabricError):
    pass


@dataclass
class Uplink:
    """One duplex fiber position at the top of an aggregation block."""

    fiber_id: str
    ocs_port: tuple | None = None  # (device_id, side, port) or free
    link_id: int | None = None

    @property
    def in_use(self) -> bool:
        return self.ocs_port is not None


@dataclass
class AggregationBlock:
    ab_id: int
    generation: TransceiverGeneration
    uplinks: list[Uplink]

    @property
    def uplink_count(self) -> int:
        return len(self.uplinks)

    def free_uplink_indices(self) -> list[int]:
        return [k for k, u in enumerate(self.uplinks) if not u.in_use]


@dataclass(frozen=True)
class PhysicalLayout:
    """Floor plan: zones of racks of switches, with A/B power feeds."""

    zones: int = 4
    racks_per_zone: int = 8
    ocs_per_rack: int = 8
    ups_kw: float = 60.0
    feed_kw: float = 30.0
    placement: tuple[tuple[int, int, int], ...] = ()

    @property
    def max_ocs(self) -> int:
        return self.zones * self.racks_per_zone * self.ocs_per_rack

    @classmethod
    def round_robin(cls, count: int, **kw) -> "PhysicalLayout":
        """Place `count` switches cycling zones first, then racks, then slots."""
        proto = cls(**kw)
        if count > proto.max_ocs:
            raise CapacityExceeded(
                f"{count} switches exceed layout capacity {proto.max_ocs}"
            )
        placement = []
        for i in range(count):
            zone = i % proto.zones
            ordinal = i // proto.zones
            rack = ordinal % proto.racks_per_zone
            slot = ordinal // proto.racks_per_zone
            placement.append((zone, rack, slot))
        return cls(**{**kw, "placement": tuple(placement)})

    def zone_of(self, ocs_id: int) -> int:
        return self.placement[ocs_id][0]

    def rack_of(self, ocs_id: int) -> tuple[int, int]:
        z, r, _ = self.placement[ocs_id]
        return (z, r)


@dataclass
class RealizedLink:
    """One logical inter-block link realized on a single switch."""

    link_id: int
    ab_a: int
    ab_b: int
    ocs_id: int
    cross_connects: tuple[tuple[int, int], ...]
    uplinks_a: tuple[int, ...]
    uplinks_b: tuple[int, ...]
    fiber_m: tuple[float, ...]
    rate_gbps: float
    released: bool = True
    failed: bool = False
    spare_moves: int = 0

    @property
    def in_port(self) -> int:
        return self.cross_connects[0][0]

    @property
    def out_port(self) -> int:
        return self.cross_connects[0][1]

    @property
    def ports_used(self) -> int:
        return 2 * len(self.cross_connects)

    @property
    def fibers_used(self) -> int:
        return len(self.fiber_m)

    @property
    def pair(self) -> tuple[int, int]:
        return (min(self.ab_a, self.ab_b), max(self.ab_a, self.ab_b))


@dataclass
class StripingMatrix:
    """Symmetric inter-block link counts plus their physical realization."""

    S: np.ndarray
    realization: list[RealizedLink] = field(default_factory=list)

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=int)
        if self.S.ndim != 2 or self.S.shape[0] != self.S.shape[1]:
            raise ValueError("striping matrix must be square")
        if not np.array_equal(self.S, self.S.T):
            raise ValueError("striping matrix must be symmetric")
        if np.any(np.diagonal(self.S) != 0):
            raise ValueError("striping diagonal must be zero")
        if np.any(self.S < 0):
            raise ValueError("striping entries must be >= 0")

    @property
    def total_links(self) -> int:
        return int(self.S.sum() // 2)

    def row_sums(self) -> np.ndarray:
        return self.S.sum(axis=1)


@dataclass(frozen=True)
class RealizationReport:
    links_realized: int
    ports_used: int
    fibers_used: int
    bidirectional: bool


@dataclass
class FabricConfig:
    n_abs: int
    uplinks_per_ab: int
    ocs_count: int
    ab_generations: Sequence[str]
    seed: int = 0
    device_profile: DeviceProfile = field(default_factory=DeviceProfile)
    generation_table: Mapping[str, TransceiverGeneration] | None = None
    link_config: LinkConfig = field(default_factory=LinkConfig)
    bidirectional: bool = True
    fiber_length_range: tuple[float, float] = (50.0, 500.0)
    uniform_zone_spread: bool = True
    layout_kw: dict = field(default_factory=dict)

    def table(self) -> Mapping[str, TransceiverGeneration]:
        return self.generation_table or default_generation_table()

    def problems(self) -> list[str]:
        out = []
        if self.n_abs < 1:
            out.append("n_abs must be >= 1")
        if self.uplinks_per_ab < 1:
            out.append("uplinks_per_ab must be >= 1")
        layout = PhysicalLayout(**self.layout_kw)
        if not 1 <= self.ocs_count <= layout.max_ocs:
            out.append(f"ocs_count must be in [1, {layout.max_ocs}]")
        table = self.table()
        gens = list(self.ab_generations)
        if len(gens) != self.n_abs:
            out.append(f"ab_generations must list {self.n_abs} entries")
        for name in gens:
            if name not in table:
                out.append(f"unknown generation {name!r}")
        out.extend(self.device_profile.validate())
        lo, hi = self.fiber_length_range
        if not (0 < lo <= hi):
            out.append("fiber_length_range must satisfy 0 < lo <= hi")
        return out


class Fabric:
    """The assembled fabric; mutated only by the scenario event loop."""

    SNAPSHOT_VERSION = 1

    def __init__(
        self,
        config: FabricConfig,
        abs_: list[AggregationBlock],
        ocses: list[OcsDevice],
        layout: PhysicalLayout,
    ):
        self.config = config
        self.abs = abs_
        self.ocses = ocses
        self.layout = layout
        self.links: list[RealizedLink] = []
        self.failed_links: list[RealizedLink] = []
        self.striping = StripingMatrix(np.zeros((len(abs_), len(abs_)), dtype=int))
        self.next_link_id = 0

    # -- bookkeeping -----------------------------------------------------

    @property
    def n_abs(self) -> int:
        return len(self.abs)

    def links_by_id(self) -> dict[int, RealizedLink]:
        return {l.link_id: l for l in self.links}

    def released_links(self) -> list[RealizedLink]:
        return [l for l in self.links if l.released]

    def released_capacity_gbps(self) -> float:
        return float(sum(l.rate_gbps for l in self.links if l.released))

    def pair_rate(self, a: int, b: int) -> float:
        rate = negotiate_interop(self.abs[a].generation, self.abs[b].generation)
        if isinstance(rate, Incompatible):
            raise ConfigInvalid(
                f"blocks {a} and {b} cannot interoperate: {rate.reason}"
            )
        return float(rate)

    def rate_matrix(self) -> np.ndarray:
        n = self.n_abs
        rates = np.zeros((n, n))
        for a in range(n):
            for b in range(n):
                if a != b:
                    rates[a, b] = self.pair_rate(a, b)
        return rates

    def recompute_striping_counts(self) -> np.ndarray:
        n = self.n_abs
        s = np.zeros((n, n), dtype=int)
        for l in self.links:
            a, b = l.pair
            s[a, b] += 1
            s[b, a] += 1
        return s

    def fiber_lengths_for_link(self, link_id: int, n_fibers: int) -> tuple[float, ...]:
        lo, hi = self.config.fiber_length_range
        rng = np.random.default_rng([self.config.seed, 40, link_id])
        return tuple(float(x) for x in rng.uniform(lo, hi, n_fibers))

    def link_path(self, link: RealizedLink) -> LinkPath:
        """Build the optical path of a realized link for budget/qualification."""
        cfg = self.config.link_config
        device = self.ocses[link.ocs_id]
        gen_a = self.abs[link.ab_a].generation
        gen_b = self.abs[link.ab_b].generation
        circ = cfg.circulator
        att = cfg.fiber_atten_db_per_km / 1000.0
        conn = cfg.connector_loss_db
        in_port, out_port = link.cross_connects[0]
        fiber_a, fiber_b = link.fiber_m[0], link.fiber_m[1]
        ocs_il = device.insertion_loss_db(in_port, out_port)
        ocs_rl = max(device.return_loss_db(in_port), device.return_loss_db(out_port))
        p_circ_a = circ.insertion_loss_db
        p_conn_a = p_circ_a + att * fiber_a
        p_ocs = p_conn_a + conn
        p_conn_b = p_ocs + ocs_il
        p_circ_b = p_conn_b + conn + att * fiber_b
        sources = (
            ReflectionSource("circulator_a", p_circ_a, circ.return_loss_db),
            ReflectionSource("circulator_a_leak", p_circ_a, -circ.directivity_db, direct=True),
            ReflectionSource("connector_a", p_conn_a, cfg.connector_return_loss_db),
            ReflectionSource("ocs", p_ocs, ocs_rl),
            ReflectionSource("connector_b", p_conn_b, cfg.connector_return_loss_db),
            ReflectionSource("circulator_b", p_circ_b, circ.return_loss_db),
            ReflectionSource("circulator_b_leak", p_circ_b, -circ.directivity_db, direct=True),
        )
        return LinkPath(
            gen_a=gen_a,
            gen_b=gen_b,
            circulator_a=circ,
            circulator_b=circ,
            connector_losses_db=(conn, conn),
            fiber_a_m=fiber_a,
            fiber_b_m=fiber_b,
            device=device,
            in_port=in_port,
            out_port=out_port,
            reflection_sources=sources,
            config=cfg,
        )

    def clear_realization(self) -> None:
        """Tear down every realized link and free all resources."""
        for link in list(self.links):
            self._remove_link(link)
        self.links = []
        self.striping = StripingMatrix(
            np.zeros((self.n_abs, self.n_abs), dtype=int)
        )

    def _remove_link(self, link: RealizedLink) -> None:
        device = self.ocses[link.ocs_id]
        for (i, o) in link.cross_connects:
            if device.connections.get(i) == o:
                device.disconnect(i)
            device.release_path(i, o)
        for side, idxs in ((link.ab_a, link.uplinks_a), (link.ab_b, link.uplinks_b)):
            for k in idxs:
                self.abs[side].uplinks[k].ocs_port = None
                self.abs[side].uplinks[k].link_id = None
        if link in self.links:
            self.links.remove(link)

    def to_dict(self) -> dict:
        return {
            "version": self.SNAPSHOT_VERSION,
            "n_abs": self.n_abs,
            "abs": [
                {
                    "ab_id": ab.ab_id,
                    "generation": ab.generation.name,
                    "uplink_count": ab.uplink_count,
                    "uplinks_in_use": sum(u.in_use for u in ab.uplinks),
                }
                for ab in self.abs
            ],
            "ocses": [
                {
                    **dev.to_dict(),
                    "zone": self.layout.placement[dev.device_id][0],
                    "rack": self.layout.placement[dev.device_id][1],
                    "slot": self.layout.placement[dev.device_id][2],
                }
                for dev in self.ocses
            ],
            "striping": self.striping.S.tolist(),
            "links": [
                {
                    "link_id": l.link_id,
                    "pair": list(l.pair),
                    "ocs_id": l.ocs_id,
                    "cross_connects": [list(c) for c in l.cross_connects],
                    "rate_gbps": l.rate_gbps,
                    "released": l.released,
                }
                for l in sorted(self.links, key=lambda l: l.link_id)
            ],
            "failed_links": sorted(l.link_id for l in self.failed_links),
        }

    def realization_fingerprint(self) -> str:
        doc = sorted(
            (l.pair[0], l.pair[1], l.ocs_id, list(map(list, l.cross_connects)))
            for l in self.links
        )
        blob = json.dumps(doc, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


class PortAllocator:
    """Deterministic port/uplink allocation with the diversity packing rule.

    Links of one block pair spread across distinct switches first, then
    distinct zones, with ties to the lowest switch id. Operates on its own
    copy of the free-resource state so planners can run it hypothetically.
    """

    def __init__(self, fabric: Fabric, extra_abs: list[AggregationBlock] | None = None):
        self.fabric = fabric
        self.layout = fabric.layout
        self.zone_diversity = fabric.config.uniform_zone_spread
        self.free_in: dict[int, list[int]] = {}
        self.free_out: dict[int, list[int]] = {}
        for dev in fabric.ocses:
            used_in = set(dev.connections) | dev.reserved_in
            used_out = dev._outs_in_use | dev.reserved_out
            regular = dev.regular_ports
            self.free_in[dev.device_id] = [p for p in regular if p not in used_in]
            self.free_out[dev.device_id] = [p for p in regular if p not in used_out]
        all_abs = list(fabric.abs) + list(extra_abs or [])
        self.free_uplinks: dict[int, list[int]] = {
            ab.ab_id: ab.free_uplink_indices() for ab in all_abs
        }
        self.pair_ocs_count: dict[tuple[tuple[int, int], int], int] = {}
        self.pair_zone_count: dict[tuple[tuple[int, int], int], int] = {}
        for l in fabric.links:
            self.pair_ocs_count[(l.pair, l.ocs_id)] = (
                self.pair_ocs_count.get((l.pair, l.ocs_id), 0) + 1
            )
            z = self.layout.zone_of(l.ocs_id)
            self.pair_zone_count[(l.pair, z)] = (
                self.pair_zone_count.get((l.pair, z), 0) + 1
            )

    def release(self, link: RealizedLink) -> None:
        """Return a link's ports and uplinks to the free pool."""
        for (i, o) in link.cross_connects:
            self.free_in[link.ocs_id].append(i)
            self.free_out[link.ocs_id].append(o)
        self.free_in[link.ocs_id].sort()
        self.free_out[link.ocs_id].sort()
        for ab, idxs in ((link.ab_a, link.uplinks_a), (link.ab_b, link.uplinks_b)):
            self.free_uplinks[ab] = sorted(self.free_uplinks[ab] + list(idxs))
        self.pair_ocs_count[(link.pair, link.ocs_id)] -= 1
        z = self.layout.zone_of(link.ocs_id)
        self.pair_zone_count[(link.pair, z)] -= 1

    def place(
        self, a: int, b: int, n_cross_connects: int
    ) -> tuple[int, list[tuple[int, int]], list[int], list[int]] | None:
        """Pick a switch and ports for one (a, b) link; None if impossible."""
        pair = (min(a, b), max(a, b))
        per_side = n_cross_connects  # uplinks consumed per block side
        if len(self.free_uplinks[a]) < per_side or len(self.free_uplinks[b]) < per_side:
            return None
        best = None
        for dev in self.fabric.ocses:
            oid = dev.device_id
            if len(self.free_in[oid]) < n_cross_connects:
                continue
            if len(self.free_out[oid]) < n_cross_connects:
                continue
            on_ocs = self.pair_ocs_count.get((pair, oid), 0)
            in_zone = self.pair_zone_count.get((pair, self.layout.zone_of(oid)), 0)
            key = (on_ocs, in_zone if self.zone_diversity else 0, oid)
            if best is None or key < best[0]:
                best = (key, oid)
        if best is None:
            return None
        oid = best[1]
        ports = []
        for _ in range(n_cross_connects):
            ports.append((self.free_in[oid].pop(0), self.free_out[oid].pop(0)))
        ups_a = [self.free_uplinks[a].pop(0) for _ in range(per_side)]
        ups_b = [self.free_uplinks[b].pop(0) for _ in range(per_side)]
        self.pair_ocs_count[(pair, oid)] = self.pair_ocs_count.get((pair, oid), 0) + 1
        z = self.layout.zone_of(oid)
        self.pair_zone_count[(pair, z)] = self.pair_zone_count.get((pair, z), 0) + 1
        return oid, ports, ups_a, ups_b


def build_fabric(config: FabricConfig) -> Fabric:
    """Manufacture, calibrate, and place the switches, then realize the
    canonical striping for the configured block count.

    Raises:
        ConfigInvalid: the configuration fails static validation.
        CapacityExceeded: the striping needs more ports than the switches have.
    """
    problems = config.problems()
    if problems:
        raise ConfigInvalid(problems)
    table = config.table()
    layout = PhysicalLayout.round_robin(config.ocs_count, **config.layout_kw)
    ocses = []
    for i in range(config.ocs_count):
        dev = manufacture(
            [config.seed, i, 0],
            profile=config.device_profile,
            device_id=i,
        )
        dev.calibrate([config.seed, i, 1])
        ocses.append(dev)
    abs_ = [
        AggregationBlock(
            ab_id=a,
            generation=table[config.ab_generations[a]],
            uplinks=[
                Uplink(fiber_id=f"ab{a}-up{k}") for k in range(config.uplinks_per_ab)
            ],
        )
        for a in range(config.n_abs)
    ]
    fabric = Fabric(config, abs_, ocses, layout)
    if config.n_abs >= 2:
        striping = StripingMatrix(
            canonical_striping(config.n_abs, config.uplinks_per_ab)
        )
        try:
            realize_striping(fabric, striping)
        except InsufficientPorts as exc:
            raise CapacityExceeded(str(exc)) from exc
    return fabric


def realize_striping(
    fabric: Fabric, striping: StripingMatrix | np.ndarray, bidirectional: bool | None = None
) -> RealizationReport:
    """Realize a striping: every logical link becomes switch cross-connects.

    With circulators (bidirectional mode) one link costs one cross-connect,
    two ports, and two fibers; the duplex-pair baseline costs double on all
    three counts.

    Raises:
        InsufficientPorts: uplinks or switch ports cannot cover the striping.
    """
    if bidirectional is None:
        bidirectional = fabric.config.bidirectional
    if not isinstance(striping, StripingMatrix):
        striping = StripingMatrix(np.asarray(striping))
    if fabric.links:
        raise FabricError("fabric already realized; clear_realization() first")
    n = fabric.n_abs
    if striping.S.shape != (n, n):
        raise ValueError(f"striping shape {striping.S.shape} != fabric {n} blocks")
    n_cc = 1 if bidirectional else 2
    row = striping.row_sums()
    for a in range(n):
        if row[a] * n_cc > fabric.abs[a].uplink_count:
            raise InsufficientPorts(
                f"block {a} needs {row[a] * n_cc} uplinks, has "
                f"{fabric.abs[a].uplink_count}"
            )

    allocator = PortAllocator(fabric)
    links: list[RealizedLink] = []
    for a in range(n):
        for b in range(a + 1, n):
            rate = fabric.pair_rate(a, b)
            for _ in range(int(striping.S[a, b])):
                placed = allocator.place(a, b, n_cc)
                if placed is None:
                    for l in links:
                        fabric._remove_link(l)
                    raise InsufficientPorts(
                        f"no switch has {n_cc} free port pair(s) for blocks "
                        f"({a}, {b})"
                    )
                oid, ports, ups_a, ups_b = placed
                link_id = fabric.next_link_id
                fabric.next_link_id += 1
                fibers = fabric.fiber_lengths_for_link(link_id, 2 * n_cc)
                device = fabric.ocses[oid]
                if bidirectional:
                    cross = (ports[0],)
                else:
                    # Duplex pair: a tx/rx fiber pair per side, two paths.
                    (i1, o1), (i2, o2) = ports
                    cross = ((i1, o2), (i2, o1))
                for (i, o) in cross:
                    device.reserve_path(i, o)
                    device.connect(i, o)
                link = RealizedLink(
                    link_id=link_id,
                    ab_a=a,
                    ab_b=b,
                    ocs_id=oid,
                    cross_connects=cross,
                    uplinks_a=tuple(ups_a),
                    uplinks_b=tuple(ups_b),
                    fiber_m=fibers,
                    rate_gbps=rate,
                )
                if bidirectional:
                    up_ports_a = [("in", ports[0][0])]
                    up_ports_b = [("out", ports[0][1])]
                else:
                    # tx fiber into an in port, rx fiber from an out port.
                    up_ports_a = [("in", ports[0][0]), ("out", ports[0][1])]
                    up_ports_b = [("in", ports[1][0]), ("out", ports[1][1])]
                for side, idxs, up_ports in (
                    (a, ups_a, up_ports_a),
                    (b, ups_b, up_ports_b),
                ):
                    for up_idx, (port_side, port) in zip(idxs, up_ports):
                        up = fabric.abs[side].uplinks[up_idx]
                        up.ocs_port = (oid, port_side, port)
                        up.link_id = link_id
                links.append(link)
                fabric.links.append(link)
    striping.realization = fabric.links
    fabric.striping = striping
    return RealizationReport(
        links_realized=len(links),
        ports_used=sum(l.ports_used for l in links),
        fibers_used=sum(l.fibers_used for l in links),
        bidirectional=bidirectional,
    )


@dataclass(frozen=True)
class FailureTarget:
    kind: str  # zone | rack | ocs | power_feed
    zone: int | None = None
    rack: int | None = None
    ocs_id: int | None = None
    feed: str | None = None

    @classmethod
    def from_string(cls, text: str) -> "FailureTarget":
        kind, _, rest = text.partition(":")
        if kind == "zone":
            return cls("zone", zone=int(rest))
        if kind == "rack":
            z, _, r = rest.partition("/")
            return cls("rack", zone=int(z), rack=int(r))
        if kind == "ocs":
            return cls("ocs", ocs_id=int(rest))
        if kind == "power_feed":
            if rest not in ("A", "B"):
                raise ValueError(f"power feed must be A or B, got {rest!r}")
            return cls("power_feed", feed=rest)
        raise ValueError(f"unknown failure target {text!r}")


@dataclass(frozen=True)
class FailureImpact:
    target: FailureTarget
    capacity_lost_fraction: float
    affected_ab_pairs: tuple[tuple[int, int], ...]
    links_lost: int
    links_total: int


def failure_impact(fabric: Fabric, target: FailureTarget | str) -> FailureImpact:
    """Fraction of realized links lost to a physical failure.

    A single power-feed failure loses nothing while the redundant feed is
    healthy, since every switch draws from both feeds.
    """
    if isinstance(target, str):
        target = FailureTarget.from_string(target)
    released = fabric.released_links()
    total = len(released)

    def ocs_failed(ocs_id: int) -> bool:
        z, r, _ = fabric.layout.placement[ocs_id]
        if target.kind == "zone":
            return z == target.zone
        if target.kind == "rack":
            return (z, r) == (target.zone, target.rack)
        if target.kind == "ocs":
            return ocs_id == target.ocs_id
        if target.kind == "power_feed":
            return False  # redundant feed keeps every switch powered
        raise ValueError(f"unknown failure kind {target.kind!r}")

    lost = [l for l in released if ocs_failed(l.ocs_id)]
    pairs = tuple(sorted({l.pair for l in lost}))
    fraction = len(lost) / total if total else 0.0
    return FailureImpact(
        target=target,
        capacity_lost_fraction=fraction,
        affected_ab_pairs=pairs,
        links_lost=len(lost),
        links_total=total,
    )


def layout_report(fabric: Fabric) -> dict:
    """Zone/rack occupancy, fiber length samples, and power versus budget."""
    if not fabric.ocses:
        return {}
    layout = fabric.layout
    zones = []
    for z in range(layout.zones):
        ids = [d.device_id for d in fabric.ocses if layout.zone_of(d.device_id) == z]
        racks: dict[int, int] = {}
        for oid in ids:
            _, r, _ = layout.placement[oid]
            racks[r] = racks.get(r, 0) + 1
        power = sum(fabric.ocses[oid].power_draw_w() for oid in ids)
        zones.append(
            {
                "zone": z,
                "ocs_count": len(ids),
                "racks": {str(k): v for k, v in sorted(racks.items())},
                "power_w": power,
                "feed_budget_w": layout.feed_kw * 1000.0,
                "within_feed_budget": power <= layout.feed_kw * 1000.0,
            }
        )
    lengths = [m for l in fabric.links for m in l.fiber_m]
    total_power = sum(z["power_w"] for z in zones)
    return {
        "zones": zones,
        "total_power_w": total_power,
        "ups_budget_w": layout.ups_kw * 1000.0,
        "within_ups_budget": total_power <= layout.ups_kw * 1000.0,
        "fiber_lengths_m": {
            "count": len(lengths),
            "min": min(lengths) if lengths else None,
            "max": max(lengths) if lengths else None,
            "mean": float(np.mean(lengths)) if lengths else None,
        },
    }
