"""Bidirectional optical links through a circuit switch.

Models transceiver generations and their interop negotiation, three-port
circulators, end-to-end link budgets, multi-path interference from
aggregated reflections, and link qualification (cable audit followed by a
bit-error-rate test).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import erfcinv

__all__ = [
    "CWDM4_GRID_NM",
    "FIBER_DELAY_NS_PER_M",
    "FREESPACE_DELAY_NS_PER_M",
    "TransceiverGeneration",
    "default_generation_table",
    "generation_table_problems",
    "Incompatible",
    "negotiate_interop",
    "Circulator",
    "circulate",
    "LinkConfig",
    "ReflectionSource",
    "LinkPath",
    "compose_link",
    "propagation_delay_ns",
    "aggregate_reflections",
    "mpi_penalty_db",
    "mpi_penalty_oracle_db",
    "link_budget_db",
    "QualificationResult",
    "qualify_link",
    "q_at_ber",
    "ber_at_q",
    "ber_from_margin",
    "LinkError",
    "InvalidPort",
    "ResourceBusy",
    "OverloadViolation",
    "PenaltyUnbounded",
]

# O-band coarse WDM grid shared by every generation; interop requires it.
CWDM4_GRID_NM = (1271.0, 1291.0, 1311.0, 1331.0)

# Speed-of-light propagation delay constants.
FIBER_DELAY_NS_PER_M = 5.0
FREESPACE_DELAY_NS_PER_M = 3.3


class LinkError(Exception):
    """Base class for link-level failures."""


class InvalidPort(LinkError):
    pass


class ResourceBusy(LinkError):
    pass


class OverloadViolation(LinkError):
    pass


class PenaltyUnbounded(LinkError):
    pass


@dataclass(frozen=True)
class TransceiverGeneration:
    """Optical/electrical envelope of one transceiver generation.

    `tx_power_dbm` and `rx_sensitivity_dbm` are keyed by total line rate in
    Gb/s: a generation that interops with older ones carries an entry for
    each rate it can fall back to, and its receiver window at a shared rate
    must contain the older generation's window.
    """

    name: str
    per_lane_gbps: float
    lanes: int
    modulation: str  # "NRZ" | "PAM4"
    grid_nm: tuple[float, ...]
    tx_power_dbm: Mapping[int, tuple[float, float]]
    rx_sensitivity_dbm: Mapping[int, float]
    rx_overload_dbm: float
    extinction_ratio_db: float
    fec_ber_threshold: float
    supported_rates: tuple[int, ...]
    latency_ns: float

    @property
    def native_rate_gbps(self) -> int:
        return max(self.supported_rates)

    def tx_window(self, rate: int) -> tuple[float, float]:
        return self.tx_power_dbm[rate]

    def sensitivity(self, rate: int) -> float:
        return self.rx_sensitivity_dbm[rate]

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TransceiverGeneration":
        return cls(
            name=doc["name"],
            per_lane_gbps=float(doc["per_lane_gbps"]),
            lanes=int(doc.get("lanes", 4)),
            modulation=doc["modulation"],
            grid_nm=tuple(doc.get("grid_nm", CWDM4_GRID_NM)),
            tx_power_dbm={
                int(r): (float(lo), float(hi))
                for r, (lo, hi) in doc["tx_power_dbm"].items()
            },
            rx_sensitivity_dbm={
                int(r): float(v) for r, v in doc["rx_sensitivity_dbm"].items()
            },
            rx_overload_dbm=float(doc["rx_overload_dbm"]),
            extinction_ratio_db=float(doc["extinction_ratio_db"]),
            fec_ber_threshold=float(doc["fec_ber_threshold"]),
            supported_rates=tuple(int(r) for r in doc["supported_rates"]),
            latency_ns=float(doc.get("latency_ns", 0.0)),
        )


def default_generation_table() -> dict[str, TransceiverGeneration]:
    """Four interoperable generations: 40/100 NRZ, 200/400 PAM4 with FEC.

    The dBm figures are working defaults, not vendor data; scenario configs
    may override any of them. Each generation's receiver window at a shared
    rate strictly contains the previous generation's window, and every
    generation keeps the CWDM4 grid.
    """

    def gen(name, lane, mod, rates, tx, sens, overload, er, fec, lat):
        return TransceiverGeneration(
            name=name,
            per_lane_gbps=lane,
            lanes=4,
            modulation=mod,
            grid_nm=CWDM4_GRID_NM,
            tx_power_dbm=tx,
            rx_sensitivity_dbm=sens,
            rx_overload_dbm=overload,
            extinction_ratio_db=er,
            fec_ber_threshold=fec,
            supported_rates=rates,
            latency_ns=lat,
        )

    table = {
        "40GbE": gen(
            "40GbE", 10, "NRZ", (40,),
            {40: (-2.0, 3.0)}, {40: -14.0}, 4.0, 6.0, 1e-12, 20.0,
        ),
        "100GbE": gen(
            "100GbE", 25, "NRZ", (40, 100),
            {40: (-2.0, 3.0), 100: (-1.5, 3.5)},
            {40: -14.5, 100: -12.0}, 4.5, 5.0, 1e-12, 25.0,
        ),
        "200GbE": gen(
            "200GbE", 50, "PAM4", (40, 100, 200),
            {40: (-2.0, 3.0), 100: (-1.5, 3.5), 200: (-1.0, 4.0)},
            {40: -15.0, 100: -12.5, 200: -9.0}, 5.0, 4.5, 2e-4, 60.0,
        ),
        "400GbE": gen(
            "400GbE", 100, "PAM4", (40, 100, 200, 400),
            {40: (-2.0, 3.0), 100: (-1.5, 3.5), 200: (-1.0, 4.0), 400: (-0.5, 4.5)},
            {40: -15.5, 100: -13.0, 200: -9.5, 400: -7.0}, 5.5, 4.0, 2e-4, 80.0,
        ),
    }
    return table


def generation_table_problems(table: Mapping[str, TransceiverGeneration]) -> list[str]:
    """Static interop checks across a generation table.

    Returns human-readable problems: grid mismatches, missing rate entries,
    and receiver windows that fail to contain an older generation's window.
    """
    problems = []
    gens = list(table.values())
    for g in gens:
        for r in g.supported_rates:
            if r not in g.tx_power_dbm:
                problems.append(f"{g.name}: no tx_power_dbm entry for rate {r}")
            if r not in g.rx_sensitivity_dbm:
                problems.append(f"{g.name}: no rx_sensitivity_dbm entry for rate {r}")
        if g.modulation not in ("NRZ", "PAM4"):
            problems.append(f"{g.name}: unknown modulation {g.modulation!r}")
    for a in gens:
        for b in gens:
            if a.name >= b.name:
                continue
            if a.grid_nm != b.grid_nm:
                problems.append(f"{a.name}/{b.name}: wavelength grids differ")
                continue
            common = set(a.supported_rates) & set(b.supported_rates)
            for r in common:
                if r not in a.rx_sensitivity_dbm or r not in b.rx_sensitivity_dbm:
                    continue
                newer, older = (a, b) if a.native_rate_gbps >= b.native_rate_gbps else (b, a)
                if newer.sensitivity(r) > older.sensitivity(r) + 1e-12:
                    problems.append(
                        f"{newer.name}: sensitivity at {r}G does not cover {older.name}"
                    )
                if newer.rx_overload_dbm < older.rx_overload_dbm - 1e-12:
                    problems.append(
                        f"{newer.name}: overload below {older.name}'s window"
                    )
    return problems


@dataclass(frozen=True)
class Incompatible:
    """Negotiation outcome when two generations cannot interoperate."""

    reason: str

    def __bool__(self) -> bool:
        return False


def negotiate_interop(
    gen_a: TransceiverGeneration, gen_b: TransceiverGeneration
) -> int | Incompatible:
    """Negotiate the link rate between two transceiver generations.

    Both ends must share the wavelength grid; the rate is the highest rate
    both support, which is the older generation's native rate when the
    generations differ. The newer receiver's dynamic-range window must
    contain the older one's at the chosen rate.
    """
    if tuple(gen_a.grid_nm) != tuple(gen_b.grid_nm):
        return Incompatible(
            f"wavelength grid mismatch: {gen_a.name} vs {gen_b.name}"
        )
    common = set(gen_a.supported_rates) & set(gen_b.supported_rates)
    if not common:
        return Incompatible(f"no common rate: {gen_a.name} vs {gen_b.name}")
    rate = max(common)
    newer, older = (
        (gen_a, gen_b)
        if gen_a.native_rate_gbps >= gen_b.native_rate_gbps
        else (gen_b, gen_a)
    )
    if newer is not older:
        if newer.sensitivity(rate) > older.sensitivity(rate) + 1e-12 or (
            newer.rx_overload_dbm < older.rx_overload_dbm - 1e-12
        ):
            return Incompatible(
                f"receiver window of {newer.name} does not cover {older.name} at {rate}G"
            )
    return rate


def rate_protocol(
    rate: int, gen_a: TransceiverGeneration, gen_b: TransceiverGeneration
) -> TransceiverGeneration:
    """Generation whose native protocol runs at the negotiated rate."""
    for g in (gen_a, gen_b):
        if g.native_rate_gbps == rate:
            return g
    # Fallback: lower-native generation defines the wire protocol.
    return min((gen_a, gen_b), key=lambda g: g.native_rate_gbps)


@dataclass(frozen=True)
class Circulator:
    """Three-port non-reciprocal device with cyclic 1->2, 2->3, 3->1 flow.

    Directivity suppresses the port-1-to-3 leakage; the stray light behaves
    like one more reflection in the link.
    """

    insertion_loss_db: float = 0.8
    directivity_db: float = 50.0
    return_loss_db: float = -50.0

    def __post_init__(self):
        if self.insertion_loss_db <= 0:
            raise ValueError("circulator insertion loss must be > 0 dB")
        if self.directivity_db <= 0:
            raise ValueError("circulator directivity must be > 0 dB")
        if self.return_loss_db >= 0:
            raise ValueError("circulator return loss must be < 0 dB")

    def circulate(self, port: int) -> int:
        if port not in (1, 2, 3):
            raise InvalidPort(f"circulator has ports 1..3, got {port}")
        return {1: 2, 2: 3, 3: 1}[port]


def circulate(circ: Circulator, port: int) -> int:
    return circ.circulate(port)


@dataclass(frozen=True)
class LinkConfig:
    """Shared plant defaults for composing links."""

    circulator: Circulator = field(default_factory=Circulator)
    connector_loss_db: float = 0.25
    connector_return_loss_db: float = -55.0
    fiber_atten_db_per_km: float = 0.35
    max_fiber_m: float = 1000.0
    flake_probability: float = 0.0
    bert_duration_s: float = 60.0

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LinkConfig":
        circ = Circulator(
            insertion_loss_db=float(doc.get("circulator_insertion_loss_db", 0.8)),
            directivity_db=float(doc.get("circulator_directivity_db", 50.0)),
            return_loss_db=float(doc.get("circulator_return_loss_db", -50.0)),
        )
        return cls(
            circulator=circ,
            connector_loss_db=float(doc.get("connector_loss_db", 0.25)),
            connector_return_loss_db=float(doc.get("connector_return_loss_db", -55.0)),
            fiber_atten_db_per_km=float(doc.get("fiber_atten_db_per_km", 0.35)),
            max_fiber_m=float(doc.get("max_fiber_m", 1000.0)),
            flake_probability=float(doc.get("flake_probability", 0.0)),
            bert_duration_s=float(doc.get("bert_duration_s", 60.0)),
        )


@dataclass(frozen=True)
class ReflectionSource:
    """One reflection along the path.

    `position_db` is the one-way insertion loss from the A-end transmitter
    to the reflection point; it sets the round-trip transmittance between
    source pairs. Sources flagged `direct` (circulator directivity leakage)
    superpose on the signal without needing a partner reflection.
    """

    label: str
    position_db: float
    return_loss_db: float
    direct: bool = False


@dataclass
class LinkPath:
    """An end-to-end bidirectional path: transceiver, circulator, fiber,
    one switch traversal, fiber, circulator, transceiver."""

    gen_a: TransceiverGeneration
    gen_b: TransceiverGeneration
    circulator_a: Circulator
    circulator_b: Circulator
    connector_losses_db: tuple[float, ...]
    fiber_a_m: float
    fiber_b_m: float
    device: object  # OcsDevice
    in_port: int
    out_port: int
    reflection_sources: tuple[ReflectionSource, ...]
    config: LinkConfig
    freespace_m: float = 0.0
    uplink_a: object | None = None
    uplink_b: object | None = None

    @property
    def total_fiber_m(self) -> float:
        return self.fiber_a_m + self.fiber_b_m

    def ocs_insertion_loss_db(self) -> float:
        return self.device.insertion_loss_db(self.in_port, self.out_port)

    def total_insertion_loss_db(self) -> float:
        att = self.config.fiber_atten_db_per_km / 1000.0
        return (
            self.circulator_a.insertion_loss_db
            + self.circulator_b.insertion_loss_db
            + sum(self.connector_losses_db)
            + att * self.total_fiber_m
            + self.ocs_insertion_loss_db()
        )

    def is_physically_complete(self) -> bool:
        return self.device is not None and (
            self.device.connections.get(self.in_port) == self.out_port
        )


def compose_link(
    device,
    in_port: int,
    out_port: int,
    gen_a: TransceiverGeneration,
    gen_b: TransceiverGeneration,
    *,
    fiber_a_m: float = 200.0,
    fiber_b_m: float = 200.0,
    config: LinkConfig | None = None,
    uplink_a=None,
    uplink_b=None,
    extra_connectors: int = 0,
) -> LinkPath:
    """Compose a bidirectional link over one switch traversal.

    Reserves the two uplink fibers and the switch port pair, then builds the
    path with its reflection inventory: both circulators (return loss plus
    directivity leakage), the connector mates, and the switch itself.

    Raises:
        ResourceBusy: an uplink or switch port is already taken.
        ValueError: total fiber length exceeds the configured maximum.
    """
    config = config or LinkConfig()
    if fiber_a_m + fiber_b_m > config.max_fiber_m:
        raise ValueError(
            f"total fiber {fiber_a_m + fiber_b_m} m exceeds {config.max_fiber_m} m"
        )
    for up, side in ((uplink_a, "A"), (uplink_b, "B")):
        if up is not None and getattr(up, "ocs_port", None) is not None:
            raise ResourceBusy(f"uplink on side {side} already assigned")

    device.reserve_path(in_port, out_port)
    if uplink_a is not None:
        uplink_a.ocs_port = (device.device_id, "in", in_port)
    if uplink_b is not None:
        uplink_b.ocs_port = (device.device_id, "out", out_port)

    circ = config.circulator
    att = config.fiber_atten_db_per_km / 1000.0
    conn = config.connector_loss_db
    connectors = tuple([conn, conn] + [conn] * extra_connectors)

    ocs_il = device.insertion_loss_db(in_port, out_port)
    ocs_rl = max(device.return_loss_db(in_port), device.return_loss_db(out_port))

    # One-way loss positions along the A->B direction.
    p_circ_a = circ.insertion_loss_db
    p_conn_a = p_circ_a + att * fiber_a_m
    p_ocs = p_conn_a + conn
    p_conn_b = p_ocs + ocs_il
    p_circ_b = p_conn_b + conn + att * fiber_b_m
    sources = [
        ReflectionSource("circulator_a", p_circ_a, circ.return_loss_db),
        ReflectionSource("circulator_a_leak", p_circ_a, -circ.directivity_db, direct=True),
        ReflectionSource("connector_a", p_conn_a, config.connector_return_loss_db),
        ReflectionSource("ocs", p_ocs, ocs_rl),
        ReflectionSource("connector_b", p_conn_b, config.connector_return_loss_db),
        ReflectionSource("circulator_b", p_circ_b, circ.return_loss_db),
        ReflectionSource("circulator_b_leak", p_circ_b, -circ.directivity_db, direct=True),
    ]
    for k in range(extra_connectors):
        pos = p_conn_a if k % 2 == 0 else p_conn_b
        sources.append(
            ReflectionSource(f"patch_{k}", pos, config.connector_return_loss_db)
        )

    return LinkPath(
        gen_a=gen_a,
        gen_b=gen_b,
        circulator_a=circ,
        circulator_b=circ,
        connector_losses_db=connectors,
        fiber_a_m=fiber_a_m,
        fiber_b_m=fiber_b_m,
        device=device,
        in_port=in_port,
        out_port=out_port,
        reflection_sources=tuple(sources),
        config=config,
        uplink_a=uplink_a,
        uplink_b=uplink_b,
    )


def propagation_delay_ns(path: LinkPath) -> float:
    """One-way propagation delay plus both transceivers' latency."""
    return (
        FIBER_DELAY_NS_PER_M * path.total_fiber_m
        + FREESPACE_DELAY_NS_PER_M * path.freespace_m
        + path.gen_a.latency_ns
        + path.gen_b.latency_ns
    )


def aggregate_reflections(path: LinkPath) -> float:
    """Aggregate the path's reflections into one interferer power ratio.

    Every unordered pair of reflection points contributes
    R_i * R_j * T_ij, where R = 10^(RL/10) and T_ij is the round-trip
    transmittance of the span between them. Directivity-leakage entries
    superpose directly and contribute their power ratio as-is.
    """
    pair_sources = [s for s in path.reflection_sources if not s.direct]
    eps = 0.0
    for i in range(len(pair_sources)):
        si = pair_sources[i]
        ri = 10.0 ** (si.return_loss_db / 10.0)
        for j in range(i + 1, len(pair_sources)):
            sj = pair_sources[j]
            rj = 10.0 ** (sj.return_loss_db / 10.0)
            t_round = 10.0 ** (-2.0 * abs(sj.position_db - si.position_db) / 10.0)
            eps += ri * rj * t_round
    for s in path.reflection_sources:
        if s.direct:
            eps += 10.0 ** (s.return_loss_db / 10.0)
    return eps


_EYE_FACTOR = {"NRZ": 1.0, "PAM4": 3.0}


def mpi_penalty_db(
    epsilon: float, modulation: str, extinction_ratio_db: float | None = None
) -> float:
    """Worst-eye closure penalty from multi-path interference.

    The aggregated reflections beat against the signal with amplitude
    2*sqrt(epsilon) relative to the outer rail. PAM4's inner eye spans a
    third of the outer amplitude, so the same beat closes it three times
    faster. `extinction_ratio_db` is carried for interface completeness;
    the outer-rail-referenced closure does not depend on it.

    Raises:
        PenaltyUnbounded: the worst-case beat fully closes the eye.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    m = _EYE_FACTOR[modulation]
    closure = 2.0 * m * math.sqrt(epsilon)
    if closure >= 1.0:
        raise PenaltyUnbounded(
            f"eye closure {closure:.3f} >= 1 at epsilon={epsilon:g} ({modulation})"
        )
    return -10.0 * math.log10(1.0 - closure)


def mpi_penalty_oracle_db(
    epsilon: float,
    modulation: str,
    samples: int = 1_000_000,
    seed: int = 0,
) -> float:
    """Monte Carlo reference for the interference penalty.

    Samples the interferer phase uniformly, computes the worst-eye closure
    per sample, and reports the 99.9th-percentile penalty in dB.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    m = _EYE_FACTOR[modulation]
    amplitude = 2.0 * m * math.sqrt(epsilon)
    if amplitude >= 1.0:
        raise PenaltyUnbounded(
            f"eye closure {amplitude:.3f} >= 1 at epsilon={epsilon:g} ({modulation})"
        )
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, samples)
    closure = amplitude * np.abs(np.cos(phases))
    penalties = -10.0 * np.log10(1.0 - closure)
    return float(np.quantile(penalties, 0.999))


def link_budget_db(path: LinkPath, rate: int, direction: str = "a_to_b") -> float:
    """Optical margin of one direction at the negotiated rate.

    margin = min tx power - path insertion losses - interference penalty
    - receiver sensitivity. Also enforces that maximum tx power through the
    same losses stays below the receiver overload.

    Raises:
        OverloadViolation: the strongest transmitter would overload the rx.
    """
    if direction == "a_to_b":
        tx, rx = path.gen_a, path.gen_b
    elif direction == "b_to_a":
        tx, rx = path.gen_b, path.gen_a
    else:
        raise ValueError(f"unknown direction {direction!r}")
    tx_min, tx_max = tx.tx_window(rate)
    losses = path.total_insertion_loss_db()
    if tx_max - losses > rx.rx_overload_dbm + 1e-9:
        raise OverloadViolation(
            f"received max {tx_max - losses:.2f} dBm exceeds overload "
            f"{rx.rx_overload_dbm:.2f} dBm"
        )
    protocol = rate_protocol(rate, path.gen_a, path.gen_b)
    eps = aggregate_reflections(path)
    penalty = mpi_penalty_db(eps, protocol.modulation, protocol.extinction_ratio_db)
    return tx_min - losses - penalty - rx.sensitivity(rate)


def q_at_ber(ber: float) -> float:
    """Gaussian Q factor at which the tail probability equals `ber`."""
    return math.sqrt(2.0) * float(erfcinv(2.0 * ber))

def ber_at_q(q: float) -> float:
    return 0.5 * math.erfc(q / math.sqrt(2.0))


def ber_from_margin(margin_db: float, fec_ber_threshold: float) -> float:
    """Map optical margin to estimated pre-FEC BER.

    The Q factor scales with the received amplitude, Q = Q_thr *
    10^(margin/20), anchored so that zero margin sits exactly at the FEC
    threshold.
    """
    q_thr = q_at_ber(fec_ber_threshold)
    return ber_at_q(q_thr * 10.0 ** (margin_db / 20.0))


@dataclass(frozen=True)
class QualificationResult:
    """Cable-audit and BERT outcome for one link.

    The BERT only runs after a passing audit, so bert_pass implies
    audit_pass on every result.
    """

    audit_pass: bool
    bert_pass: bool
    estimated_ber: float | None = None
    margin_db: float | None = None

    def __post_init__(self):
        if self.bert_pass and not self.audit_pass:
            raise ValueError("BERT cannot pass without a passing audit")


def qualify_link(
    path: LinkPath,
    seed,
    rate: int | None = None,
    flake_probability: float | None = None,
) -> QualificationResult:
    """Qualify a link: cable audit, then BERT against the FEC threshold.

    The audit passes when the path is physically complete end to end (the
    switch cross-connect is in place). The BERT passes when the estimated
    pre-FEC BER sits at or below the protocol's FEC threshold; a
    configurable flake probability injects spurious failures so retry
    handling can be exercised.
    """
    if flake_probability is None:
        flake_probability = path.config.flake_probability
    negotiated = rate if rate is not None else negotiate_interop(path.gen_a, path.gen_b)
    if isinstance(negotiated, Incompatible) or not path.is_physically_complete():
        return QualificationResult(audit_pass=False, bert_pass=False)
    try:
        margin = min(
            link_budget_db(path, negotiated, "a_to_b"),
            link_budget_db(path, negotiated, "b_to_a"),
        )
    except (OverloadViolation, PenaltyUnbounded):
        return QualificationResult(audit_pass=True, bert_pass=False)
    protocol = rate_protocol(negotiated, path.gen_a, path.gen_b)
    ber = ber_from_margin(margin, protocol.fec_ber_threshold)
    flaked = bool(np.random.default_rng(seed).random() < flake_probability)
    passed = ber <= protocol.fec_ber_threshold and not flaked
    return QualificationResult(
        audit_pass=True,
        bert_pass=passed,
        estimated_ber=ber,
        margin_db=margin,
    )
