"""MEMS optical circuit switch model.

Covers the full device lifecycle: manufacturing yield and mirror
down-select, per-path calibration, bijective duplex cross-connects, loss
queries, field-replaceable units, power draw, and switching timing.

All randomness flows through explicitly seeded numpy generators, so a given
(seed, operation sequence) reproduces the device state and every sampled
value bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DeviceProfile",
    "Mirror",
    "MirrorDie",
    "CalEntry",
    "CalibrationTable",
    "HvBoard",
    "OcsChassisState",
    "ReconfigReceipt",
    "SwapReport",
    "OcsDevice",
    "manufacture",
    "OcsError",
    "ManufacturingFailure",
    "PortOutOfRange",
    "PortBusy",
    "NotConnected",
    "InvalidPermutation",
    "NotCalibrated",
    "UnknownPath",
    "RedundancyViolated",
]


class OcsError(Exception):
    """Base class for switch-level failures."""


class ManufacturingFailure(OcsError):
    """A mirror die yielded fewer healthy mirrors than the port count needs."""

    def __init__(self, die_index: int, healthy_count: int, required: int):
        super().__init__(
            f"die {die_index}: {healthy_count} healthy mirrors, "
            f"need {required} for down-select"
        )
        self.die_index = die_index
        self.healthy_count = healthy_count
        self.required = required


class PortOutOfRange(OcsError):
    def __init__(self, port: int, radix: int):
        super().__init__(f"port {port} outside 1..{radix}")
        self.port = port


class PortBusy(OcsError):
    def __init__(self, port: int, side: str):
        super().__init__(f"{side} port {port} already connected")
        self.port = port
        self.side = side


class NotConnected(OcsError):
    def __init__(self, port: int):
        super().__init__(f"in port {port} has no connection")
        self.port = port


class InvalidPermutation(OcsError):
    pass


class NotCalibrated(OcsError):
    pass


class UnknownPath(OcsError):
    def __init__(self, in_port: int, out_port: int):
        super().__init__(f"no calibration entry for ({in_port}, {out_port})")
        self.in_port = in_port
        self.out_port = out_port


class RedundancyViolated(OcsError):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    """Configurable envelope of one switch model.

    The defaults describe the production profile: a 136x136 duplex-port
    switch built from two 176-mirror dies, worst-case insertion loss 2 dB,
    return-loss spec -38 dB, 108 W power ceiling, and 10 ms switching time.
    """

    radix: int = 136
    spare_ports: int = 8
    mirrors_per_die: int = 176
    il_mean_db: float = 1.4
    il_sigma_db: float = 0.2
    il_min_db: float = 0.5
    il_max_db: float = 2.0
    rl_mean_db: float = -46.0
    rl_sigma_db: float = 2.0
    rl_spec_db: float = -38.0
    switch_time_ms: float = 10.0
    mirror_yield: float = 0.98
    coupling_low: float = 0.9
    coupling_high: float = 1.0
    hv_boards: int = 8
    base_power_w: float = 94.0
    per_connection_w: float = 0.1
    max_power_w: float = 108.0

    def validate(self) -> list[str]:
        problems = []
        if self.radix < 1:
            problems.append("radix must be >= 1")
        if not 0 <= self.spare_ports < self.radix:
            problems.append("spare_ports must be in [0, radix)")
        if self.mirrors_per_die < self.radix:
            problems.append("mirrors_per_die must be >= radix")
        if not 0.0 <= self.mirror_yield <= 1.0:
            problems.append("mirror_yield must be in [0, 1]")
        if self.il_min_db > self.il_max_db:
            problems.append("il_min_db must be <= il_max_db")
        if self.rl_mean_db > self.rl_spec_db:
            problems.append("rl_mean_db must be <= rl_spec_db")
        if self.switch_time_ms < 0:
            problems.append("switch_time_ms must be >= 0")
        if self.hv_boards < 1:
            problems.append("hv_boards must be >= 1")
        return problems

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DeviceProfile":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Mirror:
    """One steerable mirror: health, coupling quality, four voltage inputs.

    Only two of the four inputs are driven in operation; all four slots are
    modeled because the calibration entry carries the driven pair for both
    mirrors of a path.
    """

    healthy: bool
    coupling_score: float
    axes: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)


@dataclass
class MirrorDie:
    """A full mirror array die before down-select."""

    mirrors: list[Mirror]

    @classmethod
    def sample(cls, rng: np.random.Generator, profile: DeviceProfile) -> "MirrorDie":
        n = profile.mirrors_per_die
        healthy = rng.random(n) < profile.mirror_yield
        scores = rng.uniform(profile.coupling_low, profile.coupling_high, n)
        scores[~healthy] = 0.0
        return cls([Mirror(bool(h), float(s)) for h, s in zip(healthy, scores)])

    @property
    def healthy_count(self) -> int:
        return sum(m.healthy for m in self.mirrors)

    def select_best(self, count: int) -> np.ndarray:
        """Indices of the `count` best healthy mirrors, ties to lower index."""
        scores = np.array([m.coupling_score for m in self.mirrors])
        order = np.lexsort((np.arange(len(scores)), -scores))
        picked = np.sort(order[:count])
        return picked


@dataclass(frozen=True)
class CalEntry:
    voltages: tuple[float, float, float, float]
    insertion_loss_db: float


@dataclass
class CalibrationTable:
    """Per-path drive voltages and insertion loss for every port pair.

    For the default profile this is the 136x136 = 18,496 entry map stored
    with each unit, plus one return-loss sample per duplex port.
    """

    radix: int
    port_maps: tuple[np.ndarray, np.ndarray]
    insertion_loss_db: np.ndarray  # (radix, radix)
    voltages: np.ndarray  # (radix, radix, 4)
    return_loss_db: np.ndarray  # (radix,)

    @property
    def n_entries(self) -> int:
        return self.radix * self.radix

    def entry(self, in_port: int, out_port: int) -> CalEntry:
        i, o = in_port - 1, out_port - 1
        return CalEntry(
            voltages=tuple(float(v) for v in self.voltages[i, o]),
            insertion_loss_db=float(self.insertion_loss_db[i, o]),
        )


@dataclass(frozen=True)
class HvBoard:
    """High-voltage driver board and the duplex ports it serves."""

    index: int
    served_ports: frozenset[int]


@dataclass
class OcsChassisState:
    """Redundant chassis plant: 1+1 power supplies, 2+2 fans, HV boards."""

    psu_healthy: list[bool]
    fan_healthy: list[bool]
    hv_boards: list[HvBoard]
    spare_ports: int

    @property
    def operational(self) -> bool:
        return sum(self.psu_healthy) >= 1 and sum(self.fan_healthy) >= 2


@dataclass(frozen=True)
class ReconfigReceipt:
    """Outcome of a state change: which in-ports moved and the dark time.

    Dark time applies only to the changed paths; untouched connections carry
    traffic throughout.
    """

    changed_ports: tuple[int, ...]
    added: tuple[tuple[int, int], ...]
    removed: tuple[tuple[int, int], ...]
    dark_time_ms: float


@dataclass(frozen=True)
class SwapReport:
    fru: str
    index: int
    dropped: tuple[tuple[int, int], ...]


def _hv_board_ports(profile: DeviceProfile) -> list[frozenset[int]]:
    # Contiguous blocks of selected ports; 136/8 boards -> 17 ports each.
    block = -(-profile.radix // profile.hv_boards)
    boards = []
    for k in range(profile.hv_boards):
        lo = k * block + 1
        hi = min((k + 1) * block, profile.radix)
        boards.append(frozenset(range(lo, hi + 1)))
    return boards


class OcsDevice:
    """One optical circuit switch: mirrors, calibration, and live state.

    Instances are single-owner: all mutations happen through one logical
    event stream. Read-only snapshots may be shared freely.
    """

    def __init__(
        self,
        profile: DeviceProfile,
        seed,
        dies: tuple[MirrorDie, MirrorDie],
        selected: tuple[np.ndarray, np.ndarray],
        device_id: int = 0,
    ):
        self.profile = profile
        self.seed = seed
        self.dies = dies
        self.selected = selected
        self.device_id = device_id
        self.calibration: CalibrationTable | None = None
        self.connections: dict[int, int] = {}
        self._outs_in_use: set[int] = set()
        self.reserved_in: set[int] = set()
        self.reserved_out: set[int] = set()
        self.spare_pairs_used: int = 0
        self.chassis = OcsChassisState(
            psu_healthy=[True, True],
            fan_healthy=[True, True, True, True],
            hv_boards=[
                HvBoard(k, ports) for k, ports in enumerate(_hv_board_ports(profile))
            ],
            spare_ports=profile.spare_ports,
        )

    # -- calibration ---------------------------------------------------

    def calibrate(self, seed) -> CalibrationTable:
        """Build the full port-pair calibration table.

        Every (in, out) combination gets a drive-voltage 4-tuple (two driven
        axes per mirror of the pair) and an insertion-loss sample clipped at
        the profile ceiling. One return-loss sample is drawn per port and
        clipped to the profile spec. Deterministic for a given seed.
        """
        r = self.profile.radix
        rng = np.random.default_rng(seed)
        il = rng.normal(self.profile.il_mean_db, self.profile.il_sigma_db, (r, r))
        il = np.clip(il, self.profile.il_min_db, self.profile.il_max_db)
        volts = rng.uniform(0.0, 200.0, (r, r, 4))
        rl = rng.normal(self.profile.rl_mean_db, self.profile.rl_sigma_db, r)
        rl = np.minimum(rl, self.profile.rl_spec_db)
        self.calibration = CalibrationTable(
            radix=r,
            port_maps=self.selected,
            insertion_loss_db=il,
            voltages=volts,
            return_loss_db=rl,
        )
        return self.calibration

    # -- cross-connects ------------------------------------------------

    def _check_port(self, port: int) -> None:
        if not isinstance(port, (int, np.integer)) or not 1 <= port <= self.profile.radix:
            raise PortOutOfRange(int(port), self.profile.radix)

    def connect(self, in_port: int, out_port: int) -> ReconfigReceipt:
        """Create the duplex cross-connect (in_port, out_port).

        The new path carries no light for the configured switching time.
        """
        self._check_port(in_port)
        self._check_port(out_port)
        if in_port in self.connections:
            raise PortBusy(in_port, "in")
        if out_port in self._outs_in_use:
            raise PortBusy(out_port, "out")
        self.connections[in_port] = out_port
        self._outs_in_use.add(out_port)
        return ReconfigReceipt(
            changed_ports=(in_port,),
            added=((in_port, out_port),),
            removed=(),
            dark_time_ms=self.profile.switch_time_ms,
        )

    def disconnect(self, in_port: int) -> ReconfigReceipt:
        """Remove the cross-connect anchored at in_port.

        Tear-down charges no dark time to any remaining path.
        """
        self._check_port(in_port)
        if in_port not in self.connections:
            raise NotConnected(in_port)
        out_port = self.connections.pop(in_port)
        self._outs_in_use.discard(out_port)
        return ReconfigReceipt(
            changed_ports=(in_port,),
            added=(),
            removed=((in_port, out_port),),
            dark_time_ms=0.0,
        )

    def apply_permutation(self, perm) -> ReconfigReceipt:
        """Drive the switch to exactly the requested (partial) permutation.

        Accepts a mapping in_port -> out_port or a full-length sequence of
        out ports. Only pairs that differ from the current state incur dark
        time; unchanged pairs carry traffic throughout.
        """
        if isinstance(perm, Mapping):
            target = {int(i): int(o) for i, o in perm.items()}
        else:
            seq = list(perm)
            if len(seq) != self.profile.radix:
                raise InvalidPermutation(
                    f"sequence form must list all {self.profile.radix} out ports"
                )
            target = {i + 1: int(o) for i, o in enumerate(seq)}
        for i, o in target.items():
            self._check_port(i)
            self._check_port(o)
        if len(set(target.values())) != len(target):
            raise InvalidPermutation("out ports repeat; request is not injective")

        current = self.connections
        changed = sorted(
            set(i for i in current if target.get(i) != current[i])
            | set(i for i in target if current.get(i) != target[i])
        )
        added = tuple(sorted((i, o) for i, o in target.items() if current.get(i) != o))
        removed = tuple(
            sorted((i, o) for i, o in current.items() if target.get(i) != o)
        )
        self.connections = dict(target)
        self._outs_in_use = set(target.values())
        dark = self.profile.switch_time_ms if changed else 0.0
        return ReconfigReceipt(
            changed_ports=tuple(changed), added=added, removed=removed, dark_time_ms=dark
        )

    # -- loss queries ----------------------------------------------------

    def insertion_loss_db(self, in_port: int, out_port: int) -> float:
        if self.calibration is None:
            raise NotCalibrated("device has no calibration table")
        if not (1 <= in_port <= self.profile.radix and 1 <= out_port <= self.profile.radix):
            raise UnknownPath(in_port, out_port)
        return float(self.calibration.insertion_loss_db[in_port - 1, out_port - 1])

    def return_loss_db(self, port: int) -> float:
        if self.calibration is None:
            raise NotCalibrated("device has no calibration table")
        if not 1 <= port <= self.profile.radix:
            raise PortOutOfRange(port, self.profile.radix)
        return float(self.calibration.return_loss_db[port - 1])

    def loss_query(self, kind: str, in_port: int, out_port: int | None = None) -> float:
        if kind == "insertion":
            if out_port is None:
                raise UnknownPath(in_port, -1)
            return self.insertion_loss_db(in_port, out_port)
        if kind == "return":
            return self.return_loss_db(in_port)
        raise ValueError(f"unknown loss kind {kind!r}")

    # -- FRUs and power --------------------------------------------------

    def hot_swap_fru(self, fru: str, index: int = 0) -> SwapReport:
        """Hot swap a PSU, fan, or HV driver board.

        PSU and fan swaps preserve every connection. An HV board swap drops
        the connections whose selected mirrors that board drives; they must
        be re-connected afterwards.
        """
        if not self.chassis.operational:
            raise OcsError("device not operational")
        if fru == "psu":
            flags = self.chassis.psu_healthy
            if not 0 <= index < len(flags):
                raise ValueError(f"psu index {index} out of range")
            if sum(flags) - (1 if flags[index] else 0) < 1:
                raise RedundancyViolated("swap would leave no live PSU mid-swap")
            flags[index] = True
            return SwapReport("psu", index, ())
        if fru == "fan":
            flags = self.chassis.fan_healthy
            if not 0 <= index < len(flags):
                raise ValueError(f"fan index {index} out of range")
            if sum(flags) - (1 if flags[index] else 0) < 2:
                raise RedundancyViolated("swap would leave fewer than 2 fans mid-swap")
            flags[index] = True
            return SwapReport("fan", index, ())
        if fru == "hv_board":
            boards = self.chassis.hv_boards
            if not 0 <= index < len(boards):
                raise ValueError(f"hv_board index {index} out of range")
            served = boards[index].served_ports
            dropped = tuple(
                sorted(
                    (i, o)
                    for i, o in self.connections.items()
                    if i in served or o in served
                )
            )
            for i, _ in dropped:
                self.disconnect(i)
            return SwapReport("hv_board", index, dropped)
        raise ValueError(f"unknown FRU kind {fru!r}")

    def power_draw_w(self) -> float:
        """Modeled draw: chassis base plus a per-active-connection increment."""
        if not self.chassis.operational:
            raise OcsError("device not operational")
        draw = (
            self.profile.base_power_w
            + self.profile.per_connection_w * len(self.connections)
        )
        return min(draw, self.profile.max_power_w)

    # -- port bookkeeping for link composition ----------------------------

    @property
    def regular_ports(self) -> range:
        """Port ids available to normal striping; the tail is spare."""
        return range(1, self.profile.radix - self.profile.spare_ports + 1)

    @property
    def spare_port_ids(self) -> range:
        return range(
            self.profile.radix - self.profile.spare_ports + 1, self.profile.radix + 1
        )

    def reserve_path(self, in_port: int, out_port: int) -> None:
        from .links import ResourceBusy  # local import; links layers above

        if in_port in self.connections or in_port in self.reserved_in:
            raise ResourceBusy(f"in port {in_port} on switch {self.device_id} busy")
        if out_port in self._outs_in_use or out_port in self.reserved_out:
            raise ResourceBusy(f"out port {out_port} on switch {self.device_id} busy")
        self.reserved_in.add(in_port)
        self.reserved_out.add(out_port)

    def release_path(self, in_port: int, out_port: int) -> None:
        self.reserved_in.discard(in_port)
        self.reserved_out.discard(out_port)

    def take_spare_pair(self) -> tuple[int, int]:
        """Allocate the next spare (in, out) pair for a failed-link rescue."""
        if self.spare_pairs_used >= self.profile.spare_ports:
            raise OcsError(f"switch {self.device_id} has no spare ports left")
        port = self.profile.radix - self.profile.spare_ports + 1 + self.spare_pairs_used
        self.spare_pairs_used += 1
        return port, port

    def to_dict(self) -> dict:
        cal = self.calibration
        return {
            "device_id": self.device_id,
            "radix": self.profile.radix,
            "spare_ports": self.profile.spare_ports,
            "connections": sorted([i, o] for i, o in self.connections.items()),
            "spare_pairs_used": self.spare_pairs_used,
            "power_draw_w": self.power_draw_w(),
            "calibrated": cal is not None,
            "insertion_loss_max_db": float(cal.insertion_loss_db.max()) if cal else None,
            "return_loss_max_db": float(cal.return_loss_db.max()) if cal else None,
        }


def manufacture(
    seed,
    mirror_yield: float | None = None,
    profile: DeviceProfile | None = None,
    device_id: int = 0,
) -> OcsDevice:
    """Manufacture one switch: sample both dies and down-select mirrors.

    Each die's mirrors are independently healthy with probability
    `mirror_yield`; healthy mirrors draw a coupling score and the best
    `radix` mirrors per die (ties to the lower index) become the port map.

    Raises:
        ManufacturingFailure: a die yielded fewer healthy mirrors than radix.
    """
    profile = profile or DeviceProfile()
    if mirror_yield is None:
        mirror_yield = profile.mirror_yield
    if not 0.0 <= mirror_yield <= 1.0:
        raise ValueError("mirror_yield must be in [0, 1]")
    if mirror_yield != profile.mirror_yield:
        profile = DeviceProfile(**{**profile.to_dict(), "mirror_yield": mirror_yield})

    rng = np.random.default_rng(seed)
    dies = (MirrorDie.sample(rng, profile), MirrorDie.sample(rng, profile))
    for k, die in enumerate(dies):
        if die.healthy_count < profile.radix:
            raise ManufacturingFailure(k, die.healthy_count, profile.radix)
    selected = tuple(die.select_best(profile.radix) for die in dies)
    return OcsDevice(profile, seed, dies, selected, device_id=device_id)
