"""Camera-node energy budget: closed-form battery life and a duty-cycle simulator.

Charge is tracked in mAh, currents in mA, time in days unless noted.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Callable, Iterable, Literal, Mapping, Sequence

import numpy as np

from planocomp.change import ChangeParams, GrayFrame, detect_change, preprocess

DAYS_PER_MONTH = 30.44
UNBOUNDED = math.inf

SOLAR_DENSITY_500LUX = 13.0  # uW/cm^2, a-Si cell under 500 lux LED light
RF_REFERENCE_POINTS = ((0.0, 0.2), (-8.0, 0.018))  # (input dBm, output mA)


@dataclass(frozen=True)
class NodeEnergyConfig:
    active_current: float = 243.2  # mA, averaged over capture and transfer
    capture_seconds: float = 3.5
    transfer_seconds: float = 8.5
    wakes_per_day: int = 2
    hibernation_current: float = 0.006  # mA
    battery_capacity: float = 1500.0  # mAh
    supply_voltage: float = 3.3  # V

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")
        if self.supply_voltage <= 0:
            raise ValueError("supply_voltage must be positive")

    @property
    def active_seconds_per_wake(self) -> float:
        return self.capture_seconds + self.transfer_seconds

    @classmethod
    def from_dict(cls, data: Mapping) -> NodeEnergyConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown node config keys {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class HarvestSource:
    """A continuous charging source.

    Solar output is ``cell_area * power_density * efficiency`` microwatts,
    converted to current at the supply voltage. RF output is a fixed current.
    """

    kind: Literal["solar", "rf"]
    cell_area: float = 0.0  # cm^2
    power_density: float = SOLAR_DENSITY_500LUX  # uW/cm^2
    efficiency: float = 0.7
    output_current: float = 0.0  # mA

    def __post_init__(self) -> None:
        if self.kind not in ("solar", "rf"):
            raise ValueError(f"unknown harvest kind {self.kind!r}")
        if min(self.cell_area, self.power_density, self.output_current) < 0:
            raise ValueError("harvest parameters must be nonnegative")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must lie in (0, 1]")

    @classmethod
    def solar(cls, width_mm: float = 52, height_mm: float = 27, lux: float = 500, efficiency: float = 0.7):
        """Cell of the given size; power density scaled linearly from the 500 lux figure."""
        return cls("solar", width_mm * height_mm / 100, SOLAR_DENSITY_500LUX * lux / 500, efficiency)

    @classmethod
    def rf(cls, output_current: float = 0.018) -> HarvestSource:
        return cls("rf", output_current=output_current)

    @classmethod
    def rf_at_dbm(cls, dbm: float) -> HarvestSource:
        """RF harvester output, log-linear through the two reported operating points."""
        (p0, i0), (p1, i1) = RF_REFERENCE_POINTS
        slope = math.log(i0 / i1) / (p0 - p1)
        return cls.rf(i0 * math.exp(slope * (dbm - p0)))

    def current(self, supply_voltage: float) -> float:
        """Average charging current in mA."""
        if self.kind == "solar":
            return self.cell_area * self.power_density * self.efficiency / (supply_voltage * 1000)
        return self.output_current

    @classmethod
    def from_dict(cls, data: Mapping) -> HarvestSource:
        data = dict(data)
        if data.get("kind") == "solar" and {"width_mm", "height_mm", "lux"} & set(data):
            data.pop("kind")
            return cls.solar(**data)
        if data.get("kind") == "rf" and "dbm" in data:
            return cls.rf_at_dbm(data["dbm"])
        return cls(**data)


def daily_consumption(config: NodeEnergyConfig) -> float:
    """Charge drawn per day in mAh."""
    active = config.wakes_per_day * config.active_current * config.active_seconds_per_wake / 3600
    return active + config.hibernation_current * 24


def harvest_offset(sources: Iterable[HarvestSource], config: NodeEnergyConfig) -> float:
    """Charge harvested per day in mAh."""
    return sum(s.current(config.supply_voltage) * 24 for s in sources)


def battery_life(config: NodeEnergyConfig, sources: Sequence[HarvestSource] = ()) -> float:
    """Months until the battery is empty, or ``UNBOUNDED`` when harvesting covers the load."""
    net = daily_consumption(config) - harvest_offset(sources, config)
    if net <= 0:
        return UNBOUNDED
    return config.battery_capacity / net / DAYS_PER_MONTH


# -- simulation ------------------------------------------------------------------------


def _q(x: float) -> Fraction:
    return Fraction(repr(float(x)))


@dataclass
class NodeState:
    reference: GrayFrame | None
    charge: Fraction
    time: Fraction = Fraction(0)  # days
    wakes: int = 0
    transfers: int = 0
    changes: int = 0


@dataclass(frozen=True)
class DayRecord:
    day: int
    consumption: float
    harvest: float
    charge: float
    wakes: int
    transfers: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class UploadEvent:
    time: float  # days
    wake: int
    changed_fraction: float


@dataclass
class NodeTrace:
    initial_charge: Fraction
    state: NodeState
    days: list[DayRecord] = field(default_factory=list)
    uploads: list[UploadEvent] = field(default_factory=list)
    debits: list[Fraction] = field(default_factory=list)
    credits: list[Fraction] = field(default_factory=list)
    depleted_at: float | None = None  # days

    @property
    def life_months(self) -> float | None:
        return None if self.depleted_at is None else self.depleted_at / DAYS_PER_MONTH


SceneFeed = Callable[[int], GrayFrame]


def constant_feed(frame: GrayFrame) -> SceneFeed:
    return lambda _: frame


def alternating_feed(a: GrayFrame, b: GrayFrame) -> SceneFeed:
    return lambda k: a if k % 2 == 0 else b


def random_feed(seed: int, change_probability: float, width: int = 40, height: int = 30) -> SceneFeed:
    """Seeded feed whose scene is redrawn with the given probability at each wake."""
    rng = np.random.default_rng(seed)
    frames: list[GrayFrame] = []

    def feed(k: int) -> GrayFrame:
        while len(frames) <= k:
            if not frames or rng.random() < change_probability:
                frames.append(GrayFrame(rng.integers(20, 236, (height, width)).astype(float)))
            else:
                frames.append(frames[-1])
        return frames[k]

    return feed


def simulate_node(
    days: int,
    feed: SceneFeed,
    config: NodeEnergyConfig = NodeEnergyConfig(),
    change: ChangeParams = ChangeParams(),
    sources: Sequence[HarvestSource] = (),
    initial_reference: GrayFrame | None = None,
) -> NodeTrace:
    """Step the capture/compare/transfer/hibernate cycle for up to ``days`` days.

    Wakes are evenly spaced, starting at time 0. Every wake pays for the
    low-resolution capture; a detected change also pays for the full capture
    and transfer and replaces the stored reference. Hibernation current and
    harvesting run continuously. The first wake without a stored reference
    only stores one. Accounting is exact (rational arithmetic).
    """
    capacity = _q(config.battery_capacity)
    state = NodeState(
        None if initial_reference is None else preprocess(initial_reference, change), capacity
    )
    trace = NodeTrace(capacity, state)
    if capacity <= 0 or days <= 0:
        trace.depleted_at = 0.0 if capacity <= 0 else None
        return trace

    hib = _q(config.hibernation_current) * 24  # mAh/day
    harvest = sum((_q(s.current(config.supply_voltage)) * 24 for s in sources), Fraction(0))
    capture = _q(config.active_current) * _q(config.capture_seconds) / 3600
    transfer = _q(config.active_current) * _q(config.transfer_seconds) / 3600
    n = config.wakes_per_day
    step = Fraction(1, n) if n else Fraction(1)

    day_use = day_gain = Fraction(0)
    day_wakes = day_transfers = 0

    def debit(x: Fraction) -> None:
        nonlocal day_use
        trace.debits.append(x)
        state.charge -= x
        day_use += x

    def credit(x: Fraction) -> None:
        nonlocal day_gain
        trace.credits.append(x)
        state.charge += x
        day_gain += x

    def close_day(day: int) -> None:
        nonlocal day_use, day_gain, day_wakes, day_transfers
        trace.days.append(
            DayRecord(day, float(day_use), float(day_gain), float(state.charge), day_wakes, day_transfers)
        )
        day_use = day_gain = Fraction(0)
        day_wakes = day_transfers = 0

    def idle(dt: Fraction) -> bool:
        """Hibernate for ``dt`` days; False if the battery empties meanwhile."""
        if dt <= 0:
            return True
        if state.charge + (harvest - hib) * dt <= 0:
            t_empty = state.charge / (hib - harvest)
            debit(hib * t_empty)
            credit(harvest * t_empty)
            state.time += t_empty
            return False
        debit(hib * dt)
        credit(min(harvest * dt, capacity - state.charge))
        state.time += dt
        return True

    def wake(index: int) -> bool:
        """Capture, compare and maybe transfer; False if the battery empties."""
        nonlocal day_wakes, day_transfers
        state.wakes += 1
        day_wakes += 1
        debit(capture)
        if state.charge <= 0:
            return False
        live = preprocess(feed(index), change)
        if state.reference is None:
            state.reference = live
            return True
        changed, fraction = detect_change(state.reference, live, change)
        if changed:
            state.changes += 1
            debit(transfer)
            if state.charge <= 0:
                return False
            state.transfers += 1
            day_transfers += 1
            trace.uploads.append(UploadEvent(float(state.time), index, fraction))
            state.reference = live
        return True

    alive = True
    for day in range(days):
        for k in range(n):
            alive = idle(day + k * step - state.time) and wake(day * n + k)
            if not alive:
                break
        alive = alive and idle(day + 1 - state.time)
        if not alive:
            break
        close_day(day)

    if state.charge <= 0:
        trace.depleted_at = float(state.time)
        close_day(int(state.time))
    return trace
