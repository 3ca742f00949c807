"""Domain types shared across the pipeline, plus the round cost model and
the comprehensive score.

A round's latency is the slowest selected device (communication plus
``epochs`` local epochs of computation, both scaled by the device's
availability multiplier for that round).  A round's energy is the sum of the
selected devices' communication and computation energy; availability does
not scale energy because background load slows work without changing the
amount of work done.  The comprehensive score multiplies task performance by
budget-exceedance penalties for latency and energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import InvalidSelectionError, NumericError, UnknownDeviceError


@dataclass(frozen=True)
class DeviceProfile:
    id: int
    comm_latency_s: float
    comp_latency_s_per_epoch: float
    comm_energy_j: float
    comp_energy_j_per_epoch: float
    availability: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        for name in ("comm_latency_s", "comp_latency_s_per_epoch",
                     "comm_energy_j", "comp_energy_j_per_epoch"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.availability or any(a <= 0 for a in self.availability):
            raise ValueError("availability multipliers must be strictly positive")

    def availability_at(self, round_index: int) -> float:
        # traces shorter than the session cycle modulo their length
        return self.availability[round_index % len(self.availability)]


@dataclass(frozen=True)
class DevicePool:
    devices: tuple[DeviceProfile, ...]

    def __post_init__(self):
        ids = sorted(d.id for d in self.devices)
        if ids != list(range(len(self.devices))):
            raise ValueError("device ids must form exactly {0..J-1}")

    @property
    def size(self) -> int:
        return len(self.devices)

    def device(self, device_id: int) -> DeviceProfile:
        if not 0 <= device_id < len(self.devices):
            raise UnknownDeviceError(f"device id {device_id} not in pool of size {len(self.devices)}")
        for d in self.devices:
            if d.id == device_id:
                return d
        raise UnknownDeviceError(f"device id {device_id} not in pool")


@dataclass(frozen=True)
class ClientSelection:
    """Ordered device-id sequence that semantically denotes a set."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise InvalidSelectionError("selection must contain at least one device id")
        if len(set(self.tokens)) != len(self.tokens):
            raise InvalidSelectionError(f"duplicate device ids in selection {self.tokens}")
        if any(t < 0 for t in self.tokens):
            raise InvalidSelectionError("negative device id")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def id_set(self) -> frozenset[int]:
        return frozenset(self.tokens)

    def validate_against(self, pool: DevicePool) -> None:
        for t in self.tokens:
            if t >= pool.size:
                raise UnknownDeviceError(f"device id {t} not in pool of size {pool.size}")


@dataclass(frozen=True)
class Budget:
    latency_budget_s: float
    energy_budget_j: float
    latency_penalty_exp: float = 2.0
    energy_penalty_exp: float = 2.0

    def __post_init__(self):
        if not (self.latency_budget_s > 0 and self.energy_budget_j > 0):
            raise ValueError("budgets must be strictly positive")
        if self.latency_penalty_exp < 0 or self.energy_penalty_exp < 0:
            raise ValueError("penalty exponents must be non-negative")


@dataclass(frozen=True)
class ScoreBreakdown:
    perf: float
    total_latency_s: float
    total_energy_j: float
    comprehensive: float


def _device_round_latency(dev: DeviceProfile, round_index: int, epochs: int) -> float:
    avail = dev.availability_at(round_index)
    return avail * dev.comm_latency_s + avail * dev.comp_latency_s_per_epoch * epochs


def round_latency(selection: ClientSelection, pool: DevicePool,
                  round_index: int, epochs: int) -> float:
    """Slowest selected device's communication + computation time (seconds)."""
    selection.validate_against(pool)
    return max(_device_round_latency(pool.device(t), round_index, epochs)
               for t in selection.tokens)


def round_energy(selection: ClientSelection, pool: DevicePool,
                 round_index: int, epochs: int) -> float:
    """Summed communication + computation energy of the selection (joules)."""
    selection.validate_against(pool)
    # summing in sorted id order makes the result exactly permutation-invariant
    return sum(pool.device(t).comm_energy_j + pool.device(t).comp_energy_j_per_epoch * epochs
               for t in sorted(selection.tokens))


def comprehensive_score(perf: float, total_latency_s: float, total_energy_j: float,
                        budget: Budget) -> ScoreBreakdown:
    """Performance multiplied by penalty factors when a budget is exceeded.

    A selection within both budgets scores exactly ``perf``; exceeding the
    latency budget L multiplies by (L / latency)^a, exceeding the energy
    budget E multiplies by (E / energy)^b.
    """
    for name, v in (("perf", perf), ("total_latency_s", total_latency_s),
                    ("total_energy_j", total_energy_j)):
        if not math.isfinite(v):
            raise NumericError(f"{name} is not finite: {v}")
    if total_latency_s <= 0 or total_energy_j <= 0:
        raise NumericError("latency and energy must be strictly positive")

    score = perf
    if total_latency_s > budget.latency_budget_s:
        score *= (budget.latency_budget_s / total_latency_s) ** budget.latency_penalty_exp
    if total_energy_j > budget.energy_budget_j:
        score *= (budget.energy_budget_j / total_energy_j) ** budget.energy_penalty_exp
    return ScoreBreakdown(perf=perf, total_latency_s=total_latency_s,
                          total_energy_j=total_energy_j, comprehensive=score)
