"""Full-mesh planning: user pairs onto frequency channels and TDM slots."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

__all__ = [
    "NetworkSpec",
    "Allocation",
    "NetworkReport",
    "InfeasibleError",
    "enumerate_pairs",
    "pair_count",
    "allocate",
    "network_report",
    "relabel",
]


class InfeasibleError(ValueError):
    """Not enough (channel, slot) cells for every pair."""

    def __init__(self, message: str, slots_needed: int):
        super().__init__(message)
        self.slots_needed = slots_needed


@dataclass(frozen=True)
class NetworkSpec:
    users: int
    channels: int = 200
    tdm_slots: int = 1
    interpretation: str = "channel_per_pair"
    per_channel_rate_model: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.users < 2:
            raise ValueError("a network needs at least two users")
        if self.channels < 1 or self.tdm_slots < 1:
            raise ValueError("channels and tdm_slots must be >= 1")


def pair_count(n: int) -> int:
    if n < 2:
        raise ValueError("need at least two users")
    return n * (n - 1) // 2


def enumerate_pairs(n: int):
    """Return ``(count, iterator)`` over unordered pairs ``(i, j)``, ``i < j``, lexicographic."""
    return pair_count(n), combinations(range(n), 2)


@dataclass
class Allocation:
    assignments: dict  # (i, j) -> (channel, slot)
    duty_cycle: dict  # (i, j) -> Fraction
    spec: NetworkSpec

    def slots_used(self) -> dict:
        used: dict[int, int] = {}
        for ch, _ in self.assignments.values():
            used[ch] = used.get(ch, 0) + 1
        return used

    def to_json(self) -> str:
        rows = [{"pair": list(p), "channel": c, "slot": s, "duty_cycle": float(self.duty_cycle[p])}
                for p, (c, s) in self.assignments.items()]
        return json.dumps({"schema": "mdimesh.allocation/1", "users": self.spec.users,
                           "channels": self.spec.channels, "tdm_slots": self.spec.tdm_slots,
                           "assignments": rows}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Allocation":
        d = json.loads(text)
        spec = NetworkSpec(d["users"], d["channels"], d["tdm_slots"])
        assign, duty = {}, {}
        for r in d["assignments"]:
            p = tuple(r["pair"])
            assign[p] = (r["channel"], r["slot"])
            duty[p] = Fraction(r["duty_cycle"]).limit_denominator(10 ** 6)
        return cls(assign, duty, spec)

    def table(self, limit: int | None = None) -> str:
        lines = [f"{'pair':>12} {'channel':>8} {'slot':>5} {'duty':>8}"]
        for k, (p, (c, s)) in enumerate(self.assignments.items()):
            if limit is not None and k >= limit:
                lines.append(f"... {len(self.assignments) - limit} more")
                break
            lines.append(f"{f'{p[0]}-{p[1]}':>12} {c:>8d} {s:>5d} {float(self.duty_cycle[p]):>8.4f}")
        return "\n".join(lines)


def allocate(spec: NetworkSpec) -> Allocation:
    """Round-robin: pair ``k`` goes to channel ``k mod C``, slot ``k // C``.

    Slot usage per channel then differs by at most one, and each pair's duty
    cycle is one over the number of slots its channel uses.
    """
    count, pairs = enumerate_pairs(spec.users)
    needed = math.ceil(count / spec.channels)
    if needed > spec.tdm_slots:
        raise InfeasibleError(
            f"{count} pairs need {needed} TDM slots on {spec.channels} channels, "
            f"only {spec.tdm_slots} available", needed)
    c = spec.channels
    assign = {p: (k % c, k // c) for k, p in enumerate(pairs)}
    full, extra = divmod(count, c)
    # channels below `extra` carry one more slot
    used = lambda ch: full + (1 if ch < extra else 0)  # noqa: E731
    duty = {p: Fraction(1, used(ch)) for p, (ch, _) in assign.items()}
    return Allocation(assign, duty, spec)


@dataclass
class NetworkReport:
    per_pair_rate: dict  # (i, j) -> bps
    mean_rate: float
    min_rate: float
    total_rate: float
    capacity: float
    feasible: bool
    interpretation: str

    def to_dict(self) -> dict:
        return {"schema": "mdimesh.network_report/1", "mean_rate_bps": self.mean_rate,
                "min_rate_bps": self.min_rate, "total_rate_bps": self.total_rate,
                "capacity_bps": self.capacity, "feasible": self.feasible,
                "interpretation": self.interpretation, "pairs": len(self.per_pair_rate)}


def network_report(allocation: Allocation, raw_rate_per_channel: float) -> NetworkReport:
    """Effective per-pair rate = raw channel rate x duty cycle (exact arithmetic)."""
    raw = Fraction(raw_rate_per_channel).limit_denominator(10 ** 12) \
        if not isinstance(raw_rate_per_channel, Fraction) else raw_rate_per_channel
    rates = {p: raw * d for p, d in allocation.duty_cycle.items()}
    total = sum(rates.values(), Fraction(0))
    capacity = raw * allocation.spec.channels
    if total > capacity:
        raise AssertionError("allocation exceeds channel capacity")
    vals = list(rates.values())
    return NetworkReport(
        {p: float(r) for p, r in rates.items()},
        float(total / len(vals)), float(min(vals)), float(total), float(capacity),
        True, allocation.spec.interpretation)


def relabel(allocation: Allocation, perm) -> Allocation:
    """Apply a user permutation to an allocation (pairs re-sorted as ``i < j``)."""
    assign, duty = {}, {}
    for (i, j), cell in allocation.assignments.items():
        p = tuple(sorted((perm[i], perm[j])))
        assign[p] = cell
        duty[p] = allocation.duty_cycle[(i, j)]
    return Allocation(assign, duty, allocation.spec)
