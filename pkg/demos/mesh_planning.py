"""
Planning a 200-user full mesh
=============================

Every pair of users needs its own comb tooth for the duration of a key
exchange. With 200 users there are far more pairs than teeth, so pairs share
teeth in time slots.
"""

from mdimesh.netplan import InfeasibleError, NetworkSpec, allocate, network_report, pair_count

for n in (4, 20, 200):
    print(f"{n:4d} users -> {pair_count(n):6d} pairs")

# A small network fits one pair per channel and keeps the full link rate.
small = allocate(NetworkSpec(4, channels=6))
print("\n" + small.table())
print(f"rate per pair: {network_report(small, 64.0).min_rate:g} bit/s")

# 200 users on 200 teeth: each tooth carries about a hundred pairs.
spec = NetworkSpec(200, channels=200, tdm_slots=100)
alloc = allocate(spec)
rep = network_report(alloc, 64.0)
print(f"\n{len(alloc.assignments)} pairs, worst duty cycle {min(alloc.duty_cycle.values())}")
print(f"per-pair rate {rep.min_rate:.3f}-{max(rep.per_pair_rate.values()):.3f} bit/s, "
      f"total {rep.total_rate:.0f} of {rep.capacity:.0f} bit/s")

# Too few slots is reported with the number that would be needed.
try:
    allocate(NetworkSpec(200, channels=200, tdm_slots=50))
except InfeasibleError as err:
    print(f"\n50 slots: {err} (needs {err.slots_needed})")
