"""
A semi-actuated controller on its own
=====================================

Drive one intersection's controller with random detector calls and look at
what it did: which phases were skipped, how long greens lasted and whether the
coordinated green started on schedule.
"""

import numpy as np

from actflab.controller import GREEN, coordination_drift, green_intervals, run_controller
from actflab.network import expand_volumes, reference_network, reference_volumes
from actflab.timing import optimize_base_plan

net = reference_network()
plan = optimize_base_plan(net, expand_volumes(net, reference_volumes(), 20))
rng = np.random.default_rng(3)


def presence(k, ind):
    # each actuated detector is occupied with a small probability per tick
    calls = rng.random(9) < 0.01
    calls[[0, 2, 6]] = False
    return tuple(calls)


trace, ctl = run_controller(plan, "I2", presence, 900.0)
for p in range(1, 9):
    ivs = [e - s for s, e, o1, o2 in green_intervals(trace, p) if not (o1 or o2)]
    if ivs:
        print(f"phase {p}: {len(ivs)} greens, mean {np.mean(ivs):.1f} s, max {max(ivs):.1f} s")
    else:
        print(f"phase {p}: never closed a green")

# %%
# Share of time each phase showed green.
print("green share", np.round((trace.indications == GREEN).mean(axis=0), 3))

# %%
# Negative start drift is early return to green: skipped or gapped-out phases
# hand their time back to the coordinated phase. Its end, the yield point, stays
# on the schedule because force-offs are fixed.
rows = [d for d in coordination_drift(trace, plan, 2) if d.start_drift is not None and d.end_drift is not None]
print("phase 2 start drift (s):", np.round([d.start_drift for d in rows], 2))
print("phase 2 end drift (s):  ", np.round([d.end_drift for d in rows], 2))
