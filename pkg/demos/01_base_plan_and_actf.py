"""
Base timing plan and the actuated factor
========================================

Build a Webster plan for the reference arterial, then shift green from the
coordinated phases to the actuated ones with an actuated factor of 1.15.
"""

from actflab.network import expand_volumes, reference_network, reference_volumes
from actflab.timing import apply_actf, compute_force_offs, optimize_base_plan

net = reference_network()
volumes = expand_volumes(net, reference_volumes(), lt_rate=20)
base = optimize_base_plan(net, volumes)
print(f"cycle {base.cycle_length:g} s, offsets", [x.offset for x in base.intersections])

# %%
# The transform keeps every ring at the cycle length: what the actuated
# phases gain, the coordinated phase of the same ring gives up.
res = apply_actf(base, 1.15)
for iid in base.ids:
    before, after = base.greens(iid), res.plan.greens(iid)
    row = "  ".join(f"p{p} {before[p]:5.1f}->{after[p]:5.1f}" for p in range(1, 9))
    print(iid, row)
for (iid, ring), agt in sorted(res.added_green_time.items()):
    print(f"{iid} ring {ring}: added green {agt:.2f} s")

# %%
# Force-offs are fixed points on the cycle clock; an actuated phase that
# starts late still ends at its force-off.
table = compute_force_offs(res.plan)
for iid, pts in table.points.items():
    print(iid, {p: round(t, 1) for p, t in sorted(pts.items())})
