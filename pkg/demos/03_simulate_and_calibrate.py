"""
Simulating the arterial and checking link volumes
=================================================

Run the point-queue simulation under the base and factored plans with the same
random arrivals, then compare simulated link volumes with the input volumes
using the GEH statistic.
"""

from actflab.calibration import check_calibration, expected_link_volumes, pair_counts
from actflab.harness import compute_drp
from actflab.network import expand_volumes, reference_network, reference_volumes
from actflab.sim import DemandSpec, run_simulation
from actflab.timing import apply_actf, optimize_base_plan

net = reference_network()
mv = expand_volumes(net, reference_volumes(), 20)
base = optimize_base_plan(net, mv)
factored = apply_actf(base, 1.15).plan
demand = DemandSpec(mv)

b = run_simulation(net, demand, base, seed=1, scenario_id="demo")
f = run_simulation(net, demand, factored, seed=1, scenario_id="demo")
print(f"base {b.avg_delay:.1f} s/veh, factored {f.avg_delay:.1f} s/veh, "
      f"DRP {compute_drp(b.avg_delay, f.avg_delay):.1f} %")

# %%
# Hourly link counts against the volumes the demand was built from.
report = check_calibration(pair_counts(b.link_counts, expected_link_volumes(net, mv)))
for lk in report.links:
    print(f"{lk.link:>10}  E {lk.estimate:6.0f}  V {lk.count:6.0f}  GEH {lk.geh:5.2f}")
print(report.summary())
