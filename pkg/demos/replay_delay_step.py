"""
Replaying a delay step
======================

A 6 Mbps link whose one-way delay jumps from 10 ms to 30 ms half way
through. Two senders cross it: one paced at link rate, one sending three
packets every 100 ms. We replay the same link two ways and look at how much
later each packet arrives after the jump.
"""

import numpy as np

from mpvideo.emulib.fidelity import FidelityScenario, run_fidelity

scenario = FidelityScenario()
print(f"step of {scenario.step_us / 1000:.0f} ms at t = {scenario.step_at_ms / 1000:.0f} s")

# per-cycle delay: the jump is applied as its own quantity
for sender in ("bulk", "onoff"):
    r = run_fidelity(scenario, sender, "cellnem")
    e = r.post_elevations() / 1000
    print(f"cellnem {sender:5s}  extra delay after the step: {e.min():5.2f} .. {e.max():5.2f} ms")

# folded delay: the jump only survives as a gap in the opportunity timeline,
# which a sparse sender mostly skips over
r = run_fidelity(scenario, "onoff", "cellsim")
post = r.post_elevations() / 1000
print(f"cellsim onoff  extra delay after the step: {post.min():5.2f} .. {post.max():5.2f} ms")

# a sender that keeps the link busy still sees most of the jump: the queue
# that builds up in the gap never drains
r = run_fidelity(scenario, "bulk", "cellsim")
print("cellsim bulk   first post-step packets (ms):",
      np.round(r.post_elevations()[:5] / 1000, 2))
