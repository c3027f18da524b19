"""
The V knob
==========

Drift-plus-penalty trades queue backlog for penalty: a larger V cares more
about the KQI loss and tolerates longer queues. Arrivals here are 80% of
what the weakest user can be served at top quality, so queues stay stable
while the scheduler picks qualities.
"""

import numpy as np

from compsim.config import ScenarioConfig, with_overrides
from compsim.engine import sweep_v

cfg = with_overrides(ScenarioConfig(), {"n_slots": 2000})
res = sweep_v(cfg, (0.0, 10.0, 100.0, 1000.0), seeds=(0,))
for v, loss, q in zip(res.x, res.curves["kqi_loss"], res.curves["backlog_bits"]):
    print(f"V = {v:6g}  mean KQI loss {loss:.4f}  mean backlog {q / 1e6:.3f} Mb")
print("loss non-increasing:", bool(np.all(np.diff(res.curves["kqi_loss"]) <= 0)))
print("backlog non-decreasing:", bool(np.all(np.diff(res.curves["backlog_bits"]) >= 0)))
