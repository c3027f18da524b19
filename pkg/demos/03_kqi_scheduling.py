"""
Scheduling for the viewer rather than the link
==============================================

Five users stream video from a dense cluster. The KPI scheduler maximizes
predicted sum rate each slot; the KPI/KQI scheduler runs drift-plus-penalty
with a stall penalty, so a user about to drain its playout buffer gets
served first. We compare stall counts and the engagement correlation (Pearson
between download ratio and recent throughput) on two seeds.
"""

import numpy as np

from compsim.engine import compare_schedulers
from compsim.presets import preset_config

# the table2 preset, shortened
cfg = preset_config("table2")
res = compare_schedulers(cfg, seeds=(0, 1))
for kind in ("kpi", "kqi"):
    stalls = res[kind]["stalls"].sum(axis=0).astype(int)
    rho = np.nanmean(res[kind]["pearson"], axis=0)
    print(f"{kind.upper():3s} stalls per user {stalls.tolist()}  rho {np.round(rho, 2).tolist()}")
