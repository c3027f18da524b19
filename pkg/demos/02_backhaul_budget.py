"""
What a backhaul link buys
=========================

JT ships I/Q samples of every user to every cooperating BS, so its backhaul
load scales with bandwidth and sample word length. CS/CB only exchanges CSI.
We first do the arithmetic, then run a small sweep of cell-edge throughput
(5th percentile of per-user rates) against backhaul capacity.
"""

import math

from compsim.backhaul import (BackhaulBudget, csi_bits_per_report, cscb_required_gbps,
                              fit_iq_bits, iq_noise_factor, jt_required_gbps)
from compsim.config import ScenarioConfig, with_overrides
from compsim.engine import sweep_backhaul

cfg = ScenarioConfig()
bw = cfg.radio.occupied_bandwidth_hz
csi = csi_bits_per_report(8, cfg.radio.n_tx_antennas, cfg.radio.n_rx_antennas)
print(f"occupied bandwidth {bw / 1e6:.0f} MHz, CSI report {csi} bits")
for bits in (4, 8, 16):
    print(f"JT, 4 users, {bits:2d}-bit I/Q: {jt_required_gbps(4, bw, bits):7.1f} Gb/s, "
          f"quantization noise {10 * math.log10(iq_noise_factor(bits)):6.1f} dB")
print(f"CS/CB CSI exchange: {cscb_required_gbps(csi * 4 * 3):.4f} Gb/s")

# the word length that fits shrinks with the link, which is where JT loses SINR
for cap in (10.0, 40.0, 80.0, 240.0):
    bits = fit_iq_bits(BackhaulBudget.equal(cap, 3), 4, bw)
    print(f"{cap:5g} Gb/s fits {bits:2d}-bit samples")

# a short sweep: few seeds and slots, so the curve is noisy but the crossover shows
small = with_overrides(cfg, {"n_slots": 40})
res = sweep_backhaul(small, (2.5, 10.0, 80.0, 240.0), seeds=(0, 1, 2))
for i, cap in enumerate(res.x):
    print(f"{cap:5g} Gb/s  JT {res.curves['JT'][i] / 1e6:7.1f} Mb/s  "
          f"CS/CB {res.curves['CSCB'][i] / 1e6:7.1f} Mb/s")
