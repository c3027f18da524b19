"""Builders for hand-made channels and reports."""

import numpy as np

from compsim.channel import ChannelState, CsiReport


def cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def report(user, h):
    """Perfect-CSI report from an ``(n_bs, n_r, n_t)`` channel."""
    h = np.asarray(h, dtype=complex)
    return CsiReport(user=user, ri=1, pmi=0, cqi=0, h_hat=h, quant_bits=32)


def state(hs):
    """ChannelState from a list of ``(n_bs, n_r, n_t)`` channels."""
    h = np.array(hs, dtype=complex)
    return ChannelState(0, h, 0.0, np.zeros(h.shape[:2]))


def random_group(rng, k, n_bs=3, n_t=4):
    hs = [cn(rng, (n_bs, 1, n_t)) for _ in range(k)]
    return hs, [report(u, h) for u, h in enumerate(hs)]
