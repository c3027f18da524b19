"""Video sessions: playback buffer, stalls, download ratio and KQI loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .channel import DegenerateInputError

__all__ = [
    "VideoSession",
    "EngagementRecord",
    "UndefinedCorrelationError",
    "new_session",
    "download_ratio",
    "step_playback",
    "pearson",
    "kqi_loss",
    "psnr_for_level",
    "is_stalled",
    "predict_stalled",
]

EPS = 1e-12


class UndefinedCorrelationError(DegenerateInputError):
    """Correlation of a constant series (or of fewer than two samples)."""


@dataclass(frozen=True)
class VideoSession:
    """State of one user's video download and playback.

    ``stalled_now`` records whether the last step ended in a stall, and
    ``rebuffer_s`` is the total time spent waiting with an empty buffer.
    """

    file_size_bits: float
    downloaded_bits: float = 0.0
    buffer_s: float = 0.0
    playing: bool = False
    stall_count: int = 0
    quality_level: int = 0
    engagement_sensitivity: float = 1.0
    played_s: float = 0.0
    played_bits: float = 0.0
    rebuffer_s: float = 0.0
    stalled_now: bool = False
    started: bool = False

    def __post_init__(self):
        if not self.file_size_bits > 0:
            raise ValueError("file_size_bits must be > 0")
        if not 0 <= self.downloaded_bits <= self.file_size_bits:
            raise ValueError("downloaded bits must lie in [0, S]")
        if not 0.0 <= self.engagement_sensitivity <= 1.0:
            raise ValueError("engagement_sensitivity must lie in [0, 1]")

    @property
    def complete(self) -> bool:
        return self.downloaded_bits >= self.file_size_bits


@dataclass
class EngagementRecord:
    """Per-slot samples of download ratio and throughput for one user."""

    ratio: list = field(default_factory=list)
    throughput_bps: list = field(default_factory=list)

    def add(self, r: float, c: float) -> None:
        self.ratio.append(float(r))
        self.throughput_bps.append(float(c))

    def __len__(self):
        return len(self.ratio)


def new_session(file_size_bits: float, quality_level: int,
                engagement_sensitivity: float = 1.0) -> VideoSession:
    return VideoSession(file_size_bits=file_size_bits, quality_level=quality_level,
                        engagement_sensitivity=engagement_sensitivity)


def download_ratio(session: VideoSession) -> float:
    """``R = D / S``."""
    return session.downloaded_bits / session.file_size_bits


def step_playback(session: VideoSession, delivered_bits: float, slot_duration_s: float,
                  ladder: Sequence[float], rebuffer_threshold_s: float = 2.0) -> VideoSession:
    """Advance one slot.

    Delivered bits (capped at the remaining file) are added to the buffer at
    the current quality's bitrate. Playback starts or resumes once the buffer
    holds ``rebuffer_threshold_s`` seconds or the whole file has arrived. A
    playing buffer drains by ``slot_duration_s``; emptying it before the
    download completes is a stall.
    """
    if delivered_bits < 0:
        raise ValueError("delivered_bits must be >= 0")
    s = session
    bitrate = float(ladder[s.quality_level])
    take = min(float(delivered_bits), s.file_size_bits - s.downloaded_bits)
    d = s.downloaded_bits + take
    buf = s.buffer_s + take / bitrate
    complete = d >= s.file_size_bits
    playing = s.playing
    started = s.started
    if not playing and buf > EPS and (buf >= rebuffer_threshold_s - EPS or complete):
        playing = True
        started = True

    stalls = s.stall_count
    stalled_now = False
    played = 0.0
    rebuf = s.rebuffer_s
    if playing:
        played = min(buf, slot_duration_s)
        buf -= played
        if buf <= EPS:
            buf = 0.0
            if not complete:
                playing = False
                stalls += 1
                stalled_now = True
            else:
                playing = False
    elif started and not complete:
        rebuf += slot_duration_s
    return replace(s, downloaded_bits=d, buffer_s=buf, playing=playing, stall_count=stalls,
                   played_s=s.played_s + played, played_bits=s.played_bits + played * bitrate,
                   rebuffer_s=rebuf, stalled_now=stalled_now, started=started)


def pearson(record) -> float:
    """Pearson correlation of the record's ``(R, C)`` samples.

    Accepts an :class:`EngagementRecord` or a pair of sequences.

    Examples
    --------
    >>> pearson(([0.1, 0.2, 0.3], [5.0, 7.0, 9.0]))
    1.0
    """
    if isinstance(record, EngagementRecord):
        r, c = record.ratio, record.throughput_bps
    else:
        r, c = record
    r = np.asarray(r, dtype=float)
    c = np.asarray(c, dtype=float)
    if r.shape != c.shape or r.ndim != 1:
        raise ValueError("need two equal-length series")
    if r.size < 2:
        raise UndefinedCorrelationError("need at least two samples")
    dr = r - r.mean()
    dc = c - c.mean()
    sr = math.sqrt(float(np.dot(dr, dr)))
    sc = math.sqrt(float(np.dot(dc, dc)))
    if sr == 0 or sc == 0:
        raise UndefinedCorrelationError("correlation of a constant series is undefined")
    rho = float(np.dot(dr, dc)) / (sr * sc)
    return max(-1.0, min(1.0, rho))


def kqi_loss(session: VideoSession, slot_outcome: tuple[bool, int], *,
             alpha: float = 1.0, beta: float = 0.25, n_levels: int = 4) -> float:
    """``I = sensitivity * (alpha [stalled] + beta (L - q) / L)`` with ``L`` the
    top quality index."""
    stalled, q = slot_outcome
    top = n_levels - 1
    gap = (top - q) / top if top > 0 else 0.0
    return session.engagement_sensitivity * (alpha * float(bool(stalled)) + beta * gap)


def psnr_for_level(level: int, table: Sequence[float]) -> float:
    """Reported PSNR (dB) of a quality level; a fixed lookup."""
    return float(table[level])


def is_stalled(session: VideoSession) -> bool:
    """Waiting on an empty buffer after playback has begun (or stalling now)."""
    return session.stalled_now or (session.started and not session.playing
                                   and not session.complete)


def predict_stalled(session: VideoSession, delivered_bits: float, quality_level: int,
                    slot_duration_s: float, ladder: Sequence[float],
                    rebuffer_threshold_s: float = 2.0) -> bool:
    """Whether :func:`is_stalled` would hold after one :func:`step_playback`
    at ``quality_level``; same rules, without building a new session."""
    s = session
    take = min(float(delivered_bits), s.file_size_bits - s.downloaded_bits)
    complete = s.downloaded_bits + take >= s.file_size_bits
    buf = s.buffer_s + take / float(ladder[quality_level])
    playing = s.playing
    started = s.started
    if not playing and buf > EPS and (buf >= rebuffer_threshold_s - EPS or complete):
        playing = True
        started = True
    if playing:
        buf -= min(buf, slot_duration_s)
        if buf <= EPS:
            return not complete
        return False
    return started and not complete
