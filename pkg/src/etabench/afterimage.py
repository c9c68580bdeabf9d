"""Damped incremental statistics over packet streams.

Each window keeps the triple (w, LS, SS) and decays it by 2^(-lam*dt) before
folding in a new value, so recent traffic dominates and old traffic fades at a
rate set by lam. Mean and variance come straight from the decayed triple:
mean = LS/w, var = SS/w - mean^2.

Per packet we maintain one payload-size statistic and one jitter (inter-arrival
gap) statistic per window and emit, window by window,

    [size weight, size mean, size variance,
     jitter weight, jitter mean, jitter variance]

The default window set spans lam = 5 down to 0.01 (roughly 100 ms to minutes of
memory). One capture is one stream; statistics are not keyed per host.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .pcap import PacketRecord
from .schema import ConstraintKind, FeatureSchema, FeatureSpec

__all__ = [
    "DEFAULT_LAMBDAS",
    "DampedWindowStat",
    "packet_schema",
    "extract_packet_features",
]

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (5.0, 3.0, 1.0, 0.1, 0.01)

_PER_WINDOW = ("size weight", "size mean", "size variance",
               "jitter weight", "jitter mean", "jitter variance")


@dataclass
class DampedWindowStat:
    """One decayed (w, LS, SS) triple.

    A negative time step would *grow* the triple, which reordered captures can
    produce; the decay factor is clamped to 1 and the event counted instead.
    """

    lam: float
    w: float = 0.0
    ls: float = 0.0
    ss: float = 0.0
    last_ts: float | None = None
    clock_skew_events: int = field(default=0, compare=False)

    def update(self, ts: float, value: float) -> None:
        if self.last_ts is not None:
            dt = ts - self.last_ts
            if dt < 0:
                self.clock_skew_events += 1
                log.warning("negative time step %.6f; decay clamped", dt)
                factor = 1.0
            else:
                factor = 2.0 ** (-self.lam * dt)
            self.w *= factor
            self.ls *= factor
            self.ss *= factor
        self.last_ts = ts
        self.w += 1.0
        self.ls += value
        self.ss += value * value

    @property
    def mean(self) -> float:
        return self.ls / self.w if self.w > 0 else 0.0

    @property
    def variance(self) -> float:
        if self.w <= 0:
            return 0.0
        m = self.ls / self.w
        return max(self.ss / self.w - m * m, 0.0)


def packet_schema(
    lambdas=DEFAULT_LAMBDAS,
    free_window: int = 0,
    attack_type: str = "Mirai",
) -> FeatureSchema:
    """Schema for the per-packet damped-window features.

    Only one window's six features are modifiable; an attacker shaping traffic
    at one timescale inevitably drags the other windows along, so those stay
    masked rather than pretending they can be steered independently.
    """
    if not 0 <= free_window < len(lambdas):
        raise ValueError("free_window outside the lambda list")
    specs = []
    for wi in range(len(lambdas)):
        kind = ConstraintKind.FREE if wi == free_window else ConstraintKind.MASKED
        for part in _PER_WINDOW:
            specs.append(FeatureSpec(f"w{wi} {part}", kind))
    return FeatureSchema(attack_type=attack_type, label_column="Label", features=specs)


def extract_packet_features(
    packets: list[PacketRecord], lambdas=DEFAULT_LAMBDAS
) -> np.ndarray:
    """One feature row per packet: the damped statistics after folding it in."""
    size_stats = [DampedWindowStat(lam) for lam in lambdas]
    jitter_stats = [DampedWindowStat(lam) for lam in lambdas]
    rows = np.zeros((len(packets), 6 * len(lambdas)))
    prev_ts = None
    for r, pkt in enumerate(sorted(packets, key=lambda p: p.timestamp)):
        for wi in range(len(lambdas)):
            size_stats[wi].update(pkt.timestamp, float(pkt.payload_len))
            if prev_ts is not None:
                jitter_stats[wi].update(pkt.timestamp, pkt.timestamp - prev_ts)
            s, j = size_stats[wi], jitter_stats[wi]
            rows[r, 6 * wi : 6 * wi + 6] = (
                s.w, s.mean, s.variance, j.w, j.mean, j.variance,
            )
        prev_ts = pkt.timestamp
    return rows
