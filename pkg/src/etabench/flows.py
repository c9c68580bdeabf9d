"""Bidirectional flow assembly and flow-level feature extraction.

Packets sharing a canonical 5-tuple form a flow; a quiet gap longer than the
flow timeout closes the current episode and starts a new one. The forward
direction belongs to whichever endpoint sent the first packet of the episode.
Durations, inter-arrival times and rates are in seconds. Packet length means
payload length throughout.

Every derived feature (means, ratios, rates) is produced by evaluating the
schema formula on the base features, so the emitted vectors satisfy the
schema's derived relations by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pcap import PacketRecord
from .schema import ConstraintKind, FeatureSchema, FeatureSpec, Formula

__all__ = ["FlowKey", "flow_schema", "extract_flow_features", "FLOW_TIMEOUT", "IDLE_THRESHOLD"]

FLOW_TIMEOUT = 120.0
IDLE_THRESHOLD = 1.0

_URG, _ACK, _PSH, _SYN = 0x20, 0x10, 0x08, 0x02


@dataclass(frozen=True)
class FlowKey:
    """Canonical bidirectional 5-tuple: endpoint pair sorted, protocol kept."""

    a_ip: str
    a_port: int
    b_ip: str
    b_port: int
    protocol: str

    @staticmethod
    def of(pkt: PacketRecord) -> "FlowKey":
        a = (pkt.src_ip, pkt.src_port)
        b = (pkt.dst_ip, pkt.dst_port)
        if b < a:
            a, b = b, a
        return FlowKey(a[0], a[1], b[0], b[1], pkt.protocol)


def _q(name: str) -> str:
    return f'"{name}"'


def flow_schema(attack_type: str = "Generic") -> FeatureSchema:
    """The shipped flow feature schema (31 features).

    Constraint assignment follows what an attacker who owns only the initiating
    endpoint can do: forward-direction volume and all timing can be shaped
    (clip, ranges fitted later per attack type), backward-direction totals and
    protocol flag counts cannot (mask), and every mean/ratio/rate is derived.
    """
    F, M, C = ConstraintKind.FREE, ConstraintKind.MASKED, ConstraintKind.RANGE_CLIPPED

    def clip(name):
        return FeatureSpec(name, C)

    def mask(name):
        return FeatureSpec(name, M)

    def derived(name, expr):
        return FeatureSpec(name, ConstraintKind.DERIVED, formula=Formula(expr))

    total_len = f"({_q('Total Length of Fwd Packets')} + {_q('Total Length of Bwd Packets')})"
    total_cnt = f"({_q('Total Fwd Packets')} + {_q('Total Bwd Packets')})"
    specs = [
        clip("Flow Duration"),
        clip("Total Fwd Packets"),
        mask("Total Bwd Packets"),
        clip("Total Length of Fwd Packets"),
        mask("Total Length of Bwd Packets"),
        clip("Fwd Packet Length Max"),
        clip("Fwd Packet Length Min"),
        derived(
            "Fwd Packet Length Mean",
            f"{_q('Total Length of Fwd Packets')} / {_q('Total Fwd Packets')}",
        ),
        derived(
            "Bwd Packet Length Mean",
            f"{_q('Total Length of Bwd Packets')} / {_q('Total Bwd Packets')}",
        ),
        clip("Min Packet Length"),
        clip("Max Packet Length"),
        derived("Packet Length Mean", f"{total_len} / {total_cnt}"),
        derived("Flow Bytes/s", f"{total_len} / {_q('Flow Duration')}"),
        derived("Flow Packets/s", f"{total_cnt} / {_q('Flow Duration')}"),
        clip("Flow IAT Mean"),
        clip("Flow IAT Max"),
        clip("Flow IAT Min"),
        clip("Fwd IAT Total"),
        clip("Fwd IAT Mean"),
        mask("Bwd IAT Total"),
        mask("URG Flag Count"),
        mask("PSH Flag Count"),
        mask("ACK Flag Count"),
        mask("SYN Flag Count"),
        derived(
            "Down/Up Ratio", f"{_q('Total Bwd Packets')} / {_q('Total Fwd Packets')}"
        ),
        clip("Active Mean"),
        clip("Active Max"),
        clip("Active Min"),
        clip("Idle Mean"),
        clip("Idle Max"),
        clip("Idle Min"),
    ]
    return FeatureSchema(attack_type=attack_type, label_column="Label", features=specs)


class _Running:
    """Sum/count/min/max accumulator; empty -> all zeros."""

    __slots__ = ("total", "count", "mn", "mx")

    def __init__(self):
        self.total = 0.0
        self.count = 0
        self.mn = None
        self.mx = None

    def add(self, v: float):
        self.total += v
        self.count += 1
        self.mn = v if self.mn is None else min(self.mn, v)
        self.mx = v if self.mx is None else max(self.mx, v)

    @property
    def mean(self):
        return self.total / self.count if self.count else 0.0

    @property
    def minimum(self):
        return self.mn if self.count else 0.0

    @property
    def maximum(self):
        return self.mx if self.count else 0.0


class FlowAccumulator:
    """Running per-episode state for one flow."""

    def __init__(self, first: PacketRecord, idle_threshold: float):
        self.initiator = (first.src_ip, first.src_port)
        self.start = first.timestamp
        self.last = first.timestamp
        self.last_fwd = None
        self.last_bwd = None
        self.idle_threshold = idle_threshold
        self.fwd_count = 0
        self.bwd_count = 0
        self.fwd_bytes = 0.0
        self.bwd_bytes = 0.0
        self.fwd_len = _Running()
        self.all_len = _Running()
        self.flow_iat = _Running()
        self.fwd_iat = _Running()
        self.bwd_iat = _Running()
        self.active = _Running()
        self.idle = _Running()
        self.flags = {"urg": 0, "psh": 0, "ack": 0, "syn": 0}
        self.active_start = first.timestamp
        self.add(first)

    def add(self, pkt: PacketRecord):
        gap = pkt.timestamp - self.last
        if self.fwd_count + self.bwd_count > 0:
            self.flow_iat.add(gap)
            if gap > self.idle_threshold:
                self.active.add(self.last - self.active_start)
                self.idle.add(gap)
                self.active_start = pkt.timestamp
        self.last = max(self.last, pkt.timestamp)

        forward = (pkt.src_ip, pkt.src_port) == self.initiator
        size = float(pkt.payload_len)
        self.all_len.add(size)
        if forward:
            if self.last_fwd is not None:
                self.fwd_iat.add(pkt.timestamp - self.last_fwd)
            self.last_fwd = pkt.timestamp
            self.fwd_count += 1
            self.fwd_bytes += size
            self.fwd_len.add(size)
        else:
            if self.last_bwd is not None:
                self.bwd_iat.add(pkt.timestamp - self.last_bwd)
            self.last_bwd = pkt.timestamp
            self.bwd_count += 1
            self.bwd_bytes += size
        if pkt.flags & _URG:
            self.flags["urg"] += 1
        if pkt.flags & _PSH:
            self.flags["psh"] += 1
        if pkt.flags & _ACK:
            self.flags["ack"] += 1
        if pkt.flags & _SYN:
            self.flags["syn"] += 1

    def finish(self, schema: FeatureSchema) -> np.ndarray:
        self.active.add(self.last - self.active_start)
        base = {
            "Flow Duration": self.last - self.start,
            "Total Fwd Packets": float(self.fwd_count),
            "Total Bwd Packets": float(self.bwd_count),
            "Total Length of Fwd Packets": self.fwd_bytes,
            "Total Length of Bwd Packets": self.bwd_bytes,
            "Fwd Packet Length Max": self.fwd_len.maximum,
            "Fwd Packet Length Min": self.fwd_len.minimum,
            "Min Packet Length": self.all_len.minimum,
            "Max Packet Length": self.all_len.maximum,
            "Flow IAT Mean": self.flow_iat.mean,
            "Flow IAT Max": self.flow_iat.maximum,
            "Flow IAT Min": self.flow_iat.minimum,
            "Fwd IAT Total": self.fwd_iat.total,
            "Fwd IAT Mean": self.fwd_iat.mean,
            "Bwd IAT Total": self.bwd_iat.total,
            "URG Flag Count": float(self.flags["urg"]),
            "PSH Flag Count": float(self.flags["psh"]),
            "ACK Flag Count": float(self.flags["ack"]),
            "SYN Flag Count": float(self.flags["syn"]),
            "Active Mean": self.active.mean,
            "Active Max": self.active.maximum,
            "Active Min": self.active.minimum,
            "Idle Mean": self.idle.mean,
            "Idle Max": self.idle.maximum,
            "Idle Min": self.idle.minimum,
        }
        vec = np.zeros(schema.n_features)
        for i, spec in enumerate(schema.features):
            if spec.kind is not ConstraintKind.DERIVED:
                vec[i] = base.get(spec.name, 0.0)
        return schema.evaluate_derived(vec)


def extract_flow_features(
    packets: list[PacketRecord],
    timeout: float = FLOW_TIMEOUT,
    idle_threshold: float = IDLE_THRESHOLD,
    schema: FeatureSchema | None = None,
) -> tuple[np.ndarray, list[FlowKey]]:
    """Group packets into flow episodes and emit one feature vector each.

    Returns (matrix of shape (n_flows, n_features), flow key per row). Rows
    appear in episode completion order (by first-packet time).
    """
    if schema is None:
        schema = flow_schema()
    ordered = sorted(packets, key=lambda p: p.timestamp)
    open_flows: dict[FlowKey, FlowAccumulator] = {}
    episodes: list[tuple[float, FlowKey, FlowAccumulator]] = []
    for pkt in ordered:
        key = FlowKey.of(pkt)
        acc = open_flows.get(key)
        if acc is not None and pkt.timestamp - acc.last > timeout:
            episodes.append((acc.start, key, acc))
            acc = None
        if acc is None:
            open_flows[key] = FlowAccumulator(pkt, idle_threshold)
        else:
            acc.add(pkt)
    for key, acc in open_flows.items():
        episodes.append((acc.start, key, acc))
    episodes.sort(key=lambda item: item[0])
    if not episodes:
        return np.zeros((0, schema.n_features)), []
    X = np.stack([acc.finish(schema) for _, _, acc in episodes])
    return X, [key for _, key, _ in episodes]
