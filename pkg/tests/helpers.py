"""Shared fixtures-by-hand: raw pcap bytes and synthetic datasets."""

from __future__ import annotations

import struct

import numpy as np

from etabench.dataset import Dataset
from etabench.schema import ConstraintKind, FeatureSchema, FeatureSpec, Formula


# ---------------------------------------------------------------------------
# byte-level pcap construction (independent of the parser under test)
# ---------------------------------------------------------------------------


def ipv4(addr: str) -> bytes:
    return bytes(int(p) for p in addr.split("."))


def tcp_frame(
    src="10.0.0.1",
    dst="10.0.0.2",
    sport=1234,
    dport=80,
    payload=b"",
    flags=0x10,
    ihl_words=5,
    data_off_words=5,
):
    ip_header_len = ihl_words * 4
    tcp_header_len = data_off_words * 4
    total = ip_header_len + tcp_header_len + len(payload)
    ip = struct.pack(
        "!BBHHHBBH4s4s",
        (4 << 4) | ihl_words,
        0,
        total,
        0,
        0,
        64,
        6,
        0,
        ipv4(src),
        ipv4(dst),
    )
    ip += b"\x00" * (ip_header_len - 20)
    tcp = struct.pack(
        "!HHIIBBHHH", sport, dport, 0, 0, (data_off_words << 4), flags, 8192, 0, 0
    )
    tcp += b"\x00" * (tcp_header_len - 20)
    eth = b"\xaa" * 6 + b"\xbb" * 6 + struct.pack("!H", 0x0800)
    return eth + ip + tcp + payload


def udp_frame(src="10.0.0.1", dst="10.0.0.2", sport=53, dport=5353, payload=b""):
    udp_len = 8 + len(payload)
    total = 20 + udp_len
    ip = struct.pack(
        "!BBHHHBBH4s4s", 0x45, 0, total, 0, 0, 64, 17, 0, ipv4(src), ipv4(dst)
    )
    udp = struct.pack("!HHHH", sport, dport, udp_len, 0)
    eth = b"\xaa" * 6 + b"\xbb" * 6 + struct.pack("!H", 0x0800)
    return eth + ip + udp + payload


def arp_frame():
    eth = b"\xaa" * 6 + b"\xbb" * 6 + struct.pack("!H", 0x0806)
    return eth + b"\x00" * 28


def pcap_bytes(timed_frames, endian="<"):
    """Classic pcap file from (timestamp, frame bytes) pairs."""
    head = struct.pack(endian + "IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    out = [head]
    for ts, frame in timed_frames:
        sec = int(ts)
        usec = int(round((ts - sec) * 1e6))
        out.append(struct.pack(endian + "IIII", sec, usec, len(frame), len(frame)))
        out.append(frame)
    return b"".join(out)


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------


def free_schema(n, attack_type="Synth"):
    return FeatureSchema(
        attack_type, "Label", [FeatureSpec(f"f{i}", ConstraintKind.FREE) for i in range(n)]
    )


def blob_dataset(
    n_rows=1000,
    n_features=10,
    seed=0,
    benign_center=0.3,
    malicious_center=0.7,
    spread=0.1,
    schema=None,
):
    """Two Gaussian blobs separated along every coordinate, labels balanced."""
    rng = np.random.default_rng(seed)
    half = n_rows // 2
    X0 = rng.normal(benign_center, spread, (n_rows - half, n_features))
    X1 = rng.normal(malicious_center, spread, (half, n_features))
    X = np.vstack([X0, X1])
    y = np.array([0] * (n_rows - half) + [1] * half)
    order = rng.permutation(n_rows)
    if schema is None:
        schema = free_schema(n_features)
    return Dataset(X[order], y[order], schema)


PLANTED = [f"p{i}" for i in range(6)]
DISTRACTORS = [f"d{i}" for i in range(12)]
MASKED_STRONG = [f"m{i}" for i in range(3)]


def planted_dataset(n_rows=3000, seed=0):
    """Dataset with six planted non-robust features.

    Planted features: strongly separating, freely modifiable, malicious depths
    spread out so single-feature probes flip a solid fraction of rows.
    Distractors: weaker but real signal, modifiable; they make unfocused
    gradient estimates noisy. Masked trio: moderately strong signal an
    attacker cannot touch, which detectors fall back on once the planted
    features are gone.
    """
    rng = np.random.default_rng(seed)
    half = n_rows // 2
    n_b, n_m = n_rows - half, half

    def cols(n, center, s):
        return rng.normal(center, s, (n, 1))

    benign, malicious = [], []
    for _ in PLANTED:
        benign.append(cols(n_b, 0.12, 0.06))
        malicious.append(rng.uniform(0.45, 0.95, (n_m, 1)))
    for _ in DISTRACTORS:
        benign.append(cols(n_b, 0.35, 0.15))
        malicious.append(cols(n_m, 0.65, 0.15))
    for _ in MASKED_STRONG:
        benign.append(cols(n_b, 0.3, 0.14))
        malicious.append(cols(n_m, 0.7, 0.14))
    X = np.vstack([np.hstack(benign), np.hstack(malicious)])
    y = np.array([0] * n_b + [1] * n_m)
    order = rng.permutation(n_rows)

    specs = [FeatureSpec(n, ConstraintKind.FREE) for n in PLANTED]
    specs += [FeatureSpec(n, ConstraintKind.FREE) for n in DISTRACTORS]
    specs += [FeatureSpec(n, ConstraintKind.MASKED) for n in MASKED_STRONG]
    schema = FeatureSchema("Synth", "Label", specs)
    return Dataset(X[order], y[order], schema)


def constrained_schema():
    """Small schema exercising every constraint kind."""
    return FeatureSchema(
        "Synth",
        "Label",
        [
            FeatureSpec("total", ConstraintKind.RANGE_CLIPPED),
            FeatureSpec("count", ConstraintKind.RANGE_CLIPPED),
            FeatureSpec("locked", ConstraintKind.MASKED),
            FeatureSpec("mean", ConstraintKind.DERIVED, formula=Formula('"total" / "count"')),
            FeatureSpec("drift", ConstraintKind.FREE),
        ],
    )


def constrained_dataset(n_rows=2400, seed=6):
    """Rows for constrained_schema whose mean column satisfies the formula
    exactly, so remapping is a no-op on clean data."""
    rng = np.random.default_rng(seed)
    half = n_rows // 2
    n_b, n_m = n_rows - half, half
    count = rng.integers(2, 7, size=n_rows).astype(float)
    total = np.concatenate([rng.normal(40, 5, n_b), rng.normal(80, 6, n_m)])
    locked = np.concatenate([rng.normal(0.3, 0.1, n_b), rng.normal(0.7, 0.1, n_m)])
    drift = np.concatenate([rng.normal(0.3, 0.1, n_b), rng.normal(0.7, 0.1, n_m)])
    X = np.column_stack([total, count, locked, total / count, drift])
    y = np.array([0] * n_b + [1] * n_m)
    order = rng.permutation(n_rows)
    return Dataset(X[order], y[order], constrained_schema())


def planted_weak_dataset(n_weak=100, n_rows=5000, seed=5):
    """Six strong planted features beside many weakly separating background
    features, everything freely modifiable.

    An unfocused attack flips a smooth model through the collective weight of
    the background columns without pushing the planted ones far; a masked
    attack has to drive the planted features deep into benign territory.
    Models that split on the planted features treat the two outcomes very
    differently, which is what selection-mask studies need.
    """
    rng = np.random.default_rng(seed)
    half = n_rows // 2
    n_b, n_m = n_rows - half, half
    weak = [f"w{i}" for i in range(n_weak)]
    benign, malicious = [], []
    for _ in PLANTED:
        benign.append(rng.normal(0.12, 0.06, (n_b, 1)))
        malicious.append(rng.uniform(0.45, 0.95, (n_m, 1)))
    for _ in weak:
        benign.append(rng.normal(0.46, 0.08, (n_b, 1)))
        malicious.append(rng.normal(0.54, 0.08, (n_m, 1)))
    X = np.vstack([np.hstack(benign), np.hstack(malicious)])
    y = np.array([0] * n_b + [1] * n_m)
    order = rng.permutation(n_rows)
    schema = FeatureSchema(
        "Synth", "Label", [FeatureSpec(n, ConstraintKind.FREE) for n in PLANTED + weak]
    )
    return Dataset(X[order], y[order], schema)


CLIPPED_NARROW = [f"c{i}" for i in range(12)]


def removal_dataset(n_rows=4000, seed=7):
    """Planted free features beside narrowly separated clipped features and a
    strong masked trio.

    Once the planted features are dropped, a detector must lean on signal the
    attack cannot reach: the masked trio is untouchable and the clipped
    columns barely move inside ranges fitted on malicious traffic.
    """
    rng = np.random.default_rng(seed)
    half = n_rows // 2
    n_b, n_m = n_rows - half, half
    benign, malicious = [], []
    for _ in PLANTED:
        benign.append(rng.normal(0.12, 0.06, (n_b, 1)))
        malicious.append(rng.uniform(0.45, 0.95, (n_m, 1)))
    for _ in CLIPPED_NARROW:
        benign.append(rng.normal(0.645, 0.03, (n_b, 1)))
        malicious.append(rng.normal(0.655, 0.03, (n_m, 1)))
    for _ in MASKED_STRONG:
        benign.append(rng.normal(0.25, 0.10, (n_b, 1)))
        malicious.append(rng.normal(0.75, 0.10, (n_m, 1)))
    X = np.vstack([np.hstack(benign), np.hstack(malicious)])
    y = np.array([0] * n_b + [1] * n_m)
    order = rng.permutation(n_rows)
    specs = [FeatureSpec(n, ConstraintKind.FREE) for n in PLANTED]
    specs += [FeatureSpec(n, ConstraintKind.RANGE_CLIPPED) for n in CLIPPED_NARROW]
    specs += [FeatureSpec(n, ConstraintKind.MASKED) for n in MASKED_STRONG]
    return Dataset(X[order], y[order], FeatureSchema("Synth", "Label", specs))
