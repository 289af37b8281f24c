"""Flow data model, protocol classes, feature extraction, and flow CSV I/O.

A flow record summarizes one bidirectional five-tuple flow observed outside
the home gateway: per-direction activity statistics plus a coarse protocol
class.  Records carry a context identifier (``home_id``), a day index, and
(for labeled data) the ground-truth device class.

The 28-column feature layout fed to classifiers is fixed:

* positions 0-10: forward activity statistics (see ``STAT_FIELDS`` order),
* positions 11-21: reverse activity statistics in the same order,
* positions 22-27: protocol one-hot (HTTP, TLS, DNS, NTP, OTHER_TCP,
  OTHER_UDP).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

SECONDS_PER_DAY = 86_400.0

SMALL_PAYLOAD_LIMIT = 60    # payload < 60 bytes counts as small
LARGE_PAYLOAD_LIMIT = 220   # payload >= 220 bytes counts as large


class ProtocolClass(Enum):
    """Coarse flow protocol class; enum order fixes the one-hot layout."""

    HTTP = 0
    TLS = 1
    DNS = 2
    NTP = 3
    OTHER_TCP = 4
    OTHER_UDP = 5


PROTOCOL_TOKENS = {p.name: p for p in ProtocolClass}


class FlowParseError(ValueError):
    """Raised when a flow CSV row cannot be parsed; carries the line number."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


@dataclass(frozen=True, slots=True)
class PacketObservation:
    """One packet inside a flow: arrival time, wire size, payload size."""

    arrival_time: float
    wire_bytes: int
    payload_bytes: int

    def __post_init__(self):
        if self.arrival_time < 0:
            raise ValueError(f"negative arrival_time {self.arrival_time}")
        if self.wire_bytes <= 0:
            raise ValueError(f"non-positive wire_bytes {self.wire_bytes}")
        if self.payload_bytes < 0:
            raise ValueError(f"negative payload_bytes {self.payload_bytes}")
        if self.payload_bytes > self.wire_bytes:
            raise ValueError(
                f"payload_bytes {self.payload_bytes} exceeds wire_bytes {self.wire_bytes}"
            )


# Field order mirrors the flow CSV stat columns and feature positions 0-10.
STAT_FIELDS = (
    "packet_total_count",
    "octet_total_count",
    "small_packet_count",
    "large_packet_count",
    "non_empty_packet_count",
    "data_byte_count",
    "average_interarrival_time",
    "first_non_empty_packet_size",
    "max_packet_size",
    "stddev_payload_length",
    "stddev_interarrival_time",
)

# Stat fields carrying real values; the rest are non-negative integers.
REAL_STAT_FIELDS = frozenset(
    {"average_interarrival_time", "stddev_payload_length", "stddev_interarrival_time"}
)


@dataclass(frozen=True, slots=True)
class ActivityStats:
    """Per-direction activity statistics of one flow."""

    packet_total_count: int = 0
    octet_total_count: int = 0
    small_packet_count: int = 0
    large_packet_count: int = 0
    non_empty_packet_count: int = 0
    data_byte_count: int = 0
    average_interarrival_time: float = 0.0
    first_non_empty_packet_size: int = 0
    max_packet_size: int = 0
    stddev_payload_length: float = 0.0
    stddev_interarrival_time: float = 0.0

    def __post_init__(self):
        for name in STAT_FIELDS:
            value = getattr(self, name)
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
            if name in REAL_STAT_FIELDS and not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.small_packet_count + self.large_packet_count > self.packet_total_count:
            raise ValueError("small + large packet counts exceed packet total")
        if self.non_empty_packet_count > self.packet_total_count:
            raise ValueError("non-empty packet count exceeds packet total")
        if self.data_byte_count > self.octet_total_count:
            raise ValueError("data byte count exceeds octet total")
        if self.first_non_empty_packet_size > self.max_packet_size:
            raise ValueError("first non-empty payload size exceeds max payload size")
        if self.packet_total_count == 0 and any(getattr(self, n) != 0 for n in STAT_FIELDS):
            raise ValueError("empty flow direction must have all-zero statistics")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in STAT_FIELDS)


ZERO_STATS = ActivityStats()


@dataclass(frozen=True, slots=True)
class FlowRecord:
    """One bidirectional flow observation with context and day metadata."""

    home_id: str
    device_class: Optional[str]
    day_index: int
    timestamp: float
    protocol: ProtocolClass
    forward: ActivityStats
    reverse: ActivityStats

    def __post_init__(self):
        if self.day_index < 0:
            raise ValueError(f"negative day_index {self.day_index}")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if self.day_index != int(self.timestamp // SECONDS_PER_DAY):
            raise ValueError(
                f"day_index {self.day_index} inconsistent with timestamp {self.timestamp}"
            )


def aggregate_packets(packets: Sequence[PacketObservation]) -> ActivityStats:
    """Aggregate an arrival-time-ordered packet sequence into ActivityStats.

    Inter-arrival statistics are computed over consecutive arrival-time
    differences and default to 0 when fewer than two packets are present.
    Standard deviations are population standard deviations; payload-size
    statistics run over all packets' payload lengths (zeros included),
    except ``first_non_empty_packet_size`` which skips empty packets.
    """
    n = len(packets)
    if n == 0:
        return ZERO_STATS

    octets = 0
    data_bytes = 0
    small = 0
    large = 0
    non_empty = 0
    first_ne = 0
    max_payload = 0
    payload_sum = 0
    payload_sq_sum = 0.0
    prev_time = None
    gap_sum = 0.0
    gap_sq_sum = 0.0

    for pkt in packets:
        if prev_time is not None:
            gap = pkt.arrival_time - prev_time
            if gap < 0:
                raise ValueError("packets must be sorted by arrival_time ascending")
            gap_sum += gap
            gap_sq_sum += gap * gap
        prev_time = pkt.arrival_time

        payload = pkt.payload_bytes
        octets += pkt.wire_bytes
        data_bytes += payload
        payload_sum += payload
        payload_sq_sum += float(payload) * payload
        if payload < SMALL_PAYLOAD_LIMIT:
            small += 1
        if payload >= LARGE_PAYLOAD_LIMIT:
            large += 1
        if payload > 0:
            if non_empty == 0:
                first_ne = payload
            non_empty += 1
        if payload > max_payload:
            max_payload = payload

    payload_mean = payload_sum / n
    payload_var = max(payload_sq_sum / n - payload_mean * payload_mean, 0.0)
    if n >= 2:
        gaps = n - 1
        gap_mean = gap_sum / gaps
        gap_var = max(gap_sq_sum / gaps - gap_mean * gap_mean, 0.0)
    else:
        gap_mean = 0.0
        gap_var = 0.0

    return ActivityStats(
        packet_total_count=n,
        octet_total_count=octets,
        small_packet_count=small,
        large_packet_count=large,
        non_empty_packet_count=non_empty,
        data_byte_count=data_bytes,
        average_interarrival_time=gap_mean,
        first_non_empty_packet_size=first_ne,
        max_packet_size=max_payload,
        stddev_payload_length=math.sqrt(payload_var),
        stddev_interarrival_time=math.sqrt(gap_var),
    )


def classify_protocol(ip_protocol: int, dst_port: int) -> ProtocolClass:
    """Map (IP protocol number, destination port) to a ProtocolClass.

    Port-based heuristic emulating post-NAT flow-level visibility:
    TCP/80 -> HTTP, TCP/443 -> TLS, port 53 (either transport) -> DNS,
    UDP/123 -> NTP, everything else falls through to OTHER_TCP / OTHER_UDP.
    """
    if ip_protocol not in (6, 17):
        raise ValueError(f"ip_protocol must be 6 (TCP) or 17 (UDP), got {ip_protocol}")
    if not 0 <= dst_port <= 65535:
        raise ValueError(f"dst_port out of range: {dst_port}")
    if dst_port == 53:
        return ProtocolClass.DNS
    if ip_protocol == 6:
        if dst_port == 80:
            return ProtocolClass.HTTP
        if dst_port == 443:
            return ProtocolClass.TLS
        return ProtocolClass.OTHER_TCP
    if dst_port == 123:
        return ProtocolClass.NTP
    return ProtocolClass.OTHER_UDP


N_FEATURES = 28

FEATURE_COLUMNS = (
    tuple(f"fwd_{name}" for name in STAT_FIELDS)
    + tuple(f"rev_{name}" for name in STAT_FIELDS)
    + tuple(f"proto_{p.name.lower()}" for p in ProtocolClass)
)


def featurize(record: FlowRecord) -> np.ndarray:
    """Return the fixed-order 28-value feature vector of a flow record.

    No scaling or normalization is applied at this layer.
    """
    vec = np.zeros(N_FEATURES, dtype=np.float64)
    vec[0:11] = record.forward.as_tuple()
    vec[11:22] = record.reverse.as_tuple()
    vec[22 + record.protocol.value] = 1.0
    return vec


def featurize_records(records: Sequence[FlowRecord]) -> np.ndarray:
    """Featurize a record sequence into an (n, 28) matrix."""
    out = np.zeros((len(records), N_FEATURES), dtype=np.float64)
    for i, rec in enumerate(records):
        out[i, 0:11] = rec.forward.as_tuple()
        out[i, 11:22] = rec.reverse.as_tuple()
        out[i, 22 + rec.protocol.value] = 1.0
    return out


def check_feature_vector(vec: np.ndarray) -> None:
    """Raise ValueError unless ``vec`` satisfies the feature-vector contract."""
    if vec.shape != (N_FEATURES,):
        raise ValueError(f"feature vector must have length {N_FEATURES}, got {vec.shape}")
    if not np.all(np.isfinite(vec)) or np.any(vec < 0):
        raise ValueError("feature values must be finite and non-negative")
    one_hot = vec[22:28]
    if not np.all(np.isin(one_hot, (0.0, 1.0))) or one_hot.sum() != 1.0:
        raise ValueError("protocol one-hot block must contain exactly one 1")


# ---------------------------------------------------------------------------
# Flow CSV format (version 1)
#
# UTF-8, header row, 27 columns: home_id, device_class, day_index, timestamp,
# protocol, 11 fwd_* stat columns, 11 rev_* stat columns.  Real-valued fields
# are printed with exactly 6 decimal places; integers are printed bare.
# ---------------------------------------------------------------------------

CSV_STAT_NAMES = (
    "pkts", "octets", "small", "large", "nonempty", "data_bytes",
    "iat_mean", "first_ne", "max_payload", "payload_std", "iat_std",
)

CSV_HEADER = (
    "home_id,device_class,day_index,timestamp,protocol,"
    + ",".join(f"fwd_{c}" for c in CSV_STAT_NAMES)
    + ","
    + ",".join(f"rev_{c}" for c in CSV_STAT_NAMES)
)

N_CSV_COLUMNS = 27


def _format_stats(stats: ActivityStats) -> list[str]:
    out = []
    for name in STAT_FIELDS:
        value = getattr(stats, name)
        out.append(f"{value:.6f}" if name in REAL_STAT_FIELDS else str(int(value)))
    return out


def serialize_flow_row(record: FlowRecord) -> str:
    """Serialize a record into one flow CSV line (without newline)."""
    cols = [
        record.home_id,
        record.device_class or "",
        str(record.day_index),
        f"{record.timestamp:.6f}",
        record.protocol.name,
    ]
    cols += _format_stats(record.forward)
    cols += _format_stats(record.reverse)
    return ",".join(cols)


def _parse_stats(cols: list[str], line_number: Optional[int]) -> ActivityStats:
    values = {}
    for name, token in zip(STAT_FIELDS, cols):
        try:
            values[name] = float(token) if name in REAL_STAT_FIELDS else int(token)
        except ValueError:
            raise FlowParseError(
                f"non-numeric field {name!r}: {token!r}", line_number
            ) from None
    try:
        return ActivityStats(**values)
    except ValueError as exc:
        raise FlowParseError(f"violated invariant: {exc}", line_number) from None


def parse_flow_row(row: str, line_number: Optional[int] = None) -> FlowRecord:
    """Parse one flow CSV line into a FlowRecord.

    Raises FlowParseError (with the line number, when given) on column count
    mismatch, non-numeric fields, unknown protocol tokens, or violated
    record invariants.
    """
    cols = row.rstrip("\r\n").split(",")
    if len(cols) != N_CSV_COLUMNS:
        raise FlowParseError(
            f"column count mismatch: expected {N_CSV_COLUMNS}, got {len(cols)}",
            line_number,
        )
    home_id = cols[0]
    device_class = cols[1] or None
    try:
        day_index = int(cols[2])
        timestamp = float(cols[3])
    except ValueError:
        raise FlowParseError(
            f"non-numeric field in day_index/timestamp: {cols[2]!r}, {cols[3]!r}",
            line_number,
        ) from None
    proto = PROTOCOL_TOKENS.get(cols[4])
    if proto is None:
        raise FlowParseError(f"unknown protocol token {cols[4]!r}", line_number)
    forward = _parse_stats(cols[5:16], line_number)
    reverse = _parse_stats(cols[16:27], line_number)
    try:
        return FlowRecord(
            home_id=home_id,
            device_class=device_class,
            day_index=day_index,
            timestamp=timestamp,
            protocol=proto,
            forward=forward,
            reverse=reverse,
        )
    except ValueError as exc:
        raise FlowParseError(f"violated invariant: {exc}", line_number) from None


def write_flow_csv(path: str | Path, records: Iterable[FlowRecord]) -> None:
    """Write records to a flow CSV file (header + one line per record)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            fh.write(serialize_flow_row(rec) + "\n")


def iter_flow_csv(path: str | Path) -> Iterator[FlowRecord]:
    """Yield records from a flow CSV file, validating the header."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n")
        if header != CSV_HEADER:
            raise FlowParseError(f"unexpected header in {path}", line_number=1)
        for line_number, line in enumerate(fh, start=2):
            if line.strip():
                yield parse_flow_row(line, line_number)


def read_flow_csv(path: str | Path) -> list[FlowRecord]:
    return list(iter_flow_csv(path))
