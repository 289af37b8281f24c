"""Seeded synthetic flow-record generator for multi-home IoT datasets.

Each device class gets a distinct generative profile: a mixture of flow
archetypes with log-normal packet counts and payload sizes and exponential
inter-arrival gaps.  Spatial drift reparameterizes each home with per-class
log-normal factors (median 1); temporal drift applies scheduled log-scale
step changes to affected classes.  Every random draw flows through a child
seed derived from (master_seed, purpose, home, day, class), so generation
is a pure function of the config regardless of evaluation order.

The default catalog is a 24-type consumer-IoT inventory whose relative
daily flow rates follow realistic per-type record volumes spanning three
orders of magnitude.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .flow import (
    ActivityStats,
    FlowRecord,
    PacketObservation,
    ProtocolClass,
    aggregate_packets,
    write_flow_csv,
)
from .seeding import mix_seed

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT_VERSION = 1

# (device type, per-type record volume) pairs; rates are proportional to
# volume, spanning google_nest down to elecom_scale at roughly 750:1
DEVICE_TYPE_VOLUMES: tuple[tuple[str, int], ...] = (
    ("google_nest", 1_980_998),
    ("google_chromecast", 916_243),
    ("amazon_echo", 632_296),
    ("amazon_fire_tv_remote", 526_872),
    ("atom_camera", 523_321),
    ("amazon_fire_7_tablet", 368_749),
    ("switchbot_humidifier", 246_439),
    ("tp_link_camera", 215_201),
    ("qrio_hub", 209_668),
    ("panasonic_home_unit", 107_225),
    ("switchbot_hub", 97_608),
    ("tp_link_plug", 79_001),
    ("switchbot_plug", 71_269),
    ("irobot_roomba", 61_598),
    ("linkjapan_esensor", 54_012),
    ("meross_plug", 40_792),
    ("meross_lightbulb", 36_373),
    ("tp_link_lightbulb", 30_820),
    ("meross_plug_2", 29_665),
    ("meross_remote", 27_224),
    ("meross_humidifier", 25_825),
    ("withings_sleep_sensor", 15_068),
    ("canon_printer", 6_718),
    ("elecom_scale", 2_641),
)

DEFAULT_CATALOG: tuple[str, ...] = tuple(name for name, _ in DEVICE_TYPE_VOLUMES)
DEFAULT_RATE_WEIGHTS: dict[str, float] = {name: float(v) for name, v in DEVICE_TYPE_VOLUMES}

DEFAULT_MASTER_SEED = 20471

_WIRE_OVERHEAD = 54  # link + IP + transport headers beyond payload
_MAX_PAYLOAD = 1460

# parameter grid giving every class a distinct (packet volume, payload
# size, inter-arrival tempo) combination: 4 x 3 x 2 = 24 cells
_PACKET_MU_LEVELS = (0.8, 1.6, 2.4, 3.2)
_PAYLOAD_MU_LEVELS = (3.4, 4.6, 5.8)
_IAT_RATE_LEVELS = (5.0, 0.5)

_DATA_PROTOCOLS = (
    ProtocolClass.TLS,
    ProtocolClass.HTTP,
    ProtocolClass.OTHER_TCP,
    ProtocolClass.OTHER_UDP,
)


class DriftScope(Enum):
    ALL_HOMES = "ALL_HOMES"
    PER_HOME = "PER_HOME"


@dataclass(frozen=True)
class DriftEvent:
    """A scheduled step change in the behavior of some device classes.

    magnitude is a log-scale shift: affected location parameters move by
    +/- magnitude in log space, direction drawn per (event, class) — and
    per home as well when scope is PER_HOME.
    """

    day: int
    affected_classes: tuple[str, ...]
    magnitude: float
    scope: DriftScope = DriftScope.ALL_HOMES

    def __post_init__(self) -> None:
        if self.day < 0:
            raise ValueError("drift day must be >= 0")
        if self.magnitude <= 0:
            raise ValueError("drift magnitude must be positive")
        if not self.affected_classes:
            raise ValueError("drift event must affect at least one class")
        object.__setattr__(self, "affected_classes", tuple(self.affected_classes))


@dataclass(frozen=True)
class FlowArchetype:
    """One flow pattern within a device profile.

    Packet counts and mean payload size are log-normal (mu/sigma in log
    space, per direction); inter-arrival gaps are exponential with rate
    iat_rate (events per second); small_fraction / large_fraction give the
    probability of a packet drawing a sub-60-byte or 220-plus-byte payload
    instead of one near the flow's mean.
    """

    weight: float
    protocol: ProtocolClass
    fwd_packet_mu: float
    fwd_packet_sigma: float
    rev_packet_mu: float
    rev_packet_sigma: float
    fwd_payload_mu: float
    fwd_payload_sigma: float
    rev_payload_mu: float
    rev_payload_sigma: float
    iat_rate: float
    small_fraction: float
    large_fraction: float

    def __post_init__(self) -> None:
        if not 0 < self.weight <= 1:
            raise ValueError("archetype weight must be in (0, 1]")
        for sigma in (self.fwd_packet_sigma, self.rev_packet_sigma,
                      self.fwd_payload_sigma, self.rev_payload_sigma):
            if sigma < 0:
                raise ValueError("archetype sigma must be >= 0")
        if self.iat_rate <= 0:
            raise ValueError("iat_rate must be positive")
        if self.small_fraction < 0 or self.large_fraction < 0:
            raise ValueError("payload mixture fractions must be >= 0")
        if self.small_fraction + self.large_fraction > 1 + 1e-9:
            raise ValueError("payload mixture fractions must sum to <= 1")


@dataclass(frozen=True)
class DeviceProfile:
    device_class: str
    archetypes: tuple[FlowArchetype, ...]
    daily_flow_rate: float

    def __post_init__(self) -> None:
        if not self.archetypes:
            raise ValueError("profile needs at least one archetype")
        if self.daily_flow_rate <= 0:
            raise ValueError("daily_flow_rate must be positive")
        total = sum(a.weight for a in self.archetypes)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"archetype weights must sum to 1, got {total}")


@dataclass(frozen=True)
class ContextModifier:
    """Per-home multiplicative reparameterization of device behavior.

    For every device class, three strictly positive factors scale the
    modeled quantities (packet volume, payload size, inter-arrival gap);
    factors are log-normal with median 1, so homes vary symmetrically
    around the base profile.
    """

    home_id: str
    class_factors: Mapping[str, tuple[float, float, float]]

    def __post_init__(self) -> None:
        for label, factors in self.class_factors.items():
            if any(f <= 0 for f in factors):
                raise ValueError(f"context factors for {label} must be positive")


@dataclass(frozen=True)
class SynthConfig:
    n_homes: int = 12
    n_days: int = 47
    train_days: int = 30
    class_catalog: tuple[str, ...] = DEFAULT_CATALOG
    spatial_sigma: float = 0.15
    drift_events: tuple[DriftEvent, ...] = ()
    master_seed: int = DEFAULT_MASTER_SEED
    flows_per_home_per_day: float = 250.0
    rate_weights: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        if self.n_homes < 1:
            raise ValueError("n_homes must be >= 1")
        if self.n_days < 1:
            raise ValueError("n_days must be >= 1")
        if not 0 < self.train_days < self.n_days:
            raise ValueError("train_days must satisfy 0 < train_days < n_days")
        if not self.class_catalog:
            raise ValueError("class catalog must be non-empty")
        if len(set(self.class_catalog)) != len(self.class_catalog):
            raise ValueError("class catalog contains duplicates")
        if self.spatial_sigma < 0:
            raise ValueError("spatial_sigma must be >= 0")
        if self.flows_per_home_per_day <= 0:
            raise ValueError("flows_per_home_per_day must be positive")
        object.__setattr__(self, "class_catalog", tuple(self.class_catalog))
        events = tuple(self.drift_events)
        if any(b.day < a.day for a, b in zip(events, events[1:])):
            raise ValueError("drift events must be sorted by day")
        for event in events:
            if event.day >= self.n_days:
                raise ValueError(f"drift event day {event.day} outside dataset range")
            unknown = set(event.affected_classes) - set(self.class_catalog)
            if unknown:
                raise ValueError(f"drift event affects unknown classes: {sorted(unknown)}")
        object.__setattr__(self, "drift_events", events)
        if self.rate_weights is not None:
            missing = set(self.class_catalog) - set(self.rate_weights)
            if missing:
                raise ValueError(f"rate_weights missing classes: {sorted(missing)}")
            if any(self.rate_weights[c] <= 0 for c in self.class_catalog):
                raise ValueError("rate_weights must be positive")

    def home_ids(self) -> tuple[str, ...]:
        return tuple(f"h{i:02d}" for i in range(1, self.n_homes + 1))


def _class_rates(config: SynthConfig) -> dict[str, float]:
    if config.rate_weights is not None:
        weights = {c: float(config.rate_weights[c]) for c in config.class_catalog}
    elif all(c in DEFAULT_RATE_WEIGHTS for c in config.class_catalog):
        weights = {c: DEFAULT_RATE_WEIGHTS[c] for c in config.class_catalog}
    else:
        weights = {c: 1.0 for c in config.class_catalog}
    total = sum(weights.values())
    return {
        c: config.flows_per_home_per_day * weights[c] / total
        for c in config.class_catalog
    }


def build_profiles(config: SynthConfig) -> dict[str, DeviceProfile]:
    """Deterministic per-class generative profiles.

    Classes walk a 24-cell grid of (packet volume, payload size, tempo)
    levels so any catalog up to 24 types is behaviorally separable; a
    label-seeded jitter keeps parameters distinct even on shared cells.
    """
    rates = _class_rates(config)
    profiles: dict[str, DeviceProfile] = {}
    for i, label in enumerate(config.class_catalog):
        rng = np.random.default_rng(mix_seed(config.master_seed, "profile", label))
        pkt_mu = _PACKET_MU_LEVELS[i % 4] + rng.uniform(-0.08, 0.08)
        pay_mu = _PAYLOAD_MU_LEVELS[(i // 4) % 3] + rng.uniform(-0.08, 0.08)
        slow = (i // 12) % 2
        iat_rate = _IAT_RATE_LEVELS[slow] * math.exp(rng.uniform(-0.1, 0.1))
        if slow:
            # interleave the slow-tempo half between the fast lattice
            # points: tempo alone is a single noisy gap on short flows,
            # so no class pair may differ in tempo only
            pkt_mu += 0.4
            pay_mu += 0.5
        pkt_sigma = 0.28 + rng.uniform(0.0, 0.06)
        pay_sigma = 0.18 + rng.uniform(0.0, 0.05)
        data = FlowArchetype(
            weight=1.0,
            protocol=_DATA_PROTOCOLS[i % 4],
            fwd_packet_mu=pkt_mu,
            fwd_packet_sigma=pkt_sigma,
            rev_packet_mu=pkt_mu + 0.4,
            rev_packet_sigma=pkt_sigma,
            fwd_payload_mu=pay_mu,
            fwd_payload_sigma=pay_sigma,
            rev_payload_mu=pay_mu + 0.3,
            rev_payload_sigma=pay_sigma,
            iat_rate=iat_rate,
            small_fraction=rng.uniform(0.03, 0.12),
            large_fraction=rng.uniform(0.05, 0.20),
        )
        # chatter payloads sit on coprime-stride lattices over the class
        # index (firmware differs in query names, answer sizes, and sync
        # padding), so the ancillary flows are separable per class instead
        # of pooling into one shared blob that only memorization can fit
        dns = FlowArchetype(
            weight=1.0,
            protocol=ProtocolClass.DNS,
            fwd_packet_mu=0.9 + rng.uniform(-0.1, 0.1),
            fwd_packet_sigma=0.15,
            rev_packet_mu=0.9 + rng.uniform(-0.1, 0.1),
            rev_packet_sigma=0.15,
            fwd_payload_mu=math.log(45.0) + 0.11 * ((i * 5) % 24),
            fwd_payload_sigma=0.06,
            rev_payload_mu=math.log(90.0) + 0.11 * ((i * 11) % 24),
            rev_payload_sigma=0.06,
            iat_rate=10.0 * math.exp(rng.uniform(-0.3, 0.3)),
            small_fraction=0.0,
            large_fraction=0.0,
        )
        ntp = FlowArchetype(
            weight=1.0,
            protocol=ProtocolClass.NTP,
            fwd_packet_mu=0.6 + rng.uniform(-0.05, 0.05),
            fwd_packet_sigma=0.1,
            rev_packet_mu=0.6 + rng.uniform(-0.05, 0.05),
            rev_packet_sigma=0.1,
            fwd_payload_mu=math.log(48.0) + 0.10 * ((i * 13) % 24),
            fwd_payload_sigma=0.05,
            rev_payload_mu=math.log(48.0) + 0.10 * ((i * 17) % 24),
            rev_payload_sigma=0.05,
            iat_rate=1.0 * math.exp(rng.uniform(-0.4, 0.4)),
            small_fraction=0.0,
            large_fraction=0.0,
        )
        # sparse senders cannot surface every traffic pattern inside one
        # observation window, so the archetype mix narrows with the rate:
        # a class seen a handful of times is all primary data flows
        rate = rates[label]
        if rate < 0.5:
            mix = ((data, 1.0),)
        elif rate < 1.5:
            mix = ((data, 0.85), (dns, 0.15))
        else:
            mix = ((data, 0.7), (dns, 0.2), (ntp, 0.1))
        profiles[label] = DeviceProfile(
            device_class=label,
            archetypes=tuple(
                dataclasses.replace(arch, weight=w) for arch, w in mix
            ),
            daily_flow_rate=rate,
        )
    return profiles


def _shift_archetype(
    arch: FlowArchetype,
    pkt_shift: float,
    pay_shift: float,
    gap_factor: float,
) -> FlowArchetype:
    return dataclasses.replace(
        arch,
        fwd_packet_mu=arch.fwd_packet_mu + pkt_shift,
        rev_packet_mu=arch.rev_packet_mu + pkt_shift,
        fwd_payload_mu=arch.fwd_payload_mu + pay_shift,
        rev_payload_mu=arch.rev_payload_mu + pay_shift,
        iat_rate=arch.iat_rate / gap_factor,
    )


def make_context_modifier(
    catalog: Sequence[str],
    home_id: str,
    spatial_sigma: float,
    seed: int,
) -> ContextModifier:
    if spatial_sigma < 0:
        raise ValueError("spatial_sigma must be >= 0")
    factors: dict[str, tuple[float, float, float]] = {}
    for label in catalog:
        rng = np.random.default_rng(mix_seed(seed, "spatial", home_id, label))
        draw = rng.lognormal(mean=0.0, sigma=spatial_sigma, size=3)
        factors[label] = (float(draw[0]), float(draw[1]), float(draw[2]))
    return ContextModifier(home_id=home_id, class_factors=factors)


def apply_context_modifier(
    profiles: Mapping[str, DeviceProfile],
    modifier: ContextModifier,
) -> dict[str, DeviceProfile]:
    out: dict[str, DeviceProfile] = {}
    for label, profile in profiles.items():
        f_pkt, f_pay, f_gap = modifier.class_factors[label]
        # factors scale the modeled quantities; in log space that is an
        # additive shift of the location parameters
        archetypes = tuple(
            _shift_archetype(a, math.log(f_pkt), math.log(f_pay), f_gap)
            for a in profile.archetypes
        )
        out[label] = dataclasses.replace(profile, archetypes=archetypes)
    return out


def apply_spatial_context(
    profiles: Mapping[str, DeviceProfile],
    home_id: str,
    spatial_sigma: float,
    seed: int,
) -> dict[str, DeviceProfile]:
    """Reparameterize profiles for one home; sigma 0 is the identity."""
    if spatial_sigma == 0.0:
        return dict(profiles)
    modifier = make_context_modifier(sorted(profiles), home_id, spatial_sigma, seed)
    return apply_context_modifier(profiles, modifier)


def apply_temporal_drift(
    profiles: Mapping[str, DeviceProfile],
    events: Sequence[DriftEvent],
    day: int,
    *,
    seed: int = 0,
    home_id: str = "",
) -> dict[str, DeviceProfile]:
    """Profiles in effect on `day`: all events with event.day <= day applied
    cumulatively, in order.  Shift directions are drawn per (event, class),
    plus per home for PER_HOME scope, so a given event is a fixed step for
    every day at or after it."""
    if any(b.day < a.day for a, b in zip(events, events[1:])):
        raise ValueError("drift events must be sorted by day")
    out = dict(profiles)
    for index, event in enumerate(events):
        if event.day > day:
            break
        for label in event.affected_classes:
            if label not in out:
                continue
            if event.scope is DriftScope.PER_HOME:
                rng = np.random.default_rng(
                    mix_seed(seed, "drift", index, label, home_id)
                )
            else:
                rng = np.random.default_rng(mix_seed(seed, "drift", index, label))
            directions = rng.integers(0, 2, size=3) * 2 - 1
            profile = out[label]
            archetypes = tuple(
                _shift_archetype(
                    a,
                    float(directions[0]) * event.magnitude * 0.5,
                    float(directions[1]) * event.magnitude,
                    math.exp(float(directions[2]) * event.magnitude),
                )
                for a in profile.archetypes
            )
            out[label] = dataclasses.replace(profile, archetypes=archetypes)
    return out


def _synth_packets(
    rng: np.random.Generator,
    count: int,
    payload_mu: float,
    payload_sigma: float,
    arch: FlowArchetype,
) -> list[PacketObservation]:
    if count <= 0:
        return []
    mean_payload = rng.lognormal(payload_mu, payload_sigma)
    times = np.zeros(count, dtype=np.float64)
    if count > 1:
        gaps = rng.exponential(1.0 / arch.iat_rate, size=count - 1)
        times[1:] = np.cumsum(gaps)
    kinds = rng.random(count)
    payloads = np.empty(count, dtype=np.int64)
    for i in range(count):
        if kinds[i] < arch.small_fraction:
            # control/ack segments: near-empty regardless of device
            payloads[i] = rng.integers(0, 60)
        elif kinds[i] < arch.small_fraction + arch.large_fraction:
            # burst segments scale with the device's nominal payload so
            # they stay informative instead of flattening every class
            # onto one shared heavy tail
            payloads[i] = int(round(rng.lognormal(payload_mu + 1.2, 0.3)))
        else:
            payloads[i] = int(round(rng.normal(mean_payload, 0.25 * mean_payload + 1.0)))
    payloads = np.clip(payloads, 0, _MAX_PAYLOAD)
    return [
        PacketObservation(
            arrival_time=float(times[i]),
            wire_bytes=int(payloads[i]) + _WIRE_OVERHEAD,
            payload_bytes=int(payloads[i]),
        )
        for i in range(count)
    ]


def _quantize_stats(stats: ActivityStats) -> ActivityStats:
    return dataclasses.replace(
        stats,
        average_interarrival_time=round(stats.average_interarrival_time, 6),
        stddev_payload_length=round(stats.stddev_payload_length, 6),
        stddev_interarrival_time=round(stats.stddev_interarrival_time, 6),
    )


def generate_day(
    profiles: Mapping[str, DeviceProfile],
    home_id: str,
    day: int,
    seed: int,
) -> list[FlowRecord]:
    """All flow records of one home on one day, sorted by timestamp.

    Per class, the flow count is Poisson(daily_flow_rate); each flow picks
    an archetype by mixture weight, synthesizes forward/reverse packet
    lists, and aggregates them into activity statistics.  Reals are
    quantized to 6 decimal places so records survive CSV round-trips
    unchanged.
    """
    records: list[FlowRecord] = []
    for label in sorted(profiles):
        profile = profiles[label]
        rng = np.random.default_rng(mix_seed(seed, "day", home_id, day, label))
        n_flows = int(rng.poisson(profile.daily_flow_rate))
        weights = np.asarray([a.weight for a in profile.archetypes])
        cumulative = np.cumsum(weights)
        for _ in range(n_flows):
            # cumsum of float weights can fall a ulp short of 1.0
            pick = min(int(np.searchsorted(cumulative, rng.random(), side="right")),
                       len(profile.archetypes) - 1)
            arch = profile.archetypes[pick]
            n_fwd = max(1, int(round(rng.lognormal(arch.fwd_packet_mu, arch.fwd_packet_sigma))))
            n_rev = int(round(rng.lognormal(arch.rev_packet_mu, arch.rev_packet_sigma)))
            forward = _quantize_stats(aggregate_packets(_synth_packets(
                rng, n_fwd, arch.fwd_payload_mu, arch.fwd_payload_sigma, arch)))
            reverse = _quantize_stats(aggregate_packets(_synth_packets(
                rng, n_rev, arch.rev_payload_mu, arch.rev_payload_sigma, arch)))
            offset = min(float(rng.uniform(0.0, 86400.0)), 86399.999999)
            timestamp = round(day * 86400.0 + offset, 6)
            records.append(FlowRecord(
                home_id=home_id,
                device_class=label,
                day_index=day,
                timestamp=timestamp,
                protocol=arch.protocol,
                forward=forward,
                reverse=reverse,
            ))
    records.sort(key=lambda r: r.timestamp)
    return records


def generate_home(config: SynthConfig, home_id: str) -> list[FlowRecord]:
    """All records of one home across the full day range."""
    base = build_profiles(config)
    contextual = apply_spatial_context(base, home_id, config.spatial_sigma, config.master_seed)
    records: list[FlowRecord] = []
    for day in range(config.n_days):
        daily = apply_temporal_drift(
            contextual,
            config.drift_events,
            day,
            seed=config.master_seed,
            home_id=home_id,
        )
        records.extend(generate_day(daily, home_id, day, config.master_seed))
    return records


def dataset_flows(config: SynthConfig) -> dict[str, list[FlowRecord]]:
    """Full in-memory dataset, home id -> records."""
    return {home: generate_home(config, home) for home in config.home_ids()}


def default_config() -> SynthConfig:
    """Stock benchmark dataset: 12 homes, 47 days, and one step change at
    day 30 touching half the catalog.

    The step magnitude is calibrated so per-home models lose accuracy on
    the post-change window without collapsing: decay stays in a band that
    is visible yet leaves the gate accepting most records.
    """
    affected = tuple(DEFAULT_CATALOG[i] for i in range(0, len(DEFAULT_CATALOG), 2))
    return SynthConfig(
        drift_events=(
            DriftEvent(
                day=30,
                affected_classes=affected,
                magnitude=0.5,
                scope=DriftScope.ALL_HOMES,
            ),
        ),
    )


def drift_event_to_dict(event: DriftEvent) -> dict:
    return {
        "day": event.day,
        "affected_classes": list(event.affected_classes),
        "magnitude": event.magnitude,
        "scope": event.scope.value,
    }


def drift_event_from_dict(doc: Mapping) -> DriftEvent:
    return DriftEvent(
        day=int(doc["day"]),
        affected_classes=tuple(str(c) for c in doc["affected_classes"]),
        magnitude=float(doc["magnitude"]),
        scope=DriftScope(doc.get("scope", "ALL_HOMES")),
    )


def config_to_dict(config: SynthConfig) -> dict:
    return {
        "n_homes": config.n_homes,
        "n_days": config.n_days,
        "train_days": config.train_days,
        "class_catalog": list(config.class_catalog),
        "spatial_sigma": config.spatial_sigma,
        "drift_events": [drift_event_to_dict(e) for e in config.drift_events],
        "master_seed": config.master_seed,
        "flows_per_home_per_day": config.flows_per_home_per_day,
        "rate_weights": dict(config.rate_weights) if config.rate_weights is not None else None,
    }


def config_from_dict(doc: Mapping) -> SynthConfig:
    known = {
        "n_homes", "n_days", "train_days", "class_catalog", "spatial_sigma",
        "drift_events", "master_seed", "flows_per_home_per_day", "rate_weights",
    }
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    kwargs: dict = {}
    for key in known:
        if key not in doc:
            continue
        value = doc[key]
        if key == "class_catalog":
            value = tuple(str(c) for c in value)
        elif key == "drift_events":
            value = tuple(drift_event_from_dict(e) for e in value)
        elif key == "rate_weights" and value is not None:
            value = {str(k): float(v) for k, v in value.items()}
        kwargs[key] = value
    return SynthConfig(**kwargs)


def config_digest(config: SynthConfig) -> str:
    payload = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("ascii")).hexdigest()


def generate_dataset(config: SynthConfig, out_dir: str | Path) -> list[Path]:
    """Write one flow CSV per home plus a manifest; byte-deterministic.

    Returns the written file paths (manifest last).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for home in config.home_ids():
        records = generate_home(config, home)
        path = out / f"{home}.csv"
        try:
            write_flow_csv(path, records)
        except OSError as exc:
            raise OSError(f"failed writing {path}: {exc}") from exc
        written.append(path)
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "master_seed": config.master_seed,
        "config": config_to_dict(config),
        "config_sha256": config_digest(config),
    }
    manifest_path = out / MANIFEST_NAME
    try:
        manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing {manifest_path}: {exc}") from exc
    written.append(manifest_path)
    return written
