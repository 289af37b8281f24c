"""Synthetic dataset tests: profiles, context, drift, generation, config IO."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from driftnet.flow import ProtocolClass, parse_flow_row, serialize_flow_row
from driftnet.seeding import mix_seed
from driftnet.synth import (
    DEFAULT_CATALOG,
    DEFAULT_MASTER_SEED,
    MANIFEST_NAME,
    DeviceProfile,
    DriftEvent,
    DriftScope,
    FlowArchetype,
    SynthConfig,
    apply_spatial_context,
    apply_temporal_drift,
    build_profiles,
    config_digest,
    config_from_dict,
    config_to_dict,
    dataset_flows,
    default_config,
    generate_dataset,
    generate_day,
    generate_home,
    make_context_modifier,
)

SECONDS_PER_DAY = 86400.0


class TestConfigValidation:
    def test_default_benchmark_shape(self):
        cfg = default_config()
        assert cfg.n_homes == 12
        assert cfg.n_days == 47
        assert cfg.train_days == 30
        assert cfg.class_catalog == DEFAULT_CATALOG
        assert len(cfg.class_catalog) == 24
        assert cfg.master_seed == DEFAULT_MASTER_SEED
        assert len(cfg.drift_events) == 1
        event = cfg.drift_events[0]
        assert event.day == cfg.train_days
        assert event.affected_classes == DEFAULT_CATALOG[0::2]
        assert event.magnitude == 0.5
        assert event.scope is DriftScope.ALL_HOMES

    def test_home_ids_are_zero_padded(self):
        cfg = SynthConfig(n_homes=3, n_days=4, train_days=2)
        assert cfg.home_ids() == ("h01", "h02", "h03")

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_homes": 0},
            {"n_days": 0, "train_days": 0},
            {"train_days": 47},  # must stay < n_days
            {"train_days": 0},
            {"class_catalog": ()},
            {"class_catalog": ("a", "a")},
            {"spatial_sigma": -0.1},
            {"flows_per_home_per_day": 0.0},
        ],
    )
    def test_rejects_bad_fields(self, kwargs):
        with pytest.raises(ValueError):
            SynthConfig(**kwargs)

    def test_rejects_bad_drift_schedules(self):
        mk = lambda day: DriftEvent(day=day, affected_classes=(DEFAULT_CATALOG[0],), magnitude=1.0)
        with pytest.raises(ValueError, match="sorted"):
            SynthConfig(drift_events=(mk(20), mk(10)))
        with pytest.raises(ValueError, match="outside"):
            SynthConfig(drift_events=(mk(47),))
        with pytest.raises(ValueError, match="unknown classes"):
            SynthConfig(drift_events=(
                DriftEvent(day=5, affected_classes=("martian_probe",), magnitude=1.0),
            ))

    def test_rejects_incomplete_rate_weights(self):
        with pytest.raises(ValueError, match="missing"):
            SynthConfig(
                class_catalog=("a", "b"),
                rate_weights={"a": 1.0},
            )
        with pytest.raises(ValueError, match="positive"):
            SynthConfig(
                class_catalog=("a", "b"),
                rate_weights={"a": 1.0, "b": 0.0},
            )

    def test_drift_event_validation(self):
        with pytest.raises(ValueError):
            DriftEvent(day=-1, affected_classes=("a",), magnitude=1.0)
        with pytest.raises(ValueError):
            DriftEvent(day=0, affected_classes=("a",), magnitude=0.0)
        with pytest.raises(ValueError):
            DriftEvent(day=0, affected_classes=(), magnitude=1.0)


class TestBuildProfiles:
    def test_deterministic_per_label(self):
        cfg = default_config()
        a = build_profiles(cfg)
        b = build_profiles(cfg)
        assert a == b

    def test_rates_follow_volume_weights_and_sum_to_budget(self):
        cfg = default_config()
        profiles = build_profiles(cfg)
        total = sum(p.daily_flow_rate for p in profiles.values())
        assert total == pytest.approx(cfg.flows_per_home_per_day)
        # heaviest and lightest catalog entries from the volume table
        assert profiles["google_nest"].daily_flow_rate > 50
        assert profiles["elecom_scale"].daily_flow_rate < 0.5

    def test_unknown_catalog_falls_back_to_uniform_rates(self):
        cfg = SynthConfig(
            n_homes=1, n_days=3, train_days=2,
            class_catalog=("widget_a", "widget_b"),
            flows_per_home_per_day=10.0,
        )
        profiles = build_profiles(cfg)
        assert profiles["widget_a"].daily_flow_rate == pytest.approx(5.0)
        assert profiles["widget_b"].daily_flow_rate == pytest.approx(5.0)

    def test_archetype_mix_narrows_with_rate(self):
        profiles = build_profiles(default_config())
        assert len(profiles["elecom_scale"].archetypes) == 1
        assert len(profiles["withings_sleep_sensor"].archetypes) == 2
        assert len(profiles["google_nest"].archetypes) == 3
        for profile in profiles.values():
            assert sum(a.weight for a in profile.archetypes) == pytest.approx(1.0)

    def test_chatter_payload_lattices_are_distinct_per_class(self):
        profiles = build_profiles(default_config())
        dns_mus = []
        ntp_mus = []
        for profile in profiles.values():
            for arch in profile.archetypes:
                if arch.protocol is ProtocolClass.DNS:
                    dns_mus.append(round(arch.fwd_payload_mu, 9))
                elif arch.protocol is ProtocolClass.NTP:
                    ntp_mus.append(round(arch.fwd_payload_mu, 9))
        assert len(dns_mus) == len(set(dns_mus))
        assert len(ntp_mus) == len(set(ntp_mus))

    def test_no_two_classes_differ_only_in_tempo(self):
        profiles = build_profiles(default_config())
        # location coordinates of the primary data archetype
        coords = {
            label: (round(p.archetypes[0].fwd_packet_mu, 2), round(p.archetypes[0].fwd_payload_mu, 2))
            for label, p in profiles.items()
        }
        values = list(coords.values())
        # jittered grid: no exact collisions in (volume, payload) space
        assert len(set(values)) == len(values)


class TestSpatialContext:
    def test_sigma_zero_is_identity(self):
        profiles = build_profiles(default_config())
        out = apply_spatial_context(profiles, "h01", 0.0, 99)
        assert out == dict(profiles)

    def test_positive_sigma_moves_all_locations(self):
        profiles = build_profiles(default_config())
        out = apply_spatial_context(profiles, "h01", 0.4, 99)
        assert out != dict(profiles)
        for label in profiles:
            base = profiles[label].archetypes[0]
            moved = out[label].archetypes[0]
            assert moved.fwd_packet_mu != base.fwd_packet_mu
            assert moved.fwd_packet_sigma == base.fwd_packet_sigma

    def test_homes_get_distinct_factors(self):
        factors = [
            make_context_modifier(("amazon_echo",), home, 0.3, 7).class_factors["amazon_echo"]
            for home in ("h01", "h02", "h03")
        ]
        assert len(set(factors)) == 3
        for triple in factors:
            assert all(f > 0 for f in triple)

    def test_modifier_is_home_and_label_seeded(self):
        a = make_context_modifier(("amazon_echo", "qrio_hub"), "h01", 0.3, 7)
        b = make_context_modifier(("qrio_hub", "amazon_echo"), "h01", 0.3, 7)
        # per-label streams: catalog order cannot matter
        assert a.class_factors == b.class_factors


class TestTemporalDrift:
    EVENTS = (
        DriftEvent(day=5, affected_classes=("amazon_echo",), magnitude=0.8),
        DriftEvent(day=9, affected_classes=("amazon_echo", "qrio_hub"), magnitude=0.4),
    )

    @staticmethod
    def expected_directions(seed, index, label, home_id=""):
        if home_id:
            rng = np.random.default_rng(mix_seed(seed, "drift", index, label, home_id))
        else:
            rng = np.random.default_rng(mix_seed(seed, "drift", index, label))
        return rng.integers(0, 2, size=3) * 2 - 1

    def test_day_before_first_event_is_identity(self):
        profiles = build_profiles(default_config())
        out = apply_temporal_drift(profiles, self.EVENTS, 4, seed=3)
        assert out == dict(profiles)

    def test_single_event_shifts_locations_by_documented_amounts(self):
        profiles = build_profiles(default_config())
        out = apply_temporal_drift(profiles, self.EVENTS, 5, seed=3)
        d = self.expected_directions(3, 0, "amazon_echo")
        for base, moved in zip(profiles["amazon_echo"].archetypes,
                               out["amazon_echo"].archetypes):
            assert moved.fwd_packet_mu == pytest.approx(base.fwd_packet_mu + d[0] * 0.4)
            assert moved.rev_packet_mu == pytest.approx(base.rev_packet_mu + d[0] * 0.4)
            assert moved.fwd_payload_mu == pytest.approx(base.fwd_payload_mu + d[1] * 0.8)
            assert moved.iat_rate == pytest.approx(base.iat_rate / math.exp(d[2] * 0.8))
        assert out["qrio_hub"] == profiles["qrio_hub"]

    def test_events_accumulate_in_order(self):
        profiles = build_profiles(default_config())
        out = apply_temporal_drift(profiles, self.EVENTS, 20, seed=3)
        d0 = self.expected_directions(3, 0, "amazon_echo")
        d1 = self.expected_directions(3, 1, "amazon_echo")
        base = profiles["amazon_echo"].archetypes[0]
        moved = out["amazon_echo"].archetypes[0]
        assert moved.fwd_packet_mu == pytest.approx(
            base.fwd_packet_mu + d0[0] * 0.4 + d1[0] * 0.2
        )
        assert moved.fwd_payload_mu == pytest.approx(
            base.fwd_payload_mu + d0[1] * 0.8 + d1[1] * 0.4
        )
        # second event touches qrio_hub as well
        assert out["qrio_hub"] != profiles["qrio_hub"]

    def test_step_is_stable_across_days(self):
        profiles = build_profiles(default_config())
        assert apply_temporal_drift(profiles, self.EVENTS, 6, seed=3) == \
            apply_temporal_drift(profiles, self.EVENTS, 8, seed=3)

    def test_unsorted_events_rejected(self):
        profiles = build_profiles(default_config())
        with pytest.raises(ValueError, match="sorted"):
            apply_temporal_drift(profiles, tuple(reversed(self.EVENTS)), 20, seed=3)

    def test_all_homes_scope_ignores_home_id(self):
        profiles = build_profiles(default_config())
        a = apply_temporal_drift(profiles, self.EVENTS, 9, seed=3, home_id="h01")
        b = apply_temporal_drift(profiles, self.EVENTS, 9, seed=3, home_id="h02")
        assert a == b

    def test_per_home_scope_diverges_across_homes(self):
        profiles = build_profiles(default_config())
        events = (DriftEvent(
            day=5, affected_classes=("amazon_echo", "qrio_hub"),
            magnitude=0.8, scope=DriftScope.PER_HOME,
        ),)
        shifted = [
            apply_temporal_drift(profiles, events, 9, seed=3, home_id=f"h{i:02d}")
            for i in range(1, 7)
        ]
        assert any(s != shifted[0] for s in shifted[1:])


class TestGeneration:
    def test_generate_home_is_deterministic(self, small_config):
        a = generate_home(small_config, "h01")
        b = generate_home(small_config, "h01")
        assert a == b

    def test_homes_produce_different_streams(self, small_dataset):
        assert small_dataset["h01"] != small_dataset["h02"]

    def test_day_indices_and_timestamps_consistent(self, small_dataset, small_config):
        for home, records in small_dataset.items():
            assert len(records) > 0
            last = -math.inf
            for r in records:
                assert r.home_id == home
                assert 0 <= r.day_index < small_config.n_days
                assert r.day_index * SECONDS_PER_DAY <= r.timestamp
                assert r.timestamp < (r.day_index + 1) * SECONDS_PER_DAY
                assert r.timestamp >= last
                last = r.timestamp
                assert r.device_class in small_config.class_catalog

    def test_quantization_makes_csv_round_trip_exact(self, small_dataset):
        for r in small_dataset["h01"][:300]:
            assert parse_flow_row(serialize_flow_row(r)) == r

    def test_every_class_appears_in_training_window(self, small_dataset, small_config):
        for home, records in small_dataset.items():
            seen = {r.device_class for r in records if r.day_index < small_config.train_days}
            assert seen == set(small_config.class_catalog), home

    def test_day_stream_independent_of_surrounding_days(self, small_config):
        # day 3 predates the fixture's drift event, so only the spatial
        # layer applies on top of the base profiles
        contextual = apply_spatial_context(
            build_profiles(small_config), "h01",
            small_config.spatial_sigma, small_config.master_seed,
        )
        direct = generate_day(contextual, "h01", 3, small_config.master_seed)
        in_context = [r for r in generate_home(small_config, "h01") if r.day_index == 3]
        assert direct == in_context

    def test_protocol_marginals_match_archetype_weights(self, small_dataset, small_config):
        records = [r for recs in small_dataset.values() for r in recs]
        profiles = build_profiles(small_config)
        for label in small_config.class_catalog:
            weights = {a.protocol: a.weight for a in profiles[label].archetypes}
            rows = [r for r in records if r.device_class == label]
            for proto, weight in weights.items():
                share = sum(1 for r in rows if r.protocol is proto) / len(rows)
                # binomial: rarest class draws ~130 flows, 3 sigma < 0.13
                assert share == pytest.approx(weight, abs=0.13)


class TestConfigSerialization:
    def test_round_trip_default(self):
        cfg = default_config()
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_round_trip_custom(self):
        cfg = SynthConfig(
            n_homes=2, n_days=6, train_days=4,
            class_catalog=("b", "a"),
            spatial_sigma=0.0,
            drift_events=(DriftEvent(
                day=4, affected_classes=("a",), magnitude=1.5,
                scope=DriftScope.PER_HOME,
            ),),
            master_seed=9,
            flows_per_home_per_day=12.5,
            rate_weights={"a": 2.0, "b": 1.0},
        )
        again = config_from_dict(config_to_dict(cfg))
        assert again == cfg
        assert again.drift_events[0].scope is DriftScope.PER_HOME

    def test_unknown_field_rejected(self):
        doc = config_to_dict(default_config())
        doc["n_homse"] = 3
        with pytest.raises(ValueError, match="unknown config fields"):
            config_from_dict(doc)

    def test_digest_is_stable_and_field_sensitive(self):
        cfg = default_config()
        digest = config_digest(cfg)
        assert len(digest) == 64
        assert digest == config_digest(default_config())
        import dataclasses

        other = dataclasses.replace(cfg, master_seed=cfg.master_seed + 1)
        assert config_digest(other) != digest


class TestGenerateDataset:
    def test_layout_manifest_and_determinism(self, tmp_path, small_config):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        written = generate_dataset(small_config, out_a)
        generate_dataset(small_config, out_b)

        names = [p.name for p in written]
        assert names == [f"h{i:02d}.csv" for i in range(1, small_config.n_homes + 1)] + [MANIFEST_NAME]
        for name in names:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

        manifest = json.loads((out_a / MANIFEST_NAME).read_text())
        assert manifest["master_seed"] == small_config.master_seed
        assert manifest["config_sha256"] == config_digest(small_config)
        assert config_from_dict(manifest["config"]) == small_config

    def test_csv_matches_in_memory_records(self, tmp_path, small_config, small_dataset):
        from driftnet.flow import read_flow_csv

        out = tmp_path / "ds"
        generate_dataset(small_config, out)
        assert read_flow_csv(out / "h02.csv") == small_dataset["h02"]
