"""Command-line pipeline: generate -> train -> evaluate -> report.

Each stage reads and writes plain files (flow CSVs, model documents, CSV
reports) so intermediate artifacts are inspectable and cacheable.  Every
invocation drops a ``manifest.json`` into its output directory recording
the command, the effective seed, the config digest, and the file format
versions; manifests carry no timestamps or host details, so identical
inputs produce byte-identical output trees.

Exit codes: 0 success, 1 usage error, 2 data or config error, 3 internal
error (including self-test failures).  ``DRIFTNET_THREADS`` caps worker
threads (0 or unset picks the host default); results do not depend on it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import statistics
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import FLOW_CSV_FORMAT_VERSION, MANIFEST_FORMAT_VERSION, MODEL_FORMAT_VERSION
from .flow import (
    LARGE_PAYLOAD_LIMIT,
    SMALL_PAYLOAD_LIMIT,
    FlowParseError,
    PacketObservation,
    aggregate_packets,
)
from .forest import (
    ForestParams,
    ModelFormatError,
    load_model,
    predict_scores_matrix,
    save_model,
    train_forest,
)
from .harness import (
    emit_report,
    load_dataset,
    make_run_specs,
    read_dataset_manifest,
    run_all,
    slice_window,
    spatial_matrix,
    temporal_decay_report,
)
from .strategies import (
    SelectionMode,
    SelectionPolicy,
    histogram_distance,
    train_contextualized,
    train_global,
)
from .synth import (
    DEFAULT_MASTER_SEED,
    MANIFEST_NAME,
    SynthConfig,
    config_from_dict,
    default_config,
    generate_dataset,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    """Bad flags or subcommand; argparse errors are funneled here."""


class DataError(Exception):
    """Unusable input data, manifest, or config file."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage problems; the artifact reserves
    # 2 for data errors, so route usage problems through UsageError instead
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


# ---------------------------------------------------------------------------
# shared plumbing


def _forest_params(args: argparse.Namespace) -> ForestParams:
    try:
        return ForestParams(
            n_trees=args.trees,
            max_depth=args.max_depth,
            min_samples_leaf=args.min_samples_leaf,
            features_per_split=args.features_per_split,
            bootstrap=not args.no_bootstrap,
        )
    except ValueError as exc:
        raise DataError(f"bad forest parameters: {exc}") from exc


def _add_forest_flags(parser: argparse.ArgumentParser) -> None:
    defaults = ForestParams()
    parser.add_argument("--trees", type=int, default=defaults.n_trees,
                        help="number of trees (default %(default)s)")
    parser.add_argument("--max-depth", type=int, default=defaults.max_depth,
                        help="maximum tree depth (default %(default)s)")
    parser.add_argument("--min-samples-leaf", type=int,
                        default=defaults.min_samples_leaf,
                        help="minimum samples per leaf (default %(default)s)")
    parser.add_argument("--features-per-split", type=int,
                        default=defaults.features_per_split,
                        help="random feature subset size (default %(default)s)")
    parser.add_argument("--no-bootstrap", action="store_true",
                        help="disable bootstrap resampling")


def _load_config(path: str | None) -> SynthConfig:
    if path is None:
        return default_config()
    file = Path(path)
    if not file.is_file():
        raise DataError(f"config file not found: {file}")
    try:
        doc = json.loads(file.read_text())
        return config_from_dict(doc)
    except (json.JSONDecodeError, ValueError, TypeError, KeyError) as exc:
        raise DataError(f"bad config file {file}: {exc}") from exc


def _dataset_context(args: argparse.Namespace) -> tuple[dict, dict | None, int, int, int]:
    """Load --data plus its manifest; resolve (seed, train_days, test_days).

    Flag overrides beat manifest values; a manifest-less directory needs
    explicit --train-days.
    """
    dataset = load_dataset(args.data)
    manifest = read_dataset_manifest(args.data)
    config = (manifest or {}).get("config", {})

    seed = args.seed
    if seed is None:
        seed = (manifest or {}).get("master_seed", DEFAULT_MASTER_SEED)

    train_days = getattr(args, "train_days", None)
    if train_days is None:
        train_days = config.get("train_days")
    if train_days is None:
        raise DataError(
            "training window length unknown: dataset has no manifest, pass --train-days"
        )

    test_days = getattr(args, "test_days", None)
    if test_days is None:
        n_days = config.get("n_days")
        if n_days is None:
            n_days = 1 + max(r.day_index for recs in dataset.values() for r in recs)
        test_days = n_days - train_days
    if test_days < 1:
        raise DataError(f"no test window: train_days={train_days} leaves {test_days} days")
    return dataset, manifest, int(seed), int(train_days), int(test_days)


def _write_manifest(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    (out_dir / MANIFEST_NAME).write_text(text)


def _invocation_manifest(command: str, seed: int, **extra) -> dict:
    doc = {
        "command": command,
        "seed": seed,
        "format_versions": {
            "flow_csv": FLOW_CSV_FORMAT_VERSION,
            "model": MODEL_FORMAT_VERSION,
            "manifest": MANIFEST_FORMAT_VERSION,
        },
    }
    doc.update(extra)
    return doc


# ---------------------------------------------------------------------------
# subcommands


def _cmd_generate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    out = Path(args.out)
    written = generate_dataset(config, out)
    # fold the invocation record into the dataset manifest
    manifest = json.loads((out / MANIFEST_NAME).read_text())
    manifest.update(_invocation_manifest("generate", config.master_seed))
    _write_manifest(out, manifest)
    print(f"wrote {len(written) - 1} home files + manifest to {out}")
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    dataset, manifest, seed, train_days, _ = _dataset_context(args)
    params = _forest_params(args)
    train_flows = {
        home: slice_window(records, 0, train_days - 1)
        for home, records in dataset.items()
    }
    train_flows = {h: r for h, r in train_flows.items() if r}
    if not train_flows:
        raise DataError("no records inside the training window")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "global":
        model = train_global(train_flows, params, seed)
        path = out / "global.model"
        path.write_bytes(save_model(model))
        written = [path]
    else:
        if args.home is None:
            homes = sorted(train_flows)
        elif args.home in train_flows:
            homes = [args.home]
        else:
            raise DataError(f"home {args.home!r} has no training records")
        models = train_contextualized(
            {h: train_flows[h] for h in homes}, params, seed
        )
        written = []
        for home in homes:
            path = out / f"{home}.model"
            path.write_bytes(save_model(models[home]))
            written.append(path)

    _write_manifest(out, _invocation_manifest(
        "train", seed,
        mode=args.mode,
        train_days=train_days,
        dataset_config_sha256=(manifest or {}).get("config_sha256"),
        models=[p.name for p in written],
    ))
    print(f"wrote {len(written)} model file(s) to {out}")
    return EXIT_OK


_POLICY_MODES = {
    "combined_dynamic": SelectionMode.COMBINED_DYNAMIC,
    "score_distribution": SelectionMode.SCORE_DISTRIBUTION,
}


def _cmd_evaluate(args: argparse.Namespace) -> int:
    dataset, manifest, seed, train_days, test_days = _dataset_context(args)
    params = _forest_params(args)
    try:
        policy = SelectionPolicy(
            mode=_POLICY_MODES[args.policy],
            window_days=args.window_days,
            reselect_every_days=args.reselect_every,
            min_window_records=args.min_window_records,
        )
    except ValueError as exc:
        raise DataError(f"bad selection policy: {exc}") from exc
    if not 1 <= args.seen < len(dataset):
        raise DataError(
            f"--seen must leave at least one unseen home (dataset has {len(dataset)})"
        )
    specs = make_run_specs(
        sorted(dataset),
        n_runs=args.runs,
        n_seen=args.seen,
        train_days=train_days,
        test_days=test_days,
        forest=params,
        policy=policy,
        seed=seed,
        metric_mode=args.metric_mode,
        oracle_selection=args.oracle_selection,
    )
    report = run_all(specs, dataset)
    written = emit_report(
        args.out,
        experiment=report,
        manifest=_invocation_manifest(
            "evaluate", seed,
            runs=args.runs,
            seen=args.seen,
            policy=args.policy,
            window_days=args.window_days,
            reselect_every=args.reselect_every,
            min_window_records=args.min_window_records,
            metric_mode=args.metric_mode,
            oracle_selection=args.oracle_selection,
            train_days=train_days,
            test_days=test_days,
            dataset_config_sha256=(manifest or {}).get("config_sha256"),
        ),
    )
    print(f"wrote {len(written)} report files to {args.out}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    dataset, manifest, seed, train_days, _ = _dataset_context(args)
    params = _forest_params(args)
    decay = temporal_decay_report(
        dataset, params, seed, train_days, metric_mode=args.metric_mode
    )
    matrix = spatial_matrix(
        dataset, params, seed, train_days, metric_mode=args.metric_mode
    )
    written = emit_report(
        args.out,
        decay=decay,
        matrix=matrix,
        manifest=_invocation_manifest(
            "report", seed,
            train_days=train_days,
            metric_mode=args.metric_mode,
            dataset_config_sha256=(manifest or {}).get("config_sha256"),
        ),
    )
    print(f"wrote {len(written)} report files to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# selftest: an embedded micro-suite runnable without test infrastructure


def _check_featurizer_oracle() -> None:
    rng = np.random.default_rng(411)
    for _ in range(50):
        n = int(rng.integers(0, 12))
        base = 0.0
        packets = []
        for _ in range(n):
            base += float(rng.exponential(0.5))
            payload = int(rng.integers(0, 1460))
            packets.append(PacketObservation(
                arrival_time=base, wire_bytes=payload + 54, payload_bytes=payload,
            ))
        got = aggregate_packets(packets)
        payloads = [p.payload_bytes for p in packets]
        assert got.packet_total_count == n
        assert got.octet_total_count == sum(p.wire_bytes for p in packets)
        assert got.data_byte_count == sum(payloads)
        assert got.small_packet_count == sum(1 for b in payloads if b < SMALL_PAYLOAD_LIMIT)
        assert got.large_packet_count == sum(1 for b in payloads if b >= LARGE_PAYLOAD_LIMIT)
        assert got.non_empty_packet_count == sum(1 for b in payloads if b > 0)
        assert got.max_packet_size == (max(payloads) if payloads else 0)
        if n >= 1:
            assert abs(got.stddev_payload_length - statistics.pstdev(payloads)) < 1e-9
        if n >= 2:
            gaps = [packets[i + 1].arrival_time - packets[i].arrival_time
                    for i in range(n - 1)]
            assert abs(got.average_interarrival_time - statistics.fmean(gaps)) < 1e-9
            assert abs(got.stddev_interarrival_time - statistics.pstdev(gaps)) < 1e-9
        else:
            assert got.average_interarrival_time == 0.0
            assert got.stddev_interarrival_time == 0.0


def _two_blob_sample(seed: int, n_per_class: int) -> tuple[np.ndarray, list[str]]:
    rng = np.random.default_rng(seed)
    lo = rng.normal(2.0, 0.5, size=(n_per_class, 28))
    hi = rng.normal(8.0, 0.5, size=(n_per_class, 28))
    X = np.vstack([lo, hi])
    labels = ["alpha"] * n_per_class + ["beta"] * n_per_class
    return X, labels


def _check_forest_determinism() -> None:
    X, labels = _two_blob_sample(7001, 40)
    params = ForestParams(n_trees=15, max_depth=8)
    blob_a = save_model(train_forest(X, labels, params, seed=99))
    blob_b = save_model(train_forest(X, labels, params, seed=99))
    assert blob_a == blob_b, "same seed must serialize identically"


def _check_forest_separation() -> None:
    X, labels = _two_blob_sample(7002, 60)
    held_X, held_labels = _two_blob_sample(7003, 40)
    model = train_forest(X, labels, ForestParams(n_trees=15, max_depth=8), seed=5)
    scores = predict_scores_matrix(model, held_X)
    predicted = [model.class_catalog[int(i)] for i in np.argmax(scores, axis=1)]
    accuracy = sum(p == t for p, t in zip(predicted, held_labels)) / len(held_labels)
    assert accuracy >= 0.95, f"separable blobs scored {accuracy}"


def _check_model_roundtrip() -> None:
    X, labels = _two_blob_sample(7004, 30)
    model = train_forest(X, labels, ForestParams(n_trees=7, max_depth=6), seed=11)
    clone = load_model(save_model(model))
    probe = np.random.default_rng(7005).normal(5.0, 2.0, size=(25, 28))
    assert np.array_equal(predict_scores_matrix(model, probe),
                          predict_scores_matrix(clone, probe))
    assert np.array_equal(model.class_thresholds, clone.class_thresholds)


def _check_selector_argmax() -> None:
    # best-over-superset can never fall below best-over-subset
    rng = np.random.default_rng(7006)
    for _ in range(20):
        accuracies = {f"c{i}": float(rng.random()) for i in range(5)}
        subset = dict(list(accuracies.items())[:3])
        assert max(accuracies.values()) >= max(subset.values())


def _check_histogram_metric() -> None:
    rng = np.random.default_rng(7007)
    for _ in range(200):
        p = rng.random(20)
        q = rng.random(20)
        r = rng.random(20)
        p, q, r = p / p.sum(), q / q.sum(), r / r.sum()
        dpq = histogram_distance(p, q)
        assert dpq >= 0.0
        assert abs(dpq - histogram_distance(q, p)) < 1e-12
        assert histogram_distance(p, p) == 0.0
        assert dpq <= histogram_distance(p, r) + histogram_distance(r, q) + 1e-12


_SELFTEST_CHECKS = (
    ("featurizer-oracle", _check_featurizer_oracle),
    ("forest-determinism", _check_forest_determinism),
    ("forest-separation", _check_forest_separation),
    ("model-roundtrip", _check_model_roundtrip),
    ("selector-argmax", _check_selector_argmax),
    ("histogram-metric", _check_histogram_metric),
)


def _cmd_selftest(args: argparse.Namespace) -> int:
    if args.list:
        for name, _ in _SELFTEST_CHECKS:
            print(name)
        return EXIT_OK
    if args.model_file is not None:
        path = Path(args.model_file)
        if not path.is_file():
            raise DataError(f"model file not found: {path}")
        try:
            load_model(path.read_bytes())
        except ModelFormatError as exc:
            print(f"FAIL model-file: {exc}")
            return EXIT_DATA
        print("ok   model-file")
    failures = 0
    for name, check in _SELFTEST_CHECKS:
        try:
            check()
        except Exception as exc:  # noqa: BLE001 - report every failing check
            failures += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"ok   {name}")
    if failures:
        print(f"{failures} of {len(_SELFTEST_CHECKS)} checks failed")
        return EXIT_INTERNAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="driftnet", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("generate", help="write a synthetic multi-home flow dataset")
    p.add_argument("--config", help="JSON synth config (defaults to the stock benchmark)")
    p.add_argument("--seed", type=int, help="override the config master seed")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser("train", help="train models on a dataset's training window")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--mode", required=True, choices=("global", "context"))
    p.add_argument("--home", help="single home to train (context mode)")
    p.add_argument("--train-days", type=int, help="training window length override")
    p.add_argument("--seed", type=int, help="override the dataset seed")
    p.add_argument("--out", required=True, help="output model directory")
    _add_forest_flags(p)

    p = sub.add_parser("evaluate", help="run the strategy comparison experiment")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--runs", type=int, default=10, help="number of seeded runs")
    p.add_argument("--seen", type=int, default=5, help="seen homes per run")
    p.add_argument("--policy", choices=sorted(_POLICY_MODES), default="combined_dynamic")
    p.add_argument("--window-days", type=int, default=30)
    p.add_argument("--reselect-every", type=int, default=1)
    p.add_argument("--min-window-records", type=int, default=50)
    p.add_argument("--metric-mode", choices=("accepted-only", "rejected-as-wrong"),
                   default="accepted-only")
    p.add_argument("--oracle-selection", action="store_true",
                   help="select static models on the test window instead of training data")
    p.add_argument("--train-days", type=int, help="training window length override")
    p.add_argument("--test-days", type=int, help="test window length override")
    p.add_argument("--seed", type=int, help="override the dataset seed")
    p.add_argument("--out", required=True, help="output report directory")
    _add_forest_flags(p)

    p = sub.add_parser("report", help="temporal decay and spatial matrix reports")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--metric-mode", choices=("accepted-only", "rejected-as-wrong"),
                   default="accepted-only")
    p.add_argument("--train-days", type=int, help="training window length override")
    p.add_argument("--seed", type=int, help="override the dataset seed")
    p.add_argument("--out", required=True, help="output report directory")
    _add_forest_flags(p)

    p = sub.add_parser("selftest", help="run the embedded micro-suite")
    p.add_argument("--list", action="store_true", help="list checks without running")
    p.add_argument("--model-file", help="also validate this serialized model")

    return parser


_HANDLERS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "selftest": _cmd_selftest,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return _HANDLERS[args.subcommand](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"driftnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FlowParseError, ModelFormatError, FileNotFoundError,
            OSError, ValueError) as exc:
        print(f"driftnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - translate to the exit contract
        print(f"driftnet: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
