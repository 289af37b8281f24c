"""Experiment harness: drift reports and multi-run strategy comparison.

Reproduces the full evaluation protocol over a generated dataset:

* temporal decay: per-home models scored on their own train vs. test
  windows;
* spatial matrix: every per-home model scored on every home's test window;
* strategy comparison: repeated runs, each drawing a random subset of seen
  homes, comparing the global model, best contextualized model, static
  combined pool, and daily dynamic selection on the unseen homes;
* day-level accounting of dynamic-vs-static wins and ideal-model
  mismatches between the train and test windows.

All outputs are plain CSV/text, written deterministically (fixed ordering,
fixed float formatting, no timestamps).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .flow import FlowRecord, read_flow_csv
from .forest import ForestParams
from .seeding import mix_seed
from .strategies import (
    GLOBAL_CONTEXT,
    CandidateEvaluations,
    ModelPool,
    SelectionMode,
    SelectionPolicy,
    SelectionTrace,
    best_on_mask,
    build_pool,
    build_reference_histograms,
    build_selection_trace,
    candidate_accuracy,
    evaluate_candidates,
    evaluate_model_on,
    select_best_static,
    train_contextualized,
)
from .synth import MANIFEST_NAME

STRATEGY_COLUMNS = ("mg", "best_ctx", "best_combined_static", "best_combined_dynamic")

TABLE3_HEADER = "run_id,mg,best_ctx,best_combined_static,best_combined_dynamic"


def load_dataset(path: str | Path) -> dict[str, list[FlowRecord]]:
    """Read every flow CSV in a dataset directory, grouped by home id."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    files = sorted(p for p in root.glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no flow CSV files in {root}")
    dataset: dict[str, list[FlowRecord]] = {}
    for file in files:
        for record in read_flow_csv(file):
            dataset.setdefault(record.home_id, []).append(record)
    return dataset


def read_dataset_manifest(path: str | Path) -> dict | None:
    manifest = Path(path) / MANIFEST_NAME
    if not manifest.is_file():
        return None
    return json.loads(manifest.read_text())


def slice_window(records: Sequence[FlowRecord], first_day: int, last_day: int) -> list[FlowRecord]:
    """Records with day_index in [first_day, last_day]."""
    return [r for r in records if first_day <= r.day_index <= last_day]


# ---------------------------------------------------------------------------
# temporal decay (per-home train vs. test accuracy)


@dataclass(frozen=True)
class HomeDecay:
    home_id: str
    train_accuracy: float
    test_accuracy: float

    @property
    def decay(self) -> float:
        return self.train_accuracy - self.test_accuracy


@dataclass(frozen=True)
class TemporalDecayReport:
    entries: tuple[HomeDecay, ...]
    skipped_homes: tuple[str, ...]

    @property
    def mean_decay(self) -> float:
        return float(np.mean([e.decay for e in self.entries]))


def temporal_decay_report(
    dataset: Mapping[str, Sequence[FlowRecord]],
    params: ForestParams,
    seed: int,
    train_days: int,
    *,
    metric_mode: str = "accepted-only",
    models=None,
) -> TemporalDecayReport:
    """Train one model per home on days [0, train_days) and compare its
    accuracy there against days [train_days, end].  Homes lacking data in
    either window are skipped and reported."""
    train_flows = {
        h: slice_window(recs, 0, train_days - 1) for h, recs in dataset.items()
    }
    if models is None:
        models = train_contextualized(
            {h: r for h, r in train_flows.items() if r}, params, seed
        )
    entries: list[HomeDecay] = []
    skipped: list[str] = []
    for home in sorted(dataset):
        test = [r for r in dataset[home] if r.day_index >= train_days]
        train = train_flows[home]
        if home not in models or not train or not test:
            skipped.append(home)
            continue
        model = models[home]
        train_acc = evaluate_model_on(model, train, metric_mode).accuracy
        test_acc = evaluate_model_on(model, test, metric_mode).accuracy
        entries.append(HomeDecay(home, train_acc, test_acc))
    return TemporalDecayReport(entries=tuple(entries), skipped_homes=tuple(skipped))


# ---------------------------------------------------------------------------
# spatial matrix (model x home accuracy grid)


@dataclass(frozen=True)
class SpatialMatrixReport:
    home_ids: tuple[str, ...]
    matrix: np.ndarray
    flagged: tuple[tuple[str, str], ...]

    @property
    def diagonal_mean(self) -> float:
        return float(np.mean(np.diag(self.matrix)))

    @property
    def off_diagonal_mean(self) -> float:
        h = self.matrix.shape[0]
        if h < 2:
            raise ValueError("off-diagonal mean needs at least 2 homes")
        off = ~np.eye(h, dtype=bool)
        return float(np.mean(self.matrix[off]))


def spatial_matrix(
    dataset: Mapping[str, Sequence[FlowRecord]],
    params: ForestParams,
    seed: int,
    train_days: int,
    *,
    metric_mode: str = "accepted-only",
    models=None,
) -> SpatialMatrixReport:
    """Cell (i, j) is the accuracy of home j's model on home i's test
    window.  Cells where the gate accepts nothing are flagged as
    (home, model) pairs."""
    homes = tuple(sorted(dataset))
    train_flows = {
        h: slice_window(dataset[h], 0, train_days - 1) for h in homes
    }
    if models is None:
        models = train_contextualized(
            {h: r for h, r in train_flows.items() if r}, params, seed
        )
    missing = [h for h in homes if h not in models]
    if missing:
        raise ValueError(f"homes without trainable models: {missing}")
    matrix = np.zeros((len(homes), len(homes)), dtype=np.float64)
    flagged: list[tuple[str, str]] = []
    for i, home in enumerate(homes):
        test = [r for r in dataset[home] if r.day_index >= train_days]
        if not test:
            raise ValueError(f"home {home} has no test-window records")
        for j, model_home in enumerate(homes):
            result = evaluate_model_on(models[model_home], test, metric_mode)
            matrix[i, j] = result.accuracy
            if result.all_rejected:
                flagged.append((home, model_home))
    return SpatialMatrixReport(home_ids=homes, matrix=matrix, flagged=tuple(flagged))


# ---------------------------------------------------------------------------
# strategy comparison runs


@dataclass(frozen=True)
class RunSpec:
    run_id: int
    seen_homes: tuple[str, ...]
    unseen_homes: tuple[str, ...]
    train_days: int
    test_days: int
    forest: ForestParams
    policy: SelectionPolicy
    seed: int
    metric_mode: str = "accepted-only"
    oracle_selection: bool = False

    def __post_init__(self) -> None:
        if set(self.seen_homes) & set(self.unseen_homes):
            raise ValueError("seen and unseen homes must be disjoint")
        if len(self.seen_homes) < 1:
            raise ValueError("need at least one seen home")
        if self.train_days < 1 or self.test_days < 1:
            raise ValueError("train_days and test_days must be >= 1")

    @property
    def first_test_day(self) -> int:
        return self.train_days

    @property
    def last_test_day(self) -> int:
        return self.train_days + self.test_days - 1


def make_run_specs(
    home_ids: Sequence[str],
    n_runs: int,
    n_seen: int,
    train_days: int,
    test_days: int,
    forest: ForestParams,
    policy: SelectionPolicy,
    seed: int,
    *,
    metric_mode: str = "accepted-only",
    oracle_selection: bool = False,
) -> tuple[RunSpec, ...]:
    """One spec per run; each run draws its seen homes uniformly without
    replacement from the dataset homes using its own derived seed."""
    homes = sorted(home_ids)
    if not 1 <= n_seen < len(homes):
        raise ValueError("n_seen must leave at least one unseen home")
    specs = []
    for run_id in range(1, n_runs + 1):
        run_seed = mix_seed(seed, "run", run_id)
        rng = np.random.default_rng(run_seed)
        seen = tuple(sorted(rng.choice(homes, size=n_seen, replace=False).tolist()))
        unseen = tuple(h for h in homes if h not in seen)
        specs.append(RunSpec(
            run_id=run_id,
            seen_homes=seen,
            unseen_homes=unseen,
            train_days=train_days,
            test_days=test_days,
            forest=forest,
            policy=policy,
            seed=run_seed,
            metric_mode=metric_mode,
            oracle_selection=oracle_selection,
        ))
    return tuple(specs)


@dataclass(frozen=True)
class DayOutcome:
    day_index: int
    records: int
    dynamic_accuracy: float | None
    static_accuracy: float | None


@dataclass(frozen=True)
class HomeOutcome:
    home_id: str
    strategy_accuracy: Mapping[str, float]
    context_choice: str
    static_choice: str
    context_selection_accuracy: float
    static_selection_accuracy: float
    train_best: str
    test_best: str
    trace: SelectionTrace
    days: tuple[DayOutcome, ...]
    days_gt: int
    days_lt: int
    days_eq: int

    @property
    def active_days(self) -> int:
        return sum(1 for d in self.days if d.records > 0)


@dataclass(frozen=True)
class RunResult:
    spec: RunSpec
    strategy_accuracy: Mapping[str, float]
    homes: tuple[HomeOutcome, ...]
    skipped_homes: tuple[str, ...]

    @property
    def mismatch_count(self) -> int:
        return sum(1 for h in self.homes if h.train_best != h.test_best)


def daily_comparison_counts(
    static_daily: Mapping[int, float],
    dynamic_daily: Mapping[int, float],
    tolerance: float = 1e-9,
) -> tuple[int, int, int]:
    """Count active test days where dynamic accuracy is above, below, or
    equal to static accuracy (equality within tolerance)."""
    if set(static_daily) != set(dynamic_daily):
        raise ValueError("static and dynamic traces cover different day sets")
    gt = lt = eq = 0
    for day in static_daily:
        s = static_daily[day]
        d = dynamic_daily[day]
        if d > s + tolerance:
            gt += 1
        elif d < s - tolerance:
            lt += 1
        else:
            eq += 1
    return gt, lt, eq


def ideal_mismatch_count(
    pool: ModelPool,
    unseen_flows: Mapping[str, Sequence[FlowRecord]],
    train_window: tuple[int, int],
    test_window: tuple[int, int],
    include_global: bool = False,
    metric_mode: str = "accepted-only",
) -> int:
    """Number of unseen homes whose best model over the training window
    differs from their best model over the test window."""
    count = 0
    for home in sorted(unseen_flows):
        records = unseen_flows[home]
        train = slice_window(records, *train_window)
        test = slice_window(records, *test_window)
        if not train or not test:
            continue
        best_train = select_best_static(pool, include_global, train, metric_mode)
        best_test = select_best_static(pool, include_global, test, metric_mode)
        if best_train != best_test:
            count += 1
    return count


def _evaluate_unseen_home(
    spec: RunSpec,
    pool: ModelPool,
    home_id: str,
    records: Sequence[FlowRecord],
    reference_histograms: Mapping[str, np.ndarray] | None,
) -> HomeOutcome | None:
    ev = evaluate_candidates(pool, True, records)
    train_mask = ev.days < spec.train_days
    test_mask = (ev.days >= spec.first_test_day) & (ev.days <= spec.last_test_day)
    if not bool(train_mask.any()) or not bool(test_mask.any()):
        return None

    selection_mask = test_mask if spec.oracle_selection else train_mask
    context_ids = tuple(cid for cid in ev.candidate_ids if cid != GLOBAL_CONTEXT)

    mode = spec.metric_mode
    global_acc = candidate_accuracy(ev, GLOBAL_CONTEXT, test_mask, mode).accuracy
    context_choice, context_sel_acc = best_on_mask(
        ev, selection_mask, mode, candidates=context_ids
    )
    static_choice, static_sel_acc = best_on_mask(ev, selection_mask, mode)
    context_acc = candidate_accuracy(ev, context_choice, test_mask, mode).accuracy
    static_acc = candidate_accuracy(ev, static_choice, test_mask, mode).accuracy

    trace = build_selection_trace(
        ev,
        home_id,
        spec.first_test_day,
        spec.last_test_day,
        spec.policy,
        mode=mode,
        reference_histograms=reference_histograms,
    )

    days: list[DayOutcome] = []
    static_daily: dict[int, float] = {}
    dynamic_daily: dict[int, float] = {}
    for entry in trace.entries:
        day = entry.day_index
        day_mask = ev.days == day
        n_day = int(day_mask.sum())
        if n_day == 0:
            days.append(DayOutcome(day, 0, None, None))
            continue
        dyn = candidate_accuracy(ev, entry.chosen_context, day_mask, mode).accuracy
        sta = candidate_accuracy(ev, static_choice, day_mask, mode).accuracy
        dynamic_daily[day] = dyn
        static_daily[day] = sta
        days.append(DayOutcome(day, n_day, dyn, sta))
    dynamic_acc = float(np.mean(list(dynamic_daily.values()))) if dynamic_daily else 0.0
    gt, lt, eq = daily_comparison_counts(static_daily, dynamic_daily)

    train_best, _ = best_on_mask(ev, train_mask, mode, candidates=context_ids)
    test_best, _ = best_on_mask(ev, test_mask, mode, candidates=context_ids)

    return HomeOutcome(
        home_id=home_id,
        strategy_accuracy={
            "mg": global_acc,
            "best_ctx": context_acc,
            "best_combined_static": static_acc,
            "best_combined_dynamic": dynamic_acc,
        },
        context_choice=context_choice,
        static_choice=static_choice,
        context_selection_accuracy=context_sel_acc,
        static_selection_accuracy=static_sel_acc,
        train_best=train_best,
        test_best=test_best,
        trace=trace,
        days=tuple(days),
        days_gt=gt,
        days_lt=lt,
        days_eq=eq,
    )


def run_experiment(
    spec: RunSpec,
    dataset: Mapping[str, Sequence[FlowRecord]],
) -> RunResult:
    """Execute one run: train the pool on the seen homes' training windows
    and score all four strategies on every unseen home's test window.

    The dynamic column is the mean of daily accuracies per home; the other
    columns are whole-test-window accuracies.  The run row averages
    (unweighted) across unseen homes."""
    train_flows = {
        h: slice_window(dataset.get(h, ()), 0, spec.train_days - 1)
        for h in spec.seen_homes
    }
    train_flows = {h: r for h, r in train_flows.items() if r}
    if not train_flows:
        raise ValueError("no seen home has training data")
    pool = build_pool(train_flows, spec.forest, spec.seed)

    references = None
    if spec.policy.mode == SelectionMode.SCORE_DISTRIBUTION:
        references = build_reference_histograms(
            pool, True, train_flows, spec.policy.histogram_bins
        )

    homes: list[HomeOutcome] = []
    skipped: list[str] = []
    for home in spec.unseen_homes:
        records = dataset.get(home, ())
        outcome = None
        if records:
            outcome = _evaluate_unseen_home(spec, pool, home, records, references)
        if outcome is None:
            skipped.append(home)
        else:
            homes.append(outcome)
    if not homes:
        raise ValueError("no unseen home has both selection and test data")

    averages = {
        column: float(np.mean([h.strategy_accuracy[column] for h in homes]))
        for column in STRATEGY_COLUMNS
    }
    return RunResult(
        spec=spec,
        strategy_accuracy=averages,
        homes=tuple(homes),
        skipped_homes=tuple(skipped),
    )


@dataclass(frozen=True)
class ExperimentReport:
    runs: tuple[RunResult, ...]

    @property
    def averages(self) -> dict[str, float]:
        return {
            column: float(np.mean([r.strategy_accuracy[column] for r in self.runs]))
            for column in STRATEGY_COLUMNS
        }

    def table4(self) -> dict[str, tuple[float, float, float]]:
        """Per home: mean (gt, lt, eq) day counts across runs where the
        home was unseen."""
        sums: dict[str, list[tuple[int, int, int]]] = {}
        for run in self.runs:
            for home in run.homes:
                sums.setdefault(home.home_id, []).append(
                    (home.days_gt, home.days_lt, home.days_eq)
                )
        return {
            home: tuple(float(np.mean([c[i] for c in counts])) for i in range(3))
            for home, counts in sorted(sums.items())
        }

    @property
    def mismatch_run_count(self) -> int:
        """Runs with at least one unseen home whose ideal model flips
        between the train and test windows."""
        return sum(1 for r in self.runs if r.mismatch_count > 0)


def run_all(
    specs: Sequence[RunSpec],
    dataset: Mapping[str, Sequence[FlowRecord]],
) -> ExperimentReport:
    return ExperimentReport(runs=tuple(run_experiment(s, dataset) for s in specs))


# ---------------------------------------------------------------------------
# report emission


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def emit_report(
    out_dir: str | Path,
    *,
    experiment: ExperimentReport | None = None,
    decay: TemporalDecayReport | None = None,
    matrix: SpatialMatrixReport | None = None,
    manifest: dict | None = None,
) -> list[Path]:
    """Write whichever report sections are provided as deterministic CSV
    plus a human-readable summary.  Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    summary: list[str] = []

    if experiment is not None:
        lines = [TABLE3_HEADER]
        for run in experiment.runs:
            cells = ",".join(_fmt(run.strategy_accuracy[c]) for c in STRATEGY_COLUMNS)
            lines.append(f"{run.spec.run_id},{cells}")
        avg = experiment.averages
        lines.append("avg," + ",".join(_fmt(avg[c]) for c in STRATEGY_COLUMNS))
        path = out / "table3.csv"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

        table4 = experiment.table4()
        homes = sorted(table4)
        lines = ["metric," + ",".join(homes)]
        for i, metric in enumerate(("days_dynamic_gt", "days_dynamic_lt", "days_dynamic_eq")):
            lines.append(metric + "," + ",".join(_fmt(table4[h][i]) for h in homes))
        path = out / "table4.csv"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

        traces_dir = out / "traces"
        traces_dir.mkdir(exist_ok=True)
        by_home: dict[str, list[tuple[int, HomeOutcome]]] = {}
        for run in experiment.runs:
            for home in run.homes:
                by_home.setdefault(home.home_id, []).append((run.spec.run_id, home))
        for home_id in sorted(by_home):
            lines = [
                "run_id,home_id,day_index,chosen_context,window_accuracy,"
                "window_records,dynamic_day_accuracy,static_day_accuracy,day_records"
            ]
            for run_id, outcome in sorted(by_home[home_id], key=lambda x: x[0]):
                day_info = {d.day_index: d for d in outcome.days}
                for entry in outcome.trace.entries:
                    d = day_info[entry.day_index]
                    dyn = _fmt(d.dynamic_accuracy) if d.dynamic_accuracy is not None else ""
                    sta = _fmt(d.static_accuracy) if d.static_accuracy is not None else ""
                    lines.append(
                        f"{run_id},{home_id},{entry.day_index},{entry.chosen_context},"
                        f"{_fmt(entry.window_accuracy)},{entry.window_records},"
                        f"{dyn},{sta},{d.records}"
                    )
            path = traces_dir / f"{home_id}.csv"
            path.write_text("\n".join(lines) + "\n")
            written.append(path)

        summary.append("strategy comparison (averages across runs):")
        for column in STRATEGY_COLUMNS:
            summary.append(f"  {column}: {_fmt(avg[column])}")
        summary.append(f"  runs: {len(experiment.runs)}")
        summary.append(
            f"  runs with an ideal-model mismatch between train and test windows: "
            f"{experiment.mismatch_run_count} of {len(experiment.runs)}"
        )
        skipped = sorted({h for r in experiment.runs for h in r.skipped_homes})
        if skipped:
            summary.append(f"  homes skipped for data paucity: {', '.join(skipped)}")

    if decay is not None:
        lines = ["home_id,train_accuracy,test_accuracy,decay"]
        for entry in decay.entries:
            lines.append(
                f"{entry.home_id},{_fmt(entry.train_accuracy)},"
                f"{_fmt(entry.test_accuracy)},{_fmt(entry.decay)}"
            )
        path = out / "temporal_decay.csv"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
        decays = [e.decay for e in decay.entries]
        summary.append("temporal decay:")
        summary.append(f"  mean decay: {_fmt(decay.mean_decay)}")
        summary.append(f"  min decay: {_fmt(min(decays))}")
        summary.append(f"  max decay: {_fmt(max(decays))}")
        if decay.skipped_homes:
            summary.append(f"  skipped homes: {', '.join(decay.skipped_homes)}")

    if matrix is not None:
        lines = ["home_id," + ",".join(f"m_{h}" for h in matrix.home_ids)]
        for i, home in enumerate(matrix.home_ids):
            lines.append(home + "," + ",".join(_fmt(v) for v in matrix.matrix[i]))
        path = out / "spatial_matrix.csv"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
        summary.append("spatial matrix:")
        summary.append(f"  diagonal mean: {_fmt(matrix.diagonal_mean)}")
        if len(matrix.home_ids) > 1:
            summary.append(f"  off-diagonal mean: {_fmt(matrix.off_diagonal_mean)}")
        if matrix.flagged:
            cells = ", ".join(f"({h},{m})" for h, m in matrix.flagged)
            summary.append(f"  all-rejected cells (home, model): {cells}")

    if manifest is not None:
        path = out / "manifest.json"
        path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        written.append(path)

    if summary:
        path = out / "summary.txt"
        path.write_text("\n".join(summary) + "\n")
        written.append(path)
    return written
