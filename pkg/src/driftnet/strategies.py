"""Inference strategies over pools of flow classifiers.

A :class:`ModelPool` holds one global model (trained on the pooled data of
all seen homes) plus one contextualized model per seen home.  For an unseen
home, a strategy picks which candidate to apply:

* static selection: argmax of macro accuracy on a fixed labeled selection
  window, chosen once;
* dynamic selection: the argmax re-evaluated on a sliding window of recent
  labeled days, on a fixed schedule;
* score-distribution selection: label-free variant that matches each
  candidate's score histogram on the new flows against the histogram the
  same candidate produced on its own training data.

Candidate order is canonical everywhere: the global model first, then
context models by lexicographic home id.  Argmax/argmin comparisons are
strict, so ties resolve to the earliest candidate in that order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .flow import FlowRecord, featurize_records
from .forest import (
    METRIC_MODES,
    ForestParams,
    MacroAccuracy,
    Model,
    compute_class_thresholds,
    macro_accuracy_arrays,
    predict_gated_matrix,
    predict_scores_matrix,
    train_forest,
)
from .seeding import mix_seed

logger = logging.getLogger(__name__)

GLOBAL_CONTEXT = "global"
DEFAULT_HISTOGRAM_BINS = 20


class SelectionMode(Enum):
    GLOBAL_ONLY = "global_only"
    CONTEXT_BEST = "context_best"
    COMBINED_STATIC = "combined_static"
    COMBINED_DYNAMIC = "combined_dynamic"
    SCORE_DISTRIBUTION = "score_distribution"


@dataclass(frozen=True)
class SelectionPolicy:
    mode: SelectionMode = SelectionMode.COMBINED_DYNAMIC
    window_days: int = 30
    reselect_every_days: int = 1
    min_window_records: int = 50
    histogram_bins: int = DEFAULT_HISTOGRAM_BINS

    def __post_init__(self) -> None:
        if self.window_days < 1 or self.reselect_every_days < 1:
            raise ValueError("window_days and reselect_every_days must be >= 1")
        if self.window_days < self.reselect_every_days:
            raise ValueError("window_days must be >= reselect_every_days")
        if self.min_window_records < 1:
            raise ValueError("min_window_records must be >= 1")
        if self.histogram_bins < 2:
            raise ValueError("histogram_bins must be >= 2")


@dataclass(frozen=True)
class ModelPool:
    """The global model plus per-home contextualized models."""

    global_model: Model | None
    context_models: Mapping[str, Model]
    seen_homes: frozenset[str]
    training_window: tuple[int, int]

    def __post_init__(self) -> None:
        if set(self.context_models) != set(self.seen_homes):
            raise ValueError("context_models keys must equal seen_homes")
        catalogs = {m.class_catalog for m in self.context_models.values()}
        if self.global_model is not None:
            catalogs.add(self.global_model.class_catalog)
        if len(catalogs) > 1:
            raise ValueError("all pool models must share one class catalog")
        if self.global_model is None and not self.context_models:
            raise ValueError("pool must hold at least one model")

    @property
    def class_catalog(self) -> tuple[str, ...]:
        if self.global_model is not None:
            return self.global_model.class_catalog
        first = min(self.context_models)
        return self.context_models[first].class_catalog

    def candidates(self, include_global: bool = True) -> list[tuple[str, Model]]:
        """Candidates in canonical order: global first, then lexicographic."""
        out: list[tuple[str, Model]] = []
        if include_global and self.global_model is not None:
            out.append((GLOBAL_CONTEXT, self.global_model))
        for home in sorted(self.context_models):
            out.append((home, self.context_models[home]))
        if not out:
            raise ValueError("no candidates available")
        return out

    def model_for(self, context_id: str) -> Model:
        if context_id == GLOBAL_CONTEXT:
            if self.global_model is None:
                raise KeyError("pool has no global model")
            return self.global_model
        return self.context_models[context_id]


def _training_window(records: Sequence[FlowRecord]) -> tuple[int, int]:
    days = [r.day_index for r in records]
    return (min(days), max(days))


def _labels_of(records: Sequence[FlowRecord]) -> list[str]:
    labels = []
    for r in records:
        if r.device_class is None:
            raise ValueError("training records must carry a device_class label")
        labels.append(r.device_class)
    return labels


def _union_catalog(flows_by_home: Mapping[str, Sequence[FlowRecord]]) -> tuple[str, ...]:
    seen: set[str] = set()
    for records in flows_by_home.values():
        seen.update(_labels_of(records))
    return tuple(sorted(seen))


def train_global(
    flows_by_home: Mapping[str, Sequence[FlowRecord]],
    params: ForestParams,
    seed: int,
    *,
    class_catalog: Sequence[str] | None = None,
) -> Model:
    """Train one model on the pooled data of all seen homes.

    Homes are concatenated in sorted id order.  The forest seed mixes the
    sorted home ids, so a pool of a single home yields the same forest as
    that home's contextualized model (same data, same effective seed).
    Thresholds are calibrated on the combined training set.
    """
    homes = sorted(h for h, recs in flows_by_home.items() if len(recs) > 0)
    if not homes:
        raise ValueError("train_global requires at least one home with data")
    records: list[FlowRecord] = []
    for home in homes:
        records.extend(flows_by_home[home])
    catalog = tuple(class_catalog) if class_catalog is not None else _union_catalog(flows_by_home)
    X = featurize_records(records)
    labels = _labels_of(records)
    model = train_forest(
        X,
        labels,
        params,
        mix_seed(seed, "context", *homes),
        class_catalog=catalog,
        context_id=GLOBAL_CONTEXT,
        training_window=_training_window(records),
    )
    return compute_class_thresholds(model, X, labels)


def train_contextualized(
    flows_by_home: Mapping[str, Sequence[FlowRecord]],
    params: ForestParams,
    seed: int,
    *,
    class_catalog: Sequence[str] | None = None,
) -> dict[str, Model]:
    """Train one model per home on that home's data alone.

    All models share the union class catalog so they are interchangeable in
    a pool.  Homes without any training records are excluded and reported
    through the module logger.
    """
    catalog = tuple(class_catalog) if class_catalog is not None else _union_catalog(flows_by_home)
    models: dict[str, Model] = {}
    skipped: list[str] = []
    for home in sorted(flows_by_home):
        records = flows_by_home[home]
        if len(records) == 0:
            skipped.append(home)
            continue
        X = featurize_records(records)
        labels = _labels_of(records)
        model = train_forest(
            X,
            labels,
            params,
            mix_seed(seed, "context", home),
            class_catalog=catalog,
            context_id=home,
            training_window=_training_window(records),
        )
        models[home] = compute_class_thresholds(model, X, labels)
    if skipped:
        logger.warning("excluded homes with no training data: %s", ", ".join(skipped))
    return models


def build_pool(
    flows_by_home: Mapping[str, Sequence[FlowRecord]],
    params: ForestParams,
    seed: int,
) -> ModelPool:
    """Train the global model and all contextualized models as one pool."""
    catalog = _union_catalog(flows_by_home)
    context_models = train_contextualized(flows_by_home, params, seed, class_catalog=catalog)
    global_model = train_global(flows_by_home, params, seed, class_catalog=catalog)
    windows = [m.training_window for m in context_models.values()]
    first = min(w[0] for w in windows)
    last = max(w[1] for w in windows)
    return ModelPool(
        global_model=global_model,
        context_models=context_models,
        seen_homes=frozenset(context_models),
        training_window=(first, last),
    )


def _extended_catalog(catalog: tuple[str, ...], labels: Iterable[str]) -> tuple[str, ...]:
    foreign = sorted(set(labels) - set(catalog))
    return catalog + tuple(foreign)


def _encode(labels: Sequence[str], catalog: tuple[str, ...]) -> np.ndarray:
    index = {label: k for k, label in enumerate(catalog)}
    return np.asarray([index[label] for label in labels], dtype=np.int64)


def evaluate_model_on(
    model: Model,
    records: Sequence[FlowRecord],
    mode: str = "accepted-only",
) -> MacroAccuracy:
    """Featurize, gate-predict, and macro-score a model on labeled records.

    True labels outside the model catalog are kept: the model can never
    predict them, so any accepted prediction on such records counts as
    wrong, and data with no class overlap scores 0.
    """
    if len(records) == 0:
        raise ValueError("evaluation requires at least one record")
    labels = _labels_of(records)
    X = featurize_records(records)
    codes, _, accepted = predict_gated_matrix(model, X)
    catalog = _extended_catalog(model.class_catalog, labels)
    return macro_accuracy_arrays(_encode(labels, catalog), codes, accepted, catalog, mode)


@dataclass(frozen=True)
class CandidateEvaluations:
    """Cached gated predictions of every pool candidate on one record set.

    Selection and per-day accuracy reduce to masked array reductions over
    these caches, so each model predicts each record exactly once no matter
    how many windows are scored.
    """

    catalog: tuple[str, ...]
    candidate_ids: tuple[str, ...]
    days: np.ndarray
    true_codes: np.ndarray | None
    pred_codes: Mapping[str, np.ndarray]
    accepted: Mapping[str, np.ndarray]
    top_scores: Mapping[str, np.ndarray]

    @property
    def n_records(self) -> int:
        return int(self.days.shape[0])


def evaluate_candidates(
    pool: ModelPool,
    include_global: bool,
    records: Sequence[FlowRecord],
) -> CandidateEvaluations:
    if len(records) == 0:
        raise ValueError("candidate evaluation requires at least one record")
    candidates = pool.candidates(include_global)
    X = featurize_records(records)
    days = np.asarray([r.day_index for r in records], dtype=np.int64)
    raw_labels = [r.device_class for r in records]
    if any(label is None for label in raw_labels):
        catalog = pool.class_catalog
        true_codes = None
    else:
        catalog = _extended_catalog(pool.class_catalog, raw_labels)
        true_codes = _encode(raw_labels, catalog)
    pred_codes: dict[str, np.ndarray] = {}
    accepted: dict[str, np.ndarray] = {}
    top_scores: dict[str, np.ndarray] = {}
    for cid, model in candidates:
        codes, top, acc = predict_gated_matrix(model, X)
        pred_codes[cid] = codes
        accepted[cid] = acc
        top_scores[cid] = top
    return CandidateEvaluations(
        catalog=catalog,
        candidate_ids=tuple(cid for cid, _ in candidates),
        days=days,
        true_codes=true_codes,
        pred_codes=pred_codes,
        accepted=accepted,
        top_scores=top_scores,
    )


def candidate_accuracy(
    ev: CandidateEvaluations,
    candidate_id: str,
    mask: np.ndarray,
    mode: str = "accepted-only",
) -> MacroAccuracy:
    if ev.true_codes is None:
        raise ValueError("records are unlabeled; accuracy is undefined")
    return macro_accuracy_arrays(
        ev.true_codes[mask],
        ev.pred_codes[candidate_id][mask],
        ev.accepted[candidate_id][mask],
        ev.catalog,
        mode,
    )


def best_on_mask(
    ev: CandidateEvaluations,
    mask: np.ndarray,
    mode: str = "accepted-only",
    candidates: Sequence[str] | None = None,
) -> tuple[str, float]:
    """Strict argmax of macro accuracy over candidates in canonical order.

    `candidates` restricts the field (e.g. context models only) but must
    preserve canonical order.
    """
    if not bool(mask.any()):
        raise ValueError("selection window is empty")
    field = tuple(candidates) if candidates is not None else ev.candidate_ids
    best_id: str | None = None
    best_acc = -1.0
    for cid in field:
        acc = candidate_accuracy(ev, cid, mask, mode).accuracy
        if acc > best_acc:
            best_id = cid
            best_acc = acc
    assert best_id is not None
    return best_id, best_acc


def select_best_static(
    pool: ModelPool,
    include_global: bool,
    records: Sequence[FlowRecord],
    mode: str = "accepted-only",
) -> str:
    """Pick the candidate with the highest macro accuracy on the records."""
    ev = evaluate_candidates(pool, include_global, records)
    chosen, _ = best_on_mask(ev, np.ones(ev.n_records, dtype=bool), mode)
    return chosen


def _fallback_choice(candidate_ids: Sequence[str]) -> str:
    return GLOBAL_CONTEXT if GLOBAL_CONTEXT in candidate_ids else candidate_ids[0]


def window_mask(days: np.ndarray, day: int, policy: SelectionPolicy) -> np.ndarray:
    """Sliding selection window for choosing a model to apply on `day`.

    Base window is day_index in [day - window_days, day - 1]; when it holds
    fewer than min_window_records records, the lower bound extends backward
    one day at a time (into training-period data) until the floor is met or
    no earlier data exists.
    """
    lo = day - policy.window_days
    mask = (days >= lo) & (days < day)
    if int(mask.sum()) >= policy.min_window_records:
        return mask
    earlier = days < lo
    if not bool(earlier.any()):
        return mask
    min_day = int(days[earlier].min())
    while lo > min_day and int(mask.sum()) < policy.min_window_records:
        lo -= 1
        mask = (days >= lo) & (days < day)
    return mask


def select_best_dynamic(
    pool: ModelPool,
    include_global: bool,
    records: Sequence[FlowRecord],
    day: int,
    policy: SelectionPolicy,
    *,
    first_test_day: int | None = None,
    previous_choice: str | None = None,
    mode: str = "accepted-only",
) -> str:
    """Sliding-window reselection for one day.

    Reselection happens only when (day - first_test_day) is a multiple of
    reselect_every_days (always, when first_test_day is omitted); otherwise
    the previous choice persists.  An empty window falls back to the
    previous choice, then to the global model, then to the lexicographically
    first context model.
    """
    candidate_ids = tuple(cid for cid, _ in pool.candidates(include_global))
    scheduled = (
        first_test_day is None
        or (day - first_test_day) % policy.reselect_every_days == 0
    )
    if not scheduled and previous_choice is not None:
        return previous_choice
    if len(records) == 0:
        return previous_choice or _fallback_choice(candidate_ids)
    ev = evaluate_candidates(pool, include_global, records)
    mask = window_mask(ev.days, day, policy)
    if not bool(mask.any()):
        return previous_choice or _fallback_choice(candidate_ids)
    chosen, _ = best_on_mask(ev, mask, mode)
    return chosen


@dataclass(frozen=True)
class TraceEntry:
    day_index: int
    chosen_context: str
    window_accuracy: float
    window_records: int


@dataclass(frozen=True)
class SelectionTrace:
    home_id: str
    entries: tuple[TraceEntry, ...]

    def __post_init__(self) -> None:
        days = [e.day_index for e in self.entries]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError("trace days must be strictly increasing")

    def choice_on(self, day: int) -> str:
        for entry in self.entries:
            if entry.day_index == day:
                return entry.chosen_context
        raise KeyError(f"no trace entry for day {day}")


def build_selection_trace(
    ev: CandidateEvaluations,
    home_id: str,
    first_test_day: int,
    last_test_day: int,
    policy: SelectionPolicy,
    *,
    mode: str = "accepted-only",
    reference_histograms: Mapping[str, np.ndarray] | None = None,
) -> SelectionTrace:
    """Run the day-by-day selector over one home's cached evaluations.

    `ev` must cover the home's full labeled history (training period plus
    test days seen so far); each test day selects on its sliding window.
    Days with zero records, and days off the reselection schedule, retain
    the previous entry.  With policy.mode == SCORE_DISTRIBUTION the window
    argmax is replaced by the label-free histogram-distance argmin against
    `reference_histograms` (window_accuracy still reports the chosen
    candidate's labeled window accuracy when labels exist).
    """
    if policy.mode == SelectionMode.SCORE_DISTRIBUTION and reference_histograms is None:
        raise ValueError("score-distribution selection needs reference histograms")
    entries: list[TraceEntry] = []
    prev: TraceEntry | None = None
    for day in range(first_test_day, last_test_day + 1):
        day_count = int((ev.days == day).sum())
        scheduled = (day - first_test_day) % policy.reselect_every_days == 0
        if (day_count == 0 or not scheduled) and prev is not None:
            entry = TraceEntry(day, prev.chosen_context, prev.window_accuracy, prev.window_records)
            entries.append(entry)
            prev = entry
            continue
        mask = window_mask(ev.days, day, policy)
        n_window = int(mask.sum())
        if n_window == 0:
            chosen = prev.chosen_context if prev is not None else _fallback_choice(ev.candidate_ids)
            acc = prev.window_accuracy if prev is not None else 0.0
            entry = TraceEntry(day, chosen, acc, 0)
            entries.append(entry)
            prev = entry
            continue
        if policy.mode == SelectionMode.SCORE_DISTRIBUTION:
            chosen = _best_by_score_distribution(ev, mask, reference_histograms, policy.histogram_bins)
            if ev.true_codes is not None:
                acc = candidate_accuracy(ev, chosen, mask, mode).accuracy
            else:
                acc = 0.0
        else:
            chosen, acc = best_on_mask(ev, mask, mode)
        entry = TraceEntry(day, chosen, acc, n_window)
        entries.append(entry)
        prev = entry
    return SelectionTrace(home_id=home_id, entries=tuple(entries))


TRACE_CSV_HEADER = "home_id,day_index,chosen_context,window_accuracy,window_records"


def export_selection_trace(trace: SelectionTrace) -> str:
    """Render a trace as CSV text (header + one row per day)."""
    lines = [TRACE_CSV_HEADER]
    for e in trace.entries:
        lines.append(
            f"{trace.home_id},{e.day_index},{e.chosen_context},"
            f"{e.window_accuracy:.6f},{e.window_records}"
        )
    return "\n".join(lines) + "\n"


def histogram_from_scores(scores: np.ndarray, bins: int = DEFAULT_HISTOGRAM_BINS) -> np.ndarray:
    if bins < 2:
        raise ValueError("bins must be >= 2")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] == 0:
        raise ValueError("histogram requires at least one score")
    counts, _ = np.histogram(scores, bins=bins, range=(0.0, 1.0))
    return counts.astype(np.float64) / scores.shape[0]


def score_histogram(
    model: Model,
    records: Sequence[FlowRecord],
    bins: int = DEFAULT_HISTOGRAM_BINS,
) -> np.ndarray:
    """Normalized histogram of top-1 scores over [0, 1].

    Equal-width bins; the last bin is right-closed so a score of exactly
    1.0 lands in it.
    """
    if len(records) == 0:
        raise ValueError("score_histogram requires at least one record")
    X = featurize_records(records)
    scores = predict_scores_matrix(model, X)
    return histogram_from_scores(scores.max(axis=1), bins)


def histogram_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two discrete distributions."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"histogram length mismatch: {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def build_reference_histograms(
    pool: ModelPool,
    include_global: bool,
    train_flows_by_home: Mapping[str, Sequence[FlowRecord]],
    bins: int = DEFAULT_HISTOGRAM_BINS,
) -> dict[str, np.ndarray]:
    """Each candidate's score histogram on its own training data.

    The global model's reference uses the pooled training flows of all seen
    homes (sorted home order); each context model uses its home's flows.
    """
    references: dict[str, np.ndarray] = {}
    for cid, model in pool.candidates(include_global):
        if cid == GLOBAL_CONTEXT:
            records: list[FlowRecord] = []
            for home in sorted(train_flows_by_home):
                records.extend(train_flows_by_home[home])
        else:
            records = list(train_flows_by_home[cid])
        references[cid] = score_histogram(model, records, bins)
    return references


def _best_by_score_distribution(
    ev: CandidateEvaluations,
    mask: np.ndarray,
    references: Mapping[str, np.ndarray],
    bins: int,
) -> str:
    best_id: str | None = None
    best_dist = np.inf
    for cid in ev.candidate_ids:
        hist = histogram_from_scores(ev.top_scores[cid][mask], bins)
        dist = histogram_distance(hist, references[cid])
        if dist < best_dist:
            best_id = cid
            best_dist = dist
    assert best_id is not None
    return best_id


def select_by_score_distribution(
    pool: ModelPool,
    include_global: bool,
    records: Sequence[FlowRecord],
    reference_histograms: Mapping[str, np.ndarray],
    bins: int = DEFAULT_HISTOGRAM_BINS,
) -> str:
    """Label-free selection: minimize each candidate's distance between its
    score histogram on the records and its own training-time reference."""
    ev = evaluate_candidates(pool, include_global, records)
    mask = np.ones(ev.n_records, dtype=bool)
    return _best_by_score_distribution(ev, mask, reference_histograms, bins)
