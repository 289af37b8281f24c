"""Random-forest classifier with per-class acceptance gating.

A trained :class:`Model` predicts by soft voting: every tree contributes
its leaf's class frequency distribution and the forest averages them.  The
top-scoring class is *accepted* only when its score reaches the per-class
acceptance threshold, which is the mean score the model assigned to
correctly predicted training instances of that class.  Rejected records are
treated as "unknown" and handled by the evaluation metric.

Models serialize to a three-line text format (magic line, canonical JSON
document, sha256 checksum) that round-trips byte-identically.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .flow import N_FEATURES
from .seeding import mix_seed, worker_threads
from .tree import build_tree, forest_scores

MODEL_MAGIC = "DRIFTNET-MODEL"
MODEL_FORMAT_VERSION = 1

METRIC_MODES = ("accepted-only", "rejected-as-wrong")


class ModelFormatError(ValueError):
    """Raised when serialized model data cannot be decoded."""


class ModelChecksumError(ModelFormatError):
    """Raised when the embedded checksum does not match the payload."""


@dataclass(frozen=True)
class ForestParams:
    """Forest hyperparameters.

    features_per_split defaults to ceil(sqrt(28)) = 6 for the flow feature
    layout; it is clamped by validation, never silently.
    """

    n_trees: int = 100
    max_depth: int = 20
    min_samples_leaf: int = 2
    features_per_split: int = 6
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 1 <= self.features_per_split <= N_FEATURES:
            raise ValueError(
                f"features_per_split must be in [1, {N_FEATURES}], "
                f"got {self.features_per_split}"
            )


@dataclass(frozen=True)
class Prediction:
    class_label: str
    score: float
    accepted: bool


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable trained forest.

    Tree nodes live in flat struct-of-arrays form: all trees concatenated,
    child indices pre-offset, ``tree_roots[t]`` locating tree t.  A node
    with ``node_feature == -1`` is a leaf whose distribution is row
    ``node_leaf`` of ``leaf_dist``.

    ``class_thresholds[k]`` is the acceptance threshold for
    ``class_catalog[k]``; a fresh model carries zeros (accept everything)
    until :func:`compute_class_thresholds` is applied.
    """

    node_feature: np.ndarray
    node_threshold: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_leaf: np.ndarray
    leaf_dist: np.ndarray
    tree_roots: np.ndarray
    class_catalog: tuple[str, ...]
    class_thresholds: np.ndarray
    context_id: str
    training_window: tuple[int, int]
    hyperparams: ForestParams
    rng_seed: int

    @property
    def n_trees(self) -> int:
        return int(self.tree_roots.shape[0])

    @property
    def n_classes(self) -> int:
        return len(self.class_catalog)

    def class_index(self, label: str) -> int:
        try:
            return self.class_catalog.index(label)
        except ValueError:
            raise KeyError(f"label {label!r} not in class catalog") from None


def _as_matrix(vectors: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ValueError(f"expected (n, {N_FEATURES}) feature matrix, got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    return X


def _encode_labels(labels: Sequence[str], catalog: tuple[str, ...]) -> np.ndarray:
    index = {label: k for k, label in enumerate(catalog)}
    codes = np.empty(len(labels), dtype=np.int64)
    for i, label in enumerate(labels):
        try:
            codes[i] = index[label]
        except KeyError:
            raise ValueError(f"label {label!r} not in class catalog") from None
    return codes


def train_forest(
    vectors: np.ndarray,
    labels: Sequence[str],
    params: ForestParams,
    seed: int,
    *,
    class_catalog: Sequence[str] | None = None,
    context_id: str = "unspecified",
    training_window: tuple[int, int] = (0, 0),
) -> Model:
    """Train a forest on (vectors, labels) with a fully deterministic seed.

    Tree t uses seed ``mix_seed(seed, "tree", t)``, so the forest is
    identical no matter how many worker threads build it.  ``class_catalog``
    defaults to the sorted distinct labels; when given it must cover every
    label (a catalog wider than the sample labels is allowed, so models
    trained on different subsets can share one catalog).
    """
    X = _as_matrix(vectors)
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty sample set")
    if len(labels) != X.shape[0]:
        raise ValueError("labels length does not match vector count")
    if class_catalog is None:
        catalog = tuple(sorted(set(labels)))
    else:
        catalog = tuple(class_catalog)
        if len(set(catalog)) != len(catalog):
            raise ValueError("class catalog contains duplicates")
        if list(catalog) != sorted(catalog):
            raise ValueError("class catalog must be sorted")
    y = _encode_labels(labels, catalog)
    n_classes = len(catalog)

    tree_seeds = [mix_seed(seed, "tree", t) for t in range(params.n_trees)]

    def build_one(tree_seed: int):
        return build_tree(
            X,
            y,
            n_classes,
            params.max_depth,
            params.min_samples_leaf,
            params.features_per_split,
            params.bootstrap,
            np.uint64(tree_seed),
        )

    workers = worker_threads()
    if workers > 1 and params.n_trees > 1:
        # build_tree releases the GIL, so a thread pool gives real parallelism
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(build_one, tree_seeds))
    else:
        trees = [build_one(s) for s in tree_seeds]

    roots = np.empty(params.n_trees, dtype=np.int64)
    node_offset = 0
    leaf_offset = 0
    shifted = []
    for t, (feat, thr, left, right, leaf_ref, dist) in enumerate(trees):
        roots[t] = node_offset
        left = left.copy()
        right = right.copy()
        leaf_ref = leaf_ref.copy()
        internal = feat >= 0
        left[internal] += node_offset
        right[internal] += node_offset
        leaf_ref[~internal] += leaf_offset
        shifted.append((feat, thr, left, right, leaf_ref, dist))
        node_offset += feat.shape[0]
        leaf_offset += dist.shape[0]

    return Model(
        node_feature=np.concatenate([s[0] for s in shifted]),
        node_threshold=np.concatenate([s[1] for s in shifted]),
        node_left=np.concatenate([s[2] for s in shifted]),
        node_right=np.concatenate([s[3] for s in shifted]),
        node_leaf=np.concatenate([s[4] for s in shifted]),
        leaf_dist=np.concatenate([s[5] for s in shifted], axis=0),
        tree_roots=roots,
        class_catalog=catalog,
        class_thresholds=np.zeros(n_classes, dtype=np.float64),
        context_id=context_id,
        training_window=training_window,
        hyperparams=params,
        rng_seed=int(seed),
    )


def predict_scores_matrix(model: Model, vectors: np.ndarray) -> np.ndarray:
    """Per-class soft-vote scores for each row; rows sum to 1."""
    X = _as_matrix(vectors)
    return forest_scores(
        model.node_feature,
        model.node_threshold,
        model.node_left,
        model.node_right,
        model.node_leaf,
        model.leaf_dist,
        model.tree_roots,
        X,
    )


def predict_scores(model: Model, vector: np.ndarray) -> np.ndarray:
    fv = np.asarray(vector, dtype=np.float64)
    if fv.shape != (N_FEATURES,):
        raise ValueError(f"expected a ({N_FEATURES},) feature vector, got {fv.shape}")
    return predict_scores_matrix(model, fv.reshape(1, -1))[0]


def gate_scores(model: Model, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Argmax + threshold gate over a score matrix.

    Returns (class codes, top scores, accepted mask).  Ties on the top
    score resolve to the lowest catalog index; acceptance is inclusive
    (score == threshold accepts).
    """
    codes = np.argmax(scores, axis=1)
    top = scores[np.arange(scores.shape[0]), codes]
    accepted = top >= model.class_thresholds[codes]
    return codes, top, accepted


def predict_gated_matrix(model: Model, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return gate_scores(model, predict_scores_matrix(model, vectors))


def predict_gated(model: Model, vector: np.ndarray) -> Prediction:
    scores = predict_scores(model, vector)
    codes, top, accepted = gate_scores(model, scores.reshape(1, -1))
    return Prediction(
        class_label=model.class_catalog[int(codes[0])],
        score=float(top[0]),
        accepted=bool(accepted[0]),
    )


def compute_class_thresholds(
    model: Model, vectors: np.ndarray, labels: Sequence[str]
) -> Model:
    """Return a copy of the model with acceptance thresholds calibrated.

    The threshold for class k is the mean top score over calibration
    records of class k that the model predicts correctly (before gating).
    Classes with no correct prediction get threshold 0, which accepts any
    score for them.
    """
    X = _as_matrix(vectors)
    if X.shape[0] == 0:
        raise ValueError("cannot calibrate thresholds on an empty sample set")
    if len(labels) != X.shape[0]:
        raise ValueError("labels length does not match vector count")
    y = _encode_labels(labels, model.class_catalog)
    scores = predict_scores_matrix(model, X)
    codes = np.argmax(scores, axis=1)
    top = scores[np.arange(scores.shape[0]), codes]
    thresholds = np.zeros(model.n_classes, dtype=np.float64)
    for k in range(model.n_classes):
        correct = (y == k) & (codes == k)
        if correct.any():
            thresholds[k] = float(np.mean(top[correct]))
    return dataclasses.replace(model, class_thresholds=thresholds)


@dataclass(frozen=True)
class MacroAccuracy:
    """Macro-averaged accuracy under acceptance gating.

    accuracy is the unweighted mean of per-class accuracies; coverage is
    the accepted fraction of all records.  In "accepted-only" mode a class
    contributes correct/accepted over its accepted records, and classes
    present in the truth but with zero accepted records are excluded (and
    listed in excluded_classes).  In "rejected-as-wrong" mode every present
    class contributes correct/total, counting rejections as errors.
    all_rejected flags batches where the gate accepted nothing.
    """

    accuracy: float
    coverage: float
    per_class: Mapping[str, float]
    excluded_classes: tuple[str, ...]
    all_rejected: bool
    n_records: int


def macro_accuracy_arrays(
    true_codes: np.ndarray,
    pred_codes: np.ndarray,
    accepted: np.ndarray,
    catalog: tuple[str, ...],
    mode: str = "accepted-only",
) -> MacroAccuracy:
    if mode not in METRIC_MODES:
        raise ValueError(f"unknown metric mode {mode!r}; expected one of {METRIC_MODES}")
    n = int(true_codes.shape[0])
    if n == 0:
        raise ValueError("macro accuracy requires at least one record")
    if pred_codes.shape[0] != n or accepted.shape[0] != n:
        raise ValueError("prediction arrays must match record count")

    n_classes = len(catalog)
    present = np.bincount(true_codes, minlength=n_classes)
    acc_mask = accepted.astype(bool)
    accepted_per_class = np.bincount(true_codes[acc_mask], minlength=n_classes)
    correct_mask = acc_mask & (pred_codes == true_codes)
    correct_per_class = np.bincount(true_codes[correct_mask], minlength=n_classes)

    coverage = float(acc_mask.sum()) / n
    all_rejected = not bool(acc_mask.any())

    per_class: dict[str, float] = {}
    excluded: list[str] = []
    values: list[float] = []
    for k in range(n_classes):
        if present[k] == 0:
            continue
        if mode == "accepted-only":
            if accepted_per_class[k] == 0:
                excluded.append(catalog[k])
                continue
            value = correct_per_class[k] / accepted_per_class[k]
        else:
            value = correct_per_class[k] / present[k]
        per_class[catalog[k]] = float(value)
        values.append(float(value))

    accuracy = float(np.mean(values)) if values else 0.0
    return MacroAccuracy(
        accuracy=accuracy,
        coverage=coverage,
        per_class=per_class,
        excluded_classes=tuple(excluded),
        all_rejected=all_rejected,
        n_records=n,
    )


def macro_accuracy(
    pairs: Iterable[tuple[str, Prediction]],
    catalog: Sequence[str],
    mode: str = "accepted-only",
) -> MacroAccuracy:
    """Macro accuracy over (true label, prediction) pairs."""
    cat = tuple(catalog)
    true_codes_list: list[int] = []
    pred_codes_list: list[int] = []
    accepted_list: list[bool] = []
    index = {label: k for k, label in enumerate(cat)}
    for true_label, pred in pairs:
        if true_label not in index:
            raise ValueError(f"true label {true_label!r} not in class catalog")
        if pred.class_label not in index:
            raise ValueError(f"predicted label {pred.class_label!r} not in class catalog")
        true_codes_list.append(index[true_label])
        pred_codes_list.append(index[pred.class_label])
        accepted_list.append(pred.accepted)
    return macro_accuracy_arrays(
        np.asarray(true_codes_list, dtype=np.int64),
        np.asarray(pred_codes_list, dtype=np.int64),
        np.asarray(accepted_list, dtype=bool),
        cat,
        mode,
    )


def _tree_to_nested(model: Model, root: int) -> dict:
    # iterative bottom-up build; recursion depth would equal tree depth
    order: list[int] = []
    walk = [root]
    while walk:
        cur = walk.pop()
        order.append(cur)
        if model.node_feature[cur] >= 0:
            walk.append(int(model.node_right[cur]))
            walk.append(int(model.node_left[cur]))
    built: dict[int, dict] = {}
    for cur in reversed(order):
        if model.node_feature[cur] < 0:
            row = int(model.node_leaf[cur])
            built[cur] = {
                "leaf_distribution": [float(v) for v in model.leaf_dist[row]],
            }
        else:
            built[cur] = {
                "feature_index": int(model.node_feature[cur]),
                "split_threshold": float(model.node_threshold[cur]),
                "children": [
                    built[int(model.node_left[cur])],
                    built[int(model.node_right[cur])],
                ],
            }
    return built[root]


def save_model(model: Model) -> bytes:
    """Serialize to the three-line model format; byte-deterministic."""
    trees = []
    for t in range(model.n_trees):
        trees.append(_tree_to_nested(model, int(model.tree_roots[t])))
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "context_id": model.context_id,
        "class_catalog": list(model.class_catalog),
        "class_thresholds": [float(v) for v in model.class_thresholds],
        "training_window": [int(model.training_window[0]), int(model.training_window[1])],
        "rng_seed": int(model.rng_seed),
        "hyperparams": {
            "n_trees": model.hyperparams.n_trees,
            "max_depth": model.hyperparams.max_depth,
            "min_samples_leaf": model.hyperparams.min_samples_leaf,
            "features_per_split": model.hyperparams.features_per_split,
            "bootstrap": model.hyperparams.bootstrap,
        },
        "trees": trees,
    }
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")
    digest = hashlib.sha256(payload).hexdigest()
    header = f"{MODEL_MAGIC} {MODEL_FORMAT_VERSION}\n".encode("ascii")
    return header + payload + b"\n" + f"sha256 {digest}\n".encode("ascii")


def _nested_to_flat(trees: list[dict], n_classes: int):
    features: list[int] = []
    thresholds: list[float] = []
    lefts: list[int] = []
    rights: list[int] = []
    leaf_refs: list[int] = []
    dists: list[list[float]] = []
    roots: list[int] = []

    for tree in trees:
        roots.append(len(features))
        # preorder DFS with explicit stack; node ids assigned on visit
        stack: list[tuple[dict, int]] = []

        def alloc(node: dict) -> int:
            node_id = len(features)
            features.append(-1)
            thresholds.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            leaf_refs.append(-1)
            if "leaf_distribution" in node:
                dist = node["leaf_distribution"]
                if len(dist) != n_classes:
                    raise ModelFormatError("leaf distribution width does not match catalog")
                leaf_refs[node_id] = len(dists)
                dists.append([float(v) for v in dist])
            else:
                try:
                    features[node_id] = int(node["feature_index"])
                    thresholds[node_id] = float(node["split_threshold"])
                    children = node["children"]
                except (KeyError, TypeError, ValueError) as exc:
                    raise ModelFormatError(f"malformed tree node: {exc}") from exc
                if not isinstance(children, list) or len(children) != 2:
                    raise ModelFormatError("internal node must have exactly two children")
                stack.append((children[1], node_id))
                stack.append((children[0], node_id))
            return node_id

        alloc(tree)
        while stack:
            child, parent = stack.pop()
            child_id = alloc(child)
            if lefts[parent] < 0:
                lefts[parent] = child_id
            else:
                rights[parent] = child_id

    return (
        np.asarray(features, dtype=np.int32),
        np.asarray(thresholds, dtype=np.float64),
        np.asarray(lefts, dtype=np.int32),
        np.asarray(rights, dtype=np.int32),
        np.asarray(leaf_refs, dtype=np.int32),
        np.asarray(dists, dtype=np.float64).reshape(len(dists), n_classes),
        np.asarray(roots, dtype=np.int64),
    )


def load_model(data: bytes) -> Model:
    """Parse serialized model bytes, verifying version and checksum."""
    lines = data.split(b"\n")
    if len(lines) < 3 or (len(lines) == 3 and lines[2] != b""):
        raise ModelFormatError("truncated model data")
    header = lines[0].decode("ascii", errors="replace")
    parts = header.split(" ")
    if len(parts) != 2 or parts[0] != MODEL_MAGIC:
        raise ModelFormatError(f"bad model header {header!r}")
    if parts[1] != str(MODEL_FORMAT_VERSION):
        raise ModelFormatError(
            f"unsupported model format version {parts[1]!r}; this build reads "
            f"version {MODEL_FORMAT_VERSION}"
        )
    payload = lines[1]
    checksum_line = lines[2].decode("ascii", errors="replace")
    if not checksum_line.startswith("sha256 "):
        raise ModelFormatError("missing checksum line")
    expected = checksum_line[len("sha256 "):].strip()
    actual = hashlib.sha256(payload).hexdigest()
    if actual != expected:
        raise ModelChecksumError(
            f"model checksum mismatch: expected {expected}, computed {actual}"
        )
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model payload is not valid JSON: {exc}") from exc
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError("payload format_version does not match header")

    try:
        catalog = tuple(str(c) for c in doc["class_catalog"])
        thresholds = np.asarray(doc["class_thresholds"], dtype=np.float64)
        hp = doc["hyperparams"]
        params = ForestParams(
            n_trees=int(hp["n_trees"]),
            max_depth=int(hp["max_depth"]),
            min_samples_leaf=int(hp["min_samples_leaf"]),
            features_per_split=int(hp["features_per_split"]),
            bootstrap=bool(hp["bootstrap"]),
        )
        window = doc["training_window"]
        trees = doc["trees"]
        context_id = str(doc["context_id"])
        rng_seed = int(doc["rng_seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc

    if len(trees) != params.n_trees:
        raise ModelFormatError("tree count does not match hyperparams")
    if thresholds.shape != (len(catalog),):
        raise ModelFormatError("class_thresholds width does not match catalog")

    feat, thr, left, right, leaf_ref, dist, roots = _nested_to_flat(trees, len(catalog))
    return Model(
        node_feature=feat,
        node_threshold=thr,
        node_left=left,
        node_right=right,
        node_leaf=leaf_ref,
        leaf_dist=dist,
        tree_roots=roots,
        class_catalog=catalog,
        class_thresholds=thresholds,
        context_id=context_id,
        training_window=(int(window[0]), int(window[1])),
        hyperparams=params,
        rng_seed=rng_seed,
    )
