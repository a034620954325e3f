"""Interaction ingestion, fold splitting, and the pipeline's file formats.

The split RNG is pinned to a hand-rolled SplitMix64 + FNV-1a pair instead of
a library generator so the same seed reproduces the same splits on any
platform or language. Stream derivation: a SplitMix64 seeded with the config
seed emits one sub-seed per fold, and each user's shuffle stream is seeded
with fold_seed XOR fnv1a64(user_id). Shuffling is Fisher-Yates with
rejection-sampled bounds (no modulo bias).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from recfuse.core import (
    FoldSplit,
    Interaction,
    InteractionDataset,
    ModelWeights,
    PredictionMatrix,
    ScoredItem,
    collapse_duplicates,
)
from recfuse.fusion import FusedList

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood 2014); 64-bit outputs."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (2**64 // bound) * bound
        while True:
            v = self.next_u64()
            if v < limit:
                return v % bound


def _shuffle(items: list, rng: SplitMix64):
    for i in range(len(items) - 1, 0, -1):
        j = rng.below(i + 1)
        items[i], items[j] = items[j], items[i]


@dataclass(frozen=True)
class SplitSpec:
    """Parameters of the per-user random split."""

    seed: int
    n_folds: int = 5
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    min_interactions: int = 5

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ValueError("ratios must be three nonnegative fractions")
        if not math.isclose(sum(self.ratios), 1.0, rel_tol=0.0, abs_tol=1e-9):
            raise ValueError("ratios must sum to 1.0")


def split_folds(dataset: InteractionDataset, spec: SplitSpec) -> list[FoldSplit]:
    """Independent seeded train/validation/test re-splits of a dataset.

    Per user and fold: interactions are shuffled, then the first
    floor(0.6 n) + remainder go to train, the next floor(0.2 n) to
    validation, the last floor(0.2 n) to test. Users with fewer than
    `min_interactions` interactions go entirely to train.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    user_items = dataset.user_items()
    seed_stream = SplitMix64(spec.seed)
    fold_seeds = [seed_stream.next_u64() for _ in range(spec.n_folds)]

    folds = []
    for fold_index in range(spec.n_folds):
        train: dict[str, frozenset[str]] = {}
        validation: dict[str, frozenset[str]] = {}
        test: dict[str, frozenset[str]] = {}
        for user in sorted(user_items):
            items = list(user_items[user])
            count = len(items)
            if count < spec.min_interactions:
                train[user] = frozenset(items)
                continue
            rng = SplitMix64(fold_seeds[fold_index] ^ fnv1a64(user.encode("utf-8")))
            _shuffle(items, rng)
            # +1e-9 compensates binary rounding in ratio*count (0.6*5 < 3.0).
            n_train = int(math.floor(spec.ratios[0] * count + 1e-9))
            n_val = int(math.floor(spec.ratios[1] * count + 1e-9))
            n_test = int(math.floor(spec.ratios[2] * count + 1e-9))
            n_train += count - (n_train + n_val + n_test)
            train[user] = frozenset(items[:n_train])
            if n_val:
                validation[user] = frozenset(items[n_train:n_train + n_val])
            if n_test:
                test[user] = frozenset(items[n_train + n_val:])
        folds.append(FoldSplit(fold_index, train, validation, test))
    return folds


# -- interaction files -------------------------------------------------------

_DELIMITERS = {"csv": ",", "tsv": "\t"}


def load_interactions(path: str | Path, format: str = "csv",
                      column_map: Mapping[str, str | int] | None = None
                      ) -> InteractionDataset:
    """Read an interaction file into a deduplicated dataset.

    Args:
        path: delimiter-separated text file.
        format: 'csv' or 'tsv'.
        column_map: maps 'user'/'item' (required) and 'rating'/'timestamp'
            (optional) to either header names (strings; first row must be a
            header) or 0-based positions (ints; the file has no header).
            Default: {'user': 'user', 'item': 'item'}.

    Malformed rows (wrong field count, blank ids, unparseable numerics) are
    skipped, counted, and reported via logging.

    Raises:
        ValueError: bad format/column_map, missing header columns, or zero
            valid rows.
        OSError: unreadable file.
    """
    if format not in _DELIMITERS:
        raise ValueError(f"unknown format {format!r}, expected 'csv' or 'tsv'")
    if column_map is None:
        column_map = {"user": "user", "item": "item"}
    if "user" not in column_map or "item" not in column_map:
        raise ValueError("column_map must map 'user' and 'item'")
    unknown = set(column_map) - {"user", "item", "rating", "timestamp"}
    if unknown:
        raise ValueError(f"unknown column_map keys {sorted(unknown)}")
    by_name = all(isinstance(v, str) for v in column_map.values())
    by_pos = all(isinstance(v, int) for v in column_map.values())
    if not (by_name or by_pos):
        raise ValueError("column_map values must be all names or all positions")

    path = Path(path)
    records: list[Interaction] = []
    malformed = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=_DELIMITERS[format])
        if by_name:
            header = next(reader, None)
            if header is None:
                raise ValueError(f"{path}: empty file")
            positions = {}
            for field, name in column_map.items():
                if name not in header:
                    raise ValueError(f"{path}: column {name!r} not in header")
                positions[field] = header.index(name)
        else:
            positions = dict(column_map)

        needed = max(positions.values()) + 1
        for row in reader:
            if len(row) < needed:
                malformed += 1
                continue
            user = row[positions["user"]].strip()
            item = row[positions["item"]].strip()
            if not user or not item:
                malformed += 1
                continue
            rating = None
            timestamp = None
            try:
                if "rating" in positions and row[positions["rating"]].strip():
                    rating = float(row[positions["rating"]])
                if "timestamp" in positions and row[positions["timestamp"]].strip():
                    timestamp = int(float(row[positions["timestamp"]]))
            except ValueError:
                malformed += 1
                continue
            records.append(Interaction(user, item, rating, timestamp))

    if malformed:
        log.warning("%s: skipped %d malformed row(s)", path, malformed)
    if not records:
        raise ValueError(f"{path}: no valid interaction rows")
    return InteractionDataset(tuple(collapse_duplicates(records)))


def write_interactions(dataset: InteractionDataset, path: str | Path,
                       format: str = "csv"):
    """Write a dataset with a user,item,rating,timestamp header."""
    if format not in _DELIMITERS:
        raise ValueError(f"unknown format {format!r}, expected 'csv' or 'tsv'")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=_DELIMITERS[format], lineterminator="\n")
        writer.writerow(["user", "item", "rating", "timestamp"])
        ordered = sorted(dataset.records, key=lambda r: (r.user_id, r.item_id))
        for rec in ordered:
            writer.writerow([
                rec.user_id, rec.item_id,
                "" if rec.rating is None else format_score(rec.rating),
                "" if rec.timestamp is None else str(rec.timestamp),
            ])


# -- prediction matrix files -------------------------------------------------

def format_score(score: float) -> str:
    """17 significant digits: enough for a lossless float64 round trip."""
    return f"{score:.17g}"


MATRIX_HEADER = ["fold", "model", "user", "item", "score"]


def write_matrix(matrix: PredictionMatrix, path: str | Path):
    """Write a matrix as CSV rows grouped by (fold, model, user)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MATRIX_HEADER)
        for (fold, model, user), items in matrix.entries():
            for si in items:
                writer.writerow([fold, model, user, si.item_id,
                                 format_score(si.score)])


def read_matrix(path: str | Path, min_length: int | None = None) -> PredictionMatrix:
    """Read and validate a prediction-matrix CSV.

    Every contract violation is reported with its 1-based physical line
    number (the header is line 1). With min_length set, every list must
    hold at least that many items (the largest k the caller will request).
    """
    path = Path(path)
    entries: dict[tuple[int, str, str], list[ScoredItem]] = {}
    current_key = None
    current_items: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MATRIX_HEADER:
            raise ValueError(
                f"{path}: line 1: expected header {','.join(MATRIX_HEADER)!r}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise ValueError(f"{path}: line {line_no}: expected 5 fields, "
                                 f"got {len(row)}")
            fold_s, model, user, item, score_s = row
            try:
                fold = int(fold_s)
            except ValueError:
                raise ValueError(f"{path}: line {line_no}: fold {fold_s!r} "
                                 f"is not an integer") from None
            if fold < 0:
                raise ValueError(f"{path}: line {line_no}: fold must be >= 0")
            if not model or not user or not item:
                raise ValueError(f"{path}: line {line_no}: empty id field")
            try:
                score = float(score_s)
            except ValueError:
                raise ValueError(f"{path}: line {line_no}: score {score_s!r} "
                                 f"is not a number") from None
            if not math.isfinite(score):
                raise ValueError(f"{path}: line {line_no}: non-finite score")
            key = (fold, model, user)
            if key != current_key:
                if key in entries:
                    raise ValueError(
                        f"{path}: line {line_no}: rows for fold {fold}, model "
                        f"{model!r}, user {user!r} are not contiguous")
                entries[key] = []
                current_key = key
                current_items = set()
            lst = entries[key]
            if lst:
                prev = lst[-1]
                if score > prev.score:
                    raise ValueError(f"{path}: line {line_no}: scores must be "
                                     f"non-increasing within a list")
                if score == prev.score and item <= prev.item_id:
                    raise ValueError(f"{path}: line {line_no}: tied scores must "
                                     f"be ordered by item id ascending")
            if item in current_items:
                raise ValueError(f"{path}: line {line_no}: duplicate item "
                                 f"{item!r} in list")
            current_items.add(item)
            lst.append(ScoredItem(item, score))
    if not entries:
        raise ValueError(f"{path}: no data rows")
    matrix = PredictionMatrix.from_entries(entries)
    if min_length is not None:
        matrix.ensure_supports_k(min_length)
    return matrix


# -- split audit files -------------------------------------------------------

SPLITS_HEADER = ["fold", "user", "item", "subset"]


def write_splits(folds: Sequence[FoldSplit], path: str | Path):
    """Audit export: one row per (fold, user, item) with its subset label."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SPLITS_HEADER)
        for fold in folds:
            rows = []
            for subset in ("train", "validation", "test"):
                for user, items in fold.subset(subset).items():
                    for item in items:
                        rows.append((user, item, subset))
            rows.sort(key=lambda r: (r[0], r[1]))
            for user, item, subset in rows:
                writer.writerow([fold.fold_index, user, item, subset])


def read_splits(path: str | Path) -> list[FoldSplit]:
    """Read a split audit CSV back into FoldSplit objects."""
    path = Path(path)
    per_fold: dict[int, dict[str, dict[str, set[str]]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SPLITS_HEADER:
            raise ValueError(
                f"{path}: line 1: expected header {','.join(SPLITS_HEADER)!r}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"{path}: line {line_no}: expected 4 fields")
            fold_s, user, item, subset = row
            try:
                fold = int(fold_s)
            except ValueError:
                raise ValueError(f"{path}: line {line_no}: fold {fold_s!r} "
                                 f"is not an integer") from None
            if subset not in ("train", "validation", "test"):
                raise ValueError(f"{path}: line {line_no}: unknown subset "
                                 f"{subset!r}")
            per_fold.setdefault(fold, {"train": {}, "validation": {}, "test": {}})
            per_fold[fold][subset].setdefault(user, set()).add(item)
    if not per_fold:
        raise ValueError(f"{path}: no data rows")
    folds = []
    for fold_index in sorted(per_fold):
        subsets = per_fold[fold_index]
        folds.append(FoldSplit(
            fold_index,
            {u: frozenset(s) for u, s in subsets["train"].items()},
            {u: frozenset(s) for u, s in subsets["validation"].items()},
            {u: frozenset(s) for u, s in subsets["test"].items()},
        ))
    return folds


# -- weight files ------------------------------------------------------------

WEIGHTS_HEADER = ["fold", "model", "n", "weight"]


def write_weights(weights: ModelWeights, path: str | Path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WEIGHTS_HEADER)
        for (fold, model) in sorted(weights.weights):
            writer.writerow([fold, model, weights.cutoff_n,
                             format_score(weights.weights[(fold, model)])])


def read_weights(path: str | Path) -> ModelWeights:
    path = Path(path)
    table: dict[tuple[int, str], float] = {}
    cutoff = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != WEIGHTS_HEADER:
            raise ValueError(
                f"{path}: line 1: expected header {','.join(WEIGHTS_HEADER)!r}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"{path}: line {line_no}: expected 4 fields")
            fold_s, model, n_s, weight_s = row
            try:
                fold = int(fold_s)
                n = int(n_s)
                weight = float(weight_s)
            except ValueError:
                raise ValueError(f"{path}: line {line_no}: malformed row") from None
            if cutoff is None:
                cutoff = n
            elif n != cutoff:
                raise ValueError(f"{path}: line {line_no}: mixed cutoff n")
            key = (fold, model)
            if key in table:
                raise ValueError(f"{path}: line {line_no}: duplicate weight "
                                 f"for fold {fold}, model {model!r}")
            table[key] = weight
    if cutoff is None:
        raise ValueError(f"{path}: no data rows")
    return ModelWeights(table, cutoff)


# -- fused ranked-list export --------------------------------------------------

FUSED_HEADER = ["fold", "user", "item", "score"]


def write_fused(fused_by_fold: Mapping[int, Mapping[str, FusedList]],
                path: str | Path):
    """Export fused top-n lists, ranked order preserved per user."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FUSED_HEADER)
        for fold in sorted(fused_by_fold):
            per_user = fused_by_fold[fold]
            for user in sorted(per_user):
                for si in per_user[user].items:
                    writer.writerow([fold, user, si.item_id,
                                     format_score(si.score)])
