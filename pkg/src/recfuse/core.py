"""Shared domain types for the rank-fusion pipeline.

Everything here is immutable after construction and safe to share across
parallel workers. String user/item ids are the external currency; internally
ids are mapped to dense integer indices (sorted by id, so index order equals
id order) because the hot loops fan out over (user x model x k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np


class ScoredItem(NamedTuple):
    """One item with the score a model assigned to it."""

    item_id: str
    score: float


@dataclass(frozen=True)
class Interaction:
    """A single observed (user, item) event."""

    user_id: str
    item_id: str
    rating: float | None = None
    timestamp: int | None = None


class IdIndex:
    """Bidirectional map between string ids and dense integer indices.

    Indices are assigned in ascending id order, so sorting by index is the
    same as sorting by id. That property is what makes a stable argsort on
    scores break ties by item id for free.
    """

    __slots__ = ("_ids", "_pos")

    def __init__(self, ids: Iterable[str]):
        self._ids: tuple[str, ...] = tuple(sorted(set(ids)))
        self._pos: dict[str, int] = {s: i for i, s in enumerate(self._ids)}

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, id_: str) -> bool:
        return id_ in self._pos

    def index(self, id_: str) -> int:
        return self._pos[id_]

    def id(self, index: int) -> str:
        return self._ids[index]

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    def indices_of(self, ids: Sequence[str]) -> np.ndarray:
        return np.fromiter((self._pos[s] for s in ids), dtype=np.int32, count=len(ids))


@dataclass(frozen=True)
class InteractionDataset:
    """Deduplicated (user, item) events.

    Invariants checked at construction: ids are non-empty strings and no
    (user_id, item_id) pair appears twice. Loaders are responsible for
    collapsing duplicates before building the dataset (see data module).
    """

    records: tuple[Interaction, ...]

    def __post_init__(self):
        seen: set[tuple[str, str]] = set()
        for rec in self.records:
            if not rec.user_id or not rec.item_id:
                raise ValueError("user_id and item_id must be non-empty strings")
            key = (rec.user_id, rec.item_id)
            if key in seen:
                raise ValueError(f"duplicate interaction {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.records)

    def pairs(self) -> set[tuple[str, str]]:
        return {(r.user_id, r.item_id) for r in self.records}

    def user_items(self) -> dict[str, list[str]]:
        """Items per user, each list in ascending item order."""
        out: dict[str, list[str]] = {}
        for rec in self.records:
            out.setdefault(rec.user_id, []).append(rec.item_id)
        for items in out.values():
            items.sort()
        return out

    def users(self) -> list[str]:
        return sorted({r.user_id for r in self.records})

    def items(self) -> list[str]:
        return sorted({r.item_id for r in self.records})


def collapse_duplicates(records: Iterable[Interaction]) -> list[Interaction]:
    """Collapse repeated (user, item) pairs, keeping the latest timestamp.

    Records without timestamps lose to records with one; among equal (or
    absent) timestamps the record seen last wins.
    """
    best: dict[tuple[str, str], Interaction] = {}
    for rec in records:
        key = (rec.user_id, rec.item_id)
        prev = best.get(key)
        if prev is None:
            best[key] = rec
            continue
        prev_ts = prev.timestamp if prev.timestamp is not None else -math.inf
        cur_ts = rec.timestamp if rec.timestamp is not None else -math.inf
        if cur_ts >= prev_ts:
            best[key] = rec
    return list(best.values())


_SUBSETS = ("train", "validation", "test")


@dataclass(frozen=True)
class FoldSplit:
    """One train/validation/test partition of a dataset's (user, item) pairs.

    Each subset maps user_id to a frozen set of item_ids. The three subsets
    are pairwise disjoint per user (checked at construction).
    """

    fold_index: int
    train: Mapping[str, frozenset[str]]
    validation: Mapping[str, frozenset[str]]
    test: Mapping[str, frozenset[str]]

    def __post_init__(self):
        if self.fold_index < 0:
            raise ValueError("fold_index must be non-negative")
        users = set(self.train) | set(self.validation) | set(self.test)
        for user in users:
            tr = self.train.get(user, frozenset())
            va = self.validation.get(user, frozenset())
            te = self.test.get(user, frozenset())
            if tr & va or tr & te or va & te:
                raise ValueError(f"subsets overlap for user {user!r} in fold {self.fold_index}")

    def subset(self, name: str) -> Mapping[str, frozenset[str]]:
        if name not in _SUBSETS:
            raise ValueError(f"unknown subset {name!r}")
        return getattr(self, name)

    def holdout(self, kind: str) -> Mapping[str, frozenset[str]]:
        """The validation or test item sets, keyed by user."""
        if kind not in ("validation", "test"):
            raise ValueError(f"holdout kind must be 'validation' or 'test', got {kind!r}")
        return getattr(self, kind)

    def pairs(self, name: str) -> set[tuple[str, str]]:
        return {(u, i) for u, items in self.subset(name).items() for i in items}

    def users(self) -> list[str]:
        return sorted(set(self.train) | set(self.validation) | set(self.test))


class _Block:
    """Ranked lists of one (fold, model), stored CSR-style over dense indices."""

    __slots__ = ("user_rows", "indptr", "items", "scores", "_row_of")

    def __init__(self, user_rows: np.ndarray, indptr: np.ndarray,
                 items: np.ndarray, scores: np.ndarray):
        self.user_rows = user_rows      # sorted user indices, one per stored list
        self.indptr = indptr            # list r spans items[indptr[r]:indptr[r+1]]
        self.items = items              # dense item indices
        self.scores = scores            # float64, descending within each list
        self._row_of: dict[int, int] | None = None

    def row_of(self) -> dict[int, int]:
        if self._row_of is None:
            self._row_of = {int(u): r for r, u in enumerate(self.user_rows)}
        return self._row_of

    def slice_for_row(self, row: int) -> tuple[np.ndarray, np.ndarray]:
        start, end = int(self.indptr[row]), int(self.indptr[row + 1])
        return self.items[start:end], self.scores[start:end]


class PredictionMatrix:
    """Ranked, scored item lists per (fold, model, user).

    The central exchange format of the pipeline. Lists are sorted by score
    descending with ties broken by item id ascending, contain no duplicate
    items, and hold only finite scores; all three properties are validated
    at construction so downstream code never re-checks them.
    """

    def __init__(self, user_index: IdIndex, item_index: IdIndex,
                 blocks: Mapping[tuple[int, str], _Block], validate: bool = True):
        self._users = user_index
        self._items = item_index
        self._blocks = dict(blocks)
        if validate:
            self._validate()

    # -- construction -----------------------------------------------------

    @classmethod
    def from_entries(cls, entries: Mapping[tuple[int, str, str], Sequence[ScoredItem]]
                     ) -> "PredictionMatrix":
        """Build from a plain {(fold, model, user): [ScoredItem, ...]} mapping."""
        users = IdIndex(u for (_, _, u) in entries)
        item_ids: set[str] = set()
        for lst in entries.values():
            item_ids.update(si.item_id for si in lst)
        items = IdIndex(item_ids)

        grouped: dict[tuple[int, str], list[tuple[str, Sequence[ScoredItem]]]] = {}
        for (fold, model, user), lst in entries.items():
            grouped.setdefault((int(fold), model), []).append((user, lst))

        blocks: dict[tuple[int, str], _Block] = {}
        for key, rows in grouped.items():
            rows.sort(key=lambda pair: pair[0])
            user_rows = np.fromiter((users.index(u) for u, _ in rows),
                                    dtype=np.int32, count=len(rows))
            lengths = [len(lst) for _, lst in rows]
            indptr = np.zeros(len(rows) + 1, dtype=np.int64)
            np.cumsum(lengths, out=indptr[1:])
            flat_items = np.empty(int(indptr[-1]), dtype=np.int32)
            flat_scores = np.empty(int(indptr[-1]), dtype=np.float64)
            pos = 0
            for _, lst in rows:
                for si in lst:
                    flat_items[pos] = items.index(si.item_id)
                    flat_scores[pos] = si.score
                    pos += 1
            blocks[key] = _Block(user_rows, indptr, flat_items, flat_scores)
        return cls(users, items, blocks)

    def _validate(self):
        for (fold, model), block in self._blocks.items():
            if not np.all(np.isfinite(block.scores)):
                bad = int(np.flatnonzero(~np.isfinite(block.scores))[0])
                user = self._offending_user(block, bad)
                raise ValueError(
                    f"non-finite score in fold {fold}, model {model!r}, user {user!r}")
            if block.user_rows.size and np.any(np.diff(block.user_rows) <= 0):
                raise ValueError(f"duplicate user lists in fold {fold}, model {model!r}")
            # Adjacent-pair checks within each list: scores non-increasing,
            # equal scores ordered by item index, no item repeated.
            n = block.scores.size
            if n:
                same_list = np.ones(n - 1, dtype=bool)
                boundaries = block.indptr[1:-1]
                boundaries = boundaries[(boundaries > 0) & (boundaries < n)]
                same_list[boundaries.astype(np.int64) - 1] = False
                s0, s1 = block.scores[:-1], block.scores[1:]
                i0, i1 = block.items[:-1], block.items[1:]
                bad_order = same_list & ((s0 < s1) | ((s0 == s1) & (i0 >= i1)))
                if np.any(bad_order):
                    pos = int(np.flatnonzero(bad_order)[0])
                    user = self._offending_user(block, pos)
                    raise ValueError(
                        f"list not sorted (score desc, ties by item id) in fold {fold}, "
                        f"model {model!r}, user {user!r}")
                # Duplicates that are not adjacent (same item, different score):
                rows = np.repeat(np.arange(block.user_rows.size, dtype=np.int64),
                                 np.diff(block.indptr))
                keys = rows * (len(self._items) + 1) + block.items
                if np.unique(keys).size != keys.size:
                    raise ValueError(
                        f"duplicate item within a list in fold {fold}, model {model!r}")

    def _offending_user(self, block: _Block, flat_pos: int) -> str:
        row = int(np.searchsorted(block.indptr, flat_pos, side="right")) - 1
        return self._users.id(int(block.user_rows[row]))

    # -- accessors ---------------------------------------------------------

    @property
    def user_index(self) -> IdIndex:
        return self._users

    @property
    def item_index(self) -> IdIndex:
        return self._items

    def folds(self) -> list[int]:
        return sorted({fold for (fold, _) in self._blocks})

    def models(self, fold: int | None = None) -> list[str]:
        if fold is None:
            return sorted({m for (_, m) in self._blocks})
        return sorted({m for (f, m) in self._blocks if f == fold})

    def has_block(self, fold: int, model: str) -> bool:
        return (fold, model) in self._blocks

    def block(self, fold: int, model: str) -> _Block:
        try:
            return self._blocks[(fold, model)]
        except KeyError:
            raise KeyError(f"no lists for model {model!r} in fold {fold}") from None

    def users(self, fold: int, model: str) -> list[str]:
        block = self.block(fold, model)
        return [self._users.id(int(u)) for u in block.user_rows]

    def scored_list(self, fold: int, model: str, user: str) -> list[ScoredItem]:
        block = self.block(fold, model)
        row = block.row_of().get(self._users.index(user))
        if row is None:
            raise KeyError(f"no list for user {user!r} in fold {fold}, model {model!r}")
        items, scores = block.slice_for_row(row)
        ids = self._items.ids
        return [ScoredItem(ids[int(i)], float(s)) for i, s in zip(items, scores)]

    def ranked_ids(self, fold: int, model: str, user: str, limit: int | None = None
                   ) -> list[str]:
        """Item ids of a stored list, optionally truncated, scores dropped."""
        block = self.block(fold, model)
        row = block.row_of().get(self._users.index(user))
        if row is None:
            raise KeyError(f"no list for user {user!r} in fold {fold}, model {model!r}")
        items, _ = block.slice_for_row(row)
        if limit is not None:
            items = items[:limit]
        ids = self._items.ids
        return [ids[int(i)] for i in items]

    def entries(self) -> Iterator[tuple[tuple[int, str, str], list[ScoredItem]]]:
        """Iterate ((fold, model, user), list) in (fold, model, user) order."""
        ids = self._items.ids
        for (fold, model) in sorted(self._blocks):
            block = self._blocks[(fold, model)]
            for row, u in enumerate(block.user_rows):
                items, scores = block.slice_for_row(row)
                lst = [ScoredItem(ids[int(i)], float(s)) for i, s in zip(items, scores)]
                yield (fold, model, self._users.id(int(u))), lst

    def n_lists(self) -> int:
        return sum(len(b.user_rows) for b in self._blocks.values())

    def min_list_length(self) -> int:
        shortest = None
        for block in self._blocks.values():
            if block.user_rows.size:
                length = int(np.diff(block.indptr).min())
                shortest = length if shortest is None else min(shortest, length)
        if shortest is None:
            raise ValueError("matrix has no lists")
        return shortest

    def ensure_supports_k(self, k: int):
        """Raise if any stored list is shorter than k, naming the first gap."""
        for (fold, model) in sorted(self._blocks):
            block = self._blocks[(fold, model)]
            lengths = np.diff(block.indptr)
            short = np.flatnonzero(lengths < k)
            if short.size:
                user = self._users.id(int(block.user_rows[int(short[0])]))
                raise ValueError(
                    f"list for fold {fold}, model {model!r}, user {user!r} has "
                    f"{int(lengths[short[0]])} items but k={k} was requested")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PredictionMatrix):
            return NotImplemented
        return list(self.entries()) == list(other.entries())


@dataclass(frozen=True)
class ModelWeights:
    """Per (fold, model) fusion weights, each a validation NDCG in [0, 1]."""

    weights: Mapping[tuple[int, str], float]
    cutoff_n: int

    def __post_init__(self):
        for key, w in self.weights.items():
            if not (0.0 <= w <= 1.0) or not math.isfinite(w):
                raise ValueError(f"weight for {key} is {w}, must be in [0, 1]")
        if self.cutoff_n < 1:
            raise ValueError("cutoff_n must be >= 1")

    def weight(self, fold: int, model: str) -> float:
        try:
            return self.weights[(fold, model)]
        except KeyError:
            raise KeyError(f"no weight for model {model!r} in fold {fold}") from None

    def for_fold(self, fold: int) -> dict[str, float]:
        return {m: w for (f, m), w in self.weights.items() if f == fold}


@dataclass(frozen=True)
class EnsembleResult:
    """A model subset with its fold-averaged evaluation."""

    members: frozenset[str]
    per_fold_ndcg: tuple[float, ...]
    mean_ndcg: float
    ci_low: float
    ci_high: float
    k: int
    cutoff_n: int

    def __post_init__(self):
        if not self.members:
            raise ValueError("members must be nonempty")
        if self.per_fold_ndcg:
            mean = sum(self.per_fold_ndcg) / len(self.per_fold_ndcg)
            if not math.isclose(mean, self.mean_ndcg, rel_tol=0.0, abs_tol=1e-12):
                raise ValueError("mean_ndcg must equal the mean of per_fold_ndcg")
        if not (self.ci_low <= self.mean_ndcg <= self.ci_high):
            raise ValueError("confidence interval must bracket the mean")
