"""Model weighting and ensemble subset search.

Both search modes consume an evaluation callable mapping a candidate member
set to its selection-split NDCG, so the same code drives real fold
evaluations and synthetic score tables in tests. Evaluations are memoized
per callable instance because greedy and exhaustive revisit candidates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from recfuse.core import FoldSplit, ModelWeights, PredictionMatrix
from recfuse.fusion import FoldFuser, fuse_all
from recfuse.metrics import ndcg_model

# Strict-improvement guard: a candidate must beat the incumbent by more than
# this before greedy accepts it, so float noise cannot grow the ensemble.
GREEDY_TOLERANCE = 1e-12

EXHAUSTIVE_LIMIT = 20


@dataclass(frozen=True)
class TraceStep:
    """One evaluated candidate subset."""

    members: frozenset[str]
    ndcg: float


@dataclass(frozen=True)
class SelectionTrace:
    """Every candidate a search evaluated, in evaluation order, plus the pick."""

    mode: str
    steps: tuple[TraceStep, ...]
    chosen_members: frozenset[str]
    chosen_ndcg: float

    def __post_init__(self):
        if self.mode not in ("greedy", "exhaustive"):
            raise ValueError(f"unknown selection mode {self.mode!r}")
        if not self.chosen_members:
            raise ValueError("chosen_members must be nonempty")


def compute_weights(matrix: PredictionMatrix, folds: Sequence[FoldSplit],
                    n: int, include_empty_holdout_users: bool = False
                    ) -> ModelWeights:
    """Validation NDCG@n per (fold, model): the fusion weights.

    Computed from the raw matrix; normalization cannot change a list's
    order, so weights are identical either way.

    Raises:
        ValueError: a (fold, model) pair has no lists, or a matrix fold has
            no split.
    """
    splits = {f.fold_index: f for f in folds}
    model_roster = matrix.models()
    table: dict[tuple[int, str], float] = {}
    for fold in matrix.folds():
        if fold not in splits:
            raise ValueError(f"no split provided for fold {fold}")
        holdouts = splits[fold].holdout("validation")
        for model in model_roster:
            if not matrix.has_block(fold, model):
                raise ValueError(f"no lists for model {model!r} in fold {fold}")
            lists = {u: matrix.ranked_ids(fold, model, u, limit=n)
                     for u in matrix.users(fold, model)}
            table[(fold, model)] = ndcg_model(
                lists, holdouts, n,
                include_empty_holdout_users=include_empty_holdout_users)
    return ModelWeights(table, n)


def evaluate_ensemble(members: Sequence[str] | frozenset[str],
                      matrix: PredictionMatrix, weights: ModelWeights,
                      split: FoldSplit, k: int, n: int,
                      holdout_kind: str = "test",
                      include_empty_holdout_users: bool = False) -> float:
    """NDCG@n of the fused member lists against one fold's holdout.

    The matrix must already be normalized (see fusion.normalize_scores);
    this is the reference implementation that the vectorized fold evaluator
    is tested against.
    """
    fused = fuse_all(matrix, weights, members, split.fold_index, k, n)
    lists = {user: fl.item_ids() for user, fl in fused.items()}
    return ndcg_model(lists, split.holdout(holdout_kind), n,
                      include_empty_holdout_users=include_empty_holdout_users)


class MemoizedEval:
    """Wrap a candidate evaluator with a by-members cache and a call count."""

    def __init__(self, fn: Callable[[frozenset[str]], float]):
        self._fn = fn
        self._cache: dict[frozenset[str], float] = {}
        self.calls = 0

    def __call__(self, members: frozenset[str]) -> float:
        cached = self._cache.get(members)
        if cached is not None:
            return cached
        self.calls += 1
        value = self._fn(members)
        self._cache[members] = value
        return value


def fold_evaluator(matrix: PredictionMatrix, weights: ModelWeights,
                   split: FoldSplit, k: int, n: int,
                   holdout_kind: str = "validation",
                   include_empty_holdout_users: bool = False) -> MemoizedEval:
    """Memoized candidate evaluator over one fold's holdout.

    Backed by the vectorized FoldFuser; equal to evaluate_ensemble on the
    same normalized matrix (tested to 1e-12).
    """
    fuser = FoldFuser(matrix, split.fold_index, k)
    holdouts = split.holdout(holdout_kind)

    def _eval(members: frozenset[str]) -> float:
        return fuser.ndcg(sorted(members), weights, holdouts, n,
                          include_empty_holdout_users=include_empty_holdout_users)

    return MemoizedEval(_eval)


def greedy_select(models: Sequence[str],
                  eval_fn: Callable[[frozenset[str]], float]) -> SelectionTrace:
    """Forward greedy subset search.

    Starts from the best singleton, then repeatedly adds the unused model
    whose addition scores highest, accepting only strict improvement
    (> GREEDY_TOLERANCE). Candidates are evaluated in sorted model order
    and ties resolve to the earlier candidate, so the trace is deterministic.
    """
    roster = sorted(set(models))
    if not roster:
        raise ValueError("no models")
    steps: list[TraceStep] = []

    best_members: frozenset[str] | None = None
    best_score = None
    for model in roster:
        candidate = frozenset([model])
        score = eval_fn(candidate)
        steps.append(TraceStep(candidate, score))
        if best_score is None or score > best_score:
            best_members, best_score = candidate, score

    current, current_score = best_members, best_score
    while True:
        unused = [m for m in roster if m not in current]
        if not unused:
            break
        round_best: frozenset[str] | None = None
        round_score = None
        for model in unused:
            candidate = current | {model}
            score = eval_fn(candidate)
            steps.append(TraceStep(candidate, score))
            if round_score is None or score > round_score:
                round_best, round_score = candidate, score
        if round_score > current_score + GREEDY_TOLERANCE:
            current, current_score = round_best, round_score
        else:
            break

    return SelectionTrace("greedy", tuple(steps), current, current_score)


def exhaustive_select(models: Sequence[str],
                      eval_fn: Callable[[frozenset[str]], float]) -> SelectionTrace:
    """Evaluate all 2^M - 1 nonempty subsets and keep the maximizer.

    Subsets are enumerated in bitmask order over the sorted roster; score
    ties resolve to the lexicographically smallest sorted member tuple.
    """
    roster = sorted(set(models))
    if not roster:
        raise ValueError("no models")
    if len(roster) > EXHAUSTIVE_LIMIT:
        raise ValueError("exhaustive limit exceeded")
    steps: list[TraceStep] = []
    best_members: frozenset[str] | None = None
    best_key: tuple[float, tuple[str, ...]] | None = None
    for mask in range(1, 1 << len(roster)):
        members = frozenset(roster[i] for i in range(len(roster))
                            if mask & (1 << i))
        score = eval_fn(members)
        steps.append(TraceStep(members, score))
        key = (-score, tuple(sorted(members)))
        if best_key is None or key < best_key:
            best_key, best_members = key, members
    return SelectionTrace("exhaustive", tuple(steps), best_members, -best_key[0])


# -- trace export --------------------------------------------------------------

TRACE_HEADER = ["mode", "fold", "members", "k", "n", "split", "ndcg"]


def format_members(members: frozenset[str]) -> str:
    return "+".join(sorted(members))


def append_trace_rows(writer, trace: SelectionTrace, fold: int | str, k: int,
                      n: int, split: str, score_fmt: Callable[[float], str]):
    """Write one CSV row per evaluated candidate of a trace."""
    for step in trace.steps:
        writer.writerow([trace.mode, fold, format_members(step.members),
                         k, n, split, score_fmt(step.ndcg)])


def write_traces(path: str | Path,
                 rows: Sequence[tuple[SelectionTrace, int | str, int, int, str]],
                 extra_rows: Sequence[tuple[str, int | str, frozenset[str],
                                            int, int, str, float]] = ()):
    """Write selection traces plus any extra evaluation rows to a CSV.

    Args:
        path: output file.
        rows: (trace, fold, k, n, split) tuples, written in order.
        extra_rows: (mode, fold, members, k, n, split, ndcg) rows appended
            after the traces (e.g. the chosen subset's test-split score).
    """
    from recfuse.data import format_score

    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for trace, fold, k, n, split in rows:
            append_trace_rows(writer, trace, fold, k, n, split, format_score)
        for mode, fold, members, k, n, split, ndcg in extra_rows:
            writer.writerow([mode, fold, format_members(members), k, n,
                             split, format_score(ndcg)])
