"""Ranking quality metrics.

NDCG here uses a fixed-length ideal: idcg(n) always discounts n positions,
regardless of how many holdout items a user actually has. A user with two
holdout items and a perfect length-3 list therefore scores below 1.0. That
is deliberate and every consumer in this package relies on it.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence


def dcg(rel: Sequence[float]) -> float:
    """Discounted cumulative gain of a relevance vector.

    Args:
        rel: relevance per rank, position 1 first.

    Returns:
        sum of rel_i / log2(i + 1) over 1-based positions i.
    """
    if len(rel) == 0:
        raise ValueError("empty list")
    return sum(r / math.log2(i + 1) for i, r in enumerate(rel, start=1))


def idcg(n: int) -> float:
    """Ideal DCG for a list of length n: every position relevant."""
    if n <= 0:
        raise ValueError("invalid length")
    return sum(1.0 / math.log2(i + 1) for i in range(1, n + 1))


def ndcg_user(ranked_items: Sequence[str], holdout: Iterable[str], n: int) -> float:
    """NDCG of one user's ranked list against their holdout items.

    Only the first n entries of ranked_items are scored. A list shorter than
    n contributes gain only for the positions it fills, but the denominator
    stays idcg(n), so short lists are penalized.
    """
    if n <= 0:
        raise ValueError("invalid length")
    holdout_set = holdout if isinstance(holdout, (set, frozenset)) else set(holdout)
    head = ranked_items[:n]
    if len(head) == 0:
        return 0.0
    rel = [1.0 if item in holdout_set else 0.0 for item in head]
    return dcg(rel) / idcg(n)


def ndcg_model(lists: Mapping[str, Sequence[str]],
               holdouts: Mapping[str, Iterable[str]],
               n: int,
               include_empty_holdout_users: bool = False) -> float:
    """Mean per-user NDCG over an evaluation population.

    Users whose holdout is empty (or missing from `holdouts`) are excluded
    by default; with include_empty_holdout_users they count as 0 instead.
    Summation runs in ascending user_id order so the result is reproducible
    regardless of mapping iteration order.

    Raises:
        ValueError: no users survive the population rule.
    """
    if n <= 0:
        raise ValueError("invalid length")
    total = 0.0
    count = 0
    for user in sorted(lists):
        holdout = holdouts.get(user)
        if not holdout:
            if include_empty_holdout_users:
                count += 1
            continue
        total += ndcg_user(lists[user], holdout, n)
        count += 1
    if count == 0:
        raise ValueError("empty evaluation population")
    return total / count
