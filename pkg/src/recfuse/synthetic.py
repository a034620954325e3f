"""Seeded synthetic interaction datasets with recommender-friendly structure.

Generation is driven entirely by the package's pinned SplitMix64 stream
(vectorized here as a counter-based mix), not by numpy's RNG, so a seed
reproduces the same dataset on any platform and numpy version. The model:
users and items get latent factors, items get a Zipf-like popularity boost,
and each user's interactions are their top-quota items under
affinity + popularity + Gumbel noise (which is exactly sampling without
replacement proportional to softmax weights).
"""

from __future__ import annotations

import numpy as np

from recfuse.core import Interaction, InteractionDataset
from recfuse.data import SplitMix64

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64_array(seed: int, count: int) -> np.ndarray:
    """The first `count` outputs of SplitMix64(seed), vectorized."""
    with np.errstate(over="ignore"):
        z = (np.uint64(seed & (2**64 - 1))
             + np.arange(1, count + 1, dtype=np.uint64) * _GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _uniforms(seed: int, count: int) -> np.ndarray:
    """count uniforms in (0, 1), 53-bit resolution, never exactly 0."""
    bits = _splitmix64_array(seed, count) >> np.uint64(11)
    return (bits.astype(np.float64) + 1.0) / 9007199254740993.0


def generate_interactions(n_users: int, n_items: int, n_interactions: int,
                          seed: int, n_factors: int = 8,
                          popularity_weight: float = 1.0,
                          noise_scale: float = 0.6) -> InteractionDataset:
    """Generate a dataset of exactly n_interactions implicit events.

    Per-user quotas are proportional to a uniform draw in [0.5, 1.5] with
    largest-remainder rounding, clamped to [1, n_items], so the requested
    total is met exactly whenever n_interactions <= n_users * n_items.

    Args:
        n_users: users, ids u0000..; zero-padded so id order is numeric order.
        n_items: catalog size, ids i00000...
        n_interactions: total events to emit.
        seed: drives every random choice.
        n_factors: latent dimensionality of the affinity term.
        popularity_weight: strength of the shared Zipf-like item boost.
        noise_scale: Gumbel noise magnitude; higher means noisier tastes.
    """
    if n_users < 1 or n_items < 1:
        raise ValueError("need at least one user and one item")
    if not 1 <= n_interactions <= n_users * n_items:
        raise ValueError("n_interactions must be in [1, n_users * n_items]")

    root = SplitMix64(seed)
    seeds = {name: root.next_u64()
             for name in ("user_f", "item_f", "pop", "quota", "noise")}

    user_f = _uniforms(seeds["user_f"], n_users * n_factors).reshape(
        n_users, n_factors)
    item_f = _uniforms(seeds["item_f"], n_items * n_factors).reshape(
        n_items, n_factors)

    # Zipf-like boost over a seeded item permutation, normalized to [0, 1].
    rank_weight = 1.0 / np.power(np.arange(1, n_items + 1, dtype=np.float64), 0.8)
    rank_weight /= rank_weight[0]
    perm = np.argsort(_splitmix64_array(seeds["pop"], n_items), kind="stable")
    popularity = np.empty(n_items, dtype=np.float64)
    popularity[perm] = rank_weight

    draws = 0.5 + _uniforms(seeds["quota"], n_users)
    exact = n_interactions * draws / draws.sum()
    quotas = np.floor(exact).astype(np.int64)
    np.clip(quotas, 0, n_items, out=quotas)
    leftover = n_interactions - int(quotas.sum())
    if leftover > 0:
        remainders = exact - np.floor(exact)
        # Most-deserving users first; index breaks ties. Skip full users.
        order = np.lexsort((np.arange(n_users), -remainders))
        pos = 0
        while leftover > 0:
            u = int(order[pos % n_users])
            if quotas[u] < n_items:
                quotas[u] += 1
                leftover -= 1
            pos += 1
    elif leftover < 0:
        order = np.lexsort((np.arange(n_users), quotas))[::-1]
        pos = 0
        while leftover < 0:
            u = int(order[pos % n_users])
            if quotas[u] > 0:
                quotas[u] -= 1
                leftover += 1
            pos += 1

    affinity = user_f @ item_f.T
    affinity *= n_factors ** -0.5
    noise_u = _uniforms(seeds["noise"], n_users * n_items).reshape(
        n_users, n_items)
    gumbel = -np.log(-np.log(noise_u))
    scores = affinity + popularity_weight * popularity + noise_scale * gumbel

    user_width = max(4, len(str(n_users - 1)))
    item_width = max(5, len(str(n_items - 1)))
    item_ids = [f"i{j:0{item_width}d}" for j in range(n_items)]

    records = []
    timestamp = 0
    for u in range(n_users):
        user_id = f"u{u:0{user_width}d}"
        top = np.argsort(-scores[u], kind="stable")[:int(quotas[u])]
        for j in np.sort(top):
            records.append(Interaction(user_id, item_ids[int(j)], 1.0, timestamp))
            timestamp += 1
    return InteractionDataset(tuple(records))
