"""Built-in neighborhood and popularity recommenders.

All models operate on the binarized user-item incidence matrix (any rating
above 0 counts as an interaction) held dense in float64. Dense is a
deliberate choice: the target scale is desk-sized experiment datasets, where
the full item-item Gram matrix fits comfortably in memory and BLAS beats
sparse indexing.

Similarity conventions, shared by every kind that uses one:
  - vectors are cosine-normalized after any weighting (TF-IDF, BM25), so
    weighting changes the geometry, not the [0, 1] range on nonnegative data;
  - kNN kinds truncate to the top `nn` neighbors excluding self, ties broken
    by index (= id) ascending;
  - item-item kinds keep the full similarity matrix, self included.
"""

from __future__ import annotations

import logging
from typing import Iterable, Mapping, Sequence

import numpy as np

from recfuse.core import FoldSplit, IdIndex, PredictionMatrix, ScoredItem
from recfuse.core import _Block

log = logging.getLogger(__name__)

MODEL_KINDS = (
    "popularity",
    "user-knn",
    "item-knn",
    "item-item-cosine",
    "item-item-tfidf",
    "item-item-bm25",
)

DEFAULT_PARAMS = {
    "nn": 20,      # neighborhood size for the kNN kinds
    "k1": 1.2,     # BM25 term-frequency saturation
    "b": 0.75,     # BM25 length normalization
}


def _cosine_normalize_columns(matrix: np.ndarray) -> np.ndarray:
    norms = np.sqrt((matrix * matrix).sum(axis=0))
    safe = np.where(norms > 0.0, norms, 1.0)
    return matrix / safe


def _truncate_neighbors(sim: np.ndarray, nn: int) -> np.ndarray:
    """Keep each row's top-nn off-diagonal entries, zero the rest.

    Stable argsort on the negated row orders by similarity descending with
    index-ascending ties, matching the package-wide tie rule.
    """
    out = np.zeros_like(sim)
    n = sim.shape[0]
    work = sim.copy()
    np.fill_diagonal(work, -np.inf)
    order = np.argsort(-work, axis=1, kind="stable")
    keep = order[:, :min(nn, n - 1)]
    rows = np.arange(n)[:, None]
    vals = work[rows, keep]
    mask = np.isfinite(vals) & (vals != 0.0)
    out[np.repeat(rows, keep.shape[1], axis=1)[mask], keep[mask]] = vals[mask]
    return out


class FittedModel:
    """A trained recommender bound to one fold's train split."""

    def __init__(self, model_id: str, kind: str, users: IdIndex, items: IdIndex,
                 incidence: np.ndarray, params: dict):
        self.model_id = model_id
        self.kind = kind
        self.users = users
        self.items = items
        self._incidence = incidence
        self.params = params

    # Subclasses fill in a dense (len(user_rows), n_items) score array for
    # one batch of user rows.
    def _score_block(self, user_rows: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _score_rows(self, user_rows: np.ndarray) -> np.ndarray:
        # One BLAS call per row, never one per batch: GEMM results vary at
        # the last ulp with the batch shape, and scoring must not depend on
        # how callers group users (batch output == per-user recommend()).
        out = np.empty((user_rows.size, len(self.items)), dtype=np.float64)
        for pos in range(user_rows.size):
            out[pos] = self._score_block(user_rows[pos:pos + 1])[0]
        return out

    def score_all(self, user_ids: Sequence[str]) -> np.ndarray:
        """Score every catalog item for the given known users."""
        rows = np.fromiter((self.users.index(u) for u in user_ids),
                           dtype=np.int64, count=len(user_ids))
        return self._score_rows(rows)

    def popularity_scores(self) -> np.ndarray:
        """Train interaction count per item; the cold-start fallback ranking."""
        return self._incidence.sum(axis=0)

    def recommend(self, user: str, k: int,
                  train_items: Iterable[str] = ()) -> list[ScoredItem]:
        """Top-k items for one user, excluding the given consumed items.

        Unknown users fall back to the popularity ranking.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if user in self.users:
            scores = self._score_rows(np.array([self.users.index(user)]))[0]
        else:
            log.warning("cold-start user %r: popularity fallback (%s)",
                        user, self.model_id)
            scores = self.popularity_scores().astype(np.float64)
        scores = scores.copy()
        for item in train_items:
            if item in self.items:
                scores[self.items.index(item)] = -np.inf
        order = np.argsort(-scores, kind="stable")
        ids = self.items.ids
        out = []
        for idx in order[:k]:
            s = scores[idx]
            if s == -np.inf:
                break
            out.append(ScoredItem(ids[int(idx)], float(s)))
        return out


class _Popularity(FittedModel):
    def __init__(self, model_id, users, items, incidence, params):
        super().__init__(model_id, "popularity", users, items, incidence, params)
        self._counts = incidence.sum(axis=0)

    def _score_block(self, user_rows):
        return np.tile(self._counts, (user_rows.size, 1))


class _ItemItem(FittedModel):
    """Full item-item cosine similarity over (optionally weighted) columns."""

    def __init__(self, model_id, kind, users, items, incidence, params):
        super().__init__(model_id, kind, users, items, incidence, params)
        weighted = self._weight(incidence, params)
        normalized = _cosine_normalize_columns(weighted)
        self.similarity = normalized.T @ normalized

    @staticmethod
    def _weight(incidence: np.ndarray, params: dict) -> np.ndarray:
        return incidence

    def _score_block(self, user_rows):
        return self._incidence[user_rows] @ self.similarity


def _idf(incidence: np.ndarray) -> np.ndarray:
    n_users = incidence.shape[0]
    df = incidence.sum(axis=0)
    safe_df = np.where(df > 0.0, df, 1.0)
    idf = np.log(n_users / safe_df)
    return np.where(df > 0.0, idf, 0.0)


class _ItemItemTfidf(_ItemItem):
    @staticmethod
    def _weight(incidence, params):
        return incidence * _idf(incidence)


class _ItemItemBm25(_ItemItem):
    @staticmethod
    def _weight(incidence, params):
        k1 = params["k1"]
        b = params["b"]
        lengths = incidence.sum(axis=1)
        avg_len = lengths.mean() if lengths.size else 1.0
        if avg_len == 0.0:
            avg_len = 1.0
        # Binary tf: the saturation term reduces to (k1+1)/(1 + k1*(1-b+b*L/avg)).
        denom = 1.0 + k1 * (1.0 - b + b * lengths / avg_len)
        row_factor = (k1 + 1.0) / denom
        return incidence * _idf(incidence) * row_factor[:, None]


class _ItemKnn(FittedModel):
    def __init__(self, model_id, users, items, incidence, params):
        super().__init__(model_id, "item-knn", users, items, incidence, params)
        normalized = _cosine_normalize_columns(incidence)
        sim = normalized.T @ normalized
        self.similarity = _truncate_neighbors(sim, params["nn"])

    def _score_block(self, user_rows):
        # score(u, i) sums sim(i, j) over the user's train items j that are
        # among i's kept neighbors.
        return self._incidence[user_rows] @ self.similarity.T


class _UserKnn(FittedModel):
    def __init__(self, model_id, users, items, incidence, params):
        super().__init__(model_id, "user-knn", users, items, incidence, params)
        normalized = _cosine_normalize_columns(incidence.T)
        sim = normalized.T @ normalized
        self.similarity = _truncate_neighbors(sim, params["nn"])

    def _score_block(self, user_rows):
        return self.similarity[user_rows] @ self._incidence


_CONSTRUCTORS = {
    "popularity": lambda mid, u, i, m, p: _Popularity(mid, u, i, m, p),
    "user-knn": lambda mid, u, i, m, p: _UserKnn(mid, u, i, m, p),
    "item-knn": lambda mid, u, i, m, p: _ItemKnn(mid, u, i, m, p),
    "item-item-cosine": lambda mid, u, i, m, p: _ItemItem(
        mid, "item-item-cosine", u, i, m, p),
    "item-item-tfidf": lambda mid, u, i, m, p: _ItemItemTfidf(
        mid, "item-item-tfidf", u, i, m, p),
    "item-item-bm25": lambda mid, u, i, m, p: _ItemItemBm25(
        mid, "item-item-bm25", u, i, m, p),
}


def fit(kind: str, train: Iterable[tuple[str, str]],
        params: Mapping[str, float] | None = None,
        model_id: str | None = None) -> FittedModel:
    """Fit one recommender on a train set of (user, item) pairs.

    Args:
        kind: one of MODEL_KINDS.
        train: observed pairs; ratings are already binarized upstream.
        params: overrides for DEFAULT_PARAMS (nn, k1, b).
        model_id: defaults to the kind name.
    """
    if kind not in _CONSTRUCTORS:
        raise ValueError(f"unknown model kind {kind!r}")
    pairs = list(train)
    if not pairs:
        raise ValueError("empty train set")
    merged = dict(DEFAULT_PARAMS)
    if params:
        unknown = set(params) - set(DEFAULT_PARAMS)
        if unknown:
            raise ValueError(f"unknown parameters {sorted(unknown)}")
        merged.update(params)
    if merged["nn"] < 1:
        raise ValueError("nn must be >= 1")
    if merged["k1"] <= 0:
        raise ValueError("k1 must be > 0")
    if not 0.0 <= merged["b"] <= 1.0:
        raise ValueError("b must be in [0, 1]")

    users = IdIndex(u for u, _ in pairs)
    items = IdIndex(i for _, i in pairs)
    incidence = np.zeros((len(users), len(items)), dtype=np.float64)
    for u, i in pairs:
        incidence[users.index(u), items.index(i)] = 1.0
    return _CONSTRUCTORS[kind](model_id or kind, users, items, incidence,
                               merged)


def binarized_pairs(train: Mapping[str, frozenset[str]]) -> list[tuple[str, str]]:
    """Flatten a FoldSplit train mapping into sorted (user, item) pairs."""
    return [(u, i) for u in sorted(train) for i in sorted(train[u])]


def generate_matrix(models_by_fold: Mapping[int, Sequence[FittedModel]],
                    folds: Sequence[FoldSplit], k_max: int) -> PredictionMatrix:
    """Batch-produce the prediction matrix for fitted per-fold models.

    Covers every user with train data in each fold. Lists hold the top
    min(k_max, recommendable) items, identical to per-user recommend()
    output (asserted in tests).
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    fold_by_index = {f.fold_index: f for f in folds}
    all_users: set[str] = set()
    all_items: set[str] = set()
    for fold_index, models in models_by_fold.items():
        if fold_index not in fold_by_index:
            raise ValueError(f"no split provided for fold {fold_index}")
        for model in models:
            all_users.update(model.users.ids)
            all_items.update(model.items.ids)
    user_index = IdIndex(all_users)
    item_index = IdIndex(all_items)

    blocks: dict[tuple[int, str], _Block] = {}
    for fold_index in sorted(models_by_fold):
        split = fold_by_index[fold_index]
        train = split.train
        for model in models_by_fold[fold_index]:
            target_users = sorted(u for u in train if train[u] and u in model.users)
            scores = model.score_all(target_users)
            # Mask consumed items so they can never be recommended back.
            for row, user in enumerate(target_users):
                for item in train[user]:
                    if item in model.items:
                        scores[row, model.items.index(item)] = -np.inf
            order = np.argsort(-scores, axis=1, kind="stable")
            top = order[:, :k_max]
            row_idx = np.arange(len(target_users))[:, None]
            top_scores = scores[row_idx, top]
            valid = np.isfinite(top_scores)
            lengths = valid.sum(axis=1)

            # Translate the model's local item indices to matrix-wide ones.
            local_to_global = np.fromiter(
                (item_index.index(i) for i in model.items.ids),
                dtype=np.int64, count=len(model.items))

            indptr = np.zeros(len(target_users) + 1, dtype=np.int64)
            np.cumsum(lengths, out=indptr[1:])
            flat_items = np.empty(int(indptr[-1]), dtype=np.int32)
            flat_scores = np.empty(int(indptr[-1]), dtype=np.float64)
            for row in range(len(target_users)):
                take = int(lengths[row])
                start = int(indptr[row])
                flat_items[start:start + take] = local_to_global[top[row, :take]]
                flat_scores[start:start + take] = top_scores[row, :take]
            user_rows = np.fromiter((user_index.index(u) for u in target_users),
                                    dtype=np.int32, count=len(target_users))
            blocks[(fold_index, model.model_id)] = _Block(
                user_rows, indptr, flat_items, flat_scores)

    return PredictionMatrix(user_index, item_index, blocks)
