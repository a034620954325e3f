"""Config-driven experiment runner.

One run: load or generate each dataset, split it into seeded folds, fit the
built-in models per fold (and ingest any external prediction matrices),
compute validation weights, then per cutoff n produce the per-model score
table, the ensemble selection trace, and the k-sweep aggregate CSV, all
fold-averaged with 95% confidence intervals.

Every artifact is deterministic for a given config and seed: file row
orders are fixed, floats are serialized at 17 significant digits, and all
aggregation loops run in sorted (dataset, fold, model, user) order. The
only non-deterministic output is timings.json, which is excluded from the
reproducibility contract.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from recfuse import __version__ as _package_version
from recfuse.baselines import (
    DEFAULT_PARAMS,
    MODEL_KINDS,
    binarized_pairs,
    fit,
    generate_matrix,
)
from recfuse.core import (
    EnsembleResult,
    FoldSplit,
    InteractionDataset,
    ModelWeights,
    PredictionMatrix,
)
from recfuse.data import (
    format_score,
    load_interactions,
    read_matrix,
    split_folds,
    SplitSpec,
    write_splits,
    write_weights,
)
from recfuse.fusion import NORMALIZATION_MODES, FoldFuser, normalize_scores
from recfuse.metrics import ndcg_model
from recfuse.selection import (
    MemoizedEval,
    SelectionTrace,
    compute_weights,
    exhaustive_select,
    greedy_select,
    write_traces,
)
from recfuse.synthetic import generate_interactions

log = logging.getLogger(__name__)

# Two-sided Student t critical values at 95% confidence (0.975 quantile),
# indexed by degrees of freedom. Embedded so the package needs no scipy.
T_TABLE_95 = {
    1: 12.706204736432095, 2: 4.302652729696142, 3: 3.182446305284263,
    4: 2.7764451051977987, 5: 2.570581835636314, 6: 2.4469118511449692,
    7: 2.3646242515927844, 8: 2.306004135204166, 9: 2.2621571628540993,
    10: 2.2281388519649385, 11: 2.200985160082949, 12: 2.1788128296634177,
    13: 2.1603686564610127, 14: 2.1447866879169273, 15: 2.131449545559323,
    16: 2.1199052992210112, 17: 2.1098155778331806, 18: 2.10092204024096,
    19: 2.093024054408263, 20: 2.0859634472658364, 21: 2.079613844727662,
    22: 2.0738730679040147, 23: 2.0686576104190406, 24: 2.0638985616280205,
    25: 2.059538552753294, 26: 2.055529438642871, 27: 2.0518305164802833,
    28: 2.048407141795244, 29: 2.045229642132703, 30: 2.0422724563012373,
}


def confidence_interval(values: Sequence[float], level: float = 0.95
                        ) -> tuple[float, float]:
    """Student-t confidence interval for the mean of a small sample.

    Only the 95% level is supported (the embedded critical-value table);
    degrees of freedom must be 30 or less.
    """
    if len(values) < 2:
        raise ValueError("need at least 2 values")
    if level != 0.95:
        raise ValueError("only level=0.95 is supported")
    df = len(values) - 1
    if df not in T_TABLE_95:
        raise ValueError(f"no critical value embedded for df={df}")
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / df
    half = T_TABLE_95[df] * math.sqrt(var) / math.sqrt(n)
    return (mean - half, mean + half)


def pct_vs_ppl(mean: float, ppl_mean: float) -> int | None:
    """Percent gain over the popularity baseline, rounded half away
    from zero. None when the baseline mean is not positive."""
    if ppl_mean <= 0:
        return None
    x = (mean / ppl_mean - 1.0) * 100.0
    if x >= 0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


# -- configuration -------------------------------------------------------------

VALID_N_VALUES = (5, 10, 20)
DEFAULT_K_VALUES = (5, 10, 15, 25, 50, 75, 100, 125, 150)
SELECTION_MODES = ("greedy", "exhaustive")
SELECTION_SPLITS = ("validation", "paper-faithful")
SELECTION_SCOPES = ("per-fold", "fixed-subset")


def _reject_unknown(mapping: Mapping, allowed: Sequence[str], context: str):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ValueError(f"unknown {context} key(s): {', '.join(unknown)}")


@dataclass(frozen=True)
class DatasetConfig:
    """One dataset: either a file to load or a synthetic recipe."""

    name: str
    path: str | None = None
    format: str = "csv"
    columns: Mapping[str, str | int] | None = None
    synthetic: Mapping[str, int | float] | None = None

    _KEYS = ("name", "path", "format", "columns", "synthetic")
    _SYN_KEYS = ("n_users", "n_items", "n_interactions", "seed", "n_factors",
                 "popularity_weight", "noise_scale")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "DatasetConfig":
        _reject_unknown(raw, cls._KEYS, "dataset")
        cfg = cls(**raw)
        if not cfg.name:
            raise ValueError("dataset name must be nonempty")
        if (cfg.path is None) == (cfg.synthetic is None):
            raise ValueError(
                f"dataset {cfg.name!r} needs exactly one of 'path' or 'synthetic'")
        if cfg.synthetic is not None:
            _reject_unknown(cfg.synthetic, cls._SYN_KEYS,
                            f"dataset {cfg.name!r} synthetic")
            for key in ("n_users", "n_items", "n_interactions"):
                if key not in cfg.synthetic:
                    raise ValueError(
                        f"dataset {cfg.name!r} synthetic needs {key!r}")
        return cfg


@dataclass(frozen=True)
class ModelConfig:
    """One roster entry: a built-in kind or an external matrix file."""

    model_id: str
    kind: str | None = None
    params: Mapping[str, float] | None = None
    matrix: str | None = None

    _KEYS = ("id", "kind", "params", "matrix")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ModelConfig":
        _reject_unknown(raw, cls._KEYS, "model")
        kind = raw.get("kind")
        matrix = raw.get("matrix")
        if (kind is None) == (matrix is None):
            raise ValueError("model needs exactly one of 'kind' or 'matrix'")
        if kind is not None and kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        if matrix is not None and "params" in raw:
            raise ValueError("external matrix models take no params")
        model_id = raw.get("id") or kind
        if not model_id:
            raise ValueError("external matrix model needs an 'id'")
        for ch in "+,":
            if ch in model_id:
                raise ValueError(
                    f"model id {model_id!r} must not contain {ch!r}")
        return cls(model_id, kind, raw.get("params"), matrix)


@dataclass(frozen=True)
class SelectionConfig:
    mode: str = "greedy"
    split: str = "validation"
    scope: str = "per-fold"

    _KEYS = ("mode", "split", "scope")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "SelectionConfig":
        _reject_unknown(raw, cls._KEYS, "selection")
        cfg = cls(**raw)
        if cfg.mode not in SELECTION_MODES:
            raise ValueError(f"unknown selection mode {cfg.mode!r}")
        if cfg.split not in SELECTION_SPLITS:
            raise ValueError(f"unknown selection split {cfg.split!r}")
        if cfg.scope not in SELECTION_SCOPES:
            raise ValueError(f"unknown selection scope {cfg.scope!r}")
        return cfg


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings; see from_dict for the JSON shape."""

    seed: int
    output_dir: str
    datasets: tuple[DatasetConfig, ...]
    models: tuple[ModelConfig, ...]
    n_values: tuple[int, ...] = (5, 10, 20)
    k_values: tuple[int, ...] = DEFAULT_K_VALUES
    table_k: int | None = None
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    normalization: str = "global-minmax"
    n_folds: int = 5
    include_empty_holdout_users: bool = False

    _KEYS = ("seed", "output_dir", "datasets", "models", "n_values",
             "k_values", "table_k", "selection", "normalization", "n_folds",
             "include_empty_holdout_users")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentConfig":
        _reject_unknown(raw, cls._KEYS, "config")
        for key in ("seed", "output_dir", "datasets", "models"):
            if key not in raw:
                raise ValueError(f"config is missing required key {key!r}")
        datasets = tuple(DatasetConfig.from_dict(d) for d in raw["datasets"])
        models = tuple(ModelConfig.from_dict(m) for m in raw["models"])
        selection = SelectionConfig.from_dict(raw.get("selection", {}))
        cfg = cls(
            seed=int(raw["seed"]),
            output_dir=str(raw["output_dir"]),
            datasets=datasets,
            models=models,
            n_values=tuple(sorted(set(raw.get("n_values", (5, 10, 20))))),
            k_values=tuple(sorted(set(raw.get("k_values", DEFAULT_K_VALUES)))),
            table_k=raw.get("table_k"),
            selection=selection,
            normalization=raw.get("normalization", "global-minmax"),
            n_folds=int(raw.get("n_folds", 5)),
            include_empty_holdout_users=bool(
                raw.get("include_empty_holdout_users", False)),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def validate(self):
        if not self.datasets:
            raise ValueError("config needs at least one dataset")
        if not self.models:
            raise ValueError("config needs at least one model")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ValueError("dataset names must be unique")
        ids = [m.model_id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ValueError("model ids must be unique")
        if not self.n_values:
            raise ValueError("n_values must be nonempty")
        bad_n = [n for n in self.n_values if n not in VALID_N_VALUES]
        if bad_n:
            raise ValueError(f"n_values must be within {VALID_N_VALUES}, "
                             f"got {bad_n}")
        if not self.k_values or any(k < 1 for k in self.k_values):
            raise ValueError("k_values must be positive integers")
        for n in self.n_values:
            if not self.usable_ks(n):
                raise ValueError(f"no k in k_values is >= n={n}")
        if self.table_k is not None:
            if any(self.table_k < n for n in self.n_values):
                raise ValueError("table_k must be >= every n in n_values")
        if self.normalization not in NORMALIZATION_MODES:
            raise ValueError(
                f"unknown normalization mode {self.normalization!r}")
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if self.n_folds - 1 not in T_TABLE_95:
            raise ValueError("n_folds too large for the embedded t-table")

    def usable_ks(self, n: int) -> tuple[int, ...]:
        return tuple(k for k in self.k_values if k >= n)

    def cell_table_k(self, n: int) -> int:
        if self.table_k is not None:
            return self.table_k
        return max(self.usable_ks(n))

    def max_k(self) -> int:
        k = max(self.k_values)
        if self.table_k is not None:
            k = max(k, self.table_k)
        return k

    def canonical_dict(self) -> dict:
        """Everything that determines results. output_dir is a destination,
        not an input, so it stays out (runs into two directories must be
        able to produce identical bundles)."""
        return {
            "seed": self.seed,
            "datasets": [
                {"name": d.name, "path": d.path, "format": d.format,
                 "columns": dict(d.columns) if d.columns else None,
                 "synthetic": dict(d.synthetic) if d.synthetic else None}
                for d in self.datasets
            ],
            "models": [
                {"id": m.model_id, "kind": m.kind,
                 "params": dict(m.params) if m.params else None,
                 "matrix": m.matrix}
                for m in self.models
            ],
            "n_values": list(self.n_values),
            "k_values": list(self.k_values),
            "table_k": self.table_k,
            "selection": {"mode": self.selection.mode,
                          "split": self.selection.split,
                          "scope": self.selection.scope},
            "normalization": self.normalization,
            "n_folds": self.n_folds,
            "include_empty_holdout_users": self.include_empty_holdout_users,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.canonical_dict(), sort_keys=True,
                               separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ReportRow:
    """One line of a per-(dataset, n) score table."""

    dataset: str
    model: str
    n: int
    per_fold: tuple[float, ...]
    mean: float
    pct: int | None


# -- prepared per-dataset state -------------------------------------------------

@dataclass
class DatasetBundle:
    """Everything derivable from one dataset before per-n evaluation."""

    config: ExperimentConfig
    name: str
    dataset: InteractionDataset
    splits: list[FoldSplit]
    raw: PredictionMatrix
    norm: PredictionMatrix
    weights: dict[int, ModelWeights]          # keyed by n
    model_ids: list[str]
    _selections: dict = field(default_factory=dict)
    _fusers: dict = field(default_factory=dict)

    def fuser(self, fold: int, k: int) -> FoldFuser:
        key = (fold, k)
        if key not in self._fusers:
            self._fusers[key] = FoldFuser(self.norm, fold, k)
        return self._fusers[key]


def _load_dataset(config: ExperimentConfig, ds: DatasetConfig
                  ) -> InteractionDataset:
    if ds.synthetic is not None:
        syn = dict(ds.synthetic)
        seed = syn.pop("seed", None)
        if seed is None:
            # Stable per-dataset default stream, decoupled from the split seed.
            from recfuse.data import fnv1a64
            seed = (config.seed ^ fnv1a64(ds.name.encode("utf-8"))) & (2**64 - 1)
        return generate_interactions(seed=int(seed), **syn)
    columns = ds.columns
    if columns is None:
        columns = {"user": "user", "item": "item"}
    return load_interactions(ds.path, ds.format, columns)


def _fit_fold_models(config: ExperimentConfig, splits: Sequence[FoldSplit],
                     threads: int | None) -> dict[int, list]:
    """Fit every built-in roster model on every fold's train split."""
    builtin = [m for m in config.models if m.kind is not None]
    jobs = []
    for split in splits:
        pairs = binarized_pairs(split.train)
        for model_cfg in builtin:
            jobs.append((split.fold_index, model_cfg, pairs))

    def _run(job):
        fold_index, model_cfg, pairs = job
        fitted = fit(model_cfg.kind, pairs, model_cfg.params,
                     model_id=model_cfg.model_id)
        return fold_index, fitted

    results: dict[tuple[int, str], object] = {}
    if threads is not None and threads == 1:
        done = map(_run, jobs)
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
        try:
            done = list(pool.map(_run, jobs))
        finally:
            pool.shutdown()
    for fold_index, fitted in done:
        results[(fold_index, fitted.model_id)] = fitted

    by_fold: dict[int, list] = {s.fold_index: [] for s in splits}
    for (fold_index, _), fitted in sorted(results.items()):
        by_fold[fold_index].append(fitted)
    return by_fold


def _merge_matrices(parts: Sequence[PredictionMatrix]) -> PredictionMatrix:
    if len(parts) == 1:
        return parts[0]
    entries = {}
    for part in parts:
        for key, lst in part.entries():
            if key in entries:
                raise ValueError(
                    f"duplicate lists for fold {key[0]}, model {key[1]!r}")
            entries[key] = lst
    return PredictionMatrix.from_entries(entries)


def prepare_dataset(config: ExperimentConfig, ds: DatasetConfig,
                    threads: int | None = None) -> DatasetBundle:
    """Load, split, fit, ingest, normalize, and weight one dataset."""
    t0 = time.perf_counter()
    dataset = _load_dataset(config, ds)
    splits = split_folds(dataset, SplitSpec(seed=config.seed,
                                            n_folds=config.n_folds))
    parts = []
    if any(m.kind is not None for m in config.models):
        by_fold = _fit_fold_models(config, splits, threads)
        parts.append(generate_matrix(by_fold, splits, config.max_k()))
    for model_cfg in config.models:
        if model_cfg.matrix is not None:
            external = read_matrix(model_cfg.matrix, min_length=config.max_k())
            ext_models = external.models()
            if ext_models != [model_cfg.model_id]:
                raise ValueError(
                    f"{model_cfg.matrix}: expected lists for model "
                    f"{model_cfg.model_id!r} only, found {ext_models}")
            if external.folds() != [s.fold_index for s in splits]:
                raise ValueError(
                    f"{model_cfg.matrix}: folds {external.folds()} do not "
                    f"match the configured {config.n_folds} folds")
            parts.append(external)
    raw = _merge_matrices(parts)
    norm = normalize_scores(raw, config.normalization)
    weights = {
        n: compute_weights(
            raw, splits, n,
            include_empty_holdout_users=config.include_empty_holdout_users)
        for n in config.n_values
    }
    log.info("prepared dataset %s in %.1fs", ds.name, time.perf_counter() - t0)
    return DatasetBundle(config, ds.name, dataset, splits, raw, norm, weights,
                         [m.model_id for m in config.models])


# -- evaluation ------------------------------------------------------------------

def model_fold_ndcg(bundle: DatasetBundle, model: str, fold: int, n: int,
                    holdout_kind: str) -> float:
    """One model's top-n NDCG against one fold's holdout."""
    split = bundle.splits[fold]
    matrix = bundle.raw
    lists = {u: matrix.ranked_ids(fold, model, u, limit=n)
             for u in matrix.users(fold, model)}
    return ndcg_model(
        lists, split.holdout(holdout_kind), n,
        include_empty_holdout_users=bundle.config.include_empty_holdout_users)


@dataclass(frozen=True)
class CellSelection:
    """Selection outcome for one (dataset, n, k)."""

    n: int
    k: int
    traces: tuple[tuple[str | int, SelectionTrace], ...]  # (fold | "all", trace)
    members_per_fold: tuple[frozenset[str], ...]
    selection_per_fold: tuple[float, ...]   # selection-split score of the pick
    test_per_fold: tuple[float, ...]
    mean_test: float
    ci: tuple[float, float]

    def as_ensemble_result(self) -> EnsembleResult:
        members = self.members_per_fold[0]
        if any(m != members for m in self.members_per_fold):
            members = frozenset().union(*self.members_per_fold)
        return EnsembleResult(members, self.test_per_fold, self.mean_test,
                              self.ci[0], self.ci[1], self.k, self.n)


def run_selection(bundle: DatasetBundle, n: int, k: int) -> CellSelection:
    """Search the subset lattice for one (dataset, n, k) context."""
    key = (n, k)
    if key in bundle._selections:
        return bundle._selections[key]
    config = bundle.config
    sel = config.selection
    sel_holdout = "test" if sel.split == "paper-faithful" else "validation"
    search = greedy_select if sel.mode == "greedy" else exhaustive_select
    weights = bundle.weights[n]
    incl = config.include_empty_holdout_users

    traces: list[tuple[str | int, SelectionTrace]] = []
    members_per_fold: list[frozenset[str]] = []
    sel_scores: list[float] = []
    test_scores: list[float] = []

    if sel.scope == "per-fold":
        for split in bundle.splits:
            fold = split.fold_index
            fuser = bundle.fuser(fold, k)
            holdouts = split.holdout(sel_holdout)
            ev = MemoizedEval(lambda m, _f=fuser, _h=holdouts: _f.ndcg(
                sorted(m), weights, _h, n, include_empty_holdout_users=incl))
            trace = search(bundle.model_ids, ev)
            traces.append((fold, trace))
            members_per_fold.append(trace.chosen_members)
            sel_scores.append(trace.chosen_ndcg)
            if sel_holdout == "test":
                test_scores.append(trace.chosen_ndcg)
            else:
                test_scores.append(fuser.ndcg(
                    sorted(trace.chosen_members), weights,
                    split.holdout("test"), n,
                    include_empty_holdout_users=incl))
    else:
        fusers = [bundle.fuser(s.fold_index, k) for s in bundle.splits]
        holdout_list = [s.holdout(sel_holdout) for s in bundle.splits]

        def _mean_eval(members: frozenset[str]) -> float:
            scores = [f.ndcg(sorted(members), weights, h, n,
                             include_empty_holdout_users=incl)
                      for f, h in zip(fusers, holdout_list)]
            return sum(scores) / len(scores)

        trace = search(bundle.model_ids, MemoizedEval(_mean_eval))
        traces.append(("all", trace))
        for split, fuser in zip(bundle.splits, fusers):
            members_per_fold.append(trace.chosen_members)
            sel_scores.append(trace.chosen_ndcg)
            test_scores.append(fuser.ndcg(
                sorted(trace.chosen_members), weights, split.holdout("test"),
                n, include_empty_holdout_users=incl))

    ci = confidence_interval(test_scores)
    result = CellSelection(
        n, k, tuple(traces), tuple(members_per_fold), tuple(sel_scores),
        tuple(test_scores), sum(test_scores) / len(test_scores), ci)
    bundle._selections[key] = result
    return result


def model_table(bundle: DatasetBundle, n: int) -> list[ReportRow]:
    """Per-model test rows plus the chosen ensemble's row."""
    config = bundle.config
    rows = []
    ppl_ids = [m.model_id for m in config.models if m.kind == "popularity"]
    ppl_mean = None
    per_model_scores = {}
    for model in bundle.model_ids:
        scores = tuple(model_fold_ndcg(bundle, model, s.fold_index, n, "test")
                       for s in bundle.splits)
        per_model_scores[model] = scores
        if ppl_ids and model == ppl_ids[0]:
            ppl_mean = sum(scores) / len(scores)
    selection = run_selection(bundle, n, config.cell_table_k(n))
    for model in bundle.model_ids:
        scores = per_model_scores[model]
        mean = sum(scores) / len(scores)
        rows.append(ReportRow(bundle.name, model, n, scores, mean,
                              None if ppl_mean is None
                              else pct_vs_ppl(mean, ppl_mean)))
    rows.append(ReportRow(
        bundle.name, "ensemble", n, selection.test_per_fold,
        selection.mean_test,
        None if ppl_mean is None else pct_vs_ppl(selection.mean_test,
                                                 ppl_mean)))
    return rows


def sweep_rows(bundle: DatasetBundle, n: int) -> list[dict]:
    """One aggregate row per usable k for the (dataset, n) cell."""
    config = bundle.config
    table = {m: tuple(model_fold_ndcg(bundle, m, s.fold_index, n, "test")
                      for s in bundle.splits)
             for m in bundle.model_ids}
    means = {m: sum(v) / len(v) for m, v in table.items()}
    best_model = min(means, key=lambda m: (-means[m], m))
    rows = []
    for k in config.usable_ks(n):
        selection = run_selection(bundle, n, k)
        rows.append({
            "dataset": bundle.name, "n": n, "k": k,
            "ens_mean": selection.mean_test,
            "ci_low": selection.ci[0], "ci_high": selection.ci[1],
            "best_model": best_model, "best_mean": means[best_model],
        })
    return rows


# -- artifact writers ------------------------------------------------------------

TABLE_FOLD_PREFIX = "ndcg_fold"


def _write_table_csv(path: Path, rows: Sequence[ReportRow], n_folds: int,
                     selection_label: str):
    header = (["dataset", "model", "n"]
              + [f"{TABLE_FOLD_PREFIX}{i}" for i in range(n_folds)]
              + ["mean", "pct_vs_ppl", "selection"])
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [row.dataset, row.model, row.n]
                + [format_score(v) for v in row.per_fold]
                + [format_score(row.mean),
                   "n/a" if row.pct is None else str(row.pct),
                   selection_label if row.model == "ensemble" else ""])


def _write_sweep_csv(path: Path, rows: Sequence[dict]):
    header = ["dataset", "n", "k", "ens_mean", "ci_low", "ci_high",
              "best_model", "best_mean"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                row["dataset"], row["n"], row["k"],
                format_score(row["ens_mean"]), format_score(row["ci_low"]),
                format_score(row["ci_high"]), row["best_model"],
                format_score(row["best_mean"])])


def _write_trace_csv(path: Path, bundle: DatasetBundle, n: int):
    """Selection trace at the table k: every candidate, then the pick's
    selection-split and test-split scores (mode column suffixed -chosen)."""
    config = bundle.config
    k = config.cell_table_k(n)
    selection = run_selection(bundle, n, k)
    sel_holdout = ("test" if config.selection.split == "paper-faithful"
                   else "validation")
    rows = [(trace, fold, k, n, sel_holdout)
            for fold, trace in selection.traces]
    extra = []
    mode = config.selection.mode + "-chosen"
    if sel_holdout != "test":
        if config.selection.scope == "per-fold":
            for i, split in enumerate(bundle.splits):
                extra.append((mode, split.fold_index,
                              selection.members_per_fold[i], k, n,
                              sel_holdout, selection.selection_per_fold[i]))
        else:
            # Fixed-subset selection scores are cross-fold means.
            extra.append((mode, "all", selection.members_per_fold[0], k, n,
                          sel_holdout, selection.selection_per_fold[0]))
    for i, split in enumerate(bundle.splits):
        extra.append((mode, split.fold_index, selection.members_per_fold[i],
                      k, n, "test", selection.test_per_fold[i]))
    write_traces(path, rows, extra)


def selection_label(config: ExperimentConfig, n: int) -> str:
    sel = config.selection
    return (f"mode={sel.mode};split={sel.split};scope={sel.scope};"
            f"k={config.cell_table_k(n)}")


# -- the runner ------------------------------------------------------------------

@dataclass
class RunResult:
    output_dir: Path
    artifacts: list[str]
    failed_cells: list[str]
    tables: dict[tuple[str, int], list[ReportRow]]
    sweeps: dict[tuple[str, int], list[dict]]
    selections: dict[tuple[str, int], CellSelection]


def run_experiment(config: ExperimentConfig, threads: int | None = None
                   ) -> RunResult:
    """Execute every (dataset, n) cell and write the report bundle.

    A failing cell is logged and recorded in the manifest; remaining cells
    still run. Artifacts per dataset: splits_<ds>.csv, and per n:
    weights_<ds>_<n>.csv, tables_<ds>_<n>.csv, trace_<ds>_<n>.csv,
    sweep_<ds>_<n>.csv. Plus manifest.json (deterministic) and
    timings.json (wall-clock, excluded from reproducibility).
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: list[str] = []
    failed: list[str] = []
    tables: dict[tuple[str, int], list[ReportRow]] = {}
    sweeps: dict[tuple[str, int], list[dict]] = {}
    selections: dict[tuple[str, int], CellSelection] = {}
    timings: dict[str, float] = {}
    start = time.perf_counter()

    for ds in config.datasets:
        t0 = time.perf_counter()
        try:
            bundle = prepare_dataset(config, ds, threads)
        except Exception as exc:
            log.error("dataset %s failed to prepare: %s", ds.name, exc)
            for n in config.n_values:
                failed.append(f"{ds.name}/n={n}: {exc}")
            continue
        timings[f"prepare_{ds.name}"] = time.perf_counter() - t0

        splits_path = out / f"splits_{ds.name}.csv"
        write_splits(bundle.splits, splits_path)
        artifacts.append(splits_path.name)

        for n in config.n_values:
            t1 = time.perf_counter()
            try:
                weights_path = out / f"weights_{ds.name}_{n}.csv"
                write_weights(bundle.weights[n], weights_path)

                rows = model_table(bundle, n)
                tables[(ds.name, n)] = rows
                table_path = out / f"tables_{ds.name}_{n}.csv"
                _write_table_csv(table_path, rows, config.n_folds,
                                 selection_label(config, n))

                trace_path = out / f"trace_{ds.name}_{n}.csv"
                _write_trace_csv(trace_path, bundle, n)

                srows = sweep_rows(bundle, n)
                sweeps[(ds.name, n)] = srows
                sweep_path = out / f"sweep_{ds.name}_{n}.csv"
                _write_sweep_csv(sweep_path, srows)

                selections[(ds.name, n)] = run_selection(
                    bundle, n, config.cell_table_k(n))
                artifacts.extend([weights_path.name, table_path.name,
                                  trace_path.name, sweep_path.name])
            except Exception as exc:
                log.error("cell %s/n=%d failed: %s", ds.name, n, exc)
                failed.append(f"{ds.name}/n={n}: {exc}")
            timings[f"cell_{ds.name}_n{n}"] = time.perf_counter() - t1

    manifest = {
        "config_sha256": config.config_hash(),
        "seed": config.seed,
        "package_version": _package_version,
        "artifacts": sorted(artifacts),
        "failed_cells": failed,
    }
    with (out / "manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    timings["total"] = time.perf_counter() - start
    with (out / "timings.json").open("w", encoding="utf-8") as fh:
        json.dump({"seconds": timings}, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return RunResult(out, sorted(artifacts), failed, tables, sweeps,
                     selections)


def k_sweep(config: ExperimentConfig, dataset: str, n: int,
            threads: int | None = None) -> list[dict]:
    """Standalone k sweep for one (dataset, n) cell."""
    ds = next((d for d in config.datasets if d.name == dataset), None)
    if ds is None:
        raise ValueError(f"unknown dataset {dataset!r}")
    if n not in config.n_values:
        raise ValueError(f"n={n} is not in the configured n_values")
    bundle = prepare_dataset(config, ds, threads)
    return sweep_rows(bundle, n)
