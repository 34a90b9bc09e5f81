"""Kernel SVM on precomputed Gram matrices and the cross-validation protocol.

The solver is a two-variable SMO with second-order working-set selection
(the scheme used by libsvm) compiled with numba. Scans run in ascending
index order with strict comparisons, so ties go to the lowest index and
results are deterministic.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .kernels import GramMatrix, pool_product, pool_sum

log = logging.getLogger(__name__)

KKT_TOL = 1e-3
PSD_TOL = 1e-9
_TAU = 1e-12


def default_c_grid(n: int = 100, lo: float = 1e-3, hi: float = 100.0) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


# --------------------------------------------------------------------------
# SMO


@numba.njit(cache=True, nogil=True)
def _smo(K, y, C, eps, max_iter):
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.empty(n)
    for t in range(n):
        QD[t] = K[t, t]
    it = 0
    while it < max_iter:
        # i: maximal violator in I_up
        gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C and -G[t] > gmax:
                    gmax = -G[t]
                    i = t
            else:
                if alpha[t] > 0 and G[t] > gmax:
                    gmax = G[t]
                    i = t
        if i < 0:
            break
        # j: second-order choice in I_low
        gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        for t in range(n):
            if y[t] > 0:
                if alpha[t] > 0:
                    diff = gmax + G[t]
                    if G[t] > gmax2:
                        gmax2 = G[t]
                    if diff > 0:
                        quad = QD[i] + QD[t] - 2.0 * K[i, t]
                        if quad <= 0:
                            quad = _TAU
                        obj = -(diff * diff) / quad
                        if obj < obj_min:
                            obj_min = obj
                            j = t
            else:
                if alpha[t] < C:
                    diff = gmax - G[t]
                    if -G[t] > gmax2:
                        gmax2 = -G[t]
                    if diff > 0:
                        quad = QD[i] + QD[t] - 2.0 * K[i, t]
                        if quad <= 0:
                            quad = _TAU
                        obj = -(diff * diff) / quad
                        if obj < obj_min:
                            obj_min = obj
                            j = t
        if gmax + gmax2 < eps or j < 0:
            break
        it += 1
        Qij = y[i] * y[j] * K[i, j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2.0 * Qij
            if quad <= 0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Qij
            if quad <= 0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):
            G[t] += y[t] * (y[i] * K[t, i] * dai + y[j] * K[t, j] * daj)
    # bias: average over free vectors, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    nfree = 0
    sfree = 0.0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            sfree += yg
    rho = sfree / nfree if nfree > 0 else 0.5 * (ub + lb)
    return alpha, rho, it


@dataclass(frozen=True)
class SvmModel:
    dual_coef: np.ndarray  # alpha_i * y_i per training point
    bias: float
    c_reg: float
    train_ids: tuple
    iterations: int = 0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.dual_coef != 0)

    def decision(self, gram_cross: np.ndarray) -> np.ndarray:
        K = np.atleast_2d(np.asarray(gram_cross, dtype=float))
        if K.shape[1] != len(self.dual_coef):
            raise ValueError(f"cross-kernel has {K.shape[1]} columns, model has {len(self.dual_coef)} training points")
        return K @ self.dual_coef + self.bias


def clip_psd(K: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Zero out negative eigenvalues (warning if any is below ``-tol``)."""
    w, V = np.linalg.eigh(K)
    if w[0] >= -tol:
        return K
    log.warning("Gram matrix not PSD (min eigenvalue %.3e); clipping at 0", w[0])
    return (V * np.maximum(w, 0)) @ V.T


def _as_pm1(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=float)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1/-1")
    return y


def svm_train(gram, labels, c_reg: float, train_ids: Sequence | None = None, tol: float = KKT_TOL, max_iter: int | None = None, check_psd: bool = True) -> SvmModel:
    """Soft-margin dual SVM on a precomputed kernel (``gram`` is a matrix or GramMatrix)."""
    if isinstance(gram, GramMatrix):
        train_ids = gram.graph_ids if train_ids is None else train_ids
        gram = gram.matrix
    K = np.ascontiguousarray(gram, dtype=float)
    y = _as_pm1(labels)
    if K.shape != (len(y), len(y)):
        raise ValueError("Gram shape does not match the labels")
    if len(np.unique(y)) < 2:
        raise ValueError("training set contains a single class")
    if not c_reg > 0:
        raise ValueError("C must be positive")
    if check_psd:
        K = np.ascontiguousarray(clip_psd(K))
    if max_iter is None:
        max_iter = 100_000 + 100 * len(y)
    alpha, rho, it = _smo(K, y, float(c_reg), tol, max_iter)
    ids = tuple(train_ids) if train_ids is not None else tuple(range(len(y)))
    return SvmModel(alpha * y, -float(rho), float(c_reg), ids, int(it))


def svm_predict(model: SvmModel, gram_cross) -> np.ndarray:
    """Sign of the decision function; exact zeros map to +1."""
    f = model.decision(gram_cross)
    return np.where(f >= 0, 1, -1)


# --------------------------------------------------------------------------
# Metrics and splits


def weighted_f1(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("empty label vector")
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    total = 0.0
    for c in np.unique(y_true):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if tp > 0 else 0.0
        total += f1 * np.sum(y_true == c)
    return float(total / len(y_true))


def stratified_baseline_f1(labels) -> float:
    """Expected weighted F1 of random predictions drawn with the class frequencies."""
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    freq = counts / counts.sum()
    return float(np.sum(freq**2))


def stratified_splits(labels, folds: int = 5, reps: int = 10, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """``(train, test)`` index arrays for ``reps`` repetitions of stratified k-fold.

    Per repetition and class (in sorted class order) the members are
    shuffled with one seeded generator and dealt round-robin to the folds.
    """
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if np.any(counts < folds):
        detail = ", ".join(f"{c}: {k}" for c, k in zip(classes.tolist(), counts.tolist()))
        raise ValueError(f"cannot stratify into {folds} folds; class counts {detail}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(reps):
        fold_of = np.empty(len(y), dtype=int)
        for c in classes:
            members = rng.permutation(np.flatnonzero(y == c))
            fold_of[members] = np.arange(len(members)) % folds
        for f in range(folds):
            out.append((np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)))
    return out


# --------------------------------------------------------------------------
# Cross-validation


@dataclass
class CvReport:
    kernel_descriptor: dict
    c_grid: list
    best_c: float
    mean_f1: float
    std_f1: float
    per_split_scores: list
    seed: int
    folds: int = 5
    reps: int = 10
    mean_by_c: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kernel_descriptor": self.kernel_descriptor,
            "c_grid": [float(c) for c in self.c_grid],
            "best_c": self.best_c,
            "mean_f1": self.mean_f1,
            "std_f1": self.std_f1,
            "per_split_scores": [float(s) for s in self.per_split_scores],
            "mean_f1_by_c": [float(s) for s in self.mean_by_c],
            "seed": self.seed,
            "folds": self.folds,
            "reps": self.reps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@numba.njit(cache=True, nogil=True)
def _f1_pm1(y_true, y_pred):
    total = 0.0
    for c in (-1.0, 1.0):
        tp = fp = fn = support = 0
        for a, b in zip(y_true, y_pred):
            if a == c:
                support += 1
                if b == c:
                    tp += 1
                else:
                    fn += 1
            elif b == c:
                fp += 1
        if tp > 0:
            total += support * 2.0 * tp / (2 * tp + fp + fn)
    return total / len(y_true)


@numba.njit(cache=True, nogil=True)
def _cv_scores(K, y, test_masks, c_grid, eps, max_iter):
    n_c, n_splits = len(c_grid), len(test_masks)
    out = np.empty((n_c, n_splits))
    for s in range(n_splits):
        tr = np.flatnonzero(~test_masks[s])
        te = np.flatnonzero(test_masks[s])
        Ktr = np.empty((len(tr), len(tr)))
        for a in range(len(tr)):
            for b in range(len(tr)):
                Ktr[a, b] = K[tr[a], tr[b]]
        ytr = y[tr]
        yte = y[te]
        for ci in range(n_c):
            alpha, rho, _ = _smo(Ktr, ytr, c_grid[ci], eps, max_iter)
            pred = np.empty(len(te))
            for a in range(len(te)):
                f = -rho
                for b in range(len(tr)):
                    f += alpha[b] * ytr[b] * K[te[a], tr[b]]
                pred[a] = 1.0 if f >= 0 else -1.0
            out[ci, s] = _f1_pm1(yte, pred)
    return out


def cross_validate(
    gram,
    labels,
    c_grid: Sequence[float] | None = None,
    folds: int = 5,
    reps: int = 10,
    seed: int = 0,
    splits=None,
    workers: int = 1,
) -> CvReport:
    """Repeated stratified k-fold over a C grid; C is chosen on the mean over all splits.

    ``splits`` overrides the seeded stratified splits (each a train/test
    partition). Ties between C values go to the smallest C.
    """
    if isinstance(gram, GramMatrix):
        desc, K = gram.descriptor, gram.matrix
    else:
        desc, K = {}, np.asarray(gram, dtype=float)
    y = _as_pm1(labels)
    c_grid = default_c_grid() if c_grid is None else np.asarray(c_grid, dtype=float)
    if splits is None:
        splits = stratified_splits(y, folds, reps, seed)
    K = np.ascontiguousarray(clip_psd(K))
    masks = np.zeros((len(splits), len(y)), dtype=np.bool_)
    for s, (tr, te) in enumerate(splits):
        if len(tr) + len(te) != len(y) or len(np.union1d(tr, te)) != len(y):
            raise ValueError(f"split {s}: train and test must partition the dataset")
        if len(np.unique(y[tr])) < 2:
            raise ValueError(f"split {s} has a single-class training set")
        masks[s, te] = True
    max_iter = 100_000 + 100 * len(y)
    if workers > 1:
        chunks = np.array_split(c_grid, workers)
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda cs: _cv_scores(K, y, masks, cs, KKT_TOL, max_iter), chunks))
        scores = np.vstack(parts)
    else:
        scores = _cv_scores(K, y, masks, c_grid, KKT_TOL, max_iter)
    means = scores.mean(1)
    best = int(np.argmax(means))
    return CvReport(
        kernel_descriptor=desc,
        c_grid=c_grid.tolist(),
        best_c=float(c_grid[best]),
        mean_f1=float(means[best]),
        std_f1=float(scores[best].std()),
        per_split_scores=scores[best].tolist(),
        seed=seed,
        folds=folds,
        reps=reps,
        mean_by_c=means.tolist(),
    )


# --------------------------------------------------------------------------
# Pooled search over time tuples


def _unrank_combination(rank: int, n: int, k: int) -> tuple:
    """Lexicographic ``rank``-th k-subset of ``range(n)``."""
    out = []
    x = 0
    for slot in range(k, 0, -1):
        while True:
            c = math.comb(n - x - 1, slot - 1)
            if rank < c:
                break
            rank -= c
            x += 1
        out.append(x)
        x += 1
    return tuple(out)


def sample_tuples(n_times: int, tuple_size: int, n_samples: int, seed: int) -> list[tuple]:
    if tuple_size > n_times:
        raise ValueError(f"tuple size {tuple_size} exceeds the {n_times} available times")
    total = math.comb(n_times, tuple_size)
    if n_samples >= total:
        return list(itertools.combinations(range(n_times), tuple_size))
    rng = np.random.default_rng(seed)
    ranks = rng.choice(total, size=n_samples, replace=False) if total < 2**62 else None
    if ranks is None:
        seen: set = set()
        while len(seen) < n_samples:
            seen.add(tuple(sorted(rng.choice(n_times, tuple_size, replace=False).tolist())))
        return sorted(seen)
    return sorted(_unrank_combination(int(r), n_times, tuple_size) for r in ranks)


@dataclass
class PoolResult:
    time_indices: tuple
    times: tuple
    report: CvReport

    def to_dict(self) -> dict:
        return {"time_indices": list(self.time_indices), "times_us": list(self.times), **self.report.to_dict()}


def pool_search(
    grams_by_time: Sequence[GramMatrix],
    labels,
    tuple_size: int,
    n_samples: int,
    pooling: str = "sum",
    seed: int = 0,
    c_grid=None,
    folds: int = 5,
    reps: int = 10,
) -> list[PoolResult]:
    """Cross-validate pooled kernels over sampled time tuples, best first."""
    if pooling not in ("sum", "product"):
        raise ValueError(f"unknown pooling {pooling!r}")
    tuples = sample_tuples(len(grams_by_time), tuple_size, n_samples, seed)
    y = _as_pm1(labels)
    splits = stratified_splits(y, folds, reps, seed)
    results = []
    for tup in tuples:
        members = [grams_by_time[k] for k in tup]
        pooled = pool_sum(members) if pooling == "sum" else pool_product(members)
        rep = cross_validate(pooled, y, c_grid, folds, reps, seed, splits=splits)
        times = tuple(float(g.descriptor.get("time_us", k)) for g, k in zip(members, tup))
        results.append(PoolResult(tup, times, rep))
    results.sort(key=lambda r: (-r.report.mean_f1, r.time_indices))
    return results
