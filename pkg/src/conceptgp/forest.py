"""Regression random forest for feature-importance estimation.

CART trees with variance-reduction splits, bootstrapped rows and per-node
feature subsampling. Only split counts are retained: the importance of
feature i is the fraction of internal splits across the forest that split on
feature i. That convention (not impurity-weighted importance) is what the
disentanglement metric is defined on, which is why this lives in-repo.

Split choices depend on feature values only through their ordering, so
importances are invariant to positive rescaling of any column (same seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import as_generator


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 50
    max_depth: int = 8
    min_samples_split: int = 2
    seed: int = 0


@dataclass(frozen=True)
class ImportanceResult:
    importances: np.ndarray  # (p,), sums to 1
    total_splits: int
    flagged_constant: bool  # constant target -> zero-split forest -> uniform


def _best_split_gain(values: np.ndarray, y: np.ndarray) -> float:
    """Best achievable sum_l^2/n_l + sum_r^2/n_r proxy for one feature.

    Maximizing the proxy minimizes child SSE. Returns -inf when the feature
    is constant on the node (no valid split position).
    """
    order = np.argsort(values, kind="stable")
    sv = values[order]
    sy = y[order]
    pos = np.flatnonzero(sv[1:] > sv[:-1])
    if pos.size == 0:
        return -math.inf
    csum = np.cumsum(sy)
    n = sy.shape[0]
    n_left = pos + 1.0
    sum_left = csum[pos]
    sum_right = csum[-1] - sum_left
    proxy = sum_left**2 / n_left + sum_right**2 / (n - n_left)
    return float(proxy.max())


def _split_partition(values: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Boolean left-mask of the best split for one feature (must be valid)."""
    order = np.argsort(values, kind="stable")
    sv = values[order]
    sy = y[order]
    pos = np.flatnonzero(sv[1:] > sv[:-1])
    csum = np.cumsum(sy)
    n = sy.shape[0]
    n_left = pos + 1.0
    sum_left = csum[pos]
    sum_right = csum[-1] - sum_left
    proxy = sum_left**2 / n_left + sum_right**2 / (n - n_left)
    cut = pos[int(np.argmax(proxy))]  # ties -> lowest threshold
    return values <= sv[cut]


def _grow_tree(
    x: np.ndarray, y: np.ndarray, config: ForestConfig, rng: np.random.Generator, counts: np.ndarray
) -> None:
    """Grow one tree on (x, y), accumulating split counts per feature."""
    p = x.shape[1]
    m_try = max(1, math.ceil(math.sqrt(p)))
    stack: list[tuple[np.ndarray, int]] = [(np.arange(x.shape[0]), 0)]
    while stack:
        idx, depth = stack.pop()
        if depth >= config.max_depth or idx.shape[0] < config.min_samples_split:
            continue
        node_y = y[idx]
        if node_y.min() == node_y.max():
            continue
        features = rng.choice(p, size=m_try, replace=False) if m_try < p else np.arange(p)
        baseline = float(node_y.sum()) ** 2 / idx.shape[0]
        best_gain = -math.inf
        best_feature = -1
        for f in features:
            gain = _best_split_gain(x[idx, f], node_y)
            if gain > best_gain:
                best_gain = gain
                best_feature = int(f)
        # a split must strictly reduce child SSE below the unsplit node's
        if best_feature < 0 or best_gain <= baseline:
            continue
        left = _split_partition(x[idx, best_feature], node_y)
        counts[best_feature] += 1
        stack.append((idx[left], depth + 1))
        stack.append((idx[~left], depth + 1))


def rf_importance(
    predicted_scores: np.ndarray,
    truth: np.ndarray,
    config: ForestConfig = ForestConfig(),
    rng: np.random.Generator | int | None = None,
) -> ImportanceResult:
    """Fraction-of-splits feature importances for regressing truth on scores."""
    x = np.asarray(predicted_scores, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("expected scores (n, p) and truth (n,)")
    if x.shape[0] < 10:
        raise ValueError("need at least 10 rows")
    gen = as_generator(config.seed if rng is None else rng)

    p = x.shape[1]
    counts = np.zeros(p, dtype=np.int64)
    n = x.shape[0]
    for _tree in range(config.n_trees):
        rows = gen.integers(0, n, size=n)
        _grow_tree(x[rows], y[rows], config, gen, counts)

    total = int(counts.sum())
    if total == 0:
        return ImportanceResult(
            importances=np.full(p, 1.0 / p), total_splits=0, flagged_constant=True
        )
    return ImportanceResult(
        importances=counts / total, total_splits=total, flagged_constant=False
    )
