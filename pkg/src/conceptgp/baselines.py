"""Reference baselines used as oracles in tests and sanity checks.

These are deliberately off-the-shelf; they exist to bound what the GP
pipeline should achieve, not to compete with it.
"""

from __future__ import annotations

import numpy as np
from sklearn.linear_model import LogisticRegression


def fit_linear_probe(x: np.ndarray, y: np.ndarray, seed: int = 0) -> LogisticRegression:
    probe = LogisticRegression(max_iter=2000, random_state=seed)
    probe.fit(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64))
    return probe


def linear_probe_accuracy(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    seed: int = 0,
) -> float:
    probe = fit_linear_probe(train_x, train_y, seed)
    predicted = probe.predict(np.asarray(test_x, dtype=np.float64))
    return float(np.mean(predicted == np.asarray(test_y, dtype=np.int64)))
