"""Input validation helpers shared by the estimators."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from sklearn.exceptions import NotFittedError

from .graph import TemporalWindow


def check_windows(windows, expect_w: int | None = None, expect_n: int | None = None):
    """Validate a window batch: same width, same fixed node set.

    Returns (windows as list, w, n_nodes).
    """
    windows = list(windows)
    if not windows:
        raise ValueError("need at least one window")
    for k, win in enumerate(windows):
        if not isinstance(win, TemporalWindow):
            raise TypeError(f"windows[{k}] is {type(win).__name__}, expected TemporalWindow")
    w = windows[0].w
    n = windows[0].n_nodes
    for k, win in enumerate(windows):
        if win.w != w:
            raise ValueError(f"windows[{k}] has length {win.w}, expected {w}")
        if win.n_nodes != n:
            raise ValueError(
                f"windows[{k}] has {win.n_nodes} nodes, expected {n}; "
                "node sets must stay fixed across a dataset"
            )
        for snap in win.snapshots:
            if snap.n_nodes != n:
                raise ValueError(f"windows[{k}] mixes snapshot node counts")
    if expect_w is not None and w != expect_w:
        raise ValueError(f"windows have length {w}, model was fitted with {expect_w}")
    if expect_n is not None and n != expect_n:
        raise ValueError(f"windows have {n} nodes, model was fitted with {expect_n}")
    return windows, w, n


def check_is_fitted(estimator, attribute: str = "params_") -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() before using it"
        )


@lru_cache(maxsize=32)
def ordered_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major enumeration of the n*(n-1) ordered pairs (i, j), i != j.

    Cached per node count; treat the returned arrays as read-only.
    """
    grid_i, grid_j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = grid_i != grid_j
    pair_i, pair_j = grid_i[mask], grid_j[mask]
    pair_i.setflags(write=False)
    pair_j.setflags(write=False)
    return pair_i, pair_j
