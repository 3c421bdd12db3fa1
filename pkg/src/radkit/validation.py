"""Input validation helpers shared by the estimator API and the CLI.

These normalize the flexible inputs the estimators accept (domain value
types, plain arrays, sequences of either) into the canonical numpy forms
the numeric core works on, raising early with actionable messages.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .types import Heatmap

__all__ = [
    "check_heatmap_batch",
    "check_embedding_rows",
    "check_unit_rows",
]


def check_heatmap_batch(x, input_dim: int | None = None) -> np.ndarray:
    """Coerce heatmaps into a float64 (n, L*A) matrix.

    Accepts a single :class:`Heatmap`, a sequence of them, a (L, A) array,
    a (n, L, A) stack, or an already-flat (n, d) matrix.
    """
    if isinstance(x, Heatmap):
        arr = x.data.reshape(1, -1).astype(np.float64)
    elif isinstance(x, np.ndarray):
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 2 and input_dim is not None and arr.shape[1] != input_dim:
            arr = arr.reshape(1, -1)
        elif arr.ndim == 2 and input_dim is None:
            # ambiguous: treat a bare 2-D array as one heatmap
            arr = arr.reshape(1, -1)
        elif arr.ndim == 3:
            arr = arr.reshape(arr.shape[0], -1)
        elif arr.ndim == 1:
            arr = arr[None, :]
    elif isinstance(x, Iterable) and not isinstance(x, (str, bytes)):
        items = list(x)
        if not items:
            raise ValueError("empty heatmap batch")
        rows = []
        for item in items:
            if isinstance(item, Heatmap):
                rows.append(item.data.reshape(-1))
            else:
                rows.append(np.asarray(item, dtype=np.float64).reshape(-1))
        arr = np.asarray(rows, dtype=np.float64)
    else:
        raise TypeError(f"cannot interpret {type(x).__name__} as heatmaps")

    if arr.ndim != 2:
        raise ValueError(f"could not coerce input to (n, d); got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("heatmap batch contains non-finite values")
    if input_dim is not None and arr.shape[1] != input_dim:
        raise ValueError(
            f"heatmap width {arr.shape[1]} does not match expected {input_dim}")
    return arr


def check_embedding_rows(x, name: str = "embeddings") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (n, embed_dim)")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contain non-finite values")
    return arr


def check_unit_rows(x, tol: float = 1e-6, name: str = "embeddings") -> np.ndarray:
    arr = check_embedding_rows(x, name)
    norms = np.linalg.norm(arr, axis=1)
    bad = np.abs(norms - 1.0) > tol
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(
            f"{name} row {i} has norm {norms[i]:.8f}, expected 1 within {tol}")
    return arr
